//! SVG line charts of the CSV logs and reports, one panel per numeric
//! column.

use plotters::prelude::*;

use crate::error::{Error, Result};

/// A CSV split into an x axis and numeric series.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub x_name: String,
    pub x: Vec<f64>,
    /// Tick labels when the rows are categorical (for example method names).
    pub x_labels: Option<Vec<String>>,
    pub series: Vec<(String, Vec<f64>)>,
}

impl Table {
    /// The first column is the x axis. A non-numeric first column becomes
    /// row labels at x = 0, 1, ...; other non-numeric columns are dropped.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> =
            r.headers().map_err(|e| Error::Config(format!("csv header: {e}")))?.iter().map(str::to_string).collect();
        if header.len() < 2 {
            return Err(Error::Config("need at least two csv columns to plot".into()));
        }
        let mut cols: Vec<Vec<String>> = vec![Vec::new(); header.len()];
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::Config(format!("csv row: {e}")))?;
            for (c, v) in cols.iter_mut().zip(rec.iter()) {
                c.push(v.trim().to_string());
            }
        }
        let numeric = |c: &[String]| c.iter().map(|v| v.parse::<f64>().ok()).collect::<Option<Vec<f64>>>();
        let (x, x_labels) = match numeric(&cols[0]) {
            Some(x) => (x, None),
            None => ((0..cols[0].len()).map(|i| i as f64).collect(), Some(cols[0].clone())),
        };
        let series: Vec<(String, Vec<f64>)> =
            header.iter().zip(&cols).skip(1).filter_map(|(h, c)| numeric(c).map(|v| (h.clone(), v))).collect();
        if series.is_empty() {
            return Err(Error::Config("no numeric columns to plot".into()));
        }
        Ok(Table { x_name: header[0].clone(), x, x_labels, series })
    }
}

fn range(v: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = v.filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if lo > hi {
        return None;
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1.0) };
    Some((lo - pad, hi + pad))
}

fn draw_err<E: std::fmt::Debug>(e: E) -> Error {
    Error::Config(format!("plot: {e:?}"))
}

/// Render `table` as a stack of panels, one per series.
pub fn table_svg(table: &Table, title: &str) -> Result<String> {
    let panel_h = 220u32;
    let n = table.series.len();
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 40 + panel_h * n as u32)).into_drawing_area();
        root.fill(&WHITE).map_err(draw_err)?;
        let root = root.titled(title, ("sans-serif", 22)).map_err(draw_err)?;
        let (x0, x1) = range(table.x.iter().copied()).unwrap_or((0.0, 1.0));
        for (area, (name, ys)) in root.split_evenly((n, 1)).iter().zip(&table.series) {
            let (y0, y1) = range(ys.iter().copied()).unwrap_or((0.0, 1.0));
            let mut chart = ChartBuilder::on(area)
                .margin(8)
                .x_label_area_size(30)
                .y_label_area_size(60)
                .build_cartesian_2d(x0..x1, y0..y1)
                .map_err(draw_err)?;
            let labels = table.x_labels.clone();
            let fmt = move |v: &f64| match &labels {
                Some(l) if (v - v.round()).abs() < 1e-9 && *v >= 0.0 => l.get(*v as usize).cloned().unwrap_or_default(),
                Some(_) => String::new(),
                None => format!("{v}"),
            };
            let mut mesh = chart.configure_mesh();
            mesh.x_desc(table.x_name.as_str()).y_desc(name.as_str()).x_label_formatter(&fmt);
            if let Some(l) = &table.x_labels {
                mesh.x_labels(l.len().max(2));
            }
            mesh.draw().map_err(draw_err)?;
            let pts: Vec<(f64, f64)> =
                table.x.iter().zip(ys).filter(|(_, y)| y.is_finite()).map(|(&x, &y)| (x, y)).collect();
            chart.draw_series(LineSeries::new(pts.iter().copied(), &BLUE)).map_err(draw_err)?;
            chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, BLUE.filled()))).map_err(draw_err)?;
        }
        root.present().map_err(draw_err)?;
    }
    Ok(svg)
}

pub fn csv_to_svg(text: &str, title: &str) -> Result<String> {
    table_svg(&Table::from_csv(text)?, title)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_x_axis() {
        let t = Table::from_csv("step,loss\n1,0.5\n2,0.25\n").unwrap();
        assert_eq!(t.x, vec![1.0, 2.0]);
        assert!(t.x_labels.is_none());
        assert_eq!(t.series, vec![("loss".to_string(), vec![0.5, 0.25])]);
    }

    #[test]
    fn categorical_rows_keep_numeric_columns() {
        let t = Table::from_csv("method,nfe,psnr\nteacher@15,15,inf\nfull,1,23.9\n").unwrap();
        assert_eq!(t.x_labels.as_deref(), Some(&["teacher@15".to_string(), "full".to_string()][..]));
        assert_eq!(t.series.len(), 2);
        let svg = table_svg(&t, "eval").unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("full"));
    }

    #[test]
    fn rejects_unplottable() {
        assert!(Table::from_csv("a\n1\n").is_err());
        assert!(Table::from_csv("a,b\nx,y\n").is_err());
    }
}
