//! Render a CSV as an SVG line chart, one panel per numeric column.
//!
//! cargo run --example plot -- [file.csv] [out.svg]

use rsd::plot::csv_to_svg;
use rsd::schedule::{ScheduleShape, ShiftingSchedule};

fn main() -> rsd::Result<()> {
    let mut args = std::env::args().skip(1);
    let (csv, title) = match args.next() {
        Some(p) => (std::fs::read_to_string(&p).map_err(|e| rsd::Error::Config(format!("{p}: {e}")))?, p),
        None => {
            let s = ShiftingSchedule::build(15, 1e-3, 0.999, 1.0, ScheduleShape::LogLinear)?;
            (s.to_csv(), "schedule".to_string())
        }
    };
    let out = args.next().unwrap_or_else(|| std::env::temp_dir().join("rsd_plot.svg").display().to_string());
    std::fs::write(&out, csv_to_svg(&csv, &title)?).map_err(|e| rsd::Error::Config(format!("{out}: {e}")))?;
    println!("{out}");
    Ok(())
}
