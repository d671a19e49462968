//! Fidelity metrics, per-method evaluation and the ablation harness.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::codec::LatentCodec;
use crate::diffusion::{reverse_sample, strided_steps, PairedSample, SampleMode};
use crate::error::{Error, Result};
use crate::nn::{PerceptualProxy, UNet};
use crate::predictors::{Generator, NoisyGenerator, Predictor};
use crate::rng;
use crate::rsd::{distill, student_sample, DistillConfig};
use crate::schedule::ShiftingSchedule;
use crate::tensor::Tensor;

/// Signal peak for data in `[-1, 1]`.
pub const PEAK: f64 = 2.0;

/// BT.601 luma for three-channel input; single-channel input is returned as is.
pub fn luma(x: &Tensor) -> Result<Tensor> {
    match x.channels() {
        1 => Ok(x.clone()),
        3 => {
            let n = x.height() * x.width();
            let (r, g, b) = (x.channel(0), x.channel(1), x.channel(2));
            let y = (0..n).map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]).collect();
            Ok(Tensor::from_vec([1, x.height(), x.width()], y))
        }
        c => Err(Error::Config(format!("luma needs 1 or 3 channels, got {c}"))),
    }
}

fn prepare(a: &Tensor, b: &Tensor, use_luma: bool) -> Result<(Tensor, Tensor)> {
    a.check_same_shape(b)?;
    if use_luma {
        Ok((luma(a)?, luma(b)?))
    } else {
        Ok((a.clone(), b.clone()))
    }
}

/// `10 log10(PEAK^2 / MSE)`; identical inputs give `+inf`.
pub fn psnr(a: &Tensor, b: &Tensor, use_luma: bool) -> Result<f64> {
    let (a, b) = prepare(a, b, use_luma)?;
    let mse = a.sub(&b).sq_norm() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / mse).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimWindow {
    pub size: usize,
    pub sigma: f64,
}

impl Default for SsimWindow {
    fn default() -> Self {
        SsimWindow { size: 11, sigma: 1.5 }
    }
}

fn gaussian_kernel(w: SsimWindow) -> Vec<f64> {
    let c = (w.size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..w.size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * w.sigma * w.sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable valid-region filtering of one plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean local SSIM over valid Gaussian windows, averaged over channels,
/// with `C1 = (0.01 PEAK)^2` and `C2 = (0.03 PEAK)^2`.
pub fn ssim(a: &Tensor, b: &Tensor, window: SsimWindow, use_luma: bool) -> Result<f64> {
    let (a, b) = prepare(a, b, use_luma)?;
    let (h, w) = (a.height(), a.width());
    if window.size == 0 || window.size > h.min(w) || !(window.sigma > 0.0) {
        return Err(Error::Config(format!("SSIM window {} does not fit a {h}x{w} image", window.size)));
    }
    let k = gaussian_kernel(window);
    let c1 = (0.01 * PEAK).powi(2);
    let c2 = (0.03 * PEAK).powi(2);
    let mut total = 0.0;
    for c in 0..a.channels() {
        let (pa, pb) = (a.channel(c), b.channel(c));
        let prod = |f: &dyn Fn(usize) -> f64| (0..h * w).map(f).collect::<Vec<_>>();
        let (mu_a, ..) = filter_valid(pa, h, w, &k);
        let (mu_b, ..) = filter_valid(pb, h, w, &k);
        let (aa, ..) = filter_valid(&prod(&|i| pa[i] * pa[i]), h, w, &k);
        let (bb, ..) = filter_valid(&prod(&|i| pb[i] * pb[i]), h, w, &k);
        let (ab, ..) = filter_valid(&prod(&|i| pa[i] * pb[i]), h, w, &k);
        let mut acc = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / mu_a.len() as f64;
    }
    Ok(total / a.channels() as f64)
}

/// A method under evaluation, producing a pixel-space estimate of `x0`.
pub enum Method<'a> {
    /// Reverse sampling with `nfe` evenly strided steps.
    Teacher { net: &'a dyn Predictor, nfe: usize },
    /// Generator sampling from the prior over `steps` (decreasing).
    Student { name: String, gen: &'a dyn NoisyGenerator, steps: Vec<usize> },
    /// The upsampled LR input itself.
    Upsample,
}

impl Method<'_> {
    pub fn label(&self) -> String {
        match self {
            Method::Teacher { nfe, .. } => format!("teacher@{nfe}"),
            Method::Student { name, .. } => name.clone(),
            Method::Upsample => "upsample".into(),
        }
    }

    pub fn nfe(&self) -> usize {
        match self {
            Method::Teacher { nfe, .. } => *nfe,
            Method::Student { steps, .. } => steps.len(),
            Method::Upsample => 1,
        }
    }

    fn restore(
        &self,
        s: &ShiftingSchedule,
        codec: &dyn LatentCodec,
        y0: &Tensor,
        rng: &mut rng::Stream,
    ) -> Result<Tensor> {
        Ok(match self {
            Method::Teacher { net, nfe } => {
                let steps = strided_steps(s, *nfe)?;
                codec.decode(&reverse_sample(s, *net, &codec.encode(y0), &steps, SampleMode::Stochastic, rng)?)
            }
            Method::Student { gen, steps, .. } => codec.decode(&student_sample(s, *gen, &codec.encode(y0), steps, rng)?),
            Method::Upsample => y0.clone(),
        })
    }
}

/// The one-step student as an evaluation method.
pub fn one_step_student<'a>(name: &str, gen: &'a Generator, s: &ShiftingSchedule) -> Method<'a> {
    Method::Student { name: name.into(), gen, steps: vec![s.steps()] }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub method: String,
    pub nfe: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub perc_proxy: f64,
    /// Mean seconds per image.
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub dataset: String,
    pub seed: u64,
    pub rows: Vec<EvalRow>,
}

pub const REPORT_HEADER: &str = "method,nfe,psnr,ssim,perc_proxy,wall_time_s";

fn fmt_metric(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

impl EvalRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6}",
            self.method,
            self.nfe,
            fmt_metric(self.psnr),
            fmt_metric(self.ssim),
            fmt_metric(self.perc_proxy),
            self.wall_time_s
        )
    }
}

impl EvalReport {
    pub fn new(dataset: impl Into<String>, seed: u64) -> Self {
        EvalReport { dataset: dataset.into(), seed, rows: Vec::new() }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    /// The CSV without the wall-time column, which is the only
    /// non-reproducible field.
    pub fn metrics_csv(&self) -> String {
        self.to_csv()
            .lines()
            .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string() + "\n")
            .collect()
    }

    pub fn row(&self, method: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// Settings shared by every evaluated method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub seeds: Vec<u64>,
    pub luma: bool,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    /// Teacher step counts to report besides the full chain.
    pub teacher_nfe: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let w = SsimWindow::default();
        EvalConfig { seeds: vec![0], luma: true, ssim_window: w.size, ssim_sigma: w.sigma, teacher_nfe: vec![1, 4] }
    }
}

impl EvalConfig {
    pub fn window(&self) -> SsimWindow {
        SsimWindow { size: self.ssim_window, sigma: self.ssim_sigma }
    }
}

/// Mean metrics of `method` over every test pair and seed. Image `i` under
/// seed `k` draws from its own derived stream.
pub fn evaluate_method(
    method: &Method,
    s: &ShiftingSchedule,
    codec: &dyn LatentCodec,
    test: &[PairedSample],
    cfg: &EvalConfig,
) -> Result<EvalRow> {
    if test.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::Config("evaluation needs test pairs and at least one seed".into()));
    }
    let proxy = PerceptualProxy::new(test[0].x0.channels());
    let (mut p, mut q, mut d, mut secs) = (0.0, 0.0, 0.0, 0.0);
    for &seed in &cfg.seeds {
        for (i, pair) in test.iter().enumerate() {
            let mut r = rng::derive(seed, &[0xE7A1, i as u64]);
            let start = Instant::now();
            let x_hat = method.restore(s, codec, &pair.y0, &mut r)?;
            secs += start.elapsed().as_secs_f64();
            p += psnr(&pair.x0, &x_hat, cfg.luma)?;
            q += ssim(&pair.x0, &x_hat, cfg.window(), cfg.luma)?;
            d += proxy.distance(&pair.x0, &x_hat);
        }
    }
    let n = (test.len() * cfg.seeds.len()) as f64;
    Ok(EvalRow { method: method.label(), nfe: method.nfe(), psnr: p / n, ssim: q / n, perc_proxy: d / n, wall_time_s: secs / n })
}

/// Teacher at `T` and at each extra step count, the given students, and the
/// upsampling baseline.
pub fn comparison_report(
    s: &ShiftingSchedule,
    codec: &dyn LatentCodec,
    teacher: &UNet,
    students: &[Method],
    test: &[PairedSample],
    cfg: &EvalConfig,
    dataset: &str,
) -> Result<EvalReport> {
    let mut report = EvalReport::new(dataset, cfg.seeds[0]);
    let mut nfes = vec![s.steps()];
    nfes.extend(cfg.teacher_nfe.iter().copied().filter(|&k| k != s.steps()));
    for nfe in nfes {
        report.rows.push(evaluate_method(&Method::Teacher { net: teacher, nfe }, s, codec, test, cfg)?);
    }
    for m in students {
        report.rows.push(evaluate_method(m, s, codec, test, cfg)?);
    }
    report.rows.push(evaluate_method(&Method::Upsample, s, codec, test, cfg)?);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    Multistep,
    Losses,
}

pub const MULTISTEP_GRID: [usize; 5] = [1, 2, 4, 8, 15];

/// Supervised-loss variants: distillation only, with the perceptual term,
/// with the GAN term, and with both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossVariant {
    DistillOnly,
    Perceptual,
    Gan,
    Full,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] = [LossVariant::DistillOnly, LossVariant::Perceptual, LossVariant::Gan, LossVariant::Full];

    pub fn label(self) -> &'static str {
        match self {
            LossVariant::DistillOnly => "distill-only",
            LossVariant::Perceptual => "+perc",
            LossVariant::Gan => "+gan",
            LossVariant::Full => "full",
        }
    }

    /// `base` with the lambdas of this variant; kept lambdas take the base values.
    pub fn apply(self, base: &DistillConfig) -> DistillConfig {
        let (l1, l2) = match self {
            LossVariant::DistillOnly => (0.0, 0.0),
            LossVariant::Perceptual => (base.lambda1, 0.0),
            LossVariant::Gan => (0.0, base.lambda2),
            LossVariant::Full => (base.lambda1, base.lambda2),
        };
        DistillConfig { lambda1: l1, lambda2: l2, ..base.clone() }
    }
}

/// One configuration of an ablation grid.
#[derive(Debug, Clone)]
pub struct AblationVariant {
    pub label: String,
    pub cfg: DistillConfig,
}

/// The grid for `kind` around `base`. Multistep sizes above `T` are dropped.
pub fn ablation_grid(kind: AblationKind, s: &ShiftingSchedule, base: &DistillConfig) -> Vec<AblationVariant> {
    match kind {
        AblationKind::Multistep => MULTISTEP_GRID
            .iter()
            .filter(|&&n| n <= s.steps())
            .map(|&n| AblationVariant {
                label: format!("N={n}"),
                cfg: DistillConfig { n, timesteps: Vec::new(), ..base.clone() },
            })
            .collect(),
        AblationKind::Losses => {
            LossVariant::ALL.iter().map(|v| AblationVariant { label: v.label().into(), cfg: v.apply(base) }).collect()
        }
    }
}

/// Train one student per grid entry and evaluate each at one step. The
/// callback sees every finished row, so long grids can report progress.
#[allow(clippy::too_many_arguments)]
pub fn ablation_report(
    kind: AblationKind,
    s: &ShiftingSchedule,
    base: &DistillConfig,
    teacher: &UNet,
    codec: &dyn LatentCodec,
    train: &[PairedSample],
    test: &[PairedSample],
    eval: &EvalConfig,
    mut on_row: impl FnMut(&EvalRow),
) -> Result<EvalReport> {
    let mut report = EvalReport::new(format!("{kind:?}").to_lowercase(), eval.seeds.first().copied().unwrap_or(0));
    for v in ablation_grid(kind, s, base) {
        let (gen, _) = distill(s, &v.cfg, teacher, codec, train)?;
        let row = evaluate_method(&one_step_student(&v.label, &gen, s), s, codec, test, eval)?;
        on_row(&row);
        report.rows.push(row);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::IdentityCodec;

    #[test]
    fn psnr_hand_values() {
        let a = Tensor::from_vec([1, 2, 2], vec![-1.0, 0.0, 0.5, 0.8]);
        assert_eq!(psnr(&a, &a, true).unwrap(), f64::INFINITY);
        let b = a.map(|v| v + 0.2);
        assert!((psnr(&a, &b, true).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr(&a, &b, false).unwrap(), psnr(&b, &a, false).unwrap());
    }

    #[test]
    fn ssim_identity_and_sign() {
        // a checkerboard is zero-mean in every window, not just globally
        let a = Tensor::from_vec([1, 16, 16], (0..256).map(|i| if (i / 16 + i % 16) % 2 == 0 { 0.5 } else { -0.5 }).collect());
        let w = SsimWindow::default();
        assert!((ssim(&a, &a, w, true).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&a, &a.scale(-1.0), w, true).unwrap() < 0.0);
        assert!(ssim(&Tensor::zeros([1, 8, 8]), &Tensor::zeros([1, 8, 8]), w, true).is_err());
    }

    #[test]
    fn luma_weights() {
        let x = Tensor::from_vec([3, 1, 1], vec![1.0, 0.0, 0.0]);
        assert!((luma(&x).unwrap().data()[0] - 0.299).abs() < 1e-15);
        assert!(luma(&Tensor::zeros([2, 1, 1])).is_err());
    }

    struct Exact(Tensor);
    impl Predictor for Exact {
        fn predict(&self, _: &Tensor, _: &Tensor, _: usize) -> Tensor {
            self.0.clone()
        }
    }

    #[test]
    fn exact_recovery_gives_sentinel() {
        let s = ShiftingSchedule::from_eta((1..=15).map(|t| t as f64 / 15.0).collect(), 0.0).unwrap();
        let x0 = Tensor::full([1, 16, 16], 0.25);
        let pair = PairedSample { x0: x0.clone(), y0: x0.clone() };
        let net = Exact(x0);
        let row = evaluate_method(&Method::Teacher { net: &net, nfe: 15 }, &s, &IdentityCodec, &[pair], &EvalConfig::default())
            .unwrap();
        assert_eq!(row.psnr, f64::INFINITY);
        assert_eq!(row.nfe, 15);
        assert!(row.csv_row().starts_with("teacher@15,15,inf,"));
    }

    #[test]
    fn grids_mirror_the_tables() {
        let s = ShiftingSchedule::build(15, 1e-3, 0.999, 1.0, crate::schedule::ScheduleShape::LogLinear).unwrap();
        let base = DistillConfig::default();
        let m: Vec<String> = ablation_grid(AblationKind::Multistep, &s, &base).into_iter().map(|v| v.label).collect();
        assert_eq!(m, ["N=1", "N=2", "N=4", "N=8", "N=15"]);
        let l = ablation_grid(AblationKind::Losses, &s, &base);
        assert_eq!(l.iter().map(|v| v.label.as_str()).collect::<Vec<_>>(), ["distill-only", "+perc", "+gan", "full"]);
        assert_eq!((l[1].cfg.lambda1, l[1].cfg.lambda2), (2.0, 0.0));
        assert_eq!((l[2].cfg.lambda1, l[2].cfg.lambda2), (0.0, 3e-3));
    }
}
