//! Paired dataset and its binary container: magic `RSDT`, version, count,
//! `(c, h, w)`, then `count` pairs of little-endian f32 tensors, `x0` before `y0`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{put_f32s, read_file, write_file, ByteReader};
use crate::data::codec::CodecKind;
use crate::data::degrade::{degrade, DegradationSpec, Upsample};
use crate::data::toy::{make_toy_hr, ToyKind};
use crate::diffusion::PairedSample;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RSDT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub shape: [usize; 3],
    pub pairs: Vec<PairedSample>,
}

impl Dataset {
    pub fn new(pairs: Vec<PairedSample>) -> Result<Self> {
        let shape = pairs.first().ok_or_else(|| Error::Config("dataset is empty".into()))?.x0.shape();
        if let Some(p) = pairs.iter().find(|p| p.x0.shape() != shape) {
            return Err(Error::Shape { left: shape, right: p.x0.shape() });
        }
        Ok(Dataset { shape, pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Split off the last `n` pairs as a held-out set.
    pub fn split_tail(mut self, n: usize) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.pairs.len() {
            return Err(Error::Config(format!("cannot hold out {n} of {} pairs", self.pairs.len())));
        }
        let tail = self.pairs.split_off(self.pairs.len() - n);
        Ok((Dataset { shape: self.shape, pairs: self.pairs }, Dataset { shape: self.shape, pairs: tail }))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let [c, h, w] = self.shape;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.pairs.len() as u32, c as u32, h as u32, w as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for p in &self.pairs {
            put_f32s(&mut out, p.x0.data());
            put_f32s(&mut out, p.y0.data());
        }
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(path, bytes);
        r.magic(MAGIC)?;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.error(format!("unsupported dataset version {version}")));
        }
        let count = r.u32("count")? as usize;
        let shape = [r.u32("channels")? as usize, r.u32("height")? as usize, r.u32("width")? as usize];
        let n: usize = shape.iter().product();
        if count == 0 || n == 0 {
            return Err(r.error("dataset header has a zero dimension"));
        }
        let mut pairs = Vec::with_capacity(count);
        for i in 0..count {
            let x0 = Tensor::from_vec(shape, r.f32s(n, &format!("x0 of pair {i}"))?);
            let y0 = Tensor::from_vec(shape, r.f32s(n, &format!("y0 of pair {i}"))?);
            pairs.push(PairedSample { x0, y0 });
        }
        r.finish()?;
        Ok(Dataset { shape, pairs })
    }
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_file(path, &ds.to_bytes())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::from_bytes(path, &read_file(path)?)
}

/// Generation settings. Degradation keys sit at the same level as the
/// others so the config section stays flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub kind: ToyKind,
    pub size: usize,
    pub count: usize,
    pub test_count: usize,
    pub seed: u64,
    pub blur_sigma: [f64; 2],
    pub factor: usize,
    pub noise_sigma: [f64; 2],
    pub quantize: bool,
    pub upsample: Upsample,
    pub codec: CodecKind,
}

impl Default for DataConfig {
    fn default() -> Self {
        let d = DegradationSpec::default();
        DataConfig {
            kind: ToyKind::Mixed,
            size: 32,
            count: 2000,
            test_count: 64,
            seed: 0,
            blur_sigma: d.blur_sigma,
            factor: d.factor,
            noise_sigma: d.noise_sigma,
            quantize: d.quantize,
            upsample: d.upsample,
            codec: CodecKind::Identity,
        }
    }
}

impl DataConfig {
    pub fn degradation(&self) -> DegradationSpec {
        DegradationSpec {
            blur_sigma: self.blur_sigma,
            factor: self.factor,
            noise_sigma: self.noise_sigma,
            quantize: self.quantize,
            upsample: self.upsample,
        }
    }

    pub fn set_degradation(&mut self, d: DegradationSpec) {
        self.blur_sigma = d.blur_sigma;
        self.factor = d.factor;
        self.noise_sigma = d.noise_sigma;
        self.quantize = d.quantize;
        self.upsample = d.upsample;
    }
}

/// Synthesize `count + test_count` pairs; returns `(train, test)`. Values
/// are rounded through f32 so in-memory data equals the saved container.
pub fn make_paired(cfg: &DataConfig) -> Result<(Dataset, Dataset)> {
    let spec = cfg.degradation();
    spec.check()?;
    let hr = make_toy_hr(cfg.kind, cfg.size, cfg.count + cfg.test_count, cfg.seed)?;
    let f32round = |t: Tensor| t.map(|v| v as f32 as f64);
    let pairs = hr
        .into_iter()
        .enumerate()
        .map(|(i, x0)| {
            let y0 = degrade(&spec, &x0, &mut rng::derive(cfg.seed, &[0xDE, i as u64]))?;
            Ok(PairedSample { x0: f32round(x0), y0: f32round(y0) })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(pairs)?.split_tail(cfg.test_count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        let cfg = DataConfig { size: 16, count: 3, test_count: 1, ..Default::default() };
        make_paired(&cfg).unwrap().0
    }

    #[test]
    fn round_trip_and_header() {
        let ds = small();
        let bytes = ds.to_bytes();
        let back = Dataset::from_bytes(Path::new("m"), &bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 4 + 5 * 4 + 3 * 2 * 16 * 16 * 4);
    }

    #[test]
    fn truncated_file_names_the_offset() {
        let bytes = small().to_bytes();
        let err = Dataset::from_bytes(Path::new("d.rsdt"), &bytes[..100]).unwrap_err();
        match err {
            Error::Format { offset, msg, .. } => {
                assert_eq!(offset, 24);
                assert!(msg.contains("truncated"), "{msg}");
            }
            other => panic!("{other}"),
        }
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(Dataset::from_bytes(Path::new("d"), &bad).unwrap_err().to_string().contains("version"));
    }
}
