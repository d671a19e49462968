//! Checkpoint container: magic `RSDCKPT`, version, a `key=value` text block
//! describing the parameters, then the parameters as little-endian f32.
//! Resume-state files carry `dtype=f64` in the header and store full
//! precision so a resumed run continues bit for bit.

use std::path::Path;

use crate::binio::{put_f32s, put_f64s, read_file, write_file, ByteReader};
use crate::error::{Error, Result};
use crate::nn::{ArchSpec, UNet};

pub const MAGIC: &[u8; 7] = b"RSDCKPT";
pub const VERSION: u32 = 1;
const DTYPE_KEY: &str = "dtype";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: String,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(header: impl Into<String>, params: Vec<f64>) -> Self {
        Checkpoint { header: header.into(), params }
    }

    pub fn for_unet(net: &UNet) -> Self {
        Checkpoint::new(net.spec().to_text(), net.params().to_vec())
    }

    /// Value of `key` in the header block.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.header
            .lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .map(|(_, v)| v.trim())
    }

    pub fn with_entry(mut self, key: &str, value: impl std::fmt::Display) -> Self {
        if !self.header.is_empty() && !self.header.ends_with('\n') {
            self.header.push('\n');
        }
        self.header.push_str(&format!("{key}={value}\n"));
        self
    }

    /// Mark the parameter block as 64-bit.
    pub fn exact(self) -> Self {
        if self.is_exact() {
            self
        } else {
            self.with_entry(DTYPE_KEY, "f64")
        }
    }

    pub fn is_exact(&self) -> bool {
        self.get(DTYPE_KEY) == Some("f64")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.header.len() + 4 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.header.len() as u32).to_le_bytes());
        out.extend_from_slice(self.header.as_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        if self.is_exact() {
            put_f64s(&mut out, &self.params);
        } else {
            put_f32s(&mut out, &self.params);
        }
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(path, bytes);
        r.magic(MAGIC)?;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.error(format!("unsupported checkpoint version {version}")));
        }
        let hlen = r.u32("header length")? as usize;
        let header = std::str::from_utf8(r.take(hlen, "header")?)
            .map_err(|e| r.error(format!("header is not UTF-8: {e}")))?
            .to_string();
        let n = r.u64("parameter count")? as usize;
        let mut ck = Checkpoint { header, params: Vec::new() };
        ck.params = if ck.is_exact() { r.f64s(n, "parameters")? } else { r.f32s(n, "parameters")? };
        r.finish()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(path, &read_file(path)?)
    }

    pub fn to_unet(&self) -> Result<UNet> {
        UNet::from_params(ArchSpec::from_text(&self.header)?, self.params.clone())
    }
}

pub fn save_unet(path: &Path, net: &UNet) -> Result<()> {
    Checkpoint::for_unet(net).save(path)
}

pub fn load_unet(path: &Path) -> Result<UNet> {
    Checkpoint::load(path)?.to_unet().map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = ArchSpec { size: 8, width: 3, bottleneck: 4, embed_dim: 4, ..Default::default() };
        let net = UNet::new(spec, &mut rng::stream(1)).unwrap();
        let ck = Checkpoint::for_unet(&net).with_entry("step", 12);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(Path::new("mem"), &bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.get("step"), Some("12"));
        let restored = back.to_unet().unwrap();
        for (a, b) in restored.params().iter().zip(net.params()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn exact_checkpoints_keep_f64() {
        let v = vec![0.1, -1.0 / 3.0, 1e-300];
        let ck = Checkpoint::new("arch=none\n", v.clone()).exact();
        let back = Checkpoint::from_bytes(Path::new("mem"), &ck.to_bytes()).unwrap();
        assert_eq!(back.params, v);
        assert_eq!(back.exact().header, ck.header);
    }

    #[test]
    fn corrupt_inputs_name_the_offset() {
        let ck = Checkpoint::new("arch=none\n", vec![1.0, 2.0]);
        let bytes = ck.to_bytes();
        let err = Checkpoint::from_bytes(Path::new("x"), &bytes[..bytes.len() - 2]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        assert!(err.to_string().contains("offset"));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(Path::new("x"), &bad), Err(Error::Format { offset: 0, .. })));
    }
}
