//! Binary warp-field checkpoint.
//!
//! Layout (little-endian): magic `GSWF`, `u32` version, `u32` position bands,
//! `u32` time bands, `u32` hidden layers, `u32` width, `u32` activation code
//! (0 softplus, 1 tanh), `u64` parameter count, then the parameters as `f64`.

use std::path::Path;

use super::network::{Activation, WarpConfig, WarpField};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GSWF";
const VERSION: u32 = 1;

pub fn encode(field: &WarpField) -> Vec<u8> {
    let cfg = field.config();
    let mut out = Vec::with_capacity(36 + 8 * field.param_count());
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        cfg.position_bands as u32,
        cfg.time_bands as u32,
        cfg.hidden_layers as u32,
        cfg.width as u32,
        cfg.activation.code(),
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(field.param_count() as u64).to_le_bytes());
    for p in field.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<WarpField> {
    if bytes.len() < 36 || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "missing GSWF header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if word(0) != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {}", word(0))));
    }
    let activation = Activation::from_code(word(5))
        .ok_or_else(|| Error::format(path, format!("unknown activation code {}", word(5))))?;
    let config = WarpConfig {
        position_bands: word(1) as usize,
        time_bands: word(2) as usize,
        hidden_layers: word(3) as usize,
        width: word(4) as usize,
        activation,
    };
    let count = u64::from_le_bytes(bytes[28..36].try_into().unwrap()) as usize;
    if bytes.len() != 36 + 8 * count {
        return Err(Error::format(path, "checkpoint payload size mismatch"));
    }
    let params = bytes[36..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    WarpField::from_parts(config, params).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save(field: &WarpField, path: &Path) -> Result<()> {
    std::fs::write(path, encode(field)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<WarpField> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let cfg = WarpConfig {
            position_bands: 3,
            time_bands: 2,
            hidden_layers: 2,
            width: 8,
            activation: Activation::Tanh,
        };
        let field = WarpField::random(cfg, 11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("warp.bin");
        save(&field, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.config(), field.config());
        let bits = |f: &WarpField| f.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&field));
    }

    #[test]
    fn corrupt_checkpoint_is_rejected() {
        let field = WarpField::zeros(WarpConfig::default());
        let mut bytes = encode(&field);
        bytes.truncate(bytes.len() - 8);
        assert!(decode(&bytes, Path::new("x")).is_err());
        assert!(decode(b"nope", Path::new("x")).is_err());
    }
}
