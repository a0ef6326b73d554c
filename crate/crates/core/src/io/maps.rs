//! Binary map formats.
//!
//! Float maps start with a 16-byte header: the magic `GSFL`, then height,
//! width and channel count as little-endian `u32`. The payload is row-major
//! little-endian `f32`. Color images use binary PPM (`P6`, maxval 255).

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const FLOAT_MAGIC: &[u8; 4] = b"GSFL";

/// Row-major multi-channel `f32` map.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FloatMap {
    pub fn from_f64(height: usize, width: usize, channels: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data: data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(FLOAT_MAGIC);
        for dim in [self.height, self.width, self.channels] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != FLOAT_MAGIC {
            return Err(Error::format(path, "missing GSFL header"));
        }
        let field = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        let (height, width, channels) = (field(1), field(2), field(3));
        let count = height * width * channels;
        if bytes.len() != 16 + 4 * count {
            return Err(Error::format(
                path,
                format!("payload is {} bytes, header implies {}", bytes.len() - 16, 4 * count),
            ));
        }
        let data = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

/// 8-bit RGB image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rgb8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Rgb8 {
    /// Quantizes a `[0, 1]` float RGB buffer (values outside are clamped).
    pub fn from_unit(width: usize, height: usize, rgb: &[f64]) -> Self {
        assert_eq!(rgb.len(), width * height * 3);
        Self {
            width,
            height,
            data: rgb
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect(),
        }
    }

    pub fn to_unit(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64 / 255.0).collect()
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(bytes);
        let mut tokens = Vec::new();
        let mut line = String::new();
        while tokens.len() < 4 {
            line.clear();
            let n = reader
                .read_line(&mut line)
                .map_err(|e| Error::io(path, e))?;
            if n == 0 {
                return Err(Error::format(path, "truncated PPM header"));
            }
            let content = line.split('#').next().unwrap_or("");
            tokens.extend(content.split_whitespace().map(str::to_owned));
        }
        if tokens[0] != "P6" || tokens.len() != 4 {
            return Err(Error::format(path, "expected a P6 header"));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::format(path, format!("bad PPM header field {s:?}")))
        };
        let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if maxval != 255 {
            return Err(Error::format(path, "only 8-bit PPM is supported"));
        }
        let mut data = Vec::new();
        reader
            .read_to_end(&mut data)
            .map_err(|e| Error::io(path, e))?;
        if data.len() != width * height * 3 {
            return Err(Error::format(path, "PPM payload size mismatch"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.encode_ppm())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_ppm(&bytes, path)
    }
}
