//! File formats: raw binary vectors, PGM images and CSV grids.
//!
//! A binary vector file is the 8-byte magic `AKVEC\0\0\x01`, the length as a
//! little-endian `u64`, then that many little-endian `f64` values.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

pub const VECTOR_MAGIC: [u8; 8] = *b"AKVEC\0\0\x01";

pub fn write_vector(path: &Path, v: &[f64]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(16 + 8 * v.len());
    buf.extend_from_slice(&VECTOR_MAGIC);
    buf.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, buf)
}

pub fn read_vector(path: &Path) -> io::Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    let bad = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || bytes[..8] != VECTOR_MAGIC {
        return Err(bad("not a vector file"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    if (bytes.len() as u64 - 16) != len.saturating_mul(8) {
        return Err(bad("length does not match header"));
    }
    Ok(bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Min and max of the finite entries, used to scale an image to 0..=255.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub min: f64,
    pub max: f64,
}

impl Scaling {
    pub fn of(v: &[f64]) -> Self {
        let (min, max) = v
            .iter()
            .filter(|x| x.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                (lo.min(*x), hi.max(*x))
            });
        if min > max {
            Self { min: 0.0, max: 0.0 }
        } else {
            Self { min, max }
        }
    }

    /// Gray level of `x`; a constant image maps to 0.
    pub fn level(&self, x: f64) -> u8 {
        let span = self.max - self.min;
        if !(span > 0.0) || !x.is_finite() {
            return 0;
        }
        (255.0 * (x - self.min) / span).round().clamp(0.0, 255.0) as u8
    }
}

/// Writes a binary 8-bit PGM of a row-major `width`-wide image.
pub fn write_pgm(path: &Path, v: &[f64], width: usize) -> io::Result<Scaling> {
    let height = v.len() / width.max(1);
    let s = Scaling::of(v);
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    write!(f, "P5\n# min {} max {}\n{width} {height}\n255\n", s.min, s.max)?;
    let pixels: Vec<u8> = v.iter().map(|x| s.level(*x)).collect();
    f.write_all(&pixels)?;
    f.flush()?;
    Ok(s)
}

/// Writes a row-major image as CSV, one image row per line.
pub fn write_grid_csv(path: &Path, v: &[f64], width: usize) -> io::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in v.chunks(width.max(1)) {
        w.write_record(row.iter().map(|x| x.to_string()))?;
    }
    w.flush()
}

pub fn read_grid_csv(path: &Path) -> io::Result<Vec<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        for field in rec?.iter() {
            out.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?,
            );
        }
    }
    Ok(out)
}
