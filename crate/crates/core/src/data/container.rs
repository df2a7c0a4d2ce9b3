//! Dataset container and PGM frame dumps.
//!
//! Dataset layout, integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes  "SPGRUDAT"
//! version  u32      1
//! batch    u32
//! time     u32
//! height   u32
//! width    u32
//! per sequence: angle_deg f64, speed f64, noise_b f64, seed u64
//! frames   batch*time*height*width f64, [batch][time][row][col]
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::generate::{SequenceBatch, SequenceMeta};

pub const DATASET_MAGIC: &[u8; 8] = b"SPGRUDAT";
pub const DATASET_VERSION: u32 = 1;

pub fn encode_dataset(b: &SequenceBatch) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(32 + b.frames.len() * 8);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for d in [b.batch, b.time, b.height, b.width] {
        let d = u32::try_from(d).map_err(|_| Error::Config(format!("dimension {d} too large")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for m in &b.meta {
        out.extend_from_slice(&m.angle_deg.to_le_bytes());
        out.extend_from_slice(&m.speed.to_le_bytes());
        out.extend_from_slice(&m.noise_b.to_le_bytes());
        out.extend_from_slice(&m.seed.to_le_bytes());
    }
    for v in &b.frames {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<SequenceBatch> {
    let fail = |offset: usize, detail: &str| Error::Format {
        offset: offset as u64,
        detail: detail.into(),
    };
    if bytes.len() < 28 {
        return Err(fail(bytes.len(), "truncated dataset header"));
    }
    if &bytes[..8] != DATASET_MAGIC {
        return Err(fail(0, "not a dataset file (bad magic)"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4"));
    if word(8) != DATASET_VERSION {
        return Err(fail(8, "unsupported dataset version"));
    }
    let [batch, time, height, width] = [12, 16, 20, 24].map(|at| word(at) as usize);
    let meta_len = batch.checked_mul(32);
    let frame_len = batch
        .checked_mul(time)
        .and_then(|v| v.checked_mul(height))
        .and_then(|v| v.checked_mul(width))
        .and_then(|v| v.checked_mul(8));
    let (Some(meta_len), Some(frame_len)) = (meta_len, frame_len) else {
        return Err(fail(12, "dimensions overflow"));
    };
    let expected = 28 + meta_len + frame_len;
    if bytes.len() != expected {
        return Err(fail(
            bytes.len().min(expected),
            &format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let f = |at: usize| f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8"));
    let meta = (0..batch)
        .map(|i| {
            let at = 28 + 32 * i;
            SequenceMeta {
                angle_deg: f(at),
                speed: f(at + 8),
                noise_b: f(at + 16),
                seed: u64::from_le_bytes(bytes[at + 24..at + 32].try_into().expect("8")),
            }
        })
        .collect();
    let frames = bytes[28 + meta_len..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8")))
        .collect();
    Ok(SequenceBatch {
        batch,
        time,
        height,
        width,
        frames,
        meta,
    })
}

pub fn save_dataset(b: &SequenceBatch, path: &Path) -> Result<()> {
    fs::write(path, encode_dataset(b)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<SequenceBatch> {
    decode_dataset(&fs::read(path)?)
}

/// Binary 8-bit PGM (P5). Values are scaled by `255 / scale`, rounded and
/// clamped, so `scale` maps to white.
pub fn encode_pgm(width: usize, height: usize, values: &[f64], scale: f64) -> Vec<u8> {
    debug_assert_eq!(values.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        let x = if scale > 0.0 { v / scale * 255.0 } else { 0.0 };
        x.round().clamp(0.0, 255.0) as u8
    }));
    out
}

pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64], scale: f64) -> Result<()> {
    fs::write(path, encode_pgm(width, height, values, scale))?;
    Ok(())
}
