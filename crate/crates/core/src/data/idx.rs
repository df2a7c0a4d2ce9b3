//! IDX (MNIST) image and label files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::glyph::Sprite;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4")))
        .ok_or_else(|| Error::Format {
            offset: at as u64,
            detail: format!("truncated while reading {what}"),
        })
}

/// Parses an unsigned-byte image file into `[0, 1]` sprites.
pub fn parse_images(bytes: &[u8]) -> Result<Vec<Sprite>> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!("image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        });
    }
    let n = be_u32(bytes, 4, "image count")? as usize;
    let rows = be_u32(bytes, 8, "row count")? as usize;
    let cols = be_u32(bytes, 12, "column count")? as usize;
    let per = rows * cols;
    let need = n.checked_mul(per).and_then(|v| v.checked_add(16));
    match need {
        Some(need) if bytes.len() >= need => {}
        _ => {
            return Err(Error::Format {
                offset: bytes.len() as u64,
                detail: format!("{n} images of {rows}x{cols} do not fit in {} bytes", bytes.len()),
            })
        }
    }
    Ok((0..n)
        .map(|i| Sprite {
            height: rows,
            width: cols,
            data: bytes[16 + i * per..16 + (i + 1) * per]
                .iter()
                .map(|&b| f64::from(b) / 255.0)
                .collect(),
            label: None,
        })
        .collect())
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!("label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        });
    }
    let n = be_u32(bytes, 4, "label count")? as usize;
    bytes
        .get(8..8 + n)
        .map(<[u8]>::to_vec)
        .ok_or_else(|| Error::Format {
            offset: bytes.len() as u64,
            detail: format!("{n} labels do not fit in {} bytes", bytes.len()),
        })
}

/// Images joined with labels, keeping only digits in `keep` when given.
pub fn sprites_from_idx(images: &[u8], labels: &[u8], keep: Option<&[u8]>) -> Result<Vec<Sprite>> {
    let sprites = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if sprites.len() != labels.len() {
        return Err(Error::Config(format!(
            "{} images but {} labels",
            sprites.len(),
            labels.len()
        )));
    }
    if keep.is_some_and(<[u8]>::is_empty) {
        return Err(Error::Config("label filter selects nothing".into()));
    }
    let out: Vec<Sprite> = sprites
        .into_iter()
        .zip(labels)
        .filter(|(_, l)| keep.map_or(true, |k| k.contains(l)))
        .map(|(s, l)| Sprite { label: Some(l), ..s })
        .collect();
    if out.is_empty() {
        return Err(Error::Config("label filter matched no images".into()));
    }
    Ok(out)
}

pub fn load_idx(images: &Path, labels: &Path, keep: Option<&[u8]>) -> Result<Vec<Sprite>> {
    sprites_from_idx(&fs::read(images)?, &fs::read(labels)?, keep)
}
