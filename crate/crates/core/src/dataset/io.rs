//! `.cfr` raster files and case directories.
//!
//! A `.cfr` file is a 16-byte header followed by row-major little-endian
//! `f32` values:
//!
//! | offset | size | content                  |
//! |--------|------|--------------------------|
//! | 0      | 4    | magic `CFR1`             |
//! | 4      | 4    | width, `u32` LE          |
//! | 8      | 4    | height, `u32` LE         |
//! | 12     | 4    | reserved, `0`            |
//!
//! Gap rasters store invalid pixels as NaN.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Case, DepthRaster, GapRaster, Unit};
use crate::gapgeom::GammaScale;
use crate::{Error, Result};

pub const CFR_MAGIC: [u8; 4] = *b"CFR1";
pub const CFR_HEADER_LEN: usize = 16;

const PREPARED: &str = "prepared.cfr";
const OPPOSING: &str = "opposing.cfr";
const GAP: &str = "gap.cfr";
const CROWN: &str = "crown.cfr";
const META: &str = "meta.json";
/// Files of a case directory, in a fixed order.
pub const CASE_FILES: [&str; 5] = [PREPARED, OPPOSING, GAP, CROWN, META];

/// Encodes a raster payload into the `.cfr` byte layout.
pub fn encode_cfr(width: usize, height: usize, values: &[f32]) -> Vec<u8> {
    debug_assert_eq!(values.len(), width * height);
    let mut out = Vec::with_capacity(CFR_HEADER_LEN + values.len() * 4);
    out.extend_from_slice(&CFR_MAGIC);
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes `.cfr` bytes into `(width, height, values)`.
pub fn decode_cfr(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < CFR_HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != CFR_MAGIC {
            return Err(bad_magic(path));
        }
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: CFR_HEADER_LEN,
            found: bytes.len(),
        });
    }
    if bytes[..4] != CFR_MAGIC {
        return Err(bad_magic(path));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (width, height) = (word(4), word(8));
    let expected = CFR_HEADER_LEN + width * height * 4;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let values = bytes[CFR_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((width, height, values))
}

fn bad_magic(path: &Path) -> Error {
    Error::BadMagic {
        path: path.to_path_buf(),
        expected: String::from_utf8_lossy(&CFR_MAGIC).into_owned(),
    }
}

pub fn write_cfr(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    fs::write(path, encode_cfr(width, height, values)).map_err(|e| Error::io(path, e))
}

pub fn read_cfr(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cfr(&bytes, path)
}

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseMeta {
    pub case_id: String,
    pub seed: u64,
    pub gamma: f32,
    pub config_hash: String,
    pub width: usize,
    pub height: usize,
    pub units: BTreeMap<String, Unit>,
}

impl CaseMeta {
    pub fn for_case(case: &Case) -> Self {
        let units = [
            ("prepared", Unit::Level),
            ("opposing", Unit::Level),
            ("gap", Unit::Mm),
            ("crown", Unit::Level),
        ]
        .into_iter()
        .map(|(k, u)| (k.to_string(), u))
        .collect();
        let (width, height) = case.dims();
        Self {
            case_id: case.case_id.clone(),
            seed: case.seed,
            gamma: case.gamma,
            config_hash: case.config_hash.clone(),
            width,
            height,
            units,
        }
    }
}

/// Writes `case` into `dir` (created if missing) as four `.cfr` rasters and `meta.json`.
pub fn write_case(case: &Case, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (w, h) = case.dims();
    write_cfr(&dir.join(PREPARED), w, h, case.prepared.values())?;
    write_cfr(&dir.join(OPPOSING), w, h, case.opposing.values())?;
    let gap: Vec<f32> = case
        .gap
        .values()
        .iter()
        .zip(case.gap.valid_mask())
        .map(|(&v, &m)| if m { v } else { f32::NAN })
        .collect();
    write_cfr(&dir.join(GAP), w, h, &gap)?;
    write_cfr(&dir.join(CROWN), w, h, case.crown_gt.values())?;
    let meta = serde_json::to_string_pretty(&CaseMeta::for_case(case))?;
    let meta_path = dir.join(META);
    fs::write(&meta_path, meta + "\n").map_err(|e| Error::io(meta_path, e))
}

/// Reads a case directory written by [`write_case`].
pub fn read_case(dir: &Path) -> Result<Case> {
    let meta_path = dir.join(META);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CaseMeta =
        serde_json::from_str(&text).map_err(|e| Error::Metadata(format!("{}: {e}", meta_path.display())))?;
    GammaScale::new(meta.gamma).map_err(|e| Error::Metadata(e.to_string()))?;
    let expected = (meta.width, meta.height);

    let load = |name: &str| -> Result<Vec<f32>> {
        let path = dir.join(name);
        let (w, h, values) = read_cfr(&path)?;
        if (w, h) != expected {
            return Err(Error::CaseDimensionMismatch {
                path,
                expected,
                found: (w, h),
            });
        }
        Ok(values)
    };
    let (w, h) = expected;
    let prepared = DepthRaster::new(w, h, load(PREPARED)?)?;
    let opposing = DepthRaster::new(w, h, load(OPPOSING)?)?;
    let gap_values = load(GAP)?;
    let valid: Vec<bool> = gap_values.iter().map(|v| !v.is_nan()).collect();
    let gap = GapRaster::new(w, h, gap_values, valid)?;
    let crown_gt = DepthRaster::new(w, h, load(CROWN)?)?;
    Ok(Case {
        case_id: meta.case_id,
        seed: meta.seed,
        config_hash: meta.config_hash,
        gamma: meta.gamma,
        prepared,
        opposing,
        gap,
        crown_gt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let bytes = encode_cfr(2, 3, &[0.0; 6]);
        assert_eq!(&bytes[..4], b"CFR1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &[0, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 6 * 4);
    }

    #[test]
    fn payload_size_for_64() {
        assert_eq!(encode_cfr(64, 64, &vec![1.5; 64 * 64]).len(), 16 + 64 * 64 * 4);
    }

    #[test]
    fn distinct_decode_errors() {
        let p = Path::new("x.cfr");
        let mut bytes = encode_cfr(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(decode_cfr(&bytes, p).unwrap().2, vec![1.0, 2.0, 3.0, 4.0]);

        let truncated = &bytes[..bytes.len() - 1];
        assert!(matches!(decode_cfr(truncated, p), Err(Error::Truncated { .. })));
        assert!(matches!(decode_cfr(&bytes[..10], p), Err(Error::Truncated { .. })));

        bytes[0] = b'X';
        assert!(matches!(decode_cfr(&bytes, p), Err(Error::BadMagic { .. })));
    }
}
