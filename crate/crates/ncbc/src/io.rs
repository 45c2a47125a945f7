//! Image, ROI, and configuration file handling with bit-exact
//! round-tripping.
//!
//! Two image containers are supported, chosen by extension:
//!
//! * `.raw` — row-major little-endian float32 payload, described by a
//!   JSON sidecar (same path with the extension swapped to `.json`)
//!   holding `{width, height, dtype, endianness}`. Lossless for
//!   float32-valued fields.
//! * `.pgm` — binary P5 preview, 16-bit big-endian, linearly scaled
//!   from [min, max] to [0, 65535]; the scale is recorded in a JSON
//!   sidecar `{min, max}` so values can be recovered to within
//!   1/65535 of the range. A constant image maps to all-zero codes.
//!
//! ROI sets and configurations are JSON documents. All parsers reject
//! rather than coerce: unknown keys, type mismatches, truncated
//! payloads, and malformed headers are errors (with a byte offset for
//! binary formats). Every writer goes through write-to-temp-then-rename
//! so failures never leave partial files behind.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{NcbcError, Result};
use crate::field::{Field, LatticeDims};
use crate::inference::NcbcConfig;
use crate::metrics::Roi;

/// Sidecar schema for `.raw` images.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSidecar {
    width: usize,
    height: usize,
    dtype: String,
    endianness: String,
}

/// Sidecar schema for `.pgm` previews: the intensity range the codes
/// were scaled from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PgmScale {
    min: f64,
    max: f64,
}

/// Write `bytes` to `path` atomically: a temporary file in the same
/// directory is written first, then renamed over the target.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| NcbcError::Validation(format!("{} has no file name", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|source| NcbcError::Io { path: tmp.clone(), source })?;
    fs::rename(&tmp, path).map_err(|source| NcbcError::Io { path: path.to_path_buf(), source })
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn extension_of(path: &Path) -> Result<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .ok_or_else(|| {
            NcbcError::Validation(format!(
                "{} has no recognizable extension (expected .raw or .pgm)",
                path.display()
            ))
        })
}

/// Save an image; the container is chosen by the path's extension
/// (`.raw` or `.pgm`). Both containers also write their JSON sidecar.
pub fn save_image(img: &Field, path: &Path) -> Result<()> {
    match extension_of(path)?.as_str() {
        "raw" => save_raw(img, path),
        "pgm" => save_pgm(img, path),
        other => Err(NcbcError::Validation(format!(
            "unsupported image extension '.{other}' (expected .raw or .pgm)"
        ))),
    }
}

/// Load an image saved by [`save_image`].
pub fn load_image(path: &Path) -> Result<Field> {
    match extension_of(path)?.as_str() {
        "raw" => load_raw(path),
        "pgm" => load_pgm(path),
        other => Err(NcbcError::Validation(format!(
            "unsupported image extension '.{other}' (expected .raw or .pgm)"
        ))),
    }
}

fn save_raw(img: &Field, path: &Path) -> Result<()> {
    let dims = img.dims();
    let mut payload = Vec::with_capacity(4 * img.values().len());
    for &v in img.values() {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
    atomic_write(path, &payload)?;
    let sidecar = RawSidecar {
        width: dims.width,
        height: dims.height,
        dtype: "float32".into(),
        endianness: "little".into(),
    };
    let text = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
    atomic_write(&sidecar_path(path), &text)
}

fn load_raw(path: &Path) -> Result<Field> {
    let side = sidecar_path(path);
    let content = fs::read_to_string(&side)
        .map_err(|source| NcbcError::Io { path: side.clone(), source })?;
    let header: RawSidecar = serde_json::from_str(&content).map_err(|e| NcbcError::Format {
        path: side.clone(),
        offset: json_offset(&content, &e),
        message: e.to_string(),
    })?;
    if header.dtype != "float32" {
        return Err(NcbcError::Format {
            path: side.clone(),
            offset: 0,
            message: format!("dtype '{}' is not supported for .raw (use float32)", header.dtype),
        });
    }
    if header.endianness != "little" {
        return Err(NcbcError::Format {
            path: side.clone(),
            offset: 0,
            message: format!("endianness '{}' is not supported (use little)", header.endianness),
        });
    }
    let dims = LatticeDims::new(header.width, header.height).map_err(|e| NcbcError::Format {
        path: side.clone(),
        offset: 0,
        message: format!("bad image dimensions: {e}"),
    })?;
    let expected = dims
        .nodes()
        .checked_mul(4)
        .ok_or_else(|| NcbcError::Format {
            path: side.clone(),
            offset: 0,
            message: "image dimensions overflow the payload size".into(),
        })?;
    let bytes = fs::read(path).map_err(|source| NcbcError::Io { path: path.to_path_buf(), source })?;
    if bytes.len() != expected {
        return Err(NcbcError::Format {
            path: path.to_path_buf(),
            offset: bytes.len().min(expected) as u64,
            message: format!("payload is {} bytes, header implies {expected}", bytes.len()),
        });
    }
    let values: Vec<f64> =
        bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    Field::from_vec(dims, values)
}

fn save_pgm(img: &Field, path: &Path) -> Result<()> {
    let dims = img.dims();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in img.values() {
        if !v.is_finite() {
            return Err(NcbcError::Data("pgm export needs finite values".into()));
        }
        min = min.min(v);
        max = max.max(v);
    }
    let span = max - min;
    let mut out = format!("P5\n{} {}\n65535\n", dims.width, dims.height).into_bytes();
    out.reserve(2 * img.values().len());
    for &v in img.values() {
        let code = if span > 0.0 {
            ((v - min) / span * 65535.0).round().clamp(0.0, 65535.0) as u16
        } else {
            0
        };
        out.extend_from_slice(&code.to_be_bytes());
    }
    atomic_write(path, &out)?;
    let text = serde_json::to_vec_pretty(&PgmScale { min, max }).expect("scale serializes");
    atomic_write(&sidecar_path(path), &text)
}

fn load_pgm(path: &Path) -> Result<Field> {
    let bytes = fs::read(path).map_err(|source| NcbcError::Io { path: path.to_path_buf(), source })?;
    let fmt = |offset: usize, message: String| NcbcError::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(fmt(0, "not a binary P5 pgm".into()));
    }
    let mut pos = 2;
    let next_token = |pos: &mut usize| -> Result<usize> {
        // Skip whitespace and '#' comments.
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
            *pos += 1;
        }
        if *pos == start {
            return Err(fmt(start, "expected an unsigned decimal header field".into()));
        }
        std::str::from_utf8(&bytes[start..*pos])
            .expect("digits are utf-8")
            .parse::<usize>()
            .map_err(|e| fmt(start, format!("header field out of range: {e}")))
    };
    let width = next_token(&mut pos)?;
    let height = next_token(&mut pos)?;
    let maxval = next_token(&mut pos)?;
    if maxval == 0 || maxval > 65535 {
        return Err(fmt(pos, format!("maxval {maxval} outside 1..=65535")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(fmt(pos, "expected single whitespace after maxval".into()));
    }
    pos += 1;
    let dims = LatticeDims::new(width, height)
        .map_err(|e| fmt(pos, format!("bad image dimensions: {e}")))?;
    let n = dims.nodes();
    let wide = maxval > 255;
    let expected = if wide { 2 * n } else { n };
    let have = bytes.len() - pos;
    if have != expected {
        return Err(fmt(
            pos + have.min(expected),
            format!("payload is {have} bytes, header implies {expected}"),
        ));
    }
    let codes: Vec<f64> = if wide {
        bytes[pos..]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
            .collect()
    } else {
        bytes[pos..].iter().map(|&b| b as f64).collect()
    };

    let side = sidecar_path(path);
    let values = if side.exists() {
        let content = fs::read_to_string(&side)
            .map_err(|source| NcbcError::Io { path: side.clone(), source })?;
        let scale: PgmScale = serde_json::from_str(&content).map_err(|e| NcbcError::Format {
            path: side.clone(),
            offset: json_offset(&content, &e),
            message: e.to_string(),
        })?;
        if !scale.min.is_finite() || !scale.max.is_finite() || scale.max < scale.min {
            return Err(NcbcError::Format {
                path: side,
                offset: 0,
                message: format!("invalid intensity range [{}, {}]", scale.min, scale.max),
            });
        }
        let span = scale.max - scale.min;
        codes
            .iter()
            .map(|&c| if span > 0.0 { scale.min + c / maxval as f64 * span } else { scale.min })
            .collect()
    } else {
        codes
    };
    Field::from_vec(dims, values)
}

/// Load a JSON ROI list and validate it against the image dimensions:
/// names must be unique and every rectangle in bounds.
pub fn load_rois(path: &Path, dims: LatticeDims) -> Result<Vec<Roi>> {
    let content =
        fs::read_to_string(path).map_err(|source| NcbcError::Io { path: path.to_path_buf(), source })?;
    let rois: Vec<Roi> = serde_json::from_str(&content).map_err(|e| NcbcError::Format {
        path: path.to_path_buf(),
        offset: json_offset(&content, &e),
        message: e.to_string(),
    })?;
    let mut seen = BTreeSet::new();
    for roi in &rois {
        if !seen.insert(roi.name.as_str()) {
            return Err(NcbcError::Validation(format!("duplicate roi name '{}'", roi.name)));
        }
        roi.validate(dims)?;
    }
    Ok(rois)
}

/// Save an ROI list as pretty-printed JSON.
pub fn save_rois(rois: &[Roi], path: &Path) -> Result<()> {
    let text = serde_json::to_vec_pretty(rois).expect("rois serialize");
    atomic_write(path, &text)
}

/// Load a configuration file. An empty (or whitespace-only) document
/// yields the full defaults; unknown keys and type mismatches are
/// rejected with the offending key in the message.
pub fn load_config(path: &Path) -> Result<NcbcConfig> {
    let content =
        fs::read_to_string(path).map_err(|source| NcbcError::Io { path: path.to_path_buf(), source })?;
    let cfg = if content.trim().is_empty() {
        NcbcConfig::default()
    } else {
        serde_json::from_str(&content).map_err(|e| NcbcError::Format {
            path: path.to_path_buf(),
            offset: json_offset(&content, &e),
            message: e.to_string(),
        })?
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Save a configuration as pretty-printed JSON.
pub fn save_config(cfg: &NcbcConfig, path: &Path) -> Result<()> {
    let text = serde_json::to_vec_pretty(cfg).expect("config serializes");
    atomic_write(path, &text)
}

/// Byte offset of a serde_json error position within `content`.
fn json_offset(content: &str, err: &serde_json::Error) -> u64 {
    let (line, column) = (err.line(), err.column());
    if line == 0 {
        return 0;
    }
    let mut offset = 0usize;
    for (i, l) in content.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1).min(l.len())) as u64;
        }
        offset += l.len();
    }
    offset as u64
}
