//! Judge sidecar files: plain-text decimals or one-element `.npy` arrays.

use std::path::Path;

use crate::error::{Error, Result};

/// Read a judge score in `[0, 1]`; the format is chosen by extension.
pub fn read_judge(path: &Path) -> Result<f64> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default();
    let value = match ext.to_ascii_lowercase().as_str() {
        "npy" => parse_npy_scalar(&bytes),
        "txt" | "" => std::str::from_utf8(&bytes)
            .ok()
            .and_then(|s| s.trim().parse::<f64>().ok())
            .ok_or_else(|| "not a decimal number".to_string()),
        other => Err(format!("unsupported judge extension `.{other}`")),
    }
    .map_err(|m| Error::Input(format!("judge {}: {m}", path.display())))?;
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::Input(format!(
            "judge {}: value {value} outside [0, 1]",
            path.display()
        )));
    }
    Ok(value)
}

/// Little-endian `f4`/`f8` array holding exactly one element.
fn parse_npy_scalar(bytes: &[u8]) -> std::result::Result<f64, String> {
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err("missing NumPy magic".into());
    }
    let major = bytes[6];
    let (header_len, start) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err("truncated header".into());
            }
            (
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                12,
            )
        }
        v => return Err(format!("unsupported npy version {v}")),
    };
    let header = bytes
        .get(start..start + header_len)
        .and_then(|h| std::str::from_utf8(h).ok())
        .ok_or("truncated or non-text header")?;
    let data = &bytes[start + header_len..];

    let descr = dict_value(header, "descr").ok_or("header has no descr")?;
    let descr = descr.trim_matches(|c| c == '\'' || c == '"');
    if dict_value(header, "fortran_order").is_none() {
        return Err("header has no fortran_order".into());
    }
    let shape = dict_value(header, "shape").ok_or("header has no shape")?;
    let count = shape
        .trim_matches(|c| c == '(' || c == ')')
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .try_fold(1usize, |acc, d| d.parse::<usize>().map(|d| acc * d))
        .map_err(|_| format!("bad shape {shape}"))?;
    if count != 1 {
        return Err(format!("expected one element, shape is {shape}"));
    }
    match descr {
        "<f8" | "float64" => data
            .get(..8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| "truncated data".into()),
        "<f4" | "float32" => data
            .get(..4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .ok_or_else(|| "truncated data".into()),
        other => Err(format!("unsupported dtype {other}")),
    }
}

/// Raw text of `key`'s value in a Python dict literal.
fn dict_value<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let pos = header.find(&format!("'{key}'"))?;
    let rest = header[pos + key.len() + 2..]
        .trim_start()
        .strip_prefix(':')?
        .trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')')? + 1
    } else {
        rest.find([',', '}'])?
    };
    Some(rest[..end].trim())
}
