//! PFM disparity maps: `Pf` grayscale, negative scale = little-endian,
//! scanlines stored bottom-to-top, invalid pixels encoded as 0.

use crate::error::{Error, Result};
use crate::warp::DisparityMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

pub fn write_pfm(path: &Path, d: &DisparityMap) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + d.values.len() * 4);
    write!(buf, "Pf\n{} {}\n-1\n", d.width, d.height)?;
    for y in (0..d.height).rev() {
        for x in 0..d.width {
            let i = y * d.width + x;
            let v = if d.mask[i] { d.values[i] } else { 0.0 };
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Reads a grayscale PFM; pixels equal to 0 come back masked invalid.
pub fn read_pfm(path: &Path) -> Result<DisparityMap> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;
    let mut line = |n: usize| -> Result<String> {
        let start = pos;
        while pos < bytes.len() && bytes[pos] != b'\n' {
            pos += 1;
        }
        if pos == bytes.len() {
            return Err(Error::format(format!("{}: truncated header at line {n}", path.display())));
        }
        let s = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| Error::format(format!("{}: non-UTF8 header line {n}", path.display())))?
            .trim()
            .to_string();
        pos += 1;
        Ok(s)
    };
    let magic = line(1)?;
    match magic.as_str() {
        "Pf" => {}
        "PF" => return Err(Error::format(format!("{}: color PFM not supported", path.display()))),
        other => {
            return Err(Error::format(format!(
                "{}: bad magic {other:?} at line 1, expected \"Pf\"",
                path.display()
            )))
        }
    }
    let dims = line(2)?;
    let mut it = dims.split_whitespace();
    let parse_dim = |tok: Option<&str>| -> Result<usize> {
        tok.and_then(|t| t.parse::<usize>().ok())
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::format(format!("{}: bad dimensions {dims:?} at line 2", path.display())))
    };
    let width = parse_dim(it.next())?;
    let height = parse_dim(it.next())?;
    let scale: f64 = line(3)?
        .parse()
        .map_err(|_| Error::format(format!("{}: bad scale at line 3", path.display())))?;
    if scale == 0.0 {
        return Err(Error::format(format!("{}: scale must be nonzero", path.display())));
    }
    let little_endian = scale < 0.0;
    let need = width * height * 4;
    let data = &bytes[pos..];
    if data.len() != need {
        return Err(Error::format(format!(
            "{}: expected {need} payload bytes for {width}x{height}, found {}",
            path.display(),
            data.len()
        )));
    }
    let mut values = vec![0.0f32; width * height];
    let mut mask = vec![false; width * height];
    for row in 0..height {
        let y = height - 1 - row; // file rows run bottom-to-top
        for x in 0..width {
            let o = (row * width + x) * 4;
            let raw: [u8; 4] = data[o..o + 4].try_into().expect("length checked");
            let v = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            let i = y * width + x;
            values[i] = v;
            mask[i] = v != 0.0;
        }
    }
    // Bypass from_parts: foreign files may carry negative or NaN values and
    // the caller decides what to do with them; our own writer only emits
    // valid maps.
    Ok(DisparityMap { width, height, values, mask })
}
