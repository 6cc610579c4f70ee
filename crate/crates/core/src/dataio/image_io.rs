//! 8-bit grayscale image files. PGM (P5) is hand-rolled; PNG goes through
//! the image crate and converts RGB to luma on read. Format by extension.

use crate::error::{Error, Result};
use crate::grid::GrayF32;
use std::fs;
use std::io::Write as _;
use std::path::Path;

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_gray(path: &Path, img: &GrayF32) -> Result<()> {
    match extension(path)? {
        "pgm" => {
            let mut buf = Vec::with_capacity(32 + img.data.len());
            write!(buf, "P5\n{} {}\n255\n", img.width, img.height)?;
            buf.extend(img.data.iter().map(|&v| to_u8(v)));
            fs::write(path, buf)?;
            Ok(())
        }
        "png" => {
            let mut out = image::GrayImage::new(img.width as u32, img.height as u32);
            for (i, px) in out.pixels_mut().enumerate() {
                px.0[0] = to_u8(img.data[i]);
            }
            out.save(path).map_err(|e| {
                Error::format(format!("{}: png encode failed: {e}", path.display()))
            })
        }
        other => Err(Error::validation(format!("unsupported image extension .{other}"))),
    }
}

pub fn read_gray(path: &Path) -> Result<GrayF32> {
    match extension(path)? {
        "pgm" => read_pgm(path),
        "png" => {
            // Read the bytes ourselves so a missing file surfaces as an I/O
            // error rather than a decode error.
            let bytes = fs::read(path)?;
            let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
                .map_err(|e| Error::format(format!("{}: {e}", path.display())))?
                .to_luma8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            let data = img.into_raw().iter().map(|&b| b as f32 / 255.0).collect();
            GrayF32::from_vec(w, h, data)
        }
        other => Err(Error::validation(format!("unsupported image extension .{other}"))),
    }
}

fn extension(path: &Path) -> Result<&str> {
    path.extension().and_then(|e| e.to_str()).ok_or_else(|| {
        Error::validation(format!("{}: image path needs a .pgm or .png extension", path.display()))
    })
}

fn read_pgm(path: &Path) -> Result<GrayF32> {
    let bytes = fs::read(path)?;
    let bad = |msg: &str| Error::format(format!("{}: {msg}", path.display()));
    // Header tokens separated by whitespace, with # comments to end-of-line.
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("truncated header".to_string()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token().map_err(|_| bad("truncated header"))? != "P5" {
        return Err(bad("bad magic, expected P5"));
    }
    let dim = |t: Result<String>| -> Result<usize> {
        t.ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&v| v > 0)
            .ok_or_else(|| bad("bad dimensions"))
    };
    let width = dim(token())?;
    let height = dim(token())?;
    let maxval: usize = token()
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("bad maxval"))?;
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    pos += 1; // single whitespace byte after maxval
    let payload = &bytes[pos.min(bytes.len())..];
    if payload.len() != width * height {
        return Err(bad(&format!(
            "expected {} payload bytes, found {}",
            width * height,
            payload.len()
        )));
    }
    GrayF32::from_vec(width, height, payload.iter().map(|&b| b as f32 / 255.0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> GrayF32 {
        let data = (0..w * h).map(|i| (i % 256) as f32 / 255.0).collect();
        GrayF32::from_vec(w, h, data).unwrap()
    }

    #[test]
    fn pgm_round_trip_preserves_every_level() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.pgm");
        let img = ramp(64, 8); // covers all 256 levels
        write_gray(&path, &img).unwrap();
        let back = read_gray(&path).unwrap();
        assert_eq!(back.width, 64);
        assert_eq!(back.height, 8);
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 0.5 / 255.0 + 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn png_round_trip_matches_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let img = ramp(32, 9);
        let pgm = dir.path().join("i.pgm");
        let png = dir.path().join("i.png");
        write_gray(&pgm, &img).unwrap();
        write_gray(&png, &img).unwrap();
        let a = read_gray(&pgm).unwrap();
        let b = read_gray(&png).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn pgm_header_is_pinned() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.pgm");
        write_gray(&path, &ramp(3, 2)).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 6);
    }

    #[test]
    fn pgm_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        let mut buf = b"P5\n# a comment\n2 1\n255\n".to_vec();
        buf.extend_from_slice(&[0u8, 255u8]);
        fs::write(&path, buf).unwrap();
        let img = read_gray(&path).unwrap();
        assert_eq!(img.data, vec![0.0, 1.0]);
    }

    #[test]
    fn bad_extension_and_headers_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_gray(&dir.path().join("x.bmp"), &ramp(2, 2)).is_err());
        let p = dir.path().join("x.pgm");
        fs::write(&p, b"P6\n2 2\n255\n0000").unwrap();
        assert!(read_gray(&p).is_err());
        fs::write(&p, b"P5\n2 2\n255\n00").unwrap();
        assert!(read_gray(&p).is_err(), "short payload");
    }
}
