//! Binary PPM (P6, maxval 255) images.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Image;

pub fn encode(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.cols(), img.rows()).into_bytes();
    for r in 0..img.rows() {
        for c in 0..img.cols() {
            out.extend(img.pixel(r, c).map(|v| v.round().clamp(0.0, 255.0) as u8));
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    if fields[0] != "P6" {
        return Err(format!("unsupported magic {:?}", fields[0]));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| format!("bad header field {s:?}"))
    };
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    let need = w * h * 3;
    if bytes.len() < pos + need {
        return Err("truncated raster".into());
    }
    let raster = &bytes[pos..pos + need];
    Ok(Image::from_fn(h, w, |c, r, k| {
        raster[(r * w + k) * 3 + c] as f32
    }))
}

pub fn write(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode(img))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Image> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    decode(&fs::read(path)?).map_err(|msg| Error::Format {
        path: path.to_path_buf(),
        msg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let img = Image::from_fn(3, 5, |c, r, k| ((c * 50 + r * 20 + k * 7) % 256) as f32);
        assert_eq!(decode(&encode(&img)).unwrap(), img);
    }

    #[test]
    fn comments_and_errors() {
        let mut b = b"P6\n# hi\n1 1\n255\n".to_vec();
        b.extend([1, 2, 3]);
        assert_eq!(decode(&b).unwrap().pixel(0, 0), [1.0, 2.0, 3.0]);
        assert!(decode(b"P5\n1 1\n255\n\0").is_err());
        assert!(decode(b"P6\n2 2\n255\n\0").is_err());
    }
}
