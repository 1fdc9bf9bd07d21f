//! SPFM tensor files: `"SPFM"`, version 1, dtype 1 (f32 LE), ndim, ndim
//! little-endian u32 dimensions, then raw data.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Image};

pub const MAGIC: &[u8; 4] = b"SPFM";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;

/// A dense f32 tensor of any rank.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().map(|&d| d as usize).product();
        if n != data.len() {
            return Err(Error::shape(dims, data.len()));
        }
        Ok(Self { dims, data })
    }
}

impl From<&FeatureMap> for Tensor {
    fn from(m: &FeatureMap) -> Self {
        let (c, r, k) = m.shape();
        Self {
            dims: vec![c as u32, r as u32, k as u32],
            data: m.data().to_vec(),
        }
    }
}

impl TryFrom<Tensor> for FeatureMap {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        match t.dims[..] {
            [c, r, k] => FeatureMap::from_vec(c as usize, r as usize, k as usize, t.data),
            _ => Err(Error::shape("3 dims", t.dims)),
        }
    }
}

pub fn write_record(w: &mut impl Write, t: &Tensor) -> Result<()> {
    if t.dims.len() > u8::MAX as usize {
        return Err(Error::domain(format!("rank {} too large", t.dims.len())));
    }
    let mut buf = Vec::with_capacity(7 + 4 * t.dims.len() + 4 * t.data.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&[VERSION, DTYPE_F32, t.dims.len() as u8]);
    for d in &t.dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in &t.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads one record, or `None` at a clean end of input.
pub fn read_record(r: &mut impl Read) -> Result<Option<Tensor>> {
    let bad = |msg: String| Error::Format {
        path: Default::default(),
        msg,
    };
    let mut head = [0u8; 7];
    let mut got = 0;
    while got < head.len() {
        let n = r.read(&mut head[got..])?;
        if n == 0 {
            return if got == 0 {
                Ok(None)
            } else {
                Err(bad("truncated header".into()))
            };
        }
        got += n;
    }
    if &head[..4] != MAGIC {
        return Err(bad(format!("bad magic {:?}", &head[..4])));
    }
    if head[4] != VERSION {
        return Err(bad(format!("unsupported version {}", head[4])));
    }
    if head[5] != DTYPE_F32 {
        return Err(bad(format!("unsupported dtype {}", head[5])));
    }
    let ndim = head[6] as usize;
    let mut dim_bytes = vec![0u8; 4 * ndim];
    r.read_exact(&mut dim_bytes)
        .map_err(|_| bad("truncated dimensions".into()))?;
    let dims: Vec<u32> = dim_bytes
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| bad(format!("dimensions {dims:?} overflow")))?;
    let mut raw = vec![
        0u8;
        n.checked_mul(4)
            .ok_or_else(|| bad("size overflow".into()))?
    ];
    r.read_exact(&mut raw)
        .map_err(|_| bad("truncated data".into()))?;
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(Some(Tensor { dims, data }))
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Format { msg, .. } => Error::Format {
            path: path.to_path_buf(),
            msg,
        },
        other => other,
    })
}

pub fn write_file(path: &Path, tensors: &[Tensor]) -> Result<()> {
    let mut buf = Vec::new();
    for t in tensors {
        write_record(&mut buf, t)?;
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<Tensor>> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    let mut cur = bytes.as_slice();
    let mut out = Vec::new();
    while let Some(t) = with_path(path, read_record(&mut cur))? {
        out.push(t);
    }
    Ok(out)
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    write_file(path, &[Tensor::from(img.as_map())])
}

pub fn read_image(path: &Path) -> Result<Image> {
    let mut ts = read_file(path)?;
    if ts.len() != 1 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("expected one tensor, found {}", ts.len()),
        });
    }
    let map = FeatureMap::try_from(ts.remove(0))?;
    if map.channels() != 3 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("expected 3 channels, found {}", map.channels()),
        });
    }
    with_path(path, Image::from_map(map))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_bytes() {
        let t = Tensor::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_record(&mut buf, &t).unwrap();
        let mut expect = b"SPFM".to_vec();
        expect.extend([1, 1, 2, 2, 0, 0, 0, 1, 0, 0, 0]);
        expect.extend(1.0f32.to_le_bytes());
        expect.extend((-2.5f32).to_le_bytes());
        assert_eq!(buf, expect);
        let back = read_record(&mut buf.as_slice()).unwrap().unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_record(&mut &b"SPFX\x01\x01\x00"[..]).is_err());
        assert!(read_record(&mut &b"SPFM\x02\x01\x00"[..]).is_err());
        assert!(read_record(&mut &b"SPFM\x01\x01\x01\x05\x00\x00\x00"[..]).is_err());
        assert!(read_record(&mut &b""[..]).unwrap().is_none());
    }
}
