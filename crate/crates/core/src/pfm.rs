//! Portable FloatMap (PFM) encoding of float RGB images.
//!
//! Layout: ASCII header `PF\n<width> <height>\n<scale>\n` followed by
//! width*height*3 binary f32 samples. A negative scale marks little-endian
//! data; rows are stored bottom-to-top.

use thiserror::Error;

use crate::image::Image;

#[derive(Debug, Error, PartialEq)]
pub enum PfmError {
    #[error("not a PFM file: expected magic `PF`, got {0:?}")]
    Magic(String),
    #[error("malformed PFM header: {0}")]
    Header(String),
    #[error("PFM data truncated: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
}

pub fn write_pfm(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + img.data.len() * 12);
    out.extend_from_slice(format!("PF\n{} {}\n-1.0\n", img.width, img.height).as_bytes());
    for y in (0..img.height).rev() {
        for x in 0..img.width {
            for c in img.get(x, y) {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn read_pfm(bytes: &[u8]) -> Result<Image, PfmError> {
    let mut pos = 0;
    let mut token = || -> Result<String, PfmError> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(PfmError::Header("unexpected end of header".into()));
        }
        let tok = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
        // consume the single whitespace byte terminating the token
        if pos < bytes.len() {
            pos += 1;
        }
        Ok(tok)
    };

    let magic = token()?;
    if magic != "PF" {
        return Err(PfmError::Magic(magic));
    }
    let width: usize = token()?
        .parse()
        .map_err(|e| PfmError::Header(format!("bad width: {e}")))?;
    let height: usize = token()?
        .parse()
        .map_err(|e| PfmError::Header(format!("bad height: {e}")))?;
    let scale: f64 = token()?
        .parse()
        .map_err(|e| PfmError::Header(format!("bad scale: {e}")))?;
    if scale == 0.0 {
        return Err(PfmError::Header("scale must be nonzero".into()));
    }
    let little_endian = scale < 0.0;

    let expected = width * height * 12;
    let data = &bytes[pos..];
    if data.len() < expected {
        return Err(PfmError::Truncated {
            expected,
            got: data.len(),
        });
    }
    let mut img = Image::new(width, height);
    let mut off = 0;
    for y in (0..height).rev() {
        for x in 0..width {
            let mut px = [0.0; 3];
            for c in &mut px {
                let raw: [u8; 4] = data[off..off + 4].try_into().unwrap();
                let v = if little_endian {
                    f32::from_le_bytes(raw)
                } else {
                    f32::from_be_bytes(raw)
                };
                *c = v as f64;
                off += 4;
            }
            img.set(x, y, px);
        }
    }
    Ok(img)
}
