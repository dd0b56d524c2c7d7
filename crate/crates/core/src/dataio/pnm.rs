//! Binary portable pixmap (P6) and graymap (P5), 8-bit.

use std::path::Path;

use crate::{Error, Result};

/// Decoded 8-bit image; `channels` is 3 for P6 and 1 for P5.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image8 {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

pub fn encode(width: usize, height: usize, channels: usize, data: &[u8]) -> Result<Vec<u8>> {
    let magic = match channels {
        3 => "P6",
        1 => "P5",
        _ => return Err(Error::invalid(format!("unsupported channel count {channels}"))),
    };
    if width == 0 || height == 0 || data.len() != width * height * channels {
        return Err(Error::invalid(format!(
            "{} bytes do not match a {width}x{height}x{channels} image",
            data.len()
        )));
    }
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space(&mut self) {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|b| *b != b'\n') {
                        self.pos += 1;
                    }
                }
                _ => return,
            }
        }
    }

    fn number(&mut self) -> std::result::Result<usize, (usize, String)> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err((start, "expected a decimal number".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or((start, "number out of range".into()))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Image8> {
    let fail = |offset: usize, msg: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg,
    };
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(fail(0, "expected magic P6 or P5".into())),
    };
    let mut c = Cursor { bytes, pos: 2 };
    if !c.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(fail(2, "expected whitespace after magic".into()));
    }
    let width = c.number().map_err(|(o, m)| fail(o, m))?;
    let height = c.number().map_err(|(o, m)| fail(o, m))?;
    let maxval_at = c.pos;
    let maxval = c.number().map_err(|(o, m)| fail(o, m))?;
    if maxval != 255 {
        return Err(fail(maxval_at, format!("maxval {maxval} unsupported, need 255")));
    }
    if width == 0 || height == 0 {
        return Err(fail(maxval_at, "zero image dimension".into()));
    }
    if !c.bytes.get(c.pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(fail(c.pos, "expected single whitespace before pixel data".into()));
    }
    let start = c.pos + 1;
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| fail(start, "image too large".into()))?;
    let have = bytes.len() - start;
    if have < need {
        return Err(fail(bytes.len(), format!("truncated payload: {have} of {need} bytes")));
    }
    if have > need {
        return Err(fail(start + need, format!("{} trailing bytes", have - need)));
    }
    Ok(Image8 {
        width,
        height,
        channels,
        data: bytes[start..].to_vec(),
    })
}

pub fn write(path: &Path, width: usize, height: usize, channels: usize, data: &[u8]) -> Result<()> {
    let bytes = encode(width, height, channels, data)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Image8> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
