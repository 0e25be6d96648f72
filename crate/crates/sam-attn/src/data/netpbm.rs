//! Binary netpbm codecs: P6 (RGB) and P5 (grayscale), 8-bit only. These two
//! formats keep image IO dependency-free; anything can convert to them.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Decoded 8-bit image, rows top to bottom, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    /// 3 for P6, 1 for P5.
    pub channels: usize,
    pub data: Vec<u8>,
}

pub fn read(path: &Path) -> Result<RawImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes, path)
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    write(path, "P6", width, height, 3, rgb)
}

pub fn write_pgm(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    write(path, "P5", width, height, 1, gray)
}

fn write(
    path: &Path,
    magic: &str,
    width: usize,
    height: usize,
    channels: usize,
    data: &[u8],
) -> Result<()> {
    if data.len() != width * height * channels {
        return Err(Error::param(format!(
            "{magic} payload must be {}x{}x{channels} = {} bytes, got {}",
            width,
            height,
            width * height * channels,
            data.len()
        )));
    }
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn parse(bytes: &[u8], path: &Path) -> Result<RawImage> {
    let mut cursor = Cursor { bytes, pos: 0 };
    let magic = cursor.token().ok_or_else(|| Error::format(path, "missing magic number"))?;
    let channels = match magic {
        b"P6" => 3,
        b"P5" => 1,
        other => {
            return Err(Error::format(
                path,
                format!("unsupported format {:?}; only binary P5/P6", String::from_utf8_lossy(other)),
            ))
        }
    };
    let mut header = [0usize; 3];
    for (name, slot) in ["width", "height", "maxval"].iter().zip(&mut header) {
        let tok = cursor
            .token()
            .ok_or_else(|| Error::format(path, format!("missing {name} in header")))?;
        *slot = std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                Error::format(path, format!("{name} is not a number: {:?}", String::from_utf8_lossy(tok)))
            })?;
    }
    let [width, height, maxval] = header;
    if width == 0 || height == 0 {
        return Err(Error::format(path, format!("degenerate dims {width}x{height}")));
    }
    if maxval != 255 {
        return Err(Error::format(path, format!("only maxval 255 is supported, got {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if !cursor.bump_single_whitespace() {
        return Err(Error::format(path, "header not terminated by whitespace"));
    }
    let need = width * height * channels;
    let data = &cursor.bytes[cursor.pos..];
    if data.len() < need {
        return Err(Error::format(
            path,
            format!("truncated payload: need {need} bytes, found {}", data.len()),
        ));
    }
    Ok(RawImage {
        width,
        height,
        channels,
        data: data[..need].to_vec(),
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    /// Next header token, skipping whitespace and `#` comment lines.
    fn token(&mut self) -> Option<&[u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn bump_single_whitespace(&mut self) -> bool {
        if self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
            true
        } else {
            false
        }
    }
}
