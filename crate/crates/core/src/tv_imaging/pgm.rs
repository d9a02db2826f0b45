use std::path::Path;

use super::image::Image;
use crate::error::{Error, Result};

/// Reads a binary (P5) graymap with maxval up to 255.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
    decode_pgm(&std::fs::read(path)?)
}

/// Writes a binary (P5) graymap with maxval 255; pixels are rounded to the
/// nearest integer and clamped to `[0, 255]`.
pub fn write_pgm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_pgm(img))?;
    Ok(())
}

pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|&p| p.round().clamp(0.0, 255.0) as u8));
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.buf.len() {
            match self.buf[self.pos] {
                b'#' => {
                    while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format(format!("missing {what} in header")));
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("unparsable {what}")))
    }
}

pub fn decode_pgm(buf: &[u8]) -> Result<Image> {
    if buf.len() < 2 || &buf[..2] != b"P5" {
        return Err(Error::Format("expected binary PGM magic 'P5'".into()));
    }
    let mut cur = Cursor { buf, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format("zero image dimension".into()));
    }
    if !(1..=255).contains(&maxval) {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    match buf.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(Error::Format("missing separator after maxval".into())),
    }
    let n = width * height;
    let raster = &buf[cur.pos..];
    if raster.len() < n {
        return Err(Error::Format(format!("truncated payload: {} of {n} bytes", raster.len())));
    }
    let scale = 255.0 / maxval as f64;
    let pixels = raster[..n].iter().map(|&b| (b as f64 * scale).round()).collect();
    Image::new(width, height, pixels)
}
