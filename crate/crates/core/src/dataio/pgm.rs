use std::io::{Read, Write};
use std::path::Path;

use super::{file_err, DataError, Result};

/// 8-bit single-channel raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(DataError::BadDimensions(width, height));
        }
        if pixels.len() != width * height {
            return Err(DataError::MalformedHeader(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self { width, height, pixels: vec![value; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn write_pgm<W: Write>(img: &GrayImage, mut sink: W) -> Result<()> {
    sink.write_all(&encode_pgm(img))?;
    Ok(())
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(if self.pos >= self.bytes.len() {
                DataError::Truncated("header")
            } else {
                DataError::MalformedHeader(format!("expected {what}"))
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| DataError::MalformedHeader(format!("{what} does not fit in u32")))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 {
        return Err(DataError::Truncated("header"));
    }
    if &bytes[..2] != b"P5" {
        return Err(DataError::NotGreyscale(String::from_utf8_lossy(&bytes[..2]).into_owned()));
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(DataError::UnsupportedDepth(maxval));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        Some(_) => return Err(DataError::MalformedHeader("missing separator after maxval".into())),
        None => return Err(DataError::Truncated("header")),
    }
    let len = width * height;
    let payload = &bytes[cur.pos..];
    if payload.len() < len {
        return Err(DataError::Truncated("payload"));
    }
    if payload.len() > len {
        return Err(DataError::TrailingBytes(payload.len() - len));
    }
    GrayImage::new(width, height, payload.to_vec())
}

pub fn read_pgm<R: Read>(mut source: R) -> Result<GrayImage> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_pgm(&bytes)
}

pub fn save_pgm(img: &GrayImage, path: &Path) -> Result<()> {
    std::fs::write(path, encode_pgm(img)).map_err(file_err(path))
}

pub fn load_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(file_err(path))?;
    decode_pgm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_round_trip() {
        let img = GrayImage::new(2, 2, vec![0, 255, 128, 7]).unwrap();
        let bytes = encode_pgm(&img);
        assert_eq!(decode_pgm(&bytes).unwrap(), img);
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = b"P5\n3 3\n255\n".to_vec();
        bytes.extend_from_slice(&[1; 8]);
        assert!(matches!(decode_pgm(&bytes), Err(DataError::Truncated("payload"))));
    }

    #[test]
    fn rejects_deep_and_non_grey() {
        let bytes = b"P5\n1 1\n65535\n\0\0".to_vec();
        assert!(matches!(decode_pgm(&bytes), Err(DataError::UnsupportedDepth(65535))));
        let bytes = b"P6\n1 1\n255\n\0\0\0".to_vec();
        assert!(matches!(decode_pgm(&bytes), Err(DataError::NotGreyscale(_))));
    }

    #[test]
    fn header_comments() {
        let bytes = b"P5 # made by hand\n2 1\n# depth\n255\n\x05\x06".to_vec();
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.pixels(), &[5, 6]);
    }
}
