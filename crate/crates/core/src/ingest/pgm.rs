//! Netpbm graymap reader (P2 and P5, maxval up to 255) and writer.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::GrayImage;

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    /// Skips whitespace and `#` comments running to end of line.
    fn skip_separators(&mut self) {
        while let Some(&b) = self.data.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.data.get(self.pos) {
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
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
        self.skip_separators();
        let start = self.pos;
        while self.data.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error(format!("expected {what}")));
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse {
                offset: start,
                message: format!("{what} out of range"),
            })
    }
}

pub fn parse_pgm(data: &[u8]) -> Result<GrayImage> {
    let mut cur = Cursor { data, pos: 0 };
    let binary = match data.get(..2) {
        Some(b"P5") => true,
        Some(b"P2") => false,
        _ => return Err(cur.error("missing P2/P5 magic number")),
    };
    cur.pos = 2;
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    let maxval_offset = cur.pos;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Parse {
            offset: maxval_offset,
            message: format!("zero image dimension {width}x{height}"),
        });
    }
    if maxval == 0 {
        return Err(Error::Parse {
            offset: maxval_offset,
            message: "maxval must be positive".into(),
        });
    }
    if maxval > 255 {
        return Err(Error::Unsupported(format!("PGM maxval {maxval} > 255")));
    }
    let count = width * height;
    let pixels = if binary {
        // exactly one whitespace byte separates the header from the raster
        if !data.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(cur.error("expected whitespace after maxval"));
        }
        let start = cur.pos + 1;
        let end = start + count;
        if data.len() < end {
            return Err(Error::Parse {
                offset: data.len(),
                message: format!(
                    "pixel data truncated: expected {count} bytes from offset {start}, found {}",
                    data.len() - start.min(data.len())
                ),
            });
        }
        let pixels = data[start..end].to_vec();
        if let Some(i) = pixels.iter().position(|&p| u32::from(p) > maxval) {
            return Err(Error::Parse {
                offset: start + i,
                message: format!("sample {} exceeds maxval {maxval}", pixels[i]),
            });
        }
        pixels
    } else {
        let mut pixels = Vec::with_capacity(count);
        for _ in 0..count {
            let offset = cur.pos;
            let v = cur.number("pixel value")?;
            if v > maxval {
                return Err(Error::Parse {
                    offset,
                    message: format!("sample {v} exceeds maxval {maxval}"),
                });
            }
            pixels.push(v as u8);
        }
        pixels
    };
    GrayImage::new(width, height, pixels)
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    parse_pgm(&fs::read(path)?)
}

/// Binary P5 with maxval 255: `P5 <w> <h> 255\n` followed by the raster.
pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5 {} {} 255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.pixels());
    out
}

/// ASCII P2 with maxval 255, one image row per line.
pub fn encode_pgm_ascii(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P2 {} {} 255\n", image.width(), image.height());
    for row in image.pixels().chunks(image.width()) {
        let line: Vec<String> = row.iter().map(u8::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out.into_bytes()
}

pub fn save_pgm(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    fs::write(path, encode_pgm(image))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ascii_literal() {
        let img = parse_pgm(b"P2 2 2 255 0 64 128 255").unwrap();
        assert_eq!((img.width(), img.height()), (2, 2));
        assert_eq!(img.pixels(), &[0, 64, 128, 255]);
    }

    #[test]
    fn comments_are_skipped() {
        let img = parse_pgm(b"P2\n# made by hand\n3 1 # trailing\n15\n1 2\n# mid\n3\n").unwrap();
        assert_eq!(img.pixels(), &[1, 2, 3]);
        let img = parse_pgm(b"P5 #c\n2 1\n255\n\x07\x08").unwrap();
        assert_eq!(img.pixels(), &[7, 8]);
    }

    #[test]
    fn writer_format_is_fixed() {
        let img = GrayImage::new(2, 1, vec![1, 2]).unwrap();
        assert_eq!(encode_pgm(&img), b"P5 2 1 255\n\x01\x02".to_vec());
        assert_eq!(encode_pgm_ascii(&img), b"P2 2 1 255\n1 2\n".to_vec());
    }

    #[test]
    fn truncated_payload_reports_offset() {
        match parse_pgm(b"P5 4 4 255\n\x00\x01\x02") {
            Err(Error::Parse { offset, message }) => {
                assert_eq!(offset, 14);
                assert!(message.contains("truncated"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_pgm(b"P2 2 2 255 1 2 3"), Err(Error::Parse { offset: 16, .. })));
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(parse_pgm(b"P6 1 1 255\n\x00"), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(parse_pgm(b"P5 x 1 255\n\x00"), Err(Error::Parse { .. })));
        assert!(matches!(parse_pgm(b"P5 0 1 255\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_pgm(b"P5 1 1 0\n\x00"), Err(Error::Parse { .. })));
        assert!(matches!(parse_pgm(b"P2 1 1 15 16"), Err(Error::Parse { .. })));
        assert!(matches!(parse_pgm(b"P5 1 1 65535\n\x00\x00"), Err(Error::Unsupported(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let img = GrayImage::new(3, 2, vec![0, 10, 20, 30, 40, 255]).unwrap();
        save_pgm(&path, &img).unwrap();
        assert_eq!(load_pgm(&path).unwrap(), img);
    }

    proptest! {
        #[test]
        fn round_trip_both_encodings(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
            let pixels: Vec<u8> = (0..w * h)
                .map(|i| (crate::approx_hw::splitmix64(seed ^ i as u64) & 0xff) as u8)
                .collect();
            let img = GrayImage::new(w, h, pixels).unwrap();
            prop_assert_eq!(&parse_pgm(&encode_pgm(&img)).unwrap(), &img);
            prop_assert_eq!(&parse_pgm(&encode_pgm_ascii(&img)).unwrap(), &img);
        }
    }
}
