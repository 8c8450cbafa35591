//! Binary PGM (P5, 8 or 16 bit) and PPM (P6, 8 bit).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray16 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb8 {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub data: Vec<u8>,
}

impl Rgb8 {
    pub fn new(width: usize, height: usize) -> Self {
        Rgb8 {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, p: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&p);
    }

    /// Copy `src` with its top-left corner at `(x, y)`.
    pub fn blit(&mut self, src: &Rgb8, x: usize, y: usize) {
        for row in 0..src.height.min(self.height.saturating_sub(y)) {
            let w = src.width.min(self.width.saturating_sub(x));
            let d = ((y + row) * self.width + x) * 3;
            let s = row * src.width * 3;
            self.data[d..d + w * 3].copy_from_slice(&src.data[s..s + w * 3]);
        }
    }

    /// Nearest-neighbour enlargement by an integer factor.
    pub fn upscale(&self, factor: usize) -> Rgb8 {
        let mut out = Rgb8::new(self.width * factor, self.height * factor);
        for y in 0..out.height {
            for x in 0..out.width {
                out.set(x, y, self.pixel(x / factor, y / factor));
            }
        }
        out
    }
}

fn header(magic: &str, width: usize, height: usize, maxval: u32) -> Vec<u8> {
    format!("{}\n{} {}\n{}\n", magic, width, height, maxval).into_bytes()
}

pub fn encode_pgm16(img: &Gray16) -> Vec<u8> {
    let mut out = header("P5", img.width, img.height, 65535);
    for v in &img.data {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn encode_ppm(img: &Rgb8) -> Vec<u8> {
    let mut out = header("P6", img.width, img.height, 255);
    out.extend_from_slice(&img.data);
    out
}

struct Parsed<'a> {
    magic: &'a [u8],
    width: usize,
    height: usize,
    maxval: u32,
    body: &'a [u8],
}

fn parse(bytes: &[u8]) -> std::result::Result<Parsed<'_>, String> {
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        // Whitespace and comments between header fields.
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(&bytes[start..pos]);
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let num = |f: &[u8], what: &str| -> std::result::Result<usize, String> {
        std::str::from_utf8(f)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("bad {} {:?}", what, String::from_utf8_lossy(f)))
    };
    let width = num(fields[1], "width")?;
    let height = num(fields[2], "height")?;
    let maxval = num(fields[3], "maxval")?;
    if width == 0 || height == 0 || !(1..=65535).contains(&maxval) {
        return Err(format!("bad dimensions {}x{} or maxval {}", width, height, maxval));
    }
    Ok(Parsed {
        magic: fields[0],
        width,
        height,
        maxval: maxval as u32,
        body: bytes.get(pos..).unwrap_or(&[]),
    })
}

/// P5 with any maxval; 8-bit files are widened.
pub fn decode_pgm16(bytes: &[u8]) -> std::result::Result<Gray16, String> {
    let p = parse(bytes)?;
    if p.magic != b"P5" {
        return Err(format!("expected P5, found {:?}", String::from_utf8_lossy(p.magic)));
    }
    let n = p.width * p.height;
    let data: Vec<u16> = if p.maxval > 255 {
        if p.body.len() < 2 * n {
            return Err(format!("raster has {} bytes, expected {}", p.body.len(), 2 * n));
        }
        p.body[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        if p.body.len() < n {
            return Err(format!("raster has {} bytes, expected {}", p.body.len(), n));
        }
        p.body[..n].iter().map(|&b| b as u16).collect()
    };
    Ok(Gray16 {
        width: p.width,
        height: p.height,
        data,
    })
}

/// P6 with maxval 255.
pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Rgb8, String> {
    let p = parse(bytes)?;
    if p.magic != b"P6" {
        return Err(format!("expected P6, found {:?}", String::from_utf8_lossy(p.magic)));
    }
    if p.maxval != 255 {
        return Err(format!("only maxval 255 is supported, found {}", p.maxval));
    }
    let n = p.width * p.height * 3;
    if p.body.len() < n {
        return Err(format!("raster has {} bytes, expected {}", p.body.len(), n));
    }
    Ok(Rgb8 {
        width: p.width,
        height: p.height,
        data: p.body[..n].to_vec(),
    })
}

pub fn read_pgm16(path: &Path) -> Result<Gray16> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm16(&bytes).map_err(|m| Error::format(path, m))
}

pub fn read_ppm(path: &Path) -> Result<Rgb8> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|m| Error::format(path, m))
}

pub fn write_pgm16(path: &Path, img: &Gray16) -> Result<()> {
    super::write_atomic(path, &encode_pgm16(img))
}

pub fn write_ppm(path: &Path, img: &Rgb8) -> Result<()> {
    super::write_atomic(path, &encode_ppm(img))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_with_comment() {
        let bytes = b"P6 # made by hand\n2 1\n255\n\x01\x02\x03\x04\x05\x06";
        let img = decode_ppm(bytes).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.pixel(1, 0), [4, 5, 6]);
    }

    #[test]
    fn truncated_raster_is_reported() {
        let mut bytes = encode_ppm(&Rgb8::new(4, 4));
        bytes.truncate(bytes.len() - 1);
        assert!(decode_ppm(&bytes).unwrap_err().contains("raster"));
        assert!(decode_pgm16(b"P5\n3").is_err());
    }

    #[test]
    fn eight_bit_pgm_widens() {
        let g = decode_pgm16(b"P5\n2 1\n255\n\x07\xff").unwrap();
        assert_eq!(g.data, vec![7, 255]);
    }

    #[test]
    fn blit_and_upscale() {
        let mut small = Rgb8::new(1, 1);
        small.set(0, 0, [9, 8, 7]);
        let big = small.upscale(2);
        let mut sheet = Rgb8::new(3, 2);
        sheet.blit(&big, 1, 0);
        assert_eq!(sheet.pixel(0, 0), [0, 0, 0]);
        assert_eq!(sheet.pixel(2, 1), [9, 8, 7]);
    }

    proptest! {
        #[test]
        fn pgm16_round_trip(w in 1usize..6, h in 1usize..6, seed in any::<u64>()) {
            let data = (0..w * h).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u16).collect();
            let img = Gray16 { width: w, height: h, data };
            prop_assert_eq!(decode_pgm16(&encode_pgm16(&img)).unwrap(), img);
        }

        #[test]
        fn ppm_round_trip(w in 1usize..6, h in 1usize..6, seed in any::<u8>()) {
            let mut img = Rgb8::new(w, h);
            for (i, b) in img.data.iter_mut().enumerate() {
                *b = seed.wrapping_add((i as u8).wrapping_mul(31));
            }
            prop_assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
        }
    }
}
