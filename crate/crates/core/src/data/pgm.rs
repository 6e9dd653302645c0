//! Binary greymap (P5, maxval 255) reading and writing.

use std::fs;
use std::path::Path;

use crate::error::{Result, ScanError};
use crate::windowing::RawImage;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Greymap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Greymap {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(ScanError::format("pgm", format!("{width}x{height} with {} bytes", data.len())));
        }
        Ok(Greymap { width, height, data })
    }

    /// `round(p * 255)` per pixel.
    pub fn from_image(img: &RawImage) -> Self {
        let data = img.pixels().iter().map(|&p| quantize(p as f64)).collect();
        Greymap {
            width: img.width(),
            height: img.height(),
            data,
        }
    }

    pub fn to_image(&self) -> Result<RawImage> {
        let pixels = self.data.iter().map(|&b| b as f32 / 255.0).collect();
        RawImage::new(self.height, self.width, pixels)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = header_token(bytes, &mut pos)?;
        if magic != "P5" {
            return Err(ScanError::format("pgm", format!("magic {magic:?}")));
        }
        let mut number = |what: &str| -> Result<usize> {
            let tok = header_token(bytes, &mut pos)?;
            tok.parse()
                .map_err(|_| ScanError::format("pgm", format!("{what} {tok:?}")))
        };
        let width = number("width")?;
        let height = number("height")?;
        let maxval = number("maxval")?;
        if maxval != 255 {
            return Err(ScanError::format("pgm", format!("maxval {maxval}, only 255 is supported")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        let start = pos + 1;
        let end = start + width * height;
        if bytes.len() < end {
            return Err(ScanError::format("pgm", "truncated raster"));
        }
        Self::new(width, height, bytes[start..end].to_vec())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Next whitespace-delimited header token, skipping `#` comments.
fn header_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(ScanError::format("pgm", "truncated header"));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn save_image(img: &RawImage, path: &Path) -> Result<()> {
    Greymap::from_image(img).save(path)
}

pub fn load_image(path: &Path) -> Result<RawImage> {
    Greymap::load(path)?.to_image()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_comment() {
        let g = Greymap::new(3, 2, vec![0, 10, 20, 30, 40, 255]).unwrap();
        assert_eq!(Greymap::decode(&g.encode()).unwrap(), g);
        let mut commented = b"P5\n# made by hand\n3 2\n255\n".to_vec();
        commented.extend_from_slice(&g.data);
        assert_eq!(Greymap::decode(&commented).unwrap(), g);
    }

    #[test]
    fn rejects_malformed() {
        assert!(Greymap::decode(b"P2\n1 1\n255\n\x00").is_err());
        assert!(Greymap::decode(b"P5\n2 2\n255\n\x00").is_err());
        assert!(Greymap::decode(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(Greymap::decode(b"P5\n1").is_err());
    }

    #[test]
    fn quantization_bound() {
        let px: Vec<f32> = (0..64).map(|i| i as f32 / 63.0).collect();
        let img = RawImage::new(8, 8, px).unwrap();
        let back = Greymap::from_image(&img).to_image().unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
