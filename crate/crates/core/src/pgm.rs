//! Grayscale PGM images (ASCII `P2` written, `P2`/`P5` read).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// A grayscale image with pixel values on the `[0, maxval]` scale of the
/// source file, rescaled to `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Pgm(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    /// The top-left `side × side` crop.
    pub fn crop(&self, side: usize) -> Result<Self> {
        if side > self.width || side > self.height {
            return Err(Error::Pgm(format!(
                "cannot crop {side}x{side} from {}x{}",
                self.width, self.height
            )));
        }
        let pixels = (0..side)
            .flat_map(|r| self.pixels[r * self.width..r * self.width + side].iter().copied())
            .collect();
        Ok(Self { width: side, height: side, pixels })
    }
}

fn tokens(bytes: &[u8]) -> (Vec<String>, usize) {
    // Header tokens up to and including maxval, skipping comments; returns
    // the byte offset just past the single whitespace after maxval.
    let mut out = Vec::new();
    let mut i = 0;
    while out.len() < 4 && i < bytes.len() {
        let c = bytes[i];
        if c == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
        } else if c.is_ascii_whitespace() {
            i += 1;
        } else {
            let start = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            out.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
        }
    }
    (out, (i + 1).min(bytes.len()))
}

pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let (head, body) = tokens(bytes);
    if head.len() < 4 {
        return Err(Error::Pgm("truncated header".into()));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Pgm(format!("bad header field '{s}'")));
    let (width, height, maxval) = (num(&head[1])?, num(&head[2])?, num(&head[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Pgm(format!("bad maxval {maxval}")));
    }
    let count = width * height;
    let raw: Vec<f64> = match head[0].as_str() {
        "P2" => {
            let text = String::from_utf8_lossy(&bytes[body.min(bytes.len())..]);
            let vals: Vec<f64> = text
                .lines()
                .map(|l| l.split('#').next().unwrap_or(""))
                .flat_map(|l| l.split_whitespace())
                .map(|t| t.parse::<f64>().map_err(|_| Error::Pgm(format!("bad pixel '{t}'"))))
                .collect::<Result<_>>()?;
            vals
        }
        "P5" => {
            let data = &bytes[body..];
            if maxval < 256 {
                data.iter().map(|&b| b as f64).collect()
            } else {
                data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64).collect()
            }
        }
        other => return Err(Error::Pgm(format!("unsupported magic '{other}'"))),
    };
    if raw.len() < count {
        return Err(Error::Pgm(format!("expected {count} pixels, found {}", raw.len())));
    }
    let scale = 255.0 / maxval as f64;
    GrayImage::new(width, height, raw[..count].iter().map(|v| v * scale).collect())
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::Pgm(format!("{}: {e}", path.display())))?;
    parse_pgm(&bytes)
}

/// ASCII PGM text, pixels rounded and clamped to `[0, 255]`.
pub fn format_pgm(img: &GrayImage) -> String {
    let mut s = format!("P2\n{} {}\n255\n", img.width, img.height);
    for row in img.pixels.chunks(img.width.max(1)) {
        let line: Vec<String> = row
            .iter()
            .map(|v| {
                let p = if v.is_finite() { v.round().clamp(0.0, 255.0) } else { 0.0 };
                format!("{}", p as u8)
            })
            .collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(format_pgm(img).as_bytes())?;
    Ok(())
}

/// A deterministic smooth test image of the given side: a few periodic
/// low-frequency waves and one soft blob, in `[0, 255]`.
pub fn synthetic_test_image(side: usize) -> GrayImage {
    let tau = 2.0 * std::f64::consts::PI;
    let n = side as f64;
    let pixels = (0..side * side)
        .map(|p| {
            let (r, c) = ((p / side) as f64 / n, (p % side) as f64 / n);
            let waves = 50.0 * (tau * r).cos() + 35.0 * (tau * 2.0 * c + 0.5).sin() + 20.0 * (tau * (r + c)).cos();
            // periodic distance to the blob center keeps the image smooth
            // across the wrap-around boundary
            let dr = (r - 0.35).abs().min(1.0 - (r - 0.35).abs());
            let dc = (c - 0.6).abs().min(1.0 - (c - 0.6).abs());
            let blob = 60.0 * (-(dr * dr + dc * dc) / (2.0 * 0.12 * 0.12)).exp();
            (120.0 + waves + blob).clamp(0.0, 255.0)
        })
        .collect();
    GrayImage { width: side, height: side, pixels }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_round_trip() {
        let img = GrayImage::new(3, 2, vec![0.0, 12.0, 255.0, 7.0, 100.0, 50.0]).unwrap();
        let back = parse_pgm(format_pgm(&img).as_bytes()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn comments_and_binary() {
        let text = b"P2\n# comment\n2 1\n# another\n15\n15 0\n";
        let img = parse_pgm(text).unwrap();
        assert_eq!(img.pixels, vec![255.0, 0.0]);
        let mut bin = b"P5\n2 2\n255\n".to_vec();
        bin.extend_from_slice(&[1, 2, 3, 4]);
        assert_eq!(parse_pgm(&bin).unwrap().pixels, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_pgm(b"P3\n1 1\n255\n0\n").is_err());
        assert!(parse_pgm(b"P2\n2 2\n255\n1 2\n").is_err());
        assert!(parse_pgm(b"P2\n2").is_err());
    }

    #[test]
    fn crop_top_left() {
        let img = GrayImage::new(3, 3, (0..9).map(|v| v as f64).collect()).unwrap();
        assert_eq!(img.crop(2).unwrap().pixels, vec![0.0, 1.0, 3.0, 4.0]);
        assert!(img.crop(4).is_err());
    }
}
