//! 8-bit raster types and binary PNM (P5/P6) files.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Element, Tensor};

/// Interleaved 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

/// Binary mask, one byte per pixel holding 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

/// 8-bit single-channel raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

/// `k ↦ 2k/255 − 1`.
pub fn to_unit(k: u8) -> f64 {
    2.0 * k as f64 / 255.0 - 1.0
}

/// Inverse of [`to_unit`], clamped and rounded.
pub fn from_unit(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: rgb.iter().copied().cycle().take(width * height * 3).collect(),
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Pixels where `mask` is 0 become black.
    pub fn masked(&self, mask: &Mask) -> RgbImage {
        let mut out = self.clone();
        for (p, &m) in out.data.chunks_exact_mut(3).zip(&mask.data) {
            if m == 0 {
                p.fill(0);
            }
        }
        out
    }

    /// Channel-first `3×H×W` tensor in `[-1, 1]`.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let (w, h) = (self.width, self.height);
        Tensor::from_fn(&[3, h, w], |i| {
            let c = i / (h * w);
            let p = i % (h * w);
            T::from_f64(to_unit(self.data[p * 3 + c]))
        })
    }

    pub fn from_tensor<T: Element>(t: &Tensor<T>) -> Result<Self> {
        let &[3, h, w] = t.shape() else {
            return Err(Error::shape(
                "rgb image",
                format!("expected 3×H×W, got {:?}", t.shape()),
            ));
        };
        let mut img = RgbImage::new(w, h);
        for c in 0..3 {
            for p in 0..h * w {
                img.data[p * 3 + c] = from_unit(t.data()[c * h * w + p].to_f64());
            }
        }
        Ok(img)
    }

    /// BT.601 luma rounded to 8 bits.
    pub fn luma(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self
                .data
                .chunks_exact(3)
                .map(|p| {
                    (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
                        .round()
                        .clamp(0.0, 255.0) as u8
                })
                .collect(),
        }
    }
}

impl Mask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![1; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(x, y) as u8;
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn complement(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| (v == 0) as u8).collect(),
        }
    }

    /// `(x0, y0, x1, y1)` inclusive bounds of the foreground.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    b = Some(match b {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        b
    }

    /// `1×H×W` tensor of 0/1.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        Tensor::from_fn(&[1, self.height, self.width], |i| {
            if self.data[i] != 0 {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect(),
        }
    }

    /// Foreground where the gray value is at least 128.
    pub fn from_gray(g: &GrayImage) -> Mask {
        Mask {
            width: g.width,
            height: g.height,
            data: g.data.iter().map(|&v| (v >= 128) as u8).collect(),
        }
    }
}

fn read_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Parses a binary PNM; returns `(magic, width, height, pixels)`.
fn parse_pnm(bytes: &[u8], path: &Path) -> Result<(String, usize, usize, Vec<u8>)> {
    let bad = |d: &str| Error::format(path, d.to_string());
    let mut pos = 0;
    let magic = read_token(bytes, &mut pos).ok_or_else(|| bad("missing magic"))?;
    let mut num = |what: &str| -> Result<usize> {
        read_token(bytes, &mut pos)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(&format!("bad {what}")))
    };
    let w = num("width")?;
    let h = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    pos += 1;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(bad("expected P5 or P6")),
    };
    let n = w * h * channels;
    if bytes.len() < pos + n {
        return Err(bad("truncated pixel data"));
    }
    Ok((magic, w, h, bytes[pos..pos + n].to_vec()))
}

fn write_pnm(path: &Path, magic: &str, w: usize, h: usize, data: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() + 20);
    write!(buf, "{magic}\n{w} {h}\n255\n").expect("write to vec");
    buf.extend_from_slice(data);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    write_pnm(path, "P6", img.width, img.height, &img.data)
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    write_pnm(path, "P5", img.width, img.height, &img.data)
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (magic, width, height, data) = parse_pnm(&bytes, path)?;
    if magic != "P6" {
        return Err(Error::format(path, format!("expected P6, found {magic}")));
    }
    Ok(RgbImage { width, height, data })
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (magic, width, height, data) = parse_pnm(&bytes, path)?;
    if magic != "P5" {
        return Err(Error::format(path, format!("expected P5, found {magic}")));
    }
    Ok(GrayImage { width, height, data })
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    write_pgm(path, &mask.to_gray())
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    Ok(Mask::from_gray(&read_pgm(path)?))
}
