use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::imageio::RgbImage;

/// `10·log10(peak² / MSE)`; identical inputs give `+∞`.
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("psnr", format!("{} vs {} values", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Empty("psnr input"));
    }
    if peak.is_nan() || peak <= 0.0 {
        return Err(Error::range("psnr peak", format!("{peak}")));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn rgb_values(img: &RgbImage) -> Vec<f64> {
    img.data.iter().map(|&v| v as f64).collect()
}

pub fn psnr_rgb(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_size(a, b, "psnr")?;
    psnr(&rgb_values(a), &rgb_values(b), 255.0)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ssim {
    pub value: f64,
    /// Set when the image was smaller than the window and global statistics were used.
    pub global_fallback: bool,
}

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn ssim_term(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> f64 {
    ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2)) / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
}

/// Valid-window filtering with separable taps: rows then columns.
fn filter_valid(x: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = taps.iter().enumerate().map(|(i, t)| t * x[y * w + ox + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = taps.iter().enumerate().map(|(i, t)| t * rows[(oy + i) * ow + ox]).sum();
        }
    }
    out
}

/// Single-plane SSIM on 0–255 values, averaged over all valid 11×11 windows.
pub fn ssim_plane(a: &[f64], b: &[f64], width: usize, height: usize) -> Result<Ssim> {
    if a.len() != width * height || b.len() != width * height {
        return Err(Error::shape(
            "ssim",
            format!("{} and {} values for a {width}×{height} plane", a.len(), b.len()),
        ));
    }
    if a.is_empty() {
        return Err(Error::Empty("ssim input"));
    }
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        let n = a.len() as f64;
        let (mx, my) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            vx += (x - mx) * (x - mx);
            vy += (y - my) * (y - my);
            cxy += (x - mx) * (y - my);
        }
        return Ok(Ssim {
            value: ssim_term(mx, my, vx / n, vy / n, cxy / n),
            global_fallback: true,
        });
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mx = filter_valid(a, width, height, &taps);
    let my = filter_valid(b, width, height, &taps);
    let sxx = filter_valid(&prod(|x, _| x * x), width, height, &taps);
    let syy = filter_valid(&prod(|_, y| y * y), width, height, &taps);
    let sxy = filter_valid(&prod(|x, y| x * y), width, height, &taps);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            ssim_term(ux, uy, sxx[i] - ux * ux, syy[i] - uy * uy, sxy[i] - ux * uy)
        })
        .sum();
    Ok(Ssim {
        value: total / mx.len() as f64,
        global_fallback: false,
    })
}

/// Mean of the per-channel SSIM values.
pub fn ssim_rgb(a: &RgbImage, b: &RgbImage) -> Result<Ssim> {
    same_size(a, b, "ssim")?;
    let (w, h) = (a.width, a.height);
    let plane =
        |img: &RgbImage, c: usize| -> Vec<f64> { img.data.iter().skip(c).step_by(3).map(|&v| v as f64).collect() };
    let mut sum = 0.0;
    let mut fallback = false;
    for c in 0..3 {
        let s = ssim_plane(&plane(a, c), &plane(b, c), w, h)?;
        sum += s.value;
        fallback |= s.global_fallback;
    }
    Ok(Ssim {
        value: sum / 3.0,
        global_fallback: fallback,
    })
}

fn same_size(a: &RgbImage, b: &RgbImage, op: &'static str) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::shape(
            op,
            format!("{}×{} vs {}×{}", a.width, a.height, b.width, b.height),
        ));
    }
    Ok(())
}

/// Serialises non-finite floats as the strings `"inf"`, `"-inf"` or `"nan"`.
pub fn serialize_float<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&format_float(*v))
    }
}

/// Text form used in CSV and JSON output.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_offset_psnr() {
        let a = vec![10.0; 64];
        let b = vec![11.0; 64];
        let db = psnr(&a, &b, 255.0).unwrap();
        assert!((db - 48.1308).abs() < 5e-5, "{db}");
        assert!((db - 20.0 * 255f64.log10()).abs() < 1e-12);
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), f64::INFINITY);
        assert_eq!(format_float(f64::INFINITY), "inf");
    }

    #[test]
    fn constant_planes_follow_the_closed_form() {
        let (c1, c2) = (40.0, 90.0);
        for size in [5, 16] {
            let s = ssim_plane(&vec![c1; size * size], &vec![c2; size * size], size, size).unwrap();
            let want = (2.0 * c1 * c2 + SSIM_C1) / (c1 * c1 + c2 * c2 + SSIM_C1);
            assert!((s.value - want).abs() < 1e-12);
            assert_eq!(s.global_fallback, size < SSIM_WINDOW);
        }
    }
}
