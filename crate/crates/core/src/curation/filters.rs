use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{GrayImage, Mask, RgbImage};

/// Frames whose Sobel-magnitude variance falls below this are discarded as blurred.
pub const SOBEL_THRESHOLD: f64 = 1600.0;
/// Frames whose Laplacian variance falls below this are discarded as blurred.
pub const LAPLACIAN_THRESHOLD: f64 = 800.0;
/// Masks are kept only when the largest component exceeds this share of the foreground.
pub const MASK_CC_THRESHOLD: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sharpness {
    pub sobel_var: f64,
    pub laplacian_var: f64,
}

fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Population variances of the 3×3 Sobel gradient magnitude and of the
/// 4-neighbour Laplacian, over interior pixels of the 8-bit luma.
pub fn sharpness_scores_gray(g: &GrayImage) -> Result<Sharpness> {
    let (w, h) = (g.width, g.height);
    if w < 3 || h < 3 {
        return Err(Error::shape("sharpness_scores", format!("{w}×{h} is smaller than 3×3")));
    }
    let p = |x: usize, y: usize| g.data[y * w + x] as f64;
    let mut sobel = Vec::with_capacity((w - 2) * (h - 2));
    let mut lap = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (p(x + 1, y - 1) + 2.0 * p(x + 1, y) + p(x + 1, y + 1))
                - (p(x - 1, y - 1) + 2.0 * p(x - 1, y) + p(x - 1, y + 1));
            let gy = (p(x - 1, y + 1) + 2.0 * p(x, y + 1) + p(x + 1, y + 1))
                - (p(x - 1, y - 1) + 2.0 * p(x, y - 1) + p(x + 1, y - 1));
            sobel.push((gx * gx + gy * gy).sqrt());
            lap.push(p(x - 1, y) + p(x + 1, y) + p(x, y - 1) + p(x, y + 1) - 4.0 * p(x, y));
        }
    }
    Ok(Sharpness {
        sobel_var: variance(&sobel),
        laplacian_var: variance(&lap),
    })
}

pub fn sharpness_scores(img: &RgbImage) -> Result<Sharpness> {
    sharpness_scores_gray(&img.luma())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub sobel_threshold: f64,
    pub laplacian_threshold: f64,
    pub mask_threshold: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            sobel_threshold: SOBEL_THRESHOLD,
            laplacian_threshold: LAPLACIAN_THRESHOLD,
            mask_threshold: MASK_CC_THRESHOLD,
        }
    }
}

/// `true` keeps the frame. A score strictly below either threshold discards it.
pub fn blur_filter(s: &Sharpness, cfg: &FilterConfig) -> bool {
    !(s.sobel_var < cfg.sobel_threshold || s.laplacian_var < cfg.laplacian_threshold)
}

/// Pixel counts of the 8-connected foreground components, largest first.
pub fn component_sizes(mask: &Mask) -> Vec<usize> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || mask.data[start] == 0 {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut n = 0;
        while let Some(i) = stack.pop() {
            n += 1;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] && mask.data[j] != 0 {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        sizes.push(n);
    }
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes
}

pub fn largest_cc_ratio(mask: &Mask) -> Result<f64> {
    let sizes = component_sizes(mask);
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::Empty("mask foreground"));
    }
    Ok(sizes[0] as f64 / total as f64)
}

/// `true` keeps the mask: the largest component must strictly exceed the threshold.
pub fn mask_filter(ratio: f64, cfg: &FilterConfig) -> bool {
    ratio > cfg.mask_threshold
}
