use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{Mask, RgbImage};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    #[default]
    Bilinear,
    Nearest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub flip_p: f64,
    pub rotate_p: f64,
    pub max_rotation_deg: f64,
    pub scale_p: f64,
    /// Scaling factor drawn from `1 ± scale_delta`.
    pub scale_delta: f64,
    pub crop_p: f64,
    /// Smallest retained fraction of the image area.
    pub min_crop_ratio: f64,
    pub image_interp: Interp,
    /// Probabilities of dilation/erosion, boundary blur, bounding box, unchanged.
    pub mask_branch_p: [f64; 4],
    pub max_morph_radius: usize,
    pub blur_sigma: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            flip_p: 0.5,
            rotate_p: 0.5,
            max_rotation_deg: 30.0,
            scale_p: 0.3,
            scale_delta: 0.2,
            crop_p: 1.0,
            min_crop_ratio: 0.75,
            image_interp: Interp::Bilinear,
            mask_branch_p: [0.25; 4],
            max_morph_radius: 3,
            blur_sigma: 1.5,
        }
    }
}

impl AugmentationConfig {
    /// Every transform disabled.
    pub fn off() -> Self {
        Self {
            flip_p: 0.0,
            rotate_p: 0.0,
            scale_p: 0.0,
            crop_p: 0.0,
            mask_branch_p: [0.0, 0.0, 0.0, 1.0],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ps = [self.flip_p, self.rotate_p, self.scale_p, self.crop_p];
        if ps.iter().chain(&self.mask_branch_p).any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("augmentation probabilities must lie in [0, 1]".into()));
        }
        if (self.mask_branch_p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("mask branch probabilities must sum to 1".into()));
        }
        if !(0.0 < self.min_crop_ratio && self.min_crop_ratio <= 1.0) {
            return Err(Error::Config("min_crop_ratio must lie in (0, 1]".into()));
        }
        if self.max_morph_radius == 0 {
            return Err(Error::Config("max_morph_radius must be positive".into()));
        }
        Ok(())
    }
}

/// Which image transforms fired, with their drawn parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentRecord {
    pub flipped: bool,
    pub rotation_deg: Option<f64>,
    pub scale: Option<f64>,
    /// `(area ratio, x0, y0)` of the retained window.
    pub crop: Option<(f64, f64, f64)>,
}

/// Target → source coordinate map.
type InverseMap<'a> = &'a dyn Fn(f64, f64) -> (f64, f64);

fn resample_image(img: &RgbImage, map: InverseMap, interp: Interp) -> RgbImage {
    let (w, h) = (img.width, img.height);
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = map(x as f64, y as f64);
            let px = match interp {
                Interp::Nearest => {
                    let (ui, vi) = (u.round(), v.round());
                    if ui < 0.0 || vi < 0.0 || ui >= w as f64 || vi >= h as f64 {
                        [0; 3]
                    } else {
                        img.get(ui as usize, vi as usize)
                    }
                }
                Interp::Bilinear => {
                    let (x0, y0) = (u.floor(), v.floor());
                    let (fx, fy) = (u - x0, v - y0);
                    let mut acc = [0.0f64; 3];
                    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                            let (sx, sy) = (x0 + dx, y0 + dy);
                            if wx * wy == 0.0 || sx < 0.0 || sy < 0.0 || sx >= w as f64 || sy >= h as f64 {
                                continue;
                            }
                            let p = img.get(sx as usize, sy as usize);
                            for c in 0..3 {
                                acc[c] += wx * wy * p[c] as f64;
                            }
                        }
                    }
                    acc.map(|v| v.round().clamp(0.0, 255.0) as u8)
                }
            };
            out.set(x, y, px);
        }
    }
    out
}

fn resample_mask(mask: &Mask, map: InverseMap) -> Mask {
    let (w, h) = (mask.width, mask.height);
    Mask::from_fn(w, h, |x, y| {
        let (u, v) = map(x as f64, y as f64);
        let (ui, vi) = (u.round(), v.round());
        ui >= 0.0 && vi >= 0.0 && ui < w as f64 && vi < h as f64 && mask.get(ui as usize, vi as usize)
    })
}

/// Flip, rotation, scaling and cropping, each an independent draw, applied in
/// that order. The mask follows the image geometry with nearest-neighbour sampling.
pub fn augment_image(
    img: &RgbImage,
    mask: &Mask,
    cfg: &AugmentationConfig,
    seed: u64,
) -> Result<(RgbImage, Mask, AugmentRecord)> {
    cfg.validate()?;
    if (img.width, img.height) != (mask.width, mask.height) {
        return Err(Error::shape(
            "augment_image",
            format!(
                "image {}×{} vs mask {}×{}",
                img.width, img.height, mask.width, mask.height
            ),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (img.width as f64, img.height as f64);
    let (cx, cy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
    let mut rec = AugmentRecord::default();
    let (mut img, mut mask) = (img.clone(), mask.clone());

    // all four draws happen up front so each rate is independent of the others
    let flip = rng.gen_bool(cfg.flip_p);
    let rotate = rng.gen_bool(cfg.rotate_p);
    let scale = rng.gen_bool(cfg.scale_p);
    let crop = rng.gen_bool(cfg.crop_p);

    if flip {
        rec.flipped = true;
        let map = |x: f64, y: f64| (w - 1.0 - x, y);
        img = resample_image(&img, &map, Interp::Nearest);
        mask = resample_mask(&mask, &map);
    }
    if rotate {
        let deg = rng.gen_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg);
        rec.rotation_deg = Some(deg);
        let (s, c) = deg.to_radians().sin_cos();
        let map = move |x: f64, y: f64| {
            let (dx, dy) = (x - cx, y - cy);
            (c * dx + s * dy + cx, -s * dx + c * dy + cy)
        };
        img = resample_image(&img, &map, cfg.image_interp);
        mask = resample_mask(&mask, &map);
    }
    if scale {
        let f = rng.gen_range(1.0 - cfg.scale_delta..=1.0 + cfg.scale_delta);
        rec.scale = Some(f);
        let map = move |x: f64, y: f64| ((x - cx) / f + cx, (y - cy) / f + cy);
        img = resample_image(&img, &map, cfg.image_interp);
        mask = resample_mask(&mask, &map);
    }
    if crop {
        let ratio = rng.gen_range(cfg.min_crop_ratio..=1.0);
        let side = ratio.sqrt();
        let (cw, ch) = (w * side, h * side);
        let x0 = rng.gen_range(0.0..=w - cw);
        let y0 = rng.gen_range(0.0..=h - ch);
        rec.crop = Some((ratio, x0, y0));
        // window [x0, x0+cw) stretched back over the full frame
        let map = move |x: f64, y: f64| (x0 + (x + 0.5) * side - 0.5, y0 + (y + 0.5) * side - 0.5);
        img = resample_image(&img, &map, cfg.image_interp);
        mask = resample_mask(&mask, &map);
    }
    Ok((img, mask, rec))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskBranch {
    Dilate(usize),
    Erode(usize),
    Blur,
    BoundingBox,
    Identity,
}

impl MaskBranch {
    /// Index of the configured branch group (0 morph, 1 blur, 2 bbox, 3 identity).
    pub fn group(self) -> usize {
        match self {
            MaskBranch::Dilate(_) | MaskBranch::Erode(_) => 0,
            MaskBranch::Blur => 1,
            MaskBranch::BoundingBox => 2,
            MaskBranch::Identity => 3,
        }
    }
}

fn disk(r: usize) -> Vec<(isize, isize)> {
    let r = r as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Binary dilation with a Euclidean disk; pixels outside the frame count as background.
pub fn dilate(mask: &Mask, r: usize) -> Mask {
    let k = disk(r);
    let (w, h) = (mask.width as isize, mask.height as isize);
    Mask::from_fn(mask.width, mask.height, |x, y| {
        k.iter().any(|&(dx, dy)| {
            let (sx, sy) = (x as isize + dx, y as isize + dy);
            sx >= 0 && sy >= 0 && sx < w && sy < h && mask.get(sx as usize, sy as usize)
        })
    })
}

pub fn erode(mask: &Mask, r: usize) -> Mask {
    dilate(&mask.complement(), r).complement()
}

/// Separable Gaussian blur of the 0/1 mask (edge-clamped), re-thresholded at 0.5.
pub fn blur_threshold(mask: &Mask, sigma: f64) -> Mask {
    let rad = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-rad..=rad)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = weights.iter().sum();
    let (w, h) = (mask.width as isize, mask.height as isize);
    let src: Vec<f64> = mask.data.iter().map(|&v| v as f64).collect();
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wt) in weights.iter().enumerate() {
                let sx = (x + k as isize - rad).clamp(0, w - 1);
                acc += wt * src[(y * w + sx) as usize];
            }
            tmp[(y * w + x) as usize] = acc / norm;
        }
    }
    Mask::from_fn(mask.width, mask.height, |x, y| {
        let mut acc = 0.0;
        for (k, wt) in weights.iter().enumerate() {
            let sy = (y as isize + k as isize - rad).clamp(0, h - 1);
            acc += wt * tmp[(sy * w + x as isize) as usize];
        }
        acc / norm >= 0.5
    })
}

pub fn bounding_box(mask: &Mask) -> Mask {
    match mask.bbox() {
        None => mask.clone(),
        Some((x0, y0, x1, y1)) => {
            Mask::from_fn(mask.width, mask.height, |x, y| x >= x0 && x <= x1 && y >= y0 && y <= y1)
        }
    }
}

/// One of four perturbations chosen by `cfg.mask_branch_p`. An empty mask
/// always takes the identity branch.
pub fn augment_mask(mask: &Mask, cfg: &AugmentationConfig, seed: u64) -> Result<(Mask, MaskBranch)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: f64 = rng.gen();
    let p = cfg.mask_branch_p;
    let group = if u < p[0] {
        0
    } else if u < p[0] + p[1] {
        1
    } else if u < p[0] + p[1] + p[2] {
        2
    } else {
        3
    };
    if mask.is_empty() {
        return Ok((mask.clone(), MaskBranch::Identity));
    }
    Ok(match group {
        0 => {
            let r = rng.gen_range(1..=cfg.max_morph_radius);
            if rng.gen_bool(0.5) {
                (dilate(mask, r), MaskBranch::Dilate(r))
            } else {
                (erode(mask, r), MaskBranch::Erode(r))
            }
        }
        1 => (blur_threshold(mask, cfg.blur_sigma), MaskBranch::Blur),
        2 => (bounding_box(mask), MaskBranch::BoundingBox),
        _ => (mask.clone(), MaskBranch::Identity),
    })
}
