use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{CompositionSample, Pose};
use crate::error::{Error, Result};
use crate::imageio::{Mask, RgbImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundFamily {
    Gradient,
    Stripes,
    Blobs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectFamily {
    Polygon,
    Ring,
    Cross,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub size: usize,
    pub backgrounds: Vec<BackgroundFamily>,
    pub objects: Vec<ObjectFamily>,
    pub max_rotation_deg: f64,
    pub scale_range: (f64, f64),
    /// Pasted-object area bounds as fractions of the frame.
    pub area_range: (f64, f64),
    pub max_retries: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            size: 32,
            backgrounds: vec![
                BackgroundFamily::Gradient,
                BackgroundFamily::Stripes,
                BackgroundFamily::Blobs,
            ],
            objects: vec![ObjectFamily::Polygon, ObjectFamily::Ring, ObjectFamily::Cross],
            max_rotation_deg: 45.0,
            scale_range: (0.6, 1.4),
            area_range: (0.04, 0.40),
            max_retries: 200,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(Error::Config(format!("scene size {} below 8", self.size)));
        }
        if self.backgrounds.is_empty() || self.objects.is_empty() {
            return Err(Error::Config("scene families must be non-empty".into()));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!("bad scale range {lo}..{hi}")));
        }
        let (a, b) = self.area_range;
        if !(0.0 <= a && a <= b && b <= 1.0) {
            return Err(Error::Config(format!("bad area range {a}..{b}")));
        }
        Ok(())
    }
}

/// Background colours keep every channel in this band; object colours always
/// have a channel outside it, so the two palettes never collide.
const BG_BAND: (u8, u8) = (48, 160);

fn bg_color<R: Rng>(rng: &mut R) -> [u8; 3] {
    [0; 3].map(|_| rng.gen_range(BG_BAND.0..=BG_BAND.1))
}

fn object_color<R: Rng>(rng: &mut R) -> [u8; 3] {
    let mut c = [0u8; 3];
    let hi = rng.gen_range(0..3);
    let lo = (hi + rng.gen_range(1..3)) % 3;
    for (i, v) in c.iter_mut().enumerate() {
        *v = if i == hi {
            rng.gen_range(210..=255)
        } else if i == lo {
            rng.gen_range(0..=30)
        } else {
            rng.gen_range(0..=255)
        };
    }
    c
}

fn lerp(a: [u8; 3], b: [u8; 3], t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    [0, 1, 2].map(|i| (a[i] as f64 + (b[i] as f64 - a[i] as f64) * t).round() as u8)
}

pub fn render_background<R: Rng>(family: BackgroundFamily, size: usize, rng: &mut R) -> RgbImage {
    let (c0, c1) = (bg_color(rng), bg_color(rng));
    let mut img = RgbImage::new(size, size);
    let n = size as f64;
    match family {
        BackgroundFamily::Gradient => {
            let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (dx, dy) = (th.cos(), th.sin());
            for y in 0..size {
                for x in 0..size {
                    let p = ((x as f64 - n / 2.0) * dx + (y as f64 - n / 2.0) * dy) / n + 0.5;
                    img.set(x, y, lerp(c0, c1, p));
                }
            }
        }
        BackgroundFamily::Stripes => {
            let th: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let period = rng.gen_range(3.0..8.0);
            let (dx, dy) = (th.cos(), th.sin());
            for y in 0..size {
                for x in 0..size {
                    let p = (x as f64 * dx + y as f64 * dy) / period;
                    img.set(x, y, if p.rem_euclid(1.0) < 0.5 { c0 } else { c1 });
                }
            }
        }
        BackgroundFamily::Blobs => {
            let blobs: Vec<(f64, f64, f64)> = (0..rng.gen_range(3..7))
                .map(|_| {
                    (
                        rng.gen_range(0.0..n),
                        rng.gen_range(0.0..n),
                        rng.gen_range(n / 10.0..n / 4.0),
                    )
                })
                .collect();
            for y in 0..size {
                for x in 0..size {
                    let v: f64 = blobs
                        .iter()
                        .map(|&(bx, by, r)| {
                            let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                            (-d2 / (2.0 * r * r)).exp()
                        })
                        .sum();
                    img.set(x, y, lerp(c0, c1, v));
                }
            }
        }
    }
    img
}

#[derive(Clone, Copy, Debug)]
enum Fill {
    Solid([u8; 3]),
    Stripes([u8; 3], [u8; 3], f64),
    Checker([u8; 3], [u8; 3], usize),
}

impl Fill {
    fn random<R: Rng>(rng: &mut R) -> Self {
        let (a, b) = (object_color(rng), object_color(rng));
        match rng.gen_range(0..3) {
            0 => Fill::Solid(a),
            1 => Fill::Stripes(a, b, rng.gen_range(2.0..5.0)),
            _ => Fill::Checker(a, b, rng.gen_range(2..5)),
        }
    }

    fn at(&self, x: usize, y: usize) -> [u8; 3] {
        match *self {
            Fill::Solid(c) => c,
            Fill::Stripes(a, b, p) => {
                if ((x + y) as f64 / p).rem_euclid(2.0) < 1.0 {
                    a
                } else {
                    b
                }
            }
            Fill::Checker(a, b, k) => {
                if (x / k + y / k).is_multiple_of(2) {
                    a
                } else {
                    b
                }
            }
        }
    }
}

/// Object support in a `size×size` frame centred at the frame centre.
fn render_shape<R: Rng>(family: ObjectFamily, size: usize, rng: &mut R) -> Mask {
    let n = size as f64;
    let c = (n - 1.0) / 2.0;
    match family {
        ObjectFamily::Polygon => {
            let k = rng.gen_range(3..=8);
            let r = rng.gen_range(0.18..0.3) * n;
            let step = std::f64::consts::TAU / k as f64;
            let phase = rng.gen_range(0.0..step);
            let angles: Vec<f64> = (0..k)
                .map(|i| phase + step * (i as f64 + rng.gen_range(-0.3..0.3)))
                .collect();
            let pts: Vec<(f64, f64)> = angles.iter().map(|a| (c + r * a.cos(), c + r * a.sin())).collect();
            // vertices on a circle in angular order form a convex polygon
            Mask::from_fn(size, size, |x, y| {
                let (px, py) = (x as f64, y as f64);
                (0..k).all(|i| {
                    let (ax, ay) = pts[i];
                    let (bx, by) = pts[(i + 1) % k];
                    (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0.0
                })
            })
        }
        ObjectFamily::Ring => {
            let ro = rng.gen_range(0.2..0.32) * n;
            let ri = ro * rng.gen_range(0.35..0.65);
            Mask::from_fn(size, size, |x, y| {
                let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
                d <= ro && d >= ri
            })
        }
        ObjectFamily::Cross => {
            let arm = rng.gen_range(0.2..0.32) * n;
            let half = rng.gen_range(0.05..0.1) * n;
            Mask::from_fn(size, size, |x, y| {
                let (dx, dy) = ((x as f64 - c).abs(), (y as f64 - c).abs());
                (dx <= arm && dy <= half) || (dy <= arm && dx <= half)
            })
        }
    }
}

/// `R(M_ref ⊙ I_ref)` and `R(M_ref)` by inverse-mapped nearest neighbour.
pub fn warp(reference: &RgbImage, mask_ref: &Mask, pose: &Pose, width: usize, height: usize) -> (RgbImage, Mask) {
    let mut img = RgbImage::new(width, height);
    let mut mask = Mask::zeros(width, height);
    for y in 0..height {
        for x in 0..width {
            let (u, v) = pose.invert(x as f64, y as f64);
            let (ui, vi) = (u.round(), v.round());
            if ui < 0.0 || vi < 0.0 || ui >= reference.width as f64 || vi >= reference.height as f64 {
                continue;
            }
            let (ui, vi) = (ui as usize, vi as usize);
            if mask_ref.get(ui, vi) {
                mask.set(x, y, true);
                img.set(x, y, reference.get(ui, vi));
            }
        }
    }
    (img, mask)
}

/// `M_bg ⊙ I_bg + R(M_ref ⊙ I_ref)` in 8-bit arithmetic.
pub fn recompose(s: &CompositionSample) -> RgbImage {
    let (pasted, _) = warp(&s.masked_ref(), &s.mask_ref, &s.pose, s.gt.width, s.gt.height);
    let kept = s.bg.masked(&s.mask_bg);
    let mut out = kept.clone();
    for (o, p) in out.data.iter_mut().zip(&pasted.data) {
        *o = o.saturating_add(*p);
    }
    out
}

fn pick<T: Copy, R: Rng>(xs: &[T], rng: &mut R) -> T {
    xs[rng.gen_range(0..xs.len())]
}

/// Pure function of `(cfg, seed)`.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<CompositionSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = cfg.size;
    let n = size as f64;
    let bg = render_background(pick(&cfg.backgrounds, &mut rng), size, &mut rng);
    let ref_bg = render_background(pick(&cfg.backgrounds, &mut rng), size, &mut rng);
    let family = pick(&cfg.objects, &mut rng);
    let fill = Fill::random(&mut rng);
    let mask_ref = render_shape(family, size, &mut rng);
    let mut reference = ref_bg;
    for y in 0..size {
        for x in 0..size {
            if mask_ref.get(x, y) {
                reference.set(x, y, fill.at(x, y));
            }
        }
    }
    let center = ((n - 1.0) / 2.0, (n - 1.0) / 2.0);
    let support: Vec<(usize, usize)> = (0..size)
        .flat_map(|y| (0..size).map(move |x| (x, y)))
        .filter(|&(x, y)| mask_ref.get(x, y))
        .collect();

    for _ in 0..cfg.max_retries {
        let pose = Pose {
            angle_deg: rng.gen_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg),
            scale: rng.gen_range(cfg.scale_range.0..=cfg.scale_range.1),
            tx: rng.gen_range(-n / 3.0..=n / 3.0),
            ty: rng.gen_range(-n / 3.0..=n / 3.0),
            center,
        };
        let inside = support.iter().all(|&(x, y)| {
            let (u, v) = pose.apply(x as f64, y as f64);
            u >= -0.5 && v >= -0.5 && u <= n - 0.5 && v <= n - 0.5
        });
        if !inside {
            continue;
        }
        let (pasted, hole) = warp(&reference.masked(&mask_ref), &mask_ref, &pose, size, size);
        let area = hole.count() as f64 / (n * n);
        if area < cfg.area_range.0 || area > cfg.area_range.1 {
            continue;
        }
        let mask_bg = hole.complement();
        let mut gt = bg.clone();
        for y in 0..size {
            for x in 0..size {
                if hole.get(x, y) {
                    gt.set(x, y, pasted.get(x, y));
                }
            }
        }
        return Ok(CompositionSample {
            gt,
            bg,
            reference,
            mask_bg,
            mask_ref,
            pose,
            seed,
        });
    }
    Err(Error::range(
        "scene placement",
        format!("no valid pose after {} retries (seed {seed})", cfg.max_retries),
    ))
}
