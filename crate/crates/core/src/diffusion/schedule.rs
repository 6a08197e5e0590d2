use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Element, Tensor};

/// Linear-β forward process with `ᾱ_0 = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Number of steps `T`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// `β_t` for `1 ≤ t ≤ T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    /// `ᾱ_t` for `0 ≤ t ≤ T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            return Err(Error::range("timestep", format!("{t} outside [1, {}]", self.len())));
        }
        Ok(())
    }

    /// Uniform draw from `[1, T]`.
    pub fn sample_t<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.gen_range(1..=self.len())
    }
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::range("schedule length", "T must be at least 1"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::range("beta", format!("need 0 < {beta_start} <= {beta_end} < 1")));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bars = Vec::with_capacity(steps + 1);
    alpha_bars.push(1.0);
    let mut acc = 1.0;
    for b in &betas {
        acc *= 1.0 - b;
        alpha_bars.push(acc);
    }
    Ok(NoiseSchedule { betas, alpha_bars })
}

/// `√ᾱ_t·x + √(1−ᾱ_t)·ε`.
pub fn add_noise<T: Element>(x: &Tensor<T>, t: usize, eps: &Tensor<T>, s: &NoiseSchedule) -> Result<Tensor<T>> {
    if t > s.len() {
        return Err(Error::range("timestep", format!("{t} outside [0, {}]", s.len())));
    }
    mix(x, eps, s.alpha_bar(t))
}

/// The closed form at an explicit `ᾱ`.
pub fn mix<T: Element>(x: &Tensor<T>, eps: &Tensor<T>, alpha_bar: f64) -> Result<Tensor<T>> {
    if x.shape() != eps.shape() {
        return Err(Error::shape(
            "add_noise",
            format!("image {:?} vs noise {:?}", x.shape(), eps.shape()),
        ));
    }
    if !(0.0..=1.0).contains(&alpha_bar) {
        return Err(Error::range("alpha_bar", format!("{alpha_bar}")));
    }
    let a = alpha_bar.sqrt();
    let b = (1.0 - alpha_bar).sqrt();
    let data = x
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&xi, &ei)| T::from_f64(a * xi.to_f64() + b * ei.to_f64()))
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Interleaved `[sin(t·ω_0), cos(t·ω_0), sin(t·ω_1), …]` with `ω_i = 10000^(−i/(dim/2))`.
pub fn timestep_embedding<T: Element>(t: f64, dim: usize) -> Result<Tensor<T>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!("embedding dim {dim} must be even and positive")));
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let (s, c) = (t * freq).sin_cos();
        out.push(T::from_f64(s));
        out.push(T::from_f64(c));
    }
    Tensor::new(vec![dim], out)
}
