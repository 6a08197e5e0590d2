use rand::Rng;

use super::model::Denoiser;
use super::sample::select;
use super::schedule::{add_noise, NoiseSchedule};
use crate::backbone::{DenoiserInput, ReferenceInput};
use crate::error::{Error, Result};
use crate::numerics::{Element, Graph, Tensor};

/// `steps` distinct timesteps descending from `T` to at least 1.
pub fn timestep_plan(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return Err(Error::range("sampling steps", format!("{steps} not in [1, {total}]")));
    }
    if steps == 1 {
        return Ok(vec![total]);
    }
    Ok((0..steps).map(|i| total - (i * (total - 1)) / (steps - 1)).collect())
}

/// Deterministic (η = 0) sampling from pure noise with the known region
/// re-composited after every step. The result equals `masked_bg` bitwise
/// wherever `mask` is 1.
pub fn inpaint_sample<T: Element, D: Denoiser<T>, R: Rng + ?Sized>(
    masked_bg: &Tensor<T>,
    mask: &Tensor<T>,
    reference: Option<&ReferenceInput<T>>,
    model: &D,
    s: &NoiseSchedule,
    steps: usize,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let plan = timestep_plan(s.len(), steps)?;
    let mut x = Tensor::<T>::randn(masked_bg.shape(), 1.0, rng);
    for (i, &t) in plan.iter().enumerate() {
        let t_prev = plan.get(i + 1).copied().unwrap_or(0);
        let input = DenoiserInput {
            noisy: x.clone(),
            mask: mask.clone(),
            masked_bg: masked_bg.clone(),
            reference: reference.cloned(),
        };
        let mut g = Graph::new();
        let pred = model.predict(&mut g, &input, t)?;
        let eps = g.value(pred);
        if eps.shape() != x.shape() {
            return Err(Error::shape(
                "inpaint_sample",
                format!("prediction {:?} vs image {:?}", eps.shape(), x.shape()),
            ));
        }
        let (ab, ab_prev) = (s.alpha_bar(t), s.alpha_bar(t_prev));
        let data = x
            .data()
            .iter()
            .zip(eps.data())
            .map(|(&xi, &ei)| {
                let (xi, ei) = (xi.to_f64(), ei.to_f64());
                let x0 = (xi - (1.0 - ab).sqrt() * ei) / ab.sqrt();
                T::from_f64(ab_prev.sqrt() * x0 + (1.0 - ab_prev).sqrt() * ei)
            })
            .collect();
        let next = Tensor::new(x.shape().to_vec(), data)?;
        if !next.all_finite() {
            return Err(Error::NonFinite(format!("sampler state at t = {t}")));
        }
        let known = if t_prev == 0 {
            masked_bg.clone()
        } else {
            let e = Tensor::randn(masked_bg.shape(), 1.0, rng);
            add_noise(masked_bg, t_prev, &e, s)?
        };
        x = select(mask, &known, &next);
    }
    Ok(x)
}

/// Predicts the exact noise that maps a known clean image to `x_t`.
pub struct EpsOracle<'a, T> {
    pub clean: &'a Tensor<T>,
    pub schedule: &'a NoiseSchedule,
}

impl<T: Element> Denoiser<T> for EpsOracle<'_, T> {
    fn predict(&self, g: &mut Graph<T>, input: &DenoiserInput<T>, t: usize) -> Result<crate::numerics::Var> {
        self.schedule.check(t)?;
        let ab = self.schedule.alpha_bar(t);
        let data = input
            .noisy
            .data()
            .iter()
            .zip(self.clean.data())
            .map(|(&x, &c)| T::from_f64((x.to_f64() - ab.sqrt() * c.to_f64()) / (1.0 - ab).sqrt()))
            .collect();
        Ok(g.constant(Tensor::new(input.noisy.shape().to_vec(), data)?))
    }
}
