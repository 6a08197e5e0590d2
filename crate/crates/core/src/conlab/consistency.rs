use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{background_features, DenoiserInput, FeatureSite, LayerFeatures};
use crate::diffusion::{add_noise, apply_mask, select, Denoiser, Model, NoiseSchedule, TrainingExample};
use crate::error::{Error, Result};
use crate::numerics::{Element, Graph, Tensor};

/// The full composite and its two complementary halves, noised with the same
/// `(t, ε)`. Conditioning (mask, masked background, reference) is shared; only
/// the noised image differs.
#[derive(Clone, Debug)]
pub struct SeparatedInputs<T> {
    pub full: DenoiserInput<T>,
    pub background_only: DenoiserInput<T>,
    pub object_only: DenoiserInput<T>,
}

pub fn separated_inputs<T: Element>(
    ex: &TrainingExample<T>,
    t: usize,
    eps: &Tensor<T>,
    s: &NoiseSchedule,
) -> Result<SeparatedInputs<T>> {
    s.check(t)?;
    let hole = ex.mask.map(|v| T::one() - v);
    let object = apply_mask(&ex.gt, &hole);
    Ok(SeparatedInputs {
        full: ex.input(add_noise(&ex.gt, t, eps, s)?),
        background_only: ex.input(add_noise(&ex.masked_bg, t, eps, s)?),
        object_only: ex.input(add_noise(&object, t, eps, s)?),
    })
}

fn predict<T: Element, D: Denoiser<T>>(model: &D, input: &DenoiserInput<T>, t: usize) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let v = model.predict(&mut g, input, t)?;
    Ok(g.value(v).clone())
}

fn mean_sq(a: &Tensor<impl Element>, b: &Tensor<impl Element>) -> f64 {
    let n = a.numel() as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.to_f64() - y.to_f64();
            d * d
        })
        .sum::<f64>()
        / n
}

/// Per-element squared gap between the full-input prediction and the
/// mask-composited predictions of the background-only and object-only inputs.
pub fn region_merging_loss<T: Element, D: Denoiser<T>>(
    model: &D,
    ex: &TrainingExample<T>,
    t: usize,
    eps: &Tensor<T>,
    s: &NoiseSchedule,
) -> Result<f64> {
    let inputs = separated_inputs(ex, t, eps, s)?;
    let full = predict(model, &inputs.full, t)?;
    let bg = predict(model, &inputs.background_only, t)?;
    let obj = predict(model, &inputs.object_only, t)?;
    let merged = select(&ex.mask, &bg, &obj);
    Ok(mean_sq(&full, &merged))
}

/// Denoising loss `mean((ε̂ − ε)²)` on the full input.
pub fn denoising_loss<T: Element, D: Denoiser<T>>(
    model: &D,
    ex: &TrainingExample<T>,
    t: usize,
    eps: &Tensor<T>,
    s: &NoiseSchedule,
) -> Result<f64> {
    s.check(t)?;
    let pred = predict(model, &ex.input(add_noise(&ex.gt, t, eps, s)?), t)?;
    Ok(mean_sq(&pred, eps))
}

/// Area-vote downsampling of a `1×H×W` 0/1 mask to a `gh×gw` token grid:
/// a cell is on when at least half of its pixels are.
pub fn downsample_mask<T: Element>(mask: &Tensor<T>, grid: (usize, usize)) -> Result<Vec<bool>> {
    let (h, w) = match *mask.shape() {
        [1, h, w] => (h, w),
        _ => {
            return Err(Error::shape(
                "downsample_mask",
                format!("mask shape {:?}", mask.shape()),
            ))
        }
    };
    let (gh, gw) = grid;
    if gh == 0 || gw == 0 || h % gh != 0 || w % gw != 0 {
        return Err(Error::shape(
            "downsample_mask",
            format!("{h}×{w} mask onto {gh}×{gw} grid"),
        ));
    }
    let (bh, bw) = (h / gh, w / gw);
    let m = mask.data();
    Ok((0..gh * gw)
        .map(|cell| {
            let (cy, cx) = (cell / gw, cell % gw);
            let on: usize = (0..bh)
                .flat_map(|dy| (0..bw).map(move |dx| (cy * bh + dy) * w + cx * bw + dx))
                .filter(|&i| m[i].to_f64() >= 0.5)
                .count();
            2 * on >= bh * bw
        })
        .collect())
}

/// Cosine similarity of two equally sized vectors; two zero vectors count as identical.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 && bb == 0.0 {
        return 1.0;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

/// Cosine between `full` and the row-wise composite taking `bg` rows where
/// `keep` is set and `obj` rows elsewhere. Features are `[tokens, channels]`.
pub fn composition_cosine<T: Element>(full: &Tensor<T>, bg: &Tensor<T>, obj: &Tensor<T>, keep: &[bool]) -> Result<f64> {
    let (n, c) = full.dims2()?;
    if bg.shape() != full.shape() || obj.shape() != full.shape() || keep.len() != n {
        return Err(Error::shape(
            "composition_cosine",
            format!(
                "features {:?}/{:?}/{:?} with {} mask cells",
                full.shape(),
                bg.shape(),
                obj.shape(),
                keep.len()
            ),
        ));
    }
    let composed: Vec<f64> = (0..n * c)
        .map(|i| if keep[i / c] { bg.data()[i] } else { obj.data()[i] }.to_f64())
        .collect();
    Ok(cosine_similarity(&full.to_f64_vec(), &composed))
}

fn traced<T: Element>(
    model: &Model<T>,
    input: &DenoiserInput<T>,
    t: usize,
    reference_free: bool,
) -> Result<Vec<LayerFeatures<T>>> {
    let mut g = Graph::new();
    let out = if reference_free {
        model.forward_reference_free(&mut g, input, t as f64)?
    } else {
        model.forward(&mut g, input, t as f64)?
    };
    Ok(background_features(&g, &out.traces, FeatureSite::Attention))
}

/// Per-layer cosine between full-input features and the mask-composited
/// features of the separated inputs, in backbone depth order.
pub fn feature_composition_cosine<T: Element>(
    model: &Model<T>,
    ex: &TrainingExample<T>,
    t: usize,
    eps: &Tensor<T>,
    s: &NoiseSchedule,
) -> Result<Vec<(String, f64)>> {
    let inputs = separated_inputs(ex, t, eps, s)?;
    let full = traced(model, &inputs.full, t, false)?;
    let bg = traced(model, &inputs.background_only, t, false)?;
    let obj = traced(model, &inputs.object_only, t, false)?;
    full.iter()
        .zip(&bg)
        .zip(&obj)
        .map(|((f, b), o)| {
            let keep = downsample_mask(&ex.mask, f.grid)?;
            Ok((
                f.layer.clone(),
                composition_cosine(&f.features, &b.features, &o.features, &keep)?,
            ))
        })
        .collect()
}

/// Root-mean-square difference per layer.
pub fn feature_l2(a: &[LayerFeatures<impl Element>], b: &[LayerFeatures<impl Element>]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::shape("feature_l2", format!("{} vs {} layers", a.len(), b.len())));
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if x.features.shape() != y.features.shape() {
                return Err(Error::shape(
                    "feature_l2",
                    format!(
                        "layer {}: {:?} vs {:?}",
                        x.layer,
                        x.features.shape(),
                        y.features.shape()
                    ),
                ));
            }
            Ok(mean_sq(&x.features, &y.features).sqrt())
        })
        .collect()
}

/// Per-layer ℓ2 between the background-stream features of the separated
/// (background, reference) input and those of a reference-free forward that
/// sees the whole ground-truth composite as known content.
pub fn layer_l2<T: Element>(
    model: &Model<T>,
    ex: &TrainingExample<T>,
    t: usize,
    eps: &Tensor<T>,
    s: &NoiseSchedule,
) -> Result<Vec<f64>> {
    s.check(t)?;
    let noisy = add_noise(&ex.gt, t, eps, s)?;
    let separated = traced(model, &ex.input(noisy.clone()), t, false)?;
    let composite = DenoiserInput {
        noisy,
        mask: Tensor::ones(ex.mask.shape()),
        masked_bg: ex.gt.clone(),
        reference: None,
    };
    let gt = traced(model, &composite, t, true)?;
    feature_l2(&separated, &gt)
}

/// A seeded `(sample, t, ε)` draw.
#[derive(Clone, Debug)]
pub struct EvalDraw<T> {
    pub sample: usize,
    pub t: usize,
    pub eps: Tensor<T>,
}

pub fn eval_draws<T: Element>(
    samples: usize,
    shape: &[usize],
    s: &NoiseSchedule,
    n: usize,
    seed: u64,
) -> Result<Vec<EvalDraw<T>>> {
    if samples == 0 {
        return Err(Error::Empty("evaluation set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let sample = rng.gen_range(0..samples);
            let t = s.sample_t(&mut rng);
            EvalDraw {
                sample,
                t,
                eps: Tensor::randn(shape, 1.0, &mut rng),
            }
        })
        .collect())
}

/// Column-wise mean of equally long rows.
pub fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let mut out = vec![0.0; first.len()];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= rows.len() as f64);
    out
}
