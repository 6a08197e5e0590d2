//! Pieces shared by both backbone families: conditioned inputs and per-layer traces.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::StreamTag;
use crate::error::{Error, Result};
use crate::numerics::{ops, Element, Graph, Init, ParamId, ParamStore, Tensor, Var};

/// Clean masked reference fed to the reference stream.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceInput<T> {
    /// `I_ref^M`, `3×H×W`.
    pub image: Tensor<T>,
    /// `M_ref`, `1×H×W`.
    pub mask: Tensor<T>,
}

/// Everything a denoiser sees for one item at one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserInput<T> {
    /// `x_t`, `3×H×W`.
    pub noisy: Tensor<T>,
    /// `M_bg`, `1×H×W`.
    pub mask: Tensor<T>,
    /// `I_bg^M`, `3×H×W`.
    pub masked_bg: Tensor<T>,
    pub reference: Option<ReferenceInput<T>>,
}

fn expect_shape<T: Element>(what: &str, t: &Tensor<T>, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::shape(
            "denoiser input",
            format!("{what} is {:?}, expected {shape:?}", t.shape()),
        ));
    }
    Ok(())
}

impl<T: Element> DenoiserInput<T> {
    pub fn validate(&self, size: usize) -> Result<()> {
        expect_shape("noisy", &self.noisy, &[3, size, size])?;
        expect_shape("mask", &self.mask, &[1, size, size])?;
        expect_shape("masked_bg", &self.masked_bg, &[3, size, size])?;
        if let Some(r) = &self.reference {
            expect_shape("reference image", &r.image, &[3, size, size])?;
            expect_shape("reference mask", &r.mask, &[1, size, size])?;
        }
        Ok(())
    }

    /// Background-stream channel stack `[x_t, M_bg, I_bg^M]`, `7×H×W`.
    pub fn background_stack(&self) -> Result<Tensor<T>> {
        ops::concat(&[&self.noisy, &self.mask, &self.masked_bg], 0)
    }

    /// Reference-stream stack through the same adapter: `[I_ref^M, M_ref, I_ref^M]`.
    pub fn reference_stack(&self) -> Option<Result<Tensor<T>>> {
        self.reference
            .as_ref()
            .map(|r| ops::concat(&[&r.image, &r.mask, &r.image], 0))
    }

    pub fn without_reference(&self) -> Self {
        Self {
            reference: None,
            ..self.clone()
        }
    }
}

/// Sinusoidal timestep features through a two-layer GELU MLP.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimeEmbedder {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub freq_dim: usize,
}

impl TimeEmbedder {
    pub fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        freq_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w1: store.init(format!("{prefix}.w1"), &[freq_dim, out_dim], Init::FanIn(freq_dim), rng),
            b1: store.init(format!("{prefix}.b1"), &[out_dim], Init::Zeros, rng),
            w2: store.init(format!("{prefix}.w2"), &[out_dim, out_dim], Init::FanIn(out_dim), rng),
            b2: store.init(format!("{prefix}.b2"), &[out_dim], Init::Zeros, rng),
            freq_dim,
        }
    }

    /// Two-layer GELU MLP over the sinusoidal features of `t`; returns `1×out_dim`.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, t: f64) -> Result<Var> {
        let feats = crate::diffusion::timestep_embedding::<T>(t, self.freq_dim)?;
        let x = g.constant(feats.reshape(&[1, self.freq_dim])?);
        let w1 = g.param(store, self.w1);
        let b1 = g.param(store, self.b1);
        let w2 = g.param(store, self.w2);
        let b2 = g.param(store, self.b2);
        let h = g.matmul(x, w1)?;
        let h = g.add(h, b1)?;
        let h = g.gelu(h);
        let h = g.matmul(h, w2)?;
        g.add(h, b2)
    }
}

/// Checks `0 ≤ t ≤ timesteps`.
pub fn check_timestep(t: f64, timesteps: usize) -> Result<()> {
    if !(t.is_finite() && t >= 0.0 && t <= timesteps as f64) {
        return Err(Error::range("timestep", format!("{t} outside [0, {timesteps}]")));
    }
    Ok(())
}

/// Result of a backbone forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// ε-prediction, `3×H×W`.
    pub eps: Var,
    pub traces: Vec<TraceEntry>,
}

/// Where in a block the consistency lab reads features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSite {
    /// The interaction operator's output `f_l`.
    #[default]
    Attention,
    /// The block's residual output.
    Block,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamTrace {
    pub tag: StreamTag,
    pub attn: Var,
    pub hidden: Var,
}

impl StreamTrace {
    pub fn site(&self, site: FeatureSite) -> Var {
        match site {
            FeatureSite::Attention => self.attn,
            FeatureSite::Block => self.hidden,
        }
    }
}

/// One block's recorded features, token layout `grid.0·grid.1 × width`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub layer: String,
    pub grid: (usize, usize),
    pub streams: Vec<StreamTrace>,
}

impl TraceEntry {
    pub fn stream(&self, tag: StreamTag) -> Option<&StreamTrace> {
        self.streams.iter().find(|s| s.tag == tag)
    }
}

/// Background-stream features of one layer, copied out of a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerFeatures<T> {
    pub layer: String,
    pub grid: (usize, usize),
    pub features: Tensor<T>,
}

pub fn background_features<T: Element>(
    g: &Graph<T>,
    traces: &[TraceEntry],
    site: FeatureSite,
) -> Vec<LayerFeatures<T>> {
    traces
        .iter()
        .map(|e| {
            let s = e
                .stream(StreamTag::Background)
                .expect("background stream always traced");
            LayerFeatures {
                layer: e.layer.clone(),
                grid: e.grid,
                features: g.value(s.site(site)).clone(),
            }
        })
        .collect()
}
