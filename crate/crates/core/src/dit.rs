//! Token-sequence dual-stream backbone with AdaLN-Zero modulation.
//!
//! Each block runs attention and an MLP in parallel on the same modulated
//! input, fuses them through one output projection and adds the result back
//! through a timestep-dependent gate:
//!
//! ```text
//! h̃ = normalize(h)·(1 + scale) + shift
//! u = cat(attn(h̃), φ(h̃·W_m))·W_o
//! h' = h + g ⊙ u
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{mixture_attention, self_attention, AttentionParams, StreamTag};
use crate::backbone::{check_timestep, DenoiserInput, ForwardOutput, StreamTrace, TimeEmbedder, TraceEntry};
use crate::diffusion::timestep_embedding;
use crate::error::{Error, Result};
use crate::numerics::{Element, Graph, Init, ParamId, ParamStore, Tensor, Var};

pub const NORM_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiTConfig {
    pub image_size: usize,
    pub patch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub time_freq_dim: usize,
    pub time_dim: usize,
    pub timesteps: usize,
}

impl Default for DiTConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            patch: 4,
            in_channels: 7,
            out_channels: 3,
            width: 64,
            depth: 8,
            heads: 2,
            time_freq_dim: 128,
            time_dim: 64,
            timesteps: 200,
        }
    }
}

impl DiTConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || !self.image_size.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "image size {} not divisible by patch {}",
                self.image_size, self.patch
            )));
        }
        if self.depth == 0 {
            return Err(Error::Config("dit needs at least one block".into()));
        }
        if !self.width.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "width {} must be a multiple of 4 for the 2-D position table",
                self.width
            )));
        }
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if !self.time_freq_dim.is_multiple_of(2) {
            return Err(Error::Config("time_freq_dim must be even".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch
    }

    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn layer_ids(&self) -> Vec<String> {
        (0..self.depth).map(|i| format!("b{i}")).collect()
    }
}

/// Flat-index map of patchify: output element `(token, feature)` reads input
/// element `(c, y, x)` where tokens run in raster order over the patch grid and
/// features are `c·p² + dy·p + dx`.
pub fn patch_index(c: usize, h: usize, w: usize, patch: usize) -> Result<Vec<usize>> {
    if patch == 0 || !h.is_multiple_of(patch) || !w.is_multiple_of(patch) {
        return Err(Error::shape(
            "patchify",
            format!("{h}×{w} not divisible by patch {patch}"),
        ));
    }
    let (gh, gw) = (h / patch, w / patch);
    let mut idx = Vec::with_capacity(c * h * w);
    for py in 0..gh {
        for px in 0..gw {
            for ch in 0..c {
                for dy in 0..patch {
                    for dx in 0..patch {
                        idx.push(ch * h * w + (py * patch + dy) * w + px * patch + dx);
                    }
                }
            }
        }
    }
    Ok(idx)
}

fn invert(index: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; index.len()];
    for (i, &j) in index.iter().enumerate() {
        inv[j] = i;
    }
    inv
}

pub fn patchify<T: Element>(img: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let &[c, h, w] = img.shape() else {
        return Err(Error::shape(
            "patchify",
            format!("expected C×H×W, got {:?}", img.shape()),
        ));
    };
    let idx = patch_index(c, h, w, patch)?;
    let data = idx.iter().map(|&i| img.data()[i]).collect();
    Tensor::new(vec![(h / patch) * (w / patch), c * patch * patch], data)
}

pub fn unpatchify<T: Element>(tokens: &Tensor<T>, patch: usize, c: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let idx = patch_index(c, h, w, patch)?;
    let expect = [(h / patch) * (w / patch), c * patch * patch];
    if tokens.shape() != expect {
        return Err(Error::shape(
            "unpatchify",
            format!("tokens {:?}, expected {expect:?}", tokens.shape()),
        ));
    }
    let inv = invert(&idx);
    let data = inv.iter().map(|&i| tokens.data()[i]).collect();
    Tensor::new(vec![c, h, w], data)
}

/// Fixed 2-D sinusoidal table, `T×d`: the first half of each row encodes the
/// patch row, the second half the patch column.
pub fn position_table<T: Element>(grid: usize, width: usize) -> Result<Tensor<T>> {
    let half = width / 2;
    let mut data = Vec::with_capacity(grid * grid * width);
    for y in 0..grid {
        let ey = timestep_embedding::<f64>(y as f64, half)?;
        for x in 0..grid {
            let ex = timestep_embedding::<f64>(x as f64, half)?;
            data.extend(ey.data().iter().chain(ex.data()).map(|&v| T::from_f64(v)));
        }
    }
    Tensor::new(vec![grid * grid, width], data)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiTBlockParams {
    pub width: usize,
    /// `τ → [shift | scale | gate]`, zero-initialised.
    pub mod_w: ParamId,
    pub mod_b: ParamId,
    pub attn: AttentionParams,
    pub w_m: ParamId,
    pub w_o: ParamId,
}

impl DiTBlockParams {
    pub fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        width: usize,
        heads: usize,
        time_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            width,
            mod_w: store.init(format!("{prefix}.mod.w"), &[time_dim, 3 * width], Init::Zeros, rng),
            mod_b: store.init(format!("{prefix}.mod.b"), &[3 * width], Init::Zeros, rng),
            attn: AttentionParams::new(store, &format!("{prefix}.attn"), width, heads, rng)?,
            w_m: store.init(format!("{prefix}.mlp"), &[width, 4 * width], Init::FanIn(width), rng),
            w_o: store.init(
                format!("{prefix}.out"),
                &[5 * width, width],
                Init::FanIn(5 * width),
                rng,
            ),
        })
    }
}

/// Returns `(h̃, g)` with `g` of shape `1×d`.
pub fn adaln_zero<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    h: Var,
    tau: Var,
    p: &DiTBlockParams,
) -> Result<(Var, Var)> {
    let d = p.width;
    let act = g.gelu(tau);
    let w = g.param(store, p.mod_w);
    let b = g.param(store, p.mod_b);
    let m = g.matmul(act, w)?;
    let m = g.add(m, b)?;
    let shift = g.slice(m, 1, 0, d)?;
    let scale = g.slice(m, 1, d, d)?;
    let gate = g.slice(m, 1, 2 * d, d)?;
    let one = g.constant(Tensor::scalar(T::one()));
    let factor = g.add(scale, one)?;
    let n = g.normalize(h, NORM_EPS);
    let n = g.mul(n, factor)?;
    let h_tilde = g.add(n, shift)?;
    Ok((h_tilde, gate))
}

fn fuse<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &DiTBlockParams,
    h: Var,
    h_tilde: Var,
    attn: Var,
    gate: Var,
) -> Result<Var> {
    let w_m = g.param(store, p.w_m);
    let m = g.matmul(h_tilde, w_m)?;
    let m = g.gelu(m);
    let cat = g.concat(&[attn, m], 1)?;
    let w_o = g.param(store, p.w_o);
    let u = g.matmul(cat, w_o)?;
    let gated = g.mul(u, gate)?;
    g.add(h, gated)
}

#[derive(Clone, Debug)]
pub struct DiTBlockOutput {
    pub bg: Var,
    pub reference: Option<Var>,
    pub trace: TraceEntry,
}

/// One block with separate records per stream; the shared model passes the same record twice.
#[allow(clippy::too_many_arguments)]
pub fn dual_dit_block_forward<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p_bg: &DiTBlockParams,
    p_ref: &DiTBlockParams,
    h_bg: Var,
    h_ref: Option<Var>,
    tau_bg: Var,
    tau_ref: Var,
    grid: (usize, usize),
    layer: &str,
) -> Result<DiTBlockOutput> {
    let width_of = |g: &Graph<T>, v: Var| match *g.shape(v) {
        [_, d] => Some(d),
        _ => None,
    };
    if width_of(g, h_bg) != Some(p_bg.width) {
        return Err(Error::shape(
            "dit_block_forward",
            format!("background {:?}, width {}", g.shape(h_bg), p_bg.width),
        ));
    }
    if let Some(r) = h_ref {
        if width_of(g, r) != Some(p_bg.width) {
            return Err(Error::shape(
                "dit_block_forward",
                format!("reference {:?}, width {}", g.shape(r), p_bg.width),
            ));
        }
    }

    let mut streams = Vec::with_capacity(2);
    let ref_out = match h_ref {
        Some(hr) => {
            let (tilde, gate) = adaln_zero(g, store, hr, tau_ref, p_ref)?;
            let attn = self_attention(g, store, tilde, &p_ref.attn)?;
            let y = fuse(g, store, p_ref, hr, tilde, attn, gate)?;
            streams.push(StreamTrace {
                tag: StreamTag::Reference,
                attn,
                hidden: y,
            });
            Some((tilde, y))
        }
        None => None,
    };
    let (tilde, gate) = adaln_zero(g, store, h_bg, tau_bg, p_bg)?;
    let attn = match ref_out {
        Some((ref_tilde, _)) => mixture_attention(g, store, tilde, ref_tilde, &p_bg.attn)?,
        None => self_attention(g, store, tilde, &p_bg.attn)?,
    };
    let y = fuse(g, store, p_bg, h_bg, tilde, attn, gate)?;
    streams.insert(
        0,
        StreamTrace {
            tag: StreamTag::Background,
            attn,
            hidden: y,
        },
    );
    Ok(DiTBlockOutput {
        bg: y,
        reference: ref_out.map(|(_, y)| y),
        trace: TraceEntry {
            layer: layer.to_string(),
            grid,
            streams,
        },
    })
}

#[allow(clippy::too_many_arguments)]
pub fn dit_block_forward<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &DiTBlockParams,
    h_bg: Var,
    h_ref: Option<Var>,
    tau: Var,
    grid: (usize, usize),
    layer: &str,
) -> Result<DiTBlockOutput> {
    dual_dit_block_forward(g, store, p, p, h_bg, h_ref, tau, tau, grid, layer)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiTBackbone {
    pub cfg: DiTConfig,
    pub time: TimeEmbedder,
    pub patch_w: ParamId,
    pub patch_b: ParamId,
    pub blocks: Vec<DiTBlockParams>,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl DiTBackbone {
    pub fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: DiTConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let pp = cfg.patch * cfg.patch;
        let fan = cfg.in_channels * pp;
        let time = TimeEmbedder::new(store, &format!("{prefix}.time"), cfg.time_freq_dim, cfg.time_dim, rng);
        let patch_w = store.init(format!("{prefix}.patch.w"), &[fan, cfg.width], Init::FanIn(fan), rng);
        let patch_b = store.init(format!("{prefix}.patch.b"), &[cfg.width], Init::Zeros, rng);
        let blocks = (0..cfg.depth)
            .map(|i| {
                DiTBlockParams::new(
                    store,
                    &format!("{prefix}.b{i}"),
                    cfg.width,
                    cfg.heads,
                    cfg.time_dim,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let head_w = store.init(
            format!("{prefix}.head.w"),
            &[cfg.width, cfg.out_channels * pp],
            Init::Zeros,
            rng,
        );
        let head_b = store.init(format!("{prefix}.head.b"), &[cfg.out_channels * pp], Init::Zeros, rng);
        Ok(Self {
            cfg,
            time,
            patch_w,
            patch_b,
            blocks,
            head_w,
            head_b,
        })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn embed<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, stack: &Tensor<T>) -> Result<Var> {
        let tokens = g.constant(patchify(stack, self.cfg.patch)?);
        let w = g.param(store, self.patch_w);
        let b = g.param(store, self.patch_b);
        let h = g.matmul(tokens, w)?;
        let h = g.add(h, b)?;
        let pos = g.constant(position_table(self.cfg.grid(), self.cfg.width)?);
        g.add(h, pos)
    }
}

/// Dual-stream forward; `main` handles the background stream and the head.
pub fn dit_dual_forward<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    main: &DiTBackbone,
    reference: &DiTBackbone,
    input: &DenoiserInput<T>,
    t: f64,
) -> Result<ForwardOutput> {
    let cfg = &main.cfg;
    if reference.cfg != *cfg {
        return Err(Error::Config("reference backbone plan differs from main".into()));
    }
    if cfg.in_channels != 7 || cfg.out_channels != 3 {
        return Err(Error::Config(
            "dit adapter expects 7 input and 3 output channels".into(),
        ));
    }
    check_timestep(t, cfg.timesteps)?;
    input.validate(cfg.image_size)?;

    let tau_bg = main.time.forward(g, store, t)?;
    let tau_ref = if std::ptr::eq(main, reference) {
        tau_bg
    } else {
        reference.time.forward(g, store, t)?
    };
    let mut h_bg = main.embed(g, store, &input.background_stack()?)?;
    let mut h_ref = match input.reference_stack() {
        Some(r) => Some(reference.embed(g, store, &r?)?),
        None => None,
    };
    let grid = (cfg.grid(), cfg.grid());
    let ids = cfg.layer_ids();
    let mut traces = Vec::with_capacity(cfg.depth);
    for ((pb, pr), id) in main.blocks.iter().zip(&reference.blocks).zip(&ids) {
        let out = dual_dit_block_forward(g, store, pb, pr, h_bg, h_ref, tau_bg, tau_ref, grid, id)?;
        h_bg = out.bg;
        h_ref = out.reference;
        traces.push(out.trace);
    }

    let n = g.normalize(h_bg, NORM_EPS);
    let w = g.param(store, main.head_w);
    let b = g.param(store, main.head_b);
    let y = g.matmul(n, w)?;
    let y = g.add(y, b)?;
    let s = cfg.image_size;
    let inv = invert(&patch_index(cfg.out_channels, s, s, cfg.patch)?);
    let eps = g.gather(y, inv, &[cfg.out_channels, s, s])?;
    Ok(ForwardOutput { eps, traces })
}

pub fn dit_forward<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    bb: &DiTBackbone,
    input: &DenoiserInput<T>,
    t: f64,
) -> Result<ForwardOutput> {
    dit_dual_forward(g, store, bb, bb, input, t)
}
