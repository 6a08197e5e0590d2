//! Convolutional dual-stream backbone.
//!
//! Every interaction block runs a local ResNet block `R`, a layer norm, the
//! stream's attention operator with a residual add, then a relu feed-forward
//! with a second residual add:
//!
//! ```text
//! x̃ = LN(R(x))
//! x̂ = x + attn(x̃)            attn = self (reference) | mixture (background)
//! y = relu(LN(x̂)·W1)·W2 + x̂
//! ```
//!
//! Features travel between blocks in token layout (`H·W × C`); `R` works on
//! the channel-first view.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{mixture_attention, self_attention, AttentionParams, StreamTag};
use crate::backbone::{check_timestep, DenoiserInput, ForwardOutput, StreamTrace, TimeEmbedder, TraceEntry};
use crate::error::{Error, Result};
use crate::numerics::{Element, Graph, Init, ParamId, ParamStore, Var};

pub const LN_EPS: f64 = 1e-5;
pub const GN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Channel width per resolution level; each level starts with a 2× downsample.
    pub widths: Vec<usize>,
    pub blocks_per_level: usize,
    pub mid_blocks: usize,
    pub heads: usize,
    pub groups: usize,
    /// Sinusoidal timestep features fed to the embedding MLP.
    pub time_freq_dim: usize,
    pub time_dim: usize,
    /// Largest admissible timestep.
    pub timesteps: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            in_channels: 7,
            out_channels: 3,
            widths: vec![32, 64],
            blocks_per_level: 2,
            mid_blocks: 0,
            heads: 2,
            groups: 8,
            time_freq_dim: 128,
            time_dim: 64,
            timesteps: 200,
        }
    }
}

impl UNetConfig {
    pub fn depth(&self) -> usize {
        2 * self.widths.len() * self.blocks_per_level + self.mid_blocks
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::Config("unet needs at least one level".into()));
        }
        if self.depth() == 0 {
            return Err(Error::Config("unet needs at least one block".into()));
        }
        let scale = 1usize << self.widths.len();
        if !self.image_size.is_multiple_of(scale) {
            return Err(Error::Config(format!(
                "image size {} not divisible by {scale} ({} downsamples)",
                self.image_size,
                self.widths.len()
            )));
        }
        for &w in &self.widths {
            if w % self.groups != 0 || w % self.heads != 0 {
                return Err(Error::Config(format!(
                    "width {w} must be divisible by {} groups and {} heads",
                    self.groups, self.heads
                )));
            }
        }
        if !self.time_freq_dim.is_multiple_of(2) {
            return Err(Error::Config("time_freq_dim must be even".into()));
        }
        Ok(())
    }

    /// Block layer ids in depth order: `d*`, then `m*`, then `u*`.
    pub fn layer_ids(&self) -> Vec<String> {
        let half = self.widths.len() * self.blocks_per_level;
        let mut ids: Vec<String> = (0..half).map(|i| format!("d{i}")).collect();
        ids.extend((0..self.mid_blocks).map(|i| format!("m{i}")));
        ids.extend((0..half).map(|i| format!("u{i}")));
        ids
    }

    /// Feature-grid side length of every block, in depth order.
    pub fn layer_grids(&self) -> Vec<usize> {
        let levels = self.widths.len();
        let mut grids = Vec::new();
        for l in 0..levels {
            for _ in 0..self.blocks_per_level {
                grids.push(self.image_size >> (l + 1));
            }
        }
        for _ in 0..self.mid_blocks {
            grids.push(self.image_size >> levels);
        }
        for l in (0..levels).rev() {
            for _ in 0..self.blocks_per_level {
                grids.push(self.image_size >> (l + 1));
            }
        }
        grids
    }
}

/// Group-normalised two-convolution residual block with a timestep bias.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResBlockParams {
    pub norm1: (ParamId, ParamId),
    pub conv1: ParamId,
    pub time_proj: ParamId,
    pub norm2: (ParamId, ParamId),
    pub conv2: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UNetBlockParams {
    pub width: usize,
    pub groups: usize,
    pub res: ResBlockParams,
    pub norm_attn: (ParamId, ParamId),
    pub attn: AttentionParams,
    pub norm_ff: (ParamId, ParamId),
    pub w1: ParamId,
    pub w2: ParamId,
}

fn affine_pair<T: Element, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    width: usize,
    rng: &mut R,
) -> (ParamId, ParamId) {
    (
        store.init(format!("{prefix}.gain"), &[width], Init::Ones, rng),
        store.init(format!("{prefix}.bias"), &[width], Init::Zeros, rng),
    )
}

impl UNetBlockParams {
    pub fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        width: usize,
        heads: usize,
        groups: usize,
        time_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let conv = Init::FanIn(width * 9);
        let res = ResBlockParams {
            norm1: affine_pair(store, &format!("{prefix}.res.norm1"), width, rng),
            conv1: store.init(format!("{prefix}.res.conv1"), &[width, width, 3, 3], conv, rng),
            time_proj: store.init(
                format!("{prefix}.res.time_proj"),
                &[time_dim, width],
                Init::FanIn(time_dim),
                rng,
            ),
            norm2: affine_pair(store, &format!("{prefix}.res.norm2"), width, rng),
            conv2: store.init(format!("{prefix}.res.conv2"), &[width, width, 3, 3], conv, rng),
        };
        Ok(Self {
            width,
            groups,
            res,
            norm_attn: affine_pair(store, &format!("{prefix}.ln_attn"), width, rng),
            attn: AttentionParams::new(store, &format!("{prefix}.attn"), width, heads, rng)?,
            norm_ff: affine_pair(store, &format!("{prefix}.ln_ff"), width, rng),
            w1: store.init(format!("{prefix}.ff.w1"), &[width, 4 * width], Init::FanIn(width), rng),
            w2: store.init(
                format!("{prefix}.ff.w2"),
                &[4 * width, width],
                Init::FanIn(4 * width),
                rng,
            ),
        })
    }
}

/// Group norm over a `C×N` channel-first matrix with per-channel affine.
pub fn group_norm<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    x: Var,
    groups: usize,
    affine: (ParamId, ParamId),
) -> Result<Var> {
    let (c, n) = g.value(x).dims2()?;
    if c % groups != 0 {
        return Err(Error::shape("group_norm", format!("{c} channels in {groups} groups")));
    }
    let grouped = g.reshape(x, &[groups, (c / groups) * n])?;
    let normed = g.normalize(grouped, GN_EPS);
    let normed = g.reshape(normed, &[c, n])?;
    let gain = g.param(store, affine.0);
    let bias = g.param(store, affine.1);
    let gain = g.reshape(gain, &[c, 1])?;
    let bias = g.reshape(bias, &[c, 1])?;
    let s = g.mul(normed, gain)?;
    g.add(s, bias)
}

/// `R(x)` on token-layout input `H·W × C`; returns token layout.
pub fn res_block<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &ResBlockParams,
    groups: usize,
    x_tokens: Var,
    temb: Var,
    grid: (usize, usize),
) -> Result<Var> {
    let (h, w) = grid;
    let (_, c) = g.value(x_tokens).dims2()?;
    let x = g.transpose(x_tokens)?;
    let hdn = group_norm(g, store, x, groups, p.norm1)?;
    let hdn = g.gelu(hdn);
    let hdn = g.reshape(hdn, &[c, h, w])?;
    let k1 = g.param(store, p.conv1);
    let hdn = g.conv2d(hdn, k1)?;
    let hdn = g.reshape(hdn, &[c, h * w])?;
    let tp = g.param(store, p.time_proj);
    let tbias = g.matmul(temb, tp)?;
    let tbias = g.reshape(tbias, &[c, 1])?;
    let hdn = g.add(hdn, tbias)?;
    let hdn = group_norm(g, store, hdn, groups, p.norm2)?;
    let hdn = g.gelu(hdn);
    let hdn = g.reshape(hdn, &[c, h, w])?;
    let k2 = g.param(store, p.conv2);
    let hdn = g.conv2d(hdn, k2)?;
    let hdn = g.reshape(hdn, &[c, h * w])?;
    let out = g.add(x, hdn)?;
    g.transpose(out)
}

fn ln<T: Element>(g: &mut Graph<T>, store: &ParamStore<T>, x: Var, affine: (ParamId, ParamId)) -> Result<Var> {
    let gain = g.param(store, affine.0);
    let bias = g.param(store, affine.1);
    g.layer_norm(x, gain, bias, LN_EPS)
}

fn feed_forward<T: Element>(g: &mut Graph<T>, store: &ParamStore<T>, p: &UNetBlockParams, x_hat: Var) -> Result<Var> {
    let n = ln(g, store, x_hat, p.norm_ff)?;
    let w1 = g.param(store, p.w1);
    let w2 = g.param(store, p.w2);
    let hdn = g.matmul(n, w1)?;
    let hdn = g.relu(hdn);
    let out = g.matmul(hdn, w2)?;
    g.add(out, x_hat)
}

/// Outputs of one dual-stream block.
#[derive(Clone, Debug)]
pub struct BlockOutput {
    pub bg: Var,
    pub reference: Option<Var>,
    pub trace: TraceEntry,
}

/// One interaction block with separate records for the two streams.
///
/// In the shared model `p_bg` and `p_ref` are the same record. The background
/// stream's mixture attention always projects with `p_bg`'s matrices.
#[allow(clippy::too_many_arguments)]
pub fn dual_block_forward<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p_bg: &UNetBlockParams,
    p_ref: &UNetBlockParams,
    x_bg: Var,
    x_ref: Option<Var>,
    temb_bg: Var,
    temb_ref: Var,
    grid: (usize, usize),
    layer: &str,
) -> Result<BlockOutput> {
    let tokens = grid.0 * grid.1;
    match g.shape(x_bg) {
        &[t, c] if t == tokens && c == p_bg.width => {}
        s => {
            return Err(Error::shape(
                "unet_block_forward",
                format!("background {s:?}, expected [{tokens}, {}]", p_bg.width),
            ))
        }
    }
    if let Some(r) = x_ref {
        if g.shape(r) != g.shape(x_bg) {
            return Err(Error::shape(
                "unet_block_forward",
                format!("streams differ: {:?} vs {:?}", g.shape(x_bg), g.shape(r)),
            ));
        }
    }

    let mut streams = Vec::with_capacity(2);
    let ref_out = match x_ref {
        Some(xr) => {
            let r = res_block(g, store, &p_ref.res, p_ref.groups, xr, temb_ref, grid)?;
            let tilde = ln(g, store, r, p_ref.norm_attn)?;
            let attn = self_attention(g, store, tilde, &p_ref.attn)?;
            let hat = g.add(xr, attn)?;
            let y = feed_forward(g, store, p_ref, hat)?;
            streams.push(StreamTrace {
                tag: StreamTag::Reference,
                attn,
                hidden: y,
            });
            Some((tilde, y))
        }
        None => None,
    };

    let r = res_block(g, store, &p_bg.res, p_bg.groups, x_bg, temb_bg, grid)?;
    let tilde = ln(g, store, r, p_bg.norm_attn)?;
    let attn = match ref_out {
        Some((ref_tilde, _)) => mixture_attention(g, store, tilde, ref_tilde, &p_bg.attn)?,
        None => self_attention(g, store, tilde, &p_bg.attn)?,
    };
    let hat = g.add(x_bg, attn)?;
    let y = feed_forward(g, store, p_bg, hat)?;
    streams.insert(
        0,
        StreamTrace {
            tag: StreamTag::Background,
            attn,
            hidden: y,
        },
    );

    Ok(BlockOutput {
        bg: y,
        reference: ref_out.map(|(_, y)| y),
        trace: TraceEntry {
            layer: layer.to_string(),
            grid,
            streams,
        },
    })
}

/// Shared-record block: both streams run through `p`.
#[allow(clippy::too_many_arguments)]
pub fn unet_block_forward<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &UNetBlockParams,
    x_bg: Var,
    x_ref: Option<Var>,
    temb: Var,
    grid: (usize, usize),
    layer: &str,
) -> Result<BlockOutput> {
    dual_block_forward(g, store, p, p, x_bg, x_ref, temb, temb, grid, layer)
}

/// One resolution level of the encoder or decoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Level {
    /// Width change applied on entry (encoder) or exit (decoder).
    pub proj: Option<ParamId>,
    pub blocks: Vec<UNetBlockParams>,
}

/// Full convolutional denoiser: stem, encoder, middle, mirrored decoder with skips, head.
#[derive(Clone, Debug, PartialEq)]
pub struct UNetBackbone {
    pub cfg: UNetConfig,
    pub time: TimeEmbedder,
    pub stem: ParamId,
    pub stem_bias: ParamId,
    pub encoder: Vec<Level>,
    pub mid: Vec<UNetBlockParams>,
    pub decoder: Vec<Level>,
    pub head_norm: (ParamId, ParamId),
    pub head: ParamId,
    pub head_bias: ParamId,
}

impl UNetBackbone {
    /// Registers every record under `prefix` in `store`. The output head starts at zero.
    pub fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: UNetConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let w0 = cfg.widths[0];
        let time = TimeEmbedder::new(store, &format!("{prefix}.time"), cfg.time_freq_dim, cfg.time_dim, rng);
        let stem = store.init(
            format!("{prefix}.stem"),
            &[w0, cfg.in_channels, 3, 3],
            Init::FanIn(cfg.in_channels * 9),
            rng,
        );
        let stem_bias = store.init(format!("{prefix}.stem_bias"), &[w0], Init::Zeros, rng);

        let mut counter = 0;
        let mut block = |store: &mut ParamStore<T>, kind: &str, width: usize, rng: &mut R| {
            let b = UNetBlockParams::new(
                store,
                &format!("{prefix}.{kind}"),
                width,
                cfg.heads,
                cfg.groups,
                cfg.time_dim,
                rng,
            );
            counter += 1;
            b
        };

        let mut encoder = Vec::new();
        let mut prev = w0;
        for (l, &w) in cfg.widths.iter().enumerate() {
            let proj =
                (w != prev).then(|| store.init(format!("{prefix}.enc{l}.proj"), &[prev, w], Init::FanIn(prev), rng));
            let mut blocks = Vec::new();
            for _ in 0..cfg.blocks_per_level {
                let id = encoder.iter().map(|lv: &Level| lv.blocks.len()).sum::<usize>() + blocks.len();
                blocks.push(block(store, &format!("d{id}"), w, rng)?);
            }
            encoder.push(Level { proj, blocks });
            prev = w;
        }
        let deepest = *cfg.widths.last().expect("validated");
        let mut mid = Vec::new();
        for i in 0..cfg.mid_blocks {
            mid.push(block(store, &format!("m{i}"), deepest, rng)?);
        }
        let mut decoder = Vec::new();
        let mut uid = 0;
        for l in (0..cfg.widths.len()).rev() {
            let w = cfg.widths[l];
            let mut blocks = Vec::new();
            for _ in 0..cfg.blocks_per_level {
                blocks.push(block(store, &format!("u{uid}"), w, rng)?);
                uid += 1;
            }
            let target = if l == 0 { w0 } else { cfg.widths[l - 1] };
            let proj =
                (target != w).then(|| store.init(format!("{prefix}.dec{l}.proj"), &[w, target], Init::FanIn(w), rng));
            decoder.push(Level { proj, blocks });
        }
        let head_norm = affine_pair(store, &format!("{prefix}.head_norm"), w0, rng);
        let head = store.init(
            format!("{prefix}.head"),
            &[cfg.out_channels, w0, 3, 3],
            Init::Zeros,
            rng,
        );
        let head_bias = store.init(format!("{prefix}.head_bias"), &[cfg.out_channels], Init::Zeros, rng);
        Ok(Self {
            cfg,
            time,
            stem,
            stem_bias,
            encoder,
            mid,
            decoder,
            head_norm,
            head,
            head_bias,
        })
    }

    pub fn depth(&self) -> usize {
        self.cfg.depth()
    }

    /// Blocks in depth order.
    pub fn blocks(&self) -> Vec<&UNetBlockParams> {
        self.encoder
            .iter()
            .flat_map(|l| &l.blocks)
            .chain(&self.mid)
            .chain(self.decoder.iter().flat_map(|l| &l.blocks))
            .collect()
    }
}

/// One stream's running state through the backbone.
struct StreamState {
    x: Var,
    skips: Vec<Var>,
    stem: Var,
}

fn stem<T: Element>(g: &mut Graph<T>, store: &ParamStore<T>, bb: &UNetBackbone, input: Var) -> Result<StreamState> {
    let k = g.param(store, bb.stem);
    let y = g.conv2d(input, k)?;
    let s = bb.cfg.image_size;
    let w0 = bb.cfg.widths[0];
    let y = g.reshape(y, &[w0, s * s])?;
    let b = g.param(store, bb.stem_bias);
    let b = g.reshape(b, &[w0, 1])?;
    let y = g.add(y, b)?;
    let y3 = g.reshape(y, &[w0, s, s])?;
    Ok(StreamState {
        x: y3,
        skips: Vec::new(),
        stem: y,
    })
}

/// `C×H×W` (or token layout on a `side×side` grid) → 2× pooled token layout, optional width change.
fn down<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    x: Var,
    proj: Option<ParamId>,
    side: usize,
) -> Result<Var> {
    let x_chw = if g.shape(x).len() == 2 {
        let (_, c) = g.value(x).dims2()?;
        let t = g.transpose(x)?;
        g.reshape(t, &[c, side, side])?
    } else {
        x
    };
    let pooled = g.avg_pool2(x_chw)?;
    let (c, h, w) = match g.shape(pooled) {
        &[c, h, w] => (c, h, w),
        _ => unreachable!(),
    };
    let flat = g.reshape(pooled, &[c, h * w])?;
    let tokens = g.transpose(flat)?;
    match proj {
        Some(p) => {
            let p = g.param(store, p);
            g.matmul(tokens, p)
        }
        None => Ok(tokens),
    }
}

/// Token layout on a `side×side` grid → optional width change → 2× nearest upsample, channel-first.
fn up<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    tokens: Var,
    proj: Option<ParamId>,
    side: usize,
) -> Result<Var> {
    let t = match proj {
        Some(p) => {
            let p = g.param(store, p);
            g.matmul(tokens, p)?
        }
        None => tokens,
    };
    let (_, c) = g.value(t).dims2()?;
    let chw = g.transpose(t)?;
    let chw = g.reshape(chw, &[c, side, side])?;
    g.upsample2(chw)
}

fn to_tokens<T: Element>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    match *g.shape(x) {
        [c, h, w] => {
            let flat = g.reshape(x, &[c, h * w])?;
            g.transpose(flat)
        }
        _ => Ok(x),
    }
}

/// Dual-stream forward. `main` processes the background stream and owns the head;
/// `reference` processes the reference stream (the same backbone in the shared model).
///
/// Without a reference input every block degenerates to self-attention inpainting.
pub fn unet_dual_forward<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    main: &UNetBackbone,
    reference: &UNetBackbone,
    input: &DenoiserInput<T>,
    t: f64,
) -> Result<ForwardOutput> {
    let cfg = &main.cfg;
    if reference.cfg.widths != cfg.widths
        || reference.cfg.blocks_per_level != cfg.blocks_per_level
        || reference.cfg.mid_blocks != cfg.mid_blocks
    {
        return Err(Error::Config("reference backbone plan differs from main".into()));
    }
    if cfg.in_channels != 7 || cfg.out_channels != 3 {
        return Err(Error::Config(
            "unet adapter expects 7 input and 3 output channels".into(),
        ));
    }
    check_timestep(t, cfg.timesteps)?;
    input.validate(cfg.image_size)?;
    let s = cfg.image_size;
    let bg_input = g.constant(input.background_stack()?);
    let ref_input = match input.reference_stack() {
        Some(r) => Some(g.constant(r?)),
        None => None,
    };

    let temb_bg = main.time.forward(g, store, t)?;
    let temb_ref = if std::ptr::eq(main, reference) {
        temb_bg
    } else {
        reference.time.forward(g, store, t)?
    };

    let mut bg = stem(g, store, main, bg_input)?;
    let mut rf = match ref_input {
        Some(r) => Some(stem(g, store, reference, r)?),
        None => None,
    };
    let ids = cfg.layer_ids();
    let mut layer = 0;
    let mut traces = Vec::with_capacity(cfg.depth());

    let mut run_block = |g: &mut Graph<T>,
                         pb: &UNetBlockParams,
                         pr: &UNetBlockParams,
                         bg: &mut StreamState,
                         rf: &mut Option<StreamState>,
                         side: usize|
     -> Result<()> {
        let out = dual_block_forward(
            g,
            store,
            pb,
            pr,
            bg.x,
            rf.as_ref().map(|r| r.x),
            temb_bg,
            temb_ref,
            (side, side),
            &ids[layer],
        )?;
        layer += 1;
        bg.x = out.bg;
        if let (Some(r), Some(y)) = (rf.as_mut(), out.reference) {
            r.x = y;
        }
        traces.push(out.trace);
        Ok(())
    };

    let mut side = s;
    for (lv, rlv) in main.encoder.iter().zip(&reference.encoder) {
        bg.x = down(g, store, bg.x, lv.proj, side)?;
        if let Some(r) = rf.as_mut() {
            r.x = down(g, store, r.x, rlv.proj, side)?;
        }
        side /= 2;
        for (pb, pr) in lv.blocks.iter().zip(&rlv.blocks) {
            run_block(g, pb, pr, &mut bg, &mut rf, side)?;
            bg.skips.push(bg.x);
            if let Some(r) = rf.as_mut() {
                r.skips.push(r.x);
            }
        }
    }
    for (pb, pr) in main.mid.iter().zip(&reference.mid) {
        run_block(g, pb, pr, &mut bg, &mut rf, side)?;
    }
    for (lv, rlv) in main.decoder.iter().zip(&reference.decoder) {
        bg.x = to_tokens(g, bg.x)?;
        if let Some(r) = rf.as_mut() {
            r.x = to_tokens(g, r.x)?;
        }
        for (pb, pr) in lv.blocks.iter().zip(&rlv.blocks) {
            let skip = bg.skips.pop().expect("mirrored skip");
            bg.x = g.add(bg.x, skip)?;
            if let Some(r) = rf.as_mut() {
                let skip = r.skips.pop().expect("mirrored skip");
                r.x = g.add(r.x, skip)?;
            }
            run_block(g, pb, pr, &mut bg, &mut rf, side)?;
        }
        bg.x = up(g, store, bg.x, lv.proj, side)?;
        if let Some(r) = rf.as_mut() {
            r.x = up(g, store, r.x, rlv.proj, side)?;
        }
        side *= 2;
    }

    let w0 = cfg.widths[0];
    let x = g.reshape(bg.x, &[w0, s * s])?;
    let x = g.add(x, bg.stem)?;
    let x = group_norm(g, store, x, cfg.groups, main.head_norm)?;
    let x = g.gelu(x);
    let x = g.reshape(x, &[w0, s, s])?;
    let k = g.param(store, main.head);
    let y = g.conv2d(x, k)?;
    let y = g.reshape(y, &[cfg.out_channels, s * s])?;
    let b = g.param(store, main.head_bias);
    let b = g.reshape(b, &[cfg.out_channels, 1])?;
    let y = g.add(y, b)?;
    let eps = g.reshape(y, &[cfg.out_channels, s, s])?;
    Ok(ForwardOutput { eps, traces })
}

/// Shared-parameter forward: both streams through `bb`.
pub fn unet_forward<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    bb: &UNetBackbone,
    input: &DenoiserInput<T>,
    t: f64,
) -> Result<ForwardOutput> {
    unet_dual_forward(g, store, bb, bb, input, t)
}
