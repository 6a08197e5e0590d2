use mixcomp::dit::{dit_block_forward, DiTBlockParams};
use mixcomp::numerics::{check_gradients, check_param_gradients, Graph, ParamId, ParamStore, Tensor, Var};
use mixcomp::unet::{unet_block_forward, UNetBlockParams};
use mixcomp::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loops::{add, attention, conv3, gelu, group_norm, layer_norm, matmul, normalize_rows, transpose};

pub const TOL: f64 = 1e-4;

pub fn randomize(store: &mut ParamStore<f64>, ids: &[ParamId], std: f64, rng: &mut ChaCha8Rng) {
    for &id in ids {
        let shape = store.value(id).shape().to_vec();
        *store.value_mut(id) = Tensor::randn(&shape, std, rng);
    }
}

pub fn unet_ids(p: &UNetBlockParams) -> Vec<ParamId> {
    vec![
        p.res.norm1.0,
        p.res.norm1.1,
        p.res.conv1,
        p.res.time_proj,
        p.res.norm2.0,
        p.res.norm2.1,
        p.res.conv2,
        p.norm_attn.0,
        p.norm_attn.1,
        p.attn.wq,
        p.attn.wk,
        p.attn.wv,
        p.norm_ff.0,
        p.norm_ff.1,
        p.w1,
        p.w2,
    ]
}

pub fn dit_ids(p: &DiTBlockParams) -> Vec<ParamId> {
    vec![p.mod_w, p.mod_b, p.attn.wq, p.attn.wk, p.attn.wv, p.w_m, p.w_o]
}

/// Random-weighted sum, so every output element reaches the loss with a distinct weight.
pub fn probe(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = g.constant(Tensor::randn(&shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

// ---------- U-Net block ----------

pub struct UNetCase {
    pub store: ParamStore<f64>,
    pub p: UNetBlockParams,
    pub grid: (usize, usize),
    pub xb: Tensor<f64>,
    pub xr: Tensor<f64>,
    pub temb: Tensor<f64>,
}

pub fn unet_case(seed: u64, width: usize, heads: usize, groups: usize, side: usize) -> UNetCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let time_dim = 3;
    let mut store = ParamStore::new();
    let p = UNetBlockParams::new(&mut store, "b", width, heads, groups, time_dim, &mut rng).unwrap();
    // move the affine terms off their identity initialisation
    for (g, b) in [p.res.norm1, p.res.norm2, p.norm_attn, p.norm_ff] {
        *store.value_mut(g) = Tensor::uniform(&[width], 0.5, 1.5, &mut rng);
        *store.value_mut(b) = Tensor::randn(&[width], 0.3, &mut rng);
    }
    let n = side * side;
    UNetCase {
        xb: Tensor::randn(&[n, width], 1.0, &mut rng),
        xr: Tensor::randn(&[n, width], 1.0, &mut rng),
        temb: Tensor::randn(&[1, time_dim], 1.0, &mut rng),
        store,
        p,
        grid: (side, side),
    }
}

pub fn unet_outputs(g: &mut Graph<f64>, c: &UNetCase, store: &ParamStore<f64>, xb: Var, xr: Var) -> Result<(Var, Var)> {
    let te = g.constant(c.temb.clone());
    let out = unet_block_forward(g, store, &c.p, xb, Some(xr), te, c.grid, "d0")?;
    Ok((out.bg, out.reference.expect("reference stream")))
}

/// `R(x)` on tokens `n × c`, returning tokens.
pub fn oracle_res(c: &UNetCase, x_tok: &[f64]) -> Vec<f64> {
    let s = &c.store;
    let v = |id: ParamId| s.value(id).data().to_vec();
    let (h, w) = c.grid;
    let (n, ch) = (h * w, c.p.width);
    let x = transpose(x_tok, n, ch);
    let a = group_norm(&x, ch, n, c.p.groups, &v(c.p.res.norm1.0), &v(c.p.res.norm1.1));
    let a: Vec<f64> = a.iter().map(|&u| gelu(u)).collect();
    let mut a = conv3(&a, &v(c.p.res.conv1), ch, ch, h, w);
    let tb = matmul(c.temb.data(), &v(c.p.res.time_proj), 1, c.temb.numel(), ch);
    for (i, val) in a.iter_mut().enumerate() {
        *val += tb[i / n];
    }
    let a = group_norm(&a, ch, n, c.p.groups, &v(c.p.res.norm2.0), &v(c.p.res.norm2.1));
    let a: Vec<f64> = a.iter().map(|&u| gelu(u)).collect();
    let a = conv3(&a, &v(c.p.res.conv2), ch, ch, h, w);
    transpose(&add(&x, &a), ch, n)
}

pub fn oracle_ff(c: &UNetCase, hat: &[f64]) -> Vec<f64> {
    let s = &c.store;
    let v = |id: ParamId| s.value(id).data().to_vec();
    let d = c.p.width;
    let n = hat.len() / d;
    let ln = layer_norm(hat, d, &v(c.p.norm_ff.0), &v(c.p.norm_ff.1));
    let h: Vec<f64> = matmul(&ln, &v(c.p.w1), n, d, 4 * d)
        .iter()
        .map(|&u| u.max(0.0))
        .collect();
    add(&matmul(&h, &v(c.p.w2), n, 4 * d, d), hat)
}

pub fn oracle_unet_block(c: &UNetCase) -> (Vec<f64>, Vec<f64>) {
    let s = &c.store;
    let v = |id: ParamId| s.value(id).data().to_vec();
    let d = c.p.width;
    let heads = c.p.attn.heads;
    let (wq, wk, wv) = (v(c.p.attn.wq), v(c.p.attn.wk), v(c.p.attn.wv));
    let tilde = |x: &[f64]| layer_norm(&oracle_res(c, x), d, &v(c.p.norm_attn.0), &v(c.p.norm_attn.1));
    let (xb, xr) = (c.xb.data(), c.xr.data());
    let tr = tilde(xr);
    let yr = oracle_ff(c, &add(xr, &attention(&tr, &tr, d, heads, &wq, &wk, &wv)));
    let tb = tilde(xb);
    let ctx = [tb.clone(), tr].concat();
    let yb = oracle_ff(c, &add(xb, &attention(&tb, &ctx, d, heads, &wq, &wk, &wv)));
    (yb, yr)
}

pub struct DiTCase {
    pub store: ParamStore<f64>,
    pub p: DiTBlockParams,
    pub hb: Tensor<f64>,
    pub hr: Tensor<f64>,
    pub tau: Tensor<f64>,
}

pub fn dit_case(seed: u64, width: usize, heads: usize, tokens: usize) -> DiTCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let time_dim = 3;
    let mut store = ParamStore::new();
    let p = DiTBlockParams::new(&mut store, "b", width, heads, time_dim, &mut rng).unwrap();
    // AdaLN-Zero starts with a closed gate; open it so every path carries gradient
    randomize(&mut store, &[p.mod_w, p.mod_b], 0.5, &mut rng);
    DiTCase {
        hb: Tensor::randn(&[tokens, width], 1.0, &mut rng),
        hr: Tensor::randn(&[tokens, width], 1.0, &mut rng),
        tau: Tensor::randn(&[1, time_dim], 1.0, &mut rng),
        store,
        p,
    }
}

pub fn dit_outputs(g: &mut Graph<f64>, c: &DiTCase, store: &ParamStore<f64>, hb: Var, hr: Var) -> Result<(Var, Var)> {
    let tau = g.constant(c.tau.clone());
    let tokens = c.hb.shape()[0];
    let out = dit_block_forward(g, store, &c.p, hb, Some(hr), tau, (1, tokens), "b0")?;
    Ok((out.bg, out.reference.expect("reference stream")))
}

pub fn oracle_dit_block(c: &DiTCase) -> (Vec<f64>, Vec<f64>) {
    let s = &c.store;
    let v = |id: ParamId| s.value(id).data().to_vec();
    let d = c.p.width;
    let td = c.tau.numel();
    let act: Vec<f64> = c.tau.data().iter().map(|&u| gelu(u)).collect();
    let m = add(&matmul(&act, &v(c.p.mod_w), 1, td, 3 * d), &v(c.p.mod_b));
    let (shift, scale, gate) = (&m[..d], &m[d..2 * d], &m[2 * d..]);
    let modulate = |h: &[f64]| -> Vec<f64> {
        normalize_rows(h, d, 1e-6)
            .iter()
            .enumerate()
            .map(|(i, u)| u * (1.0 + scale[i % d]) + shift[i % d])
            .collect()
    };
    let (wq, wk, wv) = (v(c.p.attn.wq), v(c.p.attn.wk), v(c.p.attn.wv));
    let fuse = |h: &[f64], tilde: &[f64], attn: &[f64]| -> Vec<f64> {
        let n = h.len() / d;
        let mlp: Vec<f64> = matmul(tilde, &v(c.p.w_m), n, d, 4 * d)
            .iter()
            .map(|&u| gelu(u))
            .collect();
        let cat: Vec<f64> = (0..n)
            .flat_map(|r| {
                attn[r * d..(r + 1) * d]
                    .iter()
                    .chain(&mlp[r * 4 * d..(r + 1) * 4 * d])
                    .copied()
                    .collect::<Vec<_>>()
            })
            .collect();
        let u = matmul(&cat, &v(c.p.w_o), n, 5 * d, d);
        h.iter()
            .zip(&u)
            .enumerate()
            .map(|(i, (hv, uv))| hv + uv * gate[i % d])
            .collect()
    };
    let heads = c.p.attn.heads;
    let (hb, hr) = (c.hb.data(), c.hr.data());
    let tr = modulate(hr);
    let yr = fuse(hr, &tr, &attention(&tr, &tr, d, heads, &wq, &wk, &wv));
    let tb = modulate(hb);
    let ctx = [tb.clone(), tr].concat();
    let yb = fuse(hb, &tb, &attention(&tb, &ctx, d, heads, &wq, &wk, &wv));
    (yb, yr)
}

fn checked(what: &str, r: mixcomp::numerics::GradCheckReport) -> std::result::Result<f64, String> {
    if r.passed() {
        Ok(r.max_rel_err)
    } else {
        Err(format!("{what}: {:?}", r.worst))
    }
}

/// Input and parameter gradient checks of one random U-Net block; returns the worst relative error.
pub fn unet_gradient_instance(i: u64) -> std::result::Result<f64, String> {
    let (width, heads, groups) = if i.is_multiple_of(2) { (4, 2, 2) } else { (8, 2, 4) };
    let mut c = unet_case(1000 + i, width, heads, groups, 2);
    let ids = unet_ids(&c.p);
    let loss = |g: &mut Graph<f64>, store: &ParamStore<f64>, xb: Var, xr: Var, c: &UNetCase| {
        let (yb, yr) = unet_outputs(g, c, store, xb, xr)?;
        let both = g.concat(&[yb, yr], 0)?;
        probe(g, both, i)
    };
    let inputs = [c.xb.clone(), c.xr.clone()];
    let r = check_gradients(|g, v| loss(g, &c.store, v[0], v[1], &c), &inputs, TOL).map_err(|e| e.to_string())?;
    let a = checked("input gradients", r)?;
    let mut store = std::mem::take(&mut c.store);
    let r = check_param_gradients(
        |g, s| {
            let xb = g.constant(c.xb.clone());
            let xr = g.constant(c.xr.clone());
            loss(g, s, xb, xr, &c)
        },
        &mut store,
        &ids,
        TOL,
    )
    .map_err(|e| e.to_string())?;
    Ok(a.max(checked("parameter gradients", r)?))
}

/// Same as [`unet_gradient_instance`] for a DiT block with an opened gate.
pub fn dit_gradient_instance(i: u64) -> std::result::Result<f64, String> {
    let (width, heads) = if i.is_multiple_of(2) { (4, 2) } else { (8, 2) };
    let mut c = dit_case(2000 + i, width, heads, 3);
    let ids = dit_ids(&c.p);
    let loss = |g: &mut Graph<f64>, s: &ParamStore<f64>, hb: Var, hr: Var, c: &DiTCase| {
        let (yb, yr) = dit_outputs(g, c, s, hb, hr)?;
        let both = g.concat(&[yb, yr], 0)?;
        probe(g, both, i)
    };
    let inputs = [c.hb.clone(), c.hr.clone()];
    let r = check_gradients(|g, v| loss(g, &c.store, v[0], v[1], &c), &inputs, TOL).map_err(|e| e.to_string())?;
    let a = checked("input gradients", r)?;
    let mut store = std::mem::take(&mut c.store);
    let r = check_param_gradients(
        |g, s| {
            let hb = g.constant(c.hb.clone());
            let hr = g.constant(c.hr.clone());
            loss(g, s, hb, hr, &c)
        },
        &mut store,
        &ids,
        TOL,
    )
    .map_err(|e| e.to_string())?;
    Ok(a.max(checked("parameter gradients", r)?))
}
