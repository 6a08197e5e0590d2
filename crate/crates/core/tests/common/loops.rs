use mixcomp::attention::{mixture_attention, self_attention, AttentionParams};
use mixcomp::numerics::{Graph, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
        }
    }
    out
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Row-wise normalisation with population variance.
pub fn normalize_rows(a: &[f64], cols: usize, eps: f64) -> Vec<f64> {
    a.chunks(cols)
        .flat_map(|row| {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            row.iter()
                .map(move |v| (v - mean) / (var + eps).sqrt())
                .collect::<Vec<_>>()
        })
        .collect()
}

pub fn layer_norm(a: &[f64], cols: usize, gain: &[f64], bias: &[f64]) -> Vec<f64> {
    normalize_rows(a, cols, 1e-5)
        .iter()
        .enumerate()
        .map(|(i, v)| v * gain[i % cols] + bias[i % cols])
        .collect()
}

/// Group norm on a channel-first `c × n` matrix.
pub fn group_norm(x: &[f64], c: usize, n: usize, groups: usize, gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let normed = normalize_rows(x, c / groups * n, 1e-5);
    normed
        .iter()
        .enumerate()
        .map(|(i, v)| v * gain[i / n] + bias[i / n])
        .collect()
}

/// Zero-padded 3×3 convolution, `c_in × h × w` with kernels `[c_out, c_in, 3, 3]`.
pub fn conv3(x: &[f64], k: &[f64], c: usize, co: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; co * h * w];
    for o in 0..co {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for ci in 0..c {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (sy, sx) = (y as isize + ky - 1, xx as isize + kx - 1);
                            if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                acc += k[((o * c + ci) * 3 + ky as usize) * 3 + kx as usize]
                                    * x[(ci * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                }
                out[(o * h + y) * w + xx] = acc;
            }
        }
    }
    out
}

/// Multi-head attention of `q_in` (`tq × d`) over `ctx` (`tc × d`).
pub fn attention(q_in: &[f64], ctx: &[f64], d: usize, heads: usize, wq: &[f64], wk: &[f64], wv: &[f64]) -> Vec<f64> {
    let (tq, tc) = (q_in.len() / d, ctx.len() / d);
    let q = matmul(q_in, wq, tq, d, d);
    let k = matmul(ctx, wk, tc, d, d);
    let v = matmul(ctx, wv, tc, d, d);
    let dk = d / heads;
    let mut out = vec![0.0; tq * d];
    for h in 0..heads {
        for i in 0..tq {
            let logits: Vec<f64> = (0..tc)
                .map(|j| {
                    (0..dk)
                        .map(|c| q[i * d + h * dk + c] * k[j * d + h * dk + c])
                        .sum::<f64>()
                        / (dk as f64).sqrt()
                })
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..dk {
                out[i * d + h * dk + c] = (0..tc).map(|j| e[j] / z * v[j * d + h * dk + c]).sum();
            }
        }
    }
    out
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Per-query, per-head softmax over explicit loops.
pub fn brute_force(xq: &Tensor<f64>, ctx: &Tensor<f64>, store: &ParamStore<f64>, p: &AttentionParams) -> Vec<f64> {
    brute_force_scaled(xq, ctx, store, p, 1.0 / (p.d_k() as f64).sqrt())
}

pub fn brute_force_scaled(
    xq: &Tensor<f64>,
    ctx: &Tensor<f64>,
    store: &ParamStore<f64>,
    p: &AttentionParams,
    scale: f64,
) -> Vec<f64> {
    let (tq, d) = xq.dims2().unwrap();
    let (tc, _) = ctx.dims2().unwrap();
    let (wq, wk, wv) = (store.value(p.wq), store.value(p.wk), store.value(p.wv));
    let proj = |x: &Tensor<f64>, w: &Tensor<f64>, i: usize, j: usize| {
        (0..d).map(|k| x.at(&[i, k]) * w.at(&[k, j])).sum::<f64>()
    };
    let dk = p.d_k();
    let mut out = vec![0.0; tq * d];
    for h in 0..p.heads {
        for i in 0..tq {
            let q: Vec<f64> = (0..dk).map(|c| proj(xq, wq, i, h * dk + c)).collect();
            let logits: Vec<f64> = (0..tc)
                .map(|j| (0..dk).map(|c| q[c] * proj(ctx, wk, j, h * dk + c)).sum::<f64>() * scale)
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..dk {
                out[i * d + h * dk + c] = (0..tc).map(|j| e[j] / z * proj(ctx, wv, j, h * dk + c)).sum();
            }
        }
    }
    out
}

/// Explicit 11×11 Gaussian window at every valid position, centred moments.
pub fn naive_ssim(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let c = 5.0;
    let g: Vec<f64> = (0..11)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * 1.5 * 1.5)).exp())
        .collect();
    let z: f64 = g.iter().sum::<f64>().powi(2);
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for oy in 0..=h - 11 {
        for ox in 0..=w - 11 {
            let wt = |i: usize, j: usize| g[i] * g[j] / z;
            let px = |v: &[f64], i: usize, j: usize| v[(oy + j) * w + ox + i];
            let (mut mx, mut my) = (0.0, 0.0);
            for j in 0..11 {
                for i in 0..11 {
                    mx += wt(i, j) * px(a, i, j);
                    my += wt(i, j) * px(b, i, j);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for j in 0..11 {
                for i in 0..11 {
                    let (dx, dy) = (px(a, i, j) - mx, px(b, i, j) - my);
                    vx += wt(i, j) * dx * dx;
                    vy += wt(i, j) * dy * dy;
                    cxy += wt(i, j) * dx * dy;
                }
            }
            total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// Random attention record with `heads ∈ {1, 2, 4}` and `d ≤ 16`.
pub fn setup(seed: u64) -> (ChaCha8Rng, ParamStore<f64>, AttentionParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads = [1, 2, 4][rng.gen_range(0..3)];
    let d = heads * rng.gen_range(1..=16 / heads);
    let mut store = ParamStore::new();
    let p = AttentionParams::new(&mut store, "a", d, heads, &mut rng).unwrap();
    (rng, store, p)
}

pub fn run_self(store: &ParamStore<f64>, p: &AttentionParams, x: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = self_attention(&mut g, store, xv, p).unwrap();
    g.value(y).clone()
}

pub fn run_mix(store: &ParamStore<f64>, p: &AttentionParams, x: &Tensor<f64>, r: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let rv = g.constant(r.clone());
    let y = mixture_attention(&mut g, store, xv, rv, p).unwrap();
    g.value(y).clone()
}
