//! Forward kernels of the array engine.
//!
//! Each function is a pure map from tensors to a tensor. [`super::Graph`] calls
//! these for the forward pass and pairs every one with its adjoint.

use super::tensor::{axis_split, Element, Tensor};
use crate::error::{Error, Result};

/// How the second operand of a binary op is expanded against the first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Broadcast {
    /// Identical shapes.
    Same,
    /// `b` holds one value per column of `a` (shape `[n]` or `[1, n]`), repeated down the rows.
    Row,
    /// `b` holds one value per row of rank-2 `a` (shape `[m, 1]`), repeated across columns.
    Col,
    /// `b` is a single value.
    Scalar,
}

impl Broadcast {
    pub fn resolve(a: &[usize], b: &[usize]) -> Result<Self> {
        if a == b {
            return Ok(Broadcast::Same);
        }
        let bn: usize = b.iter().product();
        if bn == 1 {
            return Ok(Broadcast::Scalar);
        }
        let last = *a.last().unwrap_or(&1);
        let row_like = match b {
            [n] => *n == last,
            [1, n] => *n == last,
            _ => false,
        };
        if row_like && !a.is_empty() {
            return Ok(Broadcast::Row);
        }
        if let ([m, _], [bm, 1]) = (a, b) {
            if m == bm {
                return Ok(Broadcast::Col);
            }
        }
        Err(Error::shape(
            "broadcast",
            format!("cannot broadcast {b:?} against {a:?}"),
        ))
    }

    /// Index into `b` for flat index `i` of `a` with last extent `cols`.
    #[inline]
    pub(crate) fn index(self, i: usize, cols: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Row => i % cols,
            Broadcast::Col => i / cols,
            Broadcast::Scalar => 0,
        }
    }
}

pub(crate) fn zip_broadcast<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    bc: Broadcast,
    f: impl Fn(T, T) -> T,
) -> Tensor<T> {
    let cols = *a.shape().last().unwrap_or(&1);
    let bd = b.data();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| f(x, bd[bc.index(i, cols)]))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

/// Reduces a full-shape gradient back onto the broadcast operand's shape.
pub(crate) fn reduce_broadcast<T: Element>(g: &Tensor<T>, b_shape: &[usize], bc: Broadcast) -> Tensor<T> {
    if bc == Broadcast::Same {
        return g.clone();
    }
    let cols = *g.shape().last().unwrap_or(&1);
    let mut out = Tensor::zeros(b_shape);
    let od = out.data_mut();
    for (i, &v) in g.data().iter().enumerate() {
        od[bc.index(i, cols)] += v;
    }
    out
}

/// Standard matrix product of `m×k` and `k×n`.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!("inner extents differ: {:?} · {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = vec![T::zero(); m * n];
    T::gemm(m, k, n, a.data(), false, b.data(), false, &mut out, false);
    Tensor::new(vec![m, n], out)
}

pub fn transpose<T: Element>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = a.dims2()?;
    let src = a.data();
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = src[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Max-subtracted softmax along `axis`, accumulated in 64-bit.
pub fn softmax<T: Element>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::shape(
            "softmax",
            format!("axis {axis} invalid for shape {:?}", x.shape()),
        ));
    }
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    let mut buf = vec![0.0f64; len];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut mx = f64::NEG_INFINITY;
            for j in 0..len {
                let v = src[base + j * inner].to_f64();
                buf[j] = v;
                mx = mx.max(v);
            }
            let mut sum = 0.0;
            for b in buf.iter_mut() {
                *b = (*b - mx).exp();
                sum += *b;
            }
            for j in 0..len {
                out[base + j * inner] = T::from_f64(buf[j] / sum);
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Zero-mean, unit-variance rows over the last axis. Returns `(y, mean, rstd)` per row.
pub(crate) fn normalize_rows<T: Element>(x: &Tensor<T>, eps: f64) -> (Tensor<T>, Vec<f64>, Vec<f64>) {
    let cols = *x.shape().last().unwrap_or(&1);
    let rows = x.numel() / cols.max(1);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    let mut means = Vec::with_capacity(rows);
    let mut rstds = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &src[r * cols..(r + 1) * cols];
        let mean = row.iter().map(|v| v.to_f64()).sum::<f64>() / cols as f64;
        let var = row
            .iter()
            .map(|v| {
                let d = v.to_f64() - mean;
                d * d
            })
            .sum::<f64>()
            / cols as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        for (o, v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            *o = T::from_f64((v.to_f64() - mean) * rstd);
        }
        means.push(mean);
        rstds.push(rstd);
    }
    (
        Tensor::new(x.shape().to_vec(), out).expect("shape preserved"),
        means,
        rstds,
    )
}

/// Layer normalisation over the last axis with elementwise affine `gain`, `bias`.
pub fn layer_norm<T: Element>(x: &Tensor<T>, gain: &Tensor<T>, bias: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let cols = *x.shape().last().unwrap_or(&1);
    if gain.numel() != cols || bias.numel() != cols {
        return Err(Error::shape(
            "layer_norm",
            format!(
                "affine extents {:?}/{:?} do not match normalized extent {cols}",
                gain.shape(),
                bias.shape()
            ),
        ));
    }
    let (y, _, _) = normalize_rows(x, eps);
    let scaled = zip_broadcast(&y, gain, Broadcast::Row, |a, g| a * g);
    Ok(zip_broadcast(&scaled, bias, Broadcast::Row, |a, b| a + b))
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * INV_SQRT_2))
}

#[inline]
pub(crate) fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

#[inline]
pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    normal_cdf(x) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::from_f64(gelu_scalar(v.to_f64())))
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

fn conv_dims<T: Element>(x: &Tensor<T>, k: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    let (c, h, w) = match x.shape() {
        &[c, h, w] => (c, h, w),
        s => return Err(Error::shape("conv2d", format!("input must be C×H×W, got {s:?}"))),
    };
    match k.shape() {
        &[co, ci, 3, 3] if ci == c => Ok((c, h, w, co)),
        s => Err(Error::shape(
            "conv2d",
            format!(
                "kernels {s:?} incompatible with input {:?} (need C'×{c}×3×3)",
                x.shape()
            ),
        )),
    }
}

/// Unfolds 3×3 neighbourhoods (zero padding 1) into a `(C·9)×(H·W)` matrix.
pub(crate) fn im2col<T: Element>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut cols = vec![T::zero(); c * 9 * hw];
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    for (xo, d) in dst.iter_mut().enumerate() {
                        let sx = xo as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            *d = src[sx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
pub(crate) fn col2im<T: Element>(cols: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::zero(); c * hw];
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..][..w];
                    let dst = &mut plane[sy as usize * w..][..w];
                    for (xo, &v) in src.iter().enumerate() {
                        let sx = xo as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// 3×3 cross-correlation, stride 1, zero padding 1.
pub fn conv2d<T: Element>(x: &Tensor<T>, kernels: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w, co) = conv_dims(x, kernels)?;
    let cols = im2col(x.data(), c, h, w);
    let mut out = vec![T::zero(); co * h * w];
    T::gemm(co, c * 9, h * w, kernels.data(), false, &cols, false, &mut out, false);
    Tensor::new(vec![co, h, w], out)
}

pub(crate) fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    gy: &Tensor<T>,
    need_x: bool,
    need_k: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (c, h, w, co) = conv_dims(x, kernels).expect("validated in forward");
    let hw = h * w;
    let gk = need_k.then(|| {
        let cols = im2col(x.data(), c, h, w);
        let mut gk = vec![T::zero(); co * c * 9];
        T::gemm(co, hw, c * 9, gy.data(), false, &cols, true, &mut gk, false);
        Tensor::new(kernels.shape().to_vec(), gk).expect("kernel shape")
    });
    let gx = need_x.then(|| {
        let mut gcols = vec![T::zero(); c * 9 * hw];
        T::gemm(c * 9, co, hw, kernels.data(), true, gy.data(), false, &mut gcols, false);
        Tensor::new(vec![c, h, w], col2im(&gcols, c, h, w)).expect("input shape")
    });
    (gx, gk)
}

/// Joins tensors along `axis`; all other extents must agree.
pub fn concat<T: Element>(xs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = xs.first().ok_or(Error::Empty("concat of zero tensors"))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(Error::shape("concat", format!("axis {axis} invalid for rank {rank}")));
    }
    for x in xs {
        let ok = x.rank() == rank
            && x.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::shape(
                "concat",
                format!(
                    "extent mismatch off axis {axis}: {:?} vs {:?}",
                    first.shape(),
                    x.shape()
                ),
            ));
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = xs.iter().map(|x| x.shape()[axis]).sum();
    let (outer, _, inner) = axis_split(first.shape(), axis);
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for x in xs {
            let chunk = x.shape()[axis] * inner;
            data.extend_from_slice(&x.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Tensor::new(shape, data)
}

/// Sub-range `[start, start+len)` of `axis`.
pub fn slice<T: Element>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() || start + len > x.shape()[axis] {
        return Err(Error::shape(
            "slice",
            format!("[{start}, {}) on axis {axis} of {:?}", start + len, x.shape()),
        ));
    }
    let (outer, ext, inner) = axis_split(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * ext * inner + start * inner;
        data.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    Tensor::new(shape, data)
}

fn chw<T: Element>(x: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    match x.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(Error::shape(op, format!("expected C×H×W, got {s:?}"))),
    }
}

/// 2×2 mean pooling with stride 2.
pub fn avg_pool2<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = chw(x, "avg_pool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("avg_pool2", format!("odd extent {h}×{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let src = x.data();
    let mut out = vec![T::zero(); c * ho * wo];
    for ci in 0..c {
        for y in 0..ho {
            for xo in 0..wo {
                let b = ci * h * w + 2 * y * w + 2 * xo;
                out[ci * ho * wo + y * wo + xo] = (src[b] + src[b + 1] + src[b + w] + src[b + w + 1]) * quarter;
            }
        }
    }
    Tensor::new(vec![c, ho, wo], out)
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = chw(x, "upsample2")?;
    let (ho, wo) = (h * 2, w * 2);
    let src = x.data();
    let mut out = vec![T::zero(); c * ho * wo];
    for ci in 0..c {
        for y in 0..ho {
            for xo in 0..wo {
                out[ci * ho * wo + y * wo + xo] = src[ci * h * w + (y / 2) * w + xo / 2];
            }
        }
    }
    Tensor::new(vec![c, ho, wo], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn matmul_identity_and_scalar() {
        let a = Tensor::<f64>::randn(&[3, 3], 1.0, &mut rng());
        assert_eq!(matmul(&a, &Tensor::eye(3)).unwrap(), a);
        let p = matmul(
            &Tensor::<f64>::scalar(2.0).reshape(&[1, 1]).unwrap(),
            &Tensor::scalar(3.0).reshape(&[1, 1]).unwrap(),
        )
        .unwrap();
        assert_eq!(p.data(), &[6.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::<f32>::zeros(&[2, 3]), &Tensor::zeros(&[4, 2])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&Tensor::<f64>::from_f64(&[2], &[0.0, 0.0]).unwrap(), 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Tensor::<f64>::from_f64(&[2], &[1.0, 3.0]).unwrap(), 0).unwrap();
        // direct exponentiation
        let e1 = 1f64.exp();
        let e3 = 3f64.exp();
        assert!((s.data()[0] - e1 / (e1 + e3)).abs() < 1e-15);
        assert!((s.data()[0] - 0.11920).abs() < 1e-5);
        assert!((s.data()[1] - 0.88080).abs() < 1e-5);
        assert!(softmax(&Tensor::<f64>::zeros(&[2]), 1).is_err());
    }

    #[test]
    fn softmax_inner_axis() {
        let x = Tensor::<f64>::randn(&[3, 4, 5], 2.0, &mut rng());
        let s = softmax(&x, 1).unwrap();
        for o in 0..3 {
            for i in 0..5 {
                let sum: f64 = (0..4).map(|j| s.at(&[o, j, i])).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_examples() {
        let ones = Tensor::<f64>::ones(&[3]);
        let zeros = Tensor::<f64>::zeros(&[3]);
        let c = Tensor::<f64>::full(&[1, 3], 4.2);
        assert!(layer_norm(&c, &ones, &zeros, 1e-5)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let x = Tensor::<f64>::from_f64(&[1, 3], &[1.0, 2.0, 3.0]).unwrap();
        let y = layer_norm(&x, &ones, &zeros, 1e-5).unwrap();
        // (x - 2) / sqrt(2/3 + 1e-5)
        let expect = [-1.22474, 0.0, 1.22474];
        for (a, b) in y.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-4);
        }
        assert!(layer_norm(&x, &Tensor::ones(&[2]), &zeros, 1e-5).is_err());
    }

    #[test]
    fn gelu_examples() {
        let g = |v: f64| gelu(&Tensor::<f64>::scalar(v)).data()[0];
        assert_eq!(g(0.0), 0.0);
        assert!((g(10.0) - 10.0).abs() < 1e-6);
        assert!((g(1.0) - 0.841_345).abs() < 1e-4);
        assert!((gelu_grad_scalar(0.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn relu_examples() {
        let x = Tensor::<f32>::from_f64(&[3], &[-1.0, 0.0, 2.0]).unwrap();
        let r = relu(&x);
        assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(&r), r);
    }

    #[test]
    fn conv_identity_and_box() {
        let x = Tensor::<f64>::randn(&[1, 5, 6], 1.0, &mut rng());
        let mut delta = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        delta.data_mut()[4] = 1.0;
        assert_eq!(conv2d(&x, &delta).unwrap(), x);

        let c = Tensor::<f64>::full(&[1, 4, 4], 1.5);
        let y = conv2d(&c, &Tensor::ones(&[1, 1, 3, 3])).unwrap();
        assert_eq!(y.at(&[0, 1, 1]), 13.5);
        assert_eq!(y.at(&[0, 2, 2]), 13.5);
        assert_eq!(y.at(&[0, 0, 0]), 6.0);
        assert!(conv2d(&c, &Tensor::ones(&[1, 2, 3, 3])).is_err());
    }

    #[test]
    fn concat_and_slice() {
        let a = Tensor::<f32>::from_fn(&[3, 2], |i| i as f32);
        let b = Tensor::<f32>::from_fn(&[5, 2], |i| 100.0 + i as f32);
        assert_eq!(concat(&[&a], 0).unwrap(), a);
        let c = concat(&[&a, &b], 0).unwrap();
        assert_eq!(c.shape(), &[8, 2]);
        assert_eq!(slice(&c, 0, 0, 3).unwrap(), a);
        assert_eq!(slice(&c, 0, 3, 5).unwrap(), b);
        assert!(concat(&[&a, &Tensor::zeros(&[1, 3])], 0).is_err());
        let d = concat(&[&a, &a], 1).unwrap();
        assert_eq!(d.shape(), &[3, 4]);
        assert_eq!(slice(&d, 1, 2, 2).unwrap(), a);
    }

    #[test]
    fn pool_and_upsample() {
        let x = Tensor::<f64>::from_fn(&[1, 2, 2], |i| i as f64);
        assert_eq!(avg_pool2(&x).unwrap().data(), &[1.5]);
        let u = upsample2(&x).unwrap();
        assert_eq!(u.shape(), &[1, 4, 4]);
        assert_eq!(avg_pool2(&u).unwrap(), x);
    }

    #[test]
    fn broadcast_resolution() {
        assert_eq!(Broadcast::resolve(&[4, 3], &[3]).unwrap(), Broadcast::Row);
        assert_eq!(Broadcast::resolve(&[4, 3], &[1, 3]).unwrap(), Broadcast::Row);
        assert_eq!(Broadcast::resolve(&[4, 3], &[4, 1]).unwrap(), Broadcast::Col);
        assert_eq!(Broadcast::resolve(&[4, 3], &[1]).unwrap(), Broadcast::Scalar);
        assert!(Broadcast::resolve(&[4, 3], &[2]).is_err());
    }
}
