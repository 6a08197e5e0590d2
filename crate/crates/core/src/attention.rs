//! Reference-stream self-attention and background-stream mixture attention.
//!
//! Both operators share one projection record. Mixture attention draws queries
//! from the background tokens only and keys/values from the background tokens
//! followed by the reference tokens.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Element, Graph, Init, ParamId, ParamStore, Var};

/// Which stream a block input belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamTag {
    Reference,
    Background,
}

/// Bias-free query/key/value projections plus head layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub d_model: usize,
    pub heads: usize,
}

impl AttentionParams {
    pub fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "d_model {d_model} not divisible by {heads} heads"
            )));
        }
        let init = Init::FanIn(d_model);
        Ok(Self {
            wq: store.init(format!("{prefix}.wq"), &[d_model, d_model], init, rng),
            wk: store.init(format!("{prefix}.wk"), &[d_model, d_model], init, rng),
            wv: store.init(format!("{prefix}.wv"), &[d_model, d_model], init, rng),
            d_model,
            heads,
        })
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }
}

fn check_tokens<T: Element>(g: &Graph<T>, x: Var, p: &AttentionParams, what: &'static str) -> Result<usize> {
    match g.shape(x) {
        &[t, d] if d == p.d_model => Ok(t),
        s => Err(Error::shape(
            what,
            format!("expected T×{} tokens, got {:?}", p.d_model, s),
        )),
    }
}

/// Multi-head scaled dot-product attention of `queries` over `context`.
fn attend<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    queries: Var,
    context: Var,
    p: &AttentionParams,
) -> Result<Var> {
    let wq = g.param(store, p.wq);
    let wk = g.param(store, p.wk);
    let wv = g.param(store, p.wv);
    let q = g.matmul(queries, wq)?;
    let k = g.matmul(context, wk)?;
    let v = g.matmul(context, wv)?;
    let dk = p.d_k();
    let scale = 1.0 / (dk as f64).sqrt();
    let mut heads = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let (qh, kh, vh) = if p.heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice(q, 1, h * dk, dk)?,
                g.slice(k, 1, h * dk, dk)?,
                g.slice(v, 1, h * dk, dk)?,
            )
        };
        let kt = g.transpose(kh)?;
        let logits = g.matmul(qh, kt)?;
        let logits = g.scale(logits, scale);
        let weights = g.softmax(logits, 1)?;
        heads.push(g.matmul(weights, vh)?);
    }
    if heads.len() == 1 {
        Ok(heads[0])
    } else {
        g.concat(&heads, 1)
    }
}

/// `softmax(QKᵀ/√d_k)V` per head with Q, K, V all projected from `x`.
pub fn self_attention<T: Element>(g: &mut Graph<T>, store: &ParamStore<T>, x: Var, p: &AttentionParams) -> Result<Var> {
    if check_tokens(g, x, p, "self_attention")? == 0 {
        return Err(Error::Empty("self_attention query set"));
    }
    attend(g, store, x, x, p)
}

/// Queries from `x_bg`; keys and values from `cat(x_bg, x_ref)` along the token axis.
///
/// An empty reference (`T_r = 0`) reduces exactly to [`self_attention`].
pub fn mixture_attention<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    x_bg: Var,
    x_ref: Var,
    p: &AttentionParams,
) -> Result<Var> {
    if check_tokens(g, x_bg, p, "mixture_attention")? == 0 {
        return Err(Error::Empty("mixture_attention query set"));
    }
    let t_ref = match g.shape(x_ref) {
        &[t, d] if d == p.d_model => t,
        &[0] | &[0, _] => 0,
        s => {
            return Err(Error::shape(
                "mixture_attention",
                format!("reference tokens {:?} do not match background width {}", s, p.d_model),
            ))
        }
    };
    if t_ref == 0 {
        return attend(g, store, x_bg, x_bg, p);
    }
    let context = g.concat(&[x_bg, x_ref], 0)?;
    attend(g, store, x_bg, context, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::SeedableRng;

    fn setup(d: usize, heads: usize) -> (ParamStore<f64>, AttentionParams, rand_chacha::ChaCha8Rng) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let p = AttentionParams::new(&mut store, "attn", d, heads, &mut rng).unwrap();
        (store, p, rng)
    }

    #[test]
    fn single_token_returns_value_projection() {
        let (store, p, mut rng) = setup(6, 2);
        let x = Tensor::randn(&[1, 6], 1.0, &mut rng);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = self_attention(&mut g, &store, xv, &p).unwrap();
        let expect = crate::numerics::ops::matmul(&x, store.value(p.wv)).unwrap();
        assert!(g.value(y).max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let (store, p, _) = setup(4, 2);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3, 4]));
        let y = self_attention(&mut g, &store, x, &p).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_query_set_is_rejected() {
        let (store, p, _) = setup(4, 1);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[0, 4]));
        assert!(matches!(self_attention(&mut g, &store, x, &p), Err(Error::Empty(_))));
    }

    #[test]
    fn width_mismatch_is_a_shape_error() {
        let (store, p, _) = setup(4, 1);
        let mut g = Graph::new();
        let bg = g.constant(Tensor::zeros(&[2, 4]));
        let r = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(
            mixture_attention(&mut g, &store, bg, r, &p),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn heads_must_divide_width() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        assert!(AttentionParams::new(&mut store, "a", 6, 4, &mut rng).is_err());
    }

    #[test]
    fn scalar_mixture_example() {
        let mut store = ParamStore::<f64>::new();
        let one = || Tensor::full(&[1, 1], 1.0);
        let p = AttentionParams {
            wq: store.add("q", one()),
            wk: store.add("k", one()),
            wv: store.add("v", one()),
            d_model: 1,
            heads: 1,
        };
        let mut g = Graph::new();
        let bg = g.constant(Tensor::full(&[1, 1], 1.0));
        let r = g.constant(Tensor::full(&[1, 1], 3.0));
        let y = mixture_attention(&mut g, &store, bg, r, &p).unwrap();
        // logits [1, 3] -> weights [e/(e+e^3), e^3/(e+e^3)]
        let w0 = 1f64.exp() / (1f64.exp() + 3f64.exp());
        let expect = w0 * 1.0 + (1.0 - w0) * 3.0;
        assert!((g.value(y).data()[0] - expect).abs() < 1e-12);
        assert!((g.value(y).data()[0] - 2.76159).abs() < 1e-5);
    }
}
