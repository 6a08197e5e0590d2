use mixcomp::numerics::{check_gradients, Graph, Tensor, Var};
use mixcomp::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-4;

type OpFn = fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

/// Every differentiable graph op with the input shapes it is checked at.
pub const OP_CASES: &[(&str, &[&[usize]], OpFn)] = &[
    ("matmul", &[&[3, 4], &[4, 2]], |g, v| g.matmul(v[0], v[1])),
    ("transpose", &[&[3, 4]], |g, v| g.transpose(v[0])),
    ("add_row", &[&[3, 4], &[4]], |g, v| g.add(v[0], v[1])),
    ("sub_col", &[&[3, 4], &[3, 1]], |g, v| g.sub(v[0], v[1])),
    ("mul_same", &[&[3, 4], &[3, 4]], |g, v| g.mul(v[0], v[1])),
    ("mul_scalar", &[&[3, 4], &[1]], |g, v| g.mul(v[0], v[1])),
    ("scale", &[&[5]], |g, v| Ok(g.scale(v[0], -1.7))),
    ("softmax_rows", &[&[3, 5]], |g, v| g.softmax(v[0], 1)),
    ("softmax_cols", &[&[3, 5]], |g, v| g.softmax(v[0], 0)),
    ("normalize", &[&[3, 6]], |g, v| Ok(g.normalize(v[0], 1e-5))),
    ("layer_norm", &[&[3, 6], &[6], &[6]], |g, v| {
        g.layer_norm(v[0], v[1], v[2], 1e-5)
    }),
    ("gelu", &[&[4, 3]], |g, v| Ok(g.gelu(v[0]))),
    ("relu", &[&[4, 3]], |g, v| Ok(g.relu(v[0]))),
    ("conv2d", &[&[2, 4, 4], &[3, 2, 3, 3]], |g, v| g.conv2d(v[0], v[1])),
    ("concat", &[&[2, 3], &[4, 3]], |g, v| g.concat(&[v[0], v[1]], 0)),
    ("slice", &[&[3, 6]], |g, v| g.slice(v[0], 1, 2, 3)),
    ("reshape", &[&[3, 4]], |g, v| g.reshape(v[0], &[2, 6])),
    ("gather", &[&[6]], |g, v| g.gather(v[0], vec![5, 0, 0, 3], &[2, 2])),
    ("avg_pool2", &[&[2, 4, 4]], |g, v| g.avg_pool2(v[0])),
    ("upsample2", &[&[2, 2, 3]], |g, v| g.upsample2(v[0])),
    ("sum", &[&[3, 4]], |g, v| Ok(g.sum(v[0]))),
    ("mean", &[&[3, 4]], |g, v| Ok(g.mean(v[0]))),
    ("mse", &[&[3, 4], &[3, 4]], |g, v| g.mse(v[0], v[1])),
    ("linear", &[&[3, 4], &[4, 5]], |g, v| g.linear(v[0], v[1])),
];

/// Weighted sum with fixed random weights makes every output element matter.
fn probe(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = g.constant(Tensor::randn(&shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

/// Central-difference check of one op over `instances` random inputs; returns the worst relative error.
pub fn check_op(name: &str, shapes: &[&[usize]], f: OpFn, instances: u64) -> std::result::Result<f64, String> {
    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut r = ChaCha8Rng::seed_from_u64(1000 + i);
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| Tensor::randn(s, 1.0, &mut r)).collect();
        let report = check_gradients(
            |g, v| {
                let y = f(g, v)?;
                probe(g, y, 7 + i)
            },
            &inputs,
            TOL,
        )
        .map_err(|e| format!("{name}: {e}"))?;
        if !report.passed() {
            return Err(format!("{name} instance {i}: {:?}", report.worst));
        }
        worst = worst.max(report.max_rel_err);
    }
    Ok(worst)
}
