//! Central finite-difference checks of tape gradients.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps near-zero gradients
/// from turning rounding noise into large relative errors.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() / denom
}

/// Compare the gradient of `f` w.r.t. every element of every input
/// against central differences with step `h`. `f` must build a scalar.
pub fn gradcheck<F>(inputs: &[Tensor], f: F, h: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect::<Result<_>>()?;
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("leaf gradient").to_vec())
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed
            .iter()
            .map(|x| t.constant(x.clone()))
            .collect::<Result<_>>()?;
        let o = f(&mut t, &vs)?;
        Ok(t.scalar(o))
    };

    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        for k in 0..input.len() {
            let orig = input.data()[k];
            work[which].data_mut()[k] = orig + h;
            let up = eval(&work)?;
            work[which].data_mut()[k] = orig - h;
            let down = eval(&work)?;
            work[which].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[which][k];
            report.max_rel_err = report.max_rel_err.max(relative_error(a, numeric));
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Every differentiable primitive on the tape, by name.
pub const PRIMITIVES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "add_bias",
    "affine",
    "matmul",
    "relu",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "abs",
    "clamp",
    "sum",
    "mean",
    "sum_last",
    "max_last",
    "conv1d",
    "concat_last",
    "gather_rows",
    "reshape",
    "transpose",
    "logsumexp",
];

const KINK_GAP: f64 = 1e-3;

fn sample_away_from<R: rand::Rng>(rng: &mut R, kinks: &[f64]) -> f64 {
    loop {
        let v: f64 = rng.gen_range(-2.0..2.0);
        if kinks.iter().all(|k| (v - k).abs() > KINK_GAP) {
            return v;
        }
    }
}

fn random_tensor<R: rand::Rng>(rng: &mut R, shape: &[usize], kinks: &[f64]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| sample_away_from(rng, kinks)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Rows whose two largest entries are separated, so max-pool has no
/// near-tie inside the finite-difference step.
fn separated_rows<R: rand::Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = *shape.last().unwrap();
    loop {
        let t = random_tensor(rng, shape, &[]);
        let ok = t.data().chunks(n).all(|row| {
            let mut s = row.to_vec();
            s.sort_by(|a, b| b.partial_cmp(a).unwrap());
            s.len() < 2 || s[0] - s[1] > KINK_GAP
        });
        if ok {
            return t;
        }
    }
}

/// Reduce an arbitrary output to a scalar with fixed random weights so that
/// every output element contributes to the checked gradient.
fn weighted_sum(t: &mut Tape, y: Var, weights: &Tensor) -> Result<Var> {
    let w = t.constant(weights.clone())?;
    let p = t.mul(y, w)?;
    t.sum(p)
}

/// Run a finite-difference check of one primitive on a random case.
pub fn check_primitive<R: rand::Rng>(name: &str, rng: &mut R, h: f64) -> Result<GradcheckReport> {
    let d = |rng: &mut R| rng.gen_range(1..=4usize);
    let (a, b, c) = (d(rng), d(rng), d(rng));
    let out_weights = |rng: &mut R, shape: &[usize]| random_tensor(rng, shape, &[]);

    macro_rules! unary {
        ($shape:expr, $kinks:expr, $f:expr) => {{
            let shape: Vec<usize> = $shape;
            let x = random_tensor(rng, &shape, $kinks);
            let probe = {
                let mut t = Tape::new();
                let v = t.constant(x.clone())?;
                let y = $f(&mut t, v)?;
                t.shape(y).to_vec()
            };
            let w = out_weights(rng, &probe);
            gradcheck(
                &[x],
                |t, v| {
                    let y = $f(t, v[0])?;
                    weighted_sum(t, y, &w)
                },
                h,
            )
        }};
    }

    match name {
        "add" | "sub" | "mul" => {
            let shape = vec![a, b];
            let x = random_tensor(rng, &shape, &[]);
            let y = random_tensor(rng, &shape, &[]);
            let w = out_weights(rng, &shape);
            gradcheck(
                &[x, y],
                |t, v| {
                    let z = match name {
                        "add" => t.add(v[0], v[1])?,
                        "sub" => t.sub(v[0], v[1])?,
                        _ => t.mul(v[0], v[1])?,
                    };
                    weighted_sum(t, z, &w)
                },
                h,
            )
        }
        "add_bias" => {
            let x = random_tensor(rng, &[a, b, c], &[]);
            let bias = random_tensor(rng, &[c], &[]);
            let w = out_weights(rng, &[a, b, c]);
            gradcheck(
                &[x, bias],
                |t, v| {
                    let z = t.add_bias(v[0], v[1])?;
                    weighted_sum(t, z, &w)
                },
                h,
            )
        }
        "affine" => {
            let (s, o) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            unary!(vec![a, b], &[], |t: &mut Tape, v| t.affine(v, s, o))
        }
        "matmul" => {
            let x = random_tensor(rng, &[a, b], &[]);
            let y = random_tensor(rng, &[b, c], &[]);
            let w = out_weights(rng, &[a, c]);
            gradcheck(
                &[x, y],
                |t, v| {
                    let z = t.matmul(v[0], v[1])?;
                    weighted_sum(t, z, &w)
                },
                h,
            )
        }
        "relu" => unary!(vec![a, b], &[0.0], |t: &mut Tape, v| t.relu(v)),
        "sigmoid" => unary!(vec![a, b], &[], |t: &mut Tape, v| t.sigmoid(v)),
        "tanh" => unary!(vec![a, b], &[], |t: &mut Tape, v| t.tanh(v)),
        "exp" => unary!(vec![a, b], &[], |t: &mut Tape, v| t.exp(v)),
        "log" => unary!(vec![a, b], &[], |t: &mut Tape, v| {
            // shift into (0.1, 4.1) so log stays well conditioned
            let p = t.affine(v, 1.0, 2.1)?;
            t.log(p)
        }),
        "abs" => unary!(vec![a, b], &[0.0], |t: &mut Tape, v| t.abs(v)),
        "clamp" => unary!(vec![a, b], &[-0.5, 0.5], |t: &mut Tape, v| t
            .clamp(v, -0.5, 0.5)),
        "sum" => unary!(vec![a, b], &[], |t: &mut Tape, v| t.sum(v)),
        "mean" => unary!(vec![a, b], &[], |t: &mut Tape, v| t.mean(v)),
        "sum_last" => unary!(vec![a, b, c], &[], |t: &mut Tape, v| t.sum_last(v)),
        "max_last" => {
            let x = separated_rows(rng, &[a, b, c]);
            let w = out_weights(rng, &[a, b]);
            gradcheck(
                &[x],
                |t, v| {
                    let z = t.max_last(v[0])?;
                    weighted_sum(t, z, &w)
                },
                h,
            )
        }
        "conv1d" => {
            let window = rng.gen_range(1..=3usize);
            let words = window + rng.gen_range(0..4usize);
            let (batch, dim, filters) = (a, b, c);
            let x = random_tensor(rng, &[batch, words, dim], &[]);
            let wt = random_tensor(rng, &[filters, window * dim], &[]);
            let bias = random_tensor(rng, &[filters], &[]);
            let w = out_weights(rng, &[batch, filters, words - window + 1]);
            gradcheck(
                &[x, wt, bias],
                |t, v| {
                    let z = t.conv1d(v[0], v[1], v[2], window)?;
                    weighted_sum(t, z, &w)
                },
                h,
            )
        }
        "concat_last" => {
            let x = random_tensor(rng, &[a, b], &[]);
            let y = random_tensor(rng, &[a, c], &[]);
            let w = out_weights(rng, &[a, b + c]);
            gradcheck(
                &[x, y],
                |t, v| {
                    let z = t.concat_last(v[0], v[1])?;
                    weighted_sum(t, z, &w)
                },
                h,
            )
        }
        "gather_rows" => {
            let idx: Vec<Option<usize>> = (0..c)
                .map(|_| {
                    if rng.gen_bool(0.2) {
                        None
                    } else {
                        Some(rng.gen_range(0..a))
                    }
                })
                .collect();
            let x = random_tensor(rng, &[a, b], &[]);
            let w = out_weights(rng, &[c, b]);
            gradcheck(
                &[x],
                |t, v| {
                    let z = t.gather_rows(v[0], &idx)?;
                    weighted_sum(t, z, &w)
                },
                h,
            )
        }
        "reshape" => unary!(vec![a, b], &[], |t: &mut Tape, v| t.reshape(v, &[a * b])),
        "transpose" => unary!(vec![a, b, c], &[], |t: &mut Tape, v| t.transpose(v)),
        "logsumexp" => unary!(vec![a, b], &[], |t: &mut Tape, v| t.logsumexp(v)),
        other => Err(crate::error::AutodiffError::InvalidArgument {
            op: "gradcheck",
            msg: format!("unknown primitive `{other}`"),
        }),
    }
}
