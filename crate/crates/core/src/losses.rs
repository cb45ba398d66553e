//! Objective terms: adversarial domain losses, the MINE bound, encoder
//! alignment, rating regression and their weighted total.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::MineNetwork;
use ser_autodiff::{Adam, AdamConfig, ParamStore, Tape, Tensor, Var};

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before the log.
pub const PROB_EPS: f64 = 1e-12;

/// `-mean log(1 - p)` for `label == 0`, `-mean log(p)` for `label == 1`.
pub fn bce(tape: &mut Tape, p: Var, label: u8) -> Result<Var> {
    let p = tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS)?;
    let q = if label == 0 {
        tape.affine(p, -1.0, 1.0)?
    } else {
        p
    };
    let l = tape.log(q)?;
    let m = tape.mean(l)?;
    Ok(tape.neg(m)?)
}

/// Discriminator loss on common features: sources are labelled 0, targets 1.
pub fn domain_common_loss(tape: &mut Tape, d_src: Var, d_tgt: Var) -> Result<(Var, Var)> {
    Ok((bce(tape, d_src, 0)?, bce(tape, d_tgt, 1)?))
}

/// Same formula on specific features; only the routing differs.
pub fn domain_specific_loss(tape: &mut Tape, d_src: Var, d_tgt: Var) -> Result<(Var, Var)> {
    domain_common_loss(tape, d_src, d_tgt)
}

/// Source share `a = N_s / (N_s + N_t)`.
pub fn domain_weight(n_src: usize, n_tgt: usize) -> Result<f64> {
    if n_src + n_tgt == 0 {
        return Err(Error::InvalidArgument("both batch sizes are zero".into()));
    }
    Ok(n_src as f64 / (n_src + n_tgt) as f64)
}

/// `a (com_s + spe_s) + (1 - a) (com_t + spe_t)`; missing specific terms
/// count as zero.
pub fn domain_total(
    tape: &mut Tape,
    com: (Var, Var),
    spe: Option<(Var, Var)>,
    a: f64,
) -> Result<Var> {
    let (mut s, mut t) = com;
    if let Some((ss, st)) = spe {
        s = tape.add(s, ss)?;
        t = tape.add(t, st)?;
    }
    let s = tape.scale(s, a)?;
    let t = tape.scale(t, 1.0 - a)?;
    Ok(tape.add(s, t)?)
}

/// A permutation with no fixed points: a cyclic shift along a random order.
pub fn marginal_permutation<R: Rng>(n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::InvalidArgument(
            "marginal sampling needs at least two samples".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut perm = vec![0; n];
    for k in 0..n {
        perm[order[k]] = order[(k + 1) % n];
    }
    Ok(perm)
}

/// Donsker-Varadhan bound `mean T(x, z) - log mean exp T(x, z')`, where
/// `z'` is `z` with rows reordered by `perm`.
pub fn mine_loss(
    tape: &mut Tape,
    net: &MineNetwork,
    store: &ParamStore,
    x: Var,
    z: Var,
    perm: &[usize],
) -> Result<Var> {
    let n = tape.shape(x)[0];
    if perm.len() != n || tape.shape(z)[0] != n {
        return Err(Error::InvalidArgument(format!(
            "mine batch mismatch: {} samples, {} paired, permutation of {}",
            n,
            tape.shape(z)[0],
            perm.len()
        )));
    }
    let idx: Vec<Option<usize>> = perm.iter().map(|&p| Some(p)).collect();
    let zs = tape.gather_rows(z, &idx)?;
    let joint = net.forward(tape, store, x, z)?;
    let joint = tape.mean(joint)?;
    let marg = net.forward(tape, store, x, zs)?;
    let lse = tape.logsumexp(marg)?;
    let log_mean = tape.affine(lse, 1.0, -(n as f64).ln())?;
    Ok(tape.sub(joint, log_mean)?)
}

/// Mean squared Euclidean distance between rows of `o` and `i`.
pub fn alignment_loss(tape: &mut Tape, o: Var, i: Var) -> Result<Var> {
    let n = tape.shape(o)[0];
    let d = tape.sub(o, i)?;
    let sq = tape.mul(d, d)?;
    let s = tape.sum(sq)?;
    Ok(tape.scale(s, 1.0 / n as f64)?)
}

/// `(1/2N) sum((y_i - y)^2 + (y_o - y)^2)`; without an individual-review
/// prediction this is the plain mean squared error of `y_o`.
pub fn regression_loss(tape: &mut Tape, y_i: Option<Var>, y_o: Var, y: &[f64]) -> Result<Var> {
    let n = tape.shape(y_o)[0];
    if y.len() != n || y_i.is_some_and(|v| tape.shape(v)[0] != n) {
        return Err(Error::InvalidArgument(format!(
            "regression length mismatch: {} predictions, {} labels",
            n,
            y.len()
        )));
    }
    let target = tape.constant(Tensor::vector(y.to_vec()))?;
    let sq = |tape: &mut Tape, p: Var| -> Result<Var> {
        let d = tape.sub(p, target)?;
        let s = tape.mul(d, d)?;
        Ok(tape.sum(s)?)
    };
    let so = sq(tape, y_o)?;
    match y_i {
        Some(yi) => {
            let si = sq(tape, yi)?;
            let s = tape.add(si, so)?;
            Ok(tape.scale(s, 1.0 / (2 * n) as f64)?)
        }
        None => Ok(tape.scale(so, 1.0 / n as f64)?),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.05,
            gamma: 1.0,
        }
    }
}

/// `alpha L_dom + beta (L_enc_s + L_enc_t) + gamma (L_reg_s + L_reg_t)`.
/// Absent terms contribute nothing.
pub fn total_loss(
    tape: &mut Tape,
    w: LossWeights,
    dom: Option<Var>,
    enc: Option<(Var, Var)>,
    reg: (Var, Var),
) -> Result<Var> {
    let r = tape.add(reg.0, reg.1)?;
    let mut total = tape.scale(r, w.gamma)?;
    if let Some((es, et)) = enc {
        let e = tape.add(es, et)?;
        let e = tape.scale(e, w.beta)?;
        total = tape.add(total, e)?;
    }
    if let Some(d) = dom {
        let d = tape.scale(d, w.alpha)?;
        total = tape.add(total, d)?;
    }
    Ok(total)
}

/// Scalar view of every term in one step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossBreakdown {
    pub n_src: usize,
    pub n_tgt: usize,
    pub a: f64,
    pub com_s: Option<f64>,
    pub com_t: Option<f64>,
    pub spe_s: Option<f64>,
    pub spe_t: Option<f64>,
    pub dom: Option<f64>,
    pub mi_s: Option<f64>,
    pub mi_t: Option<f64>,
    pub enc_s: Option<f64>,
    pub enc_t: Option<f64>,
    pub reg_s: f64,
    pub reg_t: f64,
    pub total: f64,
}

pub const LOG_HEADER: &str =
    "iter,step,L_com_s,L_com_t,L_spe_s,L_spe_t,L_dom,L_MI_s,L_MI_t,L_enc_s,L_enc_t,L_reg_s,L_reg_t,total,val_mse";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl LossBreakdown {
    /// The common-loss mix `a L_com_s + (1 - a) L_com_t`.
    pub fn common_mix(&self) -> Option<f64> {
        Some(self.a * self.com_s? + (1.0 - self.a) * self.com_t?)
    }

    pub fn specific_mix(&self) -> Option<f64> {
        Some(self.a * self.spe_s? + (1.0 - self.a) * self.spe_t?)
    }

    pub fn is_finite(&self) -> bool {
        [
            self.com_s, self.com_t, self.spe_s, self.spe_t, self.dom, self.mi_s, self.mi_t,
            self.enc_s, self.enc_t,
        ]
        .iter()
        .flatten()
        .chain([self.reg_s, self.reg_t, self.total].iter())
        .all(|v| v.is_finite())
    }

    /// One log line; `val_mse` is filled on the last step of an iteration.
    pub fn csv_row(&self, iter: usize, step: usize, val_mse: Option<f64>) -> String {
        let mut s = format!("{iter},{step}");
        for v in [
            self.com_s,
            self.com_t,
            self.spe_s,
            self.spe_t,
            self.dom,
            self.mi_s,
            self.mi_t,
            self.enc_s,
            self.enc_t,
            Some(self.reg_s),
            Some(self.reg_t),
            Some(self.total),
            val_mse,
        ] {
            let _ = write!(s, ",{}", opt(v));
        }
        s
    }
}

/// Settings for [`estimate_mi`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MineFit {
    pub hidden: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for MineFit {
    fn default() -> Self {
        Self {
            hidden: 32,
            steps: 1500,
            batch: 500,
            lr: 3e-3,
            seed: 0,
        }
    }
}

/// Train a statistics network on paired rows `(x[k], z[k])` by maximising
/// the bound, then report the bound on the full sample averaged over a few
/// marginal draws.
pub fn estimate_mi(x: &[Vec<f64>], z: &[Vec<f64>], fit: MineFit) -> Result<f64> {
    let n = x.len();
    if n < 2 || z.len() != n {
        return Err(Error::InvalidArgument(
            "need at least two paired samples".into(),
        ));
    }
    let (dx, dz) = (x[0].len(), z[0].len());
    let to_tensor = |rows: &[&Vec<f64>], d: usize| -> Result<Tensor> {
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Ok(Tensor::new(vec![rows.len(), d], data)?)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(fit.seed);
    let mut store = ParamStore::new();
    let net = MineNetwork::new(&mut store, "mine", dx, dz, fit.hidden, &mut rng);
    let ids = net.params();
    let mut adam = Adam::new(AdamConfig {
        lr: fit.lr,
        ..AdamConfig::default()
    })?;
    let b = fit.batch.clamp(2, n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    for _ in 0..fit.steps {
        if cursor + b > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let pick = &order[cursor..cursor + b];
        cursor += b;
        let xs: Vec<&Vec<f64>> = pick.iter().map(|&k| &x[k]).collect();
        let zs: Vec<&Vec<f64>> = pick.iter().map(|&k| &z[k]).collect();
        let mut tape = Tape::new();
        let xv = tape.constant(to_tensor(&xs, dx)?)?;
        let zv = tape.constant(to_tensor(&zs, dz)?)?;
        let perm = marginal_permutation(b, &mut rng)?;
        let l = mine_loss(&mut tape, &net, &store, xv, zv, &perm)?;
        let neg = tape.neg(l)?;
        for &id in &ids {
            tape.param(&store, id);
        }
        tape.backward(neg)?;
        tape.write_grads(&mut store);
        adam.step(&mut store, &ids)?;
    }
    let xs: Vec<&Vec<f64>> = x.iter().collect();
    let zs: Vec<&Vec<f64>> = z.iter().collect();
    let (xt, zt) = (to_tensor(&xs, dx)?, to_tensor(&zs, dz)?);
    let draws = 5;
    let mut acc = 0.0;
    for _ in 0..draws {
        let mut tape = Tape::new();
        let xv = tape.constant(xt.clone())?;
        let zv = tape.constant(zt.clone())?;
        let perm = marginal_permutation(n, &mut rng)?;
        let l = mine_loss(&mut tape, &net, &store, xv, zv, &perm)?;
        acc += tape.scalar(l);
    }
    Ok(acc / draws as f64)
}
