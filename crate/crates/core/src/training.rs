//! Joint optimisation over both domains, early stopping and ablations.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{Batch, BatchBuilder, EntityIndex};
use crate::corpus::{Domain, DomainDataset, EmbeddingTable, Split};
use crate::error::{Error, Result};
use crate::eval::{self, MetricReport};
use crate::losses::{self, LossBreakdown, LossWeights, LOG_HEADER};
use crate::model::{ForwardPlan, ModelConfig, SerModel};
use crate::variant::Variant;
use ser_autodiff::{Adam, AdamConfig, AutodiffError, ParamId, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Decoupled weight decay.
    pub delta: f64,
    pub lr: f64,
    pub batch_src: usize,
    pub batch_tgt: usize,
    pub iterations: usize,
    pub patience: usize,
    pub grl_lambda: f64,
    pub variant: Variant,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.05,
            gamma: 1.0,
            delta: 1e-6,
            lr: 1e-4,
            batch_src: 128,
            batch_tgt: 128,
            iterations: 300,
            patience: 10,
            grl_lambda: 1.0,
            variant: Variant::SerSa,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.grl_lambda > 0.0 && self.grl_lambda.is_finite()) {
            return bad(format!("grl_lambda must be positive, got {}", self.grl_lambda));
        }
        if self.batch_src < 2 || self.batch_tgt < 2 {
            return bad("batch sizes must be at least 2".into());
        }
        if self.iterations == 0 || self.patience == 0 {
            return bad("iterations and patience must be positive".into());
        }
        Ok(())
    }
}

/// Source/target record ids for one step.
pub type StepIds = (Vec<usize>, Vec<usize>);

/// Source passes in shuffled order; target ids cycle, reshuffled each time
/// they wrap.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    src: Vec<usize>,
    tgt: Vec<usize>,
    tgt_order: Vec<usize>,
    tgt_cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(src: Vec<usize>, tgt: Vec<usize>, seed: u64) -> Result<Self> {
        if src.is_empty() || tgt.is_empty() {
            return Err(Error::InvalidArgument("empty training split".into()));
        }
        Ok(Self {
            tgt_cursor: tgt.len(),
            tgt_order: tgt.clone(),
            src,
            tgt,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn next_target(&mut self) -> usize {
        if self.tgt_cursor == self.tgt_order.len() {
            self.tgt_order.clone_from(&self.tgt);
            self.tgt_order.shuffle(&mut self.rng);
            self.tgt_cursor = 0;
        }
        self.tgt_cursor += 1;
        self.tgt_order[self.tgt_cursor - 1]
    }

    /// Steps of one iteration: `ceil(|src| / n_src)` batches, a trailing
    /// single sample folded into the batch before it.
    pub fn iteration(&mut self, n_src: usize, n_tgt: usize) -> Vec<StepIds> {
        let mut order = self.src.clone();
        order.shuffle(&mut self.rng);
        let mut chunks: Vec<Vec<usize>> = order.chunks(n_src).map(<[usize]>::to_vec).collect();
        if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() < 2) {
            let tail = chunks.pop().unwrap();
            chunks.last_mut().unwrap().extend(tail);
        }
        chunks
            .into_iter()
            .map(|s| {
                let t = (0..n_tgt).map(|_| self.next_target()).collect();
                (s, t)
            })
            .collect()
    }
}

/// Optimiser state carried across steps.
#[derive(Debug, Clone)]
pub struct Optimizers {
    pub main: Adam,
    pub mine: Adam,
}

impl Optimizers {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        Ok(Self {
            main: Adam::new(AdamConfig {
                lr: cfg.lr,
                weight_decay: cfg.delta,
                ..AdamConfig::default()
            })?,
            mine: Adam::new(AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            })?,
        })
    }
}

fn non_finite(at: (usize, usize), detail: String) -> Error {
    Error::NonFiniteLoss {
        iter: at.0,
        step: at.1,
        detail,
    }
}

fn lift(at: (usize, usize), e: Error) -> Error {
    match e {
        Error::Autodiff(AutodiffError::NonFinite { op }) => {
            non_finite(at, format!("non-finite value produced by {op}"))
        }
        other => other,
    }
}

/// Graph of the full objective for one step, before any backward pass.
pub struct StepGraph {
    pub tape: Tape,
    pub total: Var,
    pub breakdown: LossBreakdown,
}

fn scalar(tape: &Tape, v: Option<Var>) -> Option<f64> {
    v.map(|v| tape.scalar(v))
}

/// Build the objective. `grl_lambda = None` wires the common features to
/// the discriminator without reversal (used by gradient audits).
pub fn build_objective(
    model: &SerModel,
    cfg: &TrainConfig,
    src: &Batch,
    tgt: &Batch,
    grl_lambda: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<StepGraph> {
    let variant = cfg.variant;
    let mut tape = Tape::new();
    let plan = ForwardPlan {
        variant,
        grl_lambda,
        training: true,
    };
    let fs = model.forward_domain(&mut tape, Domain::Source, src, &plan)?;
    let ft = model.forward_domain(&mut tape, Domain::Target, tgt, &plan)?;

    let reg_s = losses::regression_loss(&mut tape, fs.y_i, fs.y_o.unwrap(), &src.ratings)?;
    let reg_t = losses::regression_loss(&mut tape, ft.y_i, ft.y_o.unwrap(), &tgt.ratings)?;
    let enc = if variant.uses_encoder() {
        Some((
            losses::alignment_loss(&mut tape, fs.o.unwrap(), fs.i.unwrap())?,
            losses::alignment_loss(&mut tape, ft.o.unwrap(), ft.i.unwrap())?,
        ))
    } else {
        None
    };

    let a = losses::domain_weight(src.len(), tgt.len())?;
    let mut b = LossBreakdown {
        n_src: src.len(),
        n_tgt: tgt.len(),
        a,
        ..LossBreakdown::default()
    };
    let dom = if variant.uses_discriminator() {
        let com = losses::domain_common_loss(&mut tape, fs.d_com.unwrap(), ft.d_com.unwrap())?;
        b.com_s = Some(tape.scalar(com.0));
        b.com_t = Some(tape.scalar(com.1));
        let second = if variant.discriminates_specific() {
            let spe = losses::domain_specific_loss(&mut tape, fs.d_spe.unwrap(), ft.d_spe.unwrap())?;
            b.spe_s = Some(tape.scalar(spe.0));
            b.spe_t = Some(tape.scalar(spe.1));
            Some(spe)
        } else if variant.uses_mine() {
            let mut mi = [None, None];
            for (d, f) in [(Domain::Source, &fs), (Domain::Target, &ft)] {
                let z = tape.detach(f.o_com.unwrap())?;
                let n = tape.shape(z)[0];
                let perm = losses::marginal_permutation(n, rng)?;
                let net = &model.mine[d.index()];
                let l = losses::mine_loss(&mut tape, net, &model.store, f.o_spe.unwrap(), z, &perm)?;
                mi[d.index()] = Some(l);
            }
            b.mi_s = Some(tape.scalar(mi[0].unwrap()));
            b.mi_t = Some(tape.scalar(mi[1].unwrap()));
            let abs_s = tape.abs(mi[0].unwrap())?;
            let abs_t = tape.abs(mi[1].unwrap())?;
            Some((abs_s, abs_t))
        } else {
            None
        };
        Some(losses::domain_total(&mut tape, com, second, a)?)
    } else {
        None
    };
    let total = losses::total_loss(&mut tape, cfg.weights(), dom, enc, (reg_s, reg_t))?;

    b.dom = scalar(&tape, dom);
    b.enc_s = scalar(&tape, enc.map(|e| e.0));
    b.enc_t = scalar(&tape, enc.map(|e| e.1));
    b.reg_s = tape.scalar(reg_s);
    b.reg_t = tape.scalar(reg_t);
    b.total = tape.scalar(total);
    Ok(StepGraph {
        tape,
        total,
        breakdown: b,
    })
}

/// Maximise the MINE bound over the statistics networks with the features
/// held fixed.
fn mine_inner_step(
    model: &mut SerModel,
    opt: &mut Adam,
    src: &Batch,
    tgt: &Batch,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mut tape = Tape::new();
    let plan = ForwardPlan::inference(Variant::SerSa);
    let mut objective = None;
    for (d, batch) in [(Domain::Source, src), (Domain::Target, tgt)] {
        let f = model.forward_domain(&mut tape, d, batch, &plan)?;
        let x = tape.detach(f.o_spe.unwrap())?;
        let z = tape.detach(f.o_com.unwrap())?;
        let perm = losses::marginal_permutation(batch.len(), rng)?;
        let l = losses::mine_loss(&mut tape, &model.mine[d.index()], &model.store, x, z, &perm)?;
        objective = Some(match objective {
            None => l,
            Some(o) => tape.add(o, l)?,
        });
    }
    let neg = tape.neg(objective.unwrap())?;
    let ids = model.mine_params();
    for &id in &ids {
        tape.param(&model.store, id);
    }
    model.store.zero_grad();
    tape.backward(neg)?;
    tape.write_grads(&mut model.store);
    opt.step(&mut model.store, &ids)?;
    model.store.zero_grad();
    Ok(())
}

fn descend(
    model: &mut SerModel,
    opt: &mut Adam,
    graph: StepGraph,
    ids: &[ParamId],
    at: (usize, usize),
) -> Result<LossBreakdown> {
    let StepGraph {
        mut tape,
        total,
        breakdown,
    } = graph;
    if !breakdown.is_finite() {
        return Err(non_finite(at, format!("{breakdown:?}")));
    }
    for &id in ids {
        tape.param(&model.store, id);
    }
    model.store.zero_grad();
    tape.backward(total).map_err(|e| lift(at, e.into()))?;
    tape.write_grads(&mut model.store);
    opt.step(&mut model.store, ids)?;
    model.store.zero_grad();
    if model.store.iter().any(|(_, p)| !p.value.is_finite()) {
        return Err(non_finite(at, format!("parameters diverged after step; {breakdown:?}")));
    }
    Ok(breakdown)
}

/// One optimisation step: a single forward over both domains, a single
/// backward of the weighted total and one Adam update of the variant's
/// trainable parameters.
pub fn train_step(
    model: &mut SerModel,
    opts: &mut Optimizers,
    cfg: &TrainConfig,
    src: &Batch,
    tgt: &Batch,
    rng: &mut ChaCha8Rng,
    at: (usize, usize),
) -> Result<LossBreakdown> {
    if cfg.variant.uses_mine() {
        mine_inner_step(model, &mut opts.mine, src, tgt, rng).map_err(|e| lift(at, e))?;
    }
    let lambda = cfg.variant.uses_discriminator().then_some(cfg.grl_lambda);
    let graph = build_objective(model, cfg, src, tgt, lambda, rng).map_err(|e| lift(at, e))?;
    let ids = model.trainable_params(cfg.variant);
    descend(model, &mut opts.main, graph, &ids, at)
}

/// Mean training rating over both domains.
pub fn rating_mean(source: &DomainDataset, target: &DomainDataset) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for ds in [source, target] {
        for id in ds.ids_in(Split::Train) {
            s += ds.record(id).rating;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Fresh model for a pair of split datasets.
pub fn init_model(
    source: &DomainDataset,
    target: &DomainDataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<SerModel> {
    let entities = [EntityIndex::from_train(source), EntityIndex::from_train(target)];
    SerModel::new(
        model_cfg.clone(),
        cfg.variant,
        entities,
        rating_mean(source, target),
        cfg.seed,
    )
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best validation MSE.
    pub model: SerModel,
    pub best_val_mse: f64,
    /// 1-based iteration that produced `model`.
    pub best_iter: usize,
    pub val_history: Vec<f64>,
    pub steps: Vec<LossBreakdown>,
    /// Training-log CSV, header included.
    pub log: String,
}

impl TrainOutcome {
    pub fn iterations_run(&self) -> usize {
        self.val_history.len()
    }
}

/// Train until the iteration budget or patience runs out, keeping the
/// parameters with the lowest target validation MSE.
pub fn run_training(
    source: &DomainDataset,
    target: &DomainDataset,
    table: &EmbeddingTable,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if source.domain() != Domain::Source || target.domain() != Domain::Target {
        return Err(Error::InvalidArgument("datasets passed in the wrong order".into()));
    }
    if table.dim() != model_cfg.emb_dim {
        return Err(Error::InvalidArgument(format!(
            "embedding dimension {} does not match model emb_dim {}",
            table.dim(),
            model_cfg.emb_dim
        )));
    }
    let builders = [
        BatchBuilder::new(source, table, model_cfg.agg_words, model_cfg.review_words)?,
        BatchBuilder::new(target, table, model_cfg.agg_words, model_cfg.review_words)?,
    ];
    let val_ids = target.ids_in(Split::Validation);
    if val_ids.is_empty() {
        return Err(Error::InvalidArgument("target validation split is empty".into()));
    }
    let val_y: Vec<f64> = val_ids.iter().map(|&i| target.record(i).rating).collect();

    let mut model = init_model(source, target, model_cfg, cfg)?;
    let mut opts = Optimizers::new(cfg)?;
    let mut sampler = BatchSampler::new(
        source.ids_in(Split::Train),
        target.ids_in(Split::Train),
        cfg.seed.wrapping_add(1),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));

    let mut log = format!("{LOG_HEADER}\n");
    let mut steps = Vec::new();
    let mut val_history = Vec::new();
    let (mut best, mut best_iter, mut best_model) = (f64::INFINITY, 0, model.clone());
    let mut bad = 0;
    for iter in 1..=cfg.iterations {
        let plan = sampler.iteration(cfg.batch_src, cfg.batch_tgt);
        let last = plan.len();
        for (k, (s_ids, t_ids)) in plan.into_iter().enumerate() {
            let s = builders[0].train_batch(&s_ids, &model.entities[0])?;
            let t = builders[1].train_batch(&t_ids, &model.entities[1])?;
            let b = train_step(&mut model, &mut opts, cfg, &s, &t, &mut rng, (iter, k + 1))?;
            let val = if k + 1 == last {
                let pred = eval::predict_records(&model, &builders[1], &val_ids)?;
                Some(eval::mse(&pred, &val_y)?)
            } else {
                None
            };
            log.push_str(&b.csv_row(iter, k + 1, val));
            log.push('\n');
            steps.push(b);
            if let Some(v) = val {
                val_history.push(v);
                if v < best {
                    best = v;
                    best_iter = iter;
                    best_model = model.clone();
                    bad = 0;
                } else {
                    bad += 1;
                }
            }
        }
        if bad >= cfg.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best_model,
        best_val_mse: best,
        best_iter,
        val_history,
        steps,
        log,
    })
}

/// Per-iteration means of a per-step quantity (steps without a value are
/// skipped; iterations with none are dropped).
pub fn iteration_means(
    outcome: &TrainOutcome,
    f: impl Fn(&LossBreakdown) -> Option<f64>,
) -> Vec<f64> {
    let iters = outcome.iterations_run();
    if iters == 0 || outcome.steps.is_empty() {
        return Vec::new();
    }
    let per = outcome.steps.len() / iters;
    outcome
        .steps
        .chunks(per.max(1))
        .filter_map(|c| {
            let v: Vec<f64> = c.iter().filter_map(&f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub metrics: MetricReport,
    pub best_iter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSummary {
    pub variant: Variant,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub ndcg_median: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub seeds: Vec<u64>,
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

impl AblationReport {
    pub fn variants(&self) -> Vec<Variant> {
        let mut v: Vec<Variant> = Vec::new();
        for r in &self.rows {
            if !v.contains(&r.variant) {
                v.push(r.variant);
            }
        }
        v
    }

    pub fn summary(&self) -> Vec<AblationSummary> {
        self.variants()
            .into_iter()
            .map(|variant| {
                let rows: Vec<&AblationRow> =
                    self.rows.iter().filter(|r| r.variant == variant).collect();
                let mses: Vec<f64> = rows.iter().map(|r| r.metrics.mse).collect();
                let nd: Vec<f64> = rows.iter().filter_map(|r| r.metrics.ndcg).collect();
                AblationSummary {
                    variant,
                    min: mses.iter().copied().fold(f64::INFINITY, f64::min),
                    median: median(&mses),
                    max: mses.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    ndcg_median: (!nd.is_empty()).then(|| median(&nd)),
                }
            })
            .collect()
    }

    /// Per-run rows followed by the per-variant summary.
    pub fn to_csv(&self) -> String {
        let k = self.rows.first().map_or(5, |r| r.metrics.k);
        let mut s = format!("variant,seed,mse,ndcg@{k},best_iter\n");
        for r in &self.rows {
            let nd = r.metrics.ndcg.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.variant, r.seed, r.metrics.mse, nd, r.best_iter
            ));
        }
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        s.push_str(&format!(
            "\nvariant,mse_min,mse_median,mse_max,ndcg@{k}_median,seeds\n"
        ));
        for m in self.summary() {
            let nd = m.ndcg_median.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                m.variant,
                m.min,
                m.median,
                m.max,
                nd,
                seeds.join(" ")
            ));
        }
        s
    }
}

/// Train every variant under every seed and score the target test split.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    source: &DomainDataset,
    target: &DomainDataset,
    table: &EmbeddingTable,
    model_cfg: &ModelConfig,
    base: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
    k: usize,
) -> Result<AblationReport> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("ablation needs variants and seeds".into()));
    }
    let builder = BatchBuilder::new(target, table, model_cfg.agg_words, model_cfg.review_words)?;
    let mut rows = Vec::new();
    for &variant in variants {
        for &seed in seeds {
            let cfg = TrainConfig {
                variant,
                seed,
                ..base.clone()
            };
            let out = run_training(source, target, table, model_cfg, &cfg)?;
            let metrics = eval::evaluate(&out.model, &builder, Split::Test, k)?;
            rows.push(AblationRow {
                variant,
                seed,
                metrics,
                best_iter: out.best_iter,
            });
        }
    }
    Ok(AblationReport {
        rows,
        seeds: seeds.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_steps_per_iteration() {
        let mut s = BatchSampler::new((0..256).collect(), (0..50).collect(), 1).unwrap();
        let it = s.iteration(128, 128);
        assert_eq!(it.len(), 2);
        let mut all: Vec<usize> = it.iter().flat_map(|(a, _)| a.clone()).collect();
        all.sort();
        assert_eq!(all, (0..256).collect::<Vec<_>>());
        // target smaller than a batch repeats within the iteration
        let t = &it[0].1;
        assert_eq!(t.len(), 128);
        let mut uniq = t.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 50);
    }

    #[test]
    fn sampler_folds_single_tail() {
        let mut s = BatchSampler::new((0..9).collect(), (0..3).collect(), 2).unwrap();
        let it = s.iteration(4, 2);
        assert_eq!(it.iter().map(|(a, _)| a.len()).collect::<Vec<_>>(), [4, 5]);
    }

    #[test]
    fn sampler_is_deterministic() {
        let mk = || BatchSampler::new((0..30).collect(), (0..7).collect(), 5).unwrap();
        let (mut a, mut b) = (mk(), mk());
        for _ in 0..3 {
            assert_eq!(a.iteration(8, 4), b.iteration(8, 4));
        }
        assert!(BatchSampler::new(vec![], vec![1], 0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { grl_lambda: 0.0, ..Default::default() },
            TrainConfig { alpha: -1.0, ..Default::default() },
            TrainConfig { batch_src: 1, ..Default::default() },
            TrainConfig { patience: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
