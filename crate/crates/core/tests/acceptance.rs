//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! Exits 0 so the rest of the test suite keeps running; set
//! `SER_ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.

mod common;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use ser_autodiff::gradcheck::{check_primitive, relative_error, PRIMITIVES};
use ser_autodiff::{ParamId, Tape, Tensor};
use ser_core::batch::BatchBuilder;
use ser_core::checkpoint;
use ser_core::corpus::{Domain, DomainDataset, EmbeddingTable, Split};
use ser_core::eval::{self, Scored};
use ser_core::losses::{self, estimate_mi, LossWeights, MineFit};
use ser_core::model::{FeRole, ModelConfig, SerModel};
use ser_core::training::{self, build_objective, init_model, median, TrainConfig, TrainOutcome};
use ser_core::variant::Variant;

struct Verdict {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(v: &Verdict) {
    let tag = if v.pass { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {:2} {}: {}", v.id, v.name, v.detail);
}

// ---------------------------------------------------------------- 1

const PRIMITIVE_CASES: usize = 100;
const PRIMITIVE_TOL: f64 = 1e-4;
const GRAPH_PARAMS: usize = 20;
const GRAPH_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;

fn loss_at(model: &SerModel, cfg: &TrainConfig, s: &ser_core::batch::Batch, t: &ser_core::batch::Batch, rng: &ChaCha8Rng) -> f64 {
    build_objective(model, cfg, s, t, None, &mut rng.clone())
        .unwrap()
        .breakdown
        .total
}

fn analytic_grads(
    model: &SerModel,
    cfg: &TrainConfig,
    s: &ser_core::batch::Batch,
    t: &ser_core::batch::Batch,
    lambda: Option<f64>,
    rng: &ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let mut g = build_objective(model, cfg, s, t, lambda, &mut rng.clone()).unwrap();
    let ids: Vec<ParamId> = model.store.ids().collect();
    let vars: Vec<_> = ids.iter().map(|&id| g.tape.param(&model.store, id)).collect();
    g.tape.backward(g.total).unwrap();
    vars.iter().map(|&v| g.tape.grad(v).unwrap().to_vec()).collect()
}

fn full_graph_gradcheck(variant: Variant, seed: u64) -> f64 {
    let fx = common::fixture(120, 5);
    let cfg = TrainConfig { variant, ..TrainConfig::default() };
    let mut model = init_model(&fx.source, &fx.target, &common::small_model_config(), &cfg).unwrap();
    let (s, t) = fx.train_batches(&model, 4);
    let rng = ChaCha8Rng::seed_from_u64(seed);
    let grads = analytic_grads(&model, &cfg, &s, &t, None, &rng);

    let ids: Vec<ParamId> = model.store.ids().collect();
    let mut pick = ChaCha8Rng::seed_from_u64(seed + 100);
    let mut worst = 0.0f64;
    for _ in 0..GRAPH_PARAMS {
        let p = pick.gen_range(0..ids.len());
        let k = pick.gen_range(0..model.store.value(ids[p]).len());
        let orig = model.store.value(ids[p]).clone();
        let bump = |delta: f64, model: &mut SerModel| {
            let mut v = orig.clone();
            v.data_mut()[k] += delta;
            model.store.set_value(ids[p], v).unwrap();
            loss_at(model, &cfg, &s, &t, &rng)
        };
        let up = bump(FD_STEP, &mut model);
        let down = bump(-FD_STEP, &mut model);
        model.store.set_value(ids[p], orig).unwrap();
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(grads[p][k], numeric));
    }
    worst
}

fn criterion_gradcheck() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_prim = ("", 0.0f64);
    for name in PRIMITIVES {
        for _ in 0..PRIMITIVE_CASES {
            let r = check_primitive(name, &mut rng, 1e-5).unwrap();
            if r.max_rel_err > worst_prim.1 {
                worst_prim = (name, r.max_rel_err);
            }
        }
    }
    let graph_sa = full_graph_gradcheck(Variant::SerSa, 1);
    let graph_mi = full_graph_gradcheck(Variant::SerMi, 2);
    let el = t0.elapsed();
    Verdict {
        id: 1,
        name: "autodiff gradcheck",
        pass: worst_prim.1 < PRIMITIVE_TOL
            && graph_sa < GRAPH_TOL
            && graph_mi < GRAPH_TOL
            && el < Duration::from_secs(60),
        detail: format!(
            "{} primitives x {PRIMITIVE_CASES} cases, worst rel err {:.2e} ({}); full graph {GRAPH_PARAMS} params: SER_SA {:.2e}, SER_MI {:.2e} (tol {PRIMITIVE_TOL:e}); {:.1}s",
            PRIMITIVES.len(),
            worst_prim.1,
            worst_prim.0,
            graph_sa,
            graph_mi,
            el.as_secs_f64()
        ),
    }
}

// ---------------------------------------------------------------- 2

fn criterion_grl() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut contract = true;
    for _ in 0..200 {
        let n = rng.gen_range(1..20);
        let lambda = rng.gen_range(0.01..10.0);
        let x = Tensor::new(vec![n], (0..n).map(|_| rng.gen_range(-1e3..1e3)).collect()).unwrap();
        let w = Tensor::new(vec![n], (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect()).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone()).unwrap();
        let y = tape.grl(xv, lambda).unwrap();
        contract &= tape.value(y) == &x;
        let wv = tape.constant(w.clone()).unwrap();
        let p = tape.mul(y, wv).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        let g = tape.grad(xv).unwrap();
        contract &= g.iter().zip(w.data()).all(|(g, w)| *g == -lambda * w);
    }

    // Routing audit on the discriminator loss alone.
    let fx = common::fixture(120, 3);
    let lambda = 0.5;
    let cfg = TrainConfig { alpha: 1.0, beta: 0.0, gamma: 0.0, grl_lambda: lambda, ..TrainConfig::default() };
    let model = init_model(&fx.source, &fx.target, &common::small_model_config(), &cfg).unwrap();
    let (s, t) = fx.train_batches(&model, 6);
    let rng = ChaCha8Rng::seed_from_u64(0);
    let with = analytic_grads(&model, &cfg, &s, &t, Some(lambda), &rng);
    let without = analytic_grads(&model, &cfg, &s, &t, None, &rng);
    let other = analytic_grads(&model, &cfg, &s, &t, Some(2.0), &rng);
    let common: Vec<usize> = model.extractor_params(FeRole::Common).iter().map(|p| p.index()).collect();
    let specific: Vec<usize> = [FeRole::SourceSpecific, FeRole::TargetSpecific]
        .iter()
        .flat_map(|&r| model.extractor_params(r))
        .map(|p| p.index())
        .collect();

    // Finite-difference probe of the unreversed loss for the common FE.
    let mut probe = model.clone();
    let mut dot = 0.0;
    for &p in &common {
        let id = model.store.ids().nth(p).unwrap();
        for k in 0..model.store.value(id).len() {
            let orig = model.store.value(id).clone();
            let mut eval_at = |d: f64| {
                let mut v = orig.clone();
                v.data_mut()[k] += d;
                probe.store.set_value(id, v).unwrap();
                loss_at(&probe, &cfg, &s, &t, &rng)
            };
            let fd = (eval_at(FD_STEP) - eval_at(-FD_STEP)) / (2.0 * FD_STEP);
            probe.store.set_value(id, orig).unwrap();
            dot += with[p][k] * fd;
        }
    }

    let mut reversed = true;
    let mut specific_clean = true;
    for (k, (a, b)) in with.iter().zip(&without).enumerate() {
        if common.contains(&k) {
            reversed &= a.iter().zip(b).all(|(x, y)| *x == -lambda * y);
        }
        if specific.contains(&k) {
            specific_clean &= a == b && a == &other[k];
        }
    }
    Verdict {
        id: 2,
        name: "GRL contract",
        pass: contract && reversed && specific_clean && dot < 0.0,
        detail: format!(
            "identity/backward exact on 200 cases: {contract}; common FE = -lambda x unreversed: {reversed}; dot(implemented, FD unreversed) = {dot:.3e} (< 0); specific FE independent of lambda: {specific_clean}"
        ),
    }
}

// ---------------------------------------------------------------- 3

fn scalar_of(f: impl FnOnce(&mut Tape) -> ser_autodiff::Var) -> f64 {
    let mut tape = Tape::new();
    let v = f(&mut tape);
    tape.scalar(v)
}

fn criterion_losses() -> Verdict {
    let ln2 = std::f64::consts::LN_2;
    let half = |t: &mut Tape, n: usize| t.constant(Tensor::new(vec![n], vec![0.5; n]).unwrap()).unwrap();
    let bce = scalar_of(|t| {
        let p = half(t, 4);
        losses::bce(t, p, 1).unwrap()
    });
    let dom = scalar_of(|t| {
        let (ps, pt) = (half(t, 3), half(t, 3));
        let com = losses::domain_common_loss(t, ps, pt).unwrap();
        let (qs, qt) = (half(t, 3), half(t, 3));
        let spe = losses::domain_specific_loss(t, qs, qt).unwrap();
        let a = losses::domain_weight(3, 3).unwrap();
        losses::domain_total(t, com, Some(spe), a).unwrap()
    });
    let reg = scalar_of(|t| {
        let yi = t.constant(Tensor::new(vec![1], vec![4.0]).unwrap()).unwrap();
        let yo = t.constant(Tensor::new(vec![1], vec![2.0]).unwrap()).unwrap();
        losses::regression_loss(t, Some(yi), yo, &[3.0]).unwrap()
    });
    let total = scalar_of(|t| {
        let c = |t: &mut Tape, v: f64| t.constant(Tensor::new(vec![1], vec![v]).unwrap()).unwrap();
        let d = c(t, 1.3863);
        let (e1, e2) = (c(t, 1.0), c(t, 1.0));
        let (r1, r2) = (c(t, 0.5), c(t, 0.5));
        let sum = |t: &mut Tape, v| t.sum(v).unwrap();
        let (d, e1, e2, r1, r2) = (sum(t, d), sum(t, e1), sum(t, e2), sum(t, r1), sum(t, r2));
        losses::total_loss(t, LossWeights::default(), Some(d), Some((e1, e2)), (r1, r2)).unwrap()
    });
    let ok = (bce - ln2).abs() <= 1e-9
        && (dom - 2.0 * ln2).abs() <= 1e-12
        && reg == 1.0
        && (total - 1.23863).abs() <= 1e-9;
    Verdict {
        id: 3,
        name: "loss identities",
        pass: ok,
        detail: format!(
            "BCE(0.5) = {bce:.12} (ln2 +/- 1e-9); L_dom(a=0.5) = {dom:.15} (2 ln2 +/- 1e-12); L_reg = {reg} (exactly 1); total = {total:.12} (1.23863 +/- 1e-9)"
        ),
    }
}

// ---------------------------------------------------------------- 4

fn gaussian_pairs(n: usize, rho: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            (vec![a], vec![rho * a + (1.0 - rho * rho).sqrt() * b])
        })
        .unzip()
}

fn criterion_mine() -> Verdict {
    let t0 = Instant::now();
    let closed = -0.5 * (1.0f64 - 0.81).ln();
    let (x, z) = gaussian_pairs(5000, 0.0, 11);
    let indep = estimate_mi(&x, &z, MineFit::default()).unwrap();
    let (x, z) = gaussian_pairs(5000, 0.9, 12);
    let corr = estimate_mi(&x, &z, MineFit::default()).unwrap();
    let el = t0.elapsed();
    Verdict {
        id: 4,
        name: "MINE sanity",
        pass: indep.abs() < 0.1 && corr > 0.4 && corr <= closed + 0.1 && el < Duration::from_secs(120),
        detail: format!(
            "independent {indep:.4} (|.| < 0.1); rho=0.9 {corr:.4} in (0.4, {:.4}]; {:.1}s",
            closed + 0.1,
            el.as_secs_f64()
        ),
    }
}

// ---------------------------------------------------------------- 5

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn oracle_ndcg(ratings: &[f64], preds: &[f64], k: usize) -> f64 {
    let dcg = |order: &[usize]| -> f64 {
        order
            .iter()
            .take(k)
            .enumerate()
            .map(|(j, &i)| ratings[i] / (j as f64 + 2.0).log2())
            .sum()
    };
    let perms = permutations(ratings.len());
    let ideal = perms.iter().map(|p| dcg(p)).fold(f64::NEG_INFINITY, f64::max);
    let ranked = perms
        .iter()
        .find(|p| p.windows(2).all(|w| preds[w[0]] > preds[w[1]]))
        .expect("distinct predictions give one descending order");
    if ideal == 0.0 {
        1.0
    } else {
        dcg(ranked) / ideal
    }
}

fn criterion_ndcg() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let users = rng.gen_range(1..=4);
        let k = rng.gen_range(1..=6);
        let mut scored = Vec::new();
        let mut expect = Vec::new();
        for u in 0..users {
            let n = rng.gen_range(2..=6);
            let ratings: Vec<f64> = (0..n).map(|_| rng.gen_range(0..=5) as f64).collect();
            let preds: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
            expect.push(oracle_ndcg(&ratings, &preds, k));
            for i in 0..n {
                scored.push(Scored {
                    user: format!("c{case}u{u}"),
                    item: format!("i{i}"),
                    rating: ratings[i],
                    prediction: preds[i],
                });
            }
        }
        let (mean, per_user) = eval::ndcg_at_k(&scored, k).unwrap();
        for ((_, got), want) in per_user.iter().zip(&expect) {
            worst = worst.max((got - want).abs());
        }
        let want_mean = expect.iter().sum::<f64>() / expect.len() as f64;
        worst = worst.max((mean - want_mean).abs());
    }
    Verdict {
        id: 5,
        name: "nDCG oracle equivalence",
        pass: worst <= 1e-9,
        detail: format!("200 random cases, groups of 2-6 items, max |impl - oracle| = {worst:.2e} (tol 1e-9)"),
    }
}

// ---------------------------------------------------------------- 6-8

const DESK_SEEDS: u64 = 5;
const DESK_SIZE: usize = 1000;
const DESK_ITERS: usize = 40;

fn desk_model() -> ModelConfig {
    ModelConfig {
        emb_dim: ser_core::synth::SYNTH_DIM,
        filters: 16,
        window: 3,
        conv_layers: 1,
        agg_words: 48,
        review_words: 12,
        disc_hidden: 16,
        reg_hidden: 16,
        latent_dim: 8,
        mine_hidden: 16,
    }
}

fn desk_train(variant: Variant, seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 2e-3,
        batch_src: 32,
        batch_tgt: 32,
        iterations: DESK_ITERS,
        patience: DESK_ITERS,
        variant,
        seed,
        ..TrainConfig::default()
    }
}

struct DeskRun {
    mse: f64,
    spe_acc: f64,
    com_acc: f64,
    com_curve: Vec<f64>,
    spe_curve: Vec<f64>,
    mi_curve: Vec<f64>,
}

fn desk_run(fx: &common::Fixture, variant: Variant, seed: u64) -> DeskRun {
    let mc = desk_model();
    let out: TrainOutcome =
        training::run_training(&fx.source, &fx.target, &fx.table, &mc, &desk_train(variant, seed)).unwrap();
    let [bs, bt] = fx.builders(&mc);
    let mse = eval::evaluate(&out.model, &bt, Split::Test, 5).unwrap().mse;
    let held = |ds: &DomainDataset| -> Vec<usize> {
        ds.ids_in(Split::Test).into_iter().chain(ds.ids_in(Split::Validation)).collect()
    };
    let (s, t) = (held(&fx.source), held(&fx.target));
    let probe = eval::domain_probe(&out.model, [&bs, &bt], [&s, &t], seed).unwrap();
    DeskRun {
        mse,
        spe_acc: probe.specific_acc,
        com_acc: probe.common_acc,
        com_curve: training::iteration_means(&out, |b| b.common_mix()),
        spe_curve: training::iteration_means(&out, |b| b.specific_mix()),
        mi_curve: training::iteration_means(&out, |b| Some(b.a * b.mi_s?.abs() + (1.0 - b.a) * b.mi_t?.abs())),
    }
}

/// Element-wise median of equally long curves.
fn median_curve(curves: &[&Vec<f64>]) -> Vec<f64> {
    let n = curves.iter().map(|c| c.len()).min().unwrap_or(0);
    (0..n).map(|i| median(&curves.iter().map(|c| c[i]).collect::<Vec<_>>())).collect()
}

fn desk_criteria() -> Vec<Verdict> {
    const VARIANTS: [Variant; 5] = [Variant::SerSa, Variant::NoDd, Variant::NoEn, Variant::RatingOnly, Variant::SerMi];
    let t0 = Instant::now();
    let mut runs: Vec<Vec<DeskRun>> = (0..VARIANTS.len()).map(|_| Vec::new()).collect();
    let mut disentangle_time = Duration::ZERO;
    for seed in 0..DESK_SEEDS {
        let fx = common::fixture(DESK_SIZE, seed);
        for (v, &variant) in VARIANTS.iter().enumerate() {
            let t = Instant::now();
            runs[v].push(desk_run(&fx, variant, seed));
            if matches!(variant, Variant::SerSa | Variant::NoDd) {
                disentangle_time += t.elapsed();
            }
        }
    }
    let col = |v: usize, f: fn(&DeskRun) -> f64| median(&runs[v].iter().map(f).collect::<Vec<_>>());
    let (sa, dd, en, ro, mi) = (0, 1, 2, 3, 4);

    let sa_spe = col(sa, |r| r.spe_acc);
    let sa_com = col(sa, |r| r.com_acc);
    let sa_gap = col(sa, |r| r.spe_acc - r.com_acc);
    let dd_gap = col(dd, |r| r.spe_acc - r.com_acc);
    let c6 = Verdict {
        id: 6,
        name: "desk-scale disentanglement",
        pass: sa_spe >= 0.85 && sa_com <= 0.65 && dd_gap < sa_gap && disentangle_time < Duration::from_secs(600),
        detail: format!(
            "medians over {DESK_SEEDS} seeds: SER_SA probe O_spe {sa_spe:.3} (>= 0.85), O_com {sa_com:.3} (<= 0.65), gap {sa_gap:.3}; no_DD gap {dd_gap:.3} (< SER_SA gap); {:.0}s",
            disentangle_time.as_secs_f64()
        ),
    };

    let (m_sa, m_en, m_ro) = (col(sa, |r| r.mse), col(en, |r| r.mse), col(ro, |r| r.mse));
    let c7 = Verdict {
        id: 7,
        name: "desk-scale recommendation direction",
        pass: m_sa < m_en && m_en < m_ro && m_sa < m_ro,
        detail: format!(
            "median target test MSE over {DESK_SEEDS} seeds: SER_SA {m_sa:.4} < no_EN {m_en:.4} < rating_only {m_ro:.4} (no_DD {:.4}, SER_MI {:.4})",
            col(dd, |r| r.mse),
            col(mi, |r| r.mse)
        ),
    };

    let com = median_curve(&runs[sa].iter().map(|r| &r.com_curve).collect::<Vec<_>>());
    let spe = median_curve(&runs[sa].iter().map(|r| &r.spe_curve).collect::<Vec<_>>());
    let mic = median_curve(&runs[mi].iter().map(|r| &r.mi_curve).collect::<Vec<_>>());
    let tail = &com[com.len() / 2..];
    let (tmin, tmax) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let spe_max = spe.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spe_ok = spe.last() < spe.first() && spe.iter().all(|v| v.is_finite()) && spe_max <= 2.0 * std::f64::consts::LN_2;
    let final_mi = *mic.last().unwrap();
    let reach = mic
        .iter()
        .position(|v| (v - final_mi).abs() <= 0.1 * final_mi.abs())
        .map_or(mic.len(), |p| p + 1);
    let ratio = reach as f64 / mic.len() as f64;
    let c8 = Verdict {
        id: 8,
        name: "loss-curve properties",
        pass: spe_ok && tmin >= 0.3 && tmax <= 1.4 && ratio <= 0.2,
        detail: format!(
            "SER_SA L_spe {:.4} -> {:.4}, max {spe_max:.4} (<= 2 ln2); L_com final half in [{tmin:.3}, {tmax:.3}] (within [0.3, 1.4]); SER_MI |L_MI| within 10% of final {final_mi:.4} after {reach}/{} iterations, ratio {ratio:.2} (<= 0.2); total {:.0}s",
            spe.first().unwrap(),
            spe.last().unwrap(),
            mic.len(),
            t0.elapsed().as_secs_f64()
        ),
    };
    vec![c6, c7, c8]
}

// ---------------------------------------------------------------- 9

const SENTINEL: &str = "zzsentinelzz";

fn criterion_hygiene() -> Verdict {
    let c = ser_core::synth::generate(200, 4).unwrap();
    let mut entries: Vec<(String, Vec<f64>)> =
        c.table.words().iter().map(|w| (w.clone(), c.table.lookup(w))).collect();
    entries.push((SENTINEL.into(), vec![50.0; c.table.dim()]));
    let table = EmbeddingTable::from_entries(entries).unwrap();
    let clean = DomainDataset::from_records(Domain::Target, c.target.clone()).unwrap().split(4).unwrap();
    let marked = clean.clone().map_texts(|id, r| {
        if clean.split_of(id) == Split::Test {
            format!("{SENTINEL} {} {SENTINEL}", r.text)
        } else {
            r.text.clone()
        }
    });
    let source = DomainDataset::from_records(Domain::Source, c.source).unwrap().split(5).unwrap();
    let mc = common::small_model_config();
    let cfg = TrainConfig { iterations: 2, batch_src: 32, batch_tgt: 32, ..TrainConfig::default() };
    let model = training::run_training(&source, &clean, &table, &mc, &cfg).unwrap().model;
    let ids = clean.ids_in(Split::Test);
    let predict = |ds: &DomainDataset| {
        let b = BatchBuilder::new(ds, &table, mc.agg_words, mc.review_words).unwrap();
        eval::predict_records(&model, &b, &ids).unwrap()
    };
    let (a, b) = (predict(&clean), predict(&marked));
    let identical = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    Verdict {
        id: 9,
        name: "inference hygiene",
        pass: identical && !ids.is_empty(),
        detail: format!("{} target test predictions bitwise identical with and without sentinel token: {identical}", ids.len()),
    }
}

// ---------------------------------------------------------------- 10

fn criterion_reproducibility() -> Verdict {
    let fx = common::fixture(150, 8);
    let mc = common::small_model_config();
    let run = |variant| {
        let cfg = TrainConfig { iterations: 3, batch_src: 16, batch_tgt: 16, variant, seed: 13, ..TrainConfig::default() };
        let out = training::run_training(&fx.source, &fx.target, &fx.table, &mc, &cfg).unwrap();
        let ck = checkpoint::encode(&out.model, &fx.table.vocab_hash(), &serde_json::json!({"seed": 13}));
        (out.log, ck)
    };
    let mut same = true;
    for v in [Variant::SerSa, Variant::SerMi] {
        let (a, b) = (run(v), run(v));
        same &= a == b;
    }
    Verdict {
        id: 10,
        name: "reproducibility",
        pass: same,
        detail: format!("SER_SA and SER_MI logs and checkpoints bitwise identical across two runs: {same}"),
    }
}

fn main() {
    let t0 = Instant::now();
    let mut verdicts = Vec::new();
    for f in [criterion_gradcheck, criterion_grl, criterion_losses, criterion_mine, criterion_ndcg] {
        let v = f();
        report(&v);
        verdicts.push(v);
    }
    for v in desk_criteria() {
        report(&v);
        verdicts.push(v);
    }
    for f in [criterion_hygiene, criterion_reproducibility] {
        let v = f();
        report(&v);
        verdicts.push(v);
    }
    verdicts.sort_by_key(|v| v.id);
    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.0}s",
        verdicts.len(),
        t0.elapsed().as_secs_f64()
    );
    if passed < verdicts.len() && std::env::var("SER_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
