use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ser_core::batch::BatchBuilder;
use ser_core::checkpoint::{self, Checkpoint};
use ser_core::corpus::{load_reviews, Domain, DomainDataset, EmbeddingTable, Split};
use ser_core::eval;
use ser_core::model::FeRole;
use ser_core::synth;
use ser_core::training;
use ser_core::variant::Variant;

use crate::config::{RunArgs, RunConfig, UsageError};

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint";
pub const LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.tsv";
pub const ABLATION_FILE: &str = "ablation.csv";

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.require(&cfg.out, "out", "output directory")?.to_path_buf();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn load_table(cfg: &RunConfig) -> Result<EmbeddingTable> {
    let p = cfg.require(&cfg.emb, "emb", "word-vector file")?;
    Ok(EmbeddingTable::load(p)?)
}

/// Reviews of one domain, split with the run seed (target uses seed + 1).
fn load_domain(cfg: &RunConfig, domain: Domain) -> Result<DomainDataset> {
    let (path, flag) = match domain {
        Domain::Source => (&cfg.source, "source"),
        Domain::Target => (&cfg.target, "target"),
    };
    let p = cfg.require(path, flag, "reviews in JSON lines")?;
    let ds = load_reviews(p, domain, &cfg.fields)?;
    if ds.skipped() > 0 {
        eprintln!("{}: skipped {} malformed lines", p.display(), ds.skipped());
    }
    let seed = cfg.train.seed.wrapping_add(domain.index() as u64);
    Ok(ds.split(seed)?)
}

fn save_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    write(&dir.join(CONFIG_FILE), serde_json::to_string_pretty(cfg)? + "\n")
}

pub fn train(args: &RunArgs) -> Result<()> {
    let mut cfg = args.resolve()?;
    let table = load_table(&cfg)?;
    let dir = out_dir(&cfg)?;
    let source = load_domain(&cfg, Domain::Source)?;
    let target = load_domain(&cfg, Domain::Target)?;
    cfg.model.emb_dim = table.dim();
    save_config(&dir, &cfg)?;

    let outcome = training::run_training(&source, &target, &table, &cfg.model, &cfg.train)?;
    write(&dir.join(LOG_FILE), &outcome.log)?;
    checkpoint::save(
        &dir.join(CHECKPOINT_FILE),
        &outcome.model,
        &table.vocab_hash(),
        &serde_json::to_value(&cfg)?,
    )?;
    let builder = BatchBuilder::new(&target, &table, cfg.model.agg_words, cfg.model.review_words)?;
    let metrics = eval::evaluate(&outcome.model, &builder, Split::Test, cfg.k)?;
    write(&dir.join(METRICS_FILE), metrics.to_csv())?;
    println!(
        "variant {} | iterations {} | best iteration {} | best val MSE {:.6} | test MSE {:.6} | nDCG@{} {}",
        cfg.train.variant,
        outcome.iterations_run(),
        outcome.best_iter,
        outcome.best_val_mse,
        metrics.mse,
        cfg.k,
        metrics.ndcg.map_or("n/a".into(), |v| format!("{v:.6}")),
    );
    println!("wrote {}", dir.display());
    Ok(())
}

/// A checkpoint plus the run config it was trained with, with command-line
/// flags layered on top.
struct Loaded {
    ck: Checkpoint,
    cfg: RunConfig,
    table: EmbeddingTable,
}

fn open_checkpoint(path: &Option<PathBuf>, args: &RunArgs) -> Result<Loaded> {
    let path = match path {
        Some(p) => p.clone(),
        None => match &args.out {
            Some(d) => d.join(CHECKPOINT_FILE),
            None => {
                return Err(UsageError(
                    "missing required flag --checkpoint (or --out holding a checkpoint)".into(),
                )
                .into())
            }
        },
    };
    let ck = checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let echoed: RunConfig = serde_json::from_value(ck.run_config.clone()).unwrap_or_default();
    let base = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => echoed,
    };
    let mut cfg = args.apply(base);
    if args.out.is_none() {
        cfg.out = path.parent().map(Path::to_path_buf);
    }
    let table = load_table(&cfg)?;
    ck.check_vocab(&table.vocab_hash(), table.dim())?;
    Ok(Loaded { ck, cfg, table })
}

pub fn eval(checkpoint: &Option<PathBuf>, args: &RunArgs) -> Result<()> {
    let Loaded { ck, cfg, table } = open_checkpoint(checkpoint, args)?;
    let target = load_domain(&cfg, Domain::Target)?;
    let m = &ck.model.config;
    let builder = BatchBuilder::new(&target, &table, m.agg_words, m.review_words)?;
    let metrics = eval::evaluate(&ck.model, &builder, Split::Test, cfg.k)?;
    let csv = metrics.to_csv();
    let dir = out_dir(&cfg)?;
    write(&dir.join(METRICS_FILE), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn ablate(args: &RunArgs, seeds: &Option<Vec<u64>>, variants: &Option<Vec<Variant>>) -> Result<()> {
    let mut cfg = args.resolve()?;
    if let Some(s) = seeds {
        cfg.seeds.clone_from(s);
    }
    if let Some(v) = variants {
        cfg.variants.clone_from(v);
    }
    let table = load_table(&cfg)?;
    let dir = out_dir(&cfg)?;
    let source = load_domain(&cfg, Domain::Source)?;
    let target = load_domain(&cfg, Domain::Target)?;
    cfg.model.emb_dim = table.dim();
    save_config(&dir, &cfg)?;
    let report = training::run_ablation(
        &source,
        &target,
        &table,
        &cfg.model,
        &cfg.train,
        &cfg.variants,
        &cfg.seeds,
        cfg.k,
    )?;
    let csv = report.to_csv();
    write(&dir.join(ABLATION_FILE), &csv)?;
    print!("{csv}");
    Ok(())
}

fn both_domains(l: &Loaded) -> Result<[DomainDataset; 2]> {
    Ok([load_domain(&l.cfg, Domain::Source)?, load_domain(&l.cfg, Domain::Target)?])
}

pub fn export(checkpoint: &Option<PathBuf>, args: &RunArgs, count: usize) -> Result<()> {
    if count == 0 {
        return Err(UsageError("--count must be positive".into()).into());
    }
    let l = open_checkpoint(checkpoint, args)?;
    let [s, t] = both_domains(&l)?;
    let m = &l.ck.model.config;
    let bs = BatchBuilder::new(&s, &l.table, m.agg_words, m.review_words)?;
    let bt = BatchBuilder::new(&t, &l.table, m.agg_words, m.review_words)?;
    let dir = out_dir(&l.cfg)?;
    let path = dir.join(EMBEDDINGS_FILE);
    let mut f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let rows = eval::export_embeddings(&l.ck.model, [&bs, &bt], count, l.cfg.train.seed, &mut f)?;
    f.flush()?;
    println!("wrote {rows} rows to {}", path.display());
    Ok(())
}

pub fn probe(checkpoint: &Option<PathBuf>, args: &RunArgs) -> Result<()> {
    let l = open_checkpoint(checkpoint, args)?;
    let [s, t] = both_domains(&l)?;
    let m = &l.ck.model.config;
    let bs = BatchBuilder::new(&s, &l.table, m.agg_words, m.review_words)?;
    let bt = BatchBuilder::new(&t, &l.table, m.agg_words, m.review_words)?;
    let held = |ds: &DomainDataset| -> Vec<usize> {
        ds.ids_in(Split::Test).into_iter().chain(ds.ids_in(Split::Validation)).collect()
    };
    let (si, ti) = (held(&s), held(&t));
    let r = eval::domain_probe(&l.ck.model, [&bs, &bt], [&si, &ti], l.cfg.train.seed)?;
    println!("samples_per_domain\t{}", r.per_domain);
    println!("specific_acc\t{:.6}", r.specific_acc);
    println!("common_acc\t{:.6}", r.common_acc);
    Ok(())
}

pub fn explain(
    checkpoint: &Option<PathBuf>,
    args: &RunArgs,
    user: &str,
    item: &str,
    domain: Domain,
    n_words: usize,
) -> Result<()> {
    if n_words == 0 {
        return Err(UsageError("--n-words must be positive".into()).into());
    }
    let l = open_checkpoint(checkpoint, args)?;
    let ds = load_domain(&l.cfg, domain)?;
    let m = &l.ck.model.config;
    let b = BatchBuilder::new(&ds, &l.table, m.agg_words, m.review_words)?;
    let batch = b.pair_batch(&[(user, item)], &l.ck.model.entities[domain.index()])?;
    let (spe, com) = l.ck.model.features(domain, &batch)?;
    if spe[0].iter().chain(&com[0]).all(|v| *v == 0.0) {
        bail!("user `{user}` and item `{item}` have no training reviews in the {} domain", domain.tag());
    }
    for (label, role, feat) in [
        ("specific", FeRole::specific_for(domain), &spe[0]),
        ("common", FeRole::Common, &com[0]),
    ] {
        let [u, i] = eval::nearest_words(&l.ck.model, role, feat, &l.table, n_words)?;
        for (half, words) in [("user", u), ("item", i)] {
            let list: Vec<String> = words.iter().map(|(w, c)| format!("{w}({c:.3})")).collect();
            println!("{label}\t{half}\t{}", list.join(" "));
        }
    }
    Ok(())
}

pub fn synth(seed: u64, size: usize, out: &Path) -> Result<()> {
    let corpus = synth::generate(size, seed)?;
    let p = synth::write_corpus(&corpus, out)?;
    println!("source     {}", p.source.display());
    println!("target     {}", p.target.display());
    println!("embeddings {}", p.embeddings.display());
    Ok(())
}
