use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use ser_core::corpus::FieldMapping;
use ser_core::model::ModelConfig;
use ser_core::training::TrainConfig;
use ser_core::variant::Variant;

/// Bad or missing command-line input; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Everything that determines a run. Echoed verbatim as `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub emb: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub fields: FieldMapping,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// nDCG cutoff.
    pub k: usize,
    /// Ablation seeds.
    pub seeds: Vec<u64>,
    /// Ablation variants.
    pub variants: Vec<Variant>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            source: None,
            target: None,
            emb: None,
            out: None,
            fields: FieldMapping::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            k: 5,
            seeds: (0..5).collect(),
            variants: vec![Variant::SerSa, Variant::NoDd, Variant::NoEn],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing run config {}", path.display()))
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, flag: &str, what: &str) -> Result<&'a Path> {
        value.as_deref().ok_or_else(|| {
            UsageError(format!(
                "missing required flag --{flag} ({what}); pass --{flag} <PATH>, set SER_{}, or put `{flag}` in --config",
                flag.to_ascii_uppercase()
            ))
            .into()
        })
    }
}

/// Flags shared by every command that runs or inspects a model. Each one
/// overrides the matching field of `--config`.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// JSON run configuration (the `config.json` echoed by a previous run works).
    #[arg(long, env = "SER_CONFIG")]
    pub config: Option<PathBuf>,
    /// Source-domain reviews, JSON lines.
    #[arg(long, env = "SER_SOURCE")]
    pub source: Option<PathBuf>,
    /// Target-domain reviews, JSON lines.
    #[arg(long, env = "SER_TARGET")]
    pub target: Option<PathBuf>,
    /// Word vectors, one `word v1 .. vc` per line.
    #[arg(long, env = "SER_EMB")]
    pub emb: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "SER_OUT")]
    pub out: Option<PathBuf>,
    /// Review field names: `amazon`, `default`, or `user=K,item=K,rating=K,text=K`.
    #[arg(long, env = "SER_FIELDS")]
    pub fields: Option<FieldMapping>,
    #[arg(long, env = "SER_VARIANT")]
    pub variant: Option<Variant>,
    #[arg(long, env = "SER_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "SER_ALPHA")]
    pub alpha: Option<f64>,
    #[arg(long, env = "SER_BETA")]
    pub beta: Option<f64>,
    #[arg(long, env = "SER_GAMMA")]
    pub gamma: Option<f64>,
    /// Decoupled weight decay.
    #[arg(long, env = "SER_DELTA")]
    pub delta: Option<f64>,
    #[arg(long, env = "SER_LR")]
    pub lr: Option<f64>,
    /// Maximum training iterations (source passes).
    #[arg(long, env = "SER_ITERS")]
    pub iters: Option<usize>,
    #[arg(long, env = "SER_PATIENCE")]
    pub patience: Option<usize>,
    /// Batch size used for both domains.
    #[arg(long, env = "SER_BATCH")]
    pub batch: Option<usize>,
    /// nDCG cutoff.
    #[arg(long, env = "SER_K")]
    pub k: Option<usize>,
}

impl RunArgs {
    /// Apply the flags on top of `base`.
    pub fn apply(&self, mut cfg: RunConfig) -> RunConfig {
        macro_rules! set {
            ($flag:ident => $($field:tt)+) => {
                if let Some(v) = self.$flag.clone() {
                    cfg.$($field)+ = v;
                }
            };
        }
        for (flag, slot) in [
            (&self.source, &mut cfg.source),
            (&self.target, &mut cfg.target),
            (&self.emb, &mut cfg.emb),
            (&self.out, &mut cfg.out),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        set!(fields => fields);
        set!(variant => train.variant);
        set!(seed => train.seed);
        set!(alpha => train.alpha);
        set!(beta => train.beta);
        set!(gamma => train.gamma);
        set!(delta => train.delta);
        set!(lr => train.lr);
        set!(iters => train.iterations);
        set!(patience => train.patience);
        set!(k => k);
        if let Some(b) = self.batch {
            cfg.train.batch_src = b;
            cfg.train.batch_tgt = b;
        }
        cfg
    }

    /// `--config` (or defaults) with the flags applied.
    pub fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Ok(self.apply(base))
    }
}
