use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{render, sha256_hex, KvConfig};
use crate::corpus::TokenizerConfig;
use crate::dense::{AdamConfig, LrSchedule};
use crate::error::{Error, Result};
use crate::mining::{FusionMode, MiningConfig};
use crate::sparse::Bm25Params;

/// How training pairs are mined from unlabeled queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiningStrategy {
    /// Sparse/dense agreement for positives, disagreement for hard negatives.
    LexiconEnhanced,
    /// Fused ranking by summed normalized scores.
    SparsePlusDense,
    /// Fused ranking by multiplied normalized scores.
    SparseTimesDense,
    /// Agreement between two dense retrievers (second one frozen).
    DoubleDense,
    /// Agreement positives, no hard negatives.
    NoHardNegatives,
    /// Agreement positives, BM25 top passages as hard negatives.
    SparseHardNegatives,
}

impl MiningStrategy {
    pub const ALL: [MiningStrategy; 6] = [
        MiningStrategy::LexiconEnhanced,
        MiningStrategy::SparsePlusDense,
        MiningStrategy::SparseTimesDense,
        MiningStrategy::DoubleDense,
        MiningStrategy::NoHardNegatives,
        MiningStrategy::SparseHardNegatives,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MiningStrategy::LexiconEnhanced => "lexicon-enhanced",
            MiningStrategy::SparsePlusDense => "sparse-plus-dense",
            MiningStrategy::SparseTimesDense => "sparse-times-dense",
            MiningStrategy::DoubleDense => "double-dense",
            MiningStrategy::NoHardNegatives => "no-hard-negatives",
            MiningStrategy::SparseHardNegatives => "sparse-hard-negatives",
        }
    }

    pub fn fusion(self) -> Option<FusionMode> {
        match self {
            MiningStrategy::SparsePlusDense => Some(FusionMode::Sum),
            MiningStrategy::SparseTimesDense => Some(FusionMode::Product),
            _ => None,
        }
    }
}

impl FromStr for MiningStrategy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|m| m.name()).collect();
                format!("unknown strategy `{s}` (one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub iterations: usize,
    pub minibatches_per_iter: usize,
    /// When > 0, train this many passes over the iteration's data instead of
    /// a fixed number of mini-batches.
    pub epochs_per_iter: usize,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    pub mining: MiningConfig,
    pub n_generate: usize,
    pub skip_generation_first_iter: bool,
    pub generation: bool,
    pub query_filter: bool,
    pub dim: usize,
    pub shared_encoder: bool,
    /// Optimizer settings; `adam.lr` is the warm-up learning rate.
    pub adam: AdamConfig,
    /// Learning rate of the self-training iterations.
    pub iter_lr: f64,
    /// Applied afresh to every training stage.
    pub lr_schedule: LrSchedule,
    pub bm25: Bm25Params,
    pub tokenizer: TokenizerConfig,
    pub eval_k: Vec<usize>,
    pub strategy: MiningStrategy,
    /// Stop early once the mean target-language MRR gains less than this.
    pub plateau_epsilon: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            iterations: 3,
            minibatches_per_iter: 500,
            epochs_per_iter: 0,
            batch_size: 128,
            warmup_epochs: 3,
            mining: MiningConfig::default(),
            n_generate: 5000,
            skip_generation_first_iter: true,
            generation: true,
            query_filter: true,
            dim: 64,
            shared_encoder: true,
            adam: AdamConfig::default(),
            iter_lr: 1e-3,
            lr_schedule: LrSchedule::Linear { warmup: 0.1 },
            bm25: Bm25Params::default(),
            tokenizer: TokenizerConfig::default(),
            eval_k: vec![10, 100],
            strategy: MiningStrategy::LexiconEnhanced,
            plateau_epsilon: None,
        }
    }
}

fn schedule_from_kv(kv: &mut KvConfig, default: LrSchedule) -> Result<LrSchedule> {
    let name: Option<String> = kv.take("lr_schedule")?;
    let warmup: Option<f64> = kv.take("lr_warmup")?;
    let schedule = match (name.as_deref(), default) {
        (None, LrSchedule::Linear { warmup: w }) | (Some("linear"), LrSchedule::Linear { warmup: w }) => {
            LrSchedule::Linear { warmup: warmup.unwrap_or(w) }
        }
        (Some("linear"), LrSchedule::Constant) => LrSchedule::Linear { warmup: warmup.unwrap_or(0.1) },
        (None, LrSchedule::Constant) | (Some("constant"), _) => {
            if warmup.is_some() {
                return Err(Error::config("lr_warmup", "only valid with lr_schedule = linear"));
            }
            LrSchedule::Constant
        }
        (Some(other), _) => {
            return Err(Error::config("lr_schedule", format!("unknown schedule `{other}` (constant|linear)")))
        }
    };
    if let LrSchedule::Linear { warmup } = schedule {
        if !(0.0..=1.0).contains(&warmup) {
            return Err(Error::config("lr_warmup", "must lie in [0, 1]"));
        }
    }
    Ok(schedule)
}

/// Mined data for the query generator always uses S = 1.
pub const GENERATOR_MINING_S: usize = 1;

impl PipelineConfig {
    pub fn from_kv(mut kv: KvConfig) -> Result<Self> {
        let d = PipelineConfig::default();
        let eval_k = match kv.take_list("eval_k") {
            None => d.eval_k.clone(),
            Some(list) => list
                .iter()
                .map(|s| {
                    s.parse::<usize>()
                        .map_err(|e| Error::config("eval_k", format!("`{s}`: {e}")))
                })
                .collect::<Result<_>>()?,
        };
        if let Some(s) = kv.take::<usize>("gen_mining_s")? {
            if s != GENERATOR_MINING_S {
                return Err(Error::config("gen_mining_s", "is fixed to 1"));
            }
        }
        let cfg = PipelineConfig {
            seed: kv.take_or("seed", d.seed)?,
            iterations: kv.take_or("iterations", d.iterations)?,
            minibatches_per_iter: kv.take_or("minibatches_per_iter", d.minibatches_per_iter)?,
            epochs_per_iter: kv.take_or("epochs_per_iter", d.epochs_per_iter)?,
            batch_size: kv.take_or("batch_size", d.batch_size)?,
            warmup_epochs: kv.take_or("warmup_epochs", d.warmup_epochs)?,
            mining: MiningConfig {
                s: kv.take_or("mining.s", d.mining.s)?,
                l: kv.take_or("mining.l", d.mining.l)?,
                n_random_negatives: kv.take_or("mining.n_random_negatives", d.mining.n_random_negatives)?,
                max_hard_negatives: kv.take_or("mining.max_hard_negatives", d.mining.max_hard_negatives)?,
            },
            n_generate: kv.take_or("n_generate", d.n_generate)?,
            skip_generation_first_iter: kv
                .take_or("skip_generation_first_iter", d.skip_generation_first_iter)?,
            generation: kv.take_or("generation", d.generation)?,
            query_filter: kv.take_or("query_filter", d.query_filter)?,
            dim: kv.take_or("dim", d.dim)?,
            shared_encoder: kv.take_or("shared_encoder", d.shared_encoder)?,
            adam: AdamConfig {
                lr: kv.take_or("lr", d.adam.lr)?,
                beta1: kv.take_or("beta1", d.adam.beta1)?,
                beta2: kv.take_or("beta2", d.adam.beta2)?,
                eps: kv.take_or("eps", d.adam.eps)?,
                weight_decay: kv.take_or("weight_decay", d.adam.weight_decay)?,
            },
            iter_lr: kv.take_or("iter_lr", d.iter_lr)?,
            lr_schedule: schedule_from_kv(&mut kv, d.lr_schedule)?,
            bm25: Bm25Params {
                k1: kv.take_or("bm25.k1", d.bm25.k1)?,
                b: kv.take_or("bm25.b", d.bm25.b)?,
            },
            tokenizer: TokenizerConfig {
                lowercase: kv.take_or("tokenizer.lowercase", d.tokenizer.lowercase)?,
                cjk_char_split: kv.take_or("tokenizer.cjk_char_split", d.tokenizer.cjk_char_split)?,
                min_token_len: kv.take_or("tokenizer.min_token_len", d.tokenizer.min_token_len)?,
            },
            eval_k,
            strategy: kv.take_or("strategy", d.strategy)?,
            plateau_epsilon: kv.take("plateau_epsilon")?,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(KvConfig::load(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.dim == 0 {
            return Err(Error::config("dim", "must be >= 1"));
        }
        if self.tokenizer.min_token_len == 0 {
            return Err(Error::config("tokenizer.min_token_len", "must be >= 1"));
        }
        if self.eval_k.is_empty() || self.eval_k.contains(&0) {
            return Err(Error::config("eval_k", "need at least one cutoff, all >= 1"));
        }
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::config("lr", "must be a non-negative number"));
        }
        if !(self.iter_lr >= 0.0 && self.iter_lr.is_finite()) {
            return Err(Error::config("iter_lr", "must be a non-negative number"));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) {
            return Err(Error::config("beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::config("beta2", "must lie in [0, 1)"));
        }
        self.bm25.validate().map_err(|e| match e {
            Error::Config { key, message } => Error::config(format!("bm25.{key}"), message),
            other => other,
        })?;
        self.mining.validate()
    }

    /// Canonical `key = value` form; parsing it back yields `self`.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("seed", self.seed.to_string());
        put("iterations", self.iterations.to_string());
        put("minibatches_per_iter", self.minibatches_per_iter.to_string());
        put("epochs_per_iter", self.epochs_per_iter.to_string());
        put("batch_size", self.batch_size.to_string());
        put("warmup_epochs", self.warmup_epochs.to_string());
        put("mining.s", self.mining.s.to_string());
        put("mining.l", self.mining.l.to_string());
        put("mining.n_random_negatives", self.mining.n_random_negatives.to_string());
        put("mining.max_hard_negatives", self.mining.max_hard_negatives.to_string());
        put("gen_mining_s", GENERATOR_MINING_S.to_string());
        put("n_generate", self.n_generate.to_string());
        put("skip_generation_first_iter", self.skip_generation_first_iter.to_string());
        put("generation", self.generation.to_string());
        put("query_filter", self.query_filter.to_string());
        put("dim", self.dim.to_string());
        put("shared_encoder", self.shared_encoder.to_string());
        put("lr", format!("{:?}", self.adam.lr));
        put("iter_lr", format!("{:?}", self.iter_lr));
        match self.lr_schedule {
            LrSchedule::Constant => put("lr_schedule", "constant".into()),
            LrSchedule::Linear { warmup } => {
                put("lr_schedule", "linear".into());
                put("lr_warmup", format!("{warmup:?}"));
            }
        }
        put("beta1", format!("{:?}", self.adam.beta1));
        put("beta2", format!("{:?}", self.adam.beta2));
        put("eps", format!("{:?}", self.adam.eps));
        put("weight_decay", format!("{:?}", self.adam.weight_decay));
        put("bm25.k1", format!("{:?}", self.bm25.k1));
        put("bm25.b", format!("{:?}", self.bm25.b));
        put("tokenizer.lowercase", self.tokenizer.lowercase.to_string());
        put("tokenizer.cjk_char_split", self.tokenizer.cjk_char_split.to_string());
        put("tokenizer.min_token_len", self.tokenizer.min_token_len.to_string());
        put(
            "eval_k",
            self.eval_k.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
        );
        put("strategy", self.strategy.name().to_string());
        if let Some(eps) = self.plateau_epsilon {
            put("plateau_epsilon", format!("{eps:?}"));
        }
        m
    }

    pub fn render(&self) -> String {
        render(&self.to_kv())
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.render().as_bytes())
    }

    /// Fields that only affect how far the run goes, excluded from the hash
    /// used to validate resumption.
    pub fn resume_hash(&self) -> String {
        let mut kv = self.to_kv();
        kv.remove("iterations");
        kv.remove("plateau_epsilon");
        sha256_hex(render(&kv).as_bytes())
    }

    /// Primary cutoff: the first of `eval_k`.
    pub fn primary_k(&self) -> usize {
        self.eval_k[0]
    }
}
