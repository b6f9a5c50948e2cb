//! Positive and hard-negative mining from sparse/dense agreement.
//!
//! For one query, a passage inside both retrievers' top-S is a positive. A
//! passage inside one retriever's top-S but outside the other's top-L is a
//! hard negative: one signal calls it relevant, the other does not.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Query};
use crate::dense::TrainingSample;
use crate::error::{Error, Result};
use crate::rank::RankedList;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningConfig {
    /// Rank threshold (inclusive) for "relevant".
    pub s: usize,
    /// Rank threshold beyond which a passage counts as "irrelevant".
    pub l: usize,
    pub n_random_negatives: usize,
    pub max_hard_negatives: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            s: 2,
            l: 20,
            n_random_negatives: 2,
            max_hard_negatives: 8,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s == 0 {
            return Err(Error::config("mining.s", "must be >= 1"));
        }
        if self.l < self.s {
            return Err(Error::config(
                "mining.l",
                format!("L = {} must be >= S = {}", self.l, self.s),
            ));
        }
        Ok(())
    }

    pub fn with_s(self, s: usize) -> Self {
        MiningConfig { s, ..self }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MinedSets {
    pub positives: BTreeSet<String>,
    pub negatives: BTreeSet<String>,
}

fn head(list: &RankedList, n: usize) -> HashSet<&str> {
    list.ids().take(n).collect()
}

/// `positives = S_s ∩ S_d`, `negatives = (S_s \ L_d) ∪ (S_d \ L_s)`.
pub fn mine_pairs(sparse: &RankedList, dense: &RankedList, cfg: &MiningConfig) -> Result<MinedSets> {
    cfg.validate()?;
    let (top_s_sparse, top_l_sparse) = (head(sparse, cfg.s), head(sparse, cfg.l));
    let (top_s_dense, top_l_dense) = (head(dense, cfg.s), head(dense, cfg.l));
    let positives = top_s_sparse
        .intersection(&top_s_dense)
        .map(|s| s.to_string())
        .collect();
    let negatives = top_s_sparse
        .difference(&top_l_dense)
        .chain(top_s_dense.difference(&top_l_sparse))
        .map(|s| s.to_string())
        .collect();
    Ok(MinedSets {
        positives,
        negatives,
    })
}

/// Negatives ordered by their best (1-based) rank in either list, then id.
pub fn order_hard_negatives(
    negatives: &BTreeSet<String>,
    sparse: &RankedList,
    dense: &RankedList,
) -> Vec<String> {
    let best = |id: &str| {
        sparse
            .rank_of(id)
            .into_iter()
            .chain(dense.rank_of(id))
            .min()
            .unwrap_or(usize::MAX)
    };
    let mut out: Vec<(usize, &String)> = negatives.iter().map(|id| (best(id), id)).collect();
    out.sort();
    out.into_iter().map(|(_, id)| id.clone()).collect()
}

/// Uniform random negatives, drawn from the query's language when the
/// corpus has passages in it.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    by_lang: BTreeMap<String, Vec<String>>,
    all: Vec<String>,
}

impl NegativeSampler {
    pub fn new(corpus: &Corpus) -> Self {
        let mut by_lang: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for p in corpus.iter() {
            by_lang.entry(p.lang.clone()).or_default().push(p.id.clone());
        }
        NegativeSampler {
            by_lang,
            all: corpus.iter().map(|p| p.id.clone()).collect(),
        }
    }

    pub fn pool(&self, lang: &str) -> &[String] {
        self.by_lang.get(lang).map_or(&self.all, Vec::as_slice)
    }

    /// Up to `n` distinct ids from the pool, none in `exclude`.
    pub fn draw<R: Rng + ?Sized>(
        &self,
        lang: &str,
        n: usize,
        exclude: &HashSet<&str>,
        rng: &mut R,
    ) -> Vec<String> {
        let pool = self.pool(lang);
        let mut chosen: Vec<String> = Vec::with_capacity(n);
        if n == 0 || pool.is_empty() {
            return chosen;
        }
        let mut taken: HashSet<&str> = HashSet::new();
        let mut attempts = 0;
        while chosen.len() < n && attempts < 16 * n + 32 {
            attempts += 1;
            let id = &pool[rng.gen_range(0..pool.len())];
            if !exclude.contains(id.as_str()) && taken.insert(id.as_str()) {
                chosen.push(id.clone());
            }
        }
        if chosen.len() < n {
            // Small or mostly excluded pool: pick from what is left.
            let mut rest: Vec<&String> = pool
                .iter()
                .filter(|id| !exclude.contains(id.as_str()) && !taken.contains(id.as_str()))
                .collect();
            while chosen.len() < n && !rest.is_empty() {
                let id = rest.swap_remove(rng.gen_range(0..rest.len()));
                chosen.push(id.clone());
            }
        }
        chosen
    }
}

/// One training sample per positive, all sharing the (capped) hard-negative
/// list; each draws its own random negatives outside positives ∪ negatives.
pub fn assemble_samples<R: Rng + ?Sized>(
    query: &Query,
    positives: &BTreeSet<String>,
    hard_ordered: &[String],
    excluded: &HashSet<&str>,
    sampler: &NegativeSampler,
    rng: &mut R,
    cfg: &MiningConfig,
) -> Vec<TrainingSample> {
    let hard: Vec<String> = hard_ordered
        .iter()
        .filter(|id| !positives.contains(*id))
        .take(cfg.max_hard_negatives)
        .cloned()
        .collect();
    let mut exclude: HashSet<&str> = excluded.clone();
    exclude.extend(positives.iter().map(String::as_str));
    exclude.extend(hard_ordered.iter().map(String::as_str));
    positives
        .iter()
        .map(|pos| TrainingSample {
            query: query.clone(),
            positive: pos.clone(),
            hard_negatives: hard.clone(),
            random_negatives: sampler.draw(&query.lang, cfg.n_random_negatives, &exclude, rng),
        })
        .collect()
}

pub fn assemble_mined_sample<R: Rng + ?Sized>(
    query: &Query,
    sets: &MinedSets,
    sparse: &RankedList,
    dense: &RankedList,
    sampler: &NegativeSampler,
    rng: &mut R,
    cfg: &MiningConfig,
) -> Vec<TrainingSample> {
    if sets.positives.is_empty() {
        return Vec::new();
    }
    let hard = order_hard_negatives(&sets.negatives, sparse, dense);
    let exclude = sets.negatives.iter().map(String::as_str).collect();
    assemble_samples(query, &sets.positives, &hard, &exclude, sampler, rng, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Sum,
    Product,
}

impl std::str::FromStr for FusionMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sum" => Ok(FusionMode::Sum),
            "product" => Ok(FusionMode::Product),
            other => Err(format!("unknown fusion mode `{other}` (sum|product)")),
        }
    }
}

fn min_max(list: &RankedList) -> HashMap<&str, f64> {
    let scores = list.entries().iter().map(|e| e.score);
    let lo = scores.clone().fold(f64::INFINITY, f64::min);
    let hi = scores.fold(f64::NEG_INFINITY, f64::max);
    list.entries()
        .iter()
        .map(|e| {
            let v = if hi > lo { (e.score - lo) / (hi - lo) } else { 1.0 };
            (e.id.as_str(), v)
        })
        .collect()
}

/// Min-max normalizes each list (missing ids score 0), combines per `mode`
/// and returns the top `k` of the union.
pub fn hybrid_fuse(sparse: &RankedList, dense: &RankedList, mode: FusionMode, k: usize) -> RankedList {
    let ns = min_max(sparse);
    let nd = min_max(dense);
    let ids: BTreeSet<&str> = ns.keys().chain(nd.keys()).copied().collect();
    RankedList::from_scores(
        ids.into_iter().map(|id| {
            let a = ns.get(id).copied().unwrap_or(0.0);
            let b = nd.get(id).copied().unwrap_or(0.0);
            let fused = match mode {
                FusionMode::Sum => a + b,
                FusionMode::Product => a * b,
            };
            (id, fused)
        }),
        k,
    )
}

/// Fusion baseline for mining: the fused top-S are positives and fused
/// entries ranked beyond L are negatives.
pub fn mine_fused(
    sparse: &RankedList,
    dense: &RankedList,
    mode: FusionMode,
    cfg: &MiningConfig,
) -> Result<(MinedSets, RankedList)> {
    cfg.validate()?;
    let fused = hybrid_fuse(sparse, dense, mode, 2 * cfg.l);
    let sets = MinedSets {
        positives: fused.ids().take(cfg.s).map(String::from).collect(),
        negatives: fused.ids().skip(cfg.l).map(String::from).collect(),
    };
    Ok((sets, fused))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSource {
    Labeled,
    Mined,
    Generated,
}

/// JSONL row of a persisted training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub query_id: String,
    pub query_text: String,
    pub lang: String,
    pub positive: String,
    pub hard_negatives: Vec<String>,
    pub random_negatives: Vec<String>,
    pub source: SampleSource,
}

impl SampleRecord {
    pub fn new(s: &TrainingSample, source: SampleSource) -> Self {
        SampleRecord {
            query_id: s.query.id.clone(),
            query_text: s.query.text.clone(),
            lang: s.query.lang.clone(),
            positive: s.positive.clone(),
            hard_negatives: s.hard_negatives.clone(),
            random_negatives: s.random_negatives.clone(),
            source,
        }
    }

    pub fn into_sample(self) -> TrainingSample {
        TrainingSample {
            query: Query {
                id: self.query_id,
                text: self.query_text,
                lang: self.lang,
            },
            positive: self.positive,
            hard_negatives: self.hard_negatives,
            random_negatives: self.random_negatives,
        }
    }
}

pub fn write_samples(path: &Path, samples: &[TrainingSample], source: SampleSource) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for s in samples {
        serde_json::to_writer(&mut w, &SampleRecord::new(s, source))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_samples(path: &Path) -> Result<Vec<SampleRecord>> {
    let io = |e| Error::io(path, e);
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path).map_err(io)?).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
