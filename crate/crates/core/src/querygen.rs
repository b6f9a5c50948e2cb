//! Query generation for unlabeled passages.
//!
//! The built-in generator is a per-language term-salience sampler: trained on
//! (query, positive passage) pairs it learns how likely a passage term is to
//! show up in a query about that passage, plus a distribution of query
//! lengths. Generation samples distinct passage terms proportionally to that
//! salience. Generated pairs survive only if both retrievers put the source
//! passage first.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Passage, Query, TokenizerConfig};
use crate::dense::{search_dense, DenseIndex, EncoderParams, Staleness, TrainingSample};
use crate::error::{Error, Result};
use crate::mining::{MiningConfig, NegativeSampler};
use crate::rank::RankedList;
use crate::sparse::InvertedIndex;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct LangStats {
    /// Training pairs whose passage contains the term.
    in_passage: BTreeMap<String, u64>,
    /// ... and whose query also contains it.
    in_query: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorModel {
    langs: BTreeMap<String, LangStats>,
    query_len_counts: BTreeMap<usize, u64>,
    version: u64,
}

impl GeneratorModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Add-one smoothed `P(term in query | term in positive passage)`.
    pub fn salience(&self, lang: &str, token: &str) -> f64 {
        let (a, n) = self
            .langs
            .get(lang)
            .map(|s| {
                (
                    s.in_query.get(token).copied().unwrap_or(0),
                    s.in_passage.get(token).copied().unwrap_or(0),
                )
            })
            .unwrap_or((0, 0));
        (a as f64 + 1.0) / (n as f64 + 2.0)
    }

    /// Salience of a term never seen in training.
    pub fn unseen_salience() -> f64 {
        0.5
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.langs.keys().map(String::as_str)
    }

    pub fn query_len_counts(&self) -> &BTreeMap<usize, u64> {
        &self.query_len_counts
    }

    pub fn sample_len<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        let total: u64 = self.query_len_counts.values().sum();
        if total == 0 {
            return None;
        }
        let mut u = rng.gen_range(0..total);
        for (&len, &c) in &self.query_len_counts {
            if u < c {
                return Some(len);
            }
            u -= c;
        }
        unreachable!("u < total")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Refits the statistics of every language present in `pairs` (passage →
/// query), leaving other languages untouched. Identical pairs count once.
pub fn train_generator(
    model: &GeneratorModel,
    pairs: &[(&Query, &Passage)],
    tok: &TokenizerConfig,
) -> Result<GeneratorModel> {
    if pairs.is_empty() {
        return Err(Error::Empty("generator training pairs".into()));
    }
    let mut distinct: BTreeSet<(String, String, Vec<String>)> = BTreeSet::new();
    for (q, p) in pairs {
        let qt: BTreeSet<String> = tokenize(&q.text, tok).into_iter().collect();
        distinct.insert((p.lang.clone(), p.id.clone(), qt.into_iter().collect()));
    }
    let passages: BTreeMap<&str, &Passage> = pairs.iter().map(|(_, p)| (p.id.as_str(), *p)).collect();

    let mut fresh: BTreeMap<String, LangStats> = BTreeMap::new();
    let mut lens: BTreeMap<usize, u64> = BTreeMap::new();
    for (lang, pid, qtoks) in &distinct {
        let stats = fresh.entry(lang.clone()).or_default();
        let ptoks: BTreeSet<String> = tokenize(&passages[pid.as_str()].text, tok).into_iter().collect();
        let qset: HashSet<&String> = qtoks.iter().collect();
        for t in &ptoks {
            *stats.in_passage.entry(t.clone()).or_default() += 1;
            if qset.contains(t) {
                *stats.in_query.entry(t.clone()).or_default() += 1;
            }
        }
        if !qtoks.is_empty() {
            *lens.entry(qtoks.len()).or_default() += 1;
        }
    }
    if lens.is_empty() {
        return Err(Error::Empty("every training query is empty after tokenization".into()));
    }
    let mut langs = model.langs.clone();
    langs.extend(fresh);
    Ok(GeneratorModel {
        langs,
        query_len_counts: lens,
        version: model.version + 1,
    })
}

/// Samples `len` distinct tokens (fewer if the passage is shorter) without
/// replacement, with probability proportional to salience.
pub fn sample_terms<R: Rng + ?Sized>(
    model: &GeneratorModel,
    lang: &str,
    passage_tokens: &[String],
    len: usize,
    rng: &mut R,
) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut cand: Vec<(&String, f64)> = passage_tokens
        .iter()
        .filter(|t| seen.insert(t.as_str()))
        .map(|t| (t, model.salience(lang, t)))
        .collect();
    let mut out = Vec::with_capacity(len);
    while out.len() < len && !cand.is_empty() {
        let total: f64 = cand.iter().map(|c| c.1).sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = cand.len() - 1;
        for (i, c) in cand.iter().enumerate() {
            if u < c.1 {
                pick = i;
                break;
            }
            u -= c.1;
        }
        out.push(cand.remove(pick).0.clone());
    }
    out
}

/// Generates a query for `passage` in the passage's language.
pub fn generate_query<R: Rng + ?Sized>(
    model: &GeneratorModel,
    passage: &Passage,
    query_id: impl Into<String>,
    tok: &TokenizerConfig,
    rng: &mut R,
) -> Result<Query> {
    if model.version == 0 {
        return Err(Error::Invalid("query generator is untrained".into()));
    }
    let tokens = tokenize(&passage.text, tok);
    if tokens.is_empty() {
        return Err(Error::Invalid(format!("passage `{}` has no tokens", passage.id)));
    }
    let len = model.sample_len(rng).unwrap_or(1).max(1);
    let terms = sample_terms(model, &passage.lang, &tokens, len, rng);
    Ok(Query {
        id: query_id.into(),
        text: terms.join(" "),
        lang: passage.lang.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedPair {
    pub query: Query,
    pub passage_id: String,
    pub accepted: bool,
}

/// Why the filter accepted or rejected a generated pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    SparseTopMismatch { sparse_top: Option<String> },
    DenseTopMismatch { dense_top: Option<String> },
}

impl Verdict {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Verdict::Accepted)
    }
}

/// Top-1 check on precomputed rankings.
pub fn verdict_from_lists(source: &str, sparse: &RankedList, dense: &RankedList) -> Verdict {
    let sparse_top = sparse.top().map(|e| e.id.clone());
    let dense_top = dense.top().map(|e| e.id.clone());
    if sparse_top.as_deref() != Some(source) {
        Verdict::SparseTopMismatch { sparse_top }
    } else if dense_top.as_deref() != Some(source) {
        Verdict::DenseTopMismatch { dense_top }
    } else {
        Verdict::Accepted
    }
}

/// True iff the source passage is the top-1 result of both retrievers.
pub fn filter_generated(
    pair: &GeneratedPair,
    sparse: &InvertedIndex,
    dense: &DenseIndex,
    params: &EncoderParams,
    tok: &TokenizerConfig,
) -> Result<bool> {
    let s = sparse.search(&pair.query.text, 1);
    let d = search_dense(dense, params, &pair.query.text, tok, 1, Staleness::Reject)?;
    Ok(verdict_from_lists(&pair.passage_id, &s, &d).is_accepted())
}

/// Hard negatives are the retrievers' top passages other than the positive:
/// the dense list first, then the sparse list, deduplicated and capped.
pub fn assemble_from_lists<R: Rng + ?Sized>(
    pair: &GeneratedPair,
    sparse: &RankedList,
    dense: &RankedList,
    sampler: &NegativeSampler,
    rng: &mut R,
    cfg: &MiningConfig,
) -> Result<TrainingSample> {
    if !pair.accepted {
        return Err(Error::Invalid(format!(
            "generated query `{}` was not accepted by the filter",
            pair.query.id
        )));
    }
    let mut seen: HashSet<&str> = HashSet::new();
    seen.insert(pair.passage_id.as_str());
    let ordered: Vec<&str> = dense.ids().chain(sparse.ids()).filter(|id| seen.insert(id)).collect();
    let hard: Vec<String> = ordered
        .iter()
        .take(cfg.max_hard_negatives)
        .map(|s| s.to_string())
        .collect();
    let random = sampler.draw(&pair.query.lang, cfg.n_random_negatives, &seen, rng);
    Ok(TrainingSample {
        query: pair.query.clone(),
        positive: pair.passage_id.clone(),
        hard_negatives: hard,
        random_negatives: random,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn assemble_generated_sample<R: Rng + ?Sized>(
    pair: &GeneratedPair,
    sparse: &InvertedIndex,
    dense: &DenseIndex,
    params: &EncoderParams,
    tok: &TokenizerConfig,
    sampler: &NegativeSampler,
    rng: &mut R,
    cfg: &MiningConfig,
) -> Result<TrainingSample> {
    let k = cfg.max_hard_negatives + 1;
    let s = sparse.search(&pair.query.text, k);
    let d = search_dense(dense, params, &pair.query.text, tok, k, Staleness::Reject)?;
    assemble_from_lists(pair, &s, &d, sampler, rng, cfg)
}
