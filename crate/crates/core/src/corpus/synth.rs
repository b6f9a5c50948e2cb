//! Synthetic multilingual retrieval benchmark.
//!
//! Each language owns a disjoint vocabulary. Topics own disjoint slices of
//! their language's vocabulary ("topic terms"); the rest is background.
//! Passages mix Zipf-weighted topic terms with uniform background terms.
//! A query is anchored on one passage and samples topic terms present in it;
//! it is judged relevant to every passage of the same topic that contains at
//! least `min_shared_terms` query terms (the anchor with grade 2, others with
//! grade 1).
//!
//! The first language is the source language: its training queries carry
//! judgments. The remaining target languages only get unlabeled training
//! queries. Every language gets judged dev queries for evaluation.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    load_passages, load_qrels, load_queries, write_jsonl, write_qrels, Corpus, Judgment,
    JudgmentSet, Passage, Query, QuerySet,
};
use crate::config::KvConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Language codes; the first one is the labeled source language.
    pub languages: Vec<String>,
    pub topics_per_lang: usize,
    pub passages_per_topic: usize,
    /// Vocabulary size per language.
    pub vocab_size: usize,
    /// Topic terms per topic.
    pub topic_terms: usize,
    pub passage_len: usize,
    /// Probability that a passage token is a topic term.
    pub topic_mix: f64,
    pub query_len: usize,
    /// Topic terms each passage draws its topical tokens from (0 = all).
    pub focus_terms: usize,
    /// Distinct query terms a same-topic passage must contain to be judged
    /// relevant (capped at the query's own term count).
    pub min_shared_terms: usize,
    /// Fraction of source training queries that carry judgments.
    pub labeled_frac: f64,
    pub train_queries_per_lang: usize,
    pub dev_queries_per_lang: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            languages: vec!["en".into(), "sw".into(), "te".into()],
            topics_per_lang: 40,
            passages_per_topic: 42,
            vocab_size: 1500,
            topic_terms: 20,
            passage_len: 60,
            topic_mix: 0.25,
            query_len: 3,
            focus_terms: 0,
            min_shared_terms: 1,
            labeled_frac: 1.0,
            train_queries_per_lang: 400,
            dev_queries_per_lang: 500,
        }
    }
}

impl SynthSpec {
    pub const KEYS: &'static [&'static str] = &[
        "languages",
        "topics_per_lang",
        "passages_per_topic",
        "vocab_size",
        "topic_terms",
        "passage_len",
        "topic_mix",
        "query_len",
        "focus_terms",
        "min_shared_terms",
        "labeled_frac",
        "train_queries_per_lang",
        "dev_queries_per_lang",
    ];

    pub fn from_kv(mut kv: KvConfig) -> Result<Self> {
        let d = SynthSpec::default();
        let spec = SynthSpec {
            languages: kv.take_list("languages").unwrap_or(d.languages),
            topics_per_lang: kv.take_or("topics_per_lang", d.topics_per_lang)?,
            passages_per_topic: kv.take_or("passages_per_topic", d.passages_per_topic)?,
            vocab_size: kv.take_or("vocab_size", d.vocab_size)?,
            topic_terms: kv.take_or("topic_terms", d.topic_terms)?,
            passage_len: kv.take_or("passage_len", d.passage_len)?,
            topic_mix: kv.take_or("topic_mix", d.topic_mix)?,
            query_len: kv.take_or("query_len", d.query_len)?,
            focus_terms: kv.take_or("focus_terms", d.focus_terms)?,
            min_shared_terms: kv.take_or("min_shared_terms", d.min_shared_terms)?,
            labeled_frac: kv.take_or("labeled_frac", d.labeled_frac)?,
            train_queries_per_lang: kv.take_or("train_queries_per_lang", d.train_queries_per_lang)?,
            dev_queries_per_lang: kv.take_or("dev_queries_per_lang", d.dev_queries_per_lang)?,
        };
        kv.finish()?;
        spec.validate()?;
        Ok(spec)
    }

    /// Canonical `key -> value` form, parseable by [`SynthSpec::from_kv`].
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("languages", self.languages.join(","));
        put("topics_per_lang", self.topics_per_lang.to_string());
        put("passages_per_topic", self.passages_per_topic.to_string());
        put("vocab_size", self.vocab_size.to_string());
        put("topic_terms", self.topic_terms.to_string());
        put("passage_len", self.passage_len.to_string());
        put("topic_mix", format!("{:?}", self.topic_mix));
        put("query_len", self.query_len.to_string());
        put("focus_terms", self.focus_terms.to_string());
        put("min_shared_terms", self.min_shared_terms.to_string());
        put("labeled_frac", format!("{:?}", self.labeled_frac));
        put("train_queries_per_lang", self.train_queries_per_lang.to_string());
        put("dev_queries_per_lang", self.dev_queries_per_lang.to_string());
        m
    }

    pub fn validate(&self) -> Result<()> {
        if self.languages.is_empty() {
            return Err(Error::config("languages", "at least one language required"));
        }
        for lang in &self.languages {
            if lang.is_empty() || !lang.chars().all(|c| c.is_ascii_lowercase()) {
                return Err(Error::config(
                    "languages",
                    format!("language code `{lang}` must be lowercase ascii letters"),
                ));
            }
        }
        if self.topics_per_lang == 0 {
            return Err(Error::config("topics_per_lang", "must be >= 1"));
        }
        if self.passages_per_topic < 2 {
            return Err(Error::config("passages_per_topic", "must be >= 2"));
        }
        if self.topic_terms == 0 {
            return Err(Error::config("topic_terms", "must be >= 1"));
        }
        if self.vocab_size < self.topics_per_lang * self.topic_terms {
            return Err(Error::config(
                "vocab_size",
                format!(
                    "must be >= topics_per_lang * topic_terms = {}",
                    self.topics_per_lang * self.topic_terms
                ),
            ));
        }
        if self.passage_len == 0 {
            return Err(Error::config("passage_len", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.topic_mix) || self.topic_mix == 0.0 {
            return Err(Error::config("topic_mix", "must be in (0, 1]"));
        }
        if self.topic_mix < 1.0 && self.vocab_size == self.topics_per_lang * self.topic_terms {
            return Err(Error::config("vocab_size", "no background terms left for topic_mix < 1"));
        }
        if self.query_len == 0 {
            return Err(Error::config("query_len", "must be >= 1"));
        }
        if self.focus_terms > self.topic_terms {
            return Err(Error::config("focus_terms", "must be <= topic_terms"));
        }
        if self.min_shared_terms == 0 {
            return Err(Error::config("min_shared_terms", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.labeled_frac) {
            return Err(Error::config("labeled_frac", "must be in [0, 1]"));
        }
        Ok(())
    }

    pub fn source_language(&self) -> &str {
        &self.languages[0]
    }

    pub fn target_languages(&self) -> &[String] {
        &self.languages[1..]
    }
}

/// Train/dev split of a retrieval dataset sharing one corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub corpus: Corpus,
    /// Labeled training queries (source language).
    pub train_queries: QuerySet,
    /// Judged evaluation queries (all languages).
    pub dev_queries: QuerySet,
    /// Judgments for both train and dev queries.
    pub judgments: JudgmentSet,
    /// Training queries without judgments.
    pub unlabeled_queries: QuerySet,
}

impl Dataset {
    pub const PASSAGES: &'static str = "passages.jsonl";
    pub const TRAIN_QUERIES: &'static str = "train_queries.jsonl";
    pub const DEV_QUERIES: &'static str = "dev_queries.jsonl";
    pub const QRELS: &'static str = "qrels.tsv";
    pub const UNLABELED: &'static str = "unlabeled_queries.jsonl";

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join(Self::PASSAGES), self.corpus.items())?;
        write_jsonl(&dir.join(Self::TRAIN_QUERIES), self.train_queries.items())?;
        write_jsonl(&dir.join(Self::DEV_QUERIES), self.dev_queries.items())?;
        write_qrels(&dir.join(Self::QRELS), &self.judgments)?;
        write_jsonl(&dir.join(Self::UNLABELED), self.unlabeled_queries.items())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let ds = Dataset {
            corpus: load_passages(&dir.join(Self::PASSAGES))?,
            train_queries: load_queries(&dir.join(Self::TRAIN_QUERIES))?,
            dev_queries: load_queries(&dir.join(Self::DEV_QUERIES))?,
            judgments: load_qrels(&dir.join(Self::QRELS))?,
            unlabeled_queries: load_queries(&dir.join(Self::UNLABELED))?,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.corpus.is_empty() {
            return Err(Error::Empty("corpus".into()));
        }
        for j in self.judgments.iter() {
            if !self.corpus.contains(&j.passage_id) {
                return Err(Error::UnknownPassage(j.passage_id));
            }
            if !self.train_queries.contains(&j.query_id) && !self.dev_queries.contains(&j.query_id) {
                return Err(Error::Invalid(format!("judgment for unknown query `{}`", j.query_id)));
            }
        }
        Ok(())
    }
}

/// Ground-truth generative structure, used to score generated queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    /// Global topic id (language index * topics_per_lang + topic) per passage.
    pub passage_topic: BTreeMap<String, usize>,
    /// Global topic id per topic term; background terms are absent.
    pub term_topic: BTreeMap<String, usize>,
}

impl SynthTruth {
    /// Majority topic among the query's topic terms; `None` when there is no
    /// strict majority or no topic term at all.
    pub fn query_topic<S: AsRef<str>>(&self, tokens: &[S]) -> Option<usize> {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        let distinct: BTreeSet<&str> = tokens.iter().map(|t| t.as_ref()).collect();
        for t in distinct {
            if let Some(&topic) = self.term_topic.get(t) {
                *counts.entry(topic).or_default() += 1;
            }
        }
        let best = counts.values().copied().max()?;
        let mut winners = counts.iter().filter(|(_, &c)| c == best);
        let (&topic, _) = winners.next()?;
        winners.next().is_none().then_some(topic)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthBenchmark {
    pub spec: SynthSpec,
    pub data: Dataset,
    pub truth: SynthTruth,
}

/// Bijective base-26 code for `i`, at least three letters long.
fn letters(i: usize) -> String {
    let mut n = i + 26 * 26 + 26;
    let mut out = Vec::new();
    loop {
        out.push(b'a' + (n % 26) as u8);
        n /= 26;
        if n == 0 {
            break;
        }
        n -= 1;
    }
    out.reverse();
    String::from_utf8(out).unwrap()
}

fn weighted_pick(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

struct LangVocab {
    terms: Vec<String>,
    n_topic_terms: usize,
}

impl LangVocab {
    fn topic_term(&self, topic: usize, rank: usize, per_topic: usize) -> &str {
        &self.terms[topic * per_topic + rank]
    }

    fn background(&self) -> &[String] {
        &self.terms[self.n_topic_terms..]
    }
}

/// Generates the benchmark. Deterministic in `(spec, seed)`.
pub fn synth_benchmark(spec: &SynthSpec, seed: u64) -> Result<SynthBenchmark> {
    spec.validate()?;
    let mut rng = crate::seed::rng(seed, &[0x5e17]);
    let per_topic = spec.topic_terms;
    let zipf: Vec<f64> = (0..per_topic).map(|r| 1.0 / (r + 1) as f64).collect();

    let mut vocabs = Vec::with_capacity(spec.languages.len());
    let mut owner: HashMap<String, String> = HashMap::new();
    for lang in &spec.languages {
        let terms: Vec<String> = (0..spec.vocab_size)
            .map(|i| format!("{lang}{}", letters(i)))
            .collect();
        for t in &terms {
            if let Some(prev) = owner.insert(t.clone(), lang.clone()) {
                return Err(Error::VocabularyOverlap {
                    a: prev,
                    b: lang.clone(),
                    term: t.clone(),
                });
            }
        }
        vocabs.push(LangVocab {
            terms,
            n_topic_terms: spec.topics_per_lang * per_topic,
        });
    }

    let mut truth = SynthTruth {
        passage_topic: BTreeMap::new(),
        term_topic: BTreeMap::new(),
    };
    let mut passages = Vec::new();
    // per language: (passage id, topic, distinct tokens)
    let mut lang_passages: Vec<Vec<(String, usize, HashSet<String>)>> = Vec::new();

    for (li, lang) in spec.languages.iter().enumerate() {
        let vocab = &vocabs[li];
        for topic in 0..spec.topics_per_lang {
            for r in 0..per_topic {
                truth
                    .term_topic
                    .insert(vocab.topic_term(topic, r, per_topic).to_string(), li * spec.topics_per_lang + topic);
            }
        }
        let n = spec.topics_per_lang * spec.passages_per_topic;
        let mut slots: Vec<usize> = (0..n).collect();
        slots.shuffle(&mut rng);
        let mut entries = Vec::with_capacity(n);
        for (k, &slot) in slots.iter().enumerate() {
            let topic = k / spec.passages_per_topic;
            // Ranks of the topic terms this passage may use, with their weights.
            let focus: Vec<(usize, f64)> = if spec.focus_terms == 0 {
                zipf.iter().copied().enumerate().collect()
            } else {
                let mut pool: Vec<(usize, f64)> = zipf.iter().copied().enumerate().collect();
                let mut chosen = Vec::with_capacity(spec.focus_terms);
                while chosen.len() < spec.focus_terms {
                    let weights: Vec<f64> = pool.iter().map(|c| c.1).collect();
                    chosen.push(pool.remove(weighted_pick(&weights, &mut rng)));
                }
                chosen
            };
            let focus_weights: Vec<f64> = focus.iter().map(|c| c.1).collect();
            let mut tokens = Vec::with_capacity(spec.passage_len);
            for _ in 0..spec.passage_len {
                let tok = if rng.gen::<f64>() < spec.topic_mix {
                    let rank = focus[weighted_pick(&focus_weights, &mut rng)].0;
                    vocab.topic_term(topic, rank, per_topic)
                } else {
                    let bg = vocab.background();
                    &bg[rng.gen_range(0..bg.len())]
                };
                tokens.push(tok.to_string());
            }
            let id = format!("{lang}-p{slot:05}");
            truth
                .passage_topic
                .insert(id.clone(), li * spec.topics_per_lang + topic);
            let distinct = tokens.iter().cloned().collect();
            passages.push(Passage {
                id: id.clone(),
                text: tokens.join(" "),
                lang: lang.clone(),
            });
            entries.push((id, topic, distinct));
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        lang_passages.push(entries);
    }
    passages.sort_by(|a, b| a.id.cmp(&b.id));

    let mut judgments = JudgmentSet::default();
    let mut train = Vec::new();
    let mut dev = Vec::new();
    let mut unlabeled = Vec::new();

    let make_query = |li: usize, id: String, rng: &mut ChaCha8Rng, judge: bool, judgments: &mut JudgmentSet| {
        let vocab = &vocabs[li];
        let entries = &lang_passages[li];
        loop {
            let anchor = &entries[rng.gen_range(0..entries.len())];
            let topic = anchor.1;
            let mut cand: Vec<(&str, f64)> = (0..per_topic)
                .map(|r| (vocab.topic_term(topic, r, per_topic), zipf[r]))
                .filter(|(t, _)| anchor.2.contains(*t))
                .collect();
            if cand.is_empty() {
                continue;
            }
            let mut terms = Vec::new();
            while terms.len() < spec.query_len && !cand.is_empty() {
                let weights: Vec<f64> = cand.iter().map(|c| c.1).collect();
                let i = weighted_pick(&weights, rng);
                terms.push(cand.remove(i).0.to_string());
            }
            if judge {
                let need = spec.min_shared_terms.min(terms.len());
                for (pid, ptopic, toks) in entries {
                    if *ptopic == topic && terms.iter().filter(|t| toks.contains(*t)).count() >= need {
                        judgments.insert(Judgment {
                            query_id: id.clone(),
                            passage_id: pid.clone(),
                            grade: if *pid == anchor.0 { 2 } else { 1 },
                        });
                    }
                }
            }
            return Query {
                id,
                text: terms.join(" "),
                lang: spec.languages[li].clone(),
            };
        }
    };

    for (li, lang) in spec.languages.iter().enumerate() {
        let n_labeled = if li == 0 {
            (spec.labeled_frac * spec.train_queries_per_lang as f64).round() as usize
        } else {
            0
        };
        for i in 0..spec.train_queries_per_lang {
            let id = format!("{lang}-t{i:05}");
            if i < n_labeled {
                train.push(make_query(li, id, &mut rng, true, &mut judgments));
            } else {
                unlabeled.push(make_query(li, id, &mut rng, false, &mut judgments));
            }
        }
        for i in 0..spec.dev_queries_per_lang {
            let id = format!("{lang}-d{i:05}");
            dev.push(make_query(li, id, &mut rng, true, &mut judgments));
        }
    }

    Ok(SynthBenchmark {
        spec: spec.clone(),
        data: Dataset {
            corpus: Corpus::new(passages)?,
            train_queries: QuerySet::new(train)?,
            dev_queries: QuerySet::new(dev)?,
            judgments,
            unlabeled_queries: QuerySet::new(unlabeled)?,
        },
        truth,
    })
}
