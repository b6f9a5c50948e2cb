//! BM25 inverted index.
//!
//! Scoring uses the non-negative Lucene idf `ln(1 + (N - df + 0.5) / (df + 0.5))`
//! and the standard saturating tf component. Query terms are deduplicated and
//! visited in sorted order so scores are bit-reproducible.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Corpus, TokenizerConfig};
use crate::error::{Error, Result};
use crate::rank::{RankedList, Scored};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 >= 0.0 && self.k1.is_finite()) {
            return Err(Error::config("k1", "must be a non-negative number"));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::config("b", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    /// Position in [`InvertedIndex::doc_ids`].
    pub doc: u32,
    pub tf: u32,
}

/// Documents are numbered in ascending id order, so posting order and the
/// id tie-break coincide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<Posting>>,
    doc_ids: Vec<String>,
    doc_len: Vec<u32>,
    avgdl: f64,
    params: Bm25Params,
    tokenizer: TokenizerConfig,
    #[serde(skip)]
    lookup: HashMap<String, u32>,
}

impl InvertedIndex {
    pub fn build(corpus: &Corpus, tokenizer: &TokenizerConfig, params: Bm25Params) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Empty("cannot index an empty corpus".into()));
        }
        params.validate()?;
        let mut passages: Vec<_> = corpus.iter().collect();
        passages.sort_by(|a, b| a.id.cmp(&b.id));

        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_ids = Vec::with_capacity(passages.len());
        let mut doc_len = Vec::with_capacity(passages.len());
        for (doc, p) in passages.iter().enumerate() {
            let tokens = tokenize(&p.text, tokenizer);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: doc as u32,
                    tf: count,
                });
            }
            doc_ids.push(p.id.clone());
            doc_len.push(tokens.len() as u32);
        }
        let total: u64 = doc_len.iter().map(|&l| l as u64).sum();
        let avgdl = total as f64 / doc_ids.len() as f64;
        let mut index = InvertedIndex {
            postings,
            doc_ids,
            doc_len,
            avgdl,
            params,
            tokenizer: tokenizer.clone(),
            lookup: HashMap::new(),
        };
        index.rebuild_lookup();
        Ok(index)
    }

    fn rebuild_lookup(&mut self) {
        self.lookup = self
            .doc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn tokenizer(&self) -> &TokenizerConfig {
        &self.tokenizer
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_len(&self, passage_id: &str) -> Option<u32> {
        self.lookup.get(passage_id).map(|&d| self.doc_len[d as usize])
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.num_docs() as f64;
        let df = self.df(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, dl: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * dl as f64 / self.avgdl))
    }

    pub fn score(&self, query_tokens: &[String], passage_id: &str) -> Result<f64> {
        let &doc = self
            .lookup
            .get(passage_id)
            .ok_or_else(|| Error::UnknownPassage(passage_id.to_string()))?;
        let dl = self.doc_len[doc as usize];
        let unique: BTreeSet<&str> = query_tokens.iter().map(String::as_str).collect();
        let mut score = 0.0;
        for term in unique {
            let postings = self.postings(term);
            if let Ok(i) = postings.binary_search_by_key(&doc, |p| p.doc) {
                score += self.term_weight(self.idf(term), postings[i].tf, dl);
            }
        }
        Ok(score)
    }

    /// Top-`k` passages with positive score.
    pub fn search_tokens(&self, query_tokens: &[String], k: usize) -> RankedList {
        if k == 0 {
            return RankedList::default();
        }
        let unique: BTreeSet<&str> = query_tokens.iter().map(String::as_str).collect();
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for term in unique {
            let postings = self.postings(term);
            if postings.is_empty() {
                continue;
            }
            let idf = self.idf(term);
            for p in postings {
                *acc.entry(p.doc).or_insert(0.0) +=
                    self.term_weight(idf, p.tf, self.doc_len[p.doc as usize]);
            }
        }
        let mut hits: Vec<(u32, f64)> = acc.into_iter().filter(|&(_, s)| s > 0.0).collect();
        let order = |a: &(u32, f64), b: &(u32, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, order);
            hits.truncate(k);
        }
        hits.sort_by(order);
        RankedList::from_sorted(
            hits.into_iter()
                .map(|(d, score)| Scored {
                    id: self.doc_ids[d as usize].clone(),
                    score,
                })
                .collect(),
        )
    }

    pub fn search(&self, query_text: &str, k: usize) -> RankedList {
        self.search_tokens(&tokenize(query_text, &self.tokenizer), k)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut index: InvertedIndex = serde_json::from_reader(std::io::BufReader::new(file))?;
        index.rebuild_lookup();
        Ok(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;
    use proptest::prelude::*;

    fn corpus(texts: &[(&str, &str)]) -> Corpus {
        Corpus::new(
            texts
                .iter()
                .map(|(id, t)| Passage {
                    id: id.to_string(),
                    text: t.to_string(),
                    lang: "en".into(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn build(texts: &[(&str, &str)]) -> InvertedIndex {
        InvertedIndex::build(&corpus(texts), &TokenizerConfig::default(), Bm25Params::default()).unwrap()
    }

    #[test]
    fn single_doc_postings() {
        let idx = build(&[("d", "a b a")]);
        assert_eq!(idx.postings("a"), &[Posting { doc: 0, tf: 2 }]);
        assert_eq!(idx.postings("b"), &[Posting { doc: 0, tf: 1 }]);
        assert_eq!(idx.doc_len("d"), Some(3));
        assert_eq!(idx.avgdl(), 3.0);
    }

    #[test]
    fn corpus_statistics() {
        let idx = build(&[("d1", "x"), ("d2", "x y")]);
        assert_eq!(idx.num_docs(), 2);
        assert_eq!(idx.avgdl(), 1.5);
        assert_eq!(idx.df("x"), 2);
        assert_eq!(idx.df("y"), 1);
        assert_eq!(idx, build(&[("d1", "x"), ("d2", "x y")]));
    }

    #[test]
    fn empty_corpus_rejected() {
        let empty = Corpus::new(vec![]).unwrap();
        assert!(InvertedIndex::build(&empty, &TokenizerConfig::default(), Bm25Params::default()).is_err());
    }

    #[test]
    fn hand_computed_ln2() {
        // N=2, df(x)=1, dl=avgdl=1: idf = ln(1 + 1.5/1.5) = ln 2, tf part = 1.9/1.9
        let idx = build(&[("d1", "x"), ("d2", "z")]);
        let s = idx.score(&toks("x"), "d1").unwrap();
        assert!((s - std::f64::consts::LN_2).abs() < 1e-12, "{s}");
        assert!((s - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn scoring_conventions() {
        let idx = build(&[("d1", "x"), ("d2", "z")]);
        assert_eq!(idx.score(&toks("q"), "d1").unwrap(), 0.0);
        assert_eq!(
            idx.score(&toks("x x"), "d1").unwrap(),
            idx.score(&toks("x"), "d1").unwrap()
        );
        assert!(matches!(idx.score(&toks("x"), "nope"), Err(Error::UnknownPassage(_))));
    }

    #[test]
    fn search_edge_cases() {
        let idx = build(&[("b", "x y"), ("a", "y x"), ("c", "z")]);
        assert!(idx.search("unseen words", 5).is_empty());
        let r = idx.search("x", 5);
        assert_eq!(r.ids().collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(r.entries()[0].score, r.entries()[1].score);
    }

    #[test]
    fn save_load() {
        let idx = build(&[("b", "x y"), ("a", "y x"), ("c", "z")]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.json");
        idx.save(&path).unwrap();
        let back = InvertedIndex::load(&path).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back.doc_len("c"), Some(1));
    }

    proptest! {
        #[test]
        fn tf_monotone(extra in 0u32..5, filler in 1u32..6) {
            // Raising tf of "x" at fixed length never lowers the score.
            let mk = |tf: u32| {
                let mut words: Vec<&str> = vec!["x"; tf as usize];
                words.extend(std::iter::repeat("f").take((filler + 5 - tf) as usize));
                words.join(" ")
            };
            let lo = mk(1);
            let hi = mk(1 + extra);
            let a = build(&[("d", &lo), ("e", "x g")]).score(&toks("x"), "d").unwrap();
            let b = build(&[("d", &hi), ("e", "x g")]).score(&toks("x"), "d").unwrap();
            prop_assert!(b >= a);
        }

        #[test]
        fn prefix_property(docs in proptest::collection::vec("[abcde]( [abcde]){0,6}", 1..20),
                           q in "[abcdef]( [abcdef]){0,3}", k in 1usize..10, extra in 0usize..10) {
            let named: Vec<(String, String)> = docs.iter().enumerate().map(|(i, d)| (format!("p{i:02}"), d.clone())).collect();
            let refs: Vec<(&str, &str)> = named.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
            let idx = build(&refs);
            let small = idx.search(&q, k);
            let big = idx.search(&q, k + extra);
            prop_assert!(small.is_well_formed());
            prop_assert_eq!(small.entries(), &big.entries()[..small.len()]);
        }
    }
}
