//! Passages, queries, relevance judgments and their on-disk formats.

mod io;
pub mod synth;
mod tokenize;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load, load_passages, load_qrels, load_queries, read_jsonl, write_jsonl, write_qrels, Kind, Loaded};
pub use synth::{synth_benchmark, Dataset, SynthBenchmark, SynthSpec, SynthTruth};
pub use tokenize::{is_cjk, tokenize, TokenizerConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
    pub lang: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub lang: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Judgment {
    pub query_id: String,
    pub passage_id: String,
    pub grade: u32,
}

/// Anything stored in a [`Records`] collection.
pub trait Record {
    const KIND: &'static str;
    fn id(&self) -> &str;
    fn lang(&self) -> &str;
}

impl Record for Passage {
    const KIND: &'static str = "passage";
    fn id(&self) -> &str {
        &self.id
    }
    fn lang(&self) -> &str {
        &self.lang
    }
}

impl Record for Query {
    const KIND: &'static str = "query";
    fn id(&self) -> &str {
        &self.id
    }
    fn lang(&self) -> &str {
        &self.lang
    }
}

/// An ordered collection with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Records<T> {
    items: Vec<T>,
    by_id: HashMap<String, usize>,
}

pub type Corpus = Records<Passage>;
pub type QuerySet = Records<Query>;

impl<T: Record> Records<T> {
    pub fn new(items: Vec<T>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if item.id().is_empty() {
                return Err(Error::Invalid(format!("{} with empty id", T::KIND)));
            }
            if by_id.insert(item.id().to_string(), i).is_some() {
                return Err(Error::DuplicateId {
                    kind: T::KIND,
                    id: item.id().to_string(),
                });
            }
        }
        Ok(Records { items, by_id })
    }

    pub fn empty() -> Self {
        Records {
            items: Vec::new(),
            by_id: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[T] {
        &self.items
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.items.iter()
    }

    pub fn get(&self, id: &str) -> Option<&T> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    /// Positions grouped by language, in collection order.
    pub fn positions_by_lang(&self) -> BTreeMap<String, Vec<usize>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, item) in self.items.iter().enumerate() {
            out.entry(item.lang().to_string()).or_default().push(i);
        }
        out
    }

    pub fn languages(&self) -> Vec<String> {
        self.positions_by_lang().into_keys().collect()
    }

    /// Subset with the given language, order preserved.
    pub fn filter_lang(&self, lang: &str) -> Self
    where
        T: Clone,
    {
        let items = self.items.iter().filter(|r| r.lang() == lang).cloned().collect();
        Self::new(items).expect("subset of unique ids is unique")
    }
}

impl<'a, T> IntoIterator for &'a Records<T> {
    type Item = &'a T;
    type IntoIter = std::slice::Iter<'a, T>;
    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

/// Relevance judgments indexed by query.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JudgmentSet {
    by_query: BTreeMap<String, BTreeMap<String, u32>>,
}

impl JudgmentSet {
    pub fn new(judgments: impl IntoIterator<Item = Judgment>) -> Self {
        let mut set = JudgmentSet::default();
        for j in judgments {
            set.insert(j);
        }
        set
    }

    pub fn insert(&mut self, j: Judgment) {
        self.by_query
            .entry(j.query_id)
            .or_default()
            .insert(j.passage_id, j.grade);
    }

    pub fn grade(&self, query_id: &str, passage_id: &str) -> u32 {
        self.by_query
            .get(query_id)
            .and_then(|m| m.get(passage_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn is_relevant(&self, query_id: &str, passage_id: &str) -> bool {
        self.grade(query_id, passage_id) > 0
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.by_query.get(query_id)
    }

    /// Passages with grade > 0, highest grade first then by id.
    pub fn relevant(&self, query_id: &str) -> Vec<&str> {
        let mut rel: Vec<(&str, u32)> = self
            .for_query(query_id)
            .map(|m| {
                m.iter()
                    .filter(|(_, &g)| g > 0)
                    .map(|(p, &g)| (p.as_str(), g))
                    .collect()
            })
            .unwrap_or_default();
        rel.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        rel.into_iter().map(|(p, _)| p).collect()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.by_query.keys().map(String::as_str)
    }

    pub fn num_queries(&self) -> usize {
        self.by_query.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = Judgment> + '_ {
        self.by_query.iter().flat_map(|(q, m)| {
            m.iter().map(move |(p, &g)| Judgment {
                query_id: q.clone(),
                passage_id: p.clone(),
                grade: g,
            })
        })
    }

    pub fn len(&self) -> usize {
        self.by_query.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_query.is_empty()
    }

    /// Checks every judgment resolves against the given queries and corpus.
    pub fn validate(&self, queries: &QuerySet, corpus: &Corpus) -> Result<()> {
        for (q, m) in &self.by_query {
            if !queries.contains(q) {
                return Err(Error::Invalid(format!("judgment for unknown query `{q}`")));
            }
            for p in m.keys() {
                if !corpus.contains(p) {
                    return Err(Error::UnknownPassage(p.clone()));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(id: &str) -> Passage {
        Passage {
            id: id.into(),
            text: "x".into(),
            lang: "en".into(),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        match Corpus::new(vec![p("p1"), p("p1")]) {
            Err(Error::DuplicateId { id, .. }) => assert_eq!(id, "p1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn relevant_orders_by_grade() {
        let js = JudgmentSet::new([
            Judgment { query_id: "q".into(), passage_id: "a".into(), grade: 1 },
            Judgment { query_id: "q".into(), passage_id: "b".into(), grade: 2 },
            Judgment { query_id: "q".into(), passage_id: "c".into(), grade: 0 },
        ]);
        assert_eq!(js.relevant("q"), vec!["b", "a"]);
        assert!(!js.is_relevant("q", "c"));
        assert_eq!(js.len(), 3);
    }
}
