use std::collections::{BTreeSet, HashMap};

use rand::Rng;

use super::matrix::{dot, Matrix};
use crate::corpus::{tokenize, Corpus, TokenizerConfig};
use crate::error::{Error, Result};

/// Which encoder a text goes through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Query,
    Passage,
}

/// Physical embedding table. With shared parameters only `Query` exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Table {
    Query,
    Passage,
}

/// Token embedding tables for the query and passage encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    terms: Vec<String>,
    vocab: HashMap<String, u32>,
    dim: usize,
    query_table: Matrix,
    passage_table: Option<Matrix>,
    version: u64,
}

impl EncoderParams {
    /// Uniform init in `[-1/sqrt(d), 1/sqrt(d)]`. Terms are deduplicated
    /// and sorted, so row order does not depend on input order.
    pub fn init<I, S>(terms: I, dim: usize, shared: bool, seed: u64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if dim == 0 {
            return Err(Error::config("dim", "embedding dimension must be >= 1"));
        }
        let terms: Vec<String> = terms
            .into_iter()
            .map(Into::into)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut rng = crate::seed::rng(seed, &[crate::seed::stage::INIT]);
        let bound = 1.0 / (dim as f64).sqrt();
        let table = |rng: &mut rand_chacha::ChaCha8Rng| {
            let data = (0..terms.len() * dim)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect();
            Matrix::from_vec(terms.len(), dim, data)
        };
        let query_table = table(&mut rng);
        let passage_table = (!shared).then(|| table(&mut rng));
        Ok(Self::from_parts(terms, query_table, passage_table, 0))
    }

    /// Vocabulary = every token of the corpus.
    pub fn from_corpus(
        corpus: &Corpus,
        tok: &TokenizerConfig,
        dim: usize,
        shared: bool,
        seed: u64,
    ) -> Result<Self> {
        let terms: BTreeSet<String> = corpus
            .iter()
            .flat_map(|p| tokenize(&p.text, tok))
            .collect();
        Self::init(terms, dim, shared, seed)
    }

    pub(crate) fn from_parts(
        terms: Vec<String>,
        query_table: Matrix,
        passage_table: Option<Matrix>,
        version: u64,
    ) -> Self {
        let vocab = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        EncoderParams {
            dim: query_table.cols(),
            terms,
            vocab,
            query_table,
            passage_table,
            version,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_len(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn row_of(&self, token: &str) -> Option<u32> {
        self.vocab.get(token).copied()
    }

    pub fn is_shared(&self) -> bool {
        self.passage_table.is_none()
    }

    /// Incremented by every optimizer update.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn bump_version(&mut self) {
        self.version += 1;
    }

    pub fn table_for(&self, side: Side) -> Table {
        match (side, self.is_shared()) {
            (Side::Passage, false) => Table::Passage,
            _ => Table::Query,
        }
    }

    pub fn table(&self, table: Table) -> &Matrix {
        match table {
            Table::Query => &self.query_table,
            Table::Passage => self.passage_table.as_ref().unwrap_or(&self.query_table),
        }
    }

    pub(crate) fn tables_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.query_table];
        if let Some(p) = self.passage_table.as_mut() {
            out.push(p);
        }
        out
    }

    pub(crate) fn tables(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.query_table];
        if let Some(p) = self.passage_table.as_ref() {
            out.push(p);
        }
        out
    }

    pub fn weight(&self, table: Table, row: usize, col: usize) -> f64 {
        self.table(table).row(row)[col]
    }

    /// Overwrites one weight without bumping the version. Meant for probing
    /// the loss surface (finite differences), not for training.
    pub fn set_weight(&mut self, table: Table, row: usize, col: usize, value: f64) {
        let m = match table {
            Table::Passage if !self.is_shared() => self.passage_table.as_mut().unwrap(),
            _ => &mut self.query_table,
        };
        m.row_mut(row)[col] = value;
    }

    /// Embedding rows of in-vocabulary tokens; duplicates kept.
    pub fn rows(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().filter_map(|t| self.row_of(t)).collect()
    }

    /// Mean of the given rows; zero vector when empty.
    pub fn encode_rows(&self, side: Side, rows: &[u32]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if rows.is_empty() {
            return out;
        }
        let table = self.table(self.table_for(side));
        for &r in rows {
            for (o, x) in out.iter_mut().zip(table.row(r as usize)) {
                *o += x;
            }
        }
        let inv = 1.0 / rows.len() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        out
    }

    pub fn encode(&self, side: Side, tokens: &[String]) -> Vec<f64> {
        self.encode_rows(side, &self.rows(tokens))
    }
}

/// Dot-product similarity.
pub fn similarity(qv: &[f64], pv: &[f64]) -> Result<f64> {
    if qv.len() != pv.len() {
        return Err(Error::DimensionMismatch {
            left: qv.len(),
            right: pv.len(),
        });
    }
    Ok(dot(qv, pv))
}

/// Corpus passages pre-mapped to embedding rows of one vocabulary.
#[derive(Debug, Clone)]
pub struct PassageRows {
    ids: Vec<String>,
    rows: Vec<Vec<u32>>,
    lookup: HashMap<String, usize>,
}

impl PassageRows {
    pub fn new(params: &EncoderParams, corpus: &Corpus, tok: &TokenizerConfig) -> Self {
        let ids: Vec<String> = corpus.iter().map(|p| p.id.clone()).collect();
        let rows = corpus
            .iter()
            .map(|p| params.rows(&tokenize(&p.text, tok)))
            .collect();
        let lookup = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        PassageRows { ids, rows, lookup }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    pub fn rows_at(&self, i: usize) -> &[u32] {
        &self.rows[i]
    }

    pub fn get(&self, id: &str) -> Option<&[u32]> {
        self.position(id).map(|i| self.rows[i].as_slice())
    }
}
