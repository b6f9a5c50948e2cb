use rayon::prelude::*;

use super::matrix::{dot, Matrix};
use super::params::{EncoderParams, PassageRows, Side};
use crate::corpus::{tokenize, TokenizerConfig};
use crate::error::{Error, Result};
use crate::rank::{RankedList, Scored};

/// Whether searching an index built under older parameters is allowed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Staleness {
    Reject,
    Allow,
}

/// Exact (brute-force) top-k index over encoded passages.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    ids: Vec<String>,
    vectors: Matrix,
    params_version: u64,
    /// Position of `ids[i]` in ascending id order, for tie-breaking.
    id_rank: Vec<u32>,
}

impl DenseIndex {
    /// Encodes every passage, in corpus order.
    pub fn build(params: &EncoderParams, rows: &PassageRows) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("cannot index an empty corpus".into()));
        }
        let dim = params.dim();
        let encoded: Vec<Vec<f64>> = (0..rows.len())
            .into_par_iter()
            .map(|i| params.encode_rows(Side::Passage, rows.rows_at(i)))
            .collect();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for v in encoded {
            data.extend(v);
        }
        let ids = rows.ids().to_vec();
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
        let mut id_rank = vec![0u32; ids.len()];
        for (r, &i) in order.iter().enumerate() {
            id_rank[i] = r as u32;
        }
        Ok(DenseIndex {
            vectors: Matrix::from_vec(ids.len(), dim, data),
            ids,
            params_version: params.version(),
            id_rank,
        })
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

    pub fn vector(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    pub fn params_version(&self) -> u64 {
        self.params_version
    }

    pub fn is_fresh(&self, params: &EncoderParams) -> bool {
        self.params_version == params.version()
    }

    /// Exact top-`k` by dot product; zero scores are kept.
    pub fn search_vector(&self, qv: &[f64], k: usize) -> Result<RankedList> {
        if qv.len() != self.vectors.cols() {
            return Err(Error::DimensionMismatch {
                left: qv.len(),
                right: self.vectors.cols(),
            });
        }
        let k = k.min(self.len());
        if k == 0 {
            return Ok(RankedList::default());
        }
        let mut scored: Vec<(u32, f64)> = (0..self.len())
            .map(|i| (i as u32, dot(qv, self.vectors.row(i))))
            .collect();
        let rank = &self.id_rank;
        let order = |a: &(u32, f64), b: &(u32, f64)| {
            b.1.total_cmp(&a.1)
                .then(rank[a.0 as usize].cmp(&rank[b.0 as usize]))
        };
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        Ok(RankedList::from_sorted(
            scored
                .into_iter()
                .map(|(i, score)| Scored {
                    id: self.ids[i as usize].clone(),
                    score,
                })
                .collect(),
        ))
    }
}

/// Encodes the query text and searches the index.
pub fn search_dense(
    index: &DenseIndex,
    params: &EncoderParams,
    query_text: &str,
    tok: &TokenizerConfig,
    k: usize,
    staleness: Staleness,
) -> Result<RankedList> {
    if staleness == Staleness::Reject && !index.is_fresh(params) {
        return Err(Error::StaleIndex {
            index: index.params_version(),
            params: params.version(),
        });
    }
    let qv = params.encode(Side::Query, &tokenize(query_text, tok));
    index.search_vector(&qv, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, Passage};

    fn corpus() -> Corpus {
        Corpus::new(
            ["c a", "b", "a a b", "d"]
                .iter()
                .enumerate()
                .map(|(i, t)| Passage {
                    id: format!("p{}", 3 - i),
                    text: t.to_string(),
                    lang: "en".into(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rows_in_corpus_order_and_match_encoding() {
        let c = corpus();
        let tok = TokenizerConfig::default();
        let params = EncoderParams::from_corpus(&c, &tok, 5, true, 1).unwrap();
        let rows = PassageRows::new(&params, &c, &tok);
        let idx = DenseIndex::build(&params, &rows).unwrap();
        assert_eq!(idx.len(), 4);
        assert_eq!(idx.ids(), &["p3", "p2", "p1", "p0"]);
        for (i, p) in c.iter().enumerate() {
            let v = params.encode(Side::Passage, &tokenize(&p.text, &tok));
            assert_eq!(idx.vector(i), v.as_slice());
        }
    }

    #[test]
    fn oov_query_ranks_by_id() {
        let c = corpus();
        let tok = TokenizerConfig::default();
        let params = EncoderParams::from_corpus(&c, &tok, 5, true, 1).unwrap();
        let idx = DenseIndex::build(&params, &PassageRows::new(&params, &c, &tok)).unwrap();
        let r = search_dense(&idx, &params, "zzz", &tok, 10, Staleness::Reject).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), vec!["p0", "p1", "p2", "p3"]);
        assert!(r.entries().iter().all(|e| e.score == 0.0));
    }

    #[test]
    fn stale_index_rejected_unless_allowed() {
        let c = corpus();
        let tok = TokenizerConfig::default();
        let mut params = EncoderParams::from_corpus(&c, &tok, 5, true, 1).unwrap();
        let idx = DenseIndex::build(&params, &PassageRows::new(&params, &c, &tok)).unwrap();
        params.bump_version();
        assert!(matches!(
            search_dense(&idx, &params, "a", &tok, 2, Staleness::Reject),
            Err(Error::StaleIndex { index: 0, params: 1 })
        ));
        assert_eq!(search_dense(&idx, &params, "a", &tok, 2, Staleness::Allow).unwrap().len(), 2);
    }

    #[test]
    fn empty_corpus_rejected() {
        let c = Corpus::new(vec![]).unwrap();
        let tok = TokenizerConfig::default();
        let params = EncoderParams::init(["a"], 2, true, 1).unwrap();
        assert!(DenseIndex::build(&params, &PassageRows::new(&params, &c, &tok)).is_err());
    }
}
