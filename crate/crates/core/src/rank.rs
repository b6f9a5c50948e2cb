//! Ranked result lists shared by the sparse and dense retrievers.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: String,
    pub score: f64,
}

/// Results in descending score order, ties broken by ascending id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankedList {
    entries: Vec<Scored>,
}

/// The (score desc, id asc) ordering key.
pub fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

impl RankedList {
    /// Sorts arbitrary scored ids and keeps the best `k`. Duplicate ids keep
    /// their best-ranked occurrence.
    pub fn from_scores<I, S>(scores: I, k: usize) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut entries: Vec<Scored> = scores
            .into_iter()
            .map(|(id, score)| Scored {
                id: id.into(),
                score,
            })
            .collect();
        entries.sort_by(|a, b| rank_order(a.score, &a.id, b.score, &b.id));
        let mut seen = std::collections::HashSet::new();
        entries.retain(|e| seen.insert(e.id.clone()));
        entries.truncate(k);
        RankedList { entries }
    }

    /// Wraps entries that are already in rank order.
    pub fn from_sorted(entries: Vec<Scored>) -> Self {
        debug_assert!(entries
            .windows(2)
            .all(|w| rank_order(w[0].score, &w[0].id, w[1].score, &w[1].id) == Ordering::Less));
        RankedList { entries }
    }

    pub fn entries(&self) -> &[Scored] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self) -> Option<&Scored> {
        self.entries.first()
    }

    /// 1-based rank of `id`, if present.
    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id).map(|i| i + 1)
    }

    pub fn truncated(&self, k: usize) -> RankedList {
        RankedList {
            entries: self.entries.iter().take(k).cloned().collect(),
        }
    }

    /// Checks the ordering and uniqueness invariants.
    pub fn is_well_formed(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.entries.iter().all(|e| seen.insert(e.id.as_str()))
            && self.entries.windows(2).all(|w| {
                rank_order(w[0].score, &w[0].id, w[1].score, &w[1].id) == Ordering::Less
            })
    }
}
