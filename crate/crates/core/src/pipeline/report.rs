use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Per-language metric values keyed like `mrr@10`.
pub type LanguageMetrics = BTreeMap<String, BTreeMap<String, f64>>;

/// Summary of the warm-up (iteration 0) or of one self-training iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    /// Labeled source-language samples (warm-up only).
    pub labeled_samples: usize,
    /// Unlabeled queries with at least one mined positive.
    pub mined_queries: usize,
    /// Unlabeled queries dropped for lack of positives.
    pub dropped_queries: usize,
    pub mined_samples: usize,
    /// Mined (query, passage) pairs the generator was trained on.
    pub generator_pairs: usize,
    pub generated_queries: usize,
    pub generated_accepted: usize,
    pub generated_samples: usize,
    pub train_steps: usize,
    /// Mean pre-update mini-batch loss; `None` when no step ran.
    pub mean_loss: Option<f64>,
    pub metrics: LanguageMetrics,
    pub wall_clock_secs: f64,
}

impl IterationReport {
    pub fn new(iteration: usize) -> Self {
        IterationReport {
            iteration,
            labeled_samples: 0,
            mined_queries: 0,
            dropped_queries: 0,
            mined_samples: 0,
            generator_pairs: 0,
            generated_queries: 0,
            generated_accepted: 0,
            generated_samples: 0,
            train_steps: 0,
            mean_loss: None,
            metrics: BTreeMap::new(),
            wall_clock_secs: 0.0,
        }
    }

    pub fn metric(&self, lang: &str, metric: &str) -> Option<f64> {
        self.metrics.get(lang)?.get(metric).copied()
    }

    /// Unweighted mean of `metric` over `langs`; `None` if any is missing.
    pub fn mean_metric<S: AsRef<str>>(&self, langs: &[S], metric: &str) -> Option<f64> {
        if langs.is_empty() {
            return None;
        }
        let mut sum = 0.0;
        for l in langs {
            sum += self.metric(l.as_ref(), metric)?;
        }
        Some(sum / langs.len() as f64)
    }

    /// Copy with the wall-clock field zeroed, for determinism checks.
    pub fn without_timing(&self) -> Self {
        IterationReport {
            wall_clock_secs: 0.0,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_metric_over_languages() {
        let mut r = IterationReport::new(1);
        r.metrics.entry("sw".into()).or_default().insert("mrr@10".into(), 0.2);
        r.metrics.entry("te".into()).or_default().insert("mrr@10".into(), 0.4);
        assert!((r.mean_metric(&["sw", "te"], "mrr@10").unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(r.mean_metric(&["sw", "xx"], "mrr@10"), None);
        assert_eq!(r.mean_metric::<&str>(&[], "mrr@10"), None);
    }

    #[test]
    fn json_round_trip() {
        let mut r = IterationReport::new(2);
        r.mean_loss = Some(1.25);
        r.wall_clock_secs = 3.5;
        let back: IterationReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.without_timing().wall_clock_secs, 0.0);
    }
}
