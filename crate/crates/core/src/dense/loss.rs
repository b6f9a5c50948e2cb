use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matrix::{axpy, dot, Matrix};
use super::optim::OptimizerState;
use super::params::{EncoderParams, PassageRows, Side, Table};
use crate::corpus::{tokenize, Query, TokenizerConfig};
use crate::error::{Error, Result};

/// One query, one positive and its negatives. In-batch negatives are not
/// stored; they are attached when the sample is placed in a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub query: Query,
    pub positive: String,
    pub hard_negatives: Vec<String>,
    pub random_negatives: Vec<String>,
}

impl TrainingSample {
    /// Positive not among negatives, no duplicate negatives, and every id
    /// accepted by `exists`.
    pub fn validate(&self, exists: impl Fn(&str) -> bool) -> Result<()> {
        let mut seen = HashSet::new();
        seen.insert(self.positive.as_str());
        for id in self.hard_negatives.iter().chain(&self.random_negatives) {
            if !seen.insert(id.as_str()) {
                return Err(Error::Invalid(format!(
                    "sample for query `{}` repeats passage `{id}`",
                    self.query.id
                )));
            }
        }
        for id in seen {
            if !exists(id) {
                return Err(Error::UnknownPassage(id.to_string()));
            }
        }
        Ok(())
    }

    pub fn negatives(&self) -> impl Iterator<Item = &String> {
        self.hard_negatives.iter().chain(&self.random_negatives)
    }
}

/// Gradient restricted to the embedding rows a loss touched.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrad {
    rows: BTreeMap<(Table, u32), Vec<f64>>,
}

impl SparseGrad {
    fn add(&mut self, table: Table, row: u32, scale: f64, v: &[f64]) {
        let g = self
            .rows
            .entry((table, row))
            .or_insert_with(|| vec![0.0; v.len()]);
        axpy(scale, v, g);
    }

    pub fn get(&self, table: Table, row: u32) -> Option<&[f64]> {
        self.rows.get(&(table, row)).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Table, u32, &[f64])> {
        self.rows.iter().map(|(&(t, r), g)| (t, r, g.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: SparseGrad,
}

/// InfoNCE over `scores[0]` (positive) against `scores[1..]`, with its
/// derivative with respect to every score. Uses a max-shifted log-sum-exp.
pub fn infonce_from_scores(scores: &[f64]) -> (f64, Vec<f64>) {
    assert!(!scores.is_empty(), "InfoNCE needs at least the positive score");
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = max + total.ln() - scores[0];
    let mut weights: Vec<f64> = exps.iter().map(|e| e / total).collect();
    weights[0] -= 1.0;
    (loss.max(0.0), weights)
}

/// Loss and analytic gradient for one sample with the given in-batch negatives.
pub fn infonce_loss(
    params: &EncoderParams,
    sample: &TrainingSample,
    in_batch_positives: &[String],
    rows: &PassageRows,
    tok: &TokenizerConfig,
) -> Result<LossOutput> {
    let q_rows = params.rows(&tokenize(&sample.query.text, tok));
    let qv = params.encode_rows(Side::Query, &q_rows);

    let candidates: Vec<&[u32]> = std::iter::once(&sample.positive)
        .chain(sample.negatives())
        .chain(in_batch_positives)
        .map(|id| rows.get(id).ok_or_else(|| Error::UnknownPassage(id.clone())))
        .collect::<Result<_>>()?;
    let pvs: Vec<Vec<f64>> = candidates
        .iter()
        .map(|r| params.encode_rows(Side::Passage, r))
        .collect();
    let scores: Vec<f64> = pvs.iter().map(|pv| dot(&qv, pv)).collect();
    let (loss, weights) = infonce_from_scores(&scores);

    let mut grad = SparseGrad::default();
    let q_table = params.table_for(Side::Query);
    let p_table = params.table_for(Side::Passage);
    if !q_rows.is_empty() {
        let mut dq = vec![0.0; params.dim()];
        for (w, pv) in weights.iter().zip(&pvs) {
            axpy(*w, pv, &mut dq);
        }
        let scale = 1.0 / q_rows.len() as f64;
        for &r in &q_rows {
            grad.add(q_table, r, scale, &dq);
        }
    }
    for (w, prow) in weights.iter().zip(&candidates) {
        if prow.is_empty() {
            continue;
        }
        let scale = w / prow.len() as f64;
        for &r in prow.iter() {
            grad.add(p_table, r, scale, &qv);
        }
    }
    Ok(LossOutput { loss, grad })
}

/// Other samples' positives, deduplicated, minus anything already among
/// this sample's candidates.
fn in_batch_for(batch: &[TrainingSample], i: usize) -> Vec<String> {
    let own = &batch[i];
    let mut seen: HashSet<&str> = std::iter::once(own.positive.as_str())
        .chain(own.negatives().map(String::as_str))
        .collect();
    batch
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .filter_map(|(_, s)| seen.insert(s.positive.as_str()).then(|| s.positive.clone()))
        .collect()
}

/// Mean loss and mean gradient (one dense matrix per table) over a batch.
pub(crate) fn batch_gradient(
    params: &EncoderParams,
    batch: &[TrainingSample],
    rows: &PassageRows,
    tok: &TokenizerConfig,
) -> Result<(f64, Vec<Matrix>)> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch".into()));
    }
    let dim = params.dim();

    // Encode every distinct passage in the batch once.
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut order: Vec<usize> = Vec::new();
    let mut cand_slots: Vec<Vec<usize>> = Vec::with_capacity(batch.len());
    let in_batch: Vec<Vec<String>> = (0..batch.len()).map(|i| in_batch_for(batch, i)).collect();
    for (s, extra) in batch.iter().zip(&in_batch) {
        let mut slots = Vec::new();
        for id in std::iter::once(&s.positive).chain(s.negatives()).chain(extra) {
            let next = order.len();
            let k = match slot.get(id.as_str()) {
                Some(&k) => k,
                None => {
                    let pos = rows
                        .position(id)
                        .ok_or_else(|| Error::UnknownPassage(id.clone()))?;
                    order.push(pos);
                    slot.insert(id.as_str(), next);
                    next
                }
            };
            slots.push(k);
        }
        cand_slots.push(slots);
    }
    let pvs: Vec<Vec<f64>> = order
        .par_iter()
        .map(|&pos| params.encode_rows(Side::Passage, rows.rows_at(pos)))
        .collect();

    struct PerSample {
        loss: f64,
        q_rows: Vec<u32>,
        qv: Vec<f64>,
        dq: Vec<f64>,
        weights: Vec<f64>,
    }
    let per: Vec<PerSample> = batch
        .par_iter()
        .zip(&cand_slots)
        .map(|(s, slots)| {
            let q_rows = params.rows(&tokenize(&s.query.text, tok));
            let qv = params.encode_rows(Side::Query, &q_rows);
            let scores: Vec<f64> = slots.iter().map(|&k| dot(&qv, &pvs[k])).collect();
            let (loss, weights) = infonce_from_scores(&scores);
            let mut dq = vec![0.0; dim];
            for (w, &k) in weights.iter().zip(slots) {
                axpy(*w, &pvs[k], &mut dq);
            }
            PerSample {
                loss,
                q_rows,
                qv,
                dq,
                weights,
            }
        })
        .collect();

    let inv_b = 1.0 / batch.len() as f64;
    let mut grads: Vec<Matrix> = params
        .tables()
        .iter()
        .map(|t| Matrix::zeros(t.rows(), t.cols()))
        .collect();
    let q_t = matches!(params.table_for(Side::Query), Table::Passage) as usize;
    let p_t = matches!(params.table_for(Side::Passage), Table::Passage) as usize;
    let mut slot_grad = vec![vec![0.0; dim]; order.len()];
    let mut total_loss = 0.0;
    for (ps, slots) in per.iter().zip(&cand_slots) {
        total_loss += ps.loss;
        if !ps.q_rows.is_empty() {
            let scale = inv_b / ps.q_rows.len() as f64;
            for &r in &ps.q_rows {
                axpy(scale, &ps.dq, grads[q_t].row_mut(r as usize));
            }
        }
        for (w, &k) in ps.weights.iter().zip(slots) {
            axpy(w * inv_b, &ps.qv, &mut slot_grad[k]);
        }
    }
    for (k, &pos) in order.iter().enumerate() {
        let prow = rows.rows_at(pos);
        if prow.is_empty() {
            continue;
        }
        let scale = 1.0 / prow.len() as f64;
        for &r in prow {
            axpy(scale, &slot_grad[k], grads[p_t].row_mut(r as usize));
        }
    }
    Ok((total_loss * inv_b, grads))
}

/// Accumulates every sample's InfoNCE gradient (in-batch negatives drawn from
/// the other samples' positives) and applies one optimizer update. Returns
/// the mean loss before the update.
pub fn train_step(
    params: &mut EncoderParams,
    opt: &mut OptimizerState,
    batch: &[TrainingSample],
    rows: &PassageRows,
    tok: &TokenizerConfig,
) -> Result<f64> {
    let (loss, grads) = batch_gradient(params, batch, rows, tok)?;
    opt.apply(params, &grads)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, Passage};
    use crate::dense::optim::AdamConfig;

    #[test]
    fn uniform_scores_give_ln_n() {
        let (loss, w) = infonce_from_scores(&[0.3; 4]);
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((loss - 1.386294).abs() < 1e-6);
        assert!((w[0] + 0.75).abs() < 1e-12);
        assert!((w.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn hand_case_matches_direct_formula() {
        let (loss, _) = infonce_from_scores(&[2.0, 1.0, 0.5]);
        let direct = (1.0 + (-1.0f64).exp() + (-1.5f64).exp()).ln();
        assert!((loss - direct).abs() < 1e-14);
        // 40-digit reference value
        assert!((loss - 0.464_368_784_107_944_8).abs() < 1e-14);
    }

    #[test]
    fn stable_for_huge_scores() {
        let (loss, w) = infonce_from_scores(&[1000.0, 999.0, -1e6]);
        assert!(loss.is_finite() && w.iter().all(|x| x.is_finite()));
        let (l2, _) = infonce_from_scores(&[1.0, 0.0, -1e6 - 999.0]);
        assert!((loss - l2).abs() < 1e-12);
    }

    fn fixture() -> (Corpus, EncoderParams, PassageRows, TokenizerConfig) {
        let tok = TokenizerConfig::default();
        let corpus = Corpus::new(
            ["a b c", "c d", "e f a", "g h", "b b d"]
                .iter()
                .enumerate()
                .map(|(i, t)| Passage {
                    id: format!("p{i}"),
                    text: t.to_string(),
                    lang: "en".into(),
                })
                .collect(),
        )
        .unwrap();
        let params = EncoderParams::from_corpus(&corpus, &tok, 6, true, 5).unwrap();
        let rows = PassageRows::new(&params, &corpus, &tok);
        (corpus, params, rows, tok)
    }

    fn sample(q: &str, pos: &str, hard: &[&str], rand: &[&str]) -> TrainingSample {
        TrainingSample {
            query: Query {
                id: format!("q-{q}"),
                text: q.into(),
                lang: "en".into(),
            },
            positive: pos.into(),
            hard_negatives: hard.iter().map(|s| s.to_string()).collect(),
            random_negatives: rand.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn batch_gradient_equals_sum_of_sample_gradients() {
        let (_, params, rows, tok) = fixture();
        let batch = vec![
            sample("a c", "p0", &["p1"], &["p3"]),
            sample("d", "p1", &["p4"], &[]),
            sample("f zz", "p2", &[], &["p0"]),
        ];
        let (loss, grads) = batch_gradient(&params, &batch, &rows, &tok).unwrap();
        let mut expected = Matrix::zeros(params.vocab_len(), params.dim());
        let mut expected_loss = 0.0;
        for i in 0..batch.len() {
            let out = infonce_loss(&params, &batch[i], &in_batch_for(&batch, i), &rows, &tok).unwrap();
            expected_loss += out.loss / 3.0;
            for (_, r, g) in out.grad.iter() {
                axpy(1.0 / 3.0, g, expected.row_mut(r as usize));
            }
        }
        assert!((loss - expected_loss).abs() < 1e-12);
        for (a, b) in grads[0].as_slice().iter().zip(expected.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn in_batch_excludes_own_candidates() {
        let batch = vec![
            sample("a", "p0", &["p1"], &[]),
            sample("b", "p1", &[], &[]),
            sample("c", "p0", &[], &[]),
            sample("d", "p2", &[], &[]),
        ];
        assert_eq!(in_batch_for(&batch, 0), vec!["p2"]);
        assert_eq!(in_batch_for(&batch, 1), vec!["p0", "p2"]);
    }

    #[test]
    fn zero_lr_keeps_params() {
        let (_, mut params, rows, tok) = fixture();
        let before = params.clone();
        let mut opt = OptimizerState::new(&params, AdamConfig { lr: 0.0, ..Default::default() });
        let batch = vec![sample("a c", "p0", &["p1"], &[]), sample("d", "p1", &[], &[])];
        train_step(&mut params, &mut opt, &batch, &rows, &tok).unwrap();
        assert_eq!(params.table(Table::Query), before.table(Table::Query));
        assert_eq!(params.version(), before.version() + 1);
    }

    #[test]
    fn sample_validation() {
        let (corpus, ..) = fixture();
        let ok = sample("a", "p0", &["p1"], &["p2"]);
        ok.validate(|id| corpus.contains(id)).unwrap();
        assert!(sample("a", "p0", &["p0"], &[]).validate(|id| corpus.contains(id)).is_err());
        assert!(sample("a", "p0", &["p1"], &["p1"]).validate(|id| corpus.contains(id)).is_err());
        assert!(sample("a", "p0", &["zz"], &[]).validate(|id| corpus.contains(id)).is_err());
    }

    #[test]
    fn empty_batch_is_error() {
        let (_, mut params, rows, tok) = fixture();
        let mut opt = OptimizerState::new(&params, AdamConfig::default());
        assert!(train_step(&mut params, &mut opt, &[], &rows, &tok).is_err());
    }
}
