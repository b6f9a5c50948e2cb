//! Retrieval evaluation: MRR@k, Recall@k (query-level hit rate), per-language
//! aggregation, TREC run files and the paired t-test.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::{JudgmentSet, QuerySet};
use crate::error::{Error, Result};
use crate::rank::{RankedList, Scored};

/// Ranked results per query.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    pub runs: BTreeMap<String, RankedList>,
}

impl RunFile {
    pub fn insert(&mut self, query_id: impl Into<String>, list: RankedList) {
        self.runs.insert(query_id.into(), list);
    }

    pub fn get(&self, query_id: &str) -> Option<&RankedList> {
        self.runs.get(query_id)
    }

    /// `query_id Q0 passage_id rank score tag`, one line per result.
    pub fn write_trec(&self, path: &Path, tag: &str) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        for (q, list) in &self.runs {
            for (i, e) in list.entries().iter().enumerate() {
                writeln!(w, "{q} Q0 {} {} {} {tag}", e.id, i + 1, e.score).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    /// Reads a TREC run. Lines are re-sorted by score (rank column is ignored,
    /// ties broken by passage id).
    pub fn read_trec(path: &Path) -> Result<Self> {
        let io = |e| Error::io(path, e);
        let mut raw: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
        for (i, line) in BufReader::new(File::open(path).map_err(io)?).lines().enumerate() {
            let line = line.map_err(io)?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message,
            };
            if f.len() != 6 {
                return Err(bad(format!("expected 6 fields, found {}", f.len())));
            }
            let score: f64 = f[4]
                .parse()
                .map_err(|_| bad(format!("score `{}` is not a number", f[4])))?;
            raw.entry(f[0].to_string())
                .or_default()
                .push((f[2].to_string(), score));
        }
        Ok(RunFile {
            runs: raw
                .into_iter()
                .map(|(q, v)| {
                    let n = v.len();
                    (q, RankedList::from_scores(v, n))
                })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecallMode {
    /// 1 if any relevant passage is in the top-k.
    Hit,
    /// Fraction of the relevant passages found in the top-k.
    Coverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metric: String,
    pub k: usize,
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
    /// Queries present in the run but absent from the qrels.
    pub unjudged_run_queries: Vec<String>,
}

impl MetricsReport {
    pub fn by_language(&self, queries: &QuerySet) -> BTreeMap<String, f64> {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for (q, v) in &self.per_query {
            if let Some(query) = queries.get(q) {
                let e = acc.entry(query.lang.clone()).or_default();
                e.0 += v;
                e.1 += 1;
            }
        }
        acc.into_iter()
            .map(|(l, (s, n))| (l, s / n as f64))
            .collect()
    }
}

fn evaluate(
    run: &RunFile,
    qrels: &JudgmentSet,
    k: usize,
    metric: &str,
    per_query: impl Fn(&[Scored], &BTreeMap<String, u32>) -> f64,
) -> Result<MetricsReport> {
    if k == 0 {
        return Err(Error::Invalid("k must be >= 1".into()));
    }
    let mut values = BTreeMap::new();
    for q in qrels.query_ids() {
        let judged = qrels.for_query(q).expect("query id from qrels");
        let v = match run.get(q) {
            Some(list) => {
                let top = &list.entries()[..k.min(list.len())];
                per_query(top, judged)
            }
            None => 0.0,
        };
        values.insert(q.to_string(), v);
    }
    let unjudged = run
        .runs
        .keys()
        .filter(|q| qrels.for_query(q).is_none())
        .cloned()
        .collect();
    let mean = if values.is_empty() {
        0.0
    } else {
        values.values().sum::<f64>() / values.len() as f64
    };
    Ok(MetricsReport {
        metric: format!("{metric}@{k}"),
        k,
        per_query: values,
        mean,
        unjudged_run_queries: unjudged,
    })
}

fn relevant(judged: &BTreeMap<String, u32>, id: &str) -> bool {
    judged.get(id).is_some_and(|&g| g > 0)
}

pub fn mrr_at_k(run: &RunFile, qrels: &JudgmentSet, k: usize) -> Result<MetricsReport> {
    evaluate(run, qrels, k, "mrr", |top, judged| {
        top.iter()
            .position(|e| relevant(judged, &e.id))
            .map_or(0.0, |i| 1.0 / (i + 1) as f64)
    })
}

pub fn recall_at_k(run: &RunFile, qrels: &JudgmentSet, k: usize) -> Result<MetricsReport> {
    recall_at_k_with(run, qrels, k, RecallMode::Hit)
}

pub fn recall_at_k_with(
    run: &RunFile,
    qrels: &JudgmentSet,
    k: usize,
    mode: RecallMode,
) -> Result<MetricsReport> {
    let name = match mode {
        RecallMode::Hit => "recall",
        RecallMode::Coverage => "coverage",
    };
    evaluate(run, qrels, k, name, |top, judged| {
        let found = top.iter().filter(|e| relevant(judged, &e.id)).count();
        match mode {
            RecallMode::Hit => (found > 0) as u8 as f64,
            RecallMode::Coverage => {
                let total = judged.values().filter(|&&g| g > 0).count();
                if total == 0 {
                    0.0
                } else {
                    found as f64 / total as f64
                }
            }
        }
    })
}

/// Aligned text table with one row per metric and one column per language,
/// followed by the unweighted mean over languages.
pub fn language_table(metrics: &BTreeMap<String, BTreeMap<String, f64>>) -> String {
    let names: Vec<&String> = {
        let mut seen: Vec<&String> = metrics.values().flat_map(|m| m.keys()).collect();
        seen.sort();
        seen.dedup();
        seen
    };
    let langs: Vec<&String> = metrics.keys().collect();
    let width = names.iter().map(|n| n.len()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<width$}", "metric");
    for l in &langs {
        out.push_str(&format!(" {l:>7}"));
    }
    out.push_str(&format!(" {:>7}\n", "avg"));
    for name in names {
        out.push_str(&format!("{name:<width$}"));
        let mut sum = 0.0;
        let mut n = 0;
        for l in &langs {
            match metrics[*l].get(name) {
                Some(v) => {
                    out.push_str(&format!(" {:>7.4}", v));
                    sum += v;
                    n += 1;
                }
                None => out.push_str(&format!(" {:>7}", "-")),
            }
        }
        if n > 0 {
            out.push_str(&format!(" {:>7.4}\n", sum / n as f64));
        } else {
            out.push_str(&format!(" {:>7}\n", "-"));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p_two_sided: f64,
    pub df: usize,
    pub mean_diff: f64,
    /// All differences equal and nonzero: t is infinite and p is 0.
    pub degenerate_variance: bool,
}

/// Student's paired t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Invalid("paired t-test needs at least 2 pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if diffs.iter().all(|&d| d == 0.0) {
        return Ok(TTest {
            t: 0.0,
            p_two_sided: 1.0,
            df,
            mean_diff: 0.0,
            degenerate_variance: false,
        });
    }
    if var == 0.0 {
        return Ok(TTest {
            t: f64::INFINITY.copysign(mean),
            p_two_sided: 0.0,
            df,
            mean_diff: mean,
            degenerate_variance: true,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTest {
        t,
        p_two_sided: p,
        df,
        mean_diff: mean,
        degenerate_variance: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Judgment;

    fn run(lists: &[(&str, &[&str])]) -> RunFile {
        let mut r = RunFile::default();
        for (q, ids) in lists {
            let n = ids.len() as f64;
            r.insert(
                *q,
                RankedList::from_scores(ids.iter().enumerate().map(|(i, id)| (*id, n - i as f64)), ids.len()),
            );
        }
        r
    }

    fn qrels(js: &[(&str, &str, u32)]) -> JudgmentSet {
        JudgmentSet::new(js.iter().map(|(q, p, g)| Judgment {
            query_id: q.to_string(),
            passage_id: p.to_string(),
            grade: *g,
        }))
    }

    #[test]
    fn mrr_cases() {
        let qr = qrels(&[("q1", "a", 1), ("q2", "d", 1)]);
        let r = run(&[("q1", &["a", "b"]), ("q2", &["x", "y", "z", "d"])]);
        let m = mrr_at_k(&r, &qr, 10).unwrap();
        assert_eq!(m.per_query["q1"], 1.0);
        assert_eq!(m.mean, 0.625);
        let m3 = mrr_at_k(&r, &qr, 3).unwrap();
        assert_eq!(m3.per_query["q2"], 0.0);
        assert!(mrr_at_k(&r, &qr, 0).is_err());
    }

    #[test]
    fn missing_and_unjudged_queries() {
        let qr = qrels(&[("q1", "a", 1), ("q2", "b", 1)]);
        let r = run(&[("q1", &["a"]), ("q9", &["a"])]);
        let m = mrr_at_k(&r, &qr, 5).unwrap();
        assert_eq!(m.mean, 0.5);
        assert_eq!(m.unjudged_run_queries, vec!["q9"]);
    }

    #[test]
    fn recall_is_hit_rate() {
        let qr = qrels(&[("q", "a", 1), ("q", "b", 2), ("q", "c", 0)]);
        let r = run(&[("q", &["x", "a", "c"])]);
        assert_eq!(recall_at_k(&r, &qr, 2).unwrap().mean, 1.0);
        assert_eq!(recall_at_k(&r, &qr, 1).unwrap().mean, 0.0);
        assert_eq!(recall_at_k_with(&r, &qr, 3, RecallMode::Coverage).unwrap().mean, 0.5);
        let none = run(&[("q", &["c", "x"])]);
        assert_eq!(recall_at_k(&none, &qr, 2).unwrap().mean, 0.0);
    }

    #[test]
    fn per_language_means() {
        use crate::corpus::Query;
        let qs = QuerySet::new(vec![
            Query { id: "q1".into(), text: "t".into(), lang: "en".into() },
            Query { id: "q2".into(), text: "t".into(), lang: "sw".into() },
            Query { id: "q3".into(), text: "t".into(), lang: "sw".into() },
        ])
        .unwrap();
        let qr = qrels(&[("q1", "a", 1), ("q2", "a", 1), ("q3", "a", 1)]);
        let r = run(&[("q1", &["a"]), ("q2", &["b", "a"]), ("q3", &["a"])]);
        let by = mrr_at_k(&r, &qr, 10).unwrap().by_language(&qs);
        assert_eq!(by["en"], 1.0);
        assert_eq!(by["sw"], 0.75);
    }

    #[test]
    fn trec_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.trec");
        let r = run(&[("q1", &["a", "b"]), ("q2", &["c"])]);
        r.write_trec(&path, "test").unwrap();
        assert_eq!(RunFile::read_trec(&path).unwrap(), r);
        std::fs::write(&path, "q1 Q0 a 1\n").unwrap();
        assert!(matches!(RunFile::read_trec(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn table_layout() {
        let mut m: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        m.entry("sw".into()).or_default().insert("mrr@10".into(), 0.5);
        m.entry("te".into()).or_default().insert("mrr@10".into(), 0.25);
        m.entry("te".into()).or_default().insert("recall@10".into(), 1.0);
        let t = language_table(&m);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "metric         sw      te     avg");
        assert_eq!(lines[1], "mrr@10     0.5000  0.2500  0.3750");
        assert_eq!(lines[2], "recall@10       -  1.0000  1.0000");
    }

    #[test]
    fn t_test_conventions() {
        let a = [0.1, 0.5, 0.7];
        let t = paired_t_test(&a, &a).unwrap();
        assert_eq!((t.t, t.p_two_sided), (0.0, 1.0));
        let t = paired_t_test(&[2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(t.degenerate_variance && t.p_two_sided < 1e-12);
        assert!(paired_t_test(&[1.0], &[0.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn t_test_reference_value() {
        // scipy.stats.ttest_rel on diffs [0.2, -0.1, 0.3, 0.1, 0.0]
        let a = [0.2, -0.1, 0.3, 0.1, 0.0];
        let b = [0.0; 5];
        let t = paired_t_test(&a, &b).unwrap();
        assert!((t.t - 1.414_213_562_373_095).abs() < 1e-6, "{}", t.t);
        assert!((t.p_two_sided - 0.230_199_641_080_498_73).abs() < 1e-6, "{}", t.p_two_sided);
    }
}
