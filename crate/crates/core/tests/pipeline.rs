use std::collections::BTreeMap;

use lexmine::config::KvConfig;
use lexmine::corpus::{synth_benchmark, tokenize, Dataset, QuerySet, SynthBenchmark, SynthSpec};
use lexmine::dense::{search_dense, EncoderParams, Side, Staleness};
use lexmine::mining::{mine_pairs, read_samples};
use lexmine::pipeline::{judgments_for, MiningStrategy, Pipeline, PipelineConfig, RunStore};
use lexmine::{Error, RankedList};

fn spec() -> SynthSpec {
    SynthSpec {
        languages: vec!["en".into(), "sw".into()],
        topics_per_lang: 6,
        passages_per_topic: 12,
        vocab_size: 240,
        topic_terms: 10,
        passage_len: 20,
        topic_mix: 0.4,
        train_queries_per_lang: 60,
        dev_queries_per_lang: 30,
        ..SynthSpec::default()
    }
}

fn bench() -> SynthBenchmark {
    synth_benchmark(&spec(), 11).unwrap()
}

fn config(overrides: &[&str]) -> PipelineConfig {
    let mut kv = KvConfig::default();
    for o in [
        "seed=5",
        "iterations=2",
        "dim=16",
        "batch_size=16",
        "warmup_epochs=4",
        "epochs_per_iter=2",
        "n_generate=40",
        "eval_k=10,100",
    ]
    .iter()
    .chain(overrides)
    {
        kv.set_override(o).unwrap();
    }
    PipelineConfig::from_kv(kv).unwrap()
}

fn brute_force(params: &EncoderParams, data: &Dataset, text: &str, cfg: &PipelineConfig) -> RankedList {
    let qv = params.encode(Side::Query, &tokenize(text, &cfg.tokenizer));
    let scores = data.corpus.iter().map(|p| {
        let pv = params.encode(Side::Passage, &tokenize(&p.text, &cfg.tokenizer));
        (p.id.clone(), qv.iter().zip(&pv).map(|(a, b)| a * b).sum::<f64>())
    });
    RankedList::from_scores(scores, data.corpus.len())
}

#[test]
fn seeded_runs_are_identical() {
    let b = bench();
    let p = Pipeline::new(config(&[]), &b.data).unwrap();
    let a = p.run(None).unwrap();
    let c = p.run(None).unwrap();
    let strip = |o: &lexmine::pipeline::PipelineOutcome| o.reports.iter().map(|r| r.without_timing()).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&c));
    assert_eq!(a.state.params, c.state.params);
    assert_eq!(a.reports.len(), 3);
}

#[test]
fn warmup_beats_untrained_on_source_language() {
    let b = bench();
    let cfg = config(&[]);
    let p = Pipeline::new(cfg.clone(), &b.data).unwrap();
    let (trained, report, _) = p.warmup().unwrap();
    let untrained = Pipeline::new(config(&["warmup_epochs=0"]), &b.data).unwrap();
    let (base, base_report, _) = untrained.warmup().unwrap();
    let src = p.source_languages().to_vec();
    assert_eq!(src, vec!["en".to_string()]);
    let m = |r: &lexmine::pipeline::IterationReport| r.mean_metric(&src, "mrr@10").unwrap();
    assert!(m(&report) > m(&base_report), "{} vs {}", m(&report), m(&base_report));
    assert_ne!(trained.params, base.params);
}

#[test]
fn zero_warmup_epochs_keeps_init_and_trains_generator() {
    let b = bench();
    let cfg = config(&["warmup_epochs=0"]);
    let p = Pipeline::new(cfg.clone(), &b.data).unwrap();
    let (state, report, _) = p.warmup().unwrap();
    let init = EncoderParams::init(p.sparse().terms(), cfg.dim, cfg.shared_encoder, cfg.seed).unwrap();
    assert_eq!(state.params, init);
    assert_eq!(report.train_steps, 0);
    assert!(state.generator.version() > 0);
}

#[test]
fn empty_labeled_data_is_an_error() {
    let mut b = bench();
    b.data.train_queries = QuerySet::new(Vec::new()).unwrap();
    b.data.judgments = judgments_for(&b.data.judgments, &b.data.dev_queries);
    let p = Pipeline::new(config(&[]), &b.data).unwrap();
    assert!(matches!(p.warmup(), Err(Error::Empty(_))));
}

#[test]
fn first_iteration_skips_generation_and_refreshes_index() {
    let b = bench();
    let cfg = config(&[]);
    let p = Pipeline::new(cfg.clone(), &b.data).unwrap();
    let (mut state, _, _) = p.warmup().unwrap();
    for t in 1..=2 {
        let out = p.run_iteration(&mut state).unwrap();
        if t == 1 {
            assert_eq!(out.report.generated_queries, 0);
            assert_eq!(out.report.generated_samples, 0);
        } else {
            assert!(out.report.generated_queries > 0);
            assert!(out.report.generated_accepted <= out.report.generated_queries);
        }
        assert!(state.index().is_fresh(&state.params));
        for q in b.data.dev_queries.iter().take(10) {
            let got = search_dense(state.index(), &state.params, &q.text, &cfg.tokenizer, b.data.corpus.len(), Staleness::Reject).unwrap();
            let want = brute_force(&state.params, &b.data, &q.text, &cfg);
            assert_eq!(got.ids().collect::<Vec<_>>(), want.ids().collect::<Vec<_>>());
        }
        for (i, id) in state.index().ids().iter().enumerate().step_by(17) {
            let text = &b.data.corpus.get(id).unwrap().text;
            let v = state.params.encode(Side::Passage, &tokenize(text, &cfg.tokenizer));
            assert_eq!(state.index().vector(i), v.as_slice());
        }
        for s in out.mined.samples.iter().chain(&out.generated.samples) {
            s.validate(|id| b.data.corpus.contains(id)).unwrap();
        }
        for m in out.report.metrics.values().flat_map(|m| m.values()) {
            assert!((0.0..=1.0).contains(m));
        }
    }
}

#[test]
fn generation_every_iteration_when_not_skipped() {
    let b = bench();
    let p = Pipeline::new(config(&["skip_generation_first_iter=false"]), &b.data).unwrap();
    let (mut state, _, _) = p.warmup().unwrap();
    let out = p.run_iteration(&mut state).unwrap();
    assert!(out.report.generated_queries > 0);
    assert!(out.report.generator_pairs > 0);
}

#[test]
fn mined_count_matches_recount_from_disk() {
    let b = bench();
    let cfg = config(&["iterations=1"]);
    let p = Pipeline::new(cfg.clone(), &b.data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let outcome = p.run(Some(dir.path())).unwrap();
    let store = RunStore::open(dir.path(), &cfg).unwrap();
    let warm = store.load_state(&p, 0).unwrap();

    let records = read_samples(&store.stage_dir(1).join("mined.jsonl")).unwrap();
    let mut per_query: BTreeMap<String, usize> = BTreeMap::new();
    for r in &records {
        *per_query.entry(r.clone().into_sample().query.id).or_default() += 1;
    }
    let mut expected: BTreeMap<String, usize> = BTreeMap::new();
    for q in b.data.unlabeled_queries.iter() {
        let sparse = p.sparse().search(&q.text, cfg.mining.l);
        let dense = search_dense(warm.index(), &warm.params, &q.text, &cfg.tokenizer, cfg.mining.l, Staleness::Reject).unwrap();
        let n = mine_pairs(&sparse, &dense, &cfg.mining).unwrap().positives.len();
        if n > 0 {
            expected.insert(q.id.clone(), n);
        }
    }
    assert_eq!(per_query, expected);
    let report = &outcome.reports[1];
    assert_eq!(report.mined_samples, records.len());
    assert_eq!(report.mined_queries, expected.len());
    assert_eq!(report.mined_queries + report.dropped_queries, b.data.unlabeled_queries.len());
}

#[test]
fn resume_continues_where_the_run_stopped() {
    let b = bench();
    let dir = tempfile::tempdir().unwrap();
    let full = Pipeline::new(config(&[]), &b.data).unwrap().run(None).unwrap();

    let short = Pipeline::new(config(&["iterations=1"]), &b.data).unwrap();
    short.run(Some(dir.path())).unwrap();
    assert!(!dir.path().join("iter_2").exists());
    let resumed = Pipeline::new(config(&[]), &b.data).unwrap().run(Some(dir.path())).unwrap();

    let strip = |o: &lexmine::pipeline::PipelineOutcome| o.reports.iter().map(|r| r.without_timing()).collect::<Vec<_>>();
    assert_eq!(strip(&resumed), strip(&full));
    assert_eq!(resumed.state.params, full.state.params);
    for f in ["mined.jsonl", "generated.jsonl", "checkpoint.bin", "run.trec", "report.json"] {
        assert!(dir.path().join("iter_2").join(f).exists(), "{f}");
    }

    // A completed run reloads without recomputation.
    let again = Pipeline::new(config(&[]), &b.data).unwrap().run(Some(dir.path())).unwrap();
    assert_eq!(again.reports, resumed.reports);
}

#[test]
fn resume_with_different_config_is_rejected() {
    let b = bench();
    let dir = tempfile::tempdir().unwrap();
    Pipeline::new(config(&["iterations=1"]), &b.data).unwrap().run(Some(dir.path())).unwrap();
    let other = Pipeline::new(config(&["iterations=1", "dim=8"]), &b.data).unwrap();
    assert!(matches!(other.run(Some(dir.path())), Err(Error::ConfigMismatch { .. })));
}

#[test]
fn zero_iterations_rejected() {
    let mut kv = KvConfig::default();
    kv.set("iterations", 0);
    let err = PipelineConfig::from_kv(kv).unwrap_err();
    assert!(matches!(err, Error::Config { ref key, .. } if key == "iterations"));
}

#[test]
fn every_strategy_runs() {
    let b = bench();
    for strategy in MiningStrategy::ALL {
        let cfg = config(&["iterations=1", &format!("strategy={}", strategy.name())]);
        let p = Pipeline::new(cfg, &b.data).unwrap();
        let out = p.run(None).unwrap();
        let r = &out.reports[1];
        assert!(r.mined_samples > 0, "{}", strategy.name());
        assert_eq!(out.state.aux.is_some(), strategy == MiningStrategy::DoubleDense);
    }
}

#[test]
fn plateau_stops_early() {
    let b = bench();
    let p = Pipeline::new(config(&["iterations=4", "plateau_epsilon=1.0"]), &b.data).unwrap();
    let out = p.run(None).unwrap();
    assert!(out.plateaued);
    assert_eq!(out.reports.len(), 2);
}
