//! Warm-up and iterative self-training.
//!
//! The warm-up trains the dense retriever and the query generator on labeled
//! source-language data. Each iteration then
//!
//! 1. mines training samples from every unlabeled query,
//! 2. (optionally) retrains the generator on `S = 1` mined pairs, generates
//!    queries for sampled target-language passages and keeps those that pass
//!    the top-1 filter,
//! 3. fine-tunes the retriever on the union and rebuilds the dense index,
//! 4. evaluates on the dev queries.
//!
//! With an output directory every stage is persisted, and a rerun with the
//! same configuration resumes after the last completed iteration.

mod config;
mod report;
mod store;

use std::collections::{BTreeSet, HashSet};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

pub use config::{MiningStrategy, PipelineConfig, GENERATOR_MINING_S};
pub use report::{IterationReport, LanguageMetrics};
pub use store::{Manifest, RunStore};

use crate::corpus::{Dataset, Judgment, JudgmentSet, Passage, Query, QuerySet};
use crate::dense::{search_dense, train_step, DenseIndex, EncoderParams, OptimizerState, PassageRows, Staleness, TrainingSample};
use crate::error::{Error, Result};
use crate::eval::{mrr_at_k, recall_at_k, RunFile};
use crate::mining::{assemble_mined_sample, assemble_samples, mine_fused, mine_pairs, MinedSets, MiningConfig, NegativeSampler};
use crate::querygen::{assemble_from_lists, generate_query, train_generator, verdict_from_lists, GeneratedPair, GeneratorModel, Verdict};
use crate::rank::RankedList;
use crate::seed::{self, stage};
use crate::sparse::InvertedIndex;

/// Trainable state carried from one iteration to the next.
#[derive(Debug, Clone)]
pub struct PipelineState {
    pub params: EncoderParams,
    pub optimizer: OptimizerState,
    pub generator: GeneratorModel,
    /// Frozen second dense retriever, only for the double-dense strategy.
    pub aux: Option<EncoderParams>,
    index: DenseIndex,
    aux_index: Option<DenseIndex>,
    /// Completed iterations (0 after warm-up).
    pub iteration: usize,
}

impl PipelineState {
    pub fn index(&self) -> &DenseIndex {
        &self.index
    }

    pub fn aux_index(&self) -> Option<&DenseIndex> {
        self.aux_index.as_ref()
    }
}

/// Samples mined from the unlabeled queries in one iteration.
#[derive(Debug, Clone, Default)]
pub struct MinedData {
    pub samples: Vec<TrainingSample>,
    pub mined_queries: usize,
    pub dropped_queries: usize,
}

/// Output of the generation stage.
#[derive(Debug, Clone, Default)]
pub struct GeneratedData {
    pub generator_pairs: usize,
    pub pairs: Vec<(GeneratedPair, Verdict)>,
    pub samples: Vec<TrainingSample>,
}

/// Everything one iteration produced.
#[derive(Debug, Clone)]
pub struct IterationOutput {
    pub report: IterationReport,
    pub mined: MinedData,
    pub generated: GeneratedData,
    pub run: RunFile,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    /// Warm-up report first, then one per completed iteration.
    pub reports: Vec<IterationReport>,
    pub state: PipelineState,
    /// True when training stopped early on a plateau.
    pub plateaued: bool,
}

/// Immutable context of a run: the data, the sparse index and lookups.
pub struct Pipeline<'a> {
    cfg: PipelineConfig,
    data: &'a Dataset,
    sparse: InvertedIndex,
    rows: PassageRows,
    sampler: NegativeSampler,
    vocab: BTreeSet<String>,
    dev_qrels: JudgmentSet,
    source_langs: Vec<String>,
    target_langs: Vec<String>,
}

impl<'a> Pipeline<'a> {
    pub fn new(cfg: PipelineConfig, data: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        data.validate()?;
        let sparse = InvertedIndex::build(&data.corpus, &cfg.tokenizer, cfg.bm25)?;
        let vocab: BTreeSet<String> = sparse.terms().map(String::from).collect();
        let probe = EncoderParams::init(vocab.iter().cloned(), 1, true, 0)?;
        let rows = PassageRows::new(&probe, &data.corpus, &cfg.tokenizer);
        let dev_qrels = judgments_for(&data.judgments, &data.dev_queries);
        let source_langs: Vec<String> = data
            .train_queries
            .iter()
            .filter(|q| data.judgments.for_query(&q.id).is_some())
            .map(|q| q.lang.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let target_langs = data
            .dev_queries
            .iter()
            .chain(data.unlabeled_queries.iter())
            .map(|q| q.lang.clone())
            .filter(|l| !source_langs.contains(l))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(Pipeline {
            sampler: NegativeSampler::new(&data.corpus),
            cfg,
            data,
            sparse,
            rows,
            vocab,
            dev_qrels,
            source_langs,
            target_langs,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn sparse(&self) -> &InvertedIndex {
        &self.sparse
    }

    pub fn rows(&self) -> &PassageRows {
        &self.rows
    }

    /// Languages with labeled training queries.
    pub fn source_languages(&self) -> &[String] {
        &self.source_langs
    }

    /// Dev or unlabeled languages without labeled training queries.
    pub fn target_languages(&self) -> &[String] {
        &self.target_langs
    }

    fn seed(&self, path: &[u64]) -> rand_chacha::ChaCha8Rng {
        seed::rng(self.cfg.seed, path)
    }

    fn init_params(&self, init_seed: u64) -> Result<EncoderParams> {
        EncoderParams::init(self.vocab.iter().cloned(), self.cfg.dim, self.cfg.shared_encoder, init_seed)
    }

    /// Builds the state from trained components (dense indexes included).
    pub fn assemble_state(
        &self,
        params: EncoderParams,
        optimizer: OptimizerState,
        generator: GeneratorModel,
        aux: Option<EncoderParams>,
        iteration: usize,
    ) -> Result<PipelineState> {
        if !params.terms().iter().eq(self.vocab.iter()) {
            return Err(Error::Checkpoint("encoder vocabulary does not match the corpus".into()));
        }
        if !optimizer.shapes_match(&params) {
            return Err(Error::Checkpoint("optimizer state does not match the encoder".into()));
        }
        let index = DenseIndex::build(&params, &self.rows)?;
        let aux_index = aux
            .as_ref()
            .map(|a| DenseIndex::build(a, &self.rows))
            .transpose()?;
        Ok(PipelineState {
            params,
            optimizer,
            generator,
            aux,
            index,
            aux_index,
            iteration,
        })
    }

    fn refresh(&self, state: &mut PipelineState) -> Result<()> {
        state.index = DenseIndex::build(&state.params, &self.rows)?;
        Ok(())
    }

    /// DPR-style samples from the labeled queries: the highest-graded
    /// passage as positive, the best BM25 non-relevant passages as hard
    /// negatives.
    pub fn labeled_samples(&self) -> Result<Vec<TrainingSample>> {
        let cfg = &self.cfg.mining;
        let out: Vec<Option<TrainingSample>> = self
            .data
            .train_queries
            .items()
            .par_iter()
            .enumerate()
            .map(|(i, q)| {
                let relevant = self.data.judgments.relevant(&q.id);
                let positive = relevant.first()?.to_string();
                let mut rng = self.seed(&[stage::WARMUP, i as u64]);
                let judged: HashSet<&str> = self
                    .data
                    .judgments
                    .for_query(&q.id)
                    .map(|m| m.keys().map(String::as_str).collect())
                    .unwrap_or_default();
                let bm25 = self.sparse.search(&q.text, cfg.max_hard_negatives + judged.len() + 1);
                let hard: Vec<String> = bm25
                    .ids()
                    .filter(|id| !judged.contains(id))
                    .take(cfg.max_hard_negatives)
                    .map(String::from)
                    .collect();
                let positives = BTreeSet::from([positive]);
                let mut exclude = judged.clone();
                exclude.extend(hard.iter().map(String::as_str));
                assemble_samples(q, &positives, &hard, &exclude, &self.sampler, &mut rng, cfg).pop()
            })
            .collect();
        Ok(out.into_iter().flatten().collect())
    }

    /// (query, best relevant passage) pairs of the labeled queries.
    fn labeled_pairs(&self) -> Vec<(&Query, &Passage)> {
        self.data
            .train_queries
            .iter()
            .filter_map(|q| {
                let best = *self.data.judgments.relevant(&q.id).first()?;
                Some((q, self.data.corpus.get(best)?))
            })
            .collect()
    }

    fn steps_for(&self, epochs: usize, n: usize) -> usize {
        epochs * n.div_ceil(self.cfg.batch_size)
    }

    /// Runs `steps` optimizer steps over `samples` in reshuffled passes,
    /// scaling the optimizer's learning rate by the configured schedule.
    /// Returns the per-step losses.
    pub fn train(
        &self,
        params: &mut EncoderParams,
        opt: &mut OptimizerState,
        samples: &[TrainingSample],
        steps: usize,
        seed_path: &[u64],
    ) -> Result<Vec<f64>> {
        if samples.is_empty() || steps == 0 {
            return Ok(Vec::new());
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut pos = order.len();
        let mut epoch = 0u64;
        let mut losses = Vec::with_capacity(steps);
        let base_lr = opt.config.lr;
        for step in 0..steps {
            if pos >= order.len() {
                let mut path = seed_path.to_vec();
                path.push(epoch);
                order.shuffle(&mut self.seed(&path));
                epoch += 1;
                pos = 0;
            }
            let end = (pos + self.cfg.batch_size).min(order.len());
            let batch: Vec<TrainingSample> = order[pos..end].iter().map(|&i| samples[i].clone()).collect();
            opt.config.lr = base_lr * self.cfg.lr_schedule.factor(step, steps);
            let loss = train_step(params, opt, &batch, &self.rows, &self.cfg.tokenizer);
            opt.config.lr = base_lr;
            losses.push(loss?);
            pos = end;
        }
        Ok(losses)
    }

    /// Dense run over the dev queries and per-language metrics.
    pub fn evaluate(&self, params: &EncoderParams, index: &DenseIndex) -> Result<(RunFile, LanguageMetrics)> {
        let kmax = *self.cfg.eval_k.iter().max().expect("validated non-empty");
        let lists: Vec<(String, RankedList)> = self
            .data
            .dev_queries
            .items()
            .par_iter()
            .map(|q| {
                search_dense(index, params, &q.text, &self.cfg.tokenizer, kmax, Staleness::Reject)
                    .map(|l| (q.id.clone(), l))
            })
            .collect::<Result<_>>()?;
        let mut run = RunFile::default();
        for (q, l) in lists {
            run.insert(q, l);
        }
        let mut metrics = LanguageMetrics::new();
        for &k in &self.cfg.eval_k {
            for report in [mrr_at_k(&run, &self.dev_qrels, k)?, recall_at_k(&run, &self.dev_qrels, k)?] {
                for (lang, v) in report.by_language(&self.data.dev_queries) {
                    metrics.entry(lang).or_default().insert(report.metric.clone(), v);
                }
            }
        }
        Ok((run, metrics))
    }

    /// Trains the retriever and the generator on labeled source data.
    pub fn warmup(&self) -> Result<(PipelineState, IterationReport, RunFile)> {
        let started = Instant::now();
        let mut report = IterationReport::new(0);
        let labeled = self.labeled_samples()?;
        if labeled.is_empty() {
            return Err(Error::Empty("labeled source-language training queries".into()));
        }
        report.labeled_samples = labeled.len();

        let mut params = self.init_params(self.cfg.seed)?;
        let mut optimizer = OptimizerState::new(&params, self.cfg.adam);
        let steps = self.steps_for(self.cfg.warmup_epochs, labeled.len());
        let losses = self.train(&mut params, &mut optimizer, &labeled, steps, &[stage::WARMUP, stage::TRAIN])?;
        report.train_steps = losses.len();
        report.mean_loss = mean(&losses);

        let pairs = self.labeled_pairs();
        report.generator_pairs = pairs.len();
        let generator = if pairs.is_empty() {
            GeneratorModel::new()
        } else {
            train_generator(&GeneratorModel::new(), &pairs, &self.cfg.tokenizer)?
        };

        let aux = if self.cfg.strategy == MiningStrategy::DoubleDense {
            // Same starting point as the primary encoder (both stand for one
            // pretrained checkpoint); only the data split and order differ.
            let mut aux = self.init_params(self.cfg.seed)?;
            let mut aux_opt = OptimizerState::new(&aux, self.cfg.adam);
            let split: Vec<TrainingSample> = labeled.iter().skip(1).step_by(2).cloned().collect();
            let steps = self.steps_for(self.cfg.warmup_epochs, split.len());
            self.train(&mut aux, &mut aux_opt, &split, steps, &[stage::AUX, stage::TRAIN])?;
            Some(aux)
        } else {
            None
        };

        let state = self.assemble_state(params, optimizer, generator, aux, 0)?;
        let (run, metrics) = self.evaluate(&state.params, &state.index)?;
        report.metrics = metrics;
        report.wall_clock_secs = started.elapsed().as_secs_f64();
        Ok((state, report, run))
    }

    /// The ranking that plays the lexical role: BM25, or the frozen second
    /// dense retriever for the double-dense strategy.
    fn first_list(&self, state: &PipelineState, text: &str, k: usize) -> Result<RankedList> {
        match (&state.aux, &state.aux_index) {
            (Some(aux), Some(idx)) if self.cfg.strategy == MiningStrategy::DoubleDense => {
                search_dense(idx, aux, text, &self.cfg.tokenizer, k, Staleness::Reject)
            }
            _ if self.cfg.strategy == MiningStrategy::DoubleDense => {
                Err(Error::Invalid("double-dense strategy needs an auxiliary retriever".into()))
            }
            _ => Ok(self.sparse.search(text, k)),
        }
    }

    fn dense_list(&self, state: &PipelineState, text: &str, k: usize) -> Result<RankedList> {
        search_dense(&state.index, &state.params, text, &self.cfg.tokenizer, k, Staleness::Reject)
    }

    fn mined_sets(&self, first: &RankedList, dense: &RankedList, cfg: &MiningConfig) -> Result<(MinedSets, Option<RankedList>)> {
        match self.cfg.strategy.fusion() {
            Some(mode) => mine_fused(first, dense, mode, cfg).map(|(s, f)| (s, Some(f))),
            None => mine_pairs(first, dense, cfg).map(|s| (s, None)),
        }
    }

    /// Training samples for one unlabeled query under the configured strategy.
    pub fn mine_query(&self, state: &PipelineState, query: &Query, rng: &mut rand_chacha::ChaCha8Rng) -> Result<Vec<TrainingSample>> {
        let cfg = &self.cfg.mining;
        let first = self.first_list(state, &query.text, cfg.l)?;
        let dense = self.dense_list(state, &query.text, cfg.l)?;
        let (sets, fused) = self.mined_sets(&first, &dense, cfg)?;
        if sets.positives.is_empty() {
            return Ok(Vec::new());
        }
        let negatives: HashSet<&str> = sets.negatives.iter().map(String::as_str).collect();
        let samples = match self.cfg.strategy {
            MiningStrategy::LexiconEnhanced | MiningStrategy::DoubleDense => {
                assemble_mined_sample(query, &sets, &first, &dense, &self.sampler, rng, cfg)
            }
            MiningStrategy::SparsePlusDense | MiningStrategy::SparseTimesDense => {
                let hard: Vec<String> = fused
                    .expect("fusion strategies return the fused list")
                    .ids()
                    .filter(|id| negatives.contains(id))
                    .map(String::from)
                    .collect();
                assemble_samples(query, &sets.positives, &hard, &negatives, &self.sampler, rng, cfg)
            }
            MiningStrategy::NoHardNegatives => {
                assemble_samples(query, &sets.positives, &[], &negatives, &self.sampler, rng, cfg)
            }
            MiningStrategy::SparseHardNegatives => {
                let hard: Vec<String> = first
                    .ids()
                    .filter(|id| !sets.positives.contains(*id))
                    .map(String::from)
                    .collect();
                assemble_samples(query, &sets.positives, &hard, &HashSet::new(), &self.sampler, rng, cfg)
            }
        };
        Ok(samples)
    }

    /// Mines every unlabeled query with the current retrievers. Queries
    /// without a positive are dropped.
    pub fn mine(&self, state: &PipelineState, iteration: usize) -> Result<MinedData> {
        let per_query: Vec<Vec<TrainingSample>> = self
            .data
            .unlabeled_queries
            .items()
            .par_iter()
            .enumerate()
            .map(|(i, q)| {
                let mut rng = self.seed(&[stage::MINE, iteration as u64, i as u64]);
                self.mine_query(state, q, &mut rng)
            })
            .collect::<Result<_>>()?;
        let mut out = MinedData::default();
        for s in per_query {
            if s.is_empty() {
                out.dropped_queries += 1;
            } else {
                out.mined_queries += 1;
                out.samples.extend(s);
            }
        }
        Ok(out)
    }

    /// (query, passage) pairs mined with `S = 1`, for the generator.
    fn generator_pairs(&self, state: &PipelineState) -> Result<Vec<(&'a Query, &'a Passage)>> {
        let cfg = self.cfg.mining.with_s(GENERATOR_MINING_S);
        let data = self.data;
        let per_query: Vec<Vec<(&'a Query, &'a Passage)>> = data
            .unlabeled_queries
            .items()
            .par_iter()
            .map(|q| {
                let first = self.first_list(state, &q.text, cfg.l)?;
                let dense = self.dense_list(state, &q.text, cfg.l)?;
                let (sets, _) = self.mined_sets(&first, &dense, &cfg)?;
                Ok(sets
                    .positives
                    .iter()
                    .filter_map(|p| data.corpus.get(p).map(|p| (q, p)))
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(per_query.into_iter().flatten().collect())
    }

    /// Retrains the generator on `S = 1` mined pairs, then generates and
    /// filters queries for up to `n_generate` passages per target language.
    pub fn generate(&self, state: &mut PipelineState, iteration: usize) -> Result<GeneratedData> {
        let pairs = self.generator_pairs(state)?;
        let mut out = GeneratedData {
            generator_pairs: pairs.len(),
            ..Default::default()
        };
        if !pairs.is_empty() {
            state.generator = train_generator(&state.generator, &pairs, &self.cfg.tokenizer)?;
        }
        if state.generator.version() == 0 {
            return Ok(out);
        }

        let by_lang = self.data.corpus.positions_by_lang();
        let mut jobs: Vec<(usize, usize, &Passage)> = Vec::new();
        for (li, lang) in self.target_langs.iter().enumerate() {
            let Some(pool) = by_lang.get(lang) else { continue };
            let mut rng = self.seed(&[stage::GENERATE, iteration as u64, li as u64]);
            let n = self.cfg.n_generate.min(pool.len());
            for (j, k) in rand::seq::index::sample(&mut rng, pool.len(), n).into_iter().enumerate() {
                jobs.push((li, j, &self.data.corpus.items()[pool[k]]));
            }
        }

        let cfg = &self.cfg.mining;
        let k = cfg.max_hard_negatives + 1;
        let state = &*state;
        let results: Vec<(GeneratedPair, Verdict, Option<TrainingSample>)> = jobs
            .par_iter()
            .map(|&(li, j, passage)| {
                let mut rng = self.seed(&[stage::GENERATE, iteration as u64, li as u64, j as u64 + 1]);
                let id = format!("g{iteration}-{}-{j:05}", passage.lang);
                let query = generate_query(&state.generator, passage, id, &self.cfg.tokenizer, &mut rng)?;
                let sparse = self.sparse.search(&query.text, k);
                let dense = self.dense_list(state, &query.text, k)?;
                let verdict = verdict_from_lists(&passage.id, &sparse, &dense);
                let pair = GeneratedPair {
                    query,
                    passage_id: passage.id.clone(),
                    accepted: verdict.is_accepted(),
                };
                let sample = if pair.accepted || !self.cfg.query_filter {
                    let keep = GeneratedPair {
                        accepted: true,
                        ..pair.clone()
                    };
                    Some(assemble_from_lists(&keep, &sparse, &dense, &self.sampler, &mut rng, cfg)?)
                } else {
                    None
                };
                Ok((pair, verdict, sample))
            })
            .collect::<Result<_>>()?;
        for (pair, verdict, sample) in results {
            out.samples.extend(sample);
            out.pairs.push((pair, verdict));
        }
        Ok(out)
    }

    /// One mine → generate → train → refresh → evaluate round.
    pub fn run_iteration(&self, state: &mut PipelineState) -> Result<IterationOutput> {
        let started = Instant::now();
        let iteration = state.iteration + 1;
        let mined = self.mine(state, iteration)?;
        if mined.samples.is_empty() {
            return Err(Error::NoMinedSamples(format!(
                "iteration {iteration}: none of the {} unlabeled queries yielded a positive",
                self.data.unlabeled_queries.len()
            )));
        }
        let generated = if self.generation_enabled(iteration) {
            self.generate(state, iteration)?
        } else {
            GeneratedData::default()
        };
        let mut out = self.train_iteration(state, mined, generated)?;
        out.report.wall_clock_secs = started.elapsed().as_secs_f64();
        Ok(out)
    }

    /// Whether iteration `iteration` runs the generation stage.
    pub fn generation_enabled(&self, iteration: usize) -> bool {
        self.cfg.generation && !(iteration == 1 && self.cfg.skip_generation_first_iter)
    }

    /// Fine-tunes on mined plus generated samples, refreshes the index and
    /// evaluates. `state.generator` must already be the one that produced
    /// `generated`.
    pub fn train_iteration(
        &self,
        state: &mut PipelineState,
        mined: MinedData,
        generated: GeneratedData,
    ) -> Result<IterationOutput> {
        let started = Instant::now();
        let iteration = state.iteration + 1;
        if mined.samples.is_empty() && generated.samples.is_empty() {
            return Err(Error::NoMinedSamples(format!("iteration {iteration}: no training samples")));
        }
        let mut report = IterationReport::new(iteration);
        report.mined_queries = mined.mined_queries;
        report.dropped_queries = mined.dropped_queries;
        report.mined_samples = mined.samples.len();
        report.generator_pairs = generated.generator_pairs;
        report.generated_queries = generated.pairs.len();
        report.generated_accepted = generated.pairs.iter().filter(|p| p.0.accepted).count();
        report.generated_samples = generated.samples.len();

        let union: Vec<TrainingSample> = mined.samples.iter().chain(&generated.samples).cloned().collect();
        let steps = if self.cfg.epochs_per_iter > 0 {
            self.steps_for(self.cfg.epochs_per_iter, union.len())
        } else {
            self.cfg.minibatches_per_iter
        };
        state.optimizer.config.lr = self.cfg.iter_lr;
        let losses = self.train(
            &mut state.params,
            &mut state.optimizer,
            &union,
            steps,
            &[stage::TRAIN, iteration as u64],
        )?;
        report.train_steps = losses.len();
        report.mean_loss = mean(&losses);
        self.refresh(state)?;
        state.iteration = iteration;

        let (run, metrics) = self.evaluate(&state.params, &state.index)?;
        report.metrics = metrics;
        report.wall_clock_secs = started.elapsed().as_secs_f64();
        Ok(IterationOutput {
            report,
            mined,
            generated,
            run,
        })
    }

    fn plateaued(&self, prev: &IterationReport, cur: &IterationReport) -> bool {
        let Some(eps) = self.cfg.plateau_epsilon else {
            return false;
        };
        let metric = format!("mrr@{}", self.cfg.primary_k());
        match (
            prev.mean_metric(&self.target_langs, &metric),
            cur.mean_metric(&self.target_langs, &metric),
        ) {
            (Some(a), Some(b)) => b - a < eps,
            _ => false,
        }
    }

    /// Warm-up followed by up to `iterations` rounds. With `out_dir`, every
    /// stage is persisted and completed stages are reused on rerun.
    pub fn run(&self, out_dir: Option<&Path>) -> Result<PipelineOutcome> {
        let store = out_dir.map(|d| RunStore::open(d, &self.cfg)).transpose()?;

        let (mut state, warm_report) = match store.as_ref().map(|s| s.load_warmup(self)).transpose()?.flatten() {
            Some(loaded) => loaded,
            None => {
                let (state, report, run) = self.warmup()?;
                if let Some(s) = &store {
                    s.save_warmup(&state, &report, &run)?;
                }
                (state, report)
            }
        };
        let mut reports = vec![warm_report];
        let mut plateaued = false;
        let mut pending_restore = false;
        for t in 1..=self.cfg.iterations {
            let stored = match &store {
                Some(s) => s.load_report(t)?,
                None => None,
            };
            let report = match stored {
                Some(r) => {
                    pending_restore = true;
                    r
                }
                None => {
                    if pending_restore {
                        let s = store.as_ref().expect("restore implies a store");
                        state = s.load_state(self, t - 1)?;
                        pending_restore = false;
                    }
                    let out = self.run_iteration(&mut state)?;
                    if let Some(s) = &store {
                        s.save_iteration(&state, &out)?;
                    }
                    out.report
                }
            };
            let stop = self.plateaued(reports.last().expect("warm-up report"), &report);
            reports.push(report);
            if stop {
                plateaued = true;
                break;
            }
        }
        if pending_restore {
            let s = store.as_ref().expect("restore implies a store");
            state = s.load_state(self, reports.len() - 1)?;
        }
        Ok(PipelineOutcome {
            reports,
            state,
            plateaued,
        })
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Judgments restricted to `queries`.
pub fn judgments_for(judgments: &JudgmentSet, queries: &QuerySet) -> JudgmentSet {
    JudgmentSet::new(judgments.iter().filter(|j: &Judgment| queries.contains(&j.query_id)))
}
