use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GeneratedData, IterationOutput, IterationReport, MinedData, Pipeline, PipelineConfig, PipelineState};
use crate::corpus::{read_jsonl, write_jsonl};
use crate::dense::TrainingSample;
use crate::dense::{load_checkpoint, save_checkpoint};
use crate::error::{Error, Result};
use crate::eval::RunFile;
use crate::mining::{read_samples, write_samples, SampleSource};
use crate::querygen::{GeneratedPair, GeneratorModel, Verdict};

/// Identifies the configuration a run directory was produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    /// Hash of the settings that must match for a resume.
    pub resume_hash: String,
    pub seed: u64,
    pub version: String,
    pub config: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Manifest {
            config_hash: cfg.hash(),
            resume_hash: cfg.resume_hash(),
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.to_kv(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct GeneratedRow {
    #[serde(flatten)]
    pair: GeneratedPair,
    #[serde(flatten)]
    verdict: Verdict,
}

/// On-disk layout of a pipeline run:
///
/// ```text
/// manifest.json
/// warmup/{checkpoint.bin, aux_checkpoint.bin, generator.json, run.trec, report.json}
/// iter_N/{mined.jsonl, generated.jsonl, generated_samples.jsonl, generation.json,
///         checkpoint.bin, generator.json, run.trec, report.json}
/// ```
///
/// `report.json` is written last and marks a stage as complete.
#[derive(Debug, Clone)]
pub struct RunStore {
    dir: PathBuf,
}

pub const MANIFEST: &str = "manifest.json";
const REPORT: &str = "report.json";
const CHECKPOINT: &str = "checkpoint.bin";
const AUX_CHECKPOINT: &str = "aux_checkpoint.bin";
const GENERATOR: &str = "generator.json";
const RUN: &str = "run.trec";
const MINED: &str = "mined.jsonl";
const GENERATED: &str = "generated.jsonl";
const GENERATED_SAMPLES: &str = "generated_samples.jsonl";
const GENERATION: &str = "generation.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

impl RunStore {
    /// Opens (or initializes) a run directory. An existing manifest must
    /// carry the same resume hash.
    pub fn open(dir: &Path, cfg: &PipelineConfig) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST);
        let current = Manifest::new(cfg);
        if path.exists() {
            let stored: Manifest = read_json(&path)?;
            if stored.resume_hash != current.resume_hash {
                return Err(Error::ConfigMismatch {
                    expected: current.resume_hash,
                    found: stored.resume_hash,
                });
            }
        }
        write_json(&path, &current)?;
        Ok(RunStore {
            dir: dir.to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn stage_dir(&self, iteration: usize) -> PathBuf {
        if iteration == 0 {
            self.dir.join("warmup")
        } else {
            self.dir.join(format!("iter_{iteration}"))
        }
    }

    fn make_stage_dir(&self, iteration: usize) -> Result<PathBuf> {
        let d = self.stage_dir(iteration);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }

    pub fn load_report(&self, iteration: usize) -> Result<Option<IterationReport>> {
        let path = self.stage_dir(iteration).join(REPORT);
        if !path.exists() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }

    pub fn save_warmup(&self, state: &PipelineState, report: &IterationReport, run: &RunFile) -> Result<()> {
        let d = self.make_stage_dir(0)?;
        save_checkpoint(&d.join(CHECKPOINT), &state.params, Some(&state.optimizer))?;
        if let Some(aux) = &state.aux {
            save_checkpoint(&d.join(AUX_CHECKPOINT), aux, None)?;
        }
        state.generator.save(&d.join(GENERATOR))?;
        run.write_trec(&d.join(RUN), "warmup")?;
        write_json(&d.join(REPORT), report)
    }

    pub fn load_warmup(&self, pipeline: &Pipeline) -> Result<Option<(PipelineState, IterationReport)>> {
        match self.load_report(0)? {
            None => Ok(None),
            Some(report) => Ok(Some((self.load_state(pipeline, 0)?, report))),
        }
    }

    /// Restores the state saved after `iteration` (0 = warm-up).
    pub fn load_state(&self, pipeline: &Pipeline, iteration: usize) -> Result<PipelineState> {
        let d = self.stage_dir(iteration);
        let ckpt = load_checkpoint(&d.join(CHECKPOINT))?;
        let optimizer = ckpt
            .optimizer
            .ok_or_else(|| Error::Checkpoint(format!("{}: no optimizer state", d.display())))?;
        let generator = GeneratorModel::load(&d.join(GENERATOR))?;
        let aux_path = self.stage_dir(0).join(AUX_CHECKPOINT);
        let aux = if aux_path.exists() {
            Some(load_checkpoint(&aux_path)?.params)
        } else {
            None
        };
        pipeline.assemble_state(ckpt.params, optimizer, generator, aux, iteration)
    }

    pub fn save_iteration(&self, state: &PipelineState, out: &IterationOutput) -> Result<()> {
        let t = out.report.iteration;
        self.save_mined(t, &out.mined)?;
        self.save_generated(t, &out.generated, &state.generator)?;
        self.save_trained(state, &out.report, &out.run)
    }

    pub fn save_mined(&self, iteration: usize, mined: &MinedData) -> Result<()> {
        let d = self.make_stage_dir(iteration)?;
        write_samples(&d.join(MINED), &mined.samples, SampleSource::Mined)
    }

    /// Reads back `iter_N/mined.jsonl`; every query not present counts as
    /// dropped.
    pub fn load_mined(&self, iteration: usize, unlabeled_queries: usize) -> Result<MinedData> {
        let samples: Vec<TrainingSample> = read_samples(&self.stage_dir(iteration).join(MINED))?
            .into_iter()
            .map(|r| r.into_sample())
            .collect();
        let mined_queries = samples.iter().map(|s| s.query.id.as_str()).collect::<BTreeSet<_>>().len();
        Ok(MinedData {
            samples,
            mined_queries,
            dropped_queries: unlabeled_queries.saturating_sub(mined_queries),
        })
    }

    /// Writes the generated pairs and samples, plus the retrained generator.
    pub fn save_generated(&self, iteration: usize, generated: &GeneratedData, generator: &GeneratorModel) -> Result<()> {
        let d = self.make_stage_dir(iteration)?;
        generator.save(&d.join(GENERATOR))?;
        let rows: Vec<GeneratedRow> = generated
            .pairs
            .iter()
            .map(|(pair, verdict)| GeneratedRow {
                pair: pair.clone(),
                verdict: verdict.clone(),
            })
            .collect();
        write_jsonl(&d.join(GENERATED), &rows)?;
        write_samples(&d.join(GENERATED_SAMPLES), &generated.samples, SampleSource::Generated)?;
        write_json(
            &d.join(GENERATION),
            &serde_json::json!({ "generator_pairs": generated.generator_pairs }),
        )
    }

    /// Generated data of `iteration`, or `None` if the generation stage has
    /// not written it.
    pub fn load_generated(&self, iteration: usize) -> Result<Option<GeneratedData>> {
        let d = self.stage_dir(iteration);
        if !d.join(GENERATION).exists() {
            return Ok(None);
        }
        let summary: serde_json::Value = read_json(&d.join(GENERATION))?;
        let generator_pairs = summary["generator_pairs"]
            .as_u64()
            .ok_or_else(|| Error::Invalid(format!("{}: missing generator_pairs", d.display())))?
            as usize;
        let pairs = read_jsonl::<GeneratedRow>(&d.join(GENERATED))?
            .into_iter()
            .map(|r| (r.pair, r.verdict))
            .collect();
        let samples = read_samples(&d.join(GENERATED_SAMPLES))?
            .into_iter()
            .map(|r| r.into_sample())
            .collect();
        Ok(Some(GeneratedData {
            generator_pairs,
            pairs,
            samples,
        }))
    }

    /// Writes the stage's checkpoint, generator, run file and, last, its report.
    pub fn save_trained(&self, state: &PipelineState, report: &IterationReport, run: &RunFile) -> Result<()> {
        let t = report.iteration;
        let d = self.make_stage_dir(t)?;
        save_checkpoint(&d.join(CHECKPOINT), &state.params, Some(&state.optimizer))?;
        state.generator.save(&d.join(GENERATOR))?;
        run.write_trec(&d.join(RUN), &format!("iter{t}"))?;
        write_json(&d.join(REPORT), report)
    }

    /// Path of the generator saved in a stage directory.
    pub fn generator_path(&self, iteration: usize) -> PathBuf {
        self.stage_dir(iteration).join(GENERATOR)
    }
}
