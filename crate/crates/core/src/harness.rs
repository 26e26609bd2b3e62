//! Experiment orchestration: run profiles and configuration, evaluation task
//! sets, tool-selection and imagination evaluations, confidence intervals and
//! report files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{feasible, OracleConfig, Scenario, ScenarioType, ToolSpec};
use crate::imagine::{evaluate_imagined, imagine, random_walk, warm_start_pick, write_strip, ImagineConfig, Method, TrajectoryLog};
use crate::nets::{
    load_checkpoint, pretrain, save_checkpoint, train_task_phase, ArchConfig, Examples, Mode, ModelParams, Phase,
    TaskPhaseOutcome, TrainConfig,
};
use crate::raster::Raster;
use crate::scenegen::{
    dataset_dir_exists, generate_dataset, load_split, rasterize_scenario, rasterize_tool, read_manifest,
    sample_solvable_scenario, DatasetConfig, DatasetManifest, KindMix, Split, Toolkit,
};
use crate::seeds::{derive_seed, derived_rng, sha256_hex};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

/// Mean and normal-approximation 95% half-width, both in percentage points.
pub fn confidence_interval(successes: usize, n: usize) -> Result<(f64, f64)> {
    if n == 0 || successes > n {
        return Err(Error::Config(format!("confidence interval of {successes}/{n}")));
    }
    let p = successes as f64 / n as f64;
    Ok((100.0 * p, 100.0 * Z_95 * (p * (1.0 - p) / n as f64).sqrt()))
}

/// Half-width for a mean already given in percent.
pub fn half_width_pct(mean_pct: f64, n: usize) -> f64 {
    let p = mean_pct / 100.0;
    100.0 * Z_95 * (p * (1.0 - p) / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    PaperScale,
    Desk,
    Ci,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_scale" | "paper-scale" => Ok(Profile::PaperScale),
            "desk" => Ok(Profile::Desk),
            "ci" => Ok(Profile::Ci),
            _ => Err(Error::Config(format!("unknown profile {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub selection_per_type: usize,
    pub imagination_per_type: usize,
    /// Tool draws allowed when building toolkits and warm starts.
    pub max_attempts: usize,
    /// Trajectories per (type, method) written as PNG strips.
    pub strips_per_type: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            selection_per_type: 100,
            imagination_per_type: 50,
            max_attempts: 5_000,
            strips_per_type: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/data`.
    pub dataset_path: Option<PathBuf>,
    /// Defaults to `<out_dir>/checkpoints/<mode>-best.ckpt`.
    pub task_driven_checkpoint: Option<PathBuf>,
    pub task_unaware_checkpoint: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub imagine: ImagineConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::profile(Profile::Desk)
    }
}

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        let base = Self {
            profile,
            seed: 0,
            out_dir: PathBuf::from("runs").join(match profile {
                Profile::PaperScale => "paper_scale",
                Profile::Desk => "desk",
                Profile::Ci => "ci",
            }),
            dataset_path: None,
            task_driven_checkpoint: None,
            task_unaware_checkpoint: None,
            dataset: DatasetConfig::desk(),
            arch: ArchConfig::default(),
            train: TrainConfig::desk(),
            imagine: ImagineConfig::desk(),
            eval: EvalConfig::default(),
        };
        match profile {
            Profile::Desk => base,
            Profile::PaperScale => Self {
                dataset: DatasetConfig {
                    resolution: 128,
                    ..DatasetConfig::paper_scale()
                },
                arch: ArchConfig::paper_scale(),
                train: TrainConfig::default(),
                imagine: ImagineConfig::default(),
                eval: EvalConfig {
                    selection_per_type: 250,
                    imagination_per_type: 250,
                    ..EvalConfig::default()
                },
                ..base
            },
            Profile::Ci => Self {
                dataset: DatasetConfig {
                    resolution: 32,
                    train_per_type: [40, 40, 40, 40, 0],
                    validation_per_type: [10; 5],
                    ..DatasetConfig::desk()
                },
                arch: ArchConfig {
                    resolution: 32,
                    encoder_channels: vec![4, 8, 16],
                    d_g: 16,
                    d_t: 16,
                    classifier_hidden: vec![32, 16],
                    decoder_hidden: vec![64, 256],
                    ..ArchConfig::default()
                },
                train: TrainConfig {
                    pretrain_steps: 40,
                    task_steps: 40,
                    validate_every: 20,
                    log_every: 0,
                    ..TrainConfig::desk()
                },
                imagine: ImagineConfig {
                    max_steps: 60,
                    snapshot_every: 20,
                    ..ImagineConfig::desk()
                },
                eval: EvalConfig {
                    selection_per_type: 4,
                    imagination_per_type: 2,
                    max_attempts: 2_000,
                    strips_per_type: 1,
                },
                ..base
            },
        }
    }

    /// Profile defaults overlaid with the keys present in a TOML document.
    pub fn from_toml(profile: Profile, text: &str) -> Result<Self> {
        let overlay: toml::Value = toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        let mut base = toml::Value::try_from(Self::profile(profile)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, overlay);
        base.try_into().map_err(|e: toml::de::Error| Error::Config(format!("config: {e}")))
    }

    pub fn load(profile: Profile, path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_toml(profile, &fs::read_to_string(p)?),
            None => Ok(Self::profile(profile)),
        }
    }

    /// Use `seed` as the master seed for data generation and training.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.dataset.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.arch.validate()?;
        self.train.validate()?;
        self.imagine.validate()?;
        if self.arch.resolution != self.dataset.resolution {
            return Err(Error::Config(format!(
                "network resolution {} differs from dataset resolution {}",
                self.arch.resolution, self.dataset.resolution
            )));
        }
        Ok(())
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.dataset_path.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.out_dir.join("checkpoints")
    }

    pub fn checkpoint_path(&self, mode: Mode) -> PathBuf {
        let given = match mode {
            Mode::TaskDriven => &self.task_driven_checkpoint,
            Mode::TaskUnaware => &self.task_unaware_checkpoint,
        };
        given
            .clone()
            .unwrap_or_else(|| self.checkpoint_dir().join(format!("{}-best.ckpt", mode.name())))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out_dir.join("report")
    }

    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&serde_json::to_vec(self)?))
    }
}

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Generate the dataset unless a manifest already exists at the configured
/// path.
pub fn ensure_dataset(cfg: &RunConfig) -> Result<DatasetManifest> {
    let dir = cfg.dataset_dir();
    if dataset_dir_exists(&dir) {
        let m = read_manifest(&dir)?;
        if m.summary.config != cfg.dataset {
            return Err(Error::Config(format!(
                "dataset at {} was generated with a different configuration",
                dir.display()
            )));
        }
        return Ok(m);
    }
    generate_dataset(&cfg.dataset, &dir)
}

pub struct TrainingData {
    pub train: Examples,
    pub validation: Examples,
}

pub fn load_training_data(cfg: &RunConfig) -> Result<TrainingData> {
    let dir = cfg.dataset_dir();
    if !dataset_dir_exists(&dir) {
        return Err(Error::Config(format!("no dataset at {}", dir.display())));
    }
    let m = read_manifest(&dir)?;
    let res = cfg.arch.resolution;
    Ok(TrainingData {
        train: Examples::from_instances(&load_split(&dir, &m, Split::Train)?, res)?,
        validation: Examples::from_instances(&load_split(&dir, &m, Split::Validation)?, res)?,
    })
}

/// Phase 1 is shared by both modes: it depends only on the seed, the
/// architecture and the silhouettes. The result is cached next to the
/// task-phase checkpoints.
pub fn pretrained_model(cfg: &RunConfig, data: &TrainingData) -> Result<(ModelParams<f32>, Vec<f32>)> {
    let path = cfg.checkpoint_dir().join("pretrained.ckpt");
    if path.is_file() {
        let ck = load_checkpoint(&path)?;
        if ck.params.arch == cfg.arch && ck.params.phase == Phase::Pretrained && ck.params.step == cfg.train.pretrain_steps as u64 {
            log::info!("reusing pretrained weights from {}", path.display());
            return Ok((ck.params, Vec::new()));
        }
    }
    let mut params = ModelParams::init(&cfg.arch, &mut derived_rng(cfg.train.seed, &["init"]))?;
    let losses = pretrain(&mut params, &data.train, &cfg.train)?;
    fs::create_dir_all(cfg.checkpoint_dir())?;
    save_checkpoint(&path, &params, None)?;
    Ok((params, losses))
}

/// Train the requested modes from the shared pretrained weights and write
/// each selected checkpoint to its configured path.
pub fn train_models(cfg: &RunConfig, modes: &[Mode]) -> Result<Vec<TaskPhaseOutcome>> {
    cfg.validate()?;
    let data = load_training_data(cfg)?;
    let (pre, _) = pretrained_model(cfg, &data)?;
    let mut out = Vec::new();
    for &mode in modes {
        let dir = cfg.checkpoint_dir().join(mode.name());
        let outcome = train_task_phase(&pre, &data.train, &data.validation, &cfg.train, mode, Some(&dir))?;
        let best = &outcome.checkpoints[outcome.best_index];
        log::info!(
            "{}: selected step {} with validation L_task {:.5}",
            mode.name(),
            best.step,
            best.val_task_loss
        );
        save_checkpoint(&cfg.checkpoint_path(mode), &outcome.best, Some(best.val_task_loss))?;
        out.push(outcome);
    }
    Ok(out)
}

pub fn load_model(cfg: &RunConfig, mode: Mode) -> Result<ModelParams<f32>> {
    let path = cfg.checkpoint_path(mode);
    if !path.is_file() {
        return Err(Error::Config(format!("missing {} checkpoint {}", mode.name(), path.display())));
    }
    Ok(load_checkpoint(&path)?.params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTask {
    pub id: String,
    pub scenario: Scenario,
    pub toolkit: Toolkit,
}

/// Selection task `index` of type `t`, reproducible from the seed alone.
pub fn selection_task(
    seed: u64,
    t: ScenarioType,
    index: usize,
    mix: &KindMix,
    oracle: &OracleConfig,
    max_attempts: usize,
) -> Result<SelectionTask> {
    let id = format!("select-{}-{index:05}", t.letter());
    let mut rng = derived_rng(seed, &["eval", &id]);
    let (scenario, toolkit) = sample_solvable_scenario(t, &mut rng, mix, oracle, max_attempts)?;
    Ok(SelectionTask { id, scenario, toolkit })
}

/// `per_type` toolkit tasks for each scenario type, each from its own
/// derived seed.
pub fn selection_tasks(
    seed: u64,
    per_type: usize,
    mix: &KindMix,
    oracle: &OracleConfig,
    max_attempts: usize,
) -> Result<Vec<SelectionTask>> {
    let keys: Vec<(ScenarioType, usize)> =
        ScenarioType::ALL.iter().flat_map(|&t| (0..per_type).map(move |i| (t, i))).collect();
    keys.par_iter()
        .map(|&(t, i)| selection_task(seed, t, i, mix, oracle, max_attempts))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImaginationTask {
    pub id: String,
    pub scenario: Scenario,
    /// Infeasible starting tool shared by every method.
    pub warm_start: ToolSpec,
}

/// Imagination instance `index` of type `t`: a solvable scenario and an
/// infeasible warm-start tool.
pub fn imagination_task(
    seed: u64,
    t: ScenarioType,
    index: usize,
    mix: &KindMix,
    oracle: &OracleConfig,
    max_attempts: usize,
) -> Result<ImaginationTask> {
    let id = format!("imagine-{}-{index:05}", t.letter());
    let mut rng = derived_rng(seed, &["eval", &id]);
    let (scenario, _) = sample_solvable_scenario(t, &mut rng, mix, oracle, max_attempts)?;
    let warm_start = warm_start_pick(&scenario, &mut derived_rng(seed, &["warm_start", &id]), mix, oracle, max_attempts)?;
    Ok(ImaginationTask { id, scenario, warm_start })
}

pub fn imagination_tasks(
    seed: u64,
    per_type: usize,
    mix: &KindMix,
    oracle: &OracleConfig,
    max_attempts: usize,
) -> Result<Vec<ImaginationTask>> {
    let keys: Vec<(ScenarioType, usize)> =
        ScenarioType::ALL.iter().flat_map(|&t| (0..per_type).map(move |i| (t, i))).collect();
    keys.par_iter()
        .map(|&(t, i)| imagination_task(seed, t, i, mix, oracle, max_attempts))
        .collect()
}

/// Outcome of one evaluated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceOutcome {
    pub id: String,
    pub scn_type: ScenarioType,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub experiment: String,
    pub method: String,
    /// Scenario letter or `total`.
    pub scn: String,
    pub n: usize,
    pub successes: usize,
    pub mean_pct: Option<f64>,
    pub ci_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub experiment: String,
    pub method: String,
    pub outcomes: Vec<InstanceOutcome>,
}

impl EvalResult {
    pub fn counts(&self, t: Option<ScenarioType>) -> (usize, usize) {
        let sel = self.outcomes.iter().filter(|o| t.map_or(true, |t| o.scn_type == t));
        sel.fold((0, 0), |(n, s), o| (n + 1, s + o.success as usize))
    }

    /// One row per scenario type, then the total.
    pub fn rows(&self) -> Vec<EvalRow> {
        let row = |scn: String, (n, successes): (usize, usize)| {
            let ci = confidence_interval(successes, n).ok();
            EvalRow {
                experiment: self.experiment.clone(),
                method: self.method.clone(),
                scn,
                n,
                successes,
                mean_pct: ci.map(|c| c.0),
                ci_pct: ci.map(|c| c.1),
            }
        };
        let mut rows: Vec<EvalRow> = ScenarioType::ALL
            .iter()
            .map(|&t| row(t.to_string(), self.counts(Some(t))))
            .collect();
        rows.push(row("total".into(), self.counts(None)));
        rows
    }

    pub fn accuracy(&self, t: Option<ScenarioType>) -> f64 {
        let (n, s) = self.counts(t);
        if n == 0 {
            f64::NAN
        } else {
            s as f64 / n as f64
        }
    }
}

/// Scores the three candidate tools of a selection task; higher is better.
pub trait ToolScorer: Sync {
    fn scores(&self, task: &SelectionTask, task_raster: &Raster, tools: &[Raster]) -> Result<Vec<f64>>;
}

impl ToolScorer for ModelParams<f32> {
    fn scores(&self, _: &SelectionTask, task_raster: &Raster, tools: &[Raster]) -> Result<Vec<f64>> {
        let z_g = self.task_encode(task_raster)?;
        let z_t = self.tool_encode_batch(&tools.iter().collect::<Vec<_>>())?;
        let probs = self.class_probs(&vec![z_g; tools.len()], &z_t)?;
        Ok(probs.into_iter().map(|p| p[1]).collect())
    }
}

/// A task is solved when the single highest score belongs to the feasible
/// tool; ties count as failures. Toolkits that do not contain exactly one
/// oracle-feasible tool are skipped.
pub fn tool_selection_eval(
    scorer: &dyn ToolScorer,
    tasks: &[SelectionTask],
    oracle: &OracleConfig,
    resolution: usize,
    method: &str,
) -> Result<EvalResult> {
    let outcomes = tasks
        .par_iter()
        .map(|task| -> Result<Option<InstanceOutcome>> {
            let labels = task
                .toolkit
                .tools
                .iter()
                .map(|t| feasible(&task.scenario, t, oracle))
                .collect::<Result<Vec<_>>>()?;
            if labels.iter().filter(|&&b| b).count() != 1 || !labels[task.toolkit.feasible_index] {
                log::warn!("skipping {}: toolkit does not have exactly one feasible tool", task.id);
                return Ok(None);
            }
            let task_raster = rasterize_scenario(&task.scenario, resolution);
            let tools = task
                .toolkit
                .tools
                .iter()
                .map(|t| rasterize_tool(t, resolution))
                .collect::<Result<Vec<_>>>()?;
            let scores = scorer.scores(task, &task_raster, &tools)?;
            let best = scores[task.toolkit.feasible_index];
            let unique_max = scores
                .iter()
                .enumerate()
                .all(|(i, &s)| i == task.toolkit.feasible_index || s < best);
            Ok(Some(InstanceOutcome {
                id: task.id.clone(),
                scn_type: task.scenario.scn_type,
                success: unique_max,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalResult {
        experiment: "selection".into(),
        method: method.into(),
        outcomes: outcomes.into_iter().flatten().collect(),
    })
}

pub struct ImaginationModels<'a> {
    pub task_driven: &'a ModelParams<f32>,
    pub task_unaware: &'a ModelParams<f32>,
}

/// Per method evaluation results (in [`Method::ALL`] order) and every
/// trajectory, ordered by instance then method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImaginationReport {
    pub results: Vec<EvalResult>,
    pub logs: Vec<TrajectoryLog>,
}

/// For every task: the shared warm start is imagined under both models, and
/// randomly walked in the task-driven latent space; each decoded silhouette
/// is checked with the raster oracle.
pub fn imagination_eval(
    models: &ImaginationModels<'_>,
    tasks: &[ImaginationTask],
    cfg: &ImagineConfig,
    oracle: &OracleConfig,
    seed: u64,
) -> Result<ImaginationReport> {
    let res = models.task_driven.arch.resolution;
    let per_task = tasks
        .par_iter()
        .map(|task| -> Result<Vec<TrajectoryLog>> {
            let task_raster = rasterize_scenario(&task.scenario, res);
            let tool = rasterize_tool(&task.warm_start, res)?;
            let mut logs = Vec::with_capacity(3);
            for method in Method::ALL {
                let mut log = match method {
                    Method::RandomWalk => {
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[&task.id, method.name()]));
                        random_walk(models.task_driven, &task_raster, &tool, cfg, &task.id, &mut rng)?
                    }
                    Method::TaskUnaware => imagine(models.task_unaware, &task_raster, &tool, cfg, &task.id, method)?,
                    Method::TaskDriven => imagine(models.task_driven, &task_raster, &tool, cfg, &task.id, method)?,
                };
                evaluate_imagined(&mut log, &task.scenario, oracle, cfg.binarize_threshold)?;
                logs.push(log);
            }
            Ok(logs)
        })
        .collect::<Result<Vec<_>>>()?;
    let results = Method::ALL
        .iter()
        .enumerate()
        .map(|(m, method)| EvalResult {
            experiment: "imagination".into(),
            method: method.name().into(),
            outcomes: tasks
                .iter()
                .zip(&per_task)
                .map(|(task, logs)| InstanceOutcome {
                    id: task.id.clone(),
                    scn_type: task.scenario.scn_type,
                    success: logs[m].succeeded(),
                })
                .collect(),
        })
        .collect();
    Ok(ImaginationReport {
        results,
        logs: per_task.into_iter().flatten().collect(),
    })
}

/// CSV form of an [`EvalRow`]: percentages rounded to one decimal, empty
/// when there were no instances.
#[derive(Serialize)]
struct CsvRow<'a> {
    experiment: &'a str,
    method: &'a str,
    scn: &'a str,
    n: usize,
    successes: usize,
    mean_pct: String,
    ci_pct: String,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.1}"))
}

/// Long-format table: one row per (experiment, method, scenario type or total).
pub fn results_csv(results: &[EvalResult]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["experiment", "method", "scn", "n", "successes", "mean_pct", "ci_pct"])
        .expect("writing to memory");
    for r in results.iter().flat_map(EvalResult::rows) {
        w.serialize(CsvRow {
            experiment: &r.experiment,
            method: &r.method,
            scn: &r.scn,
            n: r.n,
            successes: r.successes,
            mean_pct: fmt_opt(r.mean_pct),
            ci_pct: fmt_opt(r.ci_pct),
        })
        .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 fields")
}

/// Identifies the inputs of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub seed: u64,
    pub profile: Profile,
    /// Checkpoint file name and SHA-256 per mode.
    pub checkpoints: BTreeMap<String, String>,
    pub files: Vec<String>,
}

/// Write `results.csv`, trajectory records, snapshot strips for the first
/// `strips_per_type` instances of each type, and `run.json`.
pub fn emit_report(
    cfg: &RunConfig,
    results: &[EvalResult],
    imagination: Option<(&ImaginationReport, &ImaginationModels<'_>)>,
    out_dir: &Path,
) -> Result<RunManifest> {
    if results.is_empty() {
        return Err(Error::Config("no results to report".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut files = vec!["results.csv".to_string()];
    fs::write(out_dir.join("results.csv"), results_csv(results))?;
    if let Some((report, models)) = imagination {
        let mut jsonl = Vec::new();
        for log in &report.logs {
            serde_json::to_writer(&mut jsonl, log)?;
            jsonl.push(b'\n');
        }
        fs::write(out_dir.join("trajectories.jsonl"), jsonl)?;
        files.push("trajectories.jsonl".into());
        let grid_dir = out_dir.join("grids");
        fs::create_dir_all(&grid_dir)?;
        let mut per_type: BTreeMap<(String, Method), usize> = BTreeMap::new();
        for log in &report.logs {
            let t = log.instance_id.split('-').nth(1).unwrap_or("?").to_string();
            let seen = per_type.entry((t, log.method)).or_default();
            if *seen >= cfg.eval.strips_per_type {
                continue;
            }
            *seen += 1;
            let params = match log.method {
                Method::TaskUnaware => models.task_unaware,
                _ => models.task_driven,
            };
            let name = format!("{}_{}.png", log.instance_id, log.method.name());
            write_strip(params, log, &grid_dir.join(&name))?;
            files.push(format!("grids/{name}"));
        }
    }
    let mut checkpoints = BTreeMap::new();
    for mode in Mode::ALL {
        let p = cfg.checkpoint_path(mode);
        if let Ok(bytes) = fs::read(&p) {
            checkpoints.insert(mode.name().to_string(), format!("{} {}", p.display(), sha256_hex(&bytes)));
        }
    }
    let manifest = RunManifest {
        config_sha256: cfg.hash()?,
        seed: cfg.seed,
        profile: cfg.profile,
        checkpoints,
        files,
    };
    fs::write(out_dir.join("run.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Parse a `results.csv` back into rows.
pub fn read_results_csv(text: &str) -> Result<Vec<EvalRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<EvalRow>, _>>()
        .map_err(|e| Error::Config(format!("results.csv: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// (scenario, column, printed mean, printed half-width, N)
    const PRINTED: [(&str, &str, f64, f64, usize); 12] = [
        ("A", "selection task-driven", 90.8, 3.6, 250),
        ("A", "selection task-unaware", 88.8, 3.9, 250),
        ("A", "imagination random walk", 3.6, 2.3, 250),
        ("A", "imagination task-unaware", 55.6, 6.2, 250),
        ("A", "imagination task-driven", 96.4, 2.3, 250),
        ("total", "imagination random walk", 9.8, 1.7, 1250),
        ("total", "imagination task-unaware", 63.6, 2.7, 1250),
        ("total", "imagination task-driven", 83.8, 2.0, 1250),
        ("total", "selection task-driven", 94.3, 1.3, 1250),
        ("total", "selection task-unaware", 93.1, 1.4, 1250),
        ("E", "selection task-driven", 87.6, 4.1, 250),
        ("B", "imagination task-driven", 90.8, 3.6, 250),
    ];

    #[test]
    fn interval_basics() {
        assert_eq!(confidence_interval(0, 10).unwrap(), (0.0, 0.0));
        assert_eq!(confidence_interval(10, 10).unwrap(), (100.0, 0.0));
        assert!(confidence_interval(0, 0).is_err());
        assert!(confidence_interval(3, 2).is_err());
        let (m, h) = confidence_interval(227, 250).unwrap();
        assert!((m - 90.8).abs() < 1e-9);
        assert!((h - 3.6).abs() <= 0.1 + 1e-9, "{h}");
    }

    #[test]
    fn interval_matches_independent_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let n = rng.gen_range(1..5000usize);
            let s = rng.gen_range(0..=n);
            let p = s as f64 / n as f64;
            let var = p * (1.0 - p) / n as f64;
            let (m, h) = confidence_interval(s, n).unwrap();
            assert!((m - 100.0 * p).abs() < 1e-9);
            assert!((h - 196.0 * var.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn printed_half_widths_are_normal_intervals() {
        for (scn, col, mean, half, n) in PRINTED {
            let h = half_width_pct(mean, n);
            assert!((h - half).abs() <= 0.1 + 1e-9, "{scn} {col}: {h:.3} vs {half}");
        }
    }

    struct OracleScorer;
    impl ToolScorer for OracleScorer {
        fn scores(&self, t: &SelectionTask, _: &Raster, _: &[Raster]) -> Result<Vec<f64>> {
            let o = OracleConfig::default();
            t.toolkit
                .tools
                .iter()
                .map(|tool| feasible(&t.scenario, tool, &o).map(|b| b as u8 as f64))
                .collect()
        }
    }

    struct RandomScorer;
    impl ToolScorer for RandomScorer {
        fn scores(&self, t: &SelectionTask, _: &Raster, _: &[Raster]) -> Result<Vec<f64>> {
            let mut rng = derived_rng(1, &[&t.id]);
            Ok((0..3).map(|_| rng.gen::<f64>()).collect())
        }
    }

    struct ConstantScorer;
    impl ToolScorer for ConstantScorer {
        fn scores(&self, _: &SelectionTask, _: &Raster, _: &[Raster]) -> Result<Vec<f64>> {
            Ok(vec![0.5; 3])
        }
    }

    #[test]
    fn selection_reference_scorers() {
        let oracle = OracleConfig::default();
        let tasks = selection_tasks(4, 40, &KindMix::default(), &oracle, 5000).unwrap();
        assert_eq!(tasks.len(), 200);
        let perfect = tool_selection_eval(&OracleScorer, &tasks, &oracle, 32, "oracle").unwrap();
        assert_eq!(perfect.counts(None), (200, 200));
        let ties = tool_selection_eval(&ConstantScorer, &tasks, &oracle, 32, "constant").unwrap();
        assert_eq!(ties.counts(None).1, 0);
        let random = tool_selection_eval(&RandomScorer, &tasks, &oracle, 32, "random").unwrap();
        let acc = random.accuracy(None);
        let sd = (1.0 / 3.0 * 2.0 / 3.0 / 200.0f64).sqrt();
        assert!((acc - 1.0 / 3.0).abs() < 3.0 * sd, "{acc}");

        let rows = perfect.rows();
        assert_eq!(rows.len(), 6);
        let sum: usize = rows[..5].iter().map(|r| r.n).sum();
        assert_eq!(sum, rows[5].n);
    }

    #[test]
    fn csv_layout_and_round_trip() {
        let mk = |exp: &str, m: &str| EvalResult {
            experiment: exp.into(),
            method: m.into(),
            outcomes: ScenarioType::ALL
                .iter()
                .flat_map(|&t| {
                    (0..4).map(move |i| InstanceOutcome {
                        id: format!("{t}{i}"),
                        scn_type: t,
                        success: i % 2 == 0,
                    })
                })
                .collect(),
        };
        let results = vec![
            mk("selection", "task_unaware"),
            mk("selection", "task_driven"),
            mk("imagination", "random_walk"),
            mk("imagination", "task_unaware"),
            mk("imagination", "task_driven"),
        ];
        let csv = results_csv(&results);
        assert_eq!(csv, results_csv(&results));
        let rows = read_results_csv(&csv).unwrap();
        assert_eq!(rows.len(), 6 * 5);
        assert_eq!(rows[5].scn, "total");
        assert_eq!((rows[5].n, rows[5].successes), (20, 10));
        assert_eq!(rows[5].mean_pct, Some(50.0));
    }

    #[test]
    fn toml_overlay_keeps_profile_defaults() {
        let cfg = RunConfig::from_toml(
            Profile::Desk,
            "seed = 7\n[train]\ntask_steps = 10\n[dataset]\nvalidation_per_type = [2, 2, 2, 2, 2]\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.task_steps, 10);
        assert_eq!(cfg.train.pretrain_steps, 2_000);
        assert_eq!(cfg.dataset.validation_per_type, [2; 5]);
        assert_eq!(cfg.dataset.train_per_type, [1000, 1000, 1000, 1000, 0]);
        assert!(RunConfig::from_toml(Profile::Desk, "train = 3").is_err());
        for p in [Profile::Ci, Profile::Desk, Profile::PaperScale] {
            RunConfig::profile(p).validate().unwrap();
        }
    }

    #[test]
    fn profile_sizes() {
        let full = RunConfig::profile(Profile::PaperScale);
        assert_eq!(full.dataset.train_per_type, [4000, 4000, 4000, 4000, 0]);
        assert_eq!(full.dataset.validation_per_type, [500; 5]);
        assert_eq!((full.train.pretrain_steps, full.train.task_steps), (10_000, 5_000));
        assert_eq!(full.imagine.max_steps, 10_000);
        let desk = RunConfig::profile(Profile::Desk);
        assert_eq!((desk.train.pretrain_steps, desk.train.task_steps, desk.train.batch), (2_000, 1_000, 16));
        assert_eq!((desk.eval.selection_per_type, desk.eval.imagination_per_type), (100, 50));
    }

    #[test]
    fn imagination_tasks_share_an_infeasible_warm_start() {
        let oracle = OracleConfig::default();
        let tasks = imagination_tasks(3, 6, &KindMix::default(), &oracle, 5000).unwrap();
        assert_eq!(tasks.len(), 30);
        for t in &tasks {
            assert!(!feasible(&t.scenario, &t.warm_start, &oracle).unwrap());
        }
        assert_eq!(tasks, imagination_tasks(3, 6, &KindMix::default(), &oracle, 5000).unwrap());
    }
}
