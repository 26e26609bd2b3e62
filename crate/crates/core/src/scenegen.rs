//! Procedural reaching scenarios, tool sampling, rasterization and balanced,
//! oracle-labelled datasets.
//!
//! Scenario families (workspace is the unit square, robot below the boundary):
//!
//! - `A`: open space; only the tool's reach matters.
//! - `B`: two walls leave a vertical corridor below the target; the tool must
//!   be thin enough to pass.
//! - `C`: the target sits just above a ledge that extends from the left edge
//!   past the target; only a hook coming up on the right and pointing back
//!   over the ledge reaches it.
//! - `D`: `C` with the open side chosen at random.
//! - `E`: corridor walls with the target above one wall: thin handle and a
//!   correctly oriented hook. Held out of training.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    feasible, make_tool_polygon, point_in_polygon, HookSide, OracleConfig, Polygon, Scenario,
    ScenarioType, ToolSpec, Vec2,
};
use crate::raster::{tool_pixel_center, workspace_pixel_center, Raster, TOOL_FRAME_SIZE};
use crate::seeds::{derive_seed, derived_rng, sha256_hex};

pub const TARGET_RADIUS: f64 = 0.02;
pub const HANDLE_LENGTH_RANGE: (f64, f64) = (0.15, 0.6);
pub const HANDLE_WIDTH_RANGE: (f64, f64) = (0.02, 0.1);
pub const HOOK_LENGTH_RANGE: (f64, f64) = (0.05, 0.25);
const LEDGE_THICKNESS: f64 = 0.04;
const SCENARIO_RETRIES: usize = 100;

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    rng.gen_range(lo..=hi)
}

/// Walls spanning the workspace on both sides of a corridor `[x0, x1]`.
fn corridor_walls(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Vec<Polygon>> {
    Ok(vec![Polygon::rect(0.0, y0, x0, y1)?, Polygon::rect(x1, y0, 1.0, y1)?])
}

fn mirror_scenario(s: Scenario) -> Result<Scenario> {
    let flip = |v: Vec2| Vec2::new(1.0 - v.x, v.y);
    let obstacles = s
        .obstacles
        .iter()
        .map(|o| Polygon::new(o.vertices().iter().rev().map(|&v| flip(v)).collect()))
        .collect::<Result<_>>()?;
    Ok(Scenario {
        target: flip(s.target),
        obstacles,
        ..s
    })
}

fn draw_scenario<R: Rng + ?Sized>(scn_type: ScenarioType, rng: &mut R) -> Result<Scenario> {
    let boundary_y = uniform(rng, (0.15, 0.3));
    let scenario = match scn_type {
        ScenarioType::A => Scenario {
            scn_type,
            boundary_y,
            target: Vec2::new(uniform(rng, (0.25, 0.75)), boundary_y + uniform(rng, (0.2, 0.55))),
            obstacles: vec![],
        },
        ScenarioType::B => {
            let tx = uniform(rng, (0.3, 0.7));
            let gap = uniform(rng, (0.03, 0.12));
            let y0 = boundary_y + uniform(rng, (0.05, 0.12));
            let y1 = y0 + uniform(rng, (0.1, 0.2));
            let ty = y1 + uniform(rng, (0.03, 0.1));
            Scenario {
                scn_type,
                boundary_y,
                target: Vec2::new(tx, ty),
                obstacles: corridor_walls(tx - gap / 2.0, tx + gap / 2.0, y0, y1)?,
            }
        }
        ScenarioType::C | ScenarioType::D => {
            let tx = uniform(rng, (0.25, 0.55));
            let overhang = uniform(rng, (0.08, 0.2));
            let top = boundary_y + uniform(rng, (0.12, 0.3));
            let clearance = uniform(rng, (0.03, 0.06));
            let s = Scenario {
                scn_type,
                boundary_y,
                target: Vec2::new(tx, top + clearance),
                obstacles: vec![Polygon::rect(0.0, top - LEDGE_THICKNESS, tx + overhang, top)?],
            };
            if scn_type == ScenarioType::D && rng.gen_bool(0.5) {
                mirror_scenario(s)?
            } else {
                s
            }
        }
        ScenarioType::E => {
            let cx = uniform(rng, (0.4, 0.65));
            let gap = uniform(rng, (0.05, 0.12));
            let y0 = boundary_y + uniform(rng, (0.05, 0.1));
            let y1 = y0 + uniform(rng, (0.1, 0.18));
            let offset = uniform(rng, (0.03, 0.1));
            let clearance = uniform(rng, (0.03, 0.06));
            let s = Scenario {
                scn_type,
                boundary_y,
                target: Vec2::new(cx - gap / 2.0 - offset, y1 + clearance),
                obstacles: corridor_walls(cx - gap / 2.0, cx + gap / 2.0, y0, y1)?,
            };
            if rng.gen_bool(0.5) {
                mirror_scenario(s)?
            } else {
                s
            }
        }
    };
    Ok(scenario)
}

/// Random scenario of the given family, resampled until it is valid.
pub fn sample_scenario<R: Rng + ?Sized>(scn_type: ScenarioType, rng: &mut R) -> Result<Scenario> {
    for _ in 0..SCENARIO_RETRIES {
        let s = draw_scenario(scn_type, rng)?;
        if s.validate().is_ok() {
            return Ok(s);
        }
    }
    Err(Error::RetryBudget(format!("no valid type {scn_type} scenario")))
}

/// Probability of drawing each tool kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindMix {
    pub stick: f64,
    pub hook: f64,
}

impl Default for KindMix {
    fn default() -> Self {
        Self {
            stick: 0.5,
            hook: 0.5,
        }
    }
}

impl KindMix {
    pub fn validate(&self) -> Result<()> {
        if self.stick < 0.0 || self.hook < 0.0 || ((self.stick + self.hook) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "kind mix must be non-negative and sum to 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn sample_tool<R: Rng + ?Sized>(rng: &mut R, mix: &KindMix) -> Result<ToolSpec> {
    mix.validate()?;
    let length = uniform(rng, HANDLE_LENGTH_RANGE);
    let width = uniform(rng, HANDLE_WIDTH_RANGE);
    let is_hook = rng.gen::<f64>() < mix.hook;
    if !is_hook {
        return Ok(ToolSpec::stick(length, width));
    }
    let hook = uniform(rng, (HOOK_LENGTH_RANGE.0.max(width), HOOK_LENGTH_RANGE.1));
    let side = if rng.gen_bool(0.5) {
        HookSide::Left
    } else {
        HookSide::Right
    };
    Ok(ToolSpec::hook(length, width, hook, side))
}

/// Three-channel task image: boundary band, target disk, obstacle fill.
pub fn rasterize_scenario(scenario: &Scenario, resolution: usize) -> Raster {
    let mut r = Raster::zeros(3, resolution, resolution);
    let px = 1.0 / resolution as f64;
    for row in 0..resolution {
        for col in 0..resolution {
            let c = workspace_pixel_center(row, col, resolution, resolution);
            // two rows straddling the boundary line
            if c.y > scenario.boundary_y - px && c.y <= scenario.boundary_y + px {
                r.set(0, row, col, 1.0);
            }
            if c.sub(scenario.target).norm() <= TARGET_RADIUS {
                r.set(1, row, col, 1.0);
            }
            if scenario.obstacles.iter().any(|o| point_in_polygon(c, o)) {
                r.set(2, row, col, 1.0);
            }
        }
    }
    r
}

/// Canonical-pose silhouette of the tool, its bounding box centred in the
/// frame.
pub fn rasterize_tool(spec: &ToolSpec, resolution: usize) -> Result<Raster> {
    let poly = make_tool_polygon(spec)?;
    let bb = poly.bbox();
    let half = TOOL_FRAME_SIZE / 2.0;
    let (w, h) = (bb.max.x - bb.min.x, bb.max.y - bb.min.y);
    if w > TOOL_FRAME_SIZE || h > TOOL_FRAME_SIZE {
        return Err(Error::ToolTooLarge(format!(
            "{w:.3} x {h:.3} exceeds the {TOOL_FRAME_SIZE} frame"
        )));
    }
    let centered = poly.translate(bb.center().scale(-1.0));
    let cb = centered.bbox();
    let mut r = Raster::zeros(1, resolution, resolution);
    for row in 0..resolution {
        for col in 0..resolution {
            let c = tool_pixel_center(row, col, resolution, resolution);
            if c.x.abs() > half || c.y.abs() > half {
                continue;
            }
            if c.x >= cb.min.x && c.x <= cb.max.x && c.y >= cb.min.y && c.y <= cb.max.y && point_in_polygon(c, &centered) {
                r.set(0, row, col, 1.0);
            }
        }
    }
    Ok(r)
}

/// Three candidate tools of which exactly one reaches the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Toolkit {
    pub tools: [ToolSpec; 3],
    pub feasible_index: usize,
}

/// Sample tools until one feasible and two infeasible are found, then place
/// the feasible one at a uniformly random position.
pub fn make_toolkit<R: Rng + ?Sized>(
    scenario: &Scenario,
    rng: &mut R,
    mix: &KindMix,
    oracle: &OracleConfig,
    max_attempts: usize,
) -> Result<Toolkit> {
    let mut good = None;
    let mut bad = Vec::with_capacity(2);
    for _ in 0..max_attempts {
        if good.is_some() && bad.len() == 2 {
            break;
        }
        let tool = sample_tool(rng, mix)?;
        if feasible(scenario, &tool, oracle)? {
            good.get_or_insert(tool);
        } else if bad.len() < 2 {
            bad.push(tool);
        }
    }
    let (Some(good), [b0, b1]) = (good, bad.as_slice()) else {
        return Err(Error::RetryBudget(format!(
            "toolkit for a type {} scenario after {max_attempts} draws",
            scenario.scn_type
        )));
    };
    let feasible_index = rng.gen_range(0..3);
    let mut others = [*b0, *b1].into_iter();
    let tools = std::array::from_fn(|i| {
        if i == feasible_index {
            good
        } else {
            others.next().expect("two infeasible tools")
        }
    });
    Ok(Toolkit {
        tools,
        feasible_index,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub resolution: usize,
    /// Instances per scenario type, indexed A..E.
    pub train_per_type: [usize; 5],
    pub validation_per_type: [usize; 5],
    pub seed: u64,
    pub oracle: OracleConfig,
    pub kind_mix: KindMix,
    /// Scenario/tool draws allowed per instance before giving up.
    pub max_attempts: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl DatasetConfig {
    pub fn desk() -> Self {
        Self {
            resolution: 64,
            train_per_type: [1000, 1000, 1000, 1000, 0],
            validation_per_type: [150; 5],
            seed: 0,
            oracle: OracleConfig::default(),
            kind_mix: KindMix::default(),
            max_attempts: 20_000,
        }
    }

    pub fn paper_scale() -> Self {
        Self {
            train_per_type: [4000, 4000, 4000, 4000, 0],
            validation_per_type: [500; 5],
            ..Self::desk()
        }
    }

    pub fn counts(&self, split: Split) -> &[usize; 5] {
        match split {
            Split::Train => &self.train_per_type,
            Split::Validation => &self.validation_per_type,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.oracle.validate()?;
        self.kind_mix.validate()?;
        for split in [Split::Train, Split::Validation] {
            if let Some(odd) = self.counts(split).iter().find(|&&c| c % 2 == 1) {
                return Err(Error::Config(format!(
                    "{} count {odd} is odd; label balance needs even counts",
                    split.name()
                )));
            }
        }
        if self.resolution < 8 {
            return Err(Error::Config("resolution must be at least 8".into()));
        }
        Ok(())
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub split: Split,
    pub scn_type: ScenarioType,
    pub label: u8,
    pub scenario: Scenario,
    pub tool: ToolSpec,
    pub task_path: String,
    pub tool_path: String,
    pub seed: u64,
    pub oracle_seed: u64,
    pub attempts: usize,
}

/// Dataset-level metadata written next to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub config: DatasetConfig,
    /// split -> type -> (instances, positives)
    pub counts: BTreeMap<String, BTreeMap<String, (usize, usize)>>,
    pub manifest_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub summary: DatasetSummary,
    pub records: Vec<InstanceRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SUMMARY_FILE: &str = "dataset.json";

/// Instance with its rasters loaded.
#[derive(Debug, Clone)]
pub struct Instance {
    pub record: InstanceRecord,
    pub task_raster: Raster,
    pub tool_raster: Raster,
}

fn instance_id(split: Split, t: ScenarioType, index: usize) -> String {
    format!("{}-{}-{index:05}", split.name(), t.letter())
}

/// Draw (scenario, tool) pairs from the instance's own stream until the
/// oracle label matches the slot's label. Even slots are positive.
fn generate_record(cfg: &DatasetConfig, split: Split, t: ScenarioType, index: usize) -> Result<InstanceRecord> {
    let id = instance_id(split, t, index);
    let seed = derive_seed(cfg.seed, &["instance", &id]);
    let mut rng = derived_rng(cfg.seed, &["instance", &id]);
    let want = index % 2 == 0;
    for attempt in 1..=cfg.max_attempts {
        let scenario = sample_scenario(t, &mut rng)?;
        let tool = sample_tool(&mut rng, &cfg.kind_mix)?;
        if feasible(&scenario, &tool, &cfg.oracle)? == want {
            return Ok(InstanceRecord {
                task_path: format!("rasters/{id}_task.png"),
                tool_path: format!("rasters/{id}_tool.pgm"),
                id,
                split,
                scn_type: t,
                label: want as u8,
                scenario,
                tool,
                seed,
                oracle_seed: cfg.oracle.seed,
                attempts: attempt,
            });
        }
    }
    Err(Error::RetryBudget(format!(
        "instance {id}: no {} pair in {} draws",
        if want { "feasible" } else { "infeasible" },
        cfg.max_attempts
    )))
}

fn manifest_bytes(records: &[InstanceRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Generate every split, write rasters and the manifest under `out_dir`.
pub fn generate_dataset(cfg: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let mut slots = Vec::new();
    for split in [Split::Train, Split::Validation] {
        for (t, &n) in ScenarioType::ALL.iter().zip(cfg.counts(split)) {
            slots.extend((0..n).map(|i| (split, *t, i)));
        }
    }
    let records = slots
        .par_iter()
        .map(|&(split, t, i)| generate_record(cfg, split, t, i))
        .collect::<Result<Vec<_>>>()?;

    fs::create_dir_all(out_dir.join("rasters"))?;
    records.par_iter().try_for_each(|r| -> Result<()> {
        rasterize_scenario(&r.scenario, cfg.resolution).write_png(&out_dir.join(&r.task_path))?;
        rasterize_tool(&r.tool, cfg.resolution)?.write_pgm(&out_dir.join(&r.tool_path))?;
        Ok(())
    })?;

    let bytes = manifest_bytes(&records)?;
    fs::write(out_dir.join(MANIFEST_FILE), &bytes)?;
    let mut counts: BTreeMap<String, BTreeMap<String, (usize, usize)>> = BTreeMap::new();
    for r in &records {
        let e = counts
            .entry(r.split.name().to_string())
            .or_default()
            .entry(r.scn_type.to_string())
            .or_default();
        e.0 += 1;
        e.1 += r.label as usize;
    }
    let summary = DatasetSummary {
        config: cfg.clone(),
        counts,
        manifest_sha256: sha256_hex(&bytes),
    };
    let mut w = BufWriter::new(fs::File::create(out_dir.join(SUMMARY_FILE))?);
    serde_json::to_writer_pretty(&mut w, &summary)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(DatasetManifest { summary, records })
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let summary: DatasetSummary =
        serde_json::from_reader(BufReader::new(fs::File::open(dir.join(SUMMARY_FILE))?))?;
    let mut records = Vec::new();
    for line in BufReader::new(fs::File::open(dir.join(MANIFEST_FILE))?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            records.push(serde_json::from_str(&line)?);
        }
    }
    Ok(DatasetManifest { summary, records })
}

/// Load the rasters of every record in `split`.
pub fn load_split(dir: &Path, manifest: &DatasetManifest, split: Split) -> Result<Vec<Instance>> {
    manifest
        .records
        .par_iter()
        .filter(|r| r.split == split)
        .map(|r| {
            Ok(Instance {
                task_raster: Raster::read_png(&dir.join(&r.task_path))?,
                tool_raster: Raster::read_pgm(&dir.join(&r.tool_path))?,
                record: r.clone(),
            })
        })
        .collect()
}

pub fn dataset_dir_exists(dir: &Path) -> bool {
    dir.join(MANIFEST_FILE).is_file() && dir.join(SUMMARY_FILE).is_file()
}

/// Scenarios that admit at least one feasible tool from the sampler, used as
/// evaluation tasks.
pub fn sample_solvable_scenario<R: Rng + ?Sized>(
    t: ScenarioType,
    rng: &mut R,
    mix: &KindMix,
    oracle: &OracleConfig,
    max_attempts: usize,
) -> Result<(Scenario, Toolkit)> {
    for _ in 0..SCENARIO_RETRIES {
        let s = sample_scenario(t, rng)?;
        if let Ok(kit) = make_toolkit(&s, rng, mix, oracle, max_attempts) {
            return Ok((s, kit));
        }
    }
    Err(Error::RetryBudget(format!("no solvable type {t} scenario")))
}

pub fn shuffle_indices<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

pub fn path_in(dir: &Path, rel: &str) -> PathBuf {
    dir.join(rel)
}
