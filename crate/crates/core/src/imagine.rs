//! Tool imagination: gradient traversal of the tool latent toward predicted
//! success, the random-walk baseline, and feasibility checks of the decoded
//! silhouettes.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use revgrad::{Graph, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{feasible, raster_feasible, OracleConfig, RasterVerdict, Scenario, ToolSpec};
use crate::nets::{bind, Group, ModelParams, Phase};
use crate::raster::Raster;
use crate::scenegen::{sample_tool, KindMix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImagineConfig {
    /// Step size η.
    pub eta: f64,
    /// Maximum number of latent updates S.
    pub max_steps: usize,
    /// Stop once the success probability reaches γ.
    pub gamma: f64,
    pub snapshot_every: usize,
    pub binarize_threshold: f32,
    /// Add the loss gradient instead of subtracting it.
    pub literal_sign: bool,
    /// Multiplier on the random-walk variance `|g_k|`.
    pub walk_scale: f64,
}

impl Default for ImagineConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            max_steps: 10_000,
            gamma: 0.997,
            snapshot_every: 500,
            binarize_threshold: 0.5,
            literal_sign: false,
            walk_scale: 1.0,
        }
    }
}

impl ImagineConfig {
    pub fn desk() -> Self {
        Self {
            max_steps: 2_000,
            snapshot_every: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || self.max_steps == 0 || !(self.gamma > 0.5 && self.gamma < 1.0) || self.snapshot_every == 0 || !(self.walk_scale >= 0.0) {
            return Err(Error::Config(format!("invalid imagination config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    RandomWalk,
    TaskUnaware,
    TaskDriven,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::RandomWalk, Method::TaskUnaware, Method::TaskDriven];

    pub fn name(self) -> &'static str {
        match self {
            Method::RandomWalk => "random_walk",
            Method::TaskUnaware => "task_unaware",
            Method::TaskDriven => "task_driven",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Threshold,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub z_t: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub instance_id: String,
    pub method: Method,
    /// Success probability before each update, and after the last one.
    pub sigma: Vec<f64>,
    pub task_loss: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub stop_reason: StopReason,
    /// Number of latent updates applied.
    pub steps: usize,
    pub final_z: Vec<f32>,
    #[serde(skip)]
    pub final_raster: Option<Raster>,
    pub verdict: Option<RasterVerdict>,
}

impl TrajectoryLog {
    pub fn final_sigma(&self) -> f64 {
        *self.sigma.last().expect("a trajectory has at least one evaluation")
    }

    pub fn succeeded(&self) -> bool {
        self.verdict.is_some_and(RasterVerdict::is_feasible)
    }
}

/// Fixed context of one traversal: the task embedding and the classifier.
pub struct Traversal<'a> {
    params: &'a ModelParams<f32>,
    z_g: Vec<f32>,
}

/// Value of the success predictor at a latent point.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub sigma: f64,
    pub task_loss: f64,
    /// ∂L_task/∂z_T with the target fixed at success.
    pub grad: Vec<f32>,
}

impl<'a> Traversal<'a> {
    pub fn new(params: &'a ModelParams<f32>, task_raster: &Raster) -> Result<Self> {
        if params.phase != Phase::TaskTrained {
            return Err(Error::Untrained);
        }
        Ok(Self {
            z_g: params.task_encode(task_raster)?,
            params,
        })
    }

    pub fn z_g(&self) -> &[f32] {
        &self.z_g
    }

    pub fn probe(&self, z_t: &[f32]) -> Result<Probe> {
        let mut g = Graph::new();
        let b = bind(&mut g, self.params, &[Group::Classifier], &[]);
        let zg = g.constant(Tensor::new(vec![1, self.z_g.len()], self.z_g.clone())?);
        let zt = g.param(Tensor::new(vec![1, z_t.len()], z_t.to_vec())?);
        let logits = self.params.classifier_logits(&mut g, &b, zg, zt)?;
        let probs = g.softmax(logits)?;
        let sigma = g.value(probs).data()[1] as f64;
        let xent = g.softmax_xent(logits, &[1])?;
        let loss = g.mean(xent);
        g.backward(loss)?;
        Ok(Probe {
            sigma,
            task_loss: g.value(loss).item() as f64,
            grad: g.take_grad(zt),
        })
    }

    /// Iterate `update` from `z0` under the stop rules: evaluate σ, stop at
    /// γ or after `max_steps` updates, otherwise update and repeat.
    fn run(
        &self,
        z0: Vec<f32>,
        cfg: &ImagineConfig,
        id: &str,
        method: Method,
        mut update: impl FnMut(&mut [f32], &[f32]),
    ) -> Result<TrajectoryLog> {
        cfg.validate()?;
        let mut z = z0;
        let mut sigma = Vec::new();
        let mut task_loss = Vec::new();
        let mut snapshots = Vec::new();
        let mut step = 0;
        let stop_reason = loop {
            let p = self.probe(&z)?;
            if !p.sigma.is_finite() || p.grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged {
                    step: step as u64,
                    detail: format!("{} traversal of {id} left the finite range", method.name()),
                });
            }
            sigma.push(p.sigma);
            task_loss.push(p.task_loss);
            if step % cfg.snapshot_every == 0 {
                snapshots.push(Snapshot { step, z_t: z.clone() });
            }
            if p.sigma >= cfg.gamma {
                break StopReason::Threshold;
            }
            if step == cfg.max_steps {
                break StopReason::MaxSteps;
            }
            update(&mut z, &p.grad);
            step += 1;
        };
        let final_raster = Some(self.params.tool_decode(&z)?);
        Ok(TrajectoryLog {
            instance_id: id.to_string(),
            method,
            sigma,
            task_loss,
            snapshots,
            stop_reason,
            steps: step,
            final_z: z,
            final_raster,
            verdict: None,
        })
    }
}

/// Activation maximization: starting from the encoding of `init_tool`, step
/// `z_T` down the gradient of L_task toward success (or along it with
/// `literal_sign`).
pub fn imagine(
    params: &ModelParams<f32>,
    task_raster: &Raster,
    init_tool: &Raster,
    cfg: &ImagineConfig,
    id: &str,
    method: Method,
) -> Result<TrajectoryLog> {
    let t = Traversal::new(params, task_raster)?;
    let z0 = params.tool_encode(init_tool)?;
    let eta = if cfg.literal_sign { cfg.eta } else { -cfg.eta } as f32;
    t.run(z0, cfg, id, method, |z, g| {
        for (zi, gi) in z.iter_mut().zip(g) {
            *zi += eta * gi;
        }
    })
}

/// Random-walk baseline: each update adds Gaussian noise with zero mean and
/// per-coordinate variance `walk_scale · |g_k|`.
pub fn random_walk<R: Rng + ?Sized>(
    params: &ModelParams<f32>,
    task_raster: &Raster,
    init_tool: &Raster,
    cfg: &ImagineConfig,
    id: &str,
    rng: &mut R,
) -> Result<TrajectoryLog> {
    let t = Traversal::new(params, task_raster)?;
    let z0 = params.tool_encode(init_tool)?;
    t.run(z0, cfg, id, Method::RandomWalk, |z, g| random_walk_step(z, g, cfg.walk_scale, rng))
}

/// One random-walk update: `z_k += N(0, scale · |g_k|)`.
pub fn random_walk_step<R: Rng + ?Sized>(z: &mut [f32], grad: &[f32], scale: f64, rng: &mut R) {
    for (zi, gi) in z.iter_mut().zip(grad) {
        let std = (scale * gi.abs() as f64).sqrt();
        let n: f64 = rng.sample(StandardNormal);
        *zi += (std * n) as f32;
    }
}

/// Binarize the decoded silhouette and run the raster feasibility test; the
/// verdict is stored in the log.
pub fn evaluate_imagined(
    log: &mut TrajectoryLog,
    scenario: &Scenario,
    oracle: &OracleConfig,
    threshold: f32,
) -> Result<bool> {
    let raster = log
        .final_raster
        .as_ref()
        .ok_or_else(|| Error::Shape(format!("trajectory {} has no decoded raster", log.instance_id)))?;
    let verdict = raster_feasible(scenario, &raster.binarize(threshold).tool_pixels(), oracle)?;
    log.verdict = Some(verdict);
    Ok(verdict.is_feasible())
}

/// An oracle-infeasible tool to start imagination from.
pub fn warm_start_pick<R: Rng + ?Sized>(
    scenario: &Scenario,
    rng: &mut R,
    mix: &KindMix,
    oracle: &OracleConfig,
    max_attempts: usize,
) -> Result<ToolSpec> {
    for _ in 0..max_attempts {
        let tool = sample_tool(rng, mix)?;
        if !feasible(scenario, &tool, oracle)? {
            return Ok(tool);
        }
    }
    Err(Error::RetryBudget(format!(
        "no infeasible warm start for a type {} scenario in {max_attempts} draws",
        scenario.scn_type
    )))
}

/// Decoded silhouettes at every snapshot, side by side, followed by the final
/// decode when the last update is not itself a snapshot.
pub fn snapshot_strip(params: &ModelParams<f32>, log: &TrajectoryLog) -> Result<Raster> {
    let panels = log
        .snapshots
        .iter()
        .map(|s| params.tool_decode(&s.z_t))
        .collect::<Result<Vec<_>>>()?;
    let res = params.arch.resolution;
    let gap = 2;
    let width = panels.len() * (res + gap) - gap;
    let mut strip = Raster::zeros(1, res, width);
    for (i, p) in panels.iter().enumerate() {
        for r in 0..res {
            for c in 0..res {
                strip.set(0, r, i * (res + gap) + c, p.get(0, r, c));
            }
        }
    }
    Ok(strip)
}

pub fn write_strip(params: &ModelParams<f32>, log: &TrajectoryLog, path: &Path) -> Result<()> {
    snapshot_strip(params, log)?.write_png(path)
}
