use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use toolsynth::geometry::ScenarioType;
use toolsynth::harness::{
    emit_report, ensure_dataset, imagination_eval, imagination_task, imagination_tasks, load_model, results_csv,
    selection_tasks, tool_selection_eval, train_models, EvalResult, ImaginationModels, ImaginationReport, Profile,
    RunConfig,
};
use toolsynth::imagine::{evaluate_imagined, imagine, random_walk, write_strip, Method};
use toolsynth::nets::{miniature_grad_check, Mode};
use toolsynth::scenegen::{rasterize_scenario, rasterize_tool};
use toolsynth::seeds::derived_rng;

const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "toolsynth", version, about = "Tool selection and tool imagination in a task-aware latent space")]
struct Cli {
    /// TOML file overriding profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for data, training and evaluation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "desk")]
    profile: Profile,
    /// Restrict training or selection to one mode.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the labelled dataset (skipped if it already exists).
    GenData,
    /// Pretrain the tool autoencoder and train the task phase.
    Train,
    /// Tool-selection accuracy on freshly sampled toolkits.
    EvalSelect,
    /// Imagination success for every method on warm-started instances.
    EvalImagine,
    /// Imagine a tool for one instance and print its trajectory.
    Imagine {
        #[arg(long, default_value = "A")]
        scn: ScenarioType,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Check op and model gradients against central differences.
    GradCheck,
    /// Write results.csv, trajectories, strips and run.json.
    Report,
}

fn modes(cli: &Cli) -> Vec<Mode> {
    cli.mode.map_or_else(|| Mode::ALL.to_vec(), |m| vec![m])
}

fn print_rows(results: &[EvalResult]) {
    print!("{}", results_csv(results));
}

fn run_selection(cfg: &RunConfig, modes: &[Mode]) -> Result<Vec<EvalResult>> {
    let d = &cfg.dataset;
    let tasks = selection_tasks(cfg.seed, cfg.eval.selection_per_type, &d.kind_mix, &d.oracle, cfg.eval.max_attempts)?;
    let mut out = Vec::new();
    // task-unaware first, matching the column order of the results table
    for mode in [Mode::TaskUnaware, Mode::TaskDriven] {
        if !modes.contains(&mode) {
            continue;
        }
        let params = load_model(cfg, mode)?;
        out.push(tool_selection_eval(&params, &tasks, &d.oracle, cfg.arch.resolution, &mode.name().replace('-', "_"))?);
    }
    Ok(out)
}

fn run_imagination(cfg: &RunConfig) -> Result<ImaginationReport> {
    let d = &cfg.dataset;
    let td = load_model(cfg, Mode::TaskDriven)?;
    let tu = load_model(cfg, Mode::TaskUnaware)?;
    let tasks = imagination_tasks(cfg.seed, cfg.eval.imagination_per_type, &d.kind_mix, &d.oracle, cfg.eval.max_attempts)?;
    let models = ImaginationModels {
        task_driven: &td,
        task_unaware: &tu,
    };
    Ok(imagination_eval(&models, &tasks, &cfg.imagine, &d.oracle, cfg.seed)?)
}

fn write_json<T: serde::Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_vec(value)?).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<Option<T>> {
    if !path.is_file() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_slice(&fs::read(path)?)?))
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.profile, cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    let report_dir = cfg.report_dir();
    match &cli.command {
        Command::GenData => {
            let m = ensure_dataset(&cfg)?;
            println!("{}", serde_json::to_string(&m.summary)?);
        }
        Command::Train => {
            ensure_dataset(&cfg)?;
            for outcome in train_models(&cfg, &modes(cli))? {
                let best = &outcome.checkpoints[outcome.best_index];
                println!(
                    "{} best_step={} val_task_loss={:.6} checkpoint={}",
                    outcome.mode.name(),
                    best.step,
                    best.val_task_loss,
                    cfg.checkpoint_path(outcome.mode).display()
                );
            }
        }
        Command::EvalSelect => {
            let results = run_selection(&cfg, &modes(cli))?;
            write_json(&report_dir.join("selection.json"), &results)?;
            print_rows(&results);
        }
        Command::EvalImagine => {
            let report = run_imagination(&cfg)?;
            write_json(&report_dir.join("imagination.json"), &report)?;
            print_rows(&report.results);
        }
        Command::Imagine { scn, index } => {
            let d = &cfg.dataset;
            let task = imagination_task(cfg.seed, *scn, *index, &d.kind_mix, &d.oracle, cfg.eval.max_attempts)?;
            let td = load_model(&cfg, Mode::TaskDriven)?;
            let tu = load_model(&cfg, Mode::TaskUnaware)?;
            let res = cfg.arch.resolution;
            let task_raster = rasterize_scenario(&task.scenario, res);
            let tool = rasterize_tool(&task.warm_start, res)?;
            println!("instance {} warm start {:?}", task.id, task.warm_start);
            let dir = cfg.out_dir.join("imagine");
            fs::create_dir_all(&dir)?;
            for method in Method::ALL {
                let mut log = match method {
                    Method::RandomWalk => {
                        let mut rng = derived_rng(cfg.seed, &[&task.id, method.name()]);
                        random_walk(&td, &task_raster, &tool, &cfg.imagine, &task.id, &mut rng)?
                    }
                    Method::TaskUnaware => imagine(&tu, &task_raster, &tool, &cfg.imagine, &task.id, method)?,
                    Method::TaskDriven => imagine(&td, &task_raster, &tool, &cfg.imagine, &task.id, method)?,
                };
                let ok = evaluate_imagined(&mut log, &task.scenario, &d.oracle, cfg.imagine.binarize_threshold)?;
                for s in &log.snapshots {
                    println!(
                        "{:>12} step {:>6} sigma {:.5} task_loss {:.5}",
                        method.name(),
                        s.step,
                        log.sigma[s.step],
                        log.task_loss[s.step]
                    );
                }
                println!(
                    "{:>12} stop {:?} after {} steps, final sigma {:.5}, feasible {}",
                    method.name(),
                    log.stop_reason,
                    log.steps,
                    log.final_sigma(),
                    ok
                );
                let params = if method == Method::TaskUnaware { &tu } else { &td };
                write_strip(params, &log, &dir.join(format!("{}_{}.png", task.id, method.name())))?;
            }
        }
        Command::GradCheck => {
            let mut worst = 0.0f64;
            for (name, r) in revgrad::check_every_op(cfg.seed) {
                println!("op {name:<16} max_rel_err {:.3e}", r.max_rel_err);
                worst = worst.max(r.max_rel_err);
            }
            for (mode, r) in miniature_grad_check(cfg.seed)? {
                println!("model {:<14} max_rel_err {:.3e}", mode.name(), r.max_rel_err);
                worst = worst.max(r.max_rel_err);
            }
            if !(worst <= GRAD_TOLERANCE) {
                bail!("gradient check failed: max relative error {worst:.3e} > {GRAD_TOLERANCE:e}");
            }
        }
        Command::Report => {
            let selection: Vec<EvalResult> = match read_json(&report_dir.join("selection.json"))? {
                Some(r) => r,
                None => run_selection(&cfg, &Mode::ALL)?,
            };
            let imagination: ImaginationReport = match read_json(&report_dir.join("imagination.json"))? {
                Some(r) => r,
                None => run_imagination(&cfg)?,
            };
            let td = load_model(&cfg, Mode::TaskDriven)?;
            let tu = load_model(&cfg, Mode::TaskUnaware)?;
            let models = ImaginationModels {
                task_driven: &td,
                task_unaware: &tu,
            };
            let mut all = selection;
            all.extend(imagination.results.iter().cloned());
            let manifest = emit_report(&cfg, &all, Some((&imagination, &models)), &report_dir)?;
            print_rows(&all);
            println!("wrote {} files to {}", manifest.files.len() + 1, report_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "status": "error", "error": format!("{e:#}") });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
