//! `bdsense`: scene simulation, single-shot estimation, Monte Carlo sweeps,
//! Cramér-Rao bounds, operation counts and identifiability checks.
//!
//! Exit codes: 0 on success, 2 when the configuration is not identifiable,
//! 3 on I/O failures, 1 for anything else.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bdsense::crlb::{noise_variance_for_snr, scene_crlb};
use bdsense::harness::{
    check_identifiability, compare_architectures, complexity_estimate, run_estimators, run_sweep,
    write_outputs, PipelineOptions,
};
use bdsense::scenario::{stream_rng, synthesize, SceneRecord, Stream};
use bdsense::{Error, Estimator, ExperimentConfig, Result, RisMode, Scene};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(
    name = "bdsense",
    version,
    about = "BD-RIS bistatic multi-target sensing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Experiment configuration (JSON). Missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; also used as the scene seed by `simulate`, `estimate` and `crlb`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Comma-separated SNR grid in dB.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    snr: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated subset of ls, ksa, tendae_als, tendae_hosvd.
    #[arg(long, global = true, value_delimiter = ',')]
    estimators: Option<Vec<Estimator>>,
    /// `bd` or `diagonal`.
    #[arg(long = "ris-mode", global = true)]
    ris_mode: Option<RisMode>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw one scene and write its reproducibility record.
    Simulate,
    /// Run one estimator on one scene and print the report.
    Estimate {
        /// Scene record written by `simulate`; drawn from the config otherwise.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Monte Carlo sweep; writes metrics.csv and manifest.json.
    Sweep {
        /// Also run the diagonal architecture on the same draws.
        #[arg(long)]
        compare: bool,
    },
    /// Cramér-Rao bounds at the true parameters over the SNR grid.
    Crlb,
    /// Dominant operation counts per stage.
    Complexity {
        #[arg(long, default_value_t = bdsense::harness::DEFAULT_ALS_ITER)]
        als_iter: usize,
    },
    /// Identifiability report.
    Check,
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::from_json(&read(p)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.master_seed = s;
        cfg.scenario.seed = s;
    }
    if let Some(t) = c.trials {
        cfg.trials = t;
    }
    if let Some(s) = &c.snr {
        cfg.snr_grid_db = s.clone();
    }
    if let Some(o) = &c.out {
        cfg.outputs = o.to_string_lossy().into_owned();
    }
    if let Some(e) = &c.estimators {
        cfg.estimators = e.clone();
    }
    if let Some(m) = c.ris_mode {
        cfg.scenario.ris_mode = m;
    }
    Ok(cfg)
}

fn read(p: &Path) -> Result<String> {
    fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))
}

fn write(p: &Path, s: &str) -> Result<()> {
    if let Some(d) = p.parent() {
        fs::create_dir_all(d).map_err(|e| Error::Io(format!("{}: {e}", d.display())))?;
    }
    fs::write(p, s).map_err(|e| Error::Io(format!("{}: {e}", p.display())))
}

/// Writes `text` to `out/name`, or to stdout without `--out`.
fn emit(c: &Common, name: &str, text: &str) -> Result<()> {
    match &c.out {
        Some(dir) => write(&dir.join(name), text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("JSON values always serialise") + "\n"
}

/// Only an explicit `--snr` makes a single-scene draw noisy.
fn single_snr(c: &Common) -> Option<f64> {
    c.snr.as_ref().and_then(|s| s.first().copied())
}

fn simulate(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let scene = Scene::generate(&cfg.scenario)?;
    let rx = synthesize(
        &scene,
        single_snr(c),
        &mut stream_rng(scene.config.seed, Stream::Noise),
    );
    emit(
        c,
        "scene.json",
        &(SceneRecord::new(&scene, &rx).to_json()? + "\n"),
    )
}

fn estimate(c: &Common, scene_path: Option<&Path>) -> Result<()> {
    let cfg = load_config(c)?;
    let (scenario, snr) = match scene_path {
        Some(p) => {
            let rec = SceneRecord::from_json(&read(p)?)?;
            (rec.config, rec.snr_db)
        }
        None => (cfg.scenario.clone(), single_snr(c)),
    };
    let scene = Scene::generate(&scenario)?;
    let rx = synthesize(&scene, snr, &mut stream_rng(scenario.seed, Stream::Noise));
    let est = cfg
        .estimators
        .iter()
        .copied()
        .find(|e| e.is_parametric())
        .or_else(|| cfg.estimators.first().copied())
        .unwrap_or(Estimator::TendaeAls);
    let opts = PipelineOptions {
        als: cfg.als.clone(),
        extraction: cfg.extraction,
        polish: cfg.polish,
        refine: cfg.refine,
    };
    let out = run_estimators(
        &scenario,
        &rx.y,
        &scene.pilots,
        &scene.schedule,
        &[est],
        &opts,
    )?
    .pop()
    .expect("one estimator requested")?;
    let truth = scene.filtered_truth();
    let err = (&out.channel - &truth).squared_norm_l2() / truth.squared_norm_l2();
    let v = json!({
        "estimator": est,
        "seed": scenario.seed,
        "snr_db": snr,
        "channel_rel_err2": err,
        "truth": scene.targets,
        "report": out.report,
        "fits": out.fits,
    });
    emit(c, "estimate.json", &pretty(&v))
}

fn sweep(c: &Common, compare: bool) -> Result<()> {
    let cfg = load_config(c)?;
    let dir = PathBuf::from(&cfg.outputs);
    if compare {
        let cmp = compare_architectures(&cfg)?;
        let mut bd = cfg.clone();
        bd.scenario.ris_mode = RisMode::BeyondDiagonal;
        let mut dg = cfg.clone();
        dg.scenario.ris_mode = RisMode::Diagonal;
        write_outputs(&bd, &cmp.beyond_diagonal, &dir.join("bd"))?;
        write_outputs(&dg, &cmp.diagonal, &dir.join("diagonal"))?;
        for n in &cmp.notes {
            eprintln!("note: {n}");
        }
    } else {
        let rep = run_sweep(&cfg)?;
        let m = write_outputs(&cfg, &rep, &dir)?;
        eprintln!(
            "{} trials × {} SNR points in {:.1} s, failures {:?}",
            m.trials,
            cfg.snr_grid_db.len(),
            m.wall_clock_s,
            m.failures
        );
    }
    Ok(())
}

fn crlb_table(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let scene = Scene::generate(&cfg.scenario)?;
    let v = scene.noiseless();
    let mut csv = String::from("snr_db,parameter,value,bound,normalized_bound\n");
    for &snr in &cfg.snr_grid_db {
        let (eta, r) = scene_crlb(&scene, noise_variance_for_snr(&v, snr))?;
        for line in r.to_csv(&eta).lines().skip(1) {
            csv.push_str(&format!("{snr},{line}\n"));
        }
        if !r.unidentifiable.is_empty() {
            eprintln!("{snr} dB: unidentifiable {:?}", r.unidentifiable);
        }
    }
    emit(c, "crlb.csv", &csv)
}

fn complexity(c: &Common, als_iter: usize) -> Result<()> {
    let cfg = load_config(c)?;
    let mut csv = String::from("estimator,stage,count\n");
    for &e in &cfg.estimators {
        let r = complexity_estimate(&cfg.scenario, e, Some(als_iter));
        for (stage, n) in &r.stages {
            csv.push_str(&format!("{e},{stage},{n:e}\n"));
        }
        csv.push_str(&format!("{e},total,{:e}\n", r.total));
    }
    emit(c, "complexity.csv", &csv)
}

fn check(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let r = check_identifiability(&cfg.scenario);
    emit(c, "check.json", &pretty(&json!(r)))?;
    if r.is_ok() {
        Ok(())
    } else {
        Err(Error::Identifiability(r.violations))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Identifiability(_) => 2,
        Error::Io(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let c = &cli.common;
    let res = match &cli.command {
        Command::Simulate => simulate(c),
        Command::Estimate { scene } => estimate(c, scene.as_deref()),
        Command::Sweep { compare } => sweep(c, *compare),
        Command::Crlb => crlb_table(c),
        Command::Complexity { als_iter } => complexity(c, *als_iter),
        Command::Check => check(c),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
