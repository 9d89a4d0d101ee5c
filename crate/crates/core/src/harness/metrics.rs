//! Monte Carlo trials, metric aggregation and output files.
//!
//! Parameter errors are squared Euclidean distances over the matched target
//! set, with delay in units of `T_s` and Doppler in units of `1/T_s`. Channel
//! NMSE is measured on the effective channel `C·S`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pipeline::{run_estimators, FitSummary, PipelineOptions};
use super::{Estimator, ExperimentConfig};
use crate::crlb::{crlb, fim, CrlbReport, ParamKind, ParamSlot, ParamVector, SignalModel};
use crate::error::{Error, Result};
use crate::extraction::{match_targets, EstimateReport};
use crate::linalg::CMat;
use crate::scenario::{mix_seed, stream_rng, synthesize, RisMode, Scene, Stream, TargetParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Tau,
    Nu,
    PhiSr,
    ThetaSr,
    PhiRisD,
    ThetaRisD,
    PhiRisA,
    ThetaRisA,
    Alpha,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 9] = [
        ParamGroup::Tau,
        ParamGroup::Nu,
        ParamGroup::PhiSr,
        ParamGroup::ThetaSr,
        ParamGroup::PhiRisD,
        ParamGroup::ThetaRisD,
        ParamGroup::PhiRisA,
        ParamGroup::ThetaRisA,
        ParamGroup::Alpha,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Tau => "tau",
            ParamGroup::Nu => "nu",
            ParamGroup::PhiSr => "phi_sr",
            ParamGroup::ThetaSr => "theta_sr",
            ParamGroup::PhiRisD => "phi_ris_d",
            ParamGroup::ThetaRisD => "theta_ris_d",
            ParamGroup::PhiRisA => "phi_ris_a",
            ParamGroup::ThetaRisA => "theta_ris_a",
            ParamGroup::Alpha => "alpha",
        }
    }

    /// RIS angles, which a diagonal surface cannot resolve.
    pub fn is_ris(self) -> bool {
        matches!(
            self,
            ParamGroup::PhiRisD
                | ParamGroup::ThetaRisD
                | ParamGroup::PhiRisA
                | ParamGroup::ThetaRisA
        )
    }
}

/// One estimator's outcome on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorTrial {
    pub estimator: Estimator,
    /// Failure message; the remaining fields are empty when set.
    pub error: Option<String>,
    pub nmse: f64,
    /// Squared error per parameter group; empty for channel-only estimators.
    pub sq_err: BTreeMap<ParamGroup, f64>,
    /// Largest relative error over every reported parameter.
    pub max_rel_err: Option<f64>,
    pub report: Option<EstimateReport>,
    pub fits: Vec<FitSummary>,
}

impl EstimatorTrial {
    fn failed(estimator: Estimator, e: &Error) -> Self {
        Self {
            estimator,
            error: Some(e.to_string()),
            nmse: f64::NAN,
            sq_err: BTreeMap::new(),
            max_rel_err: None,
            report: None,
            fits: vec![],
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub scene_seed: u64,
    pub snr_db: Option<f64>,
    pub truth: Vec<TargetParams>,
    pub estimators: Vec<EstimatorTrial>,
    /// Squared CRLB per parameter group at the true parameters.
    pub crlb: BTreeMap<ParamGroup, f64>,
}

impl TrialRecord {
    pub fn get(&self, e: Estimator) -> Option<&EstimatorTrial> {
        self.estimators.iter().find(|t| t.estimator == e)
    }
}

/// Scene seed shared by every SNR of a trial, and the noise seed of one
/// (trial, SNR) cell.
pub fn trial_seeds(master_seed: u64, trial: usize, snr_index: usize) -> (u64, u64) {
    let scene = mix_seed(master_seed, trial as u64);
    (scene, mix_seed(scene, snr_index as u64 + 1))
}

fn rel(est: f64, truth: f64) -> f64 {
    (est - truth).abs() / truth.abs().max(1e-12)
}

fn score(
    scene: &Scene,
    report: &EstimateReport,
) -> Result<(BTreeMap<ParamGroup, f64>, f64, EstimateReport)> {
    let t_s = scene.config.t_s();
    let perm = match_targets(&scene.targets, &report.targets, t_s)?;
    let mut report = report.clone();
    report.permutation = Some(perm.clone());
    let mut sq = BTreeMap::new();
    let mut add = |g: ParamGroup, d: f64| *sq.entry(g).or_insert(0.0) += d * d;
    let mut worst: f64 = 0.0;
    for (i, e) in report.targets.iter().enumerate() {
        let t = &scene.targets[perm[i]];
        add(ParamGroup::Tau, (e.tau - t.tau) / t_s);
        add(ParamGroup::Nu, (e.nu - t.nu) * t_s);
        add(ParamGroup::PhiSr, e.phi_sr - t.phi_sr);
        add(ParamGroup::ThetaSr, e.theta_sr - t.theta_sr);
        add(ParamGroup::Alpha, (e.alpha - t.alpha).norm());
        worst = worst
            .max(rel(e.tau, t.tau))
            .max(rel(e.nu, t.nu))
            .max(rel(e.phi_sr, t.phi_sr))
            .max(rel(e.theta_sr, t.theta_sr))
            .max((e.alpha - t.alpha).norm() / t.alpha.norm().max(1e-300));
        if let (Some(p), Some(q)) = (e.phi_ris_d, e.theta_ris_d) {
            add(ParamGroup::PhiRisD, p - t.phi_ris_d);
            add(ParamGroup::ThetaRisD, q - t.theta_ris_d);
            worst = worst.max(rel(p, t.phi_ris_d)).max(rel(q, t.theta_ris_d));
        }
    }
    if let (Some(p), Some(q)) = (report.phi_ris_a, report.theta_ris_a) {
        let c = &scene.config;
        add(ParamGroup::PhiRisA, p - c.phi_ris_a);
        add(ParamGroup::ThetaRisA, q - c.theta_ris_a);
        worst = worst.max(rel(p, c.phi_ris_a)).max(rel(q, c.theta_ris_a));
    }
    Ok((sq, worst, report))
}

/// `tr(E G Eᴴ)` for a Hermitian Gram `G`.
fn weighted_energy(e: &CMat, gram: &CMat) -> f64 {
    let eg = e * gram;
    let mut s = 0.0;
    for j in 0..e.ncols() {
        for i in 0..e.nrows() {
            s += (eg[(i, j)] * e[(i, j)].conj()).re;
        }
    }
    s
}

/// `‖(Ĉ − C)S‖² / ‖C S‖²` through the schedule Gram `S Sᴴ`.
fn channel_nmse(est: &CMat, truth: &CMat, gram: &CMat) -> f64 {
    weighted_energy(&(est - truth), gram) / weighted_energy(truth, gram)
}

/// Squared bounds per group at unit noise variance.
fn crlb_groups(rep: &CrlbReport, k: usize, mode: RisMode) -> BTreeMap<ParamGroup, f64> {
    let mut out = BTreeMap::new();
    let mut add = |g: ParamGroup, kind: ParamKind, target: Option<usize>| {
        let name = ParamSlot { kind, target }.name();
        if let Some(i) = rep.names.iter().position(|n| *n == name) {
            *out.entry(g).or_insert(0.0) += rep.normalized[i].powi(2);
        }
    };
    for t in 0..k {
        add(ParamGroup::Tau, ParamKind::Tau, Some(t));
        add(ParamGroup::Nu, ParamKind::Nu, Some(t));
        add(ParamGroup::PhiSr, ParamKind::PhiSr, Some(t));
        add(ParamGroup::ThetaSr, ParamKind::ThetaSr, Some(t));
        add(ParamGroup::Alpha, ParamKind::AlphaRe, Some(t));
        add(ParamGroup::Alpha, ParamKind::AlphaIm, Some(t));
        if mode == RisMode::BeyondDiagonal {
            add(ParamGroup::PhiRisD, ParamKind::PhiRis, Some(t));
            add(ParamGroup::ThetaRisD, ParamKind::ThetaRis, Some(t));
        }
    }
    if mode == RisMode::BeyondDiagonal {
        add(ParamGroup::PhiRisA, ParamKind::PhiRis, None);
        add(ParamGroup::ThetaRisA, ParamKind::ThetaRis, None);
    }
    out
}

/// Squared CRLB per group for a scene at unit noise variance. Bounds scale
/// with `σ²`, so one FIM serves every SNR of a trial.
pub fn unit_crlb(scene: &Scene) -> Result<BTreeMap<ParamGroup, f64>> {
    let model = SignalModel::from_scene(scene)?;
    let eta = ParamVector::from_scene(scene);
    let rep = crlb(&fim(&model, &eta, 1.0)?, scene.config.t_s())?;
    Ok(crlb_groups(&rep, scene.config.k, scene.config.ris_mode))
}

fn trial_on_scene(
    cfg: &ExperimentConfig,
    scene: &Scene,
    snr_db: Option<f64>,
    noise_seed: u64,
    unit: Option<&BTreeMap<ParamGroup, f64>>,
) -> Result<TrialRecord> {
    let rx = synthesize(scene, snr_db, &mut stream_rng(noise_seed, Stream::Noise));
    let opts = PipelineOptions {
        als: cfg.als.with_salt(noise_seed),
        extraction: cfg.extraction,
        polish: cfg.polish,
        refine: cfg.refine,
    };
    let outs = run_estimators(
        &scene.config,
        &rx.y,
        &scene.pilots,
        &scene.schedule,
        &cfg.estimators,
        &opts,
    )?;
    let truth = scene.filtered_truth();
    let gram = &scene.schedule.s * scene.schedule.s.adjoint();
    let estimators = cfg
        .estimators
        .iter()
        .zip(outs)
        .map(|(&e, out)| {
            let out = match out {
                Ok(o) => o,
                Err(err) => return EstimatorTrial::failed(e, &err),
            };
            let nmse = channel_nmse(&out.channel, &truth, &gram);
            let scored = out.report.as_ref().map(|r| score(scene, r)).transpose();
            match scored {
                Err(err) => EstimatorTrial::failed(e, &err),
                Ok(s) => {
                    let (sq_err, max_rel_err, report) = match s {
                        Some((sq, w, r)) => (sq, Some(w), Some(r)),
                        None => (BTreeMap::new(), None, None),
                    };
                    EstimatorTrial {
                        estimator: e,
                        error: None,
                        nmse,
                        sq_err,
                        max_rel_err,
                        report,
                        fits: out.fits,
                    }
                }
            }
        })
        .collect();
    let sigma2 = rx.noise_variance();
    let crlb = match unit {
        Some(u) if sigma2 > 0.0 => u.iter().map(|(&g, &v)| (g, v * sigma2)).collect(),
        _ => BTreeMap::new(),
    };
    Ok(TrialRecord {
        scene_seed: scene.config.seed,
        snr_db,
        truth: scene.targets.clone(),
        estimators,
        crlb,
    })
}

/// One trial: scene from `scene_seed`, noise from `noise_seed`, every
/// configured estimator. `snr_db = None` is noiseless. CRLB entries are
/// attached when enabled and the trial is noisy.
pub fn run_trial(
    cfg: &ExperimentConfig,
    snr_db: Option<f64>,
    scene_seed: u64,
    noise_seed: u64,
) -> Result<TrialRecord> {
    let scene = Scene::generate(&super::scenario_with_seed(&cfg.scenario, scene_seed))?;
    let unit = if cfg.crlb && snr_db.is_some() {
        Some(unit_crlb(&scene)?)
    } else {
        None
    };
    trial_on_scene(cfg, &scene, snr_db, noise_seed, unit.as_ref())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub estimator: String,
    pub snr_db: f64,
    pub parameter: String,
    pub statistic: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub trials: usize,
    /// Failed trials per estimator over the whole sweep.
    pub failures: BTreeMap<String, usize>,
    pub wall_clock_s: f64,
    /// Per-trial records in (trial, SNR) order.
    pub records: Vec<TrialRecord>,
}

impl MetricReport {
    pub fn value(
        &self,
        estimator: &str,
        snr_db: f64,
        parameter: &str,
        statistic: &str,
    ) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| {
                r.estimator == estimator
                    && r.snr_db == snr_db
                    && r.parameter == parameter
                    && r.statistic == statistic
            })
            .map(|r| r.value)
    }

    pub fn rmse(&self, e: Estimator, snr_db: f64, g: ParamGroup) -> Option<f64> {
        self.value(e.name(), snr_db, g.name(), "rmse")
    }

    pub fn nmse(&self, e: Estimator, snr_db: f64) -> Option<f64> {
        self.value(e.name(), snr_db, "channel", "nmse")
    }

    pub fn crlb(&self, snr_db: f64, g: ParamGroup) -> Option<f64> {
        self.value("crlb", snr_db, g.name(), "rmse")
    }

    /// `estimator,snr_db,parameter,statistic,value`, one line per row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("estimator,snr_db,parameter,statistic,value\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{:e}",
                r.estimator, r.snr_db, r.parameter, r.statistic, r.value
            );
        }
        s
    }
}

fn aggregate(
    cfg: &ExperimentConfig,
    records: &[TrialRecord],
) -> (Vec<MetricRow>, BTreeMap<String, usize>) {
    let mut rows = Vec::new();
    let mut failures = BTreeMap::new();
    let row = |e: &str, snr: f64, p: &str, s: &str, v: f64| MetricRow {
        estimator: e.into(),
        snr_db: snr,
        parameter: p.into(),
        statistic: s.into(),
        value: v,
    };
    let mode = cfg.scenario.ris_mode;
    for &snr in &cfg.snr_grid_db {
        let cell: Vec<&TrialRecord> = records.iter().filter(|r| r.snr_db == Some(snr)).collect();
        for &e in &cfg.estimators {
            let ok: Vec<&EstimatorTrial> = cell
                .iter()
                .filter_map(|r| r.get(e))
                .filter(|t| t.ok())
                .collect();
            let failed = cell.len() - ok.len();
            *failures.entry(e.name().to_string()).or_insert(0) += failed;
            rows.push(row(e.name(), snr, "channel", "successes", ok.len() as f64));
            rows.push(row(e.name(), snr, "channel", "failures", failed as f64));
            if ok.is_empty() {
                continue;
            }
            let n = ok.len() as f64;
            rows.push(row(
                e.name(),
                snr,
                "channel",
                "nmse",
                ok.iter().map(|t| t.nmse).sum::<f64>() / n,
            ));
            if e.is_parametric() {
                for g in ParamGroup::ALL {
                    if g.is_ris() && mode == RisMode::Diagonal {
                        continue;
                    }
                    let mse = ok
                        .iter()
                        .map(|t| t.sq_err.get(&g).copied().unwrap_or(0.0))
                        .sum::<f64>()
                        / n;
                    rows.push(row(e.name(), snr, g.name(), "rmse", mse.sqrt()));
                }
            }
        }
        if cfg.crlb && !cell.is_empty() {
            for g in ParamGroup::ALL {
                let v: Vec<f64> = cell
                    .iter()
                    .filter_map(|r| r.crlb.get(&g).copied())
                    .collect();
                if !v.is_empty() {
                    let m = v.iter().sum::<f64>() / v.len() as f64;
                    rows.push(row("crlb", snr, g.name(), "rmse", m.sqrt()));
                }
            }
        }
    }
    (rows, failures)
}

/// Full Monte Carlo sweep. Trials run in parallel and are reduced in
/// (trial, SNR) order, so the rows depend only on the configuration.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<MetricReport> {
    cfg.validate()?;
    let start = Instant::now();
    let per_trial: Vec<Result<Vec<TrialRecord>>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let (scene_seed, _) = trial_seeds(cfg.master_seed, trial, 0);
            let scene = Scene::generate(&super::scenario_with_seed(&cfg.scenario, scene_seed))?;
            let unit = if cfg.crlb {
                Some(unit_crlb(&scene)?)
            } else {
                None
            };
            cfg.snr_grid_db
                .iter()
                .enumerate()
                .map(|(si, &snr)| {
                    let (_, noise_seed) = trial_seeds(cfg.master_seed, trial, si);
                    trial_on_scene(cfg, &scene, Some(snr), noise_seed, unit.as_ref())
                })
                .collect()
        })
        .collect();
    let mut records = Vec::with_capacity(cfg.trials * cfg.snr_grid_db.len());
    for r in per_trial {
        records.extend(r?);
    }
    let (rows, failures) = aggregate(cfg, &records);
    Ok(MetricReport {
        rows,
        trials: cfg.trials,
        failures,
        wall_clock_s: start.elapsed().as_secs_f64(),
        records,
    })
}

/// Paired sweeps over the same target draws and noise for both RIS
/// architectures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchitectureComparison {
    pub beyond_diagonal: MetricReport,
    pub diagonal: MetricReport,
    pub notes: Vec<String>,
}

impl ArchitectureComparison {
    /// `20 log10(RMSE_diag / RMSE_bd)`: how far the BD curve sits below.
    pub fn gain_db(&self, e: Estimator, snr_db: f64, g: ParamGroup) -> Option<f64> {
        let bd = self.beyond_diagonal.rmse(e, snr_db, g)?;
        let dg = self.diagonal.rmse(e, snr_db, g)?;
        Some(20.0 * (dg / bd).log10())
    }
}

pub fn compare_architectures(cfg: &ExperimentConfig) -> Result<ArchitectureComparison> {
    let with_mode = |mode| {
        let mut c = cfg.clone();
        c.scenario.ris_mode = mode;
        c
    };
    let beyond_diagonal = run_sweep(&with_mode(RisMode::BeyondDiagonal))?;
    let diagonal = run_sweep(&with_mode(RisMode::Diagonal))?;
    Ok(ArchitectureComparison {
        beyond_diagonal,
        diagonal,
        notes: vec!["diagonal RIS: arrival and departure angles are not separately identifiable and are not reported".into()],
    })
}

/// Run metadata written next to the metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub master_seed: u64,
    pub code_version: String,
    pub trials: usize,
    pub failures: BTreeMap<String, usize>,
    pub wall_clock_s: f64,
}

fn code_version() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Writes `metrics.csv` and `manifest.json` into `dir`.
pub fn write_outputs(
    cfg: &ExperimentConfig,
    report: &MetricReport,
    dir: &Path,
) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.csv"), report.to_csv())?;
    let manifest = Manifest {
        config: cfg.clone(),
        master_seed: cfg.master_seed,
        code_version: code_version(),
        trials: report.trials,
        failures: report.failures.clone(),
        wall_clock_s: report.wall_clock_s,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(manifest)
}
