//! The estimators run on one received block.
//!
//! The parametric pipeline filters the schedule out, splits the result into
//! per-target factors, fits the stage-two tensor models, reads frequencies
//! off the factor columns with ESPRIT, rebuilds exact steering columns and
//! solves for the gains. With a beyond-diagonal RIS the two stage-two fits
//! carry independent column orders, which the gain fit resolves.

use std::f64::consts::PI;

use faer::{c64, Mat};
use serde::{Deserialize, Serialize};

use super::Estimator;
use crate::crlb::{ml_refine, ParamVector, SignalModel};
use crate::error::{Error, Result};
use crate::extraction::{
    esprit_1d, esprit_2d_freqs, extract_per_target, invert_angles_clamped, ml_freq_1d, ml_freqs_2d,
    pair_and_estimate, permutations, EstimateReport, TargetEstimate,
};
use crate::ksa::{filter_for, krsa_rank_k, ksa_rank_k, FilteredSignal};
use crate::linalg::{col_vec, frob2, svd, CMat};
use crate::ntfe::{fit_angular, fit_nested, weighted_als3, AlsOptions, FitTrace, InitMethod};
use crate::scenario::{
    build_channels, delay_steering, doppler_steering, kron_vec, spatial_freqs, ura_steering_freq,
    ArrayGeometry, RisMode, RisSchedule, ScenarioConfig, TargetParams,
};
use crate::tensor::{khatri_rao, kron, rearrange, unrearrange, Tensor3};

/// How per-target vectors are taken from a fitted factor matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractionMode {
    /// Each factor column on its own.
    #[default]
    PerColumn,
    /// `√σ_k u_k` from the factor's rank-`K` SVD.
    SvdBasis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub als: AlsOptions,
    pub extraction: ExtractionMode,
    /// Move each ESPRIT frequency to the periodogram peak of its vector.
    pub polish: bool,
    /// Joint maximum-likelihood refinement of all parameters on the
    /// received block.
    pub refine: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            als: AlsOptions::default(),
            extraction: ExtractionMode::default(),
            polish: true,
            refine: true,
        }
    }
}

fn freq_1d(v: &[c64], polish: bool) -> Result<f64> {
    let w = esprit_1d(v)?;
    Ok(if polish { ml_freq_1d(v, w) } else { w })
}

fn freqs_2d(v: &[c64], geom: ArrayGeometry, polish: bool) -> Result<(f64, f64)> {
    let f = esprit_2d_freqs(v, geom)?;
    Ok(if polish { ml_freqs_2d(v, geom, f) } else { f })
}

/// Convergence summary of one fitting loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub stage: String,
    pub iterations: usize,
    pub converged: bool,
    pub monotone: bool,
    pub relative_residual: f64,
}

impl FitSummary {
    fn new(stage: &str, t: &FitTrace) -> Self {
        Self {
            stage: stage.into(),
            iterations: t.iterations,
            converged: t.converged,
            monotone: t.is_monotone(),
            relative_residual: t.relative_residual(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimatorOutput {
    pub estimator: Estimator,
    /// Estimate of `Σ_k J_kᵀ ⊗ G_k` (or `⋄` for a diagonal RIS).
    pub channel: CMat,
    /// Per-target parameters; `None` for the channel-only estimators.
    pub report: Option<EstimateReport>,
    pub fits: Vec<FitSummary>,
}

/// Runs every requested estimator on one received block. The schedule
/// filtering is shared, and each estimator fails independently.
pub fn run_estimators(
    config: &ScenarioConfig,
    y: &CMat,
    pilots: &CMat,
    schedule: &RisSchedule,
    estimators: &[Estimator],
    opts: &PipelineOptions,
) -> Result<Vec<Result<EstimatorOutput>>> {
    let f = filter_for(config, y, schedule)?;
    Ok(estimators
        .iter()
        .map(|&e| run_one(config, &f, y, pilots, schedule, e, opts))
        .collect())
}

fn run_one(
    cfg: &ScenarioConfig,
    f: &FilteredSignal,
    y: &CMat,
    x: &CMat,
    schedule: &RisSchedule,
    est: Estimator,
    opts: &PipelineOptions,
) -> Result<EstimatorOutput> {
    let out = |channel, report, fits| EstimatorOutput {
        estimator: est,
        channel,
        report,
        fits,
    };
    match (est, f.mode) {
        (Estimator::Ls, _) => Ok(out(f.y_prime.clone(), None, vec![])),
        (Estimator::Ksa, RisMode::BeyondDiagonal) => {
            let ksa = ksa_rank_k(f, cfg.l_sr(), cfg.k)?;
            let c = unrearrange(
                ksa.truncation().as_ref(),
                cfg.mq(),
                cfg.n(),
                cfg.l_sr(),
                cfg.n(),
            )?;
            Ok(out(c, None, vec![]))
        }
        (Estimator::Ksa, RisMode::Diagonal) => {
            let krsa = krsa_rank_k(f, cfg.l_sr(), cfg.k, &opts.als)?;
            let fits = vec![FitSummary::new("krsa", &krsa.trace)];
            Ok(out(krsa.reconstruct(), None, fits))
        }
        (Estimator::TendaeAls | Estimator::TendaeHosvd, mode) => {
            let mut als = opts.als.clone();
            if est == Estimator::TendaeHosvd {
                als.init = InitMethod::Hosvd;
            }
            let (report, channel, mut fits, departures) = match mode {
                RisMode::BeyondDiagonal => {
                    tendae_bd(cfg, f, x, &als, opts.extraction, opts.polish)?
                }
                RisMode::Diagonal => tendae_diagonal(cfg, f, x, &als, opts.polish)?,
            };
            if !opts.refine {
                return Ok(out(channel, Some(report), fits));
            }
            let (report, channel, summary) = refine(cfg, y, x, schedule, &report, &departures)?;
            fits.push(summary);
            Ok(out(channel, Some(report), fits))
        }
    }
}

/// Representative of `x` modulo 2π in `(−π, π]`.
fn wrap_phase(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

fn tau_from_freq(omega: f64, cfg: &ScenarioConfig) -> f64 {
    -omega / (2.0 * PI * cfg.delta_f)
}

fn nu_from_freq(omega: f64, cfg: &ScenarioConfig) -> f64 {
    omega / (2.0 * PI * cfg.t_s())
}

fn vectors(factor: &CMat, mode: ExtractionMode) -> Result<Vec<Vec<c64>>> {
    match mode {
        ExtractionMode::PerColumn => Ok((0..factor.ncols())
            .map(|j| col_vec(factor.as_ref(), j))
            .collect()),
        ExtractionMode::SvdBasis => extract_per_target(factor),
    }
}

fn pilot_weights(cfg: &ScenarioConfig, x: &CMat) -> Vec<c64> {
    let a_st = cfg.a_st();
    (0..x.ncols())
        .map(|c| (0..x.nrows()).map(|l| a_st[l] * x[(l, c)]).sum())
        .collect()
}

/// Report, channel, fit summaries and the per-target RIS departure spatial
/// frequencies used to seed the refinement.
type Stage = (EstimateReport, CMat, Vec<FitSummary>, Vec<(f64, f64)>);

fn tendae_bd(
    cfg: &ScenarioConfig,
    f: &FilteredSignal,
    x: &CMat,
    als: &AlsOptions,
    extraction: ExtractionMode,
    polish: bool,
) -> Result<Stage> {
    let (k, l, n, mq) = (cfg.k, cfg.l_sr(), cfg.n(), cfg.mq());
    let ksa = ksa_rank_k(f, l, k)?;
    let a_st = cfg.a_st();
    let ang = fit_angular(&ksa.tensor_g, k, &als.with_salt(1))?;
    let dd = fit_nested(
        &ksa.tensor_j,
        x,
        k,
        cfg.m,
        cfg.q,
        Some(&a_st),
        Some(&ang.t_bar_g),
        &als.with_salt(2),
    )?;
    let fits = vec![
        FitSummary::new("angular", &ang.trace),
        FitSummary::new("nested_bals", &dd.bals),
        FitSummary::new("nested_als", &dd.als),
        FitSummary::new("nested_weighted", &dd.weighted),
    ];

    let sr: Vec<(f64, f64)> = vectors(&ang.a_sr, extraction)?
        .iter()
        .map(|v| freqs_2d(v, cfg.sr, polish))
        .collect::<Result<_>>()?;
    let tx: Vec<(f64, f64)> = vectors(&ang.b_tx, extraction)?
        .iter()
        .map(|v| freqs_2d(v, cfg.ris, polish))
        .collect::<Result<_>>()?;
    let rx = freqs_2d(&dd.b_rx, cfg.ris, polish)?;
    let taus: Vec<f64> = vectors(&dd.c_tau, extraction)?
        .iter()
        .map(|v| freq_1d(v, polish).map(|w| tau_from_freq(w, cfg)))
        .collect::<Result<_>>()?;
    let nus: Vec<f64> = vectors(&dd.d_nu, extraction)?
        .iter()
        .map(|v| freq_1d(v, polish).map(|w| nu_from_freq(w, cfg)))
        .collect::<Result<_>>()?;

    // refined steering columns rebuilt from the frequency estimates
    let w = pilot_weights(cfg, x);
    let b_rx = ura_steering_freq(cfg.ris, rx.0, rx.1);
    let r = rearrange(f.y_prime.as_ref(), mq, n, l, n)?;
    let perms = permutations(k)?;
    // per-column factors share an order within each fit; SVD-basis vectors
    // do not, so every combination is tried
    let (tx_perms, c_perms, d_perms): (Vec<&Vec<usize>>, Vec<&Vec<usize>>, Vec<&Vec<usize>>) =
        match extraction {
            ExtractionMode::PerColumn => (vec![&perms[0]], vec![&perms[0]], vec![&perms[0]]),
            ExtractionMode::SvdBasis => {
                if k > 3 {
                    return Err(Error::Unsupported(format!(
                        "SVD-basis pairing for K = {k} > 3"
                    )));
                }
                (
                    perms.iter().collect(),
                    perms.iter().collect(),
                    perms.iter().collect(),
                )
            }
        };
    let mut best: Option<(
        f64,
        Vec<usize>,
        Vec<usize>,
        Vec<usize>,
        Vec<c64>,
        CMat,
        CMat,
    )> = None;
    for ptx in &tx_perms {
        let g_bar = Mat::from_fn(l * n, k, |row, i| {
            let (li, ni) = (row % l, row / l);
            let a = ura_steering_freq(cfg.sr, sr[i].0, sr[i].1);
            let b = ura_steering_freq(cfg.ris, tx[ptx[i]].0, tx[ptx[i]].1);
            b[ni] * a[li]
        });
        for pc in &c_perms {
            for pd in &d_perms {
                let j_bar = Mat::from_fn(mq * n, k, |_, _| c64::new(0.0, 0.0));
                let mut j_bar = j_bar;
                for j in 0..k {
                    let fv = kron_vec(
                        &delay_steering(taus[pc[j]], cfg.q, cfg.delta_f),
                        &doppler_steering(nus[pd[j]], cfg.m, cfg.t_s()),
                    );
                    let wf: Vec<c64> = w.iter().zip(&fv).map(|(a, b)| a * b).collect();
                    let col = kron_vec(&b_rx, &wf);
                    for (row, v) in col.into_iter().enumerate() {
                        j_bar[(row, j)] = v;
                    }
                }
                let (fit, p) = pair_and_estimate(&r, &g_bar, &j_bar, &perms)?;
                if best.as_ref().is_none_or(|b| fit.residual < b.0) {
                    let tau_order: Vec<usize> = p.iter().map(|&j| pc[j]).collect();
                    let nu_order: Vec<usize> = p.iter().map(|&j| pd[j]).collect();
                    let jp = Mat::from_fn(mq * n, k, |row, i| j_bar[(row, p[i])]);
                    best = Some((
                        fit.residual,
                        (*ptx).clone(),
                        tau_order,
                        nu_order,
                        fit.alpha,
                        g_bar.clone(),
                        jp,
                    ));
                }
            }
        }
    }
    let (_, ptx, tau_order, nu_order, alpha, g_bar, j_bar) =
        best.ok_or_else(|| Error::InvalidParameter("no pairing evaluated".into()))?;

    let mut clamps = 0;
    let mut angles = |(mu, psi): (f64, f64)| {
        let (p, t, c) = invert_angles_clamped(mu, psi);
        clamps += c as usize;
        (p, t)
    };
    let (phi_a, theta_a) = angles(rx);
    let mut targets = Vec::with_capacity(k);
    for i in 0..k {
        let (phi_sr, theta_sr) = angles(sr[i]);
        let (phi_d, theta_d) = angles(tx[ptx[i]]);
        targets.push(TargetEstimate {
            phi_sr,
            theta_sr,
            phi_ris_d: Some(phi_d),
            theta_ris_d: Some(theta_d),
            tau: taus[tau_order[i]],
            nu: nus[nu_order[i]],
            alpha: alpha[i],
        });
    }
    let ga = Mat::from_fn(l * n, k, |row, i| g_bar[(row, i)] * alpha[i]);
    let fitted = ga * j_bar.transpose();
    let channel = unrearrange(fitted.as_ref(), mq, n, l, n)?;
    let report = EstimateReport {
        targets,
        phi_ris_a: Some(phi_a),
        theta_ris_a: Some(theta_a),
        permutation: None,
        clamps,
    };
    let departures = ptx.iter().map(|&j| tx[j]).collect();
    Ok((report, channel, fits, departures))
}

fn tendae_diagonal(
    cfg: &ScenarioConfig,
    f: &FilteredSignal,
    x: &CMat,
    als: &AlsOptions,
    polish: bool,
) -> Result<Stage> {
    let (k, l, n, mq, m, q) = (cfg.k, cfg.l_sr(), cfg.n(), cfg.mq(), cfg.m, cfg.q);
    let krsa = krsa_rank_k(f, l, k, &als.with_salt(1))?;
    let mut fits = vec![FitSummary::new("krsa", &krsa.trace)];
    // only the summed RIS frequencies are identifiable; the refinement is
    // seeded with the configured arrival and the remainder as departure
    let arrival = spatial_freqs(cfg.phi_ris_a, cfg.theta_ris_a);
    let mut departures = Vec::with_capacity(k);
    let w = pilot_weights(cfg, x);
    let mut clamps = 0;
    let mut targets = Vec::with_capacity(k);
    let mut g_bar = CMat::zeros(l * mq, k);
    let mut r_bar = CMat::zeros(n, k);
    for i in 0..k {
        let sr = freqs_2d(&col_vec(krsa.sr.as_ref(), i), cfg.sr, polish)?;
        // (w ⊙ f) / w, split into delay and Doppler by a rank-one SVD of the
        // M × Q grid, then refined with weights |w|²
        let fv: Vec<c64> = (0..mq).map(|c| krsa.delay_doppler[(c, i)] / w[c]).collect();
        let grid = Mat::from_fn(m, q, |mi, qi| fv[mi + m * qi]);
        let (u, sv, v) = svd(grid.as_ref())?;
        let s0 = sv.first().copied().unwrap_or(0.0);
        let init = [
            Mat::from_fn(1, 1, |_, _| c64::new(s0, 0.0)),
            Mat::from_fn(m, 1, |r, _| u[(r, 0)]),
            Mat::from_fn(q, 1, |r, _| v[(r, 0)].conj()),
        ];
        let t = Tensor3::from_fn([1, m, q], |_, mi, qi| fv[mi + m * qi]);
        let weights: Vec<f64> = w.iter().map(|z| z.norm_sqr()).collect();
        let refined = weighted_als3(&t, &weights, init, als)?;
        fits.push(FitSummary::new("weighted_split", &refined.trace));
        let d = col_vec(refined.factors.b.as_ref(), 0);
        let c = col_vec(refined.factors.c.as_ref(), 0);
        let tau = tau_from_freq(freq_1d(&c, polish)?, cfg);
        let nu = nu_from_freq(freq_1d(&d, polish)?, cfg);
        // b_tx ⊙ b_rx is a steering vector at the summed frequencies
        let ris = freqs_2d(&col_vec(krsa.ris.as_ref(), i), cfg.ris, polish)?;
        departures.push((wrap_phase(ris.0 - arrival.0), wrap_phase(ris.1 - arrival.1)));
        let a = ura_steering_freq(cfg.sr, sr.0, sr.1);
        let fr = kron_vec(
            &delay_steering(tau, q, cfg.delta_f),
            &doppler_steering(nu, m, cfg.t_s()),
        );
        let wf: Vec<c64> = w.iter().zip(&fr).map(|(a, b)| a * b).collect();
        for (row, val) in kron_vec(&wf, &a).into_iter().enumerate() {
            g_bar[(row, i)] = val;
        }
        for (row, val) in ura_steering_freq(cfg.ris, ris.0, ris.1)
            .into_iter()
            .enumerate()
        {
            r_bar[(row, i)] = val;
        }
        let (phi_sr, theta_sr, cl) = invert_angles_clamped(sr.0, sr.1);
        clamps += cl as usize;
        targets.push(TargetEstimate {
            phi_sr,
            theta_sr,
            phi_ris_d: None,
            theta_ris_d: None,
            tau,
            nu,
            alpha: c64::new(0.0, 0.0),
        });
    }
    let identity: Vec<usize> = (0..k).collect();
    let (fit, _) = pair_and_estimate(&f.y_prime, &g_bar, &r_bar, &[identity])?;
    for (t, a) in targets.iter_mut().zip(&fit.alpha) {
        t.alpha = *a;
    }
    let ga = Mat::from_fn(l * mq, k, |row, i| g_bar[(row, i)] * fit.alpha[i]);
    let channel = ga * r_bar.transpose();
    let report = EstimateReport {
        targets,
        phi_ris_a: None,
        theta_ris_a: None,
        permutation: None,
        clamps,
    };
    Ok((report, channel, fits, departures))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::match_targets;
    use crate::linalg::rel_err;
    use crate::scenario::{stream_rng, synthesize, ArrayGeometry, Scene, Stream};

    fn small(k: usize, mode: RisMode, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            st: ArrayGeometry { n_y: 2, n_z: 2 },
            ris: ArrayGeometry { n_y: 3, n_z: 3 },
            sr: ArrayGeometry { n_y: 3, n_z: 3 },
            k,
            q: 4,
            m: 4,
            t: 96,
            ris_mode: mode,
            seed,
            unit_gain: true,
            min_separation_deg: 15.0,
            ..ScenarioConfig::default()
        }
    }

    fn noiseless(
        cfg: &ScenarioConfig,
        est: Estimator,
        extraction: ExtractionMode,
    ) -> (Scene, EstimatorOutput) {
        let scene = Scene::generate(cfg).unwrap();
        let rx = synthesize(&scene, None, &mut stream_rng(0, Stream::Noise));
        let opts = PipelineOptions {
            extraction,
            ..PipelineOptions::default()
        };
        let out = run_estimators(cfg, &rx.y, &scene.pilots, &scene.schedule, &[est], &opts)
            .unwrap()
            .pop()
            .unwrap()
            .unwrap();
        (scene, out)
    }

    fn max_rel_error(scene: &Scene, rep: &EstimateReport) -> f64 {
        let t_s = scene.config.t_s();
        let perm = match_targets(&scene.targets, &rep.targets, t_s).unwrap();
        let mut worst: f64 = 0.0;
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
        for (i, e) in rep.targets.iter().enumerate() {
            let t = &scene.targets[perm[i]];
            worst = worst
                .max(rel(e.tau, t.tau))
                .max(rel(e.nu, t.nu))
                .max(rel(e.phi_sr, t.phi_sr))
                .max(rel(e.theta_sr, t.theta_sr))
                .max((e.alpha - t.alpha).norm() / t.alpha.norm());
            if let (Some(p), Some(q)) = (e.phi_ris_d, e.theta_ris_d) {
                worst = worst.max(rel(p, t.phi_ris_d)).max(rel(q, t.theta_ris_d));
            }
        }
        if let (Some(p), Some(q)) = (rep.phi_ris_a, rep.theta_ris_a) {
            worst = worst
                .max(rel(p, scene.config.phi_ris_a))
                .max(rel(q, scene.config.theta_ris_a));
        }
        worst
    }

    #[test]
    fn noiseless_bd_recovery() {
        for seed in 0..3 {
            let cfg = small(2, RisMode::BeyondDiagonal, seed);
            for est in [Estimator::TendaeAls, Estimator::TendaeHosvd] {
                let (scene, out) = noiseless(&cfg, est, ExtractionMode::PerColumn);
                let rep = out.report.unwrap();
                let e = max_rel_error(&scene, &rep);
                assert!(e < 1e-6, "seed {seed} {est}: {e}");
                assert_eq!(rep.clamps, 0);
                assert!(rel_err(out.channel.as_ref(), scene.filtered_truth().as_ref()) < 1e-8);
                assert!(
                    out.fits
                        .iter()
                        .all(|f| f.monotone && f.relative_residual < 1e-6),
                    "{:?}",
                    out.fits
                );
            }
        }
    }

    #[test]
    fn noiseless_diagonal_recovery_omits_ris_angles() {
        let cfg = small(2, RisMode::Diagonal, 4);
        let (scene, out) = noiseless(&cfg, Estimator::TendaeAls, ExtractionMode::PerColumn);
        let rep = out.report.unwrap();
        assert!(rep.phi_ris_a.is_none() && rep.targets.iter().all(|t| t.phi_ris_d.is_none()));
        assert!(max_rel_error(&scene, &rep) < 1e-6);
        assert!(rel_err(out.channel.as_ref(), scene.filtered_truth().as_ref()) < 1e-8);
    }

    #[test]
    fn channel_only_estimators() {
        let cfg = small(2, RisMode::BeyondDiagonal, 5);
        for est in [Estimator::Ls, Estimator::Ksa] {
            let (scene, out) = noiseless(&cfg, est, ExtractionMode::PerColumn);
            assert!(out.report.is_none());
            assert!(rel_err(out.channel.as_ref(), scene.filtered_truth().as_ref()) < 1e-8);
        }
    }

    #[test]
    fn svd_basis_mode_is_exact_for_one_target() {
        let cfg = small(1, RisMode::BeyondDiagonal, 6);
        let (scene, out) = noiseless(&cfg, Estimator::TendaeAls, ExtractionMode::SvdBasis);
        assert!(max_rel_error(&scene, &out.report.unwrap()) < 1e-6);
    }
}

/// Levenberg–Marquardt iteration cap of the joint refinement.
pub const REFINE_MAX_ITER: usize = 30;

/// Minimum distance of a refinement start angle from `0` and `π/2`, radians.
pub const REFINE_EDGE: f64 = 1e-2;

/// Joint maximum-likelihood refinement of a parametric estimate, followed
/// by the channel rebuilt from the refined parameters.
fn refine(
    cfg: &ScenarioConfig,
    y: &CMat,
    x: &CMat,
    schedule: &RisSchedule,
    report: &EstimateReport,
    departures: &[(f64, f64)],
) -> Result<(EstimateReport, CMat, FitSummary)> {
    let model = SignalModel::new(cfg, x, &schedule.s, schedule.mode)?;
    let mut targets = Vec::with_capacity(report.targets.len());
    for (t, &(mu, psi)) in report.targets.iter().zip(departures) {
        let (phi_ris_d, theta_ris_d, _) = invert_angles_clamped(mu, psi);
        targets.push(TargetParams {
            phi_sr: t.phi_sr,
            theta_sr: t.theta_sr,
            phi_ris_d,
            theta_ris_d,
            tau: t.tau,
            nu: t.nu,
            alpha: t.alpha,
        });
    }
    let arrival_cfg = ScenarioConfig {
        phi_ris_a: report.phi_ris_a.unwrap_or(cfg.phi_ris_a),
        theta_ris_a: report.theta_ris_a.unwrap_or(cfg.theta_ris_a),
        ..cfg.clone()
    };
    // steering derivatives vanish on the branch edges, so a clamped start
    // would pin the angle; begin just inside instead
    let inside = |a: &mut f64| *a = a.clamp(REFINE_EDGE, PI / 2.0 - REFINE_EDGE);
    let mut eta0 = ParamVector::from_targets(&arrival_cfg, &targets);
    for v in [
        &mut eta0.phi_sr,
        &mut eta0.theta_sr,
        &mut eta0.phi_ris,
        &mut eta0.theta_ris,
    ] {
        v.iter_mut().for_each(inside);
    }
    let ml = ml_refine(&model, y, &eta0, REFINE_MAX_ITER)?;
    let eta = &ml.eta;

    let mut clamps = 0;
    let mut fold = |phi: f64, theta: f64| {
        let (mu, psi) = spatial_freqs(phi, theta);
        let (p, t, c) = invert_angles_clamped(mu, psi);
        clamps += c as usize;
        (p, t)
    };
    let bd = schedule.mode == RisMode::BeyondDiagonal;
    let (phi_a, theta_a) = if bd {
        fold(eta.phi_ris[0], eta.theta_ris[0])
    } else {
        (eta.phi_ris[0], eta.theta_ris[0])
    };
    let mut refined = Vec::with_capacity(targets.len());
    let mut out_targets = Vec::with_capacity(targets.len());
    for i in 0..eta.k() {
        let (phi_sr, theta_sr) = fold(eta.phi_sr[i], eta.theta_sr[i]);
        // a diagonal RIS only fixes the summed frequencies, so the split is
        // kept as is and not reported
        let (phi_d, theta_d) = if bd {
            fold(eta.phi_ris[i + 1], eta.theta_ris[i + 1])
        } else {
            (eta.phi_ris[i + 1], eta.theta_ris[i + 1])
        };
        let alpha = c64::new(eta.alpha_re[i], eta.alpha_im[i]);
        refined.push(TargetParams {
            phi_sr,
            theta_sr,
            phi_ris_d: phi_d,
            theta_ris_d: theta_d,
            tau: eta.tau[i],
            nu: eta.nu[i],
            alpha,
        });
        out_targets.push(TargetEstimate {
            phi_sr,
            theta_sr,
            phi_ris_d: bd.then_some(phi_d),
            theta_ris_d: bd.then_some(theta_d),
            tau: eta.tau[i],
            nu: eta.nu[i],
            alpha,
        });
    }
    let channel_cfg = ScenarioConfig {
        phi_ris_a: phi_a,
        theta_ris_a: theta_a,
        ..cfg.clone()
    };
    let ch = build_channels(&channel_cfg, &refined, x)?;
    let (l, mq, n) = (cfg.l_sr(), cfg.mq(), cfg.n());
    let mut channel = CMat::zeros(l * mq, if bd { n * n } else { n });
    for (g, j) in ch.g.iter().zip(&ch.j) {
        channel += if bd {
            kron(j.transpose(), g.as_ref())
        } else {
            khatri_rao(j.transpose(), g.as_ref())?
        };
    }
    let summary = FitSummary {
        stage: "ml_refine".into(),
        iterations: ml.iterations,
        converged: ml.converged,
        monotone: ml.residual_history.windows(2).all(|w| w[1] <= w[0]),
        relative_residual: ml.residual_history.last().copied().unwrap_or(0.0)
            / frob2(y.as_ref()).max(f64::MIN_POSITIVE),
    };
    let report = EstimateReport {
        targets: out_targets,
        phi_ris_a: bd.then_some(phi_a),
        theta_ris_a: bd.then_some(theta_a),
        permutation: None,
        clamps: report.clamps + clamps,
    };
    Ok((report, channel, summary))
}
