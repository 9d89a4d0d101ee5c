//! Cramér–Rao bounds for the `(8K+2)`-parameter sensing model.
//!
//! The noiseless signal is `V(η) = Σ_k u_k β_kᵀ` with
//! `u_k = (w ⊙ (c(τ_k) ⊗ d(ν_k))) ⊗ (α_k a_sr,k)`, `β_k = Sᵀ v_k`, and
//! `v_k = b_rx ⊗ b_tx,k` (beyond-diagonal) or `b_rx ⊙ b_tx,k` (diagonal).
//! Every partial derivative keeps that outer-product form, so the Fisher
//! information `F_ij = (2/σ²) Re tr(∂Vᵢᴴ ∂Vⱼ)` reduces to inner products of
//! short vectors and never forms the `L_SR·MQ × T` derivative matrices.
//!
//! The same derivatives drive [`ml_refine`], a Levenberg–Marquardt
//! maximum-likelihood polish of a parameter estimate on the received data.

use std::f64::consts::PI;
use std::fmt::Write as _;

use faer::{c64, Mat, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{czero, CMat};
use crate::scenario::{
    delay_steering, doppler_steering, kron_vec, ura_steering, ArrayGeometry, RisMode,
    ScenarioConfig, Scene, TargetParams,
};

/// FIM eigenvalues below this fraction of the largest are treated as null.
pub const NULL_EIG_TOL: f64 = 1e-12;
/// Squared null-space support above which a parameter is flagged.
pub const NULL_SUPPORT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    AlphaRe,
    AlphaIm,
    Tau,
    Nu,
    PhiSr,
    ThetaSr,
    PhiRis,
    ThetaRis,
}

impl ParamKind {
    pub const ALL: [ParamKind; 8] = [
        ParamKind::AlphaRe,
        ParamKind::AlphaIm,
        ParamKind::Tau,
        ParamKind::Nu,
        ParamKind::PhiSr,
        ParamKind::ThetaSr,
        ParamKind::PhiRis,
        ParamKind::ThetaRis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamKind::AlphaRe => "alpha_re",
            ParamKind::AlphaIm => "alpha_im",
            ParamKind::Tau => "tau",
            ParamKind::Nu => "nu",
            ParamKind::PhiSr => "phi_sr",
            ParamKind::ThetaSr => "theta_sr",
            ParamKind::PhiRis => "phi_ris",
            ParamKind::ThetaRis => "theta_ris",
        }
    }

    fn is_ris(self) -> bool {
        matches!(self, ParamKind::PhiRis | ParamKind::ThetaRis)
    }
}

/// One entry of `η`. `target == None` is the shared RIS arrival angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSlot {
    pub kind: ParamKind,
    pub target: Option<usize>,
}

impl ParamSlot {
    pub fn name(&self) -> String {
        match self.target {
            Some(k) => format!("{}[{k}]", self.kind.name()),
            None => format!("{}[arrival]", self.kind.name()),
        }
    }
}

/// Canonical layout of `η`: blocks in [`ParamKind::ALL`] order, each of
/// length `K`, except the two RIS blocks which hold the arrival angle first
/// and then the `K` departure angles.
pub fn param_layout(k: usize) -> Vec<ParamSlot> {
    let mut out = Vec::with_capacity(8 * k + 2);
    for kind in ParamKind::ALL {
        if kind.is_ris() {
            out.push(ParamSlot { kind, target: None });
        }
        out.extend((0..k).map(|t| ParamSlot {
            kind,
            target: Some(t),
        }));
    }
    out
}

/// Real parameter vector `η`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub alpha_re: Vec<f64>,
    pub alpha_im: Vec<f64>,
    pub tau: Vec<f64>,
    pub nu: Vec<f64>,
    pub phi_sr: Vec<f64>,
    pub theta_sr: Vec<f64>,
    /// Arrival angle first, then `K` departure angles.
    pub phi_ris: Vec<f64>,
    pub theta_ris: Vec<f64>,
}

impl ParamVector {
    pub fn from_targets(config: &ScenarioConfig, targets: &[TargetParams]) -> Self {
        let col = |f: fn(&TargetParams) -> f64| targets.iter().map(f).collect::<Vec<_>>();
        let mut phi_ris = vec![config.phi_ris_a];
        phi_ris.extend(col(|t| t.phi_ris_d));
        let mut theta_ris = vec![config.theta_ris_a];
        theta_ris.extend(col(|t| t.theta_ris_d));
        Self {
            alpha_re: col(|t| t.alpha.re),
            alpha_im: col(|t| t.alpha.im),
            tau: col(|t| t.tau),
            nu: col(|t| t.nu),
            phi_sr: col(|t| t.phi_sr),
            theta_sr: col(|t| t.theta_sr),
            phi_ris,
            theta_ris,
        }
    }

    pub fn from_scene(scene: &Scene) -> Self {
        Self::from_targets(&scene.config, &scene.targets)
    }

    pub fn k(&self) -> usize {
        self.tau.len()
    }

    pub fn len(&self) -> usize {
        8 * self.k() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn block(&self, kind: ParamKind) -> &Vec<f64> {
        match kind {
            ParamKind::AlphaRe => &self.alpha_re,
            ParamKind::AlphaIm => &self.alpha_im,
            ParamKind::Tau => &self.tau,
            ParamKind::Nu => &self.nu,
            ParamKind::PhiSr => &self.phi_sr,
            ParamKind::ThetaSr => &self.theta_sr,
            ParamKind::PhiRis => &self.phi_ris,
            ParamKind::ThetaRis => &self.theta_ris,
        }
    }

    fn block_mut(&mut self, kind: ParamKind) -> &mut Vec<f64> {
        match kind {
            ParamKind::AlphaRe => &mut self.alpha_re,
            ParamKind::AlphaIm => &mut self.alpha_im,
            ParamKind::Tau => &mut self.tau,
            ParamKind::Nu => &mut self.nu,
            ParamKind::PhiSr => &mut self.phi_sr,
            ParamKind::ThetaSr => &mut self.theta_sr,
            ParamKind::PhiRis => &mut self.phi_ris,
            ParamKind::ThetaRis => &mut self.theta_ris,
        }
    }

    fn offset(slot: ParamSlot) -> usize {
        match (slot.kind.is_ris(), slot.target) {
            (true, None) => 0,
            (true, Some(t)) => t + 1,
            (false, Some(t)) => t,
            (false, None) => unreachable!("non-RIS slots always name a target"),
        }
    }

    pub fn get(&self, slot: ParamSlot) -> f64 {
        self.block(slot.kind)[Self::offset(slot)]
    }

    pub fn set(&mut self, slot: ParamSlot, v: f64) {
        let o = Self::offset(slot);
        self.block_mut(slot.kind)[o] = v;
    }

    pub fn to_flat(&self) -> Vec<f64> {
        param_layout(self.k())
            .into_iter()
            .map(|s| self.get(s))
            .collect()
    }

    pub fn from_flat(k: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != 8 * k + 2 {
            return Err(Error::Dimension(format!(
                "η has {} entries, expected {}",
                flat.len(),
                8 * k + 2
            )));
        }
        let mut p = Self {
            alpha_re: vec![0.0; k],
            alpha_im: vec![0.0; k],
            tau: vec![0.0; k],
            nu: vec![0.0; k],
            phi_sr: vec![0.0; k],
            theta_sr: vec![0.0; k],
            phi_ris: vec![0.0; k + 1],
            theta_ris: vec![0.0; k + 1],
        };
        for (s, &v) in param_layout(k).into_iter().zip(flat) {
            p.set(s, v);
        }
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        let k = self.k();
        let ok = [
            &self.alpha_re,
            &self.alpha_im,
            &self.nu,
            &self.phi_sr,
            &self.theta_sr,
        ]
        .iter()
        .all(|b| b.len() == k)
            && self.phi_ris.len() == k + 1
            && self.theta_ris.len() == k + 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("inconsistent η block lengths".into()))
        }
    }
}

/// Known quantities of the signal model: dimensions, pilots, RIS schedule
/// and the ST steering.
#[derive(Debug, Clone)]
pub struct SignalModel {
    pub config: ScenarioConfig,
    pub mode: RisMode,
    /// `L_ST × MQ`.
    pub x: CMat,
    /// Stacked schedule, `N² × T` or `N × T`.
    pub s: CMat,
    /// `w = Xᵀ a_st`, length `MQ`.
    pub w: Vec<c64>,
}

impl SignalModel {
    pub fn new(config: &ScenarioConfig, x: &CMat, s: &CMat, mode: RisMode) -> Result<Self> {
        let n = config.n();
        let rows = match mode {
            RisMode::BeyondDiagonal => n * n,
            RisMode::Diagonal => n,
        };
        if x.nrows() != config.l_st() || x.ncols() != config.mq() || s.nrows() != rows {
            return Err(Error::Dimension(format!(
                "X {}×{}, S {}×{} for L_ST = {}, MQ = {}, N = {n}",
                x.nrows(),
                x.ncols(),
                s.nrows(),
                s.ncols(),
                config.l_st(),
                config.mq()
            )));
        }
        let a_st = config.a_st();
        let w = (0..x.ncols())
            .map(|c| (0..x.nrows()).map(|l| a_st[l] * x[(l, c)]).sum())
            .collect();
        Ok(Self {
            config: config.clone(),
            mode,
            x: x.clone(),
            s: s.clone(),
            w,
        })
    }

    pub fn from_scene(scene: &Scene) -> Result<Self> {
        Self::new(
            &scene.config,
            &scene.pilots,
            &scene.schedule.s,
            scene.schedule.mode,
        )
    }

    fn check(&self, eta: &ParamVector) -> Result<()> {
        eta.check()?;
        if eta.k() != self.config.k {
            return Err(Error::Dimension(format!(
                "η describes {} targets, model has K = {}",
                eta.k(),
                self.config.k
            )));
        }
        Ok(())
    }

    fn ris_vec(&self, rx: &[c64], tx: &[c64]) -> Vec<c64> {
        match self.mode {
            RisMode::BeyondDiagonal => kron_vec(rx, tx),
            RisMode::Diagonal => rx.iter().zip(tx).map(|(a, b)| a * b).collect(),
        }
    }

    /// `Sᵀ v`.
    fn schedule_project(&self, v: &[c64]) -> Vec<c64> {
        (0..self.s.ncols())
            .map(|t| self.s.col(t).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `(w ⊙ f) ⊗ (α a)`, indexed `l + L_SR·mq`.
    fn left_vec(&self, f: &[c64], alpha: c64, a: &[c64]) -> Vec<c64> {
        let wf: Vec<c64> = self.w.iter().zip(f).map(|(w, f)| w * f).collect();
        let aa: Vec<c64> = a.iter().map(|x| x * alpha).collect();
        kron_vec(&wf, &aa)
    }
}

/// Partial derivative of a steering vector with respect to one angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleWrt {
    Phi,
    Theta,
}

/// `∂a(φ, θ)/∂φ` or `∂a(φ, θ)/∂θ`: element `(iy, iz)` is multiplied by
/// `−jπ(iy cosφ sinθ − iz sinφ)` or `−jπ iy sinφ cosθ`.
pub fn d_steering(phi: f64, theta: f64, geom: ArrayGeometry, wrt: AngleWrt) -> Vec<c64> {
    let a = ura_steering(geom, phi, theta);
    a.iter()
        .enumerate()
        .map(|(n, &x)| {
            let (iy, iz) = geom.position(n);
            let (iy, iz) = (iy as f64, iz as f64);
            let g = match wrt {
                AngleWrt::Phi => PI * (iy * phi.cos() * theta.sin() - iz * phi.sin()),
                AngleWrt::Theta => PI * iy * phi.sin() * theta.cos(),
            };
            x * c64::new(0.0, -g)
        })
        .collect()
}

/// Per-target vectors at `η`.
struct TargetVectors {
    alpha: c64,
    a_sr: Vec<c64>,
    b_tx: Vec<c64>,
    c: Vec<c64>,
    d: Vec<c64>,
}

fn target_vectors(model: &SignalModel, eta: &ParamVector, k: usize) -> TargetVectors {
    let cfg = &model.config;
    TargetVectors {
        alpha: c64::new(eta.alpha_re[k], eta.alpha_im[k]),
        a_sr: ura_steering(cfg.sr, eta.phi_sr[k], eta.theta_sr[k]),
        b_tx: ura_steering(cfg.ris, eta.phi_ris[k + 1], eta.theta_ris[k + 1]),
        c: delay_steering(eta.tau[k], cfg.q, cfg.delta_f),
        d: doppler_steering(eta.nu[k], cfg.m, cfg.t_s()),
    }
}

/// `V(η) = Σ_k u_k β_kᵀ`, an `L_SR·MQ × T` matrix.
pub fn mean_signal(model: &SignalModel, eta: &ParamVector) -> Result<CMat> {
    model.check(eta)?;
    let terms = signal_terms(model, eta);
    Ok(assemble(&terms, model))
}

/// Outer-product terms `(x, y)` with `V = Σ x yᵀ`.
type Terms = Vec<(Vec<c64>, Vec<c64>)>;

fn assemble(terms: &Terms, model: &SignalModel) -> CMat {
    let rows = model.config.l_sr() * model.config.mq();
    let u = Mat::from_fn(rows, terms.len(), |i, j| terms[j].0[i]);
    let b = Mat::from_fn(model.s.ncols(), terms.len(), |i, j| terms[j].1[i]);
    if terms.is_empty() {
        return CMat::zeros(rows, model.s.ncols());
    }
    u * b.transpose()
}

fn signal_terms(model: &SignalModel, eta: &ParamVector) -> Terms {
    let cfg = &model.config;
    let b_rx = ura_steering(cfg.ris, eta.phi_ris[0], eta.theta_ris[0]);
    (0..eta.k())
        .map(|k| {
            let tv = target_vectors(model, eta, k);
            let f = kron_vec(&tv.c, &tv.d);
            (
                model.left_vec(&f, tv.alpha, &tv.a_sr),
                model.schedule_project(&model.ris_vec(&b_rx, &tv.b_tx)),
            )
        })
        .collect()
}

fn derivative_terms(model: &SignalModel, eta: &ParamVector, slot: ParamSlot) -> Terms {
    let cfg = &model.config;
    let (phi_a, theta_a) = (eta.phi_ris[0], eta.theta_ris[0]);
    let b_rx = ura_steering(cfg.ris, phi_a, theta_a);
    let wrt = match slot.kind {
        ParamKind::PhiSr | ParamKind::PhiRis => AngleWrt::Phi,
        _ => AngleWrt::Theta,
    };
    let Some(k) = slot.target else {
        // arrival angle: every target's RIS vector changes
        let db = d_steering(phi_a, theta_a, cfg.ris, wrt);
        return (0..eta.k())
            .map(|k| {
                let tv = target_vectors(model, eta, k);
                let f = kron_vec(&tv.c, &tv.d);
                (
                    model.left_vec(&f, tv.alpha, &tv.a_sr),
                    model.schedule_project(&model.ris_vec(&db, &tv.b_tx)),
                )
            })
            .collect();
    };
    let tv = target_vectors(model, eta, k);
    let beta = || model.schedule_project(&model.ris_vec(&b_rx, &tv.b_tx));
    let f = kron_vec(&tv.c, &tv.d);
    let term = match slot.kind {
        ParamKind::AlphaRe => (model.left_vec(&f, c64::new(1.0, 0.0), &tv.a_sr), beta()),
        ParamKind::AlphaIm => (model.left_vec(&f, c64::new(0.0, 1.0), &tv.a_sr), beta()),
        ParamKind::Tau => {
            let dc: Vec<c64> =
                tv.c.iter()
                    .enumerate()
                    .map(|(q, &x)| x * c64::new(0.0, -2.0 * PI * q as f64 * cfg.delta_f))
                    .collect();
            (
                model.left_vec(&kron_vec(&dc, &tv.d), tv.alpha, &tv.a_sr),
                beta(),
            )
        }
        ParamKind::Nu => {
            let dd: Vec<c64> =
                tv.d.iter()
                    .enumerate()
                    .map(|(m, &x)| x * c64::new(0.0, 2.0 * PI * m as f64 * cfg.t_s()))
                    .collect();
            (
                model.left_vec(&kron_vec(&tv.c, &dd), tv.alpha, &tv.a_sr),
                beta(),
            )
        }
        ParamKind::PhiSr | ParamKind::ThetaSr => {
            let da = d_steering(eta.phi_sr[k], eta.theta_sr[k], cfg.sr, wrt);
            (model.left_vec(&f, tv.alpha, &da), beta())
        }
        ParamKind::PhiRis | ParamKind::ThetaRis => {
            let db = d_steering(eta.phi_ris[k + 1], eta.theta_ris[k + 1], cfg.ris, wrt);
            (
                model.left_vec(&f, tv.alpha, &tv.a_sr),
                model.schedule_project(&model.ris_vec(&b_rx, &db)),
            )
        }
    };
    vec![term]
}

/// `∂V/∂η_i` in the canonical layout.
pub fn d_mean_signal(model: &SignalModel, eta: &ParamVector, i: usize) -> Result<CMat> {
    model.check(eta)?;
    let layout = param_layout(eta.k());
    let slot = *layout.get(i).ok_or_else(|| {
        Error::InvalidParameter(format!("parameter index {i} ≥ {}", layout.len()))
    })?;
    Ok(assemble(&derivative_terms(model, eta, slot), model))
}

/// Real symmetric Fisher information matrix.
#[derive(Debug, Clone)]
pub struct FimMatrix {
    pub f: Mat<f64>,
    pub noise_variance: f64,
    pub k: usize,
}

fn dot(a: &[c64], b: &[c64]) -> c64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// `F_ij = (2/σ²) Re tr(∂Vᵢᴴ ∂Vⱼ)`, evaluated on the outer-product terms.
pub fn fim(model: &SignalModel, eta: &ParamVector, sigma2: f64) -> Result<FimMatrix> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidParameter(format!("σ² = {sigma2}")));
    }
    model.check(eta)?;
    let layout = param_layout(eta.k());
    let terms: Vec<Terms> = layout
        .iter()
        .map(|&s| derivative_terms(model, eta, s))
        .collect();
    let p = layout.len();
    let rows: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|i| {
            (0..p)
                .map(|j| {
                    let mut acc = czero();
                    for (xa, ya) in &terms[i] {
                        for (xb, yb) in &terms[j] {
                            acc += dot(xa, xb) * dot(ya, yb);
                        }
                    }
                    acc.re
                })
                .collect()
        })
        .collect();
    let scale = 2.0 / sigma2;
    // symmetrise from the upper triangle so F is exactly symmetric
    let f = Mat::from_fn(p, p, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        scale * rows[a][b]
    });
    Ok(FimMatrix {
        f,
        noise_variance: sigma2,
        k: eta.k(),
    })
}

/// Per-parameter bounds `√diag(F⁻¹)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrlbReport {
    pub names: Vec<String>,
    pub bounds: Vec<f64>,
    /// Same bounds with delay divided by `T_s` and Doppler multiplied by `T_s`.
    pub normalized: Vec<f64>,
    /// Parameters with support on the FIM null space.
    pub unidentifiable: Vec<String>,
    /// Condition number of the Jacobi-scaled FIM.
    pub cond: f64,
}

impl CrlbReport {
    pub fn bound(&self, kind: ParamKind, target: Option<usize>) -> Option<f64> {
        let name = ParamSlot { kind, target }.name();
        self.names
            .iter()
            .position(|n| *n == name)
            .map(|i| self.bounds[i])
    }

    /// `parameter,value,bound,normalized_bound` rows.
    pub fn to_csv(&self, eta: &ParamVector) -> String {
        let mut s = String::from("parameter,value,bound,normalized_bound\n");
        for ((name, v), (b, nb)) in self
            .names
            .iter()
            .zip(eta.to_flat())
            .zip(self.bounds.iter().zip(&self.normalized))
        {
            let _ = writeln!(s, "{name},{v:e},{b:e},{nb:e}");
        }
        s
    }
}

/// Inverts the FIM after Jacobi scaling `D F D` with `D = diag(F)^{-1/2}`.
/// Eigenvalues below `1e-12·λ_max` are dropped, and parameters touching the
/// dropped directions are reported as unidentifiable.
pub fn crlb(fim: &FimMatrix, t_s: f64) -> Result<CrlbReport> {
    let p = fim.f.nrows();
    let layout = param_layout(fim.k);
    if layout.len() != p {
        return Err(Error::Dimension(format!("FIM is {p}×{p}, K = {}", fim.k)));
    }
    let d: Vec<f64> = (0..p)
        .map(|i| {
            let v = fim.f[(i, i)];
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let scaled = Mat::from_fn(p, p, |i, j| d[i] * fim.f[(i, j)] * d[j]);
    let eig = scaled
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Decomposition(format!("eigen: {e:?}")))?;
    let vals: Vec<f64> = eig.S().column_vector().iter().copied().collect();
    let u = eig.U();
    let lmax = vals.iter().cloned().fold(0.0, f64::max);
    let lmin = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut var = vec![0.0; p];
    let mut null = vec![0.0; p];
    for (j, &l) in vals.iter().enumerate() {
        let keep = lmax > 0.0 && l > NULL_EIG_TOL * lmax;
        for i in 0..p {
            let w = u[(i, j)] * u[(i, j)];
            if keep {
                var[i] += w / l;
            } else {
                null[i] += w;
            }
        }
    }
    let mut names = Vec::with_capacity(p);
    let mut bounds = Vec::with_capacity(p);
    let mut normalized = Vec::with_capacity(p);
    let mut unidentifiable = Vec::new();
    for (i, slot) in layout.iter().enumerate() {
        let name = slot.name();
        let b = d[i] * var[i].sqrt();
        let nb = match slot.kind {
            ParamKind::Tau => b / t_s,
            ParamKind::Nu => b * t_s,
            _ => b,
        };
        if null[i] > NULL_SUPPORT_TOL || d[i] == 0.0 {
            unidentifiable.push(name.clone());
        }
        names.push(name);
        bounds.push(b);
        normalized.push(nb);
    }
    Ok(CrlbReport {
        names,
        bounds,
        normalized,
        unidentifiable,
        cond: if lmin > 0.0 {
            lmax / lmin
        } else {
            f64::INFINITY
        },
    })
}

/// FIM and bounds at the true parameters of a scene for a given noise
/// variance.
pub fn scene_crlb(scene: &Scene, sigma2: f64) -> Result<(ParamVector, CrlbReport)> {
    let model = SignalModel::from_scene(scene)?;
    let eta = ParamVector::from_scene(scene);
    let f = fim(&model, &eta, sigma2)?;
    let r = crlb(&f, scene.config.t_s())?;
    Ok((eta, r))
}

/// Noise variance per entry for a target SNR, `‖V‖²_F / (SNR · numel)`.
pub fn noise_variance_for_snr(v: &CMat, snr_db: f64) -> f64 {
    let numel = (v.nrows() * v.ncols()) as f64;
    v.squared_norm_l2() / (10f64.powf(snr_db / 10.0) * numel)
}

/// Relative residual decrease below which [`ml_refine`] stops.
pub const ML_REFINE_TOL: f64 = 1e-10;

/// Outcome of [`ml_refine`].
#[derive(Debug, Clone)]
pub struct MlRefinement {
    pub eta: ParamVector,
    /// `‖Y − V(η)‖²` at the start and after every accepted step.
    pub residual_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Levenberg–Marquardt maximum-likelihood refinement of `η` on received data
/// `y` (`L_SR·MQ × T`). Each step solves `(F + λ diag F) Δ = g` with `F` the
/// unit-noise FIM and `g` the negative half-gradient direction, in the same
/// Jacobi-scaled eigenbasis as [`crlb`], so FIM null directions are left
/// untouched. Only steps that lower `‖Y − V(η)‖²` are accepted.
pub fn ml_refine(
    model: &SignalModel,
    y: &CMat,
    eta0: &ParamVector,
    max_iter: usize,
) -> Result<MlRefinement> {
    model.check(eta0)?;
    let rows = model.config.l_sr() * model.config.mq();
    if y.nrows() != rows || y.ncols() != model.s.ncols() {
        return Err(Error::Dimension(format!(
            "Y is {}×{}, model expects {rows}×{}",
            y.nrows(),
            y.ncols(),
            model.s.ncols()
        )));
    }
    let k = eta0.k();
    let layout = param_layout(k);
    let p = layout.len();
    let residual = |eta: &ParamVector| -> Result<(CMat, f64)> {
        let r = y - mean_signal(model, eta)?;
        let e = r.squared_norm_l2();
        Ok((r, e))
    };
    let mut eta = eta0.clone();
    let (mut r, mut e) = residual(&eta)?;
    let mut out = MlRefinement {
        eta: eta.clone(),
        residual_history: vec![e],
        iterations: 0,
        converged: false,
    };
    let mut lambda = 1e-3;
    while out.iterations < max_iter {
        out.iterations += 1;
        let f = fim(model, &eta, 1.0)?.f;
        // g_i = 2 Re tr(∂Vᵢᴴ R) = 2 Re Σ xᴴ R ȳ over the outer-product terms
        let terms: Vec<Terms> = layout
            .iter()
            .map(|&slot| derivative_terms(model, &eta, slot))
            .collect();
        let flat: Vec<&(Vec<c64>, Vec<c64>)> = terms.iter().flatten().collect();
        let yc = Mat::from_fn(model.s.ncols(), flat.len(), |t, j| flat[j].1[t].conj());
        let ry = &r * &yc;
        let mut g = vec![0.0; p];
        let mut col = 0;
        for (gi, ts) in g.iter_mut().zip(&terms) {
            for (x, _) in ts {
                *gi += 2.0
                    * (0..rows)
                        .map(|row| x[row].conj() * ry[(row, col)])
                        .sum::<c64>()
                        .re;
                col += 1;
            }
        }
        let d: Vec<f64> = (0..p)
            .map(|i| {
                if f[(i, i)] > 0.0 {
                    1.0 / f[(i, i)].sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let scaled = Mat::from_fn(p, p, |i, j| d[i] * f[(i, j)] * d[j]);
        let eig = scaled
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Decomposition(format!("eigen: {e:?}")))?;
        let vals: Vec<f64> = eig.S().column_vector().iter().copied().collect();
        let u = eig.U();
        let lmax = vals.iter().cloned().fold(0.0, f64::max);
        let dg: Vec<f64> = (0..p).map(|i| d[i] * g[i]).collect();
        let proj: Vec<f64> = (0..p)
            .map(|j| (0..p).map(|i| u[(i, j)] * dg[i]).sum())
            .collect();
        let mut accepted = false;
        for _ in 0..12 {
            let step: Vec<f64> = (0..p)
                .map(|i| {
                    let z: f64 = (0..p)
                        .filter(|&j| lmax > 0.0 && vals[j] > NULL_EIG_TOL * lmax)
                        .map(|j| u[(i, j)] * proj[j] / (vals[j] + lambda))
                        .sum();
                    d[i] * z
                })
                .collect();
            let flat: Vec<f64> = eta
                .to_flat()
                .iter()
                .zip(&step)
                .map(|(a, b)| a + b)
                .collect();
            let cand = ParamVector::from_flat(k, &flat)?;
            let (rc, ec) = residual(&cand)?;
            if ec < e {
                accepted = true;
                let rel = (e - ec) / e.max(f64::MIN_POSITIVE);
                eta = cand;
                r = rc;
                e = ec;
                lambda = (lambda / 10.0).max(1e-12);
                out.residual_history.push(e);
                if rel < ML_REFINE_TOL {
                    out.converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            out.converged = true;
        }
        if out.converged {
            break;
        }
    }
    out.eta = eta;
    Ok(out)
}
