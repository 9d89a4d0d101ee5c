//! Parameter extraction from fitted factors: ESPRIT frequency estimates,
//! angle inversion, manifold refinement, closed-form gains and
//! estimate-to-truth matching.

use std::f64::consts::{FRAC_PI_2, PI};

use faer::{c64, Mat};
use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{czero, hermitian_pinv, svd, CMat};
use crate::scenario::{ura_steering, ura_steering_freq, ArrayGeometry, TargetParams};

/// `sin φ` below this makes the azimuth inversion singular.
pub const MIN_SIN_ELEVATION: f64 = 1e-12;

/// Largest `K` accepted by the exhaustive permutation searches.
pub const MAX_MATCH_K: usize = 6;

/// Frequency `ω` of a single-tone vector `v_i ∝ e^{jω i}`, from the LS
/// shift-invariance ratio `ρ = v₁:ₙ₋₁ᴴ v₂:ₙ / ‖v₁:ₙ₋₁‖²`.
pub fn esprit_1d(v: &[c64]) -> Result<f64> {
    if v.len() < 2 {
        return Err(Error::Dimension(format!(
            "ESPRIT needs n ≥ 2, got {}",
            v.len()
        )));
    }
    let mut num = czero();
    let mut den = 0.0;
    for w in v.windows(2) {
        num += w[0].conj() * w[1];
        den += w[0].norm_sqr();
    }
    if den == 0.0 || num == czero() {
        return Err(Error::ZeroInput("ESPRIT input vector is zero".into()));
    }
    Ok(num.arg())
}

/// LS shift ratio pooled over all index pairs `(i, i + stride)`.
fn pooled_ratio(v: &[c64], pairs: impl Iterator<Item = (usize, usize)>) -> Result<c64> {
    let mut num = czero();
    let mut den = 0.0;
    for (a, b) in pairs {
        num += v[a].conj() * v[b];
        den += v[a].norm_sqr();
    }
    if den == 0.0 || num == czero() {
        return Err(Error::ZeroInput("ESPRIT input vector is zero".into()));
    }
    Ok(num / den)
}

/// Spatial frequencies `(μ, ψ)` of a planar-array vector, with element
/// `iz + iy·N_z` carrying phase `−(iy μ + iz ψ)`. Each frequency is averaged
/// over every parallel subarray of the other axis.
pub fn esprit_2d_freqs(v: &[c64], geom: ArrayGeometry) -> Result<(f64, f64)> {
    let (ny, nz) = (geom.n_y, geom.n_z);
    if v.len() != ny * nz || ny < 2 || nz < 2 {
        return Err(Error::Dimension(format!(
            "2-D ESPRIT needs a {ny}×{nz} grid with both sides ≥ 2, got {} entries",
            v.len()
        )));
    }
    let z_pairs =
        (0..ny).flat_map(|iy| (0..nz - 1).map(move |iz| (iz + iy * nz, iz + 1 + iy * nz)));
    let y_pairs =
        (0..ny - 1).flat_map(|iy| (0..nz).map(move |iz| (iz + iy * nz, iz + (iy + 1) * nz)));
    let psi = -pooled_ratio(v, z_pairs)?.arg();
    let mu = -pooled_ratio(v, y_pairs)?.arg();
    Ok((mu, psi))
}

/// Maximiser of `g` on `[lo, hi]` by golden-section search, assuming a
/// single peak in the bracket.
fn golden_max(mut lo: f64, mut hi: f64, g: impl Fn(f64) -> f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut x1, mut x2) = (hi - r * (hi - lo), lo + r * (hi - lo));
    let (mut g1, mut g2) = (g(x1), g(x2));
    while hi - lo > 1e-13 * (1.0 + lo.abs().max(hi.abs())) {
        if g1 < g2 {
            lo = x1;
            x1 = x2;
            g1 = g2;
            x2 = lo + r * (hi - lo);
            g2 = g(x2);
        } else {
            hi = x2;
            x2 = x1;
            g2 = g1;
            x1 = hi - r * (hi - lo);
            g1 = g(x1);
        }
    }
    0.5 * (lo + hi)
}

/// Polishes a single-tone frequency to the periodogram peak
/// `argmax |Σᵢ vᵢ e^{−jωi}|²` inside the main lobe around `w0`.
pub fn ml_freq_1d(v: &[c64], w0: f64) -> f64 {
    let n = v.len().max(2) as f64;
    let p = |w: f64| {
        v.iter()
            .enumerate()
            .map(|(i, z)| z * c64::cis(-w * i as f64))
            .sum::<c64>()
            .norm_sqr()
    };
    golden_max(w0 - PI / n, w0 + PI / n, p)
}

/// Planar counterpart of [`ml_freq_1d`]: maximises `|a(μ, ψ)ᴴ v|²` by
/// alternating searches along each axis, starting from `(mu, psi)`.
pub fn ml_freqs_2d(v: &[c64], geom: ArrayGeometry, (mut mu, mut psi): (f64, f64)) -> (f64, f64) {
    let p = |mu: f64, psi: f64| {
        ura_steering_freq(geom, mu, psi)
            .iter()
            .zip(v)
            .map(|(a, z)| a.conj() * z)
            .sum::<c64>()
            .norm_sqr()
    };
    let (hy, hz) = (PI / geom.n_y.max(2) as f64, PI / geom.n_z.max(2) as f64);
    for _ in 0..8 {
        let (m0, s0) = (mu, psi);
        mu = golden_max(mu - hy, mu + hy, |x| p(x, psi));
        psi = golden_max(psi - hz, psi + hz, |x| p(mu, x));
        if (mu - m0).abs() < 1e-12 && (psi - s0).abs() < 1e-12 {
            break;
        }
    }
    (mu, psi)
}

/// Planar-array ESPRIT result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Angles2d {
    pub mu: f64,
    pub psi: f64,
    pub phi: f64,
    pub theta: f64,
}

/// `φ = arccos(ψ/π)`, `θ = arcsin(μ / (π sin φ))` on the `[0, π/2]` branch.
/// Anything off the branch is an error.
pub fn invert_angles(mu: f64, psi: f64) -> Result<(f64, f64)> {
    let c = psi / PI;
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::InversionDomain(format!("ψ/π = {c}")));
    }
    let phi = c.acos();
    let sp = phi.sin();
    if sp < MIN_SIN_ELEVATION {
        return Err(Error::SingularElevation(phi));
    }
    let s = mu / (PI * sp);
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InversionDomain(format!("μ/(π sin φ) = {s}")));
    }
    Ok((phi, s.asin()))
}

pub fn esprit_2d(v: &[c64], geom: ArrayGeometry) -> Result<Angles2d> {
    let (mu, psi) = esprit_2d_freqs(v, geom)?;
    let (phi, theta) = invert_angles(mu, psi)?;
    Ok(Angles2d {
        mu,
        psi,
        phi,
        theta,
    })
}

/// Projects a wrapped frequency in `(−π, π]` onto `[0, π]` along the circle.
fn project_freq(x: f64) -> (f64, bool) {
    if x >= 0.0 {
        (x, false)
    } else if x < -FRAC_PI_2 {
        (PI, true)
    } else {
        (0.0, true)
    }
}

/// Branch-clamped inversion used on noisy estimates. Returns `(φ, θ)` and
/// whether any clamp was applied.
pub fn invert_angles_clamped(mu: f64, psi: f64) -> (f64, f64, bool) {
    let (mu, cm) = project_freq(mu);
    let (psi, cp) = project_freq(psi);
    let phi = (psi / PI).min(1.0).acos();
    let sp = phi.sin();
    if sp < MIN_SIN_ELEVATION {
        return (phi, 0.0, true);
    }
    let s = mu / (PI * sp);
    let clamped = s > 1.0;
    (phi, s.min(1.0).asin(), cm || cp || clamped)
}

/// `√σ_k u_k` from the rank-`K` SVD of a factor matrix.
pub fn extract_per_target(factor: &CMat) -> Result<Vec<Vec<c64>>> {
    let k = factor.ncols();
    let (u, s, _) = svd(factor.as_ref())?;
    Ok((0..k.min(s.len()))
        .map(|j| {
            let sc = s[j].sqrt();
            u.col(j).iter().map(|x| x * sc).collect()
        })
        .collect())
}

/// Steering matrix with one exact column per `(φ, θ)` pair.
pub fn refine_manifold(geom: ArrayGeometry, angles: &[(f64, f64)]) -> CMat {
    let cols: Vec<Vec<c64>> = angles
        .iter()
        .map(|&(p, t)| ura_steering(geom, p, t))
        .collect();
    Mat::from_fn(geom.len(), angles.len(), |i, j| cols[j][i])
}

/// Steering matrix rebuilt from spatial frequencies `(μ, ψ)`.
pub fn refine_manifold_freqs(geom: ArrayGeometry, freqs: &[(f64, f64)]) -> CMat {
    let cols: Vec<Vec<c64>> = freqs
        .iter()
        .map(|&(m, p)| ura_steering_freq(geom, m, p))
        .collect();
    Mat::from_fn(geom.len(), freqs.len(), |i, j| cols[j][i])
}

/// Closed-form gains of `R ≈ Σ_k α_k ḡ_k j̄_kᵀ`.
#[derive(Debug, Clone)]
pub struct GainFit {
    pub alpha: Vec<c64>,
    /// `‖R − Σ α_k ḡ_k j̄_kᵀ‖²_F`.
    pub residual: f64,
}

/// Gram-form LS for `vec(R) = (J̄ ⋄ Ḡ) α`: the normal matrix is
/// `(J̄ᴴJ̄) ∘ (ḠᴴḠ)` and the right side is `diag(Ḡᴴ R J̄*)`.
fn gains_from_grams(
    gg: &CMat,
    jj: &CMat,
    m: &CMat,
    perm: &[usize],
    r_norm2: f64,
) -> Result<GainFit> {
    let k = perm.len();
    let gram = Mat::from_fn(k, k, |i, l| jj[(perm[i], perm[l])] * gg[(i, l)]);
    let rhs = Mat::from_fn(k, 1, |i, _| m[(i, perm[i])]);
    let (inv, cond) = hermitian_pinv(gram.as_ref(), 0.0)?;
    // σ_min(J̄ ⋄ Ḡ) < 1e-14·σ_max, i.e. Gram condition above 1e28
    if !(cond < 1e28) {
        return Err(Error::RankDeficient(format!(
            "gain LS system has condition {cond:.3e}"
        )));
    }
    let alpha = &inv * &rhs;
    let fitted: c64 = (0..k).map(|i| rhs[(i, 0)].conj() * alpha[(i, 0)]).sum();
    Ok(GainFit {
        alpha: (0..k).map(|i| alpha[(i, 0)]).collect(),
        residual: (r_norm2 - fitted.re).max(0.0),
    })
}

/// `α̂ = (J̄ ⋄ Ḡ)^† vec(R)` for `R` of shape `rows(Ḡ) × rows(J̄)`.
pub fn estimate_gains(r: &CMat, g_bar: &CMat, j_bar: &CMat) -> Result<GainFit> {
    let k = g_bar.ncols();
    let perm: Vec<usize> = (0..k).collect();
    pair_and_estimate(r, g_bar, j_bar, &[perm]).map(|(f, _)| f)
}

/// Tries each candidate pairing (`Ḡ` column `i` with `J̄` column `perm[i]`) and
/// keeps the one with the smallest gain-LS residual.
pub fn pair_and_estimate(
    r: &CMat,
    g_bar: &CMat,
    j_bar: &CMat,
    perms: &[Vec<usize>],
) -> Result<(GainFit, Vec<usize>)> {
    let k = g_bar.ncols();
    if j_bar.ncols() != k || r.nrows() != g_bar.nrows() || r.ncols() != j_bar.nrows() {
        return Err(Error::Dimension(format!(
            "R {}×{}, Ḡ {}×{}, J̄ {}×{}",
            r.nrows(),
            r.ncols(),
            g_bar.nrows(),
            k,
            j_bar.nrows(),
            j_bar.ncols()
        )));
    }
    if g_bar.nrows() * j_bar.nrows() < k {
        return Err(Error::Identifiability(vec![format!(
            "L_SR·N·MQ·N ≥ K ({} < {k})",
            g_bar.nrows() * j_bar.nrows()
        )]));
    }
    let gg = g_bar.adjoint() * g_bar;
    let jj = j_bar.adjoint() * j_bar;
    let m = (g_bar.adjoint() * r) * j_bar.conjugate();
    let r_norm2 = r.squared_norm_l2();
    let mut best: Option<(GainFit, Vec<usize>)> = None;
    for p in perms {
        let fit = gains_from_grams(&gg, &jj, &m, p, r_norm2)?;
        if best.as_ref().is_none_or(|(b, _)| fit.residual < b.residual) {
            best = Some((fit, p.clone()));
        }
    }
    best.ok_or_else(|| Error::InvalidParameter("no pairing candidates".into()))
}

/// All permutations of `0..k`, identity first.
pub fn permutations(k: usize) -> Result<Vec<Vec<usize>>> {
    if k > MAX_MATCH_K {
        return Err(Error::InvalidParameter(format!(
            "exhaustive search supports K ≤ {MAX_MATCH_K}, got {k}"
        )));
    }
    Ok((0..k).permutations(k).collect())
}

/// One estimated target. Diagonal-RIS estimates carry no RIS departure
/// angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEstimate {
    pub phi_sr: f64,
    pub theta_sr: f64,
    pub phi_ris_d: Option<f64>,
    pub theta_ris_d: Option<f64>,
    pub tau: f64,
    pub nu: f64,
    #[serde(with = "crate::scenario::complex_serde")]
    pub alpha: c64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub targets: Vec<TargetEstimate>,
    /// Shared RIS arrival angles; absent for a diagonal RIS.
    pub phi_ris_a: Option<f64>,
    pub theta_ris_a: Option<f64>,
    /// `permutation[i]` is the ground-truth index of estimate `i`, once matched.
    pub permutation: Option<Vec<usize>>,
    /// Angle inversions that needed a branch clamp.
    pub clamps: usize,
}

impl EstimateReport {
    /// Estimates reordered to follow the ground truth.
    pub fn aligned(&self) -> Vec<TargetEstimate> {
        match &self.permutation {
            None => self.targets.clone(),
            Some(p) => {
                let mut out = self.targets.clone();
                for (i, &t) in p.iter().enumerate() {
                    out[t] = self.targets[i].clone();
                }
                out
            }
        }
    }
}

fn match_cost(t: &TargetParams, e: &TargetEstimate, t_s: f64) -> f64 {
    let mut d = [
        (e.tau - t.tau) / t_s,
        (e.nu - t.nu) * t_s,
        e.phi_sr - t.phi_sr,
        e.theta_sr - t.theta_sr,
    ]
    .iter()
    .map(|x| x * x)
    .sum::<f64>();
    if let (Some(p), Some(q)) = (e.phi_ris_d, e.theta_ris_d) {
        d += (p - t.phi_ris_d).powi(2) + (q - t.theta_ris_d).powi(2);
    }
    d
}

/// Bijection estimate → truth with the smallest total squared normalised
/// distance (`τ/T_s`, `ν·T_s`, angles in radians).
pub fn match_targets(
    truth: &[TargetParams],
    est: &[TargetEstimate],
    t_s: f64,
) -> Result<Vec<usize>> {
    if truth.len() != est.len() {
        return Err(Error::Dimension(format!(
            "{} true targets vs {} estimates",
            truth.len(),
            est.len()
        )));
    }
    let k = truth.len();
    let cost: Vec<Vec<f64>> = est
        .iter()
        .map(|e| truth.iter().map(|t| match_cost(t, e, t_s)).collect())
        .collect();
    let mut best = (f64::INFINITY, (0..k).collect::<Vec<_>>());
    for p in permutations(k)? {
        let c: f64 = p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        if c < best.0 {
            best = (c, p);
        }
    }
    Ok(best.1)
}
