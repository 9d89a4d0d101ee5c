//! Stage-two factor fitting.
//!
//! [`als_parafac3`] is a plain PARAFAC alternating least squares engine with
//! optional fixed factors. [`fit_angular`] applies it to the `K × L_SR × N`
//! tensor `𝒢̂` and yields the SR and RIS-departure steering factors.
//! [`fit_nested`] handles the `MQ × N × K` tensor `𝒥̂`. A bilinear loop first
//! separates the ST–RIS channel `H` from `[𝓕]₍₁₎`, and a second PARAFAC fit
//! then splits `𝓕` into Doppler and delay factors.
//!
//! Every loop stops once the squared residual `e(i)` changes by less than
//! `tol · e(i−1)`, reaches an exact fit, or hits `max_iter`. Each ALS sweep is
//! followed by an exact line search along the sweep's step.
//!
//! Both PARAFAC models have a square `K × K` mode-1 factor, and plain ALS
//! from a random start stalls for long stretches (swamps) when target
//! steering or Doppler columns are close to collinear. The angular fit is
//! therefore also run from an algebraic [`gevd_init`] start, and the inner
//! delay–Doppler fit from [`cross_stage_init`], which uses the angular
//! factors; the lower residual wins.

use faer::{c64, Mat};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{czero, pinv, svd, CMat, PINV_RCOND};
use crate::scenario::{stream_rng, Stream};
use crate::tensor::{fold, khatri_rao, unfold, Mode, ParafacFactors3, Tensor3};

/// Residual below this fraction of `‖T‖²` counts as an exact fit.
pub const EXACT_FIT: f64 = 1e-24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMethod {
    Random,
    Hosvd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlsOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub init: InitMethod,
    pub seed: u64,
    /// Exact line search along each sweep's step; the extrapolated point is
    /// kept only when it lowers the residual.
    pub line_search: bool,
}

impl Default for AlsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-6,
            init: InitMethod::Random,
            seed: 0,
            line_search: true,
        }
    }
}

impl AlsOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || self.tol <= 0.0 || !self.tol.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "max_iter = {}, tol = {}",
                self.max_iter, self.tol
            )));
        }
        Ok(())
    }

    /// Same options with a derived seed, so that sibling fits in one trial use
    /// different random starts.
    pub fn with_salt(&self, salt: u64) -> Self {
        Self {
            seed: crate::scenario::mix_seed(self.seed, salt),
            ..self.clone()
        }
    }
}

/// Iteration record shared by every fitting loop.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FitTrace {
    /// `e(0)` (initial point) followed by `e(i)` after every sweep.
    pub residual_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Squared norm of the fitted tensor.
    pub norm2: f64,
    /// Least-squares steps where the pseudoinverse cutoff discarded directions.
    pub pinv_warnings: usize,
    /// Which starting point produced this fit.
    pub start: String,
}

impl FitTrace {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(0.0)
    }

    /// `e / ‖T‖²`.
    pub fn relative_residual(&self) -> f64 {
        if self.norm2 == 0.0 {
            0.0
        } else {
            self.final_residual() / self.norm2
        }
    }

    /// Whether the history is nonincreasing up to floating-point round-off.
    pub fn is_monotone(&self) -> bool {
        self.residual_history
            .windows(2)
            .all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-13 * self.norm2)
    }

    fn push(&mut self, e: f64, tol: f64) -> bool {
        let prev = self.residual_history.last().copied();
        self.residual_history.push(e);
        if e <= EXACT_FIT * self.norm2 {
            return true;
        }
        match prev {
            Some(p) => (p - e).abs() < tol * p,
            None => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AlsFit {
    pub factors: ParafacFactors3,
    pub trace: FitTrace,
}

fn random_factor(rows: usize, cols: usize, rng: &mut impl Rng) -> CMat {
    Mat::from_fn(rows, cols, |_, _| {
        c64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

/// Truncated HOSVD initialisation: the leading `rank` left singular vectors of
/// each unfolding, with the superdiagonal of the projected core folded into
/// the first factor. Modes with fewer than `rank` rows are padded with
/// seeded random columns.
pub fn hosvd_init(t: &Tensor3, rank: usize) -> Result<[CMat; 3]> {
    let dims = t.dims();
    let mut bases: Vec<CMat> = Vec::with_capacity(3);
    let mut rng = stream_rng(rank as u64, Stream::Init);
    for mode in Mode::ALL {
        let (u, _, _) = svd(unfold(t, mode).as_ref())?;
        let keep = rank.min(u.ncols());
        let mut b = random_factor(dims[mode.index()], rank, &mut rng);
        for j in 0..keep {
            for i in 0..b.nrows() {
                b[(i, j)] = u[(i, j)];
            }
        }
        bases.push(b);
    }
    // core ×ₙ Uₙᴴ, keeping only its superdiagonal
    let kr = khatri_rao(bases[2].as_ref(), bases[1].as_ref())?;
    let proj = bases[0].adjoint() * unfold(t, Mode::One) * kr.conjugate();
    let mut a = bases[0].clone();
    for r in 0..rank {
        let s = proj[(r, r)];
        for i in 0..a.nrows() {
            a[(i, r)] *= s;
        }
    }
    let c = bases.pop().expect("three bases");
    let b = bases.pop().expect("three bases");
    Ok([a, b, c])
}

/// Rank-one split `m ≈ x yᵀ` with the singular value on `x`.
fn rank_one(m: &CMat) -> Result<(Vec<c64>, Vec<c64>)> {
    let (u, sv, v) = svd(m.as_ref())?;
    let s0 = sv.first().copied().unwrap_or(0.0);
    let x = (0..m.nrows()).map(|i| u[(i, 0)] * s0).collect();
    let y = (0..m.ncols()).map(|j| v[(j, 0)].conj()).collect();
    Ok((x, y))
}

/// Algebraic start from a generalised eigenvalue problem. Two seeded
/// combinations of the mode-1 slices, `P = B D_x Cᵀ` and `Q = B D_y Cᵀ`, are
/// compressed onto the leading mode-2 and mode-3 subspaces, and the
/// eigenvectors of `P̃ Q̃⁻¹` give `B`. `A` and `C` then follow from rank-one
/// splits of the rows of `B^† [T]₍₂₎`. Exact for noiseless data of rank
/// `rank` with full-column-rank `B` and `C`.
pub fn gevd_init(t: &Tensor3, rank: usize) -> Result<[CMat; 3]> {
    let [i_dim, j_dim, r_dim] = t.dims();
    if j_dim < rank || r_dim < rank {
        return Err(Error::Identifiability(vec![format!(
            "GEVD start needs modes 2 and 3 of size ≥ rank ({j_dim}, {r_dim} < {rank})"
        )]));
    }
    let t2 = unfold(t, Mode::Two);
    let (ub, _, _) = svd(t2.as_ref())?;
    let (uc, _, _) = svd(unfold(t, Mode::Three).as_ref())?;
    let ub = ub.subcols(0, rank).to_owned();
    let uc = uc.subcols(0, rank).to_owned();
    let mut rng = stream_rng(rank as u64, Stream::Init);
    let x = random_factor(i_dim, 2, &mut rng);
    let combo = |w: usize| {
        Mat::from_fn(j_dim, r_dim, |j, r| {
            (0..i_dim).map(|i| x[(i, w)] * t.get(i, j, r)).sum::<c64>()
        })
    };
    let compress = |m: CMat| ub.adjoint() * m * uc.conjugate();
    let p = compress(combo(0));
    let q = compress(combo(1));
    let qi = pinv(q.as_ref(), PINV_RCOND)?;
    let e = (&p * &qi.mat)
        .eigen()
        .map_err(|err| Error::Decomposition(format!("eigen: {err:?}")))?;
    let b = &ub * e.U();
    let coeff = pinv(b.as_ref(), PINV_RCOND)?.mat * &t2;
    let mut a = CMat::zeros(i_dim, rank);
    let mut c = CMat::zeros(r_dim, rank);
    for k in 0..rank {
        // mode-2 column index is i + r·I
        let grid = Mat::from_fn(i_dim, r_dim, |i, r| coeff[(k, i + r * i_dim)]);
        let (ak, ck) = rank_one(&grid)?;
        for i in 0..i_dim {
            a[(i, k)] = ak[i];
        }
        for r in 0..r_dim {
            c[(r, k)] = ck[r];
        }
    }
    Ok([a, b, c])
}

/// The fit with the lower final residual; the first wins ties.
pub(crate) fn best_of(first: AlsFit, second: Option<AlsFit>) -> AlsFit {
    match second {
        Some(s) if s.trace.final_residual() < first.trace.final_residual() => s,
        _ => first,
    }
}

fn ls_update(target: &CMat, coeff: &CMat) -> Result<(CMat, bool)> {
    // X = target · (coeffᵀ)^† = target · (coeff^†)ᵀ
    let p = pinv(coeff.as_ref(), PINV_RCOND)?;
    Ok((target * p.mat.transpose(), p.dropped > 0))
}

fn other_modes(mode: Mode) -> (usize, usize) {
    // (slow, fast) factor indices of the Khatri-Rao coefficient of `mode`
    match mode {
        Mode::One => (2, 1),
        Mode::Two => (2, 0),
        Mode::Three => (1, 0),
    }
}

/// Rank-`rank` PARAFAC fit of `t` by alternating least squares. Factors given
/// in `fixed` are held constant.
pub fn als_parafac3(
    t: &Tensor3,
    rank: usize,
    opts: &AlsOptions,
    fixed: [Option<&CMat>; 3],
) -> Result<AlsFit> {
    opts.validate()?;
    let dims = t.dims();
    if rank == 0 {
        return Err(Error::InvalidParameter("rank must be at least 1".into()));
    }
    let mut violations = Vec::new();
    for mode in Mode::ALL {
        let n = mode.index();
        if let Some(f) = fixed[n] {
            if f.nrows() != dims[n] || f.ncols() != rank {
                return Err(Error::Dimension(format!(
                    "fixed factor {} is {}×{}, expected {}×{}",
                    n + 1,
                    f.nrows(),
                    f.ncols(),
                    dims[n],
                    rank
                )));
            }
            continue;
        }
        let (p, q) = other_modes(mode);
        if dims[p] * dims[q] < rank {
            violations.push(format!(
                "mode-{} coefficient rows {} ≥ rank {}",
                n + 1,
                dims[p] * dims[q],
                rank
            ));
        }
    }
    if !violations.is_empty() {
        return Err(Error::Identifiability(violations));
    }

    let norm2 = t.norm2();
    let mut trace = FitTrace {
        norm2,
        ..FitTrace::default()
    };
    if norm2 == 0.0 {
        let f = ParafacFactors3::new(
            CMat::zeros(dims[0], rank),
            CMat::zeros(dims[1], rank),
            CMat::zeros(dims[2], rank),
        )?;
        trace.residual_history.push(0.0);
        trace.converged = true;
        return Ok(AlsFit { factors: f, trace });
    }

    let init = match opts.init {
        InitMethod::Hosvd => hosvd_init(t, rank)?,
        InitMethod::Random => {
            let mut rng = stream_rng(opts.seed, Stream::Init);
            [
                random_factor(dims[0], rank, &mut rng),
                random_factor(dims[1], rank, &mut rng),
                random_factor(dims[2], rank, &mut rng),
            ]
        }
    };
    let start = match opts.init {
        InitMethod::Hosvd => "hosvd",
        InitMethod::Random => "random",
    };
    als_from(t, rank, opts, fixed, init, start)
}

/// [`als_parafac3`] from explicit starting factors; `start` labels the trace.
pub fn als_from(
    t: &Tensor3,
    rank: usize,
    opts: &AlsOptions,
    fixed: [Option<&CMat>; 3],
    init: [CMat; 3],
    start: &str,
) -> Result<AlsFit> {
    opts.validate()?;
    let dims = t.dims();
    for (n, f) in init.iter().enumerate() {
        if f.nrows() != dims[n] || f.ncols() != rank {
            return Err(Error::Dimension(format!(
                "start factor {} is {}×{}, expected {}×{rank}",
                n + 1,
                f.nrows(),
                f.ncols(),
                dims[n]
            )));
        }
    }
    let norm2 = t.norm2();
    let mut trace = FitTrace {
        norm2,
        start: start.into(),
        ..FitTrace::default()
    };
    let mut f = init;
    for n in 0..3 {
        if let Some(x) = fixed[n] {
            f[n] = x.clone();
        }
    }
    let free: Vec<Mode> = Mode::ALL
        .into_iter()
        .filter(|m| fixed[m.index()].is_none())
        .collect();
    let unfoldings: Vec<CMat> = Mode::ALL.iter().map(|&m| unfold(t, m)).collect();

    let residual = |f: &[CMat; 3]| -> Result<f64> {
        let kr = khatri_rao(f[2].as_ref(), f[1].as_ref())?;
        let fit = &f[0] * kr.transpose();
        Ok((&unfoldings[0] - &fit).squared_norm_l2())
    };
    trace.residual_history.push(residual(&f)?);
    if free.is_empty() {
        trace.converged = true;
        return Ok(AlsFit {
            factors: ParafacFactors3::new(f[0].clone(), f[1].clone(), f[2].clone())?,
            trace,
        });
    }
    if trace.residual_history[0] <= EXACT_FIT * norm2 {
        trace.converged = true;
    }

    while !trace.converged && trace.iterations < opts.max_iter {
        let before = opts.line_search.then(|| f.clone());
        for &mode in &free {
            let (p, q) = other_modes(mode);
            let coeff = khatri_rao(f[p].as_ref(), f[q].as_ref())?;
            let (upd, warned) = ls_update(&unfoldings[mode.index()], &coeff)?;
            f[mode.index()] = upd;
            trace.pinv_warnings += warned as usize;
        }
        normalise_columns(&mut f, &free);
        trace.iterations += 1;
        let mut e = residual(&f)?;
        if let Some(old) = before.filter(|_| trace.iterations >= 2) {
            let d: [CMat; 3] = std::array::from_fn(|n| &f[n] - &old[n]);
            if let Some((step, _)) = exact_line_search(&unfoldings[0], &f, &d)? {
                let g: [CMat; 3] =
                    std::array::from_fn(|n| &f[n] + &d[n] * faer::Scale(c64::new(step, 0.0)));
                let eg = residual(&g)?;
                if eg < e {
                    f = g;
                    e = eg;
                }
            }
        }
        trace.converged = trace.push(e, opts.tol);
    }
    Ok(AlsFit {
        factors: ParafacFactors3::new(f[0].clone(), f[1].clone(), f[2].clone())?,
        trace,
    })
}

/// Weighted PARAFAC refinement: minimises `Σ w_ijr |t_ijr − Σ_ρ a_iρ b_jρ c_rρ|²`
/// from `init` by exact row-wise weighted least squares, so the weighted
/// residual never increases. `weights` follows the layout of `t`.
pub fn weighted_als3(
    t: &Tensor3,
    weights: &[f64],
    init: [CMat; 3],
    opts: &AlsOptions,
) -> Result<AlsFit> {
    opts.validate()?;
    let dims = t.dims();
    if weights.len() != t.data().len() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidParameter(format!(
            "weights: {} finite nonnegative entries expected",
            t.data().len()
        )));
    }
    let rank = init[0].ncols();
    for (n, f) in init.iter().enumerate() {
        if f.nrows() != dims[n] || f.ncols() != rank {
            return Err(Error::Dimension(format!(
                "start factor {} is {}×{}",
                n + 1,
                f.nrows(),
                f.ncols()
            )));
        }
    }
    let idx = |i: usize, j: usize, r: usize| i + dims[0] * (j + dims[1] * r);
    let residual = |f: &[CMat; 3]| -> f64 {
        let mut e = 0.0;
        for r in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let m: c64 = (0..rank)
                        .map(|p| f[0][(i, p)] * f[1][(j, p)] * f[2][(r, p)])
                        .sum();
                    e += weights[idx(i, j, r)] * (t.get(i, j, r) - m).norm_sqr();
                }
            }
        }
        e
    };
    let norm2 = t
        .data()
        .iter()
        .zip(weights)
        .map(|(z, w)| w * z.norm_sqr())
        .sum();
    let mut trace = FitTrace {
        norm2,
        start: "weighted".into(),
        ..FitTrace::default()
    };
    let mut f = init;
    trace.residual_history.push(residual(&f));
    trace.converged = norm2 == 0.0 || trace.residual_history[0] <= EXACT_FIT * norm2;
    while !trace.converged && trace.iterations < opts.max_iter {
        for n in 0..3 {
            let (p, q) = match n {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let mut upd = CMat::zeros(dims[n], rank);
            for row in 0..dims[n] {
                let mut g = CMat::zeros(rank, rank);
                let mut h = vec![czero(); rank];
                for u in 0..dims[p] {
                    for v in 0..dims[q] {
                        let mut at = [0; 3];
                        at[n] = row;
                        at[p] = u;
                        at[q] = v;
                        let w = weights[idx(at[0], at[1], at[2])];
                        if w == 0.0 {
                            continue;
                        }
                        let z: Vec<c64> = (0..rank).map(|c| f[p][(u, c)] * f[q][(v, c)]).collect();
                        let y = t.get(at[0], at[1], at[2]);
                        for a in 0..rank {
                            h[a] += z[a].conj() * y * w;
                            for b in 0..rank {
                                g[(a, b)] += z[a].conj() * z[b] * w;
                            }
                        }
                    }
                }
                let (gi, _) = crate::linalg::hermitian_pinv(g.as_ref(), PINV_RCOND)?;
                for a in 0..rank {
                    upd[(row, a)] = (0..rank).map(|b| gi[(a, b)] * h[b]).sum();
                }
            }
            f[n] = upd;
        }
        trace.iterations += 1;
        let e = residual(&f);
        trace.converged = trace.push(e, opts.tol);
    }
    Ok(AlsFit {
        factors: ParafacFactors3::new(f[0].clone(), f[1].clone(), f[2].clone())?,
        trace,
    })
}

/// Mode-1 unfolding of `[[a, b, c]]`.
fn model1(a: &CMat, b: &CMat, c: &CMat) -> Result<CMat> {
    Ok(a * khatri_rao(c.as_ref(), b.as_ref())?.transpose())
}

/// Minimises `‖T − [[f + s·d]]‖²` over real `s > 0`. The model is a cubic in
/// `s`, so the residual is a degree-6 polynomial whose coefficients come from
/// inner products of the four model terms. Returns the best step and its
/// predicted residual, or `None` when no positive step beats `s = 1`.
fn exact_line_search(t1: &CMat, f: &[CMat; 3], d: &[CMat; 3]) -> Result<Option<(f64, f64)>> {
    let [a, b, c] = f;
    let [da, db, dc] = d;
    let m0 = model1(a, b, c)?;
    let m1 = model1(da, b, c)? + model1(a, db, c)? + model1(a, b, dc)?;
    let m2 = model1(da, db, c)? + model1(da, b, dc)? + model1(a, db, dc)?;
    let m3 = model1(da, db, dc)?;
    // r(s) = P0 + s P1 + s² P2 + s³ P3 with P0 = T − M0, Pi = −Mi
    let p = [t1 - &m0, -m1, -m2, -m3];
    let mut coef = [0.0f64; 7];
    for i in 0..4 {
        for j in 0..4 {
            let mut dot = 0.0;
            for col in 0..t1.ncols() {
                for row in 0..t1.nrows() {
                    dot += (p[i][(row, col)].conj() * p[j][(row, col)]).re;
                }
            }
            coef[i + j] += dot;
        }
    }
    let poly = |s: f64| coef.iter().rev().fold(0.0, |acc, &c| acc * s + c);
    let dpoly = |s: f64| {
        coef.iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, &c)| acc * s + k as f64 * c)
    };
    let ddpoly = |s: f64| {
        coef.iter()
            .enumerate()
            .skip(2)
            .rev()
            .fold(0.0, |acc, (k, &c)| acc * s + (k * (k - 1)) as f64 * c)
    };
    // coarse scan followed by Newton polishing of the best bracket
    const S_MAX: f64 = 20.0;
    const GRID: usize = 400;
    let mut best = (1.0, poly(1.0));
    for i in 1..=GRID {
        let s = S_MAX * i as f64 / GRID as f64;
        let v = poly(s);
        if v < best.1 {
            best = (s, v);
        }
    }
    let mut s = best.0;
    for _ in 0..30 {
        let h = ddpoly(s);
        if h <= 0.0 {
            break;
        }
        let next = (s - dpoly(s) / h).clamp(0.0, S_MAX);
        if (next - s).abs() < 1e-14 * s.max(1.0) {
            s = next;
            break;
        }
        s = next;
    }
    let v = poly(s);
    let (s, v) = if v < best.1 { (s, v) } else { best };
    Ok((s != 1.0 && v < poly(1.0)).then_some((s, v)))
}

/// Gives every free factor but the last unit-norm columns, moving the scale
/// into the last free factor. The reconstruction is unchanged.
fn normalise_columns(f: &mut [CMat; 3], free: &[Mode]) {
    let Some((&last, rest)) = free.split_last() else {
        return;
    };
    for &m in rest {
        let n = m.index();
        for r in 0..f[n].ncols() {
            let norm = f[n].col(r).norm_l2();
            if norm > 0.0 {
                for i in 0..f[n].nrows() {
                    f[n][(i, r)] /= norm;
                }
                let l = last.index();
                for i in 0..f[l].nrows() {
                    f[l][(i, r)] *= norm;
                }
            }
        }
    }
}

/// Factors of the angular PARAFAC model `𝒢̂ = 𝓘 ×₁ T̄_G ×₂ A_sr ×₃ B_tx`.
#[derive(Debug, Clone)]
pub struct AngularFactors {
    /// `K × K`, the gains and the KSA ambiguity.
    pub t_bar_g: CMat,
    /// `L_SR × K`.
    pub a_sr: CMat,
    /// `N × K`.
    pub b_tx: CMat,
    pub trace: FitTrace,
}

pub fn fit_angular(g_tensor: &Tensor3, k: usize, opts: &AlsOptions) -> Result<AngularFactors> {
    let [_, l_sr, n] = g_tensor.dims();
    if l_sr * n < k {
        return Err(Error::Identifiability(vec![format!(
            "L_SR·N ≥ K ({} < {k})",
            l_sr * n
        )]));
    }
    let primary = als_parafac3(g_tensor, k, opts, [None, None, None])?;
    let second = match gevd_init(g_tensor, k) {
        Ok(init) => Some(als_from(
            g_tensor,
            k,
            opts,
            [None, None, None],
            init,
            "gevd",
        )?),
        Err(_) => None,
    };
    let fit = best_of(primary, second);
    Ok(AngularFactors {
        t_bar_g: fit.factors.a,
        a_sr: fit.factors.b,
        b_tx: fit.factors.c,
        trace: fit.trace,
    })
}

/// Factors of the nested model
/// `𝒥̂(mq, n, k) = (H X)(n, mq) · [𝓕]₍₁₎(k, mq)` with
/// `[𝓕]₍₁₎ = T_J (C_τ ⋄ D_ν)ᵀ`.
#[derive(Debug, Clone)]
pub struct DelayDopplerFactors {
    /// `N × L_ST`.
    pub h_hat: CMat,
    /// RIS arrival steering estimate (column space of `Ĥ`), length `N`.
    pub b_rx: Vec<c64>,
    /// `K × MQ`.
    pub f_unfold1: CMat,
    /// `K × K`.
    pub t_j: CMat,
    /// `M × K`.
    pub d_nu: CMat,
    /// `Q × K`.
    pub c_tau: CMat,
    pub bals: FitTrace,
    pub als: FitTrace,
    /// Weighted refinement of the inner fit.
    pub weighted: FitTrace,
}

/// Closed-form `[𝓕]₍₁₎ = [𝒥]₍₃₎ ((HX ⋄ I_MQ)ᵀ)^†`. The columns of
/// `HX ⋄ I_MQ` have disjoint supports, so the pseudoinverse reduces to a
/// per-column normalisation.
fn update_f(j: &Tensor3, hx: &CMat, warnings: &mut usize) -> CMat {
    let [mq, n, k] = j.dims();
    let norms: Vec<f64> = (0..mq)
        .map(|c| (0..n).map(|r| hx[(r, c)].norm_sqr()).sum())
        .collect();
    let nmax = norms.iter().cloned().fold(0.0, f64::max);
    let mut f = CMat::zeros(k, mq);
    for c in 0..mq {
        // singular values of the coefficient matrix are the column norms
        if norms[c] <= (PINV_RCOND * PINV_RCOND) * nmax || norms[c] == 0.0 {
            *warnings += 1;
            continue;
        }
        for kk in 0..k {
            let mut s = czero();
            for r in 0..n {
                s += hx[(r, c)].conj() * j.get(c, r, kk);
            }
            f[(kk, c)] = s / norms[c];
        }
    }
    f
}

fn nested_residual(j: &Tensor3, hx: &CMat, f1: &CMat) -> f64 {
    let [mq, n, k] = j.dims();
    let mut e = 0.0;
    for kk in 0..k {
        for r in 0..n {
            for c in 0..mq {
                e += (j.get(c, r, kk) - hx[(r, c)] * f1[(kk, c)]).norm_sqr();
            }
        }
    }
    e
}

/// Start for the inner fit from the angular fit's `T̄_G`. Since
/// `T_G T_Jᵀ = I`, the rows of `T̄_Gᵀ [𝓕]₍₁₎` are scaled `(c_k ⊗ d_k)ᵀ`, one
/// per angular target; each is split into delay and Doppler by a rank-one
/// SVD and `T_J` follows by least squares.
pub fn cross_stage_init(f1: &CMat, t_bar_g: &CMat, m: usize, q: usize) -> Result<[CMat; 3]> {
    let k = f1.nrows();
    if t_bar_g.nrows() != k || t_bar_g.ncols() != k || f1.ncols() != m * q {
        return Err(Error::Dimension(format!(
            "T̄_G {}×{}, [𝓕]₍₁₎ {}×{}, M·Q = {}",
            t_bar_g.nrows(),
            t_bar_g.ncols(),
            k,
            f1.ncols(),
            m * q
        )));
    }
    let rows = t_bar_g.transpose() * f1;
    let mut d = CMat::zeros(m, k);
    let mut c = CMat::zeros(q, k);
    for kk in 0..k {
        let grid = Mat::from_fn(m, q, |mi, qi| rows[(kk, mi + m * qi)]);
        let (dk, ck) = rank_one(&grid)?;
        for i in 0..m {
            d[(i, kk)] = dk[i];
        }
        for i in 0..q {
            c[(i, kk)] = ck[i];
        }
    }
    let kr = khatri_rao(c.as_ref(), d.as_ref())?;
    let (t_j, _) = ls_update(f1, &kr)?;
    Ok([t_j, d, c])
}

/// Fits the nested delay–Doppler model. With `a_st` given, `H` is constrained
/// to `b a_stᵀ` (the ST steering is known); otherwise `H` is a free
/// `N × L_ST` matrix. With `t_bar_g` given, the inner fit also runs from
/// [`cross_stage_init`] and the better of the two fits is kept.
#[allow(clippy::too_many_arguments)]
pub fn fit_nested(
    j_tensor: &Tensor3,
    x: &CMat,
    k: usize,
    m: usize,
    q: usize,
    a_st: Option<&[c64]>,
    t_bar_g: Option<&CMat>,
    opts: &AlsOptions,
) -> Result<DelayDopplerFactors> {
    opts.validate()?;
    let [mq, n, kk] = j_tensor.dims();
    let l_st = x.nrows();
    if kk != k || x.ncols() != mq || m * q != mq {
        return Err(Error::Dimension(format!(
            "𝒥̂ {:?}, X {}×{}, K = {k}, M·Q = {}",
            j_tensor.dims(),
            x.nrows(),
            x.ncols(),
            m * q
        )));
    }
    if let Some(a) = a_st {
        if a.len() != l_st {
            return Err(Error::Dimension(format!(
                "a_st length {} vs L_ST {l_st}",
                a.len()
            )));
        }
    }
    let mut violations = Vec::new();
    if mq < l_st {
        violations.push(format!("MQ ≥ L_ST ({mq} < {l_st})"));
    }
    if mq < k {
        violations.push(format!("MQ ≥ K ({mq} < {k})"));
    }
    if !violations.is_empty() {
        return Err(Error::Identifiability(violations));
    }

    let norm2 = j_tensor.norm2();
    let mut bals = FitTrace {
        norm2,
        ..FitTrace::default()
    };
    let mut rng = stream_rng(opts.seed, Stream::Init);

    // w = Xᵀ a_st when the ST steering is known
    let w: Option<Vec<c64>> = a_st.map(|a| {
        (0..mq)
            .map(|c| (0..l_st).map(|l| a[l] * x[(l, c)]).sum())
            .collect()
    });

    let mut h = match opts.init {
        InitMethod::Hosvd => {
            let (u, _, _) = svd(unfold(j_tensor, Mode::Two).as_ref())?;
            let b: Vec<c64> = if u.ncols() > 0 {
                u.col(0).iter().copied().collect()
            } else {
                vec![czero(); n]
            };
            match a_st {
                Some(a) => Mat::from_fn(n, l_st, |i, l| b[i] * a[l]),
                None => Mat::from_fn(n, l_st, |i, _| b[i]),
            }
        }
        InitMethod::Random => {
            let b = random_factor(n, 1, &mut rng);
            match a_st {
                Some(a) => Mat::from_fn(n, l_st, |i, l| b[(i, 0)] * a[l]),
                None => random_factor(n, l_st, &mut rng),
            }
        }
    };

    let mut hx = &h * x;
    let mut f1 = update_f(j_tensor, &hx, &mut bals.pinv_warnings);
    bals.residual_history
        .push(nested_residual(j_tensor, &hx, &f1));
    if norm2 == 0.0 || bals.residual_history[0] <= EXACT_FIT * norm2 {
        bals.converged = true;
    }
    let j2 = unfold(j_tensor, Mode::Two);
    while !bals.converged && bals.iterations < opts.max_iter {
        h = match (&w, a_st) {
            (Some(w), Some(a)) => {
                // b = [𝒥]₍₂₎ p* / ‖p‖², p(mq + MQ·k) = w(mq) F(k, mq)
                let mut b = vec![czero(); n];
                let mut pn = 0.0;
                for kk in 0..k {
                    for c in 0..mq {
                        let p = w[c] * f1[(kk, c)];
                        pn += p.norm_sqr();
                        let col = c + mq * kk;
                        for (i, bi) in b.iter_mut().enumerate() {
                            *bi += j2[(i, col)] * p.conj();
                        }
                    }
                }
                if pn == 0.0 {
                    bals.pinv_warnings += 1;
                    CMat::zeros(n, l_st)
                } else {
                    Mat::from_fn(n, l_st, |i, l| b[i] / pn * a[l])
                }
            }
            _ => {
                // P = X (F ⋄ I_MQ)ᵀ, H = [𝒥]₍₂₎ P^†
                let p = Mat::from_fn(l_st, mq * k, |l, col| {
                    let (c, kk) = (col % mq, col / mq);
                    x[(l, c)] * f1[(kk, c)]
                });
                let pi = pinv(p.as_ref(), PINV_RCOND)?;
                bals.pinv_warnings += (pi.dropped > 0) as usize;
                &j2 * &pi.mat
            }
        };
        hx = &h * x;
        f1 = update_f(j_tensor, &hx, &mut bals.pinv_warnings);
        bals.iterations += 1;
        let e = nested_residual(j_tensor, &hx, &f1);
        bals.converged = bals.push(e, opts.tol);
    }

    let b_rx = match a_st {
        Some(a) => {
            // H = b a_stᵀ exactly, recover b from any nonzero column
            let an2: f64 = a.iter().map(|z| z.norm_sqr()).sum();
            (0..n)
                .map(|i| (0..l_st).map(|l| h[(i, l)] * a[l].conj()).sum::<c64>() / an2)
                .collect()
        }
        None => {
            let (u, s, _) = svd(h.as_ref())?;
            let sc = s.first().copied().unwrap_or(0.0).sqrt();
            (0..n).map(|i| u[(i, 0)] * sc).collect()
        }
    };

    let f_tensor = fold(f1.as_ref(), Mode::One, [k, m, q])?;
    let inner_opts = opts.with_salt(0x4e);
    let primary = als_parafac3(&f_tensor, k, &inner_opts, [None, None, None])?;
    let second = match t_bar_g {
        Some(t) => {
            let init = cross_stage_init(&f1, t, m, q)?;
            Some(als_from(
                &f_tensor,
                k,
                &inner_opts,
                [None, None, None],
                init,
                "cross-stage",
            )?)
        }
        None => None,
    };
    let inner = best_of(primary, second);
    // f̂ rows were divided by the per-column energy of HX, so their noise
    // variance scales as its inverse; refine with those weights
    let energy: Vec<f64> = (0..mq)
        .map(|c| (0..n).map(|r| hx[(r, c)].norm_sqr()).sum())
        .collect();
    let weights: Vec<f64> = (0..m * q)
        .flat_map(|c| std::iter::repeat_n(energy[c], k))
        .collect();
    let f = &inner.factors;
    let refined = weighted_als3(
        &f_tensor,
        &weights,
        [f.a.clone(), f.b.clone(), f.c.clone()],
        &inner_opts,
    )?;
    Ok(DelayDopplerFactors {
        h_hat: h,
        b_rx,
        f_unfold1: f1,
        t_j: refined.factors.a,
        d_nu: refined.factors.b,
        c_tau: refined.factors.c,
        bals,
        als: inner.trace,
        weighted: refined.trace,
    })
}
