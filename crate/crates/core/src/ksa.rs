//! Stage one: remove the RIS schedule from the received pilots and split the
//! filtered signal into per-target factors.
//!
//! For a beyond-diagonal RIS the filtered signal is `Y′ = Σ_k J_kᵀ ⊗ G_k`.
//! Its rearrangement has rank `K`, and a truncated SVD gives the bases `Ĝ`,
//! `Ĵ` (Kronecker-sum approximation). With a diagonal RIS the sum becomes
//! `Σ_k J_kᵀ ⋄ G_k`, which is fitted as a rank-`K` PARAFAC model of the
//! folded signal (Khatri-Rao-sum approximation).

use faer::{c64, Mat};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_pinv, svd, CMat, RANK_TOL};
use crate::ntfe::{als_from, als_parafac3, best_of, gevd_init, AlsOptions, FitTrace};
use crate::scenario::{RisMode, RisSchedule, ScenarioConfig};
use crate::tensor::{fold, rearrange, Mode, Tensor3};

/// Schedules whose Gram matrix `S Sᴴ` is worse conditioned than this are
/// rejected.
pub const MAX_SCHEDULE_COND: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct FilteredSignal {
    /// `L_SR·MQ × N²` (beyond-diagonal) or `L_SR·MQ × N` (diagonal).
    pub y_prime: CMat,
    pub mode: RisMode,
    /// Condition number of `S Sᴴ`.
    pub cond: f64,
}

/// `Y′ = Y S^†` with the right pseudoinverse `S^† = Sᴴ (S Sᴴ)⁻¹`.
pub fn right_filter(y: &CMat, schedule: &RisSchedule) -> Result<FilteredSignal> {
    let s = &schedule.s;
    if y.ncols() != s.ncols() {
        return Err(Error::Dimension(format!(
            "Y has {} slots, schedule has {}",
            y.ncols(),
            s.ncols()
        )));
    }
    if s.ncols() < s.nrows() {
        return Err(Error::RankDeficientSchedule {
            cond: f64::INFINITY,
        });
    }
    let gram = s * s.adjoint();
    let (inv, cond) = hermitian_pinv(gram.as_ref(), 0.0)?;
    if !(cond <= MAX_SCHEDULE_COND) {
        return Err(Error::RankDeficientSchedule { cond });
    }
    let y_prime = (y * s.adjoint()) * inv;
    Ok(FilteredSignal {
        y_prime,
        mode: schedule.mode,
        cond,
    })
}

/// Block sizes `(i1, j1, i2, j2)` of `Y′ = Σ J_kᵀ ⊗ G_k`.
fn block_shape(f: &FilteredSignal, l_sr: usize) -> Result<(usize, usize, usize, usize)> {
    let (rows, cols) = (f.y_prime.nrows(), f.y_prime.ncols());
    let n = (cols as f64).sqrt().round() as usize;
    if l_sr == 0 || rows % l_sr != 0 || n * n != cols {
        return Err(Error::Dimension(format!(
            "Y′ is {rows}×{cols}, not (L_SR·MQ)×N² with L_SR = {l_sr}"
        )));
    }
    Ok((rows / l_sr, n, l_sr, n))
}

#[derive(Debug, Clone)]
pub struct KsaFactors {
    /// `L_SR·N × K`, orthonormal columns.
    pub g_hat: CMat,
    /// `MQ·N × K`, the conjugated right singular vectors.
    pub j_hat: CMat,
    /// Leading `K` singular values, nonincreasing.
    pub singular_values: Vec<f64>,
    /// `K × L_SR × N`, mode-1 unfolding `(Ĝ √Σ)ᵀ`.
    pub tensor_g: Tensor3,
    /// `MQ × N × K`, mode-3 unfolding `(Ĵ √Σ)ᵀ`.
    pub tensor_j: Tensor3,
    /// All singular values of the rearranged signal.
    pub spectrum: Vec<f64>,
    /// `√(Σ_{i>K} σ_i²)`, the truncation residual.
    pub tail_energy: f64,
    /// `‖rearrange(Y′)‖_F`.
    pub total_energy: f64,
    /// Set when `K` exceeds the numerical rank of the rearranged signal.
    pub rank_warning: Option<String>,
}

impl KsaFactors {
    /// `Ĝ diag(σ) Ĵᵀ`, the rank-`K` truncation of the rearranged signal.
    pub fn truncation(&self) -> CMat {
        let k = self.singular_values.len();
        let gs = Mat::from_fn(self.g_hat.nrows(), k, |i, j| {
            self.g_hat[(i, j)] * self.singular_values[j]
        });
        gs * self.j_hat.transpose()
    }
}

/// Rank-`k` Kronecker-sum approximation of a beyond-diagonal filtered signal.
pub fn ksa_rank_k(f: &FilteredSignal, l_sr: usize, k: usize) -> Result<KsaFactors> {
    if f.mode != RisMode::BeyondDiagonal {
        return Err(Error::Unsupported(
            "Kronecker-sum approximation needs a beyond-diagonal RIS".into(),
        ));
    }
    let (mq, n, l, _) = block_shape(f, l_sr)?;
    let r = rearrange(f.y_prime.as_ref(), mq, n, l, n)?;
    if k == 0 || k > r.nrows().min(r.ncols()) {
        return Err(Error::InvalidParameter(format!(
            "k = {k} outside 1..={}",
            r.nrows().min(r.ncols())
        )));
    }
    let (u, s, v) = svd(r.as_ref())?;
    let g_hat = u.subcols(0, k).to_owned();
    let j_hat = v.subcols(0, k).conjugate().to_owned();
    let sv = s[..k].to_vec();
    let tail_energy = s[k..].iter().map(|x| x * x).sum::<f64>().sqrt();
    let total_energy = s.iter().map(|x| x * x).sum::<f64>().sqrt();
    let smax = s.first().copied().unwrap_or(0.0);
    let num_rank = s.iter().filter(|&&x| x > RANK_TOL * smax).count();
    let rank_warning = (k > num_rank).then(|| {
        format!("k = {k} exceeds numerical rank {num_rank}; tail energy {tail_energy:.3e}")
    });

    let sq: Vec<f64> = sv.iter().map(|x| x.sqrt()).collect();
    let g_scaled = Mat::from_fn(k, l * n, |kk, row| g_hat[(row, kk)] * sq[kk]);
    let j_scaled = Mat::from_fn(k, mq * n, |kk, row| j_hat[(row, kk)] * sq[kk]);
    Ok(KsaFactors {
        tensor_g: fold(g_scaled.as_ref(), Mode::One, [k, l, n])?,
        tensor_j: fold(j_scaled.as_ref(), Mode::Three, [mq, n, k])?,
        g_hat,
        j_hat,
        singular_values: sv,
        spectrum: s,
        tail_energy,
        total_energy,
        rank_warning,
    })
}

/// Index of the largest gap `σ_i / σ_{i+1}`, reported as a rank guess. Only a
/// diagnostic; the pipeline always uses the configured `K`.
pub fn elbow_rank(spectrum: &[f64]) -> usize {
    let floor = RANK_TOL * spectrum.first().copied().unwrap_or(0.0);
    if floor == 0.0 {
        return 0;
    }
    let mut best = (0, 0.0);
    for (i, w) in spectrum.windows(2).enumerate() {
        // gaps inside the round-off floor carry no information
        let ratio = w[0].max(floor) / w[1].max(floor);
        if ratio > best.1 {
            best = (i + 1, ratio);
        }
    }
    best.0
}

/// Rank-`K` Khatri-Rao-sum fit of a diagonal-RIS filtered signal.
///
/// Slice `n` of the folded `L_SR × MQ × N` tensor is
/// `Σ_k G_k(:, n) J_k(n, :)`. The three factors are collinear with
/// `a_sr`, `w ⊙ (c ⊗ d)` and `α (b_tx ⊙ b_rx)`. How the per-element RIS
/// scaling splits between `G_k` and `J_k` is not identifiable.
#[derive(Debug, Clone)]
pub struct KrsaFactors {
    /// `L_SR × K`.
    pub sr: CMat,
    /// `MQ × K`.
    pub delay_doppler: CMat,
    /// `N × K`.
    pub ris: CMat,
    pub trace: FitTrace,
}

impl KrsaFactors {
    /// `Σ_k ris_k ⋄ …`, the fitted `L_SR·MQ × N` filtered signal.
    pub fn reconstruct(&self) -> CMat {
        let (l, mq, n) = (
            self.sr.nrows(),
            self.delay_doppler.nrows(),
            self.ris.nrows(),
        );
        let k = self.sr.ncols();
        Mat::from_fn(l * mq, n, |row, col| {
            let (li, mi) = (row % l, row / l);
            (0..k)
                .map(|kk| self.sr[(li, kk)] * self.delay_doppler[(mi, kk)] * self.ris[(col, kk)])
                .sum::<c64>()
        })
    }
}

pub fn krsa_rank_k(
    f: &FilteredSignal,
    l_sr: usize,
    k: usize,
    opts: &AlsOptions,
) -> Result<KrsaFactors> {
    if f.mode != RisMode::Diagonal {
        return Err(Error::Unsupported(
            "Khatri-Rao-sum approximation needs a diagonal RIS".into(),
        ));
    }
    let (rows, n) = (f.y_prime.nrows(), f.y_prime.ncols());
    if l_sr == 0 || rows % l_sr != 0 {
        return Err(Error::Dimension(format!(
            "Y′ has {rows} rows, not a multiple of L_SR = {l_sr}"
        )));
    }
    let mq = rows / l_sr;
    // the column-major data of Y′ is already the L_SR × MQ × N layout
    let data: Vec<c64> = (0..n)
        .flat_map(|c| f.y_prime.col(c).iter().copied().collect::<Vec<_>>())
        .collect();
    let t = Tensor3::from_data([l_sr, mq, n], data)?;
    let primary = als_parafac3(&t, k, opts, [None, None, None])?;
    let second = match gevd_init(&t, k) {
        Ok(init) => Some(als_from(&t, k, opts, [None, None, None], init, "gevd")?),
        Err(_) => None,
    };
    let fit = best_of(primary, second);
    Ok(KrsaFactors {
        sr: fit.factors.a,
        delay_doppler: fit.factors.b,
        ris: fit.factors.c,
        trace: fit.trace,
    })
}

/// Runs the stage-one split appropriate to the scene's RIS architecture and
/// returns the filtered signal along with it.
pub fn filter_for(
    config: &ScenarioConfig,
    y: &CMat,
    schedule: &RisSchedule,
) -> Result<FilteredSignal> {
    let f = right_filter(y, schedule)?;
    let expected = match schedule.mode {
        RisMode::BeyondDiagonal => config.n() * config.n(),
        RisMode::Diagonal => config.n(),
    };
    if f.y_prime.nrows() != config.l_sr() * config.mq() || f.y_prime.ncols() != expected {
        return Err(Error::Dimension(format!(
            "Y′ is {}×{}, expected {}×{expected}",
            f.y_prime.nrows(),
            f.y_prime.ncols(),
            config.l_sr() * config.mq()
        )));
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{col_vec, collinearity, rel_err, truncated_svd};
    use crate::scenario::{random_unitary, stream_rng, synthesize, ArrayGeometry, Scene, Stream};
    use crate::tensor::{unfold, vec_mat};

    fn small(k: usize, mode: RisMode) -> ScenarioConfig {
        ScenarioConfig {
            st: ArrayGeometry { n_y: 2, n_z: 1 },
            ris: ArrayGeometry { n_y: 2, n_z: 2 },
            sr: ArrayGeometry { n_y: 2, n_z: 2 },
            k,
            q: 4,
            m: 2,
            t: 32,
            ris_mode: mode,
            seed: 11,
            min_separation_deg: 10.0,
            ..ScenarioConfig::default()
        }
    }

    fn filtered(cfg: &ScenarioConfig) -> (Scene, FilteredSignal) {
        let scene = Scene::generate(cfg).unwrap();
        let rx = synthesize(&scene, None, &mut stream_rng(1, Stream::Noise));
        let f = filter_for(cfg, &rx.y, &scene.schedule).unwrap();
        (scene, f)
    }

    #[test]
    fn noiseless_filter_matches_kronecker_sum() {
        let (scene, f) = filtered(&small(2, RisMode::BeyondDiagonal));
        assert!(rel_err(f.y_prime.as_ref(), scene.filtered_truth().as_ref()) < 1e-8);
        let (scene, f) = filtered(&small(2, RisMode::Diagonal));
        assert!(rel_err(f.y_prime.as_ref(), scene.filtered_truth().as_ref()) < 1e-8);
    }

    #[test]
    fn square_unitary_schedule_uses_adjoint() {
        let mut rng = stream_rng(3, Stream::Schedule);
        let s = random_unitary(16, &mut rng);
        let sched = RisSchedule {
            mode: RisMode::BeyondDiagonal,
            n: 4,
            s: s.clone(),
        };
        let y = random_unitary(16, &mut rng).subrows(0, 8).to_owned();
        let f = right_filter(&y, &sched).unwrap();
        assert!((f.cond - 1.0).abs() < 1e-10);
        let direct = &y * s.adjoint();
        assert!(rel_err(f.y_prime.as_ref(), direct.as_ref()) < 1e-12);
    }

    #[test]
    fn rank_deficient_schedule_is_rejected() {
        let s = Mat::from_fn(4, 8, |i, t| c64::new(((i % 2) + t) as f64, 0.0));
        let sched = RisSchedule {
            mode: RisMode::BeyondDiagonal,
            n: 2,
            s,
        };
        let err = right_filter(&CMat::zeros(3, 8), &sched).unwrap_err();
        assert!(matches!(err, Error::RankDeficientSchedule { .. }));
    }

    #[test]
    fn default_shapes() {
        let cfg = ScenarioConfig::default();
        let scene = Scene::generate(&cfg).unwrap();
        let rx = synthesize(&scene, Some(10.0), &mut stream_rng(2, Stream::Noise));
        let f = filter_for(&cfg, &rx.y, &scene.schedule).unwrap();
        assert_eq!((f.y_prime.nrows(), f.y_prime.ncols()), (16 * 64, 256));
        let ksa = ksa_rank_k(&f, cfg.l_sr(), cfg.k).unwrap();
        assert_eq!(ksa.tensor_g.dims(), [2, 16, 16]);
        assert_eq!(ksa.tensor_j.dims(), [64, 16, 2]);
    }

    #[test]
    fn rank_one_span_matches_vec_g() {
        let cfg = small(1, RisMode::BeyondDiagonal);
        let (scene, f) = filtered(&cfg);
        let ksa = ksa_rank_k(&f, cfg.l_sr(), 1).unwrap();
        let g = vec_mat(scene.channels.g[0].as_ref());
        let cos = collinearity(&col_vec(ksa.g_hat.as_ref(), 0), &col_vec(g.as_ref(), 0));
        // principal angle < 1e-8
        assert!(
            cos.min(1.0).acos() < 1e-8 || 1.0 - cos < 1e-15,
            "cos = {cos}"
        );
        let j = vec_mat(scene.channels.j[0].transpose());
        assert!(
            collinearity(&col_vec(ksa.j_hat.as_ref(), 0), &col_vec(j.as_ref(), 0)) > 1.0 - 1e-12
        );
    }

    #[test]
    fn rank_two_tail_and_truncation() {
        let cfg = small(2, RisMode::BeyondDiagonal);
        let (_, f) = filtered(&cfg);
        let ksa = ksa_rank_k(&f, cfg.l_sr(), 2).unwrap();
        assert!(ksa.tail_energy < 1e-10 * ksa.total_energy);
        assert!(ksa.rank_warning.is_none());
        assert!(ksa.spectrum.windows(2).all(|w| w[0] >= w[1] && w[1] >= 0.0));

        // Eckart–Young oracle through an independent truncated SVD
        let r = rearrange(f.y_prime.as_ref(), cfg.mq(), cfg.n(), cfg.l_sr(), cfg.n()).unwrap();
        let (u, s, v) = truncated_svd(r.as_ref(), 2).unwrap();
        let us = Mat::from_fn(u.nrows(), 2, |i, j| u[(i, j)] * s[j]);
        let oracle = us * v.adjoint();
        assert!(rel_err(ksa.truncation().as_ref(), oracle.as_ref()) < 1e-10);

        let over = ksa_rank_k(&f, cfg.l_sr(), 4).unwrap();
        assert!(over.rank_warning.is_some());
        assert_eq!(elbow_rank(&over.spectrum), 2);
    }

    #[test]
    fn folding_reproduces_scaled_factors() {
        let cfg = small(2, RisMode::BeyondDiagonal);
        let (_, f) = filtered(&cfg);
        let ksa = ksa_rank_k(&f, cfg.l_sr(), 2).unwrap();
        let g1 = unfold(&ksa.tensor_g, Mode::One);
        let j3 = unfold(&ksa.tensor_j, Mode::Three);
        let prod = g1.transpose() * &j3;
        let r = rearrange(f.y_prime.as_ref(), cfg.mq(), cfg.n(), cfg.l_sr(), cfg.n()).unwrap();
        assert!(rel_err(prod.as_ref(), r.as_ref()) < 1e-10);
        let gram = ksa.g_hat.adjoint() * &ksa.g_hat;
        assert!(rel_err(gram.as_ref(), CMat::identity(2, 2).as_ref()) < 1e-12);
    }

    #[test]
    fn ksa_rejects_diagonal_and_bad_rank() {
        let cfg = small(1, RisMode::Diagonal);
        let (_, f) = filtered(&cfg);
        assert!(matches!(
            ksa_rank_k(&f, cfg.l_sr(), 1),
            Err(Error::Unsupported(_))
        ));
        let cfg = small(1, RisMode::BeyondDiagonal);
        let (_, f) = filtered(&cfg);
        assert!(ksa_rank_k(&f, cfg.l_sr(), 0).is_err());
    }

    #[test]
    fn krsa_rank_one_factors_are_collinear() {
        let cfg = small(1, RisMode::Diagonal);
        let (scene, f) = filtered(&cfg);
        let fit = krsa_rank_k(&f, cfg.l_sr(), 1, &AlsOptions::default()).unwrap();
        let g = &scene.channels.g[0];
        let j = &scene.channels.j[0];
        // G = α a_sr b_txᵀ, so any nonzero column of G is collinear with a_sr
        assert!(collinearity(&col_vec(fit.sr.as_ref(), 0), &col_vec(g.as_ref(), 0)) > 1.0 - 1e-8);
        // J = b_rx (w ⊙ f)ᵀ
        let jrow: Vec<c64> = (0..j.ncols()).map(|c| j[(0, c)]).collect();
        assert!(collinearity(&col_vec(fit.delay_doppler.as_ref(), 0), &jrow) > 1.0 - 1e-8);
        let diag: Vec<c64> = (0..cfg.n()).map(|n| g[(0, n)] * j[(n, 0)]).collect();
        assert!(collinearity(&col_vec(fit.ris.as_ref(), 0), &diag) > 1.0 - 1e-8);
        assert!(rel_err(fit.reconstruct().as_ref(), f.y_prime.as_ref()) < 1e-8);
    }

    #[test]
    fn krsa_zero_and_rank_two() {
        let f = FilteredSignal {
            y_prime: CMat::zeros(16, 4),
            mode: RisMode::Diagonal,
            cond: 1.0,
        };
        let fit = krsa_rank_k(&f, 4, 2, &AlsOptions::default()).unwrap();
        assert_eq!(fit.trace.final_residual(), 0.0);
        assert_eq!(fit.sr.norm_l2(), 0.0);

        let cfg = ScenarioConfig {
            ris_mode: RisMode::Diagonal,
            t: 64,
            min_separation_deg: 15.0,
            seed: 4,
            ..ScenarioConfig::default()
        };
        let (_, f) = filtered(&cfg);
        let fit = krsa_rank_k(&f, cfg.l_sr(), 2, &AlsOptions::default()).unwrap();
        assert!(
            fit.trace.relative_residual() < 1e-6,
            "{}",
            fit.trace.relative_residual()
        );
    }
}
