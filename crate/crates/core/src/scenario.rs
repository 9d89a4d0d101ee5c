//! Ground-truth scenes and received-signal synthesis.
//!
//! A scene fixes the ST, RIS and SR arrays, `K` point targets, the Hadamard
//! pilot matrix `X` and the per-slot RIS responses `S_t`. The channels are
//!
//! * `G_k = α_k a_sr(φ_sr,θ_sr) b_txᵀ(φ_risD,θ_risD)` (RIS → target → SR),
//! * `H = b_rx(φ_risA,θ_risA) a_stᵀ(φ_st,θ_st)` (ST → RIS),
//! * `J_k = H X D(c(τ_k) ⊗ d(ν_k))`,
//!
//! and slot `t` of the received pilots is `Σ_k vec(G_k S_t J_k)`, that is
//! `Y = Σ_k (J_kᵀ ⊗ G_k) S` with `S = [vec S_1, …, vec S_T]`. A diagonal RIS
//! uses `S_t = D(s_t)` and `Y = Σ_k (J_kᵀ ⋄ G_k) S′`.
//!
//! Row `l + L_SR·(m + M·q)` of `Y` is SR antenna `l`, symbol `m`, subcarrier
//! `q`. Array element `iz + N_z·iy` has phase `−(iy·μ + iz·ψ)` with
//! `μ = π sinφ sinθ` and `ψ = π cosφ`.

use std::f64::consts::PI;

use faer::{c64, Mat};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{cis, czero, CMat};
use crate::tensor::{khatri_rao, kron, unvec};

/// Speed of light in vacuum, m/s.
pub const C0: f64 = 299_792_458.0;

/// Uniform rectangular array in the y-z plane with half-wavelength spacing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub n_y: usize,
    pub n_z: usize,
}

impl ArrayGeometry {
    pub fn new(n_y: usize, n_z: usize) -> Result<Self> {
        if n_y == 0 || n_z == 0 {
            return Err(Error::InvalidParameter(format!("array {n_y}×{n_z}")));
        }
        Ok(Self { n_y, n_z })
    }

    pub fn len(&self) -> usize {
        self.n_y * self.n_z
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(iy, iz)` grid position of element `n`.
    pub fn position(&self, n: usize) -> (usize, usize) {
        (n / self.n_z, n % self.n_z)
    }
}

/// `(μ, ψ) = (π sinφ sinθ, π cosφ)`.
pub fn spatial_freqs(phi: f64, theta: f64) -> (f64, f64) {
    (PI * phi.sin() * theta.sin(), PI * phi.cos())
}

/// Array response at spatial frequencies `(μ, ψ)`.
pub fn ura_steering_freq(geom: ArrayGeometry, mu: f64, psi: f64) -> Vec<c64> {
    (0..geom.len())
        .map(|n| {
            let (iy, iz) = geom.position(n);
            cis(-(iy as f64 * mu + iz as f64 * psi))
        })
        .collect()
}

/// Array response towards azimuth `phi` and elevation `theta` (radians).
pub fn ura_steering(geom: ArrayGeometry, phi: f64, theta: f64) -> Vec<c64> {
    let (mu, psi) = spatial_freqs(phi, theta);
    ura_steering_freq(geom, mu, psi)
}

/// `c(τ)_q = exp(−j2π q Δf τ)`, `q = 0..Q`.
pub fn delay_steering(tau: f64, q_count: usize, delta_f: f64) -> Vec<c64> {
    (0..q_count)
        .map(|q| cis(-2.0 * PI * q as f64 * delta_f * tau))
        .collect()
}

/// `d(ν)_m = exp(+j2π m T_s ν)`, `m = 0..M`.
pub fn doppler_steering(nu: f64, m_count: usize, t_s: f64) -> Vec<c64> {
    (0..m_count)
        .map(|m| cis(2.0 * PI * m as f64 * t_s * nu))
        .collect()
}

/// Plain Kronecker product of two vectors (`a` outer index, `b` inner).
pub fn kron_vec(a: &[c64], b: &[c64]) -> Vec<c64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            out.push(x * y);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RisMode {
    #[serde(alias = "bd")]
    BeyondDiagonal,
    Diagonal,
}

impl std::str::FromStr for RisMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bd" | "beyond-diagonal" => Ok(RisMode::BeyondDiagonal),
            "diagonal" | "diag" => Ok(RisMode::Diagonal),
            other => Err(Error::InvalidParameter(format!("ris mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for RisMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RisMode::BeyondDiagonal => "bd",
            RisMode::Diagonal => "diagonal",
        })
    }
}

/// Serde helpers storing a complex number as `[re, im]`.
pub mod complex_serde {
    use faer::c64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(z: &c64, s: S) -> Result<S::Ok, S::Error> {
        [z.re, z.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<c64, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(c64::new(re, im))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetParams {
    pub phi_sr: f64,
    pub theta_sr: f64,
    pub phi_ris_d: f64,
    pub theta_ris_d: f64,
    /// Seconds.
    pub tau: f64,
    /// Hz.
    pub nu: f64,
    #[serde(with = "complex_serde")]
    pub alpha: c64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub st: ArrayGeometry,
    pub ris: ArrayGeometry,
    pub sr: ArrayGeometry,
    pub k: usize,
    pub q: usize,
    pub m: usize,
    pub t: usize,
    pub delta_f: f64,
    pub carrier_hz: f64,
    pub phi_st: f64,
    pub theta_st: f64,
    pub phi_ris_a: f64,
    pub theta_ris_a: f64,
    pub ris_mode: RisMode,
    pub seed: u64,
    /// Radar cross-section used by the gain budget, m².
    pub rcs_m2: f64,
    /// Unit-magnitude gains with random phase instead of the path budget.
    pub unit_gain: bool,
    /// Minimum pairwise separation of target directions, degrees.
    pub min_separation_deg: f64,
    pub distance_range_m: (f64, f64),
    pub speed_max_mps: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            st: ArrayGeometry { n_y: 2, n_z: 2 },
            ris: ArrayGeometry { n_y: 4, n_z: 4 },
            sr: ArrayGeometry { n_y: 4, n_z: 4 },
            k: 2,
            q: 8,
            m: 8,
            t: 512,
            delta_f: 120e3,
            carrier_hz: 28e9,
            phi_st: 35f64.to_radians(),
            theta_st: 50f64.to_radians(),
            phi_ris_a: 55f64.to_radians(),
            theta_ris_a: 40f64.to_radians(),
            ris_mode: RisMode::BeyondDiagonal,
            seed: 0,
            rcs_m2: 2.0,
            unit_gain: false,
            min_separation_deg: 0.0,
            distance_range_m: (10.0, 250.0),
            speed_max_mps: 25.0,
        }
    }
}

impl ScenarioConfig {
    pub fn n(&self) -> usize {
        self.ris.len()
    }

    pub fn l_st(&self) -> usize {
        self.st.len()
    }

    pub fn l_sr(&self) -> usize {
        self.sr.len()
    }

    pub fn mq(&self) -> usize {
        self.m * self.q
    }

    /// Symbol period `T_s = 1/Δf`.
    pub fn t_s(&self) -> f64 {
        1.0 / self.delta_f
    }

    pub fn wavelength(&self) -> f64 {
        C0 / self.carrier_hz
    }

    /// Inequalities that make the model identifiable, each reported by name
    /// when violated.
    pub fn identifiability_violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let (n, k, mq) = (self.n(), self.k, self.mq());
        if self.k == 0 || self.q == 0 || self.m == 0 || self.t == 0 {
            v.push(format!(
                "K, Q, M, T ≥ 1 (K={}, Q={}, M={}, T={})",
                self.k, self.q, self.m, self.t
            ));
        }
        match self.ris_mode {
            RisMode::BeyondDiagonal if self.t < n * n => {
                v.push(format!("T ≥ N² ({} < {})", self.t, n * n))
            }
            RisMode::Diagonal if self.t < n => v.push(format!("T ≥ N ({} < {})", self.t, n)),
            _ => {}
        }
        if self.l_sr() * n < k {
            v.push(format!("L_SR·N ≥ K ({} < {})", self.l_sr() * n, k));
        }
        if mq < self.l_st() {
            v.push(format!("MQ ≥ L_ST ({} < {})", mq, self.l_st()));
        }
        if mq < k {
            v.push(format!("MQ ≥ K ({mq} < {k})"));
        }
        if self.l_sr() * n * mq * n < k {
            v.push(format!(
                "L_SR·N·MQ·N ≥ K ({} < {})",
                self.l_sr() * n * mq * n,
                k
            ));
        }
        v
    }

    pub fn check_identifiable(&self) -> Result<()> {
        let v = self.identifiability_violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Identifiability(v))
        }
    }

    pub fn a_st(&self) -> Vec<c64> {
        ura_steering(self.st, self.phi_st, self.theta_st)
    }

    pub fn b_rx(&self) -> Vec<c64> {
        ura_steering(self.ris, self.phi_ris_a, self.theta_ris_a)
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn separated(a: (f64, f64), b: (f64, f64), min_deg: f64) -> bool {
    let d = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    d.to_degrees() >= min_deg
}

/// Free-space bistatic amplitude `λ√σ / ((4π)^{3/2} d_tx d_rx)`.
pub fn bistatic_amplitude(wavelength: f64, rcs_m2: f64, d_tx: f64, d_rx: f64) -> f64 {
    wavelength * rcs_m2.sqrt() / ((4.0 * PI).powf(1.5) * d_tx * d_rx)
}

/// Draws `K` targets following the simulation protocol: angles uniform on
/// (0°, 90°), segment distances uniform on `distance_range_m`, speeds uniform
/// on ±`speed_max_mps`. The ST–RIS segment is shared by all targets.
pub fn sample_targets(config: &ScenarioConfig, rng: &mut impl Rng) -> Result<Vec<TargetParams>> {
    if config.k == 0 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    let (dlo, dhi) = config.distance_range_m;
    let half_pi = PI / 2.0;
    let d_st_ris = uniform(rng, dlo, dhi);
    let lambda = config.wavelength();
    let mut targets: Vec<TargetParams> = Vec::with_capacity(config.k);
    let mut attempts = 0usize;
    while targets.len() < config.k {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::InvalidParameter(format!(
                "cannot place {} targets {}° apart",
                config.k, config.min_separation_deg
            )));
        }
        let phi_sr = uniform(rng, 0.0, half_pi);
        let theta_sr = uniform(rng, 0.0, half_pi);
        let phi_ris_d = uniform(rng, 0.0, half_pi);
        let theta_ris_d = uniform(rng, 0.0, half_pi);
        let d_ris_tgt = uniform(rng, dlo, dhi);
        let d_tgt_sr = uniform(rng, dlo, dhi);
        let v = uniform(rng, -config.speed_max_mps, config.speed_max_mps);
        let phase = uniform(rng, 0.0, 2.0 * PI);
        let ok = targets.iter().all(|t| {
            separated(
                (t.phi_sr, t.theta_sr),
                (phi_sr, theta_sr),
                config.min_separation_deg,
            ) && separated(
                (t.phi_ris_d, t.theta_ris_d),
                (phi_ris_d, theta_ris_d),
                config.min_separation_deg,
            )
        });
        if !ok {
            continue;
        }
        let mag = if config.unit_gain {
            1.0
        } else {
            bistatic_amplitude(lambda, config.rcs_m2, d_st_ris + d_ris_tgt, d_tgt_sr)
        };
        targets.push(TargetParams {
            phi_sr,
            theta_sr,
            phi_ris_d,
            theta_ris_d,
            tau: (d_st_ris + d_ris_tgt + d_tgt_sr) / C0,
            nu: 2.0 * v / lambda,
            alpha: cis(phase) * mag,
        });
    }
    Ok(targets)
}

/// Haar-distributed `n × n` unitary: QR of a complex Gaussian matrix with the
/// phases of `R`'s diagonal moved into `Q`.
pub fn random_unitary(n: usize, rng: &mut impl Rng) -> CMat {
    let g = Mat::from_fn(n, n, |_, _| {
        c64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let qr = g.qr();
    let q = qr.compute_thin_Q();
    let r = qr.thin_R();
    Mat::from_fn(n, n, |i, j| {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            c64::new(1.0, 0.0)
        };
        q[(i, j)] * ph
    })
}

/// Stacked RIS responses: `S` is `N² × T` (column `t` = vec `S_t`) for a
/// beyond-diagonal RIS and `N × T` (column `t` = diagonal of `S_t`) for a
/// diagonal one.
#[derive(Debug, Clone)]
pub struct RisSchedule {
    pub mode: RisMode,
    pub n: usize,
    pub s: CMat,
}

impl RisSchedule {
    pub fn t_count(&self) -> usize {
        self.s.ncols()
    }

    /// The `N × N` response of slot `t`.
    pub fn slot(&self, t: usize) -> CMat {
        let col: Vec<c64> = self.s.col(t).iter().copied().collect();
        match self.mode {
            RisMode::BeyondDiagonal => unvec(&col, self.n, self.n).expect("schedule shape"),
            RisMode::Diagonal => {
                Mat::from_fn(self.n, self.n, |i, j| if i == j { col[i] } else { czero() })
            }
        }
    }
}

pub fn make_ris_schedule(
    n: usize,
    t_count: usize,
    mode: RisMode,
    rng: &mut impl Rng,
) -> Result<RisSchedule> {
    let s = match mode {
        RisMode::BeyondDiagonal => {
            if t_count < n * n {
                return Err(Error::Identifiability(vec![format!(
                    "T ≥ N² ({t_count} < {})",
                    n * n
                )]));
            }
            let mut s = CMat::zeros(n * n, t_count);
            for t in 0..t_count {
                let u = random_unitary(n, rng);
                for j in 0..n {
                    for i in 0..n {
                        s[(i + n * j, t)] = u[(i, j)];
                    }
                }
            }
            s
        }
        RisMode::Diagonal => {
            if t_count < n {
                return Err(Error::Identifiability(vec![format!(
                    "T ≥ N ({t_count} < {n})"
                )]));
            }
            Mat::from_fn(n, t_count, |_, _| cis(uniform(rng, 0.0, 2.0 * PI)))
        }
    };
    Ok(RisSchedule { mode, n, s })
}

/// First `l_st` rows of the `mq × mq` Sylvester–Hadamard matrix.
pub fn make_pilots(l_st: usize, mq: usize) -> Result<CMat> {
    if !mq.is_power_of_two() {
        return Err(Error::Unsupported(format!(
            "Hadamard pilots need MQ a power of two, got {mq}"
        )));
    }
    if l_st > mq || l_st == 0 {
        return Err(Error::Dimension(format!(
            "L_ST = {l_st} rows from MQ = {mq}"
        )));
    }
    Ok(Mat::from_fn(l_st, mq, |i, j| {
        let sign = if (i & j).count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        };
        c64::new(sign, 0.0)
    }))
}

/// Channel matrices of a scene.
#[derive(Debug, Clone)]
pub struct Channels {
    /// `N × L_ST`.
    pub h: CMat,
    /// `L_SR × N` per target.
    pub g: Vec<CMat>,
    /// `N × MQ` per target.
    pub j: Vec<CMat>,
}

pub fn build_channels(
    config: &ScenarioConfig,
    targets: &[TargetParams],
    pilots: &CMat,
) -> Result<Channels> {
    if pilots.nrows() != config.l_st() || pilots.ncols() != config.mq() {
        return Err(Error::Dimension(format!(
            "pilots {}×{}, expected {}×{}",
            pilots.nrows(),
            pilots.ncols(),
            config.l_st(),
            config.mq()
        )));
    }
    let a_st = config.a_st();
    let b_rx = config.b_rx();
    let h = Mat::from_fn(config.n(), config.l_st(), |i, j| b_rx[i] * a_st[j]);
    let hx = &h * pilots;
    let mut g = Vec::with_capacity(targets.len());
    let mut j = Vec::with_capacity(targets.len());
    for t in targets {
        let a = ura_steering(config.sr, t.phi_sr, t.theta_sr);
        let b = ura_steering(config.ris, t.phi_ris_d, t.theta_ris_d);
        g.push(Mat::from_fn(a.len(), b.len(), |r, c| t.alpha * a[r] * b[c]));
        let f = delay_doppler_vector(config, t.tau, t.nu);
        j.push(Mat::from_fn(hx.nrows(), hx.ncols(), |r, c| {
            hx[(r, c)] * f[c]
        }));
    }
    Ok(Channels { h, g, j })
}

/// `c(τ) ⊗ d(ν)`, indexed `m + M·q`.
pub fn delay_doppler_vector(config: &ScenarioConfig, tau: f64, nu: f64) -> Vec<c64> {
    kron_vec(
        &delay_steering(tau, config.q, config.delta_f),
        &doppler_steering(nu, config.m, config.t_s()),
    )
}

/// A fully specified ground-truth scene.
#[derive(Debug, Clone)]
pub struct Scene {
    pub config: ScenarioConfig,
    pub targets: Vec<TargetParams>,
    pub pilots: CMat,
    pub schedule: RisSchedule,
    pub channels: Channels,
}

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Targets = 1,
    Schedule = 2,
    Noise = 3,
    Init = 4,
}

/// SplitMix64 finaliser used to derive decorrelated sub-seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(mix_seed(seed, stream as u64))
}

impl Scene {
    /// Draws targets and the RIS schedule from `config.seed`. Target draws do
    /// not depend on the RIS mode, so two configs differing only in mode share
    /// ground truth.
    pub fn generate(config: &ScenarioConfig) -> Result<Self> {
        config.check_identifiable()?;
        let targets = sample_targets(config, &mut stream_rng(config.seed, Stream::Targets))?;
        Self::with_targets(config, targets)
    }

    pub fn with_targets(config: &ScenarioConfig, targets: Vec<TargetParams>) -> Result<Self> {
        config.check_identifiable()?;
        if targets.len() != config.k {
            return Err(Error::Dimension(format!(
                "{} targets for K = {}",
                targets.len(),
                config.k
            )));
        }
        let pilots = make_pilots(config.l_st(), config.mq())?;
        let schedule = make_ris_schedule(
            config.n(),
            config.t,
            config.ris_mode,
            &mut stream_rng(config.seed, Stream::Schedule),
        )?;
        let channels = build_channels(config, &targets, &pilots)?;
        Ok(Self {
            config: config.clone(),
            targets,
            pilots,
            schedule,
            channels,
        })
    }

    /// `Σ_k J_kᵀ ⊗ G_k` (beyond-diagonal) or `Σ_k J_kᵀ ⋄ G_k` (diagonal): the
    /// right-filtered noiseless signal.
    pub fn filtered_truth(&self) -> CMat {
        let c = &self.config;
        let cols = match self.schedule.mode {
            RisMode::BeyondDiagonal => c.n() * c.n(),
            RisMode::Diagonal => c.n(),
        };
        let mut acc = CMat::zeros(c.l_sr() * c.mq(), cols);
        for (g, j) in self.channels.g.iter().zip(&self.channels.j) {
            acc += match self.schedule.mode {
                RisMode::BeyondDiagonal => kron(j.transpose(), g.as_ref()),
                RisMode::Diagonal => khatri_rao(j.transpose(), g.as_ref()).expect("shapes"),
            };
        }
        acc
    }

    /// Noiseless received signal, column `t` = `Σ_k vec(G_k S_t J_k)`.
    pub fn noiseless(&self) -> CMat {
        let c = &self.config;
        let (l, mq) = (c.l_sr(), c.mq());
        let mut y = CMat::zeros(l * mq, self.schedule.t_count());
        for t in 0..self.schedule.t_count() {
            let st = self.schedule.slot(t);
            let mut acc = CMat::zeros(l, mq);
            for (g, j) in self.channels.g.iter().zip(&self.channels.j) {
                acc += (g * &st) * j;
            }
            for col in 0..mq {
                for row in 0..l {
                    y[(row + l * col, t)] = acc[(row, col)];
                }
            }
        }
        y
    }
}

/// Noiseless and noisy received pilots.
#[derive(Debug, Clone)]
pub struct Received {
    pub y0: CMat,
    pub z: CMat,
    pub y: CMat,
    /// Requested SNR in dB; `None` means noiseless.
    pub snr_db: Option<f64>,
}

impl Received {
    /// Noise variance per complex entry implied by the SNR definition
    /// `‖Y₀‖² / ‖Z‖²`. Zero for a noiseless draw.
    pub fn noise_variance(&self) -> f64 {
        match self.snr_db {
            None => 0.0,
            Some(snr_db) => {
                let numel = (self.y0.nrows() * self.y0.ncols()) as f64;
                crate::linalg::frob2(self.y0.as_ref()) / (10f64.powf(snr_db / 10.0) * numel)
            }
        }
    }
}

/// Adds circular complex Gaussian noise scaled so that `‖Y₀‖²/‖Z‖²` equals
/// the requested SNR exactly. `snr_db = None` gives a noiseless draw.
pub fn synthesize(scene: &Scene, snr_db: Option<f64>, rng: &mut impl RngCore) -> Received {
    let y0 = scene.noiseless();
    let (r, c) = (y0.nrows(), y0.ncols());
    let z = match snr_db {
        None => CMat::zeros(r, c),
        Some(snr_db) => {
            let mut z = Mat::from_fn(r, c, |_, _| {
                c64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
            });
            let ey = crate::linalg::frob2(y0.as_ref());
            let ez = crate::linalg::frob2(z.as_ref());
            let scale = if ez > 0.0 {
                (ey / (10f64.powf(snr_db / 10.0) * ez)).sqrt()
            } else {
                0.0
            };
            z *= faer::Scale(c64::new(scale, 0.0));
            z
        }
    };
    let y = &y0 + &z;
    Received { y0, z, y, snr_db }
}

/// SHA-256 of the little-endian `(re, im)` pairs of `m` in column-major order.
pub fn digest(m: &CMat) -> String {
    let mut h = Sha256::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            h.update(m[(i, j)].re.to_le_bytes());
            h.update(m[(i, j)].im.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Reproducibility record written by `simulate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneRecord {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub snr_db: Option<f64>,
    pub targets: Vec<TargetParams>,
    pub y_sha256: String,
    pub y_shape: (usize, usize),
}

impl SceneRecord {
    pub fn new(scene: &Scene, rx: &Received) -> Self {
        Self {
            config: scene.config.clone(),
            seed: scene.config.seed,
            snr_db: rx.snr_db,
            targets: scene.targets.clone(),
            y_sha256: digest(&rx.y),
            y_shape: (rx.y.nrows(), rx.y.ncols()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Io(e.to_string()))
    }
}
