//! Experiment harness: estimator selection, identifiability checks, Monte
//! Carlo sweeps with CSV/JSON output, architecture comparison and operation
//! counts.

mod complexity;
mod metrics;
mod pipeline;

pub use complexity::{complexity_estimate, ComplexityReport, DEFAULT_ALS_ITER};
pub use metrics::{
    compare_architectures, run_sweep, run_trial, trial_seeds, unit_crlb, write_outputs,
    ArchitectureComparison, EstimatorTrial, Manifest, MetricReport, MetricRow, ParamGroup,
    TrialRecord,
};
pub use pipeline::{run_estimators, EstimatorOutput, ExtractionMode, FitSummary, PipelineOptions};

use std::fmt;
use std::str::FromStr;

use faer::c64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMat, RANK_TOL};
use crate::ntfe::AlsOptions;
use crate::scenario::{stream_rng, ScenarioConfig, Stream};
use crate::tensor::{k_rank, K_RANK_MAX_COLS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Right-filtered signal `Y S^†` as the channel estimate.
    Ls,
    /// Rank-`K` Kronecker-sum (or Khatri-Rao-sum) truncation.
    Ksa,
    /// Full parametric pipeline with random ALS starts.
    TendaeAls,
    /// Full parametric pipeline with truncated-HOSVD starts.
    TendaeHosvd,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::Ls,
        Estimator::Ksa,
        Estimator::TendaeAls,
        Estimator::TendaeHosvd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Ls => "ls",
            Estimator::Ksa => "ksa",
            Estimator::TendaeAls => "tendae_als",
            Estimator::TendaeHosvd => "tendae_hosvd",
        }
    }

    /// Whether the estimator reports per-target parameters.
    pub fn is_parametric(self) -> bool {
        matches!(self, Estimator::TendaeAls | Estimator::TendaeHosvd)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s.trim())
            .ok_or_else(|| Error::InvalidParameter(format!("unknown estimator '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub snr_grid_db: Vec<f64>,
    pub trials: usize,
    pub estimators: Vec<Estimator>,
    pub outputs: String,
    pub master_seed: u64,
    pub als: AlsOptions,
    pub extraction: ExtractionMode,
    /// Periodogram polish of every ESPRIT frequency.
    pub polish: bool,
    /// Joint maximum-likelihood refinement after extraction.
    pub refine: bool,
    /// Attach CRLB columns computed at the true parameters.
    pub crlb: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            snr_grid_db: vec![0.0, 10.0, 20.0, 30.0],
            trials: 100,
            estimators: Estimator::ALL.to_vec(),
            outputs: "out".into(),
            master_seed: 0,
            als: AlsOptions::default(),
            extraction: ExtractionMode::PerColumn,
            polish: true,
            refine: true,
            crlb: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.trials == 0 {
            bad.push("trials ≥ 1".to_string());
        }
        if self.snr_grid_db.is_empty() || self.snr_grid_db.iter().any(|s| !s.is_finite()) {
            bad.push("nonempty finite SNR grid".to_string());
        }
        if self.estimators.is_empty() {
            bad.push("at least one estimator".to_string());
        }
        if !bad.is_empty() {
            return Err(Error::InvalidParameter(bad.join("; ")));
        }
        self.scenario.check_identifiable()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidParameter(format!("config: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidParameter(e.to_string()))
    }
}

/// Kruskal uniqueness diagnostic for a three-way model of rank `R`:
/// `k_A + k_B + k_C ≥ 2R + 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KruskalDiagnostic {
    pub k_ranks: [usize; 3],
    pub sum: usize,
    pub bound: usize,
    pub unique: bool,
}

pub fn kruskal_diagnostic(factors: [&CMat; 3]) -> Result<KruskalDiagnostic> {
    let r = factors[0].ncols();
    let mut k_ranks = [0; 3];
    for (kr, f) in k_ranks.iter_mut().zip(factors) {
        *kr = k_rank(f.as_ref(), RANK_TOL)?;
    }
    let sum = k_ranks.iter().sum();
    let bound = 2 * r + 2;
    Ok(KruskalDiagnostic {
        k_ranks,
        sum,
        bound,
        unique: sum >= bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub violations: Vec<String>,
    /// Evaluated on seeded generic factors shaped like the angular model
    /// (`K×K`, `L_SR×K`, `N×K`); absent when `K` is too large for the
    /// exhaustive k-rank search.
    pub kruskal: Option<KruskalDiagnostic>,
    /// Reversed-looking conditions from the source derivation, quoted for
    /// reference and not asserted.
    pub quoted_conditions: String,
}

impl IdentifiabilityReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn generic_factor(rows: usize, cols: usize, rng: &mut impl Rng) -> CMat {
    CMat::from_fn(rows, cols, |_, _| {
        c64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

/// The scenario with its scene seed replaced.
pub fn scenario_with_seed(config: &ScenarioConfig, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        ..config.clone()
    }
}

pub fn check_identifiability(config: &ScenarioConfig) -> IdentifiabilityReport {
    let violations = config.identifiability_violations();
    let k = config.k;
    let kruskal = if (1..=K_RANK_MAX_COLS).contains(&k) {
        let mut rng = stream_rng(k as u64, Stream::Init);
        let a = generic_factor(k, k, &mut rng);
        let b = generic_factor(config.l_sr(), k, &mut rng);
        let c = generic_factor(config.n(), k, &mut rng);
        kruskal_diagnostic([&a, &b, &c]).ok()
    } else {
        None
    };
    IdentifiabilityReport {
        violations,
        kruskal,
        quoted_conditions: "K ≥ 2, K ≥ MQ + 1, K ≥ 2 (as printed; the standard sufficient condition is the Kruskal sum above)".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::RisMode;

    #[test]
    fn default_config_is_identifiable() {
        let r = check_identifiability(&ScenarioConfig::default());
        assert!(r.is_ok(), "{:?}", r.violations);
        let k = r.kruskal.unwrap();
        assert_eq!(k.k_ranks, [2, 2, 2]);
        assert!(k.unique);
    }

    #[test]
    fn violations_name_the_inequality() {
        let cfg = ScenarioConfig {
            q: 1,
            m: 2,
            ..ScenarioConfig::default()
        };
        let r = check_identifiability(&cfg);
        assert!(
            r.violations.iter().any(|v| v.starts_with("MQ ≥ L_ST")),
            "{:?}",
            r.violations
        );
        let cfg = ScenarioConfig {
            t: 255,
            ..ScenarioConfig::default()
        };
        assert!(check_identifiability(&cfg).violations[0].starts_with("T ≥ N²"));
        let cfg = ScenarioConfig {
            t: 255,
            ris_mode: RisMode::Diagonal,
            ..ScenarioConfig::default()
        };
        assert!(check_identifiability(&cfg).is_ok());
    }

    #[test]
    fn kruskal_generic_four_by_two() {
        let mut rng = stream_rng(3, Stream::Init);
        let f: Vec<CMat> = (0..3).map(|_| generic_factor(4, 2, &mut rng)).collect();
        let d = kruskal_diagnostic([&f[0], &f[1], &f[2]]).unwrap();
        assert_eq!((d.sum, d.bound, d.unique), (6, 6, true));
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in Estimator::ALL {
            assert_eq!(e.name().parse::<Estimator>().unwrap(), e);
            assert_eq!(
                serde_json::to_string(&e).unwrap(),
                format!("\"{}\"", e.name())
            );
        }
        assert!("omp".parse::<Estimator>().is_err());
    }

    #[test]
    fn experiment_config_json_round_trip() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let partial =
            ExperimentConfig::from_json(r#"{"trials": 7, "scenario": {"k": 1}}"#).unwrap();
        assert_eq!(
            (partial.trials, partial.scenario.k, partial.scenario.q),
            (7, 1, 8)
        );
        assert!(ExperimentConfig { trials: 0, ..cfg }.validate().is_err());
    }
}
