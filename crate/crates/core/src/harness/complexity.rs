//! Dominant operation counts of each processing stage, evaluated at a
//! scenario's dimensions.

use serde::{Deserialize, Serialize};

use super::Estimator;
use crate::scenario::{RisMode, ScenarioConfig};

/// ALS iteration count used for the closed forms when none is given.
pub const DEFAULT_ALS_ITER: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub estimator: Estimator,
    pub als_iter: usize,
    /// `(stage, count)` in pipeline order.
    pub stages: Vec<(String, f64)>,
    pub total: f64,
}

fn ntfe_i_als(l: f64, n: f64, k: f64, it: f64) -> f64 {
    (l * l * n / k + l + n) * k * k * it
        + 2.0 * (l + n) * k
        + (5.0 * l + 3.0 * n + 1.0) * k * k
        + 6.0 * k.powi(3)
}

fn ntfe_ii_als(mq: f64, n: f64, k: f64, l_st: f64, m: f64, q: f64, it: f64) -> f64 {
    ((mq * n + k * k * l_st) * mq + (mq / k + m + q) * k.powi(3)) * it
        + (3.0 + 2.0 * l_st) * n
        + (m + n + q + 1.0) * k
        + 3.0 * (m + q) * k * k
        + 6.0 * k.powi(3)
}

pub fn complexity_estimate(
    config: &ScenarioConfig,
    estimator: Estimator,
    als_iter: Option<usize>,
) -> ComplexityReport {
    let it = als_iter.unwrap_or(DEFAULT_ALS_ITER);
    let f = |x: usize| x as f64;
    let (n, l, l_st, mq, m, q, k, t) = (
        f(config.n()),
        f(config.l_sr()),
        f(config.l_st()),
        f(config.mq()),
        f(config.m),
        f(config.q),
        f(config.k),
        f(config.t),
    );
    let itf = it as f64;
    let filter = ("ls", n.powi(4) * t);
    let split = match config.ris_mode {
        RisMode::BeyondDiagonal => ("ksa", l * mq * n * n * k),
        RisMode::Diagonal => ("krsa", l * mq * n * k),
    };
    let gains = ("gains", l * mq * n * n * k);
    let mut stages: Vec<(&str, f64)> = vec![filter];
    match estimator {
        Estimator::Ls => {}
        Estimator::Ksa => stages.push(split),
        Estimator::TendaeAls => {
            stages.push(split);
            stages.push(("ntfe_i_als", ntfe_i_als(l, n, k, itf)));
            stages.push(("ntfe_ii_als", ntfe_ii_als(mq, n, k, l_st, m, q, itf)));
            stages.push(gains);
        }
        Estimator::TendaeHosvd => {
            stages.push(split);
            stages.push(("ntfe_i_hosvd", l * n * k * (l + n + k)));
            stages.push((
                "ntfe_ii_hosvd",
                mq * n * k * (mq + n + k) + 3.0 * mq * k * k,
            ));
            stages.push(gains);
        }
    }
    let total = stages.iter().map(|s| s.1).sum();
    ComplexityReport {
        estimator,
        als_iter: it,
        stages: stages
            .into_iter()
            .map(|(s, c)| (s.to_string(), c))
            .collect(),
        total,
    }
}

impl ComplexityReport {
    pub fn stage(&self, name: &str) -> Option<f64> {
        self.stages.iter().find(|s| s.0 == name).map(|s| s.1)
    }
}
