//! Symbol detectors for the sparse delay-Doppler channel model.
//!
//! Three detectors share one result shape:
//!
//! - [`vb_detect`]: mean-field variational Bayes. Precomputes quadratic
//!   channel statistics once per frame, then runs coordinate-ascent sweeps
//!   that refresh one symbol's categorical marginal at a time. Sequential
//!   sweeps never decrease the evidence lower bound.
//! - [`mp_detect`]: Gaussian-approximation message passing on the sparse
//!   factor graph, with per-edge messages and log-domain damping.
//! - [`map_exhaustive`]: exact joint MAP by enumeration, feasible only for
//!   small grids and guarded by a hypothesis budget.
//!
//! All hard decisions break ties toward the lowest constellation index, so
//! results are reproducible bit for bit.

pub mod exhaustive;
pub(crate) mod kernels;
pub mod mp;
pub mod vb;

pub use exhaustive::{map_exhaustive, DEFAULT_MAP_BUDGET};
pub use mp::{mp_detect, MpConfig};
pub use vb::{elbo, precompute_stats, vb_detect, vb_sweep, vb_update_symbol, VbState, VbStatistics};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Constellation, FrameDims};
use crate::modem::DdGrid;

/// Smallest noise variance the detectors will work with; anything positive
/// but smaller is clamped here so likelihood exponents stay finite.
pub const NOISE_VARIANCE_FLOOR: f64 = 1e-12;

/// Prior over the constellation alphabet, per transmitted symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prior {
    /// Every constellation point equally likely at every position.
    Uniform,
    /// One categorical per flat symbol index (outer length `N*M`, inner
    /// length `|alphabet|`, each row summing to 1).
    PerSymbol(Vec<Vec<f64>>),
}

impl Prior {
    /// Flattened `nm x chi` table of log prior probabilities, or `None` for
    /// the uniform prior (a constant that normalization absorbs).
    pub(crate) fn log_table(&self, nm: usize, chi: usize) -> Result<Option<Vec<f64>>> {
        match self {
            Prior::Uniform => Ok(None),
            Prior::PerSymbol(rows) => {
                if rows.len() != nm {
                    return Err(Error::InvalidDetectorConfig(format!(
                        "prior has {} rows, grid has {} symbols",
                        rows.len(),
                        nm
                    )));
                }
                let mut table = Vec::with_capacity(nm * chi);
                for (r, row) in rows.iter().enumerate() {
                    if row.len() != chi {
                        return Err(Error::InvalidDetectorConfig(format!(
                            "prior row {r} has {} entries, alphabet has {chi}",
                            row.len()
                        )));
                    }
                    let mut sum = 0.0;
                    for &p in row {
                        if !(p.is_finite() && p >= 0.0) {
                            return Err(Error::InvalidDetectorConfig(format!(
                                "prior row {r} holds invalid probability {p}"
                            )));
                        }
                        sum += p;
                    }
                    if (sum - 1.0).abs() > 1e-6 {
                        return Err(Error::InvalidDetectorConfig(format!(
                            "prior row {r} sums to {sum}, expected 1"
                        )));
                    }
                    table.extend(row.iter().map(|&p| p.ln()));
                }
                Ok(Some(table))
            }
        }
    }
}

/// Order in which a sweep visits the symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Raster order over flat indices, each update seeing the ones before
    /// it. This is the schedule with the monotone-ELBO guarantee.
    Sequential,
    /// All symbols updated from the previous sweep's means at once. No
    /// monotonicity guarantee.
    Parallel,
}

/// Knobs for [`vb_detect`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Upper bound on coordinate-ascent sweeps; at least 1.
    pub max_sweeps: usize,
    /// Early-stop threshold on the largest per-symbol mean change across a
    /// sweep. Zero disables early stopping.
    pub tolerance: f64,
    pub schedule: Schedule,
    /// Record hard decisions after every sweep (for per-iteration BER).
    pub record_sweep_decisions: bool,
    pub prior: Prior,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 10,
            tolerance: 1e-6,
            schedule: Schedule::Sequential,
            record_sweep_decisions: false,
            prior: Prior::Uniform,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_sweeps < 1 {
            return Err(Error::InvalidDetectorConfig(
                "max_sweeps must be at least 1".into(),
            ));
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return Err(Error::InvalidDetectorConfig(format!(
                "tolerance must be finite and non-negative, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// What every detector returns.
#[derive(Debug, Clone)]
pub struct DetectionResult {
    /// Hard decisions as constellation points on the grid.
    pub hard_decisions: DdGrid,
    /// Hard decisions as constellation indices, flat order.
    pub decision_indices: Vec<u8>,
    /// Final per-symbol marginals (beliefs, for message passing).
    pub marginals: VbState,
    /// Evidence lower bound after each sweep. Empty for detectors that do
    /// not track it.
    pub elbo_trace: Vec<f64>,
    pub sweeps_run: usize,
    pub converged: bool,
    /// Hard decisions after each sweep when requested, else empty.
    pub sweep_decisions: Vec<Vec<u8>>,
}

/// Clamp-and-check for the channel's noise variance.
pub(crate) fn effective_noise_variance(sigma2: f64) -> Result<f64> {
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::InvalidNoiseVariance(sigma2));
    }
    Ok(sigma2.max(NOISE_VARIANCE_FLOOR))
}

/// In-place softmax with max subtraction; `scores` becomes a normalized
/// categorical.
pub(crate) fn softmax_in_place(scores: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for &s in scores.iter() {
        if s > max {
            max = s;
        }
    }
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

/// Argmax with ties going to the lowest index.
pub(crate) fn argmax_lowest_index(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Mean of the alphabet under a categorical.
pub(crate) fn categorical_mean(q: &[f64], points: &[Complex64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (p, x) in q.iter().zip(points) {
        acc += p * x;
    }
    acc
}

/// Hard decisions (indices and grid) from per-symbol marginals.
pub(crate) fn decisions_from_marginals(
    marginals: &[Vec<f64>],
    cons: &Constellation,
    dims: FrameDims,
) -> (Vec<u8>, DdGrid) {
    let points = cons.points();
    let indices: Vec<u8> = marginals
        .iter()
        .map(|q| argmax_lowest_index(q) as u8)
        .collect();
    let entries: Vec<Complex64> = indices.iter().map(|&i| points[i as usize]).collect();
    let grid = DdGrid::from_entries(entries, dims).expect("decision count matches dims");
    (indices, grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_normalizes_and_orders() {
        let mut s = [1.0, 3.0, 2.0, -500.0];
        softmax_in_place(&mut s);
        let sum: f64 = s.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(s[1] > s[2] && s[2] > s[0] && s[0] > s[3]);
    }

    #[test]
    fn softmax_handles_large_magnitudes() {
        let mut s = [1e6, 1e6 - 3.0];
        softmax_in_place(&mut s);
        assert!(s.iter().all(|p| p.is_finite()));
        assert!((s[0] + s[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax_lowest_index(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax_lowest_index(&[0.1, 0.4, 0.4, 0.1]), 1);
        assert_eq!(argmax_lowest_index(&[0.0, 0.0, 0.0, 1.0]), 3);
    }

    #[test]
    fn uniform_prior_has_no_table() {
        assert!(Prior::Uniform.log_table(8, 4).unwrap().is_none());
    }

    #[test]
    fn per_symbol_prior_validated() {
        let good = Prior::PerSymbol(vec![vec![0.7, 0.1, 0.1, 0.1]; 2]);
        let t = good.log_table(2, 4).unwrap().unwrap();
        assert_eq!(t.len(), 8);
        assert!((t[0] - 0.7f64.ln()).abs() < 1e-15);

        let wrong_rows = Prior::PerSymbol(vec![vec![0.25; 4]; 3]);
        assert!(wrong_rows.log_table(2, 4).is_err());
        let wrong_sum = Prior::PerSymbol(vec![vec![0.5, 0.5, 0.5, 0.5]; 2]);
        assert!(wrong_sum.log_table(2, 4).is_err());
        let negative = Prior::PerSymbol(vec![vec![1.5, -0.5, 0.0, 0.0]; 2]);
        assert!(negative.log_table(2, 4).is_err());
    }

    #[test]
    fn zero_prior_probability_maps_to_neg_infinity() {
        let p = Prior::PerSymbol(vec![vec![0.5, 0.5, 0.0, 0.0]]);
        let t = p.log_table(1, 4).unwrap().unwrap();
        assert_eq!(t[2], f64::NEG_INFINITY);
    }

    #[test]
    fn detector_config_validation() {
        let mut cfg = DetectorConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.max_sweeps = 0;
        assert!(cfg.validate().is_err());
        cfg.max_sweeps = 1;
        cfg.tolerance = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn noise_variance_guard() {
        assert!(effective_noise_variance(0.0).is_err());
        assert!(effective_noise_variance(-1.0).is_err());
        assert!(effective_noise_variance(f64::NAN).is_err());
        assert_eq!(effective_noise_variance(1e-20).unwrap(), NOISE_VARIANCE_FLOOR);
        assert_eq!(effective_noise_variance(0.5).unwrap(), 0.5);
    }
}
