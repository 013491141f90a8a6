//! Mean-field variational Bayes detection.
//!
//! The posterior over the transmitted grid is approximated by a fully
//! factorized distribution, one categorical per symbol. Expanding the
//! Gaussian log-likelihood -|y - H d|^2 / sigma^2 around symbol `r` gives a
//! closed-form coordinate update
//!
//! ```text
//! q_r(x) ∝ p_r(x) * exp( (-rho_r*|x|^2 + 2*Re{conj(x)*m_r}) / sigma^2 )
//! m_r = z_r - sum_{c != r} G[r,c] * E[d_c]
//! ```
//!
//! with `z = H^H y`, `rho` the diagonal of `H^H H`, and `G` its off-diagonal
//! part. Each update exactly maximizes the evidence lower bound in the `r`-th
//! coordinate, so sequential sweeps never decrease it. The couplings `G` are
//! walked explicitly per update (at most `P*(P-1)` neighbors per symbol);
//! everything else per update is constant-size work.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::Constellation;
use crate::modem::DdGrid;
use crate::channel::SparseChannel;

use super::{
    argmax_lowest_index, categorical_mean, decisions_from_marginals, effective_noise_variance,
    softmax_in_place, DetectionResult, DetectorConfig, Prior, Schedule,
};

/// Per-frame quadratic statistics of the received grid and channel.
#[derive(Debug, Clone)]
pub struct VbStatistics {
    /// Column energies: `rho[r] = (H^H H)_{r,r}`, real and non-negative.
    rho: Vec<f64>,
    /// Matched filter output `z = H^H y`.
    matched_filter: Vec<Complex64>,
    /// Off-diagonal couplings of `H^H H` in compressed rows: for symbol `r`,
    /// entries `coupling_cols/gains[coupling_offsets[r]..coupling_offsets[r+1]]`
    /// hold `(c, G[r,c])` with `c != r`, sorted by `c`, duplicates merged.
    coupling_offsets: Vec<u32>,
    coupling_cols: Vec<u32>,
    coupling_gains: Vec<Complex64>,
    /// Clamped noise variance, strictly positive.
    noise_variance: f64,
    prior: Prior,
    /// Flattened `nm x chi` log priors; `None` means uniform.
    log_prior: Option<Vec<f64>>,
    num_symbols: usize,
}

impl VbStatistics {
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn matched_filter(&self) -> &[Complex64] {
        &self.matched_filter
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn num_symbols(&self) -> usize {
        self.num_symbols
    }

    /// Coupling entries of symbol `r` as parallel slices `(columns, gains)`.
    pub fn couplings(&self, r: usize) -> (&[u32], &[Complex64]) {
        let lo = self.coupling_offsets[r] as usize;
        let hi = self.coupling_offsets[r + 1] as usize;
        (&self.coupling_cols[lo..hi], &self.coupling_gains[lo..hi])
    }

    fn log_prior_row(&self, r: usize, chi: usize) -> Option<&[f64]> {
        self.log_prior.as_ref().map(|t| &t[r * chi..(r + 1) * chi])
    }
}

/// Compute `rho`, the matched filter, and the pairwise couplings for one
/// received frame. Cost is `O(N*M*P^2)`, once per frame.
pub fn precompute_stats(y: &DdGrid, ch: &SparseChannel, prior: Prior) -> Result<VbStatistics> {
    if y.dims() != ch.dims() {
        return Err(Error::DimensionMismatch {
            expected_n: ch.dims().n_doppler,
            expected_m: ch.dims().m_delay,
            got_n: y.dims().n_doppler,
            got_m: y.dims().m_delay,
        });
    }
    let noise_variance = effective_noise_variance(ch.noise_variance())?;
    let nm = ch.dims().num_symbols();
    let obs = y.entries();

    let mut rho = vec![0.0; nm];
    let mut matched_filter = vec![Complex64::new(0.0, 0.0); nm];
    // Raw neighbor slots: each row with p entries contributes p-1 ordered
    // pairs per member column.
    let mut raw_counts = vec![0u32; nm];
    for row in ch.rows() {
        let extra = (row.len() - 1) as u32;
        for &(c, _) in row {
            raw_counts[c] += extra;
        }
    }
    let mut offsets = vec![0u32; nm + 1];
    for r in 0..nm {
        offsets[r + 1] = offsets[r] + raw_counts[r];
    }
    let total = offsets[nm] as usize;
    let mut cols = vec![0u32; total];
    let mut gains = vec![Complex64::new(0.0, 0.0); total];
    let mut fill = offsets[..nm].to_vec();

    for (r, row) in ch.rows().iter().enumerate() {
        let yr = obs[r];
        for (i, &(ci, gi)) in row.iter().enumerate() {
            rho[ci] += gi.norm_sqr();
            matched_filter[ci] += gi.conj() * yr;
            for (j, &(cj, gj)) in row.iter().enumerate() {
                if i == j {
                    continue;
                }
                let slot = fill[ci] as usize;
                cols[slot] = cj as u32;
                gains[slot] = gi.conj() * gj;
                fill[ci] += 1;
            }
        }
    }

    // Merge duplicate columns per symbol (several observation rows can pair
    // the same two symbols) and compact.
    let mut merged_offsets = vec![0u32; nm + 1];
    let mut merged_cols: Vec<u32> = Vec::with_capacity(total);
    let mut merged_gains: Vec<Complex64> = Vec::with_capacity(total);
    let mut scratch: Vec<(u32, Complex64)> = Vec::new();
    for r in 0..nm {
        let lo = offsets[r] as usize;
        let hi = (offsets[r] + raw_counts[r]) as usize;
        scratch.clear();
        scratch.extend(cols[lo..hi].iter().copied().zip(gains[lo..hi].iter().copied()));
        scratch.sort_unstable_by_key(|&(c, _)| c);
        let mut i = 0;
        while i < scratch.len() {
            let (c, mut g) = scratch[i];
            let mut j = i + 1;
            while j < scratch.len() && scratch[j].0 == c {
                g += scratch[j].1;
                j += 1;
            }
            merged_cols.push(c);
            merged_gains.push(g);
            i = j;
        }
        merged_offsets[r + 1] = merged_cols.len() as u32;
    }

    let chi_hint = match &prior {
        Prior::PerSymbol(rows) => rows.first().map(|r| r.len()).unwrap_or(0),
        Prior::Uniform => 0,
    };
    let log_prior = match &prior {
        Prior::Uniform => None,
        Prior::PerSymbol(_) => prior.log_table(nm, chi_hint)?,
    };

    Ok(VbStatistics {
        rho,
        matched_filter,
        coupling_offsets: merged_offsets,
        coupling_cols: merged_cols,
        coupling_gains: merged_gains,
        noise_variance,
        prior,
        log_prior,
        num_symbols: nm,
    })
}

/// The variational state: one categorical per symbol plus cached means.
#[derive(Debug, Clone)]
pub struct VbState {
    pub(crate) marginals: Vec<Vec<f64>>,
    pub(crate) means: Vec<Complex64>,
    pub(crate) iteration: usize,
}

impl VbState {
    /// Initialize every marginal to the prior. The uniform prior gives all
    /// symbols zero mean, making the first sweep a pure matched-filter step.
    pub fn from_prior(prior: &Prior, num_symbols: usize, cons: &Constellation) -> Result<Self> {
        let chi = cons.len();
        let marginals: Vec<Vec<f64>> = match prior {
            Prior::Uniform => vec![vec![1.0 / chi as f64; chi]; num_symbols],
            Prior::PerSymbol(rows) => {
                prior.log_table(num_symbols, chi)?;
                rows.clone()
            }
        };
        let means = marginals
            .iter()
            .map(|q| categorical_mean(q, cons.points()))
            .collect();
        Ok(Self {
            marginals,
            means,
            iteration: 0,
        })
    }

    pub fn marginal(&self, r: usize) -> &[f64] {
        &self.marginals[r]
    }

    pub fn marginals(&self) -> &[Vec<f64>] {
        &self.marginals
    }

    pub fn mean(&self, r: usize) -> Complex64 {
        self.means[r]
    }

    pub fn means(&self) -> &[Complex64] {
        &self.means
    }

    /// Completed sweeps.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Overwrite one marginal (it must be a normalized categorical) and
    /// refresh the cached mean.
    pub fn set_marginal(&mut self, r: usize, q: &[f64], cons: &Constellation) -> Result<()> {
        if q.len() != cons.len() {
            return Err(Error::InvalidDetectorConfig(format!(
                "marginal has {} entries, alphabet has {}",
                q.len(),
                cons.len()
            )));
        }
        let sum: f64 = q.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || q.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
            return Err(Error::InvalidDetectorConfig(format!(
                "marginal for symbol {r} is not a categorical (sum {sum})"
            )));
        }
        self.marginals[r].copy_from_slice(q);
        self.means[r] = categorical_mean(q, cons.points());
        Ok(())
    }
}

/// Per-alphabet constants reused across one sweep's updates: the linear
/// score coefficients `2 x / sigma^2`, and the energy penalty per point.
/// When every point has the same energy the penalty is a per-symbol
/// constant, which softmax normalization removes, so it is dropped.
struct PointTable {
    fx_re: Vec<f64>,
    fx_im: Vec<f64>,
    /// `|x|^2 / sigma^2` per point; empty when the alphabet has uniform
    /// modulus (the term then cancels in normalization).
    energy: Vec<f64>,
}

impl PointTable {
    fn new(cons: &Constellation, noise_variance: f64) -> Self {
        let points = cons.points();
        let inv_sigma2 = 1.0 / noise_variance;
        let fx_re = points.iter().map(|x| 2.0 * x.re * inv_sigma2).collect();
        let fx_im = points.iter().map(|x| 2.0 * x.im * inv_sigma2).collect();
        let e0 = points[0].norm_sqr();
        let uniform_modulus = points.iter().all(|x| x.norm_sqr() == e0);
        let energy = if uniform_modulus {
            Vec::new()
        } else {
            points.iter().map(|x| x.norm_sqr() * inv_sigma2).collect()
        };
        Self {
            fx_re,
            fx_im,
            energy,
        }
    }
}

/// `exp` that returns exactly 0 past the underflow point instead of taking
/// the subnormal slow path; identical results, bounded cost.
#[inline]
fn exp_underflow_exact(x: f64) -> f64 {
    if x < -746.0 {
        0.0
    } else {
        x.exp()
    }
}

/// New categorical for symbol `r` given everyone else's means, written into
/// `q_out`. Returns the refreshed mean. Reads `means_src`, touches nothing.
fn symbol_posterior(
    stats: &VbStatistics,
    cons: &Constellation,
    tab: &PointTable,
    means_src: &[Complex64],
    r: usize,
    q_out: &mut [f64],
) -> Complex64 {
    let points = cons.points();
    let chi = points.len();

    let mut m = stats.matched_filter[r];
    let (cols, gains) = stats.couplings(r);
    for (&c, &g) in cols.iter().zip(gains) {
        m -= g * means_src[c as usize];
    }

    let lp = stats.log_prior_row(r, chi);
    let mut max = f64::NEG_INFINITY;
    for i in 0..chi {
        let mut score = tab.fx_re[i] * m.re + tab.fx_im[i] * m.im;
        if !tab.energy.is_empty() {
            score -= stats.rho[r] * tab.energy[i];
        }
        if let Some(lp) = lp {
            score += lp[i];
        }
        q_out[i] = score;
        if score > max {
            max = score;
        }
    }
    // Fused softmax and mean: normalize weights and the weighted point sum
    // by the same total.
    let mut sum = 0.0;
    let mut wx = Complex64::new(0.0, 0.0);
    for i in 0..chi {
        let w = exp_underflow_exact(q_out[i] - max);
        q_out[i] = w;
        sum += w;
        wx += w * points[i];
    }
    let inv = 1.0 / sum;
    for q in q_out.iter_mut() {
        *q *= inv;
    }
    wx * inv
}

/// Coordinate update of a single symbol's marginal; all other marginals are
/// left untouched. Returns the updated categorical.
pub fn vb_update_symbol(
    stats: &VbStatistics,
    state: &mut VbState,
    r: usize,
    cons: &Constellation,
) -> Vec<f64> {
    let tab = PointTable::new(cons, stats.noise_variance);
    let mut q = vec![0.0; cons.len()];
    let mean = symbol_posterior(stats, cons, &tab, &state.means, r, &mut q);
    state.marginals[r].copy_from_slice(&q);
    state.means[r] = mean;
    q
}

/// One full sweep over all symbols in the configured order. Returns the
/// largest absolute change of any cached mean.
pub fn vb_sweep(
    stats: &VbStatistics,
    state: &mut VbState,
    cons: &Constellation,
    schedule: Schedule,
) -> f64 {
    let nm = stats.num_symbols;
    let tab = PointTable::new(cons, stats.noise_variance);
    let mut qbuf = vec![0.0; cons.len()];
    let mut max_change = 0.0f64;
    match schedule {
        Schedule::Sequential => {
            for r in 0..nm {
                let new_mean = symbol_posterior(stats, cons, &tab, &state.means, r, &mut qbuf);
                let change = (new_mean - state.means[r]).norm();
                if change > max_change {
                    max_change = change;
                }
                state.marginals[r].copy_from_slice(&qbuf);
                state.means[r] = new_mean;
            }
        }
        Schedule::Parallel => {
            let snapshot = state.means.clone();
            for r in 0..nm {
                let new_mean = symbol_posterior(stats, cons, &tab, &snapshot, r, &mut qbuf);
                let change = (new_mean - snapshot[r]).norm();
                if change > max_change {
                    max_change = change;
                }
                state.marginals[r].copy_from_slice(&qbuf);
                state.means[r] = new_mean;
            }
        }
    }
    state.iteration += 1;
    max_change
}

/// Evidence lower bound of the current state, up to an additive constant
/// independent of the marginals (only differences are meaningful).
pub fn elbo(stats: &VbStatistics, state: &VbState, cons: &Constellation) -> f64 {
    let points = cons.points();
    let chi = points.len();
    let inv_sigma2 = 1.0 / stats.noise_variance;

    // Per-symbol terms: E_q[ln zeta_r] + entropy of q_r, with
    // ln zeta_r(x) = ln p_r(x) + (-rho_r*|x|^2 + 2*Re{conj(x)*z_r})/sigma^2.
    let mut total = 0.0;
    for r in 0..stats.num_symbols {
        let q = &state.marginals[r];
        let z = stats.matched_filter[r];
        let rho_r = stats.rho[r];
        let lp = stats.log_prior_row(r, chi);
        for i in 0..chi {
            let p = q[i];
            if p <= 0.0 {
                continue;
            }
            let x = points[i];
            let lin = 2.0 * (x.re * z.re + x.im * z.im);
            let mut ln_zeta = (lin - rho_r * x.norm_sqr()) * inv_sigma2;
            if let Some(lp) = lp {
                ln_zeta += lp[i];
            }
            total += p * (ln_zeta - p.ln());
        }
    }

    // Pairwise energy: -(1/sigma^2) * sum_{r<c} 2*Re{G[r,c]*mu_c*conj(mu_r)}.
    // The coupling table stores every ordered pair, and the two orders of a
    // pair have conjugate products with equal real parts, so summing all
    // ordered entries once gives exactly the doubled sum over r < c.
    let mut pair = 0.0;
    for r in 0..stats.num_symbols {
        let mu_r_conj = state.means[r].conj();
        let (cols, gains) = stats.couplings(r);
        for (&c, &g) in cols.iter().zip(gains) {
            pair += (g * state.means[c as usize] * mu_r_conj).re;
        }
    }
    total - pair * inv_sigma2
}

/// Full variational detection of one received frame.
pub fn vb_detect(
    y: &DdGrid,
    ch: &SparseChannel,
    cons: &Constellation,
    cfg: &DetectorConfig,
) -> Result<DetectionResult> {
    cfg.validate()?;
    let stats = precompute_stats(y, ch, cfg.prior.clone())?;
    let mut state = VbState::from_prior(&cfg.prior, stats.num_symbols, cons)?;

    let mut elbo_trace = Vec::with_capacity(cfg.max_sweeps);
    let mut sweep_decisions = Vec::new();
    let mut converged = false;
    let mut sweeps_run = 0;
    for _ in 0..cfg.max_sweeps {
        let change = vb_sweep(&stats, &mut state, cons, cfg.schedule);
        sweeps_run += 1;
        elbo_trace.push(elbo(&stats, &state, cons));
        if cfg.record_sweep_decisions {
            sweep_decisions.push(
                state
                    .marginals
                    .iter()
                    .map(|q| argmax_lowest_index(q) as u8)
                    .collect(),
            );
        }
        if change < cfg.tolerance {
            converged = true;
            break;
        }
    }

    let (decision_indices, hard_decisions) =
        decisions_from_marginals(&state.marginals, cons, ch.dims());
    Ok(DetectionResult {
        hard_decisions,
        decision_indices,
        marginals: state,
        elbo_trace,
        sweeps_run,
        converged,
        sweep_decisions,
    })
}
