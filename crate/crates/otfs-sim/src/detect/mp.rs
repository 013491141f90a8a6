//! Gaussian-approximation message passing on the sparse factor graph.
//!
//! Every observation row is a factor connected to the `<= P` symbols it
//! mixes. Messages travel per edge:
//!
//! - variable to factor: the symbol's prior plus all incoming factor
//!   messages except the target row's, summarized by its mean and variance;
//! - factor to variable: the row's residual interference (every connected
//!   symbol except the target) is treated as one Gaussian with matched
//!   moments plus the noise floor.
//!
//! Factor-to-variable messages are damped as convex combinations in the log
//! domain, which makes each symbol's belief exactly the same convex
//! combination of its old and new log-beliefs. Each edge accumulates its
//! incoming product on its own rather than reusing a shared per-symbol
//! subtotal; that per-edge exclusion is what makes one iteration cost
//! `O(|alphabet| * N*M * P^2)`.
//!
//! Two storage forms compute the same algorithm. The general form keeps a
//! full log-categorical per edge. When the alphabet is four axis-symmetric
//! points with a uniform prior, every log message is exactly affine in
//! `(Re x, Im x)` because `|x|^2` is constant, so one complex coefficient
//! per edge carries the whole categorical losslessly (damping included: the
//! affine family is closed under convex combinations). That form stores the
//! coefficients pre-scaled to tanh arguments and converts them to moments
//! in one batched pass per iteration.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::SparseChannel;
use crate::error::{Error, Result};
use crate::grid::Constellation;
use crate::modem::DdGrid;

use super::kernels::{axis_moments, tanh_unit};
use super::{
    argmax_lowest_index, categorical_mean, decisions_from_marginals, effective_noise_variance,
    softmax_in_place, DetectionResult, Prior, VbState,
};

/// Knobs for [`mp_detect`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpConfig {
    /// Upper bound on message-passing iterations; at least 1.
    pub max_iterations: usize,
    /// Log-domain damping factor in (0, 1]; 1 is undamped belief propagation.
    pub damping: f64,
    /// Early-stop threshold on the largest belief-mean change per iteration.
    pub tolerance: f64,
    /// Record hard decisions after every iteration.
    pub record_sweep_decisions: bool,
    pub prior: Prior,
}

impl Default for MpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            damping: 0.5,
            tolerance: 1e-6,
            record_sweep_decisions: false,
            prior: Prior::Uniform,
        }
    }
}

impl MpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::InvalidDetectorConfig(
                "max_iterations must be at least 1".into(),
            ));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidDetectorConfig(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
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

/// Factor-graph edges of a sparse channel, indexed both ways.
struct EdgeGraph {
    /// Edge `e` connects its row to symbol `edge_col[e]`; edges are numbered
    /// row by row, and the gain components live in parallel arrays.
    edge_col: Vec<u32>,
    gain_re: Vec<f64>,
    gain_im: Vec<f64>,
    gain_sq: Vec<f64>,
    row_offsets: Vec<u32>,
    /// Edge ids grouped by symbol.
    sym_offsets: Vec<u32>,
    sym_edges: Vec<u32>,
}

impl EdgeGraph {
    fn build(ch: &SparseChannel) -> Self {
        let nm = ch.dims().num_symbols();
        let ne: usize = ch.rows().iter().map(|r| r.len()).sum();
        let mut edge_col = Vec::with_capacity(ne);
        let mut gain_re = Vec::with_capacity(ne);
        let mut gain_im = Vec::with_capacity(ne);
        let mut gain_sq = Vec::with_capacity(ne);
        let mut row_offsets = Vec::with_capacity(nm + 1);
        row_offsets.push(0u32);
        let mut sym_counts = vec![0u32; nm];
        for row in ch.rows() {
            for &(c, g) in row {
                edge_col.push(c as u32);
                gain_re.push(g.re);
                gain_im.push(g.im);
                gain_sq.push(g.norm_sqr());
                sym_counts[c] += 1;
            }
            row_offsets.push(edge_col.len() as u32);
        }
        let mut sym_offsets = vec![0u32; nm + 1];
        for c in 0..nm {
            sym_offsets[c + 1] = sym_offsets[c] + sym_counts[c];
        }
        let mut fill = sym_offsets[..nm].to_vec();
        let mut sym_edges = vec![0u32; ne];
        for (e, &c) in edge_col.iter().enumerate() {
            sym_edges[fill[c as usize] as usize] = e as u32;
            fill[c as usize] += 1;
        }
        Self {
            edge_col,
            gain_re,
            gain_im,
            gain_sq,
            row_offsets,
            sym_offsets,
            sym_edges,
        }
    }

    fn gain(&self, e: usize) -> Complex64 {
        Complex64::new(self.gain_re[e], self.gain_im[e])
    }

    fn symbol_edges(&self, c: usize) -> &[u32] {
        &self.sym_edges[self.sym_offsets[c] as usize..self.sym_offsets[c + 1] as usize]
    }
}

/// A four-point alphabet of the form `s*(+-1 +- i)`, one point per sign
/// quadrant. For these, `|x|^2` is constant and marginals factor per axis.
struct AxisAlphabet {
    s: f64,
    sign_re: [f64; 4],
    sign_im: [f64; 4],
    /// Common point energy `2 s^2`.
    energy: f64,
}

fn axis_alphabet(points: &[Complex64]) -> Option<AxisAlphabet> {
    if points.len() != 4 {
        return None;
    }
    let s = points[0].re.abs();
    if !(s > 0.0) {
        return None;
    }
    let mut seen = [false; 4];
    let mut sign_re = [0.0f64; 4];
    let mut sign_im = [0.0f64; 4];
    for (i, p) in points.iter().enumerate() {
        if p.re.abs() != s || p.im.abs() != s {
            return None;
        }
        let quadrant = (p.re < 0.0) as usize + 2 * ((p.im < 0.0) as usize);
        if seen[quadrant] {
            return None;
        }
        seen[quadrant] = true;
        sign_re[i] = p.re.signum();
        sign_im[i] = p.im.signum();
    }
    Some(AxisAlphabet {
        s,
        sign_re,
        sign_im,
        energy: 2.0 * s * s,
    })
}

struct MpOutcome {
    marginals: Vec<Vec<f64>>,
    belief_means: Vec<Complex64>,
    sweeps_run: usize,
    converged: bool,
    sweep_decisions: Vec<Vec<u8>>,
}

/// Message passing with full categorical messages; any alphabet or prior.
fn mp_run_general(
    y: &DdGrid,
    cons: &Constellation,
    cfg: &MpConfig,
    graph: &EdgeGraph,
    sigma2: f64,
    log_prior: Option<&[f64]>,
) -> MpOutcome {
    let nm = y.dims().num_symbols();
    let chi = cons.len();
    let points = cons.points();
    let prior_row = |c: usize| log_prior.map(|t| &t[c * chi..(c + 1) * chi]);
    let ne = graph.edge_col.len();
    let obs = y.entries();

    // Factor-to-variable log messages, max-normalized per edge.
    let mut f2v = vec![0.0f64; ne * chi];
    // Moments of each edge's variable-to-factor message.
    let mut edge_mean = vec![Complex64::new(0.0, 0.0); ne];
    let mut edge_var = vec![0.0f64; ne];

    let mut beliefs = vec![0.0f64; nm * chi];
    let mut belief_means = vec![Complex64::new(0.0, 0.0); nm];
    let mut scratch = vec![0.0f64; chi];

    let mut converged = false;
    let mut sweeps_run = 0;
    let mut sweep_decisions = Vec::new();
    let energy: Vec<f64> = points.iter().map(|x| x.norm_sqr()).collect();

    for _ in 0..cfg.max_iterations {
        // Variable-to-factor pass: each edge's message excludes exactly the
        // row it targets, then is summarized by its first two moments.
        for c in 0..nm {
            let edges = graph.symbol_edges(c);
            let lp = prior_row(c);
            for (i, &e) in edges.iter().enumerate() {
                match lp {
                    Some(lp) => scratch.copy_from_slice(lp),
                    None => scratch.iter_mut().for_each(|s| *s = 0.0),
                }
                for (j, &e2) in edges.iter().enumerate() {
                    if j == i {
                        continue;
                    }
                    let msg = &f2v[e2 as usize * chi..(e2 as usize + 1) * chi];
                    for (s, &m) in scratch.iter_mut().zip(msg) {
                        *s += m;
                    }
                }
                softmax_in_place(&mut scratch);
                let mean = categorical_mean(&scratch, points);
                let mut second = 0.0;
                for (p, &e2) in scratch.iter().zip(&energy) {
                    second += p * e2;
                }
                edge_mean[e as usize] = mean;
                edge_var[e as usize] = (second - mean.norm_sqr()).max(0.0);
            }
        }

        // Factor-to-variable pass: residual interference at the row becomes
        // a single Gaussian; the new message is damped into the old one.
        for r in 0..nm {
            let lo = graph.row_offsets[r] as usize;
            let hi = graph.row_offsets[r + 1] as usize;
            let yr = obs[r];
            for e in lo..hi {
                let mut interference = Complex64::new(0.0, 0.0);
                let mut variance = sigma2;
                for e2 in lo..hi {
                    if e2 == e {
                        continue;
                    }
                    interference += graph.gain(e2) * edge_mean[e2];
                    variance += graph.gain_sq[e2] * edge_var[e2];
                }
                let residual = yr - interference;
                let g = graph.gain(e);
                let inv_v = 1.0 / variance;
                let msg = &mut f2v[e * chi..(e + 1) * chi];
                let mut max = f64::NEG_INFINITY;
                for (i, m) in msg.iter_mut().enumerate() {
                    let new = -(residual - g * points[i]).norm_sqr() * inv_v;
                    *m = cfg.damping * new + (1.0 - cfg.damping) * *m;
                    if *m > max {
                        max = *m;
                    }
                }
                for m in msg.iter_mut() {
                    *m -= max;
                }
            }
        }

        // Beliefs and convergence.
        let mut max_change = 0.0f64;
        for c in 0..nm {
            let b = &mut beliefs[c * chi..(c + 1) * chi];
            match prior_row(c) {
                Some(lp) => b.copy_from_slice(lp),
                None => b.iter_mut().for_each(|v| *v = 0.0),
            }
            for &e in graph.symbol_edges(c) {
                let msg = &f2v[e as usize * chi..(e as usize + 1) * chi];
                for (v, &m) in b.iter_mut().zip(msg) {
                    *v += m;
                }
            }
            softmax_in_place(b);
            let mean = categorical_mean(b, points);
            let change = (mean - belief_means[c]).norm();
            if change > max_change {
                max_change = change;
            }
            belief_means[c] = mean;
        }
        sweeps_run += 1;

        if cfg.record_sweep_decisions {
            sweep_decisions.push(
                beliefs
                    .chunks_exact(chi)
                    .map(|q| argmax_lowest_index(q) as u8)
                    .collect(),
            );
        }
        if max_change < cfg.tolerance {
            converged = true;
            break;
        }
    }

    MpOutcome {
        marginals: beliefs.chunks_exact(chi).map(|q| q.to_vec()).collect(),
        belief_means,
        sweeps_run,
        converged,
        sweep_decisions,
    }
}

/// Belief refresh for the axis form: full per-symbol coefficient sums,
/// means through `tanh`, and the largest mean movement since the last call.
fn axis_beliefs(
    graph: &EdgeGraph,
    a_re: &[f64],
    a_im: &[f64],
    s: f64,
    belief: &mut [Complex64],
    belief_means: &mut [Complex64],
) -> f64 {
    let mut max_change = 0.0f64;
    for (c, b) in belief.iter_mut().enumerate() {
        let mut sr = 0.0;
        let mut si = 0.0;
        for &e in graph.symbol_edges(c) {
            sr += a_re[e as usize];
            si += a_im[e as usize];
        }
        *b = Complex64::new(sr, si);
        let mean = Complex64::new(s * tanh_unit(sr), s * tanh_unit(si));
        let change = (mean - belief_means[c]).norm();
        if change > max_change {
            max_change = change;
        }
        belief_means[c] = mean;
    }
    max_change
}

/// Message passing over an axis-symmetric four-point alphabet with a
/// uniform prior: each message is its exact log-affine coefficient, stored
/// pre-scaled so the coefficient sums are tanh arguments directly.
fn mp_run_axis(
    y: &DdGrid,
    cfg: &MpConfig,
    graph: &EdgeGraph,
    sigma2: f64,
    axis: &AxisAlphabet,
) -> MpOutcome {
    let nm = y.dims().num_symbols();
    let ne = graph.edge_col.len();
    let s = axis.s;
    let d = cfg.damping;
    let omd = 1.0 - d;
    let obs_re: Vec<f64> = y.entries().iter().map(|z| z.re).collect();
    let obs_im: Vec<f64> = y.entries().iter().map(|z| z.im).collect();

    // Damped factor-to-variable coefficients scaled by s; zero is the
    // uniform message.
    let mut a_re = vec![0.0f64; ne];
    let mut a_im = vec![0.0f64; ne];
    // Per-edge exclusion sums (tanh arguments) and the moments of each
    // edge's variable-to-factor message.
    let mut arg_re = vec![0.0f64; ne];
    let mut arg_im = vec![0.0f64; ne];
    let mut mean_re = vec![0.0f64; ne];
    let mut mean_im = vec![0.0f64; ne];
    let mut var = vec![axis.energy; ne];

    let mut belief = vec![Complex64::new(0.0, 0.0); nm];
    let mut belief_means = vec![Complex64::new(0.0, 0.0); nm];

    let mut converged = false;
    let mut sweeps_run = 0;
    let mut sweep_decisions = Vec::new();

    let hard_decision = |b: Complex64| -> u8 {
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for i in 0..4 {
            let score = axis.sign_re[i] * b.re + axis.sign_im[i] * b.im;
            if score > best_score {
                best_score = score;
                best = i;
            }
        }
        best as u8
    };

    // With tolerance zero and no per-iteration decisions wanted, beliefs
    // influence nothing until the final iteration, so they are refreshed
    // once after the loop instead.
    let beliefs_every_iteration = cfg.tolerance > 0.0 || cfg.record_sweep_decisions;

    for _ in 0..cfg.max_iterations {
        // Variable-to-factor pass; per-edge exclusion sum over siblings.
        for c in 0..nm {
            let lo = graph.sym_offsets[c] as usize;
            let hi = graph.sym_offsets[c + 1] as usize;
            let edges = &graph.sym_edges[lo..hi];
            for (i, &e) in edges.iter().enumerate() {
                let mut sr = 0.0;
                let mut si = 0.0;
                for (j, &e2) in edges.iter().enumerate() {
                    if j != i {
                        sr += a_re[e2 as usize];
                        si += a_im[e2 as usize];
                    }
                }
                arg_re[e as usize] = sr;
                arg_im[e as usize] = si;
            }
        }

        // Exclusion sums become message moments in one batched pass.
        axis_moments(
            &arg_re,
            &arg_im,
            &mut mean_re,
            &mut mean_im,
            &mut var,
            s,
            axis.energy,
        );

        // Factor-to-variable pass; per-edge exclusion sums over the row.
        for r in 0..nm {
            let lo = graph.row_offsets[r] as usize;
            let hi = graph.row_offsets[r + 1] as usize;
            let width = hi - lo;
            let yr_re = obs_re[r];
            let yr_im = obs_im[r];
            let g_re = &graph.gain_re[lo..hi];
            let g_im = &graph.gain_im[lo..hi];
            let g_sq = &graph.gain_sq[lo..hi];
            let m_re = &mean_re[lo..hi];
            let m_im = &mean_im[lo..hi];
            let vv = &var[lo..hi];
            for i in 0..width {
                let mut ir = 0.0;
                let mut ii = 0.0;
                let mut v = sigma2;
                for j in 0..width {
                    if j != i {
                        ir += g_re[j] * m_re[j] - g_im[j] * m_im[j];
                        ii += g_re[j] * m_im[j] + g_im[j] * m_re[j];
                        v += g_sq[j] * vv[j];
                    }
                }
                let rr = yr_re - ir;
                let ri = yr_im - ii;
                let sc = 2.0 * s / v;
                let nr = (g_re[i] * rr + g_im[i] * ri) * sc;
                let ni = (g_re[i] * ri - g_im[i] * rr) * sc;
                let e = lo + i;
                a_re[e] = d * nr + omd * a_re[e];
                a_im[e] = d * ni + omd * a_im[e];
            }
        }
        sweeps_run += 1;

        if beliefs_every_iteration {
            let max_change = axis_beliefs(graph, &a_re, &a_im, s, &mut belief, &mut belief_means);
            if cfg.record_sweep_decisions {
                sweep_decisions.push(belief.iter().map(|&b| hard_decision(b)).collect());
            }
            if max_change < cfg.tolerance {
                converged = true;
                break;
            }
        }
    }
    if !beliefs_every_iteration {
        axis_beliefs(graph, &a_re, &a_im, s, &mut belief, &mut belief_means);
    }

    // Expand the coefficient sums back into normalized categoricals.
    let marginals: Vec<Vec<f64>> = belief
        .iter()
        .map(|&b| {
            let p_re = 1.0 / (1.0 + (-2.0 * b.re).exp());
            let p_im = 1.0 / (1.0 + (-2.0 * b.im).exp());
            let mut q = vec![0.0f64; 4];
            let mut sum = 0.0;
            for i in 0..4 {
                let pr = if axis.sign_re[i] > 0.0 { p_re } else { 1.0 - p_re };
                let pi = if axis.sign_im[i] > 0.0 { p_im } else { 1.0 - p_im };
                q[i] = pr * pi;
                sum += q[i];
            }
            for v in q.iter_mut() {
                *v /= sum;
            }
            q
        })
        .collect();

    MpOutcome {
        marginals,
        belief_means,
        sweeps_run,
        converged,
        sweep_decisions,
    }
}

/// Message-passing detection of one received frame.
pub fn mp_detect(
    y: &DdGrid,
    ch: &SparseChannel,
    cons: &Constellation,
    cfg: &MpConfig,
) -> Result<DetectionResult> {
    cfg.validate()?;
    if y.dims() != ch.dims() {
        return Err(Error::DimensionMismatch {
            expected_n: ch.dims().n_doppler,
            expected_m: ch.dims().m_delay,
            got_n: y.dims().n_doppler,
            got_m: y.dims().m_delay,
        });
    }
    let sigma2 = effective_noise_variance(ch.noise_variance())?;
    let nm = ch.dims().num_symbols();
    let chi = cons.len();
    let log_prior = cfg.prior.log_table(nm, chi)?;

    let graph = EdgeGraph::build(ch);
    let axis = match cfg.prior {
        Prior::Uniform => axis_alphabet(cons.points()),
        Prior::PerSymbol(_) => None,
    };
    let out = match axis {
        Some(axis) => mp_run_axis(y, cfg, &graph, sigma2, &axis),
        None => mp_run_general(y, cons, cfg, &graph, sigma2, log_prior.as_deref()),
    };

    let state = VbState {
        marginals: out.marginals,
        means: out.belief_means,
        iteration: out.sweeps_run,
    };
    let (decision_indices, hard_decisions) =
        decisions_from_marginals(&state.marginals, cons, ch.dims());
    Ok(DetectionResult {
        hard_decisions,
        decision_indices,
        marginals: state,
        elbo_trace: Vec::new(),
        sweeps_run: out.sweeps_run,
        converged: out.converged,
        sweep_decisions: out.sweep_decisions,
    })
}
