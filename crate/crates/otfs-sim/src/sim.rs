//! Seeded Monte Carlo harness: per-frame trials, BER sweeps, per-iteration
//! traces, complexity benchmarks, and CSV/plot-script output.
//!
//! Every frame is reproducible in isolation: its generator is seeded with
//! `base_seed XOR frame_index`, and the draw order is fixed (bits, then
//! paths, then noise), so the same frame sees the same channel and noise no
//! matter which detector or SNR point is being evaluated. Detection itself
//! consumes no randomness. Frames are independent and run in parallel;
//! aggregation is a fixed-order reduction so output bytes are stable.

use std::fmt;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{apply_channel, build_effective_matrix, sample_paths, ChannelConfig};
use crate::detect::{
    map_exhaustive, mp_detect, precompute_stats, vb_detect, vb_sweep, DetectorConfig, MpConfig,
    Prior, Schedule, VbState,
};
use crate::error::{Error, Result};
use crate::grid::{map_bits, Constellation, FrameDims, ModulationScheme};
use crate::modem::DdGrid;

/// Which detector a trial runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Vb,
    Mp,
    Map,
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectorKind::Vb => "vb",
            DetectorKind::Mp => "mp",
            DetectorKind::Map => "map",
        })
    }
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vb" => Ok(DetectorKind::Vb),
            "mp" => Ok(DetectorKind::Mp),
            "map" => Ok(DetectorKind::Map),
            other => Err(Error::InvalidSimConfig(format!(
                "unknown detector `{other}` (expected vb, mp, or map)"
            ))),
        }
    }
}

/// Where result files go. All optional; empty means in-memory only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputPaths {
    pub csv: Option<String>,
    pub trace: Option<String>,
    pub plot_script: Option<String>,
}

/// Full experiment description. Deserializes from a flat JSON document;
/// every field has a default, so a config file only names what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dims: FrameDims,
    pub channel: ChannelConfig,
    pub modulation: ModulationScheme,
    /// Detectors to evaluate; each gets its own table rows.
    pub detectors: Vec<DetectorKind>,
    pub vb: DetectorConfig,
    pub mp: MpConfig,
    /// Hypothesis budget for the exhaustive detector.
    pub map_budget: u64,
    pub snr_db_list: Vec<f64>,
    pub num_frames: u64,
    pub base_seed: u64,
    pub outputs: OutputPaths,
    /// Provenance only: the physical parameters behind the Doppler bound.
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub speed_kmh: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl SimConfig {
    /// Desk-scale baseline: small enough for CI, large enough to show the
    /// detector orderings.
    pub fn desk() -> Self {
        Self {
            dims: FrameDims::new(16, 32).expect("static dims"),
            channel: ChannelConfig {
                num_paths: 4,
                k_nu_max: 4,
                l_tau_max: 10,
                pdp_decay: 0.1,
            },
            modulation: ModulationScheme::Qpsk,
            detectors: vec![DetectorKind::Vb],
            vb: DetectorConfig::default(),
            mp: MpConfig::default(),
            map_budget: 1 << 20,
            snr_db_list: vec![5.0, 10.0, 15.0],
            num_frames: 100,
            base_seed: 1,
            outputs: OutputPaths::default(),
            carrier_hz: 4e9,
            subcarrier_spacing_hz: 15e3,
            speed_kmh: 120.0,
        }
    }

    /// Full-scale profile (128 x 512 grid, 2e4 frames, 9 paths). Hours of
    /// compute; excluded from automated runs.
    pub fn paper() -> Self {
        Self {
            dims: FrameDims::new(128, 512).expect("static dims"),
            channel: ChannelConfig {
                num_paths: 9,
                k_nu_max: 4,
                l_tau_max: 10,
                pdp_decay: 0.1,
            },
            detectors: vec![DetectorKind::Vb, DetectorKind::Mp],
            snr_db_list: vec![0.0, 5.0, 10.0, 15.0],
            num_frames: 20_000,
            ..Self::desk()
        }
    }

    /// Copy with a different path count; the delay spread is widened when
    /// the requested count needs more distinct delays than the default span
    /// offers (and clamped inside the grid).
    pub fn with_paths(&self, num_paths: usize) -> Self {
        let mut cfg = self.clone();
        cfg.channel.num_paths = num_paths;
        let need = num_paths.saturating_sub(1);
        let cap = self.dims.m_delay - 1;
        cfg.channel.l_tau_max = cfg.channel.l_tau_max.max(need).min(cap);
        cfg
    }

    /// Symbol-energy-normalized noise variance for an Es/sigma^2 point.
    pub fn sigma2_for(snr_db: f64) -> f64 {
        10f64.powf(-snr_db / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_frames < 1 {
            return Err(Error::InvalidSimConfig("num_frames must be >= 1".into()));
        }
        if self.snr_db_list.is_empty() {
            return Err(Error::InvalidSimConfig("snr_db_list is empty".into()));
        }
        if self.snr_db_list.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidSimConfig("snr_db_list holds a non-finite value".into()));
        }
        if self.detectors.is_empty() {
            return Err(Error::InvalidSimConfig("no detectors selected".into()));
        }
        self.channel.validate(self.dims)?;
        self.vb.validate()?;
        self.mp.validate()?;
        Ok(())
    }
}

/// Outcome of one frame under one detector at one SNR point.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub seed: u64,
    pub bit_errors: u64,
    pub bits_total: u64,
    pub symbol_errors: u64,
    pub symbols_total: u64,
    /// Bit errors after each sweep, when the detector recorded them.
    pub per_iteration_errors: Vec<u64>,
    pub sweeps_run: usize,
    pub converged: bool,
    /// Detection wall time. The only non-deterministic field.
    pub elapsed: Duration,
}

fn hamming_table(cons: &Constellation) -> Vec<u32> {
    let chi = cons.len();
    let labels: Vec<Vec<u8>> = (0..chi).map(|i| cons.bits_of_index(i)).collect();
    let mut table = vec![0u32; chi * chi];
    for a in 0..chi {
        for b in 0..chi {
            table[a * chi + b] = labels[a]
                .iter()
                .zip(&labels[b])
                .filter(|(x, y)| x != y)
                .count() as u32;
        }
    }
    table
}

/// Run the full pipeline for one frame: draw bits, map, draw a channel,
/// pass through it with noise, detect, count errors. Deterministic given
/// `(cfg, detector, snr_db, frame_index)`.
pub fn run_trial(
    cfg: &SimConfig,
    detector: DetectorKind,
    snr_db: f64,
    frame_index: u64,
) -> Result<TrialResult> {
    let with_frame = |e: Error| Error::Frame {
        frame: frame_index,
        source: Box::new(e),
    };
    let seed = cfg.base_seed ^ frame_index;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cons = Constellation::new(cfg.modulation);
    let dims = cfg.dims;
    let nm = dims.num_symbols();
    let bps = cons.bits_per_symbol();

    let bits: Vec<u8> = (0..nm * bps).map(|_| rng.gen_range(0..=1u8)).collect();
    let d = map_bits(&bits, &cons, dims).map_err(with_frame)?;
    let paths = sample_paths(&cfg.channel, dims, &mut rng).map_err(with_frame)?;
    let sigma2 = SimConfig::sigma2_for(snr_db);
    let ch = build_effective_matrix(&paths, sigma2, dims);
    let y = apply_channel(&d, &ch, &mut rng).map_err(with_frame)?;

    let start = Instant::now();
    let (indices, sweeps_run, converged, sweep_decisions) = match detector {
        DetectorKind::Vb => {
            let res = vb_detect(&y, &ch, &cons, &cfg.vb).map_err(with_frame)?;
            (res.decision_indices, res.sweeps_run, res.converged, res.sweep_decisions)
        }
        DetectorKind::Mp => {
            let res = mp_detect(&y, &ch, &cons, &cfg.mp).map_err(with_frame)?;
            (res.decision_indices, res.sweeps_run, res.converged, res.sweep_decisions)
        }
        DetectorKind::Map => {
            let grid = map_exhaustive(&y, &ch, &cons, &Prior::Uniform, cfg.map_budget as u128)
                .map_err(with_frame)?;
            let indices: Vec<u8> = grid
                .entries()
                .iter()
                .map(|&e| cons.index_of_point(e).expect("alphabet point") as u8)
                .collect();
            (indices, 1, true, Vec::new())
        }
    };
    let elapsed = start.elapsed();

    let truth: Vec<u8> = (0..nm)
        .map(|s| cons.index_of_bits(&bits[s * bps..(s + 1) * bps]) as u8)
        .collect();
    let ham = hamming_table(&cons);
    let chi = cons.len();
    let count_bits = |decided: &[u8]| -> u64 {
        decided
            .iter()
            .zip(&truth)
            .map(|(&a, &b)| ham[a as usize * chi + b as usize] as u64)
            .sum()
    };
    let bit_errors = count_bits(&indices);
    let symbol_errors = indices.iter().zip(&truth).filter(|(a, b)| a != b).count() as u64;
    let per_iteration_errors = sweep_decisions.iter().map(|d| count_bits(d)).collect();

    Ok(TrialResult {
        seed,
        bit_errors,
        bits_total: (nm * bps) as u64,
        symbol_errors,
        symbols_total: nm as u64,
        per_iteration_errors,
        sweeps_run,
        converged,
        elapsed,
    })
}

/// One aggregated cell of a BER table.
#[derive(Debug, Clone, PartialEq)]
pub struct BerRow {
    pub detector: DetectorKind,
    pub p: usize,
    pub n: usize,
    pub m: usize,
    pub snr_db: f64,
    pub frames: u64,
    pub bit_errors: u64,
    pub bits_total: u64,
    pub ber: f64,
    pub ci_halfwidth: f64,
    pub mean_sweeps: f64,
    pub mean_ms_per_frame: f64,
}

/// Aggregated sweep results, one row per (detector, SNR) cell.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BerTable {
    pub rows: Vec<BerRow>,
}

pub const BER_CSV_HEADER: &str =
    "detector,P,N,M,snr_db,frames,bit_errors,bits_total,ber,ci_halfwidth,mean_sweeps,mean_ms_per_frame";

impl BerTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(BER_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.detector,
                r.p,
                r.n,
                r.m,
                r.snr_db,
                r.frames,
                r.bit_errors,
                r.bits_total,
                r.ber,
                r.ci_halfwidth,
                r.mean_sweeps,
                r.mean_ms_per_frame
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &str) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Row for a given detector and SNR point.
    pub fn row(&self, detector: DetectorKind, snr_db: f64) -> Option<&BerRow> {
        self.rows
            .iter()
            .find(|r| r.detector == detector && r.snr_db == snr_db)
    }
}

/// 95% binomial half-width by normal approximation; zero-error cells report
/// the rule-of-three upper bound instead of an empty interval.
pub fn ci_halfwidth(errors: u64, total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    if errors == 0 {
        return 3.0 / total as f64;
    }
    let p = errors as f64 / total as f64;
    1.96 * (p * (1.0 - p) / total as f64).sqrt()
}

fn aggregate_rows(
    cfg: &SimConfig,
    detector: DetectorKind,
    snr_db: f64,
    trials: &[TrialResult],
) -> BerRow {
    let frames = trials.len() as u64;
    let bit_errors: u64 = trials.iter().map(|t| t.bit_errors).sum();
    let bits_total: u64 = trials.iter().map(|t| t.bits_total).sum();
    let sweeps: f64 = trials.iter().map(|t| t.sweeps_run as f64).sum();
    let ms: f64 = trials.iter().map(|t| t.elapsed.as_secs_f64() * 1e3).sum();
    BerRow {
        detector,
        p: cfg.channel.num_paths,
        n: cfg.dims.n_doppler,
        m: cfg.dims.m_delay,
        snr_db,
        frames,
        bit_errors,
        bits_total,
        ber: bit_errors as f64 / bits_total as f64,
        ci_halfwidth: ci_halfwidth(bit_errors, bits_total),
        mean_sweeps: sweeps / frames as f64,
        mean_ms_per_frame: ms / frames as f64,
    }
}

fn run_cell(cfg: &SimConfig, detector: DetectorKind, snr_db: f64) -> Result<Vec<TrialResult>> {
    (0..cfg.num_frames)
        .into_par_iter()
        .map(|frame| run_trial(cfg, detector, snr_db, frame))
        .collect()
}

/// Monte Carlo BER sweep over every configured (detector, SNR) cell.
/// Writes the CSV and plot script when the config names output paths.
pub fn run_sweep(cfg: &SimConfig) -> Result<BerTable> {
    cfg.validate()?;
    let mut table = BerTable::default();
    for &detector in &cfg.detectors {
        for &snr_db in &cfg.snr_db_list {
            let trials = run_cell(cfg, detector, snr_db)?;
            table.rows.push(aggregate_rows(cfg, detector, snr_db, &trials));
        }
    }
    if let Some(path) = &cfg.outputs.csv {
        table.write_csv(path)?;
        if let Some(script) = &cfg.outputs.plot_script {
            write_sweep_plot_script(script, path)?;
        }
    }
    Ok(table)
}

/// Sweep over several path counts, widening the delay spread as needed;
/// rows carry their own P column.
pub fn run_p_sweep(cfg: &SimConfig, p_list: &[usize]) -> Result<BerTable> {
    let mut table = BerTable::default();
    for &p in p_list {
        let sub = cfg.with_paths(p);
        // Output writing is handled once below, not per path count.
        let sub = SimConfig {
            outputs: OutputPaths::default(),
            ..sub
        };
        table.rows.extend(run_sweep(&sub)?.rows);
    }
    if let Some(path) = &cfg.outputs.csv {
        table.write_csv(path)?;
        if let Some(script) = &cfg.outputs.plot_script {
            write_sweep_plot_script(script, path)?;
        }
    }
    Ok(table)
}

/// One row of a per-iteration BER trace.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRow {
    pub detector: DetectorKind,
    pub p: usize,
    pub iteration: usize,
    pub bit_errors: u64,
    pub bits_total: u64,
    pub ber: f64,
    pub ci_halfwidth: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTable {
    pub rows: Vec<IterationRow>,
}

pub const ITERATION_CSV_HEADER: &str = "detector,P,iteration,ber,ci_halfwidth";

impl IterationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(ITERATION_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.detector, r.p, r.iteration, r.ber, r.ci_halfwidth
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &str) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn row(&self, detector: DetectorKind, iteration: usize) -> Option<&IterationRow> {
        self.rows
            .iter()
            .find(|r| r.detector == detector && r.iteration == iteration)
    }
}

/// BER after each sweep, averaged over frames, at a single SNR point.
/// Frames that stop early keep their final decisions for the remaining
/// iterations, matching what a fixed-budget run would report.
pub fn iteration_trace(cfg: &SimConfig) -> Result<IterationTable> {
    cfg.validate()?;
    if cfg.snr_db_list.len() != 1 {
        return Err(Error::InvalidSimConfig(format!(
            "iteration traces need exactly one SNR point, got {}",
            cfg.snr_db_list.len()
        )));
    }
    let snr_db = cfg.snr_db_list[0];
    let mut table = IterationTable::default();
    for &detector in &cfg.detectors {
        let max_iters = match detector {
            DetectorKind::Vb => cfg.vb.max_sweeps,
            DetectorKind::Mp => cfg.mp.max_iterations,
            DetectorKind::Map => {
                return Err(Error::InvalidSimConfig(
                    "iteration traces are defined for vb and mp only".into(),
                ))
            }
        };
        let mut sub = cfg.clone();
        sub.vb.record_sweep_decisions = true;
        sub.mp.record_sweep_decisions = true;
        let trials = run_cell(&sub, detector, snr_db)?;
        let bits_total: u64 = trials.iter().map(|t| t.bits_total).sum();
        for iteration in 1..=max_iters {
            let bit_errors: u64 = trials
                .iter()
                .map(|t| {
                    let idx = (iteration - 1).min(t.per_iteration_errors.len() - 1);
                    t.per_iteration_errors[idx]
                })
                .sum();
            table.rows.push(IterationRow {
                detector,
                p: cfg.channel.num_paths,
                iteration,
                bit_errors,
                bits_total,
                ber: bit_errors as f64 / bits_total as f64,
                ci_halfwidth: ci_halfwidth(bit_errors, bits_total),
            });
        }
    }
    if let Some(path) = &cfg.outputs.trace {
        table.write_csv(path)?;
        if let Some(script) = &cfg.outputs.plot_script {
            write_trace_plot_script(script, path)?;
        }
    }
    Ok(table)
}

/// One timing point of a complexity benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub p: usize,
    pub median_ms_per_sweep: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingTable {
    pub detector: DetectorKind,
    pub n: usize,
    pub m: usize,
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of ln(time) against ln(P).
    pub slope: f64,
}

pub const SCALING_CSV_HEADER: &str = "detector,P,N,M,median_ms_per_sweep";

impl ScalingTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SCALING_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.detector, r.p, self.n, self.m, r.median_ms_per_sweep
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &str) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Least-squares slope of `ln(y)` against `ln(x)`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median per-sweep wall time at each path count, and the log-log slope.
///
/// Per-frame precomputation (channel statistics, graph construction) is kept
/// out of the timed region: variational sweeps are timed directly; message
/// passing is timed by differencing a long and a short run so its setup cost
/// cancels.
pub fn bench_scaling(
    dims: FrameDims,
    p_list: &[usize],
    detector: DetectorKind,
    repetitions: usize,
) -> Result<ScalingTable> {
    if p_list.len() < 3 {
        return Err(Error::InvalidSimConfig(
            "bench needs at least 3 path counts".into(),
        ));
    }
    if repetitions < 1 {
        return Err(Error::InvalidSimConfig("repetitions must be >= 1".into()));
    }
    if detector == DetectorKind::Map {
        return Err(Error::InvalidSimConfig(
            "bench measures per-sweep cost; exhaustive search has no sweeps".into(),
        ));
    }
    let cons = Constellation::new(ModulationScheme::Qpsk);
    let snr_db = 15.0;
    let sweeps = 8usize;
    let mut rows = Vec::with_capacity(p_list.len());

    for &p in p_list {
        let ch_cfg = ChannelConfig {
            num_paths: p,
            k_nu_max: 4.min((dims.n_doppler - 1) / 2),
            l_tau_max: 10.max(p.saturating_sub(1)).min(dims.m_delay - 1),
            pdp_decay: 0.1,
        };
        ch_cfg.validate(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0xBE7C ^ p as u64);
        let nm = dims.num_symbols();
        let entries: Vec<_> = (0..nm)
            .map(|_| cons.points()[rng.gen_range(0..cons.len())])
            .collect();
        let d = DdGrid::from_entries(entries, dims)?;
        let paths = sample_paths(&ch_cfg, dims, &mut rng)?;
        let ch = build_effective_matrix(&paths, SimConfig::sigma2_for(snr_db), dims);
        let y = apply_channel(&d, &ch, &mut rng)?;

        let mut times_ms = Vec::with_capacity(repetitions);
        match detector {
            DetectorKind::Vb => {
                let stats = precompute_stats(&y, &ch, Prior::Uniform)?;
                for _ in 0..repetitions {
                    let mut state = VbState::from_prior(&Prior::Uniform, nm, &cons)?;
                    let t0 = Instant::now();
                    for _ in 0..sweeps {
                        vb_sweep(&stats, &mut state, &cons, Schedule::Sequential);
                    }
                    times_ms.push(t0.elapsed().as_secs_f64() * 1e3 / sweeps as f64);
                }
            }
            DetectorKind::Mp => {
                let base = MpConfig {
                    tolerance: 0.0,
                    ..MpConfig::default()
                };
                let lo_iters = 2;
                let hi_iters = lo_iters + sweeps;
                for _ in 0..repetitions {
                    let lo_cfg = MpConfig {
                        max_iterations: lo_iters,
                        ..base.clone()
                    };
                    let hi_cfg = MpConfig {
                        max_iterations: hi_iters,
                        ..base.clone()
                    };
                    let t0 = Instant::now();
                    mp_detect(&y, &ch, &cons, &lo_cfg)?;
                    let t_lo = t0.elapsed().as_secs_f64();
                    let t1 = Instant::now();
                    mp_detect(&y, &ch, &cons, &hi_cfg)?;
                    let t_hi = t1.elapsed().as_secs_f64();
                    times_ms.push((t_hi - t_lo).max(0.0) * 1e3 / sweeps as f64);
                }
            }
            DetectorKind::Map => unreachable!(),
        }
        rows.push(ScalingRow {
            p,
            median_ms_per_sweep: median(times_ms),
        });
    }

    let xs: Vec<f64> = rows.iter().map(|r| r.p as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.median_ms_per_sweep).collect();
    let slope = log_log_slope(&xs, &ys);
    Ok(ScalingTable {
        detector,
        n: dims.n_doppler,
        m: dims.m_delay,
        rows,
        slope,
    })
}

/// Three-way small-instance comparison: per-symbol agreement of the
/// iterative detectors with the exhaustive optimum, over shared frames.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub frames: u64,
    pub symbols_total: u64,
    pub vb_map_match: f64,
    pub vb_map_ci: f64,
    pub mp_map_match: f64,
    pub mp_map_ci: f64,
    pub vb_ber: f64,
    pub mp_ber: f64,
    pub map_ber: f64,
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "oracle comparison over {} frames ({} symbols)",
            self.frames, self.symbols_total
        )?;
        writeln!(
            f,
            "  vb  vs map symbol agreement: {:.6} +- {:.6}",
            self.vb_map_match, self.vb_map_ci
        )?;
        writeln!(
            f,
            "  mp  vs map symbol agreement: {:.6} +- {:.6}",
            self.mp_map_match, self.mp_map_ci
        )?;
        writeln!(f, "  vb  BER: {:.6}", self.vb_ber)?;
        writeln!(f, "  mp  BER: {:.6}", self.mp_ber)?;
        write!(f, "  map BER: {:.6}", self.map_ber)
    }
}

/// Run all three detectors on the same frames (same bits, channel, noise)
/// and report agreement with the exhaustive optimum. SNR is the config's
/// single point; dims must be small enough for the hypothesis budget.
pub fn oracle_compare(cfg: &SimConfig) -> Result<OracleReport> {
    cfg.validate()?;
    if cfg.snr_db_list.len() != 1 {
        return Err(Error::InvalidSimConfig(format!(
            "oracle comparison needs exactly one SNR point, got {}",
            cfg.snr_db_list.len()
        )));
    }
    let snr_db = cfg.snr_db_list[0];
    let cons = Constellation::new(cfg.modulation);
    let dims = cfg.dims;
    let nm = dims.num_symbols();
    let bps = cons.bits_per_symbol();
    let ham = hamming_table(&cons);
    let chi = cons.len();

    struct FrameCounts {
        vb_agree: u64,
        mp_agree: u64,
        vb_bits: u64,
        mp_bits: u64,
        map_bits: u64,
    }

    let counts: Vec<FrameCounts> = (0..cfg.num_frames)
        .into_par_iter()
        .map(|frame| -> Result<FrameCounts> {
            let with_frame = |e: Error| Error::Frame {
                frame,
                source: Box::new(e),
            };
            let seed = cfg.base_seed ^ frame;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bits: Vec<u8> = (0..nm * bps).map(|_| rng.gen_range(0..=1u8)).collect();
            let d = map_bits(&bits, &cons, dims).map_err(with_frame)?;
            let paths = sample_paths(&cfg.channel, dims, &mut rng).map_err(with_frame)?;
            let ch = build_effective_matrix(&paths, SimConfig::sigma2_for(snr_db), dims);
            let y = apply_channel(&d, &ch, &mut rng).map_err(with_frame)?;

            let vb = vb_detect(&y, &ch, &cons, &cfg.vb).map_err(with_frame)?;
            let mp = mp_detect(&y, &ch, &cons, &cfg.mp).map_err(with_frame)?;
            let map_grid =
                map_exhaustive(&y, &ch, &cons, &Prior::Uniform, cfg.map_budget as u128)
                    .map_err(with_frame)?;
            let map_idx: Vec<u8> = map_grid
                .entries()
                .iter()
                .map(|&e| cons.index_of_point(e).expect("alphabet point") as u8)
                .collect();
            let truth: Vec<u8> = (0..nm)
                .map(|s| cons.index_of_bits(&bits[s * bps..(s + 1) * bps]) as u8)
                .collect();

            let agree = |a: &[u8], b: &[u8]| a.iter().zip(b).filter(|(x, y)| x == y).count() as u64;
            let bit_err = |a: &[u8]| -> u64 {
                a.iter()
                    .zip(&truth)
                    .map(|(&x, &t)| ham[x as usize * chi + t as usize] as u64)
                    .sum()
            };
            Ok(FrameCounts {
                vb_agree: agree(&vb.decision_indices, &map_idx),
                mp_agree: agree(&mp.decision_indices, &map_idx),
                vb_bits: bit_err(&vb.decision_indices),
                mp_bits: bit_err(&mp.decision_indices),
                map_bits: bit_err(&map_idx),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let symbols_total = cfg.num_frames * nm as u64;
    let bits_total = (symbols_total * bps as u64) as f64;
    let vb_agree: u64 = counts.iter().map(|c| c.vb_agree).sum();
    let mp_agree: u64 = counts.iter().map(|c| c.mp_agree).sum();
    let frac = |a: u64| a as f64 / symbols_total as f64;
    let ci = |a: u64| {
        let p = frac(a);
        1.96 * (p * (1.0 - p) / symbols_total as f64).sqrt()
    };
    Ok(OracleReport {
        frames: cfg.num_frames,
        symbols_total,
        vb_map_match: frac(vb_agree),
        vb_map_ci: ci(vb_agree),
        mp_map_match: frac(mp_agree),
        mp_map_ci: ci(mp_agree),
        vb_ber: counts.iter().map(|c| c.vb_bits).sum::<u64>() as f64 / bits_total,
        mp_ber: counts.iter().map(|c| c.mp_bits).sum::<u64>() as f64 / bits_total,
        map_ber: counts.iter().map(|c| c.map_bits).sum::<u64>() as f64 / bits_total,
    })
}

/// Drop timing columns (`mean_ms_per_frame`, `median_ms_per_sweep`) from a
/// CSV string; what remains is the deterministic part.
pub fn strip_timing_columns(csv: &str) -> String {
    let mut lines = csv.lines();
    let header = match lines.next() {
        Some(h) => h,
        None => return String::new(),
    };
    let names: Vec<&str> = header.split(',').collect();
    let keep: Vec<usize> = names
        .iter()
        .enumerate()
        .filter(|(_, n)| **n != "mean_ms_per_frame" && **n != "median_ms_per_sweep")
        .map(|(i, _)| i)
        .collect();
    let filter_line = |line: &str| -> String {
        let fields: Vec<&str> = line.split(',').collect();
        keep.iter()
            .map(|&i| fields.get(i).copied().unwrap_or(""))
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut out = filter_line(header);
    for line in lines {
        out.push('\n');
        out.push_str(&filter_line(line));
    }
    out.push('\n');
    out
}

fn write_plot_script(path: &str, body: String) -> Result<()> {
    std::fs::write(path, body)?;
    Ok(())
}

/// Emit a matplotlib script that plots BER against SNR from a sweep CSV.
pub fn write_sweep_plot_script(path: &str, csv_path: &str) -> Result<()> {
    let body = format!(
        r#"#!/usr/bin/env python3
"""Plot BER against Es/sigma^2 from a sweep CSV."""
import csv
from collections import defaultdict

import matplotlib.pyplot as plt

rows = list(csv.DictReader(open({csv:?})))
series = defaultdict(list)
for r in rows:
    key = (r["detector"], int(r["P"]))
    series[key].append((float(r["snr_db"]), float(r["ber"]), float(r["ci_halfwidth"])))

plt.figure(figsize=(6, 4.5))
for (det, p), pts in sorted(series.items()):
    pts.sort()
    xs = [x for x, _, _ in pts]
    ys = [y for _, y, _ in pts]
    es = [e for _, _, e in pts]
    plt.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=f"{{det}}, P={{p}}")
plt.yscale("log")
plt.xlabel("Es/sigma^2 (dB)")
plt.ylabel("BER")
plt.grid(True, which="both", alpha=0.4)
plt.legend()
plt.tight_layout()
plt.savefig({png:?}, dpi=150)
print("wrote", {png:?})
"#,
        csv = csv_path,
        png = format!("{csv_path}.png"),
    );
    write_plot_script(path, body)
}

/// Emit a matplotlib script that plots BER against iteration from a trace CSV.
pub fn write_trace_plot_script(path: &str, csv_path: &str) -> Result<()> {
    let body = format!(
        r#"#!/usr/bin/env python3
"""Plot BER against iteration count from a trace CSV."""
import csv
from collections import defaultdict

import matplotlib.pyplot as plt

rows = list(csv.DictReader(open({csv:?})))
series = defaultdict(list)
for r in rows:
    key = (r["detector"], int(r["P"]))
    series[key].append((int(r["iteration"]), float(r["ber"]), float(r["ci_halfwidth"])))

plt.figure(figsize=(6, 4.5))
for (det, p), pts in sorted(series.items()):
    pts.sort()
    xs = [x for x, _, _ in pts]
    ys = [y for _, y, _ in pts]
    es = [e for _, _, e in pts]
    plt.errorbar(xs, ys, yerr=es, marker="s", capsize=3, label=f"{{det}}, P={{p}}")
plt.yscale("log")
plt.xlabel("iteration")
plt.ylabel("BER")
plt.grid(True, which="both", alpha=0.4)
plt.legend()
plt.tight_layout()
plt.savefig({png:?}, dpi=150)
print("wrote", {png:?})
"#,
        csv = csv_path,
        png = format!("{csv_path}.png"),
    );
    write_plot_script(path, body)
}

/// Emit a matplotlib script that plots per-sweep time against P on log-log
/// axes from a scaling CSV.
pub fn write_scaling_plot_script(path: &str, csv_path: &str) -> Result<()> {
    let body = format!(
        r#"#!/usr/bin/env python3
"""Plot per-sweep time against path count from a scaling CSV."""
import csv
from collections import defaultdict

import matplotlib.pyplot as plt

rows = list(csv.DictReader(open({csv:?})))
series = defaultdict(list)
for r in rows:
    series[r["detector"]].append((int(r["P"]), float(r["median_ms_per_sweep"])))

plt.figure(figsize=(6, 4.5))
for det, pts in sorted(series.items()):
    pts.sort()
    xs = [x for x, _ in pts]
    ys = [y for _, y in pts]
    plt.loglog(xs, ys, marker="o", label=det)
plt.xlabel("number of paths P")
plt.ylabel("median ms per sweep")
plt.grid(True, which="both", alpha=0.4)
plt.legend()
plt.tight_layout()
plt.savefig({png:?}, dpi=150)
print("wrote", {png:?})
"#,
        csv = csv_path,
        png = format!("{csv_path}.png"),
    );
    write_plot_script(path, body)
}
