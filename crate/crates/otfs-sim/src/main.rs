//! Thin command-line front end over the library. All logic lives in
//! `otfs_sim`; this binary only parses arguments, loads/overrides a config,
//! runs the requested routine, and prints results.

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use otfs_sim::sim::{
    bench_scaling, iteration_trace, oracle_compare, run_p_sweep, run_sweep,
    write_scaling_plot_script, DetectorKind, SimConfig,
};
use otfs_sim::{ChannelConfig, FrameDims};

#[derive(Parser)]
#[command(name = "otfs-sim", version, about = "OTFS link simulation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file; missing fields take profile defaults.
    #[arg(long)]
    config: Option<String>,
    /// Baseline profile when no config file is given.
    #[arg(long, default_value = "desk", value_parser = ["desk", "paper"])]
    profile: String,
    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the frame count.
    #[arg(long)]
    frames: Option<u64>,
    /// Override the CSV output path.
    #[arg(long)]
    out: Option<String>,
    /// Also emit a matplotlib script next to the CSV.
    #[arg(long)]
    plot: Option<String>,
    /// Override the detector list (e.g. vb,mp).
    #[arg(long, value_delimiter = ',')]
    detectors: Option<Vec<DetectorKind>>,
    /// Override the SNR list in dB (e.g. 5,10,15).
    #[arg(long, value_delimiter = ',')]
    snr: Option<Vec<f64>>,
}

impl ConfigArgs {
    fn build(&self) -> Result<SimConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| format!("cannot read {path}: {e}"))?;
                serde_json::from_str(&text).map_err(|e| format!("bad config {path}: {e}"))?
            }
            None => match self.profile.as_str() {
                "paper" => SimConfig::paper(),
                _ => SimConfig::desk(),
            },
        };
        if let Some(seed) = self.seed {
            cfg.base_seed = seed;
        }
        if let Some(frames) = self.frames {
            cfg.num_frames = frames;
        }
        if let Some(out) = &self.out {
            cfg.outputs.csv = Some(out.clone());
            cfg.outputs.trace = Some(out.clone());
        }
        if let Some(plot) = &self.plot {
            cfg.outputs.plot_script = Some(plot.clone());
        }
        if let Some(detectors) = &self.detectors {
            cfg.detectors = detectors.clone();
        }
        if let Some(snr) = &self.snr {
            cfg.snr_db_list = snr.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// BER sweep over the configured detectors and SNR points.
    Simulate(ConfigArgs),
    /// BER sweep repeated over several path counts.
    Sweep {
        #[command(flatten)]
        common: ConfigArgs,
        /// Path counts to sweep (delay spread widens when needed).
        #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
        paths: Vec<usize>,
    },
    /// Per-iteration BER trace at a single SNR point.
    Trace(ConfigArgs),
    /// Median per-sweep time at each path count, with the log-log slope.
    Bench {
        /// Grid size as NxM.
        #[arg(long, default_value = "32x64")]
        dims: String,
        /// Path counts to time (at least 3).
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
        paths: Vec<usize>,
        /// Detector to time (vb or mp).
        #[arg(long, default_value = "vb")]
        detector: DetectorKind,
        /// Timing repetitions per path count.
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        plot: Option<String>,
    },
    /// Compare vb and mp against the exhaustive optimum on shared frames.
    Oracle {
        #[command(flatten)]
        common: ConfigArgs,
    },
}

fn parse_dims(text: &str) -> Result<FrameDims, String> {
    let (n, m) = text
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("dims must look like 32x64, got `{text}`"))?;
    let n: usize = n.trim().parse().map_err(|e| format!("bad N `{n}`: {e}"))?;
    let m: usize = m.trim().parse().map_err(|e| format!("bad M `{m}`: {e}"))?;
    FrameDims::new(n, m).map_err(|e| e.to_string())
}

fn run() -> Result<(), String> {
    match Cli::parse().command {
        Command::Simulate(common) => {
            let cfg = common.build()?;
            let table = run_sweep(&cfg).map_err(|e| e.to_string())?;
            print!("{}", table.to_csv());
            if let Some(path) = &cfg.outputs.csv {
                eprintln!("wrote {path}");
            }
        }
        Command::Sweep { common, paths } => {
            let cfg = common.build()?;
            let table = run_p_sweep(&cfg, &paths).map_err(|e| e.to_string())?;
            print!("{}", table.to_csv());
            if let Some(path) = &cfg.outputs.csv {
                eprintln!("wrote {path}");
            }
        }
        Command::Trace(common) => {
            let cfg = common.build()?;
            let table = iteration_trace(&cfg).map_err(|e| e.to_string())?;
            print!("{}", table.to_csv());
            if let Some(path) = &cfg.outputs.trace {
                eprintln!("wrote {path}");
            }
        }
        Command::Bench {
            dims,
            paths,
            detector,
            reps,
            out,
            plot,
        } => {
            let dims = parse_dims(&dims)?;
            let table = bench_scaling(dims, &paths, detector, reps).map_err(|e| e.to_string())?;
            print!("{}", table.to_csv());
            println!("# log-log slope: {:.4}", table.slope);
            if let Some(path) = &out {
                table.write_csv(path).map_err(|e| e.to_string())?;
                eprintln!("wrote {path}");
                if let Some(script) = &plot {
                    write_scaling_plot_script(script, path).map_err(|e| e.to_string())?;
                    eprintln!("wrote {script}");
                }
            }
        }
        Command::Oracle { common } => {
            // Default to a grid small enough for exhaustive search unless a
            // config or explicit overrides say otherwise.
            let mut cfg = common.build()?;
            if common.config.is_none() {
                cfg.dims = FrameDims::new(2, 4).map_err(|e| e.to_string())?;
                cfg.channel = ChannelConfig {
                    num_paths: 2,
                    k_nu_max: 0,
                    l_tau_max: 3,
                    pdp_decay: 0.1,
                };
                cfg.detectors = vec![DetectorKind::Vb, DetectorKind::Mp, DetectorKind::Map];
                if common.snr.is_none() {
                    cfg.snr_db_list = vec![20.0];
                }
                if common.frames.is_none() {
                    cfg.num_frames = 200;
                }
            }
            let report = oracle_compare(&cfg).map_err(|e| e.to_string())?;
            println!("{report}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
