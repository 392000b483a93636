//! `hallsand`: network diagnostics, avalanche simulation, phase sweeps and
//! tail fits from one command line.
//!
//! Exit codes: 0 on success, 1 for bad input or arguments, 2 when the
//! simulation engine itself fails.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hallsand::dynamics::CountMode;
use hallsand::operators::OperatorKind;
use hallsand::tail::TailEstimator;

#[derive(Debug, Parser)]
#[command(
    name = "hallsand",
    version,
    about = "Hall-sandpile model of production-network instability"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, short, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory [default: out, or output_dir from the config].
    #[arg(long, short, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for Monte Carlo runs [default: all cores].
    #[arg(long, global = true, env = "HALLSAND_THREADS")]
    pub threads: Option<usize>,
    /// Also write a JSON copy of each table.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate a flow file, writing canonical flows.csv and row_use.csv.
    Ingest(IngestArgs),
    /// Write a seeded synthetic network as flows.csv and row_use.csv.
    Synth(SynthArgs),
    /// Spectral radii, leakage and exposure summary per year (panel.csv).
    NetworkPanel(SubstrateArgs),
    /// Per-node exposure table and top-ranked nodes (exposure.csv, top_nodes.csv).
    Exposure(ExposureArgs),
    /// Run named scenarios (scenarios.csv, avalanches_<name>.csv).
    Simulate(SimulateArgs),
    /// Sweep mean field against redundancy stress (phase_grid.csv, convergence.csv).
    PhaseGrid(PhaseGridArgs),
    /// Fit avalanche-size tails (tail_fits.csv, ccdf_<label>.csv).
    TailFit(TailFitArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Long-format flow file; a row_use.csv beside it supplies gross row use.
    pub flows: Option<PathBuf>,
    /// Keep only this year [default: every year in the file].
    #[arg(long)]
    pub year: Option<i32>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of nodes.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Expected edge density.
    #[arg(long, default_value_t = config::DEFAULT_SYNTH_DENSITY)]
    pub density: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SubstrateArgs {
    /// Long-format flow file.
    #[arg(long, value_name = "FILE", conflicts_with = "synth_n")]
    pub flows: Option<PathBuf>,
    /// Year to read from the flow file [default: the only year present].
    #[arg(long)]
    pub year: Option<i32>,
    /// Use a synthetic network with this many nodes instead of a flow file.
    #[arg(long)]
    pub synth_n: Option<usize>,
    /// Synthetic edge density [default: 0.1].
    #[arg(long, requires = "synth_n")]
    pub synth_density: Option<f64>,
    /// Synthetic network seed [default: 0].
    #[arg(long, requires = "synth_n")]
    pub synth_seed: Option<u64>,
    /// Propagation operator [default: leakage-adjusted].
    #[arg(long, value_enum)]
    pub operator: Option<OperatorArg>,
}

#[derive(Debug, Args)]
pub struct ExposureArgs {
    #[command(flatten)]
    pub substrate: SubstrateArgs,
    /// Field intensity for the stress columns [default: 1.0].
    #[arg(long)]
    pub field: Option<f64>,
    /// Rows in top_nodes.csv [default: 15].
    #[arg(long)]
    pub top: Option<usize>,
}

/// Dynamics parameters. Unset flags keep the config value, then the default.
#[derive(Debug, Clone, Default, Args)]
pub struct ParamArgs {
    /// Stress dissipation rate [default: 0.20].
    #[arg(long)]
    pub delta: Option<f64>,
    /// Idiosyncratic shock loading [default: 0.30].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Network propagation loading [default: 0.40].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Hall stress loading [default: 0.50].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Uniform toppling threshold [default: 1.0].
    #[arg(long)]
    pub theta: Option<f64>,
    /// Denominator regulariser [default: 1e-6].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Scale of the half-normal shocks [default: 0.20].
    #[arg(long)]
    pub sigma_x: Option<f64>,
    /// Share of a toppled node's excess passed downstream [default: 0.5].
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Stress a toppled node resets to [default: 0].
    #[arg(long)]
    pub reset_level: Option<f64>,
    /// Relaxation round budget per period [default: 10 × node count].
    #[arg(long)]
    pub max_relax_rounds: Option<usize>,
    /// What an avalanche size counts [default: events].
    #[arg(long, value_enum)]
    pub count: Option<CountArg>,
}

/// Protocol overrides shared by simulate and phase-grid.
#[derive(Debug, Clone, Default, Args)]
pub struct ProtocolArgs {
    /// Replications per scenario or cell [default: 100 for scenarios, 50 per grid cell].
    #[arg(long, short = 'r')]
    pub replications: Option<usize>,
    /// Burn-in periods discarded per replication [default: 50].
    #[arg(long)]
    pub t_burn: Option<usize>,
    /// Recorded periods per replication [default: 150].
    #[arg(long)]
    pub t_stat: Option<usize>,
    /// Field noise as a fraction of the mean field [default: 0.10].
    #[arg(long)]
    pub noise_ratio: Option<f64>,
    /// Master seed for every replication [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub substrate: SubstrateArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    /// Preset to run (stable, latent, critical, avalanche); repeatable
    /// [default: the config's scenarios, else all four presets].
    #[arg(long = "preset", value_name = "NAME")]
    pub presets: Vec<String>,
    /// Mean field of a single custom scenario.
    #[arg(long, requires = "sigma_d", conflicts_with = "presets")]
    pub b_bar: Option<f64>,
    /// Redundancy stress of a single custom scenario.
    #[arg(long, requires = "b_bar")]
    pub sigma_d: Option<f64>,
    /// Name of the custom scenario.
    #[arg(long, default_value = "custom", requires = "b_bar")]
    pub name: String,
    /// Skip the per-period avalanche files.
    #[arg(long)]
    pub no_series: bool,
}

#[derive(Debug, Args)]
pub struct PhaseGridArgs {
    #[command(flatten)]
    pub substrate: SubstrateArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    /// Comma-separated mean-field values [default: 10 points over 0.25..=2.0].
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub b_values: Option<Vec<f64>>,
    /// Comma-separated redundancy-stress values [default: 0.5..=2.5 in steps of 0.25].
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub sigma_d_values: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct TailFitArgs {
    /// Avalanche series with an S column; zero sizes are dropped.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Label per input, in order [default: file stem without "avalanches_"].
    #[arg(long = "label")]
    pub labels: Vec<String>,
    /// Estimator [default: discrete-mle].
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorArg>,
    /// Fewest observations at or above a candidate cutoff [default: 50].
    #[arg(long)]
    pub min_tail: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OperatorArg {
    RowShare,
    LeakageAdjusted,
    MaxRow,
}

impl From<OperatorArg> for OperatorKind {
    fn from(a: OperatorArg) -> Self {
        match a {
            OperatorArg::RowShare => OperatorKind::RowShare,
            OperatorArg::LeakageAdjusted => OperatorKind::LeakageAdjusted,
            OperatorArg::MaxRow => OperatorKind::MaxRow,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CountArg {
    /// Every toppling.
    Events,
    /// Distinct nodes that toppled.
    UniqueNodes,
}

impl From<CountArg> for CountMode {
    fn from(a: CountArg) -> Self {
        match a {
            CountArg::Events => CountMode::Events,
            CountArg::UniqueNodes => CountMode::UniqueNodes,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EstimatorArg {
    DiscreteMle,
    Hill,
}

impl From<EstimatorArg> for TailEstimator {
    fn from(a: EstimatorArg) -> Self {
        match a {
            EstimatorArg::DiscreteMle => TailEstimator::DiscreteMle,
            EstimatorArg::Hill => TailEstimator::Hill,
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<hallsand::Error>() {
        Some(e) if e.is_runtime() => 2,
        _ => 1,
    }
}

/// The error chain joined by ": ", dropping causes the previous message
/// already spells out.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !prev.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
        prev = msg;
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn runtime_errors_map_to_two() {
        let runtime = anyhow::Error::new(hallsand::Error::RelaxBudgetExceeded {
            period: 3,
            max_rounds: 10,
        });
        assert_eq!(exit_code(&runtime), 2);
        let wrapped = runtime.context("scenario avalanche");
        assert_eq!(exit_code(&wrapped), 2);
        let input = anyhow::Error::new(hallsand::Error::InvalidArgument("x".into()));
        assert_eq!(exit_code(&input), 1);
        assert_eq!(exit_code(&anyhow::anyhow!("no substrate")), 1);
    }

    #[test]
    fn repeated_causes_are_printed_once() {
        let inner = hallsand::Error::RelaxBudgetExceeded {
            period: 0,
            max_rounds: 1,
        };
        let e = anyhow::Error::new(hallsand::Error::Replication {
            cell: 0,
            replication: 2,
            source: Box::new(inner),
        })
        .context("simulation failed");
        let text = describe(&e);
        assert_eq!(text.matches("relaxation exceeded").count(), 1, "{text}");
        assert!(text.starts_with("simulation failed: cell 0, replication 2: "));
    }

    #[test]
    fn grid_values_split_on_commas() {
        let cli = Cli::try_parse_from([
            "hallsand",
            "phase-grid",
            "--synth-n",
            "20",
            "--b-values",
            "0.5,1.5",
        ])
        .unwrap();
        let Command::PhaseGrid(g) = cli.command else {
            panic!()
        };
        assert_eq!(g.b_values, Some(vec![0.5, 1.5]));
    }

    #[test]
    fn flows_and_synth_conflict() {
        assert!(Cli::try_parse_from([
            "hallsand",
            "exposure",
            "--flows",
            "f.csv",
            "--synth-n",
            "5"
        ])
        .is_err());
    }
}
