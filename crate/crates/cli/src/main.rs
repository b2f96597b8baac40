//! Command-line front end: load a scenario file, run one of the three
//! commands, and write artifacts plus a manifest into an output directory.
//!
//! Exit codes: 0 success; 2 configuration error (unreadable or invalid
//! scenario, nothing written); 3 runtime failure while producing outputs;
//! 4 the simulated trajectory reached a state with infeasible filter
//! constraints (the manifest records the state and a certificate).

use clap::{Args, Parser, Subcommand};
use lticbf_cli::commands::{self, CmdError, RasterOverrides};
use lticbf_cli::schema;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "lticbf",
    version,
    about = "Stacked control-barrier constraints for LTI systems: analysis, filtering, simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed for sampled analyses.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Report constraint structure and write feasibility-domain halfspaces.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the filtered closed loop and log the trajectory.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Also solve the reference QP at every step and record the gap.
        #[arg(long)]
        compare_qp: bool,
        /// Override the initial physical state, e.g. "0.0,5.0".
        #[arg(long, value_name = "v1,v2,...", allow_hyphen_values = true)]
        x0: Option<String>,
    },
    /// Rasterize the constraint, safe, and feasibility sets on a 2-D slice.
    Raster {
        #[command(flatten)]
        common: CommonArgs,
        /// Raster window as x_min,x_max,y_min,y_max.
        #[arg(long, value_name = "a,b,c,d", allow_hyphen_values = true)]
        window: Option<String>,
        /// Grid resolution per axis.
        #[arg(long)]
        res: Option<usize>,
        /// Pin physical coordinates ("2=0.0,3=0.1"); the two left free
        /// become the raster axes.
        #[arg(long, value_name = "k=v,...", allow_hyphen_values = true)]
        slice: Option<String>,
    },
}

fn parse_floats(s: &str, what: &str) -> Result<Vec<f64>, CmdError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| CmdError::config(format!("{what}: cannot parse {p:?} as a number")))
        })
        .collect()
}

fn parse_window(s: &str) -> Result<(f64, f64, f64, f64), CmdError> {
    let v = parse_floats(s, "--window")?;
    if v.len() != 4 {
        return Err(CmdError::config("--window needs four numbers: x_min,x_max,y_min,y_max"));
    }
    Ok((v[0], v[1], v[2], v[3]))
}

fn parse_slice(s: &str) -> Result<Vec<(usize, f64)>, CmdError> {
    s.split(',')
        .map(|pair| {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| CmdError::config(format!("--slice: expected k=v, got {pair:?}")))?;
            let k = k
                .trim()
                .parse::<usize>()
                .map_err(|_| CmdError::config(format!("--slice: bad coordinate {k:?}")))?;
            let v = v
                .trim()
                .parse::<f64>()
                .map_err(|_| CmdError::config(format!("--slice: bad value {v:?}")))?;
            Ok((k, v))
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), CmdError> {
    let common = match &cli.command {
        Command::Analyze { common } => common,
        Command::Simulate { common, .. } => common,
        Command::Raster { common, .. } => common,
    };
    let file = schema::load(&common.scenario).map_err(|e| CmdError::config(e.to_string()))?;
    let resolved = file.resolve().map_err(|e| CmdError::config(e.to_string()))?;

    match &cli.command {
        Command::Analyze { common } => {
            commands::cmd_analyze(&common.scenario, &file, resolved, &common.out, common.seed)
        }
        Command::Simulate {
            common,
            compare_qp,
            x0,
        } => {
            let x0 = x0
                .as_deref()
                .map(|s| parse_floats(s, "--x0"))
                .transpose()?;
            commands::cmd_simulate(
                &common.scenario,
                &file,
                resolved,
                &common.out,
                common.seed,
                *compare_qp,
                x0,
            )
        }
        Command::Raster {
            common,
            window,
            res,
            slice,
        } => {
            let overrides = RasterOverrides {
                window: window.as_deref().map(parse_window).transpose()?,
                res: *res,
                slice: slice.as_deref().map(parse_slice).transpose()?,
            };
            commands::cmd_raster(
                &common.scenario,
                &file,
                resolved,
                &common.out,
                common.seed,
                &overrides,
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
