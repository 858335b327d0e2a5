//! `kseries`: command-line experiments on delay systems and their chain
//! approximations.

mod commands;
mod options;
mod output;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::options::{Invocation, Keyed};

#[derive(Parser)]
#[command(name = "kseries", version, about = "Gamma-kernel chain approximations of delay systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one system and write the trajectory as CSV.
    Simulate(SimulateArgs),
    /// Tabulate chain Hopf points against the sharp-delay value.
    Hopf(HopfArgs),
    /// Scan the delay for Lyapunov exponent and period multiplicity.
    Scan(ScanArgs),
    /// Cross-correlation of initially close trajectories, with a verdict.
    Crosscorr(CrosscorrArgs),
    /// Stroboscopic projection (x0(t), xN(t - T)) as a point cloud.
    Project(ProjectArgs),
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    /// Key-value config file (or a previous output file); flags take precedence.
    #[arg(long, value_name = "PATH")]
    pub config: Option<std::path::PathBuf>,
    /// Print the resolved configuration and exit without running.
    #[arg(long)]
    pub print_config: bool,
    /// Worker threads for parallel ensembles and scans.
    #[arg(long, env = "KSERIES_WORKERS")]
    pub workers: Option<usize>,
    /// CSV output path; standard output when absent.
    #[arg(long, short, value_name = "PATH")]
    pub out: Option<std::path::PathBuf>,
    /// Arbitrary `key=value` setting, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// System selection keys.
#[derive(Args, Debug, Default)]
pub struct SystemArgs {
    /// mackey-glass or linear.
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    a: Option<String>,
    #[arg(long)]
    b: Option<String>,
    #[arg(long)]
    c: Option<String>,
    /// Mean delay.
    #[arg(long = "T")]
    delay: Option<String>,
    /// Comma-separated mean delays of a multi-delay system.
    #[arg(long)]
    delays: Option<String>,
    /// Comma-separated weights of a multi-delay system.
    #[arg(long)]
    weights: Option<String>,
    /// Chain order (one per delay), or "dde" for the direct solver.
    #[arg(long = "N")]
    order: Option<String>,
    /// Use the direct method-of-steps solver.
    #[arg(long, conflicts_with = "order")]
    dde: bool,
    /// Level of the constant initial history.
    #[arg(long)]
    history: Option<String>,
    /// Integration step.
    #[arg(long)]
    dt: Option<String>,
}

impl Keyed for SystemArgs {
    fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("system", self.system.clone()),
            ("alpha", self.alpha.clone()),
            ("beta", self.beta.clone()),
            ("gamma", self.gamma.clone()),
            ("a", self.a.clone()),
            ("b", self.b.clone()),
            ("c", self.c.clone()),
            ("T", self.delay.clone()),
            ("delays", self.delays.clone()),
            ("weights", self.weights.clone()),
            ("N", if self.dde { Some("dde".into()) } else { self.order.clone() }),
            ("history", self.history.clone()),
            ("dt", self.dt.clone()),
        ]
    }
}

/// Run-length keys of the analysis commands.
#[derive(Args, Debug, Default)]
pub struct RunArgs {
    /// Transient discarded before any measurement, in delays.
    #[arg(long)]
    transient_delays: Option<String>,
    /// Window for period detection, in delays.
    #[arg(long)]
    window_delays: Option<String>,
    /// Averaging time of the Lyapunov estimate.
    #[arg(long)]
    averaging_time: Option<String>,
    /// Renormalization interval of the Lyapunov estimate.
    #[arg(long)]
    renorm_interval: Option<String>,
}

impl Keyed for RunArgs {
    fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("transient_delays", self.transient_delays.clone()),
            ("window_delays", self.window_delays.clone()),
            ("averaging_time", self.averaging_time.clone()),
            ("renorm_interval", self.renorm_interval.clone()),
        ]
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    system: SystemArgs,
    /// End time.
    #[arg(long)]
    t_end: Option<String>,
    /// Leading time span that is not written.
    #[arg(long)]
    transient: Option<String>,
    /// Write every n-th step.
    #[arg(long)]
    stride: Option<String>,
}

#[derive(Args, Debug)]
struct HopfArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Linear gain on the delayed term.
    #[arg(long)]
    a: Option<String>,
    /// Linear decay rate.
    #[arg(long)]
    b: Option<String>,
    /// Comma-separated chain orders.
    #[arg(long = "N")]
    orders: Option<String>,
}

#[derive(Args, Debug)]
struct ScanArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    system: SystemArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    t_min: Option<String>,
    #[arg(long)]
    t_max: Option<String>,
    #[arg(long)]
    t_step: Option<String>,
    /// Estimate the maximal Lyapunov exponent (true/false).
    #[arg(long)]
    lyapunov: Option<String>,
    /// Count the period multiplicity (true/false).
    #[arg(long)]
    multiplicity: Option<String>,
    /// Comma-separated bifurcations to refine: hopf, pd1, pd2, chaos.
    #[arg(long)]
    refine: Option<String>,
    /// Final bracket width of the refinement.
    #[arg(long)]
    bracket_width: Option<String>,
    /// JSON output path for refined bifurcations.
    #[arg(long, value_name = "PATH")]
    json: Option<std::path::PathBuf>,
}

#[derive(Args, Debug)]
struct CrosscorrArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    system: SystemArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Initial distance of each pair.
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    pairs: Option<String>,
    /// Time each pair is followed.
    #[arg(long)]
    horizon: Option<String>,
    #[arg(long)]
    sample_interval: Option<String>,
    /// Length of the run fixing the attractor mean and variance.
    #[arg(long)]
    reference_time: Option<String>,
    /// Seed of the first pair.
    #[arg(long)]
    seed: Option<String>,
    /// Also classify the attractor (true/false).
    #[arg(long)]
    verdict: Option<String>,
    /// JSON output path for the verdict.
    #[arg(long, value_name = "PATH")]
    json: Option<std::path::PathBuf>,
}

#[derive(Args, Debug)]
struct ProjectArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    system: SystemArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Recorded span after the transient.
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    stride: Option<String>,
}

fn keyed(extra: Vec<(&'static str, Option<String>)>, parts: &[&dyn Keyed]) -> Vec<(&'static str, Option<String>)> {
    let mut all: Vec<_> = parts.iter().flat_map(|p| p.pairs()).collect();
    all.extend(extra);
    all
}

fn run(cli: Cli) -> Result<(), commands::Failure> {
    match cli.command {
        Command::Simulate(a) => {
            let flags = keyed(
                vec![("t_end", a.t_end), ("transient", a.transient), ("stride", a.stride)],
                &[&a.system],
            );
            commands::simulate(Invocation::new("simulate", &a.common, flags)?)
        }
        Command::Hopf(a) => {
            let flags = vec![("a", a.a), ("b", a.b), ("N", a.orders)];
            commands::hopf(Invocation::new("hopf", &a.common, flags)?)
        }
        Command::Scan(a) => {
            let flags = keyed(
                vec![
                    ("t_min", a.t_min),
                    ("t_max", a.t_max),
                    ("t_step", a.t_step),
                    ("lyapunov", a.lyapunov),
                    ("multiplicity", a.multiplicity),
                    ("refine", a.refine),
                    ("bracket_width", a.bracket_width),
                ],
                &[&a.system, &a.run],
            );
            commands::scan(Invocation::new("scan", &a.common, flags)?, a.json)
        }
        Command::Crosscorr(a) => {
            let flags = keyed(
                vec![
                    ("delta", a.delta),
                    ("pairs", a.pairs),
                    ("horizon", a.horizon),
                    ("sample_interval", a.sample_interval),
                    ("reference_time", a.reference_time),
                    ("seed", a.seed),
                    ("verdict", a.verdict),
                ],
                &[&a.system, &a.run],
            );
            commands::crosscorr(Invocation::new("crosscorr", &a.common, flags)?, a.json)
        }
        Command::Project(a) => {
            let flags = keyed(vec![("window", a.window), ("stride", a.stride)], &[&a.system, &a.run]);
            commands::project(Invocation::new("project", &a.common, flags)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("kseries: {f}");
            ExitCode::from(f.code())
        }
    }
}
