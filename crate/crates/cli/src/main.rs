use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use codesign_cli::commands::{self, OracleOptions, SimulateOptions, Status};
use codesign_cli::{parse_range, Scenario, EXIT_FAILURE, EXIT_PARSE};

#[derive(Parser)]
#[command(name = "codesign", version, about = "Processing-time and scheduling co-design for AoI monitoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; defaults to the scenario's `output.dir`, then `out`.
    #[arg(long, env = "CODESIGN_OUT")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize processing times and the channel price.
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate scheduling policies.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated: whittle, round-robin, randomized, randomized-opt, max-age.
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<String>>,
        /// Number of seeds.
        #[arg(long)]
        seeds: Option<usize>,
        /// Slots per run.
        #[arg(long)]
        horizon: Option<u64>,
        /// Use co-designed processing times.
        #[arg(long)]
        codesign: bool,
        /// Sweep a uniform processing time over `a:b`.
        #[arg(long, value_parser = parse_range)]
        sweep_tau: Option<(u32, u32)>,
    },
    /// Uniform processing-time sweep, plus entropy curves for mapping scenarios.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<String>>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long, value_parser = parse_range, default_value = "1:12")]
        sweep_tau: (u32, u32),
        /// Largest age in the entropy curves.
        #[arg(long, default_value_t = 500)]
        max_age: u64,
    },
    /// Check the closed-form threshold against value iteration.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        agent: usize,
        /// Processing time; defaults to the co-designed one.
        #[arg(long)]
        tau: Option<u32>,
        /// Channel price; defaults to the co-designed one.
        #[arg(long = "c")]
        price: Option<f64>,
        #[arg(long)]
        age_cap: Option<f64>,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Run the invariant checks on the scenario's agents.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn out_dir(common: &Common, sc: &Scenario) -> PathBuf {
    common.out.clone().or_else(|| sc.file.output.dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn load(path: &Path) -> Result<Scenario, ExitCode> {
    Scenario::load(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_PARSE as u8)
    })
}

fn dispatch(cmd: Command) -> Result<Status, ExitCode> {
    let mut stdout = io::stdout().lock();
    let fail = |e: anyhow::Error| {
        eprintln!("error: {e:#}");
        ExitCode::from(EXIT_FAILURE as u8)
    };
    let prepare = |common: &Common| -> Result<(Scenario, PathBuf), ExitCode> {
        let sc = load(&common.scenario)?;
        let out = out_dir(common, &sc);
        commands::ensure_dir(&out).map_err(fail)?;
        Ok((sc, out))
    };
    match cmd {
        Command::Solve { common } => {
            let (sc, out) = prepare(&common)?;
            commands::solve(&sc, &out, &mut stdout).map_err(fail)
        }
        Command::Simulate { common, policies, seeds, horizon, codesign, sweep_tau } => {
            let (sc, out) = prepare(&common)?;
            let opts = SimulateOptions { policies, seeds, horizon, codesign, sweep_tau };
            commands::simulate(&sc, &opts, &out, &mut stdout).map_err(fail)
        }
        Command::Sweep { common, policies, seeds, horizon, sweep_tau, max_age } => {
            let (sc, out) = prepare(&common)?;
            let opts = SimulateOptions { policies, seeds, horizon, codesign: false, sweep_tau: Some(sweep_tau) };
            let status = commands::simulate(&sc, &opts, &out, &mut stdout).map_err(fail)?;
            commands::entropy_curves(&sc, max_age, &out).map_err(fail)?;
            Ok(status)
        }
        Command::Oracle { common, agent, tau, price, age_cap, tol } => {
            let (sc, out) = prepare(&common)?;
            let opts = OracleOptions { agent, tau, c: price, age_cap, tol };
            commands::oracle(&sc, &opts, &out, &mut stdout).map_err(fail)
        }
        Command::Validate { scenario } => {
            let sc = load(&scenario)?;
            commands::validate(&sc, &mut stdout).map_err(fail)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_PARSE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match dispatch(cli.command) {
        Ok(status) => ExitCode::from(status.code() as u8),
        Err(code) => code,
    }
}
