mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use commands::{Format, NetTarget, RunContext};
use config::{ConfigError, Overrides};

#[derive(Parser)]
#[command(
    name = "ipwave",
    version,
    about = "Geodesics of impulsive pp-waves: simulate, sweep, limit, validate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML, or JSON including a previous report).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Trajectory file format.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
    /// Single ε; replaces eps and eps_grid from the file.
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Geometric grid "start:stop:count".
    #[arg(long = "eps-grid", global = true)]
    eps_grid: Option<String>,
    /// Worker threads for per-ε runs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Override a config key, e.g. `--set integrator.rel_tol=1e-9`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the regularized geodesic for each requested ε.
    Simulate,
    /// Convergence sweep against the distributional limit.
    Sweep {
        /// Also run the moderateness, stability and existence-box checks.
        #[arg(long)]
        probes: bool,
    },
    /// Evaluate the broken limit geodesic.
    Limit,
    /// Check a delta net against the net axioms.
    ValidateNet {
        /// Net name; defaults to the scenario's net.
        #[arg(long)]
        net: Option<String>,
    },
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            eps: self.eps,
            eps_grid: self.eps_grid.clone(),
            set: self.set.clone(),
        }
    }
}

fn net_target(common: &Common, net: Option<String>) -> Result<NetTarget> {
    if common.config.is_some() {
        let cfg = config::load(common.config.as_deref(), &common.overrides())?;
        return Ok(NetTarget {
            id: cfg.id.clone(),
            net: net.unwrap_or_else(|| cfg.net.clone()),
            options: cfg.validate.clone(),
            out: PathBuf::from(&cfg.output),
            hash: Some(config::config_hash(&cfg)?),
            config: Some(config::embedded(&cfg)?),
        });
    }
    let net = net.ok_or_else(|| ConfigError::new("net", "give --net or --config"))?;
    Ok(NetTarget {
        id: format!("net-{net}"),
        net,
        options: Default::default(),
        out: common.out.clone().unwrap_or_else(|| PathBuf::from("out")),
        hash: None,
        config: None,
    })
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(j) = cli.common.jobs {
        if j == 0 {
            return Err(ConfigError::new("--jobs", "must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()?;
    }
    if let Command::ValidateNet { net } = cli.command {
        return commands::validate_net(&net_target(&cli.common, net)?);
    }
    let cfg = config::load(cli.common.config.as_deref(), &cli.common.overrides())?;
    let ctx = RunContext::new(cfg)?;
    match cli.command {
        Command::Simulate => commands::simulate(&ctx, cli.common.format),
        Command::Sweep { probes } => commands::sweep_cmd(&ctx, probes),
        Command::Limit => commands::limit_cmd(&ctx),
        Command::ValidateNet { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
