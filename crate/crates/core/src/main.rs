use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bilevel_rl::config::RunConfig;
use bilevel_rl::pipeline::RunDir;
use bilevel_rl::Error;

#[derive(Parser)]
#[command(
    name = "bilevel-rl",
    version,
    about = "Process design with an embedded policy-gradient controller"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clone the PD demonstrator into a fresh policy network.
    Pretrain(Common),
    /// Refine the policy with Reinforce.
    Train(Common),
    /// Solve the design problem with the policy as control law.
    Design(Common),
    /// Monte-Carlo evaluation at the solved design.
    Evaluate(Common),
    /// All stages in order.
    Pipeline(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts.
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of Monte-Carlo runs.
    #[arg(long)]
    runs: Option<usize>,
    /// Policy file to read instead of `<out>/policy.json`.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Only print warnings and errors.
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn load(&self) -> bilevel_rl::Result<(RunConfig, RunDir)> {
        let mut cfg = RunConfig::load(&self.config).map_err(|e| match e {
            Error::Io { path, source } => Error::Config {
                path,
                msg: format!("cannot read config: {source}"),
            },
            other => other,
        })?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(runs) = self.runs {
            cfg.design.n_runs = runs;
        }
        cfg.validate()?;
        let mut dir = RunDir::new(&self.out);
        dir.policy = self.policy.clone();
        Ok((cfg, dir))
    }
}

fn run(cmd: &Command) -> bilevel_rl::Result<()> {
    match cmd {
        Command::Pretrain(c) => {
            let (cfg, dir) = c.load()?;
            dir.write_config(&cfg)?;
            dir.pretrain(&cfg)?;
        }
        Command::Train(c) => {
            let (cfg, dir) = c.load()?;
            let net = dir.load_policy()?;
            dir.write_config(&cfg)?;
            dir.train(&cfg, net)?;
        }
        Command::Design(c) => {
            let (cfg, dir) = c.load()?;
            let net = dir.load_policy()?;
            dir.write_config(&cfg)?;
            dir.design(&cfg, &net)?;
        }
        Command::Evaluate(c) => {
            let (cfg, dir) = c.load()?;
            let net = dir.load_policy()?;
            let sol = dir.load_design()?;
            dir.write_config(&cfg)?;
            dir.evaluate(&cfg, &net, &sol)?;
        }
        Command::Pipeline(c) => {
            let (cfg, dir) = c.load()?;
            dir.pipeline(&cfg)?;
        }
    }
    Ok(())
}

fn quiet(cmd: &Command) -> bool {
    match cmd {
        Command::Pretrain(c) | Command::Train(c) | Command::Design(c) | Command::Evaluate(c) | Command::Pipeline(c) => {
            c.quiet
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if quiet(&cli.command) { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = std::env::var("BILEVEL_RL_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
    {
        if n > 0 {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("could not size the worker pool: {e}");
            }
        }
    }

    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } | Error::Parse { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
