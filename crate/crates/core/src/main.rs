use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use gensemcom::harness::commands::{
    self, cmd_ablate, cmd_selftest, cmd_sweep, cmd_train, cmd_verify_prop1, Status, EXIT_CONFIG, EXIT_RUNTIME,
};
use gensemcom::harness::{exit_code, ExperimentConfig, Overrides};
use gensemcom::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "gensemcom", version, about = "Generative semantic communication simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (default: $GENSEMCOM_OUT_DIR, then ./gensemcom-out).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Replace every seed list and seed in the config with this seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Run the random-noise baseline alongside the proposed system.
    #[arg(long, global = true, value_enum)]
    baseline: Option<Switch>,

    /// Write the SVG plot of a sweep.
    #[arg(long, global = true, value_enum)]
    plot: Option<Switch>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        matches!(self, Switch::On)
    }
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Monte-Carlo check of the received-latent noise budget.
    VerifyProp1,
    /// SNR sweep of the configured pipeline.
    Sweep,
    /// Split and denoising-step ablation at a fixed SNR.
    Ablate,
    /// Train the MLP denoiser and write a checkpoint.
    Train,
    /// Fast built-in consistency checks.
    Selftest,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Overrides {
        out: cli.out.clone(),
        seed: cli.seed,
        baseline: cli.baseline.map(Switch::on),
        plot: cli.plot.map(Switch::on),
    }
    .apply(&mut cfg);
    if cli.jobs == Some(0) {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &ExperimentConfig) -> Result<Status> {
    let out = cfg.out_dir(None);
    match cli.command {
        Command::VerifyProp1 => {
            let (status, report) = cmd_verify_prop1(cfg, &out)?;
            println!("{}", report.summary());
            if status != Status::Passed {
                let worst = report
                    .dims
                    .iter()
                    .max_by(|a, b| a.rel_err.abs().total_cmp(&b.rel_err.abs()))
                    .expect("at least one dimension");
                eprintln!(
                    "tolerance failure: pooled variance error {:+.4} (limit {}), mean in band {:.4} (need {}); worst dim {} rel_err {:+.4}",
                    report.var_rel_err,
                    gensemcom::analysis::VARIANCE_REL_TOL,
                    report.mean_coverage,
                    gensemcom::analysis::MEAN_BAND_COVERAGE,
                    worst.dim,
                    worst.rel_err
                );
            }
            println!("wrote {}", out.join(commands::PROP1_CSV).display());
            Ok(status)
        }
        Command::Sweep => {
            let rows = cmd_sweep(cfg, &out)?;
            println!("sweep: {} rows -> {}", rows.len(), out.join(commands::SWEEP_CSV).display());
            Ok(Status::Passed)
        }
        Command::Ablate => {
            let rows = cmd_ablate(cfg, &out)?;
            println!("ablate: {} rows -> {}", rows.len(), out.join(commands::ABLATION_CSV).display());
            Ok(Status::Passed)
        }
        Command::Train => {
            let (status, s) = cmd_train(cfg, &out)?;
            println!(
                "train: smoothed loss {:.6} -> {:.6}; checkpoint {}",
                s.initial_loss,
                s.final_loss,
                s.checkpoint.display()
            );
            Ok(status)
        }
        Command::Selftest => {
            let (status, rows) = cmd_selftest(&out)?;
            for r in &rows {
                println!("{} {}: {:e} (limit {:e})", if r.passed { "PASS" } else { "FAIL" }, r.check, r.value, r.threshold);
            }
            Ok(status)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(if matches!(e, Error::Config(_)) { EXIT_CONFIG } else { EXIT_RUNTIME } as u8);
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        pool = pool.num_threads(j);
    }
    let outcome = match pool.build() {
        Ok(pool) => pool.install(|| run(&cli, &cfg)),
        Err(e) => Err(Error::Io(std::io::Error::other(e))),
    };
    if let Err(e) = &outcome {
        eprintln!("error: {e}");
    }
    ExitCode::from(exit_code(&outcome) as u8)
}
