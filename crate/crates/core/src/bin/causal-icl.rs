use causal_icl::experiment::{self, config::ExperimentConfig};
use causal_icl::Result;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "causal-icl", version, about = "Train, analyse and verify two-layer attention models on causal-graph sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for batch evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single-threaded run with bit-identical outputs for a given seed.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    Train,
    Oracle,
    Construct,
    Ood,
    Verify {
        #[arg(default_value = "all")]
        suite: String,
    },
    Sweep,
}

enum Outcome {
    Ok,
    VerificationFailed,
}

fn run(cli: &Cli) -> Result<Outcome> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| causal_icl::Error::Config(e.to_string()))?;
    }
    let out = &cli.out;
    match &cli.command {
        Command::Train => {
            let (m, _) = experiment::run_train(&cfg, out)?;
            if let Some(f) = m.failure {
                return Err(causal_icl::Error::NonFinite(f));
            }
            println!("avg_attn {:.4}  min_edge {:.4}  final_loss {:.6}  ({:.1}s)", m.avg_attn, m.min_edge_softmax, m.final_loss, m.runtime_secs);
        }
        Command::Oracle => {
            let r = experiment::run_oracle(&cfg, out)?;
            println!("recovered {}  exact_match {}", r.recovered, r.exact_match);
            if !r.exact_match {
                return Ok(Outcome::VerificationFailed);
            }
        }
        Command::Construct => {
            let r = experiment::run_construct(&cfg, out)?;
            for row in &r.rows {
                println!("beta {:>6}  mean_err {:.3e}  max_err {:.3e}  n {}", row.beta, row.mean_err, row.max_err, row.n_defined);
            }
        }
        Command::Ood => {
            let r = experiment::run_ood(&cfg, out)?;
            println!("model p99 {:.4}  max {:.4}  baseline p99 {:.4}", r.model.p99, r.model.max, r.baseline.p99);
        }
        Command::Verify { suite } => {
            let r = experiment::run_verify_to(&cfg, suite, out)?;
            for c in &r.checks {
                println!("{} {}  {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if !r.all_pass() {
                return Ok(Outcome::VerificationFailed);
            }
        }
        Command::Sweep => {
            let r = experiment::run_sweep(&cfg, out)?;
            println!("avg_attn mean {:.4}  std {:.4}  over {} graphs", r.mean, r.std, r.graphs.len());
        }
    }
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::VerificationFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
