//! Runs an experiment from a TOML config, the same way the binary does.
//!
//! `cargo run --release --example run_config -- path/to/config.toml out/`

use causal_icl::experiment::{config::ExperimentConfig, run_oracle, run_train};
use std::path::PathBuf;

fn main() -> causal_icl::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = match args.next() {
        Some(p) => ExperimentConfig::load(&PathBuf::from(p))?,
        None => ExperimentConfig::from_toml(
            r#"
            seed = 1
            [graph]
            family = "icl"
            t = 10
            [prior]
            kind = "dirichlet"
            alphabet = 3
            alpha = 1.0
            "#,
        )?,
    };
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/run_config".into()));
    let (m, _) = run_train(&cfg, &out.join("train"))?;
    println!("avg-attn {:.3}  final loss {:.5}  β {:.3}", m.avg_attn, m.final_loss, m.beta);
    let o = run_oracle(&cfg, &out.join("oracle"))?;
    println!("oracle recovered {} (exact match {})", o.recovered, o.exact_match);
    println!("outputs under {}", out.display());
    Ok(())
}
