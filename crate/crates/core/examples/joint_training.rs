//! Joint gradient descent on the full disentangled two-layer model with
//! finite batches, on one random graph.
//!
//! `cargo run --release --example joint_training [steps]`

use causal_icl::graph::CausalGraph;
use causal_icl::markov::{DirichletPrior, KernelPrior};
use causal_icl::reduced::avg_attn;
use causal_icl::rng::seeded;
use causal_icl::transformer::{position_pattern, train_disentangled_joint, JointConfig};

fn main() -> causal_icl::Result<()> {
    let steps: usize = std::env::args().nth(1).map_or(1024, |a| a.parse().expect("steps"));
    let mut rng = seeded(6);
    let g = CausalGraph::random(20, 0.5, &mut rng)?;
    let prior = KernelPrior::Dirichlet(DirichletPrior::new(3, 0.1)?);
    let cfg = JointConfig { steps, log_every: steps / 8, ..JointConfig::default() };
    let run = train_disentangled_joint(&g, &prior, &cfg, &mut rng)?;
    for r in &run.trajectory.records {
        println!("{:>6} loss {:.4}  avg-attn {:.3}", r.step, r.loss, r.avg_attn);
    }
    let p = position_pattern(&run.params);
    println!("graph {}", g.to_json());
    println!("final avg-attn {:.3}", avg_attn(&p, &g));
    Ok(())
}
