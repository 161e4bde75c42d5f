//! Two-stage gradient training of the reduced model on a chain.
//!
//! `cargo run --release --example staged_training [T]`

use causal_icl::graph::CausalGraph;
use causal_icl::markov::{DirichletPrior, KernelPrior};
use causal_icl::reduced::{run_algorithm1, Stage, TrainConfig};
use causal_icl::rng::seeded;

fn main() -> causal_icl::Result<()> {
    let t: usize = std::env::args().nth(1).map_or(12, |a| a.parse().expect("T"));
    let g = CausalGraph::chain(t)?;
    let prior = KernelPrior::Dirichlet(DirichletPrior::new(3, 1.0)?);
    let cfg = TrainConfig::defaults(&g, 3);
    let run = run_algorithm1(&g, &prior, &cfg, &mut seeded(5))?;
    let traj = &run.trajectory;
    for r in traj.records.iter().step_by(25) {
        println!("{:>5} {:<7} loss {:.5}  gap {:+.5}  β {:.3}  min edge {:.3}", r.step, r.stage, r.loss, r.loss_gap, r.beta, r.min_edge_softmax);
    }
    let s1 = traj.stage(Stage::One).last().expect("stage 1 ran");
    let end = traj.last().expect("non-empty");
    println!("after stage 1: min edge softmax {:.3}", s1.min_edge_softmax);
    println!("final: β {:.3}  gap {:.5}", end.beta, end.loss_gap);
    if let Some(f) = run.failure {
        println!("stopped early: {f}");
    }
    Ok(())
}
