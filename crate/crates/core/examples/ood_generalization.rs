//! Trains a reduced model, then measures its in-context estimate on a kernel
//! far from the training prior. The large-β construction on the same graph
//! shows where a fully converged model would land.

use causal_icl::construct::from_reduced;
use causal_icl::experiment::{config::OodKernel, evaluate_ood, OutputHead};
use causal_icl::graph::CausalGraph;
use causal_icl::markov::{DirichletPrior, KernelPrior};
use causal_icl::reduced::{run_algorithm1, ReducedParams, TrainConfig};
use causal_icl::rng::seeded;
use std::sync::Arc;

fn main() -> causal_icl::Result<()> {
    let mut rng = seeded(11);
    let g = CausalGraph::chain(40)?;
    let prior = KernelPrior::Dirichlet(DirichletPrior::new(3, 1.0)?);
    let run = run_algorithm1(&g, &prior, &TrainConfig::defaults(&g, 3), &mut rng)?;
    println!("trained β {:.3}", run.params.beta());
    let trained = from_reduced(&run.params);
    let converged = from_reduced(&ReducedParams::construction(&g, 3, 50.0, 50.0));
    let far = Arc::new(OodKernel::NearDeterministic { delta: 0.1 }.build(3, &prior, &mut rng)?);
    let near = Arc::new(OodKernel::Prior.build(3, &prior, &mut rng)?);
    for (name, k) in [("near-deterministic", &far), ("from prior", &near)] {
        for (label, m) in [("trained", &trained), ("β=50", &converged)] {
            let r = evaluate_ood(m, OutputHead::Identity, &g, k, 1000, &mut rng)?;
            println!(
                "{name:<19} {label:<8} p99 {:.4}  max {:.4}   μ̂ baseline p99 {:.4}",
                r.model.p99, r.model.max, r.baseline.p99
            );
        }
    }
    Ok(())
}
