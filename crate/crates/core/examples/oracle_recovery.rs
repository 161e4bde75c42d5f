//! Recovers a graph from prior-averaged mutual information scores.

use causal_icl::graph::CausalGraph;
use causal_icl::markov::{DirichletPrior, KernelPrior};
use causal_icl::oracle::{oracle_from_prior, prior_chi2_mi};
use causal_icl::rng::seeded;

fn main() -> causal_icl::Result<()> {
    let mut rng = seeded(7);
    let prior = KernelPrior::Dirichlet(DirichletPrior::new(3, 1.0)?);
    let g = CausalGraph::random(10, 0.4, &mut rng)?;
    let (kernels, exact) = prior.expectation_sample(2000, &mut rng)?;
    let mi = prior_chi2_mi(&g, &kernels, exact)?;
    let (rec, decisions, thr) = oracle_from_prior(&g, &kernels, exact, 1e-9)?;
    println!("true      {}", g.to_json());
    println!("recovered {}", rec.to_json());
    println!("threshold {thr:.3e}  max SE {:.3e}", mi.max_std_error());
    for d in decisions.iter().filter(|d| d.best.is_some()) {
        println!("  i={:>2} best j={:?} score {:.4} -> parent {:?}", d.i + 1, d.best.map(|j| j + 1), d.best_value, d.parent.map(|j| j + 1));
    }
    Ok(())
}
