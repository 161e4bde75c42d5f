//! Hand-built induction heads: single-parent and 3-gram constructions and
//! their fidelity against the counting estimator as β grows.

use causal_icl::construct::{fidelity_report, ConstructionGraph, FidelityKernel, DEFAULT_BETAS};
use causal_icl::graph::{CausalGraph, MultiParentGraph};
use causal_icl::markov::{sample_kernel, DirichletPrior, MultiKernel};
use causal_icl::rng::seeded;
use std::sync::Arc;

fn main() -> causal_icl::Result<()> {
    let mut rng = seeded(9);
    let k = Arc::new(sample_kernel(&DirichletPrior::new(3, 1.0)?, &mut rng)?);
    let single = ConstructionGraph::Single(CausalGraph::chain(20)?);
    println!("single parent, chain(20)");
    for row in fidelity_report(&single, &FidelityKernel::Single(k), 500, &DEFAULT_BETAS, 1, &mut rng)? {
        println!("  β {:>4}  mean {:.3e}  max {:.3e}  (raw max {:.3e})", row.beta, row.mean_err, row.max_err, row.max_err_full);
    }

    let mk = Arc::new(MultiKernel::sample_dirichlet(3, 2, 1.0, &mut rng)?);
    let tri = ConstructionGraph::Multi(MultiParentGraph::ngram(20, 3)?);
    println!("two heads, 3-gram(20), sequences with ≥3 matches");
    for row in fidelity_report(&tri, &FidelityKernel::Multi(mk), 500, &DEFAULT_BETAS, 3, &mut rng)? {
        println!("  β {:>4}  mean {:.3e}  max {:.3e}  over {}", row.beta, row.mean_err, row.max_err, row.n_defined);
    }
    Ok(())
}
