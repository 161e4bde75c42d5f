//! Checks the per-kernel strict data-processing gap on a few graphs.

use causal_icl::graph::CausalGraph;
use causal_icl::markov::{sample_kernel, DirichletPrior};
use causal_icl::oracle::verify_dpi;
use causal_icl::rng::seeded;

fn main() -> causal_icl::Result<()> {
    let mut rng = seeded(8);
    let k = sample_kernel(&DirichletPrior::new(3, 1.0)?, &mut rng)?;
    for g in [CausalGraph::chain(8)?, CausalGraph::icl(8)?, CausalGraph::figure_one()] {
        let r = verify_dpi(&g, &k, 1e-9)?;
        println!(
            "{}  γ {:.3}  α {:.3}  ‖B‖² {:.4}  pairs {}  min slack {:.3e}  pass {}",
            g.to_json(),
            r.gamma,
            r.alpha,
            r.b_frobenius_sq,
            r.pairs.len(),
            r.min_slack(),
            r.all_pass()
        );
    }
    Ok(())
}
