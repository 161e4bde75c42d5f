//! Stage-2 idealized gradient ĝ(β) against its lower bound.

use causal_icl::markov::measured_gamma;
use causal_icl::oracle::{assumption_prior, g_hat_from, g_hat_lower_bound};
use causal_icl::rng::seeded;

fn main() -> causal_icl::Result<()> {
    let mut rng = seeded(10);
    for size in [2, 3, 5] {
        let prior = assumption_prior(size, &mut rng)?;
        let support = prior.support().expect("finite prior");
        let gamma = measured_gamma(&support);
        println!("S={size}  γ={gamma:.3}  support {}", support.len());
        for beta in [0.0, 0.5, 1.0, 2.0, 5.0] {
            let g = g_hat_from(&support, beta, 0.5, true);
            println!("  β {beta:<4} ĝ {:.4e}  bound {:.4e}", g.value, g_hat_lower_bound(gamma, size, beta));
        }
    }
    Ok(())
}
