//! Draws transition kernels from a Dirichlet prior and reports their
//! stationary law, spectral quantities and the prior conditions.

use causal_icl::markov::{
    b_frobenius_sq, check_assumptions, kernel_gamma, measured_gamma, sample_kernel, spectral_gap,
    stationary_by_power_iteration, DirichletPrior,
};
use causal_icl::rng::seeded;

fn main() -> causal_icl::Result<()> {
    let mut rng = seeded(2);
    let prior = DirichletPrior::new(3, 1.0)?;
    let k = sample_kernel(&prior, &mut rng)?;
    println!("kernel {}", k.to_json());
    println!("stationary {:?}", k.stationary());
    println!("power iteration {:?}", stationary_by_power_iteration(&k)?);
    println!("spectral gap {:.4}  ‖B‖_F² {:.4}  γ {:.4}", spectral_gap(&k)?, b_frobenius_sq(&k)?, kernel_gamma(&k));

    let sample: Vec<_> = (0..500).map(|_| sample_kernel(&prior, &mut rng)).collect::<Result<_, _>>()?;
    let gamma = measured_gamma(&sample);
    let cert = check_assumptions(&sample, gamma * 0.999)?;
    println!("measured γ over 500 draws {gamma:.3e}");
    println!(
        "lower bounded {}  non-degenerate {}  symmetric {} (z {:.2})  constant mean {} (z {:.2})",
        cert.lower_bounded, cert.non_degenerate, cert.symmetric, cert.symmetry_z, cert.constant_mean, cert.mean_z
    );
    Ok(())
}
