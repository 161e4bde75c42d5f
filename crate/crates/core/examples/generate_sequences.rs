//! Samples sequences on a graph and writes them as JSON lines.

use causal_icl::graph::CausalGraph;
use causal_icl::markov::{DirichletPrior, KernelPrior};
use causal_icl::rng::seeded;
use causal_icl::sequence::{empirical_freq, SequenceBatch};
use causal_icl::oracle::empirical_transition;

fn main() -> causal_icl::Result<()> {
    let mut rng = seeded(4);
    let g = CausalGraph::icl(12)?;
    let prior = KernelPrior::Dirichlet(DirichletPrior::new(3, 1.0)?);
    let batch = SequenceBatch::generate(&g, &prior, None, 4, &mut rng)?;
    batch.write_jsonl(std::io::stdout().lock())?;

    let tokens = &batch.tokens[0];
    let est = empirical_transition(tokens, &g, 3);
    println!("empirical frequencies {:?}", empirical_freq(tokens, 3));
    for s in 0..3 {
        println!("π̂({s}, ·) = {:?}   π({s}, ·) = {:?}", est.row(s), batch.kernel(0).row(s));
    }
    Ok(())
}
