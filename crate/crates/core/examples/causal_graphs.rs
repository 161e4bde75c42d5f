//! Builds the standard graph families and prints their structure.

use causal_icl::graph::{CausalGraph, MultiParentGraph};
use causal_icl::rng::seeded;

fn main() -> causal_icl::Result<()> {
    let mut rng = seeded(3);
    let graphs = [
        ("chain", CausalGraph::chain(8)?),
        ("icl", CausalGraph::icl(8)?),
        ("star", CausalGraph::star(8)?),
        ("figure-one", CausalGraph::figure_one()),
        ("random", CausalGraph::random(8, 0.5, &mut rng)?),
    ];
    for (name, g) in &graphs {
        let st = g.stats();
        println!("{name:<11} {}", g.to_json());
        println!(
            "            trees {}  root fraction {:.2}  T_eff {:.3}  T_eff(0.5) {:.3}",
            g.trees().len(),
            g.root_fraction(),
            st.t_eff,
            g.effective_length_lambda(0.5)?
        );
    }
    let g = &graphs[3].1;
    println!("figure-one distance(2, 5) = {:?}", g.distance(2, 5)?);

    let tri = MultiParentGraph::ngram(8, 3)?;
    println!("3-gram {}", tri.to_json());
    Ok(())
}
