//! Converts a random standard transformer into disentangled form and back,
//! and checks that all three produce the same outputs.

use causal_icl::rng::seeded;
use causal_icl::transformer::{disentangle, entangle, OutputMode, StandardParams};
use rand::Rng;

fn main() -> causal_icl::Result<()> {
    let mut rng = seeded(1);
    let (s, t) = (5, 8);
    let std = StandardParams::random(s, t, 12, &[2, 3], 4, 0.5, &mut rng);
    let dis = disentangle(&std)?;
    let back = entangle(&dis)?;
    println!("standard hidden {}  disentangled dims {:?}", std.hidden(), dis.dims());

    let tokens: Vec<usize> = (0..t).map(|_| rng.random_range(0..s)).collect();
    let a = std.forward(&tokens)?;
    let (b, _) = dis.forward(&tokens, OutputMode::AllPositions)?;
    let c = back.forward(&tokens)?;
    println!("tokens {tokens:?}");
    println!("standard vs disentangled  {:.3e}", a.max_abs_diff(&b));
    println!("disentangled vs entangled {:.3e}", b.max_abs_diff(&c));
    Ok(())
}
