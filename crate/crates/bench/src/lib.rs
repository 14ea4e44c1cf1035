//! Fixed inputs for the benchmarks.

use quadhedge_core::random::{random_claim, random_market, RandomMarketConfig};
use quadhedge_core::{AdaptedProcess, EventTree};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub tree: EventTree,
    pub prices: AdaptedProcess,
    pub claim: AdaptedProcess,
}

/// First random market from `seed` with exactly `horizon` periods and `dim`
/// assets.
pub fn market(seed: u64, horizon: usize, dim: usize, max_unknowns: usize) -> Fixture {
    let cfg = RandomMarketConfig { max_horizon: horizon, max_dim: dim, max_unknowns, ..RandomMarketConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let (tree, prices) = random_market(&mut rng, &cfg);
        if tree.horizon() == horizon && prices.dim() == dim {
            let claim = random_claim(&mut rng, &tree, &prices);
            return Fixture { tree, prices, claim };
        }
    }
}
