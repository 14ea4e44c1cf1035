//! Seeded generators for random markets satisfying the law of one price,
//! claims and stopping times.
//!
//! Child prices are `S ⊙ (1 + σ y_c + σ r Σ_j p_j w_j y_j)` where `y_c` are
//! centred uniform shocks and `w_j` uniform in `[−1, 1]`. Drift built from the
//! centred shocks keeps the squared one-step Sharpe ratio below `r²`, so
//! `L ≥ (1 + r²)^(−T)`. A node with at most as many children as assets has
//! centred shocks spanning fewer than `d` dimensions, so `E[L⁺ΔSΔSᵀ]` is
//! singular there.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::tree::{AdaptedProcess, EventTree, MarketBuilder, StoppingTime};

#[derive(Debug, Clone, Copy)]
pub struct RandomMarketConfig {
    pub max_horizon: usize,
    pub max_branching: usize,
    pub max_dim: usize,
    /// Resample until `d ×` (non-terminal nodes) is at most this.
    pub max_unknowns: usize,
    /// Per-tree relative step size `σ` is drawn from this range.
    pub volatility: (f64, f64),
    /// Bound `r` on the one-step Sharpe ratio.
    pub drift_ratio: f64,
    /// Shocks are redrawn until the smallest structurally nonzero eigenvalue
    /// of their covariance is at least this fraction of the largest.
    pub min_condition: f64,
}

impl Default for RandomMarketConfig {
    fn default() -> Self {
        Self { max_horizon: 5, max_branching: 4, max_dim: 3, max_unknowns: 600, volatility: (0.05, 0.3), drift_ratio: 0.5, min_condition: 1e-4 }
    }
}

pub fn random_market<R: Rng + ?Sized>(rng: &mut R, cfg: &RandomMarketConfig) -> (EventTree, AdaptedProcess) {
    loop {
        let horizon = rng.random_range(1..=cfg.max_horizon);
        let dim = rng.random_range(1..=cfg.max_dim);
        if let Some(market) = try_market(rng, cfg, horizon, dim) {
            return market;
        }
    }
}

fn try_market<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &RandomMarketConfig,
    horizon: usize,
    dim: usize,
) -> Option<(EventTree, AdaptedProcess)> {
    let sigma = rng.random_range(cfg.volatility.0..=cfg.volatility.1);
    let root: Vec<f64> = (0..dim).map(|_| rng.random_range(0.5..5.0)).collect();
    let mut b = MarketBuilder::new(root.clone());
    let mut frontier = vec![(b.root(), root)];
    let mut inner = 0;
    for _ in 0..horizon {
        let mut next = Vec::new();
        for (id, price) in frontier {
            inner += 1;
            if inner * dim > cfg.max_unknowns {
                return None;
            }
            let k = rng.random_range(2..=cfg.max_branching);
            let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
            let total: f64 = weights.iter().sum();
            let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
            let centred = loop {
                let c = centred_shocks(rng, &probs, dim);
                if well_conditioned(&c, &probs, cfg.min_condition) {
                    break c;
                }
            };
            let tilt: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let drift: Vec<f64> = (0..dim)
                .map(|i| cfg.drift_ratio * (0..k).map(|c| probs[c] * tilt[c] * centred[c][i]).sum::<f64>())
                .collect();
            for (c, p) in probs.iter().enumerate() {
                let child: Vec<f64> =
                    (0..dim).map(|i| price[i] * (1.0 + sigma * (centred[c][i] + drift[i]))).collect();
                let cid = b.child(id, *p, child.clone());
                next.push((cid, child));
            }
        }
        frontier = next;
    }
    Some(b.build().expect("generated tree is valid"))
}

fn centred_shocks<R: Rng + ?Sized>(rng: &mut R, probs: &[f64], dim: usize) -> Vec<Vec<f64>> {
    let shocks: Vec<Vec<f64>> = probs.iter().map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mean: Vec<f64> = (0..dim).map(|i| probs.iter().zip(&shocks).map(|(q, x)| q * x[i]).sum()).collect();
    shocks.iter().map(|x| x.iter().zip(&mean).map(|(a, m)| a - m).collect()).collect()
}

/// `k` centred shocks span at most `min(k − 1, d)` dimensions; checks the
/// spread of the covariance over that many eigenvalues.
fn well_conditioned(centred: &[Vec<f64>], probs: &[f64], min_condition: f64) -> bool {
    let dim = centred[0].len();
    let mut cov = DMatrix::zeros(dim, dim);
    for (y, p) in centred.iter().zip(probs) {
        let v = DVector::from_column_slice(y);
        cov += &v * v.transpose() * *p;
    }
    let mut eig: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let rank = (centred.len() - 1).min(dim);
    eig[rank - 1] >= min_condition * eig[0]
}

/// Random leaf payoff: uniform values, or a call or put on a random asset.
pub fn random_claim<R: Rng + ?Sized>(rng: &mut R, tree: &EventTree, prices: &AdaptedProcess) -> AdaptedProcess {
    let kind = rng.random_range(0..3);
    let asset = rng.random_range(0..prices.dim());
    let strike = rng.random_range(0.5..5.0);
    let mut h = AdaptedProcess::new(1, tree.len());
    for &leaf in tree.leaves() {
        let x = prices.value(leaf).expect("prices defined on leaves")[asset];
        let v = match kind {
            0 => rng.random_range(-1.0..1.0),
            1 => (x - strike).max(0.0),
            _ => (strike - x).max(0.0),
        };
        h.set(leaf, &[v]).expect("scalar payoff");
    }
    h
}

/// Stops at each non-terminal node with probability `q`, otherwise
/// descends; leaves always stop.
pub fn random_stopping_time<R: Rng + ?Sized>(rng: &mut R, tree: &EventTree, q: f64) -> StoppingTime {
    let mut stops = Vec::new();
    let mut stack = vec![tree.root()];
    while let Some(n) = stack.pop() {
        if tree.is_leaf(n) || rng.random_bool(q) {
            stops.push(n);
        } else {
            stack.extend_from_slice(tree.children(n));
        }
    }
    StoppingTime::new(stops)
}
