//! Mean–variance frontier and maximal Sharpe ratio for hedging a claim.
//!
//! Conditional on a stop node with opportunity value `L`, mean value `V` and
//! squared hedging error `ε²`, the frontier of payoffs `H + gains` is
//!
//! ```text
//! Var = ε² + L/(1−L) (m − V)²
//! ```
//!
//! attained by `W = H − (X_T − V) + (λ − V)(1 − Π(1 − aᵀΔS))` with mean
//! `λ(1−L) + V L`, where `X_T` is the optimal hedge from `V` and the product
//! runs over the steps after the stop. When `L = 1` nothing but `m = V` is
//! attainable.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hedging::{hedge_payoff, simulate_feedback, HedgingSolution, OpportunityLayer};
use crate::tree::{check_stopping_time, AdaptedProcess, EventTree, StopMap, StoppingTime};

/// Opportunity values this close to one collapse the frontier.
pub const COLLAPSE_TOL: f64 = 1e-12;

/// Relative tolerance for treating a mean or price as equal to `V`.
pub const MEAN_TOL: f64 = 1e-12;

/// `ε²` at or below this multiple of `max(1, V²)` counts as zero.
pub const EPS2_ZERO: f64 = 1e-24;

/// `(L, V, ε²)` at one stop node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrontierParams {
    pub l: f64,
    pub v: f64,
    pub eps2: f64,
}

impl FrontierParams {
    pub fn new(l: f64, v: f64, eps2: f64) -> Result<Self> {
        if !(l > 0.0 && l <= 1.0 + COLLAPSE_TOL) || !v.is_finite() || !(eps2 >= 0.0 && eps2.is_finite()) {
            return Err(Error::InvalidConfig(format!("frontier parameters out of range: L={l}, V={v}, eps2={eps2}")));
        }
        Ok(Self { l, v, eps2 })
    }

    pub fn at(opp: &OpportunityLayer, sol: &HedgingSolution, node: usize) -> Self {
        Self { l: opp.l(node), v: sol.v(node), eps2: sol.eps2(node) }
    }

    pub fn is_collapsed(&self) -> bool {
        self.l >= 1.0 - COLLAPSE_TOL
    }

    fn same_as_v(&self, x: f64) -> bool {
        (x - self.v).abs() <= MEAN_TOL * x.abs().max(self.v.abs()).max(1.0)
    }

    fn eps2_is_zero(&self) -> bool {
        self.eps2 <= EPS2_ZERO * self.v.powi(2).max(1.0)
    }
}

/// Minimal variance over payoffs `H + gains` with conditional mean `m`.
pub fn frontier_variance(m: f64, params: &FrontierParams) -> Result<f64> {
    if params.is_collapsed() {
        if params.same_as_v(m) {
            return Ok(params.eps2);
        }
        return Err(Error::FrontierCollapsed { mean: m, value: params.v });
    }
    Ok(params.eps2 + params.l / (1.0 - params.l) * (m - params.v).powi(2))
}

/// Mean of the frontier payoff with parameter `λ`.
pub fn frontier_mean(lambda: f64, params: &FrontierParams) -> f64 {
    lambda * (1.0 - params.l) + params.v * params.l
}

/// Moments of the frontier payoff at one stop node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrontierPoint {
    pub lambda: f64,
    /// Conditional mean and variance enumerated over the leaves.
    pub mean: f64,
    pub variance: f64,
    /// Closed-form mean `λ(1−L) + V L` and variance on the frontier.
    pub predicted_mean: f64,
    pub predicted_variance: f64,
}

#[derive(Debug, Clone)]
pub struct FrontierPayoff {
    /// Payoff on the leaves.
    pub payoff: Vec<Option<f64>>,
    pub points: BTreeMap<usize, FrontierPoint>,
}

impl FrontierPayoff {
    /// Largest mean or variance mismatch against the closed forms, relative
    /// to `max(1, |value|)`.
    pub fn max_deviation(&self) -> f64 {
        self.points
            .values()
            .map(|p| {
                let dm = (p.mean - p.predicted_mean).abs() / p.predicted_mean.abs().max(1.0);
                let dv = (p.variance - p.predicted_variance).abs() / p.predicted_variance.abs().max(1.0);
                dm.max(dv)
            })
            .fold(0.0, f64::max)
    }
}

/// Builds the frontier payoff for `λ` at each stop node and enumerates its
/// conditional moments.
pub fn frontier_payoff(
    tree: &EventTree,
    prices: &AdaptedProcess,
    opp: &OpportunityLayer,
    sol: &HedgingSolution,
    lambda: &StopMap,
    tau: &StoppingTime,
) -> Result<FrontierPayoff> {
    if !check_stopping_time(tree, tau) {
        return Err(Error::InvalidStoppingTime);
    }
    let v0: StopMap = tau.stops.iter().map(|&s| (s, sol.v(s))).collect();
    let run = simulate_feedback(tree, prices, opp, sol, &v0, tau)?;
    let owners = tau.owners(tree);

    // Π(1 − aᵀΔS) from the stop node down.
    let mut pi = vec![f64::NAN; tree.len()];
    for n in 0..tree.len() {
        if owners[n].is_none() {
            continue;
        }
        if tau.stops.contains(&n) {
            pi[n] = 1.0;
        }
        let s = prices.value(n)?;
        for &c in tree.children(n) {
            let sc = prices.value(c)?;
            let step: f64 = opp.a(n).iter().zip(sc.iter().zip(s)).map(|(a, (x, y))| a * (x - y)).sum();
            pi[c] = pi[n] * (1.0 - step);
        }
    }

    let mut payoff = vec![None; tree.len()];
    let mut points = BTreeMap::new();
    for &s in &tau.stops {
        let lam = *lambda.get(&s).ok_or(Error::MissingStopValue { node: tree.id_of(s) })?;
        let params = FrontierParams::at(opp, sol, s);
        let ps = tree.path_prob(s);
        let leaves = tree.leaves_under(s);
        let mut mean = 0.0;
        for &l in &leaves {
            let w = sol.v(s) - run.residual[l].expect("leaf after stop") + (lam - sol.v(s)) * (1.0 - pi[l]);
            payoff[l] = Some(w);
            mean += tree.path_prob(l) / ps * w;
        }
        let variance: f64 =
            leaves.iter().map(|&l| tree.path_prob(l) / ps * (payoff[l].unwrap() - mean).powi(2)).sum();
        let predicted_mean = frontier_mean(lam, &params);
        let predicted_variance = params.eps2 + (lam - params.v).powi(2) * params.l * (1.0 - params.l);
        points.insert(s, FrontierPoint { lambda: lam, mean, variance, predicted_mean, predicted_variance });
    }
    Ok(FrontierPayoff { payoff, points })
}

/// Maximal squared Sharpe ratio from trading a claim at price `π` together
/// with the assets, and the optimal claim position `η̂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SharpeResult {
    pub pi: f64,
    pub rho2: f64,
    pub eta: f64,
}

impl SharpeResult {
    pub fn rho(&self) -> f64 {
        self.rho2.sqrt()
    }
}

/// `ρ² = 1/L − 1 + (π − V)²/ε²` and `η̂ = ((π − V)/ε²)/(1 + ρ²)`. Returns
/// `None` when `ε² = 0` but `π ≠ V`: the claim is then priced off the
/// hedge and the ratio is unbounded.
pub fn max_sharpe(pi: f64, params: &FrontierParams) -> Option<SharpeResult> {
    let base = 1.0 / params.l - 1.0;
    if params.eps2_is_zero() {
        if params.same_as_v(pi) {
            return Some(SharpeResult { pi, rho2: base, eta: 0.0 });
        }
        return None;
    }
    let d = pi - params.v;
    let rho2 = base + d * d / params.eps2;
    Some(SharpeResult { pi, rho2, eta: d / params.eps2 / (1.0 + rho2) })
}

/// [`max_sharpe`] at every stop node.
pub fn sharpe_by_stop(
    tree: &EventTree,
    opp: &OpportunityLayer,
    sol: &HedgingSolution,
    pi: &StopMap,
    tau: &StoppingTime,
) -> Result<BTreeMap<usize, SharpeResult>> {
    if !check_stopping_time(tree, tau) {
        return Err(Error::InvalidStoppingTime);
    }
    tau.stops
        .iter()
        .map(|&s| {
            let p = *pi.get(&s).ok_or(Error::MissingStopValue { node: tree.id_of(s) })?;
            max_sharpe(p, &FrontierParams::at(opp, sol, s))
                .map(|r| (s, r))
                .ok_or(Error::SharpeHypothesis { node: tree.id_of(s) })
        })
        .collect()
}

/// The wealth attaining the maximal Sharpe ratio at one stop node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SharpeAttainment {
    pub result: SharpeResult,
    /// `E[Y | stop]` and `Var[Y | stop]` of the terminal wealth.
    pub mean: f64,
    pub variance: f64,
    /// `E[(1 − Y)² | stop]`, equal to `1/(1 + ρ²)` at the optimum.
    pub shortfall: f64,
}

impl SharpeAttainment {
    pub fn realized_rho2(&self) -> f64 {
        self.mean * self.mean / self.variance
    }
}

/// Hedges the claim `1 − η̂(π − H)` from zero wealth and reports the moments
/// of `Y = η̂(π − H) + X_T`.
pub fn sharpe_attainment(
    tree: &EventTree,
    prices: &AdaptedProcess,
    opp: &OpportunityLayer,
    sol: &HedgingSolution,
    pi: &StopMap,
    tau: &StoppingTime,
) -> Result<BTreeMap<usize, SharpeAttainment>> {
    let results = sharpe_by_stop(tree, opp, sol, pi, tau)?;
    let owners = tau.owners(tree);
    let mut target = AdaptedProcess::new(1, tree.len());
    for &l in tree.leaves() {
        let s = owners[l].expect("every leaf lies after the stopping time");
        let r = results[&s];
        target.set(l, &[1.0 - r.eta * (r.pi - sol.claim.scalar_at(l)?)])?;
    }
    let target_sol = hedge_payoff(tree, prices, opp, &target)?;
    let run = simulate_feedback(tree, prices, opp, &target_sol, &tau.broadcast(0.0), tau)?;
    let mut out = BTreeMap::new();
    for (&s, &result) in &results {
        let ps = tree.path_prob(s);
        let ys: Vec<(f64, f64)> = tree
            .leaves_under(s)
            .iter()
            .map(|&l| {
                let x = run.wealth[l].expect("leaf after stop");
                let h = sol.claim.scalar_at(l).expect("claim defined on leaves");
                (tree.path_prob(l) / ps, result.eta * (result.pi - h) + x)
            })
            .collect();
        let mean: f64 = ys.iter().map(|(w, y)| w * y).sum();
        let variance: f64 = ys.iter().map(|(w, y)| w * (y - mean).powi(2)).sum();
        let shortfall: f64 = ys.iter().map(|(w, y)| w * (1.0 - y).powi(2)).sum();
        out.insert(s, SharpeAttainment { result, mean, variance, shortfall });
    }
    Ok(out)
}
