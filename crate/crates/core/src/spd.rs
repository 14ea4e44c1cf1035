//! Variance-optimal state price densities and law-of-one-price audits.
//!
//! The one-step multiplier into child `c` of node `n` is
//! `z = (1 − aᵀΔS) L_c / L_n`. Products of multipliers along a path give the
//! density `^τẐ` restarted at any node `τ`; they may be zero or negative.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hedging::{compute_opportunity, increments, OpportunityLayer};
use crate::tree::{AdaptedProcess, ClaimSpec, EventTree};

/// Density family built from one-step multipliers.
#[derive(Debug, Clone)]
pub struct StatePriceDensityFamily {
    /// Multiplier on the step into each node (1 at the root).
    multipliers: Vec<f64>,
    l: Vec<f64>,
}

impl StatePriceDensityFamily {
    pub fn multiplier(&self, node: usize) -> f64 {
        self.multipliers[node]
    }

    /// Overwrites one multiplier; intended for fault injection in audits.
    pub fn set_multiplier(&mut self, node: usize, z: f64) {
        self.multipliers[node] = z;
    }

    pub fn opportunity(&self, node: usize) -> f64 {
        self.l[node]
    }

    /// `^τẐ` on every node of the subtree of `tau` (NaN elsewhere).
    pub fn restarted(&self, tree: &EventTree, tau: usize) -> Vec<f64> {
        let mut out = vec![f64::NAN; tree.len()];
        out[tau] = 1.0;
        for n in tree.subtree(tau) {
            if n != tau {
                let p = tree.parent(n).expect("non-root subtree node has a parent");
                out[n] = out[p] * self.multipliers[n];
            }
        }
        out
    }

    /// `(leaf, ^τẐ_T)` for the leaves below `tau`.
    pub fn terminal(&self, tree: &EventTree, tau: usize) -> Vec<(usize, f64)> {
        let z = self.restarted(tree, tau);
        tree.leaves_under(tau).into_iter().map(|l| (l, z[l])).collect()
    }

    /// Conditional moments `(E[Ẑ_T|τ], E[Ẑ_T²|τ])`.
    pub fn moments(&self, tree: &EventTree, tau: usize) -> (f64, f64) {
        let pt = tree.path_prob(tau);
        self.terminal(tree, tau).iter().fold((0.0, 0.0), |(m1, m2), &(l, z)| {
            let w = tree.path_prob(l) / pt;
            (m1 + w * z, m2 + w * z * z)
        })
    }

    /// Whether every multiplier is nonnegative (an absolutely continuous
    /// martingale measure), and strictly positive (an equivalent one).
    pub fn positivity(&self) -> (bool, bool) {
        let nonneg = self.multipliers.iter().all(|&z| z >= 0.0);
        let pos = self.multipliers.iter().all(|&z| z > 0.0);
        (nonneg, pos)
    }
}

pub fn build_vo_spd(
    tree: &EventTree,
    prices: &AdaptedProcess,
    opp: &OpportunityLayer,
) -> Result<StatePriceDensityFamily> {
    tree.ensure_valid()?;
    let vanishing = opp.vanishing_nodes();
    if !vanishing.is_empty() {
        return Err(Error::LopFailure { nodes: vanishing.iter().map(|&n| tree.id_of(n)).collect() });
    }
    let mut multipliers = vec![1.0; tree.len()];
    for n in 0..tree.len() {
        if tree.is_leaf(n) {
            continue;
        }
        for (c, _, ds) in increments(tree, prices, n)? {
            multipliers[c] = (1.0 - opp.a(n).dot(&ds)) * opp.l(c) / opp.l(n);
        }
    }
    let l = (0..tree.len()).map(|n| opp.l(n)).collect();
    Ok(StatePriceDensityFamily { multipliers, l })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AxiomResult {
    pub pass: bool,
    pub worst_violation: f64,
    /// External id of the node where the worst violation occurs.
    pub location: Option<u64>,
}

struct Tracker {
    tol: f64,
    worst: f64,
    location: Option<u64>,
}

impl Tracker {
    fn new(tol: f64) -> Self {
        Self { tol, worst: 0.0, location: None }
    }

    fn observe(&mut self, violation: f64, node: u64) {
        if !(violation <= self.worst) {
            self.worst = violation;
            self.location = Some(node);
        }
    }

    fn finish(self) -> AxiomResult {
        AxiomResult { pass: self.worst <= self.tol, worst_violation: self.worst, location: self.location }
    }
}

/// Per-axiom audit of a state price density family.
#[derive(Debug, Clone, Serialize)]
pub struct SpdAudit {
    /// `E[^τZ_T | τ] = 1` at every node.
    pub riskless_pricing: AxiomResult,
    /// `^σZ_T = ^σZ_τ ^τZ_T` for nested nodes.
    pub time_consistency: AxiomResult,
    /// Finite conditional second moments; the worst value is `|E[Z²|τ]·L_τ − 1|`.
    pub square_integrability: AxiomResult,
    /// Discrete shadow of bounded second moments before predictable times:
    /// the largest `1/L` on any path. Reported, never failed on a finite tree.
    pub bounded_before_predictable: AxiomResult,
    /// `E[z S_child | node] = S_node` at every node.
    pub compatibility: AxiomResult,
    pub nonnegative: bool,
    pub strictly_positive: bool,
}

impl SpdAudit {
    pub fn all_pass(&self) -> bool {
        self.riskless_pricing.pass
            && self.time_consistency.pass
            && self.square_integrability.pass
            && self.compatibility.pass
    }

    /// Axiom name to result, in a stable order.
    pub fn axioms(&self) -> BTreeMap<&'static str, AxiomResult> {
        BTreeMap::from([
            ("riskless_pricing", self.riskless_pricing),
            ("time_consistency", self.time_consistency),
            ("square_integrability", self.square_integrability),
            ("bounded_before_predictable", self.bounded_before_predictable),
            ("compatibility", self.compatibility),
        ])
    }
}

/// Audits the family against the state price density axioms at tolerance
/// `tol` (absolute, on unit-scale quantities).
pub fn audit_spd(
    tree: &EventTree,
    prices: &AdaptedProcess,
    family: &StatePriceDensityFamily,
    tol: f64,
) -> Result<SpdAudit> {
    tree.ensure_valid()?;
    let mut riskless = Tracker::new(tol);
    let mut second = Tracker::new(tol);
    let mut consistency = Tracker::new(tol);
    let mut compat = Tracker::new(tol);

    for n in 0..tree.len() {
        let (m1, m2) = family.moments(tree, n);
        riskless.observe((m1 - 1.0).abs(), tree.id_of(n));
        second.observe(if m2.is_finite() { (m2 * family.l[n] - 1.0).abs() } else { f64::INFINITY }, tree.id_of(n));
    }

    // Time consistency: ^σZ_T = ^σZ_τ · ^τZ_T on the leaves below τ, for
    // every σ and every τ in its subtree.
    let terminal: Vec<BTreeMap<usize, f64>> =
        (0..tree.len()).map(|t| family.terminal(tree, t).into_iter().collect()).collect();
    for sigma in 0..tree.len() {
        let z_sigma = family.restarted(tree, sigma);
        for tau in tree.subtree(sigma) {
            for (leaf, z_tau) in &terminal[tau] {
                let dev = (terminal[sigma][leaf] - z_sigma[tau] * z_tau).abs();
                consistency.observe(dev, tree.id_of(tau));
            }
        }
    }

    for n in 0..tree.len() {
        if tree.is_leaf(n) {
            continue;
        }
        let s = prices.value(n)?;
        let mut acc = vec![0.0; s.len()];
        for (c, p, _) in increments(tree, prices, n)? {
            let sc = prices.value(c)?;
            for (a, x) in acc.iter_mut().zip(sc) {
                *a += p * family.multipliers[c] * x;
            }
        }
        let dev = acc.iter().zip(s).map(|(a, x)| (a - x).abs()).fold(0.0, f64::max);
        compat.observe(dev, tree.id_of(n));
    }

    let mut bounded = Tracker::new(f64::INFINITY);
    for &leaf in tree.leaves() {
        let sup = tree.path_to(leaf).iter().map(|&n| 1.0 / family.l[n]).fold(0.0, f64::max);
        bounded.observe(sup, tree.id_of(leaf));
    }
    let mut bounded = bounded.finish();
    bounded.pass = bounded.worst_violation.is_finite();

    let (nonnegative, strictly_positive) = family.positivity();
    Ok(SpdAudit {
        riskless_pricing: riskless.finish(),
        time_consistency: consistency.finish(),
        square_integrability: second.finish(),
        bounded_before_predictable: bounded,
        compatibility: compat.finish(),
        nonnegative,
        strictly_positive,
    })
}

/// `E[^τẐ_T H | τ]`.
pub fn price_claim(tree: &EventTree, family: &StatePriceDensityFamily, payoff: &AdaptedProcess, tau: usize) -> Result<f64> {
    let pt = tree.path_prob(tau);
    family
        .terminal(tree, tau)
        .iter()
        .map(|&(l, z)| Ok(tree.path_prob(l) / pt * z * payoff.scalar_at(l)?))
        .sum()
}

/// [`price_claim`] for a claim specification.
pub fn price_claim_spec(
    tree: &EventTree,
    prices: &AdaptedProcess,
    family: &StatePriceDensityFamily,
    claim: &ClaimSpec,
    tau: usize,
) -> Result<f64> {
    price_claim(tree, family, &claim.expand(tree, prices)?, tau)
}

#[derive(Debug, Clone, Serialize)]
pub struct LopVerdict {
    pub holds: bool,
    /// External ids of nodes where the opportunity process vanishes.
    pub violating_nodes: Vec<u64>,
    pub min_l: f64,
    /// External id of the node attaining `min_l`.
    pub min_l_node: u64,
}

/// The law of one price holds on a finite tree iff the opportunity process
/// is strictly positive at every node.
pub fn lop_verdict(tree: &EventTree, prices: &AdaptedProcess) -> Result<LopVerdict> {
    let opp = compute_opportunity(tree, prices)?;
    let (node, min_l) = opp.min_l();
    let violating: Vec<u64> = opp.vanishing_nodes().into_iter().map(|n| tree.id_of(n)).collect();
    Ok(LopVerdict { holds: violating.is_empty(), violating_nodes: violating, min_l, min_l_node: tree.id_of(node) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hedging::compute_hedge;
    use crate::tree::{one_step, MarketBuilder};

    fn trinomial() -> (EventTree, AdaptedProcess, OpportunityLayer) {
        let (tree, s) = one_step(1.0, &[2.0, 1.0, 0.5]);
        let opp = compute_opportunity(&tree, &s).unwrap();
        (tree, s, opp)
    }

    #[test]
    fn trinomial_density() {
        let (tree, s, opp) = trinomial();
        let fam = build_vo_spd(&tree, &s, &opp).unwrap();
        let z: Vec<f64> = fam.terminal(&tree, 0).into_iter().map(|(_, z)| z).collect();
        let expect = [9.0 / 14.0, 15.0 / 14.0, 9.0 / 7.0];
        for (a, b) in z.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let (m1, m2) = fam.moments(&tree, 0);
        assert!((m1 - 1.0).abs() < 1e-15);
        assert!((m2 - 15.0 / 14.0).abs() < 1e-15);
        // E[Ẑ S_1] = S_0.
        let hand: f64 = (9.0 / 14.0 * 2.0 + 15.0 / 14.0 + 9.0 / 7.0 * 0.5) / 3.0;
        assert!((hand - 1.0).abs() < 1e-15);
        assert!(audit_spd(&tree, &s, &fam, 1e-10).unwrap().all_pass());
    }

    #[test]
    fn binomial_density() {
        let (tree, s) = one_step(1.0, &[2.0, 0.5]);
        let opp = compute_opportunity(&tree, &s).unwrap();
        let fam = build_vo_spd(&tree, &s, &opp).unwrap();
        let z: Vec<f64> = fam.terminal(&tree, 0).into_iter().map(|(_, z)| z).collect();
        assert!((z[0] - 2.0 / 3.0).abs() < 1e-15 && (z[1] - 4.0 / 3.0).abs() < 1e-15);
        let (_, m2) = fam.moments(&tree, 0);
        assert!((m2 - 10.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn martingale_density_is_one() {
        let (tree, s) = one_step(1.0, &[1.5, 0.5]);
        let opp = compute_opportunity(&tree, &s).unwrap();
        let fam = build_vo_spd(&tree, &s, &opp).unwrap();
        assert!(fam.restarted(&tree, 0).iter().all(|&z| (z - 1.0).abs() < 1e-15));
    }

    #[test]
    fn injected_fault_breaks_compatibility() {
        let (tree, s, opp) = trinomial();
        let mut fam = build_vo_spd(&tree, &s, &opp).unwrap();
        let z = fam.multiplier(1);
        fam.set_multiplier(1, z + 0.01);
        let audit = audit_spd(&tree, &s, &fam, 1e-10).unwrap();
        assert!(!audit.compatibility.pass);
        // (1/3)·0.01·S = 0.01·2/3 on the first child.
        assert!((audit.compatibility.worst_violation - 0.02 / 3.0).abs() < 1e-12);
        assert_eq!(audit.compatibility.location, Some(0));
        assert!(!audit.riskless_pricing.pass);
    }

    #[test]
    fn prices_match_mean_value() {
        let (tree, s, opp) = trinomial();
        let fam = build_vo_spd(&tree, &s, &opp).unwrap();
        let call = ClaimSpec::Call { asset: 0, strike: 1.0 };
        let p = price_claim_spec(&tree, &s, &fam, &call, 0).unwrap();
        assert!((p - 3.0 / 14.0).abs() < 1e-15);
        let sol = compute_hedge(&tree, &s, &opp, &call).unwrap();
        assert!((p - sol.v(0)).abs() < 1e-15);
        let one = price_claim_spec(&tree, &s, &fam, &ClaimSpec::constant(&tree, 1.0), 0).unwrap();
        assert!((one - 1.0).abs() < 1e-15);
    }

    #[test]
    fn verdicts() {
        let (tree, s, _) = trinomial();
        let v = lop_verdict(&tree, &s).unwrap();
        assert!(v.holds && (v.min_l - 14.0 / 15.0).abs() < 1e-15);

        let (tree, s) = one_step(1.0, &[1.5, 0.5]);
        let v = lop_verdict(&tree, &s).unwrap();
        assert!(v.holds && v.min_l == 1.0);

        // Both children move the price up by the same amount: one unit of
        // wealth is replicated from zero.
        let mut b = MarketBuilder::new(vec![1.0]);
        let u = b.child(0, 0.5, vec![2.0]);
        let d = b.child(0, 0.5, vec![0.5]);
        b.child(u, 0.5, vec![2.5]);
        b.child(u, 0.5, vec![2.5]);
        b.child(d, 0.5, vec![1.0]);
        b.child(d, 0.5, vec![0.0]);
        let (tree, s) = b.build().unwrap();
        let v = lop_verdict(&tree, &s).unwrap();
        assert!(!v.holds);
        // Free money at `u` propagates to the root: short 2 units there, then
        // buy 6 at `u`, and wealth 1 is replicated from zero on every path.
        assert_eq!(v.violating_nodes, vec![0, u]);
        let opp = compute_opportunity(&tree, &s).unwrap();
        assert!(matches!(build_vo_spd(&tree, &s, &opp), Err(Error::LopFailure { .. })));
    }
}
