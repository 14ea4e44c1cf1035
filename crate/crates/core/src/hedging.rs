//! Backward dynamic programming for quadratic hedging on an event tree.
//!
//! With `ΔS` the one-step price increment to a child and `L⁺` the child's
//! opportunity value, each non-terminal node carries
//!
//! ```text
//! A = E[L⁺ ΔS ΔSᵀ],  b = E[L⁺ ΔS],  a = A⁺ b,  L = E[L⁺ (1 − aᵀΔS)²]
//! V = E[L⁺ (1 − aᵀΔS) V⁺] / L
//! c = E[L⁺ ΔS (V⁺ − V)],  ξ = A⁺ c,  ε² = E[ε²⁺] + E[L⁺ (V⁺ − V − ξᵀΔS)²]
//! ```
//!
//! starting from `L = 1`, `V = H`, `ε² = 0` on the leaves. `L` and `ε²` are
//! accumulated as weighted squares, which equals `E[L⁺] − bᵀA⁺b` and
//! `E[ε²⁺] + E[L⁺(V⁺−V)²] − cᵀA⁺c` at the optimum without the cancellation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::SymPinv;
use crate::tree::{check_stopping_time, AdaptedProcess, ClaimSpec, EventTree, StopMap, StoppingTime};

/// Opportunity values at or below this are treated as zero.
pub const L_FLOOR: f64 = 1e-12;

/// Squared hedging errors down to this negative value are clamped to zero.
pub const EPS2_FLOOR: f64 = -1e-12;

/// One-step increments out of `node`: `(child, transition prob, ΔS)`.
pub(crate) fn increments(
    tree: &EventTree,
    prices: &AdaptedProcess,
    node: usize,
) -> Result<Vec<(usize, f64, DVector<f64>)>> {
    let s = prices.value(node)?;
    tree.children(node)
        .iter()
        .map(|&c| {
            let sc = prices.value(c)?;
            let ds = DVector::from_iterator(s.len(), sc.iter().zip(s).map(|(x, y)| x - y));
            Ok((c, tree.node(c).prob, ds))
        })
        .collect()
}

fn check_market(tree: &EventTree, prices: &AdaptedProcess) -> Result<()> {
    tree.ensure_valid()?;
    prices.ensure_layers(tree, 0..=tree.horizon())
}

#[derive(Debug, Clone)]
pub struct NodeOpportunity {
    /// Opportunity process value.
    pub l: f64,
    /// Adjustment vector (zero at leaves).
    pub a: DVector<f64>,
    /// `E[L⁺ ΔS ΔSᵀ]`.
    pub a_mat: DMatrix<f64>,
    /// `E[L⁺ ΔS]`.
    pub b: DVector<f64>,
    /// Numerical rank of `a_mat`.
    pub rank: usize,
    pinv: Option<SymPinv>,
}

/// Opportunity and adjustment processes on every node.
#[derive(Debug, Clone)]
pub struct OpportunityLayer {
    dim: usize,
    nodes: Vec<NodeOpportunity>,
}

impl OpportunityLayer {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node(&self, ix: usize) -> &NodeOpportunity {
        &self.nodes[ix]
    }

    pub fn l(&self, ix: usize) -> f64 {
        self.nodes[ix].l
    }

    pub fn a(&self, ix: usize) -> &DVector<f64> {
        &self.nodes[ix].a
    }

    /// The opportunity process as a scalar adapted process.
    pub fn l_process(&self) -> AdaptedProcess {
        AdaptedProcess::scalar(&self.nodes.iter().map(|n| n.l).collect::<Vec<_>>())
    }

    /// `(node, L)` with the smallest `L`.
    pub fn min_l(&self) -> (usize, f64) {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (i, n.l))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
    }

    /// Nodes whose opportunity value does not exceed [`L_FLOOR`].
    pub fn vanishing_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].l <= L_FLOOR).collect()
    }

    fn pinv(&self, ix: usize) -> Option<&SymPinv> {
        self.nodes[ix].pinv.as_ref()
    }
}

struct StepMoments {
    a_mat: DMatrix<f64>,
    b: DVector<f64>,
}

fn step_moments(steps: &[(usize, f64, DVector<f64>)], weights: impl Fn(usize) -> f64, dim: usize) -> StepMoments {
    let mut a_mat = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    for (c, p, ds) in steps {
        let w = p * weights(*c);
        a_mat.ger(w, ds, ds, 1.0);
        b.axpy(w, ds, 1.0);
    }
    StepMoments { a_mat, b }
}

/// Runs the opportunity recursion backward from `L_T = 1`.
pub fn compute_opportunity(tree: &EventTree, prices: &AdaptedProcess) -> Result<OpportunityLayer> {
    check_market(tree, prices)?;
    let dim = prices.dim();
    let leaf = NodeOpportunity {
        l: 1.0,
        a: DVector::zeros(dim),
        a_mat: DMatrix::zeros(dim, dim),
        b: DVector::zeros(dim),
        rank: 0,
        pinv: None,
    };
    let mut nodes = vec![leaf; tree.len()];
    for t in (0..tree.horizon()).rev() {
        let computed: Vec<Result<(usize, NodeOpportunity)>> = tree
            .layer(t)
            .par_iter()
            .map(|&n| {
                let steps = increments(tree, prices, n)?;
                let StepMoments { a_mat, b } = step_moments(&steps, |c| nodes[c].l, dim);
                let pinv = SymPinv::new(&a_mat);
                let a = pinv.solve(&b);
                let l: f64 = steps
                    .iter()
                    .map(|(c, p, ds)| {
                        let r = 1.0 - a.dot(ds);
                        p * nodes[*c].l * r * r
                    })
                    .sum();
                if !l.is_finite() {
                    return Err(Error::Numerical(format!("non-finite opportunity value at node {}", tree.id_of(n))));
                }
                let rank = pinv.rank();
                Ok((n, NodeOpportunity { l, a, a_mat, b, rank, pinv: Some(pinv) }))
            })
            .collect();
        for r in computed {
            let (n, rec) = r?;
            nodes[n] = rec;
        }
    }
    Ok(OpportunityLayer { dim, nodes })
}

/// Mean value process, pure hedge and squared hedging error for one claim.
#[derive(Debug, Clone)]
pub struct HedgingSolution {
    /// Claim payoff on the leaves.
    pub claim: AdaptedProcess,
    pub v: Vec<f64>,
    pub xi: Vec<DVector<f64>>,
    pub eps2: Vec<f64>,
}

impl HedgingSolution {
    pub fn v(&self, ix: usize) -> f64 {
        self.v[ix]
    }

    pub fn eps2(&self, ix: usize) -> f64 {
        self.eps2[ix]
    }
}

pub fn compute_hedge(
    tree: &EventTree,
    prices: &AdaptedProcess,
    opp: &OpportunityLayer,
    claim: &ClaimSpec,
) -> Result<HedgingSolution> {
    let payoff = claim.expand(tree, prices)?;
    hedge_payoff(tree, prices, opp, &payoff)
}

/// [`compute_hedge`] for an explicit leaf payoff.
pub fn hedge_payoff(
    tree: &EventTree,
    prices: &AdaptedProcess,
    opp: &OpportunityLayer,
    payoff: &AdaptedProcess,
) -> Result<HedgingSolution> {
    check_market(tree, prices)?;
    payoff.ensure_layers(tree, [tree.horizon()])?;
    let vanishing = opp.vanishing_nodes();
    if !vanishing.is_empty() {
        return Err(Error::LopFailure { nodes: vanishing.iter().map(|&n| tree.id_of(n)).collect() });
    }
    let dim = prices.dim();
    let mut v = vec![0.0; tree.len()];
    let mut xi = vec![DVector::zeros(dim); tree.len()];
    let mut eps2 = vec![0.0; tree.len()];
    for &leaf in tree.leaves() {
        v[leaf] = payoff.scalar_at(leaf)?;
    }
    for t in (0..tree.horizon()).rev() {
        let computed: Vec<Result<(usize, f64, DVector<f64>, f64)>> = tree
            .layer(t)
            .par_iter()
            .map(|&n| {
                let steps = increments(tree, prices, n)?;
                let rec = opp.node(n);
                let mut num = 0.0;
                for (c, p, ds) in &steps {
                    num += p * opp.l(*c) * (1.0 - rec.a.dot(ds)) * v[*c];
                }
                let vn = num / rec.l;
                let mut cvec = DVector::zeros(dim);
                for (c, p, ds) in &steps {
                    cvec.axpy(p * opp.l(*c) * (v[*c] - vn), ds, 1.0);
                }
                let xin = match opp.pinv(n) {
                    Some(pinv) => pinv.solve(&cvec),
                    None => DVector::zeros(dim),
                };
                let mut e = 0.0;
                for (c, p, ds) in &steps {
                    let r = v[*c] - vn - xin.dot(ds);
                    e += p * (eps2[*c] + opp.l(*c) * r * r);
                }
                if !(vn.is_finite() && e.is_finite()) {
                    return Err(Error::Numerical(format!("non-finite hedge at node {}", tree.id_of(n))));
                }
                if e < EPS2_FLOOR {
                    return Err(Error::Numerical(format!("negative squared hedging error {e} at node {}", tree.id_of(n))));
                }
                Ok((n, vn, xin, e.max(0.0)))
            })
            .collect();
        for r in computed {
            let (n, vn, xin, e) = r?;
            v[n] = vn;
            xi[n] = xin;
            eps2[n] = e;
        }
    }
    Ok(HedgingSolution { claim: payoff.clone(), v, xi, eps2 })
}

/// Outcome of the quadratic-hedging decomposition at one stop node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StopDecomposition {
    /// Initial wealth at the stop node.
    pub v: f64,
    /// `E[(X_T − H)² | stop]`, evaluated from the simulated wealth.
    pub mean_square_error: f64,
    /// `L (v − V)² + ε²`.
    pub predicted: f64,
}

impl StopDecomposition {
    pub fn residual(&self) -> f64 {
        self.mean_square_error - self.predicted
    }
}

/// Feedback strategy and wealth realized on the tree.
#[derive(Debug, Clone)]
pub struct FeedbackRun {
    /// Wealth at each node from the stopping time on.
    pub wealth: Vec<Option<f64>>,
    /// Holdings over the step out of each node; zero before the stopping
    /// time and at the leaves.
    pub strategy: Vec<DVector<f64>>,
    pub stops: std::collections::BTreeMap<usize, StopDecomposition>,
    /// `X_T − H` on the leaves.
    pub residual: Vec<Option<f64>>,
}

impl FeedbackRun {
    /// Largest `|E[(X_T−H)²|τ] − (L(v−V)² + ε²)|` over stop nodes.
    pub fn max_decomposition_residual(&self) -> f64 {
        self.stops.values().map(|d| d.residual().abs()).fold(0.0, f64::max)
    }
}

/// Runs `φ = ξ + a (V − X)` from wealth `v` at each stop node.
pub fn simulate_feedback(
    tree: &EventTree,
    prices: &AdaptedProcess,
    opp: &OpportunityLayer,
    sol: &HedgingSolution,
    v: &StopMap,
    tau: &StoppingTime,
) -> Result<FeedbackRun> {
    check_market(tree, prices)?;
    if !check_stopping_time(tree, tau) {
        return Err(Error::InvalidStoppingTime);
    }
    let dim = prices.dim();
    let owners = tau.owners(tree);
    let mut wealth: Vec<Option<f64>> = vec![None; tree.len()];
    let mut strategy = vec![DVector::zeros(dim); tree.len()];
    for &s in &tau.stops {
        wealth[s] = Some(*v.get(&s).ok_or(Error::MissingStopValue { node: tree.id_of(s) })?);
    }
    // Index order is time order, so wealth at a node is set before its
    // children are visited.
    for n in 0..tree.len() {
        if owners[n].is_none() || tree.is_leaf(n) {
            continue;
        }
        let x = wealth[n].expect("wealth set from the stopping time on");
        let phi = &sol.xi[n] + opp.a(n) * (sol.v[n] - x);
        for (c, _, ds) in increments(tree, prices, n)? {
            wealth[c] = Some(x + phi.dot(&ds));
        }
        strategy[n] = phi;
    }
    let mut residual = vec![None; tree.len()];
    for &leaf in tree.leaves() {
        let x = wealth[leaf].expect("every leaf lies after the stopping time");
        residual[leaf] = Some(x - sol.claim.scalar_at(leaf)?);
    }
    let mut stops = std::collections::BTreeMap::new();
    for &s in &tau.stops {
        let ps = tree.path_prob(s);
        let mse: f64 = tree
            .leaves_under(s)
            .iter()
            .map(|&l| {
                let r = residual[l].unwrap();
                tree.path_prob(l) / ps * r * r
            })
            .sum();
        let vs = v[&s];
        let predicted = opp.l(s) * (vs - sol.v[s]).powi(2) + sol.eps2[s];
        stops.insert(s, StopDecomposition { v: vs, mean_square_error: mse, predicted });
    }
    Ok(FeedbackRun { wealth, strategy, stops, residual })
}

/// Largest `|E[R (1 + ϑ·S_T) | τ]|` over `ϑ = 0` and all one-step unit bump
/// strategies after `τ`, where `R` is the residual of the optimal hedge
/// started from `V_τ(H)`.
pub fn verify_orthogonality(
    tree: &EventTree,
    prices: &AdaptedProcess,
    opp: &OpportunityLayer,
    sol: &HedgingSolution,
    tau: &StoppingTime,
) -> Result<f64> {
    let v0: StopMap = tau.stops.iter().map(|&s| (s, sol.v[s])).collect();
    let run = simulate_feedback(tree, prices, opp, sol, &v0, tau)?;
    // Probability-weighted residual mass under each node.
    let mut mass = vec![0.0; tree.len()];
    for &leaf in tree.leaves() {
        mass[leaf] = tree.path_prob(leaf) * run.residual[leaf].unwrap();
    }
    for n in (0..tree.len()).rev() {
        if let Some(p) = tree.parent(n) {
            let m = mass[n];
            mass[p] += m;
        }
    }
    let owners = tau.owners(tree);
    let mut worst = 0.0_f64;
    for &s in &tau.stops {
        worst = worst.max((mass[s] / tree.path_prob(s)).abs());
    }
    for n in 0..tree.len() {
        let Some(s) = owners[n] else { continue };
        if tree.is_leaf(n) {
            continue;
        }
        let ps = tree.path_prob(s);
        let steps = increments(tree, prices, n)?;
        for i in 0..prices.dim() {
            let bump: f64 = steps.iter().map(|(c, _, ds)| ds[i] * mass[*c]).sum();
            worst = worst.max(((mass[s] + bump) / ps).abs());
        }
    }
    Ok(worst)
}

/// Result of checking a candidate opportunity process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CandidateCheck {
    pub is_valid: bool,
    pub is_maximal: bool,
    /// Whether the true opportunity process dominates the candidate.
    pub dominated: bool,
    pub worst_identity_residual: f64,
}

/// Checks positivity, `L̂_T = 1` and the one-step recursion identity built
/// from `L̂` itself, then compares with the computed opportunity process.
pub fn verify_candidate_opportunity(
    tree: &EventTree,
    prices: &AdaptedProcess,
    candidate: &AdaptedProcess,
) -> Result<CandidateCheck> {
    const TOL: f64 = 1e-9;
    check_market(tree, prices)?;
    candidate.ensure_layers(tree, 0..=tree.horizon())?;
    let lhat = |n: usize| candidate.get(n).map_or(f64::NAN, |v| v[0]);
    let mut valid = (0..tree.len()).all(|n| lhat(n) > 0.0);
    let mut worst = 0.0_f64;
    for &leaf in tree.leaves() {
        let r = (lhat(leaf) - 1.0).abs();
        worst = worst.max(r);
        valid &= r <= TOL;
    }
    let dim = prices.dim();
    for n in 0..tree.len() {
        if tree.is_leaf(n) {
            continue;
        }
        let steps = increments(tree, prices, n)?;
        let StepMoments { a_mat, b } = step_moments(&steps, lhat, dim);
        let mean: f64 = steps.iter().map(|(c, p, _)| p * lhat(*c)).sum();
        let implied = mean - SymPinv::new(&a_mat).quad_form(&b);
        let r = (lhat(n) - implied).abs();
        worst = worst.max(r);
        valid &= r <= TOL * lhat(n).abs().max(1.0);
    }
    let opp = compute_opportunity(tree, prices)?;
    let is_maximal = (0..tree.len()).all(|n| (lhat(n) - opp.l(n)).abs() <= TOL);
    let dominated = (0..tree.len()).all(|n| opp.l(n) >= lhat(n) - TOL);
    Ok(CandidateCheck { is_valid: valid, is_maximal, dominated, worst_identity_residual: worst })
}
