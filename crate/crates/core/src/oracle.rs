//! Brute-force ground truth: the conditional L² projection solved globally
//! over every one-step strategy unknown in a subtree, with no recursion.
//!
//! Column `(m, i)` of the design matrix is the terminal gain of holding one
//! unit of asset `i` over the single step out of node `m`. Rows are leaves,
//! weighted by their conditional probability. The normal equations are
//! solved with the same spectral pseudoinverse as the engine, so degenerate
//! directions are tie-broken to minimum norm; only wealth and errors are
//! comparable between the two, never raw strategy vectors.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hedging::increments;
use crate::linalg::SymPinv;
use crate::tree::{check_stopping_time, AdaptedProcess, EventTree, StopMap, StoppingTime};

/// Refuse problems with more unknowns than this.
const REFINE_STEPS: usize = 3;

pub const MAX_UNKNOWNS: usize = 20_000;

#[derive(Debug, Clone)]
pub struct ProjectionResult {
    /// Holdings over the step out of each non-terminal node after the
    /// stopping time.
    pub strategy: Vec<Option<DVector<f64>>>,
    /// Minimal `E[(v + ϑ·S_T − H)² | stop]` per stop node.
    pub errors: StopMap,
    /// `v + ϑ·S_T − H` on the leaves.
    pub residual: Vec<Option<f64>>,
    /// Largest `|Dᵀ W r|` entry, the normal-equation defect.
    pub normal_defect: f64,
}

struct SubtreeFit {
    /// Holdings per non-terminal subtree node.
    holdings: BTreeMap<usize, DVector<f64>>,
    /// Coefficient of the free constant column, if requested.
    constant: Option<f64>,
    /// Fitted minus target, per leaf.
    residual: BTreeMap<usize, f64>,
    error: f64,
    normal_defect: f64,
}

fn count_unknowns(tree: &EventTree, root: usize, dim: usize) -> usize {
    tree.subtree(root).iter().filter(|&&n| !tree.is_leaf(n)).count() * dim
}

/// Least-squares fit of `target` on the leaves below `root` by gains of
/// strategies trading from `root` on, plus an optional constant.
fn fit_subtree(
    tree: &EventTree,
    prices: &AdaptedProcess,
    root: usize,
    target: impl Fn(usize) -> Result<f64>,
    free_constant: bool,
) -> Result<SubtreeFit> {
    let dim = prices.dim();
    let inner: Vec<usize> = tree.subtree(root).into_iter().filter(|&n| !tree.is_leaf(n)).collect();
    let col: BTreeMap<usize, usize> = inner.iter().enumerate().map(|(k, &n)| (n, k * dim)).collect();
    let n_cols = inner.len() * dim + usize::from(free_constant);
    let leaves = tree.leaves_under(root);
    let p_root = tree.path_prob(root);

    // Increment into each subtree node from its parent.
    let mut step_into: BTreeMap<usize, DVector<f64>> = BTreeMap::new();
    for &m in &inner {
        for (c, _, ds) in increments(tree, prices, m)? {
            step_into.insert(c, ds);
        }
    }

    let mut design = DMatrix::zeros(leaves.len(), n_cols);
    let mut y = DVector::zeros(leaves.len());
    let mut sqrt_w = DVector::zeros(leaves.len());
    for (r, &leaf) in leaves.iter().enumerate() {
        let mut cur = leaf;
        while cur != root {
            let parent = tree.parent(cur).expect("leaf below root has ancestors up to root");
            let c0 = col[&parent];
            for i in 0..dim {
                design[(r, c0 + i)] = step_into[&cur][i];
            }
            cur = parent;
        }
        if free_constant {
            design[(r, n_cols - 1)] = 1.0;
        }
        y[r] = target(leaf)?;
        sqrt_w[r] = (tree.path_prob(leaf) / p_root).sqrt();
    }

    let mut weighted = design.clone();
    for (r, w) in sqrt_w.iter().enumerate() {
        weighted.row_mut(r).scale_mut(*w);
    }
    let wy = y.component_mul(&sqrt_w);
    let gram = weighted.tr_mul(&weighted);
    let rhs = weighted.tr_mul(&wy);
    let pinv = SymPinv::new(&gram);
    let mut coef = pinv.solve(&rhs);
    // The Gram matrix squares the condition number; refining against the
    // residual of the unsquared system recovers the lost digits.
    for _ in 0..REFINE_STEPS {
        let r = &wy - &weighted * &coef;
        coef += pinv.solve(&weighted.tr_mul(&r));
    }

    let fitted = &design * &coef;
    let resid = &fitted - &y;
    let error: f64 = resid.iter().zip(sqrt_w.iter()).map(|(r, w)| (w * r).powi(2)).sum();
    let wr = resid.component_mul(&sqrt_w);
    let normal_defect = weighted.tr_mul(&wr).amax();

    let holdings = inner
        .iter()
        .map(|&m| (m, DVector::from_iterator(dim, (0..dim).map(|i| coef[col[&m] + i]))))
        .collect();
    Ok(SubtreeFit {
        holdings,
        constant: free_constant.then(|| coef[n_cols - 1]),
        residual: leaves.iter().copied().zip(resid.iter().copied()).collect(),
        error,
        normal_defect,
    })
}

/// Minimizes `E[(v + ϑ·S_T − H)² | τ]` over all strategies trading after
/// `τ`, independently below each stop node.
pub fn project_brute_force(
    tree: &EventTree,
    prices: &AdaptedProcess,
    payoff: &AdaptedProcess,
    v: &StopMap,
    tau: &StoppingTime,
) -> Result<ProjectionResult> {
    tree.ensure_valid()?;
    prices.ensure_layers(tree, 0..=tree.horizon())?;
    payoff.ensure_layers(tree, [tree.horizon()])?;
    if !check_stopping_time(tree, tau) {
        return Err(Error::InvalidStoppingTime);
    }
    let unknowns: usize = tau.stops.iter().map(|&s| count_unknowns(tree, s, prices.dim())).sum();
    if unknowns > MAX_UNKNOWNS {
        return Err(Error::OracleTooLarge { unknowns, limit: MAX_UNKNOWNS });
    }
    let mut strategy = vec![None; tree.len()];
    let mut residual = vec![None; tree.len()];
    let mut errors = StopMap::new();
    let mut normal_defect = 0.0_f64;
    for &s in &tau.stops {
        let vs = *v.get(&s).ok_or(Error::MissingStopValue { node: tree.id_of(s) })?;
        let fit = fit_subtree(tree, prices, s, |l| Ok(payoff.scalar_at(l)? - vs), false)?;
        for (m, h) in fit.holdings {
            strategy[m] = Some(h);
        }
        for (l, r) in fit.residual {
            residual[l] = Some(r);
        }
        errors.insert(s, fit.error);
        normal_defect = normal_defect.max(fit.normal_defect);
    }
    Ok(ProjectionResult { strategy, errors, residual, normal_defect })
}

/// `min_ϑ E[(1 − ϑ·S_T)² | node]` over strategies trading from `node` on.
pub fn oracle_opportunity(tree: &EventTree, prices: &AdaptedProcess, node: usize) -> Result<f64> {
    let one = AdaptedProcess::scalar(&vec![1.0; tree.len()]);
    let tau = subtree_stop(tree, node);
    let res = project_brute_force(tree, prices, &one, &tau.broadcast(0.0), &tau)?;
    Ok(res.errors[&node])
}

/// `(V, ε²)` at `node`: the minimizing initial wealth and the minimal error
/// of `E[(v + ϑ·S_T − H)² | node]` jointly over `v` and `ϑ`.
pub fn oracle_mean_value(
    tree: &EventTree,
    prices: &AdaptedProcess,
    payoff: &AdaptedProcess,
    node: usize,
) -> Result<(f64, f64)> {
    tree.ensure_valid()?;
    prices.ensure_layers(tree, 0..=tree.horizon())?;
    payoff.ensure_layers(tree, [tree.horizon()])?;
    let unknowns = count_unknowns(tree, node, prices.dim()) + 1;
    if unknowns > MAX_UNKNOWNS {
        return Err(Error::OracleTooLarge { unknowns, limit: MAX_UNKNOWNS });
    }
    let fit = fit_subtree(tree, prices, node, |l| payoff.scalar_at(l), true)?;
    Ok((fit.constant.expect("constant column requested"), fit.error))
}

/// Stop set `{node}` extended by the leaves outside its subtree, so the
/// projection below `node` can reuse [`project_brute_force`].
fn subtree_stop(tree: &EventTree, node: usize) -> StoppingTime {
    let mut stops: Vec<usize> = tree.leaves().iter().copied().filter(|&l| !tree.is_ancestor_or_self(node, l)).collect();
    stops.push(node);
    StoppingTime::new(stops)
}
