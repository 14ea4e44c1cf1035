//! Finite event trees: the filtration is the node partition of each layer,
//! conditional expectations are probability-weighted child averages.
//!
//! Nodes are addressed internally by a dense index. Indices are assigned in
//! `(time, external id)` order, so iterating children by ascending index is
//! the same as iterating by ascending external id; every summation in the
//! crate uses that order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

/// Tolerance on transition probability sums and layer probability sums.
pub const PROB_TOL: f64 = 1e-12;

/// Raw node description, typically read from a market file.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: u64,
    pub time: usize,
    pub parent: Option<u64>,
    /// Transition probability from the parent; ignored at the root.
    pub prob: f64,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: u64,
    pub time: usize,
    pub parent: Option<usize>,
    pub prob: f64,
    pub children: Vec<usize>,
}

/// Finite filtered probability space on `{0, .., horizon}`.
#[derive(Debug, Clone)]
pub struct EventTree {
    horizon: usize,
    nodes: Vec<Node>,
    layers: Vec<Vec<usize>>,
    path_probs: Vec<f64>,
    index: HashMap<u64, usize>,
}

impl EventTree {
    /// Indexes the nodes and links children. Only referential problems
    /// (duplicate ids, unknown parents, times beyond the horizon) are errors
    /// here; probabilistic and layering invariants are reported by
    /// [`validate_tree`].
    pub fn new(horizon: usize, mut specs: Vec<NodeSpec>) -> Result<Self> {
        specs.sort_by_key(|s| (s.time, s.id));
        let mut index = HashMap::with_capacity(specs.len());
        for (ix, s) in specs.iter().enumerate() {
            if s.time > horizon {
                return Err(Error::MalformedTree(format!(
                    "node {} has time {} beyond horizon {}",
                    s.id, s.time, horizon
                )));
            }
            if index.insert(s.id, ix).is_some() {
                return Err(Error::MalformedTree(format!("duplicate node id {}", s.id)));
            }
        }
        let mut nodes = Vec::with_capacity(specs.len());
        for s in &specs {
            let parent = match s.parent {
                Some(pid) => Some(*index.get(&pid).ok_or_else(|| {
                    Error::MalformedTree(format!("node {} refers to unknown parent {}", s.id, pid))
                })?),
                None => None,
            };
            nodes.push(Node {
                id: s.id,
                time: s.time,
                parent,
                prob: if parent.is_some() { s.prob } else { 1.0 },
                children: Vec::new(),
            });
        }
        for ix in 0..nodes.len() {
            if let Some(p) = nodes[ix].parent {
                nodes[p].children.push(ix);
            }
        }
        let mut layers = vec![Vec::new(); horizon + 1];
        for (ix, n) in nodes.iter().enumerate() {
            layers[n.time].push(ix);
        }
        // Nodes are time-sorted, so a parent one layer up is always filled in
        // first. Anything else is a layering violation and yields NaN.
        let mut path_probs = vec![f64::NAN; nodes.len()];
        for ix in 0..nodes.len() {
            path_probs[ix] = match nodes[ix].parent {
                None => 1.0,
                Some(p) if p < ix => path_probs[p] * nodes[ix].prob,
                Some(_) => f64::NAN,
            };
        }
        Ok(Self { horizon, nodes, layers, path_probs, index })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, ix: usize) -> &Node {
        &self.nodes[ix]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn children(&self, ix: usize) -> &[usize] {
        &self.nodes[ix].children
    }

    pub fn parent(&self, ix: usize) -> Option<usize> {
        self.nodes[ix].parent
    }

    pub fn time(&self, ix: usize) -> usize {
        self.nodes[ix].time
    }

    pub fn layer(&self, t: usize) -> &[usize] {
        &self.layers[t]
    }

    /// First node of layer 0. Unique on a valid tree.
    pub fn root(&self) -> usize {
        self.layers[0].first().copied().unwrap_or(0)
    }

    pub fn leaves(&self) -> &[usize] {
        &self.layers[self.horizon]
    }

    pub fn is_leaf(&self, ix: usize) -> bool {
        self.nodes[ix].time == self.horizon
    }

    /// Unconditional probability of reaching `ix`.
    pub fn path_prob(&self, ix: usize) -> f64 {
        self.path_probs[ix]
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn id_of(&self, ix: usize) -> u64 {
        self.nodes[ix].id
    }

    /// Nodes of the subtree rooted at `ix` (including `ix`), in index order.
    pub fn subtree(&self, ix: usize) -> Vec<usize> {
        let mut out = vec![ix];
        let mut head = 0;
        while head < out.len() {
            let n = out[head];
            out.extend_from_slice(&self.nodes[n].children);
            head += 1;
        }
        out.sort_unstable();
        out
    }

    pub fn leaves_under(&self, ix: usize) -> Vec<usize> {
        self.subtree(ix).into_iter().filter(|&n| self.is_leaf(n)).collect()
    }

    /// Root-to-node path, root first.
    pub fn path_to(&self, ix: usize) -> Vec<usize> {
        let mut path = vec![ix];
        let mut cur = ix;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    pub fn is_ancestor_or_self(&self, anc: usize, ix: usize) -> bool {
        let mut cur = Some(ix);
        while let Some(c) = cur {
            if c == anc {
                return true;
            }
            if self.nodes[c].time <= self.nodes[anc].time {
                return false;
            }
            cur = self.nodes[c].parent;
        }
        false
    }

    /// Fails with the validation report unless the tree is well formed.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate_tree(self);
        if report.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidTree(report))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    HorizonTooShort,
    RootCount,
    Orphan,
    LayerGap,
    MissingChildren,
    NonpositiveProbability,
    ProbabilityAboveOne,
    ProbabilitySum,
    LayerProbability,
}

#[derive(Debug, Clone, Serialize)]
pub struct Issue {
    pub kind: IssueKind,
    /// External id of the offending node, if the issue is node-local.
    pub node: Option<u64>,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has(&self, kind: IssueKind) -> bool {
        self.issues.iter().any(|i| i.kind == kind)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return write!(f, "pass");
        }
        let msgs: Vec<_> = self.issues.iter().map(|i| i.message.as_str()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

/// Checks every structural invariant of an event tree and lists violations.
pub fn validate_tree(tree: &EventTree) -> ValidationReport {
    let mut issues = Vec::new();
    let mut push = |kind, node: Option<u64>, message: String| {
        issues.push(Issue { kind, node, message })
    };

    if tree.horizon < 1 {
        push(IssueKind::HorizonTooShort, None, "horizon must be at least 1".into());
    }
    let roots: Vec<_> = tree.nodes.iter().filter(|n| n.parent.is_none()).collect();
    if roots.len() != 1 || roots[0].time != 0 {
        push(
            IssueKind::RootCount,
            None,
            format!("expected exactly one root at time 0, found {}", roots.len()),
        );
    }
    for n in &tree.nodes {
        if n.parent.is_none() && n.time != 0 {
            push(IssueKind::Orphan, Some(n.id), format!("node {} at time {} has no parent", n.id, n.time));
        }
        if let Some(p) = n.parent {
            if tree.nodes[p].time + 1 != n.time {
                push(
                    IssueKind::LayerGap,
                    Some(n.id),
                    format!("node {} at time {} has parent at time {}", n.id, n.time, tree.nodes[p].time),
                );
            }
            if !(n.prob > 0.0) {
                push(
                    IssueKind::NonpositiveProbability,
                    Some(n.id),
                    format!("nonpositive transition probability {} at node {}", n.prob, n.id),
                );
            } else if n.prob > 1.0 {
                push(
                    IssueKind::ProbabilityAboveOne,
                    Some(n.id),
                    format!("transition probability {} above one at node {}", n.prob, n.id),
                );
            }
        }
        if n.time < tree.horizon {
            if n.children.is_empty() {
                push(
                    IssueKind::MissingChildren,
                    Some(n.id),
                    format!("non-terminal node {} at time {} has no children", n.id, n.time),
                );
            } else {
                let sum: f64 = n.children.iter().map(|&c| tree.nodes[c].prob).sum();
                if (sum - 1.0).abs() > PROB_TOL {
                    push(
                        IssueKind::ProbabilitySum,
                        Some(n.id),
                        format!("probabilities out of node {} sum to {}", n.id, sum),
                    );
                }
            }
        }
    }
    for (t, layer) in tree.layers.iter().enumerate() {
        let sum: f64 = layer.iter().map(|&ix| tree.path_probs[ix]).sum();
        if !((sum - 1.0).abs() <= PROB_TOL) {
            push(IssueKind::LayerProbability, None, format!("layer {t} probabilities sum to {sum}"));
        }
    }
    ValidationReport { issues }
}

/// Vector-valued process indexed by node.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess {
    dim: usize,
    data: Vec<f64>,
    defined: Vec<bool>,
}

impl AdaptedProcess {
    pub fn new(dim: usize, len: usize) -> Self {
        Self { dim, data: vec![0.0; dim * len], defined: vec![false; len] }
    }

    /// Defines the process on every node of `tree` by `f`.
    pub fn from_fn(tree: &EventTree, dim: usize, mut f: impl FnMut(usize) -> Vec<f64>) -> Result<Self> {
        let mut p = Self::new(dim, tree.len());
        for ix in 0..tree.len() {
            p.set(ix, &f(ix))?;
        }
        Ok(p)
    }

    /// Scalar process from one value per node.
    pub fn scalar(values: &[f64]) -> Self {
        Self { dim: 1, data: values.to_vec(), defined: vec![true; values.len()] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.defined.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defined.is_empty()
    }

    pub fn set(&mut self, node: usize, value: &[f64]) -> Result<()> {
        if value.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: value.len() });
        }
        self.data[node * self.dim..(node + 1) * self.dim].copy_from_slice(value);
        self.defined[node] = true;
        Ok(())
    }

    pub fn get(&self, node: usize) -> Option<&[f64]> {
        if *self.defined.get(node)? {
            Some(&self.data[node * self.dim..(node + 1) * self.dim])
        } else {
            None
        }
    }

    pub fn value(&self, node: usize) -> Result<&[f64]> {
        self.get(node).ok_or(Error::MissingValue { node })
    }

    /// First component at `node`.
    pub fn scalar_at(&self, node: usize) -> Result<f64> {
        self.value(node).map(|v| v[0])
    }

    pub fn is_defined(&self, node: usize) -> bool {
        self.defined.get(node).copied().unwrap_or(false)
    }

    /// Fails unless the process is defined on every node of the given layers.
    pub fn ensure_layers(&self, tree: &EventTree, times: impl IntoIterator<Item = usize>) -> Result<()> {
        if self.len() != tree.len() {
            return Err(Error::DimensionMismatch { expected: tree.len(), found: self.len() });
        }
        for t in times {
            for &ix in tree.layer(t) {
                if !self.defined[ix] {
                    return Err(Error::MissingValue { node: ix });
                }
            }
        }
        Ok(())
    }
}

/// `E[X | node]` for `X` living on the children of `node`.
pub fn cond_expect(tree: &EventTree, x: &AdaptedProcess, node: usize) -> Result<Vec<f64>> {
    if tree.is_leaf(node) {
        return Err(Error::InvalidConfig(format!(
            "conditional expectation requested at terminal node {}",
            tree.id_of(node)
        )));
    }
    let mut acc = vec![0.0; x.dim()];
    for &c in tree.children(node) {
        let v = x.value(c)?;
        let p = tree.node(c).prob;
        for (a, vi) in acc.iter_mut().zip(v) {
            *a += p * vi;
        }
    }
    Ok(acc)
}

/// Stop set of a stopping time: an antichain hit exactly once by every
/// root-to-leaf path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoppingTime {
    pub stops: BTreeSet<usize>,
}

/// A value per stop node, e.g. initial wealth or a claim price.
pub type StopMap = BTreeMap<usize, f64>;

impl StoppingTime {
    pub fn new(stops: impl IntoIterator<Item = usize>) -> Self {
        Self { stops: stops.into_iter().collect() }
    }

    /// `τ ≡ 0`.
    pub fn initial(tree: &EventTree) -> Self {
        Self::new([tree.root()])
    }

    /// `τ ≡ T`.
    pub fn terminal(tree: &EventTree) -> Self {
        Self::new(tree.leaves().iter().copied())
    }

    /// Every stop node at layer `t`.
    pub fn at_time(tree: &EventTree, t: usize) -> Self {
        Self::new(tree.layer(t).iter().copied())
    }

    /// Broadcasts one scalar to every stop node.
    pub fn broadcast(&self, x: f64) -> StopMap {
        self.stops.iter().map(|&s| (s, x)).collect()
    }

    /// For each node, the stop node at or above it (`None` strictly before
    /// the stopping time).
    pub fn owners(&self, tree: &EventTree) -> Vec<Option<usize>> {
        let mut owner = vec![None; tree.len()];
        for ix in 0..tree.len() {
            owner[ix] = if self.stops.contains(&ix) {
                Some(ix)
            } else {
                tree.parent(ix).and_then(|p| owner[p])
            };
        }
        owner
    }
}

/// True iff every root-to-leaf path contains exactly one stop node.
pub fn check_stopping_time(tree: &EventTree, tau: &StoppingTime) -> bool {
    if tau.stops.iter().any(|&s| s >= tree.len()) {
        return false;
    }
    let mut hits = vec![0usize; tree.len()];
    for ix in 0..tree.len() {
        let above = tree.parent(ix).map_or(0, |p| hits[p]);
        hits[ix] = above + usize::from(tau.stops.contains(&ix));
    }
    tree.leaves().iter().all(|&l| hits[l] == 1)
}

/// Terminal claim, either explicit or a vanilla option on one asset.
#[derive(Debug, Clone, PartialEq)]
pub enum ClaimSpec {
    /// Payoff per leaf index.
    Terminal(BTreeMap<usize, f64>),
    Call { asset: usize, strike: f64 },
    Put { asset: usize, strike: f64 },
}

impl ClaimSpec {
    /// Scalar process defined on the leaves only.
    pub fn expand(&self, tree: &EventTree, prices: &AdaptedProcess) -> Result<AdaptedProcess> {
        let mut h = AdaptedProcess::new(1, tree.len());
        for &leaf in tree.leaves() {
            let v = match self {
                ClaimSpec::Terminal(values) => {
                    *values.get(&leaf).ok_or(Error::MissingValue { node: leaf })?
                }
                ClaimSpec::Call { asset, strike } => (asset_price(prices, leaf, *asset)? - strike).max(0.0),
                ClaimSpec::Put { asset, strike } => (strike - asset_price(prices, leaf, *asset)?).max(0.0),
            };
            h.set(leaf, &[v])?;
        }
        Ok(h)
    }

    pub fn constant(tree: &EventTree, c: f64) -> Self {
        ClaimSpec::Terminal(tree.leaves().iter().map(|&l| (l, c)).collect())
    }
}

fn asset_price(prices: &AdaptedProcess, node: usize, asset: usize) -> Result<f64> {
    let v = prices.value(node)?;
    v.get(asset).copied().ok_or(Error::DimensionMismatch { expected: asset + 1, found: v.len() })
}

/// Incremental construction of a tree together with its price process.
///
/// ```
/// use quadhedge_core::tree::MarketBuilder;
/// let mut b = MarketBuilder::new(vec![1.0]);
/// let root = b.root();
/// b.child(root, 0.5, vec![2.0]);
/// b.child(root, 0.5, vec![0.5]);
/// let (tree, prices) = b.build().unwrap();
/// assert_eq!(tree.leaves().len(), 2);
/// assert_eq!(prices.scalar_at(tree.root()).unwrap(), 1.0);
/// ```
#[derive(Debug, Clone)]
pub struct MarketBuilder {
    dim: usize,
    specs: Vec<NodeSpec>,
    prices: Vec<Vec<f64>>,
}

impl MarketBuilder {
    pub fn new(root_price: Vec<f64>) -> Self {
        Self {
            dim: root_price.len(),
            specs: vec![NodeSpec { id: 0, time: 0, parent: None, prob: 1.0 }],
            prices: vec![root_price],
        }
    }

    pub fn root(&self) -> u64 {
        0
    }

    /// Adds a child of `parent` and returns its id.
    pub fn child(&mut self, parent: u64, prob: f64, price: Vec<f64>) -> u64 {
        let id = self.specs.len() as u64;
        let time = self.specs[parent as usize].time + 1;
        self.specs.push(NodeSpec { id, time, parent: Some(parent), prob });
        self.prices.push(price);
        id
    }

    pub fn build(self) -> Result<(EventTree, AdaptedProcess)> {
        let horizon = self.specs.iter().map(|s| s.time).max().unwrap_or(0);
        let tree = EventTree::new(horizon, self.specs)?;
        let mut prices = AdaptedProcess::new(self.dim, tree.len());
        for (id, p) in self.prices.into_iter().enumerate() {
            let ix = tree.index_of(id as u64).expect("builder ids are dense");
            prices.set(ix, &p)?;
        }
        Ok((tree, prices))
    }
}

/// Recombination-free one-step tree: root price `s0`, equiprobable children.
pub fn one_step(s0: f64, children: &[f64]) -> (EventTree, AdaptedProcess) {
    let mut b = MarketBuilder::new(vec![s0]);
    let p = 1.0 / children.len() as f64;
    for &c in children {
        b.child(0, p, vec![c]);
    }
    b.build().expect("one-step tree is well formed")
}
