//! JSON market files.
//!
//! ```json
//! {"d": 1, "horizon": 1,
//!  "nodes": [{"id": 0, "time": 0, "parent": null, "prob": 1.0, "price": [1.0]},
//!            {"id": 1, "time": 1, "parent": 0, "prob": 0.5, "price": [2.0]}],
//!  "claim": {"type": "call", "asset": 0, "strike": 1.0}}
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use quadhedge_core::{validate_tree, AdaptedProcess, ClaimSpec, EventTree, NodeSpec, StoppingTime};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarketFile {
    d: usize,
    horizon: usize,
    nodes: Vec<NodeEntry>,
    #[serde(default)]
    claim: Option<ClaimFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeEntry {
    id: u64,
    time: usize,
    #[serde(default)]
    parent: Option<u64>,
    #[serde(default = "one")]
    prob: f64,
    price: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum ClaimFile {
    /// Payoff keyed by leaf id (JSON object keys are strings).
    Terminal { values: BTreeMap<String, f64> },
    Call { asset: usize, strike: f64 },
    Put { asset: usize, strike: f64 },
}

/// A claim file is either a bare claim object or a document with a `claim`
/// field.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ClaimDocument {
    Wrapped { claim: ClaimFile },
    Bare(ClaimFile),
}

pub struct Market {
    pub tree: EventTree,
    pub prices: AdaptedProcess,
    pub claim: Option<ClaimSpec>,
}

impl Market {
    /// External ids to stop set; the root when `list` is `None`.
    pub fn stopping_time(&self, list: Option<&str>) -> Result<StoppingTime, CliError> {
        let Some(list) = list else {
            return Ok(StoppingTime::initial(&self.tree));
        };
        let mut stops = Vec::new();
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let id: u64 = item.parse().map_err(|_| CliError::Input(format!("--tau: '{item}' is not a node id")))?;
            let ix = self.tree.index_of(id).ok_or_else(|| CliError::Input(format!("--tau: unknown node {id}")))?;
            stops.push(ix);
        }
        let tau = StoppingTime::new(stops);
        if !quadhedge_core::check_stopping_time(&self.tree, &tau) {
            return Err(CliError::Input(format!(
                "--tau {list}: every root-to-leaf path must pass through exactly one listed node"
            )));
        }
        Ok(tau)
    }

    /// The claim payoff, or zero on every leaf if no claim was given.
    pub fn payoff_or_zero(&self) -> Result<AdaptedProcess, CliError> {
        match &self.claim {
            Some(c) => Ok(c.expand(&self.tree, &self.prices)?),
            None => Ok(ClaimSpec::constant(&self.tree, 0.0).expand(&self.tree, &self.prices)?),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn json_error(path: &Path, e: serde_json::Error) -> CliError {
    CliError::Input(format!("{}: line {} column {}: {e}", path.display(), e.line(), e.column()))
}

pub fn load_market(path: &Path, claim_path: Option<&Path>) -> Result<Market, CliError> {
    let file: MarketFile = serde_json::from_str(&read(path)?).map_err(|e| json_error(path, e))?;
    let claim = match claim_path {
        Some(cp) => Some(match serde_json::from_str(&read(cp)?).map_err(|e| json_error(cp, e))? {
            ClaimDocument::Wrapped { claim } | ClaimDocument::Bare(claim) => claim,
        }),
        None => file.claim,
    };
    build(path, file.d, file.horizon, file.nodes, claim)
}

fn build(
    path: &Path,
    d: usize,
    horizon: usize,
    nodes: Vec<NodeEntry>,
    claim: Option<ClaimFile>,
) -> Result<Market, CliError> {
    let bad = |field: String, msg: String| CliError::Input(format!("{}: {field}: {msg}", path.display()));
    if d == 0 {
        return Err(bad("d".into(), "must be at least 1".into()));
    }
    for (k, n) in nodes.iter().enumerate() {
        if n.price.len() != d {
            return Err(bad(format!("nodes[{k}].price"), format!("expected {d} entries, found {}", n.price.len())));
        }
        if n.price.iter().any(|x| !x.is_finite()) || !n.prob.is_finite() {
            return Err(bad(format!("nodes[{k}]"), "non-finite number".into()));
        }
    }
    let specs =
        nodes.iter().map(|n| NodeSpec { id: n.id, time: n.time, parent: n.parent, prob: n.prob }).collect();
    let tree = EventTree::new(horizon, specs).map_err(|e| bad("nodes".into(), e.to_string()))?;
    let report = validate_tree(&tree);
    if !report.is_valid() {
        return Err(bad("nodes".into(), report.to_string()));
    }
    let mut prices = AdaptedProcess::new(d, tree.len());
    for n in &nodes {
        let ix = tree.index_of(n.id).expect("indexed above");
        prices.set(ix, &n.price)?;
    }
    let claim = claim.map(|c| claim_spec(&tree, d, c)).transpose().map_err(|m| bad("claim".into(), m))?;
    Ok(Market { tree, prices, claim })
}

fn claim_spec(tree: &EventTree, d: usize, claim: ClaimFile) -> Result<ClaimSpec, String> {
    let check_asset = |asset: usize| {
        if asset < d {
            Ok(())
        } else {
            Err(format!("asset {asset} out of range for d = {d}"))
        }
    };
    match claim {
        ClaimFile::Call { asset, strike } => check_asset(asset).map(|_| ClaimSpec::Call { asset, strike }),
        ClaimFile::Put { asset, strike } => check_asset(asset).map(|_| ClaimSpec::Put { asset, strike }),
        ClaimFile::Terminal { values } => {
            let mut out = BTreeMap::new();
            for (key, v) in values {
                let id: u64 = key.parse().map_err(|_| format!("values: key '{key}' is not a node id"))?;
                let ix = tree.index_of(id).ok_or_else(|| format!("values: unknown node {id}"))?;
                if !tree.is_leaf(ix) {
                    return Err(format!("values: node {id} is not a leaf"));
                }
                out.insert(ix, v);
            }
            if let Some(&missing) = tree.leaves().iter().find(|l| !out.contains_key(l)) {
                return Err(format!("values: no payoff for leaf {}", tree.id_of(missing)));
            }
            Ok(ClaimSpec::Terminal(out))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Market, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        std::fs::write(&p, text).unwrap();
        load_market(&p, None)
    }

    const TRINOMIAL: &str = r#"{"d": 1, "horizon": 1, "nodes": [
        {"id": 0, "time": 0, "parent": null, "prob": 1.0, "price": [1.0]},
        {"id": 1, "time": 1, "parent": 0, "prob": 0.3333333333333333, "price": [2.0]},
        {"id": 2, "time": 1, "parent": 0, "prob": 0.3333333333333333, "price": [1.0]},
        {"id": 3, "time": 1, "parent": 0, "prob": 0.3333333333333334, "price": [0.5]}],
        "claim": {"type": "terminal", "values": {"1": 1.0, "2": 0.0, "3": 0.0}}}"#;

    #[test]
    fn parses_terminal_claim() {
        let m = parse(TRINOMIAL).unwrap();
        assert_eq!(m.tree.len(), 4);
        let h = m.claim.unwrap().expand(&m.tree, &m.prices).unwrap();
        assert_eq!(h.scalar_at(m.tree.index_of(1).unwrap()).unwrap(), 1.0);
    }

    #[test]
    fn diagnostics_name_the_field() {
        let e = parse(&TRINOMIAL.replace("[2.0]", "[2.0, 1.0]")).err().unwrap();
        assert!(e.to_string().contains("nodes[1].price"), "{e}");
        let e = parse(&TRINOMIAL.replace("\"3\": 0.0", "\"9\": 0.0")).err().unwrap();
        assert!(e.to_string().contains("unknown node 9"), "{e}");
        let e = parse("{\"d\": 1,\n \"horizon\": }").err().unwrap();
        assert!(e.to_string().contains("line 2"), "{e}");
    }

    #[test]
    fn stop_lists() {
        let m = parse(TRINOMIAL).unwrap();
        assert!(m.stopping_time(None).unwrap().stops.iter().eq([m.tree.root()].iter()));
        assert_eq!(m.stopping_time(Some("1,2,3")).unwrap().stops.len(), 3);
        assert!(m.stopping_time(Some("1,2")).is_err());
        assert!(m.stopping_time(Some("x")).is_err());
    }
}
