use std::path::Path;

use quadhedge_core::counterexample::{
    aclmm_audit, adjudicate, blowup_profile, closed_form_l, flvr_demo, nonclosedness_table, opportunity_table,
    AclmmReport, Adjudication, FlvrReport, HORIZON,
};
use quadhedge_core::random::{random_claim, random_market, RandomMarketConfig};
use quadhedge_core::spd::AxiomResult;
use quadhedge_core::{
    audit_spd, build_vo_spd, compute_hedge, compute_opportunity, frontier_payoff, hedge_payoff, lop_verdict,
    oracle_mean_value, oracle_opportunity, sharpe_attainment, simulate_feedback, AdaptedProcess, CounterexampleConfig,
    EventTree, FrontierParams, LVariant, StopMap, StopState,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::market::{load_market, Market};
use crate::output::{Cell, OutDir, Table};
use crate::{CliError, MarketArgs, OutArgs};

fn load(args: &MarketArgs) -> Result<Market, CliError> {
    load_market(&args.market, args.claim.as_deref())
}

fn announce(out: &OutDir) {
    for p in &out.written {
        println!("wrote {}", p.display());
    }
}

fn rel_dev(x: f64, y: f64) -> f64 {
    (x - y).abs() / 1f64.max(x.abs()).max(y.abs())
}

#[derive(Serialize)]
struct StopRow {
    node: u64,
    v: f64,
    mean_value: f64,
    opportunity: f64,
    eps2: f64,
    mean_square_error: f64,
    predicted: f64,
    residual: f64,
}

#[derive(Serialize)]
struct HedgeSummary {
    stops: Vec<StopRow>,
    max_relative_residual: f64,
    tol: f64,
    pass: bool,
}

pub fn hedge(args: &MarketArgs, v: Option<f64>, tol: f64, out: &OutArgs) -> Result<(), CliError> {
    let m = load(args)?;
    let claim = m
        .claim
        .as_ref()
        .ok_or_else(|| CliError::Input("no claim: embed one in the market file or pass --claim".into()))?;
    let tau = m.stopping_time(args.tau.as_deref())?;
    let (tree, s) = (&m.tree, &m.prices);
    let opp = compute_opportunity(tree, s)?;
    let sol = compute_hedge(tree, s, &opp, claim)?;
    let v0: StopMap = tau.stops.iter().map(|&n| (n, v.unwrap_or(sol.v(n)))).collect();
    let run = simulate_feedback(tree, s, &opp, &sol, &v0, &tau)?;

    let d = s.dim();
    let mut cols = vec!["node".to_string(), "time".into(), "parent".into(), "L".into()];
    cols.extend((1..=d).map(|i| format!("a_{i}")));
    cols.push("V".into());
    cols.extend((1..=d).map(|i| format!("xi_{i}")));
    cols.extend(["eps2".into(), "wealth".into()]);
    let mut table = Table::new(cols);
    for n in 0..tree.len() {
        let mut row: Vec<Cell> = vec![
            tree.id_of(n).into(),
            tree.time(n).into(),
            tree.parent(n).map(|p| tree.id_of(p)).into(),
            opp.l(n).into(),
        ];
        row.extend(opp.a(n).iter().map(|&x| Cell::from(x)));
        row.push(sol.v(n).into());
        row.extend(sol.xi[n].iter().map(|&x| Cell::from(x)));
        row.push(sol.eps2(n).into());
        row.push(run.wealth[n].into());
        table.push(row);
    }

    let stops: Vec<StopRow> = run
        .stops
        .iter()
        .map(|(&n, dec)| StopRow {
            node: tree.id_of(n),
            v: dec.v,
            mean_value: sol.v(n),
            opportunity: opp.l(n),
            eps2: sol.eps2(n),
            mean_square_error: dec.mean_square_error,
            predicted: dec.predicted,
            residual: dec.residual(),
        })
        .collect();
    let worst = stops.iter().map(|r| rel_dev(r.mean_square_error, r.predicted)).fold(0.0, f64::max);
    let summary = HedgeSummary { stops, max_relative_residual: worst, tol, pass: worst <= tol };

    let mut dir = OutDir::new(&out.out, out.format)?;
    dir.table("hedge", &table)?;
    dir.report("hedge_summary.json", &summary)?;
    let root = tree.root();
    println!("V_0 = {:.16e}  L_0 = {:.16e}  eps2_0 = {:.16e}", sol.v(root), opp.l(root), sol.eps2(root));
    announce(&dir);
    if !summary.pass {
        return Err(CliError::Numerical(format!("decomposition residual {worst:.3e} exceeds {tol:.1e}")));
    }
    Ok(())
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Input(format!("--lambda-grid '{spec}': expected LO:HI:N"));
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, n] = parts.as_slice() else { return Err(bad()) };
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    if n == 0 || !lo.is_finite() || !hi.is_finite() {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect())
}

pub fn frontier(args: &MarketArgs, grid: &str, out: &OutArgs) -> Result<(), CliError> {
    let lambdas = parse_grid(grid)?;
    let m = load(args)?;
    let tau = m.stopping_time(args.tau.as_deref())?;
    let payoff = m.payoff_or_zero()?;
    let (tree, s) = (&m.tree, &m.prices);
    let opp = compute_opportunity(tree, s)?;
    let sol = hedge_payoff(tree, s, &opp, &payoff)?;

    let mut rows = Vec::new();
    for (k, &lam) in lambdas.iter().enumerate() {
        let fp = frontier_payoff(tree, s, &opp, &sol, &tau.broadcast(lam), &tau)?;
        for (&stop, pt) in &fp.points {
            rows.push((stop, k, *pt));
        }
    }
    rows.sort_by_key(|&(stop, k, _)| (stop, k));
    let mut table = Table::new(["stop_node", "mean", "variance", "lambda", "predicted_variance"]);
    for (stop, _, pt) in rows {
        table.push(vec![
            tree.id_of(stop).into(),
            pt.mean.into(),
            pt.variance.into(),
            pt.lambda.into(),
            pt.predicted_variance.into(),
        ]);
    }
    let mut dir = OutDir::new(&out.out, out.format)?;
    dir.table("frontier", &table)?;
    for &stop in &tau.stops {
        let p = FrontierParams::at(&opp, &sol, stop);
        let note = if p.is_collapsed() { "  (L = 1: only the mean value is attainable)" } else { "" };
        println!("stop {}: L = {:.6e}  V = {:.6e}  eps2 = {:.6e}{note}", tree.id_of(stop), p.l, p.v, p.eps2);
    }
    announce(&dir);
    Ok(())
}

#[derive(Serialize)]
struct SharpeRow {
    node: u64,
    opportunity: f64,
    mean_value: f64,
    eps2: f64,
    rho2: f64,
    rho: f64,
    eta: f64,
    /// Moments of the terminal wealth that attains the ratio.
    attained_mean: f64,
    attained_variance: f64,
    attained_rho2: f64,
    shortfall: f64,
}

#[derive(Serialize)]
struct SharpeReport {
    pi: f64,
    stops: Vec<SharpeRow>,
}

pub fn sharpe(args: &MarketArgs, pi: f64, out: &OutArgs) -> Result<(), CliError> {
    let m = load(args)?;
    let tau = m.stopping_time(args.tau.as_deref())?;
    let payoff = m.payoff_or_zero()?;
    let (tree, s) = (&m.tree, &m.prices);
    let opp = compute_opportunity(tree, s)?;
    let sol = hedge_payoff(tree, s, &opp, &payoff)?;
    let attained = sharpe_attainment(tree, s, &opp, &sol, &tau.broadcast(pi), &tau)?;
    let stops: Vec<SharpeRow> = attained
        .iter()
        .map(|(&n, a)| SharpeRow {
            node: tree.id_of(n),
            opportunity: opp.l(n),
            mean_value: sol.v(n),
            eps2: sol.eps2(n),
            rho2: a.result.rho2,
            rho: a.result.rho(),
            eta: a.result.eta,
            attained_mean: a.mean,
            attained_variance: a.variance,
            attained_rho2: a.realized_rho2(),
            shortfall: a.shortfall,
        })
        .collect();
    for r in &stops {
        println!("stop {}: rho2 = {:.16e}  eta = {:.16e}", r.node, r.rho2, r.eta);
    }
    let mut dir = OutDir::new(&out.out, out.format)?;
    dir.report("sharpe.json", &SharpeReport { pi, stops })?;
    announce(&dir);
    Ok(())
}

#[derive(Serialize)]
struct AuditReport {
    tol: f64,
    all_pass: bool,
    axioms: std::collections::BTreeMap<&'static str, AxiomResult>,
    nonnegative: bool,
    strictly_positive: bool,
}

#[derive(Serialize)]
struct LopReport {
    holds: bool,
    #[serde(rename = "min_L")]
    min_l: f64,
    #[serde(rename = "min_L_node")]
    min_l_node: u64,
    violating_nodes: Vec<u64>,
    /// Present only when the law of one price holds.
    audit: Option<AuditReport>,
}

pub fn lop(market: &Path, tol: f64, out: &OutArgs) -> Result<(), CliError> {
    let m = load_market(market, None)?;
    let (tree, s) = (&m.tree, &m.prices);
    let verdict = lop_verdict(tree, s)?;
    let audit = if verdict.holds {
        let opp = compute_opportunity(tree, s)?;
        let fam = build_vo_spd(tree, s, &opp)?;
        let a = audit_spd(tree, s, &fam, tol)?;
        Some(AuditReport {
            tol,
            all_pass: a.all_pass(),
            axioms: a.axioms(),
            nonnegative: a.nonnegative,
            strictly_positive: a.strictly_positive,
        })
    } else {
        None
    };
    let failed_audit = audit.as_ref().is_some_and(|a| !a.all_pass);
    let report = LopReport {
        holds: verdict.holds,
        min_l: verdict.min_l,
        min_l_node: verdict.min_l_node,
        violating_nodes: verdict.violating_nodes,
        audit,
    };
    println!("law of one price: {}  min L = {:.16e} at node {}", report.holds, report.min_l, report.min_l_node);
    let mut dir = OutDir::new(&out.out, out.format)?;
    dir.report("lop.json", &report)?;
    announce(&dir);
    if failed_audit {
        return Err(CliError::Numerical(format!("density audit fails at tolerance {tol:.1e}")));
    }
    Ok(())
}

#[derive(Serialize, Clone)]
struct Mismatch {
    tree: usize,
    node: u64,
    quantity: &'static str,
    engine: f64,
    oracle: f64,
    relative_deviation: f64,
}

#[derive(Serialize)]
struct OracleReport {
    /// Absent when a single market was checked.
    seed: Option<u64>,
    trees: usize,
    nodes: usize,
    tol: f64,
    worst_relative_deviation: f64,
    mismatch_count: usize,
    /// The first mismatches, at most 50.
    mismatches: Vec<Mismatch>,
    pass: bool,
}

const REPORTED_MISMATCHES: usize = 50;

fn compare(
    k: usize,
    tree: &EventTree,
    s: &AdaptedProcess,
    h: &AdaptedProcess,
    tol: f64,
    worst: &mut f64,
    found: &mut Vec<Mismatch>,
) -> Result<usize, CliError> {
    let opp = compute_opportunity(tree, s)?;
    let sol = hedge_payoff(tree, s, &opp, h)?;
    for n in 0..tree.len() {
        let l = oracle_opportunity(tree, s, n)?;
        let (v, e) = oracle_mean_value(tree, s, h, n)?;
        for (quantity, engine, oracle) in [("L", opp.l(n), l), ("V", sol.v(n), v), ("eps2", sol.eps2(n), e)] {
            let dev = rel_dev(engine, oracle);
            *worst = worst.max(dev);
            if !(dev <= tol) {
                found.push(Mismatch { tree: k, node: tree.id_of(n), quantity, engine, oracle, relative_deviation: dev });
            }
        }
    }
    Ok(tree.len())
}

pub fn oracle_check(
    market: Option<&Path>,
    claim: Option<&Path>,
    seed: u64,
    trees: usize,
    tol: f64,
    out: &OutArgs,
) -> Result<(), CliError> {
    let (mut worst, mut found, mut nodes) = (0.0, Vec::new(), 0);
    let (seed, trees) = match market {
        Some(path) => {
            let m = load_market(path, claim)?;
            let h = m.payoff_or_zero()?;
            nodes += compare(0, &m.tree, &m.prices, &h, tol, &mut worst, &mut found)?;
            (None, 1)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = RandomMarketConfig::default();
            for k in 0..trees {
                let (tree, s) = random_market(&mut rng, &cfg);
                let h = random_claim(&mut rng, &tree, &s);
                nodes += compare(k, &tree, &s, &h, tol, &mut worst, &mut found)?;
            }
            (Some(seed), trees)
        }
    };
    let count = found.len();
    found.truncate(REPORTED_MISMATCHES);
    let report = OracleReport {
        seed,
        trees,
        nodes,
        tol,
        worst_relative_deviation: worst,
        mismatch_count: count,
        mismatches: found,
        pass: count == 0,
    };
    println!("{trees} trees, {nodes} nodes, worst relative deviation {worst:.3e}, {count} mismatches");
    let mut dir = OutDir::new(&out.out, out.format)?;
    dir.report("oracle_check.json", &report)?;
    announce(&dir);
    if count > 0 {
        return Err(CliError::Mismatch(format!("{count} oracle mismatches above {tol:.1e}")));
    }
    Ok(())
}

/// Grid times nearest to `0, 0.05, .., 0.95`.
fn report_times(cfg: &CounterexampleConfig) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..20).map(|k| (f64::from(k) * 0.05 / cfg.dt).round() as usize).collect();
    idx.retain(|&i| i < cfg.steps());
    idx.dedup();
    idx.into_iter().map(|i| i as f64 * cfg.dt).collect()
}

fn snap(cfg: &CounterexampleConfig, ts: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> =
        ts.iter().map(|t| (t / cfg.dt).round() as usize).filter(|&i| i > 0 && i < cfg.steps()).collect();
    idx.dedup();
    idx.into_iter().map(|i| i as f64 * cfg.dt).collect()
}

const FLVR_LEVELS: [u32; 3] = [5, 20, 100];
const FLVR_HALVINGS: u32 = 2;
const NONCLOSEDNESS_NS: [u32; 4] = [4, 8, 16, 32];

#[derive(Serialize)]
struct HorizonProbability {
    /// `P(τ = T)` used throughout the lab.
    adopted: f64,
    /// The strategy's earnings statement gives `1 − p` for the same event.
    stated_for_strategy: f64,
    observed: f64,
    /// Whether `p` and `1 − p` differ, i.e. whether the two readings give
    /// different numbers.
    numerically_different: bool,
    note: &'static str,
}

#[derive(Serialize)]
struct CounterexampleReport {
    config: CounterexampleConfig,
    l_raw_at_zero: f64,
    adjudication: Adjudication,
    horizon_probability: HorizonProbability,
    flvr: FlvrReport,
    aclmm: Option<AclmmReport>,
}

pub fn counterexample(p: f64, dt: f64, paths: usize, seed: u64, out: &OutArgs) -> Result<(), CliError> {
    let cfg = CounterexampleConfig::new(p, dt, paths, seed)?;
    let table = opportunity_table(&cfg, &report_times(&cfg))?;
    let adjudication = adjudicate(&table);
    let mut opp = Table::new(["t", "L_raw", "L_normalized", "L_mc", "ci_lo", "ci_hi", "std_error", "samples"]);
    for e in &table {
        opp.push(vec![
            e.t.into(),
            e.l_raw.into(),
            e.l_normalized.into(),
            e.mc.estimate.into(),
            e.mc.ci_lo.into(),
            e.mc.ci_hi.into(),
            e.mc.std_error.into(),
            e.mc.samples.into(),
        ]);
    }

    let flvr = flvr_demo(&cfg, &FLVR_LEVELS, FLVR_HALVINGS)?;
    let mut cols = vec!["n".to_string(), "flvr_min_wealth".into(), "loss_freq".into(), "min_margin".into(), "level_hit_freq".into()];
    cols.extend((0..=FLVR_HALVINGS).map(|i| format!("delta_{i}")));
    cols.extend((0..=FLVR_HALVINGS).map(|i| format!("overshoot_{i}")));
    let mut fl = Table::new(cols);
    for r in &flvr.rows {
        let mut row: Vec<Cell> =
            vec![r.n.into(), r.min_wealth.into(), r.loss_freq.into(), r.min_margin.into(), r.level_hit_freq.into()];
        row.extend(r.delta.iter().map(|&x| Cell::from(x)));
        row.extend(r.overshoot.iter().map(|&x| Cell::from(x)));
        fl.push(row);
    }

    let ns: Vec<u32> = NONCLOSEDNESS_NS.into_iter().filter(|&n| 1.0 / f64::from(n) >= cfg.dt).collect();
    let mut nc = Table::new(["n", "closed_form_error", "mc_error", "mc_ci_lo", "mc_ci_hi", "target_norm"]);
    for r in nonclosedness_table(&cfg, &ns)? {
        nc.push(vec![
            r.n.into(),
            r.closed_form_error.into(),
            r.mc_error.estimate.into(),
            r.mc_error.ci_lo.into(),
            r.mc_error.ci_hi.into(),
            r.target_norm.into(),
        ]);
    }

    let normalized = blowup_profile(p, 4..=14, LVariant::Normalized)?;
    let raw = blowup_profile(p, 4..=14, LVariant::Raw)?;
    let mut bl = Table::new(["k", "t_k", "inv_L", "inv_L_raw"]);
    for (a, b) in normalized.iter().zip(&raw) {
        bl.push(vec![a.k.into(), a.t_k.into(), a.inv_l.into(), b.inv_l.into()]);
    }

    let checks = snap(&cfg, &[0.25 * HORIZON, 0.5 * HORIZON, 0.75 * HORIZON]);
    let aclmm = if cfg.steps() >= 2 { Some(aclmm_audit(&cfg, &checks)?) } else { None };
    let report = CounterexampleReport {
        config: cfg,
        l_raw_at_zero: closed_form_l(0.0, StopState::Running, p, LVariant::Raw)?.value,
        adjudication,
        horizon_probability: HorizonProbability {
            adopted: p,
            stated_for_strategy: 1.0 - p,
            observed: flvr.horizon_freq,
            numerically_different: p != 1.0 - p,
            note: "the market sets P(tau = T) = p but the strategy's earnings statement gives 1 - p; p is used throughout",
        },
        flvr,
        aclmm,
    };

    let mut dir = OutDir::new(&out.out, out.format)?;
    dir.table("opportunity", &opp)?;
    dir.table("flvr", &fl)?;
    dir.table("nonclosedness", &nc)?;
    dir.table("blowup", &bl)?;
    dir.report("counterexample.json", &report)?;
    println!("L_raw(0) = {:.16e}", report.l_raw_at_zero);
    println!(
        "adjudicated variant: {:?} (raw inside CI at {}/{} times, normalized at {}/{})",
        report.adjudication.verdict,
        report.adjudication.raw_hits,
        report.adjudication.points,
        report.adjudication.normalized_hits,
        report.adjudication.points
    );
    println!("note: P(tau = T) = p = {p} is used throughout; the strategy's earnings statement reads 1 - p");
    announce(&dir);
    Ok(())
}
