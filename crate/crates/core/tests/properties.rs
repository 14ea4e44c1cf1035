use nalgebra::DVector;
use proptest::prelude::*;
use quadhedge_core::random::{random_claim, random_market, random_stopping_time, RandomMarketConfig};
use quadhedge_core::spd::price_claim;
use quadhedge_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-10;

fn small() -> RandomMarketConfig {
    RandomMarketConfig { max_horizon: 3, max_unknowns: 80, ..RandomMarketConfig::default() }
}

fn close(x: f64, y: f64, tol: f64) -> bool {
    (x - y).abs() <= tol * 1f64.max(x.abs()).max(y.abs())
}

struct Case {
    tree: EventTree,
    s: AdaptedProcess,
    h: AdaptedProcess,
    rng: ChaCha8Rng,
}

fn case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (tree, s) = random_market(&mut rng, &small());
    let h = random_claim(&mut rng, &tree, &s);
    Case { tree, s, h, rng }
}

fn leaf_process(tree: &EventTree, rng: &mut ChaCha8Rng) -> AdaptedProcess {
    let mut x = AdaptedProcess::new(1, tree.len());
    for &l in tree.leaves() {
        x.set(l, &[rng.random_range(-2.0..2.0)]).unwrap();
    }
    x
}

/// Fills every node with `E[X_T | node]` by one-step backward induction.
fn backward(tree: &EventTree, x: &AdaptedProcess) -> AdaptedProcess {
    let mut out = x.clone();
    for t in (0..tree.horizon()).rev() {
        for &n in tree.layer(t) {
            let v = cond_expect(tree, &out, n).unwrap();
            out.set(n, &v).unwrap();
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tower_property(seed in any::<u64>()) {
        let mut c = case(seed);
        let x = leaf_process(&c.tree, &mut c.rng);
        let nested = backward(&c.tree, &x);
        for n in 0..c.tree.len() {
            let pn = c.tree.path_prob(n);
            let direct: f64 = c.tree.leaves_under(n).iter().map(|&l| c.tree.path_prob(l) / pn * x.scalar_at(l).unwrap()).sum();
            prop_assert!(close(nested.scalar_at(n).unwrap(), direct, 1e-12));
        }
    }

    #[test]
    fn conditional_expectation_is_linear(seed in any::<u64>(), alpha in -3.0..3.0_f64, beta in -3.0..3.0_f64) {
        let mut c = case(seed);
        let x = backward(&c.tree, &leaf_process(&c.tree, &mut c.rng));
        let y = backward(&c.tree, &leaf_process(&c.tree, &mut c.rng));
        let z = AdaptedProcess::from_fn(&c.tree, 1, |n| {
            vec![alpha * x.scalar_at(n).unwrap() + beta * y.scalar_at(n).unwrap()]
        }).unwrap();
        for n in 0..c.tree.len() {
            if c.tree.is_leaf(n) { continue; }
            let lhs = cond_expect(&c.tree, &z, n).unwrap()[0];
            let rhs = alpha * cond_expect(&c.tree, &x, n).unwrap()[0] + beta * cond_expect(&c.tree, &y, n).unwrap()[0];
            prop_assert!(close(lhs, rhs, 1e-12));
        }
    }

    #[test]
    fn price_scaling_leaves_hedge_invariant(seed in any::<u64>(), k in 0.01..100.0_f64) {
        let c = case(seed);
        let scaled = AdaptedProcess::from_fn(&c.tree, c.s.dim(), |n| {
            c.s.value(n).unwrap().iter().map(|x| k * x).collect()
        }).unwrap();
        let opp = compute_opportunity(&c.tree, &c.s).unwrap();
        let sol = hedge_payoff(&c.tree, &c.s, &opp, &c.h).unwrap();
        let opp_k = compute_opportunity(&c.tree, &scaled).unwrap();
        let sol_k = hedge_payoff(&c.tree, &scaled, &opp_k, &c.h).unwrap();
        for n in 0..c.tree.len() {
            prop_assert!(close(opp.l(n), opp_k.l(n), 1e-10));
            prop_assert!(close(sol.v(n), sol_k.v(n), 1e-10));
            prop_assert!(close(sol.eps2(n), sol_k.eps2(n), 1e-10));
            let xi: DVector<f64> = &sol_k.xi[n] * k;
            prop_assert!((xi - &sol.xi[n]).amax() <= 1e-8 * 1f64.max(sol.xi[n].amax()));
        }
    }

    #[test]
    fn adjustment_process_is_stationary(seed in any::<u64>()) {
        let c = case(seed);
        let opp = compute_opportunity(&c.tree, &c.s).unwrap();
        for n in 0..c.tree.len() {
            if c.tree.is_leaf(n) { continue; }
            let node = opp.node(n);
            let r = &node.a_mat * &node.a - &node.b;
            prop_assert!(r.amax() <= TOL * 1f64.max(node.b.amax()));
            // No constant-free strategy beats doing nothing by more than L allows.
            let mean: f64 = c.tree.children(n).iter().map(|&ch| c.tree.node(ch).prob * opp.l(ch)).sum();
            prop_assert!(node.l <= mean + TOL);
            prop_assert!(node.l > 0.0 && node.l <= 1.0 + TOL);
        }
    }

    #[test]
    fn pure_hedge_solves_normal_equations(seed in any::<u64>()) {
        let c = case(seed);
        let opp = compute_opportunity(&c.tree, &c.s).unwrap();
        let sol = hedge_payoff(&c.tree, &c.s, &opp, &c.h).unwrap();
        for n in 0..c.tree.len() {
            if c.tree.is_leaf(n) { continue; }
            let node = opp.node(n);
            let sn = DVector::from_column_slice(c.s.value(n).unwrap());
            let mut cvec = DVector::zeros(c.s.dim());
            for &ch in c.tree.children(n) {
                let ds = DVector::from_column_slice(c.s.value(ch).unwrap()) - &sn;
                cvec.axpy(c.tree.node(ch).prob * opp.l(ch) * (sol.v(ch) - sol.v(n)), &ds, 1.0);
            }
            let r = &node.a_mat * &sol.xi[n] - &cvec;
            prop_assert!(r.amax() <= TOL * 1f64.max(cvec.amax()));
        }
    }

    #[test]
    fn mean_value_is_linear_in_the_claim(seed in any::<u64>(), alpha in -3.0..3.0_f64, konst in -3.0..3.0_f64) {
        let mut c = case(seed);
        let g = random_claim(&mut c.rng, &c.tree, &c.s);
        let mix = AdaptedProcess::from_fn(&c.tree, 1, |n| {
            if c.tree.is_leaf(n) {
                vec![alpha * c.h.scalar_at(n).unwrap() + g.scalar_at(n).unwrap() + konst]
            } else {
                vec![0.0]
            }
        }).unwrap();
        let opp = compute_opportunity(&c.tree, &c.s).unwrap();
        let sh = hedge_payoff(&c.tree, &c.s, &opp, &c.h).unwrap();
        let sg = hedge_payoff(&c.tree, &c.s, &opp, &g).unwrap();
        let sm = hedge_payoff(&c.tree, &c.s, &opp, &mix).unwrap();
        for n in 0..c.tree.len() {
            prop_assert!(close(sm.v(n), alpha * sh.v(n) + sg.v(n) + konst, 1e-10));
        }
    }

    #[test]
    fn decomposition_holds_for_any_initial_wealth(seed in any::<u64>(), q in 0.0..0.8_f64) {
        let mut c = case(seed);
        let tau = random_stopping_time(&mut c.rng, &c.tree, q);
        let v: StopMap = tau.stops.iter().map(|&n| (n, c.rng.random_range(-5.0..5.0))).collect();
        let opp = compute_opportunity(&c.tree, &c.s).unwrap();
        let sol = hedge_payoff(&c.tree, &c.s, &opp, &c.h).unwrap();
        let run = simulate_feedback(&c.tree, &c.s, &opp, &sol, &v, &tau).unwrap();
        for d in run.stops.values() {
            prop_assert!(close(d.mean_square_error, d.predicted, 1e-10));
        }
    }

    #[test]
    fn perturbing_the_feedback_strategy_never_helps(seed in any::<u64>(), shift in -1.0..1.0_f64) {
        let mut c = case(seed);
        let opp = compute_opportunity(&c.tree, &c.s).unwrap();
        let sol = hedge_payoff(&c.tree, &c.s, &opp, &c.h).unwrap();
        let tau = StoppingTime::initial(&c.tree);
        let v0 = c.rng.random_range(-2.0..2.0);
        let run = simulate_feedback(&c.tree, &c.s, &opp, &sol, &tau.broadcast(v0), &tau).unwrap();
        let best = run.stops[&c.tree.root()].mean_square_error;
        // Bump the holdings of one asset at one node and replay the wealth.
        let inner: Vec<usize> = (0..c.tree.len()).filter(|&n| !c.tree.is_leaf(n)).collect();
        let at = inner[c.rng.random_range(0..inner.len())];
        let asset = c.rng.random_range(0..c.s.dim());
        let mut wealth = vec![0.0; c.tree.len()];
        wealth[c.tree.root()] = v0;
        for n in 0..c.tree.len() {
            if c.tree.is_leaf(n) { continue; }
            let mut phi = run.strategy[n].clone();
            if n == at {
                phi[asset] += shift;
            }
            let sn = c.s.value(n).unwrap();
            for &ch in c.tree.children(n) {
                let gain: f64 = c.s.value(ch).unwrap().iter().zip(sn).zip(phi.iter()).map(|((x, y), h)| h * (x - y)).sum();
                wealth[ch] = wealth[n] + gain;
            }
        }
        let mse: f64 = c.tree.leaves().iter().map(|&l| {
            c.tree.path_prob(l) * (wealth[l] - c.h.scalar_at(l).unwrap()).powi(2)
        }).sum();
        prop_assert!(mse >= best - 1e-10 * 1f64.max(best));
    }

    #[test]
    fn density_prices_claims_at_their_mean_value(seed in any::<u64>()) {
        let c = case(seed);
        let opp = compute_opportunity(&c.tree, &c.s).unwrap();
        let sol = hedge_payoff(&c.tree, &c.s, &opp, &c.h).unwrap();
        let fam = build_vo_spd(&c.tree, &c.s, &opp).unwrap();
        for n in 0..c.tree.len() {
            let price = price_claim(&c.tree, &fam, &c.h, n).unwrap();
            prop_assert!(close(price, sol.v(n), 1e-10));
        }
    }

    #[test]
    fn density_is_multiplicative_and_prices_assets(seed in any::<u64>()) {
        let c = case(seed);
        let opp = compute_opportunity(&c.tree, &c.s).unwrap();
        let fam = build_vo_spd(&c.tree, &c.s, &opp).unwrap();
        let root = fam.restarted(&c.tree, c.tree.root());
        for n in 0..c.tree.len() {
            let below = fam.restarted(&c.tree, n);
            for m in c.tree.subtree(n) {
                prop_assert!(close(root[m], root[n] * below[m], 1e-12));
            }
            for i in 0..c.s.dim() {
                let asset = AdaptedProcess::from_fn(&c.tree, 1, |k| vec![c.s.value(k).unwrap()[i]]).unwrap();
                let p = price_claim(&c.tree, &fam, &asset, n).unwrap();
                prop_assert!(close(p, c.s.value(n).unwrap()[i], 1e-10));
            }
        }
    }

    #[test]
    fn mean_value_process_is_a_density_martingale(seed in any::<u64>()) {
        let c = case(seed);
        let opp = compute_opportunity(&c.tree, &c.s).unwrap();
        let sol = hedge_payoff(&c.tree, &c.s, &opp, &c.h).unwrap();
        let fam = build_vo_spd(&c.tree, &c.s, &opp).unwrap();
        for n in 0..c.tree.len() {
            if c.tree.is_leaf(n) { continue; }
            let step: f64 = c.tree.children(n).iter().map(|&ch| {
                c.tree.node(ch).prob * fam.multiplier(ch) * sol.v(ch)
            }).sum();
            prop_assert!(close(step, sol.v(n), 1e-10));
        }
    }

    #[test]
    fn generated_stopping_times_are_valid(seed in any::<u64>(), q in 0.0..1.0_f64) {
        let mut c = case(seed);
        let tau = random_stopping_time(&mut c.rng, &c.tree, q);
        prop_assert!(check_stopping_time(&c.tree, &tau));
    }
}
