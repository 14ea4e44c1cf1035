//! Monte Carlo lab for a continuous-time market on `[0, T]`, `T = 1`, in
//! which the law of one price fails at the horizon.
//!
//! With a Brownian motion `W` and an independent time `τ` that equals `T`
//! with probability `p` and is otherwise uniform on `[0, T)`, the stock is
//! `S = X` stopped at `τ`, where `X_t = (T − t) exp(W_t − t/2)`. Before `τ`
//! it has drift `μ_t = −1/(T − t)`:
//!
//! ```text
//! dS_t / S_t = μ_t 𝟙{t < τ} dt + 𝟙{t < τ} dW_t
//! ```
//!
//! so `S_T = 0` on `{τ = T}`. On `{τ > t}` the opportunity process is
//!
//! ```text
//! L_t = E[exp(−∫_t^τ μ² ds) 𝟙{τ < T} | F_t] = (1 − p) I(T − t) / (p + (1 − p)(T − t))
//! I(h) = e^{1/h} ∫_0^h e^{−1/s} ds
//! ```
//!
//! and `L_t = 1` on `{τ ≤ t}`. The "raw" variant omits the denominator
//! `P(τ > t)`; both agree at `t = 0`, and [`opportunity_table`] compares
//! them against simulation.
//!
//! Every path draws from its own ChaCha8 stream selected by the path index,
//! in the order: `τ = T` decision, uniform position of `τ`, then Brownian
//! increments. Results therefore do not depend on thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature::integrate;

pub const HORIZON: f64 = 1.0;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

/// Largest `paths × steps` that [`simulate_market`] will store.
pub const MAX_STORED_STEPS: usize = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CounterexampleConfig {
    /// `P(τ = T)`.
    pub p: f64,
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
}

impl CounterexampleConfig {
    pub fn new(p: f64, dt: f64, paths: usize, seed: u64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidConfig(format!("p must lie in (0, 1), got {p}")));
        }
        if !(dt > 0.0 && dt <= HORIZON) {
            return Err(Error::InvalidConfig(format!("dt must lie in (0, {HORIZON}], got {dt}")));
        }
        let steps = (HORIZON / dt).round();
        if (steps * dt - HORIZON).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("dt = {dt} does not divide the horizon")));
        }
        if paths == 0 {
            return Err(Error::InvalidConfig("path count must be at least 1".into()));
        }
        Ok(Self { p, dt, paths, seed })
    }

    pub fn steps(&self) -> usize {
        (HORIZON / self.dt).round() as usize
    }

    /// Index `k` with `k·dt = t`, if `t` lies on the grid.
    pub fn grid_index(&self, t: f64) -> Result<usize> {
        let k = (t / self.dt).round();
        if k < 0.0 || k > self.steps() as f64 || (k * self.dt - t).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("t = {t} is not on the grid of step {}", self.dt)));
        }
        Ok(k as usize)
    }

    /// Time to the horizon from grid index `j`, exact at `j = steps`.
    fn remaining(&self, j: usize) -> f64 {
        (self.steps() - j) as f64 * self.dt
    }
}

/// `I(h) = e^{1/h} ∫_0^h e^{−1/s} ds`, evaluated as
/// `∫_0^∞ e^{−u} (u + 1/h)^{−2} du` so nothing overflows as `h → 0`.
pub fn tail_integral(h: f64) -> f64 {
    if h <= 0.0 {
        return 0.0;
    }
    let c = 1.0 / h;
    integrate(|u| (-u).exp() / (u + c).powi(2), 0.0, 60.0, 0.0, 1e-13).value
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LVariant {
    Raw,
    Normalized,
}

/// Which side of `τ` the conditioning event is on at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopState {
    /// `{τ ≤ t}`.
    Stopped,
    /// `{τ > t}`.
    Running,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosedFormL {
    pub value: f64,
    /// Set when `t = T` on `{τ > t}`: the value is the left limit `L_{T−} = 0`.
    pub at_limit: bool,
}

pub fn closed_form_l(t: f64, state: StopState, p: f64, variant: LVariant) -> Result<ClosedFormL> {
    if !(0.0..=HORIZON).contains(&t) {
        return Err(Error::InvalidConfig(format!("t = {t} outside [0, {HORIZON}]")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidConfig(format!("p must lie in (0, 1), got {p}")));
    }
    if state == StopState::Stopped {
        return Ok(ClosedFormL { value: 1.0, at_limit: false });
    }
    let h = HORIZON - t;
    if h == 0.0 {
        return Ok(ClosedFormL { value: 0.0, at_limit: true });
    }
    let raw = (1.0 - p) * tail_integral(h);
    let value = match variant {
        LVariant::Raw => raw,
        LVariant::Normalized => raw / (p + (1.0 - p) * h),
    };
    Ok(ClosedFormL { value, at_limit: false })
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Draws `τ` (exactly `T` with probability `p`); always consumes two
/// uniforms so the Brownian increments start at the same stream position.
fn draw_tau(rng: &mut ChaCha8Rng, p: f64) -> f64 {
    let hit: f64 = rng.random();
    let pos: f64 = rng.random();
    if hit < p {
        HORIZON
    } else {
        pos * HORIZON
    }
}

/// Grid index of `τ` snapped down, or `steps` when `τ = T`.
fn tau_index(tau: f64, dt: f64, steps: usize) -> usize {
    if tau >= HORIZON {
        steps
    } else {
        ((tau / dt).floor() as usize).min(steps - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimPath {
    /// Exact `τ`; equals `T` on `{τ = T}`.
    pub tau: f64,
    /// `τ` snapped down to the grid; `steps` on `{τ = T}`.
    pub tau_index: usize,
    /// Brownian increments over each grid step.
    pub dw: Vec<f64>,
    /// `exp(W_t − t/2)` on the grid.
    pub exponential: Vec<f64>,
    /// `S` on the grid, stopped at the snapped `τ`.
    pub price: Vec<f64>,
}

impl SimPath {
    pub fn hits_horizon(&self) -> bool {
        self.tau >= HORIZON
    }

    pub fn w_terminal(&self) -> f64 {
        self.dw.iter().sum()
    }
}

fn brownian(rng: &mut ChaCha8Rng, steps: usize, dt: f64) -> Vec<f64> {
    let sd = dt.sqrt();
    (0..steps).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Deterministic path `index` of the configured experiment.
pub fn simulate_path(cfg: &CounterexampleConfig, index: usize) -> SimPath {
    let n = cfg.steps();
    let mut rng = path_rng(cfg.seed, index);
    let tau = draw_tau(&mut rng, cfg.p);
    let k = tau_index(tau, cfg.dt, n);
    let dw = brownian(&mut rng, n, cfg.dt);
    let mut exponential = Vec::with_capacity(n + 1);
    let mut log_e = 0.0;
    exponential.push(1.0);
    for step in &dw {
        log_e += step - 0.5 * cfg.dt;
        exponential.push(log_e.exp());
    }
    let price = (0..=n)
        .map(|j| {
            let js = j.min(k);
            cfg.remaining(js) * exponential[js]
        })
        .collect();
    SimPath { tau, tau_index: k, dw, exponential, price }
}

#[derive(Debug, Clone)]
pub struct PathBundle {
    pub config: CounterexampleConfig,
    pub paths: Vec<SimPath>,
}

/// Simulates and stores every path. Large experiments stream paths instead.
pub fn simulate_market(cfg: &CounterexampleConfig) -> Result<PathBundle> {
    let cells = cfg.paths.saturating_mul(cfg.steps() + 1);
    if cells > MAX_STORED_STEPS {
        return Err(Error::InvalidConfig(format!(
            "{cells} stored grid values exceed the limit {MAX_STORED_STEPS}; use the streaming estimators"
        )));
    }
    let paths = (0..cfg.paths).into_par_iter().map(|i| simulate_path(cfg, i)).collect();
    Ok(PathBundle { config: *cfg, paths })
}

/// Exact `τ` of every path, without Brownian increments.
pub fn sample_taus(cfg: &CounterexampleConfig) -> Vec<f64> {
    (0..cfg.paths).into_par_iter().map(|i| draw_tau(&mut path_rng(cfg.seed, i), cfg.p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub samples: usize,
}

impl McEstimate {
    pub fn from_samples(xs: impl IntoIterator<Item = f64>) -> Self {
        let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
        for x in xs {
            n += 1;
            let d = x - mean;
            mean += d / n as f64;
            m2 += d * (x - mean);
        }
        let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        let se = if n > 0 { (var / n as f64).sqrt() } else { f64::NAN };
        let mean = if n > 0 { mean } else { f64::NAN };
        Self { estimate: mean, std_error: se, ci_lo: mean - Z95 * se, ci_hi: mean + Z95 * se, samples: n }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.ci_lo <= x && x <= self.ci_hi
    }

    /// `|estimate − x|` in standard errors.
    pub fn z_score(&self, x: f64) -> f64 {
        (self.estimate - x).abs() / self.std_error
    }
}

/// Simulated and closed-form opportunity values on `{τ > t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OpportunityEstimate {
    pub t: f64,
    pub l_raw: f64,
    pub l_normalized: f64,
    /// Average of `exp(−∫_t^τ μ² ds) 𝟙{τ < T}` over paths with `τ > t`.
    pub mc: McEstimate,
}

impl OpportunityEstimate {
    pub fn variant(&self, v: LVariant) -> f64 {
        match v {
            LVariant::Raw => self.l_raw,
            LVariant::Normalized => self.l_normalized,
        }
    }
}

/// `exp(−∫_t^τ μ² ds) = exp(−(1/(T−τ) − 1/(T−t)))` for `t < τ < T`, else 0.
fn discount(t: f64, tau: f64) -> f64 {
    if tau >= HORIZON {
        return 0.0;
    }
    (-(1.0 / (HORIZON - tau) - 1.0 / (HORIZON - t))).exp()
}

/// Estimates `L_t` on `{τ > t}` at each grid time in `times`.
///
/// The integrand is a function of `τ` alone, so each path contributes its
/// exact conditional value given `τ`; averaging the squared stochastic
/// exponential pathwise would have infinite variance.
pub fn opportunity_table(cfg: &CounterexampleConfig, times: &[f64]) -> Result<Vec<OpportunityEstimate>> {
    for &t in times {
        let k = cfg.grid_index(t)?;
        if k >= cfg.steps() {
            return Err(Error::InvalidConfig(format!("t = {t} must be before the horizon")));
        }
    }
    let taus = sample_taus(cfg);
    times
        .iter()
        .map(|&t| {
            let mc = McEstimate::from_samples(taus.iter().filter(|&&tau| tau > t).map(|&tau| discount(t, tau)));
            Ok(OpportunityEstimate {
                t,
                l_raw: closed_form_l(t, StopState::Running, cfg.p, LVariant::Raw)?.value,
                l_normalized: closed_form_l(t, StopState::Running, cfg.p, LVariant::Normalized)?.value,
                mc,
            })
        })
        .collect()
}

pub fn estimate_opportunity_mc(cfg: &CounterexampleConfig, t: f64) -> Result<OpportunityEstimate> {
    Ok(opportunity_table(cfg, &[t])?[0])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Adjudication {
    /// Number of times at which each variant lies inside the 95% CI.
    pub raw_hits: usize,
    pub normalized_hits: usize,
    pub points: usize,
    /// The variant with the smaller summed z-score over times `t > 0`,
    /// where the two differ.
    pub verdict: Option<LVariant>,
}

impl Adjudication {
    /// Whether the chosen variant lies inside every CI.
    pub fn verdict_consistent(&self) -> bool {
        match self.verdict {
            Some(LVariant::Raw) => self.raw_hits == self.points,
            Some(LVariant::Normalized) => self.normalized_hits == self.points,
            None => false,
        }
    }
}

pub fn adjudicate(table: &[OpportunityEstimate]) -> Adjudication {
    let raw_hits = table.iter().filter(|e| e.mc.contains(e.l_raw)).count();
    let normalized_hits = table.iter().filter(|e| e.mc.contains(e.l_normalized)).count();
    let later: Vec<&OpportunityEstimate> = table.iter().filter(|e| e.t > 0.0).collect();
    let score = |v: LVariant| later.iter().map(|e| e.mc.z_score(e.variant(v))).sum::<f64>();
    let verdict = if later.is_empty() {
        None
    } else if score(LVariant::Normalized) < score(LVariant::Raw) {
        Some(LVariant::Normalized)
    } else {
        Some(LVariant::Raw)
    };
    Adjudication { raw_hits, normalized_hits, points: table.len(), verdict }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlvrRow {
    pub n: u32,
    /// Smallest terminal wealth over paths at the base step.
    pub min_wealth: f64,
    /// Smallest `wealth − (𝟙{τ=T} − 1/n)` at the base step.
    pub min_margin: f64,
    /// Fraction of paths ending with negative wealth at the base step.
    pub loss_freq: f64,
    /// Fraction of `{τ = T}` paths on which the exponential reached `n`.
    pub level_hit_freq: f64,
    /// `max(0, −min margin)` at `dt`, `dt/2`, ...
    pub delta: Vec<f64>,
    /// Largest `wealth − (1 − 1/n)` on `{τ = T}` at `dt`, `dt/2`, ...: the
    /// overshoot from checking the level only at grid times.
    pub overshoot: Vec<f64>,
}

impl FlvrRow {
    pub fn delta_non_increasing(&self) -> bool {
        self.delta.windows(2).all(|w| w[1] <= w[0])
    }

    pub fn overshoot_decreasing(&self) -> bool {
        self.overshoot.windows(2).all(|w| w[1] < w[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlvrReport {
    pub steps: Vec<f64>,
    pub rows: Vec<FlvrRow>,
    /// `P(τ < T) = 1 − p`: losses can only occur off `{τ = T}`.
    pub loss_bound: f64,
    /// Realized frequency of `{τ = T}`.
    pub horizon_freq: f64,
}

/// Brownian increment and `∫μ dW` over one step, sampled jointly.
#[derive(Debug, Clone, Copy)]
struct StepNoise {
    dw: f64,
    mu_dw: f64,
}

/// Exact joint draws of `(ΔW, ∫μ dW)` on each step before `T − dt`. Over
/// `[t, t + dt]` with `h = T − t`, `∫μ dW` has variance `1/(h−dt) − 1/h` and
/// covariance `ln((h−dt)/h)` with `ΔW`.
fn step_noise(rng: &mut ChaCha8Rng, steps: usize, dt: f64) -> Vec<StepNoise> {
    let dw = brownian(rng, steps, dt);
    dw.iter()
        .enumerate()
        .map(|(i, &w)| {
            let h = (steps - i) as f64 * dt;
            if i + 1 == steps {
                return StepNoise { dw: w, mu_dw: f64::NAN };
            }
            let var = 1.0 / (h - dt) - 1.0 / h;
            let cov = ((h - dt) / h).ln();
            let resid = (var - cov * cov / dt).max(0.0).sqrt();
            let z: f64 = rng.sample(StandardNormal);
            StepNoise { dw: w, mu_dw: cov / dt * w + resid * z }
        })
        .collect()
}

fn coarsen(noise: &[StepNoise]) -> Vec<StepNoise> {
    noise.chunks(2).map(|c| StepNoise { dw: c[0].dw + c[1].dw, mu_dw: c[0].mu_dw + c[1].mu_dw }).collect()
}

/// Terminal wealth `(𝓔 − 1)/n` of holding `(1/n)(μ/S) 𝓔` until `𝓔` reaches
/// `n` (checked at grid times) or `τ`, where
/// `𝓔 = exp(∫μ dW + ½∫μ² dt)` is sampled exactly at grid times. On the last
/// step `∫μ² = ∞` and `𝓔 → ∞` continuously, so a path still running there
/// crosses `n` inside the step.
fn flvr_wealth(noise: &[StepNoise], dt: f64, k: usize, n: f64) -> (f64, bool) {
    let steps = noise.len();
    let level = n.ln();
    let mut log_e = 0.0;
    for (i, s) in noise.iter().enumerate().take(k) {
        if log_e >= level {
            break;
        }
        if i + 1 == steps {
            return (1.0 - 1.0 / n, true);
        }
        let h = (steps - i) as f64 * dt;
        log_e += s.mu_dw + 0.5 * (1.0 / (h - dt) - 1.0 / h);
    }
    ((log_e.exp() - 1.0) / n, log_e >= level)
}

/// Runs the strategy for each `n` at `dt` and `halvings` successively
/// halved steps. Coarse increments are sums of the finest ones, so all
/// resolutions see the same Brownian path.
pub fn flvr_demo(cfg: &CounterexampleConfig, ns: &[u32], halvings: u32) -> Result<FlvrReport> {
    if ns.contains(&0) {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    let levels = halvings as usize + 1;
    let fine = CounterexampleConfig { dt: cfg.dt / f64::from(1u32 << halvings), ..*cfg };
    let fine_steps = fine.steps();
    let per_path: Vec<(bool, Vec<(f64, bool)>)> = (0..cfg.paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(cfg.seed, i);
            let tau = draw_tau(&mut rng, cfg.p);
            let mut noise = step_noise(&mut rng, fine_steps, fine.dt);
            let mut out = vec![(0.0, false); ns.len() * levels];
            for r in (0..levels).rev() {
                let dt = cfg.dt / f64::from(1u32 << r);
                let k = tau_index(tau, dt, noise.len());
                for (j, &n) in ns.iter().enumerate() {
                    out[j * levels + r] = flvr_wealth(&noise, dt, k, f64::from(n));
                }
                if r > 0 {
                    noise = coarsen(&noise);
                }
            }
            (tau >= HORIZON, out)
        })
        .collect();

    let hits = per_path.iter().filter(|(h, _)| *h).count();
    let rows = ns
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let inv = 1.0 / f64::from(n);
            let margin = |hit: bool, w: f64| w - (if hit { 1.0 } else { 0.0 } - inv);
            let at = |o: &Vec<(f64, bool)>, r: usize| o[j * levels + r];
            let delta = (0..levels)
                .map(|r| {
                    let worst = per_path.iter().map(|(hit, o)| margin(*hit, at(o, r).0)).fold(f64::INFINITY, f64::min);
                    (-worst).max(0.0)
                })
                .collect();
            let overshoot = (0..levels)
                .map(|r| {
                    per_path
                        .iter()
                        .filter(|(hit, _)| *hit)
                        .map(|(_, o)| at(o, r).0 - (1.0 - inv))
                        .fold(0.0, f64::max)
                })
                .collect();
            FlvrRow {
                n,
                min_wealth: per_path.iter().map(|(_, o)| at(o, 0).0).fold(f64::INFINITY, f64::min),
                min_margin: per_path.iter().map(|(hit, o)| margin(*hit, at(o, 0).0)).fold(f64::INFINITY, f64::min),
                loss_freq: per_path.iter().filter(|(_, o)| at(o, 0).0 < 0.0).count() as f64 / cfg.paths as f64,
                level_hit_freq: if hits == 0 {
                    f64::NAN
                } else {
                    per_path.iter().filter(|(hit, o)| *hit && at(o, 0).1).count() as f64 / hits as f64
                },
                delta,
                overshoot,
            }
        })
        .collect();
    Ok(FlvrReport {
        steps: (0..levels).map(|r| cfg.dt / f64::from(1u32 << r)).collect(),
        rows,
        loss_bound: 1.0 - cfg.p,
        horizon_freq: hits as f64 / cfg.paths as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NonclosednessRow {
    pub n: u32,
    /// `E[(𝟙{T−1/n < τ} + ϑⁿ·S_T)²] = (1 − p) I(1/n)`.
    pub closed_form_error: f64,
    pub mc_error: McEstimate,
    /// Squared L² distance from `−ϑⁿ·S_T` to `𝟙{τ=T}`: `(1 − p)/n − error`.
    pub closed_form_distance2: f64,
    pub mc_distance2: McEstimate,
    /// `√p`, the L² norm of the limit payoff `𝟙{τ=T}`.
    pub target_norm: f64,
}

/// Error of the strategy trading from `T − 1/n` on `{τ > T − 1/n}` in
/// replicating `𝟙{T−1/n < τ}`. Given `τ`, the squared error has mean
/// `exp(−∫μ²)` on `{T−1/n < τ < T}`, which is what each path contributes.
pub fn nonclosedness_demo(cfg: &CounterexampleConfig, n: u32) -> Result<NonclosednessRow> {
    nonclosedness_table(cfg, &[n]).map(|mut v| v.remove(0))
}

pub fn nonclosedness_table(cfg: &CounterexampleConfig, ns: &[u32]) -> Result<Vec<NonclosednessRow>> {
    for &n in ns {
        if n < 2 || 1.0 / f64::from(n) < cfg.dt {
            return Err(Error::InvalidConfig(format!("n = {n} needs n ≥ 2 and 1/n ≥ dt")));
        }
    }
    let taus = sample_taus(cfg);
    Ok(ns
        .iter()
        .map(|&n| {
            let start = HORIZON - 1.0 / f64::from(n);
            let g = |tau: f64| if tau > start { discount(start, tau) } else { 0.0 };
            let inside = |tau: f64| tau > start && tau < HORIZON;
            let closed = (1.0 - cfg.p) * tail_integral(1.0 / f64::from(n));
            NonclosednessRow {
                n,
                closed_form_error: closed,
                mc_error: McEstimate::from_samples(taus.iter().map(|&t| g(t))),
                closed_form_distance2: (1.0 - cfg.p) / f64::from(n) - closed,
                mc_distance2: McEstimate::from_samples(
                    taus.iter().map(|&t| if inside(t) { 1.0 - g(t) } else { 0.0 }),
                ),
                target_norm: cfg.p.sqrt(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AclmmReport {
    /// `E[Y]` computed exactly for the grid model.
    pub l0_grid: f64,
    /// Closed-form `L_0`.
    pub l0: f64,
    /// `E[Ẑ]`.
    pub density_mean: McEstimate,
    pub min_density: f64,
    /// Largest `|Ẑ|` on `{τ = T}`.
    pub max_density_on_horizon: f64,
    /// `E[Ẑ 𝟙{τ=T}]`.
    pub horizon_mass: f64,
    /// `(t, E[Ẑ S_t])` for the checked grid times.
    pub martingale: Vec<(f64, McEstimate)>,
    /// Pathwise `E[Ẑ²]`; heavy tailed.
    pub second_moment_pathwise: McEstimate,
    /// `E[E[Ẑ² | τ]]`, which equals `1/L_0` for the grid model.
    pub second_moment: McEstimate,
}

/// Audits `Ẑ = Y / E[Y]` with `Y = 𝓔(−∫μ dS/S)_T = exp(−∫μ dW − (3/2)∫μ² dt)`,
/// using on each grid step the constant drift that reproduces `S` exactly.
pub fn aclmm_audit(cfg: &CounterexampleConfig, check_times: &[f64]) -> Result<AclmmReport> {
    let n = cfg.steps();
    if n < 2 {
        return Err(Error::InvalidConfig("need at least two grid steps".into()));
    }
    let check: Vec<usize> = check_times.iter().map(|&t| cfg.grid_index(t)).collect::<Result<_>>()?;
    // Step drift ln((T − t_{i+1})/(T − t_i)) / dt, finite except on the last step.
    let drift: Vec<f64> = (0..n - 1).map(|i| (cfg.remaining(i + 1) / cfg.remaining(i)).ln() / cfg.dt).collect();
    let mut q_prefix = vec![0.0; n];
    for i in 0..n - 1 {
        q_prefix[i + 1] = q_prefix[i] + drift[i] * drift[i] * cfg.dt;
    }
    let l0_grid = (1.0 - cfg.p) * q_prefix.iter().map(|q| (-q).exp()).sum::<f64>() / n as f64;

    struct PathOut {
        y: f64,
        cond_y2: f64,
        hit: bool,
        s: Vec<f64>,
    }
    let outs: Vec<PathOut> = (0..cfg.paths)
        .into_par_iter()
        .map(|i| {
            let path = simulate_path(cfg, i);
            let k = path.tau_index;
            let hit = path.hits_horizon();
            let y = if hit {
                0.0
            } else {
                let g: f64 = (0..k).map(|j| drift[j] * path.dw[j]).sum();
                (-g - 1.5 * q_prefix[k]).exp()
            };
            let cond_y2 = if hit { 0.0 } else { (-q_prefix[k]).exp() };
            PathOut { y, cond_y2, hit, s: check.iter().map(|&j| path.price[j]).collect() }
        })
        .collect();

    let z = |o: &PathOut| o.y / l0_grid;
    let martingale = check_times
        .iter()
        .enumerate()
        .map(|(c, &t)| (t, McEstimate::from_samples(outs.iter().map(|o| z(o) * o.s[c]))))
        .collect();
    Ok(AclmmReport {
        l0_grid,
        l0: closed_form_l(0.0, StopState::Running, cfg.p, LVariant::Raw)?.value,
        density_mean: McEstimate::from_samples(outs.iter().map(z)),
        min_density: outs.iter().map(z).fold(f64::INFINITY, f64::min),
        max_density_on_horizon: outs.iter().filter(|o| o.hit).map(|o| z(o).abs()).fold(0.0, f64::max),
        horizon_mass: outs.iter().filter(|o| o.hit).map(z).sum::<f64>() / cfg.paths as f64,
        martingale,
        second_moment_pathwise: McEstimate::from_samples(outs.iter().map(|o| z(o).powi(2))),
        second_moment: McEstimate::from_samples(outs.iter().map(|o| o.cond_y2 / (l0_grid * l0_grid))),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlowupRow {
    pub k: u32,
    pub t_k: f64,
    /// `1/L_{t_k}` on `{τ > t_k}` for the requested variant, equal to
    /// `E[(Ẑ from t_k)² | τ > t_k]`.
    pub inv_l: f64,
}

/// `1/L` along the announcing times `t_k = 1 − 2^{−k}`.
pub fn blowup_profile(p: f64, ks: impl IntoIterator<Item = u32>, variant: LVariant) -> Result<Vec<BlowupRow>> {
    ks.into_iter()
        .map(|k| {
            let t_k = HORIZON - 0.5_f64.powi(k as i32);
            let l = closed_form_l(t_k, StopState::Running, p, variant)?.value;
            Ok(BlowupRow { k, t_k, inv_l: 1.0 / l })
        })
        .collect()
}
