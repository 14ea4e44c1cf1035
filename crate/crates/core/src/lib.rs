//! Quadratic hedging and mean–variance portfolio selection on finite event
//! trees, with law-of-one-price audits through signed state price densities
//! and a Monte Carlo lab for a continuous-time market in which the law of one
//! price fails from just before the horizon.

pub mod counterexample;
pub mod error;
pub mod frontier;
pub mod hedging;
pub mod linalg;
pub mod oracle;
pub mod quadrature;
pub mod random;
pub mod spd;
pub mod tree;

pub use counterexample::{CounterexampleConfig, LVariant, McEstimate, PathBundle, StopState};
pub use error::{Error, Result};
pub use frontier::{
    frontier_payoff, frontier_variance, max_sharpe, sharpe_attainment, sharpe_by_stop, FrontierParams,
    SharpeResult,
};
pub use hedging::{
    compute_hedge, compute_opportunity, hedge_payoff, simulate_feedback, verify_candidate_opportunity,
    verify_orthogonality, CandidateCheck, FeedbackRun, HedgingSolution, OpportunityLayer, StopDecomposition,
};
pub use oracle::{oracle_mean_value, oracle_opportunity, project_brute_force, ProjectionResult};
pub use spd::{audit_spd, build_vo_spd, lop_verdict, LopVerdict, SpdAudit, StatePriceDensityFamily};
pub use tree::{
    check_stopping_time, cond_expect, validate_tree, AdaptedProcess, ClaimSpec, EventTree, MarketBuilder, NodeSpec,
    StopMap, StoppingTime, ValidationReport,
};
