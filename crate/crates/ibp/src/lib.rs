//! Intraday block pricing tariff design.
//!
//! A block tariff charges each intraday time slot in consumption blocks of
//! increasing price. This library designs such tariffs end to end:
//!
//! - [`scenario`] loads and validates market scenarios (cluster baselines,
//!   wholesale rates, tariff parameters) and derives the flat reference
//!   price and baseline peak-to-average ratio;
//! - [`response`] solves the consumers' cost-minimizing demand response to a
//!   given tariff, recovers dual variables, and checks optimality residuals;
//! - [`milp`] assembles the single-level mixed-integer program whose
//!   solutions are tariffs with a certified-optimal consumer response;
//! - [`bb`] solves those models exactly with a bounded-variable simplex and
//!   branch-and-bound over the complementarity indicators;
//! - [`search`] runs increment sweeps, computes a theoretical PAR lower
//!   bound, and cross-checks results against a breakpoint grid oracle;
//! - [`report`] evaluates the economic metrics and writes result files;
//! - [`mps`] exports models in the MPS exchange format;
//! - [`synth`] generates deterministic synthetic scenarios.
//!
//! The walkthrough in `book/` covers the same ground chapter by chapter; its
//! code listings compile and run as documentation tests of this crate.

pub mod bb;
pub mod error;
pub mod milp;
pub mod mps;
pub mod report;
pub mod response;
pub mod scenario;
pub mod search;
pub mod simplex;
pub mod synth;

mod book;

pub use error::{Error, Result};
pub use milp::{build_milp, compute_big_m, extract_solution, validate_big_m, BigMSet, MilpModel};
pub use report::{metrics, SolutionReport};
pub use response::{
    block_bill, brute_force_response, kkt_residual, solve_response, DemandResponse, DualSolution,
};
pub use scenario::{
    baseline_block_split, default_breakpoint_bounds, derive, flat_price, load_scenario,
    ClusterProfile, PriceStructure, ScenarioConfig, ScenarioDerived,
};
pub use search::{lower_bound, oracle_grid, sweep, LowerBoundResult, SweepSpec};
