//! Outer search procedures: the increment sweep, the theoretical PAR lower
//! bound, and an independent breakpoint grid oracle.
//!
//! The sweep fixes the price increment at each grid point, builds and solves
//! the MILP, and reports metrics; failures are isolated per point. The lower
//! bound exploits that a two-block tariff with a punitive increment drives
//! consumers to exhaust their shifting below the first breakpoint, so
//! stepping that breakpoint across its range and taking the smallest
//! resulting peak bounds every attainable PAR from below, with envelope
//! bands recording the attainable demand range. The grid oracle enumerates
//! breakpoints directly, exploiting that the response is invariant to the
//! base price: for each grid point it derives the feasible base-price
//! interval in closed form and keeps the best feasible PAR.

use crate::bb::{incumbent_from_breakpoints, solve, SolveOptions, SolveOutcome};
use crate::error::{Error, Result};
use crate::milp::{build_milp, compute_big_m, extract_solution, overflow_term};
use crate::report::{metrics, EnvelopeBands, SolutionReport, SolverSummary, SweepPoint};
use crate::response::{solve_response, DEFAULT_TOL};
use crate::scenario::{
    default_breakpoint_bounds, derive, flat_price, PriceStructure, ScenarioConfig,
};

/// Grid of increments and block counts to solve.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    /// Increment values, nonnegative and ascending.
    pub xi_values: Vec<f64>,
    /// Block counts to test.
    pub block_counts: Vec<usize>,
    pub options: SolveOptions,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.xi_values.is_empty() || self.block_counts.is_empty() {
            return Err(Error::Model("sweep grid is empty".into()));
        }
        let mut last = -1.0;
        for &xi in &self.xi_values {
            if !(xi >= 0.0 && xi.is_finite()) {
                return Err(Error::Model("increments must be nonnegative".into()));
            }
            if xi <= last {
                return Err(Error::Model("increments must be strictly ascending".into()));
            }
            last = xi;
        }
        if self.block_counts.iter().any(|&f| f < 2) {
            return Err(Error::Model("block counts must be at least 2".into()));
        }
        Ok(())
    }
}

fn summarize(outcome: &SolveOutcome) -> SolverSummary {
    SolverSummary {
        status: outcome.status.to_string(),
        bound: outcome.bound,
        gap: outcome.gap,
        node_count: outcome.node_count,
        lp_count: outcome.lp_count,
    }
}

/// Solves one (xi, F) grid point end to end.
fn solve_point(
    cfg: &ScenarioConfig,
    xi: f64,
    blocks: usize,
    options: &SolveOptions,
    warm: Option<&[f64]>,
) -> Result<(SolutionReport, SolveOutcome, Vec<f64>)> {
    let mut point_cfg = cfg.clone();
    point_cfg.block_count = blocks;
    let big_m = compute_big_m(&point_cfg, xi)?;
    let model = build_milp(&point_cfg, xi, &big_m)?;
    let outcome = solve(&model, options, warm)?;
    let Some(assignment) = outcome.assignment.clone() else {
        return Err(Error::Model(format!("solver finished {}", outcome.status)));
    };
    let (prices, response, _, _) = extract_solution(&model, &assignment)?;
    let mut report = metrics(&point_cfg, &prices, &response)?;
    report.solver = Some(summarize(&outcome));
    Ok((report, outcome, assignment))
}

/// Runs the full sweep. Failures are recorded per point and never abort the
/// batch; result order follows the input grid.
pub fn sweep(cfg: &ScenarioConfig, spec: &SweepSpec) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    spec.validate()?;
    let mut out = Vec::new();
    for &blocks in &spec.block_counts {
        // Within one block count, chain the previous optimum's breakpoints
        // as a warm incumbent for the next increment.
        let mut carry_q: Option<Vec<f64>> = None;
        for &xi in &spec.xi_values {
            let warm_x = carry_q.as_ref().and_then(|q| {
                let mut point_cfg = cfg.clone();
                point_cfg.block_count = blocks;
                let big_m = compute_big_m(&point_cfg, xi).ok()?;
                let model = build_milp(&point_cfg, xi, &big_m).ok()?;
                incumbent_from_breakpoints(&model, q)
            });
            match solve_point(cfg, xi, blocks, &spec.options, warm_x.as_deref()) {
                Ok((report, _, _)) => {
                    carry_q = Some(report.prices.breakpoints.clone());
                    out.push(SweepPoint {
                        xi,
                        blocks,
                        outcome: Ok(report),
                    });
                }
                Err(e) => out.push(SweepPoint {
                    xi,
                    blocks,
                    outcome: Err(e.to_string()),
                }),
            }
        }
    }
    Ok(out)
}

/// One step of the lower-bound iteration.
#[derive(Debug, Clone, Copy)]
pub struct LowerBoundStep {
    pub q1: f64,
    pub peak: f64,
    pub par: f64,
}

/// Lower bound on the attainable PAR plus the envelope bands.
#[derive(Debug, Clone)]
pub struct LowerBoundResult {
    pub par_lower: f64,
    /// Breakpoint attaining the bound.
    pub q1_star: f64,
    pub per_iteration: Vec<LowerBoundStep>,
    pub envelopes: EnvelopeBands,
    /// Increment used for the punitive second block.
    pub xi_large: f64,
    /// Set when the step size collapses the iteration to the endpoints.
    pub degenerate_step: bool,
}

/// Default punitive increment: twice the steepest marginal shifting cost
/// plus ten flat prices, so the block-price saving dominates any shifting
/// cost and consumers exhaust their flexibility below the breakpoint.
pub fn default_xi_large(cfg: &ScenarioConfig) -> Result<f64> {
    let steepest = cfg
        .clusters
        .iter()
        .map(|c| c.tau * 2.0 * c.sigma * c.max_baseline())
        .fold(0.0, f64::max);
    Ok(2.0 * steepest + 10.0 * flat_price(cfg)?)
}

/// Iterates the first breakpoint across its range under a punitive
/// increment and records peaks and attainable-demand envelopes.
pub fn lower_bound(cfg: &ScenarioConfig, eps: f64, xi_large: f64) -> Result<LowerBoundResult> {
    cfg.validate()?;
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Model("eps must be positive".into()));
    }
    let derived = derive(cfg)?;
    let (q_lo, q_hi) = default_breakpoint_bounds(cfg);
    let degenerate_step = eps >= q_hi - q_lo;
    if (q_hi - q_lo) / eps > 2e5 {
        return Err(Error::Model(format!(
            "step {eps:e} over span {:e} needs more than 200000 iterations",
            q_hi - q_lo
        )));
    }

    let mut cfg2 = cfg.clone();
    cfg2.block_count = 2;

    let mut q_values = Vec::new();
    let mut q = q_lo;
    while q < q_hi {
        q_values.push(q);
        q += eps;
    }
    q_values.push(q_hi);

    let slots = cfg.horizon;
    let nclusters = cfg.cluster_count();
    let mean = derived.total_demand / slots as f64;

    let mut per_iteration = Vec::with_capacity(q_values.len());
    let mut env_lo = vec![f64::INFINITY; slots * nclusters];
    let mut env_hi = vec![f64::NEG_INFINITY; slots * nclusters];
    let mut agg_lo = vec![f64::INFINITY; slots];
    let mut agg_hi = vec![f64::NEG_INFINITY; slots];
    let mut best: Option<(f64, f64)> = None; // (peak, q1)

    for &q1 in &q_values {
        let prices = PriceStructure::new(0.0, xi_large, vec![q1]);
        let (resp, _) = solve_response(&cfg2, &prices, DEFAULT_TOL)?;
        let mut peak = 0.0f64;
        for t in 0..slots {
            let mut aggregate = 0.0;
            for (c, cluster) in cfg.clusters.iter().enumerate() {
                let served = resp.total(t, c);
                let i = t * nclusters + c;
                env_lo[i] = env_lo[i].min(served);
                env_hi[i] = env_hi[i].max(served);
                aggregate += cluster.n as f64 * served;
            }
            agg_lo[t] = agg_lo[t].min(aggregate);
            agg_hi[t] = agg_hi[t].max(aggregate);
            peak = peak.max(aggregate);
        }
        per_iteration.push(LowerBoundStep {
            q1,
            peak,
            par: peak / mean,
        });
        if best.is_none_or(|(p, _)| peak < p - 1e-15) {
            best = Some((peak, q1));
        }
    }

    let (best_peak, q1_star) = best.expect("at least one iteration");
    Ok(LowerBoundResult {
        par_lower: best_peak / mean,
        q1_star,
        per_iteration,
        envelopes: EnvelopeBands {
            per_cluster_lower: env_lo,
            per_cluster_upper: env_hi,
            aggregate_lower: agg_lo,
            aggregate_upper: agg_hi,
        },
        xi_large,
        degenerate_step,
    })
}

/// Result of the breakpoint grid oracle.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub report: SolutionReport,
    /// Winning breakpoints.
    pub breakpoints: Vec<f64>,
    /// Feasible base-price interval at the winner.
    pub lambda1_interval: (f64, f64),
    pub grid_points: usize,
    pub feasible_points: usize,
}

/// Feasible base-price interval for a response at fixed breakpoints:
/// revenue adequacy bounds it from below, bill protection from above.
fn lambda1_interval(
    cfg: &ScenarioConfig,
    xi: f64,
    q: &[f64],
    resp: &crate::response::DemandResponse,
    lambda_o: f64,
    total_demand: f64,
) -> (f64, f64) {
    let blocks = q.len() + 1;
    let mut revenue_gap = 0.0;
    for t in 0..cfg.horizon {
        for (c, cluster) in cfg.clusters.iter().enumerate() {
            let n = cluster.n as f64;
            for f in 0..blocks {
                revenue_gap += n
                    * (cfg.rate_of_return * cfg.wholesale_rates[t] - xi * f as f64)
                    * resp.block(t, c, f);
            }
        }
    }
    let lo = (revenue_gap / total_demand).max(0.0);
    let mut hi = f64::INFINITY;
    for cluster in &cfg.clusters {
        let base_total: f64 = cluster.baseline.iter().sum();
        if base_total <= 0.0 {
            continue;
        }
        let overflow: f64 = cluster.baseline.iter().map(|&d| overflow_term(d, q)).sum();
        hi = hi.min(lambda_o - xi * overflow / base_total);
    }
    (lo, hi)
}

/// Enumerates breakpoints on a grid, keeping the best PAR among points whose
/// base-price interval is nonempty. Supports two and three blocks.
pub fn oracle_grid(
    cfg: &ScenarioConfig,
    xi: f64,
    blocks: usize,
    q_step: f64,
) -> Result<OracleResult> {
    cfg.validate()?;
    if q_step.is_nan() || q_step <= 0.0 {
        return Err(Error::Model("q_step must be positive".into()));
    }
    if blocks != 2 && blocks != 3 {
        return Err(Error::Model(
            "the grid oracle supports two or three blocks".into(),
        ));
    }
    let mut cfg2 = cfg.clone();
    cfg2.block_count = blocks;
    let derived = derive(&cfg2)?;
    let (q_lo, q_hi) = default_breakpoint_bounds(&cfg2);
    let mean = derived.total_demand / cfg.horizon as f64;

    let axis_points = (q_hi - q_lo) / q_step + 2.0;
    let grid_size = if blocks == 2 {
        axis_points
    } else {
        axis_points * axis_points
    };
    if grid_size > 2e5 {
        return Err(Error::Model(format!(
            "q_step {q_step:e} yields {grid_size:e} grid points; refusing beyond 200000"
        )));
    }

    let mut axis = Vec::new();
    let mut q = q_lo;
    while q < q_hi {
        axis.push(q);
        q += q_step;
    }
    axis.push(q_hi);

    let grid: Vec<Vec<f64>> = if blocks == 2 {
        axis.iter().map(|&a| vec![a]).collect()
    } else {
        let mut g = Vec::with_capacity(axis.len() * axis.len());
        for &a in &axis {
            for &b in &axis {
                g.push(vec![a, b]);
            }
        }
        g
    };

    let mut best: Option<(f64, Vec<f64>, (f64, f64))> = None;
    let mut feasible_points = 0usize;
    let mut nearest_shortfall = f64::INFINITY;
    let mut nearest_q = Vec::new();

    for q in &grid {
        let probe = PriceStructure::new(0.0, xi, q.clone());
        let (resp, _) = solve_response(&cfg2, &probe, DEFAULT_TOL)?;
        let (lo, hi) = lambda1_interval(
            &cfg2,
            xi,
            q,
            &resp,
            derived.flat_price,
            derived.total_demand,
        );
        if lo > hi + 1e-12 {
            let shortfall = lo - hi;
            if shortfall < nearest_shortfall {
                nearest_shortfall = shortfall;
                nearest_q = q.clone();
            }
            continue;
        }
        feasible_points += 1;
        let par = resp.peak(&cfg2) / mean;
        if best.as_ref().is_none_or(|(p, _, _)| par < p - 1e-15) {
            best = Some((par, q.clone(), (lo, hi)));
        }
    }

    let Some((_, q_best, interval)) = best else {
        return Err(Error::EmptyOracleGrid {
            shortfall: nearest_shortfall,
            nearest: nearest_q,
        });
    };

    let lambda1 = 0.5 * (interval.0 + interval.1.min(derived.flat_price));
    let prices = PriceStructure::new(lambda1, xi, q_best.clone());
    let (resp, _) = solve_response(&cfg2, &prices, DEFAULT_TOL)?;
    let report = metrics(&cfg2, &prices, &resp)?;
    Ok(OracleResult {
        report,
        breakpoints: q_best,
        lambda1_interval: interval,
        grid_points: grid.len(),
        feasible_points,
    })
}
