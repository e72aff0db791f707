//! Consumer demand response to a block tariff.
//!
//! Each cluster minimizes its bill plus a quadratic shifting cost subject to
//! per-slot shift limits and energy neutrality over the horizon. The solver
//! dualizes the single coupling constraint (the neutrality equality) with a
//! multiplier `eta`; for fixed `eta` every slot reduces to a one-dimensional
//! convex minimization over a box, solved exactly by walking the piecewise
//! structure of the block bill. The aggregate shift is monotone in `eta`, so
//! a bisection recovers the neutral point. Dual variables are reconstructed
//! from the per-slot optimality conditions, and [`kkt_residual`] measures how
//! close any primal/dual pair is to stationarity, complementarity, and
//! feasibility.

use crate::error::{Error, Result};
use crate::scenario::{baseline_block_split, ClusterProfile, PriceStructure, ScenarioConfig};

/// Bisection iteration cap for the neutrality multiplier.
const BISECTION_CAP: usize = 200;

/// Default neutrality tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Cap on brute-force enumeration points per cluster.
const ENUMERATION_CAP: f64 = 1e7;

/// Block-level demand response for every (slot, cluster) pair.
#[derive(Debug, Clone)]
pub struct DemandResponse {
    pub(crate) slots: usize,
    pub(crate) clusters: usize,
    pub(crate) blocks: usize,
    /// d^s indexed by ((t * C) + c) * F + f, kWh per consumer.
    pub block_demand: Vec<f64>,
    /// Signed shift per (t, c), kWh per consumer.
    pub shift: Vec<f64>,
    /// Collective objective: total bill plus shifting cost (currency).
    pub objective_value: f64,
}

impl DemandResponse {
    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn block(&self, t: usize, c: usize, f: usize) -> f64 {
        self.block_demand[(t * self.clusters + c) * self.blocks + f]
    }

    pub fn shift_at(&self, t: usize, c: usize) -> f64 {
        self.shift[t * self.clusters + c]
    }

    /// Total per-consumer demand served at (t, c).
    pub fn total(&self, t: usize, c: usize) -> f64 {
        (0..self.blocks).map(|f| self.block(t, c, f)).sum()
    }

    /// Consumer-weighted aggregate demand at slot t.
    pub fn aggregate(&self, cfg: &ScenarioConfig, t: usize) -> f64 {
        cfg.clusters
            .iter()
            .enumerate()
            .map(|(c, cl)| cl.n as f64 * self.total(t, c))
            .sum()
    }

    /// Peak of the consumer-weighted aggregate profile.
    pub fn peak(&self, cfg: &ScenarioConfig) -> f64 {
        (0..self.slots)
            .map(|t| self.aggregate(cfg, t))
            .fold(0.0, f64::max)
    }
}

/// Dual variables of the lower-level problem.
#[derive(Debug, Clone)]
pub struct DualSolution {
    #[allow(dead_code)]
    pub(crate) slots: usize,
    pub(crate) clusters: usize,
    pub(crate) blocks: usize,
    /// Balance multiplier per (t, c).
    pub rho: Vec<f64>,
    /// Lower block bound multipliers, ((t * C) + c) * F + f.
    pub mu_minus: Vec<f64>,
    /// Upper block bound multipliers, ((t * C) + c) * (F - 1) + f.
    pub mu_plus: Vec<f64>,
    /// Shift lower bound multiplier per (t, c).
    pub phi_minus: Vec<f64>,
    /// Shift upper bound multiplier per (t, c).
    pub phi_plus: Vec<f64>,
    /// Neutrality multiplier per cluster.
    pub eta: Vec<f64>,
}

impl DualSolution {
    pub fn rho_at(&self, t: usize, c: usize) -> f64 {
        self.rho[t * self.clusters + c]
    }

    pub fn mu_minus_at(&self, t: usize, c: usize, f: usize) -> f64 {
        self.mu_minus[(t * self.clusters + c) * self.blocks + f]
    }

    pub fn mu_plus_at(&self, t: usize, c: usize, f: usize) -> f64 {
        self.mu_plus[(t * self.clusters + c) * (self.blocks - 1) + f]
    }

    pub fn phi_minus_at(&self, t: usize, c: usize) -> f64 {
        self.phi_minus[t * self.clusters + c]
    }

    pub fn phi_plus_at(&self, t: usize, c: usize) -> f64 {
        self.phi_plus[t * self.clusters + c]
    }
}

/// Response of a single cluster, slot-major.
#[derive(Debug, Clone)]
pub struct ClusterResponse {
    /// Shift per slot, kWh per consumer.
    pub shift: Vec<f64>,
    /// Block demand, t * F + f.
    pub blocks: Vec<f64>,
    /// Cluster objective (n-weighted bill plus shifting cost).
    pub objective: f64,
}

/// Duals of a single cluster, slot-major.
#[derive(Debug, Clone)]
pub struct ClusterDuals {
    pub rho: Vec<f64>,
    pub mu_minus: Vec<f64>,
    pub mu_plus: Vec<f64>,
    pub phi_minus: Vec<f64>,
    pub phi_plus: Vec<f64>,
    pub eta: f64,
}

/// Bill for serving `demand` kWh in one slot under the block ladder:
/// blocks fill greedily from the cheapest, so the bill is the convex
/// piecewise-linear increasing-block tariff.
pub fn block_bill(demand: f64, prices: &PriceStructure) -> f64 {
    let split = baseline_block_split(demand, &prices.breakpoints);
    split
        .iter()
        .enumerate()
        .map(|(f, d)| prices.price(f) * d)
        .sum()
}

/// Slope of the bill at served quantity `s` approached from below/above:
/// the marginal block price. Below zero consumption only the first block
/// price is relevant.
fn marginal_price_range(s: f64, prices: &PriceStructure) -> (f64, f64) {
    let blocks = prices.block_count();
    if s <= 0.0 {
        return (f64::NEG_INFINITY, prices.price(0));
    }
    let kink_eps = 1e-12 * s.max(1.0);
    let mut cumulative = 0.0;
    for f in 0..blocks - 1 {
        let next = cumulative + prices.breakpoints[f];
        if (s - next).abs() <= kink_eps {
            return (prices.price(f), prices.price(f + 1));
        }
        if s < next {
            return (prices.price(f), prices.price(f));
        }
        cumulative = next;
    }
    let top = prices.price(blocks - 1);
    (top, top)
}

/// Per-slot state used repeatedly during the bisection.
struct Slot {
    base: f64,
    lo: f64,
    hi: f64,
}

/// Exact minimizer of
///   n·bill(base + x) + (n·tau/2)·x² + eta·x
/// over x in [lo, hi], found by walking the bill's segments: the objective is
/// convex, so the minimizer is where the subgradient crosses zero. No value
/// comparisons are involved, which keeps the choice stable under price
/// translations.
fn slot_minimizer(slot: &Slot, n: f64, tau: f64, prices: &PriceStructure, eta: f64) -> f64 {
    let blocks = prices.block_count();
    let slope = |price: f64, x: f64| n * price + n * tau * x + eta;

    if slot.hi - slot.lo <= 0.0 {
        return slot.lo;
    }

    // Segment f covers served quantity [cum_prev, cum_next).
    let mut cum_prev = 0.0;
    for f in 0..blocks {
        let cum_next = if f + 1 < blocks {
            cum_prev + prices.breakpoints[f]
        } else {
            f64::INFINITY
        };
        let xa = (cum_prev - slot.base).max(slot.lo);
        let xb = (cum_next - slot.base).min(slot.hi);
        if xb < slot.lo {
            cum_prev = cum_next;
            continue;
        }
        if xa > slot.hi {
            break;
        }
        if xa <= xb {
            let price = prices.price(f);
            let right = slope(price, xb);
            if right <= 0.0 {
                cum_prev = cum_next;
                continue;
            }
            let left = slope(price, xa);
            if left >= 0.0 {
                return xa;
            }
            // left < 0 < right requires curvature, i.e. tau > 0.
            return -(eta + n * price) / (n * tau);
        }
        cum_prev = cum_next;
    }
    slot.hi
}

/// Minimizer interval of the slot objective at a critical multiplier where
/// the block with price `level` has zero slope (tau = 0 case).
fn slot_interval_at_level(slot: &Slot, prices: &PriceStructure, level: f64) -> (f64, f64) {
    let blocks = prices.block_count();
    let mut start = 0.0;
    let mut seg_lo = f64::INFINITY;
    let mut seg_hi = f64::NEG_INFINITY;
    for f in 0..blocks {
        let end = if f + 1 < blocks {
            start + prices.breakpoints[f]
        } else {
            f64::INFINITY
        };
        if prices.price(f) == level {
            seg_lo = seg_lo.min(start);
            seg_hi = seg_hi.max(end);
        }
        start = end;
    }
    if seg_lo > seg_hi {
        // Level not on the ladder: the minimizer is unique, fall back to it.
        let x = slot_minimizer(slot, 1.0, 0.0, prices, -level);
        return (x, x);
    }
    let a = (seg_lo - slot.base).clamp(slot.lo, slot.hi);
    let b = (seg_hi - slot.base).clamp(slot.lo, slot.hi);
    (a, b)
}

fn cluster_slots(cluster: &ClusterProfile) -> Vec<Slot> {
    cluster
        .baseline
        .iter()
        .map(|&d| Slot {
            base: d,
            lo: -cluster.sigma * d,
            hi: cluster.sigma * d,
        })
        .collect()
}

/// Solves one cluster's response. Returns the primal block/shift solution
/// and duals recovered from the per-slot optimality conditions; the result
/// satisfies the KKT system to within an order of magnitude of `tol`.
pub fn solve_cluster_response(
    cluster: &ClusterProfile,
    prices: &PriceStructure,
    tol: f64,
) -> Result<(ClusterResponse, ClusterDuals)> {
    assert!(tol > 0.0, "tolerance must be positive");
    let n = cluster.n as f64;
    let tau = cluster.tau;
    let slots = cluster_slots(cluster);

    let shift_span: f64 = slots.iter().map(|s| s.hi - s.lo).sum();
    let (shift, eta) = if shift_span <= 0.0 {
        (vec![0.0; slots.len()], 0.0)
    } else if tau > 0.0 {
        bisect_quadratic(&slots, n, tau, prices, tol)?
    } else {
        solve_linear_cost(&slots, n, prices, tol)?
    };

    Ok(assemble_cluster(cluster, prices, &slots, shift, eta))
}

/// Bisection on the neutrality multiplier for strictly convex shifting cost.
fn bisect_quadratic(
    slots: &[Slot],
    n: f64,
    tau: f64,
    prices: &PriceStructure,
    tol: f64,
) -> Result<(Vec<f64>, f64)> {
    let max_span = slots.iter().map(|s| s.hi).fold(0.0, f64::max);
    let magnitude = n * prices.top_price().abs() + n * tau * max_span + 1.0;
    let mut lo = -magnitude;
    let mut hi = magnitude;

    let eval = |eta: f64| -> (Vec<f64>, f64) {
        let xs: Vec<f64> = slots
            .iter()
            .map(|s| slot_minimizer(s, n, tau, prices, eta))
            .collect();
        let sum = xs.iter().sum();
        (xs, sum)
    };

    // Aggregate shift is nonincreasing in eta with this sign convention;
    // the bracket ends saturate every slot at its bound. The width target
    // sits far below the neutrality tolerance so per-slot values are
    // reproducible and downstream certificates see only float-level
    // residuals.
    let width_target = (n * tau * tol * 1e-5).max(magnitude * 1e-16);
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    for _ in 0..BISECTION_CAP {
        let mid = 0.5 * (lo + hi);
        let (xs, sum) = eval(mid);
        if best.as_ref().is_none_or(|(_, s, _)| sum.abs() < s.abs()) {
            best = Some((xs.clone(), sum, mid));
        }
        if sum.abs() <= tol && hi - lo <= width_target {
            return Ok((xs, mid));
        }
        if sum > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= width_target {
            let (xs, sum) = eval(0.5 * (lo + hi));
            if sum.abs() <= tol {
                return Ok((xs, 0.5 * (lo + hi)));
            }
        }
    }
    let (_, residual, _) = best.as_ref().unwrap();
    Err(Error::NonConvergence {
        cluster: usize::MAX,
        iterations: BISECTION_CAP,
        residual: *residual,
    })
}

/// Zero shifting cost: the aggregate shift is a step function of the
/// multiplier, jumping only at the ladder prices. Locate the crossing level,
/// then pick the minimum-norm selection from the per-slot optimal intervals
/// by a second bisection.
fn solve_linear_cost(
    slots: &[Slot],
    n: f64,
    prices: &PriceStructure,
    tol: f64,
) -> Result<(Vec<f64>, f64)> {
    let mut levels: Vec<f64> = (0..prices.block_count()).map(|f| prices.price(f)).collect();
    levels.dedup();

    let eval_sum = |eta: f64| -> f64 {
        slots
            .iter()
            .map(|s| slot_minimizer(s, n, 0.0, prices, eta))
            .sum()
    };

    // Multiplier intervals between critical values -n*level, descending level
    // order gives ascending eta. Sample each open interval.
    let gap = |a: f64, b: f64| 0.5 * (a + b);
    let mut crossing: Option<f64> = None;
    let first_eta = -n * levels[levels.len() - 1] - 1.0;
    let mut prev_sum = eval_sum(first_eta);
    if prev_sum.abs() <= tol {
        let xs = slots
            .iter()
            .map(|s| slot_minimizer(s, n, 0.0, prices, first_eta))
            .collect();
        return Ok((xs, first_eta));
    }
    for idx in (0..levels.len()).rev() {
        let eta_c = -n * levels[idx];
        let next_eta = if idx == 0 {
            eta_c + 1.0
        } else {
            gap(eta_c, -n * levels[idx - 1])
        };
        let next_sum = eval_sum(next_eta);
        if next_sum.abs() <= tol {
            let xs = slots
                .iter()
                .map(|s| slot_minimizer(s, n, 0.0, prices, next_eta))
                .collect();
            return Ok((xs, next_eta));
        }
        if prev_sum > 0.0 && next_sum < 0.0 {
            crossing = Some(levels[idx]);
            break;
        }
        prev_sum = next_sum;
    }
    let level = crossing.ok_or(Error::NonConvergence {
        cluster: usize::MAX,
        iterations: 0,
        residual: prev_sum,
    })?;

    // Minimum-norm selection: x_t = clamp(nu, a_t, b_t) with nu chosen so the
    // selection is neutral; the clipped sum is continuous and nondecreasing.
    let intervals: Vec<(f64, f64)> = slots
        .iter()
        .map(|s| slot_interval_at_level(s, prices, level))
        .collect();
    let mut nu_lo = intervals.iter().map(|i| i.0).fold(0.0, f64::min);
    let mut nu_hi = intervals.iter().map(|i| i.1).fold(0.0, f64::max);
    let selection_sum = |nu: f64| -> f64 { intervals.iter().map(|&(a, b)| nu.clamp(a, b)).sum() };
    let mut nu = 0.0;
    let floor = 1e-14 * (1.0 + nu_hi.abs().max(nu_lo.abs()));
    for _ in 0..BISECTION_CAP {
        nu = 0.5 * (nu_lo + nu_hi);
        let sum = selection_sum(nu);
        if sum.abs() <= floor || nu_hi - nu_lo <= floor {
            break;
        }
        if sum > 0.0 {
            nu_hi = nu;
        } else {
            nu_lo = nu;
        }
    }
    let xs: Vec<f64> = intervals.iter().map(|&(a, b)| nu.clamp(a, b)).collect();
    let residual: f64 = xs.iter().sum();
    if residual.abs() > tol {
        return Err(Error::NonConvergence {
            cluster: usize::MAX,
            iterations: BISECTION_CAP,
            residual,
        });
    }
    Ok((xs, -n * level))
}

/// Recovers the canonical dual variables and packages the cluster solution.
fn assemble_cluster(
    cluster: &ClusterProfile,
    prices: &PriceStructure,
    slots: &[Slot],
    shift: Vec<f64>,
    eta: f64,
) -> (ClusterResponse, ClusterDuals) {
    let n = cluster.n as f64;
    let tau = cluster.tau;
    let nblocks = prices.block_count();
    let horizon = slots.len();

    let mut blocks = Vec::with_capacity(horizon * nblocks);
    let mut rho = Vec::with_capacity(horizon);
    let mut mu_minus = Vec::with_capacity(horizon * nblocks);
    let mut mu_plus = Vec::with_capacity(horizon * (nblocks - 1));
    let mut phi_minus = Vec::with_capacity(horizon);
    let mut phi_plus = Vec::with_capacity(horizon);
    let mut objective = 0.0;

    for (slot, &x) in slots.iter().zip(&shift) {
        let served = slot.base + x;
        let split = baseline_block_split(served, &prices.breakpoints);
        objective += n * block_bill(served, prices) + 0.5 * n * tau * x * x;

        // Marginal price pi certifying the block split; minimal-magnitude
        // duals follow from stationarity.
        let (pi_lo, pi_hi) = marginal_price_range(served, prices);
        let target = -(eta + n * tau * x) / n;
        let pi = target.clamp(pi_lo, pi_hi);

        rho.push(-n * pi);
        for f in 0..nblocks {
            let delta = n * (pi - prices.price(f));
            if f + 1 < nblocks {
                if delta >= 0.0 {
                    mu_plus.push(delta);
                    mu_minus.push(0.0);
                } else {
                    mu_plus.push(0.0);
                    mu_minus.push(-delta);
                }
            } else {
                mu_minus.push((-delta).max(0.0));
            }
        }
        let diff = n * tau * x + eta + n * pi;
        phi_minus.push(diff.max(0.0));
        phi_plus.push((-diff).max(0.0));
        blocks.extend_from_slice(&split);
    }

    (
        ClusterResponse {
            shift,
            blocks,
            objective,
        },
        ClusterDuals {
            rho,
            mu_minus,
            mu_plus,
            phi_minus,
            phi_plus,
            eta,
        },
    )
}

/// Per-cluster solve, exposed for callers that post-process individual
/// cluster solutions before combining them.
pub(crate) fn solve_response_parts(
    cfg: &ScenarioConfig,
    prices: &PriceStructure,
    tol: f64,
) -> Result<Vec<(ClusterResponse, ClusterDuals)>> {
    let mut per_cluster = Vec::with_capacity(cfg.cluster_count());
    for (c, cluster) in cfg.clusters.iter().enumerate() {
        let solved = solve_cluster_response(cluster, prices, tol).map_err(|e| match e {
            Error::NonConvergence {
                iterations,
                residual,
                ..
            } => Error::NonConvergence {
                cluster: c,
                iterations,
                residual,
            },
            other => other,
        })?;
        per_cluster.push(solved);
    }
    Ok(per_cluster)
}

/// Stitches per-cluster solutions into the (slot, cluster) layout.
pub(crate) fn combine_parts(
    cfg: &ScenarioConfig,
    nblocks: usize,
    per_cluster: Vec<(ClusterResponse, ClusterDuals)>,
) -> (DemandResponse, DualSolution) {
    let horizon = cfg.horizon;
    let nclusters = cfg.cluster_count();
    let mut response = DemandResponse {
        slots: horizon,
        clusters: nclusters,
        blocks: nblocks,
        block_demand: vec![0.0; horizon * nclusters * nblocks],
        shift: vec![0.0; horizon * nclusters],
        objective_value: 0.0,
    };
    let mut duals = DualSolution {
        slots: horizon,
        clusters: nclusters,
        blocks: nblocks,
        rho: vec![0.0; horizon * nclusters],
        mu_minus: vec![0.0; horizon * nclusters * nblocks],
        mu_plus: vec![0.0; horizon * nclusters * (nblocks - 1)],
        phi_minus: vec![0.0; horizon * nclusters],
        phi_plus: vec![0.0; horizon * nclusters],
        eta: vec![0.0; nclusters],
    };

    for (c, (resp, dual)) in per_cluster.into_iter().enumerate() {
        response.objective_value += resp.objective;
        duals.eta[c] = dual.eta;
        for t in 0..horizon {
            let tc = t * nclusters + c;
            response.shift[tc] = resp.shift[t];
            duals.rho[tc] = dual.rho[t];
            duals.phi_minus[tc] = dual.phi_minus[t];
            duals.phi_plus[tc] = dual.phi_plus[t];
            for f in 0..nblocks {
                response.block_demand[tc * nblocks + f] = resp.blocks[t * nblocks + f];
                duals.mu_minus[tc * nblocks + f] = dual.mu_minus[t * nblocks + f];
            }
            for f in 0..nblocks - 1 {
                duals.mu_plus[tc * (nblocks - 1) + f] = dual.mu_plus[t * (nblocks - 1) + f];
            }
        }
    }
    (response, duals)
}

/// Solves every cluster independently and concatenates the results.
pub fn solve_response(
    cfg: &ScenarioConfig,
    prices: &PriceStructure,
    tol: f64,
) -> Result<(DemandResponse, DualSolution)> {
    let parts = solve_response_parts(cfg, prices, tol)?;
    Ok(combine_parts(cfg, prices.block_count(), parts))
}

/// With zero shifting cost the cluster optimum is a face, not a point: any
/// selection from the per-slot intervals at the crossing price level that
/// stays energy neutral is optimal. This picks the selection that fills the
/// cheapest slots (by `weights`) first, which maximizes the revenue slack of
/// the upper level without changing the consumer cost or the served cap.
pub(crate) fn reselect_zero_cost_cluster(
    cluster: &ClusterProfile,
    prices: &PriceStructure,
    eta: f64,
    weights: &[f64],
    tol: f64,
) -> Option<(ClusterResponse, ClusterDuals)> {
    if cluster.tau != 0.0 {
        return None;
    }
    let n = cluster.n as f64;
    let level = -eta / n;
    let slots = cluster_slots(cluster);
    let intervals: Vec<(f64, f64)> = slots
        .iter()
        .map(|s| slot_interval_at_level(s, prices, level))
        .collect();

    // Start at the lower ends and distribute the shortfall greedily into
    // the cheapest slots.
    let mut x: Vec<f64> = intervals.iter().map(|&(a, _)| a).collect();
    let mut shortfall: f64 = -x.iter().sum::<f64>();
    if shortfall < -tol {
        return None;
    }
    let mut order: Vec<usize> = (0..slots.len()).collect();
    order.sort_by(|&i, &j| weights[i].total_cmp(&weights[j]).then(i.cmp(&j)));
    for &t in &order {
        if shortfall <= 0.0 {
            break;
        }
        let room = intervals[t].1 - intervals[t].0;
        let take = room.min(shortfall);
        x[t] += take;
        shortfall -= take;
    }
    if shortfall.abs() > tol {
        return None;
    }
    Some(assemble_cluster(cluster, prices, &slots, x, eta))
}

/// Maximum absolute violation of the full KKT system: stationarity,
/// complementary slackness, dual feasibility, and primal feasibility.
/// Zero (up to tolerance) exactly when the pair is a KKT point.
pub fn kkt_residual(
    cfg: &ScenarioConfig,
    prices: &PriceStructure,
    response: &DemandResponse,
    duals: &DualSolution,
) -> f64 {
    let nblocks = prices.block_count();
    let mut worst = 0.0f64;
    let mut track = |v: f64| worst = worst.max(v.abs());

    for (c, cluster) in cfg.clusters.iter().enumerate() {
        let n = cluster.n as f64;
        let tau = cluster.tau;
        let mut neutrality = 0.0;
        for t in 0..cfg.horizon {
            let x = response.shift_at(t, c);
            let bound = cluster.sigma * cluster.baseline[t];
            neutrality += x;

            // Stationarity in the shift variable.
            track(
                n * tau * x - duals.phi_minus_at(t, c) + duals.phi_plus_at(t, c) + duals.eta[c]
                    - duals.rho_at(t, c),
            );
            // Stationarity in each block variable.
            for f in 0..nblocks {
                let mut r = n * prices.price(f) - duals.mu_minus_at(t, c, f) + duals.rho_at(t, c);
                if f + 1 < nblocks {
                    r += duals.mu_plus_at(t, c, f);
                }
                track(r);
            }
            // Complementary slackness.
            for f in 0..nblocks {
                track(duals.mu_minus_at(t, c, f) * response.block(t, c, f));
                if f + 1 < nblocks {
                    track(
                        duals.mu_plus_at(t, c, f)
                            * (prices.breakpoints[f] - response.block(t, c, f)),
                    );
                }
            }
            track(duals.phi_minus_at(t, c) * (x + bound));
            track(duals.phi_plus_at(t, c) * (bound - x));
            // Dual feasibility.
            for f in 0..nblocks {
                track((-duals.mu_minus_at(t, c, f)).max(0.0));
                if f + 1 < nblocks {
                    track((-duals.mu_plus_at(t, c, f)).max(0.0));
                }
            }
            track((-duals.phi_minus_at(t, c)).max(0.0));
            track((-duals.phi_plus_at(t, c)).max(0.0));
            // Primal feasibility.
            track(response.total(t, c) - x - cluster.baseline[t]);
            for f in 0..nblocks {
                track((-response.block(t, c, f)).max(0.0));
                if f + 1 < nblocks {
                    track((response.block(t, c, f) - prices.breakpoints[f]).max(0.0));
                }
            }
            track((x.abs() - bound).max(0.0));
        }
        track(neutrality);
    }
    worst
}

/// Independent oracle: enumerates shift vectors on a grid. All slots except
/// the last take grid values; the last slot balances the sum exactly, so
/// every candidate is energy neutral. Returns the feasible minimizer, which
/// upper-bounds the true optimum by at most a grid-resolution term.
pub fn brute_force_response(
    cfg: &ScenarioConfig,
    prices: &PriceStructure,
    grid_step: f64,
) -> Result<DemandResponse> {
    assert!(grid_step > 0.0, "grid step must be positive");
    let horizon = cfg.horizon;
    let nclusters = cfg.cluster_count();
    let nblocks = prices.block_count();

    let mut response = DemandResponse {
        slots: horizon,
        clusters: nclusters,
        blocks: nblocks,
        block_demand: vec![0.0; horizon * nclusters * nblocks],
        shift: vec![0.0; horizon * nclusters],
        objective_value: 0.0,
    };

    for (c, cluster) in cfg.clusters.iter().enumerate() {
        let n = cluster.n as f64;
        let slots = cluster_slots(cluster);

        let mut grids: Vec<Vec<f64>> = Vec::with_capacity(horizon - 1);
        let mut points = 1.0f64;
        for slot in &slots[..horizon - 1] {
            let span = slot.hi - slot.lo;
            let grid = if span <= 0.0 {
                vec![0.0]
            } else {
                let steps = (span / grid_step).ceil() as usize;
                (0..=steps)
                    .map(|k| (slot.lo + k as f64 * grid_step).min(slot.hi))
                    .collect()
            };
            points *= grid.len() as f64;
            grids.push(grid);
        }
        if points > ENUMERATION_CAP {
            return Err(Error::InstanceTooLarge {
                points,
                cap: ENUMERATION_CAP,
            });
        }

        let objective = |xs: &[f64]| -> f64 {
            xs.iter()
                .zip(&slots)
                .map(|(&x, slot)| {
                    n * block_bill(slot.base + x, prices) + 0.5 * n * cluster.tau * x * x
                })
                .sum()
        };

        let last = &slots[horizon - 1];
        let mut best: Option<(Vec<f64>, f64)> = None;
        let mut candidate = vec![0.0; horizon];
        let mut indices = vec![0usize; horizon - 1];
        'enumerate: loop {
            let mut sum = 0.0;
            for (t, &i) in indices.iter().enumerate() {
                candidate[t] = grids[t][i];
                sum += candidate[t];
            }
            let balance = -sum;
            if balance >= last.lo - 1e-12 && balance <= last.hi + 1e-12 {
                candidate[horizon - 1] = balance.clamp(last.lo, last.hi);
                let value = objective(&candidate);
                if best.as_ref().is_none_or(|(_, v)| value < *v) {
                    best = Some((candidate.clone(), value));
                }
            }
            // Odometer increment.
            for t in (0..horizon - 1).rev() {
                indices[t] += 1;
                if indices[t] < grids[t].len() {
                    continue 'enumerate;
                }
                indices[t] = 0;
            }
            break;
        }

        let (shift, value) = best.expect("zero shift is always on the grid, so a candidate exists");
        response.objective_value += value;
        for t in 0..horizon {
            let tc = t * nclusters + c;
            response.shift[tc] = shift[t];
            let split = baseline_block_split(slots[t].base + shift[t], &prices.breakpoints);
            response.block_demand[tc * nblocks..(tc + 1) * nblocks].copy_from_slice(&split);
        }
    }
    Ok(response)
}
