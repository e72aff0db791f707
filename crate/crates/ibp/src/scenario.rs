//! Market scenario data: cluster baselines, wholesale rates, tariff
//! parameters, and the derived quantities every other module consumes.
//!
//! A scenario is loaded from a TOML document (see [`ScenarioConfig::from_toml_str`])
//! and validated on construction; all types are immutable afterwards and the
//! operations here are pure functions of their inputs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One consumer cluster: `n` identical consumers with a shared baseline
/// profile, shifting flexibility `sigma` and quadratic shifting cost `tau`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterProfile {
    /// Number of consumers in the cluster (≥ 1).
    pub n: u32,
    /// Fraction of each slot's baseline that can be shifted, in [0, 1].
    pub sigma: f64,
    /// Shifting cost coefficient (currency/kWh²), ≥ 0.
    pub tau: f64,
    /// Per-slot baseline demand of one consumer (kWh), length = horizon.
    pub baseline: Vec<f64>,
}

impl ClusterProfile {
    /// Largest baseline entry of this cluster.
    pub fn max_baseline(&self) -> f64 {
        self.baseline.iter().cloned().fold(0.0, f64::max)
    }
}

/// Bounds on the breakpoint decision variables (kWh).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BreakpointBounds {
    pub lower: f64,
    pub upper: f64,
}

/// A validated market scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Free-text label carried into reports.
    #[serde(default)]
    pub label: String,
    /// Number of intraday time slots T (≥ 2).
    pub horizon: usize,
    /// Utility rate of return r (≥ 1).
    pub rate_of_return: f64,
    /// Number of price blocks F (≥ 2).
    pub block_count: usize,
    /// Wholesale energy cost rate per slot (currency/kWh), length T.
    pub wholesale_rates: Vec<f64>,
    /// Explicit breakpoint bounds; when absent the baseline span is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakpoint_bounds: Option<BreakpointBounds>,
    /// Consumer clusters (≥ 1).
    pub clusters: Vec<ClusterProfile>,
}

/// A block tariff: ladder prices `lambda1 + f·xi` and the breakpoints that
/// cap every block except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceStructure {
    /// Price of the first block (currency/kWh), ≥ 0.
    pub lambda1: f64,
    /// Increment between consecutive block prices (currency/kWh), ≥ 0.
    pub xi: f64,
    /// Breakpoints q_1..q_{F-1} (kWh); the last block is uncapped.
    pub breakpoints: Vec<f64>,
}

impl PriceStructure {
    pub fn new(lambda1: f64, xi: f64, breakpoints: Vec<f64>) -> Self {
        Self {
            lambda1,
            xi,
            breakpoints,
        }
    }

    /// Number of blocks F.
    pub fn block_count(&self) -> usize {
        self.breakpoints.len() + 1
    }

    /// Ladder price of block `f` (0-based).
    pub fn price(&self, f: usize) -> f64 {
        self.lambda1 + f as f64 * self.xi
    }

    /// Price of the last (uncapped) block.
    pub fn top_price(&self) -> f64 {
        self.price(self.block_count() - 1)
    }
}

/// Quantities derived once per scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDerived {
    /// Budget-balancing flat reference price (currency/kWh).
    pub flat_price: f64,
    /// Total demand over the horizon, consumer-weighted (kWh).
    pub total_demand: f64,
    /// Peak-to-average ratio of the aggregate baseline.
    pub baseline_par: f64,
    /// Breakpoint bounds in effect (explicit override or baseline span).
    pub default_bounds: (f64, f64),
}

impl ScenarioConfig {
    /// Parses and validates a scenario from TOML text.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::scenario("document", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a scenario file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::scenario("document", format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    /// Serializes the scenario back to TOML.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Checks every type invariant, reporting the first violation with its
    /// field path.
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::scenario("horizon", "must be at least 2"));
        }
        if self.rate_of_return.is_nan() || self.rate_of_return < 1.0 {
            return Err(Error::scenario("rate_of_return", "must be at least 1"));
        }
        if self.block_count < 2 {
            return Err(Error::scenario("block_count", "must be at least 2"));
        }
        if self.wholesale_rates.len() != self.horizon {
            return Err(Error::scenario(
                "wholesale_rates",
                format!(
                    "expected {} entries (one per slot), found {}",
                    self.horizon,
                    self.wholesale_rates.len()
                ),
            ));
        }
        for (t, rate) in self.wholesale_rates.iter().enumerate() {
            if !(rate.is_finite() && *rate >= 0.0) {
                return Err(Error::scenario(
                    format!("wholesale_rates[{t}]"),
                    "must be finite and nonnegative",
                ));
            }
        }
        if let Some(b) = &self.breakpoint_bounds {
            if !(b.lower.is_finite() && b.upper.is_finite() && 0.0 <= b.lower && b.lower <= b.upper)
            {
                return Err(Error::scenario(
                    "breakpoint_bounds",
                    "requires 0 <= lower <= upper",
                ));
            }
        }
        if self.clusters.is_empty() {
            return Err(Error::scenario("clusters", "at least one cluster required"));
        }
        for (c, cluster) in self.clusters.iter().enumerate() {
            let path = |f: &str| format!("clusters[{c}].{f}");
            if cluster.n == 0 {
                return Err(Error::scenario(path("n"), "must be at least 1"));
            }
            if !(cluster.sigma >= 0.0 && cluster.sigma <= 1.0) {
                return Err(Error::scenario(path("sigma"), "sigma out of range [0, 1]"));
            }
            if !(cluster.tau.is_finite() && cluster.tau >= 0.0) {
                return Err(Error::scenario(
                    path("tau"),
                    "must be finite and nonnegative",
                ));
            }
            if cluster.baseline.len() != self.horizon {
                return Err(Error::scenario(
                    path("baseline"),
                    format!(
                        "expected {} entries (one per slot), found {}",
                        self.horizon,
                        cluster.baseline.len()
                    ),
                ));
            }
            let mut any_positive = false;
            for (t, d) in cluster.baseline.iter().enumerate() {
                if !(d.is_finite() && *d >= 0.0) {
                    return Err(Error::scenario(
                        format!("clusters[{c}].baseline[{t}]"),
                        "must be finite and nonnegative",
                    ));
                }
                any_positive |= *d > 0.0;
            }
            if !any_positive {
                return Err(Error::scenario(
                    path("baseline"),
                    "cluster demand is identically zero",
                ));
            }
        }
        Ok(())
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    /// Aggregate consumer-weighted demand at slot `t`.
    pub fn aggregate_at(&self, t: usize) -> f64 {
        self.clusters
            .iter()
            .map(|c| c.n as f64 * c.baseline[t])
            .sum()
    }

    /// Largest single-consumer baseline entry across all clusters and slots.
    pub fn max_baseline(&self) -> f64 {
        self.clusters
            .iter()
            .map(ClusterProfile::max_baseline)
            .fold(0.0, f64::max)
    }

    /// Largest shifting flexibility across clusters.
    pub fn max_sigma(&self) -> f64 {
        self.clusters.iter().map(|c| c.sigma).fold(0.0, f64::max)
    }
}

/// Loads a validated scenario from TOML text.
pub fn load_scenario(text: &str) -> Result<ScenarioConfig> {
    ScenarioConfig::from_toml_str(text)
}

/// Budget-balancing flat price: consumer-weighted average wholesale rate
/// scaled by the rate of return.
pub fn flat_price(cfg: &ScenarioConfig) -> Result<f64> {
    let mut revenue = 0.0;
    let mut demand = 0.0;
    for cluster in &cfg.clusters {
        let n = cluster.n as f64;
        for (t, d) in cluster.baseline.iter().enumerate() {
            revenue += cfg.wholesale_rates[t] * n * d;
            demand += n * d;
        }
    }
    if demand <= 0.0 {
        return Err(Error::scenario("clusters", "total demand is zero"));
    }
    Ok(cfg.rate_of_return * revenue / demand)
}

/// Splits a demand quantity across blocks by greedy fill: every block below
/// the last is capped at its breakpoint, the last absorbs the rest. The
/// entries always sum back to `demand`.
pub fn baseline_block_split(demand: f64, breakpoints: &[f64]) -> Vec<f64> {
    let blocks = breakpoints.len() + 1;
    let mut split = Vec::with_capacity(blocks);
    let mut remaining = demand.max(0.0);
    for q in breakpoints {
        let take = remaining.min(*q).max(0.0);
        split.push(take);
        remaining -= take;
    }
    split.push(remaining.max(0.0));
    split
}

/// Breakpoint bounds in effect: the explicit override when present,
/// otherwise the min/max of the baseline demand entries.
pub fn default_breakpoint_bounds(cfg: &ScenarioConfig) -> (f64, f64) {
    if let Some(b) = &cfg.breakpoint_bounds {
        return (b.lower, b.upper);
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for cluster in &cfg.clusters {
        for d in &cluster.baseline {
            lo = lo.min(*d);
            hi = hi.max(*d);
        }
    }
    (lo, hi)
}

/// Computes the per-scenario derived quantities.
pub fn derive(cfg: &ScenarioConfig) -> Result<ScenarioDerived> {
    let flat = flat_price(cfg)?;
    let aggregates: Vec<f64> = (0..cfg.horizon).map(|t| cfg.aggregate_at(t)).collect();
    let total: f64 = aggregates.iter().sum();
    let peak = aggregates.iter().cloned().fold(0.0, f64::max);
    let trough = aggregates.iter().cloned().fold(f64::INFINITY, f64::min);
    // A constant profile has ratio one by definition; computing it through
    // the rounded sum would leave float dust.
    let baseline_par = if peak == trough {
        1.0
    } else {
        peak / (total / cfg.horizon as f64)
    };
    Ok(ScenarioDerived {
        flat_price: flat,
        total_demand: total,
        baseline_par,
        default_bounds: default_breakpoint_bounds(cfg),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(horizon: usize, baseline: Vec<f64>, rates: Vec<f64>) -> ScenarioConfig {
        ScenarioConfig {
            label: String::new(),
            horizon,
            rate_of_return: 1.0,
            block_count: 2,
            wholesale_rates: rates,
            breakpoint_bounds: None,
            clusters: vec![ClusterProfile {
                n: 1,
                sigma: 0.2,
                tau: 0.03,
                baseline,
            }],
        }
    }

    #[test]
    fn loads_valid_document() {
        let rates: Vec<String> = (0..24).map(|_| "0.05".to_string()).collect();
        let baseline: Vec<String> = (0..24)
            .map(|t| format!("{}", 0.5 + (t % 3) as f64 * 0.1))
            .collect();
        let cluster = format!(
            "[[clusters]]\nn = 250\nsigma = 0.2\ntau = 0.03\nbaseline = [{}]\n",
            baseline.join(", ")
        );
        let doc = format!(
            "horizon = 24\nrate_of_return = 1.0\nblock_count = 2\nwholesale_rates = [{}]\n\n{}{}{}{}",
            rates.join(", "),
            cluster,
            cluster,
            cluster,
            cluster
        );
        let cfg = load_scenario(&doc).unwrap();
        assert_eq!(cfg.horizon, 24);
        assert_eq!(cfg.cluster_count(), 4);
    }

    #[test]
    fn rejects_sigma_out_of_range() {
        let mut cfg = toy(2, vec![1.0, 1.0], vec![0.05, 0.05]);
        cfg.clusters[0].sigma = 1.2;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("sigma out of range"), "{err}");
    }

    #[test]
    fn rejects_rate_length_mismatch() {
        let cfg = toy(3, vec![1.0, 1.0, 1.0], vec![0.05, 0.05]);
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("wholesale_rates"), "{err}");
        assert!(err.to_string().contains("expected 3"), "{err}");
    }

    #[test]
    fn flat_price_uniform_rates() {
        let cfg = toy(2, vec![1.0, 1.0], vec![0.05, 0.05]);
        assert_eq!(flat_price(&cfg).unwrap(), 0.05);
    }

    #[test]
    fn flat_price_weighted_mean() {
        let cfg = toy(2, vec![1.0, 1.0], vec![0.04, 0.06]);
        assert!((flat_price(&cfg).unwrap() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn flat_price_scales_with_rate_of_return() {
        let mut cfg = toy(2, vec![1.0, 1.0], vec![0.05, 0.05]);
        cfg.rate_of_return = 1.1;
        assert!((flat_price(&cfg).unwrap() - 0.055).abs() < 1e-15);
    }

    #[test]
    fn block_split_examples() {
        assert_eq!(baseline_block_split(1.5, &[1.0]), vec![1.0, 0.5]);
        assert_eq!(baseline_block_split(0.4, &[0.5, 0.3]), vec![0.4, 0.0, 0.0]);
        let split = baseline_block_split(1.0, &[0.5, 0.3]);
        assert!((split[0] - 0.5).abs() < 1e-15);
        assert!((split[1] - 0.3).abs() < 1e-15);
        assert!((split[2] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn default_bounds_span_baseline() {
        let mut cfg = toy(3, vec![0.2, 0.5, 1.3], vec![0.05, 0.05, 0.05]);
        assert_eq!(default_breakpoint_bounds(&cfg), (0.2, 1.3));
        cfg.clusters[0].baseline = vec![0.7, 0.7, 0.7];
        assert_eq!(default_breakpoint_bounds(&cfg), (0.7, 0.7));
        cfg.breakpoint_bounds = Some(BreakpointBounds {
            lower: 0.1,
            upper: 2.0,
        });
        assert_eq!(default_breakpoint_bounds(&cfg), (0.1, 2.0));
    }

    #[test]
    fn derived_quantities() {
        let cfg = toy(4, vec![1.0, 1.0, 1.0, 1.0], vec![0.05; 4]);
        let d = derive(&cfg).unwrap();
        assert_eq!(d.baseline_par, 1.0);
        assert_eq!(d.total_demand, 4.0);

        let cfg = toy(3, vec![2.0, 1.0, 1.0], vec![0.05; 3]);
        let d = derive(&cfg).unwrap();
        assert!((d.baseline_par - 1.5).abs() < 1e-15);

        let mut cfg = toy(2, vec![1.0, 1.0], vec![0.05, 0.05]);
        cfg.clusters[0].n = 2;
        assert_eq!(derive(&cfg).unwrap().total_demand, 4.0);
    }

    #[test]
    fn derive_is_pure() {
        let cfg = toy(3, vec![0.3, 1.7, 0.9], vec![0.04, 0.07, 0.05]);
        let a = derive(&cfg).unwrap();
        let b = derive(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = toy(2, vec![1.0, 0.5], vec![0.04, 0.06]);
        let text = cfg.to_toml_string();
        let back = load_scenario(&text).unwrap();
        assert_eq!(back.horizon, cfg.horizon);
        assert_eq!(back.clusters[0].baseline, cfg.clusters[0].baseline);
    }

    proptest! {
        #[test]
        fn block_split_preserves_total(
            demand in 0.0..1_000.0f64,
            q in proptest::collection::vec(0.0..500.0f64, 1..5),
        ) {
            let split = baseline_block_split(demand, &q);
            let total: f64 = split.iter().sum();
            prop_assert!((total - demand).abs() <= 1e-12);
            for (f, d) in split.iter().enumerate() {
                prop_assert!(*d >= 0.0);
                if f + 1 < split.len() {
                    prop_assert!(*d <= q[f] + 1e-12);
                }
            }
        }

        #[test]
        fn block_split_prefixes_monotone(
            demand in 0.0..1_000.0f64,
            delta in 0.0..100.0f64,
            q in proptest::collection::vec(0.0..500.0f64, 1..5),
        ) {
            let a = baseline_block_split(demand, &q);
            let b = baseline_block_split(demand + delta, &q);
            let mut pa = 0.0;
            let mut pb = 0.0;
            for f in 0..a.len() {
                pa += a[f];
                pb += b[f];
                prop_assert!(pb >= pa - 1e-12);
            }
        }

        #[test]
        fn flat_price_within_rate_hull(
            d0 in 0.01..10.0f64,
            d1 in 0.01..10.0f64,
            r0 in 0.0..0.2f64,
            r1 in 0.0..0.2f64,
        ) {
            let cfg = toy(2, vec![d0, d1], vec![r0, r1]);
            let p = flat_price(&cfg).unwrap();
            prop_assert!(p >= r0.min(r1) - 1e-12 && p <= r0.max(r1) + 1e-12);
        }
    }
}
