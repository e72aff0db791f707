//! Evaluation metrics and machine-readable result files.
//!
//! Every metric compares a tariff solution against the flat-price reference:
//! the peak-to-average ratio of the aggregate profile, the utility's energy
//! procurement cost, the consumer bill (identical to utility revenue), and
//! the consumer total cost including shifting discomfort. Emitted files are
//! deterministic functions of their inputs; percentages are written with two
//! decimals while full precision is kept in memory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::response::DemandResponse;
use crate::scenario::{derive, PriceStructure, ScenarioConfig};

/// Flat-price reference figures recomputed per scenario.
#[derive(Debug, Clone)]
pub struct ReferenceFigures {
    pub flat_price: f64,
    pub baseline_par: f64,
    pub baseline_peak: f64,
    /// r-scaled procurement cost of the baseline.
    pub utility_cost: f64,
    /// Flat bill, equal to revenue by budget balance.
    pub consumer_bill: f64,
}

/// Solver outcome fields carried into reports (no wall-clock data).
#[derive(Debug, Clone)]
pub struct SolverSummary {
    pub status: String,
    pub bound: f64,
    pub gap: f64,
    pub node_count: u64,
    pub lp_count: u64,
}

/// A solved tariff with its evaluation metrics.
#[derive(Debug, Clone)]
pub struct SolutionReport {
    pub prices: PriceStructure,
    pub response: DemandResponse,
    pub par: f64,
    pub par_reduction_pct: f64,
    pub utility_cost_reduction_pct: f64,
    pub consumer_bill_reduction_pct: f64,
    pub consumer_total_cost_reduction_pct: f64,
    pub utility_cost: f64,
    pub consumer_bill: f64,
    pub consumer_total_cost: f64,
    pub reference: ReferenceFigures,
    pub solver: Option<SolverSummary>,
}

/// Envelope bands produced by the breakpoint iteration: elementwise
/// attainable demand ranges per (slot, cluster) and for the weighted
/// aggregate.
#[derive(Debug, Clone)]
pub struct EnvelopeBands {
    /// Indexed t * C + c.
    pub per_cluster_lower: Vec<f64>,
    pub per_cluster_upper: Vec<f64>,
    /// Indexed by slot.
    pub aggregate_lower: Vec<f64>,
    pub aggregate_upper: Vec<f64>,
}

fn reduction_pct(reference: f64, value: f64) -> f64 {
    if reference == 0.0 {
        return 0.0;
    }
    let pct = 100.0 * (reference - value) / reference;
    // Clamp float dust so unchanged metrics read exactly zero.
    if pct.abs() < 1e-9 {
        0.0
    } else {
        pct
    }
}

/// Computes the full metric set for a response under the given prices.
pub fn metrics(
    cfg: &ScenarioConfig,
    prices: &PriceStructure,
    response: &DemandResponse,
) -> Result<SolutionReport> {
    let derived = derive(cfg)?;
    let slots = cfg.horizon;
    let blocks = prices.block_count();

    let mean = derived.total_demand / slots as f64;
    let par = response.peak(cfg) / mean;

    let mut energy_cost = 0.0;
    let mut consumer_bill = 0.0;
    let mut discomfort = 0.0;
    let mut energy_cost_ref = 0.0;
    for t in 0..slots {
        for (c, cluster) in cfg.clusters.iter().enumerate() {
            let n = cluster.n as f64;
            for f in 0..blocks {
                let d = response.block(t, c, f);
                energy_cost += cfg.wholesale_rates[t] * n * d;
                consumer_bill += prices.price(f) * n * d;
            }
            let x = response.shift_at(t, c);
            discomfort += 0.5 * n * cluster.tau * x * x;
            energy_cost_ref += cfg.wholesale_rates[t] * n * cluster.baseline[t];
        }
    }
    let utility_cost = cfg.rate_of_return * energy_cost;
    let utility_cost_ref = cfg.rate_of_return * energy_cost_ref;
    let bill_ref = derived.flat_price * derived.total_demand;
    let consumer_total = consumer_bill + discomfort;

    let reference = ReferenceFigures {
        flat_price: derived.flat_price,
        baseline_par: derived.baseline_par,
        baseline_peak: derived.baseline_par * mean,
        utility_cost: utility_cost_ref,
        consumer_bill: bill_ref,
    };

    Ok(SolutionReport {
        prices: prices.clone(),
        response: response.clone(),
        par,
        par_reduction_pct: reduction_pct(derived.baseline_par, par),
        utility_cost_reduction_pct: reduction_pct(utility_cost_ref, utility_cost),
        consumer_bill_reduction_pct: reduction_pct(bill_ref, consumer_bill),
        consumer_total_cost_reduction_pct: reduction_pct(bill_ref, consumer_total),
        utility_cost,
        consumer_bill,
        consumer_total_cost: consumer_total,
        reference,
        solver: None,
    })
}

/// One entry of a sweep: either a solved report or the failure status.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub xi: f64,
    pub blocks: usize,
    pub outcome: std::result::Result<SolutionReport, String>,
}

/// Writes the sweep table: one row per grid point, fixed header, input
/// order. Breakpoint columns are sized by the largest block count present;
/// failed points carry their status with empty metric cells.
pub fn emit_sweep_csv(points: &[SweepPoint], path: &Path) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Model("sweep produced no points".into()));
    }
    let max_blocks = points.iter().map(|p| p.blocks).max().unwrap_or(2);
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);

    let mut header = String::from("xi,blocks");
    for f in 1..max_blocks {
        header.push_str(&format!(",q_{f}"));
    }
    header.push_str(
        ",lambda_1,par,par_reduction_pct,utility_cost_reduction_pct,\
         consumer_bill_reduction_pct,consumer_total_cost_reduction_pct,status,gap",
    );
    writeln!(w, "{header}")?;

    for p in points {
        let mut line = format!("{},{}", p.xi, p.blocks);
        match &p.outcome {
            Ok(report) => {
                for f in 0..max_blocks - 1 {
                    match report.prices.breakpoints.get(f) {
                        Some(q) => line.push_str(&format!(",{q}")),
                        None => line.push(','),
                    }
                }
                line.push_str(&format!(",{}", report.prices.lambda1));
                line.push_str(&format!(",{}", report.par));
                line.push_str(&format!(",{:.2}", report.par_reduction_pct));
                line.push_str(&format!(",{:.2}", report.utility_cost_reduction_pct));
                line.push_str(&format!(",{:.2}", report.consumer_bill_reduction_pct));
                line.push_str(&format!(",{:.2}", report.consumer_total_cost_reduction_pct));
                let (status, gap) = match &report.solver {
                    Some(s) => (s.status.clone(), format!("{:.3e}", s.gap)),
                    None => ("oracle".to_string(), String::new()),
                };
                line.push_str(&format!(",{status},{gap}"));
            }
            Err(status) => {
                for _ in 0..max_blocks - 1 {
                    line.push(',');
                }
                line.push_str(",,,,,,");
                line.push_str(&format!(",{status},"));
            }
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes per-slot demand profiles: baseline vs response per cluster, with
/// envelope bands when supplied, then the consumer-weighted aggregate rows
/// labelled `all`.
pub fn emit_profiles(
    cfg: &ScenarioConfig,
    response: &DemandResponse,
    envelopes: Option<&EnvelopeBands>,
    path: &Path,
) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(
        w,
        "slot,cluster,baseline,response,envelope_lower,envelope_upper"
    )?;
    let nclusters = cfg.cluster_count();
    for t in 0..cfg.horizon {
        for (c, cluster) in cfg.clusters.iter().enumerate() {
            let baseline = cluster.baseline[t];
            let served = response.total(t, c);
            let (lo, hi) = match envelopes {
                Some(env) => (
                    format!("{}", env.per_cluster_lower[t * nclusters + c]),
                    format!("{}", env.per_cluster_upper[t * nclusters + c]),
                ),
                None => (String::new(), String::new()),
            };
            writeln!(
                w,
                "{},{},{},{},{},{}",
                t + 1,
                c + 1,
                baseline,
                served,
                lo,
                hi
            )?;
        }
    }
    for t in 0..cfg.horizon {
        let baseline = cfg.aggregate_at(t);
        let served = response.aggregate(cfg, t);
        let (lo, hi) = match envelopes {
            Some(env) => (
                format!("{}", env.aggregate_lower[t]),
                format!("{}", env.aggregate_upper[t]),
            ),
            None => (String::new(), String::new()),
        };
        writeln!(w, "{},all,{},{},{},{}", t + 1, baseline, served, lo, hi)?;
    }
    w.flush()?;
    Ok(())
}

/// Structured text summary of one run.
pub fn run_summary(cfg: &ScenarioConfig, best: Option<&SolutionReport>) -> Result<String> {
    let derived = derive(cfg)?;
    let mut s = String::new();
    s.push_str(&format!("scenario = \"{}\"\n", cfg.label));
    s.push_str(&format!("slots = {}\n", cfg.horizon));
    s.push_str(&format!("clusters = {}\n", cfg.cluster_count()));
    s.push_str(&format!("flat_price = {:.6}\n", derived.flat_price));
    s.push_str(&format!("baseline_par = {:.6}\n", derived.baseline_par));
    if let Some(r) = best {
        s.push_str("\n[best]\n");
        s.push_str(&format!("xi = {}\n", r.prices.xi));
        s.push_str(&format!("lambda_1 = {:.6}\n", r.prices.lambda1));
        let qs: Vec<String> = r
            .prices
            .breakpoints
            .iter()
            .map(|q| format!("{q:.6}"))
            .collect();
        s.push_str(&format!("breakpoints = [{}]\n", qs.join(", ")));
        s.push_str(&format!("par = {:.6}\n", r.par));
        s.push_str(&format!("par_reduction_pct = {:.2}\n", r.par_reduction_pct));
        s.push_str(&format!(
            "utility_cost_reduction_pct = {:.2}\n",
            r.utility_cost_reduction_pct
        ));
        s.push_str(&format!(
            "consumer_bill_reduction_pct = {:.2}\n",
            r.consumer_bill_reduction_pct
        ));
        s.push_str(&format!(
            "consumer_total_cost_reduction_pct = {:.2}\n",
            r.consumer_total_cost_reduction_pct
        ));
        if let Some(solver) = &r.solver {
            s.push_str(&format!("status = \"{}\"\n", solver.status));
            s.push_str(&format!("gap = {:.3e}\n", solver.gap));
        }
    }
    Ok(s)
}
