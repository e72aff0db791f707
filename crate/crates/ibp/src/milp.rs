//! Single-level MILP assembly.
//!
//! For a fixed price increment the bilevel design problem collapses to a
//! mixed-integer linear program: the consumer problem is replaced by its
//! stationarity and feasibility conditions, complementary slackness is
//! linearized with big-M disjunctions over binary indicators, and the two
//! upper-level economics constraints (revenue adequacy and per-cluster bill
//! protection) are linearized by substituting the price ladder. Bill
//! protection depends on the baseline block split at the decision
//! breakpoints; that term is convex piecewise-linear in the breakpoints and
//! enters with a nonnegative coefficient, so it is represented exactly by an
//! epigraph variable per (slot, cluster).

use crate::error::{Error, Result};
use crate::response::{DemandResponse, DualSolution};
use crate::scenario::{
    baseline_block_split, default_breakpoint_bounds, flat_price, PriceStructure, ScenarioConfig,
};

/// Row feasibility tolerance used when checking assignments.
pub const ROW_TOL: f64 = 1e-6;

/// Problem dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub slots: usize,
    pub clusters: usize,
    pub blocks: usize,
}

/// Constraint sense.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Eq,
    Ge,
}

/// One sparse linear row.
#[derive(Debug, Clone)]
pub struct Row {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

impl Row {
    /// Nonnegative violation of this row at `x`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs: f64 = self.terms.iter().map(|&(j, a)| a * x[j]).sum();
        match self.sense {
            RowSense::Le => (lhs - self.rhs).max(0.0),
            RowSense::Ge => (self.rhs - lhs).max(0.0),
            RowSense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// One decision variable.
#[derive(Debug, Clone)]
pub struct VariableDef {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub binary: bool,
}

/// Big-M constants with the derivation that justifies them.
#[derive(Debug, Clone)]
pub struct BigMSet {
    /// Lower block bound pair (demand vs mu-minus).
    pub m1: f64,
    /// Upper block bound pair (remaining capacity vs mu-plus).
    pub m2: f64,
    /// Shift lower bound pair.
    pub m3: f64,
    /// Shift upper bound pair.
    pub m4: f64,
    /// Valid upper bound on the base price.
    pub lambda1_upper: f64,
    /// Text trace of each bound's derivation.
    pub derivation_log: String,
}

/// Index layout of the variable vector. Continuous variables first, binaries
/// last, in a fixed deterministic order.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    dims: ModelDims,
    base_q: usize,
    base_ds: usize,
    base_dsh: usize,
    base_rho: usize,
    base_mu_minus: usize,
    base_mu_plus: usize,
    base_phi_minus: usize,
    base_phi_plus: usize,
    base_eta: usize,
    base_z: usize,
    idx_dpeak: usize,
    base_omega1: usize,
    base_omega2: usize,
    base_omega3: usize,
    base_omega4: usize,
    total: usize,
}

impl Layout {
    pub fn new(dims: ModelDims) -> Self {
        let (t, c, f) = (dims.slots, dims.clusters, dims.blocks);
        let tc = t * c;
        let base_q = 1;
        let base_ds = base_q + (f - 1);
        let base_dsh = base_ds + tc * f;
        let base_rho = base_dsh + tc;
        let base_mu_minus = base_rho + tc;
        let base_mu_plus = base_mu_minus + tc * f;
        let base_phi_minus = base_mu_plus + tc * (f - 1);
        let base_phi_plus = base_phi_minus + tc;
        let base_eta = base_phi_plus + tc;
        let base_z = base_eta + c;
        let idx_dpeak = base_z + tc;
        let base_omega1 = idx_dpeak + 1;
        let base_omega2 = base_omega1 + tc * f;
        let base_omega3 = base_omega2 + tc * (f - 1);
        let base_omega4 = base_omega3 + tc;
        let total = base_omega4 + tc;
        Layout {
            dims,
            base_q,
            base_ds,
            base_dsh,
            base_rho,
            base_mu_minus,
            base_mu_plus,
            base_phi_minus,
            base_phi_plus,
            base_eta,
            base_z,
            idx_dpeak,
            base_omega1,
            base_omega2,
            base_omega3,
            base_omega4,
            total,
        }
    }

    fn tc(&self, t: usize, c: usize) -> usize {
        t * self.dims.clusters + c
    }

    pub fn lambda1(&self) -> usize {
        0
    }
    pub fn q(&self, f: usize) -> usize {
        self.base_q + f
    }
    pub fn ds(&self, t: usize, c: usize, f: usize) -> usize {
        self.base_ds + self.tc(t, c) * self.dims.blocks + f
    }
    pub fn dsh(&self, t: usize, c: usize) -> usize {
        self.base_dsh + self.tc(t, c)
    }
    pub fn rho(&self, t: usize, c: usize) -> usize {
        self.base_rho + self.tc(t, c)
    }
    pub fn mu_minus(&self, t: usize, c: usize, f: usize) -> usize {
        self.base_mu_minus + self.tc(t, c) * self.dims.blocks + f
    }
    pub fn mu_plus(&self, t: usize, c: usize, f: usize) -> usize {
        self.base_mu_plus + self.tc(t, c) * (self.dims.blocks - 1) + f
    }
    pub fn phi_minus(&self, t: usize, c: usize) -> usize {
        self.base_phi_minus + self.tc(t, c)
    }
    pub fn phi_plus(&self, t: usize, c: usize) -> usize {
        self.base_phi_plus + self.tc(t, c)
    }
    pub fn eta(&self, c: usize) -> usize {
        self.base_eta + c
    }
    pub fn z(&self, t: usize, c: usize) -> usize {
        self.base_z + self.tc(t, c)
    }
    pub fn dpeak(&self) -> usize {
        self.idx_dpeak
    }
    pub fn omega1(&self, t: usize, c: usize, f: usize) -> usize {
        self.base_omega1 + self.tc(t, c) * self.dims.blocks + f
    }
    pub fn omega2(&self, t: usize, c: usize, f: usize) -> usize {
        self.base_omega2 + self.tc(t, c) * (self.dims.blocks - 1) + f
    }
    pub fn omega3(&self, t: usize, c: usize) -> usize {
        self.base_omega3 + self.tc(t, c)
    }
    pub fn omega4(&self, t: usize, c: usize) -> usize {
        self.base_omega4 + self.tc(t, c)
    }
    /// First binary index; binaries occupy the tail of the vector.
    pub fn first_binary(&self) -> usize {
        self.base_omega1
    }
    pub fn total(&self) -> usize {
        self.total
    }

    /// Identifies which complementarity pair a binary index controls.
    pub fn binary_role(&self, var: usize) -> Option<BinaryRole> {
        let (c_count, f_count) = (self.dims.clusters, self.dims.blocks);
        if var >= self.base_omega1 && var < self.base_omega2 {
            let rel = var - self.base_omega1;
            let tc = rel / f_count;
            return Some(BinaryRole::BlockLower {
                t: tc / c_count,
                c: tc % c_count,
                f: rel % f_count,
            });
        }
        if var >= self.base_omega2 && var < self.base_omega3 {
            let rel = var - self.base_omega2;
            let tc = rel / (f_count - 1);
            return Some(BinaryRole::BlockUpper {
                t: tc / c_count,
                c: tc % c_count,
                f: rel % (f_count - 1),
            });
        }
        if var >= self.base_omega3 && var < self.base_omega4 {
            let rel = var - self.base_omega3;
            return Some(BinaryRole::ShiftLower {
                t: rel / c_count,
                c: rel % c_count,
            });
        }
        if var >= self.base_omega4 && var < self.total {
            let rel = var - self.base_omega4;
            return Some(BinaryRole::ShiftUpper {
                t: rel / c_count,
                c: rel % c_count,
            });
        }
        None
    }
}

/// The complementarity pair controlled by one binary indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryRole {
    /// Pair (d^s, mu-minus).
    BlockLower { t: usize, c: usize, f: usize },
    /// Pair (q - d^s, mu-plus).
    BlockUpper { t: usize, c: usize, f: usize },
    /// Pair (shift above its lower bound, phi-minus).
    ShiftLower { t: usize, c: usize },
    /// Pair (shift below its upper bound, phi-plus).
    ShiftUpper { t: usize, c: usize },
}

/// Solver-agnostic MILP in sparse matrix form.
#[derive(Debug, Clone)]
pub struct MilpModel {
    pub dims: ModelDims,
    /// Price increment baked into the coefficients.
    pub xi: f64,
    /// Flat reference price of the scenario.
    pub lambda_o: f64,
    /// Total consumer-weighted demand over the horizon.
    pub total_demand: f64,
    /// Consumer count per cluster, kept for solution extraction.
    pub cluster_n: Vec<f64>,
    /// Shifting cost coefficient per cluster.
    pub cluster_tau: Vec<f64>,
    /// The scenario the model was built from; the solver's primal heuristic
    /// re-solves the consumer response against it.
    pub scenario: ScenarioConfig,
    pub variables: Vec<VariableDef>,
    pub rows: Vec<Row>,
    /// Minimization objective, sparse.
    pub objective: Vec<(usize, f64)>,
    pub layout: Layout,
    pub big_m: BigMSet,
}

/// Size summary of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelStats {
    pub rows: usize,
    pub columns: usize,
    pub continuous: usize,
    pub binaries: usize,
    pub nonzeros: usize,
}

impl std::fmt::Display for ModelStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "rows = {}", self.rows)?;
        writeln!(f, "columns = {}", self.columns)?;
        writeln!(f, "continuous = {}", self.continuous)?;
        writeln!(f, "binaries = {}", self.binaries)?;
        write!(f, "nonzeros = {}", self.nonzeros)
    }
}

impl MilpModel {
    pub fn stats(&self) -> ModelStats {
        let binaries = self.variables.iter().filter(|v| v.binary).count();
        ModelStats {
            rows: self.rows.len(),
            columns: self.variables.len(),
            continuous: self.variables.len() - binaries,
            binaries,
            nonzeros: self.rows.iter().map(|r| r.terms.len()).sum(),
        }
    }

    /// PAR corresponding to a peak value, using the constant total demand.
    pub fn par_of(&self, dpeak: f64) -> f64 {
        dpeak / (self.total_demand / self.dims.slots as f64)
    }

    /// Largest row violation of an assignment.
    pub fn max_violation(&self, x: &[f64]) -> (f64, usize) {
        let mut worst = 0.0;
        let mut at = 0;
        for (i, row) in self.rows.iter().enumerate() {
            let v = row.violation(x);
            if v > worst {
                worst = v;
                at = i;
            }
        }
        (worst, at)
    }

    /// Errors unless every row and bound holds within `tol`.
    pub fn verify_assignment(&self, x: &[f64], tol: f64) -> Result<()> {
        if x.len() != self.variables.len() {
            return Err(Error::Model(format!(
                "assignment has {} entries, model has {} variables",
                x.len(),
                self.variables.len()
            )));
        }
        for (j, var) in self.variables.iter().enumerate() {
            if x[j] < var.lower - tol || x[j] > var.upper + tol {
                return Err(Error::InfeasibleAssignment {
                    row: format!("bound {}", var.name),
                    violation: (var.lower - x[j]).max(x[j] - var.upper),
                });
            }
        }
        let (worst, at) = self.max_violation(x);
        if worst > tol {
            return Err(Error::InfeasibleAssignment {
                row: self.rows[at].name.clone(),
                violation: worst,
            });
        }
        Ok(())
    }
}

/// Derives big-M constants valid for the scenario at the given increment.
///
/// Primal quantities are bounded by the flexibility-inflated baseline and the
/// breakpoint ceiling. Dual quantities follow from stationarity: the balance
/// multiplier is a consumer-weighted marginal block price, and the bill
/// protection constraint bounds the base price by the flat price, so every
/// ladder price is bounded as well. A safety factor of two is applied and a
/// floor keeps the constants positive in degenerate scenarios.
pub fn compute_big_m(cfg: &ScenarioConfig, xi: f64) -> Result<BigMSet> {
    assert!(xi >= 0.0 && xi.is_finite(), "xi must be nonnegative");
    let lambda_o = flat_price(cfg)?;
    let (_, q_hi) = default_breakpoint_bounds(cfg);
    let d_max = cfg.max_baseline();
    let sigma_max = cfg.max_sigma();
    let n_max = cfg.clusters.iter().map(|c| c.n as f64).fold(0.0, f64::max);
    let blocks = cfg.block_count as f64;

    let top_price = lambda_o + (blocks - 1.0) * xi;
    let shift_cost_span = cfg
        .clusters
        .iter()
        .map(|c| 2.0 * c.tau * c.sigma * c.max_baseline())
        .fold(0.0, f64::max);
    // |pi| along the response never exceeds the top ladder price plus the
    // steepest marginal shifting cost reachable inside the bisection bracket.
    let pi_max = top_price + shift_cost_span;

    let p1 = (1.0 + sigma_max) * d_max;
    let p2 = q_hi;
    let p3 = 2.0 * sigma_max * d_max;
    let dual_mu = n_max * (top_price + pi_max);
    let dual_phi = 2.0 * n_max * pi_max;

    let floor = 1.0;
    let m1 = (2.0 * p1.max(dual_mu)).max(floor);
    let m2 = (2.0 * p2.max(dual_mu)).max(floor);
    let m3 = (2.0 * p3.max(dual_phi)).max(floor);
    let m4 = m3;

    let derivation_log = format!(
        "lambda_o = {lambda_o:.6} (flat reference; bill protection at q = q_hi forces lambda1 <= lambda_o)\n\
         top ladder price = lambda_o + (F-1) xi = {top_price:.6}\n\
         |pi| <= top price + max_c 2 tau_c sigma_c Dmax_c = {pi_max:.6}\n\
         M1: primal (1+sigma)Dmax = {p1:.6}, dual n(top + pi) = {dual_mu:.6} -> {m1:.6} (x2 safety, floor {floor})\n\
         M2: primal q_hi = {p2:.6}, dual n(top + pi) = {dual_mu:.6} -> {m2:.6}\n\
         M3/M4: primal 2 sigma Dmax = {p3:.6}, dual 2 n pi = {dual_phi:.6} -> {m3:.6}"
    );

    Ok(BigMSet {
        m1,
        m2,
        m3,
        m4,
        lambda1_upper: lambda_o,
        derivation_log,
    })
}

/// Assembles the MILP for a scenario at a fixed increment.
pub fn build_milp(cfg: &ScenarioConfig, xi: f64, big_m: &BigMSet) -> Result<MilpModel> {
    cfg.validate()?;
    if !(xi >= 0.0 && xi.is_finite()) {
        return Err(Error::Model("xi must be finite and nonnegative".into()));
    }
    for (label, m) in [
        ("M1", big_m.m1),
        ("M2", big_m.m2),
        ("M3", big_m.m3),
        ("M4", big_m.m4),
    ] {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::Model(format!("{label} must be positive and finite")));
        }
    }

    let dims = ModelDims {
        slots: cfg.horizon,
        clusters: cfg.cluster_count(),
        blocks: cfg.block_count,
    };
    let layout = Layout::new(dims);
    let (q_lo, q_hi) = default_breakpoint_bounds(cfg);
    let lambda_o = flat_price(cfg)?;
    let total_demand: f64 = (0..dims.slots).map(|t| cfg.aggregate_at(t)).sum();

    let mut variables = vec![
        VariableDef {
            name: "lambda1".into(),
            lower: 0.0,
            upper: big_m.lambda1_upper,
            binary: false,
        };
        layout.total()
    ];
    let mut def = |idx: usize, name: String, lower: f64, upper: f64, binary: bool| {
        variables[idx] = VariableDef {
            name,
            lower,
            upper,
            binary,
        };
    };

    for f in 0..dims.blocks - 1 {
        def(layout.q(f), format!("q[{f}]"), q_lo, q_hi, false);
    }
    for t in 0..dims.slots {
        for (c, cluster) in cfg.clusters.iter().enumerate() {
            let d = cluster.baseline[t];
            let span = cluster.sigma * d;
            for f in 0..dims.blocks {
                def(
                    layout.ds(t, c, f),
                    format!("ds[{t},{c},{f}]"),
                    0.0,
                    (1.0 + cluster.sigma) * d,
                    false,
                );
                def(
                    layout.mu_minus(t, c, f),
                    format!("muL[{t},{c},{f}]"),
                    0.0,
                    big_m.m1,
                    false,
                );
                if f + 1 < dims.blocks {
                    def(
                        layout.mu_plus(t, c, f),
                        format!("muU[{t},{c},{f}]"),
                        0.0,
                        big_m.m2,
                        false,
                    );
                }
            }
            def(
                layout.dsh(t, c),
                format!("dsh[{t},{c}]"),
                -span,
                span,
                false,
            );
            def(
                layout.rho(t, c),
                format!("rho[{t},{c}]"),
                f64::NEG_INFINITY,
                f64::INFINITY,
                false,
            );
            def(
                layout.phi_minus(t, c),
                format!("phiL[{t},{c}]"),
                0.0,
                big_m.m3,
                false,
            );
            def(
                layout.phi_plus(t, c),
                format!("phiU[{t},{c}]"),
                0.0,
                big_m.m4,
                false,
            );
            def(
                layout.z(t, c),
                format!("z[{t},{c}]"),
                0.0,
                f64::INFINITY,
                false,
            );
        }
    }
    for c in 0..dims.clusters {
        def(
            layout.eta(c),
            format!("eta[{c}]"),
            f64::NEG_INFINITY,
            f64::INFINITY,
            false,
        );
    }
    def(layout.dpeak(), "dpeak".into(), 0.0, f64::INFINITY, false);
    for t in 0..dims.slots {
        for c in 0..dims.clusters {
            for f in 0..dims.blocks {
                def(
                    layout.omega1(t, c, f),
                    format!("w1[{t},{c},{f}]"),
                    0.0,
                    1.0,
                    true,
                );
                if f + 1 < dims.blocks {
                    def(
                        layout.omega2(t, c, f),
                        format!("w2[{t},{c},{f}]"),
                        0.0,
                        1.0,
                        true,
                    );
                }
            }
            def(layout.omega3(t, c), format!("w3[{t},{c}]"), 0.0, 1.0, true);
            def(layout.omega4(t, c), format!("w4[{t},{c}]"), 0.0, 1.0, true);
        }
    }

    let mut rows = Vec::new();

    // Peak epigraph: dpeak dominates the consumer-weighted aggregate of
    // every slot. The weights keep the objective aligned with the PAR.
    for t in 0..dims.slots {
        let mut terms = vec![(layout.dpeak(), 1.0)];
        for (c, cluster) in cfg.clusters.iter().enumerate() {
            for f in 0..dims.blocks {
                terms.push((layout.ds(t, c, f), -(cluster.n as f64)));
            }
        }
        rows.push(Row {
            name: format!("peak[{t}]"),
            terms,
            sense: RowSense::Ge,
            rhs: 0.0,
        });
    }

    // Power balance.
    for t in 0..dims.slots {
        for (c, cluster) in cfg.clusters.iter().enumerate() {
            let mut terms: Vec<(usize, f64)> = (0..dims.blocks)
                .map(|f| (layout.ds(t, c, f), 1.0))
                .collect();
            terms.push((layout.dsh(t, c), -1.0));
            rows.push(Row {
                name: format!("bal[{t},{c}]"),
                terms,
                sense: RowSense::Eq,
                rhs: cluster.baseline[t],
            });
        }
    }

    // Block caps against the breakpoint variables.
    for t in 0..dims.slots {
        for c in 0..dims.clusters {
            for f in 0..dims.blocks - 1 {
                rows.push(Row {
                    name: format!("cap[{t},{c},{f}]"),
                    terms: vec![(layout.ds(t, c, f), 1.0), (layout.q(f), -1.0)],
                    sense: RowSense::Le,
                    rhs: 0.0,
                });
            }
        }
    }

    // Energy neutrality per cluster.
    for c in 0..dims.clusters {
        let terms: Vec<(usize, f64)> = (0..dims.slots).map(|t| (layout.dsh(t, c), 1.0)).collect();
        rows.push(Row {
            name: format!("neut[{c}]"),
            terms,
            sense: RowSense::Eq,
            rhs: 0.0,
        });
    }

    // Stationarity in the shift variables.
    for t in 0..dims.slots {
        for (c, cluster) in cfg.clusters.iter().enumerate() {
            let n = cluster.n as f64;
            rows.push(Row {
                name: format!("stsh[{t},{c}]"),
                terms: vec![
                    (layout.dsh(t, c), n * cluster.tau),
                    (layout.phi_minus(t, c), -1.0),
                    (layout.phi_plus(t, c), 1.0),
                    (layout.eta(c), 1.0),
                    (layout.rho(t, c), -1.0),
                ],
                sense: RowSense::Eq,
                rhs: 0.0,
            });
        }
    }

    // Stationarity in the block variables: ladder prices substituted, so the
    // base price appears as a coefficient and the increment lands in the rhs.
    for t in 0..dims.slots {
        for (c, cluster) in cfg.clusters.iter().enumerate() {
            let n = cluster.n as f64;
            for f in 0..dims.blocks {
                let mut terms = vec![
                    (layout.lambda1(), n),
                    (layout.mu_minus(t, c, f), -1.0),
                    (layout.rho(t, c), 1.0),
                ];
                if f + 1 < dims.blocks {
                    terms.push((layout.mu_plus(t, c, f), 1.0));
                }
                rows.push(Row {
                    name: format!("stb[{t},{c},{f}]"),
                    terms,
                    sense: RowSense::Eq,
                    rhs: -n * f as f64 * xi,
                });
            }
        }
    }

    // Big-M disjunctions for complementary slackness.
    for t in 0..dims.slots {
        for (c, cluster) in cfg.clusters.iter().enumerate() {
            let span = cluster.sigma * cluster.baseline[t];
            for f in 0..dims.blocks {
                rows.push(Row {
                    name: format!("bm1p[{t},{c},{f}]"),
                    terms: vec![
                        (layout.ds(t, c, f), 1.0),
                        (layout.omega1(t, c, f), -big_m.m1),
                    ],
                    sense: RowSense::Le,
                    rhs: 0.0,
                });
                rows.push(Row {
                    name: format!("bm1d[{t},{c},{f}]"),
                    terms: vec![
                        (layout.mu_minus(t, c, f), 1.0),
                        (layout.omega1(t, c, f), big_m.m1),
                    ],
                    sense: RowSense::Le,
                    rhs: big_m.m1,
                });
            }
            for f in 0..dims.blocks - 1 {
                rows.push(Row {
                    name: format!("bm2p[{t},{c},{f}]"),
                    terms: vec![
                        (layout.q(f), 1.0),
                        (layout.ds(t, c, f), -1.0),
                        (layout.omega2(t, c, f), -big_m.m2),
                    ],
                    sense: RowSense::Le,
                    rhs: 0.0,
                });
                rows.push(Row {
                    name: format!("bm2d[{t},{c},{f}]"),
                    terms: vec![
                        (layout.mu_plus(t, c, f), 1.0),
                        (layout.omega2(t, c, f), big_m.m2),
                    ],
                    sense: RowSense::Le,
                    rhs: big_m.m2,
                });
            }
            rows.push(Row {
                name: format!("bm3p[{t},{c}]"),
                terms: vec![(layout.dsh(t, c), 1.0), (layout.omega3(t, c), -big_m.m3)],
                sense: RowSense::Le,
                rhs: -span,
            });
            rows.push(Row {
                name: format!("bm3d[{t},{c}]"),
                terms: vec![
                    (layout.phi_minus(t, c), 1.0),
                    (layout.omega3(t, c), big_m.m3),
                ],
                sense: RowSense::Le,
                rhs: big_m.m3,
            });
            rows.push(Row {
                name: format!("bm4p[{t},{c}]"),
                terms: vec![(layout.dsh(t, c), -1.0), (layout.omega4(t, c), -big_m.m4)],
                sense: RowSense::Le,
                rhs: -span,
            });
            rows.push(Row {
                name: format!("bm4d[{t},{c}]"),
                terms: vec![
                    (layout.phi_plus(t, c), 1.0),
                    (layout.omega4(t, c), big_m.m4),
                ],
                sense: RowSense::Le,
                rhs: big_m.m4,
            });
        }
    }

    // Revenue adequacy with the ladder substituted.
    {
        let mut terms = vec![(layout.lambda1(), total_demand)];
        for t in 0..dims.slots {
            for (c, cluster) in cfg.clusters.iter().enumerate() {
                let n = cluster.n as f64;
                for f in 0..dims.blocks {
                    let coeff = n * (xi * f as f64 - cfg.rate_of_return * cfg.wholesale_rates[t]);
                    terms.push((layout.ds(t, c, f), coeff));
                }
            }
        }
        rows.push(Row {
            name: "rev".into(),
            terms,
            sense: RowSense::Ge,
            rhs: 0.0,
        });
    }

    // Bill protection per cluster, epigraph form.
    for (c, cluster) in cfg.clusters.iter().enumerate() {
        let base_total: f64 = cluster.baseline.iter().sum();
        let mut terms = vec![(layout.lambda1(), base_total)];
        for t in 0..dims.slots {
            terms.push((layout.z(t, c), xi));
        }
        rows.push(Row {
            name: format!("bill[{c}]"),
            terms,
            sense: RowSense::Le,
            rhs: lambda_o * base_total,
        });
    }

    // Epigraph pieces: z dominates every prefix of the weighted baseline
    // overflow, which equals the convex bill-protection term exactly.
    for t in 0..dims.slots {
        for (c, cluster) in cfg.clusters.iter().enumerate() {
            let d = cluster.baseline[t];
            for k in 0..dims.blocks {
                let mut terms = vec![(layout.z(t, c), 1.0)];
                for j in 0..k {
                    terms.push((layout.q(j), (k - j) as f64));
                }
                rows.push(Row {
                    name: format!("zrow[{t},{c},{k}]"),
                    terms,
                    sense: RowSense::Ge,
                    rhs: k as f64 * d,
                });
            }
        }
    }

    Ok(MilpModel {
        dims,
        xi,
        lambda_o,
        total_demand,
        cluster_n: cfg.clusters.iter().map(|c| c.n as f64).collect(),
        cluster_tau: cfg.clusters.iter().map(|c| c.tau).collect(),
        scenario: cfg.clone(),
        variables,
        rows,
        objective: vec![(layout.dpeak(), 1.0)],
        layout,
        big_m: big_m.clone(),
    })
}

/// Weighted baseline overflow beyond the breakpoints: the bill-protection
/// term for one (slot, cluster) entry at breakpoints `q`.
pub fn overflow_term(demand: f64, q: &[f64]) -> f64 {
    baseline_block_split(demand, q)
        .iter()
        .enumerate()
        .map(|(f, d)| f as f64 * d)
        .sum()
}

/// Builds a full variable assignment from a typed solution: prices and a
/// demand response with matching duals. Binary indicators come from the
/// active sets; the epigraph variables are set to the exact overflow terms.
pub fn assemble_assignment(
    model: &MilpModel,
    cfg: &ScenarioConfig,
    prices: &PriceStructure,
    response: &DemandResponse,
    duals: &DualSolution,
) -> Vec<f64> {
    let layout = &model.layout;
    let dims = model.dims;
    let mut x = vec![0.0; layout.total()];

    x[layout.lambda1()] = prices.lambda1;
    for f in 0..dims.blocks - 1 {
        x[layout.q(f)] = prices.breakpoints[f];
    }
    let mut dpeak = 0.0f64;
    for t in 0..dims.slots {
        let mut aggregate = 0.0;
        for (c, cluster) in cfg.clusters.iter().enumerate() {
            for f in 0..dims.blocks {
                let v = response.block(t, c, f);
                x[layout.ds(t, c, f)] = v;
                aggregate += cluster.n as f64 * v;
            }
            x[layout.dsh(t, c)] = response.shift_at(t, c);
            x[layout.rho(t, c)] = duals.rho_at(t, c);
            for f in 0..dims.blocks {
                x[layout.mu_minus(t, c, f)] = duals.mu_minus_at(t, c, f);
            }
            for f in 0..dims.blocks - 1 {
                x[layout.mu_plus(t, c, f)] = duals.mu_plus_at(t, c, f);
            }
            x[layout.phi_minus(t, c)] = duals.phi_minus_at(t, c);
            x[layout.phi_plus(t, c)] = duals.phi_plus_at(t, c);
            x[layout.z(t, c)] = overflow_term(cluster.baseline[t], &prices.breakpoints);
        }
        dpeak = dpeak.max(aggregate);
    }
    for c in 0..dims.clusters {
        x[layout.eta(c)] = duals.eta[c];
    }
    x[layout.dpeak()] = dpeak;

    // Indicators from the active sets: a strictly positive dual forces the
    // primal side of its pair to zero, otherwise the dual side is closed.
    let tol = 1e-9;
    for t in 0..dims.slots {
        for c in 0..dims.clusters {
            for f in 0..dims.blocks {
                let dual_active = duals.mu_minus_at(t, c, f) > tol;
                x[layout.omega1(t, c, f)] = if dual_active { 0.0 } else { 1.0 };
            }
            for f in 0..dims.blocks - 1 {
                let dual_active = duals.mu_plus_at(t, c, f) > tol;
                x[layout.omega2(t, c, f)] = if dual_active { 0.0 } else { 1.0 };
            }
            x[layout.omega3(t, c)] = if duals.phi_minus_at(t, c) > tol {
                0.0
            } else {
                1.0
            };
            x[layout.omega4(t, c)] = if duals.phi_plus_at(t, c) > tol {
                0.0
            } else {
                1.0
            };
        }
    }
    x
}

/// Extracts the typed solution from a feasible assignment.
///
/// Returns the price structure (carrying the fixed increment), the demand
/// response with recovered duals, and the peak value. The assignment is
/// verified against every row first.
pub fn extract_solution(
    model: &MilpModel,
    assignment: &[f64],
) -> Result<(PriceStructure, DemandResponse, DualSolution, f64)> {
    model.verify_assignment(assignment, ROW_TOL)?;
    let layout = &model.layout;
    let dims = model.dims;

    let prices = PriceStructure::new(
        assignment[layout.lambda1()],
        model.xi,
        (0..dims.blocks - 1)
            .map(|f| assignment[layout.q(f)])
            .collect(),
    );

    let tc = dims.slots * dims.clusters;
    let mut response = DemandResponse {
        slots: dims.slots,
        clusters: dims.clusters,
        blocks: dims.blocks,
        block_demand: vec![0.0; tc * dims.blocks],
        shift: vec![0.0; tc],
        objective_value: 0.0,
    };
    let mut duals = DualSolution {
        slots: dims.slots,
        clusters: dims.clusters,
        blocks: dims.blocks,
        rho: vec![0.0; tc],
        mu_minus: vec![0.0; tc * dims.blocks],
        mu_plus: vec![0.0; tc * (dims.blocks - 1)],
        phi_minus: vec![0.0; tc],
        phi_plus: vec![0.0; tc],
        eta: (0..dims.clusters)
            .map(|c| assignment[layout.eta(c)])
            .collect(),
    };

    for t in 0..dims.slots {
        for c in 0..dims.clusters {
            let i = t * dims.clusters + c;
            response.shift[i] = assignment[layout.dsh(t, c)];
            duals.rho[i] = assignment[layout.rho(t, c)];
            duals.phi_minus[i] = assignment[layout.phi_minus(t, c)];
            duals.phi_plus[i] = assignment[layout.phi_plus(t, c)];
            for f in 0..dims.blocks {
                response.block_demand[i * dims.blocks + f] = assignment[layout.ds(t, c, f)];
                duals.mu_minus[i * dims.blocks + f] = assignment[layout.mu_minus(t, c, f)];
            }
            for f in 0..dims.blocks - 1 {
                duals.mu_plus[i * (dims.blocks - 1) + f] = assignment[layout.mu_plus(t, c, f)];
            }
        }
    }
    // The collective consumer objective at the extracted point.
    let mut objective = 0.0;
    for t in 0..dims.slots {
        for c in 0..dims.clusters {
            let n = model.cluster_n[c];
            for f in 0..dims.blocks {
                objective += n * prices.price(f) * response.block(t, c, f);
            }
            let x = response.shift_at(t, c);
            objective += 0.5 * n * model.cluster_tau[c] * x * x;
        }
    }
    response.objective_value = objective;
    let dpeak = assignment[layout.dpeak()];
    Ok((prices, response, duals, dpeak))
}

/// A quantity that came within one percent of its big-M ceiling.
#[derive(Debug, Clone)]
pub struct BigMFlag {
    pub what: String,
    pub value: f64,
    pub bound: f64,
}

/// Result of auditing a solved assignment against the big-M constants.
#[derive(Debug, Clone, Default)]
pub struct BigMReport {
    pub flags: Vec<BigMFlag>,
}

impl BigMReport {
    pub fn is_clean(&self) -> bool {
        self.flags.is_empty()
    }
}

/// Flags any primal or dual quantity within 1% of its big-M bound; a flagged
/// solution means the constants may have truncated the feasible set.
pub fn validate_big_m(model: &MilpModel, assignment: &[f64], big_m: &BigMSet) -> BigMReport {
    let layout = &model.layout;
    let dims = model.dims;
    let mut report = BigMReport::default();
    let mut check = |what: String, value: f64, bound: f64| {
        if value >= 0.99 * bound {
            report.flags.push(BigMFlag { what, value, bound });
        }
    };

    for t in 0..dims.slots {
        for c in 0..dims.clusters {
            for f in 0..dims.blocks {
                check(
                    format!("ds[{t},{c},{f}]"),
                    assignment[layout.ds(t, c, f)],
                    big_m.m1,
                );
                check(
                    format!("muL[{t},{c},{f}]"),
                    assignment[layout.mu_minus(t, c, f)],
                    big_m.m1,
                );
            }
            for f in 0..dims.blocks - 1 {
                check(
                    format!("slack q-ds[{t},{c},{f}]"),
                    assignment[layout.q(f)] - assignment[layout.ds(t, c, f)],
                    big_m.m2,
                );
                check(
                    format!("muU[{t},{c},{f}]"),
                    assignment[layout.mu_plus(t, c, f)],
                    big_m.m2,
                );
            }
            let dsh = assignment[layout.dsh(t, c)];
            let span = -model.variables[layout.dsh(t, c)].lower;
            check(format!("dsh+span[{t},{c}]"), dsh + span, big_m.m3);
            check(
                format!("phiL[{t},{c}]"),
                assignment[layout.phi_minus(t, c)],
                big_m.m3,
            );
            check(format!("span-dsh[{t},{c}]"), span - dsh, big_m.m4);
            check(
                format!("phiU[{t},{c}]"),
                assignment[layout.phi_plus(t, c)],
                big_m.m4,
            );
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::response::{solve_response, DEFAULT_TOL};
    use crate::scenario::ClusterProfile;

    fn toy_cfg(slots: usize, clusters: usize, blocks: usize) -> ScenarioConfig {
        let baselines: Vec<Vec<f64>> = (0..clusters)
            .map(|c| {
                (0..slots)
                    .map(|t| 0.4 + 0.3 * ((t + c) % 3) as f64)
                    .collect()
            })
            .collect();
        ScenarioConfig {
            label: "toy".into(),
            horizon: slots,
            rate_of_return: 1.0,
            block_count: blocks,
            wholesale_rates: (0..slots).map(|t| 0.04 + 0.01 * (t % 2) as f64).collect(),
            breakpoint_bounds: None,
            clusters: baselines
                .into_iter()
                .map(|baseline| ClusterProfile {
                    n: 3,
                    sigma: 0.2,
                    tau: 0.03,
                    baseline,
                })
                .collect(),
        }
    }

    #[test]
    fn big_m_covers_primal_bound() {
        let cfg = toy_cfg(2, 1, 2);
        let bm = compute_big_m(&cfg, 0.03).unwrap();
        assert!(bm.m1 >= (1.0 + 0.2) * cfg.max_baseline());
        assert!(bm.m1 > 0.0 && bm.m2 > 0.0 && bm.m3 > 0.0 && bm.m4 > 0.0);
        assert!(!bm.derivation_log.is_empty());
    }

    #[test]
    fn big_m_positive_with_zero_increment() {
        let cfg = toy_cfg(2, 1, 2);
        let bm = compute_big_m(&cfg, 0.0).unwrap();
        assert!(bm.m1 > 0.0 && bm.m2 > 0.0 && bm.m3 > 0.0 && bm.m4 > 0.0);
    }

    #[test]
    fn big_m_primal_candidate_scales_with_demand() {
        // Large demand with zero wholesale cost and shifting cost makes the
        // primal candidate dominate, so doubling demand doubles M1.
        let mut cfg = toy_cfg(2, 1, 2);
        cfg.wholesale_rates = vec![0.0, 0.0];
        cfg.clusters[0].tau = 0.0;
        cfg.clusters[0].baseline = vec![100.0, 80.0];
        let m_a = compute_big_m(&cfg, 0.0).unwrap().m1;
        cfg.clusters[0].baseline = vec![200.0, 160.0];
        let m_b = compute_big_m(&cfg, 0.0).unwrap().m1;
        assert!((m_b - 2.0 * m_a).abs() < 1e-9);
    }

    #[test]
    fn variable_and_binary_counts_match_closed_form() {
        for (t, c, f) in [(2, 1, 2), (3, 2, 3), (24, 4, 3)] {
            let cfg = toy_cfg(t, c, f);
            let bm = compute_big_m(&cfg, 0.03).unwrap();
            let model = build_milp(&cfg, 0.03, &bm).unwrap();
            let stats = model.stats();
            assert_eq!(stats.binaries, t * c * (2 * f + 1));
            assert_eq!(stats.continuous, t * c * (3 * f + 4) + c + f + 1);
            for row in &model.rows {
                for &(_, a) in &row.terms {
                    assert!(a.is_finite());
                }
            }
        }
    }

    #[test]
    fn binary_count_for_case_study_size() {
        let cfg = toy_cfg(24, 4, 3);
        let bm = compute_big_m(&cfg, 0.03).unwrap();
        let model = build_milp(&cfg, 0.03, &bm).unwrap();
        assert_eq!(model.stats().binaries, 672);
    }

    #[test]
    fn two_block_epigraph_rows() {
        let cfg = toy_cfg(2, 1, 2);
        let bm = compute_big_m(&cfg, 0.03).unwrap();
        let model = build_milp(&cfg, 0.03, &bm).unwrap();
        // For F = 2 the z rows per (t, c) are z >= 0 and z >= D - q1.
        let zrows: Vec<&Row> = model
            .rows
            .iter()
            .filter(|r| r.name.starts_with("zrow[0,0"))
            .collect();
        assert_eq!(zrows.len(), 2);
        assert_eq!(zrows[0].rhs, 0.0);
        assert_eq!(zrows[0].terms.len(), 1);
        assert_eq!(zrows[1].rhs, cfg.clusters[0].baseline[0]);
        assert_eq!(zrows[1].terms.len(), 2);
    }

    #[test]
    fn epigraph_matches_block_split_overflow() {
        // max(0, D - q1, 2D - 2q1 - q2) against the weighted split.
        let q = [0.5, 0.3];
        let d: f64 = 1.0;
        let pieces = [0.0, d - q[0], 2.0 * d - 2.0 * q[0] - q[1]];
        let max_piece = pieces.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((max_piece - 0.7).abs() < 1e-15);
        assert!((overflow_term(d, &q) - max_piece).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_big_m() {
        let cfg = toy_cfg(2, 1, 2);
        let mut bm = compute_big_m(&cfg, 0.03).unwrap();
        bm.m2 = 0.0;
        assert!(build_milp(&cfg, 0.03, &bm).is_err());
    }

    #[test]
    fn reference_point_is_feasible_and_extracts() {
        // Base price at the flat price, breakpoints at the ceiling, zero
        // shift: feasible for any increment when the ceiling spans the
        // baseline, and it extracts back to the baseline PAR.
        let cfg = toy_cfg(3, 2, 2);
        let xi = 0.03;
        let bm = compute_big_m(&cfg, xi).unwrap();
        let model = build_milp(&cfg, xi, &bm).unwrap();
        let (_, q_hi) = default_breakpoint_bounds(&cfg);
        let prices = PriceStructure::new(model.lambda_o, xi, vec![q_hi; 1]);
        let (resp, duals) = solve_response(&cfg, &prices, DEFAULT_TOL).unwrap();
        let x = assemble_assignment(&model, &cfg, &prices, &resp, &duals);
        model.verify_assignment(&x, ROW_TOL).unwrap();

        let (p2, resp2, _, dpeak) = extract_solution(&model, &x).unwrap();
        assert_eq!(p2.xi, xi);
        let derived = crate::scenario::derive(&cfg).unwrap();
        assert!((model.par_of(dpeak) - derived.baseline_par).abs() < 1e-9);
        assert!(model.par_of(dpeak) >= 1.0 - 1e-12);
        for t in 0..3 {
            for c in 0..2 {
                assert!((resp2.total(t, c) - cfg.clusters[c].baseline[t]).abs() < 1e-9);
            }
        }

        let report = validate_big_m(&model, &x, &bm);
        assert!(report.is_clean(), "{:?}", report.flags);
    }

    #[test]
    fn infeasible_assignment_is_rejected() {
        let cfg = toy_cfg(2, 1, 2);
        let bm = compute_big_m(&cfg, 0.03).unwrap();
        let model = build_milp(&cfg, 0.03, &bm).unwrap();
        let x = vec![0.0; model.variables.len()];
        // All-zero violates the balance rows.
        assert!(extract_solution(&model, &x).is_err());
    }

    #[test]
    fn big_m_audit_flags_near_bound_values() {
        let cfg = toy_cfg(2, 1, 2);
        let bm = compute_big_m(&cfg, 0.03).unwrap();
        let model = build_milp(&cfg, 0.03, &bm).unwrap();
        let mut x = vec![0.0; model.variables.len()];
        x[model.layout.mu_minus(0, 0, 0)] = 0.995 * bm.m1;
        let report = validate_big_m(&model, &x, &bm);
        assert!(report.flags.iter().any(|f| f.what.contains("muL[0,0,0]")));
    }
}
