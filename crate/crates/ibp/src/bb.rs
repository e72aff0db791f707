//! Exact MILP solver: LP relaxation plus branch-and-bound over the
//! complementarity binaries.
//!
//! Nodes are sets of binary fixings. Branching picks the complementarity
//! pair with the largest product violation at the node relaxation; node
//! selection is best-bound with a depth-first plunge from every popped node.
//! Incumbents come from three sources: the flat-price reference point, node
//! relaxations that happen to be integral, and a primal heuristic that takes
//! the node's price variables, re-solves the true consumer response, and
//! lifts the base price to the smallest revenue-adequate value (the response
//! itself is invariant to the base price).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::milp::{overflow_term, BinaryRole, MilpModel, RowSense, ROW_TOL};
use crate::response::DEFAULT_TOL;
use crate::scenario::{default_breakpoint_bounds, PriceStructure};
use crate::simplex::{solve_lp, Cmp, LinearProgram, LpOutcome, LpRow, SimplexEngine};

/// Integrality tolerance for the relaxed binaries.
pub const INT_TOL: f64 = 1e-6;

/// Verification tolerance for constructed (non-LP-certified) incumbents.
/// Strict, so a heuristic cannot shave the objective by leaning on the row
/// tolerance; genuine candidates carry only float-level residuals.
const STRICT_TOL: f64 = 1e-11;

/// Branching rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Branching {
    /// Largest primal-dual product violation, ties by variable index.
    #[default]
    MostViolatedComplementarity,
    /// Lowest-index fractional binary.
    FirstOpen,
}

/// Solver controls.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Relative optimality gap at which the search stops.
    pub gap_tol: f64,
    /// Wall-clock limit in seconds. Ignored in deterministic mode, where
    /// only the node limit bounds the search.
    pub time_limit: Option<f64>,
    /// Node evaluation limit.
    pub node_limit: Option<u64>,
    pub branching: Branching,
    /// Single-threaded fixed-order exploration with no clock dependence;
    /// results are bit-for-bit reproducible.
    pub deterministic: bool,
    /// Emit per-node progress lines on stderr.
    pub log: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            gap_tol: 1e-6,
            time_limit: None,
            node_limit: None,
            branching: Branching::default(),
            deterministic: true,
            log: false,
        }
    }
}

/// Search result status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Gap closed to within the tolerance.
    Optimal,
    /// A feasible incumbent exists but a limit stopped the gap closure.
    FeasibleGap,
    /// The model admits no feasible assignment.
    Infeasible,
    /// A limit stopped the search before any incumbent was found.
    LimitReached,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::FeasibleGap => "feasible-gap",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::LimitReached => "limit-reached",
        };
        f.write_str(s)
    }
}

/// Outcome of a branch-and-bound run.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    /// Best assignment found, absent when no incumbent exists.
    pub assignment: Option<Vec<f64>>,
    /// Objective of the incumbent.
    pub objective: Option<f64>,
    /// Best proven lower bound on the objective.
    pub bound: f64,
    /// Relative gap between incumbent and bound.
    pub gap: f64,
    pub node_count: u64,
    pub lp_count: u64,
    /// Wall time of the run; diagnostic only, never written to result files.
    pub wall_seconds: f64,
}

impl SolveOutcome {
    /// Machine-readable one-line summary. Carries the wall time, so it
    /// belongs on the console, not in result files.
    pub fn summary(&self) -> String {
        format!(
            "status={} value={} bound={:.9} gap={:.3e} nodes={} lps={} time={:.2}s",
            self.status,
            self.objective
                .map_or_else(|| "none".to_string(), |v| format!("{v:.9}")),
            self.bound,
            self.gap,
            self.node_count,
            self.lp_count,
            self.wall_seconds
        )
    }
}

fn sense_to_cmp(sense: RowSense) -> Cmp {
    match sense {
        RowSense::Le => Cmp::Le,
        RowSense::Eq => Cmp::Eq,
        RowSense::Ge => Cmp::Ge,
    }
}

/// Converts a model to the LP core representation plus base bounds.
fn model_to_lp(model: &MilpModel) -> (LinearProgram, Vec<f64>, Vec<f64>) {
    let ncols = model.variables.len();
    let mut objective = vec![0.0; ncols];
    for &(j, c) in &model.objective {
        objective[j] = c;
    }
    let rows = model
        .rows
        .iter()
        .map(|r| LpRow {
            terms: r.terms.clone(),
            cmp: sense_to_cmp(r.sense),
            rhs: r.rhs,
        })
        .collect();
    let lower: Vec<f64> = model.variables.iter().map(|v| v.lower).collect();
    let upper: Vec<f64> = model.variables.iter().map(|v| v.upper).collect();
    (LinearProgram::new(ncols, rows, objective), lower, upper)
}

/// Applies one binary fixing plus the bound tightening it implies on its
/// complementarity partner.
fn apply_fixing(model: &MilpModel, lower: &mut [f64], upper: &mut [f64], var: usize, val: u8) {
    let v = val as f64;
    lower[var] = v;
    upper[var] = v;
    let layout = &model.layout;
    match layout.binary_role(var) {
        Some(BinaryRole::BlockLower { t, c, f }) => {
            if val == 0 {
                upper[layout.ds(t, c, f)] = 0.0;
            } else {
                upper[layout.mu_minus(t, c, f)] = 0.0;
            }
        }
        Some(BinaryRole::BlockUpper { t, c, f }) => {
            if val == 1 {
                upper[layout.mu_plus(t, c, f)] = 0.0;
            }
            // val == 0 couples q and d^s through the big-M row itself.
        }
        Some(BinaryRole::ShiftLower { t, c }) => {
            let dsh = layout.dsh(t, c);
            if val == 0 {
                // Shift pinned to its original lower bound.
                upper[dsh] = upper[dsh].min(model.variables[dsh].lower);
            } else {
                upper[layout.phi_minus(t, c)] = 0.0;
            }
        }
        Some(BinaryRole::ShiftUpper { t, c }) => {
            let dsh = layout.dsh(t, c);
            if val == 0 {
                lower[dsh] = lower[dsh].max(model.variables[dsh].upper);
            } else {
                upper[layout.phi_plus(t, c)] = 0.0;
            }
        }
        None => {}
    }
}

/// Solves the LP relaxation of the model under the given binary fixings.
/// Unfixed binaries relax to [0, 1].
pub fn solve_lp_relaxation(model: &MilpModel, fixings: &[(usize, u8)]) -> Result<LpOutcome> {
    let (lp, mut lower, mut upper) = model_to_lp(model);
    for &(var, val) in fixings {
        apply_fixing(model, &mut lower, &mut upper, var, val);
    }
    solve_lp(&lp, &lower, &upper, None)
}

struct Node {
    fixings: Vec<(usize, u8)>,
    bound: f64,
    depth: u32,
    id: u64,
}

struct HeapEntry(f64, u64, Node);

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.0 == other.0 && self.1 == other.1
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert for best-bound-first with FIFO ties.
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

struct Search<'a> {
    model: &'a MilpModel,
    engine: SimplexEngine,
    base_lower: Vec<f64>,
    base_upper: Vec<f64>,
    binaries: Vec<usize>,
    opts: SolveOptions,
    incumbent: Option<(Vec<f64>, f64)>,
    frontier: BinaryHeap<HeapEntry>,
    node_count: u64,
    lp_count: u64,
    next_id: u64,
    started: Instant,
    best_bound_reported: f64,
    /// Memo of breakpoint candidates already evaluated by the heuristic,
    /// keyed by exact bit patterns.
    probe_cache: BTreeMap<Vec<u64>, Option<f64>>,
}

enum NodeEval {
    Pruned,
    Branched(Node, Node),
}

impl<'a> Search<'a> {
    fn new(model: &'a MilpModel, opts: SolveOptions) -> Self {
        let (lp, base_lower, base_upper) = model_to_lp(model);
        let binaries: Vec<usize> = model
            .variables
            .iter()
            .enumerate()
            .filter_map(|(j, v)| v.binary.then_some(j))
            .collect();
        Search {
            model,
            engine: SimplexEngine::new(lp),
            base_lower,
            base_upper,
            binaries,
            opts,
            incumbent: None,
            frontier: BinaryHeap::new(),
            node_count: 0,
            lp_count: 0,
            next_id: 0,
            started: Instant::now(),
            best_bound_reported: f64::NEG_INFINITY,
            probe_cache: BTreeMap::new(),
        }
    }

    fn out_of_budget(&self) -> bool {
        if let Some(limit) = self.opts.node_limit {
            if self.node_count >= limit {
                return true;
            }
        }
        if !self.opts.deterministic {
            if let Some(limit) = self.opts.time_limit {
                if self.started.elapsed().as_secs_f64() >= limit {
                    return true;
                }
            }
        }
        false
    }

    fn prune_threshold(&self) -> f64 {
        match &self.incumbent {
            Some((_, obj)) => obj - (self.opts.gap_tol * obj.abs()).max(1e-12),
            None => f64::INFINITY,
        }
    }

    /// Offers an assignment as incumbent after canonicalizing the epigraph
    /// variables and re-verifying every row at the given tolerance.
    fn offer_incumbent(&mut self, mut x: Vec<f64>, tol: f64) -> bool {
        let layout = &self.model.layout;
        let dims = self.model.dims;
        // Round binaries exactly.
        for &j in &self.binaries {
            x[j] = if x[j] >= 0.5 { 1.0 } else { 0.0 };
        }
        // Canonical epigraph values: the exact overflow terms at q.
        let q: Vec<f64> = (0..dims.blocks - 1).map(|f| x[layout.q(f)]).collect();
        for t in 0..dims.slots {
            for (c, cluster) in self.model.scenario.clusters.iter().enumerate() {
                x[layout.z(t, c)] = overflow_term(cluster.baseline[t], &q);
            }
        }
        if self.model.verify_assignment(&x, tol).is_err() {
            return false;
        }
        let obj = x[layout.dpeak()];
        let improved = self
            .incumbent
            .as_ref()
            .is_none_or(|(_, best)| obj < best - 1e-12);
        if improved {
            if self.opts.log {
                eprintln!("incumbent {obj:.9}");
            }
            self.incumbent = Some((x, obj));
        }
        improved
    }

    /// Reference point: flat price, breakpoints at the ceiling, baseline
    /// response. Feasible whenever the breakpoint ceiling spans the
    /// baseline demand.
    fn seed_reference_point(&mut self) {
        let (_, q_hi) = default_breakpoint_bounds(&self.model.scenario);
        self.try_breakpoints(&vec![q_hi; self.model.dims.blocks - 1]);
    }

    /// Evaluates one breakpoint candidate through the true consumer
    /// response, with the base price lifted to the smallest
    /// revenue-adequate value (the response is invariant to it). Feasible
    /// candidates are offered as incumbents; the memo avoids re-solving
    /// repeated candidates.
    fn try_breakpoints(&mut self, q: &[f64]) -> Option<f64> {
        let key: Vec<u64> = q.iter().map(|v| v.to_bits()).collect();
        if let Some(cached) = self.probe_cache.get(&key) {
            return *cached;
        }
        let result = incumbent_from_breakpoints(self.model, q);
        let value = result.as_ref().map(|x| x[self.model.layout.dpeak()]);
        if let Some(x) = result {
            self.offer_incumbent(x, STRICT_TOL);
        }
        self.probe_cache.insert(key, value);
        value
    }

    /// Primal heuristic at a node: probe the relaxation's breakpoints.
    fn heuristic(&mut self, relax: &[f64]) {
        let layout = &self.model.layout;
        let dims = self.model.dims;
        let q: Vec<f64> = (0..dims.blocks - 1).map(|f| relax[layout.q(f)]).collect();
        self.try_breakpoints(&q);
    }

    /// Root probes: the breakpoint box corners and every distinct baseline
    /// demand level. The aggregate peak as a function of a breakpoint kinks
    /// where it crosses a baseline level, so these candidates cover the
    /// interesting basins.
    fn root_probes(&mut self) {
        let cfg = &self.model.scenario;
        let (q_lo, q_hi) = default_breakpoint_bounds(cfg);
        let mut levels: Vec<f64> = vec![q_lo, q_hi];
        for cluster in &cfg.clusters {
            for &d in &cluster.baseline {
                let v = d.clamp(q_lo, q_hi);
                levels.push(v);
            }
        }
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        // Keep the candidate set bounded for wide scenarios.
        let cap = 48usize;
        if levels.len() > cap {
            let stride = levels.len() as f64 / cap as f64;
            let mut kept: Vec<f64> = (0..cap)
                .map(|i| levels[(i as f64 * stride) as usize])
                .collect();
            kept.push(q_hi);
            kept.dedup();
            levels = kept;
        }

        let breaks = self.model.dims.blocks - 1;
        let mut seeds: Vec<(f64, Vec<f64>)> = Vec::new();
        let record = |seeds: &mut Vec<(f64, Vec<f64>)>, obj: Option<f64>, q: Vec<f64>| {
            if let Some(v) = obj {
                seeds.push((v, q));
            }
        };
        if breaks == 1 {
            for &a in &levels {
                let obj = self.try_breakpoints(&[a]);
                record(&mut seeds, obj, vec![a]);
            }
        } else {
            // Pairs from a thinned set; deeper ladders fall back to the
            // polish step.
            let thin: Vec<f64> = levels
                .iter()
                .enumerate()
                .filter(|(i, _)| levels.len() <= 12 || i % (levels.len() / 12).max(1) == 0)
                .map(|(_, &v)| v)
                .collect();
            for &a in &thin {
                for &b in &thin {
                    let mut q = vec![q_hi; breaks];
                    q[0] = a;
                    q[1] = b;
                    let obj = self.try_breakpoints(&q);
                    record(&mut seeds, obj, q);
                }
            }
        }
        // Refine the most promising basins, not just the single best probe.
        seeds.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (_, q) in seeds.into_iter().take(5) {
            self.polish_from(q);
        }
    }

    /// Coordinate pattern search from a starting breakpoint vector.
    fn polish_from(&mut self, mut q: Vec<f64>) {
        let Some(mut best) = self.try_breakpoints(&q) else {
            return;
        };
        let (q_lo, q_hi) = default_breakpoint_bounds(&self.model.scenario);
        let span = (q_hi - q_lo).max(1e-12);
        let breaks = q.len();
        let mut delta = span / 8.0;
        while delta > 1e-9 * span {
            let mut improved = false;
            for k in 0..breaks {
                for sgn in [-1.0, 1.0] {
                    let mut cand = q.clone();
                    cand[k] = (cand[k] + sgn * delta).clamp(q_lo, q_hi);
                    if cand[k] == q[k] {
                        continue;
                    }
                    if let Some(obj) = self.try_breakpoints(&cand) {
                        if obj < best - 1e-12 {
                            q = cand;
                            best = obj;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                delta *= 0.5;
            }
        }
    }

    /// Polish around the current incumbent's breakpoints.
    fn polish_incumbent(&mut self) {
        let Some(q) = self.incumbent.as_ref().map(|(x, _)| {
            let layout = &self.model.layout;
            (0..self.model.dims.blocks - 1)
                .map(|f| x[layout.q(f)])
                .collect::<Vec<f64>>()
        }) else {
            return;
        };
        self.polish_from(q);
    }

    /// Product violation of each unfixed binary's complementarity pair.
    fn select_branch(&self, relax: &[f64], fixed: &[(usize, u8)]) -> Option<usize> {
        let layout = &self.model.layout;
        let is_fixed = |j: usize| fixed.iter().any(|&(v, _)| v == j);
        let mut best: Option<(usize, f64)> = None;
        for &j in &self.binaries {
            if is_fixed(j) {
                continue;
            }
            let frac = relax[j].min(1.0 - relax[j]).max(0.0);
            let violation = match layout.binary_role(j) {
                Some(BinaryRole::BlockLower { t, c, f }) => {
                    relax[layout.ds(t, c, f)].max(0.0) * relax[layout.mu_minus(t, c, f)].max(0.0)
                }
                Some(BinaryRole::BlockUpper { t, c, f }) => {
                    (relax[layout.q(f)] - relax[layout.ds(t, c, f)]).max(0.0)
                        * relax[layout.mu_plus(t, c, f)].max(0.0)
                }
                Some(BinaryRole::ShiftLower { t, c }) => {
                    let span = -self.base_lower[layout.dsh(t, c)];
                    (relax[layout.dsh(t, c)] + span).max(0.0)
                        * relax[layout.phi_minus(t, c)].max(0.0)
                }
                Some(BinaryRole::ShiftUpper { t, c }) => {
                    let span = self.base_upper[layout.dsh(t, c)];
                    (span - relax[layout.dsh(t, c)]).max(0.0)
                        * relax[layout.phi_plus(t, c)].max(0.0)
                }
                None => 0.0,
            };
            match self.opts.branching {
                Branching::FirstOpen => {
                    if frac > INT_TOL || violation > 1e-10 {
                        return Some(j);
                    }
                }
                Branching::MostViolatedComplementarity => {
                    let score = violation.max(frac * 1e-9);
                    if score > 1e-12 && best.is_none_or(|(_, s)| score > s) {
                        best = Some((j, score));
                    }
                }
            }
        }
        best.map(|(j, _)| j)
    }

    /// Evaluates one node: solve, prune, try incumbents, or branch.
    fn evaluate(&mut self, node: Node) -> Result<NodeEval> {
        self.node_count += 1;
        let mut lower = self.base_lower.clone();
        let mut upper = self.base_upper.clone();
        for &(var, val) in &node.fixings {
            apply_fixing(self.model, &mut lower, &mut upper, var, val);
        }

        self.lp_count += 1;
        let outcome = self.engine.solve(&lower, &upper)?;
        let sol = match outcome {
            LpOutcome::Infeasible => return Ok(NodeEval::Pruned),
            LpOutcome::Optimal(s) => s,
        };
        let bound = sol.objective;

        if self.opts.log {
            eprintln!(
                "node {} depth {} bound {:.9} incumbent {} gap {:.3e}",
                node.id,
                node.depth,
                bound,
                self.incumbent
                    .as_ref()
                    .map_or_else(|| "-".into(), |(_, o)| format!("{o:.9}")),
                self.current_gap()
            );
        }

        if bound >= self.prune_threshold() {
            return Ok(NodeEval::Pruned);
        }

        // Integral relaxation: candidate incumbent, node closes.
        let integral = self
            .binaries
            .iter()
            .all(|&j| sol.x[j] <= INT_TOL || sol.x[j] >= 1.0 - INT_TOL);
        if integral {
            self.offer_incumbent(sol.x.clone(), ROW_TOL);
            return Ok(NodeEval::Pruned);
        }

        self.heuristic(&sol.x);
        if bound >= self.prune_threshold() {
            return Ok(NodeEval::Pruned);
        }

        let Some(branch_var) = self.select_branch(&sol.x, &node.fixings) else {
            // No violated pair and no usable fractionality: round and retry;
            // if that fails the node cannot improve on the incumbent path.
            self.offer_incumbent(sol.x.clone(), ROW_TOL);
            return Ok(NodeEval::Pruned);
        };

        // Preferred child follows the relaxation's hint.
        let hint: u8 = if sol.x[branch_var] >= 0.5 { 1 } else { 0 };
        let mut first = node.fixings.clone();
        first.push((branch_var, hint));
        let mut second = node.fixings.clone();
        second.push((branch_var, 1 - hint));
        let a = Node {
            fixings: first,
            bound,
            depth: node.depth + 1,
            id: self.bump_id(),
        };
        let b = Node {
            fixings: second,
            bound,
            depth: node.depth + 1,
            id: self.bump_id(),
        };
        Ok(NodeEval::Branched(a, b))
    }

    fn bump_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    /// Smallest bound among open nodes; infinity when the tree is exhausted.
    fn tree_bound(&self) -> f64 {
        self.frontier
            .iter()
            .map(|e| e.0)
            .fold(f64::INFINITY, f64::min)
    }

    fn current_gap(&self) -> f64 {
        match &self.incumbent {
            Some((_, obj)) => {
                let bound = self.tree_bound().min(*obj).max(self.best_bound_reported);
                if !bound.is_finite() {
                    return f64::INFINITY;
                }
                ((obj - bound) / obj.abs().max(1e-9)).max(0.0)
            }
            None => f64::INFINITY,
        }
    }

    fn run(&mut self, warm: Option<&[f64]>) -> Result<SolveOutcome> {
        if let Some(x) = warm {
            if x.len() == self.model.variables.len() {
                self.offer_incumbent(x.to_vec(), STRICT_TOL);
            }
        }
        self.seed_reference_point();
        self.root_probes();
        self.polish_incumbent();

        let root = Node {
            fixings: Vec::new(),
            bound: f64::NEG_INFINITY,
            depth: 0,
            id: 0,
        };
        self.frontier.push(HeapEntry(root.bound, root.id, root));

        let mut hit_limit = false;
        'outer: while let Some(HeapEntry(_, _, node)) = self.frontier.pop() {
            if node.bound >= self.prune_threshold() {
                continue;
            }
            // Global lower bound including this node; monotone by best-bound
            // pop order.
            let global = node.bound.min(self.tree_bound());
            if let Some((_, obj)) = &self.incumbent {
                self.best_bound_reported = self.best_bound_reported.max(global.min(*obj));
                let gap = ((obj - global) / obj.abs().max(1e-9)).max(0.0);
                if gap <= self.opts.gap_tol {
                    self.frontier.push(HeapEntry(node.bound, node.id, node));
                    break;
                }
            }

            // Depth-first plunge from this node.
            let mut dive = Some(node);
            while let Some(current) = dive.take() {
                if self.out_of_budget() {
                    self.frontier
                        .push(HeapEntry(current.bound, current.id, current));
                    hit_limit = true;
                    break 'outer;
                }
                if current.bound >= self.prune_threshold() {
                    continue;
                }
                match self.evaluate(current)? {
                    NodeEval::Pruned => {}
                    NodeEval::Branched(preferred, sibling) => {
                        self.frontier
                            .push(HeapEntry(sibling.bound, sibling.id, sibling));
                        dive = Some(preferred);
                    }
                }
            }
        }

        // Final polish of whatever the search settled on.
        self.polish_incumbent();

        let incumbent_obj = self.incumbent.as_ref().map(|(_, o)| *o);
        let bound = match incumbent_obj {
            Some(obj) => {
                let tree = self.tree_bound().min(obj);
                if self.frontier.is_empty() {
                    obj
                } else {
                    tree.max(self.best_bound_reported)
                }
            }
            None => {
                if self.frontier.is_empty() && !hit_limit {
                    f64::INFINITY // proven infeasible
                } else {
                    self.tree_bound().max(self.best_bound_reported)
                }
            }
        };
        let gap = match incumbent_obj {
            Some(obj) if bound.is_finite() => ((obj - bound) / obj.abs().max(1e-9)).max(0.0),
            _ => f64::INFINITY,
        };
        let status = match incumbent_obj {
            Some(_) if gap <= self.opts.gap_tol => SolveStatus::Optimal,
            Some(_) => SolveStatus::FeasibleGap,
            None if hit_limit => SolveStatus::LimitReached,
            None => SolveStatus::Infeasible,
        };

        let (assignment, objective) = match &self.incumbent {
            Some((x, obj)) => (Some(x.clone()), Some(*obj)),
            None => (None, None),
        };
        Ok(SolveOutcome {
            status,
            assignment,
            objective,
            bound,
            gap,
            node_count: self.node_count,
            lp_count: self.lp_count,
            wall_seconds: self.started.elapsed().as_secs_f64(),
        })
    }
}

/// Builds a feasible assignment for `model` from candidate breakpoints: the
/// true response at those breakpoints with the base price lifted to the
/// smallest revenue-adequate value. Returns `None` when no base price keeps
/// both economics constraints satisfied.
pub fn incumbent_from_breakpoints(model: &MilpModel, q: &[f64]) -> Option<Vec<f64>> {
    let cfg = &model.scenario;
    let blocks = model.dims.blocks;
    let prices = PriceStructure::new(0.0, model.xi, q.to_vec());
    let mut parts = crate::response::solve_response_parts(cfg, &prices, DEFAULT_TOL).ok()?;

    // Clusters with zero shifting cost have a whole face of optimal
    // responses; pick the selection that fills cheap wholesale slots, which
    // maximizes the revenue slack without raising the served cap.
    for (c, cluster) in cfg.clusters.iter().enumerate() {
        if cluster.tau == 0.0 && model.xi > 0.0 {
            if let Some(reselected) = crate::response::reselect_zero_cost_cluster(
                cluster,
                &prices,
                parts[c].1.eta,
                &cfg.wholesale_rates,
                DEFAULT_TOL,
            ) {
                parts[c] = reselected;
            }
        }
    }
    let (resp, mut duals) = crate::response::combine_parts(cfg, blocks, parts);

    let mut revenue_gap = 0.0;
    for t in 0..cfg.horizon {
        for (c, cluster) in cfg.clusters.iter().enumerate() {
            let n = cluster.n as f64;
            for f in 0..blocks {
                revenue_gap += n
                    * (cfg.rate_of_return * cfg.wholesale_rates[t] - model.xi * f as f64)
                    * resp.block(t, c, f);
            }
        }
    }
    let lambda1 = (revenue_gap / model.total_demand).max(0.0);
    if lambda1 > model.big_m.lambda1_upper + 1e-12 {
        return None;
    }
    // Translating the whole ladder by lambda1 leaves the response optimal
    // and shifts the balance and neutrality multipliers by -n*lambda1.
    for (c, cluster) in cfg.clusters.iter().enumerate() {
        let shift = cluster.n as f64 * lambda1;
        duals.eta[c] -= shift;
        for t in 0..cfg.horizon {
            duals.rho[t * cfg.cluster_count() + c] -= shift;
        }
    }
    let lifted = PriceStructure::new(lambda1, model.xi, q.to_vec());
    let x = crate::milp::assemble_assignment(model, cfg, &lifted, &resp, &duals);
    model.verify_assignment(&x, ROW_TOL).ok()?;
    Some(x)
}

/// Runs branch-and-bound on the model. `warm` is an optional feasible
/// assignment adopted as the starting incumbent after verification.
pub fn solve(model: &MilpModel, opts: &SolveOptions, warm: Option<&[f64]>) -> Result<SolveOutcome> {
    let mut search = Search::new(model, opts.clone());
    search.run(warm)
}

/// Exhaustive oracle: tries every binary pattern, LP-solving each, and
/// returns the best feasible assignment with its objective. Refuses models
/// with more binaries than `cap`.
pub fn enumerate_patterns(model: &MilpModel, cap: usize) -> Result<Option<(f64, Vec<f64>)>> {
    let binaries: Vec<usize> = model
        .variables
        .iter()
        .enumerate()
        .filter_map(|(j, v)| v.binary.then_some(j))
        .collect();
    if binaries.len() > cap {
        return Err(Error::EnumerationCap {
            binaries: binaries.len(),
            cap,
        });
    }
    let (lp, base_lower, base_upper) = model_to_lp(model);
    let mut engine = SimplexEngine::new(lp);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for pattern in 0u64..(1u64 << binaries.len()) {
        let mut lower = base_lower.clone();
        let mut upper = base_upper.clone();
        let mut consistent = true;
        for (k, &var) in binaries.iter().enumerate() {
            let val = ((pattern >> k) & 1) as u8;
            apply_fixing(model, &mut lower, &mut upper, var, val);
        }
        for j in 0..engine.lp().ncols {
            if lower[j] > upper[j] {
                consistent = false;
                break;
            }
        }
        if !consistent {
            continue;
        }
        match engine.solve(&lower, &upper)? {
            LpOutcome::Infeasible => {}
            LpOutcome::Optimal(sol) => {
                if best
                    .as_ref()
                    .is_none_or(|(v, _)| sol.objective < v - 1e-12)
                {
                    best = Some((sol.objective, sol.x));
                }
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{build_milp, compute_big_m, extract_solution};
    use crate::scenario::{ClusterProfile, ScenarioConfig};

    fn tiny_cfg() -> ScenarioConfig {
        ScenarioConfig {
            label: "tiny".into(),
            horizon: 2,
            rate_of_return: 1.0,
            block_count: 2,
            wholesale_rates: vec![0.06, 0.04],
            breakpoint_bounds: None,
            clusters: vec![ClusterProfile {
                n: 1,
                sigma: 0.2,
                tau: 0.03,
                baseline: vec![1.0, 0.5],
            }],
        }
    }

    #[test]
    fn fully_fixed_pattern_reduces_to_lp() {
        let cfg = tiny_cfg();
        let bm = compute_big_m(&cfg, 0.03).unwrap();
        let model = build_milp(&cfg, 0.03, &bm).unwrap();
        // All binaries at 1 closes every dual; the baseline KKT point fits.
        let binaries: Vec<(usize, u8)> = model
            .variables
            .iter()
            .enumerate()
            .filter_map(|(j, v)| v.binary.then_some((j, 1u8)))
            .collect();
        let out = solve_lp_relaxation(&model, &binaries).unwrap();
        assert!(matches!(out, LpOutcome::Optimal(_) | LpOutcome::Infeasible));
    }

    #[test]
    fn contradictory_fixing_is_infeasible() {
        let cfg = tiny_cfg();
        let bm = compute_big_m(&cfg, 0.03).unwrap();
        let model = build_milp(&cfg, 0.03, &bm).unwrap();
        let l = &model.layout;
        // omega1 = 0 forces d^s = 0 at every block of slot 0; the balance
        // row then requires shifting the entire baseline, beyond sigma.
        let fix = vec![(l.omega1(0, 0, 0), 0u8), (l.omega1(0, 0, 1), 0u8)];
        let out = solve_lp_relaxation(&model, &fix).unwrap();
        assert!(matches!(out, LpOutcome::Infeasible));
    }

    #[test]
    fn lp_relaxation_bounds_the_milp() {
        let cfg = tiny_cfg();
        let bm = compute_big_m(&cfg, 0.03).unwrap();
        let model = build_milp(&cfg, 0.03, &bm).unwrap();
        let root = match solve_lp_relaxation(&model, &[]).unwrap() {
            LpOutcome::Optimal(s) => s.objective,
            LpOutcome::Infeasible => panic!("root must be feasible"),
        };
        let out = solve(&model, &SolveOptions::default(), None).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!(root <= out.objective.unwrap() + 1e-9);
    }

    #[test]
    fn solve_matches_enumeration_on_micro_instance() {
        let cfg = tiny_cfg();
        let bm = compute_big_m(&cfg, 0.03).unwrap();
        let model = build_milp(&cfg, 0.03, &bm).unwrap();
        let enumerated = enumerate_patterns(&model, 24).unwrap().expect("feasible");
        let opts = SolveOptions {
            gap_tol: 1e-9,
            ..SolveOptions::default()
        };
        let out = solve(&model, &opts, None).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        let diff = (out.objective.unwrap() - enumerated.0).abs();
        assert!(
            diff <= 1e-8,
            "bb {} vs enum {}",
            out.objective.unwrap(),
            enumerated.0
        );
        // The incumbent extracts cleanly.
        let x = out.assignment.unwrap();
        let (_, _, _, dpeak) = extract_solution(&model, &x).unwrap();
        assert!(model.par_of(dpeak) >= 1.0 - 1e-9);
    }

    #[test]
    fn branching_rules_agree_on_micro_instances() {
        let cfg = tiny_cfg();
        let bm = compute_big_m(&cfg, 0.03).unwrap();
        let model = build_milp(&cfg, 0.03, &bm).unwrap();
        let mut values = Vec::new();
        for branching in [Branching::MostViolatedComplementarity, Branching::FirstOpen] {
            let opts = SolveOptions {
                gap_tol: 1e-9,
                branching,
                ..SolveOptions::default()
            };
            let out = solve(&model, &opts, None).unwrap();
            assert_eq!(out.status, SolveStatus::Optimal);
            values.push(out.objective.unwrap());
        }
        assert!((values[0] - values[1]).abs() <= 1e-8);
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let mut cfg = tiny_cfg();
        cfg.horizon = 6;
        cfg.wholesale_rates = vec![0.05; 6];
        cfg.clusters[0].baseline = vec![1.0, 0.5, 0.8, 0.3, 0.9, 0.6];
        let bm = compute_big_m(&cfg, 0.03).unwrap();
        let model = build_milp(&cfg, 0.03, &bm).unwrap();
        assert!(matches!(
            enumerate_patterns(&model, 24),
            Err(Error::EnumerationCap { .. })
        ));
    }

    #[test]
    fn zero_gap_on_solved_instance_reports_optimal() {
        let cfg = tiny_cfg();
        let bm = compute_big_m(&cfg, 0.02).unwrap();
        let model = build_milp(&cfg, 0.02, &bm).unwrap();
        let opts = SolveOptions {
            gap_tol: 0.0,
            ..SolveOptions::default()
        };
        let out = solve(&model, &opts, None).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!(out.gap <= 1e-12);
    }

    #[test]
    fn undersized_big_m_gets_flagged_after_solve() {
        use crate::milp::validate_big_m;
        let cfg = tiny_cfg();
        let bm = compute_big_m(&cfg, 0.03).unwrap();
        let model = build_milp(&cfg, 0.03, &bm).unwrap();
        let out = solve(&model, &SolveOptions::default(), None).unwrap();
        let x = out.assignment.unwrap();
        // Largest recovered dual under the sound constants.
        let peak_dual = (0..model.variables.len())
            .filter(|&j| model.variables[j].name.starts_with("muL"))
            .map(|j| x[j])
            .fold(0.0f64, f64::max);
        assert!(peak_dual > 0.0);

        // Rebuild with M1 barely above the largest quantity it must cover:
        // still feasible, but the audit must flag the near-ceiling value.
        let peak_primal = (0..model.variables.len())
            .filter(|&j| model.variables[j].name.starts_with("ds"))
            .map(|j| x[j])
            .fold(0.0f64, f64::max);
        let mut tight = bm.clone();
        tight.m1 = 1.005 * peak_dual.max(peak_primal);
        let model2 = build_milp(&cfg, 0.03, &tight).unwrap();
        let out2 = solve(&model2, &SolveOptions::default(), None).unwrap();
        let x2 = out2.assignment.expect("tightened model stays feasible");
        let audit = validate_big_m(&model2, &x2, &tight);
        assert!(!audit.is_clean());
    }

    #[test]
    fn solver_output_has_canonical_epigraph_values() {
        use crate::milp::overflow_term;
        let cfg = tiny_cfg();
        let bm = compute_big_m(&cfg, 0.03).unwrap();
        let model = build_milp(&cfg, 0.03, &bm).unwrap();
        let out = solve(&model, &SolveOptions::default(), None).unwrap();
        let x = out.assignment.unwrap();
        let layout = &model.layout;
        let q: Vec<f64> = (0..model.dims.blocks - 1).map(|f| x[layout.q(f)]).collect();
        for t in 0..model.dims.slots {
            for (c, cluster) in cfg.clusters.iter().enumerate() {
                let want = overflow_term(cluster.baseline[t], &q);
                assert!((x[layout.z(t, c)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tiny_big_m_makes_everything_infeasible() {
        let cfg = tiny_cfg();
        let mut bm = compute_big_m(&cfg, 0.03).unwrap();
        bm.m1 = 1e-12;
        bm.m2 = 1e-12;
        bm.m3 = 1e-12;
        bm.m4 = 1e-12;
        let model = build_milp(&cfg, 0.03, &bm).unwrap();
        let enumerated = enumerate_patterns(&model, 24).unwrap();
        assert!(enumerated.is_none());
    }
}
