//! Bounded-variable primal simplex.
//!
//! Rows are turned into equalities with one slack each; the slack basis is
//! the fallback starting point. Phase one drives bound violations of the
//! basic variables to zero with the composite infeasibility objective, phase
//! two optimizes the true cost. The basis inverse is kept dense and updated
//! by rank-one elimination, with a residual check that triggers
//! refactorization; entering selection is Dantzig with a Bland fallback
//! after stalls.
//!
//! [`SimplexEngine`] owns the program and keeps its basis across solves, so
//! re-solving after a bound change (the branch-and-bound case) costs a warm
//! repair instead of a refactorization.

use crate::error::{Error, Result};

/// Comparison sense of an LP row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Eq,
    Ge,
}

/// One sparse row `terms · x  cmp  rhs`.
#[derive(Debug, Clone)]
pub struct LpRow {
    pub terms: Vec<(usize, f64)>,
    pub cmp: Cmp,
    pub rhs: f64,
}

/// A linear program over bounded structural variables (minimization).
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub ncols: usize,
    pub rows: Vec<LpRow>,
    pub objective: Vec<f64>,
    /// Column-major copy of the coefficient matrix.
    cols: Vec<Vec<(usize, f64)>>,
}

impl LinearProgram {
    pub fn new(ncols: usize, rows: Vec<LpRow>, objective: Vec<f64>) -> Self {
        assert_eq!(objective.len(), ncols);
        let mut cols = vec![Vec::new(); ncols];
        for (i, row) in rows.iter().enumerate() {
            for &(j, a) in &row.terms {
                cols[j].push((i, a));
            }
        }
        LinearProgram {
            ncols,
            rows,
            objective,
            cols,
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }
}

/// Where a nonbasic variable rests.
const AT_LOWER: u8 = 0;
const AT_UPPER: u8 = 1;
const FREE_AT_ZERO: u8 = 2;

/// A snapshot of the simplex basis, reusable as a warm start.
#[derive(Debug, Clone)]
pub struct Basis {
    /// Basic variable per row position.
    pub basic: Vec<usize>,
    /// Resting state per variable (meaningful for nonbasics).
    pub state: Vec<u8>,
}

/// Outcome of an LP solve.
#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    /// Structural variable values.
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

const FEAS_TOL: f64 = 1e-7;
const OPT_TOL: f64 = 1e-9;
const RATIO_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const STALL_LIMIT: usize = 64;
const RESIDUAL_PERIOD: usize = 256;

/// A persistent simplex solver for one program.
pub struct SimplexEngine {
    lp: LinearProgram,
    m: usize,
    ntot: usize,
    low: Vec<f64>,
    upp: Vec<f64>,
    /// Dense basis inverse, row major (m x m).
    binv: Vec<f64>,
    basic: Vec<usize>,
    pos_of: Vec<usize>, // var -> basis position, usize::MAX when nonbasic
    state: Vec<u8>,
    x: Vec<f64>,
    iterations: usize,
    updates_since_check: usize,
}

impl SimplexEngine {
    pub fn new(lp: LinearProgram) -> Self {
        let m = lp.nrows();
        let ntot = lp.ncols + m;
        let mut engine = SimplexEngine {
            lp,
            m,
            ntot,
            low: vec![0.0; ntot],
            upp: vec![0.0; ntot],
            binv: vec![0.0; m * m],
            basic: Vec::new(),
            pos_of: vec![usize::MAX; ntot],
            state: vec![AT_LOWER; ntot],
            x: vec![0.0; ntot],
            iterations: 0,
            updates_since_check: 0,
        };
        engine.slack_start();
        engine
    }

    pub fn lp(&self) -> &LinearProgram {
        &self.lp
    }

    /// Current basis snapshot.
    pub fn basis(&self) -> Basis {
        Basis {
            basic: self.basic.clone(),
            state: self.state.clone(),
        }
    }

    /// Adopts a basis (requires a factorization); false when singular or
    /// incompatible, in which case the engine keeps its previous basis.
    pub fn adopt_basis(&mut self, warm: &Basis) -> bool {
        if warm.basic.len() != self.m || warm.state.len() != self.ntot {
            return false;
        }
        let mut seen = vec![false; self.ntot];
        for &v in &warm.basic {
            if v >= self.ntot || seen[v] {
                return false;
            }
            seen[v] = true;
        }
        let saved = self.binv.clone();
        if !self.factorize(&warm.basic) {
            self.binv = saved;
            return false;
        }
        self.basic = warm.basic.clone();
        self.pos_of = vec![usize::MAX; self.ntot];
        for (i, &v) in self.basic.iter().enumerate() {
            self.pos_of[v] = i;
        }
        self.state = warm.state.clone();
        true
    }

    fn slack_bounds(lp: &LinearProgram, i: usize) -> (f64, f64) {
        match lp.rows[i].cmp {
            Cmp::Le => (0.0, f64::INFINITY),
            Cmp::Ge => (f64::NEG_INFINITY, 0.0),
            Cmp::Eq => (0.0, 0.0),
        }
    }

    fn slack_start(&mut self) {
        self.basic = (self.lp.ncols..self.ntot).collect();
        self.pos_of = vec![usize::MAX; self.ntot];
        for (i, &v) in self.basic.iter().enumerate() {
            self.pos_of[v] = i;
        }
        for s in self.state.iter_mut() {
            *s = AT_LOWER;
        }
        self.binv.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.m {
            self.binv[i * self.m + i] = 1.0;
        }
    }

    /// Solves under the given structural bounds, reusing the current basis.
    pub fn solve(&mut self, lower: &[f64], upper: &[f64]) -> Result<LpOutcome> {
        assert_eq!(lower.len(), self.lp.ncols);
        for j in 0..self.lp.ncols {
            if lower[j] > upper[j] {
                return Ok(LpOutcome::Infeasible);
            }
        }
        self.low[..self.lp.ncols].copy_from_slice(lower);
        self.upp[..self.lp.ncols].copy_from_slice(upper);
        for i in 0..self.m {
            let (l, u) = Self::slack_bounds(&self.lp, i);
            self.low[self.lp.ncols + i] = l;
            self.upp[self.lp.ncols + i] = u;
        }
        // Revalidate nonbasic resting states against the new bounds.
        for j in 0..self.ntot {
            if self.pos_of[j] != usize::MAX {
                continue;
            }
            self.state[j] = match self.state[j] {
                AT_UPPER if self.upp[j].is_finite() => AT_UPPER,
                FREE_AT_ZERO if !self.low[j].is_finite() && !self.upp[j].is_finite() => {
                    FREE_AT_ZERO
                }
                _ if self.low[j].is_finite() => AT_LOWER,
                _ if self.upp[j].is_finite() => AT_UPPER,
                _ => FREE_AT_ZERO,
            };
        }
        self.reset_nonbasic_values();
        self.recompute_basics();

        self.iterations = 0;
        let iter_cap = 200 + 60 * (self.m + self.lp.ncols);

        self.run_phase(true, iter_cap)?;
        if self.infeasibility() > FEAS_TOL {
            return Ok(LpOutcome::Infeasible);
        }
        self.run_phase(false, iter_cap)?;
        if self.infeasibility() > 10.0 * FEAS_TOL {
            // Numerical drift: refactorize and repeat once.
            if !self.refresh() {
                return Err(Error::Numerical("singular basis".into()));
            }
            self.run_phase(true, iter_cap)?;
            if self.infeasibility() > FEAS_TOL {
                return Ok(LpOutcome::Infeasible);
            }
            self.run_phase(false, iter_cap)?;
        }

        Ok(LpOutcome::Optimal(LpSolution {
            x: self.x[..self.lp.ncols].to_vec(),
            objective: self.objective_value(),
            iterations: self.iterations,
        }))
    }

    /// Gauss-Jordan inversion of the basis matrix. Returns false when
    /// numerically singular (pivot below tolerance).
    fn factorize(&mut self, basic: &[usize]) -> bool {
        let m = self.m;
        let mut mat = vec![0.0; m * m];
        for (i, &v) in basic.iter().enumerate() {
            self.for_column(v, |r, a| {
                mat[r * m + i] = a;
            });
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for col in 0..m {
            let mut piv = col;
            let mut best = mat[col * m + col].abs();
            for r in col + 1..m {
                let cand = mat[r * m + col].abs();
                if cand > best {
                    best = cand;
                    piv = r;
                }
            }
            if best < 1e-11 {
                return false;
            }
            if piv != col {
                for k in 0..m {
                    mat.swap(piv * m + k, col * m + k);
                    inv.swap(piv * m + k, col * m + k);
                }
            }
            let d = mat[col * m + col];
            for k in 0..m {
                mat[col * m + k] /= d;
                inv[col * m + k] /= d;
            }
            for r in 0..m {
                if r == col {
                    continue;
                }
                let f = mat[r * m + col];
                if f != 0.0 {
                    for k in 0..m {
                        mat[r * m + k] -= f * mat[col * m + k];
                        inv[r * m + k] -= f * inv[col * m + k];
                    }
                }
            }
        }
        self.binv = inv;
        true
    }

    fn for_column(&self, j: usize, mut f: impl FnMut(usize, f64)) {
        if j < self.lp.ncols {
            for &(r, a) in &self.lp.cols[j] {
                f(r, a);
            }
        } else {
            f(j - self.lp.ncols, 1.0);
        }
    }

    fn reset_nonbasic_values(&mut self) {
        for j in 0..self.ntot {
            if self.pos_of[j] != usize::MAX {
                continue;
            }
            self.x[j] = match self.state[j] {
                AT_UPPER => self.upp[j],
                FREE_AT_ZERO => 0.0,
                _ => self.low[j],
            };
        }
    }

    /// Recomputes basic values from the inverse and the nonbasic point.
    fn recompute_basics(&mut self) {
        let m = self.m;
        let mut rhs: Vec<f64> = (0..m).map(|i| self.lp.rows[i].rhs).collect();
        for j in 0..self.ntot {
            if self.pos_of[j] != usize::MAX || self.x[j] == 0.0 {
                continue;
            }
            let xj = self.x[j];
            self.for_column(j, |r, a| rhs[r] -= a * xj);
        }
        for i in 0..m {
            let mut v = 0.0;
            let rowi = &self.binv[i * m..(i + 1) * m];
            for k in 0..m {
                v += rowi[k] * rhs[k];
            }
            self.x[self.basic[i]] = v;
        }
    }

    /// Largest equality residual over all rows, for drift detection.
    fn residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, row) in self.lp.rows.iter().enumerate() {
            let mut lhs: f64 = row.terms.iter().map(|&(j, a)| a * self.x[j]).sum();
            lhs += self.x[self.lp.ncols + i];
            worst = worst.max((lhs - row.rhs).abs());
        }
        worst
    }

    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut w = vec![0.0; m];
        self.for_column(j, |r, a| {
            if a != 0.0 {
                for (i, wi) in w.iter_mut().enumerate() {
                    *wi += self.binv[i * m + r] * a;
                }
            }
        });
        w
    }

    /// y = cB^T binv for a sparse basic cost vector.
    fn btran_costs(&self, cb: &[(usize, f64)]) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for &(i, ci) in cb {
            if ci != 0.0 {
                let rowi = &self.binv[i * m..(i + 1) * m];
                for k in 0..m {
                    y[k] += ci * rowi[k];
                }
            }
        }
        y
    }

    fn reduced_cost(&self, j: usize, y: &[f64], phase_one: bool) -> f64 {
        let mut d = if phase_one { 0.0 } else { self.cost_of(j) };
        self.for_column(j, |r, a| d -= y[r] * a);
        d
    }

    fn infeasibility(&self) -> f64 {
        let mut h = 0.0;
        for &v in &self.basic {
            let xv = self.x[v];
            if xv < self.low[v] {
                h += self.low[v] - xv;
            } else if xv > self.upp[v] {
                h += xv - self.upp[v];
            }
        }
        h
    }

    /// One simplex phase. `phase_one` selects the composite infeasibility
    /// objective; otherwise the true costs are used.
    fn run_phase(&mut self, phase_one: bool, iter_cap: usize) -> Result<()> {
        let mut stall = 0usize;
        let mut bland = false;
        let mut last_merit = f64::INFINITY;

        loop {
            if self.iterations >= iter_cap {
                return Err(Error::Numerical(format!(
                    "simplex iteration cap {iter_cap} reached"
                )));
            }

            let cb: Vec<(usize, f64)> = if phase_one {
                let mut v = Vec::new();
                for (i, &var) in self.basic.iter().enumerate() {
                    let xv = self.x[var];
                    if xv < self.low[var] - FEAS_TOL {
                        v.push((i, -1.0));
                    } else if xv > self.upp[var] + FEAS_TOL {
                        v.push((i, 1.0));
                    }
                }
                v
            } else {
                self.basic
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &var)| {
                        let c = self.cost_of(var);
                        (c != 0.0).then_some((i, c))
                    })
                    .collect()
            };

            if phase_one && cb.is_empty() {
                return Ok(()); // feasible
            }

            let y = self.btran_costs(&cb);

            // Entering variable.
            let mut enter: Option<(usize, i8, f64)> = None;
            for j in 0..self.ntot {
                if self.pos_of[j] != usize::MAX || self.low[j] == self.upp[j] {
                    continue;
                }
                let d = self.reduced_cost(j, &y, phase_one);
                let cand: Option<i8> = match self.state[j] {
                    AT_LOWER if d < -OPT_TOL => Some(1),
                    AT_UPPER if d > OPT_TOL => Some(-1),
                    FREE_AT_ZERO if d < -OPT_TOL => Some(1),
                    FREE_AT_ZERO if d > OPT_TOL => Some(-1),
                    _ => None,
                };
                if let Some(dir) = cand {
                    let merit = d.abs();
                    if bland {
                        enter = Some((j, dir, merit));
                        break;
                    }
                    if enter.as_ref().is_none_or(|&(_, _, m)| merit > m) {
                        enter = Some((j, dir, merit));
                    }
                }
            }

            let Some((j_in, dir, _)) = enter else {
                return Ok(());
            };

            let w = self.ftran(j_in);
            let dirf = dir as f64;

            // Ratio test: first bound hit by any basic variable, the
            // entering variable's own span included.
            let mut t_best = f64::INFINITY;
            let mut blocking: Option<usize> = None; // basis position
            let span = self.upp[j_in] - self.low[j_in];
            if span.is_finite() {
                t_best = span;
            }
            for (i, &var) in self.basic.iter().enumerate() {
                let rate = -dirf * w[i];
                if rate.abs() <= RATIO_TOL {
                    continue;
                }
                let xv = self.x[var];
                let target = if rate > 0.0 {
                    if phase_one && xv < self.low[var] - FEAS_TOL {
                        self.low[var]
                    } else if xv <= self.upp[var] + FEAS_TOL {
                        self.upp[var]
                    } else {
                        continue; // above upper and rising: no block
                    }
                } else if phase_one && xv > self.upp[var] + FEAS_TOL {
                    self.upp[var]
                } else if xv >= self.low[var] - FEAS_TOL {
                    self.low[var]
                } else {
                    continue; // below lower and falling: no block
                };
                if !target.is_finite() {
                    continue;
                }
                let t = ((target - xv) / rate).max(0.0);
                if t < t_best - 1e-12 {
                    t_best = t;
                    blocking = Some(i);
                } else if t < t_best + 1e-12 {
                    // Near-tie: prefer the larger pivot for stability,
                    // then the smaller variable index for determinism.
                    if let Some(b) = blocking {
                        let better = w[i].abs() > w[b].abs() + 1e-12
                            || (w[i].abs() >= w[b].abs() - 1e-12 && self.basic[i] < self.basic[b]);
                        if better && t <= t_best {
                            t_best = t.min(t_best);
                            blocking = Some(i);
                        }
                    } else if t_best.is_finite() && t <= t_best {
                        // Competing with a pure bound flip: take the pivot.
                        t_best = t;
                        blocking = Some(i);
                    }
                }
            }

            if !t_best.is_finite() {
                if phase_one {
                    return Err(Error::Numerical(
                        "phase-one descent unbounded; inconsistent model".into(),
                    ));
                }
                return Err(Error::Numerical("LP is unbounded".into()));
            }

            self.iterations += 1;

            match blocking {
                None => {
                    // Bound flip of the entering variable.
                    let t = t_best;
                    for (i, &var) in self.basic.iter().enumerate() {
                        self.x[var] -= t * dirf * w[i];
                    }
                    self.x[j_in] += dirf * t;
                    self.state[j_in] = if dir > 0 { AT_UPPER } else { AT_LOWER };
                }
                Some(r) => {
                    let piv = w[r];
                    if piv.abs() < PIVOT_TOL {
                        if !self.refresh() {
                            return Err(Error::Numerical("singular basis".into()));
                        }
                        continue;
                    }
                    let t = t_best;
                    let leaving = self.basic[r];
                    for (i, &var) in self.basic.iter().enumerate() {
                        self.x[var] -= t * dirf * w[i];
                    }
                    let enter_value = match self.state[j_in] {
                        AT_UPPER => self.upp[j_in] + dirf * t,
                        FREE_AT_ZERO => dirf * t,
                        _ => self.low[j_in] + dirf * t,
                    };
                    // Leaving variable rests at the bound it hit.
                    let xl = self.x[leaving];
                    let to_upper = (xl - self.upp[leaving]).abs() <= (xl - self.low[leaving]).abs();
                    self.state[leaving] = if to_upper && self.upp[leaving].is_finite() {
                        self.x[leaving] = self.upp[leaving];
                        AT_UPPER
                    } else if self.low[leaving].is_finite() {
                        self.x[leaving] = self.low[leaving];
                        AT_LOWER
                    } else {
                        self.x[leaving] = 0.0;
                        FREE_AT_ZERO
                    };

                    self.basic[r] = j_in;
                    self.pos_of[leaving] = usize::MAX;
                    self.pos_of[j_in] = r;
                    self.x[j_in] = enter_value;
                    self.update_inverse(r, &w);
                    self.updates_since_check += 1;
                    if self.updates_since_check >= RESIDUAL_PERIOD {
                        self.updates_since_check = 0;
                        if self.residual() > 1e-8 && !self.refresh() {
                            return Err(Error::Numerical("singular basis on refresh".into()));
                        }
                    }
                }
            }

            // Switch to Bland's rule when the phase merit stops improving:
            // deterministic tie-breaking that guarantees finiteness.
            let merit = if phase_one {
                self.infeasibility()
            } else {
                self.objective_value()
            };
            if merit < last_merit - 1e-12 {
                stall = 0;
                bland = false;
                last_merit = merit;
            } else {
                stall += 1;
                if stall >= STALL_LIMIT {
                    bland = true;
                }
            }

            if phase_one && self.infeasibility() <= FEAS_TOL {
                return Ok(());
            }
        }
    }

    fn cost_of(&self, j: usize) -> f64 {
        if j < self.lp.ncols {
            self.lp.objective[j]
        } else {
            0.0
        }
    }

    fn objective_value(&self) -> f64 {
        (0..self.lp.ncols)
            .map(|j| self.lp.objective[j] * self.x[j])
            .sum()
    }

    fn update_inverse(&mut self, r: usize, w: &[f64]) {
        let m = self.m;
        let piv = w[r];
        for k in 0..m {
            self.binv[r * m + k] /= piv;
        }
        for i in 0..m {
            if i == r {
                continue;
            }
            let f = w[i];
            if f != 0.0 {
                let (head, tail) = self.binv.split_at_mut(r * m);
                let row_r: &[f64] = &tail[..m];
                if i < r {
                    let row_i = &mut head[i * m..(i + 1) * m];
                    for k in 0..m {
                        row_i[k] -= f * row_r[k];
                    }
                } else {
                    let (row_r2, rest) = tail.split_at_mut(m);
                    let row_i = &mut rest[(i - r - 1) * m..(i - r) * m];
                    for k in 0..m {
                        row_i[k] -= f * row_r2[k];
                    }
                }
            }
        }
    }

    fn refresh(&mut self) -> bool {
        let basic = self.basic.clone();
        if !self.factorize(&basic) {
            return false;
        }
        self.recompute_basics();
        true
    }
}

/// One-shot solve of an LP under the given working bounds, optionally from a
/// warm basis. Callers that re-solve with changing bounds should hold a
/// [`SimplexEngine`] instead.
pub fn solve_lp(
    lp: &LinearProgram,
    lower: &[f64],
    upper: &[f64],
    warm: Option<&Basis>,
) -> Result<LpOutcome> {
    let mut engine = SimplexEngine::new(lp.clone());
    if let Some(basis) = warm {
        engine.adopt_basis(basis);
    }
    engine.solve(lower, upper)
}
