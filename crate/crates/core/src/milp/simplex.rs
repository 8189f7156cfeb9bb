//! Two-phase primal simplex on a dense tableau with general variable bounds.
//!
//! Variables live in `[lower, upper]` where either side may be infinite;
//! nonbasic variables sit at a finite bound (or at zero when free) and the
//! ratio test allows bound flips, so `u <= 1`-style constraints never cost a
//! row. Pricing is Dantzig's rule, handing over to Bland's rule for the
//! remainder of any long degenerate run, which guarantees termination.

use super::{tol, LinearProgram, LpSolution, LpStatus, SolveError};

/// Degenerate steps shorter than this count toward the Bland switch.
const DEGEN_STEP: f64 = 1e-12;
/// Elimination skips rows whose multiplier is below this.
const ELIM_SKIP: f64 = 1e-13;
/// Pivot threshold when forcing leftover artificials out of the basis.
const DRIVE_OUT: f64 = 1e-7;
/// Reduced costs at most this large on a numerically detached column are
/// written off as elimination residue rather than an unbounded ray.
const DETACHED_COST: f64 = 1e-4;

struct Tableau {
    m: usize,
    w: usize,
    n: usize,
    /// `m x w` row-major coefficients, kept in basic form (basis columns are
    /// unit vectors).
    t: Vec<f64>,
    /// Original rows, sign-folded, as sparse (column, coeff) lists covering
    /// structural, slack and artificial columns; used to rebuild basic
    /// values exactly after the bound restoration.
    rows_sparse: Vec<Vec<(usize, f64)>>,
    /// Sign-folded right-hand sides matching `rows_sparse`.
    b_store: Vec<f64>,
    /// Reduced-cost row for the active phase.
    d: Vec<f64>,
    /// Basic variable values, one per row.
    xb: Vec<f64>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    /// Value of each nonbasic variable (a bound, or 0 for free variables).
    val: Vec<f64>,
    /// True when a nonbasic variable currently sits at its upper bound.
    at_upper: Vec<bool>,
    /// Working bounds: the true bounds plus a deterministic microscopic
    /// relaxation per column, so no vertex is exactly degenerate and the
    /// ratio test almost always returns a real step.
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// The bounds the caller actually asked for.
    true_lower: Vec<f64>,
    true_upper: Vec<f64>,
    /// Per row, the slack or artificial column that started as its basis;
    /// these columns jointly hold the current basis inverse.
    id_col: Vec<usize>,
    /// First artificial column; artificial columns never (re)enter.
    art_start: usize,
    phase_two: bool,
    bland: bool,
    degen_run: usize,
    pivots: usize,
    max_pivots: usize,
    min_piv: f64,
    scratch: Vec<f64>,
}

enum Step {
    Optimal,
    Unbounded,
    Moved,
}

impl Tableau {
    fn entry(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.w + j]
    }

    fn is_fixed(&self, j: usize) -> bool {
        self.lower[j] == self.upper[j]
    }

    fn is_free(&self, j: usize) -> bool {
        self.lower[j] == f64::NEG_INFINITY && self.upper[j] == f64::INFINITY
    }

    /// Picks the entering variable and its direction, or `None` at optimum.
    /// Artificial columns never enter: phase 1 only drives them out and
    /// phase 2 has no use for them.
    fn choose_entering(&self) -> Option<(usize, f64)> {
        let limit = self.art_start;
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..limit {
            if self.in_basis[j] || self.is_fixed(j) {
                continue;
            }
            let d = self.d[j];
            let dir = if self.is_free(j) {
                if d.abs() <= tol::REDUCED_COST {
                    continue;
                }
                -d.signum()
            } else if self.at_upper[j] {
                if d <= tol::REDUCED_COST {
                    continue;
                }
                -1.0
            } else {
                if d >= -tol::REDUCED_COST {
                    continue;
                }
                1.0
            };
            if self.bland {
                return Some((j, dir));
            }
            match best {
                Some((_, _, v)) if v >= d.abs() => {}
                _ => best = Some((j, dir, d.abs())),
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    /// Exact blocking ratio of row `i` against entering column `q` moving
    /// in `dir`, or `None` when the row never blocks.
    fn row_ratio(&self, i: usize, q: usize, dir: f64) -> Option<(f64, f64)> {
        let a = self.entry(i, q);
        if a.abs() <= tol::PIVOT {
            return None;
        }
        let delta = dir * a;
        let b = self.basis[i];
        let ti = if delta > 0.0 {
            let lb = self.lower[b];
            if lb == f64::NEG_INFINITY {
                return None;
            }
            (self.xb[i] - lb) / delta
        } else {
            let ub = self.upper[b];
            if ub == f64::INFINITY {
                return None;
            }
            (ub - self.xb[i]) / -delta
        };
        Some((ti.max(0.0), a))
    }

    /// Two-pass ratio test for entering column `q` moving in `dir`. The
    /// first pass finds the shortest blocking ratio; the second picks,
    /// among rows blocking within a small slack of it, the numerically
    /// largest pivot element (degenerate ties on noise-scale entries are
    /// what destroy a dense tableau). Returns the step length, the leaving
    /// row (`None` for a bound flip) and whether any limit exists.
    fn ratio_test(&self, q: usize, dir: f64) -> (f64, Option<usize>, bool) {
        let mut t_min = f64::INFINITY;
        for i in 0..self.m {
            if let Some((ti, _)) = self.row_ratio(i, q, dir) {
                t_min = t_min.min(ti);
            }
        }
        // Distance to the variable's own far working bound, measured from
        // where it actually sits (the true bound, inside the working pair).
        let t_flip = if self.is_free(q) {
            f64::INFINITY
        } else if dir > 0.0 {
            self.upper[q] - self.val[q]
        } else {
            self.val[q] - self.lower[q]
        };
        if t_flip <= t_min {
            return (t_flip, None, t_flip.is_finite());
        }
        if t_min == f64::INFINITY {
            return (t_min, None, false);
        }

        let window = t_min + DEGEN_STEP;
        let mut r_best: Option<usize> = None;
        let mut a_best = 0.0f64;
        for i in 0..self.m {
            let Some((ti, a)) = self.row_ratio(i, q, dir) else {
                continue;
            };
            if ti > window {
                continue;
            }
            let better = if self.bland {
                // Stability still outranks Bland's index order when the
                // alternative pivot element is orders of magnitude larger.
                r_best.map_or(true, |r| {
                    if a.abs() * 1e4 < a_best {
                        false
                    } else if a_best * 1e4 < a.abs() {
                        true
                    } else {
                        self.basis[i] < self.basis[r]
                    }
                })
            } else {
                a.abs() > a_best
            };
            if better {
                r_best = Some(i);
                a_best = a.abs();
            }
        }
        let r = r_best.expect("finite min ratio implies a blocking row");
        let step = self.row_ratio(r, q, dir).expect("chosen row blocks").0;
        (step.min(t_min).max(0.0), Some(r), true)
    }

    fn apply_flip(&mut self, q: usize, dir: f64, step: f64) {
        for i in 0..self.m {
            let a = self.entry(i, q);
            if a.abs() > ELIM_SKIP {
                self.xb[i] -= dir * step * a;
            }
        }
        self.at_upper[q] = !self.at_upper[q];
        self.val[q] = if self.at_upper[q] {
            self.upper[q]
        } else {
            self.lower[q]
        };
        self.pivots += 1;
    }

    fn apply_pivot(&mut self, r: usize, q: usize, dir: f64, step: f64) {
        let col_rq = self.entry(r, q);
        // A primal pivot pushes the leaving variable to whichever of its
        // bounds the ratio test ran into.
        let hit_lower = dir * col_rq > 0.0;
        self.apply_pivot_landing(r, q, dir, step, hit_lower);
    }

    fn apply_pivot_landing(&mut self, r: usize, q: usize, dir: f64, step: f64, hit_lower: bool) {
        let col_rq = self.entry(r, q);
        let enter_val = self.val[q] + dir * step;
        for i in 0..self.m {
            if i != r {
                let a = self.entry(i, q);
                if a.abs() > ELIM_SKIP {
                    self.xb[i] -= dir * step * a;
                }
            }
        }
        let leaving = self.basis[r];
        self.in_basis[leaving] = false;
        self.at_upper[leaving] = !hit_lower;
        self.val[leaving] = if hit_lower {
            self.lower[leaving]
        } else {
            self.upper[leaving]
        };
        self.in_basis[q] = true;
        self.basis[r] = q;
        self.xb[r] = enter_val;

        // Normalize the pivot row, then eliminate the column everywhere else.
        let w = self.w;
        self.min_piv = self.min_piv.min(col_rq.abs());
        let inv = 1.0 / col_rq;
        {
            let row = &mut self.t[r * w..(r + 1) * w];
            for v in row.iter_mut() {
                *v *= inv;
            }
            row[q] = 1.0;
            self.scratch.clear();
            self.scratch.extend_from_slice(row);
        }
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.entry(i, q);
            if f.abs() <= ELIM_SKIP {
                continue;
            }
            // Plain axpy; cancellation residue this leaves behind stays far
            // below the ratio-test pivot floor, so it can never be chosen.
            let row = &mut self.t[i * w..(i + 1) * w];
            for (v, s) in row.iter_mut().zip(&self.scratch) {
                *v -= f * s;
            }
            row[q] = 0.0;
        }
        // d is empty during crash pivots, before any phase installs costs.
        if !self.d.is_empty() {
            let f = self.d[q];
            if f.abs() > ELIM_SKIP {
                for (v, s) in self.d.iter_mut().zip(&self.scratch) {
                    let sub = f * s;
                    *v -= sub;
                    if (*v).abs() < 1e-12 * sub.abs() {
                        *v = 0.0;
                    }
                }
                self.d[q] = 0.0;
            }
        }

        if step <= DEGEN_STEP {
            self.degen_run += 1;
            if self.degen_run >= tol::DEGEN_SWITCH {
                self.bland = true;
            }
        } else {
            // Bland is only an escape hatch for the degenerate vertex we
            // were stuck on; once real progress resumes, so does Dantzig.
            self.degen_run = 0;
            self.bland = false;
        }
        self.pivots += 1;
    }

    fn step(&mut self) -> Result<Step, SolveError> {
        let Some((q, dir)) = self.choose_entering() else {
            return Ok(Step::Optimal);
        };
        let (step, row, limited) = self.ratio_test(q, dir);
        if !limited {
            // A column whose entries all sit below the pivot floor is
            // numerically detached: nothing can block it, but nothing can
            // pivot on it either. With a noise-scale reduced cost that is
            // elimination residue, not a real unbounded ray.
            let col_max = (0..self.m).fold(0.0f64, |m, i| m.max(self.entry(i, q).abs()));
            if col_max <= tol::PIVOT && self.d[q].abs() <= DETACHED_COST {
                self.d[q] = 0.0;
                return Ok(Step::Moved);
            }
            return Ok(Step::Unbounded);
        }
        match row {
            None => self.apply_flip(q, dir, step),
            Some(r) => self.apply_pivot(r, q, dir, step),
        }
        if self.pivots > self.max_pivots {
            return Err(SolveError::NumericalBreakdown(format!(
                "pivot limit {} exceeded",
                self.max_pivots
            )));
        }
        Ok(Step::Moved)
    }

    fn run_phase(&mut self) -> Result<Step, SolveError> {
        loop {
            if std::env::var_os("SIMPLEX_TRACE").is_some() && self.pivots % 2000 == 0 {
                let obj: f64 = (0..self.m)
                    .map(|i| self.xb[i] * self.d.get(self.basis[i]).copied().unwrap_or(0.0))
                    .sum::<f64>();
                let _ = obj;
                eprintln!(
                    "pivot {} phase2={} bland={} degen_run={} infeas={:.4}",
                    self.pivots,
                    self.phase_two,
                    self.bland,
                    self.degen_run,
                    self.infeasibility()
                );
            }
            match self.step()? {
                Step::Moved => {}
                other => return Ok(other),
            }
        }
    }

    /// Sum of artificial variable values; the phase-1 objective.
    fn infeasibility(&self) -> f64 {
        (0..self.m)
            .filter(|&i| self.basis[i] >= self.art_start)
            .map(|i| self.xb[i].max(0.0))
            .sum()
    }

    /// Pivot leftover zero-valued artificials out of the basis where
    /// possible; rows that offer no pivot are redundant and stay inert.
    fn drive_out_artificials(&mut self) {
        for r in 0..self.m {
            if self.basis[r] < self.art_start {
                continue;
            }
            let row_off = r * self.w;
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.art_start {
                if self.in_basis[j] || self.is_fixed(j) {
                    continue;
                }
                let a = self.t[row_off + j].abs();
                if a > DRIVE_OUT && best.map_or(true, |(_, b)| a > b) {
                    best = Some((j, a));
                }
            }
            if let Some((q, _)) = best {
                // Zero-step swap; the artificial parks at its lower bound
                // (its upper is infinite, so landing there is not an option).
                self.apply_pivot_landing(r, q, 1.0, 0.0, true);
            }
        }
    }

    /// Rebuilds the reduced-cost row for the given variable costs.
    fn reset_costs(&mut self, costs: &[f64]) {
        self.d.clear();
        self.d.extend_from_slice(costs);
        self.d.resize(self.w, 0.0);
        for i in 0..self.m {
            let cb = if self.basis[i] < costs.len() {
                costs[self.basis[i]]
            } else {
                0.0
            };
            if cb != 0.0 {
                let row_off = i * self.w;
                for j in 0..self.w {
                    let a = self.t[row_off + j];
                    if a.abs() > ELIM_SKIP {
                        self.d[j] -= cb * a;
                    }
                }
            }
        }
        for i in 0..self.m {
            self.d[self.basis[i]] = 0.0;
        }
    }

    fn extract(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for j in 0..self.n {
            if !self.in_basis[j] {
                x[j] = self.val[j];
            }
        }
        for i in 0..self.m {
            if self.basis[i] < self.n {
                x[self.basis[i]] = self.xb[i];
            }
        }
        x
    }

    /// Swaps the perturbed working bounds back for the true ones: every
    /// nonbasic variable snaps to its true bound and the basic values are
    /// rebuilt exactly from the original rows through the basis inverse
    /// (readable off the slack/artificial columns, which started as the
    /// identity). Also wipes any drift the incremental updates accumulated.
    fn restore_true_bounds(&mut self) {
        self.lower.copy_from_slice(&self.true_lower);
        self.upper.copy_from_slice(&self.true_upper);
        for j in 0..self.w {
            if self.in_basis[j] || self.is_free(j) {
                continue;
            }
            self.val[j] = if self.at_upper[j] {
                self.upper[j]
            } else {
                self.lower[j]
            };
        }
        let mut v = self.b_store.clone();
        for (i, row) in self.rows_sparse.iter().enumerate() {
            for &(j, a) in row {
                if !self.in_basis[j] && self.val[j] != 0.0 {
                    v[i] -= a * self.val[j];
                }
            }
        }
        for i in 0..self.m {
            let mut s = 0.0;
            for (k, &vk) in v.iter().enumerate() {
                if vk != 0.0 {
                    s += self.entry(i, self.id_col[k]) * vk;
                }
            }
            self.xb[i] = s;
        }

        // The identity columns hold the inverse only to elimination
        // accuracy, so refine against the exact rows: r = v - B xb, then
        // xb += inv(B) r, until the residual stops mattering.
        let mut pos = vec![usize::MAX; self.w];
        for (i, &b) in self.basis.iter().enumerate() {
            pos[b] = i;
        }
        let scale = v.iter().fold(1.0f64, |a, x| a.max(x.abs()));
        let mut r = vec![0.0; self.m];
        for _ in 0..3 {
            let mut worst = 0.0f64;
            for (i, row) in self.rows_sparse.iter().enumerate() {
                let mut s = 0.0;
                for &(j, a) in row {
                    if pos[j] != usize::MAX {
                        s += a * self.xb[pos[j]];
                    }
                }
                r[i] = v[i] - s;
                worst = worst.max(r[i].abs());
            }
            if worst <= 1e-12 * scale {
                break;
            }
            for i in 0..self.m {
                let mut s = 0.0;
                for (k, &rk) in r.iter().enumerate() {
                    if rk != 0.0 {
                        s += self.entry(i, self.id_col[k]) * rk;
                    }
                }
                self.xb[i] += s;
            }
        }
    }

    /// Worst absolute residual of the original rows at the current point,
    /// computed from the untouched sparse copy. Diagnostic only.
    fn row_residual_norm(&self) -> f64 {
        let mut pos = vec![usize::MAX; self.w];
        for (i, &b) in self.basis.iter().enumerate() {
            pos[b] = i;
        }
        let mut worst = 0.0f64;
        for (i, row) in self.rows_sparse.iter().enumerate() {
            let mut lhs = 0.0;
            for &(j, a) in row {
                let xj = if pos[j] != usize::MAX {
                    self.xb[pos[j]]
                } else {
                    self.val[j]
                };
                lhs += a * xj;
            }
            worst = worst.max((lhs - self.b_store[i]).abs());
        }
        worst
    }

    /// Dual-simplex cleanup after the bound restoration: any basic variable
    /// the tightened bounds left stranded outside is pivoted back onto its
    /// bound. Reduced costs stay dual-feasible, so when this finishes the
    /// solution is optimal for the true bounds. Returns `false` when some
    /// violated row has no eligible entering column, which certifies the
    /// true-bound problem infeasible.
    fn dual_repair(&mut self) -> Result<bool, SolveError> {
        let cap = 4 * self.m + 1000;
        for _ in 0..cap {
            let mut r_worst: Option<usize> = None;
            let mut worst = 0.0f64;
            for i in 0..self.m {
                let b = self.basis[i];
                let viol = (self.lower[b] - self.xb[i]).max(self.xb[i] - self.upper[b]);
                let scale = 1.0 + self.xb[i].abs();
                if viol > tol::BOUND_CLAMP * scale && viol > worst {
                    worst = viol;
                    r_worst = Some(i);
                }
            }
            let Some(r) = r_worst else {
                return Ok(true);
            };
            let b = self.basis[r];
            let below = self.xb[r] < self.lower[b];
            // The leaving basic must travel toward its violated bound:
            // xb[r] changes by -t * dir * T[r][q], so eligibility and the
            // movement direction of the entering column follow its sign.
            let mut q_best: Option<(usize, f64, f64)> = None;
            for j in 0..self.art_start {
                if self.in_basis[j] || self.is_fixed(j) {
                    continue;
                }
                let a = self.entry(r, j);
                if a.abs() <= DRIVE_OUT {
                    continue;
                }
                let dir = if self.is_free(j) {
                    if below {
                        -a.signum()
                    } else {
                        a.signum()
                    }
                } else if self.at_upper[j] {
                    -1.0
                } else {
                    1.0
                };
                let helps = if below { dir * a < 0.0 } else { dir * a > 0.0 };
                if !helps {
                    continue;
                }
                // Dual ratio: the entering column whose reduced cost hits
                // zero first keeps the cost row dual-feasible.
                let ratio = self.d[j].abs() / a.abs();
                let better = match q_best {
                    None => true,
                    Some((_, br, ba)) => {
                        ratio < br - 1e-9 || (ratio <= br + 1e-9 && a.abs() > ba)
                    }
                };
                if better {
                    q_best = Some((j, ratio, a.abs()));
                }
            }
            let Some((q, _, _)) = q_best else {
                return Ok(false);
            };
            let a = self.entry(r, q);
            let dir = if self.is_free(q) {
                if below {
                    -a.signum()
                } else {
                    a.signum()
                }
            } else if self.at_upper[q] {
                -1.0
            } else {
                1.0
            };
            let target = if below { self.lower[b] } else { self.upper[b] };
            let full = (target - self.xb[r]) / (-dir * a);
            let room = if self.is_free(q) {
                f64::INFINITY
            } else if dir > 0.0 {
                self.upper[q] - self.val[q]
            } else {
                self.val[q] - self.lower[q]
            };
            if full <= room {
                if !(0.0..=1e12).contains(&full) {
                    return Err(SolveError::NumericalBreakdown(format!(
                        "bound repair produced step {full:.3e}"
                    )));
                }
                self.apply_pivot_landing(r, q, dir, full, below);
            } else {
                // The column runs out of room before the row is fixed: send
                // it to its far bound and keep going. Its direction test
                // reverses after the flip, so it cannot be picked again for
                // the same violation.
                self.apply_flip(q, dir, room);
            }
        }
        Err(SolveError::NumericalBreakdown(
            "bound repair exceeded its pivot budget".to_string(),
        ))
    }
}

/// Maximum scaled violation of rows and bounds at `x`. Row residuals are
/// scaled by `1 + |rhs|`; bound violations are absolute.
pub fn check_feasible(lp: &LinearProgram, x: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for (row, b) in lp.a_eq.iter().zip(&lp.b_eq) {
        let lhs: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum();
        worst = worst.max((lhs - b).abs() / (1.0 + b.abs()));
    }
    for (row, b) in lp.a_ub.iter().zip(&lp.b_ub) {
        let lhs: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum();
        worst = worst.max((lhs - b).max(0.0) / (1.0 + b.abs()));
    }
    for j in 0..x.len() {
        worst = worst.max(lp.lower[j] - x[j]).max(x[j] - lp.upper[j]);
    }
    worst
}

/// Solves `lp` with its own bounds.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, SolveError> {
    lp.validate()?;
    solve_lp_with_bounds(lp, &lp.lower, &lp.upper)
}

/// Solves `lp` with the bound vectors replaced; the branch-and-bound calls
/// this to avoid copying constraint matrices per node.
pub fn solve_lp_with_bounds(
    lp: &LinearProgram,
    lower: &[f64],
    upper: &[f64],
) -> Result<LpSolution, SolveError> {
    let n = lp.num_vars();
    if lower.len() != n || upper.len() != n {
        return Err(SolveError::BadShape(format!(
            "bound override has {}/{} entries for {n} variables",
            lower.len(),
            upper.len()
        )));
    }
    if lower
        .iter()
        .zip(upper)
        .any(|(l, u)| *l > *u + tol::BOUND_CLAMP)
    {
        return Ok(LpSolution::infeasible(0));
    }

    let n_eq = lp.a_eq.len();
    let n_ub = lp.a_ub.len();
    let m = n_eq + n_ub;
    let slack_start = n;

    // True bounds for structural variables plus slacks (artificial bounds
    // appended once their count is known).
    let mut true_lower = lower.to_vec();
    let mut true_upper = upper.to_vec();
    true_lower.resize(n + n_ub, 0.0);
    true_upper.resize(n + n_ub, f64::INFINITY);

    // Working bounds get a deterministic microscopic relaxation per column;
    // in this "general position" polytope no vertex is exactly degenerate,
    // so the simplex does not stall, and the true bounds are restored
    // exactly afterwards. Fixed variables stay fixed.
    let jscale: f64 = if std::env::var_os("SIMPLEX_NOJITTER").is_some() {
        0.0
    } else {
        1.0
    };
    let jitter = move |k: u64| -> f64 {
        let mut h = k.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        h ^= h >> 31;
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 29;
        jscale * (1e-8 + 1e-8 * (h >> 11) as f64 / (1u64 << 53) as f64)
    };
    let mut work_lower = true_lower.clone();
    let mut work_upper = true_upper.clone();
    for j in 0..work_lower.len() {
        if true_lower[j] == true_upper[j] {
            continue;
        }
        if work_lower[j].is_finite() {
            work_lower[j] -= jitter(2 * j as u64) * (1.0 + work_lower[j].abs());
        }
        if work_upper[j].is_finite() {
            work_upper[j] += jitter(2 * j as u64 + 1) * (1.0 + work_upper[j].abs());
        }
    }

    // Nonbasic starting point: finite working bound nearest zero, or zero
    // when free.
    let mut val = vec![0.0; n + n_ub];
    let mut at_upper = vec![false; n + n_ub];
    for j in 0..n {
        if work_lower[j].is_finite() {
            val[j] = work_lower[j];
        } else if work_upper[j].is_finite() {
            val[j] = work_upper[j];
            at_upper[j] = true;
        }
    }

    // Residuals decide which rows need an artificial column.
    let mut resid = Vec::with_capacity(m);
    let mut b_scale = 1.0f64;
    for (row, b) in lp.a_eq.iter().zip(&lp.b_eq) {
        let lhs: f64 = row.iter().zip(&val[..n]).map(|(a, v)| a * v).sum();
        resid.push(b - lhs);
        b_scale = b_scale.max(b.abs());
    }
    for (row, b) in lp.a_ub.iter().zip(&lp.b_ub) {
        let lhs: f64 = row.iter().zip(&val[..n]).map(|(a, v)| a * v).sum();
        resid.push(b - lhs);
        b_scale = b_scale.max(b.abs());
    }
    let needs_art: Vec<bool> = (0..m).map(|i| i < n_eq || resid[i] < 0.0).collect();
    let n_art = needs_art.iter().filter(|x| **x).count();
    if std::env::var_os("SIMPLEX_TRACE").is_some() {
        let neg: Vec<usize> = (n_eq..m).filter(|&i| resid[i] < 0.0).map(|i| i - n_eq).collect();
        eprintln!(
            "construction: {} eq, {} of {} ub rows start violated: {:?}",
            n_eq,
            neg.len(),
            n_ub,
            &neg[..neg.len().min(40)]
        );
    }
    let art_start = n + n_ub;
    let w = art_start + n_art;
    val.resize(w, 0.0);
    at_upper.resize(w, false);
    true_lower.resize(w, 0.0);
    true_upper.resize(w, f64::INFINITY);
    let mut work_lower = work_lower;
    let mut work_upper = work_upper;
    work_lower.resize(w, 0.0);
    work_upper.resize(w, f64::INFINITY);
    for j in art_start..w {
        work_lower[j] -= jitter(2 * j as u64);
    }

    let mut t = vec![0.0; m * w];
    let mut rows_sparse: Vec<Vec<(usize, f64)>> = Vec::with_capacity(m);
    let mut b_store = vec![0.0; m];
    let mut id_col = vec![0usize; m];
    let mut basis = vec![0usize; m];
    let mut xb = vec![0.0; m];
    let mut in_basis = vec![false; w];

    let mut next_art = art_start;
    for i in 0..m {
        let (row_src, rhs, has_slack) = if i < n_eq {
            (&lp.a_eq[i][..], lp.b_eq[i], false)
        } else {
            (&lp.a_ub[i - n_eq][..], lp.b_ub[i - n_eq], true)
        };
        let sign = if needs_art[i] && resid[i] < 0.0 {
            -1.0
        } else {
            1.0
        };
        let dst = &mut t[i * w..(i + 1) * w];
        let mut sparse = Vec::new();
        for (j, a) in row_src.iter().enumerate() {
            dst[j] = sign * a;
            if *a != 0.0 {
                sparse.push((j, sign * a));
            }
        }
        if has_slack {
            dst[slack_start + (i - n_eq)] = sign;
            sparse.push((slack_start + (i - n_eq), sign));
        }
        b_store[i] = sign * rhs;
        if needs_art[i] {
            dst[next_art] = 1.0;
            sparse.push((next_art, 1.0));
            basis[i] = next_art;
            id_col[i] = next_art;
            xb[i] = sign * resid[i];
            in_basis[next_art] = true;
            next_art += 1;
        } else {
            let s = slack_start + (i - n_eq);
            basis[i] = s;
            id_col[i] = s;
            xb[i] = resid[i];
            in_basis[s] = true;
        }
        rows_sparse.push(sparse);
    }

    let mut tab = Tableau {
        m,
        w,
        n,
        t,
        rows_sparse,
        b_store,
        d: Vec::new(),
        xb,
        basis,
        in_basis,
        val,
        at_upper,
        lower: work_lower,
        upper: work_upper,
        true_lower,
        true_upper,
        id_col,
        art_start,
        phase_two: false,
        bland: false,
        degen_run: 0,
        pivots: 0,
        max_pivots: 2000 + 60 * (m + w),
        min_piv: f64::INFINITY,
        scratch: Vec::with_capacity(w),
    };

    // Crash: before phase 1, pivot a structural column into every
    // artificial-held row whose residual it can absorb within its own
    // bounds. Each forced pivot retires one artificial for the price of a
    // single elimination, instead of several phase-1 pivots later; the
    // artificial column itself stays in the tableau as the row's basis
    // inverse holder, nonbasic at zero.
    if n_art > 0 {
        for i in 0..m {
            if tab.basis[i] < tab.art_start {
                continue;
            }
            let resid_now = tab.xb[i];
            let mut best: Option<(usize, f64, f64)> = None;
            for j in 0..n {
                if tab.in_basis[j] || tab.is_fixed(j) {
                    continue;
                }
                let a = tab.entry(i, j);
                if a.abs() < 1e-2 {
                    continue;
                }
                let ev = tab.val[j] + resid_now / a;
                if !ev.is_finite() {
                    continue;
                }
                // Allow sub-tolerance spill past a working bound; restore
                // snaps it back at the end like any other relaxation.
                let slop = 1e-7 * (1.0 + ev.abs());
                if ev < tab.lower[j] - slop || ev > tab.upper[j] + slop {
                    continue;
                }
                if best.map_or(true, |(_, ba, _)| a.abs() > ba) {
                    best = Some((j, a.abs(), ev));
                }
            }
            let Some((q, _, ev)) = best else {
                continue;
            };
            if ev < tab.lower[q] {
                tab.lower[q] = ev - 1e-9 * (1.0 + ev.abs());
            }
            if ev > tab.upper[q] {
                tab.upper[q] = ev + 1e-9 * (1.0 + ev.abs());
            }
            let delta = ev - tab.val[q];
            let (dir, step) = if delta >= 0.0 {
                (1.0, delta)
            } else {
                (-1.0, -delta)
            };
            tab.apply_pivot_landing(i, q, dir, step, true);
        }
        tab.degen_run = 0;
        tab.bland = false;
        if std::env::var_os("SIMPLEX_TRACE").is_some() {
            let live = (0..m).filter(|&i| tab.basis[i] >= tab.art_start).count();
            eprintln!("crash: {} pivots, {} live artificials remain", tab.pivots, live);
        }
    }

    // Phase 1: minimize a weighted artificial sum. The weights sit near 1
    // but differ deterministically per column, which breaks the huge
    // reduced-cost ties an unweighted sum produces on structured models;
    // any positive weights certify feasibility equally.
    if n_art > 0 {
        let mut phase1 = vec![0.0; w];
        for (k, c) in phase1[art_start..].iter_mut().enumerate() {
            let mut h = (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            h ^= h >> 31;
            h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
            h ^= h >> 29;
            *c = 1.0 + 1e-3 * (h >> 11) as f64 / (1u64 << 53) as f64;
        }
        tab.reset_costs(&phase1);
        match tab.run_phase()? {
            Step::Unbounded => {
                return Err(SolveError::NumericalBreakdown(
                    "phase 1 reported unbounded".to_string(),
                ))
            }
            Step::Optimal | Step::Moved => {}
        }
        if tab.infeasibility() > tol::FEAS_RESIDUAL * b_scale {
            return Ok(LpSolution::infeasible(tab.pivots));
        }
        tab.drive_out_artificials();
        if std::env::var_os("SIMPLEX_TRACE").is_some() {
            eprintln!("phase1 done at pivot {} (n_art {})", tab.pivots, n_art);
        }
    }

    // Phase 2: the real objective, artificial columns banned from entering.
    tab.phase_two = true;
    tab.degen_run = 0;
    tab.reset_costs(&lp.objective);
    let outcome = tab.run_phase()?;
    if matches!(outcome, Step::Unbounded) {
        return Ok(LpSolution::unbounded(tab.pivots));
    }

    // Drop the relaxation: snap nonbasics to true bounds, rebuild basics
    // exactly, and pivot any basic the tightening stranded back onto its
    // bound. Reduced costs are untouched by this, so optimality carries
    // over to the true-bound problem.
    tab.restore_true_bounds();
    let trace = std::env::var_os("SIMPLEX_TRACE").is_some();
    if trace {
        let mut worst = 0.0f64;
        for i in 0..tab.m {
            let b = tab.basis[i];
            worst = worst
                .max(tab.lower[b] - tab.xb[i])
                .max(tab.xb[i] - tab.upper[b]);
        }
        let tmax = tab.t.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        eprintln!(
            "restore: worst basic violation {worst:.3e} row residual {:.3e} \
             min_piv {:.3e} max_entry {:.3e}",
            tab.row_residual_norm(),
            tab.min_piv,
            tmax
        );
    }
    let before_repair = tab.pivots;
    if !tab.dual_repair()? {
        return Ok(LpSolution::infeasible(tab.pivots));
    }
    if trace {
        eprintln!(
            "repair: {} pivots, row residual {:.3e}",
            tab.pivots - before_repair,
            tab.row_residual_norm()
        );
    }

    let mut x = tab.extract();
    for j in 0..n {
        if x[j] < lower[j] && lower[j] - x[j] <= tol::FEAS_RESIDUAL {
            x[j] = lower[j];
        }
        if x[j] > upper[j] && x[j] - upper[j] <= tol::FEAS_RESIDUAL {
            x[j] = upper[j];
        }
    }

    let mut probe = lp.clone();
    probe.lower = lower.to_vec();
    probe.upper = upper.to_vec();
    let worst = check_feasible(&probe, &x);
    if worst > tol::FEAS_RESIDUAL * 10.0 {
        if std::env::var_os("SIMPLEX_SAVE").is_some() {
            *super::debug_last_fail().lock().unwrap() = Some((probe, x.clone()));
        }
        return Err(SolveError::NumericalBreakdown(format!(
            "solution fails feasibility re-check (violation {worst:.3e})"
        )));
    }

    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
        iterations: tab.pivots,
    })
}
