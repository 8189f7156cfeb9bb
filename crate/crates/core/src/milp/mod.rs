//! Dense linear and mixed-integer linear programming.
//!
//! Everything here is self-contained on purpose: solves must be
//! deterministic and auditable, so the simplex keeps a full tableau and the
//! branch and bound uses fixed, documented rules. Speed is adequate for the
//! small 24-hour commitment instances this crate builds, nothing more.

mod bnb;
mod simplex;

pub use bnb::{solve_milp, BnbConfig, MilpSolution};
pub use simplex::{check_feasible, solve_lp, solve_lp_with_bounds};

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

/// Numerical tolerances used across the solver. Centralized so tests and
/// callers agree on what "zero" means.
pub mod tol {
    /// Pivot elements smaller than this are treated as zero. Dense
    /// elimination leaves cancellation residue around 1e-12 of the row
    /// scale; pivoting on such an entry divides the tableau by noise and
    /// quietly destroys the basis inverse, so the floor sits well above it.
    pub const PIVOT: f64 = 1e-8;
    /// Reduced-cost threshold for optimality.
    pub const REDUCED_COST: f64 = 1e-9;
    /// Scaled row-residual tolerance for feasibility checks.
    pub const FEAS_RESIDUAL: f64 = 1e-7;
    /// Solutions may sit outside variable bounds by at most this much.
    pub const BOUND_CLAMP: f64 = 1e-9;
    /// A binary is integral if within this distance of 0 or 1.
    pub const INT_TOL: f64 = 1e-6;
    /// Absolute branch-and-bound gap at which a node is fathomed.
    pub const GAP_ABS: f64 = 1e-8;
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub const DEGEN_SWITCH: usize = 60;
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("node limit {0} reached before any integral solution")]
    NodeLimit(usize),
}

/// Minimize `objective . x` subject to `a_eq x = b_eq`, `a_ub x <= b_ub`
/// and `lower <= x <= upper` (entries may be infinite).
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Optional variable names, used by dumps and error messages.
    pub names: Vec<String>,
}

impl LinearProgram {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    /// Dimension and finiteness checks shared by the solver entry points.
    pub fn validate(&self) -> Result<(), SolveError> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(SolveError::BadShape(format!(
                "bounds have {}/{} entries for {} variables",
                self.lower.len(),
                self.upper.len(),
                n
            )));
        }
        if self.a_eq.len() != self.b_eq.len() || self.a_ub.len() != self.b_ub.len() {
            return Err(SolveError::BadShape(
                "row and rhs counts differ".to_string(),
            ));
        }
        for (label, rows) in [("eq", &self.a_eq), ("ub", &self.a_ub)] {
            if let Some(row) = rows.iter().find(|r| r.len() != n) {
                return Err(SolveError::BadShape(format!(
                    "{label} row has {} coefficients, expected {n}",
                    row.len()
                )));
            }
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.objective)
            || !self.a_eq.iter().all(|r| finite(r))
            || !self.a_ub.iter().all(|r| finite(r))
            || !finite(&self.b_eq)
            || !finite(&self.b_ub)
        {
            return Err(SolveError::BadShape(
                "non-finite coefficient in problem data".to_string(),
            ));
        }
        if self.lower.iter().any(|x| x.is_nan()) || self.upper.iter().any(|x| x.is_nan()) {
            return Err(SolveError::BadShape("NaN bound".to_string()));
        }
        Ok(())
    }

    pub fn name(&self, j: usize) -> String {
        self.names
            .get(j)
            .cloned()
            .unwrap_or_else(|| format!("x{j}"))
    }
}

/// Appends an index set of binary variables to a [`LinearProgram`].
#[derive(Debug, Clone, Default)]
pub struct MixedIntegerProgram {
    pub lp: LinearProgram,
    pub binaries: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Result of an LP solve. `x` and `objective` are meaningful only for
/// [`LpStatus::Optimal`]; infeasible solves report `+inf`, unbounded `-inf`.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl LpSolution {
    pub(crate) fn infeasible(iterations: usize) -> Self {
        LpSolution {
            status: LpStatus::Infeasible,
            x: Vec::new(),
            objective: f64::INFINITY,
            iterations,
        }
    }

    pub(crate) fn unbounded(iterations: usize) -> Self {
        LpSolution {
            status: LpStatus::Unbounded,
            x: Vec::new(),
            objective: f64::NEG_INFINITY,
            iterations,
        }
    }
}

/// Incremental construction of LPs and MILPs with sparse rows. Rows may
/// reference variables created later; everything is densified in `build`.
#[derive(Debug, Default)]
pub struct LpBuilder {
    costs: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    names: Vec<String>,
    binaries: Vec<usize>,
    eq_rows: Vec<(Vec<(usize, f64)>, f64)>,
    ub_rows: Vec<(Vec<(usize, f64)>, f64)>,
}

impl LpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(&mut self, name: impl Into<String>, lower: f64, upper: f64, cost: f64) -> usize {
        let idx = self.costs.len();
        self.costs.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.names.push(name.into());
        idx
    }

    pub fn binary(&mut self, name: impl Into<String>, cost: f64) -> usize {
        let idx = self.var(name, 0.0, 1.0, cost);
        self.binaries.push(idx);
        idx
    }

    pub fn num_vars(&self) -> usize {
        self.costs.len()
    }

    pub fn eq(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        self.eq_rows.push((terms, rhs));
    }

    pub fn le(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        self.ub_rows.push((terms, rhs));
    }

    pub fn ge(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        let negated = terms.into_iter().map(|(j, a)| (j, -a)).collect();
        self.ub_rows.push((negated, -rhs));
    }

    /// Pin a variable's bounds after creation (used for initial-condition
    /// forcing in commitment models).
    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    fn densify(n: usize, rows: Vec<(Vec<(usize, f64)>, f64)>) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut a = Vec::with_capacity(rows.len());
        let mut b = Vec::with_capacity(rows.len());
        for (terms, rhs) in rows {
            let mut row = vec![0.0; n];
            for (j, coeff) in terms {
                assert!(j < n, "constraint references variable {j} of {n}");
                row[j] += coeff;
            }
            a.push(row);
            b.push(rhs);
        }
        (a, b)
    }

    pub fn build(self) -> MixedIntegerProgram {
        let n = self.costs.len();
        let (a_eq, b_eq) = Self::densify(n, self.eq_rows);
        let (a_ub, b_ub) = Self::densify(n, self.ub_rows);
        MixedIntegerProgram {
            lp: LinearProgram {
                objective: self.costs,
                a_eq,
                b_eq,
                a_ub,
                b_ub,
                lower: self.lower,
                upper: self.upper,
                names: self.names,
            },
            binaries: self.binaries,
        }
    }
}

fn fmt_bound(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{x:.12e}")
    }
}

/// Renders a problem in the plain-text dump format:
///
/// ```text
/// milp v1
/// vars <n>
/// minimize
/// <c_0> ... <c_{n-1}>
/// bounds                  # one "<lower> <upper>" line per variable
/// eq <k>                  # k lines "<a_0> ... <a_{n-1}> | <rhs>"
/// ub <k>
/// binaries <k>            # one line of variable indices (omitted if none)
/// ```
///
/// Numbers are written in scientific notation with 12 decimal digits so a
/// dump round-trips through external tools without precision loss.
pub fn render_problem(lp: &LinearProgram, binaries: &[usize]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "milp v1");
    let _ = writeln!(out, "vars {}", lp.num_vars());
    let _ = writeln!(out, "minimize");
    let cs: Vec<String> = lp.objective.iter().map(|c| format!("{c:.12e}")).collect();
    let _ = writeln!(out, "{}", cs.join(" "));
    let _ = writeln!(out, "bounds");
    for j in 0..lp.num_vars() {
        let _ = writeln!(out, "{} {}", fmt_bound(lp.lower[j]), fmt_bound(lp.upper[j]));
    }
    for (label, rows, rhs) in [("eq", &lp.a_eq, &lp.b_eq), ("ub", &lp.a_ub, &lp.b_ub)] {
        let _ = writeln!(out, "{label} {}", rows.len());
        for (row, r) in rows.iter().zip(rhs) {
            let coeffs: Vec<String> = row.iter().map(|a| format!("{a:.12e}")).collect();
            let _ = writeln!(out, "{} | {r:.12e}", coeffs.join(" "));
        }
    }
    if !binaries.is_empty() {
        let _ = writeln!(out, "binaries {}", binaries.len());
        let idx: Vec<String> = binaries.iter().map(|j| j.to_string()).collect();
        let _ = writeln!(out, "{}", idx.join(" "));
    }
    out
}

#[doc(hidden)]
pub type DebugFail = (LinearProgram, Vec<f64>);

#[doc(hidden)]
pub fn debug_last_fail() -> &'static std::sync::Mutex<Option<DebugFail>> {
    static SLOT: std::sync::OnceLock<std::sync::Mutex<Option<DebugFail>>> =
        std::sync::OnceLock::new();
    SLOT.get_or_init(|| std::sync::Mutex::new(None))
}

/// Writes [`render_problem`] output to a file for external cross-checking.
pub fn dump_problem(
    lp: &LinearProgram,
    binaries: &[usize],
    path: &Path,
) -> Result<(), std::io::Error> {
    std::fs::write(path, render_problem(lp, binaries))
}
