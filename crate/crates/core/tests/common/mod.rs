//! Shared helpers for the integration suites: independent small-scale
//! oracles and random instance generators. Nothing here calls back into the
//! solver paths it is meant to check, except where a test deliberately
//! layers (binary enumeration trusts the LP routine that the vertex oracle
//! validated first).

#![allow(dead_code)]

use loadshed_core::milp::{LinearProgram, LpStatus, MixedIntegerProgram};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Gaussian elimination with partial pivoting; `None` when singular.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for row in &a {
        assert_eq!(row.len(), n, "square system expected");
    }
    for col in 0..n {
        let (pivot_row, pivot_abs) = (col..n)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        if pivot_abs < 1e-10 {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

fn combinations(pool: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    fn rec(
        start: usize,
        pool: usize,
        k: usize,
        chosen: &mut Vec<usize>,
        visit: &mut impl FnMut(&[usize]),
    ) {
        if chosen.len() == k {
            visit(chosen);
            return;
        }
        let needed = k - chosen.len();
        for i in start..=pool.saturating_sub(needed) {
            chosen.push(i);
            rec(i + 1, pool, k, chosen, visit);
            chosen.pop();
        }
    }
    let mut chosen = Vec::with_capacity(k);
    rec(0, pool, k, &mut chosen, &mut visit);
}

const ORACLE_FEAS: f64 = 1e-7;

/// Brute-force LP oracle: enumerate candidate active sets (inequality rows
/// and finite bounds taken as equalities alongside all equality rows), solve
/// each square system, keep the best feasible vertex. Requires a bounded
/// feasible region, which the generators below guarantee via finite bounds.
pub fn vertex_enumerate(lp: &LinearProgram) -> Option<f64> {
    let n = lp.num_vars();
    let n_eq = lp.a_eq.len();
    assert!(n_eq <= n, "oracle expects at most n equality rows");

    // Candidate constraints: (coefficient row, rhs).
    let mut cands: Vec<(Vec<f64>, f64)> = Vec::new();
    for (row, rhs) in lp.a_ub.iter().zip(&lp.b_ub) {
        cands.push((row.clone(), *rhs));
    }
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        if lp.lower[j].is_finite() {
            cands.push((e.clone(), lp.lower[j]));
        }
        if lp.upper[j].is_finite() {
            cands.push((e, lp.upper[j]));
        }
    }

    let k = n - n_eq;
    let mut best: Option<f64> = None;
    combinations(cands.len(), k, |chosen| {
        let mut a: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut b: Vec<f64> = Vec::with_capacity(n);
        for row in &lp.a_eq {
            a.push(row.clone());
        }
        b.extend_from_slice(&lp.b_eq);
        for &c in chosen {
            a.push(cands[c].0.clone());
            b.push(cands[c].1);
        }
        let Some(x) = solve_dense(a, b) else {
            return;
        };
        if !point_feasible(lp, &x) {
            return;
        }
        let obj: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        if best.map_or(true, |cur| obj < cur) {
            best = Some(obj);
        }
    });
    best
}

pub fn point_feasible(lp: &LinearProgram, x: &[f64]) -> bool {
    for (row, rhs) in lp.a_eq.iter().zip(&lp.b_eq) {
        let lhs: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum();
        if (lhs - rhs).abs() > ORACLE_FEAS * (1.0 + rhs.abs()) {
            return false;
        }
    }
    for (row, rhs) in lp.a_ub.iter().zip(&lp.b_ub) {
        let lhs: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum();
        if lhs > rhs + ORACLE_FEAS * (1.0 + rhs.abs()) {
            return false;
        }
    }
    for j in 0..x.len() {
        if x[j] < lp.lower[j] - ORACLE_FEAS || x[j] > lp.upper[j] + ORACLE_FEAS {
            return false;
        }
    }
    true
}

/// MILP oracle: try every 0/1 assignment of the binaries and solve the
/// continuous rest with the (already vertex-validated) LP routine.
pub fn enumerate_milp(mip: &MixedIntegerProgram) -> Option<f64> {
    let nb = mip.binaries.len();
    assert!(nb <= 12, "enumeration oracle capped at 12 binaries");
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << nb) {
        let mut lower = mip.lp.lower.clone();
        let mut upper = mip.lp.upper.clone();
        for (bit, &j) in mip.binaries.iter().enumerate() {
            let v = f64::from((mask >> bit) & 1);
            lower[j] = v;
            upper[j] = v;
        }
        let sol = loadshed_core::milp::solve_lp_with_bounds(&mip.lp, &lower, &upper)
            .expect("oracle sub-solve must not break down");
        if sol.status == LpStatus::Optimal && best.map_or(true, |cur| sol.objective < cur) {
            best = Some(sol.objective);
        }
    }
    best
}

/// A random LP that is feasible (a known interior-ish point is baked in) and
/// bounded (every variable has finite bounds). Returns the known point too.
pub fn random_feasible_lp(rng: &mut ChaCha8Rng) -> (LinearProgram, Vec<f64>) {
    let n = rng.random_range(2..=8usize);
    let n_ub = rng.random_range(0..=4usize);
    let n_eq = usize::from(rng.random_bool(0.3));

    let x0: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.4)).collect();
    let lower = vec![0.0; n];
    let upper: Vec<f64> = (0..n).map(|_| rng.random_range(1.5..4.0)).collect();

    let row = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
    };
    let mut a_ub = Vec::new();
    let mut b_ub = Vec::new();
    for _ in 0..n_ub {
        let r = row(rng);
        let lhs: f64 = r.iter().zip(&x0).map(|(a, v)| a * v).sum();
        let slack = rng.random_range(0.05..1.5);
        a_ub.push(r);
        b_ub.push(lhs + slack);
    }
    let mut a_eq = Vec::new();
    let mut b_eq = Vec::new();
    for _ in 0..n_eq {
        let r = row(rng);
        let lhs: f64 = r.iter().zip(&x0).map(|(a, v)| a * v).sum();
        a_eq.push(r);
        b_eq.push(lhs);
    }
    let objective: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();

    (
        LinearProgram {
            objective,
            a_eq,
            b_eq,
            a_ub,
            b_ub,
            lower,
            upper,
            names: Vec::new(),
        },
        x0,
    )
}

/// A random MILP with up to `max_bin` binaries that is feasible at a known
/// mixed point (binary coordinates already integral).
pub fn random_feasible_milp(rng: &mut ChaCha8Rng, max_bin: usize) -> MixedIntegerProgram {
    let nb = rng.random_range(1..=max_bin);
    let nc = rng.random_range(0..=4usize);
    let n = nb + nc;

    let mut x0 = Vec::with_capacity(n);
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for _ in 0..nb {
        x0.push(f64::from(rng.random_bool(0.5)));
        lower.push(0.0);
        upper.push(1.0);
    }
    for _ in 0..nc {
        x0.push(rng.random_range(0.2..1.4));
        lower.push(0.0);
        upper.push(rng.random_range(1.5..4.0));
    }

    let n_ub = rng.random_range(1..=4usize);
    let n_eq = usize::from(rng.random_bool(0.3));
    let row = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
    };
    let mut a_ub = Vec::new();
    let mut b_ub = Vec::new();
    for _ in 0..n_ub {
        let r = row(rng);
        let lhs: f64 = r.iter().zip(&x0).map(|(a, v)| a * v).sum();
        a_ub.push(r);
        b_ub.push(lhs + rng.random_range(0.05..1.5));
    }
    let mut a_eq = Vec::new();
    let mut b_eq = Vec::new();
    for _ in 0..n_eq {
        let r = row(rng);
        let lhs: f64 = r.iter().zip(&x0).map(|(a, v)| a * v).sum();
        a_eq.push(r);
        b_eq.push(lhs);
    }
    let objective: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();

    MixedIntegerProgram {
        lp: LinearProgram {
            objective,
            a_eq,
            b_eq,
            a_ub,
            b_ub,
            lower,
            upper,
            names: Vec::new(),
        },
        binaries: (0..nb).collect(),
    }
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
