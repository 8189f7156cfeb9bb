use loadshed_core::grid::cases;
use loadshed_core::milp::{solve_lp, solve_milp, BnbConfig};
use loadshed_core::operations::{build_uc, spread_loads, UcInstance};
use std::time::Instant;

fn day_shape(peak: f64) -> Vec<f64> {
    (0..24)
        .map(|t| {
            let x = (t as f64 - 17.0) * std::f64::consts::PI / 12.0;
            peak * (0.62 + 0.38 * x.cos())
        })
        .collect()
}

fn main() {
    let case = cases::four_bus_stressed();
    let peaks: Vec<f64> = match std::env::var("PROBE_PEAKS") {
        Ok(s) => s.split(',').map(|p| p.parse().unwrap()).collect(),
        Err(_) => vec![700.0, 880.0, 930.0],
    };
    for peak in peaks {
        let agg = day_shape(peak);
        let loads = spread_loads(&case, &agg);
        let inst = UcInstance::new(&case, loads);
        let model = build_uc(&inst).unwrap();
        let lp = &model.mip.lp;
        println!(
            "peak {peak}: vars {} eq {} ub {} binaries {}",
            lp.num_vars(),
            lp.a_eq.len(),
            lp.a_ub.len(),
            model.mip.binaries.len()
        );
        let t0 = Instant::now();
        let root = solve_lp(lp);
        match &root {
            Ok(s) => println!(
                "  root: {:?} obj {:.2} pivots {} in {:.2?}",
                s.status,
                s.objective,
                s.iterations,
                t0.elapsed()
            ),
            Err(e) => println!("  root FAILED in {:.2?}: {e}", t0.elapsed()),
        }
        if root.is_ok() {
            let t1 = Instant::now();
            match solve_milp(&model.mip, &BnbConfig::default()) {
                Ok(s) => println!(
                    "  milp: {:?} obj {:.2} nodes {} lp_iters {} in {:.2?}",
                    s.status,
                    s.objective,
                    s.nodes,
                    s.lp_iterations,
                    t1.elapsed()
                ),
                Err(e) => {
                    println!("  milp FAILED in {:.2?}: {e}", t1.elapsed());
                    let stashed = loadshed_core::milp::debug_last_fail().lock().unwrap().take();
                    if let Some((bad, x)) = stashed {
                        println!(
                            "  failed node lp: {} vars {} eq {} ub",
                            bad.num_vars(),
                            bad.a_eq.len(),
                            bad.a_ub.len()
                        );
                        // Worst violated rows with their nonzero terms.
                        let mut viols: Vec<(f64, usize, bool)> = Vec::new();
                        for (i, (row, b)) in bad.a_eq.iter().zip(&bad.b_eq).enumerate() {
                            let lhs: f64 = row.iter().zip(&x).map(|(a, v)| a * v).sum();
                            viols.push(((lhs - b).abs() / (1.0 + b.abs()), i, true));
                        }
                        for (i, (row, b)) in bad.a_ub.iter().zip(&bad.b_ub).enumerate() {
                            let lhs: f64 = row.iter().zip(&x).map(|(a, v)| a * v).sum();
                            viols.push(((lhs - b).max(0.0) / (1.0 + b.abs()), i, false));
                        }
                        viols.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
                        for &(v, i, eq) in viols.iter().take(4) {
                            let (row, rhs) = if eq {
                                (&bad.a_eq[i], bad.b_eq[i])
                            } else {
                                (&bad.a_ub[i], bad.b_ub[i])
                            };
                            println!(
                                "  viol {v:.4e} {} row {i} rhs {rhs}",
                                if eq { "eq" } else { "ub" }
                            );
                            for (j, a) in row.iter().enumerate() {
                                if *a != 0.0 {
                                    println!(
                                        "    x[{j}] coef {a:+.3} val {:.6} bounds [{}, {}]",
                                        x[j], bad.lower[j], bad.upper[j]
                                    );
                                }
                            }
                        }
                        std::env::set_var("SIMPLEX_TRACE", "1");
                        let r = solve_lp(&bad);
                        std::env::remove_var("SIMPLEX_TRACE");
                        match r {
                            Ok(s) => println!("  replay outcome: {:?} obj {}", s.status, s.objective),
                            Err(e2) => println!("  replay outcome: error {e2}"),
                        }
                    }
                }
            }
        }
    }
}
