//! Branch and bound over binary variables.
//!
//! Branching picks the most fractional binary (value closest to 0.5, ties to
//! the lowest index). Exploration is depth-first until the first incumbent,
//! diving toward the nearest integer, then switches to best-bound ordered by
//! parent relaxation values. Only bound vectors change per node, so the
//! constraint matrices are shared across the whole tree.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{simplex, tol, LpStatus, MixedIntegerProgram, SolveError};

#[derive(Debug, Clone, Copy)]
pub struct BnbConfig {
    /// A binary counts as integral within this distance of 0 or 1.
    pub int_tol: f64,
    /// Nodes whose bound is within this of the incumbent are fathomed.
    pub gap_abs: f64,
    /// Hard cap on explored nodes; hitting it returns the incumbent flagged.
    pub node_limit: usize,
}

impl Default for BnbConfig {
    fn default() -> Self {
        BnbConfig {
            int_tol: tol::INT_TOL,
            gap_abs: tol::GAP_ABS,
            node_limit: 200_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MilpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Greatest lower bound proven for the optimum at termination.
    pub best_bound: f64,
    pub nodes: usize,
    pub lp_iterations: usize,
    pub node_limit_hit: bool,
}

/// Fixed binary decisions are stored as a parent chain to keep nodes tiny.
struct NodeRec {
    parent: usize,
    var: usize,
    value: u8,
}

const ROOT: usize = usize::MAX;

struct HeapEntry {
    bound: f64,
    seq: usize,
    node: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.seq == other.seq
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    // BinaryHeap is a max-heap; invert so the smallest bound pops first,
    // oldest node first among equals.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .partial_cmp(&self.bound)
            .unwrap_or(Ordering::Equal)
            .then(other.seq.cmp(&self.seq))
    }
}

pub fn solve_milp(mip: &MixedIntegerProgram, cfg: &BnbConfig) -> Result<MilpSolution, SolveError> {
    mip.lp.validate()?;
    let n = mip.lp.num_vars();
    if let Some(&j) = mip.binaries.iter().find(|&&j| j >= n) {
        return Err(SolveError::BadShape(format!(
            "binary index {j} out of range for {n} variables"
        )));
    }

    let mut base_lower = mip.lp.lower.clone();
    let mut base_upper = mip.lp.upper.clone();
    for &j in &mip.binaries {
        base_lower[j] = base_lower[j].max(0.0);
        base_upper[j] = base_upper[j].min(1.0);
    }

    let mut arena: Vec<NodeRec> = Vec::new();
    let mut stack: Vec<(f64, usize)> = vec![(f64::NEG_INFINITY, ROOT)];
    let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::new();
    let mut seq = 0usize;

    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut nodes = 0usize;
    let mut lp_iterations = 0usize;
    let mut node_limit_hit = false;
    let mut frontier_floor = f64::INFINITY;
    let mut lower = base_lower.clone();
    let mut upper = base_upper.clone();

    loop {
        let popped = if incumbent.is_none() {
            stack.pop()
        } else {
            if !stack.is_empty() {
                // First incumbent found mid-dive: hand leftovers to the heap.
                for (bound, node) in stack.drain(..) {
                    heap.push(HeapEntry { bound, seq, node });
                    seq += 1;
                }
            }
            heap.pop().map(|e| (e.bound, e.node))
        };
        let Some((est, node)) = popped else {
            break;
        };
        if let Some((inc_obj, _)) = &incumbent {
            if est >= inc_obj - cfg.gap_abs {
                // The heap pops in bound order, so everything left is at
                // least as bad; drop it wholesale.
                frontier_floor = frontier_floor.min(est);
                heap.clear();
                continue;
            }
        }
        if nodes >= cfg.node_limit {
            node_limit_hit = true;
            frontier_floor = frontier_floor.min(est);
            continue;
        }
        nodes += 1;

        lower.copy_from_slice(&base_lower);
        upper.copy_from_slice(&base_upper);
        let mut cursor = node;
        while cursor != ROOT {
            let rec = &arena[cursor];
            let v = rec.value as f64;
            lower[rec.var] = v;
            upper[rec.var] = v;
            cursor = rec.parent;
        }

        let sol = simplex::solve_lp_with_bounds(&mip.lp, &lower, &upper)?;
        lp_iterations += sol.iterations;
        match sol.status {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => {
                if node == ROOT {
                    return Ok(MilpSolution {
                        status: LpStatus::Unbounded,
                        x: Vec::new(),
                        objective: f64::NEG_INFINITY,
                        best_bound: f64::NEG_INFINITY,
                        nodes,
                        lp_iterations,
                        node_limit_hit,
                    });
                }
                return Err(SolveError::NumericalBreakdown(
                    "unbounded relaxation below the root".to_string(),
                ));
            }
            LpStatus::Optimal => {}
        }
        let bound = sol.objective.max(est);
        if let Some((inc_obj, _)) = &incumbent {
            if bound >= inc_obj - cfg.gap_abs {
                continue;
            }
        }

        // Most fractional binary (distance to the nearest integer, i.e.
        // closest to 0.5); strict comparison keeps the lowest index on ties.
        let mut branch: Option<(usize, f64)> = None;
        for &j in &mip.binaries {
            let v = sol.x[j];
            let dist = (v - v.round()).abs();
            if dist > cfg.int_tol && branch.map_or(true, |(_, best)| dist > best) {
                branch = Some((j, dist));
            }
        }

        match branch {
            None => {
                let better = incumbent
                    .as_ref()
                    .map_or(true, |(inc_obj, _)| sol.objective < *inc_obj);
                if better {
                    incumbent = Some((sol.objective, sol.x));
                }
            }
            Some((j, _)) => {
                let frac = sol.x[j];
                let near = frac.round().clamp(0.0, 1.0) as u8;
                let far = 1 - near;
                let mk = |arena: &mut Vec<NodeRec>, value: u8| {
                    arena.push(NodeRec {
                        parent: node,
                        var: j,
                        value,
                    });
                    arena.len() - 1
                };
                let near_id = mk(&mut arena, near);
                let far_id = mk(&mut arena, far);
                if incumbent.is_none() {
                    // Stack pops last-pushed first: push the dive child last.
                    stack.push((bound, far_id));
                    stack.push((bound, near_id));
                } else {
                    heap.push(HeapEntry {
                        bound,
                        seq,
                        node: near_id,
                    });
                    seq += 1;
                    heap.push(HeapEntry {
                        bound,
                        seq,
                        node: far_id,
                    });
                    seq += 1;
                }
            }
        }
    }

    match incumbent {
        Some((obj, x)) => Ok(MilpSolution {
            status: LpStatus::Optimal,
            x,
            objective: obj,
            best_bound: if node_limit_hit {
                frontier_floor.min(obj)
            } else {
                obj
            },
            nodes,
            lp_iterations,
            node_limit_hit,
        }),
        None => {
            if node_limit_hit {
                return Err(SolveError::NodeLimit(cfg.node_limit));
            }
            Ok(MilpSolution {
                status: LpStatus::Infeasible,
                x: Vec::new(),
                objective: f64::INFINITY,
                best_bound: f64::INFINITY,
                nodes,
                lp_iterations,
                node_limit_hit,
            })
        }
    }
}
