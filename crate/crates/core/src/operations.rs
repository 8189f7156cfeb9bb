//! Day-ahead commitment and real-time dispatch.
//!
//! The day-ahead problem picks an hourly on/off schedule from forecast
//! loads; real time then meets the actual loads hour by hour with only the
//! committed units, shedding load at the VOLL price when they cannot keep
//! up. Shedding is the system's pressure valve: the attack pipeline scores
//! itself by how often it forces that valve open.

use crate::grid::{DcNetwork, FlowModel, GridCase, Generator};
use crate::milp::{
    solve_lp, solve_milp, BnbConfig, LpBuilder, LpStatus, MixedIntegerProgram, SolveError,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HOURS: usize = 24;

/// Slack under which a quantity counts as pinned to its limit in binding
/// reports and schedule checks.
pub const BINDING_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum OpsError {
    #[error("instance: {0}")]
    Instance(String),
    #[error("day-ahead commitment is infeasible")]
    UcInfeasible,
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Day-ahead commitment input: per-hour forecast MW for each load point of
/// the case, in `case.loads` order. Horizons shorter than a day are allowed
/// for small studies; the daily pipeline always passes 24.
#[derive(Debug, Clone)]
pub struct UcInstance<'a> {
    pub case: &'a GridCase,
    pub loads: Vec<Vec<f64>>,
    pub reserve: f64,
}

impl<'a> UcInstance<'a> {
    pub fn new(case: &'a GridCase, loads: Vec<Vec<f64>>) -> UcInstance<'a> {
        UcInstance {
            case,
            loads,
            reserve: case.reserve_fraction,
        }
    }

    /// Splits an aggregate forecast across load points by their shares.
    pub fn from_aggregate(case: &'a GridCase, aggregate_mw: &[f64]) -> UcInstance<'a> {
        UcInstance::new(case, spread_loads(case, aggregate_mw))
    }

    pub fn horizon(&self) -> usize {
        self.loads.len()
    }

    fn validate(&self) -> Result<(), OpsError> {
        let t = self.loads.len();
        if t == 0 || t > HOURS {
            return Err(OpsError::Instance(format!("horizon {t} outside 1..=24")));
        }
        for (hour, row) in self.loads.iter().enumerate() {
            if row.len() != self.case.loads.len() {
                return Err(OpsError::Instance(format!(
                    "hour {hour} has {} loads, case has {}",
                    row.len(),
                    self.case.loads.len()
                )));
            }
            if row.iter().any(|l| !l.is_finite() || *l < 0.0) {
                return Err(OpsError::Instance(format!("hour {hour} has a bad load")));
            }
        }
        Ok(())
    }
}

/// Per-load-point MW obtained by splitting an aggregate series by shares.
pub fn spread_loads(case: &GridCase, aggregate_mw: &[f64]) -> Vec<Vec<f64>> {
    aggregate_mw
        .iter()
        .map(|&l| case.loads.iter().map(|lp| lp.share * l).collect())
        .collect()
}

/// On/off plan for a horizon plus the day-ahead dispatch behind it.
/// `start`/`stop` are derived from `on` and the initial state, so the
/// logical identity holds by construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommitmentSchedule {
    /// `[generator][hour]`.
    pub on: Vec<Vec<bool>>,
    pub start: Vec<Vec<bool>>,
    pub stop: Vec<Vec<bool>>,
    /// Day-ahead outputs, `[generator][hour]` MW.
    pub dispatch: Vec<Vec<f64>>,
    /// Full day-ahead objective: energy, no-load and start/stop costs.
    pub planned_cost: f64,
    /// Energy plus no-load part only, the piece real-time dispatch re-prices.
    pub planned_dispatch_cost: f64,
}

impl CommitmentSchedule {
    pub fn horizon(&self) -> usize {
        self.on.first().map_or(0, Vec::len)
    }

    pub fn committed(&self, hour: usize) -> Vec<usize> {
        (0..self.on.len()).filter(|&g| self.on[g][hour]).collect()
    }

    /// Committed generator-hours, the currency schedule diffs are priced in.
    pub fn unit_hours(&self) -> std::collections::BTreeSet<(usize, usize)> {
        let mut set = std::collections::BTreeSet::new();
        for (g, row) in self.on.iter().enumerate() {
            for (t, &on) in row.iter().enumerate() {
                if on {
                    set.insert((g, t));
                }
            }
        }
        set
    }

    /// Size of the committed unit-hour symmetric difference against another
    /// schedule; zero iff the commitments agree everywhere.
    pub fn diff_unit_hours(&self, other: &CommitmentSchedule) -> usize {
        self.unit_hours()
            .symmetric_difference(&other.unit_hours())
            .count()
    }

    pub fn startup_shutdown_cost(&self, case: &GridCase) -> f64 {
        let mut cost = 0.0;
        for (g, gen) in case.generators.iter().enumerate() {
            for t in 0..self.horizon() {
                if self.start[g][t] {
                    cost += gen.startup_cost;
                }
                if self.stop[g][t] {
                    cost += gen.shutdown_cost;
                }
            }
        }
        cost
    }

    /// Scans the schedule against the case's logical rules: start/stop
    /// indicators match on/off transitions, never fire together, and every
    /// run respects min up/down including the carried-in initial state.
    pub fn verify(&self, case: &GridCase) -> Result<(), String> {
        let t_max = self.horizon();
        for (g, gen) in case.generators.iter().enumerate() {
            let mut prev = gen.initial.on;
            for t in 0..t_max {
                let (on, st, sp) = (self.on[g][t], self.start[g][t], self.stop[g][t]);
                if st && sp {
                    return Err(format!("{}: start and stop both set at hour {t}", gen.name));
                }
                let delta = i32::from(on) - i32::from(prev);
                if delta != i32::from(st) - i32::from(sp) {
                    return Err(format!(
                        "{}: hour {t} transition {delta} vs start {st} stop {sp}",
                        gen.name
                    ));
                }
                prev = on;
            }
            // Runs: walk state changes, crediting hours already spent in the
            // initial state; runs cut off by the horizon are not judged.
            let mut state = gen.initial.on;
            let mut run = gen.initial.hours;
            for t in 0..=t_max {
                let now = if t < t_max { self.on[g][t] } else { !state };
                if now == state {
                    run += 1;
                    continue;
                }
                let need = if state { gen.min_up } else { gen.min_down };
                if t < t_max && run < need {
                    return Err(format!(
                        "{}: {} run of {run}h ends at hour {t}, needs {need}",
                        gen.name,
                        if state { "on" } else { "off" }
                    ));
                }
                state = now;
                run = 1;
            }
        }
        Ok(())
    }
}

/// Commitment MILP plus the variable map needed to read the solution back
/// or to pin commitments externally (enumeration oracles do that).
pub struct UcModel {
    pub mip: MixedIntegerProgram,
    /// `[generator][hour]` variable indices.
    pub u: Vec<Vec<usize>>,
    pub z: Vec<Vec<usize>>,
    pub y: Vec<Vec<usize>>,
    pub p: Vec<Vec<usize>>,
}

fn startup_ramp(gen: &Generator) -> f64 {
    gen.p_min.max(gen.ramp_up)
}

fn shutdown_ramp(gen: &Generator) -> f64 {
    gen.p_min.max(gen.ramp_down)
}

/// Builds the day-ahead commitment MILP: energy, no-load and start/stop
/// costs over nodal balance, DC flows with line limits, generation limits
/// tied to commitment, the start/stop logic identity, min up/down windows,
/// ramps linked to the initial state, and an hourly capacity reserve above
/// the forecast. Only the on/off variables are integral.
pub fn build_uc(inst: &UcInstance) -> Result<UcModel, OpsError> {
    inst.validate()?;
    let case = inst.case;
    let net = DcNetwork::new(case);
    let horizon = inst.horizon();
    let n_gen = case.generators.len();
    let mut lp = LpBuilder::new();

    let mut u = vec![vec![0usize; horizon]; n_gen];
    let mut z = vec![vec![0usize; horizon]; n_gen];
    let mut y = vec![vec![0usize; horizon]; n_gen];
    let mut p = vec![vec![0usize; horizon]; n_gen];
    for (g, gen) in case.generators.iter().enumerate() {
        for t in 0..horizon {
            u[g][t] = lp.binary(format!("u_{}_{t}", gen.name), gen.no_load_cost);
            z[g][t] = lp.var(format!("z_{}_{t}", gen.name), 0.0, 1.0, gen.startup_cost);
            y[g][t] = lp.var(format!("y_{}_{t}", gen.name), 0.0, 1.0, gen.shutdown_cost);
            p[g][t] = lp.var(format!("p_{}_{t}", gen.name), 0.0, gen.p_max, gen.marginal_cost);
        }
    }

    for t in 0..horizon {
        let vars = net.add_hour_vars(&mut lp, &format!("h{t}"), FlowModel::BTheta);
        net.flow_definitions(&mut lp, vars);
        let mut injections: Vec<Vec<(usize, f64)>> = vec![Vec::new(); net.n_bus()];
        for (g, gen) in case.generators.iter().enumerate() {
            let pos = net.pos(gen.bus).expect("validated bus");
            injections[pos].push((p[g][t], 1.0));
        }
        let mut loads_mw = vec![0.0; net.n_bus()];
        for (li, lp_point) in case.loads.iter().enumerate() {
            let pos = net.pos(lp_point.bus).expect("validated bus");
            loads_mw[pos] += inst.loads[t][li];
        }
        net.nodal_balance(&mut lp, vars, &injections, &loads_mw);

        // Reserve: committed capacity covers the forecast with headroom.
        let total: f64 = inst.loads[t].iter().sum();
        let reserve_terms = (0..n_gen)
            .map(|g| (u[g][t], case.generators[g].p_max))
            .collect();
        lp.ge(reserve_terms, (1.0 + inst.reserve) * total);
    }

    for (g, gen) in case.generators.iter().enumerate() {
        let init_on = gen.initial.on;
        let init_p = if init_on { gen.initial.output_mw } else { 0.0 };
        let su = startup_ramp(gen);
        let sd = shutdown_ramp(gen);
        // An up-ramp row can only bind if either path is tighter than the
        // output range itself; same for down. Vacuous rows are skipped.
        let ramp_up_binds = gen.ramp_up < gen.p_max - gen.p_min || su < gen.p_max;
        let ramp_dn_binds = gen.ramp_down < gen.p_max - gen.p_min || sd < gen.p_max;

        for t in 0..horizon {
            // Generation limits tied to commitment.
            lp.le(vec![(p[g][t], 1.0), (u[g][t], -gen.p_max)], 0.0);
            lp.ge(vec![(p[g][t], 1.0), (u[g][t], -gen.p_min)], 0.0);

            // Logic identity u_t - u_{t-1} = z_t - y_t.
            if t == 0 {
                lp.eq(
                    vec![(u[g][0], 1.0), (z[g][0], -1.0), (y[g][0], 1.0)],
                    f64::from(i8::from(init_on)),
                );
            } else {
                lp.eq(
                    vec![
                        (u[g][t], 1.0),
                        (u[g][t - 1], -1.0),
                        (z[g][t], -1.0),
                        (y[g][t], 1.0),
                    ],
                    0.0,
                );
            }

            // Min up/down: starts (stops) within the window pin u.
            if gen.min_up > 1 {
                let lo = t.saturating_sub(gen.min_up - 1);
                let mut terms: Vec<(usize, f64)> = (lo..=t).map(|tau| (z[g][tau], 1.0)).collect();
                terms.push((u[g][t], -1.0));
                lp.le(terms, 0.0);
            }
            if gen.min_down > 1 {
                let lo = t.saturating_sub(gen.min_down - 1);
                let mut terms: Vec<(usize, f64)> = (lo..=t).map(|tau| (y[g][tau], 1.0)).collect();
                terms.push((u[g][t], 1.0));
                lp.le(terms, 1.0);
            }

            // Ramps: p_t - p_{t-1} <= RU u_{t-1} + SU z_t and the mirrored
            // down form; hour 0 folds the initial state into the rhs.
            if ramp_up_binds {
                if t == 0 {
                    lp.le(
                        vec![(p[g][0], 1.0), (z[g][0], -su)],
                        init_p + gen.ramp_up * f64::from(i8::from(init_on)),
                    );
                } else {
                    lp.le(
                        vec![
                            (p[g][t], 1.0),
                            (p[g][t - 1], -1.0),
                            (u[g][t - 1], -gen.ramp_up),
                            (z[g][t], -su),
                        ],
                        0.0,
                    );
                }
            }
            if ramp_dn_binds {
                if t == 0 {
                    lp.le(
                        vec![(p[g][0], -1.0), (u[g][0], -gen.ramp_down), (y[g][0], -sd)],
                        -init_p,
                    );
                } else {
                    lp.le(
                        vec![
                            (p[g][t - 1], 1.0),
                            (p[g][t], -1.0),
                            (u[g][t], -gen.ramp_down),
                            (y[g][t], -sd),
                        ],
                        0.0,
                    );
                }
            }
        }

        // Initial-state carryover: time still owed in the current state.
        let owed_on = if init_on {
            gen.min_up.saturating_sub(gen.initial.hours)
        } else {
            0
        };
        let owed_off = if init_on {
            0
        } else {
            gen.min_down.saturating_sub(gen.initial.hours)
        };
        for t in 0..owed_on.min(horizon) {
            lp.set_bounds(u[g][t], 1.0, 1.0);
        }
        for t in 0..owed_off.min(horizon) {
            lp.set_bounds(u[g][t], 0.0, 0.0);
        }
    }

    Ok(UcModel {
        mip: lp.build(),
        u,
        z,
        y,
        p,
    })
}

/// Reads a solved commitment vector back into a schedule.
fn extract_schedule(
    inst: &UcInstance,
    model: &UcModel,
    x: &[f64],
    objective: f64,
) -> CommitmentSchedule {
    let case = inst.case;
    let horizon = inst.horizon();
    let n_gen = case.generators.len();
    let mut on = vec![vec![false; horizon]; n_gen];
    let mut start = vec![vec![false; horizon]; n_gen];
    let mut stop = vec![vec![false; horizon]; n_gen];
    let mut dispatch = vec![vec![0.0; horizon]; n_gen];
    let mut planned_dispatch_cost = 0.0;
    for (g, gen) in case.generators.iter().enumerate() {
        let mut prev = gen.initial.on;
        for t in 0..horizon {
            let committed = x[model.u[g][t]] > 0.5;
            on[g][t] = committed;
            start[g][t] = committed && !prev;
            stop[g][t] = !committed && prev;
            dispatch[g][t] = if committed { x[model.p[g][t]] } else { 0.0 };
            planned_dispatch_cost += gen.marginal_cost * dispatch[g][t]
                + if committed { gen.no_load_cost } else { 0.0 };
            prev = committed;
        }
    }
    CommitmentSchedule {
        on,
        start,
        stop,
        dispatch,
        planned_cost: objective,
        planned_dispatch_cost,
    }
}

/// # Errors
///
/// [`OpsError::UcInfeasible`] when no commitment can serve the forecast;
/// solver breakdowns and node-limit hits pass through as [`OpsError::Solve`].
pub fn solve_uc(inst: &UcInstance) -> Result<CommitmentSchedule, OpsError> {
    let model = build_uc(inst)?;
    let sol = solve_milp(&model.mip, &BnbConfig::default())?;
    match sol.status {
        LpStatus::Optimal => {
            if sol.node_limit_hit {
                return Err(OpsError::Solve(SolveError::NodeLimit(sol.nodes)));
            }
            Ok(extract_schedule(inst, &model, &sol.x, sol.objective))
        }
        LpStatus::Infeasible => Err(OpsError::UcInfeasible),
        LpStatus::Unbounded => Err(OpsError::Solve(SolveError::NumericalBreakdown(
            "commitment problem unbounded".into(),
        ))),
    }
}

/// One real-time hour: actual loads, who is committed, and where each unit
/// ended the previous hour (initial state for hour 0).
#[derive(Debug, Clone)]
pub struct EdInstance<'a> {
    pub case: &'a GridCase,
    /// Actual MW per load point, `case.loads` order.
    pub loads: Vec<f64>,
    pub committed: Vec<bool>,
    pub prev_on: Vec<bool>,
    pub prev_output: Vec<f64>,
}

/// Elements pinned at their limits during an hour, the congestion story
/// behind any shedding.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BindingReport {
    pub lines_at_limit: Vec<usize>,
    pub gens_at_p_max: Vec<usize>,
    pub gens_ramp_limited: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DispatchResult {
    /// Per generator MW, zero for uncommitted units.
    pub output: Vec<f64>,
    /// Per load point MW of unserved demand.
    pub shed: Vec<f64>,
    /// Per line MW.
    pub flows: Vec<f64>,
    pub dispatch_cost: f64,
    pub shed_cost: f64,
    pub binding: BindingReport,
}

impl DispatchResult {
    pub fn shed_total(&self) -> f64 {
        self.shed.iter().sum()
    }
}

fn validate_ed(inst: &EdInstance) -> Result<(), OpsError> {
    let n_gen = inst.case.generators.len();
    if inst.committed.len() != n_gen
        || inst.prev_on.len() != n_gen
        || inst.prev_output.len() != n_gen
    {
        return Err(OpsError::Instance(format!(
            "generator vectors sized {}/{}/{} for {n_gen} generators",
            inst.committed.len(),
            inst.prev_on.len(),
            inst.prev_output.len()
        )));
    }
    if inst.loads.len() != inst.case.loads.len() {
        return Err(OpsError::Instance(format!(
            "{} loads for {} load points",
            inst.loads.len(),
            inst.case.loads.len()
        )));
    }
    if inst.loads.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(OpsError::Instance("bad actual load".into()));
    }
    Ok(())
}

fn ed_lp(inst: &EdInstance, allow_shed: bool) -> (crate::milp::LinearProgram, Vec<Option<usize>>, Vec<usize>, usize) {
    let case = inst.case;
    let net = DcNetwork::new(case);
    let mut lp = LpBuilder::new();
    let mut p_var: Vec<Option<usize>> = vec![None; case.generators.len()];
    for (g, gen) in case.generators.iter().enumerate() {
        if !inst.committed[g] {
            continue;
        }
        let v = lp.var(format!("p_{}", gen.name), gen.p_min, gen.p_max, gen.marginal_cost);
        p_var[g] = Some(v);
        // Ramp linking against where the unit actually was, startup limits
        // when it was off; rows that cannot bind are dropped.
        let prev = if inst.prev_on[g] { inst.prev_output[g] } else { 0.0 };
        if inst.prev_on[g] {
            if prev + gen.ramp_up < gen.p_max {
                lp.le(vec![(v, 1.0)], prev + gen.ramp_up);
            }
            if prev - gen.ramp_down > gen.p_min {
                lp.ge(vec![(v, 1.0)], prev - gen.ramp_down);
            }
        } else if startup_ramp(gen) < gen.p_max {
            lp.le(vec![(v, 1.0)], startup_ramp(gen));
        }
    }
    let shed_cap = if allow_shed { 1.0 } else { 0.0 };
    let shed_var: Vec<usize> = inst
        .loads
        .iter()
        .enumerate()
        .map(|(li, &l)| lp.var(format!("shed_{li}"), 0.0, l * shed_cap, case.voll))
        .collect();
    let vars = net.add_hour_vars(&mut lp, "rt", FlowModel::BTheta);
    net.flow_definitions(&mut lp, vars);
    let mut injections: Vec<Vec<(usize, f64)>> = vec![Vec::new(); net.n_bus()];
    for (g, gen) in case.generators.iter().enumerate() {
        if let Some(v) = p_var[g] {
            injections[net.pos(gen.bus).expect("validated bus")].push((v, 1.0));
        }
    }
    let mut loads_mw = vec![0.0; net.n_bus()];
    for (li, lp_point) in case.loads.iter().enumerate() {
        let pos = net.pos(lp_point.bus).expect("validated bus");
        loads_mw[pos] += inst.loads[li];
        injections[pos].push((shed_var[li], 1.0));
    }
    net.nodal_balance(&mut lp, vars, &injections, &loads_mw);
    (lp.build().lp, p_var, shed_var, vars.flow_off)
}

/// Solves one hour of real-time dispatch. Shedding keeps the hour feasible
/// whenever committed minimums do not already exceed demand.
pub fn solve_ed(inst: &EdInstance) -> Result<DispatchResult, OpsError> {
    validate_ed(inst)?;
    let case = inst.case;
    let (lp, p_var, shed_var, flow_off) = ed_lp(inst, true);
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        // Only reachable by over-commitment pressing minimums above demand.
        return Err(OpsError::Instance(format!(
            "hour dispatch reported {:?}",
            sol.status
        )));
    }
    let mut output = vec![0.0; case.generators.len()];
    let mut binding = BindingReport::default();
    for (g, gen) in case.generators.iter().enumerate() {
        let Some(v) = p_var[g] else { continue };
        output[g] = sol.x[v];
        if gen.p_max - output[g] <= BINDING_TOL {
            binding.gens_at_p_max.push(g);
        }
        let prev = if inst.prev_on[g] { inst.prev_output[g] } else { 0.0 };
        let cap = if inst.prev_on[g] {
            prev + gen.ramp_up
        } else {
            startup_ramp(gen)
        };
        if cap < gen.p_max && cap - output[g] <= BINDING_TOL {
            binding.gens_ramp_limited.push(g);
        }
    }
    let net = DcNetwork::new(case);
    let flows: Vec<f64> = (0..net.n_line()).map(|l| sol.x[flow_off + l]).collect();
    for (l, &f) in flows.iter().enumerate() {
        let (lo, hi) = net.line_limits(l);
        if hi - f <= BINDING_TOL || f - lo <= BINDING_TOL {
            binding.lines_at_limit.push(l);
        }
    }
    let shed: Vec<f64> = shed_var.iter().map(|&v| sol.x[v].max(0.0)).collect();
    let dispatch_cost: f64 = case
        .generators
        .iter()
        .enumerate()
        .map(|(g, gen)| {
            if inst.committed[g] {
                gen.marginal_cost * output[g] + gen.no_load_cost
            } else {
                0.0
            }
        })
        .sum();
    let shed_cost = case.voll * shed.iter().sum::<f64>();
    Ok(DispatchResult {
        output,
        shed,
        flows,
        dispatch_cost,
        shed_cost,
        binding,
    })
}

/// Re-solves the hour with shedding forbidden; `false` means the committed
/// set genuinely cannot serve the load, which is what justifies any
/// positive shed in the normal solve.
pub fn feasible_without_shedding(inst: &EdInstance) -> Result<bool, OpsError> {
    validate_ed(inst)?;
    let (lp, ..) = ed_lp(inst, false);
    let sol = solve_lp(&lp)?;
    Ok(sol.status == LpStatus::Optimal)
}

/// A full day: the schedule that was followed, 24 hourly dispatches, and
/// the cost and shedding totals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DayResult {
    pub schedule: CommitmentSchedule,
    pub hours: Vec<DispatchResult>,
    pub dispatch_cost: f64,
    pub shed_cost: f64,
    pub startup_shutdown_cost: f64,
    /// dispatch + shed + startup/shutdown.
    pub total_cost: f64,
    pub shed_mwh: f64,
    pub shed_hours: usize,
}

impl DayResult {
    pub fn any_shed(&self) -> bool {
        self.shed_mwh > BINDING_TOL
    }

    pub fn csv_header() -> &'static str {
        "dispatch_cost,shed_cost,startup_shutdown_cost,total_cost,shed_mwh,shed_hours"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.dispatch_cost,
            self.shed_cost,
            self.startup_shutdown_cost,
            self.total_cost,
            self.shed_mwh,
            self.shed_hours
        )
    }
}

/// Runs the two-stage day: a commitment from forecast loads (or the given
/// override, which is how adversarial schedules are injected), then 24
/// sequential real-time hours against actual loads, each chained to the
/// previous hour's outputs.
pub fn run_day(
    case: &GridCase,
    forecast_loads: &[Vec<f64>],
    actual_loads: &[Vec<f64>],
    schedule_override: Option<CommitmentSchedule>,
) -> Result<DayResult, OpsError> {
    if forecast_loads.len() != HOURS || actual_loads.len() != HOURS {
        return Err(OpsError::Instance(format!(
            "expected {HOURS} forecast and actual hours, got {} and {}",
            forecast_loads.len(),
            actual_loads.len()
        )));
    }
    let schedule = match schedule_override {
        Some(s) => {
            if s.horizon() != HOURS || s.on.len() != case.generators.len() {
                return Err(OpsError::Instance(format!(
                    "override schedule is {} gens x {} hours",
                    s.on.len(),
                    s.horizon()
                )));
            }
            s
        }
        None => solve_uc(&UcInstance::new(case, forecast_loads.to_vec()))?,
    };
    let n_gen = case.generators.len();
    let mut prev_on: Vec<bool> = case.generators.iter().map(|g| g.initial.on).collect();
    let mut prev_output: Vec<f64> = case
        .generators
        .iter()
        .map(|g| if g.initial.on { g.initial.output_mw } else { 0.0 })
        .collect();
    let mut hours = Vec::with_capacity(HOURS);
    let mut dispatch_cost = 0.0;
    let mut shed_cost = 0.0;
    let mut shed_mwh = 0.0;
    let mut shed_hours = 0;
    for t in 0..HOURS {
        let committed: Vec<bool> = (0..n_gen).map(|g| schedule.on[g][t]).collect();
        let inst = EdInstance {
            case,
            loads: actual_loads[t].clone(),
            committed: committed.clone(),
            prev_on,
            prev_output,
        };
        let hour = solve_ed(&inst)?;
        dispatch_cost += hour.dispatch_cost;
        shed_cost += hour.shed_cost;
        let s = hour.shed_total();
        shed_mwh += s;
        if s > BINDING_TOL {
            shed_hours += 1;
        }
        prev_on = committed;
        prev_output = hour.output.clone();
        hours.push(hour);
    }
    let startup_shutdown_cost = schedule.startup_shutdown_cost(case);
    Ok(DayResult {
        schedule,
        hours,
        dispatch_cost,
        shed_cost,
        startup_shutdown_cost,
        total_cost: dispatch_cost + shed_cost + startup_shutdown_cost,
        shed_mwh,
        shed_hours,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{cases, Bus, InitialState, Line, LoadPoint};
    use crate::milp::solve_lp_with_bounds;

    fn gen(name: &str, bus: usize, p: (f64, f64), costs: (f64, f64, f64, f64)) -> Generator {
        Generator {
            name: name.into(),
            bus,
            p_min: p.0,
            p_max: p.1,
            marginal_cost: costs.0,
            no_load_cost: costs.1,
            startup_cost: costs.2,
            shutdown_cost: costs.3,
            min_up: 1,
            min_down: 1,
            ramp_up: p.1,
            ramp_down: p.1,
            initial: InitialState {
                on: false,
                hours: 24,
                output_mw: 0.0,
            },
        }
    }

    fn one_bus_case(generators: Vec<Generator>) -> GridCase {
        let case = GridCase {
            version: 1,
            name: "test".into(),
            base_mva: 100.0,
            buses: vec![Bus {
                id: 1,
                reference: true,
            }],
            lines: vec![],
            generators,
            loads: vec![LoadPoint { bus: 1, share: 1.0 }],
            reserve_fraction: 0.0,
            voll: 10_000.0,
        };
        case.validate().unwrap();
        case
    }

    fn two_bus_case(generators: Vec<Generator>) -> GridCase {
        let case = GridCase {
            version: 1,
            name: "test2".into(),
            base_mva: 100.0,
            buses: vec![
                Bus {
                    id: 1,
                    reference: true,
                },
                Bus {
                    id: 2,
                    reference: false,
                },
            ],
            lines: vec![Line {
                from: 1,
                to: 2,
                susceptance_pu: 10.0,
                min_mw: -400.0,
                max_mw: 400.0,
            }],
            generators,
            loads: vec![LoadPoint { bus: 2, share: 1.0 }],
            reserve_fraction: 0.0,
            voll: 10_000.0,
        };
        case.validate().unwrap();
        case
    }

    #[test]
    fn flat_load_forces_a_flat_schedule() {
        let mut g1 = gen("only", 1, (50.0, 200.0), (20.0, 100.0, 500.0, 100.0));
        g1.initial = InitialState {
            on: true,
            hours: 24,
            output_mw: 120.0,
        };
        let case = one_bus_case(vec![g1]);
        let loads: Vec<Vec<f64>> = (0..6).map(|_| vec![120.0]).collect();
        let sched = solve_uc(&UcInstance::new(&case, loads)).unwrap();
        sched.verify(&case).unwrap();
        for t in 0..6 {
            assert!(sched.on[0][t]);
            assert!(!sched.start[0][t] && !sched.stop[0][t]);
            assert!((sched.dispatch[0][t] - 120.0).abs() < 1e-6);
        }
        assert!(
            (sched.planned_cost - 6.0 * (20.0 * 120.0 + 100.0)).abs() < 1e-6,
            "cost {}",
            sched.planned_cost
        );
    }

    /// Brute force over every commitment pattern of a 2-generator, 4-hour
    /// instance; the branch and bound must match the best pattern's LP.
    #[test]
    fn uc_matches_commitment_enumeration() {
        let mut cheap = gen("cheap", 1, (30.0, 100.0), (25.0, 80.0, 400.0, 80.0));
        cheap.min_up = 2;
        cheap.min_down = 2;
        cheap.ramp_up = 60.0;
        cheap.ramp_down = 60.0;
        cheap.initial = InitialState {
            on: true,
            hours: 4,
            output_mw: 60.0,
        };
        let mut dear = gen("dear", 1, (10.0, 80.0), (55.0, 40.0, 120.0, 30.0));
        dear.min_down = 2;
        let case = one_bus_case(vec![cheap, dear]);
        let loads: Vec<Vec<f64>> = [70.0, 120.0, 150.0, 90.0]
            .iter()
            .map(|&l| vec![l])
            .collect();
        let inst = UcInstance::new(&case, loads);

        let sched = solve_uc(&inst).unwrap();
        sched.verify(&case).unwrap();

        let model = build_uc(&inst).unwrap();
        let mut best = f64::INFINITY;
        for pattern in 0u32..256 {
            let mut lower = model.mip.lp.lower.clone();
            let mut upper = model.mip.lp.upper.clone();
            for g in 0..2 {
                for t in 0..4 {
                    let bit = f64::from((pattern >> (g * 4 + t)) & 1);
                    let v = model.u[g][t];
                    // Respect forced initial-condition bounds.
                    if lower[v] > upper[v] - 0.5 {
                        continue;
                    }
                    lower[v] = bit;
                    upper[v] = bit;
                }
            }
            let sol = solve_lp_with_bounds(&model.mip.lp, &lower, &upper).unwrap();
            if sol.status == LpStatus::Optimal {
                best = best.min(sol.objective);
            }
        }
        assert!(
            (sched.planned_cost - best).abs() < 1e-6,
            "milp {} vs enumeration {}",
            sched.planned_cost,
            best
        );
    }

    #[test]
    fn reserve_commits_a_second_unit() {
        let mut big = gen("big", 1, (40.0, 200.0), (20.0, 100.0, 300.0, 60.0));
        big.initial = InitialState {
            on: true,
            hours: 24,
            output_mw: 150.0,
        };
        let small = gen("small", 1, (10.0, 60.0), (70.0, 30.0, 50.0, 20.0));
        let case = one_bus_case(vec![big, small]);
        // Peak 195 fits one unit, but 1.03x peak does not.
        let loads: Vec<Vec<f64>> = vec![vec![150.0], vec![195.0], vec![150.0]];
        let mut inst = UcInstance::new(&case, loads);
        inst.reserve = 0.0;
        let alone = solve_uc(&inst).unwrap();
        assert!(!alone.on[1][1], "no reserve: second unit stays off");
        inst.reserve = 0.03;
        let backed = solve_uc(&inst).unwrap();
        backed.verify(&case).unwrap();
        assert!(backed.on[0][1] && backed.on[1][1], "reserve forces both on");
    }

    #[test]
    fn overloaded_forecast_is_infeasible() {
        let g1 = gen("g", 1, (20.0, 100.0), (30.0, 50.0, 100.0, 20.0));
        let case = one_bus_case(vec![g1]);
        let err = solve_uc(&UcInstance::new(&case, vec![vec![250.0]])).unwrap_err();
        assert!(matches!(err, OpsError::UcInfeasible), "{err:?}");
    }

    #[test]
    fn uc_is_deterministic() {
        let case = cases::four_bus_stressed();
        let agg: Vec<f64> = (0..24)
            .map(|t| 600.0 + 250.0 * (std::f64::consts::PI * t as f64 / 23.0).sin())
            .collect();
        let inst = UcInstance::from_aggregate(&case, &agg);
        let a = solve_uc(&inst).unwrap();
        let b = solve_uc(&inst).unwrap();
        assert_eq!(a.on, b.on);
        assert_eq!(a.dispatch, b.dispatch);
        assert_eq!(a.planned_cost, b.planned_cost);
        a.verify(&case).unwrap();
    }

    #[test]
    fn dispatch_follows_merit_order_when_unconstrained() {
        let mut cheap = gen("cheap", 1, (30.0, 150.0), (20.0, 50.0, 100.0, 20.0));
        cheap.initial.on = true;
        cheap.initial.output_mw = 100.0;
        let mut dear = gen("dear", 2, (10.0, 100.0), (60.0, 30.0, 80.0, 10.0));
        dear.initial.on = true;
        dear.initial.output_mw = 20.0;
        let case = two_bus_case(vec![cheap, dear]);
        let inst = EdInstance {
            case: &case,
            loads: vec![140.0],
            committed: vec![true, true],
            prev_on: vec![true, true],
            prev_output: vec![100.0, 20.0],
        };
        let res = solve_ed(&inst).unwrap();
        assert!((res.output[0] - 130.0).abs() < 1e-6, "{:?}", res.output);
        assert!((res.output[1] - 10.0).abs() < 1e-6);
        assert!(res.shed_total() < 1e-9);
        assert!((res.flows[0] - 130.0).abs() < 1e-6, "all of g1 crosses");
    }

    #[test]
    fn capacity_deficit_is_shed_exactly() {
        let mut only = gen("only", 1, (20.0, 80.0), (30.0, 40.0, 90.0, 10.0));
        only.initial.on = true;
        only.initial.output_mw = 60.0;
        let case = one_bus_case(vec![only]);
        let inst = EdInstance {
            case: &case,
            loads: vec![100.0],
            committed: vec![true],
            prev_on: vec![true],
            prev_output: vec![60.0],
        };
        let res = solve_ed(&inst).unwrap();
        assert!((res.output[0] - 80.0).abs() < 1e-6);
        assert!((res.shed_total() - 20.0).abs() < 1e-6);
        assert!((res.shed_cost - 200_000.0).abs() < 1e-3);
        assert!(!feasible_without_shedding(&inst).unwrap());
    }

    #[test]
    fn ramp_limit_binds_real_time_dispatch() {
        let mut slow = gen("slow", 1, (10.0, 100.0), (30.0, 40.0, 90.0, 10.0));
        slow.ramp_up = 10.0;
        slow.ramp_down = 10.0;
        slow.initial.on = true;
        slow.initial.output_mw = 50.0;
        let case = one_bus_case(vec![slow]);
        let inst = EdInstance {
            case: &case,
            loads: vec![70.0],
            committed: vec![true],
            prev_on: vec![true],
            prev_output: vec![50.0],
        };
        let res = solve_ed(&inst).unwrap();
        assert!((res.output[0] - 60.0).abs() < 1e-6, "{:?}", res.output);
        assert!((res.shed_total() - 10.0).abs() < 1e-6);
        assert_eq!(res.binding.gens_ramp_limited, vec![0]);
        assert!(!feasible_without_shedding(&inst).unwrap());
    }

    fn day_shape(peak: f64) -> Vec<f64> {
        (0..24)
            .map(|t| {
                let x = (t as f64 - 17.0) * std::f64::consts::PI / 12.0;
                peak * (0.62 + 0.38 * x.cos())
            })
            .collect()
    }

    #[test]
    fn perfect_forecast_day_sheds_nothing_and_reprices_exactly() {
        let case = cases::four_bus_stressed();
        let agg = day_shape(900.0);
        let loads = spread_loads(&case, &agg);
        let day = run_day(&case, &loads, &loads, None).unwrap();
        day.schedule.verify(&case).unwrap();
        assert_eq!(day.shed_hours, 0);
        assert!(day.shed_mwh < 1e-9);
        // Real time re-prices the planned energy; with the forecast spot on
        // the two stages agree on cost.
        assert!(
            (day.dispatch_cost - day.schedule.planned_dispatch_cost).abs() < 1e-4,
            "ed {} vs uc {}",
            day.dispatch_cost,
            day.schedule.planned_dispatch_cost
        );
        assert!(
            (day.total_cost
                - (day.dispatch_cost + day.schedule.startup_shutdown_cost(&case)))
            .abs()
                < 1e-6
        );
        // Hourly power balance.
        for (t, hour) in day.hours.iter().enumerate() {
            let supplied: f64 = hour.output.iter().sum::<f64>() + hour.shed_total();
            let wanted: f64 = loads[t].iter().sum();
            assert!(
                (supplied - wanted).abs() < 1e-6,
                "hour {t}: {supplied} vs {wanted}"
            );
        }
    }

    #[test]
    fn withheld_peaker_force_sheds_the_peak() {
        let case = cases::four_bus_stressed();
        let agg = day_shape(930.0);
        let loads = spread_loads(&case, &agg);
        let clean = run_day(&case, &loads, &loads, None).unwrap();
        assert_eq!(clean.shed_hours, 0);
        // Rerun the same day with every peaker forced out of the schedule.
        let mut starved = clean.schedule.clone();
        for g in 2..4 {
            for t in 0..24 {
                starved.on[g][t] = false;
                starved.start[g][t] = false;
                starved.stop[g][t] = false;
                starved.dispatch[g][t] = 0.0;
            }
        }
        let hit = run_day(&case, &loads, &loads, Some(starved)).unwrap();
        assert!(hit.shed_mwh > 1.0, "shed {}", hit.shed_mwh);
        assert!(hit.total_cost > clean.total_cost);
        // Shedding is justified: those hours are infeasible without it.
        for (t, hour) in hit.hours.iter().enumerate() {
            if hour.shed_total() > BINDING_TOL {
                let committed: Vec<bool> = (0..4).map(|g| hit.schedule.on[g][t]).collect();
                let prev_output = if t == 0 {
                    vec![300.0, 120.0, 0.0, 0.0]
                } else {
                    hit.hours[t - 1].output.clone()
                };
                let prev_on = if t == 0 {
                    vec![true, true, false, false]
                } else {
                    (0..4).map(|g| hit.schedule.on[g][t - 1]).collect()
                };
                let inst = EdInstance {
                    case: &case,
                    loads: loads[t].clone(),
                    committed,
                    prev_on,
                    prev_output,
                };
                assert!(!feasible_without_shedding(&inst).unwrap(), "hour {t}");
            }
        }
    }

    #[test]
    fn clean_schedule_prices_best_under_perfect_forecast() {
        let case = cases::four_bus_stressed();
        let agg = day_shape(880.0);
        let loads = spread_loads(&case, &agg);
        let clean = run_day(&case, &loads, &loads, None).unwrap();
        // Any other feasible schedule, here induced by distorted forecasts,
        // costs at least as much on the same actuals.
        for scale in [0.9, 0.95, 1.05] {
            let skewed: Vec<Vec<f64>> = loads
                .iter()
                .map(|row| row.iter().map(|l| l * scale).collect())
                .collect();
            let other = run_day(&case, &skewed, &loads, None).unwrap();
            assert!(
                other.total_cost >= clean.total_cost - 1e-6,
                "scale {scale}: {} vs {}",
                other.total_cost,
                clean.total_cost
            );
        }
    }
}
