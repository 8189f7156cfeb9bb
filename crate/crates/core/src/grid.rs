//! Network cases and DC power-flow constraint blocks.
//!
//! A [`GridCase`] is plain data parsed from JSON (schema documented on the
//! struct). [`DcNetwork`] turns a validated case into the B-theta blocks the
//! commitment and dispatch models embed: angle variables per non-reference
//! bus, flow variables per line, flow-definition equalities and nodal
//! balances. A flag drops the angle coupling to compare against a pure
//! transport relaxation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::milp::LpBuilder;

/// Supported case schema version.
pub const CASE_VERSION: u32 = 1;
/// Capacity below this multiple of peak load earns a sizing warning.
pub const CAPACITY_COMFORT: f64 = 1.5;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema: {0}")]
    Schema(String),
    #[error("unknown bus {0}")]
    UnknownBus(usize),
    #[error("load shares sum to {0}, expected 1")]
    BadShares(f64),
    #[error("expected exactly one reference bus, found {0}")]
    NoReferenceBus(usize),
    #[error("network is not connected")]
    Disconnected,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    #[serde(default)]
    pub reference: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Per-unit susceptance magnitude; MW conversion uses `base_mva`.
    pub susceptance_pu: f64,
    /// Flow bounds in MW with `min_mw <= 0 <= max_mw`.
    pub min_mw: f64,
    pub max_mw: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitialState {
    pub on: bool,
    /// Hours already spent in the current on/off state.
    pub hours: usize,
    pub output_mw: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Generator {
    pub name: String,
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    /// $/MWh on energy.
    pub marginal_cost: f64,
    /// $/h while committed.
    pub no_load_cost: f64,
    pub startup_cost: f64,
    pub shutdown_cost: f64,
    /// Minimum hours on after a start / off after a stop.
    pub min_up: usize,
    pub min_down: usize,
    /// MW per hour.
    pub ramp_up: f64,
    pub ramp_down: f64,
    pub initial: InitialState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadPoint {
    pub bus: usize,
    /// Fraction of the system load served at this bus; shares sum to 1.
    pub share: f64,
}

/// A complete network case.
///
/// JSON layout mirrors the struct field names:
///
/// ```json
/// {
///   "version": 1,
///   "name": "...",
///   "base_mva": 100.0,
///   "buses": [{"id": 1, "reference": true}, {"id": 2}],
///   "lines": [{"from": 1, "to": 2, "susceptance_pu": 10.0,
///              "min_mw": -400.0, "max_mw": 400.0}],
///   "generators": [{"name": "g1", "bus": 1, "p_min": 50.0, ...}],
///   "loads": [{"bus": 2, "share": 1.0}],
///   "reserve_fraction": 0.03,
///   "voll": 10000.0
/// }
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridCase {
    pub version: u32,
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub loads: Vec<LoadPoint>,
    /// Spinning-reserve margin applied to hourly committed capacity.
    #[serde(default = "default_reserve")]
    pub reserve_fraction: f64,
    /// Value of lost load in $/MWh, the shedding price.
    #[serde(default = "default_voll")]
    pub voll: f64,
}

fn default_reserve() -> f64 {
    0.03
}

fn default_voll() -> f64 {
    10_000.0
}

impl GridCase {
    pub fn from_json(text: &str) -> Result<Self, GridError> {
        let case: GridCase =
            serde_json::from_str(text).map_err(|e| GridError::Schema(e.to_string()))?;
        case.validate()?;
        Ok(case)
    }

    pub fn from_path(path: &Path) -> Result<Self, GridError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn total_capacity(&self) -> f64 {
        self.generators.iter().map(|g| g.p_max).sum()
    }

    /// Ratio of installed capacity to the given peak; callers warn when it
    /// falls below [`CAPACITY_COMFORT`].
    pub fn capacity_margin(&self, peak_mw: f64) -> f64 {
        self.total_capacity() / peak_mw
    }

    fn bus_exists(&self, id: usize) -> bool {
        self.buses.iter().any(|b| b.id == id)
    }

    /// # Errors
    ///
    /// Everything structural: version, duplicate ids, unknown endpoints,
    /// missing or duplicated reference bus, disconnected topology, share
    /// sums, sign conventions on limits, ramps and initial states.
    pub fn validate(&self) -> Result<(), GridError> {
        if self.version != CASE_VERSION {
            return Err(GridError::Schema(format!(
                "case version {} unsupported, expected {CASE_VERSION}",
                self.version
            )));
        }
        if !(self.base_mva > 0.0) {
            return Err(GridError::Schema("base_mva must be positive".into()));
        }
        if self.buses.is_empty() {
            return Err(GridError::Schema("case has no buses".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for b in &self.buses {
            if !seen.insert(b.id) {
                return Err(GridError::Schema(format!("duplicate bus id {}", b.id)));
            }
        }
        let refs = self.buses.iter().filter(|b| b.reference).count();
        if refs != 1 {
            return Err(GridError::NoReferenceBus(refs));
        }
        for l in &self.lines {
            for end in [l.from, l.to] {
                if !self.bus_exists(end) {
                    return Err(GridError::UnknownBus(end));
                }
            }
            if l.from == l.to {
                return Err(GridError::Schema(format!("line {}-{} is a loop", l.from, l.to)));
            }
            if !(l.susceptance_pu > 0.0) {
                return Err(GridError::Schema(format!(
                    "line {}-{} susceptance must be positive",
                    l.from, l.to
                )));
            }
            if !(l.min_mw <= 0.0 && 0.0 <= l.max_mw) {
                return Err(GridError::Schema(format!(
                    "line {}-{} limits must straddle zero",
                    l.from, l.to
                )));
            }
        }
        for g in &self.generators {
            if !self.bus_exists(g.bus) {
                return Err(GridError::UnknownBus(g.bus));
            }
            if !(0.0 <= g.p_min && g.p_min <= g.p_max) {
                return Err(GridError::Schema(format!(
                    "generator {}: need 0 <= p_min <= p_max",
                    g.name
                )));
            }
            if g.marginal_cost < 0.0
                || g.no_load_cost < 0.0
                || g.startup_cost < 0.0
                || g.shutdown_cost < 0.0
            {
                return Err(GridError::Schema(format!(
                    "generator {}: negative cost",
                    g.name
                )));
            }
            if g.min_up == 0 || g.min_down == 0 {
                return Err(GridError::Schema(format!(
                    "generator {}: min up/down must be at least one hour",
                    g.name
                )));
            }
            if !(g.ramp_up > 0.0 && g.ramp_down > 0.0) {
                return Err(GridError::Schema(format!(
                    "generator {}: ramps must be positive",
                    g.name
                )));
            }
            if g.initial.on {
                if g.initial.output_mw < g.p_min - 1e-6 || g.initial.output_mw > g.p_max + 1e-6 {
                    return Err(GridError::Schema(format!(
                        "generator {}: initial output outside [p_min, p_max]",
                        g.name
                    )));
                }
            } else if g.initial.output_mw != 0.0 {
                return Err(GridError::Schema(format!(
                    "generator {}: off but initial output nonzero",
                    g.name
                )));
            }
        }
        let mut load_buses = std::collections::BTreeSet::new();
        for lp in &self.loads {
            if !self.bus_exists(lp.bus) {
                return Err(GridError::UnknownBus(lp.bus));
            }
            if lp.share < 0.0 {
                return Err(GridError::Schema(format!(
                    "load share at bus {} is negative",
                    lp.bus
                )));
            }
            if !load_buses.insert(lp.bus) {
                return Err(GridError::Schema(format!(
                    "duplicate load entry for bus {}",
                    lp.bus
                )));
            }
        }
        let share_sum: f64 = self.loads.iter().map(|l| l.share).sum();
        if (share_sum - 1.0).abs() > 1e-9 {
            return Err(GridError::BadShares(share_sum));
        }

        // Connectivity by breadth-first search over lines.
        let ids: Vec<usize> = self.buses.iter().map(|b| b.id).collect();
        let mut reached = std::collections::BTreeSet::new();
        let mut queue = vec![ids[0]];
        reached.insert(ids[0]);
        while let Some(cur) = queue.pop() {
            for l in &self.lines {
                let next = if l.from == cur {
                    l.to
                } else if l.to == cur {
                    l.from
                } else {
                    continue;
                };
                if reached.insert(next) {
                    queue.push(next);
                }
            }
        }
        if reached.len() != self.buses.len() {
            return Err(GridError::Disconnected);
        }
        Ok(())
    }
}

/// Whether flows are tied to angles (B-theta) or left free within line
/// limits (a transport relaxation kept for comparison runs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowModel {
    BTheta,
    Transport,
}

#[derive(Debug, Clone)]
struct DcLine {
    from: usize,
    to: usize,
    /// MW per radian of angle difference.
    b_mw: f64,
    min_mw: f64,
    max_mw: f64,
}

/// Variable offsets handed back when the per-hour flow variables are added
/// to a builder.
#[derive(Debug, Clone, Copy)]
pub struct HourFlowVars {
    pub angle_off: usize,
    pub flow_off: usize,
}

/// Index-mapped network derived from a validated [`GridCase`].
///
/// Buses are ordered by ascending id; `pos` converts an external bus id to
/// the dense internal index used everywhere below.
#[derive(Debug, Clone)]
pub struct DcNetwork {
    ids: Vec<usize>,
    index: BTreeMap<usize, usize>,
    lines: Vec<DcLine>,
    ref_pos: usize,
}

impl DcNetwork {
    pub fn new(case: &GridCase) -> Self {
        let mut ids: Vec<usize> = case.buses.iter().map(|b| b.id).collect();
        ids.sort_unstable();
        let index: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let ref_id = case
            .buses
            .iter()
            .find(|b| b.reference)
            .expect("validated case has a reference bus")
            .id;
        let lines = case
            .lines
            .iter()
            .map(|l| DcLine {
                from: index[&l.from],
                to: index[&l.to],
                b_mw: l.susceptance_pu * case.base_mva,
                min_mw: l.min_mw,
                max_mw: l.max_mw,
            })
            .collect();
        DcNetwork {
            ref_pos: index[&ref_id],
            ids,
            index,
            lines,
        }
    }

    pub fn n_bus(&self) -> usize {
        self.ids.len()
    }

    pub fn n_line(&self) -> usize {
        self.lines.len()
    }

    pub fn bus_ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn pos(&self, bus_id: usize) -> Option<usize> {
        self.index.get(&bus_id).copied()
    }

    pub fn line_limits(&self, l: usize) -> (f64, f64) {
        (self.lines[l].min_mw, self.lines[l].max_mw)
    }

    pub fn line_ends(&self, l: usize) -> (usize, usize) {
        (self.lines[l].from, self.lines[l].to)
    }

    /// Lines incident to an internal bus index.
    pub fn incident_lines(&self, pos: usize) -> Vec<usize> {
        (0..self.lines.len())
            .filter(|&l| self.lines[l].from == pos || self.lines[l].to == pos)
            .collect()
    }

    /// Angle variable slot for a bus, `None` for the reference bus (pinned
    /// to zero and eliminated).
    fn angle_slot(&self, pos: usize) -> Option<usize> {
        match pos.cmp(&self.ref_pos) {
            std::cmp::Ordering::Less => Some(pos),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(pos - 1),
        }
    }

    /// Adds one hour's angle and flow variables. Angles are free; flows are
    /// bounded by the line limits. Under [`FlowModel::Transport`] no angle
    /// variables are created (the offset still points past the flows).
    pub fn add_hour_vars(&self, lp: &mut LpBuilder, tag: &str, model: FlowModel) -> HourFlowVars {
        let angle_off = lp.num_vars();
        if model == FlowModel::BTheta {
            for pos in 0..self.n_bus() {
                if pos == self.ref_pos {
                    continue;
                }
                lp.var(
                    format!("th_{}_{tag}", self.ids[pos]),
                    f64::NEG_INFINITY,
                    f64::INFINITY,
                    0.0,
                );
            }
        }
        let flow_off = lp.num_vars();
        for (l, line) in self.lines.iter().enumerate() {
            lp.var(
                format!("f{l}_{}_{}_{tag}", self.ids[line.from], self.ids[line.to]),
                line.min_mw,
                line.max_mw,
                0.0,
            );
        }
        HourFlowVars { angle_off, flow_off }
    }

    /// Flow-definition equalities `f = b (th_from - th_to)`; only meaningful
    /// under [`FlowModel::BTheta`].
    pub fn flow_definitions(&self, lp: &mut LpBuilder, vars: HourFlowVars) {
        for (l, line) in self.lines.iter().enumerate() {
            let mut terms = vec![(vars.flow_off + l, 1.0)];
            if let Some(s) = self.angle_slot(line.from) {
                terms.push((vars.angle_off + s, -line.b_mw));
            }
            if let Some(s) = self.angle_slot(line.to) {
                terms.push((vars.angle_off + s, line.b_mw));
            }
            lp.eq(terms, 0.0);
        }
    }

    /// Nodal balance rows: injections plus arriving flows minus departing
    /// flows equal the bus load. `injections[pos]` lists (variable, coeff)
    /// pairs such as generator outputs or shed amounts at that bus.
    pub fn nodal_balance(
        &self,
        lp: &mut LpBuilder,
        vars: HourFlowVars,
        injections: &[Vec<(usize, f64)>],
        loads_mw: &[f64],
    ) {
        assert_eq!(injections.len(), self.n_bus());
        assert_eq!(loads_mw.len(), self.n_bus());
        for pos in 0..self.n_bus() {
            let mut terms = injections[pos].clone();
            for (l, line) in self.lines.iter().enumerate() {
                if line.to == pos {
                    terms.push((vars.flow_off + l, 1.0));
                } else if line.from == pos {
                    terms.push((vars.flow_off + l, -1.0));
                }
            }
            lp.eq(terms, loads_mw[pos]);
        }
    }

    /// Direct B-theta solve for given net injections (MW, one per internal
    /// bus position, summing to ~zero). Returns per-line flows. This is the
    /// reference path for tests and vulnerability reporting.
    pub fn solve_flows(&self, injections_mw: &[f64]) -> Result<Vec<f64>, GridError> {
        assert_eq!(injections_mw.len(), self.n_bus());
        let total: f64 = injections_mw.iter().sum();
        if total.abs() > 1e-6 * (1.0 + injections_mw.iter().map(|x| x.abs()).sum::<f64>()) {
            return Err(GridError::Schema(format!(
                "net injections sum to {total}, expected zero"
            )));
        }
        let n = self.n_bus() - 1;
        let mut a = vec![vec![0.0; n]; n];
        let mut b = vec![0.0; n];
        for line in &self.lines {
            let sf = self.angle_slot(line.from);
            let st = self.angle_slot(line.to);
            if let Some(i) = sf {
                a[i][i] += line.b_mw;
                if let Some(j) = st {
                    a[i][j] -= line.b_mw;
                }
            }
            if let Some(i) = st {
                a[i][i] += line.b_mw;
                if let Some(j) = sf {
                    a[i][j] -= line.b_mw;
                }
            }
        }
        for pos in 0..self.n_bus() {
            if let Some(s) = self.angle_slot(pos) {
                b[s] = injections_mw[pos];
            }
        }
        let theta = gauss(&mut a, &mut b)
            .ok_or_else(|| GridError::Schema("singular susceptance matrix".into()))?;
        let angle = |pos: usize| self.angle_slot(pos).map_or(0.0, |s| theta[s]);
        Ok(self
            .lines
            .iter()
            .map(|l| l.b_mw * (angle(l.from) - angle(l.to)))
            .collect())
    }
}

fn gauss(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&r, &s| a[r][col].abs().partial_cmp(&a[s][col].abs()).unwrap())?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
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

/// Cases shipped with the crate; the JSON files under `cases/` are embedded
/// so tests and default configs work from any directory.
pub mod cases {
    use super::GridCase;

    pub const TWO_BUS: &str = include_str!("../cases/two_bus.json");
    pub const FOUR_BUS_STRESSED: &str = include_str!("../cases/four_bus_stressed.json");
    pub const FOURTEEN_BUS: &str = include_str!("../cases/fourteen_bus.json");

    pub fn two_bus() -> GridCase {
        GridCase::from_json(TWO_BUS).expect("bundled two-bus case is valid")
    }

    pub fn four_bus_stressed() -> GridCase {
        GridCase::from_json(FOUR_BUS_STRESSED).expect("bundled four-bus case is valid")
    }

    pub fn fourteen_bus() -> GridCase {
        GridCase::from_json(FOURTEEN_BUS).expect("bundled fourteen-bus case is valid")
    }

    /// Resolves `bundled:<name>` pseudo-paths used in config files.
    pub fn by_name(name: &str) -> Option<&'static str> {
        match name {
            "two_bus" => Some(TWO_BUS),
            "four_bus_stressed" => Some(FOUR_BUS_STRESSED),
            "fourteen_bus" => Some(FOURTEEN_BUS),
            _ => None,
        }
    }
}
