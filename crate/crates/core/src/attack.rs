//! Adversarial perturbation of forecaster inputs.
//!
//! The attack surface is the temperature block of a feature window. Budgets
//! are stated in physical degrees and hold per lag row: every row keeps its
//! temperature deviation inside the chosen norm ball around the clean row.
//! Three attackers share the same sign-step loop and differ only in where
//! gradients come from: the model itself, two-sided query differences, or a
//! substitute model trained offline.

use crate::dataio::{temp_cols, FeatureWindow, Scaler};
use crate::neuralnet::{sgd_train, Net, NetConfig, NetError, TrainConfig};
use chrono::NaiveDateTime;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::cell::Cell;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("query budget exhausted: used {used} of {budget}")]
    QueryBudgetExhausted { used: u64, budget: u64 },
    #[error("barrier iterate left the feasible region: row {row} deviation {norm} vs epsilon {epsilon}")]
    BarrierDomain { row: usize, norm: f64, epsilon: f64 },
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Linf,
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Sign step, then project back into the ball. The default.
    Projection,
    /// Log-barrier keeps iterates strictly interior; L2 only.
    Barrier,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    /// +1 drives the forecast down, -1 up; the loop minimizes gamma * f.
    pub gamma: i8,
    /// Per-row budget over temperature coordinates, physical degrees.
    pub epsilon: f64,
    pub norm: Norm,
    /// Step size in scaled units. None resolves per station to a fifth of
    /// the scaled epsilon for that station's column.
    pub alpha: Option<f64>,
    /// Barrier weight, used only in barrier mode.
    pub beta: f64,
    /// Finite-difference probe step in scaled units.
    pub delta: f64,
    pub iterations: usize,
    /// Max model queries for query-based attacks. None = unlimited.
    pub query_budget: Option<u64>,
    pub mode: Mode,
}

impl AttackConfig {
    pub fn new(gamma: i8, epsilon: f64) -> AttackConfig {
        AttackConfig {
            gamma,
            epsilon,
            norm: Norm::Linf,
            alpha: None,
            beta: 0.01,
            delta: 1e-3,
            iterations: 10,
            query_budget: None,
            mode: Mode::Projection,
        }
    }

    fn validate(&self) {
        assert!(
            self.gamma == 1 || self.gamma == -1,
            "gamma must be +1 or -1, got {}",
            self.gamma
        );
        assert!(self.epsilon >= 0.0, "epsilon {} < 0", self.epsilon);
        if let Some(a) = self.alpha {
            assert!(a >= 0.0, "alpha {a} < 0");
        }
        assert!(self.delta > 0.0, "delta {} must be positive", self.delta);
        assert!(self.iterations >= 1, "need at least one iteration");
        if self.mode == Mode::Barrier {
            assert!(
                self.norm == Norm::L2,
                "barrier mode is defined for the L2 ball, got {:?}",
                self.norm
            );
            assert!(self.beta > 0.0, "beta {} must be positive", self.beta);
        }
    }

    fn step_size(&self, scaler: &Scaler, station: usize) -> f64 {
        self.alpha
            .unwrap_or_else(|| scaler.degrees_to_unit(station, self.epsilon) / 5.0)
    }
}

/// One attacked window. Forecasts are scaled; the norm is in physical
/// degrees, taken as the worst lag row.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub clean: FeatureWindow,
    pub x_adv: Array2<f64>,
    pub clean_forecast: f64,
    pub attacked_forecast: f64,
    pub queries_used: u64,
    pub exhausted: bool,
    pub perturbation_norm: f64,
}

/// Flat JSON form for the reporting pipeline: temperatures in physical
/// degrees, forecasts in MW.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackRecord {
    pub target_time: NaiveDateTime,
    pub gamma: i8,
    pub epsilon: f64,
    pub norm: Norm,
    /// `[station][lag row]`, degrees.
    pub clean_temps: Vec<Vec<f64>>,
    pub adv_temps: Vec<Vec<f64>>,
    pub perturbation_norm: f64,
    pub queries_used: u64,
    pub exhausted: bool,
    pub clean_forecast_mw: f64,
    pub attacked_forecast_mw: f64,
}

impl AttackResult {
    pub fn record(&self, scaler: &Scaler, cfg: &AttackConfig) -> AttackRecord {
        let n_temp = scaler.temp_min.len();
        let rows = self.clean.x.nrows();
        let temps = |x: &Array2<f64>| -> Vec<Vec<f64>> {
            (0..n_temp)
                .map(|s| {
                    (0..rows)
                        .map(|r| scaler.unscale_temp(s, x[[r, 1 + s]]))
                        .collect()
                })
                .collect()
        };
        AttackRecord {
            target_time: self.clean.target_time,
            gamma: cfg.gamma,
            epsilon: cfg.epsilon,
            norm: cfg.norm,
            clean_temps: temps(&self.clean.x),
            adv_temps: temps(&self.x_adv),
            perturbation_norm: self.perturbation_norm,
            queries_used: self.queries_used,
            exhausted: self.exhausted,
            clean_forecast_mw: scaler.unscale_load(self.clean_forecast),
            attacked_forecast_mw: scaler.unscale_load(self.attacked_forecast),
        }
    }
}

/// Query-only access to a forecaster: a window goes in, a scaled forecast
/// comes out, every call is counted. Grants no parameter access by
/// construction. The counter is a plain cell; concurrent workers get one
/// handle each rather than sharing.
pub struct QueryHandle<'a> {
    f: Box<dyn Fn(&Array2<f64>) -> f64 + 'a>,
    used: Cell<u64>,
    budget: Option<u64>,
}

impl<'a> QueryHandle<'a> {
    pub fn new(f: impl Fn(&Array2<f64>) -> f64 + 'a) -> QueryHandle<'a> {
        QueryHandle {
            f: Box::new(f),
            used: Cell::new(0),
            budget: None,
        }
    }

    pub fn with_budget(f: impl Fn(&Array2<f64>) -> f64 + 'a, budget: u64) -> QueryHandle<'a> {
        QueryHandle {
            budget: Some(budget),
            ..QueryHandle::new(f)
        }
    }

    pub fn from_net(net: &'a Net) -> QueryHandle<'a> {
        QueryHandle::new(move |x| net.forward(x))
    }

    pub fn used(&self) -> u64 {
        self.used.get()
    }

    /// Queries left, or None when unlimited.
    pub fn remaining(&self) -> Option<u64> {
        self.budget.map(|b| b.saturating_sub(self.used.get()))
    }

    pub fn query(&self, x: &Array2<f64>) -> Result<f64, AttackError> {
        if let Some(b) = self.budget {
            if self.used.get() >= b {
                return Err(AttackError::QueryBudgetExhausted {
                    used: self.used.get(),
                    budget: b,
                });
            }
        }
        self.used.set(self.used.get() + 1);
        Ok((self.f)(x))
    }
}

/// Temperature coordinates of a window, the fixed attack mask.
pub fn temp_mask(rows: usize, n_temp: usize) -> Vec<(usize, usize)> {
    let cols = temp_cols(n_temp);
    (0..rows)
        .flat_map(|r| cols.clone().map(move |c| (r, c)))
        .collect()
}

fn sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-row temperature deviation from clean, in physical degrees.
fn row_deviation(x: &Array2<f64>, clean: &Array2<f64>, scaler: &Scaler, row: usize) -> Vec<f64> {
    let n_temp = scaler.temp_min.len();
    (0..n_temp)
        .map(|s| {
            let c = 1 + s;
            (x[[row, c]] - clean[[row, c]]) * (scaler.temp_max[s] - scaler.temp_min[s])
        })
        .collect()
}

fn norm_of(dev: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::Linf => dev.iter().fold(0.0, |m, d| m.max(d.abs())),
        Norm::L1 => dev.iter().map(|d| d.abs()).sum(),
        Norm::L2 => dev.iter().map(|d| d * d).sum::<f64>().sqrt(),
    }
}

/// Worst lag-row deviation norm in degrees; this is the reported norm and
/// the quantity bounded by epsilon.
pub fn perturbation_norm(
    x: &Array2<f64>,
    clean: &Array2<f64>,
    scaler: &Scaler,
    norm: Norm,
) -> f64 {
    (0..x.nrows())
        .map(|r| norm_of(&row_deviation(x, clean, scaler, r), norm))
        .fold(0.0, f64::max)
}

/// Euclidean projection of `dev` onto the L1 ball of the given radius:
/// soft-threshold by the theta that lands the shrunk vector on the sphere.
fn l1_ball_project(dev: &mut [f64], radius: f64) {
    let total: f64 = dev.iter().map(|d| d.abs()).sum();
    if total <= radius {
        return;
    }
    let mut mags: Vec<f64> = dev.iter().map(|d| d.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).expect("finite magnitudes"));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &m) in mags.iter().enumerate() {
        cum += m;
        let t = (cum - radius) / (j as f64 + 1.0);
        if t < m {
            theta = t;
        } else {
            break;
        }
    }
    for d in dev.iter_mut() {
        *d = sign(*d) * (d.abs() - theta).max(0.0);
    }
}

/// Projects every lag row of `x` onto the epsilon ball around the same row
/// of `clean` (temperature coordinates, physical degrees), then clips into
/// [0, 1]. Non-temperature coordinates are restored from `clean` exactly.
fn project_x(x: &Array2<f64>, clean: &Array2<f64>, scaler: &Scaler, cfg: &AttackConfig) -> Array2<f64> {
    assert_eq!(x.dim(), clean.dim(), "window shapes differ");
    let mut out = clean.clone();
    for r in 0..x.nrows() {
        let mut dev = row_deviation(x, clean, scaler, r);
        match cfg.norm {
            Norm::Linf => {
                for d in dev.iter_mut() {
                    *d = d.clamp(-cfg.epsilon, cfg.epsilon);
                }
            }
            Norm::L2 => {
                let n = norm_of(&dev, Norm::L2);
                if n > cfg.epsilon {
                    let k = if n > 0.0 { cfg.epsilon / n } else { 0.0 };
                    for d in dev.iter_mut() {
                        *d *= k;
                    }
                }
            }
            Norm::L1 => l1_ball_project(&mut dev, cfg.epsilon),
        }
        for (s, d) in dev.iter().enumerate() {
            let c = 1 + s;
            let span = scaler.temp_max[s] - scaler.temp_min[s];
            out[[r, c]] = (clean[[r, c]] + d / span).clamp(0.0, 1.0);
        }
    }
    out
}

/// Public window-level projection; clones target metadata from the clean
/// window, replacing only the input block.
pub fn project(
    xadv: &FeatureWindow,
    xclean: &FeatureWindow,
    scaler: &Scaler,
    cfg: &AttackConfig,
) -> FeatureWindow {
    cfg.validate();
    FeatureWindow {
        x: project_x(&xadv.x, &xclean.x, scaler, cfg),
        ..xclean.clone()
    }
}

/// Gradient contribution of the per-row log-barrier, added in scaled
/// coordinates, or the offending row when an iterate is on or outside a
/// ball boundary.
fn barrier_gradient(
    x: &Array2<f64>,
    clean: &Array2<f64>,
    scaler: &Scaler,
    cfg: &AttackConfig,
) -> Result<Array2<f64>, AttackError> {
    let mut g = Array2::zeros(x.dim());
    for r in 0..x.nrows() {
        let dev = row_deviation(x, clean, scaler, r);
        let n2: f64 = dev.iter().map(|d| d * d).sum();
        let room = cfg.epsilon * cfg.epsilon - n2;
        if room <= 0.0 {
            return Err(AttackError::BarrierDomain {
                row: r,
                norm: n2.sqrt(),
                epsilon: cfg.epsilon,
            });
        }
        for (s, d) in dev.iter().enumerate() {
            let span = scaler.temp_max[s] - scaler.temp_min[s];
            g[[r, 1 + s]] = 2.0 * cfg.beta * d * span / room;
        }
    }
    Ok(g)
}

/// One sign step over the masked coordinates, in place.
fn apply_step(x: &mut Array2<f64>, gobj: &Array2<f64>, scaler: &Scaler, cfg: &AttackConfig) {
    let n_temp = scaler.temp_min.len();
    for r in 0..x.nrows() {
        for s in 0..n_temp {
            let c = 1 + s;
            x[[r, c]] = (x[[r, c]] - cfg.step_size(scaler, s) * sign(gobj[[r, c]])).clamp(0.0, 1.0);
        }
    }
}

/// Sign-gradient attack with full model access. Iterates a step of
/// `-alpha * sign(grad of gamma * f)` over the temperature mask, keeps the
/// feasible set either by projection or by the log-barrier, and returns the
/// best iterate by the objective, so `gamma * f(adv) <= gamma * f(clean)`.
pub fn whitebox_attack(
    net: &Net,
    w: &FeatureWindow,
    scaler: &Scaler,
    cfg: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    whitebox_attack_from(net, w, None, scaler, cfg)
}

/// Warm-started variant: `start` is projected into the budget first, so a
/// smaller-budget result seeds a larger-budget attack and the objective can
/// only improve on it.
pub fn whitebox_attack_from(
    net: &Net,
    w: &FeatureWindow,
    start: Option<&Array2<f64>>,
    scaler: &Scaler,
    cfg: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    cfg.validate();
    let clean = &w.x;
    let gamma = cfg.gamma as f64;
    let clean_f = net.forward(clean);
    let mut best_x = clean.clone();
    let mut best_f = clean_f;
    let mut x = match start {
        Some(s) => project_x(s, clean, scaler, cfg),
        None => clean.clone(),
    };
    if start.is_some() {
        let f = net.forward(&x);
        if gamma * f < gamma * best_f {
            best_f = f;
            best_x = x.clone();
        }
    }
    if cfg.mode == Mode::Barrier {
        // Fails immediately on a degenerate ball or a boundary start.
        barrier_gradient(&x, clean, scaler, cfg)?;
    }
    for _ in 0..cfg.iterations {
        let (_, grad) = net.input_gradient(&x);
        let mut gobj = grad.mapv(|g| gamma * g);
        if cfg.mode == Mode::Barrier {
            gobj += &barrier_gradient(&x, clean, scaler, cfg)?;
        }
        apply_step(&mut x, &gobj, scaler, cfg);
        match cfg.mode {
            Mode::Projection => x = project_x(&x, clean, scaler, cfg),
            Mode::Barrier => {
                barrier_gradient(&x, clean, scaler, cfg)?;
            }
        }
        let f = net.forward(&x);
        if gamma * f < gamma * best_f {
            best_f = f;
            best_x = x.clone();
        }
    }
    let norm = perturbation_norm(&best_x, clean, scaler, cfg.norm);
    Ok(AttackResult {
        clean: w.clone(),
        x_adv: best_x,
        clean_forecast: clean_f,
        attacked_forecast: best_f,
        queries_used: 0,
        exhausted: false,
        perturbation_norm: norm,
    })
}

/// Two-sided finite-difference gradient over the masked coordinates.
/// Consumes exactly `2 * mask.len()` queries.
///
/// # Errors
///
/// [`AttackError::QueryBudgetExhausted`] when fewer queries remain.
pub fn grad_estimate(
    q: &QueryHandle,
    x: &Array2<f64>,
    delta: f64,
    mask: &[(usize, usize)],
) -> Result<Vec<f64>, AttackError> {
    assert!(delta > 0.0, "delta {delta} must be positive");
    if let Some(rem) = q.remaining() {
        if rem < 2 * mask.len() as u64 {
            return Err(AttackError::QueryBudgetExhausted {
                used: q.used(),
                budget: q.budget.expect("remaining implies budget"),
            });
        }
    }
    let mut probe = x.clone();
    let mut g = Vec::with_capacity(mask.len());
    for &(r, c) in mask {
        let base = x[[r, c]];
        probe[[r, c]] = base + delta;
        let hi = q.query(&probe)?;
        probe[[r, c]] = base - delta;
        let lo = q.query(&probe)?;
        probe[[r, c]] = base;
        g.push((hi - lo) / (2.0 * delta));
    }
    Ok(g)
}

/// Same loop as [`whitebox_attack`] driven entirely through a
/// [`QueryHandle`]: gradients come from central differences and the best
/// iterate is tracked by queried forecasts. Each iteration costs
/// `2 * mask + 1` queries on top of one upfront clean evaluation; when the
/// remaining budget cannot cover an iteration the attack stops where it is
/// and flags exhaustion.
///
/// # Errors
///
/// [`AttackError::QueryBudgetExhausted`] only when the budget cannot even
/// cover the clean evaluation.
pub fn blackbox_attack(
    q: &QueryHandle,
    w: &FeatureWindow,
    scaler: &Scaler,
    cfg: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    cfg.validate();
    let clean = &w.x;
    let gamma = cfg.gamma as f64;
    let n_temp = scaler.temp_min.len();
    let mask = temp_mask(clean.nrows(), n_temp);
    let start_used = q.used();
    let clean_f = q.query(clean)?;
    let mut best_x = clean.clone();
    let mut best_f = clean_f;
    let mut x = clean.clone();
    let mut exhausted = false;
    if cfg.mode == Mode::Barrier {
        barrier_gradient(&x, clean, scaler, cfg)?;
    }
    for _ in 0..cfg.iterations {
        let iteration_cost = 2 * mask.len() as u64 + 1;
        if q.remaining().is_some_and(|rem| rem < iteration_cost) {
            exhausted = true;
            break;
        }
        let est = grad_estimate(q, &x, cfg.delta, &mask)?;
        let mut gobj = Array2::zeros(clean.dim());
        for (&(r, c), &g) in mask.iter().zip(&est) {
            gobj[[r, c]] = gamma * g;
        }
        if cfg.mode == Mode::Barrier {
            gobj += &barrier_gradient(&x, clean, scaler, cfg)?;
        }
        apply_step(&mut x, &gobj, scaler, cfg);
        match cfg.mode {
            Mode::Projection => x = project_x(&x, clean, scaler, cfg),
            Mode::Barrier => {
                barrier_gradient(&x, clean, scaler, cfg)?;
            }
        }
        let f = q.query(&x)?;
        if gamma * f < gamma * best_f {
            best_f = f;
            best_x = x.clone();
        }
    }
    let norm = perturbation_norm(&best_x, clean, scaler, cfg.norm);
    Ok(AttackResult {
        clean: w.clone(),
        x_adv: best_x,
        clean_forecast: clean_f,
        attacked_forecast: best_f,
        queries_used: q.used() - start_used,
        exhausted,
        perturbation_norm: norm,
    })
}

/// Gradient source for a rolling series attack.
pub enum AttackMethod<'a> {
    WhiteBox(&'a Net),
    BlackBox(&'a QueryHandle<'a>),
}

impl AttackMethod<'_> {
    pub fn attack_window(
        &self,
        w: &FeatureWindow,
        scaler: &Scaler,
        cfg: &AttackConfig,
    ) -> Result<AttackResult, AttackError> {
        match self {
            AttackMethod::WhiteBox(net) => whitebox_attack(net, w, scaler, cfg),
            AttackMethod::BlackBox(q) => blackbox_attack(q, w, scaler, cfg),
        }
    }
}

/// A day's worth of attacked windows plus the merged injected sensor
/// timeline implied by them.
pub struct SeriesAttack {
    pub results: Vec<AttackResult>,
    /// Source-series row index -> adversarial station temperatures in
    /// degrees. Overlapping windows resolve last-writer-wins, which keeps
    /// every per-row ball intact because each row still comes from exactly
    /// one crafted window.
    pub temps: BTreeMap<usize, Vec<f64>>,
}

impl SeriesAttack {
    /// Attacked forecasts in scaled units, one per window.
    pub fn forecasts(&self) -> Vec<f64> {
        self.results.iter().map(|r| r.attacked_forecast).collect()
    }
}

/// Attacks chronologically ordered windows independently under one config
/// and merges the crafted temperature rows into a single timeline.
pub fn attack_series(
    method: &AttackMethod,
    windows: &[FeatureWindow],
    scaler: &Scaler,
    cfg: &AttackConfig,
) -> Result<SeriesAttack, AttackError> {
    let n_temp = scaler.temp_min.len();
    let mut results = Vec::with_capacity(windows.len());
    let mut temps = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        if i > 0 {
            assert!(
                windows[i - 1].target_idx < w.target_idx,
                "windows out of order at {i}: targets {} then {}",
                windows[i - 1].target_idx,
                w.target_idx
            );
        }
        let res = method.attack_window(w, scaler, cfg)?;
        for r in 0..res.x_adv.nrows() {
            let degs: Vec<f64> = (0..n_temp)
                .map(|s| scaler.unscale_temp(s, res.x_adv[[r, 1 + s]]))
                .collect();
            temps.insert(w.start + r, degs);
        }
        results.push(res);
    }
    Ok(SeriesAttack { results, temps })
}

/// Transfer attack: a substitute is trained on attacker-side data, windows
/// are attacked against the substitute with full gradient access, and the
/// target model is touched only to measure the result, twice per window.
pub struct TransferAttack {
    pub substitute: Net,
    pub results: Vec<AttackResult>,
    /// Target queries spent while crafting. Zero by construction; recorded
    /// so reports can prove it.
    pub crafting_queries: u64,
}

pub fn learn_and_attack(
    substitute_data: &[FeatureWindow],
    eval_windows: &[FeatureWindow],
    target: &QueryHandle,
    sub_cfg: &NetConfig,
    train_cfg: &TrainConfig,
    scaler: &Scaler,
    cfg: &AttackConfig,
) -> Result<TransferAttack, AttackError> {
    cfg.validate();
    let mut substitute = Net::new(sub_cfg)?;
    sgd_train(&mut substitute, substitute_data, train_cfg)?;
    let before = target.used();
    let crafted: Vec<AttackResult> = eval_windows
        .iter()
        .map(|w| whitebox_attack(&substitute, w, scaler, cfg))
        .collect::<Result<_, _>>()?;
    let crafting_queries = target.used() - before;
    let mut results = Vec::with_capacity(crafted.len());
    for mut res in crafted {
        // Forecasts are re-measured on the target; the best-iterate
        // guarantee holds on the substitute, transfer is what's on trial.
        res.clean_forecast = target.query(&res.clean.x)?;
        res.attacked_forecast = target.query(&res.x_adv)?;
        res.queries_used = 2;
        results.push(res);
    }
    Ok(TransferAttack {
        substitute,
        results,
        crafting_queries,
    })
}
