//! Small load forecasters with analytic gradients.
//!
//! Two architectures share one interface: a feedforward net over the
//! flattened window and a stack of tanh recurrent cells read out at the last
//! lag row. Both end in a scalar head, sigmoid by default so predictions
//! live in the scaled load range, linear when a raw output is wanted.
//! Feedforward hidden layers take a configurable activation; the recurrent
//! cell nonlinearity is fixed to tanh.
//!
//! Everything is written out by hand, forward passes and backward passes
//! alike, because the attacks need exact gradients with respect to the
//! *inputs*, not just the parameters, and both come out of the same tape.
//! Training is plain seeded SGD on the absolute error, whose subgradient is
//! the sign of the residual (zero at zero).

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{FeatureWindow, Scaler, WindowSpec};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint version {found}, expected {CHECKPOINT_VERSION}")]
    Version { found: u32 },
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("training diverged at epoch {epoch}: loss not finite")]
    Diverged { epoch: usize },
}

/// Hidden-layer nonlinearity for the feedforward family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
        }
    }

    /// da/dz expressed through the activation value; relu's subgradient at
    /// the kink is 0.
    fn deriv(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputHead {
    Sigmoid,
    Linear,
}

impl OutputHead {
    fn apply(self, z: f64) -> f64 {
        match self {
            OutputHead::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            OutputHead::Linear => z,
        }
    }

    /// dy/dz expressed through the output value.
    fn deriv(self, y: f64) -> f64 {
        match self {
            OutputHead::Sigmoid => y * (1.0 - y),
            OutputHead::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Arch {
    /// Hidden tanh layers over the flattened window.
    Feedforward { hidden: Vec<usize> },
    /// Stacked tanh recurrent cells over the lag rows.
    Recurrent { hidden: Vec<usize> },
}

impl Arch {
    pub fn feedforward_default() -> Arch {
        Arch::Feedforward {
            hidden: vec![512, 256, 128],
        }
    }

    pub fn recurrent_default() -> Arch {
        Arch::Recurrent {
            hidden: vec![64, 32],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetConfig {
    pub arch: Arch,
    /// Feedforward hidden nonlinearity; recurrent cells are always tanh.
    pub activation: Activation,
    pub head: OutputHead,
    /// Lag rows per window.
    pub rows: usize,
    /// Features per lag row.
    pub cols: usize,
    pub seed: u64,
}

fn glorot(rng: &mut ChaCha8Rng, fan_out: usize, fan_in: usize) -> Array2<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-a..a))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Dense {
    w: Array2<f64>,
    b: Array1<f64>,
}

impl Dense {
    fn new(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> Dense {
        Dense {
            w: glorot(rng, out, inp),
            b: Array1::zeros(out),
        }
    }

    fn out(&self) -> usize {
        self.w.nrows()
    }

    fn inp(&self) -> usize {
        self.w.ncols()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RnnCell {
    /// Input weights, hidden x in.
    wx: Array2<f64>,
    /// Recurrent weights, hidden x hidden.
    wh: Array2<f64>,
    b: Array1<f64>,
}

impl RnnCell {
    fn new(rng: &mut ChaCha8Rng, hidden: usize, inp: usize) -> RnnCell {
        RnnCell {
            wx: glorot(rng, hidden, inp),
            wh: glorot(rng, hidden, hidden),
            b: Array1::zeros(hidden),
        }
    }

    fn hidden(&self) -> usize {
        self.wx.nrows()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Body {
    Feedforward {
        layers: Vec<Dense>,
    },
    Recurrent {
        cells: Vec<RnnCell>,
        out_w: Array1<f64>,
        out_b: f64,
    },
}

/// A forecaster network. Input is always the `rows x cols` window matrix;
/// output is a scalar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Net {
    body: Body,
    act: Activation,
    head: OutputHead,
    rows: usize,
    cols: usize,
}

/// Cached forward pass, consumed by [`Net::backward`].
pub struct Tape {
    /// Feedforward: activations entering each layer (first is the flattened
    /// input). Recurrent: hidden states per (time, layer), plus the raw rows.
    ff_inputs: Vec<Array1<f64>>,
    rnn_h: Vec<Vec<Array1<f64>>>,
    rnn_x: Vec<Array1<f64>>,
    pub y: f64,
}

impl Net {
    pub fn new(cfg: &NetConfig) -> Result<Net, NetError> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        if cfg.rows == 0 || cfg.cols == 0 {
            return Err(NetError::BadShape(format!(
                "input is {} x {}",
                cfg.rows, cfg.cols
            )));
        }
        let body = match &cfg.arch {
            Arch::Feedforward { hidden } => {
                let mut layers = Vec::new();
                let mut inp = cfg.rows * cfg.cols;
                for (i, &h) in hidden.iter().enumerate() {
                    if h == 0 {
                        return Err(NetError::BadShape(format!("hidden layer {i} has size 0")));
                    }
                    layers.push(Dense::new(&mut rng, h, inp));
                    inp = h;
                }
                layers.push(Dense::new(&mut rng, 1, inp));
                Body::Feedforward { layers }
            }
            Arch::Recurrent { hidden } => {
                if hidden.is_empty() {
                    return Err(NetError::BadShape("recurrent stack has no cells".into()));
                }
                let mut cells = Vec::new();
                let mut inp = cfg.cols;
                for (i, &h) in hidden.iter().enumerate() {
                    if h == 0 {
                        return Err(NetError::BadShape(format!("recurrent cell {i} has size 0")));
                    }
                    cells.push(RnnCell::new(&mut rng, h, inp));
                    inp = h;
                }
                let out_w = glorot(&mut rng, 1, inp).row(0).to_owned();
                Body::Recurrent {
                    cells,
                    out_w,
                    out_b: 0.0,
                }
            }
        };
        Ok(Net {
            body,
            act: cfg.activation,
            head: cfg.head,
            rows: cfg.rows,
            cols: cfg.cols,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn head(&self) -> OutputHead {
        self.head
    }

    fn check_input(&self, x: &Array2<f64>) {
        assert_eq!(
            x.shape(),
            [self.rows, self.cols],
            "input shape {:?} does not match network ({}, {})",
            x.shape(),
            self.rows,
            self.cols
        );
    }

    pub fn forward(&self, x: &Array2<f64>) -> f64 {
        self.forward_tape(x).y
    }

    pub fn forward_tape(&self, x: &Array2<f64>) -> Tape {
        self.check_input(x);
        match &self.body {
            Body::Feedforward { layers } => {
                let flat: Array1<f64> = Array1::from_iter(x.iter().cloned());
                let mut inputs = vec![flat];
                for (i, l) in layers.iter().enumerate() {
                    let z = l.w.dot(inputs.last().unwrap()) + &l.b;
                    if i + 1 < layers.len() {
                        inputs.push(z.mapv(|v| self.act.apply(v)));
                    } else {
                        let y = self.head.apply(z[0]);
                        return Tape {
                            ff_inputs: inputs,
                            rnn_h: Vec::new(),
                            rnn_x: Vec::new(),
                            y,
                        };
                    }
                }
                unreachable!("network always has an output layer")
            }
            Body::Recurrent { cells, out_w, out_b } => {
                let rows: Vec<Array1<f64>> =
                    (0..self.rows).map(|r| x.row(r).to_owned()).collect();
                let mut h: Vec<Array1<f64>> =
                    cells.iter().map(|c| Array1::zeros(c.hidden())).collect();
                // rnn_h[t][l] is the state of cell l after consuming row t.
                let mut hist: Vec<Vec<Array1<f64>>> = Vec::with_capacity(self.rows);
                for row in &rows {
                    let mut inp = row.clone();
                    let mut level = Vec::with_capacity(cells.len());
                    for (l, c) in cells.iter().enumerate() {
                        let z = c.wx.dot(&inp) + c.wh.dot(&h[l]) + &c.b;
                        let hn = z.mapv(f64::tanh);
                        h[l] = hn.clone();
                        inp = hn.clone();
                        level.push(hn);
                    }
                    hist.push(level);
                }
                let z = out_w.dot(h.last().unwrap()) + out_b;
                Tape {
                    ff_inputs: Vec::new(),
                    rnn_h: hist,
                    rnn_x: rows,
                    y: self.head.apply(z),
                }
            }
        }
    }

    /// Number of scalar parameters; also the accumulator length for
    /// [`Net::backward`].
    pub fn n_params(&self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |s| n += s.len());
        n
    }

    pub fn for_each_param(&self, f: &mut dyn FnMut(&[f64])) {
        match &self.body {
            Body::Feedforward { layers } => {
                for l in layers {
                    f(l.w.as_slice().expect("contiguous"));
                    f(l.b.as_slice().expect("contiguous"));
                }
            }
            Body::Recurrent { cells, out_w, out_b } => {
                for c in cells {
                    f(c.wx.as_slice().expect("contiguous"));
                    f(c.wh.as_slice().expect("contiguous"));
                    f(c.b.as_slice().expect("contiguous"));
                }
                f(out_w.as_slice().expect("contiguous"));
                f(std::slice::from_ref(out_b));
            }
        }
    }

    pub fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        match &mut self.body {
            Body::Feedforward { layers } => {
                for l in layers {
                    f(l.w.as_slice_mut().expect("contiguous"));
                    f(l.b.as_slice_mut().expect("contiguous"));
                }
            }
            Body::Recurrent { cells, out_w, out_b } => {
                for c in cells {
                    f(c.wx.as_slice_mut().expect("contiguous"));
                    f(c.wh.as_slice_mut().expect("contiguous"));
                    f(c.b.as_slice_mut().expect("contiguous"));
                }
                f(out_w.as_slice_mut().expect("contiguous"));
                f(std::slice::from_mut(out_b));
            }
        }
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        self.for_each_param(&mut |s| v.extend_from_slice(s));
        v
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "parameter count mismatch");
        let mut off = 0;
        self.for_each_param_mut(&mut |s| {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        });
    }

    /// Gradient of the output with respect to the input window.
    pub fn input_gradient(&self, x: &Array2<f64>) -> (f64, Array2<f64>) {
        let tape = self.forward_tape(x);
        let y = tape.y;
        let gx = self.backward(&tape, 1.0, None);
        (y, gx)
    }

    /// Backpropagates `dy` (gradient at the scalar output). When `acc` is
    /// given, parameter gradients are added into it, laid out in
    /// [`Net::for_each_param`] order. Returns the input gradient.
    pub fn backward(&self, tape: &Tape, dy: f64, mut acc: Option<&mut [f64]>) -> Array2<f64> {
        if let Some(a) = acc.as_deref() {
            assert_eq!(a.len(), self.n_params(), "accumulator length mismatch");
        }
        let dz = dy * self.head.deriv(tape.y);
        match &self.body {
            Body::Feedforward { layers } => {
                // Offsets of each layer's w and b inside the accumulator.
                let mut offsets = Vec::with_capacity(layers.len());
                let mut off = 0;
                for l in layers {
                    offsets.push(off);
                    off += l.out() * l.inp() + l.out();
                }
                let mut delta = Array1::from_elem(1, dz);
                let mut input_grad = Array1::zeros(0);
                for (i, l) in layers.iter().enumerate().rev() {
                    let a_in = &tape.ff_inputs[i];
                    if let Some(acc) = acc.as_deref_mut() {
                        let base = offsets[i];
                        let (gw, gb) = acc[base..base + l.out() * l.inp() + l.out()]
                            .split_at_mut(l.out() * l.inp());
                        accumulate_outer(gw, delta.as_slice().unwrap(), a_in.as_slice().unwrap());
                        for (g, d) in gb.iter_mut().zip(delta.iter()) {
                            *g += d;
                        }
                    }
                    let back = l.w.t().dot(&delta);
                    if i > 0 {
                        // a_in is the previous layer's activation output.
                        delta = &back * &a_in.mapv(|a| self.act.deriv(a));
                    } else {
                        input_grad = back;
                    }
                }
                Array2::from_shape_vec((self.rows, self.cols), input_grad.to_vec())
                    .expect("flat gradient matches input shape")
            }
            Body::Recurrent { cells, out_w, .. } => {
                let nl = cells.len();
                let mut offsets = Vec::with_capacity(nl);
                let mut off = 0;
                for c in cells {
                    offsets.push(off);
                    off += c.wx.len() + c.wh.len() + c.b.len();
                }
                let out_w_off = off;

                // Gradient flowing into each cell's state from time t+1.
                let mut dh_next: Vec<Array1<f64>> =
                    cells.iter().map(|c| Array1::zeros(c.hidden())).collect();
                dh_next[nl - 1] = out_w * dz;
                if let Some(acc) = acc.as_deref_mut() {
                    let h_last = &tape.rnn_h[self.rows - 1][nl - 1];
                    let gw = &mut acc[out_w_off..out_w_off + out_w.len()];
                    for (g, h) in gw.iter_mut().zip(h_last.iter()) {
                        *g += dz * h;
                    }
                    acc[out_w_off + out_w.len()] += dz;
                }

                let mut input_grad = Array2::zeros((self.rows, self.cols));
                for t in (0..self.rows).rev() {
                    // Gradient arriving from the cell above at this time step.
                    let mut from_above: Option<Array1<f64>> = None;
                    for l in (0..nl).rev() {
                        let mut dh = std::mem::replace(
                            &mut dh_next[l],
                            Array1::zeros(cells[l].hidden()),
                        );
                        if let Some(fa) = from_above.take() {
                            dh += &fa;
                        }
                        let h = &tape.rnn_h[t][l];
                        let delta = &dh * &h.mapv(|v| 1.0 - v * v);
                        let inp = if l == 0 {
                            &tape.rnn_x[t]
                        } else {
                            &tape.rnn_h[t][l - 1]
                        };
                        if let Some(acc) = acc.as_deref_mut() {
                            let c = &cells[l];
                            let base = offsets[l];
                            let (gwx, rest) =
                                acc[base..base + c.wx.len() + c.wh.len() + c.b.len()]
                                    .split_at_mut(c.wx.len());
                            let (gwh, gb) = rest.split_at_mut(c.wh.len());
                            accumulate_outer(
                                gwx,
                                delta.as_slice().unwrap(),
                                inp.as_slice().unwrap(),
                            );
                            let h_prev = if t == 0 {
                                None
                            } else {
                                Some(&tape.rnn_h[t - 1][l])
                            };
                            if let Some(hp) = h_prev {
                                accumulate_outer(
                                    gwh,
                                    delta.as_slice().unwrap(),
                                    hp.as_slice().unwrap(),
                                );
                            }
                            for (g, d) in gb.iter_mut().zip(delta.iter()) {
                                *g += d;
                            }
                        }
                        if t > 0 {
                            dh_next[l] = cells[l].wh.t().dot(&delta);
                        }
                        let down = cells[l].wx.t().dot(&delta);
                        if l == 0 {
                            let mut row = input_grad.row_mut(t);
                            row += &down;
                        } else {
                            from_above = Some(down);
                        }
                    }
                }
                input_grad
            }
        }
    }
}

/// gw[r, c] += delta[r] * a[c] over a row-major flat buffer.
fn accumulate_outer(gw: &mut [f64], delta: &[f64], a: &[f64]) {
    debug_assert_eq!(gw.len(), delta.len() * a.len());
    for (r, &d) in delta.iter().enumerate() {
        let row = &mut gw[r * a.len()..(r + 1) * a.len()];
        for (g, &v) in row.iter_mut().zip(a) {
            *g += d * v;
        }
    }
}

fn l1_sign(residual: f64) -> f64 {
    if residual > 0.0 {
        1.0
    } else if residual < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Step size; zero is legal and leaves the model untouched.
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Published per-family schedules: 20 epochs feedforward, 30 recurrent.
    pub fn for_arch(arch: &Arch) -> TrainConfig {
        let epochs = match arch {
            Arch::Feedforward { .. } => 20,
            Arch::Recurrent { .. } => 30,
        };
        TrainConfig {
            epochs,
            lr: 0.2,
            batch: 32,
            seed: 1,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::for_arch(&Arch::feedforward_default())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainStats {
    /// Mean absolute error (scaled units) per epoch, measured as trained.
    pub epoch_mae: Vec<f64>,
}

/// Seeded minibatch SGD on absolute error.
pub fn sgd_train(
    net: &mut Net,
    windows: &[FeatureWindow],
    cfg: &TrainConfig,
) -> Result<TrainStats, NetError> {
    assert!(!windows.is_empty(), "no training windows");
    assert!(
        cfg.batch >= 1 && cfg.epochs >= 1 && cfg.lr >= 0.0,
        "bad train config: epochs {}, lr {}, batch {}",
        cfg.epochs,
        cfg.lr,
        cfg.batch
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut idx: Vec<usize> = (0..windows.len()).collect();
    let mut acc = vec![0.0; net.n_params()];
    let mut epoch_mae = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        // Fisher-Yates shuffle.
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let mut abs_sum = 0.0;
        for chunk in idx.chunks(cfg.batch) {
            acc.fill(0.0);
            for &i in chunk {
                let w = &windows[i];
                let tape = net.forward_tape(&w.x);
                let r = tape.y - w.target;
                abs_sum += r.abs();
                net.backward(&tape, l1_sign(r), Some(&mut acc));
            }
            let step = cfg.lr / chunk.len() as f64;
            let mut off = 0;
            net.for_each_param_mut(&mut |s| {
                for v in s.iter_mut() {
                    *v -= step * acc[off];
                    off += 1;
                }
            });
        }
        let mae = abs_sum / windows.len() as f64;
        if !mae.is_finite() {
            return Err(NetError::Diverged { epoch });
        }
        epoch_mae.push(mae);
    }
    Ok(TrainStats { epoch_mae })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Mean absolute error in scaled units.
    pub mae_scaled: f64,
    /// Mean absolute percentage error on megawatts.
    pub mape_pct: f64,
    pub n: usize,
}

pub fn evaluate(net: &Net, windows: &[FeatureWindow], scaler: &Scaler) -> EvalMetrics {
    assert!(!windows.is_empty(), "no evaluation windows");
    let mut mae = 0.0;
    let mut mape = 0.0;
    for w in windows {
        let y = net.forward(&w.x);
        mae += (y - w.target).abs();
        let mw = scaler.unscale_load(y);
        mape += ((mw - w.target_mw) / w.target_mw.max(1e-9)).abs();
    }
    let n = windows.len() as f64;
    EvalMetrics {
        mae_scaled: mae / n,
        mape_pct: 100.0 * mape / n,
        n: windows.len(),
    }
}

/// A trained model bundled with everything needed to use it: the scaler that
/// defined its input space and the window geometry it expects.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Forecaster {
    pub version: u32,
    pub net: Net,
    pub scaler: Scaler,
    pub spec: WindowSpec,
}

impl Forecaster {
    pub fn new(net: Net, scaler: Scaler, spec: WindowSpec) -> Forecaster {
        Forecaster {
            version: CHECKPOINT_VERSION,
            net,
            scaler,
            spec,
        }
    }

    pub fn predict_scaled(&self, x: &Array2<f64>) -> f64 {
        self.net.forward(x)
    }

    pub fn predict_mw(&self, x: &Array2<f64>) -> f64 {
        self.scaler.unscale_load(self.net.forward(x))
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Forecaster, NetError> {
        let text = std::fs::read_to_string(path)?;
        // Check the version before insisting on the full schema.
        #[derive(Deserialize)]
        struct Probe {
            version: u32,
        }
        let probe: Probe = serde_json::from_str(&text)?;
        if probe.version != CHECKPOINT_VERSION {
            return Err(NetError::Version {
                found: probe.version,
            });
        }
        Ok(serde_json::from_str(&text)?)
    }
}
