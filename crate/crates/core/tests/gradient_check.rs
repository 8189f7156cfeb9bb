//! Central-difference verification of every analytic gradient path.
//!
//! The attacks lean on exact input gradients and training leans on exact
//! parameter gradients, so both are checked against finite differences of
//! the forward pass: step 1e-4, relative error below 1e-4 on 200 randomly
//! probed coordinates per configuration.

use loadshed_core::neuralnet::{Activation, Arch, Net, NetConfig, OutputHead};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-4;
const TOL: f64 = 1e-4;
const PROBES: usize = 200;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1e-6, a.abs() + b.abs())
}

fn sample_x(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.0..1.0))
}

fn check_param_gradients(label: &str, net: &Net, x: &Array2<f64>, rng: &mut ChaCha8Rng) {
    let tape = net.forward_tape(x);
    let mut analytic = vec![0.0; net.n_params()];
    net.backward(&tape, 1.0, Some(&mut analytic));

    let base = net.params_flat();
    let mut probe_net = net.clone();
    for _ in 0..PROBES {
        let j = rng.random_range(0..base.len());
        let mut p = base.clone();
        p[j] = base[j] + STEP;
        probe_net.set_params_flat(&p);
        let up = probe_net.forward(x);
        p[j] = base[j] - STEP;
        probe_net.set_params_flat(&p);
        let dn = probe_net.forward(x);
        let numeric = (up - dn) / (2.0 * STEP);
        let err = rel_err(analytic[j], numeric);
        assert!(
            err < TOL,
            "{label}: param {j} analytic {} numeric {numeric} rel err {err}",
            analytic[j]
        );
    }
}

fn check_input_gradients(label: &str, net: &Net, x: &Array2<f64>, rng: &mut ChaCha8Rng) {
    let (_, analytic) = net.input_gradient(x);
    let (rows, cols) = (x.nrows(), x.ncols());
    for _ in 0..PROBES {
        let r = rng.random_range(0..rows);
        let c = rng.random_range(0..cols);
        let mut xp = x.clone();
        xp[[r, c]] = x[[r, c]] + STEP;
        let up = net.forward(&xp);
        xp[[r, c]] = x[[r, c]] - STEP;
        let dn = net.forward(&xp);
        let numeric = (up - dn) / (2.0 * STEP);
        let err = rel_err(analytic[[r, c]], numeric);
        assert!(
            err < TOL,
            "{label}: input ({r}, {c}) analytic {} numeric {numeric} rel err {err}",
            analytic[[r, c]]
        );
    }
}

fn run_checks(arch: Arch, activation: Activation, head: OutputHead, seed: u64) {
    let label = format!("{arch:?}/{activation:?}/{head:?}");
    let cfg = NetConfig {
        arch,
        activation,
        head,
        rows: 6,
        cols: 9,
        seed,
    };
    let net = Net::new(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let x = sample_x(&mut rng, 6, 9);
    check_param_gradients(&label, &net, &x, &mut rng);
    check_input_gradients(&label, &net, &x, &mut rng);
}

#[test]
fn feedforward_sigmoid_gradients() {
    run_checks(
        Arch::Feedforward {
            hidden: vec![16, 8],
        },
        Activation::Tanh,
        OutputHead::Sigmoid,
        31,
    );
}

#[test]
fn feedforward_linear_gradients() {
    run_checks(
        Arch::Feedforward {
            hidden: vec![12, 7, 5],
        },
        Activation::Sigmoid,
        OutputHead::Linear,
        32,
    );
}

// Relu is piecewise linear; central differences are exact away from the
// kinks and a random probe landing within 1e-4 of one is overwhelmingly
// unlikely at these scales.
#[test]
fn feedforward_relu_gradients() {
    run_checks(
        Arch::Feedforward {
            hidden: vec![14, 6],
        },
        Activation::Relu,
        OutputHead::Sigmoid,
        35,
    );
}

#[test]
fn recurrent_sigmoid_gradients() {
    run_checks(
        Arch::Recurrent {
            hidden: vec![10, 6],
        },
        Activation::Tanh,
        OutputHead::Sigmoid,
        33,
    );
}

#[test]
fn recurrent_linear_gradients() {
    run_checks(
        Arch::Recurrent { hidden: vec![9] },
        Activation::Tanh,
        OutputHead::Linear,
        34,
    );
}

/// A trained network must still pass the check; gradients are not only
/// valid at initialization.
#[test]
fn gradients_hold_after_training_steps() {
    use chrono::NaiveDate;
    use loadshed_core::dataio::FeatureWindow;
    use loadshed_core::neuralnet::{sgd_train, TrainConfig};

    let cfg = NetConfig {
        arch: Arch::Recurrent { hidden: vec![8, 5] },
        activation: Activation::Tanh,
        head: OutputHead::Sigmoid,
        rows: 6,
        cols: 9,
        seed: 77,
    };
    let mut net = Net::new(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let windows: Vec<FeatureWindow> = (0..40)
        .map(|_| {
            let x = sample_x(&mut rng, 6, 9);
            FeatureWindow {
                target: 0.2 + 0.5 * x[[0, 1]],
                x,
                target_mw: 0.0,
                start: 0,
                target_idx: 0,
                target_time: NaiveDate::from_ymd_opt(2016, 11, 1)
                    .unwrap()
                    .and_hms_opt(0, 0, 0)
                    .unwrap(),
            }
        })
        .collect();
    sgd_train(
        &mut net,
        &windows,
        &TrainConfig {
            epochs: 5,
            lr: 0.2,
            batch: 8,
            seed: 79,
        },
    )
    .unwrap();
    let x = sample_x(&mut rng, 6, 9);
    check_param_gradients("trained recurrent", &net, &x, &mut rng);
    check_input_gradients("trained recurrent", &net, &x, &mut rng);
}
