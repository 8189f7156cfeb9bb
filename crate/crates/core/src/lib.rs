//! Load-forecast manipulation and its effect on day-ahead unit commitment
//! and real-time dispatch, at desk scale.
//!
//! The crate is organized bottom-up:
//!
//! * [`milp`] - a self-contained dense LP/MILP solver (bounded-variable
//!   two-phase simplex plus branch and bound),
//! * [`grid`] - network cases and DC power-flow constraint blocks,
//! * [`dataio`] - load/weather records, scaling, feature windows and a
//!   synthetic data generator,
//! * [`neuralnet`] - small feedforward and recurrent forecasters with
//!   analytic gradients,
//! * [`attacks`] - white-box and query-based input perturbation attacks
//!   against a forecaster,
//! * [`operations`] - the day-ahead commitment MILP and the sequential
//!   real-time dispatch LPs,
//! * [`strategy`] - node selection and attack orchestration against the
//!   commitment stage,
//! * [`experiment`] - end-to-end runs, reports and plots shared by the CLI
//!   and the test suites.

pub mod attack;
pub mod dataio;
pub mod grid;
pub mod milp;
pub mod neuralnet;
pub mod operations;
