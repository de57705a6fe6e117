//! Neural-gain adaptive sliding-mode state observers.
//!
//! This crate implements a software-sensor pipeline for nonlinear
//! discrete-time systems `x_{k+1} = f(x_k) + B u_k`, `y_k = h(x_k)`:
//!
//! * [`systems`] — benchmark continuous-time models, explicit Euler
//!   discretization, an RK4 reference integrator, and seeded noise injection.
//! * [`observer`] — the observer recursion
//!   `x̂_{k+1} = f(x̂_k) + L_k (y_k − ŷ_k) + B u_k + ν_k` with an adaptive
//!   sliding-mode correction `ν_k = −K̄_k · tanh(s_k)` lifted through the
//!   output structure.
//! * [`gainnet`] — the feedforward network that maps `[t, u, y]` to the
//!   time-varying gain matrix `L_k`, with an exact reverse pass.
//! * [`training`] — physics-constrained loss over an observer rollout,
//!   backpropagation through time, and Adam.
//! * [`metrics`] — MAE/RMSE/MSE/SMAPE and convergence-time statistics.
//! * [`diagnostics`] — finite-difference Jacobians, observability matrix
//!   rank, and observability Gramian spectra.
//!
//! The crate is `no_std`-compatible (requires `alloc`); disable default
//! features and enable `libm` for builds without the standard library.
//! All operations are deterministic under fixed seeds and single-threaded.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod diagnostics;
pub mod gainnet;
pub mod metrics;
pub mod observer;
pub mod systems;
pub mod training;

pub use nalgebra;
pub use nalgebra::{DMatrix, DVector};
