//! Observer recursion with adaptive sliding-mode correction.
//!
//! Each step applies
//!
//! ```text
//! x̂_{k+1} = f(x̂_k) + dt·B·u_k + L_k·s_k + ν_k ,   s_k = y_k − h(x̂_k)
//! ν_k = −K̄_k · Hᵀ · tanh(s_k) ,                   K̄_k = K₀ + α‖s_k‖²
//! ```
//!
//! where `f` is the Euler-discretized drift and `H` is the model's 0/1
//! output-structure pattern. The structural lift `Hᵀ` injects the correction
//! only into measured state directions, so for `m < n` unmeasured channels
//! receive no direct sliding-mode action.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::systems::{euler_step, Projection, SystemModel, Trajectory};

/// Any estimate component beyond this magnitude aborts the run; training
/// loops must fail fast instead of propagating infinities.
pub const DIVERGENCE_GUARD: f64 = 1e9;

#[derive(Debug, Error)]
pub enum ObserverError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("observer diverged at step {step}: estimate exceeded {DIVERGENCE_GUARD:e} or went non-finite")]
    Diverged { step: usize },
    #[error("invalid SMC configuration: {0}")]
    InvalidConfig(&'static str),
}

/// Sliding-mode constants: base gain `K₀ > 0` and error scaling `α ≥ 0`.
///
/// The adaptive gain `K̄ = K₀ + α‖s‖²` never drops below `K₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmcConfig {
    pub k0: f64,
    pub alpha: f64,
}

impl SmcConfig {
    pub fn new(k0: f64, alpha: f64) -> Result<Self, ObserverError> {
        if !(k0 > 0.0) {
            return Err(ObserverError::InvalidConfig("base gain K0 must be > 0"));
        }
        if !(alpha >= 0.0) {
            return Err(ObserverError::InvalidConfig("alpha must be >= 0"));
        }
        Ok(SmcConfig { k0, alpha })
    }

    /// Adaptive gain `K̄ = K₀ + α‖s‖²`.
    pub fn adaptive_gain(&self, s: &DVector<f64>) -> f64 {
        self.k0 + self.alpha * s.norm_squared()
    }
}

/// Full per-step observer state, kept for inspection and logging.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub xhat: DVector<f64>,
    pub step: usize,
    pub last_surface: DVector<f64>,
    pub last_gain: DMatrix<f64>,
    pub last_smc: DVector<f64>,
}

impl ObserverState {
    /// Initial state at step 0 with zeroed diagnostics.
    pub fn new(xhat0: DVector<f64>, n: usize, m: usize) -> Self {
        ObserverState {
            xhat: xhat0,
            step: 0,
            last_surface: DVector::zeros(m),
            last_gain: DMatrix::zeros(n, m),
            last_smc: DVector::zeros(n),
        }
    }
}

/// Sliding surface `s = y − ŷ`.
pub fn sliding_surface(
    y: &DVector<f64>,
    yhat: &DVector<f64>,
) -> Result<DVector<f64>, ObserverError> {
    if y.len() != yhat.len() {
        return Err(ObserverError::DimensionMismatch {
            what: "sliding surface",
            expected: y.len(),
            got: yhat.len(),
        });
    }
    Ok(y - yhat)
}

/// Sliding-mode correction `ν = −K̄ · Hᵀ · tanh(s)` lifted into state space
/// through the output-structure pattern `H` (m×n).
///
/// Every component satisfies `|ν_i| ≤ K̄` for 0/1 selection patterns, and the
/// map is odd in `s`.
pub fn smc_correction(
    s: &DVector<f64>,
    cfg: &SmcConfig,
    output_structure: &DMatrix<f64>,
) -> DVector<f64> {
    let kbar = cfg.adaptive_gain(s);
    let tanh_s = s.map(|v| v.tanh());
    output_structure.transpose() * tanh_s * (-kbar)
}

/// One observer update against a measured output.
///
/// The prediction term reuses [`euler_step`], so with zero gain and zero
/// surface the update is bitwise identical to the open-loop simulation. The
/// optional projection is applied last.
#[allow(clippy::too_many_arguments)]
pub fn observer_step(
    model: &SystemModel,
    state: &ObserverState,
    gain: &DMatrix<f64>,
    y_meas: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
    cfg: &SmcConfig,
    projection: Option<Projection>,
) -> Result<ObserverState, ObserverError> {
    let n = model.state_dim();
    let m = model.output_dim();
    if gain.nrows() != n || gain.ncols() != m {
        return Err(ObserverError::DimensionMismatch {
            what: "gain matrix",
            expected: n * m,
            got: gain.nrows() * gain.ncols(),
        });
    }
    let yhat = model.output(&state.xhat);
    let s = sliding_surface(y_meas, &yhat)?;
    let nu = smc_correction(&s, cfg, model.output_structure());

    let mut next = euler_step(model, &state.xhat, u, dt)
        .map_err(|_| ObserverError::Diverged { step: state.step })?;
    next += gain * &s;
    next += &nu;
    if let Some(proj) = projection {
        proj.apply(&mut next);
    }

    if !next.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_GUARD) {
        return Err(ObserverError::Diverged { step: state.step });
    }

    Ok(ObserverState {
        xhat: next,
        step: state.step + 1,
        last_surface: s,
        last_gain: gain.clone(),
        last_smc: nu,
    })
}

/// Replays the observer over the measured outputs of `traj`, returning the
/// estimated trajectory aligned to the same time grid.
///
/// `gain_provider` maps `(t, u, y)` to the gain matrix for that step; the
/// trained network, a constant-gain baseline, and test doubles all fit this
/// signature.
pub fn run_observer<F>(
    model: &SystemModel,
    traj: &Trajectory,
    gain_provider: F,
    xhat0: &DVector<f64>,
    cfg: &SmcConfig,
    projection: Option<Projection>,
) -> Result<Trajectory, ObserverError>
where
    F: Fn(f64, &DVector<f64>, &DVector<f64>) -> DMatrix<f64>,
{
    let n = model.state_dim();
    let m = model.output_dim();
    if xhat0.len() != n {
        return Err(ObserverError::DimensionMismatch {
            what: "initial estimate",
            expected: n,
            got: xhat0.len(),
        });
    }

    let len = traj.times.len();
    let mut est = Trajectory {
        times: traj.times.clone(),
        states: Vec::with_capacity(len),
        outputs: Vec::with_capacity(len),
        inputs: traj.inputs.clone(),
    };

    let dt = traj.dt();
    let mut state = ObserverState::new(xhat0.clone(), n, m);
    for k in 0..len {
        est.states.push(state.xhat.clone());
        est.outputs.push(model.output(&state.xhat));
        if k + 1 < len {
            let t = traj.times[k];
            let gain = gain_provider(t, &traj.inputs[k], &traj.outputs[k]);
            state = observer_step(
                model,
                &state,
                &gain,
                &traj.outputs[k],
                &traj.inputs[k],
                dt,
                cfg,
                projection,
            )
            .map_err(|e| match e {
                ObserverError::Diverged { .. } => ObserverError::Diverged { step: k },
                other => other,
            })?;
        }
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{builtin_model, simulate, NoiseSpec};
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smc5() -> SmcConfig {
        SmcConfig::new(5.0, 0.01).unwrap()
    }

    #[test]
    fn surface_is_componentwise_difference() {
        assert_eq!(
            sliding_surface(&dvector![3.0], &dvector![1.0]).unwrap(),
            dvector![2.0]
        );
        assert_eq!(
            sliding_surface(&dvector![1.0, 0.0], &dvector![0.0, 1.0]).unwrap(),
            dvector![1.0, -1.0]
        );
        let y = dvector![1.0];
        assert_eq!(sliding_surface(&y, &y).unwrap(), dvector![0.0]);
        assert!(sliding_surface(&dvector![1.0], &dvector![1.0, 2.0]).is_err());
    }

    #[test]
    fn smc_zero_surface_gives_zero_correction() {
        let h = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let cfg = smc5();
        let nu = smc_correction(&dvector![0.0], &cfg, &h);
        assert_eq!(nu, dvector![0.0, 0.0, 0.0]);
        assert_eq!(cfg.adaptive_gain(&dvector![0.0]), 5.0);
    }

    #[test]
    fn smc_hand_value_at_s_ten() {
        let h = DMatrix::from_row_slice(1, 1, &[1.0]);
        let cfg = smc5();
        let s = dvector![10.0];
        assert!((cfg.adaptive_gain(&s) - 6.0).abs() < 1e-15);
        let nu = smc_correction(&s, &cfg, &h);
        assert!((nu[0] - (-6.0 * 10.0f64.tanh())).abs() < 1e-15);
    }

    #[test]
    fn smc_opposes_surface_and_is_odd() {
        let h = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]);
        let cfg = smc5();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let s = dvector![rng.random_range(-20.0..20.0)];
            let nu = smc_correction(&s, &cfg, &h);
            let neg = smc_correction(&(-&s), &cfg, &h);
            assert_eq!(neg, -&nu);
            if s[0] != 0.0 {
                assert_eq!(nu[1].signum(), -s[0].signum());
            }
            // Bounded by the adaptive gain; only the measured channel moves.
            let kbar = cfg.adaptive_gain(&s);
            assert!(nu.amax() <= kbar);
            assert_eq!(nu[0], 0.0);
            assert_eq!(nu[2], 0.0);
        }
    }

    #[test]
    fn adaptation_is_strictly_monotone_in_surface_norm() {
        let cfg = smc5();
        let mut last = 0.0;
        for mag in [0.1, 0.5, 1.0, 4.0, 16.0] {
            let k = cfg.adaptive_gain(&dvector![mag]);
            assert!(k > last);
            last = k;
        }
    }

    #[test]
    fn smc_config_validation() {
        assert!(SmcConfig::new(0.0, 0.1).is_err());
        assert!(SmcConfig::new(-1.0, 0.1).is_err());
        assert!(SmcConfig::new(1.0, -0.1).is_err());
        assert!(SmcConfig::new(1.0, 0.0).is_ok());
    }

    #[test]
    fn step_applies_smc_even_with_zero_gain() {
        let model = builtin_model("harmonic").unwrap();
        let state = ObserverState::new(dvector![1.0, 1.0, 2.0], 3, 1);
        let zero_gain = DMatrix::zeros(3, 1);
        let u = DVector::zeros(0);
        let next = observer_step(
            &model,
            &state,
            &zero_gain,
            &dvector![2.0],
            &u,
            0.001,
            &smc5(),
            None,
        )
        .unwrap();
        // Surface = 2 − 1 = 1; correction pushes channel 1 by −K̄ tanh(1).
        assert!(next.last_smc[0] != 0.0);
        assert_eq!(next.last_surface, dvector![1.0]);
        assert_eq!(next.step, 1);
    }

    #[test]
    fn step_with_matched_output_is_open_loop_euler() {
        let model = builtin_model("harmonic").unwrap();
        let x = dvector![2.0, -1.0, 3.0];
        let state = ObserverState::new(x.clone(), 3, 1);
        let gain = DMatrix::from_row_slice(3, 1, &[0.3, 0.2, 0.1]);
        let u = DVector::zeros(0);
        let y = model.output(&x);
        let next = observer_step(&model, &state, &gain, &y, &u, 0.001, &smc5(), None).unwrap();
        let open_loop = euler_step(&model, &x, &u, 0.001).unwrap();
        assert_eq!(next.xhat, open_loop);
    }

    #[test]
    fn projection_clamps_estimates() {
        let model = builtin_model("three_tank").unwrap();
        let state = ObserverState::new(dvector![0.0, 0.0, 1e-4], 3, 1);
        // A gain pushing the measured channel strongly negative.
        let gain = DMatrix::from_row_slice(3, 1, &[5.0, 5.0, 5.0]);
        let u = dvector![0.0, 0.0];
        let next = observer_step(
            &model,
            &state,
            &gain,
            &dvector![-2.0],
            &u,
            0.01,
            &smc5(),
            Some(Projection::NonNegative),
        )
        .unwrap();
        assert!(next.xhat.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn divergence_guard_trips() {
        let model = builtin_model("harmonic").unwrap();
        let state = ObserverState::new(dvector![1.0, 0.0, 1.0], 3, 1);
        let gain = DMatrix::from_row_slice(3, 1, &[1e12, 0.0, 0.0]);
        let u = DVector::zeros(0);
        let err = observer_step(
            &model,
            &state,
            &gain,
            &dvector![5.0],
            &u,
            0.001,
            &smc5(),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, ObserverError::Diverged { step: 0 }));
    }

    #[test]
    fn zero_gain_matched_start_tracks_truth_bitwise() {
        // With x̂0 = x0 and no noise the surface stays zero, so the observer
        // recursion collapses to the simulation recursion exactly.
        let model = builtin_model("reverse_duffing").unwrap();
        let x0 = dvector![0.8, -0.3];
        let traj = simulate(&model, &x0, 0.01, 5.0, &NoiseSpec::none()).unwrap();
        let est = run_observer(
            &model,
            &traj,
            |_, _, _| DMatrix::zeros(2, 1),
            &x0,
            &smc5(),
            None,
        )
        .unwrap();
        assert_eq!(est.states, traj.states);
    }

    #[test]
    fn run_observer_aligns_times_and_reports_divergence_step() {
        let model = builtin_model("harmonic").unwrap();
        let traj = simulate(
            &model,
            &dvector![2.0, -1.0, 3.0],
            0.01,
            1.0,
            &NoiseSpec::none(),
        )
        .unwrap();
        let est = run_observer(
            &model,
            &traj,
            |_, _, _| DMatrix::zeros(3, 1),
            &dvector![1.0, 1.0, 2.0],
            &smc5(),
            None,
        )
        .unwrap();
        assert_eq!(est.times, traj.times);
        assert_eq!(est.len(), traj.len());

        let err = run_observer(
            &model,
            &traj,
            |_, _, _| DMatrix::from_row_slice(3, 1, &[1e30, 0.0, 0.0]),
            &dvector![1.0, 1.0, 2.0],
            &smc5(),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, ObserverError::Diverged { .. }));
    }

    #[test]
    fn projection_is_idempotent_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let mut x = DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0));
            Projection::NonNegative.apply(&mut x);
            let once = x.clone();
            Projection::NonNegative.apply(&mut x);
            assert_eq!(x, once);
        }
    }
}
