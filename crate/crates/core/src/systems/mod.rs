//! Benchmark system models, Euler discretization, and trajectory simulation.
//!
//! A [`SystemModel`] describes a continuous-time plant `ẋ = f_c(x) + B u(t)`,
//! `y = h(x)`. Explicit Euler with step `dt` turns it into the discrete form
//! `x_{k+1} = f(x_k) + dt·B·u_k` with `f(x) = x + dt·f_c(x)`, which is the
//! form the observer and the training loss operate on.

mod benchmarks;

pub use benchmarks::{builtin_model, square_wave_control, three_tank_model, ThreeTankParams};

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Vector field or output map evaluated at a state.
pub type StateFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
/// Jacobian of a state function.
pub type StateJacobianFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// Control signal as a function of time in seconds.
pub type ControlFn = Box<dyn Fn(f64) -> DVector<f64> + Send + Sync>;
/// Returns a description of the violated singular set, if `x` lies on one.
pub type SingularCheckFn = Box<dyn Fn(&DVector<f64>) -> Option<String> + Send + Sync>;

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("integration diverged at step {step}: non-finite state")]
    IntegrationDiverged { step: usize },
    #[error("horizon {horizon} s is not a positive integer multiple of dt = {dt} s")]
    InvalidHorizon { horizon: f64, dt: f64 },
    #[error("unknown benchmark model `{0}`")]
    UnknownModel(String),
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Where stochastic perturbations enter a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseTarget {
    /// `y_k = h(x_k) + w_k`
    Measurement,
    /// `x_{k+1} = f(x_k) + dt·B·u_k + dt·w_k`
    Process,
    /// Noise-free.
    None,
}

/// Zero-mean Gaussian perturbation `w ~ N(0, 1) · stddev_scale`, seeded.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    pub target: NoiseTarget,
    pub stddev_scale: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec {
            target: NoiseTarget::None,
            stddev_scale: 0.0,
            seed: 0,
        }
    }

    pub fn measurement(stddev_scale: f64, seed: u64) -> Self {
        NoiseSpec {
            target: NoiseTarget::Measurement,
            stddev_scale,
            seed,
        }
    }

    pub fn process(stddev_scale: f64, seed: u64) -> Self {
        NoiseSpec {
            target: NoiseTarget::Process,
            stddev_scale,
            seed,
        }
    }

    fn is_active(&self) -> bool {
        self.target != NoiseTarget::None && self.stddev_scale != 0.0
    }
}

/// State constraint applied after an integration or observer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    /// Componentwise `max(x_i, 0)`, e.g. tank levels.
    NonNegative,
}

impl Projection {
    pub fn apply(&self, x: &mut DVector<f64>) {
        match self {
            Projection::NonNegative => {
                for v in x.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
    }
}

/// A benchmark plant: drift, output map, input matrix, and dimensions.
///
/// `drift` returns the continuous-time rate `f_c(x)` (units 1/s); the
/// discrete map of the governing system is `f(x) = x + dt·f_c(x)`.
/// `output_structure` is the 0/1 selection/summation pattern of `h`, used by
/// the observer to lift the sliding-mode correction from output space into
/// state space.
pub struct SystemModel {
    name: String,
    n: usize,
    m: usize,
    p: usize,
    drift: StateFn,
    output_map: StateFn,
    input_matrix: DMatrix<f64>,
    control: ControlFn,
    output_structure: DMatrix<f64>,
    drift_jacobian: Option<StateJacobianFn>,
    output_jacobian: Option<StateJacobianFn>,
    singular_check: Option<SingularCheckFn>,
}

impl core::fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("p", &self.p)
            .finish()
    }
}

impl SystemModel {
    /// Builds a model from its parts. `p` may be zero (autonomous system);
    /// `n` and `m` must be at least one and `input_matrix` must be `n × p`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        n: usize,
        m: usize,
        drift: StateFn,
        output_map: StateFn,
        input_matrix: DMatrix<f64>,
        output_structure: DMatrix<f64>,
    ) -> Result<Self, SystemError> {
        if n == 0 || m == 0 {
            return Err(SystemError::InvalidParameter(
                "state and output dimensions must be at least 1".into(),
            ));
        }
        if input_matrix.nrows() != n {
            return Err(SystemError::DimensionMismatch {
                what: "input matrix rows",
                expected: n,
                got: input_matrix.nrows(),
            });
        }
        if output_structure.nrows() != m || output_structure.ncols() != n {
            return Err(SystemError::InvalidParameter(
                "output structure must be m x n".into(),
            ));
        }
        let p = input_matrix.ncols();
        Ok(SystemModel {
            name: name.into(),
            n,
            m,
            p,
            drift,
            output_map,
            input_matrix,
            control: Box::new(move |_| DVector::zeros(p)),
            output_structure,
            drift_jacobian: None,
            output_jacobian: None,
            singular_check: None,
        })
    }

    pub fn with_control(mut self, control: ControlFn) -> Self {
        self.control = control;
        self
    }

    pub fn with_jacobians(mut self, drift: StateJacobianFn, output: StateJacobianFn) -> Self {
        self.drift_jacobian = Some(drift);
        self.output_jacobian = Some(output);
        self
    }

    pub fn with_singular_check(mut self, check: SingularCheckFn) -> Self {
        self.singular_check = Some(check);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn state_dim(&self) -> usize {
        self.n
    }
    pub fn output_dim(&self) -> usize {
        self.m
    }
    pub fn input_dim(&self) -> usize {
        self.p
    }
    pub fn input_matrix(&self) -> &DMatrix<f64> {
        &self.input_matrix
    }
    pub fn output_structure(&self) -> &DMatrix<f64> {
        &self.output_structure
    }

    /// Continuous-time rate `f_c(x)`.
    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.drift)(x)
    }

    /// Output map `h(x)`.
    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.output_map)(x)
    }

    /// Control input `u(t)`.
    pub fn control(&self, t: f64) -> DVector<f64> {
        (self.control)(t)
    }

    /// Analytic `∂f_c/∂x`, when the model provides one.
    pub fn drift_jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.drift_jacobian.as_ref().map(|j| j(x))
    }

    /// Analytic `∂h/∂x`, when the model provides one.
    pub fn output_jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.output_jacobian.as_ref().map(|j| j(x))
    }

    /// Describes the declared singular set containing `x`, if any.
    pub fn singular_at(&self, x: &DVector<f64>) -> Option<String> {
        self.singular_check.as_ref().and_then(|c| c(x))
    }
}

/// Time-indexed state, output, and input samples with uniform step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl Trajectory {
    /// Number of samples (`N + 1` for `N` integration steps).
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Uniform step inferred from the first two samples.
    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// Final sample time.
    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("empty trajectory")
    }

    /// Checks sample counts, dimensions, and step uniformity (1e-12 relative).
    pub fn validate(&self) -> Result<(), SystemError> {
        let len = self.times.len();
        if len < 2 {
            return Err(SystemError::InvalidParameter(
                "trajectory needs at least two samples".into(),
            ));
        }
        for (what, got) in [
            ("states", self.states.len()),
            ("outputs", self.outputs.len()),
            ("inputs", self.inputs.len()),
        ] {
            if got != len {
                return Err(SystemError::DimensionMismatch {
                    what,
                    expected: len,
                    got,
                });
            }
        }
        let dt = self.dt();
        if dt <= 0.0 {
            return Err(SystemError::InvalidParameter("non-increasing times".into()));
        }
        for k in 1..len {
            let step = self.times[k] - self.times[k - 1];
            if (step - dt).abs() > 1e-12 * dt.max(1.0) {
                return Err(SystemError::InvalidParameter(
                    "time grid is not uniformly spaced".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Number of steps `N` such that `horizon = N·dt`, within 1e-9 relative.
pub fn steps_for_horizon(horizon: f64, dt: f64) -> Result<usize, SystemError> {
    if !(dt > 0.0) || !(horizon > 0.0) {
        return Err(SystemError::InvalidHorizon { horizon, dt });
    }
    let ratio = horizon / dt;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
        return Err(SystemError::InvalidHorizon { horizon, dt });
    }
    Ok(n as usize)
}

/// One explicit Euler step: `x + dt·(f_c(x) + B·u)`.
///
/// This defines the discrete map of the governing system,
/// `f(x) = x + dt·f_c(x)`, with the input entering as `dt·B·u`.
pub fn euler_step(
    model: &SystemModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>, SystemError> {
    let mut rate = model.drift(x);
    if model.p > 0 {
        rate += &model.input_matrix * u;
    }
    let next = x + rate * dt;
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(SystemError::IntegrationDiverged { step: 0 })
    }
}

/// Simulates the discrete system by rolling [`euler_step`] from `x0`.
///
/// Noise draws come from a ChaCha generator seeded by `noise.seed`, in fixed
/// order: one `m`-vector per sample for measurement noise, or one `n`-vector
/// per transition for process noise. With `stddev_scale = 0` no draws are
/// consumed and the result is bitwise reproducible.
pub fn simulate(
    model: &SystemModel,
    x0: &DVector<f64>,
    dt: f64,
    horizon: f64,
    noise: &NoiseSpec,
) -> Result<Trajectory, SystemError> {
    simulate_with_projection(model, x0, dt, horizon, noise, None)
}

/// [`simulate`] with an optional state constraint applied after every step,
/// e.g. the non-negativity of tank levels under pumped inflow.
pub fn simulate_with_projection(
    model: &SystemModel,
    x0: &DVector<f64>,
    dt: f64,
    horizon: f64,
    noise: &NoiseSpec,
    projection: Option<Projection>,
) -> Result<Trajectory, SystemError> {
    let steps = steps_for_horizon(horizon, dt)?;
    if x0.len() != model.n {
        return Err(SystemError::DimensionMismatch {
            what: "initial state",
            expected: model.n,
            got: x0.len(),
        });
    }
    if noise.stddev_scale < 0.0 {
        return Err(SystemError::InvalidParameter(
            "noise stddev_scale must be nonnegative".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let active = noise.is_active();
    let mut gauss = |dim: usize, rng: &mut ChaCha8Rng| -> DVector<f64> {
        DVector::from_iterator(
            dim,
            (0..dim).map(|_| {
                let w: f64 = StandardNormal.sample(rng);
                w * noise.stddev_scale
            }),
        )
    };

    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        outputs: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps + 1),
    };

    let mut x = x0.clone();
    for k in 0..=steps {
        let t = k as f64 * dt;
        let u = model.control(t);
        let mut y = model.output(&x);
        if active && noise.target == NoiseTarget::Measurement {
            y += gauss(model.m, &mut rng);
        }
        traj.times.push(t);
        traj.states.push(x.clone());
        traj.outputs.push(y);
        traj.inputs.push(u.clone());

        if k < steps {
            let mut next =
                euler_step(model, &x, &u, dt).map_err(|_| SystemError::IntegrationDiverged { step: k })?;
            if active && noise.target == NoiseTarget::Process {
                next += gauss(model.n, &mut rng) * dt;
            }
            if let Some(proj) = projection {
                proj.apply(&mut next);
            }
            if !next.iter().all(|v| v.is_finite()) {
                return Err(SystemError::IntegrationDiverged { step: k });
            }
            x = next;
        }
    }
    Ok(traj)
}

/// Classical fixed-step RK4 solution of `ẋ = f_c(x) + B·u(t)`, noise-free.
///
/// Used as an independent reference for integrator-order tests; the control
/// is sampled at the stage times.
pub fn rk4_reference(
    model: &SystemModel,
    x0: &DVector<f64>,
    dt: f64,
    horizon: f64,
) -> Result<Trajectory, SystemError> {
    let steps = steps_for_horizon(horizon, dt)?;
    if x0.len() != model.n {
        return Err(SystemError::DimensionMismatch {
            what: "initial state",
            expected: model.n,
            got: x0.len(),
        });
    }

    let rate = |x: &DVector<f64>, t: f64| -> DVector<f64> {
        let mut r = model.drift(x);
        if model.p > 0 {
            r += &model.input_matrix * model.control(t);
        }
        r
    };

    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        outputs: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps + 1),
    };

    let mut x = x0.clone();
    for k in 0..=steps {
        let t = k as f64 * dt;
        traj.times.push(t);
        traj.states.push(x.clone());
        traj.outputs.push(model.output(&x));
        traj.inputs.push(model.control(t));

        if k < steps {
            let k1 = rate(&x, t);
            let k2 = rate(&(&x + &k1 * (dt / 2.0)), t + dt / 2.0);
            let k3 = rate(&(&x + &k2 * (dt / 2.0)), t + dt / 2.0);
            let k4 = rate(&(&x + &k3 * dt), t + dt);
            let next = &x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
            if !next.iter().all(|v| v.is_finite()) {
                return Err(SystemError::IntegrationDiverged { step: k });
            }
            x = next;
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn euler_step_harmonic_hand_value() {
        let model = builtin_model("harmonic").unwrap();
        let x = dvector![2.0, -1.0, 3.0];
        let u = DVector::zeros(0);
        let next = euler_step(&model, &x, &u, 0.001).unwrap();
        // ẋ = (x2, −x3·x1, 0) = (−1, −6, 0)
        assert_eq!(next, dvector![1.999, -1.006, 3.0]);
    }

    #[test]
    fn euler_step_fixed_point() {
        let model = builtin_model("harmonic").unwrap();
        let x = dvector![0.0, 0.0, 7.5];
        let u = DVector::zeros(0);
        let next = euler_step(&model, &x, &u, 0.05).unwrap();
        assert_eq!(next, x);
    }

    #[test]
    fn euler_step_rossler_hand_value() {
        let model = builtin_model("rossler").unwrap();
        let x = dvector![1.0, 1.0, 1.0];
        let u = DVector::zeros(0);
        let next = euler_step(&model, &x, &u, 0.001).unwrap();
        let expected = dvector![
            1.0 - 0.001 * 2.0,
            1.0 + 0.001 * 1.2,
            1.0 + 0.001 * (0.2 + 1.0 * (1.0 - 5.7))
        ];
        assert!((next - expected).amax() < 1e-15);
    }

    #[test]
    fn simulate_harmonic_keeps_x3_constant() {
        let model = builtin_model("harmonic").unwrap();
        let traj = simulate(
            &model,
            &dvector![2.0, -1.0, 3.0],
            0.01,
            10.0,
            &NoiseSpec::none(),
        )
        .unwrap();
        assert!(traj.states.iter().all(|x| x[2] == 3.0));
        traj.validate().unwrap();
    }

    #[test]
    fn simulate_rossler_sample_count() {
        let model = builtin_model("rossler").unwrap();
        let traj = simulate(
            &model,
            &dvector![1.0, 1.0, 1.0],
            0.001,
            10.0,
            &NoiseSpec::none(),
        )
        .unwrap();
        assert_eq!(traj.len(), 10_001);
    }

    #[test]
    fn simulate_duffing_output_is_first_state() {
        let model = builtin_model("reverse_duffing").unwrap();
        let traj = simulate(&model, &dvector![1.0, 0.0], 0.01, 2.0, &NoiseSpec::none()).unwrap();
        for (x, y) in traj.states.iter().zip(&traj.outputs) {
            assert_eq!(y[0], x[0]);
        }
    }

    #[test]
    fn simulate_is_deterministic_under_seed() {
        let model = builtin_model("rossler").unwrap();
        let noise = NoiseSpec::measurement(0.01, 42);
        let a = simulate(&model, &dvector![1.0, 1.0, 1.0], 0.001, 1.0, &noise).unwrap();
        let b = simulate(&model, &dvector![1.0, 1.0, 1.0], 0.001, 1.0, &noise).unwrap();
        assert_eq!(a, b);
        // Different seed, different outputs.
        let c = simulate(
            &model,
            &dvector![1.0, 1.0, 1.0],
            0.001,
            1.0,
            &NoiseSpec::measurement(0.01, 43),
        )
        .unwrap();
        assert_ne!(a.outputs, c.outputs);
        // Noise leaves the states untouched for measurement target.
        assert_eq!(a.states, c.states);
    }

    #[test]
    fn zero_scale_noise_matches_noise_free_bitwise() {
        let model = builtin_model("autonomous").unwrap();
        let x0 = dvector![1.0, 1.0];
        let a = simulate(&model, &x0, 0.01, 1.0, &NoiseSpec::none()).unwrap();
        let b = simulate(&model, &x0, 0.01, 1.0, &NoiseSpec::measurement(0.0, 99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn process_noise_perturbs_states() {
        let model = builtin_model("autonomous").unwrap();
        let x0 = dvector![1.0, 1.0];
        let clean = simulate(&model, &x0, 0.01, 1.0, &NoiseSpec::none()).unwrap();
        let noisy = simulate(&model, &x0, 0.01, 1.0, &NoiseSpec::process(0.1, 7)).unwrap();
        assert_ne!(clean.states, noisy.states);
        // Outputs follow the perturbed states exactly (no measurement noise).
        for (x, y) in noisy.states.iter().zip(&noisy.outputs) {
            assert_eq!(y[0], x[0]);
        }
    }

    #[test]
    fn invalid_horizon_is_rejected() {
        let model = builtin_model("harmonic").unwrap();
        let err = simulate(
            &model,
            &dvector![1.0, 0.0, 1.0],
            0.3,
            1.0,
            &NoiseSpec::none(),
        )
        .unwrap_err();
        assert!(matches!(err, SystemError::InvalidHorizon { .. }));
        assert!(steps_for_horizon(10.0, 0.001).unwrap() == 10_000);
        assert!(steps_for_horizon(1.0, -0.1).is_err());
    }

    #[test]
    fn rk4_keeps_harmonic_x3_constant_to_machine_precision() {
        let model = builtin_model("harmonic").unwrap();
        let traj = rk4_reference(&model, &dvector![2.0, -1.0, 3.0], 0.001, 2.0).unwrap();
        for x in &traj.states {
            assert!((x[2] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn euler_and_rk4_differ_but_stay_close() {
        let model = builtin_model("rossler").unwrap();
        let x0 = dvector![1.0, 1.0, 1.0];
        let e = simulate(&model, &x0, 0.001, 1.0, &NoiseSpec::none()).unwrap();
        let r = rk4_reference(&model, &x0, 0.001, 1.0).unwrap();
        let err = (e.states.last().unwrap() - r.states.last().unwrap()).norm();
        assert!(err > 0.0 && err < 0.1);
    }

    #[test]
    fn euler_error_is_first_order_in_dt() {
        // Terminal error against RK4 should roughly halve when dt halves.
        let model = builtin_model("rossler").unwrap();
        let x0 = dvector![1.0, 1.0, 1.0];
        let term_err = |dt: f64| {
            let e = simulate(&model, &x0, dt, 1.0, &NoiseSpec::none()).unwrap();
            let r = rk4_reference(&model, &x0, dt, 1.0).unwrap();
            (e.states.last().unwrap() - r.states.last().unwrap()).norm()
        };
        let ratio = term_err(1e-3) / term_err(5e-4);
        assert!(
            (1.8..=2.2).contains(&ratio),
            "convergence ratio {ratio} outside [1.8, 2.2]"
        );
    }

    #[test]
    fn projection_clamps_negative_levels() {
        let mut x = dvector![0.4, -0.2, 0.0];
        Projection::NonNegative.apply(&mut x);
        assert_eq!(x, dvector![0.4, 0.0, 0.0]);
        // Idempotent.
        let before = x.clone();
        Projection::NonNegative.apply(&mut x);
        assert_eq!(x, before);
    }

    #[test]
    fn diverging_system_reports_step() {
        // ẋ = x² blows up in finite time from x0 = 1 with coarse steps.
        let model = SystemModel::new(
            "blowup",
            1,
            1,
            Box::new(|x: &DVector<f64>| dvector![x[0] * x[0]]),
            Box::new(|x: &DVector<f64>| dvector![x[0]]),
            DMatrix::zeros(1, 0),
            DMatrix::from_row_slice(1, 1, &[1.0]),
        )
        .unwrap();
        let err = simulate(&model, &dvector![1.0], 1.0, 2000.0, &NoiseSpec::none()).unwrap_err();
        match err {
            SystemError::IntegrationDiverged { step } => assert!(step > 0),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
