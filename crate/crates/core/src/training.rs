//! Dataset construction, the physics-constrained rollout loss, and training.
//!
//! The loss over an observer rollout is
//!
//! ```text
//! MSE = MSE_d + MSE_y + Re_θ
//! MSE_d = mean_k ‖x̂_{k+1} − f(x̂_k) − dt·B·u_k‖²    (dynamics residual)
//! MSE_y = mean_k ‖y_k − h(x̂_k)‖²                    (output error)
//! Re_θ  = λ · Σ_i ‖W_i‖²_F
//! ```
//!
//! Per-step terms are averaged over the horizon so λ balances identically
//! across horizons, and averaged over trajectories when the dataset holds
//! several. Ground-truth states are never consumed: datasets carry only
//! `(t_k, y_k, u_k)` plus the observer's initial estimate.
//!
//! The reverse pass is exact backpropagation through time: gradients flow
//! through every gain application, through the sliding-mode tanh and the
//! adaptive gain's `α‖s‖²` dependence, and through the Euler-discretized
//! recursion `x̂_{k+1}(x̂_k)`. A nonzero `bptt_truncation` detaches the
//! recursion at window boundaries, summing exact within-window gradients.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gainnet::{
    assemble_input, backward_accumulate, forward, ForwardCache, GainGradients, GainNetworkParams,
    InputScaling,
};
use crate::observer::{SmcConfig, DIVERGENCE_GUARD};
use crate::systems::{euler_step, simulate, NoiseSpec, SystemError, SystemModel, Trajectory};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("observer rollout diverged on record {record} at step {step}")]
    RolloutDiverged { record: usize, step: usize },
    #[error("training failed at epoch {epoch}: rollout diverged after learning-rate halving")]
    TrainingFailed {
        epoch: usize,
        history: Vec<LossBreakdown>,
    },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("invalid dataset: {0}")]
    InvalidDataset(&'static str),
    #[error("model `{0}` provides no analytic Jacobians, required for backpropagation")]
    MissingJacobians(alloc::string::String),
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Additive decomposition of the training loss; `total` is always the sum of
/// the three parts in declaration order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub mse_d: f64,
    pub mse_y: f64,
    pub reg: f64,
}

impl LossBreakdown {
    pub fn new(mse_d: f64, mse_y: f64, reg: f64) -> Self {
        LossBreakdown {
            total: mse_d + mse_y + reg,
            mse_d,
            mse_y,
            reg,
        }
    }
}

/// Optimizer and loss settings.
///
/// `learning_rate = 0` is accepted and performs no update, which is useful
/// for regression tests; real training wants a positive rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Weight-regularization strength λ.
    pub lambda: f64,
    /// BPTT window in steps; 0 means the full horizon.
    pub bptt_truncation: usize,
    /// Provenance seed (network init and dataset sampling are derived from
    /// it by the caller; the training loop itself is deterministic).
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lambda: 1e-3,
            bptt_truncation: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1"));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(TrainError::InvalidConfig(
                "learning rate must be nonnegative",
            ));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(TrainError::InvalidConfig("betas must lie in (0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(TrainError::InvalidConfig("epsilon must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(TrainError::InvalidConfig("lambda must be nonnegative"));
        }
        Ok(())
    }
}

/// Measured signals of one trajectory: times, outputs, inputs. States are
/// deliberately absent.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub times: Vec<f64>,
    pub outputs: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl ObservationRecord {
    /// Strips the states from a simulated or measured trajectory.
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        ObservationRecord {
            times: traj.times.clone(),
            outputs: traj.outputs.clone(),
            inputs: traj.inputs.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("empty record")
    }
}

/// Training data: one or more observation records paired with the observer's
/// initial estimate for each.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDataset {
    pub records: Vec<ObservationRecord>,
    pub initial_estimates: Vec<DVector<f64>>,
}

impl TrainingDataset {
    pub fn validate(&self, model: &SystemModel) -> Result<(), TrainError> {
        if self.records.is_empty() {
            return Err(TrainError::InvalidDataset("no records"));
        }
        if self.records.len() != self.initial_estimates.len() {
            return Err(TrainError::InvalidDataset(
                "records and initial estimates differ in count",
            ));
        }
        let dt = self.records[0].dt();
        for record in &self.records {
            if record.len() < 2 {
                return Err(TrainError::InvalidDataset("record shorter than two samples"));
            }
            if (record.dt() - dt).abs() > 1e-12 * dt.max(1.0) {
                return Err(TrainError::InvalidDataset("records disagree on dt"));
            }
            if record.outputs.len() != record.len() || record.inputs.len() != record.len() {
                return Err(TrainError::InvalidDataset("ragged record"));
            }
            if record.outputs[0].len() != model.output_dim() {
                return Err(TrainError::InvalidDataset("output dimension mismatch"));
            }
            if record.inputs[0].len() != model.input_dim() {
                return Err(TrainError::InvalidDataset("input dimension mismatch"));
            }
        }
        for xhat0 in &self.initial_estimates {
            if xhat0.len() != model.state_dim() {
                return Err(TrainError::InvalidDataset(
                    "initial estimate dimension mismatch",
                ));
            }
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.records[0].dt()
    }

    /// Longest record horizon, used to normalize the network's time input.
    pub fn max_horizon(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.horizon())
            .fold(0.0, f64::max)
    }
}

/// Simulates each initial state and pairs the measured signals with its
/// initial estimate. Record `i` consumes noise seed `noise.seed + i`.
pub fn build_dataset(
    model: &SystemModel,
    initial_states: &[DVector<f64>],
    initial_estimates: &[DVector<f64>],
    dt: f64,
    horizon: f64,
    noise: &NoiseSpec,
) -> Result<TrainingDataset, TrainError> {
    if initial_states.is_empty() || initial_states.len() != initial_estimates.len() {
        return Err(TrainError::InvalidDataset(
            "need equally many initial states and estimates, at least one",
        ));
    }
    let mut records = Vec::with_capacity(initial_states.len());
    for (i, x0) in initial_states.iter().enumerate() {
        let mut per_record = *noise;
        per_record.seed = noise.seed.wrapping_add(i as u64);
        let traj = simulate(model, x0, dt, horizon, &per_record)?;
        records.push(ObservationRecord::from_trajectory(&traj));
    }
    Ok(TrainingDataset {
        records,
        initial_estimates: initial_estimates.to_vec(),
    })
}

/// Cartesian grid of `per_axis^dim` states over `[lo, hi]` per component,
/// in row-major axis order.
pub fn grid_states(dim: usize, lo: f64, hi: f64, per_axis: usize) -> Vec<DVector<f64>> {
    assert!(per_axis >= 1 && dim >= 1);
    let count = per_axis.pow(dim as u32);
    let coord = |idx: usize| {
        if per_axis == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * idx as f64 / (per_axis - 1) as f64
        }
    };
    (0..count)
        .map(|flat| {
            let mut rem = flat;
            DVector::from_fn(dim, |axis, _| {
                let stride = per_axis.pow((dim - 1 - axis) as u32);
                let idx = (rem / stride) % per_axis;
                let _ = &mut rem;
                coord(idx)
            })
        })
        .collect()
}

/// `count` states drawn uniformly from `[lo, hi]` per component, seeded.
pub fn sample_states(dim: usize, lo: f64, hi: f64, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| DVector::from_fn(dim, |_, _| rng.random_range(lo..=hi)))
        .collect()
}

/// Rollout hyperparameters shared by loss evaluation and training.
#[derive(Debug, Clone, Copy)]
pub struct RolloutSettings {
    pub dt: f64,
    pub lambda: f64,
    /// BPTT window in steps; 0 means the full horizon.
    pub bptt_truncation: usize,
    pub scaling: InputScaling,
}

struct StepCache {
    xhat: DVector<f64>,
    surface: DVector<f64>,
    tanh_surface: DVector<f64>,
    kbar: f64,
    gain: DMatrix<f64>,
    net_cache: ForwardCache,
    /// Literal dynamics residual `x̂_{k+1} − f(x̂_k) − dt·B·u_k`.
    residual: DVector<f64>,
}

/// Evaluates the loss over the observer rollout for every record and returns
/// exact parameter gradients via backpropagation through time.
pub fn rollout_loss(
    params: &GainNetworkParams,
    model: &SystemModel,
    dataset: &TrainingDataset,
    smc: &SmcConfig,
    settings: &RolloutSettings,
) -> Result<(LossBreakdown, GainGradients), TrainError> {
    dataset.validate(model)?;
    if model.drift_jacobian(&dataset.initial_estimates[0]).is_none()
        || model.output_jacobian(&dataset.initial_estimates[0]).is_none()
    {
        return Err(TrainError::MissingJacobians(model.name().into()));
    }

    let record_count = dataset.records.len();
    let record_weight = 1.0 / record_count as f64;
    let mut grads = GainGradients::zeros_like(params);
    let mut mse_d = 0.0;
    let mut mse_y = 0.0;

    for (ri, record) in dataset.records.iter().enumerate() {
        let (d, y) = rollout_record(
            params,
            model,
            record,
            &dataset.initial_estimates[ri],
            smc,
            settings,
            record_weight,
            &mut grads,
        )
        .map_err(|step| TrainError::RolloutDiverged { record: ri, step })?;
        mse_d += d * record_weight;
        mse_y += y * record_weight;
    }

    // Weight regularization λ·Σ‖W_i‖² and its gradient 2λ·W_i.
    let reg = settings.lambda * params.weight_norm_squared();
    if settings.lambda != 0.0 {
        for (gw, layer) in grads.weights.iter_mut().zip(params.layers()) {
            gw.axpy(2.0 * settings.lambda, &layer.weights, 1.0);
        }
    }

    Ok((LossBreakdown::new(mse_d, mse_y, reg), grads))
}

/// Forward rollout and reverse sweep for one record; accumulates weighted
/// parameter gradients and returns the record's `(mse_d, mse_y)`.
#[allow(clippy::too_many_arguments)]
fn rollout_record(
    params: &GainNetworkParams,
    model: &SystemModel,
    record: &ObservationRecord,
    xhat0: &DVector<f64>,
    smc: &SmcConfig,
    settings: &RolloutSettings,
    weight: f64,
    grads: &mut GainGradients,
) -> Result<(f64, f64), usize> {
    let steps = record.len() - 1;
    let h_struct = model.output_structure();
    let h_struct_t = h_struct.transpose();
    let dt = settings.dt;

    let mut caches: Vec<StepCache> = Vec::with_capacity(steps);
    let mut sum_d = 0.0;
    let mut sum_y = 0.0;
    let mut xhat = xhat0.clone();

    for k in 0..steps {
        let z = assemble_input(
            record.times[k],
            &record.inputs[k],
            &record.outputs[k],
            &settings.scaling,
        );
        let (gain, net_cache) = forward(params, &z);
        let yhat = model.output(&xhat);
        let surface = &record.outputs[k] - yhat;
        let kbar = smc.adaptive_gain(&surface);
        let tanh_surface = surface.map(|v| v.tanh());
        let nu = &h_struct_t * &tanh_surface * (-kbar);

        let predicted = euler_step(model, &xhat, &record.inputs[k], dt).map_err(|_| k)?;
        let mut next = predicted.clone();
        next += &gain * &surface;
        next += &nu;
        if !next.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_GUARD) {
            return Err(k);
        }
        let residual = &next - &predicted;

        sum_d += residual.norm_squared();
        sum_y += surface.norm_squared();
        caches.push(StepCache {
            xhat,
            surface,
            tanh_surface,
            kbar,
            gain,
            net_cache,
            residual,
        });
        xhat = next;
    }

    // Reverse sweep. `g` holds ∂loss/∂x̂_{k+1}; per-step loss terms are
    // already weighted by `weight / steps`.
    let per_step = 2.0 * weight / steps as f64;
    let mut g = DVector::zeros(model.state_dim());
    for k in (0..steps).rev() {
        let cache = &caches[k];

        // Adjoint of the correction c_k = L_k s_k + ν_k: the recursion path
        // plus the dynamics-residual term (‖r_k‖² with r_k ≡ c_k).
        let mut c_adj = g.clone();
        c_adj.axpy(per_step, &cache.residual, 1.0);

        // Gain path: d L_k = c_adj · s_kᵀ, pushed through the network.
        let d_gain = &c_adj * cache.surface.transpose();
        backward_accumulate(params, &cache.net_cache, &d_gain, grads)
            .expect("cache built from the same params");

        // Surface adjoint: through L_k s_k, through ν(s), and the output
        // error term (2/N)·s_k.
        // ∂ν/∂s = −(2α Hᵀtanh(s) sᵀ + K̄ Hᵀ diag(1−tanh²(s))).
        let hc = h_struct * &c_adj;
        let mut ds = cache.gain.transpose() * &c_adj;
        ds.axpy(per_step, &cache.surface, 1.0);
        let tanh_dot_hc = cache.tanh_surface.dot(&hc);
        ds.axpy(-2.0 * smc.alpha * tanh_dot_hc, &cache.surface, 1.0);
        for i in 0..ds.len() {
            let sech2 = 1.0 - cache.tanh_surface[i] * cache.tanh_surface[i];
            ds[i] -= cache.kbar * sech2 * hc[i];
        }

        // State adjoint: through the Euler map and through s = y − h(x̂).
        let f_jac = model.drift_jacobian(&cache.xhat).expect("checked above");
        let h_jac = model.output_jacobian(&cache.xhat).expect("checked above");
        let mut g_new = &g + f_jac.transpose() * &g * dt;
        g_new -= h_jac.transpose() * &ds;
        g = g_new;

        // Detach at truncation-window boundaries.
        let trunc = settings.bptt_truncation;
        if trunc > 0 && k > 0 && k % trunc == 0 {
            g.fill(0.0);
        }
    }

    Ok((sum_d / steps as f64, sum_y / steps as f64))
}

/// First/second-moment Adam state, zero-initialized.
#[derive(Debug, Clone)]
pub struct AdamState {
    m_weights: Vec<DMatrix<f64>>,
    v_weights: Vec<DMatrix<f64>>,
    m_biases: Vec<DVector<f64>>,
    v_biases: Vec<DVector<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &GainNetworkParams) -> Self {
        let zeros = GainGradients::zeros_like(params);
        AdamState {
            m_weights: zeros.weights.clone(),
            v_weights: zeros.weights.clone(),
            m_biases: zeros.biases.clone(),
            v_biases: zeros.biases,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// True when every moment entry is still zero.
    pub fn is_zeroed(&self) -> bool {
        self.m_weights.iter().all(|m| m.amax() == 0.0)
            && self.v_weights.iter().all(|m| m.amax() == 0.0)
            && self.m_biases.iter().all(|m| m.amax() == 0.0)
            && self.v_biases.iter().all(|m| m.amax() == 0.0)
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut GainNetworkParams,
    grads: &GainGradients,
    state: &mut AdamState,
    learning_rate: f64,
    cfg: &TrainConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    };

    for (li, layer) in params.layers_mut().iter_mut().enumerate() {
        update(
            layer.weights.as_mut_slice(),
            grads.weights[li].as_slice(),
            state.m_weights[li].as_mut_slice(),
            state.v_weights[li].as_mut_slice(),
        );
        update(
            layer.bias.as_mut_slice(),
            grads.biases[li].as_slice(),
            state.m_biases[li].as_mut_slice(),
            state.v_biases[li].as_mut_slice(),
        );
    }
}

/// Output of [`train`]: the best parameters seen, where they occurred, and
/// the full loss history.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub best_params: GainNetworkParams,
    pub best_loss: LossBreakdown,
    pub best_epoch: usize,
    pub history: Vec<LossBreakdown>,
    /// Input scaling the network was trained with; reuse it at test time.
    pub scaling: InputScaling,
}

/// Iterates rollout-loss evaluation and Adam updates, tracking the
/// minimum-loss parameters.
///
/// The loop is single-threaded and bitwise deterministic. If a rollout
/// diverges, the last update is rolled back and the learning rate halved
/// once; a second divergence fails with the history collected so far.
/// Callers persist `best_params`; this crate performs no I/O.
pub fn train(
    model: &SystemModel,
    dataset: &TrainingDataset,
    cfg: &TrainConfig,
    smc: &SmcConfig,
    init_params: &GainNetworkParams,
) -> Result<TrainResult, TrainError> {
    cfg.validate()?;
    dataset.validate(model)?;

    let settings = RolloutSettings {
        dt: dataset.dt(),
        lambda: cfg.lambda,
        bptt_truncation: cfg.bptt_truncation,
        scaling: InputScaling::by_horizon(dataset.max_horizon()),
    };

    let mut params = init_params.clone();
    let mut adam = AdamState::new(&params);
    let mut learning_rate = cfg.learning_rate;
    let mut halved = false;
    let mut history: Vec<LossBreakdown> = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(GainNetworkParams, LossBreakdown, usize)> = None;
    // Snapshot before the most recent update, for divergence rollback.
    let mut before_update: Option<(GainNetworkParams, AdamState)> = None;

    let mut epoch = 0;
    while epoch < cfg.epochs {
        match rollout_loss(&params, model, dataset, smc, &settings) {
            Ok((loss, grads)) => {
                epoch += 1;
                history.push(loss);
                let improved = best
                    .as_ref()
                    .map(|(_, b, _)| loss.total < b.total)
                    .unwrap_or(true);
                if improved {
                    best = Some((params.clone(), loss, epoch));
                }
                if epoch < cfg.epochs {
                    before_update = Some((params.clone(), adam.clone()));
                    adam_step(&mut params, &grads, &mut adam, learning_rate, cfg);
                }
            }
            Err(TrainError::RolloutDiverged { .. }) if !halved && before_update.is_some() => {
                // Discard the update that produced the diverging parameters
                // and retry it at half the learning rate.
                let (p, a) = before_update.take().unwrap();
                params = p;
                adam = a;
                learning_rate *= 0.5;
                halved = true;
            }
            Err(TrainError::RolloutDiverged { .. }) => {
                return Err(TrainError::TrainingFailed {
                    epoch: epoch + 1,
                    history,
                });
            }
            Err(other) => return Err(other),
        }
    }

    let (best_params, best_loss, best_epoch) = best.expect("epochs >= 1");
    Ok(TrainResult {
        best_params,
        best_loss,
        best_epoch,
        history,
        scaling: settings.scaling,
    })
}
