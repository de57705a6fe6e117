//! Feedforward gain network: forward pass producing the observer gain `L_k`
//! and an analytic reverse pass producing parameter and input gradients.
//!
//! The network consumes `z_k = [t_scaled, u_k, y_k]`, applies tanh hidden
//! layers and an affine output layer, and reshapes the output row-major into
//! the `n × m` gain matrix. The output layer is deliberately unactivated:
//! useful gains routinely leave `[−1, 1]`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GainNetError {
    #[error("layer dimensions do not chain: layer {layer} expects input {expected}, got {got}")]
    DimensionChain {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("invalid network architecture: {0}")]
    InvalidArchitecture(&'static str),
    #[error("cache does not match parameters (layer count {cache} vs {params})")]
    CacheMismatch { cache: usize, params: usize },
    #[error("non-finite parameter value")]
    NonFinite,
}

/// Row-major flattening between the network output vector and the gain
/// matrix `L ∈ ℝ^{rows×cols}`; `reshape(flatten(L)) = L` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GainMatrixLayout {
    pub rows: usize,
    pub cols: usize,
}

impl GainMatrixLayout {
    pub fn new(rows: usize, cols: usize) -> Self {
        GainMatrixLayout { rows, cols }
    }

    pub fn flat_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn flatten(&self, matrix: &DMatrix<f64>) -> DVector<f64> {
        let mut flat = DVector::zeros(self.flat_len());
        for i in 0..self.rows {
            for j in 0..self.cols {
                flat[i * self.cols + j] = matrix[(i, j)];
            }
        }
        flat
    }

    pub fn reshape(&self, flat: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| flat[i * self.cols + j])
    }
}

/// One affine layer `u = W·a + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Network parameters θ = {W_i, b_i} plus the output layout.
///
/// All layers except the last apply tanh; the last is affine.
#[derive(Debug, Clone, PartialEq)]
pub struct GainNetworkParams {
    layers: Vec<DenseLayer>,
    layout: GainMatrixLayout,
}

impl GainNetworkParams {
    /// Builds parameters from explicit layers, checking dimension chaining,
    /// finiteness, and that the last layer produces `rows·cols` values.
    pub fn from_layers(
        layers: Vec<DenseLayer>,
        layout: GainMatrixLayout,
    ) -> Result<Self, GainNetError> {
        if layers.is_empty() {
            return Err(GainNetError::InvalidArchitecture("no layers"));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.weights.nrows() != layer.bias.len() {
                return Err(GainNetError::InvalidArchitecture(
                    "bias length must match weight rows",
                ));
            }
            if i > 0 {
                let expected = layers[i - 1].weights.nrows();
                if layer.weights.ncols() != expected {
                    return Err(GainNetError::DimensionChain {
                        layer: i,
                        expected,
                        got: layer.weights.ncols(),
                    });
                }
            }
            let finite = layer.weights.iter().all(|v| v.is_finite())
                && layer.bias.iter().all(|v| v.is_finite());
            if !finite {
                return Err(GainNetError::NonFinite);
            }
        }
        let out = layers.last().unwrap().weights.nrows();
        if out != layout.flat_len() {
            return Err(GainNetError::DimensionChain {
                layer: layers.len() - 1,
                expected: layout.flat_len(),
                got: out,
            });
        }
        Ok(GainNetworkParams { layers, layout })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn layout(&self) -> GainMatrixLayout {
        self.layout
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.nrows()
    }

    /// Layer sizes `[input, hidden…, output]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.weights.nrows()));
        dims
    }

    /// Total number of stored scalars, `Σ rows(W_i)·(cols(W_i)+1)`.
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.nrows() * (l.weights.ncols() + 1))
            .sum()
    }

    /// `Σ_i ‖W_i‖²_F` over weight matrices only (biases unregularized).
    pub fn weight_norm_squared(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.iter().map(|w| w * w).sum::<f64>())
            .sum()
    }
}

/// Gradient tensors shaped like [`GainNetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GainGradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl GainGradients {
    pub fn zeros_like(params: &GainNetworkParams) -> Self {
        GainGradients {
            weights: params
                .layers
                .iter()
                .map(|l| DMatrix::zeros(l.weights.nrows(), l.weights.ncols()))
                .collect(),
            biases: params
                .layers
                .iter()
                .map(|l| DVector::zeros(l.bias.len()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GainGradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            *w *= factor;
        }
        for b in &mut self.biases {
            *b *= factor;
        }
    }

    /// Largest gradient magnitude across all tensors.
    pub fn max_abs(&self) -> f64 {
        let w = self.weights.iter().map(|m| m.amax()).fold(0.0, f64::max);
        let b = self.biases.iter().map(|v| v.amax()).fold(0.0, f64::max);
        w.max(b)
    }
}

/// Activations recorded by [`forward`] for the reverse pass; entry 0 is the
/// input, entry `i+1` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<DVector<f64>>,
}

impl ForwardCache {
    pub fn input(&self) -> &DVector<f64> {
        &self.activations[0]
    }
}

/// Xavier/Glorot-initialized parameters: weights uniform on
/// `±√(6/(fan_in+fan_out))`, biases zero, deterministic under `seed`.
///
/// `dims` lists `[input, hidden…, output]` and needs at least one hidden
/// layer; the final entry must equal `layout.rows·layout.cols`.
pub fn xavier_init(
    dims: &[usize],
    layout: GainMatrixLayout,
    seed: u64,
) -> Result<GainNetworkParams, GainNetError> {
    if dims.len() < 3 {
        return Err(GainNetError::InvalidArchitecture(
            "need at least input, one hidden, and output dims",
        ));
    }
    if dims.iter().any(|d| *d == 0) {
        return Err(GainNetError::InvalidArchitecture(
            "layer dimensions must be positive",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            DenseLayer {
                weights: DMatrix::from_fn(fan_out, fan_in, |_, _| {
                    rng.random_range(-limit..limit)
                }),
                bias: DVector::zeros(fan_out),
            }
        })
        .collect();
    GainNetworkParams::from_layers(layers, layout)
}

/// Forward pass: tanh hidden layers, affine output, reshaped per the layout.
pub fn forward(params: &GainNetworkParams, z: &DVector<f64>) -> (DMatrix<f64>, ForwardCache) {
    debug_assert_eq!(z.len(), params.input_dim());
    let count = params.layers.len();
    let mut activations = Vec::with_capacity(count + 1);
    activations.push(z.clone());
    for (i, layer) in params.layers.iter().enumerate() {
        let mut pre = &layer.weights * activations.last().unwrap() + &layer.bias;
        if i + 1 < count {
            pre.apply(|v| *v = v.tanh());
        }
        activations.push(pre);
    }
    let gain = params.layout.reshape(activations.last().unwrap());
    (gain, ForwardCache { activations })
}

/// Reverse pass: exact gradients of the forward map.
///
/// `d_gain` is the upstream gradient with respect to the gain matrix; the
/// result pairs per-layer parameter gradients with the gradient `dz` at the
/// network input.
pub fn backward(
    params: &GainNetworkParams,
    cache: &ForwardCache,
    d_gain: &DMatrix<f64>,
) -> Result<(GainGradients, DVector<f64>), GainNetError> {
    let count = params.layers.len();
    if cache.activations.len() != count + 1 {
        return Err(GainNetError::CacheMismatch {
            cache: cache.activations.len().saturating_sub(1),
            params: count,
        });
    }

    let mut grads = GainGradients::zeros_like(params);
    // Gradient w.r.t. the current layer's output activation.
    let mut g = params.layout.flatten(d_gain);
    for i in (0..count).rev() {
        let g_pre = if i + 1 == count {
            g
        } else {
            // tanh'(u) = 1 − tanh²(u), with tanh(u) already cached.
            let act = &cache.activations[i + 1];
            DVector::from_fn(g.len(), |r, _| g[r] * (1.0 - act[r] * act[r]))
        };
        grads.weights[i] = &g_pre * cache.activations[i].transpose();
        grads.biases[i] = g_pre.clone();
        g = params.layers[i].weights.transpose() * g_pre;
    }
    Ok((grads, g))
}

/// Input normalization for the network: time is divided by `t_scale`
/// (typically the training horizon), while `u` and `y` enter raw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputScaling {
    pub t_scale: f64,
}

impl InputScaling {
    pub fn by_horizon(horizon: f64) -> Self {
        debug_assert!(horizon > 0.0);
        InputScaling { t_scale: horizon }
    }
}

/// Assembles the network input `z = [t/t_scale, u…, y…]`.
pub fn assemble_input(
    t: f64,
    u: &DVector<f64>,
    y: &DVector<f64>,
    scaling: &InputScaling,
) -> DVector<f64> {
    let mut z = DVector::zeros(1 + u.len() + y.len());
    z[0] = t / scaling.t_scale;
    for (i, v) in u.iter().enumerate() {
        z[1 + i] = *v;
    }
    for (i, v) in y.iter().enumerate() {
        z[1 + u.len() + i] = *v;
    }
    z
}

/// Wraps trained parameters as a pure `(t, u, y) ↦ L` gain provider.
pub fn gain_provider(
    params: &GainNetworkParams,
    scaling: InputScaling,
) -> impl Fn(f64, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + '_ {
    move |t, u, y| {
        let z = assemble_input(t, u, y, &scaling);
        forward(params, &z).0
    }
}
