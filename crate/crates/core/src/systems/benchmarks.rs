//! Built-in benchmark models with their published constants.
//!
//! All benchmarks except the three-tank system are autonomous (`p = 0`).
//! Each model ships an analytic drift/output Jacobian; the three-tank
//! Jacobian clamps the square-root derivative to 0 on the kink set so that
//! backpropagation never produces infinities there.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;

use nalgebra::{dvector, DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use super::{ControlFn, SystemError, SystemModel};

/// Physical constants of the three-tank benchmark.
///
/// The flow coefficients are `β_i = γ_zi · S_p · √(2g) / S_T`. The paper-style
/// benchmark leaves the numeric values open, so these defaults are a
/// representative desk-scale set (cross sections in m², levels in m) chosen
/// to drain half-metre levels over tens of seconds; treat them as
/// configuration, not ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreeTankParams {
    /// Tank cross-sectional area S_T (m²).
    pub tank_area: f64,
    /// Connecting-pipe cross-sectional area S_p (m²).
    pub pipe_area: f64,
    /// Flow coefficients γ_z1, γ_z2, γ_z3 of the connections.
    pub flow_coeff: [f64; 3],
    /// Gravitational acceleration g (m/s²).
    pub gravity: f64,
}

impl Default for ThreeTankParams {
    fn default() -> Self {
        ThreeTankParams {
            tank_area: 1.54e-2,
            pipe_area: 5.0e-4,
            flow_coeff: [0.45, 0.40, 0.50],
            gravity: 9.81,
        }
    }
}

impl ThreeTankParams {
    /// Derived flow constants `β_i = γ_zi · S_p · √(2g) / S_T`.
    pub fn betas(&self) -> [f64; 3] {
        let scale = self.pipe_area * (2.0 * self.gravity).sqrt() / self.tank_area;
        [
            self.flow_coeff[0] * scale,
            self.flow_coeff[1] * scale,
            self.flow_coeff[2] * scale,
        ]
    }

    pub fn validate(&self) -> Result<(), SystemError> {
        if self.tank_area <= 0.0 || self.pipe_area <= 0.0 || self.gravity <= 0.0 {
            return Err(SystemError::InvalidParameter(
                "three-tank areas and gravity must be positive".into(),
            ));
        }
        if self.flow_coeff.iter().any(|c| *c <= 0.0) {
            return Err(SystemError::InvalidParameter(
                "three-tank flow coefficients must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Signed square-root flow `sign(r)·√|r|` with the `sign(0) = 0` convention.
#[inline]
fn signed_sqrt(r: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else if r > 0.0 {
        r.sqrt()
    } else {
        -(-r).sqrt()
    }
}

/// Derivative of `sign(r)·√|r|`, clamped to 0 at the kink `r = 0`.
#[inline]
fn signed_sqrt_deriv(r: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else {
        0.5 / r.abs().sqrt()
    }
}

/// Returns a built-in benchmark by name.
///
/// Known names: `rossler`, `harmonic`, `autonomous`, `autonomous_sum`,
/// `academic`, `academic_sum`, `academic_mod`, `three_tank`,
/// `reverse_duffing`. The three-tank variant uses [`ThreeTankParams::default`]
/// and zero control; see [`three_tank_model`] to override either.
pub fn builtin_model(name: &str) -> Result<SystemModel, SystemError> {
    match name {
        "rossler" => Ok(rossler()),
        "harmonic" => Ok(harmonic()),
        "autonomous" => Ok(autonomous(false)),
        "autonomous_sum" => Ok(autonomous(true)),
        "academic" => Ok(academic(false)),
        "academic_sum" => Ok(academic(true)),
        "academic_mod" => Ok(academic_mod()),
        "three_tank" => three_tank_model(&ThreeTankParams::default(), None),
        "reverse_duffing" => Ok(reverse_duffing()),
        other => Err(SystemError::UnknownModel(String::from(other))),
    }
}

/// Square-wave pump profile: `u(t) = u_max` when `sin(5π f t) > 0`, else
/// `u_min` (strict inequality, so `sin(·) = 0` selects `u_min`).
pub fn square_wave_control(
    u_min: DVector<f64>,
    u_max: DVector<f64>,
    freq: f64,
) -> Result<ControlFn, SystemError> {
    if freq <= 0.0 {
        return Err(SystemError::InvalidParameter(
            "square wave frequency must be positive".into(),
        ));
    }
    if u_min.len() != u_max.len() {
        return Err(SystemError::DimensionMismatch {
            what: "square wave levels",
            expected: u_min.len(),
            got: u_max.len(),
        });
    }
    Ok(Box::new(move |t: f64| {
        if (5.0 * core::f64::consts::PI * freq * t).sin() > 0.0 {
            u_max.clone()
        } else {
            u_min.clone()
        }
    }))
}

/// Rössler attractor, `a = b = 0.2`, `c = 5.7`, measured output `y = x₂`.
fn rossler() -> SystemModel {
    const A: f64 = 0.2;
    const B: f64 = 0.2;
    const C: f64 = 5.7;
    SystemModel::new(
        "rossler",
        3,
        1,
        Box::new(|x: &DVector<f64>| {
            dvector![-x[1] - x[2], x[0] + A * x[1], B + x[2] * (x[0] - C)]
        }),
        Box::new(|x: &DVector<f64>| dvector![x[1]]),
        DMatrix::zeros(3, 0),
        DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]),
    )
    .expect("static dims")
    .with_jacobians(
        Box::new(|x: &DVector<f64>| {
            DMatrix::from_row_slice(
                3,
                3,
                &[0.0, -1.0, -1.0, 1.0, A, 0.0, x[2], 0.0, x[0] - C],
            )
        }),
        Box::new(|_x: &DVector<f64>| DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0])),
    )
}

/// Harmonic oscillator with unknown constant frequency state, `y = x₁`.
fn harmonic() -> SystemModel {
    SystemModel::new(
        "harmonic",
        3,
        1,
        Box::new(|x: &DVector<f64>| dvector![x[1], -x[2] * x[0], 0.0]),
        Box::new(|x: &DVector<f64>| dvector![x[0]]),
        DMatrix::zeros(3, 0),
        DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
    )
    .expect("static dims")
    .with_jacobians(
        Box::new(|x: &DVector<f64>| {
            DMatrix::from_row_slice(
                3,
                3,
                &[0.0, 1.0, 0.0, -x[2], 0.0, -x[0], 0.0, 0.0, 0.0],
            )
        }),
        Box::new(|_x: &DVector<f64>| DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0])),
    )
}

/// Planar autonomous system `ẋ₁ = x₂ + sin x₁`, `ẋ₂ = −x₁ + cos x₂` with
/// either `y = x₁` or the summed output `y = x₁ + x₂`.
fn autonomous(sum_output: bool) -> SystemModel {
    let (name, h, structure): (_, super::StateFn, _) = if sum_output {
        (
            "autonomous_sum",
            Box::new(|x: &DVector<f64>| dvector![x[0] + x[1]]) as super::StateFn,
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        )
    } else {
        (
            "autonomous",
            Box::new(|x: &DVector<f64>| dvector![x[0]]) as super::StateFn,
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        )
    };
    let structure_j = structure.clone();
    SystemModel::new(
        name,
        2,
        1,
        Box::new(|x: &DVector<f64>| dvector![x[1] + x[0].sin(), -x[0] + x[1].cos()]),
        h,
        DMatrix::zeros(2, 0),
        structure,
    )
    .expect("static dims")
    .with_jacobians(
        Box::new(|x: &DVector<f64>| {
            DMatrix::from_row_slice(2, 2, &[x[0].cos(), 1.0, -1.0, -x[1].sin()])
        }),
        Box::new(move |_x: &DVector<f64>| structure_j.clone()),
    )
}

/// Academic system `ẋ₁ = x₂ √(1+x₁²)`, `ẋ₂ = −x₁ x₂² / √(1+x₁²)` with
/// `y = x₁` or `y = x₁ + x₂`.
fn academic(sum_output: bool) -> SystemModel {
    let (name, h, structure): (_, super::StateFn, _) = if sum_output {
        (
            "academic_sum",
            Box::new(|x: &DVector<f64>| dvector![x[0] + x[1]]) as super::StateFn,
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        )
    } else {
        (
            "academic",
            Box::new(|x: &DVector<f64>| dvector![x[0]]) as super::StateFn,
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        )
    };
    let structure_j = structure.clone();
    SystemModel::new(
        name,
        2,
        1,
        Box::new(|x: &DVector<f64>| {
            let root = (1.0 + x[0] * x[0]).sqrt();
            dvector![x[1] * root, -x[0] * x[1] * x[1] / root]
        }),
        h,
        DMatrix::zeros(2, 0),
        structure,
    )
    .expect("static dims")
    .with_jacobians(
        Box::new(|x: &DVector<f64>| {
            let q = 1.0 + x[0] * x[0];
            let root = q.sqrt();
            DMatrix::from_row_slice(
                2,
                2,
                &[
                    x[1] * x[0] / root,
                    root,
                    -x[1] * x[1] / (q * root),
                    -2.0 * x[0] * x[1] / root,
                ],
            )
        }),
        Box::new(move |_x: &DVector<f64>| structure_j.clone()),
    )
}

/// Modified academic system `ẋ₁ = x₂ √(1+x₂²)`, `ẋ₂ = −x₁ x₂² / √(1+x₂²)`,
/// `y = x₁`.
fn academic_mod() -> SystemModel {
    SystemModel::new(
        "academic_mod",
        2,
        1,
        Box::new(|x: &DVector<f64>| {
            let root = (1.0 + x[1] * x[1]).sqrt();
            dvector![x[1] * root, -x[0] * x[1] * x[1] / root]
        }),
        Box::new(|x: &DVector<f64>| dvector![x[0]]),
        DMatrix::zeros(2, 0),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
    )
    .expect("static dims")
    .with_jacobians(
        Box::new(|x: &DVector<f64>| {
            let q = 1.0 + x[1] * x[1];
            let root = q.sqrt();
            DMatrix::from_row_slice(
                2,
                2,
                &[
                    0.0,
                    (1.0 + 2.0 * x[1] * x[1]) / root,
                    -x[1] * x[1] / root,
                    -x[0] * (x[1] * x[1] * x[1] + 2.0 * x[1]) / (q * root),
                ],
            )
        }),
        Box::new(|_x: &DVector<f64>| DMatrix::from_row_slice(1, 2, &[1.0, 0.0])),
    )
}

/// Reverse Duffing oscillator `ẋ₁ = x₂³`, `ẋ₂ = −x₁`, `y = x₁`.
fn reverse_duffing() -> SystemModel {
    SystemModel::new(
        "reverse_duffing",
        2,
        1,
        Box::new(|x: &DVector<f64>| dvector![x[1] * x[1] * x[1], -x[0]]),
        Box::new(|x: &DVector<f64>| dvector![x[0]]),
        DMatrix::zeros(2, 0),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
    )
    .expect("static dims")
    .with_jacobians(
        Box::new(|x: &DVector<f64>| {
            DMatrix::from_row_slice(2, 2, &[0.0, 3.0 * x[1] * x[1], -1.0, 0.0])
        }),
        Box::new(|_x: &DVector<f64>| DMatrix::from_row_slice(1, 2, &[1.0, 0.0])),
    )
}

/// Three coupled tanks with signed square-root inter-tank flows, pump inflow
/// on tanks 1 and 3, measured level `y = x₂`.
///
/// Inter-tank flow `Q_ij = β·sign(x_i−x_j)·√|x_i−x_j|` is odd and continuous
/// at `x_i = x_j` but not differentiable there; the outflow of tank 3 uses
/// the same odd convention so the drift stays finite if an Euler step
/// overshoots below zero. The map is declared singular at `x₁ = x₂`,
/// `x₂ = x₃`, and `x₃ = 0` for Jacobian-based diagnostics.
pub fn three_tank_model(
    params: &ThreeTankParams,
    control: Option<ControlFn>,
) -> Result<SystemModel, SystemError> {
    params.validate()?;
    let [b1, b2, b3] = params.betas();
    let inv_area = 1.0 / params.tank_area;

    let model = SystemModel::new(
        "three_tank",
        3,
        1,
        Box::new(move |x: &DVector<f64>| {
            let q12 = b1 * signed_sqrt(x[0] - x[1]);
            let q23 = b2 * signed_sqrt(x[1] - x[2]);
            let q3 = b3 * signed_sqrt(x[2]);
            dvector![-q12, q12 - q23, q23 - q3]
        }),
        Box::new(|x: &DVector<f64>| dvector![x[1]]),
        DMatrix::from_row_slice(3, 2, &[inv_area, 0.0, 0.0, 0.0, 0.0, inv_area]),
        DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]),
    )?
    .with_jacobians(
        Box::new(move |x: &DVector<f64>| {
            let d12 = b1 * signed_sqrt_deriv(x[0] - x[1]);
            let d23 = b2 * signed_sqrt_deriv(x[1] - x[2]);
            let d3 = b3 * signed_sqrt_deriv(x[2]);
            DMatrix::from_row_slice(
                3,
                3,
                &[
                    -d12, d12, 0.0, //
                    d12, -d12 - d23, d23, //
                    0.0, d23, -d23 - d3,
                ],
            )
        }),
        Box::new(|_x: &DVector<f64>| DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0])),
    )
    .with_singular_check(Box::new(|x: &DVector<f64>| {
        let near = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs() + b.abs());
        if near(x[0], x[1]) {
            Some(format!("x1 = x2 (x1 = {}, x2 = {})", x[0], x[1]))
        } else if near(x[1], x[2]) {
            Some(format!("x2 = x3 (x2 = {}, x3 = {})", x[1], x[2]))
        } else if near(x[2], 0.0) {
            Some(format!("x3 = 0 (x3 = {})", x[2]))
        } else {
            None
        }
    }));

    Ok(match control {
        Some(c) => model.with_control(c),
        None => model,
    })
}
