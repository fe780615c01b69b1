//! Coefficient models `(α, σ)`, their declared structural constants, and
//! the moving-frame transform `a(t, v) = U_t* ℓ α(t, π U_t v)`,
//! `b(t, v) = U_t* ℓ σ(t, π U_t v)`.

mod models;
mod probe;

use std::fmt;
use std::sync::Arc;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::DilationFrame;
use crate::hilbert::{HSOperator, HVec, SpaceSpec};
use crate::scalar::Scalar;

pub use models::{build_model, catalog, ModelSelection, VolSpec};
pub use probe::{
    h1_margin, h2_margin, h3_margin, h4_margin, probe, probe_conditions, probe_transferred_conditions,
    sigma_bound_margin, tau_bound_margin, Condition, ConditionOutcome, ConditionReport, FrameSampler,
    GaussianSampler, Margin, ProbeSettings, SpaceSampler, Witness,
};

pub type DriftFn<T> = Arc<dyn Fn(f64, &HVec<T>) -> HVec<T> + Send + Sync>;
pub type VolatilityFn<T> = Arc<dyn Fn(f64, &HVec<T>) -> HSOperator<T> + Send + Sync>;

/// Deterministic nonnegative forcing term `f(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Forcing {
    /// `values[i]` on `[breaks[i], breaks[i+1])`; the last value extends to infinity.
    PiecewiseConstant { breaks: Vec<f64>, values: Vec<f64> },
    /// `f0 + f1 t`.
    Affine { f0: f64, f1: f64 },
}

impl Forcing {
    pub fn constant(value: f64) -> Self {
        Forcing::Affine { f0: value, f1: 0.0 }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Forcing::Affine { f0, f1 } => f0 + f1 * t,
            Forcing::PiecewiseConstant { breaks, values } => {
                let i = breaks.iter().rposition(|&b| b <= t).unwrap_or(0);
                values[i]
            }
        }
    }

    /// `∫_0^t f(s) ds`, exact.
    pub fn integral(&self, t: f64) -> f64 {
        match self {
            Forcing::Affine { f0, f1 } => f0 * t + 0.5 * f1 * t * t,
            Forcing::PiecewiseConstant { breaks, values } => {
                let mut acc = 0.0;
                for (i, &v) in values.iter().enumerate() {
                    let lo = breaks[i].max(0.0);
                    let hi = breaks.get(i + 1).copied().unwrap_or(f64::INFINITY).min(t);
                    if hi > lo {
                        acc += v * (hi - lo);
                    }
                }
                acc
            }
        }
    }

    fn validate(&self, horizon: f64, errors: &mut Vec<String>) {
        match self {
            Forcing::Affine { f0, f1 } => {
                if !(*f0 >= 0.0 && f0 + f1 * horizon >= 0.0) {
                    errors.push(format!("forcing f must be >= 0 on [0, {horizon}]"));
                }
            }
            Forcing::PiecewiseConstant { breaks, values } => {
                if breaks.is_empty() || breaks.len() != values.len() {
                    errors.push("forcing table needs matching, nonempty breaks and values".into());
                } else {
                    if breaks[0] > 0.0 {
                        errors.push("forcing table must start at t <= 0".into());
                    }
                    if breaks.windows(2).any(|w| w[1] <= w[0]) {
                        errors.push("forcing breaks must be strictly increasing".into());
                    }
                }
                if values.iter().any(|v| !(*v >= 0.0)) {
                    errors.push("forcing values must be >= 0".into());
                }
            }
        }
    }
}

/// Local-monotonicity modulus `τ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Tau {
    Constant { value: f64 },
    /// `c0 + c1 r^q`, continuous and increasing for `c0, c1, q ≥ 0`.
    Power { c0: f64, c1: f64, q: f64 },
}

impl Tau {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            Tau::Constant { value } => value,
            Tau::Power { c0, c1, q } => c0 + c1 * r.powf(q),
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match *self {
            Tau::Constant { value } => Some(value),
            Tau::Power { c0, c1: 0.0, .. } => Some(c0),
            Tau::Power { .. } => None,
        }
    }
}

/// Structural constants declared for a coefficient model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ModelConstants {
    pub beta: f64,
    pub c0: f64,
    pub theta: f64,
    /// Constant of the volatility growth bound and of the bound on `τ`.
    pub c: f64,
    /// Integrability exponent; must satisfy `p ≥ β + 2`.
    pub p: f64,
    pub forcing: Forcing,
    pub tau: Tau,
}

impl ModelConstants {
    /// Collects every violated constraint.
    pub fn check(&self, horizon: f64) -> Vec<String> {
        let mut errors = Vec::new();
        if !(self.beta >= 0.0) {
            errors.push(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(self.theta > 0.0 && self.c0 >= self.theta) {
            errors.push(format!("need c0 >= theta > 0, got c0 = {}, theta = {}", self.c0, self.theta));
        }
        if !(self.c >= 0.0) {
            errors.push(format!("C must be >= 0, got {}", self.c));
        }
        if !(self.p >= self.beta + 2.0) {
            errors.push(format!("need p >= beta + 2, got p = {}, beta = {}", self.p, self.beta));
        }
        self.forcing.validate(horizon, &mut errors);
        match self.tau {
            Tau::Constant { value } if !(value >= 0.0) => errors.push("tau must be >= 0".into()),
            Tau::Power { c0, c1, q } if !(c0 >= 0.0 && c1 >= 0.0 && q >= 0.0) => {
                errors.push("tau power law needs c0, c1, q >= 0".into())
            }
            _ => {}
        }
        errors
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        let errors = self.check(horizon);
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors.join("; ")))
        }
    }

    /// Coercivity exponent `C₀ − θ`.
    pub fn growth_rate(&self) -> f64 {
        self.c0 - self.theta
    }
}

/// Deterministic coefficients `(α, σ)` on `H` with noise space `ℝ^m`.
#[derive(Clone)]
pub struct CoefficientModel<T> {
    pub id: String,
    space: SpaceSpec,
    noise_dim: usize,
    alpha: DriftFn<T>,
    sigma: VolatilityFn<T>,
    pub constants: ModelConstants,
}

impl<T> fmt::Debug for CoefficientModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientModel")
            .field("id", &self.id)
            .field("space", &self.space)
            .field("noise_dim", &self.noise_dim)
            .field("constants", &self.constants)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> CoefficientModel<T> {
    pub fn new(
        id: impl Into<String>,
        space: SpaceSpec,
        noise_dim: usize,
        alpha: DriftFn<T>,
        sigma: VolatilityFn<T>,
        constants: ModelConstants,
    ) -> Self {
        CoefficientModel { id: id.into(), space, noise_dim, alpha, sigma, constants }
    }

    pub fn space(&self) -> SpaceSpec {
        self.space
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn alpha(&self, t: f64, x: &HVec<T>) -> HVec<T> {
        (self.alpha)(t, x)
    }

    pub fn sigma(&self, t: f64, x: &HVec<T>) -> HSOperator<T> {
        (self.sigma)(t, x)
    }

    pub fn with_constants(mut self, constants: ModelConstants) -> Self {
        self.constants = constants;
        self
    }
}

/// Common view of `(α, σ)` on `H` and `(a, b)` on the dilated space.
pub trait Coefficients<T: Scalar>: Sync {
    fn space(&self) -> SpaceSpec;
    fn noise_dim(&self) -> usize;
    fn drift(&self, t: f64, x: &HVec<T>) -> Result<HVec<T>>;
    fn diffusion(&self, t: f64, x: &HVec<T>) -> Result<HSOperator<T>>;
}

impl<T: Scalar> Coefficients<T> for CoefficientModel<T> {
    fn space(&self) -> SpaceSpec {
        self.space
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn drift(&self, t: f64, x: &HVec<T>) -> Result<HVec<T>> {
        Ok(self.alpha(t, x))
    }

    fn diffusion(&self, t: f64, x: &HVec<T>) -> Result<HSOperator<T>> {
        Ok(self.sigma(t, x))
    }
}

/// Coefficients of the semigroup-free SDE on the dilated space.
#[derive(Debug, Clone, Copy)]
pub struct DilatedCoefficients<'a, T> {
    model: &'a CoefficientModel<T>,
    frame: &'a DilationFrame<T>,
}

/// Moving-frame transform of `model` through `frame`.
pub fn transform_to_frame<'a, T: Scalar>(
    model: &'a CoefficientModel<T>,
    frame: &'a DilationFrame<T>,
) -> Result<DilatedCoefficients<'a, T>> {
    if model.space() != frame.base_space() {
        return Err(Error::SpaceMismatch { left: model.space(), right: frame.base_space() });
    }
    Ok(DilatedCoefficients { model, frame })
}

impl<'a, T: Scalar> DilatedCoefficients<'a, T> {
    pub fn model(&self) -> &'a CoefficientModel<T> {
        self.model
    }

    pub fn frame(&self) -> &'a DilationFrame<T> {
        self.frame
    }

    /// `π U_t v`, the state seen by the original coefficients.
    pub fn base_state(&self, t: f64, v: &HVec<T>) -> Result<HVec<T>> {
        self.frame.project_translated(t, v)
    }

    /// `b(t, v) w = U_t* ℓ σ(t, π U_t v) w`, without forming `b`.
    pub fn diffusion_apply(&self, t: f64, v: &HVec<T>, w: &[T]) -> Result<HVec<T>> {
        let x = self.base_state(t, v)?;
        self.frame.lift(t, &self.model.sigma(t, &x).apply(w)?)
    }

    /// `target += a(t, v) dt + b(t, v) dw`, evaluating `π U_t v` once.
    pub fn euler_increment(&self, t: f64, v: &HVec<T>, dt: T, dw: &[T], target: &mut HVec<T>) -> Result<()> {
        let x = self.base_state(t, v)?;
        let mut incr = self.model.sigma(t, &x).apply(dw)?;
        incr.axpy(dt, &self.model.alpha(t, &x))?;
        self.frame.add_lifted(t, &incr, target)
    }
}

impl<T: Scalar> Coefficients<T> for DilatedCoefficients<'_, T> {
    fn space(&self) -> SpaceSpec {
        self.frame.space()
    }

    fn noise_dim(&self) -> usize {
        self.model.noise_dim()
    }

    fn drift(&self, t: f64, v: &HVec<T>) -> Result<HVec<T>> {
        let x = self.base_state(t, v)?;
        self.frame.lift(t, &self.model.alpha(t, &x))
    }

    fn diffusion(&self, t: f64, v: &HVec<T>) -> Result<HSOperator<T>> {
        let x = self.base_state(t, v)?;
        let sigma = self.model.sigma(t, &x);
        let cols = sigma.columns().map(|c| self.frame.lift(t, &c)).collect::<Result<Vec<_>>>()?;
        HSOperator::from_columns(self.frame.space(), cols)
    }
}
