//! Built-in coefficient models with automatically derived constants.
//!
//! | id           | drift                          | volatility                         |
//! |--------------|--------------------------------|------------------------------------|
//! | `linear-ou`  | `−D x + g₀ + t g₁`             | constant                           |
//! | `allen-cahn` | `c₁ x − c₂ x³` (pointwise)     | `Σ₀ + κ Σ₁ / (1 + ‖x‖)`            |
//! | `shift-hjm`  | `−a x + HJM drift of γ`        | `γ_j(s) (ν₀ + ν₁ tanh x(s))`       |
//! | `cubic`      | `c x³` (pointwise)             | zero                               |
//! | `zero`       | zero                           | zero                               |
//!
//! `cubic` violates local monotonicity and exists to exercise the prober.

use std::sync::Arc;

use schemars::JsonSchema;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{CoefficientModel, Forcing, ModelConstants, Tau};
use crate::error::{Error, Result};
use crate::hilbert::{HSOperator, HVec, SpaceSpec};
use crate::scalar::Scalar;

/// Model id plus free-form parameters, as found in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ModelSelection {
    pub id: String,
    #[serde(default = "empty_object")]
    pub params: serde_json::Value,
    /// Overrides the derived constants when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<ModelConstants>,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

/// Ids accepted by [`build_model`].
pub fn catalog() -> &'static [&'static str] {
    &["linear-ou", "allen-cahn", "shift-hjm", "cubic", "zero"]
}

/// Constant volatility operator specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VolSpec {
    Zero { noise_dim: usize },
    /// Square diagonal operator; `values.len()` must equal the state dimension.
    Diagonal { values: Vec<f64> },
    /// Explicit columns, one per noise coordinate.
    Columns { columns: Vec<Vec<f64>> },
    /// Column `j` is `a_j cos(j π s / L)` on grids (`L` the grid extent) and
    /// `a_j e_j` on spectral spaces.
    Cosine { amplitudes: Vec<f64> },
}

impl VolSpec {
    pub fn noise_dim(&self, space: SpaceSpec) -> usize {
        match self {
            VolSpec::Zero { noise_dim } => *noise_dim,
            VolSpec::Diagonal { .. } => space.dim(),
            VolSpec::Columns { columns } => columns.len(),
            VolSpec::Cosine { amplitudes } => amplitudes.len(),
        }
    }

    pub fn build<T: Scalar>(&self, space: SpaceSpec) -> Result<HSOperator<T>> {
        let n = space.dim();
        match self {
            VolSpec::Zero { noise_dim } => {
                if *noise_dim == 0 {
                    return Err(Error::Config("noise dimension must be >= 1".into()));
                }
                Ok(HSOperator::zeros(space, *noise_dim))
            }
            VolSpec::Diagonal { values } => {
                let d: Vec<T> = values.iter().map(|&v| T::of(v)).collect();
                HSOperator::diagonal(space, &d)
            }
            VolSpec::Columns { columns } => {
                if columns.is_empty() {
                    return Err(Error::Config("volatility needs at least one column".into()));
                }
                let cols = columns
                    .iter()
                    .map(|c| HVec::from_vec(space, c.iter().map(|&v| T::of(v)).collect()))
                    .collect::<Result<Vec<_>>>()?;
                HSOperator::from_columns(space, cols)
            }
            VolSpec::Cosine { amplitudes } => {
                if amplitudes.is_empty() {
                    return Err(Error::Config("volatility needs at least one amplitude".into()));
                }
                let cols = amplitudes
                    .iter()
                    .enumerate()
                    .map(|(j, &a)| match space.spacing() {
                        Some(dx) => {
                            let extent = dx * (n as f64);
                            Ok(HVec::from_fn(space, |i| {
                                let s = space.coordinate(i).unwrap_or(0.0);
                                T::of(a * (j as f64 * std::f64::consts::PI * s / extent).cos())
                            }))
                        }
                        None if j < n => Ok(HVec::unit(space, j).scale(T::of(a))),
                        None => Err(Error::Config(format!(
                            "cosine volatility has {} columns but the spectral space only {n} modes",
                            amplitudes.len()
                        ))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                HSOperator::from_columns(space, cols)
            }
        }
    }
}

fn parse<P: DeserializeOwned>(id: &str, params: &serde_json::Value) -> Result<P> {
    serde_json::from_value(params.clone()).map_err(|e| Error::Config(format!("parameters of `{id}`: {e}")))
}

fn broadcast(values: &[f64], dim: usize, what: &str) -> Result<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; dim]),
        n if n == dim => Ok(values.to_vec()),
        n => Err(Error::Config(format!("{what} has {n} entries, expected 1 or {dim}"))),
    }
}

fn to_hvec<T: Scalar>(space: SpaceSpec, values: &[f64]) -> Result<HVec<T>> {
    HVec::from_vec(space, values.iter().map(|&v| T::of(v)).collect())
}

fn vec_norm(space: SpaceSpec, values: &[f64]) -> f64 {
    (values.iter().map(|v| v * v).sum::<f64>() * space.weight::<f64>()).sqrt()
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct LinearOuParams {
    /// Extra decay `D = −diag(decay)`, broadcast if a single value.
    #[serde(default = "zero_list")]
    pub decay: Vec<f64>,
    #[serde(default)]
    pub offset: Option<Vec<f64>>,
    #[serde(default)]
    pub offset_slope: Option<Vec<f64>>,
    pub sigma: VolSpec,
}

fn zero_list() -> Vec<f64> {
    vec![0.0]
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AllenCahnParams {
    #[serde(default = "one")]
    pub c1: f64,
    #[serde(default = "one")]
    pub c2: f64,
    #[serde(default)]
    pub kappa: f64,
    pub sigma0: VolSpec,
    #[serde(default)]
    pub sigma1: Option<VolSpec>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ShiftHjmParams {
    #[serde(default)]
    pub mean_reversion: f64,
    /// `γ_j(s) = levels[j] e^{−decays[j] s}`.
    pub levels: Vec<f64>,
    pub decays: Vec<f64>,
    #[serde(default = "one")]
    pub nu0: f64,
    #[serde(default)]
    pub nu1: f64,
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CubicParams {
    #[serde(default = "one")]
    pub coefficient: f64,
    #[serde(default = "one_usize")]
    pub noise_dim: usize,
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ZeroParams {
    #[serde(default = "one_usize")]
    pub noise_dim: usize,
}

fn one_usize() -> usize {
    1
}

/// Builds a catalog model on `space`; constants are derived for `[0, horizon]`
/// unless the selection overrides them.
pub fn build_model<T: Scalar>(sel: &ModelSelection, space: SpaceSpec, horizon: f64) -> Result<CoefficientModel<T>> {
    let model = match sel.id.as_str() {
        "linear-ou" => linear_ou(parse(&sel.id, &sel.params)?, space, horizon)?,
        "allen-cahn" => allen_cahn(parse(&sel.id, &sel.params)?, space)?,
        "shift-hjm" => shift_hjm(parse(&sel.id, &sel.params)?, space)?,
        "cubic" => cubic(parse(&sel.id, &sel.params)?, space),
        "zero" => zero(parse(&sel.id, &sel.params)?, space),
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    let model = match &sel.constants {
        Some(k) => model.with_constants(k.clone()),
        None => model,
    };
    model.constants.validate(horizon)?;
    Ok(model)
}

fn linear_ou<T: Scalar>(p: LinearOuParams, space: SpaceSpec, horizon: f64) -> Result<CoefficientModel<T>> {
    let n = space.dim();
    let decay = broadcast(&p.decay, n, "decay")?;
    if decay.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::Config("linear-ou decay must be >= 0".into()));
    }
    let g0 = match &p.offset {
        Some(v) => broadcast(v, n, "offset")?,
        None => vec![0.0; n],
    };
    let g1 = match &p.offset_slope {
        Some(v) => broadcast(v, n, "offset_slope")?,
        None => vec![0.0; n],
    };
    let sigma: HSOperator<T> = p.sigma.build(space)?;
    let noise_dim = sigma.noise_dim();

    let g_bound = vec_norm(space, &g0) + horizon * vec_norm(space, &g1);
    let gap = if g_bound > 0.0 { 1.0 } else { 0.0 };
    let d_max = decay.iter().fold(0.0f64, |m, d| m.max(*d));
    let c0 = d_max.powi(2).max(1.0) + gap;
    let constants = ModelConstants {
        beta: 0.0,
        c0,
        theta: c0 - gap,
        c: 1.0,
        p: 2.0,
        forcing: Forcing::constant(sigma.hs_norm_sq().as_f64() + g_bound * g_bound),
        tau: Tau::Constant { value: 0.0 },
    };

    let d: Vec<T> = decay.iter().map(|&v| T::of(-v)).collect();
    let g0 = to_hvec::<T>(space, &g0)?;
    let g1 = to_hvec::<T>(space, &g1)?;
    let alpha = Arc::new(move |t: f64, x: &HVec<T>| {
        let tt = T::of(t);
        HVec::from_fn(x.space(), |i| d[i] * x.data()[i] + g0.data()[i] + tt * g1.data()[i])
    });
    Ok(CoefficientModel::new("linear-ou", space, noise_dim, alpha, Arc::new(move |_, _| sigma.clone()), constants))
}

fn allen_cahn<T: Scalar>(p: AllenCahnParams, space: SpaceSpec) -> Result<CoefficientModel<T>> {
    if !(p.c2 >= 0.0) {
        return Err(Error::Config("allen-cahn needs c2 >= 0".into()));
    }
    let sigma0: HSOperator<T> = p.sigma0.build(space)?;
    let sigma1: HSOperator<T> = match &p.sigma1 {
        Some(s) => s.build(space)?,
        None => HSOperator::zeros(space, sigma0.noise_dim()),
    };
    if sigma1.noise_dim() != sigma0.noise_dim() {
        return Err(Error::Config("sigma0 and sigma1 must share the noise dimension".into()));
    }
    let s0 = sigma0.hs_norm().as_f64();
    let s1 = sigma1.hs_norm().as_f64();
    let w = space.weight::<f64>();
    let gap = 2.0 * p.c1.max(0.0);
    // wΣ y⁶ ≤ ‖y‖⁶ / w² on the grid
    let c0 = (2.0 * p.c1 * p.c1).max(2.0 * p.c2 * p.c2 / (w * w)).max(gap + 1.0);
    let tau = gap + p.kappa * p.kappa * s1 * s1;
    let constants = ModelConstants {
        beta: 4.0,
        c0,
        theta: c0 - gap,
        c: tau.max(1.0),
        p: 6.0,
        forcing: Forcing::constant((s0 + p.kappa.abs() * s1).powi(2)),
        tau: Tau::Constant { value: tau },
    };

    let (c1, c2, kappa) = (T::of(p.c1), T::of(p.c2), T::of(p.kappa));
    let alpha = Arc::new(move |_: f64, x: &HVec<T>| x.map(|u| c1 * u - c2 * u * u * u));
    let noise_dim = sigma0.noise_dim();
    let sigma = Arc::new(move |_: f64, x: &HVec<T>| {
        let rho = kappa / (T::one() + x.norm());
        if rho == T::zero() {
            sigma0.clone()
        } else {
            sigma0.add(&sigma1.scale(rho)).expect("same shape")
        }
    });
    Ok(CoefficientModel::new("allen-cahn", space, noise_dim, alpha, sigma, constants))
}

fn shift_hjm<T: Scalar>(p: ShiftHjmParams, space: SpaceSpec) -> Result<CoefficientModel<T>> {
    let SpaceSpec::HalflineGrid { .. } = space else {
        return Err(Error::Config("shift-hjm lives on a half-line grid".into()));
    };
    if p.levels.is_empty() || p.levels.len() != p.decays.len() {
        return Err(Error::Config("shift-hjm needs matching, nonempty levels and decays".into()));
    }
    if !(p.mean_reversion >= 0.0) || p.decays.iter().any(|b| !(*b >= 0.0)) {
        return Err(Error::Config("shift-hjm needs mean_reversion >= 0 and decays >= 0".into()));
    }
    let n = space.dim();
    let s: Vec<f64> = (0..n).map(|i| space.coordinate(i).unwrap_or(0.0)).collect();
    let gamma: Vec<Vec<f64>> = p
        .levels
        .iter()
        .zip(&p.decays)
        .map(|(&a, &b)| s.iter().map(|&si| a * (-b * si).exp()).collect())
        .collect();
    // HJM drift of the deterministic part ν₀ γ_j
    let drift_det: Vec<f64> = (0..n)
        .map(|i| {
            p.levels
                .iter()
                .zip(&p.decays)
                .enumerate()
                .map(|(j, (&a, &b))| {
                    let integral = if b > 0.0 { a * (1.0 - (-b * s[i]).exp()) / b } else { a * s[i] };
                    p.nu0 * p.nu0 * gamma[j][i] * integral
                })
                .sum()
        })
        .collect();
    let w = space.weight::<f64>();
    let g_norm_sq = drift_det.iter().map(|v| v * v).sum::<f64>() * w;
    let gamma_hs_sq: f64 = gamma.iter().flatten().map(|v| v * v).sum::<f64>() * w;
    let gamma_sup_sq = (0..n).map(|i| gamma.iter().map(|g| g[i] * g[i]).sum::<f64>()).fold(0.0, f64::max);
    let tau = p.nu1 * p.nu1 * gamma_sup_sq;
    let c0 = p.mean_reversion.powi(2).max(1.0) + 1.0;
    let constants = ModelConstants {
        beta: 0.0,
        c0,
        theta: c0 - 1.0,
        c: tau.max(1.0),
        p: 2.0,
        forcing: Forcing::constant(g_norm_sq + (p.nu0.abs() + p.nu1.abs()).powi(2) * gamma_hs_sq),
        tau: Tau::Constant { value: tau },
    };

    let a = T::of(p.mean_reversion);
    let g = to_hvec::<T>(space, &drift_det)?;
    let alpha = Arc::new(move |_: f64, x: &HVec<T>| {
        HVec::from_fn(x.space(), |i| g.data()[i] - a * x.data()[i])
    });
    let gamma: Vec<Vec<T>> = gamma.iter().map(|g| g.iter().map(|&v| T::of(v)).collect()).collect();
    let (nu0, nu1) = (T::of(p.nu0), T::of(p.nu1));
    let noise_dim = gamma.len();
    let sigma = Arc::new(move |_: f64, x: &HVec<T>| {
        let cols = gamma
            .iter()
            .map(|g| HVec::from_fn(x.space(), |i| g[i] * (nu0 + nu1 * x.data()[i].tanh())))
            .collect();
        HSOperator::from_columns(x.space(), cols).expect("columns share the state space")
    });
    Ok(CoefficientModel::new("shift-hjm", space, noise_dim, alpha, sigma, constants))
}

fn cubic<T: Scalar>(p: CubicParams, space: SpaceSpec) -> CoefficientModel<T> {
    let c = T::of(p.coefficient);
    let constants = ModelConstants {
        beta: 0.0,
        c0: 1.0,
        theta: 1.0,
        c: 1.0,
        p: 2.0,
        forcing: Forcing::constant(2.0),
        tau: Tau::Constant { value: 0.0 },
    };
    let noise_dim = p.noise_dim.max(1);
    CoefficientModel::new(
        "cubic",
        space,
        noise_dim,
        Arc::new(move |_, x: &HVec<T>| x.map(|u| c * u * u * u)),
        Arc::new(move |_, x: &HVec<T>| HSOperator::zeros(x.space(), noise_dim)),
        constants,
    )
}

fn zero<T: Scalar>(p: ZeroParams, space: SpaceSpec) -> CoefficientModel<T> {
    let constants = ModelConstants {
        beta: 0.0,
        c0: 1.0,
        theta: 1.0,
        c: 0.0,
        p: 2.0,
        forcing: Forcing::constant(0.0),
        tau: Tau::Constant { value: 0.0 },
    };
    let noise_dim = p.noise_dim.max(1);
    CoefficientModel::new(
        "zero",
        space,
        noise_dim,
        Arc::new(|_, x: &HVec<T>| HVec::zeros(x.space())),
        Arc::new(move |_, x: &HVec<T>| HSOperator::zeros(x.space(), noise_dim)),
        constants,
    )
}
