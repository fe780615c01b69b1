//! Numeric falsification probes for the structural conditions on the
//! coefficients: hemicontinuity (H1), local monotonicity (H2'),
//! coercivity (H3), growth (H4') and the side bounds on `σ` and `τ`.
//!
//! Each inequality `LHS ≤ RHS` is reported through its margin
//! `LHS − RHS − tol (1 + |LHS| + |RHS|)`; a condition passes iff its worst
//! margin is `≤ 0`. The rounding allowance scales with the magnitude of the
//! compared terms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{CoefficientModel, Coefficients, DilatedCoefficients, ModelConstants};
use crate::error::Result;
use crate::frame::{aligned_cells, DilationFrame};
use crate::hilbert::{HVec, SpaceSpec};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
pub enum Condition {
    #[serde(rename = "H1")]
    Hemicontinuity,
    #[serde(rename = "H2'")]
    LocalMonotonicity,
    #[serde(rename = "H3")]
    Coercivity,
    #[serde(rename = "H4'")]
    Growth,
    #[serde(rename = "sigma_bound")]
    SigmaBound,
    #[serde(rename = "tau_bound")]
    TauBound,
}

impl Condition {
    pub const ALL: [Condition; 6] = [
        Condition::Hemicontinuity,
        Condition::LocalMonotonicity,
        Condition::Coercivity,
        Condition::Growth,
        Condition::SigmaBound,
        Condition::TauBound,
    ];
}

/// `raw = LHS − RHS`; `scale = |LHS| + |RHS|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margin {
    pub raw: f64,
    pub scale: f64,
}

impl Margin {
    fn new(lhs: f64, rhs: f64) -> Self {
        Margin { raw: lhs - rhs, scale: lhs.abs() + rhs.abs() }
    }

    pub fn adjusted(&self, tol: f64) -> f64 {
        self.raw - tol * (1.0 + self.scale)
    }
}

/// Probe configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct ProbeSettings {
    pub samples: usize,
    pub times: Vec<f64>,
    /// Relative rounding allowance for H2', H3, H4' and the side bounds.
    pub tol: f64,
    pub seed: u64,
    pub radii: Vec<f64>,
    /// Finest hemicontinuity step is `2^{-h1_depth}`.
    pub h1_depth: u32,
    /// Jump threshold for H1, relative to `1 + |⟨α(x), z⟩| + ‖α(x)‖‖z‖`.
    pub h1_tol: f64,
    /// Number of basis directions used as deterministic witnesses.
    pub basis_witnesses: usize,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            samples: 1000,
            times: vec![0.0],
            tol: 1e-10,
            seed: 0,
            radii: vec![0.1, 1.0, 10.0],
            h1_depth: 30,
            h1_tol: 1e-6,
            basis_witnesses: 4,
        }
    }
}

/// Sampled point reproducing a condition's worst margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionOutcome {
    pub condition: Condition,
    pub pass: bool,
    /// Allowance-adjusted worst margin; `≤ 0` iff `pass`.
    pub worst_margin: f64,
    /// `LHS − RHS` at the witness.
    pub raw_margin: f64,
    pub witness: Option<Witness>,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub conditions: Vec<ConditionOutcome>,
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
    /// Smallest `C₀` consistent with (H4') over the evaluated points.
    pub empirical_min_c0: f64,
    pub pass: bool,
}

impl ConditionReport {
    pub fn outcome(&self, c: Condition) -> &ConditionOutcome {
        self.conditions.iter().find(|o| o.condition == c).expect("every condition is reported")
    }
}

fn ip<T: Scalar>(a: &HVec<T>, b: &HVec<T>) -> Result<f64> {
    Ok(a.inner(b)?.as_f64())
}

/// (H2') at `(t, x, y)`.
pub fn h2_margin<T: Scalar, C: Coefficients<T> + ?Sized>(
    coeffs: &C,
    k: &ModelConstants,
    t: f64,
    x: &HVec<T>,
    y: &HVec<T>,
) -> Result<Margin> {
    let d = x.sub(y)?;
    let da = coeffs.drift(t, x)?.sub(&coeffs.drift(t, y)?)?;
    let db = coeffs.diffusion(t, x)?.sub(&coeffs.diffusion(t, y)?)?;
    let lhs = 2.0 * ip(&da, &d)? + db.hs_norm_sq().as_f64();
    let rhs = (k.forcing.eval(t) + k.tau.eval(y.norm().as_f64())) * d.norm_sq().as_f64();
    Ok(Margin::new(lhs, rhs))
}

/// (H3) at `(t, y)`.
pub fn h3_margin<T: Scalar, C: Coefficients<T> + ?Sized>(
    coeffs: &C,
    k: &ModelConstants,
    t: f64,
    y: &HVec<T>,
) -> Result<Margin> {
    let lhs = 2.0 * ip(&coeffs.drift(t, y)?, y)? + coeffs.diffusion(t, y)?.hs_norm_sq().as_f64();
    let rhs = k.growth_rate() * y.norm_sq().as_f64() + k.forcing.eval(t);
    Ok(Margin::new(lhs, rhs))
}

/// (H4') at `(t, y)`.
pub fn h4_margin<T: Scalar, C: Coefficients<T> + ?Sized>(
    coeffs: &C,
    k: &ModelConstants,
    t: f64,
    y: &HVec<T>,
) -> Result<Margin> {
    let lhs = coeffs.drift(t, y)?.norm_sq().as_f64();
    let ny = y.norm().as_f64();
    let rhs = (k.forcing.eval(t) + k.c0 * ny * ny) * (1.0 + ny.powf(k.beta));
    Ok(Margin::new(lhs, rhs))
}

/// `‖σ(t, y)‖²_HS ≤ C (f(t) + ‖y‖²)`.
pub fn sigma_bound_margin<T: Scalar, C: Coefficients<T> + ?Sized>(
    coeffs: &C,
    k: &ModelConstants,
    t: f64,
    y: &HVec<T>,
) -> Result<Margin> {
    let lhs = coeffs.diffusion(t, y)?.hs_norm_sq().as_f64();
    let rhs = k.c * (k.forcing.eval(t) + y.norm_sq().as_f64());
    Ok(Margin::new(lhs, rhs))
}

/// `τ(r) ≤ C (1 + r²)(1 + r^β)`.
pub fn tau_bound_margin(k: &ModelConstants, r: f64) -> Margin {
    Margin::new(k.tau.eval(r), k.c * (1.0 + r * r) * (1.0 + r.powf(k.beta)))
}

/// Continuity of `λ ↦ ⟨α(t, x + λ y), z⟩` at `λ = 0`: `raw` is the
/// largest jump over `λ = ±2^{-depth}`, `scale` the reference magnitude.
pub fn h1_margin<T: Scalar, C: Coefficients<T> + ?Sized>(
    coeffs: &C,
    t: f64,
    x: &HVec<T>,
    y: &HVec<T>,
    z: &HVec<T>,
    depth: u32,
) -> Result<Margin> {
    let ax = coeffs.drift(t, x)?;
    let g0 = ip(&ax, z)?;
    let step = T::of(0.5f64.powi(depth as i32));
    let mut jump = 0.0f64;
    for s in [step, -step] {
        let mut xs = x.clone();
        xs.axpy(s, y)?;
        jump = jump.max((ip(&coeffs.drift(t, &xs)?, z)? - g0).abs());
    }
    Ok(Margin { raw: jump, scale: g0.abs() + ax.norm().as_f64() * z.norm().as_f64() })
}

/// Distribution of probe points over a space.
pub trait SpaceSampler<T: Scalar>: Sync {
    fn space(&self) -> SpaceSpec;
    fn sample(&self, rng: &mut ChaCha8Rng, radius: f64) -> HVec<T>;
}

fn gaussian_direction<T: Scalar>(space: SpaceSpec, rng: &mut ChaCha8Rng) -> HVec<T> {
    let g = HVec::from_fn(space, |_| T::of(rng.sample::<f64, _>(StandardNormal)));
    let n = g.norm();
    if n > T::zero() {
        g.scale(T::one() / n)
    } else {
        g
    }
}

/// Componentwise Gaussian direction, norm uniform in `[0.5, 1.5]·radius`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianSampler {
    pub space: SpaceSpec,
}

impl<T: Scalar> SpaceSampler<T> for GaussianSampler {
    fn space(&self) -> SpaceSpec {
        self.space
    }

    fn sample(&self, rng: &mut ChaCha8Rng, radius: f64) -> HVec<T> {
        let r = radius * (0.5 + rng.random::<f64>());
        gaussian_direction(self.space, rng).scale(T::of(r))
    }
}

/// Sampler over the dilated space mixing generic vectors with lifted
/// states `U_s* ℓ x + noise`, which is where the solver's trajectories live.
#[derive(Debug, Clone, Copy)]
pub struct FrameSampler<'a, T> {
    pub frame: &'a DilationFrame<T>,
}

impl<T: Scalar> SpaceSampler<T> for FrameSampler<'_, T> {
    fn space(&self) -> SpaceSpec {
        self.frame.space()
    }

    fn sample(&self, rng: &mut ChaCha8Rng, radius: f64) -> HVec<T> {
        let r = radius * (0.5 + rng.random::<f64>());
        let noise: HVec<T> = gaussian_direction(self.frame.space(), rng);
        if rng.random_bool(0.5) {
            return noise.scale(T::of(r));
        }
        let steps = (self.frame.horizon() / self.frame.dx()).round() as u64;
        let s = rng.random_range(0..=steps) as f64 * self.frame.dx();
        let x: HVec<T> = gaussian_direction(self.frame.base_space(), rng);
        let mut v = self.frame.lift(s, &x.scale(T::of(r))).expect("aligned lift time");
        v.axpy(T::of(0.05 * r), &noise).expect("same space");
        v
    }
}

#[derive(Debug, Clone, Copy)]
enum PointId {
    Fixed { t: usize, x: usize, y: usize },
    Random(usize),
}

struct Points<'s, T, S: ?Sized> {
    sampler: &'s S,
    settings: &'s ProbeSettings,
    fixed: Vec<HVec<T>>,
}

impl<T: Scalar, S: SpaceSampler<T> + ?Sized> Points<'_, T, S> {
    fn get(&self, id: PointId) -> (f64, HVec<T>, HVec<T>, HVec<T>) {
        match id {
            PointId::Fixed { t, x, y } => {
                let z = self.fixed[(x + y) % self.fixed.len()].clone();
                (self.settings.times[t], self.fixed[x].clone(), self.fixed[y].clone(), z)
            }
            PointId::Random(i) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.settings.seed);
                rng.set_stream(i as u64);
                let nr = self.settings.radii.len();
                let t = self.settings.times[rng.random_range(0..self.settings.times.len())];
                let x = self.sampler.sample(&mut rng, self.settings.radii[i % nr]);
                let y = self.sampler.sample(&mut rng, self.settings.radii[(i / nr) % nr]);
                let z = self.sampler.sample(&mut rng, 1.0);
                (t, x, y, z)
            }
        }
    }
}

const POINT_CONDITIONS: [Condition; 5] = [
    Condition::Hemicontinuity,
    Condition::LocalMonotonicity,
    Condition::Coercivity,
    Condition::Growth,
    Condition::SigmaBound,
];

struct Evaluation {
    margins: [(f64, f64); 5],
    c0_lower: f64,
}

fn evaluate<T: Scalar, C: Coefficients<T> + ?Sized>(
    coeffs: &C,
    k: &ModelConstants,
    settings: &ProbeSettings,
    (t, x, y, z): (f64, HVec<T>, HVec<T>, HVec<T>),
) -> Result<Evaluation> {
    let h1 = h1_margin(coeffs, t, &x, &y, &z, settings.h1_depth)?;
    let h2 = h2_margin(coeffs, k, t, &x, &y)?;
    let h3 = h3_margin(coeffs, k, t, &y)?;
    let h4 = h4_margin(coeffs, k, t, &y)?;
    let sb = sigma_bound_margin(coeffs, k, t, &y)?;
    let ny = y.norm().as_f64();
    let c0_lower = if ny > 0.0 {
        // both sides of (H4') are nonnegative, so LHS = (raw + scale) / 2
        let drift_sq = (h4.raw + h4.scale) / 2.0;
        (drift_sq / (1.0 + ny.powf(k.beta)) - k.forcing.eval(t)) / (ny * ny)
    } else {
        f64::NEG_INFINITY
    };
    Ok(Evaluation {
        margins: [
            (h1.adjusted(settings.h1_tol), h1.raw),
            (h2.adjusted(settings.tol), h2.raw),
            (h3.adjusted(settings.tol), h3.raw),
            (h4.adjusted(settings.tol), h4.raw),
            (sb.adjusted(settings.tol), sb.raw),
        ],
        c0_lower,
    })
}

/// Runs the full inequality battery for `coeffs` against the constants `k`.
pub fn probe<T, C, S>(coeffs: &C, k: &ModelConstants, sampler: &S, settings: &ProbeSettings) -> Result<ConditionReport>
where
    T: Scalar,
    C: Coefficients<T> + ?Sized,
    S: SpaceSampler<T> + ?Sized,
{
    let space = coeffs.space();
    let mut fixed = vec![HVec::zeros(space)];
    let weight_root = space.weight::<f64>().sqrt();
    for &r in &settings.radii {
        for j in 0..settings.basis_witnesses.min(space.dim()) {
            let e = HVec::<T>::unit(space, j).scale(T::of(r / weight_root));
            fixed.push(e.neg());
            fixed.push(e);
        }
    }
    let points = Points { sampler, settings, fixed };

    let mut ids = Vec::new();
    for t in 0..settings.times.len() {
        for x in 0..points.fixed.len() {
            for y in 0..points.fixed.len() {
                ids.push(PointId::Fixed { t, x, y });
            }
        }
    }
    ids.extend((0..settings.samples).map(PointId::Random));

    let evaluations = ids
        .par_iter()
        .map(|&id| evaluate(coeffs, k, settings, points.get(id)))
        .collect::<Result<Vec<_>>>()?;

    let mut worst: [(f64, f64, usize); 5] = [(f64::NEG_INFINITY, 0.0, 0); 5];
    let mut c0_lower = f64::NEG_INFINITY;
    for (i, e) in evaluations.iter().enumerate() {
        for (w, &(adj, raw)) in worst.iter_mut().zip(&e.margins) {
            if adj > w.0 {
                *w = (adj, raw, i);
            }
        }
        c0_lower = c0_lower.max(e.c0_lower);
    }

    let mut conditions = Vec::with_capacity(6);
    for (c, &(adj, raw, i)) in POINT_CONDITIONS.iter().zip(&worst) {
        let (t, x, y, z) = points.get(ids[i]);
        let to_vec = |v: &HVec<T>| v.data().iter().map(|e| e.as_f64()).collect::<Vec<_>>();
        let witness = match c {
            Condition::Hemicontinuity => Witness { t, x: Some(to_vec(&x)), y: Some(to_vec(&y)), z: Some(to_vec(&z)), r: None },
            Condition::LocalMonotonicity => Witness { t, x: Some(to_vec(&x)), y: Some(to_vec(&y)), z: None, r: None },
            _ => Witness { t, x: None, y: Some(to_vec(&y)), z: None, r: None },
        };
        conditions.push(ConditionOutcome {
            condition: *c,
            pass: adj <= 0.0,
            worst_margin: adj,
            raw_margin: raw,
            witness: Some(witness),
            evaluations: ids.len(),
        });
    }

    // radial grid for τ: 0 and 10^{-3} .. 10^{3}
    let radii = std::iter::once(0.0).chain((0..=60).map(|i| 10f64.powf(-3.0 + 0.1 * i as f64)));
    let mut tau_worst = (f64::NEG_INFINITY, 0.0, 0.0);
    let mut tau_count = 0;
    for r in radii {
        let m = tau_bound_margin(k, r);
        let adj = m.adjusted(settings.tol);
        if adj > tau_worst.0 {
            tau_worst = (adj, m.raw, r);
        }
        tau_count += 1;
    }
    conditions.push(ConditionOutcome {
        condition: Condition::TauBound,
        pass: tau_worst.0 <= 0.0,
        worst_margin: tau_worst.0,
        raw_margin: tau_worst.1,
        witness: Some(Witness { t: 0.0, x: None, y: None, z: None, r: Some(tau_worst.2) }),
        evaluations: tau_count,
    });

    let pass = conditions.iter().all(|c| c.pass);
    Ok(ConditionReport {
        conditions,
        samples: ids.len(),
        seed: settings.seed,
        tol: settings.tol,
        empirical_min_c0: c0_lower.max(0.0),
        pass,
    })
}

/// Probes `(α, σ)` on `H` with Gaussian radius-tiered samples.
pub fn probe_conditions<T: Scalar>(model: &CoefficientModel<T>, settings: &ProbeSettings) -> Result<ConditionReport> {
    let sampler = GaussianSampler { space: model.space() };
    probe(model, &model.constants, &sampler, settings)
}

/// Probes `(a, b)` on the dilated space with the base model's constants.
pub fn probe_transferred_conditions<T: Scalar>(
    dc: &DilatedCoefficients<'_, T>,
    settings: &ProbeSettings,
) -> Result<ConditionReport> {
    for &t in &settings.times {
        aligned_cells(t, dc.frame().dx())?;
    }
    let sampler = FrameSampler { frame: dc.frame() };
    probe(dc, &dc.model().constants, &sampler, settings)
}
