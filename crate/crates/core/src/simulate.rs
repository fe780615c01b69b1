//! Truncated Wiener noise, the Euler–Maruyama integrator on the dilated
//! space, the exponential-Euler mild integrator, and the lift/project maps
//! between their trajectories.
//!
//! Both integrators evaluate coefficients at the left endpoint, so with
//! shared noise they telescope to the same sum
//! `X_N = S_{t_N} ξ + Σ S_{t_N − t_n}(α_n Δt + σ_n ΔW_n)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::coeffs::{CoefficientModel, DilatedCoefficients};
use crate::error::{Error, Result};
use crate::frame::{aligned_cells, ContractionSemigroup, DilationFrame};
use crate::hilbert::HVec;
use crate::scalar::Scalar;

/// Bits of a stream id reserved for the path index.
pub const STREAM_INDEX_BITS: u32 = 48;

/// Stream id `namespace · 2^48 + index`; distinct namespaces never overlap.
pub fn stream_id(namespace: u16, index: u64) -> u64 {
    assert!(index < 1 << STREAM_INDEX_BITS, "path index {index} exceeds the stream range");
    (u64::from(namespace) << STREAM_INDEX_BITS) | index
}

/// Time grid and noise law: `ΔW_n ~ N(0, Δt I_m)` i.i.d. for `n < steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct NoisePlan {
    pub noise_dim: usize,
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
}

impl NoisePlan {
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.noise_dim == 0 {
            errors.push("noise dimension must be >= 1".to_string());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            errors.push(format!("dt must be finite and > 0, got {}", self.dt));
        }
        if self.steps == 0 {
            errors.push("steps must be >= 1".to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors.join("; ")))
        }
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|n| self.time(n)).collect()
    }

    /// Grid index of an aligned time.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let k = aligned_cells(t, self.dt)?;
        if k < 0 || k as usize > self.steps {
            return Err(Error::Config(format!("time {t} lies outside [0, {}]", self.horizon())));
        }
        Ok(k as usize)
    }

    /// Plan with `factor` times as many steps of size `dt / factor`.
    pub fn refined(&self, factor: usize) -> NoisePlan {
        NoisePlan { dt: self.dt / factor as f64, steps: self.steps * factor, ..*self }
    }

    /// The increment matrix of one stream.
    pub fn increments<T: Scalar>(&self, stream: u64) -> Increments<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let sd = self.dt.sqrt();
        let data = (0..self.steps * self.noise_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::of(sd * z)
            })
            .collect();
        Increments { noise_dim: self.noise_dim, dt: self.dt, steps: self.steps, stream, data }
    }
}

/// `sample_increments(plan, stream)`.
pub fn sample_increments<T: Scalar>(plan: &NoisePlan, stream: u64) -> Increments<T> {
    plan.increments(stream)
}

/// Row-major `steps × m` Brownian increments of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct Increments<T> {
    noise_dim: usize,
    dt: f64,
    steps: usize,
    stream: u64,
    data: Vec<T>,
}

impl<T: Scalar> Increments<T> {
    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn row(&self, n: usize) -> &[T] {
        &self.data[n * self.noise_dim..(n + 1) * self.noise_dim]
    }

    /// Increments of the same Brownian path on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Increments<T>> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(Error::Config(format!("cannot coarsen {} steps by {factor}", self.steps)));
        }
        let m = self.noise_dim;
        let steps = self.steps / factor;
        let mut data = vec![T::zero(); steps * m];
        for n in 0..steps {
            for k in 0..factor {
                for (d, &s) in data[n * m..(n + 1) * m].iter_mut().zip(self.row(n * factor + k)) {
                    *d = *d + s;
                }
            }
        }
        Ok(Increments { noise_dim: m, dt: self.dt * factor as f64, steps, stream: self.stream, data })
    }
}

/// Where a path came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: String,
    pub frame: String,
    pub scheme: String,
    pub seed: u64,
    pub stream: u64,
}

/// Trajectory on the grid indices `start..=end` of a noise plan.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath<T> {
    pub times: Vec<f64>,
    pub start_index: usize,
    /// States `Y_n` on the dilated space.
    pub dilated: Option<Vec<HVec<T>>>,
    /// States `X_n` on `H`.
    pub mild: Option<Vec<HVec<T>>>,
    pub provenance: Provenance,
}

fn check_range(steps: usize, start: usize, end: usize) -> Result<()> {
    if start > end || end > steps {
        return Err(Error::Config(format!("step range {start}..={end} is outside 0..={steps}")));
    }
    Ok(())
}

fn guard<T: Scalar>(x: &HVec<T>, step: usize, stream: u64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { step, path: stream })
    }
}

/// Integrator producing mild-solution states `X_n` on `H`.
pub trait MildScheme<T: Scalar>: Sync {
    fn id(&self) -> &'static str;
    fn model(&self) -> &CoefficientModel<T>;
    /// Name of the semigroup or frame, for provenance.
    fn frame_id(&self) -> String;
    /// Rejects step sizes incompatible with the scheme's grid.
    fn check_dt(&self, dt: f64) -> Result<()>;
    /// Starts from `X_start = ξ`, calls `visit(n, X_n)` for `n = start..=end`.
    fn run(
        &self,
        xi: &HVec<T>,
        inc: &Increments<T>,
        start: usize,
        end: usize,
        visit: &mut dyn FnMut(usize, &HVec<T>),
    ) -> Result<()>;

    /// `X_end` alone.
    fn terminal(&self, xi: &HVec<T>, inc: &Increments<T>, start: usize, end: usize) -> Result<HVec<T>> {
        let mut last = xi.clone();
        self.run(xi, inc, start, end, &mut |n, x| {
            if n == end {
                last = x.clone();
            }
        })?;
        Ok(last)
    }

    /// States `X_start..=X_end`.
    fn states(&self, xi: &HVec<T>, inc: &Increments<T>, start: usize, end: usize) -> Result<Vec<HVec<T>>> {
        let mut out = Vec::with_capacity((end + 1).saturating_sub(start));
        self.run(xi, inc, start, end, &mut |_, x| out.push(x.clone()))?;
        Ok(out)
    }
}

fn semigroup_id<T: Scalar>(s: &ContractionSemigroup<T>) -> String {
    match s {
        ContractionSemigroup::Diagonal { rates } => format!("diagonal{:?}", rates.iter().map(|r| r.as_f64()).collect::<Vec<_>>()),
        ContractionSemigroup::Shift { dx, points } => format!("shift(dx={dx},points={points})"),
        ContractionSemigroup::Identity { dim } => format!("identity({dim})"),
    }
}

/// Exponential Euler `X_{n+1} = S_Δt(X_n + α Δt + σ ΔW_n)`.
#[derive(Debug, Clone, Copy)]
pub struct DirectScheme<'a, T> {
    pub model: &'a CoefficientModel<T>,
    pub semigroup: &'a ContractionSemigroup<T>,
}

impl<'a, T: Scalar> DirectScheme<'a, T> {
    pub fn new(model: &'a CoefficientModel<T>, semigroup: &'a ContractionSemigroup<T>) -> Result<Self> {
        if model.space() != semigroup.space() {
            return Err(Error::SpaceMismatch { left: model.space(), right: semigroup.space() });
        }
        Ok(DirectScheme { model, semigroup })
    }
}

impl<T: Scalar> MildScheme<T> for DirectScheme<'_, T> {
    fn id(&self) -> &'static str {
        "exponential-euler"
    }

    fn model(&self) -> &CoefficientModel<T> {
        self.model
    }

    fn frame_id(&self) -> String {
        semigroup_id(self.semigroup)
    }

    fn check_dt(&self, dt: f64) -> Result<()> {
        if let ContractionSemigroup::Shift { dx, .. } = self.semigroup {
            aligned_cells(dt, *dx)?;
        }
        Ok(())
    }

    fn run(
        &self,
        xi: &HVec<T>,
        inc: &Increments<T>,
        start: usize,
        end: usize,
        visit: &mut dyn FnMut(usize, &HVec<T>),
    ) -> Result<()> {
        check_range(inc.steps(), start, end)?;
        self.check_dt(inc.dt())?;
        if xi.space() != self.model.space() {
            return Err(Error::SpaceMismatch { left: xi.space(), right: self.model.space() });
        }
        let dt = T::of(inc.dt());
        let mut x = xi.clone();
        visit(start, &x);
        for n in start..end {
            let t = n as f64 * inc.dt();
            let mut y = self.model.sigma(t, &x).apply(inc.row(n))?;
            y.axpy(dt, &self.model.alpha(t, &x))?;
            y.axpy(T::one(), &x)?;
            x = self.semigroup.apply(inc.dt(), &y)?;
            guard(&x, n + 1, inc.stream())?;
            visit(n + 1, &x);
        }
        Ok(())
    }
}

/// Euler–Maruyama on the dilated space, `Y_{n+1} = Y_n + a Δt + b ΔW_n`,
/// observed through `X_n = π U_{t_n} Y_n`.
#[derive(Debug, Clone, Copy)]
pub struct FrameScheme<'a, T> {
    pub dc: DilatedCoefficients<'a, T>,
}

impl<'a, T: Scalar> FrameScheme<'a, T> {
    pub fn new(dc: DilatedCoefficients<'a, T>) -> Self {
        FrameScheme { dc }
    }

    pub fn frame(&self) -> &'a DilationFrame<T> {
        self.dc.frame()
    }

    /// Starts from `Y_start = η`, calls `visit(n, Y_n)` for `n = start..=end`.
    pub fn run_dilated(
        &self,
        eta: &HVec<T>,
        inc: &Increments<T>,
        start: usize,
        end: usize,
        visit: &mut dyn FnMut(usize, &HVec<T>),
    ) -> Result<()> {
        check_range(inc.steps(), start, end)?;
        self.check_dt(inc.dt())?;
        let frame = self.frame();
        if end as f64 * inc.dt() > frame.horizon() * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "run ends at t = {} beyond the frame horizon {}",
                end as f64 * inc.dt(),
                frame.horizon()
            )));
        }
        if eta.space() != frame.space() {
            return Err(Error::SpaceMismatch { left: eta.space(), right: frame.space() });
        }
        let dt = T::of(inc.dt());
        let mut y = eta.clone();
        visit(start, &y);
        for n in start..end {
            let t = n as f64 * inc.dt();
            let x = self.dc.base_state(t, &y)?;
            let mut incr = self.dc.model().sigma(t, &x).apply(inc.row(n))?;
            incr.axpy(dt, &self.dc.model().alpha(t, &x))?;
            frame.add_lifted(t, &incr, &mut y)?;
            guard(&y, n + 1, inc.stream())?;
            visit(n + 1, &y);
        }
        Ok(())
    }
}

impl<T: Scalar> MildScheme<T> for FrameScheme<'_, T> {
    fn id(&self) -> &'static str {
        "moving-frame-euler"
    }

    fn model(&self) -> &CoefficientModel<T> {
        self.dc.model()
    }

    fn frame_id(&self) -> String {
        format!("dilation of {}", semigroup_id(self.frame().base()))
    }

    fn check_dt(&self, dt: f64) -> Result<()> {
        if matches!(self.frame().base(), ContractionSemigroup::Identity { .. }) {
            return Ok(());
        }
        aligned_cells(dt, self.frame().dx()).map(|_| ())
    }

    /// Starts from `Y_start = U_{t_start}* ℓ ξ` and projects every state.
    fn run(
        &self,
        xi: &HVec<T>,
        inc: &Increments<T>,
        start: usize,
        end: usize,
        visit: &mut dyn FnMut(usize, &HVec<T>),
    ) -> Result<()> {
        let frame = self.frame();
        let eta = frame.lift(start as f64 * inc.dt(), xi)?;
        let mut failure = None;
        self.run_dilated(&eta, inc, start, end, &mut |n, y| {
            if failure.is_some() {
                return;
            }
            match frame.project_translated(n as f64 * inc.dt(), y) {
                Ok(x) => visit(n, &x),
                Err(e) => failure = Some(e),
            }
        })?;
        failure.map_or(Ok(()), Err)
    }
}

fn provenance<T: Scalar>(scheme: &dyn MildScheme<T>, plan: &NoisePlan, stream: u64) -> Provenance {
    Provenance {
        model: scheme.model().id.clone(),
        frame: scheme.frame_id(),
        scheme: scheme.id().to_string(),
        seed: plan.seed,
        stream,
    }
}

fn check_plan<T: Scalar>(plan: &NoisePlan, model: &CoefficientModel<T>) -> Result<()> {
    plan.validate()?;
    if plan.noise_dim != model.noise_dim() {
        return Err(Error::DimensionMismatch { expected: model.noise_dim(), actual: plan.noise_dim });
    }
    Ok(())
}

/// Euler–Maruyama path of the dilated SDE from `Y_start = η`.
pub fn solve_sde_euler<T: Scalar>(
    dc: &DilatedCoefficients<'_, T>,
    eta: &HVec<T>,
    plan: &NoisePlan,
    stream: u64,
    start: usize,
) -> Result<SamplePath<T>> {
    check_plan(plan, dc.model())?;
    let inc = plan.increments(stream);
    solve_sde_euler_with_increments(dc, eta, plan, &inc, start)
}

pub fn solve_sde_euler_with_increments<T: Scalar>(
    dc: &DilatedCoefficients<'_, T>,
    eta: &HVec<T>,
    plan: &NoisePlan,
    inc: &Increments<T>,
    start: usize,
) -> Result<SamplePath<T>> {
    let scheme = FrameScheme::new(*dc);
    let mut states = Vec::with_capacity((plan.steps + 1).saturating_sub(start));
    scheme.run_dilated(eta, inc, start, plan.steps, &mut |_, y| states.push(y.clone()))?;
    Ok(SamplePath {
        times: (start..=plan.steps).map(|n| plan.time(n)).collect(),
        start_index: start,
        dilated: Some(states),
        mild: None,
        provenance: provenance(&scheme, plan, inc.stream()),
    })
}

/// Fills `X_n = π U_{t_n} Y_n`.
pub fn project_mild<T: Scalar>(frame: &DilationFrame<T>, path: &SamplePath<T>) -> Result<SamplePath<T>> {
    let ys = path
        .dilated
        .as_ref()
        .ok_or_else(|| Error::Config("path has no dilated states to project".into()))?;
    let mild = path
        .times
        .iter()
        .zip(ys)
        .map(|(&t, y)| frame.project_translated(t, y))
        .collect::<Result<Vec<_>>>()?;
    Ok(SamplePath { mild: Some(mild), ..path.clone() })
}

/// Fills `Y` from a known mild path: `Y_start = U_{t_start}* ℓ X_start`,
/// `Y_{n+1} = Y_n + U_{t_n}* ℓ(α(t_n, X_n) Δt + σ(t_n, X_n) ΔW_n)`.
pub fn lift_mild<T: Scalar>(
    dc: &DilatedCoefficients<'_, T>,
    path: &SamplePath<T>,
    plan: &NoisePlan,
) -> Result<SamplePath<T>> {
    check_plan(plan, dc.model())?;
    let inc = plan.increments(path.provenance.stream);
    lift_mild_with_increments(dc, path, plan, &inc)
}

pub fn lift_mild_with_increments<T: Scalar>(
    dc: &DilatedCoefficients<'_, T>,
    path: &SamplePath<T>,
    plan: &NoisePlan,
    inc: &Increments<T>,
) -> Result<SamplePath<T>> {
    let xs = path.mild.as_ref().ok_or_else(|| Error::Config("path has no mild states to lift".into()))?;
    let start = path.start_index;
    let expected: Vec<f64> = (start..=plan.steps).map(|n| plan.time(n)).collect();
    if path.times != expected || xs.len() != expected.len() || inc.steps() != plan.steps {
        return Err(Error::Config("path grid does not match the noise plan".into()));
    }
    let frame = dc.frame();
    let model = dc.model();
    let dt = T::of(plan.dt);
    let mut y = frame.lift(plan.time(start), &xs[0])?;
    let mut ys = vec![y.clone()];
    for (k, x) in xs[..xs.len() - 1].iter().enumerate() {
        let n = start + k;
        let t = plan.time(n);
        let mut incr = model.sigma(t, x).apply(inc.row(n))?;
        incr.axpy(dt, &model.alpha(t, x))?;
        frame.add_lifted(t, &incr, &mut y)?;
        ys.push(y.clone());
    }
    Ok(SamplePath { dilated: Some(ys), ..path.clone() })
}

/// Exponential-Euler mild path from `X_start = ξ`.
pub fn solve_mild_direct<T: Scalar>(
    semigroup: &ContractionSemigroup<T>,
    model: &CoefficientModel<T>,
    xi: &HVec<T>,
    plan: &NoisePlan,
    stream: u64,
    start: usize,
) -> Result<SamplePath<T>> {
    check_plan(plan, model)?;
    let inc = plan.increments(stream);
    solve_mild_direct_with_increments(semigroup, model, xi, plan, &inc, start)
}

pub fn solve_mild_direct_with_increments<T: Scalar>(
    semigroup: &ContractionSemigroup<T>,
    model: &CoefficientModel<T>,
    xi: &HVec<T>,
    plan: &NoisePlan,
    inc: &Increments<T>,
    start: usize,
) -> Result<SamplePath<T>> {
    let scheme = DirectScheme::new(model, semigroup)?;
    let states = scheme.states(xi, inc, start, plan.steps)?;
    Ok(SamplePath {
        times: (start..=plan.steps).map(|n| plan.time(n)).collect(),
        start_index: start,
        dilated: None,
        mild: Some(states),
        provenance: provenance(&scheme, plan, inc.stream()),
    })
}

/// Largest `‖X_n − X'_n‖` over the common grid.
pub fn sup_distance<T: Scalar>(a: &[HVec<T>], b: &[HVec<T>]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    a.iter().zip(b).try_fold(0.0f64, |m, (x, y)| Ok(m.max(x.distance(y)?.as_f64())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{build_model, transform_to_frame, ModelSelection};
    use crate::frame::DEFAULT_EPS_FRAME;
    use crate::hilbert::SpaceSpec;
    use serde_json::json;

    fn model(id: &str, params: serde_json::Value, space: SpaceSpec) -> CoefficientModel<f64> {
        build_model(&ModelSelection { id: id.into(), params, constants: None }, space, 1.0).unwrap()
    }

    fn allen_cahn(space: SpaceSpec) -> CoefficientModel<f64> {
        model(
            "allen-cahn",
            json!({"c1": 1.0, "c2": 1.0, "kappa": 0.5,
                "sigma0": {"kind": "cosine", "amplitudes": [0.5, 0.3]},
                "sigma1": {"kind": "cosine", "amplitudes": [0.2, 0.1]}}),
            space,
        )
    }

    #[test]
    fn increments_are_reproducible_and_stream_separated() {
        let plan = NoisePlan { noise_dim: 3, dt: 0.01, steps: 50, seed: 7 };
        let a: Increments<f64> = plan.increments(stream_id(0, 4));
        let b: Increments<f64> = sample_increments(&plan, stream_id(0, 4));
        assert_eq!(a, b);
        assert_ne!(a, plan.increments(stream_id(0, 5)));
        assert_ne!(a, plan.increments(stream_id(1, 4)));
        let other_seed = NoisePlan { seed: 8, ..plan };
        assert_ne!(a, other_seed.increments(stream_id(0, 4)));
    }

    #[test]
    fn first_increment_moments_match_clt_bounds() {
        let n = 100_000usize;
        let plan = NoisePlan { noise_dim: 2, dt: 0.01, steps: 1, seed: 3 };
        let rows: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let inc: Increments<f64> = plan.increments(i as u64);
                [inc.row(0)[0], inc.row(0)[1]]
            })
            .collect();
        let nf = n as f64;
        let bound = 3.0 * (plan.dt / nf).sqrt();
        for k in 0..2 {
            let mean = rows.iter().map(|r| r[k]).sum::<f64>() / nf;
            assert!(mean.abs() <= bound, "mean {mean}");
            let var = rows.iter().map(|r| r[k] * r[k]).sum::<f64>() / nf;
            // Var(ΔW²) = 2 Δt²
            assert!((var - plan.dt).abs() <= 3.0 * (2.0f64).sqrt() * plan.dt / nf.sqrt(), "var {var}");
        }
        let cov = rows.iter().map(|r| r[0] * r[1]).sum::<f64>() / nf;
        assert!(cov.abs() <= 3.0 * plan.dt / nf.sqrt(), "cov {cov}");
    }

    #[test]
    fn coarsening_sums_fine_increments() {
        let plan = NoisePlan { noise_dim: 2, dt: 0.25, steps: 8, seed: 1 };
        let fine: Increments<f64> = plan.increments(0);
        let coarse = fine.coarsen(4).unwrap();
        assert_eq!(coarse.steps(), 2);
        assert_eq!(coarse.dt(), 1.0);
        let want: f64 = (4..8).map(|n| fine.row(n)[1]).sum();
        assert!((coarse.row(1)[1] - want).abs() <= 1e-15);
        assert!(fine.coarsen(3).is_err());
    }

    #[test]
    fn zero_coefficients_keep_dilated_state() {
        let sg = ContractionSemigroup::shift(0.1, 6).unwrap();
        let frame = DilationFrame::with_minimal_window(&sg, 0.1, 1.0, DEFAULT_EPS_FRAME).unwrap();
        let m = model("zero", json!({"noise_dim": 2}), frame.base_space());
        let dc = transform_to_frame(&m, &frame).unwrap();
        let plan = NoisePlan { noise_dim: 2, dt: 0.1, steps: 10, seed: 0 };
        let eta = HVec::from_fn(frame.space(), |i| (i as f64).cos());
        let path = solve_sde_euler(&dc, &eta, &plan, 0, 0).unwrap();
        assert!(path.dilated.unwrap().iter().all(|y| *y == eta));
    }

    #[test]
    fn scalar_contraction_recursion() {
        let sg = ContractionSemigroup::<f64>::Identity { dim: 1 };
        let frame = DilationFrame::with_minimal_window(&sg, 0.1, 1.0, DEFAULT_EPS_FRAME).unwrap();
        let m = model("linear-ou", json!({"decay": [1.0], "sigma": {"kind": "zero", "noise_dim": 1}}), frame.base_space());
        let dc = transform_to_frame(&m, &frame).unwrap();
        let plan = NoisePlan { noise_dim: 1, dt: 0.1, steps: 10, seed: 0 };
        let eta = HVec::from_vec(frame.space(), vec![1.0]).unwrap();
        let path = solve_sde_euler(&dc, &eta, &plan, 0, 0).unwrap();
        let mut y = 1.0f64;
        for _ in 0..10 {
            y += -y * 0.1;
        }
        let last = path.dilated.unwrap().last().unwrap().data()[0];
        assert_eq!(last, y);
        assert!((last - 0.34867844).abs() <= 1e-8);
    }

    #[test]
    fn projection_of_constant_lift_follows_semigroup() {
        let sg = ContractionSemigroup::diagonal(vec![1.0, 4.0]).unwrap();
        let frame = DilationFrame::with_minimal_window(&sg, 0.05, 1.0, DEFAULT_EPS_FRAME).unwrap();
        let x = HVec::from_vec(frame.base_space(), vec![1.0, -0.5]).unwrap();
        let eta = frame.embed(&x).unwrap();
        let times: Vec<f64> = (0..=20).map(|n| n as f64 * 0.05).collect();
        let path = SamplePath {
            times: times.clone(),
            start_index: 0,
            dilated: Some(vec![eta; times.len()]),
            mild: None,
            provenance: Provenance { model: "-".into(), frame: "-".into(), scheme: "-".into(), seed: 0, stream: 0 },
        };
        let projected = project_mild(&frame, &path).unwrap();
        for (t, xn) in times.iter().zip(projected.mild.unwrap()) {
            let want = [(-t).exp(), -0.5 * (-4.0 * t).exp()];
            for (a, b) in xn.data().iter().zip(want) {
                assert!((a - b).abs() <= 1e-9, "t = {t}: {a} vs {b}");
            }
        }
        let zero = SamplePath { dilated: Some(vec![HVec::zeros(frame.space()); 21]), ..path };
        assert!(project_mild(&frame, &zero).unwrap().mild.unwrap().iter().all(|x| x.max_abs() == 0.0));
    }

    #[test]
    fn direct_scheme_with_zero_coefficients_is_the_semigroup() {
        let sg = ContractionSemigroup::diagonal(vec![1.0, 2.0]).unwrap();
        let m = model("zero", json!({}), sg.space());
        let plan = NoisePlan { noise_dim: 1, dt: 0.1, steps: 10, seed: 0 };
        let xi = HVec::from_vec(sg.space(), vec![1.0, 1.0]).unwrap();
        let path = solve_mild_direct(&sg, &m, &xi, &plan, 0, 0).unwrap();
        for (n, x) in path.mild.unwrap().iter().enumerate() {
            let t = n as f64 * 0.1;
            assert!((x.data()[0] - (-t).exp()).abs() <= 1e-14);
            assert!((x.data()[1] - (-2.0 * t).exp()).abs() <= 1e-14);
        }
    }

    #[test]
    fn lift_of_zero_model_is_constant_embedding() {
        let sg = ContractionSemigroup::diagonal(vec![1.0]).unwrap();
        let frame = DilationFrame::with_minimal_window(&sg, 0.1, 1.0, DEFAULT_EPS_FRAME).unwrap();
        let m = model("zero", json!({}), frame.base_space());
        let dc = transform_to_frame(&m, &frame).unwrap();
        let plan = NoisePlan { noise_dim: 1, dt: 0.1, steps: 10, seed: 2 };
        let xi = HVec::from_vec(frame.base_space(), vec![0.3]).unwrap();
        let x = solve_mild_direct(frame.base(), &m, &xi, &plan, 0, 0).unwrap();
        let lifted = lift_mild(&dc, &x, &plan).unwrap();
        let l = frame.embed(&xi).unwrap();
        assert!(lifted.dilated.unwrap().iter().all(|y| *y == l));
    }

    #[test]
    fn deterministic_lift_matches_direct_sum() {
        let sg = ContractionSemigroup::diagonal(vec![2.0]).unwrap();
        let frame = DilationFrame::with_minimal_window(&sg, 0.05, 1.0, DEFAULT_EPS_FRAME).unwrap();
        let m = model("linear-ou", json!({"decay": [1.0], "offset": [0.5], "sigma": {"kind": "zero", "noise_dim": 1}}), frame.base_space());
        let dc = transform_to_frame(&m, &frame).unwrap();
        let plan = NoisePlan { noise_dim: 1, dt: 0.05, steps: 20, seed: 0 };
        let xi = HVec::from_vec(frame.base_space(), vec![1.0]).unwrap();
        let x = solve_mild_direct(frame.base(), &m, &xi, &plan, 0, 0).unwrap();
        let lifted = lift_mild(&dc, &x, &plan).unwrap();
        let xs = x.mild.as_ref().unwrap();
        let mut oracle = frame.embed(&xi).unwrap();
        for (n, xn) in xs.iter().take(plan.steps).enumerate() {
            let t = plan.time(n);
            let a = m.alpha(t, xn).scale(plan.dt);
            let term = frame.translate_adjoint(t, &frame.embed(&a).unwrap()).unwrap();
            oracle = oracle.add(&term).unwrap();
        }
        let last = lifted.dilated.as_ref().unwrap().last().unwrap();
        assert!(last.distance(&oracle).unwrap() <= 1e-13);
        // and the lift projects back onto the mild path
        let back = project_mild(&frame, &lifted).unwrap();
        assert!(sup_distance(back.mild.as_ref().unwrap(), xs).unwrap() <= 1e-9);
    }

    #[test]
    fn schemes_agree_on_shared_noise() {
        let dx = 0.01;
        let sg = ContractionSemigroup::shift(dx, 16).unwrap();
        let frame = DilationFrame::with_minimal_window(&sg, dx, 1.0, DEFAULT_EPS_FRAME).unwrap();
        let m = allen_cahn(frame.base_space());
        let dc = transform_to_frame(&m, &frame).unwrap();
        let plan = NoisePlan { noise_dim: 2, dt: dx, steps: 100, seed: 11 };
        let xi = HVec::from_fn(frame.base_space(), |i| (i as f64 * 0.4).sin());
        for p in 0..5 {
            let direct = solve_mild_direct(&sg, &m, &xi, &plan, p, 0).unwrap();
            let eta = frame.embed(&xi).unwrap();
            let framed = project_mild(&frame, &solve_sde_euler(&dc, &eta, &plan, p, 0).unwrap()).unwrap();
            let d = sup_distance(direct.mild.as_ref().unwrap(), framed.mild.as_ref().unwrap()).unwrap();
            assert!(d <= 1e-8, "path {p}: {d}");
            // lift of the direct path reproduces the dilated run
            let lifted = lift_mild(&dc, &direct, &plan).unwrap();
            let ys = framed.dilated.as_ref().unwrap();
            assert!(sup_distance(lifted.dilated.as_ref().unwrap(), ys).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn schemes_agree_through_diagonal_frame() {
        let sg = ContractionSemigroup::diagonal(vec![1.0, 4.0]).unwrap();
        let frame = DilationFrame::with_minimal_window(&sg, 0.05, 1.0, DEFAULT_EPS_FRAME).unwrap();
        let m = model("allen-cahn", json!({"kappa": 0.5, "sigma0": {"kind": "diagonal", "values": [0.5, 0.5]},
            "sigma1": {"kind": "diagonal", "values": [0.2, 0.1]}}), frame.base_space());
        let dc = transform_to_frame(&m, &frame).unwrap();
        let plan = NoisePlan { noise_dim: 2, dt: 0.05, steps: 20, seed: 4 };
        let xi = HVec::from_vec(frame.base_space(), vec![0.5, -1.0]).unwrap();
        let direct = DirectScheme::new(&m, &sg).unwrap();
        let framed = FrameScheme::new(dc);
        let inc = plan.increments(0);
        let a = direct.states(&xi, &inc, 0, plan.steps).unwrap();
        let b = framed.states(&xi, &inc, 0, plan.steps).unwrap();
        assert!(sup_distance(&a, &b).unwrap() <= 1e-8);
    }

    #[test]
    fn exponential_euler_variance_is_the_riemann_sum() {
        let sg = ContractionSemigroup::diagonal(vec![1.0]).unwrap();
        let m = model("linear-ou", json!({"sigma": {"kind": "diagonal", "values": [1.0]}}), sg.space());
        let plan = NoisePlan { noise_dim: 1, dt: 0.05, steps: 20, seed: 5 };
        let scheme = DirectScheme::new(&m, &sg).unwrap();
        let xi = HVec::zeros(sg.space());
        let n = 20_000;
        let finals: Vec<f64> = (0..n)
            .map(|p| scheme.terminal(&xi, &plan.increments(p as u64), 0, plan.steps).unwrap().data()[0])
            .collect();
        let second: Vec<f64> = finals.iter().map(|x| x * x).collect();
        let mean = second.iter().sum::<f64>() / n as f64;
        let sd = (second.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let riemann: f64 = (0..plan.steps).map(|k| (-2.0 * (1.0 - plan.time(k))).exp() * plan.dt).sum();
        assert!((mean - riemann).abs() <= 3.0 * sd / (n as f64).sqrt(), "{mean} vs {riemann}");
        let limit = (1.0 - (-2.0f64).exp()) / 2.0;
        assert!((riemann - limit).abs() < 0.05 * limit);
    }

    #[test]
    fn contraction_decays_monotonically() {
        let sg = ContractionSemigroup::shift(0.05, 10).unwrap();
        let m = model("linear-ou", json!({"decay": [1.0], "sigma": {"kind": "zero", "noise_dim": 1}}), sg.space());
        let plan = NoisePlan { noise_dim: 1, dt: 0.05, steps: 20, seed: 0 };
        let xi = HVec::from_fn(sg.space(), |i| 1.0 + i as f64);
        let xs = solve_mild_direct(&sg, &m, &xi, &plan, 0, 0).unwrap().mild.unwrap();
        assert!(xs.windows(2).all(|w| w[1].norm() <= w[0].norm()));
    }

    #[test]
    fn blow_up_is_reported_with_its_step() {
        let sg = ContractionSemigroup::<f64>::Identity { dim: 1 };
        let m = model("cubic", json!({}), sg.space());
        let plan = NoisePlan { noise_dim: 1, dt: 0.5, steps: 20, seed: 0 };
        let xi = HVec::from_vec(sg.space(), vec![10.0]).unwrap();
        match solve_mild_direct(&sg, &m, &xi, &plan, 42, 0) {
            Err(Error::NonFinite { step, path }) => {
                assert!((1..=20).contains(&step));
                assert_eq!(path, 42);
            }
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn misaligned_and_out_of_range_runs_are_rejected() {
        let sg = ContractionSemigroup::shift(0.1, 4).unwrap();
        let m = model("zero", json!({}), sg.space());
        let xi = HVec::zeros(sg.space());
        let plan = NoisePlan { noise_dim: 1, dt: 0.15, steps: 4, seed: 0 };
        assert!(matches!(solve_mild_direct(&sg, &m, &xi, &plan, 0, 0), Err(Error::Misaligned { .. })));
        let plan = NoisePlan { noise_dim: 1, dt: 0.1, steps: 4, seed: 0 };
        assert!(solve_mild_direct(&sg, &m, &xi, &plan, 0, 5).is_err());
        let wrong_noise = NoisePlan { noise_dim: 2, ..plan };
        assert!(matches!(solve_mild_direct(&sg, &m, &xi, &wrong_noise, 0, 0), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn f32_paths_track_f64_paths() {
        let sg64 = ContractionSemigroup::diagonal(vec![1.0, 2.0]).unwrap();
        let sg32 = ContractionSemigroup::diagonal(vec![1.0f32, 2.0]).unwrap();
        let sel = ModelSelection {
            id: "linear-ou".into(),
            params: json!({"sigma": {"kind": "diagonal", "values": [0.5, 0.5]}}),
            constants: None,
        };
        let m64 = build_model::<f64>(&sel, sg64.space(), 1.0).unwrap();
        let m32 = build_model::<f32>(&sel, sg32.space(), 1.0).unwrap();
        let plan = NoisePlan { noise_dim: 2, dt: 0.1, steps: 10, seed: 3 };
        let x64 = solve_mild_direct(&sg64, &m64, &HVec::from_vec(sg64.space(), vec![1.0, 1.0]).unwrap(), &plan, 0, 0).unwrap();
        let x32 = solve_mild_direct(&sg32, &m32, &HVec::from_vec(sg32.space(), vec![1.0, 1.0]).unwrap(), &plan, 0, 0).unwrap();
        for (a, b) in x64.mild.unwrap().iter().zip(x32.mild.unwrap()) {
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u - f64::from(*v)).abs() <= 1e-5);
            }
        }
    }
}
