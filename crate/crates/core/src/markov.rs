//! Monte Carlo checks of the flow and Markov properties, the
//! Chapman–Kolmogorov equation, the a-priori moment bound, the exponentially
//! weighted Lipschitz estimate and the strong convergence order.
//!
//! Every estimator collects per-path values in path-index order and reduces
//! them sequentially, so results do not depend on the thread count.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::coeffs::{CoefficientModel, DilatedCoefficients};
use crate::error::{Error, Result};
use crate::frame::ContractionSemigroup;
use crate::hilbert::{HVec, SpaceSpec};
use crate::scalar::Scalar;
use crate::simulate::{sup_distance, stream_id, DirectScheme, FrameScheme, MildScheme, NoisePlan};

/// Default z-score threshold.
pub const Z_MAX: f64 = 3.0;

/// Tolerance for the flow property, which repeats the same float recursion.
pub const FLOW_TOL: f64 = 1e-10;

/// Default tolerance for comparing the two integration routes.
pub const SCHEME_TOL: f64 = 1e-8;

/// RNG stream namespaces; no two estimators share a stream.
pub mod streams {
    pub const PATHS: u16 = 0;
    pub const DIRECT: u16 = 1;
    pub const OUTER: u16 = 2;
    pub const INNER: u16 = 3;
    pub const INIT_DIRECT: u16 = 4;
    pub const INIT_OUTER: u16 = 5;
}

/// Bounded test function `φ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// `exp(−c ‖x‖²)`.
    GaussExp { c: f64 },
    /// `tanh⟨x, w⟩`.
    CoordSigmoid { w: Vec<f64> },
    /// Indicator of the closed ball `‖x − center‖ ≤ radius`.
    IndicatorBall { center: Vec<f64>, radius: f64 },
    Constant { value: f64 },
}

impl TestFunction {
    pub fn validate(&self, space: SpaceSpec) -> Result<()> {
        let n = space.dim();
        match self {
            TestFunction::GaussExp { c } if !(*c >= 0.0) => Err(Error::Config("gauss_exp needs c >= 0".into())),
            TestFunction::CoordSigmoid { w } if w.len() != n => Err(Error::DimensionMismatch { expected: n, actual: w.len() }),
            TestFunction::IndicatorBall { center, .. } if center.len() != n => {
                Err(Error::DimensionMismatch { expected: n, actual: center.len() })
            }
            TestFunction::IndicatorBall { radius, .. } if !(*radius >= 0.0) => {
                Err(Error::Config("indicator_ball needs radius >= 0".into()))
            }
            _ => Ok(()),
        }
    }

    /// `sup |φ|`.
    pub fn sup(&self) -> f64 {
        match self {
            TestFunction::Constant { value } => value.abs(),
            _ => 1.0,
        }
    }

    pub fn eval<T: Scalar>(&self, x: &HVec<T>) -> f64 {
        let w = x.space().weight::<f64>();
        let xs = x.data().iter().map(|v| v.as_f64());
        match self {
            TestFunction::GaussExp { c } => (-c * x.norm_sq().as_f64()).exp(),
            TestFunction::CoordSigmoid { w: dir } => (w * xs.zip(dir).map(|(a, b)| a * b).sum::<f64>()).tanh(),
            TestFunction::IndicatorBall { center, radius } => {
                let d2 = w * xs.zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                if d2.sqrt() <= *radius {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::Constant { value } => *value,
        }
    }
}

/// Law of the initial datum: `mean + scale · g`, `g` componentwise standard normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct InitialLaw {
    pub mean: Vec<f64>,
    #[serde(default)]
    pub scale: f64,
}

impl InitialLaw {
    pub fn dirac(mean: Vec<f64>) -> Self {
        InitialLaw { mean, scale: 0.0 }
    }

    pub fn is_deterministic(&self) -> bool {
        self.scale == 0.0
    }

    pub fn sample<T: Scalar>(&self, space: SpaceSpec, seed: u64, stream: u64) -> Result<HVec<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let values = self
            .mean
            .iter()
            .map(|&m| {
                if self.scale == 0.0 {
                    T::of(m)
                } else {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    T::of(m + self.scale * g)
                }
            })
            .collect();
        HVec::from_vec(space, values)
    }
}

/// One point of a reported curve; `t` is a time, or a step size for
/// convergence curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    pub estimate: f64,
    pub stderr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
}

/// Outcome of one statistical or exact-recursion test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub test: String,
    pub estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
    pub stderr: f64,
    pub samples: usize,
    pub aborted: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    pub z_max: f64,
    pub pass: bool,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub curves: BTreeMap<String, Vec<CurvePoint>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<StatReport>,
}

impl StatReport {
    fn new(test: &str, seed: u64) -> Self {
        StatReport {
            test: test.to_string(),
            estimate: 0.0,
            reference: None,
            stderr: 0.0,
            samples: 0,
            aborted: Vec::new(),
            z: None,
            z_max: Z_MAX,
            pass: false,
            seeds: vec![seed],
            note: None,
            extra: BTreeMap::new(),
            curves: BTreeMap::new(),
            members: Vec::new(),
        }
    }
}

/// Sample mean and its standard error.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    if values.iter().all(|v| *v == values[0]) {
        return (values[0], 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Runs `f` over path indices in parallel; overflowing paths are listed by
/// stream id, any other error aborts the whole estimate.
fn run_paths<R, F>(n: usize, f: F) -> Result<(Vec<R>, Vec<u64>)>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync + Send,
{
    let results: Vec<Result<R>> = (0..n).into_par_iter().map(f).collect();
    let mut ok = Vec::with_capacity(n);
    let mut aborted = Vec::new();
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(Error::NonFinite { path, .. }) => aborted.push(path),
            Err(e) => return Err(e),
        }
    }
    Ok((ok, aborted))
}

fn ordered_indices(plan: &NoisePlan, times: &[f64]) -> Result<Vec<usize>> {
    let idx = times.iter().map(|&t| plan.index_of(t)).collect::<Result<Vec<_>>>()?;
    if idx.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config(format!("times must be nondecreasing, got {times:?}")));
    }
    Ok(idx)
}

fn check_scheme<T: Scalar>(scheme: &dyn MildScheme<T>, plan: &NoisePlan) -> Result<()> {
    plan.validate()?;
    scheme.check_dt(plan.dt)?;
    if plan.noise_dim != scheme.model().noise_dim() {
        return Err(Error::DimensionMismatch { expected: scheme.model().noise_dim(), actual: plan.noise_dim });
    }
    Ok(())
}

/// `X_t(r, ξ)` against the restart `X_t(s, X_s(r, ξ))` on the same increments.
pub fn flow_property<T: Scalar>(
    scheme: &dyn MildScheme<T>,
    xi: &HVec<T>,
    plan: &NoisePlan,
    (r, s, t): (f64, f64, f64),
    n_paths: usize,
) -> Result<StatReport> {
    check_scheme(scheme, plan)?;
    let idx = ordered_indices(plan, &[r, s, t])?;
    let (ri, si, ti) = (idx[0], idx[1], idx[2]);
    let (gaps, aborted) = run_paths(n_paths, |i| {
        let inc = plan.increments(stream_id(streams::PATHS, i as u64));
        let full = scheme.terminal(xi, &inc, ri, ti)?;
        let mid = scheme.terminal(xi, &inc, ri, si)?;
        let restarted = scheme.terminal(&mid, &inc, si, ti)?;
        Ok(full.distance(&restarted)?.as_f64())
    })?;
    let mut rep = StatReport::new("flow-property", plan.seed);
    rep.estimate = gaps.iter().fold(0.0, |m: f64, g| m.max(*g));
    rep.reference = Some(0.0);
    rep.samples = gaps.len();
    rep.pass = aborted.is_empty() && rep.estimate <= FLOW_TOL;
    rep.aborted = aborted;
    rep.extra.insert("tolerance".into(), FLOW_TOL);
    rep.note = Some(format!("scheme {}; max restart discrepancy", scheme.id()));
    Ok(rep)
}

/// Direct mild run from `(s, ξ)` against the projected dilated run started
/// at `U_s* ℓ ξ`, on shared noise; sup over grid and paths.
pub fn check_start_correspondence<T: Scalar>(
    dc: &DilatedCoefficients<'_, T>,
    s: f64,
    xi: &HVec<T>,
    plan: &NoisePlan,
    n_paths: usize,
    tol: f64,
) -> Result<StatReport> {
    let direct = DirectScheme::new(dc.model(), dc.frame().base())?;
    let framed = FrameScheme::new(*dc);
    check_scheme(&direct, plan)?;
    check_scheme(&framed, plan)?;
    let si = plan.index_of(s)?;
    let (gaps, aborted) = run_paths(n_paths, |i| {
        let inc = plan.increments(stream_id(streams::PATHS, i as u64));
        let a = direct.states(xi, &inc, si, plan.steps)?;
        let b = framed.states(xi, &inc, si, plan.steps)?;
        sup_distance(&a, &b)
    })?;
    let mut rep = StatReport::new("start-time-correspondence", plan.seed);
    rep.estimate = gaps.iter().fold(0.0, |m: f64, g| m.max(*g));
    rep.reference = Some(0.0);
    rep.samples = gaps.len();
    rep.pass = aborted.is_empty() && rep.estimate <= tol;
    rep.aborted = aborted;
    rep.extra.insert("tolerance".into(), tol);
    rep.extra.insert("eps_frame".into(), dc.frame().eps_frame());
    rep.extra.insert("start".into(), s);
    Ok(rep)
}

fn terminal_values<T: Scalar>(
    scheme: &dyn MildScheme<T>,
    plan: &NoisePlan,
    init: &InitialLaw,
    (si, ti): (usize, usize),
    phi: &TestFunction,
    n: usize,
    (path_ns, init_ns): (u16, u16),
) -> Result<(Vec<f64>, Vec<u64>)> {
    let space = scheme.model().space();
    run_paths(n, |i| {
        let xi = init.sample::<T>(space, plan.seed, stream_id(init_ns, i as u64))?;
        let inc = plan.increments(stream_id(path_ns, i as u64));
        Ok(phi.eval(&scheme.terminal(&xi, &inc, si, ti)?))
    })
}

/// `(P_{s,t} φ)(x) = E φ(X_t(s, x))` by Monte Carlo.
pub fn estimate_markov_operator<T: Scalar>(
    scheme: &dyn MildScheme<T>,
    plan: &NoisePlan,
    (s, t): (f64, f64),
    x: &HVec<T>,
    phi: &TestFunction,
    n_paths: usize,
) -> Result<StatReport> {
    check_scheme(scheme, plan)?;
    phi.validate(x.space())?;
    let idx = ordered_indices(plan, &[s, t])?;
    let init = InitialLaw::dirac(x.data().iter().map(|v| v.as_f64()).collect());
    let (values, aborted) =
        terminal_values(scheme, plan, &init, (idx[0], idx[1]), phi, n_paths, (streams::DIRECT, streams::INIT_DIRECT))?;
    let (mean, se) = mean_stderr(&values);
    let mut rep = StatReport::new("markov-operator", plan.seed);
    rep.estimate = mean;
    rep.stderr = se;
    rep.samples = values.len();
    rep.pass = aborted.is_empty() && mean.abs() <= phi.sup() * (1.0 + 1e-12);
    rep.aborted = aborted;
    Ok(rep)
}

/// Compares `E φ(X_t(r, ξ))` with `E (P_{s,t} φ)(X_s(r, ξ))` where the
/// inner operator is estimated with fresh restart noise.
fn composition_test<T: Scalar>(
    name: &str,
    scheme: &dyn MildScheme<T>,
    plan: &NoisePlan,
    (r, s, t): (f64, f64, f64),
    init: &InitialLaw,
    phi: &TestFunction,
    (n_outer, n_inner): (usize, usize),
) -> Result<StatReport> {
    check_scheme(scheme, plan)?;
    let space = scheme.model().space();
    phi.validate(space)?;
    if init.mean.len() != space.dim() {
        return Err(Error::DimensionMismatch { expected: space.dim(), actual: init.mean.len() });
    }
    if n_outer < 2 || n_inner < 1 {
        return Err(Error::Config("composition tests need n_outer >= 2 and n_inner >= 1".into()));
    }
    let idx = ordered_indices(plan, &[r, s, t])?;
    let (ri, si, ti) = (idx[0], idx[1], idx[2]);

    let (lhs, mut aborted) = terminal_values(
        scheme,
        plan,
        init,
        (ri, ti),
        phi,
        n_outer * n_inner,
        (streams::DIRECT, streams::INIT_DIRECT),
    )?;

    // with r = s the outer step is trivial and the inner runs are the LHS paths
    let same_start = ri == si && init.is_deterministic();
    let (inner_ns, outer_init_ns) =
        if same_start { (streams::DIRECT, streams::INIT_DIRECT) } else { (streams::INNER, streams::INIT_OUTER) };
    let (outer, outer_aborted) = run_paths(n_outer, |i| {
        let xi = init.sample::<T>(space, plan.seed, stream_id(outer_init_ns, i as u64))?;
        let inc = plan.increments(stream_id(streams::OUTER, i as u64));
        let xs = scheme.terminal(&xi, &inc, ri, si)?;
        let mut inner = Vec::with_capacity(n_inner);
        let mut lost = Vec::new();
        for j in 0..n_inner {
            let inc = plan.increments(stream_id(inner_ns, (i * n_inner + j) as u64));
            match scheme.terminal(&xs, &inc, si, ti) {
                Ok(x) => inner.push(phi.eval(&x)),
                Err(Error::NonFinite { path, .. }) => lost.push(path),
                Err(e) => return Err(e),
            }
        }
        Ok((inner, lost))
    })?;
    aborted.extend(outer_aborted);
    let mut inner_means = Vec::with_capacity(outer.len());
    for (inner, lost) in outer {
        aborted.extend(lost);
        if !inner.is_empty() {
            inner_means.push(mean_stderr(&inner).0);
        }
    }

    let (l, se_l) = mean_stderr(&lhs);
    let (rhs, se_r) = mean_stderr(&inner_means);
    let diff = l - rhs;
    let se = (se_l * se_l + se_r * se_r).sqrt();
    let mut rep = StatReport::new(name, plan.seed);
    rep.estimate = diff;
    rep.reference = Some(0.0);
    rep.stderr = se;
    rep.samples = lhs.len() + inner_means.len() * n_inner;
    rep.extra.insert("lhs".into(), l);
    rep.extra.insert("lhs_stderr".into(), se_l);
    rep.extra.insert("rhs".into(), rhs);
    rep.extra.insert("rhs_stderr".into(), se_r);
    rep.extra.insert("n_outer".into(), n_outer as f64);
    rep.extra.insert("n_inner".into(), n_inner as f64);
    let pass = if se > 0.0 {
        let z = diff / se;
        rep.z = Some(z);
        z.abs() <= Z_MAX
    } else {
        rep.note = Some("deterministic branch: both estimators have zero variance".into());
        diff.abs() <= 1e-12 * (1.0 + l.abs())
    };
    rep.pass = pass && aborted.is_empty();
    rep.aborted = aborted;
    Ok(rep)
}

/// Chapman–Kolmogorov test `P_{r,s} P_{s,t} φ (x) = P_{r,t} φ (x)`.
pub fn chapman_kolmogorov<T: Scalar>(
    scheme: &dyn MildScheme<T>,
    plan: &NoisePlan,
    times: (f64, f64, f64),
    x: &HVec<T>,
    phi: &TestFunction,
    counts: (usize, usize),
) -> Result<StatReport> {
    let init = InitialLaw::dirac(x.data().iter().map(|v| v.as_f64()).collect());
    composition_test("chapman-kolmogorov", scheme, plan, times, &init, phi, counts)
}

/// Tower-property consequence of the Markov property with random `ξ`.
pub fn markov_tower<T: Scalar>(
    scheme: &dyn MildScheme<T>,
    plan: &NoisePlan,
    times: (f64, f64, f64),
    init: &InitialLaw,
    phi: &TestFunction,
    counts: (usize, usize),
) -> Result<StatReport> {
    let mut rep = composition_test("markov-tower", scheme, plan, times, init, phi, counts)?;
    let note = "tower-property proxy for the almost-sure conditional identity";
    rep.note = Some(match rep.note.take() {
        Some(n) => format!("{note}; {n}"),
        None => note.into(),
    });
    Ok(rep)
}

/// Repeats a z-scored test over master seeds; passes iff at most
/// `max_excursions` members exceed `|z| > Z_MAX` and none aborted.
pub fn seed_family(
    name: &str,
    seeds: &[u64],
    max_excursions: usize,
    run: impl Fn(u64) -> Result<StatReport>,
) -> Result<StatReport> {
    let members = seeds.iter().map(|&s| run(s)).collect::<Result<Vec<_>>>()?;
    let excursions = members.iter().filter(|m| !m.pass).count();
    let mut rep = StatReport::new(name, seeds.first().copied().unwrap_or(0));
    rep.seeds = seeds.to_vec();
    rep.estimate = excursions as f64;
    rep.reference = Some(max_excursions as f64);
    rep.samples = members.iter().map(|m| m.samples).sum();
    rep.aborted = members.iter().flat_map(|m| m.aborted.iter().copied()).collect();
    rep.z = members.iter().filter_map(|m| m.z).map(f64::abs).reduce(f64::max);
    rep.pass = excursions <= max_excursions && rep.aborted.is_empty();
    rep.note = Some(format!("{excursions} of {} seeds beyond |z| = {Z_MAX}", seeds.len()));
    rep.members = members;
    Ok(rep)
}
/// Per-path energy curve, mild-norm curve and sup moment.
type ApRow = (Vec<f64>, Vec<f64>, f64);


/// Exponentially weighted energy bound on the dilated solution,
/// `E[‖Y_t‖² e^{−(C₀−θ)t}] ≤ E‖η‖² + ∫_0^T f`, plus the normalized curve
/// `K̂(t) = E‖X_t‖² / (1 + ‖ξ‖²)` and the `p`-th sup moment of `X`.
pub fn apriori_bound<T: Scalar>(
    dc: &DilatedCoefficients<'_, T>,
    xi: &HVec<T>,
    plan: &NoisePlan,
    n_paths: usize,
) -> Result<StatReport> {
    let scheme = FrameScheme::new(*dc);
    check_scheme(&scheme, plan)?;
    let frame = dc.frame();
    let k = &dc.model().constants;
    let g = k.growth_rate();
    let p = k.p;
    let eta = frame.embed(xi)?;
    let eta_sq = eta.norm_sq().as_f64();
    let xi_sq = xi.norm_sq().as_f64();
    let f_l1 = k.forcing.integral(plan.horizon());

    let (rows, aborted) = run_paths(n_paths, |i| {
        let inc = plan.increments(stream_id(streams::PATHS, i as u64));
        let mut weighted = Vec::with_capacity(plan.steps + 1);
        let mut mild = Vec::with_capacity(plan.steps + 1);
        let mut sup = 0.0f64;
        let mut failure = None;
        scheme.run_dilated(&eta, &inc, 0, plan.steps, &mut |n, y| {
            let t = plan.time(n);
            weighted.push(y.norm_sq().as_f64() * (-g * t).exp());
            match frame.project_translated(t, y) {
                Ok(x) => {
                    let nx = x.norm().as_f64();
                    mild.push(nx * nx);
                    sup = sup.max(nx);
                }
                Err(e) => failure = Some(e),
            }
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        Ok((weighted, mild, sup.powf(p)))
    })?;

    let mut rep = StatReport::new("apriori-bound", plan.seed);
    let bound = eta_sq + f_l1;
    let mut energy = Vec::with_capacity(plan.steps + 1);
    let mut k_hat = Vec::with_capacity(plan.steps + 1);
    let mut pass = aborted.is_empty() && !rows.is_empty();
    let mut worst = (f64::NEG_INFINITY, 0.0, 0.0);
    let column = |pick: &dyn Fn(&ApRow) -> f64| {
        mean_stderr(&rows.iter().map(pick).collect::<Vec<_>>())
    };
    for n in 0..=plan.steps {
        let t = plan.time(n);
        let (e, se) = column(&|r| r.0[n]);
        pass &= e <= bound + Z_MAX * se;
        if e - bound - Z_MAX * se > worst.0 {
            worst = (e - bound - Z_MAX * se, e, se);
        }
        energy.push(CurvePoint { t, estimate: e, stderr: se, bound: Some(bound) });
        let (m, se_m) = column(&|r| r.1[n]);
        let kb = (g * t).exp() * (1.0 + f_l1);
        let kh = m / (1.0 + xi_sq);
        let kse = se_m / (1.0 + xi_sq);
        pass &= kh.is_finite() && kh <= kb + Z_MAX * kse;
        k_hat.push(CurvePoint { t, estimate: kh, stderr: kse, bound: Some(kb) });
    }
    let (sup_p, sup_se) = mean_stderr(&rows.iter().map(|r| r.2).collect::<Vec<_>>());
    rep.estimate = worst.1;
    rep.stderr = worst.2;
    rep.reference = Some(bound);
    rep.samples = rows.len();
    rep.pass = pass;
    rep.aborted = aborted;
    rep.extra.insert("eta_norm_sq".into(), eta_sq);
    rep.extra.insert("forcing_l1".into(), f_l1);
    rep.extra.insert("growth_rate".into(), g);
    rep.extra.insert("p".into(), p);
    rep.extra.insert("sup_moment".into(), sup_p);
    rep.extra.insert("sup_moment_stderr".into(), sup_se);
    rep.extra.insert("eps_frame".into(), frame.eps_frame());
    rep.curves.insert("weighted_energy".into(), energy);
    rep.curves.insert("k_hat".into(), k_hat);
    rep.note = Some("estimate is the weighted energy at the grid time closest to its bound".into());
    Ok(rep)
}

/// Coupled solutions from `ℓξ` and `ℓζ` on shared noise:
/// `E[e^{−∫_0^t f − τ t} ‖Y_t − Z_t‖²] ≤ ‖ℓξ − ℓζ‖²`, plus the induced
/// mild-solution ratio `E‖X_t(ξ) − X_t(ζ)‖² / ‖ξ − ζ‖² ≤ e^{∫_0^t f + τ t}`.
pub fn lipschitz_map<T: Scalar>(
    dc: &DilatedCoefficients<'_, T>,
    xi: &HVec<T>,
    zeta: &HVec<T>,
    plan: &NoisePlan,
    n_paths: usize,
) -> Result<StatReport> {
    let k = &dc.model().constants;
    let tau = k
        .tau
        .constant_value()
        .ok_or_else(|| Error::Config("the Lipschitz estimate needs a constant tau".into()))?;
    let scheme = FrameScheme::new(*dc);
    check_scheme(&scheme, plan)?;
    let frame = dc.frame();
    let y0 = frame.embed(xi)?;
    let z0 = frame.embed(zeta)?;
    let d0 = y0.sub(&z0)?.norm_sq().as_f64();
    let dx0 = xi.sub(zeta)?.norm_sq().as_f64();

    let (rows, aborted) = run_paths(n_paths, |i| {
        let inc = plan.increments(stream_id(streams::PATHS, i as u64));
        let mut ys = Vec::with_capacity(plan.steps + 1);
        scheme.run_dilated(&y0, &inc, 0, plan.steps, &mut |_, y| ys.push(y.clone()))?;
        let mut dil = Vec::with_capacity(plan.steps + 1);
        let mut mild = Vec::with_capacity(plan.steps + 1);
        let mut err = None;
        scheme.run_dilated(&z0, &inc, 0, plan.steps, &mut |n, z| {
            let t = plan.time(n);
            let step = || -> Result<(f64, f64)> {
                let d = ys[n].sub(z)?;
                let dx = frame.project_translated(t, &d)?;
                Ok((d.norm_sq().as_f64(), dx.norm_sq().as_f64()))
            };
            match step() {
                Ok((a, b)) => {
                    dil.push(a);
                    mild.push(b);
                }
                Err(e) => err = Some(e),
            }
        })?;
        err.map_or(Ok((dil, mild)), Err)
    })?;

    let mut rep = StatReport::new("lipschitz", plan.seed);
    let mut pass = aborted.is_empty() && !rows.is_empty();
    let mut weighted = Vec::with_capacity(plan.steps + 1);
    let mut raw = Vec::with_capacity(plan.steps + 1);
    let mut ratio = Vec::with_capacity(plan.steps + 1);
    let mut worst = (f64::NEG_INFINITY, 0.0, 0.0);
    for n in 0..=plan.steps {
        let t = plan.time(n);
        let growth = k.forcing.integral(t) + tau * t;
        let (m, se) = mean_stderr(&rows.iter().map(|r| r.0[n]).collect::<Vec<_>>());
        let (w, wse) = (m * (-growth).exp(), se * (-growth).exp());
        pass &= w <= d0 + Z_MAX * wse;
        if w - d0 - Z_MAX * wse > worst.0 {
            worst = (w - d0 - Z_MAX * wse, w, wse);
        }
        weighted.push(CurvePoint { t, estimate: w, stderr: wse, bound: Some(d0) });
        raw.push(CurvePoint { t, estimate: m, stderr: se, bound: None });
        if dx0 > 0.0 {
            let (mx, sex) = mean_stderr(&rows.iter().map(|r| r.1[n]).collect::<Vec<_>>());
            let lip = growth.exp() * d0 / dx0;
            pass &= mx / dx0 <= lip + Z_MAX * sex / dx0;
            ratio.push(CurvePoint { t, estimate: mx / dx0, stderr: sex / dx0, bound: Some(lip) });
        }
    }
    rep.estimate = worst.1;
    rep.stderr = worst.2;
    rep.reference = Some(d0);
    rep.samples = rows.len();
    rep.pass = pass;
    rep.aborted = aborted;
    rep.extra.insert("tau".into(), tau);
    rep.extra.insert("initial_distance_sq".into(), d0);
    rep.curves.insert("weighted_difference".into(), weighted);
    rep.curves.insert("squared_difference".into(), raw);
    if !ratio.is_empty() {
        rep.curves.insert("mild_ratio".into(), ratio);
    }
    Ok(rep)
}

/// Empirical strong order of the exponential-Euler scheme: errors at
/// `Δt, Δt/2, …` against a run with step `Δt / reference_factor` on the same
/// Brownian path; passes iff the least-squares log-slope is at least
/// `min_order`.
#[allow(clippy::too_many_arguments)]
pub fn strong_order<T: Scalar>(
    model: &CoefficientModel<T>,
    semigroup: &ContractionSemigroup<T>,
    xi: &HVec<T>,
    plan: &NoisePlan,
    levels: usize,
    reference_factor: usize,
    n_paths: usize,
    min_order: f64,
) -> Result<StatReport> {
    let scheme = DirectScheme::new(model, semigroup)?;
    if levels < 2 || reference_factor >> (levels - 1) < 2 || !reference_factor.is_power_of_two() {
        return Err(Error::Config(format!(
            "need >= 2 levels and a power-of-two reference factor above 2^levels, got {levels} and {reference_factor}"
        )));
    }
    let fine = plan.refined(reference_factor);
    check_scheme(&scheme, &fine)?;
    check_scheme(&scheme, plan)?;
    let (rows, aborted) = run_paths(n_paths, |i| {
        let inc = fine.increments::<T>(stream_id(streams::PATHS, i as u64));
        let reference = scheme.terminal(xi, &inc, 0, fine.steps)?;
        (0..levels)
            .map(|l| {
                let coarse = inc.coarsen(reference_factor >> l)?;
                let x = scheme.terminal(xi, &coarse, 0, coarse.steps())?;
                Ok(x.sub(&reference)?.norm_sq().as_f64())
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut rep = StatReport::new("strong-order", plan.seed);
    let mut curve = Vec::with_capacity(levels);
    for l in 0..levels {
        let h = plan.dt / (1 << l) as f64;
        let (m, se) = mean_stderr(&rows.iter().map(|r| r[l]).collect::<Vec<_>>());
        let e = m.sqrt();
        curve.push(CurvePoint { t: h, estimate: e, stderr: if e > 0.0 { se / (2.0 * e) } else { 0.0 }, bound: None });
    }
    let xs: Vec<f64> = curve.iter().map(|c| c.t.ln()).collect();
    let ys: Vec<f64> = curve.iter().map(|c| c.estimate.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / levels as f64, ys.iter().sum::<f64>() / levels as f64);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    rep.estimate = slope;
    rep.reference = Some(min_order);
    rep.samples = rows.len();
    rep.pass = aborted.is_empty() && slope.is_finite() && slope >= min_order;
    rep.aborted = aborted;
    rep.extra.insert("reference_factor".into(), reference_factor as f64);
    rep.curves.insert("strong_error".into(), curve);
    Ok(rep)
}

/// Per-coordinate terminal mean and variance of the direct scheme, with a
/// Richardson-extrapolated variance from a coupled run at `Δt/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeMoments {
    pub mean: Vec<f64>,
    pub mean_stderr: Vec<f64>,
    pub variance: Vec<f64>,
    pub variance_stderr: Vec<f64>,
    pub variance_half_step: Vec<f64>,
    pub variance_richardson: Vec<f64>,
    pub variance_richardson_stderr: Vec<f64>,
    pub samples: usize,
    pub aborted: Vec<u64>,
}

pub fn terminal_moments<T: Scalar>(
    scheme: &dyn MildScheme<T>,
    xi: &HVec<T>,
    plan: &NoisePlan,
    n_paths: usize,
) -> Result<ModeMoments> {
    let half = plan.refined(2);
    check_scheme(scheme, plan)?;
    check_scheme(scheme, &half)?;
    let (rows, aborted) = run_paths(n_paths, |i| {
        let fine = half.increments::<T>(stream_id(streams::PATHS, i as u64));
        let coarse = fine.coarsen(2)?;
        let a = scheme.terminal(xi, &coarse, 0, plan.steps)?;
        let b = scheme.terminal(xi, &fine, 0, half.steps)?;
        let f = |v: HVec<T>| v.data().iter().map(|e| e.as_f64()).collect::<Vec<_>>();
        Ok((f(a), f(b)))
    })?;
    let dim = xi.dim();
    let mut out = ModeMoments {
        mean: Vec::new(),
        mean_stderr: Vec::new(),
        variance: Vec::new(),
        variance_stderr: Vec::new(),
        variance_half_step: Vec::new(),
        variance_richardson: Vec::new(),
        variance_richardson_stderr: Vec::new(),
        samples: rows.len(),
        aborted,
    };
    let n = rows.len() as f64;
    let bessel = n / (n - 1.0);
    for k in 0..dim {
        let a: Vec<f64> = rows.iter().map(|r| r.0[k]).collect();
        let b: Vec<f64> = rows.iter().map(|r| r.1[k]).collect();
        let (ma, sa) = mean_stderr(&a);
        let (mb, _) = mean_stderr(&b);
        let qa: Vec<f64> = a.iter().map(|v| (v - ma) * (v - ma) * bessel).collect();
        let qb: Vec<f64> = b.iter().map(|v| (v - mb) * (v - mb) * bessel).collect();
        let qr: Vec<f64> = qa.iter().zip(&qb).map(|(x, y)| 2.0 * y - x).collect();
        let (va, se_a) = mean_stderr(&qa);
        let (vr, se_r) = mean_stderr(&qr);
        out.mean.push(ma);
        out.mean_stderr.push(sa);
        out.variance.push(va);
        out.variance_stderr.push(se_a);
        out.variance_half_step.push(mean_stderr(&qb).0);
        out.variance_richardson.push(vr);
        out.variance_richardson_stderr.push(se_r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{build_model, transform_to_frame, Forcing, ModelSelection, Tau};
    use crate::frame::{DilationFrame, DEFAULT_EPS_FRAME};
    use serde_json::json;

    fn model(id: &str, params: serde_json::Value, space: SpaceSpec) -> CoefficientModel<f64> {
        build_model(&ModelSelection { id: id.into(), params, constants: None }, space, 1.0).unwrap()
    }

    fn spectral_allen_cahn(sg: &ContractionSemigroup<f64>) -> CoefficientModel<f64> {
        model(
            "allen-cahn",
            json!({"c1": 1.0, "c2": 1.0, "kappa": 0.5,
                "sigma0": {"kind": "diagonal", "values": [0.6, 0.4]},
                "sigma1": {"kind": "diagonal", "values": [0.2, 0.2]}}),
            sg.space(),
        )
    }

    fn shift_setup(dx: f64) -> (ContractionSemigroup<f64>, DilationFrame<f64>) {
        let sg = ContractionSemigroup::shift(dx, 12).unwrap();
        let frame = DilationFrame::with_minimal_window(&sg, dx, 1.0, DEFAULT_EPS_FRAME).unwrap();
        (sg, frame)
    }

    #[test]
    fn test_functions_are_bounded() {
        let space = SpaceSpec::halfline_grid(0.5, 2).unwrap();
        let x = HVec::from_vec(space, vec![1.0, 2.0]).unwrap();
        // ‖x‖² = 0.5 (1 + 4)
        assert!((TestFunction::GaussExp { c: 1.0 }.eval(&x) - (-2.5f64).exp()).abs() <= 1e-15);
        assert!((TestFunction::CoordSigmoid { w: vec![1.0, 0.0] }.eval(&x) - 0.5f64.tanh()).abs() <= 1e-15);
        let ball = TestFunction::IndicatorBall { center: vec![1.0, 1.0], radius: 0.8 };
        assert_eq!(ball.eval(&x), 1.0);
        let small = TestFunction::IndicatorBall { center: vec![1.0, 1.0], radius: 0.7 };
        assert_eq!(small.eval(&x), 0.0);
        assert!(TestFunction::CoordSigmoid { w: vec![1.0] }.validate(space).is_err());
    }

    #[test]
    fn flow_property_is_exact_for_both_routes() {
        let (sg, frame) = shift_setup(0.02);
        let m = model("allen-cahn", json!({"kappa": 0.5,
            "sigma0": {"kind": "cosine", "amplitudes": [0.5, 0.3]},
            "sigma1": {"kind": "cosine", "amplitudes": [0.2, 0.1]}}), sg.space());
        let dc = transform_to_frame(&m, &frame).unwrap();
        let plan = NoisePlan { noise_dim: 2, dt: 0.02, steps: 50, seed: 1 };
        let xi = HVec::from_fn(sg.space(), |i| (i as f64 * 0.3).cos());
        let direct = DirectScheme::new(&m, &sg).unwrap();
        let framed = FrameScheme::new(dc);
        let schemes: [&dyn MildScheme<f64>; 2] = [&direct, &framed];
        for scheme in schemes {
            let rep = flow_property(scheme, &xi, &plan, (0.0, 0.5, 1.0), 100).unwrap();
            assert!(rep.pass && rep.estimate <= FLOW_TOL, "{}: {}", scheme.id(), rep.estimate);
        }
        let same = flow_property(&direct, &xi, &plan, (0.5, 0.5, 1.0), 20).unwrap();
        assert_eq!(same.estimate, 0.0);
        let zero = model("zero", json!({"noise_dim": 2}), sg.space());
        let rep = flow_property(&DirectScheme::new(&zero, &sg).unwrap(), &xi, &plan, (0.0, 0.3, 0.8), 10).unwrap();
        assert_eq!(rep.estimate, 0.0);
        assert!(flow_property(&direct, &xi, &plan, (0.5, 0.2, 1.0), 10).is_err());
        assert!(flow_property(&direct, &xi, &plan, (0.0, 0.51, 1.0), 10).is_err());
    }

    #[test]
    fn late_start_routes_agree() {
        let (sg, frame) = shift_setup(0.01);
        let m = model("linear-ou", json!({"decay": [1.0], "sigma": {"kind": "cosine", "amplitudes": [0.5, 0.25]}}), sg.space());
        let dc = transform_to_frame(&m, &frame).unwrap();
        let plan = NoisePlan { noise_dim: 2, dt: 0.01, steps: 100, seed: 2 };
        let xi = HVec::from_fn(sg.space(), |i| 1.0 - 0.1 * i as f64);
        let rep = check_start_correspondence(&dc, 0.25, &xi, &plan, 20, SCHEME_TOL).unwrap();
        assert!(rep.pass, "{}", rep.estimate);
        let quiet = model("linear-ou", json!({"decay": [1.0], "offset": [0.3], "sigma": {"kind": "zero", "noise_dim": 1}}), sg.space());
        let dc = transform_to_frame(&quiet, &frame).unwrap();
        let plan = NoisePlan { noise_dim: 1, ..plan };
        let rep = check_start_correspondence(&dc, 0.5, &xi, &plan, 2, SCHEME_TOL).unwrap();
        assert!(rep.estimate <= 100.0 * frame.eps_frame());
    }

    #[test]
    fn markov_operator_trivial_cases() {
        let sg = ContractionSemigroup::diagonal(vec![1.0, 2.0]).unwrap();
        let m = spectral_allen_cahn(&sg);
        let scheme = DirectScheme::new(&m, &sg).unwrap();
        let plan = NoisePlan { noise_dim: 2, dt: 0.05, steps: 20, seed: 3 };
        let x = HVec::from_vec(sg.space(), vec![0.5, -0.5]).unwrap();
        let phi = TestFunction::GaussExp { c: 1.0 };
        let rep = estimate_markov_operator(&scheme, &plan, (0.5, 0.5), &x, &phi, 50).unwrap();
        assert_eq!(rep.estimate, phi.eval(&x));
        assert_eq!(rep.stderr, 0.0);
        let one = estimate_markov_operator(&scheme, &plan, (0.0, 1.0), &x, &TestFunction::Constant { value: 1.0 }, 50).unwrap();
        assert_eq!((one.estimate, one.stderr), (1.0, 0.0));
        let ball = TestFunction::IndicatorBall { center: vec![0.0, 0.0], radius: 0.5 };
        let p = estimate_markov_operator(&scheme, &plan, (0.0, 1.0), &x, &ball, 200).unwrap();
        assert!((0.0..=1.0).contains(&p.estimate));
        let zero = model("zero", json!({"noise_dim": 2}), sg.space());
        let rep = estimate_markov_operator(&DirectScheme::new(&zero, &sg).unwrap(), &plan, (0.25, 1.0), &x, &phi, 10).unwrap();
        let moved = sg.apply(0.75, &x).unwrap();
        assert!((rep.estimate - phi.eval(&moved)).abs() <= 1e-14);
    }

    #[test]
    fn markov_operator_matches_gaussian_integral() {
        let lambda = 1.0;
        let sigma = 0.8;
        let sg = ContractionSemigroup::diagonal(vec![lambda]).unwrap();
        let m = model("linear-ou", json!({"sigma": {"kind": "diagonal", "values": [sigma]}}), sg.space());
        let scheme = DirectScheme::new(&m, &sg).unwrap();
        let plan = NoisePlan { noise_dim: 1, dt: 0.05, steps: 20, seed: 4 };
        let x0 = 1.5;
        let x = HVec::from_vec(sg.space(), vec![x0]).unwrap();
        let rep = estimate_markov_operator(&scheme, &plan, (0.0, 1.0), &x, &TestFunction::GaussExp { c: 0.5 }, 20_000).unwrap();
        // the scheme is exactly Gaussian with these moments
        let mu = x0 * (-lambda).exp();
        let v: f64 = (1..=plan.steps).map(|k| sigma * sigma * plan.dt * (-2.0 * lambda * k as f64 * plan.dt).exp()).sum();
        let oracle = (1.0 + v).powf(-0.5) * (-mu * mu / (2.0 * (1.0 + v))).exp();
        assert!((rep.estimate - oracle).abs() <= 3.0 * rep.stderr, "{} vs {oracle} ± {}", rep.estimate, rep.stderr);
    }

    #[test]
    fn chapman_kolmogorov_trivial_and_statistical() {
        let sg = ContractionSemigroup::diagonal(vec![1.0, 2.0]).unwrap();
        let plan = NoisePlan { noise_dim: 2, dt: 0.05, steps: 20, seed: 5 };
        let x = HVec::from_vec(sg.space(), vec![0.5, -0.5]).unwrap();
        let phi = TestFunction::GaussExp { c: 1.0 };
        let zero = model("zero", json!({"noise_dim": 2}), sg.space());
        let det = chapman_kolmogorov(&DirectScheme::new(&zero, &sg).unwrap(), &plan, (0.0, 0.5, 1.0), &x, &phi, (10, 10)).unwrap();
        assert!(det.pass && det.z.is_none());
        let m = spectral_allen_cahn(&sg);
        let scheme = DirectScheme::new(&m, &sg).unwrap();
        let same = chapman_kolmogorov(&scheme, &plan, (0.5, 0.5, 1.0), &x, &phi, (20, 10)).unwrap();
        assert!(same.estimate.abs() <= 1e-12);
        let rep = chapman_kolmogorov(&scheme, &plan, (0.0, 0.5, 1.0), &x, &phi, (60, 60)).unwrap();
        assert!(rep.pass, "z = {:?}", rep.z);
        assert!(rep.z.unwrap().abs() <= Z_MAX);
    }

    #[test]
    fn tower_reduces_to_ck_for_deterministic_start() {
        let sg = ContractionSemigroup::diagonal(vec![1.0, 2.0]).unwrap();
        let m = spectral_allen_cahn(&sg);
        let scheme = DirectScheme::new(&m, &sg).unwrap();
        let plan = NoisePlan { noise_dim: 2, dt: 0.05, steps: 20, seed: 6 };
        let phi = TestFunction::GaussExp { c: 1.0 };
        let x = HVec::from_vec(sg.space(), vec![0.5, -0.5]).unwrap();
        let ck = chapman_kolmogorov(&scheme, &plan, (0.0, 0.5, 1.0), &x, &phi, (30, 30)).unwrap();
        let tower = markov_tower(&scheme, &plan, (0.0, 0.5, 1.0), &InitialLaw::dirac(vec![0.5, -0.5]), &phi, (30, 30)).unwrap();
        assert_eq!(ck.estimate, tower.estimate);
        assert_eq!(ck.z, tower.z);
        let random = markov_tower(&scheme, &plan, (0.0, 0.5, 1.0), &InitialLaw { mean: vec![0.0, 0.0], scale: 0.5 }, &phi, (60, 60)).unwrap();
        assert!(random.pass, "z = {:?}", random.z);
    }

    #[test]
    fn seed_family_counts_excursions() {
        let fam = seed_family("demo", &[1, 2, 3], 1, |s| {
            let mut r = StatReport::new("member", s);
            r.z = Some(if s == 2 { 4.0 } else { 0.5 });
            r.pass = s != 2;
            Ok(r)
        })
        .unwrap();
        assert!(fam.pass);
        assert_eq!(fam.estimate, 1.0);
        assert_eq!(fam.z, Some(4.0));
    }

    #[test]
    fn apriori_bound_for_zero_model_is_the_decayed_initial_energy() {
        let (sg, frame) = shift_setup(0.05);
        let mut sel = ModelSelection { id: "zero".into(), params: json!({}), constants: None };
        let mut k = build_model::<f64>(&sel, sg.space(), 1.0).unwrap().constants;
        k.c0 = 2.0;
        sel.constants = Some(k);
        let m = build_model::<f64>(&sel, sg.space(), 1.0).unwrap();
        let dc = transform_to_frame(&m, &frame).unwrap();
        let plan = NoisePlan { noise_dim: 1, dt: 0.05, steps: 20, seed: 0 };
        let xi = HVec::from_fn(sg.space(), |i| i as f64);
        let rep = apriori_bound(&dc, &xi, &plan, 4).unwrap();
        assert!(rep.pass);
        let e0 = xi.norm_sq();
        for p in &rep.curves["weighted_energy"] {
            assert!((p.estimate - e0 * (-p.t).exp()).abs() <= 1e-12 * e0);
            assert_eq!(p.stderr, 0.0);
        }
    }

    #[test]
    fn apriori_bound_for_linear_ou() {
        let (sg, frame) = shift_setup(0.05);
        let m = model("linear-ou", json!({"decay": [1.0], "sigma": {"kind": "cosine", "amplitudes": [0.5, 0.3]}}), sg.space());
        assert_eq!(m.constants.growth_rate(), 0.0);
        let dc = transform_to_frame(&m, &frame).unwrap();
        let plan = NoisePlan { noise_dim: 2, dt: 0.05, steps: 20, seed: 7 };
        let xi = HVec::from_fn(sg.space(), |_| 1.0);
        let rep = apriori_bound(&dc, &xi, &plan, 500).unwrap();
        assert!(rep.pass, "{rep:#?}");
        assert!(rep.extra["sup_moment"].is_finite());
    }

    #[test]
    fn lipschitz_coupling() {
        let sg = ContractionSemigroup::<f64>::Identity { dim: 2 };
        let frame = DilationFrame::with_minimal_window(&sg, 0.1, 1.0, DEFAULT_EPS_FRAME).unwrap();
        let mut sel = ModelSelection {
            id: "linear-ou".into(),
            params: json!({"decay": [1.0], "sigma": {"kind": "diagonal", "values": [0.4, 0.2]}}),
            constants: None,
        };
        let mut k = build_model::<f64>(&sel, sg.space(), 1.0).unwrap().constants;
        k.forcing = Forcing::constant(0.0);
        sel.constants = Some(k);
        let m = build_model::<f64>(&sel, sg.space(), 1.0).unwrap();
        let dc = transform_to_frame(&m, &frame).unwrap();
        let plan = NoisePlan { noise_dim: 2, dt: 0.1, steps: 10, seed: 8 };
        let xi = HVec::from_vec(sg.space(), vec![1.0, 0.0]).unwrap();
        let zeta = HVec::from_vec(sg.space(), vec![0.0, 2.0]).unwrap();
        let rep = lipschitz_map(&dc, &xi, &zeta, &plan, 5).unwrap();
        assert!(rep.pass);
        for (n, p) in rep.curves["squared_difference"].iter().enumerate() {
            let want = 0.9f64.powi(2 * n as i32) * 5.0;
            assert!((p.estimate - want).abs() <= 1e-12 * want, "n = {n}");
        }
        let same = lipschitz_map(&dc, &xi, &xi, &plan, 5).unwrap();
        assert!(same.curves["squared_difference"].iter().all(|p| p.estimate == 0.0));
    }

    #[test]
    fn lipschitz_rejects_radial_tau() {
        let sg = ContractionSemigroup::<f64>::Identity { dim: 1 };
        let frame = DilationFrame::with_minimal_window(&sg, 0.1, 1.0, DEFAULT_EPS_FRAME).unwrap();
        let mut sel = ModelSelection { id: "zero".into(), params: json!({}), constants: None };
        let mut k = build_model::<f64>(&sel, sg.space(), 1.0).unwrap().constants;
        k.tau = Tau::Power { c0: 0.0, c1: 1.0, q: 2.0 };
        k.c = 1.0;
        sel.constants = Some(k);
        let m = build_model::<f64>(&sel, sg.space(), 1.0).unwrap();
        let dc = transform_to_frame(&m, &frame).unwrap();
        let plan = NoisePlan { noise_dim: 1, dt: 0.1, steps: 10, seed: 0 };
        let x = HVec::zeros(sg.space());
        assert!(matches!(lipschitz_map(&dc, &x, &x, &plan, 2), Err(Error::Config(_))));
    }

    #[test]
    fn linear_ou_has_strong_order_near_one() {
        let sg = ContractionSemigroup::diagonal(vec![1.0, 4.0]).unwrap();
        let m = model("linear-ou", json!({"sigma": {"kind": "diagonal", "values": [1.0, 0.5]}}), sg.space());
        let plan = NoisePlan { noise_dim: 2, dt: 1.0 / 16.0, steps: 16, seed: 9 };
        let xi = HVec::from_vec(sg.space(), vec![1.0, 1.0]).unwrap();
        let rep = strong_order(&m, &sg, &xi, &plan, 3, 16, 300, 0.3).unwrap();
        assert!(rep.pass, "slope {}", rep.estimate);
        let errs: Vec<f64> = rep.curves["strong_error"].iter().map(|c| c.estimate).collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn estimators_ignore_thread_count() {
        let sg = ContractionSemigroup::diagonal(vec![1.0, 2.0]).unwrap();
        let m = spectral_allen_cahn(&sg);
        let scheme = DirectScheme::new(&m, &sg).unwrap();
        let plan = NoisePlan { noise_dim: 2, dt: 0.05, steps: 20, seed: 10 };
        let x = HVec::from_vec(sg.space(), vec![0.5, -0.5]).unwrap();
        let phi = TestFunction::GaussExp { c: 1.0 };
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                (
                    chapman_kolmogorov(&scheme, &plan, (0.0, 0.5, 1.0), &x, &phi, (20, 20)).unwrap(),
                    terminal_moments(&scheme, &x, &plan, 200).unwrap(),
                )
            })
        };
        assert_eq!(run(1), run(3));
    }
}
