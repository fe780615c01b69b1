//! Experiment configuration, validation, orchestration and persistence.
//!
//! A run writes `manifest.json`, `report.json` and CSV tables into
//! `<out>/<name>/`. Outputs contain no absolute paths or wall-clock data, so
//! replaying a configuration reproduces them byte for byte; wall-clock
//! timing goes to an opt-in `timing.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::coeffs::{
    build_model, probe_conditions, probe_transferred_conditions, transform_to_frame, CoefficientModel,
    ModelSelection, ProbeSettings,
};
use crate::error::{Error, Result};
use crate::frame::{aligned_cells, dilate, required_window, ContractionSemigroup, DilationFrame, Window, DEFAULT_EPS_FRAME};
use crate::hilbert::{HVec, SpaceSpec};
use crate::markov::{
    apriori_bound, chapman_kolmogorov, check_start_correspondence, flow_property, lipschitz_map, markov_tower, mean_stderr,
    seed_family, strong_order, terminal_moments, InitialLaw, StatReport, TestFunction, SCHEME_TOL,
};
use crate::scalar::Scalar;
use crate::simulate::{
    lift_mild_with_increments, project_mild, solve_mild_direct_with_increments, stream_id, sup_distance, DirectScheme,
    FrameScheme, MildScheme, NoisePlan,
};

/// Exit status: every test passed.
pub const EXIT_PASS: i32 = 0;
/// Exit status: a test ran and failed.
pub const EXIT_FAIL: i32 = 1;
/// Exit status: the configuration is invalid.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status: overflow or another runtime failure.
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    VerifyFrame,
    ProbeConditions,
    ProbeTransferred,
    Simulate,
    CrossValidate,
    FlowTest,
    Lemma31Test,
    MarkovCk,
    MarkovTower,
    Apriori,
    Lipschitz,
    Convergence,
}

impl ExperimentKind {
    fn needs_model(self) -> bool {
        self != ExperimentKind::VerifyFrame
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// Which integrator a test drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum SchemeChoice {
    /// Exponential Euler with the semigroup.
    Direct,
    /// Euler–Maruyama on the dilated space, projected.
    Frame,
    Both,
}

/// Dilation parameters; `dx` defaults to the shift spacing or to `dt`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FrameSpec {
    pub dx: Option<f64>,
    pub window: Option<Window>,
    pub eps_frame: Option<f64>,
}

/// Time grid and master seed; give `steps`, `horizon` or both.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub dt: Option<f64>,
    pub steps: Option<usize>,
    pub horizon: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

/// Kind-specific parameters; every field has a default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TestParams {
    pub n_paths: Option<usize>,
    /// `[r, s, t]` for flow and Markov tests.
    pub times: Option<Vec<f64>>,
    /// Start time of the start-time correspondence test.
    pub start: Option<f64>,
    pub test_function: Option<TestFunction>,
    pub n_outer: Option<usize>,
    pub n_inner: Option<usize>,
    /// Master seeds of a repeated statistical test.
    pub seeds: Option<Vec<u64>>,
    pub max_excursions: Option<usize>,
    pub initial_law: Option<InitialLaw>,
    /// Second initial datum of the Lipschitz test.
    pub zeta: Option<Vec<f64>>,
    pub probe: Option<ProbeSettings>,
    pub tolerance: Option<f64>,
    pub scheme: Option<SchemeChoice>,
    pub levels: Option<usize>,
    pub reference_factor: Option<usize>,
    pub min_order: Option<f64>,
    /// Number of trajectories exported as CSV by `simulate`.
    pub write_paths: Option<usize>,
    /// Adds a Richardson-extrapolated variance at `dt/2` to `simulate`.
    pub richardson: Option<bool>,
    /// Number of random vectors for `verify-frame`.
    pub samples: Option<usize>,
}

/// One experiment. Fields are optional so that validation can list every
/// missing one at once.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Defaults to the file stem.
    pub name: Option<String>,
    pub kind: Option<ExperimentKind>,
    pub precision: Option<Precision>,
    pub semigroup: Option<ContractionSemigroup<f64>>,
    pub frame: Option<FrameSpec>,
    pub model: Option<ModelSelection>,
    pub noise: Option<NoiseSpec>,
    /// Initial datum `ξ`; zero if absent.
    pub initial: Option<Vec<f64>>,
    pub test: Option<TestParams>,
}

/// JSON schema of [`ExperimentConfig`].
pub fn config_schema() -> Value {
    serde_json::to_value(schemars::schema_for!(ExperimentConfig)).expect("schema serializes")
}

/// SHA-256 of the canonical (key-sorted, compact) JSON form.
pub fn config_hash(value: &Value) -> String {
    let canonical = serde_json::to_string(value).expect("JSON values serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Validated configuration with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub name: String,
    pub kind: ExperimentKind,
    pub precision: Precision,
    pub semigroup: ContractionSemigroup<f64>,
    pub dx: f64,
    pub window: Option<Window>,
    pub eps_frame: f64,
    pub plan: NoisePlan,
    pub model: Option<ModelSelection>,
    pub initial: Vec<f64>,
    pub test: TestParams,
}

impl Resolved {
    pub fn horizon(&self) -> f64 {
        self.plan.horizon()
    }

    fn n_paths(&self, default: usize) -> usize {
        self.test.n_paths.unwrap_or(default)
    }

    fn rst(&self) -> (f64, f64, f64) {
        match self.test.times.as_deref() {
            Some([r, s, t]) => (*r, *s, *t),
            _ => (0.0, self.plan.time(self.plan.steps / 2), self.horizon()),
        }
    }

    fn start(&self) -> f64 {
        self.test.start.unwrap_or_else(|| self.plan.time(self.plan.steps / 4))
    }

    fn scheme(&self, default: SchemeChoice) -> SchemeChoice {
        self.test.scheme.unwrap_or(default)
    }

    fn seeds(&self) -> Vec<u64> {
        self.test.seeds.clone().unwrap_or_else(|| vec![self.plan.seed])
    }

    fn probe_settings(&self) -> ProbeSettings {
        self.test.probe.clone().unwrap_or_else(|| ProbeSettings {
            times: vec![0.0, self.plan.time(self.plan.steps / 2), self.horizon()],
            seed: self.plan.seed,
            ..ProbeSettings::default()
        })
    }
}

fn required(errors: &mut Vec<String>, field: &str) {
    errors.push(format!("missing required field `{field}`"));
}

/// Checks a parsed configuration and fills defaults; lists every violated
/// constraint on failure.
pub fn resolve(cfg: &ExperimentConfig, fallback_name: &str, seed_override: Option<u64>) -> Result<Resolved, Vec<String>> {
    let mut errors = Vec::new();
    let name = cfg.name.clone().unwrap_or_else(|| fallback_name.to_string());
    if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
        errors.push(format!("name `{name}` is not a valid directory name"));
    }
    if cfg.kind.is_none() {
        required(&mut errors, "kind");
    }
    let semigroup = match &cfg.semigroup {
        None => {
            required(&mut errors, "semigroup");
            None
        }
        Some(s) => match s.validate() {
            Ok(()) => Some(s.clone()),
            Err(e) => {
                errors.push(format!("semigroup: {e}"));
                None
            }
        },
    };

    let mut plan = None;
    match &cfg.noise {
        None => required(&mut errors, "noise"),
        Some(n) => match n.dt {
            None => required(&mut errors, "noise.dt"),
            Some(dt) if !(dt > 0.0 && dt.is_finite()) => errors.push(format!("noise.dt must be > 0, got {dt}")),
            Some(dt) => {
                let steps = match (n.steps, n.horizon) {
                    (None, None) => {
                        required(&mut errors, "noise.steps or noise.horizon");
                        None
                    }
                    (Some(s), None) => Some(s),
                    (steps, Some(h)) => match aligned_cells(h, dt) {
                        Ok(k) if k >= 1 && steps.is_none_or(|s| s as i64 == k) => Some(k as usize),
                        Ok(_) | Err(_) => {
                            errors.push(format!("need steps * dt = horizon with steps >= 1 (dt = {dt}, horizon = {h})"));
                            None
                        }
                    },
                };
                match steps {
                    Some(0) => errors.push("noise.steps must be >= 1".into()),
                    Some(steps) => {
                        let seed = seed_override.unwrap_or(n.seed);
                        plan = Some(NoisePlan { noise_dim: 1, dt, steps, seed });
                    }
                    None => {}
                }
            }
        },
    }

    let eps_frame = cfg.frame.as_ref().and_then(|f| f.eps_frame).unwrap_or(DEFAULT_EPS_FRAME);
    if !(eps_frame > 0.0) {
        errors.push(format!("frame.eps_frame must be > 0, got {eps_frame}"));
    }
    let mut dx = f64::NAN;
    if let (Some(sg), Some(p)) = (&semigroup, &plan) {
        let given = cfg.frame.as_ref().and_then(|f| f.dx);
        dx = match (sg, given) {
            (ContractionSemigroup::Shift { dx: sdx, .. }, Some(d)) if d != *sdx => {
                errors.push(format!("frame.dx = {d} must equal the shift spacing {sdx}"));
                *sdx
            }
            (ContractionSemigroup::Shift { dx: sdx, .. }, _) => *sdx,
            (_, Some(d)) => d,
            (_, None) => p.dt,
        };
        if !(dx > 0.0) {
            errors.push(format!("frame.dx must be > 0, got {dx}"));
        } else if !matches!(sg, ContractionSemigroup::Identity { .. }) && aligned_cells(p.dt, dx).is_err() {
            errors.push(format!("noise.dt = {} is not an integer multiple of frame.dx = {dx}", p.dt));
        }
    }

    let kind = cfg.kind.unwrap_or(ExperimentKind::VerifyFrame);
    let mut model = None;
    if let (Some(sg), Some(p)) = (&semigroup, plan.as_mut()) {
        match &cfg.model {
            None if cfg.kind.is_some_and(|k| k.needs_model()) => required(&mut errors, "model"),
            None => {}
            Some(sel) => match build_model::<f64>(sel, sg.space(), p.horizon()) {
                Ok(m) => {
                    p.noise_dim = m.noise_dim();
                    model = Some(sel.clone());
                }
                Err(e) => errors.push(format!("model: {e}")),
            },
        }
    }

    let dim = semigroup.as_ref().map(|s| s.space().dim()).unwrap_or(0);
    let initial = cfg.initial.clone().unwrap_or_else(|| vec![0.0; dim]);
    if semigroup.is_some() && initial.len() != dim {
        errors.push(format!("initial has {} entries, the state space has {dim}", initial.len()));
    }
    let test = cfg.test.clone().unwrap_or_default();
    if let (Some(sg), Some(p)) = (&semigroup, &plan) {
        check_test(&test, kind, sg.space(), p, &mut errors);
    }

    if !errors.is_empty() {
        return Err(errors);
    }
    let mut test = test;
    if let (Some(o), Some(seeds)) = (seed_override, test.seeds.as_mut()) {
        for (i, s) in seeds.iter_mut().enumerate() {
            *s = o.wrapping_add(i as u64);
        }
    }
    if let (Some(o), Some(probe)) = (seed_override, test.probe.as_mut()) {
        probe.seed = o;
    }
    Ok(Resolved {
        name,
        kind,
        precision: cfg.precision.unwrap_or_default(),
        semigroup: semigroup.expect("checked"),
        dx,
        window: cfg.frame.as_ref().and_then(|f| f.window),
        eps_frame,
        plan: plan.expect("checked"),
        model,
        initial,
        test,
    })
}

fn check_test(test: &TestParams, kind: ExperimentKind, space: SpaceSpec, plan: &NoisePlan, errors: &mut Vec<String>) {
    let dim = space.dim();
    if let Some(times) = &test.times {
        if times.len() != 3 {
            errors.push(format!("test.times must be [r, s, t], got {} entries", times.len()));
        } else {
            match times.iter().map(|&t| plan.index_of(t)).collect::<Result<Vec<_>>>() {
                Ok(idx) if idx[0] <= idx[1] && idx[1] <= idx[2] => {}
                Ok(_) => errors.push("test.times must satisfy r <= s <= t".into()),
                Err(e) => errors.push(format!("test.times: {e}")),
            }
        }
    }
    if let Some(s) = test.start {
        if let Err(e) = plan.index_of(s) {
            errors.push(format!("test.start: {e}"));
        }
    }
    for (field, v) in [
        ("n_paths", test.n_paths),
        ("n_inner", test.n_inner),
        ("levels", test.levels),
        ("reference_factor", test.reference_factor),
        ("samples", test.samples),
    ] {
        if v == Some(0) {
            errors.push(format!("test.{field} must be >= 1"));
        }
    }
    if test.n_outer.is_some_and(|n| n < 2) {
        errors.push("test.n_outer must be >= 2".into());
    }
    if test.seeds.as_ref().is_some_and(|s| s.is_empty()) {
        errors.push("test.seeds must not be empty".into());
    }
    if let Some(phi) = &test.test_function {
        if let Err(e) = phi.validate(space) {
            errors.push(format!("test.test_function: {e}"));
        }
    }
    if let Some(law) = &test.initial_law {
        if law.mean.len() != dim {
            errors.push(format!("test.initial_law.mean has {} entries, expected {dim}", law.mean.len()));
        }
        if !(law.scale >= 0.0) {
            errors.push("test.initial_law.scale must be >= 0".into());
        }
    }
    match (&test.zeta, kind) {
        (Some(z), _) if z.len() != dim => errors.push(format!("test.zeta has {} entries, expected {dim}", z.len())),
        (None, ExperimentKind::Lipschitz) => required(errors, "test.zeta"),
        _ => {}
    }
    if let Some(tol) = test.tolerance {
        if !(tol >= 0.0) {
            errors.push("test.tolerance must be >= 0".into());
        }
    }
}

/// Flags shared by `run` and `suite`.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seed_override: Option<u64>,
    /// Also write wall-clock timing to `timing.json`.
    pub timing: bool,
}

/// Result of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub name: String,
    pub kind: Option<ExperimentKind>,
    pub config_hash: Option<String>,
    pub pass: bool,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

impl RunOutcome {
    fn failed(name: &str, kind: Option<ExperimentKind>, hash: Option<String>, code: i32, errors: Vec<String>) -> Self {
        RunOutcome { name: name.to_string(), kind, config_hash: hash, pass: false, exit_code: code, errors }
    }
}

/// Everything needed to replay a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub name: String,
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub precision: Precision,
    pub master_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed_override: Option<u64>,
    pub seeds: Vec<u64>,
    pub plan: NoisePlan,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_frame: Option<f64>,
    pub pass: bool,
    pub exit_code: i32,
    pub aborted_paths: Vec<u64>,
    pub outputs: Vec<String>,
}

/// Plain numeric table written as CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
        w.write_record(&self.header).map_err(|e| Error::Io(e.to_string()))?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Outcome of executing a resolved experiment.
#[derive(Debug, Clone, Default)]
pub struct Execution {
    pub pass: bool,
    pub aborted: Vec<u64>,
    pub seeds: Vec<u64>,
    pub eps_frame: Option<f64>,
    pub sections: BTreeMap<String, Value>,
    pub tables: BTreeMap<String, Table>,
}

impl Execution {
    fn section<S: Serialize>(&mut self, key: &str, value: &S) {
        self.sections.insert(key.into(), serde_json::to_value(value).expect("report serializes"));
    }

    fn stat(&mut self, key: &str, rep: &StatReport) {
        self.aborted.extend(rep.aborted.iter().copied());
        for (curve, points) in &rep.curves {
            self.tables.insert(
                format!("curves/{key}_{curve}.csv"),
                Table {
                    header: ["t", "estimate", "stderr", "bound"].map(String::from).to_vec(),
                    rows: points.iter().map(|p| vec![p.t, p.estimate, p.stderr, p.bound.unwrap_or(f64::NAN)]).collect(),
                },
            );
        }
        self.section(key, rep);
    }
}

fn semigroup_as<T: Scalar>(s: &ContractionSemigroup<f64>) -> ContractionSemigroup<T> {
    match s {
        ContractionSemigroup::Diagonal { rates } => {
            ContractionSemigroup::Diagonal { rates: rates.iter().map(|&r| T::of(r)).collect() }
        }
        ContractionSemigroup::Shift { dx, points } => ContractionSemigroup::Shift { dx: *dx, points: *points },
        ContractionSemigroup::Identity { dim } => ContractionSemigroup::Identity { dim: *dim },
    }
}

fn hvec<T: Scalar>(space: SpaceSpec, v: &[f64]) -> Result<HVec<T>> {
    HVec::from_vec(space, v.iter().map(|&x| T::of(x)).collect())
}

fn to_f64<T: Scalar>(x: &HVec<T>) -> Vec<f64> {
    x.data().iter().map(|v| v.as_f64()).collect()
}

/// Runs a resolved experiment in precision `T`.
pub fn execute<T: Scalar>(r: &Resolved) -> Result<Execution> {
    let sg: ContractionSemigroup<T> = semigroup_as(&r.semigroup);
    let space = sg.space();
    let horizon = r.horizon();
    let plan = r.plan;
    let model: Option<CoefficientModel<T>> = r.model.as_ref().map(|m| build_model(m, space, horizon)).transpose()?;
    let model_ref = || model.as_ref().ok_or_else(|| Error::Config("missing required field `model`".into()));
    let make_frame = || -> Result<DilationFrame<T>> {
        let window = r.window.unwrap_or_else(|| required_window(&sg, r.dx, horizon, r.eps_frame));
        dilate(&sg, window, r.dx, horizon, r.eps_frame)
    };
    let xi: HVec<T> = hvec(space, &r.initial)?;
    let mut ex = Execution { seeds: vec![plan.seed], ..Execution::default() };

    match r.kind {
        ExperimentKind::VerifyFrame => {
            let frame = make_frame()?;
            let n = r.test.samples.unwrap_or(20);
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            let xs: Vec<HVec<T>> = (0..n)
                .map(|_| HVec::from_fn(space, |_| T::of(StandardNormal.sample(&mut rng))))
                .collect();
            let hs: Vec<HVec<T>> = (0..n).map(|_| frame.sample_core(&mut rng)).collect();
            let mut idx: Vec<usize> = (0..10).map(|i| i * plan.steps / 9).collect();
            idx.dedup();
            let times: Vec<f64> = idx.iter().map(|&k| plan.time(k)).collect();
            let rep = frame.verify(&times, &xs, &hs)?;
            ex.pass = rep.pass;
            ex.eps_frame = Some(frame.eps_frame());
            ex.section("frame", &rep);
            ex.section("window", &frame.window());
            ex.section("times", &times);
        }
        ExperimentKind::ProbeConditions => {
            let rep = probe_conditions(model_ref()?, &r.probe_settings())?;
            ex.pass = rep.pass;
            ex.seeds = vec![rep.seed];
            ex.section("conditions", &rep);
        }
        ExperimentKind::ProbeTransferred => {
            let m = model_ref()?;
            let frame = make_frame()?;
            let dc = transform_to_frame(m, &frame)?;
            let settings = r.probe_settings();
            let base = probe_conditions(m, &settings)?;
            let lifted = probe_transferred_conditions(&dc, &settings)?;
            ex.pass = base.pass && lifted.pass;
            ex.seeds = vec![settings.seed];
            ex.eps_frame = Some(frame.eps_frame());
            ex.section("conditions", &base);
            ex.section("transferred", &lifted);
        }
        ExperimentKind::Simulate => {
            let m = model_ref()?;
            let frame;
            let direct = DirectScheme::new(m, &sg)?;
            let framed;
            let scheme: &dyn MildScheme<T> = match r.scheme(SchemeChoice::Frame) {
                SchemeChoice::Direct => &direct,
                _ => {
                    frame = make_frame()?;
                    ex.eps_frame = Some(frame.eps_frame());
                    framed = FrameScheme::new(transform_to_frame(m, &frame)?);
                    &framed
                }
            };
            simulate_section(r, scheme, &xi, &mut ex)?;
        }
        ExperimentKind::CrossValidate => {
            let m = model_ref()?;
            let frame = make_frame()?;
            let dc = transform_to_frame(m, &frame)?;
            let tol = r.test.tolerance.unwrap_or(SCHEME_TOL);
            let rep = check_start_correspondence(&dc, 0.0, &xi, &plan, r.n_paths(50), tol)?;
            // lift of a direct path, projected back
            let inc = plan.increments::<T>(stream_id(0, 0));
            let path = solve_mild_direct_with_increments(&sg, m, &xi, &plan, &inc, 0)?;
            let xs = path.mild.clone().expect("direct paths carry mild states");
            let back = project_mild(&frame, &lift_mild_with_increments(&dc, &path, &plan, &inc)?)?;
            let round_trip = sup_distance(back.mild.as_ref().expect("projected"), &xs)?;
            ex.pass = rep.pass && round_trip <= tol;
            ex.eps_frame = Some(frame.eps_frame());
            ex.stat("scheme_equivalence", &rep);
            ex.section("round_trip_defect", &round_trip);
        }
        ExperimentKind::FlowTest => {
            let m = model_ref()?;
            let choice = r.scheme(SchemeChoice::Both);
            let mut pass = true;
            if choice != SchemeChoice::Frame {
                let rep = flow_property(&DirectScheme::new(m, &sg)?, &xi, &plan, r.rst(), r.n_paths(100))?;
                pass &= rep.pass;
                ex.stat("flow_direct", &rep);
            }
            if choice != SchemeChoice::Direct {
                let frame = make_frame()?;
                let scheme = FrameScheme::new(transform_to_frame(m, &frame)?);
                let rep = flow_property(&scheme, &xi, &plan, r.rst(), r.n_paths(100))?;
                pass &= rep.pass;
                ex.eps_frame = Some(frame.eps_frame());
                ex.stat("flow_frame", &rep);
            }
            ex.pass = pass;
        }
        ExperimentKind::Lemma31Test => {
            let m = model_ref()?;
            let frame = make_frame()?;
            let dc = transform_to_frame(m, &frame)?;
            let rep = check_start_correspondence(&dc, r.start(), &xi, &plan, r.n_paths(50), r.test.tolerance.unwrap_or(SCHEME_TOL))?;
            ex.pass = rep.pass;
            ex.eps_frame = Some(frame.eps_frame());
            ex.stat("start_time_correspondence", &rep);
        }
        ExperimentKind::MarkovCk | ExperimentKind::MarkovTower => {
            let m = model_ref()?;
            let frame;
            let direct = DirectScheme::new(m, &sg)?;
            let framed;
            let scheme: &dyn MildScheme<T> = match r.scheme(SchemeChoice::Direct) {
                SchemeChoice::Direct => &direct,
                _ => {
                    frame = make_frame()?;
                    ex.eps_frame = Some(frame.eps_frame());
                    framed = FrameScheme::new(transform_to_frame(m, &frame)?);
                    &framed
                }
            };
            let phi = r.test.test_function.clone().unwrap_or(TestFunction::GaussExp { c: 1.0 });
            let counts = (r.test.n_outer.unwrap_or(200), r.test.n_inner.unwrap_or(200));
            let seeds = r.seeds();
            let max_exc = r.test.max_excursions.unwrap_or(if seeds.len() >= 5 { 1 } else { 0 });
            let law = r.test.initial_law.clone().unwrap_or_else(|| InitialLaw::dirac(r.initial.clone()));
            let (name, key) = if r.kind == ExperimentKind::MarkovCk {
                ("chapman-kolmogorov-seeds", "chapman_kolmogorov")
            } else {
                ("markov-tower-seeds", "markov_tower")
            };
            let rep = seed_family(name, &seeds, max_exc, |seed| {
                let p = NoisePlan { seed, ..plan };
                if r.kind == ExperimentKind::MarkovCk {
                    chapman_kolmogorov(scheme, &p, r.rst(), &xi, &phi, counts)
                } else {
                    markov_tower(scheme, &p, r.rst(), &law, &phi, counts)
                }
            })?;
            ex.pass = rep.pass;
            ex.seeds = seeds;
            ex.stat(key, &rep);
        }
        ExperimentKind::Apriori => {
            let m = model_ref()?;
            let probe = probe_conditions(m, &r.probe_settings())?;
            let frame = make_frame()?;
            let dc = transform_to_frame(m, &frame)?;
            let rep = apriori_bound(&dc, &xi, &plan, r.n_paths(1000))?;
            ex.pass = probe.pass && rep.pass;
            ex.eps_frame = Some(frame.eps_frame());
            ex.section("conditions", &probe);
            ex.stat("apriori", &rep);
        }
        ExperimentKind::Lipschitz => {
            let m = model_ref()?;
            let frame = make_frame()?;
            let dc = transform_to_frame(m, &frame)?;
            let zeta = hvec(space, r.test.zeta.as_deref().unwrap_or_default())?;
            let rep = lipschitz_map(&dc, &xi, &zeta, &plan, r.n_paths(1000))?;
            ex.pass = rep.pass;
            ex.eps_frame = Some(frame.eps_frame());
            ex.stat("lipschitz", &rep);
        }
        ExperimentKind::Convergence => {
            let m = model_ref()?;
            let rep = strong_order(
                m,
                &sg,
                &xi,
                &plan,
                r.test.levels.unwrap_or(3),
                r.test.reference_factor.unwrap_or(16),
                r.n_paths(500),
                r.test.min_order.unwrap_or(0.3),
            )?;
            ex.pass = rep.pass;
            ex.stat("strong_order", &rep);
        }
    }
    if !ex.aborted.is_empty() {
        ex.pass = false;
    }
    Ok(ex)
}

fn simulate_section<T: Scalar>(r: &Resolved, scheme: &dyn MildScheme<T>, xi: &HVec<T>, ex: &mut Execution) -> Result<()> {
    let plan = r.plan;
    let n = r.n_paths(10);
    let write = r.test.write_paths.unwrap_or(n.min(10)).min(n);
    let model = scheme.model();
    let dim = xi.dim();
    let header: Vec<String> =
        std::iter::once("t".to_string()).chain((0..dim).map(|k| format!("x{k}"))).collect();
    let mut finals = Vec::with_capacity(n);
    let mut integrability = 0.0f64;
    let runs: Vec<Result<Vec<HVec<T>>>> = {
        use rayon::prelude::*;
        (0..n)
            .into_par_iter()
            .map(|i| scheme.states(xi, &plan.increments(stream_id(0, i as u64)), 0, plan.steps))
            .collect()
    };
    for (i, run) in runs.into_iter().enumerate() {
        let xs = match run {
            Ok(xs) => xs,
            Err(Error::NonFinite { path, .. }) => {
                ex.aborted.push(path);
                continue;
            }
            Err(e) => return Err(e),
        };
        if i < write {
            let mut sum = 0.0;
            for (k, x) in xs[..plan.steps].iter().enumerate() {
                let t = plan.time(k);
                sum += (model.alpha(t, x).norm().as_f64() + model.sigma(t, x).hs_norm_sq().as_f64()) * plan.dt;
            }
            integrability = integrability.max(sum);
            ex.tables.insert(
                format!("paths/path_{i:05}.csv"),
                Table {
                    header: header.clone(),
                    rows: xs.iter().enumerate().map(|(k, x)| [vec![plan.time(k)], to_f64(x)].concat()).collect(),
                },
            );
        }
        finals.push(to_f64(xs.last().expect("at least the initial state")));
    }
    let mut moments = Vec::with_capacity(dim);
    for k in 0..dim {
        let v: Vec<f64> = finals.iter().map(|f| f[k]).collect();
        let (m, se) = mean_stderr(&v);
        let sq: Vec<f64> = v.iter().map(|x| (x - m) * (x - m)).collect();
        let (var, var_se) = mean_stderr(&sq);
        moments.push(json!({"coordinate": k, "mean": m, "mean_stderr": se, "variance": var, "variance_stderr": var_se}));
    }
    ex.pass = ex.aborted.is_empty();
    ex.section("scheme", &scheme.id());
    ex.section("frame", &scheme.frame_id());
    ex.section("paths", &finals.len());
    ex.section("terminal_moments", &moments);
    ex.section("integrability_sum_max", &integrability);
    if r.test.richardson.unwrap_or(false) {
        let mm = terminal_moments(scheme, xi, &plan, n)?;
        ex.aborted.extend(mm.aborted.iter().copied());
        ex.section("richardson", &mm);
    }
    Ok(())
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "experiment".into())
}

/// Parses, validates, executes and persists one configuration file.
pub fn run_file(path: &Path, opts: &RunOptions) -> RunOutcome {
    let stem = file_stem(path);
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return RunOutcome::failed(&stem, None, None, EXIT_CONFIG, vec![format!("cannot read {}: {e}", path.display())]),
    };
    match serde_json::from_str::<Value>(&text) {
        Ok(v) => run_value(&v, &stem, opts),
        Err(e) => RunOutcome::failed(&stem, None, None, EXIT_CONFIG, vec![format!("invalid JSON: {e}")]),
    }
}

/// As [`run_file`], from an already parsed JSON value.
pub fn run_value(value: &Value, fallback_name: &str, opts: &RunOptions) -> RunOutcome {
    let hash = config_hash(value);
    let cfg: ExperimentConfig = match serde_json::from_value(value.clone()) {
        Ok(c) => c,
        Err(e) => return RunOutcome::failed(fallback_name, None, Some(hash), EXIT_CONFIG, vec![e.to_string()]),
    };
    let resolved = match resolve(&cfg, fallback_name, opts.seed_override) {
        Ok(r) => r,
        Err(errors) => {
            let name = cfg.name.as_deref().unwrap_or(fallback_name);
            return RunOutcome::failed(name, cfg.kind, Some(hash), EXIT_CONFIG, errors);
        }
    };
    let started = Instant::now();
    let executed = match resolved.precision {
        Precision::F64 => execute::<f64>(&resolved),
        Precision::F32 => execute::<f32>(&resolved),
    };
    let elapsed = started.elapsed().as_secs_f64();
    let name = resolved.name.clone();
    let ex = match executed {
        Ok(ex) => ex,
        Err(e) => {
            let code = if e.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME };
            return RunOutcome::failed(&name, Some(resolved.kind), Some(hash), code, vec![e.to_string()]);
        }
    };
    let exit_code = if !ex.aborted.is_empty() {
        EXIT_RUNTIME
    } else if ex.pass {
        EXIT_PASS
    } else {
        EXIT_FAIL
    };
    let mut outcome = RunOutcome {
        name: name.clone(),
        kind: Some(resolved.kind),
        config_hash: Some(hash.clone()),
        pass: ex.pass,
        exit_code,
        errors: Vec::new(),
    };
    if !ex.aborted.is_empty() {
        outcome.errors.push(format!("{} path(s) overflowed", ex.aborted.len()));
    }
    if let Err(e) = persist(&resolved, &ex, &hash, exit_code, elapsed, opts) {
        outcome.pass = false;
        outcome.exit_code = EXIT_RUNTIME;
        outcome.errors.push(e.to_string());
    }
    outcome
}

fn persist(r: &Resolved, ex: &Execution, hash: &str, exit_code: i32, elapsed: f64, opts: &RunOptions) -> Result<()> {
    let dir = opts.out_dir.join(&r.name);
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    let mut outputs: BTreeSet<String> = ["manifest.json".to_string(), "report.json".to_string()].into();
    for (rel, table) in &ex.tables {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        table.write(&path)?;
        outputs.insert(rel.clone());
    }
    let report = json!({
        "name": r.name,
        "kind": r.kind,
        "pass": ex.pass,
        "eps_frame": ex.eps_frame,
        "results": ex.sections,
    });
    write_json(&dir.join("report.json"), &report)?;
    if opts.timing {
        write_json(&dir.join("timing.json"), &json!({"elapsed_seconds": elapsed}))?;
        outputs.insert("timing.json".into());
    }
    let manifest = RunManifest {
        tool: "mframe".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        name: r.name.clone(),
        kind: r.kind,
        config_hash: hash.to_string(),
        precision: r.precision,
        master_seed: r.plan.seed,
        seed_override: opts.seed_override,
        seeds: ex.seeds.clone(),
        plan: r.plan,
        eps_frame: ex.eps_frame,
        pass: ex.pass,
        exit_code,
        aborted_paths: ex.aborted.clone(),
        outputs: outputs.into_iter().collect(),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

/// Rollup of a suite run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
    pub total: usize,
    pub passed: usize,
    pub pass: bool,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub file: String,
    #[serde(flatten)]
    pub outcome: RunOutcome,
}

/// Runs every `*.json` in `dir` in filename order and writes `suite.json`.
/// Individual failures are recorded and the suite continues.
pub fn run_suite(dir: &Path, opts: &RunOptions) -> Result<SuiteReport> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Config(format!("cannot read suite directory {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort_by_key(|p| p.file_name().map(|n| n.to_os_string()));
    if files.is_empty() {
        return Err(Error::Config(format!("no *.json configs in {}", dir.display())));
    }
    let mut seen = BTreeMap::new();
    for f in &files {
        let name = fs::read_to_string(f)
            .ok()
            .and_then(|t| serde_json::from_str::<Value>(&t).ok())
            .and_then(|v| v.get("name").and_then(Value::as_str).map(String::from))
            .unwrap_or_else(|| file_stem(f));
        if let Some(prev) = seen.insert(name.clone(), f.clone()) {
            return Err(Error::Config(format!(
                "duplicate config name `{name}` in {} and {}",
                prev.display(),
                f.display()
            )));
        }
    }
    let entries: Vec<SuiteEntry> = files
        .iter()
        .map(|f| SuiteEntry {
            file: f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            outcome: run_file(f, opts),
        })
        .collect();
    let passed = entries.iter().filter(|e| e.outcome.pass).count();
    let exit_code = entries.iter().map(|e| e.outcome.exit_code).max().unwrap_or(EXIT_PASS);
    let report = SuiteReport { total: entries.len(), passed, pass: passed == entries.len(), exit_code, entries };
    fs::create_dir_all(&opts.out_dir)?;
    write_json(&opts.out_dir.join("suite.json"), &report)?;
    Ok(report)
}
