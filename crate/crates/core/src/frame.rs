//! Contraction semigroups and their unitary dilations.
//!
//! A [`DilationFrame`] bundles a larger space `ℋ`, an isometric embedding
//! `ℓ : H → ℋ`, its adjoint `π = ℓ*` and a unitary translation group `U_t`
//! on `ℋ` such that `π U_t ℓ = S_t`. Two constructive families are
//! provided:
//!
//! * the half-line shift `(S_t h)(s) = h(s + t)`, dilated by the full-line
//!   translation group with zero extension as embedding;
//! * diagonal semigroups `e^{-λ_k t}`, dilated mode by mode by the
//!   translation group with embedding density proportional to
//!   `e^{λ_k s} 1_{s ≤ 0}`.
//!
//! Times are restricted to integer multiples of the grid spacing so that
//! `U_t` is an exact index shift.

use rand::Rng;
use rand_distr::StandardNormal;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{HVec, SpaceSpec};
use crate::scalar::Scalar;

/// Default tolerance for embedding and diagram defects.
pub const DEFAULT_EPS_FRAME: f64 = 1e-10;

/// Number of grid cells spanned by `t`, or an alignment error.
pub fn aligned_cells(t: f64, dx: f64) -> Result<i64> {
    if !t.is_finite() {
        return Err(Error::Misaligned { time: t, dx });
    }
    let k = (t / dx).round();
    if (k * dx - t).abs() > 1e-9 * t.abs().max(1.0) {
        return Err(Error::Misaligned { time: t, dx });
    }
    Ok(k as i64)
}

/// Strongly continuous contraction semigroup on a discretized `H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContractionSemigroup<T> {
    /// `S_t e_k = e^{-λ_k t} e_k` on a spectral space with `K = rates.len()`.
    Diagonal { rates: Vec<T> },
    /// Left translation on a half-line grid; mass leaves through the boundary.
    Shift { dx: f64, points: usize },
    /// `S_t = I` on a spectral space. Its dilation is trivial.
    Identity { dim: usize },
}

impl<T: Scalar> ContractionSemigroup<T> {
    pub fn diagonal(rates: Vec<T>) -> Result<Self> {
        let s = ContractionSemigroup::Diagonal { rates };
        s.validate()?;
        Ok(s)
    }

    pub fn shift(dx: f64, points: usize) -> Result<Self> {
        let s = ContractionSemigroup::Shift { dx, points };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ContractionSemigroup::Diagonal { rates } => {
                if rates.is_empty() {
                    return Err(Error::Config("diagonal semigroup needs at least one rate".into()));
                }
                if let Some(bad) = rates.iter().find(|r| !(r.is_finite() && **r > T::zero())) {
                    return Err(Error::Config(format!("diagonal rates must be finite and > 0, got {bad}")));
                }
                Ok(())
            }
            ContractionSemigroup::Shift { dx, points } => {
                SpaceSpec::halfline_grid(*dx, *points).map(|_| ())
            }
            ContractionSemigroup::Identity { dim } => SpaceSpec::spectral(*dim).map(|_| ()),
        }
    }

    /// The state space `H` the semigroup acts on.
    pub fn space(&self) -> SpaceSpec {
        match self {
            ContractionSemigroup::Diagonal { rates } => SpaceSpec::Spectral { modes: rates.len() },
            ContractionSemigroup::Shift { dx, points } => {
                SpaceSpec::HalflineGrid { dx: *dx, points: *points }
            }
            ContractionSemigroup::Identity { dim } => SpaceSpec::Spectral { modes: *dim },
        }
    }

    /// `S_t x`.
    pub fn apply(&self, t: f64, x: &HVec<T>) -> Result<HVec<T>> {
        if x.space() != self.space() {
            return Err(Error::SpaceMismatch { left: x.space(), right: self.space() });
        }
        if !(t >= 0.0) {
            return Err(Error::Config(format!("semigroup time must be >= 0, got {t}")));
        }
        match self {
            ContractionSemigroup::Diagonal { rates } => {
                let mut out = x.clone();
                for (v, &r) in out.data_mut().iter_mut().zip(rates) {
                    *v = *v * (-(r * T::of(t))).exp();
                }
                Ok(out)
            }
            ContractionSemigroup::Shift { dx, points } => {
                let k = aligned_cells(t, *dx)? as usize;
                let src = x.data();
                Ok(HVec::from_fn(x.space(), |i| if i + k < *points { src[i + k] } else { T::zero() }))
            }
            ContractionSemigroup::Identity { .. } => Ok(x.clone()),
        }
    }
}

/// Truncation window `[−negative, positive]` of the dilated line grids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Window {
    pub negative: f64,
    pub positive: f64,
}

/// Smallest window for which a frame over `[0, horizon]` meets `eps_frame`.
pub fn required_window<T: Scalar>(
    semigroup: &ContractionSemigroup<T>,
    dx: f64,
    horizon: f64,
    eps_frame: f64,
) -> Window {
    match semigroup {
        ContractionSemigroup::Shift { dx: sdx, points } => Window {
            negative: horizon,
            positive: horizon + (*points as f64 - 1.0) * sdx,
        },
        ContractionSemigroup::Diagonal { rates } => {
            let lambda_min = rates.iter().fold(f64::INFINITY, |m, r| m.min(r.as_f64()));
            // tail mass of the translated embedding beyond the left edge
            let tail = (1.0 / eps_frame).ln() / (2.0 * lambda_min);
            let negative = ((horizon + tail) / dx).ceil() * dx;
            Window { negative, positive: horizon }
        }
        ContractionSemigroup::Identity { .. } => Window { negative: 0.0, positive: 0.0 },
    }
}

/// Explicit unitary dilation of a contraction semigroup.
#[derive(Debug, Clone)]
pub struct DilationFrame<T> {
    base: ContractionSemigroup<T>,
    base_space: SpaceSpec,
    space: SpaceSpec,
    dx: f64,
    window: Window,
    horizon: f64,
    eps_frame: f64,
    origin: usize,
    line_len: usize,
    // diagonal kind: embedding density per mode at indices 0..=origin
    profiles: Vec<Vec<T>>,
}

/// Builds the dilation frame of `semigroup` on `[−window.negative,
/// window.positive]` with spacing `dx`, valid for times in `[0, horizon]`.
pub fn dilate<T: Scalar>(
    semigroup: &ContractionSemigroup<T>,
    window: Window,
    dx: f64,
    horizon: f64,
    eps_frame: f64,
) -> Result<DilationFrame<T>> {
    semigroup.validate()?;
    if !(dx > 0.0 && dx.is_finite()) {
        return Err(Error::Config(format!("frame spacing must be > 0, got {dx}")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::Config(format!("horizon must be >= 0, got {horizon}")));
    }
    if !(eps_frame > 0.0 && eps_frame < 1.0) {
        return Err(Error::Config(format!("eps_frame must lie in (0, 1), got {eps_frame}")));
    }
    let base_space = semigroup.space();
    if let ContractionSemigroup::Identity { .. } = semigroup {
        return Ok(DilationFrame {
            base: semigroup.clone(),
            base_space,
            space: base_space,
            dx,
            window,
            horizon,
            eps_frame,
            origin: 0,
            line_len: base_space.dim(),
            profiles: Vec::new(),
        });
    }
    if !(window.negative > 0.0 && window.positive > 0.0) {
        return Err(Error::Config("window extents must be > 0".into()));
    }
    let need = required_window(semigroup, dx, horizon, eps_frame);
    let slack = 1e-9 * dx;
    if window.negative + slack < need.negative || window.positive + slack < need.positive {
        return Err(Error::Config(format!(
            "window [-{}, {}] too small for horizon {horizon}; need at least [-{}, {}]",
            window.negative, window.positive, need.negative, need.positive
        )));
    }
    let n_neg = (window.negative / dx - 1e-9).ceil() as usize;
    let n_pos = (window.positive / dx - 1e-9).ceil() as usize;
    let line_len = n_neg + n_pos + 1;
    let left = -(n_neg as f64) * dx;

    match semigroup {
        ContractionSemigroup::Shift { dx: sdx, .. } => {
            if ((sdx - dx) / dx).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "shift frame spacing {dx} must equal the state grid spacing {sdx}"
                )));
            }
            Ok(DilationFrame {
                base: semigroup.clone(),
                base_space,
                space: SpaceSpec::line_grid(left, dx, line_len)?,
                dx,
                window,
                horizon,
                eps_frame,
                origin: n_neg,
                line_len,
                    profiles: Vec::new(),
            })
        }
        ContractionSemigroup::Diagonal { rates } => {
            // Density c e^{λ s} on s = -j dx, normalized so the discrete
            // embedding is exactly isometric.
            let profiles = rates
                .iter()
                .map(|r| {
                    let lambda = r.as_f64();
                    let decay: Vec<f64> = (0..=n_neg).map(|j| (-lambda * j as f64 * dx).exp()).collect();
                    let mass: f64 = decay.iter().rev().map(|e| e * e).sum::<f64>() * dx;
                    let c = 1.0 / mass.sqrt();
                    (0..=n_neg).map(|i| T::of(c * decay[n_neg - i])).collect()
                })
                .collect();
            Ok(DilationFrame {
                base: semigroup.clone(),
                base_space,
                space: SpaceSpec::ParallelLineGrids { copies: rates.len(), left, dx, points: line_len },
                dx,
                window,
                horizon,
                eps_frame,
                origin: n_neg,
                line_len,
                profiles,
            })
        }
        ContractionSemigroup::Identity { .. } => unreachable!(),
    }
}

impl<T: Scalar> DilationFrame<T> {
    /// Frame with the smallest admissible window.
    pub fn with_minimal_window(
        semigroup: &ContractionSemigroup<T>,
        dx: f64,
        horizon: f64,
        eps_frame: f64,
    ) -> Result<Self> {
        let w = required_window(semigroup, dx, horizon, eps_frame);
        dilate(semigroup, w, dx, horizon, eps_frame)
    }

    pub fn base(&self) -> &ContractionSemigroup<T> {
        &self.base
    }

    pub fn base_space(&self) -> SpaceSpec {
        self.base_space
    }

    pub fn space(&self) -> SpaceSpec {
        self.space
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn eps_frame(&self) -> f64 {
        self.eps_frame
    }

    pub fn window(&self) -> Window {
        self.window
    }

    fn is_identity(&self) -> bool {
        matches!(self.base, ContractionSemigroup::Identity { .. })
    }

    fn cells(&self, t: f64) -> Result<i64> {
        if self.is_identity() {
            Ok(0)
        } else {
            aligned_cells(t, self.dx)
        }
    }

    fn check_base(&self, x: &HVec<T>) -> Result<()> {
        if x.space() != self.base_space {
            return Err(Error::SpaceMismatch { left: x.space(), right: self.base_space });
        }
        Ok(())
    }

    fn check_dilated(&self, h: &HVec<T>) -> Result<()> {
        if h.space() != self.space {
            return Err(Error::SpaceMismatch { left: h.space(), right: self.space });
        }
        Ok(())
    }

    /// `ℓ x`.
    pub fn embed(&self, x: &HVec<T>) -> Result<HVec<T>> {
        let mut out = HVec::zeros(self.space);
        self.add_lifted(0.0, x, &mut out)?;
        Ok(out)
    }

    /// `π h = ℓ* h`.
    pub fn project(&self, h: &HVec<T>) -> Result<HVec<T>> {
        self.project_translated(0.0, h)
    }

    /// `U_t h`, `(U_t h)(s) = h(s + t)`, zero outside the window. `t` may be negative.
    pub fn translate(&self, t: f64, h: &HVec<T>) -> Result<HVec<T>> {
        self.check_dilated(h)?;
        let c = self.cells(t)?;
        if c == 0 {
            return Ok(h.clone());
        }
        let len = self.line_len as i64;
        let src = h.data();
        Ok(HVec::from_fn(self.space, |j| {
            let line = j / self.line_len;
            let i = (j % self.line_len) as i64 + c;
            if (0..len).contains(&i) {
                src[line * self.line_len + i as usize]
            } else {
                T::zero()
            }
        }))
    }

    /// `U_t* h = U_{-t} h`.
    pub fn translate_adjoint(&self, t: f64, h: &HVec<T>) -> Result<HVec<T>> {
        self.translate(-t, h)
    }

    /// `π U_t h`, fused.
    pub fn project_translated(&self, t: f64, h: &HVec<T>) -> Result<HVec<T>> {
        self.check_dilated(h)?;
        let c = self.cells(t)?;
        let src = h.data();
        let len = self.line_len as i64;
        match &self.base {
            ContractionSemigroup::Identity { .. } => Ok(HVec::from_fn(self.base_space, |i| src[i])),
            ContractionSemigroup::Shift { points, .. } => {
                let origin = self.origin as i64;
                let mut out = HVec::zeros(self.base_space);
                for (i, o) in out.data_mut().iter_mut().enumerate().take(*points) {
                    let j = origin + i as i64 + c;
                    if (0..len).contains(&j) {
                        *o = src[j as usize];
                    }
                }
                Ok(out)
            }
            ContractionSemigroup::Diagonal { .. } => {
                let w = T::of(self.dx);
                let mut out = HVec::zeros(self.base_space);
                for (k, o) in out.data_mut().iter_mut().enumerate() {
                    let line = &src[k * self.line_len..(k + 1) * self.line_len];
                    let (lo, hi) = clip(0, self.origin as i64, c, len);
                    let mut acc = T::zero();
                    for i in lo..=hi {
                        acc = acc + self.profiles[k][i as usize] * line[(i + c) as usize];
                    }
                    if lo <= hi {
                        *o = acc * w;
                    }
                }
                Ok(out)
            }
        }
    }

    /// `U_t* ℓ x`.
    pub fn lift(&self, t: f64, x: &HVec<T>) -> Result<HVec<T>> {
        let mut out = HVec::zeros(self.space);
        self.add_lifted(t, x, &mut out)?;
        Ok(out)
    }

    /// `target += U_t* ℓ x`, fused.
    pub fn add_lifted(&self, t: f64, x: &HVec<T>, target: &mut HVec<T>) -> Result<()> {
        self.check_base(x)?;
        self.check_dilated(target)?;
        // (U_{-t} g)(j) = g(j - c)
        let c = self.cells(t)?;
        let len = self.line_len as i64;
        let xs = x.data();
        let out = target.data_mut();
        match &self.base {
            ContractionSemigroup::Identity { .. } => {
                for (o, &v) in out.iter_mut().zip(xs) {
                    *o = *o + v;
                }
            }
            ContractionSemigroup::Shift { points, .. } => {
                let origin = self.origin as i64;
                for (i, &v) in xs.iter().enumerate().take(*points) {
                    let j = origin + i as i64 + c;
                    if (0..len).contains(&j) {
                        out[j as usize] = out[j as usize] + v;
                    }
                }
            }
            ContractionSemigroup::Diagonal { .. } => {
                for (k, &v) in xs.iter().enumerate() {
                    let line = &mut out[k * self.line_len..(k + 1) * self.line_len];
                    let (lo, hi) = clip(0, self.origin as i64, c, len);
                    for i in lo..=hi {
                        let j = (i + c) as usize;
                        line[j] = line[j] + v * self.profiles[k][i as usize];
                    }
                }
            }
        }
        Ok(())
    }

    /// `π U_t ℓ x`, computed by composing the three maps.
    pub fn diagram(&self, t: f64, x: &HVec<T>) -> Result<HVec<T>> {
        let lifted = self.embed(x)?;
        let moved = self.translate(t, &lifted)?;
        self.project(&moved)
    }

    /// Index range (per line) of vectors that stay inside the window under
    /// every translation by `|t| ≤ horizon`.
    pub fn core_range(&self) -> (usize, usize) {
        if self.is_identity() {
            return (0, self.line_len);
        }
        let k = (self.horizon / self.dx).round() as usize;
        (k.min(self.line_len), self.line_len.saturating_sub(k))
    }

    /// Random Gaussian vector of `ℋ` supported in the core range.
    pub fn sample_core<R: Rng + ?Sized>(&self, rng: &mut R) -> HVec<T> {
        let (lo, hi) = self.core_range();
        let mut h = HVec::zeros(self.space);
        for (j, v) in h.data_mut().iter_mut().enumerate() {
            let i = j % self.line_len;
            if i >= lo && i < hi {
                let z: f64 = rng.sample(StandardNormal);
                *v = T::of(z);
            }
        }
        h
    }

    /// Checks the commuting diagram and the group laws on the given samples.
    ///
    /// `h_samples` should lie in [`core_range`](Self::core_range); the group
    /// laws are exact only there.
    pub fn verify(&self, t_samples: &[f64], x_samples: &[HVec<T>], h_samples: &[HVec<T>]) -> Result<FrameReport> {
        for &t in t_samples {
            if t < 0.0 || t > self.horizon * (1.0 + 1e-12) {
                return Err(Error::Config(format!("sample time {t} outside [0, {}]", self.horizon)));
            }
            self.cells(t)?;
        }
        let mut r = FrameReport { eps_frame: self.eps_frame, ..FrameReport::default() };
        for x in x_samples {
            let ex = self.embed(x)?;
            r.embedding_defect = r.embedding_defect.max((ex.norm() - x.norm()).abs().as_f64());
            for &t in t_samples {
                let lhs = self.diagram(t, x)?;
                let rhs = self.base.apply(t, x)?;
                r.diagram_defect = r.diagram_defect.max(lhs.distance(&rhs)?.as_f64());
            }
        }
        for h in h_samples {
            let hn = h.norm();
            for &t in t_samples {
                for tt in [t, -t] {
                    let moved = self.translate(tt, h)?;
                    r.isometry_defect = r.isometry_defect.max((moved.norm() - hn).abs().as_f64());
                }
                let back = self.translate(-t, &self.translate(t, h)?)?;
                r.inverse_defect = r.inverse_defect.max(back.distance(h)?.as_f64());
                for &s in t_samples {
                    if t + s <= self.horizon * (1.0 + 1e-12) {
                        let composed = self.translate(t, &self.translate(s, h)?)?;
                        let direct = self.translate(t + s, h)?;
                        r.group_law_defect = r.group_law_defect.max(composed.distance(&direct)?.as_f64());
                    }
                }
            }
        }
        r.pass = [r.diagram_defect, r.embedding_defect, r.isometry_defect, r.group_law_defect, r.inverse_defect]
            .iter()
            .all(|&d| d <= self.eps_frame);
        Ok(r)
    }
}

/// Indices `i ∈ [lo, hi]` with `i + shift ∈ [0, len)`.
fn clip(lo: i64, hi: i64, shift: i64, len: i64) -> (i64, i64) {
    (lo.max(-shift), hi.min(len - 1 - shift))
}

/// Maximal defects found by [`DilationFrame::verify`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    /// `max ‖π U_t ℓ x − S_t x‖`
    pub diagram_defect: f64,
    /// `max |‖ℓ x‖ − ‖x‖|`
    pub embedding_defect: f64,
    /// `max |‖U_t h‖ − ‖h‖|`
    pub isometry_defect: f64,
    /// `max ‖U_t U_s h − U_{t+s} h‖`
    pub group_law_defect: f64,
    /// `max ‖U_{-t} U_t h − h‖`
    pub inverse_defect: f64,
    pub eps_frame: f64,
    pub pass: bool,
}
