//! Finite discretizations of the state space `H`, the noise space `U` and
//! the dilated space.
//!
//! Vectors are stored by point samples (grids) or coefficients (spectral).
//! Grid inner products apply the rectangle-rule weight `dx` so that they
//! approximate the `L²` integral; spectral inner products are plain sums.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Shape of a discretized real Hilbert space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceSpec {
    /// `K` orthonormal modes.
    Spectral { modes: usize },
    /// Samples at `left + i dx`, `i = 0..points`.
    LineGrid { left: f64, dx: f64, points: usize },
    /// Samples at `i dx`, `i = 0..points`.
    HalflineGrid { dx: f64, points: usize },
    /// `copies` independent line grids stored back to back.
    ParallelLineGrids {
        copies: usize,
        left: f64,
        dx: f64,
        points: usize,
    },
}

impl SpaceSpec {
    pub fn spectral(modes: usize) -> Result<Self> {
        let s = SpaceSpec::Spectral { modes };
        s.validate()?;
        Ok(s)
    }

    pub fn line_grid(left: f64, dx: f64, points: usize) -> Result<Self> {
        let s = SpaceSpec::LineGrid { left, dx, points };
        s.validate()?;
        Ok(s)
    }

    pub fn halfline_grid(dx: f64, points: usize) -> Result<Self> {
        let s = SpaceSpec::HalflineGrid { dx, points };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let grid_ok = |dx: f64, points: usize| -> Result<()> {
            if !(dx > 0.0 && dx.is_finite()) {
                return Err(Error::InvalidSpace(format!("grid spacing must be > 0, got {dx}")));
            }
            if points < 2 {
                return Err(Error::InvalidSpace(format!("grid needs at least 2 points, got {points}")));
            }
            Ok(())
        };
        match *self {
            SpaceSpec::Spectral { modes: 0 } => {
                Err(Error::InvalidSpace("spectral space needs at least one mode".into()))
            }
            SpaceSpec::Spectral { .. } => Ok(()),
            SpaceSpec::LineGrid { left, dx, points } => {
                if !left.is_finite() {
                    return Err(Error::InvalidSpace("left endpoint must be finite".into()));
                }
                grid_ok(dx, points)
            }
            SpaceSpec::HalflineGrid { dx, points } => grid_ok(dx, points),
            SpaceSpec::ParallelLineGrids { copies, left, dx, points } => {
                if copies == 0 {
                    return Err(Error::InvalidSpace("need at least one grid copy".into()));
                }
                if !left.is_finite() {
                    return Err(Error::InvalidSpace("left endpoint must be finite".into()));
                }
                grid_ok(dx, points)
            }
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            SpaceSpec::Spectral { modes } => modes,
            SpaceSpec::LineGrid { points, .. } | SpaceSpec::HalflineGrid { points, .. } => points,
            SpaceSpec::ParallelLineGrids { copies, points, .. } => copies * points,
        }
    }

    /// Quadrature weight applied to every product of samples.
    pub fn weight<T: Scalar>(&self) -> T {
        match *self {
            SpaceSpec::Spectral { .. } => T::one(),
            SpaceSpec::LineGrid { dx, .. }
            | SpaceSpec::HalflineGrid { dx, .. }
            | SpaceSpec::ParallelLineGrids { dx, .. } => T::of(dx),
        }
    }

    pub fn spacing(&self) -> Option<f64> {
        match *self {
            SpaceSpec::Spectral { .. } => None,
            SpaceSpec::LineGrid { dx, .. }
            | SpaceSpec::HalflineGrid { dx, .. }
            | SpaceSpec::ParallelLineGrids { dx, .. } => Some(dx),
        }
    }

    /// Spatial coordinate of sample `i` (within its copy for parallel grids).
    pub fn coordinate(&self, i: usize) -> Option<f64> {
        match *self {
            SpaceSpec::Spectral { .. } => None,
            SpaceSpec::LineGrid { left, dx, .. } => Some(left + i as f64 * dx),
            SpaceSpec::HalflineGrid { dx, .. } => Some(i as f64 * dx),
            SpaceSpec::ParallelLineGrids { left, dx, points, .. } => {
                Some(left + (i % points) as f64 * dx)
            }
        }
    }

    fn check_same(&self, other: &SpaceSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::SpaceMismatch { left: *self, right: *other })
        }
    }
}

/// Element of a discretized Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct HVec<T> {
    space: SpaceSpec,
    data: Vec<T>,
}

impl<T: Scalar> HVec<T> {
    pub fn zeros(space: SpaceSpec) -> Self {
        HVec { space, data: vec![T::zero(); space.dim()] }
    }

    pub fn from_vec(space: SpaceSpec, data: Vec<T>) -> Result<Self> {
        if data.len() != space.dim() {
            return Err(Error::DimensionMismatch { expected: space.dim(), actual: data.len() });
        }
        Ok(HVec { space, data })
    }

    pub fn from_fn(space: SpaceSpec, f: impl FnMut(usize) -> T) -> Self {
        HVec { space, data: (0..space.dim()).map(f).collect() }
    }

    /// Coefficient vector `e_k` (unit sample, not unit norm, on grids).
    pub fn unit(space: SpaceSpec, k: usize) -> Self {
        let mut v = Self::zeros(space);
        v.data[k] = T::one();
        v
    }

    pub fn space(&self) -> SpaceSpec {
        self.space
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn inner(&self, other: &HVec<T>) -> Result<T> {
        self.space.check_same(&other.space)?;
        Ok(self.inner_unchecked(other))
    }

    pub(crate) fn inner_unchecked(&self, other: &HVec<T>) -> T {
        let s: T = self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum();
        s * self.space.weight::<T>()
    }

    pub fn norm_sq(&self) -> T {
        self.inner_unchecked(self)
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    /// `self + a x`, in place.
    pub fn axpy(&mut self, a: T, x: &HVec<T>) -> Result<()> {
        self.space.check_same(&x.space)?;
        for (y, &xi) in self.data.iter_mut().zip(&x.data) {
            *y = *y + a * xi;
        }
        Ok(())
    }

    pub fn add(&self, other: &HVec<T>) -> Result<HVec<T>> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &HVec<T>) -> Result<HVec<T>> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, a: T) -> HVec<T> {
        self.map(|x| a * x)
    }

    pub fn neg(&self) -> HVec<T> {
        self.map(|x| -x)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> HVec<T> {
        HVec { space: self.space, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_with(&self, other: &HVec<T>, f: impl Fn(T, T) -> T) -> Result<HVec<T>> {
        self.space.check_same(&other.space)?;
        Ok(HVec {
            space: self.space,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// `‖self − other‖`.
    pub fn distance(&self, other: &HVec<T>) -> Result<T> {
        Ok(self.sub(other)?.norm())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }
}

/// Hilbert–Schmidt operator from the spectral noise space `ℝ^m` into a
/// discretized space, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HSOperator<T> {
    codomain: SpaceSpec,
    noise_dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> HSOperator<T> {
    pub fn zeros(codomain: SpaceSpec, noise_dim: usize) -> Self {
        HSOperator { codomain, noise_dim, data: vec![T::zero(); codomain.dim() * noise_dim] }
    }

    pub fn from_columns(codomain: SpaceSpec, columns: Vec<HVec<T>>) -> Result<Self> {
        let noise_dim = columns.len();
        let mut data = Vec::with_capacity(codomain.dim() * noise_dim);
        for col in columns {
            codomain.check_same(&col.space)?;
            data.extend_from_slice(&col.data);
        }
        Ok(HSOperator { codomain, noise_dim, data })
    }

    /// Diagonal operator on a space of the same dimension as the noise.
    pub fn diagonal(codomain: SpaceSpec, diag: &[T]) -> Result<Self> {
        let n = codomain.dim();
        if diag.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: diag.len() });
        }
        let mut op = Self::zeros(codomain, n);
        for (j, &d) in diag.iter().enumerate() {
            op.data[j * n + j] = d;
        }
        Ok(op)
    }

    pub fn codomain(&self) -> SpaceSpec {
        self.codomain
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn column(&self, j: usize) -> HVec<T> {
        let n = self.codomain.dim();
        HVec { space: self.codomain, data: self.data[j * n..(j + 1) * n].to_vec() }
    }

    pub fn column_slice(&self, j: usize) -> &[T] {
        let n = self.codomain.dim();
        &self.data[j * n..(j + 1) * n]
    }

    pub fn columns(&self) -> impl Iterator<Item = HVec<T>> + '_ {
        (0..self.noise_dim).map(|j| self.column(j))
    }

    pub fn hs_norm_sq(&self) -> T {
        let s: T = self.data.iter().map(|&x| x * x).sum();
        s * self.codomain.weight::<T>()
    }

    pub fn hs_norm(&self) -> T {
        self.hs_norm_sq().sqrt()
    }

    /// `B w` for a noise-space vector `w`.
    pub fn apply(&self, w: &[T]) -> Result<HVec<T>> {
        if w.len() != self.noise_dim {
            return Err(Error::DimensionMismatch { expected: self.noise_dim, actual: w.len() });
        }
        let n = self.codomain.dim();
        let mut out = vec![T::zero(); n];
        for (j, &wj) in w.iter().enumerate() {
            if wj == T::zero() {
                continue;
            }
            for (o, &b) in out.iter_mut().zip(&self.data[j * n..(j + 1) * n]) {
                *o = *o + b * wj;
            }
        }
        Ok(HVec { space: self.codomain, data: out })
    }

    pub fn sub(&self, other: &HSOperator<T>) -> Result<HSOperator<T>> {
        self.codomain.check_same(&other.codomain)?;
        if self.noise_dim != other.noise_dim {
            return Err(Error::DimensionMismatch { expected: self.noise_dim, actual: other.noise_dim });
        }
        Ok(HSOperator {
            codomain: self.codomain,
            noise_dim: self.noise_dim,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect(),
        })
    }

    pub fn scale(&self, a: T) -> HSOperator<T> {
        HSOperator {
            codomain: self.codomain,
            noise_dim: self.noise_dim,
            data: self.data.iter().map(|&x| a * x).collect(),
        }
    }

    pub fn add(&self, other: &HSOperator<T>) -> Result<HSOperator<T>> {
        let neg = other.scale(-T::one());
        self.sub(&neg)
    }

    /// Applies a linear map column by column.
    pub fn map_columns(&self, f: impl Fn(&HVec<T>) -> Result<HVec<T>>) -> Result<HSOperator<T>> {
        let cols = self.columns().map(|c| f(&c)).collect::<Result<Vec<_>>>()?;
        match cols.first() {
            Some(c) => {
                let space = c.space;
                HSOperator::from_columns(space, cols)
            }
            None => Err(Error::InvalidSpace("operator has no columns".into())),
        }
    }
}
