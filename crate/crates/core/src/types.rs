//! Points, field vectors and charged plates.

use crate::error::{EfmError, Result};

/// A point `x` in the `D`-dimensional data space.
#[derive(Debug, Clone, PartialEq)]
pub struct SpacePoint(pub Vec<f64>);

impl SpacePoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(EfmError::InvalidArgument(format!(
                "non-finite coordinate in {coords:?}"
            )));
        }
        Ok(Self(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

/// A point `(x, z)` of the `(D+1)`-dimensional capacitor space, stored
/// contiguously with `z` last.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedPoint(pub Vec<f64>);

impl ExtendedPoint {
    pub fn new(x: &[f64], z: f64) -> Self {
        let mut v = Vec::with_capacity(x.len() + 1);
        v.extend_from_slice(x);
        v.push(z);
        Self(v)
    }

    pub fn from_slice(coords: &[f64]) -> Self {
        assert!(!coords.is_empty(), "extended point needs at least z");
        Self(coords.to_vec())
    }

    /// Data-space dimension `D`.
    pub fn dim_d(&self) -> usize {
        self.0.len() - 1
    }

    pub fn x(&self) -> &[f64] {
        &self.0[..self.0.len() - 1]
    }

    pub fn z(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn space_point(&self) -> SpacePoint {
        SpacePoint(self.x().to_vec())
    }
}

/// Field value `(E_x, E_z)` at a point of the capacitor space.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldVector(pub Vec<f64>);

impl FieldVector {
    pub fn zeros(ambient: usize) -> Self {
        Self(vec![0.0; ambient])
    }

    pub fn x(&self) -> &[f64] {
        &self.0[..self.0.len() - 1]
    }

    pub fn z(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sign of the charge carried by a plate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Charge {
    Positive,
    Negative,
}

impl Charge {
    pub fn sign(self) -> f64 {
        match self {
            Charge::Positive => 1.0,
            Charge::Negative => -1.0,
        }
    }
}

/// Weighted charge samples lying in the hyperplane `z = z_offset`.
///
/// Coordinates are stored row-major, one `D`-vector per sample. Weights are
/// nonnegative and sum to one; the total charge is `sign`.
#[derive(Debug, Clone)]
pub struct PlateSet {
    coords: Vec<f64>,
    dim: usize,
    weights: Vec<f64>,
    z_offset: f64,
    charge: Charge,
}

impl PlateSet {
    /// Plate with uniform weights `1/N`.
    pub fn uniform(coords: Vec<f64>, dim: usize, z_offset: f64, charge: Charge) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(EfmError::ShapeMismatch(format!(
                "{} coordinates do not split into rows of {dim}",
                coords.len()
            )));
        }
        let n = coords.len() / dim;
        Self::weighted(coords, dim, vec![1.0 / n as f64; n], z_offset, charge)
    }

    /// Plate with explicit weights; they are rescaled to sum to one.
    pub fn weighted(
        coords: Vec<f64>,
        dim: usize,
        mut weights: Vec<f64>,
        z_offset: f64,
        charge: Charge,
    ) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(EfmError::ShapeMismatch(format!(
                "{} coordinates do not split into rows of {dim}",
                coords.len()
            )));
        }
        let n = coords.len() / dim;
        if n == 0 {
            return Err(EfmError::EmptyDataset);
        }
        if weights.len() != n {
            return Err(EfmError::ShapeMismatch(format!(
                "{} weights for {n} samples",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(EfmError::InvalidArgument("plate weights must be nonnegative".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) || !z_offset.is_finite() {
            return Err(EfmError::InvalidArgument("plate coordinates must be finite".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(EfmError::InvalidArgument("plate weights sum to zero".into()));
        }
        if (total - 1.0).abs() > 1e-12 {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        Ok(Self {
            coords,
            dim,
            weights,
            z_offset,
            charge,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn z_offset(&self) -> f64 {
        self.z_offset
    }

    pub fn charge(&self) -> Charge {
        self.charge
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    /// Subset of samples by index with weights renormalized to one.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        let mut weights = Vec::with_capacity(indices.len());
        for &i in indices {
            coords.extend_from_slice(self.sample(i));
            weights.push(self.weights[i]);
        }
        Self::weighted(coords, self.dim, weights, self.z_offset, self.charge)
    }
}
