//! Toy distributions, CSV persistence and standardization.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{EfmError, Result};
use crate::rng::Stream;
use crate::types::{Charge, PlateSet};

/// Lower end of the Swiss-roll angle range, in radians.
pub const SWISS_ROLL_THETA_MIN: f64 = 1.5 * std::f64::consts::PI;
/// Upper end of the Swiss-roll angle range, in radians.
pub const SWISS_ROLL_THETA_MAX: f64 = 4.5 * std::f64::consts::PI;
/// Outer radius of the noise-free roll; it fits in `[-2.5, 2.5]^2`.
pub const SWISS_ROLL_SCALE: f64 = 2.5;
/// Noise used by the experiment presets.
pub const SWISS_ROLL_NOISE: f64 = 0.1;

/// A finite sample of points in `R^D`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    coords: Vec<f64>,
    dim: usize,
    pub label: String,
}

impl Dataset {
    pub fn from_flat(coords: Vec<f64>, dim: usize, label: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(EfmError::InvalidArgument("dataset dimension must be ≥ 1".into()));
        }
        if coords.len() % dim != 0 {
            return Err(EfmError::ShapeMismatch(format!(
                "{} values do not split into rows of {dim}",
                coords.len()
            )));
        }
        if coords.is_empty() {
            return Err(EfmError::EmptyDataset);
        }
        Ok(Self {
            coords,
            dim,
            label: label.into(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], label: impl Into<String>) -> Result<Self> {
        let dim = rows.first().ok_or(EfmError::EmptyDataset)?.len();
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(EfmError::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            coords.extend_from_slice(r);
        }
        Self::from_flat(coords, dim, label)
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn flat(&self) -> &[f64] {
        &self.coords
    }

    /// First `n` points (all of them if `n` exceeds the size).
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len()).max(1);
        Self {
            coords: self.coords[..n * self.dim].to_vec(),
            dim: self.dim,
            label: self.label.clone(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        Self::from_flat(coords, self.dim, self.label.clone())
    }

    /// Checks the dataset against the configured data dimension.
    pub fn ensure_dim(&self, dim_d: usize) -> Result<()> {
        if self.dim != dim_d {
            return Err(EfmError::DimensionMismatch {
                expected: dim_d,
                got: self.dim,
            });
        }
        Ok(())
    }

    /// Uniformly weighted charge plate at `z_offset`.
    pub fn to_plate(&self, z_offset: f64, charge: Charge) -> Result<PlateSet> {
        PlateSet::uniform(self.coords.clone(), self.dim, z_offset, charge)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in self.points() {
            m.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Population standard deviation per coordinate.
    pub fn std(&self) -> Vec<f64> {
        let m = self.mean();
        let mut v = vec![0.0; self.dim];
        for p in self.points() {
            for k in 0..self.dim {
                v[k] += (p[k] - m[k]).powi(2);
            }
        }
        let n = self.len() as f64;
        v.into_iter().map(|a| (a / n).sqrt()).collect()
    }
}

pub fn gen_gaussian(n: usize, dim: usize, mean: &[f64], var_diag: &[f64], stream: &mut Stream) -> Result<Dataset> {
    if n == 0 {
        return Err(EfmError::EmptyDataset);
    }
    if mean.len() != dim || var_diag.len() != dim {
        return Err(EfmError::DimensionMismatch {
            expected: dim,
            got: mean.len().min(var_diag.len()),
        });
    }
    if var_diag.iter().any(|v| !(*v >= 0.0)) {
        return Err(EfmError::InvalidArgument("variances must be nonnegative".into()));
    }
    let sd: Vec<f64> = var_diag.iter().map(|v| v.sqrt()).collect();
    let mut coords = Vec::with_capacity(n * dim);
    for _ in 0..n {
        for k in 0..dim {
            let z: f64 = stream.sample(StandardNormal);
            coords.push(mean[k] + sd[k] * z);
        }
    }
    Dataset::from_flat(coords, dim, "gaussian")
}

/// Standard normal in `dim` dimensions.
pub fn gen_standard_gaussian(n: usize, dim: usize, stream: &mut Stream) -> Result<Dataset> {
    gen_gaussian(n, dim, &vec![0.0; dim], &vec![1.0; dim], stream)
}

/// Point of the noise-free roll at angle `theta`.
pub fn swiss_roll_curve(theta: f64) -> [f64; 2] {
    let r = SWISS_ROLL_SCALE * theta / SWISS_ROLL_THETA_MAX;
    [r * theta.cos(), r * theta.sin()]
}

/// Two-dimensional Swiss roll with `theta ~ U(1.5 pi, 4.5 pi)`.
pub fn gen_swiss_roll(n: usize, noise_std: f64, stream: &mut Stream) -> Result<Dataset> {
    Ok(gen_swiss_roll_with_angles(n, noise_std, stream)?.0)
}

/// Swiss roll together with the angle of each sample.
pub fn gen_swiss_roll_with_angles(n: usize, noise_std: f64, stream: &mut Stream) -> Result<(Dataset, Vec<f64>)> {
    if n == 0 {
        return Err(EfmError::EmptyDataset);
    }
    let mut coords = Vec::with_capacity(2 * n);
    let mut angles = Vec::with_capacity(n);
    for _ in 0..n {
        let theta = stream.random_range(SWISS_ROLL_THETA_MIN..SWISS_ROLL_THETA_MAX);
        let [x, y] = swiss_roll_curve(theta);
        let nx: f64 = stream.sample(StandardNormal);
        let ny: f64 = stream.sample(StandardNormal);
        coords.push(x + noise_std * nx);
        coords.push(y + noise_std * ny);
        angles.push(theta);
    }
    Ok((Dataset::from_flat(coords, 2, "swiss_roll")?, angles))
}

/// Equal mixture of isotropic Gaussians with the given means and common
/// standard deviation.
pub fn gen_gaussian_mixture(n: usize, means: &[Vec<f64>], std: f64, stream: &mut Stream) -> Result<Dataset> {
    Ok(gen_gaussian_mixture_labelled(n, means, std, stream)?.0)
}

fn gen_gaussian_mixture_labelled(
    n: usize,
    means: &[Vec<f64>],
    std: f64,
    stream: &mut Stream,
) -> Result<(Dataset, Vec<usize>)> {
    if n == 0 {
        return Err(EfmError::EmptyDataset);
    }
    let dim = means.first().ok_or(EfmError::EmptyDataset)?.len();
    let mut coords = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = stream.random_range(0..means.len());
        for k in 0..dim {
            let z: f64 = stream.sample(StandardNormal);
            coords.push(means[c][k] + std * z);
        }
        labels.push(c);
    }
    Ok((Dataset::from_flat(coords, dim, "gaussian_mixture")?, labels))
}

/// Two unit Gaussians centered at `±separation/2` on the first axis.
pub fn gen_two_gaussians(n: usize, dim: usize, separation: f64, stream: &mut Stream) -> Result<Dataset> {
    if n < 2 {
        return Err(EfmError::InvalidArgument("two_gaussians needs n ≥ 2".into()));
    }
    let mut left = vec![0.0; dim];
    let mut right = vec![0.0; dim];
    left[0] = -separation / 2.0;
    right[0] = separation / 2.0;
    let mut ds = gen_gaussian_mixture(n, &[left, right], 1.0, stream)?;
    ds.label = "two_gaussians".into();
    Ok(ds)
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| EfmError::io(path, e))?;
    read_csv(file)
}

/// Reads the `x_1,...,x_D` format from any reader.
pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let dim = rdr
        .headers()
        .map_err(|e| EfmError::Csv {
            line: 1,
            message: e.to_string(),
        })?
        .len();
    if dim == 0 {
        return Err(EfmError::EmptyDataset);
    }
    let mut coords = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| EfmError::Csv {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != dim {
            return Err(EfmError::Csv {
                line,
                message: format!("expected {dim} fields, found {}", record.len()),
            });
        }
        for cell in record.iter() {
            let v: f64 = cell.parse().map_err(|_| EfmError::Csv {
                line,
                message: format!("non-numeric cell {cell:?}"),
            })?;
            coords.push(v);
        }
    }
    if coords.is_empty() {
        return Err(EfmError::EmptyDataset);
    }
    Dataset::from_flat(coords, dim, "csv")
}

pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| EfmError::io(path, e))?;
    file.write_all(to_csv_string(dataset).as_bytes())
        .map_err(|e| EfmError::io(path, e))
}

/// Header `x_1,...,x_D`, one sample per line. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn to_csv_string(dataset: &Dataset) -> String {
    let mut out = String::new();
    let header: Vec<String> = (1..=dataset.dim()).map(|k| format!("x_{k}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for p in dataset.points() {
        let row: Vec<String> = p.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Per-coordinate affine map `x -> (x - shift) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTransform {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl AffineTransform {
    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        let d = dataset.dim();
        let coords = dataset
            .flat()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.shift[i % d]) / self.scale[i % d])
            .collect();
        Dataset::from_flat(coords, d, dataset.label.clone())
    }

    pub fn invert(&self, dataset: &Dataset) -> Result<Dataset> {
        let d = dataset.dim();
        let coords = dataset
            .flat()
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.scale[i % d] + self.shift[i % d])
            .collect();
        Dataset::from_flat(coords, d, dataset.label.clone())
    }
}

/// Shifts and scales every coordinate to zero mean and unit standard
/// deviation.
pub fn standardize(dataset: &Dataset) -> Result<(Dataset, AffineTransform)> {
    let shift = dataset.mean();
    let scale = dataset.std();
    if let Some(k) = scale.iter().position(|s| !(*s > 0.0)) {
        return Err(EfmError::ZeroVariance(k));
    }
    let t = AffineTransform { shift, scale };
    Ok((t.apply(dataset)?, t))
}

pub fn destandardize(dataset: &Dataset, transform: &AffineTransform) -> Result<Dataset> {
    transform.invert(dataset)
}
