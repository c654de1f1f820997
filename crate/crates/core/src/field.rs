//! Electrostatic fields of point charges and of the two-plate capacitor.
//!
//! A unit charge at `s` in `R^n` produces
//! `E(x) = (1/S_{n-1}) (x - s) / |x - s|^n`, where `S_{n-1}` is the area of
//! the unit sphere in `R^n`. The capacitor places the positive plate at
//! `z = 0` and the negative plate at `z = L` in `R^{D+1}` and sums the
//! contributions of every sample. Distances are regularized as
//! `|x - s|^2 + field_epsilon^2` so that evaluation at a sample location is
//! finite.

use rand::seq::index;

use crate::error::{EfmError, Result};
use crate::rng::Stream;
use crate::types::{norm, Charge, ExtendedPoint, FieldVector, PlateSet};

/// Above this ambient dimension the sum is accumulated as a log-magnitude
/// times a direction; `|x - s|^{n}` under/overflows for moderate distances.
const LOG_ACCUMULATE_ABOVE: usize = 32;

/// Norms at or below this are treated as a vanishing field.
const DEGENERATE_NORM: f64 = 1e-300;

/// Area of the unit `n`-sphere embedded in `R^{n+1}`:
/// `2 pi^{(n+1)/2} / Gamma((n+1)/2)`.
pub fn sphere_surface_area(n: usize) -> f64 {
    ln_sphere_surface_area(n).exp()
}

pub(crate) fn ln_sphere_surface_area(n: usize) -> f64 {
    let half = (n as f64 + 1.0) / 2.0;
    std::f64::consts::LN_2 + half * std::f64::consts::PI.ln() - statrs::function::gamma::ln_gamma(half)
}

/// Field at `x` of a charge `q` sitting at `source`, in dimension
/// `n = x.len()`, with the singularity softened by `field_epsilon`.
pub fn point_charge_field(x: &[f64], source: &[f64], q: f64, field_epsilon: f64) -> Vec<f64> {
    assert_eq!(x.len(), source.len(), "point and source dimensions differ");
    let n = x.len();
    let diff: Vec<f64> = x.iter().zip(source).map(|(a, b)| a - b).collect();
    let s = diff.iter().map(|d| d * d).sum::<f64>() + field_epsilon * field_epsilon;
    if s == 0.0 {
        return vec![0.0; n];
    }
    // q / S_{n-1} / s^{n/2}, in logs so large n stays representable.
    let scale = q.signum()
        * (q.abs().ln() - ln_sphere_surface_area(n - 1) - 0.5 * n as f64 * s.ln()).exp();
    diff.into_iter().map(|d| d * scale).collect()
}

/// Anything that can report a vector field in the capacitor space.
pub trait VectorField: Sync {
    /// Ambient dimension `D + 1`.
    fn ambient_dim(&self) -> usize;

    /// Writes the field at `point` into `out`.
    fn field_into(&self, point: &[f64], out: &mut [f64]);

    fn field_at(&self, point: &[f64]) -> FieldVector {
        let mut out = vec![0.0; self.ambient_dim()];
        self.field_into(point, &mut out);
        FieldVector(out)
    }
}

/// Adapter turning a closure into a [`VectorField`].
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    fn ambient_dim(&self) -> usize {
        self.dim
    }

    fn field_into(&self, point: &[f64], out: &mut [f64]) {
        (self.f)(point, out)
    }
}

/// Unit-norm field direction, or zero with `degenerate` set when the field
/// vanishes.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedField {
    pub vector: FieldVector,
    pub degenerate: bool,
}

impl NormalizedField {
    fn from_raw(v: Vec<f64>) -> Self {
        let n = norm(&v);
        if !(n > DEGENERATE_NORM) || !n.is_finite() {
            return Self {
                vector: FieldVector(vec![0.0; v.len()]),
                degenerate: true,
            };
        }
        Self {
            vector: FieldVector(v.into_iter().map(|c| c / n).collect()),
            degenerate: false,
        }
    }
}

/// Field of a positive plate at `z = 0` and a negative plate at `z = L`.
#[derive(Debug, Clone)]
pub struct EmpiricalField {
    plate_pos: PlateSet,
    plate_neg: PlateSet,
    field_epsilon: f64,
    mc_subsample: Option<usize>,
    dim_d: usize,
    ln_area: f64,
    inv_area: f64,
}

impl EmpiricalField {
    pub fn new(plate_pos: PlateSet, plate_neg: PlateSet, field_epsilon: f64) -> Result<Self> {
        if plate_pos.charge() != Charge::Positive || plate_neg.charge() != Charge::Negative {
            return Err(EfmError::InvalidArgument(
                "plates must carry positive and negative charge respectively".into(),
            ));
        }
        if plate_pos.dim() != plate_neg.dim() {
            return Err(EfmError::DimensionMismatch {
                expected: plate_pos.dim(),
                got: plate_neg.dim(),
            });
        }
        if plate_pos.z_offset() != 0.0 || !(plate_neg.z_offset() > 0.0) {
            return Err(EfmError::InvalidArgument(
                "positive plate must sit at z=0 and negative plate at z=L>0".into(),
            ));
        }
        if !(field_epsilon > 0.0) {
            return Err(EfmError::InvalidArgument("field_epsilon must be positive".into()));
        }
        let dim_d = plate_pos.dim();
        let ln_area = ln_sphere_surface_area(dim_d);
        Ok(Self {
            plate_pos,
            plate_neg,
            field_epsilon,
            mc_subsample: None,
            dim_d,
            ln_area,
            inv_area: (-ln_area).exp(),
        })
    }

    /// Uses a fresh uniform subsample of `k` samples per plate for each
    /// evaluation.
    pub fn with_mc_subsample(mut self, k: Option<usize>) -> Self {
        self.mc_subsample = k.filter(|&k| k > 0);
        self
    }

    pub fn dim_d(&self) -> usize {
        self.dim_d
    }

    pub fn plate_gap(&self) -> f64 {
        self.plate_neg.z_offset()
    }

    pub fn field_epsilon(&self) -> f64 {
        self.field_epsilon
    }

    pub fn mc_subsample(&self) -> Option<usize> {
        self.mc_subsample
    }

    pub fn plate_pos(&self) -> &PlateSet {
        &self.plate_pos
    }

    pub fn plate_neg(&self) -> &PlateSet {
        &self.plate_neg
    }

    fn check_point(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.dim_d + 1 {
            return Err(EfmError::DimensionMismatch {
                expected: self.dim_d + 1,
                got: point.len(),
            });
        }
        if point.iter().any(|c| !c.is_finite()) {
            return Err(EfmError::InvalidArgument(format!("non-finite point {point:?}")));
        }
        Ok(())
    }

    /// Field at `point`. With `mc_subsample` set, each plate is replaced by a
    /// uniform subsample drawn from `stream`.
    pub fn evaluate(&self, point: &ExtendedPoint, stream: Option<&mut Stream>) -> Result<FieldVector> {
        let (v, ln_scale) = self.scaled_sum(point.as_slice(), stream)?;
        let scale = ln_scale.exp();
        Ok(FieldVector(v.into_iter().map(|c| c * scale).collect()))
    }

    /// Field at `point` using every sample of both plates.
    pub fn evaluate_exact(&self, point: &[f64]) -> FieldVector {
        let mut out = vec![0.0; self.dim_d + 1];
        self.field_into(point, &mut out);
        FieldVector(out)
    }

    /// `E / |E|` at `point`, flagged degenerate when the field vanishes.
    pub fn normalized_field(&self, point: &ExtendedPoint, stream: Option<&mut Stream>) -> Result<NormalizedField> {
        let (v, _) = self.scaled_sum(point.as_slice(), stream)?;
        Ok(NormalizedField::from_raw(v))
    }

    /// Exact-sum variant of [`normalized_field`](Self::normalized_field) on a
    /// raw slice.
    pub fn normalized_exact(&self, point: &[f64]) -> NormalizedField {
        let (v, _) = self.exact_scaled(point);
        NormalizedField::from_raw(v)
    }

    /// One-sided values `(E_z(x, plate_z - eps), E_z(x, plate_z + eps))`.
    pub fn z_limits(&self, x: &[f64], plate_z: f64, limit_epsilon: f64) -> (f64, f64) {
        let below = self.evaluate_exact(ExtendedPoint::new(x, plate_z - limit_epsilon).as_slice());
        let above = self.evaluate_exact(ExtendedPoint::new(x, plate_z + limit_epsilon).as_slice());
        (below.z(), above.z())
    }

    /// Field as `direction_sum * exp(ln_scale)`; `ln_scale` is zero unless
    /// the ambient dimension needs log accumulation.
    fn scaled_sum(&self, point: &[f64], stream: Option<&mut Stream>) -> Result<(Vec<f64>, f64)> {
        self.check_point(point)?;
        match self.mc_subsample {
            None => Ok(self.exact_scaled(point)),
            Some(k) => {
                let stream = stream.ok_or(EfmError::MissingStream)?;
                let pos = subsample(&self.plate_pos, k, stream)?;
                let neg = subsample(&self.plate_neg, k, stream)?;
                Ok(self.sum_plates(&pos, &neg, point))
            }
        }
    }

    fn exact_scaled(&self, point: &[f64]) -> (Vec<f64>, f64) {
        self.sum_plates(&self.plate_pos, &self.plate_neg, point)
    }

    fn sum_plates(&self, pos: &PlateSet, neg: &PlateSet, point: &[f64]) -> (Vec<f64>, f64) {
        let n = self.dim_d + 1;
        let eps2 = self.field_epsilon * self.field_epsilon;
        if n > LOG_ACCUMULATE_ABOVE {
            let mut acc = LogAccumulator::new(n);
            log_accumulate(pos, point, eps2, 1.0, &mut acc);
            log_accumulate(neg, point, eps2, -1.0, &mut acc);
            let (v, ln_scale) = acc.finish();
            return (v, ln_scale - self.ln_area);
        }
        let mut out = vec![0.0; n];
        accumulate(pos, point, eps2, 1.0, &mut out);
        accumulate(neg, point, eps2, -1.0, &mut out);
        out.iter_mut().for_each(|c| *c *= self.inv_area);
        (out, 0.0)
    }
}

impl VectorField for EmpiricalField {
    fn ambient_dim(&self) -> usize {
        self.dim_d + 1
    }

    fn field_into(&self, point: &[f64], out: &mut [f64]) {
        let (v, ln_scale) = self.exact_scaled(point);
        let scale = ln_scale.exp();
        for (o, c) in out.iter_mut().zip(v) {
            *o = c * scale;
        }
    }
}

fn subsample(plate: &PlateSet, k: usize, stream: &mut Stream) -> Result<PlateSet> {
    if k >= plate.len() {
        return Ok(plate.clone());
    }
    let picked = index::sample(stream, plate.len(), k).into_vec();
    plate.subset(&picked)
}

/// Adds `sign * sum_i w_i (p - s_i) / (|p - s_i|^2 + eps^2)^{n/2}` to `out`
/// (without the `1/S` factor).
fn accumulate(plate: &PlateSet, point: &[f64], eps2: f64, sign: f64, out: &mut [f64]) {
    match plate.dim() {
        1 => accumulate_fixed::<1>(plate, point, eps2, sign, out),
        2 => accumulate_fixed::<2>(plate, point, eps2, sign, out),
        3 => accumulate_fixed::<3>(plate, point, eps2, sign, out),
        _ => accumulate_dyn(plate, point, eps2, sign, out),
    }
}

#[inline(always)]
fn inv_power<const N: usize>(s: f64) -> f64 {
    // 1 / s^{N/2} for the ambient dimension N.
    match N {
        2 => 1.0 / s,
        3 => 1.0 / (s * s.sqrt()),
        4 => 1.0 / (s * s),
        _ => {
            if N % 2 == 0 {
                1.0 / s.powi(N as i32 / 2)
            } else {
                1.0 / (s.powi(N as i32 / 2) * s.sqrt())
            }
        }
    }
}

fn accumulate_fixed<const D: usize>(
    plate: &PlateSet,
    point: &[f64],
    eps2: f64,
    sign: f64,
    out: &mut [f64],
) {
    let mut p = [0.0; D];
    p.copy_from_slice(&point[..D]);
    let dz = point[D] - plate.z_offset();
    let base = dz * dz + eps2;
    let mut acc = [0.0; D];
    let mut acc_z = 0.0;
    for (c, &w) in plate.coords().chunks_exact(D).zip(plate.weights()) {
        let mut d = [0.0; D];
        let mut s = base;
        for k in 0..D {
            d[k] = p[k] - c[k];
            s += d[k] * d[k];
        }
        let f = w * match D + 1 {
            2 => inv_power::<2>(s),
            3 => inv_power::<3>(s),
            4 => inv_power::<4>(s),
            _ => unreachable!(),
        };
        for k in 0..D {
            acc[k] += d[k] * f;
        }
        acc_z += f;
    }
    for k in 0..D {
        out[k] += sign * acc[k];
    }
    out[D] += sign * acc_z * dz;
}

fn accumulate_dyn(plate: &PlateSet, point: &[f64], eps2: f64, sign: f64, out: &mut [f64]) {
    let dim = plate.dim();
    let n = dim + 1;
    let dz = point[dim] - plate.z_offset();
    let base = dz * dz + eps2;
    let mut d = vec![0.0; dim];
    let mut acc = vec![0.0; dim];
    let mut acc_z = 0.0;
    for (c, &w) in plate.samples().zip(plate.weights()) {
        let mut s = base;
        for k in 0..dim {
            d[k] = point[k] - c[k];
            s += d[k] * d[k];
        }
        let pow = if n % 2 == 0 {
            s.powi(n as i32 / 2)
        } else {
            s.powi(n as i32 / 2) * s.sqrt()
        };
        let f = w / pow;
        for k in 0..dim {
            acc[k] += d[k] * f;
        }
        acc_z += f;
    }
    for k in 0..dim {
        out[k] += sign * acc[k];
    }
    out[dim] += sign * acc_z * dz;
}

/// Running sum of `exp(ln_mag_i) * dir_i` kept as `v * exp(ln_scale)` with
/// `ln_scale` the largest magnitude seen so far.
struct LogAccumulator {
    v: Vec<f64>,
    ln_scale: f64,
}

impl LogAccumulator {
    fn new(n: usize) -> Self {
        Self {
            v: vec![0.0; n],
            ln_scale: f64::NEG_INFINITY,
        }
    }

    fn add(&mut self, dir: &[f64], ln_mag: f64) {
        if ln_mag > self.ln_scale {
            let shrink = (self.ln_scale - ln_mag).exp();
            self.v.iter_mut().for_each(|c| *c *= shrink);
            self.ln_scale = ln_mag;
        }
        let factor = (ln_mag - self.ln_scale).exp();
        for (o, d) in self.v.iter_mut().zip(dir) {
            *o += d * factor;
        }
    }

    fn finish(self) -> (Vec<f64>, f64) {
        if self.ln_scale == f64::NEG_INFINITY {
            (self.v, 0.0)
        } else {
            (self.v, self.ln_scale)
        }
    }
}

fn log_accumulate(plate: &PlateSet, point: &[f64], eps2: f64, sign: f64, acc: &mut LogAccumulator) {
    let dim = plate.dim();
    let n = dim + 1;
    let dz = point[dim] - plate.z_offset();
    let mut d = vec![0.0; n];
    for (c, &w) in plate.samples().zip(plate.weights()) {
        if w == 0.0 {
            continue;
        }
        let mut s = dz * dz + eps2;
        for k in 0..dim {
            d[k] = point[k] - c[k];
            s += d[k] * d[k];
        }
        d[dim] = dz;
        // Each displacement is scaled to unit length so only the magnitude
        // w / s^{(n-1)/2} goes through the log.
        let r = s.sqrt();
        let unit: Vec<f64> = d.iter().map(|c| sign * c / r).collect();
        acc.add(&unit, w.ln() - 0.5 * (n as f64 - 1.0) * s.ln());
    }
}
