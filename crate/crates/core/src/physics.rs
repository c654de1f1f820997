//! Numerical checks of the electrostatic properties the method relies on:
//! Gauss's law, zero circulation, point-charge solid angles and the jump of
//! `E_z` across a charged plate.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::config::CapacitorConfig;
use crate::data::{gen_standard_gaussian, Dataset};
use crate::error::{EfmError, Result};
use crate::field::{point_charge_field, sphere_surface_area, EmpiricalField, FnField, VectorField};
use crate::rng::{seeded_stream, Stream};
use crate::types::{dot, norm, Charge, SpacePoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxReport {
    pub estimate: f64,
    pub target: f64,
    pub relative_error: f64,
    pub n_samples: usize,
    /// Monte Carlo standard error; `None` for deterministic quadrature.
    pub std_error: Option<f64>,
}

impl FluxReport {
    pub fn new(estimate: f64, target: f64, n_samples: usize, std_error: Option<f64>) -> Self {
        Self {
            estimate,
            target,
            relative_error: (estimate - target).abs() / target.abs().max(1.0),
            n_samples,
            std_error,
        }
    }
}

/// Uniform point on the unit sphere in `R^n`.
pub fn random_unit_vector(n: usize, stream: &mut Stream) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| stream.sample::<f64, _>(StandardNormal)).collect();
        let r = norm(&v);
        if r > 1e-12 {
            return v.into_iter().map(|c| c / r).collect();
        }
    }
}

fn check_dim(field: &dyn VectorField, len: usize) -> Result<()> {
    if field.ambient_dim() != len {
        return Err(EfmError::DimensionMismatch {
            expected: field.ambient_dim(),
            got: len,
        });
    }
    Ok(())
}

/// Monte Carlo flux through the sphere `|x - center| = radius`, compared
/// against `target`.
pub fn flux_through_sphere(
    field: &dyn VectorField,
    center: &[f64],
    radius: f64,
    n_mc: usize,
    target: f64,
    stream: &mut Stream,
) -> Result<FluxReport> {
    check_dim(field, center.len())?;
    if !(radius > 0.0) || n_mc == 0 {
        return Err(EfmError::InvalidArgument("flux sphere needs radius > 0 and n_mc ≥ 1".into()));
    }
    let n = center.len();
    let normals: Vec<Vec<f64>> = (0..n_mc).map(|_| random_unit_vector(n, stream)).collect();
    let values: Vec<f64> = normals
        .par_iter()
        .map(|u| {
            let p: Vec<f64> = center.iter().zip(u).map(|(c, v)| c + radius * v).collect();
            dot(field.field_at(&p).as_slice(), u)
        })
        .collect();
    let area = sphere_surface_area(n - 1) * radius.powi(n as i32 - 1);
    let (mean, se) = mean_and_se(&values);
    Ok(FluxReport::new(area * mean, target, n_mc, Some(area * se)))
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Three-term recurrence for P_m and its derivative.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        nodes[m - 1 - i] = -x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    (nodes, weights)
}

/// Flux out of the box `[lo, hi]` by tensor Gauss–Legendre quadrature with
/// `n_per_axis` nodes along each in-face axis.
pub fn flux_through_box(
    field: &dyn VectorField,
    lo: &[f64],
    hi: &[f64],
    n_per_axis: usize,
    target: f64,
) -> Result<FluxReport> {
    check_dim(field, lo.len())?;
    if lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
        return Err(EfmError::EmptyBox);
    }
    if n_per_axis == 0 {
        return Err(EfmError::InvalidArgument("n_per_axis must be ≥ 1".into()));
    }
    let n = lo.len();
    let (nodes, weights) = gauss_legendre(n_per_axis);
    let per_face = n_per_axis.pow(n as u32 - 1);
    let mut total = 0.0;
    for axis in 0..n {
        let others: Vec<usize> = (0..n).filter(|&k| k != axis).collect();
        let jac: f64 = others.iter().map(|&k| 0.5 * (hi[k] - lo[k])).product();
        for (side, sign) in [(lo[axis], -1.0), (hi[axis], 1.0)] {
            let face: f64 = (0..per_face)
                .into_par_iter()
                .map(|flat| {
                    let mut p = vec![0.0; n];
                    p[axis] = side;
                    let mut rem = flat;
                    let mut w = 1.0;
                    for &k in &others {
                        let j = rem % n_per_axis;
                        rem /= n_per_axis;
                        p[k] = 0.5 * (lo[k] + hi[k]) + 0.5 * (hi[k] - lo[k]) * nodes[j];
                        w *= weights[j];
                    }
                    w * sign * field.field_at(&p).0[axis]
                })
                .sum();
            total += jac * face;
        }
    }
    Ok(FluxReport::new(total, target, 2 * n * per_face, None))
}

/// Trapezoidal `\oint E . dl` around a closed polyline.
pub fn circulation(field: &dyn VectorField, loop_points: &[Vec<f64>]) -> Result<f64> {
    if loop_points.len() < 2 || loop_points.first() != loop_points.last() {
        return Err(EfmError::OpenPolyline);
    }
    let segments = loop_points.len() - 1;
    if segments < 8 {
        return Err(EfmError::TooFewSegments { min: 8, got: segments });
    }
    check_dim(field, loop_points[0].len())?;
    let values: Vec<Vec<f64>> = loop_points[..segments].par_iter().map(|p| field.field_at(p).0).collect();
    let mut sum = 0.0;
    for i in 0..segments {
        let j = (i + 1) % segments;
        let dl: Vec<f64> = loop_points[i + 1].iter().zip(&loop_points[i]).map(|(a, b)| a - b).collect();
        let avg: Vec<f64> = values[i].iter().zip(&values[j]).map(|(a, b)| 0.5 * (a + b)).collect();
        sum += dot(&avg, &dl);
    }
    Ok(sum)
}

/// Closed circle `center + r (cos t u + sin t v)` with `segments` pieces;
/// `u` and `v` must be orthonormal.
pub fn circle_loop(center: &[f64], radius: f64, u: &[f64], v: &[f64], segments: usize) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = (0..segments)
        .map(|i| {
            let t = 2.0 * std::f64::consts::PI * i as f64 / segments as f64;
            let (s, c) = t.sin_cos();
            (0..center.len()).map(|k| center[k] + radius * (c * u[k] + s * v[k])).collect()
        })
        .collect();
    pts.push(pts[0].clone());
    pts
}

/// Spherical cap: points of the sphere around `center` whose direction is
/// within `polar_angle` of `axis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphericalCap {
    pub center: Vec<f64>,
    pub radius: f64,
    pub axis: Vec<f64>,
    pub polar_angle: f64,
}

impl SphericalCap {
    pub fn validate(&self) -> Result<()> {
        let ok = self.center.len() >= 2
            && self.axis.len() == self.center.len()
            && (norm(&self.axis) - 1.0).abs() < 1e-9
            && self.radius > 0.0
            && (0.0..=std::f64::consts::PI).contains(&self.polar_angle);
        if ok {
            Ok(())
        } else {
            Err(EfmError::InvalidArgument(format!("invalid cap {self:?}")))
        }
    }

    /// Cap solid angle as a fraction of the whole sphere.
    pub fn solid_angle_fraction(&self) -> f64 {
        cap_fraction(self.center.len(), self.polar_angle)
    }
}

/// Fraction of the unit sphere in `R^n` within polar angle `phi` of an axis:
/// `I_{sin^2 phi}((n-1)/2, 1/2) / 2` for `phi <= pi/2`, mirrored above.
pub fn cap_fraction(n: usize, phi: f64) -> f64 {
    let half = std::f64::consts::FRAC_PI_2;
    let s2 = phi.sin().powi(2).clamp(0.0, 1.0);
    let small = 0.5 * beta_reg((n as f64 - 1.0) / 2.0, 0.5, s2);
    if phi <= half {
        small
    } else {
        1.0 - small
    }
}

/// Monte Carlo flux through a cap for a field whose source of charge `q`
/// sits at the cap's center; the target is `q * Omega / S_{n-1}`.
pub fn solid_angle_flux(
    field: &dyn VectorField,
    cap: &SphericalCap,
    q: f64,
    n_mc: usize,
    stream: &mut Stream,
) -> Result<FluxReport> {
    cap.validate()?;
    check_dim(field, cap.center.len())?;
    if n_mc == 0 {
        return Err(EfmError::InvalidArgument("n_mc must be ≥ 1".into()));
    }
    let n = cap.center.len();
    let cos_phi = cap.polar_angle.cos();
    let normals: Vec<Vec<f64>> = (0..n_mc).map(|_| random_unit_vector(n, stream)).collect();
    let values: Vec<f64> = normals
        .par_iter()
        .map(|u| {
            if dot(u, &cap.axis) < cos_phi {
                return 0.0;
            }
            let p: Vec<f64> = cap.center.iter().zip(u).map(|(c, v)| c + cap.radius * v).collect();
            dot(field.field_at(&p).as_slice(), u)
        })
        .collect();
    let area = sphere_surface_area(n - 1) * cap.radius.powi(n as i32 - 1);
    let (mean, se) = mean_and_se(&values);
    Ok(FluxReport::new(area * mean, q * cap.solid_angle_fraction(), n_mc, Some(area * se)))
}

/// One evaluation of the plate jump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub point: Vec<f64>,
    pub jump: f64,
    pub density_estimate: f64,
    pub residual: f64,
}

/// Silverman's rule for a Gaussian kernel in `dim` dimensions, from the
/// mean per-axis standard deviation.
pub fn silverman_bandwidth(samples: &[f64], dim: usize) -> f64 {
    let n = samples.len() / dim;
    let mut sd = 0.0;
    for k in 0..dim {
        let col: Vec<f64> = samples.iter().skip(k).step_by(dim).copied().collect();
        let m = col.iter().sum::<f64>() / n as f64;
        sd += (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
    }
    sd /= dim as f64;
    sd * (4.0 / ((dim as f64 + 2.0) * n as f64)).powf(1.0 / (dim as f64 + 4.0))
}

/// Gaussian kernel density of a weighted plate at `x`.
pub fn kde(coords: &[f64], weights: &[f64], dim: usize, x: &[f64], bandwidth: f64) -> f64 {
    let norm_const = (2.0 * std::f64::consts::PI * bandwidth * bandwidth).powf(-(dim as f64) / 2.0);
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    coords
        .chunks_exact(dim)
        .zip(weights)
        .map(|(s, w)| {
            let d2: f64 = s.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
            w * (-d2 * inv).exp()
        })
        .sum::<f64>()
        * norm_const
}

/// `E_z(x, +eps) - E_z(x, -eps)` on the positive plate next to a kernel
/// density estimate of that plate. Without a bandwidth, Silverman's rule is
/// used.
pub fn plate_jump_residual(
    field: &EmpiricalField,
    eval_points: &[SpacePoint],
    kde_bandwidth: Option<f64>,
    limit_epsilon: f64,
) -> Result<Vec<JumpRecord>> {
    if !(limit_epsilon > 0.0) {
        return Err(EfmError::InvalidArgument("limit_epsilon must be positive".into()));
    }
    let plate = field.plate_pos();
    let dim = plate.dim();
    let h = kde_bandwidth.unwrap_or_else(|| silverman_bandwidth(plate.coords(), dim));
    if !(h > 0.0) {
        return Err(EfmError::InvalidArgument("KDE bandwidth must be positive".into()));
    }
    eval_points
        .par_iter()
        .map(|p| {
            if p.dim() != dim {
                return Err(EfmError::DimensionMismatch {
                    expected: dim,
                    got: p.dim(),
                });
            }
            let (below, above) = field.z_limits(p.coords(), 0.0, limit_epsilon);
            let jump = above - below;
            let density = kde(plate.coords(), plate.weights(), dim, p.coords(), h);
            Ok(JumpRecord {
                point: p.0.clone(),
                jump,
                density_estimate: density,
                residual: jump - density,
            })
        })
        .collect()
}

/// One line of the physics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsCheck {
    pub check_name: String,
    pub estimate: f64,
    pub target: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl PhysicsCheck {
    fn new(name: impl Into<String>, estimate: f64, target: f64, tolerance: f64) -> Self {
        Self {
            check_name: name.into(),
            estimate,
            target,
            tolerance,
            pass: (estimate - target).abs() <= tolerance,
        }
    }
}

fn point_charge(n: usize, at: Vec<f64>, q: f64, eps: f64) -> impl VectorField {
    FnField::new(n, move |p: &[f64], out: &mut [f64]| {
        out.copy_from_slice(&point_charge_field(p, &at, q, eps));
    })
}

/// A quick diagnostic pass over every check, sized to finish in seconds.
/// The capacitor checks use Gaussian plates in `cfg.dim_d` dimensions with
/// gap `cfg.plate_gap`.
pub fn run_physics_suite(cfg: &CapacitorConfig, seed: u64) -> Result<Vec<PhysicsCheck>> {
    cfg.validate()?;
    let mut s = seeded_stream(seed, "physics");
    let mut out = Vec::new();
    let n_mc = 20_000;

    for n in [2usize, 3, 4] {
        let mut c = vec![0.0; n];
        c[0] = 0.3;
        let f = point_charge(n, c, 1.0, cfg.field_epsilon);
        let r = flux_through_sphere(&f, &vec![0.0; n], 1.0, n_mc, 1.0, &mut s)?;
        out.push(PhysicsCheck::new(format!("gauss_point_charge_n{n}"), r.estimate, 1.0, 0.02));
        let mut far = vec![0.0; n];
        far[0] = 2.5;
        let f = point_charge(n, far, 1.0, cfg.field_epsilon);
        let r = flux_through_sphere(&f, &vec![0.0; n], 1.0, n_mc, 0.0, &mut s)?;
        out.push(PhysicsCheck::new(format!("gauss_outside_charge_n{n}"), r.estimate, 0.0, 0.02));
    }

    let d = cfg.dim_d;
    let l = cfg.plate_gap;
    let pos = gen_standard_gaussian(256, d, &mut s)?;
    let neg = gen_standard_gaussian(256, d, &mut s)?;
    let field = EmpiricalField::new(
        pos.to_plate(0.0, Charge::Positive)?,
        neg.to_plate(l, Charge::Negative)?,
        cfg.field_epsilon,
    )?;
    let mut center = vec![0.0; d + 1];
    center[d] = l / 2.0;
    let big = 4.0 * (l + 4.0);
    let r = flux_through_sphere(&field, &center, big, n_mc, 0.0, &mut s)?;
    out.push(PhysicsCheck::new("gauss_neutral_capacitor", r.estimate, 0.0, 0.02));

    let extent = bounding_half_width(&pos).max(bounding_half_width(&neg)) + 1.0;
    let nodes = if d + 1 <= 3 { 24 } else { 6 };
    let mut lo = vec![-extent; d + 1];
    let mut hi = vec![extent; d + 1];
    lo[d] = -0.5 * l;
    hi[d] = 0.5 * l;
    let r = flux_through_box(&field, &lo, &hi, nodes, 1.0)?;
    out.push(PhysicsCheck::new("box_around_positive_plate", r.estimate, 1.0, 0.02));
    lo[d] = 0.25 * l;
    hi[d] = 0.75 * l;
    let r = flux_through_box(&field, &lo, &hi, nodes, 0.0)?;
    out.push(PhysicsCheck::new("box_between_plates", r.estimate, 0.0, 0.02));

    let u = unit(d + 1, 0);
    let v = unit(d + 1, d);
    let loop_pts = circle_loop(&center, 0.4 * l, &u, &v, 2048);
    let c = circulation(&field, &loop_pts)?;
    let scale = 2.0 * std::f64::consts::PI * 0.4 * l * field.field_at(&center).norm();
    out.push(PhysicsCheck::new("circulation_capacitor", c, 0.0, 1e-3 * scale));

    for n in [2usize, 3] {
        let f = point_charge(n, vec![0.0; n], 1.0, cfg.field_epsilon);
        for (name, phi) in [("hemisphere", std::f64::consts::FRAC_PI_2), ("quarter_angle_cap", std::f64::consts::FRAC_PI_4)] {
            let cap = SphericalCap {
                center: vec![0.0; n],
                radius: 1.0,
                axis: unit(n, n - 1),
                polar_angle: phi,
            };
            let r = solid_angle_flux(&f, &cap, 1.0, 4 * n_mc, &mut s)?;
            out.push(PhysicsCheck::new(
                format!("solid_angle_{name}_n{n}"),
                r.estimate,
                r.target,
                0.03 * r.target,
            ));
        }
    }

    if d == 1 {
        let n = 20_000;
        let coords: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / n as f64).collect();
        let plate = Dataset::from_flat(coords, 1, "uniform")?;
        let far = Dataset::from_flat(vec![0.0], 1, "far")?;
        let jump_field = EmpiricalField::new(
            plate.to_plate(0.0, Charge::Positive)?,
            far.to_plate(50.0, Charge::Negative)?,
            cfg.field_epsilon,
        )?;
        let rec = plate_jump_residual(&jump_field, &[SpacePoint(vec![0.0])], None, 2e-3)?;
        out.push(PhysicsCheck::new("plate_jump_uniform", rec[0].jump, 0.5, 0.05));
    }
    Ok(out)
}

fn unit(n: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

fn bounding_half_width(d: &Dataset) -> f64 {
    d.flat().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}
