use crate::error::{EfmError, Result};
use crate::field::VectorField;
use crate::transport::{Termination, Trajectory};
use crate::types::{ExtendedPoint, FieldVector};

/// Steps with `|f_z| < DEGENERACY_RATIO * |f|` are rejected.
pub const DEGENERACY_RATIO: f64 = 1e-8;

/// `x <- x + (f_x / f_z) dtau`, `z <- z + dtau`.
pub fn euler_step(point: &ExtendedPoint, f: &FieldVector, dtau: f64) -> Result<ExtendedPoint> {
    if f.0.len() != point.0.len() {
        return Err(EfmError::DimensionMismatch {
            expected: point.0.len(),
            got: f.0.len(),
        });
    }
    let fz = f.z();
    if !(fz.abs() >= DEGENERACY_RATIO * f.norm()) || fz == 0.0 || !fz.is_finite() {
        return Err(EfmError::FieldDegenerate(point.0.clone()));
    }
    let x: Vec<f64> = point.x().iter().zip(f.x()).map(|(x, fx)| x + fx / fz * dtau).collect();
    Ok(ExtendedPoint::new(&x, point.z() + dtau))
}

/// Euler integration in `z` from `start` to `plate_gap` on a uniform grid
/// whose spacing is at most `dtau`. Starting at `z = 0` the grid has
/// exactly `plate_gap / dtau` steps, one field evaluation each.
pub fn trace_line_z(start: &ExtendedPoint, field: &dyn VectorField, dtau: f64, plate_gap: f64) -> Result<Trajectory> {
    if !(dtau > 0.0) {
        return Err(EfmError::InvalidArgument("dtau must be positive".into()));
    }
    if start.0.len() != field.ambient_dim() {
        return Err(EfmError::DimensionMismatch {
            expected: field.ambient_dim(),
            got: start.0.len(),
        });
    }
    let z0 = start.z();
    if !(z0 < plate_gap) {
        return Err(EfmError::InvalidArgument(format!("start z = {z0} not below {plate_gap}")));
    }
    let span = plate_gap - z0;
    let n = ((span / dtau) - 1e-9).ceil().max(1.0) as usize;
    let h = span / n as f64;
    let mut points = Vec::with_capacity(n + 1);
    points.push(start.clone());
    let mut f = vec![0.0; start.0.len()];
    let mut ez_violations = 0;
    let mut termination = Termination::ReachedTargetPlate;
    let mut evals = 0;
    for k in 0..n {
        let p = points.last().unwrap();
        field.field_into(p.as_slice(), &mut f);
        evals += 1;
        if f[f.len() - 1] <= 0.0 && p.z() > 0.0 && p.z() < plate_gap {
            ez_violations += 1;
        }
        match euler_step(p, &FieldVector(f.clone()), h) {
            Ok(mut next) => {
                // Pin the grid so accumulated rounding cannot drift in z.
                let z = if k + 1 == n { plate_gap } else { z0 + (k + 1) as f64 * h };
                *next.0.last_mut().unwrap() = z;
                points.push(next);
            }
            Err(EfmError::FieldDegenerate(_)) => {
                termination = Termination::FieldDegenerate;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Trajectory {
        points,
        termination,
        crossings: Vec::new(),
        ez_violations,
        field_evaluations: evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{EmpiricalField, FnField};
    use crate::types::{Charge, PlateSet};
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn unit_slope_step() {
        let p = euler_step(&ExtendedPoint::new(&[0.0], 0.0), &FieldVector(vec![1.0, 1.0]), 0.5).unwrap();
        assert_eq!(p.0, vec![0.5, 0.5]);
        let q = euler_step(&ExtendedPoint::new(&[0.3, 0.2], 1.0), &FieldVector(vec![0.0, 0.0, 1.0]), 0.25).unwrap();
        assert_eq!(q.0, vec![0.3, 0.2, 1.25]);
    }

    #[test]
    fn zero_fz_is_degenerate() {
        let r = euler_step(&ExtendedPoint::new(&[0.0], 0.0), &FieldVector(vec![1.0, 0.0]), 0.5);
        assert!(matches!(r, Err(EfmError::FieldDegenerate(_))));
        let r = euler_step(&ExtendedPoint::new(&[0.0], 0.0), &FieldVector(vec![1.0, 1e-9]), 0.5);
        assert!(matches!(r, Err(EfmError::FieldDegenerate(_))));
    }

    #[test]
    fn vertical_field_gives_vertical_line_with_exact_nfe() {
        let calls = AtomicUsize::new(0);
        let field = FnField::new(3, |_p: &[f64], out: &mut [f64]| {
            calls.fetch_add(1, Ordering::Relaxed);
            out.copy_from_slice(&[0.0, 0.0, 1.0]);
        });
        let t = trace_line_z(&ExtendedPoint::new(&[0.7, -0.2], 0.0), &field, 0.3, 6.0).unwrap();
        assert_eq!(calls.load(Ordering::Relaxed), 20);
        assert_eq!(t.field_evaluations, 20);
        assert_eq!(t.points.len(), 21);
        assert_eq!(t.endpoint().0, vec![0.7, -0.2, 6.0]);
        assert_eq!(t.termination, Termination::ReachedTargetPlate);
        assert!(t.points.windows(2).all(|w| w[1].z() > w[0].z()));
    }

    #[test]
    fn symmetric_pair_keeps_midline() {
        // Positive charge at x = 0 on z = 0, negative at x = 0 on z = 2; the
        // axis x = 0 is a field line.
        let pos = PlateSet::uniform(vec![0.0], 1, 0.0, Charge::Positive).unwrap();
        let neg = PlateSet::uniform(vec![0.0], 1, 2.0, Charge::Negative).unwrap();
        let field = EmpiricalField::new(pos, neg, 1e-4).unwrap();
        let t = trace_line_z(&ExtendedPoint::new(&[0.0], 0.01), &field, 0.1, 2.0).unwrap();
        assert!(t.points.iter().all(|p| p.x()[0] == 0.0));
        assert_eq!(t.ez_violations, 0);
    }

    #[test]
    fn degenerate_field_stops_line() {
        let field = FnField::new(2, |p: &[f64], out: &mut [f64]| {
            out[0] = 1.0;
            out[1] = if p[1] < 0.5 { 1.0 } else { 0.0 };
        });
        let t = trace_line_z(&ExtendedPoint::new(&[0.0], 0.0), &field, 0.25, 2.0).unwrap();
        assert_eq!(t.termination, Termination::FieldDegenerate);
        assert_eq!(t.points.len(), 3);
    }

    #[test]
    fn first_order_convergence() {
        // Rotational field in the (x, z) plane: dx/dz = (1 + x^2) has the
        // solution x = tan(z + atan(x0)); Euler error is first order.
        let field = FnField::new(2, |p: &[f64], out: &mut [f64]| {
            out[0] = 1.0 + p[0] * p[0];
            out[1] = 1.0;
        });
        let exact = (1.0f64 + 0.1f64.atan()).tan();
        let err = |n: usize| {
            let t = trace_line_z(&ExtendedPoint::new(&[0.1], 0.0), &field, 1.0 / n as f64, 1.0).unwrap();
            (t.endpoint().x()[0] - exact).abs()
        };
        let ratio = err(200) / err(400);
        assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
    }
}
