//! Dormand–Prince 5(4) integration of field lines in arc length, with plate
//! crossings detected on the bands `|z - plate| < limit_epsilon`.

use crate::error::{EfmError, Result};
use crate::field::VectorField;
use crate::transport::{Crossing, Termination, Trajectory};
use crate::types::{norm, ExtendedPoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracerControls {
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: f64,
    pub max_step: f64,
    pub max_steps: usize,
    pub plate_gap: f64,
    pub limit_epsilon: f64,
    /// `+1` follows `E`, `-1` follows `-E`.
    pub direction: f64,
    pub max_arc_length: Option<f64>,
}

impl TracerControls {
    pub fn new(plate_gap: f64, limit_epsilon: f64) -> Self {
        Self {
            rtol: 1e-4,
            atol: 1e-4,
            initial_step: 1e-2,
            max_step: 10.0 * plate_gap,
            max_steps: 20_000,
            plate_gap,
            limit_epsilon,
            direction: 1.0,
            max_arc_length: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.rtol > 0.0
            && self.atol > 0.0
            && self.initial_step > 0.0
            && self.max_step > 0.0
            && self.plate_gap > 0.0
            && self.limit_epsilon > 0.0
            && self.limit_epsilon < self.plate_gap / 2.0
            && self.direction.abs() == 1.0
            && self.max_arc_length.is_none_or(|s| s > 0.0);
        if ok {
            Ok(())
        } else {
            Err(EfmError::InvalidArgument(format!("invalid tracer controls {self:?}")))
        }
    }
}

/// What the tracer knows when a line reaches a plate.
#[derive(Debug, Clone)]
pub struct CrossingContext<'a> {
    /// Space coordinates where the line meets the plate.
    pub x: &'a [f64],
    pub plate_z: f64,
    pub upward: bool,
    /// Earlier crossings of the same plate.
    pub previous_on_plate: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingAction {
    pub stop: bool,
    pub nu: Option<f64>,
}

impl CrossingAction {
    pub fn stop() -> Self {
        Self { stop: true, nu: None }
    }

    pub fn pass() -> Self {
        Self { stop: false, nu: None }
    }
}

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Rhs<'a> {
    field: &'a dyn VectorField,
    direction: f64,
    scratch: Vec<f64>,
    evaluations: usize,
}

impl Rhs<'_> {
    /// Unit tangent `direction * E / |E|`, plus the raw `E_z`.
    fn eval(&mut self, y: &[f64], out: &mut [f64]) -> Option<f64> {
        self.field.field_into(y, &mut self.scratch);
        self.evaluations += 1;
        let n = norm(&self.scratch);
        if !(n > 0.0) || !n.is_finite() {
            return None;
        }
        for (o, e) in out.iter_mut().zip(&self.scratch) {
            *o = self.direction * e / n;
        }
        Some(*self.scratch.last().unwrap())
    }
}

fn hermite(y0: &[f64], f0: &[f64], y1: &[f64], f1: &[f64], h: f64, theta: f64) -> Vec<f64> {
    let t2 = theta * theta;
    let t3 = t2 * theta;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + theta;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    (0..y0.len())
        .map(|i| h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i])
        .collect()
}

/// First `theta` in `(0, 1]` where the interpolated `z` meets `level`.
fn locate(y0: &[f64], f0: &[f64], y1: &[f64], f1: &[f64], h: f64, level: f64, upward: bool) -> f64 {
    let zi = y0.len() - 1;
    let beyond = |theta: f64| {
        let z = hermite(y0, f0, y1, f1, h, theta)[zi];
        if upward {
            z > level
        } else {
            z < level
        }
    };
    // The cubic can overshoot before the endpoint; scan coarsely first so
    // the earliest sign change is bracketed.
    let mut hi = 1.0;
    for k in 1..=8 {
        let t = k as f64 / 8.0;
        if beyond(t) {
            hi = t;
            break;
        }
    }
    let mut lo = hi - 0.125_f64.min(hi);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if beyond(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    hi
}

/// Traces `dx/ds = direction * E / |E|` from `start`. Each time the line
/// enters the band around `z = 0` or `z = plate_gap`, `on_crossing` decides
/// whether it stops on the plate or resumes on the far side of the band.
pub fn trace_line_t(
    start: &ExtendedPoint,
    field: &dyn VectorField,
    controls: &TracerControls,
    on_crossing: &mut dyn FnMut(&CrossingContext) -> CrossingAction,
) -> Result<Trajectory> {
    controls.validate()?;
    let n = field.ambient_dim();
    if start.0.len() != n {
        return Err(EfmError::DimensionMismatch {
            expected: n,
            got: start.0.len(),
        });
    }
    if !start.is_finite() {
        return Err(EfmError::InvalidArgument("non-finite start point".into()));
    }
    let zi = n - 1;
    let eps = controls.limit_epsilon;
    let planes = [0.0, controls.plate_gap];
    let mut rhs = Rhs {
        field,
        direction: controls.direction,
        scratch: vec![0.0; n],
        evaluations: 0,
    };

    let mut traj = Trajectory {
        points: vec![start.clone()],
        termination: Termination::StepLimit,
        crossings: Vec::new(),
        ez_violations: 0,
        field_evaluations: 0,
    };
    let mut y = start.0.clone();
    let mut k = vec![vec![0.0; n]; 7];
    if rhs.eval(&y, &mut k[0]).is_none() {
        traj.termination = Termination::FieldDegenerate;
        traj.field_evaluations = rhs.evaluations;
        return Ok(traj);
    }
    let mut h = controls.initial_step.min(controls.max_step);
    let mut arc = 0.0;
    let mut accepted = 0;
    let mut stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut plate_hits = [0usize; 2];

    'outer: while accepted < controls.max_steps {
        if let Some(s_max) = controls.max_arc_length {
            if s_max - arc <= 1e-12 * s_max.max(1.0) {
                traj.termination = Termination::ArcLengthReached;
                break;
            }
            h = h.min(s_max - arc);
        }
        // One attempted step.
        let mut degenerate = false;
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += h * A[s][j] * kj[i];
                }
                stage[i] = acc;
            }
            if rhs.eval(&stage, &mut k[s]).is_none() {
                degenerate = true;
                break;
            }
        }
        if degenerate {
            h *= 0.25;
            if h < 1e-14 {
                traj.termination = Termination::FieldDegenerate;
                break;
            }
            continue;
        }
        // Stage 7 is evaluated at the fifth-order solution.
        y_new.copy_from_slice(&stage);
        let mut err_sq = 0.0;
        for i in 0..n {
            let err: f64 = h * (0..7).map(|j| E[j] * k[j][i]).sum::<f64>();
            let scale = controls.atol + controls.rtol * y[i].abs().max(y_new[i].abs());
            err_sq += (err / scale).powi(2);
        }
        let err_norm = (err_sq / n as f64).sqrt();
        if !(err_norm <= 1.0) {
            let factor = if err_norm.is_finite() { (0.9 * err_norm.powf(-0.2)).max(0.2) } else { 0.2 };
            h *= factor;
            if h < 1e-14 {
                traj.termination = Termination::FieldDegenerate;
                break;
            }
            continue;
        }
        accepted += 1;

        // Plate bands entered during this step, earliest first.
        let z0 = y[zi];
        let z1 = y_new[zi];
        let mut event: Option<(f64, usize, bool)> = None;
        for (pi, &p) in planes.iter().enumerate() {
            let candidates = [(p - eps, true), (p + eps, false)];
            for (level, upward) in candidates {
                let enters = if upward { z0 <= level && z1 > level } else { z0 >= level && z1 < level };
                if enters {
                    let theta = locate(&y, &k[0], &y_new, &k[6], h, level, upward);
                    if event.is_none_or(|(t, _, _)| theta < t) {
                        event = Some((theta, pi, upward));
                    }
                }
            }
        }

        if let Some((theta, pi, upward)) = event {
            let mut hit = hermite(&y, &k[0], &y_new, &k[6], h, theta);
            arc += theta * h;
            let plate_z = planes[pi];
            hit[zi] = plate_z;
            traj.points.push(ExtendedPoint(hit.clone()));
            let ctx = CrossingContext {
                x: &hit[..zi],
                plate_z,
                upward,
                previous_on_plate: plate_hits[pi],
            };
            let action = on_crossing(&ctx);
            traj.crossings.push(Crossing {
                index: traj.points.len() - 1,
                plate_z,
                upward,
                nu: action.nu,
                stopped: action.stop,
            });
            plate_hits[pi] += 1;
            if action.stop {
                traj.termination = if plate_hits[pi] == 1 {
                    Termination::ReachedTargetPlate
                } else {
                    Termination::ContinuedPastPlateThenReturned
                };
                break 'outer;
            }
            // Resume on the far side of the band.
            hit[zi] = if upward { plate_z + eps } else { plate_z - eps };
            arc += 2.0 * eps;
            y = hit;
            traj.points.push(ExtendedPoint(y.clone()));
            if rhs.eval(&y, &mut k[0]).is_none() {
                traj.termination = Termination::FieldDegenerate;
                break;
            }
        } else {
            arc += h;
            y.copy_from_slice(&y_new);
            let first = k[6].clone();
            k[0] = first;
            let z = y[zi];
            if z > eps && z < controls.plate_gap - eps && k[0][zi] * controls.direction <= 0.0 {
                traj.ez_violations += 1;
            }
            traj.points.push(ExtendedPoint(y.clone()));
        }
        let factor = if err_norm == 0.0 { 10.0 } else { (0.9 * err_norm.powf(-0.2)).clamp(0.2, 10.0) };
        h = (h * factor).min(controls.max_step);
    }
    traj.field_evaluations = rhs.evaluations;
    Ok(traj)
}
