//! The stochastic plate-to-plate map and batch transport.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{EfmError, Result};
use crate::field::{EmpiricalField, VectorField};
use crate::model::FieldApproximator;
use crate::rng::{point_label, seeded_stream, Stream};
use crate::transport::{
    direction_probability_mu, stop_probability_nu, trace_line_t, trace_line_z, CrossingAction, Direction,
    Termination, TracerControls, Trajectory, TransportMode, TransportPolicy,
};
use crate::types::{ExtendedPoint, SpacePoint};

/// Where field values come from during transport.
#[derive(Clone, Copy)]
pub enum Backend<'a> {
    Exact(&'a EmpiricalField),
    Network(&'a FieldApproximator),
}

impl Backend<'_> {
    fn vector_field(&self) -> &dyn VectorField {
        match self {
            Backend::Exact(f) => *f,
            Backend::Network(n) => *n,
        }
    }

    fn dim_d(&self) -> usize {
        self.vector_field().ambient_dim() - 1
    }
}

/// Transports one sample of the positive plate.
///
/// The theoretical mode picks a departure side with probability `mu`, then
/// at every crossing of the target plate stops with probability `nu`. The
/// practical mode runs the z-stepped Euler scheme up to `z = L`; exact
/// fields start `limit_epsilon` above the plate, where they are smooth.
pub fn stochastic_map_t(
    x_plus: &SpacePoint,
    field: &EmpiricalField,
    policy: &TransportPolicy,
    limit_epsilon: f64,
    stream: &mut Stream,
) -> Result<(SpacePoint, Trajectory)> {
    policy.validate()?;
    if x_plus.dim() != field.dim_d() {
        return Err(EfmError::DimensionMismatch {
            expected: field.dim_d(),
            got: x_plus.dim(),
        });
    }
    let l = field.plate_gap();
    let traj = match policy.mode {
        TransportMode::PracticalStopAtL => {
            trace_line_z(&ExtendedPoint::new(x_plus.coords(), limit_epsilon), field, policy.step, l)?
        }
        TransportMode::TheoreticalStochastic => {
            let (below, above) = field.z_limits(x_plus.coords(), 0.0, limit_epsilon);
            let forward = match policy.direction {
                Direction::ForwardOnly => true,
                Direction::Bidirectional => stream.random::<f64>() < direction_probability_mu(above, below),
            };
            let z0 = if forward { limit_epsilon } else { -limit_epsilon };
            let mut controls = TracerControls::new(l, limit_epsilon);
            controls.max_steps = policy.max_steps;
            let mut on_crossing = |ctx: &crate::transport::CrossingContext| {
                if ctx.plate_z == 0.0 {
                    return CrossingAction::pass();
                }
                let (below, above) = field.z_limits(ctx.x, l, limit_epsilon);
                let (e_in, e_out) = if ctx.upward { (below, above) } else { (above, below) };
                let nu = stop_probability_nu(e_in, e_out);
                CrossingAction {
                    stop: stream.random::<f64>() < nu,
                    nu: Some(nu),
                }
            };
            trace_line_t(&ExtendedPoint::new(x_plus.coords(), z0), field, &controls, &mut on_crossing)?
        }
    };
    let end = SpacePoint(traj.endpoint().x().to_vec());
    Ok((end, traj))
}

impl Termination {
    /// Whether the line ended on the target plate.
    pub fn is_success(self) -> bool {
        matches!(self, Termination::ReachedTargetPlate | Termination::ContinuedPastPlateThenReturned)
    }
}

#[derive(Debug, Clone)]
pub struct MapOutcome {
    /// Endpoint per input, `None` where transport failed.
    pub mapped: Vec<Option<Vec<f64>>>,
    pub trajectories: Vec<Trajectory>,
    /// Input index and termination of every failed line.
    pub failures: Vec<(usize, Termination)>,
    dim_d: usize,
}

impl MapOutcome {
    /// Successfully mapped points in input order.
    pub fn mapped_dataset(&self, label: &str) -> Result<Dataset> {
        let flat: Vec<f64> = self.mapped.iter().flatten().flatten().copied().collect();
        Dataset::from_flat(flat, self.dim_d, label)
    }
}

/// Transports every point independently. Each point draws from its own
/// stream keyed by `seed` and its coordinates, so the result for a point
/// does not depend on its position in the batch.
pub fn map_batch(
    points: &Dataset,
    backend: Backend,
    policy: &TransportPolicy,
    limit_epsilon: f64,
    seed: u64,
) -> Result<MapOutcome> {
    policy.validate()?;
    if points.is_empty() {
        return Err(EfmError::EmptyDataset);
    }
    let dim_d = backend.dim_d();
    points.ensure_dim(dim_d)?;
    let results: Vec<Result<(Vec<f64>, Trajectory)>> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let x = points.point(i);
            match backend {
                Backend::Exact(field) => {
                    let mut stream = seeded_stream(seed, &point_label("transport", x));
                    let (end, traj) = stochastic_map_t(&SpacePoint(x.to_vec()), field, policy, limit_epsilon, &mut stream)?;
                    Ok((end.0, traj))
                }
                Backend::Network(net) => {
                    if policy.mode != TransportMode::PracticalStopAtL {
                        return Err(EfmError::WrongMode(
                            "a learned field supports practical transport only".into(),
                        ));
                    }
                    let l = net_plate_gap(policy);
                    let traj = trace_line_z(&ExtendedPoint::new(x, 0.0), net, policy.step, l)?;
                    Ok((traj.endpoint().x().to_vec(), traj))
                }
            }
        })
        .collect();
    let mut mapped = Vec::with_capacity(points.len());
    let mut trajectories = Vec::with_capacity(points.len());
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        let (end, traj) = r?;
        if traj.termination.is_success() {
            mapped.push(Some(end));
        } else {
            failures.push((i, traj.termination));
            mapped.push(None);
        }
        trajectories.push(traj);
    }
    Ok(MapOutcome {
        mapped,
        trajectories,
        failures,
        dim_d,
    })
}

/// The practical policy stores `step = L / nfe` and `max_steps = nfe`.
fn net_plate_gap(policy: &TransportPolicy) -> f64 {
    policy.step * policy.max_steps as f64
}

/// Trajectory CSV: `line_id,step,z,x_1..x_D,termination`, with the
/// termination filled on each line's last row only.
pub fn trajectories_csv_string(trajectories: &[Trajectory], dim_d: usize) -> String {
    let mut out = String::from("line_id,step,z");
    for k in 1..=dim_d {
        write!(out, ",x_{k}").unwrap();
    }
    out.push_str(",termination\n");
    for (id, t) in trajectories.iter().enumerate() {
        let last = t.points.len() - 1;
        for (step, p) in t.points.iter().enumerate() {
            write!(out, "{id},{step},{:?}", p.z()).unwrap();
            for v in p.x() {
                write!(out, ",{v:?}").unwrap();
            }
            out.push(',');
            if step == last {
                out.push_str(t.termination.as_str());
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_trajectories(trajectories: &[Trajectory], dim_d: usize, path: &Path) -> Result<()> {
    std::fs::write(path, trajectories_csv_string(trajectories, dim_d)).map_err(|e| EfmError::io(path, e))
}
