//! Movement along field lines.

mod adaptive;
mod euler;
mod maps;

pub use adaptive::{trace_line_t, CrossingAction, CrossingContext, TracerControls};
pub use euler::{euler_step, trace_line_z, DEGENERACY_RATIO};
pub use maps::{map_batch, stochastic_map_t, write_trajectories, Backend, MapOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{EfmError, Result};
use crate::types::ExtendedPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ReachedTargetPlate,
    ContinuedPastPlateThenReturned,
    StepLimit,
    FieldDegenerate,
    /// The arc-length budget in [`TracerControls`] ran out.
    ArcLengthReached,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::ReachedTargetPlate => "reached_target_plate",
            Termination::ContinuedPastPlateThenReturned => "continued_past_plate_then_returned",
            Termination::StepLimit => "step_limit",
            Termination::FieldDegenerate => "field_degenerate",
            Termination::ArcLengthReached => "arc_length_reached",
        }
    }
}

/// A plane reached by a traced line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    /// Index into `Trajectory::points` of the point on the plane.
    pub index: usize,
    pub plate_z: f64,
    /// Whether the line arrived from below.
    pub upward: bool,
    /// Stop probability evaluated at the crossing, if any.
    pub nu: Option<f64>,
    pub stopped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<ExtendedPoint>,
    pub termination: Termination,
    pub crossings: Vec<Crossing>,
    /// Accepted points strictly between the plates where `E_z <= 0`.
    pub ez_violations: usize,
    pub field_evaluations: usize,
}

impl Trajectory {
    pub fn endpoint(&self) -> &ExtendedPoint {
        self.points.last().expect("trajectory has a start point")
    }

    pub fn arc_length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| crate::types::norm(&w[1].0.iter().zip(&w[0].0).map(|(a, b)| a - b).collect::<Vec<_>>()))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportMode {
    PracticalStopAtL,
    TheoreticalStochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ForwardOnly,
    Bidirectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportPolicy {
    pub mode: TransportMode,
    pub direction: Direction,
    /// Euler step in `z` for the practical mode.
    pub step: f64,
    /// Step cap for the adaptive tracer.
    pub max_steps: usize,
}

impl TransportPolicy {
    /// Forward-only Euler transport with `nfe` steps across a gap `plate_gap`.
    pub fn practical(plate_gap: f64, nfe: usize) -> Self {
        Self {
            mode: TransportMode::PracticalStopAtL,
            direction: Direction::ForwardOnly,
            step: plate_gap / nfe.max(1) as f64,
            max_steps: nfe,
        }
    }

    pub fn theoretical() -> Self {
        Self {
            mode: TransportMode::TheoreticalStochastic,
            direction: Direction::Bidirectional,
            step: 0.0,
            max_steps: 20_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            TransportMode::PracticalStopAtL => {
                if !(self.step > 0.0) {
                    return Err(EfmError::InvalidArgument("transport step must be positive".into()));
                }
                if self.direction != Direction::ForwardOnly {
                    return Err(EfmError::InvalidArgument("practical mode transports forward only".into()));
                }
            }
            TransportMode::TheoreticalStochastic => {
                if self.max_steps == 0 {
                    return Err(EfmError::InvalidArgument("max_steps must be ≥ 1".into()));
                }
            }
        }
        Ok(())
    }
}

/// Probability of stopping at a crossing, from the `E_z` values on the
/// incoming (`e_in`) and outgoing (`e_out`) sides of the plate.
///
/// Opposite signs, or a zero on either side, stop the line. A zero incoming
/// value with a nonzero outgoing one is treated as a stop as well.
pub fn stop_probability_nu(e_in: f64, e_out: f64) -> f64 {
    if e_in == 0.0 || e_out == 0.0 || (e_in > 0.0) != (e_out > 0.0) {
        return 1.0;
    }
    ((e_in - e_out) / e_in).clamp(0.0, 1.0)
}

/// Probability of departing forward, from `E_z` just above (`e_plus`) and
/// just below (`e_minus`) the source plate.
pub fn direction_probability_mu(e_plus: f64, e_minus: f64) -> f64 {
    if (e_plus > 0.0) == (e_minus > 0.0) && e_plus != 0.0 && e_minus != 0.0 {
        return 1.0;
    }
    let denom = e_plus.abs() + e_minus.abs();
    if denom == 0.0 {
        return 1.0;
    }
    (e_plus.abs() / denom).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nu_branches() {
        assert_eq!(stop_probability_nu(2.0, -1.0), 1.0);
        assert_eq!(stop_probability_nu(4.0, 1.0), 0.75);
        assert_eq!(stop_probability_nu(3.0, 3.0), 0.0);
        assert_eq!(stop_probability_nu(0.0, 1.0), 1.0);
        assert_eq!(stop_probability_nu(1.0, 0.0), 1.0);
        // Downward crossings carry negative values on both sides.
        assert_eq!(stop_probability_nu(-4.0, -1.0), 0.75);
        // Flux growing across the plate: nothing is absorbed.
        assert_eq!(stop_probability_nu(1.0, 2.0), 0.0);
    }

    #[test]
    fn mu_branches() {
        assert_eq!(direction_probability_mu(1.0, -3.0), 0.25);
        assert_eq!(direction_probability_mu(2.0, 5.0), 1.0);
        assert_eq!(direction_probability_mu(1.5, -1.5), 0.5);
        assert_eq!(direction_probability_mu(0.0, 0.0), 1.0);
    }

    #[test]
    fn probabilities_stay_in_unit_interval() {
        let vals = [-1e300, -5.0, -1e-300, 0.0, 1e-300, 0.3, 7.0, 1e300];
        for &a in &vals {
            for &b in &vals {
                let nu = stop_probability_nu(a, b);
                let mu = direction_probability_mu(a, b);
                assert!((0.0..=1.0).contains(&nu) && (0.0..=1.0).contains(&mu), "{a} {b}");
            }
        }
    }

    #[test]
    fn policy_validation() {
        assert!(TransportPolicy::practical(6.0, 20).validate().is_ok());
        assert!(TransportPolicy::theoretical().validate().is_ok());
        let mut p = TransportPolicy::practical(6.0, 20);
        p.direction = Direction::Bidirectional;
        assert!(p.validate().is_err());
        p.direction = Direction::ForwardOnly;
        p.step = 0.0;
        assert!(p.validate().is_err());
    }
}
