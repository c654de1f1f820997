//! Capacitor configuration shared by every stage of the pipeline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EfmError, Result};

/// Mean of the Gaussian whose norm sets the interpolant noise radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMeanMode {
    /// Every coordinate of the noise draw has mean `L/2`.
    #[serde(rename = "per_coordinate_L_half")]
    PerCoordinateLHalf,
    /// Zero-mean noise, so the radius is of order `sigma`.
    Zero,
}

/// How training points are placed in the capacitor volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeMode {
    /// Noisy interpolation between a positive and a negative plate sample.
    Interpolant,
    /// Uniform points in an axis-aligned box between the plates.
    CubeMesh,
}

/// Geometry, noise and regularization constants of one capacitor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacitorConfig {
    pub dim_d: usize,
    pub plate_gap: f64,
    pub noise_sigma: f64,
    pub noise_mean_mode: NoiseMeanMode,
    pub volume_mode: VolumeMode,
    pub field_epsilon: f64,
    pub limit_epsilon: f64,
    pub seed: u64,
}

impl CapacitorConfig {
    /// Config with the toy-experiment hyperparameters (`D=2`, `L=6`,
    /// `sigma=0.001`) and the default regularizers.
    pub fn toy() -> Self {
        Self::new(2, 6.0)
    }

    /// Config for dimension `dim_d` and gap `plate_gap` with default noise
    /// and the default `limit_epsilon = L * 1e-3`.
    pub fn new(dim_d: usize, plate_gap: f64) -> Self {
        Self {
            dim_d,
            plate_gap,
            noise_sigma: 0.001,
            noise_mean_mode: NoiseMeanMode::PerCoordinateLHalf,
            volume_mode: VolumeMode::Interpolant,
            field_epsilon: 1e-4,
            limit_epsilon: plate_gap * 1e-3,
            seed: 0,
        }
    }

    /// Ambient dimension `D + 1` of the capacitor space.
    pub fn ambient_dim(&self) -> usize {
        self.dim_d + 1
    }

    pub fn validate(&self) -> Result<()> {
        validate_config(self)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EfmError::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()).map_err(|e| EfmError::io(path, e))
    }
}

/// Checks every config invariant and reports the first one violated.
pub fn validate_config(cfg: &CapacitorConfig) -> Result<()> {
    let fail = |msg: &str| Err(EfmError::InvalidConfig(msg.to_string()));
    if cfg.dim_d < 1 {
        return fail("dim_d must be ≥ 1");
    }
    if !(cfg.plate_gap > 0.0) || !cfg.plate_gap.is_finite() {
        return fail("plate_gap must be positive");
    }
    if !(cfg.noise_sigma >= 0.0) || !cfg.noise_sigma.is_finite() {
        return fail("noise_sigma must be nonnegative");
    }
    if !(cfg.field_epsilon > 0.0) || !cfg.field_epsilon.is_finite() {
        return fail("field_epsilon must be positive");
    }
    if !(cfg.limit_epsilon > 0.0 && cfg.limit_epsilon < cfg.plate_gap / 10.0) {
        return fail("limit_epsilon must lie in (0, plate_gap/10)");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_row_is_valid() {
        let mut cfg = CapacitorConfig::toy();
        cfg.seed = 0;
        assert_eq!(cfg.dim_d, 2);
        assert_eq!(cfg.plate_gap, 6.0);
        assert_eq!(cfg.noise_sigma, 0.001);
        assert!(validate_config(&cfg).is_ok());
    }

    #[test]
    fn zero_gap_rejected() {
        let mut cfg = CapacitorConfig::toy();
        cfg.plate_gap = 0.0;
        let err = validate_config(&cfg).unwrap_err().to_string();
        assert!(err.contains("plate_gap must be positive"), "{err}");
    }

    #[test]
    fn zero_dim_rejected() {
        let mut cfg = CapacitorConfig::toy();
        cfg.dim_d = 0;
        let err = validate_config(&cfg).unwrap_err().to_string();
        assert!(err.contains("dim_d must be ≥ 1"), "{err}");
    }

    #[test]
    fn limit_epsilon_bounds() {
        let mut cfg = CapacitorConfig::toy();
        cfg.limit_epsilon = 0.6;
        assert!(validate_config(&cfg).is_err());
        cfg.limit_epsilon = 0.0;
        assert!(validate_config(&cfg).is_err());
        cfg.limit_epsilon = 0.59;
        assert!(validate_config(&cfg).is_ok());
    }

    #[test]
    fn json_uses_exact_field_names() {
        let cfg = CapacitorConfig::toy();
        let value: serde_json::Value = serde_json::from_str(&cfg.to_json_string()).unwrap();
        let mut keys: Vec<_> = value.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "dim_d",
                "field_epsilon",
                "limit_epsilon",
                "noise_mean_mode",
                "noise_sigma",
                "plate_gap",
                "seed",
                "volume_mode"
            ]
        );
        assert_eq!(value["noise_mean_mode"], "per_coordinate_L_half");
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"{"dim_d":2,"plate_gap":6,"noise_sigma":0.001,"noise_mean_mode":"zero",
            "volume_mode":"interpolant","field_epsilon":1e-4,"limit_epsilon":0.006,"seed":1,"extra":3}"#;
        assert!(CapacitorConfig::from_json_str(text).is_err());
    }

    proptest::proptest! {
        #[test]
        fn json_round_trip(dim in 1usize..8, gap in 0.01f64..1e3, sigma in 0.0f64..10.0,
                           feps in 1e-9f64..1.0, frac in 0.001f64..0.099, seed in proptest::num::u64::ANY,
                           zero_mean in proptest::bool::ANY, cube in proptest::bool::ANY) {
            let cfg = CapacitorConfig {
                dim_d: dim,
                plate_gap: gap,
                noise_sigma: sigma,
                noise_mean_mode: if zero_mean { NoiseMeanMode::Zero } else { NoiseMeanMode::PerCoordinateLHalf },
                volume_mode: if cube { VolumeMode::CubeMesh } else { VolumeMode::Interpolant },
                field_epsilon: feps,
                limit_epsilon: gap * frac,
                seed,
            };
            let back = CapacitorConfig::from_json_str(&cfg.to_json_string()).unwrap();
            proptest::prop_assert_eq!(back, cfg);
        }
    }
}
