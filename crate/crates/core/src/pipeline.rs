//! End-to-end experiment presets and run manifests.
//!
//! A preset generates both plates, trains a network, transports a fresh
//! source sample with the EMA weights and scores the result against a
//! held-out target sample. Every artifact is written under one directory.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use crate::config::{CapacitorConfig, NoiseMeanMode, VolumeMode};
use crate::data::{gen_standard_gaussian, gen_swiss_roll, gen_two_gaussians, save_csv, Dataset, SWISS_ROLL_NOISE};
use crate::error::{EfmError, Result};
use crate::metrics::energy_distance;
use crate::model::save_weights;
use crate::physics::{run_physics_suite, PhysicsCheck};
use crate::rng::seeded_stream;
use crate::training::{
    capacitor_field, decile_medians, evaluation_grid, mean_cosine_similarity, median, train, write_loss_curve, TrainSpec,
};
use crate::transport::{map_batch, write_trajectories, Backend, TransportPolicy};

pub const PRESET_NAMES: [&str; 3] = ["swissroll_L6", "swissroll_L30", "two_gaussians"];

/// Distance between the two target modes of the `two_gaussians` preset.
pub const TWO_GAUSSIANS_SEPARATION: f64 = 6.0;

/// Training steps of every preset.
pub const PRESET_STEPS: usize = 3000;

/// Number of independent target-vs-target pairs behind the null reference.
const NULL_PAIRS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TargetKind {
    SwissRoll,
    TwoGaussians { separation: f64 },
}

impl TargetKind {
    fn sample(&self, n: usize, dim_d: usize, stream: &mut crate::rng::Stream) -> Result<Dataset> {
        match *self {
            TargetKind::SwissRoll => gen_swiss_roll(n, SWISS_ROLL_NOISE, stream),
            TargetKind::TwoGaussians { separation } => gen_two_gaussians(n, dim_d, separation, stream),
        }
    }
}

/// Everything that determines a preset run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetSpec {
    pub name: String,
    pub config: CapacitorConfig,
    pub train: TrainSpec,
    pub target: TargetKind,
    /// Samples per plate used to build the training field.
    pub n_train: usize,
    /// Source points transported and size of the held-out target sample.
    pub n_eval: usize,
    pub nfe: usize,
}

impl PresetSpec {
    pub fn named(name: &str) -> Result<Self> {
        let (plate_gap, target) = match name {
            "swissroll_L6" => (6.0, TargetKind::SwissRoll),
            "swissroll_L30" => (30.0, TargetKind::SwissRoll),
            "two_gaussians" => (
                6.0,
                TargetKind::TwoGaussians {
                    separation: TWO_GAUSSIANS_SEPARATION,
                },
            ),
            _ => {
                return Err(EfmError::InvalidArgument(format!(
                    "unknown preset {name:?}; expected one of {}",
                    PRESET_NAMES.join(", ")
                )))
            }
        };
        let mut config = CapacitorConfig::new(2, plate_gap);
        config.noise_mean_mode = NoiseMeanMode::Zero;
        Ok(Self {
            name: name.to_string(),
            config,
            train: TrainSpec {
                n_steps: PRESET_STEPS,
                ..TrainSpec::default()
            },
            target,
            n_train: 2048,
            n_eval: 2048,
            nfe: 20,
        })
    }

    pub fn with_overrides(mut self, o: &PresetOverrides) -> Self {
        if let Some(seed) = o.seed {
            self.config.seed = seed;
        }
        if let Some(mode) = o.volume_mode {
            self.config.volume_mode = mode;
        }
        if let Some(n) = o.n_steps {
            self.train.n_steps = n;
        }
        if let Some(n) = o.n_eval {
            self.n_eval = n;
        }
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PresetOverrides {
    pub seed: Option<u64>,
    pub volume_mode: Option<VolumeMode>,
    pub n_steps: Option<usize>,
    pub n_eval: Option<usize>,
}

/// Scores of one preset run. Holds no timings so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetMetrics {
    pub preset: String,
    pub seed: u64,
    pub plate_gap: f64,
    pub volume_mode: VolumeMode,
    pub nfe: usize,
    /// Mapped sample vs held-out target sample.
    pub energy_distance: f64,
    /// Median over independent target-vs-target pairs of the same size.
    pub null_energy_distance: f64,
    pub energy_distance_ratio: f64,
    /// Unmoved source sample vs held-out target sample.
    pub identity_energy_distance: f64,
    pub mean_cosine_similarity: f64,
    pub loss_first_decile_median: f64,
    pub loss_last_decile_median: f64,
    pub n_lines: usize,
    pub n_failed: usize,
    pub terminations: BTreeMap<String, usize>,
    pub ez_violations: usize,
}

#[derive(Debug, Clone)]
pub struct PresetRun {
    pub spec: PresetSpec,
    pub metrics: PresetMetrics,
    pub physics: Vec<PhysicsCheck>,
    pub out_dir: PathBuf,
}

/// Runs the named preset with `overrides` and writes its artifacts under
/// `out_dir`.
pub fn run_experiment_preset(name: &str, overrides: &PresetOverrides, out_dir: &Path) -> Result<PresetRun> {
    let spec = PresetSpec::named(name)?.with_overrides(overrides);
    run_preset(&spec, out_dir)
}

pub fn run_preset(spec: &PresetSpec, out_dir: &Path) -> Result<PresetRun> {
    let started = std::time::Instant::now();
    let cfg = &spec.config;
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| EfmError::io(out_dir, e))?;
    let seed = cfg.seed;
    let dim_d = cfg.dim_d;

    let pos = gen_standard_gaussian(spec.n_train, dim_d, &mut seeded_stream(seed, "preset/plus"))?;
    let neg = spec.target.sample(spec.n_train, dim_d, &mut seeded_stream(seed, "preset/minus"))?;
    let outcome = train(cfg, &pos, &neg, &spec.train)?;

    let source = gen_standard_gaussian(spec.n_eval, dim_d, &mut seeded_stream(seed, "preset/source"))?;
    let held_out = spec.target.sample(spec.n_eval, dim_d, &mut seeded_stream(seed, "preset/held_out"))?;
    let policy = TransportPolicy::practical(cfg.plate_gap, spec.nfe);
    let mapped = map_batch(&source, Backend::Network(&outcome.ema_net), &policy, cfg.limit_epsilon, seed)?;
    let mapped_ds = mapped.mapped_dataset("mapped")?;

    let ed = energy_distance(&mapped_ds, &held_out)?.statistic;
    let mut nulls = Vec::with_capacity(NULL_PAIRS);
    for k in 0..NULL_PAIRS {
        let mut s = seeded_stream(seed, &format!("preset/null/{k}"));
        let a = spec.target.sample(spec.n_eval, dim_d, &mut s)?;
        let b = spec.target.sample(spec.n_eval, dim_d, &mut s)?;
        nulls.push(energy_distance(&a, &b)?.statistic);
    }
    let null = median(&nulls);
    let identity = energy_distance(&source, &held_out)?.statistic;

    let field = capacitor_field(cfg, &pos, &neg)?;
    let grid = evaluation_grid(dim_d, 3.0, 24, 0.5, cfg.plate_gap - 0.5, 12);
    let cosine = mean_cosine_similarity(&outcome.ema_net, &field, &grid)?;
    let (first, last) = decile_medians(&outcome.loss_curve);

    let mut terminations = BTreeMap::new();
    for t in &mapped.trajectories {
        *terminations.entry(t.termination.as_str().to_string()).or_insert(0) += 1;
    }
    let metrics = PresetMetrics {
        preset: spec.name.clone(),
        seed,
        plate_gap: cfg.plate_gap,
        volume_mode: cfg.volume_mode,
        nfe: spec.nfe,
        energy_distance: ed,
        null_energy_distance: null,
        energy_distance_ratio: ed / null,
        identity_energy_distance: identity,
        mean_cosine_similarity: cosine,
        loss_first_decile_median: first,
        loss_last_decile_median: last,
        n_lines: source.len(),
        n_failed: mapped.failures.len(),
        terminations,
        ez_violations: mapped.trajectories.iter().map(|t| t.ez_violations).sum(),
    };
    let physics = run_physics_suite(cfg, seed)?;

    let file = |name: &str| out_dir.join(name);
    save_weights(&outcome.net, seed, &file("weights.json"))?;
    save_weights(&outcome.ema_net, seed, &file("weights_ema.json"))?;
    write_loss_curve(&outcome.loss_curve, &file("loss_curve.csv"))?;
    save_csv(&mapped_ds, &file("mapped.csv"))?;
    write_trajectories(&mapped.trajectories, dim_d, &file("trajectories.csv"))?;
    write_json(&metrics, &file("metrics.json"))?;
    write_json(&physics, &file("physics_report.json"))?;

    let outputs = [
        "weights.json",
        "weights_ema.json",
        "loss_curve.csv",
        "mapped.csv",
        "trajectories.csv",
        "metrics.json",
        "physics_report.json",
    ]
    .iter()
    .map(|n| file(n))
    .collect::<Vec<_>>();
    let manifest = RunManifest::new(
        "preset",
        serde_json::to_value(spec)?,
        seed,
        &[],
        &outputs,
        started.elapsed().as_secs_f64(),
    )?;
    manifest.write(&file("manifest.json"))?;

    Ok(PresetRun {
        spec: spec.clone(),
        metrics,
        physics,
        out_dir: out_dir.to_path_buf(),
    })
}

fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| EfmError::io(path, e))
}

/// Content hash of a file as `git hash-object` computes it.
pub fn git_blob_sha1(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashedPath {
    pub path: PathBuf,
    pub sha1: String,
}

impl HashedPath {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| EfmError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha1: git_blob_sha1(&bytes),
        })
    }
}

/// Record of one run: what was invoked, with which settings, on which
/// files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<HashedPath>,
    pub outputs: Vec<HashedPath>,
    pub duration_seconds: f64,
}

impl RunManifest {
    pub fn new(
        subcommand: &str,
        config: serde_json::Value,
        seed: u64,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        duration_seconds: f64,
    ) -> Result<Self> {
        Ok(Self {
            subcommand: subcommand.to_string(),
            config,
            seed,
            inputs: inputs.iter().map(|p| HashedPath::of(p)).collect::<Result<_>>()?,
            outputs: outputs.iter().map(|p| HashedPath::of(p)).collect::<Result<_>>()?,
            duration_seconds,
        })
    }

    /// Writes through a temporary file in the same directory and renames it
    /// into place.
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        let tmp = path.with_extension("json.tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| EfmError::io(&tmp, e))?;
        f.write_all(text.as_bytes()).map_err(|e| EfmError::io(&tmp, e))?;
        f.write_all(b"\n").map_err(|e| EfmError::io(&tmp, e))?;
        f.sync_all().map_err(|e| EfmError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| EfmError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EfmError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
