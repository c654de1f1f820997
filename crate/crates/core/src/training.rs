//! Training points in the capacitor volume, normalized-field targets and the
//! optimization loop.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{CapacitorConfig, NoiseMeanMode, VolumeMode};
use crate::data::Dataset;
use crate::error::{EfmError, Result};
use crate::field::EmpiricalField;
use crate::model::{Activation, EmaState, FieldApproximator, OptimizerState, DEFAULT_HIDDEN};
use crate::rng::{seeded_stream, Stream};
use crate::types::{norm, Charge, ExtendedPoint, PlateSet};

/// Axis-aligned box in `R^{D+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl CubeBounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(EfmError::EmptyBox);
        }
        Ok(Self { lo, hi })
    }

    /// Bounding box of both datasets widened by `margin` in `x`, with `z`
    /// spanning the plate gap.
    pub fn around(pos: &Dataset, neg: &Dataset, margin: f64, plate_gap: f64) -> Result<Self> {
        let d = pos.dim();
        neg.ensure_dim(d)?;
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for p in pos.points().chain(neg.points()) {
            for k in 0..d {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        lo.iter_mut().for_each(|v| *v -= margin);
        hi.iter_mut().for_each(|v| *v += margin);
        lo.push(0.0);
        hi.push(plate_gap);
        Self::new(lo, hi)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.lo.len() && p.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| a <= v && v <= b)
    }
}

#[derive(Debug, Clone)]
pub struct TrainingVolumeSampler {
    mode: VolumeMode,
    cfg: CapacitorConfig,
    cube: Option<CubeBounds>,
}

impl TrainingVolumeSampler {
    pub fn new(cfg: &CapacitorConfig, cube: Option<CubeBounds>) -> Result<Self> {
        cfg.validate()?;
        let mode = cfg.volume_mode;
        match (mode, &cube) {
            (VolumeMode::CubeMesh, None) => {
                return Err(EfmError::InvalidConfig("cube_mesh mode needs cube bounds".into()))
            }
            (VolumeMode::Interpolant, Some(_)) => {
                return Err(EfmError::InvalidConfig("cube bounds given in interpolant mode".into()))
            }
            (VolumeMode::CubeMesh, Some(c)) => {
                let z = cfg.dim_d;
                if c.lo.len() != cfg.ambient_dim() {
                    return Err(EfmError::DimensionMismatch {
                        expected: cfg.ambient_dim(),
                        got: c.lo.len(),
                    });
                }
                if c.lo[z] < 0.0 || c.hi[z] > cfg.plate_gap {
                    return Err(EfmError::InvalidConfig("cube z-range must lie within [0, L]".into()));
                }
            }
            _ => {}
        }
        Ok(Self {
            mode,
            cfg: cfg.clone(),
            cube,
        })
    }

    pub fn mode(&self) -> VolumeMode {
        self.mode
    }

    pub fn cube(&self) -> Option<&CubeBounds> {
        self.cube.as_ref()
    }
}

/// `|eps| m / |m|` with `eps ~ N(mean, sigma^2 I)` and `m ~ N(0, I)`.
pub fn sample_noise(cfg: &CapacitorConfig, stream: &mut Stream) -> Vec<f64> {
    let n = cfg.ambient_dim();
    let mean = match cfg.noise_mean_mode {
        NoiseMeanMode::PerCoordinateLHalf => cfg.plate_gap / 2.0,
        NoiseMeanMode::Zero => 0.0,
    };
    let eps: Vec<f64> = (0..n)
        .map(|_| mean + cfg.noise_sigma * stream.sample::<f64, _>(StandardNormal))
        .collect();
    let radius = norm(&eps);
    let m: Vec<f64> = (0..n).map(|_| stream.sample::<f64, _>(StandardNormal)).collect();
    let m_norm = norm(&m);
    if radius == 0.0 || m_norm == 0.0 {
        return vec![0.0; n];
    }
    m.iter().map(|v| radius * v / m_norm).collect()
}

/// `(t/L) x_minus + (1 - t/L) x_plus + noise`.
pub fn sample_interpolant(
    x_plus: &ExtendedPoint,
    x_minus: &ExtendedPoint,
    t: f64,
    plate_gap: f64,
    noise: &[f64],
) -> Result<ExtendedPoint> {
    let n = x_plus.as_slice().len();
    if x_minus.as_slice().len() != n || noise.len() != n {
        return Err(EfmError::DimensionMismatch {
            expected: n,
            got: x_minus.as_slice().len().max(noise.len()),
        });
    }
    if !(0.0..=plate_gap).contains(&t) {
        return Err(EfmError::InvalidArgument(format!("t = {t} outside [0, {plate_gap}]")));
    }
    let a = t / plate_gap;
    let coords = (0..n)
        .map(|k| a * x_minus.0[k] + (1.0 - a) * x_plus.0[k] + noise[k])
        .collect();
    Ok(ExtendedPoint(coords))
}

pub fn sample_cube_mesh(sampler: &TrainingVolumeSampler, n: usize, stream: &mut Stream) -> Result<Vec<ExtendedPoint>> {
    let cube = match (sampler.mode, &sampler.cube) {
        (VolumeMode::CubeMesh, Some(c)) => c,
        _ => return Err(EfmError::WrongMode("sample_cube_mesh needs cube_mesh mode".into())),
    };
    Ok((0..n)
        .map(|_| {
            ExtendedPoint(
                cube.lo
                    .iter()
                    .zip(&cube.hi)
                    .map(|(a, b)| stream.random_range(*a..*b))
                    .collect(),
            )
        })
        .collect())
}

fn interpolant_batch(
    sampler: &TrainingVolumeSampler,
    field: &EmpiricalField,
    batch_size: usize,
    stream: &mut Stream,
) -> Result<Vec<ExtendedPoint>> {
    let cfg = &sampler.cfg;
    let pick = |plate: &PlateSet| {
        WeightedIndex::new(plate.weights()).map_err(|e| EfmError::InvalidArgument(format!("plate weights: {e}")))
    };
    let pos = field.plate_pos();
    let neg = field.plate_neg();
    let pos_idx = pick(pos)?;
    let neg_idx = pick(neg)?;
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let xp = ExtendedPoint::new(pos.sample(pos_idx.sample(stream)), 0.0);
        let xm = ExtendedPoint::new(neg.sample(neg_idx.sample(stream)), cfg.plate_gap);
        let t = stream.random_range(0.0..=cfg.plate_gap);
        let noise = sample_noise(cfg, stream);
        out.push(sample_interpolant(&xp, &xm, t, cfg.plate_gap, &noise)?);
    }
    Ok(out)
}

/// Training points for one step in the sampler's volume mode.
pub fn sample_training_points(
    sampler: &TrainingVolumeSampler,
    field: &EmpiricalField,
    batch_size: usize,
    stream: &mut Stream,
) -> Result<Vec<ExtendedPoint>> {
    match sampler.mode {
        VolumeMode::Interpolant => interpolant_batch(sampler, field, batch_size, stream),
        VolumeMode::CubeMesh => sample_cube_mesh(sampler, batch_size, stream),
    }
}

/// Normalized targets for `points`; rows with a vanishing field are
/// dropped. Returns the kept inputs, their targets and the drop count.
pub fn compute_targets(
    field: &EmpiricalField,
    points: &[ExtendedPoint],
    stream: &mut Stream,
) -> Result<(Array2<f64>, Array2<f64>, usize)> {
    let n = field.dim_d() + 1;
    let key = stream.next_u64();
    let results: Vec<Result<Option<Vec<f64>>>> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let nf = match field.mc_subsample() {
                None => field.normalized_field(p, None)?,
                Some(_) => {
                    let mut s = seeded_stream(key, &format!("target/{i}"));
                    field.normalized_field(p, Some(&mut s))?
                }
            };
            Ok((!nf.degenerate).then_some(nf.vector.0))
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    assemble_targets(points, results, n)
}

fn assemble_targets(
    points: &[ExtendedPoint],
    results: Vec<Option<Vec<f64>>>,
    n: usize,
) -> Result<(Array2<f64>, Array2<f64>, usize)> {
    let mut inputs = Vec::with_capacity(points.len() * n);
    let mut targets = Vec::with_capacity(points.len() * n);
    let mut dropped = 0;
    for (p, r) in points.iter().zip(results) {
        match r {
            Some(t) => {
                inputs.extend_from_slice(p.as_slice());
                targets.extend(t);
            }
            None => dropped += 1,
        }
    }
    if inputs.is_empty() {
        return Err(EfmError::AllTargetsDegenerate(points.len()));
    }
    let rows = inputs.len() / n;
    Ok((
        Array2::from_shape_vec((rows, n), inputs).unwrap(),
        Array2::from_shape_vec((rows, n), targets).unwrap(),
        dropped,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub loss: f64,
    pub dropped_targets: usize,
}

/// One optimization step: sample, compute targets, update the network and
/// its moving average.
pub fn training_step(
    net: &mut FieldApproximator,
    optimizer: &mut OptimizerState,
    ema: &mut EmaState,
    field: &EmpiricalField,
    batch_size: usize,
    sampler: &TrainingVolumeSampler,
    stream: &mut Stream,
) -> Result<StepReport> {
    if batch_size == 0 {
        return Err(EfmError::EmptyBatch);
    }
    let points = sample_training_points(sampler, field, batch_size, stream)?;
    debug_assert!(points.iter().all(|p| p.is_finite()));
    let (inputs, targets, dropped) = compute_targets(field, &points, stream)?;
    let (loss, grad) = net.loss_and_gradient(inputs.view(), targets.view())?;
    crate::model::optimizer_step(net, &grad, optimizer)?;
    ema.update(net)?;
    Ok(StepReport {
        loss,
        dropped_targets: dropped,
    })
}

/// Network and optimizer settings for [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub n_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    /// Per-plate subsample size for target fields; `None` sums every sample.
    pub mc_subsample: Option<usize>,
    /// Margin around the data bounding box in cube_mesh mode.
    pub cube_margin: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN.to_vec(),
            activation: Activation::SmoothRelu,
            n_steps: 1000,
            batch_size: 1024,
            learning_rate: 2e-3,
            weight_decay: 0.0,
            ema_decay: 0.99,
            mc_subsample: None,
            cube_margin: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub dropped_targets: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: FieldApproximator,
    pub ema_net: FieldApproximator,
    pub loss_curve: Vec<LossRecord>,
}

/// Builds the capacitor field for `pos` at `z = 0` and `neg` at `z = L`.
pub fn capacitor_field(cfg: &CapacitorConfig, pos: &Dataset, neg: &Dataset) -> Result<EmpiricalField> {
    pos.ensure_dim(cfg.dim_d)?;
    neg.ensure_dim(cfg.dim_d)?;
    EmpiricalField::new(
        pos.to_plate(0.0, Charge::Positive)?,
        neg.to_plate(cfg.plate_gap, Charge::Negative)?,
        cfg.field_epsilon,
    )
}

/// Runs `spec.n_steps` training steps. Everything random flows from
/// `cfg.seed`.
pub fn train(cfg: &CapacitorConfig, pos: &Dataset, neg: &Dataset, spec: &TrainSpec) -> Result<TrainOutcome> {
    cfg.validate()?;
    if spec.batch_size == 0 {
        return Err(EfmError::InvalidConfig("batch_size must be ≥ 1".into()));
    }
    if !(spec.learning_rate >= 0.0) || !(spec.weight_decay >= 0.0) {
        return Err(EfmError::InvalidConfig("learning_rate and weight_decay must be nonnegative".into()));
    }
    let field = capacitor_field(cfg, pos, neg)?.with_mc_subsample(spec.mc_subsample);
    let cube = match cfg.volume_mode {
        VolumeMode::CubeMesh => Some(CubeBounds::around(pos, neg, spec.cube_margin, cfg.plate_gap)?),
        VolumeMode::Interpolant => None,
    };
    let sampler = TrainingVolumeSampler::new(cfg, cube)?;
    let mut init_stream = seeded_stream(cfg.seed, "train/init");
    let mut net = FieldApproximator::for_capacitor(cfg.dim_d, &spec.hidden, spec.activation, &mut init_stream)?;
    let mut optimizer = OptimizerState::new(&net, spec.learning_rate, spec.weight_decay);
    let mut ema = EmaState::new(&net, spec.ema_decay)?;
    let mut stream = seeded_stream(cfg.seed, "train/steps");
    let mut loss_curve = Vec::with_capacity(spec.n_steps);
    for step in 0..spec.n_steps {
        let r = training_step(&mut net, &mut optimizer, &mut ema, &field, spec.batch_size, &sampler, &mut stream)?;
        if step % 100 == 0 {
            log::debug!("step {step}: loss {:.5}, dropped {}", r.loss, r.dropped_targets);
        }
        loss_curve.push(LossRecord {
            step,
            loss: r.loss,
            dropped_targets: r.dropped_targets,
        });
    }
    let ema_net = ema.apply();
    Ok(TrainOutcome {
        net,
        ema_net,
        loss_curve,
    })
}

pub fn write_loss_curve(curve: &[LossRecord], path: &Path) -> Result<()> {
    let mut text = String::from("step,loss,dropped_targets\n");
    for r in curve {
        text.push_str(&format!("{},{:?},{}\n", r.step, r.loss, r.dropped_targets));
    }
    let mut f = std::fs::File::create(path).map_err(|e| EfmError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| EfmError::io(path, e))
}

/// Median of `values`; `NaN` when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Medians of the first and last tenth of a loss curve.
pub fn decile_medians(curve: &[LossRecord]) -> (f64, f64) {
    let k = (curve.len() / 10).max(1);
    let losses: Vec<f64> = curve.iter().map(|r| r.loss).collect();
    (median(&losses[..k.min(losses.len())]), median(&losses[losses.len().saturating_sub(k)..]))
}

/// Grid of `nx^D x nz` points over `[-half_width, half_width]^D x [z_lo, z_hi]`.
pub fn evaluation_grid(dim_d: usize, half_width: f64, nx: usize, z_lo: f64, z_hi: f64, nz: usize) -> Vec<ExtendedPoint> {
    let axis = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
        if n == 1 {
            return vec![0.5 * (lo + hi)];
        }
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    };
    let xs = axis(-half_width, half_width, nx);
    let zs = axis(z_lo, z_hi, nz);
    let mut out = Vec::with_capacity(nx.pow(dim_d as u32) * nz);
    let mut idx = vec![0usize; dim_d];
    loop {
        let x: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
        for &z in &zs {
            out.push(ExtendedPoint::new(&x, z));
        }
        let mut k = 0;
        while k < dim_d {
            idx[k] += 1;
            if idx[k] < nx {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == dim_d {
            break;
        }
    }
    out
}

/// Mean cosine similarity between the network output and the exact
/// normalized field over `points`, skipping degenerate field values.
pub fn mean_cosine_similarity(net: &FieldApproximator, field: &EmpiricalField, points: &[ExtendedPoint]) -> Result<f64> {
    let sims: Vec<Option<f64>> = points
        .par_iter()
        .map(|p| {
            let exact = field.normalized_exact(p.as_slice());
            if exact.degenerate {
                return Ok(None);
            }
            let pred = net.forward(p)?;
            let pn = pred.norm();
            if pn == 0.0 {
                return Ok(Some(0.0));
            }
            Ok(Some(crate::types::dot(&pred.0, &exact.vector.0) / pn))
        })
        .collect::<Result<_>>()?;
    let kept: Vec<f64> = sims.into_iter().flatten().collect();
    if kept.is_empty() {
        return Err(EfmError::AllTargetsDegenerate(points.len()));
    }
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Radially symmetric noise magnitude used in tests of `sample_noise`.
pub fn expected_noise_radius(cfg: &CapacitorConfig) -> f64 {
    match cfg.noise_mean_mode {
        NoiseMeanMode::PerCoordinateLHalf => cfg.plate_gap / 2.0 * (cfg.ambient_dim() as f64).sqrt(),
        NoiseMeanMode::Zero => {
            // Mean of a chi distribution with n degrees of freedom, times sigma.
            let n = cfg.ambient_dim() as f64;
            let ln = statrs::function::gamma::ln_gamma((n + 1.0) / 2.0) - statrs::function::gamma::ln_gamma(n / 2.0);
            cfg.noise_sigma * std::f64::consts::SQRT_2 * ln.exp()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_standard_gaussian, gen_swiss_roll};

    fn small_setup(mode: VolumeMode) -> (CapacitorConfig, Dataset, Dataset) {
        let mut cfg = CapacitorConfig::toy();
        cfg.volume_mode = mode;
        let mut s = seeded_stream(5, "setup");
        let pos = gen_standard_gaussian(128, 2, &mut s).unwrap();
        let neg = gen_swiss_roll(128, 0.1, &mut s).unwrap();
        (cfg, pos, neg)
    }

    #[test]
    fn zero_sigma_zero_mean_noise_vanishes() {
        let mut cfg = CapacitorConfig::toy();
        cfg.noise_sigma = 0.0;
        cfg.noise_mean_mode = NoiseMeanMode::Zero;
        let v = sample_noise(&cfg, &mut seeded_stream(0, "n"));
        assert_eq!(v, vec![0.0; 3]);
    }

    #[test]
    fn literal_noise_radius_statistics() {
        let cfg = CapacitorConfig::toy();
        let mut s = seeded_stream(1, "noise");
        let n = 100_000;
        let radii: Vec<f64> = (0..n).map(|_| norm(&sample_noise(&cfg, &mut s))).collect();
        let mean = radii.iter().sum::<f64>() / n as f64;
        let var = radii.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 3.0 * 3f64.sqrt()).abs() < 1e-4, "{mean}");
        // The radius is a unit-gradient function of eps, so its spread is sigma.
        assert!((var.sqrt() - 0.001).abs() < 5e-5, "{}", var.sqrt());
        assert!((mean - expected_noise_radius(&cfg)).abs() < 1e-4);
    }

    #[test]
    fn zero_mean_noise_radius_matches_chi_mean() {
        let mut cfg = CapacitorConfig::toy();
        cfg.noise_mean_mode = NoiseMeanMode::Zero;
        cfg.noise_sigma = 0.5;
        let mut s = seeded_stream(2, "noise");
        let n = 100_000;
        let mean = (0..n).map(|_| norm(&sample_noise(&cfg, &mut s))).sum::<f64>() / n as f64;
        let want = expected_noise_radius(&cfg);
        assert!((mean - want).abs() < 0.01, "{mean} vs {want}");
    }

    #[test]
    fn noise_direction_is_isotropic() {
        let cfg = CapacitorConfig::toy();
        let mut s = seeded_stream(3, "noise");
        let n = 50_000;
        let mut mean = [0.0; 3];
        for _ in 0..n {
            let v = sample_noise(&cfg, &mut s);
            let r = norm(&v);
            for k in 0..3 {
                mean[k] += v[k] / r / n as f64;
            }
        }
        // Standard error of each unit-vector coordinate is sqrt(1/3n).
        assert!(mean.iter().all(|m| m.abs() < 5.0 * (1.0 / (3.0 * n as f64)).sqrt()), "{mean:?}");
    }

    #[test]
    fn interpolant_endpoints_and_midpoint() {
        let xp = ExtendedPoint::new(&[0.0, 0.0], 0.0);
        let xm = ExtendedPoint::new(&[2.0, 2.0], 6.0);
        let z = [0.0; 3];
        assert_eq!(sample_interpolant(&xp, &xm, 0.0, 6.0, &z).unwrap(), xp);
        assert_eq!(sample_interpolant(&xp, &xm, 6.0, 6.0, &z).unwrap(), xm);
        assert_eq!(sample_interpolant(&xp, &xm, 3.0, 6.0, &z).unwrap().0, vec![1.0, 1.0, 3.0]);
        assert!(sample_interpolant(&xp, &xm, 6.5, 6.0, &z).is_err());
    }

    #[test]
    fn interpolant_z_equals_t() {
        let xp = ExtendedPoint::new(&[0.4, -1.0], 0.0);
        let xm = ExtendedPoint::new(&[-3.0, 2.0], 6.0);
        for i in 0..=60 {
            let t = i as f64 * 0.1;
            let p = sample_interpolant(&xp, &xm, t.min(6.0), 6.0, &[0.0; 3]).unwrap();
            assert!((p.z() - t.min(6.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn cube_mesh_samples_inside_and_centered() {
        let mut cfg = CapacitorConfig::toy();
        cfg.volume_mode = VolumeMode::CubeMesh;
        let cube = CubeBounds::new(vec![-2.0, -1.0, 0.0], vec![4.0, 1.0, 6.0]).unwrap();
        let sampler = TrainingVolumeSampler::new(&cfg, Some(cube.clone())).unwrap();
        let mut s = seeded_stream(4, "cube");
        assert!(sample_cube_mesh(&sampler, 0, &mut s).unwrap().is_empty());
        let n = 40_000;
        let pts = sample_cube_mesh(&sampler, n, &mut s).unwrap();
        assert!(pts.iter().all(|p| cube.contains(p.as_slice())));
        let c = cube.center();
        for k in 0..3 {
            let width = cube.hi[k] - cube.lo[k];
            let m = pts.iter().map(|p| p.0[k]).sum::<f64>() / n as f64;
            let se = width / (12.0 * n as f64).sqrt();
            assert!((m - c[k]).abs() < 5.0 * se, "axis {k}: {m}");
        }
    }

    #[test]
    fn wrong_mode_and_bad_bounds_rejected() {
        let cfg = CapacitorConfig::toy();
        let sampler = TrainingVolumeSampler::new(&cfg, None).unwrap();
        assert!(matches!(
            sample_cube_mesh(&sampler, 3, &mut seeded_stream(0, "x")),
            Err(EfmError::WrongMode(_))
        ));
        let mut cube_cfg = cfg.clone();
        cube_cfg.volume_mode = VolumeMode::CubeMesh;
        assert!(TrainingVolumeSampler::new(&cube_cfg, None).is_err());
        let tall = CubeBounds::new(vec![-1.0, -1.0, -1.0], vec![1.0, 1.0, 6.0]).unwrap();
        assert!(TrainingVolumeSampler::new(&cube_cfg, Some(tall)).is_err());
        assert!(matches!(CubeBounds::new(vec![0.0], vec![0.0]), Err(EfmError::EmptyBox)));
    }

    #[test]
    fn first_step_loss_is_finite_and_positive() {
        let (cfg, pos, neg) = small_setup(VolumeMode::Interpolant);
        let field = capacitor_field(&cfg, &pos, &neg).unwrap();
        let sampler = TrainingVolumeSampler::new(&cfg, None).unwrap();
        let mut s = seeded_stream(0, "init");
        let mut net = FieldApproximator::for_capacitor(2, &[16, 16], Activation::SmoothRelu, &mut s).unwrap();
        let mut opt = OptimizerState::new(&net, 2e-3, 0.0);
        let mut ema = EmaState::new(&net, 0.99).unwrap();
        let r = training_step(&mut net, &mut opt, &mut ema, &field, 64, &sampler, &mut s).unwrap();
        assert!(r.loss.is_finite() && r.loss > 0.0);
        assert_eq!(r.dropped_targets, 0);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (cfg, pos, neg) = small_setup(VolumeMode::Interpolant);
        let field = capacitor_field(&cfg, &pos, &neg).unwrap();
        let sampler = TrainingVolumeSampler::new(&cfg, None).unwrap();
        let mut s = seeded_stream(0, "init");
        let mut net = FieldApproximator::for_capacitor(2, &[8], Activation::Tanh, &mut s).unwrap();
        let before = net.clone();
        let mut opt = OptimizerState::new(&net, 0.0, 0.0);
        let mut ema = EmaState::new(&net, 0.99).unwrap();
        for _ in 0..3 {
            training_step(&mut net, &mut opt, &mut ema, &field, 32, &sampler, &mut s).unwrap();
        }
        assert_eq!(net, before);
    }

    #[test]
    fn zero_steps_returns_initial_network() {
        let (cfg, pos, neg) = small_setup(VolumeMode::Interpolant);
        let spec = TrainSpec {
            hidden: vec![8],
            n_steps: 0,
            ..TrainSpec::default()
        };
        let out = train(&cfg, &pos, &neg, &spec).unwrap();
        let mut s = seeded_stream(cfg.seed, "train/init");
        let init = FieldApproximator::for_capacitor(2, &[8], spec.activation, &mut s).unwrap();
        assert_eq!(out.net, init);
        assert_eq!(out.ema_net, init);
        assert!(out.loss_curve.is_empty());
    }

    #[test]
    fn training_is_deterministic_in_both_modes() {
        for mode in [VolumeMode::Interpolant, VolumeMode::CubeMesh] {
            let (cfg, pos, neg) = small_setup(mode);
            let spec = TrainSpec {
                hidden: vec![16, 16],
                n_steps: 20,
                batch_size: 64,
                ..TrainSpec::default()
            };
            let a = train(&cfg, &pos, &neg, &spec).unwrap();
            let b = train(&cfg, &pos, &neg, &spec).unwrap();
            assert_eq!(a.loss_curve, b.loss_curve);
            assert_eq!(a.ema_net, b.ema_net);
        }
    }

    #[test]
    fn subsampled_targets_are_deterministic() {
        let (cfg, pos, neg) = small_setup(VolumeMode::Interpolant);
        let spec = TrainSpec {
            hidden: vec![8],
            n_steps: 5,
            batch_size: 32,
            mc_subsample: Some(16),
            ..TrainSpec::default()
        };
        let a = train(&cfg, &pos, &neg, &spec).unwrap();
        let b = train(&cfg, &pos, &neg, &spec).unwrap();
        assert_eq!(a.loss_curve, b.loss_curve);
    }

    #[test]
    fn degenerate_targets_are_dropped() {
        let pts = vec![ExtendedPoint::new(&[0.0], 1.0), ExtendedPoint::new(&[0.3], 0.7)];
        assert!(matches!(
            assemble_targets(&pts, vec![None, None], 2),
            Err(EfmError::AllTargetsDegenerate(2))
        ));
        let (inputs, targets, dropped) = assemble_targets(&pts, vec![None, Some(vec![0.6, 0.8])], 2).unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(inputs.row(0).to_vec(), vec![0.3, 0.7]);
        assert_eq!(targets.row(0).to_vec(), vec![0.6, 0.8]);
    }

    #[test]
    fn target_on_a_charge_points_at_the_other_plate() {
        // On the positive charge its own kernel vanishes, leaving the pull of
        // the negative charge straight above.
        let cfg = CapacitorConfig::new(1, 2.0);
        let pos = Dataset::from_flat(vec![0.0], 1, "p").unwrap();
        let neg = Dataset::from_flat(vec![0.0], 1, "n").unwrap();
        let field = capacitor_field(&cfg, &pos, &neg).unwrap();
        let on_charge = ExtendedPoint::new(&[0.0], 0.0);
        let (inputs, targets, dropped) = compute_targets(&field, &[on_charge], &mut seeded_stream(0, "t")).unwrap();
        assert_eq!((inputs.nrows(), dropped), (1, 0));
        assert!((targets[[0, 1]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_curve_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let curve = vec![
            LossRecord { step: 0, loss: 0.5, dropped_targets: 0 },
            LossRecord { step: 1, loss: 0.25, dropped_targets: 2 },
        ];
        write_loss_curve(&curve, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "step,loss,dropped_targets\n0,0.5,0\n1,0.25,2\n");
    }

    #[test]
    fn grid_shape_and_bounds() {
        let g = evaluation_grid(2, 4.0, 32, 0.5, 5.5, 16);
        assert_eq!(g.len(), 32 * 32 * 16);
        assert!(g.iter().all(|p| p.x().iter().all(|v| v.abs() <= 4.0) && (0.5..=5.5).contains(&p.z())));
        assert_eq!(g[0].0, vec![-4.0, -4.0, 0.5]);
    }

    #[test]
    fn cosine_of_exact_field_with_itself_is_one() {
        let cfg = CapacitorConfig::new(1, 2.0);
        let pos = Dataset::from_flat(vec![0.0], 1, "p").unwrap();
        let neg = Dataset::from_flat(vec![0.0], 1, "n").unwrap();
        let field = capacitor_field(&cfg, &pos, &neg).unwrap();
        // On the axis x = 0 the field points straight up.
        let mut net = FieldApproximator::zeros(&[2, 2], Activation::Tanh).unwrap();
        net.params.layers[0].bias[1] = 1.0;
        let pts: Vec<_> = (1..10).map(|i| ExtendedPoint::new(&[0.0], 0.2 * i as f64)).collect();
        let c = mean_cosine_similarity(&net, &field, &pts).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decile_medians_of_decreasing_curve() {
        let curve: Vec<_> = (0..100)
            .map(|i| LossRecord { step: i, loss: 1.0 / (1.0 + i as f64), dropped_targets: 0 })
            .collect();
        let (first, last) = decile_medians(&curve);
        assert!(last < first);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
