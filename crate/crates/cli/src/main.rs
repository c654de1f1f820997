use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use efm_core::config::{CapacitorConfig, VolumeMode};
use efm_core::data::{gen_gaussian, gen_swiss_roll, gen_two_gaussians, load_csv, save_csv, Dataset, SWISS_ROLL_NOISE};
use efm_core::field::{EmpiricalField, VectorField};
use efm_core::metrics::{energy_distance, energy_distance_test, sliced_w1};
use efm_core::model::{load_weights, save_weights, Activation, FieldApproximator};
use efm_core::physics::run_physics_suite;
use efm_core::pipeline::{run_experiment_preset, PresetOverrides, RunManifest, PRESET_NAMES};
use efm_core::rng::seeded_stream;
use efm_core::training::{capacitor_field, evaluation_grid, train, write_loss_curve, TrainSpec};
use efm_core::transport::{
    map_batch, trace_line_t, write_trajectories, Backend, CrossingAction, Termination, TracerControls, Trajectory,
    TransportPolicy,
};
use efm_core::types::ExtendedPoint;

#[derive(Parser)]
#[command(name = "efm", version, about = "Electrostatic field matching experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a toy dataset to CSV.
    GenerateData(GenerateArgs),
    /// Train a field approximator between two plates.
    Train(TrainArgs),
    /// Move points from the positive plate to the negative plate.
    Transport(TransportArgs),
    /// Trace field lines with the adaptive solver and dump them.
    TraceLines(TraceArgs),
    /// Evaluate the field on a regular grid.
    FieldGrid(GridArgs),
    /// Run the electrostatic property checks.
    VerifyPhysics(PhysicsArgs),
    /// Two-sample distances between CSV datasets.
    Evaluate(EvaluateArgs),
    /// Run a full experiment preset.
    Preset(PresetArgs),
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum DataKind {
    Gaussian,
    SwissRoll,
    TwoGaussians,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: DataKind,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dimension for gaussian and two_gaussians.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Swiss-roll noise.
    #[arg(long, default_value_t = SWISS_ROLL_NOISE)]
    noise_std: f64,
    /// Mode separation for two_gaussians.
    #[arg(long, default_value_t = 6.0)]
    separation: f64,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

/// Config file plus the `--seed` override.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<CapacitorConfig> {
        let mut cfg = CapacitorConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct PlateArgs {
    #[arg(long)]
    data_pos: Option<PathBuf>,
    #[arg(long)]
    data_neg: Option<PathBuf>,
}

impl PlateArgs {
    fn load(&self, cfg: &CapacitorConfig) -> Result<(Dataset, Dataset, Vec<PathBuf>)> {
        let (Some(p), Some(n)) = (&self.data_pos, &self.data_neg) else {
            bail!("--data-pos and --data-neg are required for the exact field");
        };
        let pos = load_csv(p)?;
        let neg = load_csv(n)?;
        pos.ensure_dim(cfg.dim_d)?;
        neg.ensure_dim(cfg.dim_d)?;
        Ok((pos, neg, vec![p.clone(), n.clone()]))
    }

    fn field(&self, cfg: &CapacitorConfig) -> Result<(EmpiricalField, Vec<PathBuf>)> {
        let (pos, neg, inputs) = self.load(cfg)?;
        Ok((capacitor_field(cfg, &pos, &neg)?, inputs))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[command(flatten)]
    plates: PlateArgs,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    activation: Option<ActivationArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ActivationArg {
    Tanh,
    SmoothRelu,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Practical,
    Theoretical,
}

#[derive(Args)]
struct TransportArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Weight file of a trained network.
    #[arg(long, conflicts_with = "exact_field", required_unless_present = "exact_field")]
    weights: Option<PathBuf>,
    /// Use the exact field of the plates given by --data-pos/--data-neg.
    #[arg(long)]
    exact_field: bool,
    #[command(flatten)]
    plates: PlateArgs,
    #[arg(long, value_enum, default_value = "practical")]
    policy: PolicyArg,
    #[arg(long, default_value_t = 20)]
    nfe: usize,
    /// Source points on the positive plate.
    #[arg(long = "in")]
    input: PathBuf,
    /// Mapped points CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dump_trajectories: Option<PathBuf>,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[command(flatten)]
    plates: PlateArgs,
    /// Start points; lines leave the positive plate at these coordinates.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 20_000)]
    max_steps: usize,
    /// Trajectory CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[command(flatten)]
    plates: PlateArgs,
    #[arg(long, default_value_t = 4.0)]
    half_width: f64,
    #[arg(long, default_value_t = 21)]
    nx: usize,
    #[arg(long, default_value_t = 13)]
    nz: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PhysicsArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Directory for physics_report.json and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Permutations for the null quantiles; 0 skips them.
    #[arg(long, default_value_t = 0)]
    n_perm: usize,
    /// Use sliced W1 with this many projections instead of energy distance.
    #[arg(long)]
    sliced: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PresetArgs {
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESET_NAMES))]
    name: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    volume_mode: Option<VolumeArg>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum VolumeArg {
    Interpolant,
    CubeMesh,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("EFM_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().with_context(|| format!("EFM_THREADS={v:?} is not a thread count"))?;
    if n == 0 {
        bail!("EFM_THREADS must be ≥ 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenerateData(a) => generate(a),
        Command::Train(a) => train_cmd(a),
        Command::Transport(a) => transport(a),
        Command::TraceLines(a) => trace_lines(a),
        Command::FieldGrid(a) => field_grid(a),
        Command::VerifyPhysics(a) => verify_physics(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Preset(a) => preset(a),
    }
}

/// Manifest path for a command whose main output is a single file.
fn sibling_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let t0 = Instant::now();
    let mut s = seeded_stream(a.seed, "generate");
    let ds = match a.kind {
        DataKind::Gaussian => gen_gaussian(a.n, a.dim, &vec![0.0; a.dim], &vec![1.0; a.dim], &mut s)?,
        DataKind::SwissRoll => gen_swiss_roll(a.n, a.noise_std, &mut s)?,
        DataKind::TwoGaussians => gen_two_gaussians(a.n, a.dim, a.separation, &mut s)?,
    };
    create_parent(&a.out)?;
    save_csv(&ds, &a.out)?;
    let config = serde_json::json!({
        "kind": ds.label, "n": a.n, "dim": ds.dim(), "noise_std": a.noise_std, "separation": a.separation,
    });
    RunManifest::new("generate-data", config, a.seed, &[], &[a.out.clone()], t0.elapsed().as_secs_f64())?
        .write(&sibling_manifest(&a.out))?;
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let t0 = Instant::now();
    let cfg = a.cfg.load()?;
    let (pos, neg, mut inputs) = a.plates.load(&cfg)?;
    let mut spec = TrainSpec::default();
    if let Some(n) = a.steps {
        spec.n_steps = n;
    }
    if let Some(b) = a.batch_size {
        spec.batch_size = b;
    }
    if let Some(lr) = a.lr {
        spec.learning_rate = lr;
    }
    if let Some(h) = a.hidden {
        spec.hidden = h;
    }
    if let Some(act) = a.activation {
        spec.activation = match act {
            ActivationArg::Tanh => Activation::Tanh,
            ActivationArg::SmoothRelu => Activation::SmoothRelu,
        };
    }
    let outcome = train(&cfg, &pos, &neg, &spec)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let weights = a.out.join("weights.json");
    let ema = a.out.join("weights_ema.json");
    let curve = a.out.join("loss_curve.csv");
    save_weights(&outcome.net, cfg.seed, &weights)?;
    save_weights(&outcome.ema_net, cfg.seed, &ema)?;
    write_loss_curve(&outcome.loss_curve, &curve)?;
    inputs.insert(0, a.cfg.config.clone());
    let config = serde_json::json!({ "capacitor": cfg, "train": spec });
    RunManifest::new("train", config, cfg.seed, &inputs, &[weights, ema, curve], t0.elapsed().as_secs_f64())?
        .write(&a.out.join("manifest.json"))?;
    Ok(())
}

fn transport(a: TransportArgs) -> Result<()> {
    let t0 = Instant::now();
    let cfg = a.cfg.load()?;
    let points = load_csv(&a.input)?;
    let mut inputs = vec![a.cfg.config.clone(), a.input.clone()];
    let policy = match a.policy {
        PolicyArg::Practical => TransportPolicy::practical(cfg.plate_gap, a.nfe),
        PolicyArg::Theoretical => TransportPolicy::theoretical(),
    };
    let field;
    let net;
    let backend = if a.exact_field {
        let (f, files) = a.plates.field(&cfg)?;
        inputs.extend(files);
        field = f;
        Backend::Exact(&field)
    } else {
        let path = a.weights.as_ref().expect("clap requires weights or exact_field");
        net = load_net(path, &cfg)?;
        inputs.push(path.clone());
        if a.policy == PolicyArg::Theoretical {
            bail!("--policy theoretical needs --exact-field");
        }
        Backend::Network(&net)
    };
    let outcome = map_batch(&points, backend, &policy, cfg.limit_epsilon, cfg.seed)?;
    if !outcome.failures.is_empty() {
        log::warn!("{} of {} lines failed to reach the target plate", outcome.failures.len(), points.len());
    }
    create_parent(&a.out)?;
    save_csv(&outcome.mapped_dataset("mapped")?, &a.out)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(p) = &a.dump_trajectories {
        create_parent(p)?;
        write_trajectories(&outcome.trajectories, cfg.dim_d, p)?;
        outputs.push(p.clone());
    }
    let config = serde_json::json!({ "capacitor": cfg, "policy": policy });
    RunManifest::new("transport", config, cfg.seed, &inputs, &outputs, t0.elapsed().as_secs_f64())?
        .write(&sibling_manifest(&a.out))?;
    Ok(())
}

fn load_net(path: &Path, cfg: &CapacitorConfig) -> Result<FieldApproximator> {
    let net = load_weights(path)?;
    if net.input_dim() != cfg.ambient_dim() {
        bail!(
            "{}: network takes {} inputs but the config has D + 1 = {}",
            path.display(),
            net.input_dim(),
            cfg.ambient_dim()
        );
    }
    Ok(net)
}

/// Network weights when given, else the exact field of the plates.
fn pick_field(
    cfg: &CapacitorConfig,
    weights: &Option<PathBuf>,
    plates: &PlateArgs,
) -> Result<(Box<dyn VectorField>, Vec<PathBuf>)> {
    match weights {
        Some(w) => Ok((Box::new(load_net(w, cfg)?), vec![w.clone()])),
        None => {
            let (f, files) = plates.field(cfg)?;
            Ok((Box::new(f), files))
        }
    }
}

fn trace_lines(a: TraceArgs) -> Result<()> {
    let t0 = Instant::now();
    let cfg = a.cfg.load()?;
    let starts = load_csv(&a.input)?;
    starts.ensure_dim(cfg.dim_d)?;
    let (field, files) = pick_field(&cfg, &a.weights, &a.plates)?;
    let mut controls = TracerControls::new(cfg.plate_gap, cfg.limit_epsilon);
    controls.max_steps = a.max_steps;
    let mut trajectories: Vec<Trajectory> = Vec::with_capacity(starts.len());
    for x in starts.points() {
        let start = ExtendedPoint::new(x, cfg.limit_epsilon);
        let mut stop_on_target = |c: &efm_core::transport::CrossingContext| {
            if c.plate_z == cfg.plate_gap {
                CrossingAction::stop()
            } else {
                CrossingAction::pass()
            }
        };
        trajectories.push(trace_line_t(&start, field.as_ref(), &controls, &mut stop_on_target)?);
    }
    let failed = trajectories.iter().filter(|t| t.termination != Termination::ReachedTargetPlate).count();
    if failed > 0 {
        log::warn!("{failed} of {} lines did not reach the target plate", trajectories.len());
    }
    create_parent(&a.out)?;
    write_trajectories(&trajectories, cfg.dim_d, &a.out)?;
    let mut inputs = vec![a.cfg.config.clone(), a.input.clone()];
    inputs.extend(files);
    let config = serde_json::json!({ "capacitor": cfg, "max_steps": controls.max_steps, "rtol": controls.rtol, "atol": controls.atol });
    RunManifest::new("trace-lines", config, cfg.seed, &inputs, &[a.out.clone()], t0.elapsed().as_secs_f64())?
        .write(&sibling_manifest(&a.out))?;
    Ok(())
}

fn field_grid(a: GridArgs) -> Result<()> {
    let t0 = Instant::now();
    let cfg = a.cfg.load()?;
    let (field, files) = pick_field(&cfg, &a.weights, &a.plates)?;
    let grid = evaluation_grid(cfg.dim_d, a.half_width, a.nx, 0.0, cfg.plate_gap, a.nz);
    let d = cfg.dim_d;
    let mut w = csv::Writer::from_path(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut header: Vec<String> = (1..=d).map(|k| format!("x_{k}")).collect();
    header.push("z".into());
    header.extend((1..=d).map(|k| format!("e_{k}")));
    header.push("e_z".into());
    header.push("norm".into());
    w.write_record(&header)?;
    let mut out = vec![0.0; d + 1];
    for p in &grid {
        field.field_into(p.as_slice(), &mut out);
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        let row: Vec<String> = p.as_slice().iter().chain(&out).chain([norm].iter()).map(|v| format!("{v:?}")).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    let mut inputs = vec![a.cfg.config.clone()];
    inputs.extend(files);
    let config = serde_json::json!({ "capacitor": cfg, "half_width": a.half_width, "nx": a.nx, "nz": a.nz });
    RunManifest::new("field-grid", config, cfg.seed, &inputs, &[a.out.clone()], t0.elapsed().as_secs_f64())?
        .write(&sibling_manifest(&a.out))?;
    Ok(())
}

fn verify_physics(a: PhysicsArgs) -> Result<()> {
    let t0 = Instant::now();
    let cfg = a.cfg.load()?;
    let report = run_physics_suite(&cfg, cfg.seed)?;
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("physics_report.json");
        std::fs::write(&path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))?;
        RunManifest::new(
            "verify-physics",
            serde_json::to_value(&cfg)?,
            cfg.seed,
            &[a.cfg.config.clone()],
            &[path],
            t0.elapsed().as_secs_f64(),
        )?
        .write(&dir.join("manifest.json"))?;
    }
    let failed: Vec<&str> = report.iter().filter(|c| !c.pass).map(|c| c.check_name.as_str()).collect();
    if !failed.is_empty() {
        bail!("physics checks failed: {}", failed.join(", "));
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let t0 = Instant::now();
    let x = load_csv(&a.a)?;
    let y = load_csv(&a.b)?;
    let mut s = seeded_stream(a.seed, "evaluate");
    let report = match (a.sliced, a.n_perm) {
        (Some(k), _) => sliced_w1(&x, &y, k, &mut s)?,
        (None, 0) => energy_distance(&x, &y)?,
        (None, n) => energy_distance_test(&x, &y, n, &mut s)?,
    };
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(out) = &a.out {
        create_parent(out)?;
        std::fs::write(out, format!("{text}\n")).with_context(|| format!("writing {}", out.display()))?;
        let config = serde_json::json!({ "n_perm": a.n_perm, "sliced": a.sliced });
        RunManifest::new("evaluate", config, a.seed, &[a.a.clone(), a.b.clone()], &[out.clone()], t0.elapsed().as_secs_f64())?
            .write(&sibling_manifest(out))?;
    }
    Ok(())
}

fn preset(a: PresetArgs) -> Result<()> {
    let overrides = PresetOverrides {
        seed: a.seed,
        volume_mode: a.volume_mode.map(|v| match v {
            VolumeArg::Interpolant => VolumeMode::Interpolant,
            VolumeArg::CubeMesh => VolumeMode::CubeMesh,
        }),
        n_steps: a.steps,
        n_eval: None,
    };
    let run = run_experiment_preset(&a.name, &overrides, &a.out)?;
    println!("{}", serde_json::to_string_pretty(&run.metrics)?);
    Ok(())
}
