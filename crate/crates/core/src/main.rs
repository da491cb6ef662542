use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;

use tetmorph::config::{optimizer_from_parts, RunConfig};
use tetmorph::diff::optim::LrSchedule;
use tetmorph::diff::Checkpoint;
use tetmorph::eval::evaluate_run;
use tetmorph::fit::{fit_motion, fit_shape, model_from_checkpoint, Canonical, ChamferMode, ModelKind, ShapeFit};
use tetmorph::gradcheck::run_gradcheck;
use tetmorph::march::marching_tetrahedra;
use tetmorph::mesh::SurfaceMesh;
use tetmorph::observe::{frame_file, generate_sequence, read_dataset, write_dataset, BaseShape, MotionKind, SequenceDataset};
use tetmorph::tetgrid::{build_uniform_grid, TetGrid};
use tetmorph::{Error, Result};

/// Fit deformable tetrahedral grids to shapes and motion sequences.
///
/// Settings come from command-line flags, then the `--config` file, then
/// built-in defaults.
#[derive(Parser, Debug)]
#[command(name = "tetmorph", version, about)]
struct Cli {
    /// Worker threads; 0 picks one per core.
    #[arg(long, global = true, env = "TETMORPH_THREADS", default_value_t = 0)]
    threads: usize,

    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Seed for generation, sampling and initialization.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic motion sequence and its observations.
    Generate(GenerateArgs),
    /// Fit a grid to a single target mesh.
    FitShape(FitShapeArgs),
    /// Fit a canonical shape and its motion to a dataset.
    FitMotion(FitMotionArgs),
    /// Score a fit-motion results directory against its dataset.
    Eval(EvalArgs),
    /// Extract the surface of a grid (optionally deformed to one frame) as OBJ.
    Export(ExportArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck,
}

#[derive(Args, Debug, Default)]
struct ObservationArgs {
    /// Observation mode: full, slices or volume.
    #[arg(long)]
    mode: Option<String>,
    /// Number of slices.
    #[arg(long)]
    k: Option<usize>,
    /// Slice placement: central, strided, or comma-separated z offsets.
    #[arg(long, allow_hyphen_values = true)]
    placement: Option<String>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Base shape: icosphere, box or capsule.
    #[arg(long)]
    base: Option<BaseShape>,
    /// Motion: translate, squash, twist or radial-pulse.
    #[arg(long)]
    motion: Option<MotionKind>,
    #[arg(long)]
    amp: Option<f64>,
    /// Motion period in frames [default: frames - 1].
    #[arg(long)]
    period: Option<f64>,
    #[arg(long)]
    frames: Option<usize>,
    #[command(flatten)]
    observation: ObservationArgs,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Default)]
struct ShapeArgs {
    /// Grid resolution (cells per axis).
    #[arg(long)]
    res: Option<usize>,
    /// Shape-fit iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Surface samples per chamfer side during the shape fit.
    #[arg(long)]
    shape_samples: Option<usize>,
    /// Radius of the initial sphere field.
    #[arg(long)]
    init_radius: Option<f64>,
    /// Shape optimizer: sgd-momentum or adam.
    #[arg(long)]
    shape_optimizer: Option<String>,
    #[arg(long)]
    shape_lr: Option<f64>,
    /// Shape learning-rate schedule: constant or cosine.
    #[arg(long, value_parser = parse_schedule)]
    shape_schedule: Option<LrSchedule>,
}

#[derive(Args, Debug, Default)]
struct WeightArgs {
    /// Chamfer weight.
    #[arg(long)]
    w_cd: Option<f64>,
    /// SDF supervision weight (shape fit).
    #[arg(long)]
    w_sdf: Option<f64>,
    /// Volume weight.
    #[arg(long)]
    w_vol: Option<f64>,
    /// Displacement regularization weight.
    #[arg(long)]
    w_reg: Option<f64>,
    /// Chamfer distance: squared or euclidean.
    #[arg(long, value_parser = parse_chamfer)]
    chamfer: Option<ChamferMode>,
}

#[derive(Args, Debug)]
struct FitShapeArgs {
    /// Target mesh (OBJ).
    #[arg(long)]
    target: PathBuf,
    #[command(flatten)]
    shape: ShapeArgs,
    #[command(flatten)]
    weights: WeightArgs,
    /// Results directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitMotionArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    dataset: PathBuf,
    /// Canonical grid; fitted to frame 0 when absent.
    #[arg(long)]
    canonical: Option<PathBuf>,
    #[command(flatten)]
    observation: ObservationArgs,
    /// Deformation model: free-offsets, mlp or gru.
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    latent: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    feature: Option<usize>,
    /// Refinement steps [default: 3 for full observations, else 2].
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Frames per optimizer step.
    #[arg(long)]
    batch_frames: Option<usize>,
    /// Surface samples per chamfer side.
    #[arg(long)]
    samples: Option<usize>,
    /// Motion optimizer: sgd-momentum or adam.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    /// Learning-rate schedule: constant or cosine.
    #[arg(long, value_parser = parse_schedule)]
    schedule: Option<LrSchedule>,
    /// Re-extract advected vertices from deformed grid edges.
    #[arg(long)]
    reextract: bool,
    #[command(flatten)]
    shape: ShapeArgs,
    #[command(flatten)]
    weights: WeightArgs,
    /// Surface samples per side for evaluation.
    #[arg(long)]
    eval_samples: Option<usize>,
    /// Results directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Results directory written by `fit-motion`.
    #[arg(long)]
    results: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    eval_samples: Option<usize>,
    #[arg(long)]
    eval_seed: Option<u64>,
    /// Where to write metrics [default: the results directory].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// Grid file.
    #[arg(long)]
    grid: PathBuf,
    /// Motion checkpoint to deform the surface with.
    #[arg(long, requires = "frame")]
    checkpoint: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    frame: Option<usize>,
    /// Output OBJ.
    #[arg(long)]
    out: PathBuf,
}

fn parse_schedule(s: &str) -> std::result::Result<LrSchedule, String> {
    match s {
        "constant" => Ok(LrSchedule::Constant),
        "cosine" => Ok(LrSchedule::Cosine),
        _ => Err(format!("unknown schedule '{s}' (constant, cosine)")),
    }
}

fn parse_chamfer(s: &str) -> std::result::Result<ChamferMode, String> {
    match s {
        "squared" => Ok(ChamferMode::Squared),
        "euclidean" => Ok(ChamferMode::Euclidean),
        _ => Err(format!("unknown chamfer mode '{s}' (squared, euclidean)")),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl ObservationArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.observation.mode, self.mode.clone());
        set(&mut c.observation.k, self.k);
        set(&mut c.observation.placement, self.placement.clone());
    }
}

impl ShapeArgs {
    fn apply(&self, c: &mut RunConfig) -> Result<()> {
        set(&mut c.grid.resolution, self.res);
        set(&mut c.grid.init_radius, self.init_radius);
        set(&mut c.shape.iterations, self.iters);
        set(&mut c.shape.samples, self.shape_samples);
        let kind = self.shape_optimizer.as_deref().unwrap_or("");
        c.shape.optimizer = optimizer_from_parts(kind, self.shape_lr, self.shape_schedule, c.shape.optimizer)?;
        Ok(())
    }
}

impl WeightArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.weights.cd, self.w_cd);
        set(&mut c.weights.sdf, self.w_sdf);
        set(&mut c.weights.vol, self.w_vol);
        set(&mut c.weights.reg, self.w_reg);
        if let Some(m) = self.chamfer {
            c.shape.chamfer = m;
            c.motion.chamfer = m;
        }
    }
}

fn base_config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(path) => {
            if !path.is_file() {
                return Err(Error::invalid(format!("config file {} not found", path.display())));
            }
            RunConfig::load(path)?
        }
        None => RunConfig::default(),
    };
    set(&mut c.seed, cli.seed);
    Ok(c)
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        return Err(Error::invalid(format!("{what} directory {} not found", path.display())));
    }
    Ok(())
}

fn initial_grid(c: &RunConfig) -> Result<TetGrid> {
    let r = c.grid.init_radius;
    build_uniform_grid(c.grid.resolution)?.set_sdf_from_field(|p| p.norm() - r)
}

fn run_shape_fit(c: &RunConfig, target: &SurfaceMesh, out: &Path, trace_name: &str) -> Result<ShapeFit> {
    let start = Instant::now();
    let fit = fit_shape(&initial_grid(c)?, target, &c.shape_config())?;
    info!("shape fit: {} iterations in {:.1?}, best at {}", fit.trace.len(), start.elapsed(), fit.best_iteration);
    let mut csv = String::from("iteration,loss,chamfer,sdf_term,best\n");
    for r in &fit.trace {
        let cd = r.chamfer.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{},{},{},{},{}", r.iteration, r.loss, cd, r.sdf_term, r.best);
    }
    fs::write(out.join(trace_name), csv)?;
    fit.grid.save(&out.join("grid.bin"))?;
    Ok(fit)
}

fn cmd_generate(cli: &Cli, args: &GenerateArgs) -> Result<()> {
    let mut c = base_config(cli)?;
    set(&mut c.dataset.base, args.base);
    set(&mut c.dataset.motion, args.motion);
    set(&mut c.dataset.amplitude, args.amp);
    if args.period.is_some() {
        c.dataset.period = args.period;
    }
    set(&mut c.dataset.frames, args.frames);
    args.observation.apply(&mut c);
    c.validate()?;
    let data = generate_sequence(c.dataset.base, c.analytic_motion()?, c.dataset.frames, c.seed)?;
    let manifest = write_dataset(&args.out, &data, &c.observation_mode()?)?;
    println!("{}", manifest.display());
    Ok(())
}

fn cmd_fit_shape(cli: &Cli, args: &FitShapeArgs) -> Result<()> {
    let mut c = base_config(cli)?;
    args.shape.apply(&mut c)?;
    args.weights.apply(&mut c);
    c.validate()?;
    if !args.target.is_file() {
        return Err(Error::invalid(format!("target mesh {} not found", args.target.display())));
    }
    let target = SurfaceMesh::load_obj(&args.target)?;
    fs::create_dir_all(&args.out)?;
    c.save(&args.out.join("config.toml"))?;
    let fit = run_shape_fit(&c, &target, &args.out, "loss.csv")?;
    let surface = marching_tetrahedra(&fit.grid)?;
    surface.save_obj(&args.out.join("surface.obj"))?;
    let best = &fit.trace[fit.best_iteration];
    println!(
        "best iteration {} loss {:.6e} chamfer {}",
        best.iteration,
        best.loss,
        best.chamfer.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "n/a".into())
    );
    Ok(())
}

fn cmd_fit_motion(cli: &Cli, args: &FitMotionArgs) -> Result<()> {
    let mut c = base_config(cli)?;
    args.observation.apply(&mut c);
    set(&mut c.motion.model, args.model);
    set(&mut c.motion.latent, args.latent);
    set(&mut c.motion.hidden, args.hidden);
    set(&mut c.motion.feature, args.feature);
    if args.steps.is_some() {
        c.motion.steps = args.steps;
    }
    set(&mut c.motion.epochs, args.epochs);
    set(&mut c.motion.batch_frames, args.batch_frames);
    set(&mut c.motion.samples, args.samples);
    let kind = args.optimizer.as_deref().unwrap_or("");
    c.motion.optimizer = optimizer_from_parts(kind, args.lr, args.schedule, c.motion.optimizer)?;
    c.motion.reextract |= args.reextract;
    args.shape.apply(&mut c)?;
    args.weights.apply(&mut c);
    set(&mut c.eval.samples, args.eval_samples);
    c.validate()?;

    require_dir(&args.dataset, "dataset")?;
    let data = read_dataset(&args.dataset)?;
    c.dataset.base = data.base;
    c.dataset.motion = data.motion.kind;
    c.dataset.amplitude = data.motion.amplitude;
    c.dataset.period = Some(data.motion.period);
    c.dataset.frames = data.frame_count();
    fs::create_dir_all(&args.out)?;
    c.save(&args.out.join("config.toml"))?;

    let grid = match &args.canonical {
        Some(path) => {
            let g = TetGrid::load(path)?;
            g.save(&args.out.join("grid.bin"))?;
            g
        }
        None => run_shape_fit(&c, &data.frames[0], &args.out, "shape_loss.csv")?.grid,
    };
    // Observations are rebuilt from the ground-truth frames so any mode can
    // be fitted against any dataset.
    let observations = data.observations(&c.observation_mode()?)?;
    let motion_config = c.motion_config()?;
    let start = Instant::now();
    let fit = fit_motion(&grid, &observations, &motion_config)?;
    info!("motion fit: {} steps in {:.1?}", motion_config.total_steps(observations.len()), start.elapsed());

    let mut csv = String::from("step,frame,loss\n");
    for r in &fit.trace {
        let _ = writeln!(csv, "{},{},{}", r.step, r.frame, r.loss);
    }
    fs::write(args.out.join("loss.csv"), csv)?;
    let mut csv = String::from("frame,loss\n");
    for (t, l) in fit.final_losses.iter().enumerate() {
        let _ = writeln!(csv, "{t},{l}");
    }
    fs::write(args.out.join("frame_loss.csv"), csv)?;
    fit.checkpoint()?.save(&args.out.join("model.tmck"))?;

    fit.canonical.surface.save_obj(&args.out.join("canonical.obj"))?;
    let predicted = (0..data.frame_count()).map(|t| fit.frame_surface(t)).collect::<Result<Vec<_>>>()?;
    for (t, m) in predicted.iter().enumerate() {
        m.save_obj(&args.out.join(pred_file(t)))?;
    }
    let report = evaluate_run(&predicted, &fit.canonical.surface, &data, &c.eval, c.to_json())?;
    report.save(&args.out)?;
    println!("{}", report.summary_table());
    Ok(())
}

fn pred_file(t: usize) -> String {
    format!("pred_{}", frame_file(t).trim_start_matches("frame_"))
}

fn load_predictions(dir: &Path, data: &SequenceDataset) -> Result<(SurfaceMesh, Vec<SurfaceMesh>)> {
    let canonical = dir.join("canonical.obj");
    if !canonical.is_file() {
        return Err(Error::invalid(format!("{} not found", canonical.display())));
    }
    let canonical = SurfaceMesh::load_obj(&canonical)?;
    let mut frames = Vec::with_capacity(data.frame_count());
    for t in 0..data.frame_count() {
        let path = dir.join(pred_file(t));
        if !path.is_file() {
            return Err(Error::invalid(format!("missing predicted frame {}", path.display())));
        }
        frames.push(SurfaceMesh::load_obj(&path)?);
    }
    if dir.join(pred_file(data.frame_count())).exists() {
        return Err(Error::invalid(format!("results hold more frames than the {}-frame dataset", data.frame_count())));
    }
    Ok((canonical, frames))
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    require_dir(&args.results, "results")?;
    require_dir(&args.dataset, "dataset")?;
    let mut c = match &cli.config {
        Some(_) => base_config(cli)?,
        None => {
            let saved = args.results.join("config.toml");
            let mut c = if saved.is_file() { RunConfig::load(&saved)? } else { RunConfig::default() };
            set(&mut c.seed, cli.seed);
            c
        }
    };
    set(&mut c.eval.samples, args.eval_samples);
    set(&mut c.eval.seed, args.eval_seed);
    c.validate()?;
    let data = read_dataset(&args.dataset)?;
    let (canonical, predicted) = load_predictions(&args.results, &data)?;
    let report = evaluate_run(&predicted, &canonical, &data, &c.eval, c.to_json())?;
    let out = args.out.as_deref().unwrap_or(&args.results);
    fs::create_dir_all(out)?;
    report.save(out)?;
    println!("{}", report.summary_table());
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> Result<()> {
    let grid = TetGrid::load(&args.grid)?;
    let mesh = match (&args.checkpoint, args.frame) {
        (Some(path), Some(frame)) => {
            let ck = Checkpoint::load(path)?;
            let model = model_from_checkpoint(&ck)?;
            let canonical = Canonical::new(&grid)?;
            let reextract = ck.meta.get("reextract").is_some_and(|v| v == "true");
            let moved = model.forward(frame, &canonical.rest, &canonical.neighbors)?;
            canonical.mesh_with(canonical.advect(&moved, reextract))
        }
        _ => marching_tetrahedra(&grid)?,
    };
    mesh.save_obj(&args.out)?;
    println!("{} vertices, {} triangles -> {}", mesh.vertex_count(), mesh.triangle_count(), args.out.display());
    Ok(())
}

fn cmd_gradcheck(cli: &Cli) -> Result<()> {
    let c = base_config(cli)?;
    let report = run_gradcheck(c.seed)?;
    println!("{report}");
    if !report.passed() {
        return Err(Error::numeric("gradient check exceeded its tolerance"));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    match &cli.command {
        Command::Generate(a) => cmd_generate(cli, a),
        Command::FitShape(a) => cmd_fit_shape(cli, a),
        Command::FitMotion(a) => cmd_fit_motion(cli, a),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Export(a) => cmd_export(a),
        Command::Gradcheck => cmd_gradcheck(cli),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
