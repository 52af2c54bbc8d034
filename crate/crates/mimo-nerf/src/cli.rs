//! Command-line front end. Exit status: 0 success, 2 usage, 3 I/O or file
//! format, 4 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mimo_nerf_core::render::Camera;
use mimo_nerf_core::scene::{builtin_scene, dataset_cameras, orbit_path, CameraMode, Split, BUILTIN_SCENES, ORACLE_QUADRATURE};

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::dataset::{self, StoredDataset};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, images_csv, render_image, summary_csv, summary_table, EvalReport};
use crate::trainer::{self, TrainOptions};

#[derive(Debug, Parser)]
#[command(name = "mimo-nerf", version, about = "Group-wise neural radiance fields on procedural scenes")]
pub struct Cli {
    /// Worker threads (default: all cores). `--threads 1` is bit-reproducible.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a procedural scene into a dataset directory.
    GenData(GenDataArgs),
    /// Train from a config file.
    Train(TrainArgs),
    /// Render test poses or an orbit from a checkpoint.
    Render(RenderArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Compare checkpoints with different group sizes.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Orbit,
    Forward,
}

impl From<ModeArg> for CameraMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Orbit => CameraMode::Orbit,
            ModeArg::Forward => CameraMode::ForwardFacing,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub scene: String,
    #[arg(long, default_value_t = 20)]
    pub views: usize,
    #[arg(long, default_value_t = 64)]
    pub res: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Orbit)]
    pub camera_mode: ModeArg,
    /// Oracle quadrature cells per ray.
    #[arg(long, default_value_t = ORACLE_QUADRATURE)]
    pub quadrature: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `out_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Evaluate on the test split every N iterations (0 disables).
    #[arg(long, default_value_t = 2000)]
    pub eval_every: u64,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ImageFormatArg {
    Ppm,
    Png,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset view to render (default: every test view).
    #[arg(long, conflicts_with = "orbit")]
    pub pose_index: Option<usize>,
    /// Render N views on a circle around the scene instead.
    #[arg(long)]
    pub orbit: Option<usize>,
    /// Dataset providing the poses (default: the checkpoint's own scene).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ImageFormatArg::Ppm)]
    pub format: ImageFormatArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Full renders timed; the median is reported.
    #[arg(long, default_value_t = 3)]
    pub timing_runs: usize,
    /// Also write the summary and per-image rows as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Checkpoints to compare (one per group size).
    #[arg(long, num_args = 1.., required = true)]
    pub ckpt: Vec<PathBuf>,
    /// Group sizes to report, e.g. `1,2,4,8`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub np: Vec<usize>,
    /// Dataset to score on (default: the first checkpoint's scene).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub timing_runs: usize,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit status.
pub fn run_from_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Usage("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Render(a) => render(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
    })
}

fn unknown_scene(name: &str) -> Error {
    Error::Usage(format!(
        "unknown scene `{name}`; built-in scenes: {} (or pass a dataset directory)",
        BUILTIN_SCENES.join(", ")
    ))
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let scene = builtin_scene(&a.scene).map_err(|_| unknown_scene(&a.scene))?;
    let data = StoredDataset {
        scene: a.scene.clone(),
        dataset: dataset::generate(&scene, a.camera_mode.into(), a.views, a.res, a.seed, a.quadrature)?,
    };
    dataset::save(&a.out, &data)?;
    println!("wrote {} views of `{}` to {}", a.views, a.scene, a.out.display());
    Ok(())
}

/// The config's `scene`: a dataset directory, or a built-in scene rendered on
/// the fly with the config's views, resolution, seed and camera mode.
pub fn resolve_dataset(config: &TrainConfig) -> Result<StoredDataset> {
    let path = Path::new(&config.scene);
    if dataset::is_dataset_dir(path) {
        return dataset::load(path);
    }
    let scene = builtin_scene(&config.scene).map_err(|_| unknown_scene(&config.scene))?;
    Ok(StoredDataset {
        scene: config.scene.clone(),
        dataset: dataset::generate(
            &scene,
            config.camera_mode,
            config.views,
            config.resolution,
            config.seed,
            ORACLE_QUADRATURE,
        )?,
    })
}

fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg = TrainConfig::from_text(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

fn train(a: TrainArgs) -> Result<()> {
    let mut config = read_config(&a.config)?;
    if let Some(out) = a.out {
        config.out_dir = out;
    }
    let teacher = match &config.teacher {
        Some(p) if config.variant == crate::config::Variant::Distill => Some(Checkpoint::load(p)?),
        _ => None,
    };
    let data = resolve_dataset(&config)?;
    let options = TrainOptions {
        eval_every: a.eval_every,
        progress: !a.quiet,
    };
    let outcome = trainer::train(&config, &data, teacher.as_ref(), &options)?;
    trainer::write_outputs(&config.out_dir, &outcome)?;
    if let Some((iteration, reason)) = outcome.diverged {
        return Err(Error::Diverged { iteration, reason });
    }
    if !a.quiet {
        eprintln!("wrote {}", config.out_dir.join(trainer::CHECKPOINT_FILE).display());
    }
    Ok(())
}

fn dataset_for(ckpt: &Checkpoint, data: Option<&Path>) -> Result<StoredDataset> {
    match data {
        Some(d) => dataset::load(d),
        None => resolve_dataset(&ckpt.config),
    }
}

fn cameras_for(ckpt: &Checkpoint, data: Option<&Path>) -> Result<Vec<Camera>> {
    let cfg = &ckpt.config;
    match data {
        Some(d) => Ok(dataset::load(d)?.dataset.cameras),
        None if dataset::is_dataset_dir(Path::new(&cfg.scene)) => Ok(dataset::load(Path::new(&cfg.scene))?.dataset.cameras),
        None => Ok(dataset_cameras(cfg.camera_mode, cfg.views, cfg.resolution, cfg.seed)?),
    }
}

fn render(a: RenderArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let settings = ckpt.config.render_settings();
    let cameras = cameras_for(&ckpt, a.data.as_deref())?;
    let jobs: Vec<(String, Camera)> = match (a.pose_index, a.orbit) {
        (_, Some(n)) => {
            if n == 0 {
                return Err(Error::Usage("--orbit needs at least one view".into()));
            }
            let res = cameras.first().map_or(ckpt.config.resolution, |c| c.width.max(c.height));
            orbit_path(n, res, 0.35)
                .into_iter()
                .enumerate()
                .map(|(i, c)| (format!("orbit_{i:03}"), c))
                .collect()
        }
        (Some(i), None) => {
            let cam = cameras
                .get(i)
                .ok_or_else(|| Error::Usage(format!("--pose-index {i} is out of range (0..{})", cameras.len())))?;
            vec![(format!("view_{i:03}"), *cam)]
        }
        (None, None) => (0..cameras.len())
            .filter(|i| Split::of_index(*i) == Split::Test)
            .map(|i| (format!("view_{i:03}"), cameras[i]))
            .collect(),
    };
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for (k, (name, cam)) in jobs.iter().enumerate() {
        let (img, _) = render_image(&ckpt.nets, cam, &settings, k as u64)?;
        let path = match a.format {
            ImageFormatArg::Ppm => a.out.join(format!("{name}.ppm")),
            ImageFormatArg::Png => a.out.join(format!("{name}.png")),
        };
        match a.format {
            ImageFormatArg::Ppm => dataset::write_ppm(&path, &img)?,
            ImageFormatArg::Png => dataset::write_png(&path, &img)?,
        }
    }
    println!("wrote {} images to {}", jobs.len(), a.out.display());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn eval(a: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let data = dataset::load(&a.data)?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let label = a.ckpt.display().to_string();
    let (report, _) = evaluate(
        &ckpt.nets,
        &data.dataset,
        split,
        &ckpt.config.render_settings(),
        a.timing_runs,
        &label,
    )?;
    print!("{}", summary_table(std::slice::from_ref(&report)));
    if let Some(csv) = &a.csv {
        write_text(csv, &summary_csv(std::slice::from_ref(&report)))?;
        write_text(&csv.with_extension("images.csv"), &images_csv(&report))?;
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let mut loaded = Vec::new();
    for p in &a.ckpt {
        loaded.push((p.clone(), Checkpoint::load(p)?));
    }
    let absent: Vec<String> =
        a.np.iter()
            .filter(|np| !loaded.iter().any(|(_, c)| c.nets.group_size() == **np))
            .map(|np| format!("n_p={np}"))
            .collect();
    if !absent.is_empty() {
        return Err(Error::format(
            Path::new("bench"),
            format!("no checkpoint for {}", absent.join(", ")),
        ));
    }
    let data = dataset_for(&loaded[0].1, a.data.as_deref())?;
    let mut reports: Vec<EvalReport> = Vec::new();
    for np in &a.np {
        let (path, ck) = loaded.iter().find(|(_, c)| c.nets.group_size() == *np).expect("checked above");
        let label = path.display().to_string();
        let (r, _) = evaluate(
            &ck.nets,
            &data.dataset,
            Split::Test,
            &ck.config.render_settings(),
            a.timing_runs,
            &label,
        )?;
        reports.push(r);
    }
    print!("{}", summary_table(&reports));
    if let Some(csv) = &a.csv {
        write_text(csv, &summary_csv(&reports))?;
    }
    Ok(())
}
