use std::fs;
use std::process::Command;
use std::time::Instant;

use mimo_nerf::config::{TrainConfig, Variant};
use mimo_nerf::dataset::{self, StoredDataset};
use mimo_nerf::evalkit::evaluate;
use mimo_nerf::trainer::{train, TrainOptions, TrainOutcome};
use mimo_nerf_core::grouping::GroupingMode;
use mimo_nerf_core::pipeline::CompositeStats;
use mimo_nerf_core::scene::{builtin_scene, CameraMode, Split, ORACLE_QUADRATURE};

use crate::Verdict;

const SCENE: &str = "spheres3";
const VIEWS: usize = 20;
const RESOLUTION: u32 = 64;
const ITERS: u64 = 20_000;
const BATCH_RAYS: usize = 16;
const GROUP: usize = 4;
const SEEDS: [u64; 3] = [0, 1, 2];

const SELF_MARGIN_DB: f64 = 0.3;
const GROUPING_MARGIN_DB: f64 = 0.5;
const BUDGET_MINUTES: f64 = 60.0;
const MIN_SPEEDUP: f64 = 1.3;
const TIMING_PASSES: usize = 5;

struct Run {
    outcome: TrainOutcome,
    test_psnr: f64,
    seconds: f64,
}

pub struct Experiments {
    teacher: Run,
    naive: Vec<Run>,
    self_supervised: Vec<Run>,
    distill: Vec<Run>,
    random: Vec<Run>,
    no_consistency: Vec<Run>,
    speed: (f64, f64),
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn config(variant: Variant, n_p: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        scene: SCENE.into(),
        views: VIEWS,
        resolution: RESOLUTION,
        n_p,
        iters: ITERS,
        batch_rays: BATCH_RAYS,
        seed,
        variant,
        ..TrainConfig::default()
    }
}

fn run(label: &str, cfg: &TrainConfig, data: &StoredDataset, teacher: Option<&TrainOutcome>) -> Run {
    let start = Instant::now();
    let teacher = teacher.map(|t| &t.checkpoint);
    let outcome = single_thread(|| train(cfg, data, teacher, &TrainOptions::default())).unwrap();
    assert!(outcome.diverged.is_none(), "{label} diverged: {:?}", outcome.diverged);
    let (report, _) = single_thread(|| {
        evaluate(
            &outcome.checkpoint.nets,
            &data.dataset,
            Split::Test,
            &cfg.render_settings(),
            1,
            label,
        )
    })
    .unwrap();
    let seconds = start.elapsed().as_secs_f64();
    eprintln!("  {label:<22} test psnr {:>6.2} dB  {seconds:>6.0} s", report.mean_psnr);
    Run {
        outcome,
        test_psnr: report.mean_psnr,
        seconds,
    }
}

fn mean_psnr(runs: &[Run]) -> f64 {
    runs.iter().map(|r| r.test_psnr).sum::<f64>() / runs.len() as f64
}

fn listing(runs: &[Run]) -> String {
    runs.iter().map(|r| format!("{:.2}", r.test_psnr)).collect::<Vec<_>>().join("/")
}

pub fn experiments() -> Experiments {
    let scene = builtin_scene(SCENE).unwrap();
    let data = StoredDataset {
        scene: SCENE.into(),
        dataset: single_thread(|| dataset::generate(&scene, CameraMode::Orbit, VIEWS, RESOLUTION, 0, ORACLE_QUADRATURE)).unwrap(),
    };
    eprintln!("training runs, {ITERS} iterations of {BATCH_RAYS} rays each:");
    let teacher = run("teacher n_p=1", &config(Variant::Naive, 1, 0), &data, None);
    let store = tempfile::tempdir().unwrap();
    let teacher_path = store.path().join("teacher.bin");
    teacher.outcome.checkpoint.save(&teacher_path).unwrap();
    let mut naive = Vec::new();
    let mut self_supervised = Vec::new();
    let mut distill = Vec::new();
    let mut random = Vec::new();
    let mut no_consistency = Vec::new();
    for seed in SEEDS {
        naive.push(run(
            &format!("naive seed {seed}"),
            &config(Variant::Naive, GROUP, seed),
            &data,
            None,
        ));
        self_supervised.push(run(
            &format!("self seed {seed}"),
            &config(Variant::SelfSupervised, GROUP, seed),
            &data,
            None,
        ));
        let cfg = TrainConfig {
            teacher: Some(teacher_path.clone()),
            ..config(Variant::Distill, GROUP, seed)
        };
        distill.push(run(&format!("distill seed {seed}"), &cfg, &data, Some(&teacher.outcome)));
        let cfg = TrainConfig {
            grouping: GroupingMode::Random,
            ..config(Variant::Naive, GROUP, seed)
        };
        random.push(run(&format!("naive random seed {seed}"), &cfg, &data, None));
        let cfg = TrainConfig {
            lambda: Some(0.0),
            ..config(Variant::SelfSupervised, GROUP, seed)
        };
        no_consistency.push(run(&format!("self lambda=0 seed {seed}"), &cfg, &data, None));
    }

    let time = |outcome: &TrainOutcome| {
        let cfg = &outcome.checkpoint.config;
        let (report, _) = single_thread(|| {
            evaluate(
                &outcome.checkpoint.nets,
                &data.dataset,
                Split::Test,
                &cfg.render_settings(),
                TIMING_PASSES,
                "timing",
            )
        })
        .unwrap();
        report.seconds_per_image
    };
    let speed = (time(&teacher.outcome), time(&naive[0].outcome));

    Experiments {
        teacher,
        naive,
        self_supervised,
        distill,
        random,
        no_consistency,
        speed,
    }
}

impl Experiments {
    fn all(&self) -> impl Iterator<Item = &Run> {
        std::iter::once(&self.teacher)
            .chain(&self.naive)
            .chain(&self.self_supervised)
            .chain(&self.distill)
            .chain(&self.random)
            .chain(&self.no_consistency)
    }

    pub fn compositing(&self) -> Verdict {
        let mut stats = CompositeStats::default();
        let mut runs = 0;
        for r in self.all() {
            stats.merge(&r.outcome.stats);
            runs += 1;
        }
        let violations = stats.weight_violations + stats.alpha_violations;
        Verdict::new(
            violations == 0 && stats.composites > 0,
            format!(
                "{violations} violations in {} composited rays over {runs} runs, largest weight sum {}",
                stats.composites, stats.max_weight_sum
            ),
        )
    }

    pub fn variant_ordering(&self) -> Verdict {
        let (naive, selfs, distill) = (mean_psnr(&self.naive), mean_psnr(&self.self_supervised), mean_psnr(&self.distill));
        let seconds: f64 = std::iter::once(&self.teacher)
            .chain(&self.naive)
            .chain(&self.self_supervised)
            .chain(&self.distill)
            .map(|r| r.seconds)
            .sum();
        let minutes = seconds / 60.0;
        Verdict::new(
            selfs - naive >= SELF_MARGIN_DB && distill > naive && minutes <= BUDGET_MINUTES,
            format!(
                "mean test psnr naive {naive:.2} ({}), self {selfs:.2} ({}), distill {distill:.2} ({}); \
                 self - naive = {:+.2} dB (>= {SELF_MARGIN_DB}), distill - naive = {:+.2} dB (> 0); \
                 {minutes:.1} CPU-minutes including the teacher (<= {BUDGET_MINUTES})",
                listing(&self.naive),
                listing(&self.self_supervised),
                listing(&self.distill),
                selfs - naive,
                distill - naive,
            ),
        )
    }

    pub fn grouping(&self) -> Verdict {
        let (neighbor, random) = (mean_psnr(&self.naive), mean_psnr(&self.random));
        Verdict::new(
            neighbor - random >= GROUPING_MARGIN_DB,
            format!(
                "naive variant, neighbor {neighbor:.2} dB vs random {random:.2} dB ({}), margin {:+.2} dB (>= {GROUPING_MARGIN_DB})",
                listing(&self.random),
                neighbor - random
            ),
        )
    }

    pub fn speedup(&self) -> Verdict {
        let (one, four) = self.speed;
        let ratio = one / four;
        Verdict::new(
            ratio >= MIN_SPEEDUP,
            format!(
                "{RESOLUTION}x{RESOLUTION} image on one thread, n_p=1 {:.1} ms vs n_p=4 {:.1} ms, {ratio:.2}x (>= {MIN_SPEEDUP}x)",
                1e3 * one,
                1e3 * four
            ),
        )
    }

    pub fn ablation(&self) -> Verdict {
        let (with, without) = (mean_psnr(&self.self_supervised), mean_psnr(&self.no_consistency));
        Verdict::new(
            without < with,
            format!(
                "self variant, lambda=0 {without:.2} dB ({}) vs default lambda {with:.2} dB, difference {:+.2} dB (< 0)",
                listing(&self.no_consistency),
                without - with
            ),
        )
    }
}

const TINY: &str = "\
scene = box_sphere
views = 6
resolution = 16
n_coarse = 16
n_fine = 16
n_p = 4
variant = self
iters = 40
batch_rays = 48
width = 32
depth = 3
seed = 9
";

/// Trains the same configuration twice through the binary with `--threads 1`
/// and compares every deterministic output byte for byte.
pub fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, TINY).unwrap();
    for name in ["a", "b"] {
        let status = Command::new(env!("CARGO_BIN_EXE_mimo-nerf"))
            .args(["--threads", "1", "train", "--quiet", "--eval-every", "20", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join(name))
            .status()
            .unwrap();
        if !status.success() {
            return Verdict::new(false, format!("training exited with {status}"));
        }
    }
    let files = ["checkpoint.bin", "metrics.csv", "eval.csv", "train.log"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| fs::read(dir.path().join("a").join(f)).unwrap() != fs::read(dir.path().join("b").join(f)).unwrap())
        .collect();
    Verdict::new(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} identical across two runs", files.join(", "))
        } else {
            format!("{} differ", differing.join(", "))
        },
    )
}
