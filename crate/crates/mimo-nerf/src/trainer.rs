//! Training loop for the naive, self-supervised and distilled variants.
//!
//! Each iteration draws `batch_rays` training pixels, splits them into
//! contiguous shards of at most [`SHARD_RAYS`] rays, runs the shards in
//! parallel and sums their gradients in shard order. Every shard has its own
//! generator derived from the seed, the iteration and the shard index, so the
//! result does not depend on the number of threads.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use mimo_nerf_core::adam::{adam_step, AdamConfig};
use mimo_nerf_core::grouping::{runs_per_ray, GroupingMode, Reformulation};
use mimo_nerf_core::metrics::psnr_from_mse;
use mimo_nerf_core::objectives::{PairWeighting, ReformulationConfig};
use mimo_nerf_core::pipeline::{run_batch, BatchOutput, BatchSpec, CompositeStats, LossBreakdown, NerfPair, Supervision};
use mimo_nerf_core::render::Ray;
use mimo_nerf_core::scene::Split;
use mimo_nerf_core::{seeded_rng, SeededRng};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::checkpoint::{Checkpoint, PairOptimizer};
use crate::config::{TrainConfig, Variant};
use crate::dataset::StoredDataset;
use crate::error::{Error, Result};
use crate::evalkit::evaluate;

/// Rays per shard. The shard split depends only on the batch size, never on
/// the thread count.
pub const SHARD_RAYS: usize = 32;

/// Stream tags mixed into the configured seed.
const INIT_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;
const SHARD_STREAM: u64 = 3;

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Render the test split every this many updates (and after the last);
    /// zero disables.
    pub eval_every: u64,
    /// Print progress to stderr.
    pub progress: bool,
}

/// Loss of the batch evaluated after `iteration` updates.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: u64,
    pub loss: LossBreakdown<f32>,
    pub train_psnr: f64,
    pub runs: u64,
    pub teacher_runs: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub iteration: u64,
    pub test_psnr: f64,
    pub test_ssim: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Last state with finite parameters.
    pub checkpoint: Checkpoint,
    pub log: Vec<IterationRecord>,
    pub evals: Vec<EvalRecord>,
    /// Cumulative wall-clock seconds after each logged iteration.
    pub seconds: Vec<f64>,
    pub stats: CompositeStats,
    pub header: String,
    /// Iteration and reason, when training stopped on a non-finite value.
    pub diverged: Option<(u64, String)>,
}

fn describe(config: &TrainConfig, reform: &ReformulationConfig, scene: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "variant={} scene={} n_p={} n_coarse={} n_fine={} batch_rays={} iters={} seed={}",
        config.variant.name(),
        scene,
        config.n_p,
        config.n_coarse,
        config.n_fine,
        config.batch_rays,
        config.iters,
        config.seed
    );
    let repeats: Vec<String> = reform.repeats().iter().map(|r| r.to_string()).collect();
    let _ = write!(s, "reformulations M={} R=({})", reform.len(), repeats.join(","));
    match config.variant {
        Variant::SelfSupervised => {
            let _ = writeln!(s, " preset={} shifts=resampled lambda={}", config.preset.name(), config.lambda());
        }
        Variant::Distill => {
            let _ = writeln!(s, " teacher lambda={}", config.lambda());
        }
        Variant::Naive => s.push('\n'),
    }
    let _ = writeln!(s, "grouping={} jitter={} lr={}", config.grouping.name(), config.jitter, config.lr);
    s
}

/// Expected student invocations for one ray under `reforms`.
pub fn expected_runs_per_ray(config: &TrainConfig, reforms: &[Reformulation]) -> usize {
    let n_all = config.n_coarse + config.n_fine;
    reforms
        .iter()
        .map(|r| {
            // Random grouping has no notion of a shift.
            let r = match config.grouping {
                GroupingMode::Random => Reformulation { shift: 0, ..*r },
                GroupingMode::Neighbor => *r,
            };
            runs_per_ray(config.n_coarse, config.n_p, r) + runs_per_ray(n_all, config.n_p, r)
        })
        .sum()
}

struct Batch {
    rays: Vec<Ray<f32>>,
    targets: Vec<[f32; 3]>,
}

fn draw_batch(data: &StoredDataset, train: &[usize], n: usize, rng: &mut SeededRng) -> Batch {
    let d = &data.dataset;
    let mut rays = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let view = train[rng.gen_range(0..train.len())];
        let cam = &d.cameras[view];
        let x = rng.gen_range(0..cam.width);
        let y = rng.gen_range(0..cam.height);
        rays.push(cam.pixel_ray(x, y));
        targets.push(d.images[view].get(x, y));
    }
    Batch { rays, targets }
}

fn shard_rng(seed: u64, iteration: u64, shard: usize) -> SeededRng {
    let mut rng = SeededRng::seed_from_u64(derive_seed(seed, SHARD_STREAM));
    rng.set_stream(iteration);
    // 2^40 words per shard, far more than one shard draws.
    rng.set_word_pos((shard as u128) << 40);
    rng
}

/// Checks a teacher checkpoint against the student configuration.
pub fn check_teacher(teacher: &Checkpoint, scene: &str) -> Result<()> {
    if teacher.nets.group_size() != 1 {
        return Err(Error::Usage(format!(
            "the teacher must be an n_p = 1 checkpoint, found n_p = {}",
            teacher.nets.group_size()
        )));
    }
    if teacher.scene != scene {
        return Err(Error::Usage(format!(
            "the teacher was trained on `{}`, the student dataset is `{scene}`",
            teacher.scene
        )));
    }
    Ok(())
}

/// Trains from scratch. On a non-finite loss or gradient the outcome holds the
/// last good state and `diverged` is set.
pub fn train(config: &TrainConfig, data: &StoredDataset, teacher: Option<&Checkpoint>, options: &TrainOptions) -> Result<TrainOutcome> {
    config.validate()?;
    data.dataset.validate()?;
    let teacher_nets = match (config.variant, teacher) {
        (Variant::Distill, Some(t)) => {
            check_teacher(t, &data.scene)?;
            Some(&t.nets)
        }
        (Variant::Distill, None) => return Err(Error::Usage("variant = distill needs a teacher checkpoint".into())),
        _ => None,
    };
    let train_views = data.dataset.indices(Split::Train);
    if train_views.is_empty() {
        return Err(Error::Usage("the dataset has no training views".into()));
    }
    let settings = config.render_settings();
    settings.validate(config.n_p)?;
    let reform = match config.variant {
        Variant::SelfSupervised => config.reformulations()?,
        Variant::Naive | Variant::Distill => ReformulationConfig::base(),
    };
    let lambda = config.lambda() as f32;
    let supervision = match teacher_nets {
        Some(t) => Supervision::Distill { teacher: t, lambda },
        None if config.variant == Variant::SelfSupervised => Supervision::Consistency {
            lambda,
            weighting: PairWeighting::Asymmetric,
        },
        None => Supervision::Pixel,
    };
    let header = describe(config, &reform, &data.scene);
    if options.progress {
        eprint!("{header}");
    }

    let mut nets: NerfPair<f32> = NerfPair::init(config.field_spec(), derive_seed(config.seed, INIT_STREAM))?;
    let mut opt = PairOptimizer::new(
        &nets,
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let mut batch_rng = seeded_rng(derive_seed(config.seed, BATCH_STREAM));
    let b = config.batch_rays;
    let shards = b.div_ceil(SHARD_RAYS);
    let loss_scale = 1.0 / b as f32;
    let teacher_runs_per_ray = (2 * config.n_coarse + config.n_fine) as u64;

    let mut log = Vec::with_capacity(config.iters as usize);
    let mut seconds = Vec::with_capacity(config.iters as usize);
    let mut evals = Vec::new();
    let mut stats = CompositeStats::default();
    let mut diverged = None;
    let start = Instant::now();
    let mut done = 0u64;

    let eval_now = |nets: &NerfPair<f32>, iteration: u64, evals: &mut Vec<EvalRecord>| -> Result<()> {
        let (r, _) = evaluate(nets, &data.dataset, Split::Test, &settings, 1, "")?;
        if options.progress {
            eprintln!("iter {iteration:>7}  test psnr {:.3}  ssim {:.4}", r.mean_psnr, r.mean_ssim);
        }
        evals.push(EvalRecord {
            iteration,
            test_psnr: r.mean_psnr,
            test_ssim: r.mean_ssim,
        });
        Ok(())
    };

    while done < config.iters {
        let reforms = reform.resolve(config.n_p, &mut batch_rng)?;
        let batch = draw_batch(data, &train_views, b, &mut batch_rng);
        let spec = BatchSpec {
            reforms: &reforms,
            supervision,
            settings: &settings,
            loss_scale,
            want_grad: true,
        };
        let outputs: Vec<mimo_nerf_core::Result<BatchOutput<f32>>> = (0..shards)
            .into_par_iter()
            .map(|s| {
                let (lo, hi) = (s * SHARD_RAYS, ((s + 1) * SHARD_RAYS).min(b));
                let mut rng = shard_rng(config.seed, done, s);
                run_batch(&nets, &batch.rays[lo..hi], &batch.targets[lo..hi], &spec, None, &mut rng)
            })
            .collect();

        let mut loss = LossBreakdown::default();
        let mut grads = nets.zero_grads();
        let (mut runs, mut teacher_runs, mut sq_err) = (0u64, 0u64, 0f64);
        for out in outputs {
            let out = out?;
            loss.add_assign(&out.loss);
            grads.add_assign(out.grads.as_ref().expect("gradients requested"));
            runs += out.runs;
            teacher_runs += out.teacher_runs;
            sq_err += out.squared_error;
            stats.merge(&out.stats);
        }
        let expected = (b * expected_runs_per_ray(config, &reforms)) as u64;
        assert_eq!(runs, expected, "invocation ledger mismatch at iteration {done}");
        if teacher_nets.is_some() {
            assert_eq!(teacher_runs, b as u64 * teacher_runs_per_ray);
        }
        log.push(IterationRecord {
            iteration: done,
            loss,
            train_psnr: psnr_from_mse(sq_err / (3 * b) as f64),
            runs,
            teacher_runs,
        });
        seconds.push(start.elapsed().as_secs_f64());

        if !loss.total.is_finite() {
            diverged = Some((done, format!("non-finite loss {}", loss.total)));
            break;
        }
        if !grads.coarse.all_finite() || !grads.fine.all_finite() {
            diverged = Some((done, "non-finite gradient".to_string()));
            break;
        }
        let mut next = nets.clone();
        let mut next_opt = opt.clone();
        adam_step(&mut next.coarse.params, &grads.coarse, &mut next_opt.coarse)?;
        adam_step(&mut next.fine.params, &grads.fine, &mut next_opt.fine)?;
        if !next.coarse.params.all_finite() || !next.fine.params.all_finite() {
            diverged = Some((done, "non-finite parameters after update".to_string()));
            break;
        }
        nets = next;
        opt = next_opt;
        done += 1;

        if options.progress && (done.is_multiple_of(500) || done == config.iters) {
            eprintln!(
                "iter {done:>7}  loss {:.5}  train psnr {:.2}  {:.1}s",
                loss.total,
                log.last().map_or(0.0, |r| r.train_psnr),
                start.elapsed().as_secs_f64()
            );
        }
        if options.eval_every > 0 && (done.is_multiple_of(options.eval_every) || done == config.iters) {
            eval_now(&nets, done, &mut evals)?;
        }
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: config.clone(),
            scene: data.scene.clone(),
            iteration: done,
            nets,
            optimizer: Some(opt),
        },
        log,
        evals,
        seconds,
        stats,
        header,
        diverged,
    })
}

pub fn metrics_csv(log: &[IterationRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "iteration",
        "loss",
        "pixel_coarse",
        "pixel_fine",
        "consistency_coarse",
        "consistency_fine",
        "train_psnr",
        "runs",
        "teacher_runs",
    ])
    .expect("in-memory write");
    for r in log {
        let l = &r.loss;
        w.write_record([
            r.iteration.to_string(),
            l.total.to_string(),
            l.pixel_coarse.to_string(),
            l.pixel_fine.to_string(),
            l.consistency_coarse.to_string(),
            l.consistency_fine.to_string(),
            r.train_psnr.to_string(),
            r.runs.to_string(),
            r.teacher_runs.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 cells")
}

pub fn evals_csv(evals: &[EvalRecord]) -> String {
    let mut s = String::from("iteration,test_psnr,test_ssim\n");
    for e in evals {
        let _ = writeln!(s, "{},{},{}", e.iteration, e.test_psnr, e.test_ssim);
    }
    s
}

pub fn timing_csv(log: &[IterationRecord], seconds: &[f64]) -> String {
    let mut s = String::from("iteration,wall_seconds\n");
    for (r, t) in log.iter().zip(seconds) {
        let _ = writeln!(s, "{},{t:.6}", r.iteration);
    }
    s
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// Writes `checkpoint.bin`, `metrics.csv`, `eval.csv`, `timing.csv` and
/// `train.log` into `dir`. Everything except `timing.csv` is a deterministic
/// function of the configuration and dataset.
pub fn write_outputs(dir: &Path, outcome: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    outcome.checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
    let write = |name: &str, text: &str| -> Result<()> {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))
    };
    write("metrics.csv", &metrics_csv(&outcome.log))?;
    write("eval.csv", &evals_csv(&outcome.evals))?;
    write("timing.csv", &timing_csv(&outcome.log, &outcome.seconds))?;
    let mut log = outcome.header.clone();
    let s = &outcome.stats;
    let _ = writeln!(
        log,
        "composites={} max_weight_sum={} weight_violations={} alpha_violations={}",
        s.composites, s.max_weight_sum, s.weight_violations, s.alpha_violations
    );
    if let Some((it, why)) = &outcome.diverged {
        let _ = writeln!(log, "diverged at iteration {it}: {why}");
    }
    write("train.log", &log)
}

/// Moving average of the total loss over `window` iterations ending at `at`.
pub fn loss_moving_average(log: &[IterationRecord], at: usize, window: usize) -> Option<f64> {
    if at >= log.len() || window == 0 || at + 1 < window {
        return None;
    }
    let slice = &log[at + 1 - window..=at];
    Some(slice.iter().map(|r| r.loss.total as f64).sum::<f64>() / window as f64)
}
