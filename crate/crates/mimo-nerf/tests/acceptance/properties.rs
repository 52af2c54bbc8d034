use std::path::Path;
use std::time::Instant;

use mimo_nerf::dataset::read_ppm;
use mimo_nerf_core::encoding::EncodingSpec;
use mimo_nerf_core::field::FieldSpec;
use mimo_nerf_core::grouping::{GroupingMode, Reformulation};
use mimo_nerf_core::image::RgbImage;
use mimo_nerf_core::metrics::{count_run, psnr, psnr_from_mse, ssim};
use mimo_nerf_core::objectives::{PairWeighting, Preset, ReformulationConfig};
use mimo_nerf_core::pipeline::{
    render_ray_siso, render_rays, run_batch, BatchOutput, BatchPlan, BatchSpec, NerfPair, RenderSettings, Supervision,
};
use mimo_nerf_core::render::{render_field_ray, Ray};
use mimo_nerf_core::scene::{builtin_scene, dataset_cameras, CameraMode, BUILTIN_SCENES};
use mimo_nerf_core::seeded_rng;
use rand::Rng;

use crate::Verdict;

const FD_PROBES: usize = 100;
const FD_STEP: f64 = 1e-5;
const FD_TOLERANCE: f64 = 1e-4;
const FD_SECONDS: f64 = 10.0;

const SISO_RAYS: usize = 1000;
const SISO_TOLERANCE: f64 = 1e-12;

const ORACLE_RAYS: usize = 500;
const ORACLE_SAMPLES: usize = 256;
const ORACLE_CELLS: usize = 100_000;
const ORACLE_RELATIVE: f64 = 0.02;
/// Floor on the reference value in the relative error, so near-black
/// channels are not judged on a vanishing denominator.
const ORACLE_FLOOR: f64 = 0.05;

const PSNR_TOLERANCE: f64 = 1e-9;
const SSIM_TOLERANCE: f64 = 1e-6;

fn settings(n_coarse: usize, n_fine: usize, jitter: bool) -> RenderSettings {
    RenderSettings {
        n_coarse,
        n_fine,
        jitter,
        grouping: GroupingMode::Neighbor,
        background: [1.0; 3],
    }
}

fn camera_rays(n: usize, res: u32, margin: f64, seed: u64) -> Vec<Ray<f64>> {
    let cams = dataset_cameras(CameraMode::Orbit, 8, res, seed).unwrap();
    let mut rng = seeded_rng(seed);
    let span = margin..res as f64 - margin;
    (0..n)
        .map(|_| {
            let c = &cams[rng.gen_range(0..cams.len())];
            c.ray_through(rng.gen_range(span.clone()), rng.gen_range(span.clone()))
        })
        .collect()
}

fn unit_gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = 1.0 - rng.gen::<f64>();
    let v: f64 = rng.gen();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

fn small_spec(g: usize) -> FieldSpec {
    FieldSpec {
        group_size: g,
        hidden_width: 16,
        depth: 3,
        skip_layers: vec![1],
        pos_encoding: EncodingSpec::new(3),
        dir_encoding: EncodingSpec::new(2),
    }
}

struct GradCase<'a> {
    name: &'static str,
    nets: NerfPair<f64>,
    reforms: Vec<Reformulation>,
    supervision: Supervision<'a, f64>,
    /// Check only the consistency terms, via the gradient difference between
    /// the given weight and zero weight.
    consistency_only: bool,
}

fn grad_eval(
    case: &GradCase,
    nets: &NerfPair<f64>,
    sup: Supervision<'_, f64>,
    plan: Option<&BatchPlan<f64>>,
    want_grad: bool,
) -> BatchOutput<f64> {
    let cam = dataset_cameras(CameraMode::Orbit, 2, 16, 3).unwrap()[0];
    let mut rng = seeded_rng(3);
    let rays: Vec<Ray<f64>> = (0..6).map(|_| cam.pixel_ray(rng.gen_range(4..12), rng.gen_range(4..12))).collect();
    let targets: Vec<[f64; 3]> = (0..6).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let st = settings(8, 8, true);
    let spec = BatchSpec {
        reforms: &case.reforms,
        supervision: sup,
        settings: &st,
        loss_scale: 1.0 / 6.0,
        want_grad,
    };
    run_batch(nets, &rays, &targets, &spec, plan, &mut seeded_rng(17)).unwrap()
}

fn without_consistency(sup: Supervision<'_, f64>) -> Supervision<'_, f64> {
    match sup {
        Supervision::Consistency { weighting, .. } => Supervision::Consistency { lambda: 0.0, weighting },
        other => other,
    }
}

fn worst_fd_error(case: &GradCase, seed: u64) -> f64 {
    let first = grad_eval(case, &case.nets, case.supervision, None, true);
    let plan = first.plan.clone();
    let grads = first.grads.unwrap();
    let scalar = |out: &BatchOutput<f64>| {
        if case.consistency_only {
            out.loss.consistency_coarse + out.loss.consistency_fine
        } else {
            out.loss.total
        }
    };
    let (gc, gf): (Vec<f64>, Vec<f64>) = if case.consistency_only {
        let zero = grad_eval(case, &case.nets, without_consistency(case.supervision), Some(&plan), true)
            .grads
            .unwrap();
        (
            grads.coarse.values().zip(zero.coarse.values()).map(|(a, b)| a - b).collect(),
            grads.fine.values().zip(zero.fine.values()).map(|(a, b)| a - b).collect(),
        )
    } else {
        (grads.coarse.values().copied().collect(), grads.fine.values().copied().collect())
    };

    let mut rng = seeded_rng(seed);
    let n_layers = case.nets.coarse.params.layers().len();
    let mut worst: f64 = 0.0;
    for _ in 0..FD_PROBES {
        let fine = rng.gen_bool(0.5);
        let layer = rng.gen_range(0..n_layers);
        let layers = if fine {
            case.nets.fine.params.layers()
        } else {
            case.nets.coarse.params.layers()
        };
        let offset: usize = layers[..layer].iter().map(|d| d.weights().len() + d.bias().len()).sum();
        let len = layers[layer].weights().len() + layers[layer].bias().len();
        let mut dir: Vec<f64> = (0..len).map(|_| unit_gaussian(&mut rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v /= norm);

        let g = if fine { &gf } else { &gc };
        let analytic: f64 = dir.iter().zip(&g[offset..offset + len]).map(|(d, g)| d * g).sum();
        let at = |h: f64| {
            let mut nets = case.nets.clone();
            let target = if fine { &mut nets.fine } else { &mut nets.coarse };
            for (v, d) in target.params.values_mut().skip(offset).zip(&dir) {
                *v += h * d;
            }
            scalar(&grad_eval(case, &nets, case.supervision, Some(&plan), false))
        };
        let numeric = (at(FD_STEP) - at(-FD_STEP)) / (2.0 * FD_STEP);
        let scale = analytic.abs().max(numeric.abs());
        if scale > 0.0 {
            worst = worst.max((analytic - numeric).abs() / scale);
        }
    }
    worst
}

pub fn gradients() -> Verdict {
    let start = Instant::now();
    let shifted = vec![
        Reformulation { shift: 1, repeat: 1 },
        Reformulation { shift: 0, repeat: 2 },
        Reformulation { shift: 1, repeat: 2 },
    ];
    let consistency = |lambda| Supervision::Consistency {
        lambda,
        weighting: PairWeighting::Asymmetric,
    };
    let teacher = NerfPair::init(small_spec(1), 40).unwrap();
    let cases = [
        GradCase {
            name: "pixel g=1",
            nets: NerfPair::init(small_spec(1), 5).unwrap(),
            reforms: vec![Reformulation::BASE],
            supervision: Supervision::Pixel,
            consistency_only: false,
        },
        GradCase {
            name: "pixel g=4",
            nets: NerfPair::init(small_spec(4), 6).unwrap(),
            reforms: vec![Reformulation::BASE],
            supervision: Supervision::Pixel,
            consistency_only: false,
        },
        GradCase {
            name: "consistency",
            nets: NerfPair::init(small_spec(4), 7).unwrap(),
            reforms: shifted.clone(),
            supervision: consistency(1.0),
            consistency_only: true,
        },
        GradCase {
            name: "self total",
            nets: NerfPair::init(small_spec(4), 8).unwrap(),
            reforms: shifted,
            supervision: consistency(0.7),
            consistency_only: false,
        },
        GradCase {
            name: "distill",
            nets: NerfPair::init(small_spec(4), 9).unwrap(),
            reforms: vec![Reformulation::BASE],
            supervision: Supervision::Distill {
                teacher: &teacher,
                lambda: 0.5,
            },
            consistency_only: false,
        },
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, case) in cases.iter().enumerate() {
        let e = worst_fd_error(case, k as u64 + 1);
        pass &= e < FD_TOLERANCE;
        parts.push(format!("{} {e:.1e}", case.name));
    }
    let seconds = start.elapsed().as_secs_f64();
    pass &= seconds < FD_SECONDS;
    Verdict::new(
        pass,
        format!(
            "worst relative error {} (< {FD_TOLERANCE:e}), {FD_PROBES} probes each, {seconds:.2} s",
            parts.join(", ")
        ),
    )
}

pub fn siso_equivalence() -> Verdict {
    let nets: NerfPair<f64> = NerfPair::init(FieldSpec::desk(1), 21).unwrap();
    let st = settings(32, 32, false);
    let rays = camera_rays(SISO_RAYS, 32, 0.0, 4);
    let (grouped, runs) = render_rays(&nets, &rays, &st, &mut seeded_rng(0)).unwrap();
    let mut worst: f64 = 0.0;
    for (ray, p) in rays.iter().zip(&grouped) {
        let q = render_ray_siso(&nets, ray, &st).unwrap();
        for c in 0..3 {
            worst = worst.max((p[c] - q[c]).abs());
        }
    }
    let runs_ok = runs == (SISO_RAYS * 96) as u64;
    Verdict::new(
        worst <= SISO_TOLERANCE && runs_ok,
        format!("max deviation {worst:.1e} (<= {SISO_TOLERANCE:e}) on {SISO_RAYS} rays"),
    )
}

pub fn oracle_agreement() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, name) in BUILTIN_SCENES.iter().enumerate() {
        let scene = builtin_scene(name).unwrap();
        let mut worst: f64 = 0.0;
        let mut hits = 0;
        for ray in camera_rays(ORACLE_RAYS, 64, 12.0, k as u64) {
            let reference = scene.oracle_render(&ray, ORACLE_CELLS);
            let sampled = render_field_ray(
                |x, _| scene.field(x),
                &ray,
                ORACLE_SAMPLES,
                false,
                scene.background,
                &mut seeded_rng(0),
            );
            if reference != scene.background {
                hits += 1;
            }
            for c in 0..3 {
                worst = worst.max((sampled[c] - reference[c]).abs() / reference[c].abs().max(ORACLE_FLOOR));
            }
        }
        pass &= worst <= ORACLE_RELATIVE && hits > ORACLE_RAYS / 5;
        parts.push(format!("{name} {:.2}% ({hits} hits)", 100.0 * worst));
    }
    Verdict::new(pass, format!("worst relative channel error {}", parts.join(", ")))
}

pub fn run_accounting() -> Verdict {
    let cam = dataset_cameras(CameraMode::Orbit, 2, 16, 3).unwrap()[1];
    let rays: Vec<Ray<f32>> = (0..20).map(|k| cam.pixel_ray(k % 16, k / 16)).collect();
    let spec = |g| {
        let mut s = FieldSpec::desk(g);
        s.hidden_width = 16;
        s
    };
    let mut pass = true;
    let mut inference = Vec::new();
    for g in [1usize, 2, 4, 8] {
        let nets: NerfPair<f32> = NerfPair::init(spec(g), 1).unwrap();
        let (_, runs) = render_rays(&nets, &rays, &settings(32, 32, true), &mut seeded_rng(2)).unwrap();
        let per_ray = runs as f64 / rays.len() as f64;
        pass &= runs == (rays.len() * 96 / g) as u64 && runs == (rays.len() * count_run(32, 32, g)) as u64;
        inference.push(format!("{per_ray}"));
    }

    let mut r1_batches = 0;
    for levels in [2u32, 3] {
        let g = 1usize << levels;
        let nets: NerfPair<f32> = NerfPair::init(spec(g), 1).unwrap();
        let cfg = ReformulationConfig::preset(Preset::R1, g, 1.0).unwrap();
        let st = settings(32, 32, true);
        let mut rng = seeded_rng(levels as u64);
        for _ in 0..20 {
            let reforms = cfg.resolve(g, &mut rng).unwrap();
            let spec = BatchSpec {
                reforms: &reforms,
                supervision: Supervision::Consistency {
                    lambda: 1.0,
                    weighting: PairWeighting::Asymmetric,
                },
                settings: &st,
                loss_scale: 1.0,
                want_grad: false,
            };
            let out = run_batch(&nets, &rays[..6], &[[0.5; 3]; 6], &spec, None, &mut rng).unwrap();
            // N (1 - 2^-L) per pass, plus one padded group per shifted
            // formulation and pass
            let nominal = |n: usize| n - n / g;
            let shifted = reforms.iter().filter(|f| f.shift > 0).count();
            pass &= out.runs == (6 * (nominal(32) + nominal(64) + 2 * shifted)) as u64;
            r1_batches += 1;
        }
    }
    Verdict::new(
        pass,
        format!(
            "inference runs per ray {} for n_p 1,2,4,8; R1 budget identity exact on {r1_batches} batches",
            inference.join(",")
        ),
    )
}

pub fn metrics() -> Verdict {
    let a = RgbImage::from_rgb8(2, 2, &[0; 12]).unwrap();
    let mut b = a.clone();
    b.pixels[0] = [0.5, 0.0, 0.0];
    let mut psnr_err = (psnr(&a, &b).unwrap() + 10.0 * (0.25f64 / 12.0).log10()).abs();
    for m in [1.0, 0.1, 1e-3, 2.5e-4, 1e-8] {
        psnr_err = psnr_err.max((psnr_from_mse(m) + 10.0 * m.log10()).abs());
    }

    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/ssim");
    let expected = std::fs::read_to_string(dir.join("expected.csv")).unwrap();
    let mut ssim_err: f64 = 0.0;
    let mut identical_ok = true;
    let mut pairs = 0;
    for line in expected.lines().skip(1) {
        let (name, value) = line.split_once(',').unwrap();
        let want: f64 = value.parse().unwrap();
        let a = read_ppm(&dir.join(format!("{name}_a.ppm"))).unwrap();
        let b = read_ppm(&dir.join(format!("{name}_b.ppm"))).unwrap();
        ssim_err = ssim_err.max((ssim(&a, &b).unwrap() - want).abs());
        identical_ok &= ssim(&a, &a).unwrap() == 1.0;
        pairs += 1;
    }
    Verdict::new(
        psnr_err <= PSNR_TOLERANCE && ssim_err <= SSIM_TOLERANCE && identical_ok && pairs == 10,
        format!(
            "psnr error {psnr_err:.1e} (<= {PSNR_TOLERANCE:e}); ssim(x, x) = 1: {identical_ok}; \
             ssim error {ssim_err:.1e} on {pairs} reference pairs (<= {SSIM_TOLERANCE:e})"
        ),
    )
}
