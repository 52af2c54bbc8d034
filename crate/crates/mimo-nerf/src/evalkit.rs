//! Rendering whole views, quality and cost reports.

use std::time::Instant;

use mimo_nerf_core::image::RgbImage;
use mimo_nerf_core::metrics::{count_run, flops_estimate, psnr, ssim};
use mimo_nerf_core::pipeline::{render_rays, NerfPair, RenderSettings};
use mimo_nerf_core::render::Camera;
use mimo_nerf_core::scene::{Dataset, Split};
use mimo_nerf_core::seeded_rng;
use rayon::prelude::*;

use crate::error::Result;

/// Renders one view, in parallel over image rows. Output does not depend on
/// the thread count. `seed` only matters for random grouping.
pub fn render_image(nets: &NerfPair<f32>, camera: &Camera, settings: &RenderSettings, seed: u64) -> Result<(RgbImage, u64)> {
    settings.validate(nets.group_size())?;
    camera.validate()?;
    let rows: Vec<Result<(Vec<[f32; 3]>, u64)>> = (0..camera.height)
        .into_par_iter()
        .map(|y| {
            let rays: Vec<_> = (0..camera.width).map(|x| camera.pixel_ray::<f32>(x, y)).collect();
            let mut rng = seeded_rng(seed ^ ((y as u64) << 32));
            Ok(render_rays(nets, &rays, settings, &mut rng)?)
        })
        .collect();
    let mut pixels = Vec::with_capacity((camera.width * camera.height) as usize);
    let mut runs = 0;
    for row in rows {
        let (p, r) = row?;
        pixels.extend(p);
        runs += r;
    }
    Ok((RgbImage::from_pixels(camera.width, camera.height, pixels)?, runs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub group_size: usize,
    pub images: Vec<ImageScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Network invocations per pixel, counted while rendering.
    pub runs_per_pixel: f64,
    pub flops_per_pixel: u64,
    /// Median over timing repetitions of the per-image render time.
    pub seconds_per_image: f64,
}

/// Renders every view of `split`, scores it against the dataset and times
/// the renders (`timing_runs` full passes, median taken).
///
/// Panics if the counted invocations differ from the closed-form count.
pub fn evaluate(
    nets: &NerfPair<f32>,
    data: &Dataset,
    split: Split,
    settings: &RenderSettings,
    timing_runs: usize,
    label: &str,
) -> Result<(EvalReport, Vec<RgbImage>)> {
    let views = data.indices(split);
    let g = nets.group_size();
    let mut renders = Vec::new();
    let mut times = Vec::new();
    let mut runs = 0;
    let mut pixels = 0u64;
    for pass in 0..timing_runs.max(1) {
        let start = Instant::now();
        let mut out = Vec::with_capacity(views.len());
        for &v in &views {
            let cam = &data.cameras[v];
            let (img, r) = render_image(nets, cam, settings, v as u64)?;
            if pass == 0 {
                runs += r;
                pixels += (cam.width * cam.height) as u64;
            }
            out.push(img);
        }
        times.push(start.elapsed().as_secs_f64() / views.len().max(1) as f64);
        if pass == 0 {
            renders = out;
        }
    }
    let runs_per_pixel = if pixels == 0 { 0.0 } else { runs as f64 / pixels as f64 };
    if pixels > 0 {
        assert_eq!(
            runs,
            pixels * count_run(settings.n_coarse, settings.n_fine, g) as u64,
            "invocation counter disagrees with the closed-form count"
        );
    }
    let mut images = Vec::with_capacity(views.len());
    for (img, &v) in renders.iter().zip(&views) {
        images.push(ImageScore {
            view: v,
            psnr: psnr(img, &data.images[v])?,
            ssim: ssim(img, &data.images[v])?,
        });
    }
    let n = images.len().max(1) as f64;
    times.sort_by(f64::total_cmp);
    let report = EvalReport {
        label: label.to_string(),
        group_size: g,
        mean_psnr: images.iter().map(|s| s.psnr).sum::<f64>() / n,
        mean_ssim: images.iter().map(|s| s.ssim).sum::<f64>() / n,
        images,
        runs_per_pixel,
        flops_per_pixel: flops_estimate(&nets.fine.spec.architecture(), settings.n_coarse, settings.n_fine),
        seconds_per_image: times[times.len() / 2],
    };
    Ok((report, renders))
}

/// Numbers as they appear in both the CSV and the table.
fn cells(r: &EvalReport) -> [String; 7] {
    [
        r.label.clone(),
        r.group_size.to_string(),
        format!("{:.4}", r.mean_psnr),
        format!("{:.6}", r.mean_ssim),
        format!("{}", r.runs_per_pixel),
        r.flops_per_pixel.to_string(),
        format!("{:.6}", r.seconds_per_image),
    ]
}

const SUMMARY_HEADER: [&str; 7] = [
    "label",
    "n_p",
    "psnr",
    "ssim",
    "runs_per_pixel",
    "flops_per_pixel",
    "seconds_per_image",
];

pub fn summary_csv(reports: &[EvalReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER).expect("in-memory write");
    for r in reports {
        w.write_record(cells(r)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 cells")
}

pub fn summary_table(reports: &[EvalReport]) -> String {
    let rows: Vec<[String; 7]> = reports.iter().map(cells).collect();
    let mut widths = SUMMARY_HEADER.map(str::len);
    for row in &rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cols: &[String]| -> String {
        let parts: Vec<String> = cols
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(&SUMMARY_HEADER.map(String::from));
    for row in &rows {
        out += &line(row);
    }
    out
}

/// One row per image.
pub fn images_csv(report: &EvalReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "view", "psnr", "ssim"]).expect("in-memory write");
    for s in &report.images {
        w.write_record([
            report.label.clone(),
            s.view.to_string(),
            format!("{:.4}", s.psnr),
            format!("{:.6}", s.ssim),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 cells")
}
