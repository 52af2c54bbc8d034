//! Dataset directories: `manifest.txt` plus one binary PPM per view.
//!
//! ```text
//! scene spheres3
//! size 64 64
//! focal 76.8
//! principal 32 32
//! background 1 1 1
//! view_000.ppm train 2.5 5.5 r00 r01 r02 r03 r10 r11 r12 r13 r20 r21 r22 r23
//! ```
//!
//! Intrinsics are shared by every view. Each view line holds the image file,
//! its split, the near and far bounds, and the 3×4 world-from-camera pose,
//! row-major. Numbers use the shortest representation that parses back to the
//! same `f64`, so a save/load cycle is exact.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};
use mimo_nerf_core::image::RgbImage;
use mimo_nerf_core::render::Camera;
use mimo_nerf_core::scene::{dataset_cameras, quantized, CameraMode, Dataset, ProceduralScene, Split};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";

/// A dataset with the name of the scene it depicts.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredDataset {
    pub scene: String,
    pub dataset: Dataset,
}

/// Oracle-renders every view, in parallel over views. Identical to
/// [`mimo_nerf_core::scene::generate_dataset`] for any thread count.
pub fn generate(scene: &ProceduralScene, mode: CameraMode, views: usize, resolution: u32, seed: u64, n_quad: usize) -> Result<Dataset> {
    let cameras = dataset_cameras(mode, views, resolution, seed)?;
    let images = cameras.par_iter().map(|c| quantized(scene.oracle_image(c, n_quad))).collect();
    Ok(Dataset {
        splits: (0..views).map(Split::of_index).collect(),
        cameras,
        images,
        background: scene.background,
    })
}

pub fn image_file_name(index: usize) -> String {
    format!("view_{index:03}.ppm")
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    write_image(path, img, ImageFormat::Pnm)
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    write_image(path, img, ImageFormat::Png)
}

fn write_image(path: &Path, img: &RgbImage, format: ImageFormat) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let bytes = img.to_rgb8();
    let encoded = match format {
        ImageFormat::Pnm => PnmEncoder::new(&mut out)
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
            .write_image(&bytes, img.width, img.height, ExtendedColorType::Rgb8),
        _ => PngEncoder::new(&mut out).write_image(&bytes, img.width, img.height, ExtendedColorType::Rgb8),
    };
    encoded.map_err(|e| image_error(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Pnm).map_err(|e| image_error(path, e))?;
    let rgb = match img {
        image::DynamicImage::ImageRgb8(rgb) => rgb,
        other => return Err(Error::format(path, format!("expected 8-bit RGB, found {:?}", other.color()))),
    };
    Ok(RgbImage::from_rgb8(rgb.width(), rgb.height(), rgb.as_raw())?)
}

fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

fn shared_intrinsics(cameras: &[Camera]) -> Option<Camera> {
    let first = *cameras.first()?;
    let same = |c: &Camera| (c.width, c.height, c.focal, c.cx, c.cy) == (first.width, first.height, first.focal, first.cx, first.cy);
    cameras.iter().all(same).then_some(first)
}

pub fn manifest_text(data: &StoredDataset) -> Result<String, String> {
    let d = &data.dataset;
    d.validate().map_err(|e| e.to_string())?;
    let c = shared_intrinsics(&d.cameras).ok_or("views do not share intrinsics")?;
    if data.scene.is_empty() || data.scene.contains(char::is_whitespace) {
        return Err(format!("scene name `{}` must be a single word", data.scene));
    }
    let mut s = String::new();
    let _ = writeln!(s, "scene {}", data.scene);
    let _ = writeln!(s, "size {} {}", c.width, c.height);
    let _ = writeln!(s, "focal {}", c.focal);
    let _ = writeln!(s, "principal {} {}", c.cx, c.cy);
    let bg = d.background;
    let _ = writeln!(s, "background {} {} {}", bg[0], bg[1], bg[2]);
    for (i, (cam, split)) in d.cameras.iter().zip(&d.splits).enumerate() {
        let _ = write!(s, "{} {} {} {}", image_file_name(i), split.name(), cam.near, cam.far);
        for v in cam.pose.iter().flatten() {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    Ok(s)
}

/// Writes the manifest and the images into `dir`, creating it if needed.
pub fn save(dir: &Path, data: &StoredDataset) -> Result<()> {
    let manifest = manifest_text(data).map_err(|m| Error::format(dir, m))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, img) in data.dataset.images.iter().enumerate() {
        write_ppm(&dir.join(image_file_name(i)), img)?;
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

pub fn is_dataset_dir(dir: &Path) -> bool {
    dir.join(MANIFEST).is_file()
}

fn numbers<const N: usize>(words: &[&str]) -> Option<[f64; N]> {
    if words.len() != N {
        return None;
    }
    let mut out = [0.0; N];
    for (o, w) in out.iter_mut().zip(words) {
        *o = w.parse().ok()?;
    }
    Some(out)
}

pub fn load(dir: &Path) -> Result<StoredDataset> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let bad = |line: usize, m: &str| Error::format(&path, format!("line {line}: {m}"));
    let mut scene = None;
    let mut size = None;
    let mut focal = None;
    let mut principal = None;
    let mut background = None;
    let mut views: Vec<(usize, String, Split, [f64; 14])> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        let rest = &words[1..];
        match words[0] {
            "scene" if rest.len() == 1 => scene = Some(rest[0].to_string()),
            "size" => {
                let [w, h] = numbers(rest).ok_or_else(|| bad(n, "expected `size W H`"))?;
                if w < 1.0 || h < 1.0 || w.fract() != 0.0 || h.fract() != 0.0 {
                    return Err(bad(n, "image size must be positive integers"));
                }
                size = Some((w as u32, h as u32));
            }
            "focal" => focal = Some(numbers::<1>(rest).ok_or_else(|| bad(n, "expected `focal F`"))?[0]),
            "principal" => principal = Some(numbers::<2>(rest).ok_or_else(|| bad(n, "expected `principal CX CY`"))?),
            "background" => background = Some(numbers::<3>(rest).ok_or_else(|| bad(n, "expected `background R G B`"))?),
            file if file.ends_with(".ppm") => {
                let split = match rest.first() {
                    Some(&"train") => Split::Train,
                    Some(&"test") => Split::Test,
                    _ => return Err(bad(n, "expected a split tag (train or test)")),
                };
                let nums = numbers::<14>(&rest[1..]).ok_or_else(|| bad(n, "expected near, far and 12 pose entries"))?;
                views.push((n, file.to_string(), split, nums));
            }
            other => return Err(bad(n, &format!("unexpected entry `{other}`"))),
        }
    }
    let missing = |what: &str| Error::format(&path, format!("missing `{what}` line"));
    let scene = scene.ok_or_else(|| missing("scene"))?;
    let (width, height) = size.ok_or_else(|| missing("size"))?;
    let focal = focal.ok_or_else(|| missing("focal"))?;
    let [cx, cy] = principal.ok_or_else(|| missing("principal"))?;
    let background = background.ok_or_else(|| missing("background"))?;
    if views.is_empty() {
        return Err(missing("view"));
    }

    let loaded: Vec<Result<(Camera, RgbImage, Split)>> = views
        .par_iter()
        .map(|(n, file, split, nums)| {
            let [near, far] = [nums[0], nums[1]];
            let p = &nums[2..];
            let camera = Camera {
                pose: [[p[0], p[1], p[2], p[3]], [p[4], p[5], p[6], p[7]], [p[8], p[9], p[10], p[11]]],
                width,
                height,
                focal,
                cx,
                cy,
                near,
                far,
            };
            camera.validate().map_err(|e| bad(*n, &e.to_string()))?;
            let img = read_ppm(&dir.join(file))?;
            if (img.width, img.height) != (width, height) {
                return Err(Error::format(
                    &dir.join(file),
                    format!("image is {}x{}, manifest says {width}x{height}", img.width, img.height),
                ));
            }
            Ok((camera, img, *split))
        })
        .collect();
    let mut dataset = Dataset {
        cameras: Vec::new(),
        images: Vec::new(),
        splits: Vec::new(),
        background,
    };
    for item in loaded {
        let (c, img, s) = item?;
        dataset.cameras.push(c);
        dataset.images.push(img);
        dataset.splits.push(s);
    }
    Ok(StoredDataset { scene, dataset })
}
