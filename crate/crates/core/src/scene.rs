//! Procedural ground-truth scenes, a dense-quadrature reference renderer,
//! and camera rigs for synthetic datasets.
//!
//! Every primitive has a soft edge: its density ramps from `σ₀` inside to
//! zero outside over a band of width `falloff` centred on the surface.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::field::FieldOutput;
use crate::image::RgbImage;
use crate::render::{alpha_from_sigma, Camera, Ray};
use crate::{seeded_rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere {
        radius: f64,
    },
    /// Axis-aligned box.
    Cuboid {
        half_extents: [f64; 3],
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub center: [f64; 3],
    pub albedo: [f64; 3],
    /// Density deep inside the primitive.
    pub density: f64,
    pub falloff: f64,
}

fn len3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

impl Primitive {
    /// Signed distance to the surface (negative inside).
    pub fn signed_distance(&self, x: [f64; 3]) -> f64 {
        let p = sub(x, self.center);
        match self.shape {
            Shape::Sphere { radius } => len3(p) - radius,
            Shape::Cuboid { half_extents: h } => {
                let q = [p[0].abs() - h[0], p[1].abs() - h[1], p[2].abs() - h[2]];
                let outside = len3([q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)]);
                outside + q[0].max(q[1]).max(q[2]).min(0.0)
            }
        }
    }

    pub fn sigma(&self, x: [f64; 3]) -> f64 {
        let sd = self.signed_distance(x);
        if sd >= 0.5 * self.falloff {
            return 0.0;
        }
        self.density * smoothstep(0.5 - sd / self.falloff)
    }

    /// Radius around the centre outside which the density is zero.
    pub fn support_radius(&self) -> f64 {
        let core = match self.shape {
            Shape::Sphere { radius } => radius,
            Shape::Cuboid { half_extents } => len3(half_extents),
        };
        core + 0.5 * self.falloff
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProceduralScene {
    pub name: String,
    pub primitives: Vec<Primitive>,
    pub background: [f64; 3],
}

/// Names accepted by [`builtin_scene`].
pub const BUILTIN_SCENES: [&str; 3] = ["spheres3", "box_sphere", "single_sphere"];

/// Density deep inside the built-in primitives.
pub const BUILTIN_DENSITY: f64 = 30.0;
/// Soft-edge width of the built-in primitives.
pub const BUILTIN_FALLOFF: f64 = 0.08;

pub fn builtin_scene(name: &str) -> Result<ProceduralScene> {
    let sphere = |c: [f64; 3], r: f64, albedo: [f64; 3]| Primitive {
        shape: Shape::Sphere { radius: r },
        center: c,
        albedo,
        density: BUILTIN_DENSITY,
        falloff: BUILTIN_FALLOFF,
    };
    let primitives = match name {
        "spheres3" => vec![
            sphere([-0.42, 0.05, 0.0], 0.3, [0.85, 0.2, 0.15]),
            sphere([0.35, 0.25, 0.12], 0.26, [0.2, 0.75, 0.25]),
            sphere([0.08, -0.38, -0.22], 0.24, [0.2, 0.3, 0.85]),
        ],
        "box_sphere" => vec![
            Primitive {
                shape: Shape::Cuboid {
                    half_extents: [0.3, 0.22, 0.25],
                },
                center: [-0.25, -0.1, 0.0],
                albedo: [0.9, 0.7, 0.2],
                density: BUILTIN_DENSITY,
                falloff: BUILTIN_FALLOFF,
            },
            sphere([0.35, 0.2, 0.1], 0.28, [0.25, 0.45, 0.85]),
        ],
        "single_sphere" => vec![sphere([0.0; 3], 0.45, [0.8, 0.35, 0.2])],
        _ => {
            return Err(Error::InvalidConfig(alloc::format!(
                "unknown scene `{name}`; available: {}",
                BUILTIN_SCENES.join(", ")
            )))
        }
    };
    Ok(ProceduralScene {
        name: name.into(),
        primitives,
        background: [1.0; 3],
    })
}

impl ProceduralScene {
    /// Density-weighted albedo and total density at `x`; the background
    /// color where the density vanishes.
    pub fn field(&self, x: [f64; 3]) -> FieldOutput<f64> {
        let mut sigma = 0.0;
        let mut acc = [0.0; 3];
        for p in &self.primitives {
            let s = p.sigma(x);
            if s > 0.0 {
                sigma += s;
                for k in 0..3 {
                    acc[k] += s * p.albedo[k];
                }
            }
        }
        if sigma > 0.0 {
            FieldOutput {
                color: acc.map(|a| a / sigma),
                sigma,
            }
        } else {
            FieldOutput {
                color: self.background,
                sigma: 0.0,
            }
        }
    }

    /// Parameter intervals of `ray` where some primitive has density,
    /// merged and clipped to the ray segment.
    fn support_intervals(&self, ray: &Ray<f64>) -> Vec<(f64, f64)> {
        let mut iv: Vec<(f64, f64)> = Vec::new();
        for p in &self.primitives {
            let oc = sub(ray.origin, p.center);
            let b = oc[0] * ray.dir[0] + oc[1] * ray.dir[1] + oc[2] * ray.dir[2];
            let r = p.support_radius();
            let c = oc[0] * oc[0] + oc[1] * oc[1] + oc[2] * oc[2] - r * r;
            let disc = b * b - c;
            if disc <= 0.0 {
                continue;
            }
            let s = disc.sqrt();
            let (lo, hi) = ((-b - s).max(ray.t_near), (-b + s).min(ray.t_far));
            if lo < hi {
                iv.push((lo, hi));
            }
        }
        iv.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite interval"));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (lo, hi) in iv {
            match merged.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        merged
    }

    /// Reference pixel color: `n_quad` equal cells over `[t_near, t_far]`,
    /// density and color taken at each cell midpoint, composited front to
    /// back over the background. Cells outside every primitive's support
    /// are skipped; they are transparent.
    pub fn oracle_render(&self, ray: &Ray<f64>, n_quad: usize) -> [f64; 3] {
        let h = (ray.t_far - ray.t_near) / n_quad as f64;
        let mut trans = 1.0;
        let mut color = [0.0; 3];
        let mut next = 0;
        for (lo, hi) in self.support_intervals(ray) {
            let first = ((((lo - ray.t_near) / h).floor().max(0.0)) as usize).max(next);
            let last = ((((hi - ray.t_near) / h).ceil()) as usize).min(n_quad);
            next = last;
            for k in first..last {
                let t = ray.t_near + (k as f64 + 0.5) * h;
                let o = self.field(ray.at(t));
                if o.sigma == 0.0 {
                    continue;
                }
                let a = alpha_from_sigma(o.sigma, h);
                for c in 0..3 {
                    color[c] += trans * a * o.color[c];
                }
                trans *= 1.0 - a;
            }
            if trans < 1e-300 {
                break;
            }
        }
        [
            color[0] + trans * self.background[0],
            color[1] + trans * self.background[1],
            color[2] + trans * self.background[2],
        ]
    }

    /// Oracle render of every pixel of `camera`, row-major.
    pub fn oracle_image(&self, camera: &Camera, n_quad: usize) -> RgbImage {
        let mut img = RgbImage::new(camera.width, camera.height);
        for y in 0..camera.height {
            for x in 0..camera.width {
                let c = self.oracle_render(&camera.pixel_ray(x, y), n_quad);
                img.set(x, y, c.map(|v| v as f32));
            }
        }
        img
    }
}

/// Default quadrature cells per ray for ground-truth images.
pub const ORACLE_QUADRATURE: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameraMode {
    /// Positions uniformly on a sphere, looking at the origin.
    Orbit,
    /// Positions in a small disc in front of the scene, all looking down −z.
    ForwardFacing,
}

impl CameraMode {
    pub fn name(self) -> &'static str {
        match self {
            CameraMode::Orbit => "orbit",
            CameraMode::ForwardFacing => "forward",
        }
    }
}

impl core::str::FromStr for CameraMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orbit" | "360" => Ok(CameraMode::Orbit),
            "forward" | "forward_facing" => Ok(CameraMode::ForwardFacing),
            _ => Err(Error::InvalidConfig(alloc::format!("unknown camera mode `{s}` (orbit, forward)"))),
        }
    }
}

/// Camera distance from the origin.
pub const CAMERA_DISTANCE: f64 = 3.0;
/// Radius of the region that holds every primitive.
pub const SCENE_RADIUS: f64 = 1.0;

/// World-from-camera pose at `eye` looking at `target`.
pub fn look_at(eye: [f64; 3], target: [f64; 3]) -> [[f64; 4]; 3] {
    let f = sub(target, eye);
    let fl = len3(f);
    let fwd = [f[0] / fl, f[1] / fl, f[2] / fl];
    let up = if fwd[2].abs() > 0.999 { [0.0, 1.0, 0.0] } else { [0.0, 0.0, 1.0] };
    let cross = |a: [f64; 3], b: [f64; 3]| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let right = cross(fwd, up);
    let rl = len3(right);
    let right = [right[0] / rl, right[1] / rl, right[2] / rl];
    let cam_up = cross(right, fwd);
    // columns: right, up, backward (camera looks down −z)
    [
        [right[0], cam_up[0], -fwd[0], eye[0]],
        [right[1], cam_up[1], -fwd[1], eye[1]],
        [right[2], cam_up[2], -fwd[2], eye[2]],
    ]
}

fn camera_at(pose: [[f64; 4]; 3], resolution: u32) -> Camera {
    let eye = [pose[0][3], pose[1][3], pose[2][3]];
    let dist = len3(eye);
    let res = resolution as f64;
    Camera {
        pose,
        width: resolution,
        height: resolution,
        focal: 1.2 * res,
        cx: 0.5 * res,
        cy: 0.5 * res,
        near: (dist - SCENE_RADIUS).max(0.05),
        far: dist + SCENE_RADIUS,
    }
}

/// `n` cameras of the given mode, deterministic in `seed`.
pub fn camera_rig(mode: CameraMode, n: usize, resolution: u32, seed: u64) -> Vec<Camera> {
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|_| {
            let eye = match mode {
                CameraMode::Orbit => {
                    let z: f64 = rng.gen_range(-0.9..0.9);
                    let phi: f64 = rng.gen_range(0.0..core::f64::consts::TAU);
                    let r = (1.0 - z * z).sqrt();
                    [
                        CAMERA_DISTANCE * r * phi.cos(),
                        CAMERA_DISTANCE * r * phi.sin(),
                        CAMERA_DISTANCE * z,
                    ]
                }
                CameraMode::ForwardFacing => {
                    let x: f64 = rng.gen_range(-0.5..0.5);
                    let y: f64 = rng.gen_range(-0.5..0.5);
                    [x, y, CAMERA_DISTANCE]
                }
            };
            let pose = match mode {
                CameraMode::Orbit => look_at(eye, [0.0; 3]),
                CameraMode::ForwardFacing => [[1.0, 0.0, 0.0, eye[0]], [0.0, 1.0, 0.0, eye[1]], [0.0, 0.0, 1.0, eye[2]]],
            };
            camera_at(pose, resolution)
        })
        .collect()
}

/// `n` cameras evenly spaced on a horizontal circle around the origin.
pub fn orbit_path(n: usize, resolution: u32, elevation: f64) -> Vec<Camera> {
    (0..n)
        .map(|k| {
            let phi = core::f64::consts::TAU * k as f64 / n as f64;
            let r = CAMERA_DISTANCE * elevation.cos();
            let eye = [r * phi.cos(), r * phi.sin(), CAMERA_DISTANCE * elevation.sin()];
            camera_at(look_at(eye, [0.0; 3]), resolution)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// Every fifth view is held out.
    pub fn of_index(i: usize) -> Self {
        if i % 5 == 4 {
            Split::Test
        } else {
            Split::Train
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Posed images with split tags.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub cameras: Vec<Camera>,
    pub images: Vec<RgbImage>,
    pub splits: Vec<Split>,
    pub background: [f64; 3],
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.cameras.len() != self.images.len() || self.splits.len() != self.images.len() {
            return Err(Error::ShapeMismatch("dataset needs one camera and split tag per image".into()));
        }
        for (c, img) in self.cameras.iter().zip(&self.images) {
            c.validate()?;
            if (c.width, c.height) != (img.width, img.height) {
                return Err(Error::ShapeMismatch("camera and image sizes differ".into()));
            }
        }
        Ok(())
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.splits.len()).filter(|i| self.splits[*i] == split).collect()
    }
}

/// Renders a dataset with the oracle; images are quantised to 8 bits.
pub fn generate_dataset(
    scene: &ProceduralScene,
    mode: CameraMode,
    views: usize,
    resolution: u32,
    seed: u64,
    n_quad: usize,
) -> Result<Dataset> {
    let cameras = dataset_cameras(mode, views, resolution, seed)?;
    let images = cameras.iter().map(|c| quantized(scene.oracle_image(c, n_quad))).collect();
    Ok(Dataset {
        splits: (0..views).map(Split::of_index).collect(),
        cameras,
        images,
        background: scene.background,
    })
}

/// Cameras of [`generate_dataset`], validated.
pub fn dataset_cameras(mode: CameraMode, views: usize, resolution: u32, seed: u64) -> Result<Vec<Camera>> {
    if views < 2 {
        return Err(Error::InvalidConfig("a dataset needs at least two views".into()));
    }
    if resolution == 0 {
        return Err(Error::InvalidConfig("resolution must be positive".into()));
    }
    Ok(camera_rig(mode, views, resolution, seed))
}

/// Rounds an image through 8-bit storage.
pub fn quantized(img: RgbImage) -> RgbImage {
    let bytes = img.to_rgb8();
    RgbImage::from_rgb8(img.width, img.height, &bytes).expect("same dimensions")
}
