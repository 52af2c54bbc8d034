//! Plain-text `key = value` experiment configuration.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! Unknown and repeated keys are rejected. `#` starts a comment.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use mimo_nerf_core::encoding::EncodingSpec;
use mimo_nerf_core::field::FieldSpec;
use mimo_nerf_core::grouping::GroupingMode;
use mimo_nerf_core::objectives::{Preset, ReformulationConfig, LAMBDA_FORWARD_FACING, LAMBDA_OBJECT};
use mimo_nerf_core::pipeline::RenderSettings;
use mimo_nerf_core::scene::CameraMode;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("`{key}`: {message}")]
    Value { key: &'static str, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// Training variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Pixel loss on the base formulation only.
    Naive,
    /// Every reformulation of the preset, plus the consistency loss.
    SelfSupervised,
    /// Pixel loss plus per-sample agreement with a frozen single-sample teacher.
    Distill,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Naive => "naive",
            Variant::SelfSupervised => "self",
            Variant::Distill => "distill",
        }
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "naive" => Ok(Variant::Naive),
            "self" => Ok(Variant::SelfSupervised),
            "distill" => Ok(Variant::Distill),
            _ => Err(format!("unknown variant `{s}` (naive, self, distill)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Built-in scene name, or a dataset directory written by `gen-data`.
    pub scene: String,
    pub views: usize,
    pub resolution: u32,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub n_p: usize,
    pub preset: Preset,
    /// Consistency weight; `None` picks the camera-mode default.
    pub lambda: Option<f64>,
    pub lr: f64,
    pub iters: u64,
    pub batch_rays: usize,
    pub seed: u64,
    pub jitter: bool,
    pub grouping: GroupingMode,
    pub variant: Variant,
    pub teacher: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub background: [f64; 3],
    pub camera_mode: CameraMode,
    pub width: usize,
    pub depth: usize,
    pub pos_freqs: usize,
    pub dir_freqs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scene: "spheres3".into(),
            views: 20,
            resolution: 64,
            n_coarse: 32,
            n_fine: 32,
            n_p: 1,
            preset: Preset::R1,
            lambda: None,
            lr: 5e-4,
            iters: 20_000,
            batch_rays: 256,
            seed: 0,
            jitter: true,
            grouping: GroupingMode::Neighbor,
            variant: Variant::Naive,
            teacher: None,
            out_dir: PathBuf::from("runs/default"),
            background: [1.0; 3],
            camera_mode: CameraMode::Orbit,
            width: 64,
            depth: 4,
            pos_freqs: 6,
            dir_freqs: 4,
        }
    }
}

pub const KEYS: [&str; 23] = [
    "scene",
    "views",
    "resolution",
    "n_coarse",
    "n_fine",
    "n_p",
    "preset",
    "lambda",
    "lr",
    "iters",
    "batch_rays",
    "seed",
    "jitter",
    "grouping",
    "variant",
    "teacher",
    "out_dir",
    "background",
    "camera_mode",
    "width",
    "depth",
    "pos_freqs",
    "dir_freqs",
];

fn parse<T: FromStr>(key: &'static str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| ConfigError::Value {
        key,
        message: format!("`{v}`: {e}"),
    })
}

fn parse_bool(key: &'static str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(ConfigError::Value {
            key,
            message: format!("`{v}` is not a boolean"),
        }),
    }
}

fn parse_color(key: &'static str, v: &str) -> Result<[f64; 3], ConfigError> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    let bad = |message: String| ConfigError::Value { key, message };
    if parts.len() != 3 {
        return Err(bad(format!("`{v}` is not an `r,g,b` triple")));
    }
    let mut c = [0.0; 3];
    for (slot, p) in c.iter_mut().zip(&parts) {
        *slot = p.parse().map_err(|_| bad(format!("`{p}` is not a number")))?;
        if !(0.0..=1.0).contains(slot) {
            return Err(bad(format!("{p} is outside [0, 1]")));
        }
    }
    Ok(c)
}

fn optional(v: &str) -> Option<&str> {
    match v {
        "" | "none" | "auto" => None,
        _ => Some(v),
    }
}

impl TrainConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = TrainConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: line_no })?;
            let (k, v) = (k.trim(), v.trim());
            let Some(key) = KEYS.iter().copied().find(|key| *key == k) else {
                return Err(ConfigError::UnknownKey {
                    line: line_no,
                    key: k.to_string(),
                });
            };
            if seen.contains(&key) {
                return Err(ConfigError::Duplicate {
                    line: line_no,
                    key: k.to_string(),
                });
            }
            seen.push(key);
            cfg.set(key, v)?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &'static str, v: &str) -> Result<(), ConfigError> {
        match key {
            "scene" => self.scene = v.to_string(),
            "views" => self.views = parse(key, v)?,
            "resolution" => self.resolution = parse(key, v)?,
            "n_coarse" => self.n_coarse = parse(key, v)?,
            "n_fine" => self.n_fine = parse(key, v)?,
            "n_p" => self.n_p = parse(key, v)?,
            "preset" => self.preset = parse(key, v)?,
            "lambda" => self.lambda = optional(v).map(|v| parse(key, v)).transpose()?,
            "lr" => self.lr = parse(key, v)?,
            "iters" => self.iters = parse(key, v)?,
            "batch_rays" => self.batch_rays = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "jitter" => self.jitter = parse_bool(key, v)?,
            "grouping" => self.grouping = parse(key, v)?,
            "variant" => self.variant = parse(key, v)?,
            "teacher" => self.teacher = optional(v).map(PathBuf::from),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "background" => self.background = parse_color(key, v)?,
            "camera_mode" => self.camera_mode = parse(key, v)?,
            "width" => self.width = parse(key, v)?,
            "depth" => self.depth = parse(key, v)?,
            "pos_freqs" => self.pos_freqs = parse(key, v)?,
            "dir_freqs" => self.dir_freqs = parse(key, v)?,
            _ => unreachable!("key list and setter disagree on `{key}`"),
        }
        Ok(())
    }

    /// Every key in canonical order; `from_text(to_text())` is the identity.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let bg = self.background;
        let _ = writeln!(s, "scene = {}", self.scene);
        let _ = writeln!(s, "views = {}", self.views);
        let _ = writeln!(s, "resolution = {}", self.resolution);
        let _ = writeln!(s, "n_coarse = {}", self.n_coarse);
        let _ = writeln!(s, "n_fine = {}", self.n_fine);
        let _ = writeln!(s, "n_p = {}", self.n_p);
        let _ = writeln!(s, "preset = {}", self.preset.name());
        let _ = writeln!(s, "lambda = {}", self.lambda.map_or("auto".to_string(), |l| l.to_string()));
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "iters = {}", self.iters);
        let _ = writeln!(s, "batch_rays = {}", self.batch_rays);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "jitter = {}", self.jitter);
        let _ = writeln!(s, "grouping = {}", self.grouping.name());
        let _ = writeln!(s, "variant = {}", self.variant.name());
        let _ = writeln!(s, "teacher = {}", path(&self.teacher));
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "background = {},{},{}", bg[0], bg[1], bg[2]);
        let _ = writeln!(s, "camera_mode = {}", self.camera_mode.name());
        let _ = writeln!(s, "width = {}", self.width);
        let _ = writeln!(s, "depth = {}", self.depth);
        let _ = writeln!(s, "pos_freqs = {}", self.pos_freqs);
        let _ = writeln!(s, "dir_freqs = {}", self.dir_freqs);
        s
    }

    /// Consistency weight after applying the camera-mode default.
    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(match self.camera_mode {
            CameraMode::Orbit => LAMBDA_OBJECT,
            CameraMode::ForwardFacing => LAMBDA_FORWARD_FACING,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.n_p == 0 {
            return invalid("n_p must be positive".into());
        }
        if self.n_coarse == 0 {
            return invalid("n_coarse must be positive".into());
        }
        for (key, n) in [("n_coarse", self.n_coarse), ("n_fine", self.n_fine)] {
            if n % self.n_p != 0 {
                return invalid(format!("{key} = {n} is not a multiple of n_p = {}", self.n_p));
            }
        }
        if self.batch_rays == 0 {
            return invalid("batch_rays must be at least 1".into());
        }
        if self.views < 2 {
            return invalid("views must be at least 2".into());
        }
        if self.resolution == 0 {
            return invalid("resolution must be positive".into());
        }
        if self.depth == 0 || self.width < 2 {
            return invalid("the network needs depth >= 1 and width >= 2".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return invalid(format!("lr = {} must be positive", self.lr));
        }
        if !(self.lambda() >= 0.0 && self.lambda().is_finite()) {
            return invalid(format!("lambda = {} must be non-negative", self.lambda()));
        }
        match self.variant {
            Variant::SelfSupervised => {
                self.reformulations()
                    .and_then(|r| r.validate(self.n_p))
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            }
            Variant::Distill if self.teacher.is_none() => {
                return invalid("variant = distill needs a teacher checkpoint".into());
            }
            _ => {}
        }
        Ok(())
    }

    /// Reformulations trained by the `self` variant.
    pub fn reformulations(&self) -> mimo_nerf_core::Result<ReformulationConfig> {
        ReformulationConfig::preset(self.preset, self.n_p, self.lambda())
    }

    pub fn field_spec(&self) -> FieldSpec {
        field_spec(self.n_p, self.width, self.depth, self.pos_freqs, self.dir_freqs)
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            n_coarse: self.n_coarse,
            n_fine: self.n_fine,
            jitter: self.jitter,
            grouping: self.grouping,
            background: self.background,
        }
    }
}

/// Network shape; the input re-enters at five eighths of the depth (layer 2
/// of 4, layer 5 of 8).
pub fn field_spec(group_size: usize, width: usize, depth: usize, pos_freqs: usize, dir_freqs: usize) -> FieldSpec {
    let skip = depth * 5 / 8;
    FieldSpec {
        group_size,
        hidden_width: width,
        depth,
        skip_layers: if skip > 0 && skip < depth { vec![skip] } else { vec![] },
        pos_encoding: EncodingSpec::new(pos_freqs),
        dir_encoding: EncodingSpec::new(dir_freqs),
    }
}
