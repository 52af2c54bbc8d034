//! Checkpoint files.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "MIMONERF"
//! 8       4     format version (u32)
//! 12      4     section count n (u32)
//! 16      32·n  section table: tag (16 bytes, NUL padded), offset (u64), length (u64)
//! ...           section payloads
//! ```
//!
//! All integers and reals are little-endian; reals are 32-bit. Sections:
//! `config`, `scene` and `arch` (UTF-8 text), `state` (iteration counter, u64),
//! `coarse.params` and `fine.params` (layer-major: each layer's weights,
//! input-major, then its biases), and when optimizer state is present
//! `coarse.adam`/`fine.adam` (lr, β₁, β₂, ε as f64, step as u64) with the
//! moment buffers `coarse.adam.m`, `coarse.adam.v`, `fine.adam.m`,
//! `fine.adam.v` in parameter order.

use std::fs;
use std::io::Write;
use std::path::Path;

use mimo_nerf_core::adam::{AdamConfig, AdamState};
use mimo_nerf_core::encoding::EncodingSpec;
use mimo_nerf_core::field::{FieldSpec, NerfNetwork};
use mimo_nerf_core::mlp::MlpParams;
use mimo_nerf_core::pipeline::NerfPair;

use crate::config::TrainConfig;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MIMONERF";
pub const VERSION: u32 = 1;
const TAG_LEN: usize = 16;
const ENTRY_LEN: usize = TAG_LEN + 16;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct PairOptimizer {
    pub coarse: AdamState<f32>,
    pub fine: AdamState<f32>,
}

impl PairOptimizer {
    pub fn new(nets: &NerfPair<f32>, config: AdamConfig) -> Self {
        Self {
            coarse: AdamState::new(&nets.coarse.params, config),
            fine: AdamState::new(&nets.fine.params, config),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Name of the scene the networks were fitted to.
    pub scene: String,
    /// Optimizer updates applied so far.
    pub iteration: u64,
    pub nets: NerfPair<f32>,
    pub optimizer: Option<PairOptimizer>,
}

/// The configuration minus `out_dir`: where a run was written does not change
/// the model, and should not change its bytes.
fn stored_config_text(config: &TrainConfig) -> String {
    config
        .to_text()
        .lines()
        .filter(|l| !l.starts_with("out_dir"))
        .map(|l| format!("{l}\n"))
        .collect()
}

fn arch_text(spec: &FieldSpec) -> String {
    let skips: Vec<String> = spec.skip_layers.iter().map(|s| s.to_string()).collect();
    format!(
        "group_size={} width={} depth={} skip={} pos_freqs={} dir_freqs={}",
        spec.group_size,
        spec.hidden_width,
        spec.depth,
        if skips.is_empty() { "-".to_string() } else { skips.join(",") },
        spec.pos_encoding.num_frequencies,
        spec.dir_encoding.num_frequencies
    )
}

fn parse_arch(text: &str) -> Option<FieldSpec> {
    let mut spec = FieldSpec {
        group_size: 0,
        hidden_width: 0,
        depth: 0,
        skip_layers: Vec::new(),
        pos_encoding: EncodingSpec::new(0),
        dir_encoding: EncodingSpec::new(0),
    };
    let mut seen = 0;
    for item in text.split_whitespace() {
        let (k, v) = item.split_once('=')?;
        match k {
            "group_size" => spec.group_size = v.parse().ok()?,
            "width" => spec.hidden_width = v.parse().ok()?,
            "depth" => spec.depth = v.parse().ok()?,
            "skip" if v == "-" => {}
            "skip" => spec.skip_layers = v.split(',').map(|s| s.parse().ok()).collect::<Option<_>>()?,
            "pos_freqs" => spec.pos_encoding = EncodingSpec::new(v.parse().ok()?),
            "dir_freqs" => spec.dir_encoding = EncodingSpec::new(v.parse().ok()?),
            _ => return None,
        }
        seen += 1;
    }
    (seen == 6).then_some(spec)
}

fn f32_bytes<'a>(values: impl Iterator<Item = &'a f32>) -> Vec<u8> {
    values.flat_map(|v| v.to_le_bytes()).collect()
}

fn adam_header(state: &AdamState<f32>) -> Vec<u8> {
    let c = state.config;
    let mut out = Vec::with_capacity(40);
    for v in [c.lr, c.beta1, c.beta2, c.eps] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&state.step.to_le_bytes());
    out
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut sections: Vec<(String, Vec<u8>)> = vec![
            ("config".into(), stored_config_text(&self.config).into_bytes()),
            ("scene".into(), self.scene.clone().into_bytes()),
            ("arch".into(), arch_text(&self.nets.coarse.spec).into_bytes()),
            ("state".into(), self.iteration.to_le_bytes().to_vec()),
            ("coarse.params".into(), f32_bytes(self.nets.coarse.params.values())),
            ("fine.params".into(), f32_bytes(self.nets.fine.params.values())),
        ];
        if let Some(opt) = &self.optimizer {
            for (name, st) in [("coarse", &opt.coarse), ("fine", &opt.fine)] {
                sections.push((format!("{name}.adam"), adam_header(st)));
                sections.push((format!("{name}.adam.m"), f32_bytes(st.m.values())));
                sections.push((format!("{name}.adam.v"), f32_bytes(st.v.values())));
            }
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        let mut offset = (HEADER_LEN + ENTRY_LEN * sections.len()) as u64;
        for (tag, payload) in &sections {
            let mut t = [0u8; TAG_LEN];
            t[..tag.len()].copy_from_slice(tag.as_bytes());
            out.extend_from_slice(&t);
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            offset += payload.len() as u64;
        }
        for (_, payload) in &sections {
            out.extend_from_slice(payload);
        }
        out
    }

    /// `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |m: String| Error::format(path, m);
        let truncated = |need: usize| fail(format!("truncated: needs {need} bytes, file ends at offset {}", bytes.len()));
        if bytes.len() < HEADER_LEN {
            if !MAGIC.starts_with(&bytes[..bytes.len().min(8)]) {
                return Err(fail("not a checkpoint (bad magic)".into()));
            }
            return Err(truncated(HEADER_LEN));
        }
        if &bytes[..8] != MAGIC {
            return Err(fail("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(fail(format!("unsupported checkpoint version {version} (expected {VERSION})")));
        }
        let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let table_end = HEADER_LEN + count * ENTRY_LEN;
        if bytes.len() < table_end {
            return Err(truncated(table_end));
        }
        let mut sections: Vec<(String, &[u8])> = Vec::with_capacity(count);
        for e in bytes[HEADER_LEN..table_end].chunks_exact(ENTRY_LEN) {
            let tag = String::from_utf8_lossy(&e[..TAG_LEN]).trim_end_matches('\0').to_string();
            let off = u64::from_le_bytes(e[TAG_LEN..TAG_LEN + 8].try_into().unwrap()) as usize;
            let len = u64::from_le_bytes(e[TAG_LEN + 8..].try_into().unwrap()) as usize;
            let end = off
                .checked_add(len)
                .ok_or_else(|| fail(format!("section `{tag}` has an invalid extent")))?;
            if end > bytes.len() {
                return Err(fail(format!(
                    "truncated: section `{tag}` spans offsets {off}..{end}, file ends at offset {}",
                    bytes.len()
                )));
            }
            sections.push((tag, &bytes[off..end]));
        }
        let section = |tag: &str| -> Result<&[u8]> {
            sections
                .iter()
                .find(|(t, _)| t == tag)
                .map(|(_, p)| *p)
                .ok_or_else(|| fail(format!("missing section `{tag}`")))
        };
        let text =
            |tag: &str| -> Result<&str> { std::str::from_utf8(section(tag)?).map_err(|_| fail(format!("section `{tag}` is not UTF-8"))) };

        let config = TrainConfig::from_text(text("config")?).map_err(|e| fail(format!("embedded config: {e}")))?;
        let scene = text("scene")?.to_string();
        let spec = parse_arch(text("arch")?).ok_or_else(|| fail("malformed `arch` section".into()))?;
        let arch = spec.architecture();
        arch.validate().map_err(|e| fail(e.to_string()))?;
        let state = section("state")?;
        let iteration = u64::from_le_bytes(state.try_into().map_err(|_| fail("malformed `state` section".into()))?);

        let reals = |tag: &str| -> Result<MlpParams<f32>> {
            let raw = section(tag)?;
            if raw.len() % 4 != 0 {
                return Err(fail(format!("section `{tag}` is not a whole number of reals")));
            }
            let values: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            MlpParams::from_values(&arch, &values).map_err(|e| fail(format!("section `{tag}`: {e}")))
        };
        let network = |tag: &str| -> Result<NerfNetwork<f32>> {
            NerfNetwork::from_params(spec.clone(), reals(tag)?).map_err(|e| fail(e.to_string()))
        };
        let nets = NerfPair {
            coarse: network("coarse.params")?,
            fine: network("fine.params")?,
        };

        let optimizer = if sections.iter().any(|(t, _)| t == "coarse.adam") {
            let adam = |name: &str| -> Result<AdamState<f32>> {
                let h = section(&format!("{name}.adam"))?;
                if h.len() != 40 {
                    return Err(fail(format!("malformed `{name}.adam` section")));
                }
                let f = |i: usize| f64::from_le_bytes(h[8 * i..8 * i + 8].try_into().unwrap());
                Ok(AdamState {
                    config: AdamConfig {
                        lr: f(0),
                        beta1: f(1),
                        beta2: f(2),
                        eps: f(3),
                    },
                    step: u64::from_le_bytes(h[32..40].try_into().unwrap()),
                    m: reals(&format!("{name}.adam.m"))?,
                    v: reals(&format!("{name}.adam.v"))?,
                })
            };
            Some(PairOptimizer {
                coarse: adam("coarse")?,
                fine: adam("fine")?,
            })
        } else {
            None
        };
        Ok(Checkpoint {
            config,
            scene,
            iteration,
            nets,
            optimizer,
        })
    }

    /// Writes to a temporary file next to `path`, then renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(&self.to_bytes()).map_err(|e| Error::io(tmp.path(), e))?;
        tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
