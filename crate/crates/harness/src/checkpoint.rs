//! Checkpoint persistence: a binary archive of named parameter tensors with a
//! JSON sidecar carrying the class catalog and configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use duet_core::encoders::{build_toy_encoders, EncoderConfig, TextEncoder, VisionEncoder};
use duet_core::mat::Mat;
use duet_core::objectives::{ObjectiveKind, ObjectiveState};
use serde::{Deserialize, Serialize};

use crate::datamodel::ClassCatalog;

const MAGIC: &[u8; 8] = b"DUETCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub objective: ObjectiveKind,
    pub lambda: f64,
    pub seed: u64,
    pub config_hash: String,
    pub encoder: EncoderConfig,
    pub catalog: ClassCatalog,
}

/// A trained model: encoders, objective parameters, and their provenance.
#[derive(Clone)]
pub struct Checkpoint {
    pub vision: VisionEncoder,
    pub text: TextEncoder,
    pub objective: ObjectiveState,
    pub meta: CheckpointMeta,
}

/// FNV-1a over a byte string, hex-encoded; used to fingerprint configs.
pub fn fnv_hash(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x1_0000_01b3);
    }
    format!("{h:016x}")
}

impl Checkpoint {
    fn collect_tensors(&mut self) -> Vec<(String, Mat)> {
        let mut out = Vec::new();
        let mut push = |name: &str, p: &mut duet_core::nn::Param| {
            out.push((name.to_string(), p.value.clone()));
        };
        self.vision.visit_params(&mut push);
        self.text.visit_params(&mut push);
        self.objective.visit_params(&mut push);
        out
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tensors = self.collect_tensors();
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, m) in &tensors {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(m.rows as u32).to_le_bytes());
            buf.extend_from_slice(&(m.cols as u32).to_le_bytes());
            for &x in &m.data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        fs::write(path, buf).with_context(|| format!("write checkpoint {}", path.display()))?;
        let sidecar = sidecar_path(path);
        let mut text = serde_json::to_string_pretty(&self.meta)?;
        text.push('\n');
        fs::write(&sidecar, text)
            .with_context(|| format!("write checkpoint metadata {}", sidecar.display()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let sidecar = sidecar_path(path);
        let meta: CheckpointMeta = serde_json::from_str(
            &fs::read_to_string(&sidecar)
                .with_context(|| format!("read checkpoint metadata {}", sidecar.display()))?,
        )?;
        let bytes =
            fs::read(path).with_context(|| format!("read checkpoint {}", path.display()))?;
        let tensors = parse_archive(&bytes)?;

        let (mut vision, mut text) = build_toy_encoders(&meta.encoder)?;
        let n_base = meta.catalog.base_set.len();
        let mut objective = ObjectiveState::new(
            meta.objective,
            n_base,
            meta.encoder.d_p,
            meta.lambda,
            meta.seed,
        )?;
        let mut missing: Vec<String> = Vec::new();
        {
            let mut fill = |name: &str, p: &mut duet_core::nn::Param| {
                match tensors.get(name) {
                    Some(m) if m.rows == p.value.rows && m.cols == p.value.cols => {
                        p.value = m.clone();
                    }
                    Some(m) => missing.push(format!(
                        "{name}: shape {}x{} != {}x{}",
                        m.rows, m.cols, p.value.rows, p.value.cols
                    )),
                    None => missing.push(name.to_string()),
                }
            };
            vision.visit_params(&mut fill);
            text.visit_params(&mut fill);
            objective.visit_params(&mut fill);
        }
        if !missing.is_empty() {
            bail!("checkpoint {} is incomplete: {missing:?}", path.display());
        }
        Ok(Checkpoint {
            vision,
            text,
            objective,
            meta,
        })
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

fn parse_archive(bytes: &[u8]) -> Result<BTreeMap<String, Mat>> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            bail!("checkpoint archive truncated");
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    if take(8)? != &MAGIC[..] {
        bail!("not a checkpoint archive");
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
    let version = u32_at(take(4)?);
    if version != VERSION {
        bail!("unsupported checkpoint version {version}");
    }
    let count = u32_at(take(4)?) as usize;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = u32_at(take(4)?) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec()).context("tensor name")?;
        let rows = u32_at(take(4)?) as usize;
        let cols = u32_at(take(4)?) as usize;
        let raw = take(rows * cols * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.insert(name, Mat::from_vec(rows, cols, data)?);
    }
    Ok(out)
}
