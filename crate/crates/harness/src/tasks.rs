//! Downstream task manifests: balanced single-label evaluation sets with
//! per-class prompt sets, base/novel flags, and prototype compositions.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use duet_core::mat::Mat;
use serde::{Deserialize, Serialize};

use crate::datamodel::read_pgm;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSample {
    pub image: String,
    pub class: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskManifest {
    pub name: String,
    pub classes: Vec<String>,
    /// Base/novel flag per class, relative to the pre-training catalog.
    pub base: Vec<bool>,
    pub train: Vec<TaskSample>,
    pub test: Vec<TaskSample>,
    /// Text prompts per class name.
    pub prompt_sets: BTreeMap<String, Vec<String>>,
    /// Composed prototypes: class name → constituent base-class names.
    #[serde(default)]
    pub compositions: BTreeMap<String, Vec<String>>,
    /// Directory image paths are relative to (set on load, not serialized).
    #[serde(skip)]
    pub root: PathBuf,
}

impl TaskManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("read task {}", path.display()))?;
        let mut task: TaskManifest =
            serde_json::from_str(&text).with_context(|| format!("parse task {}", path.display()))?;
        task.root = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        task.validate()?;
        Ok(task)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("write task {}", path.display()))?;
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.classes.len() != self.base.len() {
            bail!("task '{}': base flags do not match classes", self.name);
        }
        for s in self.train.iter().chain(self.test.iter()) {
            if s.class >= self.classes.len() {
                bail!("task '{}': class index {} out of range", self.name, s.class);
            }
        }
        for name in self.prompt_sets.keys().chain(self.compositions.keys()) {
            if !self.classes.contains(name) {
                bail!("task '{}': unknown class '{name}'", self.name);
            }
        }
        Ok(())
    }

    pub fn base_indices(&self) -> Vec<usize> {
        (0..self.classes.len()).filter(|&i| self.base[i]).collect()
    }

    pub fn novel_indices(&self) -> Vec<usize> {
        (0..self.classes.len()).filter(|&i| !self.base[i]).collect()
    }

    /// Load images for one split as a row-major matrix plus class labels.
    pub fn load_split(&self, split: Split) -> Result<(Mat, Vec<usize>)> {
        let samples = match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        };
        if samples.is_empty() {
            bail!("task '{}': empty {split:?} split", self.name);
        }
        let mut labels = Vec::with_capacity(samples.len());
        let mut pixels: Option<Mat> = None;
        for (i, s) in samples.iter().enumerate() {
            let (w, h, p) = read_pgm(&self.root.join(&s.image))?;
            let m = pixels.get_or_insert_with(|| Mat::zeros(samples.len(), w * h));
            if m.cols != w * h {
                bail!("task '{}': inconsistent image sizes", self.name);
            }
            m.row_mut(i).copy_from_slice(&p);
            labels.push(s.class);
        }
        Ok((pixels.unwrap(), labels))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}
