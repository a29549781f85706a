//! Dataset manifests, image IO, and batch assembly.
//!
//! Manifests are JSON-lines: the first record is a header `{"classes": [...]}`;
//! every following record describes one image and its report sentences.
//! Label values may be 0, 1, or -1 (uncertain); uncertain values are coerced
//! to 0 at load time and counted.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use duet_core::mat::Mat;
use serde::{Deserialize, Serialize};

/// Ordered class names with the base/novel partition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassCatalog {
    pub names: Vec<String>,
    pub base_set: Vec<usize>,
    pub novel_set: Vec<usize>,
}

impl ClassCatalog {
    /// All classes are base (the pretrain-manifest default).
    pub fn all_base(names: Vec<String>) -> Self {
        let base_set = (0..names.len()).collect();
        ClassCatalog {
            names,
            base_set,
            novel_set: Vec::new(),
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// One quadruplet: image, image-level labels, one sentence, sentence-level
/// labels, plus the annotation mask saying which classes this sample's source
/// actually labels.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Arc<Vec<f64>>,
    pub image_path: PathBuf,
    pub image_labels: Vec<f64>,
    pub sentence: String,
    pub sentence_labels: Vec<f64>,
    pub annotation_mask: Vec<f64>,
    pub source_id: String,
}

/// A loaded manifest: class header, image geometry, and one Sample per
/// (image, sentence) pair.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub image_size: (usize, usize),
    pub samples: Vec<Sample>,
    /// How many uncertain (-1) label values were coerced to 0.
    pub coerced_uncertain: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderRecord {
    classes: Vec<String>,
    #[serde(default)]
    source: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub text: String,
    pub y_text: Vec<i8>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image: String,
    pub y_img: Vec<i8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<i8>>,
    pub sentences: Vec<SentenceRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

fn no_finding_index(classes: &[String]) -> Option<usize> {
    classes.iter().position(|c| {
        let c = c.to_lowercase().replace([' ', '-'], "_");
        c == "no_finding" || c == "nofinding"
    })
}

/// Load a JSON-lines manifest. Every record yields one Sample per sentence;
/// malformed records are rejected with their line number.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let file = fs::File::open(path).with_context(|| format!("open manifest {}", path.display()))?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut lines = BufReader::new(file).lines().enumerate();

    let header: HeaderRecord = match lines.next() {
        Some((_, line)) => {
            let line = line?;
            serde_json::from_str(&line).context("manifest header (line 1)")?
        }
        None => bail!("no samples: manifest {} is empty", path.display()),
    };
    let c = header.classes.len();
    if c == 0 {
        bail!("manifest header declares no classes");
    }
    let default_source = header.source.unwrap_or_else(|| "default".to_string());
    let nf = no_finding_index(&header.classes);

    let mut samples = Vec::new();
    let mut coerced = 0usize;
    let mut image_size = None;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ImageRecord = serde_json::from_str(&line)
            .with_context(|| format!("malformed record at line {lineno}"))?;
        if rec.y_img.len() != c {
            bail!("line {lineno}: y_img has {} entries, expected {c}", rec.y_img.len());
        }
        if let Some(m) = &rec.mask {
            if m.len() != c {
                bail!("line {lineno}: mask has {} entries, expected {c}", m.len());
            }
        }
        let mut coerce = |v: &[i8]| -> Vec<f64> {
            v.iter()
                .map(|&x| {
                    if x < 0 {
                        coerced += 1;
                        0.0
                    } else {
                        f64::from(x.min(1))
                    }
                })
                .collect()
        };
        let mut y_img = coerce(&rec.y_img);
        let mask: Vec<f64> = rec
            .mask
            .as_ref()
            .map(|m| m.iter().map(|&x| f64::from(x.clamp(0, 1))).collect())
            .unwrap_or_else(|| vec![1.0; c]);

        let mut y_texts = Vec::with_capacity(rec.sentences.len());
        for s in &rec.sentences {
            if s.y_text.len() != c {
                bail!("line {lineno}: y_text has {} entries, expected {c}", s.y_text.len());
            }
            y_texts.push(coerce(&s.y_text));
        }
        // a report with no positively asserted finding gets the designated
        // no-finding class at image level
        if let Some(nf) = nf {
            let any_positive = y_img.iter().any(|&x| x > 0.0)
                || y_texts.iter().any(|t| t.iter().any(|&x| x > 0.0));
            if !any_positive {
                y_img[nf] = 1.0;
            }
        }
        for y_text in &y_texts {
            for cc in 0..c {
                if y_text[cc] > 0.0 && y_img[cc] == 0.0 {
                    bail!(
                        "line {lineno}: sentence asserts class '{}' absent from y_img",
                        header.classes[cc]
                    );
                }
            }
        }

        let img_path = dir.join(&rec.image);
        let (w, h, pixels) = read_pgm(&img_path)
            .with_context(|| format!("line {lineno}: image {}", img_path.display()))?;
        match image_size {
            None => image_size = Some((h, w)),
            Some(sz) if sz != (h, w) => {
                bail!("line {lineno}: image size {h}x{w} differs from {}x{}", sz.0, sz.1)
            }
            _ => {}
        }
        let image = Arc::new(pixels);
        let source = rec.source.clone().unwrap_or_else(|| default_source.clone());
        for (y_text, s) in y_texts.into_iter().zip(rec.sentences) {
            samples.push(Sample {
                image: Arc::clone(&image),
                image_path: img_path.clone(),
                image_labels: y_img.clone(),
                sentence: s.text,
                sentence_labels: y_text,
                annotation_mask: mask.clone(),
                source_id: source.clone(),
            });
        }
    }
    if samples.is_empty() {
        bail!("no samples in manifest {}", path.display());
    }
    Ok(Dataset {
        classes: header.classes,
        image_size: image_size.unwrap(),
        samples,
        coerced_uncertain: coerced,
    })
}

/// Write a manifest from raw records (header first). Used by the generator and
/// by mask-rewriting; keeps the on-disk representation in one place.
pub fn write_manifest(
    path: &Path,
    classes: &[String],
    source: Option<&str>,
    records: &[ImageRecord],
) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = Vec::new();
    let header = HeaderRecord {
        classes: classes.to_vec(),
        source: source.map(|s| s.to_string()),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.push(b'\n');
    for rec in records {
        serde_json::to_writer(&mut out, rec)?;
        out.push(b'\n');
    }
    fs::write(path, out).with_context(|| format!("write manifest {}", path.display()))?;
    Ok(())
}

/// Read an 8-bit binary PGM (P5) file, rescaling intensities to [0,1].
/// Returns (width, height, row-major pixels).
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path).with_context(|| format!("read {}", path.display()))?;
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        // skip whitespace and '#' comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            bail!("truncated PGM header");
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P5" {
        bail!("not a binary PGM (magic {magic:?})");
    }
    let w: usize = token()?.parse().context("PGM width")?;
    let h: usize = token()?.parse().context("PGM height")?;
    let maxval: usize = token()?.parse().context("PGM maxval")?;
    if maxval == 0 || maxval > 255 {
        bail!("unsupported PGM maxval {maxval}");
    }
    pos += 1; // single whitespace after maxval
    if bytes.len() < pos + w * h {
        bail!("PGM pixel data truncated");
    }
    let pixels = bytes[pos..pos + w * h]
        .iter()
        .map(|&b| f64::from(b) / maxval as f64)
        .collect();
    Ok((w, h, pixels))
}

/// Write pixels in [0,1] as an 8-bit binary PGM (P5).
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[f64]) -> Result<()> {
    if pixels.len() != width * height {
        bail!("pixel count {} != {width}x{height}", pixels.len());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = Vec::with_capacity(pixels.len() + 32);
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.extend(
        pixels
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, out).with_context(|| format!("write {}", path.display()))?;
    Ok(())
}

/// One mini-batch in matrix form.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Mat,
    pub y_img: Mat,
    pub sentences: Vec<String>,
    pub y_text: Mat,
    pub masks: Mat,
}

/// Gather the given sample indices into a Batch.
pub fn assemble_batch(dataset: &Dataset, indices: &[usize]) -> Result<Batch> {
    if indices.is_empty() {
        bail!("empty batch");
    }
    let (h, w) = dataset.image_size;
    let c = dataset.classes.len();
    let n = indices.len();
    let mut images = Mat::zeros(n, h * w);
    let mut y_img = Mat::zeros(n, c);
    let mut y_text = Mat::zeros(n, c);
    let mut masks = Mat::zeros(n, c);
    let mut sentences = Vec::with_capacity(n);
    for (r, &i) in indices.iter().enumerate() {
        let s = &dataset.samples[i];
        images.row_mut(r).copy_from_slice(&s.image);
        y_img.row_mut(r).copy_from_slice(&s.image_labels);
        y_text.row_mut(r).copy_from_slice(&s.sentence_labels);
        masks.row_mut(r).copy_from_slice(&s.annotation_mask);
        sentences.push(s.sentence.clone());
    }
    Ok(Batch {
        images,
        y_img,
        sentences,
        y_text,
        masks,
    })
}

/// Per-seed epoch batching over sample indices (thin wrapper kept here so
/// callers never touch index math directly).
pub fn make_batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    Ok(duet_core::batching::epoch_batches(n, batch_size, seed, epoch)?)
}

/// Per-task, per-seed evaluation record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub task_name: String,
    pub seed: u64,
    pub protocol: String,
    pub per_class_recall: Vec<Option<f64>>,
    pub aca_base: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aca_novel: Option<f64>,
    pub aca_all: f64,
}
