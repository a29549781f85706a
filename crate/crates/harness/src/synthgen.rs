//! Deterministic synthetic corpus generator: grayscale images with geometric
//! finding motifs, templated report sentences, sentence-level labels, and
//! partially labeled sub-dataset assemblies.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use duet_core::rng::{mix_seed, SeedRng};
use serde::{Deserialize, Serialize};

use crate::datamodel::{write_manifest, write_pgm, ImageRecord, SentenceRecord};
use crate::tasks::{TaskManifest, TaskSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotifKind {
    None,
    BarsH,
    BarsV,
    Blob,
    Ring,
    Grad,
    Cross,
    Checker,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FindingSpec {
    pub name: String,
    pub motif: MotifKind,
    pub base: bool,
    pub templates: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub image_size: (usize, usize),
    pub findings: Vec<FindingSpec>,
    /// Symmetric co-occurrence probabilities between motif findings (indexed
    /// like `findings`; entries for the no-finding class are ignored).
    pub co_occurrence: Vec<Vec<f64>>,
    /// Probability an image is a clean no-finding image.
    pub no_finding_rate: f64,
    /// Probability a report gains a negated sentence about an absent finding.
    pub negation_rate: f64,
    /// Probability an asserted base finding is written as uncertain (-1).
    pub uncertain_rate: f64,
    pub noise_sigma: f64,
    pub n_pretrain: usize,
    /// Sizes of the two partially labeled sub-datasets.
    pub n_partial_main: usize,
    pub n_partial_extra: usize,
    pub test_per_class: usize,
    pub train_per_class: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            image_size: (48, 48),
            findings: default_findings(),
            co_occurrence: uniform_co_occurrence(8, 0.15),
            no_finding_rate: 0.15,
            negation_rate: 0.2,
            uncertain_rate: 0.02,
            noise_sigma: 0.05,
            n_pretrain: 6000,
            n_partial_main: 2500,
            n_partial_extra: 1200,
            test_per_class: 200,
            train_per_class: 32,
            seed: 0,
        }
    }
}

pub fn uniform_co_occurrence(c: usize, p: f64) -> Vec<Vec<f64>> {
    (0..c)
        .map(|i| (0..c).map(|j| if i == j { 0.0 } else { p }).collect())
        .collect()
}

fn default_findings() -> Vec<FindingSpec> {
    let f = |name: &str, motif, base, templates: &[&str]| FindingSpec {
        name: name.to_string(),
        motif,
        base,
        templates: templates.iter().map(|s| s.to_string()).collect(),
    };
    vec![
        f(
            "no_finding",
            MotifKind::None,
            true,
            &["lungs are clear with no acute findings", "unremarkable study, clear fields"],
        ),
        f(
            "bars_h",
            MotifKind::BarsH,
            true,
            &["horizontal band pattern across the field", "stacked horizontal stripes are seen"],
        ),
        f(
            "bars_v",
            MotifKind::BarsV,
            true,
            &["vertical band pattern in the field", "upright vertical stripes are present"],
        ),
        f(
            "blob",
            MotifKind::Blob,
            true,
            &["a dense rounded blob opacity", "focal blob lesion is noted"],
        ),
        f(
            "ring",
            MotifKind::Ring,
            true,
            &["a thin ring shadow is visible", "annular ring lucency is identified"],
        ),
        f(
            "grad",
            MotifKind::Grad,
            true,
            &["diffuse gradient haziness toward one side", "graded shading across the image"],
        ),
        f(
            "cross",
            MotifKind::Cross,
            false,
            &["a bright cross marking is observed", "plus shaped cross figure is present"],
        ),
        f(
            "checker",
            MotifKind::Checker,
            false,
            &["a checkered mosaic patch appears", "checkerboard texture region is seen"],
        ),
    ]
}

/// Paths produced by one generation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusBundle {
    pub root: PathBuf,
    pub pretrain_manifest: PathBuf,
    pub partial_main_manifest: PathBuf,
    pub partial_extra_manifest: PathBuf,
    pub tasks: BTreeMap<String, PathBuf>,
    pub audit: PathBuf,
}

// ---------------------------------------------------------------------------
// rendering

fn render(motifs: &[MotifKind], h: usize, w: usize, rng: &mut SeedRng, sigma: f64) -> Vec<f64> {
    let mut img = vec![0.15; h * w];
    for &m in motifs {
        draw_motif(&mut img, h, w, m, rng);
    }
    for p in img.iter_mut() {
        *p = (*p + sigma * rng.normal()).clamp(0.0, 1.0);
    }
    img
}

fn draw_motif(img: &mut [f64], h: usize, w: usize, motif: MotifKind, rng: &mut SeedRng) {
    let amp = rng.uniform(0.5, 0.7);
    match motif {
        MotifKind::None => {}
        MotifKind::BarsH => {
            let y0 = rng.below(h - 24) + 2;
            let x0 = rng.below(8) + 2;
            let x1 = w - 2 - rng.below(8);
            for bar in 0..4 {
                let top = y0 + bar * 6;
                for y in top..top + 3 {
                    for x in x0..x1 {
                        img[y * w + x] += amp;
                    }
                }
            }
        }
        MotifKind::BarsV => {
            let x0 = rng.below(w - 24) + 2;
            let y0 = rng.below(8) + 2;
            let y1 = h - 2 - rng.below(8);
            for bar in 0..4 {
                let left = x0 + bar * 6;
                for x in left..left + 3 {
                    for y in y0..y1 {
                        img[y * w + x] += amp;
                    }
                }
            }
        }
        MotifKind::Blob => {
            let cy = rng.uniform(12.0, h as f64 - 12.0);
            let cx = rng.uniform(12.0, w as f64 - 12.0);
            let r = rng.uniform(5.0, 8.0);
            for y in 0..h {
                for x in 0..w {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    img[y * w + x] += amp * (-d2 / (2.0 * (r / 1.6).powi(2))).exp();
                }
            }
        }
        MotifKind::Ring => {
            let cy = rng.uniform(15.0, h as f64 - 15.0);
            let cx = rng.uniform(15.0, w as f64 - 15.0);
            let r = rng.uniform(9.0, 13.0);
            for y in 0..h {
                for x in 0..w {
                    let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                    if (d - r).abs() < 2.0 {
                        img[y * w + x] += amp;
                    }
                }
            }
        }
        MotifKind::Grad => {
            let horizontal = rng.below(2) == 0;
            let flip = rng.below(2) == 0;
            let g = rng.uniform(0.45, 0.6);
            for y in 0..h {
                for x in 0..w {
                    let t = if horizontal {
                        x as f64 / (w - 1) as f64
                    } else {
                        y as f64 / (h - 1) as f64
                    };
                    let t = if flip { 1.0 - t } else { t };
                    img[y * w + x] += g * t;
                }
            }
        }
        MotifKind::Cross => {
            let cy = rng.below(h - 28) + 14;
            let cx = rng.below(w - 28) + 14;
            let arm = rng.below(4) + 9;
            for d in 0..=2 * arm {
                let t = d as isize - arm as isize;
                for off in -1isize..=1 {
                    let y = (cy as isize + t) as usize;
                    let x = (cx as isize + off) as usize;
                    img[y * w + x] += amp;
                    let y = (cy as isize + off) as usize;
                    let x = (cx as isize + t) as usize;
                    img[y * w + x] += amp;
                }
            }
        }
        MotifKind::Checker => {
            let size = 18;
            let y0 = rng.below(h - size - 4) + 2;
            let x0 = rng.below(w - size - 4) + 2;
            for y in 0..size {
                for x in 0..size {
                    if (y / 3 + x / 3) % 2 == 0 {
                        img[(y0 + y) * w + (x0 + x)] += amp;
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// corpus assembly

struct Drawn {
    /// Indices into config.findings of active motif findings (empty = clean).
    active: Vec<usize>,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.findings.len();
        if self.co_occurrence.len() != c || self.co_occurrence.iter().any(|r| r.len() != c) {
            bail!("co-occurrence matrix must be {c}x{c}");
        }
        for i in 0..c {
            for j in 0..c {
                let p = self.co_occurrence[i][j];
                if !(0.0..=1.0).contains(&p) || (p - self.co_occurrence[j][i]).abs() > 1e-12 {
                    bail!("co-occurrence matrix must be symmetric with entries in [0,1]");
                }
            }
        }
        if self.findings.iter().any(|f| f.templates.len() < 2) {
            bail!("every finding needs at least 2 sentence templates");
        }
        if self.no_finding_index().is_none() {
            bail!("config must declare a no-finding class (motif = none)");
        }
        if self.image_size.0 < 48 || self.image_size.1 < 48 {
            bail!("image size must be at least 48x48 for the motif library");
        }
        Ok(())
    }

    fn no_finding_index(&self) -> Option<usize> {
        self.findings.iter().position(|f| f.motif == MotifKind::None)
    }

    fn motif_indices(&self) -> Vec<usize> {
        (0..self.findings.len())
            .filter(|&i| self.findings[i].motif != MotifKind::None)
            .collect()
    }

    fn base_class_names(&self) -> Vec<String> {
        self.findings
            .iter()
            .filter(|f| f.base)
            .map(|f| f.name.clone())
            .collect()
    }

    /// Sample the latent finding set for one pre-training image.
    fn draw_findings(&self, rng: &mut SeedRng) -> Drawn {
        if rng.next_f64() < self.no_finding_rate {
            return Drawn { active: Vec::new() };
        }
        let motifs = self.motif_indices();
        let primary = motifs[rng.below(motifs.len())];
        let mut active = vec![primary];
        for &other in &motifs {
            if other != primary && rng.next_f64() < self.co_occurrence[primary][other] {
                active.push(other);
            }
        }
        // novel findings never appear without a base finding: their label
        // columns do not exist, so a novel-only image would read as clean
        if !active.iter().any(|&i| self.findings[i].base) {
            let base_motifs: Vec<usize> = motifs
                .iter()
                .copied()
                .filter(|&i| self.findings[i].base)
                .collect();
            active.push(base_motifs[rng.below(base_motifs.len())]);
        }
        active.sort_unstable();
        Drawn { active }
    }
}

/// Build one pre-training record (labels restricted to base classes) and the
/// audit entry listing every active finding by name.
fn make_record(
    config: &GeneratorConfig,
    image_rel: String,
    drawn: &Drawn,
    rng: &mut SeedRng,
) -> (ImageRecord, Vec<String>) {
    let base_names = config.base_class_names();
    let class_col = |fi: usize| -> Option<usize> {
        let f = &config.findings[fi];
        if f.base {
            base_names.iter().position(|n| *n == f.name)
        } else {
            None
        }
    };
    let nf_col = base_names
        .iter()
        .position(|n| n == &config.findings[config.no_finding_index().unwrap()].name)
        .unwrap();
    let c = base_names.len();
    let mut y_img = vec![0i8; c];
    let mut sentences = Vec::new();

    if drawn.active.is_empty() {
        y_img[nf_col] = 1;
        let nf = config.no_finding_index().unwrap();
        let t = &config.findings[nf].templates;
        let mut y_text = vec![0i8; c];
        y_text[nf_col] = 1;
        sentences.push(SentenceRecord {
            text: t[rng.below(t.len())].clone(),
            y_text,
        });
    } else {
        for &fi in &drawn.active {
            if let Some(col) = class_col(fi) {
                y_img[col] = 1;
            }
        }
        // at most two finding sentences per report: image-level labels may
        // cover findings no sentence mentions
        let mut mention = drawn.active.clone();
        rng.shuffle(&mut mention);
        mention.truncate(2);
        mention.sort_unstable();
        for &fi in &mention {
            let f = &config.findings[fi];
            let col = class_col(fi);
            let mut y_text = vec![0i8; c];
            let mut text = f.templates[rng.below(f.templates.len())].clone();
            let uncertain =
                col.is_some() && rng.next_f64() < config.uncertain_rate;
            if uncertain {
                // hedged mention: image label recorded as uncertain, sentence
                // asserts nothing
                y_img[col.unwrap()] = -1;
                text = format!("possibly {text}");
            } else if let Some(col) = col {
                y_text[col] = 1;
            }
            sentences.push(SentenceRecord { text, y_text });
        }
        if rng.next_f64() < config.negation_rate {
            let absent: Vec<usize> = config
                .motif_indices()
                .into_iter()
                .filter(|i| !drawn.active.contains(i))
                .collect();
            if !absent.is_empty() {
                let fi = absent[rng.below(absent.len())];
                sentences.push(SentenceRecord {
                    text: format!("no {} is seen", config.findings[fi].name.replace('_', " ")),
                    y_text: vec![0i8; c],
                });
            }
        }
    }
    let names = drawn
        .active
        .iter()
        .map(|&fi| config.findings[fi].name.clone())
        .collect();
    (
        ImageRecord {
            image: image_rel,
            y_img,
            mask: None,
            sentences,
            source: None,
        },
        names,
    )
}

fn generate_split(
    config: &GeneratorConfig,
    root: &Path,
    prefix: &str,
    count: usize,
    seed_tag: u64,
    audit: &mut BTreeMap<String, Vec<String>>,
) -> Result<Vec<ImageRecord>> {
    let (h, w) = config.image_size;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = SeedRng::new(mix_seed(config.seed, seed_tag.wrapping_add(i as u64)));
        let drawn = config.draw_findings(&mut rng);
        let motifs: Vec<MotifKind> = drawn.active.iter().map(|&fi| config.findings[fi].motif).collect();
        let pixels = render(&motifs, h, w, &mut rng, config.noise_sigma);
        let rel = format!("images/{prefix}_{i:05}.pgm");
        write_pgm(&root.join(&rel), w, h, &pixels)?;
        let (record, names) = make_record(config, rel.clone(), &drawn, &mut rng);
        audit.insert(rel, names);
        records.push(record);
    }
    Ok(records)
}

/// Render `count` single-purpose task images whose motif sets are given
/// explicitly (evaluation images never carry reports).
fn generate_task_images(
    config: &GeneratorConfig,
    root: &Path,
    prefix: &str,
    motif_sets: &[(usize, Vec<MotifKind>)],
    count_per: usize,
    seed_tag: u64,
    audit_names: &[Vec<String>],
    audit: &mut BTreeMap<String, Vec<String>>,
) -> Result<Vec<TaskSample>> {
    let (h, w) = config.image_size;
    let mut samples = Vec::new();
    for (slot, (class, motifs)) in motif_sets.iter().enumerate() {
        for i in 0..count_per {
            let mut rng = SeedRng::new(mix_seed(
                config.seed,
                seed_tag.wrapping_add((slot * count_per + i) as u64),
            ));
            let pixels = render(motifs, h, w, &mut rng, config.noise_sigma);
            let rel = format!("images/{prefix}_c{class}_{i:04}.pgm");
            write_pgm(&root.join(&rel), w, h, &pixels)?;
            audit.insert(rel.clone(), audit_names[slot].clone());
            samples.push(TaskSample {
                image: rel,
                class: *class,
            });
        }
    }
    Ok(samples)
}

fn prompts_for(config: &GeneratorConfig, name: &str) -> Vec<String> {
    config
        .findings
        .iter()
        .find(|f| f.name == name)
        .map(|f| f.templates.clone())
        .unwrap_or_else(|| {
            // disease-name prompts for classes with no pre-training templates
            vec![
                format!("findings of {name}"),
                format!("evidence of {name} disease"),
            ]
        })
}

/// Generate the full reference corpus: pre-training manifests (full and
/// partially labeled), four downstream tasks, and the sealed audit file.
pub fn generate_corpus(config: &GeneratorConfig, root: &Path) -> Result<CorpusBundle> {
    config.validate()?;
    fs::create_dir_all(root.join("images"))?;
    fs::create_dir_all(root.join("tasks"))?;
    let mut audit: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let base_names = config.base_class_names();

    // pre-training assemblies
    let pretrain = generate_split(config, root, "pre", config.n_pretrain, 0x1000_0000, &mut audit)?;
    let pretrain_path = root.join("pretrain.jsonl");
    write_manifest(&pretrain_path, &base_names, Some("main"), &pretrain)?;

    let partial_main = generate_split(
        config,
        root,
        "pm",
        config.n_partial_main,
        0x2000_0000,
        &mut audit,
    )?;
    let partial_main_path = root.join("partial_main.jsonl");
    write_manifest(&partial_main_path, &base_names, Some("main"), &partial_main)?;
    // the main sub-dataset labels only the first four base classes
    let plan: BTreeMap<String, Vec<String>> = [(
        "main".to_string(),
        base_names.iter().take(4).cloned().collect::<Vec<_>>(),
    )]
    .into_iter()
    .collect();
    apply_partial_labels(&partial_main_path, &plan, &partial_main_path)?;

    let partial_extra = generate_split(
        config,
        root,
        "pe",
        config.n_partial_extra,
        0x3000_0000,
        &mut audit,
    )?;
    let partial_extra_path = root.join("partial_extra.jsonl");
    write_manifest(
        &partial_extra_path,
        &base_names,
        Some("padchest_analog"),
        &partial_extra,
    )?;

    // downstream tasks
    let motif_of = |name: &str| -> MotifKind {
        config
            .findings
            .iter()
            .find(|f| f.name == name)
            .map(|f| f.motif)
            .unwrap()
    };
    let single = |name: &str| -> Vec<MotifKind> {
        match motif_of(name) {
            MotifKind::None => Vec::new(),
            m => vec![m],
        }
    };
    let mut tasks = BTreeMap::new();
    let build_task = |task_name: &str,
                          classes: Vec<String>,
                          base: Vec<bool>,
                          motif_sets: Vec<Vec<MotifKind>>,
                          compositions: BTreeMap<String, Vec<String>>,
                          with_train: bool,
                          seed_tag: u64,
                          audit: &mut BTreeMap<String, Vec<String>>|
     -> Result<PathBuf> {
        let audit_names: Vec<Vec<String>> = classes.iter().map(|c| vec![c.clone()]).collect();
        let sets: Vec<(usize, Vec<MotifKind>)> =
            motif_sets.into_iter().enumerate().collect();
        // image paths become relative to the task file's directory
        let rebase = |mut samples: Vec<TaskSample>| {
            for s in samples.iter_mut() {
                s.image = format!("../{}", s.image);
            }
            samples
        };
        let test = rebase(generate_task_images(
            config,
            root,
            &format!("{task_name}_test"),
            &sets,
            config.test_per_class,
            seed_tag,
            &audit_names,
            audit,
        )?);
        let train = if with_train {
            rebase(generate_task_images(
                config,
                root,
                &format!("{task_name}_train"),
                &sets,
                config.train_per_class,
                seed_tag ^ 0x0055_5555,
                &audit_names,
                audit,
            )?)
        } else {
            Vec::new()
        };
        let prompt_sets: BTreeMap<String, Vec<String>> = classes
            .iter()
            .map(|c| (c.clone(), prompts_for(config, c)))
            .collect();
        let task = TaskManifest {
            name: task_name.to_string(),
            classes,
            base,
            train,
            test,
            prompt_sets,
            compositions,
            root: root.join("tasks"),
        };
        let path = root.join(format!("tasks/{task_name}.json"));
        task.save(&path)?;
        Ok(path)
    };

    // base task: the six pre-training classes
    let base_motifs: Vec<Vec<MotifKind>> = base_names.iter().map(|n| single(n)).collect();
    tasks.insert(
        "base".to_string(),
        build_task(
            "base",
            base_names.clone(),
            vec![true; base_names.len()],
            base_motifs,
            BTreeMap::new(),
            true,
            0x4000_0000,
            &mut audit,
        )?,
    );

    // mixed task: base classes plus the novel findings
    let novel_names: Vec<String> = config
        .findings
        .iter()
        .filter(|f| !f.base)
        .map(|f| f.name.clone())
        .collect();
    let mut mixed_classes = base_names.clone();
    mixed_classes.extend(novel_names.iter().cloned());
    let mut mixed_base = vec![true; base_names.len()];
    mixed_base.extend(std::iter::repeat(false).take(novel_names.len()));
    let mixed_motifs: Vec<Vec<MotifKind>> = mixed_classes.iter().map(|n| single(n)).collect();
    tasks.insert(
        "mixed".to_string(),
        build_task(
            "mixed",
            mixed_classes,
            mixed_base,
            mixed_motifs,
            BTreeMap::new(),
            true,
            0x5000_0000,
            &mut audit,
        )?,
    );

    // composed-disease tasks: covidx co-renders blob and ring
    for (task_name, variant_4class, seed_tag) in
        [("composed2", false, 0x6000_0000u64), ("composed4", true, 0x7000_0000)]
    {
        let path = build_composed_task(
            config,
            root,
            task_name,
            "covidx",
            &["blob".to_string(), "ring".to_string()],
            variant_4class,
            seed_tag,
            &mut audit,
        )?;
        tasks.insert(task_name.to_string(), path);
    }

    // sealed audit file: latent truths, test-suite use only
    let audit_path = root.join("audit.json");
    let payload = serde_json::json!({
        "config": config,
        "images": audit,
    });
    fs::write(&audit_path, serde_json::to_string_pretty(&payload)?)
        .with_context(|| format!("write audit {}", audit_path.display()))?;

    Ok(CorpusBundle {
        root: root.to_path_buf(),
        pretrain_manifest: pretrain_path,
        partial_main_manifest: partial_main_path,
        partial_extra_manifest: partial_extra_path,
        tasks,
        audit: audit_path,
    })
}

/// Build a composed-disease task: the new disease co-renders its constituent
/// base findings' motifs. The 2-class variant is {normal, disease}; the
/// 4-class variant adds the constituents themselves as confusers.
#[allow(clippy::too_many_arguments)]
pub fn build_composed_task(
    config: &GeneratorConfig,
    root: &Path,
    task_name: &str,
    disease: &str,
    constituents: &[String],
    four_class: bool,
    seed_tag: u64,
    audit: &mut BTreeMap<String, Vec<String>>,
) -> Result<PathBuf> {
    let base_names = config.base_class_names();
    for c in constituents {
        if !base_names.contains(c) {
            bail!("composed constituent '{c}' is not a base finding");
        }
    }
    let nf_name = config.findings[config.no_finding_index().unwrap()].name.clone();
    let motif_of = |name: &str| {
        config
            .findings
            .iter()
            .find(|f| f.name == name)
            .map(|f| f.motif)
            .unwrap()
    };
    let disease_motifs: Vec<MotifKind> = constituents.iter().map(|c| motif_of(c)).collect();

    let mut classes = vec![nf_name.clone(), disease.to_string()];
    let mut base = vec![true, false];
    let mut motif_sets: Vec<Vec<MotifKind>> = vec![Vec::new(), disease_motifs];
    if four_class {
        for c in constituents {
            classes.push(c.clone());
            base.push(true);
            motif_sets.push(vec![motif_of(c)]);
        }
    }
    let audit_names: Vec<Vec<String>> = classes.iter().map(|c| vec![c.clone()]).collect();
    let sets: Vec<(usize, Vec<MotifKind>)> = motif_sets.into_iter().enumerate().collect();
    let rebase = |mut samples: Vec<TaskSample>| {
        for s in samples.iter_mut() {
            s.image = format!("../{}", s.image);
        }
        samples
    };
    let test = rebase(generate_task_images(
        config,
        root,
        &format!("{task_name}_test"),
        &sets,
        config.test_per_class,
        seed_tag,
        &audit_names,
        audit,
    )?);
    let train = rebase(generate_task_images(
        config,
        root,
        &format!("{task_name}_train"),
        &sets,
        config.train_per_class,
        seed_tag ^ 0x0055_5555,
        &audit_names,
        audit,
    )?);
    let prompt_sets: BTreeMap<String, Vec<String>> = classes
        .iter()
        .map(|c| (c.clone(), prompts_for(config, c)))
        .collect();
    let compositions: BTreeMap<String, Vec<String>> =
        [(disease.to_string(), constituents.to_vec())].into_iter().collect();
    let task = TaskManifest {
        name: task_name.to_string(),
        classes,
        base,
        train,
        test,
        prompt_sets,
        compositions,
        root: root.join("tasks"),
    };
    let path = root.join(format!("tasks/{task_name}.json"));
    task.save(&path)?;
    Ok(path)
}

/// Rewrite a manifest's annotation masks per sub-dataset: each source named in
/// the plan keeps labels only for its listed classes; masked-out label values
/// are zeroed in the file.
pub fn apply_partial_labels(
    manifest_in: &Path,
    plan: &BTreeMap<String, Vec<String>>,
    manifest_out: &Path,
) -> Result<()> {
    let text = fs::read_to_string(manifest_in)
        .with_context(|| format!("read manifest {}", manifest_in.display()))?;
    let mut lines = text.lines();
    let header_line = lines.next().context("empty manifest")?;
    let header: serde_json::Value = serde_json::from_str(header_line)?;
    let classes: Vec<String> = serde_json::from_value(header["classes"].clone())?;
    let default_source = header["source"].as_str().unwrap_or("default").to_string();

    let mut sources_seen = std::collections::BTreeSet::new();
    let mut records: Vec<ImageRecord> = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: ImageRecord = serde_json::from_str(line)?;
        let source = rec.source.clone().unwrap_or_else(|| default_source.clone());
        sources_seen.insert(source.clone());
        if let Some(labeled) = plan.get(&source) {
            let mask: Vec<i8> = classes
                .iter()
                .map(|c| i8::from(labeled.contains(c)))
                .collect();
            for (v, &m) in rec.y_img.iter_mut().zip(&mask) {
                if m == 0 {
                    *v = 0;
                }
            }
            for s in rec.sentences.iter_mut() {
                for (v, &m) in s.y_text.iter_mut().zip(&mask) {
                    if m == 0 {
                        *v = 0;
                    }
                }
            }
            rec.mask = Some(mask);
        } else {
            rec.mask = Some(vec![1; classes.len()]);
        }
        records.push(rec);
    }
    for source in plan.keys() {
        if !sources_seen.contains(source) {
            bail!("annotation plan names unknown sub-dataset '{source}'");
        }
    }
    write_manifest(manifest_out, &classes, Some(&default_source), &records)
}
