//! Named unit-norm class prototypes with provenance tracking.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::encoders::TextEncoder;
use crate::error::{invalid, CoreError, Result};
use crate::mat::Mat;
use crate::mathx::EPS_NORM;

/// Where a prototype vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    LearnedWeight,
    TextPrompt,
    Composed,
}

/// Which projection space a prototype scores against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Space {
    Shared,
    #[serde(rename = "I-L")]
    ImageLabel,
    #[serde(rename = "I-T")]
    ImageText,
}

impl Space {
    pub fn projection_name(&self) -> &'static str {
        match self {
            Space::Shared => crate::encoders::SHARED_PROJECTION,
            Space::ImageLabel => crate::encoders::IMAGE_LABEL_PROJECTION,
            Space::ImageText => crate::encoders::IMAGE_TEXT_PROJECTION,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PrototypeEntry {
    pub name: String,
    pub vector: Vec<f64>,
    pub provenance: Provenance,
    pub space: Space,
}

/// A set of named, unit-norm class vectors.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct PrototypeBank {
    entries: Vec<PrototypeEntry>,
}

fn unit(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if n <= EPS_NORM {
        return Err(invalid("degenerate composition (zero vector)"));
    }
    for x in &mut v {
        *x /= n;
    }
    Ok(v)
}

impl PrototypeBank {
    pub fn new() -> Self {
        PrototypeBank::default()
    }

    pub fn entries(&self) -> &[PrototypeEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&PrototypeEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn insert(&mut self, entry: PrototypeEntry) -> Result<()> {
        if self.get(&entry.name).is_some() {
            return Err(invalid(format!("duplicate prototype '{}'", entry.name)));
        }
        if entry.provenance == Provenance::LearnedWeight && entry.space == Space::ImageText {
            return Err(invalid("learned-weight prototypes live in the I-L or shared space"));
        }
        let mut e = entry;
        e.vector = unit(e.vector)?;
        self.entries.push(e);
        Ok(())
    }

    /// Merge entries from another bank (names must not collide).
    pub fn extend(&mut self, other: &PrototypeBank) -> Result<()> {
        for e in &other.entries {
            self.insert(e.clone())?;
        }
        Ok(())
    }

    /// Bank restricted to (and ordered by) the given names.
    pub fn restrict(&self, names: &[String]) -> Result<PrototypeBank> {
        let mut out = PrototypeBank::new();
        for n in names {
            let e = self
                .get(n)
                .ok_or_else(|| CoreError::NotFound(format!("prototype '{n}'")))?;
            out.entries.push(e.clone());
        }
        Ok(out)
    }

    /// Add a composed prototype: the unit-normalized mean of existing entries.
    pub fn compose(&mut self, new_name: &str, constituents: &[String]) -> Result<()> {
        if constituents.is_empty() {
            return Err(invalid("composition needs at least one constituent"));
        }
        let mut space = None;
        let mut mean: Option<Vec<f64>> = None;
        for c in constituents {
            let e = self
                .get(c)
                .ok_or_else(|| CoreError::NotFound(format!("constituent '{c}'")))?;
            match space {
                None => space = Some(e.space),
                Some(s) if s != e.space => {
                    return Err(invalid("constituents span mixed projection spaces"))
                }
                _ => {}
            }
            match &mut mean {
                None => mean = Some(e.vector.clone()),
                Some(m) => {
                    for (a, b) in m.iter_mut().zip(e.vector.iter()) {
                        *a += b;
                    }
                }
            }
        }
        let mut m = mean.unwrap();
        let inv = 1.0 / constituents.len() as f64;
        for x in &mut m {
            *x *= inv;
        }
        // back onto the unit sphere so composed cosines are comparable with
        // the single-prototype ones
        let norm = libm::sqrt(m.iter().map(|x| x * x).sum::<f64>()).max(EPS_NORM);
        for x in &mut m {
            *x /= norm;
        }
        self.insert(PrototypeEntry {
            name: new_name.to_string(),
            vector: m,
            provenance: Provenance::Composed,
            space: space.unwrap(),
        })
    }
}

/// Prototypes from rows of a class-weight matrix (re-normalized on read).
pub fn bank_from_weights(w: &Mat, names: &[String], space: Space) -> Result<PrototypeBank> {
    if w.rows != names.len() {
        return Err(invalid(format!(
            "{} weight rows vs {} names",
            w.rows,
            names.len()
        )));
    }
    let mut bank = PrototypeBank::new();
    for (i, name) in names.iter().enumerate() {
        bank.insert(PrototypeEntry {
            name: name.clone(),
            vector: w.row(i).to_vec(),
            provenance: Provenance::LearnedWeight,
            space,
        })?;
    }
    Ok(bank)
}

/// Prototypes from prompt ensembles: unit-normalized mean of the unit-norm
/// prompt embeddings per class.
pub fn bank_from_prompts(
    encoder: &TextEncoder,
    prompt_sets: &[(String, Vec<String>)],
    space: Space,
) -> Result<PrototypeBank> {
    let mut bank = PrototypeBank::new();
    for (name, prompts) in prompt_sets {
        if prompts.is_empty() {
            return Err(invalid(format!("empty prompt list for class '{name}'")));
        }
        let refs: Vec<&str> = prompts.iter().map(|s| s.as_str()).collect();
        let emb = encoder.encode_texts(&refs)?;
        let mut mean = alloc::vec![0.0; emb.cols];
        for i in 0..emb.rows {
            for (m, x) in mean.iter_mut().zip(emb.row(i).iter()) {
                *m += x;
            }
        }
        let inv = 1.0 / emb.rows as f64;
        for m in &mut mean {
            *m *= inv;
        }
        bank.insert(PrototypeEntry {
            name: name.clone(),
            vector: mean,
            provenance: Provenance::TextPrompt,
            space,
        })?;
    }
    Ok(bank)
}
