//! Desk-scale dual encoders: a strided convolutional vision trunk with one or
//! two linear projection heads, and a hashed bag-of-words text encoder with a
//! single hidden layer and a linear projection. Both project onto the unit
//! hypersphere.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{invalid, CoreError, Result};
use crate::mat::{normalize_rows_backward, Mat};
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, relu_backward_inplace, relu_inplace,
    tanh_backward_inplace, tanh_inplace, Conv2d, Feat4, Linear, Param,
};
use crate::rng::{mix_seed, SeedRng};

pub const SHARED_PROJECTION: &str = "shared";
pub const IMAGE_LABEL_PROJECTION: &str = "I-L";
pub const IMAGE_TEXT_PROJECTION: &str = "I-T";

/// Construction parameters for the toy encoder pair.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub image_size: (usize, usize),
    /// Channel widths of the strided conv trunk.
    pub conv_channels: Vec<usize>,
    /// Vision feature dimension D_v (pre-projection).
    pub d_v: usize,
    /// Text feature dimension D_u.
    pub d_u: usize,
    /// Feature-hashing buckets for the bag-of-words tokenizer.
    pub buckets: usize,
    /// Projection output dimension D_p.
    pub d_p: usize,
    /// Two heads ("I-L"/"I-T") instead of one shared head.
    pub dual_projections: bool,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            image_size: (48, 48),
            conv_channels: alloc::vec![12, 24, 48],
            d_v: 128,
            d_u: 128,
            buckets: 4096,
            d_p: 512,
            dual_projections: false,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    fn validate(&self) -> Result<()> {
        if self.image_size.0 == 0
            || self.image_size.1 == 0
            || self.conv_channels.is_empty()
            || self.d_v == 0
            || self.d_u == 0
            || self.d_p == 0
            || self.buckets < 2
        {
            return Err(invalid("encoder dimensions must be positive (buckets >= 2)"));
        }
        Ok(())
    }
}

/// Vision encoder: conv trunk → global average pool → linear feature layer,
/// plus named linear projection heads onto the unit sphere.
#[derive(Clone)]
pub struct VisionEncoder {
    pub convs: Vec<Conv2d>,
    pub trunk_fc: Linear,
    pub projections: BTreeMap<String, Linear>,
    pub image_size: (usize, usize),
    pub d_v: usize,
    pub d_p: usize,
}

/// Forward cache for one vision trunk pass.
pub struct VisionCache {
    input: Feat4,
    cols: Vec<Mat>,
    post_relu: Vec<Feat4>,
    pooled: Mat,
}

/// Forward cache for one projection head pass.
pub struct ProjCache {
    features: Mat,
    normalized: Mat,
    norms: Vec<f64>,
}

impl VisionEncoder {
    /// Batch of grayscale images (rows = flattened H×W in [0,1]) → NHWC.
    fn to_feat4(&self, images: &Mat) -> Result<Feat4> {
        let (h, w) = self.image_size;
        if images.cols != h * w {
            return Err(invalid(format!(
                "expected {}x{} images ({} pixels), got {} per row",
                h,
                w,
                h * w,
                images.cols
            )));
        }
        Ok(Feat4 {
            data: images.data.clone(),
            b: images.rows,
            h,
            w,
            c: 1,
        })
    }

    /// Pre-projection features ṽ (un-normalized), with backward cache.
    pub fn forward_features(&self, images: &Mat) -> Result<(Mat, VisionCache)> {
        let mut x = self.to_feat4(images)?;
        let input = x.clone();
        let mut cols = Vec::with_capacity(self.convs.len());
        let mut post_relu = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let (mut y, c) = conv.forward(&x);
            relu_inplace(&mut y.data);
            cols.push(c);
            post_relu.push(y.clone());
            x = y;
        }
        let pooled = global_avg_pool(&x);
        let features = self.trunk_fc.forward(&pooled);
        Ok((
            features,
            VisionCache {
                input,
                cols,
                post_relu,
                pooled,
            },
        ))
    }

    /// Backward through fc, pool and the conv stack; accumulates grads.
    pub fn backward_features(&mut self, cache: &VisionCache, d_features: &Mat) {
        let d_pooled = self.trunk_fc.backward(&cache.pooled, d_features);
        let last = cache.post_relu.last().expect("conv stack is non-empty");
        let mut d = global_avg_pool_backward(&d_pooled, last.h, last.w);
        for li in (0..self.convs.len()).rev() {
            relu_backward_inplace(&mut d.data, &cache.post_relu[li].data);
            let in_shape = if li == 0 {
                (cache.input.b, cache.input.h, cache.input.w)
            } else {
                let prev = &cache.post_relu[li - 1];
                (prev.b, prev.h, prev.w)
            };
            d = self.convs[li].backward(in_shape, &cache.cols[li], &d);
        }
    }

    /// Unit-norm projection of pre-computed features through a named head.
    pub fn project(&self, name: &str, features: &Mat) -> Result<(Mat, ProjCache)> {
        let head = self
            .projections
            .get(name)
            .ok_or_else(|| CoreError::NotFound(format!("projection head '{name}'")))?;
        let raw = head.forward(features);
        let (normalized, norms) = raw.normalize_rows();
        Ok((
            normalized.clone(),
            ProjCache {
                features: features.clone(),
                normalized,
                norms,
            },
        ))
    }

    /// Backward through one projection head; returns d_features.
    pub fn project_backward(&mut self, name: &str, cache: &ProjCache, d_out: &Mat) -> Result<Mat> {
        let head = self
            .projections
            .get_mut(name)
            .ok_or_else(|| CoreError::NotFound(format!("projection head '{name}'")))?;
        let d_raw = normalize_rows_backward(d_out, &cache.normalized, &cache.norms);
        Ok(head.backward(&cache.features, &d_raw))
    }

    /// Convenience: images → named projection (or "features" for raw ṽ).
    pub fn encode_images(&self, images: &Mat, projection: &str) -> Result<Mat> {
        let (features, _) = self.forward_features(images)?;
        if projection == "features" {
            return Ok(features);
        }
        Ok(self.project(projection, &features)?.0)
    }

    pub fn projection_names(&self) -> Vec<String> {
        self.projections.keys().cloned().collect()
    }

    pub fn visit_params(&mut self, f: &mut impl FnMut(&str, &mut Param)) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            f(&format!("vision.conv{i}.w"), &mut conv.w);
            f(&format!("vision.conv{i}.b"), &mut conv.b);
        }
        f("vision.fc.w", &mut self.trunk_fc.w);
        f("vision.fc.b", &mut self.trunk_fc.b);
        for (name, head) in self.projections.iter_mut() {
            f(&format!("vision.proj.{name}.w"), &mut head.w);
            f(&format!("vision.proj.{name}.b"), &mut head.b);
        }
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.len());
        n
    }
}

/// Text encoder: hashed bag-of-words embedding, one tanh hidden layer, linear
/// projection onto the unit sphere.
#[derive(Clone)]
pub struct TextEncoder {
    /// buckets × d_u embedding table.
    pub embedding: Param,
    pub hidden: Linear,
    pub projection: Linear,
    pub buckets: usize,
    pub d_u: usize,
    pub d_p: usize,
}

/// Forward cache for one text batch.
pub struct TextCache {
    token_ids: Vec<Vec<usize>>,
    bow: Mat,
    post_tanh: Mat,
    normalized: Mat,
    norms: Vec<f64>,
}

/// FNV-1a hash of a token into 1..buckets; bucket 0 is reserved for the null
/// token of empty strings.
pub fn hash_token(token: &str, buckets: usize) -> usize {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in token.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    1 + (h % (buckets as u64 - 1)) as usize
}

/// Lowercased alphanumeric tokens hashed into buckets; empty text maps to the
/// reserved null bucket.
pub fn tokenize(text: &str, buckets: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut token = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                token.push(lc);
            }
        } else if !token.is_empty() {
            out.push(hash_token(&token, buckets));
            token.clear();
        }
    }
    if !token.is_empty() {
        out.push(hash_token(&token, buckets));
    }
    if out.is_empty() {
        out.push(0);
    }
    out
}

impl TextEncoder {
    /// Unit-norm projected embeddings for a batch of sentences.
    pub fn forward(&self, sentences: &[&str]) -> Result<(Mat, TextCache)> {
        if sentences.is_empty() {
            return Err(invalid("empty sentence batch"));
        }
        let token_ids: Vec<Vec<usize>> = sentences.iter().map(|s| tokenize(s, self.buckets)).collect();
        let mut bow = Mat::zeros(sentences.len(), self.d_u);
        for (i, ids) in token_ids.iter().enumerate() {
            let inv = 1.0 / ids.len() as f64;
            let row = bow.row_mut(i);
            for &id in ids {
                let emb = self.embedding.value.row(id);
                for (r, e) in row.iter_mut().zip(emb.iter()) {
                    *r += inv * e;
                }
            }
        }
        let mut post_tanh = self.hidden.forward(&bow);
        tanh_inplace(&mut post_tanh.data);
        let raw = self.projection.forward(&post_tanh);
        let (normalized, norms) = raw.normalize_rows();
        Ok((
            normalized.clone(),
            TextCache {
                token_ids,
                bow,
                post_tanh,
                normalized,
                norms,
            },
        ))
    }

    /// Backward for a batch; accumulates grads into all text parameters.
    pub fn backward(&mut self, cache: &TextCache, d_out: &Mat) {
        let d_raw = normalize_rows_backward(d_out, &cache.normalized, &cache.norms);
        let mut d_hidden_out = self.projection.backward(&cache.post_tanh, &d_raw);
        tanh_backward_inplace(&mut d_hidden_out.data, &cache.post_tanh.data);
        let d_bow = self.hidden.backward(&cache.bow, &d_hidden_out);
        for (i, ids) in cache.token_ids.iter().enumerate() {
            let inv = 1.0 / ids.len() as f64;
            let src = d_bow.row(i);
            for &id in ids {
                let dst = self.embedding.grad.row_mut(id);
                for (d, s) in dst.iter_mut().zip(src.iter()) {
                    *d += inv * s;
                }
            }
        }
    }

    /// Convenience eval-mode encode.
    pub fn encode_texts(&self, sentences: &[&str]) -> Result<Mat> {
        Ok(self.forward(sentences)?.0)
    }

    pub fn visit_params(&mut self, f: &mut impl FnMut(&str, &mut Param)) {
        f("text.embedding", &mut self.embedding);
        f("text.hidden.w", &mut self.hidden.w);
        f("text.hidden.b", &mut self.hidden.b);
        f("text.proj.w", &mut self.projection.w);
        f("text.proj.b", &mut self.projection.b);
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.len());
        n
    }
}

/// Build the seeded desk-scale encoder pair.
pub fn build_toy_encoders(config: &EncoderConfig) -> Result<(VisionEncoder, TextEncoder)> {
    config.validate()?;
    let mut rng = SeedRng::new(mix_seed(config.seed, 0x656e_636f));

    let mut convs = Vec::new();
    let mut in_c = 1;
    for &out_c in &config.conv_channels {
        convs.push(Conv2d::new(in_c, out_c, 3, 2, 1, &mut rng));
        in_c = out_c;
    }
    let trunk_fc = Linear::new(in_c, config.d_v, &mut rng);
    let mut projections = BTreeMap::new();
    if config.dual_projections {
        projections.insert(
            IMAGE_LABEL_PROJECTION.to_string(),
            Linear::new(config.d_v, config.d_p, &mut rng),
        );
        projections.insert(
            IMAGE_TEXT_PROJECTION.to_string(),
            Linear::new(config.d_v, config.d_p, &mut rng),
        );
    } else {
        projections.insert(
            SHARED_PROJECTION.to_string(),
            Linear::new(config.d_v, config.d_p, &mut rng),
        );
    }
    let vision = VisionEncoder {
        convs,
        trunk_fc,
        projections,
        image_size: config.image_size,
        d_v: config.d_v,
        d_p: config.d_p,
    };

    let embedding = {
        let bound = libm::sqrt(1.0 / config.d_u as f64);
        let data: Vec<f64> = (0..config.buckets * config.d_u)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        Param::new(Mat::from_vec(config.buckets, config.d_u, data)?, true)
    };
    let hidden = Linear::new(config.d_u, config.d_u, &mut rng);
    let projection = Linear::new(config.d_u, config.d_p, &mut rng);
    let text = TextEncoder {
        embedding,
        hidden,
        projection,
        buckets: config.buckets,
        d_u: config.d_u,
        d_p: config.d_p,
    };
    Ok((vision, text))
}
