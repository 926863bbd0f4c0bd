//! In-process differentiable backend: hashed n-gram text tower and an
//! affine + activation image tower, both optionally L2-normalized.
//!
//! Parameters are stored as `f32` (the on-disk precision) and all arithmetic
//! runs in `f64`, so a reloaded backend behaves bit-identically.

use std::fs;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tokenizer::{SparseTokens, Tokenizer};
use super::{BackendInfo, Embedding, EmbeddingBackend, ImageTensor, SimilarityGradient, TextQuery};
use crate::codec::{BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::seed;

pub const BACKEND_MAGIC: &[u8; 8] = b"TUNI-BK1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    #[inline]
    pub(crate) fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    pub(crate) fn derivative_from_output(self, h: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - h * h,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub embedding_dim: usize,
    pub image_len: usize,
    pub tokenizer: Tokenizer,
    pub activation: Activation,
    pub normalize: bool,
    /// Text weights are drawn from `N(0, text_init_scale^2)`.
    pub text_init_scale: f64,
    /// Image weights are drawn from `N(0, image_init_scale^2 / image_len)`.
    pub image_init_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 64,
            image_len: 32,
            tokenizer: Tokenizer {
                buckets: 2048,
                ngram_min: 2,
                ngram_max: 3,
                hash_seed: 0x5eed,
            },
            activation: Activation::Tanh,
            normalize: true,
            text_init_scale: 1.0,
            image_init_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBackend {
    info: BackendInfo,
    pub(crate) tokenizer: Tokenizer,
    pub(crate) activation: Activation,
    pub(crate) normalize: bool,
    /// `buckets × dim`; the column for bucket `j` is `text_weights[j*dim..(j+1)*dim]`.
    pub(crate) text_weights: Vec<f32>,
    /// `dim × image_len`, row-major.
    pub(crate) image_weights: Vec<f32>,
    pub(crate) image_bias: Vec<f32>,
}

impl SyntheticBackend {
    /// Randomly initialized backend; deterministic in `config.seed`.
    pub fn random(config: &SyntheticConfig) -> Result<Self> {
        let dim = config.embedding_dim;
        let p = config.image_len;
        let buckets = config.tokenizer.buckets as usize;
        let mut rng = seed::derived_rng(config.seed, &["synthetic-init".into()]);
        let mut normal = |scale: f64, n: usize| -> Vec<f32> {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (z * scale) as f32
                })
                .collect()
        };
        let text_weights = normal(config.text_init_scale, buckets * dim);
        let image_weights = normal(config.image_init_scale / (p as f64).sqrt(), dim * p);
        let image_bias = normal(0.1, dim);
        Self::from_parts(config, text_weights, image_weights, image_bias)
    }

    pub fn from_parts(
        config: &SyntheticConfig,
        text_weights: Vec<f32>,
        image_weights: Vec<f32>,
        image_bias: Vec<f32>,
    ) -> Result<Self> {
        let dim = config.embedding_dim;
        let p = config.image_len;
        if config.tokenizer.buckets == 0
            || config.tokenizer.ngram_min == 0
            || config.tokenizer.ngram_min > config.tokenizer.ngram_max
        {
            return Err(Error::invalid("invalid tokenizer settings"));
        }
        let check = |name: &str, got: usize, want: usize| {
            if got != want {
                Err(Error::invalid(format!(
                    "{name} has {got} entries, expected {want}"
                )))
            } else {
                Ok(())
            }
        };
        check(
            "text_weights",
            text_weights.len(),
            config.tokenizer.buckets as usize * dim,
        )?;
        check("image_weights", image_weights.len(), dim * p)?;
        check("image_bias", image_bias.len(), dim)?;
        let mut backend = Self {
            info: BackendInfo {
                embedding_dim: dim,
                image_shape: vec![p],
                grad_support: true,
                backend_id: String::new(),
                single_session: false,
            },
            tokenizer: config.tokenizer,
            activation: config.activation,
            normalize: config.normalize,
            text_weights,
            image_weights,
            image_bias,
        };
        backend.info.validate()?;
        backend.refresh_id();
        Ok(backend)
    }

    pub(crate) fn refresh_id(&mut self) {
        let bytes = self.to_bytes();
        let hex: String = {
            use sha2::{Digest, Sha256};
            Sha256::digest(&bytes)[..6]
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect()
        };
        self.info.backend_id = format!("synthetic-{hex}");
    }

    pub fn dim(&self) -> usize {
        self.info.embedding_dim
    }

    pub fn image_len(&self) -> usize {
        self.info.image_shape[0]
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn image_bias(&self) -> Vec<f64> {
        self.image_bias.iter().map(|&b| b as f64).collect()
    }

    /// Image tower weights as a row-major `dim × image_len` matrix.
    pub fn image_weights(&self) -> Vec<f64> {
        self.image_weights.iter().map(|&w| w as f64).collect()
    }

    /// Un-normalized text embedding `W_text · tokens`.
    pub(crate) fn text_raw(&self, tokens: &SparseTokens) -> Vec<f64> {
        let dim = self.dim();
        let mut out = vec![0.0; dim];
        for &(bucket, w) in tokens {
            let col = &self.text_weights[bucket as usize * dim..(bucket as usize + 1) * dim];
            for (o, &c) in out.iter_mut().zip(col) {
                *o += w * c as f64;
            }
        }
        out
    }

    /// Activation output `act(W_img · x + b)` before normalization.
    pub(crate) fn image_hidden(&self, pixels: &[f64]) -> Vec<f64> {
        let p = self.image_len();
        self.image_bias
            .iter()
            .enumerate()
            .map(|(r, &b)| {
                let row = &self.image_weights[r * p..(r + 1) * p];
                let z = row
                    .iter()
                    .zip(pixels)
                    .fold(b as f64, |acc, (&w, &x)| acc + w as f64 * x);
                self.activation.apply(z)
            })
            .collect()
    }

    fn finish(&self, v: Vec<f64>) -> Result<Embedding> {
        if self.normalize {
            let n = crate::stats::norm(&v);
            if n == 0.0 || !n.is_finite() {
                return Err(Error::ZeroNorm);
            }
            Embedding::new(v.into_iter().map(|x| x / n).collect())
        } else {
            Embedding::new(v)
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::with_magic(BACKEND_MAGIC);
        w.u32(self.dim() as u32);
        w.u32(self.image_len() as u32);
        w.u32(self.tokenizer.buckets);
        w.u8(self.tokenizer.ngram_min);
        w.u8(self.tokenizer.ngram_max);
        w.u64(self.tokenizer.hash_seed);
        w.u8(match self.activation {
            Activation::Identity => 0,
            Activation::Tanh => 1,
        });
        w.u8(self.normalize as u8);
        w.f32_block(&self.text_weights);
        w.f32_block(&self.image_weights);
        w.f32_block(&self.image_bias);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::with_magic(bytes, BACKEND_MAGIC)?;
        let embedding_dim = r.u32()? as usize;
        let image_len = r.u32()? as usize;
        let tokenizer = Tokenizer {
            buckets: r.u32()?,
            ngram_min: r.u8()?,
            ngram_max: r.u8()?,
            hash_seed: r.u64()?,
        };
        let activation = match r.u8()? {
            0 => Activation::Identity,
            1 => Activation::Tanh,
            other => return Err(Error::format(format!("unknown activation tag {other}"))),
        };
        let normalize = r.u8()? != 0;
        let text_weights = r.f32_block()?;
        let image_weights = r.f32_block()?;
        let image_bias = r.f32_block()?;
        r.finish()?;
        let config = SyntheticConfig {
            embedding_dim,
            image_len,
            tokenizer,
            activation,
            normalize,
            text_init_scale: 0.0,
            image_init_scale: 0.0,
            seed: 0,
        };
        Self::from_parts(&config, text_weights, image_weights, image_bias)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

impl EmbeddingBackend for SyntheticBackend {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn embed_text(&self, text: &TextQuery) -> Result<Embedding> {
        let tokens = self.tokenizer.tokenize(text.as_str());
        self.finish(self.text_raw(&tokens))
    }

    fn embed_image(&self, image: &ImageTensor) -> Result<Embedding> {
        self.info.check_image(image)?;
        self.finish(self.image_hidden(image.pixels()))
    }

    fn similarity_gradient(
        &self,
        target: &Embedding,
        image: &ImageTensor,
    ) -> Result<SimilarityGradient> {
        self.info.check_image(image)?;
        if target.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: target.dim(),
            });
        }
        // Cosine is scale invariant, so the output normalization drops out:
        // d cos(u, h) / dh = (u/|u| - cos * h/|h|) / |h|.
        let h = self.image_hidden(image.pixels());
        let u = target.values();
        let u_norm = crate::stats::norm(u);
        let h_norm = crate::stats::norm(&h);
        if u_norm == 0.0 || h_norm == 0.0 {
            return Err(Error::ZeroNorm);
        }
        let sim = crate::stats::dot(u, &h) / (u_norm * h_norm);
        let p = self.image_len();
        let mut grad = vec![0.0; p];
        for (r, (&hr, &ur)) in h.iter().zip(u).enumerate() {
            let dh = (ur / u_norm - sim * hr / h_norm) / h_norm;
            let dz = dh * self.activation.derivative_from_output(hr);
            if dz == 0.0 {
                continue;
            }
            let row = &self.image_weights[r * p..(r + 1) * p];
            for (g, &w) in grad.iter_mut().zip(row) {
                *g += dz * w as f64;
            }
        }
        Ok(SimilarityGradient {
            grad,
            similarity: sim.clamp(-1.0, 1.0),
        })
    }
}
