//! Target-model abstraction.
//!
//! A backend answers text and image embedding queries and, when it declares
//! `grad_support`, the gradient of text/image cosine similarity with respect
//! to the image pixels. Backends without gradients are driven through
//! [`spsa_gradient_estimate`], which only ever issues embedding queries.
//!
//! Only optimizer-owned [`ImageTensor`]s can be sent to a backend. Real photos
//! of a person live in [`crate::photo::RealPhoto`], which has no conversion
//! into `ImageTensor`.

mod bridge;
pub mod protocol;
mod synthetic;
pub mod tokenizer;

pub use bridge::BridgeBackend;
pub use synthetic::{Activation, SyntheticBackend, SyntheticConfig, BACKEND_MAGIC};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Fixed-dimension embedding produced by a backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empty embedding"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite embedding entry at {i}"
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        crate::stats::norm(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Image in pre-normalization pixel space; every entry lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: Vec<usize>,
    pixels: Vec<f64>,
}

impl ImageTensor {
    pub fn new(shape: Vec<usize>, pixels: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || expected == 0 {
            return Err(Error::invalid(format!("degenerate image shape {shape:?}")));
        }
        if pixels.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: pixels.len(),
            });
        }
        if let Some((i, v)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::invalid(format!("pixel {i} = {v} outside [0, 1]")));
        }
        Ok(Self { shape, pixels })
    }

    /// Builds an image by clamping every entry into `[0, 1]`.
    ///
    /// NaN entries are rejected rather than clamped.
    pub fn clamped(shape: Vec<usize>, mut pixels: Vec<f64>) -> Result<Self> {
        if pixels.iter().any(|v| v.is_nan()) {
            return Err(Error::Numerical("NaN pixel".into()));
        }
        for p in &mut pixels {
            *p = p.clamp(0.0, 1.0);
        }
        Self::new(shape, pixels)
    }

    /// i.i.d. uniform `[0, 1)` pixels.
    pub fn random_uniform<R: Rng + ?Sized>(shape: Vec<usize>, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let pixels = (0..n).map(|_| rng.random::<f64>()).collect();
        Self { shape, pixels }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// One projected ascent step: `x <- clamp(x + step * direction)`.
    pub fn ascend(&mut self, direction: &[f64], step: f64) {
        for (p, g) in self.pixels.iter_mut().zip(direction) {
            *p = (*p + step * g).clamp(0.0, 1.0);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub embedding_dim: usize,
    pub image_shape: Vec<usize>,
    pub grad_support: bool,
    pub backend_id: String,
    /// Single-session backends get their calls serialized through one queue.
    #[serde(default)]
    pub single_session: bool,
}

impl BackendInfo {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 2 {
            return Err(Error::invalid("embedding_dim must be at least 2"));
        }
        if self.image_shape.is_empty() || self.image_shape.iter().product::<usize>() == 0 {
            return Err(Error::invalid("image_shape must have a positive product"));
        }
        Ok(())
    }

    pub fn image_len(&self) -> usize {
        self.image_shape.iter().product()
    }

    pub fn check_image(&self, image: &ImageTensor) -> Result<()> {
        if image.shape() != self.image_shape.as_slice() {
            return Err(Error::invalid(format!(
                "image shape {:?} does not match backend shape {:?}",
                image.shape(),
                self.image_shape
            )));
        }
        Ok(())
    }
}

/// A person's textual description, e.g. a name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TextQuery(String);

impl TextQuery {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(Error::invalid("empty text query"));
        }
        if text.chars().any(char::is_control) {
            return Err(Error::invalid(format!(
                "text query {text:?} contains control characters"
            )));
        }
        Ok(Self(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for TextQuery {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Gradient of `cos(target, embed_image(x))` with respect to the pixels of `x`.
#[derive(Debug, Clone)]
pub struct SimilarityGradient {
    pub grad: Vec<f64>,
    pub similarity: f64,
}

pub trait EmbeddingBackend: Send + Sync {
    fn info(&self) -> &BackendInfo;

    fn embed_text(&self, text: &TextQuery) -> Result<Embedding>;

    fn embed_image(&self, image: &ImageTensor) -> Result<Embedding>;

    fn similarity_gradient(
        &self,
        _target: &Embedding,
        _image: &ImageTensor,
    ) -> Result<SimilarityGradient> {
        Err(Error::Unsupported {
            backend: self.info().backend_id.clone(),
            op: "similarity_gradient",
        })
    }
}

/// Cosine similarity, clamped into `[-1, 1]`.
pub fn cosine_similarity(u: &Embedding, v: &Embedding) -> Result<f64> {
    cosine(u.values(), v.values())
}

pub(crate) fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    let (mut uv, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((uv / (uu.sqrt() * vv.sqrt())).clamp(-1.0, 1.0))
}

/// Simultaneous-perturbation gradient estimate of a scalar objective.
///
/// Averages `(f(x + cΔ) - f(x - cΔ)) / (2c) · Δ` over `samples` Rademacher
/// directions `Δ` drawn from `seed`.
pub fn spsa_estimate<F>(
    mut objective: F,
    x: &[f64],
    perturbation: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(perturbation > 0.0) {
        return Err(Error::invalid("SPSA perturbation must be positive"));
    }
    if samples == 0 {
        return Err(Error::invalid("SPSA needs at least one sample"));
    }
    let mut rng = seed::rng(seed);
    let mut grad = vec![0.0; x.len()];
    let mut delta = vec![0.0; x.len()];
    let mut plus = vec![0.0; x.len()];
    let mut minus = vec![0.0; x.len()];
    for _ in 0..samples {
        for d in delta.iter_mut() {
            *d = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        for i in 0..x.len() {
            plus[i] = x[i] + perturbation * delta[i];
            minus[i] = x[i] - perturbation * delta[i];
        }
        let diff = (objective(&plus)? - objective(&minus)?) / (2.0 * perturbation);
        for (g, d) in grad.iter_mut().zip(&delta) {
            *g += diff * d;
        }
    }
    let scale = 1.0 / samples as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(grad)
}

/// SPSA estimate of the similarity gradient using embedding queries only.
///
/// Probe images are clamped into `[0, 1]` before they are queried.
pub fn spsa_gradient_estimate(
    backend: &dyn EmbeddingBackend,
    target: &Embedding,
    image: &ImageTensor,
    perturbation: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    backend.info().check_image(image)?;
    let shape = image.shape().to_vec();
    spsa_estimate(
        |probe| {
            let probe = ImageTensor::clamped(shape.clone(), probe.to_vec())?;
            cosine_similarity(target, &backend.embed_image(&probe)?)
        },
        image.pixels(),
        perturbation,
        samples,
        seed,
    )
}
