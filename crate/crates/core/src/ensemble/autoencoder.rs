//! Dense autoencoder `in → h → bottleneck → h → in` (tanh hidden layers,
//! linear output) scored by per-row reconstruction error.

use rand::Rng;

use crate::codec::{BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::seed;
use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams {
    pub hidden: usize,
    pub bottleneck: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Reconstruction-error quantile used as the anomaly threshold.
    pub quantile: f64,
    pub seed: u64,
}

impl Default for AutoencoderParams {
    fn default() -> Self {
        Self {
            hidden: 4,
            bottleneck: 1,
            epochs: 5000,
            learning_rate: 0.05,
            quantile: 0.95,
            seed: 0,
        }
    }
}

/// Network weights as one flat vector; layer `k` stores its `out × in`
/// row-major weight matrix followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

impl Network {
    pub fn new(input: usize, hidden: usize, bottleneck: usize, seed: u64) -> Self {
        let sizes = vec![input, hidden, bottleneck, hidden, input];
        let mut rng = seed::derived_rng(seed, &["autoencoder-init".into()]);
        let mut params = Vec::new();
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self { sizes, params }
    }

    pub fn from_params(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        let expected: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if sizes.len() < 2 || params.len() != expected {
            return Err(Error::format("autoencoder parameter count mismatch"));
        }
        Ok(Self { sizes, params })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Activations of every layer, input first.
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let mut offset = 0;
        for k in 0..self.layers() {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let prev = acts.last().unwrap();
            let last = k + 1 == self.layers();
            let out = (0..n_out)
                .map(|o| {
                    let z = b[o] + stats::dot(&w[o * n_in..(o + 1) * n_in], prev);
                    if last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn reconstruct(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).pop().unwrap()
    }

    /// Mean squared reconstruction error of one row.
    pub fn error(&self, x: &[f64]) -> f64 {
        let y = self.reconstruct(x);
        y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64
    }

    /// Mean of [`Network::error`] over the rows, and its gradient.
    pub fn loss_and_gradient(&self, rows: &[Vec<f64>]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let n = rows.len() as f64;
        let offsets: Vec<usize> = self
            .sizes
            .windows(2)
            .scan(0, |acc, w| {
                let o = *acc;
                *acc += w[0] * w[1] + w[1];
                Some(o)
            })
            .collect();
        for x in rows {
            let acts = self.forward(x);
            let dim = x.len() as f64;
            let y = acts.last().unwrap();
            loss += y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / dim;
            let mut delta: Vec<f64> = y
                .iter()
                .zip(x)
                .map(|(a, b)| 2.0 * (a - b) / (dim * n))
                .collect();
            for k in (0..self.layers()).rev() {
                let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
                let off = offsets[k];
                let prev = &acts[k];
                for o in 0..n_out {
                    for i in 0..n_in {
                        grad[off + o * n_in + i] += delta[o] * prev[i];
                    }
                    grad[off + n_in * n_out + o] += delta[o];
                }
                if k > 0 {
                    let w = &self.params[off..off + n_in * n_out];
                    delta = (0..n_in)
                        .map(|i| {
                            let back: f64 = (0..n_out).map(|o| w[o * n_in + i] * delta[o]).sum();
                            back * (1.0 - prev[i] * prev[i])
                        })
                        .collect();
                }
            }
        }
        (loss / n, grad)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    network: Network,
    threshold: f64,
}

impl Autoencoder {
    pub fn fit(rows: &[Vec<f64>], params: &AutoencoderParams) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("autoencoder needs training rows"));
        }
        if params.hidden == 0 || params.bottleneck == 0 {
            return Err(Error::invalid("autoencoder layers must be non-empty"));
        }
        let mut network =
            Network::new(rows[0].len(), params.hidden, params.bottleneck, params.seed);
        for epoch in 0..params.epochs {
            let (loss, grad) = network.loss_and_gradient(rows);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "autoencoder loss became {loss} at epoch {epoch}"
                )));
            }
            for (p, g) in network.params.iter_mut().zip(&grad) {
                *p -= params.learning_rate * g;
            }
        }
        let errors: Vec<f64> = rows.iter().map(|r| network.error(r)).collect();
        if errors.iter().any(|e| !e.is_finite()) {
            return Err(Error::Numerical("non-finite reconstruction error".into()));
        }
        let threshold = stats::quantile(&errors, params.quantile);
        Ok(Self { network, threshold })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.network.error(x)
    }

    pub fn is_anomaly(&self, x: &[f64]) -> bool {
        self.score(x) > self.threshold
    }

    pub(crate) fn write(&self, w: &mut BinWriter) {
        w.f64(self.threshold);
        w.len_prefix(self.network.sizes.len());
        for &s in &self.network.sizes {
            w.u32(s as u32);
        }
        w.f64_block(&self.network.params);
    }

    pub(crate) fn read(r: &mut BinReader<'_>) -> Result<Self> {
        let threshold = r.f64()?;
        let n = r.len_prefix()?;
        let sizes = (0..n)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let params = r.f64_block()?;
        Ok(Self {
            network: Network::from_params(sizes, params)?,
            threshold,
        })
    }
}
