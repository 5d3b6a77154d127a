use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::feature::{feature_dim, FeatureConfig};
use crate::rng::{seeded, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Max,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub(crate) fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Shapes and nonlinearities of a [`Model`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArch {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Representation dimension `d`; the feature has `4d` entries.
    pub dim: usize,
    pub hidden: usize,
    pub pooling: Pooling,
    pub activation: Activation,
}

impl ModelArch {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("dim", self.dim),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Affine map `y = W x + b` with `W` stored row-major as `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn glorot(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: glorot_uniform(in_dim, out_dim, rng),
            bias: vec![0.0; out_dim],
        }
    }

    #[inline]
    pub(crate) fn forward(&self, x: &[f64], out: &mut [f64]) {
        for ((o, row), b) in out
            .iter_mut()
            .zip(self.weight.chunks_exact(self.in_dim))
            .zip(&self.bias)
        {
            *o = b + dot(row, x);
        }
    }

    /// Accumulates `dW += dy x^T`, `db += dy` and writes `dx = W^T dy`.
    #[inline]
    pub(crate) fn backward(
        &self,
        x: &[f64],
        dy: &[f64],
        g_weight: &mut [f64],
        g_bias: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        for ((g_row, &dyi), gb) in g_weight.chunks_exact_mut(self.in_dim).zip(dy).zip(g_bias) {
            *gb += dyi;
            axpy(dyi, x, g_row);
        }
        if let Some(dx) = dx {
            dx.fill(0.0);
            for (row, &dyi) in self.weight.chunks_exact(self.in_dim).zip(dy) {
                axpy(dyi, row, dx);
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Vec<f64> {
    uniform(
        (6.0 / (fan_in + fan_out) as f64).sqrt(),
        fan_in * fan_out,
        rng,
    )
}

fn uniform(bound: f64, n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Token embedding, shared projection and pooling. Each position is mapped to
/// `tanh(embedding[token] . projection)` and the positions are pooled.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub dim: usize,
    /// `vocab_size x embed_dim`, row-major.
    pub embedding: Vec<f64>,
    /// `embed_dim x dim`, row-major.
    pub projection: Vec<f64>,
    pub pooling: Pooling,
}

impl EncoderParams {
    pub fn embedding_row(&self, token: u32) -> &[f64] {
        let start = token as usize * self.embed_dim;
        &self.embedding[start..start + self.embed_dim]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub layer1: Linear,
    pub layer2: Linear,
    pub classifier: Linear,
    pub activation: Activation,
}

/// All trainable state of the pair classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub encoder: EncoderParams,
    pub head: HeadParams,
    /// Degree and (for constant `eta`) the scaling factor.
    pub feature: FeatureConfig,
    /// `Some(log eta)` when `eta` is trained.
    pub log_eta: Option<f64>,
}

impl Model {
    /// Glorot-uniform weights, zero biases. Embedding rows are inputs rather
    /// than a layer, so their entries are drawn with unit variance from
    /// `U(-sqrt 3, sqrt 3)`. The draw depends only on the shapes and `seed`,
    /// so models that differ only in `eta` or degree start from identical
    /// weights.
    pub fn init(arch: &ModelArch, feature: &FeatureConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        feature.validate()?;
        let mut rng = seeded(seed);
        let encoder = EncoderParams {
            vocab_size: arch.vocab_size,
            embed_dim: arch.embed_dim,
            dim: arch.dim,
            embedding: uniform(3f64.sqrt(), arch.vocab_size * arch.embed_dim, &mut rng),
            projection: glorot_uniform(arch.embed_dim, arch.dim, &mut rng),
            pooling: arch.pooling,
        };
        let head = HeadParams {
            layer1: Linear::glorot(feature_dim(arch.dim), arch.hidden, &mut rng),
            layer2: Linear::glorot(arch.hidden, arch.hidden, &mut rng),
            classifier: Linear::glorot(arch.hidden, NUM_CLASSES, &mut rng),
            activation: arch.activation,
        };
        Ok(Model {
            encoder,
            head,
            feature: *feature,
            log_eta: feature.eta_learnable.then(|| feature.eta.ln()),
        })
    }

    /// Every weight and bias zero; `eta` keeps its configured value.
    pub fn zeros(arch: &ModelArch, feature: &FeatureConfig) -> Result<Self> {
        let mut m = Model::init(arch, feature, 0)?;
        for (name, t) in m.tensors_mut() {
            if name != "log_eta" {
                t.fill(0.0);
            }
        }
        Ok(m)
    }

    pub fn arch(&self) -> ModelArch {
        ModelArch {
            vocab_size: self.encoder.vocab_size,
            embed_dim: self.encoder.embed_dim,
            dim: self.encoder.dim,
            hidden: self.head.layer1.out_dim,
            pooling: self.encoder.pooling,
            activation: self.head.activation,
        }
    }

    /// The scaling factor currently in effect.
    pub fn eta(&self) -> f64 {
        match self.log_eta {
            Some(l) => l.exp(),
            None => self.feature.eta,
        }
    }

    /// Feature configuration with the current `eta`.
    pub fn effective_feature(&self) -> FeatureConfig {
        self.feature.with_eta(self.eta())
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Named parameter tensors, in the same order as [`Gradients::tensors`].
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let h = &self.head;
        vec![
            ("embedding", &self.encoder.embedding[..]),
            ("projection", &self.encoder.projection[..]),
            ("layer1.weight", &h.layer1.weight[..]),
            ("layer1.bias", &h.layer1.bias[..]),
            ("layer2.weight", &h.layer2.weight[..]),
            ("layer2.bias", &h.layer2.bias[..]),
            ("classifier.weight", &h.classifier.weight[..]),
            ("classifier.bias", &h.classifier.bias[..]),
            ("log_eta", self.log_eta.as_slice()),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let h = &mut self.head;
        vec![
            ("embedding", &mut self.encoder.embedding[..]),
            ("projection", &mut self.encoder.projection[..]),
            ("layer1.weight", &mut h.layer1.weight[..]),
            ("layer1.bias", &mut h.layer1.bias[..]),
            ("layer2.weight", &mut h.layer2.weight[..]),
            ("layer2.bias", &mut h.layer2.bias[..]),
            ("classifier.weight", &mut h.classifier.weight[..]),
            ("classifier.bias", &mut h.classifier.bias[..]),
            ("log_eta", self.log_eta.as_mut_slice()),
        ]
    }

    /// Plain SGD step `p -= lr * g`.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for ((_, p), (_, g)) in self.tensors_mut().into_iter().zip(grads.tensors()) {
            axpy(-lr, g, p);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

/// Gradient buffers shaped like a [`Model`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub embedding: Vec<f64>,
    pub projection: Vec<f64>,
    pub layer1_weight: Vec<f64>,
    pub layer1_bias: Vec<f64>,
    pub layer2_weight: Vec<f64>,
    pub layer2_bias: Vec<f64>,
    pub classifier_weight: Vec<f64>,
    pub classifier_bias: Vec<f64>,
    pub log_eta: Option<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        let h = &model.head;
        Gradients {
            embedding: vec![0.0; model.encoder.embedding.len()],
            projection: vec![0.0; model.encoder.projection.len()],
            layer1_weight: vec![0.0; h.layer1.weight.len()],
            layer1_bias: vec![0.0; h.layer1.bias.len()],
            layer2_weight: vec![0.0; h.layer2.weight.len()],
            layer2_bias: vec![0.0; h.layer2.bias.len()],
            classifier_weight: vec![0.0; h.classifier.weight.len()],
            classifier_bias: vec![0.0; h.classifier.bias.len()],
            log_eta: model.log_eta.map(|_| 0.0),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("embedding", &self.embedding[..]),
            ("projection", &self.projection[..]),
            ("layer1.weight", &self.layer1_weight[..]),
            ("layer1.bias", &self.layer1_bias[..]),
            ("layer2.weight", &self.layer2_weight[..]),
            ("layer2.bias", &self.layer2_bias[..]),
            ("classifier.weight", &self.classifier_weight[..]),
            ("classifier.bias", &self.classifier_bias[..]),
            ("log_eta", self.log_eta.as_slice()),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("embedding", &mut self.embedding[..]),
            ("projection", &mut self.projection[..]),
            ("layer1.weight", &mut self.layer1_weight[..]),
            ("layer1.bias", &mut self.layer1_bias[..]),
            ("layer2.weight", &mut self.layer2_weight[..]),
            ("layer2.bias", &mut self.layer2_bias[..]),
            ("classifier.weight", &mut self.classifier_weight[..]),
            ("classifier.bias", &mut self.classifier_bias[..]),
            ("log_eta", self.log_eta.as_mut_slice()),
        ]
    }

    pub fn fill(&mut self, value: f64) {
        for (_, t) in self.tensors_mut() {
            t.fill(value);
        }
    }

    /// L2 norm over every entry of every tensor.
    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= factor);
        }
    }
}
