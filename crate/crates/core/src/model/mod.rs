//! Small trainable networks built from [`Int8Linear`] layers.
//!
//! Backward passes are fused with the optimizer: as soon as the gradient of
//! a parameter is known it is handed to a callback (in reverse topological
//! order) and dropped, so at most one layer's gradient is alive at a time.

mod charlm;
mod linear;
mod loss;
mod mlp;

pub use charlm::TinyCharLm;
pub use linear::{Int8Linear, LinearGrads};
pub use loss::{cross_entropy, mse};
pub use mlp::MlpRegressor;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::quant::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "snake_case")]
pub enum ModelConfig {
    MlpRegressor {
        /// Layer widths from input to output; tanh between layers.
        widths: Vec<usize>,
        #[serde(default = "default_true")]
        bias: bool,
    },
    TinyCharLm {
        /// 0 means "take the vocabulary size from the data".
        #[serde(default)]
        vocab: usize,
        embed_dim: usize,
        context: usize,
        hidden: usize,
        /// Number of (linear + tanh) blocks before the head; blocks after
        /// the first carry a residual connection.
        blocks: usize,
    },
}

fn default_true() -> bool {
    true
}

pub const MAX_CHARLM_PARAMS: usize = 2_000_000;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::MlpRegressor { widths, .. } => {
                if widths.len() < 2 || widths.contains(&0) {
                    return Err(Error::Config("regressor needs at least two positive widths".into()));
                }
            }
            ModelConfig::TinyCharLm {
                embed_dim,
                context,
                hidden,
                ..
            } => {
                if *embed_dim == 0 || *context == 0 || *hidden == 0 {
                    return Err(Error::Config("char LM dimensions must be positive".into()));
                }
                let params = self.param_count();
                if params > MAX_CHARLM_PARAMS {
                    return Err(Error::Config(format!(
                        "char LM has {params} parameters, limit is {MAX_CHARLM_PARAMS}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Shapes of every parameter, in parameter-id order.
    pub fn param_shapes(&self) -> Vec<ParamInfo> {
        let mut out = Vec::new();
        match self {
            ModelConfig::MlpRegressor { widths, bias } => {
                for (i, w) in widths.windows(2).enumerate() {
                    out.push(ParamInfo::matrix(format!("layer{i}.weight"), (w[1], w[0])));
                    if *bias {
                        out.push(ParamInfo::vector(format!("layer{i}.bias"), (1, w[1])));
                    }
                }
            }
            ModelConfig::TinyCharLm {
                vocab,
                embed_dim,
                context,
                hidden,
                blocks,
            } => {
                let vocab = (*vocab).max(1);
                out.push(ParamInfo::vector("embedding".into(), (vocab, *embed_dim)));
                let mut in_dim = context * embed_dim;
                for k in 0..*blocks {
                    out.push(ParamInfo::matrix(format!("block{k}.weight"), (*hidden, in_dim)));
                    out.push(ParamInfo::vector(format!("block{k}.bias"), (1, *hidden)));
                    in_dim = *hidden;
                }
                out.push(ParamInfo::matrix("head.weight".into(), (vocab, in_dim)));
                out.push(ParamInfo::vector("head.bias".into(), (1, vocab)));
            }
        }
        for (id, p) in out.iter_mut().enumerate() {
            p.id = id;
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|p| p.shape.0 * p.shape.1).sum()
    }

    pub fn with_vocab(&self, v: usize) -> Self {
        match self {
            ModelConfig::TinyCharLm { vocab: 0, embed_dim, context, hidden, blocks } => ModelConfig::TinyCharLm {
                vocab: v,
                embed_dim: *embed_dim,
                context: *context,
                hidden: *hidden,
                blocks: *blocks,
            },
            other => other.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Weight matrix of a linear layer: projected, quantized, decayed.
    Matrix,
    /// Bias or embedding table: kept in high precision, plain Adam.
    Vector,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamInfo {
    pub id: usize,
    pub name: String,
    pub kind: ParamKind,
    pub shape: (usize, usize),
}

impl ParamInfo {
    fn matrix(name: String, shape: (usize, usize)) -> Self {
        Self { id: 0, name, kind: ParamKind::Matrix, shape }
    }

    fn vector(name: String, shape: (usize, usize)) -> Self {
        Self { id: 0, name, kind: ParamKind::Vector, shape }
    }
}

/// A parameter together with its freshly computed gradient.
pub struct ParamSlot<'a, T> {
    pub id: usize,
    pub kind: ParamKind,
    pub store: &'a mut ParamStore<T>,
    pub grad: Matrix<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Batch<T> {
    Regression { inputs: Matrix<T>, targets: Matrix<T> },
    /// `contexts` holds `targets.len()` windows of `context` token ids each.
    Tokens { contexts: Vec<u8>, targets: Vec<u8> },
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        match self {
            Batch::Regression { inputs, .. } => inputs.rows(),
            Batch::Tokens { targets, .. } => targets.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Network<T> {
    Mlp(MlpRegressor<T>),
    CharLm(TinyCharLm<T>),
}

impl<T: Scalar> Network<T> {
    /// Builds and randomly initialises the network a configuration describes.
    pub fn init(config: ModelConfig, precision: crate::quant::Precision, rng: &mut impl rand::Rng) -> Result<Self> {
        Ok(match config {
            ModelConfig::MlpRegressor { .. } => Network::Mlp(MlpRegressor::init(config, precision, rng)?),
            ModelConfig::TinyCharLm { .. } => Network::CharLm(TinyCharLm::init(config, precision, rng)?),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Network::Mlp(m) => m.config(),
            Network::CharLm(m) => m.config(),
        }
    }

    pub fn params(&self) -> Vec<ParamInfo> {
        match self {
            Network::Mlp(m) => m.config().param_shapes(),
            Network::CharLm(m) => m.config().param_shapes(),
        }
    }

    pub fn param(&self, id: usize) -> Option<&ParamStore<T>> {
        match self {
            Network::Mlp(m) => m.param(id),
            Network::CharLm(m) => m.param(id),
        }
    }

    pub fn param_mut(&mut self, id: usize) -> Option<&mut ParamStore<T>> {
        match self {
            Network::Mlp(m) => m.param_mut(id),
            Network::CharLm(m) => m.param_mut(id),
        }
    }

    /// Loss without caching or gradients.
    pub fn loss(&self, batch: &Batch<T>) -> Result<f64> {
        match self {
            Network::Mlp(m) => m.loss(batch),
            Network::CharLm(m) => m.loss(batch),
        }
    }

    /// Forward and fused backward; `on_grad` receives each parameter's
    /// gradient exactly once, last layer first.
    pub fn forward_backward<F>(&mut self, batch: &Batch<T>, step: u64, on_grad: F) -> Result<f64>
    where
        F: FnMut(ParamSlot<'_, T>) -> Result<()>,
    {
        match self {
            Network::Mlp(m) => m.forward_backward(batch, step, on_grad),
            Network::CharLm(m) => m.forward_backward(batch, step, on_grad),
        }
    }
}

pub(crate) fn diverged(step: u64, loss: f64, norms: String) -> Error {
    Error::Divergence {
        step,
        detail: format!("loss {loss}; weight norms: {norms}"),
    }
}

/// Convenience wrapper matching the free-function form of the fused pass.
pub fn model_forward_backward<T: Scalar, F>(model: &mut Network<T>, batch: &Batch<T>, step: u64, on_grad: F) -> Result<f64>
where
    F: FnMut(ParamSlot<'_, T>) -> Result<()>,
{
    model.forward_backward(batch, step, on_grad)
}
