use rand::Rng;

use super::{diverged, loss::mse, Batch, Int8Linear, ModelConfig, ParamKind, ParamSlot};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::quant::{ParamStore, Precision};
use crate::scalar::Scalar;

/// Stack of linear layers with tanh between them, trained on MSE.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpRegressor<T> {
    config: ModelConfig,
    layers: Vec<Int8Linear<T>>,
}

impl<T: Scalar> MlpRegressor<T> {
    pub fn init(config: ModelConfig, precision: Precision, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let ModelConfig::MlpRegressor { widths, bias } = &config else {
            return Err(Error::Config("not a regressor configuration".into()));
        };
        let layers = widths
            .windows(2)
            .map(|w| Int8Linear::init(w[1], w[0], precision, *bias, rng))
            .collect::<Result<_>>()?;
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Int8Linear<T>] {
        &self.layers
    }

    fn has_bias(&self) -> bool {
        matches!(self.config, ModelConfig::MlpRegressor { bias: true, .. })
    }

    fn locate(&self, id: usize) -> (usize, bool) {
        if self.has_bias() {
            (id / 2, id % 2 == 1)
        } else {
            (id, false)
        }
    }

    pub fn param(&self, id: usize) -> Option<&ParamStore<T>> {
        let (layer, is_bias) = self.locate(id);
        let l = self.layers.get(layer)?;
        if is_bias {
            l.bias.as_ref()
        } else {
            Some(&l.weight)
        }
    }

    pub fn param_mut(&mut self, id: usize) -> Option<&mut ParamStore<T>> {
        let (layer, is_bias) = self.locate(id);
        let l = self.layers.get_mut(layer)?;
        if is_bias {
            l.bias.as_mut()
        } else {
            Some(&mut l.weight)
        }
    }

    fn unpack<'b>(batch: &'b Batch<T>) -> Result<(&'b Matrix<T>, &'b Matrix<T>)> {
        match batch {
            Batch::Regression { inputs, targets } => Ok((inputs, targets)),
            Batch::Tokens { .. } => Err(Error::Data("regressor expects a regression batch".into())),
        }
    }

    pub fn predict(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let last = self.layers.len() - 1;
        let mut a = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            a = l.apply(&a)?;
            if i < last {
                a = a.map(T::tanh);
            }
        }
        Ok(a)
    }

    pub fn loss(&self, batch: &Batch<T>) -> Result<f64> {
        let (x, y) = Self::unpack(batch)?;
        Ok(mse(&self.predict(x)?, y)?.0)
    }

    pub fn forward_backward<F>(&mut self, batch: &Batch<T>, step: u64, mut on_grad: F) -> Result<f64>
    where
        F: FnMut(ParamSlot<'_, T>) -> Result<()>,
    {
        let (x, y) = Self::unpack(batch)?;
        let last = self.layers.len() - 1;
        // activations[i] is the tanh output feeding layer i + 1
        let mut activations = Vec::with_capacity(last);
        let mut a = x.clone();
        for (i, l) in self.layers.iter_mut().enumerate() {
            a = l.forward(&a)?;
            if i < last {
                a = a.map(T::tanh);
                activations.push(a.clone());
            }
        }
        let (loss, mut grad) = mse(&a, y)?;
        if !loss.is_finite() {
            return Err(diverged(step, loss, self.norms()));
        }
        let bias = self.has_bias();
        for i in (0..=last).rev() {
            let g = self.layers[i].backward(&grad)?;
            let (wid, bid) = if bias { (2 * i, 2 * i + 1) } else { (i, usize::MAX) };
            let layer = &mut self.layers[i];
            on_grad(ParamSlot {
                id: wid,
                kind: ParamKind::Matrix,
                store: &mut layer.weight,
                grad: g.weight,
            })?;
            if let (Some(store), Some(gb)) = (layer.bias.as_mut(), g.bias) {
                on_grad(ParamSlot {
                    id: bid,
                    kind: ParamKind::Vector,
                    store,
                    grad: gb,
                })?;
            }
            if i > 0 {
                let act = &activations[i - 1];
                grad = Matrix::from_fn(act.rows(), act.cols(), |r, c| {
                    let t = act[(r, c)];
                    g.input[(r, c)] * (T::one() - t * t)
                });
            }
        }
        Ok(loss)
    }

    fn norms(&self) -> String {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| format!("layer{i}={:.4e}", l.weight.to_dense().frobenius_norm()))
            .collect::<Vec<_>>()
            .join(", ")
    }
}
