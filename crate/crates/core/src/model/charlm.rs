use rand::Rng;

use super::{diverged, loss::cross_entropy, Batch, Int8Linear, ModelConfig, ParamKind, ParamSlot};
use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::quant::{ParamStore, Precision};
use crate::scalar::Scalar;

/// Attention-free character model:
///
/// ```text
/// x  = concat(embed(c_1), ..., embed(c_C))
/// h1 = tanh(L1 x)
/// hk = h(k-1) + tanh(Lk h(k-1))     k = 2..blocks
/// logits = head(h_blocks)
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct TinyCharLm<T> {
    config: ModelConfig,
    embedding: ParamStore<T>,
    blocks: Vec<Int8Linear<T>>,
    head: Int8Linear<T>,
}

struct Dims {
    vocab: usize,
    embed: usize,
    context: usize,
}

impl<T: Scalar> TinyCharLm<T> {
    pub fn init(config: ModelConfig, precision: Precision, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let ModelConfig::TinyCharLm {
            vocab,
            embed_dim,
            context,
            hidden,
            blocks,
        } = config
        else {
            return Err(Error::Config("not a char LM configuration".into()));
        };
        if vocab == 0 {
            return Err(Error::Config("vocabulary size must be resolved before init".into()));
        }
        let embedding = ParamStore::Dense(Matrix::randn(vocab, embed_dim, 1.0, rng));
        let mut in_dim = context * embed_dim;
        let mut layers = Vec::with_capacity(blocks);
        for _ in 0..blocks {
            layers.push(Int8Linear::init(hidden, in_dim, precision, true, rng)?);
            in_dim = hidden;
        }
        let head = Int8Linear::init(vocab, in_dim, precision, true, rng)?;
        Ok(Self {
            config,
            embedding,
            blocks: layers,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn dims(&self) -> Dims {
        match self.config {
            ModelConfig::TinyCharLm {
                vocab,
                embed_dim,
                context,
                ..
            } => Dims {
                vocab,
                embed: embed_dim,
                context,
            },
            _ => unreachable!("validated at init"),
        }
    }

    pub fn vocab(&self) -> usize {
        self.dims().vocab
    }

    pub fn context(&self) -> usize {
        self.dims().context
    }

    // ids: 0 embedding, then (weight, bias) per block, then head (weight, bias)
    pub fn param(&self, id: usize) -> Option<&ParamStore<T>> {
        if id == 0 {
            return Some(&self.embedding);
        }
        let (layer, is_bias) = ((id - 1) / 2, (id - 1) % 2 == 1);
        let l = if layer < self.blocks.len() {
            &self.blocks[layer]
        } else if layer == self.blocks.len() {
            &self.head
        } else {
            return None;
        };
        if is_bias {
            l.bias.as_ref()
        } else {
            Some(&l.weight)
        }
    }

    pub fn param_mut(&mut self, id: usize) -> Option<&mut ParamStore<T>> {
        if id == 0 {
            return Some(&mut self.embedding);
        }
        let (layer, is_bias) = ((id - 1) / 2, (id - 1) % 2 == 1);
        let n = self.blocks.len();
        let l = if layer < n {
            &mut self.blocks[layer]
        } else if layer == n {
            &mut self.head
        } else {
            return None;
        };
        if is_bias {
            l.bias.as_mut()
        } else {
            Some(&mut l.weight)
        }
    }

    fn unpack<'b>(&self, batch: &'b Batch<T>) -> Result<(&'b [u8], &'b [u8])> {
        let Batch::Tokens { contexts, targets } = batch else {
            return Err(Error::Data("char LM expects a token batch".into()));
        };
        let c = self.context();
        if contexts.len() != targets.len() * c {
            return Err(shape_err(
                "TinyCharLm",
                format!("{} context ids for {} targets of context {c}", contexts.len(), targets.len()),
            ));
        }
        let v = self.vocab();
        if let Some(bad) = contexts.iter().chain(targets).find(|&&t| t as usize >= v) {
            return Err(Error::Data(format!("token id {bad} outside vocabulary of {v}")));
        }
        Ok((contexts, targets))
    }

    fn embed(&self, contexts: &[u8], batch: usize) -> Matrix<T> {
        let d = self.dims();
        let table = match &self.embedding {
            ParamStore::Dense(m) => m,
            ParamStore::Quantized(_) => unreachable!("embedding is kept dense"),
        };
        let mut x = Matrix::zeros(batch, d.context * d.embed);
        for b in 0..batch {
            let row = x.row_mut(b);
            for (k, &tok) in contexts[b * d.context..(b + 1) * d.context].iter().enumerate() {
                row[k * d.embed..(k + 1) * d.embed].copy_from_slice(table.row(tok as usize));
            }
        }
        x
    }

    pub fn logits(&self, batch: &Batch<T>) -> Result<Matrix<T>> {
        let (contexts, targets) = self.unpack(batch)?;
        let mut h = self.embed(contexts, targets.len());
        for (k, l) in self.blocks.iter().enumerate() {
            let a = l.apply(&h)?.map(T::tanh);
            h = if k == 0 { a } else { h.add(&a)? };
        }
        self.head.apply(&h)
    }

    pub fn loss(&self, batch: &Batch<T>) -> Result<f64> {
        let (_, targets) = self.unpack(batch)?;
        Ok(cross_entropy(&self.logits(batch)?, targets)?.0)
    }

    pub fn forward_backward<F>(&mut self, batch: &Batch<T>, step: u64, mut on_grad: F) -> Result<f64>
    where
        F: FnMut(ParamSlot<'_, T>) -> Result<()>,
    {
        let (contexts, targets) = self.unpack(batch)?;
        let bsz = targets.len();
        let mut h = self.embed(contexts, bsz);
        let mut acts = Vec::with_capacity(self.blocks.len());
        for (k, l) in self.blocks.iter_mut().enumerate() {
            let a = l.forward(&h)?.map(T::tanh);
            h = if k == 0 { a.clone() } else { h.add(&a)? };
            acts.push(a);
        }
        let logits = self.head.forward(&h)?;
        let (loss, dlogits) = cross_entropy(&logits, targets)?;
        if !loss.is_finite() {
            return Err(diverged(step, loss, self.norms()));
        }

        let n = self.blocks.len();
        let g = self.head.backward(&dlogits)?;
        self.emit(&mut on_grad, n, g.weight, g.bias)?;
        let mut dh = g.input;
        for k in (0..n).rev() {
            let a = &acts[k];
            let dz = Matrix::from_fn(a.rows(), a.cols(), |r, c| {
                let t = a[(r, c)];
                dh[(r, c)] * (T::one() - t * t)
            });
            let g = self.blocks[k].backward(&dz)?;
            self.emit(&mut on_grad, k, g.weight, g.bias)?;
            dh = if k == 0 { g.input } else { dh.add(&g.input)? };
        }

        // scatter the input gradient into the embedding rows
        let d = self.dims();
        let mut dembed = Matrix::zeros(d.vocab, d.embed);
        for b in 0..bsz {
            let row = dh.row(b);
            for (k, &tok) in contexts[b * d.context..(b + 1) * d.context].iter().enumerate() {
                for (e, &gv) in dembed.row_mut(tok as usize).iter_mut().zip(&row[k * d.embed..(k + 1) * d.embed]) {
                    *e += gv;
                }
            }
        }
        on_grad(ParamSlot {
            id: 0,
            kind: ParamKind::Vector,
            store: &mut self.embedding,
            grad: dembed,
        })?;
        Ok(loss)
    }

    fn emit<F>(&mut self, on_grad: &mut F, layer: usize, gw: Matrix<T>, gb: Option<Matrix<T>>) -> Result<()>
    where
        F: FnMut(ParamSlot<'_, T>) -> Result<()>,
    {
        let l = if layer < self.blocks.len() {
            &mut self.blocks[layer]
        } else {
            &mut self.head
        };
        on_grad(ParamSlot {
            id: 1 + 2 * layer,
            kind: ParamKind::Matrix,
            store: &mut l.weight,
            grad: gw,
        })?;
        if let (Some(store), Some(gb)) = (l.bias.as_mut(), gb) {
            on_grad(ParamSlot {
                id: 2 + 2 * layer,
                kind: ParamKind::Vector,
                store,
                grad: gb,
            })?;
        }
        Ok(())
    }

    fn norms(&self) -> String {
        let mut parts: Vec<String> = self
            .blocks
            .iter()
            .enumerate()
            .map(|(k, l)| format!("block{k}={:.4e}", l.weight.to_dense().frobenius_norm()))
            .collect();
        parts.push(format!("head={:.4e}", self.head.weight.to_dense().frobenius_norm()));
        parts.join(", ")
    }
}
