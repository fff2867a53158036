//! The training loop: fused backward with per-parameter optimizer updates,
//! periodic evaluation, metrics and checkpoints.

use std::path::{Path, PathBuf};
use std::time::Instant;

use super::checkpoint::{load_checkpoint, save_checkpoint, tensor_to_words, words_to_tensor, NamedTensor};
use super::config::{Method, RunConfig};
use super::data::Dataset;
use super::memory::estimate_memory;
use super::metrics::{DivergenceRecord, LayerMetrics, MetricsRecord, MetricsSink};
use crate::error::{Error, Result};
use crate::model::{Batch, ModelConfig, Network, ParamInfo, ParamKind, ParamSlot};
use crate::optimizer::{dense_step, layer_step, AdamConfig, AdamState, LayerState, StepOptions};
use crate::quant::{ParamStore, Precision};
use crate::rng::{Domain, SeedStream};
use crate::subspace::ProjectionState;

/// Optimizer state attached to one parameter.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamState {
    /// Weight matrix trained in a projected subspace.
    Projected(LayerState<f32>),
    /// Full-rank Adam.
    Dense(AdamState<f32>),
}

impl ParamState {
    fn adam(&self) -> &AdamState<f32> {
        match self {
            ParamState::Projected(l) => &l.adam,
            ParamState::Dense(a) => a,
        }
    }

    fn adam_mut(&mut self) -> &mut AdamState<f32> {
        match self {
            ParamState::Projected(l) => &mut l.adam,
            ParamState::Dense(a) => a,
        }
    }
}

pub struct Trainer {
    cfg: RunConfig,
    streams: SeedStream,
    data: Dataset,
    model: Network<f32>,
    params: Vec<ParamInfo>,
    states: Vec<ParamState>,
    validation: Batch<f32>,
    context: usize,
    memory_bytes: u64,
    step: u64,
    started: Instant,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let mut cfg = cfg.resolve()?;
        let streams = SeedStream::new(cfg.seed);
        let data = Dataset::load(&cfg.data, &streams)?;
        if let (ModelConfig::TinyCharLm { vocab, .. }, Some(v)) = (&cfg.model, data.vocab_size()) {
            if *vocab == 0 {
                cfg.model = cfg.model.with_vocab(v);
            } else if *vocab < v {
                return Err(Error::Config(format!("model vocabulary {vocab} is smaller than the corpus vocabulary {v}")));
            }
        }
        if let (ModelConfig::MlpRegressor { widths, .. }, super::DataConfig::Synthetic { n_features, n_outputs, .. }) =
            (&cfg.model, &cfg.data)
        {
            if widths[0] != *n_features || widths[widths.len() - 1] != n_outputs.unwrap_or(*n_features) {
                return Err(Error::Config("regressor widths do not match the synthetic task".into()));
            }
        }
        cfg.model.validate()?;
        let context = match cfg.model {
            ModelConfig::TinyCharLm { context, .. } => context,
            ModelConfig::MlpRegressor { .. } => 0,
        };
        let mut init_rng = streams.substream(Domain::Init, 0, 0);
        let model = Network::init(cfg.model.clone(), cfg.weight_bits, &mut init_rng)?;
        let params = model.params();
        let mut states = Vec::with_capacity(params.len());
        for (i, p) in params.iter().enumerate() {
            debug_assert_eq!(p.id, i);
            let projected = p.kind == ParamKind::Matrix && cfg.method != Method::FullAdam;
            states.push(if projected {
                ParamState::Projected(LayerState {
                    proj: ProjectionState::new(p.shape, cfg.subspace.clone())?,
                    adam: AdamState::new(cfg.state_bits),
                })
            } else {
                ParamState::Dense(AdamState::new(cfg.state_bits))
            });
        }
        let validation = data.validation(context, cfg.eval_examples)?;
        let memory_bytes = estimate_memory(&cfg.model, &cfg).total();
        Ok(Self {
            cfg,
            streams,
            data,
            model,
            params,
            states,
            validation,
            context,
            memory_bytes,
            step: 0,
            started: Instant::now(),
        })
    }

    /// A trainer restored from a checkpoint written by [`Trainer::save`]
    /// under the same configuration.
    pub fn resume(cfg: RunConfig, path: &Path) -> Result<Self> {
        let mut t = Self::new(cfg)?;
        t.restore(load_checkpoint(path)?)?;
        Ok(t)
    }

    /// The resolved configuration (vocabulary filled in from the data).
    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn model(&self) -> &Network<f32> {
        &self.model
    }

    pub fn states(&self) -> &[ParamState] {
        &self.states
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.cfg.total_steps
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        self.cfg.schedule.lr_at(step, self.cfg.total_steps, self.cfg.optimizer.lr)
    }

    pub fn validation_loss(&self) -> Result<f64> {
        self.model.loss(&self.validation)
    }

    pub fn svd_calls_total(&self) -> u64 {
        self.states
            .iter()
            .map(|s| match s {
                ParamState::Projected(l) => l.proj.svd_count(),
                ParamState::Dense(_) => 0,
            })
            .sum()
    }

    /// Evaluates and describes the current state.
    pub fn record(&self, train_loss: Option<f64>) -> Result<MetricsRecord> {
        let val_loss = self.validation_loss()?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                step: self.step,
                detail: format!("validation loss {val_loss}; {}", self.layer_norms()),
            });
        }
        let per_layer = self
            .states
            .iter()
            .enumerate()
            .filter_map(|(id, s)| match s {
                ParamState::Projected(l) => Some(LayerMetrics {
                    layer_id: id,
                    interval: l.proj.interval(),
                    last_similarity: l.proj.last_similarity(),
                    svd_count: l.proj.svd_count(),
                }),
                ParamState::Dense(_) => None,
            })
            .collect();
        Ok(MetricsRecord {
            step: self.step,
            train_loss,
            val_loss,
            lr: self.lr_at(self.step),
            svd_calls_total: self.svd_calls_total(),
            per_layer,
            wallclock_ms: self.started.elapsed().as_millis() as u64,
            estimated_memory_bytes: self.memory_bytes,
        })
    }

    /// One optimisation step; returns the training loss of its batch.
    pub fn train_step(&mut self) -> Result<f64> {
        let step = self.step + 1;
        let batch = self.data.train_batch(self.cfg.batch_size, self.context, step, &self.streams)?;
        let adam_cfg = self.cfg.optimizer.with_lr(self.lr_at(step));
        let opts = StepOptions {
            rounding: self.cfg.rounding,
            reset_moments_on_update: self.cfg.reset_moments_on_update,
        };
        let states = &mut self.states;
        let streams = &self.streams;
        let loss = self.model.forward_backward(&batch, step, |slot| {
            update_param(slot, states, &adam_cfg, step, opts, streams)
        });
        let loss = loss.map_err(|e| match e {
            Error::NonFinite { .. } => Error::Divergence {
                step,
                detail: format!("non-finite update: {e}"),
            },
            other => other,
        })?;
        self.step = step;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("training loss {loss}; {}", self.layer_norms()),
            });
        }
        Ok(loss)
    }

    fn layer_norms(&self) -> String {
        let norms: Vec<String> = (0..self.params.len())
            .filter_map(|id| self.model.param(id))
            .map(|p| format!("{:.3e}", p.to_dense().frobenius_norm()))
            .collect();
        format!("layer norms [{}]", norms.join(", "))
    }

    /// Trains up to `until` (capped at the configured total), emitting a
    /// record at step 0 of a fresh run, every `eval_every` steps and at the
    /// final step.
    pub fn run_until(&mut self, until: u64, mut emit: impl FnMut(&MetricsRecord) -> Result<()>) -> Result<()> {
        let until = until.min(self.cfg.total_steps);
        if self.step == 0 {
            emit(&self.record(None)?)?;
        }
        while self.step < until {
            let loss = self.train_step()?;
            if self.step % self.cfg.eval_every == 0 || self.step == self.cfg.total_steps {
                emit(&self.record(Some(loss))?)?;
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Vec<NamedTensor> {
        let mut tensors = Vec::new();
        let mut words = vec![self.step, self.cfg.seed, self.cfg.fingerprint(), self.params.len() as u64];
        for (id, state) in self.states.iter().enumerate() {
            let store = self.model.param(id).expect("parameter ids are dense");
            tensors.push(NamedTensor::new(format!("param.{id}"), store.clone()));
            let adam = state.adam();
            words.push(matches!(state, ParamState::Projected(_)) as u64);
            words.push(adam.step_count);
            if let Some((m, v)) = &adam.moments {
                tensors.push(NamedTensor::new(format!("adam.{id}.m"), m.clone()));
                tensors.push(NamedTensor::new(format!("adam.{id}.v"), v.clone()));
            }
            if let ParamState::Projected(l) = state {
                let p = &l.proj;
                words.extend([p.interval, p.svd_count, p.last_update_step]);
                words.push(p.last_similarity.is_some() as u64);
                words.push(p.last_similarity.map_or(0, f64::to_bits));
                words.push(p.history.len() as u64);
                words.extend(p.history.iter().map(|h| h.to_bits()));
                if let (Some(stored), Some(prev)) = (&p.projection, &p.previous) {
                    tensors.push(NamedTensor::new(format!("proj.{id}.p"), stored.clone()));
                    tensors.push(NamedTensor::new(format!("proj.{id}.prev"), ParamStore::Dense(prev.clone())));
                }
            }
        }
        tensors.insert(0, words_to_tensor("meta", &words));
        tensors
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.snapshot())
    }

    /// Replaces the model and optimizer state with a snapshot's.
    pub fn restore(&mut self, tensors: Vec<NamedTensor>) -> Result<()> {
        let bad = |msg: String| Error::Checkpoint(msg);
        let mut iter = tensors.into_iter().peekable();
        let meta = iter.next().filter(|t| t.name == "meta").ok_or_else(|| bad("missing metadata".into()))?;
        let words = tensor_to_words(&meta)?;
        let mut w = words.iter().copied();
        let mut next_word = || w.next().ok_or_else(|| bad("metadata ends early".into()));
        let step = next_word()?;
        if next_word()? != self.cfg.seed {
            return Err(bad("checkpoint was written with a different seed".into()));
        }
        if next_word()? != self.cfg.fingerprint() {
            return Err(bad("checkpoint was written with a different configuration".into()));
        }
        if next_word()? != self.params.len() as u64 {
            return Err(bad("parameter count differs".into()));
        }
        let mut model = self.model.clone();
        let mut states = self.states.clone();
        let mut take = |name: String, like: &ParamStore<f32>| -> Result<ParamStore<f32>> {
            let t = iter.next().filter(|t| t.name == name).ok_or_else(|| bad(format!("missing tensor '{name}'")))?;
            if t.store.shape() != like.shape() || t.store.precision() != like.precision() {
                return Err(bad(format!("tensor '{name}' has the wrong shape or storage")));
            }
            Ok(t.store)
        };
        for (id, state) in states.iter_mut().enumerate() {
            let slot = model.param_mut(id).expect("parameter ids are dense");
            *slot = take(format!("param.{id}"), slot)?;
            let projected = next_word()? == 1;
            if projected != matches!(state, ParamState::Projected(_)) {
                return Err(bad(format!("parameter {id} has a different optimizer kind")));
            }
            let step_count = next_word()?;
            let shape = match state {
                ParamState::Projected(l) => l.proj.projected_shape(),
                ParamState::Dense(_) => self.params[id].shape,
            };
            let adam = state.adam_mut();
            adam.step_count = step_count;
            adam.moments = if step_count > 0 {
                let like = ParamStore::zeros(shape.0, shape.1, adam.precision);
                Some((take(format!("adam.{id}.m"), &like)?, take(format!("adam.{id}.v"), &like)?))
            } else {
                None
            };
            if let ParamState::Projected(l) = state {
                let p = &mut l.proj;
                p.interval = next_word()?;
                p.svd_count = next_word()?;
                p.last_update_step = next_word()?;
                let has_sim = next_word()? == 1;
                let sim = f64::from_bits(next_word()?);
                p.last_similarity = has_sim.then_some(sim);
                let len = next_word()?;
                p.history = (0..len).map(|_| next_word().map(f64::from_bits)).collect::<Result<_>>()?;
                if p.svd_count > 0 {
                    let dim = match p.side {
                        crate::subspace::Side::Left => p.layer_shape.0,
                        crate::subspace::Side::Right => p.layer_shape.1,
                    };
                    let like = ParamStore::zeros(dim, p.rank, p.config.precision);
                    p.projection = Some(take(format!("proj.{id}.p"), &like)?);
                    let prev = take(format!("proj.{id}.prev"), &ParamStore::zeros(dim, p.rank, Precision::Float))?;
                    p.previous = Some(prev.to_dense());
                } else {
                    p.projection = None;
                    p.previous = None;
                }
            }
        }
        if iter.next().is_some() || w.next().is_some() {
            return Err(bad("checkpoint holds unexpected extra state".into()));
        }
        self.model = model;
        self.states = states;
        self.step = step;
        Ok(())
    }
}

fn update_param(
    slot: ParamSlot<'_, f32>,
    states: &mut [ParamState],
    cfg: &AdamConfig,
    step: u64,
    opts: StepOptions,
    streams: &SeedStream,
) -> Result<()> {
    let mut rng = streams.substream(Domain::Rounding, slot.id as u64, step);
    let state = states
        .get_mut(slot.id)
        .ok_or_else(|| Error::State(format!("no optimizer state for parameter {}", slot.id)))?;
    match state {
        ParamState::Projected(l) => {
            layer_step(slot.store, slot.grad, l, cfg, step, opts, Some(&mut rng))?;
        }
        ParamState::Dense(adam) => {
            let decay = slot.kind == ParamKind::Matrix;
            dense_step(slot.store, slot.grad, adam, cfg, decay, opts.rounding, Some(&mut rng))?;
        }
    }
    Ok(())
}

/// Where a run writes its artifacts.
#[derive(Clone, Debug, Default)]
pub struct RunOutputs {
    pub metrics: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Continue from this checkpoint instead of starting fresh.
    pub resume: Option<PathBuf>,
    /// Stop (and checkpoint) once this step is reached.
    pub stop_after: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct TrainingSummary {
    pub records: Vec<MetricsRecord>,
    pub final_step: u64,
}

impl TrainingSummary {
    pub fn last(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }
}

/// Worker threads for internal parallelism, from `QGALORE_THREADS` (default 1).
pub fn thread_count() -> Result<usize> {
    match std::env::var("QGALORE_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("QGALORE_THREADS must be a positive integer, got '{v}'"))),
        },
    }
}

/// Runs (or resumes) training, streaming records to the metrics file and
/// writing a checkpoint at the end. On divergence a diagnostic line is
/// appended to the metrics stream and the error is returned.
pub fn run_training(cfg: RunConfig, outputs: &RunOutputs) -> Result<TrainingSummary> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_inner(cfg, outputs))
}

fn run_inner(cfg: RunConfig, outputs: &RunOutputs) -> Result<TrainingSummary> {
    let mut trainer = match &outputs.resume {
        Some(path) => Trainer::resume(cfg, path)?,
        None => Trainer::new(cfg)?,
    };
    let mut sink = match &outputs.metrics {
        Some(path) if outputs.resume.is_some() => Some(MetricsSink::append(path)?),
        Some(path) => Some(MetricsSink::create(path)?),
        None => None,
    };
    let mut records = Vec::new();
    let until = outputs.stop_after.unwrap_or(u64::MAX);
    let result = trainer.run_until(until, |r| {
        if let Some(s) = sink.as_mut() {
            s.write(r)?;
        }
        records.push(r.clone());
        Ok(())
    });
    if let Err(e) = result {
        if let (Error::Divergence { step, detail }, Some(s)) = (&e, sink.as_mut()) {
            s.write(&DivergenceRecord {
                step: *step,
                diverged: true,
                detail: detail.clone(),
            })?;
        }
        return Err(e);
    }
    if let Some(path) = &outputs.checkpoint {
        trainer.save(path)?;
    }
    Ok(TrainingSummary {
        records,
        final_step: trainer.step(),
    })
}
