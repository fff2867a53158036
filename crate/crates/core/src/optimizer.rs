//! Adam in the projected subspace, with optionally 8-bit moments, and the
//! fused per-layer update that ties projection, Adam and rounding together.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::quant::{ParamStore, Precision, Rounding};
use crate::scalar::Scalar;
use crate::subspace::ProjectionState;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Scale applied to back-projected low-rank updates.
    pub alpha: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            alpha: 0.25,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.alpha.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam configuration {self:?}")))
        }
    }

    pub fn with_lr(self, lr: f64) -> Self {
        Self { lr, ..self }
    }
}

/// First and second moments, stored at `precision` and lazily zero-initialised.
///
/// When quantized, the second moment is held as `√v`: its entries span many
/// orders of magnitude within a block, and a linear grid rounds the small
/// ones to zero, which turns `m / (√v + eps)` into a huge step.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub(crate) precision: Precision,
    pub(crate) moments: Option<(ParamStore<T>, ParamStore<T>)>,
    pub(crate) step_count: u64,
}

/// Moments of an Adam run inside a projected subspace.
pub type LowRankAdamState<T> = AdamState<T>;

impl<T: Scalar> AdamState<T> {
    pub fn new(precision: Precision) -> Self {
        Self {
            precision,
            moments: None,
            step_count: 0,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn shape(&self) -> Option<(usize, usize)> {
        self.moments.as_ref().map(|(m, _)| m.shape())
    }

    fn stores_root(&self) -> bool {
        self.precision != Precision::Float
    }

    /// Dequantized `(m, v)`, if initialised.
    pub fn moments(&self) -> Option<(Matrix<T>, Matrix<T>)> {
        self.moments.as_ref().map(|(m, v)| {
            let v = v.to_dense();
            let v = if self.stores_root() { v.map(|x| x * x) } else { v };
            (m.to_dense(), v)
        })
    }

    pub fn reset(&mut self) {
        self.moments = None;
        self.step_count = 0;
    }
}

/// One Adam update on `r`; returns the normalised direction `m̂ / (√v̂ + eps)`.
pub fn adam_step<T: Scalar>(state: &mut AdamState<T>, r: &Matrix<T>, cfg: &AdamConfig) -> Result<Matrix<T>> {
    let (rows, cols) = r.shape();
    let root = state.stores_root();
    let (m_prev, v_prev) = match &state.moments {
        Some((m, v)) => {
            if m.shape() != r.shape() {
                return Err(shape_err(
                    "adam_step",
                    format!("state {:?}, gradient {:?}", m.shape(), r.shape()),
                ));
            }
            (m.to_dense(), v.to_dense())
        }
        None => (Matrix::zeros(rows, cols), Matrix::zeros(rows, cols)),
    };
    let t = state.step_count + 1;
    let bc1 = 1.0 - cfg.beta1.powf(t as f64);
    let bc2 = 1.0 - cfg.beta2.powf(t as f64);

    let n = r.len();
    let mut m_new = Vec::with_capacity(n);
    let mut v_new = Vec::with_capacity(n);
    let mut dir = Vec::with_capacity(n);
    for ((g, mp), vp) in r.as_slice().iter().zip(m_prev.as_slice()).zip(v_prev.as_slice()) {
        let g = g.widen();
        let m = cfg.beta1 * mp.widen() + (1.0 - cfg.beta1) * g;
        let vp = vp.widen().max(0.0);
        let vp = if root { vp * vp } else { vp };
        let v = cfg.beta2 * vp + (1.0 - cfg.beta2) * g * g;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        dir.push(T::cast(m_hat / (v_hat.sqrt() + cfg.eps)));
        m_new.push(T::cast(m));
        v_new.push(T::cast(if root { v.sqrt() } else { v }));
    }
    let m_store = ParamStore::new(Matrix::from_vec(rows, cols, m_new)?, state.precision)?;
    let v_store = ParamStore::new(Matrix::from_vec(rows, cols, v_new)?, state.precision)?;
    state.moments = Some((m_store, v_store));
    state.step_count = t;
    Matrix::from_vec(rows, cols, dir)
}

/// Alias kept for the low-rank call site.
pub fn adam_step_lowrank<T: Scalar>(state: &mut LowRankAdamState<T>, r: &Matrix<T>, cfg: &AdamConfig) -> Result<Matrix<T>> {
    adam_step(state, r, cfg)
}

/// Optimizer state of one projected weight matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState<T> {
    pub proj: ProjectionState<T>,
    pub adam: AdamState<T>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepOptions {
    pub rounding: Rounding,
    pub reset_moments_on_update: bool,
}

/// Fused update of one weight matrix from its gradient:
///
/// 1. refresh the projection if due,
/// 2. `R = project(G)`,
/// 3. `N = adam(R)`,
/// 4. `Δ = -lr·α·project_back(N) - lr·wd·W`,
/// 5. `W <- round(W + Δ)`.
///
/// `g` is consumed. Returns whether the projection was recomputed. On error
/// neither the weights nor the optimizer state change.
pub fn layer_step<T: Scalar, R: Rng>(
    weights: &mut ParamStore<T>,
    g: Matrix<T>,
    state: &mut LayerState<T>,
    cfg: &AdamConfig,
    step: u64,
    opts: StepOptions,
    rng: Option<&mut R>,
) -> Result<bool> {
    if g.shape() != weights.shape() {
        return Err(shape_err(
            "layer_step",
            format!("gradient {:?} for weights {:?}", g.shape(), weights.shape()),
        ));
    }
    let mut next = state.clone();
    let updated = next.proj.maybe_update(&g, step)?;
    if updated && opts.reset_moments_on_update {
        next.adam.reset();
    }
    let r = next.proj.project(&g)?;
    drop(g);
    let n = adam_step(&mut next.adam, &r, cfg)?;
    let mut delta = next.proj.project_back(&n)?.scale(T::cast(-cfg.lr * cfg.alpha));
    let current = weights.to_dense();
    if cfg.weight_decay > 0.0 {
        delta.axpy(T::cast(-cfg.lr * cfg.weight_decay), &current)?;
    }
    weights.apply_update(&delta, opts.rounding, rng)?;
    *state = next;
    Ok(updated)
}

/// Full-rank Adam update (no projection, no α). Weight decay applies only
/// when `decay` is set.
pub fn dense_step<T: Scalar, R: Rng>(
    weights: &mut ParamStore<T>,
    g: Matrix<T>,
    adam: &mut AdamState<T>,
    cfg: &AdamConfig,
    decay: bool,
    rounding: Rounding,
    rng: Option<&mut R>,
) -> Result<()> {
    if g.shape() != weights.shape() {
        return Err(shape_err(
            "dense_step",
            format!("gradient {:?} for weights {:?}", g.shape(), weights.shape()),
        ));
    }
    let mut next = adam.clone();
    let n = adam_step(&mut next, &g, cfg)?;
    let mut delta = n.scale(T::cast(-cfg.lr));
    if decay && cfg.weight_decay > 0.0 {
        delta.axpy(T::cast(-cfg.lr * cfg.weight_decay), &weights.to_dense())?;
    }
    weights.apply_update(&delta, rounding, rng)?;
    *adam = next;
    Ok(())
}

/// Linear warmup to `lr`, then cosine decay to `min_lr_ratio · lr`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub warmup_frac: f64,
    pub min_lr_ratio: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            warmup_frac: 0.1,
            min_lr_ratio: 0.1,
        }
    }
}

impl LrSchedule {
    pub fn warmup_steps(&self, total_steps: u64) -> u64 {
        (total_steps as f64 * self.warmup_frac).round() as u64
    }

    pub fn lr_at(&self, step: u64, total_steps: u64, lr: f64) -> f64 {
        let step = step.min(total_steps);
        let warmup = self.warmup_steps(total_steps);
        if step < warmup {
            return lr * step as f64 / warmup as f64;
        }
        let span = total_steps - warmup;
        if span == 0 || step == warmup {
            return lr;
        }
        let progress = (step - warmup) as f64 / span as f64;
        let min_lr = lr * self.min_lr_ratio;
        min_lr + 0.5 * (lr - min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

pub fn lr_schedule(step: u64, total_steps: u64, lr: f64, schedule: &LrSchedule) -> f64 {
    schedule.lr_at(step, total_steps, lr)
}
