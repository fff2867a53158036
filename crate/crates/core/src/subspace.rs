//! Per-layer gradient subspace tracking.
//!
//! A [`ProjectionState`] holds the (quantized) projection matrix of one
//! weight matrix. The projection is refreshed by SVD of the current
//! gradient every `interval` steps; each refresh is compared with the
//! previous projection and, once the last `window` similarities all reach
//! `threshold`, the interval doubles.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::{projection_similarity, sign_align, svd, Matrix, SimilarityMetric};
use crate::quant::{ParamStore, Precision};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `P` spans the column space: `R = Pᵀ G`.
    Left,
    /// `P` spans the row space: `R = G P`.
    Right,
}

impl Side {
    pub fn for_shape(rows: usize, cols: usize) -> Self {
        if rows <= cols {
            Side::Left
        } else {
            Side::Right
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubspaceConfig {
    /// Projection rank; `None` picks a quarter of the projected dimension.
    pub rank: Option<usize>,
    pub base_interval: u64,
    pub window: usize,
    pub threshold: f64,
    pub adaptive: bool,
    pub max_interval: Option<u64>,
    pub precision: Precision,
    pub metric: SimilarityMetric,
    pub clear_history_on_double: bool,
}

impl Default for SubspaceConfig {
    fn default() -> Self {
        Self {
            rank: None,
            base_interval: 200,
            window: 3,
            threshold: 0.4,
            adaptive: true,
            max_interval: None,
            precision: Precision::Int4,
            metric: SimilarityMetric::AlignedFlatCosine,
            clear_history_on_double: true,
        }
    }
}

impl SubspaceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_interval == 0 {
            return Err(Error::Config("subspace interval must be positive".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("similarity window must be positive".into()));
        }
        // thresholds above 1 are allowed and disable doubling
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(Error::Config("similarity threshold must be a non-negative number".into()));
        }
        if self.rank == Some(0) {
            return Err(Error::Config("rank must be positive".into()));
        }
        if let Some(cap) = self.max_interval {
            if cap < self.base_interval {
                return Err(Error::Config("max interval is below the base interval".into()));
            }
        }
        Ok(())
    }

    /// Rank used for a layer of the given shape.
    pub fn rank_for(&self, rows: usize, cols: usize) -> usize {
        let dim = rows.min(cols);
        self.rank.unwrap_or_else(|| (dim / 4).max(1)).min(dim)
    }
}

/// Top-`rank` singular vectors of `g`: left ones when `rows <= cols`,
/// right ones otherwise.
pub fn compute_projection<T: Scalar>(g: &Matrix<T>, rank: usize) -> Result<Matrix<T>> {
    let (rows, cols) = g.shape();
    if rank == 0 || rank > rows.min(cols) {
        return Err(shape_err(
            "compute_projection",
            format!("rank {rank} for a {rows}x{cols} gradient"),
        ));
    }
    if g.is_all_zero() {
        return Err(Error::ZeroMatrix("projection"));
    }
    let s = svd(g)?;
    Ok(match Side::for_shape(rows, cols) {
        Side::Left => s.u.leading_columns(rank),
        Side::Right => s.v.leading_columns(rank),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionState<T> {
    pub(crate) config: SubspaceConfig,
    pub(crate) layer_shape: (usize, usize),
    pub(crate) side: Side,
    pub(crate) rank: usize,
    pub(crate) projection: Option<ParamStore<T>>,
    pub(crate) previous: Option<Matrix<T>>,
    pub(crate) interval: u64,
    pub(crate) history: VecDeque<f64>,
    pub(crate) svd_count: u64,
    pub(crate) last_update_step: u64,
    pub(crate) last_similarity: Option<f64>,
    pub(crate) frozen: bool,
}

impl<T: Scalar> ProjectionState<T> {
    pub fn new(layer_shape: (usize, usize), config: SubspaceConfig) -> Result<Self> {
        config.validate()?;
        let (rows, cols) = layer_shape;
        if rows == 0 || cols == 0 {
            return Err(shape_err("ProjectionState::new", "empty layer"));
        }
        let rank = config.rank_for(rows, cols);
        if let Some(r) = config.rank {
            if r > rows.min(cols) {
                return Err(Error::Config(format!(
                    "rank {r} exceeds min dimension of a {rows}x{cols} layer"
                )));
            }
        }
        Ok(Self {
            interval: config.base_interval,
            config,
            layer_shape,
            side: Side::for_shape(rows, cols),
            rank,
            projection: None,
            previous: None,
            history: VecDeque::new(),
            svd_count: 0,
            last_update_step: 0,
            last_similarity: None,
            frozen: false,
        })
    }

    /// A state pinned to a given projection that never recomputes.
    pub fn fixed(layer_shape: (usize, usize), projection: Matrix<T>, side: Side, precision: Precision) -> Result<Self> {
        let expected_rows = match side {
            Side::Left => layer_shape.0,
            Side::Right => layer_shape.1,
        };
        if projection.rows() != expected_rows {
            return Err(shape_err(
                "ProjectionState::fixed",
                format!("projection {:?} for layer {layer_shape:?}", projection.shape()),
            ));
        }
        let config = SubspaceConfig {
            rank: Some(projection.cols()),
            adaptive: false,
            precision,
            ..SubspaceConfig::default()
        };
        Ok(Self {
            interval: config.base_interval,
            rank: projection.cols(),
            config,
            layer_shape,
            side,
            projection: Some(ParamStore::new(projection.clone(), precision)?),
            previous: Some(projection),
            history: VecDeque::new(),
            svd_count: 0,
            last_update_step: 0,
            last_similarity: None,
            frozen: true,
        })
    }

    pub fn config(&self) -> &SubspaceConfig {
        &self.config
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn interval(&self) -> u64 {
        self.interval
    }

    pub fn svd_count(&self) -> u64 {
        self.svd_count
    }

    pub fn last_update_step(&self) -> u64 {
        self.last_update_step
    }

    pub fn last_similarity(&self) -> Option<f64> {
        self.last_similarity
    }

    pub fn history(&self) -> impl Iterator<Item = f64> + '_ {
        self.history.iter().copied()
    }

    pub fn is_initialized(&self) -> bool {
        self.projection.is_some()
    }

    pub fn projection(&self) -> Option<&ParamStore<T>> {
        self.projection.as_ref()
    }

    /// Unquantized copy of the most recent projection.
    pub fn dense_projection(&self) -> Option<&Matrix<T>> {
        self.previous.as_ref()
    }

    /// Shape of `project(G)`.
    pub fn projected_shape(&self) -> (usize, usize) {
        match self.side {
            Side::Left => (self.rank, self.layer_shape.1),
            Side::Right => (self.layer_shape.0, self.rank),
        }
    }

    /// Recomputes the projection if `interval` steps have passed since the
    /// last recomputation (or none has happened yet). Returns whether it did.
    /// On error the state is unchanged.
    pub fn maybe_update(&mut self, g: &Matrix<T>, step: u64) -> Result<bool> {
        if self.frozen {
            return Ok(false);
        }
        if g.shape() != self.layer_shape {
            return Err(shape_err(
                "maybe_update",
                format!("gradient {:?} for layer {:?}", g.shape(), self.layer_shape),
            ));
        }
        if self.is_initialized() && step.saturating_sub(self.last_update_step) < self.interval {
            return Ok(false);
        }
        let fresh = compute_projection(g, self.rank)?;
        let (fresh, similarity) = match &self.previous {
            Some(prev) => {
                let sim = projection_similarity(prev, &fresh, self.config.metric)?;
                (sign_align(prev, &fresh)?, Some(sim))
            }
            None => (fresh, None),
        };
        let stored = ParamStore::new(fresh.clone(), self.config.precision)?;

        // commit
        if let Some(sim) = similarity {
            self.history.push_back(sim);
            while self.history.len() > self.config.window {
                self.history.pop_front();
            }
            if self.config.adaptive && self.history.len() == self.config.window && self.history.iter().all(|&s| s >= self.config.threshold) {
                let doubled = self.interval.saturating_mul(2);
                if self.config.max_interval.is_none_or(|cap| doubled <= cap) {
                    self.interval = doubled;
                }
                if self.config.clear_history_on_double {
                    self.history.clear();
                }
            }
        }
        self.last_similarity = similarity;
        self.previous = Some(fresh);
        self.projection = Some(stored);
        self.svd_count += 1;
        self.last_update_step = step;
        Ok(true)
    }

    fn dequantized(&self) -> Result<Matrix<T>> {
        self.projection
            .as_ref()
            .map(ParamStore::to_dense)
            .ok_or_else(|| Error::State("projection used before its first update".into()))
    }

    /// Low-rank view of a full gradient.
    pub fn project(&self, g: &Matrix<T>) -> Result<Matrix<T>> {
        if g.shape() != self.layer_shape {
            return Err(shape_err(
                "project",
                format!("gradient {:?} for layer {:?}", g.shape(), self.layer_shape),
            ));
        }
        let p = self.dequantized()?;
        match self.side {
            Side::Left => p.t_matmul(g),
            Side::Right => g.matmul(&p),
        }
    }

    /// Maps a low-rank update back to the layer's full shape.
    pub fn project_back(&self, n: &Matrix<T>) -> Result<Matrix<T>> {
        if n.shape() != self.projected_shape() {
            return Err(shape_err(
                "project_back",
                format!("update {:?}, expected {:?}", n.shape(), self.projected_shape()),
            ));
        }
        let p = self.dequantized()?;
        match self.side {
            Side::Left => p.matmul(n),
            Side::Right => n.matmul_t(&p),
        }
    }
}
