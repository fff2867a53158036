//! Analytic memory accounting for a training run.

use serde::Serialize;

use super::config::{Method, RunConfig};
use crate::model::{ModelConfig, ParamKind};
use crate::quant::{Precision, DEFAULT_BLOCK_SIZE};
use crate::subspace::Side;

/// Bytes of quantization metadata per block: one f32 scale and one f32 zero.
pub const METADATA_BYTES_PER_BLOCK: u64 = 8;

/// Storage widths in bits. Widths of 16 or more count as unquantized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BitWidths {
    pub weights: u32,
    pub states: u32,
    pub projections: u32,
}

impl BitWidths {
    /// Widths of a run, with unquantized tensors counted at `float_bits`.
    pub fn from_run(run: &RunConfig, float_bits: u32) -> Self {
        let width = |p: Precision| p.bits().map_or(float_bits, u32::from);
        Self {
            weights: width(run.weight_bits),
            states: width(run.state_bits),
            projections: width(run.subspace.precision),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MemoryBreakdown {
    pub weights: u64,
    pub optimizer_states: u64,
    pub projections: u64,
    pub quant_metadata: u64,
}

impl MemoryBreakdown {
    pub fn total(&self) -> u64 {
        self.total_without_metadata() + self.quant_metadata
    }

    pub fn total_without_metadata(&self) -> u64 {
        self.weights + self.optimizer_states + self.projections
    }
}

#[derive(Default)]
struct Tally {
    payload: u64,
    metadata: u64,
}

impl Tally {
    fn add(&mut self, elements: usize, bits: u32) {
        self.payload += (elements as u64 * bits as u64).div_ceil(8);
        if bits <= 8 {
            self.metadata += elements.div_ceil(DEFAULT_BLOCK_SIZE) as u64 * METADATA_BYTES_PER_BLOCK;
        }
    }
}

/// Estimate with unquantized tensors counted as fp32.
pub fn estimate_memory(model: &ModelConfig, run: &RunConfig) -> MemoryBreakdown {
    estimate_memory_with(model, run, BitWidths::from_run(run, 32))
}

/// Byte counts for every parameter, its optimizer moments and its
/// projection. Weight matrices are stored at `bits.weights`; biases and
/// embeddings stay at 32 bits. Matrices are projected unless the method is
/// full-rank Adam. A character model with `vocab = 0` counts no vocabulary.
pub fn estimate_memory_with(model: &ModelConfig, run: &RunConfig, bits: BitWidths) -> MemoryBreakdown {
    let mut weights = Tally::default();
    let mut states = Tally::default();
    let mut projections = Tally::default();
    for p in model.param_shapes() {
        let (rows, cols) = p.shape;
        let n = rows * cols;
        match p.kind {
            ParamKind::Vector => {
                weights.add(n, 32);
                states.add(2 * n, bits.states);
            }
            ParamKind::Matrix => {
                weights.add(n, bits.weights);
                if run.method == Method::FullAdam {
                    states.add(2 * n, bits.states);
                } else {
                    let r = run.subspace.rank_for(rows, cols);
                    let (dim, other) = match Side::for_shape(rows, cols) {
                        Side::Left => (rows, cols),
                        Side::Right => (cols, rows),
                    };
                    // two moments, each of the projected shape
                    states.add(r * other, bits.states);
                    states.add(r * other, bits.states);
                    projections.add(dim * r, bits.projections);
                }
            }
        }
    }
    MemoryBreakdown {
        weights: weights.payload,
        optimizer_states: states.payload,
        projections: projections.payload,
        quant_metadata: weights.metadata + states.metadata + projections.metadata,
    }
}
