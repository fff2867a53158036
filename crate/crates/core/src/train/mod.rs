//! Data, configuration, metrics, checkpoints and the training loop.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod memory;
pub mod metrics;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, NamedTensor};
pub use config::{DataConfig, Method, RunConfig};
pub use data::{generate_text, ingest_synthetic, ingest_text, Dataset, SyntheticRegression, TextCorpus};
pub use memory::{estimate_memory, estimate_memory_with, BitWidths, MemoryBreakdown};
pub use metrics::{read_metrics, DivergenceRecord, LayerMetrics, MetricsRecord, MetricsSink};
pub use trainer::{run_training, thread_count, ParamState, RunOutputs, Trainer, TrainingSummary};
