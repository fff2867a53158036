use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use qgalore::linalg::svd;
use qgalore::rng::{Domain, SeedStream};
use qgalore::train::checkpoint::tensor_to_words;
use qgalore::train::memory::BitWidths;
use qgalore::train::{
    estimate_memory_with, load_checkpoint, run_training, DataConfig, Dataset, Method, RunConfig, RunOutputs,
};
use qgalore::{Error, Matrix, ParamStore, Precision, Rounding};

#[derive(Parser)]
#[command(name = "qgalore", version, about = "Quantized low-rank gradient training on toy models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and stream metrics as JSON lines.
    Train(TrainArgs),
    /// Print the analytic memory breakdown of a configuration.
    EstimateMemory(EstimateArgs),
    /// List the tensors stored in a checkpoint.
    InspectCheckpoint { path: PathBuf },
    /// Time the SVD on a random matrix.
    BenchSvd {
        #[arg(long, default_value_t = 256)]
        rows: usize,
        #[arg(long, default_value_t = 256)]
        cols: usize,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Flags overriding fields of the run configuration.
#[derive(Args, Default)]
struct Overrides {
    /// TOML run configuration; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    total_steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    eval_examples: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    base_interval: Option<u64>,
    /// Number of consecutive similarities checked before doubling.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    adaptive: Option<bool>,
    /// 4, 8 or float.
    #[arg(long)]
    proj_bits: Option<Precision>,
    /// 8 or float.
    #[arg(long)]
    weight_bits: Option<Precision>,
    /// 8 or float.
    #[arg(long)]
    state_bits: Option<Precision>,
    /// sr or nearest.
    #[arg(long)]
    rounding: Option<Rounding>,
    #[arg(long)]
    reset_moments_on_update: Option<bool>,
    /// Train on a byte-level text file.
    #[arg(long)]
    data_file: Option<PathBuf>,
}

impl Overrides {
    fn resolve(&self, seed: Option<u64>) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                RunConfig::from_toml(&text)?
            }
            None => RunConfig::for_method(self.method.unwrap_or_default()),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { cfg.$($field).+ = v; })*
            };
        }
        set! {
            method => method,
            total_steps => total_steps,
            batch_size => batch_size,
            eval_every => eval_every,
            eval_examples => eval_examples,
            lr => optimizer.lr,
            weight_decay => optimizer.weight_decay,
            alpha => optimizer.alpha,
            base_interval => subspace.base_interval,
            window => subspace.window,
            threshold => subspace.threshold,
            adaptive => subspace.adaptive,
            proj_bits => subspace.precision,
            weight_bits => weight_bits,
            state_bits => state_bits,
            rounding => rounding,
            reset_moments_on_update => reset_moments_on_update,
        }
        if let Some(r) = self.rank {
            cfg.subspace.rank = Some(r);
        }
        if let Some(path) = &self.data_file {
            cfg.data = DataConfig::TextFile { path: path.clone() };
        }
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        Ok(cfg.resolve()?)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    overrides: Overrides,
    /// JSON-lines metrics stream.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    #[arg(long, default_value = "qgalore.ckpt")]
    checkpoint_out: PathBuf,
    /// Continue a run from its checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this step, checkpointing there.
    #[arg(long)]
    stop_after: Option<u64>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Width used for unquantized tensors (32, or 16 for bf16 accounting).
    #[arg(long, default_value_t = 32)]
    float_bits: u32,
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg = args.overrides.resolve(Some(args.seed))?;
    let outputs = RunOutputs {
        metrics: args.metrics_out,
        checkpoint: Some(args.checkpoint_out),
        resume: args.resume,
        stop_after: args.stop_after,
    };
    let summary = run_training(cfg, &outputs)?;
    if let Some(last) = summary.last() {
        println!(
            "step {} val_loss {:.6} svd_calls {} memory {} bytes",
            last.step, last.val_loss, last.svd_calls_total, last.estimated_memory_bytes
        );
    }
    Ok(())
}

fn estimate(args: EstimateArgs) -> Result<()> {
    if !matches!(args.float_bits, 16 | 32) {
        bail!("--float-bits must be 16 or 32");
    }
    let mut cfg = args.overrides.resolve(None)?;
    if let qgalore::model::ModelConfig::TinyCharLm { vocab: 0, .. } = cfg.model {
        let data = Dataset::load(&cfg.data, &SeedStream::new(cfg.seed))?;
        if let Some(v) = data.vocab_size() {
            cfg.model = cfg.model.with_vocab(v);
        }
    }
    let bits = BitWidths::from_run(&cfg, args.float_bits);
    let m = estimate_memory_with(&cfg.model, &cfg, bits);
    println!("weights           {:>12}", m.weights);
    println!("optimizer_states  {:>12}", m.optimizer_states);
    println!("projections       {:>12}", m.projections);
    println!("quant_metadata    {:>12}", m.quant_metadata);
    println!("total             {:>12}", m.total());
    println!("total_no_metadata {:>12}", m.total_without_metadata());
    Ok(())
}

fn inspect(path: PathBuf) -> Result<()> {
    let tensors = load_checkpoint(&path)?;
    for t in &tensors {
        let (rows, cols) = t.store.shape();
        let detail = match &t.store {
            ParamStore::Dense(_) => "f32".to_string(),
            ParamStore::Quantized(q) => format!("int{} block {}", q.spec().bits(), q.spec().block_size()),
        };
        println!("{:<20} {:>6} x {:<6} {}", t.name, rows, cols, detail);
    }
    if let Some(meta) = tensors.iter().find(|t| t.name == "meta") {
        let words = tensor_to_words(meta)?;
        if let [step, seed, fingerprint, ..] = words[..] {
            println!("step {step} seed {seed} config {fingerprint:016x}");
        }
    }
    Ok(())
}

fn bench_svd(rows: usize, cols: usize, reps: usize, seed: u64) -> Result<()> {
    let mut rng = SeedStream::new(seed).substream(Domain::Test, 0, 0);
    let a = Matrix::<f32>::randn(rows, cols, 1.0, &mut rng);
    let mut best = f64::INFINITY;
    let mut residual = 0.0;
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        let s = svd(&a)?;
        best = best.min(start.elapsed().as_secs_f64());
        let us = Matrix::from_fn(s.u.rows(), s.u.cols(), |i, j| s.u[(i, j)] * s.sigma[j]);
        residual = us.matmul_t(&s.v)?.sub(&a)?.frobenius_norm() / a.frobenius_norm();
    }
    println!("svd {rows}x{cols}: best {:.3} ms over {reps} runs, relative residual {residual:.2e}", best * 1e3);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => train(args),
        Command::EstimateMemory(args) => estimate(args),
        Command::InspectCheckpoint { path } => inspect(path),
        Command::BenchSvd { rows, cols, reps, seed } => bench_svd(rows, cols, reps, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Divergence { .. }) => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
