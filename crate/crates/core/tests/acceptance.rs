//! Acceptance suite: one pass/fail line per criterion.
//!
//! Runs as a plain binary so the report is always printed. Exits non-zero if
//! any criterion fails.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use qgalore::linalg::svd;
use qgalore::model::{Batch, ModelConfig};
use qgalore::optimizer::{layer_step, AdamConfig, AdamState, LayerState, StepOptions};
use qgalore::quant::{apply_update_sr, quantize, stochastic_round};
use qgalore::rng::{Domain, Rng, SeedStream};
use qgalore::subspace::{ProjectionState, Side, SubspaceConfig};
use qgalore::train::checkpoint::{decode, encode};
use qgalore::train::memory::BitWidths;
use qgalore::train::{
    estimate_memory_with, ingest_synthetic, DataConfig, MetricsRecord, Method, RunConfig, Trainer,
};
use qgalore::{Matrix, ParamStore, Precision, QuantSpec, Rounding};
use rand::Rng as _;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn stream(seed: u64, index: u64) -> Rng {
    SeedStream::new(seed).substream(Domain::Test, index, 0)
}

// ---------------------------------------------------------------- criterion 1

fn quant_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = stream(1, 0);
    let mut worst = 0.0f64;
    let mut elements = 0usize;
    for t in 0..1000 {
        let rows = rng.random_range(1..=512);
        let cols = rng.random_range(1..=512);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let w = Matrix::<f32>::randn(rows, cols, scale, &mut rng);
        let spec = if t % 2 == 0 { QuantSpec::int8(Rounding::NearestTiesToEven) } else { QuantSpec::int4(Rounding::NearestTiesToEven) };
        let q = quantize::<f32, Rng>(&w, spec, None).unwrap();
        let dq = q.dequantize();
        for (i, (a, b)) in w.as_slice().iter().zip(dq.as_slice()).enumerate() {
            let s = q.scales()[i / spec.block_size()] as f64;
            worst = worst.max((*a as f64 - *b as f64).abs() / (s / 2.0));
        }
        elements += w.len();
    }
    let elapsed = start.elapsed();
    // f32 evaluation of (q - z)·s may overshoot s/2 by a few ulps of |w|
    let pass = worst <= 1.0 + 1e-4 && elapsed < Duration::from_secs(30);
    Outcome::new(pass, format!("{elements} elements, max |err| / (s/2) = {worst:.6}, {:.1} s", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------- criterion 2

fn sr_unbiased() -> Outcome {
    let draws = 100_000;
    let mut failures = Vec::new();
    let mut worst_sigma = 0.0f64;
    for i in 0..20 {
        let x = -1.9 + 0.2 * i as f64 + 0.013 * (i % 3) as f64;
        let p = x - x.floor();
        let mut rng = stream(2, i);
        let sum: i64 = (0..draws).map(|_| stochastic_round(x, &mut rng)).sum();
        let mean = sum as f64 / draws as f64;
        let sigma = (p * (1.0 - p) / draws as f64).sqrt();
        let z = (mean - x).abs() / sigma;
        worst_sigma = worst_sigma.max(z);
        if z > 3.0 {
            failures.push(format!("x={x:.3} mean={mean:.5}"));
        }
    }

    let mut rng = stream(2, 100);
    let w = Matrix::<f32>::randn(2, 256, 0.05, &mut rng);
    let wq = quantize::<f32, Rng>(&w, QuantSpec::int8(Rounding::NearestTiesToEven), None).unwrap();
    let c = wq.scales().iter().fold(f32::MAX, |m, &s| m.min(s)) * 0.2;
    let delta = Matrix::from_fn(2, 256, |_, _| c);
    let base = wq.dequantize();
    let trials = 10_000;
    let mut drift = 0.0f64;
    for t in 0..trials {
        let mut tr = stream(2, 1000 + t);
        let out = apply_update_sr(&wq, &delta, &mut tr).unwrap().dequantize();
        drift += out.as_slice().iter().zip(base.as_slice()).map(|(a, b)| (a - b) as f64).sum::<f64>() / out.len() as f64;
    }
    let mean = drift / trials as f64;
    let rel = (mean - c as f64).abs() / c as f64;
    Outcome::new(
        failures.is_empty() && rel <= 0.05,
        format!("worst deviation {worst_sigma:.2} sigma over 20 scalars; SR drift {mean:.3e} vs {c:.3e} ({:.2}% off)", 100.0 * rel),
    )
}

// ---------------------------------------------------------------- criterion 3

fn svd_oracle() -> Outcome {
    let mut rng = stream(3, 0);
    let (mut recon, mut ortho, mut eig) = (0.0f64, 0.0f64, 0.0f64);
    for case in 0..100 {
        let (rows, cols) = match case % 4 {
            0 => (rng.random_range(1..=96), rng.random_range(1..=96)),
            1 => (rng.random_range(32..=128), rng.random_range(1..=16)),
            2 => (rng.random_range(1..=16), rng.random_range(32..=128)),
            _ => {
                let n = rng.random_range(1..=64);
                (n, n)
            }
        };
        let a = Matrix::<f32>::randn(rows, cols, 1.0, &mut rng);
        let s = svd(&a).unwrap();
        let k = rows.min(cols);

        let a64 = DMatrix::from_fn(rows, cols, |i, j| a[(i, j)] as f64);
        let u = DMatrix::from_fn(rows, k, |i, j| s.u[(i, j)] as f64);
        let v = DMatrix::from_fn(cols, k, |i, j| s.v[(i, j)] as f64);
        let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(k, s.sigma.iter().map(|&x| x as f64)));
        recon = recon.max((&u * &sigma * v.transpose() - &a64).norm() / a64.norm());
        for q in [&u, &v] {
            let g = q.transpose() * q - DMatrix::identity(k, k);
            ortho = ortho.max(g.amax());
        }
        let mut lambda: Vec<f64> = (a64.transpose() * &a64).symmetric_eigen().eigenvalues.iter().copied().collect();
        lambda.sort_by(|x, y| y.total_cmp(x));
        let floor = 1e-12 * lambda[0].max(1e-300);
        for (i, &l) in lambda.iter().take(k).enumerate() {
            let sq = (s.sigma[i] as f64).powi(2);
            eig = eig.max((sq - l).abs() / l.abs().max(floor));
        }
    }
    Outcome::new(
        recon <= 1e-5 && ortho <= 1e-4 && eig <= 1e-4,
        format!("100 shapes: reconstruction {recon:.2e}, orthonormality {ortho:.2e}, sigma^2 vs eig {eig:.2e}"),
    )
}

// ---------------------------------------------------------------- criterion 4

/// Textbook dense Adam in f64.
struct DenseAdam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl DenseAdam {
    fn step(&mut self, w: &mut [f64], g: &[f64], lr: f64, b1: f64, b2: f64, eps: f64) {
        self.t += 1;
        for i in 0..w.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = self.m[i] / (1.0 - b1.powi(self.t));
            let vh = self.v[i] / (1.0 - b2.powi(self.t));
            w[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

fn galore_oracle() -> Outcome {
    let (rows, cols) = (12, 20);
    let mut rng = stream(4, 0);
    let w0 = Matrix::<f32>::randn(rows, cols, 1.0, &mut rng);
    let target = Matrix::<f32>::randn(rows, cols, 1.0, &mut rng);
    let cfg = AdamConfig {
        lr: 1e-2,
        alpha: 1.0,
        weight_decay: 0.0,
        ..AdamConfig::default()
    };

    let mut weights = ParamStore::Dense(w0.clone());
    let proj = ProjectionState::fixed((rows, cols), Matrix::identity(rows), Side::Left, Precision::Float).unwrap();
    let mut state = LayerState {
        proj,
        adam: AdamState::new(Precision::Float),
    };
    let mut ref_w: Vec<f64> = w0.as_slice().iter().map(|&x| x as f64).collect();
    let mut oracle = DenseAdam {
        m: vec![0.0; ref_w.len()],
        v: vec![0.0; ref_w.len()],
        t: 0,
    };
    let opts = StepOptions::default();
    let mut worst = 0.0f64;
    for step in 1..=200u64 {
        let noise = Matrix::<f32>::randn(rows, cols, 0.1, &mut rng);
        // gradient of 0.5·|W - target|² plus noise, each side on its own weights
        let current = weights.to_dense();
        let g = Matrix::from_fn(rows, cols, |i, j| current[(i, j)] - target[(i, j)] + noise[(i, j)]);
        let g_ref: Vec<f64> = (0..ref_w.len())
            .map(|k| ref_w[k] - target.as_slice()[k] as f64 + noise.as_slice()[k] as f64)
            .collect();
        layer_step(&mut weights, g, &mut state, &cfg, step, opts, None::<&mut Rng>).unwrap();
        oracle.step(&mut ref_w, &g_ref, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
        let now = weights.to_dense();
        for (a, b) in now.as_slice().iter().zip(&ref_w) {
            worst = worst.max((*a as f64 - b).abs());
        }
    }
    Outcome::new(worst <= 1e-5, format!("max |W - W_adam| over 200 steps = {worst:.2e}"))
}

// ---------------------------------------------------------------- criterion 5

fn run_stream(cfg: &SubspaceConfig, shape: (usize, usize), steps: u64, mut grad: impl FnMut(u64) -> Matrix<f32>) -> ProjectionState<f32> {
    let mut p = ProjectionState::new(shape, cfg.clone()).unwrap();
    for step in 1..=steps {
        let g = grad(step);
        p.maybe_update(&g, step).unwrap();
    }
    p
}

fn adaptive_lazy_update() -> Outcome {
    let start = Instant::now();
    let (rows, cols) = (32, 64);
    let mut rng = stream(5, 0);
    let u = svd(&Matrix::<f32>::randn(rows, 4, 1.0, &mut rng)).unwrap().u;
    let v = svd(&Matrix::<f32>::randn(cols, 4, 1.0, &mut rng)).unwrap().u;
    let signal = Matrix::from_fn(rows, 4, |i, j| u[(i, j)] * [4.0, 3.0, 2.0, 1.0][j]).matmul_t(&v).unwrap();
    let noise_std = 0.01 * signal.frobenius_norm() / ((rows * cols) as f64).sqrt();
    let cfg = SubspaceConfig {
        rank: Some(4),
        base_interval: 10,
        window: 3,
        threshold: 0.4,
        adaptive: true,
        ..SubspaceConfig::default()
    };
    let signal = &signal;
    let stationary = |seed: u64| {
        let mut r = stream(5, seed);
        move |_| signal.add(&Matrix::randn(rows, cols, noise_std, &mut r)).unwrap()
    };
    let adaptive = run_stream(&cfg, (rows, cols), 2000, stationary(1)).svd_count();
    let fixed_cfg = SubspaceConfig { adaptive: false, ..cfg.clone() };
    let fixed = run_stream(&fixed_cfg, (rows, cols), 2000, stationary(1)).svd_count();

    // fresh random gradients: interval must stay at the base over 20 recomputations
    let mut p = ProjectionState::<f32>::new((rows, cols), cfg.clone()).unwrap();
    let mut r = stream(5, 2);
    let mut step = 0;
    let mut max_interval = 0;
    while p.svd_count() < 20 {
        step += 1;
        p.maybe_update(&Matrix::randn(rows, cols, 1.0, &mut r), step).unwrap();
        max_interval = max_interval.max(p.interval());
    }
    let ratio = adaptive as f64 / fixed as f64;
    let elapsed = start.elapsed();
    Outcome::new(
        ratio <= 0.4 && max_interval == cfg.base_interval && elapsed < Duration::from_secs(60),
        format!(
            "stationary: {adaptive} vs {fixed} SVDs ({:.0}%); random: max interval {max_interval} over 20 recomputations; {:.1} s",
            100.0 * ratio,
            elapsed.as_secs_f64()
        ),
    )
}

// ------------------------------------------------------------ criteria 6 - 8

const CHARLM_STEPS: u64 = 5000;
const CHARLM_EVAL: u64 = 50;
const CHARLM_QGALORE_LR: f64 = 0.01;
const CHARLM_ADAM_LR: f64 = 0.004;

fn charlm_config(method: Method, seed: u64) -> RunConfig {
    let mut c = RunConfig::for_method(method);
    c.model = ModelConfig::TinyCharLm {
        vocab: 0,
        embed_dim: 16,
        context: 32,
        hidden: 128,
        blocks: 2,
    };
    c.data = DataConfig::GeneratedText { bytes: 1 << 20 };
    c.total_steps = CHARLM_STEPS;
    c.eval_every = CHARLM_EVAL;
    c.batch_size = 32;
    c.eval_examples = 2048;
    c.seed = seed;
    c.optimizer.lr = if method == Method::FullAdam { CHARLM_ADAM_LR } else { CHARLM_QGALORE_LR };
    c
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum Variant {
    Sr(Precision),
    Rtn,
    FullAdam,
}

#[derive(Default)]
struct Runs {
    cache: HashMap<(Variant, u64), Vec<MetricsRecord>>,
}

impl Runs {
    fn get(&mut self, variant: Variant, seed: u64) -> &[MetricsRecord] {
        self.cache.entry((variant, seed)).or_insert_with(|| {
            let cfg = match variant {
                Variant::FullAdam => charlm_config(Method::FullAdam, seed),
                Variant::Sr(proj) => {
                    let mut c = charlm_config(Method::QGaLore, seed);
                    c.subspace.precision = proj;
                    c
                }
                Variant::Rtn => {
                    let mut c = charlm_config(Method::QGaLore, seed);
                    c.rounding = Rounding::NearestTiesToEven;
                    c
                }
            };
            train(cfg)
        })
    }
}

fn train(cfg: RunConfig) -> Vec<MetricsRecord> {
    let mut t = Trainer::new(cfg).unwrap();
    let mut out = Vec::new();
    t.run_until(u64::MAX, |r| {
        out.push(r.clone());
        Ok(())
    })
    .unwrap();
    out
}

fn final_loss(records: &[MetricsRecord]) -> f64 {
    records.last().unwrap().val_loss
}

fn loss_at(records: &[MetricsRecord], step: u64) -> f64 {
    records.iter().find(|r| r.step == step).unwrap().val_loss
}

fn sr_vs_rtn(runs: &mut Runs) -> Outcome {
    let start = Instant::now();
    let warmup = charlm_config(Method::QGaLore, 0).schedule.warmup_steps(CHARLM_STEPS);
    let early = warmup / 10;
    let mut sr_wins = 0;
    let mut plateaus = 0;
    let mut lines = Vec::new();
    for seed in 0..5 {
        let sr = runs.get(Variant::Sr(Precision::Int4), seed).to_vec();
        let rtn = runs.get(Variant::Rtn, seed).to_vec();
        let (fs, fr) = (final_loss(&sr), final_loss(&rtn));
        sr_wins += (fs <= fr) as usize;
        let l0 = loss_at(&sr, 0);
        let drop_sr = l0 - loss_at(&sr, early);
        let drop_rtn = l0 - loss_at(&rtn, early);
        plateaus += (drop_rtn < 0.5 * drop_sr) as usize;
        lines.push(format!(
            "seed {seed}: final {fs:.3}/{fr:.3}, drop by step {early} {drop_sr:.3}/{drop_rtn:.3}, end of warmup {:.3}/{:.3}",
            loss_at(&sr, warmup),
            loss_at(&rtn, warmup)
        ));
    }
    for l in &lines {
        println!("    {l}");
    }
    let elapsed = start.elapsed();
    Outcome::new(
        sr_wins >= 4 && plateaus >= 4 && elapsed < Duration::from_secs(1800),
        format!("SR <= RTN in {sr_wins}/5 seeds, RTN warmup plateau in {plateaus}/5 (SR/RTN shown above); {:.0} s", elapsed.as_secs_f64()),
    )
}

fn projection_bits(runs: &mut Runs) -> Outcome {
    let losses: Vec<(Precision, f64)> = [Precision::Float, Precision::Int8, Precision::Int4]
        .into_iter()
        .map(|p| (p, final_loss(runs.get(Variant::Sr(p), 0))))
        .collect();
    let lo = losses.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let hi = losses.iter().map(|x| x.1).fold(0.0, f64::max);
    let spread = (hi - lo) / lo;
    let shown: Vec<String> = losses.iter().map(|(p, l)| format!("{p} {l:.4}")).collect();
    Outcome::new(spread <= 0.05, format!("{}; spread {:.2}%", shown.join(", "), 100.0 * spread))
}

const REGRESSION_STEPS: u64 = 2000;

fn regression_config(method: Method) -> RunConfig {
    let mut c = RunConfig::for_method(method);
    c.data = DataConfig::Synthetic {
        n_features: 16,
        n_outputs: None,
        noise: 0.01,
        val_size: 4096,
    };
    c.total_steps = REGRESSION_STEPS;
    c.eval_every = 200;
    c.subspace.rank = Some(4);
    c.optimizer.lr = if method == Method::FullAdam { 1e-2 } else { 4e-2 };
    c
}

fn parity(runs: &mut Runs) -> Outcome {
    let full = final_loss(&train(regression_config(Method::FullAdam)));
    let q = final_loss(&train(regression_config(Method::QGaLore)));
    // best reachable loss with the exact solution rounded onto the INT8 grid
    let task = ingest_synthetic(16, 16, 0.01, 4096, 0);
    let Batch::Regression { inputs, targets } = task.validation() else { unreachable!() };
    let grid = ParamStore::new(task.truth().clone(), Precision::Int8).unwrap().to_dense();
    let pred = inputs.matmul_t(&grid).unwrap();
    let floor = pred.as_slice().iter().zip(targets.as_slice()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / pred.len() as f64;

    let lm_full = final_loss(runs.get(Variant::FullAdam, 0));
    let lm_q = final_loss(runs.get(Variant::Sr(Precision::Int4), 0));
    let reg_gap = (q - full) / full;
    let lm_gap = (lm_q - lm_full) / lm_full;
    Outcome::new(
        reg_gap.abs() <= 0.10 && lm_gap.abs() <= 0.10,
        format!(
            "regression {q:.3e} vs {full:.3e} ({:+.1}%; INT8 grid floor {floor:.3e}), char LM {lm_q:.4} vs {lm_full:.4} ({:+.1}%)",
            100.0 * reg_gap,
            100.0 * lm_gap
        ),
    )
}

// ---------------------------------------------------------------- criterion 9

fn memory_arithmetic() -> Outcome {
    let n = 256;
    let square = ModelConfig::MlpRegressor { widths: vec![n, n], bias: false };
    let mut run = RunConfig::default();
    run.model = square.clone();
    let at = |w, s, p| estimate_memory_with(&square, &run, BitWidths { weights: w, states: s, projections: p });
    let half = 2 * at(8, 16, 16).weights == at(16, 16, 16).weights;
    let before = at(16, 16, 16);
    let after = at(16, 16, 4);
    let (b, a) = (before.optimizer_states + before.projections, after.optimizer_states + after.projections);
    let r = n / 4;
    let quarter = b == (6 * r * n) as u64 && 4 * a == 3 * b;

    let widths = [4u32, 8, 16, 32];
    let lm = ModelConfig::TinyCharLm { vocab: 40, embed_dim: 8, context: 8, hidden: 64, blocks: 2 };
    let mut violations = 0;
    for (model, method) in [(&square, Method::QGaLore), (&lm, Method::QGaLore), (&lm, Method::FullAdam)] {
        let mut run = RunConfig::for_method(method);
        run.model = model.clone();
        for &w in &widths {
            for &s in &widths {
                for &p in &widths {
                    let base = estimate_memory_with(model, &run, BitWidths { weights: w, states: s, projections: p });
                    for lower in [(w / 2, s, p), (w, s / 2, p), (w, s, p / 2)] {
                        if lower.0 < 4 || lower.1 < 4 || lower.2 < 4 {
                            continue;
                        }
                        let m = estimate_memory_with(model, &run, BitWidths { weights: lower.0, states: lower.1, projections: lower.2 });
                        let quantized_both = [(w, lower.0), (s, lower.1), (p, lower.2)].iter().all(|&(x, y)| x == y || (x <= 8 && y <= 8));
                        let ok = m.weights <= base.weights
                            && m.optimizer_states <= base.optimizer_states
                            && m.projections <= base.projections
                            && m.total() <= base.total()
                            && m.total_without_metadata() <= base.total_without_metadata()
                            && (!quantized_both || m.quant_metadata <= base.quant_metadata);
                        violations += (!ok) as usize;
                    }
                }
            }
        }
    }
    Outcome::new(
        half && quarter && violations == 0,
        format!(
            "int8 = half of 16-bit: {half}; projection 16->4 bit: {b} -> {a} bytes ({:.0}% less); monotonicity violations: {violations}",
            100.0 * (b - a) as f64 / b as f64
        ),
    )
}

// --------------------------------------------------------------- criterion 10

fn determinism() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    let small_lm = {
        let mut c = charlm_config(Method::QGaLore, 7);
        c.model = ModelConfig::TinyCharLm { vocab: 0, embed_dim: 8, context: 6, hidden: 32, blocks: 2 };
        c.data = DataConfig::GeneratedText { bytes: 20_000 };
        c.total_steps = 300;
        c.eval_every = 1;
        c.eval_examples = 128;
        c.subspace.base_interval = 20;
        c
    };
    let mut reg = regression_config(Method::QGaLore);
    reg.total_steps = 300;
    reg.eval_every = 1;
    reg.seed = 11;

    for (name, cfg) in [("regression", reg), ("char LM", small_lm)] {
        let strip = |v: Vec<MetricsRecord>| v.into_iter().map(|r| r.without_wallclock()).collect::<Vec<_>>();
        let a = strip(train(cfg.clone()));
        let b = strip(train(cfg.clone()));
        let same = a == b;

        let s = 133;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ckpt");
        let mut first = Trainer::new(cfg.clone()).unwrap();
        first.run_until(s, |_| Ok(())).unwrap();
        first.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let round_trip = encode(&decode(&bytes).unwrap()).unwrap() == bytes;
        let mut resumed = Trainer::resume(cfg.clone(), &path).unwrap();
        let mut tail = Vec::new();
        resumed
            .run_until(s + 10, |r| {
                tail.push(r.without_wallclock());
                Ok(())
            })
            .unwrap();
        let expected: Vec<_> = a.iter().filter(|r| r.step > s && r.step <= s + 10).cloned().collect();
        let resumed_ok = tail.len() == 10 && tail == expected;
        pass &= same && round_trip && resumed_ok;
        details.push(format!(
            "{name}: repeat identical {same}, save/load/save identical {round_trip}, resume {s}->{} identical {resumed_ok}",
            s + 10
        ));
    }
    Outcome::new(pass, details.join("; "))
}

fn main() {
    let mut runs = Runs::default();
    let mut results = Vec::new();
    let mut check = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {n:>2} [{verdict}] {name}: {} ({:.1} s)",
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
        results.push(outcome.pass);
    };
    check(1, "quantization round-trip", &mut quant_round_trip);
    check(2, "stochastic rounding unbiasedness", &mut sr_unbiased);
    check(3, "svd oracle", &mut svd_oracle);
    check(4, "identity-projection step matches dense Adam", &mut galore_oracle);
    check(5, "adaptive lazy subspace updates", &mut adaptive_lazy_update);
    check(9, "memory estimator arithmetic", &mut memory_arithmetic);
    check(10, "determinism and checkpoint resume", &mut determinism);
    check(6, "stochastic vs nearest rounding", &mut || sr_vs_rtn(&mut runs));
    check(7, "projection bit width tolerance", &mut || projection_bits(&mut runs));
    check(8, "parity with full-rank Adam", &mut || parity(&mut runs));
    let failed = results.iter().filter(|&&p| !p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
