use proptest::prelude::*;
use qgalore::linalg::{cosine_similarity_flat, sign_align, svd};
use qgalore::optimizer::{adam_step, AdamConfig, AdamState};
use qgalore::quant::{pack_int4, quantize, stochastic_round, unpack_int4};
use qgalore::rng::{Domain, Rng, SeedStream};
use qgalore::subspace::{compute_projection, ProjectionState, SubspaceConfig};
use qgalore::train::memory::BitWidths;
use qgalore::train::{estimate_memory_with, RunConfig};
use qgalore::model::ModelConfig;
use qgalore::{Matrix, Precision, QuantSpec, Rounding};

fn gaussian(rows: usize, cols: usize, scale: f64, seed: u64) -> Matrix<f32> {
    let mut rng = SeedStream::new(seed).substream(Domain::Test, 0, 0);
    Matrix::randn(rows, cols, scale, &mut rng)
}

fn max_orthonormality_error(q: &Matrix<f32>) -> f64 {
    let g = q.t_matmul(q).unwrap();
    let mut worst = 0.0f64;
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] as f64 - target).abs());
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nearest_error_is_within_half_a_step(
        rows in 1usize..48, cols in 1usize..300, bits in prop::sample::select(vec![4u8, 8]),
        log_scale in -4.0f64..4.0, seed in any::<u64>(), offset in -2.0f64..2.0,
    ) {
        let scale = 10f64.powf(log_scale);
        let w = gaussian(rows, cols, scale, seed).map(|x| x + (offset * scale) as f32);
        let spec = QuantSpec::new(bits, 256, Rounding::NearestTiesToEven).unwrap();
        let q = quantize::<f32, Rng>(&w, spec, None).unwrap();
        let dq = q.dequantize();
        for (i, (a, b)) in w.as_slice().iter().zip(dq.as_slice()).enumerate() {
            let s = q.scales()[i / 256] as f64;
            let slack = 4.0 * f32::EPSILON as f64 * (a.abs() as f64);
            prop_assert!((*a as f64 - *b as f64).abs() <= s / 2.0 + slack);
        }
        let codes = q.codes().unwrap();
        prop_assert!(codes.iter().all(|&c| (spec.qmin()..=spec.qmax()).contains(&(c as i32))));
    }

    #[test]
    fn stochastic_codes_are_a_neighbour_of_nearest(rows in 1usize..16, cols in 1usize..64, seed in any::<u64>()) {
        let w = gaussian(rows, cols, 1.0, seed);
        let spec = QuantSpec::int8(Rounding::Stochastic);
        let mut rng = SeedStream::new(seed).substream(Domain::Rounding, 0, 0);
        let q = quantize(&w, spec, Some(&mut rng)).unwrap();
        let dq = q.dequantize();
        for (i, (a, b)) in w.as_slice().iter().zip(dq.as_slice()).enumerate() {
            let s = q.scales()[i / 256] as f64;
            prop_assert!((*a as f64 - *b as f64).abs() <= s * (1.0 + 1e-4));
        }
    }

    #[test]
    fn stochastic_round_picks_floor_or_ceil(x in -1e6f64..1e6, seed in any::<u64>()) {
        let mut rng = SeedStream::new(seed).substream(Domain::Test, 1, 0);
        let r = stochastic_round(x, &mut rng) as f64;
        prop_assert!(r == x.floor() || r == x.ceil());
    }

    #[test]
    fn int4_packing_round_trips(values in prop::collection::vec(-8i8..=7, 0..200)) {
        let packed = pack_int4(&values).unwrap();
        prop_assert_eq!(packed.len(), values.len().div_ceil(2));
        prop_assert_eq!(unpack_int4(&packed, values.len()).unwrap(), values);
    }

    #[test]
    fn svd_reconstructs_and_is_orthonormal(rows in 1usize..40, cols in 1usize..40, seed in any::<u64>()) {
        let a = gaussian(rows, cols, 1.0, seed);
        let s = svd(&a).unwrap();
        let k = rows.min(cols);
        prop_assert_eq!(s.u.shape(), (rows, k));
        prop_assert_eq!(s.v.shape(), (cols, k));
        prop_assert!(s.sigma.windows(2).all(|p| p[0] >= p[1]) && s.sigma.iter().all(|&x| x >= 0.0));
        let us = Matrix::from_fn(rows, k, |i, j| s.u[(i, j)] * s.sigma[j]);
        let r = us.matmul_t(&s.v).unwrap().sub(&a).unwrap().frobenius_norm() / a.frobenius_norm();
        prop_assert!(r <= 1e-5, "reconstruction {}", r);
        prop_assert!(max_orthonormality_error(&s.u) <= 1e-4);
        prop_assert!(max_orthonormality_error(&s.v) <= 1e-4);
    }

    #[test]
    fn projection_round_trip_is_idempotent(rows in 2usize..24, cols in 2usize..24, seed in any::<u64>()) {
        let g = gaussian(rows, cols, 1.0, seed);
        let cfg = SubspaceConfig { precision: Precision::Float, ..SubspaceConfig::default() };
        let mut p = ProjectionState::new((rows, cols), cfg).unwrap();
        p.maybe_update(&g, 1).unwrap();
        let once = p.project_back(&p.project(&g).unwrap()).unwrap();
        let twice = p.project_back(&p.project(&once).unwrap()).unwrap();
        prop_assert!(once.max_abs_diff(&twice) <= 1e-4 * (1.0 + g.max_abs()));
        prop_assert!(max_orthonormality_error(&compute_projection(&g, 1).unwrap()) <= 1e-5);
    }

    #[test]
    fn sign_alignment_never_lowers_similarity(rows in 2usize..20, cols in 1usize..6, seed in any::<u64>()) {
        let a = gaussian(rows, cols, 1.0, seed);
        let b = gaussian(rows, cols, 1.0, seed.wrapping_add(1));
        let aligned = sign_align(&a, &b).unwrap();
        prop_assert!(cosine_similarity_flat(&a, &aligned).unwrap() >= cosine_similarity_flat(&a, &b).unwrap() - 1e-9);
    }

    #[test]
    fn first_adam_step_keeps_gradient_signs(rows in 1usize..20, cols in 1usize..20, seed in any::<u64>(),
        precision in prop::sample::select(vec![Precision::Float, Precision::Int8])) {
        let r = gaussian(rows, cols, 1.0, seed);
        let mut state = AdamState::new(precision);
        let n = adam_step(&mut state, &r, &AdamConfig::default()).unwrap();
        for (g, d) in r.as_slice().iter().zip(n.as_slice()) {
            prop_assert!(*g == 0.0 || g.signum() == d.signum());
        }
    }

    #[test]
    fn memory_estimate_is_monotone_in_each_width(
        n in 4usize..200, m in 4usize..200,
        w in prop::sample::select(vec![4u32, 8, 16, 32]),
        s in prop::sample::select(vec![4u32, 8, 16, 32]),
        p in prop::sample::select(vec![4u32, 8, 16, 32]),
    ) {
        let model = ModelConfig::MlpRegressor { widths: vec![n, m], bias: true };
        let mut run = RunConfig::default();
        run.model = model.clone();
        let base = estimate_memory_with(&model, &run, BitWidths { weights: w, states: s, projections: p });
        for lower in [BitWidths { weights: w / 2, states: s, projections: p }, BitWidths { weights: w, states: s / 2, projections: p }, BitWidths { weights: w, states: s, projections: p / 2 }] {
            if lower.weights < 4 || lower.states < 4 || lower.projections < 4 {
                continue;
            }
            let e = estimate_memory_with(&model, &run, lower);
            prop_assert!(e.weights <= base.weights && e.optimizer_states <= base.optimizer_states && e.projections <= base.projections);
            prop_assert!(e.total_without_metadata() <= base.total_without_metadata());
            if [w, s, p].iter().all(|&b| b <= 8) {
                prop_assert!(e.quant_metadata <= base.quant_metadata);
            }
        }
    }
}
