//! Property tests: algebraic invariants over randomized inputs.

use proptest::prelude::*;
use tensorguide::adapters::{Activation, Adapter, LoraAdapter, TensorGuideAdapter};
use tensorguide::bounds::{
    approximation_bound, generalization_bound, optimization_bound, rademacher_bound, BoundInputs,
};
use tensorguide::ntk::{eig_sym, ntk_matrix};
use tensorguide::rng::Rng;
use tensorguide::tasks::make_backbone;
use tensorguide::tensor::{frob_rel_error, init_gaussian, matmul, DenseTensor, Shape};
use tensorguide::tt::{tt_apply, tt_materialize, tt_param_count, TTCore, TTFormat, TTMatrix};

fn tensor_from(seed: u64, rows: usize, cols: usize) -> DenseTensor {
    let mut rng = Rng::new(seed);
    DenseTensor::new(
        Shape::new(vec![rows, cols]).unwrap(),
        (0..rows * cols).map(|_| rng.normal()).collect(),
    )
    .unwrap()
}

fn random_tt(format: &TTFormat, seed: u64) -> TTMatrix {
    let mut rng = Rng::new(seed);
    let cores = (0..format.num_modes())
        .map(|k| {
            let shape = format.core_shape(k);
            let values = (0..shape.iter().product::<usize>())
                .map(|_| rng.normal())
                .collect();
            TTCore::new(DenseTensor::new(Shape::new(shape.to_vec()).unwrap(), values).unwrap())
                .unwrap()
        })
        .collect();
    TTMatrix::new(format.clone(), cores).unwrap()
}

// Strategy: a small random TT format with dims and ranks in [1, 4].
fn tt_format_strategy() -> impl Strategy<Value = TTFormat> {
    (1usize..=3)
        .prop_flat_map(|k| {
            (
                proptest::collection::vec(1usize..=4, k),
                proptest::collection::vec(1usize..=4, k),
                proptest::collection::vec(1usize..=3, k.saturating_sub(1)),
            )
        })
        .prop_map(|(in_dims, out_dims, interior)| {
            let mut ranks = vec![1usize];
            ranks.extend(interior);
            ranks.push(1);
            TTFormat::new(in_dims, out_dims, ranks).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_associative(seed in 0u64..1_000_000) {
        let a = tensor_from(seed, 3, 4);
        let b = tensor_from(seed.wrapping_add(1), 4, 5);
        let c = tensor_from(seed.wrapping_add(2), 5, 2);
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        let err = frob_rel_error(&left, &right).unwrap();
        prop_assert!(err < 1e-12, "associativity err {err}");
    }

    #[test]
    fn reshape_round_trip_exact(seed in 0u64..1_000_000) {
        let t = tensor_from(seed, 6, 4);
        let there = t.reshape(Shape::new(vec![3, 8]).unwrap()).unwrap();
        let back = there.reshape(Shape::new(vec![6, 4]).unwrap()).unwrap();
        prop_assert_eq!(t, back);
    }

    #[test]
    fn tt_apply_matches_dense_oracle(format in tt_format_strategy(), seed in 0u64..100_000) {
        let tt = random_tt(&format, seed);
        let z = init_gaussian(Shape::new(vec![format.in_len()]).unwrap(), seed ^ 0xabcd);
        let y = tt_apply(&tt, &z).unwrap();
        let w = tt_materialize(&tt).unwrap();
        let zr = z.reshape(Shape::new(vec![1, format.in_len()]).unwrap()).unwrap();
        let oracle = matmul(&zr, &w).unwrap();
        for (got, want) in y.values().iter().zip(oracle.values()) {
            let scale = want.abs().max(1.0);
            prop_assert!((got - want).abs() / scale < 1e-10);
        }
    }

    #[test]
    fn tt_param_count_monotone_in_ranks(format in tt_format_strategy(), bond in 0usize..4) {
        let k = format.num_modes();
        if k > 1 {
            let bond = 1 + bond % (k - 1);
            let mut bigger = format.ranks().to_vec();
            bigger[bond] += 1;
            let grown = TTFormat::new(
                format.in_dims().to_vec(),
                format.out_dims().to_vec(),
                bigger,
            ).unwrap();
            prop_assert!(tt_param_count(&grown) > tt_param_count(&format));
        }
    }

    #[test]
    fn bounds_monotone(
        l_ce in 0.1f64..4.0,
        c1 in 0.1f64..4.0,
        eps in 0.0f64..0.5,
        m in 1usize..512,
        lam in 0.0f64..2.0,
        t in 0.0f64..8.0,
        n in 1usize..5000,
        delta in 0.01f64..0.99,
    ) {
        let mut inputs = BoundInputs::placeholder();
        inputs.l_ce = l_ce;
        inputs.c1 = c1;
        inputs.eps_tt = eps;
        inputs.n = n;
        inputs.delta = delta;

        // Wider hidden layer never hurts the approximation bound.
        let a1 = approximation_bound(&inputs, m).unwrap();
        let a2 = approximation_bound(&inputs, m * 4).unwrap();
        prop_assert!(a2 <= a1 + 1e-12);

        // Larger minimum eigenvalue or more time never hurts optimization.
        let o1 = optimization_bound(1.0, lam, t).unwrap();
        let o2 = optimization_bound(1.0, lam + 0.5, t).unwrap();
        prop_assert!(o2 <= o1 + 1e-12);
        let o3 = optimization_bound(1.0, lam + 0.5, t + 1.0).unwrap();
        prop_assert!(o3 <= o2 + 1e-12);

        // More samples never hurt generalization or Rademacher complexity.
        let g1 = generalization_bound(&inputs).unwrap();
        let mut more = inputs.clone();
        more.n = n * 4;
        let g2 = generalization_bound(&more).unwrap();
        prop_assert!(g2 <= g1 + 1e-12);
        let r1 = rademacher_bound(1.0, 2.0, n).unwrap();
        let r2 = rademacher_bound(1.0, 2.0, n * 4).unwrap();
        prop_assert!(r2 <= r1 + 1e-12);
    }
}

#[test]
fn ntk_gram_psd_across_adapters_and_seeds() {
    let backbone = make_backbone(8, 6, 3, 2024).unwrap();
    for seed in [1u64, 2, 3, 4, 5] {
        let samples = init_gaussian(Shape::new(vec![5, 8]).unwrap(), seed.wrapping_mul(31));
        let format = TTFormat::new(vec![2, 2], vec![6, 6], vec![1, 2, 1]).unwrap();
        let adapters = [
            Adapter::Lora(LoraAdapter::from_parts(
                init_gaussian(Shape::new(vec![6, 2]).unwrap(), seed),
                init_gaussian(Shape::new(vec![2, 3]).unwrap(), seed + 10),
            )
            .unwrap()),
            Adapter::TensorGuide(
                TensorGuideAdapter::init(&format, 6, 3, 4, Activation::ReLU, seed).unwrap(),
            ),
        ];
        for adapter in &adapters {
            let kernel = ntk_matrix(adapter, &backbone, &samples, 0).unwrap();
            // Symmetry is enforced by construction; PSD up to round-off.
            let eig = eig_sym(&kernel).unwrap();
            let min = eig.values.first().unwrap();
            assert!(
                *min >= -1e-8,
                "{} seed {seed}: min eigenvalue {min}",
                adapter.kind()
            );
        }
    }
}
