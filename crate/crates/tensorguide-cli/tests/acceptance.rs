//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! Criteria 6-8 are soft replication checks: the measured ordering is logged
//! with its seeds, and a reversal prints SOFT-FAIL for investigation instead
//! of rejecting the build. Structural preconditions (budget matching,
//! parameter-growth caps) stay hard.
//!
//! Run with `cargo test -p tensorguide-cli --test acceptance -- --nocapture`
//! to see every line.

use std::process::Command;
use tensorguide::adapters::{Activation, Adapter, LoraAdapter, TensorGuideAdapter};
use tensorguide::bounds::{
    approximation_bound, generalization_bound, optimization_bound, BoundInputs,
};
use tensorguide::ntk::{eig_sym, eig_sym_dense, ntk_matrix, param_jacobian};
use tensorguide::presets;
use tensorguide::rng::Rng;
use tensorguide::tasks::{gen_quantum_dot, gen_wide_output, make_backbone, split, Dataset};
use tensorguide::tensor::{frob_rel_error, init_gaussian, matmul, DenseTensor, Shape};
use tensorguide::train::{finite_diff_check, train, Optimizer, TrainConfig, TrainReport};
use tensorguide::tt::{
    full_ranks, tt_apply, tt_materialize, tt_svd, validate_adapter_format, TTCore, TTFormat,
    TTMatrix,
};
use tensorguide::FrozenBackbone;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseTensor {
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

#[test]
fn criterion_01_parameter_accounting_deltas() {
    let count = |name: &str| {
        presets::find_shape_preset(name)
            .unwrap()
            .core_param_count()
            .unwrap()
    };
    let d1 = count("tg512x2-m2048") - count("tg512x2-m1024");
    let d2 = count("tg512x2-m4096") - count("tg512x2-m2048");
    let d3 = count("tg768x50257-r12") - count("tg768x50257-r8");
    assert_eq!(d1, 16, "hidden width 1024 -> 2048 delta");
    assert_eq!(d2, 64, "hidden width 2048 -> 4096 delta");
    assert_eq!(d3, 5488, "rank row 1 -> 2 delta (23620 - 18132)");
    println!("criterion 01 [parameter-deltas]: PASS - deltas {d1}, {d2}, {d3} (exact)");
}

#[test]
fn criterion_02_shape_identities() {
    let expected = [
        ("tg512x2-m1024", 1024usize, 526_336usize),
        ("tg512x2-m2048", 2048, 1_052_672),
        ("tg512x2-m4096", 4096, 2_105_344),
    ];
    for (name, m, product) in expected {
        let preset = presets::find_shape_preset(name).unwrap();
        let format = preset.format().unwrap();
        assert_eq!(format.out_len(), product, "{name} output length");
        assert_eq!(format.out_len(), m * (512 + 2), "{name} identity");
        assert_eq!(
            validate_adapter_format(&format, 512, 2, m, format.in_len()),
            None,
            "{name} validates"
        );
    }
    println!("criterion 02 [shape-identities]: PASS - 526336, 1052672, 2105344 = M*(D+Q) exactly");
}

#[test]
fn criterion_03_gradient_correctness() {
    let backbone = make_backbone(
        presets::SMALL_INPUT_LEN,
        presets::SMALL_FEATURE_DIM,
        presets::SMALL_CLASSES,
        900,
    )
    .unwrap();
    let inputs = random_matrix(5, presets::SMALL_INPUT_LEN, 901);
    let labels = vec![0usize, 2, 1, 0, 1];
    let mut worst: f64 = 0.0;
    for seed in [1u64, 2, 3] {
        for mut adapter in presets::small_check_adapters(seed).unwrap() {
            let err = finite_diff_check(&mut adapter, &backbone, &inputs, &labels, 1e-5).unwrap();
            assert!(
                err <= 1e-5,
                "{} seed {seed}: max rel error {err}",
                adapter.kind()
            );
            worst = worst.max(err);
        }
    }
    println!(
        "criterion 03 [gradient-check]: PASS - max rel error {worst:.3e} <= 1e-5 (3 adapters x 3 seeds)"
    );
}

#[test]
fn criterion_04_tt_fidelity() {
    // 50 full-rank round trips on matrices up to 16x16.
    let factorizations: [(&[usize], &[usize]); 5] = [
        (&[2, 2], &[2, 2]),
        (&[2, 2], &[4, 2]),
        (&[4, 2], &[2, 4]),
        (&[2, 2, 2], &[2, 2, 2]),
        (&[4, 4], &[4, 4]),
    ];
    let mut worst_svd: f64 = 0.0;
    for trial in 0..50u64 {
        let (in_dims, out_dims) = factorizations[(trial % 5) as usize];
        let rows: usize = in_dims.iter().product();
        let cols: usize = out_dims.iter().product();
        let w = random_matrix(rows, cols, 9000 + trial);
        let ranks = full_ranks(in_dims, out_dims);
        let tt = tt_svd(&w, in_dims, out_dims, &ranks, 0.0).unwrap();
        let back = tt_materialize(&tt).unwrap();
        let err = frob_rel_error(&back, &w).unwrap();
        assert!(err <= 1e-10, "trial {trial}: round-trip err {err}");
        worst_svd = worst_svd.max(err);
    }

    // 200 apply-vs-materialization agreements.
    let formats = [
        TTFormat::new(vec![2, 3], vec![3, 2], vec![1, 2, 1]).unwrap(),
        TTFormat::new(vec![2, 2, 2], vec![2, 2, 2], vec![1, 2, 2, 1]).unwrap(),
        TTFormat::new(vec![4, 4], vec![4, 8], vec![1, 3, 1]).unwrap(),
        TTFormat::new(vec![1, 2, 2, 1], vec![2, 4, 11, 12], vec![1, 2, 4, 2, 1]).unwrap(),
        TTFormat::new(vec![8, 8], vec![8, 8], vec![1, 4, 1]).unwrap(),
    ];
    let mut worst_apply: f64 = 0.0;
    for trial in 0..200u64 {
        let format = &formats[(trial % 5) as usize];
        let tt = random_tt(format, 10_000 + trial);
        let z = init_gaussian(Shape::new(vec![format.in_len()]).unwrap(), 20_000 + trial);
        let y = tt_apply(&tt, &z).unwrap();
        let w = tt_materialize(&tt).unwrap();
        let zr = z
            .reshape(Shape::new(vec![1, format.in_len()]).unwrap())
            .unwrap();
        let oracle = matmul(&zr, &w)
            .unwrap()
            .reshape(Shape::new(vec![format.out_len()]).unwrap())
            .unwrap();
        let err = frob_rel_error(&y, &oracle).unwrap();
        assert!(err <= 1e-10, "trial {trial}: apply-vs-dense err {err}");
        worst_apply = worst_apply.max(err);
    }
    println!(
        "criterion 04 [tt-fidelity]: PASS - 50 round trips (worst {worst_svd:.3e}), 200 applies (worst {worst_apply:.3e}) <= 1e-10"
    );
}

#[test]
fn criterion_05_ntk_properties() {
    let backbone = make_backbone(8, 6, 3, 500).unwrap();
    let samples = random_matrix(6, 8, 501);
    let format = TTFormat::new(vec![2, 2], vec![6, 6], vec![1, 2, 1]).unwrap();

    // Symmetry and PSD across adapters and seeds.
    let mut min_eig: f64 = f64::INFINITY;
    for seed in [1u64, 2, 3] {
        let adapters = [
            Adapter::Lora(LoraAdapter::from_parts(
                random_matrix(6, 2, seed),
                random_matrix(2, 3, seed + 50),
            )
            .unwrap()),
            Adapter::TensorGuide(
                TensorGuideAdapter::init(&format, 6, 3, 4, Activation::ReLU, seed).unwrap(),
            ),
        ];
        for adapter in &adapters {
            let kernel = ntk_matrix(adapter, &backbone, &samples, 0).unwrap();
            for i in 0..kernel.sample_count() {
                for j in 0..kernel.sample_count() {
                    let gap = (kernel.data().at(i, j) - kernel.data().at(j, i)).abs();
                    assert!(gap <= 1e-10, "symmetry gap {gap}");
                }
            }
            let eig = eig_sym(&kernel).unwrap();
            let lo = *eig.values.first().unwrap();
            assert!(lo >= -1e-8, "{} min eigenvalue {lo}", adapter.kind());
            min_eig = min_eig.min(lo);
        }
    }

    // Linear-in-parameters configuration: kernel equals the feature Gram.
    let w1 = random_matrix(6, 2, 777);
    let linear = Adapter::Lora(
        LoraAdapter::from_parts(w1.clone(), DenseTensor::zeros(Shape::new(vec![2, 3]).unwrap()))
            .unwrap(),
    );
    let kernel = ntk_matrix(&linear, &backbone, &samples, 0).unwrap();
    let phi = matmul(&backbone.features(&samples).unwrap(), &w1).unwrap();
    let mut worst_gram: f64 = 0.0;
    for i in 0..6 {
        for j in 0..6 {
            let dot: f64 = phi.row(i).iter().zip(phi.row(j)).map(|(a, b)| a * b).sum();
            let gap = (kernel.data().at(i, j) - dot).abs();
            assert!(gap <= 1e-10, "feature-gram gap {gap}");
            worst_gram = worst_gram.max(gap);
        }
    }

    // Eigensolver reconstruction V Lambda V^T.
    let raw = random_matrix(8, 8, 888);
    let sym = raw.add(&raw.transpose().unwrap()).unwrap().scale(0.5);
    let eig = eig_sym_dense(&sym).unwrap();
    let mut scaled = eig.vectors.clone();
    for r in 0..8 {
        for c in 0..8 {
            scaled.values_mut()[r * 8 + c] *= eig.values[c];
        }
    }
    let recon = matmul(&scaled, &eig.vectors.transpose().unwrap()).unwrap();
    let rec_err = frob_rel_error(&recon, &sym).unwrap();
    assert!(rec_err <= 1e-10, "reconstruction err {rec_err}");

    println!(
        "criterion 05 [ntk-properties]: PASS - symmetric, min eig {min_eig:.3e} >= -1e-8, gram gap {worst_gram:.3e}, reconstruction {rec_err:.3e}"
    );
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn train_final(
    adapter: &mut Adapter,
    backbone: &FrozenBackbone,
    train_set: &Dataset,
    test_set: &Dataset,
    seed: u64,
    epochs: usize,
) -> TrainReport {
    let config = TrainConfig {
        optimizer: Optimizer::Adam,
        learning_rate: 3e-3,
        epochs,
        batch_size: 16,
        seed,
        shuffle: true,
    };
    train(adapter, backbone, train_set, test_set, &config).unwrap()
}

#[test]
fn criterion_06_qd_ordering() {
    let seeds = [1u64, 2, 3];
    let dataset = gen_quantum_dot(1000, 0.3, 13).unwrap();
    let (train_set, test_set) = split(&dataset, 0.8, 13).unwrap();
    assert_eq!(train_set.len(), 800);
    assert_eq!(test_set.len(), 200);
    let backbone = make_backbone(
        presets::QD_INPUT_LEN,
        presets::QD_FEATURE_DIM,
        presets::QD_CLASSES,
        11,
    )
    .unwrap();

    let mut accs: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for &seed in &seeds {
        let trio = presets::qd_trio(seed).unwrap();
        // Budget matching is a hard precondition: within 10% of the
        // low-rank reference.
        let reference = trio[0].1.param_count() as f64;
        for (name, adapter) in &trio {
            let count = adapter.param_count() as f64;
            assert!(
                (count - reference).abs() / reference <= 0.10,
                "{name} budget {count} vs {reference}"
            );
        }
        for (name, mut adapter) in trio {
            let report = train_final(&mut adapter, &backbone, &train_set, &test_set, seed, 15);
            accs.entry(name).or_default().push(report.final_metrics().test_acc);
        }
    }
    let tg = mean(&accs["tensor-guide"]);
    let lora = mean(&accs["lora"]);
    let tt_lora = mean(&accs["tt-lora"]);
    let ordered = tg >= lora && tg >= tt_lora;
    let verdict = if ordered { "PASS" } else { "SOFT-FAIL (investigate)" };
    println!(
        "criterion 06 [qd-ordering, soft]: {verdict} - mean test acc over seeds {seeds:?}: tensor-guide {tg:.4}, lora {lora:.4}, tt-lora {tt_lora:.4}; per-seed tg {:?} lora {:?} tt-lora {:?}",
        accs["tensor-guide"], accs["lora"], accs["tt-lora"]
    );
}

#[test]
fn criterion_07_width_trend() {
    let seeds = [1u64, 2, 3];
    let dataset = gen_quantum_dot(1000, 0.3, 13).unwrap();
    let (train_set, test_set) = split(&dataset, 0.8, 13).unwrap();
    let backbone = make_backbone(
        presets::QD_INPUT_LEN,
        presets::QD_FEATURE_DIM,
        presets::QD_CLASSES,
        11,
    )
    .unwrap();

    let (narrow_count, wide_count) = {
        let (narrow, wide) = presets::qd_width_pair(1).unwrap();
        (narrow.param_count(), wide.param_count())
    };
    // Hard precondition: widening 16 -> 64 grows parameters by < 10%.
    let growth = (wide_count - narrow_count) as f64 / narrow_count as f64;
    assert!(growth < 0.10, "parameter growth {growth}");

    let mut narrow_losses = Vec::new();
    let mut wide_losses = Vec::new();
    for &seed in &seeds {
        let (mut narrow, mut wide) = presets::qd_width_pair(seed).unwrap();
        narrow_losses.push(
            train_final(&mut narrow, &backbone, &train_set, &test_set, seed, 15)
                .final_metrics()
                .test_loss,
        );
        wide_losses.push(
            train_final(&mut wide, &backbone, &train_set, &test_set, seed, 15)
                .final_metrics()
                .test_loss,
        );
    }
    let narrow_mean = mean(&narrow_losses);
    let wide_mean = mean(&wide_losses);
    let ordered = wide_mean <= narrow_mean;
    let verdict = if ordered { "PASS" } else { "SOFT-FAIL (investigate)" };
    println!(
        "criterion 07 [width-trend, soft]: {verdict} - mean test loss M=64 {wide_mean:.4} vs M=16 {narrow_mean:.4} (params {narrow_count} -> {wide_count}, +{:.1}%); seeds {seeds:?}, per-seed M=16 {narrow_losses:?} M=64 {wide_losses:?}",
        growth * 100.0
    );
}

#[test]
fn criterion_08_wide_output_mirror() {
    let seeds = [1u64, 2, 3];
    let dataset = gen_wide_output(
        4000,
        presets::WIDE_INPUT_LEN,
        presets::WIDE_CLASSES,
        0.1,
        13,
    )
    .unwrap();
    let (train_set, test_set) = split(&dataset, 0.8, 13).unwrap();
    let backbone = make_backbone(
        presets::WIDE_INPUT_LEN,
        presets::WIDE_FEATURE_DIM,
        presets::WIDE_CLASSES,
        11,
    )
    .unwrap();

    let (lora_count, tg_count) = {
        let (lora, tg) = presets::wide_pair(1).unwrap();
        (lora.param_count(), tg.param_count())
    };
    // Hard precondition: the generator runs at <= 60% of the rank-1 budget.
    assert!(
        tg_count as f64 <= 0.60 * lora_count as f64,
        "budget {tg_count} vs 60% of {lora_count}"
    );

    let mut lora_exp = Vec::new();
    let mut tg_exp = Vec::new();
    for &seed in &seeds {
        let (mut lora, mut tg) = presets::wide_pair(seed).unwrap();
        if let Adapter::TensorGuide(a) = &mut tg {
            // The wide-output regime replaces the frozen head with the
            // generated MLP.
            a.replace_head = true;
        }
        lora_exp.push(
            train_final(&mut lora, &backbone, &train_set, &test_set, seed, 30)
                .final_metrics()
                .exp_loss,
        );
        tg_exp.push(
            train_final(&mut tg, &backbone, &train_set, &test_set, seed, 30)
                .final_metrics()
                .exp_loss,
        );
    }
    let lora_mean = mean(&lora_exp);
    let tg_mean = mean(&tg_exp);
    let within = tg_mean <= lora_mean * 1.02;
    let verdict = if within { "PASS" } else { "SOFT-FAIL (investigate)" };
    println!(
        "criterion 08 [wide-output, soft]: {verdict} - mean exp(CE) tensor-guide {tg_mean:.4} (at {tg_count} params) vs lora {lora_mean:.4} * 1.02 = {:.4} (at {lora_count}); seeds {seeds:?}, per-seed tg {tg_exp:?} lora {lora_exp:?}",
        lora_mean * 1.02
    );
}

#[test]
fn criterion_09_bound_calculators() {
    let general = generalization_bound(&BoundInputs::placeholder()).unwrap();
    assert!(
        (general - 0.307298).abs() <= 1e-6,
        "generalization {general}"
    );

    let opt = optimization_bound(1.0, 0.5, 2.0).unwrap();
    assert!((opt - (-1.0f64).exp()).abs() <= 1e-9, "optimization {opt}");

    let mut inputs = BoundInputs::placeholder();
    inputs.l_ce = 2.0;
    inputs.c1 = 1.0;
    inputs.c2 = 1.0;
    inputs.l_sigma = 1.0;
    inputs.eps_tt = 0.1;
    let approx = approximation_bound(&inputs, 16).unwrap();
    assert!((approx - 0.9).abs() <= 1e-12, "approximation {approx}");

    println!(
        "criterion 09 [bound-calculators]: PASS - {general:.6} (±1e-6), {opt:.9} (±1e-9), {approx} (±1e-12)"
    );
}

#[test]
fn criterion_10_cli_determinism() {
    let bin = env!("CARGO_BIN_EXE_ttguide");
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &[&str], out: &std::path::Path| {
        let status = Command::new(bin)
            .args(sub)
            .arg("--out")
            .arg(out)
            .env_remove("TTGUIDE_OUT")
            .output()
            .expect("spawn ttguide");
        assert!(
            status.status.success(),
            "{sub:?} failed: {}",
            String::from_utf8_lossy(&status.stderr)
        );
    };
    let pairs = [
        (
            vec!["gen-data", "--preset", "qd-lora", "--n", "100"],
            vec!["dataset.bin", "dataset.json"],
        ),
        (
            vec![
                "train", "--preset", "qd-lora", "--n", "100", "--epochs", "2",
            ],
            vec!["metrics.csv", "summary.json"],
        ),
        (
            vec!["ntk", "--preset", "qd-lora", "--n", "100", "--samples", "8"],
            vec!["ntk.json"],
        ),
    ];
    for (args, files) in &pairs {
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        run(args, &a);
        run(args, &b);
        for file in files {
            let lhs = std::fs::read(a.join(file)).unwrap();
            let rhs = std::fs::read(b.join(file)).unwrap();
            assert_eq!(lhs, rhs, "{file} differs across identical runs");
        }
        std::fs::remove_dir_all(&a).unwrap();
        std::fs::remove_dir_all(&b).unwrap();
    }
    println!(
        "criterion 10 [determinism]: PASS - gen-data/train/ntk outputs byte-identical across repeated runs"
    );
}
