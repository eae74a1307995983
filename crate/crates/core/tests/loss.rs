use cal_core::linalg::Matrix;
use cal_core::model::{gelu, parameter_count, CalModel};
use cal_core::rng::SeededRng;
use cal_core::trainer::{in_batch_info_nce, sampled_info_nce, step_loss, StepInputs};
use proptest::prelude::*;

fn unit_rows(rows: usize, d: usize, rng: &mut SeededRng) -> Matrix<f64> {
    let mut m = Matrix::from_fn(rows, d, |_, _| rng.normal());
    for r in 0..rows {
        let row = m.row_mut(r);
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= n);
    }
    m
}

fn permute_rows(m: &Matrix<f64>, perm: &[usize]) -> Matrix<f64> {
    m.select_rows(perm)
}

#[test]
fn gelu_matches_erf_oracle() {
    for i in -400..=400 {
        let x = i as f64 / 50.0;
        let want = 0.5 * x * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2));
        // statrs erf is good to ~1e-10 relative in the tails.
        assert!((gelu(x) - want).abs() <= 1e-9 * want.abs() + 1e-15, "x={x}: {} vs {want}", gelu(x));
        let xf = x as f32;
        assert!((gelu(xf) as f64 - want).abs() < 1e-5);
    }
}

#[test]
fn two_orthonormal_pairs_closed_form() {
    let e = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let out = in_batch_info_nce(&e, &e, 1.0).unwrap();
    let want = -(std::f64::consts::E / (std::f64::consts::E + 1.0)).ln();
    assert!((out.loss - want).abs() < 1e-12);
    assert!((want - 0.3133).abs() < 5e-5);
    assert_eq!(out.accuracy, 1.0);
}

#[test]
fn random_scores_sit_at_chance_accuracy() {
    // 512 random directions in 50 dimensions: about one row per batch wins
    // by chance.
    let mut rng = SeededRng::new(11);
    let batches = 40;
    let mut hits = 0.0;
    for _ in 0..batches {
        let a = unit_rows(512, 50, &mut rng);
        let b = unit_rows(512, 50, &mut rng);
        hits += in_batch_info_nce(&a, &b, 0.05).unwrap().accuracy * 512.0;
    }
    let mean = hits / batches as f64;
    // Poisson(1) per batch: the 40-batch mean has sd ~0.16.
    assert!((0.4..1.8).contains(&mean), "mean correct per batch {mean}");
}

#[test]
fn loss_rejects_single_row_batches() {
    let mut rng = SeededRng::new(1);
    let a = unit_rows(1, 3, &mut rng);
    assert!(matches!(in_batch_info_nce(&a, &a, 0.05), Err(cal_core::Error::Config(_))));
}

#[test]
fn fresh_model_loss_is_finite_and_above_zero() {
    let mut rng = SeededRng::new(5);
    let model = CalModel::<f32>::init(8, 16, &mut rng).unwrap().cast::<f64>();
    let step = StepInputs {
        anchors: unit_rows(32, 8, &mut rng),
        partners: unit_rows(32, 8, &mut rng),
        negatives: None,
    };
    let (loss, acc, _) = step_loss(&model, &step, 0.05).unwrap();
    assert!(loss.is_finite() && loss > 0.0);
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn parameter_count_formula() {
    assert_eq!(parameter_count(50, 1024), 2_208_919);
    let mut rng = SeededRng::new(0);
    for (d, h) in [(3, 5), (50, 64), (10, 7)] {
        assert_eq!(CalModel::<f32>::init(d, h, &mut rng).unwrap().parameter_count(), parameter_count(d, h));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn in_batch_loss_is_permutation_equivariant(seed in 0u64..10_000, b in 2usize..12, d in 2usize..8) {
        let mut rng = SeededRng::new(seed);
        let a = unit_rows(b, d, &mut rng);
        let p = unit_rows(b, d, &mut rng);
        let perm = rng.permutation(b);
        let base = in_batch_info_nce(&a, &p, 0.1).unwrap();
        let moved = in_batch_info_nce(&permute_rows(&a, &perm), &permute_rows(&p, &perm), 0.1).unwrap();
        prop_assert!((base.loss - moved.loss).abs() < 1e-6);
        prop_assert!((base.accuracy - moved.accuracy).abs() < 1e-12);
        for (i, &src) in perm.iter().enumerate() {
            for c in 0..d {
                prop_assert!((moved.d_anchor.get(i, c) - base.d_anchor.get(src, c)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identity_transform_makes_sides_interchangeable(seed in 0u64..10_000, b in 2usize..12, d in 2usize..8) {
        // With f = identity the logit matrix transposes when the sides swap,
        // and the loss averages both cross-entropies.
        let mut rng = SeededRng::new(seed);
        let a = unit_rows(b, d, &mut rng);
        let p = unit_rows(b, d, &mut rng);
        let l1 = in_batch_info_nce(&a, &p, 0.07).unwrap().loss;
        let l2 = in_batch_info_nce(&p, &a, 0.07).unwrap().loss;
        prop_assert!((l1 - l2).abs() < 1e-6);
    }

    #[test]
    fn sampled_loss_is_permutation_equivariant(seed in 0u64..10_000, b in 2usize..8, k in 1usize..6) {
        let d = 4;
        let mut rng = SeededRng::new(seed);
        let a = unit_rows(b, d, &mut rng);
        let p = unit_rows(b, d, &mut rng);
        let pool1 = unit_rows(k, d, &mut rng);
        let pool2 = unit_rows(k, d, &mut rng);
        let m1: Vec<bool> = (0..b * k).map(|_| rng.next_f64() < 0.2).collect();
        let m2: Vec<bool> = (0..b * k).map(|_| rng.next_f64() < 0.2).collect();
        let perm = rng.permutation(b);
        let pm = |m: &[bool]| perm.iter().flat_map(|&r| m[r * k..(r + 1) * k].to_vec()).collect::<Vec<bool>>();
        let (base, _) = sampled_info_nce(&a, &p, &pool1, &pool2, &m1, &m2, 0.1).unwrap();
        let (moved, _) = sampled_info_nce(
            &permute_rows(&a, &perm),
            &permute_rows(&p, &perm),
            &pool1,
            &pool2,
            &pm(&m1),
            &pm(&m2),
            0.1,
        )
        .unwrap();
        prop_assert!((base.loss - moved.loss).abs() < 1e-6);
    }
}
