//! Randomised invariants across the public API.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng as _;

use rcdm_core::advprobe::{fgsm_map, AttackGoal, LinearProbe};
use rcdm_core::denoiser::{train_denoiser, DenoiserConfig, DenoiserNetwork, DenoiserTrainConfig};
use rcdm_core::diffmap::LinearMap;
use rcdm_core::encoders::Source;
use rcdm_core::nn::Fingerprint;
use rcdm_core::faitheval::{frechet_distance, inception_style_score, rank_of_conditioning};
use rcdm_core::generation::interpolate;
use rcdm_core::repmatch::{match_representation, relative_distance, Distance, LrSchedule, MatchConfig, Optimizer};
use rcdm_core::repops::{
    common_nonzero_dims, knn, least_common_nonzero_dims, swap_dims, zero_dims, Metric, RepresentationBank,
};
use rcdm_core::rng::{permutation, randn, seeded};
use rcdm_core::schedule::make_schedule;
use rcdm_core::ImageBatch;
use rcdm_tensor::Tensor;

fn rand_rows(rows: usize, cols: usize, seed: u64) -> Tensor<f32> {
    randn::<f32>(&[rows, cols], &mut seeded(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_invariants(steps in 2usize..600, bmin in 1e-5f64..0.05, span in 1e-4f64..0.5) {
        let s = make_schedule(steps, bmin, bmin + span).unwrap();
        prop_assert_eq!(s.beta().len(), steps);
        for w in s.beta().windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
        for w in s.alpha_bar().windows(2) {
            prop_assert!(w[1] < w[0]);
        }
        let mut prod = 1.0;
        for (t, &a) in s.alpha().iter().enumerate() {
            prod *= a;
            prop_assert!((s.alpha_bar()[t] - prod).abs() <= 1e-12 * prod.max(1e-300));
            prop_assert!(a > 0.0 && a < 1.0);
        }
    }

    #[test]
    fn interpolation_is_affine(seed in any::<u64>(), lam in 0.0f64..=1.0) {
        let t = rand_rows(2, 16, seed);
        let (a, b) = (t.row(0), t.row(1));
        let ab = interpolate(a, b, lam).unwrap();
        let ba = interpolate(b, a, 1.0 - lam).unwrap();
        for i in 0..16 {
            prop_assert!((ab[i] - ba[i]).abs() <= 1e-6 * (1.0 + a[i].abs() + b[i].abs()));
            let lo = a[i].min(b[i]) - 1e-6;
            let hi = a[i].max(b[i]) + 1e-6;
            prop_assert!(ab[i] >= lo && ab[i] <= hi);
        }
    }

    #[test]
    fn zero_and_swap_touch_only_the_mask(seed in any::<u64>(), mask in proptest::collection::btree_set(0usize..12, 0..12)) {
        let t = rand_rows(2, 12, seed);
        let dims: Vec<usize> = mask.into_iter().collect();
        let z = zero_dims(t.row(0), &dims).unwrap();
        let s = swap_dims(t.row(0), t.row(1), &dims).unwrap();
        for j in 0..12 {
            if dims.contains(&j) {
                prop_assert_eq!(z[j], 0.0);
                prop_assert_eq!(s[j].to_bits(), t.row(1)[j].to_bits());
            } else {
                prop_assert_eq!(z[j].to_bits(), t.row(0)[j].to_bits());
                prop_assert_eq!(s[j].to_bits(), t.row(0)[j].to_bits());
            }
        }
    }

    #[test]
    fn knn_ignores_bank_order(seed in any::<u64>(), k in 1usize..20) {
        let n = 20;
        let reps = rand_rows(n + 1, 6, seed);
        let query = reps.row(n).to_vec();
        let bank_reps = reps.select_rows(&(0..n).collect::<Vec<_>>());
        let ids: Vec<u64> = (0..n as u64).map(|i| 100 + i).collect();
        let bank = RepresentationBank::new(bank_reps.clone(), ids.clone(), None).unwrap();
        let p = permutation(n, &mut seeded(seed ^ 1));
        let shuffled = RepresentationBank::new(bank_reps.select_rows(&p), p.iter().map(|&i| ids[i]).collect(), None).unwrap();
        for metric in [Metric::SquaredL2, Metric::Cosine] {
            prop_assert_eq!(knn(&query, &bank, k, metric).unwrap(), knn(&query, &shuffled, k, metric).unwrap());
        }
    }

    #[test]
    fn common_and_least_common_partition(seed in any::<u64>(), top_m in 1usize..8) {
        // Column j is non-zero in exactly counts[j] rows, all counts distinct.
        let k = 8;
        let counts = permutation(k, &mut seeded(seed));
        let mut reps = Tensor::<f32>::zeros(&[k, k]);
        for (j, &c) in counts.iter().enumerate() {
            for i in 0..c {
                reps.row_mut(i)[j] = 1.0 + i as f32;
            }
        }
        let common = common_nonzero_dims(&reps, top_m, 0.0).unwrap();
        let rare = least_common_nonzero_dims(&reps, k - top_m, 0.0).unwrap();
        let mut all: Vec<usize> = common.iter().chain(&rare).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..k).collect::<Vec<_>>());
        let min_common = common.iter().map(|&j| counts[j]).min().unwrap();
        prop_assert!(rare.iter().all(|&j| counts[j] < min_common));
    }

    #[test]
    fn frechet_is_symmetric_and_non_negative(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let a = randn::<f64>(&[40, 3], &mut rng);
        let b = randn::<f64>(&[30, 3], &mut rng).map(|v| 0.5 + 2.0 * v);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-8 * (1.0 + ab));
        prop_assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-8);
    }

    #[test]
    fn inception_score_is_between_one_and_classes(seed in any::<u64>(), classes in 2usize..10) {
        let mut rng = seeded(seed);
        let mut p = Tensor::<f64>::from_fn(&[25, classes], |_| rng.random::<f64>() + 1e-3);
        for i in 0..25 {
            let s: f64 = p.row(i).iter().sum();
            p.row_mut(i).iter_mut().for_each(|v| *v /= s);
        }
        let is = inception_style_score(&p).unwrap();
        prop_assert!(is >= 1.0 - 1e-9 && is <= classes as f64 + 1e-9);
    }

    #[test]
    fn relative_distance_is_bounded(d0 in 1e-6f64..1e3, frac in 0.0f64..1.0) {
        let dt = d0 * frac;
        let r = relative_distance(d0, dt).unwrap();
        prop_assert!((r - 100.0 * frac).abs() < 1e-9);
        prop_assert!((relative_distance(d0, d0).unwrap() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn fgsm_stays_in_the_box(seed in any::<u64>(), eps in 0.0f64..0.5) {
        let mut rng = seeded(seed);
        let shape = [1usize, 3, 3];
        let map = LinearMap::new(randn::<f32>(&[4, 9], &mut rng), shape).unwrap();
        let probe = LinearProbe {
            weight: randn::<f32>(&[3, 4], &mut rng),
            bias: vec![0.0; 3],
            encoder: Fingerprint("test".into()),
            source: Source::Backbone,
            train_accuracy: 0.0,
        };
        let x = ImageBatch::clamped(randn::<f32>(&[5, 1, 3, 3], &mut rng)).unwrap();
        let labels: Vec<usize> = (0..5).map(|i| i % 3).collect();
        let adv = fgsm_map(&x, &labels, &map, &probe, eps, AttackGoal::Untargeted).unwrap();
        for (a, b) in adv.tensor().data().iter().zip(x.tensor().data()) {
            prop_assert!((-1.0..=1.0).contains(a));
            prop_assert!(((a - b).abs() as f64) <= eps + 1e-6);
        }
    }
}

#[test]
fn rank_under_unrelated_generation_is_uniform() {
    let n = 100;
    let bank = RepresentationBank::new(rand_rows(n, 8, 5), (0..n as u64).collect(), None).unwrap();
    let mut rng = seeded(6);
    let trials = 10_000;
    let mut total = 0usize;
    for _ in 0..trials {
        let h = randn::<f32>(&[8], &mut rng);
        let id = rng.random_range(0..n as u64);
        total += rank_of_conditioning(h.data(), id, &bank, Metric::SquaredL2).unwrap();
    }
    let mean = total as f64 / trials as f64;
    let expect = (n as f64 + 1.0) / 2.0;
    assert!((mean - expect).abs() <= 0.05 * expect, "mean rank {mean}");
}

#[test]
fn gradient_descent_moves_only_within_the_row_space() {
    let (k, shape) = (5usize, [1usize, 4, 4]);
    let d = 16;
    let mut rng = seeded(9);
    let a = randn::<f64>(&[k, d], &mut rng);
    let map = LinearMap::new(a.clone(), shape).unwrap();
    let x0 = randn::<f64>(&[1, 1, 4, 4], &mut rng);
    let target: Vec<f64> = randn::<f64>(&[k], &mut rng).into_data();
    for distance in [Distance::L2, Distance::Cosine] {
        let cfg = MatchConfig {
            distance,
            optimizer: Optimizer::GradientDescent,
            schedule: LrSchedule::Constant,
            steps: 50,
            step_size: 0.01,
            ..Default::default()
        };
        let r = match_representation(&map, &target, &x0, &cfg).unwrap();
        let delta = DVector::from_iterator(d, r.x_final.data().iter().zip(x0.data()).map(|(a, b)| a - b));
        let am = DMatrix::from_row_slice(k, d, a.data());
        let coef = (&am * am.transpose()).lu().solve(&(&am * &delta)).unwrap();
        let residual = &delta - am.transpose() * coef;
        assert!(delta.norm() > 1e-3, "{distance:?} did not move");
        assert!(residual.norm() < 1e-8, "{distance:?} left the row space by {}", residual.norm());
    }
}

#[test]
fn trained_denoiser_responds_to_conditioning() {
    let cfg = DenoiserConfig {
        image_channels: 1,
        image_size: 4,
        rep_dim: 2,
        cond_dim: 4,
        time_dim: 4,
        widths: vec![4, 4],
        blocks_per_level: 1,
        ..Default::default()
    };
    let mut rng = seeded(12);
    let mut net = DenoiserNetwork::new(cfg, &mut rng).unwrap();
    let images = ImageBatch::new(Tensor::from_fn(&[8, 1, 4, 4], |i| if i / 16 % 2 == 0 { 0.8 } else { -0.8 })).unwrap();
    let reps = Tensor::from_fn(&[8, 2], |i| if (i / 2) % 2 == 0 { [1.0, 0.0][i % 2] } else { [0.0, 1.0][i % 2] });
    let schedule = make_schedule(10, 1e-3, 0.2).unwrap();
    let train = DenoiserTrainConfig {
        steps: 30,
        batch_size: 8,
        ..Default::default()
    };
    train_denoiser(&mut net, &images, &reps, &schedule, &train, &mut rng, |_, _| {}).unwrap();
    let x = randn::<f32>(&[2, 1, 4, 4], &mut rng);
    let x = Tensor::stack_rows(&[&x.select_rows(&[0]), &x.select_rows(&[0])]);
    let out = net.predict(&x, &[5, 5], &reps.select_rows(&[0, 1])).unwrap();
    let diff: f32 = out.row(0).iter().zip(out.row(1)).map(|(a, b)| (a - b).abs()).sum();
    assert!(diff > 1e-4, "outputs identical for different conditionings");
}
