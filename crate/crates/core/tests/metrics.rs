use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aosa::metrics::{binomial_upper_tail, deletion_auc, insertion_auc, random_saliency, sign_test};
use aosa::model::AffineModel;
use aosa::{VideoDims, VideoTensor};

/// Sum over positions, one class, all weights 1.
fn sum_model(dims: VideoDims) -> AffineModel {
    AffineModel::new(dims, vec![vec![1.0; dims.len()]], vec![0.0]).unwrap()
}

fn with_values(dims: VideoDims, values: Vec<f64>) -> aosa::saliency::pipeline::SaliencyMap {
    let mut m = random_saliency(dims.frames, dims.height, dims.width, 0);
    m.values = values;
    m
}

#[test]
fn deletion_curve_matches_hand_removal() {
    let dims = VideoDims::new(2, 3, 3, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let video = VideoTensor::new(dims, (0..18).map(|_| rng.gen_range(0.1..1.0)).collect()).unwrap();
    let map_values: Vec<f64> = (0..18).map(|_| rng.gen::<f64>()).collect();
    let map = with_values(dims, map_values.clone());
    // 18 positions in 4 steps: batches of 5, 5, 5, 3.
    let res = deletion_auc(&video, &map, &sum_model(dims), 0, 4).unwrap();

    let mut left: Vec<(f64, f64)> = map_values.into_iter().zip(video.data().iter().copied()).collect();
    let mut expected = vec![left.iter().map(|p| p.1).sum::<f64>()];
    for take in [5, 5, 5, 3] {
        for _ in 0..take {
            let i = (0..left.len()).max_by(|&a, &b| left[a].0.partial_cmp(&left[b].0).unwrap()).unwrap();
            left.remove(i);
        }
        expected.push(left.iter().map(|p| p.1).sum::<f64>());
    }
    assert_eq!(res.curve.len(), 5);
    for (a, b) in res.curve.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(res.curve[4].abs() < 1e-12);
}

#[test]
fn true_contributions_give_the_best_curves() {
    let dims = VideoDims::new(2, 4, 4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let video = VideoTensor::new(dims, (0..dims.len()).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let model = sum_model(dims);
    let truth: Vec<f64> = video.data().chunks(3).map(|px| px.iter().sum()).collect();
    let ideal = with_values(dims, truth);
    let del = deletion_auc(&video, &ideal, &model, 0, 32).unwrap().auc;
    let ins = insertion_auc(&video, &ideal, &model, 0, 32).unwrap().auc;
    for seed in 0..20 {
        let r = random_saliency(2, 4, 4, seed);
        assert!(del <= deletion_auc(&video, &r, &model, 0, 32).unwrap().auc + 1e-12);
        assert!(ins >= insertion_auc(&video, &r, &model, 0, 32).unwrap().auc - 1e-12);
    }
}

#[test]
fn binomial_tail_matches_enumeration() {
    for n in 0..=12usize {
        for k in 0..=n {
            let hits = (0u32..1 << n).filter(|bits| bits.count_ones() as usize >= k).count();
            let exact = hits as f64 / (1u64 << n) as f64;
            assert!((binomial_upper_tail(n, k) - exact).abs() < 1e-12, "n={n} k={k}");
        }
    }
}

#[test]
fn sign_test_counts_and_ties() {
    let t = sign_test(&[3.0, 2.0, 1.0, 5.0, 4.0], &[1.0, 2.0, 2.0, 0.0, 0.0]);
    assert_eq!((t.wins, t.losses, t.ties), (3, 1, 1));
    assert!((t.p_value - 5.0 / 16.0).abs() < 1e-12);
}
