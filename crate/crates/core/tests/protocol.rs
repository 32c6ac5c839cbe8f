use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aosa::mask::MaskConfig;
use aosa::model::{AffineModel, ExternalModel, ScoreMode, ScoreModel};
use aosa::saliency::pipeline::{aosa_map, approx_map, SaliencyConfig, Target};
use aosa::tensor_io::RawTensor;
use aosa::{VideoDims, VideoTensor};

const STUB: &str = env!("CARGO_BIN_EXE_aosa-stub-model");

#[test]
fn external_linear_model_matches_in_process_maps() {
    let dims = VideoDims::new(3, 12, 12, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w: Vec<f32> = (0..dims.len()).map(|_| rng.gen_range(-0.05f32..0.05)).collect();
    let dir = tempfile::tempdir().unwrap();
    let wp = dir.path().join("w.aost");
    RawTensor::new(vec![3, 12, 12, 3], w.clone()).unwrap().save(&wp).unwrap();

    // Inputs pass through f32 on the wire, so use f32-exact pixels.
    let x = VideoTensor::new(dims, (0..dims.len()).map(|_| (rng.gen_range(0.0f32..1.0)) as f64).collect()).unwrap();
    let local = AffineModel::new(dims, vec![w.iter().map(|&v| v as f64).collect()], vec![0.0]).unwrap();
    let remote = ExternalModel::spawn(
        STUB,
        &["linear".into(), wp.to_string_lossy().into_owned()],
        1,
        Some(dims),
        ScoreMode::Logit,
        Duration::from_secs(30),
    )
    .unwrap();
    let cfg = SaliencyConfig {
        mask: MaskConfig {
            spacing: 4,
            occ_height: 4,
            occ_width: 4,
            integrate: 2,
        },
        target: Target::Class(0),
        ..SaliencyConfig::default()
    };
    for (a, b) in [
        (aosa_map(&x, &local, &cfg).unwrap(), aosa_map(&x, &remote, &cfg).unwrap()),
        (approx_map(&x, &local, &cfg).unwrap(), approx_map(&x, &remote, &cfg).unwrap()),
    ] {
        assert_eq!(a.meta.masks, b.meta.masks);
        for (p, q) in a.values.iter().zip(&b.values) {
            assert!((p - q).abs() < 1e-5, "{p} vs {q}");
        }
    }
}

#[test]
fn external_model_survives_many_calls() {
    let dims = VideoDims::new(2, 2, 2, 1);
    let m = ExternalModel::spawn(STUB, &["fixed".into(), "0.25,0.75".into()], 2, Some(dims), ScoreMode::Probability, Duration::from_secs(30)).unwrap();
    let x = VideoTensor::filled(dims, 0.0).unwrap();
    for _ in 0..200 {
        assert_eq!(m.forward(&x).unwrap(), vec![0.25, 0.75]);
    }
    assert_eq!(m.gradient(&x, 1).unwrap(), vec![0.0; 8]);
}

#[test]
fn wrong_class_count_is_rejected() {
    let dims = VideoDims::new(2, 2, 2, 1);
    let m = ExternalModel::spawn(STUB, &["fixed".into(), "0.25,0.75".into()], 3, Some(dims), ScoreMode::Probability, Duration::from_secs(30)).unwrap();
    assert!(m.forward(&VideoTensor::filled(dims, 0.0).unwrap()).is_err());
}
