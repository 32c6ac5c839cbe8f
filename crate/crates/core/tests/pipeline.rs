use aosa::mask::MaskConfig;
use aosa::model::{Counted, ScoreModel, Tiny3DCnn};
use aosa::saliency::pipeline::{aosa_map, approx_map, explain, FillMode, Method, SaliencyConfig, SaliencyMap};
use aosa::synthetic::direction_dataset;

fn clip() -> aosa::VideoTensor {
    direction_dataset(1, 6, 24, 24, 1.0, 21).unwrap().remove(2).video
}

fn cfg() -> SaliencyConfig {
    SaliencyConfig {
        mask: MaskConfig {
            spacing: 4,
            occ_height: 8,
            occ_width: 8,
            integrate: 2,
        },
        ..SaliencyConfig::default()
    }
}

#[test]
fn approx_without_adjustment_costs_one_pass_each() {
    let x = clip();
    let model = Tiny3DCnn::new(x.dims(), 8, 4).unwrap();
    let counted = Counted::new(&model);
    let map = approx_map(&x, &counted, &SaliencyConfig { adjust: false, ..cfg() }).unwrap();
    assert_eq!((counted.counter().forwards(), counted.counter().backwards()), (1, 1));
    assert_eq!((map.meta.forwards, map.meta.backwards), (1, 1));
    assert!(map.records.iter().all(|r| !r.adjusted));
}

#[test]
fn exact_map_costs_one_forward_per_mask() {
    let x = clip();
    let model = Tiny3DCnn::new(x.dims(), 8, 4).unwrap();
    let counted = Counted::new(&model);
    let map = aosa_map(&x, &counted, &cfg()).unwrap();
    assert_eq!(counted.counter().forwards(), map.meta.masks as u64 + 1);
    assert_eq!(counted.counter().backwards(), 0);
    assert_eq!(map.records.len(), map.meta.masks);
}

#[test]
fn saved_maps_reload_unchanged() {
    let x = clip();
    let model = Tiny3DCnn::new(x.dims(), 8, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for c in [
        cfg(),
        SaliencyConfig { method: Method::Approx, ..cfg() },
        SaliencyConfig { fill: FillMode::Conditional, mc_samples: 2, ..cfg() },
    ] {
        let map = explain(&x, &model, &c).unwrap();
        let p = dir.path().join("m.aost");
        map.save(&p).unwrap();
        let back = SaliencyMap::load(&p).unwrap();
        assert_eq!(back.meta, map.meta);
        assert_eq!((back.frames, back.height, back.width), (6, 24, 24));
        for (a, b) in back.values.iter().zip(&map.values) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }
}

#[test]
fn explicit_target_is_respected() {
    let x = clip();
    let model = Tiny3DCnn::new(x.dims(), 8, 4).unwrap();
    let map = explain(&x, &model, &SaliencyConfig { target: aosa::saliency::pipeline::Target::Class(5), ..cfg() }).unwrap();
    assert_eq!(map.meta.class, 5);
    assert_eq!(map.meta.base_score, model.forward(&x).unwrap()[5]);
}
