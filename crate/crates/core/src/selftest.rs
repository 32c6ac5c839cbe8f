//! Independent oracles for the engine, shared by the test suite and the
//! `selftest` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mask::{MaskConfig, SpatioTemporalMask};
use crate::model::{AffineModel, ScoreMode, ScoreModel, Tiny3DCnn};
use crate::saliency::pipeline::{
    approx_map, aosa_map, occlusion_map, FillSource, SaliencyConfig, Target,
};
use crate::video::{Rect, VideoDims, VideoTensor};

/// `|a - b| / max(|a|, |b|)`, 0 when both are 0.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// One coordinate of a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradSample {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    /// Within `rel_tol` relative error, or both below an absolute floor of 1e-9.
    pub fn passes(&self, rel_tol: f64) -> bool {
        relative_error(self.analytic, self.numeric) <= rel_tol || (self.analytic - self.numeric).abs() <= 1e-9
    }
}

/// Central differences of `forward(x)[class]` at the given element indices.
pub fn finite_difference_check(
    model: &dyn ScoreModel,
    x: &VideoTensor,
    class: usize,
    indices: &[usize],
    eps: f64,
) -> Result<Vec<GradSample>> {
    let analytic = model.gradient(x, class)?;
    indices
        .iter()
        .map(|&i| {
            let mut plus = x.data().to_vec();
            let mut minus = plus.clone();
            plus[i] += eps;
            minus[i] -= eps;
            let fp = model.forward(&VideoTensor::new(x.dims(), plus)?)?[class];
            let fm = model.forward(&VideoTensor::new(x.dims(), minus)?)?[class];
            Ok(GradSample {
                index: i,
                analytic: analytic[i],
                numeric: (fp - fm) / (2.0 * eps),
            })
        })
        .collect()
}

/// Stub model answering from a table of exact inputs; unknown inputs score 0.
/// Two classes: `[s, 1 - s]`.
pub struct TableModel {
    pub entries: Vec<(Vec<f64>, f64)>,
}

impl ScoreModel for TableModel {
    fn class_count(&self) -> usize {
        2
    }

    fn input_dims(&self) -> Option<VideoDims> {
        None
    }

    fn score_mode(&self) -> ScoreMode {
        ScoreMode::Probability
    }

    fn forward(&self, video: &VideoTensor) -> Result<Vec<f64>> {
        let s = self
            .entries
            .iter()
            .find(|(d, _)| d.as_slice() == video.data())
            .map_or(0.0, |e| e.1);
        Ok(vec![s, 1.0 - s])
    }

    fn gradient(&self, _video: &VideoTensor, _class: usize) -> Result<Vec<f64>> {
        Err(Error::Model("table model has no gradient".into()))
    }

    fn name(&self) -> String {
        "table".into()
    }
}

/// `S(p) = (1/N) Σ_i s_i [p not in any rectangle of mask i]`, computed
/// pixel by pixel from the rectangles.
pub fn dense_map_oracle(dims: VideoDims, masks: &[SpatioTemporalMask], scores: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(dims.positions());
    for t in 0..dims.frames {
        for r in 0..dims.height {
            for c in 0..dims.width {
                let mut sum = 0.0;
                for (m, &s) in masks.iter().zip(scores) {
                    let hidden = m.frame_rects(t).any(|rect| rect.contains(r, c));
                    sum += s * if hidden { 0.0 } else { 1.0 };
                }
                out.push(sum / masks.len() as f64);
            }
        }
    }
    out
}

/// A random small instance for the dense map oracle: video, masks, per-mask
/// scores and the matching stub model.
pub fn random_map_instance(seed: u64) -> (VideoTensor, Vec<SpatioTemporalMask>, Vec<f64>, TableModel) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = VideoDims::new(2, rng.gen_range(2..=8), rng.gen_range(2..=8), if rng.gen() { 3 } else { 1 });
    let video = VideoTensor::new(dims, (0..dims.len()).map(|_| rng.gen_range(0.05..1.0)).collect()).unwrap();
    let count = rng.gen_range(1..=4);
    let mut masks = Vec::new();
    let mut scores = Vec::new();
    let mut entries = vec![(video.data().to_vec(), 0.9)];
    while masks.len() < count {
        let rects: Vec<Option<Rect>> = (0..dims.frames)
            .map(|_| {
                if rng.gen_bool(0.2) {
                    return None;
                }
                let h = rng.gen_range(1..=dims.height);
                let w = rng.gen_range(1..=dims.width);
                Some(Rect::new(rng.gen_range(0..=dims.height - h), rng.gen_range(0..=dims.width - w), h, w))
            })
            .collect();
        let mask = SpatioTemporalMask::from_rects(dims, masks.len(), rects).unwrap();
        let mut occluded = video.data().to_vec();
        for p in mask.occluded_positions() {
            for ch in 0..dims.channels {
                occluded[p * dims.channels + ch] = 0.0;
            }
        }
        // Each occluded input needs its own table entry.
        if entries.iter().any(|e| e.0 == occluded) {
            continue;
        }
        let score: f64 = rng.gen_range(0.0..0.9);
        entries.push((occluded, score));
        masks.push(mask);
        scores.push(score);
    }
    (video, masks, scores, TableModel { entries })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfTestOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn gradient_oracle(seed: u64) -> Result<SelfTestOutcome> {
    let dims = VideoDims::new(4, 8, 8, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut failed = 0;
    for k in 0..3 {
        let model = Tiny3DCnn::new(dims, 4, seed.wrapping_add(k))?;
        let x = VideoTensor::new(dims, (0..dims.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let idx: Vec<usize> = (0..20).map(|_| rng.gen_range(0..dims.len())).collect();
        for s in finite_difference_check(&model, &x, rng.gen_range(0..4), &idx, 1e-5)? {
            worst = worst.max(relative_error(s.analytic, s.numeric));
            failed += usize::from(!s.passes(1e-4));
        }
    }
    Ok(SelfTestOutcome {
        name: "gradient-check",
        passed: failed == 0,
        detail: format!("{failed} of 60 coordinates outside tolerance, max rel err {worst:.2e}"),
    })
}

fn affine_oracle(seed: u64) -> Result<SelfTestOutcome> {
    let dims = VideoDims::new(4, 16, 16, 3);
    let model = AffineModel::random(dims, 5, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let x = VideoTensor::new(dims, (0..dims.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let cfg = SaliencyConfig {
        mask: MaskConfig {
            spacing: 4,
            occ_height: 6,
            occ_width: 6,
            integrate: 2,
        },
        seed,
        ..SaliencyConfig::default()
    };
    let exact = aosa_map(&x, &model, &cfg)?;
    let approx = approx_map(&x, &model, &cfg)?;
    let diff = exact
        .values
        .iter()
        .zip(&approx.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(SelfTestOutcome {
        name: "affine-equivalence",
        passed: diff <= 1e-9,
        detail: format!("max |exact - approx| = {diff:.2e}"),
    })
}

fn dense_oracle(seed: u64) -> Result<SelfTestOutcome> {
    let mut mismatches = 0;
    for k in 0..20 {
        let (video, masks, scores, model) = random_map_instance(seed.wrapping_add(k));
        let cfg = SaliencyConfig {
            target: Target::Class(0),
            ..SaliencyConfig::default()
        };
        let map = occlusion_map(&video, &model, &masks, FillSource::Constant(0.0), &cfg)?;
        if map.values != dense_map_oracle(video.dims(), &masks, &scores) {
            mismatches += 1;
        }
    }
    Ok(SelfTestOutcome {
        name: "dense-map-oracle",
        passed: mismatches == 0,
        detail: format!("{mismatches} of 20 instances differ"),
    })
}

/// Runs every oracle; errors count as failures.
pub fn run_all(seed: u64) -> Vec<SelfTestOutcome> {
    let checks: [(&'static str, fn(u64) -> Result<SelfTestOutcome>); 3] = [
        ("gradient-check", gradient_oracle),
        ("affine-equivalence", affine_oracle),
        ("dense-map-oracle", dense_oracle),
    ];
    checks
        .into_iter()
        .map(|(name, f)| {
            f(seed).unwrap_or_else(|e| SelfTestOutcome {
                name,
                passed: false,
                detail: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_oracles_pass() {
        for o in run_all(5) {
            assert!(o.passed, "{}: {}", o.name, o.detail);
        }
    }

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1.0, 0.5), 0.5);
    }
}
