//! Occluded inputs in sparse form and the scores derived from them.
//!
//! An [`Occlusion`] lists the flat element indices a mask replaces together
//! with their fill mean (and standard deviation for conditional fill). The
//! occluded input is `g(x) = x ⊙ M + (1 - M) ⊙ v`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::AnchorTrack;
use crate::mask::{anchor_pixel, fill_distribution, FillDistribution, MaskConfig, SpatioTemporalMask};
use crate::model::ScoreModel;
use crate::video::VideoTensor;

/// Conditional fill statistics for every anchor at every frame it is alive.
#[derive(Debug, Clone)]
pub struct FillTable {
    /// `entries[anchor][t]`: distribution and the top-left pixel of the
    /// unclipped patch it describes.
    entries: Vec<Vec<Option<(FillDistribution, (i64, i64))>>>,
}

impl FillTable {
    pub fn estimate(video: &VideoTensor, tracks: &[AnchorTrack], cfg: &MaskConfig) -> Result<Self> {
        let frames = video.dims().frames;
        let entries = tracks
            .par_iter()
            .map(|track| {
                (0..frames)
                    .map(|t| match track.position(t) {
                        None => Ok(None),
                        Some(p) => {
                            let (r, c) = anchor_pixel(p);
                            let origin = (r - (cfg.occ_height / 2) as i64, c - (cfg.occ_width / 2) as i64);
                            Ok(Some((fill_distribution(video, track, t, cfg)?, origin)))
                        }
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries })
    }

    pub fn get(&self, anchor: usize, t: usize) -> Option<&(FillDistribution, (i64, i64))> {
        self.entries.get(anchor)?.get(t)?.as_ref()
    }
}

/// Sparse occluded input: replaced element indices, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Occlusion {
    coords: Vec<usize>,
    mean: Vec<f64>,
    /// Per-element standard deviation; `None` for deterministic fill.
    std: Option<Vec<f64>>,
}

impl Occlusion {
    /// Every occluded element set to `value`.
    pub fn constant(mask: &SpatioTemporalMask, value: f64) -> Self {
        let c = mask.dims().channels;
        let coords: Vec<usize> = mask
            .occluded_positions()
            .into_iter()
            .flat_map(|p| p * c..(p + 1) * c)
            .collect();
        let mean = vec![value; coords.len()];
        Self {
            coords,
            mean,
            std: None,
        }
    }

    /// Conditional fill from each source anchor's patch statistics. Where
    /// rectangles of several sources overlap, the earliest source wins.
    pub fn conditional(mask: &SpatioTemporalMask, table: &FillTable) -> Result<Self> {
        let d = mask.dims();
        let (w, c) = (d.width, d.channels);
        let mut entries: Vec<(usize, f64, f64)> = Vec::new();
        for t in 0..d.frames {
            let mut claimed = vec![false; d.frame_pixels()];
            for (k, &anchor) in mask.sources().iter().enumerate() {
                let Some(rect) = mask.source_rects(k)[t] else { continue };
                let (dist, origin) = table.get(anchor, t).ok_or_else(|| {
                    Error::validation(format!("no fill statistics for anchor {anchor} at frame {t}"))
                })?;
                for row in rect.top..rect.bottom() {
                    for col in rect.left..rect.right() {
                        if std::mem::replace(&mut claimed[row * w + col], true) {
                            continue;
                        }
                        let dr = (row as i64 - origin.0) as usize;
                        let dc = (col as i64 - origin.1) as usize;
                        for ch in 0..c {
                            let i = dist.index(dr, dc, ch);
                            entries.push((d.index(t, row, col, ch), dist.mean[i], dist.variance[i]));
                        }
                    }
                }
            }
        }
        entries.sort_by_key(|e| e.0);
        Ok(Self {
            coords: entries.iter().map(|e| e.0).collect(),
            mean: entries.iter().map(|e| e.1).collect(),
            std: Some(entries.iter().map(|e| e.2.sqrt()).collect()),
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[usize] {
        &self.coords
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// True when every fill value is deterministic.
    pub fn is_deterministic(&self) -> bool {
        self.std.as_ref().map_or(true, |s| s.iter().all(|&v| v == 0.0))
    }

    /// `g(x)` with the mean fill.
    pub fn apply(&self, x: &VideoTensor) -> VideoTensor {
        let mut data = x.data().to_vec();
        for (&i, &m) in self.coords.iter().zip(&self.mean) {
            data[i] = m;
        }
        VideoTensor::new(x.dims(), data).expect("same dims")
    }

    /// `g(x)` with fill drawn from `N(mean, std^2)` per element.
    pub fn sample(&self, x: &VideoTensor, rng: &mut ChaCha8Rng) -> VideoTensor {
        let Some(std) = &self.std else { return self.apply(x) };
        let mut data = x.data().to_vec();
        for k in 0..self.coords.len() {
            let z: f64 = StandardNormal.sample(rng);
            data[self.coords[k]] = self.mean[k] + std[k] * z;
        }
        VideoTensor::new(x.dims(), data).expect("same dims")
    }

    /// `<J, g(x) - x>` over the occluded elements, mean fill.
    pub fn delta_dot(&self, grad: &[f64], x: &VideoTensor) -> f64 {
        let xs = x.data();
        self.coords
            .iter()
            .zip(&self.mean)
            .map(|(&i, &m)| grad[i] * (m - xs[i]))
            .sum()
    }
}

/// First-order estimate of `f(g(x))`: `f(x) + <J_x, g(x) - x>`.
pub fn approx_score(f_x: f64, grad: &[f64], x: &VideoTensor, occ: &Occlusion) -> f64 {
    f_x + occ.delta_dot(grad, x)
}

/// Closed-form conditional importance `S_M = <J_x, (1 - M) ⊙ (x - μ)>`.
/// The matching expected score is `f(x) - S_M`.
pub fn conditional_approx_score(grad: &[f64], x: &VideoTensor, occ: &Occlusion) -> f64 {
    -occ.delta_dot(grad, x)
}

/// Monte Carlo estimate of `E f_c(g(x; M, v))`, with its standard error.
///
/// Deterministic fills take a single forward. The RNG stream is chosen by
/// `stream` so masks can be scored in any order.
pub fn expected_score(
    model: &dyn ScoreModel,
    x: &VideoTensor,
    occ: &Occlusion,
    class: usize,
    samples: usize,
    seed: u64,
    stream: u64,
) -> Result<(f64, f64)> {
    if samples == 0 {
        return Err(Error::validation("Monte Carlo sample count must be >= 1"));
    }
    if occ.is_deterministic() {
        return Ok((model.forward(&occ.apply(x))?[class], 0.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut scores = Vec::with_capacity(samples);
    for _ in 0..samples {
        scores.push(model.forward(&occ.sample(x, &mut rng))?[class]);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let stderr = if samples > 1 {
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok((mean, stderr))
}

/// Sampled conditional importance `f(x) - mean_i f(g(x; M, v_i))`.
pub fn exact_conditional_score(
    model: &dyn ScoreModel,
    x: &VideoTensor,
    occ: &Occlusion,
    class: usize,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let f_x = model.forward(x)?[class];
    Ok(f_x - expected_score(model, x, occ, class, samples, seed, 0)?.0)
}
