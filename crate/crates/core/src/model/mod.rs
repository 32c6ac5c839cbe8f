//! Score functions consumed by the saliency engine.

mod affine;
pub mod cnn;
pub mod external;
pub mod layers;
pub mod train;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::{VideoDims, VideoTensor};

pub use affine::AffineModel;
pub use cnn::Tiny3DCnn;
pub use external::ExternalModel;
pub use train::{train_toy, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ScoreMode {
    /// Softmax probabilities.
    #[default]
    Probability,
    /// Raw logits.
    Logit,
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreMode::Probability => "prob",
            ScoreMode::Logit => "logit",
        })
    }
}

impl FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prob" | "probability" => Ok(ScoreMode::Probability),
            "logit" => Ok(ScoreMode::Logit),
            other => Err(Error::validation(format!("unknown score mode {other:?}"))),
        }
    }
}

/// A classifier seen as a differentiable score function.
///
/// `forward` returns one score per class (probabilities or logits per
/// [`ScoreModel::score_mode`]); `gradient` returns the derivative of one
/// class score with respect to every input element, in video layout.
pub trait ScoreModel: Send + Sync {
    fn class_count(&self) -> usize;

    /// Input dims the model accepts; `None` accepts any.
    fn input_dims(&self) -> Option<VideoDims>;

    fn score_mode(&self) -> ScoreMode;

    fn forward(&self, video: &VideoTensor) -> Result<Vec<f64>>;

    fn gradient(&self, video: &VideoTensor, class: usize) -> Result<Vec<f64>>;

    fn name(&self) -> String {
        "model".to_string()
    }
}

pub fn check_input(model: &dyn ScoreModel, video: &VideoTensor) -> Result<()> {
    if let Some(expected) = model.input_dims() {
        if expected != video.dims() {
            return Err(Error::DimMismatch {
                expected: expected.to_string(),
                actual: video.dims().to_string(),
            });
        }
    }
    Ok(())
}

pub fn check_class(model: &dyn ScoreModel, class: usize) -> Result<()> {
    if class >= model.class_count() {
        return Err(Error::validation(format!(
            "class {class} out of range for {} classes",
            model.class_count()
        )));
    }
    Ok(())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Upstream gradient on the logits for the score of `class` under `mode`.
pub fn score_upstream(logits: &[f64], class: usize, mode: ScoreMode) -> Vec<f64> {
    match mode {
        ScoreMode::Logit => {
            let mut g = vec![0.0; logits.len()];
            g[class] = 1.0;
            g
        }
        ScoreMode::Probability => {
            let p = softmax(logits);
            p.iter()
                .enumerate()
                .map(|(k, &pk)| {
                    let delta = if k == class { 1.0 } else { 0.0 };
                    p[class] * (delta - pk)
                })
                .collect()
        }
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Forward/backward call counts.
#[derive(Debug, Default)]
pub struct CallCounter {
    forwards: AtomicU64,
    backwards: AtomicU64,
}

impl CallCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forwards(&self) -> u64 {
        self.forwards.load(Ordering::SeqCst)
    }

    pub fn backwards(&self) -> u64 {
        self.backwards.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.forwards.store(0, Ordering::SeqCst);
        self.backwards.store(0, Ordering::SeqCst);
    }

    fn add_forward(&self) {
        self.forwards.fetch_add(1, Ordering::SeqCst);
    }

    fn add_backward(&self) {
        self.backwards.fetch_add(1, Ordering::SeqCst);
    }
}

/// Wraps a model and counts its calls. A `gradient` call counts as one
/// backward only.
pub struct Counted<'a> {
    inner: &'a dyn ScoreModel,
    counter: CallCounter,
}

impl<'a> Counted<'a> {
    pub fn new(inner: &'a dyn ScoreModel) -> Self {
        Self {
            inner,
            counter: CallCounter::new(),
        }
    }

    pub fn counter(&self) -> &CallCounter {
        &self.counter
    }
}

impl ScoreModel for Counted<'_> {
    fn class_count(&self) -> usize {
        self.inner.class_count()
    }

    fn input_dims(&self) -> Option<VideoDims> {
        self.inner.input_dims()
    }

    fn score_mode(&self) -> ScoreMode {
        self.inner.score_mode()
    }

    fn forward(&self, video: &VideoTensor) -> Result<Vec<f64>> {
        self.counter.add_forward();
        self.inner.forward(video)
    }

    fn gradient(&self, video: &VideoTensor, class: usize) -> Result<Vec<f64>> {
        self.counter.add_backward();
        self.inner.gradient(video, class)
    }

    fn name(&self) -> String {
        self.inner.name()
    }
}

/// Ignores its input and returns fixed scores; gradient is zero.
#[derive(Debug, Clone)]
pub struct ConstantModel {
    pub scores: Vec<f64>,
    pub mode: ScoreMode,
}

impl ScoreModel for ConstantModel {
    fn class_count(&self) -> usize {
        self.scores.len()
    }

    fn input_dims(&self) -> Option<VideoDims> {
        None
    }

    fn score_mode(&self) -> ScoreMode {
        self.mode
    }

    fn forward(&self, _video: &VideoTensor) -> Result<Vec<f64>> {
        Ok(self.scores.clone())
    }

    fn gradient(&self, video: &VideoTensor, class: usize) -> Result<Vec<f64>> {
        check_class(self, class)?;
        Ok(vec![0.0; video.dims().len()])
    }

    fn name(&self) -> String {
        "constant".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, 999.0, -5.0, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|x| x.is_finite() && *x >= 0.0));
    }

    #[test]
    fn probability_upstream_matches_finite_differences() {
        let z = [0.3, -1.2, 2.0, 0.7];
        for class in 0..4 {
            let g = score_upstream(&z, class, ScoreMode::Probability);
            for k in 0..4 {
                let eps = 1e-6;
                let mut zp = z;
                zp[k] += eps;
                let mut zm = z;
                zm[k] -= eps;
                let fd = (softmax(&zp)[class] - softmax(&zm)[class]) / (2.0 * eps);
                assert!((fd - g[k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn counter_counts_and_resets() {
        let m = ConstantModel {
            scores: vec![0.5, 0.5],
            mode: ScoreMode::Probability,
        };
        let c = Counted::new(&m);
        let v = VideoTensor::filled(VideoDims::new(2, 2, 2, 1), 0.0).unwrap();
        c.forward(&v).unwrap();
        c.forward(&v).unwrap();
        c.gradient(&v, 1).unwrap();
        assert_eq!((c.counter().forwards(), c.counter().backwards()), (2, 1));
        c.counter().reset();
        assert_eq!((c.counter().forwards(), c.counter().backwards()), (0, 0));
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn score_mode_parse() {
        assert_eq!("prob".parse::<ScoreMode>().unwrap(), ScoreMode::Probability);
        assert_eq!("logit".parse::<ScoreMode>().unwrap(), ScoreMode::Logit);
        assert!("x".parse::<ScoreMode>().is_err());
    }
}
