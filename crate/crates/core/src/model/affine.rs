use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_class, check_input, ScoreMode, ScoreModel};
use crate::error::{Error, Result};
use crate::video::{VideoDims, VideoTensor};

/// `f_c(x) = w_c · x + b_c`, scored as logits so every class score is affine.
#[derive(Debug, Clone)]
pub struct AffineModel {
    dims: VideoDims,
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

impl AffineModel {
    pub fn new(dims: VideoDims, weights: Vec<Vec<f64>>, biases: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::validation("affine model needs one weight row and bias per class"));
        }
        if weights.iter().any(|w| w.len() != dims.len()) {
            return Err(Error::validation("affine weight length must equal input length"));
        }
        Ok(Self {
            dims,
            weights,
            biases,
        })
    }

    pub fn random(dims: VideoDims, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (dims.len() as f64).sqrt();
        let weights = (0..classes)
            .map(|_| (0..dims.len()).map(|_| rng.gen_range(-scale..scale)).collect())
            .collect();
        let biases = (0..classes).map(|_| rng.gen_range(-0.5..0.5)).collect();
        Self {
            dims,
            weights,
            biases,
        }
    }

    pub fn weights(&self, class: usize) -> &[f64] {
        &self.weights[class]
    }
}

impl ScoreModel for AffineModel {
    fn class_count(&self) -> usize {
        self.weights.len()
    }

    fn input_dims(&self) -> Option<VideoDims> {
        Some(self.dims)
    }

    fn score_mode(&self) -> ScoreMode {
        ScoreMode::Logit
    }

    fn forward(&self, video: &VideoTensor) -> Result<Vec<f64>> {
        check_input(self, video)?;
        Ok(self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.iter().zip(video.data()).map(|(a, x)| a * x).sum::<f64>() + b)
            .collect())
    }

    fn gradient(&self, video: &VideoTensor, class: usize) -> Result<Vec<f64>> {
        check_input(self, video)?;
        check_class(self, class)?;
        Ok(self.weights[class].clone())
    }

    fn name(&self) -> String {
        "affine".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_is_weight_everywhere() {
        let dims = VideoDims::new(2, 3, 3, 1);
        let m = AffineModel::random(dims, 2, 4);
        let a = VideoTensor::filled(dims, 0.1).unwrap();
        let b = VideoTensor::filled(dims, -3.0).unwrap();
        assert_eq!(m.gradient(&a, 1).unwrap(), m.weights(1));
        assert_eq!(m.gradient(&b, 1).unwrap(), m.weights(1));
    }

    #[test]
    fn dim_mismatch() {
        let m = AffineModel::random(VideoDims::new(2, 3, 3, 1), 2, 4);
        let v = VideoTensor::filled(VideoDims::new(2, 3, 4, 1), 0.0).unwrap();
        assert!(m.forward(&v).is_err());
    }
}
