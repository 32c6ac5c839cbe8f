//! Two-block 3D CNN used as the reference classifier.
//!
//! conv(C→8) → ReLU → maxpool → conv(8→16) → ReLU → maxpool → global
//! average pool → linear(16→classes). Everything runs in f64.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    global_avg_pool, global_avg_pool_backward, max_pool, max_pool_backward, relu, relu_backward,
    Conv3d, Linear, Volume,
};
use super::{check_class, check_input, score_upstream, softmax, ScoreMode, ScoreModel};
use crate::error::{Error, Result};
use crate::tensor_io::write_atomic;
use crate::video::{VideoDims, VideoTensor};

pub const HIDDEN1: usize = 8;
pub const HIDDEN2: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tiny3DCnn {
    pub input: VideoDims,
    pub classes: usize,
    pub mode: ScoreMode,
    pub conv1: Conv3d,
    pub conv2: Conv3d,
    pub fc: Linear,
    /// Normalization the training data went through, if any.
    #[serde(default)]
    pub normalization: Option<Normalization>,
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache {
    input: Volume,
    pre1: Volume,
    act1: Volume,
    arg1: Vec<usize>,
    pool1: Volume,
    pre2: Volume,
    act2: Volume,
    arg2: Vec<usize>,
    pool2: Volume,
    features: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Parameter gradients in the same layout as the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub fc_w: Vec<f64>,
    pub fc_b: Vec<f64>,
}

impl ParamGrads {
    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn slices(&self) -> [&[f64]; 6] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc_w,
            &self.fc_b,
        ]
    }

    fn slices_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc_w,
            &mut self.fc_b,
        ]
    }
}

impl Tiny3DCnn {
    /// Glorot-uniform weights, zero biases.
    pub fn new(input: VideoDims, classes: usize, seed: u64) -> Result<Self> {
        input.validate()?;
        if input.frames < 4 || input.height < 4 || input.width < 4 {
            return Err(Error::validation(format!(
                "input {input} too small for two 2x2x2 pools"
            )));
        }
        if classes == 0 {
            return Err(Error::validation("model needs at least one class"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv1 = Conv3d::zeros(input.channels, HIDDEN1);
        let mut conv2 = Conv3d::zeros(HIDDEN1, HIDDEN2);
        let mut fc = Linear::zeros(HIDDEN2, classes);
        let mut glorot = |w: &mut [f64], fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            w.iter_mut().for_each(|x| *x = rng.gen_range(-limit..limit));
        };
        let (fi, fo) = (conv1.fan_in(), conv1.fan_out());
        glorot(&mut conv1.weight, fi, fo);
        let (fi, fo) = (conv2.fan_in(), conv2.fan_out());
        glorot(&mut conv2.weight, fi, fo);
        glorot(&mut fc.weight, HIDDEN2, classes);
        Ok(Self {
            input,
            classes,
            mode: ScoreMode::Probability,
            conv1,
            conv2,
            fc,
            normalization: None,
        })
    }

    pub fn with_mode(mut self, mode: ScoreMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn param_count(&self) -> usize {
        self.conv1.weight.len()
            + self.conv1.bias.len()
            + self.conv2.weight.len()
            + self.conv2.bias.len()
            + self.fc.weight.len()
            + self.fc.bias.len()
    }

    pub fn all_finite(&self) -> bool {
        [
            &self.conv1.weight,
            &self.conv1.bias,
            &self.conv2.weight,
            &self.conv2.bias,
            &self.fc.weight,
            &self.fc.bias,
        ]
        .iter()
        .all(|p| p.iter().all(|x| x.is_finite()))
    }

    fn to_volume(&self, video: &VideoTensor) -> Volume {
        let d = video.dims();
        let mut v = Volume::zeros(d.channels, d.frames, d.height, d.width);
        let plane = d.positions();
        for (pos, px) in video.data().chunks_exact(d.channels).enumerate() {
            for (c, &x) in px.iter().enumerate() {
                v.data[c * plane + pos] = x;
            }
        }
        v
    }

    fn from_volume(grad: &Volume) -> Vec<f64> {
        let plane = grad.spatial();
        let c = grad.channels;
        let mut out = vec![0.0; plane * c];
        for ch in 0..c {
            for pos in 0..plane {
                out[pos * c + ch] = grad.data[ch * plane + pos];
            }
        }
        out
    }

    pub fn forward_cached(&self, video: &VideoTensor) -> Result<ForwardCache> {
        check_input(self, video)?;
        let input = self.to_volume(video);
        let pre1 = self.conv1.forward(&input);
        let act1 = relu(&pre1);
        let (pool1, arg1) = max_pool(&act1);
        let pre2 = self.conv2.forward(&pool1);
        let act2 = relu(&pre2);
        let (pool2, arg2) = max_pool(&act2);
        let features = global_avg_pool(&pool2);
        let logits = self.fc.forward(&features);
        Ok(ForwardCache {
            input,
            pre1,
            act1,
            arg1,
            pool1,
            pre2,
            act2,
            arg2,
            pool2,
            features,
            logits,
        })
    }

    pub fn logits(&self, video: &VideoTensor) -> Result<Vec<f64>> {
        Ok(self.forward_cached(video)?.logits)
    }

    /// Backward from an upstream gradient on the logits. Returns the input
    /// gradient in video layout and the parameter gradients.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &[f64]) -> (Vec<f64>, ParamGrads) {
        let (g_feat, fc_w, fc_b) = self.fc.backward(&cache.features, grad_logits);
        let g_pool2 = global_avg_pool_backward(&cache.pool2, &g_feat);
        let g_act2 = max_pool_backward(&cache.act2, &cache.arg2, &g_pool2);
        let g_pre2 = relu_backward(&cache.pre2, &g_act2);
        let (g_pool1, conv2_w, conv2_b) = self.conv2.backward(&cache.pool1, &g_pre2);
        let g_act1 = max_pool_backward(&cache.act1, &cache.arg1, &g_pool1);
        let g_pre1 = relu_backward(&cache.pre1, &g_act1);
        let (g_input, conv1_w, conv1_b) = self.conv1.backward(&cache.input, &g_pre1);
        (
            Self::from_volume(&g_input),
            ParamGrads {
                conv1_w,
                conv1_b,
                conv2_w,
                conv2_b,
                fc_w,
                fc_b,
            },
        )
    }

    /// Cross-entropy loss and parameter gradients for one labelled clip.
    pub fn loss_and_grads(&self, video: &VideoTensor, label: usize) -> Result<(f64, ParamGrads, Vec<f64>)> {
        let cache = self.forward_cached(video)?;
        let p = softmax(&cache.logits);
        let loss = -p[label].max(1e-300).ln();
        let mut upstream = p.clone();
        upstream[label] -= 1.0;
        let (_, grads) = self.backward(&cache, &upstream);
        Ok((loss, grads, p))
    }

    pub fn apply_update(&mut self, grads: &ParamGrads, lr: f64) {
        let params: [&mut Vec<f64>; 6] = [
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.fc.weight,
            &mut self.fc.bias,
        ];
        for (p, g) in params.into_iter().zip(grads.slices()) {
            p.iter_mut().zip(g).for_each(|(w, d)| *w -= lr * d);
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        write_atomic(path.as_ref(), &json)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        let m: Tiny3DCnn = serde_json::from_slice(&bytes)?;
        let c = m.input.channels;
        let consistent = m.conv1.in_channels == c
            && m.conv1.weight.len() == HIDDEN1 * c * 27
            && m.conv2.weight.len() == HIDDEN2 * HIDDEN1 * 27
            && m.fc.weight.len() == HIDDEN2 * m.classes
            && m.fc.bias.len() == m.classes;
        if !consistent || !m.all_finite() {
            return Err(Error::Model("inconsistent or non-finite model file".into()));
        }
        Ok(m)
    }
}

impl ScoreModel for Tiny3DCnn {
    fn class_count(&self) -> usize {
        self.classes
    }

    fn input_dims(&self) -> Option<VideoDims> {
        Some(self.input)
    }

    fn score_mode(&self) -> ScoreMode {
        self.mode
    }

    fn forward(&self, video: &VideoTensor) -> Result<Vec<f64>> {
        let logits = self.logits(video)?;
        Ok(match self.mode {
            ScoreMode::Logit => logits,
            ScoreMode::Probability => softmax(&logits),
        })
    }

    fn gradient(&self, video: &VideoTensor, class: usize) -> Result<Vec<f64>> {
        check_class(self, class)?;
        let cache = self.forward_cached(video)?;
        let upstream = score_upstream(&cache.logits, class, self.mode);
        Ok(self.backward(&cache, &upstream).0)
    }

    fn name(&self) -> String {
        "tiny3dcnn".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_video(dims: VideoDims, seed: u64) -> VideoTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VideoTensor::new(dims, (0..dims.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn probabilities_sum_to_one() {
        let dims = VideoDims::new(4, 8, 8, 3);
        let m = Tiny3DCnn::new(dims, 8, 1).unwrap();
        let p = m.forward(&random_video(dims, 2)).unwrap();
        assert_eq!(p.len(), 8);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_head_is_uniform() {
        let dims = VideoDims::new(4, 8, 8, 3);
        let mut m = Tiny3DCnn::new(dims, 5, 1).unwrap();
        m.fc.weight.fill(0.0);
        let p = m.forward(&random_video(dims, 3)).unwrap();
        assert!(p.iter().all(|&x| (x - 0.2).abs() < 1e-12));
    }

    #[test]
    fn forward_is_deterministic() {
        let dims = VideoDims::new(4, 8, 8, 1);
        let m = Tiny3DCnn::new(dims, 3, 7).unwrap();
        let v = random_video(dims, 4);
        assert_eq!(m.forward(&v).unwrap(), m.forward(&v).unwrap());
    }

    #[test]
    fn zero_output_row_gives_zero_gradient_in_logit_mode() {
        let dims = VideoDims::new(4, 8, 8, 3);
        let mut m = Tiny3DCnn::new(dims, 4, 1).unwrap().with_mode(ScoreMode::Logit);
        m.fc.weight[2 * HIDDEN2..3 * HIDDEN2].fill(0.0);
        let g = m.gradient(&random_video(dims, 5), 2).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_wrong_dims() {
        let m = Tiny3DCnn::new(VideoDims::new(4, 8, 8, 3), 2, 1).unwrap();
        let v = random_video(VideoDims::new(4, 8, 9, 3), 1);
        assert!(matches!(m.forward(&v), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let dims = VideoDims::new(4, 6, 6, 3);
        for mode in [ScoreMode::Probability, ScoreMode::Logit] {
            let m = Tiny3DCnn::new(dims, 3, 11).unwrap().with_mode(mode);
            let v = random_video(dims, 12);
            let g = m.gradient(&v, 1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(13);
            for _ in 0..30 {
                let i = rng.gen_range(0..dims.len());
                let eps = 1e-5;
                let mut plus = v.data().to_vec();
                plus[i] += eps;
                let mut minus = v.data().to_vec();
                minus[i] -= eps;
                let fp = m.forward(&VideoTensor::new(dims, plus).unwrap()).unwrap()[1];
                let fm = m.forward(&VideoTensor::new(dims, minus).unwrap()).unwrap()[1];
                let fd = (fp - fm) / (2.0 * eps);
                let denom = fd.abs().max(g[i].abs()).max(1e-8);
                assert!((fd - g[i]).abs() / denom < 1e-4, "{mode}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Tiny3DCnn::new(VideoDims::new(4, 8, 8, 3), 8, 3).unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        assert_eq!(Tiny3DCnn::load(&path).unwrap(), m);
    }
}
