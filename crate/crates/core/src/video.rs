//! Dense video tensors in T-major, then H, W, C layout.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VideoDims {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl VideoDims {
    pub fn new(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            frames,
            height,
            width,
            channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::validation(format!(
                "video needs at least 2 frames, got {}",
                self.frames
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::validation("video height and width must be >= 1"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::validation(format!(
                "channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        Ok(())
    }

    /// Number of scalar elements (T·H·W·C).
    pub fn len(&self) -> usize {
        self.frames * self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of spatio-temporal positions (T·H·W).
    pub fn positions(&self) -> usize {
        self.frames * self.height * self.width
    }

    pub fn frame_pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, t: usize, row: usize, col: usize, ch: usize) -> usize {
        ((t * self.height + row) * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn position(&self, t: usize, row: usize, col: usize) -> usize {
        (t * self.height + row) * self.width + col
    }
}

impl fmt::Display for VideoDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.frames, self.height, self.width, self.channels
        )
    }
}

/// Axis-aligned pixel rectangle; covers rows `top..top+height`, cols `left..left+width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        Self {
            top,
            left,
            height,
            width,
        }
    }

    pub fn bottom(&self) -> usize {
        self.top + self.height
    }

    pub fn right(&self) -> usize {
        self.left + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.top && row < self.bottom() && col >= self.left && col < self.right()
    }

    /// Rectangle of the given size centered at an integer pixel, clipped to
    /// the frame. `None` when nothing of it remains on screen.
    pub fn centered_clipped(
        center_row: i64,
        center_col: i64,
        height: usize,
        width: usize,
        frame_h: usize,
        frame_w: usize,
    ) -> Option<Rect> {
        let top = center_row - (height / 2) as i64;
        let left = center_col - (width / 2) as i64;
        Self::clipped(top, left, height, width, frame_h, frame_w)
    }

    pub fn clipped(
        top: i64,
        left: i64,
        height: usize,
        width: usize,
        frame_h: usize,
        frame_w: usize,
    ) -> Option<Rect> {
        let r0 = top.max(0);
        let c0 = left.max(0);
        let r1 = (top + height as i64).min(frame_h as i64);
        let c1 = (left + width as i64).min(frame_w as i64);
        if r1 <= r0 || c1 <= c0 {
            return None;
        }
        Some(Rect::new(
            r0 as usize,
            c0 as usize,
            (r1 - r0) as usize,
            (c1 - c0) as usize,
        ))
    }
}

/// Per-frame ground-truth boxes; `None` where the object is not visible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthBoxes {
    pub frame_height: usize,
    pub frame_width: usize,
    pub boxes: Vec<Option<Rect>>,
}

impl GroundTruthBoxes {
    pub fn new(frame_height: usize, frame_width: usize, boxes: Vec<Option<Rect>>) -> Result<Self> {
        for b in boxes.iter().flatten() {
            if b.height == 0 || b.width == 0 || b.bottom() > frame_height || b.right() > frame_width
            {
                return Err(Error::validation(format!(
                    "box {b:?} outside {frame_height}x{frame_width} frame"
                )));
            }
        }
        Ok(Self {
            frame_height,
            frame_width,
            boxes,
        })
    }

    pub fn annotated_frames(&self) -> usize {
        self.boxes.iter().filter(|b| b.is_some()).count()
    }

    /// Parses the `t top left height width` line format; frames without a
    /// line have no box.
    pub fn parse(text: &str, frames: usize, frame_height: usize, frame_width: usize) -> Result<Self> {
        let mut boxes = vec![None; frames];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let nums: Vec<usize> = line
                .split_whitespace()
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::validation(format!("box line {}: {e}", lineno + 1)))?;
            if nums.len() != 5 {
                return Err(Error::validation(format!(
                    "box line {}: expected 5 fields",
                    lineno + 1
                )));
            }
            let t = nums[0];
            if t >= frames {
                return Err(Error::validation(format!("box frame {t} out of range")));
            }
            boxes[t] = Some(Rect::new(nums[1], nums[2], nums[3], nums[4]));
        }
        Self::new(frame_height, frame_width, boxes)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (t, b) in self.boxes.iter().enumerate() {
            if let Some(b) = b {
                out.push_str(&format!("{t} {} {} {} {}\n", b.top, b.left, b.height, b.width));
            }
        }
        out
    }
}

/// Video of T frames, H×W pixels, C channels. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    dims: VideoDims,
    data: Vec<f64>,
}

impl VideoTensor {
    pub fn new(dims: VideoDims, data: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::validation(format!(
                "data length {} does not match dims {dims} ({})",
                data.len(),
                dims.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: VideoDims, value: f64) -> Result<Self> {
        Self::new(dims, vec![value; dims.len()])
    }

    pub fn dims(&self) -> VideoDims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, t: usize, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.dims.index(t, row, col, ch)]
    }

    /// Contiguous H·W·C slice of frame `t`.
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.dims.frame_pixels() * self.dims.channels;
        &self.data[t * n..(t + 1) * n]
    }

    /// Luminance of frame `t` as a row-major H×W image.
    pub fn luminance(&self, t: usize) -> Vec<f64> {
        let frame = self.frame(t);
        match self.dims.channels {
            1 => frame.to_vec(),
            _ => frame
                .chunks_exact(self.dims.channels)
                .map(|px| 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2])
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> VideoTensor {
        VideoTensor {
            dims: self.dims,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Per-channel `(x - mean_c) / std_c`.
    pub fn normalize(&self, mean: &[f64], std: &[f64]) -> Result<VideoTensor> {
        self.check_channel_params(mean, std)?;
        let c = self.dims.channels;
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - mean[i % c]) / std[i % c])
            .collect();
        Ok(VideoTensor {
            dims: self.dims,
            data,
        })
    }

    pub fn denormalize(&self, mean: &[f64], std: &[f64]) -> Result<VideoTensor> {
        self.check_channel_params(mean, std)?;
        let c = self.dims.channels;
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| x * std[i % c] + mean[i % c])
            .collect();
        Ok(VideoTensor {
            dims: self.dims,
            data,
        })
    }

    fn check_channel_params(&self, mean: &[f64], std: &[f64]) -> Result<()> {
        let c = self.dims.channels;
        if mean.len() != c || std.len() != c {
            return Err(Error::validation(format!(
                "normalization needs {c} means and stds, got {} and {}",
                mean.len(),
                std.len()
            )));
        }
        if let Some(s) = std.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::validation(format!("std must be > 0, got {s}")));
        }
        Ok(())
    }
}

/// Broadcasts a scalar to all channels.
pub fn per_channel(value: f64, channels: usize) -> Vec<f64> {
    vec![value; channels]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: VideoDims) -> VideoTensor {
        let data = (0..dims.len()).map(|i| (i % 97) as f64 / 97.0).collect();
        VideoTensor::new(dims, data).unwrap()
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(VideoTensor::new(VideoDims::new(1, 4, 4, 3), vec![0.0; 48]).is_err());
        assert!(VideoTensor::new(VideoDims::new(2, 4, 4, 2), vec![0.0; 64]).is_err());
        assert!(VideoTensor::new(VideoDims::new(2, 4, 4, 3), vec![0.0; 95]).is_err());
    }

    #[test]
    fn normalize_identity() {
        let v = ramp(VideoDims::new(2, 3, 3, 3));
        let n = v.normalize(&[0.0; 3], &[1.0; 3]).unwrap();
        assert_eq!(n, v);
    }

    #[test]
    fn normalize_constant_to_zero() {
        let v = VideoTensor::filled(VideoDims::new(2, 3, 3, 3), 0.5).unwrap();
        let n = v.normalize(&[0.5; 3], &[0.25; 3]).unwrap();
        assert!(n.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn normalize_round_trip() {
        let v = ramp(VideoDims::new(3, 5, 4, 3));
        let mean = [0.43, 0.39, 0.37];
        let std = [0.22, 0.21, 0.23];
        let back = v.normalize(&mean, &std).unwrap().denormalize(&mean, &std).unwrap();
        for (a, b) in v.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn normalize_rejects_nonpositive_std() {
        let v = ramp(VideoDims::new(2, 2, 2, 3));
        assert!(v.normalize(&[0.0; 3], &[1.0, 0.0, 1.0]).is_err());
        assert!(v.normalize(&[0.0; 3], &[1.0, -1.0, 1.0]).is_err());
    }

    #[test]
    fn normalize_is_linear_with_zero_mean() {
        let v = ramp(VideoDims::new(2, 4, 4, 3));
        let std = [0.5, 2.0, 0.25];
        let a = 3.5;
        let lhs = v.map(|x| a * x).normalize(&[0.0; 3], &std).unwrap();
        let rhs = v.normalize(&[0.0; 3], &std).unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            assert!((l - a * r).abs() < 1e-12);
        }
    }

    #[test]
    fn luminance_weights() {
        let dims = VideoDims::new(2, 1, 1, 3);
        let v = VideoTensor::new(dims, vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!((v.luminance(0)[0] - 0.299).abs() < 1e-15);
        assert!((v.luminance(1)[0] - 0.701).abs() < 1e-12);
    }

    #[test]
    fn centered_rect_clips_at_border() {
        assert_eq!(
            Rect::centered_clipped(56, 56, 16, 16, 112, 112),
            Some(Rect::new(48, 48, 16, 16))
        );
        assert_eq!(
            Rect::centered_clipped(2, 110, 16, 16, 112, 112),
            Some(Rect::new(0, 102, 10, 10))
        );
        assert_eq!(Rect::centered_clipped(-20, 5, 16, 16, 112, 112), None);
    }

    #[test]
    fn boxes_text_round_trip() {
        let b = GroundTruthBoxes::new(
            32,
            32,
            vec![Some(Rect::new(1, 2, 3, 4)), None, Some(Rect::new(0, 0, 32, 32))],
        )
        .unwrap();
        let parsed = GroundTruthBoxes::parse(&b.to_text(), 3, 32, 32).unwrap();
        assert_eq!(parsed, b);
        assert!(GroundTruthBoxes::new(8, 8, vec![Some(Rect::new(4, 4, 5, 1))]).is_err());
    }
}
