//! Sparse pyramidal Lucas-Kanade tracking of anchor points.
//!
//! Positions are `[row, col]` in pixels. A track stops at the last frame
//! whose flowed position is still inside `[0, H-1] x [0, W-1]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::RawTensor;
use crate::video::VideoTensor;

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub levels: usize,
    pub window_radius: usize,
    pub max_iterations: usize,
    pub epsilon: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            levels: 3,
            window_radius: 7,
            max_iterations: 10,
            epsilon: 0.01,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::validation("flow needs at least one pyramid level"));
        }
        if self.window_radius < 1 {
            return Err(Error::validation("flow window radius must be >= 1"));
        }
        Ok(())
    }
}

/// Row-major grayscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::validation(format!(
                "image data length {} != {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    #[inline]
    fn at(&self, row: i64, col: i64) -> f64 {
        let r = row.clamp(0, self.height as i64 - 1) as usize;
        let c = col.clamp(0, self.width as i64 - 1) as usize;
        self.data[r * self.width + c]
    }

    /// Bilinear sample with edge clamping.
    pub fn sample(&self, row: f64, col: f64) -> f64 {
        let r0 = row.floor();
        let c0 = col.floor();
        let fr = row - r0;
        let fc = col - c0;
        let (r0, c0) = (r0 as i64, c0 as i64);
        let top = self.at(r0, c0) * (1.0 - fc) + self.at(r0, c0 + 1) * fc;
        let bottom = self.at(r0 + 1, c0) * (1.0 - fc) + self.at(r0 + 1, c0 + 1) * fc;
        top * (1.0 - fr) + bottom * fr
    }

    /// Central-difference gradient `(d/drow, d/dcol)` of the bilinear surface.
    fn gradient(&self, row: f64, col: f64) -> (f64, f64) {
        (
            0.5 * (self.sample(row + 1.0, col) - self.sample(row - 1.0, col)),
            0.5 * (self.sample(row, col + 1.0) - self.sample(row, col - 1.0)),
        )
    }

    fn downsample(&self) -> GrayImage {
        let (h, w) = (self.height / 2, self.width / 2);
        let mut data = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let i = 2 * r * self.width + 2 * c;
                let sum = self.data[i]
                    + self.data[i + 1]
                    + self.data[i + self.width]
                    + self.data[i + self.width + 1];
                data.push(0.25 * sum);
            }
        }
        GrayImage {
            height: h,
            width: w,
            data,
        }
    }
}

/// Level 0 is the input; level k halves level k-1 with 2x2 box averaging.
pub fn build_pyramid(frame: &GrayImage, levels: usize) -> Result<Vec<GrayImage>> {
    if levels < 1 {
        return Err(Error::validation("pyramid needs at least one level"));
    }
    let min_side = 1usize << (levels - 1);
    if frame.height < min_side || frame.width < min_side {
        return Err(Error::validation(format!(
            "{}x{} image too small for {levels} pyramid levels",
            frame.height, frame.width
        )));
    }
    let mut out = Vec::with_capacity(levels);
    out.push(frame.clone());
    for _ in 1..levels {
        let next = out.last().unwrap().downsample();
        out.push(next);
    }
    Ok(out)
}

/// Iterative single-level Lucas-Kanade step for one point.
///
/// Returns the refined displacement starting from `guess`. If the window's
/// structure matrix has minimum eigenvalue below `1e-6 * window area`, the
/// guess is returned unchanged.
pub fn lk_refine(
    prev: &GrayImage,
    next: &GrayImage,
    point: Point,
    guess: Point,
    params: &FlowParams,
) -> Point {
    let radius = params.window_radius as i64;
    let side = 2 * radius + 1;
    let area = (side * side) as f64;

    // Template intensities and gradients over the window, sampled at the
    // (possibly sub-pixel) point.
    let mut template = Vec::with_capacity((side * side) as usize);
    let (mut gxx, mut gxy, mut gyy) = (0.0, 0.0, 0.0);
    for dr in -radius..=radius {
        for dc in -radius..=radius {
            let (r, c) = (point[0] + dr as f64, point[1] + dc as f64);
            let (gr, gc) = prev.gradient(r, c);
            let value = prev.sample(r, c);
            gyy += gr * gr;
            gxy += gr * gc;
            gxx += gc * gc;
            template.push((value, gr, gc));
        }
    }

    let trace = gxx + gyy;
    let det = gxx * gyy - gxy * gxy;
    let disc = ((gxx - gyy) * (gxx - gyy) + 4.0 * gxy * gxy).sqrt();
    let min_eig = 0.5 * (trace - disc);
    if !(min_eig >= 1e-6 * area) || det == 0.0 {
        return guess;
    }

    let mut d = guess;
    for _ in 0..params.max_iterations {
        let (mut br, mut bc) = (0.0, 0.0);
        let mut i = 0;
        for dr in -radius..=radius {
            for dc in -radius..=radius {
                let (value, gr, gc) = template[i];
                i += 1;
                let moved = next.sample(point[0] + dr as f64 + d[0], point[1] + dc as f64 + d[1]);
                let diff = value - moved;
                br += diff * gr;
                bc += diff * gc;
            }
        }
        // Solve [gyy gxy; gxy gxx] [drow; dcol] = [br; bc].
        let step_r = (gxx * br - gxy * bc) / det;
        let step_c = (gyy * bc - gxy * br) / det;
        d[0] += step_r;
        d[1] += step_c;
        if step_r * step_r + step_c * step_c < params.epsilon * params.epsilon {
            break;
        }
    }
    d
}

/// Pyramidal refinement of one point between two frames' pyramids.
fn track_point(prev: &[GrayImage], next: &[GrayImage], point: Point, params: &FlowParams) -> Point {
    let mut guess = [0.0, 0.0];
    for level in (0..prev.len()).rev() {
        let scale = (1u64 << level) as f64;
        let p = [point[0] / scale, point[1] / scale];
        let d = lk_refine(&prev[level], &next[level], p, guess, params);
        guess = if level > 0 { [2.0 * d[0], 2.0 * d[1]] } else { d };
    }
    guess
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorTrack {
    pub id: usize,
    /// Positions for frames `0..=alive_until()`.
    pub positions: Vec<Point>,
}

impl AnchorTrack {
    pub fn new(id: usize, positions: Vec<Point>) -> Self {
        assert!(!positions.is_empty(), "track needs a start position");
        Self { id, positions }
    }

    /// Zero-based index of the last frame with a valid position.
    pub fn alive_until(&self) -> usize {
        self.positions.len() - 1
    }

    pub fn alive_frames(&self) -> usize {
        self.positions.len()
    }

    pub fn position(&self, t: usize) -> Option<Point> {
        self.positions.get(t).copied()
    }

    /// Concatenated consecutive position differences, `2 * (alive_frames - 1)` entries.
    pub fn displacement(&self) -> Vec<f64> {
        self.positions
            .windows(2)
            .flat_map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1]])
            .collect()
    }
}

fn on_screen(p: Point, height: usize, width: usize) -> bool {
    p[0] >= 0.0 && p[0] <= (height - 1) as f64 && p[1] >= 0.0 && p[1] <= (width - 1) as f64
}

fn check_anchors(anchors: &[Point], height: usize, width: usize) -> Result<()> {
    for a in anchors {
        if !on_screen(*a, height, width) {
            return Err(Error::validation(format!(
                "anchor {a:?} outside {height}x{width} frame"
            )));
        }
    }
    Ok(())
}

/// Tracks every anchor from frame 0 through the clip with pyramidal LK.
pub fn track_anchors(
    video: &VideoTensor,
    anchors: &[Point],
    params: &FlowParams,
) -> Result<Vec<AnchorTrack>> {
    params.validate()?;
    let dims = video.dims();
    if dims.frames < 2 {
        return Err(Error::validation("tracking needs at least 2 frames"));
    }
    check_anchors(anchors, dims.height, dims.width)?;
    // Small frames cannot hold the requested pyramid; use what fits.
    let max_levels = (usize::BITS - dims.height.min(dims.width).leading_zeros()) as usize;
    let levels = params.levels.min(max_levels.max(1));

    let pyramids = (0..dims.frames)
        .map(|t| {
            let img = GrayImage::new(dims.height, dims.width, video.luminance(t))?;
            build_pyramid(&img, levels)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(anchors
        .par_iter()
        .enumerate()
        .map(|(id, &start)| {
            let mut positions = vec![start];
            for t in 1..dims.frames {
                let p = *positions.last().unwrap();
                let d = track_point(&pyramids[t - 1], &pyramids[t], p, params);
                let moved = [p[0] + d[0], p[1] + d[1]];
                if !on_screen(moved, dims.height, dims.width) {
                    break;
                }
                positions.push(moved);
            }
            AnchorTrack::new(id, positions)
        })
        .collect())
}

/// Precomputed dense flow, one `H x W x 2` field of `(drow, dcol)` per frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFlow {
    pub height: usize,
    pub width: usize,
    fields: Vec<Vec<f64>>,
}

impl DenseFlow {
    pub fn from_tensors(tensors: Vec<RawTensor>) -> Result<Self> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::validation("dense flow needs at least one field"))?;
        if first.rank() != 3 || first.dims[2] != 2 {
            return Err(Error::Format(format!(
                "flow field must be H x W x 2, got {:?}",
                first.dims
            )));
        }
        let (height, width) = (first.dims[0], first.dims[1]);
        let mut fields = Vec::with_capacity(tensors.len());
        for t in &tensors {
            if t.dims != [height, width, 2] {
                return Err(Error::Format(format!(
                    "flow field dims {:?} differ from {:?}",
                    t.dims, first.dims
                )));
            }
            fields.push(t.to_f64());
        }
        Ok(Self {
            height,
            width,
            fields,
        })
    }

    pub fn pairs(&self) -> usize {
        self.fields.len()
    }

    /// Bilinear flow at a point for frame pair `t -> t+1`.
    pub fn sample(&self, t: usize, p: Point) -> Point {
        let field = &self.fields[t];
        let mut out = [0.0; 2];
        for (k, o) in out.iter_mut().enumerate() {
            let channel = GrayImage {
                height: self.height,
                width: self.width,
                data: field.iter().skip(k).step_by(2).copied().collect(),
            };
            *o = channel.sample(p[0], p[1]);
        }
        out
    }
}

/// Same contract as [`track_anchors`], sampling a supplied dense flow instead of running LK.
pub fn track_anchors_with_flow(
    flow: &DenseFlow,
    frames: usize,
    anchors: &[Point],
) -> Result<Vec<AnchorTrack>> {
    if frames < 2 {
        return Err(Error::validation("tracking needs at least 2 frames"));
    }
    if flow.pairs() < frames - 1 {
        return Err(Error::validation(format!(
            "{} flow fields for {frames} frames",
            flow.pairs()
        )));
    }
    check_anchors(anchors, flow.height, flow.width)?;
    Ok(anchors
        .iter()
        .enumerate()
        .map(|(id, &start)| {
            let mut positions = vec![start];
            for t in 1..frames {
                let p = *positions.last().unwrap();
                let d = flow.sample(t - 1, p);
                let moved = [p[0] + d[0], p[1] + d[1]];
                if !on_screen(moved, flow.height, flow.width) {
                    break;
                }
                positions.push(moved);
            }
            AnchorTrack::new(id, positions)
        })
        .collect())
}
