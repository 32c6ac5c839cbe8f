//! Spatio-temporal occlusion masks built from anchor tracks.
//!
//! A mask is stored sparsely as one optional rectangle per frame per source
//! anchor. Rasterized, it is 0 inside the union of its rectangles and 1
//! elsewhere, identically across channels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{AnchorTrack, Point};
use crate::synthetic::round_half_up;
use crate::tensor_io::RawTensor;
use crate::video::{Rect, VideoDims, VideoTensor};

/// Side of the square region sampled for conditional fill statistics.
pub const FILL_WINDOW: usize = 36;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskConfig {
    /// Anchor spacing in pixels.
    pub spacing: usize,
    pub occ_height: usize,
    pub occ_width: usize,
    /// Number of co-occurring partners merged into each mask (0 = single masks).
    pub integrate: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            spacing: 8,
            occ_height: 16,
            occ_width: 16,
            integrate: 5,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.spacing < 1 || self.spacing > height.min(width) {
            return Err(Error::validation(format!(
                "anchor spacing {} must be in 1..={}",
                self.spacing,
                height.min(width)
            )));
        }
        if self.occ_height < 1 || self.occ_height > height || self.occ_width < 1 || self.occ_width > width {
            return Err(Error::validation(format!(
                "occlusion {}x{} does not fit a {height}x{width} frame",
                self.occ_height, self.occ_width
            )));
        }
        let n = (height / self.spacing) * (width / self.spacing);
        if self.integrate + 1 > n {
            return Err(Error::validation(format!(
                "K = {} needs more than {n} anchors",
                self.integrate
            )));
        }
        Ok(())
    }
}

/// Cell-centered grid: `floor(H/s) * floor(W/s)` points at
/// `(s/2 + i*s, s/2 + j*s)`, row-major.
pub fn place_anchor_grid(height: usize, width: usize, spacing: usize) -> Result<Vec<Point>> {
    if spacing < 1 || spacing > height.min(width) {
        return Err(Error::validation(format!(
            "anchor spacing {spacing} invalid for {height}x{width} frame"
        )));
    }
    let offset = (spacing / 2) as f64;
    let mut out = Vec::with_capacity((height / spacing) * (width / spacing));
    for i in 0..height / spacing {
        for j in 0..width / spacing {
            out.push([offset + (i * spacing) as f64, offset + (j * spacing) as f64]);
        }
    }
    Ok(out)
}

/// Integer pixel an anchor position maps to (half-up rounding).
pub fn anchor_pixel(p: Point) -> (i64, i64) {
    (round_half_up(p[0]), round_half_up(p[1]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatioTemporalMask {
    dims: VideoDims,
    /// Anchor ids; the first one is the mask's own anchor.
    sources: Vec<usize>,
    /// `rects[k][t]`: rectangle of source `k` at frame `t`.
    rects: Vec<Vec<Option<Rect>>>,
}

impl SpatioTemporalMask {
    /// Mask from explicit per-frame rectangles of one source.
    pub fn from_rects(dims: VideoDims, source: usize, rects: Vec<Option<Rect>>) -> Result<Self> {
        if rects.len() != dims.frames {
            return Err(Error::validation(format!(
                "{} rectangles for {} frames",
                rects.len(),
                dims.frames
            )));
        }
        for r in rects.iter().flatten() {
            if r.area() == 0 || r.bottom() > dims.height || r.right() > dims.width {
                return Err(Error::validation(format!("rectangle {r:?} outside frame")));
            }
        }
        Ok(Self {
            dims,
            sources: vec![source],
            rects: vec![rects],
        })
    }

    pub fn dims(&self) -> VideoDims {
        self.dims
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn id(&self) -> usize {
        self.sources[0]
    }

    /// Rectangles of source `k` (in `sources()` order).
    pub fn source_rects(&self, k: usize) -> &[Option<Rect>] {
        &self.rects[k]
    }

    /// All rectangles present at frame `t`, in source order.
    pub fn frame_rects(&self, t: usize) -> impl Iterator<Item = Rect> + '_ {
        self.rects.iter().filter_map(move |r| r[t])
    }

    /// Occlusion bitmap of frame `t` (true = occluded), row-major H×W.
    pub fn occluded_frame(&self, t: usize) -> Vec<bool> {
        let (h, w) = (self.dims.height, self.dims.width);
        let mut out = vec![false; h * w];
        for r in self.frame_rects(t) {
            for row in r.top..r.bottom() {
                out[row * w + r.left..row * w + r.right()].fill(true);
            }
        }
        out
    }

    /// Sorted T·H·W position indices of occluded pixels.
    pub fn occluded_positions(&self) -> Vec<usize> {
        let hw = self.dims.frame_pixels();
        let mut out = Vec::new();
        for t in 0..self.dims.frames {
            out.extend(
                self.occluded_frame(t)
                    .iter()
                    .enumerate()
                    .filter(|(_, &o)| o)
                    .map(|(i, _)| t * hw + i),
            );
        }
        out
    }

    pub fn occluded_count(&self) -> usize {
        (0..self.dims.frames)
            .map(|t| self.occluded_frame(t).iter().filter(|&&o| o).count())
            .sum()
    }

    /// Dense T×H×W mask: 0 occluded, 1 kept.
    pub fn rasterize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.dims.positions());
        for t in 0..self.dims.frames {
            out.extend(self.occluded_frame(t).iter().map(|&o| u8::from(!o)));
        }
        out
    }

    /// Dense T×H×W×C mask, identical across channels.
    pub fn rasterize_channels(&self) -> Vec<u8> {
        let c = self.dims.channels;
        self.rasterize()
            .into_iter()
            .flat_map(|m| std::iter::repeat(m).take(c))
            .collect()
    }

    /// Rank-3 binary tensor for export.
    pub fn to_tensor(&self) -> RawTensor {
        let d = self.dims;
        RawTensor::new(
            vec![d.frames, d.height, d.width],
            self.rasterize().into_iter().map(f32::from).collect(),
        )
        .expect("mask dims are consistent")
    }

    /// Element-wise product with other masks: the union of all sources.
    pub fn product<'a>(&self, others: impl IntoIterator<Item = &'a SpatioTemporalMask>) -> Self {
        let mut out = self.clone();
        for m in others {
            assert_eq!(m.dims, self.dims, "mask dims differ");
            out.sources.extend_from_slice(&m.sources);
            out.rects.extend(m.rects.iter().cloned());
        }
        out
    }
}

/// Moving occlusion tube of one anchor: an `h x w` rectangle centered on the
/// rounded track position each frame it is alive, clipped to the frame.
pub fn build_mask(track: &AnchorTrack, cfg: &MaskConfig, dims: VideoDims) -> SpatioTemporalMask {
    let rects = (0..dims.frames)
        .map(|t| {
            track.position(t).and_then(|p| {
                let (r, c) = anchor_pixel(p);
                Rect::centered_clipped(r, c, cfg.occ_height, cfg.occ_width, dims.height, dims.width)
            })
        })
        .collect();
    SpatioTemporalMask {
        dims,
        sources: vec![track.id],
        rects: vec![rects],
    }
}

/// Cosine similarity of two vectors; 0 when either has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Co-occurrence of two tracks: cosine of their displacement vectors over
/// the common alive prefix. 0 when that prefix has no displacement.
pub fn co_occurrence(a: &AnchorTrack, b: &AnchorTrack) -> f64 {
    let va = a.displacement();
    let vb = b.displacement();
    let n = va.len().min(vb.len());
    if n < 2 {
        return 0.0;
    }
    cosine(&va[..n], &vb[..n])
}

/// Ids of the `k` tracks co-occurring most with track `i`; ties go to the
/// lower id. Scores are compared at 1e-12 resolution so rounding noise in
/// the cosine does not break ties.
pub fn top_partners(i: usize, tracks: &[AnchorTrack], k: usize) -> Vec<usize> {
    let mut scored: Vec<(i64, usize)> = tracks
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(j, t)| ((co_occurrence(&tracks[i], t) * 1e12).round() as i64, j))
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Integrated mask of anchor `i`: product of its mask with its `k` most
/// co-occurring partners' masks. `tracks[j]` and `masks[j]` belong to anchor `j`.
pub fn integrate_masks(
    i: usize,
    tracks: &[AnchorTrack],
    masks: &[SpatioTemporalMask],
    k: usize,
) -> SpatioTemporalMask {
    let partners = top_partners(i, tracks, k);
    masks[i].product(partners.iter().map(|&j| &masks[j]))
}

/// Per-pixel fill statistics for one anchor at one frame, indexed relative
/// to the unclipped `h x w` occlusion rectangle centered on the anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct FillDistribution {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Number of patches the statistics came from (0 for the scalar fallback).
    pub patches: usize,
}

impl FillDistribution {
    #[inline]
    pub fn index(&self, dr: usize, dc: usize, ch: usize) -> usize {
        (dr * self.width + dc) * self.channels + ch
    }
}

/// Top-left corners of the candidate patches for conditional fill around `center`.
///
/// Candidates are `h x w` patches lying fully inside both the frame and the
/// `window x window` square centered on `center`, containing `center`, and
/// different from the patch centered on it.
pub fn candidate_patches(
    center: (i64, i64),
    h: usize,
    w: usize,
    window: usize,
    frame_h: usize,
    frame_w: usize,
) -> Vec<(usize, usize)> {
    let (cr, cc) = center;
    let half = (window / 2) as i64;
    let (h, w) = (h as i64, w as i64);
    let win_r = ((cr - half).max(0), (cr - half + window as i64).min(frame_h as i64));
    let win_c = ((cc - half).max(0), (cc - half + window as i64).min(frame_w as i64));
    let own = (cr - h / 2, cc - w / 2);
    let mut out = Vec::new();
    for top in (cr - h + 1).max(win_r.0)..=cr.min(win_r.1 - h) {
        for left in (cc - w + 1).max(win_c.0)..=cc.min(win_c.1 - w) {
            if (top, left) != own {
                out.push((top as usize, left as usize));
            }
        }
    }
    out
}

/// Mean and variance of the patches around a track's position at frame `t`.
///
/// Falls back to per-channel scalar statistics over the window when fewer
/// than two candidate patches exist.
pub fn fill_distribution(
    video: &VideoTensor,
    track: &AnchorTrack,
    t: usize,
    cfg: &MaskConfig,
) -> Result<FillDistribution> {
    fill_distribution_with_window(video, track, t, cfg, FILL_WINDOW)
}

pub fn fill_distribution_with_window(
    video: &VideoTensor,
    track: &AnchorTrack,
    t: usize,
    cfg: &MaskConfig,
    window: usize,
) -> Result<FillDistribution> {
    let dims = video.dims();
    let p = track
        .position(t)
        .ok_or_else(|| Error::validation(format!("track {} not alive at frame {t}", track.id)))?;
    let center = anchor_pixel(p);
    let (h, w, c) = (cfg.occ_height, cfg.occ_width, dims.channels);
    let patches = candidate_patches(center, h, w, window, dims.height, dims.width);
    let n = h * w * c;

    if patches.len() < 2 {
        let half = (window / 2) as i64;
        let r0 = (center.0 - half).clamp(0, dims.height as i64) as usize;
        let r1 = (center.0 - half + window as i64).clamp(0, dims.height as i64) as usize;
        let c0 = (center.1 - half).clamp(0, dims.width as i64) as usize;
        let c1 = (center.1 - half + window as i64).clamp(0, dims.width as i64) as usize;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        let count = ((r1 - r0) * (c1 - c0)).max(1) as f64;
        for ch in 0..c {
            let vals = (r0..r1).flat_map(|r| (c0..c1).map(move |col| (r, col)));
            let s: f64 = vals.clone().map(|(r, col)| video.get(t, r, col, ch)).sum();
            let m = s / count;
            let v: f64 = vals.map(|(r, col)| (video.get(t, r, col, ch) - m).powi(2)).sum::<f64>() / count;
            mean[ch] = m;
            var[ch] = v;
        }
        return Ok(FillDistribution {
            height: h,
            width: w,
            channels: c,
            mean: (0..n).map(|i| mean[i % c]).collect(),
            variance: (0..n).map(|i| var[i % c]).collect(),
            patches: 0,
        });
    }

    let mut sum = vec![0.0; n];
    let mut sq = vec![0.0; n];
    for &(top, left) in &patches {
        for dr in 0..h {
            let base = dims.index(t, top + dr, left, 0);
            let row = &video.data()[base..base + w * c];
            let out = dr * w * c;
            for (k, &x) in row.iter().enumerate() {
                sum[out + k] += x;
                sq[out + k] += x * x;
            }
        }
    }
    let count = patches.len() as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let variance = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q / count - m * m).max(0.0))
        .collect();
    Ok(FillDistribution {
        height: h,
        width: w,
        channels: c,
        mean,
        variance,
        patches: patches.len(),
    })
}
