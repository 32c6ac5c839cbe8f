//! Moving-shape clips with ground-truth boxes.
//!
//! A single textured shape translates at constant velocity over a noise
//! background. The class label is the motion direction quantized to one of
//! eight 45° sectors, so a classifier has to look at motion to be right.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::{GroundTruthBoxes, Rect, VideoDims, VideoTensor};

pub const NUM_DIRECTIONS: usize = 8;

/// Shape pixel values are drawn from this range in noise mode.
const SHAPE_NOISE: (f64, f64) = (0.6, 1.0);
/// Background pixel values are drawn from this range.
const BACKGROUND_NOISE: (f64, f64) = (0.0, 0.4);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ShapeKind {
    Rectangle { height: usize, width: usize },
    Disc { radius: usize },
}

impl ShapeKind {
    fn extent(&self) -> (usize, usize) {
        match *self {
            ShapeKind::Rectangle { height, width } => (height, width),
            ShapeKind::Disc { radius } => (2 * radius + 1, 2 * radius + 1),
        }
    }

    fn covers(&self, dr: usize, dc: usize) -> bool {
        match *self {
            ShapeKind::Rectangle { height, width } => dr < height && dc < width,
            ShapeKind::Disc { radius } => {
                let r = radius as i64;
                let (y, x) = (dr as i64 - r, dc as i64 - r);
                y * y + x * x <= r * r
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Texture {
    /// One value per channel (gray videos use the first entry).
    Flat([f64; 3]),
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Background {
    Static,
    /// Background texture translates by this many pixels per frame, wrapping.
    Drifting { drow: i64, dcol: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub drow: f64,
    pub dcol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub shape: ShapeKind,
    /// Top-left corner of the shape's bounding square at frame 0.
    pub start_top: f64,
    pub start_left: f64,
    pub motion: Motion,
    pub texture: Texture,
    pub background: Background,
}

impl SyntheticSpec {
    pub fn dims(&self) -> VideoDims {
        VideoDims::new(self.frames, self.height, self.width, self.channels)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims().validate()?;
        let (sh, sw) = self.shape.extent();
        if sh == 0 || sw == 0 {
            return Err(Error::validation("shape must be at least 1x1"));
        }
        if !self.motion.drow.is_finite()
            || !self.motion.dcol.is_finite()
            || (self.motion.drow == 0.0 && self.motion.dcol == 0.0)
        {
            return Err(Error::validation(
                "motion must be finite and non-zero to define a direction class",
            ));
        }
        if !self.start_top.is_finite() || !self.start_left.is_finite() {
            return Err(Error::validation("start position must be finite"));
        }
        if (0..self.frames).all(|t| self.shape_rect(t).is_none()) {
            return Err(Error::validation("shape is never on screen"));
        }
        Ok(())
    }

    /// Unclipped top-left corner at frame `t`, rounded half-up.
    pub fn corner(&self, t: usize) -> (i64, i64) {
        let t = t as f64;
        (
            round_half_up(self.start_top + self.motion.drow * t),
            round_half_up(self.start_left + self.motion.dcol * t),
        )
    }

    fn shape_rect(&self, t: usize) -> Option<Rect> {
        let (top, left) = self.corner(t);
        let (sh, sw) = self.shape.extent();
        Rect::clipped(top, left, sh, sw, self.height, self.width)
    }

    pub fn class(&self) -> usize {
        direction_class(self.motion.drow, self.motion.dcol)
    }
}

pub fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Direction sector of a motion vector: 0 = +col (right), 2 = +row (down),
/// increasing clockwise in image coordinates.
pub fn direction_class(drow: f64, dcol: f64) -> usize {
    let angle = drow.atan2(dcol);
    let sector = (angle / std::f64::consts::FRAC_PI_4).round() as i64;
    sector.rem_euclid(NUM_DIRECTIONS as i64) as usize
}

/// Axis-aligned or diagonal velocity with component magnitude `speed` for a class.
pub fn direction_motion(class: usize, speed: f64) -> Motion {
    const STEPS: [(f64, f64); NUM_DIRECTIONS] = [
        (0.0, 1.0),
        (1.0, 1.0),
        (1.0, 0.0),
        (1.0, -1.0),
        (0.0, -1.0),
        (-1.0, -1.0),
        (-1.0, 0.0),
        (-1.0, 1.0),
    ];
    let (r, c) = STEPS[class % NUM_DIRECTIONS];
    Motion {
        drow: r * speed,
        dcol: c * speed,
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub video: VideoTensor,
    pub boxes: GroundTruthBoxes,
    pub class: usize,
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticSample> {
    spec.validate()?;
    let dims = spec.dims();
    let c = dims.channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let bg: Vec<f64> = (0..dims.frame_pixels() * c)
        .map(|_| rng.gen_range(BACKGROUND_NOISE.0..BACKGROUND_NOISE.1))
        .collect();
    let (sh, sw) = spec.shape.extent();
    let shape_tex: Vec<f64> = match spec.texture {
        Texture::Noise => (0..sh * sw * c)
            .map(|_| rng.gen_range(SHAPE_NOISE.0..SHAPE_NOISE.1))
            .collect(),
        Texture::Flat(color) => (0..sh * sw * c).map(|i| color[i % c]).collect(),
    };

    let (h, w) = (dims.height as i64, dims.width as i64);
    let mut data = vec![0.0; dims.len()];
    let mut boxes = Vec::with_capacity(dims.frames);
    for t in 0..dims.frames {
        let (shift_r, shift_c) = match spec.background {
            Background::Static => (0, 0),
            Background::Drifting { drow, dcol } => (drow * t as i64, dcol * t as i64),
        };
        for row in 0..dims.height {
            for col in 0..dims.width {
                let sr = (row as i64 - shift_r).rem_euclid(h) as usize;
                let sc = (col as i64 - shift_c).rem_euclid(w) as usize;
                let src = (sr * dims.width + sc) * c;
                let dst = dims.index(t, row, col, 0);
                data[dst..dst + c].copy_from_slice(&bg[src..src + c]);
            }
        }

        let (top, left) = spec.corner(t);
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for dr in 0..sh {
            for dc in 0..sw {
                let (row, col) = (top + dr as i64, left + dc as i64);
                if row < 0 || row >= h || col < 0 || col >= w || !spec.shape.covers(dr, dc) {
                    continue;
                }
                let (row, col) = (row as usize, col as usize);
                let src = (dr * sw + dc) * c;
                let dst = dims.index(t, row, col, 0);
                data[dst..dst + c].copy_from_slice(&shape_tex[src..src + c]);
                bbox = Some(match bbox {
                    None => (row, col, row, col),
                    Some((r0, c0, r1, c1)) => (r0.min(row), c0.min(col), r1.max(row), c1.max(col)),
                });
            }
        }
        boxes.push(bbox.map(|(r0, c0, r1, c1)| Rect::new(r0, c0, r1 - r0 + 1, c1 - c0 + 1)));
    }

    Ok(SyntheticSample {
        video: VideoTensor::new(dims, data)?,
        boxes: GroundTruthBoxes::new(dims.height, dims.width, boxes)?,
        class: spec.class(),
    })
}

/// Randomized clip of a given direction class: a noise-textured square of
/// side ~H/4 moving at `speed` px/frame, placed so that it stays on screen
/// for the whole clip when the geometry allows it.
pub fn random_spec(
    class: usize,
    frames: usize,
    height: usize,
    width: usize,
    speed: f64,
    rng: &mut impl Rng,
) -> SyntheticSpec {
    let side = (height.min(width) / 4).max(2);
    let motion = direction_motion(class, speed);
    let travel = speed * (frames.saturating_sub(1)) as f64;
    let pick = |rng: &mut dyn rand::RngCore, extent: usize, d: f64| -> f64 {
        let free = extent as f64 - side as f64;
        let (lo, hi) = if d > 0.0 {
            (0.0, free - travel)
        } else if d < 0.0 {
            (travel, free)
        } else {
            (0.0, free)
        };
        if hi <= lo {
            (free / 2.0).max(0.0).floor()
        } else {
            rng.gen_range(lo..=hi).floor()
        }
    };
    let start_top = pick(rng, height, motion.drow);
    let start_left = pick(rng, width, motion.dcol);
    SyntheticSpec {
        frames,
        height,
        width,
        channels: 3,
        shape: ShapeKind::Rectangle {
            height: side,
            width: side,
        },
        start_top,
        start_left,
        motion,
        texture: Texture::Noise,
        background: Background::Static,
    }
}

/// Balanced dataset: `per_class` clips for each of the eight directions,
/// interleaved by class.
pub fn direction_dataset(
    per_class: usize,
    frames: usize,
    height: usize,
    width: usize,
    speed: f64,
    seed: u64,
) -> Result<Vec<SyntheticSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * NUM_DIRECTIONS);
    for _ in 0..per_class {
        for class in 0..NUM_DIRECTIONS {
            let spec = random_spec(class, frames, height, width, speed, &mut rng);
            let clip_seed = rng.gen::<u64>();
            out.push(generate_synthetic(&spec, clip_seed)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_spec(start_left: f64, dcol: f64) -> SyntheticSpec {
        SyntheticSpec {
            frames: 16,
            height: 112,
            width: 112,
            channels: 3,
            shape: ShapeKind::Rectangle {
                height: 16,
                width: 16,
            },
            start_top: 48.0,
            start_left,
            motion: Motion { drow: 0.0, dcol },
            texture: Texture::Flat([1.0, 1.0, 1.0]),
            background: Background::Static,
        }
    }

    #[test]
    fn prescribed_motion_moves_box() {
        let s = generate_synthetic(&square_spec(8.0, 2.0), 3).unwrap();
        for t in 0..16 {
            assert_eq!(s.boxes.boxes[t], Some(Rect::new(48, 8 + 2 * t, 16, 16)));
        }
        assert_eq!(s.class, 0);
    }

    #[test]
    fn deterministic_for_seed() {
        let spec = square_spec(8.0, 2.0);
        let a = generate_synthetic(&spec, 11).unwrap();
        let b = generate_synthetic(&spec, 11).unwrap();
        let bits = |v: &VideoTensor| v.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.video), bits(&b.video));
        let c = generate_synthetic(&spec, 12).unwrap();
        assert_ne!(bits(&a.video), bits(&c.video));
    }

    #[test]
    fn exit_frame_matches_geometry() {
        // left edge at 80 + 8t reaches the 112-pixel border when 80 + 8t >= 112.
        let exit = (0..).find(|t| 80 + 8 * t >= 112).unwrap();
        assert_eq!(exit, 4);
        let s = generate_synthetic(&square_spec(80.0, 8.0), 0).unwrap();
        for t in 0..16 {
            assert_eq!(s.boxes.boxes[t].is_some(), t < exit, "frame {t}");
        }
        assert_eq!(s.boxes.boxes[3], Some(Rect::new(48, 104, 16, 8)));
    }

    #[test]
    fn boxes_match_pixel_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for class in 0..NUM_DIRECTIONS {
            let mut spec = random_spec(class, 8, 40, 40, 3.0, &mut rng);
            if class % 2 == 0 {
                spec.shape = ShapeKind::Disc { radius: 5 };
                spec.background = Background::Drifting { drow: 1, dcol: -2 };
            }
            let s = generate_synthetic(&spec, class as u64).unwrap();
            for t in 0..spec.frames {
                let lum = s.video.luminance(t);
                let mut bbox: Option<(usize, usize, usize, usize)> = None;
                for r in 0..40 {
                    for c in 0..40 {
                        if lum[r * 40 + c] >= SHAPE_NOISE.0 {
                            bbox = Some(match bbox {
                                None => (r, c, r, c),
                                Some((r0, c0, r1, c1)) => (r0.min(r), c0.min(c), r1.max(r), c1.max(c)),
                            });
                        }
                    }
                }
                let scanned = bbox.map(|(r0, c0, r1, c1)| Rect::new(r0, c0, r1 - r0 + 1, c1 - c0 + 1));
                assert_eq!(scanned, s.boxes.boxes[t], "class {class} frame {t}");
            }
            assert_eq!(s.class, class);
        }
    }

    #[test]
    fn invalid_specs() {
        let mut spec = square_spec(8.0, 2.0);
        spec.frames = 1;
        assert!(generate_synthetic(&spec, 0).is_err());
        let mut spec = square_spec(8.0, 0.0);
        spec.motion.dcol = 0.0;
        assert!(generate_synthetic(&spec, 0).is_err());
        let spec = square_spec(500.0, 2.0);
        assert!(generate_synthetic(&spec, 0).is_err());
    }

    #[test]
    fn direction_classes_round_trip() {
        for class in 0..NUM_DIRECTIONS {
            let m = direction_motion(class, 2.0);
            assert_eq!(direction_class(m.drow, m.dcol), class);
        }
    }

    #[test]
    fn dataset_is_balanced() {
        let ds = direction_dataset(2, 4, 16, 16, 1.0, 9).unwrap();
        assert_eq!(ds.len(), 16);
        for class in 0..NUM_DIRECTIONS {
            assert_eq!(ds.iter().filter(|s| s.class == class).count(), 2);
        }
    }
}
