//! Map quality metrics: deletion/insertion AUC and the spatial pointing game.

use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ScoreMode, ScoreModel};
use crate::saliency::pipeline::{MapMetadata, SaliencyMap};
use crate::tensor_io::RawTensor;
use crate::video::{GroundTruthBoxes, Rect, VideoTensor};

/// Value deleted positions take (and insertion starts from), in model input space.
pub const BASELINE: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveMode {
    Deletion,
    Insertion,
}

impl fmt::Display for CurveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurveMode::Deletion => "deletion",
            CurveMode::Insertion => "insertion",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionInsertionResult {
    /// Class score after each step, `steps + 1` entries.
    pub curve: Vec<f64>,
    pub auc: f64,
    pub mode: CurveMode,
    pub steps: usize,
    pub baseline: f64,
}

impl DeletionInsertionResult {
    pub fn curve_tensor(&self) -> Result<RawTensor> {
        RawTensor::from_f64(vec![self.curve.len()], &self.curve)
    }
}

/// Positions ordered by descending saliency; ties by ascending index.
pub fn rank_positions(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Trapezoid rule over equally spaced points on [0, 1].
pub fn trapezoid_auc(curve: &[f64]) -> f64 {
    let steps = (curve.len() - 1) as f64;
    curve.windows(2).map(|w| (w[0] + w[1]) / 2.0).sum::<f64>() / steps
}

pub fn deletion_auc(
    video: &VideoTensor,
    map: &SaliencyMap,
    model: &dyn ScoreModel,
    class: usize,
    steps: usize,
) -> Result<DeletionInsertionResult> {
    curve(video, map, model, class, steps, CurveMode::Deletion)
}

pub fn insertion_auc(
    video: &VideoTensor,
    map: &SaliencyMap,
    model: &dyn ScoreModel,
    class: usize,
    steps: usize,
) -> Result<DeletionInsertionResult> {
    curve(video, map, model, class, steps, CurveMode::Insertion)
}

fn curve(
    video: &VideoTensor,
    map: &SaliencyMap,
    model: &dyn ScoreModel,
    class: usize,
    steps: usize,
    mode: CurveMode,
) -> Result<DeletionInsertionResult> {
    let dims = video.dims();
    if steps == 0 {
        return Err(Error::validation("steps must be >= 1"));
    }
    if !map.matches(dims) {
        return Err(Error::DimMismatch {
            expected: dims.to_string(),
            actual: format!("{}x{}x{}", map.frames, map.height, map.width),
        });
    }
    crate::model::check_class(model, class)?;
    let c = dims.channels;
    let order = rank_positions(&map.values);
    let batch = order.len().div_ceil(steps);
    let mut data = match mode {
        CurveMode::Deletion => video.data().to_vec(),
        CurveMode::Insertion => vec![BASELINE; dims.len()],
    };
    let score = |data: &[f64]| -> Result<f64> {
        Ok(model.forward(&VideoTensor::new(dims, data.to_vec())?)?[class])
    };
    let mut curve = vec![score(&data)?];
    for k in 0..steps {
        let lo = (k * batch).min(order.len());
        let hi = ((k + 1) * batch).min(order.len());
        for &p in &order[lo..hi] {
            for i in p * c..(p + 1) * c {
                data[i] = match mode {
                    CurveMode::Deletion => BASELINE,
                    CurveMode::Insertion => video.data()[i],
                };
            }
        }
        curve.push(score(&data)?);
    }
    Ok(DeletionInsertionResult {
        auc: trapezoid_auc(&curve),
        curve,
        mode,
        steps,
        baseline: BASELINE,
    })
}

/// First maximum in row-major order.
pub fn frame_argmax(frame: &[f64], width: usize) -> (usize, usize) {
    let mut best = 0;
    for (i, &v) in frame.iter().enumerate() {
        if v > frame[best] {
            best = i;
        }
    }
    (best / width, best % width)
}

/// Euclidean distance from a pixel to the nearest pixel of a box.
pub fn distance_to_box(row: usize, col: usize, b: &Rect) -> f64 {
    let gap = |x: usize, lo: usize, hi: usize| -> f64 {
        if x < lo {
            (lo - x) as f64
        } else if x >= hi {
            (x + 1 - hi) as f64
        } else {
            0.0
        }
    };
    gap(row, b.top, b.bottom()).hypot(gap(col, b.left, b.right()))
}

/// Whether the disc of `radius` around the frame's saliency peak meets the box.
pub fn spt_hit(frame: &[f64], width: usize, b: &Rect, radius: f64) -> bool {
    let (r, c) = frame_argmax(frame, width);
    distance_to_box(r, c, b) <= radius
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SptResult {
    /// Per frame; `None` where the frame has no box.
    pub hits: Vec<Option<bool>>,
    pub hit_rate: f64,
    pub radius: f64,
}

impl SptResult {
    pub fn hit_count(&self) -> usize {
        self.hits.iter().filter(|h| **h == Some(true)).count()
    }

    pub fn annotated(&self) -> usize {
        self.hits.iter().filter(|h| h.is_some()).count()
    }
}

/// Pointing game over one clip. `hit_rate` is NaN when no frame is annotated.
pub fn spt_video(map: &SaliencyMap, boxes: &GroundTruthBoxes, radius: f64) -> Result<SptResult> {
    if boxes.boxes.len() != map.frames || boxes.frame_height != map.height || boxes.frame_width != map.width {
        return Err(Error::DimMismatch {
            expected: format!("{}x{}x{}", map.frames, map.height, map.width),
            actual: format!("{}x{}x{}", boxes.boxes.len(), boxes.frame_height, boxes.frame_width),
        });
    }
    let hits: Vec<Option<bool>> = boxes
        .boxes
        .iter()
        .enumerate()
        .map(|(t, b)| b.map(|b| spt_hit(map.frame(t), map.width, &b, radius)))
        .collect();
    let mut out = SptResult {
        hits,
        hit_rate: f64::NAN,
        radius,
    };
    if out.annotated() > 0 {
        out.hit_rate = out.hit_count() as f64 / out.annotated() as f64;
    }
    Ok(out)
}

/// Hit rate pooled over all annotated frames of all clips.
pub fn spt_score(results: &[SptResult]) -> Result<f64> {
    let total: usize = results.iter().map(SptResult::annotated).sum();
    if total == 0 {
        return Err(Error::validation("no annotated frames"));
    }
    Ok(results.iter().map(SptResult::hit_count).sum::<usize>() as f64 / total as f64)
}

/// I.i.d. uniform [0, 1) map.
pub fn random_saliency(frames: usize, height: usize, width: usize, seed: u64) -> SaliencyMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SaliencyMap {
        frames,
        height,
        width,
        values: (0..frames * height * width).map(|_| rng.gen::<f64>()).collect(),
        meta: MapMetadata {
            method: "random".into(),
            spacing: 0,
            occ_height: 0,
            occ_width: 0,
            cuboid_t: None,
            integrate: 0,
            fill: "none".into(),
            score_mode: ScoreMode::Probability,
            class: 0,
            seed,
            forwards: 0,
            backwards: 0,
            model: "none".into(),
            masks: 0,
            normalize_coverage: false,
            base_score: 0.0,
        },
        records: Vec::new(),
    }
}

/// Paired sign test of "a > b".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// One-sided exact binomial p-value `P(X >= wins)`, `X ~ Bin(wins + losses, 1/2)`.
    pub p_value: f64,
}

pub fn sign_test(a: &[f64], b: &[f64]) -> SignTest {
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Greater) => wins += 1,
            Some(std::cmp::Ordering::Less) => losses += 1,
            _ => ties += 1,
        }
    }
    SignTest {
        wins,
        losses,
        ties,
        p_value: binomial_upper_tail(wins + losses, wins),
    }
}

/// `P(X >= k)` for `X ~ Bin(n, 1/2)`.
pub fn binomial_upper_tail(n: usize, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let ln_half_n = n as f64 * 0.5f64.ln();
    let mut ln_choose = 0.0;
    let mut total = 0.0;
    for j in 0..=n {
        if j > 0 {
            ln_choose += ((n - j + 1) as f64).ln() - (j as f64).ln();
        }
        if j >= k {
            total += (ln_choose + ln_half_n).exp();
        }
    }
    total.min(1.0)
}

/// One row of an evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub video: String,
    pub auc_del: f64,
    pub auc_ins: f64,
    /// Per-clip hit rate; NaN when the clip has no annotated frame.
    pub spt: f64,
}

fn mean_finite(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Per-method mean rows, methods in order of first appearance.
pub fn mean_rows(rows: &[EvalRow]) -> Vec<EvalRow> {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let sel = || rows.iter().filter(move |r| r.method == m);
            EvalRow {
                method: m.to_string(),
                video: "mean".into(),
                auc_del: mean_finite(sel().map(|r| r.auc_del)),
                auc_ins: mean_finite(sel().map(|r| r.auc_ins)),
                spt: mean_finite(sel().map(|r| r.spt)),
            }
        })
        .collect()
}

fn cell(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else {
        String::new()
    }
}

/// CSV with a header, the rows, then one mean row per method.
pub fn to_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("method,video,auc_del,auc_ins,spt\n");
    for r in rows.iter().chain(&mean_rows(rows)) {
        let _ = writeln!(out, "{},{},{},{},{}", r.method, r.video, cell(r.auc_del), cell(r.auc_ins), cell(r.spt));
    }
    out
}

/// Aligned plain-text version of [`to_csv`].
pub fn to_table(rows: &[EvalRow]) -> String {
    let means = mean_rows(rows);
    let all: Vec<&EvalRow> = rows.iter().chain(&means).collect();
    let mw = all.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
    let vw = all.iter().map(|r| r.video.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<mw$}  {:<vw$}  {:>9}  {:>9}  {:>9}\n", "method", "video", "AUC_del", "AUC_ins", "SPT");
    for (i, r) in all.iter().enumerate() {
        if i == rows.len() {
            out.push_str(&"-".repeat(mw + vw + 37));
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "{:<mw$}  {:<vw$}  {:>9}  {:>9}  {:>9}",
            r.method,
            r.video,
            cell(r.auc_del),
            cell(r.auc_ins),
            cell(r.spt)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConstantModel;
    use crate::video::VideoDims;

    fn map_of(values: Vec<f64>, t: usize, h: usize, w: usize) -> SaliencyMap {
        SaliencyMap {
            values,
            frames: t,
            height: h,
            width: w,
            ..random_saliency(t, h, w, 0)
        }
    }

    #[test]
    fn constant_model_curve_is_flat() {
        let dims = VideoDims::new(2, 4, 4, 3);
        let v = VideoTensor::filled(dims, 0.7).unwrap();
        let m = ConstantModel {
            scores: vec![0.25, 0.75],
            mode: ScoreMode::Probability,
        };
        let map = random_saliency(2, 4, 4, 1);
        for r in [
            deletion_auc(&v, &map, &m, 1, 28).unwrap(),
            insertion_auc(&v, &map, &m, 1, 28).unwrap(),
        ] {
            assert_eq!(r.curve.len(), 29);
            assert!(r.curve.iter().all(|&c| c == 0.75));
            assert!((r.auc - 0.75).abs() < 1e-15);
        }
    }

    #[test]
    fn ranking_ties_by_index() {
        assert_eq!(rank_positions(&[0.0, 2.0, 0.0, 2.0, 1.0]), vec![1, 3, 4, 0, 2]);
    }

    #[test]
    fn trapezoid() {
        assert_eq!(trapezoid_auc(&[1.0, 0.0]), 0.5);
        assert_eq!(trapezoid_auc(&[1.0, 1.0, 0.0, 0.0]), 0.5);
    }

    #[test]
    fn pointing_game_geometry() {
        let (h, w) = (64, 64);
        let mut frame = vec![0.0; h * w];
        frame[0] = 1.0;
        assert!(!spt_hit(&frame, w, &Rect::new(50, 0, 10, 10), 7.0));
        assert!(spt_hit(&frame, w, &Rect::new(0, 0, 1, 1), 0.0));
        // Peak at (10, 10); box starts 7 columns to the right.
        frame[0] = 0.0;
        frame[10 * w + 10] = 1.0;
        let b = Rect::new(5, 17, 10, 4);
        assert_eq!(distance_to_box(10, 10, &b), 7.0);
        assert!(spt_hit(&frame, w, &b, 7.0));
        assert!(!spt_hit(&frame, w, &b, 6.99));
        // Diagonal: box corner at (13, 14), offset (3, 4) -> distance 5.
        assert_eq!(distance_to_box(10, 10, &Rect::new(13, 14, 3, 3)), 5.0);
    }

    #[test]
    fn first_maximum_wins() {
        let frame = [0.0, 3.0, 1.0, 3.0];
        assert_eq!(frame_argmax(&frame, 2), (0, 1));
    }

    #[test]
    fn spt_pooling() {
        let map = map_of(vec![0.0; 2 * 4 * 4], 2, 4, 4);
        let boxes = GroundTruthBoxes::new(4, 4, vec![Some(Rect::new(0, 0, 1, 1)), Some(Rect::new(3, 3, 1, 1))]).unwrap();
        let r = spt_video(&map, &boxes, 1.0).unwrap();
        assert_eq!(r.hits, vec![Some(true), Some(false)]);
        assert_eq!(r.hit_rate, 0.5);
        let none = GroundTruthBoxes::new(4, 4, vec![None, None]).unwrap();
        let empty = spt_video(&map, &none, 1.0).unwrap();
        assert!(empty.hit_rate.is_nan());
        assert_eq!(spt_score(&[r.clone(), empty.clone()]).unwrap(), 0.5);
        assert!(spt_score(&[empty]).is_err());
    }

    #[test]
    fn random_map_properties() {
        let a = random_saliency(4, 50, 50, 3);
        assert_eq!(a, random_saliency(4, 50, 50, 3));
        assert!(a.values.iter().all(|&v| (0.0..1.0).contains(&v)));
        let mean = a.values.iter().sum::<f64>() / a.values.len() as f64;
        assert!((mean - 0.5).abs() < 0.01);
    }

    #[test]
    fn sign_test_p_values() {
        // 10 wins of 10: p = 2^-10.
        let s = sign_test(&[1.0; 10], &[0.0; 10]);
        assert!((s.p_value - 1.0 / 1024.0).abs() < 1e-15);
        // 2 of 3 with one tie: P(X >= 2 | n=3) = 4/8.
        let s = sign_test(&[1.0, 1.0, 0.0, 5.0], &[0.0, 0.0, 1.0, 5.0]);
        assert_eq!((s.wins, s.losses, s.ties), (2, 1, 1));
        assert!((s.p_value - 0.5).abs() < 1e-15);
        assert_eq!(sign_test(&[], &[]).p_value, 1.0);
    }

    #[test]
    fn csv_has_mean_rows() {
        let rows: Vec<EvalRow> = ["a", "b"]
            .iter()
            .flat_map(|m| {
                (0..3).map(move |i| EvalRow {
                    method: m.to_string(),
                    video: format!("v{i}"),
                    auc_del: i as f64,
                    auc_ins: 1.0,
                    spt: if i == 0 { f64::NAN } else { 0.5 },
                })
            })
            .collect();
        let csv = to_csv(&rows);
        assert_eq!(csv.lines().count(), 1 + 6 + 2);
        assert!(csv.contains("a,mean,1.000000,1.000000,0.500000"));
        assert_eq!(to_table(&rows).lines().count(), 1 + 6 + 1 + 2);
    }
}
