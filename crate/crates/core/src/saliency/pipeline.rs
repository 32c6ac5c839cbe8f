//! Map construction: masks -> per-mask scores -> weighted mask sum.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::iqr::iqr_outliers;
use super::occlusion::{approx_score, expected_score, FillTable, Occlusion};
use crate::error::{Error, Result};
use crate::flow::{track_anchors, AnchorTrack, FlowParams};
use crate::mask::{build_mask, integrate_masks, place_anchor_grid, MaskConfig, SpatioTemporalMask};
use crate::model::{argmax, check_class, check_input, Counted, ScoreMode, ScoreModel};
use crate::tensor_io::{write_atomic, RawTensor};
use crate::video::{Rect, VideoDims, VideoTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Method {
    /// One forward per mask.
    #[default]
    Exact,
    /// First-order estimate from the input gradient.
    Approx,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Exact => "exact",
            Method::Approx => "approx",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Method::Exact),
            "approx" => Ok(Method::Approx),
            other => Err(Error::validation(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FillMode {
    /// Occluded elements set to a value in model input space.
    Constant(f64),
    /// Draws from per-pixel normals estimated around each anchor.
    Conditional,
}

impl Default for FillMode {
    fn default() -> Self {
        FillMode::Constant(0.0)
    }
}

impl fmt::Display for FillMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FillMode::Constant(v) => write!(f, "const:{v}"),
            FillMode::Conditional => f.write_str("cond"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Target {
    /// Argmax of the model on the unoccluded input.
    #[default]
    Predicted,
    Class(usize),
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "argmax" {
            return Ok(Target::Predicted);
        }
        s.parse()
            .map(Target::Class)
            .map_err(|_| Error::validation(format!("class must be an integer or 'argmax', got {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyConfig {
    pub method: Method,
    pub fill: FillMode,
    pub mask: MaskConfig,
    pub flow: FlowParams,
    pub target: Target,
    /// Divide each pixel by the fraction of masks leaving it visible.
    pub normalize_coverage: bool,
    /// Monte Carlo samples per mask for exact conditional fill.
    pub mc_samples: usize,
    pub seed: u64,
    /// IQR re-linearization in approx mode.
    pub adjust: bool,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        Self {
            method: Method::Exact,
            fill: FillMode::default(),
            mask: MaskConfig::default(),
            flow: FlowParams::default(),
            target: Target::Predicted,
            normalize_coverage: false,
            mc_samples: 8,
            seed: 0,
            adjust: true,
        }
    }
}

impl SaliencyConfig {
    pub fn validate(&self) -> Result<()> {
        if let FillMode::Constant(v) = self.fill {
            if !v.is_finite() {
                return Err(Error::validation("fill value must be finite"));
            }
        }
        if self.mc_samples == 0 {
            return Err(Error::validation("Monte Carlo sample count must be >= 1"));
        }
        self.flow.validate()
    }
}

/// Per-mask score and its difference from the unoccluded score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskScoreRecord {
    pub mask_id: usize,
    /// `f(g(x))`, exact or approximated.
    pub score: f64,
    /// `f(x) - score`.
    pub difference: f64,
    pub adjusted: bool,
}

/// Provenance written next to a saved map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMetadata {
    pub method: String,
    /// Anchor spacing, or spatial stride for cuboids.
    pub spacing: usize,
    pub occ_height: usize,
    pub occ_width: usize,
    /// Temporal extent and stride of cuboids; absent for flow masks.
    pub cuboid_t: Option<(usize, usize)>,
    pub integrate: usize,
    pub fill: String,
    pub score_mode: ScoreMode,
    pub class: usize,
    pub seed: u64,
    pub forwards: u64,
    pub backwards: u64,
    pub model: String,
    pub masks: usize,
    pub normalize_coverage: bool,
    pub base_score: f64,
}

impl MapMetadata {
    pub fn to_sidecar(&self) -> String {
        let mut lines = vec![
            ("method", self.method.clone()),
            ("s", self.spacing.to_string()),
            ("h", self.occ_height.to_string()),
            ("w", self.occ_width.to_string()),
        ];
        if let Some((t, st)) = self.cuboid_t {
            lines.push(("occ_t", t.to_string()));
            lines.push(("stride_t", st.to_string()));
        }
        lines.extend([
            ("K", self.integrate.to_string()),
            ("fill", self.fill.clone()),
            ("score_mode", self.score_mode.to_string()),
            ("class", self.class.to_string()),
            ("seed", self.seed.to_string()),
            ("forwards", self.forwards.to_string()),
            ("backwards", self.backwards.to_string()),
            ("model", self.model.clone()),
            ("masks", self.masks.to_string()),
            ("normalize_coverage", self.normalize_coverage.to_string()),
            ("base_score", format!("{:?}", self.base_score)),
        ]);
        lines.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse_sidecar(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad metadata line {line:?}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| kv.get(k).cloned().ok_or_else(|| Error::Format(format!("metadata lacks {k}")));
        fn num<T: FromStr>(k: &str, v: String) -> Result<T> {
            v.parse().map_err(|_| Error::Format(format!("metadata {k}={v} is not a number")))
        }
        let cuboid_t = match (kv.get("occ_t"), kv.get("stride_t")) {
            (Some(t), Some(st)) => Some((num("occ_t", t.clone())?, num("stride_t", st.clone())?)),
            _ => None,
        };
        Ok(Self {
            method: get("method")?,
            spacing: num("s", get("s")?)?,
            occ_height: num("h", get("h")?)?,
            occ_width: num("w", get("w")?)?,
            cuboid_t,
            integrate: num("K", get("K")?)?,
            fill: get("fill")?,
            score_mode: get("score_mode")?.parse()?,
            class: num("class", get("class")?)?,
            seed: num("seed", get("seed")?)?,
            forwards: num("forwards", get("forwards")?)?,
            backwards: num("backwards", get("backwards")?)?,
            model: get("model")?,
            masks: num("masks", get("masks")?)?,
            normalize_coverage: num("normalize_coverage", get("normalize_coverage")?)?,
            base_score: num("base_score", get("base_score")?)?,
        })
    }
}

/// `T x H x W` importance volume.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub meta: MapMetadata,
    /// Per-mask scores in mask order; empty for loaded or random maps.
    pub records: Vec<MaskScoreRecord>,
}

impl SaliencyMap {
    pub fn frame(&self, t: usize) -> &[f64] {
        let hw = self.height * self.width;
        &self.values[t * hw..(t + 1) * hw]
    }

    pub fn matches(&self, dims: VideoDims) -> bool {
        (self.frames, self.height, self.width) == (dims.frames, dims.height, dims.width)
    }

    pub fn to_tensor(&self) -> Result<RawTensor> {
        RawTensor::from_f64(vec![self.frames, self.height, self.width], &self.values)
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".meta");
        PathBuf::from(s)
    }

    /// Writes the rank-3 tensor and its `.meta` sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_tensor()?.save(path)?;
        write_atomic(&Self::sidecar_path(path), self.meta.to_sidecar().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let t = RawTensor::load(path)?;
        if t.rank() != 3 {
            return Err(Error::Format(format!("saliency map must be rank 3, got rank {}", t.rank())));
        }
        let meta = MapMetadata::parse_sidecar(&std::fs::read_to_string(Self::sidecar_path(path))?)?;
        Ok(Self {
            frames: t.dims[0],
            height: t.dims[1],
            width: t.dims[2],
            values: t.to_f64(),
            meta,
            records: Vec::new(),
        })
    }
}

/// Tracks the anchor grid through the clip.
pub fn compute_tracks(video: &VideoTensor, cfg: &SaliencyConfig) -> Result<Vec<AnchorTrack>> {
    let d = video.dims();
    cfg.mask.validate(d.height, d.width)?;
    let anchors = place_anchor_grid(d.height, d.width, cfg.mask.spacing)?;
    track_anchors(video, &anchors, &cfg.flow)
}

/// Integrated mask `Ω̂_i` for every anchor, in anchor order.
pub fn build_integrated_masks(tracks: &[AnchorTrack], cfg: &MaskConfig, dims: VideoDims) -> Vec<SpatioTemporalMask> {
    let singles: Vec<SpatioTemporalMask> = tracks.iter().map(|t| build_mask(t, cfg, dims)).collect();
    if cfg.integrate == 0 {
        return singles;
    }
    (0..tracks.len())
        .into_par_iter()
        .map(|i| integrate_masks(i, tracks, &singles, cfg.integrate))
        .collect()
}

/// Where occluded values come from.
#[derive(Clone, Copy)]
pub enum FillSource<'a> {
    Constant(f64),
    Conditional(&'a FillTable),
}

impl FillSource<'_> {
    pub fn occlusion(&self, mask: &SpatioTemporalMask) -> Result<Occlusion> {
        match self {
            FillSource::Constant(v) => Ok(Occlusion::constant(mask, *v)),
            FillSource::Conditional(table) => Occlusion::conditional(mask, table),
        }
    }
}

/// Flow-adaptive map, exact or approximated per `cfg.method`.
pub fn explain(video: &VideoTensor, model: &dyn ScoreModel, cfg: &SaliencyConfig) -> Result<SaliencyMap> {
    cfg.validate()?;
    check_input(model, video)?;
    let tracks = compute_tracks(video, cfg)?;
    explain_with_tracks(video, model, cfg, &tracks)
}

/// Exact flow-adaptive map regardless of `cfg.method`.
pub fn aosa_map(video: &VideoTensor, model: &dyn ScoreModel, cfg: &SaliencyConfig) -> Result<SaliencyMap> {
    explain(video, model, &SaliencyConfig { method: Method::Exact, ..cfg.clone() })
}

/// Approximated flow-adaptive map regardless of `cfg.method`.
pub fn approx_map(video: &VideoTensor, model: &dyn ScoreModel, cfg: &SaliencyConfig) -> Result<SaliencyMap> {
    explain(video, model, &SaliencyConfig { method: Method::Approx, ..cfg.clone() })
}

/// [`explain`] with precomputed tracks (e.g. from an imported dense flow).
pub fn explain_with_tracks(
    video: &VideoTensor,
    model: &dyn ScoreModel,
    cfg: &SaliencyConfig,
    tracks: &[AnchorTrack],
) -> Result<SaliencyMap> {
    cfg.validate()?;
    let dims = video.dims();
    cfg.mask.validate(dims.height, dims.width)?;
    let masks = build_integrated_masks(tracks, &cfg.mask, dims);
    let table;
    let fill = match cfg.fill {
        FillMode::Constant(v) => FillSource::Constant(v),
        FillMode::Conditional => {
            table = FillTable::estimate(video, tracks, &cfg.mask)?;
            FillSource::Conditional(&table)
        }
    };
    let mut map = occlusion_map(video, model, &masks, fill, cfg)?;
    map.meta.method = cfg.method.to_string();
    map.meta.spacing = cfg.mask.spacing;
    map.meta.occ_height = cfg.mask.occ_height;
    map.meta.occ_width = cfg.mask.occ_width;
    map.meta.integrate = cfg.mask.integrate;
    Ok(map)
}

/// Scores arbitrary masks and aggregates them. Geometry fields of the
/// returned metadata are left for the caller.
pub fn occlusion_map(
    video: &VideoTensor,
    model: &dyn ScoreModel,
    masks: &[SpatioTemporalMask],
    fill: FillSource<'_>,
    cfg: &SaliencyConfig,
) -> Result<SaliencyMap> {
    cfg.validate()?;
    check_input(model, video)?;
    if masks.is_empty() {
        return Err(Error::validation("no masks to score"));
    }
    let dims = video.dims();
    if let Some(m) = masks.iter().find(|m| m.dims() != dims) {
        return Err(Error::DimMismatch {
            expected: dims.to_string(),
            actual: m.dims().to_string(),
        });
    }
    let counted = Counted::new(model);
    let base = counted.forward(video)?;
    let class = match cfg.target {
        Target::Predicted => argmax(&base),
        Target::Class(c) => {
            check_class(model, c)?;
            c
        }
    };
    let f_x = base[class];

    let scores: Vec<f64> = match cfg.method {
        Method::Exact => masks
            .par_iter()
            .map(|m| {
                let occ = fill.occlusion(m)?;
                expected_score(&counted, video, &occ, class, cfg.mc_samples, cfg.seed, m.id() as u64).map(|r| r.0)
            })
            .collect::<Result<_>>()?,
        Method::Approx => {
            let grad = counted.gradient(video, class)?;
            masks
                .par_iter()
                .map(|m| Ok(approx_score(f_x, &grad, video, &fill.occlusion(m)?)))
                .collect::<Result<_>>()?
        }
    };
    let mut records: Vec<MaskScoreRecord> = masks
        .iter()
        .zip(&scores)
        .map(|(m, &score)| MaskScoreRecord {
            mask_id: m.id(),
            score,
            difference: f_x - score,
            adjusted: false,
        })
        .collect();
    if cfg.method == Method::Approx && cfg.adjust {
        adjust_importances(&mut records, &counted, video, masks, fill, class, f_x)?;
    }
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    let values = aggregate(dims, masks, &scores, cfg.normalize_coverage);

    Ok(SaliencyMap {
        frames: dims.frames,
        height: dims.height,
        width: dims.width,
        values,
        meta: MapMetadata {
            method: cfg.method.to_string(),
            spacing: 0,
            occ_height: 0,
            occ_width: 0,
            cuboid_t: None,
            integrate: 0,
            fill: fill_label(cfg, fill),
            score_mode: model.score_mode(),
            class,
            seed: cfg.seed,
            forwards: counted.counter().forwards(),
            backwards: counted.counter().backwards(),
            model: model.name(),
            masks: masks.len(),
            normalize_coverage: cfg.normalize_coverage,
            base_score: f_x,
        },
        records,
    })
}

fn fill_label(cfg: &SaliencyConfig, fill: FillSource<'_>) -> String {
    match (fill, cfg.method) {
        (FillSource::Constant(v), _) => FillMode::Constant(v).to_string(),
        (FillSource::Conditional(_), Method::Exact) => format!("cond:mc{}", cfg.mc_samples),
        (FillSource::Conditional(_), Method::Approx) => "cond".into(),
    }
}

/// Re-linearizes outlying approximated scores at the extreme occluded inputs.
///
/// Records whose difference lies above `Q3 + 1.5 IQR` are re-estimated
/// around the occluded input of the largest difference; those below
/// `Q1 - 1.5 IQR` around that of the smallest. Costs one forward and one
/// gradient per side that has outliers.
pub fn adjust_importances(
    records: &mut [MaskScoreRecord],
    model: &dyn ScoreModel,
    video: &VideoTensor,
    masks: &[SpatioTemporalMask],
    fill: FillSource<'_>,
    class: usize,
    f_x: f64,
) -> Result<()> {
    let diffs: Vec<f64> = records.iter().map(|r| r.difference).collect();
    let (low, high) = iqr_outliers(&diffs);
    for (flagged, pick_max) in [(high, true), (low, false)] {
        if flagged.is_empty() {
            continue;
        }
        // Extreme over all records; ties go to the first.
        let mut star = 0;
        for i in 1..diffs.len() {
            if (pick_max && diffs[i] > diffs[star]) || (!pick_max && diffs[i] < diffs[star]) {
                star = i;
            }
        }
        let occ_star = fill.occlusion(&masks[star])?;
        let x_star = occ_star.apply(video);
        let f_star = model.forward(&x_star)?[class];
        let grad_star = model.gradient(&x_star, class)?;
        let offset = occ_star.delta_dot(&grad_star, video);
        let updates: Vec<(usize, f64)> = flagged
            .par_iter()
            .map(|&i| {
                let occ = fill.occlusion(&masks[i])?;
                Ok((i, f_star + occ.delta_dot(&grad_star, video) - offset))
            })
            .collect::<Result<_>>()?;
        for (i, score) in updates {
            records[i].score = score;
            records[i].difference = f_x - score;
            records[i].adjusted = true;
        }
    }
    Ok(())
}

/// `S = (1/N) Σ score_i · Ω̂_i`, or the coverage-normalized variant that
/// divides each pixel by the fraction of masks leaving it visible.
pub fn aggregate(dims: VideoDims, masks: &[SpatioTemporalMask], scores: &[f64], normalize_coverage: bool) -> Vec<f64> {
    let mut acc = vec![0.0; dims.positions()];
    let mut visible = vec![0u32; dims.positions()];
    for (m, &s) in masks.iter().zip(scores) {
        for (p, keep) in m.rasterize().into_iter().enumerate() {
            if keep == 1 {
                acc[p] += s;
                visible[p] += 1;
            }
        }
    }
    let n = masks.len() as f64;
    if normalize_coverage {
        acc.iter()
            .zip(&visible)
            .map(|(&a, &v)| if v == 0 { 0.0 } else { a / v as f64 })
            .collect()
    } else {
        acc.into_iter().map(|a| a / n).collect()
    }
}

/// Fixed-cuboid baseline geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CuboidConfig {
    pub occ_t: usize,
    pub occ_h: usize,
    pub occ_w: usize,
    pub stride_t: usize,
    pub stride_s: usize,
}

impl Default for CuboidConfig {
    fn default() -> Self {
        Self {
            occ_t: 8,
            occ_h: 16,
            occ_w: 16,
            stride_t: 2,
            stride_s: 8,
        }
    }
}

/// Cuboids on a regular grid: temporal starts `0, st, ...` while the cuboid
/// fits, spatial centers on the cell-centered grid of spacing `ss`, clipped.
/// Ordered by time, then row, then column.
pub fn cuboid_masks(dims: VideoDims, cfg: &CuboidConfig) -> Result<Vec<SpatioTemporalMask>> {
    if cfg.occ_t < 1 || cfg.occ_t > dims.frames || cfg.stride_t < 1 {
        return Err(Error::validation(format!(
            "cuboid depth {} / stride {} invalid for {} frames",
            cfg.occ_t, cfg.stride_t, dims.frames
        )));
    }
    MaskConfig {
        spacing: cfg.stride_s,
        occ_height: cfg.occ_h,
        occ_width: cfg.occ_w,
        integrate: 0,
    }
    .validate(dims.height, dims.width)?;
    let centers = place_anchor_grid(dims.height, dims.width, cfg.stride_s)?;
    let mut out = Vec::new();
    for t0 in (0..=dims.frames - cfg.occ_t).step_by(cfg.stride_t) {
        for c in &centers {
            let rect = Rect::centered_clipped(c[0] as i64, c[1] as i64, cfg.occ_h, cfg.occ_w, dims.height, dims.width);
            let rects = (0..dims.frames)
                .map(|t| if (t0..t0 + cfg.occ_t).contains(&t) { rect } else { None })
                .collect();
            out.push(SpatioTemporalMask::from_rects(dims, out.len(), rects)?);
        }
    }
    Ok(out)
}

/// Naive 3D occlusion baseline with the same aggregation as [`explain`].
/// Only constant fill applies; `cfg.mask` and `cfg.flow` are ignored.
pub fn cuboid_osa_map(
    video: &VideoTensor,
    model: &dyn ScoreModel,
    cuboid: &CuboidConfig,
    cfg: &SaliencyConfig,
) -> Result<SaliencyMap> {
    let FillMode::Constant(v) = cfg.fill else {
        return Err(Error::validation("cuboid occlusion supports constant fill only"));
    };
    let masks = cuboid_masks(video.dims(), cuboid)?;
    let mut map = occlusion_map(video, model, &masks, FillSource::Constant(v), cfg)?;
    map.meta.method = format!("cuboid-{}", cfg.method);
    map.meta.spacing = cuboid.stride_s;
    map.meta.occ_height = cuboid.occ_h;
    map.meta.occ_width = cuboid.occ_w;
    map.meta.cuboid_t = Some((cuboid.occ_t, cuboid.stride_t));
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AffineModel, ConstantModel};

    fn ramp(dims: VideoDims) -> VideoTensor {
        let data = (0..dims.len()).map(|i| ((i * 7) % 23) as f64 / 23.0).collect();
        VideoTensor::new(dims, data).unwrap()
    }

    fn constant(c: f64) -> ConstantModel {
        ConstantModel {
            scores: vec![c, 1.0 - c],
            mode: ScoreMode::Probability,
        }
    }

    #[test]
    fn full_size_cuboid_grid_has_980_positions() {
        let masks = cuboid_masks(VideoDims::new(16, 112, 112, 3), &CuboidConfig::default()).unwrap();
        assert_eq!(masks.len(), 5 * 14 * 14);
        assert_eq!(masks[0].source_rects(0)[0], Some(Rect::new(0, 0, 12, 12)));
        assert_eq!(masks[14 * 14].source_rects(0)[2], Some(Rect::new(0, 0, 12, 12)));
        assert_eq!(masks[14 * 14].source_rects(0)[1], None);
    }

    #[test]
    fn single_mask_map() {
        let dims = VideoDims::new(2, 8, 8, 1);
        let mask = SpatioTemporalMask::from_rects(dims, 0, vec![Some(Rect::new(2, 2, 3, 3)); 2]).unwrap();
        let map = occlusion_map(&ramp(dims), &constant(0.4), &[mask.clone()], FillSource::Constant(0.0), &SaliencyConfig::default()).unwrap();
        // Predicted class is 1 (score 0.6).
        assert_eq!(map.meta.class, 1);
        for (p, keep) in mask.rasterize().into_iter().enumerate() {
            assert_eq!(map.values[p], if keep == 1 { 0.6 } else { 0.0 });
        }
        assert_eq!((map.meta.forwards, map.meta.backwards), (2, 0));
    }

    #[test]
    fn constant_model_weights_by_visible_fraction() {
        let dims = VideoDims::new(2, 16, 16, 3);
        let cfg = SaliencyConfig {
            target: Target::Class(0),
            mask: MaskConfig {
                spacing: 8,
                occ_height: 8,
                occ_width: 8,
                integrate: 1,
            },
            ..SaliencyConfig::default()
        };
        let x = ramp(dims);
        let tracks = compute_tracks(&x, &cfg).unwrap();
        let map = explain_with_tracks(&x, &constant(0.3), &cfg, &tracks).unwrap();
        let masks = build_integrated_masks(&tracks, &cfg.mask, dims);
        let rasters: Vec<Vec<u8>> = masks.iter().map(|m| m.rasterize()).collect();
        for p in 0..dims.positions() {
            let visible = rasters.iter().filter(|r| r[p] == 1).count() as f64;
            assert!((map.values[p] - 0.3 * visible / 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn affine_exact_equals_approx() {
        let dims = VideoDims::new(3, 16, 16, 3);
        let model = AffineModel::random(dims, 4, 11);
        let x = ramp(dims);
        let cfg = SaliencyConfig {
            mask: MaskConfig {
                spacing: 4,
                occ_height: 6,
                occ_width: 6,
                integrate: 3,
            },
            ..SaliencyConfig::default()
        };
        let exact = aosa_map(&x, &model, &cfg).unwrap();
        let approx = approx_map(&x, &model, &cfg).unwrap();
        for (a, b) in exact.values.iter().zip(&approx.values) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(approx.meta.forwards <= 3 && approx.meta.backwards <= 3);
    }

    #[test]
    fn sidecar_round_trip() {
        let meta = MapMetadata {
            method: "cuboid-exact".into(),
            spacing: 8,
            occ_height: 16,
            occ_width: 16,
            cuboid_t: Some((8, 2)),
            integrate: 0,
            fill: "const:0".into(),
            score_mode: ScoreMode::Probability,
            class: 3,
            seed: 7,
            forwards: 981,
            backwards: 0,
            model: "tiny3dcnn".into(),
            masks: 980,
            normalize_coverage: false,
            base_score: 0.1 + 0.2,
        };
        assert_eq!(MapMetadata::parse_sidecar(&meta.to_sidecar()).unwrap(), meta);
    }
}
