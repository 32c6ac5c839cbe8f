//! Heatmap overlays as binary PPM images.

use aosa::saliency::pipeline::SaliencyMap;
use aosa::VideoTensor;

/// Monotone yellow-to-red ramp.
pub fn colormap(n: f64) -> [f64; 3] {
    [1.0, 1.0 - n, 0.0]
}

/// Map values scaled to [0, 1] by the clip-wide maximum; negatives clamp to 0.
pub fn normalized(map: &SaliencyMap) -> Vec<f64> {
    let max = map.values.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![0.0; map.values.len()];
    }
    map.values.iter().map(|&v| (v.max(0.0) / max).min(1.0)).collect()
}

fn to_byte(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// RGB bytes of frame `t`: luminance blended with the colormap at opacity `n`.
pub fn overlay_frame(video: &VideoTensor, norm: &[f64], t: usize) -> Vec<u8> {
    let d = video.dims();
    let hw = d.frame_pixels();
    let gray = video.luminance(t);
    let mut out = Vec::with_capacity(hw * 3);
    for p in 0..hw {
        let n = norm[t * hw + p];
        let g = gray[p].clamp(0.0, 1.0);
        let c = colormap(n);
        for ch in c {
            out.push(to_byte((1.0 - n) * g + n * ch));
        }
    }
    out
}

pub fn ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}
