//! Oriented FAST keypoints with rotated BRIEF descriptors.

use image::imageops::{resize, FilterType};
use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::pattern::POINT_PAIRS;
use super::RetrievalError;
use crate::imaging::ops::gaussian_blur;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrbParams {
    pub max_features: usize,
    pub levels: usize,
    pub scale_factor: f64,
    pub fast_threshold: u8,
    pub harris_k: f64,
    /// Keypoints closer than this to the border are discarded so every
    /// rotated sample stays inside the image.
    pub edge: u32,
    pub blur_sigma: f64,
    pub min_features: usize,
    /// Images are resized so their longer side has this length before
    /// extraction, which lines up differently scaled copies of a table.
    /// `None` keeps the native resolution.
    pub canonical_side: Option<u32>,
}

impl Default for OrbParams {
    fn default() -> Self {
        Self {
            max_features: 500,
            levels: 8,
            scale_factor: 1.2,
            fast_threshold: 20,
            harris_k: 0.04,
            edge: 19,
            blur_sigma: 2.0,
            min_features: 8,
            canonical_side: Some(400),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    /// Position in full-resolution pixel coordinates.
    pub x: f32,
    pub y: f32,
    /// Radians, measured in image coordinates (y down).
    pub angle: f32,
    pub response: f32,
    pub octave: u8,
}

/// A 256-bit binary descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Descriptor(pub [u64; 4]);

impl Descriptor {
    pub fn hamming(&self, other: &Descriptor) -> u32 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a ^ b).count_ones()).sum()
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        for (i, w) in self.0.iter().enumerate() {
            out[i * 8..(i + 1) * 8].copy_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(b: &[u8; 32]) -> Self {
        let mut words = [0u64; 4];
        for (i, w) in words.iter_mut().enumerate() {
            *w = u64::from_le_bytes(b[i * 8..(i + 1) * 8].try_into().expect("8 bytes"));
        }
        Descriptor(words)
    }

    fn set_bit(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

const HALF_PATCH: i32 = 15;

/// FAST-9 score of the pixel, or `None` when it is not a corner. The score
/// is the summed excess contrast over the threshold on the winning side.
fn fast_score(img: &GrayImage, x: i32, y: i32, t: i32) -> Option<i32> {
    let w = img.width() as i32;
    let raw = img.as_raw();
    let p = raw[(y * w + x) as usize] as i32;
    let mut diffs = [0i32; 16];
    for (k, (dx, dy)) in CIRCLE.iter().enumerate() {
        diffs[k] = raw[((y + dy) * w + x + dx) as usize] as i32 - p;
    }
    let mut best = None;
    for sign in [1i32, -1] {
        let hit = |k: usize| sign * diffs[k % 16] > t;
        let (mut run, mut longest) = (0, 0);
        for k in 0..32 {
            if hit(k) {
                run += 1;
                longest = longest.max(run);
            } else {
                run = 0;
            }
        }
        if longest >= 9 {
            let score: i32 = diffs.iter().map(|d| (sign * d - t).max(0)).sum();
            best = Some(best.map_or(score, |b: i32| b.max(score)));
        }
    }
    best
}

fn harris_response(img: &GrayImage, x: i32, y: i32, k: f64) -> f64 {
    let w = img.width() as i32;
    let raw = img.as_raw();
    let at = |xx: i32, yy: i32| raw[(yy * w + xx) as usize] as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for dy in -3..=3 {
        for dx in -3..=3 {
            let (cx, cy) = (x + dx, y + dy);
            let gx = (at(cx + 1, cy - 1) + 2.0 * at(cx + 1, cy) + at(cx + 1, cy + 1))
                - (at(cx - 1, cy - 1) + 2.0 * at(cx - 1, cy) + at(cx - 1, cy + 1));
            let gy = (at(cx - 1, cy + 1) + 2.0 * at(cx, cy + 1) + at(cx + 1, cy + 1))
                - (at(cx - 1, cy - 1) + 2.0 * at(cx, cy - 1) + at(cx + 1, cy - 1));
            sxx += gx * gx;
            syy += gy * gy;
            sxy += gx * gy;
        }
    }
    sxx * syy - sxy * sxy - k * (sxx + syy) * (sxx + syy)
}

fn centroid_angle(img: &GrayImage, x: i32, y: i32) -> f32 {
    let w = img.width() as i32;
    let raw = img.as_raw();
    let (mut m10, mut m01) = (0i64, 0i64);
    for dy in -HALF_PATCH..=HALF_PATCH {
        for dx in -HALF_PATCH..=HALF_PATCH {
            if dx * dx + dy * dy > HALF_PATCH * HALF_PATCH {
                continue;
            }
            let v = raw[((y + dy) * w + x + dx) as usize] as i64;
            m10 += dx as i64 * v;
            m01 += dy as i64 * v;
        }
    }
    (m01 as f64).atan2(m10 as f64) as f32
}

fn describe(smoothed: &GrayImage, x: i32, y: i32, angle: f32) -> Descriptor {
    let w = smoothed.width() as i32;
    let raw = smoothed.as_raw();
    let (s, c) = (angle as f64).sin_cos();
    let sample = |px: i8, py: i8| {
        let (px, py) = (px as f64, py as f64);
        let ix = (px * c - py * s).round() as i32;
        let iy = (px * s + py * c).round() as i32;
        raw[((y + iy) * w + x + ix) as usize]
    };
    let mut d = Descriptor::default();
    for (i, &(x1, y1, x2, y2)) in POINT_PAIRS.iter().enumerate() {
        if sample(x1, y1) < sample(x2, y2) {
            d.set_bit(i);
        }
    }
    d
}

/// Number of features each pyramid level contributes, shrinking
/// geometrically with the level scale.
fn level_quotas(params: &OrbParams, levels: usize) -> Vec<usize> {
    let f = 1.0 / params.scale_factor;
    let mut per = params.max_features as f64 * (1.0 - f) / (1.0 - f.powi(levels as i32));
    let mut quotas = Vec::with_capacity(levels);
    let mut used = 0;
    for _ in 0..levels.saturating_sub(1) {
        let q = per.round() as usize;
        quotas.push(q);
        used += q;
        per *= f;
    }
    quotas.push(params.max_features.saturating_sub(used));
    quotas
}

/// Extracts up to `max_features` keypoints with descriptors. Fails with
/// [`RetrievalError::Featureless`] when fewer than `min_features` are found.
pub fn extract_features(gray: &GrayImage, params: &OrbParams) -> Result<FeatureSet, RetrievalError> {
    let min_side = 2 * params.edge + 1;
    let longer = gray.width().max(gray.height());
    let (gray, base) = match params.canonical_side {
        Some(side) if side != longer && side > 0 => {
            let f = side as f64 / longer as f64;
            let w = ((gray.width() as f64 * f).round() as u32).max(1);
            let h = ((gray.height() as f64 * f).round() as u32).max(1);
            (resize(gray, w, h, FilterType::Triangle), 1.0 / f)
        }
        _ => (gray.clone(), 1.0),
    };
    let gray = &gray;
    let mut pyramid = vec![(gray.clone(), base)];
    for level in 1..params.levels {
        let scale = params.scale_factor.powi(level as i32);
        let w = (gray.width() as f64 / scale).round() as u32;
        let h = (gray.height() as f64 / scale).round() as u32;
        if w < min_side || h < min_side {
            break;
        }
        pyramid.push((resize(gray, w, h, FilterType::Triangle), scale * base));
    }
    let quotas = level_quotas(params, pyramid.len());
    let t = params.fast_threshold as i32;
    let edge = params.edge as i32;

    let mut out = FeatureSet::default();
    for (octave, ((img, scale), quota)) in pyramid.iter().zip(quotas).enumerate() {
        let (w, h) = (img.width() as i32, img.height() as i32);
        if w < 2 * edge + 1 || h < 2 * edge + 1 || quota == 0 {
            continue;
        }
        let mut scores = vec![0i32; (w * h) as usize];
        for y in edge..h - edge {
            for x in edge..w - edge {
                if let Some(s) = fast_score(img, x, y, t) {
                    scores[(y * w + x) as usize] = s;
                }
            }
        }
        let mut candidates = Vec::new();
        for y in edge..h - edge {
            for x in edge..w - edge {
                let s = scores[(y * w + x) as usize];
                if s == 0 {
                    continue;
                }
                let mut is_max = true;
                'nms: for dy in -1..=1 {
                    for dx in -1..=1 {
                        if (dx, dy) == (0, 0) {
                            continue;
                        }
                        let n = scores[((y + dy) * w + x + dx) as usize];
                        // earlier neighbors win ties so plateaus keep one point
                        let earlier = dy < 0 || (dy == 0 && dx < 0);
                        if n > s || (n == s && earlier) {
                            is_max = false;
                            break 'nms;
                        }
                    }
                }
                if is_max {
                    candidates.push((harris_response(img, x, y, params.harris_k), y, x));
                }
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        candidates.truncate(quota);
        let smoothed = gaussian_blur(img, params.blur_sigma);
        for (response, y, x) in candidates {
            let angle = centroid_angle(img, x, y);
            out.descriptors.push(describe(&smoothed, x, y, angle));
            out.keypoints.push(Keypoint {
                x: (x as f64 * scale) as f32,
                y: (y as f64 * scale) as f32,
                angle,
                response: response as f32,
                octave: octave as u8,
            });
        }
    }
    if out.len() < params.min_features {
        return Err(RetrievalError::Featureless {
            found: out.len(),
            required: params.min_features,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Luma;

    #[test]
    fn quotas_sum_to_max() {
        let p = OrbParams::default();
        let q = level_quotas(&p, 8);
        assert_eq!(q.iter().sum::<usize>(), 500);
        assert!(q.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn fast_detects_isolated_bright_spot_corner() {
        let mut g = GrayImage::from_pixel(20, 20, Luma([0]));
        for y in 10..20 {
            for x in 10..20 {
                g.put_pixel(x, y, Luma([255]));
            }
        }
        // the corner pixel of a bright square sees a dark arc of more than 9
        assert!(fast_score(&g, 10, 10, 20).is_some());
        assert!(fast_score(&g, 5, 5, 20).is_none());
    }

    #[test]
    fn descriptor_bytes_round_trip() {
        let d = Descriptor([1, u64::MAX, 0, 42]);
        assert_eq!(Descriptor::from_bytes(&d.to_bytes()), d);
        assert_eq!(d.hamming(&d), 0);
        assert_eq!(d.hamming(&Descriptor::default()), 1 + 64 + 3);
    }
}
