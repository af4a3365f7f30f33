//! Ruling-line detection and line-angle estimation.

use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::ops::median_value;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineConfig {
    /// A pixel is dark when it is this much darker than the median.
    pub contrast: u8,
    /// Minimum run length as a fraction of `min(width, height)`.
    pub min_len_ratio: f64,
}

impl Default for LineConfig {
    fn default() -> Self {
        Self {
            contrast: 40,
            min_len_ratio: 0.3,
        }
    }
}

/// Per-pixel masks of horizontal and vertical ruling-line pixels.
#[derive(Debug, Clone)]
pub struct LineMasks {
    pub width: usize,
    pub height: usize,
    pub horizontal: Vec<bool>,
    pub vertical: Vec<bool>,
}

impl LineMasks {
    pub fn combined(&self) -> Vec<bool> {
        self.horizontal
            .iter()
            .zip(&self.vertical)
            .map(|(&a, &b)| a || b)
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        !self.horizontal.iter().chain(&self.vertical).any(|&b| b)
    }
}

pub fn dark_mask(gray: &GrayImage, contrast: u8) -> Vec<bool> {
    let bg = median_value(gray);
    let cut = bg.saturating_sub(contrast);
    gray.as_raw().iter().map(|&v| v < cut).collect()
}

/// Dark pixels that belong to a straight horizontal or vertical run of at
/// least the minimum length. This equals a morphological opening of the dark
/// mask with a line-shaped structuring element.
pub fn line_masks(gray: &GrayImage, cfg: &LineConfig) -> LineMasks {
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let dark = dark_mask(gray, cfg.contrast);
    let min_len = ((w.min(h) as f64) * cfg.min_len_ratio).ceil().max(2.0) as usize;

    let mut horizontal = vec![false; w * h];
    for y in 0..h {
        mark_runs(w, min_len, |x| dark[y * w + x], |x| horizontal[y * w + x] = true);
    }
    let mut vertical = vec![false; w * h];
    for x in 0..w {
        mark_runs(h, min_len, |y| dark[y * w + x], |y| vertical[y * w + x] = true);
    }
    LineMasks {
        width: w,
        height: h,
        horizontal,
        vertical,
    }
}

fn mark_runs(len: usize, min_len: usize, is_set: impl Fn(usize) -> bool, mut mark: impl FnMut(usize)) {
    let mut start = None;
    for i in 0..=len {
        let set = i < len && is_set(i);
        match (set, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if i - s >= min_len {
                    (s..i).for_each(&mut mark);
                }
                start = None;
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LineOrientation {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RulingLine {
    pub orientation: LineOrientation,
    /// Inclusive pixel bounding box `(x0, y0, x1, y1)`.
    pub bbox: (u32, u32, u32, u32),
}

impl RulingLine {
    /// Extent across the line direction.
    pub fn thickness(&self) -> u32 {
        let (x0, y0, x1, y1) = self.bbox;
        match self.orientation {
            LineOrientation::Horizontal => y1 - y0 + 1,
            LineOrientation::Vertical => x1 - x0 + 1,
        }
    }
}

/// Each connected group of line pixels is one ruling line.
pub fn detect_ruling_lines(gray: &GrayImage, cfg: &LineConfig) -> Vec<RulingLine> {
    let masks = line_masks(gray, cfg);
    let mut lines = Vec::new();
    for (mask, orientation) in [
        (&masks.horizontal, LineOrientation::Horizontal),
        (&masks.vertical, LineOrientation::Vertical),
    ] {
        for bbox in components(mask, masks.width, masks.height) {
            lines.push(RulingLine { orientation, bbox });
        }
    }
    lines
}

/// Bounding boxes of the 8-connected components of `mask`, in scan order.
pub fn components(mask: &[bool], width: usize, height: usize) -> Vec<(u32, u32, u32, u32)> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % width, i / width);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        continue;
                    }
                    let j = ny as usize * width + nx as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push((x0 as u32, y0 as u32, x1 as u32, y1 as u32));
    }
    out
}

/// Dominant direction of the straight lines among dark pixels, in degrees
/// counterclockwise from the x axis as displayed, in `[0, 180)`. Each dark
/// pixel votes into the two nearest distance bins of a Hough accumulator
/// sampled every 0.1°; the angle whose accumulator has the largest sum of
/// squares wins, which favors many pixels sharing a few lines. `None` when
/// there are no dark pixels.
pub fn dominant_line_angle(gray: &GrayImage, contrast: u8) -> Option<f64> {
    const STEPS: usize = 1800;
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let dark = dark_mask(gray, contrast);
    let points: Vec<(f64, f64)> = (0..w * h)
        .filter(|&i| dark[i])
        .map(|i| ((i % w) as f64, (i / w) as f64))
        .collect();
    if points.is_empty() {
        return None;
    }
    let diag = ((w * w + h * h) as f64).sqrt().ceil() + 1.0;
    let bins = 2 * diag as usize + 2;
    let mut acc = vec![0f64; bins];
    let (mut best_step, mut best_score) = (0usize, f64::NEG_INFINITY);
    for step in 0..STEPS {
        let theta = (step as f64 * 0.1).to_radians();
        let (c, s) = (theta.cos(), theta.sin());
        acc.iter_mut().for_each(|v| *v = 0.0);
        for &(x, y) in &points {
            let rho = x * c + y * s + diag;
            let lo = rho.floor();
            let frac = rho - lo;
            let i = lo as usize;
            acc[i] += 1.0 - frac;
            acc[i + 1] += frac;
        }
        let score: f64 = acc.iter().map(|v| v * v).sum();
        if score > best_score {
            best_score = score;
            best_step = step;
        }
    }
    // normal angle (image coordinates, y down) to visual line direction
    let normal = best_step as f64 * 0.1;
    Some((90.0 - normal).rem_euclid(180.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Luma;

    fn grid(w: u32, h: u32, step: u32) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            if x % step == 10 || y % step == 10 {
                Luma([0])
            } else {
                Luma([255])
            }
        })
    }

    #[test]
    fn grid_lines_are_found() {
        let g = grid(200, 120, 50);
        let lines = detect_ruling_lines(&g, &LineConfig::default());
        let h = lines
            .iter()
            .filter(|l| l.orientation == LineOrientation::Horizontal)
            .count();
        let v = lines.len() - h;
        assert_eq!((h, v), (3, 4));
        assert!(lines.iter().all(|l| l.thickness() == 1));
    }

    #[test]
    fn short_strokes_are_not_lines() {
        let g = GrayImage::from_fn(100, 100, |x, y| {
            if (40..50).contains(&x) && y == 50 {
                Luma([0])
            } else {
                Luma([255])
            }
        });
        assert!(detect_ruling_lines(&g, &LineConfig::default()).is_empty());
    }

    #[test]
    fn axis_aligned_angles() {
        let horiz = GrayImage::from_fn(100, 60, |_, y| Luma([if y == 30 { 0 } else { 255 }]));
        assert!((dominant_line_angle(&horiz, 40).unwrap() - 0.0).abs() < 0.05);
        let vert = GrayImage::from_fn(100, 60, |x, _| Luma([if x == 30 { 0 } else { 255 }]));
        assert!((dominant_line_angle(&vert, 40).unwrap() - 90.0).abs() < 0.05);
    }

    #[test]
    fn blank_has_no_angle() {
        let g = GrayImage::from_pixel(50, 50, Luma([255]));
        assert_eq!(dominant_line_angle(&g, 40), None);
    }
}
