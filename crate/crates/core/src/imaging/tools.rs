use image::imageops::FilterType;
use image::{DynamicImage, GrayImage, Luma};
use serde::{Deserialize, Serialize};

use super::analysis::{components, dark_mask, line_masks, LineConfig};
use super::ops::{apply_lut, dilate_mask, histogram, map_planes, median3, otsu_threshold, percentile};
use super::{ImagingError, ProvenanceEntry, TableImage, ToolId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolConfig {
    pub lines: LineConfig,
    /// Pixels added on each side of every ruling line.
    pub border_thickness: u32,
    pub upscale_factor: f64,
    pub pixel_budget: u64,
    pub stretch_low_pct: f64,
    pub stretch_high_pct: f64,
    pub crop_margin: u32,
    /// A candidate table region smaller than this share of the image is
    /// rejected.
    pub crop_min_area_ratio: f64,
    /// Share of dark pixels a row or column needs to count as table content
    /// when no ruling lines are found.
    pub crop_density: f64,
}

impl Default for ToolConfig {
    fn default() -> Self {
        Self {
            lines: LineConfig::default(),
            border_thickness: 2,
            upscale_factor: 2.0,
            pixel_budget: 16_000_000,
            stretch_low_pct: 2.0,
            stretch_high_pct: 98.0,
            crop_margin: 5,
            crop_min_area_ratio: 0.05,
            crop_density: 0.02,
        }
    }
}

/// Applies the five tools with one configuration.
#[derive(Debug, Clone, Default)]
pub struct Toolkit {
    pub config: ToolConfig,
}

impl Toolkit {
    pub fn new(config: ToolConfig) -> Self {
        Self { config }
    }

    pub fn apply(&self, tool: ToolId, img: &TableImage) -> Result<TableImage, ImagingError> {
        match tool {
            ToolId::BorderEnhance => self.border_enhance(img),
            ToolId::Upscale => self.upscale(img, self.config.upscale_factor),
            ToolId::NoiseReduce => self.noise_reduce(img),
            ToolId::Binarize => self.binarize(img),
            ToolId::DetectCrop => self.detect_and_crop(img),
        }
    }

    /// Paints a band of `border_thickness` pixels around every detected
    /// ruling line in the mean line color. Pixels away from lines are left
    /// as they were.
    pub fn border_enhance(&self, img: &TableImage) -> Result<TableImage, ImagingError> {
        let t = self.config.border_thickness;
        let (pixels, found) = thicken_lines(img, t, &self.config.lines);
        let mut entry = ProvenanceEntry::new(ToolId::BorderEnhance.as_str()).param("thickness", t);
        if !found {
            entry = entry.note("no ruling lines detected");
        }
        img.derive(pixels, entry)
    }

    /// Bicubic resize by `factor` in `[1, 4]`. A factor of exactly 1 returns
    /// identical pixels.
    pub fn upscale(&self, img: &TableImage, factor: f64) -> Result<TableImage, ImagingError> {
        if !(1.0..=4.0).contains(&factor) {
            return Err(ImagingError::InvalidParameter(format!(
                "upscale factor {factor} outside [1, 4]"
            )));
        }
        let entry = ProvenanceEntry::new(ToolId::Upscale.as_str()).param("factor", factor);
        if factor == 1.0 {
            return Ok(img.annotate(entry));
        }
        let w = (img.width() as f64 * factor).round() as u32;
        let h = (img.height() as f64 * factor).round() as u32;
        let pixels = w as u64 * h as u64;
        if pixels > self.config.pixel_budget {
            return Err(ImagingError::Size {
                pixels,
                budget: self.config.pixel_budget,
            });
        }
        let out = img.pixels().resize_exact(w, h, FilterType::CatmullRom);
        img.derive(out, entry)
    }

    /// Percentile contrast stretch (the same mapping on every channel)
    /// followed by a 3x3 median filter.
    pub fn noise_reduce(&self, img: &TableImage) -> Result<TableImage, ImagingError> {
        let hist = histogram(&img.to_gray());
        let lo = percentile(&hist, self.config.stretch_low_pct);
        let hi = percentile(&hist, self.config.stretch_high_pct);
        let mut entry = ProvenanceEntry::new(ToolId::NoiseReduce.as_str())
            .param("low", lo)
            .param("high", hi);
        let stretched = if hi > lo {
            let mut lut = [0u8; 256];
            for (v, slot) in lut.iter_mut().enumerate() {
                let x = (v as f64 - lo as f64) * 255.0 / (hi as f64 - lo as f64);
                *slot = x.round().clamp(0.0, 255.0) as u8;
            }
            apply_lut(img.pixels(), &lut)
        } else {
            entry = entry.note("flat histogram, stretch skipped");
            img.pixels().clone()
        };
        let out = map_planes(&stretched, median3);
        img.derive(out, entry)
    }

    /// Global Otsu threshold. The output is single-channel with values 0 and
    /// 255 only.
    pub fn binarize(&self, img: &TableImage) -> Result<TableImage, ImagingError> {
        let gray = img.to_gray();
        let hist = histogram(&gray);
        let distinct = hist.iter().filter(|&&n| n > 0).count();
        let (out, entry) = if distinct <= 1 {
            let v = gray.as_raw().first().copied().unwrap_or(255);
            let fill = if v >= 128 { 255 } else { 0 };
            (
                GrayImage::from_pixel(gray.width(), gray.height(), Luma([fill])),
                ProvenanceEntry::new(ToolId::Binarize.as_str()).note("single-valued image"),
            )
        } else {
            let t = otsu_threshold(&hist);
            let mut out = gray;
            out.iter_mut().for_each(|v| *v = if *v > t { 255 } else { 0 });
            (
                out,
                ProvenanceEntry::new(ToolId::Binarize.as_str()).param("threshold", t),
            )
        };
        img.derive(DynamicImage::ImageLuma8(out), entry)
    }

    /// Crops to the table region with a small margin. The region is the
    /// bounding box of the largest connected group of ruling lines; without
    /// usable lines it is the span of rows and columns dense with dark
    /// pixels. When nothing plausible is found the image is returned
    /// unchanged with a note.
    pub fn detect_and_crop(&self, img: &TableImage) -> Result<TableImage, ImagingError> {
        let cfg = &self.config;
        let gray = img.to_gray();
        let (w, h) = (gray.width() as usize, gray.height() as usize);
        let min_area = cfg.crop_min_area_ratio * (w * h) as f64;
        let area = |b: &(u32, u32, u32, u32)| ((b.2 - b.0 + 1) as f64) * ((b.3 - b.1 + 1) as f64);

        let masks = line_masks(&gray, &cfg.lines);
        let boxes = components(&masks.combined(), w, h);
        let mut region = boxes
            .iter()
            .copied()
            .max_by(|a, b| area(a).total_cmp(&area(b)))
            .filter(|b| area(b) >= min_area);
        let mut method = "ruling_lines";
        if region.is_none() && boxes.len() > 1 {
            let union = boxes.iter().fold(boxes[0], |u, b| {
                (u.0.min(b.0), u.1.min(b.1), u.2.max(b.2), u.3.max(b.3))
            });
            region = Some(union).filter(|b| area(b) >= min_area);
            method = "ruling_line_union";
        }
        if region.is_none() {
            region = dense_region(&gray, cfg).filter(|b| area(b) >= min_area);
            method = "dark_density";
        }

        let Some((x0, y0, x1, y1)) = region else {
            return Ok(img.annotate(ProvenanceEntry::new(ToolId::DetectCrop.as_str()).note("NoTableFound")));
        };
        let m = cfg.crop_margin;
        let cx0 = x0.saturating_sub(m);
        let cy0 = y0.saturating_sub(m);
        let cx1 = (x1 + m).min(w as u32 - 1);
        let cy1 = (y1 + m).min(h as u32 - 1);
        let (cw, ch) = (cx1 - cx0 + 1, cy1 - cy0 + 1);
        if cw < super::MIN_SIDE || ch < super::MIN_SIDE {
            return Ok(img.annotate(ProvenanceEntry::new(ToolId::DetectCrop.as_str()).note("NoTableFound")));
        }
        let out = img.pixels().crop_imm(cx0, cy0, cw, ch);
        let entry = ProvenanceEntry::new(ToolId::DetectCrop.as_str())
            .param("x", cx0)
            .param("y", cy0)
            .param("width", cw)
            .param("height", ch)
            .param("method", method);
        img.derive(out, entry)
    }
}

fn dense_region(gray: &GrayImage, cfg: &ToolConfig) -> Option<(u32, u32, u32, u32)> {
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let dark = dark_mask(gray, cfg.lines.contrast);
    let mut rows = vec![0usize; h];
    let mut cols = vec![0usize; w];
    for y in 0..h {
        for x in 0..w {
            if dark[y * w + x] {
                rows[y] += 1;
                cols[x] += 1;
            }
        }
    }
    let span = |counts: &[usize], len: usize| {
        let dense = |n: &usize| *n as f64 >= cfg.crop_density * len as f64 && *n > 0;
        let first = counts.iter().position(dense)?;
        let last = counts.iter().rposition(dense)?;
        Some((first as u32, last as u32))
    };
    let (y0, y1) = span(&rows, w)?;
    let (x0, x1) = span(&cols, h)?;
    Some((x0, y0, x1, y1))
}

/// Returns the thickened raster and whether any line was found.
pub(crate) fn thicken_lines(img: &TableImage, thickness: u32, cfg: &LineConfig) -> (DynamicImage, bool) {
    let gray = img.to_gray();
    let masks = line_masks(&gray, cfg);
    if masks.is_empty() {
        return (img.pixels().clone(), false);
    }
    let (w, h) = (masks.width, masks.height);
    let lines = masks.combined();
    let band = dilate_mask(&lines, w, h, thickness as usize);
    let mut out = img.pixels().clone();
    match &mut out {
        DynamicImage::ImageLuma8(g) => {
            let color = mean_over(g.as_raw(), 1, &lines);
            paint(g, 1, &lines, &band, &color);
        }
        DynamicImage::ImageRgb8(g) => {
            let color = mean_over(g.as_raw(), 3, &lines);
            paint(g, 3, &lines, &band, &color);
        }
        _ => unreachable!("TableImage holds gray or RGB only"),
    }
    (out, true)
}

fn mean_over(raw: &[u8], channels: usize, mask: &[bool]) -> Vec<u8> {
    let mut sums = vec![0u64; channels];
    let mut n = 0u64;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for c in 0..channels {
            sums[c] += raw[i * channels + c] as u64;
        }
        n += 1;
    }
    sums.iter()
        .map(|&s| ((s as f64) / (n.max(1) as f64)).round() as u8)
        .collect()
}

fn paint(buf: &mut [u8], channels: usize, lines: &[bool], band: &[bool], color: &[u8]) {
    for i in 0..lines.len() {
        if band[i] && !lines[i] {
            buf[i * channels..(i + 1) * channels].copy_from_slice(color);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::analysis::{detect_ruling_lines, LineOrientation};

    fn grid_with_stroke(stroke: u32) -> TableImage {
        let g = GrayImage::from_fn(200, 150, |x, y| {
            let hx = [20u32, 100, 180].iter().any(|&c| x >= c && x < c + stroke);
            let hy = [20u32, 75, 130].iter().any(|&c| y >= c && y < c + stroke);
            let inside = (20..180 + stroke).contains(&x) && (20..130 + stroke).contains(&y);
            if inside && (hx || hy) {
                Luma([0])
            } else {
                Luma([255])
            }
        });
        TableImage::from_gray("grid", g).unwrap()
    }

    fn thicknesses(img: &TableImage) -> Vec<u32> {
        detect_ruling_lines(&img.to_gray(), &LineConfig::default())
            .iter()
            .filter(|l| l.orientation == LineOrientation::Horizontal)
            .map(|l| l.thickness())
            .collect()
    }

    #[test]
    fn border_enhance_widens_strokes() {
        let tk = Toolkit::default();
        let out = tk.border_enhance(&grid_with_stroke(1)).unwrap();
        assert!(thicknesses(&out).iter().all(|&t| t == 5), "{:?}", thicknesses(&out));
        let out = tk.border_enhance(&grid_with_stroke(5)).unwrap();
        assert!(thicknesses(&out).iter().all(|&t| t == 9));
        assert_eq!(out.provenance().len(), 1);
    }

    #[test]
    fn upscale_dimensions_and_limits() {
        let tk = Toolkit::default();
        let img = TableImage::from_gray("u", GrayImage::from_pixel(400, 300, Luma([9]))).unwrap();
        let up = tk.upscale(&img, 2.0).unwrap();
        assert_eq!((up.width(), up.height()), (800, 600));
        let same = tk.upscale(&img, 1.0).unwrap();
        assert_eq!(same.raw_bytes(), img.raw_bytes());
        assert!(matches!(tk.upscale(&img, 5.0), Err(ImagingError::InvalidParameter(_))));
        let big = TableImage::from_gray("b", GrayImage::new(3000, 2000)).unwrap();
        assert!(matches!(tk.upscale(&big, 4.0), Err(ImagingError::Size { .. })));
    }

    #[test]
    fn binarize_outputs_two_levels() {
        let tk = Toolkit::default();
        let g = GrayImage::from_fn(40, 40, |x, _| Luma([if x < 20 { 50 } else { 200 }]));
        let img = TableImage::from_gray("b", g).unwrap();
        let out = tk.binarize(&img).unwrap();
        assert!(out.raw_bytes().iter().all(|&v| v == 0 || v == 255));
        let again = tk.binarize(&out).unwrap();
        assert_eq!(again.raw_bytes(), out.raw_bytes());
        let white = TableImage::from_gray("w", GrayImage::from_pixel(10, 10, Luma([255]))).unwrap();
        assert!(tk.binarize(&white).unwrap().raw_bytes().iter().all(|&v| v == 255));
    }

    #[test]
    fn crop_finds_embedded_grid() {
        let mut canvas = GrayImage::from_pixel(400, 300, Luma([255]));
        for y in 100..=200u32 {
            for x in 120..=300u32 {
                if y == 100 || y == 150 || y == 200 || x == 120 || x == 210 || x == 300 {
                    canvas.put_pixel(x, y, Luma([0]));
                }
            }
        }
        let img = TableImage::from_gray("c", canvas).unwrap();
        let out = Toolkit::default().detect_and_crop(&img).unwrap();
        assert_eq!((out.width(), out.height()), (191, 111));
        let blank = TableImage::from_gray("e", GrayImage::from_pixel(100, 100, Luma([255]))).unwrap();
        let same = Toolkit::default().detect_and_crop(&blank).unwrap();
        assert_eq!(same.raw_bytes(), blank.raw_bytes());
        assert_eq!(same.provenance()[0].note.as_deref(), Some("NoTableFound"));
    }
}
