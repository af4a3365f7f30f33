use std::fmt;
use std::str::FromStr;

use image::DynamicImage;
use serde::{Deserialize, Serialize};

use super::analysis::{line_masks, LineConfig};
use super::ops::{apply_lut, dilate_mask, gamma_lut, gaussian_blur, map_planes, median_value, rotate_expand};
use super::tools::thicken_lines;
use super::{ImagingError, ProvenanceEntry, TableImage};

/// Synthetic degradations applied to clean table images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    Blur,
    Underexposure,
    Overexposure,
    UnclearBorders,
    MissingBorders,
    ThickenedBorders,
    Tilt20,
    Tilt40,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::Blur,
        Scenario::Underexposure,
        Scenario::Overexposure,
        Scenario::UnclearBorders,
        Scenario::MissingBorders,
        Scenario::ThickenedBorders,
        Scenario::Tilt20,
        Scenario::Tilt40,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Blur => "Blur",
            Scenario::Underexposure => "Underexposure",
            Scenario::Overexposure => "Overexposure",
            Scenario::UnclearBorders => "UnclearBorders",
            Scenario::MissingBorders => "MissingBorders",
            Scenario::ThickenedBorders => "ThickenedBorders",
            Scenario::Tilt20 => "Tilt20",
            Scenario::Tilt40 => "Tilt40",
        }
    }

    /// Short code used in reports: BL, UE, OE, UB, MB, TB, T20, T40.
    pub fn code(self) -> &'static str {
        match self {
            Scenario::Blur => "BL",
            Scenario::Underexposure => "UE",
            Scenario::Overexposure => "OE",
            Scenario::UnclearBorders => "UB",
            Scenario::MissingBorders => "MB",
            Scenario::ThickenedBorders => "TB",
            Scenario::Tilt20 => "T20",
            Scenario::Tilt40 => "T40",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = ImagingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str().eq_ignore_ascii_case(t) || sc.code().eq_ignore_ascii_case(t))
            .ok_or_else(|| ImagingError::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradeConfig {
    pub blur_sigma: f64,
    pub under_gamma: f64,
    /// White level after underexposure, as a fraction of full scale.
    pub under_gain: f64,
    pub over_gamma: f64,
    /// Black level after overexposure.
    pub over_lift: u8,
    /// How far border pixels move toward the background, 0 to 1.
    pub unclear_blend: f64,
    pub thickened_thickness: u32,
    pub lines: LineConfig,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        Self {
            blur_sigma: 2.0,
            under_gamma: 2.5,
            under_gain: 0.55,
            over_gamma: 0.4,
            over_lift: 110,
            unclear_blend: 0.7,
            thickened_thickness: 3,
            lines: LineConfig::default(),
        }
    }
}

/// Applies one scenario. All scenarios are deterministic; `seed` is recorded
/// in the provenance entry so manifests stay reproducible if a stochastic
/// scenario is added.
pub fn degrade(
    img: &TableImage,
    scenario: Scenario,
    seed: u64,
    cfg: &DegradeConfig,
) -> Result<TableImage, ImagingError> {
    let mut entry = ProvenanceEntry::new(format!("degrade:{}", scenario.as_str())).param("seed", seed);
    let pixels = match scenario {
        Scenario::Blur => {
            entry = entry.param("sigma", cfg.blur_sigma);
            map_planes(img.pixels(), |p| gaussian_blur(p, cfg.blur_sigma))
        }
        Scenario::Underexposure => {
            entry = entry.param("gamma", cfg.under_gamma).param("gain", cfg.under_gain);
            let gain = cfg.under_gain.clamp(0.0, 1.0);
            let lut = gamma_lut(cfg.under_gamma).map(|v| (v as f64 * gain).round() as u8);
            apply_lut(img.pixels(), &lut)
        }
        Scenario::Overexposure => {
            entry = entry.param("gamma", cfg.over_gamma).param("lift", cfg.over_lift);
            let lift = cfg.over_lift as f64;
            let lut = gamma_lut(cfg.over_gamma).map(|v| (lift + v as f64 * (255.0 - lift) / 255.0).round() as u8);
            apply_lut(img.pixels(), &lut)
        }
        Scenario::UnclearBorders => {
            entry = entry.param("blend", cfg.unclear_blend);
            fade_lines(img, cfg.unclear_blend, 0, &cfg.lines)
        }
        Scenario::MissingBorders => fade_lines(img, 1.0, 1, &cfg.lines),
        Scenario::ThickenedBorders => {
            entry = entry.param("thickness", cfg.thickened_thickness);
            thicken_lines(img, cfg.thickened_thickness, &cfg.lines).0
        }
        Scenario::Tilt20 | Scenario::Tilt40 => {
            let degrees = if scenario == Scenario::Tilt20 { 20.0 } else { 40.0 };
            entry = entry.param("degrees", degrees);
            rotate_expand(img.pixels(), degrees, 255)
        }
    };
    img.derive(pixels, entry)
}

/// Moves ruling-line pixels (mask dilated by `grow`) toward the per-channel
/// median background by `blend`.
fn fade_lines(img: &TableImage, blend: f64, grow: usize, lines: &LineConfig) -> DynamicImage {
    let masks = line_masks(&img.to_gray(), lines);
    let region = dilate_mask(&masks.combined(), masks.width, masks.height, grow);
    map_planes(img.pixels(), |plane| {
        let bg = median_value(plane) as f64;
        let mut out = plane.clone();
        for (v, &on) in out.iter_mut().zip(&region) {
            if on {
                let x = *v as f64 + blend * (bg - *v as f64);
                *v = x.round().clamp(0.0, 255.0) as u8;
            }
        }
        out
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::analysis::detect_ruling_lines;
    use image::{GrayImage, Luma};

    fn grid() -> TableImage {
        let g = GrayImage::from_fn(160, 120, |x, y| {
            let line = (x % 40 == 20 && (20..=100).contains(&y)) || (y % 40 == 20 && (20..=140).contains(&x));
            Luma([if line { 0 } else { 255 }])
        });
        TableImage::from_gray("g", g).unwrap()
    }

    #[test]
    fn scenario_names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(s.as_str().parse::<Scenario>().unwrap(), s);
            assert_eq!(s.code().parse::<Scenario>().unwrap(), s);
        }
        assert!("Fog".parse::<Scenario>().is_err());
    }

    #[test]
    fn missing_borders_removes_all_lines() {
        let out = degrade(&grid(), Scenario::MissingBorders, 0, &DegradeConfig::default()).unwrap();
        assert!(detect_ruling_lines(&out.to_gray(), &LineConfig::default()).is_empty());
    }

    #[test]
    fn exposure_round_trip_is_lossy() {
        let g = GrayImage::from_fn(64, 64, |x, y| Luma([((x * 4 + y) % 256) as u8]));
        let img = TableImage::from_gray("e", g).unwrap();
        let cfg = DegradeConfig::default();
        let ue = degrade(&img, Scenario::Underexposure, 0, &cfg).unwrap();
        let back = degrade(&ue, Scenario::Overexposure, 0, &cfg).unwrap();
        assert_ne!(back.raw_bytes(), img.raw_bytes());
        assert_eq!(back.provenance().len(), 2);
    }

    #[test]
    fn exposure_compresses_range() {
        let cfg = DegradeConfig::default();
        let ue = degrade(&grid(), Scenario::Underexposure, 0, &cfg).unwrap();
        assert_eq!(ue.raw_bytes().iter().max(), Some(&140));
        let oe = degrade(&grid(), Scenario::Overexposure, 0, &cfg).unwrap();
        assert_eq!(oe.raw_bytes().iter().min(), Some(&110));
    }

    #[test]
    fn tilt_angle_is_measurable() {
        use crate::imaging::analysis::dominant_line_angle;
        use crate::imaging::synth::{random_table, render_table, RenderStyle};
        let t = random_table("t", 6, 5, 0.2, 3);
        let img = render_table(&t, "t", &RenderStyle::default()).unwrap();
        for (sc, want) in [(Scenario::Tilt20, 20.0), (Scenario::Tilt40, 40.0)] {
            let out = degrade(&img, sc, 0, &DegradeConfig::default()).unwrap();
            let got = dominant_line_angle(&out.to_gray(), 40).unwrap();
            let err = (got - want).rem_euclid(90.0);
            assert!(err.min(90.0 - err) <= 0.5, "{sc}: measured {got}");
        }
    }

    #[test]
    fn tilt_expands_canvas() {
        let out = degrade(&grid(), Scenario::Tilt40, 0, &DegradeConfig::default()).unwrap();
        assert!(out.width() > 160 && out.height() > 120);
    }
}
