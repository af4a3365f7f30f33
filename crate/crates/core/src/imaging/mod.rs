//! Table images, the five preprocessing tools, and the degradation
//! scenarios used to stress recognition.
//!
//! Every transform takes a [`TableImage`] by reference and returns a new one
//! with exactly one provenance entry appended. Nothing here touches the
//! filesystem except [`TableImage::load`] and [`TableImage::save`].

pub mod analysis;
mod degrade;
pub mod ops;
pub mod synth;
mod tools;

pub use degrade::{degrade, DegradeConfig, Scenario};
pub use tools::{ToolConfig, Toolkit};

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MIN_SIDE: u32 = 8;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("image {width}x{height} is smaller than {MIN_SIDE}x{MIN_SIDE}")]
    TooSmall { width: u32, height: u32 },
    #[error("output of {pixels} pixels exceeds the budget of {budget}")]
    Size { pixels: u64, budget: u64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One applied transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub op: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ProvenanceEntry {
    pub fn new(op: impl Into<String>) -> Self {
        Self {
            op: op.into(),
            params: BTreeMap::new(),
            note: None,
        }
    }

    pub fn param(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// An 8-bit gray or RGB raster of at least 8x8 pixels with an append-only
/// record of the transforms applied to it.
#[derive(Debug, Clone, PartialEq)]
pub struct TableImage {
    pixels: DynamicImage,
    pub dpi_hint: Option<u32>,
    pub id: String,
    provenance: Vec<ProvenanceEntry>,
}

impl TableImage {
    /// Wraps a raster, converting anything other than 8-bit gray to 8-bit
    /// RGB.
    pub fn new(id: impl Into<String>, pixels: DynamicImage) -> Result<Self, ImagingError> {
        let pixels = match pixels {
            DynamicImage::ImageLuma8(_) | DynamicImage::ImageRgb8(_) => pixels,
            DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLuma16(_) => DynamicImage::ImageLuma8(pixels.to_luma8()),
            other => DynamicImage::ImageRgb8(other.to_rgb8()),
        };
        let (width, height) = (pixels.width(), pixels.height());
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(ImagingError::TooSmall { width, height });
        }
        Ok(Self {
            pixels,
            dpi_hint: None,
            id: id.into(),
            provenance: Vec::new(),
        })
    }

    pub fn from_gray(id: impl Into<String>, gray: GrayImage) -> Result<Self, ImagingError> {
        Self::new(id, DynamicImage::ImageLuma8(gray))
    }

    pub fn load(path: impl AsRef<Path>, id: impl Into<String>) -> Result<Self, ImagingError> {
        let img = image::open(path.as_ref())?;
        Self::new(id, img)
    }

    /// Writes PNG or JPEG according to the extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImagingError> {
        self.pixels.save(path.as_ref())?;
        Ok(())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImagingError> {
        let mut buf = Cursor::new(Vec::new());
        self.pixels.write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn channels(&self) -> u8 {
        match self.pixels {
            DynamicImage::ImageLuma8(_) => 1,
            _ => 3,
        }
    }

    pub fn pixels(&self) -> &DynamicImage {
        &self.pixels
    }

    pub fn raw_bytes(&self) -> &[u8] {
        self.pixels.as_bytes()
    }

    pub fn provenance(&self) -> &[ProvenanceEntry] {
        &self.provenance
    }

    pub fn to_gray(&self) -> GrayImage {
        match &self.pixels {
            DynamicImage::ImageLuma8(g) => g.clone(),
            other => other.to_luma8(),
        }
    }

    /// SHA-256 over dimensions, channel count and raw pixel bytes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.width().to_le_bytes());
        h.update(self.height().to_le_bytes());
        h.update([self.channels()]);
        h.update(self.raw_bytes());
        hex::encode(h.finalize())
    }

    /// A new image carrying this one's id and history plus `entry`.
    pub(crate) fn derive(&self, pixels: DynamicImage, entry: ProvenanceEntry) -> Result<Self, ImagingError> {
        let mut out = Self::new(self.id.clone(), pixels)?;
        out.dpi_hint = self.dpi_hint;
        out.provenance = self.provenance.clone();
        out.provenance.push(entry);
        Ok(out)
    }

    /// Same pixels, one more provenance entry.
    pub(crate) fn annotate(&self, entry: ProvenanceEntry) -> Self {
        let mut out = self.clone();
        out.provenance.push(entry);
        out
    }
}

/// The five preprocessing tools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolId {
    BorderEnhance,
    Upscale,
    NoiseReduce,
    Binarize,
    DetectCrop,
}

impl ToolId {
    pub const ALL: [ToolId; 5] = [
        ToolId::BorderEnhance,
        ToolId::Upscale,
        ToolId::NoiseReduce,
        ToolId::Binarize,
        ToolId::DetectCrop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolId::BorderEnhance => "border_enhance",
            ToolId::Upscale => "upscale",
            ToolId::NoiseReduce => "noise_reduce",
            ToolId::Binarize => "binarize",
            ToolId::DetectCrop => "detect_crop",
        }
    }

    /// Accepts the identifier, the type name, or the display name in any
    /// case and with any punctuation.
    pub fn parse(s: &str) -> Option<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        match key.as_str() {
            "borderenhance" | "borderenhancement" => Some(ToolId::BorderEnhance),
            "upscale" | "imageupscaling" | "upscaling" => Some(ToolId::Upscale),
            "noisereduce" | "noisereduction" | "denoise" => Some(ToolId::NoiseReduce),
            "binarize" | "binarization" => Some(ToolId::Binarize),
            "detectcrop" | "detectandcrop" | "detectionandcropping" | "crop" => Some(ToolId::DetectCrop),
            _ => None,
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ToolId::BorderEnhance => "Border Enhancement",
            ToolId::Upscale => "Image Upscaling",
            ToolId::NoiseReduce => "Noise Reduction",
            ToolId::Binarize => "Binarization",
            ToolId::DetectCrop => "Detection and Cropping",
        }
    }

    pub fn descriptor(self) -> ToolDescriptor {
        let (description, applicable) = match self {
            ToolId::BorderEnhance => (
                "Thickens the ruling lines of the table so row and column structure stands out.",
                "faint, thin or broken table borders",
            ),
            ToolId::Upscale => (
                "Raises the image resolution with bicubic interpolation to improve legibility.",
                "low-resolution or blurry images, small text",
            ),
            ToolId::NoiseReduce => (
                "Stretches brightness and contrast and removes speckle noise with a median filter.",
                "underexposed, low-contrast or noisy images",
            ),
            ToolId::Binarize => (
                "Converts the image to pure black and white with a global Otsu threshold.",
                "uneven backgrounds or colored shading that hide text",
            ),
            ToolId::DetectCrop => (
                "Finds the table region in the image and crops away the surroundings.",
                "tables embedded in larger pages or cluttered backgrounds",
            ),
        };
        ToolDescriptor {
            tool_id: self,
            description: description.to_string(),
            applicable_scenarios: applicable.to_string(),
        }
    }
}

impl std::fmt::Display for ToolId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub tool_id: ToolId,
    pub description: String,
    pub applicable_scenarios: String,
}

pub fn all_tool_descriptors() -> Vec<ToolDescriptor> {
    ToolId::ALL.iter().map(|t| t.descriptor()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_tiny_images() {
        assert!(matches!(
            TableImage::from_gray("x", GrayImage::new(7, 20)),
            Err(ImagingError::TooSmall { .. })
        ));
    }

    #[test]
    fn rgba_is_converted_to_rgb() {
        let img = TableImage::new("x", DynamicImage::new_rgba8(10, 10)).unwrap();
        assert_eq!(img.channels(), 3);
    }

    #[test]
    fn tool_names_parse() {
        for t in ToolId::ALL {
            assert_eq!(ToolId::parse(t.as_str()), Some(t));
            assert_eq!(ToolId::parse(t.display_name()), Some(t));
        }
        assert_eq!(ToolId::parse("BorderEnhance"), Some(ToolId::BorderEnhance));
        assert_eq!(ToolId::parse("MagicTool"), None);
    }

    #[test]
    fn digest_depends_on_pixels() {
        let a = TableImage::from_gray("a", GrayImage::new(8, 8)).unwrap();
        let mut g = GrayImage::new(8, 8);
        g.put_pixel(0, 0, image::Luma([1]));
        let b = TableImage::from_gray("a", g).unwrap();
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), a.clone().digest());
    }
}
