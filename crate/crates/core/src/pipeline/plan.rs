use std::fmt;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::imaging::{TableImage, ToolId, Toolkit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanOrigin {
    ModelGenerated,
    Empty,
    Manual,
}

/// An ordered tool sequence with no tool repeated back to back.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ToolPlan {
    pub steps: Vec<ToolId>,
    pub origin: PlanOrigin,
}

impl ToolPlan {
    pub fn new(steps: Vec<ToolId>, origin: PlanOrigin, max_len: usize) -> Result<Self, PipelineError> {
        if steps.len() > max_len {
            return Err(PipelineError::InvalidPlan(format!(
                "{} steps exceed the limit of {max_len}",
                steps.len()
            )));
        }
        if let Some(w) = steps.windows(2).find(|w| w[0] == w[1]) {
            return Err(PipelineError::InvalidPlan(format!("{} repeated back to back", w[0])));
        }
        Ok(Self { steps, origin })
    }

    /// Parses `"noise_reduce,binarize"` style text as a manual plan.
    pub fn parse_manual(text: &str, max_len: usize) -> Result<Self, PipelineError> {
        let steps = text
            .split([',', '>', ' '])
            .map(str::trim)
            .filter(|s| !s.is_empty() && *s != "-")
            .map(|s| ToolId::parse(s).ok_or_else(|| PipelineError::InvalidPlan(format!("unknown tool {s:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(steps, PlanOrigin::Manual, max_len)
    }

    pub fn empty() -> Self {
        Self {
            steps: Vec::new(),
            origin: PlanOrigin::Empty,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }
}

impl fmt::Display for ToolPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.steps.is_empty() {
            return f.write_str("(none)");
        }
        let names: Vec<&str> = self.steps.iter().map(|t| t.as_str()).collect();
        f.write_str(&names.join(" > "))
    }
}

#[derive(Debug, Clone)]
pub struct PlanExecution {
    pub image: TableImage,
    /// Number of steps that completed.
    pub applied: usize,
    pub error: Option<String>,
}

/// Applies every step in order. A failing tool stops the plan; the last
/// good image is returned with the error.
pub fn execute_plan(img: &TableImage, plan: &ToolPlan, toolkit: &Toolkit) -> PlanExecution {
    let mut current = img.clone();
    for (i, &tool) in plan.steps.iter().enumerate() {
        match toolkit.apply(tool, &current) {
            Ok(next) => current = next,
            Err(e) => {
                return PlanExecution {
                    image: current,
                    applied: i,
                    error: Some(format!("step {} ({tool}) failed: {e}", i + 1)),
                }
            }
        }
    }
    PlanExecution {
        image: current,
        applied: plan.steps.len(),
        error: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma};

    #[test]
    fn plan_invariants() {
        assert!(ToolPlan::new(vec![ToolId::Binarize, ToolId::Binarize], PlanOrigin::Manual, 4).is_err());
        assert!(ToolPlan::new(vec![ToolId::Upscale; 1], PlanOrigin::Manual, 0).is_err());
        let p = ToolPlan::parse_manual("upscale, binarize", 4).unwrap();
        assert_eq!(p.to_string(), "upscale > binarize");
        assert!(ToolPlan::parse_manual("upscale, magic", 4).is_err());
    }

    #[test]
    fn empty_plan_is_identity() {
        let img = TableImage::from_gray("e", GrayImage::from_fn(20, 20, |x, _| Luma([x as u8 * 10]))).unwrap();
        let out = execute_plan(&img, &ToolPlan::empty(), &Toolkit::default());
        assert_eq!(out.image, img);
        assert!(out.error.is_none());
    }

    #[test]
    fn upscale_then_binarize() {
        let img = TableImage::from_gray(
            "u",
            GrayImage::from_fn(30, 20, |x, y| Luma([((x * 7 + y * 3) % 256) as u8])),
        )
        .unwrap();
        let plan = ToolPlan::new(vec![ToolId::Upscale, ToolId::Binarize], PlanOrigin::Manual, 4).unwrap();
        let out = execute_plan(&img, &plan, &Toolkit::default());
        assert_eq!((out.image.width(), out.image.height()), (60, 40));
        assert!(out.image.raw_bytes().iter().all(|&v| v == 0 || v == 255));
        assert_eq!(out.image.provenance().len(), 2);
    }

    #[test]
    fn failing_step_keeps_last_good_image() {
        let mut tk = Toolkit::default();
        tk.config.pixel_budget = 100;
        let img = TableImage::from_gray("f", GrayImage::from_pixel(20, 20, Luma([9]))).unwrap();
        let plan = ToolPlan::new(vec![ToolId::Binarize, ToolId::Upscale], PlanOrigin::Manual, 4).unwrap();
        let out = execute_plan(&img, &plan, &tk);
        assert_eq!(out.applied, 1);
        assert!(out.error.is_some());
        assert_eq!(out.image.provenance().len(), 1);
    }
}
