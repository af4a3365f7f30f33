//! A deterministic stand-in for a vision-language model.
//!
//! [`SimulatedModel`] knows the gold table for each image id and answers
//! every prompt from it, degrading its answers as measured image quality
//! drops. Quality comes from contrast, speckle noise, visible ruling lines,
//! line tilt and edge sharpness, so preprocessing tools and reflection have
//! real, repeatable effects. Used to build offline demo corpora and their
//! mock scripts.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use image::imageops::{self, FilterType};
use image::GrayImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{derive_gold, TaskKind, TaskQuery};
use crate::gateway::{GatewayError, ModelReply, TemplateId, VisionModel, VisionRequest};
use crate::imaging::analysis::{detect_ruling_lines, dominant_line_angle, LineConfig};
use crate::imaging::ops::{histogram, percentile};
use crate::imaging::{TableImage, ToolId};
use crate::table::{logical_to_matrix, matrix_to_markup, LogicalCell, LogicalTable};
use crate::teds::Answer;

/// Image measurements behind the simulated reading quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityProbe {
    /// Spread between the 1st and 99th intensity percentiles, in [0, 1].
    pub contrast: f64,
    /// Share of pixels unlike all eight neighbors.
    pub speckle: f64,
    pub ruling_lines: usize,
    /// Degrees between the dominant line direction and the nearest axis.
    pub tilt: f64,
    /// 95th percentile of the gradient magnitude, in [0, 1].
    pub sharpness: f64,
}

impl QualityProbe {
    pub fn measure(img: &TableImage) -> Self {
        let mut gray = img.to_gray();
        let longest = gray.width().max(gray.height());
        if longest > 480 {
            let s = 480.0 / longest as f64;
            let (w, h) = (
                (gray.width() as f64 * s).round() as u32,
                (gray.height() as f64 * s).round() as u32,
            );
            gray = imageops::resize(&gray, w.max(8), h.max(8), FilterType::Triangle);
        }
        let hist = histogram(&gray);
        let contrast = (percentile(&hist, 99.0) as f64 - percentile(&hist, 1.0) as f64) / 255.0;
        let speckle = isolated_share(&gray);
        let ruling_lines = detect_ruling_lines(&gray, &LineConfig::default()).len();
        let tilt = dominant_line_angle(&gray, 40)
            .map(|a| {
                let m = a.rem_euclid(90.0);
                m.min(90.0 - m)
            })
            .unwrap_or(0.0);
        Self {
            contrast,
            speckle,
            ruling_lines,
            tilt,
            sharpness: gradient_p95(&gray),
        }
    }

    /// Reading quality in [0, 1].
    pub fn quality(&self) -> f64 {
        let contrast = (self.contrast / 0.6).clamp(0.0, 1.0);
        let noise = (1.0 - self.speckle * 25.0).clamp(0.0, 1.0);
        let lines = if self.ruling_lines >= 2 { 1.0 } else { 0.85 };
        let tilt = if self.tilt < 1.0 {
            1.0
        } else {
            (1.0 - self.tilt / 50.0).max(0.2)
        };
        let sharp = (self.sharpness / 0.35).clamp(0.3, 1.0);
        contrast * noise * lines * tilt * sharp
    }
}

fn isolated_share(gray: &GrayImage) -> f64 {
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let px = gray.as_raw();
    let mut isolated = 0usize;
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let v = px[y * w + x];
            let alone = (-1i32..=1)
                .flat_map(|dy| (-1i32..=1).map(move |dx| (dx, dy)))
                .filter(|&d| d != (0, 0))
                .all(|(dx, dy)| {
                    let n = px[(y as i32 + dy) as usize * w + (x as i32 + dx) as usize];
                    v.abs_diff(n) > 80
                });
            isolated += usize::from(alone);
        }
    }
    isolated as f64 / (w * h) as f64
}

fn gradient_p95(gray: &GrayImage) -> f64 {
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let px = gray.as_raw();
    let mut mags: Vec<u32> = Vec::with_capacity(w * h);
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let gx = px[y * w + x + 1] as i32 - px[y * w + x - 1] as i32;
            let gy = px[(y + 1) * w + x] as i32 - px[(y - 1) * w + x] as i32;
            mags.push((gx.unsigned_abs() + gy.unsigned_abs()) / 2);
        }
    }
    if mags.is_empty() {
        return 0.0;
    }
    let k = (mags.len() * 95 / 100).min(mags.len() - 1);
    let (_, v, _) = mags.select_nth_unstable(k);
    *v as f64 / 255.0
}

/// Uniform value in [0, 1) from a stable hash of the parts.
fn unit(parts: &[&str]) -> f64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0]);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes")) as f64 / 2f64.powi(64)
}

fn garble(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    match chars.len() {
        0 => String::new(),
        1 => "?".to_string(),
        n => chars[..n / 2].iter().collect::<String>() + "~",
    }
}

/// Answers prompts about images whose gold tables it was given, keyed by
/// image id.
pub struct SimulatedModel {
    golds: HashMap<String, LogicalTable>,
    probes: Mutex<HashMap<String, QualityProbe>>,
}

impl SimulatedModel {
    pub fn new(tables: impl IntoIterator<Item = LogicalTable>) -> Self {
        Self {
            golds: tables.into_iter().map(|t| (t.id.clone(), t.sorted())).collect(),
            probes: Mutex::new(HashMap::new()),
        }
    }

    pub fn probe(&self, img: &TableImage) -> QualityProbe {
        let key = img.digest();
        if let Some(p) = self.probes.lock().expect("probe cache").get(&key) {
            return *p;
        }
        let p = QualityProbe::measure(img);
        self.probes.lock().expect("probe cache").insert(key, p);
        p
    }

    fn gold(&self, img: &TableImage) -> Option<&LogicalTable> {
        self.golds.get(&img.id)
    }

    fn recognize(&self, img: &TableImage, cot: bool) -> String {
        let Some(gold) = self.gold(img) else {
            return "I could not find a table in this image.".into();
        };
        let probe = self.probe(img);
        let q = probe.quality();
        if q < 0.12 {
            return "The image is too degraded to read a table.".into();
        }
        let cells: Vec<LogicalCell> = gold
            .cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let idx = i.to_string();
                let mut c = c.clone();
                if unit(&[&gold.id, "text", &idx]) > q {
                    c.content = garble(&c.content);
                }
                // merged cells are misread as plain cells without ruling lines
                if c.is_merged() && probe.ruling_lines < 2 && unit(&[&gold.id, "span", &idx]) > q {
                    c.end_row = c.start_row;
                    c.end_col = c.start_col;
                }
                c
            })
            .collect();
        let markup = logical_to_matrix(&LogicalTable::new(gold.id.clone(), cells))
            .map(|m| matrix_to_markup(&m).into_string())
            .unwrap_or_else(|_| "<table></table>".into());
        if cot {
            let (r, c) = gold.dimensions();
            format!("The grid has {r} rows and {c} columns.\n```html\n{markup}\n```")
        } else {
            format!("```html\n{markup}\n```")
        }
    }

    fn plan(&self, img: &TableImage, bindings: &BTreeMap<String, String>) -> String {
        let p = self.probe(img);
        let max_len: usize = bindings.get("L").and_then(|v| v.parse().ok()).unwrap_or(4);
        let n: usize = bindings.get("N").and_then(|v| v.parse().ok()).unwrap_or(3);
        let offered = |t: ToolId| bindings.get("tool_descriptions").is_none_or(|d| d.contains(t.as_str()));
        let mut first = Vec::new();
        if p.speckle > 0.002 || p.contrast < 0.6 {
            first.push(ToolId::NoiseReduce);
        }
        if p.ruling_lines < 2 {
            first.push(ToolId::BorderEnhance);
        }
        if p.sharpness < 0.3 {
            first.push(ToolId::Upscale);
        }
        first.push(ToolId::Binarize);
        let mut plans: Vec<Vec<ToolId>> = vec![first];
        plans.push(vec![ToolId::Binarize]);
        plans.push(vec![ToolId::Upscale, ToolId::Binarize]);
        plans.push(vec![ToolId::DetectCrop, ToolId::NoiseReduce]);
        plans.push(vec![]);
        let mut seen = Vec::new();
        for plan in plans {
            let plan: Vec<ToolId> = plan.into_iter().filter(|t| offered(*t)).take(max_len).collect();
            if !seen.contains(&plan) {
                seen.push(plan);
            }
        }
        seen.truncate(n);
        let json: Vec<Vec<&str>> = seen.iter().map(|p| p.iter().map(|t| t.as_str()).collect()).collect();
        format!(
            "Proposed sequences:\n{}",
            serde_json::to_string(&json).expect("plain strings")
        )
    }

    fn reflect(&self, before: &TableImage, after: &TableImage) -> String {
        let (a, b) = (self.probe(before).quality(), self.probe(after).quality());
        if b > a + 0.01 { "IMAGE_2" } else { "IMAGE_1" }.to_string()
    }

    fn task(&self, kind: TaskKind, img: &TableImage, bindings: &BTreeMap<String, String>) -> String {
        let Some(gold) = self.gold(img) else {
            return "I cannot answer.".into();
        };
        let num = |k: &str| bindings.get(k).and_then(|v| v.parse::<usize>().ok());
        let query = match kind {
            TaskKind::Vtsd | TaskKind::Mcd => TaskQuery::None,
            TaskKind::Irdr => TaskQuery::Row {
                row: num("row_index").unwrap_or(1),
            },
            TaskKind::Icdr => TaskQuery::Column {
                col: num("col_index").unwrap_or(1),
            },
            TaskKind::Ccr => TaskQuery::Content {
                content: bindings.get("cell_content").cloned().unwrap_or_default(),
            },
            TaskKind::Icr => {
                let loc = bindings.get("cell_location").cloned().unwrap_or_default();
                let nums: Vec<usize> = loc
                    .split(|c: char| !c.is_ascii_digit())
                    .filter_map(|s| s.parse().ok())
                    .collect();
                TaskQuery::Location {
                    row: nums.first().copied().unwrap_or(1),
                    col: nums.get(1).copied().unwrap_or(1),
                }
            }
        };
        let Some(answer) = derive_gold(kind, &query, gold) else {
            return "I cannot tell.".into();
        };
        let q = self.probe(img).quality();
        let key: Vec<String> = bindings.values().cloned().collect();
        let wrong = |tag: &str| unit(&[&gold.id, kind.as_str(), tag, &key.join("|")]) > q;
        match answer {
            Answer::Size { rows, cols } => {
                let rows = if wrong("rows") { rows + 1 } else { rows };
                format!("ANSWER: rows={rows}, cols={cols}")
            }
            Answer::Location { row, col } => {
                let col = if wrong("col") { col + 1 } else { col };
                format!("ANSWER: row={row}, col={col}")
            }
            Answer::Text { text } => {
                let text = if wrong("text") { garble(&text) } else { text };
                format!("ANSWER: {}", serde_json::to_string(&text).expect("string"))
            }
            Answer::List { items } => {
                let kept: Vec<String> = items
                    .into_iter()
                    .enumerate()
                    .filter(|(i, _)| !wrong(&i.to_string()))
                    .map(|(_, s)| s)
                    .collect();
                format!("ANSWER: {}", serde_json::to_string(&kept).expect("strings"))
            }
        }
    }
}

impl VisionModel for SimulatedModel {
    fn complete(&self, request: &VisionRequest) -> Result<ModelReply, GatewayError> {
        let img = &request.images[0];
        let text = match request.template {
            TemplateId::RecognizeSimple => self.recognize(img, false),
            TemplateId::RecognizeCoT => self.recognize(img, true),
            TemplateId::PlanGeneration => self.plan(img, &request.bindings),
            TemplateId::Reflection => {
                let after = request
                    .images
                    .get(1)
                    .ok_or_else(|| GatewayError::InvalidRequest("reflection needs two images".into()))?;
                self.reflect(img, after)
            }
            TemplateId::VTSD => self.task(TaskKind::Vtsd, img, &request.bindings),
            TemplateId::IRDR => self.task(TaskKind::Irdr, img, &request.bindings),
            TemplateId::ICDR => self.task(TaskKind::Icdr, img, &request.bindings),
            TemplateId::MCD => self.task(TaskKind::Mcd, img, &request.bindings),
            TemplateId::CCR => self.task(TaskKind::Ccr, img, &request.bindings),
            TemplateId::ICR => self.task(TaskKind::Icr, img, &request.bindings),
        };
        Ok(ModelReply::text(text))
    }

    fn describe(&self) -> String {
        format!("simulated ({} tables)", self.golds.len())
    }
}
