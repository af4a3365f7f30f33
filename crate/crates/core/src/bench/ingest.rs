//! Readers for public table-recognition dataset layouts.

use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use log::warn;
use serde::Deserialize;

use super::BenchError;
use crate::table::{
    escape_content, logical_to_matrix, markup_to_logical, matrix_to_markup, parse_markup, GroundTruthRecord,
    LogicalCell, LogicalTable, ParseMode,
};
use crate::teds::{teds, TedsMode};

#[derive(Debug, Clone, PartialEq)]
pub struct IngestedTable {
    pub id: String,
    pub image_path: PathBuf,
    pub missing_image: bool,
    pub table: LogicalTable,
    /// The dataset's own markup, when it carries one.
    pub source_markup: Option<String>,
}

impl IngestedTable {
    pub fn to_ground_truth(&self) -> GroundTruthRecord {
        let mut rec = GroundTruthRecord::from_table(&self.table, self.image_path.clone());
        rec.markup = self.source_markup.clone();
        rec
    }

    /// TEDS between markup regenerated from the logical table and the
    /// dataset's own markup.
    pub fn regeneration_teds(&self) -> Option<f64> {
        let own = parse_markup(self.source_markup.as_deref()?, ParseMode::Lenient)
            .ok()?
            .tree;
        let regen = matrix_to_markup(&logical_to_matrix(&self.table).ok()?);
        let regen = parse_markup(regen.as_str(), ParseMode::Strict).ok()?.tree;
        Some(teds(&regen, &own, TedsMode::Full).value)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestOutcome {
    pub tables: Vec<IngestedTable>,
    pub skipped: usize,
    pub notes: Vec<String>,
}

impl IngestOutcome {
    fn skip(&mut self, note: String) {
        warn!("{note}");
        self.notes.push(note);
        self.skipped += 1;
    }
}

#[derive(Debug, Deserialize)]
struct PtnLine {
    filename: String,
    #[serde(default)]
    split: Option<String>,
    html: PtnHtml,
}

#[derive(Debug, Deserialize)]
struct PtnHtml {
    structure: PtnStructure,
    cells: Vec<PtnCell>,
}

#[derive(Debug, Deserialize)]
struct PtnStructure {
    tokens: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct PtnCell {
    #[serde(default)]
    tokens: Vec<String>,
}

fn is_tag_token(t: &str) -> bool {
    t.len() > 2 && t.starts_with('<') && t.ends_with('>')
}

/// Joins cell tokens into text. Inline formatting tags are dropped.
fn cell_text(tokens: &[String]) -> String {
    tokens.iter().filter(|t| !is_tag_token(t)).map(String::as_str).collect()
}

/// Rebuilds full markup from structure tokens, filling cells in order.
pub fn pubtabnet_markup(structure: &[String], cells: &[Vec<String>]) -> Result<String, BenchError> {
    let mut out = String::from("<table>");
    let mut next = 0;
    let mut fill = |out: &mut String| -> Result<(), BenchError> {
        let tokens = cells
            .get(next)
            .ok_or_else(|| BenchError::Format("more cells in structure than cell entries".into()))?;
        out.push_str(&escape_content(&cell_text(tokens)));
        next += 1;
        Ok(())
    };
    let mut in_open_td = false;
    for tok in structure {
        out.push_str(tok);
        match tok.as_str() {
            "<td>" => fill(&mut out)?,
            "<td" => in_open_td = true,
            ">" if in_open_td => {
                in_open_td = false;
                fill(&mut out)?;
            }
            _ => {}
        }
    }
    out.push_str("</table>");
    if next != cells.len() {
        return Err(BenchError::Format(format!(
            "{} cell entries for {next} cells in structure",
            cells.len()
        )));
    }
    Ok(out)
}

fn locate_image(dir: &Path, candidates: &[PathBuf]) -> (PathBuf, bool) {
    for c in candidates {
        if dir.join(c).is_file() {
            return (c.clone(), false);
        }
    }
    (candidates[0].clone(), true)
}

fn parse_pubtabnet_line(line: &str, dir: &Path) -> Result<IngestedTable, BenchError> {
    let rec: PtnLine = serde_json::from_str(line).map_err(|e| BenchError::Format(e.to_string()))?;
    let cells: Vec<Vec<String>> = rec.html.cells.into_iter().map(|c| c.tokens).collect();
    let markup = pubtabnet_markup(&rec.html.structure.tokens, &cells)?;
    let tree = parse_markup(&markup, ParseMode::Strict)?.tree;
    let id = Path::new(&rec.filename)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| rec.filename.clone());
    let table = markup_to_logical(&tree, &id)?;
    let mut candidates = Vec::new();
    if let Some(split) = &rec.split {
        candidates.push(Path::new(split).join(&rec.filename));
    }
    candidates.push(PathBuf::from(&rec.filename));
    let (image_path, missing_image) = locate_image(dir, &candidates);
    Ok(IngestedTable {
        id,
        image_path,
        missing_image,
        table,
        source_markup: Some(markup),
    })
}

/// Reads a PubTabNet-style JSONL annotation file. Image paths are relative
/// to the file's directory. Malformed lines are skipped and counted.
pub fn ingest_pubtabnet(path: &Path) -> Result<IngestOutcome, BenchError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let reader = BufReader::new(File::open(path)?);
    let mut out = IngestOutcome::default();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_pubtabnet_line(&line, dir) {
            Ok(t) => out.tables.push(t),
            Err(e) => out.skip(format!("{}:{}: {e}", path.display(), n + 1)),
        }
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct SciCell {
    start_row: i64,
    end_row: i64,
    start_col: i64,
    end_col: i64,
    #[serde(default)]
    content: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct SciFile {
    cells: Vec<SciCell>,
}

fn index(v: i64) -> Result<usize, BenchError> {
    usize::try_from(v).map_err(|_| BenchError::Format(format!("negative index {v}")))
}

fn parse_scitsr_file(path: &Path, id: &str) -> Result<LogicalTable, BenchError> {
    let file: SciFile =
        serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| BenchError::Format(e.to_string()))?;
    let cells = file
        .cells
        .iter()
        .map(|c| {
            Ok(LogicalCell::new(
                index(c.start_row)?,
                index(c.end_row)?,
                index(c.start_col)?,
                index(c.end_col)?,
                c.content.join(" "),
            )?)
        })
        .collect::<Result<Vec<_>, BenchError>>()?;
    let table = LogicalTable::new(id, cells);
    table.validate()?;
    Ok(table.sorted())
}

/// Reads a SciTSR-style directory: structure files in `structure/` (or the
/// directory itself) and images in `img/` with the same stem.
pub fn ingest_scitsr(dir: &Path) -> Result<IngestOutcome, BenchError> {
    let structure = if dir.join("structure").is_dir() {
        dir.join("structure")
    } else {
        dir.to_path_buf()
    };
    let mut files: Vec<PathBuf> = fs::read_dir(&structure)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    let mut out = IngestOutcome::default();
    for path in files {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        match parse_scitsr_file(&path, &id) {
            Ok(table) => {
                let candidates: Vec<PathBuf> = ["png", "jpg"]
                    .iter()
                    .map(|ext| Path::new("img").join(format!("{id}.{ext}")))
                    .collect();
                let (image_path, missing_image) = locate_image(dir, &candidates);
                if missing_image {
                    out.notes.push(format!("{id}: image not found"));
                }
                out.tables.push(IngestedTable {
                    id,
                    image_path,
                    missing_image,
                    table,
                    source_markup: None,
                });
            }
            Err(e) => out.skip(format!("{}: {e}", path.display())),
        }
    }
    Ok(out)
}
