//! Canonical ground-truth JSONL: one table per line.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{LogicalCell, LogicalTable, TableError};

/// Cell as written in ground-truth files. Indices are signed so negative
/// values can be reported as errors rather than failing deserialization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCell {
    pub start_row: i64,
    pub end_row: i64,
    pub start_col: i64,
    pub end_col: i64,
    #[serde(default)]
    pub content: String,
}

impl From<&LogicalCell> for RawCell {
    fn from(c: &LogicalCell) -> Self {
        Self {
            start_row: c.start_row as i64,
            end_row: c.end_row as i64,
            start_col: c.start_col as i64,
            end_col: c.end_col as i64,
            content: c.content.clone(),
        }
    }
}

impl TryFrom<&RawCell> for LogicalCell {
    type Error = TableError;

    fn try_from(c: &RawCell) -> Result<Self, TableError> {
        let idx =
            |v: i64, name: &str| usize::try_from(v).map_err(|_| TableError::Index(format!("negative {name} {v}")));
        LogicalCell::new(
            idx(c.start_row, "start_row")?,
            idx(c.end_row, "end_row")?,
            idx(c.start_col, "start_col")?,
            idx(c.end_col, "end_col")?,
            c.content.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub cells: Vec<RawCell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub markup: Option<String>,
    /// Free-text notes about the image, injected into planning prompts when
    /// this record serves as a neighbor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traits: Option<String>,
}

impl GroundTruthRecord {
    pub fn from_table(table: &LogicalTable, image_path: impl Into<PathBuf>) -> Self {
        Self {
            id: table.id.clone(),
            image_path: image_path.into(),
            cells: table.cells.iter().map(RawCell::from).collect(),
            markup: None,
            traits: None,
        }
    }

    pub fn to_table(&self) -> Result<LogicalTable, TableError> {
        let cells = self
            .cells
            .iter()
            .map(LogicalCell::try_from)
            .collect::<Result<Vec<_>, _>>()?;
        let table = LogicalTable::new(self.id.clone(), cells);
        table.validate()?;
        Ok(table.sorted())
    }
}

/// Reads every non-blank line; the second element counts lines that failed
/// to deserialize.
pub fn read_ground_truth(reader: impl BufRead) -> std::io::Result<(Vec<GroundTruthRecord>, usize)> {
    let mut records = Vec::new();
    let mut skipped = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<GroundTruthRecord>(&line) {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!("skipping ground-truth line: {e}");
                skipped += 1;
            }
        }
    }
    Ok((records, skipped))
}

pub fn write_ground_truth<'a>(
    mut writer: impl Write,
    records: impl IntoIterator<Item = &'a GroundTruthRecord>,
) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_index_is_index_error() {
        let rec: GroundTruthRecord = serde_json::from_str(
            r#"{"id":"a","image_path":"a.png","cells":[{"start_row":-1,"end_row":0,"start_col":0,"end_col":0,"content":"x"}]}"#,
        )
        .unwrap();
        assert!(matches!(rec.to_table(), Err(TableError::Index(_))));
    }

    #[test]
    fn reader_counts_bad_lines() {
        let text = "{\"id\":\"a\",\"image_path\":\"a.png\",\"cells\":[]}\n\nnot json\n";
        let (records, skipped) = read_ground_truth(text.as_bytes()).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(skipped, 1);
    }
}
