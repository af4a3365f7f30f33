//! Table representations and the conversions between them.
//!
//! Three views of the same table live here:
//!
//! * [`LogicalTable`]: a flat list of cells, each with an inclusive
//!   row/column extent. This is what structure-recognition baselines emit.
//! * [`TableMatrix`]: a dense grid where each position is an anchor, a
//!   position merged into an anchor, or empty.
//! * [`MarkupTree`]: the `table → tr → td` tree that TEDS compares, with a
//!   string form ([`MarkupSequence`]).
//!
//! `logical_to_matrix` and `matrix_to_markup` are the two conversion stages
//! used to turn baseline outputs into markup; `parse_markup` and
//! `markup_to_logical` go the other way.

mod convert;
mod markup;
mod record;

pub use convert::{logical_to_matrix, markup_to_logical, matrix_to_markup};
pub use markup::{parse_markup, ParseMode, ParseOutcome, ParseWarning};
pub use record::{read_ground_truth, write_ground_truth, GroundTruthRecord, RawCell};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TableError {
    #[error("cells overlap at row {row}, column {col}")]
    Overlap { row: usize, col: usize },
    #[error("invalid cell index: {0}")]
    Index(String),
    #[error("malformed markup at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("no <table> element found")]
    Empty,
    #[error("span geometry error: {0}")]
    Geometry(String),
}

/// One cell of a [`LogicalTable`]. Indices are 0-based and inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LogicalCell {
    pub start_row: usize,
    pub end_row: usize,
    pub start_col: usize,
    pub end_col: usize,
    pub content: String,
}

impl LogicalCell {
    pub fn new(
        start_row: usize,
        end_row: usize,
        start_col: usize,
        end_col: usize,
        content: impl Into<String>,
    ) -> Result<Self, TableError> {
        if start_row > end_row || start_col > end_col {
            return Err(TableError::Index(format!(
                "start exceeds end in ({start_row},{end_row},{start_col},{end_col})"
            )));
        }
        Ok(Self {
            start_row,
            end_row,
            start_col,
            end_col,
            content: content.into(),
        })
    }

    pub fn rowspan(&self) -> usize {
        1 + self.end_row - self.start_row
    }

    pub fn colspan(&self) -> usize {
        1 + self.end_col - self.start_col
    }

    pub fn is_merged(&self) -> bool {
        self.rowspan() > 1 || self.colspan() > 1
    }

    pub fn covers(&self, row: usize, col: usize) -> bool {
        (self.start_row..=self.end_row).contains(&row) && (self.start_col..=self.end_col).contains(&col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LogicalTable {
    pub id: String,
    pub cells: Vec<LogicalCell>,
}

impl LogicalTable {
    pub fn new(id: impl Into<String>, cells: Vec<LogicalCell>) -> Self {
        Self { id: id.into(), cells }
    }

    /// `(rows, cols)` derived from the largest end indices; `(0, 0)` when
    /// there are no cells.
    pub fn dimensions(&self) -> (usize, usize) {
        let rows = self.cells.iter().map(|c| c.end_row + 1).max().unwrap_or(0);
        let cols = self.cells.iter().map(|c| c.end_col + 1).max().unwrap_or(0);
        (rows, cols)
    }

    /// Sorts cells row-major by `(start_row, start_col)`.
    pub fn sort_cells(&mut self) {
        self.cells.sort_by_key(|c| (c.start_row, c.start_col));
    }

    pub fn sorted(mut self) -> Self {
        self.sort_cells();
        self
    }

    /// Checks the per-cell ordering invariant and that no two cells claim the
    /// same grid position.
    pub fn validate(&self) -> Result<(), TableError> {
        for c in &self.cells {
            if c.start_row > c.end_row || c.start_col > c.end_col {
                return Err(TableError::Index(format!(
                    "start exceeds end in ({},{},{},{})",
                    c.start_row, c.end_row, c.start_col, c.end_col
                )));
            }
        }
        logical_to_matrix(self).map(|_| ())
    }

    /// The cell covering `(row, col)`, if any.
    pub fn cell_at(&self, row: usize, col: usize) -> Option<&LogicalCell> {
        self.cells.iter().find(|c| c.covers(row, col))
    }
}

/// A position in a [`TableMatrix`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixEntry {
    Anchor {
        rowspan: usize,
        colspan: usize,
        content: String,
    },
    Merged,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableMatrix {
    pub rows: Vec<Vec<MatrixEntry>>,
}

impl TableMatrix {
    pub fn dimensions(&self) -> (usize, usize) {
        (self.rows.len(), self.rows.first().map(|r| r.len()).unwrap_or(0))
    }

    pub fn count(&self, pred: impl Fn(&MatrixEntry) -> bool) -> usize {
        self.rows.iter().flatten().filter(|e| pred(e)).count()
    }
}

/// A `td` node. Content is an attribute of the cell, not a child node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MarkupCell {
    pub rowspan: usize,
    pub colspan: usize,
    pub content: String,
}

impl MarkupCell {
    pub fn new(content: impl Into<String>) -> Self {
        Self {
            rowspan: 1,
            colspan: 1,
            content: content.into(),
        }
    }

    pub fn with_spans(rowspan: usize, colspan: usize, content: impl Into<String>) -> Self {
        Self {
            rowspan,
            colspan,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct MarkupRow {
    pub cells: Vec<MarkupCell>,
}

/// A `table → tr → td` tree. The type enforces the nesting invariant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct MarkupTree {
    pub rows: Vec<MarkupRow>,
}

/// How span attributes are written when serializing a [`MarkupTree`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttributeStyle {
    /// Every `td` carries `rowspan` and `colspan`, as in the matrix-to-markup
    /// conversion.
    #[default]
    Explicit,
    /// Spans of 1 are omitted.
    Compact,
}

impl MarkupTree {
    /// Node count: one for the table, one per row, one per cell.
    pub fn node_count(&self) -> usize {
        1 + self.rows.len() + self.rows.iter().map(|r| r.cells.len()).sum::<usize>()
    }

    pub fn cells(&self) -> impl Iterator<Item = &MarkupCell> {
        self.rows.iter().flat_map(|r| r.cells.iter())
    }

    pub fn to_markup(&self, style: AttributeStyle) -> MarkupSequence {
        let mut out = String::from("<table>");
        for row in &self.rows {
            out.push_str("<tr>");
            for cell in &row.cells {
                write_td(&mut out, cell.rowspan, cell.colspan, &cell.content, style);
            }
            out.push_str("</tr>");
        }
        out.push_str("</table>");
        MarkupSequence(out)
    }

    /// Compact serialization; the form recorded in reports.
    pub fn to_normalized_markup(&self) -> MarkupSequence {
        self.to_markup(AttributeStyle::Compact)
    }

    /// Same tree with every cell's text replaced by `f(text)`.
    pub fn map_content(&self, mut f: impl FnMut(&str) -> String) -> Self {
        Self {
            rows: self
                .rows
                .iter()
                .map(|r| MarkupRow {
                    cells: r
                        .cells
                        .iter()
                        .map(|c| MarkupCell {
                            rowspan: c.rowspan,
                            colspan: c.colspan,
                            content: f(&c.content),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

pub(crate) fn write_td(out: &mut String, rowspan: usize, colspan: usize, content: &str, style: AttributeStyle) {
    out.push_str("<td");
    match style {
        AttributeStyle::Explicit => {
            out.push_str(&format!(" rowspan={rowspan} colspan={colspan}"));
        }
        AttributeStyle::Compact => {
            if rowspan != 1 {
                out.push_str(&format!(" rowspan={rowspan}"));
            }
            if colspan != 1 {
                out.push_str(&format!(" colspan={colspan}"));
            }
        }
    }
    out.push('>');
    out.push_str(&escape_content(content));
    out.push_str("</td>");
}

/// Serialized table markup.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MarkupSequence(pub String);

impl MarkupSequence {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl std::fmt::Display for MarkupSequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<String> for MarkupSequence {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl From<&str> for MarkupSequence {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

pub fn escape_content(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_content(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    // &amp; last so "&amp;lt;" decodes to "&lt;" rather than "<".
    s.replace("&lt;", "<").replace("&gt;", ">").replace("&amp;", "&")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escaping_round_trips() {
        let s = "a < b && c > d &amp;";
        assert_eq!(unescape_content(&escape_content(s)), s);
        assert_eq!(escape_content("<&>"), "&lt;&amp;&gt;");
    }

    #[test]
    fn cell_new_rejects_inverted_extent() {
        assert!(LogicalCell::new(2, 1, 0, 0, "").is_err());
        assert!(LogicalCell::new(0, 0, 3, 2, "").is_err());
    }

    #[test]
    fn node_count_counts_table_rows_and_cells() {
        let tree = MarkupTree {
            rows: vec![
                MarkupRow {
                    cells: vec![MarkupCell::new("a"), MarkupCell::new("b")],
                },
                MarkupRow::default(),
            ],
        };
        assert_eq!(tree.node_count(), 5);
    }

    #[test]
    fn compact_style_drops_unit_spans() {
        let tree = MarkupTree {
            rows: vec![MarkupRow {
                cells: vec![MarkupCell::with_spans(1, 2, "x")],
            }],
        };
        assert_eq!(
            tree.to_markup(AttributeStyle::Compact).as_str(),
            "<table><tr><td colspan=2>x</td></tr></table>"
        );
        assert_eq!(
            tree.to_markup(AttributeStyle::Explicit).as_str(),
            "<table><tr><td rowspan=1 colspan=2>x</td></tr></table>"
        );
    }
}
