use super::{
    write_td, AttributeStyle, LogicalCell, LogicalTable, MarkupSequence, MarkupTree, MatrixEntry, TableError,
    TableMatrix,
};

/// Places every cell into a dense grid: the top-left position of each cell
/// becomes an anchor carrying its spans and content, the rest of its
/// rectangle is marked merged, and untouched positions stay empty.
#[allow(clippy::needless_range_loop)]
pub fn logical_to_matrix(table: &LogicalTable) -> Result<TableMatrix, TableError> {
    let (rows, cols) = table.dimensions();
    let mut grid = vec![vec![MatrixEntry::Empty; cols]; rows];
    for cell in &table.cells {
        if cell.start_row > cell.end_row || cell.start_col > cell.end_col {
            return Err(TableError::Index(format!(
                "start exceeds end in ({},{},{},{})",
                cell.start_row, cell.end_row, cell.start_col, cell.end_col
            )));
        }
        let rowspan = cell.rowspan();
        let colspan = cell.colspan();
        for row in cell.start_row..=cell.end_row {
            for col in cell.start_col..=cell.end_col {
                if grid[row][col] != MatrixEntry::Empty {
                    return Err(TableError::Overlap { row, col });
                }
                grid[row][col] = if row == cell.start_row && col == cell.start_col {
                    MatrixEntry::Anchor {
                        rowspan,
                        colspan,
                        content: cell.content.clone(),
                    }
                } else {
                    MatrixEntry::Merged
                };
            }
        }
    }
    Ok(TableMatrix { rows: grid })
}

/// Walks the grid row by row, emitting one `tr` per row and one `td` per
/// anchor with both span attributes written out. Merged positions are
/// skipped; empty positions become an empty 1x1 `td` so grid geometry
/// survives.
pub fn matrix_to_markup(matrix: &TableMatrix) -> MarkupSequence {
    let mut markup = String::from("<table>");
    for row in &matrix.rows {
        markup.push_str("<tr>");
        for entry in row {
            match entry {
                MatrixEntry::Merged => continue,
                MatrixEntry::Anchor {
                    rowspan,
                    colspan,
                    content,
                } => write_td(&mut markup, *rowspan, *colspan, content, AttributeStyle::Explicit),
                MatrixEntry::Empty => write_td(&mut markup, 1, 1, "", AttributeStyle::Explicit),
            }
        }
        markup.push_str("</tr>");
    }
    markup.push_str("</table>");
    MarkupSequence(markup)
}

/// Recovers logical extents from a markup tree.
///
/// Each `td` goes to the leftmost column of its row not already occupied by
/// a rowspan from above. Spans that run past the last row, or a colspan that
/// runs into an occupied column, are rejected.
pub fn markup_to_logical(tree: &MarkupTree, id: &str) -> Result<LogicalTable, TableError> {
    // remaining rows (including the current one) each column is held for
    let mut occupied: Vec<usize> = Vec::new();
    let mut cells = Vec::new();
    let n_rows = tree.rows.len();

    for (r, row) in tree.rows.iter().enumerate() {
        let mut col = 0usize;
        for td in &row.cells {
            if td.rowspan == 0 || td.colspan == 0 {
                return Err(TableError::Geometry(format!("zero span at row {r}")));
            }
            while col < occupied.len() && occupied[col] > 0 {
                col += 1;
            }
            if r + td.rowspan > n_rows {
                return Err(TableError::Geometry(format!(
                    "rowspan {} at row {r} runs past the last row",
                    td.rowspan
                )));
            }
            let end_col = col + td.colspan - 1;
            if occupied.len() <= end_col {
                occupied.resize(end_col + 1, 0);
            }
            if let Some(c) = (col..=end_col).find(|&c| occupied[c] > 0) {
                return Err(TableError::Geometry(format!(
                    "cell at row {r} collides with a rowspan in column {c}"
                )));
            }
            for slot in &mut occupied[col..=end_col] {
                *slot = td.rowspan;
            }
            cells.push(LogicalCell {
                start_row: r,
                end_row: r + td.rowspan - 1,
                start_col: col,
                end_col,
                content: td.content.clone(),
            });
            col = end_col + 1;
        }
        for slot in &mut occupied {
            *slot = slot.saturating_sub(1);
        }
    }
    Ok(LogicalTable::new(id, cells).sorted())
}
