//! Parser for the `table`/`tr`/`td` subset of HTML.
//!
//! `thead`, `tbody` and `tfoot` wrappers are flattened away and `th` is read
//! as `td`. Any other tag is dropped (its text is kept when inside a cell)
//! and noted as a warning. In lenient mode, unbalanced structure is repaired
//! by auto-closing elements, and each repair is recorded.

use super::{unescape_content, MarkupCell, MarkupRow, MarkupTree, TableError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    Strict,
    #[default]
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseOutcome {
    pub tree: MarkupTree,
    pub warnings: Vec<ParseWarning>,
    /// One entry per auto-close or ignored stray tag (lenient mode only).
    pub repairs: Vec<ParseWarning>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Before,
    InTable,
    InRow,
    InCell,
    Done,
}

#[derive(Debug)]
enum Token<'a> {
    Open { name: String, attrs: Vec<(String, String)> },
    Close { name: String },
    Text(&'a str),
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    mode: ParseMode,
    state: State,
    rows: Vec<MarkupRow>,
    cell: Option<MarkupCell>,
    warnings: Vec<ParseWarning>,
    repairs: Vec<ParseWarning>,
}

pub fn parse_markup(text: &str, mode: ParseMode) -> Result<ParseOutcome, TableError> {
    let mut parser = Parser {
        src: text,
        pos: 0,
        mode,
        state: State::Before,
        rows: Vec::new(),
        cell: None,
        warnings: Vec::new(),
        repairs: Vec::new(),
    };
    parser.run()?;
    Ok(ParseOutcome {
        tree: MarkupTree { rows: parser.rows },
        warnings: parser.warnings,
        repairs: parser.repairs,
    })
}

impl<'a> Parser<'a> {
    fn run(&mut self) -> Result<(), TableError> {
        while self.state != State::Done {
            let offset = self.pos;
            let Some(token) = self.next_token()? else {
                break;
            };
            self.handle(token, offset)?;
        }
        match self.state {
            State::Before => Err(TableError::Empty),
            State::Done => Ok(()),
            _ => {
                let offset = self.src.len();
                self.malformed(offset, "input ended inside the table")?;
                self.close_cell(offset, true);
                self.close_row(offset, true);
                self.state = State::Done;
                Ok(())
            }
        }
    }

    fn malformed(&mut self, offset: usize, message: &str) -> Result<(), TableError> {
        match self.mode {
            ParseMode::Strict => Err(TableError::Parse {
                offset,
                message: message.to_string(),
            }),
            ParseMode::Lenient => Ok(()),
        }
    }

    fn repair(&mut self, offset: usize, message: impl Into<String>) {
        self.repairs.push(ParseWarning {
            offset,
            message: message.into(),
        });
    }

    fn warn(&mut self, offset: usize, message: impl Into<String>) {
        self.warnings.push(ParseWarning {
            offset,
            message: message.into(),
        });
    }

    fn close_cell(&mut self, offset: usize, repaired: bool) {
        if let Some(cell) = self.cell.take() {
            if repaired {
                self.repair(offset, "auto-closed <td>");
            }
            match self.rows.last_mut() {
                Some(row) => row.cells.push(cell),
                None => self.rows.push(MarkupRow { cells: vec![cell] }),
            }
            self.state = State::InRow;
        }
    }

    fn close_row(&mut self, offset: usize, repaired: bool) {
        if self.state == State::InRow {
            if repaired {
                self.repair(offset, "auto-closed <tr>");
            }
            self.state = State::InTable;
        }
    }

    fn open_cell(&mut self, attrs: &[(String, String)], offset: usize) -> Result<(), TableError> {
        let mut cell = MarkupCell::new("");
        for (name, value) in attrs {
            match name.as_str() {
                "rowspan" | "colspan" => {
                    let span = match value.trim().parse::<usize>() {
                        Ok(v) if v >= 1 => v,
                        _ => {
                            self.malformed(offset, &format!("invalid {name} value {value:?}"))?;
                            self.warn(offset, format!("invalid {name}={value:?}, using 1"));
                            1
                        }
                    };
                    if name == "rowspan" {
                        cell.rowspan = span;
                    } else {
                        cell.colspan = span;
                    }
                }
                other => self.warn(offset, format!("dropped attribute {other}")),
            }
        }
        self.cell = Some(cell);
        self.state = State::InCell;
        Ok(())
    }

    fn handle(&mut self, token: Token<'a>, offset: usize) -> Result<(), TableError> {
        use State::*;
        match token {
            Token::Text(text) => match self.state {
                InCell => {
                    let unescaped = unescape_content(text);
                    if let Some(cell) = self.cell.as_mut() {
                        cell.content.push_str(&unescaped);
                    }
                }
                InTable | InRow if !text.trim().is_empty() => {
                    self.warn(offset, "dropped text outside a cell");
                }
                _ => {}
            },
            Token::Open { name, attrs } => {
                let name = name.as_str();
                match (self.state, name) {
                    (Before, "table") => self.state = InTable,
                    (Before, _) => {}
                    (_, "table") => {
                        self.malformed(offset, "nested <table>")?;
                        self.warn(offset, "dropped nested <table>");
                    }
                    (InTable, "thead" | "tbody" | "tfoot") => {}
                    (InTable, "tr") => {
                        self.rows.push(MarkupRow::default());
                        self.state = InRow;
                    }
                    (InTable, "td" | "th") => {
                        self.malformed(offset, "<td> outside <tr>")?;
                        self.repair(offset, "opened implicit <tr>");
                        self.rows.push(MarkupRow::default());
                        self.open_cell(&attrs, offset)?;
                    }
                    (InRow, "td" | "th") => self.open_cell(&attrs, offset)?,
                    (InRow, "tr") => {
                        self.malformed(offset, "<tr> inside an open <tr>")?;
                        self.close_row(offset, true);
                        self.rows.push(MarkupRow::default());
                        self.state = InRow;
                    }
                    (InRow, "thead" | "tbody" | "tfoot") => {
                        self.malformed(offset, "section tag inside <tr>")?;
                        self.close_row(offset, true);
                    }
                    (InCell, "td" | "th") => {
                        self.malformed(offset, "<td> inside an open <td>")?;
                        self.close_cell(offset, true);
                        self.open_cell(&attrs, offset)?;
                    }
                    (InCell, "tr") => {
                        self.malformed(offset, "<tr> inside an open <td>")?;
                        self.close_cell(offset, true);
                        self.close_row(offset, true);
                        self.rows.push(MarkupRow::default());
                        self.state = InRow;
                    }
                    (InCell, "thead" | "tbody" | "tfoot") => {
                        self.malformed(offset, "section tag inside <td>")?;
                        self.close_cell(offset, true);
                        self.close_row(offset, true);
                    }
                    (_, other) => self.warn(offset, format!("dropped tag <{other}>")),
                }
            }
            Token::Close { name } => {
                let name = name.as_str();
                match (self.state, name) {
                    (Before, _) => {}
                    (InCell, "td" | "th") => self.close_cell(offset, false),
                    (InRow, "tr") => self.close_row(offset, false),
                    (InTable, "table") => self.state = Done,
                    (InTable, "thead" | "tbody" | "tfoot") => {}
                    (InCell, "tr") => {
                        self.malformed(offset, "</tr> while <td> is open")?;
                        self.close_cell(offset, true);
                        self.close_row(offset, false);
                    }
                    (InCell | InRow, "table") => {
                        self.malformed(offset, "</table> while elements are open")?;
                        self.close_cell(offset, true);
                        self.close_row(offset, true);
                        self.state = Done;
                    }
                    (InCell | InRow, "thead" | "tbody" | "tfoot") => {
                        self.malformed(offset, "section close while elements are open")?;
                        self.close_cell(offset, true);
                        self.close_row(offset, true);
                    }
                    (_, "td" | "th" | "tr") => {
                        self.malformed(offset, &format!("stray </{name}>"))?;
                        self.repair(offset, format!("ignored stray </{name}>"));
                    }
                    (_, other) => {
                        if other != "table" {
                            self.warn(offset, format!("dropped tag </{other}>"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn next_token(&mut self) -> Result<Option<Token<'a>>, TableError> {
        let rest = &self.src[self.pos..];
        if rest.is_empty() {
            return Ok(None);
        }
        if !rest.starts_with('<') {
            let end = rest.find('<').unwrap_or(rest.len());
            self.pos += end;
            return Ok(Some(Token::Text(&rest[..end])));
        }
        if rest.starts_with("<!--") {
            let end = rest.find("-->").map(|i| i + 3).unwrap_or(rest.len());
            self.pos += end;
            return self.next_token();
        }
        let Some(close) = rest.find('>') else {
            let offset = self.pos;
            self.malformed(offset, "unterminated tag")?;
            self.pos = self.src.len();
            return Ok(None);
        };
        let inner = &rest[1..close];
        self.pos += close + 1;
        if inner.starts_with('!') || inner.starts_with('?') {
            return self.next_token();
        }
        if let Some(name) = inner.strip_prefix('/') {
            return Ok(Some(Token::Close {
                name: name.trim().to_ascii_lowercase(),
            }));
        }
        let inner = inner.trim_end_matches('/');
        let name_end = inner.find(|c: char| c.is_whitespace()).unwrap_or(inner.len());
        let name = inner[..name_end].to_ascii_lowercase();
        let attrs = parse_attributes(&inner[name_end..]);
        Ok(Some(Token::Open { name, attrs }))
    }
}

fn parse_attributes(mut s: &str) -> Vec<(String, String)> {
    let mut attrs = Vec::new();
    loop {
        s = s.trim_start();
        if s.is_empty() {
            break;
        }
        let name_end = s.find(|c: char| c == '=' || c.is_whitespace()).unwrap_or(s.len());
        let name = s[..name_end].to_ascii_lowercase();
        s = s[name_end..].trim_start();
        let value = if let Some(after) = s.strip_prefix('=') {
            let after = after.trim_start();
            let (value, rest) = match after.chars().next() {
                Some(q @ ('"' | '\'')) => {
                    let body = &after[1..];
                    match body.find(q) {
                        Some(end) => (&body[..end], &body[end + 1..]),
                        None => (body, ""),
                    }
                }
                _ => {
                    let end = after.find(|c: char| c.is_whitespace()).unwrap_or(after.len());
                    (&after[..end], &after[end..])
                }
            };
            s = rest;
            value.to_string()
        } else {
            String::new()
        };
        if !name.is_empty() {
            attrs.push((name, value));
        }
    }
    attrs
}
