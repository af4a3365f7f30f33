use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::BenchError;
use crate::gateway::TemplateId;
use crate::table::LogicalTable;
use crate::teds::{exact_accuracy, micro_f1, normalize_text, Answer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TaskKind {
    Vtsd,
    Irdr,
    Icdr,
    Mcd,
    Ccr,
    Icr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MetricKind {
    Acc,
    F1,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::Vtsd,
        TaskKind::Irdr,
        TaskKind::Icdr,
        TaskKind::Mcd,
        TaskKind::Ccr,
        TaskKind::Icr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Vtsd => "VTSD",
            TaskKind::Irdr => "IRDR",
            TaskKind::Icdr => "ICDR",
            TaskKind::Mcd => "MCD",
            TaskKind::Ccr => "CCR",
            TaskKind::Icr => "ICR",
        }
    }

    pub fn template(self) -> TemplateId {
        match self {
            TaskKind::Vtsd => TemplateId::VTSD,
            TaskKind::Irdr => TemplateId::IRDR,
            TaskKind::Icdr => TemplateId::ICDR,
            TaskKind::Mcd => TemplateId::MCD,
            TaskKind::Ccr => TemplateId::CCR,
            TaskKind::Icr => TemplateId::ICR,
        }
    }

    pub fn metric(self) -> MetricKind {
        match self {
            TaskKind::Irdr | TaskKind::Icdr | TaskKind::Mcd => MetricKind::F1,
            _ => MetricKind::Acc,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| BenchError::UnknownTask(s.to_string()))
    }
}

/// Task parameters. Row and column numbers are 1-based, as shown to the
/// model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TaskQuery {
    None,
    Row { row: usize },
    Column { col: usize },
    Content { content: String },
    Location { row: usize, col: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierTask {
    pub kind: TaskKind,
    pub sample_id: String,
    pub query: TaskQuery,
    pub gold: Answer,
}

impl HierTask {
    /// Placeholder values for the task's prompt template.
    pub fn bindings(&self) -> BTreeMap<String, String> {
        let mut b = BTreeMap::new();
        match &self.query {
            TaskQuery::None => {}
            TaskQuery::Row { row } => {
                b.insert("row_index".into(), row.to_string());
            }
            TaskQuery::Column { col } => {
                b.insert("col_index".into(), col.to_string());
            }
            TaskQuery::Content { content } => {
                b.insert("cell_content".into(), content.clone());
            }
            TaskQuery::Location { row, col } => {
                b.insert("cell_location".into(), format!("row {row}, column {col}"));
            }
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub kinds: Vec<TaskKind>,
    /// Row indices sampled per table for row content tasks.
    pub rows_per_table: usize,
    /// Column indices sampled per table for column content tasks.
    pub cols_per_table: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            kinds: TaskKind::ALL.to_vec(),
            rows_per_table: 1,
            cols_per_table: 1,
        }
    }
}

fn task_rng(seed: u64, table_id: &str, kind: TaskKind) -> ChaCha8Rng {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(table_id.as_bytes())
        .chain_update(kind.as_str().as_bytes())
        .finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

fn non_empty(items: impl Iterator<Item = String>) -> Vec<String> {
    items.filter(|s| !normalize_text(s).is_empty()).collect()
}

/// Gold answer for `query` read from `table` (cells must be sorted).
pub fn derive_gold(kind: TaskKind, query: &TaskQuery, table: &LogicalTable) -> Option<Answer> {
    let cells = &table.cells;
    Some(match (kind, query) {
        (TaskKind::Vtsd, TaskQuery::None) => {
            let (rows, cols) = table.dimensions();
            Answer::Size { rows, cols }
        }
        (TaskKind::Irdr, TaskQuery::Row { row }) => Answer::List {
            items: non_empty(
                cells
                    .iter()
                    .filter(|c| c.start_row + 1 == *row)
                    .map(|c| c.content.clone()),
            ),
        },
        (TaskKind::Icdr, TaskQuery::Column { col }) => {
            let mut column: Vec<_> = cells.iter().filter(|c| c.start_col + 1 == *col).collect();
            column.sort_by_key(|c| c.start_row);
            Answer::List {
                items: non_empty(column.into_iter().map(|c| c.content.clone())),
            }
        }
        (TaskKind::Mcd, TaskQuery::None) => Answer::List {
            items: non_empty(cells.iter().filter(|c| c.is_merged()).map(|c| c.content.clone())),
        },
        (TaskKind::Ccr, TaskQuery::Content { content }) => {
            let key = normalize_text(content);
            let mut found = cells.iter().filter(|c| normalize_text(&c.content) == key);
            let cell = found.next()?;
            if found.next().is_some() {
                return None;
            }
            Answer::Location {
                row: cell.start_row + 1,
                col: cell.start_col + 1,
            }
        }
        (TaskKind::Icr, TaskQuery::Location { row, col }) => Answer::Text {
            text: table
                .cell_at(row.checked_sub(1)?, col.checked_sub(1)?)
                .map(|c| c.content.clone())
                .unwrap_or_default(),
        },
        _ => return None,
    })
}

/// Builds the benchmark tasks for one table. The result depends only on
/// the table and `seed`. Content-to-location tasks are skipped, with a note,
/// when no cell has unique non-empty content.
pub fn generate_tasks(
    table: &LogicalTable,
    cfg: &TaskConfig,
    seed: u64,
) -> Result<(Vec<HierTask>, Vec<String>), BenchError> {
    table.validate()?;
    let table = table.clone().sorted();
    let (rows, cols) = table.dimensions();
    if rows == 0 || cols == 0 {
        return Err(BenchError::EmptyTable(table.id.clone()));
    }
    let mut tasks = Vec::new();
    let mut notes = Vec::new();
    for &kind in &cfg.kinds {
        let mut rng = task_rng(seed, &table.id, kind);
        let queries: Vec<TaskQuery> = match kind {
            TaskKind::Vtsd | TaskKind::Mcd => vec![TaskQuery::None],
            TaskKind::Irdr => (0..cfg.rows_per_table)
                .map(|_| TaskQuery::Row {
                    row: rng.gen_range(1..=rows),
                })
                .collect(),
            TaskKind::Icdr => (0..cfg.cols_per_table)
                .map(|_| TaskQuery::Column {
                    col: rng.gen_range(1..=cols),
                })
                .collect(),
            TaskKind::Ccr => {
                let mut counts: HashMap<String, usize> = HashMap::new();
                for c in &table.cells {
                    *counts.entry(normalize_text(&c.content)).or_default() += 1;
                }
                let unique: Vec<&str> = table
                    .cells
                    .iter()
                    .filter(|c| {
                        let k = normalize_text(&c.content);
                        !k.is_empty() && counts[&k] == 1
                    })
                    .map(|c| c.content.as_str())
                    .collect();
                if unique.is_empty() {
                    notes.push(format!("{}: CCR skipped, no cell has unique content", table.id));
                    continue;
                }
                vec![TaskQuery::Content {
                    content: unique[rng.gen_range(0..unique.len())].to_string(),
                }]
            }
            TaskKind::Icr => vec![TaskQuery::Location {
                row: rng.gen_range(1..=rows),
                col: rng.gen_range(1..=cols),
            }],
        };
        for query in queries {
            let gold = derive_gold(kind, &query, &table).ok_or_else(|| BenchError::Inconsistent {
                id: table.id.clone(),
                kind,
            })?;
            tasks.push(HierTask {
                kind,
                sample_id: table.id.clone(),
                query,
                gold,
            });
        }
    }
    Ok((tasks, notes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task: HierTask,
    pub metric: MetricKind,
    pub response_digest: Option<String>,
    pub parsed: Option<Answer>,
    pub parse_failed: bool,
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// The text after the last `ANSWER:` marker, or the whole response.
fn answer_text(response: &str) -> &str {
    let upper = response.to_ascii_uppercase();
    match upper.rfind("ANSWER:") {
        Some(i) => response[i + "ANSWER:".len()..].lines().next().unwrap_or("").trim(),
        None => response.trim(),
    }
}

fn pair(re: &str, text: &str) -> Option<(usize, usize)> {
    let re = Regex::new(re).expect("static regex");
    let c = re.captures(text)?;
    Some((c[1].parse().ok()?, c[2].parse().ok()?))
}

fn json_list(text: &str) -> Option<Vec<String>> {
    let start = text.find('[')?;
    let end = text.rfind(']')?;
    let items: Vec<serde_json::Value> = serde_json::from_str(text.get(start..=end)?).ok()?;
    Some(
        items
            .into_iter()
            .map(|v| match v {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            })
            .collect(),
    )
}

/// Reads the answer for `kind` from a model response.
pub fn parse_answer(kind: TaskKind, response: &str) -> Option<Answer> {
    let text = answer_text(response);
    if text.is_empty() {
        return None;
    }
    match kind {
        TaskKind::Vtsd => pair(r"(?is)rows?\s*[=:]\s*(\d+).*?col(?:umn)?s?\s*[=:]\s*(\d+)", text)
            .map(|(rows, cols)| Answer::Size { rows, cols }),
        TaskKind::Ccr => pair(r"(?is)row\s*[=:]\s*(\d+).*?col(?:umn)?\s*[=:]\s*(\d+)", text)
            .map(|(row, col)| Answer::Location { row, col }),
        TaskKind::Irdr | TaskKind::Icdr | TaskKind::Mcd => json_list(text).map(|items| Answer::List { items }),
        TaskKind::Icr => {
            let t = text.trim();
            let s = serde_json::from_str::<String>(t)
                .unwrap_or_else(|_| t.trim_matches(|c| c == '"' || c == '\'').to_string());
            Some(Answer::Text { text: s })
        }
    }
}

/// Scores a response. Unparseable answers score 0 and are flagged.
pub fn score_task(task: &HierTask, response: &str) -> TaskResult {
    let parsed = parse_answer(task.kind, response);
    let score = match (&parsed, &task.gold) {
        (Some(Answer::List { items: p }), Answer::List { items: g }) => micro_f1(p, g),
        (Some(p), g) => f64::from(exact_accuracy(p, g)),
        (None, _) => 0.0,
    };
    TaskResult {
        task: task.clone(),
        metric: task.kind.metric(),
        response_digest: Some(hex::encode(Sha256::digest(response.as_bytes()))),
        parse_failed: parsed.is_none(),
        parsed,
        score,
        error: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::LogicalCell;

    fn example() -> LogicalTable {
        LogicalTable::new(
            "ex",
            vec![
                LogicalCell::new(0, 0, 0, 1, "A").unwrap(),
                LogicalCell::new(1, 1, 0, 0, "B").unwrap(),
                LogicalCell::new(1, 1, 1, 1, "C").unwrap(),
            ],
        )
    }

    fn grid(rows: usize, cols: usize) -> LogicalTable {
        let cells = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| LogicalCell::new(r, r, c, c, format!("{r}-{c}")).unwrap()))
            .collect();
        LogicalTable::new("grid", cells)
    }

    fn task_of(tasks: &[HierTask], kind: TaskKind) -> &HierTask {
        tasks.iter().find(|t| t.kind == kind).unwrap()
    }

    #[test]
    fn example_table_golds() {
        let (tasks, notes) = generate_tasks(&example(), &TaskConfig::default(), 7).unwrap();
        assert!(notes.is_empty());
        assert_eq!(task_of(&tasks, TaskKind::Vtsd).gold, Answer::Size { rows: 2, cols: 2 });
        assert_eq!(
            task_of(&tasks, TaskKind::Mcd).gold,
            Answer::List {
                items: vec!["A".into()]
            }
        );
    }

    #[test]
    fn unmerged_grid_has_empty_merge_list() {
        let (tasks, _) = generate_tasks(&grid(2, 2), &TaskConfig::default(), 1).unwrap();
        assert_eq!(task_of(&tasks, TaskKind::Mcd).gold, Answer::List { items: vec![] });
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_tasks(&grid(6, 5), &TaskConfig::default(), 99).unwrap();
        let b = generate_tasks(&grid(6, 5), &TaskConfig::default(), 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ccr_skipped_without_unique_content() {
        let cells = vec![
            LogicalCell::new(0, 0, 0, 0, "x").unwrap(),
            LogicalCell::new(0, 0, 1, 1, "x").unwrap(),
        ];
        let (tasks, notes) = generate_tasks(&LogicalTable::new("dup", cells), &TaskConfig::default(), 3).unwrap();
        assert!(tasks.iter().all(|t| t.kind != TaskKind::Ccr));
        assert_eq!(notes.len(), 1);
    }

    #[test]
    fn scoring_examples() {
        let vtsd = HierTask {
            kind: TaskKind::Vtsd,
            sample_id: "s".into(),
            query: TaskQuery::None,
            gold: Answer::Size { rows: 4, cols: 5 },
        };
        assert_eq!(score_task(&vtsd, "rows=4, cols=5").score, 1.0);
        assert_eq!(score_task(&vtsd, "I think...\nANSWER: rows=4, cols=6").score, 0.0);
        let empty = score_task(&vtsd, "");
        assert!(empty.parse_failed);
        assert_eq!(empty.score, 0.0);

        let mcd = HierTask {
            kind: TaskKind::Mcd,
            sample_id: "s".into(),
            query: TaskQuery::None,
            gold: Answer::List {
                items: vec!["a".into(), "b".into(), "c".into()],
            },
        };
        let r = score_task(&mcd, r#"ANSWER: ["a", "b"]"#);
        assert!((r.score - 0.8).abs() < 1e-12);

        let icr = HierTask {
            kind: TaskKind::Icr,
            sample_id: "s".into(),
            query: TaskQuery::Location { row: 1, col: 1 },
            gold: Answer::Text {
                text: "Total  cost".into(),
            },
        };
        assert_eq!(score_task(&icr, "ANSWER: \"Total cost\"").score, 1.0);
        let ccr = HierTask {
            kind: TaskKind::Ccr,
            sample_id: "s".into(),
            query: TaskQuery::Content { content: "x".into() },
            gold: Answer::Location { row: 2, col: 3 },
        };
        assert_eq!(score_task(&ccr, "ANSWER: row=2, col=3").score, 1.0);
        assert_eq!(score_task(&ccr, "ANSWER: row=3, col=2").score, 0.0);
    }

    #[test]
    fn icr_on_merged_position_reads_anchor() {
        let q = TaskQuery::Location { row: 1, col: 2 };
        assert_eq!(
            derive_gold(TaskKind::Icr, &q, &example()),
            Some(Answer::Text { text: "A".into() })
        );
    }

    #[test]
    fn bindings_follow_query() {
        let t = HierTask {
            kind: TaskKind::Icr,
            sample_id: "s".into(),
            query: TaskQuery::Location { row: 2, col: 3 },
            gold: Answer::Text { text: String::new() },
        };
        assert_eq!(t.bindings()["cell_location"], "row 2, column 3");
    }
}
