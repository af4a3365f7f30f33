//! Tree-edit-distance similarity (TEDS) for table markup, plus the accuracy
//! and micro-F1 scorers used by the hierarchical benchmark tasks.
//!
//! TEDS compares two `table → tr → td` trees:
//!
//! ```text
//! TEDS(a, b) = 1 - EditDist(a, b) / max(|a|, |b|)
//! ```
//!
//! Insertions and deletions cost 1. Relabeling costs 1 when tags differ or
//! when two cells have different spans; two cells with equal spans cost the
//! normalized Levenshtein distance of their text. TEDS-Struct is the same
//! computation with text ignored.

mod metrics;
mod zhang_shasha;

pub use metrics::{exact_accuracy, levenshtein, micro_f1, normalize_text, normalized_levenshtein, Answer, F1Counts};
pub use zhang_shasha::{edit_distance, EditCosts, OrderedTree};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::MarkupTree;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TedsError {
    #[error("both trees are empty")]
    Degenerate,
    #[error("invalid cost model: {0}")]
    InvalidCosts(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TedsMode {
    Full,
    StructOnly,
}

/// Node labels of a markup tree as seen by the edit distance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeLabel {
    Table,
    Row,
    Cell {
        rowspan: usize,
        colspan: usize,
        text: Vec<char>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub mode: TedsMode,
    pub insert_cost: f64,
    pub delete_cost: f64,
}

impl CostModel {
    pub fn new(mode: TedsMode) -> Self {
        Self {
            mode,
            insert_cost: 1.0,
            delete_cost: 1.0,
        }
    }

    /// Substitution cost never exceeds 1, so insert and delete costs must
    /// sum to at least 1 and neither may be negative.
    pub fn with_costs(mode: TedsMode, insert_cost: f64, delete_cost: f64) -> Result<Self, TedsError> {
        if !(insert_cost >= 0.0 && delete_cost >= 0.0) || insert_cost + delete_cost < 1.0 {
            return Err(TedsError::InvalidCosts(format!(
                "insert {insert_cost}, delete {delete_cost}"
            )));
        }
        Ok(Self {
            mode,
            insert_cost,
            delete_cost,
        })
    }
}

impl EditCosts<NodeLabel> for CostModel {
    fn insert(&self, _: &NodeLabel) -> f64 {
        self.insert_cost
    }

    fn delete(&self, _: &NodeLabel) -> f64 {
        self.delete_cost
    }

    fn rename(&self, from: &NodeLabel, to: &NodeLabel) -> f64 {
        match (from, to) {
            (NodeLabel::Table, NodeLabel::Table) | (NodeLabel::Row, NodeLabel::Row) => 0.0,
            (
                NodeLabel::Cell {
                    rowspan: r1,
                    colspan: c1,
                    text: t1,
                },
                NodeLabel::Cell {
                    rowspan: r2,
                    colspan: c2,
                    text: t2,
                },
            ) => {
                if r1 != r2 || c1 != c2 {
                    1.0
                } else {
                    match self.mode {
                        TedsMode::StructOnly => 0.0,
                        TedsMode::Full => normalized_levenshtein(t1, t2),
                    }
                }
            }
            _ => 1.0,
        }
    }
}

/// Builds the labeled tree the edit distance runs on.
pub fn to_ordered_tree(tree: &MarkupTree) -> OrderedTree<NodeLabel> {
    let mut out = OrderedTree::new(NodeLabel::Table);
    for row in &tree.rows {
        let r = out.add_child(0, NodeLabel::Row);
        for cell in &row.cells {
            out.add_child(
                r,
                NodeLabel::Cell {
                    rowspan: cell.rowspan,
                    colspan: cell.colspan,
                    text: cell.content.chars().collect(),
                },
            );
        }
    }
    out
}

pub fn tree_edit_distance(a: &MarkupTree, b: &MarkupTree, cost: &CostModel) -> f64 {
    edit_distance(&to_ordered_tree(a), &to_ordered_tree(b), cost)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TedsScore {
    pub value: f64,
    pub edit_distance: f64,
    pub size_a: usize,
    pub size_b: usize,
}

pub fn teds(pred: &MarkupTree, gold: &MarkupTree, mode: TedsMode) -> TedsScore {
    teds_optional(Some(pred), Some(gold), mode).expect("non-empty trees")
}

/// TEDS where either side may be missing (a prediction that produced no
/// table). A missing tree has zero nodes.
pub fn teds_optional(
    pred: Option<&MarkupTree>,
    gold: Option<&MarkupTree>,
    mode: TedsMode,
) -> Result<TedsScore, TedsError> {
    let a = pred.map(to_ordered_tree).unwrap_or_default();
    let b = gold.map(to_ordered_tree).unwrap_or_default();
    let denom = a.len().max(b.len());
    if denom == 0 {
        return Err(TedsError::Degenerate);
    }
    let distance = edit_distance(&a, &b, &CostModel::new(mode));
    Ok(TedsScore {
        value: (1.0 - distance / denom as f64).clamp(0.0, 1.0),
        edit_distance: distance,
        size_a: a.len(),
        size_b: b.len(),
    })
}
