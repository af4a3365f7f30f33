use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Trims, collapses internal whitespace runs to one space, and applies NFC.
pub fn normalize_text(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.nfc().collect()
}

pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Levenshtein distance divided by the longer length; 0 for two empty inputs.
pub fn normalized_levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        0.0
    } else {
        levenshtein(a, b) as f64 / longest as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct F1Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl F1Counts {
    /// Multiset matching after [`normalize_text`]: each gold item consumes at
    /// most one equal predicted item.
    pub fn from_items<S: AsRef<str>>(pred: &[S], gold: &[S]) -> Self {
        let mut pool: HashMap<String, usize> = HashMap::new();
        for g in gold {
            *pool.entry(normalize_text(g.as_ref())).or_default() += 1;
        }
        let mut tp = 0;
        for p in pred {
            if let Some(n) = pool.get_mut(&normalize_text(p.as_ref())) {
                if *n > 0 {
                    *n -= 1;
                    tp += 1;
                }
            }
        }
        Self {
            tp,
            fp: pred.len() - tp,
            fn_: gold.len() - tp,
        }
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

impl std::ops::Add for F1Counts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Micro-F1 of a predicted list against a gold list.
///
/// An empty prediction for an empty gold list is a correct answer and scores
/// 1.0; otherwise zero denominators give 0.
pub fn micro_f1<S: AsRef<str>>(pred: &[S], gold: &[S]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    F1Counts::from_items(pred, gold).f1()
}

/// Answer forms of the hierarchical tasks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Answer {
    Size { rows: usize, cols: usize },
    Location { row: usize, col: usize },
    Text { text: String },
    List { items: Vec<String> },
}

/// 1 when the answers agree after normalization, else 0. Lists compare
/// element-wise in order.
pub fn exact_accuracy(pred: &Answer, gold: &Answer) -> u8 {
    let equal = match (pred, gold) {
        (Answer::Size { rows: r1, cols: c1 }, Answer::Size { rows: r2, cols: c2 }) => r1 == r2 && c1 == c2,
        (Answer::Location { row: r1, col: c1 }, Answer::Location { row: r2, col: c2 }) => r1 == r2 && c1 == c2,
        (Answer::Text { text: a }, Answer::Text { text: b }) => normalize_text(a) == normalize_text(b),
        (Answer::List { items: a }, Answer::List { items: b }) => {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| normalize_text(x) == normalize_text(y))
        }
        _ => false,
    };
    u8::from(equal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_examples() {
        assert_eq!(micro_f1(&["a", "b", "c"], &["a", "b", "c"]), 1.0);
        let c = F1Counts::from_items(&["a", "b"], &["a", "b", "c"]);
        assert_eq!(c.precision(), 1.0);
        assert!((c.recall() - 2.0 / 3.0).abs() < 1e-12);
        assert!((micro_f1(&["a", "b"], &["a", "b", "c"]) - 0.8).abs() < 1e-12);
        let empty: [&str; 0] = [];
        assert_eq!(micro_f1(&empty, &["a"]), 0.0);
        assert_eq!(micro_f1(&empty, &empty), 1.0);
    }

    #[test]
    fn f1_is_multiset() {
        let c = F1Counts::from_items(&["a", "a", "a"], &["a", "a"]);
        assert_eq!((c.tp, c.fp, c.fn_), (2, 1, 0));
    }

    #[test]
    fn zero_denominators_give_zero() {
        let c = F1Counts::default();
        assert_eq!((c.precision(), c.recall(), c.f1()), (0.0, 0.0, 0.0));
    }

    #[test]
    fn accuracy_examples() {
        let size = |r, c| Answer::Size { rows: r, cols: c };
        assert_eq!(exact_accuracy(&size(4, 5), &size(4, 5)), 1);
        assert_eq!(exact_accuracy(&size(4, 5), &size(5, 5)), 0);
        let text = |s: &str| Answer::Text { text: s.into() };
        assert_eq!(exact_accuracy(&text(" Total "), &text("Total")), 1);
        assert_eq!(exact_accuracy(&text("Total"), &size(1, 1)), 0);
    }

    #[test]
    fn normalizer_collapses_and_composes() {
        assert_eq!(normalize_text("  a \t\n b  "), "a b");
        // "e" + combining acute composes to U+00E9
        assert_eq!(normalize_text("e\u{301}"), "\u{e9}");
    }

    #[test]
    fn levenshtein_basics() {
        let chars = |s: &str| s.chars().collect::<Vec<_>>();
        assert_eq!(levenshtein(&chars("kitten"), &chars("sitting")), 3);
        assert_eq!(normalized_levenshtein(&chars(""), &chars("")), 0.0);
        assert!((normalized_levenshtein(&chars("abc"), &chars("abd")) - 1.0 / 3.0).abs() < 1e-12);
    }
}
