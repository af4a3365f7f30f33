use log::warn;
use serde_json::Value;

use super::GatewayError;
use crate::imaging::ToolId;
use crate::pipeline::{PlanOrigin, ToolPlan};
use crate::table::{parse_markup, MarkupSequence, MarkupTree, ParseMode};

/// The first `<table ...>` through the following `</table>`, or through the
/// end of the text when the closing tag is missing.
pub fn extract_table_span(raw: &str) -> Option<&str> {
    let lower = raw.to_ascii_lowercase();
    let mut from = 0;
    let start = loop {
        let i = from + lower[from..].find("<table")?;
        let next = lower[i + 6..].chars().next();
        if matches!(
            next,
            Some('>') | Some(' ') | Some('\t') | Some('\n') | Some('\r') | Some('/')
        ) {
            break i;
        }
        from = i + 6;
    };
    let end = lower[start..]
        .find("</table>")
        .map(|e| start + e + "</table>".len())
        .unwrap_or(raw.len());
    Some(&raw[start..end])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedMarkup {
    pub tree: MarkupTree,
    /// Canonical serialization of `tree`.
    pub markup: MarkupSequence,
    pub warnings: Vec<String>,
    pub repairs: usize,
}

/// Pulls the table out of a model response and parses it leniently.
/// Surrounding prose and code fences are ignored.
pub fn parse_markup_response(raw: &str) -> Result<ParsedMarkup, GatewayError> {
    let span = extract_table_span(raw).ok_or(GatewayError::NoTable)?;
    let outcome = parse_markup(span, ParseMode::Lenient).map_err(|_| GatewayError::NoTable)?;
    let markup = outcome.tree.to_normalized_markup();
    Ok(ParsedMarkup {
        markup,
        warnings: outcome
            .warnings
            .iter()
            .chain(&outcome.repairs)
            .map(|w| format!("offset {}: {}", w.offset, w.message))
            .collect(),
        repairs: outcome.repairs.len(),
        tree: outcome.tree,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanParse {
    /// Between 1 and N plans, each at most L steps.
    pub plans: Vec<ToolPlan>,
    pub warnings: Vec<String>,
}

fn strip_fences(raw: &str) -> String {
    raw.lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Candidate step lists from a JSON array anywhere in the text.
fn json_plans(text: &str) -> Option<Vec<Vec<String>>> {
    let start = text.find('[')?;
    let end = text.rfind(']')?;
    if end <= start {
        return None;
    }
    let value: Value = serde_json::from_str(&text[start..=end]).ok()?;
    let items = value.as_array()?;
    let mut plans = Vec::new();
    // a flat list of tool names is one plan
    if items.iter().all(Value::is_string) && !items.is_empty() {
        let names: Vec<String> = items.iter().filter_map(|v| v.as_str().map(String::from)).collect();
        if names.iter().all(|n| !n.contains(|c| SEPARATORS.contains(&c))) {
            return Some(vec![names]);
        }
    }
    for item in items {
        let steps = match item {
            Value::Array(steps) => steps.iter().filter_map(|s| s.as_str().map(String::from)).collect(),
            Value::String(s) => split_steps(s),
            Value::Object(map) => ["steps", "plan", "tools"]
                .iter()
                .find_map(|k| map.get(*k).and_then(Value::as_array))
                .map(|a| a.iter().filter_map(|s| s.as_str().map(String::from)).collect())
                .unwrap_or_default(),
            _ => continue,
        };
        plans.push(steps);
    }
    Some(plans)
}

const SEPARATORS: [char; 5] = [',', ';', '|', '→', '>'];

fn split_steps(line: &str) -> Vec<String> {
    line.replace("->", ">")
        .replace("=>", ">")
        .split(|c| SEPARATORS.contains(&c))
        .map(|t| {
            t.trim_matches(|c: char| c.is_whitespace() || "\"'`[](){}*.".contains(c))
                .to_string()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Drops list markers such as `1.`, `-`, `Plan 2:`.
fn strip_line_marker(line: &str) -> &str {
    let mut s = line.trim();
    if let Some(rest) = s.strip_prefix(['-', '*', '•']) {
        s = rest.trim_start();
    }
    let lower = s.to_ascii_lowercase();
    if lower.starts_with("plan") {
        if let Some(i) = s.find(':') {
            return s[i + 1..].trim();
        }
    }
    let digits = s.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &s[digits..];
        if let Some(r) = rest.strip_prefix(['.', ')', ':']) {
            return r.trim();
        }
    }
    s
}

/// Reads candidate tool plans from a model response.
///
/// JSON lists are tried first, then one plan per line. Unknown tool names
/// and consecutive repeats are dropped, plans are cut to `max_len` steps,
/// identical plans are merged, and at most `max_plans` are kept. When
/// nothing usable remains the result is a single empty plan.
pub fn parse_plans_response(raw: &str, max_len: usize, max_plans: usize, known: &[ToolId]) -> PlanParse {
    let mut warnings = Vec::new();
    let text = strip_fences(raw);
    let (candidates, explicit_empty_ok) = match json_plans(&text) {
        Some(p) => (p, true),
        None => (
            text.lines()
                .map(|l| split_steps(strip_line_marker(l)))
                .filter(|steps| steps.iter().any(|s| ToolId::parse(s).is_some()))
                .collect(),
            false,
        ),
    };

    let mut plans: Vec<ToolPlan> = Vec::new();
    for names in candidates {
        let mut steps: Vec<ToolId> = Vec::new();
        for name in &names {
            match ToolId::parse(name).filter(|t| known.contains(t)) {
                Some(t) if steps.last() == Some(&t) => {}
                Some(t) => steps.push(t),
                None => warnings.push(format!("unknown tool {name:?} dropped")),
            }
        }
        if steps.is_empty() && !(names.is_empty() && explicit_empty_ok) {
            continue;
        }
        if steps.len() > max_len {
            warnings.push(format!("plan of {} steps truncated to {max_len}", steps.len()));
            steps.truncate(max_len);
        }
        let plan = ToolPlan {
            steps,
            origin: PlanOrigin::ModelGenerated,
        };
        if plans.iter().any(|p| p.steps == plan.steps) {
            continue;
        }
        plans.push(plan);
    }
    if plans.len() > max_plans {
        warnings.push(format!("{} plans parsed, keeping {max_plans}", plans.len()));
        plans.truncate(max_plans.max(1));
    }
    if plans.is_empty() {
        warn!("no usable plan in model response; using the empty plan");
        warnings.push("no usable plan parsed".to_string());
        plans.push(ToolPlan::empty());
    }
    PlanParse { plans, warnings }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReflectionParse {
    pub gamma: u8,
    /// False when the response named neither or both images.
    pub parsed: bool,
}

/// `IMAGE_2` (the processed image) accepts the step, `IMAGE_1` rejects it.
/// Anything else rejects.
pub fn parse_reflection_response(raw: &str) -> ReflectionParse {
    let squashed: String = raw
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
        .collect::<String>()
        .to_ascii_uppercase();
    let first = squashed.contains("IMAGE1");
    let second = squashed.contains("IMAGE2");
    match (first, second) {
        (false, true) => ReflectionParse { gamma: 1, parsed: true },
        (true, false) => ReflectionParse { gamma: 0, parsed: true },
        _ => {
            warn!("unparseable reflection verdict {raw:?}; rejecting the step");
            ReflectionParse {
                gamma: 0,
                parsed: false,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE: &str = "<table><tr><td>a</td></tr></table>";

    #[test]
    fn fenced_and_prose_wrapped_tables() {
        let fenced = format!("```html\n{TABLE}\n```");
        assert_eq!(extract_table_span(&fenced), Some(TABLE));
        let prose = format!("Here is the table: {TABLE} Hope this helps.");
        assert_eq!(extract_table_span(&prose), Some(TABLE));
        assert_eq!(parse_markup_response(&prose).unwrap().markup.as_str(), TABLE);
        assert_eq!(
            parse_markup_response("I cannot see a table."),
            Err(GatewayError::NoTable)
        );
        assert_eq!(extract_table_span("<tablex> no"), None);
    }

    #[test]
    fn unclosed_table_is_repaired() {
        let p = parse_markup_response("<table><tr><td>a").unwrap();
        assert!(p.repairs > 0);
        assert_eq!(p.tree.rows.len(), 1);
    }

    #[test]
    fn json_plans() {
        let raw = r#"[["noise_reduce","border_enhance"],["upscale"],["binarize","detect_crop"]]"#;
        let p = parse_plans_response(raw, 4, 3, &ToolId::ALL);
        assert_eq!(p.plans.len(), 3);
        assert_eq!(p.plans[0].steps, vec![ToolId::NoiseReduce, ToolId::BorderEnhance]);
    }

    #[test]
    fn unknown_tools_dropped() {
        let raw = r#"[["upscale","MagicTool","binarize"]]"#;
        let p = parse_plans_response(raw, 4, 3, &ToolId::ALL);
        assert_eq!(p.plans[0].steps, vec![ToolId::Upscale, ToolId::Binarize]);
        assert!(!p.warnings.is_empty());
    }

    #[test]
    fn truncation_and_count_limits() {
        let plan = r#"["upscale","binarize","noise_reduce","border_enhance","detect_crop","upscale"]"#;
        let plans: Vec<String> = (0..5)
            .map(|i| {
                plan.replacen(
                    "upscale",
                    ["upscale", "binarize", "detect_crop", "noise_reduce", "border_enhance"][i],
                    1,
                )
            })
            .collect();
        let raw = format!("[{}]", plans.join(","));
        let p = parse_plans_response(&raw, 4, 3, &ToolId::ALL);
        assert_eq!(p.plans.len(), 3);
        assert!(p.plans.iter().all(|pl| pl.steps.len() <= 4));
    }

    #[test]
    fn line_plans_and_garbage() {
        let raw = "Plan 1: Noise Reduction -> Binarization\n2. upscale, border_enhance\nThanks!";
        let p = parse_plans_response(raw, 4, 3, &ToolId::ALL);
        assert_eq!(p.plans.len(), 2);
        assert_eq!(p.plans[1].steps, vec![ToolId::Upscale, ToolId::BorderEnhance]);
        let g = parse_plans_response("no idea", 4, 3, &ToolId::ALL);
        assert_eq!(g.plans, vec![ToolPlan::empty()]);
    }

    #[test]
    fn consecutive_duplicates_and_restricted_tools() {
        let p = parse_plans_response(r#"[["binarize","binarize","upscale"]]"#, 4, 3, &[ToolId::Binarize]);
        assert_eq!(p.plans[0].steps, vec![ToolId::Binarize]);
    }

    #[test]
    fn explicit_empty_plan_is_kept() {
        let p = parse_plans_response(r#"[[], ["upscale"]]"#, 4, 3, &ToolId::ALL);
        assert_eq!(p.plans.len(), 2);
        assert!(p.plans[0].steps.is_empty());
    }

    #[test]
    fn reflection_verdicts() {
        assert_eq!(parse_reflection_response("IMAGE_2").gamma, 1);
        assert_eq!(parse_reflection_response(" image_1 ").gamma, 0);
        let r = parse_reflection_response("both look fine");
        assert_eq!((r.gamma, r.parsed), (0, false));
        assert!(!parse_reflection_response("IMAGE_1 or IMAGE_2").parsed);
    }
}
