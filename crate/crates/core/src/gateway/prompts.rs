//! Prompt templates stored as text files with `[system]` and `[user]`
//! sections and `{name}` placeholders. `{{` and `}}` produce literal braces.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TemplateId {
    RecognizeSimple,
    RecognizeCoT,
    VTSD,
    MCD,
    CCR,
    ICR,
    IRDR,
    ICDR,
    PlanGeneration,
    Reflection,
}

impl TemplateId {
    pub const ALL: [TemplateId; 10] = [
        TemplateId::RecognizeSimple,
        TemplateId::RecognizeCoT,
        TemplateId::VTSD,
        TemplateId::MCD,
        TemplateId::CCR,
        TemplateId::ICR,
        TemplateId::IRDR,
        TemplateId::ICDR,
        TemplateId::PlanGeneration,
        TemplateId::Reflection,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::RecognizeSimple => "RecognizeSimple",
            TemplateId::RecognizeCoT => "RecognizeCoT",
            TemplateId::VTSD => "VTSD",
            TemplateId::MCD => "MCD",
            TemplateId::CCR => "CCR",
            TemplateId::ICR => "ICR",
            TemplateId::IRDR => "IRDR",
            TemplateId::ICDR => "ICDR",
            TemplateId::PlanGeneration => "PlanGeneration",
            TemplateId::Reflection => "Reflection",
        }
    }

    /// File name of the template inside a prompt directory.
    pub fn file_name(self) -> &'static str {
        match self {
            TemplateId::RecognizeSimple => "recognize_simple.txt",
            TemplateId::RecognizeCoT => "recognize_cot.txt",
            TemplateId::VTSD => "vtsd.txt",
            TemplateId::MCD => "mcd.txt",
            TemplateId::CCR => "ccr.txt",
            TemplateId::ICR => "icr.txt",
            TemplateId::IRDR => "irdr.txt",
            TemplateId::ICDR => "icdr.txt",
            TemplateId::PlanGeneration => "plan_generation.txt",
            TemplateId::Reflection => "reflection.txt",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            TemplateId::RecognizeSimple => include_str!("../../prompts/recognize_simple.txt"),
            TemplateId::RecognizeCoT => include_str!("../../prompts/recognize_cot.txt"),
            TemplateId::VTSD => include_str!("../../prompts/vtsd.txt"),
            TemplateId::MCD => include_str!("../../prompts/mcd.txt"),
            TemplateId::CCR => include_str!("../../prompts/ccr.txt"),
            TemplateId::ICR => include_str!("../../prompts/icr.txt"),
            TemplateId::IRDR => include_str!("../../prompts/irdr.txt"),
            TemplateId::ICDR => include_str!("../../prompts/icdr.txt"),
            TemplateId::PlanGeneration => include_str!("../../prompts/plan_generation.txt"),
            TemplateId::Reflection => include_str!("../../prompts/reflection.txt"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| GatewayError::Template(format!("unknown template {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

impl PromptTemplate {
    /// Parses the `[system]` / `[user]` section layout.
    pub fn parse(id: TemplateId, text: &str) -> Result<Self, GatewayError> {
        #[derive(PartialEq)]
        enum Section {
            None,
            System,
            User,
        }
        let mut section = Section::None;
        let (mut system, mut user) = (String::new(), String::new());
        let mut has_user = false;
        for line in text.lines() {
            match line.trim() {
                "[system]" => section = Section::System,
                "[user]" => {
                    section = Section::User;
                    has_user = true;
                }
                _ => {
                    let buf = match section {
                        Section::System => &mut system,
                        Section::User => &mut user,
                        Section::None if line.trim().is_empty() => continue,
                        Section::None => return Err(GatewayError::Template(format!("{id}: text outside a section"))),
                    };
                    buf.push_str(line);
                    buf.push('\n');
                }
            }
        }
        if !has_user {
            return Err(GatewayError::Template(format!("{id}: missing [user] section")));
        }
        Ok(Self {
            id,
            system: system.trim_end().to_string(),
            user: user.trim_end().to_string(),
        })
    }

    /// Names of the placeholders used in either section, sorted.
    pub fn placeholders(&self) -> Vec<String> {
        let mut names = Vec::new();
        for part in [&self.system, &self.user] {
            scan(part, |name| {
                names.push(name.to_string());
                Ok(String::new())
            })
            .expect("collecting never fails");
        }
        names.sort();
        names.dedup();
        names
    }

    /// Fails when a placeholder has no binding. Extra bindings are ignored.
    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<RenderedPrompt, GatewayError> {
        let lookup = |name: &str| {
            bindings
                .get(name)
                .cloned()
                .ok_or_else(|| GatewayError::Template(format!("{}: unbound placeholder {{{name}}}", self.id)))
        };
        Ok(RenderedPrompt {
            system: scan(&self.system, lookup)?,
            user: scan(&self.user, lookup)?,
        })
    }
}

fn scan(text: &str, mut value: impl FnMut(&str) -> Result<String, GatewayError>) -> Result<String, GatewayError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(i) = rest.find(['{', '}']) {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        if let Some(after) = tail.strip_prefix("{{") {
            out.push('{');
            rest = after;
        } else if let Some(after) = tail.strip_prefix("}}") {
            out.push('}');
            rest = after;
        } else if let Some(after) = tail.strip_prefix('{') {
            let end = tail.find('}').filter(|&e| {
                let name = &tail[1..e];
                !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
            });
            match end {
                Some(e) => {
                    out.push_str(&value(&tail[1..e])?);
                    rest = &tail[e + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        } else {
            out.push('}');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// All templates, loaded from the built-in set with optional per-file
/// overrides from a directory.
#[derive(Debug, Clone)]
pub struct PromptRegistry {
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

impl PromptRegistry {
    pub fn builtin() -> Self {
        let templates = TemplateId::ALL
            .into_iter()
            .map(|id| {
                (
                    id,
                    PromptTemplate::parse(id, id.builtin()).expect("built-in template parses"),
                )
            })
            .collect();
        Self { templates }
    }

    /// Files in `dir` named like the built-ins replace them.
    pub fn with_overrides(dir: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let mut reg = Self::builtin();
        for id in TemplateId::ALL {
            let path = dir.as_ref().join(id.file_name());
            if path.exists() {
                let text = std::fs::read_to_string(&path)?;
                reg.templates.insert(id, PromptTemplate::parse(id, &text)?);
            }
        }
        Ok(reg)
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }
}

impl Default for PromptRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binding(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn all_builtins_render_without_residue() {
        let reg = PromptRegistry::builtin();
        for id in TemplateId::ALL {
            let t = reg.get(id);
            let b: BTreeMap<String, String> = t
                .placeholders()
                .into_iter()
                .map(|n| (n.clone(), format!("<{n}>")))
                .collect();
            let r = t.render(&b).unwrap();
            for name in t.placeholders() {
                assert!(!r.user.contains(&format!("{{{name}}}")));
            }
            assert!(!r.user.is_empty());
        }
    }

    #[test]
    fn unbound_placeholder_fails() {
        let t = PromptTemplate::parse(TemplateId::VTSD, "[user]\nrow {row_index}").unwrap();
        assert!(t.render(&BTreeMap::new()).is_err());
        let r = t.render(&binding(&[("row_index", "3")])).unwrap();
        assert_eq!(r.user, "row 3");
    }

    #[test]
    fn doubled_braces_are_literal() {
        let t = PromptTemplate::parse(TemplateId::VTSD, "[user]\n{{\"a\": {x}}}").unwrap();
        assert_eq!(t.render(&binding(&[("x", "1")])).unwrap().user, "{\"a\": 1}");
    }

    #[test]
    fn json_examples_in_templates_are_not_placeholders() {
        let reg = PromptRegistry::builtin();
        assert_eq!(
            reg.get(TemplateId::PlanGeneration).placeholders(),
            vec!["L", "N", "neighbor_traits", "tool_descriptions"]
        );
        assert_eq!(reg.get(TemplateId::IRDR).placeholders(), vec!["row_index"]);
    }
}
