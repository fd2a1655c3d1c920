//! Sectioned prompt templates with `{placeholder}` substitution.
//!
//! A template file is plain text split into sections by one-line headers:
//!
//! ```text
//! ### Instruction
//! Rewrite the last question ...
//! ### Demonstration
//! {demo_conversation}
//! ### Input
//! {conversation}
//! ```
//!
//! The single `Demonstration` section in a file is the per-example pattern;
//! [`PromptTemplate::with_demonstrations`] expands it into one section per
//! example. `{{` and `}}` are literal braces.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

const SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SectionKind {
    Instruction,
    Demonstration,
    Input,
}

impl SectionKind {
    fn header(self) -> &'static str {
        match self {
            SectionKind::Instruction => "Instruction",
            SectionKind::Demonstration => "Demonstration",
            SectionKind::Input => "Input",
        }
    }
}

impl fmt::Display for SectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.header())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSection {
    pub kind: SectionKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    sections: Vec<PromptSection>,
}

impl PromptTemplate {
    /// Sections must run Instruction → Demonstration* → Input, with exactly
    /// one Instruction and one Input.
    pub fn new(name: impl Into<String>, sections: Vec<PromptSection>) -> Result<Self> {
        let name = name.into();
        let kinds: Vec<SectionKind> = sections.iter().map(|s| s.kind).collect();
        let ok = kinds.first() == Some(&SectionKind::Instruction)
            && kinds.last() == Some(&SectionKind::Input)
            && kinds.len() >= 2
            && kinds[1..kinds.len() - 1]
                .iter()
                .all(|k| *k == SectionKind::Demonstration);
        if !ok {
            return Err(Error::Validation(format!(
                "template `{name}`: sections must be Instruction, Demonstration*, Input (got {kinds:?})"
            )));
        }
        Ok(PromptTemplate { name, sections })
    }

    /// Parses a template file; headers are lines of the form `### <Kind>`.
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut sections: Vec<PromptSection> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if let Some(header) = line.strip_prefix("### ") {
                let kind = match header.trim() {
                    "Instruction" => SectionKind::Instruction,
                    "Demonstration" => SectionKind::Demonstration,
                    "Input" => SectionKind::Input,
                    other => {
                        return Err(Error::parse(
                            format!("template {name} line {}", i + 1),
                            format!("unknown section `{other}`"),
                        ))
                    }
                };
                sections.push(PromptSection {
                    kind,
                    text: String::new(),
                });
            } else if let Some(current) = sections.last_mut() {
                current.text.push_str(line);
                current.text.push('\n');
            } else if !line.trim().is_empty() {
                return Err(Error::parse(
                    format!("template {name} line {}", i + 1),
                    "text before the first section header",
                ));
            }
        }
        for s in &mut sections {
            s.text = s.text.trim_matches('\n').to_string();
        }
        if sections
            .iter()
            .filter(|s| s.kind == SectionKind::Demonstration)
            .count()
            > 1
        {
            return Err(Error::parse(
                format!("template {name}"),
                "at most one Demonstration pattern per file",
            ));
        }
        Self::new(name, sections)
    }

    pub fn sections(&self) -> &[PromptSection] {
        &self.sections
    }

    pub fn demonstration_count(&self) -> usize {
        self.sections
            .iter()
            .filter(|s| s.kind == SectionKind::Demonstration)
            .count()
    }

    /// Replaces the Demonstration pattern with one pre-rendered section per
    /// entry of `examples`, in order. Zero examples drops the pattern.
    pub fn with_demonstrations(&self, examples: &[HashMap<String, String>]) -> Result<Self> {
        let pattern = self
            .sections
            .iter()
            .find(|s| s.kind == SectionKind::Demonstration);
        if pattern.is_none() && !examples.is_empty() {
            return Err(Error::Validation(format!(
                "template `{}` has no Demonstration section",
                self.name
            )));
        }
        let mut sections = Vec::with_capacity(self.sections.len() + examples.len());
        for s in &self.sections {
            if s.kind != SectionKind::Demonstration {
                sections.push(s.clone());
                continue;
            }
            for (i, slots) in examples.iter().enumerate() {
                let mut slots = slots.clone();
                slots.entry("demo_index".into()).or_insert_with(|| (i + 1).to_string());
                let rendered = substitute(&s.text, &slots)?;
                sections.push(PromptSection {
                    kind: SectionKind::Demonstration,
                    text: escape_braces(&rendered),
                });
            }
        }
        PromptTemplate::new(self.name.clone(), sections)
    }
}

/// Renders every section and joins them with one blank line.
pub fn render_prompt(template: &PromptTemplate, slots: &HashMap<String, String>) -> Result<String> {
    let rendered = template
        .sections
        .iter()
        .map(|s| substitute(&s.text, slots))
        .collect::<Result<Vec<String>>>()?;
    Ok(rendered.join(SEPARATOR))
}

pub fn escape_braces(text: &str) -> String {
    text.replace('{', "{{").replace('}', "}}")
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Replaces `{name}` markers; other brace runs pass through untouched.
fn substitute(text: &str, slots: &HashMap<String, String>) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if tail.starts_with("{{") {
            out.push('{');
            rest = &tail[2..];
        } else if tail.starts_with("}}") {
            out.push('}');
            rest = &tail[2..];
        } else if tail.starts_with('{') {
            match tail[1..].find('}') {
                Some(end) if is_ident(&tail[1..1 + end]) => {
                    let name = &tail[1..1 + end];
                    let value = slots
                        .get(name)
                        .ok_or_else(|| Error::MissingSlot(name.to_string()))?;
                    out.push_str(value);
                    rest = &tail[end + 2..];
                }
                _ => {
                    out.push('{');
                    rest = &tail[1..];
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

/// The template files a reformulation experiment needs.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub reformulate: PromptTemplate,
    pub str_response: PromptTemplate,
    pub str_rewrite: PromptTemplate,
    pub sar: PromptTemplate,
    pub select: PromptTemplate,
}

impl TemplateSet {
    pub const FILES: [&'static str; 5] = [
        "reformulate.txt",
        "str_response.txt",
        "str_rewrite.txt",
        "sar.txt",
        "select.txt",
    ];

    /// Default templates shipped in the repository's `templates/` directory.
    pub fn builtin() -> Self {
        let p = |name: &str, text: &str| PromptTemplate::parse(name, text).expect("builtin template parses");
        TemplateSet {
            reformulate: p("reformulate", include_str!("../../../../templates/reformulate.txt")),
            str_response: p("str_response", include_str!("../../../../templates/str_response.txt")),
            str_rewrite: p("str_rewrite", include_str!("../../../../templates/str_rewrite.txt")),
            sar: p("sar", include_str!("../../../../templates/sar.txt")),
            select: p("select", include_str!("../../../../templates/select.txt")),
        }
    }

    /// Loads templates from `dir`; files that are absent fall back to the
    /// built-in text.
    pub fn load(dir: &std::path::Path) -> Result<Self> {
        let builtin = Self::builtin();
        let load = |file: &str, fallback: PromptTemplate| -> Result<PromptTemplate> {
            let path = dir.join(file);
            if !path.exists() {
                return Ok(fallback);
            }
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            PromptTemplate::parse(file.trim_end_matches(".txt"), &text)
        };
        Ok(TemplateSet {
            reformulate: load(Self::FILES[0], builtin.reformulate)?,
            str_response: load(Self::FILES[1], builtin.str_response)?,
            str_rewrite: load(Self::FILES[2], builtin.str_rewrite)?,
            sar: load(Self::FILES[3], builtin.sar)?,
            select: load(Self::FILES[4], builtin.select)?,
        })
    }
}
