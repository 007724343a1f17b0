//! Prompt templates with `{name}` placeholders.
//!
//! Template bodies are data: built-in defaults are compiled in from the
//! `templates/` directory and any of them can be replaced at runtime by a
//! file of the same name in an override directory.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("missing binding for placeholder {{{0}}}")]
    MissingPlaceholder(String),
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("failed to read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
}

/// A piece of a parsed template body.
enum Segment<'a> {
    Literal(&'a str),
    Placeholder(&'a str),
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_lowercase() || b == b'_'
}

fn is_ident(b: u8) -> bool {
    b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_'
}

// `{` + identifier + `}` is a placeholder; every other brace is literal.
fn segments(body: &str) -> Vec<Segment<'_>> {
    let bytes = body.as_bytes();
    let mut out = Vec::new();
    let mut literal_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' && i + 1 < bytes.len() && is_ident_start(bytes[i + 1]) {
            let mut j = i + 1;
            while j < bytes.len() && is_ident(bytes[j]) {
                j += 1;
            }
            if j < bytes.len() && bytes[j] == b'}' {
                if literal_start < i {
                    out.push(Segment::Literal(&body[literal_start..i]));
                }
                out.push(Segment::Placeholder(&body[i + 1..j]));
                i = j + 1;
                literal_start = i;
                continue;
            }
        }
        i += 1;
    }
    if literal_start < bytes.len() {
        out.push(Segment::Literal(&body[literal_start..]));
    }
    out
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            body: body.into(),
        }
    }

    /// Distinct placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for seg in segments(&self.body) {
            if let Segment::Placeholder(name) = seg {
                if !names.iter().any(|n| n == name) {
                    names.push(name.to_string());
                }
            }
        }
        names
    }

    pub fn render<K, V>(&self, bindings: &HashMap<K, V>) -> Result<String, TemplateError>
    where
        K: std::borrow::Borrow<str> + std::hash::Hash + Eq,
        V: AsRef<str>,
    {
        render(self, bindings)
    }
}

/// Substitute every placeholder with its binding. Binding values are
/// inserted verbatim and never re-scanned.
pub fn render<K, V>(
    template: &PromptTemplate,
    bindings: &HashMap<K, V>,
) -> Result<String, TemplateError>
where
    K: std::borrow::Borrow<str> + std::hash::Hash + Eq,
    V: AsRef<str>,
{
    let mut out = String::with_capacity(template.body.len());
    for seg in segments(&template.body) {
        match seg {
            Segment::Literal(text) => out.push_str(text),
            Segment::Placeholder(name) => {
                let value = bindings
                    .get(name)
                    .ok_or_else(|| TemplateError::MissingPlaceholder(name.to_string()))?;
                out.push_str(value.as_ref());
            }
        }
    }
    Ok(out)
}

const BUILTIN: &[(&str, &str)] = &[
    ("gqr", include_str!("../templates/gqr.txt")),
    ("kwr", include_str!("../templates/kwr.txt")),
    ("par", include_str!("../templates/par.txt")),
    ("cce", include_str!("../templates/cce.txt")),
    ("rewrite", include_str!("../templates/rewrite.txt")),
    ("hyde", include_str!("../templates/hyde.txt")),
    ("fusion", include_str!("../templates/fusion.txt")),
    ("select", include_str!("../templates/select.txt")),
    ("answer", include_str!("../templates/answer.txt")),
    ("judge_relevance", include_str!("../templates/judge_relevance.txt")),
    ("judge_answer", include_str!("../templates/judge_answer.txt")),
];

/// Built-in few-shot demonstrations for strategy selection.
pub const BUILTIN_DEMONSTRATIONS: &str = include_str!("../templates/demonstrations.json");

/// Named templates, keyed by file stem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(name, body)| {
                (
                    name.to_string(),
                    PromptTemplate::new(*name, body.trim_end_matches('\n')),
                )
            })
            .collect();
        Self { templates }
    }

    /// Built-ins overridden by any `<name>.txt` found in `dir`. Extra files
    /// register new templates under their stem.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::builtin();
        let io_err = |source| TemplateError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(io_err)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "txt"))
            .collect();
        entries.sort();
        for path in entries {
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let body = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                path: path.display().to_string(),
                source,
            })?;
            set.insert(PromptTemplate::new(stem, body.trim_end_matches('\n')));
        }
        Ok(set)
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.name.clone(), template);
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate, TemplateError> {
        self.templates
            .get(name)
            .ok_or_else(|| TemplateError::UnknownTemplate(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}
