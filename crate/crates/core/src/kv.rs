//! Sectioned key-value text shared by the emitter, sequence, target and run
//! files.
//!
//! ```text
//! # comment
//! [section]
//! key = value   # trailing comment
//! ```
//!
//! Sections may repeat (a sequence file has one `[segment]` per segment).
//! Keys before the first header belong to an unnamed root section.

use std::fmt;

use thiserror::Error;

use crate::units::{self, Unit};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KvError {
    #[error("line {line}, column {col}: {msg}")]
    Syntax {
        line: usize,
        col: usize,
        msg: String,
    },
    #[error("line {line}: key `{key}`: {msg}")]
    Semantic {
        line: usize,
        key: String,
        msg: String,
    },
}

impl KvError {
    pub fn semantic(line: usize, key: &str, msg: impl Into<String>) -> Self {
        KvError::Semantic {
            line,
            key: key.to_string(),
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Document {
    pub sections: Vec<Section>,
}

pub fn parse(text: &str) -> Result<Document, KvError> {
    let mut doc = Document {
        sections: vec![Section {
            name: String::new(),
            line: 0,
            entries: Vec::new(),
        }],
    };

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let trimmed = body.trim();
        if trimmed.is_empty() {
            continue;
        }
        let indent = body.len() - body.trim_start().len();

        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| KvError::Syntax {
                line,
                col: indent + trimmed.len(),
                msg: "section header is missing `]`".into(),
            })?;
            let name = name.trim();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(KvError::Syntax {
                    line,
                    col: indent + 2,
                    msg: format!("invalid section name `{name}`"),
                });
            }
            doc.sections.push(Section {
                name: name.to_string(),
                line,
                entries: Vec::new(),
            });
            continue;
        }

        let eq = trimmed.find('=').ok_or_else(|| KvError::Syntax {
            line,
            col: indent + 1,
            msg: "expected `key = value`".into(),
        })?;
        let key = trimmed[..eq].trim();
        let value = trimmed[eq + 1..].trim();
        if key.is_empty() {
            return Err(KvError::Syntax {
                line,
                col: indent + 1,
                msg: "empty key".into(),
            });
        }
        if let Some(bad) = key.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')) {
            return Err(KvError::Syntax {
                line,
                col: indent + bad + 1,
                msg: format!("invalid character in key `{key}`"),
            });
        }
        if value.is_empty() {
            return Err(KvError::Syntax {
                line,
                col: indent + eq + 2,
                msg: format!("missing value for `{key}`"),
            });
        }
        let section = doc.sections.last_mut().expect("root section");
        if section.entries.iter().any(|e| e.key == key) {
            return Err(KvError::semantic(line, key, "duplicate key"));
        }
        section.entries.push(Entry {
            key: key.to_string(),
            value: value.to_string(),
            line,
        });
    }

    if doc.sections[0].entries.is_empty() {
        doc.sections.remove(0);
    }
    Ok(doc)
}

impl Document {
    pub fn sections_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Section> + 'a {
        self.sections.iter().filter(move |s| s.name == name)
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    /// Rejects any section whose name is not listed.
    pub fn allow_sections(&self, allowed: &[&str]) -> Result<(), KvError> {
        for s in &self.sections {
            if !allowed.contains(&s.name.as_str()) {
                let shown = if s.name.is_empty() { "<root>" } else { &s.name };
                return Err(KvError::Syntax {
                    line: s.line.max(s.entries.first().map_or(0, |e| e.line)),
                    col: 1,
                    msg: format!("unexpected section `{shown}`"),
                });
            }
        }
        Ok(())
    }
}

impl Section {
    pub fn entry(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn has(&self, key: &str) -> bool {
        self.entry(key).is_some()
    }

    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<(), KvError> {
        for e in &self.entries {
            if !allowed.contains(&e.key.as_str()) {
                return Err(KvError::semantic(e.line, &e.key, "unknown key"));
            }
        }
        Ok(())
    }

    fn missing(&self, key: &str) -> KvError {
        KvError::semantic(self.line, key, format!("missing in [{}]", self.name))
    }

    pub fn str(&self, key: &str) -> Result<&str, KvError> {
        self.entry(key)
            .map(|e| e.value.as_str())
            .ok_or_else(|| self.missing(key))
    }

    pub fn opt_str(&self, key: &str) -> Option<&str> {
        self.entry(key).map(|e| e.value.as_str())
    }

    pub fn f64(&self, key: &str, unit: Unit) -> Result<f64, KvError> {
        self.opt_f64(key, unit)?.ok_or_else(|| self.missing(key))
    }

    pub fn opt_f64(&self, key: &str, unit: Unit) -> Result<Option<f64>, KvError> {
        match self.entry(key) {
            None => Ok(None),
            Some(e) => units::parse(&e.value, unit).map(Some).ok_or_else(|| {
                KvError::semantic(
                    e.line,
                    &e.key,
                    format!("`{}` is not a finite number", e.value),
                )
            }),
        }
    }

    pub fn f64_list(&self, key: &str, unit: Unit) -> Result<Vec<f64>, KvError> {
        let e = self.entry(key).ok_or_else(|| self.missing(key))?;
        e.value
            .split(',')
            .map(|item| {
                let item = item.trim();
                units::parse(item, unit).ok_or_else(|| {
                    KvError::semantic(e.line, &e.key, format!("`{item}` is not a number"))
                })
            })
            .collect()
    }

    pub fn opt_u64(&self, key: &str) -> Result<Option<u64>, KvError> {
        match self.entry(key) {
            None => Ok(None),
            Some(e) => e.value.parse::<u64>().map(Some).map_err(|_| {
                KvError::semantic(
                    e.line,
                    &e.key,
                    format!("`{}` is not a non-negative integer", e.value),
                )
            }),
        }
    }

    pub fn u64(&self, key: &str) -> Result<u64, KvError> {
        self.opt_u64(key)?.ok_or_else(|| self.missing(key))
    }

    pub fn opt_bool(&self, key: &str) -> Result<Option<bool>, KvError> {
        match self.entry(key) {
            None => Ok(None),
            Some(e) => match e.value.as_str() {
                "true" | "yes" | "1" => Ok(Some(true)),
                "false" | "no" | "0" => Ok(Some(false)),
                other => Err(KvError::semantic(
                    e.line,
                    &e.key,
                    format!("`{other}` is not a boolean"),
                )),
            },
        }
    }

    pub fn line_of(&self, key: &str) -> usize {
        self.entry(key).map_or(self.line, |e| e.line)
    }
}

/// Incremental writer producing canonical text.
#[derive(Debug, Default)]
pub struct Writer {
    out: String,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn comment(&mut self, text: &str) -> &mut Self {
        for l in text.lines() {
            self.out.push_str("# ");
            self.out.push_str(l);
            self.out.push('\n');
        }
        self
    }

    pub fn section(&mut self, name: &str) -> &mut Self {
        if !self.out.is_empty() && !self.out.ends_with("\n\n") {
            self.out.push('\n');
        }
        self.out.push('[');
        self.out.push_str(name);
        self.out.push_str("]\n");
        self
    }

    pub fn raw(&mut self, key: &str, value: impl fmt::Display) -> &mut Self {
        self.out.push_str(&format!("{key} = {value}\n"));
        self
    }

    pub fn num(&mut self, key: &str, si: f64, unit: Unit) -> &mut Self {
        let v = units::format(si, unit);
        self.raw(key, v)
    }

    pub fn finish(self) -> String {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_repeated_sections_and_comments() {
        let doc = parse("top = 1\n[a]\nx = 2 # c\n\n[a]\nx = 3\n").unwrap();
        assert_eq!(doc.sections.len(), 3);
        assert_eq!(doc.sections_named("a").count(), 2);
        assert_eq!(doc.sections[2].entries[0].value, "3");
        assert_eq!(doc.sections[2].entries[0].line, 6);
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse("[ok]\n  novalue\n").unwrap_err();
        assert_eq!(
            err,
            KvError::Syntax {
                line: 2,
                col: 3,
                msg: "expected `key = value`".into()
            }
        );
        assert!(matches!(
            parse("[open\n"),
            Err(KvError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            parse("a b = 1\n"),
            Err(KvError::Syntax {
                line: 1,
                col: 2,
                ..
            })
        ));
    }

    #[test]
    fn duplicate_and_unknown_keys() {
        assert!(matches!(
            parse("a = 1\na = 2\n"),
            Err(KvError::Semantic { line: 2, .. })
        ));
        let doc = parse("[s]\nfoo = 1\nbar = 2\n").unwrap();
        let err = doc.sections[0].reject_unknown(&["foo"]).unwrap_err();
        assert_eq!(err, KvError::semantic(3, "bar", "unknown key"));
    }

    #[test]
    fn typed_getters() {
        let doc = parse("[s]\np = 5\nl = 1, 2.5 ,3\nb = true\nn = x\n").unwrap();
        let s = &doc.sections[0];
        assert_eq!(s.f64("p", Unit::Nanowatt).unwrap(), 5e-9);
        assert_eq!(
            s.f64_list("l", Unit::Unitless).unwrap(),
            vec![1.0, 2.5, 3.0]
        );
        assert_eq!(s.opt_bool("b").unwrap(), Some(true));
        assert!(s.f64("n", Unit::Unitless).is_err());
        assert!(s.f64("missing", Unit::Unitless).is_err());
    }
}
