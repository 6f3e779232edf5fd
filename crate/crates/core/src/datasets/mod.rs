//! Canonical rationale-annotated datasets.
//!
//! On disk a dataset is JSONL: the first line is a header record
//! `{"name", "task", "label_names"}` and every following line is one
//! [`CanonicalInstance`]. Instance rows are numbered from 1 in error messages;
//! the header is row 0.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::SEP_TOKEN;
use crate::error::{Error, Result};

pub mod align;
pub mod convert;

pub use align::{align_rationale, project, WordScores, WordTokenAlignment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Sentiment,
    HateSpeech,
    Nli,
}

/// Human rationale: one flag per whitespace word of the instance text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RationaleMask(pub Vec<bool>);

impl RationaleMask {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }
}

impl Serialize for RationaleMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.0.iter().map(|b| u8::from(*b)))
    }
}

impl<'de> Deserialize<'de> for RationaleMask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<u8>::deserialize(d)?;
        raw.into_iter()
            .map(|v| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(serde::de::Error::custom(format!(
                    "rationale entries must be 0 or 1, got {other}"
                ))),
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(RationaleMask)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalInstance {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_pair: Option<(String, String)>,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<RationaleMask>,
}

impl CanonicalInstance {
    pub fn single(
        id: impl Into<String>,
        text: impl Into<String>,
        label: usize,
        rationale: Option<Vec<bool>>,
    ) -> Self {
        Self {
            id: id.into(),
            text: Some(text.into()),
            text_pair: None,
            label,
            rationale: rationale.map(RationaleMask),
        }
    }

    pub fn pair(
        id: impl Into<String>,
        premise: impl Into<String>,
        hypothesis: impl Into<String>,
        label: usize,
        rationale: Option<Vec<bool>>,
    ) -> Self {
        Self {
            id: id.into(),
            text: None,
            text_pair: Some((premise.into(), hypothesis.into())),
            label,
            rationale: rationale.map(RationaleMask),
        }
    }

    /// Model input text; sentence pairs are joined with `" [SEP] "`.
    pub fn text(&self) -> String {
        match (&self.text, &self.text_pair) {
            (Some(t), _) => t.clone(),
            (None, Some((p, h))) => format!("{p} {SEP_TOKEN} {h}"),
            (None, None) => String::new(),
        }
    }

    pub fn words(&self) -> Vec<String> {
        self.text().split_whitespace().map(str::to_string).collect()
    }

    fn validate(&self, n_classes: usize, row: usize) -> Result<()> {
        let violation = |message: String| Error::InvariantViolation { row, message };
        match (&self.text, &self.text_pair) {
            (Some(_), Some(_)) => {
                return Err(violation("both text and text_pair given".into()));
            }
            (None, None) => return Err(violation("missing text".into())),
            _ => {}
        }
        let n_words = self.words().len();
        if n_words == 0 {
            return Err(violation(format!("instance {:?} has empty text", self.id)));
        }
        if self.label >= n_classes {
            return Err(violation(format!(
                "label {} out of range for {} classes",
                self.label, n_classes
            )));
        }
        if let Some(r) = &self.rationale {
            if r.len() != n_words {
                return Err(violation(format!(
                    "rationale has {} entries for {} words",
                    r.len(),
                    n_words
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    name: String,
    task: Task,
    label_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub task: Task,
    pub label_names: Vec<String>,
    pub instances: Vec<CanonicalInstance>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.label_names.is_empty() {
            return Err(Error::InvariantViolation {
                row: 0,
                message: "no label names".into(),
            });
        }
        let mut seen = HashSet::new();
        for (i, inst) in self.instances.iter().enumerate() {
            let row = i + 1;
            inst.validate(self.label_names.len(), row)?;
            if !seen.insert(inst.id.as_str()) {
                return Err(Error::InvariantViolation {
                    row,
                    message: format!("duplicate id {:?}", inst.id),
                });
            }
        }
        Ok(())
    }

    pub fn parse_jsonl(content: &str) -> Result<Self> {
        let mut lines = content
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header_line) = lines.next().ok_or(Error::Parse {
            row: 0,
            message: "missing header record".into(),
        })?;
        let header: Header = serde_json::from_str(header_line).map_err(|e| Error::Parse {
            row: 0,
            message: format!("bad header: {e}"),
        })?;
        let mut instances = Vec::new();
        for (row, (_, line)) in lines.enumerate() {
            let inst: CanonicalInstance = serde_json::from_str(line).map_err(|e| Error::Parse {
                row: row + 1,
                message: e.to_string(),
            })?;
            instances.push(inst);
        }
        let ds = Dataset {
            name: header.name,
            task: header.task,
            label_names: header.label_names,
            instances,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let header = Header {
            name: self.name.clone(),
            task: self.task,
            label_names: self.label_names.clone(),
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for inst in &self.instances {
            out.push_str(&serde_json::to_string(inst)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        w.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }
}

/// Loads and validates a canonical JSONL dataset.
pub fn load_canonical(path: impl AsRef<Path>) -> Result<Dataset> {
    Dataset::parse_jsonl(&fs::read_to_string(path)?)
}

/// Bundled desk-scale fixtures in canonical form.
pub mod fixtures {
    use super::Dataset;

    pub const MOVIES_MINI: &str = include_str!("../../fixtures/movies_mini.jsonl");
    pub const HATEXPLAIN_MINI: &str = include_str!("../../fixtures/hatexplain_mini.jsonl");
    pub const ESNLI_MINI: &str = include_str!("../../fixtures/esnli_mini.jsonl");

    pub fn movies_mini() -> Dataset {
        Dataset::parse_jsonl(MOVIES_MINI).expect("bundled fixture is valid")
    }

    pub fn hatexplain_mini() -> Dataset {
        Dataset::parse_jsonl(HATEXPLAIN_MINI).expect("bundled fixture is valid")
    }

    pub fn esnli_mini() -> Dataset {
        Dataset::parse_jsonl(ESNLI_MINI).expect("bundled fixture is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = r#"{"name":"mini","task":"sentiment","label_names":["neg","pos"]}"#;

    #[test]
    fn loads_valid_fixture() {
        let content = format!(
            "{HEADER}\n{}\n{}\n{}\n",
            r#"{"id":"a","text":"good film","label":1,"rationale":[1,0]}"#,
            r#"{"id":"b","text":"bad film","label":0}"#,
            r#"{"id":"c","text_pair":["x y","z"],"label":0,"rationale":[1,0,0,1]}"#,
        );
        let ds = Dataset::parse_jsonl(&content).unwrap();
        assert_eq!(ds.instances.len(), 3);
        assert_eq!(ds.instances[2].text(), "x y [SEP] z");
        assert_eq!(Dataset::parse_jsonl(&ds.to_jsonl().unwrap()).unwrap(), ds);
    }

    #[test]
    fn rationale_length_mismatch_reports_row() {
        let content = format!(
            "{HEADER}\n{}\n{}\n{}\n",
            r#"{"id":"a","text":"good film","label":1}"#,
            r#"{"id":"b","text":"bad film","label":0,"rationale":[1]}"#,
            r#"{"id":"c","text":"ok","label":0}"#,
        );
        match Dataset::parse_jsonl(&content) {
            Err(Error::InvariantViolation { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_is_named() {
        let content = format!(
            "{HEADER}\n{}\n{}\n",
            r#"{"id":"dup","text":"good film","label":1}"#,
            r#"{"id":"dup","text":"bad film","label":0}"#,
        );
        match Dataset::parse_jsonl(&content) {
            Err(Error::InvariantViolation { row, message }) => {
                assert_eq!(row, 2);
                assert!(message.contains("dup"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_row_is_a_parse_error() {
        let content = format!("{HEADER}\n{{not json\n");
        assert!(matches!(
            Dataset::parse_jsonl(&content),
            Err(Error::Parse { row: 1, .. })
        ));
        assert!(matches!(
            Dataset::parse_jsonl(""),
            Err(Error::Parse { row: 0, .. })
        ));
        let bad_flag = format!(
            "{HEADER}\n{}\n",
            r#"{"id":"a","text":"a b","label":0,"rationale":[2,0]}"#
        );
        assert!(matches!(
            Dataset::parse_jsonl(&bad_flag),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let content = format!("{HEADER}\n{}\n", r#"{"id":"a","text":"a","label":4}"#);
        assert!(matches!(
            Dataset::parse_jsonl(&content),
            Err(Error::InvariantViolation { row: 1, .. })
        ));
    }

    #[test]
    fn bundled_fixtures_load() {
        let m = fixtures::movies_mini();
        assert_eq!(m.instances.len(), 8);
        assert_eq!(m.task, Task::Sentiment);
        assert!(fixtures::hatexplain_mini().instances.len() <= 40);
        let e = fixtures::esnli_mini();
        assert_eq!(e.task, Task::Nli);
        assert!(e.instances.iter().all(|i| i.text_pair.is_some()));
    }
}
