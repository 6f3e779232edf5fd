//! Converters from the published raw layouts into canonical datasets.
//!
//! * MovieReviews (ERASER layout): `docs/<docid>` holds the whitespace-tokenized
//!   review; annotation files (`annotations.jsonl`, else `train.jsonl`,
//!   `val.jsonl`, `test.jsonl` in that order) hold one record per review with
//!   `classification` (`NEG`/`POS`) and `evidences`. Evidence spans are word
//!   offsets (`start_token`/`end_token`, end exclusive) or character offsets
//!   (`start_char`/`end_char`) into the review text re-joined with single
//!   spaces.
//! * HateXplain: `dataset.json` keyed by post id, each entry with
//!   `post_tokens`, `annotators[].label` and per-annotator token `rationales`.
//!   The label is the annotators' majority; posts without a majority are
//!   skipped. Rationales merge by strict per-token majority vote.
//! * e-SNLI: CSV with `pairID`, `gold_label`, `Sentence1_marked_1` and
//!   `Sentence2_marked_1`, where highlighted words are wrapped in `*`.
//!   An instance with no highlighted word has no rationale.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{CanonicalInstance, Dataset, Task};
use crate::error::{Error, Result};

fn parse_err(row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        row,
        message: message.into(),
    }
}

#[derive(Debug, Deserialize)]
struct MovieAnnotation {
    annotation_id: String,
    classification: String,
    #[serde(default)]
    evidences: Vec<Vec<MovieEvidence>>,
    #[serde(default)]
    docids: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
struct MovieEvidence {
    #[serde(default)]
    docid: Option<String>,
    #[serde(default)]
    start_token: Option<usize>,
    #[serde(default)]
    end_token: Option<usize>,
    #[serde(default)]
    start_char: Option<usize>,
    #[serde(default)]
    end_char: Option<usize>,
}

pub fn convert_movies(raw_dir: impl AsRef<Path>) -> Result<Dataset> {
    let raw_dir = raw_dir.as_ref();
    let candidates = [
        "annotations.jsonl",
        "train.jsonl",
        "val.jsonl",
        "test.jsonl",
    ];
    let files: Vec<_> = if raw_dir.join(candidates[0]).exists() {
        vec![raw_dir.join(candidates[0])]
    } else {
        candidates[1..]
            .iter()
            .map(|f| raw_dir.join(f))
            .filter(|p| p.exists())
            .collect()
    };
    if files.is_empty() {
        return Err(parse_err(
            0,
            format!("no annotation files in {}", raw_dir.display()),
        ));
    }

    let mut instances = Vec::new();
    let mut row = 0;
    for file in files {
        for line in fs::read_to_string(&file)?.lines() {
            if line.trim().is_empty() {
                continue;
            }
            row += 1;
            let ann: MovieAnnotation =
                serde_json::from_str(line).map_err(|e| parse_err(row, e.to_string()))?;
            let label = match ann.classification.to_ascii_uppercase().as_str() {
                "NEG" => 0,
                "POS" => 1,
                _ => return Err(Error::UnknownLabel(ann.classification)),
            };
            let docid = ann
                .docids
                .as_ref()
                .and_then(|d| d.first().cloned())
                .unwrap_or_else(|| ann.annotation_id.clone());
            let doc = fs::read_to_string(raw_dir.join("docs").join(&docid))
                .map_err(|e| parse_err(row, format!("document {docid}: {e}")))?;
            let words: Vec<&str> = doc.split_whitespace().collect();
            let text = words.join(" ");
            let mut starts = Vec::with_capacity(words.len());
            let mut offset = 0;
            for w in &words {
                starts.push(offset);
                offset += w.len() + 1;
            }

            let mut rationale = vec![false; words.len()];
            for ev in ann.evidences.iter().flatten() {
                if ev.docid.as_deref().is_some_and(|d| d != docid) {
                    continue;
                }
                match (ev.start_token, ev.end_token, ev.start_char, ev.end_char) {
                    (Some(s), Some(e), _, _) => {
                        if s > e || e > words.len() {
                            return Err(parse_err(
                                row,
                                format!("token span {s}..{e} out of range"),
                            ));
                        }
                        rationale[s..e].iter_mut().for_each(|r| *r = true);
                    }
                    (_, _, Some(s), Some(e)) => {
                        if s > e || e > text.len() {
                            return Err(parse_err(row, format!("char span {s}..{e} out of range")));
                        }
                        for (i, w) in words.iter().enumerate() {
                            let (ws, we) = (starts[i], starts[i] + w.len());
                            if ws < e && s < we {
                                rationale[i] = true;
                            }
                        }
                    }
                    _ => return Err(parse_err(row, "evidence without span offsets")),
                }
            }
            let rationale = rationale.iter().any(|r| *r).then_some(rationale);
            instances.push(CanonicalInstance::single(
                ann.annotation_id,
                text,
                label,
                rationale,
            ));
        }
    }
    let ds = Dataset {
        name: "movie_reviews".into(),
        task: Task::Sentiment,
        label_names: vec!["negative".into(), "positive".into()],
        instances,
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Debug, Deserialize)]
struct HatePost {
    post_tokens: Vec<String>,
    annotators: Vec<HateAnnotator>,
    #[serde(default)]
    rationales: Vec<Vec<u8>>,
}

#[derive(Debug, Deserialize)]
struct HateAnnotator {
    label: String,
}

const HATE_LABELS: [&str; 3] = ["hatespeech", "normal", "offensive"];

/// Strict per-token majority over annotator masks.
pub fn majority_rationale(masks: &[Vec<u8>]) -> Option<Vec<bool>> {
    let first = masks.first()?;
    let n = first.len();
    Some(
        (0..n)
            .map(|t| {
                let votes = masks
                    .iter()
                    .filter(|m| m.get(t).copied().unwrap_or(0) != 0)
                    .count();
                2 * votes > masks.len()
            })
            .collect(),
    )
}

pub fn convert_hatexplain(raw_file: impl AsRef<Path>) -> Result<Dataset> {
    let content = fs::read_to_string(raw_file)?;
    let posts: BTreeMap<String, HatePost> =
        serde_json::from_str(&content).map_err(|e| parse_err(0, e.to_string()))?;
    let mut instances = Vec::new();
    for (row, (id, post)) in posts.into_iter().enumerate() {
        let row = row + 1;
        let mut counts = [0usize; 3];
        for a in &post.annotators {
            let idx = HATE_LABELS
                .iter()
                .position(|l| *l == a.label)
                .ok_or_else(|| Error::UnknownLabel(a.label.clone()))?;
            counts[idx] += 1;
        }
        let max = *counts.iter().max().unwrap_or(&0);
        if max == 0 || counts.iter().filter(|c| **c == max).count() > 1 {
            continue;
        }
        let label = counts.iter().position(|c| *c == max).expect("max exists");

        if post
            .post_tokens
            .iter()
            .any(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(parse_err(
                row,
                format!("post {id} has an empty or whitespace token"),
            ));
        }
        if post.post_tokens.is_empty() {
            return Err(parse_err(row, format!("post {id} has no tokens")));
        }
        if post
            .rationales
            .iter()
            .any(|r| r.len() != post.post_tokens.len())
        {
            return Err(parse_err(
                row,
                format!("post {id}: rationale length mismatch"),
            ));
        }
        let rationale = majority_rationale(&post.rationales).filter(|r| r.iter().any(|b| *b));
        instances.push(CanonicalInstance::single(
            id,
            post.post_tokens.join(" "),
            label,
            rationale,
        ));
    }
    let ds = Dataset {
        name: "hatexplain".into(),
        task: Task::HateSpeech,
        label_names: HATE_LABELS.iter().map(|s| s.to_string()).collect(),
        instances,
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Debug, Deserialize)]
struct EsnliRow {
    #[serde(rename = "pairID")]
    pair_id: String,
    gold_label: String,
    #[serde(rename = "Sentence1_marked_1")]
    premise_marked: String,
    #[serde(rename = "Sentence2_marked_1")]
    hypothesis_marked: String,
}

const NLI_LABELS: [&str; 3] = ["entailment", "neutral", "contradiction"];

/// Splits a `*`-marked sentence into clean words and highlight flags.
fn unmark(marked: &str) -> (Vec<String>, Vec<bool>) {
    marked
        .split_whitespace()
        .filter_map(|w| {
            let clean: String = w.chars().filter(|c| *c != '*').collect();
            (!clean.is_empty()).then(|| (clean, w.contains('*')))
        })
        .unzip()
}

pub fn convert_esnli(raw_file: impl AsRef<Path>) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(raw_file).map_err(|e| parse_err(0, e.to_string()))?;
    let mut instances = Vec::new();
    for (row, rec) in reader.deserialize::<EsnliRow>().enumerate() {
        let row = row + 1;
        let rec = rec.map_err(|e| parse_err(row, e.to_string()))?;
        let label = NLI_LABELS
            .iter()
            .position(|l| *l == rec.gold_label)
            .ok_or_else(|| Error::UnknownLabel(rec.gold_label.clone()))?;
        let (p_words, p_flags) = unmark(&rec.premise_marked);
        let (h_words, h_flags) = unmark(&rec.hypothesis_marked);
        if p_words.is_empty() || h_words.is_empty() {
            return Err(parse_err(row, "empty premise or hypothesis"));
        }
        let mut rationale = p_flags;
        rationale.push(false);
        rationale.extend(h_flags);
        let rationale = rationale.iter().any(|b| *b).then_some(rationale);
        instances.push(CanonicalInstance::pair(
            rec.pair_id,
            p_words.join(" "),
            h_words.join(" "),
            label,
            rationale,
        ));
    }
    let ds = Dataset {
        name: "esnli".into(),
        task: Task::Nli,
        label_names: NLI_LABELS.iter().map(|s| s.to_string()).collect(),
        instances,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_vote_by_hand() {
        let merged = majority_rationale(&[vec![1, 0, 1], vec![1, 1, 1], vec![0, 0, 1]]).unwrap();
        assert_eq!(merged, vec![true, false, true]);
        assert_eq!(
            majority_rationale(&[vec![1, 0], vec![0, 1]]).unwrap(),
            vec![false, false]
        );
        assert!(majority_rationale(&[]).is_none());
    }

    #[test]
    fn unmark_strips_highlights() {
        let (w, f) = unmark("A *person* on a *horse.*");
        assert_eq!(w, vec!["A", "person", "on", "a", "horse."]);
        assert_eq!(f, vec![false, true, false, false, true]);
    }
}
