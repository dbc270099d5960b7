//! Corpus ingestion: rule documents, dialogue examples and split handling.
//!
//! Input is JSONL, one object per line. The reader is tolerant (unknown
//! fields are preserved) and the writer is strict (known fields in a fixed
//! order, extras appended). Split structure comes from the examples path
//! being a directory containing `train.jsonl`, `dev.jsonl` and `test.jsonl`.

pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One retrievable rule text.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RuleDocument {
    pub doc_id: String,
    pub title: String,
    pub text: String,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FollowUpAnswer {
    Yes,
    No,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HistoryTurn {
    pub follow_up_question: String,
    pub follow_up_answer: FollowUpAnswer,
}

/// Four-way decision label. The index order is fixed and also used for class
/// indices in model outputs and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Yes,
    No,
    Inquire,
    Irrelevant,
}

impl Decision {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        match self {
            Decision::Yes => 0,
            Decision::No => 1,
            Decision::Inquire => 2,
            Decision::Irrelevant => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Decision> {
        match i {
            0 => Some(Decision::Yes),
            1 => Some(Decision::No),
            2 => Some(Decision::Inquire),
            3 => Some(Decision::Irrelevant),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Yes => "Yes",
            Decision::No => "No",
            Decision::Inquire => "Inquire",
            Decision::Irrelevant => "Irrelevant",
        }
    }
}

/// One flattened dialogue example.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DialogueExample {
    pub utterance_id: String,
    pub tree_id: String,
    pub gold_doc_id: String,
    pub question: String,
    #[serde(default)]
    pub scenario: String,
    #[serde(default)]
    pub history: Vec<HistoryTurn>,
    #[serde(default)]
    pub evidence: Vec<String>,
    pub decision: Decision,
    #[serde(default)]
    pub gold_follow_up: Option<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl DialogueExample {
    fn validate(&self) -> Result<()> {
        let needs_follow_up = self.decision == Decision::Inquire;
        let has_follow_up = self
            .gold_follow_up
            .as_ref()
            .map(|q| !q.trim().is_empty())
            .unwrap_or(false);
        if needs_follow_up && !has_follow_up {
            return Err(Error::InvalidExample {
                utterance_id: self.utterance_id.clone(),
                message: "decision is Inquire but gold_follow_up is missing".into(),
            });
        }
        if !needs_follow_up && has_follow_up {
            return Err(Error::InvalidExample {
                utterance_id: self.utterance_id.clone(),
                message: format!(
                    "gold_follow_up present but decision is {}",
                    self.decision.as_str()
                ),
            });
        }
        Ok(())
    }
}

/// Train/dev/test examples plus the set of rule documents seen in training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<DialogueExample>,
    pub dev: Vec<DialogueExample>,
    pub test: Vec<DialogueExample>,
    pub seen_doc_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSet {
    Dev,
    Test,
}

impl CorpusSplit {
    pub fn new(
        train: Vec<DialogueExample>,
        dev: Vec<DialogueExample>,
        test: Vec<DialogueExample>,
    ) -> Self {
        let seen_doc_ids = train.iter().map(|e| e.gold_doc_id.clone()).collect();
        CorpusSplit {
            train,
            dev,
            test,
            seen_doc_ids,
        }
    }

    pub fn eval_set(&self, which: EvalSet) -> &[DialogueExample] {
        match which {
            EvalSet::Dev => &self.dev,
            EvalSet::Test => &self.test,
        }
    }
}

/// Split one evaluation set of `split` into (seen, unseen) by whether the
/// gold document occurred in training.
pub fn partition_seen_unseen(
    split: &CorpusSplit,
    which: EvalSet,
) -> (Vec<&DialogueExample>, Vec<&DialogueExample>) {
    let mut seen = Vec::new();
    let mut unseen = Vec::new();
    for ex in split.eval_set(which) {
        if split.seen_doc_ids.contains(&ex.gold_doc_id) {
            seen.push(ex);
        } else {
            unseen.push(ex);
        }
    }
    (seen, unseen)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&display, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: T = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            path: display.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Load and validate rule documents from a JSONL file.
pub fn load_rules(path: &Path) -> Result<Vec<RuleDocument>> {
    let rules: Vec<RuleDocument> = read_jsonl(path)?;
    if rules.is_empty() {
        return Err(Error::EmptyCorpus(path.display().to_string()));
    }
    let mut seen = BTreeSet::new();
    for rule in &rules {
        if rule.text.trim().is_empty() {
            return Err(Error::InvalidExample {
                utterance_id: rule.doc_id.clone(),
                message: "rule text is empty".into(),
            });
        }
        if !seen.insert(rule.doc_id.clone()) {
            return Err(Error::DuplicateDocId(rule.doc_id.clone()));
        }
    }
    Ok(rules)
}

fn load_examples(path: &Path, doc_ids: &BTreeSet<String>) -> Result<Vec<DialogueExample>> {
    let examples: Vec<DialogueExample> = read_jsonl(path)?;
    for ex in &examples {
        ex.validate()?;
        if !doc_ids.contains(&ex.gold_doc_id) {
            return Err(Error::UnknownDocId(ex.gold_doc_id.clone()));
        }
    }
    Ok(examples)
}

/// Load rules and the three example splits.
///
/// `examples_path` must be a directory containing `train.jsonl`, `dev.jsonl`
/// and `test.jsonl` (any of which may be missing and is then treated as
/// empty, except `train.jsonl` which is required).
pub fn load_corpus(rules_path: &Path, examples_path: &Path) -> Result<(Vec<RuleDocument>, CorpusSplit)> {
    let rules = load_rules(rules_path)?;
    let doc_ids: BTreeSet<String> = rules.iter().map(|r| r.doc_id.clone()).collect();
    if !examples_path.is_dir() {
        return Err(Error::InvalidArgument(format!(
            "examples path {} must be a directory containing train.jsonl/dev.jsonl/test.jsonl",
            examples_path.display()
        )));
    }
    let load_split = |name: &str, required: bool| -> Result<Vec<DialogueExample>> {
        let p = examples_path.join(name);
        if p.exists() {
            load_examples(&p, &doc_ids)
        } else if required {
            Err(Error::io(
                p.display().to_string(),
                std::io::Error::new(std::io::ErrorKind::NotFound, "missing split file"),
            ))
        } else {
            Ok(Vec::new())
        }
    };
    let train = load_split("train.jsonl", true)?;
    let dev = load_split("dev.jsonl", false)?;
    let test = load_split("test.jsonl", false)?;
    Ok((rules, CorpusSplit::new(train, dev, test)))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let display = path.display().to_string();
    let mut file = File::create(path).map_err(|e| Error::io(&display, e))?;
    for item in items {
        let line = serde_json::to_string(item)?;
        writeln!(file, "{line}").map_err(|e| Error::io(&display, e))?;
    }
    Ok(())
}

/// Write rules and examples back out in canonical form.
pub fn save_corpus(
    rules_path: &Path,
    examples_dir: &Path,
    rules: &[RuleDocument],
    split: &CorpusSplit,
) -> Result<()> {
    write_jsonl(rules_path, rules)?;
    std::fs::create_dir_all(examples_dir)
        .map_err(|e| Error::io(examples_dir.display().to_string(), e))?;
    write_jsonl(&examples_dir.join("train.jsonl"), &split.train)?;
    write_jsonl(&examples_dir.join("dev.jsonl"), &split.dev)?;
    write_jsonl(&examples_dir.join("test.jsonl"), &split.test)?;
    Ok(())
}
