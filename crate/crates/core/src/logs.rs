//! Interaction-log and curriculum-file ingestion.
//!
//! Log CSV header: `student_id,question_id,correct,session_id,timestamp`.
//! Curriculum CSV header: `question_id,concept_id`. Lines starting with `#` are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curriculum::{ConceptId, CurriculumMap, LearningHistory, QuestionId};
use crate::error::{Error, Result};

/// Maps external string ids to dense indices in sorted order.
///
/// When every id is an integer the order is numeric, otherwise lexicographic.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdDictionary {
    ids: Vec<String>,
}

impl IdDictionary {
    pub fn from_ids<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = ids.into_iter().map(Into::into).collect();
        let mut ids: Vec<String> = set.into_iter().collect();
        let numeric = ids.iter().all(|s| s.parse::<i64>().is_ok());
        if numeric {
            ids.sort_by_key(|s| s.parse::<i64>().unwrap_or_default());
        }
        Self { ids }
    }

    /// Dense ids `0..n` rendered as decimal strings.
    pub fn dense(n: usize) -> Self {
        Self {
            ids: (0..n).map(|i| i.to_string()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        let numeric = self.ids.iter().all(|s| s.parse::<i64>().is_ok());
        if numeric {
            let key = id.parse::<i64>().ok()?;
            self.ids
                .binary_search_by(|probe| probe.parse::<i64>().unwrap_or_default().cmp(&key))
                .ok()
        } else {
            self.ids.binary_search_by(|probe| probe.as_str().cmp(id)).ok()
        }
    }

    pub fn id_of(&self, index: usize) -> Option<&str> {
        self.ids.get(index).map(String::as_str)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawLogRow {
    pub student_id: String,
    pub question_id: String,
    pub correct: u8,
    pub session_id: String,
    pub timestamp: i64,
}

#[derive(Debug, Deserialize)]
struct LogLine {
    student_id: String,
    question_id: String,
    correct: String,
    session_id: String,
    timestamp: String,
}

pub fn read_log_csv(path: &Path) -> Result<Vec<RawLogRow>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (i, line) in reader.deserialize::<LogLine>().enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| Error::MalformedRow {
            line: line_no,
            reason: e.to_string(),
        })?;
        let correct = line.correct.parse::<u8>().map_err(|_| Error::MalformedRow {
            line: line_no,
            reason: format!("bad correctness value '{}'", line.correct),
        })?;
        let timestamp = line.timestamp.parse::<i64>().map_err(|_| Error::MalformedRow {
            line: line_no,
            reason: format!("unparseable timestamp '{}'", line.timestamp),
        })?;
        rows.push(RawLogRow {
            student_id: line.student_id,
            question_id: line.question_id,
            correct,
            session_id: line.session_id,
            timestamp,
        });
    }
    Ok(rows)
}

pub fn write_log_csv(path: &Path, rows: &[RawLogRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionHistory {
    pub student_id: String,
    pub session_id: String,
    pub history: LearningHistory,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParsedLogs {
    /// One history per `(student_id, session_id)`, sorted by that key.
    pub sessions: Vec<SessionHistory>,
    /// Question ids not present in the dictionary, with occurrence counts.
    pub unknown_questions: BTreeMap<String, usize>,
}

impl ParsedLogs {
    pub fn histories(&self) -> Vec<LearningHistory> {
        self.sessions.iter().map(|s| s.history.clone()).collect()
    }
}

/// Groups rows into per-session histories ordered by `(timestamp, input order)`.
pub fn parse_logs<'a, I>(rows: I, questions: &IdDictionary) -> Result<ParsedLogs>
where
    I: IntoIterator<Item = &'a RawLogRow>,
{
    let mut groups: BTreeMap<(String, String), Vec<(i64, usize, QuestionId, bool)>> = BTreeMap::new();
    let mut unknown = BTreeMap::new();
    for (order, row) in rows.into_iter().enumerate() {
        if row.correct > 1 {
            return Err(Error::MalformedRow {
                line: order + 1,
                reason: format!("correctness must be 0 or 1, got {}", row.correct),
            });
        }
        let Some(q) = questions.index_of(&row.question_id) else {
            *unknown.entry(row.question_id.clone()).or_insert(0) += 1;
            continue;
        };
        groups
            .entry((row.student_id.clone(), row.session_id.clone()))
            .or_default()
            .push((row.timestamp, order, QuestionId(q), row.correct == 1));
    }
    let sessions = groups
        .into_iter()
        .map(|((student_id, session_id), mut recs)| {
            recs.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut history = LearningHistory::new();
            for (_, _, q, y) in recs {
                history.push(q, y);
            }
            SessionHistory {
                student_id,
                session_id,
                history,
            }
        })
        .collect();
    Ok(ParsedLogs {
        sessions,
        unknown_questions: unknown,
    })
}

#[derive(Debug, Deserialize)]
struct EdgeLine {
    question_id: String,
    concept_id: String,
}

#[derive(Clone, Debug)]
pub struct LoadedCurriculum {
    pub map: CurriculumMap,
    pub questions: IdDictionary,
    pub concepts: IdDictionary,
}

pub fn read_curriculum_csv(path: &Path) -> Result<LoadedCurriculum> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut raw = Vec::new();
    for (i, line) in reader.deserialize::<EdgeLine>().enumerate() {
        let line = line.map_err(|e| Error::MalformedRow {
            line: i + 2,
            reason: e.to_string(),
        })?;
        raw.push((line.question_id, line.concept_id));
    }
    let questions = IdDictionary::from_ids(raw.iter().map(|(q, _)| q.clone()));
    let concepts = IdDictionary::from_ids(raw.iter().map(|(_, c)| c.clone()));
    let edges: Vec<_> = raw
        .iter()
        .map(|(q, c)| {
            (
                QuestionId(questions.index_of(q).expect("question id in dictionary")),
                ConceptId(concepts.index_of(c).expect("concept id in dictionary")),
            )
        })
        .collect();
    let map = CurriculumMap::build(concepts.len(), questions.len(), &edges)?;
    Ok(LoadedCurriculum { map, questions, concepts })
}

pub fn write_curriculum_csv(path: &Path, map: &CurriculumMap) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["question_id", "concept_id"])?;
    for (q, c) in map.edges() {
        writer.write_record([q.0.to_string(), c.0.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}
