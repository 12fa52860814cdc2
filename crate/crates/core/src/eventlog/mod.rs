//! Event-log schema, ingestion and sessionization.
//!
//! Logs are UTF-8 JSON lines. Every line carries `s` (student), `t` (integer
//! epoch seconds) and `k` (event kind); the remaining keys depend on the kind:
//!
//! | kind                         | keys                     |
//! |------------------------------|--------------------------|
//! | `video_*`                    | `v` (video), `pos` (s)   |
//! | `quiz_attempt`               | `q`, `att` (>= 1), `g`   |
//! | `problem_save`               | `h`                      |
//! | `homework_submit`            | `h`, `g`                 |

mod catalog;
mod record;
mod session;

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

pub use catalog::{
    AssessmentId, AssessmentKind, CatalogDocument, CourseCatalog, GradingKind, QuizEntry,
    VideoEntry,
};
pub use record::{parse_event_line, EventDetail, EventKind, EventRecord, StudentId};
pub use session::{sessionize, SessionRecord, DEFAULT_SESSION_TIMEOUT};

use crate::error::{Error, RecordError, Result};

/// Fraction of non-blank lines that may be dropped before ingestion fails.
pub const DEFAULT_MAX_DROP_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct DroppedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    /// Non-blank lines seen.
    pub total_lines: usize,
    pub dropped: Vec<DroppedLine>,
}

/// Events grouped per student (sorted by id), each list time-sorted with
/// input order kept among equal timestamps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub students: BTreeMap<StudentId, Vec<EventRecord>>,
    pub report: IngestReport,
}

impl EventLog {
    pub fn events_of(&self, student: &StudentId) -> &[EventRecord] {
        self.students.get(student).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn num_events(&self) -> usize {
        self.students.values().map(Vec::len).sum()
    }
}

fn unknown_reference(event: &EventRecord, catalog: &CourseCatalog) -> Option<String> {
    let id = event.target();
    let known = match event.detail {
        EventDetail::Video { .. } => catalog.has_video(id),
        EventDetail::Quiz { .. } => catalog.has_quiz(id),
        EventDetail::Save { .. } | EventDetail::Submit { .. } => {
            catalog.homework_ordinal(id).is_some()
        }
    };
    (!known).then(|| format!("{} references unknown id {id:?}", event.kind))
}

/// Reads a log from any buffered reader. See [`ingest_log`].
pub fn ingest_reader(
    reader: impl BufRead,
    catalog: &CourseCatalog,
    max_drop_fraction: f64,
) -> Result<EventLog> {
    let mut students: BTreeMap<StudentId, Vec<EventRecord>> = BTreeMap::new();
    let mut report = IngestReport::default();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Record {
            line: line_no,
            source: RecordError::Malformed(e.to_string()),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        report.total_lines += 1;
        let reason = match parse_event_line(&line) {
            Ok(event) => match unknown_reference(&event, catalog) {
                None => {
                    students
                        .entry(event.student.clone())
                        .or_default()
                        .push(event);
                    continue;
                }
                Some(reason) => reason,
            },
            Err(e) => e.to_string(),
        };
        log::warn!("dropping line {line_no}: {reason}");
        report.dropped.push(DroppedLine {
            line: line_no,
            reason,
        });
    }

    if report.total_lines > 0 {
        let fraction = report.dropped.len() as f64 / report.total_lines as f64;
        if fraction > max_drop_fraction {
            return Err(Error::TooManyDropped {
                dropped: report.dropped.len(),
                total: report.total_lines,
                max_fraction: max_drop_fraction,
            });
        }
    }

    for events in students.values_mut() {
        events.sort_by_key(|e| e.timestamp);
    }
    Ok(EventLog { students, report })
}

/// Reads, validates and groups a JSON-lines log. Lines that fail to parse or
/// reference ids absent from the catalog are dropped and reported; more than
/// `max_drop_fraction` dropped lines is an error.
pub fn ingest_log(
    path: impl AsRef<Path>,
    catalog: &CourseCatalog,
    max_drop_fraction: f64,
) -> Result<EventLog> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(std::io::BufReader::new(file), catalog, max_drop_fraction)
}

/// Writes events as JSON lines in the given order.
pub fn write_log<'a>(
    mut out: impl std::io::Write,
    events: impl IntoIterator<Item = &'a EventRecord>,
) -> std::io::Result<()> {
    for e in events {
        writeln!(out, "{}", e.to_line())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> CourseCatalog {
        CourseCatalog::from_json(
            r#"{"homeworks":["hw1"],"quizzes":[{"id":"q1","homework":"hw1"}],
                "videos":[{"id":"v1","quiz":"q1","length_sec":600}],"grading":"continuous"}"#,
        )
        .unwrap()
    }

    #[test]
    fn sorts_per_student_stably() {
        let text = r#"{"s":"u1","t":30,"k":"problem_save","h":"hw1"}
{"s":"u1","t":10,"k":"video_load","v":"v1","pos":0}
{"s":"u2","t":5,"k":"video_load","v":"v1","pos":0}
{"s":"u1","t":20,"k":"video_play","v":"v1","pos":0}
{"s":"u1","t":20,"k":"video_pause","v":"v1","pos":0}
"#;
        let log = ingest_reader(text.as_bytes(), &catalog(), 0.05).unwrap();
        assert_eq!(log.students.len(), 2);
        let u1 = log.events_of(&StudentId::new("u1").unwrap());
        let times: Vec<_> = u1.iter().map(|e| e.timestamp).collect();
        assert_eq!(times, vec![10, 20, 20, 30]);
        assert_eq!(u1[1].kind, EventKind::VideoPlay);
        assert_eq!(u1[2].kind, EventKind::VideoPause);
    }

    #[test]
    fn unknown_quiz_is_dropped_and_reported() {
        let mut text = String::new();
        for t in 0..30 {
            text.push_str(&format!(
                "{{\"s\":\"u1\",\"t\":{t},\"k\":\"quiz_attempt\",\"q\":\"q1\",\"att\":1,\"g\":1}}\n"
            ));
        }
        text.push_str(r#"{"s":"u1","t":99,"k":"quiz_attempt","q":"ghost","att":1,"g":1}"#);
        let log = ingest_reader(text.as_bytes(), &catalog(), 0.05).unwrap();
        assert_eq!(log.report.dropped.len(), 1);
        assert_eq!(log.report.dropped[0].line, 31);
        assert_eq!(log.num_events(), 30);
    }

    #[test]
    fn too_many_drops_fail() {
        let text = "garbage\n{\"s\":\"u1\",\"t\":1,\"k\":\"problem_save\",\"h\":\"hw1\"}\n";
        let err = ingest_reader(text.as_bytes(), &catalog(), 0.05).unwrap_err();
        assert!(matches!(
            err,
            Error::TooManyDropped {
                dropped: 1,
                total: 2,
                ..
            }
        ));
    }

    #[test]
    fn empty_input() {
        let log = ingest_reader("".as_bytes(), &catalog(), 0.05).unwrap();
        assert!(log.students.is_empty());
        assert_eq!(log.report.total_lines, 0);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = ingest_log("/definitely/not/here.jsonl", &catalog(), 0.05).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
