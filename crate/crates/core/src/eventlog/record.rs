use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::RecordError;

/// Opaque, non-empty student token.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StudentId(String);

impl StudentId {
    pub fn new(value: impl Into<String>) -> Result<Self, RecordError> {
        let value = value.into();
        if value.is_empty() {
            return Err(RecordError::Schema("empty student id".into()));
        }
        Ok(StudentId(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StudentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    VideoLoad,
    VideoPlay,
    VideoPause,
    VideoSeek,
    VideoStop,
    QuizAttempt,
    ProblemSave,
    HomeworkSubmit,
}

impl EventKind {
    pub const ALL: [EventKind; 8] = [
        EventKind::VideoLoad,
        EventKind::VideoPlay,
        EventKind::VideoPause,
        EventKind::VideoSeek,
        EventKind::VideoStop,
        EventKind::QuizAttempt,
        EventKind::ProblemSave,
        EventKind::HomeworkSubmit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::VideoLoad => "video_load",
            EventKind::VideoPlay => "video_play",
            EventKind::VideoPause => "video_pause",
            EventKind::VideoSeek => "video_seek",
            EventKind::VideoStop => "video_stop",
            EventKind::QuizAttempt => "quiz_attempt",
            EventKind::ProblemSave => "problem_save",
            EventKind::HomeworkSubmit => "homework_submit",
        }
    }

    pub fn is_video(self) -> bool {
        matches!(
            self,
            EventKind::VideoLoad
                | EventKind::VideoPlay
                | EventKind::VideoPause
                | EventKind::VideoSeek
                | EventKind::VideoStop
        )
    }

    pub fn is_homework(self) -> bool {
        matches!(self, EventKind::ProblemSave | EventKind::HomeworkSubmit)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = RecordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| RecordError::Schema(format!("unknown event kind {s:?}")))
    }
}

/// Kind-specific part of an event.
///
/// Video positions are the playhead position (seconds) at the moment the
/// event fired. Grades are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub enum EventDetail {
    Video {
        video: String,
        position: f64,
    },
    Quiz {
        quiz: String,
        attempt: u32,
        grade: f64,
    },
    Save {
        homework: String,
    },
    Submit {
        homework: String,
        grade: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub student: StudentId,
    /// UTC seconds since the epoch.
    pub timestamp: i64,
    pub kind: EventKind,
    pub detail: EventDetail,
}

impl EventRecord {
    /// The video, quiz or homework id this event refers to.
    pub fn target(&self) -> &str {
        match &self.detail {
            EventDetail::Video { video, .. } => video,
            EventDetail::Quiz { quiz, .. } => quiz,
            EventDetail::Save { homework } | EventDetail::Submit { homework, .. } => homework,
        }
    }

    /// Grade carried by quiz attempts and homework submissions.
    pub fn grade(&self) -> Option<f64> {
        match self.detail {
            EventDetail::Quiz { grade, .. } | EventDetail::Submit { grade, .. } => Some(grade),
            _ => None,
        }
    }

    pub fn video_position(&self) -> Option<f64> {
        match self.detail {
            EventDetail::Video { position, .. } => Some(position),
            _ => None,
        }
    }

    /// Serializes to one JSON line (no trailing newline).
    pub fn to_line(&self) -> String {
        let mut raw = RawEvent {
            s: self.student.0.clone(),
            t: self.timestamp,
            k: self.kind.as_str().to_owned(),
            ..RawEvent::default()
        };
        match &self.detail {
            EventDetail::Video { video, position } => {
                raw.v = Some(video.clone());
                raw.pos = Some(*position);
            }
            EventDetail::Quiz {
                quiz,
                attempt,
                grade,
            } => {
                raw.q = Some(quiz.clone());
                raw.att = Some(*attempt as i64);
                raw.g = Some(*grade);
            }
            EventDetail::Save { homework } => raw.h = Some(homework.clone()),
            EventDetail::Submit { homework, grade } => {
                raw.h = Some(homework.clone());
                raw.g = Some(*grade);
            }
        }
        serde_json::to_string(&raw).expect("event record serializes")
    }
}

/// Wire shape of one log line.
#[derive(Debug, Default, Serialize, Deserialize)]
struct RawEvent {
    s: String,
    t: i64,
    k: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pos: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    att: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    h: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    g: Option<f64>,
}

fn required<T>(value: Option<T>, key: &str, kind: EventKind) -> Result<T, RecordError> {
    value.ok_or_else(|| RecordError::Schema(format!("{kind} requires key `{key}`")))
}

fn non_empty(value: String, key: &str) -> Result<String, RecordError> {
    if value.is_empty() {
        Err(RecordError::Schema(format!("`{key}` must be non-empty")))
    } else {
        Ok(value)
    }
}

fn grade_fraction(g: f64) -> Result<f64, RecordError> {
    if g.is_finite() && (0.0..=1.0).contains(&g) {
        Ok(g)
    } else {
        Err(RecordError::Schema(format!("grade {g} outside [0, 1]")))
    }
}

/// Parses and validates one JSON-lines record.
pub fn parse_event_line(line: &str) -> Result<EventRecord, RecordError> {
    let raw: RawEvent =
        serde_json::from_str(line).map_err(|e| RecordError::Malformed(e.to_string()))?;
    let kind: EventKind = raw.k.parse()?;
    let student = StudentId::new(raw.s)?;
    if raw.t < 0 {
        return Err(RecordError::Schema(format!("negative timestamp {}", raw.t)));
    }

    let detail = match kind {
        k if k.is_video() => {
            let video = non_empty(required(raw.v, "v", kind)?, "v")?;
            let position = required(raw.pos, "pos", kind)?;
            if !position.is_finite() || position < 0.0 {
                return Err(RecordError::Schema(format!(
                    "bad video position {position}"
                )));
            }
            EventDetail::Video { video, position }
        }
        EventKind::QuizAttempt => {
            let quiz = non_empty(required(raw.q, "q", kind)?, "q")?;
            let attempt = required(raw.att, "att", kind)?;
            if attempt < 1 || attempt > u32::MAX as i64 {
                return Err(RecordError::Schema(format!(
                    "attempt index {attempt} must be >= 1"
                )));
            }
            let grade = grade_fraction(required(raw.g, "g", kind)?)?;
            EventDetail::Quiz {
                quiz,
                attempt: attempt as u32,
                grade,
            }
        }
        EventKind::ProblemSave => EventDetail::Save {
            homework: non_empty(required(raw.h, "h", kind)?, "h")?,
        },
        EventKind::HomeworkSubmit => EventDetail::Submit {
            homework: non_empty(required(raw.h, "h", kind)?, "h")?,
            grade: grade_fraction(required(raw.g, "g", kind)?)?,
        },
        _ => unreachable!("video kinds handled above"),
    };

    Ok(EventRecord {
        student,
        timestamp: raw.t,
        kind,
        detail,
    })
}
