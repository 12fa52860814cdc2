use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradingKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssessmentKind {
    Homework,
    Quiz,
    Exam,
}

impl fmt::Display for AssessmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AssessmentKind::Homework => "homework",
            AssessmentKind::Quiz => "quiz",
            AssessmentKind::Exam => "exam",
        })
    }
}

/// An assessment id together with its kind and 1-based position among
/// assessments of that kind.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AssessmentId {
    pub id: String,
    pub kind: AssessmentKind,
    pub ordinal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuizEntry {
    pub id: String,
    pub homework: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub id: String,
    pub quiz: String,
    pub length_sec: f64,
}

/// On-disk catalog document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogDocument {
    pub homeworks: Vec<String>,
    pub quizzes: Vec<QuizEntry>,
    pub videos: Vec<VideoEntry>,
    pub grading: GradingKind,
    /// Kind of the ordered graded assessments; `exam` for courses predicted
    /// from midterm/final exams.
    #[serde(default = "default_kind", skip_serializing_if = "is_homework")]
    pub kind: AssessmentKind,
}

fn default_kind() -> AssessmentKind {
    AssessmentKind::Homework
}

fn is_homework(kind: &AssessmentKind) -> bool {
    *kind == AssessmentKind::Homework
}

/// Validated course structure: ordered homeworks, quiz and video mappings.
#[derive(Debug, Clone)]
pub struct CourseCatalog {
    doc: CatalogDocument,
    homework_ordinal: HashMap<String, usize>,
    quiz_homework: HashMap<String, String>,
    quiz_ordinal: HashMap<String, usize>,
    video_quiz: HashMap<String, String>,
    video_length: HashMap<String, f64>,
}

impl CourseCatalog {
    pub fn new(doc: CatalogDocument) -> Result<Self> {
        if doc.homeworks.is_empty() {
            return Err(Error::Catalog("no homeworks".into()));
        }
        if doc.kind == AssessmentKind::Quiz {
            return Err(Error::Catalog(
                "graded sequence cannot be of kind quiz".into(),
            ));
        }
        let mut homework_ordinal = HashMap::new();
        for (i, hw) in doc.homeworks.iter().enumerate() {
            if hw.is_empty() {
                return Err(Error::Catalog("empty homework id".into()));
            }
            if homework_ordinal.insert(hw.clone(), i + 1).is_some() {
                return Err(Error::Catalog(format!("duplicate homework {hw}")));
            }
        }

        let mut quiz_homework = HashMap::new();
        let mut quiz_ordinal = HashMap::new();
        for (i, q) in doc.quizzes.iter().enumerate() {
            if !homework_ordinal.contains_key(&q.homework) {
                return Err(Error::Catalog(format!(
                    "quiz {} maps to unknown homework {}",
                    q.id, q.homework
                )));
            }
            if q.id.is_empty() || homework_ordinal.contains_key(&q.id) {
                return Err(Error::Catalog(format!("bad quiz id {:?}", q.id)));
            }
            if quiz_homework
                .insert(q.id.clone(), q.homework.clone())
                .is_some()
            {
                return Err(Error::Catalog(format!("duplicate quiz {}", q.id)));
            }
            quiz_ordinal.insert(q.id.clone(), i + 1);
        }

        let mut video_quiz = HashMap::new();
        let mut video_length = HashMap::new();
        for v in &doc.videos {
            if !quiz_homework.contains_key(&v.quiz) {
                return Err(Error::Catalog(format!(
                    "video {} maps to unknown quiz {}",
                    v.id, v.quiz
                )));
            }
            if !(v.length_sec.is_finite() && v.length_sec > 0.0) {
                return Err(Error::Catalog(format!(
                    "video {} has non-positive length {}",
                    v.id, v.length_sec
                )));
            }
            if v.id.is_empty() || video_quiz.insert(v.id.clone(), v.quiz.clone()).is_some() {
                return Err(Error::Catalog(format!(
                    "bad or duplicate video id {:?}",
                    v.id
                )));
            }
            video_length.insert(v.id.clone(), v.length_sec);
        }

        Ok(CourseCatalog {
            doc,
            homework_ordinal,
            quiz_homework,
            quiz_ordinal,
            video_quiz,
            video_length,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CatalogDocument =
            serde_json::from_str(text).map_err(|e| Error::Catalog(e.to_string()))?;
        Self::new(doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("catalog serializes")
    }

    pub fn document(&self) -> &CatalogDocument {
        &self.doc
    }

    pub fn grading(&self) -> GradingKind {
        self.doc.grading
    }

    pub fn assessment_kind(&self) -> AssessmentKind {
        self.doc.kind
    }

    pub fn homeworks(&self) -> &[String] {
        &self.doc.homeworks
    }

    pub fn num_homeworks(&self) -> usize {
        self.doc.homeworks.len()
    }

    /// 1-based position of a homework in the course order.
    pub fn homework_ordinal(&self, id: &str) -> Option<usize> {
        self.homework_ordinal.get(id).copied()
    }

    pub fn homework_at(&self, ordinal: usize) -> Option<&str> {
        ordinal
            .checked_sub(1)
            .and_then(|i| self.doc.homeworks.get(i))
            .map(String::as_str)
    }

    pub fn assessment(&self, id: &str) -> Option<AssessmentId> {
        if let Some(&ordinal) = self.homework_ordinal.get(id) {
            return Some(AssessmentId {
                id: id.to_owned(),
                kind: self.doc.kind,
                ordinal,
            });
        }
        self.quiz_ordinal.get(id).map(|&ordinal| AssessmentId {
            id: id.to_owned(),
            kind: AssessmentKind::Quiz,
            ordinal,
        })
    }

    pub fn quiz_homework(&self, quiz: &str) -> Option<&str> {
        self.quiz_homework.get(quiz).map(String::as_str)
    }

    pub fn video_quiz(&self, video: &str) -> Option<&str> {
        self.video_quiz.get(video).map(String::as_str)
    }

    pub fn video_length(&self, video: &str) -> Option<f64> {
        self.video_length.get(video).copied()
    }

    pub fn has_quiz(&self, quiz: &str) -> bool {
        self.quiz_homework.contains_key(quiz)
    }

    pub fn has_video(&self, video: &str) -> bool {
        self.video_length.contains_key(video)
    }

    /// Quizzes of one homework, in catalog order.
    pub fn quizzes_of(&self, homework: &str) -> Vec<&str> {
        self.doc
            .quizzes
            .iter()
            .filter(|q| q.homework == homework)
            .map(|q| q.id.as_str())
            .collect()
    }

    /// Every id a log line may legally reference, grouped by kind.
    pub fn id_sets(&self) -> BTreeMap<&'static str, HashSet<&str>> {
        let mut out = BTreeMap::new();
        out.insert(
            "homework",
            self.doc.homeworks.iter().map(String::as_str).collect(),
        );
        out.insert(
            "quiz",
            self.doc.quizzes.iter().map(|q| q.id.as_str()).collect(),
        );
        out.insert(
            "video",
            self.doc.videos.iter().map(|v| v.id.as_str()).collect(),
        );
        out
    }
}
