//! Study-behavior features per (student, homework) observation.
//!
//! The column order is fixed by [`FEATURES`]; selecting a subset of groups
//! keeps the relative order. Missing-value indicators for the interval and
//! Meanscore groups are regular 0/1 columns inside their group.

mod extract;
mod standardize;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use extract::{
    homework_features, interval_features, meanscore_feature, quiz_features, session_features,
    time_features, video_features, IntervalFeatures, Meanscore, QuizFeatures, SessionFeatures,
    TimeFeatures, VideoFeatures, Window, WindowView,
};
pub use standardize::{standardize, StandardizationStats};

use crate::error::{Error, Result};
use crate::eventlog::{
    CourseCatalog, EventDetail, EventKind, EventLog, EventRecord, StudentId,
    DEFAULT_SESSION_TIMEOUT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    Session,
    Quiz,
    Video,
    Homework,
    Time,
    Interval,
    Meanscore,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 7] = [
        FeatureGroup::Session,
        FeatureGroup::Quiz,
        FeatureGroup::Video,
        FeatureGroup::Homework,
        FeatureGroup::Time,
        FeatureGroup::Interval,
        FeatureGroup::Meanscore,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureGroup::Session => "session",
            FeatureGroup::Quiz => "quiz",
            FeatureGroup::Video => "video",
            FeatureGroup::Homework => "homework",
            FeatureGroup::Time => "time",
            FeatureGroup::Interval => "interval",
            FeatureGroup::Meanscore => "meanscore",
        }
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureGroup::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature group {s:?}")))
    }
}

/// Canonical column order.
pub const FEATURES: [(&str, FeatureGroup); 22] = [
    ("NumSession", FeatureGroup::Session),
    ("AvgSessionLen", FeatureGroup::Session),
    ("AvgNumLogin", FeatureGroup::Session),
    ("NumQuiz", FeatureGroup::Quiz),
    ("AvgQuiz", FeatureGroup::Quiz),
    ("VideoNum", FeatureGroup::Video),
    ("VideoNumPause", FeatureGroup::Video),
    ("VideoViewTime", FeatureGroup::Video),
    ("VideoPctWatch", FeatureGroup::Video),
    ("HWProblemSave", FeatureGroup::Homework),
    ("TimeHwQuiz", FeatureGroup::Time),
    ("TimeHwVideo", FeatureGroup::Time),
    ("TimePlayVideo", FeatureGroup::Time),
    ("HwSessions", FeatureGroup::Time),
    ("IntervalNumQuiz", FeatureGroup::Interval),
    ("IntervalQuizAttempt", FeatureGroup::Interval),
    ("IntervalVideo", FeatureGroup::Interval),
    ("IntervalDailySession", FeatureGroup::Interval),
    ("IntervalLogin", FeatureGroup::Interval),
    ("IntervalMissing", FeatureGroup::Interval),
    ("Meanscore", FeatureGroup::Meanscore),
    ("MeanscoreMissing", FeatureGroup::Meanscore),
];

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURES.iter().position(|(n, _)| *n == name)
}

pub fn feature_group(name: &str) -> Option<FeatureGroup> {
    FEATURES.iter().find(|(n, _)| *n == name).map(|(_, g)| *g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub groups: BTreeSet<FeatureGroup>,
    pub session_timeout: i64,
    /// Z-score columns on training rows before fitting.
    pub standardize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            groups: FeatureGroup::ALL.into_iter().collect(),
            session_timeout: DEFAULT_SESSION_TIMEOUT,
            standardize: true,
        }
    }
}

impl FeatureConfig {
    pub fn without(mut self, group: FeatureGroup) -> Self {
        self.groups.remove(&group);
        self
    }
}

/// One (student, homework) pair to featurize.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub student: StudentId,
    pub homework: String,
    pub ordinal: usize,
    /// First `problem_save` or `homework_submit` on the target.
    pub attempt: i64,
    /// From the student's first event up to the attempt.
    pub window: Window,
    /// From the latest earlier submission up to the attempt; `None` for the
    /// first homework or when nothing was submitted before.
    pub interval: Option<Window>,
    /// Grade of the first submission of the target, if any.
    pub grade: Option<f64>,
}

/// Every (student, homework) pair the student started, in student-id then
/// homework order.
pub fn observations(log: &EventLog, catalog: &CourseCatalog) -> Vec<Observation> {
    let mut out = Vec::new();
    for (student, events) in &log.students {
        let Some(first) = events.first() else {
            continue;
        };
        for (idx, homework) in catalog.homeworks().iter().enumerate() {
            let ordinal = idx + 1;
            let Some(attempt) = events
                .iter()
                .find(|e| e.kind.is_homework() && e.target() == homework)
                .map(|e| e.timestamp)
            else {
                continue;
            };
            let grade = events.iter().find_map(|e| match &e.detail {
                EventDetail::Submit { homework: h, grade } if h == homework => Some(*grade),
                _ => None,
            });
            let interval = if ordinal == 1 {
                None
            } else {
                events
                    .iter()
                    .filter(|e| {
                        e.kind == EventKind::HomeworkSubmit
                            && e.timestamp < attempt
                            && e.target() != homework
                    })
                    .map(|e| e.timestamp)
                    .next_back()
                    .map(|start| Window {
                        start,
                        end: attempt,
                    })
            };
            out.push(Observation {
                student: student.clone(),
                homework: homework.clone(),
                ordinal,
                attempt,
                window: Window {
                    start: first.timestamp,
                    end: attempt,
                },
                interval,
                grade,
            });
        }
    }
    out
}

/// All [`FEATURES`] for one observation, in canonical order.
pub fn extract_all(
    events: &[EventRecord],
    catalog: &CourseCatalog,
    obs: &Observation,
    session_timeout: i64,
) -> Result<Vec<f64>> {
    let view = WindowView::new(events, obs.window, session_timeout);
    let interval_view = obs
        .interval
        .map(|w| WindowView::new(events, w, session_timeout));

    let s = session_features(&view);
    let q = quiz_features(&view);
    let v = video_features(&view, catalog)?;
    let hw = homework_features(&view);
    let t = time_features(&view);
    let i = interval_features(interval_view.as_ref());
    let m = meanscore_feature(&view);

    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    Ok(vec![
        s.num_session,
        s.avg_session_len,
        s.avg_num_login,
        q.num_quiz,
        q.avg_quiz,
        v.video_num,
        v.video_num_pause,
        v.video_view_time,
        v.video_pct_watch,
        hw,
        t.time_hw_quiz,
        t.time_hw_video,
        t.time_play_video,
        t.hw_sessions,
        i.num_quiz,
        i.quiz_attempt,
        i.video,
        i.daily_session,
        i.login,
        flag(i.missing),
        m.value,
        flag(m.missing),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FeatureColumn {
    pub name: &'static str,
    pub group: FeatureGroup,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub student: StudentId,
    pub homework: String,
    pub ordinal: usize,
    pub attempt: i64,
    pub values: Vec<f64>,
    pub grade: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    pub columns: Vec<FeatureColumn>,
    pub rows: Vec<FeatureRow>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildReport {
    /// Observations dropped because the target was never submitted.
    pub unsubmitted: Vec<(StudentId, String)>,
}

fn columns_for(groups: &BTreeSet<FeatureGroup>) -> (Vec<FeatureColumn>, Vec<usize>) {
    FEATURES
        .iter()
        .enumerate()
        .filter(|(_, (_, g))| groups.contains(g))
        .map(|(i, (name, group))| {
            (
                FeatureColumn {
                    name,
                    group: *group,
                },
                i,
            )
        })
        .unzip()
}

impl FeatureMatrix {
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.to_owned()).collect()
    }

    /// Keeps only columns whose group is in `groups`.
    pub fn select_groups(&self, groups: &BTreeSet<FeatureGroup>) -> FeatureMatrix {
        let keep: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| groups.contains(&c.group))
            .map(|(i, _)| i)
            .collect();
        FeatureMatrix {
            columns: keep.iter().map(|&i| self.columns[i]).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| FeatureRow {
                    values: keep.iter().map(|&i| r.values[i]).collect(),
                    ..r.clone()
                })
                .collect(),
        }
    }

    /// CSV with header `student,target,<feature names...>,grade`.
    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["student".to_owned(), "target".to_owned()];
        header.extend(self.names());
        header.push("grade".to_owned());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.student.to_string(), row.homework.clone()];
            rec.extend(row.values.iter().map(f64::to_string));
            rec.push(row.grade.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Featurizes observations in input order. Observations without a graded
/// submission are excluded and listed in the report.
pub fn build_feature_matrix(
    log: &EventLog,
    catalog: &CourseCatalog,
    observations: &[Observation],
    config: &FeatureConfig,
) -> Result<(FeatureMatrix, BuildReport)> {
    let (columns, index) = columns_for(&config.groups);
    let extracted: Vec<Option<FeatureRow>> = observations
        .par_iter()
        .map(|obs| {
            let Some(grade) = obs.grade else {
                return Ok(None);
            };
            let all = extract_all(
                log.events_of(&obs.student),
                catalog,
                obs,
                config.session_timeout,
            )?;
            Ok(Some(FeatureRow {
                student: obs.student.clone(),
                homework: obs.homework.clone(),
                ordinal: obs.ordinal,
                attempt: obs.attempt,
                values: index.iter().map(|&i| all[i]).collect(),
                grade,
            }))
        })
        .collect::<Result<_>>()?;

    let mut report = BuildReport::default();
    let mut rows = Vec::with_capacity(extracted.len());
    for (obs, row) in observations.iter().zip(extracted) {
        match row {
            Some(r) => rows.push(r),
            None => report
                .unsubmitted
                .push((obs.student.clone(), obs.homework.clone())),
        }
    }
    if !report.unsubmitted.is_empty() {
        log::info!(
            "{} observations excluded: target never submitted",
            report.unsubmitted.len()
        );
    }
    Ok((FeatureMatrix { columns, rows }, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventlog::ingest_reader;

    fn catalog() -> CourseCatalog {
        CourseCatalog::from_json(
            r#"{"homeworks":["hw1","hw2"],"quizzes":[{"id":"q1","homework":"hw1"}],
                "videos":[{"id":"v1","quiz":"q1","length_sec":600}],"grading":"continuous"}"#,
        )
        .unwrap()
    }

    const LOG: &str = r#"{"s":"a","t":1000,"k":"quiz_attempt","q":"q1","att":1,"g":1}
{"s":"a","t":2000,"k":"problem_save","h":"hw1"}
{"s":"a","t":2100,"k":"homework_submit","h":"hw1","g":0.8}
{"s":"a","t":9000,"k":"problem_save","h":"hw2"}
{"s":"b","t":1500,"k":"video_play","v":"v1","pos":0}
{"s":"b","t":1800,"k":"problem_save","h":"hw1"}
{"s":"b","t":1900,"k":"homework_submit","h":"hw1","g":0.6}
"#;

    #[test]
    fn observation_windows() {
        let log = ingest_reader(LOG.as_bytes(), &catalog(), 0.05).unwrap();
        let obs = observations(&log, &catalog());
        assert_eq!(obs.len(), 3);
        assert_eq!(
            obs[0].window,
            Window {
                start: 1000,
                end: 2000
            }
        );
        assert_eq!(obs[0].interval, None);
        assert_eq!(
            obs[1].interval,
            Some(Window {
                start: 2100,
                end: 9000
            })
        );
        assert_eq!(obs[1].grade, None);
    }

    #[test]
    fn matrix_excludes_unsubmitted() {
        let log = ingest_reader(LOG.as_bytes(), &catalog(), 0.05).unwrap();
        let obs = observations(&log, &catalog());
        let (m, report) =
            build_feature_matrix(&log, &catalog(), &obs, &FeatureConfig::default()).unwrap();
        assert_eq!(m.rows.len(), 2);
        assert_eq!(report.unsubmitted.len(), 1);
        assert_eq!(m.width(), FEATURES.len());
        assert_eq!(m.rows[0].student.as_str(), "a");
        assert_eq!(m.rows[1].student.as_str(), "b");
        assert_eq!(m.rows[0].grade, 0.8);

        let (empty, _) =
            build_feature_matrix(&log, &catalog(), &[], &FeatureConfig::default()).unwrap();
        assert!(empty.rows.is_empty());
        assert_eq!(empty.width(), FEATURES.len());
    }

    #[test]
    fn group_removal_drops_columns() {
        let log = ingest_reader(LOG.as_bytes(), &catalog(), 0.05).unwrap();
        let obs = observations(&log, &catalog());
        let cfg = FeatureConfig::default().without(FeatureGroup::Session);
        let (m, _) = build_feature_matrix(&log, &catalog(), &obs, &cfg).unwrap();
        assert_eq!(m.width(), FEATURES.len() - 3);

        let (full, _) =
            build_feature_matrix(&log, &catalog(), &obs, &FeatureConfig::default()).unwrap();
        assert_eq!(full.select_groups(&cfg.groups), m);
    }

    #[test]
    fn csv_header_layout() {
        let log = ingest_reader(LOG.as_bytes(), &catalog(), 0.05).unwrap();
        let obs = observations(&log, &catalog());
        let (m, _) =
            build_feature_matrix(&log, &catalog(), &obs, &FeatureConfig::default()).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("student,target,NumSession,AvgSessionLen"));
        assert!(header.ends_with("Meanscore,MeanscoreMissing,grade"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn group_names_parse() {
        for g in FeatureGroup::ALL {
            assert_eq!(g.as_str().parse::<FeatureGroup>().unwrap(), g);
        }
        assert!("bogus".parse::<FeatureGroup>().is_err());
    }
}
