//! Per-student activity schedules and the feature values they induce.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{homework_id, quiz_id, video_id, Archetype, SimConfig, COURSE_START, DAY, PERIOD_DAYS};
use crate::eventlog::{EventDetail, EventKind, EventRecord, GradingKind, StudentId};
use crate::features::FEATURES;

const HOUR: i64 = 3600;
const STUDY_HOURS: [i64; 2] = [9, 15];
const ATTEMPT_HOUR: i64 = 19;
const LOAD_TO_PLAY: i64 = 10;
const PAUSE_SECS: i64 = 60;
const BLOCK_GAP: i64 = 30;
const QUIZ_GAP: i64 = 180;
const SAVE_GAP: i64 = 300;
const SUBMIT_AFTER: i64 = 600;
const MAX_ATTEMPTS: u32 = 3;
const MAX_SAVES: usize = 4;
const MAX_PAUSES: usize = 3;

/// Longest a unit's study blocks may take if they all land in one session;
/// keeps consecutive sessions separated by more than the session timeout.
pub(crate) const MAX_UNIT_SECS: f64 = 5.0 * HOUR as f64;

pub(crate) fn worst_case_unit_secs(config: &SimConfig) -> f64 {
    let video = (LOAD_TO_PLAY + BLOCK_GAP + PAUSE_SECS * MAX_PAUSES as i64) as f64
        + config.video_length_sec;
    let quiz = (QUIZ_GAP * (MAX_ATTEMPTS as i64 - 1) + BLOCK_GAP) as f64;
    config.quizzes_per_homework as f64 * (config.videos_per_quiz as f64 * video + quiz)
}

/// Behavior scalars, each in `[0.2, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StudentProfile {
    pub session_rate: f64,
    pub video_completion: f64,
    pub quiz_effort: f64,
}

#[derive(Debug, Clone)]
struct WatchedVideo {
    id: String,
    watched: f64,
    length: f64,
    pauses: usize,
}

#[derive(Debug, Clone, Default)]
struct Session {
    start: i64,
    end: i64,
    has_play: bool,
    videos: Vec<WatchedVideo>,
    /// Attempt times and grades per quiz, in time order.
    quizzes: Vec<(String, Vec<(i64, f64)>)>,
    last_quiz: Option<i64>,
    last_video: Option<i64>,
    /// Set for homework attempt sessions.
    homework: Option<usize>,
    saves: usize,
    submit: i64,
    events: Vec<EventRecord>,
}

#[derive(Debug, Clone)]
pub(crate) struct StudentPlan {
    pub student: StudentId,
    pub archetype: Archetype,
    pub profile: StudentProfile,
    pub bias: f64,
    pub membership: Vec<f64>,
    /// Chronological.
    sessions: Vec<Session>,
    grades: BTreeMap<usize, f64>,
}

enum Block {
    Video {
        id: String,
        length: f64,
        watched: i64,
        pauses: usize,
    },
    Quiz {
        id: String,
        grades: Vec<f64>,
    },
}

fn draw_quiz_grade(config: &SimConfig, bias: f64, rng: &mut ChaCha8Rng) -> f64 {
    let p = bias.clamp(0.0, 1.0);
    match config.grading {
        GradingKind::Binary => f64::from(u8::from(rng.random_bool(p))),
        GradingKind::Continuous => {
            let g = Normal::new(p, 0.15).expect("finite").sample(rng);
            (g.clamp(0.0, 1.0) * 100.0).round() / 100.0
        }
    }
}

fn unit_blocks(
    config: &SimConfig,
    u: usize,
    profile: &StudentProfile,
    bias: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Block> {
    let length = config.video_length_sec;
    let max_watch = length.floor() as i64;
    let mut blocks = Vec::new();
    for j in 1..=config.quizzes_per_homework {
        for k in 1..=config.videos_per_quiz {
            if !rng.random_bool(profile.video_completion) {
                continue;
            }
            let frac = profile.video_completion * rng.random_range(0.5..=1.0);
            let watched = ((max_watch as f64 * frac).round() as i64).clamp(60, max_watch);
            blocks.push(Block::Video {
                id: video_id(u, j, k),
                length,
                watched,
                pauses: rng.random_range(0..=MAX_PAUSES),
            });
        }
        if rng.random_bool(profile.quiz_effort) {
            let mut attempts = 1;
            while attempts < MAX_ATTEMPTS && rng.random_bool(profile.quiz_effort * 0.6) {
                attempts += 1;
            }
            blocks.push(Block::Quiz {
                id: quiz_id(u, j),
                grades: (0..attempts)
                    .map(|_| draw_quiz_grade(config, bias, rng))
                    .collect(),
            });
        }
    }
    blocks
}

fn event(student: &StudentId, timestamp: i64, kind: EventKind, detail: EventDetail) -> EventRecord {
    EventRecord {
        student: student.clone(),
        timestamp,
        kind,
        detail,
    }
}

/// Lays `blocks` out from `start` and returns the filled session.
fn play_session(student: &StudentId, start: i64, blocks: Vec<Block>) -> Session {
    let mut s = Session {
        start,
        ..Session::default()
    };
    let mut t = start;
    for block in blocks {
        match block {
            Block::Video {
                id,
                length,
                watched,
                pauses,
            } => {
                let video = |position: f64| EventDetail::Video {
                    video: id.clone(),
                    position,
                };
                s.events
                    .push(event(student, t, EventKind::VideoLoad, video(0.0)));
                t += LOAD_TO_PLAY;
                s.events
                    .push(event(student, t, EventKind::VideoPlay, video(0.0)));
                let mut pos = 0;
                for p in 1..=pauses as i64 {
                    let x = watched * p / (pauses as i64 + 1);
                    t += x - pos;
                    pos = x;
                    s.events
                        .push(event(student, t, EventKind::VideoPause, video(x as f64)));
                    t += PAUSE_SECS;
                    s.events
                        .push(event(student, t, EventKind::VideoPlay, video(x as f64)));
                }
                t += watched - pos;
                s.events.push(event(
                    student,
                    t,
                    EventKind::VideoStop,
                    video(watched as f64),
                ));
                s.has_play = true;
                s.last_video = Some(t);
                s.videos.push(WatchedVideo {
                    id,
                    watched: watched as f64,
                    length,
                    pauses,
                });
            }
            Block::Quiz { id, grades } => {
                let mut attempts = Vec::new();
                for (a, grade) in grades.into_iter().enumerate() {
                    if a > 0 {
                        t += QUIZ_GAP;
                    }
                    s.events.push(event(
                        student,
                        t,
                        EventKind::QuizAttempt,
                        EventDetail::Quiz {
                            quiz: id.clone(),
                            attempt: a as u32 + 1,
                            grade,
                        },
                    ));
                    attempts.push((t, grade));
                }
                s.last_quiz = Some(t);
                s.quizzes.push((id, attempts));
            }
        }
        s.end = t;
        t += BLOCK_GAP;
    }
    s
}

fn period_start(u: usize) -> i64 {
    COURSE_START + (u as i64 - 1) * PERIOD_DAYS * DAY
}

fn study_unit(
    config: &SimConfig,
    student: &StudentId,
    u: usize,
    profile: &StudentProfile,
    bias: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Session> {
    let mut slots = Vec::new();
    for d in 0..PERIOD_DAYS - 1 {
        if !rng.random_bool(profile.session_rate) {
            continue;
        }
        slots.push(period_start(u) + d * DAY + STUDY_HOURS[0] * HOUR);
        if rng.random_bool(profile.session_rate) {
            slots.push(period_start(u) + d * DAY + STUDY_HOURS[1] * HOUR);
        }
    }
    if slots.is_empty() {
        let d = rng.random_range(0..PERIOD_DAYS - 1);
        slots.push(period_start(u) + d * DAY + STUDY_HOURS[0] * HOUR);
    }
    let mut blocks = unit_blocks(config, u, profile, bias, rng).into_iter();
    let total = blocks.len();
    let (per, extra) = (total / slots.len(), total % slots.len());
    let mut sessions = Vec::new();
    for (i, start) in slots.into_iter().enumerate() {
        let chunk: Vec<Block> = blocks.by_ref().take(per + usize::from(i < extra)).collect();
        if !chunk.is_empty() {
            sessions.push(play_session(student, start, chunk));
        }
    }
    sessions
}

fn attempt_session(student: &StudentId, u: usize, rng: &mut ChaCha8Rng) -> Session {
    let start = period_start(u) + (PERIOD_DAYS - 1) * DAY + ATTEMPT_HOUR * HOUR;
    let saves = rng.random_range(1..=MAX_SAVES);
    let mut s = Session {
        start,
        homework: Some(u),
        saves,
        ..Session::default()
    };
    for i in 0..saves as i64 {
        s.events.push(event(
            student,
            start + i * SAVE_GAP,
            EventKind::ProblemSave,
            EventDetail::Save {
                homework: homework_id(u),
            },
        ));
    }
    s.submit = start + (saves as i64 - 1) * SAVE_GAP + SUBMIT_AFTER;
    s.end = s.submit;
    s
}

pub(crate) fn plan_student(
    config: &SimConfig,
    student: StudentId,
    archetype: Archetype,
    bias: f64,
    membership: Vec<f64>,
    rng: &mut ChaCha8Rng,
) -> StudentPlan {
    let n = config.homeworks;
    let profile = StudentProfile {
        session_rate: rng.random_range(0.2..=1.0),
        video_completion: rng.random_range(0.2..=1.0),
        quiz_effort: rng.random_range(0.2..=1.0),
    };
    let attempted: BTreeSet<usize> = match archetype {
        Archetype::Completer => (1..=n).collect(),
        Archetype::Partial => {
            let k = rng.random_range(1..n);
            sample(rng, n, k).into_iter().map(|i| i + 1).collect()
        }
        Archetype::Auditor => BTreeSet::new(),
    };
    let mut sessions = Vec::new();
    for u in 1..=n {
        let attempts = attempted.contains(&u);
        if archetype == Archetype::Auditor || attempts {
            sessions.extend(study_unit(config, &student, u, &profile, bias, rng));
        }
        if attempts {
            sessions.push(attempt_session(&student, u, rng));
        }
    }
    StudentPlan {
        student,
        archetype,
        profile,
        bias,
        membership,
        sessions,
        grades: BTreeMap::new(),
    }
}

fn utc_day(t: i64) -> i64 {
    t.div_euclid(DAY)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Session, quiz and video tallies over a set of sessions.
struct Tally {
    sessions: usize,
    secs: i64,
    days: BTreeSet<i64>,
    quizzes: BTreeSet<String>,
    attempts: usize,
    videos: BTreeMap<String, (f64, f64)>,
    pauses: usize,
}

impl Tally {
    fn over<'a>(sessions: impl IntoIterator<Item = &'a Session>) -> Tally {
        let mut t = Tally {
            sessions: 0,
            secs: 0,
            days: BTreeSet::new(),
            quizzes: BTreeSet::new(),
            attempts: 0,
            videos: BTreeMap::new(),
            pauses: 0,
        };
        for s in sessions {
            t.sessions += 1;
            t.secs += s.end - s.start;
            t.days.extend(utc_day(s.start)..=utc_day(s.end));
            for (q, attempts) in &s.quizzes {
                t.quizzes.insert(q.clone());
                t.attempts += attempts.len();
            }
            for v in &s.videos {
                let e = t.videos.entry(v.id.clone()).or_insert((0.0, v.length));
                e.0 += v.watched;
                t.pauses += v.pauses;
            }
        }
        t
    }
}

impl StudentPlan {
    pub fn attempted(&self) -> Vec<usize> {
        self.sessions.iter().filter_map(|s| s.homework).collect()
    }

    pub fn attempt_instant(&self, u: usize) -> Option<i64> {
        self.sessions
            .iter()
            .find(|s| s.homework == Some(u))
            .map(|s| s.start)
    }

    pub fn set_grade(&mut self, u: usize, grade: f64) {
        self.grades.insert(u, grade);
    }

    /// Feature row for homework `u`, with the Meanscore columns left at zero.
    pub fn features(&self, u: usize, video_length: f64) -> Vec<f64> {
        let a = self.attempt_instant(u).expect("attempted unit");
        let before: Vec<&Session> = self.sessions.iter().filter(|s| s.start < a).collect();
        let first = self.sessions[0].start;
        let minutes = (a - first) as f64 / 60.0;
        let cal = (utc_day(a) - utc_day(first) + 1).max(1) as f64;
        let t = Tally::over(before.iter().copied());

        let engaged = t.videos.len() as f64;
        let watched: f64 = t.videos.values().map(|(w, len)| w.min(*len)).sum();
        let pct: f64 = t
            .videos
            .values()
            .map(|(w, len)| (w.min(*len) / len).clamp(0.0, 1.0))
            .sum();
        debug_assert!(t.videos.values().all(|(_, len)| *len == video_length));

        let homework: Vec<&&Session> = before.iter().filter(|s| s.homework.is_some()).collect();
        let saves: usize = homework.iter().map(|s| s.saves).sum();
        let since =
            |last: Option<i64>| last.map_or(minutes, |x| ((a - x) as f64 / 60.0).min(minutes));
        let last_quiz = before.iter().filter_map(|s| s.last_quiz).max();
        let last_video = before.iter().filter_map(|s| s.last_video).max();
        let with_play = before.iter().filter(|s| s.has_play).count();

        let mut row = vec![
            ratio(t.sessions as f64, cal),
            ratio(t.secs as f64 / 60.0, t.sessions as f64),
            ratio(t.days.len() as f64, cal),
            t.quizzes.len() as f64,
            ratio(t.attempts as f64, t.quizzes.len() as f64),
            engaged,
            ratio(t.pauses as f64, engaged),
            watched / 60.0,
            ratio(pct, engaged),
            ratio(saves as f64, homework.len() as f64),
            since(last_quiz),
            since(last_video),
            ratio(with_play as f64, t.sessions as f64),
            homework.len() as f64,
        ];
        row.extend(self.interval(u, a));
        row.extend([0.0, 0.0]);
        debug_assert_eq!(row.len(), FEATURES.len());
        row
    }

    /// The previous submission opens the interval window; only its submit
    /// event falls inside, forming a one-event session.
    fn interval(&self, u: usize, a: i64) -> [f64; 6] {
        let prev = self
            .sessions
            .iter()
            .filter(|s| s.homework.is_some_and(|h| h != u) && s.submit < a)
            .map(|s| s.submit)
            .max();
        let Some(p) = prev.filter(|_| u > 1) else {
            return [0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        };
        let submit_only = Session {
            start: p,
            end: p,
            ..Session::default()
        };
        let inside = self.sessions.iter().filter(|s| s.start > p && s.start < a);
        let t = Tally::over(std::iter::once(&submit_only).chain(inside));
        let cal = (utc_day(a) - utc_day(p) + 1).max(1) as f64;
        [
            t.quizzes.len() as f64,
            ratio(t.attempts as f64, t.quizzes.len() as f64),
            t.videos.len() as f64,
            ratio(t.sessions as f64, cal),
            ratio(t.days.len() as f64, cal),
            0.0,
        ]
    }

    /// Mean of quiz and homework grades recorded before the attempt on `u`,
    /// and whether there were none. Grades of earlier homeworks must be set.
    pub fn meanscore(&self, u: usize) -> (f64, bool) {
        let a = self.attempt_instant(u).expect("attempted unit");
        let mut grades = Vec::new();
        for s in self.sessions.iter().filter(|s| s.start < a) {
            for e in &s.events {
                if let EventDetail::Quiz { grade, .. } = e.detail {
                    grades.push((e.timestamp, grade));
                }
            }
            if let Some(h) = s.homework {
                grades.push((s.submit, self.grades[&h]));
            }
        }
        grades.sort_by_key(|(t, _)| *t);
        if grades.is_empty() {
            (0.0, true)
        } else {
            let sum: f64 = grades.iter().map(|(_, g)| g).sum();
            (sum / grades.len() as f64, false)
        }
    }

    /// Every event of the student in time order, with submit grades filled.
    pub fn events(&self) -> Vec<EventRecord> {
        let mut out = Vec::new();
        for s in &self.sessions {
            out.extend(s.events.iter().cloned());
            if let Some(h) = s.homework {
                out.push(event(
                    &self.student,
                    s.submit,
                    EventKind::HomeworkSubmit,
                    EventDetail::Submit {
                        homework: homework_id(h),
                        grade: self.grades.get(&h).copied().unwrap_or(f64::NAN),
                    },
                ));
            }
        }
        out
    }
}
