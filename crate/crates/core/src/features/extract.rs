//! Per-window feature operations.
//!
//! Every operation looks only at events inside a half-open window
//! `[start, end)`, where `end` is the attempt instant of the target
//! assessment. Durations are reported in minutes.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::eventlog::{
    sessionize, CourseCatalog, EventDetail, EventKind, EventRecord, SessionRecord,
};

const SECS_PER_DAY: i64 = 86_400;

/// Half-open time window `[start, end)` in epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: i64,
    pub end: i64,
}

impl Window {
    pub fn minutes(&self) -> f64 {
        (self.end - self.start).max(0) as f64 / 60.0
    }

    /// UTC calendar days touched by the window, counting the day of the
    /// attempt instant. Never less than one.
    pub fn calendar_days(&self) -> i64 {
        (utc_day(self.end) - utc_day(self.start) + 1).max(1)
    }
}

pub(crate) fn utc_day(t: i64) -> i64 {
    t.div_euclid(SECS_PER_DAY)
}

/// The events and sessions of one student restricted to a window.
#[derive(Debug, Clone)]
pub struct WindowView<'a> {
    pub window: Window,
    pub events: &'a [EventRecord],
    pub sessions: Vec<SessionRecord<'a>>,
}

impl<'a> WindowView<'a> {
    /// `student_events` must be time-sorted.
    pub fn new(student_events: &'a [EventRecord], window: Window, timeout: i64) -> Self {
        let lo = student_events.partition_point(|e| e.timestamp < window.start);
        let hi = student_events.partition_point(|e| e.timestamp < window.end);
        let events = &student_events[lo..hi.max(lo)];
        WindowView {
            window,
            events,
            sessions: sessionize(events, timeout),
        }
    }

    fn work_days(&self) -> usize {
        let mut days = BTreeSet::new();
        for s in &self.sessions {
            days.extend(utc_day(s.start)..=utc_day(s.end));
        }
        days.len()
    }

    fn daily_sessions(&self) -> f64 {
        self.sessions.len() as f64 / self.window.calendar_days() as f64
    }

    fn login_rate(&self) -> f64 {
        self.work_days() as f64 / self.window.calendar_days() as f64
    }

    fn quiz_counts(&self) -> (usize, usize) {
        let mut quizzes = BTreeSet::new();
        let mut attempts = 0;
        for e in self.events {
            if let EventDetail::Quiz { quiz, .. } = &e.detail {
                quizzes.insert(quiz.as_str());
                attempts += 1;
            }
        }
        (quizzes.len(), attempts)
    }

    fn distinct_videos(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.kind.is_video())
            .map(EventRecord::target)
            .collect::<BTreeSet<_>>()
            .len()
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SessionFeatures {
    pub num_session: f64,
    pub avg_session_len: f64,
    pub avg_num_login: f64,
}

/// Daily session rate, mean session length (minutes) and work-day fraction.
pub fn session_features(view: &WindowView<'_>) -> SessionFeatures {
    let total_secs: i64 = view.sessions.iter().map(SessionRecord::duration_secs).sum();
    SessionFeatures {
        num_session: view.daily_sessions(),
        avg_session_len: ratio(total_secs as f64 / 60.0, view.sessions.len() as f64),
        avg_num_login: view.login_rate(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuizFeatures {
    pub num_quiz: f64,
    pub avg_quiz: f64,
}

pub fn quiz_features(view: &WindowView<'_>) -> QuizFeatures {
    let (quizzes, attempts) = view.quiz_counts();
    QuizFeatures {
        num_quiz: quizzes as f64,
        avg_quiz: ratio(attempts as f64, quizzes as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VideoFeatures {
    pub video_num: f64,
    pub video_num_pause: f64,
    pub video_view_time: f64,
    pub video_pct_watch: f64,
}

#[derive(Default)]
struct VideoTally {
    watched: f64,
}

fn video_length(catalog: &CourseCatalog, video: &str) -> Result<f64> {
    catalog
        .video_length(video)
        .ok_or_else(|| Error::Extraction(format!("video {video} missing from catalog")))
}

type Playback<'a> = Option<(&'a str, f64, i64)>;

/// Ends an open playback interval, crediting the watched position delta.
fn close_playback<'a>(
    catalog: &CourseCatalog,
    playing: &mut Playback<'a>,
    tallies: &mut BTreeMap<&'a str, VideoTally>,
    next: Option<&EventRecord>,
    at: i64,
) -> Result<()> {
    if let Some((video, from, started)) = playing.take() {
        let length = video_length(catalog, video)?;
        let to = match next {
            Some(e) if e.kind.is_video() && e.target() == video => {
                e.video_position().unwrap_or(from)
            }
            _ => from + (at - started) as f64,
        };
        let delta = (to.min(length) - from).clamp(0.0, length);
        tallies.entry(video).or_default().watched += delta;
    }
    Ok(())
}

/// Video engagement. A `video_play` opens a playback interval that the next
/// event closes: an event on the same video closes it at that event's
/// playhead position, any other event (or the window end) closes it after the
/// elapsed wall-clock time. Watched seconds per video are the positive
/// position deltas, clamped to the video length.
pub fn video_features(view: &WindowView<'_>, catalog: &CourseCatalog) -> Result<VideoFeatures> {
    let mut tallies: BTreeMap<&str, VideoTally> = BTreeMap::new();
    let mut pauses = 0usize;
    // (video, start position, start time)
    let mut playing: Playback<'_> = None;

    let length_of = |video: &str| video_length(catalog, video);

    for e in view.events {
        close_playback(catalog, &mut playing, &mut tallies, Some(e), e.timestamp)?;
        if let EventDetail::Video { video, position } = &e.detail {
            length_of(video)?;
            tallies.entry(video.as_str()).or_default();
            match e.kind {
                EventKind::VideoPause => pauses += 1,
                EventKind::VideoPlay => playing = Some((video.as_str(), *position, e.timestamp)),
                _ => {}
            }
        }
    }
    close_playback(catalog, &mut playing, &mut tallies, None, view.window.end)?;

    let engaged = tallies.len() as f64;
    let mut watched_secs = 0.0;
    let mut pct_sum = 0.0;
    for (video, tally) in &tallies {
        let length = length_of(video)?;
        let watched = tally.watched.min(length);
        watched_secs += watched;
        pct_sum += (watched / length).clamp(0.0, 1.0);
    }

    Ok(VideoFeatures {
        video_num: engaged,
        video_num_pause: ratio(pauses as f64, engaged),
        video_view_time: watched_secs / 60.0,
        video_pct_watch: ratio(pct_sum, engaged),
    })
}

/// Mean number of `problem_save` events per homework that received any.
pub fn homework_features(view: &WindowView<'_>) -> f64 {
    let mut homeworks = BTreeSet::new();
    let mut saves = 0usize;
    for e in view
        .events
        .iter()
        .filter(|e| e.kind == EventKind::ProblemSave)
    {
        homeworks.insert(e.target());
        saves += 1;
    }
    ratio(saves as f64, homeworks.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TimeFeatures {
    pub time_hw_quiz: f64,
    pub time_hw_video: f64,
    pub time_play_video: f64,
    pub hw_sessions: f64,
}

/// Recency of quizzes and videos relative to the attempt instant, fraction of
/// sessions with playback, and number of sessions with homework activity.
/// A missing quiz or video counts as the full window length.
pub fn time_features(view: &WindowView<'_>) -> TimeFeatures {
    let window_minutes = view.window.minutes();
    let since_last = |pred: fn(&EventRecord) -> bool| {
        view.events
            .iter()
            .rev()
            .find(|e| pred(e))
            .map(|e| ((view.window.end - e.timestamp) as f64 / 60.0).min(window_minutes))
            .unwrap_or(window_minutes)
    };
    let with_play = view
        .sessions
        .iter()
        .filter(|s| s.events.iter().any(|e| e.kind == EventKind::VideoPlay))
        .count();
    let with_homework = view
        .sessions
        .iter()
        .filter(|s| s.events.iter().any(|e| e.kind.is_homework()))
        .count();

    TimeFeatures {
        time_hw_quiz: since_last(|e| e.kind == EventKind::QuizAttempt),
        time_hw_video: since_last(|e| e.kind.is_video()),
        time_play_video: ratio(with_play as f64, view.sessions.len() as f64),
        hw_sessions: with_homework as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IntervalFeatures {
    pub num_quiz: f64,
    pub quiz_attempt: f64,
    pub video: f64,
    pub daily_session: f64,
    pub login: f64,
    /// No interval exists (first homework, or nothing submitted before).
    pub missing: bool,
}

/// Activity between the previous homework submission and the attempt.
pub fn interval_features(interval: Option<&WindowView<'_>>) -> IntervalFeatures {
    let Some(view) = interval else {
        return IntervalFeatures {
            missing: true,
            ..IntervalFeatures::default()
        };
    };
    let (quizzes, attempts) = view.quiz_counts();
    IntervalFeatures {
        num_quiz: quizzes as f64,
        quiz_attempt: ratio(attempts as f64, quizzes as f64),
        video: view.distinct_videos() as f64,
        daily_session: view.daily_sessions(),
        login: view.login_rate(),
        missing: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Meanscore {
    pub value: f64,
    pub missing: bool,
}

/// Mean of every quiz and homework grade recorded before the window end.
pub fn meanscore_feature(view: &WindowView<'_>) -> Meanscore {
    let grades: Vec<f64> = view.events.iter().filter_map(EventRecord::grade).collect();
    if grades.is_empty() {
        Meanscore {
            value: 0.0,
            missing: true,
        }
    } else {
        Meanscore {
            value: grades.iter().sum::<f64>() / grades.len() as f64,
            missing: false,
        }
    }
}
