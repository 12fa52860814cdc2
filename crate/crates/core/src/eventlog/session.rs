use super::{EventRecord, StudentId};

/// One hour: a longer gap without activity ends a session.
pub const DEFAULT_SESSION_TIMEOUT: i64 = 3600;

/// A maximal run of one student's events with no gap above the timeout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionRecord<'a> {
    pub start: i64,
    pub end: i64,
    pub events: &'a [EventRecord],
}

impl<'a> SessionRecord<'a> {
    pub fn student(&self) -> &'a StudentId {
        &self.events[0].student
    }

    pub fn duration_secs(&self) -> i64 {
        self.end - self.start
    }
}

/// Splits one student's time-sorted events into sessions. A gap equal to the
/// timeout stays in-session; only a strictly longer gap splits.
pub fn sessionize(events: &[EventRecord], timeout: i64) -> Vec<SessionRecord<'_>> {
    let mut sessions = Vec::new();
    let mut begin = 0;
    for i in 1..=events.len() {
        let split = i == events.len() || events[i].timestamp - events[i - 1].timestamp > timeout;
        if split && begin < i {
            let run = &events[begin..i];
            sessions.push(SessionRecord {
                start: run[0].timestamp,
                end: run[run.len() - 1].timestamp,
                events: run,
            });
            begin = i;
        }
    }
    sessions
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventlog::{EventDetail, EventKind};
    use proptest::prelude::*;

    fn at(times: &[i64]) -> Vec<EventRecord> {
        times
            .iter()
            .map(|&t| EventRecord {
                student: StudentId::new("u1").unwrap(),
                timestamp: t,
                kind: EventKind::ProblemSave,
                detail: EventDetail::Save {
                    homework: "hw1".into(),
                },
            })
            .collect()
    }

    #[test]
    fn boundary_gap_does_not_split() {
        let ev = at(&[0, 100, 3700]);
        let s = sessionize(&ev, 3600);
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].start, s[0].end), (0, 3700));
    }

    #[test]
    fn gap_over_timeout_splits() {
        let ev = at(&[0, 100, 3701]);
        let s = sessionize(&ev, 3600);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].events.len(), 2);
        assert_eq!(s[1].events.len(), 1);
    }

    #[test]
    fn singleton_and_empty() {
        let ev = at(&[42]);
        let s = sessionize(&ev, 3600);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].start, s[0].end);
        assert!(sessionize(&[], 3600).is_empty());
    }

    proptest! {
        #[test]
        fn sessions_partition_and_separate(gaps in proptest::collection::vec(0i64..8000, 0..60)) {
            let mut t = 1_000_000;
            let mut times = vec![t];
            for g in &gaps { t += g; times.push(t); }
            let ev = at(&times);
            let s = sessionize(&ev, DEFAULT_SESSION_TIMEOUT);
            prop_assert_eq!(s.iter().map(|x| x.events.len()).sum::<usize>(), ev.len());
            for w in s.windows(2) {
                prop_assert!(w[1].start - w[0].end > DEFAULT_SESSION_TIMEOUT);
            }
            for x in &s {
                for p in x.events.windows(2) {
                    prop_assert!(p[1].timestamp - p[0].timestamp <= DEFAULT_SESSION_TIMEOUT);
                }
            }
        }
    }
}
