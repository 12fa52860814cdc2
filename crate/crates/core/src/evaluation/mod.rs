//! Train/test protocols, student cohorts, metrics, ablation and feature
//! importance.

mod experiment;
mod importance;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use experiment::{
    ablation_study, fit_plmr, run_experiment, run_sweep, AblationReport, ExperimentSpec,
    MetricsReport, ModelKind, PlmrRun, PreparedCourse, TestRow,
};
pub use importance::{feature_importance, FeatureImportance, ImportanceReport};
pub use report::{write_reports_csv, write_reports_json, SweepMetric, SweepTable};

use crate::error::{Error, Result};
use crate::eventlog::{CourseCatalog, EventKind, EventLog, StudentId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Train on homeworks `1..i`, test on `i`.
    PreviousHw,
    /// Train on homework `i - 1`, test on `i`.
    PreviousOneHw,
    /// Train on every homework except `i`, test on `i`.
    MixData,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [
        Protocol::PreviousHw,
        Protocol::PreviousOneHw,
        Protocol::MixData,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::PreviousHw => "previous_hw",
            Protocol::PreviousOneHw => "previous_one_hw",
            Protocol::MixData => "mix_data",
        }
    }

    pub fn is_sequential(self) -> bool {
        self != Protocol::MixData
    }

    /// Training ordinals for target `i` in a course of `n` homeworks.
    pub fn train_ordinals(self, target: usize, n: usize) -> Result<Vec<usize>> {
        if target == 0 || target > n {
            return Err(Error::Protocol(format!("target {target} outside 1..={n}")));
        }
        if self.is_sequential() && target == 1 {
            return Err(Error::Protocol(format!(
                "{self} has no training data for the first homework"
            )));
        }
        Ok(match self {
            Protocol::PreviousHw => (1..target).collect(),
            Protocol::PreviousOneHw => vec![target - 1],
            Protocol::MixData => (1..=n).filter(|&o| o != target).collect(),
        })
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown protocol {s:?}")))
    }
}

/// Splits rows keyed by homework ordinal into (train, test).
pub fn split_protocol<T>(
    rows: &[T],
    ordinal: impl Fn(&T) -> usize,
    protocol: Protocol,
    target: usize,
    n: usize,
) -> Result<(Vec<&T>, Vec<&T>)> {
    let train: BTreeSet<usize> = protocol.train_ordinals(target, n)?.into_iter().collect();
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for r in rows {
        let o = ordinal(r);
        if o == target {
            test_rows.push(r);
        } else if train.contains(&o) {
            train_rows.push(r);
        }
    }
    Ok((train_rows, test_rows))
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum CohortKind {
    /// Submitted every homework.
    #[default]
    All,
    /// Submitted at least one homework but not all.
    Partial,
}

impl CohortKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CohortKind::All => "all",
            CohortKind::Partial => "partial",
        }
    }
}

impl fmt::Display for CohortKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CohortKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" | "all_hw" => Ok(CohortKind::All),
            "partial" | "partial_hw" => Ok(CohortKind::Partial),
            _ => Err(Error::Config(format!("unknown cohort {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cohorts {
    pub all_hw: BTreeSet<StudentId>,
    pub partial_hw: BTreeSet<StudentId>,
}

impl Cohorts {
    pub fn members(&self, kind: CohortKind) -> &BTreeSet<StudentId> {
        match kind {
            CohortKind::All => &self.all_hw,
            CohortKind::Partial => &self.partial_hw,
        }
    }
}

/// Partitions students by how many distinct homeworks they submitted.
/// Students without submissions belong to neither cohort.
pub fn partition_cohorts(log: &EventLog, catalog: &CourseCatalog) -> Cohorts {
    let n = catalog.num_homeworks();
    let mut out = Cohorts::default();
    for (student, events) in &log.students {
        let submitted: BTreeSet<&str> = events
            .iter()
            .filter(|e| e.kind == EventKind::HomeworkSubmit)
            .map(|e| e.target())
            .collect();
        match submitted.len() {
            0 => {}
            k if k == n => {
                out.all_hw.insert(student.clone());
            }
            _ => {
                out.partial_hw.insert(student.clone());
            }
        }
    }
    out
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Metric(format!("length mismatch: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::Metric("empty input".into()));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    let sq: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

/// Accuracy and F1 with `true` as the positive class. F1 is 0 when
/// precision and recall are both 0.
pub fn accuracy_f1(pred: &[bool], truth: &[bool]) -> Result<(f64, f64)> {
    check_lengths(pred.len(), truth.len())?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fneg = 0usize;
    let mut correct = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
        if p == t {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / pred.len() as f64;
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fneg > 0 {
        tp as f64 / (tp + fneg) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok((accuracy, f1))
}

/// Homework grades per student and ordinal, first submission only.
pub(crate) fn homework_grades(
    log: &EventLog,
    catalog: &CourseCatalog,
) -> BTreeMap<StudentId, BTreeMap<usize, f64>> {
    let mut out: BTreeMap<StudentId, BTreeMap<usize, f64>> = BTreeMap::new();
    for (student, events) in &log.students {
        for e in events {
            if let (EventKind::HomeworkSubmit, Some(g)) = (e.kind, e.grade()) {
                if let Some(o) = catalog.homework_ordinal(e.target()) {
                    out.entry(student.clone())
                        .or_default()
                        .entry(o)
                        .or_insert(g);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventlog::ingest_reader;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ords(rows: &[&usize]) -> Vec<usize> {
        rows.iter().map(|r| **r).collect()
    }

    #[test]
    fn protocol_splits_on_six_homeworks() {
        let rows: Vec<usize> = (1..=6).flat_map(|o| [o, o]).collect();
        let (tr, te) = split_protocol(&rows, |r| *r, Protocol::PreviousHw, 4, 6).unwrap();
        assert_eq!(ords(&tr), vec![1, 1, 2, 2, 3, 3]);
        assert_eq!(ords(&te), vec![4, 4]);
        let (tr, _) = split_protocol(&rows, |r| *r, Protocol::PreviousOneHw, 4, 6).unwrap();
        assert_eq!(ords(&tr), vec![3, 3]);
        let (tr, te) = split_protocol(&rows, |r| *r, Protocol::MixData, 1, 6).unwrap();
        assert_eq!(ords(&tr), vec![2, 2, 3, 3, 4, 4, 5, 5, 6, 6]);
        assert_eq!(ords(&te), vec![1, 1]);
        for p in [Protocol::PreviousHw, Protocol::PreviousOneHw] {
            assert!(matches!(p.train_ordinals(1, 6), Err(Error::Protocol(_))));
        }
        assert!(Protocol::MixData.train_ordinals(7, 6).is_err());
    }

    proptest! {
        #[test]
        fn splits_are_disjoint_and_exact(n in 2usize..10, t in 1usize..10, p in 0usize..3) {
            prop_assume!(t <= n);
            let protocol = Protocol::ALL[p];
            prop_assume!(!(protocol.is_sequential() && t == 1));
            let rows: Vec<usize> = (1..=n).collect();
            let (tr, te) = split_protocol(&rows, |r| *r, protocol, t, n).unwrap();
            let tr: BTreeSet<usize> = tr.into_iter().copied().collect();
            prop_assert_eq!(ords(&te), vec![t]);
            prop_assert!(!tr.contains(&t));
            let expected: BTreeSet<usize> = protocol.train_ordinals(t, n).unwrap().into_iter().collect();
            prop_assert_eq!(tr, expected);
        }

        #[test]
        fn rmse_symmetric_and_zero_on_self(v in proptest::collection::vec(-5.0f64..5.0, 1..30), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Vec<f64> = v.iter().map(|_| rng.random_range(-5.0..5.0)).collect();
            prop_assert_eq!(rmse(&v, &v).unwrap(), 0.0);
            prop_assert!((rmse(&v, &w).unwrap() - rmse(&w, &v).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn rmse_examples() {
        assert!((rmse(&[0.0, 1.0], &[0.0, 0.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..100).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..100).map(|_| rng.random()).collect();
        let mut acc = 0.0;
        for i in 0..100 {
            acc += (a[i] - b[i]).powi(2);
        }
        assert!((rmse(&a, &b).unwrap() - (acc / 100.0).sqrt()).abs() < 1e-14);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn accuracy_f1_examples() {
        let t = [true, false, true, false];
        assert_eq!(accuracy_f1(&t, &t).unwrap(), (1.0, 1.0));
        let (acc, f1) = accuracy_f1(&[true, true, false, false], &t).unwrap();
        assert_eq!(acc, 0.5);
        assert_eq!(f1, 0.5);
        let (_, f1) = accuracy_f1(&[false; 4], &t).unwrap();
        assert_eq!(f1, 0.0);
        assert!(accuracy_f1(&[true], &[true, false]).is_err());
    }

    #[test]
    fn cohorts() {
        let catalog = CourseCatalog::from_json(
            r#"{"homeworks":["h1","h2"],"quizzes":[],"videos":[],"grading":"continuous"}"#,
        )
        .unwrap();
        let text = r#"{"s":"full","t":1,"k":"homework_submit","h":"h1","g":1}
{"s":"full","t":2,"k":"homework_submit","h":"h2","g":1}
{"s":"half","t":1,"k":"homework_submit","h":"h1","g":1}
{"s":"half","t":2,"k":"homework_submit","h":"h1","g":1}
{"s":"none","t":1,"k":"problem_save","h":"h1"}
"#;
        let log = ingest_reader(text.as_bytes(), &catalog, 0.0).unwrap();
        let c = partition_cohorts(&log, &catalog);
        let names = |s: &BTreeSet<StudentId>| s.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(names(&c.all_hw), vec!["full"]);
        assert_eq!(names(&c.partial_hw), vec!["half"]);
    }
}
