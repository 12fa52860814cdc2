//! Comparison predictors: the per-student mean of previous homework grades,
//! and knowledge tracing with per-item guess and slip.

mod ktidem;

use std::collections::BTreeMap;

pub use ktidem::{KtFit, KtFitConfig, KtIdemModel, Response, ResponseSequence};

use crate::eventlog::StudentId;

/// Mean of `history`, or `fallback` when it is empty. Clamped to `[0, 1]`.
pub fn meanscore_predict(history: &[f64], fallback: f64) -> f64 {
    let value = if history.is_empty() {
        fallback
    } else {
        history.iter().sum::<f64>() / history.len() as f64
    };
    value.clamp(0.0, 1.0)
}

/// Homework grades per student, keyed by homework ordinal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeanscoreBaseline {
    grades: BTreeMap<StudentId, BTreeMap<usize, f64>>,
    fallback: f64,
}

impl MeanscoreBaseline {
    pub fn new(fallback: f64) -> Self {
        MeanscoreBaseline {
            grades: BTreeMap::new(),
            fallback,
        }
    }

    /// Records an observed homework grade. A repeated ordinal keeps the first.
    pub fn observe(&mut self, student: &StudentId, ordinal: usize, grade: f64) {
        self.grades
            .entry(student.clone())
            .or_default()
            .entry(ordinal)
            .or_insert(grade);
    }

    pub fn fallback(&self) -> f64 {
        self.fallback
    }

    /// Prediction from the homeworks for which `keep(ordinal)` holds.
    pub fn predict_with(&self, student: &StudentId, keep: impl Fn(usize) -> bool) -> f64 {
        let history: Vec<f64> = self
            .grades
            .get(student)
            .map(|g| {
                g.iter()
                    .filter(|(o, _)| keep(**o))
                    .map(|(_, v)| *v)
                    .collect()
            })
            .unwrap_or_default();
        meanscore_predict(&history, self.fallback)
    }

    /// Mean of the homeworks before `ordinal`.
    pub fn predict_before(&self, student: &StudentId, ordinal: usize) -> f64 {
        self.predict_with(student, |o| o < ordinal)
    }

    /// Mean of every homework except `ordinal`.
    pub fn predict_excluding(&self, student: &StudentId, ordinal: usize) -> f64 {
        self.predict_with(student, |o| o != ordinal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mean_of_history() {
        assert!((meanscore_predict(&[0.8, 0.6], 0.0) - 0.7).abs() < 1e-15);
        assert_eq!(meanscore_predict(&[], 0.55), 0.55);
        assert_eq!(meanscore_predict(&[1.0], 0.0), 1.0);
    }

    #[test]
    fn baseline_filters_by_ordinal() {
        let s = StudentId::new("u").unwrap();
        let mut b = MeanscoreBaseline::new(0.5);
        b.observe(&s, 1, 0.2);
        b.observe(&s, 2, 0.4);
        b.observe(&s, 3, 0.9);
        assert!((b.predict_before(&s, 3) - 0.3).abs() < 1e-15);
        assert!((b.predict_excluding(&s, 2) - 0.55).abs() < 1e-15);
        assert_eq!(b.predict_before(&s, 1), 0.5);
        assert_eq!(b.predict_before(&StudentId::new("x").unwrap(), 4), 0.5);
    }

    proptest! {
        #[test]
        fn permutation_invariant(mut h in proptest::collection::vec(0.0f64..=1.0, 0..20), seed in any::<u64>()) {
            let a = meanscore_predict(&h, 0.3);
            let n = h.len();
            if n > 1 {
                h.rotate_left((seed as usize) % n);
                h.swap(0, n - 1);
            }
            let b = meanscore_predict(&h, 0.3);
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&b));
        }
    }
}
