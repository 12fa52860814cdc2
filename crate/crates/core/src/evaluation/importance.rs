use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eventlog::StudentId;
use crate::features::{feature_group, FeatureGroup};
use crate::plmr::PlmrModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub name: String,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    /// Every model column except the Meanscore group, in model order.
    pub features: Vec<FeatureImportance>,
    /// Samples averaged over.
    pub samples: usize,
    /// Samples whose denominator was zero.
    pub skipped: usize,
    /// Samples of students the model does not know.
    pub unknown: usize,
}

impl ImportanceReport {
    pub fn total(&self) -> f64 {
        self.features.iter().map(|f| f.importance).sum()
    }
}

/// Per feature `i`, the sample mean of
/// `sum_d |p_d f_i w_di| / sum_d |p_d sum_k f_k w_dk|`, where `k` runs over
/// the non-Meanscore columns and the bias is left out.
pub fn feature_importance<'a>(
    model: &PlmrModel,
    samples: impl IntoIterator<Item = (&'a StudentId, &'a [f64])>,
) -> Result<ImportanceReport> {
    let n_f = model.num_features();
    let kept: Vec<usize> = model
        .feature_names()
        .iter()
        .enumerate()
        .filter(|(_, name)| feature_group(name) != Some(FeatureGroup::Meanscore))
        .map(|(k, _)| k)
        .collect();

    let mut sums = vec![0.0; kept.len()];
    let mut used = 0usize;
    let mut skipped = 0usize;
    let mut unknown = 0usize;
    let mut terms = vec![0.0; kept.len()];
    for (student, f) in samples {
        if f.len() != n_f {
            return Err(Error::Dimension {
                expected: n_f,
                got: f.len(),
            });
        }
        let Some(p) = model.membership(student) else {
            unknown += 1;
            continue;
        };
        let mut den = 0.0;
        terms.iter_mut().for_each(|t| *t = 0.0);
        for (d, pd) in p.iter().enumerate() {
            let w = model.weights(d);
            let mut inner = 0.0;
            for (j, &k) in kept.iter().enumerate() {
                let c = pd * f[k] * w[k];
                inner += c;
                terms[j] += c.abs();
            }
            den += inner.abs();
        }
        if den == 0.0 {
            skipped += 1;
            continue;
        }
        for (s, t) in sums.iter_mut().zip(&terms) {
            *s += t / den;
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::Importance(format!(
            "no usable samples ({skipped} with zero denominator, {unknown} unknown students)"
        )));
    }
    let features = kept
        .iter()
        .zip(sums)
        .map(|(&k, s)| FeatureImportance {
            name: model.feature_names()[k].clone(),
            importance: s / used as f64,
        })
        .collect();
    Ok(ImportanceReport {
        features,
        samples: used,
        skipped,
        unknown,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plmr::LossKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sid(s: &str) -> StudentId {
        StudentId::new(s).unwrap()
    }

    #[test]
    fn single_active_feature() {
        let m = PlmrModel::from_parts(
            LossKind::Squared,
            vec![sid("a")],
            vec![0.3],
            vec![vec![1.0]],
            vec![vec![1.0, 0.0]],
        )
        .unwrap();
        let s = sid("a");
        let f = [2.0, 5.0];
        let r = feature_importance(&m, [(&s, &f[..])]).unwrap();
        assert_eq!(r.features[0].importance, 1.0);
        assert_eq!(r.features[1].importance, 0.0);
        assert_eq!(r.samples, 1);
    }

    #[test]
    fn meanscore_columns_are_excluded() {
        let m = PlmrModel::from_parts(
            LossKind::Squared,
            vec![sid("a")],
            vec![0.0],
            vec![vec![1.0]],
            vec![vec![1.0, 1.0, 1.0]],
        )
        .unwrap()
        .with_feature_names(vec![
            "NumQuiz".into(),
            "Meanscore".into(),
            "MeanscoreMissing".into(),
        ])
        .unwrap();
        let s = sid("a");
        let f = [1.0, 100.0, 1.0];
        let r = feature_importance(&m, [(&s, &f[..])]).unwrap();
        assert_eq!(r.features.len(), 1);
        assert_eq!(r.features[0].name, "NumQuiz");
        assert_eq!(r.features[0].importance, 1.0);
    }

    #[test]
    fn zero_denominators_skip_then_fail() {
        let m = PlmrModel::from_parts(
            LossKind::Squared,
            vec![sid("a")],
            vec![0.0],
            vec![vec![1.0]],
            vec![vec![1.0, -1.0]],
        )
        .unwrap();
        let s = sid("a");
        let zero = [1.0, 1.0];
        let ok = [1.0, 0.0];
        let r = feature_importance(&m, [(&s, &zero[..]), (&s, &ok[..])]).unwrap();
        assert_eq!((r.samples, r.skipped), (1, 1));
        assert!(matches!(
            feature_importance(&m, [(&s, &zero[..])]),
            Err(Error::Importance(_))
        ));
    }

    /// Literal per-sample double loop.
    fn brute_force(p: &[Vec<f64>], w: &[Vec<f64>], samples: &[(usize, Vec<f64>)]) -> Vec<f64> {
        let n_f = w[0].len();
        let mut out = vec![0.0; n_f];
        let mut n = 0.0;
        for (s, f) in samples {
            let mut den = 0.0;
            for d in 0..w.len() {
                let mut inner = 0.0;
                for k in 0..n_f {
                    inner += p[*s][d] * f[k] * w[d][k];
                }
                den += inner.abs();
            }
            if den == 0.0 {
                continue;
            }
            n += 1.0;
            for i in 0..n_f {
                let mut num = 0.0;
                for d in 0..w.len() {
                    num += (p[*s][d] * f[i] * w[d][i]).abs();
                }
                out[i] += num / den;
            }
        }
        out.iter().map(|v| v / n).collect()
    }

    #[test]
    fn random_two_model_instances_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let students: Vec<StudentId> = (0..3).map(|i| sid(&format!("s{i}"))).collect();
            let p: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let w: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let samples: Vec<(usize, Vec<f64>)> = (0..5)
                .map(|_| {
                    (
                        rng.random_range(0..3),
                        (0..4).map(|_| rng.random_range(-2.0..2.0)).collect(),
                    )
                })
                .collect();
            let m = PlmrModel::from_parts(
                LossKind::Squared,
                students.clone(),
                vec![0.5; 3],
                p.clone(),
                w.clone(),
            )
            .unwrap();
            let r = feature_importance(
                &m,
                samples.iter().map(|(s, f)| (&students[*s], f.as_slice())),
            )
            .unwrap();
            let oracle = brute_force(&p, &w, &samples);
            for (got, want) in r.features.iter().zip(&oracle) {
                assert!(got.importance >= 0.0);
                assert!((got.importance - want).abs() < 1e-10);
            }
            assert!(r.total() >= 1.0 - 1e-12);
        }
    }
}
