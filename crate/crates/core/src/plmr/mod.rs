//! Personalized linear multi-regression.
//!
//! A grade is predicted as `b_s + p_s' W f`: a per-student bias plus the
//! student's membership-weighted mix of `l` shared linear models applied to
//! the feature vector. Parameters are fit by minimizing the mean loss plus
//! `gamma * (||P||_F + ||W||_F)`.

mod train;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub use train::{
    gamma_grid_search, objective, train, DataRow, Dataset, GammaSearch, Regularizer, StepRule,
    TrainConfig,
};

use crate::error::{Error, Result};
use crate::eventlog::StudentId;
use crate::features::StandardizationStats;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Squared,
    Logistic,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlmrModel {
    pub(crate) loss: LossKind,
    pub(crate) l: usize,
    pub(crate) n_features: usize,
    pub(crate) feature_names: Vec<String>,
    pub(crate) standardization: Option<StandardizationStats>,
    pub(crate) students: Vec<StudentId>,
    pub(crate) index: HashMap<StudentId, usize>,
    pub(crate) bias: Vec<f64>,
    /// `students.len() x l`, row-major.
    pub(crate) memberships: Vec<f64>,
    /// `l x n_features`, row-major.
    pub(crate) weights: Vec<f64>,
    pub(crate) train_log: Vec<f64>,
}

impl PlmrModel {
    /// Assembles a model from explicit parameters.
    pub fn from_parts(
        loss: LossKind,
        students: Vec<StudentId>,
        bias: Vec<f64>,
        memberships: Vec<Vec<f64>>,
        weights: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let l = weights.len();
        let n_features = weights.first().map_or(0, Vec::len);
        if l == 0 {
            return Err(Error::ModelDocument(
                "model needs at least one regression".into(),
            ));
        }
        if weights.iter().any(|w| w.len() != n_features) {
            return Err(Error::ModelDocument("ragged coefficient matrix".into()));
        }
        if bias.len() != students.len() || memberships.len() != students.len() {
            return Err(Error::ModelDocument(
                "bias/membership count differs from students".into(),
            ));
        }
        if memberships.iter().any(|p| p.len() != l) {
            return Err(Error::ModelDocument(format!(
                "membership vectors must have length {l}"
            )));
        }
        let index = index_of(&students)?;
        let model = PlmrModel {
            loss,
            l,
            n_features,
            feature_names: (0..n_features).map(|k| format!("f{k}")).collect(),
            standardization: None,
            students,
            index,
            bias,
            memberships: memberships.concat(),
            weights: weights.concat(),
            train_log: Vec::new(),
        };
        model.check_finite()?;
        Ok(model)
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                got: names.len(),
            });
        }
        self.feature_names = names;
        Ok(self)
    }

    pub fn with_standardization(mut self, stats: Option<StandardizationStats>) -> Result<Self> {
        if let Some(s) = &stats {
            if s.width() != self.n_features {
                return Err(Error::Dimension {
                    expected: self.n_features,
                    got: s.width(),
                });
            }
        }
        self.standardization = stats;
        Ok(self)
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn num_models(&self) -> usize {
        self.l
    }

    pub fn num_features(&self) -> usize {
        self.n_features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn standardization(&self) -> Option<&StandardizationStats> {
        self.standardization.as_ref()
    }

    pub fn students(&self) -> &[StudentId] {
        &self.students
    }

    pub fn knows(&self, student: &StudentId) -> bool {
        self.index.contains_key(student)
    }

    pub fn bias(&self, student: &StudentId) -> Option<f64> {
        self.index.get(student).map(|&i| self.bias[i])
    }

    pub fn membership(&self, student: &StudentId) -> Option<&[f64]> {
        self.index
            .get(student)
            .map(|&i| &self.memberships[i * self.l..(i + 1) * self.l])
    }

    /// Row `d` of the coefficient matrix.
    pub fn weights(&self, d: usize) -> &[f64] {
        &self.weights[d * self.n_features..(d + 1) * self.n_features]
    }

    /// Objective value at initialization and after every accepted epoch.
    pub fn train_log(&self) -> &[f64] {
        &self.train_log
    }

    pub(crate) fn score_at(&self, i: usize, f: &[f64]) -> f64 {
        let p = &self.memberships[i * self.l..(i + 1) * self.l];
        let mut total = self.bias[i];
        for (d, pd) in p.iter().enumerate() {
            let w = self.weights(d);
            let inner: f64 = f.iter().zip(w).map(|(x, w)| x * w).sum();
            total += pd * inner;
        }
        total
    }

    fn student_index(&self, student: &StudentId, f: &[f64]) -> Result<usize> {
        if f.len() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                got: f.len(),
            });
        }
        self.index
            .get(student)
            .copied()
            .ok_or_else(|| Error::ColdStart(student.to_string()))
    }

    /// `b_s + sum_d p_sd * sum_k f_k w_dk` on model-space (already
    /// standardized) features.
    pub fn predict(&self, student: &StudentId, f: &[f64]) -> Result<f64> {
        let i = self.student_index(student, f)?;
        Ok(self.score_at(i, f))
    }

    /// Sigmoid of [`predict`](Self::predict); the class probability for
    /// logistic models.
    pub fn predict_proba(&self, student: &StudentId, f: &[f64]) -> Result<f64> {
        self.predict(student, f).map(sigmoid)
    }

    /// Applies the stored standardization to raw features, then predicts.
    pub fn predict_raw(&self, student: &StudentId, raw: &[f64]) -> Result<f64> {
        match &self.standardization {
            Some(stats) => self.predict(student, &stats.applied(raw)?),
            None => self.predict(student, raw),
        }
    }

    /// Grade-scale output: the score for squared loss, the probability for
    /// logistic loss.
    pub fn predict_grade(&self, student: &StudentId, f: &[f64]) -> Result<f64> {
        match self.loss {
            LossKind::Squared => self.predict(student, f),
            LossKind::Logistic => self.predict_proba(student, f),
        }
    }

    pub fn membership_norm(&self) -> f64 {
        frobenius(&self.memberships)
    }

    pub fn weight_norm(&self) -> f64 {
        frobenius(&self.weights)
    }

    fn check_finite(&self) -> Result<()> {
        let all = self
            .bias
            .iter()
            .chain(&self.memberships)
            .chain(&self.weights);
        if all.into_iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::ModelDocument("non-finite parameter".into()))
        }
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            version: MODEL_VERSION,
            loss: self.loss,
            l: self.l,
            n_features: self.n_features,
            feature_names: self.feature_names.clone(),
            standardization: self.standardization.clone(),
            bias: self
                .students
                .iter()
                .zip(&self.bias)
                .map(|(s, b)| (s.to_string(), *b))
                .collect(),
            memberships: self
                .students
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    (
                        s.to_string(),
                        self.memberships[i * self.l..(i + 1) * self.l].to_vec(),
                    )
                })
                .collect(),
            weights: self.weights.clone(),
            train_log: self.train_log.clone(),
        }
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        if doc.version != MODEL_VERSION {
            return Err(Error::ModelDocument(format!(
                "unsupported version {} (expected {MODEL_VERSION})",
                doc.version
            )));
        }
        if doc.l == 0 {
            return Err(Error::ModelDocument("l must be positive".into()));
        }
        if doc.weights.len() != doc.l * doc.n_features {
            return Err(Error::ModelDocument(format!(
                "W has {} entries, expected {} x {}",
                doc.weights.len(),
                doc.l,
                doc.n_features
            )));
        }
        if doc.feature_names.len() != doc.n_features {
            return Err(Error::ModelDocument(
                "feature_names length differs from n_F".into(),
            ));
        }
        if let Some(s) = &doc.standardization {
            if s.mean.len() != doc.n_features || s.std.len() != doc.n_features {
                return Err(Error::ModelDocument(
                    "standardization width differs from n_F".into(),
                ));
            }
        }
        if doc.bias.len() != doc.memberships.len()
            || doc
                .bias
                .keys()
                .zip(doc.memberships.keys())
                .any(|(a, b)| a != b)
        {
            return Err(Error::ModelDocument(
                "B and P cover different students".into(),
            ));
        }

        let mut students = Vec::with_capacity(doc.bias.len());
        let mut bias = Vec::with_capacity(doc.bias.len());
        let mut memberships = Vec::with_capacity(doc.bias.len() * doc.l);
        for ((name, b), p) in doc.bias.into_iter().zip(doc.memberships.into_values()) {
            if p.len() != doc.l {
                return Err(Error::ModelDocument(format!(
                    "membership of {name} has wrong length"
                )));
            }
            students.push(StudentId::new(name).map_err(|e| Error::ModelDocument(e.to_string()))?);
            bias.push(b);
            memberships.extend(p);
        }
        let model = PlmrModel {
            loss: doc.loss,
            l: doc.l,
            n_features: doc.n_features,
            feature_names: doc.feature_names,
            standardization: doc.standardization,
            index: index_of(&students)?,
            students,
            bias,
            memberships,
            weights: doc.weights,
            train_log: doc.train_log,
        };
        model.check_finite()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| Error::ModelDocument(e.to_string()))?;
        Self::from_document(doc)
    }
}

fn index_of(students: &[StudentId]) -> Result<HashMap<StudentId, usize>> {
    let mut index = HashMap::with_capacity(students.len());
    for (i, s) in students.iter().enumerate() {
        if index.insert(s.clone(), i).is_some() {
            return Err(Error::ModelDocument(format!("duplicate student {s}")));
        }
    }
    Ok(index)
}

pub(crate) fn frobenius(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// JSON model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub version: u32,
    pub loss: LossKind,
    pub l: usize,
    #[serde(rename = "n_F")]
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub standardization: Option<StandardizationStats>,
    #[serde(rename = "B")]
    pub bias: BTreeMap<String, f64>,
    #[serde(rename = "P")]
    pub memberships: BTreeMap<String, Vec<f64>>,
    /// Row-major `l x n_F`.
    #[serde(rename = "W")]
    pub weights: Vec<f64>,
    pub train_log: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sid(s: &str) -> StudentId {
        StudentId::new(s).unwrap()
    }

    #[test]
    fn bias_only() {
        let m = PlmrModel::from_parts(
            LossKind::Squared,
            vec![sid("a")],
            vec![0.5],
            vec![vec![0.3]],
            vec![vec![0.0, 0.0]],
        )
        .unwrap();
        assert_eq!(m.predict(&sid("a"), &[9.0, -4.0]).unwrap(), 0.5);
    }

    #[test]
    fn single_term() {
        let m = PlmrModel::from_parts(
            LossKind::Squared,
            vec![sid("a")],
            vec![0.0],
            vec![vec![1.0]],
            vec![vec![2.0, 0.0]],
        )
        .unwrap();
        assert!((m.predict(&sid("a"), &[0.3, 7.0]).unwrap() - 0.6).abs() < 1e-15);
    }

    /// Brute-force double sum over (d, k).
    fn double_loop(b: f64, p: &[f64], w: &[Vec<f64>], f: &[f64]) -> f64 {
        let mut total = b;
        for d in 0..p.len() {
            for k in 0..f.len() {
                total += p[d] * f[k] * w[d][k];
            }
        }
        total
    }

    #[test]
    fn random_instances_match_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let b: f64 = rng.random_range(-1.0..1.0);
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let w: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let f: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let m = PlmrModel::from_parts(
                LossKind::Squared,
                vec![sid("s")],
                vec![b],
                vec![p.clone()],
                w.clone(),
            )
            .unwrap();
            let got = m.predict(&sid("s"), &f).unwrap();
            assert!((got - double_loop(b, &p, &w, &f)).abs() < 1e-12);
        }
    }

    #[test]
    fn prediction_is_linear_in_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let m = PlmrModel::from_parts(
            LossKind::Squared,
            vec![sid("s")],
            vec![0.7],
            vec![vec![0.4, -1.3]],
            w,
        )
        .unwrap();
        let f1 = [0.5, -2.0, 1.0];
        let f2 = [1.5, 0.25, -3.0];
        let sum: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a + b).collect();
        let s = &sid("s");
        let lhs = m.predict(s, &sum).unwrap() - 0.7;
        let rhs = (m.predict(s, &f1).unwrap() - 0.7) + (m.predict(s, &f2).unwrap() - 0.7);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn errors_on_unknown_student_and_dimension() {
        let m = PlmrModel::from_parts(
            LossKind::Squared,
            vec![sid("a")],
            vec![0.0],
            vec![vec![1.0]],
            vec![vec![1.0]],
        )
        .unwrap();
        assert!(matches!(
            m.predict(&sid("zz"), &[1.0]),
            Err(Error::ColdStart(_))
        ));
        assert!(matches!(
            m.predict(&sid("a"), &[1.0, 2.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn logistic_proba() {
        let m = PlmrModel::from_parts(
            LossKind::Logistic,
            vec![sid("a")],
            vec![0.0],
            vec![vec![1.0]],
            vec![vec![1.0]],
        )
        .unwrap();
        assert_eq!(m.predict_proba(&sid("a"), &[0.0]).unwrap(), 0.5);
        assert!(m.predict_grade(&sid("a"), &[40.0]).unwrap() > 0.999);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    fn sample_model() -> PlmrModel {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let students: Vec<_> = ["a", "b", "c"].iter().map(|s| sid(s)).collect();
        let bias = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
        let p = (0..3)
            .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0) / 3.0).collect())
            .collect();
        let w = (0..2)
            .map(|_| (0..4).map(|_| rng.random::<f64>() * 1e-7).collect())
            .collect();
        PlmrModel::from_parts(LossKind::Squared, students, bias, p, w)
            .unwrap()
            .with_standardization(Some(StandardizationStats {
                mean: vec![0.1; 4],
                std: vec![0.3; 4],
            }))
            .unwrap()
    }

    #[test]
    fn document_roundtrip_is_bit_exact() {
        let m = sample_model();
        let back = PlmrModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.weights.iter().zip(&m.weights) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.to_json(), m.to_json());
    }

    #[test]
    fn tampered_documents_are_rejected() {
        let m = sample_model();
        let mut doc: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        doc["n_F"] = serde_json::json!(5);
        assert!(PlmrModel::from_json(&doc.to_string()).is_err());

        let mut doc: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        doc["version"] = serde_json::json!(99);
        assert!(PlmrModel::from_json(&doc.to_string()).is_err());

        let mut doc: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        doc["P"]["a"] = serde_json::json!([1.0]);
        assert!(PlmrModel::from_json(&doc.to_string()).is_err());

        assert!(PlmrModel::from_json("{\"version\": 1").is_err());
    }
}
