use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    accuracy_f1, homework_grades, partition_cohorts, rmse, split_protocol, CohortKind, Cohorts,
    Protocol,
};
use crate::baselines::{KtFitConfig, KtIdemModel, MeanscoreBaseline, Response, ResponseSequence};
use crate::error::{Error, Result};
use crate::eventlog::{
    ingest_log, CourseCatalog, EventDetail, EventLog, GradingKind, StudentId,
    DEFAULT_MAX_DROP_FRACTION, DEFAULT_SESSION_TIMEOUT,
};
use crate::features::{
    build_feature_matrix, observations, FeatureColumn, FeatureConfig, FeatureGroup, FeatureMatrix,
    FeatureRow, StandardizationStats,
};
use crate::plmr::{train, DataRow, Dataset, LossKind, PlmrModel, TrainConfig};

/// A course ingested and featurized once, shared by many experiments.
#[derive(Debug, Clone)]
pub struct PreparedCourse {
    pub catalog: CourseCatalog,
    pub log: EventLog,
    /// Every feature column, raw values, one row per graded observation.
    pub matrix: FeatureMatrix,
    pub cohorts: Cohorts,
    /// Observations dropped because the target was never submitted.
    pub unsubmitted: usize,
    session_timeout: i64,
    grades: BTreeMap<StudentId, BTreeMap<usize, f64>>,
}

fn featurize(
    log: &EventLog,
    catalog: &CourseCatalog,
    session_timeout: i64,
) -> Result<(FeatureMatrix, usize)> {
    let obs = observations(log, catalog);
    let config = FeatureConfig {
        session_timeout,
        ..FeatureConfig::default()
    };
    let (matrix, report) = build_feature_matrix(log, catalog, &obs, &config)?;
    Ok((matrix, report.unsubmitted.len()))
}

impl PreparedCourse {
    pub fn new(log: EventLog, catalog: CourseCatalog, session_timeout: i64) -> Result<Self> {
        let (matrix, unsubmitted) = featurize(&log, &catalog, session_timeout)?;
        Ok(PreparedCourse {
            cohorts: partition_cohorts(&log, &catalog),
            grades: homework_grades(&log, &catalog),
            catalog,
            log,
            matrix,
            unsubmitted,
            session_timeout,
        })
    }

    /// Reads a catalog and log with the default drop tolerance and session
    /// timeout.
    pub fn load(log_path: impl AsRef<Path>, catalog_path: impl AsRef<Path>) -> Result<Self> {
        let catalog = CourseCatalog::load(catalog_path)?;
        let log = ingest_log(log_path, &catalog, DEFAULT_MAX_DROP_FRACTION)?;
        Self::new(log, catalog, DEFAULT_SESSION_TIMEOUT)
    }

    pub fn session_timeout(&self) -> i64 {
        self.session_timeout
    }

    fn matrix_for(&self, config: &FeatureConfig) -> Result<Cow<'_, FeatureMatrix>> {
        let base = if config.session_timeout == self.session_timeout {
            Cow::Borrowed(&self.matrix)
        } else {
            Cow::Owned(featurize(&self.log, &self.catalog, config.session_timeout)?.0)
        };
        if config.groups.len() == FeatureGroup::ALL.len() {
            Ok(base)
        } else {
            Ok(Cow::Owned(base.select_groups(&config.groups)))
        }
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Plmr,
    Meanscore,
    Ktidem,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plmr" => Ok(ModelKind::Plmr),
            "meanscore" => Ok(ModelKind::Meanscore),
            "ktidem" | "kt-idem" => Ok(ModelKind::Ktidem),
            _ => Err(Error::Config(format!("unknown model {s:?}"))),
        }
    }
}

/// Everything that determines one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub protocol: Protocol,
    /// Target homework ordinal.
    pub target: usize,
    pub cohort: CohortKind,
    pub model: ModelKind,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub kt: KtFitConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            protocol: Protocol::PreviousHw,
            target: 2,
            cohort: CohortKind::All,
            model: ModelKind::Plmr,
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
            kt: KtFitConfig::default(),
        }
    }
}

impl ExperimentSpec {
    /// Column label used in reports and sweep tables.
    pub fn model_label(&self) -> String {
        match self.model {
            ModelKind::Plmr => {
                let kind = match self.train.loss {
                    LossKind::Squared => "plmr",
                    LossKind::Logistic => "plmr-logistic",
                };
                format!("{kind}(l={},gamma={})", self.train.l, self.train.gamma)
            }
            ModelKind::Meanscore => "meanscore".into(),
            ModelKind::Ktidem => "kt-idem".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub protocol: Protocol,
    pub target: usize,
    pub cohort: CohortKind,
    pub model: String,
    /// On predictions clamped to `[0, 1]`.
    pub rmse: f64,
    /// Present for binary grading, threshold 0.5.
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    /// Test rows.
    pub rows: usize,
    pub train_rows: usize,
    /// Test students unknown to the model, predicted by Meanscore instead.
    pub cold_start: usize,
    pub n_features: usize,
}

fn split<'a>(
    course: &PreparedCourse,
    matrix: &'a FeatureMatrix,
    spec: &ExperimentSpec,
) -> Result<(Vec<&'a FeatureRow>, Vec<&'a FeatureRow>)> {
    let members = course.cohorts.members(spec.cohort);
    let rows: Vec<&FeatureRow> = matrix
        .rows
        .iter()
        .filter(|r| members.contains(&r.student))
        .collect();
    let (train, test) = split_protocol(
        &rows,
        |r| r.ordinal,
        spec.protocol,
        spec.target,
        course.catalog.num_homeworks(),
    )?;
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if test.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    Ok((
        train.into_iter().copied().collect(),
        test.into_iter().copied().collect(),
    ))
}

/// A test row in model space (standardized when the run standardizes).
#[derive(Debug, Clone, PartialEq)]
pub struct TestRow {
    pub student: StudentId,
    pub ordinal: usize,
    pub features: Vec<f64>,
    pub grade: f64,
}

/// A trained PLMR model together with its test rows.
#[derive(Debug, Clone)]
pub struct PlmrRun {
    pub model: PlmrModel,
    pub columns: Vec<FeatureColumn>,
    pub test: Vec<TestRow>,
    pub train_rows: usize,
}

/// Featurizes, splits, standardizes on the training rows and trains.
pub fn fit_plmr(course: &PreparedCourse, spec: &ExperimentSpec) -> Result<PlmrRun> {
    let matrix = course.matrix_for(&spec.features)?;
    let (train_rows, test_rows) = split(course, &matrix, spec)?;
    let width = matrix.width();
    let stats = if spec.features.standardize {
        Some(StandardizationStats::fit(
            train_rows.iter().map(|r| r.values.as_slice()),
            width,
        )?)
    } else {
        None
    };
    let transform = |values: &[f64]| -> Result<Vec<f64>> {
        match &stats {
            Some(s) => s.applied(values),
            None => Ok(values.to_vec()),
        }
    };

    let rows = train_rows
        .iter()
        .map(|r| {
            Ok(DataRow {
                student: r.student.clone(),
                target: r.homework.clone(),
                features: transform(&r.values)?,
                grade: r.grade,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let data = Dataset::new(rows, width)?
        .with_feature_names(matrix.names())?
        .with_standardization(stats.clone());
    let model = train(&data, &spec.train)?;

    let test = test_rows
        .iter()
        .map(|r| {
            Ok(TestRow {
                student: r.student.clone(),
                ordinal: r.ordinal,
                features: transform(&r.values)?,
                grade: r.grade,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PlmrRun {
        model,
        columns: matrix.columns.clone(),
        test,
        train_rows: train_rows.len(),
    })
}

fn meanscore_baseline(course: &PreparedCourse, train_rows: &[&FeatureRow]) -> MeanscoreBaseline {
    let fallback = train_rows.iter().map(|r| r.grade).sum::<f64>() / train_rows.len().max(1) as f64;
    let mut baseline = MeanscoreBaseline::new(fallback);
    for (student, grades) in &course.grades {
        for (&o, &g) in grades {
            baseline.observe(student, o, g);
        }
    }
    baseline
}

/// Quiz responses of one unit strictly before `before`, in time order.
fn quiz_responses(
    course: &PreparedCourse,
    student: &StudentId,
    homework: &str,
    before: i64,
) -> Vec<Response> {
    course
        .log
        .events_of(student)
        .iter()
        .take_while(|e| e.timestamp < before)
        .filter_map(|e| match &e.detail {
            EventDetail::Quiz { quiz, grade, .. }
                if course.catalog.quiz_homework(quiz) == Some(homework) =>
            {
                Some(Response {
                    item: quiz.clone(),
                    correct: *grade >= 0.5,
                })
            }
            _ => None,
        })
        .collect()
}

fn mean_emission(model: &KtIdemModel, items: &BTreeSet<&str>) -> (f64, f64) {
    let chosen: Vec<&str> = model.items().filter(|i| items.contains(i)).collect();
    let pool: Vec<&str> = if chosen.is_empty() {
        model.items().collect()
    } else {
        chosen
    };
    let n = pool.len().max(1) as f64;
    let g = pool.iter().map(|i| model.guess[*i]).sum::<f64>() / n;
    let s = pool.iter().map(|i| model.slip[*i]).sum::<f64>() / n;
    (g, s)
}

fn ktidem_predictions(
    course: &PreparedCourse,
    spec: &ExperimentSpec,
    train_rows: &[&FeatureRow],
    test_rows: &[&FeatureRow],
) -> Result<Vec<f64>> {
    if course.catalog.grading() != GradingKind::Binary {
        return Err(Error::Config("kt-idem needs binary grading".into()));
    }
    let catalog = &course.catalog;
    let quiz_ids: BTreeSet<&str> = catalog
        .document()
        .quizzes
        .iter()
        .map(|q| q.id.as_str())
        .collect();
    let hw_ids: BTreeSet<&str> = catalog.homeworks().iter().map(String::as_str).collect();
    let items: Vec<String> = quiz_ids
        .iter()
        .chain(&hw_ids)
        .map(|s| s.to_string())
        .collect();

    let sequences: Vec<ResponseSequence> = train_rows
        .iter()
        .map(|r| {
            let mut seq = quiz_responses(course, &r.student, &r.homework, r.attempt);
            seq.push(Response {
                item: r.homework.clone(),
                correct: r.grade >= 0.5,
            });
            seq
        })
        .collect();
    let mut model = KtIdemModel::fit(&sequences, &items, &spec.kt)?.model;

    let (quiz_g, quiz_s) = mean_emission(&model, &quiz_ids);
    let (hw_g, hw_s) = mean_emission(&model, &hw_ids);
    for q in &quiz_ids {
        if !model.has_item(q) {
            model.set_item(*q, quiz_g, quiz_s);
        }
    }
    for h in &hw_ids {
        if !model.has_item(h) {
            model.set_item(*h, hw_g, hw_s);
        }
    }

    test_rows
        .iter()
        .map(|r| {
            let mut mastery = model.initial_mastery();
            for resp in quiz_responses(course, &r.student, &r.homework, r.attempt) {
                mastery = model.update(mastery, &resp.item, resp.correct)?;
            }
            model.predict(mastery, &r.homework)
        })
        .collect()
}

fn protocol_ordinals(spec: &ExperimentSpec, n: usize) -> Result<BTreeSet<usize>> {
    Ok(spec
        .protocol
        .train_ordinals(spec.target, n)?
        .into_iter()
        .collect())
}

fn finish(
    course: &PreparedCourse,
    spec: &ExperimentSpec,
    preds: &[f64],
    truth: &[f64],
    train_rows: usize,
    cold_start: usize,
    n_features: usize,
) -> Result<MetricsReport> {
    let clamped: Vec<f64> = preds.iter().map(|p| p.clamp(0.0, 1.0)).collect();
    let (accuracy, f1) = if course.catalog.grading() == GradingKind::Binary {
        let p: Vec<bool> = clamped.iter().map(|v| *v >= 0.5).collect();
        let t: Vec<bool> = truth.iter().map(|v| *v >= 0.5).collect();
        let (a, f) = accuracy_f1(&p, &t)?;
        (Some(a), Some(f))
    } else {
        (None, None)
    };
    Ok(MetricsReport {
        protocol: spec.protocol,
        target: spec.target,
        cohort: spec.cohort,
        model: spec.model_label(),
        rmse: rmse(&clamped, truth)?,
        accuracy,
        f1,
        rows: truth.len(),
        train_rows,
        cold_start,
        n_features,
    })
}

/// Featurize, split, fit on the training rows, predict the test rows and
/// score them.
pub fn run_experiment(course: &PreparedCourse, spec: &ExperimentSpec) -> Result<MetricsReport> {
    let n = course.catalog.num_homeworks();
    let kept = protocol_ordinals(spec, n)?;
    match spec.model {
        ModelKind::Plmr => {
            let run = fit_plmr(course, spec)?;
            let matrix = course.matrix_for(&spec.features)?;
            let (train_rows, _) = split(course, &matrix, spec)?;
            let baseline = meanscore_baseline(course, &train_rows);
            let mut cold = 0;
            let mut preds = Vec::with_capacity(run.test.len());
            for r in &run.test {
                if run.model.knows(&r.student) {
                    preds.push(run.model.predict_grade(&r.student, &r.features)?);
                } else {
                    cold += 1;
                    preds.push(baseline.predict_with(&r.student, |o| kept.contains(&o)));
                }
            }
            if cold > 0 {
                log::info!("{cold} cold-start test students fell back to meanscore");
            }
            let truth: Vec<f64> = run.test.iter().map(|r| r.grade).collect();
            finish(
                course,
                spec,
                &preds,
                &truth,
                run.train_rows,
                cold,
                run.columns.len(),
            )
        }
        ModelKind::Meanscore => {
            let matrix = course.matrix_for(&spec.features)?;
            let (train_rows, test_rows) = split(course, &matrix, spec)?;
            let baseline = meanscore_baseline(course, &train_rows);
            let preds: Vec<f64> = test_rows
                .iter()
                .map(|r| baseline.predict_with(&r.student, |o| kept.contains(&o)))
                .collect();
            let truth: Vec<f64> = test_rows.iter().map(|r| r.grade).collect();
            finish(course, spec, &preds, &truth, train_rows.len(), 0, 0)
        }
        ModelKind::Ktidem => {
            let (train_rows, test_rows) = split(course, &course.matrix, spec)?;
            let preds = ktidem_predictions(course, spec, &train_rows, &test_rows)?;
            let truth: Vec<f64> = test_rows.iter().map(|r| r.grade).collect();
            finish(course, spec, &preds, &truth, train_rows.len(), 0, 0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub reference: MetricsReport,
    /// One report per left-out group.
    pub removed: Vec<(FeatureGroup, MetricsReport)>,
}

/// The reference run plus one run per left-out group, all with the same
/// seeds, executed in parallel.
pub fn ablation_study(
    course: &PreparedCourse,
    spec: &ExperimentSpec,
    groups: &[FeatureGroup],
) -> Result<AblationReport> {
    for g in groups {
        if !spec.features.groups.contains(g) {
            return Err(Error::Config(format!(
                "group {g} is not in the feature configuration"
            )));
        }
    }
    let variants: Vec<Option<FeatureGroup>> = std::iter::once(None)
        .chain(groups.iter().copied().map(Some))
        .collect();
    let mut reports = variants
        .par_iter()
        .map(|g| {
            let mut s = spec.clone();
            if let Some(g) = g {
                s.features = s.features.without(*g);
            }
            run_experiment(course, &s)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    let reference = reports.next().expect("reference run");
    Ok(AblationReport {
        reference,
        removed: groups.iter().copied().zip(reports).collect(),
    })
}

/// Runs independent experiments on at most `jobs` threads. Output order
/// follows `specs`.
pub fn run_sweep(
    course: &PreparedCourse,
    specs: &[ExperimentSpec],
    jobs: usize,
) -> Result<Vec<MetricsReport>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| {
        specs
            .par_iter()
            .map(|s| run_experiment(course, s))
            .collect()
    })
}
