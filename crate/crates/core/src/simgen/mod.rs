//! Deterministic synthetic courses with a planted grade model.
//!
//! Every student acts on a fixed daily grid: homework `u` owns a seven-day
//! period, study sessions start at 09:00 or 15:00 UTC on days 0-5 of that
//! period and the homework is attempted at 19:00 on day 6. Because the
//! schedule is known, the generator can report the exact feature values it
//! induced (the truth table) without going through the extractor.

mod plan;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eventlog::{
    ingest_reader, write_log, AssessmentKind, CatalogDocument, CourseCatalog, EventLog,
    EventRecord, GradingKind, QuizEntry, StudentId, VideoEntry,
};
use crate::features::{
    feature_group, feature_index, FeatureColumn, FeatureGroup, FeatureMatrix, FeatureRow,
    StandardizationStats, FEATURES,
};
use crate::plmr::{LossKind, PlmrModel};

pub use plan::StudentProfile;
use plan::{plan_student, StudentPlan};

/// 2014-05-14T00:00:00Z.
pub const COURSE_START: i64 = 1_400_025_600;
pub(crate) const DAY: i64 = 86_400;
pub(crate) const PERIOD_DAYS: i64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    /// Attempts and submits every homework.
    Completer,
    /// Attempts between one and `n - 1` homeworks; skipped units see no activity.
    Partial,
    /// Studies every unit but never works on a homework.
    Auditor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeMix {
    pub completer: f64,
    pub partial: f64,
    pub auditor: f64,
}

impl Default for ArchetypeMix {
    fn default() -> Self {
        ArchetypeMix {
            completer: 0.7,
            partial: 0.2,
            auditor: 0.1,
        }
    }
}

impl ArchetypeMix {
    pub fn completers_only() -> Self {
        ArchetypeMix {
            completer: 1.0,
            partial: 0.0,
            auditor: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MembershipKind {
    /// Every entry drawn from `U(0.2, 1)`.
    #[default]
    Dense,
    /// One randomly chosen model per student.
    OneHot,
}

/// Ground-truth grade model the generator plants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub l: usize,
    pub memberships: MembershipKind,
    /// Columns with nonzero weights. Empty means every column outside the
    /// Meanscore group and the missing-value flags.
    pub active_features: Vec<String>,
    /// Standard deviation, over all observations, of each model's linear term.
    pub signal: f64,
    /// Student biases are drawn from `U(bias_low, bias_high)`.
    pub bias_low: f64,
    pub bias_high: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            l: 3,
            memberships: MembershipKind::Dense,
            active_features: Vec::new(),
            signal: 0.15,
            bias_low: 0.35,
            bias_high: 0.65,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub students: usize,
    pub homeworks: usize,
    pub quizzes_per_homework: usize,
    pub videos_per_quiz: usize,
    pub video_length_sec: f64,
    pub mix: ArchetypeMix,
    pub grading: GradingKind,
    /// Standard deviation of the Gaussian noise added to planted grades.
    pub noise: f64,
    pub planted: PlantedConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            students: 200,
            homeworks: 6,
            quizzes_per_homework: 3,
            videos_per_quiz: 2,
            video_length_sec: 600.0,
            mix: ArchetypeMix::default(),
            grading: GradingKind::Continuous,
            noise: 0.05,
            planted: PlantedConfig::default(),
        }
    }
}

fn is_flag(name: &str) -> bool {
    name.ends_with("Missing")
}

impl SimConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail these checks
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.students == 0 {
            return bad("students must be positive".into());
        }
        if self.homeworks < 2 {
            return bad("a course needs at least two homeworks".into());
        }
        if self.quizzes_per_homework == 0 {
            return bad("quizzes_per_homework must be positive".into());
        }
        if !(self.video_length_sec >= 60.0 && self.video_length_sec.is_finite()) {
            return bad("video_length_sec must be at least 60".into());
        }
        let m = self.mix;
        if [m.completer, m.partial, m.auditor].iter().any(|f| *f < 0.0)
            || (m.completer + m.partial + m.auditor - 1.0).abs() > 1e-9
        {
            return bad("archetype fractions must be non-negative and sum to 1".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be >= 0".into());
        }
        let p = &self.planted;
        if p.l == 0 {
            return bad("planted l must be positive".into());
        }
        if plan::worst_case_unit_secs(self) > plan::MAX_UNIT_SECS {
            return bad("a unit's study blocks would not fit a session slot".into());
        }
        if !(p.bias_low <= p.bias_high) || !(p.signal >= 0.0) {
            return bad("invalid planted bias range or signal".into());
        }
        for name in &p.active_features {
            match feature_group(name) {
                None => return bad(format!("unknown feature {name:?}")),
                Some(FeatureGroup::Meanscore) => {
                    return bad(format!("{name} cannot carry planted weight"))
                }
                Some(_) if is_flag(name) => {
                    return bad(format!("{name} cannot carry planted weight"))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    fn active_columns(&self) -> Vec<usize> {
        if self.planted.active_features.is_empty() {
            FEATURES
                .iter()
                .enumerate()
                .filter(|(_, (n, g))| *g != FeatureGroup::Meanscore && !is_flag(n))
                .map(|(k, _)| k)
                .collect()
        } else {
            self.planted
                .active_features
                .iter()
                .filter_map(|n| feature_index(n))
                .collect()
        }
    }
}

pub fn homework_id(ordinal: usize) -> String {
    format!("hw{ordinal}")
}

pub fn quiz_id(ordinal: usize, j: usize) -> String {
    format!("q{ordinal}_{j}")
}

pub fn video_id(ordinal: usize, j: usize, k: usize) -> String {
    format!("v{ordinal}_{j}_{k}")
}

/// Catalog with `homeworks` units, each with its quizzes and videos.
pub fn generate_course(config: &SimConfig) -> Result<CourseCatalog> {
    config.validate()?;
    let mut doc = CatalogDocument {
        homeworks: Vec::new(),
        quizzes: Vec::new(),
        videos: Vec::new(),
        grading: config.grading,
        kind: AssessmentKind::Homework,
    };
    for u in 1..=config.homeworks {
        doc.homeworks.push(homework_id(u));
        for j in 1..=config.quizzes_per_homework {
            doc.quizzes.push(QuizEntry {
                id: quiz_id(u, j),
                homework: homework_id(u),
            });
            for k in 1..=config.videos_per_quiz {
                doc.videos.push(VideoEntry {
                    id: video_id(u, j, k),
                    quiz: quiz_id(u, j),
                    length_sec: config.video_length_sec,
                });
            }
        }
    }
    CourseCatalog::new(doc)
}

/// Generator-side parameters: grades are
/// `clamp(b_s + p_s' W z + noise, 0, 1)` with `z` the standardized truth
/// features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedModel {
    pub l: usize,
    pub noise: f64,
    pub grading: GradingKind,
    pub feature_names: Vec<String>,
    pub standardization: StandardizationStats,
    pub bias: BTreeMap<String, f64>,
    pub memberships: BTreeMap<String, Vec<f64>>,
    /// `l` rows over every feature column.
    pub weights: Vec<Vec<f64>>,
    pub archetypes: BTreeMap<String, Archetype>,
}

impl PlantedModel {
    /// Noise-free, unclamped planted score for raw features.
    pub fn score(&self, student: &StudentId, raw: &[f64]) -> Result<f64> {
        self.as_plmr()?.predict_raw(student, raw)
    }

    /// The planted parameters as a squared-loss model over raw features.
    pub fn as_plmr(&self) -> Result<PlmrModel> {
        let students: Vec<StudentId> = self
            .bias
            .keys()
            .map(|s| StudentId::new(s.as_str()).map_err(|e| Error::Config(e.to_string())))
            .collect::<Result<_>>()?;
        let bias = self.bias.values().copied().collect();
        let memberships = self.memberships.values().cloned().collect();
        PlmrModel::from_parts(
            LossKind::Squared,
            students,
            bias,
            memberships,
            self.weights.clone(),
        )?
        .with_feature_names(self.feature_names.clone())?
        .with_standardization(Some(self.standardization.clone()))
    }
}

/// Everything one simulation produces.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub catalog: CourseCatalog,
    /// Sorted by time, then student, then emission order.
    pub events: Vec<EventRecord>,
    /// Feature values the generator targeted, one row per submitted
    /// homework, with the planted grade.
    pub truth: FeatureMatrix,
    pub planted: PlantedModel,
    pub profiles: BTreeMap<String, StudentProfile>,
}

impl SimOutput {
    pub fn log_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_log(&mut out, &self.events).expect("writing to memory");
        out
    }

    /// Parses the generated log back through the ingestion path.
    pub fn event_log(&self) -> Result<EventLog> {
        ingest_reader(self.log_bytes().as_slice(), &self.catalog, 0.0)
    }

    /// Writes `events.jsonl`, `catalog.json`, `truth.csv` and `planted.json`
    /// into `dir` and returns their paths.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| -> Result<PathBuf> {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        };
        let mut truth = Vec::new();
        self.truth.write_csv(&mut truth)?;
        let mut planted = serde_json::to_string_pretty(&self.planted)?;
        planted.push('\n');
        let mut catalog = self.catalog.to_json();
        catalog.push('\n');
        Ok(vec![
            write("events.jsonl", &self.log_bytes())?,
            write("catalog.json", catalog.as_bytes())?,
            write("truth.csv", &truth)?,
            write("planted.json", planted.as_bytes())?,
        ])
    }
}

fn assign_archetypes(config: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<Archetype> {
    let n = config.students;
    let partial = (config.mix.partial * n as f64).round() as usize;
    let auditor = ((config.mix.auditor * n as f64).round() as usize).min(n - partial.min(n));
    let partial = partial.min(n);
    let mut out = vec![Archetype::Completer; n];
    for a in out.iter_mut().take(partial) {
        *a = Archetype::Partial;
    }
    for a in out.iter_mut().skip(partial).take(auditor) {
        *a = Archetype::Auditor;
    }
    out.shuffle(rng);
    out
}

pub fn student_id(i: usize) -> StudentId {
    StudentId::new(format!("s{i:05}")).expect("non-empty id")
}

/// Simulates every student of `catalog`, plants grades and returns the log
/// together with the truth table.
pub fn generate_logs(config: &SimConfig, catalog: &CourseCatalog) -> Result<SimOutput> {
    config.validate()?;
    if catalog.num_homeworks() != config.homeworks {
        return Err(Error::Config(
            "catalog does not match the simulation config".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let archetypes = assign_archetypes(config, &mut rng);
    let l = config.planted.l;

    let mut plans: Vec<StudentPlan> = Vec::with_capacity(config.students);
    for (i, archetype) in archetypes.iter().enumerate() {
        let bias = rng.random_range(config.planted.bias_low..=config.planted.bias_high);
        let membership: Vec<f64> = match config.planted.memberships {
            MembershipKind::Dense => (0..l).map(|_| rng.random_range(0.2..1.0)).collect(),
            MembershipKind::OneHot => {
                let d = rng.random_range(0..l);
                (0..l).map(|k| if k == d { 1.0 } else { 0.0 }).collect()
            }
        };
        plans.push(plan_student(
            config,
            student_id(i),
            *archetype,
            bias,
            membership,
            &mut rng,
        ));
    }

    // Truth features without Meanscore, which depends on planted grades.
    let width = FEATURES.len();
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for (i, plan) in plans.iter().enumerate() {
        for u in plan.attempted() {
            rows.push((i, u, plan.features(u, config.video_length_sec)));
        }
    }
    let stats = StandardizationStats::fit(rows.iter().map(|(_, _, f)| f.as_slice()), width)?;

    let active = config.active_columns();
    let standard = Normal::new(0.0, 1.0).expect("unit normal");
    let z: Vec<Vec<f64>> = rows
        .iter()
        .map(|(_, _, f)| stats.applied(f))
        .collect::<Result<_>>()?;
    let mut weights = vec![vec![0.0; width]; l];
    for row in weights.iter_mut() {
        for &k in &active {
            row[k] = standard.sample(&mut rng);
        }
        let terms: Vec<f64> = z.iter().map(|zr| dot(row, zr)).collect();
        let sd = population_std(&terms);
        let scale = if sd > 0.0 {
            config.planted.signal / sd
        } else {
            0.0
        };
        for w in row.iter_mut() {
            *w *= scale;
        }
    }

    // Grades in time order per student, so Meanscore sees earlier ones.
    let scorer = PlmrModel::from_parts(
        LossKind::Squared,
        plans.iter().map(|p| p.student.clone()).collect(),
        plans.iter().map(|p| p.bias).collect(),
        plans.iter().map(|p| p.membership.clone()).collect(),
        weights.clone(),
    )?;
    let mut grades: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for ((i, u, _), zr) in rows.iter().zip(&z) {
        let score = scorer.predict(&plans[*i].student, zr)?;
        let noise = if config.noise > 0.0 {
            config.noise * standard.sample(&mut rng)
        } else {
            0.0
        };
        let g = (score + noise).clamp(0.0, 1.0);
        let g = match config.grading {
            GradingKind::Continuous => g,
            GradingKind::Binary => f64::from(u8::from(g >= 0.5)),
        };
        grades.insert((*i, *u), g);
    }
    for (i, plan) in plans.iter_mut().enumerate() {
        for u in plan.attempted() {
            plan.set_grade(u, grades[&(i, u)]);
        }
    }

    let ms = feature_index("Meanscore").expect("Meanscore column");
    let truth_rows: Vec<FeatureRow> = rows
        .into_iter()
        .map(|(i, u, mut values)| {
            let plan = &plans[i];
            let (value, missing) = plan.meanscore(u);
            values[ms] = value;
            values[ms + 1] = f64::from(u8::from(missing));
            FeatureRow {
                student: plan.student.clone(),
                homework: homework_id(u),
                ordinal: u,
                attempt: plan.attempt_instant(u).expect("attempted unit"),
                values,
                grade: grades[&(i, u)],
            }
        })
        .collect();

    let mut indexed: Vec<(usize, EventRecord)> = Vec::new();
    for plan in &plans {
        for e in plan.events() {
            indexed.push((indexed.len(), e));
        }
    }
    indexed.sort_by(|(a, x), (b, y)| {
        (x.timestamp, &x.student, *a).cmp(&(y.timestamp, &y.student, *b))
    });
    let events: Vec<EventRecord> = indexed.into_iter().map(|(_, e)| e).collect();

    // Only the Meanscore columns change; they carry no weight.
    let stats = StandardizationStats::fit(truth_rows.iter().map(|r| r.values.as_slice()), width)?;
    let planted = PlantedModel {
        l,
        noise: config.noise,
        grading: config.grading,
        feature_names: FEATURES.iter().map(|(n, _)| n.to_string()).collect(),
        standardization: stats,
        bias: plans
            .iter()
            .map(|p| (p.student.to_string(), p.bias))
            .collect(),
        memberships: plans
            .iter()
            .map(|p| (p.student.to_string(), p.membership.clone()))
            .collect(),
        weights,
        archetypes: plans
            .iter()
            .map(|p| (p.student.to_string(), p.archetype))
            .collect(),
    };
    let truth = FeatureMatrix {
        columns: FEATURES
            .iter()
            .map(|(name, group)| FeatureColumn {
                name,
                group: *group,
            })
            .collect(),
        rows: truth_rows,
    };
    Ok(SimOutput {
        catalog: catalog.clone(),
        events,
        truth,
        planted,
        profiles: plans
            .iter()
            .map(|p| (p.student.to_string(), p.profile))
            .collect(),
    })
}

/// [`generate_course`] followed by [`generate_logs`].
pub fn simulate(config: &SimConfig) -> Result<SimOutput> {
    let catalog = generate_course(config)?;
    generate_logs(config, &catalog)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn population_std(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}
