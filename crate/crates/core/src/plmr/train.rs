use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{frobenius, index_of, sigmoid, LossKind, PlmrModel};
use crate::error::{Error, Result};
use crate::eventlog::StudentId;
use crate::features::StandardizationStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    /// `gamma * (||P||_F + ||W||_F)` with unsquared norms.
    #[default]
    Frobenius,
    /// `gamma * (sum |p| + sum |w|)`.
    L1,
}

/// Step-size policy for the block updates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Exact steps for B, curvature-bound steps for P, backtracking for W.
    #[default]
    Adaptive,
    /// The same fixed learning rate on every block.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub l: usize,
    pub gamma: f64,
    pub regularizer: Regularizer,
    pub loss: LossKind,
    pub step: StepRule,
    pub max_epochs: usize,
    /// Relative objective decrease below which training stops.
    pub tolerance: f64,
    pub seed: u64,
    pub init_scale: f64,
    /// Keep every membership at 1 and never update P.
    pub freeze_memberships: bool,
    /// Project memberships onto `p >= 0` after each update.
    pub nonneg_memberships: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            l: 5,
            gamma: 1e-4,
            regularizer: Regularizer::Frobenius,
            loss: LossKind::Squared,
            step: StepRule::Adaptive,
            max_epochs: 500,
            tolerance: 1e-6,
            seed: 0,
            init_scale: 0.01,
            freeze_memberships: false,
            nonneg_memberships: false,
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail these checks
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.l == 0 {
            return bad("l must be positive");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be finite and >= 0");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if !(self.tolerance >= 0.0) {
            return bad("tolerance must be >= 0");
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be positive");
        }
        if let StepRule::Fixed(lr) = self.step {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad("learning rate must be positive");
            }
        }
        Ok(())
    }

    fn penalty(&self, values: &[f64]) -> f64 {
        match self.regularizer {
            Regularizer::Frobenius => frobenius(values),
            Regularizer::L1 => values.iter().map(|v| v.abs()).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataRow {
    pub student: StudentId,
    pub target: String,
    pub features: Vec<f64>,
    pub grade: f64,
}

/// Training rows with uniform feature width.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: Vec<DataRow>,
    n_features: usize,
    feature_names: Vec<String>,
    standardization: Option<StandardizationStats>,
}

impl Dataset {
    pub fn new(rows: Vec<DataRow>, n_features: usize) -> Result<Self> {
        for r in &rows {
            if r.features.len() != n_features {
                return Err(Error::Dimension {
                    expected: n_features,
                    got: r.features.len(),
                });
            }
            if !r.grade.is_finite() || r.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!(
                    "non-finite value in row of {} / {}",
                    r.student, r.target
                )));
            }
        }
        Ok(Dataset {
            rows,
            n_features,
            feature_names: (0..n_features).map(|k| format!("f{k}")).collect(),
            standardization: None,
        })
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

    /// Statistics already applied to the features; stored on trained models.
    pub fn with_standardization(mut self, stats: Option<StandardizationStats>) -> Self {
        self.standardization = stats;
        self
    }

    pub fn rows(&self) -> &[DataRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Distinct students in id order.
    pub fn students(&self) -> Vec<StudentId> {
        let mut out: Vec<StudentId> = self.rows.iter().map(|r| r.student.clone()).collect();
        out.sort();
        out.dedup();
        out
    }
}

fn row_loss(loss: LossKind, score: f64, y: f64) -> f64 {
    match loss {
        LossKind::Squared => (score - y) * (score - y),
        LossKind::Logistic => {
            let softplus = score.max(0.0) + (-score.abs()).exp().ln_1p();
            softplus - y * score
        }
    }
}

/// Derivative of the per-row loss with respect to the score.
fn row_grad(loss: LossKind, score: f64, y: f64) -> f64 {
    match loss {
        LossKind::Squared => 2.0 * (score - y),
        LossKind::Logistic => sigmoid(score) - y,
    }
}

/// Upper bound on the second derivative of the per-row loss.
fn curvature(loss: LossKind) -> f64 {
    match loss {
        LossKind::Squared => 2.0,
        LossKind::Logistic => 0.25,
    }
}

/// Mean loss plus `gamma * (||P|| + ||W||)` for `model` on `data`.
pub fn objective(model: &PlmrModel, data: &Dataset, config: &TrainConfig) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Dataset("objective needs at least one row".into()));
    }
    let mut total = 0.0;
    for r in data.rows() {
        let score = model.predict(&r.student, &r.features)?;
        total += row_loss(model.loss, score, r.grade);
    }
    let reg = config.gamma * (config.penalty(&model.memberships) + config.penalty(&model.weights));
    Ok(total / data.len() as f64 + reg)
}

/// Proximal map of `t * penalty` restricted to the feasible set.
fn prox(values: &mut [f64], t: f64, regularizer: Regularizer, nonneg: bool) {
    if nonneg {
        for v in values.iter_mut() {
            *v = v.max(0.0);
        }
    }
    if t <= 0.0 {
        return;
    }
    match regularizer {
        Regularizer::Frobenius => {
            let norm = frobenius(values);
            let scale = if norm > t { 1.0 - t / norm } else { 0.0 };
            for v in values.iter_mut() {
                *v *= scale;
            }
        }
        Regularizer::L1 => {
            for v in values.iter_mut() {
                *v = v.signum() * (v.abs() - t).max(0.0);
            }
        }
    }
}

struct Problem<'a> {
    loss: LossKind,
    l: usize,
    n_f: usize,
    /// Student index per row.
    owner: Vec<usize>,
    features: Vec<&'a [f64]>,
    grades: Vec<f64>,
    /// Rows per student.
    counts: Vec<usize>,
}

struct Params {
    bias: Vec<f64>,
    p: Vec<f64>,
    w: Vec<f64>,
}

impl Problem<'_> {
    fn n(&self) -> f64 {
        self.grades.len() as f64
    }

    /// `W f` for every row.
    fn projections(&self, w: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.grades.len() * self.l];
        for (r, f) in self.features.iter().enumerate() {
            for d in 0..self.l {
                let row = &w[d * self.n_f..(d + 1) * self.n_f];
                z[r * self.l + d] = row.iter().zip(f.iter()).map(|(a, b)| a * b).sum();
            }
        }
        z
    }

    fn scores(&self, params: &Params, z: &[f64]) -> Vec<f64> {
        (0..self.grades.len())
            .map(|r| {
                let i = self.owner[r];
                let p = &params.p[i * self.l..(i + 1) * self.l];
                let zr = &z[r * self.l..(r + 1) * self.l];
                params.bias[i] + p.iter().zip(zr).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    fn mean_loss(&self, scores: &[f64]) -> f64 {
        let total: f64 = scores
            .iter()
            .zip(&self.grades)
            .map(|(s, y)| row_loss(self.loss, *s, *y))
            .sum();
        total / self.n()
    }

    /// Per-row derivative of the mean loss with respect to the score.
    fn score_grads(&self, scores: &[f64]) -> Vec<f64> {
        let n = self.n();
        scores
            .iter()
            .zip(&self.grades)
            .map(|(s, y)| row_grad(self.loss, *s, *y) / n)
            .collect()
    }

    fn objective(&self, params: &Params, config: &TrainConfig) -> f64 {
        let z = self.projections(&params.w);
        let loss = self.mean_loss(&self.scores(params, &z));
        loss + config.gamma * (config.penalty(&params.p) + config.penalty(&params.w))
    }

    fn step_bias(&self, params: &mut Params, z: &[f64], step: StepRule) {
        let g = self.score_grads(&self.scores(params, z));
        let mut grad = vec![0.0; params.bias.len()];
        for (r, gr) in g.iter().enumerate() {
            grad[self.owner[r]] += gr;
        }
        let kappa = curvature(self.loss);
        for (i, b) in params.bias.iter_mut().enumerate() {
            let eta = match step {
                StepRule::Adaptive => self.n() / (kappa * self.counts[i] as f64),
                StepRule::Fixed(lr) => lr,
            };
            *b -= eta * grad[i];
        }
    }

    fn step_memberships(&self, params: &mut Params, z: &[f64], config: &TrainConfig) {
        let l = self.l;
        let g = self.score_grads(&self.scores(params, z));
        let students = params.bias.len();
        let mut grad = vec![0.0; students * l];
        let mut lipschitz = vec![0.0; students];
        let kappa = curvature(self.loss) / self.n();
        for (r, gr) in g.iter().enumerate() {
            let i = self.owner[r];
            let zr = &z[r * l..(r + 1) * l];
            for d in 0..l {
                grad[i * l + d] += gr * zr[d];
            }
            lipschitz[i] += kappa * zr.iter().map(|v| v * v).sum::<f64>();
        }

        let separable = config.gamma == 0.0 || config.regularizer == Regularizer::L1;
        match config.step {
            StepRule::Fixed(lr) => {
                for (p, gp) in params.p.iter_mut().zip(&grad) {
                    *p -= lr * gp;
                }
                prox(
                    &mut params.p,
                    lr * config.gamma,
                    config.regularizer,
                    config.nonneg_memberships,
                );
            }
            StepRule::Adaptive if separable => {
                for i in 0..students {
                    if lipschitz[i] <= 0.0 {
                        continue;
                    }
                    let eta = 1.0 / lipschitz[i];
                    let block = &mut params.p[i * l..(i + 1) * l];
                    for (p, gp) in block.iter_mut().zip(&grad[i * l..(i + 1) * l]) {
                        *p -= eta * gp;
                    }
                    prox(
                        block,
                        eta * config.gamma,
                        config.regularizer,
                        config.nonneg_memberships,
                    );
                }
            }
            StepRule::Adaptive => {
                let max_l = lipschitz.iter().cloned().fold(0.0, f64::max);
                if max_l <= 0.0 {
                    // W f vanishes on every row: only the penalty acts on P.
                    prox(
                        &mut params.p,
                        f64::INFINITY,
                        config.regularizer,
                        config.nonneg_memberships,
                    );
                    return;
                }
                let eta = 1.0 / max_l;
                for (p, gp) in params.p.iter_mut().zip(&grad) {
                    *p -= eta * gp;
                }
                prox(
                    &mut params.p,
                    eta * config.gamma,
                    config.regularizer,
                    config.nonneg_memberships,
                );
            }
        }
    }

    fn weight_grad(&self, params: &Params, g: &[f64]) -> Vec<f64> {
        let (l, n_f) = (self.l, self.n_f);
        let mut grad = vec![0.0; l * n_f];
        for (r, gr) in g.iter().enumerate() {
            let i = self.owner[r];
            let f = self.features[r];
            for d in 0..l {
                let c = gr * params.p[i * l + d];
                if c == 0.0 {
                    continue;
                }
                let row = &mut grad[d * n_f..(d + 1) * n_f];
                for (acc, fk) in row.iter_mut().zip(f.iter()) {
                    *acc += c * fk;
                }
            }
        }
        grad
    }

    /// Returns the step to start the next backtracking search from.
    fn step_weights(&self, params: &mut Params, z: &[f64], config: &TrainConfig, eta0: f64) -> f64 {
        let scores = self.scores(params, z);
        let loss0 = self.mean_loss(&scores);
        let g = self.score_grads(&scores);
        let grad = self.weight_grad(params, &g);
        let t_of = |eta: f64| eta * config.gamma;

        if let StepRule::Fixed(lr) = config.step {
            for (w, gw) in params.w.iter_mut().zip(&grad) {
                *w -= lr * gw;
            }
            prox(&mut params.w, t_of(lr), config.regularizer, false);
            return lr;
        }

        let mut eta = eta0;
        let old = params.w.clone();
        for _ in 0..60 {
            let mut cand: Vec<f64> = old.iter().zip(&grad).map(|(w, gw)| w - eta * gw).collect();
            prox(&mut cand, t_of(eta), config.regularizer, false);
            let mut lin = 0.0;
            let mut quad = 0.0;
            for ((c, o), gw) in cand.iter().zip(&old).zip(&grad) {
                lin += gw * (c - o);
                quad += (c - o) * (c - o);
            }
            let trial = Params {
                bias: params.bias.clone(),
                p: params.p.clone(),
                w: cand,
            };
            let loss = self.mean_loss(&self.scores(&trial, &self.projections(&trial.w)));
            if quad == 0.0 || loss <= loss0 + lin + quad / (2.0 * eta) + 1e-15 * loss0.abs() {
                params.w = trial.w;
                return eta * 2.0;
            }
            eta *= 0.5;
        }
        eta
    }

    /// Safe initial W step from a global curvature bound.
    fn weight_step_bound(&self, params: &Params) -> f64 {
        let kappa = curvature(self.loss) / self.n();
        let mut bound = 0.0;
        for (r, f) in self.features.iter().enumerate() {
            let i = self.owner[r];
            let p = &params.p[i * self.l..(i + 1) * self.l];
            let pn: f64 = p.iter().map(|v| v * v).sum();
            let fn2: f64 = f.iter().map(|v| v * v).sum();
            bound += kappa * pn * fn2;
        }
        if bound > 0.0 {
            1.0 / bound
        } else {
            1.0
        }
    }
}

/// Fits B, P and W by block descent (B, then P, then W each epoch) on the
/// penalized mean loss. The objective after initialization and after every
/// epoch is kept in the model's training log.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<PlmrModel> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if config.loss == LossKind::Logistic
        && data.rows().iter().any(|r| r.grade != 0.0 && r.grade != 1.0)
    {
        return Err(Error::Dataset("logistic loss needs binary grades".into()));
    }
    let students = data.students();
    let index = index_of(&students)?;
    let l = config.l;
    let n_f = data.n_features();

    let mut counts = vec![0usize; students.len()];
    let owner: Vec<usize> = data
        .rows()
        .iter()
        .map(|r| {
            let i = index[&r.student];
            counts[i] += 1;
            i
        })
        .collect();
    let problem = Problem {
        loss: config.loss,
        l,
        n_f,
        owner,
        features: data.rows().iter().map(|r| r.features.as_slice()).collect(),
        grades: data.rows().iter().map(|r| r.grade).collect(),
        counts,
    };

    let mean_grade = problem.grades.iter().sum::<f64>() / problem.n();
    let start_bias = match config.loss {
        LossKind::Squared => mean_grade,
        LossKind::Logistic => {
            let m = mean_grade.clamp(1e-6, 1.0 - 1e-6);
            (m / (1.0 - m)).ln()
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let s = config.init_scale;
    let w: Vec<f64> = (0..l * n_f).map(|_| rng.random_range(-s..s)).collect();
    let p: Vec<f64> = if config.freeze_memberships {
        vec![1.0; students.len() * l]
    } else {
        (0..students.len() * l)
            .map(|_| rng.random_range(-s..s))
            .collect()
    };
    let mut params = Params {
        bias: vec![start_bias; students.len()],
        p,
        w,
    };
    if config.nonneg_memberships && !config.freeze_memberships {
        for v in params.p.iter_mut() {
            *v = v.abs();
        }
    }

    let mut log = vec![problem.objective(&params, config)];
    let mut eta_w = problem.weight_step_bound(&params);
    for epoch in 1..=config.max_epochs {
        let z = problem.projections(&params.w);
        problem.step_bias(&mut params, &z, config.step);
        if !config.freeze_memberships {
            problem.step_memberships(&mut params, &z, config);
        }
        if config.step == StepRule::Adaptive {
            eta_w = eta_w.max(problem.weight_step_bound(&params));
        }
        eta_w = problem.step_weights(&mut params, &z, config, eta_w);

        let obj = problem.objective(&params, config);
        if !obj.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let prev = *log.last().expect("log starts with the initial objective");
        log.push(obj);
        let decrease = (prev - obj) / prev.abs().max(f64::MIN_POSITIVE);
        if decrease.abs() < config.tolerance {
            log::debug!("converged after {epoch} epochs, objective {obj}");
            break;
        }
    }

    let model = PlmrModel {
        loss: config.loss,
        l,
        n_features: n_f,
        feature_names: data.feature_names().to_vec(),
        standardization: data.standardization.clone(),
        index,
        students,
        bias: params.bias,
        memberships: params.p,
        weights: params.w,
        train_log: log,
    };
    Ok(model)
}

/// Validation error per candidate `gamma` and the best one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSearch {
    pub best_gamma: f64,
    /// `gamma -> validation RMSE` on grade-scale predictions.
    pub scores: Vec<(f64, f64)>,
}

/// Trains once per `gamma` and scores each model by RMSE on the validation
/// rows whose student was seen in training. Ties keep the smaller `gamma`.
pub fn gamma_grid_search(
    train_set: &Dataset,
    validation: &Dataset,
    gammas: &[f64],
    config: &TrainConfig,
) -> Result<GammaSearch> {
    if gammas.is_empty() {
        return Err(Error::Config("empty gamma grid".into()));
    }
    let scores = gammas
        .par_iter()
        .map(|&gamma| {
            let cfg = TrainConfig {
                gamma,
                ..config.clone()
            };
            let model = train(train_set, &cfg)?;
            let mut sq = 0.0;
            let mut n = 0usize;
            for r in validation.rows().iter().filter(|r| model.knows(&r.student)) {
                let pred = model.predict_grade(&r.student, &r.features)?;
                sq += (pred - r.grade) * (pred - r.grade);
                n += 1;
            }
            if n == 0 {
                return Err(Error::EmptySplit("validation"));
            }
            Ok((gamma, (sq / n as f64).sqrt()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = scores[0];
    for &(g, e) in &scores[1..] {
        if e < best.1 || (e == best.1 && g < best.0) {
            best = (g, e);
        }
    }
    Ok(GammaSearch {
        best_gamma: best.0,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn sid(i: usize) -> StudentId {
        StudentId::new(format!("s{i:03}")).unwrap()
    }

    fn random_rows(
        seed: u64,
        students: usize,
        per: usize,
        n_f: usize,
        grade: impl Fn(&[f64], usize, &mut ChaCha8Rng) -> f64,
    ) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for s in 0..students {
            for a in 0..per {
                let f: Vec<f64> = (0..n_f).map(|_| rng.random_range(-1.0..1.0)).collect();
                let g = grade(&f, s, &mut rng);
                rows.push(DataRow {
                    student: sid(s),
                    target: format!("hw{a}"),
                    features: f,
                    grade: g,
                });
            }
        }
        Dataset::new(rows, n_f).unwrap()
    }

    #[test]
    fn constant_grades_fit() {
        let data = random_rows(1, 8, 4, 3, |_, _, _| 0.7);
        let cfg = TrainConfig {
            gamma: 0.0,
            ..TrainConfig::default()
        };
        let m = train(&data, &cfg).unwrap();
        for r in data.rows() {
            assert!((m.predict(&r.student, &r.features).unwrap() - 0.7).abs() < 1e-3);
        }
    }

    /// Least squares with one intercept per student, by normal equations.
    fn ols_predictions(data: &Dataset) -> Vec<f64> {
        let students = data.students();
        let n_f = data.n_features();
        let cols = students.len() + n_f;
        let x = DMatrix::from_fn(data.len(), cols, |r, c| {
            let row = &data.rows()[r];
            if c < students.len() {
                f64::from(u8::from(students[c] == row.student))
            } else {
                row.features[c - students.len()]
            }
        });
        let y = DVector::from_iterator(data.len(), data.rows().iter().map(|r| r.grade));
        let xtx = x.transpose() * &x;
        let beta = xtx
            .cholesky()
            .expect("full rank")
            .solve(&(x.transpose() * &y));
        (x * beta).iter().copied().collect()
    }

    #[test]
    fn frozen_single_model_matches_ols() {
        let data = random_rows(2, 10, 5, 4, |f, s, rng| {
            0.3 + 0.05 * s as f64 + 0.2 * f[0] - 0.1 * f[2] + rng.random_range(-0.05..0.05)
        });
        let cfg = TrainConfig {
            l: 1,
            gamma: 0.0,
            freeze_memberships: true,
            max_epochs: 20_000,
            tolerance: 0.0,
            ..TrainConfig::default()
        };
        let m = train(&data, &cfg).unwrap();
        let oracle = ols_predictions(&data);
        let mse: f64 = data
            .rows()
            .iter()
            .zip(&oracle)
            .map(|(r, o)| (m.predict(&r.student, &r.features).unwrap() - o).powi(2))
            .sum::<f64>()
            / data.len() as f64;
        assert!(mse.sqrt() < 1e-4, "rmse vs OLS {}", mse.sqrt());
    }

    #[test]
    fn training_log_is_non_increasing() {
        for loss in [LossKind::Squared, LossKind::Logistic] {
            let data = random_rows(3, 12, 5, 4, |f, _, rng| {
                let g = 0.5 + 0.3 * f[1] + rng.random_range(-0.1..0.1);
                if loss == LossKind::Logistic {
                    f64::from(u8::from(g >= 0.5))
                } else {
                    g
                }
            });
            for regularizer in [Regularizer::Frobenius, Regularizer::L1] {
                let cfg = TrainConfig {
                    l: 3,
                    gamma: 1e-3,
                    loss,
                    regularizer,
                    max_epochs: 200,
                    ..TrainConfig::default()
                };
                let m = train(&data, &cfg).unwrap();
                let log = m.train_log();
                assert!(log.len() >= 2);
                for pair in log.windows(2) {
                    assert!(
                        pair[1] <= pair[0] + 1e-12,
                        "{loss:?} {regularizer:?}: {pair:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn larger_gamma_shrinks_parameters() {
        let data = random_rows(4, 15, 5, 4, |f, s, rng| {
            0.5 + (s % 3) as f64 * 0.1 * f[0] + 0.2 * f[3] + rng.random_range(-0.05..0.05)
        });
        let norms: Vec<f64> = [0.0, 0.1, 1.0]
            .iter()
            .map(|&gamma| {
                let cfg = TrainConfig {
                    l: 2,
                    gamma,
                    seed: 9,
                    ..TrainConfig::default()
                };
                let m = train(&data, &cfg).unwrap();
                m.membership_norm() + m.weight_norm()
            })
            .collect();
        assert!(norms[1] <= norms[0] && norms[2] <= norms[1], "{norms:?}");
    }

    #[test]
    fn identical_inputs_give_identical_models() {
        let data = random_rows(5, 6, 4, 3, |f, _, _| 0.4 + 0.1 * f[0]);
        let cfg = TrainConfig {
            seed: 42,
            ..TrainConfig::default()
        };
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn huge_fixed_step_diverges() {
        let data = random_rows(6, 5, 4, 3, |f, _, _| 0.4 + 0.5 * f[0]);
        let cfg = TrainConfig {
            step: StepRule::Fixed(1e4),
            ..TrainConfig::default()
        };
        assert!(matches!(train(&data, &cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn objective_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = random_rows(7, 4, 3, 3, |_, _, rng| rng.random_range(0.0..1.0));
        let students = data.students();
        let bias: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
        let p: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let w: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let m = PlmrModel::from_parts(
            LossKind::Squared,
            students.clone(),
            bias.clone(),
            p.clone(),
            w.clone(),
        )
        .unwrap();
        let cfg = TrainConfig {
            gamma: 0.3,
            ..TrainConfig::default()
        };

        let mut loss = 0.0;
        for r in data.rows() {
            let i = students.iter().position(|s| *s == r.student).unwrap();
            let mut pred = bias[i];
            for d in 0..2 {
                #[allow(clippy::needless_range_loop)]
                for k in 0..3 {
                    pred += p[i][d] * w[d][k] * r.features[k];
                }
            }
            loss += (pred - r.grade).powi(2);
        }
        let fro = |m: &[Vec<f64>]| m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        let expected = loss / data.len() as f64 + 0.3 * (fro(&p) + fro(&w));
        assert!((objective(&m, &data, &cfg).unwrap() - expected).abs() < 1e-12);

        let zero = PlmrModel::from_parts(
            LossKind::Squared,
            students,
            vec![0.0; 4],
            vec![vec![0.0; 2]; 4],
            vec![vec![0.0; 3]; 2],
        )
        .unwrap();
        let cfg1 = TrainConfig {
            gamma: 1.0,
            ..TrainConfig::default()
        };
        let zero_loss =
            data.rows().iter().map(|r| r.grade * r.grade).sum::<f64>() / data.len() as f64;
        assert!((objective(&zero, &data, &cfg1).unwrap() - zero_loss).abs() < 1e-12);
    }

    #[test]
    fn logistic_rejects_continuous_grades() {
        let data = random_rows(9, 3, 2, 2, |_, _, _| 0.3);
        let cfg = TrainConfig {
            loss: LossKind::Logistic,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&data, &cfg), Err(Error::Dataset(_))));
    }

    #[test]
    fn nonneg_memberships_stay_nonneg() {
        let data = random_rows(10, 10, 5, 3, |f, _, _| 0.5 - 0.3 * f[0]);
        let cfg = TrainConfig {
            l: 2,
            nonneg_memberships: true,
            ..TrainConfig::default()
        };
        let m = train(&data, &cfg).unwrap();
        assert!(m.memberships.iter().all(|p| *p >= 0.0));
    }

    #[test]
    fn grid_search_reports_every_gamma() {
        let data = random_rows(11, 10, 5, 3, |f, _, rng| {
            0.5 + 0.2 * f[0] + rng.random_range(-0.02..0.02)
        });
        let (tr, va): (Vec<_>, Vec<_>) =
            data.rows().iter().cloned().partition(|r| r.target != "hw4");
        let tr = Dataset::new(tr, 3).unwrap();
        let va = Dataset::new(va, 3).unwrap();
        let res = gamma_grid_search(
            &tr,
            &va,
            &[0.0, 1e-3, 10.0],
            &TrainConfig {
                l: 1,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert_eq!(res.scores.len(), 3);
        assert!(res.best_gamma < 10.0);
    }
}
