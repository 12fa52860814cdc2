use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const P_MIN: f64 = 0.001;
const P_MAX: f64 = 0.999;
/// Guess and slip above this make "mastered" and "unmastered" swap meaning.
const EMISSION_MAX: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub item: String,
    pub correct: bool,
}

/// One student's chronological responses on a single skill.
pub type ResponseSequence = Vec<Response>;

/// Two-state knowledge tracing with one guess and slip per item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KtIdemModel {
    pub prior: f64,
    pub learn: f64,
    pub guess: BTreeMap<String, f64>,
    pub slip: BTreeMap<String, f64>,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(P_MIN, P_MAX)
}

fn clamp_emission(p: f64) -> f64 {
    p.clamp(P_MIN, EMISSION_MAX)
}

impl KtIdemModel {
    pub fn new(prior: f64, learn: f64) -> Self {
        KtIdemModel {
            prior: clamp_prob(prior),
            learn: clamp_prob(learn),
            guess: BTreeMap::new(),
            slip: BTreeMap::new(),
        }
    }

    /// Adds or replaces an item. Values are clamped to the model's bounds.
    pub fn set_item(&mut self, item: impl Into<String>, guess: f64, slip: f64) {
        let item = item.into();
        self.guess.insert(item.clone(), clamp_emission(guess));
        self.slip.insert(item, clamp_emission(slip));
    }

    pub fn has_item(&self, item: &str) -> bool {
        self.guess.contains_key(item)
    }

    pub fn items(&self) -> impl Iterator<Item = &str> {
        self.guess.keys().map(String::as_str)
    }

    fn emission(&self, item: &str) -> Result<(f64, f64)> {
        match (self.guess.get(item), self.slip.get(item)) {
            (Some(g), Some(s)) => Ok((*g, *s)),
            _ => Err(Error::UnknownItem(item.to_string())),
        }
    }

    /// `P(correct) = P(L) (1 - slip) + (1 - P(L)) guess`.
    pub fn predict(&self, mastery: f64, item: &str) -> Result<f64> {
        let (guess, slip) = self.emission(item)?;
        Ok(raw_predict(mastery, guess, slip))
    }

    /// Posterior mastery after observing a response, followed by the learning
    /// transition.
    pub fn update(&self, mastery: f64, item: &str, correct: bool) -> Result<f64> {
        let (guess, slip) = self.emission(item)?;
        Ok(raw_update(mastery, guess, slip, self.learn, correct))
    }

    /// Mastery before the first response.
    pub fn initial_mastery(&self) -> f64 {
        self.prior
    }

    /// Next-step predictions along a sequence: element `t` is `P(correct)` for
    /// response `t` given responses `0..t`.
    pub fn trace(&self, sequence: &[Response]) -> Result<Vec<f64>> {
        let mut mastery = self.prior;
        let mut out = Vec::with_capacity(sequence.len());
        for r in sequence {
            out.push(self.predict(mastery, &r.item)?);
            mastery = self.update(mastery, &r.item, r.correct)?;
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: KtIdemModel =
            serde_json::from_str(text).map_err(|e| Error::ModelDocument(e.to_string()))?;
        let probs = [model.prior, model.learn]
            .into_iter()
            .chain(model.guess.values().copied())
            .chain(model.slip.values().copied());
        for p in probs {
            if !(P_MIN..=P_MAX).contains(&p) {
                return Err(Error::ModelDocument(format!(
                    "probability {p} out of range"
                )));
            }
        }
        if model.guess.keys().ne(model.slip.keys()) {
            return Err(Error::ModelDocument(
                "guess and slip cover different items".into(),
            ));
        }
        Ok(model)
    }
}

fn raw_predict(mastery: f64, guess: f64, slip: f64) -> f64 {
    (mastery * (1.0 - slip) + (1.0 - mastery) * guess).clamp(0.0, 1.0)
}

fn raw_update(mastery: f64, guess: f64, slip: f64, learn: f64, correct: bool) -> f64 {
    let (known, unknown) = if correct {
        (mastery * (1.0 - slip), (1.0 - mastery) * guess)
    } else {
        (mastery * slip, (1.0 - mastery) * (1.0 - guess))
    };
    let total = known + unknown;
    let post = if total > 0.0 { known / total } else { mastery };
    post + (1.0 - post) * learn
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KtFitConfig {
    pub max_iterations: usize,
    /// Stop once the log-likelihood gain falls below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for KtFitConfig {
    fn default() -> Self {
        KtFitConfig {
            max_iterations: 100,
            tolerance: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KtFit {
    pub model: KtIdemModel,
    /// Log-likelihood of the data before every M-step, then at the end.
    pub log_likelihood: Vec<f64>,
    /// Requested items that had no observations.
    pub excluded: Vec<String>,
}

/// Expected sufficient statistics of one or more sequences.
#[derive(Debug, Clone, Default)]
struct Counts {
    log_likelihood: f64,
    /// Expected mastery at the first step, summed over sequences.
    first_mastered: f64,
    sequences: f64,
    /// Expected unmastered→mastered transitions and unmastered time steps
    /// that have a successor.
    learned: f64,
    unlearned_from: f64,
    /// Per item: (E[unmastered & correct], E[unmastered], E[mastered & wrong], E[mastered]).
    items: BTreeMap<usize, [f64; 4]>,
}

impl Counts {
    fn merge(mut self, other: Counts) -> Counts {
        self.log_likelihood += other.log_likelihood;
        self.first_mastered += other.first_mastered;
        self.sequences += other.sequences;
        self.learned += other.learned;
        self.unlearned_from += other.unlearned_from;
        for (k, v) in other.items {
            let e = self.items.entry(k).or_insert([0.0; 4]);
            for (a, b) in e.iter_mut().zip(v) {
                *a += b;
            }
        }
        self
    }
}

struct Params {
    prior: f64,
    learn: f64,
    guess: Vec<f64>,
    slip: Vec<f64>,
}

/// Scaled forward-backward over one sequence of `(item index, correct)`.
fn expect(params: &Params, seq: &[(usize, bool)]) -> Counts {
    let n = seq.len();
    let mut counts = Counts::default();
    if n == 0 {
        return counts;
    }
    let emit = |t: usize| -> [f64; 2] {
        let (item, correct) = seq[t];
        let (g, s) = (params.guess[item], params.slip[item]);
        if correct {
            [g, 1.0 - s]
        } else {
            [1.0 - g, s]
        }
    };
    let learn = params.learn;
    // state 0 = unmastered, 1 = mastered
    let mut alpha = vec![[0.0; 2]; n];
    let mut scale = vec![0.0; n];
    let e0 = emit(0);
    let a0 = [(1.0 - params.prior) * e0[0], params.prior * e0[1]];
    scale[0] = a0[0] + a0[1];
    alpha[0] = [a0[0] / scale[0], a0[1] / scale[0]];
    for t in 1..n {
        let e = emit(t);
        let prev = alpha[t - 1];
        let a = [
            prev[0] * (1.0 - learn) * e[0],
            (prev[0] * learn + prev[1]) * e[1],
        ];
        scale[t] = a[0] + a[1];
        alpha[t] = [a[0] / scale[t], a[1] / scale[t]];
    }
    let mut beta = vec![[1.0; 2]; n];
    for t in (0..n - 1).rev() {
        let e = emit(t + 1);
        let next = beta[t + 1];
        beta[t] = [
            ((1.0 - learn) * e[0] * next[0] + learn * e[1] * next[1]) / scale[t + 1],
            (e[1] * next[1]) / scale[t + 1],
        ];
    }

    counts.log_likelihood = scale.iter().map(|c| c.ln()).sum();
    counts.sequences = 1.0;
    for t in 0..n {
        let g = [alpha[t][0] * beta[t][0], alpha[t][1] * beta[t][1]];
        let z = g[0] + g[1];
        let g = [g[0] / z, g[1] / z];
        if t == 0 {
            counts.first_mastered += g[1];
        }
        let (item, correct) = seq[t];
        let e = counts.items.entry(item).or_insert([0.0; 4]);
        if correct {
            e[0] += g[0];
        } else {
            e[2] += g[1];
        }
        e[1] += g[0];
        e[3] += g[1];
        if t + 1 < n {
            let em = emit(t + 1);
            let xi01 = alpha[t][0] * learn * em[1] * beta[t + 1][1] / scale[t + 1];
            counts.learned += xi01;
            counts.unlearned_from += g[0];
        }
    }
    counts
}

fn e_step(params: &Params, data: &[Vec<(usize, bool)>]) -> Counts {
    let parts: Vec<Counts> = data.par_iter().map(|s| expect(params, s)).collect();
    parts.into_iter().fold(Counts::default(), Counts::merge)
}

fn ratio_or(num: f64, den: f64, keep: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        keep
    }
}

fn m_step(params: &mut Params, counts: &Counts) {
    params.prior = clamp_prob(ratio_or(
        counts.first_mastered,
        counts.sequences,
        params.prior,
    ));
    params.learn = clamp_prob(ratio_or(
        counts.learned,
        counts.unlearned_from,
        params.learn,
    ));
    for (&item, c) in &counts.items {
        params.guess[item] = clamp_emission(ratio_or(c[0], c[1], params.guess[item]));
        params.slip[item] = clamp_emission(ratio_or(c[2], c[3], params.slip[item]));
    }
}

impl KtIdemModel {
    /// Fits prior, learning rate and per-item guess/slip by expectation
    /// maximization. Items in `items` without any observation are left out
    /// of the model and listed in [`KtFit::excluded`]; responses on items not
    /// in `items` are an error.
    pub fn fit(
        sequences: &[ResponseSequence],
        items: &[String],
        config: &KtFitConfig,
    ) -> Result<KtFit> {
        let index: BTreeMap<&str, usize> = items
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut seen = BTreeSet::new();
        let data = sequences
            .iter()
            .map(|seq| {
                seq.iter()
                    .map(|r| {
                        let i = *index
                            .get(r.item.as_str())
                            .ok_or_else(|| Error::UnknownItem(r.item.clone()))?;
                        seen.insert(i);
                        Ok((i, r.correct))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if seen.is_empty() {
            return Err(Error::Dataset("no responses to fit".into()));
        }
        let excluded: Vec<String> = items
            .iter()
            .enumerate()
            .filter(|(i, _)| !seen.contains(i))
            .map(|(_, s)| s.clone())
            .collect();
        for item in &excluded {
            log::warn!("item {item} has no observations; excluded from the fit");
        }

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Params {
            prior: rng.random_range(0.3..0.7),
            learn: rng.random_range(0.05..0.3),
            guess: (0..items.len())
                .map(|_| rng.random_range(0.1..0.3))
                .collect(),
            slip: (0..items.len())
                .map(|_| rng.random_range(0.05..0.2))
                .collect(),
        };

        let mut log_likelihood = Vec::new();
        let mut counts = e_step(&params, &data);
        for _ in 0..config.max_iterations {
            log_likelihood.push(counts.log_likelihood);
            m_step(&mut params, &counts);
            let next = e_step(&params, &data);
            let gain = next.log_likelihood - counts.log_likelihood;
            counts = next;
            if gain.abs() < config.tolerance {
                break;
            }
        }
        log_likelihood.push(counts.log_likelihood);

        let mut model = KtIdemModel::new(params.prior, params.learn);
        for &i in &seen {
            model.set_item(items[i].clone(), params.guess[i], params.slip[i]);
        }
        Ok(KtFit {
            model,
            log_likelihood,
            excluded,
        })
    }
}
