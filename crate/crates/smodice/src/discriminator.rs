//! Density-ratio rewards `R(s) = log(d^E(s) / d^O(s))`.
//!
//! Two routes produce the same quantity: direct ε-smoothed empirical ratios
//! (the tabular default) and a per-state logistic classifier trained to
//! separate expert from offline states. The classifier labels expert states
//! 1, so its logit converges to `log(d^E/d^O)` and its sigmoid to
//! `d^E/(d^E + d^O)`; rewards are high where expert density exceeds offline
//! density.

use ndarray::Array1;

use crate::datasets::ExpertObservations;
use crate::error::{Error, Result};

/// Default ε for ratio smoothing.
pub const DEFAULT_EPSILON: f64 = 1e-6;
/// Default reward clip. The log-ratio is unbounded where supports mismatch;
/// clipping keeps the dual objective finite.
pub const DEFAULT_CLIP: (f64, f64) = (-10.0, 10.0);

/// A per-state reward, clipped into `clip_bounds`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardVector {
    r: Array1<f64>,
    clip_bounds: (f64, f64),
}

impl RewardVector {
    /// Clips the raw values into `clip_bounds` and rejects non-finite input.
    pub fn new(raw: Array1<f64>, clip_bounds: (f64, f64)) -> Result<Self> {
        let (lo, hi) = clip_bounds;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidDistribution(format!(
                "bad clip bounds ({lo}, {hi})"
            )));
        }
        let mut r = raw;
        for x in r.iter_mut() {
            if x.is_nan() {
                return Err(Error::InvalidDistribution("reward contains NaN".into()));
            }
            *x = x.clamp(lo, hi);
        }
        Ok(Self { r, clip_bounds })
    }

    /// All-zero reward over `num_states` states.
    pub fn zeros(num_states: usize) -> Self {
        Self {
            r: Array1::zeros(num_states),
            clip_bounds: DEFAULT_CLIP,
        }
    }

    pub fn get(&self, state: usize) -> f64 {
        self.r[state]
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.r
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn clip_bounds(&self) -> (f64, f64) {
        self.clip_bounds
    }
}

/// Tabular reward path: `r(s) = log((d_E(s) + ε) / (d_O(s) + ε))`, clipped
/// to [`DEFAULT_CLIP`].
///
/// Expert coverage (`d_O(s) > 0` wherever `d_E(s) > 0`) is checked and a
/// warning logged on violation; the ε-smoothing keeps the ratio finite
/// regardless.
pub fn reward_from_counts(
    d_e: &Array1<f64>,
    d_o: &Array1<f64>,
    epsilon: f64,
) -> Result<RewardVector> {
    reward_from_counts_clipped(d_e, d_o, epsilon, DEFAULT_CLIP)
}

pub fn reward_from_counts_clipped(
    d_e: &Array1<f64>,
    d_o: &Array1<f64>,
    epsilon: f64,
    clip_bounds: (f64, f64),
) -> Result<RewardVector> {
    if d_e.len() != d_o.len() {
        return Err(Error::InvalidDistribution(format!(
            "state spaces differ: |d_E| = {}, |d_O| = {}",
            d_e.len(),
            d_o.len()
        )));
    }
    if epsilon < 0.0 || (epsilon == 0.0 && d_o.iter().zip(d_e.iter()).any(|(&o, &e)| o == 0.0 && e > 0.0)) {
        return Err(Error::InvalidDistribution(
            "epsilon must be positive when supports mismatch".into(),
        ));
    }
    let uncovered = d_e
        .iter()
        .zip(d_o.iter())
        .filter(|(&e, &o)| e > 0.0 && o == 0.0)
        .count();
    if uncovered > 0 {
        log::warn!(
            "expert coverage violated at {uncovered} state(s): d_O = 0 where d_E > 0; \
             the clipped reward saturates there"
        );
    }
    let raw = Array1::from_iter(
        d_e.iter()
            .zip(d_o.iter())
            .map(|(&e, &o)| ((e + epsilon) / (o + epsilon)).ln()),
    );
    RewardVector::new(raw, clip_bounds)
}

/// Classifier reward path: per-state logistic parameters trained by
/// full-batch gradient descent on the expert-vs-offline objective with
/// one-hot state features. Returns the clipped logit.
pub fn train_classifier(
    expert_states: &ExpertObservations,
    offline_states: &[u32],
    num_states: usize,
    steps: usize,
    lr: f64,
) -> Result<RewardVector> {
    if expert_states.states().is_empty() || offline_states.is_empty() {
        return Err(Error::Dataset(
            "both expert and offline multisets must be non-empty".into(),
        ));
    }
    let mut p_e = Array1::<f64>::zeros(num_states);
    for &s in expert_states.states() {
        if s as usize >= num_states {
            return Err(Error::Dataset(format!("expert state {s} out of bounds")));
        }
        p_e[s as usize] += 1.0;
    }
    p_e /= expert_states.states().len() as f64;
    let mut p_o = Array1::<f64>::zeros(num_states);
    for &s in offline_states {
        if s as usize >= num_states {
            return Err(Error::Dataset(format!("offline state {s} out of bounds")));
        }
        p_o[s as usize] += 1.0;
    }
    p_o /= offline_states.len() as f64;

    let mut theta = Array1::<f64>::zeros(num_states);
    for step in 0..steps {
        let mut loss = 0.0;
        for s in 0..num_states {
            let sig = sigmoid(theta[s]);
            // Binary cross-entropy with expert labeled 1; stable softplus form.
            loss += p_e[s] * softplus(-theta[s]) + p_o[s] * softplus(theta[s]);
            let grad = -p_e[s] * (1.0 - sig) + p_o[s] * sig;
            theta[s] -= lr * grad;
        }
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                reason: format!("classifier loss became {loss}"),
            });
        }
    }
    RewardVector::new(theta, DEFAULT_CLIP)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}
