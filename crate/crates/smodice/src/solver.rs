//! The matching solver: closed-form χ² solution, iterative dual-value
//! descent for χ² and KL, importance-weight extraction, weighted behavior
//! cloning, and the success-example reduction.
//!
//! The dual problem minimized over the tabular value function `V` is
//!
//! ```text
//! J(V) = (1-γ) E_{s~μ0}[V(s)] + E_{(s,a)~d_O}[f⋆(R(s) + γ(TV)(s,a) - V(s))]
//! ```
//!
//! an unconstrained convex program. With the χ² conjugate it is a quadratic
//! whose stationary point has the closed form
//!
//! ```text
//! V⋆ = ((γT - B)ᵀ D (γT - B))⁻¹ ((γ-1)μ0 + (B - γT)ᵀ D (1 + BR))
//! ```
//!
//! solved here by pseudo-inverse. The conjugate derivative of the advantage
//! `R + γTV⋆ - V⋆` gives the occupancy importance weights ξ⋆, and the policy
//! is the per-state normalization of `ξ⋆ ⊙ d_O`.
//!
//! `V(s) ≥ 0` from the dual derivation is not enforced: the closed form
//! ignores it, and `min(V⋆)` is reported as a diagnostic instead.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::datasets::{expert_state_distribution, ExpertObservations, ExpertWeighting, ObservationKind};
use crate::discriminator::RewardVector;
use crate::error::{Error, Result};
use crate::fdiv::{self, FDivergence};
use crate::linalg;
use crate::mdp::{
    apply_transition, compute_occupancy, flow_residual, sa_index, OccupancyMeasure, TabularMdp,
    TabularPolicy,
};

/// ε used by every smoothed-KL evaluation, oracle and solver alike.
pub const KL_SMOOTHING_EPS: f64 = 1e-8;

/// Singular values below `1e-10 · σ_max` are dropped by the pseudo-inverse.
pub const PINV_REL_TOL: f64 = 1e-10;

/// Solver output: optimal value function, importance weights, extracted
/// policy, achieved objective, and named diagnostics (weight mass `Σ d_O ξ`,
/// clamp fraction, flow residual of the implied `d⋆ = ξ ⊙ d_O`, `min V⋆`).
#[derive(Debug, Clone, PartialEq)]
pub struct SmodiceSolution {
    pub v_star: Array1<f64>,
    pub xi_star: Array1<f64>,
    pub policy: TabularPolicy,
    pub objective_value: f64,
    pub divergence_estimate: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
struct SolutionFile {
    v_star: Vec<f64>,
    xi_star: Vec<f64>,
    policy: Vec<Vec<f64>>,
    objective_value: f64,
    divergence_estimate: f64,
    diagnostics: BTreeMap<String, f64>,
}

impl SmodiceSolution {
    pub fn num_states(&self) -> usize {
        self.v_star.len()
    }

    pub fn num_actions(&self) -> usize {
        self.policy.num_actions()
    }

    fn validate(&self) -> Result<()> {
        if self.xi_star.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::InvalidDistribution(
                "importance weights must be finite and non-negative".into(),
            ));
        }
        if self.v_star.iter().any(|x| !x.is_finite())
            || !self.objective_value.is_finite()
            || !self.divergence_estimate.is_finite()
        {
            return Err(Error::InvalidDistribution(
                "solution contains non-finite entries".into(),
            ));
        }
        if self.v_star.len() != self.policy.num_states()
            || self.xi_star.len() != self.policy.num_states() * self.policy.num_actions()
        {
            return Err(Error::InvalidDistribution(
                "solution shapes are inconsistent".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: SolutionFile = serde_json::from_str(text)?;
        let rows = file.policy.len();
        if rows == 0 {
            return Err(Error::InvalidPolicy("empty policy".into()));
        }
        let cols = file.policy[0].len();
        if file.policy.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidPolicy("ragged policy rows".into()));
        }
        let mut probs = Array2::zeros((rows, cols));
        for (s, row) in file.policy.iter().enumerate() {
            for (a, &p) in row.iter().enumerate() {
                probs[[s, a]] = p;
            }
        }
        let solution = Self {
            v_star: Array1::from(file.v_star),
            xi_star: Array1::from(file.xi_star),
            policy: TabularPolicy::new(probs)?,
            objective_value: file.objective_value,
            divergence_estimate: file.divergence_estimate,
            diagnostics: file.diagnostics,
        };
        solution.validate()?;
        Ok(solution)
    }

    pub fn to_json_string(&self) -> String {
        let policy = (0..self.policy.num_states())
            .map(|s| self.policy.row(s).to_vec())
            .collect();
        let file = SolutionFile {
            v_star: self.v_star.to_vec(),
            xi_star: self.xi_star.to_vec(),
            policy,
            objective_value: self.objective_value,
            divergence_estimate: self.divergence_estimate,
            diagnostics: self.diagnostics.clone(),
        };
        serde_json::to_string_pretty(&file).expect("solution serializes")
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }
}

fn check_shapes(
    mdp: &TabularMdp,
    d_o: &OccupancyMeasure,
    reward: &RewardVector,
) -> Result<()> {
    if d_o.num_states() != mdp.num_states() || d_o.num_actions() != mdp.num_actions() {
        return Err(Error::InvalidDistribution(format!(
            "occupancy over {}x{} does not match MDP {}x{}",
            d_o.num_states(),
            d_o.num_actions(),
            mdp.num_states(),
            mdp.num_actions()
        )));
    }
    if reward.len() != mdp.num_states() {
        return Err(Error::InvalidDistribution(format!(
            "reward over {} states does not match MDP with {}",
            reward.len(),
            mdp.num_states()
        )));
    }
    Ok(())
}

/// Advantage `r_V(s,a) = R(s) + γ (TV)(s,a) - V(s)`, flattened.
pub fn advantages(mdp: &TabularMdp, reward: &RewardVector, v: &Array1<f64>) -> Array1<f64> {
    let gamma = mdp.discount();
    let a = mdp.num_actions();
    let tv = apply_transition(mdp, v);
    let mut out = tv;
    for s in 0..mdp.num_states() {
        for ac in 0..a {
            let i = sa_index(s, ac, a);
            out[i] = reward.get(s) + gamma * out[i] - v[s];
        }
    }
    out
}

/// Dense form of the dual problem for the iterative solver's inner loop:
/// the transition operator as an `|S||A| x |S|` matrix plus reusable
/// buffers, so each step is two matvecs.
struct DualProblem<'p> {
    t_mat: Array2<f64>,
    reward_sa: Array1<f64>,
    d_o: &'p Array1<f64>,
    mu0: &'p Array1<f64>,
    gamma: f64,
    num_states: usize,
    num_actions: usize,
    kind: FDivergence,
    adv: Array1<f64>,
    weighted: Array1<f64>,
}

impl<'p> DualProblem<'p> {
    fn new(
        mdp: &'p TabularMdp,
        d_o: &'p OccupancyMeasure,
        reward: &RewardVector,
        kind: FDivergence,
    ) -> Self {
        let s = mdp.num_states();
        let a = mdp.num_actions();
        let mut t_mat = Array2::zeros((s * a, s));
        let mut reward_sa = Array1::zeros(s * a);
        for state in 0..s {
            for action in 0..a {
                let i = sa_index(state, action, a);
                reward_sa[i] = reward.get(state);
                for next in 0..s {
                    t_mat[[i, next]] = mdp.transition_prob(state, action, next);
                }
            }
        }
        Self {
            t_mat,
            reward_sa,
            d_o: d_o.as_array(),
            mu0: mdp.initial_dist(),
            gamma: mdp.discount(),
            num_states: s,
            num_actions: a,
            kind,
            adv: Array1::zeros(s * a),
            weighted: Array1::zeros(s * a),
        }
    }

    fn advantages_into(&mut self, v: &Array1<f64>) {
        self.adv.assign(&self.t_mat.dot(v));
        for state in 0..self.num_states {
            for action in 0..self.num_actions {
                let i = sa_index(state, action, self.num_actions);
                self.adv[i] = self.reward_sa[i] + self.gamma * self.adv[i] - v[state];
            }
        }
    }

    /// Objective and gradient at `v` in one pass; the gradient overwrites
    /// `grad`.
    fn objective_and_gradient(&mut self, v: &Array1<f64>, grad: &mut Array1<f64>) -> f64 {
        self.advantages_into(v);
        let linear: f64 = (1.0 - self.gamma)
            * self
                .mu0
                .iter()
                .zip(v.iter())
                .map(|(m, x)| m * x)
                .sum::<f64>();
        let objective = match self.kind {
            FDivergence::ChiSquared => {
                let mut quad = 0.0;
                for i in 0..self.adv.len() {
                    let r1 = self.adv[i] + 1.0;
                    self.weighted[i] = self.d_o[i] * r1;
                    quad += self.d_o[i] * 0.5 * r1 * r1;
                }
                linear + quad
            }
            FDivergence::Kl => {
                let mut shift = f64::NEG_INFINITY;
                for i in 0..self.adv.len() {
                    if self.d_o[i] > 0.0 && self.adv[i] > shift {
                        shift = self.adv[i];
                    }
                }
                let mut z = 0.0;
                for i in 0..self.adv.len() {
                    if self.d_o[i] > 0.0 {
                        self.weighted[i] = self.d_o[i] * (self.adv[i] - shift).exp();
                        z += self.weighted[i];
                    } else {
                        self.weighted[i] = 0.0;
                    }
                }
                for w in self.weighted.iter_mut() {
                    *w /= z;
                }
                linear + shift + z.ln()
            }
        };
        // grad = (1-γ)μ0 + γ Tᵀ w - Bᵀ w
        grad.assign(&self.t_mat.t().dot(&self.weighted));
        for state in 0..self.num_states {
            let mut row_sum = 0.0;
            for action in 0..self.num_actions {
                row_sum += self.weighted[sa_index(state, action, self.num_actions)];
            }
            grad[state] = self.gamma * grad[state] - row_sum + (1.0 - self.gamma) * self.mu0[state];
        }
        objective
    }
}

/// `(Aᵀ z)(s') = γ Σ_{s,a} T(s'|s,a) z(s,a) - Σ_a z(s',a)` for `A = γT - B`.
fn a_transpose_apply(mdp: &TabularMdp, z: &Array1<f64>) -> Array1<f64> {
    let gamma = mdp.discount();
    let a = mdp.num_actions();
    let mut out = crate::mdp::adjoint_transition(mdp, z);
    out.mapv_inplace(|x| gamma * x);
    for s in 0..mdp.num_states() {
        for ac in 0..a {
            out[s] -= z[sa_index(s, ac, a)];
        }
    }
    out
}

/// The dual objective `J(V)` for the given divergence.
pub fn dual_objective(
    mdp: &TabularMdp,
    d_o: &OccupancyMeasure,
    reward: &RewardVector,
    kind: FDivergence,
    v: &Array1<f64>,
) -> f64 {
    let gamma = mdp.discount();
    let linear: f64 = (1.0 - gamma)
        * mdp
            .initial_dist()
            .iter()
            .zip(v.iter())
            .map(|(m, x)| m * x)
            .sum::<f64>();
    let adv = advantages(mdp, reward, v);
    let d = d_o.as_array();
    match kind {
        FDivergence::ChiSquared => {
            let quad: f64 = d
                .iter()
                .zip(adv.iter())
                .map(|(&w, &r)| w * 0.5 * (r + 1.0) * (r + 1.0))
                .sum();
            linear + quad
        }
        FDivergence::Kl => {
            let shift = adv
                .iter()
                .zip(d.iter())
                .filter(|(_, &w)| w > 0.0)
                .map(|(&r, _)| r)
                .fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = adv
                .iter()
                .zip(d.iter())
                .filter(|(_, &w)| w > 0.0)
                .map(|(&r, &w)| w * (r - shift).exp())
                .sum();
            linear + shift + sum.ln()
        }
    }
}

/// Analytic gradient of [`dual_objective`] in `V`.
pub fn dual_gradient(
    mdp: &TabularMdp,
    d_o: &OccupancyMeasure,
    reward: &RewardVector,
    kind: FDivergence,
    v: &Array1<f64>,
) -> Array1<f64> {
    let gamma = mdp.discount();
    let adv = advantages(mdp, reward, v);
    let d = d_o.as_array();
    let weighted = match kind {
        FDivergence::ChiSquared => Array1::from_iter(
            d.iter()
                .zip(adv.iter())
                .map(|(&w, &r)| w * (r + 1.0).max(f64::NEG_INFINITY)),
        ),
        FDivergence::Kl => {
            let shift = adv
                .iter()
                .zip(d.iter())
                .filter(|(_, &w)| w > 0.0)
                .map(|(&r, _)| r)
                .fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = adv
                .iter()
                .zip(d.iter())
                .filter(|(_, &w)| w > 0.0)
                .map(|(&r, &w)| w * (r - shift).exp())
                .sum();
            Array1::from_iter(
                d.iter()
                    .zip(adv.iter())
                    .map(|(&w, &r)| if w > 0.0 { w * (r - shift).exp() / z } else { 0.0 }),
            )
        }
    };
    let mut grad = a_transpose_apply(mdp, &weighted);
    for s in 0..mdp.num_states() {
        grad[s] += (1.0 - gamma) * mdp.initial_dist()[s];
    }
    grad
}

fn max_abs(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, &x| m.max(x.abs()))
}

/// The χ² normal matrix `H = (γT - B)ᵀ D (γT - B)`, accumulated over the
/// support of `d_O` from the sparse rows of `A = γT - B`.
pub(crate) fn chi2_normal_matrix(mdp: &TabularMdp, d_o: &OccupancyMeasure) -> Array2<f64> {
    let s = mdp.num_states();
    let a = mdp.num_actions();
    let gamma = mdp.discount();
    let d = d_o.as_array();
    let mut h = Array2::<f64>::zeros((s, s));
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(s + 1);
    for state in 0..s {
        for action in 0..a {
            let w = d[sa_index(state, action, a)];
            if w == 0.0 {
                continue;
            }
            row.clear();
            for next in 0..s {
                let t = mdp.transition_prob(state, action, next);
                if t != 0.0 {
                    row.push((next, gamma * t));
                }
            }
            match row.iter().position(|&(i, _)| i == state) {
                Some(pos) => row[pos].1 -= 1.0,
                None => row.push((state, -1.0)),
            }
            for &(i, vi) in &row {
                for &(j, vj) in &row {
                    h[[i, j]] += w * vi * vj;
                }
            }
        }
    }
    h
}

/// Closed-form χ² solve via pseudo-inverse of the normal system
/// `(γT - B)ᵀ D (γT - B)`. Rank deficiency is absorbed by the
/// pseudo-inverse and surfaced in the diagnostics, never fatal.
pub fn solve_closed_form_chi2(
    mdp: &TabularMdp,
    d_o: &OccupancyMeasure,
    reward: &RewardVector,
) -> Result<SmodiceSolution> {
    check_shapes(mdp, d_o, reward)?;
    let s = mdp.num_states();
    let a = mdp.num_actions();
    let gamma = mdp.discount();
    let d = d_o.as_array();

    let h = chi2_normal_matrix(mdp, d_o);

    // y = -((1-γ) μ0 + Aᵀ (d ⊙ (1 + BR)))
    let z = Array1::from_iter((0..s * a).map(|i| d[i] * (1.0 + reward.get(i / a))));
    let mut y = a_transpose_apply(mdp, &z);
    for state in 0..s {
        y[state] += (1.0 - gamma) * mdp.initial_dist()[state];
    }
    y.mapv_inplace(|x| -x);

    let pinv = linalg::pinv_solve(&h, &y, PINV_REL_TOL);
    let v_star = pinv.solution;

    let adv = advantages(mdp, reward, &v_star);
    let xi = fdiv::primal_weights(FDivergence::ChiSquared, &adv, d);
    let supported = d.iter().filter(|&&w| w > 0.0).count().max(1);
    let clamped = d
        .iter()
        .zip(adv.iter())
        .filter(|(&w, &r)| w > 0.0 && r + 1.0 < 0.0)
        .count();

    let policy = weighted_bc(&xi, d_o)?;
    let objective_value = dual_objective(mdp, d_o, reward, FDivergence::ChiSquared, &v_star);
    let divergence_estimate: f64 = d.iter().zip(xi.iter()).map(|(&w, &x)| w * 0.5 * x * x).sum();

    let implied: Array1<f64> = Array1::from_iter(d.iter().zip(xi.iter()).map(|(&w, &x)| w * x));
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert(
        "weight_mass".into(),
        d.iter().zip(xi.iter()).map(|(&w, &x)| w * x).sum(),
    );
    diagnostics.insert(
        "clamp_fraction".into(),
        clamped as f64 / supported as f64,
    );
    diagnostics.insert(
        "implied_flow_residual".into(),
        flow_residual(mdp, &implied),
    );
    diagnostics.insert("v_min".into(), v_star.iter().copied().fold(f64::INFINITY, f64::min));
    diagnostics.insert("normal_rank".into(), pinv.rank as f64);
    diagnostics.insert("normal_dropped".into(), pinv.dropped as f64);
    diagnostics.insert(
        "grad_max_norm".into(),
        max_abs(&dual_gradient(mdp, d_o, reward, FDivergence::ChiSquared, &v_star)),
    );

    let solution = SmodiceSolution {
        v_star,
        xi_star: xi,
        policy,
        objective_value,
        divergence_estimate,
        diagnostics,
    };
    solution.validate()?;
    Ok(solution)
}

/// Initialization for the iterative solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// All-zero start; with a zero reward and an exact behavior occupancy
    /// this is already the fixed point.
    Zero,
    /// Seeded uniform entries in [-0.5, 0.5].
    Random,
}

/// Knobs for [`solve_iterative_with`].
#[derive(Debug, Clone, Copy)]
pub struct IterativeOptions {
    pub steps: usize,
    /// `None` picks the per-divergence default (0.1 for χ², 0.01 for KL).
    pub learning_rate: Option<f64>,
    /// Nesterov momentum; plain descent when false.
    pub nesterov: bool,
    pub init: InitScheme,
    pub seed: u64,
}

impl Default for IterativeOptions {
    fn default() -> Self {
        Self {
            steps: 20_000,
            learning_rate: None,
            nesterov: false,
            init: InitScheme::Zero,
            seed: 0,
        }
    }
}

impl IterativeOptions {
    fn resolve_lr(&self, kind: FDivergence) -> f64 {
        self.learning_rate.unwrap_or(match kind {
            FDivergence::ChiSquared => 0.1,
            FDivergence::Kl => 0.01,
        })
    }
}

/// Full-batch gradient descent on the dual objective; deterministic in the
/// seed, which only drives the (optional) random initialization.
pub fn solve_iterative(
    mdp: &TabularMdp,
    d_o: &OccupancyMeasure,
    reward: &RewardVector,
    kind: FDivergence,
    steps: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<SmodiceSolution> {
    solve_iterative_with(
        mdp,
        d_o,
        reward,
        kind,
        &IterativeOptions {
            steps,
            learning_rate: Some(learning_rate),
            seed,
            ..IterativeOptions::default()
        },
    )
}

pub fn solve_iterative_with(
    mdp: &TabularMdp,
    d_o: &OccupancyMeasure,
    reward: &RewardVector,
    kind: FDivergence,
    options: &IterativeOptions,
) -> Result<SmodiceSolution> {
    check_shapes(mdp, d_o, reward)?;
    if options.steps == 0 {
        return Err(Error::Diverged {
            step: 0,
            reason: "steps must be at least 1".into(),
        });
    }
    let s = mdp.num_states();
    let lr = options.resolve_lr(kind);
    let mut problem = DualProblem::new(mdp, d_o, reward, kind);

    let mut v = match options.init {
        InitScheme::Zero => Array1::zeros(s),
        InitScheme::Random => {
            use rand::{RngExt, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(options.seed);
            Array1::from_iter((0..s).map(|_| rng.random_range(-0.5..0.5)))
        }
    };
    let mut v_prev = v.clone();
    let mut lookahead = v.clone();
    let mut grad = Array1::zeros(s);
    // Momentum age for the Nesterov schedule, reset whenever the objective
    // rises (adaptive restart recovers a linear rate on quadratics).
    let mut momentum_age: usize = 0;
    let mut last_objective = f64::INFINITY;

    for step in 0..options.steps {
        if options.nesterov && momentum_age > 0 {
            let beta = (momentum_age as f64 - 1.0) / (momentum_age as f64 + 2.0);
            for i in 0..s {
                lookahead[i] = v[i] + beta * (v[i] - v_prev[i]);
            }
        } else {
            lookahead.assign(&v);
        }
        let objective = problem.objective_and_gradient(&lookahead, &mut grad);
        if !objective.is_finite() {
            return Err(Error::Diverged {
                step,
                reason: format!(
                    "objective became {objective} at learning rate {lr}; reduce the learning rate"
                ),
            });
        }
        if options.nesterov {
            if objective > last_objective {
                momentum_age = 0;
            } else {
                momentum_age += 1;
            }
            last_objective = objective;
        }
        v_prev.assign(&v);
        for i in 0..s {
            v[i] = lookahead[i] - lr * grad[i];
        }
    }

    let adv = advantages(mdp, reward, &v);
    let xi = fdiv::primal_weights(kind, &adv, d_o.as_array());
    let d = d_o.as_array();
    let policy = weighted_bc(&xi, d_o)?;
    let objective_value = dual_objective(mdp, d_o, reward, kind, &v);
    if !objective_value.is_finite() {
        return Err(Error::Diverged {
            step: options.steps,
            reason: format!("final objective is not finite at learning rate {lr}"),
        });
    }
    let divergence_estimate: f64 = match kind {
        FDivergence::ChiSquared => d.iter().zip(xi.iter()).map(|(&w, &x)| w * 0.5 * x * x).sum(),
        FDivergence::Kl => d
            .iter()
            .zip(xi.iter())
            .map(|(&w, &x)| if x > 0.0 { w * x * x.ln() } else { 0.0 })
            .sum(),
    };

    let supported = d.iter().filter(|&&w| w > 0.0).count().max(1);
    let clamped = match kind {
        FDivergence::ChiSquared => d
            .iter()
            .zip(adv.iter())
            .filter(|(&w, &r)| w > 0.0 && r + 1.0 < 0.0)
            .count(),
        FDivergence::Kl => 0,
    };
    let implied: Array1<f64> = Array1::from_iter(d.iter().zip(xi.iter()).map(|(&w, &x)| w * x));
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert(
        "weight_mass".into(),
        d.iter().zip(xi.iter()).map(|(&w, &x)| w * x).sum(),
    );
    diagnostics.insert("clamp_fraction".into(), clamped as f64 / supported as f64);
    diagnostics.insert("implied_flow_residual".into(), flow_residual(mdp, &implied));
    diagnostics.insert("v_min".into(), v.iter().copied().fold(f64::INFINITY, f64::min));
    diagnostics.insert(
        "grad_max_norm".into(),
        max_abs(&dual_gradient(mdp, d_o, reward, kind, &v)),
    );
    diagnostics.insert("steps_run".into(), options.steps as f64);

    let solution = SmodiceSolution {
        v_star: v,
        xi_star: xi,
        policy,
        objective_value,
        divergence_estimate,
        diagnostics,
    };
    solution.validate()?;
    Ok(solution)
}

/// Weighted behavior cloning in tabular form: the weighted-log-likelihood
/// maximizer is exactly `π(a|s) ∝ ξ(s,a) d_O(s,a)`, uniform where the
/// denominator vanishes.
pub fn weighted_bc(xi: &Array1<f64>, d_o: &OccupancyMeasure) -> Result<TabularPolicy> {
    let s = d_o.num_states();
    let a = d_o.num_actions();
    if xi.len() != s * a {
        return Err(Error::InvalidDistribution(format!(
            "weights have length {}, expected {}",
            xi.len(),
            s * a
        )));
    }
    if xi.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::InvalidDistribution(
            "importance weights must be finite and non-negative".into(),
        ));
    }
    let mut probs = Array2::<f64>::zeros((s, a));
    for state in 0..s {
        let mut mass = 0.0;
        for action in 0..a {
            let w = xi[sa_index(state, action, a)] * d_o.get(state, action);
            probs[[state, action]] = w;
            mass += w;
        }
        if mass > 0.0 {
            let mut acc = 0.0;
            let mut argmax = 0;
            for action in 0..a {
                probs[[state, action]] /= mass;
                acc += probs[[state, action]];
                if probs[[state, action]] > probs[[state, argmax]] {
                    argmax = action;
                }
            }
            probs[[state, argmax]] += 1.0 - acc;
        } else {
            for action in 0..a {
                probs[[state, action]] = 1.0 / a as f64;
            }
        }
    }
    TabularPolicy::new(probs)
}

/// Success examples become the expert state distribution verbatim; the rest
/// of the pipeline runs unchanged on it.
pub fn reduce_examples_to_matching(
    examples: &ExpertObservations,
    num_states: usize,
) -> Result<Array1<f64>> {
    if examples.kind() != ObservationKind::SuccessExamples {
        return Err(Error::Dataset(
            "example reduction requires success examples".into(),
        ));
    }
    expert_state_distribution(examples, num_states, ExpertWeighting::Uniform)
}

/// Evaluates a solution's policy in the true MDP.
///
/// Returns `state_kl_to_expert` (ε-smoothed, ε = 1e-8), `success_state_mass`
/// when `d_E` is one-hot, and copies the solver's `implied_flow_residual`
/// and `weight_mass` diagnostics (they depend on the `d_O` the solver saw).
pub fn evaluate_solution(
    mdp_true: &TabularMdp,
    solution: &SmodiceSolution,
    d_e: &Array1<f64>,
) -> Result<BTreeMap<String, f64>> {
    if d_e.len() != mdp_true.num_states() {
        return Err(Error::InvalidDistribution(format!(
            "expert distribution over {} states, MDP has {}",
            d_e.len(),
            mdp_true.num_states()
        )));
    }
    let occ = compute_occupancy(mdp_true, &solution.policy)?;
    let marginal = occ.state_marginal();
    let mut metrics = BTreeMap::new();
    metrics.insert(
        "state_kl_to_expert".into(),
        fdiv::smoothed_kl(&marginal, d_e, KL_SMOOTHING_EPS),
    );
    if d_e.iter().any(|&x| x == 1.0) {
        let success = d_e.iter().position(|&x| x == 1.0).unwrap();
        metrics.insert("success_state_mass".into(), marginal[success]);
    }
    for key in ["implied_flow_residual", "weight_mass"] {
        if let Some(&v) = solution.diagnostics.get(key) {
            metrics.insert(key.into(), v);
        }
    }
    Ok(metrics)
}
