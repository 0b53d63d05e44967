//! Finite MDPs, tabular policies, and exact occupancy-measure computation.
//!
//! The state-action occupancy of a policy is the discount-weighted visitation
//! distribution
//!
//! ```text
//! d(s,a) = (1-γ) Σ_t γ^t Pr(s_t = s, a_t = a)
//! ```
//!
//! and satisfies the single-step transpose Bellman equation
//!
//! ```text
//! d(s,a) = (1-γ) μ0(s) π(a|s) + γ π(a|s) Σ_{s̃,ã} T(s | s̃,ã) d(s̃,ã)
//! ```
//!
//! which [`compute_occupancy`] solves exactly as a dense linear system of
//! size |S||A|.

use ndarray::{Array1, Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

const ROW_SUM_TOL: f64 = 1e-12;
const OCC_SUM_TOL: f64 = 1e-9;
const OCC_NEG_TOL: f64 = -1e-12;
/// An exact solve leaving a flow residual above this is treated as singular.
const SOLVE_RESIDUAL_LIMIT: f64 = 1e-6;

/// Flattened index of a state-action pair; row-major with actions innermost.
#[inline]
pub fn sa_index(state: usize, action: usize, num_actions: usize) -> usize {
    state * num_actions + action
}

/// A finite discounted MDP: transition tensor `T[s, a, s']`, initial state
/// distribution `μ0`, and discount `γ ∈ (0, 1)`.
///
/// The reward of the classical MDP tuple is deliberately absent: the
/// imitation pipeline constructs its own reward from density ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    transition: Array3<f64>,
    initial_dist: Array1<f64>,
    discount: f64,
}

impl TabularMdp {
    /// Validates and builds an MDP. Every transition row must sum to one
    /// within 1e-12, `initial_dist` must be a distribution, and the discount
    /// must lie strictly inside (0, 1). γ = 1 is rejected: the normalization
    /// `(1-γ)` used throughout the occupancy machinery degenerates there.
    pub fn new(
        transition: Array3<f64>,
        initial_dist: Array1<f64>,
        discount: f64,
    ) -> Result<Self> {
        let (s, a, s2) = transition.dim();
        if s == 0 || a == 0 {
            return Err(Error::InvalidMdp("empty state or action space".into()));
        }
        if s != s2 {
            return Err(Error::InvalidMdp(format!(
                "transition tensor must be square in states, got {s}x{a}x{s2}"
            )));
        }
        if initial_dist.len() != s {
            return Err(Error::InvalidMdp(format!(
                "initial_dist has length {}, expected {s}",
                initial_dist.len()
            )));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::InvalidMdp(format!(
                "discount must lie strictly in (0, 1), got {discount}"
            )));
        }
        for state in 0..s {
            for action in 0..a {
                let row = transition.slice(ndarray::s![state, action, ..]);
                let mut sum = 0.0;
                for &p in row.iter() {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::InvalidMdp(format!(
                            "transition({state},{action},..) contains probability {p}"
                        )));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidMdp(format!(
                        "transition row ({state},{action}) sums to {sum}, expected 1"
                    )));
                }
            }
        }
        let mut mu_sum = 0.0;
        for &p in initial_dist.iter() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidMdp(format!(
                    "initial_dist contains probability {p}"
                )));
            }
            mu_sum += p;
        }
        if (mu_sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidMdp(format!(
                "initial_dist sums to {mu_sum}, expected 1"
            )));
        }
        Ok(Self {
            num_states: s,
            num_actions: a,
            transition,
            initial_dist,
            discount,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// `T(s' | s, a)`.
    pub fn transition_prob(&self, state: usize, action: usize, next: usize) -> f64 {
        self.transition[[state, action, next]]
    }

    pub fn transition_row(&self, state: usize, action: usize) -> ArrayView1<'_, f64> {
        self.transition.slice(ndarray::s![state, action, ..])
    }

    pub fn initial_dist(&self) -> &Array1<f64> {
        &self.initial_dist
    }

    /// Same dynamics and discount, different initial distribution.
    pub fn with_initial_dist(&self, initial_dist: Array1<f64>) -> Result<Self> {
        Self::new(self.transition.clone(), initial_dist, self.discount)
    }

    /// Same dynamics and initial distribution, different discount.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::new(self.transition.clone(), self.initial_dist.clone(), discount)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: MdpFile = serde_json::from_str(text)?;
        file.into_mdp()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&MdpFile::from_mdp(self)).expect("mdp serializes")
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }
}

/// On-disk schema: row-stochasticity is re-validated on load.
#[derive(Serialize, Deserialize)]
struct MdpFile {
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    initial_dist: Vec<f64>,
    transition: Vec<Vec<Vec<f64>>>,
}

impl MdpFile {
    fn from_mdp(mdp: &TabularMdp) -> Self {
        let transition = (0..mdp.num_states)
            .map(|s| {
                (0..mdp.num_actions)
                    .map(|a| mdp.transition_row(s, a).to_vec())
                    .collect()
            })
            .collect();
        Self {
            num_states: mdp.num_states,
            num_actions: mdp.num_actions,
            gamma: mdp.discount,
            initial_dist: mdp.initial_dist.to_vec(),
            transition,
        }
    }

    fn into_mdp(self) -> Result<TabularMdp> {
        if self.transition.len() != self.num_states {
            return Err(Error::InvalidMdp(format!(
                "transition has {} state rows, header says {}",
                self.transition.len(),
                self.num_states
            )));
        }
        let mut tensor = Array3::zeros((self.num_states, self.num_actions, self.num_states));
        for (s, per_action) in self.transition.iter().enumerate() {
            if per_action.len() != self.num_actions {
                return Err(Error::InvalidMdp(format!(
                    "state {s} has {} action rows, header says {}",
                    per_action.len(),
                    self.num_actions
                )));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != self.num_states {
                    return Err(Error::InvalidMdp(format!(
                        "row ({s},{a}) has length {}, header says {}",
                        row.len(),
                        self.num_states
                    )));
                }
                for (s2, &p) in row.iter().enumerate() {
                    tensor[[s, a, s2]] = p;
                }
            }
        }
        TabularMdp::new(tensor, Array1::from(self.initial_dist), self.gamma)
    }
}

/// A stationary stochastic policy `π(a | s)` stored as a row-stochastic
/// `|S| x |A|` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    probs: Array2<f64>,
}

impl TabularPolicy {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        let (s, a) = probs.dim();
        if s == 0 || a == 0 {
            return Err(Error::InvalidPolicy("empty policy".into()));
        }
        for state in 0..s {
            let mut sum = 0.0;
            for action in 0..a {
                let p = probs[[state, action]];
                if p < 0.0 || !p.is_finite() {
                    return Err(Error::InvalidPolicy(format!(
                        "π({action}|{state}) = {p}"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidPolicy(format!(
                    "row {state} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            probs: Array2::from_elem((num_states, num_actions), 1.0 / num_actions as f64),
        }
    }

    /// Deterministic policy from one action index per state.
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Result<Self> {
        let mut probs = Array2::zeros((actions.len(), num_actions));
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::InvalidPolicy(format!(
                    "action {a} out of bounds at state {s}"
                )));
            }
            probs[[s, a]] = 1.0;
        }
        Self::new(probs)
    }

    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[[state, action]]
    }

    pub fn row(&self, state: usize) -> ArrayView1<'_, f64> {
        self.probs.row(state)
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    /// Lowest-index maximizing action per state.
    pub fn argmax_actions(&self) -> Vec<usize> {
        (0..self.num_states())
            .map(|s| {
                let row = self.probs.row(s);
                let mut best = 0;
                for (a, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }
}

/// A normalized state-action visitation vector together with the max-norm of
/// its Bellman-flow violation.
///
/// Exact solves leave `flow_residual` at solver precision; empirical
/// estimates carry the measured violation and are not rejected for it.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    d: Array1<f64>,
    num_states: usize,
    num_actions: usize,
    flow_residual: f64,
}

impl OccupancyMeasure {
    /// Validates normalization (within 1e-9) and non-negativity (entries
    /// above -1e-12 are clamped to zero).
    pub fn new(
        mut d: Array1<f64>,
        num_states: usize,
        num_actions: usize,
        flow_residual: f64,
    ) -> Result<Self> {
        if d.len() != num_states * num_actions {
            return Err(Error::InvalidDistribution(format!(
                "occupancy has length {}, expected {}",
                d.len(),
                num_states * num_actions
            )));
        }
        for x in d.iter_mut() {
            if !x.is_finite() || *x < OCC_NEG_TOL {
                return Err(Error::InvalidDistribution(format!(
                    "occupancy entry {x} out of range"
                )));
            }
            if *x < 0.0 {
                *x = 0.0;
            }
        }
        let sum: f64 = d.sum();
        if (sum - 1.0).abs() > OCC_SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "occupancy sums to {sum}, expected 1"
            )));
        }
        Ok(Self {
            d,
            num_states,
            num_actions,
            flow_residual,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.d[sa_index(state, action, self.num_actions)]
    }

    /// Flattened `d(s,a)` with actions innermost.
    pub fn as_array(&self) -> &Array1<f64> {
        &self.d
    }

    pub fn flow_residual(&self) -> f64 {
        self.flow_residual
    }

    /// State marginal `d(s) = Σ_a d(s,a)`.
    pub fn state_marginal(&self) -> Array1<f64> {
        marginalize_states(self)
    }
}

/// Solves the transpose Bellman equation exactly and returns the occupancy
/// of `policy` in `mdp`.
///
/// The system `(I - γ M) d = (1-γ) b` with `b(s,a) = μ0(s) π(a|s)` and
/// `M[(s,a),(s̃,ã)] = π(a|s) T(s | s̃,ã)` is solved densely; the Bellman-flow
/// residual of the solution is checked against 1e-6 and stored.
pub fn compute_occupancy(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<OccupancyMeasure> {
    let s = mdp.num_states();
    let a = mdp.num_actions();
    if policy.num_states() != s || policy.num_actions() != a {
        return Err(Error::InvalidPolicy(format!(
            "policy shape {}x{} does not match MDP {}x{}",
            policy.num_states(),
            policy.num_actions(),
            s,
            a
        )));
    }
    let gamma = mdp.discount();
    let n = s * a;

    let mut system = Array2::zeros((n, n));
    for to_s in 0..s {
        for to_a in 0..a {
            let row = sa_index(to_s, to_a, a);
            system[[row, row]] += 1.0;
            let pi = policy.prob(to_s, to_a);
            if pi == 0.0 {
                continue;
            }
            for from_s in 0..s {
                for from_a in 0..a {
                    let t = mdp.transition_prob(from_s, from_a, to_s);
                    if t == 0.0 {
                        continue;
                    }
                    system[[row, sa_index(from_s, from_a, a)]] -= gamma * pi * t;
                }
            }
        }
    }
    let mut rhs = Array1::zeros(n);
    for state in 0..s {
        let mu = mdp.initial_dist()[state];
        for action in 0..a {
            rhs[sa_index(state, action, a)] = (1.0 - gamma) * mu * policy.prob(state, action);
        }
    }

    let d = linalg::lu_solve(&system, &rhs).ok_or(Error::SingularSystem {
        residual: f64::INFINITY,
        limit: SOLVE_RESIDUAL_LIMIT,
    })?;
    let residual = flow_residual(mdp, &d);
    if residual > SOLVE_RESIDUAL_LIMIT {
        return Err(Error::SingularSystem {
            residual,
            limit: SOLVE_RESIDUAL_LIMIT,
        });
    }
    OccupancyMeasure::new(d, s, a, residual)
}

/// `d(s) = Σ_a d(s,a)`.
pub fn marginalize_states(occ: &OccupancyMeasure) -> Array1<f64> {
    let mut out = Array1::zeros(occ.num_states());
    for state in 0..occ.num_states() {
        for action in 0..occ.num_actions() {
            out[state] += occ.get(state, action);
        }
    }
    out
}

/// Fallback action distribution at states with zero occupancy mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnvisitedPolicy {
    Uniform,
    Deterministic(usize),
}

/// Recovers `π(a|s) = d(s,a) / d(s)`, defaulting to uniform at unvisited
/// states. See [`policy_from_occupancy_with`] for the configurable fallback.
pub fn policy_from_occupancy(occ: &OccupancyMeasure) -> TabularPolicy {
    policy_from_occupancy_with(occ, UnvisitedPolicy::Uniform)
}

pub fn policy_from_occupancy_with(
    occ: &OccupancyMeasure,
    fallback: UnvisitedPolicy,
) -> TabularPolicy {
    let s = occ.num_states();
    let a = occ.num_actions();
    let mut probs = Array2::zeros((s, a));
    for state in 0..s {
        let mass: f64 = (0..a).map(|action| occ.get(state, action)).sum();
        if mass > 0.0 {
            for action in 0..a {
                probs[[state, action]] = occ.get(state, action) / mass;
            }
        } else {
            match fallback {
                UnvisitedPolicy::Uniform => {
                    for action in 0..a {
                        probs[[state, action]] = 1.0 / a as f64;
                    }
                }
                UnvisitedPolicy::Deterministic(action) => {
                    probs[[state, action.min(a - 1)]] = 1.0;
                }
            }
        }
    }
    TabularPolicy::new(probs).expect("rows normalized by construction")
}

/// `(T V)(s,a) = Σ_{s'} T(s'|s,a) V(s')`, flattened over state-action pairs.
pub fn apply_transition(mdp: &TabularMdp, v: &Array1<f64>) -> Array1<f64> {
    let s = mdp.num_states();
    let a = mdp.num_actions();
    let mut out = Array1::zeros(s * a);
    for state in 0..s {
        for action in 0..a {
            let mut acc = 0.0;
            for next in 0..s {
                acc += mdp.transition_prob(state, action, next) * v[next];
            }
            out[sa_index(state, action, a)] = acc;
        }
    }
    out
}

/// Adjoint of [`apply_transition`]: `(T⋆ d)(s) = Σ_{s̃,ã} T(s|s̃,ã) d(s̃,ã)`.
pub fn adjoint_transition(mdp: &TabularMdp, d: &Array1<f64>) -> Array1<f64> {
    let s = mdp.num_states();
    let a = mdp.num_actions();
    let mut out = Array1::zeros(s);
    for from_s in 0..s {
        for from_a in 0..a {
            let mass = d[sa_index(from_s, from_a, a)];
            if mass == 0.0 {
                continue;
            }
            for to_s in 0..s {
                out[to_s] += mdp.transition_prob(from_s, from_a, to_s) * mass;
            }
        }
    }
    out
}

/// Max-norm of the per-state Bellman-flow violation
/// `Σ_a d(s,a) - (1-γ) μ0(s) - γ (T⋆ d)(s)`.
pub fn flow_residual(mdp: &TabularMdp, d: &Array1<f64>) -> f64 {
    let s = mdp.num_states();
    let a = mdp.num_actions();
    let gamma = mdp.discount();
    let flowed = adjoint_transition(mdp, d);
    let mut worst = 0.0_f64;
    for state in 0..s {
        let marginal: f64 = (0..a).map(|action| d[sa_index(state, action, a)]).sum();
        let violation =
            marginal - (1.0 - gamma) * mdp.initial_dist()[state] - gamma * flowed[state];
        worst = worst.max(violation.abs());
    }
    worst
}
