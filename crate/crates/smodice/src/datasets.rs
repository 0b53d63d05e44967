//! Trajectory datasets: collection from behavior policies, empirical
//! estimation of the MDP and occupancies, and the JSONL on-disk format.
//!
//! A dataset file holds one episode per line,
//! `{"states":[..],"actions":[..],"next_states":[..]}`, with metadata in a
//! sidecar JSON at `<path>.meta.json`. The loader validates every index
//! against the declared bounds and reports errors with 1-based line numbers.

use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array1, Array3, ArrayView1};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{sa_index, OccupancyMeasure, TabularMdp, TabularPolicy};

/// Truncation horizon `H = ⌈ln(1e-4) / ln γ⌉`, so the discarded discounted
/// tail is below 1e-4 of the total weight.
pub fn default_horizon(gamma: f64) -> usize {
    ((1e-4_f64).ln() / gamma.ln()).ceil().max(1.0) as usize
}

/// One logged episode; the three vectors are index-aligned transitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub states: Vec<u32>,
    pub actions: Vec<u32>,
    pub next_states: Vec<u32>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    fn validate(&self, num_states: usize, num_actions: usize) -> std::result::Result<(), String> {
        if self.states.is_empty() {
            return Err("episode is empty".into());
        }
        if self.states.len() != self.actions.len() || self.states.len() != self.next_states.len() {
            return Err(format!(
                "ragged episode: {} states, {} actions, {} next_states",
                self.states.len(),
                self.actions.len(),
                self.next_states.len()
            ));
        }
        for (&s, &s2) in self.states.iter().zip(self.next_states.iter()) {
            if s as usize >= num_states || s2 as usize >= num_states {
                return Err(format!(
                    "state index {} out of bounds (num_states = {num_states})",
                    s.max(s2)
                ));
            }
        }
        for &a in &self.actions {
            if a as usize >= num_actions {
                return Err(format!(
                    "action index {a} out of bounds (num_actions = {num_actions})"
                ));
            }
        }
        Ok(())
    }
}

/// Sidecar metadata identifying the dataset's provenance and bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub source_env: String,
    pub behavior_policy: String,
    pub seed: u64,
    pub num_states: usize,
    pub num_actions: usize,
    pub num_episodes: usize,
    pub horizon: usize,
}

/// Logged episodes plus metadata; immutable after construction or load.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    episodes: Vec<Episode>,
    metadata: DatasetMetadata,
}

impl TrajectoryDataset {
    pub fn new(episodes: Vec<Episode>, metadata: DatasetMetadata) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::Dataset("dataset has no episodes".into()));
        }
        for (i, ep) in episodes.iter().enumerate() {
            ep.validate(metadata.num_states, metadata.num_actions)
                .map_err(|reason| Error::DatasetLine { line: i + 1, reason })?;
        }
        Ok(Self { episodes, metadata })
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn metadata(&self) -> &DatasetMetadata {
        &self.metadata
    }

    pub fn num_transitions(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }

    /// Distinct states appearing anywhere in the dataset.
    pub fn state_coverage(&self) -> Vec<bool> {
        let mut seen = vec![false; self.metadata.num_states];
        for ep in &self.episodes {
            for (&s, &s2) in ep.states.iter().zip(ep.next_states.iter()) {
                seen[s as usize] = true;
                seen[s2 as usize] = true;
            }
        }
        seen
    }

    /// All visited states, with multiplicity; the offline multiset fed to the
    /// discriminator.
    pub fn visited_states(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.num_transitions());
        for ep in &self.episodes {
            out.extend_from_slice(&ep.states);
        }
        out
    }

    /// Relabels the provenance fields.
    pub fn with_source(mut self, source_env: &str, behavior_policy: &str) -> Self {
        self.metadata.source_env = source_env.to_string();
        self.metadata.behavior_policy = behavior_policy.to_string();
        self
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        for ep in &self.episodes {
            serde_json::to_writer(&mut file, ep)?;
            file.write_all(b"\n")?;
        }
        file.flush()?;
        std::fs::write(
            sidecar_path(path),
            serde_json::to_string_pretty(&self.metadata)?,
        )?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let meta_text = std::fs::read_to_string(sidecar_path(path))?;
        let metadata: DatasetMetadata = serde_json::from_str(&meta_text)?;
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut episodes = Vec::new();
        for (i, line) in file.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ep = parse_episode_line(&line, i + 1, metadata.num_states, metadata.num_actions)?;
            episodes.push(ep);
        }
        if episodes.len() != metadata.num_episodes {
            return Err(Error::Dataset(format!(
                "file holds {} episodes but metadata declares {}",
                episodes.len(),
                metadata.num_episodes
            )));
        }
        Self::new(episodes, metadata)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta.json");
    std::path::PathBuf::from(s)
}

fn parse_episode_line(
    line: &str,
    line_no: usize,
    num_states: usize,
    num_actions: usize,
) -> Result<Episode> {
    let ep: Episode = serde_json::from_str(line).map_err(|e| Error::DatasetLine {
        line: line_no,
        reason: e.to_string(),
    })?;
    ep.validate(num_states, num_actions)
        .map_err(|reason| Error::DatasetLine { line: line_no, reason })?;
    Ok(ep)
}

/// Parses JSONL text against explicit bounds. Pure; used by the loader and
/// the fuzz targets.
pub fn parse_jsonl(text: &str, num_states: usize, num_actions: usize) -> Result<Vec<Episode>> {
    let mut episodes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        episodes.push(parse_episode_line(line, i + 1, num_states, num_actions)?);
    }
    Ok(episodes)
}

pub(crate) fn sample_categorical<R: rand::Rng>(rng: &mut R, weights: ArrayView1<'_, f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Rolls out `behavior` in `env_mdp` for `num_episodes` episodes of fixed
/// `horizon`, deterministically in `seed`.
pub fn collect(
    env_mdp: &TabularMdp,
    behavior: &TabularPolicy,
    num_episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<TrajectoryDataset> {
    if num_episodes == 0 {
        return Err(Error::Dataset("num_episodes must be at least 1".into()));
    }
    if horizon == 0 {
        return Err(Error::Dataset("horizon must be at least 1".into()));
    }
    if behavior.num_states() != env_mdp.num_states()
        || behavior.num_actions() != env_mdp.num_actions()
    {
        return Err(Error::InvalidPolicy(
            "behavior policy does not match the environment".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut episodes = Vec::with_capacity(num_episodes);
    for _ in 0..num_episodes {
        let mut states = Vec::with_capacity(horizon);
        let mut actions = Vec::with_capacity(horizon);
        let mut next_states = Vec::with_capacity(horizon);
        let mut state = sample_categorical(&mut rng, env_mdp.initial_dist().view());
        for _ in 0..horizon {
            let action = sample_categorical(&mut rng, behavior.row(state));
            let next = sample_categorical(&mut rng, env_mdp.transition_row(state, action));
            states.push(state as u32);
            actions.push(action as u32);
            next_states.push(next as u32);
            state = next;
        }
        episodes.push(Episode {
            states,
            actions,
            next_states,
        });
    }
    let metadata = DatasetMetadata {
        source_env: "unspecified".into(),
        behavior_policy: "unspecified".into(),
        seed,
        num_states: env_mdp.num_states(),
        num_actions: env_mdp.num_actions(),
        num_episodes,
        horizon,
    };
    TrajectoryDataset::new(episodes, metadata)
}

/// Maximum-likelihood surrogate MDP: `T̂(s'|s,a) = n(s,a,s') / n(s,a)`.
///
/// Rows never observed become deterministic self-loops, which keeps the
/// estimate a valid MDP; such pairs carry no offline occupancy and drop out
/// of the matching objective. `μ0` is the empirical distribution of
/// episode-initial states.
pub fn estimate_mdp(
    data: &TrajectoryDataset,
    num_states: usize,
    num_actions: usize,
    gamma: f64,
) -> Result<TabularMdp> {
    let mut counts = Array3::<f64>::zeros((num_states, num_actions, num_states));
    let mut initial = Array1::<f64>::zeros(num_states);
    for ep in data.episodes() {
        for (i, ((&s, &a), &s2)) in ep
            .states
            .iter()
            .zip(ep.actions.iter())
            .zip(ep.next_states.iter())
            .enumerate()
        {
            let (s, a, s2) = (s as usize, a as usize, s2 as usize);
            if s >= num_states || s2 >= num_states || a >= num_actions {
                return Err(Error::Dataset(format!(
                    "transition ({s},{a},{s2}) out of declared bounds"
                )));
            }
            counts[[s, a, s2]] += 1.0;
            if i == 0 {
                initial[s] += 1.0;
            }
        }
    }
    let mut transition = Array3::<f64>::zeros((num_states, num_actions, num_states));
    for s in 0..num_states {
        for a in 0..num_actions {
            let total: f64 = counts.slice(ndarray::s![s, a, ..]).sum();
            if total > 0.0 {
                let mut acc = 0.0;
                let mut argmax = 0;
                for s2 in 0..num_states {
                    let p = counts[[s, a, s2]] / total;
                    transition[[s, a, s2]] = p;
                    acc += p;
                    if p > transition[[s, a, argmax]] {
                        argmax = s2;
                    }
                }
                transition[[s, a, argmax]] += 1.0 - acc;
            } else {
                transition[[s, a, s]] = 1.0;
            }
        }
    }
    let total_initial = initial.sum();
    if total_initial == 0.0 {
        return Err(Error::Dataset("no initial states observed".into()));
    }
    let mut mu = initial / total_initial;
    let acc = mu.sum();
    let argmax = mu
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    mu[argmax] += 1.0 - acc;
    TabularMdp::new(transition, mu, gamma)
}

/// Weighting scheme for empirical occupancies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OccupancyWeighting {
    /// `d̂(s,a) ∝ Σ_episodes Σ_t γ^t 1[(s_t,a_t) = (s,a)]`, matching the
    /// discounted definition of an occupancy. Default.
    Discounted,
    /// Plain visit frequencies; kept for comparison.
    Undiscounted,
}

/// Empirical state-action occupancy of the dataset.
///
/// The Bellman-flow residual is measured against the MLE surrogate MDP
/// estimated from the same data; empirical occupancies violate flow, so the
/// residual is reported, not enforced.
pub fn estimate_occupancy(
    data: &TrajectoryDataset,
    gamma: f64,
    num_states: usize,
    num_actions: usize,
) -> Result<OccupancyMeasure> {
    estimate_occupancy_with(
        data,
        gamma,
        num_states,
        num_actions,
        OccupancyWeighting::Discounted,
    )
}

pub fn estimate_occupancy_with(
    data: &TrajectoryDataset,
    gamma: f64,
    num_states: usize,
    num_actions: usize,
    weighting: OccupancyWeighting,
) -> Result<OccupancyMeasure> {
    let mut d = Array1::<f64>::zeros(num_states * num_actions);
    let mut total = 0.0;
    for ep in data.episodes() {
        let mut w = 1.0;
        for (&s, &a) in ep.states.iter().zip(ep.actions.iter()) {
            let (s, a) = (s as usize, a as usize);
            if s >= num_states || a >= num_actions {
                return Err(Error::Dataset(format!(
                    "pair ({s},{a}) out of declared bounds"
                )));
            }
            d[sa_index(s, a, num_actions)] += w;
            total += w;
            if weighting == OccupancyWeighting::Discounted {
                w *= gamma;
            }
        }
    }
    if total <= 0.0 {
        return Err(Error::Dataset("dataset carries no visitation mass".into()));
    }
    let mut d = d / total;
    let acc = d.sum();
    let argmax = d
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    d[argmax] += 1.0 - acc;
    let surrogate = estimate_mdp(data, num_states, num_actions, gamma)?;
    let residual = crate::mdp::flow_residual(&surrogate, &d);
    OccupancyMeasure::new(d, num_states, num_actions, residual)
}

/// Whether expert supervision is full state trajectories or bare success
/// examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    FullTrajectories,
    SuccessExamples,
}

/// Action-free expert supervision: a multiset of state indices, organized
/// into episodes when the supervision is full trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertObservations {
    states: Vec<u32>,
    episodes: Option<Vec<Vec<u32>>>,
    kind: ObservationKind,
}

#[derive(Serialize, Deserialize)]
struct ExpertObservationsFile {
    kind: ObservationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    states: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    episodes: Option<Vec<Vec<u32>>>,
}

impl ExpertObservations {
    pub fn success_examples(states: Vec<u32>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Dataset("no success examples given".into()));
        }
        Ok(Self {
            states,
            episodes: None,
            kind: ObservationKind::SuccessExamples,
        })
    }

    pub fn full_trajectories(episodes: Vec<Vec<u32>>) -> Result<Self> {
        if episodes.is_empty() || episodes.iter().any(Vec::is_empty) {
            return Err(Error::Dataset("expert episodes must be non-empty".into()));
        }
        let states = episodes.iter().flatten().copied().collect();
        Ok(Self {
            states,
            episodes: Some(episodes),
            kind: ObservationKind::FullTrajectories,
        })
    }

    /// State sequences of a logged dataset, with actions dropped.
    pub fn from_dataset(data: &TrajectoryDataset) -> Result<Self> {
        Self::full_trajectories(
            data.episodes()
                .iter()
                .map(|ep| ep.states.clone())
                .collect(),
        )
    }

    pub fn kind(&self) -> ObservationKind {
        self.kind
    }

    /// Flattened multiset of observed states.
    pub fn states(&self) -> &[u32] {
        &self.states
    }

    pub fn episodes(&self) -> Option<&[Vec<u32>]> {
        self.episodes.as_deref()
    }

    pub fn max_state(&self) -> u32 {
        self.states.iter().copied().max().unwrap_or(0)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ExpertObservationsFile = serde_json::from_str(text)?;
        match file.kind {
            ObservationKind::SuccessExamples => {
                let states = file.states.ok_or_else(|| {
                    Error::Dataset("success_examples requires a states field".into())
                })?;
                Self::success_examples(states)
            }
            ObservationKind::FullTrajectories => {
                let episodes = file.episodes.ok_or_else(|| {
                    Error::Dataset("full_trajectories requires an episodes field".into())
                })?;
                Self::full_trajectories(episodes)
            }
        }
    }

    pub fn to_json_string(&self) -> String {
        let file = match self.kind {
            ObservationKind::SuccessExamples => ExpertObservationsFile {
                kind: self.kind,
                states: Some(self.states.clone()),
                episodes: None,
            },
            ObservationKind::FullTrajectories => ExpertObservationsFile {
                kind: self.kind,
                states: None,
                episodes: self.episodes.clone(),
            },
        };
        serde_json::to_string_pretty(&file).expect("observations serialize")
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

/// Weighting scheme for the expert state distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExpertWeighting {
    /// Plain frequencies over the observed multiset.
    Uniform,
    /// Discount-weighted within each episode; requires full trajectories.
    Discounted(f64),
}

/// Empirical expert state distribution `d^E`.
///
/// Success examples always use plain frequencies (a one-hot vector when a
/// single success state is given). Full trajectories use discounted weights
/// under [`ExpertWeighting::Discounted`], uniform otherwise.
pub fn expert_state_distribution(
    obs: &ExpertObservations,
    num_states: usize,
    weighting: ExpertWeighting,
) -> Result<Array1<f64>> {
    if obs.max_state() as usize >= num_states {
        return Err(Error::Dataset(format!(
            "expert state {} out of bounds (num_states = {num_states})",
            obs.max_state()
        )));
    }
    let mut d = Array1::<f64>::zeros(num_states);
    let mut total = 0.0;
    match (obs.kind(), weighting) {
        (ObservationKind::FullTrajectories, ExpertWeighting::Discounted(gamma)) => {
            if !(gamma > 0.0 && gamma < 1.0) {
                return Err(Error::Dataset(format!(
                    "discount must lie in (0, 1), got {gamma}"
                )));
            }
            let episodes = obs
                .episodes()
                .expect("full trajectories carry episodes");
            for ep in episodes {
                let mut w = 1.0;
                for &s in ep {
                    d[s as usize] += w;
                    total += w;
                    w *= gamma;
                }
            }
        }
        _ => {
            for &s in obs.states() {
                d[s as usize] += 1.0;
                total += 1.0;
            }
        }
    }
    Ok(d / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::compute_occupancy;
    use crate::synth;
    use ndarray::array;
    use rand_chacha::ChaCha8Rng;

    fn chain_mdp() -> TabularMdp {
        // Deterministic 3-cycle under action 0, reverse cycle under action 1.
        let mut t = Array3::zeros((3, 2, 3));
        for s in 0..3 {
            t[[s, 0, (s + 1) % 3]] = 1.0;
            t[[s, 1, (s + 2) % 3]] = 1.0;
        }
        TabularMdp::new(t, array![1.0, 0.0, 0.0], 0.9).unwrap()
    }

    #[test]
    fn deterministic_rollouts_are_identical() {
        let mdp = chain_mdp();
        let policy = TabularPolicy::deterministic(&[0, 0, 0], 2).unwrap();
        let data = collect(&mdp, &policy, 5, 7, 3).unwrap();
        for ep in data.episodes() {
            assert_eq!(ep, &data.episodes()[0]);
        }
        assert_eq!(data.episodes()[0].states, vec![0, 1, 2, 0, 1, 2, 0]);
    }

    #[test]
    fn same_seed_gives_bit_identical_datasets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mdp = synth::random_mdp(4, 3, 0.9, &mut rng);
        let policy = synth::random_policy(4, 3, &mut rng);
        let a = collect(&mdp, &policy, 50, 30, 17).unwrap();
        let b = collect(&mdp, &policy, 50, 30, 17).unwrap();
        assert_eq!(a, b);
        let c = collect(&mdp, &policy, 50, 30, 18).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn collect_rejects_degenerate_sizes() {
        let mdp = chain_mdp();
        let policy = TabularPolicy::uniform(3, 2);
        assert!(collect(&mdp, &policy, 0, 5, 0).is_err());
        assert!(collect(&mdp, &policy, 5, 0, 0).is_err());
    }

    #[test]
    fn mle_recovers_deterministic_mdp_exactly() {
        let mdp = chain_mdp();
        let data = collect(&mdp, &TabularPolicy::uniform(3, 2), 200, 20, 0).unwrap();
        let est = estimate_mdp(&data, 3, 2, 0.9).unwrap();
        for s in 0..3 {
            for a in 0..2 {
                for s2 in 0..3 {
                    assert_eq!(
                        est.transition_prob(s, a, s2),
                        mdp.transition_prob(s, a, s2)
                    );
                }
            }
        }
    }

    #[test]
    fn mle_rows_are_observed_frequencies() {
        let episodes = vec![Episode {
            states: vec![0, 0, 0, 0],
            actions: vec![0, 0, 0, 0],
            next_states: vec![1, 1, 1, 0],
        }];
        let metadata = DatasetMetadata {
            source_env: "test".into(),
            behavior_policy: "test".into(),
            seed: 0,
            num_states: 2,
            num_actions: 1,
            num_episodes: 1,
            horizon: 4,
        };
        let data = TrajectoryDataset::new(episodes, metadata).unwrap();
        let est = estimate_mdp(&data, 2, 1, 0.5).unwrap();
        assert!((est.transition_prob(0, 0, 1) - 0.75).abs() < 1e-12);
        assert!((est.transition_prob(0, 0, 0) - 0.25).abs() < 1e-12);
        // Unvisited row self-loops.
        assert_eq!(est.transition_prob(1, 0, 1), 1.0);
    }

    fn transition_error(a: &TabularMdp, b: &TabularMdp) -> f64 {
        let mut worst = 0.0_f64;
        for s in 0..a.num_states() {
            for ac in 0..a.num_actions() {
                for s2 in 0..a.num_states() {
                    worst = worst
                        .max((a.transition_prob(s, ac, s2) - b.transition_prob(s, ac, s2)).abs());
                }
            }
        }
        worst
    }

    #[test]
    fn mle_error_shrinks_at_root_n_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mdp = synth::random_mdp(3, 2, 0.9, &mut rng);
        let policy = synth::random_policy(3, 2, &mut rng);
        let mut ratios = Vec::new();
        for seed in 0..20 {
            let small = collect(&mdp, &policy, 60, 25, seed).unwrap();
            let large = collect(&mdp, &policy, 240, 25, 1000 + seed).unwrap();
            let e_small = transition_error(&estimate_mdp(&small, 3, 2, 0.9).unwrap(), &mdp);
            let e_large = transition_error(&estimate_mdp(&large, 3, 2, 0.9).unwrap(), &mdp);
            ratios.push(e_large / e_small);
        }
        ratios.sort_by(f64::total_cmp);
        let median = ratios[ratios.len() / 2];
        assert!(
            (0.3..=0.8).contains(&median),
            "4x data gave median error ratio {median}"
        );
    }

    #[test]
    fn mle_error_decreases_across_data_increments() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mdp = synth::random_mdp(3, 2, 0.9, &mut rng);
        let policy = synth::random_policy(3, 2, &mut rng);
        let sizes = [20usize, 200, 2000];
        let mut medians = Vec::new();
        for (i, &n) in sizes.iter().enumerate() {
            let mut errs: Vec<f64> = (0..11)
                .map(|seed| {
                    let data = collect(&mdp, &policy, n, 20, 500 * i as u64 + seed).unwrap();
                    transition_error(&estimate_mdp(&data, 3, 2, 0.9).unwrap(), &mdp)
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            medians.push(errs[errs.len() / 2]);
        }
        assert!(medians[0] > medians[1] && medians[1] > medians[2], "{medians:?}");
    }

    #[test]
    fn occupancy_of_a_self_loop_is_one_hot() {
        let episodes = vec![Episode {
            states: vec![0; 50],
            actions: vec![0; 50],
            next_states: vec![0; 50],
        }];
        let metadata = DatasetMetadata {
            source_env: "test".into(),
            behavior_policy: "test".into(),
            seed: 0,
            num_states: 2,
            num_actions: 2,
            num_episodes: 1,
            horizon: 50,
        };
        let data = TrajectoryDataset::new(episodes, metadata).unwrap();
        let occ = estimate_occupancy(&data, 0.9, 2, 2).unwrap();
        assert!((occ.get(0, 0) - 1.0).abs() < 1e-12);
        // Never-visited pairs stay at zero.
        assert_eq!(occ.get(1, 0), 0.0);
        assert_eq!(occ.get(1, 1), 0.0);
    }

    #[test]
    fn empirical_occupancy_approaches_exact_occupancy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mdp = synth::random_mdp(4, 2, 0.9, &mut rng);
        let policy = synth::random_policy(4, 2, &mut rng);
        let exact = compute_occupancy(&mdp, &policy).unwrap();
        let data = collect(&mdp, &policy, 20_000, default_horizon(0.9), 0).unwrap();
        let est = estimate_occupancy(&data, 0.9, 4, 2).unwrap();
        let err = exact
            .as_array()
            .iter()
            .zip(est.as_array().iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0_f64, f64::max);
        assert!(err <= 0.02, "empirical occupancy error {err}");
    }

    #[test]
    fn expert_distribution_reference_cases() {
        let single = ExpertObservations::success_examples(vec![3]).unwrap();
        let d = expert_state_distribution(&single, 5, ExpertWeighting::Uniform).unwrap();
        assert_eq!(d[3], 1.0);
        assert_eq!(d.sum(), 1.0);

        let mut states = vec![0u32; 150];
        states.extend(vec![1u32; 100]);
        states.extend(vec![2u32; 50]);
        let obs = ExpertObservations::success_examples(states).unwrap();
        let d = expert_state_distribution(&obs, 3, ExpertWeighting::Uniform).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-12);
        assert!((d[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((d[2] - 1.0 / 6.0).abs() < 1e-12);

        let traj = ExpertObservations::full_trajectories(vec![vec![0, 1, 2, 3]]).unwrap();
        let d = expert_state_distribution(&traj, 4, ExpertWeighting::Uniform).unwrap();
        for s in 0..4 {
            assert!((d[s] - 0.25).abs() < 1e-12);
        }
        let d = expert_state_distribution(&traj, 4, ExpertWeighting::Discounted(0.5)).unwrap();
        let z = 1.0 + 0.5 + 0.25 + 0.125;
        assert!((d[0] - 1.0 / z).abs() < 1e-12);
        assert!((d[3] - 0.125 / z).abs() < 1e-12);
    }

    #[test]
    fn jsonl_round_trip() {
        let mdp = chain_mdp();
        let data = collect(&mdp, &TabularPolicy::uniform(3, 2), 10, 5, 9)
            .unwrap()
            .with_source("chain", "uniform");
        let dir = std::env::temp_dir().join("smodice-datasets-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.jsonl");
        data.write_jsonl(&path).unwrap();
        let back = TrajectoryDataset::read_jsonl(&path).unwrap();
        assert_eq!(data, back);
    }

    #[test]
    fn loader_reports_offending_line() {
        let text = "{\"states\":[0],\"actions\":[0],\"next_states\":[1]}\n\
                    {\"states\":[0],\"actions\":[9],\"next_states\":[1]}\n";
        match parse_jsonl(text, 2, 1) {
            Err(Error::DatasetLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected line error, got {other:?}"),
        }
        let ragged = "{\"states\":[0,1],\"actions\":[0],\"next_states\":[1,0]}\n";
        assert!(matches!(
            parse_jsonl(ragged, 2, 1),
            Err(Error::DatasetLine { line: 1, .. })
        ));
        let garbage = "not json\n";
        assert!(matches!(
            parse_jsonl(garbage, 2, 1),
            Err(Error::DatasetLine { line: 1, .. })
        ));
    }

    #[test]
    fn expert_observations_json_round_trip() {
        let obs = ExpertObservations::success_examples(vec![1, 1, 4]).unwrap();
        let back = ExpertObservations::from_json_str(&obs.to_json_string()).unwrap();
        assert_eq!(obs, back);

        let obs = ExpertObservations::full_trajectories(vec![vec![0, 1], vec![2]]).unwrap();
        let back = ExpertObservations::from_json_str(&obs.to_json_string()).unwrap();
        assert_eq!(obs, back);

        assert!(ExpertObservations::from_json_str("{\"kind\":\"success_examples\"}").is_err());
    }
}
