//! Oracles and experiment drivers: brute-force policy enumeration, the
//! finite-sample convergence study, and policy renderings.
//!
//! The brute-force oracle is deliberately a different computational route
//! from the solver pipeline: it evaluates each deterministic policy through
//! the state-level flow system `(I - γ P_πᵀ) d = (1-γ) μ0`, not the
//! state-action system the solvers rest on, so agreement between the two is
//! meaningful.

use ndarray::Array1;
use serde::Serialize;

use crate::datasets::{collect, estimate_mdp, Episode, TrajectoryDataset};
use crate::discriminator::reward_from_counts;
use crate::envs::GridSpec;
use crate::error::{Error, Result};
use crate::fdiv::smoothed_kl;
use crate::linalg;
use crate::mdp::{OccupancyMeasure, TabularMdp, TabularPolicy};
use crate::solver::{chi2_normal_matrix, solve_closed_form_chi2, KL_SMOOTHING_EPS, PINV_REL_TOL};

/// Hard cap on `|A|^|S|` for exhaustive enumeration.
pub const BRUTE_FORCE_LIMIT: f64 = 1e6;

/// Exhaustive search outcome, including the number of optima tied within
/// `tie_tol` (symmetric tasks typically admit several).
#[derive(Debug, Clone)]
pub struct BruteForceResult {
    pub policy: TabularPolicy,
    pub divergence: f64,
    pub num_optima: usize,
}

/// Enumerates all `|A|^|S|` deterministic policies, computes each exact
/// state occupancy, and returns the minimizer of the ε-smoothed
/// `D_KL(d^π(s) ‖ d_E)` together with its value.
pub fn brute_force_best_policy(
    mdp: &TabularMdp,
    d_e: &Array1<f64>,
) -> Result<(TabularPolicy, f64)> {
    let result = brute_force_with_ties(mdp, d_e, 1e-12)?;
    Ok((result.policy, result.divergence))
}

pub fn brute_force_with_ties(
    mdp: &TabularMdp,
    d_e: &Array1<f64>,
    tie_tol: f64,
) -> Result<BruteForceResult> {
    let s = mdp.num_states();
    let a = mdp.num_actions();
    if d_e.len() != s {
        return Err(Error::InvalidDistribution(format!(
            "expert distribution over {} states, MDP has {s}",
            d_e.len()
        )));
    }
    let count = (a as f64).powi(s as i32);
    if count > BRUTE_FORCE_LIMIT {
        return Err(Error::InstanceTooLarge {
            count,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let total = count as usize;
    let gamma = mdp.discount();

    let mut actions = vec![0usize; s];
    let mut divergences = Vec::with_capacity(total);
    let mut system = nalgebra::DMatrix::<f64>::zeros(s, s);
    let mut rhs = nalgebra::DVector::<f64>::zeros(s);
    for idx in 0..total {
        // Mixed-radix decode of the policy index.
        if idx > 0 {
            let mut digit = 0;
            loop {
                actions[digit] += 1;
                if actions[digit] < a {
                    break;
                }
                actions[digit] = 0;
                digit += 1;
            }
        }
        // (I - γ P_πᵀ) d = (1-γ) μ0 over states only.
        for to in 0..s {
            for from in 0..s {
                let p = mdp.transition_prob(from, actions[from], to);
                system[(to, from)] = if to == from { 1.0 - gamma * p } else { -gamma * p };
            }
            rhs[to] = (1.0 - gamma) * mdp.initial_dist()[to];
        }
        let occupancy = system
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or(Error::SingularSystem {
                residual: f64::INFINITY,
                limit: 0.0,
            })?;
        let d_pi = Array1::from_iter(occupancy.iter().map(|&x| x.max(0.0)));
        divergences.push(smoothed_kl(&d_pi, d_e, KL_SMOOTHING_EPS));
    }

    let (best_idx, &best) = divergences
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("at least one policy");
    let num_optima = divergences.iter().filter(|&&v| v <= best + tie_tol).count();

    let mut best_actions = vec![0usize; s];
    let mut rem = best_idx;
    for item in best_actions.iter_mut() {
        *item = rem % a;
        rem /= a;
    }
    Ok(BruteForceResult {
        policy: TabularPolicy::deterministic(&best_actions, a)?,
        divergence: best,
        num_optima,
    })
}

/// Outcome of the finite-sample convergence study: per-size error medians
/// for `‖V⋆ - V̂‖∞`, the fitted log-log slope, and the measured
/// `‖(AᵀDA)⁻¹‖∞` against its assumed bound `1/((1-γ)² D_min)` (reported,
/// never asserted).
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub sample_sizes: Vec<usize>,
    pub median_errors: Vec<f64>,
    pub errors_per_size: Vec<Vec<f64>>,
    pub slope: f64,
    pub inv_norm_measured: f64,
    pub inv_norm_bound: f64,
    pub inv_norm_assumption_held: bool,
}

impl std::fmt::Display for ConvergenceReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:>10}  {:>14}", "n", "median ‖V*-V̂‖∞")?;
        for (n, err) in self.sample_sizes.iter().zip(self.median_errors.iter()) {
            writeln!(f, "{n:>10}  {err:>14.6e}")?;
        }
        writeln!(f, "log-log slope: {:.4}", self.slope)?;
        writeln!(
            f,
            "‖(AᵀDA)⁻¹‖∞ = {:.4e} (assumed bound {:.4e}, held: {})",
            self.inv_norm_measured, self.inv_norm_bound, self.inv_norm_assumption_held
        )
    }
}

fn truncate_to_transitions(data: TrajectoryDataset, n: usize) -> Result<TrajectoryDataset> {
    let mut episodes: Vec<Episode> = Vec::new();
    let mut kept = 0;
    for ep in data.episodes() {
        if kept >= n {
            break;
        }
        let take = (n - kept).min(ep.len());
        episodes.push(Episode {
            states: ep.states[..take].to_vec(),
            actions: ep.actions[..take].to_vec(),
            next_states: ep.next_states[..take].to_vec(),
        });
        kept += take;
    }
    TrajectoryDataset::new(episodes, data.metadata().clone())
}

/// Runs the closed-form solver on maximum-likelihood transition estimates of
/// increasing sample size and measures convergence to the true-transition
/// solution.
///
/// Only the transition estimate varies with the data: the offline occupancy,
/// reward, and initial distribution are held at their exact values, so the
/// measured error isolates `T̂ → T`. Sample sizes count transitions, not
/// episodes.
pub fn finite_sample_study(
    mdp_true: &TabularMdp,
    behavior: &TabularPolicy,
    d_e: &Array1<f64>,
    sample_sizes: &[usize],
    seeds_per_size: usize,
) -> Result<ConvergenceReport> {
    if sample_sizes.is_empty() || sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Dataset(
            "sample sizes must be strictly increasing".into(),
        ));
    }
    if seeds_per_size == 0 {
        return Err(Error::Dataset("seeds_per_size must be at least 1".into()));
    }
    let gamma = mdp_true.discount();
    let d_o = crate::mdp::compute_occupancy(mdp_true, behavior)?;
    let reward = reward_from_counts(d_e, &d_o.state_marginal(), 1e-6)?;
    let v_true = solve_closed_form_chi2(mdp_true, &d_o, &reward)?.v_star;

    let horizon = crate::datasets::default_horizon(gamma);
    let mut errors_per_size = Vec::with_capacity(sample_sizes.len());
    for (size_idx, &n) in sample_sizes.iter().enumerate() {
        let mut errors = Vec::with_capacity(seeds_per_size);
        for seed in 0..seeds_per_size {
            let episodes = n.div_ceil(horizon);
            let data = collect(
                mdp_true,
                behavior,
                episodes,
                horizon,
                (size_idx as u64) << 32 | seed as u64,
            )?;
            let data = truncate_to_transitions(data, n)?;
            let estimated = estimate_mdp(
                &data,
                mdp_true.num_states(),
                mdp_true.num_actions(),
                gamma,
            )?;
            // Theorem-style comparison: swap in T̂, keep μ0 exact.
            let mdp_hat = estimated.with_initial_dist(mdp_true.initial_dist().clone())?;
            let v_hat = solve_closed_form_chi2(&mdp_hat, &d_o, &reward)?.v_star;
            let err = v_true
                .iter()
                .zip(v_hat.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            errors.push(err);
        }
        errors.sort_by(f64::total_cmp);
        errors_per_size.push(errors);
    }
    let median_errors: Vec<f64> = errors_per_size.iter().map(|e| e[e.len() / 2]).collect();
    let xs: Vec<f64> = sample_sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = median_errors.iter().map(|&e| e.max(1e-300).ln()).collect();
    let slope = fit_slope(&xs, &ys);

    let h = chi2_normal_matrix(mdp_true, &d_o);
    let inv_norm_measured = linalg::pinv_inf_norm(&h, PINV_REL_TOL);
    let d_min = d_o.as_array().iter().copied().fold(f64::INFINITY, f64::min);
    let inv_norm_bound = if d_min > 0.0 {
        1.0 / ((1.0 - gamma) * (1.0 - gamma) * d_min)
    } else {
        f64::INFINITY
    };
    Ok(ConvergenceReport {
        sample_sizes: sample_sizes.to_vec(),
        median_errors,
        errors_per_size,
        slope,
        inv_norm_measured,
        inv_norm_bound,
        inv_norm_assumption_held: inv_norm_measured <= inv_norm_bound,
    })
}

/// Least-squares slope of `y` on `x`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys.iter()).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

const SHADE_RAMP: &[char] = &[' ', '.', ':', '-', '=', '+', '*', '%', '@'];

fn shade(value: f64, max: f64) -> char {
    if max <= 0.0 {
        return ' ';
    }
    let level = ((value / max) * (SHADE_RAMP.len() - 1) as f64).round() as usize;
    SHADE_RAMP[level.min(SHADE_RAMP.len() - 1)]
}

/// ASCII rendering: one glyph per cell showing the argmax action (ties break
/// to the lowest action index), `#` for walls, `*` for the goal, plus an
/// occupancy shade column when an occupancy is supplied. Byte-identical for
/// identical inputs.
pub fn render_policy_grid(
    spec: &GridSpec,
    policy: &TabularPolicy,
    occupancy: Option<&OccupancyMeasure>,
) -> Result<String> {
    spec.validate()?;
    let cells = spec.cell_states();
    if policy.num_states() != cells.len() || policy.num_actions() != spec.move_set.num_actions() {
        return Err(Error::InvalidPolicy(format!(
            "policy shape {}x{} does not fit a grid with {} states and {} actions",
            policy.num_states(),
            policy.num_actions(),
            cells.len(),
            spec.move_set.num_actions()
        )));
    }
    if let Some(occ) = occupancy {
        if occ.num_states() != cells.len() {
            return Err(Error::InvalidDistribution(
                "occupancy does not match the grid".into(),
            ));
        }
    }
    let argmax = policy.argmax_actions();
    let marginal = occupancy.map(|o| o.state_marginal());
    let max_mass = marginal
        .as_ref()
        .map(|m| m.iter().copied().fold(0.0_f64, f64::max))
        .unwrap_or(0.0);

    let mut out = String::new();
    let mut state_of = std::collections::HashMap::new();
    for (i, &c) in cells.iter().enumerate() {
        state_of.insert(c, i);
    }
    for y in 0..spec.height {
        for x in 0..spec.width {
            let cell = (x, y);
            if spec.walls.contains(&cell) {
                out.push('#');
            } else {
                let s = state_of[&cell];
                if spec.goal == Some(cell) {
                    out.push('*');
                } else {
                    out.push(spec.move_set.glyph(argmax[s]));
                }
                if let Some(m) = &marginal {
                    out.push(shade(m[s], max_mass));
                    continue;
                }
            }
            if marginal.is_some() {
                out.push(' ');
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// SVG rendering with one arrow per cell and occupancy-shaded cell fills.
pub fn render_policy_svg(
    spec: &GridSpec,
    policy: &TabularPolicy,
    occupancy: Option<&OccupancyMeasure>,
) -> Result<String> {
    spec.validate()?;
    let cells = spec.cell_states();
    if policy.num_states() != cells.len() || policy.num_actions() != spec.move_set.num_actions() {
        return Err(Error::InvalidPolicy("policy does not fit the grid".into()));
    }
    let argmax = policy.argmax_actions();
    let marginal = occupancy.map(|o| o.state_marginal());
    let max_mass = marginal
        .as_ref()
        .map(|m| m.iter().copied().fold(0.0_f64, f64::max))
        .unwrap_or(0.0);
    let cell = 32.0;
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" \
         viewBox=\"0 0 {} {}\">\n",
        spec.width as f64 * cell,
        spec.height as f64 * cell,
        spec.width as f64 * cell,
        spec.height as f64 * cell
    ));
    let mut state_of = std::collections::HashMap::new();
    for (i, &c) in cells.iter().enumerate() {
        state_of.insert(c, i);
    }
    for y in 0..spec.height {
        for x in 0..spec.width {
            let x0 = x as f64 * cell;
            let y0 = y as f64 * cell;
            if spec.walls.contains(&(x, y)) {
                out.push_str(&format!(
                    "<rect x=\"{x0:.4}\" y=\"{y0:.4}\" width=\"{cell:.4}\" \
                     height=\"{cell:.4}\" fill=\"#333333\"/>\n"
                ));
                continue;
            }
            let s = state_of[&(x, y)];
            let opacity = marginal
                .as_ref()
                .map(|m| if max_mass > 0.0 { m[s] / max_mass } else { 0.0 })
                .unwrap_or(0.0);
            out.push_str(&format!(
                "<rect x=\"{x0:.4}\" y=\"{y0:.4}\" width=\"{cell:.4}\" height=\"{cell:.4}\" \
                 fill=\"#2b6cb0\" fill-opacity=\"{opacity:.4}\" stroke=\"#999999\"/>\n"
            ));
            if spec.goal == Some((x, y)) {
                out.push_str(&format!(
                    "<circle cx=\"{:.4}\" cy=\"{:.4}\" r=\"{:.4}\" fill=\"#38a169\"/>\n",
                    x0 + cell / 2.0,
                    y0 + cell / 2.0,
                    cell / 4.0
                ));
                continue;
            }
            let (dx, dy) = spec.move_set.offsets()[argmax[s]];
            let cx = x0 + cell / 2.0;
            let cy = y0 + cell / 2.0;
            let scale = cell / 3.0;
            let norm = ((dx * dx + dy * dy) as f64).sqrt();
            let (ux, uy) = (dx as f64 / norm, dy as f64 / norm);
            out.push_str(&format!(
                "<line x1=\"{:.4}\" y1=\"{:.4}\" x2=\"{:.4}\" y2=\"{:.4}\" \
                 stroke=\"#1a202c\" stroke-width=\"2\"/>\n",
                cx - ux * scale,
                cy - uy * scale,
                cx + ux * scale,
                cy + uy * scale
            ));
            out.push_str(&format!(
                "<circle cx=\"{:.4}\" cy=\"{:.4}\" r=\"2.5\" fill=\"#1a202c\"/>\n",
                cx + ux * scale,
                cy + uy * scale
            ));
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_mdp, diagonal_expert_policy, mismatched_pair, GridSpec, MoveSet};
    use crate::mdp::compute_occupancy;
    use crate::solver::evaluate_solution;
    use crate::synth;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_state_brute_force() {
        let mut t = ndarray::Array3::zeros((1, 1, 1));
        t[[0, 0, 0]] = 1.0;
        let mdp = TabularMdp::new(t, array![1.0], 0.9).unwrap();
        let (policy, kl) = brute_force_best_policy(&mdp, &array![1.0]).unwrap();
        assert_eq!(policy.prob(0, 0), 1.0);
        assert!(kl.abs() <= 1e-12);
    }

    #[test]
    fn rejects_oversized_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mdp = synth::random_mdp(21, 2, 0.9, &mut rng);
        let d_e = synth::random_distribution(21, &mut rng);
        match brute_force_best_policy(&mdp, &d_e) {
            Err(Error::InstanceTooLarge { count, .. }) => {
                assert!((count - 2f64.powi(21)).abs() < 1.0);
            }
            other => panic!("expected instance-too-large, got {other:?}"),
        }
    }

    #[test]
    fn oracle_divergence_matches_evaluate_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mdp = synth::random_mdp(4, 3, 0.85, &mut rng);
        let d_e = synth::random_distribution(4, &mut rng);
        let (policy, kl) = brute_force_best_policy(&mdp, &d_e).unwrap();
        let solution = crate::solver::SmodiceSolution {
            v_star: Array1::zeros(4),
            xi_star: Array1::ones(12),
            policy,
            objective_value: 0.0,
            divergence_estimate: 0.0,
            diagnostics: Default::default(),
        };
        let metrics = evaluate_solution(&mdp, &solution, &d_e).unwrap();
        assert!(
            (metrics["state_kl_to_expert"] - kl).abs() <= 1e-12,
            "routes disagree: {} vs {kl}",
            metrics["state_kl_to_expert"]
        );
    }

    #[test]
    fn symmetric_grid_has_tied_optima() {
        let (imitator, expert) = mismatched_pair(2, 2, (0, 0), (1, 1));
        let gamma = 0.9;
        let expert_occ =
            compute_occupancy(&build_mdp(&expert, gamma).unwrap(), &diagonal_expert_policy(&expert).unwrap())
                .unwrap();
        let d_e = expert_occ.state_marginal();
        let mdp = build_mdp(&imitator, gamma).unwrap();
        let result = brute_force_with_ties(&mdp, &d_e, 1e-12).unwrap();
        assert!(
            result.num_optima >= 2,
            "expected mirror-path ties, got {}",
            result.num_optima
        );
    }

    #[test]
    fn study_errors_shrink_with_more_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mdp = synth::random_mdp(2, 2, 0.8, &mut rng);
        let behavior = synth::random_policy(2, 2, &mut rng);
        let d_e = synth::random_distribution(2, &mut rng);
        let sizes = [100, 400, 1600, 6400, 25_600];
        let report = finite_sample_study(&mdp, &behavior, &d_e, &sizes, 9).unwrap();
        // Non-increasing medians, allowing a single inversion.
        let inversions = report
            .median_errors
            .windows(2)
            .filter(|w| w[1] > w[0])
            .count();
        assert!(inversions <= 1, "medians {:?}", report.median_errors);
        assert!(report.slope < 0.0, "slope {}", report.slope);
        let large = report.median_errors.last().unwrap();
        let small = report.median_errors.first().unwrap();
        assert!(large < small);
    }

    #[test]
    fn study_consistency_at_large_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = synth::random_mdp(2, 2, 0.8, &mut rng);
        let behavior = synth::random_policy(2, 2, &mut rng);
        let d_e = synth::random_distribution(2, &mut rng);
        let report = finite_sample_study(&mdp, &behavior, &d_e, &[500_000, 1_000_000], 3).unwrap();
        assert!(
            report.median_errors[1] <= 1e-2,
            "error at n=1e6 is {}",
            report.median_errors[1]
        );
    }

    #[test]
    fn render_is_deterministic_and_shows_ties() {
        let spec = GridSpec::open(3, 2, MoveSet::Cardinal4, (0, 0), None);
        let policy = TabularPolicy::uniform(6, 4);
        let a = render_policy_grid(&spec, &policy, None).unwrap();
        let b = render_policy_grid(&spec, &policy, None).unwrap();
        assert_eq!(a, b);
        // Uniform rows tie-break to action 0, the up arrow.
        assert_eq!(a, "↑↑↑\n↑↑↑\n");
    }

    #[test]
    fn render_shows_the_diagonal_expert_chain() {
        let spec = GridSpec::open(3, 3, MoveSet::Diagonal8, (0, 0), Some((2, 2)));
        let policy = diagonal_expert_policy(&spec).unwrap();
        let text = render_policy_grid(&spec, &policy, None).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        // Down-right arrows along the diagonal, goal marker at the end.
        assert_eq!(rows[0].chars().next().unwrap(), '↘');
        assert_eq!(rows[1].chars().nth(1).unwrap(), '↘');
        assert_eq!(rows[2].chars().nth(2).unwrap(), '*');

        let svg = render_policy_svg(&spec, &policy, None).unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg, render_policy_svg(&spec, &policy, None).unwrap());
    }

    #[test]
    fn render_occupancy_shading_marks_the_heavy_cell() {
        let spec = GridSpec::open(2, 1, MoveSet::Cardinal4, (0, 0), Some((1, 0)));
        let mdp = build_mdp(&spec, 0.9).unwrap();
        let policy = TabularPolicy::deterministic(&[1, 0], 4).unwrap();
        let occ = compute_occupancy(&mdp, &policy).unwrap();
        let text = render_policy_grid(&spec, &policy, Some(&occ)).unwrap();
        // Goal holds ~0.9 of the mass; its shade is the ramp maximum.
        assert!(text.contains('@'));
    }
}
