//! f-divergences, their Fenchel conjugates, and the primal weight maps.
//!
//! For convex `f` with `f(1) = 0`, the f-divergence of `p` at `q` is
//! `D_f(p ‖ q) = E_{x~q}[f(p(x)/q(x))]`. The conjugate `f⋆(y) = max_x xy - f(x)`
//! and its derivative recover the primal maximizer: any maximizer satisfies
//! `x⋆ = f⋆'(y)`, which is what turns an optimal dual value function into
//! occupancy importance weights.
//!
//! Only the two divergences the pipeline uses are registered:
//!
//! * χ²: `f(x) = ½(x-1)²`, `f⋆(y) = ½(y+1)² - ½`, `f⋆'(y) = y+1`.
//! * KL: `f(x) = x ln x`. Its conjugate is only ever evaluated in aggregated
//!   log-mean-exp form ([`conjugate_kl_expectation`]), never per sample; the
//!   pointwise conjugate over `x ≥ 0` is `e^{y-1}` and is exposed for the
//!   conjugate-correctness checks.
//!
//! The χ² solver objective drops the `-½` and minimizes `½ E[(adv+1)²]`
//! directly ([`conjugate_chi2`] returns that form): a constant offset moves
//! neither the minimizer nor the weights, and it keeps the objective and
//! divergence estimates in the conventional form.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Registered divergence kinds: the triple (f, f⋆, f⋆') plus evaluators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FDivergence {
    ChiSquared,
    Kl,
}

impl FDivergence {
    /// The generator `f`. `f(0)` is taken as the limit (`½` for χ², `0` for KL).
    pub fn f(self, x: f64) -> f64 {
        match self {
            FDivergence::ChiSquared => 0.5 * (x - 1.0) * (x - 1.0),
            FDivergence::Kl => {
                if x == 0.0 {
                    0.0
                } else {
                    x * x.ln()
                }
            }
        }
    }

    /// Pointwise Fenchel conjugate `f⋆(y) = max_x xy - f(x)`.
    pub fn conjugate(self, y: f64) -> f64 {
        match self {
            FDivergence::ChiSquared => 0.5 * (y + 1.0) * (y + 1.0) - 0.5,
            FDivergence::Kl => (y - 1.0).exp(),
        }
    }

    /// Conjugate derivative `f⋆'(y)`, the primal maximizer at `y`.
    pub fn conjugate_deriv(self, y: f64) -> f64 {
        match self {
            FDivergence::ChiSquared => y + 1.0,
            FDivergence::Kl => (y - 1.0).exp(),
        }
    }
}

impl std::str::FromStr for FDivergence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chi2" | "chi-squared" | "chi_squared" => Ok(FDivergence::ChiSquared),
            "kl" => Ok(FDivergence::Kl),
            other => Err(Error::InvalidDistribution(format!(
                "unknown divergence kind '{other}' (expected chi2 or kl)"
            ))),
        }
    }
}

fn check_distribution(name: &str, p: &Array1<f64>) -> Result<()> {
    let mut sum = 0.0;
    for &x in p.iter() {
        if !(0.0..=1.0 + 1e-12).contains(&x) {
            return Err(Error::InvalidDistribution(format!(
                "{name} contains entry {x}"
            )));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!(
            "{name} sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// `D_f(p ‖ q) = Σ_x q(x) f(p(x)/q(x))` over a shared finite domain.
///
/// Fails with a support-mismatch error naming the offending element when
/// `p(x) > 0` but `q(x) = 0`.
pub fn divergence(kind: FDivergence, p: &Array1<f64>, q: &Array1<f64>) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidDistribution(format!(
            "domain mismatch: |p| = {}, |q| = {}",
            p.len(),
            q.len()
        )));
    }
    check_distribution("p", p)?;
    check_distribution("q", q)?;
    let mut total = 0.0;
    for (index, (&pi, &qi)) in p.iter().zip(q.iter()).enumerate() {
        if qi == 0.0 {
            if pi > 0.0 {
                return Err(Error::SupportMismatch { index, p: pi });
            }
            continue;
        }
        total += qi * kind.f(pi / qi);
    }
    Ok(total)
}

/// χ² conjugate in the objective form, with its derivative:
/// `(½(y+1)², y+1)`. This sits exactly `+½` above the tight conjugate
/// [`FDivergence::conjugate`]; the offset cancels in every gradient.
pub fn conjugate_chi2(y: f64) -> (f64, f64) {
    (
        0.5 * (y + 1.0) * (y + 1.0),
        FDivergence::ChiSquared.conjugate_deriv(y),
    )
}

/// Aggregated KL conjugate `log Σ_i w(i) exp(v(i))`, computed with the
/// max-shift so inputs up to ±700 stay finite.
pub fn conjugate_kl_expectation(values: &Array1<f64>, weights: &Array1<f64>) -> Result<f64> {
    if values.len() != weights.len() {
        return Err(Error::InvalidDistribution(format!(
            "domain mismatch: |values| = {}, |weights| = {}",
            values.len(),
            weights.len()
        )));
    }
    check_distribution("weights", weights)?;
    let shift = values
        .iter()
        .zip(weights.iter())
        .filter(|(_, &w)| w > 0.0)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return Err(Error::InvalidDistribution(
            "weights have empty support".into(),
        ));
    }
    let sum: f64 = values
        .iter()
        .zip(weights.iter())
        .filter(|(_, &w)| w > 0.0)
        .map(|(&v, &w)| w * (v - shift).exp())
        .sum();
    Ok(shift + sum.ln())
}

/// Optimal importance weights `ξ(s,a) = f⋆'(advantage)` under offline
/// weighting `d_O`.
///
/// χ² clamps at zero, `ξ = max(0, adv + 1)`; the clamped vector need not
/// satisfy `Σ d_O ξ = 1`, which callers surface as a diagnostic. KL uses the
/// weighted softmax `ξ = e^{adv} / Σ d_O e^{adv}` so that `Σ d_O ξ = 1`.
pub fn primal_weights(
    kind: FDivergence,
    advantages: &Array1<f64>,
    d_o: &Array1<f64>,
) -> Array1<f64> {
    match kind {
        FDivergence::ChiSquared => advantages.mapv(|adv| (adv + 1.0).max(0.0)),
        FDivergence::Kl => {
            let shift = advantages
                .iter()
                .zip(d_o.iter())
                .filter(|(_, &w)| w > 0.0)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if shift == f64::NEG_INFINITY {
                return Array1::ones(advantages.len());
            }
            let z: f64 = advantages
                .iter()
                .zip(d_o.iter())
                .map(|(&v, &w)| w * (v - shift).exp())
                .sum();
            advantages.mapv(|adv| (adv - shift).exp() / z)
        }
    }
}

/// KL divergence with identical ε-smoothing on both arguments: each vector
/// gets `eps` added to every entry and is renormalized before the exact KL.
/// Oracle and solver evaluation share this one definition.
pub fn smoothed_kl(p: &Array1<f64>, q: &Array1<f64>, eps: f64) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let zp: f64 = p.sum() + eps * p.len() as f64;
    let zq: f64 = q.sum() + eps * q.len() as f64;
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q.iter()) {
        let ps = (pi + eps) / zp;
        let qs = (qi + eps) / zq;
        total += ps * (ps / qs).ln();
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use ndarray::array;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Grid-search oracle for `f⋆(y) = max_x xy - f(x)`: three zoom passes
    /// over a domain that covers the maximizer for |y| ≤ 5.
    fn conjugate_by_grid_search(kind: FDivergence, y: f64) -> (f64, f64) {
        let (mut lo, mut hi) = match kind {
            FDivergence::ChiSquared => (-12.0, 12.0),
            FDivergence::Kl => (1e-9, 60.0),
        };
        let mut best_x = lo;
        let mut best = f64::NEG_INFINITY;
        for _ in 0..3 {
            let n = 4000;
            for i in 0..=n {
                let x = lo + (hi - lo) * i as f64 / n as f64;
                let val = x * y - kind.f(x);
                if val > best {
                    best = val;
                    best_x = x;
                }
            }
            let step = (hi - lo) / n as f64;
            lo = (best_x - 2.0 * step).max(match kind {
                FDivergence::Kl => 1e-12,
                FDivergence::ChiSquared => f64::NEG_INFINITY,
            });
            hi = best_x + 2.0 * step;
        }
        (best, best_x)
    }

    #[test]
    fn divergence_is_zero_at_identical_inputs() {
        let p = array![0.3, 0.7];
        for kind in [FDivergence::ChiSquared, FDivergence::Kl] {
            assert!(divergence(kind, &p, &p).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn chi2_divergence_matches_direct_arithmetic() {
        let p = array![0.5, 0.5];
        let q = array![0.25, 0.75];
        // 0.25·½·1² + 0.75·½·(1/3)²
        let expected = 0.25 * 0.5 + 0.75 * 0.5 / 9.0;
        let got = divergence(FDivergence::ChiSquared, &p, &q).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.166_666_7).abs() < 1e-6);
    }

    #[test]
    fn divergence_nonnegative_and_zero_only_at_equality() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let n = rng.random_range(2..6);
            let p = synth::random_distribution(n, &mut rng);
            let q = synth::random_distribution(n, &mut rng);
            for kind in [FDivergence::ChiSquared, FDivergence::Kl] {
                assert!(divergence(kind, &p, &q).unwrap() >= 0.0);
                assert!(divergence(kind, &p, &p).unwrap().abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn divergence_reports_support_mismatch() {
        let p = array![0.5, 0.5];
        let q = array![1.0, 0.0];
        match divergence(FDivergence::Kl, &p, &q) {
            Err(Error::SupportMismatch { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected support mismatch, got {other:?}"),
        }
    }

    #[test]
    fn chi2_conjugate_reference_points() {
        assert_eq!(conjugate_chi2(0.0), (0.5, 1.0));
        assert_eq!(conjugate_chi2(-1.0), (0.0, 0.0));
        let (v, d) = conjugate_chi2(2.0);
        assert!((v - 4.5).abs() < 1e-12 && (d - 3.0).abs() < 1e-12);
        // The objective form sits exactly ½ above the tight conjugate, which
        // is what the grid search produces.
        let (grid_v, grid_x) = conjugate_by_grid_search(FDivergence::ChiSquared, 2.0);
        assert!((v - 0.5 - grid_v).abs() < 1e-6);
        assert!((d - grid_x).abs() < 1e-3);
    }

    #[test]
    fn conjugates_match_grid_search_maxima() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let y = rng.random_range(-5.0..5.0);
            for kind in [FDivergence::ChiSquared, FDivergence::Kl] {
                let (grid_val, grid_argmax) = conjugate_by_grid_search(kind, y);
                assert!(
                    (kind.conjugate(y) - grid_val).abs() <= 1e-4,
                    "{kind:?} conjugate at {y}: {} vs grid {grid_val}",
                    kind.conjugate(y)
                );
                assert!(
                    (kind.conjugate_deriv(y) - grid_argmax).abs() <= 1e-3,
                    "{kind:?} maximizer at {y}: {} vs grid {grid_argmax}",
                    kind.conjugate_deriv(y)
                );
            }
        }
    }

    #[test]
    fn conjugate_derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = 1e-5;
        for _ in 0..100 {
            let y = rng.random_range(-5.0..5.0);
            for kind in [FDivergence::ChiSquared, FDivergence::Kl] {
                let fd = (kind.conjugate(y + h) - kind.conjugate(y - h)) / (2.0 * h);
                assert!((kind.conjugate_deriv(y) - fd).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn conjugate_dominance_on_ratio_grid() {
        // f⋆(y) ≥ xy - f(x) over the ratio domain x ∈ [1e-6, 10].
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        for _ in 0..20 {
            let y = rng.random_range(-5.0..5.0);
            for kind in [FDivergence::ChiSquared, FDivergence::Kl] {
                let fc = kind.conjugate(y);
                for i in 0..=n {
                    let x = 1e-6 + (10.0 - 1e-6) * i as f64 / n as f64;
                    debug_assert!(fc + 1e-9 >= x * y - kind.f(x));
                    if fc + 1e-9 < x * y - kind.f(x) {
                        panic!("dominance violated for {kind:?} at y={y}, x={x}");
                    }
                }
            }
        }
    }

    #[test]
    fn kl_expectation_reference_points() {
        let c = 3.25;
        let v = array![c, c, c];
        let w = array![0.2, 0.5, 0.3];
        assert!((conjugate_kl_expectation(&v, &w).unwrap() - c).abs() < 1e-12);

        let v = array![0.0, 3.0_f64.ln()];
        let w = array![0.5, 0.5];
        let got = conjugate_kl_expectation(&v, &w).unwrap();
        assert!((got - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kl_expectation_survives_extreme_values() {
        let v = array![700.0, -700.0, -700.0];
        let w = array![0.25, 0.5, 0.25];
        let got = conjugate_kl_expectation(&v, &w).unwrap();
        assert!(got.is_finite());
        // exp(-1400) underflows to zero, so the shifted sum is exactly w_max.
        assert!((got - (700.0 + 0.25_f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn chi2_weights_clamp_at_zero() {
        let adv = array![0.0, 0.0, 0.0];
        let d_o = array![0.3, 0.3, 0.4];
        let w = primal_weights(FDivergence::ChiSquared, &adv, &d_o);
        assert!(w.iter().all(|&x| (x - 1.0).abs() < 1e-15));

        let adv = array![-2.0, 0.5];
        let w = primal_weights(FDivergence::ChiSquared, &adv, &array![0.5, 0.5]);
        assert_eq!(w[0], 0.0);
        assert!((w[1] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn kl_weights_are_normalized_under_d_o() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(2..8);
            let adv = Array1::from_iter((0..n).map(|_| rng.random_range(-4.0..4.0)));
            let d_o = synth::random_distribution(n, &mut rng);
            let w = primal_weights(FDivergence::Kl, &adv, &d_o);
            let mass: f64 = w.iter().zip(d_o.iter()).map(|(x, y)| x * y).sum();
            assert!((mass - 1.0).abs() <= 1e-10, "weight mass {mass}");
        }
        // Constant advantages give ξ ≡ 1.
        let adv = array![2.0, 2.0];
        let w = primal_weights(FDivergence::Kl, &adv, &array![0.25, 0.75]);
        assert!(w.iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn smoothed_kl_is_zero_at_equality_and_finite_at_disjoint_support() {
        let p = array![0.5, 0.5, 0.0];
        assert!(smoothed_kl(&p, &p, 1e-8).abs() < 1e-15);
        let q = array![0.0, 0.0, 1.0];
        assert!(smoothed_kl(&p, &q, 1e-8).is_finite());
    }
}
