//! Fairness metrics, exact binomial fairness, sufficiency bounds and the Beta
//! limit law of the ML-PoS urn.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::engine::{ConvergenceTime, FairnessReport};
use crate::error::{domain, Error, Result};
use crate::model::FairArea;

/// `(mean - a, standard error)` of a set of reward fractions.
pub fn expectational_gap(samples: &[f64], a: f64) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let (mean, stderr) = mean_stderr(samples);
    Ok((mean - a, stderr))
}

pub(crate) fn mean_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Fraction of samples strictly outside the closed fair area `[(1-ε)a, (1+ε)a]`.
pub fn unfair_probability(samples: &[f64], a: f64, epsilon: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let area = FairArea::new(a, epsilon);
    samples.iter().filter(|&&l| !area.contains(l)).count() as f64 / samples.len() as f64
}

/// Nearest-rank percentile of an ascending slice: the element of rank
/// `ceil(p/100 * N)` (1-based).
pub fn percentile_nearest_rank(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Kolmogorov–Smirnov distance between the empirical distribution of `samples`
/// and a continuous CDF.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        // advance over ties so the empirical CDF jumps once per distinct value
        let x = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == x {
            j += 1;
        }
        let f = cdf(x);
        d = d
            .max((f - i as f64 / n).abs())
            .max((j as f64 / n - f).abs());
        i = j;
    }
    d
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Integer range of win counts `k` with `k / n` in the closed fair area.
pub(crate) fn fair_count_range(n: u64, a: f64, epsilon: f64) -> Option<(u64, u64)> {
    let area = FairArea::new(a, epsilon);
    let lo = n as f64 * area.lo;
    let hi = n as f64 * area.hi;
    let tol = crate::model::FAIR_AREA_REL_TOL;
    let kmin = (lo - tol * lo.abs()).ceil().max(0.0);
    let kmax = (hi + tol * hi.abs()).floor().min(n as f64);
    (kmin <= kmax).then_some((kmin as u64, kmax as u64))
}

/// Exact PoW fair probability `Pr[(1-ε)a <= K/n <= (1+ε)a]` for `K ~ Bin(n, a)`,
/// summed in log space.
pub fn pow_fairness_exact(n: u64, a: f64, epsilon: f64) -> Result<f64> {
    if n == 0 {
        return Err(domain("n", 0.0, "[1, inf)"));
    }
    if !(a > 0.0 && a < 1.0) {
        return Err(domain("a", a, "(0, 1)"));
    }
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(domain("epsilon", epsilon, "[0, inf)"));
    }
    let Some((kmin, kmax)) = fair_count_range(n, a, epsilon) else {
        return Ok(0.0);
    };
    if kmin == 0 && kmax == n {
        return Ok(1.0);
    }
    let (ln_a, ln_b) = (a.ln(), (-a).ln_1p());
    let pmf = |k: u64| (ln_choose(n, k) + k as f64 * ln_a + (n - k) as f64 * ln_b).exp();
    let inside: f64 = (kmin..=kmax).map(pmf).sum();
    let outside: f64 = (0..kmin).chain(kmax + 1..=n).map(pmf).sum();
    // the smaller sum carries the smaller absolute rounding error
    let fair = if outside < inside {
        1.0 - outside
    } else {
        inside
    };
    Ok(fair.clamp(0.0, 1.0))
}

/// Hoeffding lower bound `1 - 2 exp(-2 n a² ε²)` on the PoW fair probability.
pub fn hoeffding_lower_bound(n: u64, a: f64, epsilon: f64) -> f64 {
    1.0 - 2.0 * (-2.0 * n as f64 * a * a * epsilon * epsilon).exp()
}

/// Verdict of a sufficiency bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub satisfied: bool,
    pub lhs: f64,
    pub rhs: f64,
    /// Smallest horizon at which the bound holds; `None` when no horizon suffices.
    pub minimal_n: Option<u64>,
}

fn check_fairness_args(a: f64, epsilon: f64, delta: f64) -> Result<()> {
    if !(a > 0.0 && a < 1.0) {
        return Err(domain("a", a, "(0, 1)"));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(domain("epsilon", epsilon, "(0, inf)"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(domain("delta", delta, "(0, 1)"));
    }
    Ok(())
}

fn inverse_horizon(n: Option<u64>) -> Result<f64> {
    match n {
        Some(0) => Err(domain("n", 0.0, "[1, inf)")),
        Some(n) => Ok(1.0 / n as f64),
        None => Ok(0.0),
    }
}

/// Right-hand side shared by all three bounds: `2 a² ε² / ln(2/δ)`.
pub fn robust_rhs(a: f64, epsilon: f64, delta: f64) -> Result<f64> {
    check_fairness_args(a, epsilon, delta)?;
    Ok(2.0 * a * a * epsilon * epsilon / (2.0 / delta).ln())
}

/// Smallest `n` with `n >= ln(2/δ) / (2 a² ε²)`; PoW is `(ε, δ)`-fair from there on.
pub fn pow_bound_n(a: f64, epsilon: f64, delta: f64) -> Result<u64> {
    check_fairness_args(a, epsilon, delta)?;
    Ok(((2.0 / delta).ln() / (2.0 * a * a * epsilon * epsilon)).ceil() as u64)
}

/// PoW bound at horizon `n` (`None` means `n → ∞`), reported as `1/n <= rhs`.
pub fn pow_bound_check(n: Option<u64>, a: f64, epsilon: f64, delta: f64) -> Result<BoundResult> {
    let minimal_n = pow_bound_n(a, epsilon, delta)?;
    let lhs = inverse_horizon(n)?;
    Ok(BoundResult {
        satisfied: n.map_or(true, |n| n >= minimal_n),
        lhs,
        rhs: robust_rhs(a, epsilon, delta)?,
        minimal_n: Some(minimal_n),
    })
}

/// Smallest `n` with `1/n <= slack`, or `None` when `slack <= 0`.
fn minimal_horizon(slack: f64) -> Option<u64> {
    if slack <= 0.0 {
        None
    } else if slack.is_infinite() {
        Some(1)
    } else {
        Some(((1.0 / slack).ceil() as u64).max(1))
    }
}

/// ML-PoS sufficiency check `1/n + w <= 2 a² ε² / ln(2/δ)`.
pub fn mlpos_bound_check(
    n: Option<u64>,
    w: f64,
    a: f64,
    epsilon: f64,
    delta: f64,
) -> Result<BoundResult> {
    if !(w >= 0.0 && w.is_finite()) {
        return Err(domain("w", w, "[0, inf)"));
    }
    let rhs = robust_rhs(a, epsilon, delta)?;
    let lhs = inverse_horizon(n)? + w;
    Ok(BoundResult {
        satisfied: lhs <= rhs,
        lhs,
        rhs,
        minimal_n: minimal_horizon(rhs - w),
    })
}

/// C-PoS sufficiency check `w² (1/n + w + v) / ((w + v)² P) <= 2 a² ε² / ln(2/δ)`.
///
/// The left side is evaluated as `(w / (w + v))² (1/n + w + v) / P` so that
/// `v = 0, P = 1` reproduces the ML-PoS left side bit for bit.
pub fn cpos_bound_check(
    n: Option<u64>,
    w: f64,
    v: f64,
    shards: u32,
    a: f64,
    epsilon: f64,
    delta: f64,
) -> Result<BoundResult> {
    if !(w >= 0.0 && w.is_finite()) {
        return Err(domain("w", w, "[0, inf)"));
    }
    if !(v >= 0.0 && v.is_finite()) {
        return Err(domain("v", v, "[0, inf)"));
    }
    if w + v <= 0.0 {
        return Err(domain("w + v", w + v, "(0, inf)"));
    }
    if shards == 0 {
        return Err(domain("P", 0.0, "[1, inf)"));
    }
    let rhs = robust_rhs(a, epsilon, delta)?;
    let proposer_weight = (w / (w + v)).powi(2);
    let p = shards as f64;
    let lhs = proposer_weight * (inverse_horizon(n)? + w + v) / p;
    // solve proposer_weight (1/n + w + v) / P <= rhs for 1/n
    let slack = if proposer_weight == 0.0 {
        f64::INFINITY
    } else {
        rhs * p / proposer_weight - (w + v)
    };
    Ok(BoundResult {
        satisfied: lhs <= rhs,
        lhs,
        rhs,
        minimal_n: minimal_horizon(slack),
    })
}

fn ln_beta(alpha: f64, beta: f64) -> f64 {
    ln_gamma(alpha) + ln_gamma(beta) - ln_gamma(alpha + beta)
}

const BETA_CF_MAX_ITER: usize = 10_000;
const BETA_CF_TINY: f64 = 1e-300;

/// Regularized incomplete beta function `I_x(α, β)`.
///
/// Continued fraction (modified Lentz) on whichever of `I_x(α, β)` and
/// `1 - I_{1-x}(β, α)` converges faster.
pub fn reg_inc_beta(x: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(domain("x", x, "[0, 1]"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(domain("alpha", alpha, "(0, inf)"));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(domain("beta", beta, "(0, inf)"));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    if x > (alpha + 1.0) / (alpha + beta + 2.0) {
        Ok(1.0 - beta_cf(1.0 - x, beta, alpha)?)
    } else {
        beta_cf(x, alpha, beta)
    }
}

fn beta_cf(x: f64, a: f64, b: f64) -> Result<f64> {
    let ln_prefix = a * x.ln() + b * (-x).ln_1p() - ln_beta(a, b);
    let prefix = ln_prefix.exp() / a;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let guard = |v: f64| {
        if v.abs() < BETA_CF_TINY {
            BETA_CF_TINY
        } else {
            v
        }
    };

    let mut c = 1.0;
    let mut d = 1.0 / guard(1.0 - qab * x / qap);
    let mut f = d;
    for m in 1..=BETA_CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;

        let even = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / guard(1.0 + even * d);
        c = guard(1.0 + even / c);
        f *= d * c;

        let odd = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / guard(1.0 + odd * d);
        c = guard(1.0 + odd / c);
        let delta = d * c;
        f *= delta;

        if (delta - 1.0).abs() < 1e-16 {
            return Ok((prefix * f).clamp(0.0, 1.0));
        }
    }
    Err(Error::NoConvergence {
        x,
        alpha: a,
        beta: b,
    })
}

/// Limiting ML-PoS fair probability: the `Beta(a/w, (1-a)/w)` mass of the fair area.
pub fn mlpos_limit_fairness(a: f64, w: f64, epsilon: f64) -> Result<f64> {
    if !(a > 0.0 && a < 1.0) {
        return Err(domain("a", a, "(0, 1)"));
    }
    if !(w > 0.0 && w.is_finite()) {
        return Err(domain("w", w, "(0, inf)"));
    }
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(domain("epsilon", epsilon, "[0, inf)"));
    }
    let (alpha, beta) = (a / w, (1.0 - a) / w);
    let area = FairArea::new(a, epsilon);
    let hi = reg_inc_beta(area.hi.min(1.0), alpha, beta)?;
    let lo = reg_inc_beta(area.lo.max(0.0), alpha, beta)?;
    Ok((hi - lo).clamp(0.0, 1.0))
}

/// CDF of `Beta(a/w, (1-a)/w)`, the limit law of the ML-PoS reward fraction.
pub fn mlpos_limit_cdf(a: f64, w: f64) -> impl Fn(f64) -> f64 {
    let (alpha, beta) = (a / w, (1.0 - a) / w);
    move |x| reg_inc_beta(x.clamp(0.0, 1.0), alpha, beta).unwrap_or(f64::NAN)
}

/// First checkpoint from which the unfair probability stays at or below `δ`.
pub fn convergence_time(report: &FairnessReport, delta: f64) -> ConvergenceTime {
    convergence_over(
        report.checkpoints.iter().map(|c| (c.t, c.unfair_prob)),
        delta,
    )
}

pub(crate) fn convergence_over(
    series: impl DoubleEndedIterator<Item = (u64, f64)>,
    delta: f64,
) -> ConvergenceTime {
    let mut first_good = ConvergenceTime::Never;
    for (t, unfair) in series.rev() {
        if unfair <= delta {
            first_good = ConvergenceTime::At(t);
        } else {
            break;
        }
    }
    first_good
}
