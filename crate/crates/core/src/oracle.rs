//! Exact laws of the subject's reward fraction at small horizons, obtained by
//! dynamic programming or full path enumeration.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::protocols::{slpos_two_miner_prob, slpos_win_probs_for};

/// Largest horizon accepted by the two-miner dynamic programs.
pub const MAX_DP_HORIZON: u64 = 20;
/// Largest number of paths a full enumeration may visit.
pub const MAX_ENUMERATED_PATHS: u64 = 100_000;

/// Support values closer than this are treated as the same atom.
const SUPPORT_MERGE_TOL: f64 = 1e-12;

/// Finite distribution of a reward fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactDist {
    /// Strictly increasing.
    pub support: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ExactDist {
    fn from_atoms(mut atoms: Vec<(f64, f64)>) -> Self {
        atoms.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut support: Vec<f64> = Vec::new();
        let mut probs: Vec<f64> = Vec::new();
        for (x, p) in atoms {
            match support.last() {
                Some(&last) if (x - last).abs() <= SUPPORT_MERGE_TOL => {
                    *probs.last_mut().unwrap() += p;
                }
                _ => {
                    support.push(x);
                    probs.push(p);
                }
            }
        }
        ExactDist { support, probs }
    }

    pub fn mean(&self) -> f64 {
        self.support
            .iter()
            .zip(&self.probs)
            .map(|(x, p)| x * p)
            .sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Probability of the atom at `x`, or zero.
    pub fn prob_of(&self, x: f64) -> f64 {
        self.atom_index(x).map_or(0.0, |i| self.probs[i])
    }

    fn atom_index(&self, x: f64) -> Option<usize> {
        let i = self.support.partition_point(|&s| s < x - SUPPORT_MERGE_TOL);
        (i < self.support.len() && (self.support[i] - x).abs() <= SUPPORT_MERGE_TOL).then_some(i)
    }

    /// Total-variation distance to the empirical law of `samples`. Samples that
    /// match no atom count fully towards the distance.
    pub fn total_variation(&self, samples: &[f64]) -> f64 {
        if samples.is_empty() {
            return 1.0;
        }
        let mut counts = vec![0u64; self.support.len()];
        let mut stray = 0u64;
        for &x in samples {
            match self.atom_index(x) {
                Some(i) => counts[i] += 1,
                None => stray += 1,
            }
        }
        let n = samples.len() as f64;
        let matched: f64 = counts
            .iter()
            .zip(&self.probs)
            .map(|(&c, &p)| (c as f64 / n - p).abs())
            .sum();
        0.5 * (matched + stray as f64 / n)
    }
}

fn check_two_miner(a: f64, w: f64, n: u64) -> Result<()> {
    if !(a > 0.0 && a < 1.0) {
        return Err(domain("a", a, "(0, 1)"));
    }
    if !(w >= 0.0 && w.is_finite()) {
        return Err(domain("w", w, "[0, inf)"));
    }
    if n == 0 || n > MAX_DP_HORIZON {
        return Err(Error::UnsupportedSize {
            what: "oracle horizon",
            size: n,
            limit: MAX_DP_HORIZON,
        });
    }
    Ok(())
}

/// DP over (block, subject wins): the subject's stake after `k` wins in `i`
/// blocks is `a + w k` out of `1 + w i`.
fn win_count_dp(a: f64, w: f64, n: u64, win_prob: impl Fn(f64) -> f64) -> ExactDist {
    let n = n as usize;
    let mut dist = vec![0.0f64; n + 1];
    dist[0] = 1.0;
    for i in 0..n {
        let mut next = vec![0.0f64; n + 1];
        for k in 0..=i {
            let p = win_prob((a + w * k as f64) / (1.0 + w * i as f64));
            next[k] += dist[k] * (1.0 - p);
            next[k + 1] += dist[k] * p;
        }
        dist = next;
    }
    ExactDist::from_atoms(
        dist.into_iter()
            .enumerate()
            .map(|(k, p)| (k as f64 / n as f64, p))
            .collect(),
    )
}

/// Exact two-miner ML-PoS law of the subject's reward fraction after `n` blocks.
pub fn mlpos_exact_dist(a: f64, w: f64, n: u64) -> Result<ExactDist> {
    check_two_miner(a, w, n)?;
    Ok(win_count_dp(a, w, n, |s| s))
}

/// Exact two-miner SL-PoS law of the subject's reward fraction after `n` blocks.
pub fn slpos_exact_dist(a: f64, w: f64, n: u64) -> Result<ExactDist> {
    check_two_miner(a, w, n)?;
    Ok(win_count_dp(a, w, n, |s| {
        slpos_two_miner_prob(s.clamp(0.0, 1.0)).expect("stake share lies in [0, 1]")
    }))
}

fn binomial_pmf(trials: u32, p: f64) -> Vec<f64> {
    let n = trials as usize;
    if p <= 0.0 || p >= 1.0 {
        let mut pmf = vec![0.0; n + 1];
        pmf[if p <= 0.0 { 0 } else { n }] = 1.0;
        return pmf;
    }
    // convolution keeps every entry a sum of non-negative products
    let mut pmf = vec![0.0f64; n + 1];
    pmf[0] = 1.0;
    for j in 0..n {
        for k in (1..=j + 1).rev() {
            pmf[k] = pmf[k] * (1.0 - p) + pmf[k - 1] * p;
        }
        pmf[0] *= 1.0 - p;
    }
    pmf
}

fn count_paths(branches: u64, depth: u64, what: &'static str) -> Result<u64> {
    let mut total: u64 = 1;
    for _ in 0..depth {
        total = total.saturating_mul(branches);
        if total > MAX_ENUMERATED_PATHS {
            return Err(Error::UnsupportedSize {
                what,
                size: total,
                limit: MAX_ENUMERATED_PATHS,
            });
        }
    }
    Ok(total)
}

/// Exact law of λ and the expected subject stake `E[S_i]`, `i = 0..=n`, for
/// two-miner C-PoS without withholding.
#[derive(Debug, Clone, PartialEq)]
pub struct CposExact {
    pub dist: ExactDist,
    pub expected_stake: Vec<f64>,
}

struct CposWalk {
    w: f64,
    v: f64,
    shards: u32,
    n: u64,
    atoms: Vec<(f64, f64)>,
    expected_stake: Vec<f64>,
}

impl CposWalk {
    fn visit(&mut self, depth: u64, prob: f64, stake: f64, wins: u64, credited: f64) {
        self.expected_stake[depth as usize] += prob * stake;
        if depth == self.n {
            let lambda = if self.v == 0.0 {
                wins as f64 / (self.shards as f64 * self.n as f64)
            } else {
                credited / ((self.w + self.v) * self.n as f64)
            };
            self.atoms.push((lambda, prob));
            return;
        }
        let total = 1.0 + (self.w + self.v) * depth as f64;
        let share = stake / total;
        let inflation = self.v * share;
        let pmf = binomial_pmf(self.shards, share);
        for (y, &py) in pmf.iter().enumerate() {
            if py == 0.0 {
                continue;
            }
            let reward = self.w * y as f64 / self.shards as f64 + inflation;
            self.visit(
                depth + 1,
                prob * py,
                stake + reward,
                wins + y as u64,
                credited + reward,
            );
        }
    }
}

/// Exact two-miner C-PoS law by enumerating every per-epoch shard-win count.
pub fn cpos_exact(a: f64, w: f64, v: f64, shards: u32, n: u64) -> Result<CposExact> {
    if !(a > 0.0 && a < 1.0) {
        return Err(domain("a", a, "(0, 1)"));
    }
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
    if n == 0 {
        return Err(domain("n", 0.0, "[1, inf)"));
    }
    count_paths(shards as u64 + 1, n, "C-PoS enumeration paths")?;
    let mut walk = CposWalk {
        w,
        v,
        shards,
        n,
        atoms: Vec::new(),
        expected_stake: vec![0.0; n as usize + 1],
    };
    walk.visit(0, 1.0, a, 0, 0.0);
    Ok(CposExact {
        dist: ExactDist::from_atoms(walk.atoms),
        expected_stake: walk.expected_stake,
    })
}

pub fn cpos_exact_dist(a: f64, w: f64, v: f64, shards: u32, n: u64) -> Result<ExactDist> {
    cpos_exact(a, w, v, shards, n).map(|e| e.dist)
}

/// Exact law of miner `subject`'s reward fraction in a multi-miner SL-PoS game,
/// enumerating all `m^n` winner sequences.
pub fn slpos_multi_exact_dist(shares: &[f64], w: f64, n: u64, subject: usize) -> Result<ExactDist> {
    let m = shares.len();
    if subject >= m {
        return Err(Error::InvalidExperiment(format!(
            "subject {subject} out of range for {m} miners"
        )));
    }
    if !(w >= 0.0 && w.is_finite()) {
        return Err(domain("w", w, "[0, inf)"));
    }
    if n == 0 {
        return Err(domain("n", 0.0, "[1, inf)"));
    }
    count_paths(m as u64, n, "SL-PoS enumeration paths")?;
    let mut walk = SlposWalk {
        shares,
        w,
        n,
        subject,
        wins: vec![0; m],
        atoms: Vec::new(),
    };
    walk.visit(0, 1.0)?;
    Ok(ExactDist::from_atoms(walk.atoms))
}

struct SlposWalk<'a> {
    shares: &'a [f64],
    w: f64,
    n: u64,
    subject: usize,
    wins: Vec<u64>,
    atoms: Vec<(f64, f64)>,
}

impl SlposWalk<'_> {
    fn visit(&mut self, depth: u64, prob: f64) -> Result<()> {
        if depth == self.n {
            let lambda = self.wins[self.subject] as f64 / self.n as f64;
            self.atoms.push((lambda, prob));
            return Ok(());
        }
        let stakes: Vec<f64> = self
            .shares
            .iter()
            .zip(&self.wins)
            .map(|(&s, &k)| s + self.w * k as f64)
            .collect();
        let probs = slpos_win_probs_for(&stakes)?;
        for (j, &p) in probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            self.wins[j] += 1;
            self.visit(depth + 1, prob * p)?;
            self.wins[j] -= 1;
        }
        Ok(())
    }
}
