//! Proposer selection and reward application for each incentive protocol.
//!
//! All steppers take the random stream explicitly, so a trial is a pure function
//! of its seed. Winning probabilities always use `effective_stake`; reward
//! fractions always use `credited_reward` (or win counts, see [`lambda_of`]).
//!
//! [`lambda_of`]: crate::model::lambda_of

use rand::Rng;

use crate::error::{domain, Error, Result};
use crate::model::{
    check_race_scale, MinerState, MlposMode, ProtocolKind, ProtocolSpec, RaceOutcome, ShareVector,
};

/// Largest miner count accepted by [`slpos_win_probs`].
pub const MAX_ANALYTIC_MINERS: usize = 64;

/// Draws index `i` with probability `weights[i] / total`.
fn draw_categorical<R, I>(weights: I, total: f64, rng: &mut R) -> usize
where
    R: Rng + ?Sized,
    I: IntoIterator<Item = f64>,
{
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.into_iter().enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
        last = i;
    }
    // target landed in the rounding gap above the accumulated sum
    last
}

/// PoW: the winner is drawn proportionally to the fixed hash shares.
pub fn pow_step<R: Rng + ?Sized>(shares: &ShareVector, rng: &mut R) -> usize {
    let target = rng.random::<f64>();
    let cumulative = shares.cumulative();
    cumulative
        .iter()
        .position(|&c| target < c)
        .unwrap_or(cumulative.len() - 1)
}

/// ML-PoS proposer selection.
///
/// `total_stake` must equal the sum of the effective stakes.
pub fn mlpos_step<R: Rng + ?Sized>(
    states: &[MinerState],
    total_stake: f64,
    rng: &mut R,
    mode: MlposMode,
) -> Result<usize> {
    match mode {
        MlposMode::Proportional => Ok(draw_categorical(
            states.iter().map(|s| s.effective_stake),
            total_stake,
            rng,
        )),
        MlposMode::GeometricRace { race_scale } => {
            let max_share = states
                .iter()
                .map(|s| s.effective_stake / total_stake)
                .fold(0.0, f64::max);
            check_race_scale(race_scale, max_share)?;
            Ok(geometric_race_winner(states, total_stake, race_scale, rng))
        }
    }
}

/// Samples the winner of the timestamp race directly.
///
/// Conditioned on the first timestamp with at least one success, miner `i` is
/// among the successes with probability `p_i / (1 - Π_{j>=i}(1 - p_j))` when no
/// earlier miner succeeded, and `p_i` otherwise. The winner is uniform among the
/// successes. The number of elapsed timestamps does not affect the winner and is
/// not drawn.
fn geometric_race_winner<R: Rng + ?Sized>(
    states: &[MinerState],
    total_stake: f64,
    race_scale: f64,
    rng: &mut R,
) -> usize {
    let probs: Vec<f64> = states
        .iter()
        .map(|s| race_scale * s.effective_stake / total_stake)
        .collect();
    // log Π_{j>=i} (1 - p_j)
    let mut log_none_from = vec![0.0; probs.len() + 1];
    for i in (0..probs.len()).rev() {
        log_none_from[i] = log_none_from[i + 1] + (-probs[i]).ln_1p();
    }

    let mut successes: Vec<usize> = Vec::with_capacity(2);
    for (i, &p) in probs.iter().enumerate() {
        let prob = if successes.is_empty() {
            // 1 - Π_{j>=i}(1 - p_j) without cancellation
            let any = -log_none_from[i].exp_m1();
            p / any
        } else {
            p
        };
        if rng.random::<f64>() < prob {
            successes.push(i);
        }
    }
    match successes.len() {
        0 => probs.len() - 1, // only reachable through rounding at the last miner
        1 => successes[0],
        n => successes[rng.random_range(0..n)],
    }
}

/// Probability that miner A wins a two-miner timestamp race with per-timestamp
/// success probabilities `p_a` and `p_b`, splitting simultaneous successes evenly:
/// `(p_a - p_a p_b / 2) / (p_a + p_b - p_a p_b)`.
pub fn mlpos_exact_race_prob(p_a: f64, p_b: f64) -> Result<f64> {
    for (name, p) in [("p_a", p_a), ("p_b", p_b)] {
        if !(p > 0.0 && p < 1.0) {
            return Err(domain(name, p, "(0, 1)"));
        }
    }
    Ok((p_a - p_a * p_b / 2.0) / (p_a + p_b - p_a * p_b))
}

/// Argmin of per-miner ticket times; exact ties are split uniformly.
fn race_winner<R, T>(
    states: &[MinerState],
    total_stake: f64,
    rng: &mut R,
    ticket: T,
    mut record: impl FnMut(f64),
) -> usize
where
    R: Rng + ?Sized,
    T: Fn(f64, f64) -> f64,
{
    let mut best = f64::INFINITY;
    let mut winner = 0;
    let mut tied = 0u32;
    for (i, s) in states.iter().enumerate() {
        let u = rng.random::<f64>();
        let time = ticket(u, s.effective_stake / total_stake);
        record(time);
        if time < best {
            best = time;
            winner = i;
            tied = 1;
        } else if time == best {
            tied += 1;
            if rng.random_range(0..tied) == 0 {
                winner = i;
            }
        }
    }
    winner
}

#[inline]
fn slpos_ticket(u: f64, share: f64) -> f64 {
    u / share
}

#[inline]
fn fslpos_ticket(u: f64, share: f64) -> f64 {
    -(-u).ln_1p() / share
}

/// SL-PoS: every miner draws one ticket `u / share` with `u` uniform on `[0, 1)`.
pub fn slpos_step<R: Rng + ?Sized>(
    states: &[MinerState],
    total_stake: f64,
    rng: &mut R,
) -> RaceOutcome {
    let mut times = Vec::with_capacity(states.len());
    let winner = race_winner(states, total_stake, rng, slpos_ticket, |t| times.push(t));
    RaceOutcome { times, winner }
}

/// FSL-PoS: tickets follow `-ln(1 - u) / share`, an exponential race whose winner
/// is distributed exactly proportionally to stake.
pub fn fslpos_step<R: Rng + ?Sized>(
    states: &[MinerState],
    total_stake: f64,
    rng: &mut R,
) -> RaceOutcome {
    let mut times = Vec::with_capacity(states.len());
    let winner = race_winner(states, total_stake, rng, fslpos_ticket, |t| times.push(t));
    RaceOutcome { times, winner }
}

/// Per-miner SL-PoS winning probabilities for arbitrary shares.
///
/// Miner `i` wins with probability `∫_0^{1/S_max} S_i Π_{j≠i}(1 - S_j z) dz`.
/// Substituting `y = S_max z` gives `(S_i / S_max) ∫_0^1 Π_{j≠i}(1 - r_j y) dy` with
/// `r_j = S_j / S_max ∈ (0, 1]`. Each factor is `(1 - y) + (1 - r_j) y` in the
/// Bernstein basis, so the product has non-negative Bernstein coefficients and its
/// integral over `[0, 1]` is their mean. No alternating sums are formed.
pub fn slpos_win_probs(shares: &ShareVector) -> Result<Vec<f64>> {
    slpos_win_probs_for(shares.as_slice())
}

/// Same as [`slpos_win_probs`] for positive stake amounts that need not sum to one.
pub fn slpos_win_probs_for(stakes: &[f64]) -> Result<Vec<f64>> {
    let m = stakes.len();
    if m > MAX_ANALYTIC_MINERS {
        return Err(Error::UnsupportedSize {
            what: "SL-PoS analytic win probabilities",
            size: m as u64,
            limit: MAX_ANALYTIC_MINERS as u64,
        });
    }
    if m < 2 || stakes.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::InvalidShares(
            "need at least two positive stakes".into(),
        ));
    }
    let max = stakes.iter().copied().fold(0.0, f64::max);
    let ratios: Vec<f64> = stakes.iter().map(|s| s / max).collect();

    let mut coeffs = Vec::with_capacity(m);
    let mut next = Vec::with_capacity(m);
    Ok((0..m)
        .map(|i| {
            coeffs.clear();
            coeffs.push(1.0);
            for (j, &r) in ratios.iter().enumerate() {
                if j == i {
                    continue;
                }
                bernstein_times_linear(&coeffs, 1.0 - r, &mut next);
                std::mem::swap(&mut coeffs, &mut next);
            }
            let integral = coeffs.iter().sum::<f64>() / coeffs.len() as f64;
            ratios[i] * integral
        })
        .collect())
}

/// Multiplies a degree-`d` Bernstein polynomial by `(1 - y) + beta * y`.
fn bernstein_times_linear(coeffs: &[f64], beta: f64, out: &mut Vec<f64>) {
    let d = coeffs.len() - 1;
    let scale = 1.0 / (d + 1) as f64;
    out.clear();
    for k in 0..=d + 1 {
        let from_left = if k <= d {
            coeffs[k] * (d + 1 - k) as f64
        } else {
            0.0
        };
        let from_right = if k >= 1 {
            coeffs[k - 1] * beta * k as f64
        } else {
            0.0
        };
        out.push((from_left + from_right) * scale);
    }
}

/// C-PoS epoch: `P` independent proposer draws over the current stake shares.
/// Returns the number of slots won by each miner.
pub fn cpos_epoch<R: Rng + ?Sized>(
    states: &[MinerState],
    total_stake: f64,
    spec: &ProtocolSpec,
    rng: &mut R,
) -> Vec<u32> {
    let mut wins = vec![0; states.len()];
    cpos_epoch_into(states, total_stake, spec.shards, rng, &mut wins);
    wins
}

pub(crate) fn cpos_epoch_into<R: Rng + ?Sized>(
    states: &[MinerState],
    total_stake: f64,
    shards: u32,
    rng: &mut R,
    wins: &mut [u32],
) {
    wins.iter_mut().for_each(|w| *w = 0);
    for _ in 0..shards {
        let i = draw_categorical(states.iter().map(|s| s.effective_stake), total_stake, rng);
        wins[i] += 1;
    }
}

/// Outcome of one block or epoch, consumed by [`apply_reward`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Award<'a> {
    /// A single proposer won the block.
    Block(usize),
    /// Slots won per miner in a C-PoS epoch.
    Shards(&'a [u32]),
}

/// Credits the rewards of block (or epoch) `t`, counted from 1.
///
/// Without withholding every reward joins the effective stake immediately. With
/// period `k > 0` rewards accumulate in `pending_reward`; whenever `t` is a
/// multiple of `k`, everything issued before block `t` becomes effective, and the
/// reward of block `t` itself waits for `t + k`. C-PoS inflation uses the stake
/// shares in force when the epoch started.
pub fn apply_reward(states: &mut [MinerState], award: Award<'_>, spec: &ProtocolSpec, t: u64) {
    let w = spec.proposer_reward;
    let k = spec.withhold_period;

    let inflation_base = match award {
        Award::Shards(_) if spec.inflation_reward > 0.0 => {
            Some(states.iter().map(|s| s.effective_stake).sum::<f64>())
        }
        _ => None,
    };
    let inflation_shares: Option<Vec<f64>> = inflation_base.map(|total| {
        states
            .iter()
            .map(|s| spec.inflation_reward * s.effective_stake / total)
            .collect()
    });

    if k > 0 && t % k == 0 {
        for s in states.iter_mut() {
            s.effective_stake += s.pending_reward;
            s.pending_reward = 0.0;
        }
    }

    let credit = |s: &mut MinerState, amount: f64| {
        s.credited_reward += amount;
        if k > 0 {
            s.pending_reward += amount;
        } else {
            s.effective_stake += amount;
        }
    };

    match award {
        Award::Block(i) => {
            let s = &mut states[i];
            s.wins += 1;
            credit(s, w);
        }
        Award::Shards(slots) => {
            let per_slot = w / spec.shards as f64;
            for (i, (s, &won)) in states.iter_mut().zip(slots).enumerate() {
                s.wins += u64::from(won);
                let inflation = inflation_shares.as_ref().map_or(0.0, |v| v[i]);
                credit(s, per_slot * won as f64 + inflation);
            }
        }
    }
}

/// Selects the winner(s) of the next block for any protocol and applies rewards.
/// `scratch` must have one slot per miner.
pub(crate) fn step<R: Rng + ?Sized>(
    spec: &ProtocolSpec,
    shares: &ShareVector,
    states: &mut [MinerState],
    t: u64,
    rng: &mut R,
    scratch: &mut [u32],
) {
    let total: f64 = states.iter().map(|s| s.effective_stake).sum();
    let winner = match spec.kind {
        ProtocolKind::Pow => pow_step(shares, rng),
        ProtocolKind::Mlpos => match spec.mlpos_mode {
            MlposMode::Proportional => {
                draw_categorical(states.iter().map(|s| s.effective_stake), total, rng)
            }
            MlposMode::GeometricRace { race_scale } => {
                geometric_race_winner(states, total, race_scale, rng)
            }
        },
        ProtocolKind::Slpos => race_winner(states, total, rng, slpos_ticket, |_| {}),
        ProtocolKind::Fslpos => race_winner(states, total, rng, fslpos_ticket, |_| {}),
        ProtocolKind::Cpos => {
            cpos_epoch_into(states, total, spec.shards, rng, scratch);
            apply_reward(states, Award::Shards(scratch), spec, t);
            return;
        }
    };
    apply_reward(states, Award::Block(winner), spec, t);
}

/// Two-miner SL-PoS probability that the miner holding stake share `z` wins the
/// next block: `z / (2(1 - z))` for `z <= 1/2`, else `1 - (1 - z) / (2z)`.
pub fn slpos_two_miner_prob(z: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&z) {
        return Err(domain("z", z, "[0, 1]"));
    }
    Ok(if z <= 0.5 {
        z / (2.0 * (1.0 - z))
    } else {
        1.0 - (1.0 - z) / (2.0 * z)
    })
}

/// Expected one-step direction of a two-miner SL-PoS stake share:
/// next-block win probability minus the current share. Zeros at 0, 1/2 and 1.
pub fn drift(z: f64) -> Result<f64> {
    Ok(slpos_two_miner_prob(z)? - z)
}
