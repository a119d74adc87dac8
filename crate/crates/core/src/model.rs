//! Domain types shared by the protocol steppers, the oracles and the engine.
//!
//! Stakes are absolute amounts: the initial total is normalized to 1 and every
//! block (or epoch) issues `w + v` new units, so after `t` steps the system holds
//! `1 + (w + v) t`. Shares are derived on demand as `stake / total`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Tolerance on the normalization of a [`ShareVector`].
pub const SHARE_SUM_TOLERANCE: f64 = 1e-12;

/// Relative slack applied to the closed fair-area endpoints so that values such as
/// `180 / 1000` are not pushed out of `[0.9 * 0.2, 1.1 * 0.2]` by rounding of the
/// endpoints themselves.
pub const FAIR_AREA_REL_TOL: f64 = 1e-12;

/// Normalized initial resource shares of the participating miners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ShareVector {
    shares: Vec<f64>,
    cumulative: Vec<f64>,
}

impl ShareVector {
    /// Builds a share vector from values that already sum to one.
    pub fn new(shares: Vec<f64>) -> Result<Self> {
        Self::check_entries(&shares)?;
        let sum: f64 = shares.iter().sum();
        if (sum - 1.0).abs() > SHARE_SUM_TOLERANCE {
            return Err(Error::InvalidShares(format!(
                "shares sum to {sum}, expected 1 within {SHARE_SUM_TOLERANCE:e}"
            )));
        }
        Ok(Self::from_checked(shares))
    }

    /// Builds a share vector by dividing positive weights by their sum.
    pub fn normalized(weights: &[f64]) -> Result<Self> {
        Self::check_entries(weights)?;
        let sum: f64 = weights.iter().sum();
        if !sum.is_finite() {
            return Err(Error::InvalidShares(
                "weights do not have a finite sum".into(),
            ));
        }
        Ok(Self::from_checked(
            weights.iter().map(|w| w / sum).collect(),
        ))
    }

    /// Miner 0 holds `subject`; the remaining `1 - subject` is split evenly among
    /// `competitors` miners.
    pub fn subject_vs_equal(subject: f64, competitors: usize) -> Result<Self> {
        if !(subject > 0.0 && subject < 1.0) {
            return Err(Error::InvalidShares(format!(
                "subject share {subject} must lie in (0, 1)"
            )));
        }
        if competitors == 0 {
            return Err(Error::InvalidShares("need at least one competitor".into()));
        }
        let rest = (1.0 - subject) / competitors as f64;
        let mut shares = Vec::with_capacity(competitors + 1);
        shares.push(subject);
        shares.extend(std::iter::repeat(rest).take(competitors));
        Self::new(shares)
    }

    fn check_entries(values: &[f64]) -> Result<()> {
        if values.len() < 2 {
            return Err(Error::InvalidShares(format!(
                "need at least two miners, got {}",
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::InvalidShares(format!(
                "share {i} is {v}; every share must be positive and finite"
            )));
        }
        Ok(())
    }

    fn from_checked(shares: Vec<f64>) -> Self {
        let cumulative = shares
            .iter()
            .scan(0.0, |acc, s| {
                *acc += s;
                Some(*acc)
            })
            .collect();
        ShareVector { shares, cumulative }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.shares
    }

    pub fn len(&self) -> usize {
        self.shares.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shares.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<f64> {
        self.shares.get(i).copied()
    }

    pub fn max(&self) -> f64 {
        self.shares.iter().copied().fold(f64::MIN, f64::max)
    }

    /// Running sums of the shares, used for categorical sampling.
    pub(crate) fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }
}

impl TryFrom<Vec<f64>> for ShareVector {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        ShareVector::new(value)
    }
}

impl From<ShareVector> for Vec<f64> {
    fn from(value: ShareVector) -> Self {
        value.shares
    }
}

/// The incentive protocol being simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    /// Proof of work: hash shares are fixed, winner drawn proportionally.
    Pow,
    /// Multi-lottery proof of stake (one trial per timestamp).
    Mlpos,
    /// Single-lottery proof of stake, `time = hash / stake`.
    Slpos,
    /// Single lottery with the exponential time function `-ln(1 - hash) / stake`.
    Fslpos,
    /// Compound proof of stake: `P` proposer slots plus proportional inflation.
    Cpos,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 5] = [
        ProtocolKind::Pow,
        ProtocolKind::Mlpos,
        ProtocolKind::Slpos,
        ProtocolKind::Fslpos,
        ProtocolKind::Cpos,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Pow => "pow",
            ProtocolKind::Mlpos => "mlpos",
            ProtocolKind::Slpos => "slpos",
            ProtocolKind::Fslpos => "fslpos",
            ProtocolKind::Cpos => "cpos",
        }
    }

    pub fn is_stake_based(self) -> bool {
        !matches!(self, ProtocolKind::Pow)
    }
}

impl std::fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let normalized: String = s
            .chars()
            .filter(|c| *c != '-' && *c != '_')
            .collect::<String>()
            .to_ascii_lowercase();
        ProtocolKind::ALL
            .into_iter()
            .find(|k| k.name() == normalized)
            .ok_or_else(|| Error::InvalidProtocol(format!("unknown protocol '{s}'")))
    }
}

/// Default total per-timestamp success probability for the ML-PoS geometric race:
/// one success every 600 one-second timestamps on average.
pub const DEFAULT_RACE_SCALE: f64 = 1.0 / 600.0;

/// How ML-PoS proposers are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum MlposMode {
    /// Winner drawn with probability equal to its current stake share.
    #[default]
    Proportional,
    /// Every miner trials each timestamp with success probability
    /// `race_scale * share`; earliest success wins, simultaneous successes are
    /// split uniformly.
    GeometricRace { race_scale: f64 },
}

/// Protocol kind together with its reward parameters and horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub kind: ProtocolKind,
    /// Proposer reward `w` per block (per epoch for C-PoS).
    pub proposer_reward: f64,
    /// Inflation reward `v` per epoch; C-PoS only.
    pub inflation_reward: f64,
    /// Proposer slots per epoch; C-PoS only.
    pub shards: u32,
    /// Rewards join the effective stake only at the next multiple of this
    /// height. Zero disables withholding.
    pub withhold_period: u64,
    /// Number of blocks (epochs for C-PoS) to simulate.
    pub horizon: u64,
    #[serde(default)]
    pub mlpos_mode: MlposMode,
}

impl ProtocolSpec {
    /// A proposer-only protocol with reward `w`, no withholding.
    pub fn new(kind: ProtocolKind, proposer_reward: f64, horizon: u64) -> Self {
        ProtocolSpec {
            kind,
            proposer_reward,
            inflation_reward: 0.0,
            shards: 1,
            withhold_period: 0,
            horizon,
            mlpos_mode: MlposMode::Proportional,
        }
    }

    pub fn cpos(proposer_reward: f64, inflation_reward: f64, shards: u32, horizon: u64) -> Self {
        ProtocolSpec {
            kind: ProtocolKind::Cpos,
            proposer_reward,
            inflation_reward,
            shards,
            withhold_period: 0,
            horizon,
            mlpos_mode: MlposMode::Proportional,
        }
    }

    pub fn with_withholding(mut self, period: u64) -> Self {
        self.withhold_period = period;
        self
    }

    pub fn with_mlpos_mode(mut self, mode: MlposMode) -> Self {
        self.mlpos_mode = mode;
        self
    }

    /// Total stake issued per block or epoch, `w + v`.
    pub fn reward_per_step(&self) -> f64 {
        self.proposer_reward + self.inflation_reward
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.proposer_reward;
        let v = self.inflation_reward;
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::InvalidProtocol(format!(
                "proposer reward {w} must be >= 0"
            )));
        }
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidProtocol(format!(
                "inflation reward {v} must be >= 0"
            )));
        }
        if w + v <= 0.0 {
            return Err(Error::InvalidProtocol(
                "no reward is issued (w + v = 0), so reward fractions are undefined".into(),
            ));
        }
        if self.shards == 0 {
            return Err(Error::InvalidProtocol(
                "shard count must be at least 1".into(),
            ));
        }
        if self.kind != ProtocolKind::Cpos {
            if self.shards != 1 {
                return Err(Error::InvalidProtocol(format!(
                    "{} uses a single proposer per block; got {} shards",
                    self.kind, self.shards
                )));
            }
            if v != 0.0 {
                return Err(Error::InvalidProtocol(format!(
                    "{} has no inflation reward; got v = {v}",
                    self.kind
                )));
            }
        }
        if self.horizon == 0 {
            return Err(Error::InvalidProtocol("horizon must be at least 1".into()));
        }
        if let MlposMode::GeometricRace { race_scale } = self.mlpos_mode {
            if !(race_scale.is_finite() && race_scale > 0.0 && race_scale < 1.0) {
                return Err(Error::InvalidProtocol(format!(
                    "race scale {race_scale} must lie in (0, 1)"
                )));
            }
        }
        Ok(())
    }

    /// Validation that also depends on the miners' shares.
    pub fn validate_for(&self, shares: &ShareVector) -> Result<()> {
        self.validate()?;
        if let (ProtocolKind::Mlpos, MlposMode::GeometricRace { race_scale }) =
            (self.kind, self.mlpos_mode)
        {
            check_race_scale(race_scale, shares.max())?;
        }
        Ok(())
    }
}

pub(crate) fn check_race_scale(race_scale: f64, max_share: f64) -> Result<()> {
    if !(race_scale > 0.0 && race_scale * max_share < 1.0) {
        return Err(Error::InvalidProtocol(format!(
            "race scale {race_scale} times the largest share {max_share} must lie in (0, 1)"
        )));
    }
    Ok(())
}

/// Evolving per-miner state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MinerState {
    /// Stake that counts toward winning probabilities.
    pub effective_stake: f64,
    /// Issued reward that has not yet become effective (withholding only).
    pub pending_reward: f64,
    /// Every reward issued to this miner so far.
    pub credited_reward: f64,
    /// Blocks won (shard slots for C-PoS).
    pub wins: u64,
}

impl MinerState {
    pub fn with_stake(stake: f64) -> Self {
        MinerState {
            effective_stake: stake,
            ..Default::default()
        }
    }
}

/// Fresh states for a game starting from `shares`.
pub fn initial_states(shares: &ShareVector) -> Vec<MinerState> {
    shares
        .as_slice()
        .iter()
        .map(|&s| MinerState::with_stake(s))
        .collect()
}

pub fn total_effective(states: &[MinerState]) -> f64 {
    states.iter().map(|s| s.effective_stake).sum()
}

/// `Σ effective + Σ pending - (1 + (w + v) t)`; zero up to rounding.
pub fn conservation_residual(states: &[MinerState], spec: &ProtocolSpec, t: u64) -> f64 {
    let held: f64 = states
        .iter()
        .map(|s| s.effective_stake + s.pending_reward)
        .sum();
    held - (1.0 + spec.reward_per_step() * t as f64)
}

/// Fraction of all rewards issued in the first `t` steps that went to each miner.
///
/// Proposer-only protocols (`v = 0`) use `wins / (P t)`, which equals
/// `credited / (w t)` exactly in real arithmetic and avoids the rounding that
/// repeated additions of `w` would introduce near fair-area endpoints.
pub fn lambda_of(states: &[MinerState], spec: &ProtocolSpec, t: u64) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(Error::UndefinedRatio);
    }
    let v = spec.inflation_reward;
    if v == 0.0 {
        let slots = spec.shards as f64 * t as f64;
        Ok(states.iter().map(|s| s.wins as f64 / slots).collect())
    } else {
        let issued = spec.reward_per_step() * t as f64;
        Ok(states.iter().map(|s| s.credited_reward / issued).collect())
    }
}

/// Relative tolerance `ε`, failure probability `δ` and the miner under study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessParams {
    pub epsilon: f64,
    pub delta: f64,
    pub subject: usize,
}

impl Default for FairnessParams {
    fn default() -> Self {
        FairnessParams {
            epsilon: 0.1,
            delta: 0.1,
            subject: 0,
        }
    }
}

impl FairnessParams {
    pub fn new(epsilon: f64, delta: f64, subject: usize) -> Result<Self> {
        let p = FairnessParams {
            epsilon,
            delta,
            subject,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(domain("epsilon", self.epsilon, "[0, inf)"));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(domain("delta", self.delta, "[0, 1]"));
        }
        Ok(())
    }
}

/// Closed interval `[(1-ε)a, (1+ε)a]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FairArea {
    pub lo: f64,
    pub hi: f64,
}

impl FairArea {
    pub fn new(a: f64, epsilon: f64) -> Self {
        FairArea {
            lo: (1.0 - epsilon) * a,
            hi: (1.0 + epsilon) * a,
        }
    }

    pub fn contains(&self, lambda: f64) -> bool {
        lambda >= self.lo - FAIR_AREA_REL_TOL * self.lo.abs()
            && lambda <= self.hi + FAIR_AREA_REL_TOL * self.hi.abs()
    }
}

/// Result of a single-lottery race.
#[derive(Debug, Clone, PartialEq)]
pub struct RaceOutcome {
    /// Ticket time of every miner; smaller is earlier.
    pub times: Vec<f64>,
    pub winner: usize,
}

/// Reward fractions of every miner after `t` blocks or epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: u64,
    pub lambda: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn share_vector_rejects_bad_input() {
        assert!(ShareVector::new(vec![1.0]).is_err());
        assert!(ShareVector::new(vec![0.0, 1.0]).is_err());
        assert!(ShareVector::new(vec![-0.2, 1.2]).is_err());
        assert!(ShareVector::new(vec![0.3, 0.3]).is_err());
        assert!(ShareVector::new(vec![f64::NAN, 0.5]).is_err());
        assert!(ShareVector::normalized(&[0.0, 2.0]).is_err());
        assert!(ShareVector::new(vec![0.2, 0.8]).is_ok());
    }

    #[test]
    fn normalized_and_equal_split() {
        let s = ShareVector::normalized(&[1.0, 3.0]).unwrap();
        assert_eq!(s.as_slice(), &[0.25, 0.75]);
        let s = ShareVector::subject_vs_equal(0.2, 4).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.as_slice().iter().all(|x| (x - 0.2).abs() < 1e-15));
        assert!((s.cumulative()[4] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn protocol_validation() {
        assert!(ProtocolSpec::new(ProtocolKind::Pow, 0.0, 10)
            .validate()
            .is_err());
        assert!(ProtocolSpec::new(ProtocolKind::Mlpos, 0.01, 0)
            .validate()
            .is_err());
        assert!(ProtocolSpec::cpos(0.0, 0.1, 32, 10).validate().is_ok());
        assert!(ProtocolSpec::cpos(0.01, 0.1, 0, 10).validate().is_err());
        let mut bad = ProtocolSpec::new(ProtocolKind::Slpos, 0.01, 10);
        bad.shards = 4;
        assert!(bad.validate().is_err());
        let mut bad = ProtocolSpec::new(ProtocolKind::Mlpos, 0.01, 10);
        bad.inflation_reward = 0.1;
        assert!(bad.validate().is_err());

        let shares = ShareVector::new(vec![0.2, 0.8]).unwrap();
        let race = ProtocolSpec::new(ProtocolKind::Mlpos, 0.01, 10)
            .with_mlpos_mode(MlposMode::GeometricRace { race_scale: 1.2 });
        assert!(race.validate_for(&shares).is_err());
        let race = race.with_mlpos_mode(MlposMode::GeometricRace { race_scale: 0.5 });
        assert!(race.validate_for(&shares).is_ok());
    }

    #[test]
    fn protocol_kind_parsing() {
        assert_eq!(
            "ML-PoS".parse::<ProtocolKind>().unwrap(),
            ProtocolKind::Mlpos
        );
        assert_eq!(
            "fsl_pos".parse::<ProtocolKind>().unwrap(),
            ProtocolKind::Fslpos
        );
        assert!("pos".parse::<ProtocolKind>().is_err());
    }

    fn state(credited: f64, wins: u64) -> MinerState {
        MinerState {
            effective_stake: 0.0,
            pending_reward: 0.0,
            credited_reward: credited,
            wins,
        }
    }

    #[test]
    fn lambda_equal_split() {
        let spec = ProtocolSpec::new(ProtocolKind::Mlpos, 0.01, 10);
        let l = lambda_of(&[state(0.05, 5), state(0.05, 5)], &spec, 10).unwrap();
        assert_eq!(l, vec![0.5, 0.5]);
    }

    #[test]
    fn lambda_cpos_single_epoch() {
        let spec = ProtocolSpec::cpos(0.01, 0.1, 32, 1);
        let l = lambda_of(&[state(0.022, 0), state(0.088, 32)], &spec, 1).unwrap();
        assert!((l[0] - 0.2).abs() < 1e-12 && (l[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn lambda_is_win_fraction_for_proposer_only() {
        let spec = ProtocolSpec::new(ProtocolKind::Mlpos, 0.01, 10);
        let l = lambda_of(&[state(0.03, 3), state(0.07, 7)], &spec, 10).unwrap();
        assert_eq!(l[0], 0.3);
    }

    #[test]
    fn lambda_undefined_at_zero() {
        let spec = ProtocolSpec::new(ProtocolKind::Pow, 0.01, 10);
        assert_eq!(
            lambda_of(&[state(0.0, 0), state(0.0, 0)], &spec, 0),
            Err(Error::UndefinedRatio)
        );
    }

    #[test]
    fn fair_area_is_closed() {
        let area = FairArea::new(0.2, 0.1);
        assert!(area.contains(180.0 / 1000.0));
        assert!(area.contains(220.0 / 1000.0));
        assert!(!area.contains(179.0 / 1000.0));
        assert!(!area.contains(221.0 / 1000.0));
    }

    #[test]
    fn fairness_params_domain() {
        assert!(FairnessParams::new(-0.1, 0.1, 0).is_err());
        assert!(FairnessParams::new(0.1, 1.5, 0).is_err());
        assert!(FairnessParams::new(0.0, 0.0, 0).is_ok());
    }

    #[test]
    fn share_vector_serde_round_trip() {
        let s = ShareVector::new(vec![0.2, 0.8]).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, "[0.2,0.8]");
        let back: ShareVector = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<ShareVector>("[0.5,0.6]").is_err());
    }
}
