//! Seeded Monte Carlo runner: trials, checkpoints and aggregation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{
    convergence_over, mean_stderr, percentile_nearest_rank, unfair_probability,
};
use crate::error::{Error, Result};
use crate::model::{
    initial_states, lambda_of, Checkpoint, FairnessParams, ProtocolSpec, ShareVector,
};
use crate::protocols::step;

pub const DEFAULT_TRIALS: usize = 10_000;

/// Everything needed to reproduce a Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub protocol: ProtocolSpec,
    pub shares: ShareVector,
    pub fairness: FairnessParams,
    pub trials: usize,
    pub base_seed: u64,
    /// Strictly increasing block (or epoch) counts ending at the horizon.
    pub checkpoints: Vec<u64>,
}

impl ExperimentSpec {
    /// Spec with default fairness parameters, trial count and checkpoints.
    pub fn new(protocol: ProtocolSpec, shares: ShareVector, base_seed: u64) -> Self {
        let checkpoints = default_checkpoints(protocol.horizon);
        ExperimentSpec {
            protocol,
            shares,
            fairness: FairnessParams::default(),
            trials: DEFAULT_TRIALS,
            base_seed,
            checkpoints,
        }
    }

    pub fn with_trials(mut self, trials: usize) -> Self {
        self.trials = trials;
        self
    }

    pub fn with_fairness(mut self, fairness: FairnessParams) -> Self {
        self.fairness = fairness;
        self
    }

    pub fn with_checkpoints(mut self, checkpoints: Vec<u64>) -> Self {
        self.checkpoints = checkpoints;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.protocol.validate_for(&self.shares)?;
        self.fairness.validate()?;
        if self.fairness.subject >= self.shares.len() {
            return Err(Error::InvalidExperiment(format!(
                "subject {} out of range for {} miners",
                self.fairness.subject,
                self.shares.len()
            )));
        }
        if self.trials == 0 {
            return Err(Error::InvalidExperiment("trials must be positive".into()));
        }
        let Some(&last) = self.checkpoints.last() else {
            return Err(Error::InvalidExperiment("no checkpoints".into()));
        };
        if self.checkpoints[0] == 0 || self.checkpoints.windows(2).any(|c| c[0] >= c[1]) {
            return Err(Error::InvalidExperiment(
                "checkpoints must be positive and strictly increasing".into(),
            ));
        }
        if last != self.protocol.horizon {
            return Err(Error::InvalidExperiment(format!(
                "last checkpoint {last} differs from horizon {}",
                self.protocol.horizon
            )));
        }
        Ok(())
    }

    /// Initial share of the subject miner.
    pub fn subject_share(&self) -> f64 {
        self.shares.as_slice()[self.fairness.subject]
    }
}

/// `{1, 2, 5} × 10^j` below the horizon, followed by the horizon itself.
pub fn default_checkpoints(horizon: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut scale: u64 = 1;
    'outer: loop {
        for m in [1u64, 2, 5] {
            match m.checked_mul(scale) {
                Some(c) if c < horizon => out.push(c),
                _ => break 'outer,
            }
        }
        match scale.checked_mul(10) {
            Some(s) => scale = s,
            None => break,
        }
    }
    out.push(horizon);
    out
}

/// Per-trial seed: the SplitMix64 finalizer applied to
/// `base ^ (index * 0x9E3779B97F4A7C15)` (wrapping). Every step is a bijection
/// of `u64`, so distinct indices always get distinct seeds.
pub fn derive_seed(base_seed: u64, trial_index: u64) -> u64 {
    let mut z = base_seed ^ trial_index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs one trial from height 0 to the horizon and records every miner's λ at
/// each checkpoint.
pub fn run_trial(spec: &ExperimentSpec, trial_index: u64) -> Result<Vec<Checkpoint>> {
    spec.validate()?;
    Ok(simulate(spec, trial_index))
}

fn simulate(spec: &ExperimentSpec, trial_index: u64) -> Vec<Checkpoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.base_seed, trial_index));
    let protocol = &spec.protocol;
    let mut states = initial_states(&spec.shares);
    let mut scratch = vec![0u32; states.len()];
    let mut out = Vec::with_capacity(spec.checkpoints.len());
    let mut next = spec.checkpoints.iter().copied().peekable();
    for t in 1..=protocol.horizon {
        step(
            protocol,
            &spec.shares,
            &mut states,
            t,
            &mut rng,
            &mut scratch,
        );
        debug_assert!(
            crate::model::conservation_residual(&states, protocol, t).abs()
                <= 1e-9 * (1.0 + protocol.reward_per_step() * t as f64),
            "stake not conserved at height {t}"
        );
        if next.peek() == Some(&t) {
            next.next();
            let lambda = lambda_of(&states, protocol, t).expect("t >= 1");
            out.push(Checkpoint { t, lambda });
        }
    }
    out
}

/// Runs every trial (in parallel on the current rayon pool) and returns them in
/// trial-index order.
pub fn run_trials(spec: &ExperimentSpec) -> Result<Vec<Vec<Checkpoint>>> {
    spec.validate()?;
    Ok((0..spec.trials as u64)
        .into_par_iter()
        .map(|i| simulate(spec, i))
        .collect())
}

/// Summary of the subject's λ across trials at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStats {
    pub t: u64,
    pub mean: f64,
    pub stderr: f64,
    pub p05: f64,
    pub p95: f64,
    pub unfair_prob: f64,
}

/// First checkpoint after which the unfair probability never exceeds `δ` again.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConvergenceTime {
    At(u64),
    Never,
}

impl std::fmt::Display for ConvergenceTime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConvergenceTime::At(t) => write!(f, "{t}"),
            ConvergenceTime::Never => f.write_str("never"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub experiment: ExperimentSpec,
    pub checkpoints: Vec<CheckpointStats>,
    pub convergence_time: ConvergenceTime,
    /// Subject λ per checkpoint, in trial order. Not serialized.
    #[serde(skip)]
    pub samples: Vec<Vec<f64>>,
}

pub const CSV_HEADER: &str = "n,mean,stderr,p05,p95,unfair_prob";

impl FairnessReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: FairnessReport =
            serde_json::from_str(text).map_err(|e| Error::Decode(e.to_string()))?;
        report
            .experiment
            .validate()
            .map_err(|e| Error::Decode(e.to_string()))?;
        Ok(report)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for c in &self.checkpoints {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.t, c.mean, c.stderr, c.p05, c.p95, c.unfair_prob
            ));
        }
        out
    }

    /// Statistics at the last checkpoint.
    pub fn final_stats(&self) -> &CheckpointStats {
        self.checkpoints
            .last()
            .expect("reports have at least one checkpoint")
    }

    pub fn stats_at(&self, t: u64) -> Option<&CheckpointStats> {
        self.checkpoints.iter().find(|c| c.t == t)
    }

    /// Subject samples at checkpoint `t`, if retained.
    pub fn samples_at(&self, t: u64) -> Option<&[f64]> {
        let i = self.checkpoints.iter().position(|c| c.t == t)?;
        self.samples.get(i).map(Vec::as_slice)
    }
}

/// Aggregates per-trial checkpoints (in trial order) into a report.
pub fn aggregate(spec: &ExperimentSpec, trials: &[Vec<Checkpoint>]) -> Result<FairnessReport> {
    if trials.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: trials.len(),
        });
    }
    let subject = spec.fairness.subject;
    let a = spec.subject_share();
    let mut checkpoints = Vec::with_capacity(spec.checkpoints.len());
    let mut samples = Vec::with_capacity(spec.checkpoints.len());
    for (ci, &t) in spec.checkpoints.iter().enumerate() {
        let column: Vec<f64> = trials
            .iter()
            .map(|trial| {
                let c = &trial[ci];
                debug_assert_eq!(c.t, t);
                c.lambda[subject]
            })
            .collect();
        let (mean, stderr) = mean_stderr(&column);
        let mut sorted = column.clone();
        sorted.sort_by(f64::total_cmp);
        checkpoints.push(CheckpointStats {
            t,
            mean,
            stderr,
            p05: percentile_nearest_rank(&sorted, 5.0),
            p95: percentile_nearest_rank(&sorted, 95.0),
            unfair_prob: unfair_probability(&column, a, spec.fairness.epsilon),
        });
        samples.push(column);
    }
    let convergence_time = convergence_over(
        checkpoints.iter().map(|c| (c.t, c.unfair_prob)),
        spec.fairness.delta,
    );
    Ok(FairnessReport {
        experiment: spec.clone(),
        checkpoints,
        convergence_time,
        samples,
    })
}

/// Runs all trials on the current rayon pool and aggregates them.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<FairnessReport> {
    if spec.trials < 2 {
        spec.validate()?;
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: spec.trials,
        });
    }
    let trials = run_trials(spec)?;
    aggregate(spec, &trials)
}

/// [`run_experiment`] on a dedicated pool of `threads` workers.
pub fn run_experiment_with_threads(
    spec: &ExperimentSpec,
    threads: usize,
) -> Result<FairnessReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidExperiment(format!("thread pool: {e}")))?;
    pool.install(|| run_experiment(spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ProtocolKind, ProtocolSpec};

    fn two_miner(kind: ProtocolKind, w: f64, horizon: u64) -> ExperimentSpec {
        ExperimentSpec::new(
            ProtocolSpec::new(kind, w, horizon),
            ShareVector::new(vec![0.2, 0.8]).unwrap(),
            7,
        )
    }

    #[test]
    fn checkpoint_schedule() {
        assert_eq!(default_checkpoints(1), vec![1]);
        assert_eq!(
            default_checkpoints(5000),
            vec![1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000]
        );
        assert_eq!(default_checkpoints(7), vec![1, 2, 5, 7]);
        assert_eq!(default_checkpoints(100_000).len(), 16);
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let mut seen = std::collections::HashSet::with_capacity(1_000_000);
        for i in 0..1_000_000u64 {
            assert!(seen.insert(derive_seed(42, i)));
        }
        assert_eq!(derive_seed(42, 17), derive_seed(42, 17));
        assert_ne!(derive_seed(42, 17), derive_seed(43, 17));
    }

    #[test]
    fn seed_monobit() {
        // fraction of one bits over 10^5 seeds; 4σ of a fair coin over 6.4e6 bits
        let ones: u64 = (0..100_000u64)
            .map(|i| derive_seed(2024, i).count_ones() as u64)
            .sum();
        let bits = 100_000.0 * 64.0;
        let sigma = (bits * 0.25f64).sqrt();
        assert!((ones as f64 - bits / 2.0).abs() < 4.0 * sigma);
    }

    #[test]
    fn splitmix_reference_value() {
        // SplitMix64 output for state 0x9E3779B97F4A7C15, i.e. index 1 of base 0
        assert_eq!(derive_seed(0, 1), 0xE220_A839_7B1D_CDAF);
        assert_eq!(derive_seed(0, 0), 0);
    }

    #[test]
    fn pow_one_block() {
        let spec = two_miner(ProtocolKind::Pow, 0.01, 1).with_trials(50);
        for i in 0..50 {
            let cps = run_trial(&spec, i).unwrap();
            assert_eq!(cps.len(), 1);
            let l = cps[0].lambda[0];
            assert!(l == 0.0 || l == 1.0);
        }
    }

    #[test]
    fn trials_are_deterministic() {
        let spec = two_miner(ProtocolKind::Mlpos, 0.01, 5000);
        let a = serde_json::to_string(&run_trial(&spec, 3).unwrap()).unwrap();
        let b = serde_json::to_string(&run_trial(&spec, 3).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_string(&run_trial(&spec, 4).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn lambda_sums_to_one() {
        let mut spec = ExperimentSpec::new(
            ProtocolSpec::cpos(0.01, 0.1, 4, 300),
            ShareVector::new(vec![0.2, 0.3, 0.5]).unwrap(),
            1,
        );
        spec.trials = 3;
        for i in 0..3 {
            for c in run_trial(&spec, i).unwrap() {
                assert!((c.lambda.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(c.lambda.iter().all(|&l| (0.0..=1.0 + 1e-12).contains(&l)));
            }
        }
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let good = two_miner(ProtocolKind::Pow, 0.01, 100).with_trials(10);
        assert!(good.validate().is_ok());
        assert!(two_miner(ProtocolKind::Mlpos, 0.0, 100).validate().is_err());
        assert!(good.clone().with_trials(0).validate().is_err());
        assert!(good.clone().with_checkpoints(vec![]).validate().is_err());
        assert!(good
            .clone()
            .with_checkpoints(vec![5, 5, 100])
            .validate()
            .is_err());
        assert!(good
            .clone()
            .with_checkpoints(vec![5, 50])
            .validate()
            .is_err());
        let mut bad_subject = good.clone();
        bad_subject.fairness.subject = 2;
        assert!(bad_subject.validate().is_err());
        assert!(run_experiment(&good.with_trials(1)).is_err());
    }

    #[test]
    fn parallelism_does_not_change_reports() {
        let spec = two_miner(ProtocolKind::Slpos, 0.01, 500).with_trials(64);
        let one = run_experiment_with_threads(&spec, 1).unwrap();
        let four = run_experiment_with_threads(&spec, 4).unwrap();
        assert_eq!(one.to_json(), four.to_json());
        assert_eq!(one.samples, four.samples);
    }

    #[test]
    fn pow_mean_is_unbiased() {
        let spec = two_miner(ProtocolKind::Pow, 0.01, 5000).with_trials(2000);
        let report = run_experiment(&spec).unwrap();
        let last = report.final_stats();
        assert!((last.mean - 0.2).abs() <= 3.0 * last.stderr, "{last:?}");
        assert!(last.p05 <= last.p95);
    }

    #[test]
    fn json_and_csv() {
        let spec = two_miner(ProtocolKind::Fslpos, 0.01, 200).with_trials(20);
        let report = run_experiment(&spec).unwrap();
        let back = FairnessReport::from_json(&report.to_json()).unwrap();
        assert_eq!(back.checkpoints, report.checkpoints);
        assert_eq!(back.experiment, report.experiment);
        assert_eq!(back.convergence_time, report.convergence_time);
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(lines.count(), report.checkpoints.len());
        assert!(FairnessReport::from_json("{}").is_err());
    }
}
