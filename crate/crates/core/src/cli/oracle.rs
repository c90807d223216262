use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::ConfigError;
use crate::metrics::{MetricsRow, Variant};
use crate::sim::{FailAt, FaultPlan, WorldRank};
use crate::topology::TreeShape;

use super::run::run_scenario;
use super::scenario::Scenario;

pub const MAX_EXHAUSTIVE_SIZE: u32 = 12;
const REPORTED: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleMode {
    Exhaustive,
    Random,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleConfig {
    pub max_size: u32,
    pub mode: OracleMode,
    pub trials: u32,
    pub seed: u64,
    pub variant: Variant,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Counterexample {
    pub scenario: Scenario,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OracleSummary {
    pub scenarios: usize,
    pub violations: usize,
    /// The first few violations, in enumeration order.
    pub counterexamples: Vec<Counterexample>,
}

impl OracleSummary {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Every pre-start fault subset of `0..s` except the one killing everyone.
pub fn exhaustive_scenarios(max_size: u32, variant: Variant) -> Vec<Scenario> {
    let mut out = Vec::new();
    for s in 1..=max_size {
        for mask in 0u32..(1 << s) - 1 {
            let mut sc = Scenario::new(s, variant);
            sc.id = format!("x{s}-{mask}");
            sc.faults = FaultPlan::before_start((0..s).filter(|r| mask >> r & 1 == 1));
            out.push(sc);
        }
    }
    out
}

/// Group sizes up to `max_size` with faults at uniform times over the span
/// of a fault-free run, plus some before the start.
pub fn random_scenarios(max_size: u32, trials: u32, seed: u64, variant: Variant) -> Vec<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|i| {
            let s = rng.gen_range(1..=max_size);
            let span = 2 * u64::from(TreeShape::new(s).bits()) + 2;
            let mut sc = Scenario::new(s, variant);
            sc.id = format!("r{i}");
            sc.seed = rng.gen();
            let n = rng.gen_range(0..=s);
            for _ in 0..n {
                let r = WorldRank(rng.gen_range(0..s));
                let at = if rng.gen_bool(0.2) {
                    FailAt::BeforeStart
                } else {
                    FailAt::At(rng.gen_range(0..=span))
                };
                sc.faults.insert(r, at);
            }
            if variant.uses_flags() || variant == Variant::Adaptive {
                sc.contributions = Some((0..s).map(|_| rng.gen_bool(0.9)).collect());
            }
            sc
        })
        .collect()
}

/// Why `row` violates the oracle, if it does.
pub fn violation(row: &MetricsRow) -> Option<String> {
    if row.deadlocked {
        return Some("run deadlocked".into());
    }
    if row.agreed == Some(false) {
        return Some("completing processes disagree".into());
    }
    if row.accurate == Some(false) {
        return Some("returned set differs from the live set".into());
    }
    None
}

pub fn check(scenarios: &[Scenario]) -> Result<OracleSummary, ConfigError> {
    let verdicts: Vec<Option<String>> = scenarios
        .par_iter()
        .map(|sc| run_scenario(sc).map(|(_, row)| violation(&row)))
        .collect::<Result<_, _>>()?;
    let mut summary = OracleSummary {
        scenarios: scenarios.len(),
        ..OracleSummary::default()
    };
    for (sc, v) in scenarios.iter().zip(verdicts) {
        if let Some(reason) = v {
            summary.violations += 1;
            if summary.counterexamples.len() < REPORTED {
                summary.counterexamples.push(Counterexample {
                    scenario: sc.clone(),
                    reason,
                });
            }
        }
    }
    Ok(summary)
}

pub fn oracle_check(cfg: &OracleConfig) -> Result<OracleSummary, ConfigError> {
    if cfg.max_size == 0 {
        return Err(ConfigError::Invalid("max size must be at least 1".into()));
    }
    let scenarios = match cfg.mode {
        OracleMode::Exhaustive => {
            if cfg.max_size > MAX_EXHAUSTIVE_SIZE {
                return Err(ConfigError::Invalid(format!(
                    "exhaustive mode supports sizes up to {MAX_EXHAUSTIVE_SIZE}"
                )));
            }
            exhaustive_scenarios(cfg.max_size, cfg.variant)
        }
        OracleMode::Random => random_scenarios(cfg.max_size, cfg.trials, cfg.seed, cfg.variant),
    };
    check(&scenarios)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::scenario::parse_scenario;

    fn cfg(max_size: u32, mode: OracleMode, variant: Variant) -> OracleConfig {
        OracleConfig {
            max_size,
            mode,
            trials: 200,
            seed: 3,
            variant,
        }
    }

    #[test]
    fn exhaustive_count() {
        let n: usize = (1..=8).map(|s| (1usize << s) - 1).sum();
        assert_eq!(n, 502);
        assert_eq!(exhaustive_scenarios(8, Variant::Adaptive).len(), n);
    }

    #[test]
    fn trivial_size_passes() {
        let s = oracle_check(&cfg(1, OracleMode::Exhaustive, Variant::Adaptive)).unwrap();
        assert_eq!((s.scenarios, s.violations), (1, 0));
    }

    #[test]
    fn naive_fails_with_a_reproducible_counterexample() {
        let s = oracle_check(&cfg(6, OracleMode::Exhaustive, Variant::Naive)).unwrap();
        assert!(!s.passed());
        let cx = &s.counterexamples[0];
        let again = parse_scenario(&cx.scenario.to_text()).unwrap();
        let (_, row) = run_scenario(&again).unwrap();
        assert_eq!(violation(&row).as_deref(), Some(cx.reason.as_str()));
    }

    #[test]
    fn random_mode_passes_for_adaptive() {
        let s = oracle_check(&cfg(32, OracleMode::Random, Variant::Adaptive)).unwrap();
        assert!(s.passed(), "{:?}", s.counterexamples.first());
    }

    #[test]
    fn oversized_exhaustive_is_rejected() {
        assert!(oracle_check(&cfg(13, OracleMode::Exhaustive, Variant::Adaptive)).is_err());
    }
}
