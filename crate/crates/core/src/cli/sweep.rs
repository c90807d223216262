use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::ConfigError;
use crate::metrics::{MetricsRow, Variant};
use crate::sim::{FaultPlan, WorldRank};

use super::run::run_scenario;
use super::scenario::Scenario;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub sizes: Vec<u32>,
    pub fail_fracs: Vec<f64>,
    pub reps: u32,
    pub seed: u64,
    pub variants: Vec<Variant>,
    /// World size; each group is `0..s` inside it. Defaults to `s`.
    pub world: Option<u32>,
}

/// Seed of one sweep cell, independent of every other cell.
pub fn cell_seed(base: u64, s: u32, frac: f64, rep: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_be_bytes());
    h.update(s.to_be_bytes());
    h.update(frac.to_bits().to_be_bytes());
    h.update(rep.to_be_bytes());
    let d = h.finalize();
    u64::from_be_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(&s) = self.sizes.iter().find(|&&s| s == 0) {
            return Err(ConfigError::Invalid(format!("group size {s} is below 1")));
        }
        if let Some(f) = self.fail_fracs.iter().find(|f| !(0.0..1.0).contains(*f)) {
            return Err(ConfigError::Invalid(format!(
                "failure fraction {f} is outside [0, 1)"
            )));
        }
        if let Some(w) = self.world {
            if let Some(s) = self.sizes.iter().find(|&&s| s > w) {
                return Err(ConfigError::Invalid(format!(
                    "group size {s} exceeds world size {w}"
                )));
            }
        }
        if self.variants.is_empty() {
            return Err(ConfigError::Invalid("no variants given".into()));
        }
        Ok(())
    }

    /// Scenarios in output order: size, fraction, repetition, variant.
    pub fn scenarios(&self) -> Vec<Scenario> {
        let mut out = Vec::new();
        for &s in &self.sizes {
            for &frac in &self.fail_fracs {
                for rep in 0..self.reps {
                    let seed = cell_seed(self.seed, s, frac, rep);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let dead = (frac * f64::from(s)).floor() as usize;
                    let plan = FaultPlan::before_start(
                        sample(&mut rng, s as usize, dead)
                            .into_iter()
                            .map(|i| i as u32),
                    );
                    let bits: Vec<bool> = (0..s).map(|_| rng.gen_bool(0.9)).collect();
                    for &variant in &self.variants {
                        let mut sc = Scenario::new(self.world.unwrap_or(s), variant);
                        sc.id = format!("s{s}-f{frac}-r{rep}");
                        sc.group = (0..s).map(WorldRank).collect();
                        sc.faults = plan.clone();
                        sc.seed = seed;
                        if variant.uses_flags() {
                            sc.contributions = Some(bits.clone());
                        }
                        out.push(sc);
                    }
                }
            }
        }
        out
    }
}

/// Run every cell, in parallel, and return rows in deterministic order.
pub fn sweep(cfg: &SweepConfig) -> Result<Vec<MetricsRow>, ConfigError> {
    cfg.validate()?;
    cfg.scenarios()
        .par_iter()
        .map(|sc| run_scenario(sc).map(|(_, row)| row))
        .collect()
}
