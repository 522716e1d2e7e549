//! Synthetic outcome tables for oracles, benchmarks and power checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::outcomes::{OutcomeRecord, OutcomeTable};
use crate::persona::{agent_id, sample_personas, Arm, MatrixConfig, PersonaSpec};

/// A surviving record with every outcome set to zero.
pub fn blank_record(persona_id: u64, arm: Arm) -> OutcomeRecord {
    OutcomeRecord {
        agent_id: agent_id(persona_id, arm),
        persona_id,
        arm,
        mortality: 0,
        death_age: 65,
        log_wealth: Some(0.0),
        swb_raw: Some(0.0),
        swb_z: Some(0.0),
        chronic: Some(0),
        walking_speed: Some(0.0),
        dementia: Some(0),
        coping_rate: Some(0.0),
        behavioral_resilience_z: Some(0.0),
    }
}

/// Four clones for each of `n` sampled personas, filled in by `fill`.
pub fn synthetic_table<F>(n: usize, seed: u64, mut fill: F) -> OutcomeTable
where
    F: FnMut(&PersonaSpec, Arm, &mut OutcomeRecord),
{
    let personas = sample_personas(n, seed, &MatrixConfig::default()).expect("default matrix");
    let mut records = Vec::with_capacity(4 * n);
    for p in &personas {
        for arm in Arm::ALL {
            let mut r = blank_record(p.persona_id, arm);
            fill(p, arm, &mut r);
            records.push(r);
        }
    }
    OutcomeTable::new(records, personas).expect("records match personas")
}

/// Seeded standard-normal source.
pub struct Gaussian(ChaCha8Rng);

impl Gaussian {
    pub fn new(seed: u64) -> Self {
        Gaussian(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn sample(&mut self) -> f64 {
        let u: f64 = self.0.random();
        Normal::standard().inverse_cdf(u.clamp(1e-15, 1.0 - 1e-15))
    }

    pub fn uniform(&mut self) -> f64 {
        self.0.random()
    }
}

/// Log-wealth table with persona intercepts of SD `intercept_sd`, residual
/// SD `resid_sd` and an additive ROS effect `beta`.
pub fn log_wealth_table(n: usize, seed: u64, beta: f64, intercept_sd: f64, resid_sd: f64) -> OutcomeTable {
    let mut g = Gaussian::new(seed);
    let mut current = (u64::MAX, 0.0);
    synthetic_table(n, seed, |p, arm, r| {
        if current.0 != p.persona_id {
            current = (p.persona_id, intercept_sd * g.sample());
        }
        let ros = if arm.is_ros() { beta } else { 0.0 };
        r.log_wealth = Some(11.8 + current.1 + ros + resid_sd * g.sample());
    })
}
