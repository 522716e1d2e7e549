//! Fixtures shared by the benchmarks.

use clonesim_core::behavior::ScriptedBackend;
use clonesim_core::calibration::scripted_table;
use clonesim_core::persona::{sample_personas, MatrixConfig};
use clonesim_core::{OutcomeTable, PersonaSpec, PolicyParams, SimInputs};

pub const SEED: u64 = 2024;

pub fn personas(n: usize) -> Vec<PersonaSpec> {
    sample_personas(n, SEED, &MatrixConfig::default()).expect("shipped matrix samples")
}

pub fn inputs() -> SimInputs {
    SimInputs::shipped(SEED)
}

pub fn backend() -> ScriptedBackend {
    ScriptedBackend::new(PolicyParams::default())
}

/// Outcome table from a scripted run of `n` personas.
pub fn simulated_table(n: usize) -> OutcomeTable {
    scripted_table(n, &inputs(), &PolicyParams::default()).expect("scripted run succeeds")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_build() {
        assert_eq!(personas(3).len(), 3);
        assert_eq!(simulated_table(5).records.len(), 20);
    }
}
