//! Within-persona clone contrasts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StatsError};
use crate::outcomes::{Outcome, OutcomeTable};
use crate::persona::Arm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contrast {
    RosVsShamAge6,
    RosVsShamAge18,
    /// `(ROS − Sham)₆ − (ROS − Sham)₁₈`.
    Interaction,
    /// `ROS₆ − ROS₁₈`.
    RosAge6VsAge18,
}

impl Contrast {
    pub const ALL: [Contrast; 4] = [
        Contrast::RosVsShamAge6,
        Contrast::RosVsShamAge18,
        Contrast::Interaction,
        Contrast::RosAge6VsAge18,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Contrast::RosVsShamAge6 => "ros_vs_sham_age6",
            Contrast::RosVsShamAge18 => "ros_vs_sham_age18",
            Contrast::Interaction => "interaction",
            Contrast::RosAge6VsAge18 => "ros_age6_vs_age18",
        }
    }

    fn difference(self, v: &[Option<f64>; 4]) -> Option<f64> {
        let at = |a: Arm| v[a.index()];
        match self {
            Contrast::RosVsShamAge6 => Some(at(Arm::Ros6)? - at(Arm::Sham6)?),
            Contrast::RosVsShamAge18 => Some(at(Arm::Ros18)? - at(Arm::Sham18)?),
            Contrast::Interaction => Some(
                (at(Arm::Ros6)? - at(Arm::Sham6)?) - (at(Arm::Ros18)? - at(Arm::Sham18)?),
            ),
            Contrast::RosAge6VsAge18 => Some(at(Arm::Ros6)? - at(Arm::Ros18)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedEffect {
    pub contrast: Contrast,
    pub outcome: Outcome,
    pub mean: f64,
    /// `sd(differences) / √n`; zero for a single pair.
    pub se: f64,
    pub n_pairs: usize,
}

/// Per-persona differences for every contrast. Pairs with a missing value
/// (a deceased clone, for non-mortality outcomes) are dropped.
pub fn paired_effects(table: &OutcomeTable, outcome: Outcome) -> Result<Vec<PairedEffect>> {
    let mut by_persona: BTreeMap<u64, [Option<f64>; 4]> = BTreeMap::new();
    for r in &table.records {
        by_persona.entry(r.persona_id).or_default()[r.arm.index()] = outcome.value(r);
    }
    Contrast::ALL
        .iter()
        .map(|c| {
            let diffs: Vec<f64> = by_persona.values().filter_map(|v| c.difference(v)).collect();
            if diffs.is_empty() {
                return Err(StatsError::EmptySample(format!(
                    "no usable pairs for {} on {}",
                    c.name(),
                    outcome.name()
                ))
                .into());
            }
            let n = diffs.len() as f64;
            let mean = diffs.iter().sum::<f64>() / n;
            let se = if diffs.len() > 1 {
                (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
            } else {
                0.0
            };
            Ok(PairedEffect {
                contrast: *c,
                outcome,
                mean,
                se,
                n_pairs: diffs.len(),
            })
        })
        .collect()
}

/// Behavioral-resilience boost of ROS over sham, at age 6 and at age 18.
pub fn efficacy(table: &OutcomeTable) -> Result<(PairedEffect, PairedEffect)> {
    let all = paired_effects(table, Outcome::BehavioralResilience)?;
    let pick = |c: Contrast| all.iter().find(|e| e.contrast == c).cloned().expect("all contrasts computed");
    Ok((pick(Contrast::RosVsShamAge6), pick(Contrast::RosVsShamAge18)))
}
