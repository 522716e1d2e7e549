//! Correlational check: baseline trait resilience against outcomes in the
//! control arms.

use serde::{Deserialize, Serialize};

use super::design::{DesignSpec, Term};
use super::{fit_cox, fit_lmm, fit_logistic, FitResult};
use crate::error::Result;
use crate::outcomes::{Outcome, OutcomeTable};
use crate::persona::{Arm, Trait};

const EXPOSURE: &str = "resilience";

/// How an association is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    HazardRatio,
    /// `exp(β) − 1` on a log outcome.
    PercentChange,
    /// Change in standard deviations of the outcome.
    SdChange,
    OddsRatio,
    Slope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineAssociation {
    pub outcome: Outcome,
    pub measure: Measure,
    /// Raw coefficient per SD of baseline resilience.
    pub beta: f64,
    pub se: f64,
    pub p_value: f64,
    /// The coefficient on the scale of `measure`.
    pub effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub associations: Vec<BaselineAssociation>,
    pub n_agents: usize,
}

impl BaselineReport {
    pub fn get(&self, o: Outcome) -> Option<&BaselineAssociation> {
        self.associations.iter().find(|a| a.outcome == o)
    }
}

/// Per-SD associations of baseline resilience with each outcome, over the
/// two sham arms, adjusting for timing.
pub fn baseline_validation(table: &OutcomeTable) -> Result<BaselineReport> {
    let control = table.filter_arms(&[Arm::Sham6, Arm::Sham18]);
    let terms = vec![Term::Trait(Trait::Resilience), Term::Age6];
    let mut associations = Vec::new();
    for o in Outcome::PRIMARY {
        let spec = DesignSpec::new(o, terms.clone());
        let (fit, measure): (FitResult, Measure) = match o {
            Outcome::Mortality => (fit_cox(&spec, &control)?, Measure::HazardRatio),
            Outcome::Chronic | Outcome::Dementia => (fit_logistic(&spec, &control)?, Measure::OddsRatio),
            Outcome::LogWealth => (fit_lmm(&spec, &control)?, Measure::PercentChange),
            Outcome::SwbZ => (fit_lmm(&spec, &control)?, Measure::SdChange),
            _ => (fit_lmm(&spec, &control)?, Measure::Slope),
        };
        let t = fit.require(EXPOSURE)?;
        let effect = match measure {
            Measure::HazardRatio | Measure::OddsRatio => t.ratio(),
            Measure::PercentChange => t.estimate.exp_m1(),
            Measure::SdChange | Measure::Slope => t.estimate,
        };
        associations.push(BaselineAssociation {
            outcome: o,
            measure,
            beta: t.estimate,
            se: t.se,
            p_value: t.p_value,
            effect,
        });
    }
    Ok(BaselineReport {
        associations,
        n_agents: control.records.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::synthetic::{synthetic_table, Gaussian};

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Outcomes driven by `exposure(persona)`; shuffling the exposure
    /// breaks the link.
    fn table(shuffle: bool, seed: u64) -> OutcomeTable {
        let mut g = Gaussian::new(seed);
        let mut z = 0.0;
        synthetic_table(1500, seed, |p, arm, r| {
            if arm == Arm::Sham6 {
                z = if shuffle { g.sample() } else { p.trait_z(Trait::Resilience) };
            }
            let rate = 0.006 * (-0.15 * z).exp();
            let life = 6.0 - (1.0 - g.uniform()).ln() / rate;
            if life < 65.0 {
                r.mortality = 1;
                r.death_age = life as u32;
                r.log_wealth = None;
                r.swb_z = None;
                r.chronic = None;
                r.walking_speed = None;
                r.dementia = None;
                return;
            }
            r.log_wealth = Some(11.8 + 0.2 * z + 0.5 * g.sample());
            r.swb_z = Some(0.4 * z + g.sample());
            r.chronic = Some(u8::from(g.uniform() < sigmoid(-0.5 - 0.3 * z)));
            r.dementia = Some(u8::from(g.uniform() < sigmoid(-1.8 - 0.3 * z)));
            r.walking_speed = Some(118.0 + 3.0 * z + 5.0 * g.sample());
        })
    }

    #[test]
    fn signs_recovered() {
        let r = baseline_validation(&table(false, 21)).unwrap();
        assert!(r.get(Outcome::Mortality).unwrap().effect < 1.0);
        assert!(r.get(Outcome::LogWealth).unwrap().effect > 0.0);
        assert!(r.get(Outcome::SwbZ).unwrap().effect > 0.0);
        assert!(r.get(Outcome::Dementia).unwrap().effect < 1.0);
        assert!(r.get(Outcome::WalkingSpeed).unwrap().effect > 0.0);
        assert_eq!(r.n_agents, 3000);
    }

    #[test]
    fn shuffled_exposure_is_null() {
        let r = baseline_validation(&table(true, 22)).unwrap();
        for a in &r.associations {
            assert!(a.beta.abs() < 4.0 * a.se, "{:?}: beta {} se {}", a.outcome, a.beta, a.se);
        }
    }
}
