//! Scripted-backend calibration: evaluate a policy against the target
//! effect sizes and tune the ROS coefficients.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::behavior::{PolicyParams, ScriptedBackend};
use crate::engine::{simulate_in_memory, SimInputs};
use crate::error::Result;
use crate::outcomes::{Outcome, OutcomeParams, OutcomeTable, SentimentMode};
use crate::persona::{sample_personas, Arm, MatrixConfig};
use crate::report::{summarize_conditions, ConditionSummary, DirectionCheck};
use crate::stats::{baseline_validation, efficacy, BaselineReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    pub efficacy_age6: f64,
    pub efficacy_age18: f64,
    pub efficacy_tol: f64,
    pub control_mortality: f64,
    pub mortality_tol: f64,
    pub hazard_ratio_min: f64,
    pub hazard_ratio_max: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        CalibrationTargets {
            efficacy_age6: 0.81,
            efficacy_age18: 0.45,
            efficacy_tol: 0.10,
            control_mortality: 0.20,
            mortality_tol: 0.03,
            hazard_ratio_min: 0.80,
            hazard_ratio_max: 0.95,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub n_personas: usize,
    pub efficacy_age6: f64,
    pub efficacy_age18: f64,
    /// Mortality pooled over both sham arms.
    pub control_mortality: f64,
    pub summary: ConditionSummary,
    pub directions: Vec<DirectionCheck>,
    pub baseline: BaselineReport,
}

/// One named pass/fail line.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CalibrationReport {
    pub fn hazard_ratio(&self) -> f64 {
        self.baseline
            .get(Outcome::Mortality)
            .map_or(f64::NAN, |a| a.effect)
    }

    pub fn checks(&self, t: &CalibrationTargets) -> Vec<Check> {
        let mut out = Vec::new();
        let near = |v: f64, target: f64, tol: f64| (v - target).abs() <= tol;
        out.push(Check {
            name: "efficacy at age 6".into(),
            passed: near(self.efficacy_age6, t.efficacy_age6, t.efficacy_tol),
            detail: format!("{:.3} SD (target {} ± {})", self.efficacy_age6, t.efficacy_age6, t.efficacy_tol),
        });
        out.push(Check {
            name: "efficacy at age 18".into(),
            passed: near(self.efficacy_age18, t.efficacy_age18, t.efficacy_tol),
            detail: format!("{:.3} SD (target {} ± {})", self.efficacy_age18, t.efficacy_age18, t.efficacy_tol),
        });
        out.push(Check {
            name: "control mortality".into(),
            passed: near(self.control_mortality, t.control_mortality, t.mortality_tol),
            detail: format!(
                "{:.1}% (target {:.0} ± {:.0} points)",
                100.0 * self.control_mortality,
                100.0 * t.control_mortality,
                100.0 * t.mortality_tol
            ),
        });
        for d in &self.directions {
            out.push(Check {
                name: format!("direction {}", d.outcome.name()),
                passed: d.all(),
                detail: format!(
                    "ROS>Sham@6 {} ROS>Sham@18 {} ROS6>ROS18 {}",
                    d.ros_better_age6, d.ros_better_age18, d.early_better
                ),
            });
        }
        let b = |o: Outcome| self.baseline.get(o).map(|a| a.effect);
        let hr = self.hazard_ratio();
        out.push(Check {
            name: "baseline mortality HR".into(),
            passed: (t.hazard_ratio_min..=t.hazard_ratio_max).contains(&hr),
            detail: format!("{hr:.3} (target [{}, {}])", t.hazard_ratio_min, t.hazard_ratio_max),
        });
        for (o, want_positive, label) in [
            (Outcome::LogWealth, true, "baseline wealth association"),
            (Outcome::SwbZ, true, "baseline SWB association"),
            (Outcome::Dementia, false, "baseline dementia OR"),
        ] {
            let v = b(o).unwrap_or(f64::NAN);
            let passed = if want_positive { v > 0.0 } else { v < 1.0 };
            out.push(Check {
                name: label.into(),
                passed,
                detail: format!("{v:.3}"),
            });
        }
        out
    }

    pub fn render(&self, t: &CalibrationTargets) -> String {
        let mut s = self.summary.render();
        let _ = writeln!(s);
        for c in self.checks(t) {
            let _ = writeln!(s, "[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        s
    }
}

/// Simulates `n_personas` scripted personas and extracts the outcome table.
pub fn scripted_table(n_personas: usize, inputs: &SimInputs, policy: &PolicyParams) -> Result<OutcomeTable> {
    let personas = sample_personas(n_personas, inputs.master_seed, &MatrixConfig::default())?;
    let backend = ScriptedBackend { params: *policy };
    let trajs = simulate_in_memory(&personas, inputs, &backend)?;
    OutcomeTable::from_trajectories(
        &trajs,
        personas,
        &OutcomeParams::default(),
        SentimentMode::Scripted {
            master_seed: inputs.master_seed,
        },
    )
}

pub fn evaluate_table(table: &OutcomeTable) -> Result<CalibrationReport> {
    let (e6, e18) = efficacy(table)?;
    let summary = summarize_conditions(&table.records)?;
    let control: Vec<_> = table
        .records
        .iter()
        .filter(|r| matches!(r.arm, Arm::Sham6 | Arm::Sham18))
        .collect();
    let deaths = control.iter().filter(|r| r.mortality == 1).count();
    Ok(CalibrationReport {
        n_personas: table.personas.len(),
        efficacy_age6: e6.mean,
        efficacy_age18: e18.mean,
        control_mortality: deaths as f64 / control.len().max(1) as f64,
        directions: summary.directions(),
        summary,
        baseline: baseline_validation(table)?,
    })
}

pub fn evaluate(n_personas: usize, inputs: &SimInputs, policy: &PolicyParams) -> Result<CalibrationReport> {
    evaluate_table(&scripted_table(n_personas, inputs, policy)?)
}

fn efficacies(n: usize, inputs: &SimInputs, p: &PolicyParams) -> Result<(f64, f64)> {
    let t = scripted_table(n, inputs, p)?;
    let (a, b) = efficacy(&t)?;
    Ok((a.mean, b.mean))
}

/// Adjusts `ros6` and `ros18` by secant iteration until both efficacy
/// targets are met within `tol`, or `max_rounds` is reached.
pub fn tune_ros(
    n_personas: usize,
    inputs: &SimInputs,
    start: &PolicyParams,
    targets: &CalibrationTargets,
    tol: f64,
    max_rounds: usize,
) -> Result<PolicyParams> {
    let mut p = *start;
    let mut prev: Option<(f64, f64, f64, f64)> = None;
    for round in 0..max_rounds {
        let (e6, e18) = efficacies(n_personas, inputs, &p)?;
        log::info!("round {round}: ros6 {:.4} -> {e6:.4}, ros18 {:.4} -> {e18:.4}", p.ros6, p.ros18);
        let (r6, r18) = (e6 - targets.efficacy_age6, e18 - targets.efficacy_age18);
        if r6.abs() < tol && r18.abs() < tol {
            break;
        }
        // Slopes from the previous round, or a proportional first step.
        let (s6, s18) = match prev {
            Some((p6, q6, p18, q18)) => (
                ((e6 - q6) / (p.ros6 - p6)).max(0.05),
                ((e18 - q18) / (p.ros18 - p18)).max(0.05),
            ),
            None => ((e6 / p.ros6.max(0.05)).max(0.05), (e18 / p.ros18.max(0.05)).max(0.05)),
        };
        prev = Some((p.ros6, e6, p.ros18, e18));
        if r6.abs() >= tol {
            p.ros6 = (p.ros6 - r6 / s6).max(0.0);
        }
        if r18.abs() >= tol {
            p.ros18 = (p.ros18 - r18 / s18).max(0.0);
        }
    }
    Ok(p)
}
