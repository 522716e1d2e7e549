//! Condition summaries, effect conversions, projections and report output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::outcomes::{Outcome, OutcomeRecord, OutcomeTable};
use crate::persona::{Arm, Category, Ses};
use crate::stats::{
    baseline_validation, efficacy, fit_cox, fit_lmm, fit_logistic, mediation, paired_effects,
    write_fits_csv, BaselineReport, Contrast, DesignSpec, FitResult, Mediation, Moderator,
    PairedEffect,
};

/// Statistics of one timing × treatment cell. Mortality is over all agents,
/// everything else over survivors; `None` marks an empty population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub arm: Arm,
    pub n: usize,
    pub n_alive: usize,
    pub mortality: Option<f64>,
    pub log_wealth: Option<f64>,
    pub swb_z: Option<f64>,
    pub chronic: Option<f64>,
    pub walking_speed: Option<f64>,
    pub dementia: Option<f64>,
}

impl CellStats {
    pub fn value(&self, o: Outcome) -> Option<f64> {
        match o {
            Outcome::Mortality => self.mortality,
            Outcome::LogWealth => self.log_wealth,
            Outcome::SwbZ => self.swb_z,
            Outcome::Chronic => self.chronic,
            Outcome::WalkingSpeed => self.walking_speed,
            Outcome::Dementia => self.dementia,
            Outcome::BehavioralResilience => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    /// One entry per arm, in `Arm::ALL` order.
    pub cells: Vec<CellStats>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn summarize_conditions(records: &[OutcomeRecord]) -> Result<ConditionSummary> {
    if records.is_empty() {
        return Err(Error::Data("outcome table is empty".into()));
    }
    let cells = Arm::ALL
        .iter()
        .map(|arm| {
            let rs: Vec<&OutcomeRecord> = records.iter().filter(|r| r.arm == *arm).collect();
            let of = |o: Outcome| mean(rs.iter().filter_map(|r| o.value(r)));
            CellStats {
                arm: *arm,
                n: rs.len(),
                n_alive: rs.iter().filter(|r| r.alive()).count(),
                mortality: of(Outcome::Mortality),
                log_wealth: of(Outcome::LogWealth),
                swb_z: of(Outcome::SwbZ),
                chronic: of(Outcome::Chronic),
                walking_speed: of(Outcome::WalkingSpeed),
                dementia: of(Outcome::Dementia),
            }
        })
        .collect();
    Ok(ConditionSummary { cells })
}

impl ConditionSummary {
    pub fn cell(&self, arm: Arm) -> &CellStats {
        &self.cells[arm.index()]
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for c in &self.cells {
            out.serialize(c)?;
        }
        out.flush().map_err(|e| Error::io("<summary csv>", e))?;
        Ok(())
    }

    /// Directional comparisons per outcome.
    pub fn directions(&self) -> Vec<DirectionCheck> {
        Outcome::PRIMARY
            .iter()
            .map(|o| {
                let v = |a: Arm| self.cell(a).value(*o);
                let better = |x: Option<f64>, y: Option<f64>| match (x, y) {
                    (Some(x), Some(y)) => {
                        if o.higher_is_better() {
                            x > y
                        } else {
                            x < y
                        }
                    }
                    _ => false,
                };
                DirectionCheck {
                    outcome: *o,
                    ros_better_age6: better(v(Arm::Ros6), v(Arm::Sham6)),
                    ros_better_age18: better(v(Arm::Ros18), v(Arm::Sham18)),
                    early_better: better(v(Arm::Ros6), v(Arm::Ros18)),
                }
            })
            .collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Mean life outcomes at age 65 by condition");
        let _ = writeln!(s, "(mortality over all agents; other outcomes over survivors)");
        let _ = write!(s, "{:<24}", "");
        for c in &self.cells {
            let _ = write!(s, "{:>10}", c.arm.label());
        }
        let _ = writeln!(s);
        let rows: [(&str, Outcome, f64, usize); 6] = [
            ("Mortality (%)", Outcome::Mortality, 100.0, 1),
            ("log(Wealth)", Outcome::LogWealth, 1.0, 2),
            ("SWB (z)", Outcome::SwbZ, 1.0, 2),
            ("Chronic disease (%)", Outcome::Chronic, 100.0, 1),
            ("Walking speed (cm/s)", Outcome::WalkingSpeed, 1.0, 1),
            ("Dementia (%)", Outcome::Dementia, 100.0, 1),
        ];
        for (label, o, scale, prec) in rows {
            let _ = write!(s, "{label:<24}");
            for c in &self.cells {
                match c.value(o) {
                    Some(v) => {
                        let _ = write!(s, "{:>10.*}", prec, v * scale);
                    }
                    None => {
                        let _ = write!(s, "{:>10}", "n/a");
                    }
                }
            }
            let _ = writeln!(s);
        }
        let _ = write!(s, "{:<24}", "n alive / n");
        for c in &self.cells {
            let _ = write!(s, "{:>10}", format!("{}/{}", c.n_alive, c.n));
        }
        let _ = writeln!(s);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionCheck {
    pub outcome: Outcome,
    pub ros_better_age6: bool,
    pub ros_better_age18: bool,
    /// ROS at age 6 better than ROS at age 18.
    pub early_better: bool,
}

impl DirectionCheck {
    pub fn all(&self) -> bool {
        self.ros_better_age6 && self.ros_better_age18 && self.early_better
    }
}

/// Percent change implied by a log-scale coefficient: `exp(β) − 1`.
pub fn effect_to_percent(beta_log_points: f64) -> f64 {
    beta_log_points.exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionInput {
    pub cohort_size: f64,
    pub baseline_wealth: f64,
    pub effect_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub per_person_gain: f64,
    pub total_gain: f64,
}

pub fn societal_projection(p: &ProjectionInput) -> Result<Projection> {
    if !(p.cohort_size.is_finite() && p.baseline_wealth.is_finite() && p.effect_fraction.is_finite()) {
        return Err(Error::Usage("projection inputs must be finite".into()));
    }
    if p.cohort_size < 0.0 {
        return Err(Error::Usage("cohort size must be non-negative".into()));
    }
    if p.effect_fraction < -1.0 {
        return Err(Error::Usage("effect fraction must be at least -1".into()));
    }
    let per_person_gain = p.baseline_wealth * p.effect_fraction;
    Ok(Projection {
        per_person_gain,
        total_gain: per_person_gain * p.cohort_size,
    })
}

/// Mean and standard error of an outcome in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMean {
    pub cell: String,
    pub mean: f64,
    #[serde(rename = "SE")]
    pub se: f64,
}

pub fn cell_means(table: &OutcomeTable, outcome: Outcome) -> Vec<CellMean> {
    Arm::ALL
        .iter()
        .map(|arm| {
            let v: Vec<f64> = table
                .records
                .iter()
                .filter(|r| r.arm == *arm)
                .filter_map(|r| outcome.value(r))
                .collect();
            let n = v.len() as f64;
            let m = if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / n };
            let se = if v.len() > 1 {
                (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
            } else {
                f64::NAN
            };
            CellMean {
                cell: arm.label().to_string(),
                mean: m,
                se,
            }
        })
        .collect()
}

/// ROS effect on an outcome within one SES class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SesEffect {
    pub ses: String,
    pub cohort: u32,
    pub effect: f64,
    pub se: f64,
    pub n_pairs: usize,
}

pub fn ses_effects(table: &OutcomeTable, outcome: Outcome) -> Result<Vec<SesEffect>> {
    let mut out = Vec::new();
    for ses in Ses::ALL {
        let sub = OutcomeTable::new(
            table
                .records
                .iter()
                .filter(|r| table.persona(r.persona_id).ses == *ses)
                .cloned()
                .collect(),
            table.personas.clone(),
        )?;
        if sub.records.is_empty() {
            continue;
        }
        for e in paired_effects(&sub, outcome)? {
            let cohort = match e.contrast {
                Contrast::RosVsShamAge6 => 6,
                Contrast::RosVsShamAge18 => 18,
                _ => continue,
            };
            out.push(SesEffect {
                ses: ses.to_string(),
                cohort,
                effect: e.mean,
                se: e.se,
                n_pairs: e.n_pairs,
            });
        }
    }
    Ok(out)
}

/// Inputs of the plot-data files; each file needs its own input.
#[derive(Debug, Default, Clone)]
pub struct PlotInputs<'a> {
    pub efficacy: Option<&'a (PairedEffect, PairedEffect)>,
    pub cell_means: Option<&'a [CellMean]>,
    pub ses_effects: Option<&'a [SesEffect]>,
    pub baseline: Option<&'a BaselineReport>,
}

pub const PLOT_EFFICACY: &str = "plot_efficacy_by_cohort.csv";
pub const PLOT_CELLS: &str = "plot_timing_treatment_cells.csv";
pub const PLOT_SES: &str = "plot_ses_treatment.csv";
pub const PLOT_BASELINE: &str = "plot_baseline_validation.csv";

fn missing(name: &str) -> Error {
    Error::Data(format!("missing input for plot data: {name}"))
}

fn write_csv_file<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct EfficacyRow {
    cohort: u32,
    effect_sd: f64,
    se: f64,
    n_pairs: usize,
}

#[derive(Serialize)]
struct BaselineRow {
    outcome: &'static str,
    measure: String,
    effect: f64,
    beta: f64,
    se: f64,
    p_value: f64,
}

/// Writes one CSV per figure into `dir` and returns the paths.
pub fn emit_plot_data(inputs: &PlotInputs<'_>, dir: &Path) -> Result<Vec<PathBuf>> {
    let eff = inputs.efficacy.ok_or_else(|| missing("efficacy"))?;
    let cells = inputs.cell_means.ok_or_else(|| missing("cell_means"))?;
    let ses = inputs.ses_effects.ok_or_else(|| missing("ses_effects"))?;
    let base = inputs.baseline.ok_or_else(|| missing("baseline"))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();

    let p = dir.join(PLOT_EFFICACY);
    let rows: Vec<EfficacyRow> = [(6, &eff.0), (18, &eff.1)]
        .into_iter()
        .map(|(cohort, e)| EfficacyRow {
            cohort,
            effect_sd: e.mean,
            se: e.se,
            n_pairs: e.n_pairs,
        })
        .collect();
    write_csv_file(&p, &rows)?;
    paths.push(p);

    let p = dir.join(PLOT_CELLS);
    write_csv_file(&p, cells)?;
    paths.push(p);

    let p = dir.join(PLOT_SES);
    write_csv_file(&p, ses)?;
    paths.push(p);

    let p = dir.join(PLOT_BASELINE);
    let rows: Vec<BaselineRow> = base
        .associations
        .iter()
        .map(|a| BaselineRow {
            outcome: a.outcome.name(),
            measure: serde_json::to_value(a.measure)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            effect: a.effect,
            beta: a.beta,
            se: a.se,
            p_value: a.p_value,
        })
        .collect();
    write_csv_file(&p, &rows)?;
    paths.push(p);
    Ok(paths)
}

/// Row label for a model term in the text report.
pub fn term_label(term: &str) -> String {
    match term {
        "(Intercept)" => "(Intercept)".into(),
        "ros" => "ROS Intervention (vs. Sham)".into(),
        "age6" => "Age 6 Timing (vs. Age 18)".into(),
        "ros:age6" => "ROS Intervention x Age 6 Timing".into(),
        "ses_high" => "SES: High (vs. Low)".into(),
        "ses_middle" => "SES: Middle (vs. Low)".into(),
        "working_memory" => "Working Memory (SD)".into(),
        "resilience" => "Resilience Baseline (SD)".into(),
        "conscientiousness" => "Conscientiousness (SD)".into(),
        "neuroticism" => "Neuroticism (SD)".into(),
        "openness" => "Openness (SD)".into(),
        "extraversion" => "Extraversion (SD)".into(),
        "agreeableness" => "Agreeableness (SD)".into(),
        "gender_male" => "Gender: Male (vs. Female)".into(),
        t if t.starts_with("race_") => format!("Race: {} (vs. White)", &t[5..]),
        t if t.starts_with("ros:") => format!("ROS x {}", term_label(&t[4..])),
        t => t.into(),
    }
}

fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        "< .001".into()
    } else {
        format!("{p:.3}")
    }
}

/// Regression table with one row per term.
pub fn render_fit(f: &FitResult, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{title}");
    let _ = writeln!(s, "{:<40}{:>14}{:>12}{:>10}", "Predictor", "Estimate (β)", "Std. Error", "p-value");
    for t in &f.terms {
        let _ = writeln!(
            s,
            "{:<40}{:>14.3}{:>12.3}{:>10}",
            term_label(&t.term),
            t.estimate,
            t.se,
            fmt_p(t.p_value)
        );
    }
    let _ = writeln!(s, "n = {} agents, {} personas", f.n_obs, f.n_groups);
    if let Some(v) = f.variance {
        let _ = writeln!(
            s,
            "Persona intercept variance {:.4}, residual variance {:.4}",
            v.persona, v.residual
        );
    }
    s
}

/// Everything `analyze` produces.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub summary: ConditionSummary,
    pub paired: Vec<PairedEffect>,
    pub efficacy: Option<(PairedEffect, PairedEffect)>,
    pub fits: Vec<FitResult>,
    pub moderators: Vec<(Moderator, FitResult)>,
    pub mediation: Vec<(Outcome, Mediation)>,
    pub baseline: Option<BaselineReport>,
    pub cell_means: Vec<CellMean>,
    pub ses_effects: Vec<SesEffect>,
    /// Analyses that could not be run, with the reason.
    pub skipped: Vec<(String, String)>,
}

fn fit_primary(o: Outcome, table: &OutcomeTable) -> Result<FitResult> {
    let spec = DesignSpec::full(o);
    match o {
        Outcome::Mortality => fit_cox(&spec, table),
        Outcome::Chronic | Outcome::Dementia => fit_logistic(&spec, table),
        _ => fit_lmm(&spec, table),
    }
}

/// Runs every analysis on the table. Individual fits that fail are listed
/// in `skipped` instead of aborting the rest.
pub fn analyze(table: &OutcomeTable) -> Result<Analysis> {
    let summary = summarize_conditions(&table.records)?;
    let mut skipped = Vec::new();
    let mut note = |what: &str, e: Error| skipped.push((what.to_string(), e.to_string()));

    let mut paired = Vec::new();
    for o in Outcome::PRIMARY.iter().chain([&Outcome::BehavioralResilience]) {
        match paired_effects(table, *o) {
            Ok(v) => paired.extend(v),
            Err(e) => note(&format!("paired {}", o.name()), e),
        }
    }
    let eff = efficacy(table).map_err(|e| note("efficacy", e)).ok();
    let mut fits = Vec::new();
    for o in Outcome::PRIMARY {
        match fit_primary(o, table) {
            Ok(f) => fits.push(f),
            Err(e) => note(&format!("model {}", o.name()), e),
        }
    }
    let mut moderators = Vec::new();
    for m in [Moderator::Ses, Moderator::WorkingMemory, Moderator::Conscientiousness] {
        match fit_lmm(&DesignSpec::full(Outcome::LogWealth).with_moderator(m), table) {
            Ok(f) => moderators.push((m, f)),
            Err(e) => note(&format!("moderator {m:?}"), e),
        }
    }
    let mut med = Vec::new();
    for o in [Outcome::LogWealth, Outcome::SwbZ, Outcome::WalkingSpeed] {
        match mediation(table, o, &Arm::ALL) {
            Ok(m) => med.push((o, m)),
            Err(e) => note(&format!("mediation {}", o.name()), e),
        }
    }
    let baseline = baseline_validation(table).map_err(|e| note("baseline validation", e)).ok();
    let ses = ses_effects(table, Outcome::LogWealth).map_err(|e| note("ses effects", e)).unwrap_or_default();
    Ok(Analysis {
        summary,
        paired,
        efficacy: eff,
        fits,
        moderators,
        mediation: med,
        baseline,
        cell_means: cell_means(table, Outcome::LogWealth),
        ses_effects: ses,
        skipped,
    })
}

impl Analysis {
    pub fn render_text(&self) -> String {
        let mut s = self.summary.render();
        if let Some((e6, e18)) = &self.efficacy {
            let _ = writeln!(s, "\nBehavioral resilience boost (ROS - Sham, SD units)");
            let _ = writeln!(s, "  age 6:  {:+.3} (SE {:.3}, {} pairs)", e6.mean, e6.se, e6.n_pairs);
            let _ = writeln!(s, "  age 18: {:+.3} (SE {:.3}, {} pairs)", e18.mean, e18.se, e18.n_pairs);
        }
        let _ = writeln!(s, "\nPaired clone contrasts");
        for p in &self.paired {
            let _ = writeln!(
                s,
                "  {:<24}{:<20}{:>+10.4} (SE {:.4}, n {})",
                p.outcome.name(),
                p.contrast.name(),
                p.mean,
                p.se,
                p.n_pairs
            );
        }
        for f in &self.fits {
            let title = match f.outcome.as_str() {
                "mortality" => "\nCox proportional hazards: mortality (Breslow ties; exp(β) = hazard ratio)".to_string(),
                o if f.model == crate::stats::ModelKind::Logistic => format!("\nLogistic regression: {o} (exp(β) = odds ratio)"),
                o => format!("\nMixed-effects model (random persona intercept): {o}"),
            };
            s.push_str(&render_fit(f, &title));
        }
        for (m, f) in &self.moderators {
            s.push_str(&render_fit(f, &format!("\nModeration of the wealth effect by {m:?}")));
        }
        if !self.mediation.is_empty() {
            let _ = writeln!(s, "\nMediation through behavioral resilience (Sobel test)");
            for (o, m) in &self.mediation {
                let _ = writeln!(
                    s,
                    "  {:<16} a {:+.3}  b {:+.3}  indirect {:+.4} (SE {:.4}, p {})  direct {:+.4}",
                    o.name(),
                    m.a.estimate,
                    m.b.estimate,
                    m.indirect.estimate,
                    m.indirect.se,
                    fmt_p(m.indirect.p_value),
                    m.direct.estimate
                );
            }
        }
        if let Some(b) = &self.baseline {
            s.push_str(&render_baseline(b));
        }
        let _ = writeln!(s, "\nNotes");
        let _ = writeln!(s, "  Tests are Wald z tests; F-statistics are not reported.");
        let _ = writeln!(
            s,
            "  Logistic and Cox models are fixed-effects fits with persona-clustered sandwich standard errors."
        );
        let _ = writeln!(s, "  Deceased agents are excluded from non-mortality outcomes.");
        for (what, why) in &self.skipped {
            let _ = writeln!(s, "  Skipped {what}: {why}");
        }
        s
    }

    /// Writes the report, tables and plot data into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        let p = dir.join("report.txt");
        fs::write(&p, self.render_text()).map_err(|e| Error::io(&p, e))?;
        paths.push(p);
        let p = dir.join("condition_summary.csv");
        let mut buf = Vec::new();
        self.summary.write_csv(&mut buf)?;
        fs::write(&p, buf).map_err(|e| Error::io(&p, e))?;
        paths.push(p);
        let p = dir.join("fits.csv");
        let mut all: Vec<FitResult> = self.fits.clone();
        all.extend(self.moderators.iter().map(|(_, f)| f.clone()));
        let mut buf = Vec::new();
        write_fits_csv(&mut buf, &all)?;
        fs::write(&p, buf).map_err(|e| Error::io(&p, e))?;
        paths.push(p);
        let p = dir.join("paired_effects.csv");
        write_csv_file(&p, &self.paired)?;
        paths.push(p);
        let inputs = PlotInputs {
            efficacy: self.efficacy.as_ref(),
            cell_means: Some(&self.cell_means),
            ses_effects: Some(&self.ses_effects),
            baseline: self.baseline.as_ref(),
        };
        match emit_plot_data(&inputs, dir) {
            Ok(v) => paths.extend(v),
            Err(e) => log::warn!("plot data not written: {e}"),
        }
        Ok(paths)
    }
}

pub fn render_baseline(b: &BaselineReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "\nBaseline resilience (per SD) in the control arms, n = {}", b.n_agents);
    for a in &b.associations {
        let shown = match a.measure {
            crate::stats::BaselineMeasure::HazardRatio => format!("HR {:.3}", a.effect),
            crate::stats::BaselineMeasure::OddsRatio => format!("OR {:.3}", a.effect),
            crate::stats::BaselineMeasure::PercentChange => format!("{:+.1}%", 100.0 * a.effect),
            crate::stats::BaselineMeasure::SdChange => format!("{:+.3} SD", a.effect),
            crate::stats::BaselineMeasure::Slope => format!("{:+.2} per SD", a.effect),
        };
        let _ = writeln!(s, "  {:<16}{:<18} p {}", a.outcome.name(), shown, fmt_p(a.p_value));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::synthetic::{blank_record, synthetic_table};
    use proptest::prelude::*;

    #[test]
    fn effect_conversions() {
        assert!((effect_to_percent(0.18) - 0.197_217_363_121_810_15).abs() < 1e-12);
        assert!((effect_to_percent(0.36) - 0.433_329_414_560_340_24).abs() < 1e-12);
        assert_eq!(effect_to_percent(0.0), 0.0);
    }

    #[test]
    fn projection_examples() {
        let p = societal_projection(&ProjectionInput {
            cohort_size: 3.5e6,
            baseline_wealth: 200_000.0,
            effect_fraction: 0.43,
        })
        .unwrap();
        assert!((p.per_person_gain - 86_000.0).abs() < 1e-6);
        assert!((p.total_gain - 3.01e11).abs() / 3.01e11 < 1e-12);
        let z = societal_projection(&ProjectionInput { cohort_size: 5.0, baseline_wealth: 1.0, effect_fraction: 0.0 }).unwrap();
        assert_eq!((z.per_person_gain, z.total_gain), (0.0, 0.0));
        let one = societal_projection(&ProjectionInput { cohort_size: 1.0, baseline_wealth: 200_000.0, effect_fraction: 0.43 }).unwrap();
        assert!((one.total_gain - 86_000.0).abs() < 1e-6);
        assert!(societal_projection(&ProjectionInput { cohort_size: -1.0, baseline_wealth: 1.0, effect_fraction: 0.1 }).is_err());
    }

    #[test]
    fn singleton_cells() {
        let recs: Vec<OutcomeRecord> = Arm::ALL
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let mut r = blank_record(0, *a);
                r.log_wealth = Some(i as f64);
                r.walking_speed = Some(100.0 + i as f64);
                r
            })
            .collect();
        let s = summarize_conditions(&recs).unwrap();
        for (i, a) in Arm::ALL.iter().enumerate() {
            let c = s.cell(*a);
            assert_eq!((c.n, c.n_alive), (1, 1));
            assert_eq!(c.log_wealth, Some(i as f64));
            assert_eq!(c.walking_speed, Some(100.0 + i as f64));
            assert_eq!(c.mortality, Some(0.0));
        }
    }

    #[test]
    fn empty_cell_is_absent() {
        let s = summarize_conditions(&[blank_record(0, Arm::Ros6)]).unwrap();
        assert_eq!(s.cell(Arm::Sham6).n, 0);
        assert_eq!(s.cell(Arm::Sham6).mortality, None);
        assert!(summarize_conditions(&[]).is_err());
    }

    #[test]
    fn layout_has_every_cell_and_outcome() {
        let t = synthetic_table(3, 1, |_, _, _| {});
        let text = summarize_conditions(&t.records).unwrap().render();
        for a in Arm::ALL {
            assert!(text.contains(a.label()));
        }
        for row in ["Mortality (%)", "log(Wealth)", "SWB (z)", "Chronic disease (%)", "Walking speed (cm/s)", "Dementia (%)"] {
            assert!(text.contains(row), "{row}");
        }
    }

    #[test]
    fn table_c1_labels() {
        assert_eq!(term_label("ros"), "ROS Intervention (vs. Sham)");
        assert_eq!(term_label("ros:age6"), "ROS Intervention x Age 6 Timing");
        assert_eq!(term_label("ses_high"), "SES: High (vs. Low)");
        assert_eq!(term_label("resilience"), "Resilience Baseline (SD)");
        let f = FitResult {
            model: crate::stats::ModelKind::Lmm,
            outcome: "log_wealth".into(),
            n_obs: 10_000,
            n_groups: 2_500,
            terms: vec![
                crate::stats::TermEstimate::new("(Intercept)", 11.812, 0.081),
                crate::stats::TermEstimate::new("ros", 0.181, 0.012),
                crate::stats::TermEstimate::new("age6", 0.180, 0.018),
                crate::stats::TermEstimate::new("ros:age6", 0.179, 0.025),
            ],
            variance: None,
            log_likelihood: 0.0,
            convergence: crate::stats::Convergence { iterations: 0, gradient_norm: 0.0 },
            se_kind: crate::stats::SeKind::ModelBased,
        };
        let text = render_fit(&f, "t");
        assert!(text.contains("ROS Intervention (vs. Sham)                      0.181       0.012    < .001"), "{text}");
        assert!(text.contains("(Intercept)                                     11.812       0.081    < .001"));
    }

    #[test]
    fn plot_data_schema_and_determinism() {
        let t = synthetic_table(2, 2, |_, arm, r| r.log_wealth = Some(arm.index() as f64));
        let cells = cell_means(&t, Outcome::LogWealth);
        let pe = (
            PairedEffect { contrast: Contrast::RosVsShamAge6, outcome: Outcome::BehavioralResilience, mean: 0.81, se: 0.02, n_pairs: 2 },
            PairedEffect { contrast: Contrast::RosVsShamAge18, outcome: Outcome::BehavioralResilience, mean: 0.45, se: 0.02, n_pairs: 2 },
        );
        let base = BaselineReport { associations: vec![], n_agents: 0 };
        let ses = ses_effects(&t, Outcome::LogWealth).unwrap();
        let inputs = PlotInputs { efficacy: Some(&pe), cell_means: Some(&cells), ses_effects: Some(&ses), baseline: Some(&base) };
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_plot_data(&inputs, dir.path()).unwrap();
        let cell_csv = fs::read_to_string(dir.path().join(PLOT_CELLS)).unwrap();
        let lines: Vec<&str> = cell_csv.lines().collect();
        assert_eq!(lines[0], "cell,mean,SE");
        assert_eq!(lines.len(), 5);
        let eff_csv = fs::read_to_string(dir.path().join(PLOT_EFFICACY)).unwrap();
        assert_eq!(eff_csv.lines().count(), 3);
        assert!(eff_csv.lines().nth(1).unwrap().starts_with("6,0.81,"));
        let before: Vec<Vec<u8>> = paths.iter().map(|p| fs::read(p).unwrap()).collect();
        emit_plot_data(&inputs, dir.path()).unwrap();
        let after: Vec<Vec<u8>> = paths.iter().map(|p| fs::read(p).unwrap()).collect();
        assert_eq!(before, after);
        let partial = PlotInputs { efficacy: None, ..inputs };
        match emit_plot_data(&partial, dir.path()) {
            Err(Error::Data(m)) => assert!(m.contains("efficacy")),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn percent_inverts_log(x in -0.9f64..10.0) {
            prop_assert!((effect_to_percent(x.ln_1p()) - x).abs() < 1e-12 * (1.0 + x.abs()));
        }

        #[test]
        fn projection_bilinear(c in 0.0f64..1e7, w in 0.0f64..1e6, e in -1.0f64..2.0, k in 0.1f64..10.0) {
            let base = societal_projection(&ProjectionInput { cohort_size: c, baseline_wealth: w, effect_fraction: e }).unwrap();
            let sc = societal_projection(&ProjectionInput { cohort_size: k * c, baseline_wealth: w, effect_fraction: e }).unwrap();
            let sw = societal_projection(&ProjectionInput { cohort_size: c, baseline_wealth: k * w, effect_fraction: e }).unwrap();
            let tol = 1e-9 * (1.0 + (k * base.total_gain).abs());
            prop_assert!((sc.total_gain - k * base.total_gain).abs() <= tol);
            prop_assert!((sw.total_gain - k * base.total_gain).abs() <= tol);
        }

        #[test]
        fn summary_is_order_invariant(seed in 0u64..1000) {
            let t = synthetic_table(5, seed, |p, arm, r| {
                r.log_wealth = Some((p.persona_id * 7 + arm.index() as u64) as f64);
                if (p.persona_id + arm.index() as u64).is_multiple_of(3) { r.mortality = 1; r.log_wealth = None; }
            });
            let mut rev = t.records.clone();
            rev.reverse();
            rev.rotate_left((seed % 7) as usize);
            prop_assert_eq!(summarize_conditions(&t.records).unwrap(), summarize_conditions(&rev).unwrap());
        }
    }
}
