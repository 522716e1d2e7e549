//! Design matrices built from the outcome table.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StatsError};
use crate::outcomes::{Outcome, OutcomeRecord, OutcomeTable};
use crate::persona::{Category, Gender, PersonaSpec, RaceEthnicity, Ses, Trait};

/// A block of one or more design columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Ros,
    /// Early timing; the reference level is age 18.
    Age6,
    RosXAge6,
    /// Middle and High dummies against Low.
    Ses,
    /// Standard-normal score of a trait percentile.
    Trait(Trait),
    Gender,
    /// Dummies against White.
    Race,
    RosXSes,
    RosXTrait(Trait),
}

/// Moderators of the treatment effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Moderator {
    Ses,
    WorkingMemory,
    Conscientiousness,
}

impl Moderator {
    pub fn term(self) -> Term {
        match self {
            Moderator::Ses => Term::RosXSes,
            Moderator::WorkingMemory => Term::RosXTrait(Trait::WorkingMemory),
            Moderator::Conscientiousness => Term::RosXTrait(Trait::Conscientiousness),
        }
    }
}

/// Fixed-effects specification; the grouping factor is always the persona.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub outcome: Outcome,
    pub terms: Vec<Term>,
}

/// Covariates of the full model, in column order.
pub const COVARIATES: [Term; 10] = [
    Term::Ses,
    Term::Trait(Trait::WorkingMemory),
    Term::Trait(Trait::Resilience),
    Term::Trait(Trait::Neuroticism),
    Term::Trait(Trait::Conscientiousness),
    Term::Trait(Trait::Openness),
    Term::Trait(Trait::Extraversion),
    Term::Trait(Trait::Agreeableness),
    Term::Gender,
    Term::Race,
];

impl DesignSpec {
    pub fn new(outcome: Outcome, terms: Vec<Term>) -> Self {
        DesignSpec { outcome, terms }
    }

    /// Treatment, timing and their interaction.
    pub fn treatment(outcome: Outcome) -> Self {
        Self::new(outcome, vec![Term::Ros, Term::Age6, Term::RosXAge6])
    }

    /// Treatment block plus every persona covariate.
    pub fn full(outcome: Outcome) -> Self {
        let mut s = Self::treatment(outcome);
        s.terms.extend(COVARIATES);
        s
    }

    pub fn with_moderator(mut self, m: Moderator) -> Self {
        self.terms.push(m.term());
        self
    }

    /// Column names generated by `terms` (without the intercept).
    pub fn column_names(&self) -> Vec<String> {
        self.terms.iter().flat_map(|t| term_columns(*t)).collect()
    }
}

fn snake(label: &str) -> String {
    label.to_lowercase().replace(['-', ' '], "_")
}

fn term_columns(t: Term) -> Vec<String> {
    match t {
        Term::Ros => vec!["ros".into()],
        Term::Age6 => vec!["age6".into()],
        Term::RosXAge6 => vec!["ros:age6".into()],
        Term::Ses => vec!["ses_middle".into(), "ses_high".into()],
        Term::Trait(tr) => vec![tr.name().into()],
        Term::Gender => vec!["gender_male".into()],
        Term::Race => RaceEthnicity::ALL[1..]
            .iter()
            .map(|r| format!("race_{}", snake(&r.to_string())))
            .collect(),
        Term::RosXSes => vec!["ros:ses_middle".into(), "ros:ses_high".into()],
        Term::RosXTrait(tr) => vec![format!("ros:{}", tr.name())],
    }
}

fn term_values(t: Term, r: &OutcomeRecord, p: &PersonaSpec, out: &mut Vec<f64>) {
    let ros = f64::from(u8::from(r.arm.is_ros()));
    let ind = |b: bool| f64::from(u8::from(b));
    match t {
        Term::Ros => out.push(ros),
        Term::Age6 => out.push(ind(r.arm.is_age6())),
        Term::RosXAge6 => out.push(ros * ind(r.arm.is_age6())),
        Term::Ses => {
            out.push(ind(p.ses == Ses::Middle));
            out.push(ind(p.ses == Ses::High));
        }
        Term::Trait(tr) => out.push(p.trait_z(tr)),
        Term::Gender => out.push(ind(p.gender == Gender::Male)),
        Term::Race => {
            for race in &RaceEthnicity::ALL[1..] {
                out.push(ind(p.race_ethnicity == *race));
            }
        }
        Term::RosXSes => {
            out.push(ros * ind(p.ses == Ses::Middle));
            out.push(ros * ind(p.ses == Ses::High));
        }
        Term::RosXTrait(tr) => out.push(ros * p.trait_z(tr)),
    }
}

/// Numeric design: one row per record with the outcome present.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub names: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Persona of each row.
    pub groups: Vec<u64>,
    /// Event indicator for survival fits.
    pub status: Vec<bool>,
}

pub const INTERCEPT: &str = "(Intercept)";

impl DesignMatrix {
    pub fn build(spec: &DesignSpec, table: &OutcomeTable, intercept: bool) -> Result<Self> {
        let mut names = Vec::new();
        if intercept {
            names.push(INTERCEPT.to_string());
        }
        names.extend(spec.column_names());
        let mut data = Vec::new();
        let mut y = Vec::new();
        let mut groups = Vec::new();
        let mut status = Vec::new();
        let mut row = Vec::with_capacity(names.len());
        for r in &table.records {
            let value = match spec.outcome {
                // Survival fits use the age at death or censoring as response.
                Outcome::Mortality if !intercept => Some(f64::from(r.death_age)),
                o => o.value(r),
            };
            let Some(v) = value else { continue };
            let p = table.persona(r.persona_id);
            row.clear();
            if intercept {
                row.push(1.0);
            }
            for t in &spec.terms {
                term_values(*t, r, p, &mut row);
            }
            data.extend_from_slice(&row);
            y.push(v);
            groups.push(r.persona_id);
            status.push(r.mortality == 1);
        }
        if y.is_empty() {
            return Err(StatsError::EmptySample(format!(
                "no records carry {}",
                spec.outcome.name()
            ))
            .into());
        }
        let n = y.len();
        Ok(DesignMatrix {
            x: DMatrix::from_row_slice(n, names.len(), &data),
            names,
            y: DVector::from_vec(y),
            groups,
            status,
        })
    }

    pub fn from_parts(names: Vec<String>, x: DMatrix<f64>, y: DVector<f64>, groups: Vec<u64>) -> Self {
        let n = y.len();
        DesignMatrix {
            names,
            x,
            y,
            groups,
            status: vec![false; n],
        }
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_groups(&self) -> usize {
        self.group_index().1
    }

    /// Dense group index per row and the number of groups.
    pub fn group_index(&self) -> (Vec<usize>, usize) {
        let mut map = BTreeMap::new();
        for g in &self.groups {
            let k = map.len();
            map.entry(*g).or_insert(k);
        }
        (self.groups.iter().map(|g| map[g]).collect(), map.len())
    }
}
