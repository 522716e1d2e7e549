//! Response classification and annual state update.
//!
//! An ordered rule table maps `(event, coping tag)` to a state-change
//! template; the first matching rule wins and the last rule must be a
//! catch-all. Narratives without structured tags are tagged by keyword.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::behavior::{BehaviorResponse, BehavioralTag};
use crate::error::{Error, Result};
use crate::events::{Domain, EventCatalog, EventDef, EventFlag, Valence};
use crate::persona::Ses;
use crate::state::{AgentState, SWB_BOUND};

pub const DEFAULT_RULES_TOML: &str = include_str!("../data/rules.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HealthEffect {
    MajorShock,
    ChronicOnset,
    Recovery,
    DementiaOnset,
    Death,
}

impl HealthEffect {
    fn from_flag(f: EventFlag) -> HealthEffect {
        match f {
            EventFlag::Fatal => HealthEffect::Death,
            EventFlag::MajorHealthShock => HealthEffect::MajorShock,
            EventFlag::ChronicOnset => HealthEffect::ChronicOnset,
            EventFlag::DementiaOnset => HealthEffect::DementiaOnset,
            EventFlag::Recovery => HealthEffect::Recovery,
        }
    }
}

/// Structured change produced by one year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDelta {
    pub delta_wealth: f64,
    pub delta_education_level: i32,
    pub delta_swb: f64,
    pub health_effects: BTreeSet<HealthEffect>,
    pub behavioral_tag: BehavioralTag,
    /// New employment status, if the response changes it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub employment: Option<bool>,
    /// Whether the year's event was negative (feeds the coping history).
    #[serde(default)]
    pub negative_event: bool,
}

impl StateDelta {
    pub fn zero() -> Self {
        StateDelta {
            delta_wealth: 0.0,
            delta_education_level: 0,
            delta_swb: 0.0,
            health_effects: BTreeSet::new(),
            behavioral_tag: BehavioralTag::Neutral,
            employment: None,
            negative_event: false,
        }
    }

    pub fn is_death(&self) -> bool {
        self.health_effects.contains(&HealthEffect::Death)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TagPattern {
    Any,
    Is(BehavioralTag),
}

/// One row of the rule table.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub event: Option<String>,
    pub domain: Option<Domain>,
    pub valence: Option<Valence>,
    pub tag: TagPattern,
    pub wealth: f64,
    pub education: i32,
    pub swb: f64,
    pub effects: BTreeSet<HealthEffect>,
    pub employment: Option<bool>,
}

impl Rule {
    pub fn matches(&self, event: &EventDef, tag: BehavioralTag) -> bool {
        self.event.as_ref().is_none_or(|e| *e == event.event_id)
            && self.domain.is_none_or(|d| d == event.domain)
            && self.valence.is_none_or(|v| v == event.valence)
            && match self.tag {
                TagPattern::Any => true,
                TagPattern::Is(t) => t == tag,
            }
    }

    fn is_catch_all(&self) -> bool {
        self.event.is_none()
            && self.domain.is_none()
            && self.valence.is_none()
            && self.tag == TagPattern::Any
    }
}

/// Ordered keyword list for one tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeywordGroup {
    pub tag: BehavioralTag,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleTable {
    pub version: String,
    pub rules: Vec<Rule>,
    /// Checked in order; the first group with a hit decides the tag.
    pub keywords: Vec<KeywordGroup>,
    /// Tag for negative events whose narrative hits no keyword.
    pub default_negative_tag: BehavioralTag,
}

impl Default for RuleTable {
    fn default() -> Self {
        RuleTable::from_toml_str(DEFAULT_RULES_TOML, "<default rules>")
            .expect("shipped rule table is valid")
    }
}

/// Outcome of [`classify_detailed`].
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub delta: StateDelta,
    /// Index of the rule that matched.
    pub rule_index: usize,
    /// True when the tag came from keyword extraction rather than the backend.
    pub from_keywords: bool,
}

impl RuleTable {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let raw: RawRules = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0),
            message: e.message().to_string(),
        })?;
        let mut rules = Vec::with_capacity(raw.rules.len());
        for r in raw.rules {
            let line = text[..r.tag.span().start].matches('\n').count() + 1;
            let tag = match r.tag.get_ref().as_str() {
                "*" => TagPattern::Any,
                s => TagPattern::Is(BehavioralTag::from_name(s).ok_or_else(|| Error::Parse {
                    path: origin.to_string(),
                    line,
                    message: format!("unknown behavioral tag `{s}`"),
                })?),
            };
            rules.push(Rule {
                event: r.event.filter(|e| e != "*"),
                domain: r.domain,
                valence: r.valence,
                tag,
                wealth: r.wealth,
                education: r.education,
                swb: r.swb,
                effects: r.effects.into_iter().collect(),
                employment: r.employment,
            });
        }
        let table = RuleTable {
            version: raw.version,
            rules,
            keywords: raw.keywords,
            default_negative_tag: raw.default_negative_tag,
        };
        table.validate().map_err(|m| Error::Parse {
            path: origin.to_string(),
            line: 0,
            message: m,
        })?;
        Ok(table)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        match self.rules.last() {
            Some(r) if r.is_catch_all() => {}
            _ => return Err("the last rule must be a catch-all (tag = \"*\", no filters)".into()),
        }
        for (i, r) in self.rules.iter().enumerate() {
            if !(r.wealth.is_finite() && r.swb.is_finite()) {
                return Err(format!("rule {i}: non-finite magnitude"));
            }
        }
        Ok(())
    }

    /// Tag implied by a free-text narrative.
    pub fn extract_tag(&self, narrative: &str, valence: Valence) -> BehavioralTag {
        if valence != Valence::Negative {
            return BehavioralTag::Neutral;
        }
        let text = narrative.to_lowercase();
        self.keywords
            .iter()
            .find(|g| g.words.iter().any(|w| text.contains(&w.to_lowercase())))
            .map(|g| g.tag)
            .unwrap_or(self.default_negative_tag)
    }

    pub fn lookup(&self, event: &EventDef, tag: BehavioralTag) -> usize {
        self.rules
            .iter()
            .position(|r| r.matches(event, tag))
            .expect("catch-all rule is last")
    }

    /// Problems found when checking the table against a catalog: rules naming
    /// unknown events and `(event, tag)` pairs only the catch-all covers.
    pub fn lint(&self, catalog: &EventCatalog) -> Vec<String> {
        let mut out = Vec::new();
        for (i, r) in self.rules.iter().enumerate() {
            if let Some(e) = &r.event {
                if catalog.get(e).is_none() {
                    out.push(format!("rule {i} names unknown event `{e}`"));
                }
            }
        }
        let fallback = self.rules.len() - 1;
        for ev in &catalog.events {
            let tags: Vec<BehavioralTag> = if ev.valence == Valence::Negative {
                BehavioralTag::ALL
                    .into_iter()
                    .filter(|t| *t != BehavioralTag::Neutral)
                    .collect()
            } else {
                vec![BehavioralTag::Neutral]
            };
            for t in tags {
                if self.lookup(ev, t) == fallback {
                    out.push(format!(
                        "({}, {t}) is covered only by the catch-all rule",
                        ev.event_id
                    ));
                }
            }
        }
        out
    }
}

/// Reads and validates a rule-table file.
pub fn load_rules(path: &Path) -> Result<RuleTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RuleTable::from_toml_str(&text, &path.display().to_string())
}

/// Maps a response to a state change, reporting which rule matched.
pub fn classify_detailed(
    resp: &BehaviorResponse,
    event: &EventDef,
    rules: &RuleTable,
) -> Classification {
    let (tag, intensity, from_keywords) = match resp.tags {
        Some(t) => (t.tag, t.intensity, false),
        None => (rules.extract_tag(&resp.narrative, event.valence), 1.0, true),
    };
    let rule_index = rules.lookup(event, tag);
    let rule = &rules.rules[rule_index];
    let mut effects: BTreeSet<HealthEffect> =
        event.flags.iter().map(|f| HealthEffect::from_flag(*f)).collect();
    effects.extend(rule.effects.iter().copied());
    Classification {
        delta: StateDelta {
            delta_wealth: rule.wealth,
            delta_education_level: rule.education,
            delta_swb: rule.swb * intensity,
            health_effects: effects,
            behavioral_tag: tag,
            employment: rule.employment,
            negative_event: event.valence == Valence::Negative,
        },
        rule_index,
        from_keywords,
    }
}

pub fn classify(resp: &BehaviorResponse, event: &EventDef, rules: &RuleTable) -> StateDelta {
    classify_detailed(resp, event, rules).delta
}

/// Income, returns and bounds applied every year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct YearMechanics {
    pub annual_return: f64,
    pub debt_floor: f64,
    pub initial_wealth: f64,
    /// Net yearly surplus while employed, by SES class.
    pub income_low: f64,
    pub income_middle: f64,
    pub income_high: f64,
    pub income_per_education: f64,
    /// Net yearly surplus while out of work (negative draws down wealth).
    pub unemployed_income: f64,
    /// Age at which agents enter the labor market and begin earning.
    pub labor_entry_age: u32,
    pub education_cap: u32,
    /// Fraction of last year's well-being carried into this year.
    pub swb_persistence: f64,
    /// Well-being lost each year while living with a chronic condition.
    pub chronic_swb_drag: f64,
}

impl Default for YearMechanics {
    fn default() -> Self {
        YearMechanics {
            annual_return: 0.03,
            debt_floor: -100_000.0,
            initial_wealth: 0.0,
            income_low: 1_500.0,
            income_middle: 3_000.0,
            income_high: 5_500.0,
            income_per_education: 700.0,
            unemployed_income: -2_000.0,
            labor_entry_age: 18,
            education_cap: 6,
            swb_persistence: 0.9,
            chronic_swb_drag: 0.2,
        }
    }
}

impl YearMechanics {
    /// No income, no drift: wealth only compounds.
    pub fn compounding_only() -> Self {
        YearMechanics {
            income_low: 0.0,
            income_middle: 0.0,
            income_high: 0.0,
            income_per_education: 0.0,
            unemployed_income: 0.0,
            ..YearMechanics::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.annual_return,
            self.debt_floor,
            self.initial_wealth,
            self.income_low,
            self.income_middle,
            self.income_high,
            self.income_per_education,
            self.unemployed_income,
            self.swb_persistence,
            self.chronic_swb_drag,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("mechanics values must be finite".into()));
        }
        if self.annual_return <= -1.0 {
            return Err(Error::Config("annual_return must exceed -1".into()));
        }
        if !(0.0..=1.0).contains(&self.swb_persistence) {
            return Err(Error::Config("swb_persistence must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Net surplus earned during the year by an agent in `state`.
pub fn annual_income(state: &AgentState, ses: Ses, mech: &YearMechanics) -> f64 {
    if state.age < mech.labor_entry_age {
        return 0.0;
    }
    let employed = state.employed || state.age == mech.labor_entry_age;
    if !employed {
        return mech.unemployed_income;
    }
    let base = match ses {
        Ses::Low => mech.income_low,
        Ses::Middle => mech.income_middle,
        Ses::High => mech.income_high,
    };
    base + mech.income_per_education * f64::from(state.education_level)
}

/// Applies one year's change with an explicit net income.
pub fn apply_delta_with_income(
    mut state: AgentState,
    delta: &StateDelta,
    income: f64,
    mech: &YearMechanics,
) -> Result<AgentState> {
    if !state.alive {
        return Err(Error::Usage(format!(
            "cannot apply a year to an agent who died at age {}",
            state.age
        )));
    }
    if delta.negative_event {
        state.negative_event_count += 1;
        if delta.behavioral_tag.is_adaptive() {
            state.adaptive_count += 1;
        }
    }
    if delta.is_death() {
        state.alive = false;
        return Ok(state);
    }

    state.wealth = ((state.wealth + delta.delta_wealth + income) * (1.0 + mech.annual_return))
        .max(mech.debt_floor);
    let edu = i64::from(state.education_level) + i64::from(delta.delta_education_level);
    state.education_level = edu.clamp(0, i64::from(mech.education_cap)) as u32;

    let drag = if state.chronic_disease {
        mech.chronic_swb_drag
    } else {
        0.0
    };
    state.swb = (mech.swb_persistence * state.swb + delta.delta_swb - drag)
        .clamp(-SWB_BOUND, SWB_BOUND);

    for e in &delta.health_effects {
        match e {
            HealthEffect::MajorShock => state.major_shock_count += 1,
            HealthEffect::ChronicOnset => state.chronic_disease = true,
            HealthEffect::Recovery => state.chronic_disease = false,
            HealthEffect::DementiaOnset => state.dementia = true,
            HealthEffect::Death => unreachable!(),
        }
    }

    if state.age == mech.labor_entry_age {
        state.employed = true;
    }
    if let Some(emp) = delta.employment {
        if state.age >= mech.labor_entry_age {
            state.employed = emp;
        }
    }
    state.age += 1;
    Ok(state)
}

/// Applies one year's change: deltas and income, then the return.
pub fn apply_delta(
    state: AgentState,
    delta: &StateDelta,
    ses: Ses,
    mech: &YearMechanics,
) -> Result<AgentState> {
    let income = annual_income(&state, ses, mech);
    apply_delta_with_income(state, delta, income, mech)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRules {
    version: String,
    default_negative_tag: BehavioralTag,
    #[serde(default)]
    keywords: Vec<KeywordGroup>,
    #[serde(rename = "rule", default)]
    rules: Vec<RawRule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    #[serde(default)]
    event: Option<String>,
    #[serde(default)]
    domain: Option<Domain>,
    #[serde(default)]
    valence: Option<Valence>,
    tag: Spanned<String>,
    #[serde(default)]
    wealth: f64,
    #[serde(default)]
    education: i32,
    #[serde(default)]
    swb: f64,
    #[serde(default)]
    effects: Vec<HealthEffect>,
    #[serde(default)]
    employment: Option<bool>,
}
