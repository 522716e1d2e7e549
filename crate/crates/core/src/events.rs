//! Life-event catalog and conditional probability tables.
//!
//! Each event has a base annual probability (optionally age-scaled) that is
//! multiplied by the factor of every modifier whose predicate holds for the
//! agent. One event, or an uneventful year, is drawn per agent-year by
//! competing risks.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{Error, Result};
use crate::persona::{PersonaSpec, Ses, Trait, HIGH_TRAIT_PCT, LOW_TRAIT_PCT};
use crate::rng::RngStream;
use crate::state::AgentState;

/// Catalog shipped with the crate.
pub const DEFAULT_CATALOG_TOML: &str = include_str!("../data/catalog.toml");

/// Number of events a complete catalog carries.
pub const CATALOG_SIZE: usize = 45;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Economic,
    Health,
    Social,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Economic, Domain::Health, Domain::Social];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Valence {
    Positive,
    Neutral,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventFlag {
    Fatal,
    MajorHealthShock,
    ChronicOnset,
    DementiaOnset,
    Recovery,
}

/// Age dependence of an event's base probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gompertz {
    /// Age at which the base probability applies unscaled; zero before it.
    pub anchor_age: u32,
    /// Years over which the probability doubles.
    pub doubling_years: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Ge,
    Gt,
    Le,
    Lt,
    Eq,
}

impl Cmp {
    fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Cmp::Ge => lhs >= rhs,
            Cmp::Gt => lhs > rhs,
            Cmp::Le => lhs <= rhs,
            Cmp::Lt => lhs < rhs,
            Cmp::Eq => lhs == rhs,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Cmp::Ge => ">=",
            Cmp::Gt => ">",
            Cmp::Le => "<=",
            Cmp::Lt => "<",
            Cmp::Eq => "=",
        }
    }
}

/// Numeric agent-state quantities predicates can compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateField {
    Age,
    Education,
    MajorShocks,
    Coping,
    Swb,
    Wealth,
    NegativeEvents,
}

impl StateField {
    const NAMES: [(&'static str, StateField); 7] = [
        ("age", StateField::Age),
        ("education", StateField::Education),
        ("major_shocks", StateField::MajorShocks),
        ("coping", StateField::Coping),
        ("swb", StateField::Swb),
        ("wealth", StateField::Wealth),
        ("negative_events", StateField::NegativeEvents),
    ];

    fn value(self, s: &AgentState) -> f64 {
        match self {
            StateField::Age => f64::from(s.age),
            StateField::Education => f64::from(s.education_level),
            StateField::MajorShocks => f64::from(s.major_shock_count),
            StateField::Coping => s.coping_rate(),
            StateField::Swb => s.swb,
            StateField::Wealth => s.wealth,
            StateField::NegativeEvents => f64::from(s.negative_event_count),
        }
    }

    fn name(self) -> &'static str {
        Self::NAMES.iter().find(|(_, f)| *f == self).map(|(n, _)| *n).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateFlag {
    ChronicDisease,
    Dementia,
    Employed,
}

impl StateFlag {
    fn value(self, s: &AgentState) -> bool {
        match self {
            StateFlag::ChronicDisease => s.chronic_disease,
            StateFlag::Dementia => s.dementia,
            StateFlag::Employed => s.employed,
        }
    }
}

/// Condition over persona and state.
#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    /// Trait percentile within `[lo, hi]`.
    TraitRange { trait_: Trait, lo: f64, hi: f64 },
    Ses(Ses),
    Flag { flag: StateFlag, negated: bool },
    Compare { field: StateField, op: Cmp, value: f64 },
}

impl Predicate {
    pub fn holds(&self, persona: &PersonaSpec, state: &AgentState) -> bool {
        match self {
            Predicate::TraitRange { trait_, lo, hi } => {
                let p = persona.trait_pct(*trait_);
                p >= *lo && p <= *hi
            }
            Predicate::Ses(ses) => persona.ses == *ses,
            Predicate::Flag { flag, negated } => flag.value(state) != *negated,
            Predicate::Compare { field, op, value } => op.holds(field.value(state), *value),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModifierKind {
    /// Factor applies once when the predicate holds.
    When(Predicate),
    /// Factor applies once per prior major health shock.
    EachMajorShock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModifierRule {
    pub kind: ModifierKind,
    pub factor: f64,
    /// Source text of the condition, kept for reports and lint output.
    pub source: String,
}

impl ModifierRule {
    pub fn new(source: &str, factor: f64, thresholds: &Thresholds) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::Config(format!(
                "modifier `{source}`: factor must be positive, got {factor}"
            )));
        }
        let kind = parse_modifier(source, thresholds).map_err(Error::Config)?;
        Ok(ModifierRule {
            kind,
            factor,
            source: source.to_string(),
        })
    }

    /// Multiplier this rule contributes for the given agent.
    pub fn multiplier(&self, persona: &PersonaSpec, state: &AgentState) -> f64 {
        match &self.kind {
            ModifierKind::When(p) => {
                if p.holds(persona, state) {
                    self.factor
                } else {
                    1.0
                }
            }
            ModifierKind::EachMajorShock => self.factor.powi(state.major_shock_count as i32),
        }
    }
}

/// Percentile cut-offs used by `<trait> = high|low|moderate` conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub high: f64,
    pub low: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            high: HIGH_TRAIT_PCT,
            low: LOW_TRAIT_PCT,
        }
    }
}

fn parse_modifier(src: &str, th: &Thresholds) -> std::result::Result<ModifierKind, String> {
    let s = src.trim();
    if let Some(rest) = s.strip_prefix("each ") {
        return match rest.trim() {
            "major_shock" => Ok(ModifierKind::EachMajorShock),
            other => Err(format!("unknown counter `{other}` in `{src}`")),
        };
    }
    parse_predicate(s, th).map(ModifierKind::When)
}

/// Parses a condition such as `conscientiousness = high`, `ses = low`,
/// `not chronic_disease` or `age >= 55`.
pub fn parse_predicate(src: &str, th: &Thresholds) -> std::result::Result<Predicate, String> {
    let s = src.trim();
    if let Some(rest) = s.strip_prefix("not ") {
        return match parse_predicate(rest, th)? {
            Predicate::Flag { flag, negated } => Ok(Predicate::Flag {
                flag,
                negated: !negated,
            }),
            _ => Err(format!("`not` applies only to state flags in `{src}`")),
        };
    }
    match s {
        "chronic_disease" => {
            return Ok(Predicate::Flag {
                flag: StateFlag::ChronicDisease,
                negated: false,
            })
        }
        "dementia" => {
            return Ok(Predicate::Flag {
                flag: StateFlag::Dementia,
                negated: false,
            })
        }
        "employed" => {
            return Ok(Predicate::Flag {
                flag: StateFlag::Employed,
                negated: false,
            })
        }
        "unemployed" => {
            return Ok(Predicate::Flag {
                flag: StateFlag::Employed,
                negated: true,
            })
        }
        _ => {}
    }

    let ops = [
        (">=", Cmp::Ge),
        ("<=", Cmp::Le),
        ("==", Cmp::Eq),
        (">", Cmp::Gt),
        ("<", Cmp::Lt),
        ("=", Cmp::Eq),
    ];
    let (field, op, value) = ops
        .iter()
        .find_map(|(sym, op)| {
            s.find(sym)
                .map(|i| (s[..i].trim(), *op, s[i + sym.len()..].trim()))
        })
        .ok_or_else(|| format!("cannot parse condition `{src}`"))?;

    if field == "ses" {
        if op != Cmp::Eq {
            return Err(format!("ses supports only `=` in `{src}`"));
        }
        let ses = match value.to_ascii_lowercase().as_str() {
            "low" => Ses::Low,
            "middle" => Ses::Middle,
            "high" => Ses::High,
            _ => return Err(format!("unknown SES class `{value}` in `{src}`")),
        };
        return Ok(Predicate::Ses(ses));
    }
    if let Some(trait_) = Trait::from_name(field) {
        let level_range = match value.to_ascii_lowercase().as_str() {
            "high" => Some((th.high, 100.0)),
            "low" => Some((0.0, th.low)),
            "moderate" => Some((th.low.next_up(), th.high.next_down())),
            _ => None,
        };
        return match (op, level_range) {
            (Cmp::Eq, Some((lo, hi))) => Ok(Predicate::TraitRange { trait_, lo, hi }),
            (_, None) => {
                let v: f64 = value
                    .parse()
                    .map_err(|_| format!("bad percentile `{value}` in `{src}`"))?;
                let (lo, hi) = match op {
                    Cmp::Ge => (v, 100.0),
                    Cmp::Gt => (v.next_up(), 100.0),
                    Cmp::Le => (0.0, v),
                    Cmp::Lt => (0.0, v.next_down()),
                    Cmp::Eq => (v, v),
                };
                Ok(Predicate::TraitRange { trait_, lo, hi })
            }
            _ => Err(format!("trait levels take `=` in `{src}`")),
        };
    }
    let field = StateField::NAMES
        .iter()
        .find(|(n, _)| *n == field)
        .map(|(_, f)| *f)
        .ok_or_else(|| format!("unknown predicate field `{field}` in `{src}`"))?;
    let value: f64 = value
        .parse()
        .map_err(|_| format!("bad number `{value}` in `{src}`"))?;
    Ok(Predicate::Compare { field, op, value })
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::TraitRange { trait_, lo, hi } => {
                write!(f, "{} in [{lo}, {hi}]", trait_.name())
            }
            Predicate::Ses(s) => write!(f, "ses = {s}"),
            Predicate::Flag { flag, negated } => {
                write!(f, "{}{flag:?}", if *negated { "not " } else { "" })
            }
            Predicate::Compare { field, op, value } => {
                write!(f, "{} {} {value}", field.name(), op.symbol())
            }
        }
    }
}

/// One life event and its conditional probability table.
#[derive(Debug, Clone, PartialEq)]
pub struct EventDef {
    pub event_id: String,
    pub domain: Domain,
    pub valence: Valence,
    pub base_prob: f64,
    pub gompertz: Option<Gompertz>,
    pub min_age: u32,
    pub max_age: u32,
    pub flags: BTreeSet<EventFlag>,
    /// Gating conditions; the event cannot occur unless all hold.
    pub requires: Vec<Predicate>,
    pub modifiers: Vec<ModifierRule>,
    /// Second-person sentence used in prompts ("you have been laid off...").
    pub narrative: String,
}

impl EventDef {
    /// A constant-probability event with no modifiers.
    pub fn simple(id: &str, domain: Domain, valence: Valence, base_prob: f64) -> Self {
        EventDef {
            event_id: id.to_string(),
            domain,
            valence,
            base_prob,
            gompertz: None,
            min_age: 0,
            max_age: 200,
            flags: BTreeSet::new(),
            requires: Vec::new(),
            modifiers: Vec::new(),
            narrative: id.replace('_', " "),
        }
    }

    pub fn has_flag(&self, flag: EventFlag) -> bool {
        self.flags.contains(&flag)
    }

    /// Base probability at `age`, before modifiers.
    pub fn base_at(&self, age: u32) -> f64 {
        match self.gompertz {
            None => self.base_prob,
            Some(g) if age < g.anchor_age => 0.0,
            Some(g) => {
                self.base_prob * 2f64.powf(f64::from(age - g.anchor_age) / g.doubling_years)
            }
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(0.0..=1.0).contains(&self.base_prob) {
            return Err(format!(
                "event `{}`: base_prob {} outside [0, 1]",
                self.event_id, self.base_prob
            ));
        }
        if self.min_age > self.max_age {
            return Err(format!(
                "event `{}`: min_age {} exceeds max_age {}",
                self.event_id, self.min_age, self.max_age
            ));
        }
        if let Some(g) = self.gompertz {
            if !(g.doubling_years.is_finite() && g.doubling_years > 0.0) {
                return Err(format!(
                    "event `{}`: gompertz doubling_years must be positive",
                    self.event_id
                ));
            }
        }
        if let Some(m) = self.modifiers.iter().find(|m| m.factor.is_nan() || m.factor <= 0.0) {
            return Err(format!(
                "event `{}`: modifier `{}` has non-positive factor",
                self.event_id, m.source
            ));
        }
        Ok(())
    }
}

/// Conditioned annual probability of `ev` for this agent, in `[0, 1]`.
pub fn event_probability(ev: &EventDef, persona: &PersonaSpec, state: &AgentState) -> f64 {
    if state.age < ev.min_age || state.age > ev.max_age {
        return 0.0;
    }
    if !ev.requires.iter().all(|p| p.holds(persona, state)) {
        return 0.0;
    }
    let p = ev
        .modifiers
        .iter()
        .fold(ev.base_at(state.age), |p, m| p * m.multiplier(persona, state));
    p.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventCatalog {
    pub version: String,
    pub thresholds: Thresholds,
    pub events: Vec<EventDef>,
    warnings: Vec<String>,
}

impl Default for EventCatalog {
    fn default() -> Self {
        EventCatalog::from_toml_str(DEFAULT_CATALOG_TOML, "<default catalog>")
            .expect("shipped catalog is valid")
    }
}

/// Result of one annual competing-risks draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnualDraw {
    /// Index into the catalog, or `None` for an uneventful year.
    pub event: Option<usize>,
    /// Sum of the conditioned probabilities before any rescaling.
    pub total_mass: f64,
}

impl AnnualDraw {
    /// Whether probabilities had to be rescaled because they summed past 1.
    pub fn rescaled(&self) -> bool {
        self.total_mass > 1.0
    }
}

impl EventCatalog {
    pub fn new(version: &str, events: Vec<EventDef>) -> Result<Self> {
        let mut cat = EventCatalog {
            version: version.to_string(),
            thresholds: Thresholds::default(),
            events,
            warnings: Vec::new(),
        };
        let mut seen = HashSet::new();
        for ev in &cat.events {
            ev.validate().map_err(Error::Config)?;
            if !seen.insert(ev.event_id.clone()) {
                return Err(Error::Config(format!("duplicate event_id `{}`", ev.event_id)));
            }
        }
        cat.warnings = cat.consistency_warnings();
        Ok(cat)
    }

    pub fn get(&self, id: &str) -> Option<&EventDef> {
        self.events.iter().find(|e| e.event_id == id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.events.iter().position(|e| e.event_id == id)
    }

    /// Non-fatal problems found when the catalog was built.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn consistency_warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.events.len() != CATALOG_SIZE {
            w.push(format!(
                "catalog has {} events; a complete catalog has {CATALOG_SIZE}",
                self.events.len()
            ));
        }
        for d in Domain::ALL {
            if !self.events.iter().any(|e| e.domain == d) {
                w.push(format!("no events in domain {d:?}"));
            }
        }
        let flag_checks = [
            (
                EventFlag::DementiaOnset,
                "no dementia-onset event (e.g. `onset_of_dementia`); dementia outcome will be structurally zero",
            ),
            (
                EventFlag::Fatal,
                "no fatal event; mortality outcome will be structurally zero",
            ),
            (
                EventFlag::ChronicOnset,
                "no chronic-onset event; chronic disease outcome will be structurally zero",
            ),
        ];
        for (flag, msg) in flag_checks {
            if !self.events.iter().any(|e| e.has_flag(flag)) {
                w.push(msg.to_string());
            }
        }
        w
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let raw: RawCatalog = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            message: e.message().to_string(),
        })?;
        let thresholds = raw.thresholds.unwrap_or_default();
        let mut events = Vec::with_capacity(raw.events.len());
        let mut seen = HashSet::new();
        for re in raw.events {
            let line = line_of(text, re.id.span().start);
            let err = |message: String| Error::Parse {
                path: origin.to_string(),
                line,
                message,
            };
            let id = re.id.into_inner();
            if !seen.insert(id.clone()) {
                return Err(err(format!("duplicate event_id `{id}`")));
            }
            let mut requires = Vec::new();
            for r in re.requires {
                let l = line_of(text, r.span().start);
                let p = parse_predicate(r.get_ref(), &thresholds).map_err(|m| Error::Parse {
                    path: origin.to_string(),
                    line: l,
                    message: format!("event `{id}`: {m}"),
                })?;
                requires.push(p);
            }
            let mut modifiers = Vec::new();
            for m in re.modifiers {
                let l = line_of(text, m.when.span().start);
                let rule =
                    ModifierRule::new(m.when.get_ref(), m.factor, &thresholds).map_err(|e| {
                        let msg = match e {
                            Error::Config(s) => s,
                            other => other.to_string(),
                        };
                        Error::Parse {
                            path: origin.to_string(),
                            line: l,
                            message: format!("event `{id}`: {msg}"),
                        }
                    })?;
                modifiers.push(rule);
            }
            let ev = EventDef {
                event_id: id,
                domain: re.domain,
                valence: re.valence,
                base_prob: re.base_prob,
                gompertz: re.gompertz,
                min_age: re.min_age,
                max_age: re.max_age,
                flags: re.flags.into_iter().collect(),
                requires,
                modifiers,
                narrative: re.narrative,
            };
            ev.validate().map_err(err)?;
            events.push(ev);
        }
        let mut cat = EventCatalog {
            version: raw.version,
            thresholds,
            events,
            warnings: Vec::new(),
        };
        cat.warnings = cat.consistency_warnings();
        Ok(cat)
    }

    /// Conditioned probabilities of every event, in catalog order.
    pub fn probabilities(&self, persona: &PersonaSpec, state: &AgentState) -> Vec<f64> {
        self.events
            .iter()
            .map(|e| event_probability(e, persona, state))
            .collect()
    }
}

fn line_of(text: &str, byte: usize) -> usize {
    text[..byte.min(text.len())].matches('\n').count() + 1
}

/// Reads and validates a catalog file.
pub fn load_catalog(path: &Path) -> Result<EventCatalog> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EventCatalog::from_toml_str(&text, &path.display().to_string())
}

/// Draws this year's event by competing risks. Mass `1 - sum(p)` is left for
/// an uneventful year; if the probabilities sum past 1 they are rescaled to
/// sum to 1 and the draw reports it.
pub fn sample_annual_event(
    catalog: &EventCatalog,
    persona: &PersonaSpec,
    state: &AgentState,
    stream: &mut RngStream,
) -> Result<AnnualDraw> {
    if catalog.events.is_empty() {
        return Err(Error::Config("event catalog is empty".into()));
    }
    let probs = catalog.probabilities(persona, state);
    let total: f64 = probs.iter().sum();
    let scale = if total > 1.0 { 1.0 / total } else { 1.0 };
    let u = stream.uniform();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p * scale;
        if u < acc {
            return Ok(AnnualDraw {
                event: Some(i),
                total_mass: total,
            });
        }
    }
    Ok(AnnualDraw {
        event: None,
        total_mass: total,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCatalog {
    version: String,
    #[serde(default)]
    thresholds: Option<Thresholds>,
    #[serde(rename = "event", default)]
    events: Vec<RawEvent>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    id: Spanned<String>,
    domain: Domain,
    valence: Valence,
    base_prob: f64,
    #[serde(default)]
    gompertz: Option<Gompertz>,
    min_age: u32,
    max_age: u32,
    #[serde(default)]
    flags: Vec<EventFlag>,
    #[serde(default)]
    requires: Vec<Spanned<String>>,
    #[serde(default)]
    modifiers: Vec<RawModifier>,
    narrative: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModifier {
    when: Spanned<String>,
    factor: f64,
}
