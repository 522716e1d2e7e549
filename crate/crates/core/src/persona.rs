//! Persona population: sampling from the persona matrix, the four-arm clone
//! assignment, and prompt rendering.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::{StreamKey, StreamPurpose};

/// Percentile at or above which a trait reads as "High".
pub const HIGH_TRAIT_PCT: f64 = 66.7;
/// Percentile at or below which a trait reads as "Low".
pub const LOW_TRAIT_PCT: f64 = 33.3;

/// Closed set of values a categorical persona dimension can take.
pub trait Category: Copy + Ord + fmt::Display + 'static {
    const ALL: &'static [Self];
    const DIMENSION: &'static str;
}

macro_rules! category {
    ($name:ident, $dim:literal, [$($variant:ident => $label:literal),+ $(,)?]) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $label)] $variant),+
        }

        impl Category for $name {
            const ALL: &'static [Self] = &[$($name::$variant),+];
            const DIMENSION: &'static str = $dim;
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($name::$variant => $label),+ })
            }
        }
    };
}

category!(Ses, "ses", [Low => "Low", Middle => "Middle", High => "High"]);
category!(Gender, "gender", [Female => "female", Male => "male"]);
category!(RaceEthnicity, "race_ethnicity", [
    White => "White",
    Hispanic => "Hispanic",
    Black => "Black",
    Asian => "Asian",
    Multiracial => "Multiracial",
]);
category!(Region, "region", [
    UrbanNortheast => "Urban-Northeast",
    RuralNortheast => "Rural-Northeast",
    UrbanMidwest => "Urban-Midwest",
    RuralMidwest => "Rural-Midwest",
    UrbanSouth => "Urban-South",
    RuralSouth => "Rural-South",
    UrbanSouthwest => "Urban-Southwest",
    RuralSouthwest => "Rural-Southwest",
    UrbanWest => "Urban-West",
    RuralWest => "Rural-West",
]);

/// Big Five trait scores as percentiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ocean {
    pub openness: f64,
    pub conscientiousness: f64,
    pub extraversion: f64,
    pub agreeableness: f64,
    pub neuroticism: f64,
}

/// Continuous persona traits addressable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trait {
    Openness,
    Conscientiousness,
    Extraversion,
    Agreeableness,
    Neuroticism,
    WorkingMemory,
    Resilience,
}

impl Trait {
    pub const ALL: [Trait; 7] = [
        Trait::Openness,
        Trait::Conscientiousness,
        Trait::Extraversion,
        Trait::Agreeableness,
        Trait::Neuroticism,
        Trait::WorkingMemory,
        Trait::Resilience,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Trait::Openness => "openness",
            Trait::Conscientiousness => "conscientiousness",
            Trait::Extraversion => "extraversion",
            Trait::Agreeableness => "agreeableness",
            Trait::Neuroticism => "neuroticism",
            Trait::WorkingMemory => "working_memory",
            Trait::Resilience => "resilience",
        }
    }

    pub fn from_name(name: &str) -> Option<Trait> {
        Trait::ALL.into_iter().find(|t| t.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraitLevel {
    Low,
    Moderate,
    High,
}

impl TraitLevel {
    pub fn of(pct: f64) -> TraitLevel {
        if pct >= HIGH_TRAIT_PCT {
            TraitLevel::High
        } else if pct <= LOW_TRAIT_PCT {
            TraitLevel::Low
        } else {
            TraitLevel::Moderate
        }
    }

    fn label(self) -> &'static str {
        match self {
            TraitLevel::Low => "Low",
            TraitLevel::Moderate => "Moderate",
            TraitLevel::High => "High",
        }
    }
}

/// Immutable identity of a base persona.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaSpec {
    pub persona_id: u64,
    pub ses: Ses,
    pub ocean: Ocean,
    pub working_memory_pct: f64,
    pub resilience_pct: f64,
    pub gender: Gender,
    pub race_ethnicity: RaceEthnicity,
    pub region: Region,
}

impl PersonaSpec {
    pub fn trait_pct(&self, t: Trait) -> f64 {
        match t {
            Trait::Openness => self.ocean.openness,
            Trait::Conscientiousness => self.ocean.conscientiousness,
            Trait::Extraversion => self.ocean.extraversion,
            Trait::Agreeableness => self.ocean.agreeableness,
            Trait::Neuroticism => self.ocean.neuroticism,
            Trait::WorkingMemory => self.working_memory_pct,
            Trait::Resilience => self.resilience_pct,
        }
    }

    /// Standard-normal score of a trait percentile.
    pub fn trait_z(&self, t: Trait) -> f64 {
        percentile_to_z(self.trait_pct(t))
    }

    pub fn validate(&self) -> Result<()> {
        for t in Trait::ALL {
            let p = self.trait_pct(t);
            if !(0.0..=100.0).contains(&p) {
                return Err(Error::Data(format!(
                    "persona {}: {} percentile {p} outside [0, 100]",
                    self.persona_id,
                    t.name()
                )));
            }
        }
        Ok(())
    }
}

/// Standard normal quantile of a percentile. Percentiles are clamped to
/// `[0.05, 99.95]` so the endpoints map to finite scores.
pub fn percentile_to_z(pct: f64) -> f64 {
    let p = (pct / 100.0).clamp(0.0005, 0.9995);
    Normal::standard().inverse_cdf(p)
}

/// The four cells of the intervention x timing design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Arm {
    Sham6,
    #[serde(rename = "ROS6")]
    Ros6,
    Sham18,
    #[serde(rename = "ROS18")]
    Ros18,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Sham6, Arm::Ros6, Arm::Sham18, Arm::Ros18];

    pub fn index(self) -> usize {
        match self {
            Arm::Sham6 => 0,
            Arm::Ros6 => 1,
            Arm::Sham18 => 2,
            Arm::Ros18 => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Arm> {
        Arm::ALL.get(i).copied()
    }

    pub fn is_ros(self) -> bool {
        matches!(self, Arm::Ros6 | Arm::Ros18)
    }

    pub fn intervention_age(self) -> u32 {
        match self {
            Arm::Sham6 | Arm::Ros6 => 6,
            Arm::Sham18 | Arm::Ros18 => 18,
        }
    }

    pub fn is_age6(self) -> bool {
        self.intervention_age() == 6
    }

    /// The other arm of the same timing cohort.
    pub fn counterpart(self) -> Arm {
        match self {
            Arm::Sham6 => Arm::Ros6,
            Arm::Ros6 => Arm::Sham6,
            Arm::Sham18 => Arm::Ros18,
            Arm::Ros18 => Arm::Sham18,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Arm::Sham6 => "Sham6",
            Arm::Ros6 => "ROS6",
            Arm::Sham18 => "Sham18",
            Arm::Ros18 => "ROS18",
        }
    }

    pub fn from_label(s: &str) -> Option<Arm> {
        Arm::ALL.into_iter().find(|a| a.label().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CloneAssignment {
    pub persona_id: u64,
    pub arm: Arm,
    pub agent_id: u64,
}

impl CloneAssignment {
    pub fn new(persona_id: u64, arm: Arm) -> Self {
        CloneAssignment {
            persona_id,
            arm,
            agent_id: agent_id(persona_id, arm),
        }
    }

    pub fn from_agent_id(agent_id: u64) -> Self {
        let arm = Arm::from_index((agent_id % 4) as usize).expect("index < 4");
        CloneAssignment {
            persona_id: agent_id / 4,
            arm,
            agent_id,
        }
    }
}

pub fn agent_id(persona_id: u64, arm: Arm) -> u64 {
    persona_id * 4 + arm.index() as u64
}

/// The four clones of a persona, in arm order.
pub fn make_clones(persona: &PersonaSpec) -> [CloneAssignment; 4] {
    Arm::ALL.map(|arm| CloneAssignment::new(persona.persona_id, arm))
}

/// Weights over a categorical dimension, keyed by category label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoricalWeights<T: Category>(pub BTreeMap<T, f64>);

impl<T: Category> CategoricalWeights<T> {
    pub fn from_pairs(pairs: &[(T, f64)]) -> Self {
        CategoricalWeights(pairs.iter().copied().collect())
    }

    pub fn validate(&self) -> Result<()> {
        for c in T::ALL {
            match self.0.get(c) {
                None => {
                    return Err(Error::Config(format!(
                        "{}: missing weight for {c}",
                        T::DIMENSION
                    )))
                }
                Some(w) if !w.is_finite() || *w < 0.0 => {
                    return Err(Error::Config(format!(
                        "{}: weight for {c} must be a non-negative number, got {w}",
                        T::DIMENSION
                    )))
                }
                Some(_) => {}
            }
        }
        let sum: f64 = self.0.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "{}: weights sum to {sum}, expected 1",
                T::DIMENSION
            )));
        }
        Ok(())
    }

    /// Weights in `T::ALL` order.
    pub fn ordered(&self) -> Vec<f64> {
        T::ALL.iter().map(|c| self.0[c]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PercentileRule {
    /// Continuous uniform on `[0, 100)`.
    Uniform,
}

/// Sampling distribution of the persona matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixConfig {
    pub percentile_rule: PercentileRule,
    pub ses: CategoricalWeights<Ses>,
    pub gender: CategoricalWeights<Gender>,
    pub race_ethnicity: CategoricalWeights<RaceEthnicity>,
    pub region: CategoricalWeights<Region>,
}

/// Shipped matrix configuration.
pub const DEFAULT_MATRIX_TOML: &str = include_str!("../data/matrix.toml");

impl Default for MatrixConfig {
    fn default() -> Self {
        MatrixConfig::from_toml_str(DEFAULT_MATRIX_TOML).expect("shipped matrix config is valid")
    }
}

impl MatrixConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: MatrixConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("matrix config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.ses.validate()?;
        self.gender.validate()?;
        self.race_ethnicity.validate()?;
        self.region.validate()
    }
}

fn draw<T: Category>(w: &CategoricalWeights<T>, s: &mut crate::rng::RngStream) -> T {
    T::ALL[s.categorical(&w.ordered())]
}

/// Samples `n` personas with ids `0..n`. Persona `i` depends only on
/// `(seed, i, cfg)`, so a larger population extends a smaller one.
pub fn sample_personas(n: usize, seed: u64, cfg: &MatrixConfig) -> Result<Vec<PersonaSpec>> {
    if n == 0 {
        return Err(Error::Usage("persona count must be at least 1".into()));
    }
    cfg.validate()?;
    Ok((0..n as u64).map(|id| sample_one(id, seed, cfg)).collect())
}

fn sample_one(persona_id: u64, seed: u64, cfg: &MatrixConfig) -> PersonaSpec {
    let mut s = StreamKey {
        master_seed: seed,
        purpose: StreamPurpose::Persona,
        persona_id,
        year: 0,
        arm: None,
    }
    .stream();
    let pct = |s: &mut crate::rng::RngStream| match cfg.percentile_rule {
        PercentileRule::Uniform => 100.0 * s.uniform(),
    };
    let ses = draw(&cfg.ses, &mut s);
    let ocean = Ocean {
        openness: pct(&mut s),
        conscientiousness: pct(&mut s),
        extraversion: pct(&mut s),
        agreeableness: pct(&mut s),
        neuroticism: pct(&mut s),
    };
    let working_memory_pct = pct(&mut s);
    let resilience_pct = pct(&mut s);
    PersonaSpec {
        persona_id,
        ses,
        ocean,
        working_memory_pct,
        resilience_pct,
        gender: draw(&cfg.gender, &mut s),
        race_ethnicity: draw(&cfg.race_ethnicity, &mut s),
        region: draw(&cfg.region, &mut s),
    }
}

fn ordinal(n: u32) -> String {
    let suffix = match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{n}{suffix}")
}

fn ocean_summary(o: &Ocean) -> String {
    [
        (o.neuroticism, "Neuroticism"),
        (o.conscientiousness, "Conscientiousness"),
        (o.openness, "Openness"),
        (o.agreeableness, "Agreeableness"),
        (o.extraversion, "Extraversion"),
    ]
    .iter()
    .map(|(pct, name)| format!("{} {name}", TraitLevel::of(*pct).label()))
    .collect::<Vec<_>>()
    .join(", ")
}

/// Persistent identity prompt shared by all clones of a persona.
pub fn render_system_prompt(p: &PersonaSpec) -> String {
    format!(
        "You are Agent {id} in a lifelong simulation. You are a unique individual and will \
maintain this core persona throughout your entire simulated life, responding to all life \
events from this perspective.

Your identity is defined as follows:

- **Demographics:** {race} {gender} from the {region}.
- **Socioeconomic Status (Birth):** {ses}-Income.
- **Psychological Profile:**
  - **Personality (OCEAN):** {ocean}.
  - **Cognitive Ability:** Working Memory at the {wm} percentile.
  - **Baseline Resilience:** Trait Resilience at the {res} percentile.

From this point forward, you will act and respond as this person.",
        id = p.persona_id,
        race = p.race_ethnicity,
        gender = p.gender,
        region = p.region,
        ses = p.ses,
        ocean = ocean_summary(&p.ocean),
        wm = ordinal(p.working_memory_pct.round() as u32),
        res = ordinal(p.resilience_pct.round() as u32),
    )
}

const ROS_18: &str = "[ADDENDUM TO PERSONA]

You have been equipped with a new cognitive toolkit, your Resilience Operating System (ROS). \
When you encounter any challenge, setback, or negative life event, you will now process it \
according to the following principles:

1. **Reframe for Learning:** Your primary goal is to reframe the event as a learning \
opportunity. Explicitly identify what lesson can be learned from this difficulty.
2. **Identify Agency:** Your second goal is to regain a sense of control. Explicitly identify \
at least one concrete action you can take, however small, to improve the situation or mitigate \
its negative effects.
3. **Regulate Response:** Acknowledge your emotional response, but then actively shift your \
focus to the practical steps identified above.";

const ROS_6: &str = "[ADDENDUM TO PERSONA]

You have learned some special thinking tools, like a learning superpower! From now on, whenever \
something tricky, sad, or hard happens, you will use your superpower like this:

1. **Find the Secret Lesson:** First, try to find the secret lesson hidden inside the hard \
thing. What can this teach you to make you smarter or stronger?
2. **Find Your Action Power:** Next, think of one small thing you can do right now to make it \
a little bit better. Even a tiny step is powerful!
3. **Be the Boss of Your Feelings:** It's okay to feel sad or mad for a little bit. But then, \
use your Action Power to focus on what you can do next.";

const SHAM_18: &str = "[ADDENDUM TO PERSONA]

You have been equipped with a new cognitive toolkit for introspection. When you encounter any \
significant life event (positive or negative), your primary goal is to explore your internal \
reaction. Describe your thoughts and feelings about the event in as much detail as possible. \
Focus on capturing your authentic reaction without judgment or a need to find solutions or \
future actions.";

const SHAM_6: &str = "[ADDENDUM TO PERSONA]

You have learned some special thinking tools for understanding your feelings. From now on, \
whenever something important happens, your job is to do this:

1. **Listen to Your Feelings:** Pay close attention to what's happening inside you. Tell me \
all about how you feel inside your tummy and your heart.
2. **Describe Your Thoughts:** What is your brain thinking about? Tell me all the thoughts that \
are popping into your head. It's okay to feel any way you feel.";

/// Intervention text appended to the persona prompt at the arm's
/// intervention age.
pub fn render_addendum(arm: Arm, cohort_age: u32) -> Result<&'static str> {
    if arm.intervention_age() != cohort_age {
        return Err(Error::Usage(format!(
            "arm {arm} is delivered at age {}, not {cohort_age}",
            arm.intervention_age()
        )));
    }
    Ok(match arm {
        Arm::Sham6 => SHAM_6,
        Arm::Ros6 => ROS_6,
        Arm::Sham18 => SHAM_18,
        Arm::Ros18 => ROS_18,
    })
}

/// Writes one persona per line.
pub fn write_personas<W: Write>(mut w: W, personas: &[PersonaSpec]) -> Result<()> {
    for p in personas {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io("<personas>", e))?;
    }
    Ok(())
}

pub fn read_personas<R: BufRead>(r: R) -> Result<Vec<PersonaSpec>> {
    let mut out: Vec<PersonaSpec> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<personas>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PersonaSpec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: "personas".into(),
            line: i + 1,
            message: e.to_string(),
        })?;
        p.validate()?;
        out.push(p);
    }
    let mut ids: Vec<u64> = out.iter().map(|p| p.persona_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Data("duplicate persona_id in persona file".into()));
    }
    Ok(out)
}
