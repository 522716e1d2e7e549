//! Terminal outcomes per agent and population standardization.

use std::collections::HashMap;
use std::io::Write;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::engine::{Termination, Trajectory};
use crate::error::{Error, Result, StatsError};
use crate::persona::{Arm, PersonaSpec};
use crate::rng::{StreamKey, StreamPurpose};

const LEXICON_TEXT: &str = include_str!("../data/lexicon.txt");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeParams {
    pub walking_baseline: f64,
    pub walking_per_shock: f64,
    pub walking_chronic: f64,
    pub walking_floor: f64,
    /// Standard deviation of the scripted sentiment noise.
    pub sentiment_noise_sd: f64,
    /// Age at which survivors are censored.
    pub censor_age: u32,
}

impl Default for OutcomeParams {
    fn default() -> Self {
        OutcomeParams {
            walking_baseline: 130.0,
            walking_per_shock: 2.5,
            walking_chronic: 8.0,
            walking_floor: 60.0,
            sentiment_noise_sd: 0.25,
            censor_age: 65,
        }
    }
}

impl OutcomeParams {
    pub fn validate(&self) -> Result<()> {
        let v = [
            self.walking_baseline,
            self.walking_per_shock,
            self.walking_chronic,
            self.walking_floor,
            self.sentiment_noise_sd,
        ];
        if v.iter().any(|x| !x.is_finite()) || self.sentiment_noise_sd < 0.0 {
            return Err(Error::Config("outcome parameters must be finite, noise sd ≥ 0".into()));
        }
        Ok(())
    }

    pub fn walking_speed(&self, major_shocks: u32, chronic: bool) -> f64 {
        let chronic = if chronic { self.walking_chronic } else { 0.0 };
        (self.walking_baseline - self.walking_per_shock * f64::from(major_shocks) - chronic)
            .max(self.walking_floor)
    }
}

/// How raw well-being is read off a finished life.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SentimentMode {
    /// Final well-being state plus deterministic per-agent noise.
    Scripted { master_seed: u64 },
    /// Mean word valence of the life summary.
    Lexicon,
}

/// One row of the outcome table. Non-mortality fields are `None` for the
/// deceased.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub agent_id: u64,
    pub persona_id: u64,
    pub arm: Arm,
    pub mortality: u8,
    /// Age at death, or the censoring age for survivors.
    pub death_age: u32,
    pub log_wealth: Option<f64>,
    pub swb_raw: Option<f64>,
    pub swb_z: Option<f64>,
    pub chronic: Option<u8>,
    pub walking_speed: Option<f64>,
    pub dementia: Option<u8>,
    pub coping_rate: Option<f64>,
    pub behavioral_resilience_z: Option<f64>,
}

impl OutcomeRecord {
    pub fn alive(&self) -> bool {
        self.mortality == 0
    }
}

/// Outcome variables available to the analyses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Mortality,
    LogWealth,
    SwbZ,
    Chronic,
    WalkingSpeed,
    Dementia,
    BehavioralResilience,
}

impl Outcome {
    /// The six terminal outcomes.
    pub const PRIMARY: [Outcome; 6] = [
        Outcome::Mortality,
        Outcome::LogWealth,
        Outcome::SwbZ,
        Outcome::Chronic,
        Outcome::WalkingSpeed,
        Outcome::Dementia,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Outcome::Mortality => "mortality",
            Outcome::LogWealth => "log_wealth",
            Outcome::SwbZ => "swb_z",
            Outcome::Chronic => "chronic",
            Outcome::WalkingSpeed => "walking_speed",
            Outcome::Dementia => "dementia",
            Outcome::BehavioralResilience => "behavioral_resilience_z",
        }
    }

    pub fn from_name(s: &str) -> Option<Outcome> {
        [
            Outcome::Mortality,
            Outcome::LogWealth,
            Outcome::SwbZ,
            Outcome::Chronic,
            Outcome::WalkingSpeed,
            Outcome::Dementia,
            Outcome::BehavioralResilience,
        ]
        .into_iter()
        .find(|o| o.name() == s)
    }

    pub fn is_binary(self) -> bool {
        matches!(self, Outcome::Mortality | Outcome::Chronic | Outcome::Dementia)
    }

    /// Whether larger values are better.
    pub fn higher_is_better(self) -> bool {
        !self.is_binary()
    }

    pub fn value(self, r: &OutcomeRecord) -> Option<f64> {
        match self {
            Outcome::Mortality => Some(f64::from(r.mortality)),
            Outcome::LogWealth => r.log_wealth,
            Outcome::SwbZ => r.swb_z,
            Outcome::Chronic => r.chronic.map(f64::from),
            Outcome::WalkingSpeed => r.walking_speed,
            Outcome::Dementia => r.dementia.map(f64::from),
            Outcome::BehavioralResilience => r.behavioral_resilience_z,
        }
    }
}

fn lexicon() -> &'static HashMap<&'static str, f64> {
    static LEX: OnceLock<HashMap<&'static str, f64>> = OnceLock::new();
    LEX.get_or_init(|| {
        LEXICON_TEXT
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .filter_map(|l| {
                let (w, v) = l.split_once('\t')?;
                Some((w.trim(), v.trim().parse().ok()?))
            })
            .collect()
    })
}

/// Mean valence of the lexicon words in `text`; 0 when none occur.
pub fn lexicon_sentiment(text: &str) -> f64 {
    let lex = lexicon();
    let lower = text.to_lowercase();
    let scores: Vec<f64> = lower
        .split(|c: char| !c.is_alphabetic())
        .filter_map(|w| lex.get(w).copied())
        .collect();
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

fn sentiment_noise(master_seed: u64, t: &Trajectory, sd: f64) -> f64 {
    if sd == 0.0 {
        return 0.0;
    }
    let u = StreamKey {
        master_seed,
        purpose: StreamPurpose::Sentiment,
        persona_id: t.persona_id,
        year: 0,
        arm: Some(t.arm),
    }
    .stream()
    .uniform();
    let z = Normal::standard().inverse_cdf(u.clamp(1e-12, 1.0 - 1e-12));
    sd * z
}

/// Terminal outcomes of one finished trajectory.
pub fn extract_outcomes(
    t: &Trajectory,
    params: &OutcomeParams,
    mode: SentimentMode,
) -> Result<OutcomeRecord> {
    if t.termination == Termination::Pending {
        return Err(Error::Data(format!(
            "agent {} has an unfinished trajectory; resume the run first",
            t.agent_id
        )));
    }
    let last = t
        .final_state()
        .ok_or_else(|| Error::Data(format!("agent {} has no records", t.agent_id)))?;
    let dead = t.termination == Termination::Death;
    let mut rec = OutcomeRecord {
        agent_id: t.agent_id,
        persona_id: t.persona_id,
        arm: t.arm,
        mortality: u8::from(dead),
        death_age: t.death_age().unwrap_or(params.censor_age),
        log_wealth: None,
        swb_raw: None,
        swb_z: None,
        chronic: None,
        walking_speed: None,
        dementia: None,
        coping_rate: None,
        behavioral_resilience_z: None,
    };
    if dead {
        return Ok(rec);
    }
    rec.log_wealth = Some(last.wealth.max(1.0).ln());
    rec.swb_raw = Some(match mode {
        SentimentMode::Scripted { master_seed } => {
            last.swb + sentiment_noise(master_seed, t, params.sentiment_noise_sd)
        }
        SentimentMode::Lexicon => lexicon_sentiment(&t.life_summary),
    });
    rec.chronic = Some(u8::from(last.chronic_disease));
    rec.walking_speed = Some(params.walking_speed(last.major_shock_count, last.chronic_disease));
    rec.dementia = Some(u8::from(last.dementia));
    rec.coping_rate = Some(last.coping_rate());
    Ok(rec)
}

fn zscores(values: &[f64], what: &str) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(StatsError::Degenerate(format!("{what}: fewer than 2 survivors")).into());
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd.is_nan() || sd <= 1e-12 * mean.abs().max(1.0) {
        return Err(StatsError::Degenerate(format!("{what}: zero variance")).into());
    }
    Ok(values.iter().map(|v| (v - mean) / sd).collect())
}

/// Fills `swb_z` and `behavioral_resilience_z` by z-scoring over survivors
/// (population standard deviation).
pub fn standardize_population(mut records: Vec<OutcomeRecord>) -> Result<Vec<OutcomeRecord>> {
    let idx: Vec<usize> = (0..records.len()).filter(|i| records[*i].alive()).collect();
    let swb: Vec<f64> = idx.iter().map(|i| records[*i].swb_raw.unwrap_or(0.0)).collect();
    let cope: Vec<f64> = idx
        .iter()
        .map(|i| records[*i].coping_rate.unwrap_or(0.0))
        .collect();
    let swb_z = zscores(&swb, "swb")?;
    let cope_z = zscores(&cope, "behavioral resilience")?;
    for (k, i) in idx.iter().enumerate() {
        records[*i].swb_z = Some(swb_z[k]);
        records[*i].behavioral_resilience_z = Some(cope_z[k]);
    }
    Ok(records)
}

/// Outcome records joined with their personas.
#[derive(Debug, Clone)]
pub struct OutcomeTable {
    pub records: Vec<OutcomeRecord>,
    pub personas: Vec<PersonaSpec>,
    index: HashMap<u64, usize>,
}

impl OutcomeTable {
    pub fn new(records: Vec<OutcomeRecord>, personas: Vec<PersonaSpec>) -> Result<Self> {
        let index: HashMap<u64, usize> = personas
            .iter()
            .enumerate()
            .map(|(i, p)| (p.persona_id, i))
            .collect();
        if let Some(r) = records.iter().find(|r| !index.contains_key(&r.persona_id)) {
            return Err(Error::Data(format!(
                "agent {} refers to unknown persona {}",
                r.agent_id, r.persona_id
            )));
        }
        Ok(OutcomeTable {
            records,
            personas,
            index,
        })
    }

    pub fn persona(&self, persona_id: u64) -> &PersonaSpec {
        &self.personas[self.index[&persona_id]]
    }

    /// Extracts and standardizes outcomes for a set of trajectories.
    pub fn from_trajectories(
        trajs: &[Trajectory],
        personas: Vec<PersonaSpec>,
        params: &OutcomeParams,
        mode: SentimentMode,
    ) -> Result<Self> {
        let recs = trajs
            .iter()
            .map(|t| extract_outcomes(t, params, mode))
            .collect::<Result<Vec<_>>>()?;
        Self::new(standardize_population(recs)?, personas)
    }

    /// Same table with records restricted to `arms`.
    pub fn filter_arms(&self, arms: &[Arm]) -> OutcomeTable {
        OutcomeTable {
            records: self
                .records
                .iter()
                .filter(|r| arms.contains(&r.arm))
                .cloned()
                .collect(),
            personas: self.personas.clone(),
            index: self.index.clone(),
        }
    }
}

/// CSV header of the outcome table, in column order.
pub const OUTCOME_CSV_HEADER: [&str; 13] = [
    "agent_id",
    "persona_id",
    "arm",
    "mortality",
    "death_age",
    "log_wealth",
    "swb_raw",
    "swb_z",
    "chronic",
    "walking_speed",
    "dementia",
    "coping_rate",
    "behavioral_resilience_z",
];

/// Writes one row per agent; absent values are empty cells.
pub fn write_outcomes_csv<W: Write>(w: W, records: &[OutcomeRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io("<outcomes csv>", e))?;
    Ok(())
}

pub fn read_outcomes_csv<R: std::io::Read>(r: R) -> Result<Vec<OutcomeRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::BehavioralTag;
    use crate::engine::YearRecord;
    use crate::mapper::StateDelta;
    use crate::state::AgentState;
    use proptest::prelude::*;

    fn traj(state: AgentState, termination: Termination, arm: Arm) -> Trajectory {
        Trajectory {
            agent_id: 4,
            persona_id: 1,
            arm,
            records: vec![YearRecord {
                age: state.age,
                event_id: None,
                tag: BehavioralTag::Neutral,
                narrative: None,
                delta: StateDelta::zero(),
                state,
                rescaled: false,
            }],
            life_summary: "I am grateful and content.".into(),
            termination,
            pending: None,
            backend_failure: false,
        }
    }

    #[test]
    fn walking_speed_formula() {
        let p = OutcomeParams::default();
        assert_eq!(p.walking_speed(2, true), 117.0);
        assert_eq!(p.walking_speed(0, false), 130.0);
        assert_eq!(p.walking_speed(100, true), 60.0);
    }

    #[test]
    fn survivor_outcomes() {
        let mut s = AgentState::new(66, 0.0);
        s.major_shock_count = 2;
        s.chronic_disease = true;
        let r = extract_outcomes(
            &traj(s, Termination::ReachedEnd, Arm::Sham6),
            &OutcomeParams {
                sentiment_noise_sd: 0.0,
                ..OutcomeParams::default()
            },
            SentimentMode::Scripted { master_seed: 1 },
        )
        .unwrap();
        assert_eq!(r.mortality, 0);
        assert_eq!(r.death_age, 65);
        assert_eq!(r.log_wealth, Some(0.0));
        assert_eq!(r.walking_speed, Some(117.0));
        assert_eq!(r.chronic, Some(1));
    }

    #[test]
    fn death_outcomes() {
        let mut s = AgentState::new(52, 5e5);
        s.alive = false;
        let r = extract_outcomes(
            &traj(s, Termination::Death, Arm::Ros6),
            &OutcomeParams::default(),
            SentimentMode::Lexicon,
        )
        .unwrap();
        assert_eq!((r.mortality, r.death_age), (1, 52));
        assert!(r.log_wealth.is_none() && r.walking_speed.is_none() && r.swb_raw.is_none());
    }

    #[test]
    fn pending_is_rejected() {
        let t = traj(AgentState::new(30, 0.0), Termination::Pending, Arm::Ros6);
        assert!(matches!(
            extract_outcomes(&t, &OutcomeParams::default(), SentimentMode::Lexicon),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn lexicon_scores() {
        assert!(lexicon_sentiment("I am grateful and content") > 0.5);
        assert!(lexicon_sentiment("lonely, bitter and full of regret") < -0.5);
        assert_eq!(lexicon_sentiment("the table"), 0.0);
    }

    fn rec(id: u64, swb: f64, cope: f64) -> OutcomeRecord {
        OutcomeRecord {
            agent_id: id,
            persona_id: id / 4,
            arm: Arm::from_index((id % 4) as usize).unwrap(),
            mortality: 0,
            death_age: 65,
            log_wealth: Some(10.0),
            swb_raw: Some(swb),
            swb_z: None,
            chronic: Some(0),
            walking_speed: Some(130.0),
            dementia: Some(0),
            coping_rate: Some(cope),
            behavioral_resilience_z: None,
        }
    }

    #[test]
    fn two_point_standardization() {
        let out = standardize_population(vec![rec(0, -1.0, 0.2), rec(1, 1.0, 0.4)]).unwrap();
        assert_eq!(out[0].swb_z, Some(-1.0));
        assert_eq!(out[1].swb_z, Some(1.0));
    }

    #[test]
    fn constant_swb_is_degenerate() {
        let r = standardize_population(vec![rec(0, 2.0, 0.1), rec(1, 2.0, 0.3)]);
        assert!(matches!(r, Err(Error::Stats(StatsError::Degenerate(_)))));
    }

    #[test]
    fn large_population_is_unit_scaled() {
        let recs: Vec<_> = (0..10_000u64)
            .map(|i| rec(i, ((i * 7919) % 1000) as f64 / 37.0, ((i * 31) % 97) as f64 / 97.0))
            .collect();
        let out = standardize_population(recs).unwrap();
        let z: Vec<f64> = out.iter().map(|r| r.swb_z.unwrap()).collect();
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
    }

    #[test]
    fn csv_round_trip() {
        let mut a = rec(0, 1.0, 0.5);
        a.swb_z = Some(0.25);
        let mut b = rec(1, 0.0, 0.0);
        b.mortality = 1;
        b.log_wealth = None;
        b.swb_raw = None;
        let mut buf = Vec::new();
        write_outcomes_csv(&mut buf, &[a.clone(), b.clone()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), OUTCOME_CSV_HEADER.join(","));
        assert_eq!(read_outcomes_csv(&buf[..]).unwrap(), vec![a, b]);
    }

    proptest! {
        #[test]
        fn walking_speed_monotone(shocks in 0u32..40) {
            let p = OutcomeParams::default();
            prop_assert!(p.walking_speed(shocks + 1, false) <= p.walking_speed(shocks, false));
            prop_assert!(p.walking_speed(shocks, true) <= p.walking_speed(shocks, false));
            prop_assert!(p.walking_speed(shocks, true) >= p.walking_floor);
        }

        #[test]
        fn zscores_are_shift_invariant(
            vals in proptest::collection::vec(-5.0f64..5.0, 3..40),
            shift in -100.0f64..100.0,
        ) {
            let spread = vals.iter().cloned().fold(f64::MIN, f64::max) - vals.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 1e-3);
            let a: Vec<_> = vals.iter().enumerate().map(|(i, v)| rec(i as u64, *v, (i % 3) as f64)).collect();
            let b: Vec<_> = vals.iter().enumerate().map(|(i, v)| rec(i as u64, *v + shift, (i % 3) as f64)).collect();
            let za = standardize_population(a).unwrap();
            let zb = standardize_population(b).unwrap();
            for (x, y) in za.iter().zip(&zb) {
                prop_assert!((x.swb_z.unwrap() - y.swb_z.unwrap()).abs() < 1e-9);
            }
        }
    }
}
