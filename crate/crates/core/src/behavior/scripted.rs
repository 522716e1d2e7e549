use serde::{Deserialize, Serialize};

use super::{BehaviorBackend, BehaviorResponse, BehavioralTag, PromptContext, ResponseTags};
use crate::error::{Error, Result};
use crate::events::{Domain, Valence};
use crate::persona::{Arm, PersonaSpec, Trait};
use crate::rng::RngStream;

/// Response intensity by event valence and coping class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MagnitudeTable {
    pub negative_adaptive: f64,
    pub negative_rumination: f64,
    pub negative_avoidant: f64,
    pub positive: f64,
    pub neutral: f64,
}

impl Default for MagnitudeTable {
    fn default() -> Self {
        MagnitudeTable {
            negative_adaptive: 1.0,
            negative_rumination: 1.0,
            negative_avoidant: 1.0,
            positive: 1.0,
            neutral: 1.0,
        }
    }
}

impl MagnitudeTable {
    fn intensity(&self, valence: Valence, tag: BehavioralTag) -> f64 {
        match valence {
            Valence::Positive => self.positive,
            Valence::Neutral => self.neutral,
            Valence::Negative if tag.is_adaptive() => self.negative_adaptive,
            Valence::Negative if tag == BehavioralTag::PassiveRumination => {
                self.negative_rumination
            }
            Valence::Negative => self.negative_avoidant,
        }
    }
}

/// Coefficients of the scripted coping policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyParams {
    pub intercept: f64,
    pub resilience: f64,
    pub conscientiousness: f64,
    pub neuroticism: f64,
    pub ros6: f64,
    pub ros18: f64,
    pub magnitudes: MagnitudeTable,
}

impl PolicyParams {
    /// Coefficients before calibration.
    pub const UNTUNED: PolicyParams = PolicyParams {
        intercept: 0.0,
        resilience: 0.45,
        conscientiousness: 0.30,
        neuroticism: -0.25,
        ros6: 0.90,
        ros18: 0.50,
        magnitudes: MagnitudeTable {
            negative_adaptive: 1.0,
            negative_rumination: 1.0,
            negative_avoidant: 1.0,
            positive: 1.0,
            neutral: 1.0,
        },
    };

    /// All coefficients zero.
    pub fn zero() -> Self {
        PolicyParams {
            intercept: 0.0,
            resilience: 0.0,
            conscientiousness: 0.0,
            neuroticism: 0.0,
            ros6: 0.0,
            ros18: 0.0,
            magnitudes: MagnitudeTable::default(),
        }
    }

    pub fn ros_boost(&self, arm: Arm) -> f64 {
        match arm {
            Arm::Ros6 => self.ros6,
            Arm::Ros18 => self.ros18,
            Arm::Sham6 | Arm::Sham18 => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.intercept,
            self.resilience,
            self.conscientiousness,
            self.neuroticism,
            self.ros6,
            self.ros18,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("policy coefficients must be finite".into()));
        }
        let m = self.magnitudes;
        let mags = [
            m.negative_adaptive,
            m.negative_rumination,
            m.negative_avoidant,
            m.positive,
            m.neutral,
        ];
        if mags.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("response magnitudes must be non-negative".into()));
        }
        Ok(())
    }
}

impl Default for PolicyParams {
    /// Calibrated coefficients.
    fn default() -> Self {
        PolicyParams {
            ros6: 0.62,
            ros18: 0.41,
            ..PolicyParams::UNTUNED
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Probability that a negative event is met with adaptive coping.
pub fn adaptive_probability(
    params: &PolicyParams,
    persona: &PersonaSpec,
    arm: Arm,
    ros_active: bool,
) -> f64 {
    let ros = if ros_active { params.ros_boost(arm) } else { 0.0 };
    sigmoid(
        params.intercept
            + params.resilience * persona.trait_z(Trait::Resilience)
            + params.conscientiousness * persona.trait_z(Trait::Conscientiousness)
            + params.neuroticism * persona.trait_z(Trait::Neuroticism)
            + ros,
    )
}

fn adaptive_mix(domain: Domain, age: u32) -> [f64; 3] {
    // upskilling, problem solving, benefit finding
    match domain {
        Domain::Economic if age < 18 => [0.5, 0.35, 0.15],
        Domain::Economic => [0.45, 0.35, 0.2],
        Domain::Health => [0.1, 0.5, 0.4],
        Domain::Social => [0.05, 0.35, 0.6],
    }
}

pub(crate) fn scripted_narrative(tag: BehavioralTag, valence: Valence, event_id: &str) -> String {
    let what = event_id.replace('_', " ");
    match (valence, tag) {
        (Valence::Negative, BehavioralTag::AdaptiveCopingUpskilling) => format!(
            "The {what} has shaken me, but I am treating it as a push to learn. \
             I am going to enroll in a course and build new skills."
        ),
        (Valence::Negative, BehavioralTag::AdaptiveCopingProblemSolving) => format!(
            "The {what} is hard, but I have made a concrete plan to deal with it, \
             one step at a time."
        ),
        (Valence::Negative, BehavioralTag::AdaptiveCopingBenefitFinding) => format!(
            "The {what} hurts, but I can see a lesson in it, and I am grateful for \
             the people who stand by me."
        ),
        (Valence::Negative, BehavioralTag::PassiveRumination) => format!(
            "Since the {what} I can't stop thinking about it. I keep replaying what \
             went wrong and asking why me."
        ),
        (Valence::Negative, _) => format!(
            "I don't want to deal with the {what}. I am keeping busy so I don't \
             have to face it."
        ),
        (Valence::Positive, _) => format!(
            "The {what} is good news. I am glad about it and mean to make the most of it."
        ),
        (Valence::Neutral, _) => format!("The {what} is a change, and I am taking it in stride."),
    }
}

/// Scripted response. Always consumes exactly two uniforms so the stream
/// position does not depend on the branch taken.
pub fn respond_scripted(
    ctx: &PromptContext<'_>,
    persona: &PersonaSpec,
    params: &PolicyParams,
    stream: &mut RngStream,
) -> BehaviorResponse {
    let u_class = stream.uniform();
    let u_kind = stream.uniform();
    let ev = ctx.event;
    let tag = if ev.valence == Valence::Negative {
        let p = adaptive_probability(params, persona, ctx.arm, ctx.intervention_active());
        if u_class < p {
            let mix = adaptive_mix(ev.domain, ctx.age);
            let mut acc = 0.0;
            let kinds = [
                BehavioralTag::AdaptiveCopingUpskilling,
                BehavioralTag::AdaptiveCopingProblemSolving,
                BehavioralTag::AdaptiveCopingBenefitFinding,
            ];
            let mut chosen = kinds[2];
            for (k, w) in kinds.iter().zip(mix) {
                acc += w;
                if u_kind < acc {
                    chosen = *k;
                    break;
                }
            }
            chosen
        } else if u_kind < persona.ocean.neuroticism / 100.0 {
            BehavioralTag::PassiveRumination
        } else {
            BehavioralTag::Avoidant
        }
    } else {
        BehavioralTag::Neutral
    };
    BehaviorResponse {
        narrative: scripted_narrative(tag, ev.valence, &ev.event_id),
        tags: Some(ResponseTags {
            tag,
            intensity: params.magnitudes.intensity(ev.valence, tag),
        }),
    }
}

/// Backend wrapping [`respond_scripted`].
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    pub params: PolicyParams,
}

impl ScriptedBackend {
    pub fn new(params: PolicyParams) -> Self {
        ScriptedBackend { params }
    }
}

impl BehaviorBackend for ScriptedBackend {
    fn respond(
        &self,
        ctx: &PromptContext<'_>,
        persona: &PersonaSpec,
        stream: &mut RngStream,
    ) -> Result<BehaviorResponse> {
        Ok(respond_scripted(ctx, persona, &self.params, stream))
    }

    fn is_scripted(&self) -> bool {
        true
    }

    fn name(&self) -> &'static str {
        "scripted"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::MemoryWindow;
    use crate::events::EventCatalog;
    use crate::persona::{sample_personas, MatrixConfig};
    use crate::rng::behavior_stream;
    use proptest::prelude::*;

    fn median_persona() -> PersonaSpec {
        let mut p = sample_personas(1, 1, &MatrixConfig::default()).unwrap().remove(0);
        p.resilience_pct = 50.0;
        p.ocean.conscientiousness = 50.0;
        p.ocean.neuroticism = 50.0;
        p
    }

    #[test]
    fn zero_coefficients_give_even_odds() {
        let p = adaptive_probability(&PolicyParams::zero(), &median_persona(), Arm::Ros6, true);
        assert_eq!(p, 0.5);
    }

    #[test]
    fn ros18_boost_alone() {
        let params = PolicyParams {
            ros18: 0.5,
            ..PolicyParams::zero()
        };
        let p = adaptive_probability(&params, &median_persona(), Arm::Ros18, true);
        let expected = 1.0 / (1.0 + (-0.5f64).exp());
        assert!((p - expected).abs() < 1e-12);
        assert!((p - 0.6225).abs() < 1e-4);
    }

    #[test]
    fn sham_and_inactive_get_no_boost() {
        let params = PolicyParams::default();
        let persona = median_persona();
        let base = adaptive_probability(&params, &persona, Arm::Ros6, false);
        assert!(adaptive_probability(&params, &persona, Arm::Ros6, true) > base);
        assert_eq!(adaptive_probability(&params, &persona, Arm::Sham6, true), base);
    }

    #[test]
    fn shipped_defaults_order_boosts() {
        let p = PolicyParams::default();
        assert!(p.ros6 >= p.ros18 && p.ros18 >= 0.0);
        p.validate().unwrap();
    }

    fn respond(event: &str, arm: Arm, active: bool, seed: u64) -> BehaviorResponse {
        let cat = EventCatalog::default();
        let ev = cat.get(event).unwrap();
        let mem = MemoryWindow::default();
        let ctx = PromptContext {
            agent_id: 0,
            arm,
            system_prompt: "",
            addendum: if active { Some("x") } else { None },
            event: ev,
            age: 30,
            state_summary: "",
            memory: &mem,
        };
        let mut s = behavior_stream(seed, 0, None, 30);
        respond_scripted(&ctx, &median_persona(), &PolicyParams::default(), &mut s)
    }

    #[test]
    fn positive_events_are_neutral() {
        let r = respond("job_promotion", Arm::Ros6, true, 3);
        assert_eq!(r.tags.unwrap().tag, BehavioralTag::Neutral);
        assert!(!r.narrative.is_empty());
    }

    #[test]
    fn adaptive_rate_rises_with_ros() {
        let n = 4000;
        let rate = |active: bool| {
            (0..n)
                .filter(|s| {
                    respond("job_layoff", Arm::Ros6, active, *s)
                        .tags
                        .unwrap()
                        .tag
                        .is_adaptive()
                })
                .count() as f64
                / n as f64
        };
        let off = rate(false);
        let on = rate(true);
        let p = PolicyParams::default();
        let expect_off = 0.5;
        let expect_on = 1.0 / (1.0 + (-p.ros6).exp());
        assert!((off - expect_off).abs() < 0.03, "{off}");
        assert!((on - expect_on).abs() < 0.03, "{on}");
    }

    proptest! {
        #[test]
        fn deterministic_given_stream(seed in any::<u64>()) {
            prop_assert_eq!(
                respond("bullying", Arm::Sham6, false, seed),
                respond("bullying", Arm::Sham6, false, seed)
            );
        }

        #[test]
        fn probability_in_unit_interval(
            i in -5.0f64..5.0, r in -2.0f64..2.0, c in -2.0f64..2.0, n in -2.0f64..2.0,
            pr in 0.05f64..99.95,
        ) {
            let params = PolicyParams { intercept: i, resilience: r, conscientiousness: c, neuroticism: n, ..PolicyParams::zero() };
            let mut persona = median_persona();
            persona.resilience_pct = pr;
            let p = adaptive_probability(&params, &persona, Arm::Sham18, false);
            prop_assert!(p > 0.0 && p < 1.0);
        }
    }
}
