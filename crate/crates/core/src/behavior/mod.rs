//! Behavioral responses to life events.
//!
//! A [`BehaviorBackend`] turns a [`PromptContext`] into a narrative response.
//! Two backends ship: a scripted persona policy (the default) and an HTTP
//! chat-completion client.

mod llm;
mod memory;
pub(crate) mod scripted;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::events::EventDef;
use crate::persona::{Arm, PersonaSpec};
use crate::rng::RngStream;
use crate::state::AgentState;

pub use llm::{
    ChatClient, ChatMessage, ClientConfig, LlmBackend, ResponseCache, ENV_API_KEY, ENV_ENDPOINT,
    ENV_TIMEOUT,
};
pub use memory::{fold_gist, update_memory, MemoryWindow, GIST_CHARS, MEMORY_CAPACITY};
pub use scripted::{
    adaptive_probability, respond_scripted, MagnitudeTable, PolicyParams, ScriptedBackend,
};

/// Closed set of coping classifications.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehavioralTag {
    AdaptiveCopingUpskilling,
    AdaptiveCopingProblemSolving,
    AdaptiveCopingBenefitFinding,
    PassiveRumination,
    Avoidant,
    Neutral,
}

impl BehavioralTag {
    pub const ALL: [BehavioralTag; 6] = [
        BehavioralTag::AdaptiveCopingUpskilling,
        BehavioralTag::AdaptiveCopingProblemSolving,
        BehavioralTag::AdaptiveCopingBenefitFinding,
        BehavioralTag::PassiveRumination,
        BehavioralTag::Avoidant,
        BehavioralTag::Neutral,
    ];

    pub fn is_adaptive(self) -> bool {
        matches!(
            self,
            BehavioralTag::AdaptiveCopingUpskilling
                | BehavioralTag::AdaptiveCopingProblemSolving
                | BehavioralTag::AdaptiveCopingBenefitFinding
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BehavioralTag::AdaptiveCopingUpskilling => "adaptive_coping_upskilling",
            BehavioralTag::AdaptiveCopingProblemSolving => "adaptive_coping_problem_solving",
            BehavioralTag::AdaptiveCopingBenefitFinding => "adaptive_coping_benefit_finding",
            BehavioralTag::PassiveRumination => "passive_rumination",
            BehavioralTag::Avoidant => "avoidant",
            BehavioralTag::Neutral => "neutral",
        }
    }

    pub fn from_name(s: &str) -> Option<BehavioralTag> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for BehavioralTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Structured tags set by backends that classify their own output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseTags {
    pub tag: BehavioralTag,
    /// Multiplier on the matched rule's well-being change.
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorResponse {
    pub narrative: String,
    pub tags: Option<ResponseTags>,
}

impl BehaviorResponse {
    /// Response recorded for a year with no event.
    pub fn uneventful() -> Self {
        BehaviorResponse {
            narrative: String::new(),
            tags: Some(ResponseTags {
                tag: BehavioralTag::Neutral,
                intensity: 1.0,
            }),
        }
    }
}

/// Everything a backend sees when responding to one event.
#[derive(Debug, Clone, Copy)]
pub struct PromptContext<'a> {
    pub agent_id: u64,
    pub arm: Arm,
    pub system_prompt: &'a str,
    /// Intervention text; `None` before the arm's intervention age.
    pub addendum: Option<&'a str>,
    pub event: &'a EventDef,
    pub age: u32,
    pub state_summary: &'a str,
    pub memory: &'a MemoryWindow,
}

impl PromptContext<'_> {
    pub fn intervention_active(&self) -> bool {
        self.addendum.is_some()
    }

    /// The user-turn text: age, event, state and memory.
    pub fn event_message(&self, empirical_prior: &str) -> String {
        let mut m = format!(
            "You are now {}. This year, {}.\n\nYour current situation: {}\n",
            self.age, self.event.narrative, self.state_summary
        );
        if !empirical_prior.is_empty() {
            m.push_str("\nContext: ");
            m.push_str(empirical_prior);
            m.push('\n');
        }
        let mem = self.memory.render();
        if !mem.is_empty() {
            m.push('\n');
            m.push_str(&mem);
        }
        m.push_str(
            "\nDescribe, in the first person and in a few sentences, how you feel about \
             this and what you decide to do.",
        );
        m
    }
}

/// Supplies the empirical-prior sentence placed in LLM prompts.
pub trait ContextProvider: Send + Sync {
    fn empirical_prior(&self, event: &EventDef, age: u32) -> String;
}

/// Returns the same generic sentence for every event.
#[derive(Debug, Clone, Default)]
pub struct FixedContext;

impl ContextProvider for FixedContext {
    fn empirical_prior(&self, _event: &EventDef, _age: u32) -> String {
        "Research suggests that people respond to events like this in many different ways, \
         and that how they respond shapes what comes next."
            .to_string()
    }
}

/// Source of behavioral responses.
pub trait BehaviorBackend: Send + Sync {
    /// Responds to the event in `ctx`. `stream` is this agent-year's behavior
    /// stream.
    fn respond(
        &self,
        ctx: &PromptContext<'_>,
        persona: &PersonaSpec,
        stream: &mut RngStream,
    ) -> Result<BehaviorResponse>;

    /// Folds an entry evicted from the memory window into the gist.
    fn fold_memory(&self, agent_id: u64, age: u32, gist: &str, evicted: &str) -> Result<String> {
        let _ = (agent_id, age);
        Ok(fold_gist(gist, evicted))
    }

    /// End-of-life reflection written from the final state and memory.
    fn life_summary(
        &self,
        agent_id: u64,
        system_prompt: &str,
        state: &AgentState,
    ) -> Result<String> {
        let _ = (agent_id, system_prompt);
        Ok(templated_life_summary(state))
    }

    /// Whether responses come with structured tags.
    fn is_scripted(&self) -> bool;

    /// Short name recorded in run manifests.
    fn name(&self) -> &'static str;
}

/// Deterministic end-of-life reflection built from the final state.
pub fn templated_life_summary(state: &AgentState) -> String {
    let mood = match state.swb {
        s if s >= 3.0 => "deeply content",
        s if s >= 1.0 => "mostly content",
        s if s > -1.0 => "mixed",
        s if s > -3.0 => "often discouraged",
        _ => "weighed down and regretful",
    };
    let mut out = format!(
        "I am {}. Looking back, I feel {mood} about my life. I have a net worth of ${:.0} \
         and reached education level {}.",
        state.age, state.wealth, state.education_level
    );
    if state.chronic_disease {
        out.push_str(" I live with a chronic health condition.");
    }
    if state.dementia {
        out.push_str(" My memory is failing me.");
    }
    out
}
