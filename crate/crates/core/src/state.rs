use serde::{Deserialize, Serialize};

use crate::behavior::MemoryWindow;

/// Lower and upper bound of the well-being state.
pub const SWB_BOUND: f64 = 10.0;

/// Mutable per-year state of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub age: u32,
    pub alive: bool,
    pub wealth: f64,
    pub swb: f64,
    pub education_level: u32,
    pub chronic_disease: bool,
    pub dementia: bool,
    pub major_shock_count: u32,
    pub employed: bool,
    pub adaptive_count: u32,
    pub negative_event_count: u32,
    #[serde(skip)]
    pub memory: MemoryWindow,
}

impl AgentState {
    pub fn new(age: u32, wealth: f64) -> Self {
        AgentState {
            age,
            alive: true,
            wealth,
            swb: 0.0,
            education_level: 0,
            chronic_disease: false,
            dementia: false,
            major_shock_count: 0,
            employed: false,
            adaptive_count: 0,
            negative_event_count: 0,
            memory: MemoryWindow::default(),
        }
    }

    /// Fraction of negative events met with adaptive coping so far; 0 before
    /// the first negative event.
    pub fn coping_rate(&self) -> f64 {
        if self.negative_event_count == 0 {
            0.0
        } else {
            f64::from(self.adaptive_count) / f64::from(self.negative_event_count)
        }
    }

    /// One-line description used in prompts.
    pub fn summary(&self) -> String {
        let mut health = Vec::new();
        if self.chronic_disease {
            health.push("living with a chronic condition");
        }
        if self.dementia {
            health.push("diagnosed with dementia");
        }
        let health = if health.is_empty() {
            "no chronic conditions".to_string()
        } else {
            health.join(", ")
        };
        let work = if self.employed {
            "employed"
        } else {
            "not in paid work"
        };
        format!(
            "Age {}; net worth ${:.0}; {}; education level {}; {}; {} major health shock(s).",
            self.age,
            self.wealth,
            work,
            self.education_level,
            health,
            self.major_shock_count
        )
    }
}
