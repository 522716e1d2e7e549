use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Number of recent yearly summaries kept verbatim.
pub const MEMORY_CAPACITY: usize = 10;

/// Longest gist kept, in characters.
pub const GIST_CHARS: usize = 2000;

/// Recent-experience window: the last few yearly summaries plus a compressed
/// gist of everything older.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryWindow {
    pub recent: VecDeque<String>,
    pub gist: String,
}

impl MemoryWindow {
    /// Appends `summary`, returning the entry pushed out of the window, if any.
    /// The gist is left alone; callers decide how to fold the evicted entry.
    pub fn push(&mut self, summary: String) -> Option<String> {
        self.recent.push_back(summary);
        if self.recent.len() > MEMORY_CAPACITY {
            self.recent.pop_front()
        } else {
            None
        }
    }

    pub fn is_empty(&self) -> bool {
        self.recent.is_empty() && self.gist.is_empty()
    }

    /// Text block shown to the behavior backend.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if !self.gist.is_empty() {
            out.push_str("Earlier life, in brief: ");
            out.push_str(&self.gist);
            out.push('\n');
        }
        if !self.recent.is_empty() {
            out.push_str("Recent years:\n");
            for r in &self.recent {
                out.push_str("- ");
                out.push_str(r);
                out.push('\n');
            }
        }
        out
    }
}

/// Appends `evicted` to `gist` and keeps only the last [`GIST_CHARS`]
/// characters.
pub fn fold_gist(gist: &str, evicted: &str) -> String {
    let joined = if gist.is_empty() {
        evicted.to_string()
    } else {
        format!("{gist} {evicted}")
    };
    let n = joined.chars().count();
    if n <= GIST_CHARS {
        joined
    } else {
        joined.chars().skip(n - GIST_CHARS).collect()
    }
}

/// Pushes `summary` and folds any evicted entry into the gist by truncated
/// concatenation.
pub fn update_memory(mut mem: MemoryWindow, summary: String) -> MemoryWindow {
    if let Some(old) = mem.push(summary) {
        mem.gist = fold_gist(&mem.gist, &old);
    }
    mem
}
