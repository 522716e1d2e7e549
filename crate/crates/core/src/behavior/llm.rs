use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    fold_gist, BehaviorBackend, BehaviorResponse, ContextProvider, FixedContext, PromptContext,
    GIST_CHARS,
};
use crate::error::{Error, Result};
use crate::persona::PersonaSpec;
use crate::rng::RngStream;
use crate::state::AgentState;

pub const ENV_ENDPOINT: &str = "CLONESIM_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "CLONESIM_LLM_API_KEY";
pub const ENV_TIMEOUT: &str = "CLONESIM_LLM_TIMEOUT_SECS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    /// Chat-completion URL. Overridden by the endpoint environment variable.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    /// Upper bound on concurrent requests.
    pub max_in_flight: usize,
    /// Never touch the network; cache misses become pending steps.
    pub offline: bool,
    /// Response cache directory; defaults to `<run dir>/llm_cache`.
    pub cache_dir: Option<PathBuf>,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            endpoint: String::new(),
            model: "default".into(),
            temperature: 0.7,
            timeout_secs: 60,
            max_retries: 3,
            retry_backoff_ms: 500,
            max_in_flight: 8,
            offline: false,
            cache_dir: None,
            api_key: None,
        }
    }
}

impl ClientConfig {
    /// Applies endpoint, key and timeout from the environment.
    pub fn with_env(mut self) -> Result<Self> {
        if let Ok(e) = std::env::var(ENV_ENDPOINT) {
            self.endpoint = e;
        }
        if let Ok(k) = std::env::var(ENV_API_KEY) {
            self.api_key = Some(k);
        }
        if let Ok(t) = std::env::var(ENV_TIMEOUT) {
            self.timeout_secs = t
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_TIMEOUT} must be an integer, got `{t}`")))?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.offline && self.endpoint.is_empty() {
            return Err(Error::Config(format!(
                "LLM backend needs an endpoint (set {ENV_ENDPOINT} or llm.endpoint)"
            )));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Config("llm.temperature must lie in [0, 2]".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("llm.max_in_flight must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        ChatMessage {
            role: role.into(),
            content: content.into(),
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

/// Minimal chat-completion HTTP client.
#[derive(Debug)]
pub struct ChatClient {
    agent: ureq::Agent,
    cfg: ClientConfig,
}

impl ChatClient {
    pub fn new(cfg: ClientConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        ChatClient { agent, cfg }
    }

    fn attempt(&self, messages: &[ChatMessage]) -> std::result::Result<String, (bool, String)> {
        let body = ChatRequest {
            model: &self.cfg.model,
            messages,
            temperature: self.cfg.temperature,
        };
        let mut req = self.agent.post(&self.cfg.endpoint);
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        if status >= 400 {
            let retryable = status == 429 || status >= 500;
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err((retryable, format!("HTTP {status}: {}", text.trim())));
        }
        let v: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| (false, format!("malformed response: {e}")))?;
        let content = v
            .pointer("/choices/0/message/content")
            .or_else(|| v.get("content"))
            .and_then(|c| c.as_str())
            .ok_or_else(|| (false, "response has no message content".to_string()))?;
        if content.trim().is_empty() {
            return Err((false, "empty completion".into()));
        }
        Ok(content.to_string())
    }

    /// Sends `messages`, retrying transport failures, 429 and 5xx responses.
    pub fn complete(&self, messages: &[ChatMessage]) -> std::result::Result<String, String> {
        let mut delay = self.cfg.retry_backoff_ms;
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            match self.attempt(messages) {
                Ok(s) => return Ok(s),
                Err((retryable, msg)) => {
                    last = msg;
                    if !retryable || attempt == self.cfg.max_retries {
                        break;
                    }
                    log::warn!("LLM request failed ({last}); retrying in {delay} ms");
                    std::thread::sleep(Duration::from_millis(delay));
                    delay = delay.saturating_mul(2);
                }
            }
        }
        Err(last)
    }
}

/// Content-addressed response store, safe for concurrent use.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    content: String,
}

impl ResponseCache {
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(ResponseCache {
            dir: dir.to_path_buf(),
        })
    }

    /// Hash of the full request.
    pub fn key(model: &str, temperature: f64, messages: &[ChatMessage]) -> String {
        let body = serde_json::to_vec(&ChatRequest {
            model,
            messages,
            temperature,
        })
        .expect("request serializes");
        hex::encode(Sha256::digest(&body))
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let text = fs::read_to_string(self.path(key)).ok()?;
        let e: CacheEntry = serde_json::from_str(&text).ok()?;
        (e.key == key).then_some(e.content)
    }

    pub fn put(&self, key: &str, content: &str) -> Result<()> {
        let entry = CacheEntry {
            key: key.into(),
            content: content.into(),
        };
        let final_path = self.path(key);
        let tmp = self.dir.join(format!(
            "{key}.{}.{:?}.tmp",
            std::process::id(),
            std::thread::current().id()
        ));
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&serde_json::to_vec(&entry)?)
            .map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, &final_path).map_err(|e| Error::io(&final_path, e))
    }

    pub fn len(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|d| {
                d.filter_map(|e| e.ok())
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Backend that asks a chat-completion model for each response.
pub struct LlmBackend {
    client: ChatClient,
    cache: ResponseCache,
    context: Box<dyn ContextProvider>,
    cfg: ClientConfig,
    network_calls: AtomicU64,
}

impl LlmBackend {
    pub fn new(cfg: ClientConfig, cache: ResponseCache) -> Result<Self> {
        cfg.validate()?;
        Ok(LlmBackend {
            client: ChatClient::new(cfg.clone()),
            cache,
            context: Box::new(FixedContext),
            cfg,
            network_calls: AtomicU64::new(0),
        })
    }

    pub fn with_context(mut self, context: Box<dyn ContextProvider>) -> Self {
        self.context = context;
        self
    }

    /// Requests sent over the network so far.
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::Relaxed)
    }

    /// Messages sent for one event.
    pub fn messages(&self, ctx: &PromptContext<'_>) -> Vec<ChatMessage> {
        let mut system = ctx.system_prompt.to_string();
        if let Some(add) = ctx.addendum {
            system.push_str("\n\n");
            system.push_str(add);
        }
        let prior = self.context.empirical_prior(ctx.event, ctx.age);
        vec![
            ChatMessage::new("system", system),
            ChatMessage::new("user", ctx.event_message(&prior)),
        ]
    }

    fn cached_completion(&self, messages: &[ChatMessage], agent_id: u64, age: u32) -> Result<String> {
        let key = ResponseCache::key(&self.cfg.model, self.cfg.temperature, messages);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit);
        }
        if self.cfg.offline {
            return Err(Error::Pending {
                pending: vec![(agent_id, age)],
            });
        }
        self.network_calls.fetch_add(1, Ordering::Relaxed);
        let text = self
            .client
            .complete(messages)
            .map_err(|message| Error::Backend {
                agent_id,
                age,
                message,
            })?;
        self.cache.put(&key, &text)?;
        Ok(text)
    }
}

impl BehaviorBackend for LlmBackend {
    fn respond(
        &self,
        ctx: &PromptContext<'_>,
        _persona: &PersonaSpec,
        _stream: &mut RngStream,
    ) -> Result<BehaviorResponse> {
        let messages = self.messages(ctx);
        let narrative = self.cached_completion(&messages, ctx.agent_id, ctx.age)?;
        Ok(BehaviorResponse {
            narrative,
            tags: None,
        })
    }

    fn fold_memory(&self, agent_id: u64, age: u32, gist: &str, evicted: &str) -> Result<String> {
        let messages = vec![
            ChatMessage::new(
                "system",
                "You maintain a short third-person summary of a person's life so far.",
            ),
            ChatMessage::new(
                "user",
                format!(
                    "Current summary:\n{gist}\n\nAdd this earlier year to it:\n{evicted}\n\n\
                     Reply with the updated summary only, under {GIST_CHARS} characters."
                ),
            ),
        ];
        let text = self.cached_completion(&messages, agent_id, age)?;
        // Keep the bound even if the model ignores the length request.
        Ok(fold_gist("", text.trim()))
    }

    fn life_summary(
        &self,
        agent_id: u64,
        system_prompt: &str,
        state: &AgentState,
    ) -> Result<String> {
        let messages = vec![
            ChatMessage::new("system", system_prompt),
            ChatMessage::new(
                "user",
                format!(
                    "You are now {}. {}\n\n{}\nLooking back over your whole life, write a \
                     short first-person reflection on how it went and how you feel about it.",
                    state.age,
                    state.summary(),
                    state.memory.render()
                ),
            ),
        ];
        self.cached_completion(&messages, agent_id, state.age)
    }

    fn is_scripted(&self) -> bool {
        false
    }

    fn name(&self) -> &'static str {
        "llm"
    }
}
