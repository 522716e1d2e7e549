//! Annual simulation loop, persistence and resume.
//!
//! Each clone lives from the start age to the end age (inclusive) unless it
//! dies. Per year: draw an event from the arm-independent stream, ask the
//! backend for a response, classify it and apply the change. Trajectories are
//! written one file per agent; `completed.log` records finished agents so an
//! interrupted run can resume without redoing them.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::behavior::{
    BehaviorBackend, BehaviorResponse, BehavioralTag, ClientConfig, LlmBackend, PolicyParams,
    PromptContext, ResponseCache, ScriptedBackend,
};
use crate::error::{Error, PendingStep, Result};
use crate::events::{sample_annual_event, EventCatalog, DEFAULT_CATALOG_TOML};
use crate::mapper::{apply_delta, classify, RuleTable, StateDelta, YearMechanics, DEFAULT_RULES_TOML};
use crate::outcomes::{OutcomeParams, OutcomeTable, SentimentMode};
use crate::persona::{
    make_clones, read_personas, render_addendum, render_system_prompt, sample_personas,
    write_personas, Arm, CloneAssignment, MatrixConfig, PersonaSpec, DEFAULT_MATRIX_TOML,
};
use crate::rng::{behavior_stream, derive_stream};
use crate::state::AgentState;

pub const START_AGE: u32 = 6;
pub const END_AGE: u32 = 65;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PERSONAS_FILE: &str = "personas.jsonl";
pub const COMPLETED_FILE: &str = "completed.log";
pub const TRAJECTORY_DIR: &str = "trajectories";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Scripted,
    Llm,
}

/// Everything that defines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub n_personas: usize,
    pub start_age: u32,
    pub end_age: u32,
    pub backend: BackendKind,
    /// Event catalog file; the shipped catalog when absent.
    pub catalog: Option<PathBuf>,
    /// Rule-table file; the shipped table when absent.
    pub rules: Option<PathBuf>,
    /// Persona-matrix file; the shipped matrix when absent.
    pub matrix: Option<PathBuf>,
    /// Pre-generated personas; sampled from the matrix when absent.
    pub personas: Option<PathBuf>,
    pub policy: PolicyParams,
    pub mechanics: YearMechanics,
    pub outcomes: OutcomeParams,
    pub llm: ClientConfig,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    /// Stop after this many agents finish in one invocation. Used to test
    /// interruption and resume.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_after: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            master_seed: 2024,
            n_personas: 2500,
            start_age: START_AGE,
            end_age: END_AGE,
            backend: BackendKind::Scripted,
            catalog: None,
            rules: None,
            matrix: None,
            personas: None,
            policy: PolicyParams::default(),
            mechanics: YearMechanics::default(),
            outcomes: OutcomeParams::default(),
            llm: ClientConfig::default(),
            output_dir: PathBuf::from("run"),
            workers: 0,
            stop_after: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0),
            message: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_personas == 0 && self.personas.is_none() {
            return Err(Error::Usage("n_personas must be at least 1".into()));
        }
        if self.start_age > self.end_age {
            return Err(Error::Config("start_age exceeds end_age".into()));
        }
        for p in [&self.catalog, &self.rules, &self.matrix, &self.personas]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        self.policy.validate()?;
        self.mechanics.validate()?;
        self.outcomes.validate()?;
        Ok(())
    }
}

/// Loaded inputs shared by every agent of a run.
pub struct SimInputs {
    pub catalog: EventCatalog,
    pub rules: RuleTable,
    pub mechanics: YearMechanics,
    pub master_seed: u64,
    pub start_age: u32,
    pub end_age: u32,
}

impl SimInputs {
    /// Shipped catalog and rules with default mechanics.
    pub fn shipped(master_seed: u64) -> Self {
        SimInputs {
            catalog: EventCatalog::default(),
            rules: RuleTable::default(),
            mechanics: YearMechanics::default(),
            master_seed,
            start_age: START_AGE,
            end_age: END_AGE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    #[serde(rename = "reached_65")]
    ReachedEnd,
    Death,
    /// Stopped early because a backend response is outstanding.
    Pending,
}

/// One simulated year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearRecord {
    pub age: u32,
    /// `None` for an uneventful year.
    pub event_id: Option<String>,
    pub tag: BehavioralTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub narrative: Option<String>,
    pub delta: StateDelta,
    /// State after the year was applied.
    pub state: AgentState,
    /// Event probabilities summed past 1 and were rescaled.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub rescaled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub agent_id: u64,
    pub persona_id: u64,
    pub arm: Arm,
    pub records: Vec<YearRecord>,
    pub life_summary: String,
    pub termination: Termination,
    /// Backend message when `termination` is `Pending`.
    pub pending: Option<String>,
    /// The pending step failed in transport rather than missing from cache.
    pub backend_failure: bool,
}

impl Trajectory {
    pub fn final_state(&self) -> Option<&AgentState> {
        self.records.last().map(|r| &r.state)
    }

    /// Age of the death record, if the agent died.
    pub fn death_age(&self) -> Option<u32> {
        match self.termination {
            Termination::Death => self.records.last().map(|r| r.age),
            _ => None,
        }
    }

    /// Age at which a pending trajectory must resume.
    pub fn pending_age(&self) -> Option<u32> {
        (self.termination == Termination::Pending).then(|| {
            self.records
                .last()
                .map(|r| r.age + 1)
                .unwrap_or(START_AGE)
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header {
        agent_id: u64,
        persona_id: u64,
        arm: Arm,
    },
    Year(YearRecord),
    End {
        termination: Termination,
        life_summary: String,
    },
    Pending {
        age: u32,
        message: String,
        #[serde(default)]
        backend_failure: bool,
    },
}

fn suspend(mut traj: Trajectory, records: Vec<YearRecord>, e: Error) -> Trajectory {
    traj.backend_failure = matches!(e, Error::Backend { .. });
    traj.pending = Some(match e {
        Error::Backend { message, .. } => message,
        other => other.to_string(),
    });
    traj.records = records;
    traj.termination = Termination::Pending;
    traj
}

/// Simulates one clone.
///
/// Backend failures do not abort: the partial trajectory comes back with
/// termination `Pending` and the failure message.
pub fn run_life(
    clone: CloneAssignment,
    persona: &PersonaSpec,
    inputs: &SimInputs,
    backend: &dyn BehaviorBackend,
) -> Result<Trajectory> {
    let arm = clone.arm;
    let system_prompt = render_system_prompt(persona);
    let addendum = render_addendum(arm, arm.intervention_age())?;
    let mech = &inputs.mechanics;
    let mut state = AgentState::new(inputs.start_age, mech.initial_wealth);
    let mut records = Vec::with_capacity((inputs.end_age - inputs.start_age + 1) as usize);
    let mut traj = Trajectory {
        agent_id: clone.agent_id,
        persona_id: persona.persona_id,
        arm,
        records: Vec::new(),
        life_summary: String::new(),
        termination: Termination::ReachedEnd,
        pending: None,
        backend_failure: false,
    };

    for age in inputs.start_age..=inputs.end_age {
        debug_assert_eq!(state.age, age);
        let active = age >= arm.intervention_age();
        let mut events = derive_stream(inputs.master_seed, persona.persona_id, arm, age);
        let draw = sample_annual_event(&inputs.catalog, persona, &state, &mut events)?;
        let (event_id, narrative, delta, summary) = match draw.event {
            None => (None, None, StateDelta::zero(), None),
            Some(i) => {
                let ev = &inputs.catalog.events[i];
                let state_summary = state.summary();
                let ctx = PromptContext {
                    agent_id: clone.agent_id,
                    arm,
                    system_prompt: &system_prompt,
                    addendum: active.then_some(addendum),
                    event: ev,
                    age,
                    state_summary: &state_summary,
                    memory: &state.memory,
                };
                let mut bs = behavior_stream(
                    inputs.master_seed,
                    persona.persona_id,
                    active.then_some(arm),
                    age,
                );
                let resp: BehaviorResponse = match backend.respond(&ctx, persona, &mut bs) {
                    Ok(r) => r,
                    Err(e @ (Error::Pending { .. } | Error::Backend { .. })) => {
                        return Ok(suspend(traj, records, e));
                    }
                    Err(e) => return Err(e),
                };
                let delta = classify(&resp, ev, &inputs.rules);
                let summary = format!("Age {age}: {} ({}).", ev.event_id.replace('_', " "), delta.behavioral_tag);
                (Some(ev.event_id.clone()), Some(resp.narrative), delta, Some(summary))
            }
        };
        let tag = delta.behavioral_tag;
        let mut next = apply_delta(state, &delta, persona.ses, mech)?;
        if let Some(s) = summary {
            if let Some(evicted) = next.memory.push(s) {
                match backend.fold_memory(clone.agent_id, age, &next.memory.gist, &evicted) {
                    Ok(g) => next.memory.gist = g,
                    Err(e @ (Error::Pending { .. } | Error::Backend { .. })) => {
                        return Ok(suspend(traj, records, e));
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        let died = !next.alive;
        records.push(YearRecord {
            age,
            event_id,
            tag,
            narrative,
            delta,
            state: next.clone(),
            rescaled: draw.rescaled(),
        });
        state = next;
        if died {
            traj.termination = Termination::Death;
            break;
        }
    }

    match backend.life_summary(clone.agent_id, &system_prompt, &state) {
        Ok(s) => traj.life_summary = s,
        Err(e @ (Error::Pending { .. } | Error::Backend { .. })) => {
            return Ok(suspend(traj, records, e));
        }
        Err(e) => return Err(e),
    }
    traj.records = records;
    Ok(traj)
}

/// Path of an agent's trajectory file inside a run directory.
pub fn trajectory_path(run_dir: &Path, agent_id: u64) -> PathBuf {
    run_dir
        .join(TRAJECTORY_DIR)
        .join(format!("agent_{agent_id:06}.jsonl"))
}

pub fn write_trajectory<W: Write>(mut w: W, t: &Trajectory) -> Result<()> {
    let mut line = |l: &Line| -> Result<()> {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n").map_err(|e| Error::io("<trajectory>", e))
    };
    line(&Line::Header {
        agent_id: t.agent_id,
        persona_id: t.persona_id,
        arm: t.arm,
    })?;
    for r in &t.records {
        line(&Line::Year(r.clone()))?;
    }
    match t.termination {
        Termination::Pending => line(&Line::Pending {
            age: t.pending_age().unwrap_or(START_AGE),
            message: t.pending.clone().unwrap_or_default(),
            backend_failure: t.backend_failure,
        }),
        term => line(&Line::End {
            termination: term,
            life_summary: t.life_summary.clone(),
        }),
    }
}

pub fn read_trajectory<R: BufRead>(r: R, origin: &str) -> Result<Trajectory> {
    let mut header = None;
    let mut records = Vec::new();
    let mut end = None;
    let mut pending = None;
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        match parsed {
            Line::Header {
                agent_id,
                persona_id,
                arm,
            } => header = Some((agent_id, persona_id, arm)),
            Line::Year(y) => records.push(y),
            Line::End {
                termination,
                life_summary,
            } => end = Some((termination, life_summary)),
            Line::Pending {
                message,
                backend_failure,
                ..
            } => pending = Some((message, backend_failure)),
        }
    }
    let (agent_id, persona_id, arm) =
        header.ok_or_else(|| Error::Data(format!("{origin}: missing header line")))?;
    let (termination, life_summary, pending, backend_failure) = match (end, pending) {
        (Some((t, s)), _) => (t, s, None, false),
        (None, Some((m, f))) => (Termination::Pending, String::new(), Some(m), f),
        (None, None) => (
            Termination::Pending,
            String::new(),
            Some("truncated file".into()),
            false,
        ),
    };
    Ok(Trajectory {
        agent_id,
        persona_id,
        arm,
        records,
        life_summary,
        termination,
        pending,
        backend_failure,
    })
}

pub fn load_trajectory(run_dir: &Path, agent_id: u64) -> Result<Trajectory> {
    let path = trajectory_path(run_dir, agent_id);
    let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
    read_trajectory(BufReader::new(f), &path.display().to_string())
}

fn persist_trajectory(run_dir: &Path, t: &Trajectory) -> Result<()> {
    let path = trajectory_path(run_dir, t.agent_id);
    let tmp = path.with_extension("jsonl.tmp");
    {
        let f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(f);
        write_trajectory(&mut w, t)?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
}

/// Run-level metadata written next to the trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub master_seed: u64,
    pub n_personas: usize,
    pub n_agents: usize,
    pub catalog_version: String,
    pub rules_version: String,
    pub backend: BackendKind,
    pub start_age: u32,
    pub end_age: u32,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Finished run directory.
#[derive(Debug, Clone)]
pub struct RunHandle {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    /// Records whose event probabilities had to be rescaled.
    pub rescaled_years: usize,
}

impl RunHandle {
    pub fn open(dir: &Path) -> Result<Self> {
        Ok(RunHandle {
            dir: dir.to_path_buf(),
            manifest: RunManifest::load(dir)?,
            rescaled_years: 0,
        })
    }

    pub fn personas(&self) -> Result<Vec<PersonaSpec>> {
        let path = self.dir.join(PERSONAS_FILE);
        let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        read_personas(BufReader::new(f))
    }

    /// Every trajectory, ordered by agent id.
    pub fn trajectories(&self) -> Result<Vec<Trajectory>> {
        let personas = self.personas()?;
        let ids: Vec<u64> = personas
            .iter()
            .flat_map(|p| make_clones(p).map(|c| c.agent_id))
            .collect();
        ids.par_iter()
            .map(|id| load_trajectory(&self.dir, *id))
            .collect()
    }

    /// Sentiment scoring that matches the backend the run used.
    pub fn sentiment_mode(&self) -> SentimentMode {
        match self.manifest.backend {
            BackendKind::Scripted => SentimentMode::Scripted {
                master_seed: self.manifest.master_seed,
            },
            BackendKind::Llm => SentimentMode::Lexicon,
        }
    }

    /// Outcome table of the finished run.
    pub fn outcome_table(&self) -> Result<OutcomeTable> {
        OutcomeTable::from_trajectories(
            &self.trajectories()?,
            self.personas()?,
            &self.manifest.config.outcomes,
            self.sentiment_mode(),
        )
    }
}

fn read_or_default(path: &Option<PathBuf>, default: &str) -> Result<String> {
    match path {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e)),
        None => Ok(default.to_string()),
    }
}

/// Inputs resolved from a config, plus the hash that identifies them.
pub struct PreparedRun {
    pub inputs: SimInputs,
    pub personas: Vec<PersonaSpec>,
    pub config_hash: String,
}

pub fn prepare(cfg: &RunConfig) -> Result<PreparedRun> {
    cfg.validate()?;
    let catalog_text = read_or_default(&cfg.catalog, DEFAULT_CATALOG_TOML)?;
    let rules_text = read_or_default(&cfg.rules, DEFAULT_RULES_TOML)?;
    let matrix_text = read_or_default(&cfg.matrix, DEFAULT_MATRIX_TOML)?;
    let catalog = EventCatalog::from_toml_str(
        &catalog_text,
        &cfg.catalog
            .as_ref()
            .map_or("<default catalog>".into(), |p| p.display().to_string()),
    )?;
    for w in catalog.warnings() {
        log::warn!("event catalog: {w}");
    }
    let rules = RuleTable::from_toml_str(
        &rules_text,
        &cfg.rules
            .as_ref()
            .map_or("<default rules>".into(), |p| p.display().to_string()),
    )?;
    let personas = match &cfg.personas {
        Some(p) => {
            let f = File::open(p).map_err(|e| Error::io(p, e))?;
            read_personas(BufReader::new(f))?
        }
        None => {
            let matrix = MatrixConfig::from_toml_str(&matrix_text)?;
            sample_personas(cfg.n_personas, cfg.master_seed, &matrix)?
        }
    };
    if personas.is_empty() {
        return Err(Error::Usage("persona file is empty".into()));
    }
    let personas_text = {
        let mut buf = Vec::new();
        write_personas(&mut buf, &personas)?;
        buf
    };

    #[derive(Serialize)]
    struct Hashed<'a> {
        master_seed: u64,
        start_age: u32,
        end_age: u32,
        backend: BackendKind,
        policy: &'a PolicyParams,
        mechanics: &'a YearMechanics,
        llm_model: Option<&'a str>,
        llm_temperature: Option<f64>,
    }
    let llm = cfg.backend == BackendKind::Llm;
    let hashed = Hashed {
        master_seed: cfg.master_seed,
        start_age: cfg.start_age,
        end_age: cfg.end_age,
        backend: cfg.backend,
        policy: &cfg.policy,
        mechanics: &cfg.mechanics,
        llm_model: llm.then_some(cfg.llm.model.as_str()),
        llm_temperature: llm.then_some(cfg.llm.temperature),
    };
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&hashed)?);
    for part in [catalog_text.as_bytes(), rules_text.as_bytes(), &personas_text] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    let config_hash = hex::encode(h.finalize());

    Ok(PreparedRun {
        inputs: SimInputs {
            catalog,
            rules,
            mechanics: cfg.mechanics,
            master_seed: cfg.master_seed,
            start_age: cfg.start_age,
            end_age: cfg.end_age,
        },
        personas,
        config_hash,
    })
}

fn build_backend(cfg: &RunConfig) -> Result<Box<dyn BehaviorBackend>> {
    Ok(match cfg.backend {
        BackendKind::Scripted => Box::new(ScriptedBackend::new(cfg.policy)),
        BackendKind::Llm => {
            let llm = cfg.llm.clone().with_env()?;
            let dir = llm
                .cache_dir
                .clone()
                .unwrap_or_else(|| cfg.output_dir.join("llm_cache"));
            Box::new(LlmBackend::new(llm, ResponseCache::open(&dir)?)?)
        }
    })
}

fn read_completed(path: &Path) -> Result<BTreeSet<u64>> {
    if !path.exists() {
        return Ok(BTreeSet::new());
    }
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeSet::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        // A torn final line from a crash is ignored; that agent reruns.
        if let Ok(id) = line.trim().parse() {
            out.insert(id);
        }
    }
    Ok(out)
}

/// Simulates every clone of every persona and persists the results.
///
/// With `resume`, an existing run directory is continued: its manifest must
/// carry the same config hash, and agents already listed as completed are
/// skipped.
pub fn run_experiment(cfg: &RunConfig, resume: bool) -> Result<RunHandle> {
    let prepared = prepare(cfg)?;
    let backend = build_backend(cfg)?;
    run_prepared(cfg, prepared, backend.as_ref(), resume)
}

/// As [`run_experiment`] with an explicit backend.
pub fn run_prepared(
    cfg: &RunConfig,
    prepared: PreparedRun,
    backend: &dyn BehaviorBackend,
    resume: bool,
) -> Result<RunHandle> {
    let dir = &cfg.output_dir;
    let manifest_path = dir.join(MANIFEST_FILE);
    let n_agents = prepared.personas.len() * 4;
    let manifest = RunManifest {
        config_hash: prepared.config_hash.clone(),
        master_seed: cfg.master_seed,
        n_personas: prepared.personas.len(),
        n_agents,
        catalog_version: prepared.inputs.catalog.version.clone(),
        rules_version: prepared.inputs.rules.version.clone(),
        backend: cfg.backend,
        start_age: cfg.start_age,
        end_age: cfg.end_age,
        config: RunConfig {
            stop_after: None,
            ..cfg.clone()
        },
    };

    if manifest_path.exists() {
        let existing = RunManifest::load(dir)?;
        if !resume {
            return Err(Error::Usage(format!(
                "{} already holds a run; pass resume to continue it or choose another output_dir",
                dir.display()
            )));
        }
        if existing.config_hash != manifest.config_hash {
            return Err(Error::ConfigMismatch {
                expected: existing.config_hash,
                found: manifest.config_hash,
            });
        }
    } else {
        fs::create_dir_all(dir.join(TRAJECTORY_DIR)).map_err(|e| Error::io(dir, e))?;
        let f = File::create(dir.join(PERSONAS_FILE)).map_err(|e| Error::io(dir, e))?;
        let mut w = BufWriter::new(f);
        write_personas(&mut w, &prepared.personas)?;
        w.flush().map_err(|e| Error::io(dir, e))?;
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    }
    fs::create_dir_all(dir.join(TRAJECTORY_DIR)).map_err(|e| Error::io(dir, e))?;

    let completed_path = dir.join(COMPLETED_FILE);
    let done = read_completed(&completed_path)?;
    let log = Mutex::new(
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&completed_path)
            .map_err(|e| Error::io(&completed_path, e))?,
    );

    let jobs: Vec<(CloneAssignment, &PersonaSpec)> = prepared
        .personas
        .iter()
        .flat_map(|p| make_clones(p).into_iter().map(move |c| (c, p)))
        .filter(|(c, _)| !done.contains(&c.agent_id))
        .collect();

    let workers = match (cfg.workers, cfg.backend) {
        (0, BackendKind::Scripted) => rayon::current_num_threads(),
        (0, BackendKind::Llm) => cfg.llm.max_in_flight,
        (w, BackendKind::Llm) => w.min(cfg.llm.max_in_flight),
        (w, _) => w,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let finished = AtomicUsize::new(0);
    let rescaled = AtomicUsize::new(0);
    let limit = cfg.stop_after.unwrap_or(usize::MAX);
    let inputs = &prepared.inputs;

    type Outcome = Option<(Option<PendingStep>, Option<(String, bool)>)>;
    let results: Vec<Result<Outcome>> = pool.install(|| {
        jobs.par_iter()
            .map(|(clone, persona)| {
                if finished.load(Ordering::SeqCst) >= limit {
                    return Ok(None);
                }
                let t = run_life(*clone, persona, inputs, backend)?;
                persist_trajectory(dir, &t)?;
                rescaled.fetch_add(t.records.iter().filter(|r| r.rescaled).count(), Ordering::Relaxed);
                if t.termination == Termination::Pending {
                    let age = t.pending_age().unwrap_or(inputs.start_age);
                    let why = t.pending.clone().map(|m| (m, t.backend_failure));
                    return Ok(Some((Some((clone.agent_id, age)), why)));
                }
                {
                    let mut f = log.lock().expect("completed log lock");
                    writeln!(f, "{}", clone.agent_id).map_err(|e| Error::io(&completed_path, e))?;
                }
                finished.fetch_add(1, Ordering::SeqCst);
                Ok(Some((None, None)))
            })
            .collect()
    });

    let mut pending = Vec::new();
    let mut transport_error = None;
    let mut skipped = 0usize;
    for r in results {
        match r? {
            None => skipped += 1,
            Some((None, _)) => {}
            Some((Some((agent_id, age)), why)) => {
                if let Some((message, true)) = why {
                    if transport_error.is_none() {
                        transport_error = Some(Error::Backend {
                            agent_id,
                            age,
                            message,
                        });
                    }
                }
                pending.push((agent_id, age));
            }
        }
    }
    let rescaled_years = rescaled.load(Ordering::Relaxed);
    if rescaled_years > 0 {
        log::warn!("{rescaled_years} agent-years had event probabilities summing past 1; rescaled");
    }
    if let Some(e) = transport_error {
        return Err(e);
    }
    if !pending.is_empty() {
        pending.sort_unstable();
        return Err(Error::Pending { pending });
    }
    if skipped > 0 {
        return Err(Error::Interrupted {
            completed: done.len() + finished.load(Ordering::SeqCst),
        });
    }
    Ok(RunHandle {
        dir: dir.clone(),
        manifest,
        rescaled_years,
    })
}

/// Simulates clones in memory without touching disk.
pub fn simulate_in_memory(
    personas: &[PersonaSpec],
    inputs: &SimInputs,
    backend: &dyn BehaviorBackend,
) -> Result<Vec<Trajectory>> {
    personas
        .par_iter()
        .flat_map_iter(|p| make_clones(p).into_iter().map(move |c| (c, p)))
        .map(|(c, p)| run_life(c, p, inputs, backend))
        .collect()
}
