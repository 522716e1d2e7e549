//! `clonesim` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 backend error (including steps still waiting for a backend response).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use clonesim_core::calibration::{self, CalibrationTargets};
use clonesim_core::engine::load_trajectory;
use clonesim_core::events::load_catalog;
use clonesim_core::mapper::load_rules;
use clonesim_core::outcomes::write_outcomes_csv;
use clonesim_core::persona::{sample_personas, write_personas, MatrixConfig};
use clonesim_core::report::{
    effect_to_percent, render_baseline, societal_projection, ProjectionInput,
};
use clonesim_core::stats::baseline_validation;
use clonesim_core::{
    analyze, run_experiment, Error, EventCatalog, PolicyParams, RunConfig, RunHandle, SimInputs,
    Trajectory,
};

#[derive(Parser)]
#[command(name = "clonesim", version, about = "Digital-clone life-course simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample personas from the trait matrix and write them as JSON lines.
    GenPersonas {
        #[arg(long, default_value_t = 2500)]
        n: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Persona-matrix file; the shipped matrix when omitted.
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Simulate every clone of every persona.
    Simulate {
        /// Run configuration (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Continue an interrupted run in the same output directory.
        #[arg(long)]
        resume: bool,
        /// Override the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Override the worker count (0 uses every core).
        #[arg(long)]
        workers: Option<usize>,
        /// Override the number of personas.
        #[arg(long)]
        personas: Option<usize>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Stop after this many agents finish (resume later).
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Extract outcomes, fit all models and write the report and CSVs.
    Analyze {
        #[arg(long)]
        run: PathBuf,
        /// Output directory; `<run>/analysis` when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Baseline-resilience associations in the control arms.
    Validate {
        #[arg(long)]
        run: PathBuf,
    },
    /// Population-scale projection of a wealth effect.
    Project {
        /// Number of people in the cohort.
        #[arg(long)]
        cohort: f64,
        /// Baseline wealth per person.
        #[arg(long)]
        baseline: f64,
        /// Effect as a fraction (0.43 for +43%).
        #[arg(long, allow_negative_numbers = true)]
        effect: f64,
        /// Read `--effect` as a log-point coefficient instead of a fraction.
        #[arg(long)]
        log_points: bool,
    },
    /// Print one agent's trajectory year by year.
    Replay {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        agent: u64,
    },
    /// Event-catalog tools.
    Catalog {
        #[command(subcommand)]
        action: CatalogAction,
    },
    /// Rule-table tools.
    Rules {
        #[command(subcommand)]
        action: RulesAction,
    },
    /// Check (or tune) the scripted backend against the calibration targets.
    Calibrate {
        #[arg(long, default_value_t = 2500)]
        personas: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Search for ROS boosts that meet the efficacy targets first.
        #[arg(long)]
        tune: bool,
    },
}

#[derive(Subcommand)]
enum CatalogAction {
    /// Parse and check a catalog; the shipped one when no path is given.
    Lint { path: Option<PathBuf> },
}

#[derive(Subcommand)]
enum RulesAction {
    /// Parse a rule table and check its coverage against a catalog.
    Lint {
        path: Option<PathBuf>,
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::Backend { .. } | Error::Pending { .. }) => 3,
        Some(Error::Usage(_) | Error::Config(_) | Error::Parse { .. } | Error::ConfigMismatch { .. }) => 1,
        _ => 2,
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenPersonas {
            n,
            seed,
            matrix,
            out,
        } => gen_personas(n, seed, matrix.as_deref(), &out),
        Command::Simulate {
            config,
            resume,
            output,
            workers,
            personas,
            seed,
            stop_after,
        } => {
            let mut cfg = match &config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            if let Some(o) = output {
                cfg.output_dir = o;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(n) = personas {
                cfg.n_personas = n;
            }
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if stop_after.is_some() {
                cfg.stop_after = stop_after;
            }
            simulate(&cfg, resume)
        }
        Command::Analyze { run, out } => {
            let out = out.unwrap_or_else(|| run.join("analysis"));
            analyze_run(&run, &out)
        }
        Command::Validate { run } => {
            let table = RunHandle::open(&run)?.outcome_table()?;
            print!("{}", render_baseline(&baseline_validation(&table)?));
            Ok(())
        }
        Command::Project {
            cohort,
            baseline,
            effect,
            log_points,
        } => {
            let fraction = if log_points {
                effect_to_percent(effect)
            } else {
                effect
            };
            let p = societal_projection(&ProjectionInput {
                cohort_size: cohort,
                baseline_wealth: baseline,
                effect_fraction: fraction,
            })?;
            println!("effect_fraction\t{fraction}");
            println!("per_person_gain\t{:.2}", p.per_person_gain);
            println!("total_gain\t{:.2}", p.total_gain);
            Ok(())
        }
        Command::Replay { run, agent } => {
            RunHandle::open(&run)?;
            print!("{}", render_trajectory(&load_trajectory(&run, agent)?));
            Ok(())
        }
        Command::Catalog {
            action: CatalogAction::Lint { path },
        } => {
            let catalog = load_catalog_or_default(path.as_deref())?;
            for w in catalog.warnings() {
                println!("warning: {w}");
            }
            println!(
                "{} events, version {}, {} warning(s)",
                catalog.events.len(),
                catalog.version,
                catalog.warnings().len()
            );
            Ok(())
        }
        Command::Rules {
            action: RulesAction::Lint { path, catalog },
        } => {
            let rules = match &path {
                Some(p) => load_rules(p)?,
                None => Default::default(),
            };
            let catalog = load_catalog_or_default(catalog.as_deref())?;
            let problems = rules.lint(&catalog);
            for p in &problems {
                println!("warning: {p}");
            }
            println!("{} rules, {} warning(s)", rules.rules.len(), problems.len());
            Ok(())
        }
        Command::Calibrate {
            personas,
            seed,
            tune,
        } => calibrate(personas, seed, tune),
    }
}

fn load_catalog_or_default(path: Option<&Path>) -> Result<EventCatalog> {
    Ok(match path {
        Some(p) => load_catalog(p)?,
        None => EventCatalog::default(),
    })
}

fn gen_personas(n: usize, seed: u64, matrix: Option<&Path>, out: &Path) -> Result<()> {
    if n == 0 {
        return Err(Error::Usage("--n must be at least 1".into()).into());
    }
    let cfg = match matrix {
        Some(p) => MatrixConfig::load(p)?,
        None => MatrixConfig::default(),
    };
    let personas = sample_personas(n, seed, &cfg)?;
    let f = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(f);
    write_personas(&mut w, &personas)?;
    w.flush()?;
    println!("wrote {} personas to {}", personas.len(), out.display());
    Ok(())
}

fn simulate(cfg: &RunConfig, resume: bool) -> Result<()> {
    match run_experiment(cfg, resume) {
        Ok(h) => {
            println!(
                "simulated {} agents ({} personas) into {}",
                h.manifest.n_agents,
                h.manifest.n_personas,
                h.dir.display()
            );
            println!("config hash {}", h.manifest.config_hash);
            if h.rescaled_years > 0 {
                println!("{} agent-years had event probabilities rescaled", h.rescaled_years);
            }
            Ok(())
        }
        // A requested stop is not a failure.
        Err(Error::Interrupted { completed }) if cfg.stop_after.is_some() => {
            println!(
                "stopped after {completed} agents; rerun with --resume to finish {}",
                cfg.output_dir.display()
            );
            Ok(())
        }
        Err(e) => Err(e.into()),
    }
}

fn analyze_run(run: &Path, out: &Path) -> Result<()> {
    let table = RunHandle::open(run)?.outcome_table()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let outcomes = out.join("outcomes.csv");
    write_outcomes_csv(
        BufWriter::new(File::create(&outcomes).with_context(|| format!("creating {}", outcomes.display()))?),
        &table.records,
    )?;
    let analysis = analyze(&table)?;
    let written = analysis.write_to(out)?;
    print!("{}", analysis.render_text());
    println!("\nwrote {} and {} other file(s) to {}", outcomes.display(), written.len(), out.display());
    Ok(())
}

fn render_trajectory(t: &Trajectory) -> String {
    let mut s = format!(
        "agent {} (persona {}, arm {})\nage  event                               tag                         d_wealth      wealth    swb\n",
        t.agent_id, t.persona_id, t.arm
    );
    for r in &t.records {
        let mut health: Vec<String> = r
            .delta
            .health_effects
            .iter()
            .map(|h| format!("{h:?}"))
            .collect();
        if !health.is_empty() {
            health.insert(0, String::new());
        }
        s.push_str(&format!(
            "{:>3}  {:<35} {:<27} {:>9.0} {:>11.0} {:>6.2}{}\n",
            r.age,
            r.event_id.as_deref().unwrap_or("-"),
            r.tag.to_string(),
            r.delta.delta_wealth,
            r.state.wealth,
            r.state.swb,
            health.join(" ")
        ));
    }
    s.push_str(&format!("termination: {:?}\n", t.termination));
    if let Some(p) = &t.pending {
        s.push_str(&format!("pending: {p}\n"));
    }
    if !t.life_summary.is_empty() {
        s.push_str(&format!("life summary: {}\n", t.life_summary));
    }
    s
}

fn calibrate(personas: usize, seed: u64, tune: bool) -> Result<()> {
    if personas < 2 {
        return Err(Error::Usage("--personas must be at least 2".into()).into());
    }
    let inputs = SimInputs::shipped(seed);
    let targets = CalibrationTargets::default();
    let mut policy = PolicyParams::default();
    if tune {
        policy = calibration::tune_ros(personas, &inputs, &policy, &targets, 0.01, 8)?;
        println!("tuned ros6 = {:.4}, ros18 = {:.4}", policy.ros6, policy.ros18);
    }
    let report = calibration::evaluate(personas, &inputs, &policy)?;
    print!("{}", report.render(&targets));
    let failed = report.checks(&targets).iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Error::Data(format!("{failed} calibration check(s) failed")).into());
    }
    Ok(())
}
