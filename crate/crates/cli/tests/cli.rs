use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

fn clonesim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clonesim"))
        .args(args)
        .env_remove("CLONESIM_LLM_ENDPOINT")
        .env_remove("CLONESIM_LLM_API_KEY")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.display().to_string()
}

#[test]
fn project_prints_gain() {
    let o = clonesim(&["project", "--cohort", "3.5e6", "--baseline", "200000", "--effect", "0.43"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("per_person_gain\t86000.00"), "{s}");
    assert!(s.contains("total_gain\t301000000000.00"), "{s}");
}

#[test]
fn project_accepts_log_points() {
    let o = clonesim(&[
        "project", "--cohort", "1", "--baseline", "100", "--effect", "0", "--log-points",
    ]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("total_gain\t0.00"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&clonesim(&[])), 1);
    assert_eq!(code(&clonesim(&["simulate", "--bogus"])), 1);
    assert_eq!(
        code(&clonesim(&["project", "--cohort", "-5", "--baseline", "1", "--effect", "0.1"])),
        1
    );
    assert_eq!(code(&clonesim(&["--help"])), 0);
}

#[test]
fn missing_run_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = clonesim(&["analyze", "--run", &dir.path().join("nope").display().to_string()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn gen_personas_writes_lines() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.jsonl");
    let o = clonesim(&["gen-personas", "--n", "7", "--seed", "3", "--out", &out.display().to_string()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 7);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("persona_id").is_some());
    }
}

#[test]
fn simulate_analyze_validate_replay() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let run_s = run.display().to_string();
    let o = clonesim(&["simulate", "--personas", "60", "--output", &run_s, "--workers", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("simulated 240 agents"));

    let o = clonesim(&["analyze", "--run", &run_s]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = run.join("analysis");
    for f in [
        "outcomes.csv",
        "report.txt",
        "fits.csv",
        "condition_summary.csv",
        "paired_effects.csv",
        "plot_timing_treatment_cells.csv",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let mut rdr = csv::Reader::from_path(out.join("outcomes.csv")).unwrap();
    assert_eq!(rdr.records().count(), 240);
    let cells = fs::read_to_string(out.join("plot_timing_treatment_cells.csv")).unwrap();
    assert_eq!(cells.lines().next(), Some("cell,mean,SE"));
    assert_eq!(cells.lines().count(), 5);

    let o = clonesim(&["validate", "--run", &run_s]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("Baseline resilience"));

    let o = clonesim(&["replay", "--run", &run_s, "--agent", "5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.starts_with("agent 5 (persona 1, arm"), "{s}");
    assert!(s.contains("termination:"));

    let o = clonesim(&["replay", "--run", &run_s, "--agent", "99999"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn stop_and_resume_matches_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full").display().to_string();
    let part = dir.path().join("part").display().to_string();
    let base = ["simulate", "--personas", "20", "--seed", "9"];

    let o = clonesim(&[&base[..], &["--output", &full]].concat());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = clonesim(&[&base[..], &["--output", &part, "--stop-after", "40"]].concat());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("--resume"));

    // A second fresh start in the same directory is refused.
    let o = clonesim(&[&base[..], &["--output", &part]].concat());
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    // Resuming under a different seed is a config mismatch.
    let o = clonesim(&["simulate", "--personas", "20", "--seed", "10", "--output", &part, "--resume"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));

    let o = clonesim(&[&base[..], &["--output", &part, "--resume"]].concat());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let listing = |d: &str| {
        let mut v: Vec<_> = fs::read_dir(Path::new(d).join("trajectories"))
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        v.sort();
        v
    };
    let names = listing(&full);
    assert_eq!(names.len(), 80);
    assert_eq!(names, listing(&part));
    for n in names {
        let a = fs::read(Path::new(&full).join("trajectories").join(&n)).unwrap();
        let b = fs::read(Path::new(&part).join("trajectories").join(&n)).unwrap();
        assert_eq!(a, b, "{n:?}");
    }
}

#[test]
fn catalog_and_rules_lint() {
    let o = clonesim(&["catalog", "lint"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("45 events"), "{}", stdout(&o));

    let o = clonesim(&["rules", "lint"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(
        dir.path(),
        "bad.toml",
        "version = \"x\"\n\n[[event]]\nid = \"a\"\ndomain = \"health\"\nvalence = \"negative\"\n\
         base_prob = 2.0\nmin_age = 0\nmax_age = 99\nnarrative = \"a\"\n",
    );
    let o = clonesim(&["catalog", "lint", &bad]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("bad.toml:4"), "{}", stderr(&o));
}

#[test]
fn offline_llm_without_cache_is_backend_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "llm.toml",
        &format!(
            "n_personas = 1\nend_age = 8\nbackend = \"llm\"\noutput_dir = \"{}\"\n\n[llm]\noffline = true\n",
            dir.path().join("run").display()
        ),
    );
    let o = clonesim(&["simulate", "--config", &cfg]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("pending"), "{}", stderr(&o));
}

/// Chat endpoint that always answers with the same adaptive reply.
fn stub_server() -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let l = line.to_ascii_lowercase();
                if let Some(v) = l.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0u8; len];
            let _ = reader.read_exact(&mut body);
            counter.fetch_add(1, Ordering::SeqCst);
            let reply = serde_json::json!({
                "choices": [{"message": {"content":
                    "I stayed calm, made a plan and asked my friends for help. I am grateful and hopeful."}}]
            })
            .to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                reply.len(),
                reply
            );
        }
    });
    (url, hits)
}

#[test]
fn llm_backend_against_stub_then_cache_only() {
    let (url, hits) = stub_server();
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let online = write_config(
        dir.path(),
        "online.toml",
        &format!(
            "n_personas = 1\nend_age = 9\nbackend = \"llm\"\noutput_dir = \"{}\"\n\n[llm]\nendpoint = \"{url}\"\n\
             max_retries = 0\ncache_dir = \"{}\"\n",
            dir.path().join("online").display(),
            cache.display()
        ),
    );
    let o = clonesim(&["simulate", "--config", &online, "--workers", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let calls = hits.load(Ordering::SeqCst);
    assert!(calls > 0);

    let replay = clonesim(&[
        "replay",
        "--run",
        &dir.path().join("online").display().to_string(),
        "--agent",
        "1",
    ]);
    assert!(stdout(&replay).contains("life summary: I stayed calm"), "{}", stdout(&replay));

    // Same prompts, offline: every response comes from the cache.
    let offline = write_config(
        dir.path(),
        "offline.toml",
        &fs::read_to_string(&online)
            .unwrap()
            .replace("online\"", "offline\"")
            .replace("max_retries = 0", "max_retries = 0\noffline = true"),
    );
    let o = clonesim(&["simulate", "--config", &offline, "--workers", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(hits.load(Ordering::SeqCst), calls);
    for id in 0..4u64 {
        let name = format!("agent_{id:06}.jsonl");
        let a = fs::read(dir.path().join("online/trajectories").join(&name)).unwrap();
        let b = fs::read(dir.path().join("offline/trajectories").join(&name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}
