//! End-to-end tests driving the `credal` binary: every subcommand, the
//! documented exit codes, and the full compile → simulate → profile →
//! validate pipeline over the bundled corpus.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_credal"))
}

fn corpus(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path_str(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

#[test]
fn check_reports_counts_for_a_valid_kb() {
    let out = run(&[
        "check",
        &path_str(&corpus("subsurface.rkb")),
        "--format",
        "records",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("(check :templates 16"), "got: {text}");
    assert!(text.contains(":loops 0"), "got: {text}");
}

#[test]
fn check_rejects_a_monotonic_cycle_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let kb = dir.path().join("cyclic.rkb");
    std::fs::write(
        &kb,
        "(variable a)(variable b)
         (rule fwd :premises ((a yes)) :conclusion (b yes) :sufficiency 0.5 :tnorm T2)
         (rule back :premises ((b yes)) :conclusion (a yes) :sufficiency 0.5 :tnorm T2)",
    )
    .unwrap();
    let out = run(&["check", &path_str(&kb)]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("monotonic cycle"), "got: {err}");
    assert!(err.contains("fwd") && err.contains("back"), "got: {err}");
}

#[test]
fn missing_input_file_exits_1() {
    let out = run(&["check", "/nonexistent/kb.rkb"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("cannot read"));
}

#[test]
fn compile_is_deterministic_and_prints_topo() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("one.rkn");
    let out2 = dir.path().join("two.rkn");
    let kb = path_str(&corpus("subsurface.rkb"));
    let first = run(&["compile", &kb, "-o", &path_str(&out1), "--print-topo"]);
    assert!(first.status.success(), "stderr: {}", stderr_of(&first));
    assert!(stdout_of(&first).contains("(topo 0 "));
    let second = run(&["compile", &kb, "-o", &path_str(&out2)]);
    assert!(second.status.success());
    let bytes1 = std::fs::read(&out1).unwrap();
    let bytes2 = std::fs::read(&out2).unwrap();
    assert_eq!(bytes1, bytes2, "two compiles of the same KB differ");
}

#[test]
fn compile_failure_writes_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let kb = dir.path().join("bad.rkb");
    std::fs::write(&kb, "(rule broken :sufficiency)").unwrap();
    let target = dir.path().join("bad.rkn");
    let out = run(&["compile", &path_str(&kb), "-o", &path_str(&target)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!target.exists(), "failed compile must not write output");
}

#[test]
fn profile_measures_every_node_and_stamps_samples() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.rkn");
    let track = dir.path().join("a.rtf");
    let truth = dir.path().join("a.rgt");
    let table = dir.path().join("a.rkt");
    assert!(run(&[
        "compile",
        &path_str(&corpus("subsurface.rkb")),
        "-o",
        &path_str(&net)
    ])
    .status
    .success());
    assert!(run(&[
        "simulate",
        &path_str(&corpus("scenario-a.rsc")),
        "--track-out",
        &path_str(&track),
        "--truth-out",
        &path_str(&truth)
    ])
    .status
    .success());
    let out = run(&[
        "profile",
        "--net",
        &path_str(&net),
        "--track",
        &path_str(&track),
        "-o",
        &path_str(&table),
        "--samples",
        "5",
        "--format",
        "records",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(
        text.contains(":nodes 17 :measured 17"),
        "scenario-a exercises every template and predicate; got: {text}"
    );
    assert!(text.contains(":samples 5"));
    let emitted = std::fs::read_to_string(&table).unwrap();
    assert!(emitted.contains("replayed-track-x5"), "got: {emitted}");
}

#[test]
fn profile_missing_network_exits_1() {
    let out = run(&[
        "profile",
        "--net",
        "/nonexistent/net.rkn",
        "--track",
        "/nonexistent/a.rtf",
        "-o",
        "/tmp/unused.rkt",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mk = |tag: &str| {
        let track = dir.path().join(format!("{tag}.rtf"));
        let truth = dir.path().join(format!("{tag}.rgt"));
        let out = run(&[
            "simulate",
            &path_str(&corpus("scenario-a.rsc")),
            "--track-out",
            &path_str(&track),
            "--truth-out",
            &path_str(&truth),
        ]);
        assert!(out.status.success(), "stderr: {}", stderr_of(&out));
        (
            std::fs::read(&track).unwrap(),
            std::fs::read(&truth).unwrap(),
        )
    };
    let (track1, truth1) = mk("one");
    let (track2, truth2) = mk("two");
    assert_eq!(track1, track2, "same seed must give identical tracks");
    assert_eq!(truth1, truth2, "same seed must give identical truth logs");
}

/// A tiny timing table with every rule template at a fixed known cost, so
/// budget arithmetic in `run` is deterministic.
fn write_uniform_timing(path: &Path, cost_us: f64) {
    let templates = [
        "alert",
        "alert-close-attack",
        "attack",
        "away-beam",
        "away-opening",
        "away-stern",
        "counter-evade",
        "counter-sprint",
        "evade",
        "evade-direct",
        "min-time-budget",
        "patrol",
        "run-fast",
        "run-medium",
        "threat-attack",
        "threat-close",
        "threat-patrol",
    ];
    let mut text = String::from("(timing-table RKT1)\n(provenance hand-written)\n");
    for t in templates {
        text.push_str(&format!("(node {t} :cost-us {cost_us} :samples 1 :measured)\n"));
    }
    std::fs::write(path, text).unwrap();
}

struct RunFixture {
    _dir: tempfile::TempDir,
    net: PathBuf,
    track: PathBuf,
    timing: PathBuf,
}

fn run_fixture() -> RunFixture {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.rkn");
    let track = dir.path().join("a.rtf");
    let truth = dir.path().join("a.rgt");
    let timing = dir.path().join("uniform.rkt");
    assert!(run(&[
        "compile",
        &path_str(&corpus("subsurface.rkb")),
        "-o",
        &path_str(&net)
    ])
    .status
    .success());
    assert!(run(&[
        "simulate",
        &path_str(&corpus("scenario-a.rsc")),
        "--track-out",
        &path_str(&track),
        "--truth-out",
        &path_str(&truth)
    ])
    .status
    .success());
    write_uniform_timing(&timing, 1000.0);
    RunFixture {
        _dir: dir,
        net,
        track,
        timing,
    }
}

#[test]
fn run_generous_budget_covers_every_path() {
    let fx = run_fixture();
    let out = run(&[
        "run",
        "--net",
        &path_str(&fx.net),
        "--track",
        &path_str(&fx.track),
        "--timing",
        &path_str(&fx.timing),
        "--query",
        "(maneuver c1 turn-away-run)",
        "--budget",
        "50ms",
        "--virtual-clock",
        "--format",
        "records",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains(":status done"), "got: {text}");
    assert!(text.contains(":lb 0.874631"), "got: {text}");
    assert!(text.contains("8/8 paths"), "got: {text}");
}

#[test]
fn run_tight_budget_reports_a_partial_plan() {
    let fx = run_fixture();
    let base = [
        "run",
        "--net",
        &path_str(&fx.net),
        "--track",
        &path_str(&fx.track),
        "--defer",
        "--timing",
        &path_str(&fx.timing),
        "--query",
        "(maneuver c1 turn-away-run)",
        "--virtual-clock",
        "--format",
        "records",
    ]
    .map(String::from);

    // 1500us buys exactly one 1000us rule node: the three evidence chains
    // through the direct recognizer share it, and nothing else fits.
    let mut partial = base.to_vec();
    partial.extend(["--budget".into(), "1500us".into()]);
    let out = run(&partial.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("3/8 paths cost 1000us"), "got: {text}");
    assert!(!text.contains("DEGRADED"), "got: {text}");

    // 500us fits nothing: the planner degrades to the cheapest single path.
    let mut degraded = base.to_vec();
    degraded.extend(["--budget".into(), "500us".into()]);
    let out = run(&degraded.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("DEGRADED"), "got: {text}");
}

#[test]
fn run_explain_appends_a_proof_trace() {
    let fx = run_fixture();
    let out = run(&[
        "run",
        "--net",
        &path_str(&fx.net),
        "--track",
        &path_str(&fx.track),
        "--timing",
        &path_str(&fx.timing),
        "--query",
        "(maneuver c1 turn-away-run)",
        "--budget",
        "50ms",
        "--virtual-clock",
        "--explain",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("dominant"), "got: {text}");
    assert!(text.contains("evade-direct@c1"), "got: {text}");
}

#[test]
fn run_task_records_and_scope_flags_work() {
    let fx = run_fixture();
    let out = run(&[
        "run",
        "--net",
        &path_str(&fx.net),
        "--track",
        &path_str(&fx.track),
        "--timing",
        &path_str(&fx.timing),
        "--task",
        "(task :kind goal :goal (running c1 yes) :priority 2 :deadline +40ms)",
        "--query",
        "(turned-away c1 yes)",
        "--budget",
        "40ms",
        "--scope",
        "kinematic",
        "--virtual-clock",
        "--format",
        "records",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert_eq!(text.matches(":status done").count(), 2, "got: {text}");
    assert!(text.contains("(running c1 yes)"), "got: {text}");
    assert!(text.contains("(turned-away c1 yes)"), "got: {text}");
}

#[test]
fn validate_scores_the_corpus_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let track = dir.path().join("a.rtf");
    let truth = dir.path().join("a.rgt");
    assert!(run(&[
        "simulate",
        &path_str(&corpus("scenario-a.rsc")),
        "--track-out",
        &path_str(&track),
        "--truth-out",
        &path_str(&truth)
    ])
    .status
    .success());
    let out = run(&[
        "validate",
        "--net",
        &path_str(&corpus("subsurface.rkb")),
        "--track",
        &path_str(&track),
        "--truth",
        &path_str(&truth),
        "--map",
        &path_str(&corpus("scenario-a.rmap")),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("(validation RVR1)"));
    assert!(text.contains(":agreement 1.0000"), "got: {text}");
    assert!(text.contains(":first-believed 10"), "got: {text}");
}

#[test]
fn validate_unmapped_label_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let track = dir.path().join("a.rtf");
    let truth = dir.path().join("a.rgt");
    assert!(run(&[
        "simulate",
        &path_str(&corpus("scenario-a.rsc")),
        "--track-out",
        &path_str(&track),
        "--truth-out",
        &path_str(&truth)
    ])
    .status
    .success());
    let map = dir.path().join("bad.rmap");
    std::fs::write(
        &map,
        "(goal-map RGM1)\n(map :goal (alert c1 yes) :label ghost :object c1 :threshold 0.5)\n",
    )
    .unwrap();
    let out = run(&[
        "validate",
        "--net",
        &path_str(&corpus("subsurface.rkb")),
        "--track",
        &path_str(&track),
        "--truth",
        &path_str(&truth),
        "--map",
        &path_str(&map),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("ghost"));
}

#[test]
fn zero_noise_track_agrees_perfectly_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("clean.rsc");
    std::fs::write(
        &scenario,
        "(scenario RSC1)
         (meta :name clean-patrol :seed 4 :steps 12 :observer own)
         (player own :class submarine :x 0 :y 0 :heading 0 :speed 3)
         (player cc :class submarine :x 210 :y 40 :heading 0 :speed 4)
         (sensor :phase 1 :noise 0)
         (label patrol :object cc :from 0)",
    )
    .unwrap();
    let map = dir.path().join("clean.rmap");
    std::fs::write(
        &map,
        "(goal-map RGM1)\n(map :goal (patrolling cc yes) :label patrol :object cc :threshold 0.5)\n",
    )
    .unwrap();
    let track = dir.path().join("clean.rtf");
    let truth = dir.path().join("clean.rgt");
    assert!(run(&[
        "simulate",
        &path_str(&scenario),
        "--track-out",
        &path_str(&track),
        "--truth-out",
        &path_str(&truth)
    ])
    .status
    .success());
    let out = run(&[
        "validate",
        "--net",
        &path_str(&corpus("subsurface.rkb")),
        "--track",
        &path_str(&track),
        "--truth",
        &path_str(&truth),
        "--map",
        &path_str(&map),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains(":agreement 1.0000"), "got: {text}");
    assert!(text.contains(":first-believed 0"), "got: {text}");
}

#[test]
fn bundled_corpus_pipeline_completes_quickly() {
    let start = std::time::Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.rkn");
    assert!(run(&[
        "compile",
        &path_str(&corpus("subsurface.rkb")),
        "-o",
        &path_str(&net)
    ])
    .status
    .success());
    for name in ["a", "b", "c"] {
        let track = dir.path().join(format!("{name}.rtf"));
        let truth = dir.path().join(format!("{name}.rgt"));
        let table = dir.path().join(format!("{name}.rkt"));
        assert!(run(&[
            "simulate",
            &path_str(&corpus(&format!("scenario-{name}.rsc"))),
            "--track-out",
            &path_str(&track),
            "--truth-out",
            &path_str(&truth)
        ])
        .status
        .success());
        assert!(run(&[
            "profile",
            "--net",
            &path_str(&net),
            "--track",
            &path_str(&track),
            "-o",
            &path_str(&table),
            "--samples",
            "4"
        ])
        .status
        .success());
        let out = run(&[
            "validate",
            "--net",
            &path_str(&net),
            "--track",
            &path_str(&track),
            "--truth",
            &path_str(&truth),
            "--map",
            &path_str(&corpus(&format!("scenario-{name}.rmap"))),
        ]);
        assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    }
    assert!(
        start.elapsed().as_secs() < 10,
        "pipeline took {:?}",
        start.elapsed()
    );
}
