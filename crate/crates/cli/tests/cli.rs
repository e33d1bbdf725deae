//! End-to-end tests of the `spitband` binary: exit codes, file outputs,
//! determinism of artifacts, and the snapshot tooling.

use std::path::Path;
use std::process::{Command, Output};

use spitband_core::Scenario;

fn spitband(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spitband"))
        .args(args)
        .current_dir(dir)
        .env_remove("SPITBAND_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_small_inputs(dir: &Path) {
    let spec = "seed = 3\n[counts]\nnormal = 40\nspitter = 12\nvoipbot = 8\n";
    std::fs::write(dir.join("corpus-spec.toml"), spec).unwrap();
    let gen = spitband(
        &[
            "generate-corpus",
            "--spec",
            "corpus-spec.toml",
            "--out",
            "corpus.tsv",
        ],
        dir,
    );
    assert_success(&gen);
    let scen = spitband(
        &["scenario-gen", "--k", "3", "--out", "scenario.toml"],
        dir,
    );
    assert_success(&scen);
}

#[test]
fn generate_corpus_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    write_small_inputs(dir.path());
    let again = spitband(
        &[
            "generate-corpus",
            "--spec",
            "corpus-spec.toml",
            "--out",
            "corpus2.tsv",
        ],
        dir.path(),
    );
    assert_success(&again);
    let a = std::fs::read(dir.path().join("corpus.tsv")).unwrap();
    let b = std::fs::read(dir.path().join("corpus2.tsv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("spitband-corpus-v1\n"));
    assert_eq!(text.lines().count(), 61);
}

#[test]
fn scenario_gen_matches_defaults_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a.toml", "b.toml"] {
        let gen = spitband(
            &["scenario-gen", "--k", "10", "--seed", "4", "--out", out],
            dir.path(),
        );
        assert_success(&gen);
    }
    assert_eq!(
        std::fs::read(dir.path().join("a.toml")).unwrap(),
        std::fs::read(dir.path().join("b.toml")).unwrap()
    );

    let gen = spitband(
        &["scenario-gen", "--k", "3", "--out", "three.toml"],
        dir.path(),
    );
    assert_success(&gen);
    let text = std::fs::read_to_string(dir.path().join("three.toml")).unwrap();
    assert!(text.contains("spitband-scenario-v1"));
    // Verbatim default table: spitter ties its two tests at 0.3.
    let scenario = Scenario::load(&dir.path().join("three.toml")).unwrap();
    assert_eq!(scenario, Scenario::three_action_default(None));

    let gen = spitband(
        &[
            "scenario-gen",
            "--k",
            "3",
            "--spitter-a3",
            "0.1",
            "--out",
            "three-unique.toml",
        ],
        dir.path(),
    );
    assert_success(&gen);
    let scenario = Scenario::load(&dir.path().join("three-unique.toml")).unwrap();
    assert_eq!(scenario, Scenario::three_action_default(Some(0.1)));
    assert!(scenario.has_unique_optima());

    // The override only makes sense for the hand-set 3-action table.
    let bad = spitband(
        &[
            "scenario-gen",
            "--k",
            "10",
            "--spitter-a3",
            "0.1",
            "--out",
            "bad.toml",
        ],
        dir.path(),
    );
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn run_from_config_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    write_small_inputs(dir.path());
    let config = "format = \"spitband-experiment-v1\"\n\
                  scenario = \"scenario.toml\"\ncorpus = \"corpus.tsv\"\n\
                  steps = 300\nreplicates = 2\nbase_seed = 5\nout_dir = \"ignored\"\n\n\
                  [learner]\nkind = \"cmabfas\"\n";
    std::fs::write(dir.path().join("experiment.toml"), config).unwrap();

    for out in ["run-a", "run-b"] {
        let run = spitband(
            &["run", "--config", "experiment.toml", "--out", out],
            dir.path(),
        );
        assert_success(&run);
    }
    for rel in [
        "aggregate.csv",
        "manifest.json",
        "replicate-000/metrics.csv",
        "replicate-001/metrics.csv",
    ] {
        let a = std::fs::read(dir.path().join("run-a").join(rel)).unwrap();
        let b = std::fs::read(dir.path().join("run-b").join(rel)).unwrap();
        if rel == "manifest.json" {
            continue; // carries wall-clock timings
        }
        assert_eq!(a, b, "{rel} differs across identical runs");
    }

    // Rerunning into an existing directory is a config error.
    let clash = spitband(
        &["run", "--config", "experiment.toml", "--out", "run-a"],
        dir.path(),
    );
    assert_eq!(clash.status.code(), Some(2));

    let report = spitband(&["report", "--run", "run-a"], dir.path());
    assert_success(&report);
    let text = String::from_utf8(report.stdout).unwrap();
    assert!(text.contains("regret_per_t_mean"));
    assert!(text.lines().count() > 2);
}

#[test]
fn run_flags_only_and_env_override() {
    let dir = tempfile::tempdir().unwrap();
    write_small_inputs(dir.path());
    let run = Command::new(env!("CARGO_BIN_EXE_spitband"))
        .args([
            "run",
            "--learner",
            "naive-baseline",
            "--max-clusters",
            "20",
            "--scenario",
            "scenario.toml",
            "--corpus",
            "corpus.tsv",
            "--steps",
            "200",
            "--out",
            "flag-out",
        ])
        .current_dir(dir.path())
        .env("SPITBAND_OUT_DIR", "env-out")
        .output()
        .unwrap();
    assert_success(&run);
    // The explicit flag wins over the environment override.
    assert!(dir.path().join("flag-out/aggregate.csv").exists());
    assert!(!dir.path().join("env-out").exists());

    let run = Command::new(env!("CARGO_BIN_EXE_spitband"))
        .args([
            "run",
            "--scenario",
            "scenario.toml",
            "--corpus",
            "corpus.tsv",
            "--steps",
            "200",
        ])
        .current_dir(dir.path())
        .env("SPITBAND_OUT_DIR", "env-out")
        .output()
        .unwrap();
    assert!(run.status.success(), "{:?}", run);
    assert!(dir.path().join("env-out/aggregate.csv").exists());

    // Mismatched learner/parameter flags are config errors.
    let bad = spitband(
        &[
            "run",
            "--learner",
            "cmabfas",
            "--max-radius",
            "3",
            "--scenario",
            "scenario.toml",
            "--corpus",
            "corpus.tsv",
            "--steps",
            "10",
            "--out",
            "bad-out",
        ],
        dir.path(),
    );
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let run = spitband(
        &[
            "run",
            "--scenario",
            "nope.toml",
            "--corpus",
            "nope.tsv",
            "--steps",
            "10",
            "--out",
            "out",
        ],
        dir.path(),
    );
    assert_eq!(run.status.code(), Some(2));

    let report = spitband(&["report", "--run", "missing"], dir.path());
    assert_eq!(report.status.code(), Some(2));
}

#[test]
fn checkpoint_resume_and_snapshot_inspect() {
    let dir = tempfile::tempdir().unwrap();
    write_small_inputs(dir.path());
    let run = spitband(
        &[
            "run",
            "--scenario",
            "scenario.toml",
            "--corpus",
            "corpus.tsv",
            "--steps",
            "400",
            "--seed",
            "7",
            "--checkpoint-at",
            "150",
            "--out",
            "full",
        ],
        dir.path(),
    );
    assert_success(&run);
    let ckpt = dir.path().join("full/replicate-000/checkpoint-step-150.json");
    let snap = dir.path().join("full/replicate-000/learner-step-150.snap");
    assert!(ckpt.exists() && snap.exists());

    // Inspect both artifact kinds.
    let inspect = spitband(
        &["snapshot-inspect", "full/replicate-000/learner-step-150.snap"],
        dir.path(),
    );
    assert_success(&inspect);
    let text = String::from_utf8(inspect.stdout).unwrap();
    assert!(text.contains("t=150"), "{text}");
    let inspect = spitband(
        &[
            "snapshot-inspect",
            "full/replicate-000/checkpoint-step-150.json",
        ],
        dir.path(),
    );
    assert_success(&inspect);
    let text = String::from_utf8(inspect.stdout).unwrap();
    assert!(text.contains("step 150 of 400"), "{text}");

    // Resume and compare the finished artifacts bit-exactly.
    let resume = spitband(
        &[
            "run",
            "--scenario",
            "scenario.toml",
            "--corpus",
            "corpus.tsv",
            "--resume",
            "full/replicate-000/checkpoint-step-150.json",
            "--steps",
            "400",
            "--out",
            "resumed",
        ],
        dir.path(),
    );
    assert_success(&resume);
    let full_csv = std::fs::read(dir.path().join("full/replicate-000/metrics.csv")).unwrap();
    let resumed_csv =
        std::fs::read(dir.path().join("resumed/replicate-000/metrics.csv")).unwrap();
    assert_eq!(full_csv, resumed_csv);

    let garbage = spitband(&["snapshot-inspect", "corpus.tsv"], dir.path());
    assert_eq!(garbage.status.code(), Some(2));
}

#[test]
fn sweep_emits_table() {
    let dir = tempfile::tempdir().unwrap();
    write_small_inputs(dir.path());
    let config = "format = \"spitband-sweep-v1\"\n\
                  scenario = \"scenario.toml\"\ncorpus = \"corpus.tsv\"\n\
                  steps = 300\nreplicates = 2\nbase_seed = 1\nout_dir = \"sweep-out\"\n\
                  report_at = [100, 300]\n\n\
                  [[entries]]\nlabel = \"cmabfas\"\nkind = \"cmabfas\"\n\n\
                  [[entries]]\nlabel = \"naive-50-6\"\nkind = \"naive-baseline\"\n\
                  max_clusters = 50\nmax_radius = 6\n";
    std::fs::write(dir.path().join("sweep.toml"), config).unwrap();
    let out = spitband(&["sweep", "--config", "sweep.toml"], dir.path());
    assert_success(&out);
    let table = std::fs::read_to_string(dir.path().join("sweep-out/sweep.csv")).unwrap();
    assert!(table.starts_with("label,learner,params,"));
    assert_eq!(table.lines().count(), 3);
    assert!(dir.path().join("sweep-out/cmabfas/aggregate.csv").exists());
    assert!(dir
        .path()
        .join("sweep-out/naive-50-6/replicate-001/metrics.csv")
        .exists());
}
