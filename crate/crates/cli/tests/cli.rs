use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hypogen"))
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn data_path() -> PathBuf {
    repo().join("crates/core/fixtures/presence.tex")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_config(dir: &Path, provider: &str, data: &Path) -> PathBuf {
    let path = dir.join("run.toml");
    let body = format!(
        "[run]\niterations = 10\noutput_dir = \"runs\"\n\n[data]\npath = {data:?}\n\n[provider]\n{provider}\n",
        data = data.display().to_string()
    );
    fs::write(&path, body).unwrap();
    path
}

fn demo_config(dir: &Path) -> PathBuf {
    write_config(
        dir,
        "id = \"scripted\"\nkind = \"scripted\"\nscript = \"builtin:demo\"\nrate_in = 3e-6\nrate_out = 15e-6",
        &data_path(),
    )
}

/// A one-iteration script whose three scientists each propose one
/// hypothesis with the given data points; the accumulator keeps all three.
fn script_config(dir: &Path, datapoints: [&str; 3], planner: serde_json::Value) -> PathBuf {
    let hyp = |k: usize, id: &str| json!({"id": id, "statement": format!("Statement {k}."), "key_datapoints": datapoints[k - 1]});
    let sci = |k: usize| json!({"role": format!("scientist_{k}"), "texts": [json!({"hypothesis": [hyp(k, "H_one")]}).to_string()]});
    let acc = json!({"hypothesis": [hyp(1, "H_final_one"), hyp(2, "H_final_two"), hyp(3, "H_final_three")]});
    let script = json!({"entries": [
        {"role": "data_analyst", "texts": ["analysis"]},
        {"role": "planner", "texts": [planner.to_string()]},
        sci(1), sci(2), sci(3),
        {"role": "accumulator", "texts": [acc.to_string()]},
        {"role": "literature_reviewer", "texts": ["review"]},
        {"role": "critic", "texts": ["critique of H_final_one"]},
    ]});
    fs::write(dir.join("script.json"), script.to_string()).unwrap();
    write_config(
        dir,
        "id = \"local\"\nkind = \"scripted\"\nscript = \"script.json\"\nlatency_ms = 0",
        &data_path(),
    )
}

fn full_plan() -> serde_json::Value {
    json!({"Agent1_instructions": "a", "Agent2_instructions": "b", "Agent3_instructions": "c"})
}

fn run_dir(out: &Output) -> PathBuf {
    let stdout = text(&out.stdout);
    let line = stdout
        .lines()
        .find_map(|l| l.strip_prefix("run directory: "))
        .unwrap_or_else(|| panic!("no run directory in {stdout}"));
    PathBuf::from(line)
}

fn run(config: &Path, extra: &[&str]) -> Output {
    bin()
        .arg("run")
        .arg("--config")
        .arg(config)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn scripted_run_completes_ten_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&demo_config(dir.path()), &["--provider", "scripted"]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("10 iterations completed"), "{stdout}");
    assert!(stdout.contains("48 hypotheses"));
    assert!(stdout.contains("total cost: $"));
    let root = run_dir(&out);
    assert!(root.starts_with(dir.path().join("runs")));
    assert!(root.join("iteration_10/critic.md").is_file());
}

#[test]
fn iterations_flag_and_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("elsewhere");
    let out = run(
        &demo_config(dir.path()),
        &["--iterations", "1", "--out", out_dir.to_str().unwrap()],
    );
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("1 iterations completed"));
    let root = run_dir(&out);
    assert!(root.starts_with(&out_dir));
    assert!(!root.join("iteration_2").exists());
}

#[test]
fn unconfigured_scripted_provider_uses_builtin_demo() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "id = \"sonnet\"\nkind = \"http\"\nendpoint = \"http://127.0.0.1:9/\"\nmodel = \"m\"\ntext_pointer = \"/t\"",
        &data_path(),
    );
    let out = run(&config, &["--provider", "scripted", "--iterations", "2"]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("2 iterations completed"));
}

#[test]
fn missing_data_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere/presence.csv");
    let config = write_config(
        dir.path(),
        "id = \"scripted\"\nkind = \"scripted\"\nscript = \"builtin:demo\"",
        &missing,
    );
    let out = run(&config, &[]);
    assert_eq!(code(&out), 1);
    assert!(
        text(&out.stderr).contains("nowhere/presence.csv"),
        "{}",
        text(&out.stderr)
    );

    let out = run(&dir.path().join("absent.toml"), &[]);
    assert_eq!(code(&out), 1);
}

#[test]
fn failed_stage_exits_two_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let plan = json!({"Agent1_instructions": "a", "Agent2_instructions": "b"});
    let config = script_config(
        dir.path(),
        ["ID 14 in Orgueil", "ID 27 in Aguas Zarcas", "ID 28 in Lignite Soil"],
        plan,
    );
    let out = run(&config, &["--iterations", "1"]);
    assert_eq!(code(&out), 2);
    let stderr = text(&out.stderr);
    assert!(stderr.contains("stage planner"), "{stderr}");
    assert!(stderr.contains("Agent3_instructions"), "{stderr}");
}

#[test]
fn verify_exit_codes_follow_violations() {
    let dir = tempfile::tempdir().unwrap();
    let clean = script_config(
        dir.path(),
        [
            "ID 14 (dibenzothiophene) in Orgueil, ALH 83100, LEW 85311",
            "ID 27 (1,2,4-trithiolane) in Aguas Zarcas, LEW 85311",
            "ID 28 (ergost-14-ene) found only in Lignite Soil and Murchison Soil samples; ID 12 found in meteorites (LEW 85311, Mars Soil)",
        ],
        full_plan(),
    );
    let out = run(&clean, &["--iterations", "1"]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    let root = run_dir(&out);
    let verify = bin()
        .arg("verify")
        .arg(&root)
        .arg("--data")
        .arg(data_path())
        .output()
        .unwrap();
    let stdout = text(&verify.stdout);
    assert_eq!(code(&verify), 0, "{stdout}");
    assert!(
        stdout.contains("iter1.H_final_one: 3 supported, 0 violated, 0 unresolved"),
        "{stdout}"
    );
    assert!(stdout.contains("unresolved: Mars Soil"), "{stdout}");

    let dir = tempfile::tempdir().unwrap();
    let bad = script_config(
        dir.path(),
        [
            "ID 14 (dibenzothiophene) in Orgueil",
            "ID 13 (pyrene) found in ALH 83100",
            "ID 27 in Aguas Zarcas",
        ],
        full_plan(),
    );
    let out = run(&bad, &["--iterations", "1"]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    let verify = bin()
        .arg("verify")
        .arg(run_dir(&out))
        .arg("--data")
        .arg(data_path())
        .output()
        .unwrap();
    assert_eq!(code(&verify), 2);
    assert!(text(&verify.stdout).contains("violated: Present(ID 13, ALH 83100)"));
}

fn demo_run(dir: &Path, iterations: &str) -> PathBuf {
    let out = run(&demo_config(dir), &["--iterations", iterations]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    run_dir(&out)
}

const HEADER: &str = "hypothesis_id,novelty,consistency,clarity,empirical,scope,predictive";

#[test]
fn eval_classifies_and_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let root = demo_run(dir.path(), "1");
    let scores = dir.path().join("scores.csv");
    fs::write(&scores, format!("{HEADER}\nH_final_one,7,9,9,9,9,8\n")).unwrap();
    let out = bin()
        .arg("eval")
        .arg(&root)
        .arg("--scores")
        .arg(&scores)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.starts_with("iter1.H_final_one: novel, plausible\n"), "{stdout}");

    let demo_scores = repo().join("demo/scores.csv");
    let out = bin()
        .arg("eval")
        .arg(&root)
        .arg("--scores")
        .arg(&demo_scores)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    let cards = hypogen::evaluation::ingest_scores(&demo_scores).unwrap();
    let block = hypogen::evaluation::aggregate(&cards).unwrap().render_text();
    let stdout = text(&out.stdout);
    assert!(stdout.ends_with(&block), "{stdout}");
    assert!(stdout.contains("iter1.H_final_four: not novel, not plausible"));

    let again = bin()
        .arg("eval")
        .arg(&root)
        .arg("--scores")
        .arg(&demo_scores)
        .output()
        .unwrap();
    assert_eq!(again.stdout, out.stdout);
}

#[test]
fn eval_rejects_malformed_scores() {
    let dir = tempfile::tempdir().unwrap();
    let root = demo_run(dir.path(), "1");
    for (name, body) in [
        ("header.csv", "id,score\nH_final_one,7\n".to_string()),
        ("range.csv", format!("{HEADER}\nH_final_one,11,9,9,9,9,8\n")),
        ("unknown.csv", format!("{HEADER}\nH_final_nine,7,9,9,9,9,8\n")),
    ] {
        let scores = dir.path().join(name);
        fs::write(&scores, body).unwrap();
        let out = bin()
            .arg("eval")
            .arg(&root)
            .arg("--scores")
            .arg(&scores)
            .output()
            .unwrap();
        assert_eq!(code(&out), 1, "{name}");
        assert!(text(&out.stderr).starts_with("error:"), "{name}");
    }
}

#[test]
fn report_writes_markdown_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let root = demo_run(dir.path(), "10");
    let out_path = dir.path().join("report.md");
    let out = bin()
        .arg("report")
        .arg(&root)
        .arg("--scores")
        .arg(repo().join("demo/scores.csv"))
        .arg("--out")
        .arg(&out_path)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    let md = fs::read_to_string(&out_path).unwrap();
    assert!(md.contains("Hypotheses: 48 total, 5 scored, 4 plausible, 3 novel and plausible."));
    assert!(md.contains("| iter10.H_final_five |"));
    assert!(md.contains("unscored"));
    let counts: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_path.with_extension("json")).unwrap()).unwrap();
    assert_eq!(counts["total"], 48);
    assert_eq!(counts["novel_and_plausible"], 3);
}

#[test]
fn resume_of_completed_run_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let root = demo_run(dir.path(), "2");
    let manifest = fs::read(root.join("manifest.json")).unwrap();
    let out = bin().arg("resume").arg(&root).output().unwrap();
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("2 iterations completed"));
    assert_eq!(fs::read(root.join("manifest.json")).unwrap(), manifest);

    let out = bin().arg("resume").arg(dir.path().join("missing")).output().unwrap();
    assert_eq!(code(&out), 1);
}

#[test]
fn flags_are_validated() {
    let out = bin().arg("report").arg("x").arg("--scores").arg("y").output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(text(&out.stderr).contains("--out"));
}
