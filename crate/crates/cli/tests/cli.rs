use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn promptlens(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_promptlens"))
        .args(args)
        .current_dir(dir)
        .env_remove("OPENAI_API_KEY")
        .env_remove("ANTHROPIC_API_KEY")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn error_block(o: &Output) -> serde_json::Value {
    let line = stderr(o).lines().last().unwrap_or_default().to_string();
    serde_json::from_str(&line).unwrap_or_else(|_| panic!("stderr is not JSON: {}", stderr(o)))
}

const PROMPT: &str = "what is the meaning of life";

#[test]
fn explain_writes_report_and_heatmap() {
    let dir = tempfile::tempdir().unwrap();
    let o = promptlens(
        &[
            "explain",
            "--prompt",
            PROMPT,
            "--backend",
            "mock",
            "--out-dir",
            "out",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let html = fs::read_to_string(dir.path().join("out/heatmap.html")).unwrap();
    assert_eq!(html.matches("<span").count(), 6);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["schema_version"], "1");
    assert_eq!(
        report["explanation"]["attributions"]
            .as_array()
            .unwrap()
            .len(),
        6
    );
}

#[test]
fn missing_prompt_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = promptlens(&["explain", "--backend", "mock"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn ansi_format_prints_a_terminal_heatmap() {
    let dir = tempfile::tempdir().unwrap();
    let o = promptlens(
        &["explain", "--prompt", PROMPT, "--format", "ansi"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("\x1b[48;5;"));
    assert!(!dir.path().join("promptlens-out/heatmap.html").exists());
}

#[test]
fn render_reproduces_the_original_html() {
    let dir = tempfile::tempdir().unwrap();
    let o = promptlens(
        &[
            "explain",
            "--prompt",
            PROMPT,
            "--out-dir",
            "a",
            "--seed",
            "3",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let o = promptlens(
        &["render", "--report", "a/report.json", "--out-dir", "b"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let a = fs::read(dir.path().join("a/heatmap.html")).unwrap();
    let b = fs::read(dir.path().join("b/heatmap.html")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn corrupted_report_is_a_schema_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.json"),
        "{\"schema_version\": \"1\", \"explanation\": 3}",
    )
    .unwrap();
    let o = promptlens(&["render", "--report", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_block(&o)["error"]["kind"], "schema_mismatch");
}

#[test]
fn all_zero_scores_render_uncolored() {
    let dir = tempfile::tempdir().unwrap();
    promptlens(
        &["explain", "--prompt", PROMPT, "--out-dir", "a"],
        dir.path(),
    );
    let path = dir.path().join("a/report.json");
    let mut report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    for a in report["explanation"]["attributions"]
        .as_array_mut()
        .unwrap()
    {
        a["score"] = 0.0.into();
        a["intensity"] = 0.0.into();
        a["sign"] = "zero".into();
    }
    fs::write(&path, serde_json::to_string(&report).unwrap()).unwrap();
    let o = promptlens(
        &["render", "--report", "a/report.json", "--out-dir", "z"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let html = fs::read_to_string(dir.path().join("z/heatmap.html")).unwrap();
    assert_eq!(html.matches("<span class=\"token\"").count(), 6);
    assert!(!html.contains("background-color"));
}

#[test]
fn config_file_sets_lexicon_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.toml"),
        "n_perturbations = 12\n\n[surrogate]\nridge_lambda = 1e-6\n\n[generator.lexicon]\ndefault_fragment = \"{token}\"\n\n[generator.lexicon.entries]\nlife = \"purpose existence\"\n",
    )
    .unwrap();
    let o = promptlens(
        &[
            "--config",
            "c.toml",
            "explain",
            "--prompt",
            PROMPT,
            "--out-dir",
            "o",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/report.json")).unwrap())
            .unwrap();
    assert_eq!(
        report["explanation"]["perturbations"]
            .as_array()
            .unwrap()
            .len(),
        12
    );
    assert_eq!(
        report["explanation"]["generator"]["lexicon"]["entries"]["life"],
        "purpose existence"
    );

    fs::write(dir.path().join("bad.toml"), "n_perturbation = 12\n").unwrap();
    let o = promptlens(
        &["--config", "bad.toml", "explain", "--prompt", PROMPT],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn remote_backends_need_a_model_and_a_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = promptlens(
        &[
            "explain",
            "--prompt",
            PROMPT,
            "--backend",
            "openai_completions",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let o = promptlens(
        &[
            "explain",
            "--prompt",
            PROMPT,
            "--backend",
            "anthropic_messages",
            "--model",
            "m",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    let err = error_block(&o);
    assert_eq!(err["error"]["kind"], "auth");
    assert!(err["error"]["message"]
        .as_str()
        .unwrap()
        .contains("ANTHROPIC_API_KEY"));
}

#[test]
fn filtered_run_reports_a_hint() {
    let dir = tempfile::tempdir().unwrap();
    let o = promptlens(
        &["explain", "--prompt", PROMPT, "--significance", "on"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    let err = error_block(&o);
    assert_eq!(err["error"]["kind"], "all_perturbations_filtered");
    assert!(err["error"]["hint"].is_string());
}

#[test]
fn harness_commands_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let runs: [(&[&str], &str); 4] = [
        (&["stability", "--prompt", PROMPT], "stability.json"),
        (
            &[
                "consistency",
                "--prompt",
                PROMPT,
                "--runs",
                "3",
                "--shared-seed",
            ],
            "consistency.json",
        ),
        (
            &["sweep", "--prompt", PROMPT, "--counts", "16,32"],
            "sweep.json",
        ),
        (
            &[
                "compare",
                "--prompt",
                PROMPT,
                "--perturbations",
                "20",
                "--cells",
                "wmd:wmd:wls,cosine:cosine:bayes_ridge",
            ],
            "compare.json",
        ),
    ];
    for (args, file) in runs {
        let o = promptlens(args, dir.path());
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
        let v: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(dir.path().join("promptlens-out").join(file)).unwrap(),
        )
        .unwrap();
        assert!(!v.is_null());
    }
    let sweep: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("promptlens-out/sweep.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(sweep.as_array().unwrap().len(), 2);
    let o = promptlens(
        &["compare", "--prompt", PROMPT, "--cells", "wmd:wmd"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn accuracy_scores_labeled_prompts() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "[generator.lexicon]\ndefault_fragment = \"{token}\"\n[generator.lexicon.entries]\nbeta = \"one two three four\"\n").unwrap();
    fs::write(
        dir.path().join("gt.jsonl"),
        "{\"prompt\": \"alpha beta gamma\", \"labels\": [0, 1, 0]}\n{\"prompt\": \"no labels here\"}\n",
    )
    .unwrap();
    let o = promptlens(
        &[
            "--config",
            "c.toml",
            "accuracy",
            "--ground-truth",
            "gt.jsonl",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("promptlens-out/accuracy.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 1);
    assert_eq!(v["mean"]["auroc"], 1.0);
}
