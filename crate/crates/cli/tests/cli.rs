//! CLI behavior through the same entry point `main` uses.

use std::path::{Path, PathBuf};

fn repo_file(relative: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(relative)
}

fn write_config(dir: &Path) -> PathBuf {
    let gazetteer = repo_file("data/gazetteer.tsv");
    let pool = repo_file("data/pools.tsv");
    let config = format!(
        r#"
[pipeline]
detector = "gazetteer"
generator = "random"
replacer = "direct"
seed = 42

[upstream]
base_url = "http://127.0.0.1:9100"

[data]
gazetteer = "{}"
pool = "{}"
"#,
        gazetteer.display(),
        pool.display()
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, config).unwrap();
    path
}

fn run(args: &[&str]) -> i32 {
    pseudonym_cli::run(args.iter().map(|s| s.to_string()))
}

const PREMISE: &str = "The vineyards hug the gentle slopes between the Vosges and the Rhine \
Valley along a single narrow 120-km (75-mile) strip that stretches from Marlenheim, just west of \
Strasbourg, down to Thann, outside Mulhouse.";

#[test]
fn help_exits_zero() {
    assert_eq!(run(&["pseudonym", "--help"]), 0);
    assert_eq!(run(&["pseudonym", "pseudonymize", "--help"]), 0);
}

#[test]
fn unknown_subcommand_exits_two() {
    assert_eq!(run(&["pseudonym", "transmogrify"]), 2);
}

#[test]
fn missing_required_flag_exits_two() {
    assert_eq!(run(&["pseudonym", "restore", "--in", "x"]), 2);
}

#[test]
fn unknown_flag_exits_two() {
    assert_eq!(run(&["pseudonym", "restore", "--bogus"]), 2);
}

#[test]
fn missing_input_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let code = run(&[
        "pseudonym",
        "pseudonymize",
        "--config",
        config.to_str().unwrap(),
        "--in",
        dir.path().join("absent.txt").to_str().unwrap(),
        "--out",
        dir.path().join("out.txt").to_str().unwrap(),
        "--session",
        dir.path().join("session.json").to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
}

#[test]
fn pseudonymize_then_restore_round_trips_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let input = dir.path().join("premise.txt");
    std::fs::write(&input, PREMISE).unwrap();
    let pseudo = dir.path().join("premise.pseudo.txt");
    let session = dir.path().join("session.json");
    let restored = dir.path().join("premise.restored.txt");

    let code = run(&[
        "pseudonym",
        "pseudonymize",
        "--config",
        config.to_str().unwrap(),
        "--in",
        input.to_str().unwrap(),
        "--out",
        pseudo.to_str().unwrap(),
        "--session",
        session.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    let pseudo_text = std::fs::read_to_string(&pseudo).unwrap();
    assert_ne!(pseudo_text, PREMISE);
    for original in [
        "Vosges",
        "Rhine Valley",
        "Marlenheim",
        "Strasbourg",
        "Thann",
        "Mulhouse",
    ] {
        assert!(
            !pseudonym::model::contains_word(&pseudo_text, original, true),
            "{original} survived pseudonymization"
        );
    }
    // Session file is a self-contained JSON record.
    let session_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&session).unwrap()).unwrap();
    assert_eq!(session_json["pairs"].as_array().unwrap().len(), 6);

    let code = run(&[
        "pseudonym",
        "restore",
        "--session",
        session.to_str().unwrap(),
        "--in",
        pseudo.to_str().unwrap(),
        "--out",
        restored.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert_eq!(std::fs::read_to_string(&restored).unwrap(), PREMISE);
}

#[test]
fn eval_writes_a_report_against_a_live_mock() {
    // Host the mock upstream on a dedicated runtime thread; the eval path
    // uses a blocking HTTP client.
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let runtime = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .unwrap();
        runtime.block_on(async move {
            let upstream = pseudonym_mocks::spawn_upstream(None).await;
            tx.send(upstream.base_url()).unwrap();
            std::future::pending::<()>().await;
        });
    });
    let base_url = rx.recv().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let gazetteer = repo_file("data/gazetteer.tsv");
    let pool = repo_file("data/pools.tsv");
    let config_path = dir.path().join("config.toml");
    std::fs::write(
        &config_path,
        format!(
            r#"
[pipeline]
detector = "gazetteer"
generator = "random"
replacer = "direct"
seed = 7

[upstream]
base_url = "{base_url}"

[data]
gazetteer = "{}"
pool = "{}"
"#,
            gazetteer.display(),
            pool.display()
        ),
    )
    .unwrap();

    let dataset = dir.path().join("dataset.jsonl");
    std::fs::write(
        &dataset,
        concat!(
            r#"{"id":"1","task":"sum","input":{"document":"Alice met Bob in Paris."},"gold":"Alice met Bob in Paris.","entities":[{"text":"Alice"},{"text":"Bob"},{"text":"Paris"}]}"#,
            "\n"
        ),
    )
    .unwrap();
    let report_path = dir.path().join("report.json");

    let code = run(&[
        "pseudonym",
        "eval",
        "--config",
        config_path.to_str().unwrap(),
        "--dataset",
        dataset.to_str().unwrap(),
        "--report",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["items"], 1);
    assert_eq!(report["stage_scores"]["prr"], 100.0);
}
