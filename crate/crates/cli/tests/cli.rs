use std::path::{Path, PathBuf};
use std::process::Command;

fn mini(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/mini").join(file)
}

/// Config pointing at an unreachable endpoint; only offline commands succeed.
fn write_config(work: &Path) -> PathBuf {
    let text = format!(
        r#"seed = 3

[paths]
topics = "{}"
qrels = "{}"
collection = "{}"
output_dir = "out"
cache_dir = "cache"

[gateway]
endpoint = "http://127.0.0.1:9/v1/chat/completions"
retry = {{ max_retries = 0, base_delay_ms = 1, max_delay_ms = 1 }}

[embedding]
endpoint = "http://127.0.0.1:9/v1/embeddings"

[grid]
strategies = ["none"]
shots = [0]
retrievers = ["sparse"]
"#,
        mini("topics.json").display(),
        mini("qrels.txt").display(),
        mini("collection.tsv").display(),
    );
    let path = work.join("pcir.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn pcir(config: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_pcir"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

#[test]
fn stats_prints_fixture_counts() {
    let work = tempfile::tempdir().unwrap();
    let config = write_config(work.path());
    let out = pcir(&config, &["stats"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().any(|l| l == "turns\t5"), "{stdout}");
    assert!(stdout.lines().any(|l| l == "ptkb_assessments\t18"), "{stdout}");
    assert!(work.path().join("out/reports/stats.tsv").exists());
}

#[test]
fn index_then_retrieve_without_reformulations_fails_cleanly() {
    let work = tempfile::tempdir().unwrap();
    let config = write_config(work.path());
    let out = pcir(&config, &["index"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("sparse.idx"));

    let out = pcir(&config, &["retrieve", "--strategy", "none", "--retriever", "sparse"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("error: missing artifact"), "{stderr}");
    assert!(stderr.contains("reformulate --strategy none --shots 0"), "{stderr}");
}

#[test]
fn unreachable_endpoint_is_a_failure_exit() {
    let work = tempfile::tempdir().unwrap();
    let config = write_config(work.path());
    let out = pcir(&config, &["reformulate", "--strategy", "none"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("endpoint request failed"));
}

#[test]
fn missing_config_is_reported() {
    let work = tempfile::tempdir().unwrap();
    let out = pcir(&work.path().join("absent.toml"), &["stats"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.toml"));
}
