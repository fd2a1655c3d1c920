mod common;

use std::collections::BTreeSet;
use std::path::PathBuf;

use pcir_core::config::ExperimentConfig;
use pcir_core::error::Error;
use pcir_core::exec::Execution;
use pcir_core::model::{parse_run, AnnotationSource};
use pcir_core::pipeline::{Pipeline, Scope};
use pcir_core::reformulation::{parse_reformulations, Strategy};
use pcir_core::retrieval::RetrieverKind;

use common::MockServer;

fn pipeline(server: &MockServer, work: &std::path::Path, grid: &str) -> Pipeline {
    let text = common::mini_config(server, work, grid);
    Pipeline::new(ExperimentConfig::from_toml(&text, work).unwrap()).unwrap()
}

fn runs_in(p: &Pipeline) -> BTreeSet<String> {
    let dir = p.config().paths.output_dir.join("runs");
    std::fs::read_dir(dir)
        .unwrap()
        .flatten()
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect()
}

#[test]
fn minimal_grid_writes_exactly_two_runs() {
    let server = MockServer::start();
    let work = tempfile::tempdir().unwrap();
    let p = pipeline(
        &server,
        work.path(),
        "strategies = [\"none\", \"all\"]\nshots = [0]\nretrievers = [\"sparse\"]",
    );
    p.cmd_pipeline().unwrap();
    assert_eq!(
        runs_in(&p),
        BTreeSet::from(["none-0-sparse.run".to_string(), "all-0-sparse.run".to_string()])
    );
    // No dense retriever means no collection embedding.
    assert!(server.embed_inputs().is_empty());
    let run = parse_run(&std::fs::read(p.run_path(Strategy::None, 0, RetrieverKind::Sparse)).unwrap()).unwrap();
    assert_eq!(run.rankings.len(), 5);
}

#[test]
fn rerun_only_rebuilds_missing_artifacts() {
    let server = MockServer::start();
    let work = tempfile::tempdir().unwrap();
    let grid = "strategies = [\"none\", \"human\", \"sar\"]\nshots = [0, 1]\nretrievers = [\"sparse\"]";
    let first = pipeline(&server, work.path(), grid);
    first.cmd_pipeline().unwrap();
    let removed = first.run_path(Strategy::Sar, 1, RetrieverKind::Sparse);
    let kept = first.run_path(Strategy::Human, 0, RetrieverKind::Sparse);
    let kept_before = std::fs::metadata(&kept).unwrap().modified().unwrap();
    std::fs::remove_file(&removed).unwrap();

    let requests = server.request_count();
    let second = pipeline(&server, work.path(), grid);
    second.cmd_pipeline().unwrap();
    assert_eq!(server.request_count(), requests, "reformulations were current");
    let written: BTreeSet<PathBuf> = second.written_artifacts().into_iter().collect();
    assert!(written.contains(&removed));
    assert!(!written.contains(&kept));
    assert!(!written.contains(&second.index_path()));
    assert!(!written.contains(&second.reformulation_path(Strategy::Sar, 1)));
    assert!(!written.contains(&second.annotation_path(AnnotationSource::Automatic)));
    let stray: Vec<_> = written
        .iter()
        .filter(|p| *p != &removed && !p.starts_with(second.reports_dir()))
        .collect();
    assert!(stray.is_empty(), "unexpected rewrites: {stray:?}");
    assert_eq!(std::fs::metadata(&kept).unwrap().modified().unwrap(), kept_before);
}

#[test]
fn changed_seed_invalidates_artifacts() {
    let server = MockServer::start();
    let work = tempfile::tempdir().unwrap();
    let grid = "strategies = [\"none\"]\nshots = [0]\nretrievers = [\"sparse\"]";
    pipeline(&server, work.path(), grid).cmd_index().unwrap();
    let text = common::mini_config(&server, work.path(), grid).replace("seed = 7", "seed = 8");
    let p = Pipeline::new(ExperimentConfig::from_toml(&text, work.path()).unwrap()).unwrap();
    p.cmd_index().unwrap();
    assert_eq!(p.written_artifacts(), vec![p.index_path()]);
}

#[test]
fn missing_upstream_artifacts_name_the_command() {
    let server = MockServer::start();
    let work = tempfile::tempdir().unwrap();
    let p = pipeline(&server, work.path(), "strategies = [\"human\"]\nshots = [0]");

    let err = p.cmd_retrieve(Strategy::Human, 0, RetrieverKind::Sparse).unwrap_err();
    match &err {
        Error::MissingArtifact { command, .. } => assert!(command.contains("reformulate"), "{err}"),
        other => panic!("unexpected error {other}"),
    }
    let err = p.cmd_reformulate(Strategy::Automatic, 0).unwrap_err();
    assert!(matches!(err, Error::MissingArtifact { .. }), "{err}");
    assert!(err.to_string().contains("annotate"), "{err}");
    let err = p.cmd_evaluate(Scope::NeedsPtkb).unwrap_err();
    assert!(matches!(err, Error::MissingArtifact { .. }), "{err}");
}

#[test]
fn rate_limited_calls_are_retried() {
    let server = MockServer::start();
    let work = tempfile::tempdir().unwrap();
    let p = pipeline(&server, work.path(), "strategies = [\"all\"]\nshots = [0]");
    server.fail_next(&[429, 429]);
    let path = p.cmd_reformulate(Strategy::All, 0).unwrap();
    let records = parse_reformulations(&std::fs::read(path).unwrap()).unwrap();
    assert_eq!(records.len(), 5);
    assert!(records.iter().all(|r| r.flags.is_empty()), "{records:?}");
}

#[test]
fn exhausted_retries_surface_the_status() {
    let server = MockServer::start();
    let work = tempfile::tempdir().unwrap();
    let p = pipeline(&server, work.path(), "strategies = [\"all\"]\nshots = [0]").with_execution(Execution::Sequential);
    server.set_offline(true);
    let err = p.cmd_reformulate(Strategy::All, 0).unwrap_err();
    match err {
        Error::Endpoint { attempts, status, .. } => {
            assert_eq!(attempts, 3);
            assert_eq!(status, Some(500));
        }
        other => panic!("unexpected error {other}"),
    }
    assert!(!p.reformulation_path(Strategy::All, 0).exists());
}

#[test]
fn sequential_and_parallel_pipelines_agree() {
    let server = MockServer::start();
    let grid = "strategies = [\"none\", \"automatic\", \"str\"]\nshots = [0, 1]";
    let mut outputs = Vec::new();
    for exec in Execution::available() {
        let work = tempfile::tempdir().unwrap();
        let p = pipeline(&server, work.path(), grid).with_execution(exec);
        p.cmd_pipeline().unwrap();
        let summary = std::fs::read(p.reports_dir().join("all/summary.tsv")).unwrap();
        let run = std::fs::read(p.run_path(Strategy::Str, 1, RetrieverKind::Dense)).unwrap();
        // Paths differ per work dir, so compare without the provenance header.
        let body = |b: Vec<u8>| String::from_utf8(b).unwrap().lines().skip(1).collect::<Vec<_>>().join("\n");
        outputs.push((body(summary), body(run)));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}
