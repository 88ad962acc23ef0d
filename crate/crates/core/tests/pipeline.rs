use std::fs;
use std::path::Path;

use xtypes_core::fixtures::{build_fixture, write_fixture, FixtureSpec};
use xtypes_core::matcher::{render_score_file, score_clusters};
use xtypes_core::pipeline::{
    cmd_evaluate, cmd_run, cmd_sweep, pick_best_k, ArtifactLock, Pipeline, PipelineConfig, PipelineError, Stage,
    StageStatus,
};
use xtypes_core::{EvalMode, Metric};
use xtypes_core::ReprKind;

fn fixture_config(root: &Path, repr: ReprKind, k: usize) -> PipelineConfig {
    let fx = build_fixture(&FixtureSpec::default()).unwrap();
    let paths = write_fixture(&fx, &root.join("data")).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.paths.kg_dir = paths.kg_dir;
    cfg.paths.train = paths.train;
    cfg.paths.test = Some(paths.test);
    cfg.paths.artifacts = root.join("artifacts");
    cfg.model.representation = repr;
    cfg.model.k = Some(k);
    cfg
}

#[test]
fn fixture_run_reports_and_caches() {
    let dir = tempfile::tempdir().unwrap();
    for repr in [ReprKind::Jaccard, ReprKind::QuestionTfidf] {
        let mut cfg = fixture_config(dir.path(), repr, 9);
        cfg.paths.artifacts = dir.path().join(format!("art-{repr}"));
        let t = std::time::Instant::now();
        let out = cmd_run(cfg.clone()).unwrap();
        eprintln!(
            "{repr}: type-only {:?} e2e {:?} cat {:.3} in {:?}",
            out.report.type_only.means, out.report.end_to_end.means, out.report.end_to_end.category_accuracy, t.elapsed()
        );
        let again = cmd_run(cfg).unwrap();
        assert!(again.statuses.iter().all(|(_, s)| *s == StageStatus::Cached));
        assert_eq!(again.statuses.len(), Stage::ALL.len());
        assert!(fs::read_to_string(out.artifacts.join("report.txt")).unwrap().contains(&repr.to_string()));
    }
}

fn names(statuses: &[(Stage, StageStatus)]) -> Vec<(&'static str, StageStatus)> {
    statuses.iter().map(|(s, st)| (s.name(), *st)).collect()
}

#[test]
fn changing_k_reruns_only_downstream_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path(), ReprKind::Jaccard, 6);
    cmd_run(cfg.clone()).unwrap();
    let mut changed = cfg.clone();
    changed.model.k = Some(9);
    let out = cmd_run(changed).unwrap();
    use StageStatus::*;
    assert_eq!(
        names(&out.statuses),
        [
            ("ingest", Cached),
            ("build-repr", Cached),
            ("cluster", Ran),
            ("train", Ran),
            ("predict", Ran),
            ("evaluate", Ran)
        ]
    );
    assert_eq!(out.report.k, 9);
}

#[test]
fn tampered_outputs_invalidate_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path(), ReprKind::Jaccard, 6);
    let out = cmd_run(cfg.clone()).unwrap();
    fs::write(out.artifacts.join("predictions.json"), "[]").unwrap();
    let again = cmd_run(cfg).unwrap();
    let predict = again.statuses.iter().find(|(s, _)| *s == Stage::Predict).unwrap();
    assert_eq!(predict.1, StageStatus::Ran);
    assert_eq!(again.report, out.report);
}

#[test]
fn error_classes_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path(), ReprKind::Jaccard, 6);

    let mut missing = cfg.clone();
    missing.paths.train = dir.path().join("nope.json");
    let e = cmd_run(missing).err().unwrap();
    assert!(matches!(e, PipelineError::Config(_)));
    assert_eq!(e.exit_code(), 2);

    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{ not json").unwrap();
    let mut bad = cfg.clone();
    bad.paths.train = broken;
    let e = cmd_run(bad).err().unwrap();
    assert_eq!(e.exit_code(), 3, "{e}");

    let mut too_many = cfg.clone();
    too_many.model.k = Some(10_000);
    assert_eq!(cmd_run(too_many).err().unwrap().exit_code(), 2);

    fs::create_dir_all(&cfg.paths.artifacts).unwrap();
    let _held = ArtifactLock::acquire(&cfg.paths.artifacts).unwrap();
    let e = cmd_run(cfg).err().unwrap();
    assert!(matches!(e, PipelineError::Locked(_)));
    assert_eq!(e.exit_code(), 4);
}

#[test]
fn external_scores_equal_to_builtin_reproduce_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path(), ReprKind::Jaccard, 6);
    let mut p = Pipeline::open(cfg.clone()).unwrap();
    p.run_until(Stage::Evaluate).unwrap();
    let model = p.load_model().unwrap();
    let inputs = p.inputs();
    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    for q in inputs.validation.questions().iter().chain(inputs.test.as_ref().unwrap().questions()) {
        rows.push((q.id.clone(), score_clusters(&model.matcher, &model.featurizer, q)));
    }
    let builtin = fs::read_to_string(p.artifact("predictions.json")).unwrap();
    drop(p);

    let scores = dir.path().join("scores.tsv");
    fs::write(&scores, render_score_file(model.clusters.k, rows.iter().map(|(id, v)| (id.as_str(), v.as_slice())))).unwrap();
    let mut ext = cfg.clone();
    ext.paths.external_scores = Some(scores.clone());
    ext.paths.artifacts = dir.path().join("ext");
    let out = cmd_run(ext.clone()).unwrap();
    assert_eq!(fs::read_to_string(out.artifacts.join("predictions.json")).unwrap(), builtin);

    // a score file for a different k is a stage failure
    fs::write(&scores, render_score_file(3, rows.iter().map(|(id, v)| (id.as_str(), &v[..3])))).unwrap();
    ext.paths.artifacts = dir.path().join("ext3");
    assert_eq!(cmd_run(ext).err().unwrap().exit_code(), 4);
}

#[test]
fn loaded_embedding_of_jaccard_rows_clusters_like_jaccard() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path(), ReprKind::Jaccard, 6);
    let base = cmd_run(cfg.clone()).unwrap();
    let matrix = fs::read_to_string(base.artifacts.join("type_matrix.tsv")).unwrap();
    let m = xtypes_core::type_repr::read_type_matrix(&base.artifacts.join("type_matrix.tsv")).unwrap();
    let mut emb = format!("#dims {} kind loaded_embedding\n", m.dim());
    for (t, row) in m.type_ids().iter().zip(m.rows()) {
        emb.push_str(t);
        for v in row {
            emb.push_str(&format!("\t{v}"));
        }
        emb.push('\n');
    }
    let path = dir.path().join("emb.tsv");
    fs::write(&path, emb).unwrap();
    let mut loaded = cfg.clone();
    loaded.model.representation = ReprKind::LoadedEmbedding;
    loaded.paths.embeddings = Some(path);
    loaded.paths.artifacts = dir.path().join("loaded");
    let out = cmd_run(loaded).unwrap();
    assert!(!matrix.is_empty());
    let clusters = |d: &Path| -> serde_json::Value {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("clusters.json")).unwrap()).unwrap();
        v["assignment"].clone()
    };
    assert_eq!(clusters(&out.artifacts), clusters(&base.artifacts));
    assert_eq!(out.report.representation, ReprKind::LoadedEmbedding);

    let mut no_file = cfg;
    no_file.model.representation = ReprKind::DescriptionEmbedding;
    assert_eq!(cmd_run(no_file).err().unwrap().exit_code(), 2);
}

#[test]
fn sweep_reports_each_k_and_a_stable_winner() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config(dir.path(), ReprKind::Jaccard, 6);
    cfg.paths.test = None;
    let a = cmd_sweep(cfg.clone(), &[6, 9]).unwrap();
    assert_eq!(a.rows.iter().map(|r| r.k).collect::<Vec<_>>(), [6, 9]);
    assert!(a.rows.iter().all(|r| (0.0..=1.0).contains(&r.validation)));
    assert!(a.rows[1].inertia <= a.rows[0].inertia);
    assert_eq!(Some(a.best_k), pick_best_k(&a.rows));
    assert!(cfg.paths.artifacts.join("sweep.txt").is_file());
    let b = cmd_sweep(cfg, &[6, 9]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn standalone_evaluate_matches_the_run_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path(), ReprKind::QuestionTfidf, 6);
    let out = cmd_run(cfg.clone()).unwrap();
    let report = cmd_evaluate(
        &cfg.paths.kg_dir,
        &out.artifacts.join("predictions.json"),
        cfg.paths.test.as_ref().unwrap(),
        EvalMode::EndToEnd,
        Metric::Ndcg,
    )
    .unwrap();
    assert_eq!(report, out.report.end_to_end);
}
