//! Caching, determinism and failure-isolation behavior of the staged pipeline.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use funcseg3d::config::{BackendConfig, PipelineConfig};
use funcseg3d::pipeline::{Engine, RunReport, TaskStatus};
use funcseg3d::scene::TaskRecord;
use funcseg3d::synth;

/// Generate the demo dataset once; tests share it read-only and each use a
/// private cache directory.
fn demo_root() -> &'static Path {
    static ROOT: OnceLock<PathBuf> = OnceLock::new();
    ROOT.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir").keep();
        synth::generate(&dir).expect("generate demo dataset");
        dir
    })
}

fn config_with_cache(cache: &Path) -> PipelineConfig {
    let mut config = PipelineConfig::from_file(&demo_root().join("config.toml")).unwrap();
    config.cache_dir = cache.to_path_buf();
    config
}

fn run_all(config: PipelineConfig) -> (RunReport, Engine) {
    let engine = Engine::new(config).unwrap();
    let tasks = engine.load_tasks(None, None).unwrap();
    let report = engine.run_tasks(&tasks).unwrap();
    (report, engine)
}

#[test]
fn second_run_is_byte_identical_and_fully_cached() {
    let cache = tempfile::tempdir().unwrap();
    let (first, engine1) = run_all(config_with_cache(cache.path()));
    assert!(engine1.cache().stats().misses() > 0);

    let (second, engine2) = run_all(config_with_cache(cache.path()));
    assert_eq!(first.determinism_digest(), second.determinism_digest());
    assert_eq!(
        engine2.cache().stats().misses(),
        0,
        "rerun with identical keys must be a no-op: {:?}",
        engine2.cache().stats().by_stage()
    );
    for (a, b) in first.tasks.iter().zip(&second.tasks) {
        assert_eq!(a.artifact_digests, b.artifact_digests);
    }
}

#[test]
fn worker_count_never_changes_artifacts() {
    let digests: Vec<String> = [Some(1), Some(8)]
        .into_iter()
        .map(|jobs| {
            let cache = tempfile::tempdir().unwrap();
            let mut config = config_with_cache(cache.path());
            config.jobs = jobs;
            run_all(config).0.determinism_digest()
        })
        .collect();
    assert_eq!(digests[0], digests[1]);
}

#[test]
fn cache_disabled_run_matches_cached_run() {
    let cache = tempfile::tempdir().unwrap();
    let (cached, _) = run_all(config_with_cache(cache.path()));

    let cache2 = tempfile::tempdir().unwrap();
    let mut config = config_with_cache(cache2.path());
    config.cache_enabled = false;
    let (uncached, engine) = run_all(config);
    assert_eq!(engine.cache().stats().hits(), 0);
    assert_eq!(cached.determinism_digest(), uncached.determinism_digest());
}

#[test]
fn tau_change_reuses_heatmaps_and_recomputes_masks() {
    let cache = tempfile::tempdir().unwrap();
    let (_, _) = run_all(config_with_cache(cache.path()));

    let mut config = config_with_cache(cache.path());
    config.tau = 0.5;
    let (_, engine) = run_all(config);
    let stats = engine.cache().stats().by_stage();
    let (lift_hits, lift_misses) = stats["lift"];
    let (mask_hits, mask_misses) = stats["mask"];
    assert_eq!(lift_misses, 0, "heatmaps must be reused: {stats:?}");
    assert_eq!(lift_hits, 4);
    assert_eq!(mask_hits, 0, "thresholding must be recomputed: {stats:?}");
    assert_eq!(mask_misses, 4);
}

#[test]
fn selection_parameters_invalidate_selection_onward() {
    let cache = tempfile::tempdir().unwrap();
    let (_, _) = run_all(config_with_cache(cache.path()));

    // lambda change: parse reused, selection recomputed
    let mut config = config_with_cache(cache.path());
    config.selection.lambda_m = 0.6;
    config.selection.lambda_d = 0.2;
    config.selection.lambda_alpha = 0.2;
    let (_, engine) = run_all(config);
    let stats = engine.cache().stats().by_stage();
    assert_eq!(stats["parse"].1, 0, "parse must be reused: {stats:?}");
    // three distinct (scene, object) pairs; the fourth task may reuse the
    // entry its sibling just wrote within the same run
    assert!(
        stats["select"].1 >= 3,
        "selection must be recomputed: {stats:?}"
    );

    // view budget change: same pattern
    let mut config = config_with_cache(cache.path());
    config.selection.view_budget = 3;
    let (_, engine) = run_all(config);
    let stats = engine.cache().stats().by_stage();
    assert!(
        stats["select"].1 >= 3,
        "budget participates in the key: {stats:?}"
    );

    // histogram bins change: same pattern
    let mut config = config_with_cache(cache.path());
    config.selection.bins_d = 8;
    let (_, engine) = run_all(config);
    let stats = engine.cache().stats().by_stage();
    assert!(
        stats["select"].1 >= 3,
        "bins participate in the key: {stats:?}"
    );

    // lifting radius change: heatmap recomputed, selection reused
    let mut config = config_with_cache(cache.path());
    config.lifting_radius = 0.015;
    let (_, engine) = run_all(config);
    let stats = engine.cache().stats().by_stage();
    assert_eq!(stats["select"].1, 0, "selection must be reused: {stats:?}");
    assert_eq!(
        stats["lift"].0, 0,
        "radius participates in the key: {stats:?}"
    );
}

#[test]
fn backend_identity_participates_in_stage_keys() {
    let cache = tempfile::tempdir().unwrap();
    let (_, _) = run_all(config_with_cache(cache.path()));

    // same fixture content under a different declared path is a different backend
    let alias = tempfile::tempdir().unwrap();
    let link = alias.path().join("fixtures_alias");
    std::os::unix::fs::symlink(demo_root().join("fixtures"), &link).unwrap();
    let mut config = config_with_cache(cache.path());
    config.backend = BackendConfig::Fixtures { dir: link };
    let (report, engine) = run_all(config);
    assert_eq!(report.failed, 0);
    let stats = engine.cache().stats().by_stage();
    assert_eq!(
        stats["parse"].1, 4,
        "parse must miss under a new backend id: {stats:?}"
    );
    assert_eq!(
        stats["segment"].1, 4,
        "segment must miss under a new backend id: {stats:?}"
    );
    assert!(
        stats["select"].1 >= 3,
        "select must miss under a new backend id: {stats:?}"
    );
}

#[test]
fn modified_prompt_cannot_reuse_the_old_chat_fixture() {
    let cache = tempfile::tempdir().unwrap();
    let mut config = config_with_cache(cache.path());

    // byte-identical prompt file: same digest, fixtures still hit
    let prompt_copy = cache.path().join("prompt.json");
    std::fs::write(&prompt_copy, funcseg3d::task_parsing::DEFAULT_PROMPT_JSON).unwrap();
    config.prompt_file = Some(prompt_copy.clone());
    let (report, _) = run_all(config.clone());
    assert_eq!(report.failed, 0);

    // modified prompt text changes the chat request; the replay store has no
    // fixture for it, so parsing fails instead of silently reusing stale data
    let modified =
        funcseg3d::task_parsing::DEFAULT_PROMPT_JSON.replace("How do I", "Tell me how I would");
    std::fs::write(&prompt_copy, modified).unwrap();
    let (report, _) = run_all(config);
    assert_eq!(report.completed, 0);
    assert!(report
        .tasks
        .iter()
        .all(|t| t.failed_stage.as_deref() == Some("parse")));
}

#[test]
fn prompt_hash_pinning_is_enforced() {
    let cache = tempfile::tempdir().unwrap();
    let mut config = config_with_cache(cache.path());
    config.prompt_sha256 = Some("0".repeat(64));
    match Engine::new(config) {
        Err(e) => assert!(e.to_string().contains("pins"), "{e}"),
        Ok(_) => panic!("hash mismatch must fail engine construction"),
    }
}

#[test]
fn failed_task_leaves_other_tasks_untouched() {
    let cache = tempfile::tempdir().unwrap();
    let (baseline, _) = run_all(config_with_cache(cache.path()));

    let cache2 = tempfile::tempdir().unwrap();
    let engine = Engine::new(config_with_cache(cache2.path())).unwrap();
    let mut tasks = engine.load_tasks(None, None).unwrap();
    tasks.insert(
        2,
        TaskRecord {
            scene_id: "scene_a".into(),
            description: "polish the invisible teapot".into(),
            gt_point_indices: None,
        },
    );
    let report = engine.run_tasks(&tasks).unwrap();
    assert_eq!(report.failed, 1);
    assert_eq!(report.completed, 4);
    let failed: Vec<&funcseg3d::pipeline::TaskReport> = report
        .tasks
        .iter()
        .filter(|t| t.status == TaskStatus::Failed)
        .collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].failed_stage.as_deref(), Some("parse"));

    // the other four tasks produce exactly the artifacts of the clean run
    for good in baseline.tasks.iter() {
        let matching = report
            .tasks
            .iter()
            .find(|t| t.description == good.description)
            .unwrap();
        assert_eq!(matching.artifact_digests, good.artifact_digests);
    }
    // and the aggregate only covers evaluated tasks
    assert_eq!(baseline.metrics.unwrap().miou, report.metrics.unwrap().miou);
}

#[test]
fn out_of_range_ground_truth_fails_before_any_compute() {
    let cache = tempfile::tempdir().unwrap();
    let engine = Engine::new(config_with_cache(cache.path())).unwrap();
    let tasks = vec![TaskRecord {
        scene_id: "scene_a".into(),
        description: "open the top drawer of the kitchen cabinet".into(),
        gt_point_indices: Some(vec![u32::MAX]),
    }];
    let err = engine.run_tasks(&tasks).unwrap_err();
    assert!(err.to_string().contains("references gt point"), "{err}");
    assert_eq!(engine.cache().stats().misses(), 0);
}

#[test]
fn single_scene_filter_and_missing_scene() {
    let cache = tempfile::tempdir().unwrap();
    let engine = Engine::new(config_with_cache(cache.path())).unwrap();
    let tasks = engine.load_tasks(None, Some("scene_b")).unwrap();
    assert_eq!(tasks.len(), 2);
    assert!(tasks.iter().all(|t| t.scene_id == "scene_b"));
    assert!(engine.scene("scene_zz").is_err());
}

#[test]
fn cached_sweep_matches_uncached_sweep() {
    let grid = funcseg3d::pipeline::SweepGrid {
        lambdas: Some(vec![[1.0, 0.0, 0.0], [0.5, 0.25, 0.25]]),
        views: Some(vec![3]),
        taus: Some(vec![0.5, 0.7]),
    };

    let cache = tempfile::tempdir().unwrap();
    let engine = Engine::new(config_with_cache(cache.path())).unwrap();
    let tasks = engine.load_tasks(None, None).unwrap();
    let cached = engine.sweep(&tasks, &grid).unwrap();
    // tau-only cells reuse the cached heatmaps
    assert!(cached
        .rows
        .iter()
        .any(|row| row.cache.get("lift").is_some_and(|(hits, _)| *hits > 0)));

    let cache2 = tempfile::tempdir().unwrap();
    let mut config = config_with_cache(cache2.path());
    config.cache_enabled = false;
    let engine = Engine::new(config).unwrap();
    let uncached = engine.sweep(&tasks, &grid).unwrap();

    assert_eq!(cached.to_csv(), uncached.to_csv());
}

#[test]
fn invalid_sweep_grid_fails_before_any_compute() {
    let cache = tempfile::tempdir().unwrap();
    let engine = Engine::new(config_with_cache(cache.path())).unwrap();
    let tasks = engine.load_tasks(None, None).unwrap();
    let grid = funcseg3d::pipeline::SweepGrid {
        lambdas: Some(vec![[0.9, 0.9, 0.9]]),
        views: None,
        taus: None,
    };
    let err = engine.sweep(&tasks, &grid).unwrap_err();
    assert!(err.to_string().contains("sum to 1"), "{err}");
    assert_eq!(engine.cache().stats().misses(), 0);
}
