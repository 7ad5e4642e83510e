//! Stage orchestration: parse, select, segment, lift, threshold, evaluate.
//!
//! Every stage result is a content-addressed artifact in the stage cache;
//! downstream stage keys include upstream artifact digests, so invalidation
//! propagates exactly as far as outputs actually change. Reruns with identical
//! keys read artifacts back instead of recomputing.
//!
//! A failed task (unparseable LLM response, backend outage) is marked failed
//! in the run report and never affects other tasks. Tasks whose selection
//! finds no view of the contextual object complete with an empty prediction.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::{
    self, BackendError, DetectSegmentRequest, FixtureBackend, HttpBackend, InferenceBackend,
    RecordingBackend,
};
use crate::cache::{canonical_json_bytes, StageCache, StageKey};
use crate::config::{BackendConfig, ConfigError, PipelineConfig};
use crate::evaluation::{self, AggregateMetrics, EvalError, TaskResult};
use crate::functional_seg::{build_point_query, segment_functional, FunctionalMask2D};
use crate::lifting::{
    accumulate, build_pixel_map, pair_by_view_id, threshold, Heatmap3D, LiftError, Mask3D,
    PixelToPointMap, SpatialGrid,
};
use crate::parallel::*;
use crate::scene::{load_scene, load_task_file, Scene, SceneError, TaskRecord};
use crate::task_parsing::{understand_task, ParseError, ParsedTask, PromptTemplate};
use crate::view_selection::{
    score_view, select_views, ContextMask, ScoredView, SelectionError, VisibilityScore,
};

/// How the reported AP/AR numbers relate to the detection protocol.
pub const PROTOCOL_NOTE: &str = "single-prediction protocol: one mask per task description, \
ground truth is the union over target instances, so AP and AR at a threshold coincide with the \
detection rate at that threshold";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Lift(#[from] LiftError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown scene {0} under the dataset root")]
    UnknownScene(String),
    #[error("unknown view {0} in segment artifact")]
    UnknownView(String),
    #[error("no tasks matched the request")]
    NoTasks,
    #[error("invalid sweep grid: {0}")]
    InvalidGrid(String),
}

/// Scored views without mask pixels, as stored in the selection artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredViewSummary {
    pub view_id: String,
    pub s_o: f64,
    pub scores: Vec<VisibilityScore>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectArtifact {
    /// All views with their scores, sorted by view id.
    pub scored: Vec<ScoredViewSummary>,
    /// Selected view ids in rank order.
    pub selected: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentArtifact {
    /// Per-view functional masks, sorted by view id. Views whose pointing
    /// query returned nothing (or that failed and were skipped) are absent.
    pub masks: Vec<FunctionalMask2D>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskReport {
    pub scene_id: String,
    pub description: String,
    pub status: TaskStatus,
    /// Stage that failed, when status is Failed.
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub parsed: Option<ParsedTask>,
    pub selected_views: Vec<String>,
    pub predicted_points: usize,
    /// Stage name -> artifact digest, for determinism checks.
    pub artifact_digests: BTreeMap<String, String>,
    /// Present when ground truth exists and the task completed.
    pub result: Option<TaskResult>,
    pub timing_ms: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub protocol: String,
    pub tasks: Vec<TaskReport>,
    pub completed: usize,
    pub failed: usize,
    /// Aggregate over completed tasks that carry ground truth.
    pub metrics: Option<AggregateMetrics>,
}

impl RunReport {
    /// Deterministic digest material: everything except timings.
    pub fn determinism_digest(&self) -> String {
        let stripped: Vec<serde_json::Value> = self
            .tasks
            .iter()
            .map(|t| {
                json!({
                    "scene_id": t.scene_id,
                    "description": t.description,
                    "status": t.status,
                    "artifacts": t.artifact_digests,
                    "predicted_points": t.predicted_points,
                    "result": t.result.as_ref().map(|r| json!({
                        "iou": r.iou,
                        "precision": r.precision,
                        "recall": r.recall,
                    })),
                })
            })
            .collect();
        let body = json!({ "tasks": stripped, "metrics": self.metrics });
        hex::encode(Sha256::digest(body.to_string().as_bytes()))
    }
}

/// One sweep cell: a (lambda, view budget, tau) configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: [f64; 3],
    pub views: usize,
    pub tau: f64,
}

/// Sweep grid file: cross product of the listed values; missing fields use
/// the engine configuration's value.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SweepGrid {
    #[serde(default)]
    pub lambdas: Option<Vec<[f64; 3]>>,
    #[serde(default)]
    pub views: Option<Vec<usize>>,
    #[serde(default)]
    pub taus: Option<Vec<f64>>,
}

impl SweepGrid {
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| PipelineError::InvalidGrid(e.to_string()))
    }

    /// Expand to explicit points and validate them all before any compute.
    pub fn points(&self, base: &PipelineConfig) -> Result<Vec<SweepPoint>, PipelineError> {
        let lambdas = self.lambdas.clone().unwrap_or_else(|| {
            vec![[
                base.selection.lambda_m,
                base.selection.lambda_d,
                base.selection.lambda_alpha,
            ]]
        });
        let views = self
            .views
            .clone()
            .unwrap_or_else(|| vec![base.selection.view_budget]);
        let taus = self.taus.clone().unwrap_or_else(|| vec![base.tau]);
        let mut points = Vec::new();
        for &lambda in &lambdas {
            for &v in &views {
                for &tau in &taus {
                    let point = SweepPoint {
                        lambda,
                        views: v,
                        tau,
                    };
                    configure(base, point).map_err(|e| {
                        PipelineError::InvalidGrid(format!(
                            "cell (lambda {lambda:?}, views {v}, tau {tau}): {e}"
                        ))
                    })?;
                    points.push(point);
                }
            }
        }
        if points.is_empty() {
            return Err(PipelineError::InvalidGrid(
                "grid expands to zero cells".into(),
            ));
        }
        Ok(points)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub metrics: AggregateMetrics,
    pub completed: usize,
    pub failed: usize,
    /// Stage -> (cache hits, misses) for this cell.
    pub cache: BTreeMap<String, (usize, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub protocol: String,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub const CSV_HEADER: &'static str =
        "lambda_m,lambda_d,lambda_alpha,views,tau,mAP,AP50,AP25,mAR,AR50,AR25,mIoU";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.point.lambda[0],
                row.point.lambda[1],
                row.point.lambda[2],
                row.point.views,
                row.point.tau,
                row.metrics.csv_row()
            ));
        }
        out
    }

    /// (tau, mIoU) series per view budget, for plotting threshold sensitivity.
    pub fn plot_data(&self) -> serde_json::Value {
        let mut by_views: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
        for row in &self.rows {
            by_views
                .entry(row.point.views)
                .or_default()
                .push((row.point.tau, row.metrics.miou));
        }
        let series: Vec<serde_json::Value> = by_views
            .into_iter()
            .map(|(views, mut points)| {
                points.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite tau"));
                json!({
                    "views": views,
                    "points": points
                        .iter()
                        .map(|(tau, miou)| json!({"tau": tau, "miou": miou}))
                        .collect::<Vec<_>>(),
                })
            })
            .collect();
        json!({ "series": series })
    }
}

fn configure(base: &PipelineConfig, point: SweepPoint) -> Result<PipelineConfig, ConfigError> {
    let mut config = base.clone();
    config.selection.lambda_m = point.lambda[0];
    config.selection.lambda_d = point.lambda[1];
    config.selection.lambda_alpha = point.lambda[2];
    config.selection.view_budget = point.views;
    config.tau = point.tau;
    config.validate()?;
    Ok(config)
}

struct TaskStages {
    parsed: ParsedTask,
    selected: Vec<String>,
    mask: Mask3D,
    heatmap: Heatmap3D,
    digests: BTreeMap<String, String>,
    timing_ms: BTreeMap<String, u64>,
}

pub struct Engine {
    config: PipelineConfig,
    backend: Box<dyn InferenceBackend>,
    cache: StageCache,
    prompt: PromptTemplate,
    prompt_digest: String,
    backend_id: String,
    scenes: Mutex<BTreeMap<String, Arc<Scene>>>,
}

impl Engine {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let (prompt, prompt_bytes) = match &config.prompt_file {
            Some(path) => (
                PromptTemplate::from_file(path)?,
                std::fs::read(path).map_err(PipelineError::Io)?,
            ),
            None => (
                PromptTemplate::default_template(),
                crate::task_parsing::DEFAULT_PROMPT_JSON.as_bytes().to_vec(),
            ),
        };
        prompt.validate()?;
        let prompt_digest = hex::encode(Sha256::digest(&prompt_bytes));
        if let Some(pinned) = &config.prompt_sha256 {
            if !pinned.eq_ignore_ascii_case(&prompt_digest) {
                return Err(ConfigError::Invalid(format!(
                    "prompt file hashes to {prompt_digest}, config pins {pinned}"
                ))
                .into());
            }
        }
        let backend: Box<dyn InferenceBackend> = match &config.backend {
            BackendConfig::Fixtures { dir } => Box::new(FixtureBackend::new(dir.clone())),
            BackendConfig::Http(http) => {
                let inner = HttpBackend::new(http.clone());
                match &config.record_fixtures {
                    Some(dir) => Box::new(RecordingBackend::new(inner, dir.clone())),
                    None => Box::new(inner),
                }
            }
        };
        let backend_id = config.backend.cache_id();
        let cache = if config.cache_enabled {
            StageCache::new(&config.cache_dir)
        } else {
            StageCache::disabled(&config.cache_dir)
        };
        Ok(Engine {
            backend,
            cache,
            prompt,
            prompt_digest,
            backend_id,
            scenes: Mutex::new(BTreeMap::new()),
            config,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn cache(&self) -> &StageCache {
        &self.cache
    }

    /// Load (and memoize) a scene directory under `<dataset_root>/scenes/`.
    pub fn scene(&self, scene_id: &str) -> Result<Arc<Scene>, PipelineError> {
        if let Some(scene) = self
            .scenes
            .lock()
            .expect("scene map poisoned")
            .get(scene_id)
        {
            return Ok(scene.clone());
        }
        let dir = self.config.dataset_root.join("scenes").join(scene_id);
        if !dir.is_dir() {
            return Err(PipelineError::UnknownScene(scene_id.to_string()));
        }
        let scene = Arc::new(load_scene(&dir, self.config.depth_scale)?);
        self.scenes
            .lock()
            .expect("scene map poisoned")
            .insert(scene_id.to_string(), scene.clone());
        Ok(scene)
    }

    // ---- stages ------------------------------------------------------

    fn parse_key(&self, description: &str) -> StageKey {
        StageKey::new(
            "parse",
            &[],
            json!({
                "description": description,
                "prompt": self.prompt_digest,
                "temperature": 0.0,
                "retries": self.config.parse_retries,
                "backend": self.backend_id,
            }),
        )
    }

    pub fn parse_stage(&self, description: &str) -> Result<(ParsedTask, String), PipelineError> {
        self.cache.get_or_compute(&self.parse_key(description), || {
            understand_task(
                &*self.backend,
                &self.prompt,
                description,
                self.config.parse_retries,
            )
            .map_err(PipelineError::from)
        })
    }

    fn select_key(&self, scene: &Scene, contextual_object: &str) -> StageKey {
        let s = &self.config.selection;
        StageKey::new(
            "select",
            &[("scene", &scene.manifest_digest)],
            json!({
                "contextual_object": contextual_object,
                "lambda_m": s.lambda_m,
                "lambda_d": s.lambda_d,
                "lambda_alpha": s.lambda_alpha,
                "bins_d": s.bins_d,
                "bins_alpha": s.bins_alpha,
                "view_budget": s.view_budget,
                "backend": self.backend_id,
            }),
        )
    }

    /// Segment the contextual object in every view and rank views.
    pub fn select_stage(
        &self,
        scene: &Scene,
        contextual_object: &str,
    ) -> Result<(SelectArtifact, String), PipelineError> {
        let key = self.select_key(scene, contextual_object);
        self.cache.get_or_compute(&key, || {
            let scored: Vec<ScoredView> = scene
                .views
                .par_iter()
                .map(|view| -> Result<ScoredView, PipelineError> {
                    let image_png = view.load_color_bytes()?;
                    let response = backends::detect_segment(
                        &*self.backend,
                        &DetectSegmentRequest {
                            image_png,
                            query: contextual_object.to_string(),
                        },
                    )?;
                    let masks: Vec<ContextMask> = response
                        .masks
                        .into_iter()
                        .map(|m| ContextMask {
                            view_id: view.view_id.clone(),
                            pixels: m.rle.pixels(),
                            confidence: m.score,
                        })
                        .collect();
                    Ok(score_view(
                        &view.view_id,
                        &masks,
                        view.intrinsics.width,
                        view.intrinsics.height,
                        &self.config.selection,
                    )?)
                })
                .collect::<Result<Vec<_>, _>>()?;

            let mut summaries: Vec<ScoredViewSummary> = scored
                .iter()
                .map(|v| ScoredViewSummary {
                    view_id: v.view_id.clone(),
                    s_o: v.s_o,
                    scores: v.all_scores.clone(),
                })
                .collect();
            summaries.sort_by(|a, b| a.view_id.cmp(&b.view_id));
            let selected = select_views(scored, self.config.selection.view_budget)
                .into_iter()
                .map(|v| v.view_id)
                .collect();
            Ok(SelectArtifact {
                scored: summaries,
                selected,
            })
        })
    }

    fn segment_key(&self, scene: &Scene, select_digest: &str, query: &str) -> StageKey {
        StageKey::new(
            "segment",
            &[("scene", &scene.manifest_digest), ("select", select_digest)],
            json!({
                "query": query,
                "backend": self.backend_id,
            }),
        )
    }

    /// Point + segment the functional object on the selected views.
    ///
    /// A view that fails is skipped and logged; it never fails the task.
    pub fn segment_stage(
        &self,
        scene: &Scene,
        select: &SelectArtifact,
        select_digest: &str,
        query: &str,
    ) -> Result<(SegmentArtifact, String), PipelineError> {
        let key = self.segment_key(scene, select_digest, query);
        self.cache.get_or_compute(&key, || {
            let mut masks: Vec<FunctionalMask2D> = select
                .selected
                .par_iter()
                .filter_map(|view_id| {
                    let view = scene.view(view_id)?;
                    let image_png = match view.load_color_bytes() {
                        Ok(bytes) => bytes,
                        Err(e) => {
                            log::warn!("view {view_id}: unreadable color image, skipped: {e}");
                            return None;
                        }
                    };
                    let depth_k = view.depth_intrinsics();
                    match segment_functional(
                        &*self.backend,
                        view_id,
                        &image_png,
                        (view.intrinsics.width, view.intrinsics.height),
                        (depth_k.width, depth_k.height),
                        query,
                    ) {
                        Ok(result) => result,
                        Err(e) => {
                            log::warn!(
                                "view {view_id}: functional segmentation failed, skipped: {e}"
                            );
                            None
                        }
                    }
                })
                .collect();
            masks.sort_by(|a, b| a.view_id.cmp(&b.view_id));
            Ok(SegmentArtifact { masks })
        })
    }

    fn heatmap_key(&self, scene: &Scene, segment_digest: &str) -> StageKey {
        StageKey::new(
            "lift",
            &[
                ("scene", &scene.manifest_digest),
                ("cloud", &scene.cloud_digest),
                ("segment", segment_digest),
            ],
            json!({
                "radius": self.config.lifting_radius,
                "depth_scale": scene.depth_scale,
            }),
        )
    }

    /// Lift per-view masks onto the cloud and accumulate agreement counts.
    pub fn heatmap_stage(
        &self,
        scene: &Scene,
        segment: &SegmentArtifact,
        segment_digest: &str,
    ) -> Result<(Heatmap3D, String), PipelineError> {
        let key = self.heatmap_key(scene, segment_digest);
        self.cache.get_or_compute(&key, || {
            let grid = SpatialGrid::build(&scene.cloud, self.config.lifting_radius);
            let maps: Vec<PixelToPointMap> = segment
                .masks
                .par_iter()
                .map(|mask| -> Result<PixelToPointMap, PipelineError> {
                    let view = scene
                        .view(&mask.view_id)
                        .ok_or_else(|| PipelineError::UnknownView(mask.view_id.clone()))?;
                    let depth = view.load_depth(scene.depth_scale)?;
                    Ok(build_pixel_map(
                        view,
                        &depth,
                        &grid,
                        self.config.lifting_radius,
                    ))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let pairs = pair_by_view_id(&segment.masks, &maps)?;
            Ok(accumulate(&pairs))
        })
    }

    fn mask_key(&self, heatmap_digest: &str) -> StageKey {
        StageKey::new(
            "mask",
            &[("heatmap", heatmap_digest)],
            json!({ "tau": self.config.tau }),
        )
    }

    pub fn mask_stage(
        &self,
        heatmap: &Heatmap3D,
        heatmap_digest: &str,
    ) -> Result<(Mask3D, String), PipelineError> {
        self.cache
            .get_or_compute(&self.mask_key(heatmap_digest), || {
                threshold(heatmap, self.config.tau).map_err(PipelineError::from)
            })
    }

    // ---- per-task driver ---------------------------------------------

    fn run_stages(&self, task: &TaskRecord) -> Result<TaskStages, (String, PipelineError)> {
        let fail = |stage: &str| {
            let stage = stage.to_string();
            move |e: PipelineError| (stage, e)
        };
        let mut digests = BTreeMap::new();
        let mut timing_ms = BTreeMap::new();

        let t0 = Instant::now();
        let scene = self.scene(&task.scene_id).map_err(fail("load"))?;
        task.validate_against(&scene.cloud)
            .map_err(PipelineError::from)
            .map_err(fail("load"))?;
        timing_ms.insert("load".into(), t0.elapsed().as_millis() as u64);

        let t = Instant::now();
        let (parsed, parse_digest) = self.parse_stage(&task.description).map_err(fail("parse"))?;
        digests.insert("parse".into(), parse_digest);
        timing_ms.insert("parse".into(), t.elapsed().as_millis() as u64);

        let t = Instant::now();
        let (select, select_digest) = self
            .select_stage(&scene, &parsed.contextual_object)
            .map_err(fail("select"))?;
        digests.insert("select".into(), select_digest.clone());
        timing_ms.insert("select".into(), t.elapsed().as_millis() as u64);
        if select.selected.is_empty() {
            log::info!(
                "task \"{}\": contextual object \"{}\" not found in any view",
                task.description,
                parsed.contextual_object
            );
        }

        let query = build_point_query(
            &parsed.functional_object,
            &task.description,
            self.config.query_without_description,
        );
        let t = Instant::now();
        let (segment, segment_digest) = self
            .segment_stage(&scene, &select, &select_digest, &query)
            .map_err(fail("segment"))?;
        digests.insert("segment".into(), segment_digest.clone());
        timing_ms.insert("segment".into(), t.elapsed().as_millis() as u64);

        let t = Instant::now();
        let (heatmap, heatmap_digest) = self
            .heatmap_stage(&scene, &segment, &segment_digest)
            .map_err(fail("lift"))?;
        digests.insert("lift".into(), heatmap_digest.clone());
        timing_ms.insert("lift".into(), t.elapsed().as_millis() as u64);

        let t = Instant::now();
        let (mask, mask_digest) = self
            .mask_stage(&heatmap, &heatmap_digest)
            .map_err(fail("mask"))?;
        digests.insert("mask".into(), mask_digest);
        timing_ms.insert("mask".into(), t.elapsed().as_millis() as u64);

        Ok(TaskStages {
            parsed,
            selected: select.selected,
            mask,
            heatmap,
            digests,
            timing_ms,
        })
    }

    /// Run one task end to end and report it; errors become a failed report.
    pub fn run_task(&self, task: &TaskRecord) -> TaskReport {
        let started = Instant::now();
        match self.run_stages(task) {
            Ok(stages) => {
                let result = task.gt_sorted().map(|gt| {
                    let predicted = &stages.mask.point_indices;
                    let (iou, precision, recall) =
                        evaluation::task_iou(predicted, &gt).expect("gt validated non-empty");
                    let confidence = if predicted.is_empty() {
                        0.0
                    } else {
                        predicted
                            .iter()
                            .map(|i| stages.heatmap.normalized.get(i).copied().unwrap_or(0.0))
                            .sum::<f64>()
                            / predicted.len() as f64
                    };
                    TaskResult {
                        scene_id: task.scene_id.clone(),
                        description: task.description.clone(),
                        predicted: predicted.clone(),
                        gt,
                        iou,
                        precision,
                        recall,
                        confidence,
                    }
                });
                let mut timing_ms = stages.timing_ms;
                timing_ms.insert("total".into(), started.elapsed().as_millis() as u64);
                log::info!(
                    "task \"{}\" completed in {} ms ({} predicted points)",
                    task.description,
                    timing_ms["total"],
                    stages.mask.point_indices.len()
                );
                TaskReport {
                    scene_id: task.scene_id.clone(),
                    description: task.description.clone(),
                    status: TaskStatus::Completed,
                    failed_stage: None,
                    error: None,
                    parsed: Some(stages.parsed),
                    selected_views: stages.selected,
                    predicted_points: stages.mask.point_indices.len(),
                    artifact_digests: stages.digests,
                    result,
                    timing_ms,
                }
            }
            Err((stage, error)) => {
                log::warn!("task \"{}\" failed at {stage}: {error}", task.description);
                TaskReport {
                    scene_id: task.scene_id.clone(),
                    description: task.description.clone(),
                    status: TaskStatus::Failed,
                    failed_stage: Some(stage),
                    error: Some(error.to_string()),
                    parsed: None,
                    selected_views: Vec::new(),
                    predicted_points: 0,
                    artifact_digests: BTreeMap::new(),
                    result: None,
                    timing_ms: BTreeMap::from([(
                        "total".into(),
                        started.elapsed().as_millis() as u64,
                    )]),
                }
            }
        }
    }

    /// Run a list of tasks (parallel across tasks) and aggregate metrics.
    pub fn run_tasks(&self, tasks: &[TaskRecord]) -> Result<RunReport, PipelineError> {
        if tasks.is_empty() {
            return Err(PipelineError::NoTasks);
        }
        // fail fast on invalid ground truth before any backend traffic
        for task in tasks {
            let scene = self.scene(&task.scene_id)?;
            task.validate_against(&scene.cloud)?;
        }
        let reports: Vec<TaskReport> = with_worker_count(self.config.jobs, || {
            tasks.par_iter().map(|task| self.run_task(task)).collect()
        });
        let completed = reports
            .iter()
            .filter(|r| r.status == TaskStatus::Completed)
            .count();
        let failed = reports.len() - completed;
        let results: Vec<TaskResult> = reports.iter().filter_map(|r| r.result.clone()).collect();
        let metrics = if results.is_empty() {
            None
        } else {
            Some(evaluation::aggregate(&results)?)
        };
        Ok(RunReport {
            protocol: PROTOCOL_NOTE.to_string(),
            tasks: reports,
            completed,
            failed,
            metrics,
        })
    }

    /// Load the task file (defaults to `<dataset_root>/tasks.json`), optionally
    /// filtered to one scene.
    pub fn load_tasks(
        &self,
        task_file: Option<&Path>,
        scene_filter: Option<&str>,
    ) -> Result<Vec<TaskRecord>, PipelineError> {
        let default_path = self.config.dataset_root.join("tasks.json");
        let path = task_file.unwrap_or(&default_path);
        let mut tasks = load_task_file(path)?;
        if let Some(scene_id) = scene_filter {
            tasks.retain(|t| t.scene_id == scene_id);
        }
        if tasks.is_empty() {
            return Err(PipelineError::NoTasks);
        }
        Ok(tasks)
    }

    /// Run every grid cell and tabulate metrics. Cells run sequentially but
    /// share the on-disk stage cache, so cells that only vary tau reuse the
    /// cached heatmaps.
    pub fn sweep(
        &self,
        tasks: &[TaskRecord],
        grid: &SweepGrid,
    ) -> Result<SweepReport, PipelineError> {
        let points = grid.points(&self.config)?;
        let mut rows = Vec::with_capacity(points.len());
        for point in points {
            let config = configure(&self.config, point)?;
            let engine = Engine::new(config)?;
            let report = engine.run_tasks(tasks)?;
            let metrics = report.metrics.ok_or(PipelineError::NoTasks)?;
            rows.push(SweepRow {
                point,
                metrics,
                completed: report.completed,
                failed: report.failed,
                cache: engine.cache.stats().by_stage(),
            });
            log::info!(
                "sweep cell lambda {:?} views {} tau {}: mIoU {:.2}",
                point.lambda,
                point.views,
                point.tau,
                metrics.miou
            );
        }
        Ok(SweepReport {
            protocol: PROTOCOL_NOTE.to_string(),
            rows,
        })
    }

    /// Export the normalized heatmap as a colored point cloud (red channel).
    pub fn export_heatmap_ply(
        &self,
        scene: &Scene,
        heatmap: &Heatmap3D,
        path: &Path,
    ) -> Result<(), PipelineError> {
        let colors: Vec<[u8; 3]> = (0..scene.cloud.points.len())
            .map(|i| {
                let s = heatmap.normalized.get(&(i as u32)).copied().unwrap_or(0.0);
                [(s * 255.0).round() as u8, 32, 32]
            })
            .collect();
        crate::scene::write_colored_point_cloud(path, &scene.cloud.points, &colors)?;
        Ok(())
    }
}

/// Canonical JSON digest of any serializable artifact; callers use it to
/// compare outputs byte for byte.
pub fn artifact_digest<T: Serialize>(value: &T) -> String {
    let bytes = canonical_json_bytes(value).expect("serializable artifact");
    hex::encode(Sha256::digest(&bytes))
}
