//! Synthetic desk-scale dataset and fixture generator.
//!
//! Builds two box-world indoor scenes with an analytic depth renderer, samples
//! their surfaces into point clouds, renders posed RGBD views, and writes a
//! complete fixture set (chat, detection, pointing, segmentation responses)
//! so the whole pipeline runs offline and byte-reproducibly.
//!
//! The view roster per task mixes four roles:
//!
//! - good views: aimed at the contextual object, moderate detector confidence,
//!   pointing answers on the true functional parts (the two top-ranked good
//!   views also over-point onto a sibling part or the surface beneath, so
//!   small view budgets admit spurious agreement),
//! - overconfident grazing views: the object hugs the image border but the
//!   detector is very confident; pointing lands on the surface beneath the
//!   part, so confidence-only ranking degrades,
//! - lookalike views: a similar piece of furniture sits dead center and is
//!   confidently wrong geometry-wise (low detector score, ideal centering);
//!   distribution-only ranking promotes them and their pointing answers hit
//!   the lookalike's part,
//! - absent views: the detector finds nothing; the view can never be selected.
//!
//! Everything is table-driven and deterministic: no RNG anywhere.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::Serialize;
use thiserror::Error;

use crate::backends::{
    write_fixture, BackendError, ChatResponse, DetectSegmentRequest, DetectSegmentResponse,
    MaskDetection, NormalizedPoint, PointRequest, PointResponse, SegmentPointsRequest,
    SegmentPointsResponse,
};
use crate::config::{BackendConfig, PipelineConfig};
use crate::functional_seg::{build_point_query, denormalize_point};
use crate::geom::{mat_t_vec, mat_vec, normalize, Mat3, Vec3};
use crate::masks::RleMask;
use crate::scene::{CameraPose, IntrinsicsRecord, SceneManifest, TaskRecord, ViewRecord};
use crate::task_parsing::{build_prompt, PromptTemplate};

const WIDTH: u32 = 640;
const HEIGHT: u32 = 480;
const FX: f64 = 520.0;
const FY: f64 = 520.0;
const CX: f64 = 320.0;
const CY: f64 = 240.0;
const DEPTH_SCALE: f64 = 0.001;
/// Half side of the square painted around below-part pointing mistakes.
const PATCH_HALF: i64 = 16;
/// Clearance carved out of a mounting face around each mounted part: the part
/// displaces the surface it sits on, and host points directly behind the rim
/// would otherwise compete with part points for silhouette-adjacent pixels.
const MOUNT_CLEARANCE: f64 = 0.032;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("fixture: {0}")]
    Fixture(#[from] BackendError),
    #[error("scene construction: {0}")]
    Construction(String),
    #[error("encode: {0}")]
    Encode(String),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---- geometry ---------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Face {
    PosX,
    NegX,
    PosY,
    PosZ,
}

#[derive(Debug, Clone)]
struct Slab {
    part: &'static str,
    min: Vec3,
    max: Vec3,
    /// Faces sampled into the point cloud.
    faces: Vec<Face>,
    /// Sample spacing in meters.
    spacing: f64,
    color: [u8; 3],
}

fn slab(
    part: &'static str,
    min: Vec3,
    max: Vec3,
    faces: &[Face],
    spacing: f64,
    color: [u8; 3],
) -> Slab {
    Slab {
        part,
        min,
        max,
        faces: faces.to_vec(),
        spacing,
        color,
    }
}

/// Cell-center samples with spacing at most `step`.
///
/// Centers keep every sample's ownership region inside the face and equal in
/// area, so mask pixels spread evenly over the sampled points.
fn axis_samples(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let span = hi - lo;
    let n = ((span / step).ceil() as usize).max(1);
    (0..n)
        .map(|i| lo + span * (i as f64 + 0.5) / n as f64)
        .collect()
}

fn sample_face(s: &Slab, face: Face, out: &mut Vec<Vec3>) {
    let (fixed_axis, fixed_value) = match face {
        Face::PosX => (0, s.max[0]),
        Face::NegX => (0, s.min[0]),
        Face::PosY => (1, s.max[1]),
        Face::PosZ => (2, s.max[2]),
    };
    let axes: [usize; 2] = match fixed_axis {
        0 => [1, 2],
        1 => [0, 2],
        _ => [0, 1],
    };
    for a in axis_samples(s.min[axes[0]], s.max[axes[0]], s.spacing) {
        for b in axis_samples(s.min[axes[1]], s.max[axes[1]], s.spacing) {
            let mut p = [0.0; 3];
            p[fixed_axis] = fixed_value;
            p[axes[0]] = a;
            p[axes[1]] = b;
            out.push(p);
        }
    }
}

fn ray_slab(origin: Vec3, dir: Vec3, s: &Slab) -> Option<f64> {
    let mut t_near = 1e-6f64;
    let mut t_far = f64::INFINITY;
    for axis in 0..3 {
        if dir[axis].abs() < 1e-12 {
            if origin[axis] < s.min[axis] || origin[axis] > s.max[axis] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[axis];
        let mut t0 = (s.min[axis] - origin[axis]) * inv;
        let mut t1 = (s.max[axis] - origin[axis]) * inv;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        t_near = t_near.max(t0);
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    Some(t_near)
}

// ---- camera -----------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct Camera {
    rotation: Mat3, // camera-to-world, columns [right, down, forward]
    eye: Vec3,
}

fn look_at(eye: Vec3, target: Vec3) -> Camera {
    let forward = normalize([target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]]);
    let up = [0.0, 1.0, 0.0];
    let right = normalize(crate::geom::cross(forward, up));
    let down = crate::geom::cross(forward, right);
    let rotation = [
        [right[0], down[0], forward[0]],
        [right[1], down[1], forward[1]],
        [right[2], down[2], forward[2]],
    ];
    Camera { rotation, eye }
}

impl Camera {
    fn pose_matrix(&self) -> Vec<f64> {
        let r = &self.rotation;
        vec![
            r[0][0],
            r[0][1],
            r[0][2],
            self.eye[0],
            r[1][0],
            r[1][1],
            r[1][2],
            self.eye[1],
            r[2][0],
            r[2][1],
            r[2][2],
            self.eye[2],
            0.0,
            0.0,
            0.0,
            1.0,
        ]
    }

    /// World point to pixel coordinates, if in front of the camera.
    fn project(&self, p: Vec3) -> Option<(i64, i64)> {
        let cam = mat_t_vec(
            &self.rotation,
            [p[0] - self.eye[0], p[1] - self.eye[1], p[2] - self.eye[2]],
        );
        if cam[2] <= 0.05 {
            return None;
        }
        let u = (FX * cam[0] / cam[2] + CX).round() as i64;
        let v = (FY * cam[1] / cam[2] + CY).round() as i64;
        Some((u, v))
    }
}

/// Per-pixel depth (meters) and hit part, from analytic raycasting.
struct Render {
    depth: Vec<f64>,
    part: Vec<Option<&'static str>>,
}

impl Render {
    fn index(x: u32, y: u32) -> usize {
        (y as usize) * (WIDTH as usize) + x as usize
    }

    fn part_at(&self, x: u32, y: u32) -> Option<&'static str> {
        self.part[Self::index(x, y)]
    }
}

fn render(camera: &Camera, slabs: &[Slab]) -> Render {
    let mut depth = vec![0.0f64; (WIDTH * HEIGHT) as usize];
    let mut part = vec![None; (WIDTH * HEIGHT) as usize];
    for y in 0..HEIGHT {
        for x in 0..WIDTH {
            let dir_cam = [(x as f64 + 0.5 - CX) / FX, (y as f64 + 0.5 - CY) / FY, 1.0];
            let dir = mat_vec(&camera.rotation, dir_cam);
            let mut best: Option<(f64, &'static str)> = None;
            for s in slabs {
                if let Some(t) = ray_slab(camera.eye, dir, s) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, s.part));
                    }
                }
            }
            if let Some((t, p)) = best {
                let i = Render::index(x, y);
                depth[i] = t;
                part[i] = Some(p);
            }
        }
    }
    Render { depth, part }
}

// ---- view roster ------------------------------------------------------

/// What the pointing model answers on a view, per task: points at the
/// centers of `parts` (mask: their union), plus optionally one stray point at
/// a world anchor whose mask is a small square patch on the host surface (the
/// "landed on the surface beneath" mistake). Both empty means no points.
#[derive(Debug, Clone, Default)]
struct Pointing {
    parts: Vec<&'static str>,
    patch: Option<(&'static str, Vec3)>,
}

impl Pointing {
    fn parts(parts: &[&'static str]) -> Self {
        Pointing {
            parts: parts.to_vec(),
            patch: None,
        }
    }

    fn patch(host: &'static str, anchor: Vec3) -> Self {
        Pointing {
            parts: Vec::new(),
            patch: Some((host, anchor)),
        }
    }

    fn with_patch(mut self, host: &'static str, anchor: Vec3) -> Self {
        self.patch = Some((host, anchor));
        self
    }

    fn none() -> Self {
        Pointing::default()
    }
}

#[derive(Debug, Clone)]
struct ViewSpec {
    view_id: &'static str,
    eye: Vec3,
    aim: Vec3,
    /// (query object, detector answer) pairs for this view.
    detections: Vec<(&'static str, Detection)>,
    /// Pointing plan per task id.
    pointing: Vec<(&'static str, Pointing)>,
}

#[derive(Debug, Clone)]
enum Detection {
    /// Render the listed parts as the mask, with this confidence.
    Real {
        parts: Vec<&'static str>,
        confidence: f64,
    },
    /// A painted disk: a detector answer decoupled from the rendered
    /// geometry, tucked into a corner for sliver detections of a barely
    /// visible object.
    Blob {
        center: (f64, f64),
        radius: f64,
        confidence: f64,
    },
    /// A painted centered ring pattern whose ring thickness falls off as 1/r,
    /// giving a near-uniform distance histogram: the strongest possible
    /// geometry score for the lookalike mistake.
    Rings { radius: f64, confidence: f64 },
    /// masks: [] — the object is absent for this detector.
    Absent,
}

#[derive(Debug, Clone)]
struct TaskSpec {
    task_id: &'static str,
    description: &'static str,
    /// Canned chat reply (optionally wrapped in prose or fences).
    chat_text: String,
    /// Functional object name the chat reply yields, used in the query.
    functional: &'static str,
    /// Ground truth parts.
    gt_parts: Vec<&'static str>,
}

struct SceneSpec {
    scene_id: &'static str,
    slabs: Vec<Slab>,
    views: Vec<ViewSpec>,
    tasks: Vec<TaskSpec>,
}

fn chat_json(sequence: &[&str], acted: &str, hierarchy: &[&str]) -> String {
    serde_json::json!({
        "task_solving_sequence": sequence,
        "acted_on_object": acted,
        "acted_on_object_hierarchy": hierarchy,
    })
    .to_string()
}

#[rustfmt::skip]
fn scene_a() -> SceneSpec {
    let gray = [120, 120, 125];
    let brown = [140, 95, 60];
    let dark = [70, 50, 35];
    let steel = [180, 180, 190];
    let slabs = vec![
        slab("wall", [-2.5, 0.0, -0.05], [2.5, 2.4, 0.0], &[Face::PosZ], 0.05, gray),
        slab("floor", [-2.5, -0.05, -0.05], [2.5, 0.0, 3.2], &[Face::PosY], 0.05, [90, 90, 90]),
        slab("cabinet", [-0.6, 0.4, 0.0], [0.6, 1.2, 0.4],
             &[Face::PosZ, Face::PosX, Face::NegX, Face::PosY], 0.02, brown),
        slab("handle_left", [-0.38, 0.97, 0.40], [-0.14, 1.03, 0.408],
             &[Face::PosZ], 0.02, steel),
        slab("handle_right", [0.14, 0.97, 0.40], [0.38, 1.03, 0.408],
             &[Face::PosZ], 0.02, steel),
        slab("knob_left", [-0.33, 0.60, 0.40], [-0.25, 0.68, 0.408],
             &[Face::PosZ], 0.02, dark),
        slab("knob_right", [0.25, 0.60, 0.40], [0.33, 0.68, 0.408],
             &[Face::PosZ], 0.02, dark),
        slab("cupboard", [1.3, 0.3, 0.0], [2.1, 1.5, 0.35],
             &[Face::PosZ, Face::PosX, Face::NegX, Face::PosY], 0.015, [150, 110, 70]),
        slab("cupboard_handle", [1.40, 0.80, 0.35], [1.46, 1.00, 0.358],
             &[Face::PosZ], 0.02, steel),
    ];

    let cabinet = vec!["cabinet", "handle_left", "handle_right", "knob_left", "knob_right"];
    let cab_center = [0.0, 0.8, 0.4];
    // drawer-face anchor between the handle bar and the knobs
    let below = [0.02, 0.86, 0.40];

    let good = |conf: f64| ("cabinet", Detection::Real { parts: cabinet.clone(), confidence: conf });
    let arc = |azimuth_deg: f64, height: f64, radius: f64| -> Vec3 {
        let a = azimuth_deg.to_radians();
        [cab_center[0] + radius * a.sin(), height, cab_center[2] + radius * a.cos()]
    };

    let both = Pointing::parts(&["handle_left", "handle_right"]);
    let sloppy = Pointing::parts(&["handle_left", "handle_right", "knob_left", "knob_right"])
        .with_patch("cabinet", below);
    let knob = Pointing::parts(&["knob_left"]);
    let knob_both = Pointing::parts(&["knob_left", "knob_right"]);
    let beneath = Pointing::patch("cabinet", below);
    let lookalike = Pointing::parts(&["cupboard_handle"]);

    let mut views = Vec::new();
    // nine good views on an arc; the top two scored ones misbehave slightly
    let good_specs: [(f64, f64, f64, [f64; 2], f64); 9] = [
        // azimuth, height, radius, aim offset (x, y), confidence
        (0.0,   1.00, 1.70, [0.16, 0.10], 0.78),
        (8.0,   1.10, 1.70, [-0.19, 0.13], 0.75),
        (-8.0,  1.05, 1.75, [0.22, -0.16], 0.71),
        (16.0,  0.95, 1.70, [-0.26, 0.19], 0.69),
        (-16.0, 1.15, 1.75, [0.29, 0.16], 0.67),
        (24.0,  1.00, 1.80, [-0.32, -0.19], 0.65),
        (-24.0, 1.10, 1.70, [0.35, 0.19], 0.63),
        (32.0,  1.05, 1.75, [-0.38, 0.22], 0.61),
        (-32.0, 0.95, 1.80, [0.42, -0.22], 0.60),
    ];
    for (i, (az, h, r, off, conf)) in good_specs.into_iter().enumerate() {
        let ids = ["v001", "v002", "v003", "v004", "v005", "v006", "v007", "v008", "v009"];
        // the two views that rank highest under the full score also carry a
        // stray point on the drawer face / the neighboring knob
        let handles = if i < 2 { sloppy.clone() } else { both.clone() };
        let knobs = if i < 2 { knob_both.clone() } else { knob.clone() };
        views.push(ViewSpec {
            view_id: ids[i],
            eye: arc(az, h, r),
            aim: [cab_center[0] + off[0], cab_center[1] + off[1], cab_center[2]],
            detections: vec![good(conf)],
            pointing: vec![("task_a1", handles), ("task_a2", knobs)],
        });
    }
    // two overconfident grazing views: the detector reports only a corner
    // sliver of the cabinet but with very high confidence
    for (view_id, eye, aim, center, conf) in [
        ("v010", [-1.75, 1.00, 0.75], [0.75, 0.90, 0.10], (70.0, 400.0), 0.95),
        ("v011", [1.75, 1.05, 0.80], [-0.80, 0.85, 0.10], (570.0, 400.0), 0.92),
    ] {
        views.push(ViewSpec {
            view_id,
            eye,
            aim,
            detections: vec![("cabinet", Detection::Blob { center, radius: 60.0, confidence: conf })],
            pointing: vec![("task_a1", beneath.clone()), ("task_a2", beneath.clone())],
        });
    }
    // two lookalike views: the cupboard sits dead center, detector is unsure
    for (view_id, eye, conf) in [
        ("v012", [1.70, 0.90, 1.85], 0.15),
        ("v013", [1.64, 0.95, 1.80], 0.14),
    ] {
        views.push(ViewSpec {
            view_id,
            eye,
            aim: [1.70, 0.90, 0.35],
            detections: vec![("cabinet", Detection::Rings { radius: 200.0, confidence: conf })],
            pointing: vec![("task_a1", lookalike.clone()), ("task_a2", lookalike.clone())],
        });
    }
    // two views of bare wall: the detector finds nothing
    for (view_id, eye, aim) in [
        ("v014", [-2.0, 1.3, 2.0], [-2.3, 1.4, 0.0]),
        ("v015", [2.2, 1.4, 2.4], [2.4, 1.6, 0.0]),
    ] {
        views.push(ViewSpec {
            view_id,
            eye,
            aim,
            detections: vec![("cabinet", Detection::Absent)],
            pointing: vec![("task_a1", Pointing::none()), ("task_a2", Pointing::none())],
        });
    }

    let tasks = vec![
        TaskSpec {
            task_id: "task_a1",
            description: "open the top drawer of the kitchen cabinet",
            chat_text: chat_json(
                &["locate the kitchen cabinet", "grasp the top drawer handles", "pull the drawer open"],
                "handles",
                &["cabinet", "top drawer", "handles"],
            ),
            functional: "handles",
            gt_parts: vec!["handle_left", "handle_right"],
        },
        TaskSpec {
            task_id: "task_a2",
            description: "rotate the left knob of the kitchen cabinet",
            chat_text: format!(
                "```json\n{}\n```",
                chat_json(
                    &["locate the kitchen cabinet", "grip the left knob", "rotate it clockwise"],
                    "knob",
                    &["cabinet", "left door", "knob"],
                )
            ),
            functional: "knob",
            gt_parts: vec!["knob_left"],
        },
    ];

    SceneSpec { scene_id: "scene_a", slabs, views, tasks }
}

#[rustfmt::skip]
fn scene_b() -> SceneSpec {
    let gray = [115, 118, 122];
    let wood = [150, 105, 65];
    let dark = [75, 55, 40];
    let steel = [185, 185, 195];
    let slabs = vec![
        slab("wall", [-3.0, 0.0, -0.05], [3.0, 2.4, 0.0], &[Face::PosZ], 0.05, gray),
        slab("floor", [-3.0, -0.05, -0.05], [3.0, 0.0, 3.2], &[Face::PosY], 0.05, [88, 88, 88]),
        slab("nightstand", [-0.4, 0.0, 0.0], [0.4, 0.55, 0.45],
             &[Face::PosZ, Face::PosX, Face::NegX, Face::PosY], 0.02, wood),
        slab("knob_one", [-0.19, 0.28, 0.45], [-0.11, 0.36, 0.458],
             &[Face::PosZ], 0.02, dark),
        slab("knob_two", [0.11, 0.28, 0.45], [0.19, 0.36, 0.458],
             &[Face::PosZ], 0.02, dark),
        slab("dresser", [1.2, 0.0, 0.0], [2.0, 0.9, 0.4],
             &[Face::PosZ, Face::PosX, Face::NegX, Face::PosY], 0.015, [145, 100, 70]),
        slab("dresser_knob", [1.56, 0.42, 0.40], [1.64, 0.50, 0.408],
             &[Face::PosZ], 0.02, dark),
        slab("door", [-2.0, 0.0, 0.0], [-1.1, 2.05, 0.08],
             &[Face::PosZ, Face::PosX, Face::NegX, Face::PosY], 0.015, [170, 140, 100]),
        slab("door_handle", [-1.30, 0.95, 0.08], [-1.22, 1.05, 0.088],
             &[Face::PosZ], 0.02, steel),
        slab("wardrobe", [-2.95, 0.0, 0.0], [-2.15, 2.0, 0.5],
             &[Face::PosZ, Face::PosX, Face::PosY], 0.015, [125, 95, 75]),
        slab("wardrobe_handle", [-2.32, 0.95, 0.50], [-2.24, 1.05, 0.508],
             &[Face::PosZ], 0.02, steel),
    ];

    let nightstand = vec!["nightstand", "knob_one", "knob_two"];
    let ns_center = [0.0, 0.3, 0.45];
    let ns_face = [0.03, 0.14, 0.45];

    let both = Pointing::parts(&["knob_one", "knob_two"]);
    let sloppy = both.clone().with_patch("nightstand", ns_face);
    let beneath = Pointing::patch("nightstand", ns_face);
    let lookalike = Pointing::parts(&["dresser_knob"]);
    let handle = Pointing::parts(&["door_handle"]);
    let confused = Pointing::parts(&["door_handle", "wardrobe_handle"]);

    let mut views = Vec::new();
    // seven good nightstand views
    let good_specs: [(f64, f64, f64, [f64; 2], f64); 7] = [
        (0.0,   0.85, 1.45, [0.13, 0.16], 0.77),
        (9.0,   0.90, 1.45, [-0.16, 0.19], 0.74),
        (-9.0,  0.80, 1.50, [0.19, -0.13], 0.70),
        (18.0,  0.95, 1.45, [-0.22, 0.16], 0.67),
        (-18.0, 0.85, 1.50, [0.26, 0.19], 0.64),
        (27.0,  0.90, 1.50, [-0.29, -0.16], 0.61),
        (-27.0, 0.80, 1.55, [0.32, 0.16], 0.59),
    ];
    for (i, (az, h, r, off, conf)) in good_specs.into_iter().enumerate() {
        let ids = ["v001", "v002", "v003", "v004", "v005", "v006", "v007"];
        let a = az.to_radians();
        views.push(ViewSpec {
            view_id: ids[i],
            eye: [ns_center[0] + r * a.sin(), h, ns_center[2] + r * a.cos()],
            aim: [ns_center[0] + off[0], ns_center[1] + off[1], ns_center[2]],
            detections: vec![
                ("nightstand", Detection::Real { parts: nightstand.clone(), confidence: conf }),
                ("door", Detection::Absent),
            ],
            pointing: vec![
                ("task_b3", if i < 2 { sloppy.clone() } else { both.clone() }),
                ("task_b4", Pointing::none()),
            ],
        });
    }
    // one overconfident grazing nightstand view
    views.push(ViewSpec {
        view_id: "v008",
        eye: [-1.45, 0.55, 0.70],
        aim: [0.70, 0.35, 0.20],
        detections: vec![
            ("nightstand", Detection::Blob { center: (80.0, 390.0), radius: 60.0, confidence: 0.95 }),
            ("door", Detection::Absent),
        ],
        pointing: vec![("task_b3", beneath.clone()), ("task_b4", Pointing::none())],
    });
    // two lookalike dresser views
    for (view_id, eye, conf) in [
        ("v009", [1.60, 0.70, 1.70], 0.15),
        ("v010", [1.54, 0.75, 1.65], 0.14),
    ] {
        views.push(ViewSpec {
            view_id,
            eye,
            aim: [1.60, 0.45, 0.40],
            detections: vec![
                ("nightstand", Detection::Rings { radius: 200.0, confidence: conf }),
                ("door", Detection::Absent),
            ],
            pointing: vec![("task_b3", lookalike.clone()), ("task_b4", Pointing::none())],
        });
    }
    // four door views; the last two stand back far enough that the wardrobe
    // and its lookalike handle are in frame too
    let door_specs: [(&'static str, Vec3, Vec3, f64, Pointing); 4] = [
        ("v011", [-1.45, 1.05, 1.70], [-1.49, 1.04, 0.08], 0.70, handle.clone()),
        ("v012", [-1.25, 1.00, 1.75], [-1.63, 1.06, 0.08], 0.67, handle.clone()),
        ("v013", [-1.30, 1.10, 2.30], [-1.90, 0.94, 0.08], 0.62, confused.clone()),
        ("v014", [-1.15, 0.95, 2.40], [-1.97, 1.08, 0.08], 0.58, confused.clone()),
    ];
    for (view_id, eye, aim, conf, pointing) in door_specs {
        views.push(ViewSpec {
            view_id,
            eye,
            aim,
            detections: vec![
                ("door", Detection::Real { parts: vec!["door", "door_handle"], confidence: conf }),
                ("nightstand", Detection::Absent),
            ],
            pointing: vec![("task_b4", pointing), ("task_b3", Pointing::none())],
        });
    }
    // one empty view of bare wall
    views.push(ViewSpec {
        view_id: "v015",
        eye: [2.6, 1.4, 2.4],
        aim: [2.8, 1.5, 0.0],
        detections: vec![("nightstand", Detection::Absent), ("door", Detection::Absent)],
        pointing: vec![("task_b3", Pointing::none()), ("task_b4", Pointing::none())],
    });

    let tasks = vec![
        TaskSpec {
            task_id: "task_b3",
            description: "open the bottom drawer of the nightstand",
            chat_text: format!(
                "Here is the breakdown you asked for. {}",
                chat_json(
                    &["walk to the nightstand", "pinch the drawer knobs", "pull the drawer out"],
                    "knobs",
                    &["nightstand", "bottom drawer", "knobs"],
                )
            ),
            functional: "knobs",
            gt_parts: vec!["knob_one", "knob_two"],
        },
        TaskSpec {
            task_id: "task_b4",
            description: "close the bedroom door",
            chat_text: chat_json(
                &["walk to the door", "grip the handle", "push the door shut"],
                "handle",
                &["handle", "door"], // reversed on purpose
            ),
            functional: "handle",
            gt_parts: vec!["door_handle"],
        },
    ];

    SceneSpec { scene_id: "scene_b", slabs, views, tasks }
}

// ---- generation -------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct SynthReport {
    pub dataset_root: PathBuf,
    pub fixture_dir: PathBuf,
    pub config_path: PathBuf,
    pub grid_paths: Vec<PathBuf>,
    pub scenes: usize,
    pub views: usize,
    pub tasks: usize,
    pub points: usize,
    pub fixtures: usize,
}

struct BuiltScene {
    spec: SceneSpec,
    points: Vec<Vec3>,
    /// Part name -> index range in `points`.
    part_ranges: BTreeMap<&'static str, Range<u32>>,
    cameras: Vec<Camera>,
    renders: Vec<Render>,
    color_bytes: Vec<Vec<u8>>,
}

/// Parts that sit on another slab's front (+z) face: the part's back plane
/// coincides with the host's front plane inside its footprint.
fn mounts(slabs: &[Slab]) -> BTreeMap<&'static str, &'static str> {
    let mut map = BTreeMap::new();
    for part in slabs {
        for host in slabs {
            if std::ptr::eq(part, host) {
                continue;
            }
            let on_front = (part.min[2] - host.max[2]).abs() < 1e-9;
            let inside = part.min[0] >= host.min[0]
                && part.max[0] <= host.max[0]
                && part.min[1] >= host.min[1]
                && part.max[1] <= host.max[1];
            if on_front && inside {
                map.insert(part.part, host.part);
            }
        }
    }
    map
}

fn build_scene(spec: SceneSpec) -> Result<BuiltScene, SynthError> {
    let mounted = mounts(&spec.slabs);
    // sample the cloud part by part, deduplicating exact duplicates within a
    // part and carving clearance around mounted parts out of their host face
    let mut points = Vec::new();
    let mut part_ranges = BTreeMap::new();
    for s in &spec.slabs {
        let carve: Vec<&Slab> = spec
            .slabs
            .iter()
            .filter(|p| mounted.get(p.part) == Some(&s.part))
            .collect();
        let start = points.len() as u32;
        let mut raw = Vec::new();
        for &face in &s.faces {
            sample_face(s, face, &mut raw);
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in raw {
            let occupied = (p[2] - s.max[2]).abs() < 1e-9
                && carve.iter().any(|c| {
                    p[0] >= c.min[0] - MOUNT_CLEARANCE
                        && p[0] <= c.max[0] + MOUNT_CLEARANCE
                        && p[1] >= c.min[1] - MOUNT_CLEARANCE
                        && p[1] <= c.max[1] + MOUNT_CLEARANCE
                });
            if occupied {
                continue;
            }
            if seen.insert([p[0].to_bits(), p[1].to_bits(), p[2].to_bits()]) {
                points.push(p);
            }
        }
        let range = start..points.len() as u32;
        if part_ranges.insert(s.part, range).is_some() {
            return Err(SynthError::Construction(format!(
                "duplicate part {} in scene {}",
                s.part, spec.scene_id
            )));
        }
    }

    let mut cameras = Vec::new();
    let mut renders = Vec::new();
    let mut color_bytes = Vec::new();
    let color_of: BTreeMap<&str, [u8; 3]> = spec.slabs.iter().map(|s| (s.part, s.color)).collect();
    for view in &spec.views {
        let camera = look_at(view.eye, view.aim);
        let r = render(&camera, &spec.slabs);
        let mut rgb: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::new(WIDTH, HEIGHT);
        for y in 0..HEIGHT {
            for x in 0..WIDTH {
                let px = match r.part_at(x, y) {
                    Some(part) => color_of[part],
                    None => [20, 22, 28],
                };
                rgb.put_pixel(x, y, Rgb(px));
            }
        }
        let mut bytes = Vec::new();
        DynamicImage::ImageRgb8(rgb)
            .write_to(
                &mut std::io::Cursor::new(&mut bytes),
                image::ImageFormat::Png,
            )
            .map_err(|e| SynthError::Encode(e.to_string()))?;
        cameras.push(camera);
        renders.push(r);
        color_bytes.push(bytes);
    }

    Ok(BuiltScene {
        spec,
        points,
        part_ranges,
        cameras,
        renders,
        color_bytes,
    })
}

impl BuiltScene {
    fn part_pixels(&self, view_index: usize, parts: &[&'static str]) -> Vec<(u32, u32)> {
        let r = &self.renders[view_index];
        let mut pixels = Vec::new();
        for y in 0..HEIGHT {
            for x in 0..WIDTH {
                if let Some(part) = r.part_at(x, y) {
                    if parts.contains(&part) {
                        pixels.push((x, y));
                    }
                }
            }
        }
        pixels
    }

    /// The projected center-front pixel of a part, for pointing prompts.
    fn part_prompt(&self, view_index: usize, part: &'static str) -> Result<(u32, u32), SynthError> {
        let s = self
            .spec
            .slabs
            .iter()
            .find(|s| s.part == part)
            .ok_or_else(|| SynthError::Construction(format!("unknown part {part}")))?;
        let center = [
            (s.min[0] + s.max[0]) / 2.0,
            (s.min[1] + s.max[1]) / 2.0,
            s.max[2],
        ];
        let camera = &self.cameras[view_index];
        let (x, y) = self.visible_pixel(camera, center, view_index, part)?;
        if self.renders[view_index].part_at(x, y) != Some(part) {
            return Err(SynthError::Construction(format!(
                "part {part} center not visible in view {} (hit {:?})",
                self.spec.views[view_index].view_id,
                self.renders[view_index].part_at(x, y)
            )));
        }
        Ok((x, y))
    }

    /// Project a world point and require it to land in frame.
    fn visible_pixel(
        &self,
        camera: &Camera,
        point: Vec3,
        view_index: usize,
        label: &str,
    ) -> Result<(u32, u32), SynthError> {
        let (u, v) = camera.project(point).ok_or_else(|| {
            SynthError::Construction(format!(
                "{label} behind camera in view {}",
                self.spec.views[view_index].view_id
            ))
        })?;
        if u < 0 || v < 0 || u >= WIDTH as i64 || v >= HEIGHT as i64 {
            return Err(SynthError::Construction(format!(
                "{label} projects off-frame ({u}, {v}) in view {}",
                self.spec.views[view_index].view_id
            )));
        }
        Ok((u as u32, v as u32))
    }

    #[allow(clippy::type_complexity)]
    fn patch_prompt(
        &self,
        view_index: usize,
        host: &'static str,
        anchor: Vec3,
    ) -> Result<((u32, u32), Vec<(u32, u32)>), SynthError> {
        let camera = &self.cameras[view_index];
        let (px, py) = self.visible_pixel(camera, anchor, view_index, "patch anchor")?;
        let r = &self.renders[view_index];
        if r.part_at(px, py) != Some(host) {
            return Err(SynthError::Construction(format!(
                "patch anchor not on {host} in view {} (hit {:?})",
                self.spec.views[view_index].view_id,
                r.part_at(px, py)
            )));
        }
        let mut pixels = Vec::new();
        for dy in -PATCH_HALF..=PATCH_HALF {
            for dx in -PATCH_HALF..=PATCH_HALF {
                let (x, y) = (px as i64 + dx, py as i64 + dy);
                if x < 0 || y < 0 || x >= WIDTH as i64 || y >= HEIGHT as i64 {
                    continue;
                }
                let (x, y) = (x as u32, y as u32);
                if r.part_at(x, y) == Some(host) {
                    pixels.push((x, y));
                }
            }
        }
        Ok(((px, py), pixels))
    }
}

/// Centered concentric rings with thickness falling off as 1/r: each radial
/// band carries roughly the same pixel mass, so the distance histogram over
/// [0, radius] is close to uniform, and the pattern is rotationally symmetric.
fn ring_pixels(radius: f64) -> Vec<(u32, u32)> {
    let period = 6.0;
    let mass = 170.0;
    let mut pixels = Vec::new();
    for y in 0..HEIGHT {
        for x in 0..WIDTH {
            let dx = x as f64 + 0.5 - CX;
            let dy = y as f64 + 0.5 - CY;
            let r = (dx * dx + dy * dy).sqrt();
            if r > radius {
                continue;
            }
            let thickness = (mass / r.max(6.0)).min(period);
            if r % period < thickness {
                pixels.push((x, y));
            }
        }
    }
    pixels
}

fn disk_pixels(center: (f64, f64), radius: f64) -> Vec<(u32, u32)> {
    let mut pixels = Vec::new();
    let r2 = radius * radius;
    for y in 0..HEIGHT {
        for x in 0..WIDTH {
            let dx = x as f64 + 0.5 - center.0;
            let dy = y as f64 + 0.5 - center.1;
            if dx * dx + dy * dy <= r2 {
                pixels.push((x, y));
            }
        }
    }
    pixels
}

fn normalized_for(pixel: (u32, u32)) -> NormalizedPoint {
    NormalizedPoint {
        x: pixel.0 as f64 / WIDTH as f64,
        y: pixel.1 as f64 / HEIGHT as f64,
    }
}

fn write_scene_files(root: &Path, built: &BuiltScene) -> Result<(), SynthError> {
    let scene_dir = root.join("scenes").join(built.spec.scene_id);
    let color_dir = scene_dir.join("color");
    let depth_dir = scene_dir.join("depth");
    std::fs::create_dir_all(&color_dir).map_err(io_err(&color_dir))?;
    std::fs::create_dir_all(&depth_dir).map_err(io_err(&depth_dir))?;

    let cloud = crate::scene::PointCloud {
        scene_id: built.spec.scene_id.to_string(),
        points: built.points.clone(),
    };
    let cloud_path = scene_dir.join("cloud.ply");
    crate::scene::write_point_cloud(
        &cloud_path,
        &cloud,
        crate::scene::PlyFormat::BinaryLittleEndian,
    )
    .map_err(|e| SynthError::Construction(e.to_string()))?;

    let mut view_records = Vec::new();
    for (i, view) in built.spec.views.iter().enumerate() {
        let color_rel = format!("color/{}.png", view.view_id);
        let depth_rel = format!("depth/{}.png", view.view_id);
        let color_path = scene_dir.join(&color_rel);
        std::fs::write(&color_path, &built.color_bytes[i]).map_err(io_err(&color_path))?;

        let mut depth_png: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(WIDTH, HEIGHT);
        for y in 0..HEIGHT {
            for x in 0..WIDTH {
                let meters = built.renders[i].depth[Render::index(x, y)];
                let raw = if meters > 0.0 {
                    (meters / DEPTH_SCALE).round().clamp(1.0, 65535.0) as u16
                } else {
                    0
                };
                depth_png.put_pixel(x, y, Luma([raw]));
            }
        }
        let depth_path = scene_dir.join(&depth_rel);
        DynamicImage::ImageLuma16(depth_png)
            .save(&depth_path)
            .map_err(|e| SynthError::Encode(e.to_string()))?;

        let camera = &built.cameras[i];
        let pose =
            CameraPose::from_matrix4(&camera.pose_matrix()).map_err(SynthError::Construction)?;
        view_records.push(ViewRecord {
            view_id: view.view_id.to_string(),
            color: color_rel,
            depth: depth_rel,
            intrinsics: IntrinsicsRecord {
                fx: FX,
                fy: FY,
                cx: CX,
                cy: CY,
                width: WIDTH,
                height: HEIGHT,
            },
            pose_c2w: pose.to_matrix4().to_vec(),
            image_to_depth_scale: None,
        });
    }

    let manifest = SceneManifest {
        scene_id: built.spec.scene_id.to_string(),
        point_cloud: "cloud.ply".to_string(),
        depth_scale: Some(DEPTH_SCALE),
        views: view_records,
    };
    let manifest_path = scene_dir.join("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_vec_pretty(&manifest).map_err(|e| SynthError::Encode(e.to_string()))?,
    )
    .map_err(io_err(&manifest_path))?;
    Ok(())
}

fn write_fixtures_for_scene(
    fixture_dir: &Path,
    built: &BuiltScene,
    prompt: &PromptTemplate,
    fixtures: &mut usize,
) -> Result<Vec<TaskRecord>, SynthError> {
    // chat fixtures, one per task
    let mut task_records = Vec::new();
    for task in &built.spec.tasks {
        let request = build_prompt(prompt, task.description)
            .map_err(|e| SynthError::Construction(e.to_string()))?;
        write_fixture(
            fixture_dir,
            &request,
            &ChatResponse {
                text: task.chat_text.clone(),
            },
        )?;
        *fixtures += 1;

        let mut gt = Vec::new();
        for part in &task.gt_parts {
            let range = built
                .part_ranges
                .get(part)
                .ok_or_else(|| SynthError::Construction(format!("no part {part}")))?;
            gt.extend(range.clone());
        }
        task_records.push(TaskRecord {
            scene_id: built.spec.scene_id.to_string(),
            description: task.description.to_string(),
            gt_point_indices: Some(gt),
        });
    }

    for (i, view) in built.spec.views.iter().enumerate() {
        let image_png = built.color_bytes[i].clone();

        // detection fixtures per query object
        for (query, detection) in &view.detections {
            let response = match detection {
                Detection::Real { parts, confidence } => {
                    let pixels = built.part_pixels(i, parts);
                    if pixels.is_empty() {
                        return Err(SynthError::Construction(format!(
                            "parts {parts:?} invisible in view {} of {}",
                            view.view_id, built.spec.scene_id
                        )));
                    }
                    DetectSegmentResponse {
                        masks: vec![MaskDetection {
                            rle: RleMask::from_pixels(WIDTH, HEIGHT, pixels)
                                .map_err(|e| SynthError::Construction(e.to_string()))?,
                            score: *confidence,
                        }],
                    }
                }
                Detection::Blob {
                    center,
                    radius,
                    confidence,
                } => DetectSegmentResponse {
                    masks: vec![MaskDetection {
                        rle: RleMask::from_pixels(WIDTH, HEIGHT, disk_pixels(*center, *radius))
                            .map_err(|e| SynthError::Construction(e.to_string()))?,
                        score: *confidence,
                    }],
                },
                Detection::Rings { radius, confidence } => DetectSegmentResponse {
                    masks: vec![MaskDetection {
                        rle: RleMask::from_pixels(WIDTH, HEIGHT, ring_pixels(*radius))
                            .map_err(|e| SynthError::Construction(e.to_string()))?,
                        score: *confidence,
                    }],
                },
                Detection::Absent => DetectSegmentResponse { masks: Vec::new() },
            };
            write_fixture(
                fixture_dir,
                &DetectSegmentRequest {
                    image_png: image_png.clone(),
                    query: (*query).to_string(),
                },
                &response,
            )?;
            *fixtures += 1;
        }

        // pointing + segmentation fixtures per task
        for (task_id, pointing) in &view.pointing {
            let task = built
                .spec
                .tasks
                .iter()
                .find(|t| t.task_id == *task_id)
                .ok_or_else(|| SynthError::Construction(format!("unknown task {task_id}")))?;
            let query = build_point_query(task.functional, task.description, false);
            let point_request = PointRequest {
                image_png: image_png.clone(),
                query: query.clone(),
            };
            let mut points = Vec::new();
            let mut mask_pixels = Vec::new();
            for part in &pointing.parts {
                points.push(normalized_for(built.part_prompt(i, part)?));
            }
            mask_pixels.extend(built.part_pixels(i, &pointing.parts));
            if let Some((host, anchor)) = &pointing.patch {
                let (pixel, patch) = built.patch_prompt(i, host, *anchor)?;
                points.push(normalized_for(pixel));
                mask_pixels.extend(patch);
            }
            write_fixture(
                fixture_dir,
                &point_request,
                &PointResponse {
                    points: points.clone(),
                },
            )?;
            *fixtures += 1;

            if !points.is_empty() {
                let prompt_pixels: Vec<(u32, u32)> = points
                    .iter()
                    .map(|p| denormalize_point(p.x, p.y, WIDTH, HEIGHT))
                    .collect();
                let mask = RleMask::from_pixels(WIDTH, HEIGHT, mask_pixels)
                    .map_err(|e| SynthError::Construction(e.to_string()))?;
                for &(x, y) in &prompt_pixels {
                    if !mask.contains(x, y) {
                        return Err(SynthError::Construction(format!(
                            "prompt ({x}, {y}) outside mask in view {} of {} for {}",
                            view.view_id, built.spec.scene_id, task_id
                        )));
                    }
                }
                write_fixture(
                    fixture_dir,
                    &SegmentPointsRequest {
                        image_png: image_png.clone(),
                        points: prompt_pixels,
                    },
                    &SegmentPointsResponse { mask },
                )?;
                *fixtures += 1;
            }
        }
    }

    Ok(task_records)
}

/// Generate the bundled demo dataset, fixtures, config and sweep grids under
/// `root`. The result is self-contained: point the CLI at the written config.
pub fn generate(root: &Path) -> Result<SynthReport, SynthError> {
    let dataset_root = root.join("dataset");
    let fixture_dir = root.join("fixtures");
    let cache_dir = root.join("cache");
    let grids_dir = root.join("grids");
    for dir in [&dataset_root, &fixture_dir, &cache_dir, &grids_dir] {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }

    let prompt = PromptTemplate::default_template();
    let mut fixtures = 0usize;
    let mut all_tasks = Vec::new();
    let mut views = 0usize;
    let mut points = 0usize;

    for spec in [scene_a(), scene_b()] {
        let built = build_scene(spec)?;
        views += built.spec.views.len();
        points += built.points.len();
        write_scene_files(&dataset_root, &built)?;
        all_tasks.extend(write_fixtures_for_scene(
            &fixture_dir,
            &built,
            &prompt,
            &mut fixtures,
        )?);
    }

    let tasks_path = dataset_root.join("tasks.json");
    std::fs::write(
        &tasks_path,
        serde_json::to_vec_pretty(&all_tasks).map_err(|e| SynthError::Encode(e.to_string()))?,
    )
    .map_err(io_err(&tasks_path))?;

    let config = PipelineConfig {
        dataset_root: dataset_root.clone(),
        cache_dir,
        backend: BackendConfig::Fixtures {
            dir: fixture_dir.clone(),
        },
        depth_scale: DEPTH_SCALE,
        ..PipelineConfig::default()
    };
    let config_path = root.join("config.toml");
    std::fs::write(
        &config_path,
        toml::to_string_pretty(&config).map_err(|e| SynthError::Encode(e.to_string()))?,
    )
    .map_err(io_err(&config_path))?;

    let lambda_grid = serde_json::json!({
        "lambdas": [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.5, 0.5],
            [0.5, 0.25, 0.25],
        ],
        "views": [3],
        "taus": [0.7],
    });
    let views_grid = serde_json::json!({
        "views": [2, 10, 50],
        "taus": [0.1, 0.3, 0.5, 0.7, 0.9],
    });
    let mut grid_paths = Vec::new();
    for (name, grid) in [
        ("lambda_grid.json", lambda_grid),
        ("views_grid.json", views_grid),
    ] {
        let path = grids_dir.join(name);
        std::fs::write(
            &path,
            serde_json::to_vec_pretty(&grid).map_err(|e| SynthError::Encode(e.to_string()))?,
        )
        .map_err(io_err(&path))?;
        grid_paths.push(path);
    }

    Ok(SynthReport {
        dataset_root,
        fixture_dir,
        config_path,
        grid_paths,
        scenes: 2,
        views,
        tasks: all_tasks.len(),
        points,
        fixtures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_samples_are_centered_cells() {
        let xs = axis_samples(0.0, 1.0, 0.3);
        assert_eq!(xs.len(), 4);
        // first and last sit half a cell inside the span
        assert!((xs[0] - 0.125).abs() < 1e-12);
        assert!((xs[3] - 0.875).abs() < 1e-12);
        for w in xs.windows(2) {
            assert!(w[1] - w[0] <= 0.3 + 1e-12);
        }
    }

    #[test]
    fn look_at_pose_is_orthonormal_and_faces_target() {
        let camera = look_at([0.0, 1.0, 2.0], [0.0, 1.0, 0.0]);
        let pose = CameraPose::from_matrix4(&camera.pose_matrix()).unwrap();
        // a point straight ahead projects to the image center
        let (u, v) = camera.project([0.0, 1.0, 0.0]).unwrap();
        assert_eq!((u, v), (CX as i64, CY as i64));
        // and the camera-to-world pose maps the canonical forward ray onto it
        let world = pose.camera_to_world([0.0, 0.0, 2.0]);
        for (a, b) in world.iter().zip([0.0, 1.0, 0.0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn renderer_depth_matches_projection() {
        let slabs = vec![slab(
            "panel",
            [-1.0, 0.0, -0.05],
            [1.0, 2.0, 0.0],
            &[Face::PosZ],
            0.05,
            [1, 2, 3],
        )];
        let camera = look_at([0.0, 1.0, 1.5], [0.0, 1.0, 0.0]);
        let render = render(&camera, &slabs);
        let center = Render::index(WIDTH / 2, HEIGHT / 2);
        assert_eq!(render.part[center], Some("panel"));
        assert!((render.depth[center] - 1.5).abs() < 0.01);
    }
}
