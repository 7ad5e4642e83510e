//! Deterministic engine for 3D functionality segmentation.
//!
//! Given a scene point cloud, posed RGBD views and a natural-language task
//! description, the pipeline:
//!
//! 1. parses the description with a chat LLM into a functional object (the
//!    part to segment) and a contextual object (the larger object that hosts
//!    it),
//! 2. segments the contextual object in every view and ranks views by a
//!    visibility score combining detector confidence with the polar
//!    distribution of the mask around the image center,
//! 3. queries a pointing model on the selected views and turns its points into
//!    2D masks with a promptable segmentor,
//! 4. lifts those masks onto the point cloud, accumulates multi-view agreement
//!    counts into a heatmap, and thresholds it into the final 3D mask,
//! 5. scores predictions against ground truth (AP/AR at IoU thresholds, mIoU)
//!    and runs hyperparameter sweeps with per-stage caching.
//!
//! Model inference happens behind [`backends::InferenceBackend`]: either HTTP
//! services or a fixture store that replays canned responses byte-identically,
//! which keeps whole runs reproducible without any model in the loop.

pub mod backends;
pub mod cache;
pub mod config;
pub mod evaluation;
pub mod functional_seg;
pub mod geom;
pub mod lifting;
pub mod masks;
pub mod parallel;
pub mod pipeline;
pub mod scene;
pub mod synth;
pub mod task_parsing;
pub mod view_selection;
