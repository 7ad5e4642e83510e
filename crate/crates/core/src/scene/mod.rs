//! Scene ingestion: point clouds, posed RGBD views, task records.
//!
//! Everything loaded here is immutable afterwards and safe to share across
//! concurrent pipeline stages. Point indices are load-order stable; ground
//! truth masks reference them, so nothing may ever reorder `PointCloud::points`.

mod depth;
mod manifest;
mod ply;

pub use depth::{load_depth_png, DepthMap};
pub use manifest::{load_scene, IntrinsicsRecord, SceneManifest, ViewRecord};
pub use ply::{read_point_cloud, write_colored_point_cloud, write_point_cloud, PlyFormat};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{determinant, mat_t_vec, mat_vec, orthonormality_error, Mat3, Vec3};

const ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("ply error in {path}: {source}")]
    Ply {
        path: PathBuf,
        #[source]
        source: ply::PlyError,
    },
    #[error("depth image {path}: {message}")]
    Depth { path: PathBuf, message: String },
    #[error(
        "view {view_id}: depth is {got_width}x{got_height} but intrinsics declare \
         {want_width}x{want_height} (image_to_depth_scale {scale})"
    )]
    DepthSizeMismatch {
        view_id: String,
        got_width: u32,
        got_height: u32,
        want_width: u32,
        want_height: u32,
        scale: f64,
    },
    #[error(
        "view {view_id}: color image is {got_width}x{got_height} but intrinsics declare {want_width}x{want_height}"
    )]
    ColorSizeMismatch {
        view_id: String,
        got_width: u32,
        got_height: u32,
        want_width: u32,
        want_height: u32,
    },
    #[error("invalid intrinsics for view {view_id}: {message}")]
    InvalidIntrinsics { view_id: String, message: String },
    #[error("invalid pose for view {view_id}: {message}")]
    InvalidPose { view_id: String, message: String },
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("task file {path}: {message}")]
    TaskFile { path: PathBuf, message: String },
    #[error("task \"{description}\" references gt point {index} but scene {scene_id} has {point_count} points")]
    GtIndexOutOfRange {
        scene_id: String,
        description: String,
        index: u32,
        point_count: usize,
    },
    #[error("point cloud {path} has no points")]
    EmptyCloud { path: PathBuf },
}

/// The scene geometry: indexed 3D points in meters.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub scene_id: String,
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn point_count(&self) -> usize {
        self.points.len()
    }
}

/// Pinhole intrinsics, including the image size they are expressed at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(format!(
                "image size must be positive, got {}x{}",
                self.width, self.height
            ));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64) {
            return Err(format!("cx {} outside [0, {})", self.cx, self.width));
        }
        if !(0.0 <= self.cy && self.cy < self.height as f64) {
            return Err(format!("cy {} outside [0, {})", self.cy, self.height));
        }
        Ok(())
    }

    /// Intrinsics rescaled by `factor` (e.g. 0.5 maps full-res RGB intrinsics
    /// to a half-res depth grid).
    pub fn scaled(&self, factor: f64) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.fx * factor,
            fy: self.fy * factor,
            cx: self.cx * factor,
            cy: self.cy * factor,
            width: (self.width as f64 * factor).round() as u32,
            height: (self.height as f64 * factor).round() as u32,
        }
    }
}

/// Camera-to-world pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    /// Row-major orthonormal rotation.
    pub rotation: Mat3,
    /// Translation in meters.
    pub translation: Vec3,
}

impl CameraPose {
    pub fn validate(&self) -> Result<(), String> {
        for row in &self.rotation {
            for v in row {
                if !v.is_finite() {
                    return Err("rotation has non-finite entries".into());
                }
            }
        }
        for v in &self.translation {
            if !v.is_finite() {
                return Err("translation has non-finite entries".into());
            }
        }
        let err = orthonormality_error(&self.rotation);
        if err > ROTATION_TOLERANCE {
            return Err(format!(
                "rotation not orthonormal (max deviation {err:.3e})"
            ));
        }
        let det = determinant(&self.rotation);
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(format!("rotation determinant {det} != +1"));
        }
        Ok(())
    }

    /// From a flattened row-major 4x4 camera-to-world matrix.
    pub fn from_matrix4(m: &[f64]) -> Result<Self, String> {
        if m.len() != 16 {
            return Err(format!("pose matrix must have 16 entries, got {}", m.len()));
        }
        let pose = CameraPose {
            rotation: [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]],
            translation: [m[3], m[7], m[11]],
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn to_matrix4(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1],
            r[2][2], t[2], 0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn camera_to_world(&self, p_cam: Vec3) -> Vec3 {
        let r = mat_vec(&self.rotation, p_cam);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    pub fn world_to_camera(&self, p_world: Vec3) -> Vec3 {
        mat_t_vec(
            &self.rotation,
            [
                p_world[0] - self.translation[0],
                p_world[1] - self.translation[1],
                p_world[2] - self.translation[2],
            ],
        )
    }
}

/// One posed RGBD frame. Depth decodes lazily; dimensions are validated at load.
#[derive(Debug, Clone)]
pub struct View {
    pub view_id: String,
    pub color_path: PathBuf,
    pub depth_path: PathBuf,
    /// Intrinsics at the resolution of the color image.
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
    /// Multiply color-resolution intrinsics by this to get the depth grid.
    pub image_to_depth_scale: f64,
}

impl View {
    /// Validate paths, intrinsics, pose and the depth/intrinsics size contract.
    pub fn load(
        view_id: String,
        color_path: PathBuf,
        depth_path: PathBuf,
        intrinsics: CameraIntrinsics,
        pose: CameraPose,
        image_to_depth_scale: f64,
    ) -> Result<Self, SceneError> {
        intrinsics
            .validate()
            .map_err(|message| SceneError::InvalidIntrinsics {
                view_id: view_id.clone(),
                message,
            })?;
        pose.validate().map_err(|message| SceneError::InvalidPose {
            view_id: view_id.clone(),
            message,
        })?;
        let view = View {
            view_id,
            color_path,
            depth_path,
            intrinsics,
            pose,
            image_to_depth_scale,
        };
        let (got_w, got_h) = depth::png_dimensions(&view.depth_path)?;
        let want = view.depth_intrinsics();
        if (got_w, got_h) != (want.width, want.height) {
            return Err(SceneError::DepthSizeMismatch {
                view_id: view.view_id.clone(),
                got_width: got_w,
                got_height: got_h,
                want_width: want.width,
                want_height: want.height,
                scale: view.image_to_depth_scale,
            });
        }
        let (color_w, color_h) = depth::png_dimensions(&view.color_path)?;
        if (color_w, color_h) != (view.intrinsics.width, view.intrinsics.height) {
            return Err(SceneError::ColorSizeMismatch {
                view_id: view.view_id.clone(),
                got_width: color_w,
                got_height: color_h,
                want_width: view.intrinsics.width,
                want_height: view.intrinsics.height,
            });
        }
        Ok(view)
    }

    /// Intrinsics at depth resolution; lifting operates on this grid.
    pub fn depth_intrinsics(&self) -> CameraIntrinsics {
        if self.image_to_depth_scale == 1.0 {
            self.intrinsics
        } else {
            self.intrinsics.scaled(self.image_to_depth_scale)
        }
    }

    /// Decode the depth PNG into meters. Raw zeros become invalid pixels.
    pub fn load_depth(&self, depth_scale: f64) -> Result<DepthMap, SceneError> {
        load_depth_png(&self.depth_path, depth_scale)
    }

    /// Raw bytes of the color image as sent to backends.
    pub fn load_color_bytes(&self) -> Result<Vec<u8>, SceneError> {
        std::fs::read(&self.color_path).map_err(|source| SceneError::Io {
            path: self.color_path.clone(),
            source,
        })
    }
}

/// A fully loaded scene.
#[derive(Debug)]
pub struct Scene {
    pub scene_id: String,
    pub cloud: PointCloud,
    pub views: Vec<View>,
    /// Converts raw depth values to meters (e.g. 0.001 for millimeter PNGs).
    pub depth_scale: f64,
    /// Digest of the manifest file, used in cache keys.
    pub manifest_digest: String,
    /// Digest of the point cloud file, used in cache keys.
    pub cloud_digest: String,
}

impl Scene {
    pub fn view(&self, view_id: &str) -> Option<&View> {
        self.views.iter().find(|v| v.view_id == view_id)
    }
}

/// One task description with optional ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskRecord {
    pub scene_id: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_point_indices: Option<Vec<u32>>,
}

impl TaskRecord {
    /// Check gt indices against the cloud they refer to.
    pub fn validate_against(&self, cloud: &PointCloud) -> Result<(), SceneError> {
        if let Some(gt) = &self.gt_point_indices {
            for &index in gt {
                if index as usize >= cloud.point_count() {
                    return Err(SceneError::GtIndexOutOfRange {
                        scene_id: self.scene_id.clone(),
                        description: self.description.clone(),
                        index,
                        point_count: cloud.point_count(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Sorted, deduplicated ground truth indices, if present.
    pub fn gt_sorted(&self) -> Option<Vec<u32>> {
        self.gt_point_indices.as_ref().map(|gt| {
            let mut v = gt.clone();
            v.sort_unstable();
            v.dedup();
            v
        })
    }
}

/// Load and validate a task file: a JSON array of task records.
pub fn load_task_file(path: &Path) -> Result<Vec<TaskRecord>, SceneError> {
    let bytes = std::fs::read(path).map_err(|source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let records: Vec<TaskRecord> =
        serde_json::from_slice(&bytes).map_err(|e| SceneError::TaskFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    for (i, record) in records.iter().enumerate() {
        if record.description.trim().is_empty() {
            return Err(SceneError::TaskFile {
                path: path.to_path_buf(),
                message: format!("record {i} has an empty description"),
            });
        }
        if record.scene_id.is_empty() {
            return Err(SceneError::TaskFile {
                path: path.to_path_buf(),
                message: format!("record {i} has an empty scene_id"),
            });
        }
    }
    Ok(records)
}
