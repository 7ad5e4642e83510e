//! Scene manifest: one JSON file per scene listing the point cloud and its
//! posed views. Poses are flattened row-major 4x4 camera-to-world matrices.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{read_point_cloud, CameraIntrinsics, CameraPose, Scene, SceneError, View};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntrinsicsRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewRecord {
    pub view_id: String,
    /// Path to the RGB image, relative to the manifest.
    pub color: String,
    /// Path to the 16-bit depth PNG, relative to the manifest.
    pub depth: String,
    pub intrinsics: IntrinsicsRecord,
    /// Flattened row-major 4x4 camera-to-world matrix.
    pub pose_c2w: Vec<f64>,
    /// Optional factor mapping color-resolution intrinsics to the depth grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_to_depth_scale: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneManifest {
    pub scene_id: String,
    /// Path to the PLY point cloud, relative to the manifest.
    pub point_cloud: String,
    /// Raw-to-meters conversion for depth PNGs; overrides the engine default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_scale: Option<f64>,
    pub views: Vec<ViewRecord>,
}

/// Load a scene directory containing `manifest.json`.
///
/// Views are validated (intrinsics, pose, depth dimensions) but depth pixels
/// and color bytes stay on disk until a stage needs them.
pub fn load_scene(scene_dir: &Path, default_depth_scale: f64) -> Result<Scene, SceneError> {
    let manifest_path = scene_dir.join("manifest.json");
    let bytes = std::fs::read(&manifest_path).map_err(|source| SceneError::Io {
        path: manifest_path.clone(),
        source,
    })?;
    let manifest: SceneManifest =
        serde_json::from_slice(&bytes).map_err(|e| SceneError::Manifest {
            path: manifest_path.clone(),
            message: e.to_string(),
        })?;
    let manifest_digest = hex::encode(Sha256::digest(&bytes));

    let cloud_path = scene_dir.join(&manifest.point_cloud);
    let cloud_bytes = std::fs::read(&cloud_path).map_err(|source| SceneError::Io {
        path: cloud_path.clone(),
        source,
    })?;
    let cloud_digest = hex::encode(Sha256::digest(&cloud_bytes));
    let cloud = read_point_cloud(&cloud_path, &manifest.scene_id)?;

    let mut views = Vec::with_capacity(manifest.views.len());
    let mut seen = std::collections::HashSet::new();
    for record in &manifest.views {
        if !seen.insert(record.view_id.clone()) {
            return Err(SceneError::Manifest {
                path: manifest_path.clone(),
                message: format!("duplicate view_id {}", record.view_id),
            });
        }
        let intrinsics = CameraIntrinsics {
            fx: record.intrinsics.fx,
            fy: record.intrinsics.fy,
            cx: record.intrinsics.cx,
            cy: record.intrinsics.cy,
            width: record.intrinsics.width,
            height: record.intrinsics.height,
        };
        let pose = CameraPose::from_matrix4(&record.pose_c2w).map_err(|message| {
            SceneError::InvalidPose {
                view_id: record.view_id.clone(),
                message,
            }
        })?;
        views.push(View::load(
            record.view_id.clone(),
            scene_dir.join(&record.color),
            scene_dir.join(&record.depth),
            intrinsics,
            pose,
            record.image_to_depth_scale.unwrap_or(1.0),
        )?);
    }

    Ok(Scene {
        scene_id: manifest.scene_id,
        cloud,
        views,
        depth_scale: manifest.depth_scale.unwrap_or(default_depth_scale),
        manifest_digest,
        cloud_digest,
    })
}
