//! Functional object segmentation on selected views.
//!
//! Each selected view is asked a pointing query built from the functional
//! object name and the task description. The returned normalized points become
//! pixel prompts for the promptable segmentor; all points of a view go into a
//! single call producing one union mask, which is then resampled to depth
//! resolution where the lifting stage operates.

use serde::{Deserialize, Serialize};

use crate::backends::{
    point, segment_points, BackendError, InferenceBackend, PointRequest, SegmentPointsRequest,
};
use crate::masks::RleMask;

/// A functional-object mask for one view, at depth resolution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionalMask2D {
    pub view_id: String,
    pub mask: RleMask,
    /// Pixel prompts (at color resolution) that produced the mask.
    pub source_points: Vec<(u32, u32)>,
}

/// The pointing query: `Point to all the {F} in order to {D}`.
///
/// The template is instantiated verbatim, no grammatical repair. The
/// simplified form drops the task description (an ablation mode) and asks
/// `Point to all the {F}.`
pub fn build_point_query(functional_object: &str, description: &str, simplified: bool) -> String {
    debug_assert!(!functional_object.is_empty() && !description.is_empty());
    if simplified {
        format!("Point to all the {functional_object}.")
    } else {
        format!("Point to all the {functional_object} in order to {description}")
    }
}

/// Normalized [0, 1] coordinates to pixels: scale by the image size, round
/// half away from zero, clamp to bounds. Fixed so replay is bit-exact.
pub fn denormalize_point(x: f64, y: f64, width: u32, height: u32) -> (u32, u32) {
    let px = (x * width as f64).round().clamp(0.0, (width - 1) as f64) as u32;
    let py = (y * height as f64).round().clamp(0.0, (height - 1) as f64) as u32;
    (px, py)
}

/// Point + segment one view. `None` means the pointing model saw no functional
/// object and the view contributes nothing downstream.
pub fn segment_functional(
    backend: &dyn InferenceBackend,
    view_id: &str,
    image_png: &[u8],
    image_size: (u32, u32),
    depth_size: (u32, u32),
    query: &str,
) -> Result<Option<FunctionalMask2D>, BackendError> {
    let point_response = point(
        backend,
        &PointRequest {
            image_png: image_png.to_vec(),
            query: query.to_string(),
        },
    )?;
    if point_response.points.is_empty() {
        return Ok(None);
    }
    let (width, height) = image_size;
    let source_points: Vec<(u32, u32)> = point_response
        .points
        .iter()
        .map(|p| denormalize_point(p.x, p.y, width, height))
        .collect();
    let seg = segment_points(
        backend,
        &SegmentPointsRequest {
            image_png: image_png.to_vec(),
            points: source_points.clone(),
        },
    )?;
    let mask = seg
        .mask
        .resample_nearest(depth_size.0, depth_size.1)
        .map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
    Ok(Some(FunctionalMask2D {
        view_id: view_id.to_string(),
        mask,
        source_points,
    }))
}
