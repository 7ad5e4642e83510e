//! Lift 2D functional masks onto the point cloud and build the agreement heatmap.
//!
//! Each view gets a pixel-to-point map: valid depth pixels are back-projected
//! through the intrinsics, transformed to world space with the camera-to-world
//! pose, and snapped to the nearest cloud point within a radius (a uniform
//! spatial hash grid with cell size equal to the radius makes the 3x3x3
//! neighborhood sufficient). Counting how many mask pixels land on each point
//! across views yields raw agreement counts; dividing by the maximum count
//! normalizes scores into [0, 1], and thresholding produces the final 3D mask.
//!
//! Raw counts are exact integers and per-view counting is independent, so the
//! result does not depend on view order or worker count.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functional_seg::FunctionalMask2D;
use crate::geom::{squared_distance, Vec3};
use crate::parallel::*;
use crate::scene::{DepthMap, PointCloud, View};

#[derive(Debug, Error)]
pub enum LiftError {
    #[error("no pixel map for view {0}")]
    MissingMap(String),
    #[error("mask for view {view_id} is {got_width}x{got_height}, pixel map is {want_width}x{want_height}")]
    SizeMismatch {
        view_id: String,
        got_width: u32,
        got_height: u32,
        want_width: u32,
        want_height: u32,
    },
    #[error("threshold must lie in [0, 1), got {0}")]
    InvalidThreshold(f64),
}

/// Uniform spatial hash over cloud points, cell size = query radius.
pub struct SpatialGrid<'a> {
    cloud: &'a PointCloud,
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
}

impl<'a> SpatialGrid<'a> {
    pub fn build(cloud: &'a PointCloud, cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "grid cell must be positive");
        let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in cloud.points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        SpatialGrid { cloud, cell, cells }
    }

    fn key(p: &Vec3, cell: f64) -> (i64, i64, i64) {
        (
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        )
    }

    /// Nearest point within `radius` of `query`; distance ties break to the
    /// lowest point index. Cell size equals the radius, so scanning the 27
    /// neighboring cells covers every candidate.
    pub fn nearest_within(&self, query: Vec3, radius: f64) -> Option<u32> {
        debug_assert!(radius <= self.cell);
        let (cx, cy, cz) = Self::key(&query, self.cell);
        let r2 = radius * radius;
        let mut best: Option<(f64, u32)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(indices) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) else {
                        continue;
                    };
                    for &i in indices {
                        let d2 = squared_distance(self.cloud.points[i as usize], query);
                        if d2 > r2 {
                            continue;
                        }
                        let better = match best {
                            None => true,
                            Some((bd2, bi)) => d2 < bd2 || (d2 == bd2 && i < bi),
                        };
                        if better {
                            best = Some((d2, i));
                        }
                    }
                }
            }
        }
        best.map(|(_, i)| i)
    }
}

/// Partial function from a view's depth pixels to point indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PixelToPointMap {
    pub view_id: String,
    pub width: u32,
    pub height: u32,
    /// Row-major; `None` where depth is invalid or no point lies within radius.
    entries: Vec<Option<u32>>,
}

impl PixelToPointMap {
    #[inline]
    pub fn at(&self, x: u32, y: u32) -> Option<u32> {
        self.entries[(y as usize) * (self.width as usize) + x as usize]
    }

    pub fn mapped_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }
}

/// Build the pixel-to-point map for one view.
///
/// For pixel (x, y) with valid depth z the camera-space point is
/// `z * K^-1 * (x, y, 1)`, transformed to world space by the pose.
pub fn build_pixel_map(
    view: &View,
    depth: &DepthMap,
    grid: &SpatialGrid<'_>,
    radius: f64,
) -> PixelToPointMap {
    let k = view.depth_intrinsics();
    debug_assert_eq!((depth.width, depth.height), (k.width, k.height));
    let rows: Vec<Vec<Option<u32>>> = (0..depth.height)
        .collect::<Vec<u32>>()
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(depth.width as usize);
            for x in 0..depth.width {
                row.push(depth.valid_at(x, y).and_then(|z| {
                    let cam = [
                        (x as f64 - k.cx) / k.fx * z,
                        (y as f64 - k.cy) / k.fy * z,
                        z,
                    ];
                    grid.nearest_within(view.pose.camera_to_world(cam), radius)
                }));
            }
            row
        })
        .collect();
    PixelToPointMap {
        view_id: view.view_id.clone(),
        width: depth.width,
        height: depth.height,
        entries: rows.into_iter().flatten().collect(),
    }
}

/// Multi-view agreement counts per point, raw and max-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap3D {
    /// point index -> number of mask pixels that mapped to it, over all views
    pub raw_counts: BTreeMap<u32, u64>,
    /// raw / max(raw); empty iff raw is empty, and its maximum is exactly 1
    pub normalized: BTreeMap<u32, f64>,
}

impl Heatmap3D {
    fn from_raw(raw_counts: BTreeMap<u32, u64>) -> Self {
        let max = raw_counts.values().copied().max().unwrap_or(0);
        let normalized = if max == 0 {
            BTreeMap::new()
        } else {
            raw_counts
                .iter()
                .map(|(&i, &c)| (i, c as f64 / max as f64))
                .collect()
        };
        Heatmap3D {
            raw_counts,
            normalized,
        }
    }

    /// Total number of mapped mask pixels, for conservation checks.
    pub fn total_count(&self) -> u64 {
        self.raw_counts.values().sum()
    }
}

/// Final 3D mask: points whose normalized score strictly exceeds the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask3D {
    pub point_indices: Vec<u32>,
    pub tau: f64,
}

/// Pair masks with their maps by view id.
pub fn pair_by_view_id<'a>(
    masks: &'a [FunctionalMask2D],
    maps: &'a [PixelToPointMap],
) -> Result<Vec<(&'a FunctionalMask2D, &'a PixelToPointMap)>, LiftError> {
    let by_id: HashMap<&str, &PixelToPointMap> =
        maps.iter().map(|m| (m.view_id.as_str(), m)).collect();
    masks
        .iter()
        .map(|mask| {
            let map = by_id
                .get(mask.view_id.as_str())
                .copied()
                .ok_or_else(|| LiftError::MissingMap(mask.view_id.clone()))?;
            if (mask.mask.width, mask.mask.height) != (map.width, map.height) {
                return Err(LiftError::SizeMismatch {
                    view_id: mask.view_id.clone(),
                    got_width: mask.mask.width,
                    got_height: mask.mask.height,
                    want_width: map.width,
                    want_height: map.height,
                });
            }
            Ok((mask, map))
        })
        .collect()
}

/// Accumulate agreement counts over all (mask, map) pairs.
///
/// Per-view counting runs in parallel; partial integer maps merge by addition,
/// which is associative and commutative, so the heatmap is identical for any
/// view order or worker count.
pub fn accumulate(pairs: &[(&FunctionalMask2D, &PixelToPointMap)]) -> Heatmap3D {
    let raw = pairs
        .par_iter()
        .map(|(mask, map)| {
            let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
            for (x, y) in mask.mask.pixels() {
                if let Some(point) = map.at(x, y) {
                    *counts.entry(point).or_insert(0) += 1;
                }
            }
            counts
        })
        .reduce(BTreeMap::new, |mut a, b| {
            for (point, count) in b {
                *a.entry(point).or_insert(0) += count;
            }
            a
        });
    Heatmap3D::from_raw(raw)
}

/// Threshold the normalized heatmap with a strict inequality.
///
/// tau = 1 is rejected up front (config validation) because the strict
/// inequality would always produce an empty mask.
pub fn threshold(heatmap: &Heatmap3D, tau: f64) -> Result<Mask3D, LiftError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(LiftError::InvalidThreshold(tau));
    }
    Ok(Mask3D {
        point_indices: heatmap
            .normalized
            .iter()
            .filter(|(_, &s)| s > tau)
            .map(|(&i, _)| i)
            .collect(),
        tau,
    })
}
