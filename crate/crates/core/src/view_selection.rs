//! Score-based view selection.
//!
//! Each candidate mask of the contextual object gets a visibility score that
//! combines the detector confidence with how centered and how evenly spread
//! the mask is around the image center. Pixels are mapped to normalized polar
//! coordinates; the distance and angle distributions are compared against
//! uniform references with a KL divergence, normalized by ln(bins) so both
//! scores land in [0, 1]. A view inherits the best score among its masks, and
//! the top-scoring views form the working subset for functional segmentation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Additive smoothing applied to every histogram bin before normalization;
/// keeps the divergence finite when bins are empty.
const SMOOTHING: f64 = 1e-6;

const LAMBDA_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("mask for view {0} has no pixels")]
    EmptyMask(String),
    #[error("invalid selection config: {0}")]
    InvalidConfig(String),
}

/// One candidate mask of the contextual object in a view.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextMask {
    pub view_id: String,
    pub pixels: Vec<(u32, u32)>,
    /// Detector confidence in [0, 1].
    pub confidence: f64,
}

/// Score components for one mask.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VisibilityScore {
    pub s_m: f64,
    pub s_d: f64,
    pub s_alpha: f64,
    pub s_total: f64,
}

/// A view with its visibility score and the mask that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredView {
    pub view_id: String,
    /// Best combined score over the view's masks; 0 when the object is absent.
    pub s_o: f64,
    pub best_mask: Option<ContextMask>,
    pub all_scores: Vec<VisibilityScore>,
}

/// Weights, view budget and histogram resolution for view selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub lambda_m: f64,
    pub lambda_d: f64,
    pub lambda_alpha: f64,
    /// Number of views to keep.
    pub view_budget: usize,
    pub bins_d: usize,
    pub bins_alpha: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            lambda_m: 0.5,
            lambda_d: 0.25,
            lambda_alpha: 0.25,
            view_budget: 50,
            bins_d: 16,
            bins_alpha: 16,
        }
    }
}

impl SelectionConfig {
    /// Build a config from unnormalized non-negative weights.
    pub fn with_weights(m: f64, d: f64, alpha: f64) -> Result<Self, SelectionError> {
        let sum = m + d + alpha;
        if !(sum > 0.0 && sum.is_finite()) || m < 0.0 || d < 0.0 || alpha < 0.0 {
            return Err(SelectionError::InvalidConfig(format!(
                "weights must be non-negative with a positive sum, got ({m}, {d}, {alpha})"
            )));
        }
        Ok(SelectionConfig {
            lambda_m: m / sum,
            lambda_d: d / sum,
            lambda_alpha: alpha / sum,
            ..SelectionConfig::default()
        })
    }

    pub fn validate(&self) -> Result<(), SelectionError> {
        let sum = self.lambda_m + self.lambda_d + self.lambda_alpha;
        if (sum - 1.0).abs() > LAMBDA_SUM_TOLERANCE {
            return Err(SelectionError::InvalidConfig(format!(
                "lambda weights must sum to 1, got {sum}"
            )));
        }
        if self.lambda_m < 0.0 || self.lambda_d < 0.0 || self.lambda_alpha < 0.0 {
            return Err(SelectionError::InvalidConfig(
                "negative lambda weight".into(),
            ));
        }
        if self.view_budget == 0 {
            return Err(SelectionError::InvalidConfig(
                "view budget must be positive".into(),
            ));
        }
        if self.bins_d < 2 || self.bins_alpha < 2 {
            return Err(SelectionError::InvalidConfig(
                "histogram bin counts must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

/// Map mask pixels to normalized polar coordinates around the image center.
///
/// u = (x - W/2) / (W/2), v = (y - H/2) / (H/2); d = sqrt(u^2 + v^2) lies in
/// [0, sqrt(2)] and the angle in [-pi, pi).
pub fn polar_coordinates(
    pixels: &[(u32, u32)],
    width: u32,
    height: u32,
) -> Result<Vec<(f64, f64)>, SelectionError> {
    if pixels.is_empty() {
        return Err(SelectionError::EmptyMask(String::new()));
    }
    let half_w = width as f64 / 2.0;
    let half_h = height as f64 / 2.0;
    Ok(pixels
        .iter()
        .map(|&(x, y)| {
            let u = (x as f64 - half_w) / half_w;
            let v = (y as f64 - half_h) / half_h;
            let d = (u * u + v * v).sqrt();
            let mut alpha = v.atan2(u);
            if alpha == std::f64::consts::PI {
                alpha = -std::f64::consts::PI;
            }
            (d, alpha)
        })
        .collect())
}

fn histogram(values: impl Iterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut hist = vec![0.0f64; bins];
    let span = hi - lo;
    for v in values {
        let idx = if span > 0.0 {
            (((v - lo) / span * bins as f64).floor() as usize).min(bins - 1)
        } else {
            0
        };
        hist[idx] += 1.0;
    }
    hist
}

/// KL divergence in nats of a smoothed, normalized histogram against the
/// uniform distribution on the same bins, mapped to a similarity in [0, 1].
fn uniformity_score(hist: &[f64]) -> f64 {
    let bins = hist.len() as f64;
    let total: f64 = hist.iter().sum::<f64>() + SMOOTHING * bins;
    let mut kl = 0.0;
    for &count in hist {
        let p = (count + SMOOTHING) / total;
        if p > 0.0 {
            kl += p * (p * bins).ln();
        }
    }
    (1.0 - kl / bins.ln()).clamp(0.0, 1.0)
}

/// Distance and angle uniformity scores for a mask's polar coordinates.
///
/// The distance histogram spans [0, max d of this mask]; a single-pixel mask
/// sitting exactly at the center (max d = 0) scores 1 by convention. The angle
/// histogram spans [-pi, pi).
pub fn distribution_scores(
    coords: &[(f64, f64)],
    bins_d: usize,
    bins_alpha: usize,
) -> Result<(f64, f64), SelectionError> {
    if coords.is_empty() {
        return Err(SelectionError::EmptyMask(String::new()));
    }
    let d_max = coords.iter().map(|c| c.0).fold(0.0f64, f64::max);
    let s_d = if d_max == 0.0 {
        1.0
    } else {
        uniformity_score(&histogram(coords.iter().map(|c| c.0), 0.0, d_max, bins_d))
    };
    let s_alpha = uniformity_score(&histogram(
        coords.iter().map(|c| c.1),
        -std::f64::consts::PI,
        std::f64::consts::PI,
        bins_alpha,
    ));
    Ok((s_d, s_alpha))
}

/// Weighted combination of the three component scores.
pub fn combine_scores(s_m: f64, s_d: f64, s_alpha: f64, config: &SelectionConfig) -> f64 {
    config.lambda_m * s_m + config.lambda_d * s_d + config.lambda_alpha * s_alpha
}

/// Score a view from its candidate masks. Empty mask list means the contextual
/// object is absent: the view scores 0 and can never be selected.
pub fn score_view(
    view_id: &str,
    masks: &[ContextMask],
    width: u32,
    height: u32,
    config: &SelectionConfig,
) -> Result<ScoredView, SelectionError> {
    let mut all_scores = Vec::with_capacity(masks.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, mask) in masks.iter().enumerate() {
        if mask.pixels.is_empty() {
            return Err(SelectionError::EmptyMask(view_id.to_string()));
        }
        let coords = polar_coordinates(&mask.pixels, width, height)?;
        let (s_d, s_alpha) = distribution_scores(&coords, config.bins_d, config.bins_alpha)?;
        let s_total = combine_scores(mask.confidence, s_d, s_alpha, config);
        all_scores.push(VisibilityScore {
            s_m: mask.confidence,
            s_d,
            s_alpha,
            s_total,
        });
        // ties go to the lowest mask index
        if best.is_none_or(|(_, s)| s_total > s) {
            best = Some((i, s_total));
        }
    }
    Ok(match best {
        Some((i, s_o)) => ScoredView {
            view_id: view_id.to_string(),
            s_o,
            best_mask: Some(masks[i].clone()),
            all_scores,
        },
        None => ScoredView {
            view_id: view_id.to_string(),
            s_o: 0.0,
            best_mask: None,
            all_scores,
        },
    })
}

/// Keep the `budget` top-scoring views: descending score, ties broken by
/// ascending view id, zero-score views never selected.
pub fn select_views(mut scored: Vec<ScoredView>, budget: usize) -> Vec<ScoredView> {
    scored.sort_by(|a, b| {
        b.s_o
            .partial_cmp(&a.s_o)
            .expect("scores are finite")
            .then_with(|| a.view_id.cmp(&b.view_id))
    });
    scored.retain(|v| v.s_o > 0.0);
    scored.truncate(budget);
    scored
}
