//! Per-task IoU and aggregate detection metrics.
//!
//! The pipeline emits exactly one predicted 3D mask per task description and
//! the ground truth is the union mask over all target instances, so AP and AR
//! at a given IoU threshold collapse to the same detection rate. Both are
//! still reported under their usual names; the report header documents the
//! single-prediction protocol.
//!
//! A task counts as detected at threshold t when its IoU strictly exceeds t.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("ground truth for task \"{0}\" is empty")]
    EmptyGroundTruth(String),
    #[error("cannot aggregate zero task results")]
    NoResults,
}

/// Outcome of one task: prediction vs ground truth over point indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskResult {
    pub scene_id: String,
    pub description: String,
    pub predicted: Vec<u32>,
    pub gt: Vec<u32>,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    /// Mean normalized heatmap value over the predicted points; 0 if empty.
    /// Recorded for ranked-protocol experiments, unused in aggregation.
    pub confidence: f64,
}

/// Aggregate metrics, reported x100 as is conventional in result tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub map: f64,
    pub ap50: f64,
    pub ap25: f64,
    pub mar: f64,
    pub ar50: f64,
    pub ar25: f64,
    pub miou: f64,
}

impl AggregateMetrics {
    pub const CSV_HEADER: &'static str = "mAP,AP50,AP25,mAR,AR50,AR25,mIoU";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2}",
            self.map, self.ap50, self.ap25, self.mar, self.ar50, self.ar25, self.miou
        )
    }
}

fn intersection_size(a: &[u32], b: &[u32]) -> usize {
    // both sorted ascending
    let mut i = 0;
    let mut j = 0;
    let mut count = 0;
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// IoU, precision and recall of a predicted index set against ground truth.
///
/// Inputs must be sorted and deduplicated. Ground truth must be non-empty;
/// precision of an empty prediction is 0 by convention.
pub fn task_iou(pred: &[u32], gt: &[u32]) -> Result<(f64, f64, f64), EvalError> {
    if gt.is_empty() {
        return Err(EvalError::EmptyGroundTruth(String::new()));
    }
    debug_assert!(pred.windows(2).all(|w| w[0] < w[1]));
    debug_assert!(gt.windows(2).all(|w| w[0] < w[1]));
    let inter = intersection_size(pred, gt);
    let union = pred.len() + gt.len() - inter;
    let iou = inter as f64 / union as f64;
    let precision = if pred.is_empty() {
        0.0
    } else {
        inter as f64 / pred.len() as f64
    };
    let recall = inter as f64 / gt.len() as f64;
    Ok((iou, precision, recall))
}

/// The ten mAP thresholds: 0.50, 0.55, ..., 0.95.
fn map_thresholds() -> impl Iterator<Item = f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0)
}

fn detection_rate(results: &[TaskResult], threshold: f64) -> f64 {
    let detected = results.iter().filter(|r| r.iou > threshold).count();
    detected as f64 / results.len() as f64
}

/// Aggregate task results into AP/AR/mIoU numbers (x100).
pub fn aggregate(results: &[TaskResult]) -> Result<AggregateMetrics, EvalError> {
    if results.is_empty() {
        return Err(EvalError::NoResults);
    }
    let dr25 = detection_rate(results, 0.25) * 100.0;
    let dr50 = detection_rate(results, 0.50) * 100.0;
    let mean_dr = map_thresholds()
        .map(|t| detection_rate(results, t))
        .sum::<f64>()
        / 10.0
        * 100.0;
    let miou = results.iter().map(|r| r.iou).sum::<f64>() / results.len() as f64 * 100.0;
    Ok(AggregateMetrics {
        map: mean_dr,
        ap50: dr50,
        ap25: dr25,
        mar: mean_dr,
        ar50: dr50,
        ar25: dr25,
        miou,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(iou: f64) -> TaskResult {
        TaskResult {
            scene_id: "s".into(),
            description: "d".into(),
            predicted: Vec::new(),
            gt: vec![0],
            iou,
            precision: 0.0,
            recall: 0.0,
            confidence: 0.0,
        }
    }

    #[test]
    fn identity_prediction() {
        let (iou, p, r) = task_iou(&[1, 2, 3], &[1, 2, 3]).unwrap();
        assert_eq!((iou, p, r), (1.0, 1.0, 1.0));
    }

    #[test]
    fn partial_overlap_hand_case() {
        let (iou, p, r) = task_iou(&[1, 2], &[2, 3]).unwrap();
        assert!((iou - 1.0 / 3.0).abs() < 1e-15);
        assert!((p - 0.5).abs() < 1e-15);
        assert!((r - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_prediction_convention() {
        let (iou, p, r) = task_iou(&[], &[1]).unwrap();
        assert_eq!((iou, p, r), (0.0, 0.0, 0.0));
    }

    #[test]
    fn empty_gt_is_a_contract_error() {
        assert!(task_iou(&[1], &[]).is_err());
    }

    #[test]
    fn four_task_hand_enumeration() {
        let results: Vec<TaskResult> = [1.0, 0.6, 0.3, 0.0].map(result).to_vec();
        let m = aggregate(&results).unwrap();
        assert!((m.ap25 - 75.0).abs() < 1e-9, "ap25 = {}", m.ap25);
        assert!((m.ap50 - 50.0).abs() < 1e-9, "ap50 = {}", m.ap50);
        assert!((m.map - 30.0).abs() < 1e-9, "map = {}", m.map);
        assert!((m.miou - 47.5).abs() < 1e-9, "miou = {}", m.miou);
        assert_eq!(m.mar, m.map);
        assert_eq!(m.ar25, m.ap25);
    }

    #[test]
    fn boundary_all_perfect_and_all_zero() {
        let perfect: Vec<TaskResult> = vec![result(1.0); 3];
        let m = aggregate(&perfect).unwrap();
        for v in [m.map, m.ap50, m.ap25, m.mar, m.ar50, m.ar25, m.miou] {
            assert!((v - 100.0).abs() < 1e-9);
        }
        let zero: Vec<TaskResult> = vec![result(0.0); 3];
        let m = aggregate(&zero).unwrap();
        for v in [m.map, m.ap50, m.ap25, m.mar, m.ar50, m.ar25, m.miou] {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn csv_row_has_two_decimal_columns() {
        let results: Vec<TaskResult> = [1.0, 0.6, 0.3, 0.0].map(result).to_vec();
        let m = aggregate(&results).unwrap();
        assert_eq!(AggregateMetrics::CSV_HEADER.split(',').count(), 7);
        assert_eq!(m.csv_row(), "30.00,50.00,75.00,30.00,50.00,75.00,47.50");
    }

    #[test]
    fn detection_rate_monotone_in_threshold() {
        let results: Vec<TaskResult> = [0.9, 0.7, 0.55, 0.3, 0.1].map(result).to_vec();
        let mut last = f64::INFINITY;
        for t in (0..20).map(|i| i as f64 / 20.0) {
            let dr = detection_rate(&results, t);
            assert!(dr <= last + 1e-15);
            last = dr;
        }
        let m = aggregate(&results).unwrap();
        assert!(m.ap25 >= m.ap50);
        for v in [m.map, m.ap50, m.ap25, m.miou] {
            assert!((0.0..=100.0).contains(&v));
        }
    }
}
