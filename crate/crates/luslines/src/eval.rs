//! Graded scoring of detected columns against ground-truth extents, and
//! precision/recall/F-score reporting.
//!
//! A detection inside a box scores 1.0 down to 0.1 in ten graded bands from
//! the box center outward, 0 outside. Detections and boxes are matched
//! one-to-one, highest score first; matches scoring strictly above the
//! threshold count as true positives.

use serde::{Deserialize, Serialize};

use crate::phantom::GtBox;
use crate::{Error, Result};

/// Per-detection outcome: the matched box, if any, and the pair's score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub detection: usize,
    pub matched_box: Option<usize>,
    pub score: f64,
}

/// Counts and ratios for one image or an aggregate.
///
/// Ratios are `None` when their denominator is zero (reported as NaN in
/// CSV output). Invariants: `tp + fn = num_bline`, `tp + fp = num_detection`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_detection: Vec<DetectionScore>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub num_bline: usize,
    pub num_detection: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub f2: Option<f64>,
}

/// Graded score of a detected column against one box.
///
/// The box half-width splits into ten bands per side; the innermost band
/// scores 1.0, each further band 0.1 less. The box edge itself and anything
/// beyond score 0; exact band borders fall to the farther band.
pub fn score_detection(x_d: f64, x_min: f64, x_max: f64) -> Result<f64> {
    if !(x_min < x_max) {
        return Err(Error::Config(format!("degenerate box [{x_min}, {x_max}]")));
    }
    let center = (x_min + x_max) / 2.0;
    let half = (x_max - x_min) / 2.0;
    let dist = (x_d - center).abs();
    if dist >= half {
        return Ok(0.0);
    }
    let idx = (dist / (half / 10.0)).floor();
    Ok(1.0 - 0.1 * idx)
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

fn f_beta(precision: Option<f64>, recall: Option<f64>, beta_sq: f64) -> Option<f64> {
    match (precision, recall) {
        (Some(p), Some(r)) => {
            let den = beta_sq * p + r;
            if den == 0.0 {
                None
            } else {
                Some((1.0 + beta_sq) * p * r / den)
            }
        }
        _ => None,
    }
}

fn finish_report(
    per_detection: Vec<DetectionScore>,
    tp: usize,
    num_detection: usize,
    num_bline: usize,
) -> ScoreReport {
    let fp = num_detection - tp;
    let fn_ = num_bline - tp;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    ScoreReport {
        per_detection,
        tp,
        fp,
        fn_,
        num_bline,
        num_detection,
        precision,
        recall,
        f1: f_beta(precision, recall, 1.0),
        f2: f_beta(precision, recall, 4.0),
    }
}

/// Match detected columns to ground-truth boxes, one-to-one, and count.
///
/// All positive pairwise scores are considered highest-first (ties broken
/// by detection then box index); each detection and each box matches at
/// most once. Matched pairs scoring strictly above `threshold` are TP;
/// every other detection is FP and every unmatched or below-threshold box
/// is FN.
pub fn match_detections(dets: &[f64], gts: &[GtBox], threshold: f64) -> Result<ScoreReport> {
    let mut pairs = Vec::new();
    for (di, &x) in dets.iter().enumerate() {
        for (bi, b) in gts.iter().enumerate() {
            let s = score_detection(x, b.x_min as f64, b.x_max as f64)?;
            if s > 0.0 {
                pairs.push((di, bi, s));
            }
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

    let mut det_match: Vec<Option<(usize, f64)>> = vec![None; dets.len()];
    let mut box_used = vec![false; gts.len()];
    for (di, bi, s) in pairs {
        if det_match[di].is_none() && !box_used[bi] {
            det_match[di] = Some((bi, s));
            box_used[bi] = true;
        }
    }

    let mut per_detection = Vec::with_capacity(dets.len());
    let mut tp = 0;
    for (di, m) in det_match.iter().enumerate() {
        match m {
            Some((bi, s)) => {
                if *s > threshold {
                    tp += 1;
                }
                per_detection.push(DetectionScore {
                    detection: di,
                    matched_box: Some(*bi),
                    score: *s,
                });
            }
            None => {
                per_detection.push(DetectionScore { detection: di, matched_box: None, score: 0.0 })
            }
        }
    }
    Ok(finish_report(per_detection, tp, dets.len(), gts.len()))
}

/// Micro-average: sum the counts of several reports, recompute the ratios.
pub fn aggregate(reports: &[ScoreReport]) -> ScoreReport {
    let tp = reports.iter().map(|r| r.tp).sum();
    let num_detection = reports.iter().map(|r| r.num_detection).sum();
    let num_bline = reports.iter().map(|r| r.num_bline).sum();
    finish_report(Vec::new(), tp, num_detection, num_bline)
}
