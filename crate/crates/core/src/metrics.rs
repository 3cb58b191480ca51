//! Localization and visibility metrics: PCKh, PCK at a fraction of the image
//! side, MPJPE in pixels and pooled visibility average precision.
//!
//! Localization metrics consider only joints that are visible in the ground
//! truth, pooled over all samples. Errors are measured in pixels of the
//! 256 × 256 frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{denormalize_coords, joint, Pose, Visibility, IMAGE_SIDE, NUM_JOINTS};

/// Head size used when the nose–neck segment cannot be measured.
pub const FALLBACK_HEAD_FRACTION: f64 = 0.1;

/// Absolute slack, in pixels, on PCK thresholds so that errors equal to the
/// threshold up to float rounding count as correct.
pub const THRESHOLD_SLACK_PX: f64 = 1e-9;

fn to_px(p: &Pose, j: usize) -> (f64, f64) {
    denormalize_coords(p[j], IMAGE_SIDE, IMAGE_SIDE)
}

/// Pixel distance between the predicted and ground-truth joint.
pub fn joint_error_px(pred: &Pose, gt: &Pose, j: usize) -> f64 {
    let (a, b) = (to_px(pred, j), to_px(gt, j));
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Ground-truth nose–neck pixel distance, or the fallback when either
/// endpoint is invisible or the segment is degenerate. The flag reports
/// whether the fallback was used.
pub fn head_size_px(gt: &Pose, vis: &Visibility) -> (f64, bool) {
    if vis.is_visible(joint::NOSE) && vis.is_visible(joint::NECK) {
        let (a, b) = (to_px(gt, joint::NOSE), to_px(gt, joint::NECK));
        let d = (a.0 - b.0).hypot(a.1 - b.1);
        if d > 0.0 && d.is_finite() {
            return (d, false);
        }
    }
    (FALLBACK_HEAD_FRACTION * IMAGE_SIDE, true)
}

fn check_lengths(preds: usize, gts: usize, vis: usize) -> Result<()> {
    if preds != gts || gts != vis {
        return Err(Error::Validation(format!(
            "evaluation inputs differ in length: {preds} predictions, {gts} targets, {vis} visibility vectors"
        )));
    }
    Ok(())
}

/// Fraction of visible joints whose error is within a per-sample threshold.
fn pck_with<F>(preds: &[Pose], gts: &[Pose], vis: &[Visibility], threshold: F) -> Result<f64>
where
    F: Fn(usize) -> f64,
{
    check_lengths(preds.len(), gts.len(), vis.len())?;
    let (mut hit, mut total) = (0usize, 0usize);
    for n in 0..gts.len() {
        let t = threshold(n) + THRESHOLD_SLACK_PX;
        for j in 0..NUM_JOINTS {
            if vis[n].is_visible(j) {
                total += 1;
                if joint_error_px(&preds[n], &gts[n], j) <= t {
                    hit += 1;
                }
            }
        }
    }
    if total == 0 {
        return Err(Error::Validation("no visible ground-truth joints".into()));
    }
    Ok(hit as f64 / total as f64)
}

/// PCKh at `alpha` times the ground-truth head size.
pub fn pckh(preds: &[Pose], gts: &[Pose], vis: &[Visibility], alpha: f64) -> Result<f64> {
    check_lengths(preds.len(), gts.len(), vis.len())?;
    let heads: Vec<f64> = gts.iter().zip(vis).map(|(g, v)| head_size_px(g, v).0).collect();
    pck_with(preds, gts, vis, |n| alpha * heads[n])
}

/// PCK with threshold `frac` times the image side.
pub fn pck_at(preds: &[Pose], gts: &[Pose], vis: &[Visibility], frac: f64) -> Result<f64> {
    pck_with(preds, gts, vis, |_| frac * IMAGE_SIDE)
}

/// Mean Euclidean pixel error over visible joints.
pub fn mpjpe(preds: &[Pose], gts: &[Pose], vis: &[Visibility]) -> Result<f64> {
    check_lengths(preds.len(), gts.len(), vis.len())?;
    let (mut sum, mut total) = (0.0, 0usize);
    for n in 0..gts.len() {
        for j in 0..NUM_JOINTS {
            if vis[n].is_visible(j) {
                sum += joint_error_px(&preds[n], &gts[n], j);
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Validation("no visible ground-truth joints".into()));
    }
    Ok(sum / total as f64)
}

/// Average precision of pooled per-joint visibility scores with all-point
/// interpolation. Equal scores form one operating point, so the result does
/// not depend on input order.
pub fn visibility_map(pred_probs: &[Vec<f64>], gt_vis: &[Visibility]) -> Result<f64> {
    if pred_probs.len() != gt_vis.len() {
        return Err(Error::Validation(format!(
            "{} score vectors for {} visibility vectors",
            pred_probs.len(),
            gt_vis.len()
        )));
    }
    let mut pairs = Vec::with_capacity(pred_probs.len() * NUM_JOINTS);
    for (s, v) in pred_probs.iter().zip(gt_vis) {
        if s.len() != v.values().len() {
            return Err(Error::Validation(format!(
                "{} scores for {} joints",
                s.len(),
                v.values().len()
            )));
        }
        for (j, &score) in s.iter().enumerate() {
            if !score.is_finite() {
                return Err(Error::Validation(format!("non-finite visibility score {score}")));
            }
            pairs.push((score, v.is_visible(j)));
        }
    }
    average_precision(&mut pairs)
}

fn average_precision(pairs: &mut [(f64, bool)]) -> Result<f64> {
    let positives = pairs.iter().filter(|p| p.1).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        let missing = if positives == 0 { "positive" } else { "negative" };
        return Err(Error::ApUndefined {
            missing: missing.into(),
        });
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    // one (recall, precision) point per group of tied scores
    let mut points = Vec::new();
    let (mut tp, mut seen, mut i) = (0usize, 0usize, 0usize);
    while i < pairs.len() {
        let score = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == score {
            tp += pairs[i].1 as usize;
            seen += 1;
            i += 1;
        }
        points.push((tp as f64 / positives as f64, tp as f64 / seen as f64));
    }
    let mut ap = 0.0;
    let mut envelope = 0.0f64;
    for k in (0..points.len()).rev() {
        envelope = envelope.max(points[k].1);
        let prev_recall = if k == 0 { 0.0 } else { points[k - 1].0 };
        ap += (points[k].0 - prev_recall) * envelope;
    }
    Ok(ap)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerJointReport {
    /// `None` for joints never visible in the ground truth.
    pub pckh_05: Vec<Option<f64>>,
    pub mpjpe_px: Vec<Option<f64>>,
    pub visible_count: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pckh_05: f64,
    pub pck_005: f64,
    pub pck_010: f64,
    pub mpjpe_px: f64,
    /// `None` when the ground truth holds only one visibility class.
    pub vis_map: Option<f64>,
    pub n_samples: usize,
    /// Samples whose PCKh threshold used the fallback head size.
    pub head_fallbacks: usize,
    pub per_joint: PerJointReport,
}

/// All metrics for one evaluation set.
pub fn evaluate(preds: &[Pose], pred_probs: &[Vec<f64>], gts: &[Pose], gt_vis: &[Visibility]) -> Result<EvalReport> {
    check_lengths(preds.len(), gts.len(), gt_vis.len())?;
    let vis_map = match visibility_map(pred_probs, gt_vis) {
        Ok(v) => Some(v),
        Err(Error::ApUndefined { .. }) => None,
        Err(e) => return Err(e),
    };
    let heads: Vec<(f64, bool)> = gts.iter().zip(gt_vis).map(|(g, v)| head_size_px(g, v)).collect();
    let mut hits = [0usize; NUM_JOINTS];
    let mut err_sum = [0.0f64; NUM_JOINTS];
    let mut count = [0usize; NUM_JOINTS];
    for n in 0..gts.len() {
        let t = 0.5 * heads[n].0 + THRESHOLD_SLACK_PX;
        for j in 0..NUM_JOINTS {
            if gt_vis[n].is_visible(j) {
                let e = joint_error_px(&preds[n], &gts[n], j);
                count[j] += 1;
                err_sum[j] += e;
                hits[j] += (e <= t) as usize;
            }
        }
    }
    let per = |f: &dyn Fn(usize) -> f64| -> Vec<Option<f64>> {
        (0..NUM_JOINTS).map(|j| (count[j] > 0).then(|| f(j))).collect()
    };
    Ok(EvalReport {
        pckh_05: pckh(preds, gts, gt_vis, 0.5)?,
        pck_005: pck_at(preds, gts, gt_vis, 0.05)?,
        pck_010: pck_at(preds, gts, gt_vis, 0.10)?,
        mpjpe_px: mpjpe(preds, gts, gt_vis)?,
        vis_map,
        n_samples: gts.len(),
        head_fallbacks: heads.iter().filter(|h| h.1).count(),
        per_joint: PerJointReport {
            pckh_05: per(&|j| hits[j] as f64 / count[j] as f64),
            mpjpe_px: per(&|j| err_sum[j] / count[j] as f64),
            visible_count: count.to_vec(),
        },
    })
}
