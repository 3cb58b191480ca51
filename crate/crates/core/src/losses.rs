//! Training objective: masked coordinate error, visibility cross-entropy,
//! invisible-joint shrinkage, bone-length consistency and a bidirectional
//! InfoNCE term, combined as a weighted sum.
//!
//! Every term has a closed-form gradient with respect to the model outputs;
//! the model's tape takes it from there. Per-sample terms are averaged over
//! the batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{Pose, SkeletonTopology, Visibility, NUM_JOINTS};

/// Probability clamp applied inside the visibility cross-entropy.
pub const PROB_CLAMP: f64 = 1e-7;

/// Allowed deviation from unit norm for contrastive inputs.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_inv: f64,
    pub lambda_skel: f64,
    pub lambda_con: f64,
    pub tau: f64,
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_inv: 0.50,
            lambda_skel: 0.10,
            lambda_con: 0.10,
            tau: 0.07,
            epsilon: 1e-8,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.lambda_inv) && ok(self.lambda_skel) && ok(self.lambda_con)) {
            return Err(Error::Config(format!("loss weights must be finite and ≥ 0: {self:?}")));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub coord: f64,
    pub vis: f64,
    pub inv: f64,
    pub skel: f64,
    pub con: f64,
    pub total: f64,
}

/// Weighted sum of the five terms.
pub fn total_loss(coord: f64, vis: f64, inv: f64, skel: f64, con: f64, w: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        coord,
        vis,
        inv,
        skel,
        con,
        total: coord + vis + w.lambda_inv * inv + w.lambda_skel * skel + w.lambda_con * con,
    }
}

/// Squared error over visible joints, normalized by the visible count.
pub fn coord_loss(pred: &Pose, gt: &Pose, mask: &Visibility, eps: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..NUM_JOINTS {
        let m = mask[i];
        let (dx, dy) = (pred[i].x - gt[i].x, pred[i].y - gt[i].y);
        num += m * (dx * dx + dy * dy);
        den += m;
    }
    num / (den + eps)
}

/// Gradient of [`coord_loss`] w.r.t. the 36 interleaved predicted coordinates.
pub fn coord_loss_grad(pred: &Pose, gt: &Pose, mask: &Visibility, eps: f64) -> Vec<f64> {
    let den: f64 = mask.values().iter().sum::<f64>() + eps;
    (0..NUM_JOINTS)
        .flat_map(|i| {
            let s = 2.0 * mask[i] / den;
            [s * (pred[i].x - gt[i].x), s * (pred[i].y - gt[i].y)]
        })
        .collect()
}

fn logit_bound() -> f64 {
    ((1.0 - PROB_CLAMP) / PROB_CLAMP).ln()
}

/// Binary cross-entropy on logits, averaged over the 18 joints. Uses the
/// fused `max(z,0) - z·v + ln(1 + e^{-|z|})` form with logits clamped so that
/// probabilities stay within `[1e-7, 1 - 1e-7]`.
pub fn vis_loss(logits: &[f64], gt: &Visibility) -> f64 {
    let bound = logit_bound();
    logits
        .iter()
        .zip(gt.values())
        .map(|(&z, &v)| {
            let z = z.clamp(-bound, bound);
            z.max(0.0) - z * v + (-z.abs()).exp().ln_1p()
        })
        .sum::<f64>()
        / NUM_JOINTS as f64
}

pub fn vis_loss_grad(logits: &[f64], gt: &Visibility) -> Vec<f64> {
    let bound = logit_bound();
    logits
        .iter()
        .zip(gt.values())
        .map(|(&z, &v)| {
            if z.abs() >= bound {
                0.0
            } else {
                (sigmoid(z) - v) / NUM_JOINTS as f64
            }
        })
        .collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Pulls predicted coordinates of ground-truth-invisible joints toward the
/// origin.
pub fn inv_loss(pred: &Pose, gt_vis: &Visibility, eps: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..NUM_JOINTS {
        let w = 1.0 - gt_vis[i];
        num += w * (pred[i].x * pred[i].x + pred[i].y * pred[i].y);
        den += w;
    }
    num / (den + eps)
}

pub fn inv_loss_grad(pred: &Pose, gt_vis: &Visibility, eps: f64) -> Vec<f64> {
    let den: f64 = gt_vis.values().iter().map(|v| 1.0 - v).sum::<f64>() + eps;
    (0..NUM_JOINTS)
        .flat_map(|i| {
            let s = 2.0 * (1.0 - gt_vis[i]) / den;
            [s * pred[i].x, s * pred[i].y]
        })
        .collect()
}

/// Mean squared difference between predicted and ground-truth limb lengths.
pub fn skel_loss(pred: &Pose, gt: &Pose, topo: &SkeletonTopology) -> f64 {
    if topo.is_empty() {
        return 0.0;
    }
    topo.edges()
        .iter()
        .map(|&(i, j)| {
            let d = pred[i].distance(&pred[j]) - gt[i].distance(&gt[j]);
            d * d
        })
        .sum::<f64>()
        / topo.len() as f64
}

/// Gradient of [`skel_loss`]; the norm's subgradient at coincident endpoints
/// is taken as zero.
pub fn skel_loss_grad(pred: &Pose, gt: &Pose, topo: &SkeletonTopology) -> Vec<f64> {
    let mut g = vec![0.0; 2 * NUM_JOINTS];
    if topo.is_empty() {
        return g;
    }
    let scale = 2.0 / topo.len() as f64;
    for &(i, j) in topo.edges() {
        let (dx, dy) = (pred[i].x - pred[j].x, pred[i].y - pred[j].y);
        let len = dx.hypot(dy);
        if len == 0.0 {
            continue;
        }
        let coef = scale * (len - gt[i].distance(&gt[j])) / len;
        g[2 * i] += coef * dx;
        g[2 * i + 1] += coef * dy;
        g[2 * j] -= coef * dx;
        g[2 * j + 1] -= coef * dy;
    }
    g
}

fn check_unit_rows(rows: &[Vec<f64>], what: &str) -> Result<()> {
    for (i, r) in rows.iter().enumerate() {
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::Validation(format!("{what} row {i} has norm {n}, expected 1")));
        }
    }
    Ok(())
}

fn similarity(f_text: &[Vec<f64>], f_pose: &[Vec<f64>], tau: f64) -> Result<Vec<Vec<f64>>> {
    let b = f_text.len();
    if b == 0 || f_pose.len() != b {
        return Err(Error::Validation(format!(
            "contrastive batch sizes must match and be ≥ 1, got {b} and {}",
            f_pose.len()
        )));
    }
    let d = f_text[0].len();
    if f_text.iter().chain(f_pose).any(|r| r.len() != d) {
        return Err(Error::Validation("contrastive rows differ in dimension".into()));
    }
    check_unit_rows(f_text, "f_text")?;
    check_unit_rows(f_pose, "f_pose")?;
    Ok(f_text
        .iter()
        .map(|t| {
            f_pose
                .iter()
                .map(|p| t.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() / tau)
                .collect()
        })
        .collect())
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Symmetric InfoNCE over a batch of matched text/pose unit vectors.
pub fn contrastive_loss(f_text: &[Vec<f64>], f_pose: &[Vec<f64>], tau: f64) -> Result<f64> {
    let s = similarity(f_text, f_pose, tau)?;
    let b = s.len();
    let mut total = 0.0;
    for p in 0..b {
        let row = log_sum_exp(s[p].iter().copied());
        let col = log_sum_exp((0..b).map(|q| s[q][p]));
        total += (row - s[p][p]) + (col - s[p][p]);
    }
    Ok(total / (2.0 * b as f64))
}

/// Loss plus gradients w.r.t. `f_text` and `f_pose`.
#[allow(clippy::type_complexity)]
pub fn contrastive_loss_grad(
    f_text: &[Vec<f64>],
    f_pose: &[Vec<f64>],
    tau: f64,
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let s = similarity(f_text, f_pose, tau)?;
    let b = s.len();
    let d = f_text[0].len();
    let row_lse: Vec<f64> = s.iter().map(|r| log_sum_exp(r.iter().copied())).collect();
    let col_lse: Vec<f64> = (0..b).map(|q| log_sum_exp((0..b).map(|p| s[p][q]))).collect();
    let mut loss = 0.0;
    for p in 0..b {
        loss += row_lse[p] + col_lse[p] - 2.0 * s[p][p];
    }
    loss /= 2.0 * b as f64;

    // dL/ds_pq = (softmax_row + softmax_col - 2δ) / 2B
    let norm = 1.0 / (2.0 * b as f64);
    let mut gs = vec![vec![0.0; b]; b];
    for p in 0..b {
        for q in 0..b {
            let r = (s[p][q] - row_lse[p]).exp();
            let c = (s[p][q] - col_lse[q]).exp();
            gs[p][q] = norm * (r + c - if p == q { 2.0 } else { 0.0 });
        }
    }
    let mut g_text = vec![vec![0.0; d]; b];
    let mut g_pose = vec![vec![0.0; d]; b];
    for p in 0..b {
        for q in 0..b {
            let w = gs[p][q] / tau;
            for k in 0..d {
                g_text[p][k] += w * f_pose[q][k];
                g_pose[q][k] += w * f_text[p][k];
            }
        }
    }
    Ok((loss, g_text, g_pose))
}

/// Model outputs for one batch, in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchPredictions {
    pub coords: Vec<Pose>,
    /// `None` when the model has no visibility head.
    pub vis_logits: Option<Vec<Vec<f64>>>,
    pub f_text: Vec<Vec<f64>>,
    pub f_pose: Vec<Vec<f64>>,
}

/// Gradients of the total objective w.r.t. each output of
/// [`BatchPredictions`]; coordinates are interleaved `x, y`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchGradients {
    pub coords: Vec<Vec<f64>>,
    pub vis_logits: Option<Vec<Vec<f64>>>,
    /// `None` when the contrastive weight is zero.
    pub f_text: Option<Vec<Vec<f64>>>,
    pub f_pose: Option<Vec<Vec<f64>>>,
}

/// Evaluates the full objective on a batch and its gradient.
pub fn batch_objective(
    pred: &BatchPredictions,
    targets: &[(&Pose, &Visibility)],
    topo: &SkeletonTopology,
    w: &LossWeights,
) -> Result<(LossBreakdown, BatchGradients)> {
    let b = targets.len();
    if b == 0 || pred.coords.len() != b {
        return Err(Error::Validation(format!(
            "batch has {} predictions for {b} targets",
            pred.coords.len()
        )));
    }
    let inv_b = 1.0 / b as f64;
    let (mut coord, mut vis, mut inv, mut skel) = (0.0, 0.0, 0.0, 0.0);
    let mut g_coords = Vec::with_capacity(b);
    let mut g_vis = pred.vis_logits.as_ref().map(|_| Vec::with_capacity(b));
    for (n, &(gt, gv)) in targets.iter().enumerate() {
        let p = &pred.coords[n];
        coord += coord_loss(p, gt, gv, w.epsilon);
        inv += inv_loss(p, gv, w.epsilon);
        skel += skel_loss(p, gt, topo);
        let gc = coord_loss_grad(p, gt, gv, w.epsilon);
        let gi = inv_loss_grad(p, gv, w.epsilon);
        let gk = skel_loss_grad(p, gt, topo);
        g_coords.push(
            (0..2 * NUM_JOINTS)
                .map(|k| inv_b * (gc[k] + w.lambda_inv * gi[k] + w.lambda_skel * gk[k]))
                .collect(),
        );
        if let (Some(logits), Some(gvis)) = (&pred.vis_logits, &mut g_vis) {
            vis += vis_loss(&logits[n], gv);
            gvis.push(vis_loss_grad(&logits[n], gv).into_iter().map(|g| g * inv_b).collect());
        }
    }
    let (con, g_text, g_pose) = if w.lambda_con > 0.0 {
        let (l, gt, gp) = contrastive_loss_grad(&pred.f_text, &pred.f_pose, w.tau)?;
        let scale = |m: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            m.into_iter()
                .map(|r| r.into_iter().map(|v| v * w.lambda_con).collect())
                .collect()
        };
        (l, Some(scale(gt)), Some(scale(gp)))
    } else {
        (contrastive_loss(&pred.f_text, &pred.f_pose, w.tau)?, None, None)
    };
    let breakdown = total_loss(coord * inv_b, vis * inv_b, inv * inv_b, skel * inv_b, con, w);
    Ok((
        breakdown,
        BatchGradients {
            coords: g_coords,
            vis_logits: g_vis,
            f_text: g_text,
            f_pose: g_pose,
        },
    ))
}
