//! Naive reference implementations and random input generators shared by
//! the oracle suites and the acceptance run.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use textpose::losses::LossWeights;
use textpose::skeleton::{Keypoint2D, Pose, Visibility, NUM_JOINTS, OPENPOSE_18_EDGES};

pub const SIDE: f64 = 256.0;

/// One loss batch: predictions plus targets.
pub struct LossBatch {
    pub pred: Vec<Pose>,
    pub gt: Vec<Pose>,
    pub vis: Vec<Visibility>,
    pub logits: Vec<Vec<f64>>,
    pub f_text: Vec<Vec<f64>>,
    pub f_pose: Vec<Vec<f64>>,
}

pub enum VisPattern {
    AllVisible,
    AllInvisible,
    Random,
}

pub fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn random_pose(rng: &mut ChaCha8Rng, scale: f64) -> Pose {
    Pose::new(
        (0..NUM_JOINTS)
            .map(|_| Keypoint2D::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)))
            .collect(),
    )
}

pub fn random_visibility(rng: &mut ChaCha8Rng, pattern: &VisPattern) -> Visibility {
    match pattern {
        VisPattern::AllVisible => Visibility::all_visible(),
        VisPattern::AllInvisible => Visibility::all_invisible(),
        VisPattern::Random => {
            let p = rng.gen_range(0.1..0.9);
            Visibility(
                (0..NUM_JOINTS)
                    .map(|_| if rng.gen::<f64>() < p { 1.0 } else { 0.0 })
                    .collect(),
            )
        }
    }
}

pub fn random_loss_batch(rng: &mut ChaCha8Rng, b: usize, pattern: &VisPattern) -> LossBatch {
    let d = 16;
    let mut batch = LossBatch {
        pred: Vec::new(),
        gt: Vec::new(),
        vis: Vec::new(),
        logits: Vec::new(),
        f_text: Vec::new(),
        f_pose: Vec::new(),
    };
    for _ in 0..b {
        batch.pred.push(random_pose(rng, 1.5));
        batch.gt.push(random_pose(rng, 1.0));
        batch.vis.push(random_visibility(rng, pattern));
        batch.logits.push(
            (0..NUM_JOINTS)
                .map(|_| {
                    if rng.gen::<f64>() < 0.1 {
                        rng.gen_range(-40.0..40.0)
                    } else {
                        rng.gen_range(-8.0..8.0)
                    }
                })
                .collect(),
        );
        batch.f_text.push(unit_vector(rng, d));
        batch.f_pose.push(unit_vector(rng, d));
    }
    batch
}

fn sq(v: f64) -> f64 {
    v * v
}

pub fn naive_coord(pred: &Pose, gt: &Pose, mask: &Visibility, eps: f64) -> f64 {
    let (p, g) = (pred.to_flat(), gt.to_flat());
    let mut num = 0.0;
    for k in 0..2 * NUM_JOINTS {
        num += mask.0[k / 2] * sq(p[k] - g[k]);
    }
    let den: f64 = mask.0.iter().sum();
    num / (den + eps)
}

pub fn naive_vis(logits: &[f64], gt: &Visibility) -> f64 {
    let lo = 1e-7;
    let mut total = 0.0;
    for i in 0..NUM_JOINTS {
        let p = (1.0 / (1.0 + (-logits[i]).exp())).clamp(lo, 1.0 - lo);
        let q = (1.0 / (1.0 + logits[i].exp())).clamp(lo, 1.0 - lo);
        let v = gt.0[i];
        total -= v * p.ln() + (1.0 - v) * q.ln();
    }
    total / 18.0
}

pub fn naive_inv(pred: &Pose, gt_vis: &Visibility, eps: f64) -> f64 {
    let p = pred.to_flat();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..NUM_JOINTS {
        num += (1.0 - gt_vis.0[i]) * (sq(p[2 * i]) + sq(p[2 * i + 1]));
        den += 1.0 - gt_vis.0[i];
    }
    num / (den + eps)
}

pub fn naive_skel(pred: &Pose, gt: &Pose) -> f64 {
    let len = |p: &Pose, i: usize, j: usize| (sq(p[i].x - p[j].x) + sq(p[i].y - p[j].y)).sqrt();
    let mut total = 0.0;
    for &(i, j) in OPENPOSE_18_EDGES.iter() {
        total += sq(len(pred, i, j) - len(gt, i, j));
    }
    total / OPENPOSE_18_EDGES.len() as f64
}

pub fn naive_contrastive(f_text: &[Vec<f64>], f_pose: &[Vec<f64>], tau: f64) -> f64 {
    let b = f_text.len();
    let s = |p: usize, q: usize| f_text[p].iter().zip(&f_pose[q]).map(|(a, c)| a * c).sum::<f64>() / tau;
    let mut total = 0.0;
    for p in 0..b {
        let row: f64 = (0..b).map(|q| s(p, q).exp()).sum();
        let col: f64 = (0..b).map(|q| s(q, p).exp()).sum();
        total -= (s(p, p).exp() / row).ln();
        total -= (s(p, p).exp() / col).ln();
    }
    total / (2.0 * b as f64)
}

/// Per-term batch means and the weighted total.
pub fn naive_total(batch: &LossBatch, w: &LossWeights) -> [f64; 6] {
    let b = batch.pred.len() as f64;
    let mut parts = [0.0; 5];
    for n in 0..batch.pred.len() {
        parts[0] += naive_coord(&batch.pred[n], &batch.gt[n], &batch.vis[n], w.epsilon) / b;
        parts[1] += naive_vis(&batch.logits[n], &batch.vis[n]) / b;
        parts[2] += naive_inv(&batch.pred[n], &batch.vis[n], w.epsilon) / b;
        parts[3] += naive_skel(&batch.pred[n], &batch.gt[n]) / b;
    }
    parts[4] = naive_contrastive(&batch.f_text, &batch.f_pose, w.tau);
    let total = parts[0] + parts[1] + w.lambda_inv * parts[2] + w.lambda_skel * parts[3] + w.lambda_con * parts[4];
    [parts[0], parts[1], parts[2], parts[3], parts[4], total]
}

/// One evaluation set: predictions, targets and visibility scores.
pub struct EvalSet {
    pub preds: Vec<Pose>,
    pub gts: Vec<Pose>,
    pub vis: Vec<Visibility>,
    pub probs: Vec<Vec<f64>>,
}

/// Random set with some exact-threshold errors, some unmeasurable heads and
/// tied scores. Always holds a visible joint and both visibility labels.
pub fn random_eval_set(rng: &mut ChaCha8Rng) -> EvalSet {
    let n = rng.gen_range(1..40);
    let noise = [0.01, 0.05, 0.2][rng.gen_range(0..3)];
    let mut set = EvalSet {
        preds: Vec::new(),
        gts: Vec::new(),
        vis: Vec::new(),
        probs: Vec::new(),
    };
    for _ in 0..n {
        let gt = random_pose(rng, 0.9);
        let mut pred = gt.clone();
        for j in 0..NUM_JOINTS {
            match rng.gen_range(0..4) {
                0 => {}
                // exactly 12.8 px along x
                1 => pred.0[j].x += 0.1,
                _ => {
                    pred.0[j].x += rng.gen_range(-noise..noise);
                    pred.0[j].y += rng.gen_range(-noise..noise);
                }
            }
        }
        let mut vis = random_visibility(rng, &VisPattern::Random);
        if rng.gen::<f64>() < 0.1 {
            vis = Visibility::all_invisible();
        }
        let quantized = rng.gen::<bool>();
        let probs = (0..NUM_JOINTS)
            .map(|j| {
                let base = if vis.is_visible(j) { 0.65 } else { 0.35 };
                let s: f64 = (base + rng.gen_range(-0.4..0.4f64)).clamp(0.0, 1.0);
                if quantized {
                    (s * 10.0).round() / 10.0
                } else {
                    s
                }
            })
            .collect();
        set.preds.push(pred);
        set.gts.push(gt);
        set.vis.push(vis);
        set.probs.push(probs);
    }
    set.vis[0].0[0] = 1.0;
    set.vis[0].0[1] = 0.0;
    set
}

fn px(k: &Keypoint2D) -> (f64, f64) {
    ((k.x + 1.0) * SIDE / 2.0, (k.y + 1.0) * SIDE / 2.0)
}

fn err_px(a: &Keypoint2D, b: &Keypoint2D) -> f64 {
    let (p, q) = (px(a), px(b));
    (sq(p.0 - q.0) + sq(p.1 - q.1)).sqrt()
}

fn visible(v: &Visibility, j: usize) -> bool {
    v.0[j] == 1.0
}

pub fn naive_head_size(gt: &Pose, vis: &Visibility) -> f64 {
    if visible(vis, 0) && visible(vis, 1) {
        let d = err_px(&gt[0], &gt[1]);
        if d > 0.0 {
            return d;
        }
    }
    25.6
}

fn naive_fraction(set: &EvalSet, threshold: impl Fn(usize) -> f64) -> f64 {
    let mut hit = 0.0;
    let mut total = 0.0;
    for n in 0..set.gts.len() {
        for j in 0..NUM_JOINTS {
            if visible(&set.vis[n], j) {
                total += 1.0;
                if err_px(&set.preds[n][j], &set.gts[n][j]) <= threshold(n) + 1e-9 {
                    hit += 1.0;
                }
            }
        }
    }
    hit / total
}

pub fn naive_pckh(set: &EvalSet, alpha: f64) -> f64 {
    naive_fraction(set, |n| alpha * naive_head_size(&set.gts[n], &set.vis[n]))
}

pub fn naive_pck(set: &EvalSet, frac: f64) -> f64 {
    naive_fraction(set, |_| frac * SIDE)
}

pub fn naive_mpjpe(set: &EvalSet) -> f64 {
    let mut sum = 0.0;
    let mut total = 0.0;
    for n in 0..set.gts.len() {
        for j in 0..NUM_JOINTS {
            if visible(&set.vis[n], j) {
                sum += err_px(&set.preds[n][j], &set.gts[n][j]);
                total += 1.0;
            }
        }
    }
    sum / total
}

/// All-point interpolated AP. For every distinct score, counts everything
/// at or above it directly, then takes the precision envelope.
pub fn naive_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let points: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let above: Vec<bool> = scores
                .iter()
                .zip(labels)
                .filter(|(s, _)| **s >= t)
                .map(|(_, &l)| l)
                .collect();
            let tp = above.iter().filter(|&&l| l).count() as f64;
            (tp / positives, tp / above.len() as f64)
        })
        .collect();
    let mut ap = 0.0;
    for k in 0..points.len() {
        let best = points[k..].iter().map(|p| p.1).fold(0.0, f64::max);
        let prev = if k == 0 { 0.0 } else { points[k - 1].0 };
        ap += (points[k].0 - prev) * best;
    }
    ap
}

pub fn naive_vis_map(set: &EvalSet) -> f64 {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (p, v) in set.probs.iter().zip(&set.vis) {
        for j in 0..NUM_JOINTS {
            scores.push(p[j]);
            labels.push(visible(v, j));
        }
    }
    naive_ap(&scores, &labels)
}
