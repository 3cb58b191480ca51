//! Optimization loop, evaluation, one-factor-at-a-time sweeps, component
//! ablations and a finite-difference gradient check of the full model.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{write_jsonl, Corpus, PoseCapRecord, Split};
use crate::diffcore::{Gradients, Mode, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, LossWeights};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{ClampGradient, ModelOutput, PoseGenConfig, PoseGenModel};
use crate::skeleton::{PoseSample, SkeletonTopology, Visibility};
use crate::textenc::{embed_hashed, resolve_embedding, EmbeddingTable, TextEmbedding};

/// Samples paired with their caption embeddings.
#[derive(Clone, Debug, Default)]
pub struct EmbeddedSplit {
    pub samples: Vec<PoseSample>,
    pub embeddings: Vec<TextEmbedding>,
}

impl EmbeddedSplit {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Clone, Debug, Default)]
pub struct EmbeddedCorpus {
    pub train: EmbeddedSplit,
    pub val: EmbeddedSplit,
    pub test: EmbeddedSplit,
}

impl EmbeddedCorpus {
    /// Embeds every caption, preferring `table` entries keyed by sample id.
    pub fn new(corpus: &Corpus, table: Option<&EmbeddingTable>, allow_fallback: bool) -> Result<Self> {
        let embed = |samples: &[PoseSample]| -> Result<EmbeddedSplit> {
            let embeddings = samples
                .iter()
                .map(|s| resolve_embedding(s, table, allow_fallback).map(|(e, _)| e))
                .collect::<Result<_>>()?;
            Ok(EmbeddedSplit {
                samples: samples.to_vec(),
                embeddings,
            })
        };
        Ok(Self {
            train: embed(&corpus.train)?,
            val: embed(&corpus.val)?,
            test: embed(&corpus.test)?,
        })
    }

    pub fn hashed(corpus: &Corpus) -> Result<Self> {
        Self::new(corpus, None, true)
    }

    pub fn split(&self, s: Split) -> &EmbeddedSplit {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weights: LossWeights,
    pub model: PoseGenConfig,
    pub seed: u64,
    /// Validate after every `eval_every` epochs and after the last one.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weights: LossWeights::default(),
            model: PoseGenConfig::default(),
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and ≥ 0, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::Config(format!("adam_eps must be > 0, got {}", self.adam_eps)));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be ≥ 1".into()));
        }
        self.weights.validate()?;
        self.model.validate()
    }
}

/// Adam with bias correction, over `f32` parameters.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: &ParamStore<f32>, cfg: &TrainConfig) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0f32; p.value.len()]).collect();
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, params: &mut ParamStore<f32>, grads: &Gradients<f32>) {
        self.step += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let step_size = (self.lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = grads.get(ParamId(i)) else {
                continue;
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, (w, &gk)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[k] = b1 * m[k] + (1.0 - b1) * gk;
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                *w -= step_size * m[k] / (v[k].sqrt() + eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses.
    pub train: LossBreakdown,
    pub val: Option<EvalReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters achieved the lowest validation MPJPE.
    pub best_epoch: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: PoseGenModel<f32>,
    pub best: PoseGenModel<f32>,
    pub history: TrainHistory,
}

/// Eval-mode predictions in input order, computed in batches.
pub fn predict(model: &PoseGenModel<f32>, embeddings: &[TextEmbedding]) -> Result<Vec<ModelOutput>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(embeddings.len());
    for chunk in embeddings.chunks(256) {
        let refs: Vec<&TextEmbedding> = chunk.iter().collect();
        out.extend(model.batch_forward(&refs, Mode::Eval, &mut rng)?);
    }
    Ok(out)
}

/// Metrics of `model` on a split, plus the number of samples whose raw
/// coordinates reached the clamp.
pub fn evaluate_split(model: &PoseGenModel<f32>, split: &EmbeddedSplit) -> Result<(EvalReport, usize)> {
    if split.is_empty() {
        return Err(Error::Config("cannot evaluate an empty split".into()));
    }
    let outs = predict(model, &split.embeddings)?;
    let preds: Vec<_> = outs.iter().map(|o| o.coords.clone()).collect();
    let probs: Vec<_> = outs.iter().map(ModelOutput::vis_probs).collect();
    let gts: Vec<_> = split.samples.iter().map(|s| s.pose.clone()).collect();
    let vis: Vec<Visibility> = split.samples.iter().map(|s| s.visibility.clone()).collect();
    let clamped = outs.iter().filter(|o| o.clamp_active).count();
    Ok((evaluate(&preds, &probs, &gts, &vis)?, clamped))
}

fn accumulate(sum: &mut LossBreakdown, b: &LossBreakdown, w: f64) {
    sum.coord += w * b.coord;
    sum.vis += w * b.vis;
    sum.inv += w * b.inv;
    sum.skel += w * b.skel;
    sum.con += w * b.con;
    sum.total += w * b.total;
}

/// Trains with Adam on the train split, validating on the val split.
pub fn train(data: &EmbeddedCorpus, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Config("train and val splits must be non-empty".into()));
    }
    let topo = SkeletonTopology::openpose18();
    let mut model = PoseGenModel::<f32>::new(cfg.model.clone())?;
    let mut best = model.clone();
    let mut best_mpjpe = f64::INFINITY;
    let mut history = TrainHistory::default();
    let mut adam = Adam::new(model.params(), cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut batch_id = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        for chunk in order.chunks(cfg.batch_size) {
            let emb: Vec<&TextEmbedding> = chunk.iter().map(|&i| &data.train.embeddings[i]).collect();
            let targets: Vec<_> = chunk
                .iter()
                .map(|&i| (&data.train.samples[i].pose, &data.train.samples[i].visibility))
                .collect();
            let (loss, grads, _) = model.objective(
                &emb,
                &targets,
                &topo,
                &cfg.weights,
                ClampGradient::StraightThrough,
                Mode::Train,
                &mut rng,
            )?;
            if !loss.total.is_finite() {
                return Err(Error::NonFiniteLoss { batch: batch_id });
            }
            accumulate(&mut sum, &loss, chunk.len() as f64 / data.train.len() as f64);
            adam.update(model.params_mut(), &grads);
            batch_id += 1;
        }
        let val = if (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs {
            let (report, _) = evaluate_split(&model, &data.val)?;
            if report.mpjpe_px < best_mpjpe {
                best_mpjpe = report.mpjpe_px;
                best = model.clone();
                history.best_epoch = Some(epoch);
            }
            Some(report)
        } else {
            None
        };
        log::info!(
            "epoch {epoch}: loss {:.5}{}",
            sum.total,
            val.as_ref()
                .map(|r| format!(", val pckh {:.4} mpjpe {:.2}px", r.pckh_05, r.mpjpe_px))
                .unwrap_or_default()
        );
        history.epochs.push(EpochRecord { epoch, train: sum, val });
    }
    Ok(TrainOutcome { model, best, history })
}

/// Candidate values per hyperparameter, each varied alone around a base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub hidden_dim: Vec<usize>,
    pub num_layers: Vec<usize>,
    pub num_heads: Vec<usize>,
    pub dropout_p: Vec<f64>,
    pub lambda_inv: Vec<f64>,
    pub lambda_con: Vec<f64>,
    pub tau: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self::published()
    }
}

impl SweepGrid {
    /// The 19 settings of the published sensitivity table.
    pub fn published() -> Self {
        Self {
            hidden_dim: vec![384, 512, 640],
            num_layers: vec![4, 6, 8],
            num_heads: vec![4, 8],
            dropout_p: vec![0.05, 0.10, 0.20],
            lambda_inv: vec![0.25, 0.50, 1.00],
            lambda_con: vec![0.05, 0.10, 0.20],
            tau: vec![0.05, 0.07],
        }
    }

    pub fn empty() -> Self {
        Self {
            hidden_dim: vec![],
            num_layers: vec![],
            num_heads: vec![],
            dropout_p: vec![],
            lambda_inv: vec![],
            lambda_con: vec![],
            tau: vec![],
        }
    }

    /// One `(factor, value, config)` per candidate, in table order.
    pub fn runs(&self, base: &TrainConfig) -> Result<Vec<(String, f64, TrainConfig)>> {
        let mut out = Vec::new();
        let mut push = |factor: &str, value: f64, f: &dyn Fn(&mut TrainConfig)| -> Result<()> {
            let mut c = base.clone();
            f(&mut c);
            c.validate()
                .map_err(|e| Error::Config(format!("sweep candidate {factor} = {value}: {e}")))?;
            out.push((factor.to_owned(), value, c));
            Ok(())
        };
        for &v in &self.hidden_dim {
            push("hidden_dim", v as f64, &|c| c.model.hidden_dim = v)?;
        }
        for &v in &self.num_layers {
            push("num_layers", v as f64, &|c| c.model.num_layers = v)?;
        }
        for &v in &self.num_heads {
            push("num_heads", v as f64, &|c| c.model.num_heads = v)?;
        }
        for &v in &self.dropout_p {
            push("dropout_p", v, &|c| c.model.dropout_p = v)?;
        }
        for &v in &self.lambda_inv {
            push("lambda_inv", v, &|c| c.weights.lambda_inv = v)?;
        }
        for &v in &self.lambda_con {
            push("lambda_con", v, &|c| c.weights.lambda_con = v)?;
        }
        for &v in &self.tau {
            push("tau", v, &|c| c.weights.tau = v)?;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub factor: String,
    pub value: f64,
    pub seed: u64,
    pub pckh: Option<f64>,
    pub pck_010: Option<f64>,
    pub mpjpe_px: Option<f64>,
    pub vis_map: Option<f64>,
    /// Set when the run aborted.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub split: Split,
    pub rows: Vec<SweepRow>,
    /// Per factor, the value with the lowest MPJPE.
    pub best: Vec<(String, f64)>,
}

/// Wall-clock seconds per row, kept apart from the deterministic report.
pub type Timings = Vec<(String, f64, f64)>;

/// Trains one run per candidate and scores each on the validation split.
pub fn sweep(data: &EmbeddedCorpus, grid: &SweepGrid, base: &TrainConfig) -> Result<(SweepReport, Timings)> {
    let runs = grid.runs(base)?;
    let mut rows = Vec::with_capacity(runs.len());
    let mut timings = Vec::with_capacity(runs.len());
    for (factor, value, cfg) in runs {
        log::info!("sweep {factor} = {value}");
        let start = Instant::now();
        let result = train(data, &cfg).and_then(|o| evaluate_split(&o.best, &data.val));
        timings.push((factor.clone(), value, start.elapsed().as_secs_f64()));
        rows.push(match result {
            Ok((r, _)) => SweepRow {
                factor,
                value,
                seed: cfg.seed,
                pckh: Some(r.pckh_05),
                pck_010: Some(r.pck_010),
                mpjpe_px: Some(r.mpjpe_px),
                vis_map: r.vis_map,
                error: None,
            },
            Err(e) => SweepRow {
                factor,
                value,
                seed: cfg.seed,
                pckh: None,
                pck_010: None,
                mpjpe_px: None,
                vis_map: None,
                error: Some(e.to_string()),
            },
        });
    }
    let mut best: Vec<(String, f64, f64)> = Vec::new();
    for r in &rows {
        let Some(m) = r.mpjpe_px else { continue };
        match best.iter_mut().find(|b| b.0 == r.factor) {
            Some(b) if m < b.2 => *b = (r.factor.clone(), r.value, m),
            Some(_) => {}
            None => best.push((r.factor.clone(), r.value, m)),
        }
    }
    Ok((
        SweepReport {
            split: Split::Val,
            rows,
            best: best.into_iter().map(|(f, v, _)| (f, v)).collect(),
        },
        timings,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationFlags {
    pub use_contrastive: bool,
    pub use_mlp: bool,
    pub use_transformer: bool,
    pub use_vis_head: bool,
}

impl AblationFlags {
    pub const FULL: AblationFlags = AblationFlags {
        use_contrastive: true,
        use_mlp: true,
        use_transformer: true,
        use_vis_head: true,
    };

    /// The five configurations of the published ablation table, in order.
    pub fn preset() -> Vec<AblationFlags> {
        let off_con = AblationFlags {
            use_contrastive: false,
            ..Self::FULL
        };
        vec![
            AblationFlags {
                use_mlp: false,
                ..off_con
            },
            AblationFlags {
                use_transformer: false,
                ..off_con
            },
            AblationFlags {
                use_vis_head: false,
                ..off_con
            },
            off_con,
            Self::FULL,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.use_contrastive || self.use_mlp || self.use_transformer || self.use_vis_head) {
            return Err(Error::Config("ablation must keep at least one component".into()));
        }
        Ok(())
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        c.model.use_mlp = self.use_mlp;
        c.model.use_transformer = self.use_transformer;
        c.model.use_vis_head = self.use_vis_head;
        if !self.use_transformer {
            c.model.query_tokens = 0;
        }
        if !self.use_contrastive {
            c.weights.lambda_con = 0.0;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub flags: AblationFlags,
    pub seed: u64,
    pub pck_005: Option<f64>,
    pub pck_010: Option<f64>,
    pub mpjpe_px: Option<f64>,
    pub vis_map: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub split: Split,
    pub rows: Vec<AblationRow>,
}

/// Trains one run per flag set and scores the best checkpoint on `split`.
pub fn ablate(
    data: &EmbeddedCorpus,
    flags: &[AblationFlags],
    base: &TrainConfig,
    split: Split,
) -> Result<(AblationReport, Timings)> {
    if flags.is_empty() {
        return Err(Error::Config("ablation needs at least one flag set".into()));
    }
    for f in flags {
        f.validate()?;
    }
    let mut rows = Vec::with_capacity(flags.len());
    let mut timings = Vec::with_capacity(flags.len());
    for (k, f) in flags.iter().enumerate() {
        let cfg = f.apply(base);
        log::info!("ablation {f:?}");
        let start = Instant::now();
        let result = train(data, &cfg).and_then(|o| evaluate_split(&o.best, data.split(split)));
        timings.push((format!("row{k}"), k as f64, start.elapsed().as_secs_f64()));
        rows.push(match result {
            Ok((r, _)) => AblationRow {
                flags: *f,
                seed: cfg.seed,
                pck_005: Some(r.pck_005),
                pck_010: Some(r.pck_010),
                mpjpe_px: Some(r.mpjpe_px),
                vis_map: r.vis_map,
                error: None,
            },
            Err(e) => AblationRow {
                flags: *f,
                seed: cfg.seed,
                pck_005: None,
                pck_010: None,
                mpjpe_px: None,
                vis_map: None,
                error: Some(e.to_string()),
            },
        });
    }
    Ok((AblationReport { split, rows }, timings))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub tolerance: f64,
    pub step: f64,
    /// Entries compared per parameter group; larger groups are subsampled.
    pub max_entries_per_group: usize,
    /// Relative errors use `max(|analytic|, |numeric|, floor)` as denominator.
    pub rel_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            step: 1e-5,
            max_entries_per_group: 48,
            rel_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub name: String,
    pub entries: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub groups: Vec<GroupCheck>,
    pub passed: bool,
}

/// Synthetic two-sample batch for gradient checks.
fn check_batch(seed: u64) -> Result<(Vec<TextEmbedding>, Vec<(crate::skeleton::Pose, Visibility)>)> {
    use crate::synthcorpus::{oracle_pose, PoseTemplate};
    let templates = PoseTemplate::all();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut emb = Vec::new();
    let mut targets = Vec::new();
    for _ in 0..2 {
        let t = templates[rng.gen_range(0..templates.len())];
        emb.push(embed_hashed(&crate::synthcorpus::caption_of(&t, 0)?)?);
        let (mut p, mut v) = oracle_pose(&t);
        // one extra hidden joint so every loss term is active
        let j = rng.gen_range(2..14);
        v.0[j] = 0.0;
        p[j] = crate::skeleton::Keypoint2D::new(0.05, -0.03);
        targets.push((p, v));
    }
    Ok((emb, targets))
}

/// Compares analytic gradients of the total loss with central differences,
/// in `f64`, on a fixed batch of two samples.
pub fn grad_check(cfg: &PoseGenConfig, weights: &LossWeights, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let model = PoseGenModel::<f64>::new(cfg.clone())?;
    let topo = SkeletonTopology::openpose18();
    let (emb, targets) = check_batch(opts.seed)?;
    let emb_refs: Vec<&TextEmbedding> = emb.iter().collect();
    let tgt_refs: Vec<_> = targets.iter().map(|(p, v)| (p, v)).collect();
    let mask_seed = opts.seed ^ 0xd809;
    let loss_of = |m: &PoseGenModel<f64>| -> Result<(f64, Gradients<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let (l, g, _) = m.objective(
            &emb_refs,
            &tgt_refs,
            &topo,
            weights,
            ClampGradient::Exact,
            Mode::Train,
            &mut rng,
        )?;
        Ok((l.total, g))
    };
    let (_, grads) = loss_of(&model)?;
    let mut pick = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37);
    let mut probe = model.clone();
    let mut groups = Vec::new();
    for idx in 0..model.params().len() {
        let id = ParamId(idx);
        let p = model.params().get(id);
        let n = p.value.len();
        let mut entries: Vec<usize> = (0..n).collect();
        if n > opts.max_entries_per_group {
            entries.shuffle(&mut pick);
            entries.truncate(opts.max_entries_per_group);
            entries.sort_unstable();
        }
        let mut worst = 0.0f64;
        for &k in &entries {
            let orig = p.value.data()[k];
            probe.params_mut().get_mut(id).value.data_mut()[k] = orig + opts.step;
            let (plus, _) = loss_of(&probe)?;
            probe.params_mut().get_mut(id).value.data_mut()[k] = orig - opts.step;
            let (minus, _) = loss_of(&probe)?;
            probe.params_mut().get_mut(id).value.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[k]);
            let denom = analytic.abs().max(numeric.abs()).max(opts.rel_floor);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
        groups.push(GroupCheck {
            name: p.name.clone(),
            entries: n,
            checked: entries.len(),
            max_rel_error: worst,
            passed: worst < opts.tolerance,
        });
    }
    let passed = groups.iter().all(|g| g.passed);
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        groups,
        passed,
    })
}

/// Hashes identifying one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub corpus_sha256: String,
    /// SHA-256 over `"blob <len>\0"` followed by the checkpoint bytes.
    pub checkpoint_digest: String,
    pub version: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of the corpus in its canonical JSONL form, split by split.
pub fn corpus_digest(corpus: &Corpus) -> Result<String> {
    let mut h = Sha256::new();
    for s in Split::ALL {
        let recs: Vec<_> = corpus.split(s).iter().map(PoseCapRecord::from_sample).collect();
        let mut buf = Vec::new();
        write_jsonl(&recs, &mut buf)?;
        h.update(s.file_name().as_bytes());
        h.update((buf.len() as u64).to_le_bytes());
        h.update(&buf);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn run_manifest(cfg: &TrainConfig, corpus: &Corpus, checkpoint: &[u8]) -> Result<RunManifest> {
    let mut blob = format!("blob {}\0", checkpoint.len()).into_bytes();
    blob.extend_from_slice(checkpoint);
    Ok(RunManifest {
        config_sha256: sha256_hex(serde_json::to_string(cfg)?.as_bytes()),
        corpus_sha256: corpus_digest(corpus)?,
        checkpoint_digest: sha256_hex(&blob),
        version: env!("CARGO_PKG_VERSION").to_owned(),
    })
}
