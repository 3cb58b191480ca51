//! The caption-to-pose network: an MLP projector from the 768-d caption
//! embedding, a learnable positional vector, a pre-norm transformer encoder,
//! coordinate and visibility heads, and the two unit-norm projections used by
//! the contrastive term.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{
    load_params, save_params, AttentionWeights, Gradients, Mode, ParamId, ParamStore, Real, Tape, Tensor, Var,
};
use crate::error::{Error, Result};
use crate::losses::{batch_objective, sigmoid, BatchPredictions, LossBreakdown, LossWeights};
use crate::skeleton::{Pose, SkeletonTopology, Visibility, IMAGE_SIDE, NUM_JOINTS};
use crate::textenc::{TextEmbedding, EMBED_DIM};

/// Width of the projector's hidden layer.
pub const MLP_HIDDEN: usize = 1024;

/// Predicted coordinates are clamped to `[-COORD_CLAMP, COORD_CLAMP]`.
pub const COORD_CLAMP: f64 = 1.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseGenConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub dropout_p: f64,
    pub proj_dim: usize,
    pub ffn_mult: usize,
    /// Learned tokens prepended to the encoder input; outputs are mean-pooled.
    pub query_tokens: usize,
    /// Off: a single affine map 768 → hidden_dim replaces the projector.
    pub use_mlp: bool,
    /// Off: the encoder is the identity.
    pub use_transformer: bool,
    /// Off: no visibility logits; every joint is predicted visible.
    pub use_vis_head: bool,
    pub seed: u64,
}

impl Default for PoseGenConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 512,
            num_layers: 6,
            num_heads: 8,
            dropout_p: 0.10,
            proj_dim: 256,
            ffn_mult: 4,
            query_tokens: 0,
            use_mlp: true,
            use_transformer: true,
            use_vis_head: true,
            seed: 0,
        }
    }
}

impl PoseGenConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.hidden_dim == 0 || self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
            return fail(format!(
                "hidden_dim {} must be a positive multiple of num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail(format!("dropout_p must be in [0, 1), got {}", self.dropout_p));
        }
        if self.proj_dim < 8 {
            return fail(format!("proj_dim must be ≥ 8, got {}", self.proj_dim));
        }
        if self.ffn_mult == 0 {
            return fail("ffn_mult must be ≥ 1".into());
        }
        if self.query_tokens > 0 && !self.use_transformer {
            return fail("query_tokens requires use_transformer".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    /// Number of scalar parameters the configuration instantiates.
    pub fn param_count(&self) -> usize {
        let (h, p) = (self.hidden_dim, self.proj_dim);
        let f = self.ffn_mult * h;
        let affine = |i: usize, o: usize| i * o + o;
        let mut n = if self.use_mlp {
            affine(EMBED_DIM, MLP_HIDDEN) + affine(MLP_HIDDEN, h)
        } else {
            affine(EMBED_DIM, h)
        };
        n += h + self.query_tokens * h;
        if self.use_transformer {
            n += self.num_layers * (4 * h + 4 * affine(h, h) + affine(h, f) + affine(f, h)) + 2 * h;
        }
        n += affine(h, 2 * NUM_JOINTS);
        if self.use_vis_head {
            n += affine(h, NUM_JOINTS);
        }
        n + affine(EMBED_DIM, p) + 2 * p + affine(h, p) + 2 * p
    }
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct Block {
    ln1: Norm,
    attn: AttentionWeights,
    ln2: Norm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Clone, Debug)]
struct Layout {
    mlp: Vec<Linear>,
    pos: ParamId,
    query: Option<ParamId>,
    blocks: Vec<Block>,
    final_ln: Option<Norm>,
    pose_head: Linear,
    vis_head: Option<Linear>,
    text_proj: (Linear, Norm),
    pose_proj: (Linear, Norm),
}

struct Builder<'a, T: Real> {
    store: ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    fn uniform(&mut self, name: String, shape: Vec<usize>, bound: f64) -> Result<ParamId> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64(self.rng.gen_range(-bound..=bound)))
            .collect();
        self.store.add(name, Tensor::new(shape, data)?)
    }

    fn constant(&mut self, name: String, len: usize, v: f64) -> Result<ParamId> {
        self.store.add(name, Tensor::new(vec![len], vec![T::from_f64(v); len])?)
    }

    fn linear(&mut self, name: &str, i: usize, o: usize) -> Result<Linear> {
        let bound = (6.0 / (i + o) as f64).sqrt();
        Ok(Linear {
            w: self.uniform(format!("{name}.weight"), vec![i, o], bound)?,
            b: self.constant(format!("{name}.bias"), o, 0.0)?,
        })
    }

    fn norm(&mut self, name: &str, d: usize) -> Result<Norm> {
        Ok(Norm {
            gain: self.constant(format!("{name}.gain"), d, 1.0)?,
            bias: self.constant(format!("{name}.bias"), d, 0.0)?,
        })
    }
}

fn build<T: Real>(cfg: &PoseGenConfig) -> Result<(ParamStore<T>, Layout)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut b = Builder {
        store: ParamStore::new(),
        rng: &mut rng,
    };
    let h = cfg.hidden_dim;
    let mlp = if cfg.use_mlp {
        vec![
            b.linear("mlp.fc1", EMBED_DIM, MLP_HIDDEN)?,
            b.linear("mlp.fc2", MLP_HIDDEN, h)?,
        ]
    } else {
        vec![b.linear("mlp.proj", EMBED_DIM, h)?]
    };
    let pos = b.constant("pos".into(), h, 0.0)?;
    let query = if cfg.query_tokens > 0 {
        let bound = (3.0 / h as f64).sqrt();
        Some(b.uniform("query_tokens".into(), vec![cfg.query_tokens, h], bound)?)
    } else {
        None
    };
    let mut blocks = Vec::new();
    if cfg.use_transformer {
        for l in 0..cfg.num_layers {
            let p = format!("encoder.{l}");
            let ln1 = b.norm(&format!("{p}.ln1"), h)?;
            let q = b.linear(&format!("{p}.attn.q"), h, h)?;
            let k = b.linear(&format!("{p}.attn.k"), h, h)?;
            let v = b.linear(&format!("{p}.attn.v"), h, h)?;
            let o = b.linear(&format!("{p}.attn.out"), h, h)?;
            let ln2 = b.norm(&format!("{p}.ln2"), h)?;
            let ff1 = b.linear(&format!("{p}.ffn.fc1"), h, cfg.ffn_mult * h)?;
            let ff2 = b.linear(&format!("{p}.ffn.fc2"), cfg.ffn_mult * h, h)?;
            blocks.push(Block {
                ln1,
                attn: AttentionWeights {
                    wq: q.w,
                    bq: q.b,
                    wk: k.w,
                    bk: k.b,
                    wv: v.w,
                    bv: v.b,
                    wo: o.w,
                    bo: o.b,
                },
                ln2,
                ff1,
                ff2,
            });
        }
    }
    let final_ln = if cfg.use_transformer {
        Some(b.norm("encoder.final_ln", h)?)
    } else {
        None
    };
    let pose_head = b.linear("pose_head", h, 2 * NUM_JOINTS)?;
    let vis_head = if cfg.use_vis_head {
        Some(b.linear("vis_head", h, NUM_JOINTS)?)
    } else {
        None
    };
    let text_proj = (
        b.linear("text_proj", EMBED_DIM, cfg.proj_dim)?,
        b.norm("text_proj.ln", cfg.proj_dim)?,
    );
    let pose_proj = (
        b.linear("pose_proj", h, cfg.proj_dim)?,
        b.norm("pose_proj.ln", cfg.proj_dim)?,
    );
    let layout = Layout {
        mlp,
        pos,
        query,
        blocks,
        final_ln,
        pose_head,
        vis_head,
        text_proj,
        pose_proj,
    };
    Ok((b.store, layout))
}

/// Tape handles to one batch's outputs.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// `[B, 36]` before clamping.
    pub raw_coords: Var,
    /// `[B, 36]`, clamped.
    pub coords: Var,
    /// `[B, 18]`.
    pub vis_logits: Option<Var>,
    /// `[B, proj_dim]`, unit rows.
    pub f_text: Var,
    pub f_pose: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    /// Normalized coordinates after clamping.
    pub coords: Pose,
    /// `None` when the model has no visibility head.
    pub vis_logits: Option<Vec<f64>>,
    pub f_text: Vec<f64>,
    pub f_pose: Vec<f64>,
    /// Whether any raw coordinate fell outside the clamp range.
    pub clamp_active: bool,
}

impl ModelOutput {
    /// Per-joint visibility probabilities; all ones without a visibility head.
    pub fn vis_probs(&self) -> Vec<f64> {
        match &self.vis_logits {
            Some(l) => l.iter().map(|&z| sigmoid(z)).collect(),
            None => vec![1.0; NUM_JOINTS],
        }
    }
}

/// How the loss gradient crosses the coordinate clamp.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClampGradient {
    /// The derivative of the clamp: zero outside the range.
    Exact,
    /// Passed to the raw head output unchanged, so saturated coordinates
    /// can still move back into range.
    StraightThrough,
}

/// Data-normalization facts stored next to a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub image_side: f64,
    pub embed_dim: usize,
    pub coord_clamp: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            image_side: IMAGE_SIDE,
            embed_dim: EMBED_DIM,
            coord_clamp: COORD_CLAMP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointSidecar {
    pub config: PoseGenConfig,
    pub normalization: Normalization,
    pub param_count: usize,
}

/// Path of the JSON sidecar belonging to a checkpoint file.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Clone, Debug)]
pub struct PoseGenModel<T: Real> {
    config: PoseGenConfig,
    params: ParamStore<T>,
    layout: Layout,
}

impl<T: Real> PoseGenModel<T> {
    /// Freshly initialized model; deterministic in `config.seed`.
    pub fn new(config: PoseGenConfig) -> Result<Self> {
        let (params, layout) = build(&config)?;
        Ok(Self { config, params, layout })
    }

    pub fn config(&self) -> &PoseGenConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> PoseGenModel<U> {
        PoseGenModel {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Replaces every parameter value with the one of the same name in
    /// `source`, checking names and shapes.
    pub fn load_values<U: Real>(&mut self, source: &ParamStore<U>) -> Result<()> {
        if source.len() != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameters, model expects {}",
                source.len(),
                self.params.len()
            )));
        }
        for src in source.iter() {
            let id = self
                .params
                .id(&src.name)
                .ok_or_else(|| Error::Format(format!("unexpected parameter {:?}", src.name)))?;
            let dst = self.params.get_mut(id);
            if dst.value.shape() != src.value.shape() {
                return Err(Error::Shape {
                    op: "load parameter",
                    lhs: dst.value.shape().to_vec(),
                    rhs: src.value.shape().to_vec(),
                });
            }
            dst.value = src.value.cast();
        }
        Ok(())
    }

    fn embeddings_tensor(embeddings: &[&TextEmbedding]) -> Result<Tensor<T>> {
        if embeddings.is_empty() {
            return Err(Error::Validation("batch must contain at least one embedding".into()));
        }
        let mut data = Vec::with_capacity(embeddings.len() * EMBED_DIM);
        for e in embeddings {
            if e.values().len() != EMBED_DIM {
                return Err(Error::DimensionMismatch {
                    expected: EMBED_DIM,
                    found: e.values().len(),
                });
            }
            data.extend(e.values().iter().map(|&v| T::from_f64(v as f64)));
        }
        Tensor::new(vec![embeddings.len(), EMBED_DIM], data)
    }

    /// Records the batch forward pass on `tape`.
    pub fn forward_tape<R: Rng>(
        &self,
        tape: &mut Tape<'_, T>,
        embeddings: &[&TextEmbedding],
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardVars> {
        let cfg = &self.config;
        let p = cfg.dropout_p;
        let e = tape.input(Self::embeddings_tensor(embeddings)?)?;

        tape.set_scope("mlp");
        let mut x = e;
        for (i, lin) in self.layout.mlp.iter().enumerate() {
            if i > 0 {
                x = tape.gelu(x)?;
            }
            x = tape.affine(x, lin.w, lin.b)?;
        }
        if cfg.use_mlp {
            x = tape.dropout(x, p, mode, rng)?;
        }
        tape.set_scope("pos");
        let pos = tape.param(self.layout.pos);
        x = tape.add_row(x, pos)?;

        let seq = cfg.query_tokens + 1;
        if let Some(q) = self.layout.query {
            let tokens = tape.param(q);
            x = tape.prepend_tokens(x, tokens)?;
        }
        for (l, blk) in self.layout.blocks.iter().enumerate() {
            tape.set_scope(format!("encoder.{l}"));
            let h = tape.layer_norm(x, blk.ln1.gain, blk.ln1.bias)?;
            let a = tape.multi_head_attention(h, &blk.attn, cfg.num_heads, seq)?;
            let a = tape.dropout(a, p, mode, rng)?;
            x = tape.add(x, a)?;
            let h = tape.layer_norm(x, blk.ln2.gain, blk.ln2.bias)?;
            let f = tape.affine(h, blk.ff1.w, blk.ff1.b)?;
            let f = tape.gelu(f)?;
            let f = tape.affine(f, blk.ff2.w, blk.ff2.b)?;
            let f = tape.dropout(f, p, mode, rng)?;
            x = tape.add(x, f)?;
        }
        if let Some(norm) = self.layout.final_ln {
            x = tape.layer_norm(x, norm.gain, norm.bias)?;
        }
        if self.layout.query.is_some() {
            tape.set_scope("pool");
            x = tape.mean_pool(x, seq)?;
        }

        tape.set_scope("pose_head");
        let raw_coords = tape.affine(x, self.layout.pose_head.w, self.layout.pose_head.b)?;
        let clamp = T::from_f64(COORD_CLAMP);
        let coords = tape.clamp(raw_coords, -clamp, clamp)?;
        tape.set_scope("vis_head");
        let vis_logits = match self.layout.vis_head {
            Some(lin) => Some(tape.affine(x, lin.w, lin.b)?),
            None => None,
        };
        tape.set_scope("text_proj");
        let (lin, norm) = self.layout.text_proj;
        let t = tape.affine(e, lin.w, lin.b)?;
        let t = tape.layer_norm(t, norm.gain, norm.bias)?;
        let f_text = tape.l2_normalize(t)?;
        tape.set_scope("pose_proj");
        let (lin, norm) = self.layout.pose_proj;
        let t = tape.affine(x, lin.w, lin.b)?;
        let t = tape.layer_norm(t, norm.gain, norm.bias)?;
        let f_pose = tape.l2_normalize(t)?;
        tape.set_scope("");
        Ok(ForwardVars {
            raw_coords,
            coords,
            vis_logits,
            f_text,
            f_pose,
        })
    }

    fn collect_outputs(tape: &Tape<'_, T>, vars: &ForwardVars, batch: usize) -> Vec<ModelOutput> {
        let rows = |v: Var, r: usize| -> Vec<f64> { tape.value(v).row(r).iter().map(|x| x.as_f64()).collect() };
        let limit = COORD_CLAMP;
        (0..batch)
            .map(|r| ModelOutput {
                coords: Pose::from_flat(&rows(vars.coords, r)),
                vis_logits: vars.vis_logits.map(|v| rows(v, r)),
                f_text: rows(vars.f_text, r),
                f_pose: rows(vars.f_pose, r),
                clamp_active: rows(vars.raw_coords, r).iter().any(|c| c.abs() > limit),
            })
            .collect()
    }

    pub fn batch_forward<R: Rng>(
        &self,
        embeddings: &[&TextEmbedding],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Vec<ModelOutput>> {
        let mut tape = Tape::new(&self.params);
        let vars = self.forward_tape(&mut tape, embeddings, mode, rng)?;
        Ok(Self::collect_outputs(&tape, &vars, embeddings.len()))
    }

    pub fn forward<R: Rng>(&self, embedding: &TextEmbedding, mode: Mode, rng: &mut R) -> Result<ModelOutput> {
        Ok(self.batch_forward(&[embedding], mode, rng)?.remove(0))
    }

    /// Total objective on one batch together with the gradient of every
    /// parameter and the batch's outputs.
    pub fn objective<R: Rng>(
        &self,
        embeddings: &[&TextEmbedding],
        targets: &[(&Pose, &Visibility)],
        topo: &SkeletonTopology,
        weights: &LossWeights,
        clamp: ClampGradient,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(LossBreakdown, Gradients<T>, Vec<ModelOutput>)> {
        let b = embeddings.len();
        let mut tape = Tape::new(&self.params);
        let vars = self.forward_tape(&mut tape, embeddings, mode, rng)?;
        let outputs = Self::collect_outputs(&tape, &vars, b);
        let preds = BatchPredictions {
            coords: outputs.iter().map(|o| o.coords.clone()).collect(),
            vis_logits: vars.vis_logits.map(|_| {
                outputs
                    .iter()
                    .map(|o| o.vis_logits.clone().unwrap_or_default())
                    .collect()
            }),
            f_text: outputs.iter().map(|o| o.f_text.clone()).collect(),
            f_pose: outputs.iter().map(|o| o.f_pose.clone()).collect(),
        };
        let (breakdown, g) = batch_objective(&preds, targets, topo, weights)?;
        let seed = |rows: &[Vec<f64>]| -> Result<Tensor<T>> {
            Tensor::from_rows(
                &rows
                    .iter()
                    .map(|r| r.iter().map(|&v| T::from_f64(v)).collect())
                    .collect::<Vec<_>>(),
            )
        };
        let coord_var = match clamp {
            ClampGradient::Exact => vars.coords,
            ClampGradient::StraightThrough => vars.raw_coords,
        };
        let mut seeds = vec![(coord_var, seed(&g.coords)?)];
        if let (Some(v), Some(gv)) = (vars.vis_logits, &g.vis_logits) {
            seeds.push((v, seed(gv)?));
        }
        if let Some(gt) = &g.f_text {
            seeds.push((vars.f_text, seed(gt)?));
        }
        if let Some(gp) = &g.f_pose {
            seeds.push((vars.f_pose, seed(gp)?));
        }
        let grads = tape.backward(seeds)?;
        Ok((breakdown, grads, outputs))
    }
}

impl PoseGenModel<f32> {
    /// Writes the PGCK1 parameter file and its JSON sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        save_params(&self.params, path)?;
        let sidecar = CheckpointSidecar {
            config: self.config.clone(),
            normalization: Normalization::default(),
            param_count: self.config.param_count(),
        };
        let side = sidecar_path(path);
        let mut text = serde_json::to_string_pretty(&sidecar)?;
        text.push('\n');
        std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let sidecar: CheckpointSidecar = serde_json::from_str(&text)?;
        if sidecar.normalization != Normalization::default() {
            return Err(Error::Format(format!(
                "checkpoint normalization {:?} is not supported",
                sidecar.normalization
            )));
        }
        let mut model = Self::new(sidecar.config)?;
        let params = load_params(path)?;
        model.load_values(&params)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textenc::embed_hashed;

    fn toy() -> PoseGenConfig {
        PoseGenConfig {
            hidden_dim: 32,
            num_layers: 1,
            num_heads: 2,
            proj_dim: 16,
            seed: 7,
            ..PoseGenConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(PoseGenConfig::default().validate().is_ok());
        assert_eq!(PoseGenConfig::default().head_dim(), 64);
        let bad = PoseGenConfig {
            hidden_dim: 510,
            ..PoseGenConfig::default()
        };
        assert!(matches!(PoseGenModel::<f32>::new(bad), Err(Error::Config(_))));
        let bad = PoseGenConfig {
            dropout_p: 1.0,
            ..PoseGenConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PoseGenConfig {
            proj_dim: 4,
            ..PoseGenConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let a = PoseGenModel::<f32>::new(toy()).unwrap();
        let b = PoseGenModel::<f32>::new(toy()).unwrap();
        assert_eq!(a.params(), b.params());
        let c = PoseGenModel::<f32>::new(PoseGenConfig { seed: 8, ..toy() }).unwrap();
        assert_ne!(a.params(), c.params());
        let pos = a.params().get(a.params().id("pos").unwrap());
        assert!(pos.value.data().iter().all(|&v| v == 0.0));
        let bias = a.params().get(a.params().id("mlp.fc1.bias").unwrap());
        assert!(bias.value.data().iter().all(|&v| v == 0.0));
        let w = a.params().get(a.params().id("mlp.fc1.weight").unwrap());
        let bound = (6.0f32 / (768.0 + 1024.0)).sqrt();
        assert!(w.value.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn output_contract() {
        let m = PoseGenModel::<f32>::new(toy()).unwrap();
        let e = embed_hashed("a person raising the left arm").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = m.forward(&e, Mode::Eval, &mut rng).unwrap();
        assert_eq!(out.coords.len(), 18);
        assert_eq!(out.vis_logits.as_ref().unwrap().len(), 18);
        assert_eq!((out.f_text.len(), out.f_pose.len()), (16, 16));
        for f in [&out.f_text, &out.f_pose] {
            let n = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
        assert_eq!(out, m.forward(&e, Mode::Eval, &mut rng).unwrap());
        let batch = m.batch_forward(&[&e, &e], Mode::Eval, &mut rng).unwrap();
        assert_eq!(batch[0], batch[1]);
        assert!(m.batch_forward(&[], Mode::Eval, &mut rng).is_err());
    }

    #[test]
    fn ablated_layouts() {
        let cfg = PoseGenConfig {
            use_mlp: false,
            use_transformer: false,
            use_vis_head: false,
            ..toy()
        };
        let m = PoseGenModel::<f32>::new(cfg.clone()).unwrap();
        assert_eq!(m.params().scalar_count(), cfg.param_count());
        assert!(m.params().id("mlp.proj.weight").is_some());
        assert!(m.params().id("encoder.0.ln1.gain").is_none());
        let e = embed_hashed("someone sitting").unwrap();
        let out = m.forward(&e, Mode::Train, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(out.vis_logits.is_none());
        assert_eq!(out.vis_probs(), vec![1.0; 18]);
    }

    #[test]
    fn query_tokens_pool_back_to_one_row() {
        let cfg = PoseGenConfig {
            query_tokens: 2,
            ..toy()
        };
        let m = PoseGenModel::<f32>::new(cfg.clone()).unwrap();
        assert_eq!(m.params().scalar_count(), cfg.param_count());
        let e = embed_hashed("a person walking").unwrap();
        let out = m
            .batch_forward(&[&e, &e, &e], Mode::Eval, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pgck");
        let m = PoseGenModel::<f32>::new(toy()).unwrap();
        m.save(&path).unwrap();
        assert!(sidecar_path(&path).exists());
        let back = PoseGenModel::<f32>::load(&path).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.config(), m.config());
    }
}
