//! The tipFormer network and its CNN-only ablation.
//!
//! Each side is encoded by a linear projection, a same-padded convolution
//! to `2d` channels, a GLU back to `d` and a LayerNorm. Interaction layers
//! then run toxin self-attention, toxin→protein cross-attention and a GLU
//! feed-forward block (each with residual + post-LayerNorm) on the toxin
//! track, and self-attention + feed-forward on the protein track. Both
//! final feature matrices are reduced by L2-softmax weighted pooling,
//! concatenated and fed through the prediction head.

mod config;
mod gradcheck;
mod hotspots;
mod layers;

pub use config::{EmbeddingKind, HotspotAggregate, ModelConfig, Variant};
pub use gradcheck::{param_grad_check, ParamGradReport};
pub use hotspots::{aggregate_columns, extract_hotspots, top_k_residues, Hotspot};
pub use layers::{multi_head_attention, scaled_dot_attention, weighted_pool, AttentionVars, LN_EPS};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::{SequenceInput, TokenVocabulary};
use crate::error::{Error, Result};
use crate::params::{uniform, uniform_fan_in, ParamId, ParamStore};
use crate::tensor::{Mode, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

/// `d → 2·ffn → GLU → ffn → d`.
#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct Encoder {
    /// Fallback token table, absent for precomputed embeddings.
    pub table: Option<ParamId>,
    pub proj: Linear,
    pub conv_weight: ParamId,
    pub conv_bias: ParamId,
    pub norm: Norm,
}

#[derive(Clone, Copy, Debug)]
pub struct Track {
    pub self_attn: Attention,
    pub self_norm: Norm,
    pub cross: Option<(Attention, Norm)>,
    pub ffn: FeedForward,
    pub ffn_norm: Norm,
}

#[derive(Clone, Copy, Debug)]
pub struct InteractionLayer {
    pub toxin: Track,
    pub protein: Track,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadLayer {
    pub linear: Linear,
    /// Present on every layer but the last.
    pub norm: Option<Norm>,
}

#[derive(Clone, Debug)]
pub struct Layout {
    pub toxin_encoder: Encoder,
    pub protein_encoder: Encoder,
    pub layers: Vec<InteractionLayer>,
    pub head: Vec<HeadLayer>,
}

struct Builder<'a, F: Scalar> {
    store: &'a mut ParamStore<F>,
    rng: &'a mut ChaCha8Rng,
}

impl<F: Scalar> Builder<'_, F> {
    fn weight(&mut self, name: String, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let t = uniform_fan_in(shape, fan_in, self.rng);
        self.store.add(name, t)
    }

    fn fill(&mut self, name: String, len: usize, value: f64) -> Result<ParamId> {
        self.store.add(name, Tensor::full(&[len], F::lit(value)))
    }

    fn linear(&mut self, name: &str, d_in: usize, d_out: usize, bias: bool) -> Result<Linear> {
        let weight = self.weight(format!("{name}.weight"), &[d_in, d_out], d_in)?;
        let bias = if bias { Some(self.fill(format!("{name}.bias"), d_out, 0.0)?) } else { None };
        Ok(Linear { weight, bias })
    }

    fn norm(&mut self, name: &str, d: usize) -> Result<Norm> {
        Ok(Norm { gamma: self.fill(format!("{name}.gamma"), d, 1.0)?, beta: self.fill(format!("{name}.beta"), d, 0.0)? })
    }

    fn attention(&mut self, name: &str, d: usize) -> Result<Attention> {
        let mut w = |p: &str| self.weight(format!("{name}.{p}"), &[d, d], d);
        Ok(Attention { wq: w("wq")?, wk: w("wk")?, wv: w("wv")?, wo: w("wo")? })
    }

    fn encoder(&mut self, name: &str, vocab: usize, c: &ModelConfig, d_in: usize) -> Result<Encoder> {
        let d = c.hidden;
        let table = match c.embedding {
            EmbeddingKind::Fallback => {
                // unit-variance entries
                let t = uniform(&[vocab, d_in], 3f64.sqrt(), self.rng);
                Some(self.store.add(format!("{name}.embed.table"), t)?)
            }
            EmbeddingKind::Precomputed => None,
        };
        let proj = self.linear(&format!("{name}.proj"), d_in, d, true)?;
        let k = c.conv_kernel;
        let conv_weight = self.weight(format!("{name}.conv.weight"), &[k, d, 2 * d], k * d)?;
        let conv_bias = self.fill(format!("{name}.conv.bias"), 2 * d, 0.0)?;
        let norm = self.norm(&format!("{name}.norm"), d)?;
        Ok(Encoder { table, proj, conv_weight, conv_bias, norm })
    }

    fn track(&mut self, name: &str, c: &ModelConfig, cross: bool) -> Result<Track> {
        let d = c.hidden;
        let f = c.ffn();
        let self_attn = self.attention(&format!("{name}.self_attn"), d)?;
        let self_norm = self.norm(&format!("{name}.self_norm"), d)?;
        let cross = if cross {
            Some((self.attention(&format!("{name}.cross_attn"), d)?, self.norm(&format!("{name}.cross_norm"), d)?))
        } else {
            None
        };
        let ffn = FeedForward {
            up: self.linear(&format!("{name}.ffn.up"), d, 2 * f, true)?,
            down: self.linear(&format!("{name}.ffn.down"), f, d, true)?,
        };
        let ffn_norm = self.norm(&format!("{name}.ffn_norm"), d)?;
        Ok(Track { self_attn, self_norm, cross, ffn, ffn_norm })
    }
}

/// Model weights plus the id layout used to find them.
#[derive(Clone, Debug)]
pub struct TipFormer<F: Scalar = f32> {
    config: ModelConfig,
    params: ParamStore<F>,
    layout: Layout,
}

/// Values of the three encoder stages for one sequence.
#[derive(Clone, Debug)]
pub struct EncoderActivation<F> {
    pub projected: Tensor<F>,
    pub gated: Tensor<F>,
    pub normalized: Tensor<F>,
}

/// Per-head weights of one interaction layer.
#[derive(Clone, Debug, Default)]
pub struct LayerAttention {
    /// `h` matrices of shape `n×n`.
    pub toxin_self: Vec<Tensor<f64>>,
    /// `h` matrices of shape `m×m`.
    pub protein_self: Vec<Tensor<f64>>,
    /// Toxin queries over protein keys, `h` matrices of shape `n×m`.
    pub cross: Vec<Tensor<f64>>,
    /// Protein queries over toxin keys (`m×n`), only with symmetric cross-attention.
    pub protein_cross: Vec<Tensor<f64>>,
}

#[derive(Clone, Debug)]
pub struct AttentionMap {
    pub layers: Vec<LayerAttention>,
    /// `n×m` product of the final toxin and protein feature matrices.
    pub interaction_map: Tensor<f64>,
}

#[derive(Clone, Debug)]
pub struct InteractionOutput {
    pub toxin_repr: Vec<f64>,
    pub protein_repr: Vec<f64>,
    pub attention: AttentionMap,
}

/// Tape nodes of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub prob: Var,
    /// `1×2d` concatenation fed to the head.
    pub features: Var,
    pub toxin_final: Var,
    pub protein_final: Var,
    pub layers: Vec<LayerAttention>,
}

struct Ctx<'a, F: Scalar> {
    tape: &'a mut Tape<F>,
    params: &'a ParamStore<F>,
    rng: &'a mut dyn RngCore,
    record: bool,
}

impl<F: Scalar> Ctx<'_, F> {
    fn p(&mut self, id: ParamId) -> Result<Var> {
        self.tape.param(id.index(), self.params.value(id))
    }

    fn linear(&mut self, x: Var, l: &Linear) -> Result<Var> {
        let w = self.p(l.weight)?;
        let y = self.tape.matmul(x, w)?;
        match l.bias {
            Some(b) => {
                let b = self.p(b)?;
                self.tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }

    fn norm(&mut self, x: Var, n: &Norm) -> Result<Var> {
        let g = self.p(n.gamma)?;
        let b = self.p(n.beta)?;
        self.tape.layer_norm(x, g, b, LN_EPS)
    }

    fn attend(&mut self, q_src: Var, kv_src: Var, a: &Attention, heads: usize) -> Result<(Var, Vec<Tensor<f64>>)> {
        let w = AttentionVars { wq: self.p(a.wq)?, wk: self.p(a.wk)?, wv: self.p(a.wv)?, wo: self.p(a.wo)? };
        let (out, weights) = multi_head_attention(self.tape, q_src, kv_src, w, heads)?;
        let rec = if self.record { weights.iter().map(|&v| self.tape.value(v).cast()).collect() } else { vec![] };
        Ok((out, rec))
    }

    /// `LN(x + sublayer)`.
    fn residual(&mut self, x: Var, sub: Var, n: &Norm) -> Result<Var> {
        let s = self.tape.add(x, sub)?;
        self.norm(s, n)
    }

    fn ffn(&mut self, x: Var, f: &FeedForward) -> Result<Var> {
        let up = self.linear(x, &f.up)?;
        let g = self.tape.glu(up)?;
        self.linear(g, &f.down)
    }
}

impl TipFormer<f32> {
    /// Builds a model with seeded initialisation: uniform(±1/√fan_in)
    /// weights, zero biases, unit LayerNorm gains, unit-variance fallback tables.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let config = config.resolved();
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let layout = {
            let mut b = Builder { store: &mut params, rng: &mut rng };
            let (dt, dp) = config.input_dims();
            let toxin_encoder = b.encoder("encoder.toxin", TokenVocabulary::smiles().size(), &config, dt)?;
            let protein_encoder = b.encoder("encoder.protein", TokenVocabulary::protein().size(), &config, dp)?;
            let mut layers = Vec::new();
            if config.variant == Variant::Tipformer {
                for i in 0..config.interaction_layers {
                    let toxin = b.track(&format!("interaction.{i}.toxin"), &config, true)?;
                    let protein = b.track(&format!("interaction.{i}.protein"), &config, config.symmetric_cross)?;
                    layers.push(InteractionLayer { toxin, protein });
                }
            }
            let widths = config.head_widths();
            let mut head = Vec::new();
            for j in 0..widths.len() - 1 {
                let linear = b.linear(&format!("head.{j}"), widths[j], widths[j + 1], true)?;
                let norm =
                    if j + 2 < widths.len() { Some(b.norm(&format!("head.{j}.norm"), widths[j + 1])?) } else { None };
                head.push(HeadLayer { linear, norm });
            }
            Layout { toxin_encoder, protein_encoder, layers, head }
        };
        Ok(TipFormer { config, params, layout })
    }
}

impl<F: Scalar> TipFormer<F> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn cast<G: Scalar>(&self) -> TipFormer<G> {
        TipFormer { config: self.config.clone(), params: self.params.cast(), layout: self.layout.clone() }
    }

    /// Width of the vector fed to the head (`2d`).
    pub fn feature_dim(&self) -> usize {
        2 * self.config.hidden
    }

    fn embed(&self, ctx: &mut Ctx<'_, F>, enc: &Encoder, input: &SequenceInput, d_in: usize) -> Result<Var> {
        match input {
            SequenceInput::Tokens(t) => {
                let table = enc
                    .table
                    .ok_or_else(|| Error::config("model expects precomputed embeddings but got token input"))?;
                let table = ctx.p(table)?;
                ctx.tape.gather(table, t)
            }
            SequenceInput::Embedded(m) => {
                if enc.table.is_some() {
                    return Err(Error::config("model uses fallback embeddings but got a precomputed matrix"));
                }
                if m.cols() != d_in {
                    return Err(Error::config(format!("embedding width {} does not match encoder input {d_in}", m.cols())));
                }
                ctx.tape.constant(m.cast())
            }
        }
    }

    fn encode_vars(
        &self,
        ctx: &mut Ctx<'_, F>,
        enc: &Encoder,
        input: &SequenceInput,
        d_in: usize,
    ) -> Result<(Var, Var, Var)> {
        let x = self.embed(ctx, enc, input, d_in)?;
        let projected = ctx.linear(x, &enc.proj)?;
        let w = ctx.p(enc.conv_weight)?;
        let b = ctx.p(enc.conv_bias)?;
        let conv = ctx.tape.conv1d(projected, w, b)?;
        let gated = ctx.tape.glu(conv)?;
        let normalized = ctx.norm(gated, &enc.norm)?;
        Ok((projected, gated, normalized))
    }

    fn interaction(&self, ctx: &mut Ctx<'_, F>, layer: &InteractionLayer, t: Var, p: Var) -> Result<(Var, Var, LayerAttention)> {
        let h = self.config.heads;
        let mut rec = LayerAttention::default();

        let tt = &layer.toxin;
        let (sa, w) = ctx.attend(t, t, &tt.self_attn, h)?;
        rec.toxin_self = w;
        let t1 = ctx.residual(t, sa, &tt.self_norm)?;
        let (ca, cn) = tt.cross.as_ref().expect("toxin track has cross-attention");
        let (xa, w) = ctx.attend(t1, p, ca, h)?;
        rec.cross = w;
        let t2 = ctx.residual(t1, xa, cn)?;
        let f = ctx.ffn(t2, &tt.ffn)?;
        let t_out = ctx.residual(t2, f, &tt.ffn_norm)?;

        let pt = &layer.protein;
        let (sa, w) = ctx.attend(p, p, &pt.self_attn, h)?;
        rec.protein_self = w;
        let mut p1 = ctx.residual(p, sa, &pt.self_norm)?;
        if let Some((ca, cn)) = &pt.cross {
            let (xa, w) = ctx.attend(p1, t, ca, h)?;
            rec.protein_cross = w;
            p1 = ctx.residual(p1, xa, cn)?;
        }
        let f = ctx.ffn(p1, &pt.ffn)?;
        let p_out = ctx.residual(p1, f, &pt.ffn_norm)?;
        Ok((t_out, p_out, rec))
    }

    fn head(&self, ctx: &mut Ctx<'_, F>, features: Var) -> Result<Var> {
        let mut h = features;
        for layer in &self.layout.head {
            h = ctx.linear(h, &layer.linear)?;
            if let Some(n) = &layer.norm {
                h = ctx.tape.dropout(h, self.config.dropout, ctx.rng)?;
                h = ctx.norm(h, n)?;
            }
        }
        ctx.tape.sigmoid(h)
    }

    /// Records a full forward pass on `tape`. Dropout draws from `rng` in
    /// train mode; with `record` set, attention weights are copied out.
    pub fn forward(
        &self,
        tape: &mut Tape<F>,
        toxin: &SequenceInput,
        protein: &SequenceInput,
        rng: &mut dyn RngCore,
        record: bool,
    ) -> Result<ForwardOutput> {
        let params = &self.params;
        let mut ctx = Ctx { tape, params, rng, record };
        let (dt, dp) = self.config.input_dims();
        let (_, _, mut t) = self.encode_vars(&mut ctx, &self.layout.toxin_encoder, toxin, dt)?;
        let (_, _, mut p) = self.encode_vars(&mut ctx, &self.layout.protein_encoder, protein, dp)?;
        let mut layers = Vec::new();
        let (o1, o2) = match self.config.variant {
            Variant::Tipformer => {
                for layer in &self.layout.layers {
                    let (nt, np, rec) = self.interaction(&mut ctx, layer, t, p)?;
                    t = nt;
                    p = np;
                    layers.push(rec);
                }
                (weighted_pool(ctx.tape, t)?, weighted_pool(ctx.tape, p)?)
            }
            Variant::Deepcnn => (ctx.tape.mean_rows(t)?, ctx.tape.mean_rows(p)?),
        };
        let features = ctx.tape.concat_cols(&[o1, o2])?;
        let prob = self.head(&mut ctx, features)?;
        Ok(ForwardOutput { prob, features, toxin_final: t, protein_final: p, layers })
    }

    /// Runs one side's encoder in eval mode.
    pub fn encode(&self, input: &SequenceInput, toxin_side: bool) -> Result<EncoderActivation<F>> {
        let mut tape = Tape::new(Mode::Eval);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = Ctx { tape: &mut tape, params: &self.params, rng: &mut rng, record: false };
        let (dt, dp) = self.config.input_dims();
        let (enc, d_in) =
            if toxin_side { (&self.layout.toxin_encoder, dt) } else { (&self.layout.protein_encoder, dp) };
        let (a, b, c) = self.encode_vars(&mut ctx, enc, input, d_in)?;
        Ok(EncoderActivation {
            projected: tape.value(a).clone(),
            gated: tape.value(b).clone(),
            normalized: tape.value(c).clone(),
        })
    }

    /// Runs interaction layer `index` in eval mode on `n×d` toxin and `m×d`
    /// protein feature matrices.
    pub fn interaction_layer(
        &self,
        index: usize,
        toxin: &Tensor<F>,
        protein: &Tensor<F>,
    ) -> Result<(Tensor<F>, Tensor<F>, LayerAttention)> {
        let layer = self.layout.layers.get(index).ok_or_else(|| {
            Error::usage(format!("layer {index} out of range ({} interaction layers)", self.layout.layers.len()))
        })?;
        let mut tape = Tape::new(Mode::Eval);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = tape.constant(toxin.clone())?;
        let p = tape.constant(protein.clone())?;
        let mut ctx = Ctx { tape: &mut tape, params: &self.params, rng: &mut rng, record: true };
        let (a, b, rec) = self.interaction(&mut ctx, layer, t, p)?;
        Ok((tape.value(a).clone(), tape.value(b).clone(), rec))
    }

    /// Eval-mode interaction probability.
    pub fn predict(&self, toxin: &SequenceInput, protein: &SequenceInput) -> Result<f64> {
        let mut tape = Tape::new(Mode::Eval);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, toxin, protein, &mut rng, false)?;
        Ok(tape.value(out.prob).data()[0].as_f64())
    }

    /// Eval-mode probability together with pooled representations and attention.
    pub fn predict_details(&self, toxin: &SequenceInput, protein: &SequenceInput) -> Result<(f64, InteractionOutput)> {
        let mut tape = Tape::new(Mode::Eval);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, toxin, protein, &mut rng, true)?;
        let d = self.config.hidden;
        let feats: Vec<f64> = tape.value(out.features).data().iter().map(|v| v.as_f64()).collect();
        let ht: Tensor<f64> = tape.value(out.toxin_final).cast();
        let hp: Tensor<f64> = tape.value(out.protein_final).cast();
        let (n, m) = (ht.rows(), hp.rows());
        let mut map = vec![0.0; n * m];
        crate::tensor::matmul_bt_into(ht.data(), hp.data(), &mut map, n, d, m);
        let output = InteractionOutput {
            toxin_repr: feats[..d].to_vec(),
            protein_repr: feats[d..].to_vec(),
            attention: AttentionMap { layers: out.layers, interaction_map: Tensor::matrix(n, m, map)? },
        };
        Ok((tape.value(out.prob).data()[0].as_f64(), output))
    }

    /// Eval-mode `[o_1 ‖ o_2]` feature vector.
    pub fn features(&self, toxin: &SequenceInput, protein: &SequenceInput) -> Result<Vec<F>> {
        let mut tape = Tape::new(Mode::Eval);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, toxin, protein, &mut rng, false)?;
        Ok(tape.value(out.features).data().to_vec())
    }
}

/// CNN-only probability; errors unless the model is the `deepcnn` variant.
pub fn predict_pair_deepcnn<F: Scalar>(model: &TipFormer<F>, toxin: &SequenceInput, protein: &SequenceInput) -> Result<f64> {
    if model.config().variant != Variant::Deepcnn {
        return Err(Error::config("predict_pair_deepcnn needs a deepcnn model"));
    }
    model.predict(toxin, protein)
}
