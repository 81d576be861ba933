//! The referring-expression network: a shared embedding table, two
//! bidirectional LSTM context encoders (pre- and pos-context), and an LSTM
//! decoder whose per-step context vector is computed by one of three
//! variants.
//!
//! * `Seq2Seq`: `c = [mean_t h_pre, mean_t h_pos]`, constant over steps.
//! * `CAtt`: additive attention on each side, `c = [c_pre, c_pos]`.
//! * `HierAtt`: per-side attention summaries re-weighted by a second
//!   attention over the two sides, `c = sum_k beta_k U_b^k c_k`.
//!
//! An empty context side contributes a zero vector. For `HierAtt` the zero
//! summary still takes part in the side-level softmax.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{BOS_ID, EOS_ID};
use crate::corpus::{RefexInstance, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::checkpoint::{read_checkpoint, write_checkpoint};
use crate::numerics::{glorot_uniform, Graph, ParamId, ParameterStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderVariant {
    Seq2Seq,
    CAtt,
    HierAtt,
}

impl DecoderVariant {
    pub const ALL: [DecoderVariant; 3] = [DecoderVariant::Seq2Seq, DecoderVariant::CAtt, DecoderVariant::HierAtt];
}

impl FromStr for DecoderVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "seq2seq" => Ok(DecoderVariant::Seq2Seq),
            "catt" => Ok(DecoderVariant::CAtt),
            "hieratt" => Ok(DecoderVariant::HierAtt),
            _ => Err(Error::InvalidArgument(format!(
                "unknown decoder variant `{s}` (valid: seq2seq, catt, hieratt)"
            ))),
        }
    }
}

impl fmt::Display for DecoderVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderVariant::Seq2Seq => "seq2seq",
            DecoderVariant::CAtt => "catt",
            DecoderVariant::HierAtt => "hieratt",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim_per_direction: usize,
    /// Decoder LSTM size; `2 * hidden_dim_per_direction` by default.
    pub decoder_hidden_dim: usize,
    /// Inner size of the additive attention (`W_a`, `U_a`, `v_a`).
    pub attention_dim: usize,
    /// Output size of the side projection `U_b` in `HierAtt`.
    pub hier_proj_dim: usize,
    pub decoder_variant: DecoderVariant,
    pub dropout_p: f64,
    pub vocab_size: usize,
    /// Frequency threshold used to build the vocabulary.
    pub min_count: usize,
}

impl ModelConfig {
    /// 300-d embeddings, 512 units per encoder direction.
    pub fn new(variant: DecoderVariant, vocab_size: usize) -> Self {
        Self::with_dims(variant, vocab_size, 300, 512)
    }

    pub fn with_dims(variant: DecoderVariant, vocab_size: usize, embed_dim: usize, hidden: usize) -> Self {
        Self {
            embed_dim,
            hidden_dim_per_direction: hidden,
            decoder_hidden_dim: 2 * hidden,
            attention_dim: 2 * hidden,
            hier_proj_dim: 2 * hidden,
            decoder_variant: variant,
            dropout_p: 0.2,
            vocab_size,
            min_count: 1,
        }
    }

    pub fn annotation_dim(&self) -> usize {
        2 * self.hidden_dim_per_direction
    }

    /// Size of the context vector fed to the decoder.
    pub fn context_dim(&self) -> usize {
        match self.decoder_variant {
            DecoderVariant::Seq2Seq | DecoderVariant::CAtt => 2 * self.annotation_dim(),
            DecoderVariant::HierAtt => self.hier_proj_dim,
        }
    }

    pub fn decoder_input_dim(&self) -> usize {
        self.context_dim() + 2 * self.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.embed_dim,
            self.hidden_dim_per_direction,
            self.decoder_hidden_dim,
            self.attention_dim,
            self.hier_proj_dim,
        ];
        if dims.contains(&0) {
            return Err(Error::InvalidArgument("model dimensions must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidArgument(format!(
                "dropout_p {} not in [0,1)",
                self.dropout_p
            )));
        }
        if self.vocab_size <= EOS_ID {
            return Err(Error::InvalidArgument(
                "vocab_size must cover the special tokens".into(),
            ));
        }
        if self.min_count == 0 {
            return Err(Error::InvalidArgument("min_count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Pre,
    Pos,
}

impl Side {
    fn name(self) -> &'static str {
        match self {
            Side::Pre => "pre",
            Side::Pos => "pos",
        }
    }

    fn index(self) -> usize {
        match self {
            Side::Pre => 0,
            Side::Pos => 1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LstmParams {
    weight: ParamId,
    bias: ParamId,
}

/// `e_j = v^T tanh(W s + U h_j)`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub w: ParamId,
    pub u: ParamId,
    pub v: ParamId,
}

#[derive(Debug, Clone)]
struct ParamIds {
    embedding: ParamId,
    // [side][direction]
    encoders: [[LstmParams; 2]; 2],
    decoder: LstmParams,
    attention: Option<[AttentionParams; 2]>,
    hier: Option<[AttentionParams; 2]>,
    output_weight: ParamId,
    output_bias: ParamId,
}

impl ParamIds {
    fn resolve(store: &ParameterStore, variant: DecoderVariant) -> Result<Self> {
        let lstm = |prefix: &str| -> Result<LstmParams> {
            Ok(LstmParams {
                weight: store.id(&format!("{prefix}.weight"))?,
                bias: store.id(&format!("{prefix}.bias"))?,
            })
        };
        let attn = |prefix: &str| -> Result<[AttentionParams; 2]> {
            let one = |side: Side| -> Result<AttentionParams> {
                Ok(AttentionParams {
                    w: store.id(&format!("{prefix}.{}.w", side.name()))?,
                    u: store.id(&format!("{prefix}.{}.u", side.name()))?,
                    v: store.id(&format!("{prefix}.{}.v", side.name()))?,
                })
            };
            Ok([one(Side::Pre)?, one(Side::Pos)?])
        };
        let encoders = [
            [lstm("encoder.pre.fwd")?, lstm("encoder.pre.bwd")?],
            [lstm("encoder.pos.fwd")?, lstm("encoder.pos.bwd")?],
        ];
        let uses_attention = variant != DecoderVariant::Seq2Seq;
        Ok(Self {
            embedding: store.id("embedding")?,
            encoders,
            decoder: lstm("decoder")?,
            attention: if uses_attention { Some(attn("attention")?) } else { None },
            hier: if variant == DecoderVariant::HierAtt {
                Some(attn("hier")?)
            } else {
                None
            },
            output_weight: store.id("output.weight")?,
            output_bias: store.id("output.bias")?,
        })
    }
}

/// Annotation vectors `h_t = [fwd_t, bwd_t]` for one context side.
#[derive(Debug, Clone)]
pub struct EncodedContext {
    pub side: Side,
    pub annotations: Vec<Var>,
}

/// Both encoded sides, the entity embedding, and per-side `U_a h_j`
/// projections cached for attention.
#[derive(Debug, Clone)]
pub struct EncodedInstance {
    pub pre: EncodedContext,
    pub pos: EncodedContext,
    pub entity: Var,
    projected: [Vec<Var>; 2],
    fixed_context: Option<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub hidden: Var,
    pub cell: Var,
    pub step_index: usize,
}

/// Attention weights observed during one decoder step.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StepTrace {
    pub alpha_pre: Option<Vec<f64>>,
    pub alpha_pos: Option<Vec<f64>>,
    pub beta: Option<[f64; 2]>,
}

/// Token indices for one instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedInstance {
    pub pre: Vec<usize>,
    pub entity: usize,
    pub pos: Vec<usize>,
    pub target: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
    vocabulary: Vec<String>,
    vocabulary_fingerprint: String,
}

/// Dropout source for training passes; `None` means inference.
pub type TrainRng<'r> = Option<&'r mut ChaCha8Rng>;

#[derive(Debug, Clone)]
pub struct RefexModel {
    config: ModelConfig,
    vocab: Vocabulary,
    store: ParameterStore,
    ids: ParamIds,
}

fn lstm_shapes(input: usize, hidden: usize) -> ([usize; 2], [usize; 1]) {
    ([4 * hidden, input + hidden], [4 * hidden])
}

impl RefexModel {
    /// Fresh parameters: Glorot-uniform matrices and vectors, zero biases
    /// except LSTM forget gates, which start at 1.
    pub fn new(mut config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.vocab_size = vocab.len();
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let (e, h, d, v) = (
            config.embed_dim,
            config.hidden_dim_per_direction,
            config.decoder_hidden_dim,
            config.vocab_size,
        );
        let ann = config.annotation_dim();

        store.add("embedding", glorot_uniform(&[v, e], &mut rng)?)?;
        let mut add_lstm = |store: &mut ParameterStore, prefix: &str, input: usize, hidden: usize| -> Result<()> {
            let (ws, bs) = lstm_shapes(input, hidden);
            store.add(format!("{prefix}.weight"), glorot_uniform(&ws, &mut rng)?)?;
            let mut bias = Tensor::zeros(&bs);
            bias.data_mut()[hidden..2 * hidden].fill(1.0);
            store.add(format!("{prefix}.bias"), bias)?;
            Ok(())
        };
        for side in ["pre", "pos"] {
            for dir in ["fwd", "bwd"] {
                add_lstm(&mut store, &format!("encoder.{side}.{dir}"), e, h)?;
            }
        }
        add_lstm(&mut store, "decoder", config.decoder_input_dim(), d)?;
        if config.decoder_variant != DecoderVariant::Seq2Seq {
            let a = config.attention_dim;
            for side in ["pre", "pos"] {
                store.add(format!("attention.{side}.w"), glorot_uniform(&[a, d], &mut rng)?)?;
                store.add(format!("attention.{side}.u"), glorot_uniform(&[a, ann], &mut rng)?)?;
                store.add(format!("attention.{side}.v"), glorot_uniform(&[a], &mut rng)?)?;
            }
        }
        if config.decoder_variant == DecoderVariant::HierAtt {
            let p = config.hier_proj_dim;
            for side in ["pre", "pos"] {
                store.add(format!("hier.{side}.w"), glorot_uniform(&[p, d], &mut rng)?)?;
                store.add(format!("hier.{side}.u"), glorot_uniform(&[p, ann], &mut rng)?)?;
                store.add(format!("hier.{side}.v"), glorot_uniform(&[p], &mut rng)?)?;
            }
        }
        store.add("output.weight", glorot_uniform(&[v, d], &mut rng)?)?;
        store.add("output.bias", Tensor::zeros(&[v]))?;
        let ids = ParamIds::resolve(&store, config.decoder_variant)?;
        Ok(Self {
            config,
            vocab,
            store,
            ids,
        })
    }

    /// Rebuilds a model from stored parameters, checking every expected shape.
    pub fn from_parts(config: ModelConfig, vocab: Vocabulary, store: ParameterStore) -> Result<Self> {
        let reference = Self::new(config, vocab.clone(), 0)?;
        if reference.store.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                reference.store.len(),
                store.len()
            )));
        }
        for (_, p) in reference.store.iter() {
            let got = store.value(store.id(&p.name)?);
            if got.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    p.name,
                    got.shape(),
                    p.value.shape()
                )));
            }
        }
        let ids = ParamIds::resolve(&store, reference.config.decoder_variant)?;
        Ok(Self {
            config: reference.config,
            vocab,
            store,
            ids,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    pub fn embedding_param(&self) -> ParamId {
        self.ids.embedding
    }

    pub fn attention_params(&self, side: Side) -> Option<AttentionParams> {
        self.ids.attention.map(|a| a[side.index()])
    }

    pub fn hier_params(&self, side: Side) -> Option<AttentionParams> {
        self.ids.hier.map(|a| a[side.index()])
    }

    pub fn set_dropout(&mut self, p: f64) -> Result<()> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout_p {p} not in [0,1)")));
        }
        self.config.dropout_p = p;
        Ok(())
    }

    pub fn index_instance(&self, inst: &RefexInstance) -> IndexedInstance {
        IndexedInstance {
            pre: self.vocab.encode(&inst.pre_context),
            entity: self.vocab.lookup(&inst.entity),
            pos: self.vocab.encode(&inst.pos_context),
            target: self.vocab.encode(&inst.gold_refex),
        }
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.config.vocab_size {
            return Err(Error::IndexOutOfRange {
                index: i,
                size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn maybe_dropout(&self, g: &mut Graph, x: Var, rng: &mut TrainRng) -> Result<Var> {
        match rng {
            Some(r) if self.config.dropout_p > 0.0 => g.dropout(x, self.config.dropout_p, &mut **r),
            _ => Ok(x),
        }
    }

    fn lstm_step(g: &mut Graph, params: LstmParams, input: Var, hidden: Var, cell: Var) -> Result<(Var, Var)> {
        let n = g.shape(hidden)[0];
        let w = g.param(params.weight);
        let b = g.param(params.bias);
        let xh = g.concat(&[input, hidden])?;
        let z = g.matmul(w, xh)?;
        let z = g.add(z, b)?;
        let i = g.slice(z, 0, n)?;
        let i = g.sigmoid(i)?;
        let f = g.slice(z, n, n)?;
        let f = g.sigmoid(f)?;
        let cand = g.slice(z, 2 * n, n)?;
        let cand = g.tanh(cand)?;
        let o = g.slice(z, 3 * n, n)?;
        let o = g.sigmoid(o)?;
        let keep = g.elementwise_mul(f, cell)?;
        let write = g.elementwise_mul(i, cand)?;
        let cell = g.add(keep, write)?;
        let squashed = g.tanh(cell)?;
        let hidden = g.elementwise_mul(o, squashed)?;
        Ok((hidden, cell))
    }

    fn zeros(g: &mut Graph, n: usize) -> Result<Var> {
        g.input(Tensor::zeros(&[n]))
    }

    /// Runs the side's forward and backward LSTMs over shared embeddings and
    /// concatenates their states per timestep.
    pub fn encode_context(
        &self,
        g: &mut Graph,
        tokens: &[usize],
        side: Side,
        rng: &mut TrainRng,
    ) -> Result<EncodedContext> {
        for &t in tokens {
            self.check_index(t)?;
        }
        let h = self.config.hidden_dim_per_direction;
        let embedded: Vec<Var> = tokens
            .iter()
            .map(|&t| g.embedding_lookup(self.ids.embedding, t))
            .collect::<Result<_>>()?;
        let [fwd, bwd] = self.ids.encoders[side.index()];

        let mut forward = Vec::with_capacity(tokens.len());
        let (mut hs, mut cs) = (Self::zeros(g, h)?, Self::zeros(g, h)?);
        for &x in &embedded {
            (hs, cs) = Self::lstm_step(g, fwd, x, hs, cs)?;
            forward.push(hs);
        }
        let mut backward = vec![hs; tokens.len()];
        let (mut hs, mut cs) = (Self::zeros(g, h)?, Self::zeros(g, h)?);
        for (t, &x) in embedded.iter().enumerate().rev() {
            (hs, cs) = Self::lstm_step(g, bwd, x, hs, cs)?;
            backward[t] = hs;
        }
        let annotations = forward
            .into_iter()
            .zip(backward)
            .map(|(f, b)| {
                let a = g.concat(&[f, b])?;
                self.maybe_dropout(g, a, rng)
            })
            .collect::<Result<_>>()?;
        Ok(EncodedContext { side, annotations })
    }

    /// Encodes both contexts and looks up the entity embedding.
    pub fn encode_instance(
        &self,
        g: &mut Graph,
        inst: &IndexedInstance,
        rng: &mut TrainRng,
    ) -> Result<EncodedInstance> {
        self.check_index(inst.entity)?;
        let pre = self.encode_context(g, &inst.pre, Side::Pre, rng)?;
        let pos = self.encode_context(g, &inst.pos, Side::Pos, rng)?;
        let entity = g.embedding_lookup(self.ids.embedding, inst.entity)?;
        let mut projected = [Vec::new(), Vec::new()];
        if let Some(attn) = self.ids.attention {
            for enc in [&pre, &pos] {
                let u = g.param(attn[enc.side.index()].u);
                projected[enc.side.index()] = enc.annotations.iter().map(|&h| g.matmul(u, h)).collect::<Result<_>>()?;
            }
        }
        let fixed_context = match self.config.decoder_variant {
            DecoderVariant::Seq2Seq => Some(self.context_vector_seq2seq(g, &pre, &pos)?),
            _ => None,
        };
        Ok(EncodedInstance {
            pre,
            pos,
            entity,
            projected,
            fixed_context,
        })
    }

    fn mean_or_zero(&self, g: &mut Graph, enc: &EncodedContext) -> Result<Var> {
        if enc.annotations.is_empty() {
            Self::zeros(g, self.config.annotation_dim())
        } else {
            g.mean_over_time(&enc.annotations)
        }
    }

    /// `[mean_t h_pre, mean_t h_pos]`; an empty side averages to zeros.
    pub fn context_vector_seq2seq(&self, g: &mut Graph, pre: &EncodedContext, pos: &EncodedContext) -> Result<Var> {
        let a = self.mean_or_zero(g, pre)?;
        let b = self.mean_or_zero(g, pos)?;
        g.concat(&[a, b])
    }

    /// Additive attention of `s_prev` over `annotations`, given the cached
    /// `U h_j` projections. Returns the weights and the weighted summary.
    pub fn attention(
        g: &mut Graph,
        s_prev: Var,
        annotations: &[Var],
        projected: &[Var],
        params: AttentionParams,
    ) -> Result<(Var, Var)> {
        if annotations.is_empty() {
            return Err(Error::Empty("attention over an empty context"));
        }
        let w = g.param(params.w);
        let v = g.param(params.v);
        let ws = g.matmul(w, s_prev)?;
        let energies = projected
            .iter()
            .map(|&p| {
                let pre = g.add(ws, p)?;
                let act = g.tanh(pre)?;
                g.dot(v, act)
            })
            .collect::<Result<Vec<_>>>()?;
        let e = g.concat(&energies)?;
        let alpha = g.softmax(e)?;
        let summary = g.weighted_sum(alpha, annotations)?;
        Ok((alpha, summary))
    }

    fn side_summary(
        &self,
        g: &mut Graph,
        s_prev: Var,
        enc: &EncodedInstance,
        side: Side,
    ) -> Result<(Var, Option<Vec<f64>>)> {
        let ctx = match side {
            Side::Pre => &enc.pre,
            Side::Pos => &enc.pos,
        };
        if ctx.annotations.is_empty() {
            return Ok((Self::zeros(g, self.config.annotation_dim())?, None));
        }
        let params = self.ids.attention.expect("attention variant")[side.index()];
        let (alpha, c) = Self::attention(g, s_prev, &ctx.annotations, &enc.projected[side.index()], params)?;
        Ok((c, Some(g.value(alpha).data().to_vec())))
    }

    /// `[c_pre, c_pos]` from per-side attention.
    pub fn context_vector_catt(&self, g: &mut Graph, s_prev: Var, enc: &EncodedInstance) -> Result<(Var, StepTrace)> {
        let (c_pre, alpha_pre) = self.side_summary(g, s_prev, enc, Side::Pre)?;
        let (c_pos, alpha_pos) = self.side_summary(g, s_prev, enc, Side::Pos)?;
        let c = g.concat(&[c_pre, c_pos])?;
        Ok((
            c,
            StepTrace {
                alpha_pre,
                alpha_pos,
                beta: None,
            },
        ))
    }

    /// `e_k = v_b^T tanh(W_b s + U_b c_k)`, `beta = softmax(e)`,
    /// `c = sum_k beta_k U_b c_k` with `U_b` applied inside the sum.
    pub fn context_vector_hieratt(
        &self,
        g: &mut Graph,
        s_prev: Var,
        enc: &EncodedInstance,
    ) -> Result<(Var, StepTrace)> {
        let (c_pre, alpha_pre) = self.side_summary(g, s_prev, enc, Side::Pre)?;
        let (c_pos, alpha_pos) = self.side_summary(g, s_prev, enc, Side::Pos)?;
        let hier = self.ids.hier.expect("hieratt variant");
        let (beta, projections) = Self::side_attention(g, s_prev, [c_pre, c_pos], hier)?;
        let c = g.weighted_sum(beta, &projections)?;
        let b = g.value(beta).data();
        let trace = StepTrace {
            alpha_pre,
            alpha_pos,
            beta: Some([b[0], b[1]]),
        };
        Ok((c, trace))
    }

    /// Second-level attention over the two side summaries. Returns `beta`
    /// and the projected summaries `U_b^k c_k`.
    pub fn side_attention(
        g: &mut Graph,
        s_prev: Var,
        summaries: [Var; 2],
        params: [AttentionParams; 2],
    ) -> Result<(Var, [Var; 2])> {
        let mut energies = [s_prev; 2];
        let mut projections = [s_prev; 2];
        for k in 0..2 {
            let w = g.param(params[k].w);
            let u = g.param(params[k].u);
            let v = g.param(params[k].v);
            let ws = g.matmul(w, s_prev)?;
            let uc = g.matmul(u, summaries[k])?;
            let pre = g.add(ws, uc)?;
            let act = g.tanh(pre)?;
            energies[k] = g.dot(v, act)?;
            projections[k] = uc;
        }
        let e = g.concat(&energies)?;
        let beta = g.softmax(e)?;
        Ok((beta, projections))
    }

    /// Context vector for the step that follows `state`.
    pub fn context_vector(
        &self,
        g: &mut Graph,
        state: &DecoderState,
        enc: &EncodedInstance,
    ) -> Result<(Var, StepTrace)> {
        match self.config.decoder_variant {
            DecoderVariant::Seq2Seq => Ok((enc.fixed_context.expect("seq2seq context"), StepTrace::default())),
            DecoderVariant::CAtt => self.context_vector_catt(g, state.hidden, enc),
            DecoderVariant::HierAtt => self.context_vector_hieratt(g, state.hidden, enc),
        }
    }

    /// `s_0 = c_0 = 0`.
    pub fn initial_state(&self, g: &mut Graph) -> Result<DecoderState> {
        let d = self.config.decoder_hidden_dim;
        Ok(DecoderState {
            hidden: Self::zeros(g, d)?,
            cell: Self::zeros(g, d)?,
            step_index: 0,
        })
    }

    /// One decoder step on `[c_i, V_{y_{i-1}}, V_wiki]`; returns the new
    /// state, the output logits and the attention trace.
    pub fn decoder_step(
        &self,
        g: &mut Graph,
        state: &DecoderState,
        enc: &EncodedInstance,
        prev_token: usize,
        rng: &mut TrainRng,
    ) -> Result<(DecoderState, Var, StepTrace)> {
        self.check_index(prev_token)?;
        let (context, trace) = self.context_vector(g, state, enc)?;
        let prev = g.embedding_lookup(self.ids.embedding, prev_token)?;
        let input = g.concat(&[context, prev, enc.entity])?;
        let input = self.maybe_dropout(g, input, rng)?;
        let (hidden, cell) = Self::lstm_step(g, self.ids.decoder, input, state.hidden, state.cell)?;
        let out = self.maybe_dropout(g, hidden, rng)?;
        let w = g.param(self.ids.output_weight);
        let b = g.param(self.ids.output_bias);
        let logits = g.matmul(w, out)?;
        let logits = g.add(logits, b)?;
        let next = DecoderState {
            hidden,
            cell,
            step_index: state.step_index + 1,
        };
        Ok((next, logits, trace))
    }

    /// Teacher-forced summed negative log-likelihood of `target ++ [EOS, EOS]`.
    /// Returns the loss node and the number of predicted tokens.
    pub fn sequence_nll(&self, g: &mut Graph, inst: &IndexedInstance, rng: &mut TrainRng) -> Result<(Var, usize)> {
        if inst
            .target
            .iter()
            .any(|&t| t <= EOS_ID && t != crate::corpus::vocab::UNK_ID)
        {
            return Err(Error::InvalidArgument("gold refex contains a reserved token".into()));
        }
        let enc = self.encode_instance(g, inst, rng)?;
        let mut state = self.initial_state(g)?;
        let mut prev = BOS_ID;
        let mut terms = Vec::with_capacity(inst.target.len() + 2);
        for &y in inst.target.iter().chain(&[EOS_ID, EOS_ID]) {
            let (next, logits, _) = self.decoder_step(g, &state, &enc, prev, rng)?;
            terms.push(g.neg_log_softmax(logits, y)?);
            state = next;
            prev = y;
        }
        let n = terms.len();
        Ok((g.add_n(&terms)?, n))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = CheckpointMeta {
            model: self.config,
            vocabulary: self.vocab.tokens().to_vec(),
            vocabulary_fingerprint: self.vocab.fingerprint(),
        };
        let mut out = Vec::new();
        write_checkpoint(&mut out, &serde_json::to_value(meta)?, &self.store)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, store) = read_checkpoint(bytes)?;
        let meta: CheckpointMeta = serde_json::from_value(meta)?;
        let vocab = Vocabulary::from_tokens(meta.vocabulary)?;
        if vocab.fingerprint() != meta.vocabulary_fingerprint {
            return Err(Error::Checkpoint("vocabulary fingerprint mismatch".into()));
        }
        Self::from_parts(meta.model, vocab, store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
