//! POS-enhanced input embedding and the small transformer encoder.

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{TokenizedInput, Vocab};
use crate::error::{Error, Result};
use crate::integration::Strategy;
use crate::numerics::{Matrix, ParamId, Tape, Var};
use crate::pos::NUM_TAGS;

pub const INIT_STD: f64 = 0.02;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub n_segments: usize,
    pub n_pos_tags: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub ffn_size: usize,
    pub max_turns: usize,
    pub strategy: Strategy,
    pub pos_embedding: bool,
    pub max_answer_len: usize,
    pub layer_norm_eps: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_size: 32,
            vocab_size: 0,
            max_positions: 64,
            n_segments: 2,
            n_pos_tags: NUM_TAGS,
            encoder_layers: 2,
            encoder_heads: 4,
            ffn_size: 128,
            max_turns: 3,
            strategy: Strategy::Forgetting,
            pos_embedding: true,
            max_answer_len: 30,
            layer_norm_eps: 1e-12,
            seed: 13,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.hidden_size == 0 {
            return fail("hidden_size must be positive".into());
        }
        if self.vocab_size < 4 {
            return fail(format!("vocab_size {} leaves no room for special tokens", self.vocab_size));
        }
        if self.max_positions < 4 {
            return fail(format!("max_positions {} is too small", self.max_positions));
        }
        if self.n_segments != 2 {
            return fail(format!("n_segments must be 2, got {}", self.n_segments));
        }
        if self.n_pos_tags != NUM_TAGS {
            return fail(format!("n_pos_tags must be {NUM_TAGS}, got {}", self.n_pos_tags));
        }
        if self.encoder_layers > 0 {
            if self.encoder_heads == 0 || !self.hidden_size.is_multiple_of(self.encoder_heads) {
                return fail(format!(
                    "hidden_size {} is not divisible by encoder_heads {}",
                    self.hidden_size, self.encoder_heads
                ));
            }
            if self.ffn_size == 0 {
                return fail("ffn_size must be positive".into());
            }
        }
        if self.max_answer_len == 0 {
            return fail("max_answer_len must be positive".into());
        }
        if !(self.layer_norm_eps >= 0.0 && self.layer_norm_eps.is_finite()) {
            return fail(format!("layer_norm_eps {} is invalid", self.layer_norm_eps));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Embedding,
    PosEmbedding,
    Encoder,
    CoAttention,
    Heads,
}

impl Component {
    pub const ALL: [Component; 5] = [
        Component::Embedding,
        Component::PosEmbedding,
        Component::Encoder,
        Component::CoAttention,
        Component::Heads,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Embedding => "embedding",
            Component::PosEmbedding => "pos_embedding",
            Component::Encoder => "encoder",
            Component::CoAttention => "co_attention",
            Component::Heads => "heads",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub component: Component,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct EmbeddingIds {
    pub token: ParamId,
    pub segment: ParamId,
    pub position: ParamId,
    pub pos_tag: Option<ParamId>,
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct LayerIds {
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct HeadIds {
    pub choice_w: ParamId,
    pub choice_b: ParamId,
    pub span_w: ParamId,
    pub span_b: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub embedding: EmbeddingIds,
    pub layers: Vec<LayerIds>,
    pub final_norm: Option<(ParamId, ParamId)>,
    pub heads: HeadIds,
}

enum Init {
    Normal,
    Zeros,
    Ones,
}

struct Builder {
    infos: Vec<ParamInfo>,
    values: Vec<Matrix>,
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl Builder {
    fn add(&mut self, name: String, component: Component, rows: usize, cols: usize, init: Init) -> ParamId {
        let value = match init {
            Init::Zeros => Matrix::zeros(rows, cols),
            Init::Ones => Matrix::filled(rows, cols, 1.0),
            Init::Normal => {
                let data = (0..rows * cols).map(|_| self.normal.sample(&mut self.rng)).collect();
                Matrix::from_vec(rows, cols, data).expect("sized by construction")
            }
        };
        self.infos.push(ParamInfo {
            name,
            component,
            rows,
            cols,
        });
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }
}

/// All trainable tensors, in a fixed order, with their names and components.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    infos: Vec<ParamInfo>,
    values: Vec<Matrix>,
    pub(crate) layout: Layout,
}

impl ModelParams {
    /// Seeded initialization: weights `N(0, 0.02)`, biases 0, norm gains 1.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_size;
        let mut b = Builder {
            infos: Vec::new(),
            values: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            normal: Normal::new(0.0, INIT_STD).expect("valid std"),
        };
        use Component::*;
        let embedding = EmbeddingIds {
            token: b.add("embedding.token".into(), Embedding, config.vocab_size, h, Init::Normal),
            segment: b.add("embedding.segment".into(), Embedding, config.n_segments, h, Init::Normal),
            position: b.add("embedding.position".into(), Embedding, config.max_positions, h, Init::Normal),
            pos_tag: config
                .pos_embedding
                .then(|| b.add("embedding.pos_tag".into(), PosEmbedding, config.n_pos_tags, h, Init::Normal)),
            gain: b.add("embedding.norm.gain".into(), Embedding, 1, h, Init::Ones),
            bias: b.add("embedding.norm.bias".into(), Embedding, 1, h, Init::Zeros),
        };
        let f = config.ffn_size;
        let layers = (0..config.encoder_layers)
            .map(|l| {
                let mut p = |name: &str, rows, cols, init| b.add(format!("encoder.{l}.{name}"), Encoder, rows, cols, init);
                LayerIds {
                    ln1_gain: p("attn_norm.gain", 1, h, Init::Ones),
                    ln1_bias: p("attn_norm.bias", 1, h, Init::Zeros),
                    wq: p("query.weight", h, h, Init::Normal),
                    bq: p("query.bias", 1, h, Init::Zeros),
                    wk: p("key.weight", h, h, Init::Normal),
                    bk: p("key.bias", 1, h, Init::Zeros),
                    wv: p("value.weight", h, h, Init::Normal),
                    bv: p("value.bias", 1, h, Init::Zeros),
                    wo: p("output.weight", h, h, Init::Normal),
                    bo: p("output.bias", 1, h, Init::Zeros),
                    ln2_gain: p("ffn_norm.gain", 1, h, Init::Ones),
                    ln2_bias: p("ffn_norm.bias", 1, h, Init::Zeros),
                    w1: p("ffn.in.weight", h, f, Init::Normal),
                    b1: p("ffn.in.bias", 1, f, Init::Zeros),
                    w2: p("ffn.out.weight", f, h, Init::Normal),
                    b2: p("ffn.out.bias", 1, h, Init::Zeros),
                }
            })
            .collect();
        let final_norm = (config.encoder_layers > 0).then(|| {
            (
                b.add("encoder.final_norm.gain".into(), Encoder, 1, h, Init::Ones),
                b.add("encoder.final_norm.bias".into(), Encoder, 1, h, Init::Zeros),
            )
        });
        let heads = HeadIds {
            choice_w: b.add("heads.choice.weight".into(), Heads, h, 1, Init::Normal),
            choice_b: b.add("heads.choice.bias".into(), Heads, 1, 1, Init::Zeros),
            span_w: b.add("heads.span.weight".into(), Heads, h, 2, Init::Normal),
            span_b: b.add("heads.span.bias".into(), Heads, 1, 2, Init::Zeros),
        };
        Ok(Self {
            config: config.clone(),
            infos: b.infos,
            values: b.values,
            layout: Layout {
                embedding,
                layers,
                final_norm,
                heads,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn infos(&self) -> &[ParamInfo] {
        &self.infos
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.infos.iter().position(|i| i.name == name).map(ParamId)
    }

    /// The POS embedding table, if enabled.
    pub fn pos_tag_table(&self) -> Option<ParamId> {
        self.layout.embedding.pos_tag
    }

    /// Same configuration except the strategy and turn count, which carry no
    /// parameters.
    pub fn with_coattention(mut self, turns: usize, strategy: Strategy) -> Self {
        self.config.max_turns = turns;
        self.config.strategy = strategy;
        self
    }
}

/// Trainable scalar counts per component.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub embedding: usize,
    pub pos_embedding: usize,
    pub encoder: usize,
    pub co_attention: usize,
    pub heads: usize,
    pub total: usize,
}

impl ParamBreakdown {
    pub fn get(&self, component: Component) -> usize {
        match component {
            Component::Embedding => self.embedding,
            Component::PosEmbedding => self.pos_embedding,
            Component::Encoder => self.encoder,
            Component::CoAttention => self.co_attention,
            Component::Heads => self.heads,
        }
    }
}

pub fn parameter_count(params: &ModelParams) -> usize {
    params.values.iter().map(Matrix::len).sum()
}

pub fn parameter_breakdown(params: &ModelParams) -> ParamBreakdown {
    let sum = |c: Component| -> usize {
        params
            .infos
            .iter()
            .filter(|i| i.component == c)
            .map(|i| i.rows * i.cols)
            .sum()
    };
    ParamBreakdown {
        embedding: sum(Component::Embedding),
        pos_embedding: sum(Component::PosEmbedding),
        encoder: sum(Component::Encoder),
        co_attention: sum(Component::CoAttention),
        heads: sum(Component::Heads),
        total: parameter_count(params),
    }
}

fn check_ids(what: &str, ids: &[usize], limit: usize) -> Result<()> {
    match ids.iter().position(|&i| i >= limit) {
        Some(p) => Err(Error::Lookup(format!(
            "{what} id {} at position {p} is outside a table of {limit} rows",
            ids[p]
        ))),
        None => Ok(()),
    }
}

/// `Norm(E_t + E_s + E_p [+ E_POS])` on the tape.
pub(crate) fn embed_on_tape(tape: &mut Tape, params: &ModelParams, input: &TokenizedInput) -> Result<Var> {
    let cfg = &params.config;
    let n = input.len();
    for (name, len) in [
        ("segment", input.segment_ids.len()),
        ("position", input.position_ids.len()),
        ("tag", input.pos_tags.len()),
    ] {
        if len != n {
            return Err(Error::Dimension(format!("{n} tokens but {len} {name} ids")));
        }
    }
    check_ids("token", &input.token_ids, cfg.vocab_size)?;
    check_ids("segment", &input.segment_ids, cfg.n_segments)?;
    check_ids("position", &input.position_ids, cfg.max_positions)?;
    let ids = &params.layout.embedding;
    let token = tape.gather_param(ids.token, params.get(ids.token), &input.token_ids);
    let segment = tape.gather_param(ids.segment, params.get(ids.segment), &input.segment_ids);
    let position = tape.gather_param(ids.position, params.get(ids.position), &input.position_ids);
    let mut sum = tape.add(token, segment);
    sum = tape.add(sum, position);
    if let Some(pos_id) = ids.pos_tag {
        let tags: Vec<usize> = input.pos_tags.iter().map(|t| t.id()).collect();
        let pos = tape.gather_param(pos_id, params.get(pos_id), &tags);
        sum = tape.add(sum, pos);
    }
    let gain = tape.param(ids.gain, params.get(ids.gain));
    let bias = tape.param(ids.bias, params.get(ids.bias));
    Ok(tape.layer_norm_rows(sum, gain, bias, cfg.layer_norm_eps))
}

fn affine_on_tape(tape: &mut Tape, params: &ModelParams, x: Var, w: ParamId, b: ParamId) -> Var {
    let wv = tape.param(w, params.get(w));
    let bv = tape.param(b, params.get(b));
    let y = tape.matmul(x, wv);
    tape.add_row_bias(y, bv)
}

/// Pre-norm transformer stack followed by a final norm; identity without layers.
pub(crate) fn encode_on_tape(tape: &mut Tape, params: &ModelParams, x: Var, valid: &[bool]) -> Result<Var> {
    let cfg = &params.config;
    let (n, h) = tape.value(x).shape();
    if valid.len() != n {
        return Err(Error::Dimension(format!("mask has {} entries for {n} rows", valid.len())));
    }
    if h != cfg.hidden_size {
        return Err(Error::Dimension(format!("input width {h}, hidden size {}", cfg.hidden_size)));
    }
    if !valid.contains(&true) {
        return Err(Error::Input("every position is padding".into()));
    }
    let eps = cfg.layer_norm_eps;
    let heads = cfg.encoder_heads.max(1);
    let dh = h / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut x = x;
    for layer in &params.layout.layers {
        let g = tape.param(layer.ln1_gain, params.get(layer.ln1_gain));
        let b = tape.param(layer.ln1_bias, params.get(layer.ln1_bias));
        let normed = tape.layer_norm_rows(x, g, b, eps);
        let q = affine_on_tape(tape, params, normed, layer.wq, layer.bq);
        let k = affine_on_tape(tape, params, normed, layer.wk, layer.bk);
        let v = affine_on_tape(tape, params, normed, layer.wv, layer.bv);
        let mut outputs = Vec::with_capacity(heads);
        for head in 0..heads {
            let qh = tape.slice_cols(q, head * dh, dh);
            let kh = tape.slice_cols(k, head * dh, dh);
            let vh = tape.slice_cols(v, head * dh, dh);
            let scores = tape.matmul_transposed(qh, kh);
            let scores = tape.affine(scores, scale, 0.0);
            let attn = tape.softmax_rows(scores, valid);
            outputs.push(tape.matmul(attn, vh));
        }
        let joined = tape.concat_cols(&outputs);
        let attended = affine_on_tape(tape, params, joined, layer.wo, layer.bo);
        x = tape.add(x, attended);

        let g = tape.param(layer.ln2_gain, params.get(layer.ln2_gain));
        let b = tape.param(layer.ln2_bias, params.get(layer.ln2_bias));
        let normed = tape.layer_norm_rows(x, g, b, eps);
        let inner = affine_on_tape(tape, params, normed, layer.w1, layer.b1);
        let inner = tape.gelu(inner);
        let out = affine_on_tape(tape, params, inner, layer.w2, layer.b2);
        x = tape.add(x, out);
    }
    if let Some((g, b)) = params.layout.final_norm {
        let gv = tape.param(g, params.get(g));
        let bv = tape.param(b, params.get(b));
        x = tape.layer_norm_rows(x, gv, bv, eps);
    }
    Ok(x)
}

/// Input embedding `E` for one sequence.
pub fn embed(params: &ModelParams, input: &TokenizedInput) -> Result<Matrix> {
    let mut tape = Tape::new();
    let e = embed_on_tape(&mut tape, params, input)?;
    Ok(tape.value(e).clone())
}

/// Contextual encoding of an embedded sequence; `valid` is false on padding.
pub fn encode_context(params: &ModelParams, e: &Matrix, valid: &[bool]) -> Result<Matrix> {
    let mut tape = Tape::new();
    let x = tape.constant(e.clone());
    let out = encode_on_tape(&mut tape, params, x, valid)?;
    Ok(tape.value(out).clone())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// On-disk model: configuration, vocabulary and every tensor by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, vocab: &Vocab) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            config: params.config.clone(),
            vocab: vocab.clone(),
            tensors: params
                .infos
                .iter()
                .zip(&params.values)
                .map(|(info, m)| NamedTensor {
                    name: info.name.clone(),
                    rows: m.rows(),
                    cols: m.cols(),
                    data: m.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds the parameters; fails if `expected` is given and differs.
    pub fn into_params(self, expected: Option<&ModelConfig>) -> Result<(ModelParams, Vocab)> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} (expected {CHECKPOINT_VERSION})",
                self.format_version
            )));
        }
        if let Some(exp) = expected {
            if *exp != self.config {
                return Err(Error::Checkpoint(format!(
                    "config mismatch: checkpoint has {}, expected {}",
                    serde_json::to_string(&self.config)?,
                    serde_json::to_string(exp)?
                )));
            }
        }
        if self.vocab.len() != self.config.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} entries, config says {}",
                self.vocab.len(),
                self.config.vocab_size
            )));
        }
        let mut params = ModelParams::init(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if self.tensors.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors stored, {} expected",
                self.tensors.len(),
                params.len()
            )));
        }
        for t in self.tensors {
            let id = params
                .id_of(&t.name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {:?}", t.name)))?;
            let slot = params.get_mut(id);
            if slot.shape() != (t.rows, t.cols) {
                return Err(Error::Checkpoint(format!(
                    "tensor {:?} is {}x{}, expected {}x{}",
                    t.name,
                    t.rows,
                    t.cols,
                    slot.rows(),
                    slot.cols()
                )));
            }
            *slot = Matrix::from_vec(t.rows, t.cols, t.data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        Ok((params, self.vocab))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coattention::DomainSplit;
    use crate::pos::PosTag;

    fn config() -> ModelConfig {
        ModelConfig {
            vocab_size: 20,
            max_positions: 16,
            ..ModelConfig::default()
        }
    }

    fn input(n: usize, pad: usize) -> TokenizedInput {
        let total = n + pad;
        let mut passage = vec![false; total];
        let mut question = vec![false; total];
        passage[1] = true;
        question[n - 2] = true;
        let valid = (0..total).map(|i| i < n).collect();
        TokenizedInput {
            token_ids: (0..total).map(|i| if i < n { 4 + i } else { 0 }).collect(),
            segment_ids: (0..total).map(|i| usize::from(i >= n / 2 && i < n)).collect(),
            position_ids: (0..total).collect(),
            pos_tags: (0..total)
                .map(|i| if i < n { PosTag::ALL[i % 36] } else { PosTag::Pad })
                .collect(),
            split: DomainSplit::new(passage, question, valid).unwrap(),
            sources: vec![crate::pos::SubwordSource::Special; total],
            char_spans: vec![None; total],
            passage_range: 1..2,
            target: None,
        }
    }

    #[test]
    fn counts() {
        let params = ModelParams::init(&config()).unwrap();
        let b = parameter_breakdown(&params);
        assert_eq!(b.pos_embedding, 39 * 32);
        assert_eq!(b.co_attention, 0);
        assert_eq!(b.embedding, (20 + 2 + 16) * 32 + 2 * 32);
        let per_layer = 4 * (32 * 32 + 32) + 2 * 2 * 32 + 32 * 128 + 128 + 128 * 32 + 32;
        assert_eq!(b.encoder, 2 * per_layer + 2 * 32);
        assert_eq!(b.heads, 32 + 1 + 64 + 2);
        assert_eq!(b.total, b.embedding + b.pos_embedding + b.encoder + b.heads);
        let off = ModelParams::init(&ModelConfig {
            pos_embedding: false,
            ..config()
        })
        .unwrap();
        assert_eq!(parameter_count(&params) - parameter_count(&off), 39 * 32);
    }

    #[test]
    fn invalid_configs() {
        for bad in [
            ModelConfig { encoder_heads: 5, ..config() },
            ModelConfig { n_pos_tags: 36, ..config() },
            ModelConfig { vocab_size: 2, ..config() },
        ] {
            assert!(matches!(ModelParams::init(&bad), Err(Error::Config(_))));
        }
    }

    #[test]
    fn zero_pos_table_matches_three_term_embedding() {
        let cfg = config();
        let mut with = ModelParams::init(&cfg).unwrap();
        let id = with.pos_tag_table().unwrap();
        *with.get_mut(id) = Matrix::zeros(39, 32);
        let mut without = ModelParams::init(&ModelConfig {
            pos_embedding: false,
            ..cfg
        })
        .unwrap();
        for name in ["embedding.token", "embedding.segment", "embedding.position"] {
            let src = with.get(with.id_of(name).unwrap()).clone();
            let dst = without.id_of(name).unwrap();
            *without.get_mut(dst) = src;
        }
        let x = input(6, 0);
        assert_eq!(embed(&with, &x).unwrap(), embed(&without, &x).unwrap());
    }

    #[test]
    fn four_unit_vectors_normalize_like_direct_arithmetic() {
        let cfg = ModelConfig {
            hidden_size: 4,
            encoder_heads: 1,
            ..config()
        };
        let mut params = ModelParams::init(&cfg).unwrap();
        let mut unit = Matrix::zeros(1, 4);
        unit.set(0, 0, 1.0);
        for name in ["embedding.token", "embedding.segment", "embedding.position", "embedding.pos_tag"] {
            let id = params.id_of(name).unwrap();
            let rows = params.get(id).rows();
            let mut table = Matrix::zeros(rows, 4);
            table.row_mut(0).copy_from_slice(unit.row(0));
            *params.get_mut(id) = table;
        }
        let mut x = input(4, 0);
        x.token_ids = vec![0; 4];
        x.segment_ids = vec![0; 4];
        x.position_ids = vec![0; 4];
        x.pos_tags = vec![PosTag::Cc; 4];
        let e = embed(&params, &x).unwrap();
        // mean 1, variance 3: (4-1)/√3 = √3 and -1/√3 elsewhere, up to eps
        let eps = cfg.layer_norm_eps;
        let expect = [3.0 / (3.0 + eps).sqrt(), -1.0 / (3.0 + eps).sqrt()];
        for r in 0..4 {
            assert!((e.get(r, 0) - expect[0]).abs() < 1e-12);
            for c in 1..4 {
                assert!((e.get(r, c) - expect[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rows_are_normalized_and_lookup_errors() {
        let params = ModelParams::init(&config()).unwrap();
        let mut x = input(6, 0);
        let e = embed(&params, &x).unwrap();
        for r in 0..e.rows() {
            let row = e.row(r);
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / row.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        x.token_ids[2] = 20;
        assert!(matches!(embed(&params, &x), Err(Error::Lookup(_))));
    }

    #[test]
    fn encoder_identity_determinism_and_masking() {
        let x = input(6, 3);
        let none = ModelParams::init(&ModelConfig {
            encoder_layers: 0,
            ..config()
        })
        .unwrap();
        let e = embed(&none, &x).unwrap();
        assert_eq!(encode_context(&none, &e, x.valid_mask()).unwrap(), e);

        let params = ModelParams::init(&config()).unwrap();
        let e = embed(&params, &x).unwrap();
        let a = encode_context(&params, &e, x.valid_mask()).unwrap();
        assert_eq!(a, encode_context(&params, &e, x.valid_mask()).unwrap());
        assert!(a.is_finite());

        let mut swapped = e.clone();
        let (r1, r2) = (6, 8);
        let row1 = e.row(r1).to_vec();
        swapped.row_mut(r1).copy_from_slice(e.row(r2));
        swapped.row_mut(r2).copy_from_slice(&row1);
        let b = encode_context(&params, &swapped, x.valid_mask()).unwrap();
        for r in 0..6 {
            assert_eq!(a.row(r), b.row(r));
        }
    }

    #[test]
    fn strategies_and_turns_do_not_change_counts() {
        let base = ModelParams::init(&ModelConfig { max_turns: 0, ..config() }).unwrap();
        for s in Strategy::ALL {
            for t in 1..=4 {
                let other = ModelParams::init(&ModelConfig {
                    max_turns: t,
                    strategy: s,
                    ..config()
                })
                .unwrap();
                assert_eq!(parameter_breakdown(&other), parameter_breakdown(&base));
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let cfg = config();
        let params = ModelParams::init(&cfg).unwrap();
        let words: Vec<String> = (0..16).map(|i| format!("w{i}")).collect();
        let vocab = Vocab::build(words.iter().map(String::as_str));
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            ..cfg
        };
        let params = ModelParams::init(&cfg).unwrap_or(params);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        Checkpoint::new(&params, &vocab).save(&path).unwrap();
        let (back, v) = Checkpoint::load(&path).unwrap().into_params(Some(&cfg)).unwrap();
        assert_eq!(back, params);
        assert_eq!(v, vocab);
        let other = ModelConfig {
            hidden_size: 16,
            ..cfg.clone()
        };
        assert!(matches!(
            Checkpoint::load(&path).unwrap().into_params(Some(&other)),
            Err(Error::Checkpoint(_))
        ));
    }
}
