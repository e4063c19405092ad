//! The model: a semantic encoder pooled into one sentence embedding, a
//! syntactic encoder over linearized parses, a decoder that cross-attends to
//! both, and a linear softmax syntax discriminator.
//!
//! Forward passes are written against the autodiff tape and are generic over
//! the scalar type: training runs them in `f32`, gradient checks re-run the
//! identical graph construction in `f64` against finite differences.
//!
//! Architecture notes:
//! - pre-norm transformer blocks with a final layer norm per stack;
//! - sinusoidal position encodings, stored with the parameters but constant;
//! - the token embedding is shared between the semantic encoder and the
//!   decoder, and doubles as the output projection (tied softmax);
//! - the decoder memory is the pooled semantic embedding ū prepended as one
//!   extra position ahead of the syntactic representations V, so
//!   cross-attention can weight semantics against syntax per step; without
//!   syntactic guidance the memory is just ū;
//! - the discriminator reads ū alone: `softmax(W ū + b)` over the tag set.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::syntax::TagSet;
use crate::tensor::{read_checkpoint, write_checkpoint, Scalar, Tape, Tensor, TensorId};

/// Additive attention bias for masked positions; large enough that the
/// corresponding softmax weights underflow to exactly zero.
pub const NEG_ATTN_BIAS: f32 = -1e9;

/// Standard deviation of embedding-table initialization.
const EMBED_STD: f64 = 0.125;

/// Scale applied to the sinusoidal position encodings so they do not drown
/// the embeddings at small `d_model`.
const PE_SCALE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers_sem: usize,
    pub n_enc_layers_syn: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub tagset_size: usize,
    #[serde(default = "default_max_sent_len")]
    pub max_sent_len: usize,
    #[serde(default = "default_max_parse_len")]
    pub max_parse_len: usize,
    #[serde(default)]
    pub dropout: f32,
    #[serde(default = "default_lambda_adv")]
    pub lambda_adv: f32,
}

fn default_max_sent_len() -> usize {
    40
}

fn default_max_parse_len() -> usize {
    160
}

fn default_lambda_adv() -> f32 {
    0.1
}

impl ModelConfig {
    /// Desk-scale defaults: 64-wide, 4 heads, 2 semantic encoder layers, 1
    /// syntactic encoder layer, 1 decoder layer, feed-forward width 256.
    pub fn desk(vocab_size: usize, tagset_size: usize) -> ModelConfig {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_enc_layers_sem: 2,
            n_enc_layers_syn: 1,
            n_dec_layers: 1,
            d_ff: 256,
            vocab_size,
            tagset_size,
            max_sent_len: default_max_sent_len(),
            max_parse_len: default_max_parse_len(),
            dropout: 0.0,
            lambda_adv: default_lambda_adv(),
        }
    }

    /// Size of the parse-token vocabulary: five specials, two brackets, and
    /// the tag set.
    pub fn parse_vocab_size(&self) -> usize {
        self.tagset_size + 7
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_enc_layers_sem", self.n_enc_layers_sem),
            ("n_enc_layers_syn", self.n_enc_layers_syn),
            ("n_dec_layers", self.n_dec_layers),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("tagset_size", self.tagset_size),
            ("max_sent_len", self.max_sent_len),
            ("max_parse_len", self.max_parse_len),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_sent_len < 3 {
            return Err(Error::config("max_sent_len must be at least 3"));
        }
        if self.lambda_adv < 0.0 || !self.lambda_adv.is_finite() {
            return Err(Error::config(format!(
                "lambda_adv must be finite and non-negative, got {}",
                self.lambda_adv
            )));
        }
        if self.dropout != 0.0 {
            return Err(Error::config(
                "activation dropout is not implemented; set dropout to 0 \
                 (word dropout on the semantic input is the supported regularizer)",
            ));
        }
        Ok(())
    }
}

/// Which optimizer group a parameter belongs to. The semantic encoder and
/// the discriminator train at the smaller learning rate; everything else —
/// syntactic encoder, decoder, and the shared embeddings — at the larger
/// one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    SemEncoder,
    Discriminator,
    Rest,
}

pub fn param_group(name: &str) -> ParamGroup {
    if name.starts_with("sem.") {
        ParamGroup::SemEncoder
    } else if name.starts_with("dis.") {
        ParamGroup::Discriminator
    } else {
        ParamGroup::Rest
    }
}

/// True for tensors stored with the model but never trained (position
/// encodings).
pub fn is_constant(name: &str) -> bool {
    name.starts_with("pe.")
}

/// All model parameters as named tensors, plus the shape-defining config.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

fn attn_shapes(prefix: &str, d: usize, out: &mut Vec<(String, Vec<usize>)>) {
    for w in ["wq", "wk", "wv", "wo"] {
        out.push((format!("{prefix}.{w}"), vec![d, d]));
    }
    for b in ["bq", "bk", "bv", "bo"] {
        out.push((format!("{prefix}.{b}"), vec![d]));
    }
}

fn ln_shapes(prefix: &str, d: usize, out: &mut Vec<(String, Vec<usize>)>) {
    out.push((format!("{prefix}.g"), vec![d]));
    out.push((format!("{prefix}.b"), vec![d]));
}

fn ffn_shapes(prefix: &str, d: usize, d_ff: usize, out: &mut Vec<(String, Vec<usize>)>) {
    out.push((format!("{prefix}.w1"), vec![d, d_ff]));
    out.push((format!("{prefix}.b1"), vec![d_ff]));
    out.push((format!("{prefix}.w2"), vec![d_ff, d]));
    out.push((format!("{prefix}.b2"), vec![d]));
}

/// The canonical parameter name/shape list for a config. Initialization
/// seeds one RNG stream per position in this list, so adding parameters at
/// the end does not reshuffle existing draws.
pub fn expected_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let mut out = Vec::new();
    out.push(("embed.tok".to_string(), vec![cfg.vocab_size, d]));
    out.push(("embed.parse".to_string(), vec![cfg.parse_vocab_size(), d]));
    out.push(("pe.sent".to_string(), vec![cfg.max_sent_len, d]));
    out.push(("pe.parse".to_string(), vec![cfg.max_parse_len, d]));
    for (comp, n_layers) in [("sem", cfg.n_enc_layers_sem), ("syn", cfg.n_enc_layers_syn)] {
        for i in 0..n_layers {
            let p = format!("{comp}.{i}");
            ln_shapes(&format!("{p}.ln1"), d, &mut out);
            attn_shapes(&format!("{p}.attn"), d, &mut out);
            ln_shapes(&format!("{p}.ln2"), d, &mut out);
            ffn_shapes(&format!("{p}.ffn"), d, cfg.d_ff, &mut out);
        }
        ln_shapes(&format!("{comp}.lnf"), d, &mut out);
    }
    for i in 0..cfg.n_dec_layers {
        let p = format!("dec.{i}");
        ln_shapes(&format!("{p}.ln1"), d, &mut out);
        attn_shapes(&format!("{p}.self"), d, &mut out);
        ln_shapes(&format!("{p}.ln2"), d, &mut out);
        attn_shapes(&format!("{p}.cross"), d, &mut out);
        ln_shapes(&format!("{p}.ln3"), d, &mut out);
        ffn_shapes(&format!("{p}.ffn"), d, cfg.d_ff, &mut out);
    }
    ln_shapes("dec.lnf", d, &mut out);
    out.push(("dis.w".to_string(), vec![cfg.tagset_size, d]));
    out.push(("dis.b".to_string(), vec![cfg.tagset_size]));
    out
}

/// Standard normal via Box–Muller on the given stream.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let mut u1: f64 = rng.gen();
    while u1 <= 1e-300 {
        u1 = rng.gen();
    }
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn sinusoidal_pe(max_len: usize, d: usize) -> Tensor<f32> {
    let mut data = vec![0f32; max_len * d];
    for pos in 0..max_len {
        for idx in 0..d {
            let pair = (idx / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * pair / d as f64);
            let v = if idx % 2 == 0 { angle.sin() } else { angle.cos() };
            data[pos * d + idx] = (PE_SCALE * v) as f32;
        }
    }
    Tensor::new(vec![max_len, d], data)
}

fn init_tensor(name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    if name == "pe.sent" || name == "pe.parse" {
        return sinusoidal_pe(shape[0], shape[1]);
    }
    if name.ends_with(".g") {
        return Tensor::new(shape.to_vec(), vec![1.0; shape.iter().product()]).with_grad();
    }
    if shape.len() == 1 {
        // All rank-1 parameters other than layer-norm gains are biases.
        return Tensor::zeros(shape.to_vec()).with_grad();
    }
    let std = if name.starts_with("embed.") {
        EMBED_STD
    } else {
        // Xavier-normal for projection matrices.
        (2.0 / (shape[0] + shape[1]) as f64).sqrt()
    };
    let data = (0..shape.iter().product())
        .map(|_| (std * normal(rng)) as f32)
        .collect();
    Tensor::new(shape.to_vec(), data).with_grad()
}

impl ModelParams {
    /// Fresh parameters: embeddings N(0, 0.125²), projections Xavier-normal,
    /// biases zero, layer-norm gains one, position encodings sinusoidal.
    /// Each tensor draws from its own seed-derived stream.
    pub fn init(config: ModelConfig, seed: u64) -> Result<ModelParams> {
        config.validate()?;
        let mut tensors = BTreeMap::new();
        for (i, (name, shape)) in expected_shapes(&config).iter().enumerate() {
            let mut stream = rng::stream(seed, Stream::Init, i as u64);
            tensors.insert(name.clone(), init_tensor(name, shape, &mut stream));
        }
        Ok(ModelParams { config, tensors })
    }

    /// Names of trainable tensors (everything but the position encodings).
    pub fn trainable_names(&self) -> Vec<String> {
        self.tensors
            .keys()
            .filter(|n| !is_constant(n))
            .cloned()
            .collect()
    }

    /// Push every non-constant tensor onto a tape. `trainable` decides per
    /// name whether gradients flow — the adversarial loop uses it to freeze
    /// whole components structurally rather than by zeroing gradients.
    pub fn bind<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        trainable: impl Fn(&str) -> bool,
    ) -> Bound {
        let mut ids = BTreeMap::new();
        for (name, tensor) in &self.tensors {
            if is_constant(name) {
                continue;
            }
            let id = tape.leaf_tensor(tensor, trainable(name));
            ids.insert(name.clone(), id);
        }
        Bound { ids }
    }

    pub fn bind_all<T: Scalar>(&self, tape: &mut Tape<T>) -> Bound {
        self.bind(tape, |_| true)
    }
}

/// Tape locations of bound parameters for one forward pass.
#[derive(Debug, Clone)]
pub struct Bound {
    ids: BTreeMap<String, TensorId>,
}

impl Bound {
    pub fn from_map(ids: BTreeMap<String, TensorId>) -> Bound {
        Bound { ids }
    }

    pub fn id(&self, name: &str) -> TensorId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name:?} is not bound on this tape"))
    }
}

// ---- forward passes -----------------------------------------------------

fn check_len(len: usize, max: usize, what: &str) -> Result<()> {
    if len == 0 {
        return Err(Error::model(format!("{what} is empty")));
    }
    if len > max {
        return Err(Error::model(format!(
            "{what} length {len} exceeds maximum {max}"
        )));
    }
    Ok(())
}

/// Token embedding plus the matching slice of position encodings.
fn embed_with_positions<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams,
    bound: &Bound,
    table: &str,
    pe_name: &str,
    ids: &[u32],
) -> TensorId {
    let e = tape.embed(bound.id(table), ids);
    let pe = &params.tensors[pe_name];
    let d = pe.shape[1];
    let rows: Vec<T> = pe.data[..ids.len() * d]
        .iter()
        .map(|&v| T::from_f32(v))
        .collect();
    let pe_id = tape.constant(ids.len(), d, rows);
    tape.add(e, pe_id)
}

/// Additive bias hiding masked key positions, or `None` when nothing is
/// masked (the zero bias would be a no-op).
fn mask_bias<T: Scalar>(tape: &mut Tape<T>, rows: usize, mask: &[bool]) -> Option<TensorId> {
    if mask.iter().all(|&m| m) {
        return None;
    }
    let cols = mask.len();
    let mut data = vec![T::ZERO; rows * cols];
    for i in 0..rows {
        for (j, &keep) in mask.iter().enumerate() {
            if !keep {
                data[i * cols + j] = T::from_f32(NEG_ATTN_BIAS);
            }
        }
    }
    Some(tape.constant(rows, cols, data))
}

/// Strictly-upper-triangular bias: position `i` may attend keys `0..=i`.
fn causal_bias<T: Scalar>(tape: &mut Tape<T>, len: usize) -> Option<TensorId> {
    if len <= 1 {
        return None;
    }
    let mut data = vec![T::ZERO; len * len];
    for i in 0..len {
        for j in (i + 1)..len {
            data[i * len + j] = T::from_f32(NEG_ATTN_BIAS);
        }
    }
    Some(tape.constant(len, len, data))
}

/// Multi-head scaled dot-product attention. Queries come from `q_in`, keys
/// and values from `kv_in`; `bias` (if any) is added to the raw scores of
/// every head.
fn multi_head_attention<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    bound: &Bound,
    prefix: &str,
    q_in: TensorId,
    kv_in: TensorId,
    bias: Option<TensorId>,
) -> TensorId {
    let d_head = cfg.d_model / cfg.n_heads;
    let q = tape.matmul(q_in, bound.id(&format!("{prefix}.wq")));
    let q = tape.add_bias(q, bound.id(&format!("{prefix}.bq")));
    let k = tape.matmul(kv_in, bound.id(&format!("{prefix}.wk")));
    let k = tape.add_bias(k, bound.id(&format!("{prefix}.bk")));
    let v = tape.matmul(kv_in, bound.id(&format!("{prefix}.wv")));
    let v = tape.add_bias(v, bound.id(&format!("{prefix}.bv")));
    let scale = T::from_f64(1.0 / (d_head as f64).sqrt());
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let qh = tape.slice_cols(q, h * d_head, d_head);
        let kh = tape.slice_cols(k, h * d_head, d_head);
        let vh = tape.slice_cols(v, h * d_head, d_head);
        let mut scores = tape.matmul_bt(qh, kh);
        scores = tape.scale(scores, scale);
        if let Some(b) = bias {
            scores = tape.add(scores, b);
        }
        let attn = tape.softmax(scores, 1);
        heads.push(tape.matmul(attn, vh));
    }
    let ctx = tape.concat_cols(&heads);
    let out = tape.matmul(ctx, bound.id(&format!("{prefix}.wo")));
    tape.add_bias(out, bound.id(&format!("{prefix}.bo")))
}

fn feed_forward<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    prefix: &str,
    x: TensorId,
) -> TensorId {
    let h = tape.matmul(x, bound.id(&format!("{prefix}.w1")));
    let h = tape.add_bias(h, bound.id(&format!("{prefix}.b1")));
    let h = tape.gelu(h);
    let o = tape.matmul(h, bound.id(&format!("{prefix}.w2")));
    tape.add_bias(o, bound.id(&format!("{prefix}.b2")))
}

fn layer_norm_named<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    prefix: &str,
    x: TensorId,
) -> TensorId {
    tape.layer_norm(x, bound.id(&format!("{prefix}.g")), bound.id(&format!("{prefix}.b")))
}

/// One pre-norm encoder block: `x + Attn(LN(x))`, then `x + FFN(LN(x))`.
fn encoder_layer<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    bound: &Bound,
    prefix: &str,
    x: TensorId,
    bias: Option<TensorId>,
) -> TensorId {
    let n1 = layer_norm_named(tape, bound, &format!("{prefix}.ln1"), x);
    let a = multi_head_attention(tape, cfg, bound, &format!("{prefix}.attn"), n1, n1, bias);
    let x = tape.add(x, a);
    let n2 = layer_norm_named(tape, bound, &format!("{prefix}.ln2"), x);
    let f = feed_forward(tape, bound, &format!("{prefix}.ffn"), n2);
    tape.add(x, f)
}

fn encode_stack<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams,
    bound: &Bound,
    comp: &str,
    n_layers: usize,
    table: &str,
    pe_name: &str,
    ids: &[u32],
    mask: &[bool],
) -> TensorId {
    assert_eq!(ids.len(), mask.len(), "ids and mask lengths differ");
    let mut x = embed_with_positions(tape, params, bound, table, pe_name, ids);
    let bias = mask_bias(tape, ids.len(), mask);
    for i in 0..n_layers {
        x = encoder_layer(tape, &params.config, bound, &format!("{comp}.{i}"), x, bias);
    }
    layer_norm_named(tape, bound, &format!("{comp}.lnf"), x)
}

/// Contextual semantic representations `U`, one row per input position.
pub fn encode_semantic<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams,
    bound: &Bound,
    ids: &[u32],
    mask: &[bool],
) -> Result<TensorId> {
    check_len(ids.len(), params.config.max_sent_len, "sentence")?;
    Ok(encode_stack(
        tape,
        params,
        bound,
        "sem",
        params.config.n_enc_layers_sem,
        "embed.tok",
        "pe.sent",
        ids,
        mask,
    ))
}

/// Mean of the non-pad rows of `U`: the sentence embedding ū (`1×d_model`).
pub fn mean_pool<T: Scalar>(tape: &mut Tape<T>, u: TensorId, mask: &[bool]) -> Result<TensorId> {
    if !mask.iter().any(|&m| m) {
        return Err(Error::model("mean_pool: every position is padding"));
    }
    Ok(tape.mean_rows(u, mask))
}

/// Contextual syntactic representations `V` over a linearized parse.
pub fn encode_syntactic<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams,
    bound: &Bound,
    ids: &[u32],
    mask: &[bool],
) -> Result<TensorId> {
    check_len(ids.len(), params.config.max_parse_len, "linearized parse")?;
    Ok(encode_stack(
        tape,
        params,
        bound,
        "syn",
        params.config.n_enc_layers_syn,
        "embed.parse",
        "pe.parse",
        ids,
        mask,
    ))
}

/// Next-token logits for a teacher-forced target prefix. The decoder
/// self-attends causally over the prefix and cross-attends over the memory
/// `[ū; V]` — or `[ū]` alone when `syntax` is `None` (the no-syntax
/// ablation). Logits are the hidden states projected through the tied token
/// embedding.
pub fn decode_logits<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams,
    bound: &Bound,
    u_bar: TensorId,
    syntax: Option<(TensorId, &[bool])>,
    prefix_ids: &[u32],
) -> Result<TensorId> {
    let cfg = &params.config;
    check_len(prefix_ids.len(), cfg.max_sent_len, "target prefix")?;
    let (memory, mem_mask): (TensorId, Vec<bool>) = match syntax {
        Some((v, v_mask)) => {
            let mem = tape.concat_rows(&[u_bar, v]);
            let mut mm = Vec::with_capacity(1 + v_mask.len());
            mm.push(true);
            mm.extend_from_slice(v_mask);
            (mem, mm)
        }
        None => (u_bar, vec![true]),
    };
    let l = prefix_ids.len();
    let mut x = embed_with_positions(tape, params, bound, "embed.tok", "pe.sent", prefix_ids);
    let causal = causal_bias(tape, l);
    let cross = mask_bias(tape, l, &mem_mask);
    for i in 0..cfg.n_dec_layers {
        let p = format!("dec.{i}");
        let n1 = layer_norm_named(tape, bound, &format!("{p}.ln1"), x);
        let a = multi_head_attention(tape, cfg, bound, &format!("{p}.self"), n1, n1, causal);
        x = tape.add(x, a);
        let n2 = layer_norm_named(tape, bound, &format!("{p}.ln2"), x);
        let c = multi_head_attention(tape, cfg, bound, &format!("{p}.cross"), n2, memory, cross);
        x = tape.add(x, c);
        let n3 = layer_norm_named(tape, bound, &format!("{p}.ln3"), x);
        let f = feed_forward(tape, bound, &format!("{p}.ffn"), n3);
        x = tape.add(x, f);
    }
    let h = layer_norm_named(tape, bound, "dec.lnf", x);
    Ok(tape.matmul_bt(h, bound.id("embed.tok")))
}

/// Discriminator scores before the softmax (`1×|T|`). The losses want this
/// form for log-sum-exp stability.
pub fn discriminate_logits<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    u_bar: TensorId,
) -> TensorId {
    let z = tape.matmul_bt(u_bar, bound.id("dis.w"));
    tape.add_bias(z, bound.id("dis.b"))
}

/// The predicted tag distribution `y_h = softmax(W ū + b)`.
pub fn discriminate<T: Scalar>(tape: &mut Tape<T>, bound: &Bound, u_bar: TensorId) -> TensorId {
    let z = discriminate_logits(tape, bound, u_bar);
    tape.softmax(z, 1)
}

/// Token-level negative log-likelihood of the target sentence, summed over
/// the positions flagged in `keep`.
pub fn paraphrase_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logits: TensorId,
    targets: &[u32],
    keep: &[bool],
) -> TensorId {
    tape.cross_entropy(logits, targets, keep)
}

/// Cross-entropy between the source parse's tag distribution `h` and the
/// discriminator prediction, computed from the pre-softmax scores.
pub fn adversarial_loss<T: Scalar>(
    tape: &mut Tape<T>,
    dis_logits: TensorId,
    h: &[T],
) -> TensorId {
    tape.dist_cross_entropy(dis_logits, h)
}

// ---- checkpointing ------------------------------------------------------

const PARAMS_FILE: &str = "model.pbt";
const SIDECAR_FILE: &str = "model.json";

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: ModelConfig,
    vocab: Vec<String>,
    tagset: Vec<String>,
}

/// A saved model: parameters plus the vocabulary and tag set they index.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Vocab,
    pub tagset: TagSet,
}

impl Checkpoint {
    pub fn new(params: ModelParams, vocab: Vocab, tagset: TagSet) -> Result<Checkpoint> {
        if vocab.len() != params.config.vocab_size {
            return Err(Error::config(format!(
                "vocab has {} entries but config says {}",
                vocab.len(),
                params.config.vocab_size
            )));
        }
        if tagset.len() != params.config.tagset_size {
            return Err(Error::config(format!(
                "tag set has {} entries but config says {}",
                tagset.len(),
                params.config.tagset_size
            )));
        }
        Ok(Checkpoint {
            params,
            vocab,
            tagset,
        })
    }

    /// Write `model.pbt` (tensors) and `model.json` (config, vocab, tag set)
    /// into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_checkpoint(&dir.join(PARAMS_FILE), &self.params.tensors)?;
        let sidecar = Sidecar {
            config: self.params.config.clone(),
            vocab: self.vocab.tokens().to_vec(),
            tagset: self.tagset.tags().to_vec(),
        };
        let mut json = serde_json::to_string_pretty(&sidecar)?;
        json.push('\n');
        std::fs::write(dir.join(SIDECAR_FILE), json)?;
        Ok(())
    }

    /// Load and validate a checkpoint directory: every expected tensor must
    /// be present with its expected shape, and nothing extra.
    pub fn load(dir: &Path) -> Result<Checkpoint> {
        let sidecar: Sidecar =
            serde_json::from_str(&std::fs::read_to_string(dir.join(SIDECAR_FILE))?)?;
        sidecar.config.validate()?;
        let mut tensors = read_checkpoint(&dir.join(PARAMS_FILE))?;
        let expected = expected_shapes(&sidecar.config);
        if tensors.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (name, shape) in &expected {
            let t = tensors
                .get_mut(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))?;
            if &t.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?} has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
            t.requires_grad = !is_constant(name);
        }
        let params = ModelParams {
            config: sidecar.config,
            tensors,
        };
        let vocab = Vocab::from_tokens(sidecar.vocab);
        let tagset = TagSet::new(sidecar.tagset)?;
        Checkpoint::new(params, vocab, tagset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ParseVocab;
    use crate::syntax;
    use tempfile::tempdir;

    fn tiny_config() -> ModelConfig {
        let mut cfg = ModelConfig::desk(30, 8);
        cfg.d_model = 16;
        cfg.n_heads = 2;
        cfg.d_ff = 32;
        cfg.max_sent_len = 12;
        cfg.max_parse_len = 24;
        cfg
    }

    #[test]
    fn config_validation_catches_bad_settings() {
        assert!(ModelConfig::desk(100, 18).validate().is_ok());
        let mut c = ModelConfig::desk(100, 18);
        c.d_model = 65;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk(100, 18);
        c.lambda_adv = -0.5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk(100, 18);
        c.dropout = 0.1;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk(100, 18);
        c.n_dec_layers = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_is_seeded_and_complete() {
        let cfg = tiny_config();
        let a = ModelParams::init(cfg.clone(), 1).unwrap();
        let b = ModelParams::init(cfg.clone(), 1).unwrap();
        let c = ModelParams::init(cfg.clone(), 2).unwrap();
        for (name, shape) in expected_shapes(&cfg) {
            let ta = &a.tensors[&name];
            assert_eq!(ta.shape, shape, "{name}");
            assert_eq!(ta.data, b.tensors[&name].data, "{name} differs across runs");
            assert_eq!(ta.requires_grad, !is_constant(&name), "{name}");
        }
        assert_ne!(
            a.tensors["embed.tok"].data, c.tensors["embed.tok"].data,
            "different seeds should give different draws"
        );
        // Layer-norm gains start at one, biases at zero.
        assert!(a.tensors["sem.0.ln1.g"].data.iter().all(|&v| v == 1.0));
        assert!(a.tensors["sem.0.attn.bq"].data.iter().all(|&v| v == 0.0));
        // Position encodings bounded by the scale factor.
        assert!(a.tensors["pe.sent"]
            .data
            .iter()
            .all(|&v| v.abs() <= PE_SCALE as f32 + 1e-6));
    }

    #[test]
    fn param_groups_partition_by_component() {
        assert_eq!(param_group("sem.0.attn.wq"), ParamGroup::SemEncoder);
        assert_eq!(param_group("sem.lnf.g"), ParamGroup::SemEncoder);
        assert_eq!(param_group("dis.w"), ParamGroup::Discriminator);
        assert_eq!(param_group("dis.b"), ParamGroup::Discriminator);
        for rest in ["embed.tok", "embed.parse", "syn.0.ffn.w1", "dec.0.cross.wo", "dec.lnf.b"] {
            assert_eq!(param_group(rest), ParamGroup::Rest, "{rest}");
        }
    }

    fn forward_u_bar(params: &ModelParams, ids: &[u32], mask: &[bool]) -> Vec<f32> {
        let mut tape = Tape::new();
        let bound = params.bind_all(&mut tape);
        let u = encode_semantic(&mut tape, params, &bound, ids, mask).unwrap();
        let pooled = mean_pool(&mut tape, u, mask).unwrap();
        tape.value(pooled).to_vec()
    }

    #[test]
    fn encode_semantic_shape_and_determinism() {
        let params = ModelParams::init(tiny_config(), 3).unwrap();
        let ids = [2u32, 7, 9, 3];
        let mask = [true; 4];
        let mut tape: Tape<f32> = Tape::new();
        let bound = params.bind_all(&mut tape);
        let u = encode_semantic(&mut tape, &params, &bound, &ids, &mask).unwrap();
        assert_eq!(tape.shape(u), (4, 16));
        let a = forward_u_bar(&params, &ids, &mask);
        let b = forward_u_bar(&params, &ids, &mask);
        assert_eq!(a, b);
        let c = forward_u_bar(&params, &[2, 8, 9, 3], &mask);
        assert_ne!(a, c, "different sentences should embed differently");
    }

    #[test]
    fn padding_tail_does_not_change_the_embedding() {
        let params = ModelParams::init(tiny_config(), 4).unwrap();
        let trimmed = forward_u_bar(&params, &[2, 7, 9, 3], &[true; 4]);
        let padded = forward_u_bar(
            &params,
            &[2, 7, 9, 3, 0, 0, 0],
            &[true, true, true, true, false, false, false],
        );
        assert_eq!(trimmed, padded, "ū must be invariant to the pad tail");
    }

    #[test]
    fn encode_semantic_rejects_overlong_input() {
        let params = ModelParams::init(tiny_config(), 4).unwrap();
        let ids = vec![5u32; 13];
        let mask = vec![true; 13];
        let mut tape: Tape<f32> = Tape::new();
        let bound = params.bind_all(&mut tape);
        let err = encode_semantic(&mut tape, &params, &bound, &ids, &mask).unwrap_err();
        assert!(err.to_string().contains("exceeds maximum 12"), "{err}");
    }

    #[test]
    fn mean_pool_matches_hand_computation() {
        let params = ModelParams::init(tiny_config(), 5).unwrap();
        let mut tape: Tape<f32> = Tape::new();
        let u = tape.constant(2, 2, vec![1.0, 1.0, 3.0, 3.0]);
        let pooled = mean_pool(&mut tape, u, &[true, true]).unwrap();
        assert_eq!(tape.value(pooled), &[2.0, 2.0]);
        let single = tape.constant(1, 2, vec![4.0, 7.0]);
        let p1 = mean_pool(&mut tape, single, &[true]).unwrap();
        assert_eq!(tape.value(p1), &[4.0, 7.0]);
        assert!(mean_pool(&mut tape, u, &[false, false]).is_err());
        let _ = params;
    }

    #[test]
    fn structurally_distinct_parses_embed_differently() {
        let params = ModelParams::init(tiny_config(), 6).unwrap();
        let ts = syntax::TagSet::new(
            ["S", "NP", "DT", "NN", "VP", "VBZ", "ADJP", "."]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        )
        .unwrap();
        let pv = ParseVocab::from_tagset(&ts);
        let run = |text: &str| -> Vec<f32> {
            let tree = syntax::parse_ptb(text).unwrap();
            let toks = syntax::linearize(&tree);
            let (ids, mask) = pv.encode_parse(&toks, 24).unwrap();
            let n = mask.iter().filter(|&&m| m).count();
            let mut tape = Tape::new();
            let bound = params.bind_all(&mut tape);
            let v = encode_syntactic(&mut tape, &params, &bound, &ids[..n], &mask[..n]).unwrap();
            tape.value(v).to_vec()
        };
        let a = run("(S (NP (DT) (NN)))");
        let b = run("(S (NP (NN) (DT)))");
        assert_ne!(a, b, "same tag multiset, different structure");
    }

    fn decode_with(
        params: &ModelParams,
        prefix: &[u32],
        with_syntax: bool,
        zero_u: bool,
    ) -> Vec<f32> {
        let mut tape = Tape::new();
        let bound = params.bind_all(&mut tape);
        let sent = [2u32, 7, 9, 3];
        let mask = [true; 4];
        let u = encode_semantic(&mut tape, params, &bound, &sent, &mask).unwrap();
        let mut u_bar = mean_pool(&mut tape, u, &mask).unwrap();
        if zero_u {
            u_bar = tape.constant(1, params.config.d_model, vec![0.0; params.config.d_model]);
        }
        let syn = if with_syntax {
            let ids = [2u32, 5, 7, 6, 3];
            let smask = [true; 5];
            let v = encode_syntactic(&mut tape, params, &bound, &ids, &smask).unwrap();
            Some((v, smask.to_vec()))
        } else {
            None
        };
        let logits = decode_logits(
            &mut tape,
            params,
            &bound,
            u_bar,
            syn.as_ref().map(|(v, m)| (*v, m.as_slice())),
            prefix,
        )
        .unwrap();
        assert_eq!(tape.shape(logits), (prefix.len(), params.config.vocab_size));
        tape.value(logits).to_vec()
    }

    #[test]
    fn decoder_is_causal() {
        let params = ModelParams::init(tiny_config(), 7).unwrap();
        let base_prefix = [2u32, 5, 6, 7, 8];
        let base = decode_with(&params, &base_prefix, true, false);
        let v = params.config.vocab_size;
        for j in 1..base_prefix.len() {
            let mut perturbed = base_prefix;
            perturbed[j] = 11;
            let out = decode_with(&params, &perturbed, true, false);
            assert_eq!(
                &base[..j * v],
                &out[..j * v],
                "logits before position {j} must not see the change"
            );
            assert_ne!(
                &base[j * v..(j + 1) * v],
                &out[j * v..(j + 1) * v],
                "logits at position {j} should see the change"
            );
        }
    }

    #[test]
    fn decoder_uses_the_semantic_channel() {
        let params = ModelParams::init(tiny_config(), 8).unwrap();
        let prefix = [2u32, 5, 6];
        let with_u = decode_with(&params, &prefix, true, false);
        let without_u = decode_with(&params, &prefix, true, true);
        assert_ne!(with_u, without_u, "zeroing ū must change the logits");
        // The no-syntax ablation conditions on ū alone and still decodes.
        let no_syn = decode_with(&params, &prefix, false, false);
        assert_ne!(with_u, no_syn);
    }

    #[test]
    fn discriminator_with_zero_weights_is_uniform() {
        let mut params = ModelParams::init(tiny_config(), 9).unwrap();
        let n_tags = params.config.tagset_size;
        params.tensors.get_mut("dis.w").unwrap().data.fill(0.0);
        params.tensors.get_mut("dis.b").unwrap().data.fill(0.0);
        let mut tape = Tape::new();
        let bound = params.bind_all(&mut tape);
        let u = tape.constant(1, 16, (0..16).map(|i| i as f32 * 0.1).collect());
        let y = discriminate(&mut tape, &bound, u);
        assert_eq!(tape.shape(y), (1, n_tags));
        for &p in tape.value(y) {
            assert_eq!(p, 1.0 / n_tags as f32);
        }
    }

    #[test]
    fn discriminator_outputs_a_distribution() {
        let params = ModelParams::init(tiny_config(), 10).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind_all(&mut tape);
        let u = tape.constant(1, 16, (0..16).map(|i| (i as f32 - 8.0) * 0.7).collect());
        let y = discriminate(&mut tape, &bound, u);
        let vals = tape.value(y);
        assert!(vals.iter().all(|&p| p > 0.0));
        let sum: f32 = vals.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6, "sum {sum}");
    }

    #[test]
    fn adversarial_loss_matches_closed_forms() {
        // Uniform target, uniform prediction over 8 tags: ln 8.
        let mut tape: Tape<f64> = Tape::new();
        let logits = tape.constant(1, 8, vec![0.0; 8]);
        let h = vec![0.125; 8];
        let loss = adversarial_loss(&mut tape, logits, &h);
        assert!((tape.scalar(loss) - 8f64.ln()).abs() < 1e-12);

        // Prediction equal to the target: the loss is the target's entropy,
        // and any other prediction does worse.
        let h = [0.5, 0.25, 0.125, 0.125];
        let entropy: f64 = h.iter().map(|&p: &f64| -p * p.ln()).sum();
        let mut tape: Tape<f64> = Tape::new();
        let exact = tape.constant(1, 4, h.iter().map(|&p| p.ln()).collect());
        let at_min = adversarial_loss(&mut tape, exact, &h);
        assert!((tape.scalar(at_min) - entropy).abs() < 1e-12);
        let off = tape.constant(1, 4, vec![0.2, -0.1, 0.4, 0.0]);
        let above = adversarial_loss(&mut tape, off, &h);
        assert!(tape.scalar(above) > entropy);
    }

    #[test]
    fn paraphrase_loss_matches_uniform_and_perfect_cases() {
        let v = 30usize;
        let mut tape: Tape<f32> = Tape::new();
        let zeros = tape.constant(4, v, vec![0.0; 4 * v]);
        let targets = [1u32, 2, 3, 4];
        let keep = [true, true, true, false];
        let loss = paraphrase_loss(&mut tape, zeros, &targets, &keep);
        let expect = 3.0 * (v as f32).ln();
        assert!((tape.scalar(loss) - expect).abs() < 1e-4);

        let mut peaked = vec![0.0f32; 2 * v];
        peaked[5] = 100.0;
        peaked[v + 9] = 100.0;
        let logits = tape.constant(2, v, peaked);
        let loss = paraphrase_loss(&mut tape, logits, &[5, 9], &[true, true]);
        assert!(tape.scalar(loss).abs() < 1e-6);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let cfg = tiny_config();
        let params = ModelParams::init(cfg.clone(), 11).unwrap();
        let vocab = Vocab::from_tokens(
            (0..cfg.vocab_size)
                .map(|i| format!("tok{i}"))
                .collect::<Vec<_>>(),
        );
        let tagset = syntax::TagSet::new(
            (0..cfg.tagset_size).map(|i| format!("T{i}")).collect(),
        )
        .unwrap();
        let ckpt = Checkpoint::new(params, vocab, tagset).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("m");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.params.config, ckpt.params.config);
        for (name, t) in &ckpt.params.tensors {
            let l = &loaded.params.tensors[name];
            assert_eq!(l.shape, t.shape);
            let same_bits = l
                .data
                .iter()
                .zip(&t.data)
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same_bits, "{name} changed across save/load");
            assert_eq!(l.requires_grad, !is_constant(name));
        }
        assert_eq!(loaded.vocab.tokens(), ckpt.vocab.tokens());
        assert_eq!(loaded.tagset.tags(), ckpt.tagset.tags());
    }

    #[test]
    fn checkpoint_load_rejects_shape_mismatch() {
        let cfg = tiny_config();
        let params = ModelParams::init(cfg.clone(), 12).unwrap();
        let vocab = Vocab::from_tokens((0..cfg.vocab_size).map(|i| format!("t{i}")).collect());
        let tagset =
            syntax::TagSet::new((0..cfg.tagset_size).map(|i| format!("T{i}")).collect()).unwrap();
        let ckpt = Checkpoint::new(params, vocab, tagset).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("m");
        ckpt.save(&path).unwrap();
        // Claim a different width in the sidecar: tensor shapes no longer match.
        let sidecar_path = path.join("model.json");
        let text = std::fs::read_to_string(&sidecar_path).unwrap();
        std::fs::write(&sidecar_path, text.replace("\"d_model\": 16", "\"d_model\": 8")).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn mismatched_vocab_size_is_rejected() {
        let cfg = tiny_config();
        let params = ModelParams::init(cfg, 13).unwrap();
        let vocab = Vocab::from_tokens(vec!["a".into(); 3]);
        let tagset = syntax::TagSet::new((0..8).map(|i| format!("T{i}")).collect()).unwrap();
        assert!(Checkpoint::new(params, vocab, tagset).is_err());
    }
}
