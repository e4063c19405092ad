//! Adversarial training loop.
//!
//! Each iteration runs two sub-updates:
//!
//! 1. **inner** — forward the semantic embedding ū with encoder gradients
//!    structurally blocked (only the discriminator is bound as trainable)
//!    and minimize the adversarial loss over the discriminator's `W` and
//!    `b`;
//! 2. **outer** — a fresh forward pass minimizing
//!    `L_para − λ·L_adv` over everything *except* the discriminator, so the
//!    encoder learns to both paraphrase and hide syntax.
//!
//! Ablation modes: `no-adv` skips the inner step and drops the `λ·L_adv`
//! term; `no-adv-no-syntax` additionally removes the syntactic encoder from
//! the decoder memory.
//!
//! Three AdamW groups: the semantic encoder and the discriminator use the
//! small learning rate, everything else (syntactic encoder, decoder, shared
//! embeddings) the large one. Gradients are clipped to a global L2 norm per
//! sub-update before the optimizer applies them.
//!
//! Every random choice — parameter init, validation split, epoch shuffles,
//! word dropout — draws from its own stream derived from the root seed, so
//! reruns are bitwise identical and training can resume from an epoch
//! checkpoint without perturbing the remaining schedule.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{self, ParaphrasePair, ParseVocab, Vocab};
use crate::error::{Error, Result};
use crate::model::{
    self, param_group, Checkpoint, ModelConfig, ModelParams, ParamGroup,
};
use crate::rng::{self, Stream};
use crate::syntax::{self, TagSet};
use crate::tensor::{
    clip_global_norm, read_checkpoint, write_checkpoint, AdamW, AdamWConfig, Scalar, Tape,
    Tensor, TensorId,
};

/// Which parts of the architecture and objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full,
    NoAdv,
    NoAdvNoSyntax,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoAdv => "no-adv",
            Mode::NoAdvNoSyntax => "no-adv-no-syntax",
        }
    }

    /// Does this mode train the discriminator and apply `−λ·L_adv`?
    pub fn uses_adversary(self) -> bool {
        matches!(self, Mode::Full)
    }

    /// Does the decoder memory include the syntactic representations?
    pub fn uses_syntax(self) -> bool {
        !matches!(self, Mode::NoAdvNoSyntax)
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "full" => Ok(Mode::Full),
            "no-adv" | "no_adv" => Ok(Mode::NoAdv),
            "no-adv-no-syntax" | "no_adv_no_syntax" => Ok(Mode::NoAdvNoSyntax),
            other => Err(Error::config(format!(
                "unknown mode {other:?}; expected full, no-adv, or no-adv-no-syntax"
            ))),
        }
    }
}

/// All training knobs, flat so a command line and a manifest map onto it
/// 1:1. Architecture fields mirror [`ModelConfig`]; vocabulary sizes are
/// derived from the corpus at train time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_encoder_and_disc: f32,
    pub lr_rest: f32,
    pub lambda_adv: f32,
    pub word_dropout_p: f32,
    pub clip_norm: f32,
    pub weight_decay: f32,
    pub val_fraction: f64,
    pub seed: u64,
    pub mode: Mode,
    pub d_model: usize,
    pub n_heads: usize,
    pub layers_sem: usize,
    pub layers_syn: usize,
    pub layers_dec: usize,
    pub d_ff: usize,
    pub max_sent_len: usize,
    pub max_parse_len: usize,
}

impl TrainConfig {
    pub fn new(seed: u64, mode: Mode) -> TrainConfig {
        TrainConfig {
            epochs: 10,
            batch_size: 64,
            lr_encoder_and_disc: 2e-5,
            lr_rest: 1e-4,
            lambda_adv: 0.1,
            word_dropout_p: 0.2,
            clip_norm: 1.0,
            weight_decay: 0.0,
            val_fraction: 0.1,
            seed,
            mode,
            d_model: 64,
            n_heads: 4,
            layers_sem: 2,
            layers_syn: 1,
            layers_dec: 1,
            d_ff: 256,
            max_sent_len: 40,
            max_parse_len: 160,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be at least 1"));
        }
        for (name, lr) in [
            ("lr_encoder_and_disc", self.lr_encoder_and_disc),
            ("lr_rest", self.lr_rest),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {lr}")));
            }
        }
        if !(0.0..1.0).contains(&self.word_dropout_p) {
            return Err(Error::config(format!(
                "word_dropout_p must be in [0, 1), got {}",
                self.word_dropout_p
            )));
        }
        if self.lambda_adv < 0.0 || !self.lambda_adv.is_finite() {
            return Err(Error::config("lambda_adv must be non-negative"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm must be positive"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        if !(0.0..=0.5).contains(&self.val_fraction) {
            return Err(Error::config("val_fraction must be in [0, 0.5]"));
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize, tagset_size: usize) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_enc_layers_sem: self.layers_sem,
            n_enc_layers_syn: self.layers_syn,
            n_dec_layers: self.layers_dec,
            d_ff: self.d_ff,
            vocab_size,
            tagset_size,
            max_sent_len: self.max_sent_len,
            max_parse_len: self.max_parse_len,
            dropout: 0.0,
            lambda_adv: self.lambda_adv,
        }
    }
}

/// Replace eligible tokens by `<mask>` with probability `p`. Reserved ids —
/// `<s>`, `</s>`, `<pad>`, and friends — are never masked; the pad mask
/// additionally guards positions that carry no token.
pub fn word_dropout(ids: &[u32], mask: &[bool], p: f32, rng: &mut ChaCha8Rng) -> Vec<u32> {
    assert_eq!(ids.len(), mask.len(), "ids and mask lengths differ");
    ids.iter()
        .zip(mask)
        .map(|(&id, &live)| {
            if live && id >= data::N_SPECIAL && rng.gen::<f32>() < p {
                data::MASK
            } else {
                id
            }
        })
        .collect()
}

/// One corpus pair, encoded and trimmed to true length (no pad positions;
/// padding invariance makes the trimmed computation equal to the padded
/// one, and much cheaper).
#[derive(Debug, Clone)]
pub struct EncodedPair {
    /// `<s> sent1 </s>` — the semantic encoder input.
    pub src: Vec<u32>,
    /// `<s> sent2 </s>` — teacher-forcing prefix is `tgt[..n-1]`, targets
    /// are `tgt[1..]`.
    pub tgt: Vec<u32>,
    /// `<s> linearize(parse2) </s>` — the syntactic encoder input.
    pub parse: Vec<u32>,
    /// Dense tag bag-of-words of parse1 — the discriminator target.
    pub h: Vec<f32>,
}

/// A corpus ready to train on.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub pairs: Vec<EncodedPair>,
    pub vocab: Vocab,
    pub parse_vocab: ParseVocab,
    pub tagset: TagSet,
}

fn trim(ids: Vec<u32>, mask: Vec<bool>) -> Vec<u32> {
    let n = mask.iter().filter(|&&m| m).count();
    let mut ids = ids;
    ids.truncate(n);
    ids
}

/// Parse, index, and encode a raw corpus. The vocabulary and tag set are
/// deterministic functions of the pairs.
pub fn prepare(pairs: &[ParaphrasePair], cfg: &TrainConfig) -> Result<Dataset> {
    let vocab = data::build_vocab(pairs, 1)?;
    let mut trees = Vec::with_capacity(pairs.len() * 2);
    for (i, p) in pairs.iter().enumerate() {
        let t1 = syntax::parse_ptb(&p.parse1).map_err(|e| Error::Corpus {
            line: i + 1,
            msg: format!("parse1: {e}"),
        })?;
        let t2 = syntax::parse_ptb(&p.parse2).map_err(|e| Error::Corpus {
            line: i + 1,
            msg: format!("parse2: {e}"),
        })?;
        trees.push((t1, t2));
    }
    let tagset = TagSet::collect(trees.iter().flat_map(|(a, b)| [a, b]));
    let parse_vocab = ParseVocab::from_tagset(&tagset);
    let mut encoded = Vec::with_capacity(pairs.len());
    for (pair, (t1, t2)) in pairs.iter().zip(&trees) {
        let (ids, mask) = data::encode(&vocab, &pair.sent1, cfg.max_sent_len);
        let src = trim(ids, mask);
        let (ids, mask) = data::encode(&vocab, &pair.sent2, cfg.max_sent_len);
        let tgt = trim(ids, mask);
        let toks = syntax::linearize(t2);
        let (ids, mask) = parse_vocab.encode_parse(&toks, cfg.max_parse_len)?;
        let parse = trim(ids, mask);
        let h = syntax::tag_bow(t1, &tagset)?.to_dense(&tagset);
        encoded.push(EncodedPair {
            src,
            tgt,
            parse,
            h,
        });
    }
    Ok(Dataset {
        pairs: encoded,
        vocab,
        parse_vocab,
        tagset,
    })
}

/// Tape-level forward for one pair. Returns the paraphrase loss (if
/// requested) and the discriminator's pre-softmax scores (if requested).
fn pair_forward<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams,
    bound: &model::Bound,
    mode: Mode,
    pair: &EncodedPair,
    src: &[u32],
    want_para: bool,
    want_dis: bool,
) -> Result<(Option<TensorId>, Option<TensorId>)> {
    let src_mask = vec![true; src.len()];
    let u = model::encode_semantic(tape, params, bound, src, &src_mask)?;
    let u_bar = model::mean_pool(tape, u, &src_mask)?;
    let dis = if want_dis {
        Some(model::discriminate_logits(tape, bound, u_bar))
    } else {
        None
    };
    let para = if want_para {
        let syn = if mode.uses_syntax() {
            let p_mask = vec![true; pair.parse.len()];
            let v = model::encode_syntactic(tape, params, bound, &pair.parse, &p_mask)?;
            Some((v, p_mask))
        } else {
            None
        };
        let prefix = &pair.tgt[..pair.tgt.len() - 1];
        let targets = &pair.tgt[1..];
        let logits = model::decode_logits(
            tape,
            params,
            bound,
            u_bar,
            syn.as_ref().map(|(v, m)| (*v, m.as_slice())),
            prefix,
        )?;
        let keep = vec![true; targets.len()];
        Some(model::paraphrase_loss(tape, logits, targets, &keep))
    } else {
        None
    };
    let adv = dis.map(|d| {
        let h: Vec<T> = pair.h.iter().map(|&v| T::from_f32(v)).collect();
        model::adversarial_loss(tape, d, &h)
    });
    Ok((para, adv))
}

fn mean_of<T: Scalar>(tape: &mut Tape<T>, terms: &[TensorId]) -> TensorId {
    assert!(!terms.is_empty(), "cannot average zero loss terms");
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t);
    }
    tape.scale(total, T::from_f64(1.0 / terms.len() as f64))
}

fn collect_grads(
    tape: &Tape<f32>,
    bound: &model::Bound,
    names: impl Iterator<Item = String>,
) -> BTreeMap<String, Vec<f32>> {
    let mut grads = BTreeMap::new();
    for name in names {
        let id = bound.id(&name);
        let g = tape
            .grad(id)
            .unwrap_or_else(|| panic!("no gradient recorded for {name:?}"))
            .to_vec();
        grads.insert(name, g);
    }
    grads
}

fn ensure_finite(value: f32, what: &str, step: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::model(format!(
            "{what} became non-finite ({value}) at step {step}; aborting"
        )))
    }
}

/// The word-dropout realization for one step, one source per pair.
fn dropped_sources(batch: &[&EncodedPair], p: f32, seed: u64, step: usize) -> Vec<Vec<u32>> {
    let mut rng = rng::stream(seed, Stream::WordDropout, step as u64);
    batch
        .iter()
        .map(|pair| {
            let mask = vec![true; pair.src.len()];
            word_dropout(&pair.src, &mask, p, &mut rng)
        })
        .collect()
}

/// Inner sub-update: minimize the mean adversarial loss over the
/// discriminator parameters only. Returns the mean loss.
pub fn inner_step(
    params: &mut ModelParams,
    opt_disc: &mut AdamW,
    batch: &[&EncodedPair],
    sources: &[Vec<u32>],
    clip_norm: f32,
    step: usize,
) -> Result<f32> {
    let mut tape: Tape<f32> = Tape::new();
    let bound = params.bind(&mut tape, |name| {
        param_group(name) == ParamGroup::Discriminator
    });
    let mut losses = Vec::with_capacity(batch.len());
    for (pair, src) in batch.iter().zip(sources) {
        let (_, adv) = pair_forward(
            &mut tape, params, &bound, Mode::Full, pair, src, false, true,
        )?;
        losses.push(adv.expect("inner step requested the discriminator"));
    }
    let loss = mean_of(&mut tape, &losses);
    let value = tape.scalar(loss);
    ensure_finite(value, "inner adversarial loss", step)?;
    tape.backward(loss);
    let mut grads = collect_grads(
        &tape,
        &bound,
        params
            .trainable_names()
            .into_iter()
            .filter(|n| param_group(n) == ParamGroup::Discriminator),
    );
    clip_global_norm(&mut grads, clip_norm);
    opt_disc.step(&mut params.tensors, &grads);
    Ok(value)
}

/// Outer sub-update: minimize `L_para − λ·L_adv` (or just `L_para` without
/// the adversary) over everything but the discriminator. Returns
/// `(mean L_para, mean L_adv, pre-clip gradient norm)`.
pub fn outer_step(
    params: &mut ModelParams,
    opt_sem: &mut AdamW,
    opt_rest: &mut AdamW,
    batch: &[&EncodedPair],
    sources: &[Vec<u32>],
    cfg: &TrainConfig,
    step: usize,
) -> Result<(f32, f32, f32)> {
    let mut tape: Tape<f32> = Tape::new();
    let bound = params.bind(&mut tape, |name| {
        param_group(name) != ParamGroup::Discriminator
    });
    let want_dis = cfg.mode.uses_adversary();
    let mut para_terms = Vec::with_capacity(batch.len());
    let mut adv_terms = Vec::with_capacity(batch.len());
    for (pair, src) in batch.iter().zip(sources) {
        let (para, adv) = pair_forward(
            &mut tape, params, &bound, cfg.mode, pair, src, true, want_dis,
        )?;
        para_terms.push(para.expect("outer step requested the decoder"));
        if let Some(a) = adv {
            adv_terms.push(a);
        }
    }
    let para_mean = mean_of(&mut tape, &para_terms);
    let para_value = tape.scalar(para_mean);
    ensure_finite(para_value, "paraphrase loss", step)?;
    let (objective, adv_value) = if want_dis {
        let adv_mean = mean_of(&mut tape, &adv_terms);
        let adv_value = tape.scalar(adv_mean);
        ensure_finite(adv_value, "adversarial loss", step)?;
        let penalty = tape.scale(adv_mean, -cfg.lambda_adv);
        (tape.add(para_mean, penalty), adv_value)
    } else {
        (para_mean, 0.0)
    };
    tape.backward(objective);
    let mut grads = collect_grads(
        &tape,
        &bound,
        params
            .trainable_names()
            .into_iter()
            .filter(|n| param_group(n) != ParamGroup::Discriminator),
    );
    let norm = clip_global_norm(&mut grads, cfg.clip_norm);
    let mut sem_grads = BTreeMap::new();
    let mut rest_grads = BTreeMap::new();
    for (name, g) in grads {
        match param_group(&name) {
            ParamGroup::SemEncoder => sem_grads.insert(name, g),
            ParamGroup::Rest => rest_grads.insert(name, g),
            ParamGroup::Discriminator => unreachable!("discriminator is not bound trainable"),
        };
    }
    opt_sem.step(&mut params.tensors, &sem_grads);
    opt_rest.step(&mut params.tensors, &rest_grads);
    Ok((para_value, adv_value, norm))
}

/// One step-level log record.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub l_para: f32,
    pub l_adv: f32,
    pub grad_norm: f32,
    pub seconds: f64,
}

/// Per-epoch validation record; epoch 0 is the untrained model.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochVal {
    pub epoch: usize,
    pub l_para: f32,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub val: Vec<EpochVal>,
}

impl TrainLog {
    pub fn step_csv(&self) -> String {
        let mut out = String::from("step,l_para,l_adv,grad_norm,seconds\n");
        for r in &self.steps {
            writeln!(
                out,
                "{},{},{},{},{:.6}",
                r.step, r.l_para, r.l_adv, r.grad_norm, r.seconds
            )
            .expect("string write");
        }
        out
    }

    pub fn val_csv(&self) -> String {
        let mut out = String::from("epoch,val_l_para\n");
        for r in &self.val {
            writeln!(out, "{},{}", r.epoch, r.l_para).expect("string write");
        }
        out
    }
}

/// Mean validation paraphrase loss (per pair, no word dropout).
pub fn validation_loss(
    params: &ModelParams,
    pairs: &[&EncodedPair],
    mode: Mode,
) -> Result<f32> {
    assert!(!pairs.is_empty(), "validation set is empty");
    let mut total = 0f64;
    for pair in pairs {
        let mut tape: Tape<f32> = Tape::new();
        let bound = params.bind(&mut tape, |_| false);
        let (para, _) =
            pair_forward(&mut tape, params, &bound, mode, pair, &pair.src, true, false)?;
        total += tape.scalar(para.expect("validation requested the decoder")) as f64;
    }
    Ok((total / pairs.len() as f64) as f32)
}

#[derive(Serialize, Deserialize)]
struct TrainState {
    /// Epochs fully completed when this state was written.
    epoch: usize,
    global_step: usize,
    best_val: f32,
    initial_val: f32,
    disc_steps: u64,
    sem_steps: u64,
    rest_steps: u64,
    config: TrainConfig,
}

/// Everything `train` produces: the best-validation checkpoint, the log,
/// and the first/best validation losses for quick inspection.
#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    pub initial_val: f32,
    pub best_val: f32,
}

fn opt_state_tensors(opts: [(&str, &AdamW); 3]) -> BTreeMap<String, Tensor<f32>> {
    let mut out = BTreeMap::new();
    for (prefix, opt) in opts {
        for (name, m, v) in opt.export_state() {
            out.insert(
                format!("{prefix}.m.{name}"),
                Tensor::new(vec![m.len()], m),
            );
            out.insert(
                format!("{prefix}.v.{name}"),
                Tensor::new(vec![v.len()], v),
            );
        }
    }
    out
}

fn restore_opt(prefix: &str, tensors: &BTreeMap<String, Tensor<f32>>, steps: u64, opt: &mut AdamW) {
    let m_prefix = format!("{prefix}.m.");
    let mut slots = Vec::new();
    for (name, t) in tensors {
        if let Some(param) = name.strip_prefix(&m_prefix) {
            let v_name = format!("{prefix}.v.{param}");
            let v = &tensors[&v_name];
            slots.push((param.to_string(), t.data.clone(), v.data.clone()));
        }
    }
    opt.import_state(steps, slots);
}

fn same_but_epochs(a: &TrainConfig, b: &TrainConfig) -> bool {
    let mut a = a.clone();
    let mut b = b.clone();
    a.epochs = 0;
    b.epochs = 0;
    a == b
}

/// Train on `pairs` from scratch. If `out_dir` is given, writes the
/// best-validation checkpoint at its root, per-epoch checkpoints (with
/// optimizer state) under `epoch-NNN/`, and the step/validation CSV logs.
pub fn train(
    pairs: &[ParaphrasePair],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    train_resumable(pairs, cfg, out_dir, None)
}

/// Like [`train`], but optionally continue from an `epoch-NNN` directory of
/// a previous run over the same corpus and config (`epochs` may grow). The
/// result is bitwise identical to an uninterrupted run because every RNG
/// stream is indexed by epoch or step, not by history.
pub fn train_resumable(
    pairs: &[ParaphrasePair],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    resume_from: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dataset = prepare(pairs, cfg)?;
    let model_cfg = cfg.model_config(dataset.vocab.len(), dataset.tagset.len());
    model_cfg.validate()?;

    // Deterministic validation split.
    let n = dataset.pairs.len();
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, &mut rng::stream(cfg.seed, Stream::Split, 0));
    let n_val = ((n as f64) * cfg.val_fraction).round() as usize;
    let n_val = n_val.min(n.saturating_sub(1)).max(usize::from(n > 1));
    let (val_idx, train_idx) = order.split_at(n_val);
    if train_idx.is_empty() {
        return Err(Error::config("corpus too small to hold out validation"));
    }
    let val_set: Vec<&EncodedPair> = val_idx.iter().map(|&i| &dataset.pairs[i]).collect();

    let mut params = ModelParams::init(model_cfg, cfg.seed)?;
    let mut opt_disc = AdamW::new(
        AdamWConfig::new(cfg.lr_encoder_and_disc).weight_decay(cfg.weight_decay),
    );
    let mut opt_sem = AdamW::new(
        AdamWConfig::new(cfg.lr_encoder_and_disc).weight_decay(cfg.weight_decay),
    );
    let mut opt_rest = AdamW::new(AdamWConfig::new(cfg.lr_rest).weight_decay(cfg.weight_decay));

    let mut log = TrainLog::default();
    let mut start_epoch = 1usize;
    let mut global_step = 0usize;
    let (mut initial_val, mut best_val);

    if let Some(dir) = resume_from {
        let state: TrainState =
            serde_json::from_str(&std::fs::read_to_string(dir.join("state.json"))?)?;
        if !same_but_epochs(&state.config, cfg) {
            return Err(Error::config(
                "resume config differs from the saved run (only `epochs` may change)",
            ));
        }
        if state.epoch >= cfg.epochs {
            return Err(Error::config(format!(
                "nothing to resume: saved run already completed epoch {} of {}",
                state.epoch, cfg.epochs
            )));
        }
        let ckpt = Checkpoint::load(dir)?;
        if ckpt.vocab.tokens() != dataset.vocab.tokens()
            || ckpt.tagset.tags() != dataset.tagset.tags()
        {
            return Err(Error::config(
                "resume corpus differs from the one the checkpoint was trained on",
            ));
        }
        params = ckpt.params;
        let opt_tensors = read_checkpoint(&dir.join("opt.pbt"))?;
        restore_opt("disc", &opt_tensors, state.disc_steps, &mut opt_disc);
        restore_opt("sem", &opt_tensors, state.sem_steps, &mut opt_sem);
        restore_opt("rest", &opt_tensors, state.rest_steps, &mut opt_rest);
        start_epoch = state.epoch + 1;
        global_step = state.global_step;
        initial_val = state.initial_val;
        best_val = state.best_val;
    } else {
        initial_val = validation_loss(&params, &val_set, cfg.mode)?;
        best_val = f32::INFINITY;
        log.val.push(EpochVal {
            epoch: 0,
            l_para: initial_val,
        });
    }

    let mut best = Checkpoint::new(
        params.clone(),
        dataset.vocab.clone(),
        dataset.tagset.clone(),
    )?;

    for epoch in start_epoch..=cfg.epochs {
        let mut idx = train_idx.to_vec();
        shuffle(&mut idx, &mut rng::stream(cfg.seed, Stream::Shuffle, epoch as u64));
        for chunk in idx.chunks(cfg.batch_size) {
            let started = Instant::now();
            global_step += 1;
            let batch: Vec<&EncodedPair> = chunk.iter().map(|&i| &dataset.pairs[i]).collect();
            let sources =
                dropped_sources(&batch, cfg.word_dropout_p, cfg.seed, global_step);
            if cfg.mode.uses_adversary() {
                inner_step(
                    &mut params,
                    &mut opt_disc,
                    &batch,
                    &sources,
                    cfg.clip_norm,
                    global_step,
                )?;
            }
            let (l_para, l_adv, grad_norm) = outer_step(
                &mut params,
                &mut opt_sem,
                &mut opt_rest,
                &batch,
                &sources,
                cfg,
                global_step,
            )?;
            log.steps.push(StepRecord {
                step: global_step,
                l_para,
                l_adv,
                grad_norm,
                seconds: started.elapsed().as_secs_f64(),
            });
        }

        let val = validation_loss(&params, &val_set, cfg.mode)?;
        log.val.push(EpochVal {
            epoch,
            l_para: val,
        });
        let improved = val < best_val;
        if improved {
            best_val = val;
            best = Checkpoint::new(
                params.clone(),
                dataset.vocab.clone(),
                dataset.tagset.clone(),
            )?;
        }

        if let Some(dir) = out_dir {
            let epoch_dir = dir.join(format!("epoch-{epoch:03}"));
            let ckpt = Checkpoint::new(
                params.clone(),
                dataset.vocab.clone(),
                dataset.tagset.clone(),
            )?;
            ckpt.save(&epoch_dir)?;
            write_checkpoint(
                &epoch_dir.join("opt.pbt"),
                &opt_state_tensors([
                    ("disc", &opt_disc),
                    ("sem", &opt_sem),
                    ("rest", &opt_rest),
                ]),
            )?;
            let state = TrainState {
                epoch,
                global_step,
                best_val,
                initial_val,
                disc_steps: opt_disc.step_count,
                sem_steps: opt_sem.step_count,
                rest_steps: opt_rest.step_count,
                config: cfg.clone(),
            };
            let mut json = serde_json::to_string_pretty(&state)?;
            json.push('\n');
            std::fs::write(epoch_dir.join("state.json"), json)?;
            if improved {
                best.save(dir)?;
            }
            std::fs::write(dir.join("train_log.csv"), log.step_csv())?;
            std::fs::write(dir.join("val_log.csv"), log.val_csv())?;
        }
    }

    let _ = &mut initial_val;
    Ok(TrainOutcome {
        checkpoint: best,
        log,
        initial_val,
        best_val,
    })
}

/// Fisher–Yates with the given stream.
fn shuffle(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
}

/// Locate the newest `epoch-NNN` directory under a training output root.
pub fn latest_epoch_dir(out_dir: &Path) -> Result<PathBuf> {
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in std::fs::read_dir(out_dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(num) = name.strip_prefix("epoch-") {
            if let Ok(e) = num.parse::<usize>() {
                if best.as_ref().map_or(true, |(b, _)| e > *b) {
                    best = Some((e, entry.path()));
                }
            }
        }
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| Error::config(format!("no epoch-NNN directories under {out_dir:?}")))
}
