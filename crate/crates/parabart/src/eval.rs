//! Evaluation protocols for frozen sentence embeddings.
//!
//! Three families:
//!
//! * **semantic similarity** — cosine of embedding pairs against gold
//!   scores, summarized by Pearson's r (unweighted mean over files when
//!   several domains are evaluated at once);
//! * **syntactic probing** — a small MLP (one 50-neuron hidden layer)
//!   trained on frozen embeddings to predict syntax-derived labels
//!   (bigram shift, tree depth, top-level constituents), with the epoch
//!   chosen by validation accuracy;
//! * **robustness splits** — paraphrase pairs partitioned into Easy/Hard
//!   by whether the two parses share top-level constituents, scored by a
//!   cosine threshold searched on a fixed grid.
//!
//! Everything here treats the checkpoint as read-only; embedding uses the
//! semantic encoder and mean pooling with no dropout.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{self, LabeledPair, ParaphrasePair, ProbeExample, ProbeSplit, StsExample};
use crate::error::{Error, Result};
use crate::model::{self, Checkpoint};
use crate::rng::{self, Stream};
use crate::syntax::{self, ParseTree};
use crate::tensor::{AdamW, AdamWConfig, Tape, Tensor, TensorId};

/// Cosine similarity `a·b / (‖a‖‖b‖)`; rejects zero vectors.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f32> {
    assert_eq!(a.len(), b.len(), "cosine: length mismatch");
    let mut dot = 0f64;
    let mut na = 0f64;
    let mut nb = 0f64;
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::eval("cosine of a zero vector is undefined"));
    }
    Ok(((dot / (na.sqrt() * nb.sqrt())) as f32).clamp(-1.0, 1.0))
}

/// Sample Pearson correlation; rejects constant inputs, where it is
/// undefined.
pub fn pearson(x: &[f32], y: &[f32]) -> Result<f32> {
    assert_eq!(x.len(), y.len(), "pearson: length mismatch");
    if x.len() < 2 {
        return Err(Error::eval("pearson needs at least two points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let my = y.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mut sxy = 0f64;
    let mut sxx = 0f64;
    let mut syy = 0f64;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a as f64 - mx;
        let dy = b as f64 - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::eval(
            "pearson is undefined for a constant input (zero variance)",
        ));
    }
    Ok(((sxy / (sxx.sqrt() * syy.sqrt())) as f32).clamp(-1.0, 1.0))
}

/// Sentence embedding ū from a frozen checkpoint: encode, mean-pool, no
/// dropout.
pub fn embed_sentence(ckpt: &Checkpoint, sentence: &str) -> Result<Vec<f32>> {
    let (ids, mask) = data::encode(&ckpt.vocab, sentence, ckpt.params.config.max_sent_len);
    let n = mask.iter().filter(|&&m| m).count();
    let live = vec![true; n];
    let mut tape: Tape<f32> = Tape::new();
    let bound = ckpt.params.bind(&mut tape, |_| false);
    let u = model::encode_semantic(&mut tape, &ckpt.params, &bound, &ids[..n], &live)?;
    let u_bar = model::mean_pool(&mut tape, u, &live)?;
    Ok(tape.value(u_bar).to_vec())
}

pub fn embed_sentences<S: AsRef<str>>(ckpt: &Checkpoint, sentences: &[S]) -> Result<Vec<Vec<f32>>> {
    sentences
        .iter()
        .map(|s| embed_sentence(ckpt, s.as_ref()))
        .collect()
}

/// Scores for one similarity file.
#[derive(Debug, Clone)]
pub struct SimilarityResult {
    pub cosines: Vec<f32>,
    pub pearson_r: f32,
}

/// Cosine-score every pair and correlate with the gold scores.
pub fn sts_eval(ckpt: &Checkpoint, examples: &[StsExample]) -> Result<SimilarityResult> {
    if examples.is_empty() {
        return Err(Error::eval("similarity file has no pairs"));
    }
    let mut cosines = Vec::with_capacity(examples.len());
    for ex in examples {
        let a = embed_sentence(ckpt, &ex.sent1)?;
        let b = embed_sentence(ckpt, &ex.sent2)?;
        cosines.push(cosine(&a, &b)?);
    }
    let gold: Vec<f32> = examples.iter().map(|e| e.score).collect();
    let pearson_r = pearson(&cosines, &gold)?;
    Ok(SimilarityResult { cosines, pearson_r })
}

/// Evaluate several similarity files; the summary score is the unweighted
/// mean of the per-file correlations.
pub fn sts_eval_files(
    ckpt: &Checkpoint,
    files: &[Vec<StsExample>],
) -> Result<(Vec<SimilarityResult>, f32)> {
    if files.is_empty() {
        return Err(Error::eval("no similarity files given"));
    }
    let results: Vec<SimilarityResult> = files
        .iter()
        .map(|f| sts_eval(ckpt, f))
        .collect::<Result<_>>()?;
    let mean = results.iter().map(|r| r.pearson_r as f64).sum::<f64>() / results.len() as f64;
    Ok((results, mean as f32))
}

// ---- syntactic probing --------------------------------------------------

pub const PROBE_HIDDEN: usize = 50;
pub const PROBE_EPOCHS: usize = 20;
pub const PROBE_LR: f32 = 1e-3;
pub const PROBE_BATCH: usize = 32;

/// Frozen embeddings with integer labels, already split.
#[derive(Debug, Clone, Default)]
pub struct ProbeData {
    pub train: Vec<(Vec<f32>, u32)>,
    pub val: Vec<(Vec<f32>, u32)>,
    pub test: Vec<(Vec<f32>, u32)>,
}

impl ProbeData {
    /// Embed probe-file sentences with a checkpoint and bucket them by
    /// split.
    pub fn from_examples(ckpt: &Checkpoint, examples: &[ProbeExample]) -> Result<ProbeData> {
        let mut data = ProbeData::default();
        for ex in examples {
            let e = embed_sentence(ckpt, &ex.sentence)?;
            let bucket = match ex.split {
                ProbeSplit::Train => &mut data.train,
                ProbeSplit::Val => &mut data.val,
                ProbeSplit::Test => &mut data.test,
            };
            bucket.push((e, ex.label));
        }
        Ok(data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub task: String,
    pub train_acc: f32,
    pub val_acc: f32,
    pub test_acc: f32,
}

fn probe_logits(
    tape: &mut Tape<f32>,
    x: TensorId,
    w1: TensorId,
    b1: TensorId,
    w2: TensorId,
    b2: TensorId,
) -> TensorId {
    let h = tape.matmul_bt(x, w1);
    let h = tape.add_bias(h, b1);
    let h = tape.relu(h);
    let z = tape.matmul_bt(h, w2);
    tape.add_bias(z, b2)
}

fn batch_matrix(split: &[(Vec<f32>, u32)], idx: &[usize], d: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        out.extend_from_slice(&split[i].0);
    }
    out
}

fn probe_accuracy(params: &BTreeMap<String, Tensor<f32>>, split: &[(Vec<f32>, u32)], d: usize) -> f32 {
    assert!(!split.is_empty(), "empty probe split");
    let idx: Vec<usize> = (0..split.len()).collect();
    let x = batch_matrix(split, &idx, d);
    let mut tape: Tape<f32> = Tape::new();
    let xid = tape.constant(split.len(), d, x);
    let ids: BTreeMap<&str, TensorId> = params
        .iter()
        .map(|(n, t)| {
            let (r, c) = if t.shape.len() == 2 {
                (t.shape[0], t.shape[1])
            } else {
                (1, t.shape[0])
            };
            (n.as_str(), tape.constant(r, c, t.data.clone()))
        })
        .collect();
    let z = probe_logits(&mut tape, xid, ids["w1"], ids["b1"], ids["w2"], ids["b2"]);
    let values = tape.value(z);
    let c = values.len() / split.len();
    let mut correct = 0usize;
    for (row, (_, label)) in split.iter().enumerate() {
        let scores = &values[row * c..(row + 1) * c];
        let argmax = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        if argmax == *label as usize {
            correct += 1;
        }
    }
    correct as f32 / split.len() as f32
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f32> {
    let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
    (0..n).map(|_| rng.gen::<f32>() * 2.0 * limit - limit).collect()
}

/// Train the probing MLP (`d → hidden → n_classes`, ReLU; 50 hidden
/// neurons by convention) on frozen embeddings; the reported epoch is the
/// one with the best validation accuracy.
pub fn probe(task: &str, data: &ProbeData, hidden: usize, seed: u64) -> Result<ProbeResult> {
    if hidden == 0 {
        return Err(Error::eval("probe hidden layer needs at least one neuron"));
    }
    for (name, split) in [("tr", &data.train), ("va", &data.val), ("te", &data.test)] {
        if split.is_empty() {
            return Err(Error::eval(format!("probe split {name:?} is empty")));
        }
    }
    let d = data.train[0].0.len();
    let all = data.train.iter().chain(&data.val).chain(&data.test);
    let mut max_label = 0u32;
    for (e, l) in all {
        if e.len() != d {
            return Err(Error::eval("probe embeddings have mixed dimensions"));
        }
        max_label = max_label.max(*l);
    }
    let classes = max_label as usize + 1;
    let distinct: std::collections::BTreeSet<u32> =
        data.train.iter().map(|(_, l)| *l).collect();
    if distinct.len() < 2 {
        return Err(Error::eval(
            "probe training labels are a single class; nothing to learn",
        ));
    }

    let mut rng = rng::stream(seed, Stream::Probe, 0);
    let mut params: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
    params.insert(
        "w1".into(),
        Tensor::new(vec![hidden, d], xavier(&mut rng, d, hidden, hidden * d)),
    );
    params.insert("b1".into(), Tensor::new(vec![hidden], vec![0.0; hidden]));
    params.insert(
        "w2".into(),
        Tensor::new(
            vec![classes, hidden],
            xavier(&mut rng, hidden, classes, classes * hidden),
        ),
    );
    params.insert("b2".into(), Tensor::new(vec![classes], vec![0.0; classes]));

    let mut opt = AdamW::new(AdamWConfig::new(PROBE_LR));
    let mut best: Option<(f32, f32, BTreeMap<String, Tensor<f32>>)> = None;
    let n_train = data.train.len();
    for _epoch in 0..PROBE_EPOCHS {
        let mut order: Vec<usize> = (0..n_train).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(PROBE_BATCH) {
            let x = batch_matrix(&data.train, chunk, d);
            let targets: Vec<u32> = chunk.iter().map(|&i| data.train[i].1).collect();
            let keep = vec![true; chunk.len()];
            let mut tape: Tape<f32> = Tape::new();
            let xid = tape.constant(chunk.len(), d, x);
            let mut leaf_ids = BTreeMap::new();
            for (name, t) in &params {
                let (r, c) = if t.shape.len() == 2 {
                    (t.shape[0], t.shape[1])
                } else {
                    (1, t.shape[0])
                };
                leaf_ids.insert(name.clone(), tape.leaf(r, c, t.data.clone(), true));
            }
            let z = probe_logits(
                &mut tape,
                xid,
                leaf_ids["w1"],
                leaf_ids["b1"],
                leaf_ids["w2"],
                leaf_ids["b2"],
            );
            let total = tape.cross_entropy(z, &targets, &keep);
            let loss = tape.scale(total, 1.0 / chunk.len() as f32);
            tape.backward(loss);
            let grads: BTreeMap<String, Vec<f32>> = leaf_ids
                .iter()
                .map(|(n, &id)| (n.clone(), tape.grad(id).expect("probe grad").to_vec()))
                .collect();
            opt.step(&mut params, &grads);
        }
        let train_acc = probe_accuracy(&params, &data.train, d);
        let val_acc = probe_accuracy(&params, &data.val, d);
        if best.as_ref().map_or(true, |(v, _, _)| val_acc > *v) {
            best = Some((val_acc, train_acc, params.clone()));
        }
    }
    let (val_acc, train_acc, best_params) = best.expect("at least one probe epoch");
    let test_acc = probe_accuracy(&best_params, &data.test, d);
    Ok(ProbeResult {
        task: task.to_string(),
        train_acc,
        val_acc,
        test_acc,
    })
}

// ---- probing label builders ---------------------------------------------

/// Bigram-shift instances: with probability 1/2, swap one adjacent pair of
/// differing words; the label says whether a swap happened.
pub fn bshift_labels<S: AsRef<str>>(sentences: &[S], seed: u64) -> Vec<(String, u32)> {
    let mut rng = rng::stream(seed, Stream::EvalSample, 0);
    sentences
        .iter()
        .map(|s| {
            let mut toks: Vec<&str> = s.as_ref().split_whitespace().collect();
            let candidates: Vec<usize> = (0..toks.len().saturating_sub(1))
                .filter(|&i| toks[i] != toks[i + 1])
                .collect();
            let swap = rng.gen::<f32>() < 0.5 && !candidates.is_empty();
            let label = if swap {
                let i = candidates[rng.gen_range(0..candidates.len())];
                toks.swap(i, i + 1);
                1
            } else {
                0
            };
            (toks.join(" "), label)
        })
        .collect()
}

/// Tree-depth classes: the label is the height of the parse (a lone node
/// counts 1).
pub fn treedepth_labels(trees: &[ParseTree]) -> Vec<u32> {
    trees.iter().map(|t| t.depth() as u32).collect()
}

/// Top-level-constituent classes over the `k` most frequent constituent
/// sequences; everything rarer maps to a single OTHER class with id `k`.
/// Returns the labels and the id → sequence table (OTHER not listed).
pub fn topconst_labels(trees: &[ParseTree], k: usize) -> (Vec<u32>, Vec<Vec<String>>) {
    let seqs: Vec<Vec<String>> = trees.iter().map(syntax::top_level_constituents).collect();
    let mut counts: BTreeMap<&[String], usize> = BTreeMap::new();
    for s in &seqs {
        *counts.entry(s.as_slice()).or_insert(0) += 1;
    }
    let mut ranked: Vec<(&[String], usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(k);
    let table: Vec<Vec<String>> = ranked.iter().map(|(s, _)| s.to_vec()).collect();
    let index: BTreeMap<&[String], u32> = table
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_slice(), i as u32))
        .collect();
    let labels = seqs
        .iter()
        .map(|s| index.get(s.as_slice()).copied().unwrap_or(k as u32))
        .collect();
    (labels, table)
}

// ---- robustness splits and threshold search -----------------------------

/// Best accuracy of the rule "paraphrase iff score ≥ t" over the grid
/// t ∈ {−1.00, −0.99, …, 1.00}; returns `(threshold, accuracy)` with the
/// smallest best threshold.
pub fn threshold_accuracy(scores: &[f32], labels: &[u8]) -> (f32, f32) {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    assert!(!scores.is_empty(), "no scores to threshold");
    let mut best_t = -1.0f32;
    let mut best_acc = -1.0f32;
    for i in -100i32..=100 {
        let t = i as f32 / 100.0;
        let correct = scores
            .iter()
            .zip(labels)
            .filter(|(&s, &l)| (s >= t) == (l == 1))
            .count();
        let acc = correct as f32 / scores.len() as f32;
        if acc > best_acc {
            best_acc = acc;
            best_t = t;
        }
    }
    (best_t, best_acc)
}

/// Cosine-score labeled sentence pairs with a checkpoint and search the
/// threshold grid.
#[derive(Debug, Clone)]
pub struct PairClassification {
    pub scores: Vec<f32>,
    pub threshold: f32,
    pub accuracy: f32,
}

pub fn classify_pairs(ckpt: &Checkpoint, pairs: &[LabeledPair]) -> Result<PairClassification> {
    if pairs.is_empty() {
        return Err(Error::eval("no labeled pairs to classify"));
    }
    let mut scores = Vec::with_capacity(pairs.len());
    for p in pairs {
        let a = embed_sentence(ckpt, &p.sent1)?;
        let b = embed_sentence(ckpt, &p.sent2)?;
        scores.push(cosine(&a, &b)?);
    }
    let labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
    let (threshold, accuracy) = threshold_accuracy(&scores, &labels);
    Ok(PairClassification {
        scores,
        threshold,
        accuracy,
    })
}

/// Partition positives by top-level constituents and assemble the Easy and
/// Hard evaluation sets, each `n_per_class` positives plus one shared
/// sample of `n_per_class` negatives (byte-identical across the two
/// outputs).
pub fn split_easy_hard(
    pairs: &[LabeledPair],
    n_per_class: usize,
    seed: u64,
) -> Result<(Vec<LabeledPair>, Vec<LabeledPair>)> {
    let mut easy = Vec::new();
    let mut hard = Vec::new();
    let mut negatives = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        if p.label == 0 {
            negatives.push(p.clone());
            continue;
        }
        let t1 = syntax::parse_ptb(&p.parse1).map_err(|e| Error::Corpus {
            line: i + 1,
            msg: format!("parse1: {e}"),
        })?;
        let t2 = syntax::parse_ptb(&p.parse2).map_err(|e| Error::Corpus {
            line: i + 1,
            msg: format!("parse2: {e}"),
        })?;
        if syntax::top_level_constituents(&t1) == syntax::top_level_constituents(&t2) {
            easy.push(p.clone());
        } else {
            hard.push(p.clone());
        }
    }
    if easy.len() < n_per_class || hard.len() < n_per_class || negatives.len() < n_per_class {
        return Err(Error::eval(format!(
            "need {n_per_class} pairs per class but have {} easy positives, \
             {} hard positives, {} negatives",
            easy.len(),
            hard.len(),
            negatives.len()
        )));
    }
    let mut rng = rng::stream(seed, Stream::EvalSample, 1);
    for pool in [&mut easy, &mut hard, &mut negatives] {
        for i in (1..pool.len()).rev() {
            let j = rng.gen_range(0..=i);
            pool.swap(i, j);
        }
        pool.truncate(n_per_class);
    }
    let mut easy_out = easy;
    easy_out.extend(negatives.iter().cloned());
    let mut hard_out = hard;
    hard_out.extend(negatives);
    Ok((easy_out, hard_out))
}

/// Top-1 paraphrase retrieval: embed all first and second sentences; a hit
/// is when a first sentence's nearest second sentence (by cosine) is its
/// own paraphrase.
pub fn retrieval_top1(ckpt: &Checkpoint, pairs: &[ParaphrasePair]) -> Result<f32> {
    if pairs.is_empty() {
        return Err(Error::eval("no pairs to retrieve over"));
    }
    let firsts: Vec<Vec<f32>> = pairs
        .iter()
        .map(|p| embed_sentence(ckpt, &p.sent1))
        .collect::<Result<_>>()?;
    let seconds: Vec<Vec<f32>> = pairs
        .iter()
        .map(|p| embed_sentence(ckpt, &p.sent2))
        .collect::<Result<_>>()?;
    let mut hits = 0usize;
    for (i, a) in firsts.iter().enumerate() {
        let mut best = f32::NEG_INFINITY;
        let mut best_j = 0usize;
        for (j, b) in seconds.iter().enumerate() {
            let c = cosine(a, b)?;
            if c > best {
                best = c;
                best_j = j;
            }
        }
        if best_j == i {
            hits += 1;
        }
    }
    Ok(hits as f32 / pairs.len() as f32)
}
