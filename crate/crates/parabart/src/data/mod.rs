//! Vocabulary, sentence encoding, and corpus file formats.
//!
//! Tokenization is whitespace splitting over lowercased text. Ids 0–4 are
//! reserved for `<pad>`, `<unk>`, `<s>`, `</s>`, `<mask>`; regular tokens
//! start at 5, ordered by descending frequency with ties broken
//! lexicographically, so a vocabulary is a pure function of its corpus.
//!
//! File formats (all UTF-8):
//! - paraphrase corpus: JSON Lines, one [`ParaphrasePair`] per line
//! - similarity data: TSV `score<TAB>sent1<TAB>sent2`, score in `[0, 5]`
//! - probing data: TSV `split<TAB>label<TAB>sentence`, split in `{tr,va,te}`
//! - pair classification: TSV `label<TAB>sent1<TAB>sent2<TAB>parse1<TAB>parse2`

pub mod synth;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::syntax::{self, TagSet};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const MASK: u32 = 4;
/// First id available to regular tokens.
pub const N_SPECIAL: u32 = 5;

pub const SPECIAL_TOKENS: [&str; 5] = ["<pad>", "<unk>", "<s>", "</s>", "<mask>"];

/// Lowercase and split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(String::from)
        .collect()
}

/// Token-to-id mapping with fixed special ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, u32>,
}

impl Vocab {
    /// Build from an iterator of sentences. Tokens occurring fewer than
    /// `min_count` times are dropped (they encode as `<unk>`).
    pub fn build<I, S>(sentences: I, min_count: usize) -> Vocab
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for s in sentences {
            for tok in tokenize(s.as_ref()) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut entries: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count.max(1))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(entries.into_iter().map(|(t, _)| t));
        Vocab::from_tokens(tokens)
    }

    /// Rebuild from an id-ordered token list (e.g. a checkpoint sidecar).
    pub fn from_tokens(tokens: Vec<String>) -> Vocab {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens, index }
    }

    /// Restore the lookup index after serde deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token_of(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Build the training vocabulary from both sentences of every pair.
pub fn build_vocab(pairs: &[ParaphrasePair], min_count: usize) -> Result<Vocab> {
    let vocab = Vocab::build(
        pairs
            .iter()
            .flat_map(|p| [p.sent1.as_str(), p.sent2.as_str()]),
        min_count,
    );
    if vocab.len() == N_SPECIAL as usize {
        return Err(Error::config(
            "corpus is empty (or min_count excludes every token); vocabulary \
             would contain only reserved tokens",
        ));
    }
    Ok(vocab)
}

/// Encode a sentence as `<s> tokens </s>` padded to `max_len`. Sentences
/// that do not fit are truncated so `</s>` is always the last non-pad id.
/// The mask flags non-pad positions.
pub fn encode(vocab: &Vocab, sentence: &str, max_len: usize) -> (Vec<u32>, Vec<bool>) {
    assert!(max_len >= 3, "max_len must be at least 3, got {max_len}");
    let toks = tokenize(sentence);
    let body = toks.len().min(max_len - 2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(BOS);
    for tok in &toks[..body] {
        ids.push(vocab.id_of(tok));
    }
    ids.push(EOS);
    let used = ids.len();
    ids.resize(max_len, PAD);
    let mut mask = vec![true; used];
    mask.resize(max_len, false);
    (ids, mask)
}

/// Inverse of [`encode`] for display: drops special ids, joins with spaces.
pub fn decode(vocab: &Vocab, ids: &[u32]) -> String {
    let mut out = String::new();
    for &id in ids {
        if id < N_SPECIAL {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(vocab.token_of(id));
    }
    out
}

/// Id mapping for linearized parses: specials 0–4, then `(`, `)`, then the
/// tag set in index order. Fixed at corpus build time; unknown parse tokens
/// are an error rather than `<unk>` because a malformed parse upstream
/// should fail loudly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseVocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, u32>,
}

impl ParseVocab {
    pub fn from_tagset(tagset: &TagSet) -> ParseVocab {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.push("(".to_string());
        tokens.push(")".to_string());
        tokens.extend(tagset.tags().iter().cloned());
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        ParseVocab { tokens, index }
    }

    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Encode linearized parse tokens as `<s> tokens </s>` padded to
    /// `max_len`, truncating like [`encode`].
    pub fn encode_parse(&self, tokens: &[String], max_len: usize) -> Result<(Vec<u32>, Vec<bool>)> {
        assert!(max_len >= 3, "max_len must be at least 3, got {max_len}");
        let body = tokens.len().min(max_len - 2);
        let mut ids = Vec::with_capacity(max_len);
        ids.push(BOS);
        for tok in &tokens[..body] {
            let id = self
                .index
                .get(tok.as_str())
                .copied()
                .ok_or_else(|| Error::UnknownParseToken { token: tok.clone() })?;
            ids.push(id);
        }
        ids.push(EOS);
        let used = ids.len();
        ids.resize(max_len, PAD);
        let mut mask = vec![true; used];
        mask.resize(max_len, false);
        Ok((ids, mask))
    }
}

/// One sentence pair with constituency parses. The `template_id` fields are
/// generator provenance; real corpora leave them out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphrasePair {
    pub sent1: String,
    pub sent2: String,
    pub parse1: String,
    pub parse2: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id1: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id2: Option<u32>,
}

/// Corpus load outcome: accepted pairs plus `(line, reason)` diagnostics for
/// lines skipped in lenient mode.
#[derive(Debug, Clone)]
pub struct LoadReport {
    pub pairs: Vec<ParaphrasePair>,
    pub skipped: Vec<(usize, String)>,
}

fn validate_pair(pair: &ParaphrasePair) -> std::result::Result<(), String> {
    if pair.sent1.trim().is_empty() || pair.sent2.trim().is_empty() {
        return Err("empty sentence".to_string());
    }
    syntax::parse_ptb(&pair.parse1).map_err(|e| format!("parse1: {e}"))?;
    syntax::parse_ptb(&pair.parse2).map_err(|e| format!("parse2: {e}"))?;
    Ok(())
}

/// Load a JSONL paraphrase corpus. In lenient mode (`strict = false`),
/// malformed lines are collected in the report and skipped; in strict mode
/// the first bad line aborts the load. Blank lines are always skipped
/// silently.
pub fn load_corpus(path: &Path, strict: bool) -> Result<LoadReport> {
    let text = std::fs::read_to_string(path)?;
    let mut report = LoadReport {
        pairs: Vec::new(),
        skipped: Vec::new(),
    };
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let outcome = serde_json::from_str::<ParaphrasePair>(line)
            .map_err(|e| e.to_string())
            .and_then(|pair| validate_pair(&pair).map(|_| pair));
        match outcome {
            Ok(pair) => report.pairs.push(pair),
            Err(msg) => {
                if strict {
                    return Err(Error::Corpus { line: lineno, msg });
                }
                report.skipped.push((lineno, msg));
            }
        }
    }
    Ok(report)
}

/// Write a corpus in the exact form [`load_corpus`] reads back; loading and
/// re-saving a file produced here is byte-identical.
pub fn save_corpus(path: &Path, pairs: &[ParaphrasePair]) -> Result<()> {
    let mut out = String::new();
    for pair in pairs {
        out.push_str(&serde_json::to_string(pair)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// A labeled sentence pair for paraphrase detection (label 1 = paraphrase).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPair {
    pub label: u8,
    pub sent1: String,
    pub sent2: String,
    pub parse1: String,
    pub parse2: String,
}

fn no_tabs(field: &str, what: &str) -> Result<()> {
    if field.contains('\t') {
        return Err(Error::eval(format!("{what} contains a tab character")));
    }
    Ok(())
}

pub fn save_labeled_pairs(path: &Path, pairs: &[LabeledPair]) -> Result<()> {
    let mut out = String::new();
    for p in pairs {
        for (f, what) in [
            (&p.sent1, "sent1"),
            (&p.sent2, "sent2"),
            (&p.parse1, "parse1"),
            (&p.parse2, "parse2"),
        ] {
            no_tabs(f, what)?;
        }
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            p.label, p.sent1, p.sent2, p.parse1, p.parse2
        )
        .expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_labeled_pairs(path: &Path) -> Result<Vec<LabeledPair>> {
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::Corpus {
                line: i + 1,
                msg: format!("expected 5 tab-separated fields, got {}", fields.len()),
            });
        }
        let label: u8 = fields[0].parse().map_err(|_| Error::Corpus {
            line: i + 1,
            msg: format!("bad label {:?}", fields[0]),
        })?;
        if label > 1 {
            return Err(Error::Corpus {
                line: i + 1,
                msg: format!("label must be 0 or 1, got {label}"),
            });
        }
        pairs.push(LabeledPair {
            label,
            sent1: fields[1].to_string(),
            sent2: fields[2].to_string(),
            parse1: fields[3].to_string(),
            parse2: fields[4].to_string(),
        });
    }
    Ok(pairs)
}

/// One sentence-similarity example: gold score in `[0, 5]` plus the pair.
#[derive(Debug, Clone, PartialEq)]
pub struct StsExample {
    pub score: f32,
    pub sent1: String,
    pub sent2: String,
}

pub fn load_sts(path: &Path) -> Result<Vec<StsExample>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Corpus {
                line: i + 1,
                msg: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let score: f32 = fields[0].parse().map_err(|_| Error::Corpus {
            line: i + 1,
            msg: format!("bad score {:?}", fields[0]),
        })?;
        if !(0.0..=5.0).contains(&score) {
            return Err(Error::Corpus {
                line: i + 1,
                msg: format!("score {score} outside [0, 5]"),
            });
        }
        out.push(StsExample {
            score,
            sent1: fields[1].to_string(),
            sent2: fields[2].to_string(),
        });
    }
    Ok(out)
}

pub fn save_sts(path: &Path, examples: &[StsExample]) -> Result<()> {
    let mut out = String::new();
    for e in examples {
        no_tabs(&e.sent1, "sent1")?;
        no_tabs(&e.sent2, "sent2")?;
        writeln!(out, "{}\t{}\t{}", e.score, e.sent1, e.sent2).expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// One probing example: which split it belongs to, its class label, and the
/// sentence to embed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeExample {
    pub split: ProbeSplit,
    pub label: u32,
    pub sentence: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeSplit {
    Train,
    Val,
    Test,
}

impl ProbeSplit {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeSplit::Train => "tr",
            ProbeSplit::Val => "va",
            ProbeSplit::Test => "te",
        }
    }

    fn parse(s: &str) -> Option<ProbeSplit> {
        match s {
            "tr" => Some(ProbeSplit::Train),
            "va" => Some(ProbeSplit::Val),
            "te" => Some(ProbeSplit::Test),
            _ => None,
        }
    }
}

pub fn load_probe(path: &Path) -> Result<Vec<ProbeExample>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Corpus {
                line: i + 1,
                msg: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let split = ProbeSplit::parse(fields[0]).ok_or_else(|| Error::Corpus {
            line: i + 1,
            msg: format!("bad split {:?}, expected tr/va/te", fields[0]),
        })?;
        let label: u32 = fields[1].parse().map_err(|_| Error::Corpus {
            line: i + 1,
            msg: format!("bad label {:?}", fields[1]),
        })?;
        out.push(ProbeExample {
            split,
            label,
            sentence: fields[2].to_string(),
        });
    }
    Ok(out)
}

pub fn save_probe(path: &Path, examples: &[ProbeExample]) -> Result<()> {
    let mut out = String::new();
    for e in examples {
        no_tabs(&e.sentence, "sentence")?;
        writeln!(out, "{}\t{}\t{}", e.split.as_str(), e.label, e.sentence).expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}
