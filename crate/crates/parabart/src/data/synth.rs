//! Synthetic paraphrase corpus generator.
//!
//! Each example samples a "semantic frame" — an agent, an action, a patient,
//! and a modifier, drawn from four disjoint word pools — and renders it
//! through two *different* syntactic templates. All templates realize the
//! same four content words (the verb keeps one surface form throughout), so
//! two sentences generated from equal frames share the identical
//! content-word multiset by construction; everything else in a sentence is a
//! closed set of function words. Every template also emits a gold bracketed
//! parse whose terminals spell out the sentence, so surface string and parse
//! can never drift apart.
//!
//! The six templates:
//!
//! | id | shape                                  | top level            |
//! |----|----------------------------------------|----------------------|
//! | 0  | `the A V the P M .`                    | NP VP .              |
//! | 1  | `M , the A V the P .`                  | ADVP , NP VP .       |
//! | 2  | `it is the A that V the P M .`         | NP VP .              |
//! | 3  | `the P , the A V M .`                  | NP , NP VP .         |
//! | 4  | `it is clear that the A V the P M .`   | NP VP .              |
//! | 5  | `as for the A , it V the P M .`        | PP , NP VP .         |
//!
//! Three of the six share the top-level profile `[NP, VP, .]`, so template
//! pairings that agree on top-level constituents exist alongside ones that do
//! not — the labeled paraphrase pool draws on both kinds, giving easy and
//! hard detection cases. Training pairs chain templates in a fixed cycle
//! (source template `t` pairs with `t + 1 mod 6`), which keeps the target's
//! syntactic form predictable from the source template alone.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{LabeledPair, ParaphrasePair, ProbeExample, ProbeSplit, StsExample};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::syntax::{ParseTree, TagSet};

/// Number of available syntactic templates.
pub const N_TEMPLATES: usize = 6;

/// Capacity of each content-word pool.
pub const POOL_SIZE: usize = 40;

pub const AGENTS: [&str; POOL_SIZE] = [
    "analyst", "archer", "architect", "artist", "athlete", "baker", "banker", "barber",
    "botanist", "broker", "builder", "captain", "carpenter", "cashier", "chemist", "coach",
    "dancer", "dentist", "diver", "doctor", "driver", "editor", "engineer", "farmer",
    "fiddler", "gardener", "geologist", "juggler", "lawyer", "mechanic", "miner", "nurse",
    "painter", "pilot", "plumber", "poet", "sailor", "sculptor", "teacher", "welder",
];

pub const ACTIONS: [&str; POOL_SIZE] = [
    "admires", "adjusts", "arranges", "assembles", "buries", "carries", "catalogs", "checks",
    "cleans", "collects", "colors", "compares", "copies", "counts", "covers", "delivers",
    "describes", "designs", "displays", "examines", "files", "fixes", "guards", "inspects",
    "lifts", "measures", "mentions", "moves", "observes", "opens", "packs", "paints",
    "polishes", "praises", "repairs", "sketches", "stores", "studies", "tests", "weighs",
];

pub const PATIENTS: [&str; POOL_SIZE] = [
    "anchor", "anvil", "awning", "banner", "barrel", "basket", "beacon", "bell",
    "bench", "boat", "bottle", "bridge", "bucket", "cabinet", "camera", "candle",
    "canoe", "carpet", "cart", "castle", "chair", "clock", "compass", "crate",
    "curtain", "drum", "engine", "fence", "fountain", "gate", "kettle", "ladder",
    "lantern", "mirror", "organ", "pulley", "saddle", "statue", "turbine", "wagon",
];

pub const MODIFIERS: [&str; POOL_SIZE] = [
    "boldly", "briefly", "calmly", "carefully", "cheaply", "cleanly", "closely", "crudely",
    "daily", "deftly", "eagerly", "early", "easily", "evenly", "fairly", "firmly",
    "fondly", "freely", "gently", "gladly", "gravely", "hourly", "keenly", "lightly",
    "loudly", "neatly", "nightly", "often", "openly", "patiently", "politely", "promptly",
    "proudly", "quickly", "quietly", "rarely", "slowly", "softly", "swiftly", "weekly",
];

/// True if `token` belongs to a content-word pool (as opposed to the closed
/// set of function words and punctuation).
pub fn is_content_word(token: &str) -> bool {
    AGENTS.contains(&token)
        || ACTIONS.contains(&token)
        || PATIENTS.contains(&token)
        || MODIFIERS.contains(&token)
}

/// Generator settings. `n_content_words` bounds the slice of each pool that
/// sampling may draw from, which caps the corpus vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub n_pairs: usize,
    pub n_content_words: usize,
    pub n_templates: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(n_pairs: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            n_pairs,
            n_content_words: 35,
            n_templates: N_TEMPLATES,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 {
            return Err(Error::config("n_pairs must be positive"));
        }
        if !(2..=N_TEMPLATES).contains(&self.n_templates) {
            return Err(Error::config(format!(
                "n_templates must be in 2..={N_TEMPLATES}, got {}",
                self.n_templates
            )));
        }
        if !(2..=POOL_SIZE).contains(&self.n_content_words) {
            return Err(Error::config(format!(
                "n_content_words must be in 2..={POOL_SIZE}, got {}",
                self.n_content_words
            )));
        }
        Ok(())
    }
}

/// One sampled semantic frame: indices into the four pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Frame {
    pub agent: usize,
    pub action: usize,
    pub patient: usize,
    pub modifier: usize,
}

impl Frame {
    fn sample(rng: &mut ChaCha8Rng, n: usize) -> Frame {
        Frame {
            agent: rng.gen_range(0..n),
            action: rng.gen_range(0..n),
            patient: rng.gen_range(0..n),
            modifier: rng.gen_range(0..n),
        }
    }

    fn words(&self) -> (&'static str, &'static str, &'static str, &'static str) {
        (
            AGENTS[self.agent],
            ACTIONS[self.action],
            PATIENTS[self.patient],
            MODIFIERS[self.modifier],
        )
    }
}

fn pre(tag: &str, word: &str) -> ParseTree {
    ParseTree::preterminal(tag, word)
}

fn node(tag: &str, children: Vec<ParseTree>) -> ParseTree {
    ParseTree::internal(tag, children)
}

fn np_the(noun: &str) -> ParseTree {
    node("NP", vec![pre("DT", "the"), pre("NN", noun)])
}

fn advp(adv: &str) -> ParseTree {
    node("ADVP", vec![pre("RB", adv)])
}

fn vbz(verb: &str) -> ParseTree {
    pre("VBZ", verb)
}

/// Render `frame` through template `template`, returning the surface
/// sentence and its gold parse. The sentence is exactly the parse's
/// terminal sequence.
pub fn realize(template: usize, frame: Frame) -> (String, ParseTree) {
    assert!(
        template < N_TEMPLATES,
        "template id {template} out of range 0..{N_TEMPLATES}"
    );
    let (a, v, p, m) = frame.words();
    let tree = match template {
        // the A V the P M .
        0 => node(
            "S",
            vec![
                np_the(a),
                node("VP", vec![vbz(v), np_the(p), advp(m)]),
                pre(".", "."),
            ],
        ),
        // M , the A V the P .
        1 => node(
            "S",
            vec![
                advp(m),
                pre(",", ","),
                np_the(a),
                node("VP", vec![vbz(v), np_the(p)]),
                pre(".", "."),
            ],
        ),
        // it is the A that V the P M .
        2 => node(
            "S",
            vec![
                node("NP", vec![pre("PRP", "it")]),
                node(
                    "VP",
                    vec![
                        vbz("is"),
                        node(
                            "NP",
                            vec![
                                np_the(a),
                                node(
                                    "SBAR",
                                    vec![
                                        node("WHNP", vec![pre("WDT", "that")]),
                                        node(
                                            "S",
                                            vec![node("VP", vec![vbz(v), np_the(p), advp(m)])],
                                        ),
                                    ],
                                ),
                            ],
                        ),
                    ],
                ),
                pre(".", "."),
            ],
        ),
        // the P , the A V M .
        3 => node(
            "S",
            vec![
                np_the(p),
                pre(",", ","),
                np_the(a),
                node("VP", vec![vbz(v), advp(m)]),
                pre(".", "."),
            ],
        ),
        // it is clear that the A V the P M .
        4 => node(
            "S",
            vec![
                node("NP", vec![pre("PRP", "it")]),
                node(
                    "VP",
                    vec![
                        vbz("is"),
                        node("ADJP", vec![pre("JJ", "clear")]),
                        node(
                            "SBAR",
                            vec![
                                pre("IN", "that"),
                                node(
                                    "S",
                                    vec![
                                        np_the(a),
                                        node("VP", vec![vbz(v), np_the(p), advp(m)]),
                                    ],
                                ),
                            ],
                        ),
                    ],
                ),
                pre(".", "."),
            ],
        ),
        // as for the A , it V the P M .
        5 => node(
            "S",
            vec![
                node(
                    "PP",
                    vec![pre("IN", "as"), node("PP", vec![pre("IN", "for"), np_the(a)])],
                ),
                pre(",", ","),
                node("NP", vec![pre("PRP", "it")]),
                node("VP", vec![vbz(v), np_the(p), advp(m)]),
                pre(".", "."),
            ],
        ),
        _ => unreachable!(),
    };
    let sentence = tree.terminals().join(" ");
    (sentence, tree)
}

/// Top-level constituent sequence each template produces; the trend oracle
/// for which template pairings agree on coarse syntactic shape.
pub fn template_top_levels(template: usize) -> Vec<&'static str> {
    match template {
        0 | 2 | 4 => vec!["NP", "VP", "."],
        1 => vec!["ADVP", ",", "NP", "VP", "."],
        3 => vec!["NP", ",", "NP", "VP", "."],
        5 => vec!["PP", ",", "NP", "VP", "."],
        _ => panic!("template id {template} out of range 0..{N_TEMPLATES}"),
    }
}

/// A corpus plus the tag set its parses use.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub pairs: Vec<ParaphrasePair>,
    pub tagset: TagSet,
}

/// Source template is sampled uniformly; the target template is the next one
/// in a fixed cycle. Tying the target's surface form to the source template
/// makes the pairing deterministic given the source, so a model without
/// access to the target parse can only predict the target's function-word
/// skeleton by carrying the source template through its sentence embedding —
/// which is precisely the pressure the syntax encoder and the adversary are
/// meant to relieve and remove.
fn sample_template_pair(rng: &mut ChaCha8Rng, n_templates: usize) -> (usize, usize) {
    let t1 = rng.gen_range(0..n_templates);
    (t1, (t1 + 1) % n_templates)
}

fn make_pair(frame: Frame, t1: usize, t2: usize) -> ParaphrasePair {
    let (s1, p1) = realize(t1, frame);
    let (s2, p2) = realize(t2, frame);
    ParaphrasePair {
        sent1: s1,
        sent2: s2,
        parse1: p1.to_string(),
        parse2: p2.to_string(),
        template_id1: Some(t1 as u32),
        template_id2: Some(t2 as u32),
    }
}

fn tagset_for(n_templates: usize) -> TagSet {
    let frame = Frame {
        agent: 0,
        action: 0,
        patient: 0,
        modifier: 0,
    };
    let trees: Vec<ParseTree> = (0..n_templates).map(|t| realize(t, frame).1).collect();
    TagSet::collect(trees.iter())
}

/// Generate the training corpus: `n_pairs` frames, each rendered through two
/// distinct templates. Seed-deterministic.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, Stream::Synth, 0);
    let mut pairs = Vec::with_capacity(cfg.n_pairs);
    for _ in 0..cfg.n_pairs {
        let frame = Frame::sample(&mut rng, cfg.n_content_words);
        let (t1, t2) = sample_template_pair(&mut rng, cfg.n_templates);
        pairs.push(make_pair(frame, t1, t2));
    }
    Ok(SynthCorpus {
        pairs,
        tagset: tagset_for(cfg.n_templates),
    })
}

/// Generate `n` held-out pairs whose frames are pairwise distinct (and thus
/// unambiguous retrieval targets: only the aligned sentence shares a content
/// multiset).
pub fn gen_heldout(cfg: &SynthConfig, n: usize) -> Result<Vec<ParaphrasePair>> {
    cfg.validate()?;
    let capacity = cfg.n_content_words.pow(4);
    if n > capacity {
        return Err(Error::config(format!(
            "cannot draw {n} distinct frames from a space of {capacity}"
        )));
    }
    let mut rng = rng::stream(cfg.seed, Stream::Synth, 1);
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::with_capacity(n);
    while pairs.len() < n {
        let frame = Frame::sample(&mut rng, cfg.n_content_words);
        if !seen.insert(frame) {
            continue;
        }
        // Held-out templates are drawn independently rather than through the
        // training cycle: retrieval should reward matching pairs by content
        // under arbitrary template combinations, not knowing the pairing rule.
        let t1 = rng.gen_range(0..cfg.n_templates);
        let shift = rng.gen_range(1..cfg.n_templates);
        pairs.push(make_pair(frame, t1, (t1 + shift) % cfg.n_templates));
    }
    Ok(pairs)
}

/// Generate a probing set: single sentences labeled with the template id
/// that produced them, in tr/va/te splits.
pub fn gen_probe(
    cfg: &SynthConfig,
    n_train: usize,
    n_val: usize,
    n_test: usize,
) -> Result<Vec<ProbeExample>> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, Stream::Synth, 2);
    let sizes = [
        (ProbeSplit::Train, n_train),
        (ProbeSplit::Val, n_val),
        (ProbeSplit::Test, n_test),
    ];
    let mut out = Vec::with_capacity(n_train + n_val + n_test);
    for (split, n) in sizes {
        for _ in 0..n {
            let frame = Frame::sample(&mut rng, cfg.n_content_words);
            let template = rng.gen_range(0..cfg.n_templates);
            let (sentence, _) = realize(template, frame);
            out.push(ProbeExample {
                split,
                label: template as u32,
                sentence,
            });
        }
    }
    Ok(out)
}

fn sample_differing_frame(rng: &mut ChaCha8Rng, n: usize, from: Frame) -> Frame {
    loop {
        let other = Frame::sample(rng, n);
        if other != from {
            return other;
        }
    }
}

/// Generate a labeled pool for paraphrase detection: `n_pos` positives
/// (equal frames, distinct templates — alternating between template pairs
/// that share top-level constituents and pairs that do not, so both easy
/// and hard positives exist) and `n_neg` negatives (differing frames).
pub fn gen_labeled_pool(cfg: &SynthConfig, n_pos: usize, n_neg: usize) -> Result<Vec<LabeledPair>> {
    cfg.validate()?;
    let mut same_profile = Vec::new();
    let mut diff_profile = Vec::new();
    for t1 in 0..cfg.n_templates {
        for t2 in 0..cfg.n_templates {
            if t1 == t2 {
                continue;
            }
            if template_top_levels(t1) == template_top_levels(t2) {
                same_profile.push((t1, t2));
            } else {
                diff_profile.push((t1, t2));
            }
        }
    }
    if n_pos > 0 && (same_profile.is_empty() || diff_profile.is_empty()) {
        return Err(Error::eval(format!(
            "n_templates={} yields {} same-profile and {} differing-profile template pairs; \
             both kinds are required for positives",
            cfg.n_templates,
            same_profile.len(),
            diff_profile.len()
        )));
    }
    let mut rng = rng::stream(cfg.seed, Stream::Synth, 3);
    let mut out = Vec::with_capacity(n_pos + n_neg);
    for i in 0..n_pos {
        let frame = Frame::sample(&mut rng, cfg.n_content_words);
        let pool = if i % 2 == 0 { &same_profile } else { &diff_profile };
        let (t1, t2) = pool[rng.gen_range(0..pool.len())];
        let p = make_pair(frame, t1, t2);
        out.push(LabeledPair {
            label: 1,
            sent1: p.sent1,
            sent2: p.sent2,
            parse1: p.parse1,
            parse2: p.parse2,
        });
    }
    for _ in 0..n_neg {
        let f1 = Frame::sample(&mut rng, cfg.n_content_words);
        let f2 = sample_differing_frame(&mut rng, cfg.n_content_words, f1);
        let t1 = rng.gen_range(0..cfg.n_templates);
        let t2 = rng.gen_range(0..cfg.n_templates);
        let (s1, p1) = realize(t1, f1);
        let (s2, p2) = realize(t2, f2);
        out.push(LabeledPair {
            label: 0,
            sent1: s1,
            sent2: s2,
            parse1: p1.to_string(),
            parse2: p2.to_string(),
        });
    }
    Ok(out)
}

/// Generate a graded similarity set: each example pairs two frames sharing
/// exactly `j` of their four slots (`j` uniform in 0..=4) under random
/// templates, with gold score `1.25 * j` — content overlap on a 0-to-5
/// scale.
pub fn gen_sts(cfg: &SynthConfig, n: usize) -> Result<Vec<StsExample>> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, Stream::Synth, 4);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let f1 = Frame::sample(&mut rng, cfg.n_content_words);
        let shared = rng.gen_range(0..=4usize);
        // Choose which slots to keep by index shuffle.
        let mut slots = [0usize, 1, 2, 3];
        for i in (1..4).rev() {
            let j = rng.gen_range(0..=i);
            slots.swap(i, j);
        }
        let mut f2 = f1;
        for &slot in &slots[shared..] {
            let field: &mut usize = match slot {
                0 => &mut f2.agent,
                1 => &mut f2.action,
                2 => &mut f2.patient,
                _ => &mut f2.modifier,
            };
            let old = *field;
            loop {
                let candidate = rng.gen_range(0..cfg.n_content_words);
                if candidate != old {
                    *field = candidate;
                    break;
                }
            }
        }
        let t1 = rng.gen_range(0..cfg.n_templates);
        let t2 = rng.gen_range(0..cfg.n_templates);
        let (s1, _) = realize(t1, f1);
        let (s2, _) = realize(t2, f2);
        out.push(StsExample {
            score: 1.25 * shared as f32,
            sent1: s1,
            sent2: s2,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Vocab;
    use crate::syntax;
    use std::collections::BTreeMap;

    #[test]
    fn pools_are_sized_disjoint_and_wellformed() {
        let all: Vec<&str> = AGENTS
            .iter()
            .chain(&ACTIONS)
            .chain(&PATIENTS)
            .chain(&MODIFIERS)
            .copied()
            .collect();
        assert_eq!(all.len(), 4 * POOL_SIZE);
        let distinct: BTreeSet<&str> = all.iter().copied().collect();
        assert_eq!(distinct.len(), 4 * POOL_SIZE, "pools overlap");
        for w in &all {
            assert!(
                w.chars().all(|c| c.is_ascii_lowercase()),
                "pool word {w:?} is not a single lowercase word"
            );
        }
        // Function words used by templates never collide with the pools.
        for f in ["the", "it", "is", "that", "clear", "as", "for", ",", "."] {
            assert!(!is_content_word(f), "function word {f:?} is in a pool");
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let cfg = SynthConfig::new(50, 7);
        let a = gen_synthetic(&cfg).unwrap();
        let b = gen_synthetic(&cfg).unwrap();
        assert_eq!(a.pairs, b.pairs);
        let c = gen_synthetic(&SynthConfig::new(50, 8)).unwrap();
        assert_ne!(a.pairs, c.pairs);
    }

    fn content_multiset(sentence: &str) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for tok in sentence.split_whitespace() {
            if is_content_word(tok) {
                *m.entry(tok.to_string()).or_insert(0) += 1;
            }
        }
        m
    }

    #[test]
    fn emitted_pairs_are_valid_and_share_content_words() {
        let corpus = gen_synthetic(&SynthConfig::new(200, 3)).unwrap();
        assert_eq!(corpus.pairs.len(), 200);
        for pair in &corpus.pairs {
            let t1 = syntax::parse_ptb(&pair.parse1).unwrap();
            let t2 = syntax::parse_ptb(&pair.parse2).unwrap();
            assert_eq!(t1.terminals().join(" "), pair.sent1);
            assert_eq!(t2.terminals().join(" "), pair.sent2);
            assert_ne!(pair.template_id1, pair.template_id2);
            assert_eq!(content_multiset(&pair.sent1), content_multiset(&pair.sent2));
            // Gold top-level constituents match the per-template table.
            let tid1 = pair.template_id1.unwrap() as usize;
            assert_eq!(
                syntax::top_level_constituents(&t1),
                template_top_levels(tid1)
            );
        }
    }

    #[test]
    fn every_template_realizes_the_same_content_multiset() {
        let frame = Frame {
            agent: 12,
            action: 30,
            patient: 5,
            modifier: 21,
        };
        let reference = content_multiset(&realize(0, frame).0);
        assert_eq!(reference.len(), 4);
        for t in 1..N_TEMPLATES {
            assert_eq!(content_multiset(&realize(t, frame).0), reference, "template {t}");
        }
    }

    #[test]
    fn at_least_half_of_template_pairings_differ_in_top_level() {
        for k in 2..=N_TEMPLATES {
            let mut differing = 0;
            let mut total = 0;
            for t1 in 0..k {
                for t2 in (t1 + 1)..k {
                    total += 1;
                    if template_top_levels(t1) != template_top_levels(t2) {
                        differing += 1;
                    }
                }
            }
            assert!(
                2 * differing >= total,
                "only {differing}/{total} pairings differ at n_templates={k}"
            );
        }
    }

    #[test]
    fn corpus_vocab_stays_small() {
        let corpus = gen_synthetic(&SynthConfig::new(2000, 1)).unwrap();
        let sentences: Vec<String> = corpus
            .pairs
            .iter()
            .flat_map(|p| [p.sent1.clone(), p.sent2.clone()])
            .collect();
        let vocab = Vocab::build(&sentences, 1);
        assert!(vocab.len() <= 200, "vocab size {}", vocab.len());
    }

    #[test]
    fn heldout_frames_are_distinct() {
        let pairs = gen_heldout(&SynthConfig::new(1, 5), 200).unwrap();
        assert_eq!(pairs.len(), 200);
        let keys: BTreeSet<BTreeMap<String, usize>> =
            pairs.iter().map(|p| content_multiset(&p.sent1)).collect();
        assert_eq!(keys.len(), 200, "duplicate content multisets in held-out set");
    }

    #[test]
    fn heldout_rejects_oversized_requests() {
        let mut cfg = SynthConfig::new(1, 5);
        cfg.n_content_words = 2;
        assert!(gen_heldout(&cfg, 17).is_err());
        assert_eq!(gen_heldout(&cfg, 16).unwrap().len(), 16);
    }

    #[test]
    fn probe_set_covers_splits_and_labels() {
        let examples = gen_probe(&SynthConfig::new(1, 9), 60, 20, 20).unwrap();
        assert_eq!(examples.len(), 100);
        let n_tr = examples
            .iter()
            .filter(|e| e.split == ProbeSplit::Train)
            .count();
        assert_eq!(n_tr, 60);
        let labels: BTreeSet<u32> = examples.iter().map(|e| e.label).collect();
        assert!(labels.len() >= 4, "saw labels {labels:?}");
        assert!(labels.iter().all(|&l| (l as usize) < N_TEMPLATES));
        for e in &examples {
            let (sent, _) = realize(e.label as usize, Frame {
                agent: 0,
                action: 0,
                patient: 0,
                modifier: 0,
            });
            // Same template, different frame: identical function-word skeleton length.
            assert_eq!(
                sent.split_whitespace().count(),
                e.sentence.split_whitespace().count(),
                "template {} length mismatch",
                e.label
            );
        }
    }

    #[test]
    fn labeled_pool_has_easy_and_hard_positives_and_true_negatives() {
        let pool = gen_labeled_pool(&SynthConfig::new(1, 11), 40, 40).unwrap();
        assert_eq!(pool.len(), 80);
        let mut easy = 0;
        let mut hard = 0;
        for p in &pool {
            let t1 = syntax::parse_ptb(&p.parse1).unwrap();
            let t2 = syntax::parse_ptb(&p.parse2).unwrap();
            let same_top =
                syntax::top_level_constituents(&t1) == syntax::top_level_constituents(&t2);
            if p.label == 1 {
                assert_eq!(content_multiset(&p.sent1), content_multiset(&p.sent2));
                if same_top {
                    easy += 1;
                } else {
                    hard += 1;
                }
            } else {
                assert_ne!(content_multiset(&p.sent1), content_multiset(&p.sent2));
            }
        }
        assert_eq!(easy, 20);
        assert_eq!(hard, 20);
    }

    #[test]
    fn labeled_pool_requires_both_profile_kinds() {
        let mut cfg = SynthConfig::new(1, 11);
        cfg.n_templates = 2; // templates 0 and 1 always differ in top level
        assert!(gen_labeled_pool(&cfg, 4, 0).is_err());
        assert!(gen_labeled_pool(&cfg, 0, 4).is_ok());
    }

    #[test]
    fn sts_scores_equal_measured_content_overlap() {
        let examples = gen_sts(&SynthConfig::new(1, 13), 100).unwrap();
        assert_eq!(examples.len(), 100);
        let mut seen_scores = BTreeSet::new();
        for e in &examples {
            let m1 = content_multiset(&e.sent1);
            let m2 = content_multiset(&e.sent2);
            let overlap: usize = m1
                .iter()
                .map(|(w, c)| c.min(m2.get(w).unwrap_or(&0)))
                .sum();
            assert_eq!(e.score, 1.25 * overlap as f32, "pair {e:?}");
            seen_scores.insert((e.score * 100.0) as i64);
        }
        assert_eq!(seen_scores.len(), 5, "all overlap grades 0..=4 present");
    }

    #[test]
    fn config_validation_rejects_bad_sizes() {
        let mut cfg = SynthConfig::new(0, 1);
        assert!(gen_synthetic(&cfg).is_err());
        cfg.n_pairs = 1;
        cfg.n_templates = 1;
        assert!(gen_synthetic(&cfg).is_err());
        cfg.n_templates = 7;
        assert!(gen_synthetic(&cfg).is_err());
        cfg.n_templates = 6;
        cfg.n_content_words = 41;
        assert!(gen_synthetic(&cfg).is_err());
        cfg.n_content_words = 1;
        assert!(gen_synthetic(&cfg).is_err());
    }

    #[test]
    fn tagset_covers_all_template_tags() {
        let corpus = gen_synthetic(&SynthConfig::new(100, 17)).unwrap();
        for pair in &corpus.pairs {
            let t = syntax::parse_ptb(&pair.parse1).unwrap();
            // tag_bow errors on any tag missing from the set.
            syntax::tag_bow(&t, &corpus.tagset).unwrap();
        }
    }
}
