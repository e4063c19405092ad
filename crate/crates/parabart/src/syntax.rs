//! Constituency trees in bracketed notation.
//!
//! Trees come in CoreNLP-style bracketing, e.g.
//! `(S (NP (DT This) (NN book)) (VP (VBZ is) (ADJP good)) (. .))`.
//! A node either has children, or carries one terminal word, or is a bare
//! tag leaf. [`linearize`] flattens a tree to the token sequence the
//! syntactic encoder consumes — brackets and tags only, terminals dropped —
//! and [`parse_ptb`] accepts that flattened form back, so the two round-trip
//! (modulo terminals).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// One node of a constituency tree.
///
/// Exactly one of these holds: `children` is non-empty (internal node),
/// `terminal` is set (preterminal with its word), or neither (bare tag
/// leaf). Both at once is rejected by the constructors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTree {
    pub tag: String,
    pub children: Vec<ParseTree>,
    pub terminal: Option<String>,
}

fn valid_tag(tag: &str) -> bool {
    !tag.is_empty() && !tag.contains(['(', ')']) && !tag.contains(char::is_whitespace)
}

impl ParseTree {
    pub fn leaf(tag: impl Into<String>) -> Self {
        let tag = tag.into();
        assert!(valid_tag(&tag), "invalid tag {tag:?}");
        ParseTree {
            tag,
            children: Vec::new(),
            terminal: None,
        }
    }

    pub fn preterminal(tag: impl Into<String>, word: impl Into<String>) -> Self {
        let mut t = ParseTree::leaf(tag);
        t.terminal = Some(word.into());
        t
    }

    pub fn internal(tag: impl Into<String>, children: Vec<ParseTree>) -> Self {
        assert!(!children.is_empty(), "internal node needs children");
        let mut t = ParseTree::leaf(tag);
        t.children = children;
        t
    }

    /// Number of tagged nodes (terminal words are not nodes).
    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(ParseTree::node_count).sum::<usize>()
    }

    /// Height of the tree; a single node has depth 1.
    pub fn depth(&self) -> usize {
        1 + self
            .children
            .iter()
            .map(ParseTree::depth)
            .max()
            .unwrap_or(0)
    }

    /// Terminal words, left to right.
    pub fn terminals(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_terminals(&mut out);
        out
    }

    fn collect_terminals<'a>(&'a self, out: &mut Vec<&'a str>) {
        if let Some(w) = &self.terminal {
            out.push(w);
        }
        for c in &self.children {
            c.collect_terminals(out);
        }
    }

    /// Drop all terminal words, keeping the tag structure.
    pub fn strip_terminals(&self) -> ParseTree {
        ParseTree {
            tag: self.tag.clone(),
            children: self.children.iter().map(ParseTree::strip_terminals).collect(),
            terminal: None,
        }
    }

    fn visit_preorder<'a>(&'a self, f: &mut impl FnMut(&'a ParseTree) -> bool) -> bool {
        if f(self) {
            return true;
        }
        for c in &self.children {
            if c.visit_preorder(f) {
                return true;
            }
        }
        false
    }
}

impl fmt::Display for ParseTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.tag)?;
        if let Some(w) = &self.terminal {
            write!(f, " {w}")?;
        }
        for c in &self.children {
            write!(f, " {c}")?;
        }
        write!(f, ")")
    }
}

/// Parse one bracketed tree. Whitespace between brackets, tags, and words is
/// optional, so both `(NP (DT the))` and `( NP ( DT ) )` are accepted.
///
/// Errors report 1-based byte positions.
pub fn parse_ptb(input: &str) -> Result<ParseTree> {
    let bytes = input.as_bytes();
    let mut pos = 0usize;
    skip_ws(bytes, &mut pos);
    let tree = parse_node(bytes, &mut pos)?;
    skip_ws(bytes, &mut pos);
    if pos != bytes.len() {
        return Err(err_at(pos, "trailing input after tree"));
    }
    Ok(tree)
}

fn err_at(pos: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        offset: pos + 1,
        msg: msg.into(),
    }
}

fn skip_ws(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
}

fn parse_token<'a>(bytes: &'a [u8], pos: &mut usize) -> &'a str {
    let start = *pos;
    while *pos < bytes.len()
        && bytes[*pos] != b'('
        && bytes[*pos] != b')'
        && !bytes[*pos].is_ascii_whitespace()
    {
        *pos += 1;
    }
    // Slicing on byte boundaries of multi-byte UTF-8 is safe here because
    // the delimiters are all ASCII.
    std::str::from_utf8(&bytes[start..*pos]).expect("token is valid UTF-8")
}

fn parse_node(bytes: &[u8], pos: &mut usize) -> Result<ParseTree> {
    if *pos >= bytes.len() {
        return Err(err_at(*pos, "unexpected end of input, expected '('"));
    }
    if bytes[*pos] != b'(' {
        return Err(err_at(
            *pos,
            format!("expected '(', found {:?}", bytes[*pos] as char),
        ));
    }
    *pos += 1;
    skip_ws(bytes, pos);
    let tag = parse_token(bytes, pos).to_string();
    if tag.is_empty() {
        return Err(err_at(*pos, "expected constituent tag"));
    }
    skip_ws(bytes, pos);

    let mut node = ParseTree {
        tag,
        children: Vec::new(),
        terminal: None,
    };
    if *pos >= bytes.len() {
        return Err(err_at(*pos, "unexpected end of input inside node"));
    }
    match bytes[*pos] {
        b')' => {
            *pos += 1;
            Ok(node) // bare tag leaf
        }
        b'(' => {
            while *pos < bytes.len() && bytes[*pos] == b'(' {
                node.children.push(parse_node(bytes, pos)?);
                skip_ws(bytes, pos);
            }
            if *pos >= bytes.len() {
                return Err(err_at(*pos, "unexpected end of input, expected ')'"));
            }
            if bytes[*pos] != b')' {
                return Err(err_at(
                    *pos,
                    format!("expected ')', found {:?}", bytes[*pos] as char),
                ));
            }
            *pos += 1;
            Ok(node)
        }
        _ => {
            let word = parse_token(bytes, pos).to_string();
            node.terminal = Some(word);
            skip_ws(bytes, pos);
            if *pos >= bytes.len() {
                return Err(err_at(*pos, "unexpected end of input, expected ')'"));
            }
            if bytes[*pos] != b')' {
                return Err(err_at(
                    *pos,
                    format!("expected ')' after terminal, found {:?}", bytes[*pos] as char),
                ));
            }
            *pos += 1;
            Ok(node)
        }
    }
}

/// Flatten a tree to the bracket-and-tag token sequence fed to the
/// syntactic encoder. Terminal words are dropped; every node contributes
/// `"("`, its tag, and `")"`, so the output holds `3 · node_count` tokens.
pub fn linearize(tree: &ParseTree) -> Vec<String> {
    let mut out = Vec::with_capacity(3 * tree.node_count());
    linearize_into(tree, &mut out);
    out
}

fn linearize_into(tree: &ParseTree, out: &mut Vec<String>) {
    out.push("(".to_string());
    out.push(tree.tag.clone());
    for c in &tree.children {
        linearize_into(c, out);
    }
    out.push(")".to_string());
}

/// Tokenize a bracketed string with the same lexer [`parse_ptb`] uses:
/// parens are single-character tokens, tags and words are maximal runs.
pub fn tokenize_brackets(input: &str) -> Vec<String> {
    let bytes = input.as_bytes();
    let mut pos = 0usize;
    let mut out = Vec::new();
    loop {
        skip_ws(bytes, &mut pos);
        if pos >= bytes.len() {
            return out;
        }
        match bytes[pos] {
            b'(' => {
                out.push("(".to_string());
                pos += 1;
            }
            b')' => {
                out.push(")".to_string());
                pos += 1;
            }
            _ => out.push(parse_token(bytes, &mut pos).to_string()),
        }
    }
}

/// An ordered set of constituent tags. The order fixes the index layout of
/// dense tag vectors, so it is part of every trained model's contract.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    tags: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl TagSet {
    pub fn new(tags: Vec<String>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, tag) in tags.iter().enumerate() {
            if !valid_tag(tag) {
                return Err(Error::config(format!("invalid tag {tag:?} in tag set")));
            }
            if index.insert(tag.clone(), i).is_some() {
                return Err(Error::config(format!("duplicate tag {tag:?} in tag set")));
            }
        }
        Ok(TagSet { tags, index })
    }

    /// Load a tag set from a file with one tag per line; line order is
    /// index order. Blank lines are ignored.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        TagSet::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    pub fn to_file(&self, path: &Path) -> Result<()> {
        let mut text = self.tags.join("\n");
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Collect every tag occurring in `trees`, ordered lexicographically.
    pub fn collect(trees: impl IntoIterator<Item = impl std::borrow::Borrow<ParseTree>>) -> Self {
        let mut tags = std::collections::BTreeSet::new();
        for tree in trees {
            tree.borrow().visit_preorder(&mut |n| {
                tags.insert(n.tag.clone());
                false
            });
        }
        TagSet::new(tags.into_iter().collect()).expect("collected tags are valid")
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }
}

/// Normalized bag of constituent tags: occurrence count of each tag divided
/// by the total node count. Only tags that occur are present; weights are
/// strictly positive and sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TagBow {
    pub weights: BTreeMap<String, f32>,
}

impl TagBow {
    /// Dense vector in tag-set index order, zeros for absent tags.
    pub fn to_dense(&self, tagset: &TagSet) -> Vec<f32> {
        let mut v = vec![0.0; tagset.len()];
        for (tag, &w) in &self.weights {
            let i = tagset
                .index_of(tag)
                .expect("tag_bow validated tags against this tag set");
            v[i] = w;
        }
        v
    }
}

/// Count every node's tag (punctuation tags included) and normalize by the
/// total node count. A tag outside `tagset` is an error.
pub fn tag_bow(tree: &ParseTree, tagset: &TagSet) -> Result<TagBow> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut unknown = None;
    tree.visit_preorder(&mut |n| {
        if tagset.index_of(&n.tag).is_none() {
            unknown = Some(n.tag.clone());
            return true;
        }
        *counts.entry(n.tag.clone()).or_insert(0) += 1;
        false
    });
    if let Some(tag) = unknown {
        return Err(Error::UnknownTag {
            tag,
            known: tagset.len(),
        });
    }
    let total: usize = counts.values().sum();
    let weights = counts
        .into_iter()
        .map(|(tag, c)| (tag, c as f32 / total as f32))
        .collect();
    Ok(TagBow { weights })
}

/// Tags of the children of the first `S` node in pre-order; if the tree has
/// no `S`, the root's children. Order is surface order.
pub fn top_level_constituents(tree: &ParseTree) -> Vec<String> {
    let mut found: Option<&ParseTree> = None;
    tree.visit_preorder(&mut |n| {
        if n.tag == "S" {
            found = Some(n);
            return true;
        }
        false
    });
    let node = found.unwrap_or(tree);
    node.children.iter().map(|c| c.tag.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// The worked example used throughout: "This book is good."
    const BOOK: &str = "(S (NP (DT This) (NN book)) (VP (VBZ is) (ADJP good)) (. .))";

    fn book_tree() -> ParseTree {
        parse_ptb(BOOK).unwrap()
    }

    fn book_tagset() -> TagSet {
        TagSet::new(
            ["S", "NP", "DT", "NN", "VP", "VBZ", "ADJP", "."]
                .map(String::from)
                .to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn parses_nested_tree_with_terminals() {
        let t = book_tree();
        assert_eq!(t.tag, "S");
        assert_eq!(t.children.len(), 3);
        assert_eq!(t.node_count(), 8);
        assert_eq!(t.terminals(), vec!["This", "book", "is", "good", "."]);
        assert_eq!(t.children[0].children[0], ParseTree::preterminal("DT", "This"));
    }

    #[test]
    fn display_round_trips() {
        let t = book_tree();
        assert_eq!(t.to_string(), BOOK);
        assert_eq!(parse_ptb(&t.to_string()).unwrap(), t);
    }

    #[test]
    fn linearize_drops_terminals_and_keeps_bracket_structure() {
        let tokens = linearize(&book_tree());
        let expected = tokenize_brackets("(S (NP (DT) (NN)) (VP (VBZ) (ADJP)) (.))");
        assert_eq!(tokens, expected);
        assert_eq!(tokens.len(), 3 * book_tree().node_count());
    }

    #[test]
    fn linearized_form_parses_back_to_stripped_tree() {
        let t = book_tree();
        let joined = linearize(&t).join(" ");
        assert_eq!(parse_ptb(&joined).unwrap(), t.strip_terminals());
    }

    #[test]
    fn single_node_linearizes_to_three_tokens() {
        let t = ParseTree::leaf("X");
        assert_eq!(linearize(&t), vec!["(", "X", ")"]);
    }

    #[test]
    fn unbalanced_input_reports_byte_position() {
        let err = parse_ptb("(S (NP").unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert_eq!(offset, 7),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(parse_ptb("").is_err());
        assert!(parse_ptb("()").is_err());
        assert!(parse_ptb("S NP").is_err());
        assert!(parse_ptb("(S))").is_err());
        assert!(parse_ptb("(S) (S)").is_err());
        assert!(parse_ptb("(S word word)").is_err());
    }

    #[test]
    fn tag_bow_of_example_is_uniform() {
        let bow = tag_bow(&book_tree(), &book_tagset()).unwrap();
        assert_eq!(bow.weights.len(), 8);
        for (tag, w) in &bow.weights {
            assert!((w - 0.125).abs() < 1e-7, "{tag} has weight {w}");
        }
        let dense = bow.to_dense(&book_tagset());
        assert_eq!(dense, vec![0.125; 8]);
    }

    #[test]
    fn tag_bow_counts_repeated_tags() {
        let t = parse_ptb("(S (NP) (NP))").unwrap();
        let ts = TagSet::new(vec!["S".into(), "NP".into()]).unwrap();
        let bow = tag_bow(&t, &ts).unwrap();
        assert!((bow.weights["S"] - 1.0 / 3.0).abs() < 1e-7);
        assert!((bow.weights["NP"] - 2.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn tag_bow_rejects_unknown_tag() {
        let t = parse_ptb("(S (WEIRD))").unwrap();
        let err = tag_bow(&t, &book_tagset()).unwrap_err();
        match err {
            Error::UnknownTag { tag, .. } => assert_eq!(tag, "WEIRD"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn top_level_constituents_of_example() {
        assert_eq!(top_level_constituents(&book_tree()), vec!["NP", "VP", "."]);
    }

    #[test]
    fn top_level_skips_root_wrapper() {
        let t = parse_ptb("(ROOT (S (NP) (VP)))").unwrap();
        assert_eq!(top_level_constituents(&t), vec!["NP", "VP"]);
    }

    #[test]
    fn top_level_falls_back_to_root_children_without_s() {
        let t = parse_ptb("(FRAG (NP) (.))").unwrap();
        assert_eq!(top_level_constituents(&t), vec!["NP", "."]);
        // Preserves duplicates and surface order.
        let t = parse_ptb("(S (NP) (,) (NP) (VP))").unwrap();
        assert_eq!(top_level_constituents(&t), vec!["NP", ",", "NP", "VP"]);
    }

    #[test]
    fn tagset_round_trips_through_file_preserving_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tags.txt");
        let ts = book_tagset();
        ts.to_file(&path).unwrap();
        assert_eq!(TagSet::from_file(&path).unwrap(), ts);
        assert_eq!(ts.index_of("NP"), Some(1));
        assert_eq!(ts.index_of("XX"), None);
    }

    #[test]
    fn tagset_rejects_duplicates() {
        assert!(TagSet::new(vec!["S".into(), "S".into()]).is_err());
    }

    // ---- property tests -------------------------------------------------

    fn arb_tag() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["S", "NP", "VP", "DT", "NN", ".", ",", "ADJP"])
            .prop_map(String::from)
    }

    fn arb_tree() -> impl Strategy<Value = ParseTree> {
        let leaf = prop_oneof![
            arb_tag().prop_map(ParseTree::leaf),
            (arb_tag(), "[a-z]{1,6}").prop_map(|(t, w)| ParseTree::preterminal(t, w)),
        ];
        leaf.prop_recursive(4, 40, 3, |inner| {
            (arb_tag(), prop::collection::vec(inner, 1..4))
                .prop_map(|(t, cs)| ParseTree::internal(t, cs))
        })
    }

    proptest! {
        #[test]
        fn display_parse_round_trip(t in arb_tree()) {
            let printed = t.to_string();
            prop_assert_eq!(parse_ptb(&printed).unwrap(), t);
        }

        #[test]
        fn linearize_length_is_three_per_node(t in arb_tree()) {
            prop_assert_eq!(linearize(&t).len(), 3 * t.node_count());
        }

        #[test]
        fn linearize_round_trips_to_stripped_tree(t in arb_tree()) {
            let joined = linearize(&t).join(" ");
            prop_assert_eq!(parse_ptb(&joined).unwrap(), t.strip_terminals());
        }

        #[test]
        fn tag_bow_sums_to_one(t in arb_tree()) {
            let ts = TagSet::collect([&t]);
            let bow = tag_bow(&t, &ts).unwrap();
            let sum: f32 = bow.weights.values().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            for &w in bow.weights.values() {
                prop_assert!(w > 0.0);
            }
        }
    }
}
