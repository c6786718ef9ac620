//! TOP-format labeled-bracket parse trees.
//!
//! A tree is written as `[IN:GET_WEATHER what is the weather [SL:DATE today ] ]`:
//! every bracket opens with an intent (`IN:`) or slot (`SL:`) label followed
//! by whitespace-separated tokens and nested brackets. Intents hold slots and
//! tokens; slots hold tokens and intents. The root is always an intent.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

pub const INTENT_PREFIX: &str = "IN:";
pub const SLOT_PREFIX: &str = "SL:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Intent,
    Slot,
}

impl NodeKind {
    pub fn prefix(self) -> &'static str {
        match self {
            NodeKind::Intent => INTENT_PREFIX,
            NodeKind::Slot => SLOT_PREFIX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Child {
    Token(String),
    Node(Node),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Node {
    kind: NodeKind,
    name: String,
    children: Vec<Child>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ParseTree {
    root: Node,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty input")]
    EmptyInput,
    #[error("unbalanced brackets at byte {position}")]
    UnbalancedBrackets { position: usize },
    #[error("label `{label}` at byte {position} must start with IN: or SL: followed by [A-Z0-9_]+")]
    BadLabel { label: String, position: usize },
    #[error("root node must be an intent")]
    RootNotIntent,
    #[error("bracket at byte {position} has no label")]
    EmptyNode { position: usize },
    #[error("{child} node `{name}` at byte {position} cannot appear under a {parent} node")]
    BadNesting {
        name: String,
        child: &'static str,
        parent: &'static str,
        position: usize,
    },
    #[error("unexpected content at byte {position} outside the root bracket")]
    TrailingInput { position: usize },
    #[error("invalid token `{token}`")]
    BadToken { token: String },
}

fn kind_str(kind: NodeKind) -> &'static str {
    match kind {
        NodeKind::Intent => "intent",
        NodeKind::Slot => "slot",
    }
}

/// Upper-cases a label and checks it against `IN:[A-Z0-9_]+` / `SL:[A-Z0-9_]+`.
pub fn normalize_label(raw: &str) -> Option<(NodeKind, String)> {
    let upper = raw.to_ascii_uppercase();
    let kind = if upper.starts_with(INTENT_PREFIX) {
        NodeKind::Intent
    } else if upper.starts_with(SLOT_PREFIX) {
        NodeKind::Slot
    } else {
        return None;
    };
    let rest = &upper[3..];
    if rest.is_empty()
        || !rest
            .bytes()
            .all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b == b'_')
    {
        return None;
    }
    Some((kind, upper))
}

pub fn is_valid_token(token: &str) -> bool {
    !token.is_empty() && !token.chars().any(|c| c.is_whitespace() || c == '[' || c == ']')
}

impl Node {
    /// Builds a node from a label, checking the label and the nesting rule for
    /// the direct children.
    pub fn new(label: &str, children: Vec<Child>) -> Result<Self, ParseError> {
        let (kind, name) = normalize_label(label).ok_or_else(|| ParseError::BadLabel {
            label: label.to_string(),
            position: 0,
        })?;
        for child in &children {
            match child {
                Child::Token(t) if !is_valid_token(t) => {
                    return Err(ParseError::BadToken { token: t.clone() })
                }
                Child::Node(n) if n.kind == kind => {
                    return Err(ParseError::BadNesting {
                        name: n.name.clone(),
                        child: kind_str(n.kind),
                        parent: kind_str(kind),
                        position: 0,
                    })
                }
                _ => {}
            }
        }
        Ok(Node {
            kind,
            name,
            children,
        })
    }

    pub fn intent(label: &str, children: Vec<Child>) -> Result<Self, ParseError> {
        let node = Node::new(label, children)?;
        if node.kind != NodeKind::Intent {
            return Err(ParseError::BadLabel {
                label: label.to_string(),
                position: 0,
            });
        }
        Ok(node)
    }

    pub fn slot(label: &str, children: Vec<Child>) -> Result<Self, ParseError> {
        let node = Node::new(label, children)?;
        if node.kind != NodeKind::Slot {
            return Err(ParseError::BadLabel {
                label: label.to_string(),
                position: 0,
            });
        }
        Ok(node)
    }

    pub fn kind(&self) -> NodeKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn children(&self) -> &[Child] {
        &self.children
    }

    /// True if any node strictly below this one is a slot.
    pub fn has_slot_descendant(&self) -> bool {
        self.children.iter().any(|c| match c {
            Child::Token(_) => false,
            Child::Node(n) => n.kind == NodeKind::Slot || n.has_slot_descendant(),
        })
    }

    pub fn write_canonical(&self, out: &mut String) {
        out.push('[');
        out.push_str(&self.name);
        for child in &self.children {
            out.push(' ');
            match child {
                Child::Token(t) => out.push_str(t),
                Child::Node(n) => n.write_canonical(out),
            }
        }
        out.push_str(" ]");
    }

    /// Space-joined canonical serialization of the children only.
    pub fn children_string(&self) -> String {
        let mut out = String::new();
        for (i, child) in self.children.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            match child {
                Child::Token(t) => out.push_str(t),
                Child::Node(n) => n.write_canonical(&mut out),
            }
        }
        out
    }

    fn collect_tokens<'a>(&'a self, out: &mut Vec<&'a str>) {
        for child in &self.children {
            match child {
                Child::Token(t) => out.push(t),
                Child::Node(n) => n.collect_tokens(out),
            }
        }
    }

    fn collect_classes(&self, out: &mut BTreeSet<String>) {
        out.insert(self.name.clone());
        for child in &self.children {
            if let Child::Node(n) = child {
                n.collect_classes(out);
            }
        }
    }

    fn count_label(&self, label: &str) -> usize {
        let own = usize::from(self.name == label);
        own + self
            .children
            .iter()
            .map(|c| match c {
                Child::Node(n) => n.count_label(label),
                Child::Token(_) => 0,
            })
            .sum::<usize>()
    }
}

impl ParseTree {
    pub fn new(root: Node) -> Result<Self, ParseError> {
        if root.kind != NodeKind::Intent {
            return Err(ParseError::RootNotIntent);
        }
        Ok(ParseTree { root })
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// In-order token leaves.
    pub fn tokens(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.root.collect_tokens(&mut out);
        out
    }

    /// Number of nodes labeled `label` anywhere in the tree.
    pub fn count_label(&self, label: &str) -> usize {
        self.root.count_label(label)
    }
}

impl fmt::Display for ParseTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize(self))
    }
}

impl core::str::FromStr for ParseTree {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_top(s)
    }
}

enum Lexeme<'a> {
    Open(usize),
    Close(usize),
    Word(usize, &'a str),
}

fn lex(text: &str) -> Vec<Lexeme<'_>> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        let boundary = c.is_whitespace() || c == '[' || c == ']';
        if boundary {
            if let Some(s) = start.take() {
                out.push(Lexeme::Word(s, &text[s..i]));
            }
            if c == '[' {
                out.push(Lexeme::Open(i));
            } else if c == ']' {
                out.push(Lexeme::Close(i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Lexeme::Word(s, &text[s..]));
    }
    out
}

/// Parses a TOP labeled-bracket string.
///
/// Whitespace runs are insignificant; labels are upper-cased.
pub fn parse_top(text: &str) -> Result<ParseTree, ParseError> {
    let lexemes = lex(text);
    if lexemes.is_empty() {
        return Err(ParseError::EmptyInput);
    }
    // Fail on bracket imbalance before anything else so that a miscounted
    // string is always reported as such.
    let mut depth: usize = 0;
    let mut opens: Vec<usize> = Vec::new();
    for lx in &lexemes {
        match lx {
            Lexeme::Open(p) => {
                depth += 1;
                opens.push(*p);
            }
            Lexeme::Close(p) => {
                if depth == 0 {
                    return Err(ParseError::UnbalancedBrackets { position: *p });
                }
                depth -= 1;
                opens.pop();
            }
            Lexeme::Word(..) => {}
        }
    }
    if let Some(&p) = opens.last() {
        return Err(ParseError::UnbalancedBrackets { position: p });
    }

    let mut stack: Vec<(Node, usize)> = Vec::new();
    let mut root: Option<Node> = None;
    let mut iter = lexemes.iter().peekable();
    while let Some(lx) = iter.next() {
        match *lx {
            Lexeme::Open(pos) => {
                if root.is_some() {
                    return Err(ParseError::TrailingInput { position: pos });
                }
                let (label_pos, label) = match iter.next() {
                    Some(Lexeme::Word(p, w)) => (*p, *w),
                    _ => return Err(ParseError::EmptyNode { position: pos }),
                };
                let (kind, name) =
                    normalize_label(label).ok_or_else(|| ParseError::BadLabel {
                        label: label.to_string(),
                        position: label_pos,
                    })?;
                match stack.last() {
                    None if kind != NodeKind::Intent => return Err(ParseError::RootNotIntent),
                    Some((parent, _)) if parent.kind == kind => {
                        return Err(ParseError::BadNesting {
                            name,
                            child: kind_str(kind),
                            parent: kind_str(parent.kind),
                            position: pos,
                        })
                    }
                    _ => {}
                }
                stack.push((
                    Node {
                        kind,
                        name,
                        children: Vec::new(),
                    },
                    pos,
                ));
            }
            Lexeme::Close(_) => {
                let (node, _) = stack.pop().expect("brackets are balanced");
                match stack.last_mut() {
                    Some((parent, _)) => parent.children.push(Child::Node(node)),
                    None => root = Some(node),
                }
            }
            Lexeme::Word(pos, word) => match stack.last_mut() {
                Some((parent, _)) => parent.children.push(Child::Token(word.to_string())),
                None if root.is_some() => return Err(ParseError::TrailingInput { position: pos }),
                None => return Err(ParseError::RootNotIntent),
            },
        }
    }
    ParseTree::new(root.expect("non-empty balanced input has a root"))
}

/// Canonical form: `[LABEL child child ... ]` with single spaces.
pub fn serialize(tree: &ParseTree) -> String {
    let mut out = String::new();
    tree.root.write_canonical(&mut out);
    out
}

/// Every intent and slot label appearing in the tree.
pub fn classes_of(tree: &ParseTree) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    tree.root.collect_classes(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tok(s: &str) -> Child {
        Child::Token(s.to_string())
    }

    pub(crate) const FIG1: &str = "[IN:GET_DEPARTURE when should i leave for my \
        [SL:DESTINATION [IN:GET_EVENT [SL:NAME_EVENT dentist ] [SL:CATEGORY_EVENT appointment ] ] ] \
        at [SL:TIME_ARRIVAL 4 pm ] ]";

    #[test]
    fn parses_minimal_intent() {
        let tree = parse_top("[IN:CANCEL never mind ]").unwrap();
        let expected =
            ParseTree::new(Node::intent("IN:CANCEL", vec![tok("never"), tok("mind")]).unwrap())
                .unwrap();
        assert_eq!(tree, expected);
    }

    #[test]
    fn parses_intent_with_slot() {
        let tree = parse_top("[IN:GET_WEATHER what is the weather [SL:DATE today ] ]").unwrap();
        let root = tree.root();
        assert_eq!(root.name(), "IN:GET_WEATHER");
        assert_eq!(root.children().len(), 5);
        for (child, word) in root.children()[..4].iter().zip(["what", "is", "the", "weather"]) {
            assert_eq!(child, &tok(word));
        }
        match &root.children()[4] {
            Child::Node(slot) => {
                assert_eq!(slot.kind(), NodeKind::Slot);
                assert_eq!(slot.name(), "SL:DATE");
                assert_eq!(slot.children(), &[tok("today")]);
            }
            other => panic!("expected slot, got {other:?}"),
        }
    }

    #[test]
    fn rejects_slot_root() {
        assert_eq!(parse_top("[SL:DATE today ]"), Err(ParseError::RootNotIntent));
    }

    #[test]
    fn reports_unbalanced_positions() {
        assert_eq!(
            parse_top("[IN:A x ] ]"),
            Err(ParseError::UnbalancedBrackets { position: 10 })
        );
        assert_eq!(
            parse_top("[IN:A [SL:B x ]"),
            Err(ParseError::UnbalancedBrackets { position: 0 })
        );
    }

    #[test]
    fn rejects_bad_and_empty_labels() {
        assert!(matches!(
            parse_top("[FOO:A x ]"),
            Err(ParseError::BadLabel { position: 1, .. })
        ));
        assert!(matches!(
            parse_top("[IN:A- x ]"),
            Err(ParseError::BadLabel { .. })
        ));
        assert_eq!(parse_top("[ ]"), Err(ParseError::EmptyNode { position: 0 }));
        assert_eq!(
            parse_top("[IN:A [ ] ]"),
            Err(ParseError::EmptyNode { position: 6 })
        );
        assert_eq!(parse_top("   "), Err(ParseError::EmptyInput));
    }

    #[test]
    fn rejects_bad_nesting_and_trailing_input() {
        assert!(matches!(
            parse_top("[IN:A [IN:B x ] ]"),
            Err(ParseError::BadNesting { .. })
        ));
        assert!(matches!(
            parse_top("[IN:A [SL:B [SL:C x ] ] ]"),
            Err(ParseError::BadNesting { .. })
        ));
        assert!(matches!(
            parse_top("[IN:A x ] y"),
            Err(ParseError::TrailingInput { .. })
        ));
        assert!(matches!(
            parse_top("[IN:A x ] [IN:B y ]"),
            Err(ParseError::TrailingInput { .. })
        ));
        assert_eq!(parse_top("x [IN:A y ]"), Err(ParseError::RootNotIntent));
    }

    #[test]
    fn labels_are_upper_cased() {
        let tree = parse_top("[in:get_departure [sl:date today ] ]").unwrap();
        assert_eq!(serialize(&tree), "[IN:GET_DEPARTURE [SL:DATE today ] ]");
    }

    #[test]
    fn slotless_intent_without_children() {
        let tree = parse_top("[IN:CANCEL ]").unwrap();
        assert!(tree.root().children().is_empty());
        assert_eq!(serialize(&tree), "[IN:CANCEL ]");
    }

    #[test]
    fn serializes_canonically() {
        let tree =
            ParseTree::new(Node::intent("IN:CANCEL", vec![tok("never"), tok("mind")]).unwrap())
                .unwrap();
        assert_eq!(serialize(&tree), "[IN:CANCEL never mind ]");
        let spaced = parse_top("[IN:CANCEL  never  mind ]").unwrap();
        assert_eq!(serialize(&spaced), "[IN:CANCEL never mind ]");
        let tight = parse_top("[IN:GET_WEATHER\tweather [SL:DATE today]]").unwrap();
        assert_eq!(serialize(&tight), "[IN:GET_WEATHER weather [SL:DATE today ] ]");
    }

    #[test]
    fn canonical_form_matches_whitespace_collapse() {
        // Oracle: collapse whitespace runs and pad brackets, then compare.
        let input = "  [IN:GET_WEATHER   what\n is [SL:DATE  today ]   ]  ";
        let collapsed: Vec<&str> = input.split_whitespace().collect();
        assert_eq!(serialize(&parse_top(input).unwrap()), collapsed.join(" "));
    }

    #[test]
    fn classes_of_examples() {
        let tree = parse_top("[IN:CANCEL hi ]").unwrap();
        assert_eq!(
            classes_of(&tree).into_iter().collect::<Vec<_>>(),
            vec!["IN:CANCEL".to_string()]
        );

        let fig1 = parse_top(FIG1).unwrap();
        let expected: BTreeSet<String> = [
            "IN:GET_DEPARTURE",
            "SL:TIME_ARRIVAL",
            "SL:DESTINATION",
            "IN:GET_EVENT",
            "SL:NAME_EVENT",
            "SL:CATEGORY_EVENT",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        assert_eq!(classes_of(&fig1), expected);

        let dup = parse_top("[IN:A [SL:B x ] [SL:B y ] ]").unwrap();
        assert_eq!(classes_of(&dup).len(), 2);
        assert_eq!(dup.count_label("SL:B"), 2);
    }

    #[test]
    fn token_leaves_in_order() {
        let fig1 = parse_top(FIG1).unwrap();
        let words: Vec<&str> = "when should i leave for my dentist appointment at 4 pm"
            .split(' ')
            .collect();
        assert_eq!(fig1.tokens(), words);
    }

    #[test]
    fn node_constructors_validate() {
        assert!(Node::intent("SL:X", vec![]).is_err());
        assert!(Node::intent("IN:X", vec![tok("a b")]).is_err());
        let inner = Node::intent("IN:Y", vec![]).unwrap();
        assert!(Node::intent("IN:X", vec![Child::Node(inner)]).is_err());
        assert_eq!(
            ParseTree::new(Node::slot("SL:X", vec![]).unwrap()),
            Err(ParseError::RootNotIntent)
        );
    }
}
