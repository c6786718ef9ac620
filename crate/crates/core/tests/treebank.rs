use patchtune_core::datagen::{builtin_grammar, generate_stream, GenConfig};
use patchtune_core::treebank::*;
use proptest::prelude::*;

fn token() -> impl Strategy<Value = String> {
    "[a-z0-9']{1,6}"
}

fn slot_node(depth: u32) -> BoxedStrategy<Node> {
    let leaf = prop::collection::vec(token().prop_map(Child::Token), 1..4);
    let children = if depth == 0 {
        leaf.boxed()
    } else {
        prop_oneof![
            3 => leaf,
            1 => intent_node(depth - 1).prop_map(|n| vec![Child::Node(n)]),
        ]
        .boxed()
    };
    ("[A-Z]{1,3}", children)
        .prop_map(|(l, c)| Node::slot(&format!("SL:{l}"), c).unwrap())
        .boxed()
}

fn intent_node(depth: u32) -> BoxedStrategy<Node> {
    let child = prop_oneof![
        token().prop_map(Child::Token),
        slot_node(depth).prop_map(Child::Node),
    ];
    ("[A-Z_]{1,4}", prop::collection::vec(child, 1..5))
        .prop_map(|(l, c)| Node::intent(&format!("IN:{l}"), c).unwrap())
        .boxed()
}

fn tree() -> impl Strategy<Value = ParseTree> {
    intent_node(2).prop_map(|n| ParseTree::new(n).unwrap())
}

proptest! {
    #[test]
    fn serialize_then_parse_is_identity(t in tree()) {
        let text = serialize(&t);
        prop_assert_eq!(parse_top(&text).unwrap(), t);
    }

    #[test]
    fn parse_accepts_loose_spacing_and_case(t in tree()) {
        let loose = serialize(&t).replace(" ]", "]").replace("[IN:", "[in:");
        prop_assert_eq!(parse_top(&loose).unwrap(), t);
    }

    #[test]
    fn truncated_input_is_rejected(t in tree(), cut in 1usize..8) {
        let text = serialize(&t);
        let cut = cut.min(text.len() - 1);
        let short = &text[..text.len() - cut];
        prop_assert!(parse_top(short).is_err());
    }
}

#[test]
fn ten_thousand_generated_trees_round_trip() {
    let cfg = GenConfig {
        seed: 5,
        n_train: 10_000,
        n_test: 1,
        n_dev: 0,
        tail_exponent: 1.0,
    };
    let ds = generate_stream(&builtin_grammar(), &cfg, "roundtrip", 10_000).unwrap();
    let failures = ds
        .examples()
        .iter()
        .filter(|e| parse_top(&serialize(&e.tree)).as_ref() != Ok(&e.tree))
        .count();
    assert_eq!(failures, 0);
}

#[test]
fn malformed_inputs() {
    assert!(matches!(parse_top(""), Err(ParseError::EmptyInput)));
    assert!(matches!(parse_top("[IN:A x"), Err(ParseError::UnbalancedBrackets { .. })));
    assert!(matches!(parse_top("[SL:A x ]"), Err(ParseError::RootNotIntent)));
    assert!(matches!(parse_top("[IN:A [IN:B x ] ]"), Err(ParseError::BadNesting { .. })));
    assert!(matches!(parse_top("[IN:A [ ] ]"), Err(ParseError::EmptyNode { .. })));
    assert!(matches!(parse_top("[IN:A x ] y"), Err(ParseError::TrailingInput { .. })));
    assert!(matches!(parse_top("[XX:A x ]"), Err(ParseError::BadLabel { .. })));
}
