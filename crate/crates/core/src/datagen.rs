//! Seeded synthetic TOP corpora with a long-tailed class distribution.
//!
//! A [`Grammar`] lists intents with templates. Template items are words or
//! `{SL:NAME}` slot placeholders; slot fillers are word sequences that may
//! contain an `{IN:NAME}` nested intent, which makes compositional slot
//! values. Root intents and fillers are drawn with Zipf weights `1 / rankˢ`
//! (rank = position in the grammar), templates uniformly.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Example};
use crate::seed;
use crate::treebank::{is_valid_token, normalize_label, Child, Node, NodeKind, ParseTree};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatagenError {
    #[error("invalid grammar: {0}")]
    InvalidGrammar(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("slot `{slot}` needs a nested intent beyond depth limit {limit}")]
    DepthExceeded { slot: String, limit: usize },
}

/// A template or filler item: a literal word, a slot placeholder, or a
/// nested intent. Serialized as `word`, `{SL:NAME}` or `{IN:NAME}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Symbol {
    Word(String),
    Slot(String),
    Intent(String),
}

impl TryFrom<String> for Symbol {
    type Error = DatagenError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Symbol::parse(&s)
    }
}

impl From<Symbol> for String {
    fn from(s: Symbol) -> String {
        s.to_string()
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Word(w) => f.write_str(w),
            Symbol::Slot(l) | Symbol::Intent(l) => write!(f, "{{{l}}}"),
        }
    }
}

impl Symbol {
    pub fn parse(s: &str) -> Result<Self, DatagenError> {
        if let Some(inner) = s.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
            let (kind, label) = normalize_label(inner)
                .ok_or_else(|| DatagenError::InvalidGrammar(format!("bad label in `{s}`")))?;
            return Ok(match kind {
                NodeKind::Slot => Symbol::Slot(label),
                NodeKind::Intent => Symbol::Intent(label),
            });
        }
        if !is_valid_token(s) || s.contains(['{', '}']) {
            return Err(DatagenError::InvalidGrammar(format!("bad word `{s}`")));
        }
        Ok(Symbol::Word(s.to_string()))
    }

    /// Splits a space-separated pattern such as `"play {SL:SONG} now"`.
    pub fn parse_pattern(pattern: &str) -> Result<Vec<Symbol>, DatagenError> {
        pattern.split_whitespace().map(Symbol::parse).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentRule {
    pub label: String,
    pub templates: Vec<Vec<Symbol>>,
    /// Whether the intent may be drawn as a tree root.
    #[serde(default = "yes")]
    pub root: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grammar {
    /// Maximum number of intent levels in a tree (1 = flat).
    pub depth_limit: usize,
    pub intents: Vec<IntentRule>,
    pub slot_fillers: BTreeMap<String, Vec<Vec<Symbol>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default)]
    pub n_dev: usize,
    pub tail_exponent: f64,
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(DatagenError::InvalidConfig(
                "n_train and n_test must be at least 1".into(),
            ));
        }
        if !self.tail_exponent.is_finite() || self.tail_exponent <= 0.0 {
            return Err(DatagenError::InvalidConfig("tail_exponent must be > 0".into()));
        }
        Ok(())
    }
}

/// Cumulative Zipf weights over `n` ranks.
#[derive(Debug, Clone)]
struct ZipfTable {
    cumulative: Vec<f64>,
}

impl ZipfTable {
    fn new(ranks: impl Iterator<Item = usize>, exponent: f64) -> Self {
        let mut acc = 0.0;
        let cumulative = ranks
            .map(|r| {
                acc += zipf_weight(r, exponent);
                acc
            })
            .collect();
        ZipfTable { cumulative }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty table");
        let u = rng.gen::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

/// Unnormalized weight of 1-based `rank`.
pub fn zipf_weight(rank: usize, exponent: f64) -> f64 {
    1.0 / libm::pow(rank as f64, exponent)
}

impl Grammar {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: String| Err(DatagenError::InvalidGrammar(m));
        if self.depth_limit == 0 {
            return bad("depth_limit must be at least 1".into());
        }
        let mut labels = BTreeSet::new();
        for rule in &self.intents {
            match normalize_label(&rule.label) {
                Some((NodeKind::Intent, l)) if l == rule.label => {}
                _ => return bad(format!("`{}` is not a canonical intent label", rule.label)),
            }
            if !labels.insert(rule.label.as_str()) {
                return bad(format!("intent `{}` listed twice", rule.label));
            }
            if rule.templates.is_empty() {
                return bad(format!("intent `{}` has no templates", rule.label));
            }
        }
        if !self.intents.iter().any(|r| r.root) {
            return bad("no root intent".into());
        }
        for rule in &self.intents {
            for t in &rule.templates {
                if t.is_empty() {
                    return bad(format!("intent `{}` has an empty template", rule.label));
                }
                for sym in t {
                    match sym {
                        Symbol::Word(_) => {}
                        Symbol::Slot(s) => match self.slot_fillers.get(s) {
                            Some(f) if !f.is_empty() => {}
                            _ => return bad(format!("slot `{s}` has no fillers")),
                        },
                        Symbol::Intent(i) => {
                            return bad(format!("intent `{i}` used directly in a template of `{}`", rule.label))
                        }
                    }
                }
            }
        }
        for (slot, fillers) in &self.slot_fillers {
            match normalize_label(slot) {
                Some((NodeKind::Slot, l)) if &l == slot => {}
                _ => return bad(format!("`{slot}` is not a canonical slot label")),
            }
            for f in fillers {
                if f.is_empty() {
                    return bad(format!("slot `{slot}` has an empty filler"));
                }
                for sym in f {
                    match sym {
                        Symbol::Word(_) => {}
                        Symbol::Intent(i) if labels.contains(i.as_str()) => {}
                        Symbol::Intent(i) => return bad(format!("unknown intent `{i}` in `{slot}`")),
                        Symbol::Slot(s) => {
                            return bad(format!("slot `{s}` directly inside slot `{slot}`"))
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Every intent and slot label the grammar can emit.
    pub fn classes(&self) -> BTreeSet<String> {
        self.intents
            .iter()
            .map(|r| r.label.clone())
            .chain(self.slot_fillers.keys().cloned())
            .collect()
    }

    pub fn slot_count(&self) -> usize {
        self.slot_fillers.len()
    }

    pub fn intent_count(&self) -> usize {
        self.intents.len()
    }
}

struct Generator<'g> {
    grammar: &'g Grammar,
    exponent: f64,
    roots: Vec<usize>,
    root_table: ZipfTable,
    by_label: BTreeMap<&'g str, usize>,
}

fn is_nested(filler: &[Symbol]) -> bool {
    filler.iter().any(|s| matches!(s, Symbol::Intent(_)))
}

impl<'g> Generator<'g> {
    fn new(grammar: &'g Grammar, exponent: f64) -> Self {
        let roots: Vec<usize> = (0..grammar.intents.len())
            .filter(|&i| grammar.intents[i].root)
            .collect();
        let root_table = ZipfTable::new(1..=roots.len(), exponent);
        let by_label = grammar
            .intents
            .iter()
            .enumerate()
            .map(|(i, r)| (r.label.as_str(), i))
            .collect();
        Generator {
            grammar,
            exponent,
            roots,
            root_table,
            by_label,
        }
    }

    fn tree(&self, rng: &mut ChaCha8Rng) -> Result<ParseTree, DatagenError> {
        let root = self.roots[self.root_table.sample(rng)];
        let node = self.intent(root, 1, rng)?;
        Ok(ParseTree::new(node).expect("root intents are intents"))
    }

    fn intent(&self, rule: usize, depth: usize, rng: &mut ChaCha8Rng) -> Result<Node, DatagenError> {
        let rule = &self.grammar.intents[rule];
        let template = &rule.templates[rng.gen_range(0..rule.templates.len())];
        let mut children = Vec::with_capacity(template.len());
        for sym in template {
            match sym {
                Symbol::Word(w) => children.push(Child::Token(w.clone())),
                Symbol::Slot(s) => children.push(Child::Node(self.slot(s, depth, rng)?)),
                Symbol::Intent(_) => unreachable!("validated grammar"),
            }
        }
        Ok(Node::intent(&rule.label, children).expect("validated grammar"))
    }

    fn slot(&self, label: &str, depth: usize, rng: &mut ChaCha8Rng) -> Result<Node, DatagenError> {
        let fillers = &self.grammar.slot_fillers[label];
        let allowed: Vec<usize> = (0..fillers.len())
            .filter(|&i| depth < self.grammar.depth_limit || !is_nested(&fillers[i]))
            .collect();
        if allowed.is_empty() {
            return Err(DatagenError::DepthExceeded {
                slot: label.to_string(),
                limit: self.grammar.depth_limit,
            });
        }
        let table = ZipfTable::new(allowed.iter().map(|i| i + 1), self.exponent);
        let filler = &fillers[allowed[table.sample(rng)]];
        let mut children = Vec::with_capacity(filler.len());
        for sym in filler {
            match sym {
                Symbol::Word(w) => children.push(Child::Token(w.clone())),
                Symbol::Intent(i) => {
                    children.push(Child::Node(self.intent(self.by_label[i.as_str()], depth + 1, rng)?))
                }
                Symbol::Slot(_) => unreachable!("validated grammar"),
            }
        }
        Ok(Node::slot(label, children).expect("validated grammar"))
    }
}

/// `n` trees from the seed stream labeled `stream`; ids are `<stream>:<i>`.
pub fn generate_stream(
    grammar: &Grammar,
    config: &GenConfig,
    stream: &str,
    n: usize,
) -> Result<Dataset, DatagenError> {
    grammar.validate()?;
    config.validate()?;
    let gen = Generator::new(grammar, config.tail_exponent);
    let mut rng = seed::rng(seed::derive(config.seed, stream));
    let mut examples = Vec::with_capacity(n);
    for i in 0..n {
        examples.push(Example::from_tree(format!("{stream}:{i}"), gen.tree(&mut rng)?));
    }
    Ok(Dataset::from_examples(examples).expect("ids are unique"))
}

/// Train and test corpora drawn from disjoint seed streams.
pub fn generate(grammar: &Grammar, config: &GenConfig) -> Result<(Dataset, Dataset), DatagenError> {
    Ok((
        generate_stream(grammar, config, "train", config.n_train)?,
        generate_stream(grammar, config, "test", config.n_test)?,
    ))
}

/// Train, dev and test corpora; dev has `config.n_dev` examples.
pub fn generate_corpus(
    grammar: &Grammar,
    config: &GenConfig,
) -> Result<(Dataset, Dataset, Dataset), DatagenError> {
    let (train, test) = generate(grammar, config)?;
    let dev = generate_stream(grammar, config, "dev", config.n_dev)?;
    Ok((train, dev, test))
}

fn rule(label: &str, root: bool, templates: &[&str]) -> IntentRule {
    IntentRule {
        label: label.to_string(),
        root,
        templates: templates
            .iter()
            .map(|t| Symbol::parse_pattern(t).expect("builtin pattern"))
            .collect(),
    }
}

fn fillers(items: &[&str]) -> Vec<Vec<Symbol>> {
    items
        .iter()
        .map(|t| Symbol::parse_pattern(t).expect("builtin filler"))
        .collect()
}

/// The shipped grammar: 12 root intents plus one nested-only intent, 28 slot
/// classes, and one compositional slot (`SL:DESTINATION` can hold an
/// `IN:GET_LOCATION` subtree).
pub fn builtin_grammar() -> Grammar {
    let intents = alloc::vec![
        rule("IN:GET_WEATHER", true, &[
            "what is the weather {SL:DATE}",
            "what is the weather in {SL:LOCATION}",
            "will it be {SL:WEATHER_ATTRIBUTE} {SL:DATE}",
            "is it {SL:WEATHER_ATTRIBUTE} in {SL:LOCATION} {SL:DATE}",
            "weather forecast for {SL:LOCATION}",
        ]),
        rule("IN:PLAY_MUSIC", true, &[
            "play some {SL:MUSIC_GENRE}",
            "play {SL:SONG_NAME} by {SL:ARTIST_NAME}",
            "put on {SL:ARTIST_NAME}",
            "play my {SL:PLAYLIST} playlist",
            "i want to hear {SL:MUSIC_GENRE} by {SL:ARTIST_NAME}",
        ]),
        rule("IN:GET_DIRECTIONS", true, &[
            "directions to {SL:DESTINATION}",
            "how do i get to {SL:DESTINATION} from {SL:SOURCE}",
            "take me to {SL:DESTINATION} by {SL:METHOD_TRAVEL}",
            "best route to {SL:DESTINATION} avoiding {SL:ROAD_CONDITION}",
        ]),
        rule("IN:SET_ALARM", true, &[
            "set an alarm for {SL:TIME}",
            "wake me up at {SL:TIME} {SL:DATE}",
            "alarm at {SL:TIME} every {SL:RECURRENCE}",
        ]),
        rule("IN:GET_EVENT", true, &[
            "what {SL:CATEGORY_EVENT} are on {SL:DATE}",
            "any {SL:CATEGORY_EVENT} in {SL:LOCATION} {SL:DATE}",
            "find {SL:CATEGORY_EVENT} near {SL:LOCATION}",
            "when is the {SL:NAME_EVENT} {SL:CATEGORY_EVENT}",
            "{SL:CATEGORY_EVENT} organized by {SL:ORGANIZER_EVENT} {SL:DATE}",
            "is {SL:ORGANIZER_EVENT} hosting a {SL:CATEGORY_EVENT} in {SL:LOCATION}",
        ]),
        rule("IN:SEND_MESSAGE", true, &[
            "text {SL:CONTACT} that {SL:CONTENT}",
            "send a message to {SL:CONTACT} saying {SL:CONTENT}",
            "tell {SL:CONTACT} {SL:CONTENT}",
        ]),
        rule("IN:CREATE_REMINDER", true, &[
            "remind me to {SL:TODO} {SL:DATE}",
            "remind me {SL:DATE} at {SL:TIME} to {SL:TODO}",
            "set a reminder to {SL:TODO}",
        ]),
        rule("IN:GET_DEPARTURE", true, &[
            "when should i leave for {SL:DESTINATION} to arrive by {SL:TIME_ARRIVAL}",
            "what time do i need to leave to get to {SL:DESTINATION}",
            "when do i leave for {SL:DESTINATION} {SL:DATE}",
        ]),
        rule("IN:BOOK_RESTAURANT", true, &[
            "book a table for {SL:PARTY_SIZE} at {SL:RESTAURANT_NAME} {SL:DATE}",
            "reserve {SL:RESTAURANT_NAME} for {SL:PARTY_SIZE} at {SL:TIME}",
            "find a {SL:CUISINE} place for {SL:PARTY_SIZE}",
        ]),
        rule("IN:GET_INFO_TRAFFIC", true, &[
            "how is traffic on {SL:ROAD}",
            "is there traffic on {SL:ROAD} {SL:DATE}",
            "any accidents near {SL:LOCATION}",
        ]),
        rule("IN:ORDER_FOOD", true, &[
            "order {SL:SERVED_DISH} from {SL:RESTAURANT_NAME}",
            "i want {SL:AMOUNT} {SL:SERVED_DISH}",
            "get me {SL:SERVED_DISH} delivered",
        ]),
        rule("IN:CANCEL", true, &[
            "never mind",
            "cancel that",
            "stop",
            "forget it",
        ]),
        rule("IN:GET_LOCATION", false, &[
            "the nearest {SL:CATEGORY_LOCATION}",
            "my {SL:NAME_EVENT} {SL:CATEGORY_EVENT}",
            "the {SL:CATEGORY_LOCATION} in {SL:LOCATION}",
        ]),
    ];

    let slots: &[(&str, &[&str])] = &[
        ("SL:DATE", &["today", "tomorrow", "this weekend", "on friday", "tonight", "next week", "on monday", "this morning"]),
        ("SL:LOCATION", &["boston", "seattle", "downtown", "chicago", "the city", "austin", "denver", "portland"]),
        ("SL:WEATHER_ATTRIBUTE", &["rainy", "sunny", "cold", "windy", "snowing", "hot"]),
        ("SL:MUSIC_GENRE", &["jazz", "rock", "hip hop", "classical", "country", "blues"]),
        ("SL:SONG_NAME", &["yesterday", "hey jude", "halo", "africa", "thriller", "imagine"]),
        ("SL:ARTIST_NAME", &["the beatles", "adele", "toto", "queen", "miles davis", "prince"]),
        ("SL:PLAYLIST", &["workout", "chill", "road trip", "focus", "party"]),
        ("SL:DESTINATION", &["the airport", "work", "home", "boston", "the mall", "the station", "the stadium", "{IN:GET_LOCATION}"]),
        ("SL:SOURCE", &["home", "work", "the hotel", "downtown", "the office"]),
        ("SL:METHOD_TRAVEL", &["car", "bus", "train", "bike", "walking"]),
        ("SL:ROAD_CONDITION", &["tolls", "highways", "traffic", "construction"]),
        ("SL:TIME", &["7 am", "noon", "6 30", "8 pm", "midnight", "5 am", "9 45"]),
        ("SL:RECURRENCE", &["day", "weekday", "monday", "week"]),
        ("SL:CATEGORY_EVENT", &["concerts", "festivals", "games", "plays", "parties", "appointment", "meetups"]),
        ("SL:NAME_EVENT", &["dentist", "jazz fest", "book club", "team", "doctor", "art walk"]),
        ("SL:ORGANIZER_EVENT", &["the library", "city hall", "the museum", "rotary club", "the university", "st marks church"]),
        ("SL:CONTACT", &["mom", "john", "sarah", "my boss", "dad", "alex"]),
        ("SL:CONTENT", &["i am running late", "see you soon", "call me back", "dinner is ready", "happy birthday", "on my way"]),
        ("SL:TODO", &["buy milk", "call the bank", "pay rent", "water the plants", "pick up laundry", "walk the dog"]),
        ("SL:TIME_ARRIVAL", &["9 am", "noon", "5 pm", "8 30", "10 am"]),
        ("SL:CATEGORY_LOCATION", &["gas station", "pharmacy", "coffee shop", "parking garage", "hospital"]),
        ("SL:PARTY_SIZE", &["two", "four", "six", "three", "eight"]),
        ("SL:RESTAURANT_NAME", &["olive garden", "nobu", "chez panisse", "the diner", "luigis"]),
        ("SL:CUISINE", &["thai", "italian", "mexican", "sushi", "indian"]),
        ("SL:ROAD", &["i 95", "route 9", "the bridge", "main street", "the turnpike"]),
        ("SL:SERVED_DISH", &["pizza", "pad thai", "burritos", "ramen", "tacos", "salad"]),
        ("SL:AMOUNT", &["two", "a dozen", "three", "one"]),
    ];
    let slot_fillers = slots
        .iter()
        .map(|(label, items)| (label.to_string(), fillers(items)))
        .collect();

    Grammar {
        depth_limit: 2,
        intents,
        slot_fillers,
    }
}
