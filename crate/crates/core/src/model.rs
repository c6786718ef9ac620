//! Desk-scale reference parser: a feature-hashed tagger that predicts the
//! root intent plus one BIO tag per token, decoded into a depth-2 TOP tree.
//!
//! Parameters are one flat vector with three groups:
//!
//! * `encoder`: hashed-feature embedding `[feature][hidden]` plus bias, shared
//!   by the sentence (intent) and per-token (tag) inputs. Empty when
//!   `hidden_dim == 0`, in which case the heads read the sparse features
//!   directly.
//! * `intent_head`: `[input][intent]` weights plus bias.
//! * `tag_head`: `[input][tag]` weights plus bias.
//!
//! The loss of one example is the intent cross-entropy plus the mean tag
//! cross-entropy over its tokens; a batch loss is the mean over examples.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::regularizers::{
    penalty_into, FisherAccumulator, FreezeMask, Layout, ParamVector, PenaltyForm, RegConfig,
    RegError, RegKind,
};
use crate::sampling::{batches, EpochSampler, SamplerConfig, Segment};
use crate::seed;
use crate::treebank::{Child, Node, NodeKind, ParseTree};

pub const ENCODER: &str = "encoder";
pub const INTENT_HEAD: &str = "intent_head";
pub const TAG_HEAD: &str = "tag_head";
pub const OUTSIDE: &str = "O";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("empty query")]
    EmptyQuery,
    #[error("feature index {index} is outside dimension {dim}")]
    DimMismatch { index: u32, dim: usize },
    #[error("label `{0}` is not in the model vocabulary")]
    UnknownLabel(String),
    #[error("tag count {tags} does not match token count {tokens}")]
    TagCountMismatch { tags: usize, tokens: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Reg(#[from] RegError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of hashed feature buckets.
    pub feature_dim: usize,
    /// Width of the shared encoder; 0 makes the model linear.
    pub hidden_dim: usize,
    /// Half-width of the uniform initializer.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 1 << 12,
            hidden_dim: 0,
            init_scale: 0.1,
        }
    }
}

/// Intent labels and BIO tag labels, in index order. `tags[0]` is `O`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub intents: Vec<String>,
    pub tags: Vec<String>,
}

impl Vocab {
    /// Root intents and top-level slots seen in `datasets`, sorted.
    pub fn from_datasets(datasets: &[&Dataset]) -> Self {
        let mut intents = alloc::collections::BTreeSet::new();
        let mut slots = alloc::collections::BTreeSet::new();
        for ds in datasets {
            for ex in ds.examples() {
                let root = ex.tree.root();
                intents.insert(root.name().to_string());
                for child in root.children() {
                    if let Child::Node(n) = child {
                        slots.insert(n.name().to_string());
                    }
                }
            }
        }
        Vocab::new(intents.into_iter().collect(), slots.into_iter().collect())
    }

    pub fn new(intents: Vec<String>, slots: Vec<String>) -> Self {
        let mut tags = vec![OUTSIDE.to_string()];
        for s in &slots {
            tags.push(format!("B-{s}"));
            tags.push(format!("I-{s}"));
        }
        Vocab { intents, tags }
    }

    pub fn intent_index(&self, label: &str) -> Option<usize> {
        self.intents.iter().position(|l| l == label)
    }

    pub fn tag_index(&self, tag: &str) -> Option<usize> {
        self.tags.iter().position(|l| l == tag)
    }
}

/// Hashed sparse features of a query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Features {
    /// Sentence-level features feeding the intent head.
    pub sentence: Vec<u32>,
    /// Window features per token feeding the tag head.
    pub tokens: Vec<Vec<u32>>,
}

/// Upper bound on feature counts: `2n` sentence features (bias, unigrams,
/// bigrams) and [`TOKEN_FEATURES`] per token.
pub const TOKEN_FEATURES: usize = 8;

const BOS: &str = "<s>";
const EOS: &str = "</s>";

fn bucket(dim: usize, kind: u8, parts: &[&str]) -> u32 {
    let mut h = seed::fnv1a64(&[kind]);
    for p in parts {
        h = seed::fnv1a64_extend(h, &[0x1f]);
        h = seed::fnv1a64_extend(h, p.as_bytes());
    }
    (seed::splitmix64(h) % dim as u64) as u32
}

/// Deterministic hashed unigram, bigram and token-window features.
pub fn featurize(query: &str, dim: usize) -> Result<Features, ModelError> {
    let words: Vec<&str> = query.split_whitespace().collect();
    if words.is_empty() {
        return Err(ModelError::EmptyQuery);
    }
    let at = |i: isize| -> &str {
        if i < 0 {
            BOS
        } else {
            words.get(i as usize).copied().unwrap_or(EOS)
        }
    };
    let mut sentence = vec![bucket(dim, b'S', &[])];
    for (i, w) in words.iter().enumerate() {
        sentence.push(bucket(dim, b'u', &[w]));
        if i + 1 < words.len() {
            sentence.push(bucket(dim, b'b', &[w, words[i + 1]]));
        }
    }
    let tokens = (0..words.len() as isize)
        .map(|i| {
            vec![
                bucket(dim, b'T', &[]),
                bucket(dim, b'w', &[at(i)]),
                bucket(dim, b'p', &[at(i - 1)]),
                bucket(dim, b'n', &[at(i + 1)]),
                bucket(dim, b'P', &[at(i - 2)]),
                bucket(dim, b'N', &[at(i + 2)]),
                bucket(dim, b'l', &[at(i - 1), at(i)]),
                bucket(dim, b'r', &[at(i), at(i + 1)]),
            ]
        })
        .collect();
    Ok(Features { sentence, tokens })
}

#[derive(Debug, Clone, Copy)]
struct Dims {
    hidden: usize,
    intents: usize,
    tags: usize,
    enc_w: usize,
    enc_b: usize,
    int_w: usize,
    int_b: usize,
    tag_w: usize,
    tag_b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub theta: ParamVector,
}

/// Layout for a config and vocabulary.
pub fn layout_for(config: &ModelConfig, vocab: &Vocab) -> Layout {
    let (d, h) = (config.feature_dim, config.hidden_dim);
    let input = if h == 0 { d } else { h };
    let enc = if h == 0 { 0 } else { d * h + h };
    Layout::new(&[
        (ENCODER, enc),
        (INTENT_HEAD, input * vocab.intents.len() + vocab.intents.len()),
        (TAG_HEAD, input * vocab.tags.len() + vocab.tags.len()),
    ])
}

/// Per-token probabilities and the sentence intent distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Distributions {
    pub intent: Vec<f64>,
    pub tags: Vec<Vec<f64>>,
}

struct Activations {
    sentence_hidden: Vec<f64>,
    token_hidden: Vec<Vec<f64>>,
    dist: Distributions,
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

impl TaggerModel {
    /// All-zero parameters.
    pub fn zeros(config: ModelConfig, vocab: Vocab) -> Self {
        let theta = ParamVector::zeros(layout_for(&config, &vocab));
        TaggerModel {
            config,
            vocab,
            theta,
        }
    }

    /// Uniform `±init_scale` weights, zero biases.
    pub fn init(config: ModelConfig, vocab: Vocab, seed: u64) -> Self {
        let mut model = TaggerModel::zeros(config, vocab);
        let d = model.dims();
        let mut rng = seed::rng(seed::derive(seed, "init"));
        let s = config.init_scale;
        if s > 0.0 {
            let ranges = [(d.enc_w, d.enc_b), (d.int_w, d.int_b), (d.tag_w, d.tag_b)];
            for (start, end) in ranges {
                for v in &mut model.theta.values[start..end] {
                    *v = rng.gen_range(-s..=s);
                }
            }
        }
        model
    }

    pub fn layout(&self) -> &Layout {
        &self.theta.layout
    }

    fn dims(&self) -> Dims {
        let (features, hidden) = (self.config.feature_dim, self.config.hidden_dim);
        let input = if hidden == 0 { features } else { hidden };
        let (intents, tags) = (self.vocab.intents.len(), self.vocab.tags.len());
        let layout = &self.theta.layout;
        let enc = layout.group(ENCODER).map_or(0, |g| g.offset);
        let int = layout.group(INTENT_HEAD).map_or(0, |g| g.offset);
        let tag = layout.group(TAG_HEAD).map_or(0, |g| g.offset);
        Dims {
            hidden,
            intents,
            tags,
            enc_w: enc,
            enc_b: enc + features * hidden,
            int_w: int,
            int_b: int + input * intents,
            tag_w: tag,
            tag_b: tag + input * tags,
        }
    }

    fn check_features(&self, features: &Features) -> Result<(), ModelError> {
        let dim = self.config.feature_dim;
        match features
            .sentence
            .iter()
            .chain(features.tokens.iter().flatten())
            .find(|&&f| f as usize >= dim)
        {
            Some(&index) => Err(ModelError::DimMismatch { index, dim }),
            None => Ok(()),
        }
    }

    fn hidden(&self, theta: &[f64], d: &Dims, feats: &[u32]) -> Vec<f64> {
        let mut h = theta[d.enc_b..d.enc_b + d.hidden].to_vec();
        for &f in feats {
            let row = d.enc_w + f as usize * d.hidden;
            for (hj, w) in h.iter_mut().zip(&theta[row..row + d.hidden]) {
                *hj += w;
            }
        }
        for v in h.iter_mut() {
            *v = libm::tanh(*v);
        }
        h
    }

    fn head(
        theta: &[f64],
        w: usize,
        b: usize,
        classes: usize,
        sparse: &[u32],
        dense: &[f64],
    ) -> Vec<f64> {
        let mut z = theta[b..b + classes].to_vec();
        if dense.is_empty() {
            for &f in sparse {
                let row = w + f as usize * classes;
                for (zk, wk) in z.iter_mut().zip(&theta[row..row + classes]) {
                    *zk += wk;
                }
            }
        } else {
            for (j, hj) in dense.iter().enumerate() {
                let row = w + j * classes;
                for (zk, wk) in z.iter_mut().zip(&theta[row..row + classes]) {
                    *zk += hj * wk;
                }
            }
        }
        softmax_in_place(&mut z);
        z
    }

    fn activations(&self, theta: &[f64], features: &Features) -> Activations {
        let d = self.dims();
        let linear = d.hidden == 0;
        let sentence_hidden = if linear {
            Vec::new()
        } else {
            self.hidden(theta, &d, &features.sentence)
        };
        let intent = Self::head(theta, d.int_w, d.int_b, d.intents, &features.sentence, &sentence_hidden);
        let mut token_hidden = Vec::with_capacity(features.tokens.len());
        let mut tags = Vec::with_capacity(features.tokens.len());
        for tf in &features.tokens {
            let h = if linear { Vec::new() } else { self.hidden(theta, &d, tf) };
            tags.push(Self::head(theta, d.tag_w, d.tag_b, d.tags, tf, &h));
            token_hidden.push(h);
        }
        Activations {
            sentence_hidden,
            token_hidden,
            dist: Distributions { intent, tags },
        }
    }

    pub fn forward(&self, features: &Features) -> Result<Distributions, ModelError> {
        self.check_features(features)?;
        Ok(self.activations(&self.theta.values, features).dist)
    }

    /// Adds `scale · ∂(cross-entropy)/∂θ` of one head into `grad`, returning
    /// the gradient with respect to the head input when it is dense.
    #[allow(clippy::too_many_arguments)]
    fn head_backward(
        theta: &[f64],
        grad: &mut [f64],
        w: usize,
        b: usize,
        probs: &[f64],
        gold: usize,
        scale: f64,
        sparse: &[u32],
        dense: &[f64],
    ) -> Vec<f64> {
        let classes = probs.len();
        let dz: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(k, p)| scale * (p - if k == gold { 1.0 } else { 0.0 }))
            .collect();
        for (g, v) in grad[b..b + classes].iter_mut().zip(&dz) {
            *g += v;
        }
        if dense.is_empty() {
            for &f in sparse {
                let row = w + f as usize * classes;
                for (g, v) in grad[row..row + classes].iter_mut().zip(&dz) {
                    *g += v;
                }
            }
            Vec::new()
        } else {
            let mut dh = vec![0.0; dense.len()];
            for (j, hj) in dense.iter().enumerate() {
                let row = w + j * classes;
                let mut acc = 0.0;
                for k in 0..classes {
                    grad[row + k] += hj * dz[k];
                    acc += theta[row + k] * dz[k];
                }
                dh[j] = acc;
            }
            dh
        }
    }

    fn encoder_backward(grad: &mut [f64], d: &Dims, feats: &[u32], h: &[f64], dh: &[f64]) {
        let dpre: Vec<f64> = h.iter().zip(dh).map(|(hj, g)| g * (1.0 - hj * hj)).collect();
        for (g, v) in grad[d.enc_b..d.enc_b + d.hidden].iter_mut().zip(&dpre) {
            *g += v;
        }
        for &f in feats {
            let row = d.enc_w + f as usize * d.hidden;
            for (g, v) in grad[row..row + d.hidden].iter_mut().zip(&dpre) {
                *g += v;
            }
        }
    }

    /// Loss of one encoded example; adds `scale ·` its gradient into `grad`.
    fn example_loss_grad(&self, theta: &[f64], ex: &Encoded, scale: f64, grad: &mut [f64]) -> f64 {
        let d = self.dims();
        let act = self.activations(theta, &ex.features);
        let mut loss = -libm::log(act.dist.intent[ex.intent].max(f64::MIN_POSITIVE));
        let dh = Self::head_backward(
            theta,
            grad,
            d.int_w,
            d.int_b,
            &act.dist.intent,
            ex.intent,
            scale,
            &ex.features.sentence,
            &act.sentence_hidden,
        );
        if d.hidden > 0 {
            Self::encoder_backward(grad, &d, &ex.features.sentence, &act.sentence_hidden, &dh);
        }
        let n = ex.tags.len() as f64;
        for (t, &gold) in ex.tags.iter().enumerate() {
            loss += -libm::log(act.dist.tags[t][gold].max(f64::MIN_POSITIVE)) / n;
            let dh = Self::head_backward(
                theta,
                grad,
                d.tag_w,
                d.tag_b,
                &act.dist.tags[t],
                gold,
                scale / n,
                &ex.features.tokens[t],
                &act.token_hidden[t],
            );
            if d.hidden > 0 {
                Self::encoder_backward(grad, &d, &ex.features.tokens[t], &act.token_hidden[t], &dh);
            }
        }
        loss
    }

    /// Mean data loss over `batch`; writes the mean gradient into `grad`.
    pub fn data_loss_grad(&self, batch: &[&Encoded], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        if batch.is_empty() {
            return 0.0;
        }
        let scale = 1.0 / batch.len() as f64;
        batch
            .iter()
            .map(|ex| self.example_loss_grad(&self.theta.values, ex, scale, grad))
            .sum::<f64>()
            * scale
    }

    /// Mean data loss over `batch` at parameters `theta`, without gradients.
    pub fn data_loss_at(&self, theta: &[f64], batch: &[&Encoded]) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for ex in batch {
            let act = self.activations(theta, &ex.features);
            total += -libm::log(act.dist.intent[ex.intent].max(f64::MIN_POSITIVE));
            let n = ex.tags.len() as f64;
            for (t, &gold) in ex.tags.iter().enumerate() {
                total += -libm::log(act.dist.tags[t][gold].max(f64::MIN_POSITIVE)) / n;
            }
        }
        total / batch.len() as f64
    }

    /// Encodes a gold example into features and training targets.
    pub fn encode(&self, query: &str, tree: &ParseTree) -> Result<Encoded, ModelError> {
        let features = featurize(query, self.config.feature_dim)?;
        let intent = self
            .vocab
            .intent_index(tree.root().name())
            .ok_or_else(|| ModelError::UnknownLabel(tree.root().name().to_string()))?;
        let tags = tree_tags(tree)
            .iter()
            .map(|t| {
                self.vocab
                    .tag_index(t)
                    .ok_or_else(|| ModelError::UnknownLabel(t.clone()))
            })
            .collect::<Result<Vec<usize>, _>>()?;
        if tags.len() != features.tokens.len() {
            return Err(ModelError::TagCountMismatch {
                tags: tags.len(),
                tokens: features.tokens.len(),
            });
        }
        Ok(Encoded {
            features,
            intent,
            tags,
            tree: tree.clone(),
        })
    }

    /// Encodes an example for evaluation only: labels the vocabulary lacks
    /// are allowed, and the training targets are left as index 0.
    pub fn encode_eval(&self, query: &str, tree: &ParseTree) -> Result<Encoded, ModelError> {
        let features = featurize(query, self.config.feature_dim)?;
        let tags = alloc::vec![0; features.tokens.len()];
        Ok(Encoded {
            features,
            intent: 0,
            tags,
            tree: tree.clone(),
        })
    }

    pub fn encode_dataset(&self, ds: &Dataset) -> Result<Vec<Encoded>, ModelError> {
        ds.examples()
            .iter()
            .map(|e| self.encode(&e.query, &e.tree))
            .collect()
    }

    pub fn predict_features(&self, query: &str, features: &Features) -> Result<ParseTree, ModelError> {
        let dist = self.forward(features)?;
        let intent = &self.vocab.intents[argmax(&dist.intent)];
        let tags: Vec<&str> = dist.tags.iter().map(|p| self.vocab.tags[argmax(p)].as_str()).collect();
        let tokens: Vec<&str> = query.split_whitespace().collect();
        decode_tree(&tokens, intent, &tags)
    }

    pub fn predict(&self, query: &str) -> Result<ParseTree, ModelError> {
        let features = featurize(query, self.config.feature_dim)?;
        self.predict_features(query, &features)
    }
}

/// One training or evaluation example, pre-featurized.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub features: Features,
    pub intent: usize,
    pub tags: Vec<usize>,
    pub tree: ParseTree,
}

impl Encoded {
    pub fn query(&self) -> String {
        self.tree.tokens().join(" ")
    }
}

fn push_slot_tags(node: &Node, label: &str, out: &mut Vec<String>, first: &mut bool) {
    for child in node.children() {
        match child {
            Child::Token(_) => {
                out.push(format!("{}-{label}", if *first { "B" } else { "I" }));
                *first = false;
            }
            Child::Node(n) => push_slot_tags(n, label, out, first),
        }
    }
}

/// BIO tags of a gold tree, flattened to its top-level slots: every token
/// under a top-level slot (including tokens of nested intents) carries that
/// slot's tag.
pub fn tree_tags(tree: &ParseTree) -> Vec<String> {
    let mut out = Vec::new();
    for child in tree.root().children() {
        match child {
            Child::Token(_) => out.push(OUTSIDE.to_string()),
            Child::Node(n) => {
                let mut first = true;
                push_slot_tags(n, n.name(), &mut out, &mut first);
            }
        }
    }
    out
}

/// Builds `[IN:<intent> ...]` where each maximal `B-X I-X*` run becomes
/// `[SL:X ... ]`. An `I-X` that does not continue an `X` run opens a new
/// slot, and malformed tags are treated as `O`.
pub fn decode_tree(tokens: &[&str], intent: &str, tags: &[&str]) -> Result<ParseTree, ModelError> {
    if tokens.len() != tags.len() {
        return Err(ModelError::TagCountMismatch {
            tags: tags.len(),
            tokens: tokens.len(),
        });
    }
    let mut children: Vec<Child> = Vec::new();
    let mut open: Option<(String, Vec<Child>)> = None;
    let close = |open: &mut Option<(String, Vec<Child>)>, children: &mut Vec<Child>| {
        if let Some((label, toks)) = open.take() {
            children.push(Child::Node(
                Node::slot(&label, toks).map_err(|_| ModelError::UnknownLabel(label.clone()))?,
            ));
        }
        Ok::<(), ModelError>(())
    };
    for (tok, tag) in tokens.iter().zip(tags) {
        let token = Child::Token(tok.to_string());
        let parsed = tag
            .strip_prefix("B-")
            .map(|l| (true, l))
            .or_else(|| tag.strip_prefix("I-").map(|l| (false, l)))
            .filter(|(_, l)| l.starts_with("SL:"));
        match parsed {
            Some((false, label)) if open.as_ref().is_some_and(|(l, _)| l == label) => {
                open.as_mut().expect("checked").1.push(token);
            }
            Some((_, label)) => {
                close(&mut open, &mut children)?;
                open = Some((label.to_string(), vec![token]));
            }
            None => {
                close(&mut open, &mut children)?;
                children.push(token);
            }
        }
    }
    close(&mut open, &mut children)?;
    let root = Node::intent(intent, children).map_err(|_| ModelError::UnknownLabel(intent.to_string()))?;
    debug_assert_eq!(root.kind(), NodeKind::Intent);
    Ok(ParseTree::new(root).expect("intent root"))
}

/// Loss, data gradient and total gradient for a batch under a penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub data_loss: f64,
    pub penalty: f64,
    pub data_grad: Vec<f64>,
    pub grad: Vec<f64>,
}

/// What the penalty anchors to: previous weights and, for EWC, the Fisher
/// estimate of the previous run.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub theta_prev: Vec<f64>,
    pub fisher: Option<Vec<f64>>,
}

impl Anchor {
    pub fn from_checkpoint(prev: &Checkpoint) -> Self {
        Anchor {
            theta_prev: prev.model.theta.values.clone(),
            fisher: (prev.fisher.steps > 0).then(|| prev.fisher.fisher()),
        }
    }
}

pub fn loss_and_grad(
    model: &TaggerModel,
    batch: &[&Encoded],
    reg: &RegConfig,
    anchor: Option<&Anchor>,
) -> Result<LossGrad, ModelError> {
    let mut data_grad = vec![0.0; model.theta.len()];
    let data_loss = model.data_loss_grad(batch, &mut data_grad);
    let mut grad = data_grad.clone();
    let penalty = match (reg.kind, anchor) {
        (RegKind::None, _) => 0.0,
        (_, None) => return Err(ModelError::InvalidConfig("penalty needs an anchor".into())),
        (_, Some(a)) => penalty_into(
            &model.theta.values,
            &a.theta_prev,
            a.fisher.as_deref(),
            reg,
            &mut grad,
        )?,
    };
    Ok(LossGrad {
        loss: data_loss + penalty,
        data_loss,
        penalty,
        data_grad,
        grad,
    })
}

/// Dev-set record kept in the checkpoint history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub dev_exact_match: f64,
}

/// Model state plus the Fisher accumulator and training step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: TaggerModel,
    pub fisher: FisherAccumulator,
    pub step: u64,
    pub config_digest: String,
    pub history: Vec<EvalRecord>,
}

impl Checkpoint {
    pub fn fresh(model: TaggerModel) -> Self {
        let n = model.theta.len();
        Checkpoint {
            model,
            fisher: FisherAccumulator::new(n),
            step: 0,
            config_digest: String::new(),
            history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Cap on steps taken in this run (not counting restored steps).
    #[serde(default)]
    pub max_steps: Option<u64>,
    pub eval_every: u64,
    /// Evaluations without dev-EM improvement before stopping.
    pub patience: usize,
    #[serde(default)]
    pub reg: RegConfig,
    #[serde(default)]
    pub freeze: FreezeMask,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            batch_size: 32,
            max_epochs: 100,
            max_steps: None,
            eval_every: 200,
            patience: 10,
            reg: RegConfig::none(),
            freeze: FreezeMask::none(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if !self.lr.is_finite() || self.lr < 0.0 {
            return bad("lr must be a finite value >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        self.reg.validate()?;
        Ok(())
    }
}

/// Training data for one run: the old segment, the new segment, and how
/// epochs mix them. A from-scratch run puts everything in `new` with `p = 0`.
pub struct TrainData<'a> {
    pub old: &'a [Encoded],
    pub new: &'a [Encoded],
    pub sampler: SamplerConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Snapshot with the best dev EM (earliest on ties).
    pub best: Checkpoint,
    /// Steps taken in this run.
    pub steps: u64,
    pub stopped_early: bool,
}

/// Exact match of `model` on pre-encoded examples.
pub fn exact_match_encoded(model: &TaggerModel, examples: &[Encoded]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let hits = examples
        .iter()
        .filter(|e| {
            model
                .predict_features(&e.query(), &e.features)
                .is_ok_and(|p| p == e.tree)
        })
        .count();
    hits as f64 / examples.len() as f64
}

/// One SGD step. Squared-form penalties are applied implicitly: each
/// coordinate moves to `(θ − lr·g + c·θ_prev) / (1 + c)` with
/// `c = 2·lr·λ·w`, which stays stable for any λ. Norm-form penalties use an
/// explicit gradient step. Frozen coordinates never change.
fn sgd_step(
    theta: &mut [f64],
    data_grad: &[f64],
    lr: f64,
    reg: &RegConfig,
    anchor: Option<&Anchor>,
    frozen: &[bool],
) -> Result<(), ModelError> {
    match (reg.kind, anchor) {
        (RegKind::None, _) => {
            for i in 0..theta.len() {
                if !frozen[i] {
                    theta[i] -= lr * data_grad[i];
                }
            }
        }
        (_, None) => return Err(ModelError::InvalidConfig("penalty needs an anchor".into())),
        (_, Some(a)) if reg.form == PenaltyForm::Squared => {
            let w = reg.weights(a.fisher.as_deref())?;
            for i in 0..theta.len() {
                if frozen[i] {
                    continue;
                }
                let c = 2.0 * lr * reg.lambda * w.as_ref().map_or(1.0, |w| w.at(i));
                theta[i] = (theta[i] - lr * data_grad[i] + c * a.theta_prev[i]) / (1.0 + c);
            }
        }
        (_, Some(a)) => {
            let mut pen = vec![0.0; theta.len()];
            penalty_into(theta, &a.theta_prev, a.fisher.as_deref(), reg, &mut pen)?;
            for i in 0..theta.len() {
                if !frozen[i] {
                    theta[i] -= lr * (data_grad[i] + pen[i]);
                }
            }
        }
    }
    Ok(())
}

/// Mini-batch SGD from `start`, evaluating dev EM every `eval_every` steps
/// (and after the last step) with early stopping. The Fisher accumulator
/// receives the task-loss gradient of every step. `on_eval` sees the model
/// and this run's step count at each evaluation.
pub fn train<F>(
    start: Checkpoint,
    data: &TrainData<'_>,
    dev: &[Encoded],
    config: &TrainConfig,
    anchor: Option<&Anchor>,
    mut on_eval: F,
) -> Result<TrainOutcome, ModelError>
where
    F: FnMut(u64, &TaggerModel),
{
    config.validate()?;
    data.sampler
        .validate()
        .map_err(|m| ModelError::InvalidConfig(m.to_string()))?;
    config.freeze.check(start.model.layout())?;
    if config.reg.kind == RegKind::Ewc && anchor.is_none_or(|a| a.fisher.is_none()) {
        return Err(RegError::MissingFisher.into());
    }
    if let Some(a) = anchor {
        if a.theta_prev.len() != start.model.theta.len()
            || a.fisher.as_ref().is_some_and(|f| f.len() != start.model.theta.len())
        {
            return Err(RegError::LayoutMismatch.into());
        }
    }
    let frozen = config.freeze.coordinate_mask(start.model.layout());
    let sampler = EpochSampler::new(data.old.len(), data.new.len(), data.sampler);

    let mut current = start;
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut since_best = 0;
    let mut steps: u64 = 0;
    let mut stopped_early = false;
    let mut last_eval_step: Option<u64> = None;
    let mut grad = vec![0.0; current.model.theta.len()];

    let mut evaluate = |current: &mut Checkpoint, steps: u64, best: &mut Option<(f64, Checkpoint)>| {
        let em = exact_match_encoded(&current.model, dev);
        current.history.push(EvalRecord {
            step: current.step,
            dev_exact_match: em,
        });
        on_eval(steps, &current.model);
        let improved = best.as_ref().is_none_or(|(b, _)| em > *b);
        if improved {
            *best = Some((em, current.clone()));
        }
        improved
    };

    'epochs: for epoch in 0..config.max_epochs as u64 {
        let plan = sampler.plan(epoch);
        for batch in batches(&plan, config.batch_size) {
            if config.max_steps.is_some_and(|m| steps >= m) {
                break 'epochs;
            }
            let examples: Vec<&Encoded> = batch
                .iter()
                .map(|e| match e.segment {
                    Segment::Old => &data.old[e.index],
                    Segment::New => &data.new[e.index],
                })
                .collect();
            current.model.data_loss_grad(&examples, &mut grad);
            current.fisher.update(&grad)?;
            sgd_step(
                &mut current.model.theta.values,
                &grad,
                config.lr,
                &config.reg,
                anchor,
                &frozen,
            )?;
            current.step += 1;
            steps += 1;
            if steps.is_multiple_of(config.eval_every) {
                last_eval_step = Some(steps);
                if evaluate(&mut current, steps, &mut best) {
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= config.patience {
                        stopped_early = true;
                        break 'epochs;
                    }
                }
            }
        }
    }
    if last_eval_step != Some(steps) {
        evaluate(&mut current, steps, &mut best);
    }
    let (_, mut best) = best.expect("at least one evaluation");
    best.history = current.history;
    Ok(TrainOutcome {
        best,
        steps,
        stopped_early,
    })
}

/// Gradient-free summary of where each group's parameters moved.
pub fn group_displacement(a: &ParamVector, b: &ParamVector) -> BTreeMap<String, f64> {
    a.layout
        .groups()
        .iter()
        .map(|g| {
            let d: f64 = (g.offset..g.offset + g.len)
                .map(|i| (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]))
                .sum();
            (g.name.clone(), libm::sqrt(d))
        })
        .collect()
}
