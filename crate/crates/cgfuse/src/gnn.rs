//! Graph experts: message passing over code graphs plus masked node-kind
//! pretraining.
//!
//! Nodes are initialized from content: a terminal averages the (frozen)
//! transformer embeddings of its subtokens, a syntax node uses a learned
//! per-kind embedding. Three layer types share one aggregation core. Every
//! stored edge also acts in reverse, so the three relations become six; a
//! node's neighborhood is the multiset of edge endpoints pointing at it,
//! accumulated in stored-edge order to keep runs bit-reproducible.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::{AstKind, TokenKind, SYNTAX_KINDS};
use crate::graph::{CodeGraph, Relation};
use crate::tensor::{
    accumulate_grads, Adam, AdamConfig, Bound, NodeId, ParamStore, Rng, Tape, Tensor, TensorError,
};
use crate::tokenizer::{self, Vocab};

#[derive(Debug, Error)]
pub enum GnnError {
    #[error("invalid gnn config: {0}")]
    Config(String),
    #[error("graph corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GnnArch {
    Rgcn,
    Sage,
    Gin,
}

impl fmt::Display for GnnArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            GnnArch::Rgcn => "rgcn",
            GnnArch::Sage => "sage",
            GnnArch::Gin => "gin",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub arch: GnnArch,
    pub layers: usize,
    /// Must match the transformer hidden size so fused states line up.
    pub hidden: usize,
    /// SAGE only: aggregate per relation and sum, instead of one pooled mean.
    pub use_relational: bool,
    /// GIN only: self-loop weight (1 + epsilon).
    pub epsilon: f32,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            arch: GnnArch::Gin,
            layers: 1,
            hidden: 128,
            use_relational: true,
            epsilon: 0.0,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<(), GnnError> {
        if !(1..=3).contains(&self.layers) {
            return Err(GnnError::Config(format!("{} layers, supported range is 1-3", self.layers)));
        }
        if self.hidden == 0 {
            return Err(GnnError::Config("hidden must be positive".into()));
        }
        Ok(())
    }
}

/// Classification space for pretraining: one label per syntax kind, then one
/// per terminal token kind.
pub const NUM_NODE_LABELS: usize = SYNTAX_KINDS.len() + 5;

pub fn syntax_label(kind: AstKind) -> usize {
    SYNTAX_KINDS
        .iter()
        .position(|&k| k == kind)
        .unwrap_or_else(|| panic!("{kind:?} is not a syntax kind"))
}

pub fn terminal_label(kind: TokenKind) -> usize {
    let off = match kind {
        TokenKind::Identifier => 0,
        TokenKind::Keyword => 1,
        TokenKind::Literal => 2,
        TokenKind::Operator => 3,
        TokenKind::Punct => 4,
    };
    SYNTAX_KINDS.len() + off
}

/// Label of one graph node, looked up by id in either node list.
pub fn node_label(g: &CodeGraph, node: usize) -> usize {
    if let Ok(i) = g.syntax_nodes.binary_search_by_key(&node, |&(id, _)| id) {
        return syntax_label(g.syntax_nodes[i].1);
    }
    if let Ok(i) = g.terminal_nodes.binary_search_by_key(&node, |&(id, _)| id) {
        return terminal_label(g.terminal_nodes[i].1.kind);
    }
    panic!("node {node} not in graph");
}

/// Fresh `gnn.*` parameters for `cfg`. Weight variance scales with fan-in;
/// each tensor draws from its own name-derived stream.
pub fn init_gnn_params(cfg: &GnnConfig, seed: u64) -> Result<ParamStore, GnnError> {
    cfg.validate()?;
    let rng = Rng::seeded(seed, "gnn.init");
    let mut store = ParamStore::new();
    let h = cfg.hidden;
    let weight = |store: &mut ParamStore, name: String, rows: usize, cols: usize| {
        let std = 1.0 / (rows as f32).sqrt();
        let t = Tensor::randn(vec![rows, cols], std, &mut rng.derive(&name));
        store.insert(name, t);
    };
    weight(&mut store, "gnn.kind_embed".into(), SYNTAX_KINDS.len(), h);
    weight(&mut store, "gnn.mask_embed".into(), 1, h);
    for l in 0..cfg.layers {
        match cfg.arch {
            GnnArch::Rgcn => {
                for r in 0..2 * Relation::COUNT {
                    weight(&mut store, format!("gnn.l{l}.rel{r}.w"), h, h);
                }
                weight(&mut store, format!("gnn.l{l}.self.w"), h, h);
            }
            GnnArch::Sage => {
                weight(&mut store, format!("gnn.l{l}.w"), 2 * h, h);
            }
            GnnArch::Gin => {
                weight(&mut store, format!("gnn.l{l}.mlp.w1"), h, h);
                weight(&mut store, format!("gnn.l{l}.mlp.w2"), h, h);
                store.insert(format!("gnn.l{l}.mlp.b1"), Tensor::zeros(vec![h]));
                store.insert(format!("gnn.l{l}.mlp.b2"), Tensor::zeros(vec![h]));
            }
        }
    }
    weight(&mut store, "gnn.head.w".into(), h, NUM_NODE_LABELS);
    store.insert("gnn.head.b", Tensor::zeros(vec![NUM_NODE_LABELS]));
    Ok(store)
}

/// Initial node features `[node_count, hidden]`. Terminals average the
/// transformer embeddings of their subtokens (`plm.tok_embed`, typically
/// bound frozen here); syntax nodes take their kind embedding; nodes in
/// `masked` get the learned mask embedding instead of any content.
pub fn node_init(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &GnnConfig,
    g: &CodeGraph,
    vocab: &Vocab,
    masked: &BTreeSet<usize>,
) -> Result<NodeId, GnnError> {
    cfg.validate()?;
    let n = g.node_count();
    let mut acc = tape.input(Tensor::zeros(vec![n, cfg.hidden]));

    let kept_syntax: Vec<&(usize, AstKind)> =
        g.syntax_nodes.iter().filter(|(id, _)| !masked.contains(id)).collect();
    if !kept_syntax.is_empty() {
        let kinds: Vec<usize> = kept_syntax.iter().map(|(_, k)| syntax_label(*k)).collect();
        let ids: Vec<usize> = kept_syntax.iter().map(|(id, _)| *id).collect();
        let rows = tape.embedding_lookup(bound.id("gnn.kind_embed"), &kinds)?;
        acc = tape.scatter_add_rows(acc, &ids, rows)?;
    }

    let mut sub_ids = Vec::new();
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    for (id, token) in &g.terminal_nodes {
        if masked.contains(id) {
            continue;
        }
        let subs = tokenizer::encode(&token.text, vocab, false);
        let w = 1.0 / subs.len() as f32;
        for (sid, _) in subs {
            sub_ids.push(sid);
            targets.push(*id);
            weights.push(w);
        }
    }
    if !sub_ids.is_empty() {
        let rows = tape.embedding_lookup(bound.id("plm.tok_embed"), &sub_ids)?;
        let scaled = tape.row_scale(rows, &weights)?;
        acc = tape.scatter_add_rows(acc, &targets, scaled)?;
    }

    if !masked.is_empty() {
        let ids: Vec<usize> = masked.iter().copied().collect();
        let rows = tape.embedding_lookup(bound.id("gnn.mask_embed"), &vec![0; ids.len()])?;
        acc = tape.scatter_add_rows(acc, &ids, rows)?;
    }
    Ok(acc)
}

/// Per effective relation, the (receiver, sender) pairs in stored-edge order:
/// index `2r` reads an edge forward, `2r + 1` reverses it.
fn adjacency(g: &CodeGraph) -> [Vec<(usize, usize)>; 6] {
    let mut rels: [Vec<(usize, usize)>; 6] = Default::default();
    for e in &g.edges {
        rels[2 * e.rel.index()].push((e.src, e.dst));
        rels[2 * e.rel.index() + 1].push((e.dst, e.src));
    }
    rels
}

/// Sum (optionally mean) of sender states per receiver; empty neighborhoods
/// stay zero.
fn neighbor_pool(
    tape: &mut Tape,
    h: NodeId,
    pairs: &[(usize, usize)],
    n: usize,
    normalize: bool,
) -> Result<NodeId, TensorError> {
    let dim = tape.shape(h)[1];
    let zero = tape.input(Tensor::zeros(vec![n, dim]));
    if pairs.is_empty() {
        return Ok(zero);
    }
    let senders: Vec<usize> = pairs.iter().map(|&(_, s)| s).collect();
    let receivers: Vec<usize> = pairs.iter().map(|&(r, _)| r).collect();
    let msgs = tape.embedding_lookup(h, &senders)?;
    let sums = tape.scatter_add_rows(zero, &receivers, msgs)?;
    if !normalize {
        return Ok(sums);
    }
    let mut deg = vec![0.0f32; n];
    for &r in &receivers {
        deg[r] += 1.0;
    }
    let inv: Vec<f32> = deg.iter().map(|&d| if d == 0.0 { 1.0 } else { 1.0 / d }).collect();
    tape.row_scale(sums, &inv)
}

/// Runs `cfg.layers` rounds of message passing from initial states `h0`.
/// Returns all states: index 0 is `h0`, index `l` the output of layer `l`.
pub fn gnn_forward(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &GnnConfig,
    g: &CodeGraph,
    h0: NodeId,
) -> Result<Vec<NodeId>, GnnError> {
    cfg.validate()?;
    let n = g.node_count();
    let rels = adjacency(g);
    let pooled: Vec<(usize, usize)> = rels.iter().flatten().copied().collect();
    let mut states = vec![h0];
    let mut h = h0;
    for l in 0..cfg.layers {
        let next = match cfg.arch {
            GnnArch::Rgcn => {
                let mut acc = tape.matmul(h, bound.id(&format!("gnn.l{l}.self.w")))?;
                for (r, pairs) in rels.iter().enumerate() {
                    if pairs.is_empty() {
                        continue;
                    }
                    let mean = neighbor_pool(tape, h, pairs, n, true)?;
                    let msg = tape.matmul(mean, bound.id(&format!("gnn.l{l}.rel{r}.w")))?;
                    acc = tape.add(acc, msg)?;
                }
                tape.gelu(acc)
            }
            GnnArch::Sage => {
                let agg = if cfg.use_relational {
                    let mut sum: Option<NodeId> = None;
                    for pairs in rels.iter().filter(|p| !p.is_empty()) {
                        let mean = neighbor_pool(tape, h, pairs, n, true)?;
                        sum = Some(match sum {
                            None => mean,
                            Some(s) => tape.add(s, mean)?,
                        });
                    }
                    match sum {
                        Some(s) => s,
                        None => neighbor_pool(tape, h, &[], n, true)?,
                    }
                } else {
                    neighbor_pool(tape, h, &pooled, n, true)?
                };
                let cat = tape.concat(h, agg, 1)?;
                let lin = tape.matmul(cat, bound.id(&format!("gnn.l{l}.w")))?;
                tape.gelu(lin)
            }
            GnnArch::Gin => {
                let sums = neighbor_pool(tape, h, &pooled, n, false)?;
                let scaled = tape.mul_scalar(h, 1.0 + cfg.epsilon);
                let z = tape.add(scaled, sums)?;
                let l1 = tape.matmul(z, bound.id(&format!("gnn.l{l}.mlp.w1")))?;
                let l1 = tape.add(l1, bound.id(&format!("gnn.l{l}.mlp.b1")))?;
                let a = tape.gelu(l1);
                let l2 = tape.matmul(a, bound.id(&format!("gnn.l{l}.mlp.w2")))?;
                tape.add(l2, bound.id(&format!("gnn.l{l}.mlp.b2")))?
            }
        };
        states.push(next);
        h = next;
    }
    Ok(states)
}

/// Node-kind logits `[node_count, NUM_NODE_LABELS]` from final states.
pub fn node_logits(tape: &mut Tape, bound: &Bound, h: NodeId) -> Result<NodeId, GnnError> {
    let lin = tape.matmul(h, bound.id("gnn.head.w"))?;
    Ok(tape.add(lin, bound.id("gnn.head.b"))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f32,
    pub masked_accuracy: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub arch: GnnArch,
    pub layers: usize,
    pub train_graphs: usize,
    pub heldout_graphs: usize,
    pub epochs: Vec<EpochStats>,
    pub final_masked_accuracy: f32,
}

impl fmt::Display for PretrainReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "node-kind pretraining: {} train / {} held-out graphs, {}-{} expert, {} classes",
            self.train_graphs,
            self.heldout_graphs,
            self.arch,
            self.layers,
            NUM_NODE_LABELS
        )?;
        for e in &self.epochs {
            writeln!(
                f,
                "epoch {}: mean loss {:.4}, masked accuracy {:.4}",
                e.epoch, e.mean_loss, e.masked_accuracy
            )?;
        }
        write!(f, "final masked accuracy {:.4}", self.final_masked_accuracy)
    }
}

fn masked_nodes(rng: &mut Rng, n: usize, ratio: f32) -> BTreeSet<usize> {
    let k = ((n as f32 * ratio).round() as usize).clamp(1, n);
    rng.choose_k(n, k).into_iter().collect()
}

fn ignore_unmasked(g: &CodeGraph, masked: &BTreeSet<usize>) -> Vec<usize> {
    (0..g.node_count())
        .map(|v| if masked.contains(&v) { node_label(g, v) } else { usize::MAX })
        .collect()
}

fn masked_accuracy(
    graphs: &[&CodeGraph],
    cfg: &GnnConfig,
    vocab: &Vocab,
    store: &ParamStore,
    seed: u64,
) -> Result<f32, GnnError> {
    let root = Rng::seeded(seed, "gnn.pretrain");
    let (mut hit, mut total) = (0usize, 0usize);
    for (i, g) in graphs.iter().enumerate() {
        if g.node_count() == 0 {
            continue;
        }
        let mut rng = root.derive(&format!("heldout.graph{i}.mask"));
        let masked = masked_nodes(&mut rng, g.node_count(), 0.15);
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let h0 = node_init(&mut tape, &bound, cfg, g, vocab, &masked)?;
        let states = gnn_forward(&mut tape, &bound, cfg, g, h0)?;
        let logits = node_logits(&mut tape, &bound, *states.last().unwrap())?;
        let t = tape.value(logits);
        for &v in &masked {
            let row = t.row(v);
            let mut best = 0;
            for (j, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = j;
                }
            }
            total += 1;
            if best == node_label(g, v) {
                hit += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f32 / total as f32 })
}

/// Masked node-kind pretraining. Every tenth graph is held out; per epoch,
/// each training graph gets a fresh mask and one optimizer step over the
/// `gnn.*` parameters (everything else in `store`, notably `plm.tok_embed`,
/// stays frozen). Bit-reproducible for a fixed seed.
pub fn pretrain_nodes(
    graphs: &[CodeGraph],
    cfg: &GnnConfig,
    vocab: &Vocab,
    store: &mut ParamStore,
    mask_ratio: f32,
    epochs: usize,
    seed: u64,
    opt: &AdamConfig,
) -> Result<PretrainReport, GnnError> {
    cfg.validate()?;
    if graphs.is_empty() {
        return Err(GnnError::EmptyCorpus);
    }
    if !(0.0..=1.0).contains(&mask_ratio) || mask_ratio == 0.0 {
        return Err(GnnError::Config(format!("mask ratio {mask_ratio} outside (0, 1]")));
    }
    let mut train: Vec<&CodeGraph> = Vec::new();
    let mut heldout: Vec<&CodeGraph> = Vec::new();
    for (i, g) in graphs.iter().enumerate() {
        if i % 10 == 9 {
            heldout.push(g);
        } else {
            train.push(g);
        }
    }
    if heldout.is_empty() {
        heldout = train.clone();
    }

    let root = Rng::seeded(seed, "gnn.pretrain");
    let mut adam = Adam::new();
    let mut stats = Vec::new();
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        root.derive(&format!("epoch{epoch}.shuffle")).shuffle(&mut order);
        let mut loss_sum = 0.0f64;
        let mut steps = 0usize;
        for &gi in &order {
            let g = train[gi];
            if g.node_count() == 0 {
                continue;
            }
            let mut rng = root.derive(&format!("epoch{epoch}.graph{gi}.mask"));
            let masked = masked_nodes(&mut rng, g.node_count(), mask_ratio);
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape, |name| name.starts_with("gnn."));
            let h0 = node_init(&mut tape, &bound, cfg, g, vocab, &masked)?;
            let states = gnn_forward(&mut tape, &bound, cfg, g, h0)?;
            let logits = node_logits(&mut tape, &bound, *states.last().unwrap())?;
            let targets = ignore_unmasked(g, &masked);
            let loss = tape.cross_entropy(logits, &targets, Some(usize::MAX))?;
            loss_sum += tape.value(loss).item() as f64;
            steps += 1;
            let grads = tape.backward(loss)?;
            let mut named = BTreeMap::new();
            accumulate_grads(&mut named, bound.named_grads(&grads));
            adam.apply(store, &named, opt);
        }
        let acc = masked_accuracy(&heldout, cfg, vocab, store, seed)?;
        stats.push(EpochStats {
            epoch: epoch + 1,
            mean_loss: if steps == 0 { 0.0 } else { (loss_sum / steps as f64) as f32 },
            masked_accuracy: acc,
        });
    }
    let final_acc = stats.last().map(|s| s.masked_accuracy).unwrap_or(0.0);
    Ok(PretrainReport {
        arch: cfg.arch,
        layers: cfg.layers,
        train_graphs: train.len(),
        heldout_graphs: heldout.len(),
        epochs: stats,
        final_masked_accuracy: final_acc,
    })
}
