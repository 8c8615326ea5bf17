//! Fusing GNN node representations into the transformer decoder.
//!
//! The graph expert runs over a code graph, each terminal's final state is
//! scattered (scaled by lambda) onto the decoder positions aligned with that
//! terminal's subtokens, and the result is added to the hidden states at the
//! configured hook sites. Everything rides the existing hook mechanism, so
//! lambda = 0 literally adds nothing: no extra tape nodes, bitwise-identical
//! states.
//!
//! Two visibility modes: `GoldFullGraph` fuses the complete target graph at
//! every position (training and teacher-forced evaluation only, since it sees
//! the whole target). `CausalPrefix` gives position `t` only the subgraph of
//! terminals that are fully visible among inputs `..=t`, each contributing at
//! its last subtoken's position; during free decoding the graph is rebuilt
//! from the tolerant parse of the partial hypothesis instead.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::parse_source;
use crate::gnn::{gnn_forward, node_init, GnnConfig, GnnError};
use crate::graph::{align_terminals, build_code_graph, context_subgraph, CodeGraph, GraphError, TerminalAlignment};
use crate::plm::{
    decode_train, encode, generate, DecodeMode, HookSet, HookSite, PlmConfig, PlmError,
};
use crate::tensor::{
    accumulate_grads, scale_grads, Adam, AdamConfig, Bound, NodeId, ParamStore, Rng, Tape,
    Tensor,
    TensorError,
};
use crate::tokenizer::{self, Vocab, BOS, EOS};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("invalid fusion plan: {0}")]
    Config(String),
    #[error("alignment reaches position {position} in a {len}-position sequence")]
    Alignment { position: usize, len: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Plm(#[from] PlmError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionMode {
    /// Full target graph visible at every decoder position.
    GoldFullGraph,
    /// Position `t` sees only terminals completed by input `t`.
    CausalPrefix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionPlan {
    /// Fusion strength; 0 reproduces the plain model exactly.
    pub lambda: f32,
    /// Decoder sites receiving the graph signal.
    pub sites: Vec<HookSite>,
    pub gnn: GnnConfig,
    pub mode: FusionMode,
    /// Leading epochs where only `gnn.*` parameters update.
    pub warmup_epochs: usize,
    /// Generation-time graph refresh period, in decoding steps.
    pub stride: usize,
}

impl FusionPlan {
    /// Defaults: full strength at the last decoder layer, gold visibility,
    /// two warmup epochs, refresh every step.
    pub fn new(gnn: GnnConfig, plm: &PlmConfig) -> Self {
        FusionPlan {
            lambda: 1.0,
            sites: vec![HookSite::DecoderLayerOut(plm.dec_layers.saturating_sub(1))],
            gnn,
            mode: FusionMode::GoldFullGraph,
            warmup_epochs: 2,
            stride: 1,
        }
    }

    pub fn validate(&self, plm: &PlmConfig) -> Result<(), FusionError> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(FusionError::Config(format!("lambda {} not in [0, inf)", self.lambda)));
        }
        if self.stride == 0 {
            return Err(FusionError::Config("stride must be at least 1".into()));
        }
        if self.lambda > 0.0 && self.sites.is_empty() {
            return Err(FusionError::Config("positive lambda with no fusion sites".into()));
        }
        if self.gnn.hidden != plm.hidden {
            return Err(FusionError::Config(format!(
                "expert width {} must match transformer width {}; node seeding and the \
                 state addition both assume it",
                self.gnn.hidden, plm.hidden
            )));
        }
        let mut seen = Vec::new();
        for site in &self.sites {
            match *site {
                HookSite::DecoderLayerOut(i) if i < plm.dec_layers => {}
                HookSite::DecoderLayerOut(i) => {
                    return Err(FusionError::Config(format!(
                        "site at decoder layer {i}, model has {}",
                        plm.dec_layers
                    )))
                }
                HookSite::EncoderLayerOut(_) => {
                    return Err(FusionError::Config(
                        "graph alignment covers target positions; encoder sites are unsupported"
                            .into(),
                    ))
                }
            }
            if seen.contains(site) {
                return Err(FusionError::Config(format!("duplicate site {site:?}")));
            }
            seen.push(*site);
        }
        self.gnn.validate()?;
        Ok(())
    }
}

/// One prepared training/eval pair. `graph` pairs the target's code graph
/// with its terminal-to-subtoken alignment in target coordinates; `None`
/// (an entry that failed graph extraction) trains and evaluates with no
/// graph signal at all.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedExample {
    pub id: String,
    pub nl_ids: Vec<usize>,
    pub code_ids: Vec<usize>,
    pub graph: Option<(CodeGraph, TerminalAlignment)>,
}

/// Moves a target-coordinate alignment into decoder-input coordinates: BOS
/// occupies position 0, so target position `p` becomes `p + 1`. Spans sliding
/// past `input_len` are clipped (and dropped once empty).
pub fn shift_for_decoder_input(align: &TerminalAlignment, input_len: usize) -> TerminalAlignment {
    let mut spans = BTreeMap::new();
    for (&tid, &(s, e)) in &align.spans {
        let (s, e) = (s + 1, (e + 1).min(input_len));
        if s < e {
            spans.insert(tid, (s, e));
        }
    }
    TerminalAlignment { spans }
}

fn check_spans(align: &TerminalAlignment, seq_len: usize) -> Result<(), FusionError> {
    for (&_, &(_, e)) in &align.spans {
        if e > seq_len {
            return Err(FusionError::Alignment { position: e, len: seq_len });
        }
    }
    Ok(())
}

/// Runs the expert over `g` and scatters final terminal states onto their
/// aligned positions, scaled by lambda. `None` means "identically zero"
/// (lambda = 0, empty graph, or nothing aligned), so callers skip the add and
/// keep bitwise identity.
pub fn graph_contribution(
    tape: &mut Tape,
    bound: &Bound,
    plan: &FusionPlan,
    g: &CodeGraph,
    vocab: &Vocab,
    align: &TerminalAlignment,
    seq_len: usize,
) -> Result<Option<NodeId>, FusionError> {
    if plan.lambda == 0.0 || g.node_count() == 0 || align.spans.is_empty() {
        return Ok(None);
    }
    check_spans(align, seq_len)?;
    let h0 = node_init(tape, bound, &plan.gnn, g, vocab, &Default::default())?;
    let states = gnn_forward(tape, bound, &plan.gnn, g, h0)?;
    let last = *states.last().unwrap();
    let mut nodes = Vec::new();
    let mut positions = Vec::new();
    for (&tid, &(s, e)) in &align.spans {
        for p in s..e {
            nodes.push(tid);
            positions.push(p);
        }
    }
    let rows = tape.embedding_lookup(last, &nodes)?;
    let base = tape.input(Tensor::zeros(vec![seq_len, plan.gnn.hidden]));
    let scattered = tape.scatter_add_rows(base, &positions, rows)?;
    Ok(Some(tape.mul_scalar(scattered, plan.lambda)))
}

/// `CausalPrefix` analog of [`graph_contribution`]: terminal `j` contributes
/// only at its last subtoken's input position, computed from the subgraph of
/// the first `j + 1` terminals, so no position carries information from
/// terminals it has not fully seen.
fn causal_contribution(
    tape: &mut Tape,
    bound: &Bound,
    plan: &FusionPlan,
    g: &CodeGraph,
    vocab: &Vocab,
    align: &TerminalAlignment,
    input_len: usize,
) -> Result<Option<NodeId>, FusionError> {
    if plan.lambda == 0.0 || g.node_count() == 0 || align.spans.is_empty() {
        return Ok(None);
    }
    let mut acc: Option<NodeId> = None;
    for (j, (tid, _)) in g.terminal_nodes.iter().enumerate() {
        let Some((_, end)) = align.span_of(*tid) else { continue };
        let position = end; // target index end-1, shifted right by BOS
        if position >= input_len {
            continue;
        }
        let sub = context_subgraph(g, j + 1);
        let sub_tid = sub.terminal_nodes[j].0;
        let h0 = node_init(tape, bound, &plan.gnn, &sub, vocab, &Default::default())?;
        let states = gnn_forward(tape, bound, &plan.gnn, &sub, h0)?;
        let rows = tape.embedding_lookup(*states.last().unwrap(), &[sub_tid])?;
        let base = tape.input(Tensor::zeros(vec![input_len, plan.gnn.hidden]));
        let scattered = tape.scatter_add_rows(base, &[position], rows)?;
        acc = Some(match acc {
            None => scattered,
            Some(a) => tape.add(a, scattered)?,
        });
    }
    Ok(acc.map(|a| tape.mul_scalar(a, plan.lambda)))
}

/// Adds the graph signal to hidden states `h` (alignment already in `h`'s
/// coordinates). Lambda = 0 and empty graphs return `h` unchanged.
pub fn fuse_states(
    tape: &mut Tape,
    bound: &Bound,
    plan: &FusionPlan,
    h: NodeId,
    g: &CodeGraph,
    vocab: &Vocab,
    align: &TerminalAlignment,
) -> Result<NodeId, FusionError> {
    let seq_len = tape.shape(h)[0];
    match graph_contribution(tape, bound, plan, g, vocab, align, seq_len)? {
        None => Ok(h),
        Some(c) => Ok(tape.add(h, c)?),
    }
}

/// Builds the hook set for one teacher-forced decoder pass: the mode-specific
/// contribution, added at every configured site.
pub fn decoder_hooks(
    tape: &mut Tape,
    bound: &Bound,
    plan: &FusionPlan,
    g: &CodeGraph,
    vocab: &Vocab,
    align: &TerminalAlignment,
    input_len: usize,
) -> Result<HookSet<'static>, FusionError> {
    let contribution = match plan.mode {
        FusionMode::GoldFullGraph => {
            let shifted = shift_for_decoder_input(align, input_len);
            graph_contribution(tape, bound, plan, g, vocab, &shifted, input_len)?
        }
        FusionMode::CausalPrefix => {
            causal_contribution(tape, bound, plan, g, vocab, align, input_len)?
        }
    };
    let mut hooks = HookSet::new();
    if let Some(c) = contribution {
        for &site in &plan.sites {
            hooks.insert(site, Box::new(move |tape, h, _| tape.add(h, c)))?;
        }
    }
    Ok(hooks)
}

fn shifted_pair(code_ids: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut input = Vec::with_capacity(code_ids.len() + 1);
    input.push(BOS);
    input.extend_from_slice(code_ids);
    let mut labels = code_ids.to_vec();
    labels.push(EOS);
    (input, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub phase: Phase,
    pub epoch: usize,
    pub mean_loss: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Joint,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Warmup => "warmup",
            Phase::Joint => "joint",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedTrainStats {
    pub epochs: Vec<EpochLoss>,
}

impl fmt::Display for FusedTrainStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.epochs.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{} epoch {}: mean loss {:.4}", e.phase, e.epoch, e.mean_loss)?;
        }
        Ok(())
    }
}

/// Sequence-to-sequence training with the graph signal in the decoder.
///
/// Warmup epochs (from the plan) update only `gnn.*` parameters; the
/// transformer stays bit-frozen, and its optimizer slots are never advanced.
/// The following `joint_epochs` train everything. Joint-phase random streams
/// are named from epoch 0 independent of warmup length, so a lambda = 0 run
/// reproduces a plain baseline exactly, parameter for parameter.
#[allow(clippy::too_many_arguments)]
pub fn fused_train(
    examples: &[FusedExample],
    store: &mut ParamStore,
    plm_cfg: &PlmConfig,
    plan: &FusionPlan,
    vocab: &Vocab,
    joint_epochs: usize,
    seed: u64,
    opt: &AdamConfig,
    batch: usize,
) -> Result<FusedTrainStats, FusionError> {
    plan.validate(plm_cfg)?;
    plm_cfg.validate()?;
    if batch == 0 {
        return Err(FusionError::Config("batch must be at least 1".into()));
    }
    let root = Rng::seeded(seed, "fused.train");
    let mut adam = Adam::new();
    let mut stats = Vec::new();
    let phases = [(Phase::Warmup, plan.warmup_epochs), (Phase::Joint, joint_epochs)];
    for (phase, count) in phases {
        for epoch in 0..count {
            let mut order: Vec<usize> = (0..examples.len()).collect();
            root.derive(&format!("{phase}.epoch{epoch}.shuffle")).shuffle(&mut order);
            let mut loss_sum = 0.0f64;
            for chunk in order.chunks(batch) {
                let mut named = BTreeMap::new();
                for &idx in chunk {
                    let ex = &examples[idx];
                    let mut tape = Tape::new();
                    let bound = match phase {
                        Phase::Warmup => store.bind(&mut tape, |n| n.starts_with("gnn.")),
                        Phase::Joint => store.bind_all(&mut tape),
                    };
                    let (input, labels) = shifted_pair(&ex.code_ids);
                    let hooks = match &ex.graph {
                        Some((g, align)) => {
                            decoder_hooks(&mut tape, &bound, plan, g, vocab, align, input.len())?
                        }
                        None => HookSet::new(),
                    };
                    let mut drop_rng = (plm_cfg.dropout > 0.0)
                        .then(|| root.derive(&format!("{phase}.epoch{epoch}.drop{idx}")));
                    let enc = encode(&mut tape, &bound, plm_cfg, &ex.nl_ids, &hooks, drop_rng.as_mut())?;
                    let out = decode_train(
                        &mut tape,
                        &bound,
                        plm_cfg,
                        &input,
                        *enc.last().unwrap(),
                        &hooks,
                        drop_rng.as_mut(),
                    )?;
                    let loss = tape.cross_entropy(out.logits, &labels, None)?;
                    loss_sum += tape.value(loss).item() as f64;
                    let grads = tape.backward(loss)?;
                    accumulate_grads(&mut named, bound.named_grads(&grads));
                }
                scale_grads(&mut named, 1.0 / chunk.len() as f32);
                adam.apply(store, &named, opt);
            }
            stats.push(EpochLoss {
                phase,
                epoch: epoch + 1,
                mean_loss: if examples.is_empty() {
                    0.0
                } else {
                    (loss_sum / examples.len() as f64) as f32
                },
            });
        }
    }
    Ok(FusedTrainStats { epochs: stats })
}

/// Teacher-forced logits `[len(code) + 1, vocab]` for one example; `None`
/// plan means the plain transformer.
pub fn teacher_forced_logits(
    store: &ParamStore,
    plm_cfg: &PlmConfig,
    plan: Option<&FusionPlan>,
    vocab: &Vocab,
    ex: &FusedExample,
) -> Result<Tensor, FusionError> {
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let (input, _) = shifted_pair(&ex.code_ids);
    let hooks = match (plan, &ex.graph) {
        (Some(plan), Some((g, align))) => {
            plan.validate(plm_cfg)?;
            decoder_hooks(&mut tape, &bound, plan, g, vocab, align, input.len())?
        }
        (Some(plan), None) => {
            plan.validate(plm_cfg)?;
            HookSet::new()
        }
        (None, _) => HookSet::new(),
    };
    let enc = encode(&mut tape, &bound, plm_cfg, &ex.nl_ids, &hooks, None)?;
    let out = decode_train(&mut tape, &bound, plm_cfg, &input, *enc.last().unwrap(), &hooks, None)?;
    Ok(tape.value(out.logits).clone())
}

/// Argmax prediction per teacher-forced position, cut at the first predicted
/// EOS. This is the apples-to-apples evaluation where gold-graph leakage is
/// allowed to show.
pub fn teacher_forced_predict(
    store: &ParamStore,
    plm_cfg: &PlmConfig,
    plan: Option<&FusionPlan>,
    vocab: &Vocab,
    ex: &FusedExample,
) -> Result<Vec<usize>, FusionError> {
    let logits = teacher_forced_logits(store, plm_cfg, plan, vocab, ex)?;
    let mut out = Vec::new();
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let mut best = 0;
        for (j, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = j;
            }
        }
        if best == EOS {
            break;
        }
        out.push(best);
    }
    Ok(out)
}

/// Free decoding with the graph in the loop: before each step the hypothesis
/// so far is detokenized, tolerantly parsed, rebuilt into a graph, aligned,
/// and fused at the plan's sites (`CausalPrefix` only; the prefix graph never
/// contains unseen terminals). `stride > 1` reuses the last graph for that
/// many steps. Unparsable or unalignable prefixes simply contribute nothing
/// for the step.
pub fn fused_generate(
    store: &ParamStore,
    plm_cfg: &PlmConfig,
    plan: &FusionPlan,
    vocab: &Vocab,
    nl_ids: &[usize],
    mode: DecodeMode,
    max_steps: usize,
) -> Result<Vec<usize>, FusionError> {
    plan.validate(plm_cfg)?;
    if plan.mode != FusionMode::CausalPrefix {
        return Err(FusionError::Config(
            "free decoding requires CausalPrefix visibility".into(),
        ));
    }
    if plan.lambda == 0.0 {
        return Ok(generate(store, plm_cfg, nl_ids, mode, max_steps, None)?);
    }
    let mut cache: Option<(Vec<usize>, Option<(CodeGraph, TerminalAlignment)>)> = None;
    let plan_c = plan.clone();
    let mut hook = |prefix: &[usize], tape: &mut Tape, bound: &Bound| -> Result<HookSet<'static>, PlmError> {
        let stale = match &cache {
            None => true,
            Some((built, _)) => {
                !prefix.starts_with(built) || prefix.len() - built.len() >= plan_c.stride
            }
        };
        if stale {
            cache = Some((prefix.to_vec(), prefix_graph(prefix, vocab)));
        }
        let mut hooks = HookSet::new();
        if let Some((_, Some((g, align)))) = &cache {
            let input_len = prefix.len() + 1;
            let shifted = shift_for_decoder_input(align, input_len);
            let contribution =
                graph_contribution(tape, bound, &plan_c, g, vocab, &shifted, input_len)
                    .map_err(|e| match e {
                        FusionError::Plm(p) => p,
                        other => PlmError::Config(other.to_string()),
                    })?;
            if let Some(c) = contribution {
                for &site in &plan_c.sites {
                    hooks.insert(site, Box::new(move |tape, h, _| tape.add(h, c)))?;
                }
            }
        }
        Ok(hooks)
    };
    Ok(generate(store, plm_cfg, nl_ids, mode, max_steps, Some(&mut hook))?)
}

/// Graph and alignment of a partial hypothesis, or `None` when the decoded
/// text cannot be lexed or a terminal cannot be aligned.
fn prefix_graph(prefix: &[usize], vocab: &Vocab) -> Option<(CodeGraph, TerminalAlignment)> {
    if prefix.is_empty() {
        return None;
    }
    let text = tokenizer::decode(prefix, vocab);
    let ast = parse_source(&text, true).ok()?;
    let g = build_code_graph(&ast);
    let mut origins = Vec::with_capacity(prefix.len());
    let mut off = 0usize;
    for &id in prefix {
        let piece = vocab.token(id);
        let (s, e) = (off, off + piece.len());
        off = e;
        origins.push(
            g.terminal_nodes
                .iter()
                .position(|(_, t)| t.span.start <= s && e <= t.span.end),
        );
    }
    let align = align_terminals(&g, &origins).ok()?;
    Some((g, align))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{init_gnn_params, GnnArch};
    use crate::plm::init_plm_params;
    use crate::tokenizer::{encode as tok_encode, train_vocab};

    fn corpus() -> Vec<(&'static str, &'static str)> {
        vec![
            ("store b in a", "int a = b ;"),
            ("sum of x and y", "int s = x + y ; return s ;"),
            ("copy then return", "int a = b ; int c = a ; return c ;"),
            ("string reader", "string name = source ; return name ;"),
        ]
    }

    fn prep_example(id: &str, nl: &str, code: &str, vocab: &Vocab) -> FusedExample {
        let ast = parse_source(code, false).unwrap();
        let g = build_code_graph(&ast);
        let pieces = tok_encode(code, vocab, true);
        let code_ids: Vec<usize> = pieces.iter().map(|p| p.0).collect();
        let origins: Vec<Option<usize>> = pieces.iter().map(|p| p.1).collect();
        let align = align_terminals(&g, &origins).unwrap();
        FusedExample {
            id: id.into(),
            nl_ids: tok_encode(nl, vocab, false).into_iter().map(|p| p.0).collect(),
            code_ids,
            graph: Some((g, align)),
        }
    }

    fn fixture() -> (Vocab, PlmConfig, FusionPlan, ParamStore, Vec<FusedExample>) {
        let texts: Vec<String> = corpus()
            .iter()
            .flat_map(|(n, c)| [n.to_string(), c.to_string()])
            .collect();
        let vocab = train_vocab(&texts, 300).unwrap();
        let plm_cfg = PlmConfig {
            enc_layers: 1,
            dec_layers: 2,
            hidden: 32,
            heads: 2,
            ffn: 64,
            max_len: 64,
            vocab: vocab.size(),
            dropout: 0.0,
        };
        let gnn_cfg = GnnConfig { hidden: 32, ..GnnConfig::default() };
        let plan = FusionPlan::new(gnn_cfg.clone(), &plm_cfg);
        let mut store = init_plm_params(&plm_cfg, 11).unwrap();
        store.merge(init_gnn_params(&gnn_cfg, 12).unwrap());
        let examples: Vec<FusedExample> = corpus()
            .iter()
            .enumerate()
            .map(|(i, (n, c))| prep_example(&format!("ex{i}"), n, c, &vocab))
            .collect();
        (vocab, plm_cfg, plan, store, examples)
    }

    #[test]
    fn plan_validation_rejects_bad_shapes() {
        let (_, plm_cfg, plan, _, _) = fixture();
        let cases: Vec<(FusionPlan, &str)> = vec![
            (FusionPlan { lambda: -0.5, ..plan.clone() }, "negative lambda"),
            (FusionPlan { lambda: f32::NAN, ..plan.clone() }, "nan lambda"),
            (FusionPlan { stride: 0, ..plan.clone() }, "zero stride"),
            (FusionPlan { sites: vec![], ..plan.clone() }, "no sites"),
            (
                FusionPlan { sites: vec![HookSite::DecoderLayerOut(2)], ..plan.clone() },
                "site past depth",
            ),
            (
                FusionPlan { sites: vec![HookSite::EncoderLayerOut(0)], ..plan.clone() },
                "encoder site",
            ),
            (
                FusionPlan {
                    sites: vec![HookSite::DecoderLayerOut(1), HookSite::DecoderLayerOut(1)],
                    ..plan.clone()
                },
                "duplicate site",
            ),
            (
                FusionPlan { gnn: GnnConfig { hidden: 16, ..plan.gnn.clone() }, ..plan.clone() },
                "width mismatch",
            ),
        ];
        for (bad, what) in cases {
            assert!(
                matches!(bad.validate(&plm_cfg), Err(FusionError::Config(_))),
                "{what} accepted"
            );
        }
        assert!(plan.validate(&plm_cfg).is_ok());
        let empty_baseline = FusionPlan { lambda: 0.0, sites: vec![], ..plan };
        assert!(empty_baseline.validate(&plm_cfg).is_ok());
    }

    #[test]
    fn zero_lambda_logits_match_plain_model_bitwise() {
        let (vocab, plm_cfg, plan, store, examples) = fixture();
        let zero = FusionPlan { lambda: 0.0, ..plan };
        for ex in &examples {
            let plain = teacher_forced_logits(&store, &plm_cfg, None, &vocab, ex).unwrap();
            let fused = teacher_forced_logits(&store, &plm_cfg, Some(&zero), &vocab, ex).unwrap();
            assert_eq!(plain.data(), fused.data(), "{}", ex.id);
        }
    }

    #[test]
    fn positive_lambda_changes_logits() {
        let (vocab, plm_cfg, plan, store, examples) = fixture();
        let plain = teacher_forced_logits(&store, &plm_cfg, None, &vocab, &examples[0]).unwrap();
        let fused =
            teacher_forced_logits(&store, &plm_cfg, Some(&plan), &vocab, &examples[0]).unwrap();
        assert_ne!(plain.data(), fused.data());
    }

    #[test]
    fn contribution_is_exactly_linear_in_lambda() {
        let (vocab, plm_cfg, plan, store, examples) = fixture();
        let (g, align) = examples[0].graph.as_ref().unwrap();
        let input_len = examples[0].code_ids.len() + 1;
        let shifted = shift_for_decoder_input(align, input_len);

        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let full = FusionPlan { lambda: 1.0, ..plan.clone() };
        let half = FusionPlan { lambda: 0.5, ..plan };
        let c1 = graph_contribution(&mut tape, &bound, &full, g, &vocab, &shifted, input_len)
            .unwrap()
            .unwrap();
        let ch = graph_contribution(&mut tape, &bound, &half, g, &vocab, &shifted, input_len)
            .unwrap()
            .unwrap();
        let v1 = tape.value(c1).data().to_vec();
        let vh = tape.value(ch).data();
        assert!(plm_cfg.hidden > 0);
        for (a, b) in v1.iter().zip(vh) {
            assert_eq!(a * 0.5, *b);
        }
    }

    #[test]
    fn contribution_lands_on_aligned_rows_only() {
        let (vocab, plm_cfg, plan, store, examples) = fixture();
        let (g, _) = examples[0].graph.as_ref().unwrap();
        // Restrict the alignment to a single terminal occupying rows 2..4.
        let tid = g.terminal_nodes[1].0;
        let only = TerminalAlignment { spans: BTreeMap::from([(tid, (2, 4))]) };

        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let c = graph_contribution(&mut tape, &bound, &plan, g, &vocab, &only, 6)
            .unwrap()
            .unwrap();
        let h0 = node_init(&mut tape, &bound, &plan.gnn, g, &vocab, &Default::default()).unwrap();
        let states = gnn_forward(&mut tape, &bound, &plan.gnn, g, h0).unwrap();
        let expect = tape.value(*states.last().unwrap()).row(tid).to_vec();

        let got = tape.value(c);
        assert_eq!(got.shape(), &[6, plm_cfg.hidden]);
        for r in 0..6 {
            if r == 2 || r == 3 {
                assert_eq!(got.row(r), &expect[..], "row {r}");
            } else {
                assert!(got.row(r).iter().all(|&x| x == 0.0), "row {r} not zero");
            }
        }
    }

    #[test]
    fn empty_alignment_or_zero_lambda_contribute_nothing() {
        let (vocab, _, plan, store, examples) = fixture();
        let (g, align) = examples[0].graph.as_ref().unwrap();
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let none = TerminalAlignment::default();
        assert!(graph_contribution(&mut tape, &bound, &plan, g, &vocab, &none, 8)
            .unwrap()
            .is_none());
        let zero = FusionPlan { lambda: 0.0, ..plan };
        assert!(graph_contribution(&mut tape, &bound, &zero, g, &vocab, align, 64)
            .unwrap()
            .is_none());
    }

    #[test]
    fn out_of_range_alignment_is_an_error() {
        let (vocab, _, plan, store, examples) = fixture();
        let (g, align) = examples[0].graph.as_ref().unwrap();
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let too_short = align.spans.values().map(|&(_, e)| e).max().unwrap() - 1;
        let got = graph_contribution(&mut tape, &bound, &plan, g, &vocab, align, too_short);
        assert!(matches!(got, Err(FusionError::Alignment { .. })));
    }

    #[test]
    fn shift_clips_and_drops_empty_spans() {
        let align = TerminalAlignment {
            spans: BTreeMap::from([(7, (0, 2)), (9, (2, 3)), (11, (3, 5))]),
        };
        let shifted = shift_for_decoder_input(&align, 4);
        assert_eq!(shifted.spans.get(&7), Some(&(1, 3)));
        assert_eq!(shifted.spans.get(&9), Some(&(3, 4)));
        assert_eq!(shifted.spans.get(&11), None, "span past the input is dropped");
    }

    #[test]
    fn causal_fusion_keeps_shared_prefix_rows_bitwise_identical() {
        let (vocab, plm_cfg, plan, store, _) = fixture();
        let causal = FusionPlan { mode: FusionMode::CausalPrefix, ..plan };
        let a = prep_example("a", "copy then return", "int a = b ; int c = a ;", &vocab);
        let b = prep_example("b", "copy then return", "int a = b ; int c = d ;", &vocab);
        let split = a
            .code_ids
            .iter()
            .zip(&b.code_ids)
            .position(|(x, y)| x != y)
            .expect("programs differ");

        let la = teacher_forced_logits(&store, &plm_cfg, Some(&causal), &vocab, &a).unwrap();
        let lb = teacher_forced_logits(&store, &plm_cfg, Some(&causal), &vocab, &b).unwrap();
        // Input row t holds BOS for t = 0 and code token t - 1 after, so rows
        // up to and including `split` saw identical inputs and subgraphs.
        for r in 0..=split {
            assert_eq!(la.row(r), lb.row(r), "row {r}");
        }
        assert_ne!(la.row(split + 1), lb.row(split + 1));
    }

    #[test]
    fn warmup_freezes_the_transformer_bitwise() {
        let (vocab, plm_cfg, plan, mut store, examples) = fixture();
        let warmup_only = FusionPlan { warmup_epochs: 1, ..plan };
        let names: Vec<String> = store.names().map(str::to_string).collect();
        let before: BTreeMap<String, Vec<f32>> = names
            .iter()
            .map(|n| (n.clone(), store.get(n).data().to_vec()))
            .collect();
        fused_train(
            &examples,
            &mut store,
            &plm_cfg,
            &warmup_only,
            &vocab,
            0,
            7,
            &AdamConfig::default(),
            2,
        )
        .unwrap();
        let mut gnn_moved = false;
        for name in &names {
            let now = store.get(name).data();
            if name.starts_with("plm.") {
                assert_eq!(now, &before[name][..], "{name} changed during warmup");
            } else if now != &before[name][..] {
                gnn_moved = true;
            }
        }
        assert!(gnn_moved, "no expert parameter moved");
    }

    #[test]
    fn zero_lambda_training_matches_across_fusion_settings() {
        let (vocab, plm_cfg, plan, store, examples) = fixture();
        // Same zero-strength run under two different expert configs: the
        // transformer trajectory must not depend on the dormant expert.
        let run = |gnn_seed: u64, arch: GnnArch| {
            let mut s = init_plm_params(&plm_cfg, 11).unwrap();
            let gnn_cfg = GnnConfig { arch, hidden: 32, ..GnnConfig::default() };
            s.merge(init_gnn_params(&gnn_cfg, gnn_seed).unwrap());
            let p = FusionPlan { lambda: 0.0, warmup_epochs: 0, gnn: gnn_cfg, ..plan.clone() };
            fused_train(&examples, &mut s, &plm_cfg, &p, &vocab, 2, 7, &AdamConfig::default(), 2)
                .unwrap();
            s
        };
        let one = run(12, GnnArch::Gin);
        let two = run(99, GnnArch::Rgcn);
        for name in one.names() {
            if name.starts_with("plm.") {
                assert_eq!(one.get(name).data(), two.get(name).data(), "{name}");
            }
        }
        drop(store);
    }

    #[test]
    fn training_is_deterministic() {
        let (vocab, plm_cfg, plan, store, examples) = fixture();
        let run = || {
            let mut s = store.clone();
            let stats = fused_train(
                &examples,
                &mut s,
                &plm_cfg,
                &plan,
                &vocab,
                1,
                7,
                &AdamConfig::default(),
                2,
            )
            .unwrap();
            (s, stats)
        };
        let (s1, st1) = run();
        let (s2, st2) = run();
        assert_eq!(st1, st2);
        for name in s1.names() {
            assert_eq!(s1.get(&name).data(), s2.get(&name).data(), "{name}");
        }
        assert_eq!(st1.epochs.len(), plan.warmup_epochs + 1);
        assert_eq!(st1.epochs[0].phase, Phase::Warmup);
        assert_eq!(st1.epochs.last().unwrap().phase, Phase::Joint);
    }

    #[test]
    fn graphless_examples_carry_no_graph_signal() {
        let (vocab, plm_cfg, plan, mut store, mut examples) = fixture();
        let mut bare = examples[1].clone();
        bare.graph = None;
        // Teacher forcing: with no graph the fused pass is the plain pass.
        let plain = teacher_forced_logits(&store, &plm_cfg, None, &vocab, &bare).unwrap();
        let fused = teacher_forced_logits(&store, &plm_cfg, Some(&plan), &vocab, &bare).unwrap();
        assert_eq!(plain.data(), fused.data());
        // Training simply proceeds; the entry contributes a plain loss.
        examples[1].graph = None;
        fused_train(
            &examples,
            &mut store,
            &plm_cfg,
            &plan,
            &vocab,
            1,
            7,
            &AdamConfig::default(),
            2,
        )
        .unwrap();
    }

    #[test]
    fn generation_requires_causal_visibility() {
        let (vocab, plm_cfg, plan, store, examples) = fixture();
        let got = fused_generate(
            &store,
            &plm_cfg,
            &plan,
            &vocab,
            &examples[0].nl_ids,
            DecodeMode::Greedy,
            4,
        );
        assert!(matches!(got, Err(FusionError::Config(_))));
    }

    #[test]
    fn zero_lambda_generation_matches_plain_decoding() {
        let (vocab, plm_cfg, plan, store, examples) = fixture();
        let zero =
            FusionPlan { lambda: 0.0, mode: FusionMode::CausalPrefix, sites: vec![], ..plan };
        let fused = fused_generate(
            &store,
            &plm_cfg,
            &zero,
            &vocab,
            &examples[0].nl_ids,
            DecodeMode::Greedy,
            8,
        )
        .unwrap();
        let plain =
            generate(&store, &plm_cfg, &examples[0].nl_ids, DecodeMode::Greedy, 8, None).unwrap();
        assert_eq!(fused, plain);
    }

    #[test]
    fn graph_aware_generation_is_deterministic_and_reacts_to_the_graph() {
        let (vocab, plm_cfg, plan, store, examples) = fixture();
        let causal = FusionPlan { mode: FusionMode::CausalPrefix, ..plan };
        let once = fused_generate(
            &store,
            &plm_cfg,
            &causal,
            &vocab,
            &examples[1].nl_ids,
            DecodeMode::Greedy,
            10,
        )
        .unwrap();
        let twice = fused_generate(
            &store,
            &plm_cfg,
            &causal,
            &vocab,
            &examples[1].nl_ids,
            DecodeMode::Greedy,
            10,
        )
        .unwrap();
        assert_eq!(once, twice);
        // Beam width 1 walks the same path.
        let beam1 = fused_generate(
            &store,
            &plm_cfg,
            &causal,
            &vocab,
            &examples[1].nl_ids,
            DecodeMode::Beam(1),
            10,
        )
        .unwrap();
        assert_eq!(once, beam1);
    }

    #[test]
    fn prefix_graphs_survive_garbage_and_match_clean_reparses() {
        let (vocab, _, _, _, examples) = fixture();
        // A clean prefix covering the first statement aligns fully.
        let ex = &examples[2];
        let (full, _) = ex.graph.as_ref().unwrap();
        let boundary = {
            // Subtokens covering "int a = b ;" end where " int" of the second
            // statement begins; find the piece count for the first 5 tokens.
            let spans = &full.terminal_nodes;
            let cut = spans[4].1.span.end;
            let mut off = 0;
            let mut count = 0;
            for &id in &ex.code_ids {
                if off >= cut {
                    break;
                }
                off += vocab.token(id).len();
                count += 1;
            }
            count
        };
        let (g, align) = prefix_graph(&ex.code_ids[..boundary], &vocab).unwrap();
        assert_eq!(g.terminal_nodes.len(), 5);
        assert_eq!(align.spans.len(), 5);
        // Garbage that cannot lex yields no graph rather than an error.
        assert!(prefix_graph(&[crate::tokenizer::PAD], &vocab).is_none());
        assert!(prefix_graph(&[], &vocab).is_none());
    }
}

