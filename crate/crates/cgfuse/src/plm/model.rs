//! Forward passes: embedding, attention blocks, encoder and decoder stacks.

use crate::tensor::{Bound, NodeId, Rng, Tape, Tensor, TensorError};

use super::{HookCtx, HookSet, HookSite, PlmConfig, PlmError};

/// Output of a teacher-forced decoder pass. `states[0]` is the embedding
/// layer; `states[i]` is layer `i`'s (possibly hooked) output.
pub struct DecodeOut {
    pub states: Vec<NodeId>,
    pub logits: NodeId,
}

fn embed(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &PlmConfig,
    ids: &[usize],
) -> Result<NodeId, PlmError> {
    if ids.len() > cfg.max_len {
        return Err(PlmError::TooLong { len: ids.len(), max: cfg.max_len });
    }
    let tok = tape.embedding_lookup(bound.id("plm.tok_embed"), ids)?;
    let positions: Vec<usize> = (0..ids.len()).collect();
    let pos = tape.embedding_lookup(bound.id("plm.pos_embed"), &positions)?;
    Ok(tape.add(tok, pos)?)
}

/// Inverted dropout; `None` rng means evaluation, where this is a no-op.
fn dropout(
    tape: &mut Tape,
    x: NodeId,
    rate: f32,
    rng: &mut Option<&mut Rng>,
) -> Result<NodeId, TensorError> {
    let Some(rng) = rng.as_deref_mut() else { return Ok(x) };
    if rate <= 0.0 {
        return Ok(x);
    }
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let keep = 1.0 / (1.0 - rate);
    let data = (0..n).map(|_| if rng.uniform() < rate { 0.0 } else { keep }).collect();
    tape.mul_mask(x, Tensor::new(shape, data))
}

fn linear(
    tape: &mut Tape,
    bound: &Bound,
    x: NodeId,
    w: &str,
    b: &str,
) -> Result<NodeId, TensorError> {
    let wx = tape.matmul(x, bound.id(w))?;
    tape.add(wx, bound.id(b))
}

fn layer_norm(
    tape: &mut Tape,
    bound: &Bound,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId, TensorError> {
    tape.layer_norm(x, bound.id(&format!("{prefix}.g")), bound.id(&format!("{prefix}.b")))
}

/// Multi-head scaled dot-product attention. Queries come from `q_in`, keys
/// and values from `kv_in`; `mask` (0 or -1e9 entries) is added to the raw
/// scores, where -1e9 underflows to an exactly zero weight.
fn attention(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &PlmConfig,
    prefix: &str,
    q_in: NodeId,
    kv_in: NodeId,
    mask: Option<NodeId>,
) -> Result<NodeId, TensorError> {
    let q = linear(tape, bound, q_in, &format!("{prefix}.wq"), &format!("{prefix}.bq"))?;
    let k = linear(tape, bound, kv_in, &format!("{prefix}.wk"), &format!("{prefix}.bk"))?;
    let v = linear(tape, bound, kv_in, &format!("{prefix}.wv"), &format!("{prefix}.bv"))?;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f32).sqrt();
    let mut merged: Option<NodeId> = None;
    for h in 0..cfg.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = tape.slice(q, 1, lo, hi)?;
        let kh = tape.slice(k, 1, lo, hi)?;
        let vh = tape.slice(v, 1, lo, hi)?;
        let kt = tape.transpose(kh)?;
        let raw = tape.matmul(qh, kt)?;
        let mut scores = tape.mul_scalar(raw, scale);
        if let Some(m) = mask {
            scores = tape.add(scores, m)?;
        }
        let weights = tape.softmax(scores, 1)?;
        let oh = tape.matmul(weights, vh)?;
        merged = Some(match merged {
            None => oh,
            Some(acc) => tape.concat(acc, oh, 1)?,
        });
    }
    let o = merged.expect("validate() guarantees at least one head");
    linear(tape, bound, o, &format!("{prefix}.wo"), &format!("{prefix}.bo"))
}

fn feed_forward(
    tape: &mut Tape,
    bound: &Bound,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId, TensorError> {
    let h = linear(tape, bound, x, &format!("{prefix}.w1"), &format!("{prefix}.b1"))?;
    let a = tape.gelu(h);
    linear(tape, bound, a, &format!("{prefix}.w2"), &format!("{prefix}.b2"))
}

fn encoder_layer(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &PlmConfig,
    i: usize,
    x: NodeId,
    rng: &mut Option<&mut Rng>,
) -> Result<NodeId, TensorError> {
    let p = format!("plm.enc{i}");
    let n1 = layer_norm(tape, bound, &format!("{p}.ln1"), x)?;
    let a = attention(tape, bound, cfg, &format!("{p}.attn"), n1, n1, None)?;
    let a = dropout(tape, a, cfg.dropout, rng)?;
    let x = tape.add(x, a)?;
    let n2 = layer_norm(tape, bound, &format!("{p}.ln2"), x)?;
    let f = feed_forward(tape, bound, &format!("{p}.ffn"), n2)?;
    let f = dropout(tape, f, cfg.dropout, rng)?;
    tape.add(x, f)
}

fn decoder_layer(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &PlmConfig,
    i: usize,
    x: NodeId,
    enc_out: NodeId,
    mask: NodeId,
    rng: &mut Option<&mut Rng>,
) -> Result<NodeId, TensorError> {
    let p = format!("plm.dec{i}");
    let n1 = layer_norm(tape, bound, &format!("{p}.ln1"), x)?;
    let a = attention(tape, bound, cfg, &format!("{p}.self"), n1, n1, Some(mask))?;
    let a = dropout(tape, a, cfg.dropout, rng)?;
    let x = tape.add(x, a)?;
    let n2 = layer_norm(tape, bound, &format!("{p}.ln2"), x)?;
    let c = attention(tape, bound, cfg, &format!("{p}.cross"), n2, enc_out, None)?;
    let c = dropout(tape, c, cfg.dropout, rng)?;
    let x = tape.add(x, c)?;
    let n3 = layer_norm(tape, bound, &format!("{p}.ln3"), x)?;
    let f = feed_forward(tape, bound, &format!("{p}.ffn"), n3)?;
    let f = dropout(tape, f, cfg.dropout, rng)?;
    tape.add(x, f)
}

fn apply_hook(
    tape: &mut Tape,
    hooks: &HookSet,
    site: HookSite,
    state: NodeId,
    len: usize,
) -> Result<NodeId, TensorError> {
    match hooks.get(site) {
        Some(hook) => {
            let before = tape.shape(state).to_vec();
            let out = hook(tape, state, &HookCtx { start: 0, len })?;
            if tape.shape(out) != before.as_slice() {
                return Err(TensorError::ShapeMismatch {
                    op: "layer hook",
                    lhs: before,
                    rhs: tape.shape(out).to_vec(),
                });
            }
            Ok(out)
        }
        None => Ok(state),
    }
}

/// Runs the encoder stack over NL subtoken ids. Returns every layer's hidden
/// states: index 0 is the embedding output (the whole result for a
/// zero-layer encoder), index `i + 1` is layer `i` after its hook.
pub fn encode(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &PlmConfig,
    ids: &[usize],
    hooks: &HookSet,
    mut dropout_rng: Option<&mut Rng>,
) -> Result<Vec<NodeId>, PlmError> {
    cfg.validate()?;
    let mut x = embed(tape, bound, cfg, ids)?;
    x = dropout(tape, x, cfg.dropout, &mut dropout_rng)?;
    let mut states = vec![x];
    for i in 0..cfg.enc_layers {
        let y = encoder_layer(tape, bound, cfg, i, x, &mut dropout_rng)?;
        let y = apply_hook(tape, hooks, HookSite::EncoderLayerOut(i), y, ids.len())?;
        states.push(y);
        x = y;
    }
    Ok(states)
}

fn causal_mask(n: usize) -> Tensor {
    let mut data = vec![0.0f32; n * n];
    for i in 0..n {
        for j in i + 1..n {
            data[i * n + j] = -1e9;
        }
    }
    Tensor::new(vec![n, n], data)
}

/// Teacher-forced decoder pass. `input_ids` is the shifted target (BOS
/// first); position `t` may attend to inputs `0..=t` only. Logits share the
/// token embedding (tied output projection).
pub fn decode_train(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &PlmConfig,
    input_ids: &[usize],
    enc_out: NodeId,
    hooks: &HookSet,
    mut dropout_rng: Option<&mut Rng>,
) -> Result<DecodeOut, PlmError> {
    cfg.validate()?;
    let mut x = embed(tape, bound, cfg, input_ids)?;
    x = dropout(tape, x, cfg.dropout, &mut dropout_rng)?;
    let mask = tape.input(causal_mask(input_ids.len()));
    let mut states = vec![x];
    for i in 0..cfg.dec_layers {
        let y = decoder_layer(tape, bound, cfg, i, x, enc_out, mask, &mut dropout_rng)?;
        let y = apply_hook(tape, hooks, HookSite::DecoderLayerOut(i), y, input_ids.len())?;
        states.push(y);
        x = y;
    }
    let n = layer_norm(tape, bound, "plm.out_ln", x)?;
    let tied = tape.transpose(bound.id("plm.tok_embed"))?;
    let logits = tape.matmul(n, tied)?;
    Ok(DecodeOut { states, logits })
}
