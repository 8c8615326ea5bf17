//! Autoregressive decoding: greedy and beam search over the trained model.

use crate::tensor::{Bound, ParamStore, Tape};
use crate::tokenizer::{BOS, EOS};

use super::{decode_train, encode, HookSet, PlmConfig, PlmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

/// Called before each decoding step with the hypothesis so far. It may build
/// tape nodes (e.g. a graph contribution for this prefix) and returns the
/// hooks to apply during this step's forward pass. With beams, it runs once
/// per live hypothesis per step.
pub type StepHookFn<'a> =
    dyn FnMut(&[usize], &mut Tape, &Bound) -> Result<HookSet<'static>, PlmError> + 'a;

#[derive(Clone)]
struct Hyp {
    toks: Vec<usize>,
    logp: f64,
    done: bool,
}

fn step_logprobs(
    store: &ParamStore,
    cfg: &PlmConfig,
    nl_ids: &[usize],
    prefix: &[usize],
    step_hook: &mut Option<&mut StepHookFn>,
) -> Result<Vec<f32>, PlmError> {
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let hooks = match step_hook.as_deref_mut() {
        Some(hook) => hook(prefix, &mut tape, &bound)?,
        None => HookSet::new(),
    };
    let enc = encode(&mut tape, &bound, cfg, nl_ids, &hooks, None)?;
    let mut input = Vec::with_capacity(prefix.len() + 1);
    input.push(BOS);
    input.extend_from_slice(prefix);
    let out = decode_train(&mut tape, &bound, cfg, &input, *enc.last().unwrap(), &hooks, None)?;
    let last = tape.value(out.logits).row(input.len() - 1).to_vec();
    // log-softmax of the final position
    let mx = last.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
    let logz = mx + last.iter().map(|v| (v - mx).exp()).sum::<f32>().ln();
    Ok(last.iter().map(|v| v - logz).collect())
}

/// Decodes target subtokens for `nl_ids`, stopping each hypothesis at EOS or
/// after `max_steps` tokens. Beam search keeps `k` hypotheses ranked by total
/// log-probability and returns the best completed one (best live one if
/// nothing completed); ties break toward earlier hypotheses, then smaller
/// token ids, so `Beam(1)` reproduces greedy decoding exactly. The returned
/// sequence excludes EOS.
pub fn generate(
    store: &ParamStore,
    cfg: &PlmConfig,
    nl_ids: &[usize],
    mode: DecodeMode,
    max_steps: usize,
    mut step_hook: Option<&mut StepHookFn>,
) -> Result<Vec<usize>, PlmError> {
    cfg.validate()?;
    let width = match mode {
        DecodeMode::Greedy => 1,
        DecodeMode::Beam(0) => {
            return Err(PlmError::Config("beam width must be at least 1".into()))
        }
        DecodeMode::Beam(k) => k,
    };
    let mut hyps = vec![Hyp { toks: Vec::new(), logp: 0.0, done: false }];
    for _ in 0..max_steps {
        if hyps.iter().all(|h| h.done) {
            break;
        }
        // (total logp, parent index, appended token); finished hypotheses
        // stay in the pool as single candidates
        let mut cands: Vec<(f64, usize, Option<usize>)> = Vec::new();
        for (hi, hyp) in hyps.iter().enumerate() {
            if hyp.done {
                cands.push((hyp.logp, hi, None));
                continue;
            }
            let lp = step_logprobs(store, cfg, nl_ids, &hyp.toks, &mut step_hook)?;
            for (tok, &l) in lp.iter().enumerate() {
                cands.push((hyp.logp + l as f64, hi, Some(tok)));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(width);
        hyps = cands
            .into_iter()
            .map(|(logp, hi, tok)| match tok {
                None => hyps[hi].clone(),
                Some(t) => {
                    let mut toks = hyps[hi].toks.clone();
                    let done = t == EOS;
                    if !done {
                        toks.push(t);
                    }
                    Hyp { toks, logp, done }
                }
            })
            .collect();
    }
    let mut best: Option<&Hyp> = None;
    for pool in [true, false] {
        for hyp in hyps.iter().filter(|h| h.done == pool) {
            if best.is_none_or(|b| hyp.logp > b.logp) {
                best = Some(hyp);
            }
        }
        if best.is_some() {
            break;
        }
    }
    Ok(best.expect("at least one hypothesis").toks.clone())
}
