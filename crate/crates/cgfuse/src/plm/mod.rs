//! Toy encoder-decoder transformer standing in for a pretrained LM.
//!
//! Pre-norm layers, learned absolute positions, weight tying between the
//! token embedding and the output projection. Every forward pass runs on a
//! caller-supplied [`Tape`] against a [`ParamStore`] bound into it, so the
//! same code path serves training, evaluation, and generation. External
//! signals enter through [`HookSet`]: a hook intercepts one layer's output
//! (shape-preserving) before the next layer consumes it, which is how graph
//! representations get added downstream.

mod generate;
mod model;

pub use generate::{generate, DecodeMode, StepHookFn};
pub use model::{decode_train, encode, DecodeOut};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{NodeId, ParamStore, Rng, Tape, Tensor, TensorError};
use crate::tokenizer;

#[derive(Debug, Error)]
pub enum PlmError {
    #[error("sequence of {len} subtokens exceeds the positional table ({max})")]
    TooLong { len: usize, max: usize },
    #[error("invalid transformer config: {0}")]
    Config(String),
    #[error("a hook is already registered for {0:?}")]
    DuplicateHook(HookSite),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlmConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_len: usize,
    pub vocab: usize,
    pub dropout: f32,
}

impl Default for PlmConfig {
    fn default() -> Self {
        PlmConfig {
            enc_layers: 4,
            dec_layers: 4,
            hidden: 128,
            heads: 4,
            ffn: 512,
            max_len: 256,
            vocab: 512,
            dropout: 0.0,
        }
    }
}

impl PlmConfig {
    pub fn validate(&self) -> Result<(), PlmError> {
        if self.hidden == 0 || self.heads == 0 {
            return Err(PlmError::Config("hidden and heads must be positive".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(PlmError::Config(format!(
                "hidden {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.ffn == 0 || self.max_len == 0 {
            return Err(PlmError::Config("ffn and max_len must be positive".into()));
        }
        if self.vocab <= tokenizer::MASK {
            return Err(PlmError::Config(format!(
                "vocab {} leaves no room for reserved subtokens",
                self.vocab
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(PlmError::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

/// Where a hook attaches: the output of one encoder or decoder layer,
/// intercepted before the next layer (or the output head) sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HookSite {
    EncoderLayerOut(usize),
    DecoderLayerOut(usize),
}

/// Position metadata handed to a hook: the hidden states cover absolute
/// sequence positions `start..start + len`.
#[derive(Debug, Clone, Copy)]
pub struct HookCtx {
    pub start: usize,
    pub len: usize,
}

pub type HookFn<'a> = Box<dyn Fn(&mut Tape, NodeId, &HookCtx) -> Result<NodeId, TensorError> + 'a>;

/// At most one hook per site; hooks must preserve the `[len, hidden]` shape.
#[derive(Default)]
pub struct HookSet<'a> {
    hooks: BTreeMap<HookSite, HookFn<'a>>,
}

impl<'a> HookSet<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, site: HookSite, hook: HookFn<'a>) -> Result<(), PlmError> {
        if self.hooks.contains_key(&site) {
            return Err(PlmError::DuplicateHook(site));
        }
        self.hooks.insert(site, hook);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.hooks.is_empty()
    }

    pub(crate) fn get(&self, site: HookSite) -> Option<&HookFn<'a>> {
        self.hooks.get(&site)
    }
}

fn ln_params(store: &mut ParamStore, prefix: &str, dim: usize) {
    store.insert(format!("{prefix}.g"), Tensor::filled(vec![dim], 1.0));
    store.insert(format!("{prefix}.b"), Tensor::zeros(vec![dim]));
}

fn attn_params(store: &mut ParamStore, rng: &Rng, prefix: &str, dim: usize) {
    for w in ["wq", "wk", "wv", "wo"] {
        let name = format!("{prefix}.{w}");
        let t = Tensor::randn(vec![dim, dim], 0.02, &mut rng.derive(&name));
        store.insert(name, t);
    }
    for b in ["bq", "bk", "bv", "bo"] {
        store.insert(format!("{prefix}.{b}"), Tensor::zeros(vec![dim]));
    }
}

fn ffn_params(store: &mut ParamStore, rng: &Rng, prefix: &str, dim: usize, ffn: usize) {
    for (w, shape) in [("w1", vec![dim, ffn]), ("w2", vec![ffn, dim])] {
        let name = format!("{prefix}.{w}");
        let t = Tensor::randn(shape, 0.02, &mut rng.derive(&name));
        store.insert(name, t);
    }
    store.insert(format!("{prefix}.b1"), Tensor::zeros(vec![ffn]));
    store.insert(format!("{prefix}.b2"), Tensor::zeros(vec![dim]));
}

/// Fresh `plm.*` parameters. Each tensor draws from its own name-derived
/// stream, so adding or removing a parameter never shifts the others.
pub fn init_plm_params(cfg: &PlmConfig, seed: u64) -> Result<ParamStore, PlmError> {
    cfg.validate()?;
    let rng = Rng::seeded(seed, "plm.init");
    let mut store = ParamStore::new();
    for (name, shape) in [
        ("plm.tok_embed", vec![cfg.vocab, cfg.hidden]),
        ("plm.pos_embed", vec![cfg.max_len, cfg.hidden]),
    ] {
        store.insert(name, Tensor::randn(shape, 0.02, &mut rng.derive(name)));
    }
    for i in 0..cfg.enc_layers {
        let p = format!("plm.enc{i}");
        ln_params(&mut store, &format!("{p}.ln1"), cfg.hidden);
        attn_params(&mut store, &rng, &format!("{p}.attn"), cfg.hidden);
        ln_params(&mut store, &format!("{p}.ln2"), cfg.hidden);
        ffn_params(&mut store, &rng, &format!("{p}.ffn"), cfg.hidden, cfg.ffn);
    }
    for i in 0..cfg.dec_layers {
        let p = format!("plm.dec{i}");
        ln_params(&mut store, &format!("{p}.ln1"), cfg.hidden);
        attn_params(&mut store, &rng, &format!("{p}.self"), cfg.hidden);
        ln_params(&mut store, &format!("{p}.ln2"), cfg.hidden);
        attn_params(&mut store, &rng, &format!("{p}.cross"), cfg.hidden);
        ln_params(&mut store, &format!("{p}.ln3"), cfg.hidden);
        ffn_params(&mut store, &rng, &format!("{p}.ffn"), cfg.hidden, cfg.ffn);
    }
    ln_params(&mut store, "plm.out_ln", cfg.hidden);
    Ok(store)
}

fn config_path(path: &Path) -> PathBuf {
    path.with_extension("toml")
}

/// Writes the tensors to `path` and the config, as TOML, to the sibling
/// `.toml` file. The store may carry extra prefixes (e.g. `gnn.*`); one
/// container keeps fused models in a single artifact.
pub fn save_checkpoint(path: &Path, store: &ParamStore, cfg: &PlmConfig) -> Result<(), PlmError> {
    store.save(path)?;
    let text = toml::to_string(cfg).map_err(|e| PlmError::Config(e.to_string()))?;
    std::fs::write(config_path(path), text).map_err(|e| {
        PlmError::Tensor(TensorError::Io(format!("{}: {e}", config_path(path).display())))
    })?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, PlmConfig), PlmError> {
    let store = ParamStore::load(path)?;
    let text = std::fs::read_to_string(config_path(path)).map_err(|e| {
        PlmError::Tensor(TensorError::Io(format!("{}: {e}", config_path(path).display())))
    })?;
    let cfg: PlmConfig = toml::from_str(&text).map_err(|e| PlmError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok((store, cfg))
}
