use std::collections::BTreeMap;

use crate::numerics::Tensor;

/// Keys and values of one self-attention layer, `[tokens × model_dim]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerKV {
    pub k: Tensor,
    pub v: Tensor,
}

/// Per-layer reconstruction keys/values offered to an editing pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvContext {
    layers: BTreeMap<usize, LayerKV>,
}

impl KvContext {
    pub fn new() -> Self {
        Self::default()
    }

    /// Context holding every captured layer, indexed by position.
    pub fn from_captured(kv: Vec<LayerKV>) -> Self {
        Self {
            layers: kv.into_iter().enumerate().collect(),
        }
    }

    pub fn insert(&mut self, layer: usize, kv: LayerKV) {
        self.layers.insert(layer, kv);
    }

    pub fn get(&self, layer: usize) -> Option<&LayerKV> {
        self.layers.get(&layer)
    }

    pub fn layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Restricts the context to the given layers.
    pub fn retain(&mut self, keep: impl Fn(usize) -> bool) {
        self.layers.retain(|&l, _| keep(l));
    }
}

#[derive(Debug, Clone, Copy)]
pub enum TapMode<'a> {
    /// Plain forward pass.
    Off,
    /// Store every layer's keys and values.
    CaptureKV,
    /// Enrich self-attention at each layer present in the context; the
    /// enriched output is what propagates.
    Enrich(&'a KvContext),
    /// At every layer compute both the plain and the enriched attention
    /// output, but propagate only the plain one. Requires context for all
    /// layers.
    Probe(&'a KvContext),
}

/// Observation point for one forward pass. Not reusable across passes.
#[derive(Debug)]
pub struct AttentionTap<'a> {
    pub mode: TapMode<'a>,
    /// Filled in `CaptureKV` mode, one entry per layer.
    pub captured_kv: Vec<LayerKV>,
    /// Attention output (concatenated heads, before the output projection)
    /// that propagated at each layer.
    pub attn_outputs: Vec<Tensor>,
    /// Enriched attention output per layer, filled in `Probe` mode.
    pub enriched_outputs: Vec<Tensor>,
    /// Layers whose attention actually consumed context.
    pub consumed_layers: Vec<usize>,
}

impl<'a> AttentionTap<'a> {
    pub fn new(mode: TapMode<'a>) -> Self {
        Self {
            mode,
            captured_kv: Vec::new(),
            attn_outputs: Vec::new(),
            enriched_outputs: Vec::new(),
            consumed_layers: Vec::new(),
        }
    }

    pub fn off() -> Self {
        Self::new(TapMode::Off)
    }

    pub fn capture() -> Self {
        Self::new(TapMode::CaptureKV)
    }

    pub fn enrich(context: &'a KvContext) -> Self {
        Self::new(TapMode::Enrich(context))
    }

    pub fn probe(context: &'a KvContext) -> Self {
        Self::new(TapMode::Probe(context))
    }

    pub(crate) fn reset(&mut self) {
        self.captured_kv.clear();
        self.attn_outputs.clear();
        self.enriched_outputs.clear();
        self.consumed_layers.clear();
    }
}
