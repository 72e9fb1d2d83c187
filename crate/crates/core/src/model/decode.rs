use crate::nn_core::{sinusoidal_pe, Graph, LayerCache, Mask, Mat};
use crate::symbolic::{EOS_ID, SOS_ID};

use super::{ModelError, Prose};

/// Source of the most likely next token given an SOS-framed prefix.
pub trait NextToken {
    fn next_token(&mut self, prefix: &[u32]) -> u32;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Greedy {
    /// Generated tokens without SOS/EOS.
    pub tokens: Vec<u32>,
    /// EOS was not produced within the length budget.
    pub truncated: bool,
}

/// Argmax decoding from SOS until EOS or `max_len` tokens.
pub fn greedy_decode(model: &mut impl NextToken, max_len: usize) -> Greedy {
    let mut prefix = vec![SOS_ID];
    while prefix.len() <= max_len {
        let t = model.next_token(&prefix);
        if t == EOS_ID {
            prefix.remove(0);
            return Greedy {
                tokens: prefix,
                truncated: false,
            };
        }
        prefix.push(t);
    }
    prefix.remove(0);
    Greedy {
        tokens: prefix,
        truncated: true,
    }
}

/// Incremental symbol decoder over a fixed fused memory. Keys and values of
/// earlier positions are cached per layer, so step `k` costs one row.
pub struct SymbolDecoderState<'m> {
    model: &'m Prose,
    memory: Mat,
    memory_mask: Mask,
    caches: Vec<LayerCache>,
    fed: Vec<u32>,
    pe: Mat,
}

impl<'m> SymbolDecoderState<'m> {
    pub fn new(model: &'m Prose, memory: Mat, memory_pad: Vec<bool>) -> Result<Self, ModelError> {
        let s = model.symbol.as_ref().ok_or(ModelError::NoSymbolPath)?;
        if memory.rows != memory_pad.len() || memory.cols != model.cfg.width {
            return Err(ModelError::ShapeMismatch("symbol decoder memory".into()));
        }
        Ok(Self {
            model,
            memory,
            memory_mask: Mask::KeyPadding(memory_pad),
            caches: vec![LayerCache::default(); s.decoder.len()],
            fed: Vec::new(),
            pe: sinusoidal_pe(model.cfg.max_symbol_len + 1, model.cfg.width),
        })
    }

    /// Logits after feeding `token` at the next position.
    fn feed(&mut self, token: u32) -> Vec<f64> {
        let s = self.model.symbol.as_ref().expect("symbol path checked in new");
        let pos = self.fed.len();
        if pos >= self.pe.rows {
            self.pe = sinusoidal_pe(2 * pos + 1, self.model.cfg.width);
        }
        let mut g = Graph::new(&self.model.store);
        let e = g.embedding(s.word_embedding, &[token]);
        let pe = g.input(self.pe.rows_slice(pos, 1));
        let mut h = g.add(e, pe);
        for (layer, cache) in s.decoder.iter().zip(&mut self.caches) {
            h = layer.step(&mut g, h, &self.memory, &self.memory_mask, cache);
        }
        let h = s.decoder_norm.forward(&mut g, h);
        let logits = s.logits.forward(&mut g, h);
        self.fed.push(token);
        g.value(logits).data.clone()
    }
}

impl NextToken for SymbolDecoderState<'_> {
    fn next_token(&mut self, prefix: &[u32]) -> u32 {
        if !prefix.starts_with(&self.fed) || prefix.len() == self.fed.len() {
            self.fed.clear();
            self.caches.iter_mut().for_each(|c| *c = LayerCache::default());
        }
        let mut logits = Vec::new();
        for &t in &prefix[self.fed.len()..] {
            logits = self.feed(t);
        }
        argmax(&logits)
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> u32 {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best as u32
}
