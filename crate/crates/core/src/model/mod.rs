//! The multimodal encoder/fusion/decoder network.
//!
//! Data path: `(t, u)` rows are embedded by one linear map and run through
//! self-attention. Symbol path: word embedding plus sinusoidal positions and
//! self-attention. Both are tagged with a modality vector, concatenated and
//! fused; the data slice of the fused sequence feeds a cross-attention-only
//! decoder evaluated at arbitrary query times, and the symbol slice feeds an
//! autoregressive decoder.

mod checkpoint;
mod decode;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::nn_core::{
    sinusoidal_pe, DecoderLayer, EncoderLayer, Graph, LayerNorm, Linear, Mask, Mat, NnError, ParamId, ParamStore, Var,
};
use crate::symbolic::{Vocabulary, EOS_ID, PAD_ID};

pub use checkpoint::{load_checkpoint, save_checkpoint, write_attention_csv, CheckpointHeader, CHECKPOINT_VERSION};
pub use decode::{greedy_decode, Greedy, NextToken, SymbolDecoderState};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("token id {0} outside the vocabulary")]
    UnknownToken(u32),
    #[error("data-only model has no symbol path")]
    NoSymbolPath,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Multimodal,
    /// Data encoder and data decoder only.
    DataOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProseConfig {
    pub width: usize,
    pub heads: usize,
    pub ffn: usize,
    pub data_encoder_layers: usize,
    pub symbol_encoder_layers: usize,
    pub fusion_layers: usize,
    pub data_decoder_layers: usize,
    pub symbol_decoder_layers: usize,
    pub vocab_size: usize,
    pub d_max: usize,
    pub max_symbol_len: usize,
    pub variant: Variant,
}

impl ProseConfig {
    pub fn full_scale(d_max: usize) -> Self {
        Self {
            width: 512,
            heads: 8,
            ffn: 2048,
            data_encoder_layers: 2,
            symbol_encoder_layers: 4,
            fusion_layers: 8,
            data_decoder_layers: 8,
            symbol_decoder_layers: 8,
            vocab_size: Vocabulary::default().len(),
            d_max,
            max_symbol_len: 512,
            variant: Variant::Multimodal,
        }
    }

    /// Width 64, FFN 256, two layers per stack.
    pub fn desk() -> Self {
        Self {
            width: 64,
            ffn: 256,
            data_encoder_layers: 2,
            symbol_encoder_layers: 2,
            fusion_layers: 2,
            data_decoder_layers: 2,
            symbol_decoder_layers: 2,
            max_symbol_len: 256,
            ..Self::full_scale(3)
        }
    }

    pub fn data_only(&self) -> Self {
        Self {
            variant: Variant::DataOnly,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(ModelError::ShapeMismatch(format!(
                "width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.d_max == 0 || self.vocab_size <= EOS_ID as usize || self.max_symbol_len == 0 {
            return Err(ModelError::ShapeMismatch(
                "empty d_max, vocabulary or symbol length".into(),
            ));
        }
        Ok(())
    }
}

/// Model-facing view of one sample: normalized inputs plus the statistics
/// that map normalized predictions back.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub times: Vec<f64>,
    /// `times.len() x d_max`, normalized; padded coordinates are 0.
    pub values: Vec<f64>,
    /// `true` for real coordinates.
    pub dims: Vec<bool>,
    /// Per-coordinate mean of the input window.
    pub mean: Vec<f64>,
    /// Root mean square of the raw input values, shared by all real
    /// coordinates; 1 on padded ones.
    pub scale: Vec<f64>,
    pub symbol: Vec<u32>,
}

/// Lower bound on the normalization scale.
pub const MIN_SCALE: f64 = 1e-6;

impl ModelInput {
    pub fn new(times: Vec<f64>, values: &[f64], dims: Vec<bool>, symbol: Vec<u32>) -> Result<Self, ModelError> {
        let d = dims.len();
        if d == 0 || values.len() != times.len() * d || times.is_empty() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} values for {} times x {} dims",
                values.len(),
                times.len(),
                d
            )));
        }
        let n = times.len() as f64;
        let mut mean = vec![0.0; d];
        let mut sum_sq = 0.0;
        for j in (0..d).filter(|&j| dims[j]) {
            let col = || values.iter().skip(j).step_by(d);
            mean[j] = col().sum::<f64>() / n;
            sum_sq += col().map(|v| v * v).sum::<f64>();
        }
        let true_dims = dims.iter().filter(|&&b| b).count().max(1) as f64;
        let rms = (sum_sq / (n * true_dims)).sqrt().max(MIN_SCALE);
        let scale: Vec<f64> = dims.iter().map(|&b| if b { rms } else { 1.0 }).collect();
        let values = values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let j = i % d;
                if dims[j] {
                    (v - mean[j]) / scale[j]
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Self {
            times,
            values,
            dims,
            mean,
            scale,
            symbol,
        })
    }

    pub fn from_sample(s: &Sample) -> Result<Self, ModelError> {
        Self::new(
            s.input_times.clone(),
            &s.input_values,
            s.mask.iter().map(|&m| m != 0).collect(),
            s.symbol_input.ids().to_vec(),
        )
    }

    pub fn d_max(&self) -> usize {
        self.dims.len()
    }
}

struct SymbolPath {
    word_embedding: ParamId,
    encoder: Vec<EncoderLayer>,
    encoder_norm: LayerNorm,
    modality: [ParamId; 2],
    fusion: Vec<EncoderLayer>,
    fusion_norm: LayerNorm,
    decoder: Vec<DecoderLayer>,
    decoder_norm: LayerNorm,
    logits: Linear,
}

pub struct Prose {
    pub cfg: ProseConfig,
    pub store: ParamStore,
    data_embedding: Linear,
    data_encoder: Vec<EncoderLayer>,
    data_encoder_norm: LayerNorm,
    symbol: Option<SymbolPath>,
    data_decoder: Vec<DecoderLayer>,
    data_decoder_norm: LayerNorm,
    data_head: Linear,
}

/// Encoder and fusion outputs of one sample.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// Memory of the data decoder.
    pub data: Var,
    /// Memory of the symbol decoder.
    pub symbol: Option<Var>,
    /// `true` for PAD positions of the symbol memory.
    pub symbol_pad: Vec<bool>,
    /// Attention-weight nodes of the fusion layers.
    pub fusion_attention: Vec<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub data: Var,
    pub symbol: Option<Var>,
}

fn stack(store: &mut ParamStore, name: &str, n: usize, cfg: &ProseConfig, rng: &mut ChaCha8Rng) -> Vec<EncoderLayer> {
    (0..n)
        .map(|i| EncoderLayer::new(store, &format!("{name}.{i}"), cfg.width, cfg.heads, cfg.ffn, rng))
        .collect()
}

fn decoder_stack(
    store: &mut ParamStore,
    name: &str,
    n: usize,
    self_attention: bool,
    cfg: &ProseConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<DecoderLayer> {
    (0..n)
        .map(|i| {
            DecoderLayer::new(
                store,
                &format!("{name}.{i}"),
                cfg.width,
                cfg.heads,
                cfg.ffn,
                self_attention,
                rng,
            )
        })
        .collect()
}

impl Prose {
    pub fn new(cfg: ProseConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let w = cfg.width;
        let data_embedding = Linear::new(&mut store, "data.embed", 1 + cfg.d_max, w, &mut rng);
        let data_encoder = stack(&mut store, "data.encoder", cfg.data_encoder_layers, &cfg, &mut rng);
        let data_encoder_norm = LayerNorm::new(&mut store, "data.encoder.norm", w);
        let symbol = match cfg.variant {
            Variant::DataOnly => None,
            Variant::Multimodal => {
                let word_embedding = store.add_uniform("symbol.embed", cfg.vocab_size, w, 3f64.sqrt(), &mut rng);
                let encoder = stack(&mut store, "symbol.encoder", cfg.symbol_encoder_layers, &cfg, &mut rng);
                let encoder_norm = LayerNorm::new(&mut store, "symbol.encoder.norm", w);
                let bound = 1.0 / (w as f64).sqrt();
                let modality = [
                    store.add_uniform("fusion.modality.data", 1, w, bound, &mut rng),
                    store.add_uniform("fusion.modality.symbol", 1, w, bound, &mut rng),
                ];
                let fusion = stack(&mut store, "fusion", cfg.fusion_layers, &cfg, &mut rng);
                let fusion_norm = LayerNorm::new(&mut store, "fusion.norm", w);
                let decoder = decoder_stack(
                    &mut store,
                    "symbol.decoder",
                    cfg.symbol_decoder_layers,
                    true,
                    &cfg,
                    &mut rng,
                );
                let decoder_norm = LayerNorm::new(&mut store, "symbol.decoder.norm", w);
                let logits = Linear::new(&mut store, "symbol.logits", w, cfg.vocab_size, &mut rng);
                Some(SymbolPath {
                    word_embedding,
                    encoder,
                    encoder_norm,
                    modality,
                    fusion,
                    fusion_norm,
                    decoder,
                    decoder_norm,
                    logits,
                })
            }
        };
        let data_decoder = decoder_stack(
            &mut store,
            "data.decoder",
            cfg.data_decoder_layers,
            false,
            &cfg,
            &mut rng,
        );
        let data_decoder_norm = LayerNorm::new(&mut store, "data.decoder.norm", w);
        let data_head = Linear::new(&mut store, "data.head", w, cfg.d_max, &mut rng);
        Ok(Self {
            cfg,
            store,
            data_embedding,
            data_encoder,
            data_encoder_norm,
            symbol,
            data_decoder,
            data_decoder_norm,
            data_head,
        })
    }

    pub fn has_symbol_path(&self) -> bool {
        self.symbol.is_some()
    }

    /// Parameter ids of the symbol decoder and its logits head.
    pub fn symbol_head_params(&self) -> Vec<ParamId> {
        self.store
            .ids()
            .filter(|&p| {
                let n = self.store.name(p);
                n.starts_with("symbol.decoder") || n.starts_with("symbol.logits")
            })
            .collect()
    }

    fn check_input(&self, x: &ModelInput) -> Result<(), ModelError> {
        if x.d_max() != self.cfg.d_max {
            return Err(ModelError::ShapeMismatch(format!(
                "input has {} coordinates, model expects {}",
                x.d_max(),
                self.cfg.d_max
            )));
        }
        self.check_tokens(&x.symbol)
    }

    fn check_tokens(&self, ids: &[u32]) -> Result<(), ModelError> {
        match ids.iter().find(|&&id| id as usize >= self.cfg.vocab_size) {
            Some(&id) => Err(ModelError::UnknownToken(id)),
            None => Ok(()),
        }
    }

    /// Linear embedding of `(t, values)` rows; `values = None` embeds the
    /// bare time with zero state, as used for queries.
    fn embed_points(&self, g: &mut Graph, times: &[f64], values: Option<&[f64]>) -> Var {
        let d = self.cfg.d_max;
        let m = Mat::from_fn(times.len(), 1 + d, |i, j| match (j, values) {
            (0, _) => times[i],
            (_, Some(v)) => v[i * d + j - 1],
            (_, None) => 0.0,
        });
        let x = g.input(m);
        self.data_embedding.forward(g, x)
    }

    /// Data features: one row per input point.
    pub fn encode_data(&self, g: &mut Graph, x: &ModelInput) -> Result<Var, ModelError> {
        self.check_input(x)?;
        let mut h = self.embed_points(g, &x.times, Some(&x.values));
        for layer in &self.data_encoder {
            h = layer.forward(g, h, &Mask::None).0;
        }
        Ok(self.data_encoder_norm.forward(g, h))
    }

    fn embed_tokens(&self, g: &mut Graph, ids: &[u32]) -> Result<Var, ModelError> {
        let s = self.symbol.as_ref().ok_or(ModelError::NoSymbolPath)?;
        self.check_tokens(ids)?;
        let e = g.embedding(s.word_embedding, ids);
        let pe = g.input(sinusoidal_pe(ids.len(), self.cfg.width));
        Ok(g.add(e, pe))
    }

    /// Symbol features: one row per token; PAD keys are masked.
    pub fn encode_symbol(&self, g: &mut Graph, ids: &[u32]) -> Result<Var, ModelError> {
        let s = self.symbol.as_ref().ok_or(ModelError::NoSymbolPath)?;
        if ids.is_empty() {
            return Err(ModelError::ShapeMismatch("empty symbol input".into()));
        }
        let mut h = self.embed_tokens(g, ids)?;
        let mask = pad_mask(ids);
        for layer in &s.encoder {
            h = layer.forward(g, h, &mask).0;
        }
        Ok(s.encoder_norm.forward(g, h))
    }

    /// Tags both feature sequences with their modality vector, runs the
    /// fusion stack over the concatenation and splits it back. With
    /// `isolate` the two modalities cannot attend to each other.
    pub fn fuse(
        &self,
        g: &mut Graph,
        data: Var,
        symbol: Var,
        symbol_ids: &[u32],
        isolate: bool,
    ) -> Result<(Var, Var, Vec<Var>), ModelError> {
        let s = self.symbol.as_ref().ok_or(ModelError::NoSymbolPath)?;
        let (nd, ns) = (g.value(data).rows, g.value(symbol).rows);
        if g.value(data).cols != g.value(symbol).cols || ns != symbol_ids.len() {
            return Err(ModelError::ShapeMismatch("fusion inputs".into()));
        }
        let md = g.param(s.modality[0]);
        let ms = g.param(s.modality[1]);
        let a = g.add_row(data, md);
        let b = g.add_row(symbol, ms);
        let mut h = g.concat_rows(a, b);
        let n = nd + ns;
        let pad: Vec<bool> = (0..n).map(|j| j >= nd && symbol_ids[j - nd] == PAD_ID).collect();
        let mask = if isolate {
            Mask::Dense(
                (0..n * n)
                    .map(|k| {
                        let (i, j) = (k / n, k % n);
                        pad[j] || (i < nd) != (j < nd)
                    })
                    .collect(),
            )
        } else {
            Mask::KeyPadding(pad)
        };
        let mut weights = Vec::with_capacity(s.fusion.len());
        for layer in &s.fusion {
            let (out, w) = layer.forward(g, h, &mask);
            h = out;
            weights.push(w);
        }
        let h = s.fusion_norm.forward(g, h);
        Ok((g.slice_rows(h, 0, nd), g.slice_rows(h, nd, ns), weights))
    }

    pub fn encode(&self, g: &mut Graph, x: &ModelInput) -> Result<Encoded, ModelError> {
        let data = self.encode_data(g, x)?;
        if self.symbol.is_none() {
            return Ok(Encoded {
                data,
                symbol: None,
                symbol_pad: Vec::new(),
                fusion_attention: Vec::new(),
            });
        }
        let sym = self.encode_symbol(g, &x.symbol)?;
        let (data, symbol, fusion_attention) = self.fuse(g, data, sym, &x.symbol, false)?;
        Ok(Encoded {
            data,
            symbol: Some(symbol),
            symbol_pad: x.symbol.iter().map(|&t| t == PAD_ID).collect(),
            fusion_attention,
        })
    }

    /// Normalized predictions at `query_times`, `len x d_max`. Every query
    /// row is computed independently of the others.
    pub fn decode_data_normalized(&self, g: &mut Graph, memory: Var, query_times: &[f64]) -> Result<Var, ModelError> {
        if query_times.is_empty() {
            return Err(ModelError::ShapeMismatch("no query times".into()));
        }
        let mut h = self.embed_points(g, query_times, None);
        for layer in &self.data_decoder {
            h = layer.forward(g, h, memory, &Mask::None, &Mask::None).0;
        }
        let h = self.data_decoder_norm.forward(g, h);
        Ok(self.data_head.forward(g, h))
    }

    /// Predictions at `query_times` in the units of the input values.
    pub fn decode_data(
        &self,
        g: &mut Graph,
        memory: Var,
        x: &ModelInput,
        query_times: &[f64],
    ) -> Result<Var, ModelError> {
        let h = self.decode_data_normalized(g, memory, query_times)?;
        let scale = g.input(Mat::from_vec(1, x.d_max(), x.scale.clone()));
        let mean = g.input(Mat::from_vec(1, x.d_max(), x.mean.clone()));
        let h = g.mul_row(h, scale);
        Ok(g.add_row(h, mean))
    }

    /// Logits for every position of `prefix` (SOS-framed, unshifted).
    pub fn decode_symbol_teacher(
        &self,
        g: &mut Graph,
        memory: Var,
        memory_pad: &[bool],
        prefix: &[u32],
    ) -> Result<Var, ModelError> {
        let s = self.symbol.as_ref().ok_or(ModelError::NoSymbolPath)?;
        if prefix.is_empty() || g.value(memory).rows != memory_pad.len() {
            return Err(ModelError::ShapeMismatch("symbol decoder inputs".into()));
        }
        let mut h = self.embed_tokens(g, prefix)?;
        let mem_mask = Mask::KeyPadding(memory_pad.to_vec());
        for layer in &s.decoder {
            h = layer.forward(g, h, memory, &Mask::Causal, &mem_mask).0;
        }
        let h = s.decoder_norm.forward(g, h);
        Ok(s.logits.forward(g, h))
    }

    /// `alpha * L_data + beta * L_symbol` for one sample. The symbol term is
    /// omitted for the data-only variant.
    pub fn loss(&self, g: &mut Graph, sample: &Sample, alpha: f64, beta: f64) -> Result<LossVars, ModelError> {
        let x = ModelInput::from_sample(sample)?;
        let enc = self.encode(g, &x)?;
        let pred = self.decode_data(g, enc.data, &x, &sample.query_times)?;
        let labels = Mat::from_vec(sample.query_times.len(), x.d_max(), sample.labels.clone());
        let data = g.rel_squared(pred, &labels, &x.dims);
        let weighted = g.scale(data, alpha);
        let Some(memory) = enc.symbol else {
            return Ok(LossVars {
                total: weighted,
                data,
                symbol: None,
            });
        };
        let framed = sample.symbol_target.framed();
        let ids = framed.ids();
        let logits = self.decode_symbol_teacher(g, memory, &enc.symbol_pad, &ids[..ids.len() - 1])?;
        let symbol = g.cross_entropy(logits, &ids[1..], PAD_ID);
        let ws = g.scale(symbol, beta);
        Ok(LossVars {
            total: g.add(weighted, ws),
            data,
            symbol: Some(symbol),
        })
    }

    /// Trajectory prediction and greedy equation decoding for one input.
    pub fn predict(&self, x: &ModelInput, query_times: &[f64], max_len: usize) -> Result<Prediction, ModelError> {
        let mut g = Graph::new(&self.store);
        let enc = self.encode(&mut g, x)?;
        let pred = self.decode_data(&mut g, enc.data, x, query_times)?;
        let trajectory = g.value(pred).clone();
        let symbol = match enc.symbol {
            Some(m) => {
                let mut state = SymbolDecoderState::new(self, g.value(m).clone(), enc.symbol_pad.clone())?;
                Some(greedy_decode(&mut state, max_len))
            }
            None => None,
        };
        Ok(Prediction { trajectory, symbol })
    }

    /// Trajectory prediction only.
    pub fn predict_trajectory(&self, x: &ModelInput, query_times: &[f64]) -> Result<Mat, ModelError> {
        let mut g = Graph::new(&self.store);
        let enc = self.encode(&mut g, x)?;
        let pred = self.decode_data(&mut g, enc.data, x, query_times)?;
        Ok(g.value(pred).clone())
    }

    /// Per-layer, per-head fusion attention weights for one input.
    pub fn export_attention(&self, x: &ModelInput) -> Result<Vec<Vec<Mat>>, ModelError> {
        let mut g = Graph::new(&self.store);
        let enc = self.encode(&mut g, x)?;
        Ok(enc
            .fusion_attention
            .iter()
            .map(|&v| g.attention_probs(v).expect("fusion attention node").to_vec())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `query count x d_max`.
    pub trajectory: Mat,
    pub symbol: Option<Greedy>,
}

fn pad_mask(ids: &[u32]) -> Mask {
    if ids.contains(&PAD_ID) {
        Mask::KeyPadding(ids.iter().map(|&t| t == PAD_ID).collect())
    } else {
        Mask::None
    }
}

#[cfg(test)]
mod tests;
