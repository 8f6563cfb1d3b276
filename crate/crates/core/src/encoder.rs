//! Compact pre-norm transformer encoder.
//!
//! The same parameter layout serves as the trainable context encoder and, as
//! a frozen copy of the initial weights, as the schema encoder for slot and
//! value strings.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, TokenSequence, Vocabulary, CLS, PAD, SEP};
use crate::error::{Error, Result};
use crate::nn::{
    dropout_mask, gelu, gelu_backward, layer_norm, layer_norm_backward, linear, linear_backward,
    AttentionCache, AttentionParams, DropoutPlan, LayerNormCache,
};
use crate::params::ParamSet;

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout_rate: f64,
    pub max_len: usize,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn new(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            d_model: 128,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            dropout_rate: 0.1,
            max_len: 512,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub ln1_gamma: Array1<f64>,
    pub ln1_beta: Array1<f64>,
    pub attention: AttentionParams,
    pub ln2_gamma: Array1<f64>,
    pub ln2_beta: Array1<f64>,
    pub w_ff1: Array2<f64>,
    pub b_ff1: Array1<f64>,
    pub w_ff2: Array2<f64>,
    pub b_ff2: Array1<f64>,
}

impl EncoderLayer {
    fn zeros(d: usize, d_ff: usize) -> Self {
        EncoderLayer {
            ln1_gamma: Array1::zeros(d),
            ln1_beta: Array1::zeros(d),
            attention: AttentionParams::zeros(d),
            ln2_gamma: Array1::zeros(d),
            ln2_beta: Array1::zeros(d),
            w_ff1: Array2::zeros((d, d_ff)),
            b_ff1: Array1::zeros(d_ff),
            w_ff2: Array2::zeros((d_ff, d)),
            b_ff2: Array1::zeros(d),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub token_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub layers: Vec<EncoderLayer>,
    pub final_gamma: Array1<f64>,
    pub final_beta: Array1<f64>,
}

impl ParamSet for EncoderParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, ArrayViewD<'a, f64>)) {
        f("token_embedding", self.token_embedding.view().into_dyn());
        f("position_embedding", self.position_embedding.view().into_dyn());
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            f(&format!("{p}.ln1_gamma"), l.ln1_gamma.view().into_dyn());
            f(&format!("{p}.ln1_beta"), l.ln1_beta.view().into_dyn());
            l.attention.visit(&format!("{p}.attention"), f);
            f(&format!("{p}.ln2_gamma"), l.ln2_gamma.view().into_dyn());
            f(&format!("{p}.ln2_beta"), l.ln2_beta.view().into_dyn());
            f(&format!("{p}.w_ff1"), l.w_ff1.view().into_dyn());
            f(&format!("{p}.b_ff1"), l.b_ff1.view().into_dyn());
            f(&format!("{p}.w_ff2"), l.w_ff2.view().into_dyn());
            f(&format!("{p}.b_ff2"), l.b_ff2.view().into_dyn());
        }
        f("final_gamma", self.final_gamma.view().into_dyn());
        f("final_beta", self.final_beta.view().into_dyn());
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>)) {
        f("token_embedding", self.token_embedding.view_mut().into_dyn());
        f("position_embedding", self.position_embedding.view_mut().into_dyn());
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = format!("layers.{i}");
            f(&format!("{p}.ln1_gamma"), l.ln1_gamma.view_mut().into_dyn());
            f(&format!("{p}.ln1_beta"), l.ln1_beta.view_mut().into_dyn());
            l.attention.visit_mut(&format!("{p}.attention"), f);
            f(&format!("{p}.ln2_gamma"), l.ln2_gamma.view_mut().into_dyn());
            f(&format!("{p}.ln2_beta"), l.ln2_beta.view_mut().into_dyn());
            f(&format!("{p}.w_ff1"), l.w_ff1.view_mut().into_dyn());
            f(&format!("{p}.b_ff1"), l.b_ff1.view_mut().into_dyn());
            f(&format!("{p}.w_ff2"), l.w_ff2.view_mut().into_dyn());
            f(&format!("{p}.b_ff2"), l.b_ff2.view_mut().into_dyn());
        }
        f("final_gamma", self.final_gamma.view_mut().into_dyn());
        f("final_beta", self.final_beta.view_mut().into_dyn());
    }
}

impl EncoderParams {
    /// All-zero parameters with the config's shapes (gradient buffers).
    pub fn zeros(config: &EncoderConfig) -> Self {
        let d = config.d_model;
        EncoderParams {
            config: config.clone(),
            token_embedding: Array2::zeros((config.vocab_size, d)),
            position_embedding: Array2::zeros((config.max_len, d)),
            layers: (0..config.n_layers)
                .map(|_| EncoderLayer::zeros(d, config.d_ff))
                .collect(),
            final_gamma: Array1::zeros(d),
            final_beta: Array1::zeros(d),
        }
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams::zeros(&self.config)
    }
}

/// Normal(0, 0.02) weights, zero biases, unit layer-norm scales.
pub fn init_encoder(config: &EncoderConfig) -> Result<EncoderParams> {
    config.validate()?;
    let mut params = EncoderParams::zeros(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    params.visit_mut(&mut |name, mut t| {
        let leaf = name.rsplit('.').next().unwrap_or(name);
        if leaf.ends_with("gamma") {
            t.fill(1.0);
        } else if leaf.starts_with("w_") || leaf.ends_with("embedding") {
            t.mapv_inplace(|_| normal.sample(&mut rng));
        }
    });
    Ok(params)
}

/// Token-level representations of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub hidden: Array2<f64>,
    /// `true` for positions that may be attended to.
    pub mask: Vec<bool>,
}

impl EncoderOutput {
    pub fn cls(&self) -> ArrayView1<'_, f64> {
        self.hidden.row(0)
    }

    pub fn len(&self) -> usize {
        self.hidden.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.nrows() == 0
    }
}

struct LayerCache {
    ln1: LayerNormCache,
    attention: AttentionCache,
    attn_mask: Option<Array2<f64>>,
    ln2: LayerNormCache,
    ln2_out: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
    ff_mask: Option<Array2<f64>>,
}

/// Activations retained for the backward pass.
pub struct EncoderCache {
    ids: Vec<u32>,
    embed_mask: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
    final_ln: LayerNormCache,
}

fn apply_mask(x: &mut Array2<f64>, mask: &Option<Array2<f64>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

impl EncoderParams {
    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.len() > self.config.max_len {
            return Err(Error::TooLong {
                len: ids.len(),
                max_len: self.config.max_len,
            });
        }
        if ids.is_empty() {
            return Err(Error::Config("cannot encode an empty sequence".into()));
        }
        if let Some(&id) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn raw_embeddings(&self, ids: &[u32]) -> Array2<f64> {
        let mut x = Array2::zeros((ids.len(), self.config.d_model));
        for (p, (&id, mut row)) in ids.iter().zip(x.rows_mut()).enumerate() {
            row.assign(&self.token_embedding.row(id as usize));
            row += &self.position_embedding.row(p);
        }
        x
    }

    /// Token + position embeddings after the embedding dropout of `plan`.
    pub fn embed(&self, ids: &[u32], plan: DropoutPlan) -> Result<Array2<f64>> {
        self.check_ids(ids)?;
        let mut x = self.raw_embeddings(ids);
        if let Some(mut rng) = plan.rng(self.config.dropout_rate) {
            x *= &dropout_mask(&mut rng, ids.len(), self.config.d_model, self.config.dropout_rate);
        }
        Ok(x)
    }

    /// Forward pass over raw ids; PAD positions are masked out as keys.
    pub fn forward_ids(&self, ids: &[u32], plan: DropoutPlan) -> Result<(EncoderOutput, EncoderCache)> {
        self.check_ids(ids)?;
        let cfg = &self.config;
        let n = ids.len();
        let d = cfg.d_model;
        let mask: Vec<bool> = ids.iter().map(|&i| i != PAD).collect();
        let mut rng = plan.rng(cfg.dropout_rate);
        let mut sample = |rows, cols| rng.as_mut().map(|r| dropout_mask(r, rows, cols, cfg.dropout_rate));

        let mut x = self.raw_embeddings(ids);
        let embed_mask = sample(n, d);
        apply_mask(&mut x, &embed_mask);

        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (a, ln1) = layer_norm(&x, &layer.ln1_gamma, &layer.ln1_beta);
            let (mut z, attention) = layer.attention.forward(&a, &a, &mask, cfg.n_heads);
            let attn_mask = sample(n, d);
            apply_mask(&mut z, &attn_mask);
            x += &z;

            let (b, ln2) = layer_norm(&x, &layer.ln2_gamma, &layer.ln2_beta);
            let ff_pre = linear(&b.view(), &layer.w_ff1, &layer.b_ff1);
            let ff_act = gelu(&ff_pre);
            let mut f = linear(&ff_act.view(), &layer.w_ff2, &layer.b_ff2);
            let ff_mask = sample(n, d);
            apply_mask(&mut f, &ff_mask);
            x += &f;

            layer_caches.push(LayerCache {
                ln1,
                attention,
                attn_mask,
                ln2,
                ln2_out: b,
                ff_pre,
                ff_act,
                ff_mask,
            });
        }
        let (hidden, final_ln) = layer_norm(&x, &self.final_gamma, &self.final_beta);
        let cache = EncoderCache {
            ids: ids.to_vec(),
            embed_mask,
            layers: layer_caches,
            final_ln,
        };
        Ok((EncoderOutput { hidden, mask }, cache))
    }

    /// Accumulates parameter gradients for `d_hidden = dL/dH` into `grads`.
    pub fn backward(&self, cache: &EncoderCache, d_hidden: &Array2<f64>, grads: &mut EncoderParams) {
        let mut dx = layer_norm_backward(
            d_hidden,
            &cache.final_ln,
            &self.final_gamma,
            &mut grads.final_gamma,
            &mut grads.final_beta,
        );
        for ((layer, lc), g) in self
            .layers
            .iter()
            .zip(&cache.layers)
            .zip(grads.layers.iter_mut())
            .rev()
        {
            let mut d_f = dx.clone();
            apply_mask(&mut d_f, &lc.ff_mask);
            let d_act = linear_backward(&lc.ff_act.view(), &layer.w_ff2, &d_f, &mut g.w_ff2, &mut g.b_ff2);
            let d_pre = gelu_backward(&lc.ff_pre, &d_act);
            let d_b = linear_backward(&lc.ln2_out.view(), &layer.w_ff1, &d_pre, &mut g.w_ff1, &mut g.b_ff1);
            dx += &layer_norm_backward(&d_b, &lc.ln2, &layer.ln2_gamma, &mut g.ln2_gamma, &mut g.ln2_beta);

            let mut d_z = dx.clone();
            apply_mask(&mut d_z, &lc.attn_mask);
            let (d_q, d_kv) = layer.attention.backward(&lc.attention, &d_z, &mut g.attention, true);
            let d_a = d_kv + d_q.expect("self-attention query gradient");
            dx += &layer_norm_backward(&d_a, &lc.ln1, &layer.ln1_gamma, &mut g.ln1_gamma, &mut g.ln1_beta);
        }
        apply_mask(&mut dx, &cache.embed_mask);
        for (p, (&id, row)) in cache.ids.iter().zip(dx.rows()).enumerate() {
            let mut t = grads.token_embedding.row_mut(id as usize);
            t += &row;
            let mut q = grads.position_embedding.row_mut(p);
            q += &row;
        }
    }
}

/// `H = Encoder(C)` for a serialized context.
pub fn encode_context(params: &EncoderParams, tokens: &TokenSequence, plan: DropoutPlan) -> Result<EncoderOutput> {
    params.forward_ids(tokens.ids(), plan).map(|(out, _)| out)
}

/// Frozen encoder for slot and value strings, with a per-string cache.
pub struct SchemaEncoder {
    params: Arc<EncoderParams>,
    cache: Mutex<HashMap<String, Array1<f64>>>,
}

impl SchemaEncoder {
    pub fn new(params: Arc<EncoderParams>) -> Self {
        SchemaEncoder {
            params,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    /// CLS vector of `[CLS] text [SEP]` with dropout off.
    pub fn encode(&self, text: &str, vocab: &Vocabulary) -> Array1<f64> {
        if let Some(v) = self.cache.lock().expect("schema cache lock").get(text) {
            return v.clone();
        }
        let mut ids = vec![CLS];
        let room = self.params.config.max_len.saturating_sub(2);
        ids.extend(tokenize(text, vocab).into_iter().take(room));
        ids.push(SEP);
        let (out, _) = self
            .params
            .forward_ids(&ids, DropoutPlan::off())
            .expect("schema input fits the encoder");
        let v = out.cls().to_owned();
        self.cache
            .lock()
            .expect("schema cache lock")
            .insert(text.to_string(), v.clone());
        v
    }

    pub fn cached_len(&self) -> usize {
        self.cache.lock().expect("schema cache lock").len()
    }
}

/// `encode_schema` as a free function over a frozen encoder.
pub fn encode_schema(schema: &SchemaEncoder, text: &str, vocab: &Vocabulary) -> Array1<f64> {
    schema.encode(text, vocab)
}

/// Slice of the first `n` rows, used when callers only need unpadded rows.
pub fn unpadded(out: &EncoderOutput) -> ndarray::ArrayView2<'_, f64> {
    let n = out.mask.iter().rposition(|&m| m).map_or(0, |i| i + 1);
    out.hidden.slice(s![..n, ..])
}
