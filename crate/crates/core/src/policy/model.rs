//! The per-position forward algorithm, written once and shared by the
//! inference engine and the differentiable graph.
//!
//! Both evaluation paths implement [`Backend`] and route arithmetic through
//! the same ordered kernels, so for identical precision settings they
//! produce bitwise-identical log-probabilities. Recorded rollout
//! probabilities, recomputed scores, and training-time values can therefore
//! be compared exactly.

use crate::autodiff::kernels::HeadKernel;

use super::config::PolicyConfig;

/// Which projection weight of a layer to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Proj {
    Q,
    K,
    V,
    O,
    Ff1,
    Ff2,
}

/// Value-level operations a forward pass needs. `V` is a plain tensor for
/// the engine and a graph node for training.
pub(crate) trait Backend {
    type V: Clone;
    fn embed_row(&mut self, token: usize) -> Self::V;
    fn pos_row(&mut self, position: usize) -> Self::V;
    fn proj(&mut self, layer: usize, which: Proj, x: &Self::V) -> Self::V;
    fn head(&mut self, x: &Self::V, kernel: HeadKernel) -> Self::V;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn scale(&mut self, a: &Self::V, c: f64) -> Self::V;
    fn tanh(&mut self, a: &Self::V) -> Self::V;
    fn rms_norm(&mut self, a: &Self::V) -> Self::V;
    fn softmax(&mut self, a: &Self::V) -> Self::V;
    fn log_softmax(&mut self, a: &Self::V) -> Self::V;
    fn slice(&mut self, a: &Self::V, offset: usize, len: usize) -> Self::V;
    fn concat(&mut self, parts: &[Self::V]) -> Self::V;
    fn outer(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn vecmat(&mut self, x: &Self::V, m: &Self::V) -> Self::V;
    fn dot(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn attn_mix(&mut self, weights: &Self::V, values: &[Self::V]) -> Self::V;
    fn zeros(&mut self, rows: usize, cols: usize) -> Self::V;
}

/// Recurrent state of one attention block.
pub(crate) enum LayerState<V> {
    /// Per-head decayed outer-product state, `S_0 = 0`.
    Linear { state: Vec<V> },
    /// Per-head key/value caches over all positions seen so far.
    Softmax { keys: Vec<Vec<V>>, vals: Vec<Vec<V>> },
}

/// Full incremental state of a forward pass.
pub(crate) struct ModelState<V> {
    pub layers: Vec<LayerState<V>>,
    /// Number of tokens consumed so far (the next step's position index).
    pub pos: usize,
}

impl<V> ModelState<V> {
    pub fn new<B: Backend<V = V>>(backend: &mut B, cfg: &PolicyConfig) -> Self {
        let dh = cfg.head_dim();
        let layers = (0..cfg.n_layers)
            .map(|l| {
                if cfg.is_softmax_layer(l) {
                    LayerState::Softmax {
                        keys: (0..cfg.n_heads).map(|_| Vec::new()).collect(),
                        vals: (0..cfg.n_heads).map(|_| Vec::new()).collect(),
                    }
                } else {
                    LayerState::Linear {
                        state: (0..cfg.n_heads).map(|_| backend.zeros(dh, dh)).collect(),
                    }
                }
            })
            .collect();
        Self { layers, pos: 0 }
    }
}

/// Consume one token and return the log-probability vector for the next
/// position. Callers are responsible for range/position checks.
pub(crate) fn step<B: Backend>(
    backend: &mut B,
    cfg: &PolicyConfig,
    state: &mut ModelState<B::V>,
    token: u32,
    head_kernel: HeadKernel,
) -> B::V {
    let position = state.pos;
    let dh = cfg.head_dim();
    let mut x = backend.embed_row(token as usize);

    for l in 0..cfg.n_layers {
        // Pre-norm attention; the learned absolute position signal feeds
        // only softmax blocks (linear blocks get recency from decay).
        let normed = backend.rms_norm(&x);
        let h = if cfg.is_softmax_layer(l) {
            let p = backend.pos_row(position);
            backend.add(&normed, &p)
        } else {
            normed
        };
        let q = backend.proj(l, Proj::Q, &h);
        let k = backend.proj(l, Proj::K, &h);
        let v = backend.proj(l, Proj::V, &h);

        let mut head_outs = Vec::with_capacity(cfg.n_heads);
        match &mut state.layers[l] {
            LayerState::Linear { state: s } => {
                for hh in 0..cfg.n_heads {
                    let qh = backend.slice(&q, hh * dh, dh);
                    let kh = backend.slice(&k, hh * dh, dh);
                    let vh = backend.slice(&v, hh * dh, dh);
                    let decayed = backend.scale(&s[hh], cfg.decay(l, hh));
                    let kv = backend.outer(&kh, &vh);
                    let new_state = backend.add(&decayed, &kv);
                    head_outs.push(backend.vecmat(&qh, &new_state));
                    s[hh] = new_state;
                }
            }
            LayerState::Softmax { keys, vals } => {
                let inv_sqrt = 1.0 / (dh as f64).sqrt();
                for hh in 0..cfg.n_heads {
                    let qh = backend.slice(&q, hh * dh, dh);
                    let kh = backend.slice(&k, hh * dh, dh);
                    let vh = backend.slice(&v, hh * dh, dh);
                    keys[hh].push(kh);
                    vals[hh].push(vh);
                    let mut scores = Vec::with_capacity(keys[hh].len());
                    for kj in &keys[hh] {
                        let s = backend.dot(&qh, kj);
                        scores.push(backend.scale(&s, inv_sqrt));
                    }
                    let score_vec = backend.concat(&scores);
                    let weights = backend.softmax(&score_vec);
                    head_outs.push(backend.attn_mix(&weights, &vals[hh]));
                }
            }
        }

        let merged = backend.concat(&head_outs);
        let attn = backend.proj(l, Proj::O, &merged);
        x = backend.add(&x, &attn);

        let f = backend.rms_norm(&x);
        let f1 = backend.proj(l, Proj::Ff1, &f);
        let f1 = backend.tanh(&f1);
        let f2 = backend.proj(l, Proj::Ff2, &f1);
        x = backend.add(&x, &f2);
    }

    let final_norm = backend.rms_norm(&x);
    let logits = backend.head(&final_norm, head_kernel);
    state.pos += 1;
    backend.log_softmax(&logits)
}

/// Head kernel to use for a (head precision, eval mode) pair.
pub(crate) fn head_kernel_for(
    precision: super::config::HeadPrecision,
    mode: super::config::EvalMode,
) -> HeadKernel {
    use super::config::{EvalMode, HeadPrecision};
    match (precision, mode) {
        (HeadPrecision::F64, _) => HeadKernel::Full64,
        (HeadPrecision::F32, EvalMode::Train) => HeadKernel::F32Train,
        (HeadPrecision::F32, EvalMode::Infer) => HeadKernel::F32InferReduced,
    }
}
