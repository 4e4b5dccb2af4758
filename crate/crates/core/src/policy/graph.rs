//! Differentiable forward evaluation on a [`Tape`].
//!
//! Performs the same arithmetic as [`super::engine`] (same kernels, same
//! order); the only difference is that values are graph nodes so losses can
//! be backpropagated to every parameter.

use crate::autodiff::kernels::HeadKernel;
use crate::autodiff::{Tape, Var};

use super::config::{EvalMode, PolicyConfig, BOS_TOKEN};
use super::model::{self, Backend, ModelState, Proj};
use super::params::PolicyParams;
use super::PolicyError;

struct LayerVars<'t> {
    wq: Var<'t>,
    wk: Var<'t>,
    wv: Var<'t>,
    wo: Var<'t>,
    w1: Var<'t>,
    w2: Var<'t>,
}

struct GraphBackend<'t> {
    embed: Var<'t>,
    pos_embed: Var<'t>,
    layers: Vec<LayerVars<'t>>,
    head: Var<'t>,
}

impl<'t> Backend for GraphBackend<'t> {
    type V = Var<'t>;

    fn embed_row(&mut self, token: usize) -> Var<'t> {
        self.embed.row(token)
    }

    fn pos_row(&mut self, position: usize) -> Var<'t> {
        self.pos_embed.row(position)
    }

    fn proj(&mut self, layer: usize, which: Proj, x: &Var<'t>) -> Var<'t> {
        let l = &self.layers[layer];
        let w = match which {
            Proj::Q => l.wq,
            Proj::K => l.wk,
            Proj::V => l.wv,
            Proj::O => l.wo,
            Proj::Ff1 => l.w1,
            Proj::Ff2 => l.w2,
        };
        w.matvec(*x)
    }

    fn head(&mut self, x: &Var<'t>, kernel: HeadKernel) -> Var<'t> {
        self.head.head_matvec(*x, kernel)
    }

    fn add(&mut self, a: &Var<'t>, b: &Var<'t>) -> Var<'t> {
        a.add(*b)
    }

    fn scale(&mut self, a: &Var<'t>, c: f64) -> Var<'t> {
        a.scale(c)
    }

    fn tanh(&mut self, a: &Var<'t>) -> Var<'t> {
        a.tanh()
    }

    fn rms_norm(&mut self, a: &Var<'t>) -> Var<'t> {
        a.rms_norm()
    }

    fn softmax(&mut self, a: &Var<'t>) -> Var<'t> {
        a.softmax()
    }

    fn log_softmax(&mut self, a: &Var<'t>) -> Var<'t> {
        a.log_softmax()
    }

    fn slice(&mut self, a: &Var<'t>, offset: usize, len: usize) -> Var<'t> {
        a.slice(offset, len)
    }

    fn concat(&mut self, parts: &[Var<'t>]) -> Var<'t> {
        parts[0].tape().concat(parts)
    }

    fn outer(&mut self, a: &Var<'t>, b: &Var<'t>) -> Var<'t> {
        a.outer(*b)
    }

    fn vecmat(&mut self, x: &Var<'t>, m: &Var<'t>) -> Var<'t> {
        x.vecmat(*m)
    }

    fn dot(&mut self, a: &Var<'t>, b: &Var<'t>) -> Var<'t> {
        a.dot(*b)
    }

    fn attn_mix(&mut self, weights: &Var<'t>, values: &[Var<'t>]) -> Var<'t> {
        weights.tape().attn_mix(*weights, values)
    }

    fn zeros(&mut self, rows: usize, cols: usize) -> Var<'t> {
        self.embed
            .tape()
            .constant(crate::autodiff::Tensor::zeros(vec![rows, cols]))
    }
}

/// Differentiable policy evaluation over one tape.
///
/// Parameters become tape leaves at construction; gradient tensors are read
/// back in the canonical [`PolicyParams::tensors`] order via
/// [`GraphPolicy::param_vars`].
pub struct GraphPolicy<'t> {
    config: PolicyConfig,
    backend: GraphBackend<'t>,
    state: ModelState<Var<'t>>,
    head_kernel: HeadKernel,
}

impl<'t> GraphPolicy<'t> {
    pub fn new(tape: &'t Tape, params: &PolicyParams, mode: EvalMode) -> Self {
        let embed = tape.leaf(params.embed.clone());
        let pos_embed = tape.leaf(params.pos_embed.clone());
        let layers = params
            .layers
            .iter()
            .map(|l| LayerVars {
                wq: tape.leaf(l.wq.clone()),
                wk: tape.leaf(l.wk.clone()),
                wv: tape.leaf(l.wv.clone()),
                wo: tape.leaf(l.wo.clone()),
                w1: tape.leaf(l.w1.clone()),
                w2: tape.leaf(l.w2.clone()),
            })
            .collect();
        let head = tape.leaf(params.head.clone());
        let mut backend = GraphBackend {
            embed,
            pos_embed,
            layers,
            head,
        };
        let state = ModelState::new(&mut backend, &params.config);
        let head_kernel = model::head_kernel_for(params.config.head_precision, mode);
        Self {
            config: params.config.clone(),
            backend,
            state,
            head_kernel,
        }
    }

    /// Leaf vars in the canonical parameter order.
    pub fn param_vars(&self) -> Vec<Var<'t>> {
        let mut out = vec![self.backend.embed, self.backend.pos_embed];
        for l in &self.backend.layers {
            out.extend([l.wq, l.wk, l.wv, l.wo, l.w1, l.w2]);
        }
        out.push(self.backend.head);
        out
    }

    pub fn position(&self) -> usize {
        self.state.pos
    }

    /// Feed one token; returns the log-probability vector node for the next
    /// position.
    pub fn step(&mut self, token: u32) -> Result<Var<'t>, PolicyError> {
        let cfg = &self.config;
        if token >= cfg.vocab_size {
            return Err(PolicyError::TokenOutOfRange {
                token,
                vocab: cfg.vocab_size,
            });
        }
        if self.state.pos >= cfg.max_position {
            return Err(PolicyError::SequenceTooLong {
                len: self.state.pos + 1,
                max: cfg.max_position,
            });
        }
        Ok(model::step(
            &mut self.backend,
            &self.config,
            &mut self.state,
            token,
            self.head_kernel,
        ))
    }

    /// Per-position log-probability nodes of each realized token
    /// (the differentiable counterpart of [`super::engine::token_logprobs`]).
    pub fn realized_logprobs(&mut self, sequence: &[u32]) -> Result<Vec<Var<'t>>, PolicyError> {
        let cfg = &self.config;
        if self.state.pos + sequence.len() > cfg.max_position {
            return Err(PolicyError::SequenceTooLong {
                len: self.state.pos + sequence.len(),
                max: cfg.max_position,
            });
        }
        for &t in sequence {
            if t >= cfg.vocab_size {
                return Err(PolicyError::TokenOutOfRange {
                    token: t,
                    vocab: cfg.vocab_size,
                });
            }
        }
        let mut out = Vec::with_capacity(sequence.len());
        let mut dist = self.step(BOS_TOKEN)?;
        for (i, &tok) in sequence.iter().enumerate() {
            out.push(dist.component(tok as usize));
            if i + 1 < sequence.len() {
                dist = self.step(tok)?;
            }
        }
        Ok(out)
    }
}
