//! Tape-free incremental evaluation, used for sampling and for scoring
//! sequences when gradients are not needed.

use crate::autodiff::kernels::{self, HeadKernel};
use crate::autodiff::Tensor;

use super::config::{EvalMode, PolicyConfig, BOS_TOKEN};
use super::model::{self, Backend, ModelState, Proj};
use super::params::PolicyParams;
use super::PolicyError;

struct EngineBackend<'p> {
    params: &'p PolicyParams,
}

impl Backend for EngineBackend<'_> {
    type V = Tensor;

    fn embed_row(&mut self, token: usize) -> Tensor {
        Tensor::vector(self.params.embed.row(token).to_vec())
    }

    fn pos_row(&mut self, position: usize) -> Tensor {
        Tensor::vector(self.params.pos_embed.row(position).to_vec())
    }

    fn proj(&mut self, layer: usize, which: Proj, x: &Tensor) -> Tensor {
        let l = &self.params.layers[layer];
        let w = match which {
            Proj::Q => &l.wq,
            Proj::K => &l.wk,
            Proj::V => &l.wv,
            Proj::O => &l.wo,
            Proj::Ff1 => &l.w1,
            Proj::Ff2 => &l.w2,
        };
        let mut out = vec![0.0; w.rows()];
        kernels::matvec(w.data(), w.rows(), w.cols(), x.data(), &mut out);
        Tensor::vector(out)
    }

    fn head(&mut self, x: &Tensor, kernel: HeadKernel) -> Tensor {
        let w = &self.params.head;
        let mut out = vec![0.0; w.rows()];
        kernels::head_matvec(w.data(), w.rows(), w.cols(), x.data(), kernel, &mut out);
        Tensor::vector(out)
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        Tensor::new(
            a.shape().to_vec(),
            a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect(),
        )
    }

    fn scale(&mut self, a: &Tensor, c: f64) -> Tensor {
        Tensor::new(a.shape().to_vec(), a.data().iter().map(|x| x * c).collect())
    }

    fn tanh(&mut self, a: &Tensor) -> Tensor {
        Tensor::new(a.shape().to_vec(), a.data().iter().map(|x| x.tanh()).collect())
    }

    fn rms_norm(&mut self, a: &Tensor) -> Tensor {
        let mut out = vec![0.0; a.len()];
        kernels::rms_norm(a.data(), &mut out);
        Tensor::vector(out)
    }

    fn softmax(&mut self, a: &Tensor) -> Tensor {
        let mut out = vec![0.0; a.len()];
        kernels::softmax(a.data(), &mut out);
        Tensor::vector(out)
    }

    fn log_softmax(&mut self, a: &Tensor) -> Tensor {
        let mut out = vec![0.0; a.len()];
        kernels::log_softmax(a.data(), &mut out);
        Tensor::vector(out)
    }

    fn slice(&mut self, a: &Tensor, offset: usize, len: usize) -> Tensor {
        Tensor::vector(a.data()[offset..offset + len].to_vec())
    }

    fn concat(&mut self, parts: &[Tensor]) -> Tensor {
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(p.data());
        }
        Tensor::vector(data)
    }

    fn outer(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        let mut out = vec![0.0; a.len() * b.len()];
        kernels::outer(a.data(), b.data(), &mut out);
        Tensor::new(vec![a.len(), b.len()], out)
    }

    fn vecmat(&mut self, x: &Tensor, m: &Tensor) -> Tensor {
        let mut out = vec![0.0; m.cols()];
        kernels::vecmat(x.data(), m.data(), m.rows(), m.cols(), &mut out);
        Tensor::vector(out)
    }

    fn dot(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        Tensor::scalar(kernels::dot(a.data(), b.data()))
    }

    fn attn_mix(&mut self, weights: &Tensor, values: &[Tensor]) -> Tensor {
        let slices: Vec<&[f64]> = values.iter().map(|v| v.data()).collect();
        let mut out = vec![0.0; values[0].len()];
        kernels::attn_mix(weights.data(), &slices, &mut out);
        Tensor::vector(out)
    }

    fn zeros(&mut self, rows: usize, cols: usize) -> Tensor {
        Tensor::zeros(vec![rows, cols])
    }
}

/// Incremental forward evaluation over a frozen parameter snapshot.
pub struct Engine<'p> {
    backend: EngineBackend<'p>,
    state: ModelState<Tensor>,
    head_kernel: HeadKernel,
}

impl<'p> Engine<'p> {
    pub fn new(params: &'p PolicyParams, mode: EvalMode) -> Self {
        let mut backend = EngineBackend { params };
        let state = ModelState::new(&mut backend, &params.config);
        let head_kernel = model::head_kernel_for(params.config.head_precision, mode);
        Self {
            backend,
            state,
            head_kernel,
        }
    }

    /// Tokens consumed so far.
    pub fn position(&self) -> usize {
        self.state.pos
    }

    /// Feed one token; returns the log-probability vector for the next
    /// position.
    pub fn step(&mut self, token: u32) -> Result<Vec<f64>, PolicyError> {
        let cfg = &self.backend.params.config;
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
        let params = self.backend.params;
        let out = model::step(
            &mut self.backend,
            &params.config,
            &mut self.state,
            token,
            self.head_kernel,
        );
        if !out.all_finite() {
            return Err(PolicyError::NonFinite(format!(
                "log-probabilities at position {}",
                self.state.pos - 1
            )));
        }
        Ok(out.data().to_vec())
    }
}

fn check_sequence(params: &PolicyParams, sequence: &[u32]) -> Result<(), PolicyError> {
    let cfg = &params.config;
    if sequence.len() > cfg.max_position {
        return Err(PolicyError::SequenceTooLong {
            len: sequence.len(),
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
    Ok(())
}

/// Teacher-forced log-probability of each realized token.
///
/// `out[i]` is the log-probability of `sequence[i]` given the start token
/// and `sequence[..i]`. Train and infer modes differ only in the head
/// precision path; with a 64-bit head they are bitwise identical.
pub fn token_logprobs(
    params: &PolicyParams,
    sequence: &[u32],
    mode: EvalMode,
) -> Result<Vec<f64>, PolicyError> {
    check_sequence(params, sequence)?;
    let mut engine = Engine::new(params, mode);
    let mut out = Vec::with_capacity(sequence.len());
    let mut dist = engine.step(BOS_TOKEN)?;
    for (i, &tok) in sequence.iter().enumerate() {
        out.push(dist[tok as usize]);
        if i + 1 < sequence.len() {
            dist = engine.step(tok)?;
        }
    }
    Ok(out)
}

/// Full next-token log-probability vector at every position of a sequence
/// (the distribution each realized token was drawn from).
pub fn full_distributions(
    params: &PolicyParams,
    sequence: &[u32],
    mode: EvalMode,
) -> Result<Vec<Vec<f64>>, PolicyError> {
    check_sequence(params, sequence)?;
    let mut engine = Engine::new(params, mode);
    let mut out = Vec::with_capacity(sequence.len());
    let mut dist = engine.step(BOS_TOKEN)?;
    for (i, &tok) in sequence.iter().enumerate() {
        out.push(dist.clone());
        if i + 1 < sequence.len() {
            dist = engine.step(tok)?;
        }
    }
    let _ = dist;
    Ok(out)
}
