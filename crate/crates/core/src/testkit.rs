//! Constructed policies and scripted scenarios used by the test and
//! acceptance suites.

use rand::Rng;

use crate::autodiff::Tensor;
use crate::policy::{init_policy, PolicyConfig, PolicyParams};
use crate::rollout::RolloutError;
use crate::seeding;
use crate::tasks::{vocab, ResponseSampler, TaskFamily, TaskInstance, CIPHER_ALPHABET};

/// A degenerate policy that emits `token` with probability > 0.999 at every
/// position, regardless of input.
///
/// All transformer weights are zero, so the residual stream is exactly the
/// (constant) embedding row; the output head has a single non-zero row at
/// `token`, giving it a logit of roughly `2 * d_model` against zero for
/// every other token.
pub fn peaked_params(config: &PolicyConfig, token: u32) -> PolicyParams {
    assert!(token < config.vocab_size, "peaked token out of range");
    let mut params = init_policy(config, 0).expect("valid config");
    let d = config.d_model;
    let vocab = config.vocab_size as usize;

    params.embed = Tensor::new(vec![vocab, d], vec![1.0; vocab * d]);
    params.pos_embed = Tensor::zeros(vec![config.max_position, d]);
    for layer in &mut params.layers {
        layer.wq = Tensor::zeros(vec![d, d]);
        layer.wk = Tensor::zeros(vec![d, d]);
        layer.wv = Tensor::zeros(vec![d, d]);
        layer.wo = Tensor::zeros(vec![d, d]);
        layer.w1 = Tensor::zeros(vec![config.d_ff(), d]);
        layer.w2 = Tensor::zeros(vec![d, config.d_ff()]);
    }
    let mut head = vec![0.0; vocab * d];
    for j in 0..d {
        head[token as usize * d + j] = 2.0;
    }
    params.head = Tensor::new(vec![vocab, d], head);
    params
}

/// Always answers correctly (emits the reference response).
pub struct OracleSampler;

impl ResponseSampler for OracleSampler {
    fn sample_response(&self, task: &TaskInstance, _seed: u64) -> Result<Vec<u32>, RolloutError> {
        Ok(task.reference_response())
    }
}

/// Always emits the same fixed response.
pub struct FixedAnswerSampler {
    pub response: Vec<u32>,
}

impl ResponseSampler for FixedAnswerSampler {
    fn sample_response(&self, _task: &TaskInstance, _seed: u64) -> Result<Vec<u32>, RolloutError> {
        Ok(self.response.clone())
    }
}

/// Emits a well-formatted answer drawn uniformly from the family's
/// canonical answer space, giving an analytically known per-attempt success
/// probability (1/2 for balance, 4^-n for cipher messages of length n).
pub struct RandomAnswerSampler;

impl ResponseSampler for RandomAnswerSampler {
    fn sample_response(&self, task: &TaskInstance, seed: u64) -> Result<Vec<u32>, RolloutError> {
        let mut rng = seeding::rng(seed);
        let payload: Vec<u32> = match task.family {
            TaskFamily::ParenthesisBalance => {
                vec![if rng.random::<bool>() {
                    vocab::YES
                } else {
                    vocab::NO
                }]
            }
            TaskFamily::SubstitutionCipher => (0..task.difficulty)
                .map(|_| vocab::letter(rng.random_range(0..CIPHER_ALPHABET)))
                .collect(),
            TaskFamily::SequenceSortTrace => {
                let mut out = Vec::new();
                for i in 0..task.difficulty {
                    if i > 0 {
                        out.push(vocab::COMMA);
                    }
                    out.push(vocab::digit(rng.random_range(0..10)));
                }
                out
            }
            TaskFamily::ModularArithmeticChain => {
                vec![vocab::digit(rng.random_range(0..10))]
            }
        };
        let mut response = vec![vocab::ANS_OPEN];
        response.extend(payload);
        response.push(vocab::ANS_CLOSE);
        response.push(vocab::EOS);
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{full_distributions, EvalMode};

    #[test]
    fn peaked_policy_is_peaked_everywhere() {
        let cfg = PolicyConfig {
            vocab_size: 12,
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            hybrid_ratio: 1,
            max_position: 32,
            ..Default::default()
        };
        let params = peaked_params(&cfg, 7);
        let dists = full_distributions(&params, &[3, 9, 2, 7, 7], EvalMode::Infer).unwrap();
        for d in dists {
            assert!(d[7].exp() > 0.999);
        }
    }
}
