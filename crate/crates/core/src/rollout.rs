//! Seeded autoregressive sampling of response groups: temperature and
//! top-p filtering, length windows, and probability-based repetition early
//! truncation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::kernels;
use crate::policy::{Engine, EvalMode, PolicyError, PolicyParams, BOS_TOKEN};
use crate::seeding;

#[derive(Debug, thiserror::Error)]
pub enum RolloutError {
    #[error("invalid sampling config: {0}")]
    InvalidConfig(String),
    #[error("distribution is not normalized (sum {0})")]
    Unnormalized(f64),
    #[error("prompt length {prompt} plus window {window} exceeds position budget {max}")]
    PromptTooLong {
        prompt: usize,
        window: usize,
        max: usize,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("io error: {0}")]
    Io(String),
}

/// Sampling hyperparameters for one generation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    /// Current length window: hard cap on generated tokens per response.
    pub max_new_tokens: usize,
    /// Consecutive-token count for the repetition rule. Setting it above
    /// `max_new_tokens` disables the rule.
    pub repetition_window: usize,
    /// Probability every one of those tokens must strictly exceed.
    pub repetition_threshold: f64,
    /// Responses per group.
    pub group_size: usize,
    /// Token that terminates a response.
    pub eos_token: u32,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 0.95,
            max_new_tokens: 64,
            repetition_window: 30,
            repetition_threshold: 0.99,
            group_size: 4,
            eos_token: 1,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), RolloutError> {
        let fail = |m: String| Err(RolloutError::InvalidConfig(m));
        if !(self.temperature > 0.0) {
            return fail(format!("temperature must be > 0, got {}", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return fail(format!("top_p must be in (0, 1], got {}", self.top_p));
        }
        if self.max_new_tokens == 0 {
            return fail("max_new_tokens must be >= 1".into());
        }
        if self.repetition_window == 0 {
            return fail("repetition_window must be >= 1".into());
        }
        if !(self.repetition_threshold > 0.0 && self.repetition_threshold < 1.0) {
            return fail(format!(
                "repetition_threshold must be in (0, 1), got {}",
                self.repetition_threshold
            ));
        }
        if self.group_size < 2 {
            return fail(format!("group_size must be >= 2, got {}", self.group_size));
        }
        Ok(())
    }
}

/// Why a response stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationReason {
    Eos,
    WindowLimit,
    Repetition,
}

/// One sampled response with the behavior-policy scores it was drawn under.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Response {
    pub tokens: Vec<u32>,
    /// Raw model log-probability of each sampled token (before temperature
    /// and top-p), recorded from the same forward pass that sampled it.
    pub behavior_logprobs: Vec<f64>,
    pub truncation: TruncationReason,
    /// Mean next-token distribution entropy over the generated positions.
    pub mean_entropy: f64,
    /// Filled in by the reward stage.
    pub reward: Option<f64>,
}

impl Response {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A question and its sampled response group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub prompt: Vec<u32>,
    pub responses: Vec<Response>,
}

impl RolloutGroup {
    pub fn rewards(&self) -> Option<Vec<f64>> {
        self.responses.iter().map(|r| r.reward).collect()
    }
}

/// Keep the smallest probability-sorted prefix with cumulative mass >= p
/// (ties broken by token id ascending) and renormalize. `p = 1` is the
/// identity.
pub fn top_p_filter(probs: &[f64], p: f64) -> Result<Vec<f64>, RolloutError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(RolloutError::InvalidConfig(format!(
            "top_p must be in (0, 1], got {p}"
        )));
    }
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|&q| q < 0.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(RolloutError::Unnormalized(sum));
    }
    if p == 1.0 {
        return Ok(probs.to_vec());
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut kept = vec![false; probs.len()];
    let mut mass = 0.0;
    for &idx in &order {
        kept[idx] = true;
        mass += probs[idx];
        if mass >= p {
            break;
        }
    }
    let out = probs
        .iter()
        .zip(&kept)
        .map(|(&q, &keep)| if keep { q / mass } else { 0.0 })
        .collect();
    Ok(out)
}

/// True iff the last `n` realized-token probabilities all strictly exceed
/// `tau`.
pub fn check_repetition(recent_probs: &[f64], n: usize, tau: f64) -> bool {
    if recent_probs.len() < n {
        return false;
    }
    recent_probs[recent_probs.len() - n..]
        .iter()
        .all(|&p| p > tau)
}

/// Temperature-scaled sampling distribution from raw log-probabilities.
fn tempered_probs(logprobs: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logprobs.iter().map(|lp| lp / temperature).collect();
    let mut out = vec![0.0; scaled.len()];
    kernels::softmax(&scaled, &mut out);
    out
}

/// Sample one response. Deterministic given `(params, prompt, cfg, seed)`.
pub fn sample_one(
    params: &PolicyParams,
    prompt: &[u32],
    cfg: &SamplingConfig,
    seed: u64,
) -> Result<Response, RolloutError> {
    cfg.validate()?;
    let max_pos = params.config.max_position;
    if prompt.len() + 1 + cfg.max_new_tokens > max_pos {
        return Err(RolloutError::PromptTooLong {
            prompt: prompt.len(),
            window: cfg.max_new_tokens,
            max: max_pos,
        });
    }
    let mut rng = seeding::rng(seed);
    let mut engine = Engine::new(params, EvalMode::Infer);
    let mut dist = engine.step(BOS_TOKEN)?;
    for &tok in prompt {
        dist = engine.step(tok)?;
    }

    let mut tokens = Vec::new();
    let mut behavior_logprobs = Vec::new();
    let mut filtered_probs_history = Vec::new();
    let mut entropy_sum = 0.0;
    let truncation;
    loop {
        let probs = tempered_probs(&dist, cfg.temperature);
        let filtered = top_p_filter(&probs, cfg.top_p)?;
        entropy_sum += -dist.iter().map(|lp| lp.exp() * lp).sum::<f64>();

        let u: f64 = rng.random();
        let mut cum = 0.0;
        let mut choice = filtered.len() - 1;
        for (i, &q) in filtered.iter().enumerate() {
            cum += q;
            if u < cum {
                choice = i;
                break;
            }
        }

        tokens.push(choice as u32);
        behavior_logprobs.push(dist[choice]);
        filtered_probs_history.push(filtered[choice]);

        if choice as u32 == cfg.eos_token {
            truncation = TruncationReason::Eos;
            break;
        }
        if check_repetition(
            &filtered_probs_history,
            cfg.repetition_window,
            cfg.repetition_threshold,
        ) {
            truncation = TruncationReason::Repetition;
            break;
        }
        if tokens.len() == cfg.max_new_tokens {
            truncation = TruncationReason::WindowLimit;
            break;
        }
        dist = engine.step(choice as u32)?;
    }

    Ok(Response {
        mean_entropy: entropy_sum / tokens.len() as f64,
        tokens,
        behavior_logprobs,
        truncation,
        reward: None,
    })
}

/// Sample a group of `cfg.group_size` responses with per-response seeds
/// derived from the group seed.
pub fn sample_group(
    params: &PolicyParams,
    prompt: &[u32],
    cfg: &SamplingConfig,
    seed: u64,
) -> Result<RolloutGroup, RolloutError> {
    cfg.validate()?;
    let responses = (0..cfg.group_size)
        .map(|i| sample_one(params, prompt, cfg, seeding::derive(seed, i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RolloutGroup {
        prompt: prompt.to_vec(),
        responses,
    })
}

/// One line of the rollout dump file.
#[derive(Debug, Serialize, Deserialize)]
pub struct DumpRecord {
    pub prompt: Vec<u32>,
    pub tokens: Vec<u32>,
    pub behavior_logprobs: Vec<f64>,
    pub truncation_reason: TruncationReason,
}

/// JSON-lines encoding of groups, one record per response.
pub fn rollout_dump_string(groups: &[RolloutGroup]) -> String {
    let mut out = String::new();
    for g in groups {
        for r in &g.responses {
            let rec = DumpRecord {
                prompt: g.prompt.clone(),
                tokens: r.tokens.clone(),
                behavior_logprobs: r.behavior_logprobs.clone(),
                truncation_reason: r.truncation,
            };
            out.push_str(&serde_json::to_string(&rec).expect("dump record serializes"));
            out.push('\n');
        }
    }
    out
}

pub fn write_rollout_dump(path: &std::path::Path, groups: &[RolloutGroup]) -> Result<(), RolloutError> {
    std::fs::write(path, rollout_dump_string(groups)).map_err(|e| RolloutError::Io(e.to_string()))
}
