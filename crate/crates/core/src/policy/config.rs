use serde::{Deserialize, Serialize};

use super::PolicyError;

/// Token id 0 is the reserved sequence-start token: it is fed to the model
/// before any real token and is never generated or scored.
pub const BOS_TOKEN: u32 = 0;

/// Precision of the output-head projection.
///
/// `F64` evaluates the head identically in train and infer mode. `F32`
/// emulates split kernels: a 32-bit head with a wide accumulator in train
/// mode and a reduced-precision accumulator in infer mode, which is the
/// mismatch the precision diagnostics measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadPrecision {
    F32,
    F64,
}

/// Whether a forward pass runs on the training path or the inference path.
/// The two differ only in head accumulation precision (see
/// [`HeadPrecision`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Train,
    Infer,
}

/// Architecture of the toy autoregressive policy.
///
/// Layer `l` (0-based) is a softmax-attention block iff
/// `(l + 1) % (hybrid_ratio + 1) == 0`; all other layers are
/// linear-attention blocks with per-head decayed state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub vocab_size: u32,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    /// Linear blocks per softmax block.
    pub hybrid_ratio: usize,
    /// Explicit per-layer, per-head decay rates in (0, 1]. When absent, a
    /// geometric ladder across heads is used (same ladder at every layer).
    pub decay_rates: Option<Vec<Vec<f64>>>,
    pub max_position: usize,
    pub head_precision: HeadPrecision,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            vocab_size: 40,
            d_model: 16,
            n_heads: 2,
            n_layers: 2,
            hybrid_ratio: 7,
            decay_rates: None,
            max_position: 160,
            head_precision: HeadPrecision::F64,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let fail = |msg: String| Err(PolicyError::InvalidConfig(msg));
        if self.vocab_size < 2 || self.vocab_size > 64 {
            return fail(format!(
                "vocab_size must be in 2..=64, got {}",
                self.vocab_size
            ));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 {
            return fail("d_model, n_heads and n_layers must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model ({}) must be divisible by n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if self.max_position == 0 {
            return fail("max_position must be positive".into());
        }
        if let Some(rates) = &self.decay_rates {
            if rates.len() != self.n_layers {
                return fail(format!(
                    "decay_rates has {} layers, config has {}",
                    rates.len(),
                    self.n_layers
                ));
            }
            for (l, row) in rates.iter().enumerate() {
                if row.len() != self.n_heads {
                    return fail(format!(
                        "decay_rates layer {} has {} heads, config has {}",
                        l,
                        row.len(),
                        self.n_heads
                    ));
                }
                for (h, &r) in row.iter().enumerate() {
                    if !(r > 0.0 && r <= 1.0) {
                        return fail(format!(
                            "decay rate at layer {l} head {h} must be in (0, 1], got {r}"
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn d_ff(&self) -> usize {
        2 * self.d_model
    }

    pub fn is_softmax_layer(&self, layer: usize) -> bool {
        (layer + 1) % (self.hybrid_ratio + 1) == 0
    }

    pub fn n_softmax_layers(&self) -> usize {
        self.n_layers / (self.hybrid_ratio + 1)
    }

    /// Decay rate for a layer/head pair. The default ladder assigns head `h`
    /// the rate `1 - 2^-(h+3)`, so later heads retain longer history.
    pub fn decay(&self, layer: usize, head: usize) -> f64 {
        match &self.decay_rates {
            Some(rates) => rates[layer][head],
            None => 1.0 - 0.5f64.powi(head as i32 + 3),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        PolicyConfig::default().validate().unwrap();
    }

    #[test]
    fn indivisible_heads_rejected() {
        let cfg = PolicyConfig {
            d_model: 12,
            n_heads: 5,
            ..Default::default()
        };
        assert!(matches!(
            cfg.validate(),
            Err(PolicyError::InvalidConfig(_))
        ));
    }

    #[test]
    fn hybrid_layout_every_eighth_layer() {
        let cfg = PolicyConfig {
            n_layers: 16,
            hybrid_ratio: 7,
            ..Default::default()
        };
        let softmax: Vec<usize> = (0..16).filter(|&l| cfg.is_softmax_layer(l)).collect();
        assert_eq!(softmax, vec![7, 15]);
        assert_eq!(cfg.n_softmax_layers(), 2);
    }

    #[test]
    fn layout_count_matches_floor_formula() {
        for n_layers in 1..=20 {
            for ratio in 0..=8 {
                let cfg = PolicyConfig {
                    n_layers,
                    hybrid_ratio: ratio,
                    ..Default::default()
                };
                let count = (0..n_layers).filter(|&l| cfg.is_softmax_layer(l)).count();
                assert_eq!(count, n_layers / (ratio + 1));
            }
        }
    }

    #[test]
    fn decay_ladder_in_range() {
        let cfg = PolicyConfig {
            n_heads: 4,
            d_model: 16,
            ..Default::default()
        };
        for h in 0..4 {
            let d = cfg.decay(0, h);
            assert!(d > 0.0 && d <= 1.0);
            if h > 0 {
                assert!(d > cfg.decay(0, h - 1));
            }
        }
    }

    #[test]
    fn explicit_decay_out_of_range_rejected() {
        let cfg = PolicyConfig {
            n_layers: 1,
            n_heads: 1,
            d_model: 8,
            decay_rates: Some(vec![vec![1.5]]),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
