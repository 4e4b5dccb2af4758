use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::seeding;

use super::config::PolicyConfig;
use super::PolicyError;

/// Weights of one transformer block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub w1: Tensor,
    pub w2: Tensor,
}

/// All trainable parameters of the policy, together with the architecture
/// they were built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub config: PolicyConfig,
    pub embed: Tensor,
    pub pos_embed: Tensor,
    pub layers: Vec<LayerParams>,
    pub head: Tensor,
}

fn uniform(rng: &mut rand_chacha::ChaCha8Rng, shape: Vec<usize>, bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data)
}

/// Deterministic initialization from a seed.
///
/// Projections use scaled-uniform fan-in bounds; the output head is
/// initialized near zero so the initial token distribution is close to
/// uniform (max/min probability ratio below 3).
pub fn init_policy(config: &PolicyConfig, seed: u64) -> Result<PolicyParams, PolicyError> {
    config.validate()?;
    let mut rng = seeding::rng(seed);
    let d = config.d_model;
    let d_ff = config.d_ff();
    let vocab = config.vocab_size as usize;

    // Draw order is fixed: embed, pos_embed, per-layer projections, head.
    let embed = uniform(&mut rng, vec![vocab, d], 0.5);
    let pos_embed = uniform(&mut rng, vec![config.max_position, d], 0.1);
    let proj_bound = (1.0 / d as f64).sqrt();
    let ff_bound = (1.0 / d_ff as f64).sqrt();
    let layers = (0..config.n_layers)
        .map(|_| LayerParams {
            wq: uniform(&mut rng, vec![d, d], proj_bound),
            wk: uniform(&mut rng, vec![d, d], proj_bound),
            wv: uniform(&mut rng, vec![d, d], proj_bound),
            wo: uniform(&mut rng, vec![d, d], proj_bound),
            w1: uniform(&mut rng, vec![d_ff, d], proj_bound),
            w2: uniform(&mut rng, vec![d, d_ff], ff_bound),
        })
        .collect();
    let head = uniform(&mut rng, vec![vocab, d], 0.01);

    Ok(PolicyParams {
        config: config.clone(),
        embed,
        pos_embed,
        layers,
        head,
    })
}

impl PolicyParams {
    /// Canonical flat view of every parameter tensor. The order is stable
    /// and shared by the optimizer, gradient collection, and checkpoints.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["embed".to_string(), "pos_embed".to_string()];
        for l in 0..self.layers.len() {
            for part in ["wq", "wk", "wv", "wo", "w1", "w2"] {
                names.push(format!("layers.{l}.{part}"));
            }
        }
        names.push("head".to_string());
        names
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embed, &self.pos_embed];
        for l in &self.layers {
            out.extend([&l.wq, &l.wk, &l.wv, &l.wo, &l.w1, &l.w2]);
        }
        out.push(&self.head);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embed, &mut self.pos_embed];
        for l in &mut self.layers {
            out.extend([
                &mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo, &mut l.w1, &mut l.w2,
            ]);
        }
        out.push(&mut self.head);
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Err if any parameter value is NaN/Inf (checked after optimizer steps).
    pub fn check_finite(&self) -> Result<(), PolicyError> {
        for (name, t) in self.tensor_names().iter().zip(self.tensors()) {
            if !t.all_finite() {
                return Err(PolicyError::NonFinite(format!("parameter '{name}'")));
            }
        }
        Ok(())
    }
}

/// Versioned checkpoint container; the JSON encoding round-trips f64 values
/// bit-exactly.
#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    schema_version: u32,
    params: PolicyParams,
}

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

pub fn save_checkpoint(path: &std::path::Path, params: &PolicyParams) -> Result<(), PolicyError> {
    let ckpt = Checkpoint {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        params: params.clone(),
    };
    let json = serde_json::to_string(&ckpt).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| PolicyError::Checkpoint(e.to_string()))
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<PolicyParams, PolicyError> {
    let json =
        std::fs::read_to_string(path).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
    let ckpt: Checkpoint =
        serde_json::from_str(&json).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
    if ckpt.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(PolicyError::Checkpoint(format!(
            "unsupported checkpoint schema version {} (expected {})",
            ckpt.schema_version, CHECKPOINT_SCHEMA_VERSION
        )));
    }
    ckpt.params.config.validate()?;
    Ok(ckpt.params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_params() {
        let cfg = PolicyConfig::default();
        let a = init_policy(&cfg, 5).unwrap();
        let b = init_policy(&cfg, 5).unwrap();
        assert_eq!(a, b);
        let c = init_policy(&cfg, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_dims_error() {
        let cfg = PolicyConfig {
            d_model: 12,
            n_heads: 5,
            ..Default::default()
        };
        assert!(init_policy(&cfg, 0).is_err());
    }

    #[test]
    fn tensor_order_is_stable() {
        let cfg = PolicyConfig::default();
        let p = init_policy(&cfg, 1).unwrap();
        let names = p.tensor_names();
        assert_eq!(names[0], "embed");
        assert_eq!(names[2], "layers.0.wq");
        assert_eq!(names.last().unwrap(), "head");
        assert_eq!(names.len(), p.tensors().len());
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        let params = init_policy(&PolicyConfig::default(), 9).unwrap();
        save_checkpoint(&path, &params).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(params, loaded);
        for (a, b) in params.tensors().iter().zip(loaded.tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        let params = init_policy(&PolicyConfig::default(), 9).unwrap();
        let mut value = serde_json::to_value(Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            params,
        })
        .unwrap();
        value["schema_version"] = serde_json::json!(999);
        std::fs::write(&path, value.to_string()).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
