//! Decayed linear attention, in both the recurrent form the model uses and
//! the quadratic reference form that serves as its verification oracle.

use crate::autodiff::kernels;

use super::PolicyError;

fn check_inputs(
    q: &[Vec<f64>],
    k: &[Vec<f64>],
    v: &[Vec<f64>],
    decay: f64,
) -> Result<(), PolicyError> {
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(PolicyError::InvalidConfig(format!(
            "decay must be in (0, 1], got {decay}"
        )));
    }
    if q.len() != k.len() || q.len() != v.len() {
        return Err(PolicyError::InvalidConfig(format!(
            "attention sequence lengths differ: q={}, k={}, v={}",
            q.len(),
            k.len(),
            v.len()
        )));
    }
    Ok(())
}

/// Recurrent decayed linear attention for one head.
///
/// State evolves as `S_t = decay * S_{t-1} + k_t v_t^T` with `S_0 = 0`, and
/// the output at each position is `o_t = q_t^T S_t`. Cost is O(L d^2).
pub fn linear_attention_forward(
    q: &[Vec<f64>],
    k: &[Vec<f64>],
    v: &[Vec<f64>],
    decay: f64,
) -> Result<Vec<Vec<f64>>, PolicyError> {
    check_inputs(q, k, v, decay)?;
    if q.is_empty() {
        return Ok(Vec::new());
    }
    let dk = k[0].len();
    let dv = v[0].len();
    let mut state = vec![0.0; dk * dv];
    let mut outputs = Vec::with_capacity(q.len());
    let mut kv = vec![0.0; dk * dv];
    for t in 0..q.len() {
        kernels::outer(&k[t], &v[t], &mut kv);
        for (s, &p) in state.iter_mut().zip(&kv) {
            *s = *s * decay + p;
        }
        let mut out = vec![0.0; dv];
        kernels::vecmat(&q[t], &state, dk, dv, &mut out);
        outputs.push(out);
    }
    Ok(outputs)
}

/// Quadratic reference: `o_t = sum_{s<=t} decay^(t-s) (q_t . k_s) v_s`,
/// O(L^2 d). Exists purely to cross-check the recurrent form.
pub fn reference_decay_attention(
    q: &[Vec<f64>],
    k: &[Vec<f64>],
    v: &[Vec<f64>],
    decay: f64,
) -> Result<Vec<Vec<f64>>, PolicyError> {
    check_inputs(q, k, v, decay)?;
    if q.is_empty() {
        return Ok(Vec::new());
    }
    let dv = v[0].len();
    let mut outputs = Vec::with_capacity(q.len());
    for t in 0..q.len() {
        let mut out = vec![0.0; dv];
        for s in 0..=t {
            let w = decay.powi((t - s) as i32) * kernels::dot(&q[t], &k[s]);
            for (o, &x) in out.iter_mut().zip(&v[s]) {
                *o += w * x;
            }
        }
        outputs.push(out);
    }
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;
    use rand::Rng;

    fn random_seq(rng: &mut rand_chacha::ChaCha8Rng, len: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..len)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn max_abs_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        a.iter()
            .zip(b)
            .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn length_one_is_the_recurrence_base_case() {
        let q = vec![vec![1.0, 2.0]];
        let k = vec![vec![0.5, -1.0]];
        let v = vec![vec![3.0, 4.0]];
        let out = linear_attention_forward(&q, &k, &v, 0.9).unwrap();
        // o_1 = q_1^T (k_1 v_1^T) = (q . k) v
        let qk = 1.0 * 0.5 + 2.0 * (-1.0);
        assert!((out[0][0] - qk * 3.0).abs() < 1e-12);
        assert!((out[0][1] - qk * 4.0).abs() < 1e-12);
        let reference = reference_decay_attention(&q, &k, &v, 0.9).unwrap();
        assert_eq!(out, reference);
    }

    #[test]
    fn tiny_decay_forgets_history() {
        let mut rng = seeding::rng(3);
        let (q, k, v) = (
            random_seq(&mut rng, 8, 4),
            random_seq(&mut rng, 8, 4),
            random_seq(&mut rng, 8, 4),
        );
        let out = linear_attention_forward(&q, &k, &v, 1e-12).unwrap();
        for t in 0..8 {
            let qk = kernels::dot(&q[t], &k[t]);
            for (d, o) in out[t].iter().enumerate() {
                assert!((o - qk * v[t][d]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn unit_decay_one_hot_telescopes() {
        // k = v = e_0 at every step with decay 1: o_t accumulates t copies.
        let len = 6;
        let e0 = vec![1.0, 0.0, 0.0];
        let q: Vec<Vec<f64>> = (0..len).map(|_| e0.clone()).collect();
        let out = linear_attention_forward(&q, &q, &q, 1.0).unwrap();
        for (t, o) in out.iter().enumerate() {
            assert!((o[0] - (t + 1) as f64).abs() < 1e-12);
            assert_eq!(o[1], 0.0);
        }
    }

    #[test]
    fn recurrent_matches_quadratic_reference() {
        let mut rng = seeding::rng(17);
        for &len in &[1usize, 7, 64, 256] {
            let dim = 8;
            let q = random_seq(&mut rng, len, dim);
            let k = random_seq(&mut rng, len, dim);
            let v = random_seq(&mut rng, len, dim);
            for &decay in &[0.25, 0.875, 1.0] {
                let fast = linear_attention_forward(&q, &k, &v, decay).unwrap();
                let slow = reference_decay_attention(&q, &k, &v, decay).unwrap();
                let gap = max_abs_gap(&fast, &slow);
                assert!(gap < 1e-5, "len {len} decay {decay}: gap {gap}");
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let q = vec![vec![1.0]];
        assert!(linear_attention_forward(&q, &q, &q, 0.0).is_err());
        assert!(linear_attention_forward(&q, &q, &q, 1.5).is_err());
        let short = vec![];
        assert!(linear_attention_forward(&q, &short, &q, 0.5).is_err());
    }
}
