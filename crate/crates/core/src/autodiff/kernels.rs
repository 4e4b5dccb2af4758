//! Scalar math kernels shared by the graph forward pass and the standalone
//! inference engine.
//!
//! Both evaluation paths must route every arithmetic step through these
//! functions. Summation order is fixed (ascending index) so that evaluating
//! the same computation through either path produces bitwise-identical
//! results in 64-bit mode.

/// Epsilon inside the RMS normalizer.
pub const RMS_EPS: f64 = 1e-6;

/// Precision regime for the output-head projection.
///
/// `Full64` is exact 64-bit evaluation. The two 32-bit modes emulate the
/// mismatch between a training kernel (32-bit inputs, wide accumulator) and
/// a throughput-oriented inference kernel (narrow accumulator rounded after
/// every step).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKernel {
    Full64,
    F32Train,
    F32InferReduced,
}

/// out = W x for row-major `w` of `rows` x `cols`.
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for i in 0..rows {
        let row = &w[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for j in 0..cols {
            acc += row[j] * x[j];
        }
        out[i] = acc;
    }
}

/// out = x^T W for row-major `w` of `rows` x `cols`; `x` has `rows` entries.
pub fn vecmat(x: &[f64], w: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), rows);
    debug_assert_eq!(out.len(), cols);
    for j in 0..cols {
        let mut acc = 0.0;
        for i in 0..rows {
            acc += x[i] * w[i * cols + j];
        }
        out[j] = acc;
    }
}

/// out = a b^T, row-major `a.len()` x `b.len()`.
pub fn outer(a: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), a.len() * b.len());
    let n = b.len();
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i * n + j] = ai * bj;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// x / sqrt(mean(x^2) + eps).
pub fn rms_norm(x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), out.len());
    let mut sq = 0.0;
    for &v in x {
        sq += v * v;
    }
    let scale = 1.0 / (sq / x.len() as f64 + RMS_EPS).sqrt();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v * scale;
    }
}

/// RMS denominator, exposed for the backward rule.
pub fn rms_scale(x: &[f64]) -> f64 {
    let mut sq = 0.0;
    for &v in x {
        sq += v * v;
    }
    (sq / x.len() as f64 + RMS_EPS).sqrt()
}

/// Log-sum-exp stabilized softmax.
pub fn softmax(x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), out.len());
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        let e = (v - m).exp();
        *o = e;
        z += e;
    }
    let inv = 1.0 / z;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// Log-sum-exp stabilized log-softmax.
pub fn log_softmax(x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), out.len());
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for &v in x {
        z += (v - m).exp();
    }
    let lse = m + z.ln();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}

/// out = sum_j weights[j] * values[j], accumulated in ascending j.
pub fn attn_mix(weights: &[f64], values: &[&[f64]], out: &mut [f64]) {
    debug_assert_eq!(weights.len(), values.len());
    for o in out.iter_mut() {
        *o = 0.0;
    }
    for (j, &wj) in weights.iter().enumerate() {
        let vj = values[j];
        debug_assert_eq!(vj.len(), out.len());
        for (o, &x) in out.iter_mut().zip(vj) {
            *o += wj * x;
        }
    }
}

/// Round-to-nearest-even truncation of an f32 to bfloat16 precision.
pub fn bf16_round(x: f32) -> f32 {
    if !x.is_finite() {
        return x;
    }
    let bits = x.to_bits();
    let lsb = (bits >> 16) & 1;
    f32::from_bits(bits.wrapping_add(0x7FFF + lsb) & 0xFFFF_0000)
}

/// Output-head projection under the selected precision regime.
///
/// All modes consume the same f64 weights and activations; the 32-bit modes
/// round them to f32 first. `F32Train` keeps a wide (f64) accumulator and
/// rounds once at the end. `F32InferReduced` rounds the product and the
/// running accumulator to bf16 at every step, which is what makes the two
/// 32-bit paths disagree on high-magnitude rows.
pub fn head_matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], mode: HeadKernel, out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    match mode {
        HeadKernel::Full64 => matvec(w, rows, cols, x, out),
        HeadKernel::F32Train => {
            for i in 0..rows {
                let row = &w[i * cols..(i + 1) * cols];
                let mut acc = 0.0f64;
                for j in 0..cols {
                    acc += f64::from(row[j] as f32) * f64::from(x[j] as f32);
                }
                out[i] = f64::from(acc as f32);
            }
        }
        HeadKernel::F32InferReduced => {
            for i in 0..rows {
                let row = &w[i * cols..(i + 1) * cols];
                let mut acc = 0.0f32;
                for j in 0..cols {
                    let p = bf16_round(row[j] as f32 * x[j] as f32);
                    acc = bf16_round(acc + p);
                }
                out[i] = f64::from(acc);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_identity() {
        let w = vec![1.0, 0.0, 0.0, 1.0];
        let x = vec![3.0, -2.0];
        let mut out = vec![0.0; 2];
        matvec(&w, 2, 2, &x, &mut out);
        assert_eq!(out, x);
    }

    #[test]
    fn vecmat_is_transposed_matvec() {
        let w = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let x = vec![0.5, -1.5];
        let mut out = vec![0.0; 3];
        vecmat(&x, &w, 2, 3, &mut out);
        assert_eq!(out, vec![0.5 - 6.0, 1.0 - 7.5, 1.5 - 9.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut out = vec![0.0; 2];
        softmax(&[0.0, 0.0], &mut out);
        assert_eq!(out, vec![0.5, 0.5]);
    }

    #[test]
    fn log_softmax_matches_high_precision_value() {
        // Recomputed independently with extended-precision arithmetic:
        // lse(1,2,3) = 3.40760596444438, third component = 3 - lse.
        let mut out = vec![0.0; 3];
        log_softmax(&[1.0, 2.0, 3.0], &mut out);
        assert!((out[2] - (-0.40760596444438)).abs() < 1e-12);
        assert!((out[0] - (-2.40760596444438)).abs() < 1e-12);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let mut out = vec![0.0; 2];
        softmax(&[1000.0, 999.0], &mut out);
        assert!(out.iter().all(|p| p.is_finite()));
        assert!((out[0] + out[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bf16_round_drops_low_mantissa_bits() {
        let x = 1.0 + 1.0 / 512.0; // below bf16 resolution at 1.0
        assert_eq!(bf16_round(x as f32), 1.0);
        assert_eq!(bf16_round(1.5), 1.5);
        assert_eq!(bf16_round(-2.0), -2.0);
    }

    #[test]
    fn head_modes_agree_in_full_precision_and_diverge_reduced() {
        let w: Vec<f64> = (0..64).map(|i| ((i * 37 % 23) as f64 - 11.0) * 1.7).collect();
        let x: Vec<f64> = (0..8).map(|i| (i as f64 - 3.5) * 2.3).collect();
        let mut full = vec![0.0; 8];
        let mut train32 = vec![0.0; 8];
        let mut infer32 = vec![0.0; 8];
        head_matvec(&w, 8, 8, &x, HeadKernel::Full64, &mut full);
        head_matvec(&w, 8, 8, &x, HeadKernel::F32Train, &mut train32);
        head_matvec(&w, 8, 8, &x, HeadKernel::F32InferReduced, &mut infer32);
        // f32-train stays close to the exact result.
        for (a, b) in full.iter().zip(&train32) {
            assert!((a - b).abs() < 1e-3 * a.abs().max(1.0));
        }
        // The reduced accumulator visibly deviates from the train kernel.
        let max_gap = train32
            .iter()
            .zip(&infer32)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_gap > 1e-4, "expected divergence, max gap {max_gap}");
    }
}
