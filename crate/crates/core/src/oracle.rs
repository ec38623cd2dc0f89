//! Independent verification oracles.
//!
//! Everything in this module deliberately re-derives a result by a slower or
//! more literal route than the production code: the quadruple-sum transform
//! definition, a materialized projector matrix, brute-force mask
//! enumeration, and the closed-form softmax-chain gradient of the fusion
//! logits. The selftest command and the test suites compare the fast paths
//! against these.

use crate::subspace::{softmax2, ClassSubspace, DualDistance, FusionSpace};
use crate::tensor::{FeatureTensor, Spectrum};

/// Literal quadruple-sum orthonormal 2D DCT-II, O(H^2 W^2) per channel.
pub fn naive_dct2(x: &FeatureTensor) -> Spectrum {
    let (c, h, w) = (x.channels(), x.height(), x.width());
    let alpha = |k: usize, n: usize| -> f64 {
        if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        }
    };
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for u in 0..h {
            for v in 0..w {
                let mut acc = 0.0;
                for xi in 0..h {
                    for y in 0..w {
                        acc += x.get(ch, xi, y)
                            * (std::f64::consts::PI * (2.0 * xi as f64 + 1.0) * u as f64
                                / (2.0 * h as f64))
                                .cos()
                            * (std::f64::consts::PI * (2.0 * y as f64 + 1.0) * v as f64
                                / (2.0 * w as f64))
                                .cos();
                    }
                }
                out[(ch * h + u) * w + v] = alpha(u, h) * alpha(v, w) * acc;
            }
        }
    }
    Spectrum::new(c, h, w, out).expect("oracle spectrum is finite by construction")
}

/// Brute-force low-pass membership: keep (u,v) iff ((u/H)+(v/W))/2 <= tau,
/// evaluated in the cleared-denominator form u*W + v*H <= 2*tau*H*W so
/// boundary cells are decided exactly.
pub fn mask_reference(h: usize, w: usize, tau: f64) -> Vec<bool> {
    let mut bits = vec![false; h * w];
    for u in 0..h {
        for v in 0..w {
            bits[u * w + v] = (u * w + v * h) as f64 <= 2.0 * tau * (h * w) as f64;
        }
    }
    bits
}

/// Projection distance via the explicitly materialized D x D projector
/// (I - P P^T); O(D^2) space, test-scale only.
pub fn projector_distance(q: &[f64], sub: &ClassSubspace) -> f64 {
    let d = sub.dim();
    assert_eq!(q.len(), d);
    let qbar: Vec<f64> = q.iter().zip(sub.mean()).map(|(a, b)| a - b).collect();
    // M = I - P P^T
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    for col in sub.basis() {
        for i in 0..d {
            for j in 0..d {
                m[i * d + j] -= col[i] * col[j];
            }
        }
    }
    let mut norm2 = 0.0;
    for i in 0..d {
        let mut ri = 0.0;
        for j in 0..d {
            ri += m[i * d + j] * qbar[j];
        }
        norm2 += ri * ri;
    }
    norm2
}

/// Frobenius norm of (P P^T)(P P^T) - P P^T for a constructed subspace.
pub fn projector_idempotence_error(sub: &ClassSubspace) -> f64 {
    let d = sub.dim();
    let mut pp = vec![0.0; d * d];
    for col in sub.basis() {
        for i in 0..d {
            for j in 0..d {
                pp[i * d + j] += col[i] * col[j];
            }
        }
    }
    let mut err = 0.0;
    for i in 0..d {
        for j in 0..d {
            let mut sq = 0.0;
            for k in 0..d {
                sq += pp[i * d + k] * pp[k * d + j];
            }
            err += (sq - pp[i * d + j]).powi(2);
        }
    }
    err.sqrt()
}

/// Closed-form gradient of the mean cross-entropy with respect to the two
/// fusion logits, holding every per-view similarity fixed.
///
/// logits_k = scale * fused_k with fused_k = alpha . (s_sp_k, s_sh_k) in
/// similarity space (or -alpha . d in distance space); alpha = softmax(w).
/// The orthogonality regularizer does not depend on w, so this is also the
/// total-loss gradient.
pub fn analytic_fusion_gradient(
    per_query: &[Vec<DualDistance>],
    labels: &[usize],
    w: [f64; 2],
    scale: f64,
    space: FusionSpace,
) -> [f64; 2] {
    assert_eq!(per_query.len(), labels.len());
    let alpha = softmax2(w);
    let q_count = per_query.len() as f64;
    let mut d_alpha = [0.0f64; 2];
    for (dds, &label) in per_query.iter().zip(labels) {
        let views: Vec<[f64; 2]> = dds
            .iter()
            .map(|dd| match space {
                FusionSpace::Similarity => [dd.s_spatial, dd.s_shape],
                FusionSpace::Distance => [-dd.d_spatial, -dd.d_shape],
            })
            .collect();
        let logits: Vec<f64> = views
            .iter()
            .map(|v| scale * (alpha[0] * v[0] + alpha[1] * v[1]))
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (k, v) in views.iter().enumerate() {
            let g = exps[k] / z - if k == label { 1.0 } else { 0.0 };
            d_alpha[0] += g * scale * v[0] / q_count;
            d_alpha[1] += g * scale * v[1] / q_count;
        }
    }
    // chain through the softmax Jacobian: dalpha_j / dw_a = alpha_j (delta - alpha_a)
    let mut grad = [0.0f64; 2];
    for a in 0..2 {
        for j in 0..2 {
            let jac = alpha[j] * (if j == a { 1.0 } else { 0.0 } - alpha[a]);
            grad[a] += d_alpha[j] * jac;
        }
    }
    grad
}
