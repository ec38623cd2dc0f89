//! Class-subspace construction (centered, jittered, truncated SVD),
//! projection-distance metric, smoothed similarity, and adaptive dual-view
//! fusion.

use crate::error::{Error, Result};
use crate::tensor::FeatureTensor;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Which feature view a subspace was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum View {
    Spatial,
    Shape,
}

impl View {
    pub fn id(self) -> u64 {
        match self {
            View::Spatial => 0,
            View::Shape => 1,
        }
    }
}

/// A class's low-rank manifold in one view: mean vector plus an orthonormal
/// basis of the top singular directions of the centered, jittered support.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSubspace {
    pub view: View,
    mean: Vec<f64>,
    /// Orthonormal basis columns, each of length D. May be empty when the
    /// centered support carries no signal above the jitter noise floor
    /// (e.g. 1-shot), in which case the metric degenerates to the squared
    /// prototype distance.
    basis: Vec<Vec<f64>>,
}

impl ClassSubspace {
    /// Assemble a subspace from precomputed parts. The caller guarantees the
    /// columns are orthonormal; used by tests and hand-built fixtures.
    pub fn from_raw_parts(view: View, mean: Vec<f64>, basis: Vec<Vec<f64>>) -> Self {
        Self { view, mean, basis }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }
    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }
    pub fn rank(&self) -> usize {
        self.basis.len()
    }
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Row-major vectorization of a feature tensor (D = C*H*W).
pub fn flatten(x: &FeatureTensor) -> Vec<f64> {
    x.flatten()
}

/// Inverse of [`flatten`] given the original shape.
pub fn unflatten(c: usize, h: usize, w: usize, v: Vec<f64>) -> Result<FeatureTensor> {
    FeatureTensor::unflatten(c, h, w, v)
}

/// Build one class subspace from its K support vectors.
///
/// Pipeline: columnwise mean -> centering -> additive Gaussian jitter of the
/// given scale -> SVD -> keep up to min(d_max, K, D) left singular vectors.
/// Singular directions below the jitter noise floor are discarded so that a
/// rank-deficient support (1-shot in particular) degenerates cleanly to the
/// prototype metric. Basis columns are sign-canonicalized: the
/// largest-magnitude entry is made positive.
pub fn build_subspace(
    view: View,
    support: &[Vec<f64>],
    d_max: usize,
    jitter_scale: f64,
    rng: &mut impl Rng,
) -> Result<ClassSubspace> {
    if support.is_empty() {
        return Err(Error::InvalidArgument(
            "subspace construction requires a nonempty support set".into(),
        ));
    }
    if jitter_scale < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "jitter scale must be nonnegative, got {jitter_scale}"
        )));
    }
    let d_dim = support[0].len();
    if d_dim == 0 || support.iter().any(|s| s.len() != d_dim) {
        return Err(Error::ShapeMismatch(
            "support vectors must share a positive dimension".into(),
        ));
    }
    let k = support.len();

    let mut mean = vec![0.0; d_dim];
    for s in support {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= k as f64;
    }

    // centered (and jittered) D x K support matrix
    let mut mat = DMatrix::<f64>::zeros(d_dim, k);
    for (j, s) in support.iter().enumerate() {
        for i in 0..d_dim {
            let mut v = s[i] - mean[i];
            if jitter_scale > 0.0 {
                let n: f64 = rng.sample(StandardNormal);
                v += jitter_scale * n;
            }
            mat[(i, j)] = v;
        }
    }

    let svd = mat.svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::Numerical("SVD did not produce left singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let sigma_max = order
        .first()
        .map(|&i| svd.singular_values[i])
        .unwrap_or(0.0);
    // noise floor: largest singular value of a D x K jitter matrix is about
    // jitter * (sqrt(D) + sqrt(K)); keep a 3x margin above it
    let floor = (sigma_max * 1e-14)
        .max(3.0 * jitter_scale * ((d_dim as f64).sqrt() + (k as f64).sqrt()));

    let keep = d_max.min(k).min(d_dim);
    let mut basis = Vec::with_capacity(keep);
    for &idx in order.iter().take(keep) {
        let s = svd.singular_values[idx];
        if !s.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite singular value in subspace construction (sigma={s})"
            )));
        }
        if s <= floor || s <= 0.0 {
            break;
        }
        let mut col: Vec<f64> = (0..d_dim).map(|i| u[(i, idx)]).collect();
        canonicalize_sign(&mut col);
        basis.push(col);
    }

    Ok(ClassSubspace { view, mean, basis })
}

fn canonicalize_sign(col: &mut [f64]) {
    let mut best = 0usize;
    let mut best_abs = -1.0;
    for (i, v) in col.iter().enumerate() {
        if v.abs() > best_abs {
            best_abs = v.abs();
            best = i;
        }
    }
    if col[best] < 0.0 {
        for v in col.iter_mut() {
            *v = -*v;
        }
    }
}

/// Squared residual norm of q after orthogonal projection onto the subspace:
/// ||(I - P P^T)(q - mu)||^2, computed as ||qbar||^2 - ||P^T qbar||^2 and
/// clamped at zero against rounding.
pub fn projection_distance(q: &[f64], sub: &ClassSubspace) -> Result<f64> {
    if q.len() != sub.dim() {
        return Err(Error::ShapeMismatch(format!(
            "query dimension {} vs subspace dimension {}",
            q.len(),
            sub.dim()
        )));
    }
    let qbar: Vec<f64> = q.iter().zip(sub.mean()).map(|(a, b)| a - b).collect();
    let total: f64 = qbar.iter().map(|v| v * v).sum();
    let captured: f64 = sub
        .basis()
        .iter()
        .map(|col| {
            let c: f64 = col.iter().zip(&qbar).map(|(a, b)| a * b).sum();
            c * c
        })
        .sum();
    Ok((total - captured).max(0.0))
}

/// Smoothed similarity s = -sqrt(dist + epsilon); strictly decreasing in
/// dist with a finite slope at zero.
pub fn similarity(dist: f64, epsilon: f64) -> Result<f64> {
    if dist < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "projection distance must be nonnegative, got {dist}"
        )));
    }
    if epsilon <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "smoothing epsilon must be positive, got {epsilon}"
        )));
    }
    Ok(-(dist + epsilon).sqrt())
}

/// Learnable two-view fusion logits (spatial, shape); softmax-normalized
/// into mixing weights alpha.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    pub w: [f64; 2],
}

impl Default for FusionParams {
    fn default() -> Self {
        // balanced 1:1 contribution at initialization
        Self { w: [1.0, 1.0] }
    }
}

impl FusionParams {
    pub fn alpha(&self) -> [f64; 2] {
        softmax2(self.w)
    }
}

pub fn softmax2(w: [f64; 2]) -> [f64; 2] {
    let m = w[0].max(w[1]);
    let e0 = (w[0] - m).exp();
    let e1 = (w[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

/// Which space the two views are combined in. The similarity space is the
/// default; distance-space fusion is exposed as a config switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionSpace {
    Similarity,
    Distance,
}

/// Per-class dual-view distances and the fused score (higher is better).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualDistance {
    pub d_spatial: f64,
    pub d_shape: f64,
    pub s_spatial: f64,
    pub s_shape: f64,
    pub fused: f64,
}

/// Combine the two views' projection distances into a single score.
///
/// Similarity space: fused = alpha_sp * s_sp + alpha_sh * s_sh with
/// s_v = -sqrt(d_v + epsilon). Distance space: fused =
/// -(alpha_sp * d_sp + alpha_sh * d_sh).
pub fn fuse(
    d_spatial: f64,
    d_shape: f64,
    fp: &FusionParams,
    epsilon: f64,
    space: FusionSpace,
) -> Result<([f64; 2], DualDistance)> {
    let alpha = fp.alpha();
    let s_spatial = similarity(d_spatial, epsilon)?;
    let s_shape = similarity(d_shape, epsilon)?;
    let fused = match space {
        FusionSpace::Similarity => alpha[0] * s_spatial + alpha[1] * s_shape,
        FusionSpace::Distance => -(alpha[0] * d_spatial + alpha[1] * d_shape),
    };
    Ok((
        alpha,
        DualDistance {
            d_spatial,
            d_shape,
            s_spatial,
            s_shape,
            fused,
        },
    ))
}

/// A class's pair of per-view subspaces.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSubspace {
    pub spatial: ClassSubspace,
    pub shape: ClassSubspace,
}

/// Query classification output.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    /// scale * fused score per class.
    pub logits: Vec<f64>,
    pub predicted: usize,
    pub per_class: Vec<DualDistance>,
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

/// Classify one query against N dual-view class subspaces. `fixed_alpha`
/// overrides the adaptive softmax weights (ablation variants V1/V2).
#[allow(clippy::too_many_arguments)]
pub fn classify_query(
    q_spatial: &[f64],
    q_shape: &[f64],
    subspaces: &[DualSubspace],
    fp: &FusionParams,
    scale: f64,
    epsilon: f64,
    space: FusionSpace,
    fixed_alpha: Option<[f64; 2]>,
) -> Result<Classification> {
    if subspaces.is_empty() {
        return Err(Error::InvalidArgument("no class subspaces given".into()));
    }
    let effective = match fixed_alpha {
        Some(a) => FusionParams {
            w: [a[0].ln(), a[1].ln()],
        },
        None => *fp,
    };
    let mut logits = Vec::with_capacity(subspaces.len());
    let mut per_class = Vec::with_capacity(subspaces.len());
    for sub in subspaces {
        let d_sp = projection_distance(q_spatial, &sub.spatial)?;
        let d_sh = projection_distance(q_shape, &sub.shape)?;
        let (_, dd) = fuse(d_sp, d_sh, &effective, epsilon, space)?;
        logits.push(scale * dd.fused);
        per_class.push(dd);
    }
    let predicted = argmax(&logits);
    Ok(Classification {
        logits,
        predicted,
        per_class,
    })
}

/// Spatial-only classification (single-subspace baseline V0).
pub fn classify_query_spatial(
    q_spatial: &[f64],
    subspaces: &[ClassSubspace],
    scale: f64,
    epsilon: f64,
) -> Result<(Vec<f64>, usize)> {
    if subspaces.is_empty() {
        return Err(Error::InvalidArgument("no class subspaces given".into()));
    }
    let mut logits = Vec::with_capacity(subspaces.len());
    for sub in subspaces {
        let d = projection_distance(q_spatial, sub)?;
        logits.push(scale * similarity(d, epsilon)?);
    }
    let predicted = argmax(&logits);
    Ok((logits, predicted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use crate::rng::{domain, substream};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_support(d: usize, k: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = substream(seed, &[domain::SYNTH, d as u64, k as u64]);
        (0..k)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn hand_2x2_svd() {
        let mut rng = substream(0, &[0]);
        let sub = build_subspace(
            View::Spatial,
            &[vec![1.0, 0.0], vec![-1.0, 0.0]],
            1,
            0.0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(sub.mean(), &[0.0, 0.0]);
        assert_eq!(sub.rank(), 1);
        // sign-canonicalized to +(1,0)
        assert!((sub.basis()[0][0] - 1.0).abs() < 1e-12);
        assert!(sub.basis()[0][1].abs() < 1e-12);
    }

    #[test]
    fn one_shot_zero_jitter_degenerates_to_prototype() {
        let mut rng = substream(1, &[0]);
        let s = vec![vec![0.3, -0.7, 2.0]];
        let sub = build_subspace(View::Spatial, &s, 1, 0.0, &mut rng).unwrap();
        assert_eq!(sub.rank(), 0);
        let q = [1.0, 2.0, 3.0];
        let proto: f64 = q.iter().zip(&s[0]).map(|(a, b)| (a - b) * (a - b)).sum();
        assert_eq!(projection_distance(&q, &sub).unwrap(), proto);
    }

    #[test]
    fn one_shot_with_jitter_stays_within_1e6_of_prototype() {
        // noise-floor truncation drops the pure-jitter direction
        let mut rng = substream(2, &[0]);
        let s = vec![vec![0.5; 64]];
        let sub = build_subspace(View::Spatial, &s, 1, 1e-5, &mut rng).unwrap();
        let mut qrng = substream(3, &[0]);
        let q: Vec<f64> = (0..64).map(|_| qrng.gen_range(-1.0..1.0)).collect();
        let proto: f64 = q.iter().zip(&s[0]).map(|(a, b)| (a - b) * (a - b)).sum();
        let d = projection_distance(&q, &sub).unwrap();
        assert!((d - proto).abs() <= 1e-6 * proto.max(1.0));
    }

    #[test]
    fn empty_support_rejected() {
        let mut rng = substream(0, &[0]);
        assert!(build_subspace(View::Spatial, &[], 1, 0.0, &mut rng).is_err());
    }

    #[test]
    fn basis_is_orthonormal() {
        let mut rng = substream(4, &[0]);
        let sub =
            build_subspace(View::Shape, &random_support(10, 5, 7), 5, 1e-5, &mut rng).unwrap();
        for (i, a) in sub.basis().iter().enumerate() {
            for (j, b) in sub.basis().iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn in_subspace_query_has_zero_distance() {
        let mut rng = substream(5, &[0]);
        let sub =
            build_subspace(View::Spatial, &random_support(8, 4, 9), 3, 0.0, &mut rng).unwrap();
        // q = mu + P c
        let c = [0.7, -1.3, 0.4];
        let mut q = sub.mean().to_vec();
        for (j, col) in sub.basis().iter().enumerate() {
            for (qi, ci) in q.iter_mut().zip(col) {
                *qi += c[j] * ci;
            }
        }
        assert!(projection_distance(&q, &sub).unwrap() <= 1e-9);
    }

    #[test]
    fn axis_aligned_residual() {
        let sub = ClassSubspace {
            view: View::Spatial,
            mean: vec![0.0, 0.0],
            basis: vec![vec![1.0, 0.0]],
        };
        let d = projection_distance(&[3.0, 4.0], &sub).unwrap();
        assert!((d - 16.0).abs() < 1e-12);
    }

    #[test]
    fn matches_materialized_projector() {
        let mut rng = substream(6, &[0]);
        let sub =
            build_subspace(View::Spatial, &random_support(6, 3, 21), 2, 0.0, &mut rng).unwrap();
        let mut qrng = substream(7, &[0]);
        let q: Vec<f64> = (0..6).map(|_| qrng.gen_range(-2.0..2.0)).collect();
        let fast = projection_distance(&q, &sub).unwrap();
        let slow = oracle::projector_distance(&q, &sub);
        assert!((fast - slow).abs() <= 1e-9);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let sub = ClassSubspace {
            view: View::Spatial,
            mean: vec![0.0; 3],
            basis: vec![],
        };
        assert!(projection_distance(&[0.0; 4], &sub).is_err());
    }

    #[test]
    fn similarity_examples() {
        assert!((similarity(0.0, 1e-6).unwrap() + 1e-3).abs() < 1e-15);
        assert!((similarity(1.0 - 1e-6, 1e-6).unwrap() + 1.0).abs() <= 1e-9);
        assert!(similarity(-0.1, 1e-6).is_err());
        assert!(similarity(0.0, 0.0).is_err());
    }

    #[test]
    fn fuse_examples() {
        let fp = FusionParams { w: [1.0, 1.0] };
        let (alpha, _) = fuse(1.0, 2.0, &fp, 1e-6, FusionSpace::Similarity).unwrap();
        assert!((alpha[0] - 0.5).abs() < 1e-15 && (alpha[1] - 0.5).abs() < 1e-15);

        let fp = FusionParams {
            w: [2.0f64.ln(), 0.0],
        };
        let (alpha, _) = fuse(1.0, 2.0, &fp, 1e-6, FusionSpace::Similarity).unwrap();
        assert!((alpha[0] - 2.0 / 3.0).abs() <= 1e-12);
        assert!((alpha[1] - 1.0 / 3.0).abs() <= 1e-12);

        // shift invariance
        let a = FusionParams { w: [0.4, -1.1] }.alpha();
        let b = FusionParams { w: [0.4 + 5.0, -1.1 + 5.0] }.alpha();
        assert!((a[0] - b[0]).abs() <= 1e-12 && (a[1] - b[1]).abs() <= 1e-12);
    }

    #[test]
    fn classify_hand_case() {
        // two classes with known distance pairs (0,0) and (9,16)
        let zero = |view| ClassSubspace {
            view,
            mean: vec![0.0, 0.0],
            basis: vec![],
        };
        let mk = |m: [f64; 2], view| ClassSubspace {
            view,
            mean: m.to_vec(),
            basis: vec![],
        };
        let subs = vec![
            DualSubspace {
                spatial: zero(View::Spatial),
                shape: zero(View::Shape),
            },
            DualSubspace {
                spatial: mk([3.0, 0.0], View::Spatial),
                shape: mk([0.0, 4.0], View::Shape),
            },
        ];
        let q = [0.0, 0.0];
        let out = classify_query(
            &q,
            &q,
            &subs,
            &FusionParams::default(),
            1.0,
            1e-6,
            FusionSpace::Similarity,
            None,
        )
        .unwrap();
        assert!((out.logits[0] + 0.001).abs() < 1e-9);
        assert!((out.logits[1] + 3.5).abs() < 1e-6);
        assert_eq!(out.predicted, 0);
    }

    #[test]
    fn scale_does_not_change_argmax() {
        let subs = vec![
            DualSubspace {
                spatial: ClassSubspace {
                    view: View::Spatial,
                    mean: vec![1.0, 0.0],
                    basis: vec![],
                },
                shape: ClassSubspace {
                    view: View::Shape,
                    mean: vec![1.0, 0.0],
                    basis: vec![],
                },
            },
            DualSubspace {
                spatial: ClassSubspace {
                    view: View::Spatial,
                    mean: vec![0.0, 5.0],
                    basis: vec![],
                },
                shape: ClassSubspace {
                    view: View::Shape,
                    mean: vec![0.0, 5.0],
                    basis: vec![],
                },
            },
        ];
        let q = [1.0, 0.1];
        let mut preds = vec![];
        for scale in [0.1, 1.0, 10.0, 123.0] {
            let out = classify_query(
                &q,
                &q,
                &subs,
                &FusionParams::default(),
                scale,
                1e-6,
                FusionSpace::Similarity,
                None,
            )
            .unwrap();
            preds.push(out.predicted);
        }
        assert!(preds.iter().all(|&p| p == preds[0]));
        assert_eq!(preds[0], 0);
    }

    #[test]
    fn fused_argmax_matches_spatial_when_shape_weight_collapses() {
        let mut rng = substream(9, &[0]);
        let mut subs = vec![];
        for k in 0..4u64 {
            let sp = build_subspace(
                View::Spatial,
                &random_support(8, 3, 100 + k),
                2,
                0.0,
                &mut rng,
            )
            .unwrap();
            let sh = build_subspace(
                View::Shape,
                &random_support(8, 3, 200 + k),
                2,
                0.0,
                &mut rng,
            )
            .unwrap();
            subs.push(DualSubspace {
                spatial: sp,
                shape: sh,
            });
        }
        let mut qrng = substream(10, &[0]);
        for _ in 0..20 {
            let q: Vec<f64> = (0..8).map(|_| qrng.gen_range(-2.0..2.0)).collect();
            let fused = classify_query(
                &q,
                &q,
                &subs,
                &FusionParams { w: [0.0, -30.0] },
                1.0,
                1e-6,
                FusionSpace::Similarity,
                None,
            )
            .unwrap();
            let spatial_only: Vec<ClassSubspace> =
                subs.iter().map(|s| s.spatial.clone()).collect();
            let (_, sp_pred) = classify_query_spatial(&q, &spatial_only, 1.0, 1e-6).unwrap();
            assert_eq!(fused.predicted, sp_pred);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn projector_idempotent_and_distance_dominated(
            d in 2usize..9, k in 1usize..6, seed in 0u64..500
        ) {
            let mut rng = substream(seed, &[domain::JITTER, 0, 0, 0]);
            let sub = build_subspace(
                View::Spatial, &random_support(d, k, seed), 5, 1e-5, &mut rng
            ).unwrap();
            prop_assert!(oracle::projector_idempotence_error(&sub) <= 1e-8);
            let mut qrng = substream(seed, &[77]);
            let q: Vec<f64> = (0..d).map(|_| qrng.gen_range(-3.0..3.0)).collect();
            let dist = projection_distance(&q, &sub).unwrap();
            let proto: f64 = q.iter().zip(sub.mean()).map(|(a, b)| (a - b) * (a - b)).sum();
            prop_assert!(dist <= proto + 1e-12);
            let slow = oracle::projector_distance(&q, &sub);
            prop_assert!((dist - slow).abs() <= 1e-9);
        }

        #[test]
        fn rank_monotonicity(d in 4usize..9, seed in 0u64..300) {
            // nested truncations of the same SVD: larger rank, smaller distance
            let support = random_support(d, 5, seed);
            let mut dists = vec![];
            for dm in 1..=3usize {
                // jitter 0 so the SVD is identical across truncations
                let mut rng = substream(seed, &[1]);
                let sub = build_subspace(View::Spatial, &support, dm, 0.0, &mut rng).unwrap();
                let mut qrng = substream(seed, &[78]);
                let q: Vec<f64> = (0..d).map(|_| qrng.gen_range(-3.0..3.0)).collect();
                dists.push(projection_distance(&q, &sub).unwrap());
            }
            prop_assert!(dists[1] <= dists[0] + 1e-12);
            prop_assert!(dists[2] <= dists[1] + 1e-12);
        }

        #[test]
        fn similarity_monotone(d1 in 0.0f64..50.0, d2 in 0.0f64..50.0) {
            prop_assume!(d1 < d2);
            let s1 = similarity(d1, 1e-6).unwrap();
            let s2 = similarity(d2, 1e-6).unwrap();
            prop_assert!(s1 > s2);
        }
    }
}
