//! Full forward pass for one episode: view construction (raw spatial +
//! frequency-branch shape), per-class dual subspaces, and fused query
//! logits. Shared by the evaluator and the loss/trainer.

use crate::attention::{frequency_branch, low_pass_only};
use crate::config::{Config, SpatialPool};
use crate::episodic::Episode;
use crate::error::{Error, Result};
use crate::objective::ModelParams;
use crate::rng::{domain, substream};
use crate::spectral::build_mask;
use crate::subspace::{
    build_subspace, classify_query, classify_query_spatial, ClassSubspace, DualDistance,
    DualSubspace, View,
};
use crate::tensor::FeatureTensor;

/// Ablation variants.
///
/// V0: spatial-only single subspace (baseline). V1: frequency branch with
/// the attention gate bypassed, fixed 1:1 mean fusion. V2: attention on,
/// fixed mean fusion. V3: attention on, adaptive softmax fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Variant {
    V0,
    V1,
    V2,
    V3,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::V0, Variant::V1, Variant::V2, Variant::V3];
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::V0 => write!(f, "V0"),
            Variant::V1 => write!(f, "V1"),
            Variant::V2 => write!(f, "V2"),
            Variant::V3 => write!(f, "V3"),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "V0" | "v0" => Ok(Variant::V0),
            "V1" | "v1" => Ok(Variant::V1),
            "V2" | "v2" => Ok(Variant::V2),
            "V3" | "v3" => Ok(Variant::V3),
            other => Err(Error::Config(format!(
                "variant must be one of V0..V3, got {other:?}"
            ))),
        }
    }
}

/// Everything the loss and the evaluator need from one episode pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Q x N fused (or spatial-only for V0) logits.
    pub logits: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
    pub spatial_subspaces: Vec<ClassSubspace>,
    /// Absent for V0.
    pub shape_subspaces: Option<Vec<ClassSubspace>>,
    /// Per-query per-class dual distances; absent for V0.
    pub dual: Option<Vec<Vec<DualDistance>>>,
}

/// Spatial-view feature vector, honoring the spatial_pool switch.
pub fn pool_features(x: &FeatureTensor, pool: SpatialPool) -> Vec<f64> {
    match pool {
        SpatialPool::None => x.flatten(),
        SpatialPool::Gap => {
            let (c, h, w) = (x.channels(), x.height(), x.width());
            let n = (h * w) as f64;
            (0..c)
                .map(|ch| x.data()[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / n)
                .collect()
        }
    }
}

/// Run the full pipeline on one episode.
///
/// Jitter noise is drawn from sub-streams keyed by (seed, episode_index,
/// class, view), independent of the parameters, so finite-difference
/// evaluations at perturbed parameters see common random numbers.
pub fn forward_episode(
    ep: &Episode,
    params: &ModelParams,
    cfg: &Config,
    seed: u64,
    episode_index: u64,
    variant: Variant,
) -> Result<ForwardOutput> {
    let first = &ep.support.first().ok_or_else(|| {
        Error::InvalidArgument("episode has an empty support set".into())
    })?
    .tensor;
    let mask = build_mask(first.height(), first.width(), cfg.tau)?;
    let n = ep.way;
    let d_max = cfg.d_max();

    let shape_transform = |x: &FeatureTensor| -> Result<FeatureTensor> {
        match variant {
            Variant::V1 => low_pass_only(x, &mask),
            _ => frequency_branch(x, &params.attention, &mask),
        }
    };

    // per-class support vectors, spatial view
    let mut spatial_support: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
    let mut shape_support: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
    for s in &ep.support {
        spatial_support[s.episode_label].push(pool_features(&s.tensor, cfg.spatial_pool));
        if variant != Variant::V0 {
            shape_support[s.episode_label].push(shape_transform(&s.tensor)?.flatten());
        }
    }

    let mut spatial_subspaces = Vec::with_capacity(n);
    let mut shape_subspaces = Vec::with_capacity(n);
    for k in 0..n {
        let mut rng = substream(
            seed,
            &[domain::JITTER, episode_index, k as u64, View::Spatial.id()],
        );
        let sp = build_subspace(View::Spatial, &spatial_support[k], d_max, cfg.jitter, &mut rng)
            .map_err(|e| {
                Error::Numerical(format!(
                    "subspace construction failed for episode {episode_index}, class {k}, spatial view: {e}"
                ))
            })?;
        spatial_subspaces.push(sp);
        if variant != Variant::V0 {
            let mut rng = substream(
                seed,
                &[domain::JITTER, episode_index, k as u64, View::Shape.id()],
            );
            let sh = build_subspace(View::Shape, &shape_support[k], d_max, cfg.jitter, &mut rng)
                .map_err(|e| {
                    Error::Numerical(format!(
                        "subspace construction failed for episode {episode_index}, class {k}, shape view: {e}"
                    ))
                })?;
            shape_subspaces.push(sh);
        }
    }

    let dual_subspaces: Vec<DualSubspace> = if variant == Variant::V0 {
        Vec::new()
    } else {
        spatial_subspaces
            .iter()
            .zip(&shape_subspaces)
            .map(|(sp, sh)| DualSubspace {
                spatial: sp.clone(),
                shape: sh.clone(),
            })
            .collect()
    };

    let fixed_alpha = match variant {
        Variant::V1 | Variant::V2 => Some([0.5, 0.5]),
        _ => None,
    };

    let mut logits = Vec::with_capacity(ep.query.len());
    let mut labels = Vec::with_capacity(ep.query.len());
    let mut predictions = Vec::with_capacity(ep.query.len());
    let mut dual: Vec<Vec<DualDistance>> = Vec::new();
    for q in &ep.query {
        labels.push(q.episode_label);
        let q_spatial = pool_features(&q.tensor, cfg.spatial_pool);
        if variant == Variant::V0 {
            let (l, pred) = classify_query_spatial(
                &q_spatial,
                &spatial_subspaces,
                params.logit_scale,
                cfg.epsilon,
            )?;
            logits.push(l);
            predictions.push(pred);
        } else {
            let q_shape = shape_transform(&q.tensor)?.flatten();
            let out = classify_query(
                &q_spatial,
                &q_shape,
                &dual_subspaces,
                &params.fusion,
                params.logit_scale,
                cfg.epsilon,
                cfg.fusion_space,
                fixed_alpha,
            )?;
            logits.push(out.logits);
            predictions.push(out.predicted);
            dual.push(out.per_class);
        }
    }

    Ok(ForwardOutput {
        logits,
        labels,
        predictions,
        spatial_subspaces,
        shape_subspaces: (variant != Variant::V0).then_some(shape_subspaces),
        dual: (variant != Variant::V0).then_some(dual),
    })
}
