//! Frequency channel attention: GAP over the (masked) spectrum, layer
//! normalization, a bottleneck MLP with Leaky ReLU, sigmoid gating, and
//! channel reweighting. Composed end to end by [`frequency_branch`].

use crate::error::{Error, Result};
use crate::rng::{domain, substream};
use crate::spectral::{apply_mask, dct2, idct2, LowPassMask};
use crate::tensor::{FeatureTensor, Spectrum};
use rand::Rng;

pub const LEAKY_SLOPE: f64 = 0.1;
pub const LN_EPSILON: f64 = 1e-5;

/// Bottleneck attention parameters for C channels with reduction ratio r.
///
/// W1 is (C/r) x C, W2 is C x (C/r), both row-major. Biases are included
/// and zero-initialized; weights start uniform in (-1/sqrt(C), 1/sqrt(C)).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    channels: usize,
    reduction: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub leaky_slope: f64,
    pub ln_epsilon: f64,
}

impl AttentionParams {
    pub fn new(
        channels: usize,
        reduction: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    ) -> Result<Self> {
        if channels == 0 || reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::InvalidArgument(format!(
                "reduction {reduction} must divide channel count {channels}"
            )));
        }
        let hidden = channels / reduction;
        if w1.len() != hidden * channels
            || b1.len() != hidden
            || w2.len() != channels * hidden
            || b2.len() != channels
        {
            return Err(Error::ShapeMismatch(format!(
                "attention parameter sizes inconsistent with C={channels}, r={reduction}"
            )));
        }
        Ok(Self {
            channels,
            reduction,
            w1,
            b1,
            w2,
            b2,
            leaky_slope: LEAKY_SLOPE,
            ln_epsilon: LN_EPSILON,
        })
    }

    /// Seeded initialization: weights uniform in (-1/sqrt(C), 1/sqrt(C)),
    /// biases zero.
    pub fn init(channels: usize, reduction: usize, seed: u64) -> Result<Self> {
        if channels == 0 || reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::InvalidArgument(format!(
                "reduction {reduction} must divide channel count {channels}"
            )));
        }
        let hidden = channels / reduction;
        let bound = 1.0 / (channels as f64).sqrt();
        let mut rng = substream(seed, &[domain::INIT, channels as u64, reduction as u64]);
        let w1 = (0..hidden * channels)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let w2 = (0..channels * hidden)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self::new(channels, reduction, w1, vec![0.0; hidden], w2, vec![0.0; channels])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn reduction(&self) -> usize {
        self.reduction
    }
    pub fn hidden(&self) -> usize {
        self.channels / self.reduction
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }
}

/// Global average pooling: per-channel mean over the spatial grid.
pub fn gap(f: &Spectrum) -> Vec<f64> {
    let (c, h, w) = (f.channels(), f.height(), f.width());
    let n = (h * w) as f64;
    (0..c)
        .map(|ch| {
            let base = ch * h * w;
            f.data()[base..base + h * w].iter().sum::<f64>() / n
        })
        .collect()
}

/// (e - mean) / sqrt(var + eps) with biased variance and no learnable affine.
pub fn layer_norm(e: &[f64], epsilon: f64) -> Vec<f64> {
    let n = e.len() as f64;
    let mean = e.iter().sum::<f64>() / n;
    let var = e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let denom = (var + epsilon).sqrt();
    e.iter().map(|x| (x - mean) / denom).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

/// Channel gate: sigmoid(W2 LeakyReLU(W1 LayerNorm(e) + b1) + b2).
/// Every output lies strictly in (0, 1).
pub fn attention_weights(e: &[f64], p: &AttentionParams) -> Result<Vec<f64>> {
    let c = p.channels();
    if e.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "energy vector length {} vs channel count {c}",
            e.len()
        )));
    }
    let normed = layer_norm(e, p.ln_epsilon);
    let hidden_n = p.hidden();
    let hidden: Vec<f64> = (0..hidden_n)
        .map(|i| {
            let acc: f64 = p.b1[i]
                + p.w1[i * c..(i + 1) * c]
                    .iter()
                    .zip(&normed)
                    .map(|(w, x)| w * x)
                    .sum::<f64>();
            leaky_relu(acc, p.leaky_slope)
        })
        .collect();
    let out = (0..c)
        .map(|ch| {
            let acc: f64 = p.b2[ch]
                + p.w2[ch * hidden_n..(ch + 1) * hidden_n]
                    .iter()
                    .zip(&hidden)
                    .map(|(w, x)| w * x)
                    .sum::<f64>();
            sigmoid(acc)
        })
        .collect();
    Ok(out)
}

/// Per-channel spectral reweighting: F'(c,u,v) = F(c,u,v) * w(c).
pub fn reweight(f: &Spectrum, w: &[f64]) -> Result<Spectrum> {
    let (c, h, wd) = (f.channels(), f.height(), f.width());
    if w.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "weight vector length {} vs channel count {c}",
            w.len()
        )));
    }
    let mut out = f.data().to_vec();
    for ch in 0..c {
        let g = w[ch];
        for v in &mut out[ch * h * wd..(ch + 1) * h * wd] {
            *v *= g;
        }
    }
    Spectrum::new(c, h, wd, out)
}

/// Full frequency branch: DCT -> low-pass mask -> channel attention ->
/// IDCT. Output shape equals input shape.
pub fn frequency_branch(
    x: &FeatureTensor,
    p: &AttentionParams,
    m: &LowPassMask,
) -> Result<FeatureTensor> {
    let f_low = apply_mask(&dct2(x)?, m)?;
    let w = attention_weights(&gap(&f_low), p)?;
    idct2(&reweight(&f_low, &w)?)
}

/// Frequency branch with the attention gate bypassed (gains forced to 1):
/// DCT -> mask -> IDCT. Used by the fixed-fusion ablation variant.
pub fn low_pass_only(x: &FeatureTensor, m: &LowPassMask) -> Result<FeatureTensor> {
    idct2(&apply_mask(&dct2(x)?, m)?)
}
