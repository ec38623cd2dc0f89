//! Classification loss, subspace orthogonality regularizer, total objective,
//! and a finite-difference trainer for the attention/fusion/scale
//! parameters.

use crate::attention::AttentionParams;
use crate::config::Config;
use crate::episodic::{sample_episode, DatasetSplit, Episode, Phase};
use crate::error::{Error, Result};
use crate::pipeline::{forward_episode, Variant};
use crate::rng::{domain, substream};
use crate::subspace::{ClassSubspace, FusionParams};
use std::io::{Read, Write};
use std::path::Path;

/// All learnable state: bottleneck attention, fusion logits, logit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub attention: AttentionParams,
    pub fusion: FusionParams,
    pub logit_scale: f64,
}

impl ModelParams {
    /// Seeded initialization for C channels with reduction ratio r.
    pub fn init(channels: usize, reduction: usize, scale: f64, seed: u64) -> Result<Self> {
        Ok(Self {
            attention: AttentionParams::init(channels, reduction, seed)?,
            fusion: FusionParams::default(),
            logit_scale: scale,
        })
    }

    pub fn param_count(&self) -> usize {
        self.attention.param_count() + 2 + 1
    }

    /// Flatten in declared order: W1, b1, W2, b2, fusion w, logit_scale.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(&self.attention.w1);
        v.extend_from_slice(&self.attention.b1);
        v.extend_from_slice(&self.attention.w2);
        v.extend_from_slice(&self.attention.b2);
        v.extend_from_slice(&self.fusion.w);
        v.push(self.logit_scale);
        v
    }

    /// Rebuild from a flat vector laid out as [`to_vec`](Self::to_vec).
    pub fn from_vec(&self, v: &[f64]) -> Result<Self> {
        if v.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "parameter vector length {} vs expected {}",
                v.len(),
                self.param_count()
            )));
        }
        let a = &self.attention;
        let mut off = 0;
        let mut take = |n: usize| {
            let s = v[off..off + n].to_vec();
            off += n;
            s
        };
        let w1 = take(a.w1.len());
        let b1 = take(a.b1.len());
        let w2 = take(a.w2.len());
        let b2 = take(a.b2.len());
        let fw = take(2);
        let scale = take(1)[0];
        Ok(Self {
            attention: AttentionParams::new(a.channels(), a.reduction(), w1, b1, w2, b2)?,
            fusion: FusionParams { w: [fw[0], fw[1]] },
            logit_scale: scale,
        })
    }

    /// Human-readable name of flat coordinate `i` (diagnostics).
    pub fn param_name(&self, i: usize) -> String {
        let a = &self.attention;
        let (c, hid) = (a.channels(), a.hidden());
        let mut idx = i;
        if idx < a.w1.len() {
            return format!("w1[{}][{}]", idx / c, idx % c);
        }
        idx -= a.w1.len();
        if idx < a.b1.len() {
            return format!("b1[{idx}]");
        }
        idx -= a.b1.len();
        if idx < a.w2.len() {
            return format!("w2[{}][{}]", idx / hid, idx % hid);
        }
        idx -= a.w2.len();
        if idx < a.b2.len() {
            return format!("b2[{idx}]");
        }
        idx -= a.b2.len();
        if idx < 2 {
            return format!("fusion_w[{idx}]");
        }
        "logit_scale".to_string()
    }
}

const PARAMS_MAGIC: &[u8; 4] = b"FSMP";
const PARAMS_VERSION: u32 = 1;

/// Serialize: magic "FSMP", version, C, r, value count, then every
/// parameter as a little-endian 64-bit real in declared order.
pub fn save_params(params: &ModelParams, path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let values = params.to_vec();
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(PARAMS_MAGIC).map_err(io_err)?;
    f.write_all(&PARAMS_VERSION.to_le_bytes()).map_err(io_err)?;
    f.write_all(&(params.attention.channels() as u32).to_le_bytes())
        .map_err(io_err)?;
    f.write_all(&(params.attention.reduction() as u32).to_le_bytes())
        .map_err(io_err)?;
    f.write_all(&(values.len() as u32).to_le_bytes()).map_err(io_err)?;
    for v in values {
        f.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(io_err)?
        .read_to_end(&mut bytes)
        .map_err(io_err)?;
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > bytes.len() {
            return Err(Error::Parse {
                offset: *off as u64,
                msg: format!(
                    "truncated parameter file: need {} bytes, have {}",
                    *off + n,
                    bytes.len()
                ),
            });
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };
    let magic = take(&mut off, 4)?;
    if magic != PARAMS_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            msg: format!("bad magic {magic:?}, expected FSMP"),
        });
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
    let version = u32_at(take(&mut off, 4)?);
    if version != PARAMS_VERSION {
        return Err(Error::Parse {
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let channels = u32_at(take(&mut off, 4)?) as usize;
    let reduction = u32_at(take(&mut off, 4)?) as usize;
    let count = u32_at(take(&mut off, 4)?) as usize;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        let s = take(&mut off, 8)?;
        values.push(f64::from_le_bytes(s.try_into().unwrap()));
    }
    if off != bytes.len() {
        return Err(Error::Parse {
            offset: off as u64,
            msg: format!("{} trailing bytes", bytes.len() - off),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parse {
            offset: 20,
            msg: "non-finite parameter value".into(),
        });
    }
    let template = ModelParams::init(channels, reduction, 1.0, 0).map_err(|e| Error::Parse {
        offset: 12,
        msg: format!("invalid header dimensions: {e}"),
    })?;
    if values.len() != template.param_count() {
        return Err(Error::Parse {
            offset: 16,
            msg: format!(
                "value count {} inconsistent with C={channels}, r={reduction} (expected {})",
                values.len(),
                template.param_count()
            ),
        });
    }
    template.from_vec(&values)
}

/// Loss components; l_total = l_cls + lambda * l_disc by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_disc: f64,
    pub lambda: f64,
    pub l_total: f64,
}

/// Mean over queries of -log softmax(logits)[label], with max-subtraction.
pub fn cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::InvalidArgument(
            "logit rows and labels must be nonempty and equal-length".into(),
        ));
    }
    let mut total = 0.0;
    for (row, &label) in logits.iter().zip(labels) {
        if label >= row.len() {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {} classes",
                row.len()
            )));
        }
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let logz = row.iter().map(|l| (l - m).exp()).sum::<f64>().ln() + m;
        total += logz - row[label];
    }
    Ok(total / labels.len() as f64)
}

/// Orthogonality penalty over one view's class bases:
/// sum over ordered pairs i != j of ||P_i^T P_j||_F^2.
pub fn disc_loss(bases: &[ClassSubspace]) -> Result<f64> {
    if bases.is_empty() {
        return Ok(0.0);
    }
    let d = bases[0].dim();
    if bases.iter().any(|b| b.dim() != d) {
        return Err(Error::ShapeMismatch(
            "all bases must share the ambient dimension".into(),
        ));
    }
    let mut total = 0.0;
    for (i, pi) in bases.iter().enumerate() {
        for (j, pj) in bases.iter().enumerate() {
            if i == j {
                continue;
            }
            for a in pi.basis() {
                for b in pj.basis() {
                    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    total += dot * dot;
                }
            }
        }
    }
    Ok(total)
}

/// Full forward pipeline plus the combined objective on one episode.
pub fn total_loss(
    ep: &Episode,
    params: &ModelParams,
    cfg: &Config,
    seed: u64,
    episode_index: u64,
) -> Result<LossBreakdown> {
    let out = forward_episode(ep, params, cfg, seed, episode_index, Variant::V3)?;
    let l_cls = cross_entropy(&out.logits, &out.labels)?;
    let mut l_disc = disc_loss(&out.spatial_subspaces)?;
    if let Some(shape) = &out.shape_subspaces {
        l_disc += disc_loss(shape)?;
    }
    let l_total = l_cls + cfg.lambda * l_disc;
    Ok(LossBreakdown {
        l_cls,
        l_disc,
        lambda: cfg.lambda,
        l_total,
    })
}

/// Central-difference gradient of the total loss over every parameter
/// coordinate. The jitter streams are keyed by the episode, not the
/// parameters, so both evaluations of each coordinate share the same noise.
pub fn fd_gradient(
    ep: &Episode,
    params: &ModelParams,
    cfg: &Config,
    seed: u64,
    episode_index: u64,
    h: f64,
) -> Result<Vec<f64>> {
    if h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let theta = params.to_vec();
    let mut grad = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        let mut plus = theta.clone();
        plus[i] += h;
        let mut minus = theta.clone();
        minus[i] -= h;
        let lp = total_loss(ep, &params.from_vec(&plus)?, cfg, seed, episode_index)?;
        let lm = total_loss(ep, &params.from_vec(&minus)?, cfg, seed, episode_index)?;
        if !lp.l_total.is_finite() || !lm.l_total.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss while perturbing coordinate {} ({})",
                i,
                params.param_name(i)
            )));
        }
        grad[i] = (lp.l_total - lm.l_total) / (2.0 * h);
    }
    Ok(grad)
}

/// Trainer output: final parameters and the per-step total-loss trace.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: ModelParams,
    pub trace: Vec<LossBreakdown>,
}

/// Plain gradient descent on the finite-difference gradient, one episode
/// per step sampled from the base split.
pub fn train(
    split: &DatasetSplit,
    params: &ModelParams,
    cfg: &Config,
    steps: usize,
    lr: f64,
) -> Result<TrainResult> {
    if steps < 1 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    if lr < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be nonnegative, got {lr}"
        )));
    }
    let mut current = params.clone();
    let mut trace = Vec::with_capacity(steps);
    let train_seed = crate::rng::mix(cfg.seed, &[domain::TRAIN]);
    for step in 0..steps {
        let mut rng = substream(cfg.seed, &[domain::TRAIN, step as u64]);
        let ep = sample_episode(split, Phase::Base, cfg.way, cfg.shot, cfg.query, &mut rng)?;
        let loss = total_loss(&ep, &current, cfg, train_seed, step as u64)?;
        if !loss.l_total.is_finite() || loss.l_total > 1e6 {
            return Err(Error::Numerical(format!(
                "training diverged at step {step} (loss {}); trace: {:?}",
                loss.l_total,
                trace.iter().map(|l: &LossBreakdown| l.l_total).collect::<Vec<_>>()
            )));
        }
        trace.push(loss);
        if lr > 0.0 {
            let grad = fd_gradient(&ep, &current, cfg, train_seed, step as u64, cfg.fd_h)?;
            let mut theta = current.to_vec();
            for (t, g) in theta.iter_mut().zip(&grad) {
                *t -= lr * g;
            }
            current = current.from_vec(&theta)?;
        }
    }
    Ok(TrainResult {
        params: current,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::View;

    fn basis(view: View, cols: Vec<Vec<f64>>) -> ClassSubspace {
        let d = cols[0].len();
        ClassSubspace::from_raw_parts(view, vec![0.0; d], cols)
    }

    #[test]
    fn cross_entropy_uniform_is_ln_n() {
        let logits = vec![vec![0.7; 5]; 3];
        let l = cross_entropy(&logits, &[0, 3, 4]).unwrap();
        assert!((l - 5.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_saturated_is_near_zero() {
        let mut row = vec![0.0; 5];
        row[2] = 30.0;
        let l = cross_entropy(&[row], &[2]).unwrap();
        assert!(l < 1e-12);
    }

    #[test]
    fn cross_entropy_shift_invariant() {
        let row = vec![0.3, -1.2, 2.0];
        let shifted: Vec<f64> = row.iter().map(|v| v + 123.456).collect();
        let a = cross_entropy(&[row], &[1]).unwrap();
        let b = cross_entropy(&[shifted], &[1]).unwrap();
        assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        assert!(cross_entropy(&[vec![0.0; 3]], &[3]).is_err());
    }

    #[test]
    fn disc_loss_identical_bases() {
        let p = basis(
            View::Spatial,
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
        );
        let l = disc_loss(&[p.clone(), p]).unwrap();
        assert!((l - 4.0).abs() < 1e-12); // 2 ordered pairs x ||I_2||_F^2
    }

    #[test]
    fn disc_loss_orthogonal_bases_is_zero() {
        let p1 = basis(View::Spatial, vec![vec![1.0, 0.0, 0.0, 0.0]]);
        let p2 = basis(View::Spatial, vec![vec![0.0, 1.0, 0.0, 0.0]]);
        let p3 = basis(View::Spatial, vec![vec![0.0, 0.0, 1.0, 0.0]]);
        assert_eq!(disc_loss(&[p1, p2, p3]).unwrap(), 0.0);
    }

    #[test]
    fn disc_loss_angle_case() {
        for theta in [0.0, 0.3, 1.0, std::f64::consts::FRAC_PI_2] {
            let p1 = basis(View::Spatial, vec![vec![1.0, 0.0]]);
            let p2 = basis(View::Spatial, vec![vec![theta.cos(), theta.sin()]]);
            let l = disc_loss(&[p1, p2]).unwrap();
            assert!((l - 2.0 * theta.cos().powi(2)).abs() <= 1e-10);
        }
    }

    #[test]
    fn disc_loss_symmetric_under_class_permutation() {
        let p1 = basis(View::Spatial, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let p2 = basis(View::Spatial, vec![vec![0.6, 0.8]]);
        let p3 = basis(View::Spatial, vec![vec![0.8, -0.6]]);
        let a = disc_loss(&[p1.clone(), p2.clone(), p3.clone()]).unwrap();
        let b = disc_loss(&[p3, p1, p2]).unwrap();
        assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn disc_loss_rejects_dimension_mismatch() {
        let p1 = basis(View::Spatial, vec![vec![1.0, 0.0]]);
        let p2 = basis(View::Spatial, vec![vec![1.0, 0.0, 0.0]]);
        assert!(disc_loss(&[p1, p2]).is_err());
    }

    #[test]
    fn params_roundtrip_through_vec_and_file() {
        let p = ModelParams::init(8, 4, 10.0, 42).unwrap();
        let v = p.to_vec();
        assert_eq!(v.len(), p.param_count());
        let q = p.from_vec(&v).unwrap();
        assert_eq!(p, q);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.fsmp");
        save_params(&p, &path).unwrap();
        let r = load_params(&path).unwrap();
        assert_eq!(p, r);
    }

    #[test]
    fn load_rejects_truncation_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.fsmp");
        let p = ModelParams::init(8, 4, 1.0, 0).unwrap();
        save_params(&p, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_params(&path).unwrap_err(), Error::Parse { .. }));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_params(&path).unwrap_err(), Error::Parse { .. }));
    }

    #[test]
    fn param_names_cover_all_coordinates() {
        let p = ModelParams::init(8, 4, 1.0, 0).unwrap();
        let names: Vec<String> = (0..p.param_count()).map(|i| p.param_name(i)).collect();
        assert_eq!(names.last().unwrap(), "logit_scale");
        assert!(names.contains(&"fusion_w[0]".to_string()));
        assert!(names.contains(&"w1[0][0]".to_string()));
    }
}
