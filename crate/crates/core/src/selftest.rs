//! In-process verification suite: cross-checks the fast implementations
//! against independent reference computations and exercises both file
//! formats. Runs from the CLI (`selftest`) and from the test suite.

use crate::config::Config;
use crate::episodic::{sample_episode, DatasetSplit};
use crate::error::Result;
use crate::objective::{fd_gradient, load_params, save_params, ModelParams};
use crate::oracle;
use crate::pipeline::{forward_episode, Variant};
use crate::rng::{domain, substream};
use crate::spectral::{build_mask, dct2};
use crate::subspace::{build_subspace, projection_distance, View};
use crate::tensor::FeatureTensor;
use crate::{data_io, subspace};
use rand::Rng;
use rand_distr::StandardNormal;

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, run: impl FnOnce() -> Result<String>) -> CheckResult {
    match run() {
        Ok(detail) => CheckResult {
            name,
            passed: true,
            detail,
        },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn fail(msg: String) -> crate::error::Error {
    crate::error::Error::Numerical(msg)
}

fn random_tensor(c: usize, h: usize, w: usize, rng: &mut impl Rng) -> FeatureTensor {
    let data = (0..c * h * w)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    FeatureTensor::new(c, h, w, data).expect("finite by construction")
}

fn check_transform_oracle(seed: u64) -> Result<String> {
    let mut rng = substream(seed, &[domain::INIT, 100]);
    let mut worst = 0.0f64;
    for &(c, h, w) in &[(1, 4, 4), (2, 5, 3), (3, 7, 7)] {
        let x = random_tensor(c, h, w, &mut rng);
        let fast = dct2(&x)?;
        let slow = oracle::naive_dct2(&x);
        for ch in 0..c {
            for u in 0..h {
                for v in 0..w {
                    worst = worst.max((fast.get(ch, u, v) - slow.get(ch, u, v)).abs());
                }
            }
        }
        // energy preservation and exact inversion
        let back = crate::spectral::idct2(&fast)?;
        for i in 0..c * h * w {
            worst = worst.max((back.data()[i] - x.data()[i]).abs());
        }
    }
    if worst > 1e-9 {
        return Err(fail(format!("transform deviates from reference by {worst:.3e}")));
    }
    Ok(format!("max deviation {worst:.3e}"))
}

fn check_mask_enumeration() -> Result<String> {
    let mut checked = 0usize;
    for &(h, w) in &[(2, 2), (4, 6), (8, 8), (10, 10)] {
        for &tau in &[0.1, 0.3, 0.5, 0.9] {
            let mask = build_mask(h, w, tau)?;
            let reference = oracle::mask_reference(h, w, tau);
            for u in 0..h {
                for v in 0..w {
                    if mask.keep(u, v) != reference[u * w + v] {
                        return Err(fail(format!(
                            "mask {h}x{w} tau={tau} disagrees with reference at ({u},{v})"
                        )));
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{checked} mask cells verified"))
}

fn check_projection_oracle(seed: u64) -> Result<String> {
    let mut rng = substream(seed, &[domain::INIT, 101]);
    let mut worst = 0.0f64;
    for &(dim, k) in &[(6usize, 3usize), (12, 5), (20, 4)] {
        let support: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let mut jrng = substream(seed, &[domain::JITTER, dim as u64, k as u64]);
        let sub = build_subspace(View::Spatial, &support, 5, 1e-5, &mut jrng)?;
        let idem = oracle::projector_idempotence_error(&sub);
        worst = worst.max(idem);
        for _ in 0..3 {
            let q: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let fast = projection_distance(&q, &sub)?;
            let slow = oracle::projector_distance(&q, &sub);
            worst = worst.max((fast - slow).abs());
        }
    }
    if worst > 1e-8 {
        return Err(fail(format!("projection deviates from reference by {worst:.3e}")));
    }
    Ok(format!("max deviation {worst:.3e}"))
}

fn check_fusion_gradient(seed: u64) -> Result<String> {
    // Build a small episode, compare the numerical fusion-weight gradient
    // against the analytic softmax-chain gradient on fixed distances.
    let cfg = small_config();
    let split = small_split(seed)?;
    let mut rng = substream(seed, &[domain::SAMPLE, 0]);
    let ep = sample_episode(
        &split,
        crate::episodic::Phase::Base,
        cfg.way,
        cfg.shot,
        cfg.query,
        &mut rng,
    )?;
    let params = ModelParams::init(split.channels()?, cfg.reduction, cfg.scale, seed)?;
    let out = forward_episode(&ep, &params, &cfg, seed, 0, Variant::V3)?;
    let dual = out.dual.expect("full variant produces dual distances");
    let analytic = oracle::analytic_fusion_gradient(
        &dual,
        &out.labels,
        params.fusion.w,
        params.logit_scale,
        cfg.fusion_space,
    );
    let grad = fd_gradient(&ep, &params, &cfg, seed, 0, cfg.fd_h)?;
    // fusion weights are the two entries right after the attention block
    let base = params.attention.param_count();
    let mut worst = 0.0f64;
    for j in 0..2 {
        worst = worst.max((grad[base + j] - analytic[j]).abs());
    }
    if worst > 1e-5 {
        return Err(fail(format!(
            "fusion gradient mismatch {worst:.3e} (numeric vs analytic)"
        )));
    }
    Ok(format!("max gradient mismatch {worst:.3e}"))
}

fn check_dataset_roundtrip(seed: u64) -> Result<String> {
    let spec = data_io::SynthSpec {
        classes: 8,
        samples_per_class: 3,
        channels: 2,
        height: 4,
        width: 4,
        seed,
        ..data_io::SynthSpec::default()
    };
    let split = data_io::generate_synthetic(&spec)?;
    let dir = std::env::temp_dir().join(format!("dualsub-selftest-{}-{seed}", std::process::id()));
    data_io::write_split(&dir, &split, &[])?;
    let back = data_io::read_split(&dir)?;
    let _ = std::fs::remove_dir_all(&dir);
    if back.len() != split.len() || back.class_count() != split.class_count() {
        return Err(fail("dataset round-trip changed sample or class counts".into()));
    }
    // storage is f32: values survive within single-precision rounding
    let mut worst = 0.0f64;
    for i in 0..split.len() {
        for (a, b) in split.feature(i).data().iter().zip(back.feature(i).data()) {
            worst = worst.max((a - b).abs());
        }
    }
    if worst > 1e-5 {
        return Err(fail(format!("dataset round-trip error {worst:.3e}")));
    }
    Ok(format!("{} samples round-tripped, max error {worst:.3e}", split.len()))
}

fn check_params_roundtrip(seed: u64) -> Result<String> {
    let params = ModelParams::init(8, 4, 1.0, seed)?;
    let path = std::env::temp_dir().join(format!(
        "dualsub-selftest-params-{}-{seed}.bin",
        std::process::id()
    ));
    save_params(&params, &path)?;
    let back = load_params(&path)?;
    let _ = std::fs::remove_file(&path);
    if back.to_vec() != params.to_vec() {
        return Err(fail("parameter file round-trip is not exact".into()));
    }
    Ok(format!("{} parameters round-tripped exactly", params.param_count()))
}

fn check_one_shot_prototype(seed: u64) -> Result<String> {
    // One support sample: the subspace metric must agree with plain
    // distance-to-prototype despite the regularizing jitter.
    let mut rng = substream(seed, &[domain::INIT, 102]);
    let s: Vec<f64> = (0..64).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let q: Vec<f64> = (0..64).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut jrng = substream(seed, &[domain::JITTER, 200]);
    let sub = build_subspace(View::Spatial, std::slice::from_ref(&s), 5, 1e-5, &mut jrng)?;
    let d = projection_distance(&q, &sub)?;
    let proto: f64 = q.iter().zip(&s).map(|(a, b)| (a - b) * (a - b)).sum();
    let rel = (d - proto).abs() / proto.max(1e-12);
    if rel > 1e-6 {
        return Err(fail(format!("one-shot metric deviates from prototype by {rel:.3e}")));
    }
    Ok(format!("relative deviation {rel:.3e}"))
}

fn small_config() -> Config {
    Config {
        way: 3,
        shot: 2,
        query: 2,
        episodes: 2,
        reduction: 2,
        ..Config::default()
    }
}

fn small_split(seed: u64) -> Result<DatasetSplit> {
    data_io::generate_synthetic(&data_io::SynthSpec {
        classes: 8,
        samples_per_class: 6,
        channels: 2,
        height: 4,
        width: 4,
        seed,
        ..data_io::SynthSpec::default()
    })
}

fn check_fusion_normalization() -> Result<String> {
    let alpha = subspace::FusionParams::default().alpha();
    let sum = alpha[0] + alpha[1];
    if (sum - 1.0).abs() > 1e-12 || alpha[0] <= 0.0 || alpha[1] <= 0.0 {
        return Err(fail(format!("fusion weights not a distribution: {alpha:?}")));
    }
    Ok(format!("alpha = ({:.3}, {:.3})", alpha[0], alpha[1]))
}

/// Run every check. `seed` feeds the randomized cross-checks.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    vec![
        check("transform-vs-reference", || check_transform_oracle(seed)),
        check("mask-enumeration", check_mask_enumeration),
        check("projection-vs-reference", || check_projection_oracle(seed)),
        check("one-shot-prototype", || check_one_shot_prototype(seed)),
        check("fusion-normalization", check_fusion_normalization),
        check("fusion-gradient", || check_fusion_gradient(seed)),
        check("dataset-roundtrip", || check_dataset_roundtrip(seed)),
        check("params-roundtrip", || check_params_roundtrip(seed)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[cfg(not(feature = "fault-mask"))]
    #[test]
    fn all_checks_pass() {
        for r in run_all(7) {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }

    #[cfg(feature = "fault-mask")]
    #[test]
    fn mask_fault_is_detected() {
        let results = run_all(7);
        let mask = results
            .iter()
            .find(|r| r.name == "mask-enumeration")
            .unwrap();
        assert!(!mask.passed, "injected mask fault went undetected");
    }
}
