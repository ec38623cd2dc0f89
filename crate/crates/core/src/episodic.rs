//! N-way K-shot episode sampling over disjoint class splits, per-episode
//! evaluation through the full pipeline, and accuracy statistics with 95%
//! confidence intervals.
//!
//! Episodes are independent: every episode derives its own sampling and
//! jitter streams from (seed, episode index), so parallel evaluation is
//! bitwise identical to the sequential order.

use crate::config::Config;
use crate::error::{Error, Result};
use crate::objective::ModelParams;
use crate::pipeline::{forward_episode, Variant};
use crate::rng::{domain, substream};
use crate::tensor::FeatureTensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

/// Which disjoint class split a class belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Base,
    Val,
    Novel,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Base => write!(f, "base"),
            Phase::Val => write!(f, "val"),
            Phase::Novel => write!(f, "novel"),
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Phase::Base),
            "val" => Ok(Phase::Val),
            "novel" => Ok(Phase::Novel),
            other => Err(Error::Config(format!(
                "phase must be one of {{base, val, novel}}, got {other:?}"
            ))),
        }
    }
}

/// A labeled feature dataset whose classes are partitioned into three
/// pairwise-disjoint splits.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    features: Vec<FeatureTensor>,
    labels: Vec<u32>,
    class_phase: Vec<Phase>,
    by_class: Vec<Vec<usize>>,
}

impl DatasetSplit {
    /// Build and validate: every label in range, one phase per class.
    /// Disjointness is structural (each class carries exactly one tag).
    pub fn new(
        features: Vec<FeatureTensor>,
        labels: Vec<u32>,
        class_phase: Vec<Phase>,
    ) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} features vs {} labels",
                features.len(),
                labels.len()
            )));
        }
        let class_count = class_phase.len();
        let mut by_class = vec![Vec::new(); class_count];
        for (i, &l) in labels.iter().enumerate() {
            if l as usize >= class_count {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} has label {l} but only {class_count} classes are declared"
                )));
            }
            by_class[l as usize].push(i);
        }
        Ok(Self {
            features,
            labels,
            class_phase,
            by_class,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_phase.len()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature(&self, i: usize) -> &FeatureTensor {
        &self.features[i]
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn classes_in(&self, phase: Phase) -> Vec<usize> {
        (0..self.class_count())
            .filter(|&k| self.class_phase[k] == phase)
            .collect()
    }

    pub fn samples_of(&self, class: usize) -> &[usize] {
        &self.by_class[class]
    }

    /// Channel count of the stored features (uniform by construction of the
    /// file format).
    pub fn channels(&self) -> Result<usize> {
        self.features
            .first()
            .map(|f| f.channels())
            .ok_or_else(|| Error::InvalidArgument("dataset is empty".into()))
    }

    /// Randomly permute the sample labels, destroying the feature/label
    /// association (chance-level control).
    pub fn shuffle_labels(&mut self, seed: u64) {
        let mut rng = substream(seed, &[domain::SHUFFLE]);
        self.labels.shuffle(&mut rng);
        let class_count = self.class_count();
        let mut by_class = vec![Vec::new(); class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l as usize].push(i);
        }
        self.by_class = by_class;
    }
}

/// One sample inside an episode, with its episode-local label (0..N-1) and
/// the retained global identity for audit.
#[derive(Debug, Clone)]
pub struct EpisodeSample {
    pub tensor: FeatureTensor,
    pub episode_label: usize,
    pub global_label: u32,
    pub dataset_index: usize,
}

/// One N-way K-shot task with M queries per class.
#[derive(Debug, Clone)]
pub struct Episode {
    pub way: usize,
    pub shot: usize,
    pub queries_per_class: usize,
    pub support: Vec<EpisodeSample>,
    pub query: Vec<EpisodeSample>,
}

/// Sample one episode: N classes uniformly without replacement from the
/// phase, then K+M samples per class without replacement, first K to the
/// support. Episode-local labels follow the sampled class order.
pub fn sample_episode(
    split: &DatasetSplit,
    phase: Phase,
    way: usize,
    shot: usize,
    queries: usize,
    rng: &mut impl Rng,
) -> Result<Episode> {
    let classes = split.classes_in(phase);
    if classes.len() < way {
        return Err(Error::Config(format!(
            "phase {phase} has {} classes but the episode needs {way}",
            classes.len()
        )));
    }
    let chosen: Vec<usize> = {
        let mut pool = classes;
        // partial Fisher-Yates: uniform without replacement
        for i in 0..way {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        pool.truncate(way);
        pool
    };

    let mut support = Vec::with_capacity(way * shot);
    let mut query = Vec::with_capacity(way * queries);
    for (episode_label, &class) in chosen.iter().enumerate() {
        let samples = split.samples_of(class);
        let need = shot + queries;
        if samples.len() < need {
            return Err(Error::Config(format!(
                "class {class} has {} samples but the episode needs {need} (K={shot} + M={queries})",
                samples.len()
            )));
        }
        let mut pool = samples.to_vec();
        for i in 0..need {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        for (pos, &idx) in pool[..need].iter().enumerate() {
            let sample = EpisodeSample {
                tensor: split.feature(idx).clone(),
                episode_label,
                global_label: split.label(idx),
                dataset_index: idx,
            };
            if pos < shot {
                support.push(sample);
            } else {
                query.push(sample);
            }
        }
    }
    Ok(Episode {
        way,
        shot,
        queries_per_class: queries,
        support,
        query,
    })
}

/// One episode's evaluation outcome.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    pub logits: Vec<Vec<f64>>,
}

/// Classify every query of an episode through the chosen variant.
pub fn evaluate_episode(
    ep: &Episode,
    params: &ModelParams,
    cfg: &Config,
    seed: u64,
    episode_index: u64,
    variant: Variant,
) -> Result<EpisodeResult> {
    let out = forward_episode(ep, params, cfg, seed, episode_index, variant)?;
    let correct = out
        .predictions
        .iter()
        .zip(&out.labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(EpisodeResult {
        accuracy: correct as f64 / out.labels.len() as f64,
        predictions: out.predictions,
        labels: out.labels,
        logits: out.logits,
    })
}

/// Evaluation statistics over a stream of episodes.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean_accuracy: f64,
    pub ci95: f64,
    pub accuracies: Vec<f64>,
}

/// ci95 = 1.96 * sample_stdev(accs) / sqrt(n).
pub fn accuracy_stats(accuracies: &[f64]) -> (f64, f64) {
    let n = accuracies.len() as f64;
    let mean = accuracies.iter().sum::<f64>() / n;
    if accuracies.len() < 2 {
        return (mean, 0.0);
    }
    let var = accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

/// Run `cfg.episodes` sampled episodes through one variant. Episodes are
/// processed in parallel; determinism comes from per-episode sub-streams.
pub fn evaluate(
    split: &DatasetSplit,
    phase: Phase,
    params: &ModelParams,
    cfg: &Config,
    variant: Variant,
) -> Result<EvalReport> {
    if cfg.episodes < 2 {
        return Err(Error::Config(format!(
            "evaluation needs at least 2 episodes, got {}",
            cfg.episodes
        )));
    }
    let accuracies: Vec<f64> = (0..cfg.episodes)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut rng = substream(cfg.seed, &[domain::SAMPLE, i as u64]);
            let ep = sample_episode(split, phase, cfg.way, cfg.shot, cfg.query, &mut rng)?;
            Ok(evaluate_episode(&ep, params, cfg, cfg.seed, i as u64, variant)?.accuracy)
        })
        .collect::<Result<Vec<_>>>()?;
    let (mean_accuracy, ci95) = accuracy_stats(&accuracies);
    Ok(EvalReport {
        episodes: cfg.episodes,
        mean_accuracy,
        ci95,
        accuracies,
    })
}

/// Evaluate every ablation variant on the identical episode stream
/// (shared seed).
pub fn ablate(
    split: &DatasetSplit,
    phase: Phase,
    params: &ModelParams,
    cfg: &Config,
) -> Result<Vec<(Variant, EvalReport)>> {
    Variant::ALL
        .iter()
        .map(|&v| Ok((v, evaluate(split, phase, params, cfg, v)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    fn toy_split(classes: usize, per_class: usize, seed: u64) -> DatasetSplit {
        let mut rng = substream(seed, &[domain::SYNTH]);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for k in 0..classes {
            for _ in 0..per_class {
                let data: Vec<f64> = (0..2 * 4 * 4)
                    .map(|_| k as f64 * 10.0 + rng.gen_range(-0.1..0.1))
                    .collect();
                features.push(FeatureTensor::new(2, 4, 4, data).unwrap());
                labels.push(k as u32);
            }
        }
        let phases: Vec<Phase> = (0..classes)
            .map(|k| {
                if k < classes / 2 {
                    Phase::Base
                } else if k < classes * 3 / 4 {
                    Phase::Val
                } else {
                    Phase::Novel
                }
            })
            .collect();
        DatasetSplit::new(features, labels, phases).unwrap()
    }

    #[test]
    fn rejects_out_of_range_label() {
        let f = vec![FeatureTensor::zeros(1, 2, 2)];
        let err = DatasetSplit::new(f, vec![3], vec![Phase::Base, Phase::Val]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn episode_shapes_match_protocol() {
        let split = toy_split(20, 20, 1);
        let mut rng = substream(0, &[domain::SAMPLE, 0]);
        let ep = sample_episode(&split, Phase::Base, 5, 1, 15, &mut rng).unwrap();
        assert_eq!(ep.support.len(), 5);
        assert_eq!(ep.query.len(), 75);
        let mut rng = substream(0, &[domain::SAMPLE, 1]);
        let ep = sample_episode(&split, Phase::Base, 5, 5, 15, &mut rng).unwrap();
        assert_eq!(ep.support.len() + ep.query.len(), 100);
        // support and query are disjoint sample sets
        let s: std::collections::HashSet<usize> =
            ep.support.iter().map(|x| x.dataset_index).collect();
        assert!(ep.query.iter().all(|q| !s.contains(&q.dataset_index)));
        // per-class counts
        for k in 0..5 {
            assert_eq!(ep.support.iter().filter(|x| x.episode_label == k).count(), 5);
            assert_eq!(ep.query.iter().filter(|x| x.episode_label == k).count(), 15);
        }
    }

    #[test]
    fn same_seed_gives_identical_episode() {
        let split = toy_split(20, 20, 1);
        let mut a = substream(7, &[domain::SAMPLE, 3]);
        let mut b = substream(7, &[domain::SAMPLE, 3]);
        let e1 = sample_episode(&split, Phase::Novel, 3, 2, 4, &mut a).unwrap();
        let e2 = sample_episode(&split, Phase::Novel, 3, 2, 4, &mut b).unwrap();
        let ids1: Vec<usize> = e1
            .support
            .iter()
            .chain(&e1.query)
            .map(|s| s.dataset_index)
            .collect();
        let ids2: Vec<usize> = e2
            .support
            .iter()
            .chain(&e2.query)
            .map(|s| s.dataset_index)
            .collect();
        assert_eq!(ids1, ids2);
    }

    #[test]
    fn insufficient_classes_or_samples_reported() {
        let split = toy_split(8, 3, 2);
        let mut rng = substream(0, &[domain::SAMPLE, 0]);
        let err = sample_episode(&split, Phase::Novel, 5, 1, 15, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        let mut rng = substream(0, &[domain::SAMPLE, 0]);
        let err = sample_episode(&split, Phase::Base, 2, 2, 15, &mut rng).unwrap_err();
        assert!(err.to_string().contains("samples"), "{err}");
    }

    #[test]
    fn self_classification_on_separated_classes_is_perfect() {
        // query set identical to support set, K >= 2, well-separated classes
        let split = toy_split(12, 10, 3);
        let mut rng = substream(1, &[domain::SAMPLE, 0]);
        let ep = sample_episode(&split, Phase::Base, 4, 2, 2, &mut rng).unwrap();
        let sanity = Episode {
            way: ep.way,
            shot: ep.shot,
            queries_per_class: ep.shot,
            support: ep.support.clone(),
            query: ep.support.clone(),
        };
        let params = ModelParams::init(2, 2, 1.0, 0).unwrap();
        let mut cfg = Config::default();
        cfg.shot = 2;
        let res = evaluate_episode(&sanity, &params, &cfg, 0, 0, Variant::V3).unwrap();
        assert_eq!(res.accuracy, 1.0);
    }

    #[test]
    fn stats_hand_case() {
        let (mean, ci) = accuracy_stats(&[0.8, 1.0]);
        assert!((mean - 0.9).abs() < 1e-12);
        assert!((ci - 1.96 * 0.141421356 / 2.0f64.sqrt()).abs() < 1e-6);
        let (_, ci0) = accuracy_stats(&[0.7, 0.7, 0.7]);
        assert!(ci0.abs() < 1e-12);
    }

    #[test]
    fn evaluation_is_deterministic_and_pure() {
        let split = toy_split(16, 8, 4);
        let params = ModelParams::init(2, 2, 1.0, 0).unwrap();
        let mut cfg = Config::default();
        cfg.way = 3;
        cfg.shot = 2;
        cfg.query = 3;
        cfg.episodes = 5;
        let before = split.clone();
        let r1 = evaluate(&split, Phase::Novel, &params, &cfg, Variant::V3).unwrap();
        let r2 = evaluate(&split, Phase::Novel, &params, &cfg, Variant::V3).unwrap();
        assert_eq!(r1.accuracies, r2.accuracies);
        for a in &r1.accuracies {
            assert!((0.0..=1.0).contains(a));
        }
        // evaluation never mutates the dataset
        for (x, y) in before.features.iter().zip(&split.features) {
            assert_eq!(x, y);
        }
        assert_eq!(before.labels, split.labels);
    }

    #[test]
    fn v0_equals_v3_with_collapsed_shape_weight() {
        let split = toy_split(16, 8, 5);
        let params = ModelParams::init(2, 2, 1.0, 0).unwrap();
        let mut cfg = Config::default();
        cfg.way = 3;
        cfg.shot = 2;
        cfg.query = 3;
        cfg.episodes = 4;
        let mut forced = params.clone();
        forced.fusion.w = [30.0, -30.0];
        for i in 0..cfg.episodes as u64 {
            let mut rng = substream(cfg.seed, &[domain::SAMPLE, i]);
            let ep =
                sample_episode(&split, Phase::Novel, cfg.way, cfg.shot, cfg.query, &mut rng)
                    .unwrap();
            let v0 = evaluate_episode(&ep, &params, &cfg, cfg.seed, i, Variant::V0).unwrap();
            let v3 = evaluate_episode(&ep, &forced, &cfg, cfg.seed, i, Variant::V3).unwrap();
            assert_eq!(v0.predictions, v3.predictions);
        }
    }
}
