//! Resolved run configuration: defaults, key=value file parsing, and
//! validation. CLI flags override file values; every command echoes the
//! fully resolved configuration.

use crate::error::{Error, Result};
use crate::subspace::FusionSpace;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Optional pooling applied to the spatial view before the metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialPool {
    None,
    Gap,
}

impl FromStr for SpatialPool {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SpatialPool::None),
            "gap" => Ok(SpatialPool::Gap),
            other => Err(Error::Config(format!(
                "spatial_pool must be one of {{none, gap}}, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for SpatialPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpatialPool::None => write!(f, "none"),
            SpatialPool::Gap => write!(f, "gap"),
        }
    }
}

impl FromStr for FusionSpace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "similarity" => Ok(FusionSpace::Similarity),
            "distance" => Ok(FusionSpace::Distance),
            other => Err(Error::Config(format!(
                "fusion_space must be one of {{similarity, distance}}, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for FusionSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionSpace::Similarity => write!(f, "similarity"),
            FusionSpace::Distance => write!(f, "distance"),
        }
    }
}

/// All tunable hyperparameters with their defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// N: classes per episode.
    pub way: usize,
    /// K: support shots per class.
    pub shot: usize,
    /// M: query samples per class.
    pub query: usize,
    /// Episodes per evaluation run.
    pub episodes: usize,
    /// Low-pass cutoff in (0, 1).
    pub tau: f64,
    /// Weight of the orthogonality regularizer.
    pub lambda: f64,
    /// Support jitter scale.
    pub jitter: f64,
    /// Distance smoothing factor.
    pub epsilon: f64,
    /// Global seed; every stream derives from it.
    pub seed: u64,
    pub fusion_space: FusionSpace,
    pub spatial_pool: SpatialPool,
    /// Channel-attention reduction ratio (must divide C).
    pub reduction: usize,
    /// Initial logit scale.
    pub scale: f64,
    /// Trainer learning rate.
    pub lr: f64,
    /// Trainer step count.
    pub steps: usize,
    /// Central-difference step size.
    pub fd_h: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            way: 5,
            shot: 5,
            query: 15,
            episodes: 600,
            tau: 0.3,
            lambda: 0.03,
            jitter: 1e-5,
            epsilon: 1e-6,
            seed: 0,
            fusion_space: FusionSpace::Similarity,
            spatial_pool: SpatialPool::None,
            reduction: 4,
            scale: 1.0,
            lr: 0.05,
            steps: 50,
            fd_h: 1e-4,
        }
    }
}

impl Config {
    /// Truncation cap: min(K, 5) per the 1-shot/5-shot protocol.
    pub fn d_max(&self) -> usize {
        self.shot.min(5)
    }

    /// Apply one key=value assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::Config(format!("cannot parse {key}={value:?}"))
            })
        }
        match key {
            "way" => self.way = num(key, value)?,
            "shot" => self.shot = num(key, value)?,
            "query" => self.query = num(key, value)?,
            "episodes" => self.episodes = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "jitter" => self.jitter = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "fusion_space" => self.fusion_space = value.parse()?,
            "spatial_pool" => self.spatial_pool = value.parse()?,
            "reduction" => self.reduction = num(key, value)?,
            "scale" => self.scale = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "fd_h" => self.fd_h = num(key, value)?,
            other => {
                return Err(Error::Config(format!("unknown config key {other:?}")))
            }
        }
        Ok(())
    }

    /// Merge a flat key=value file into this config. Lines starting with `#`
    /// and blank lines are ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!(
                "tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.jitter < 0.0 {
            return Err(Error::Config(format!(
                "jitter must be nonnegative, got {}",
                self.jitter
            )));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if self.way < 2 {
            return Err(Error::Config(format!(
                "way must be at least 2, got {}",
                self.way
            )));
        }
        if self.shot < 1 || self.query < 1 {
            return Err(Error::Config(format!(
                "shot and query must be at least 1, got shot={} query={}",
                self.shot, self.query
            )));
        }
        if self.reduction < 1 {
            return Err(Error::Config("reduction must be at least 1".into()));
        }
        if self.scale <= 0.0 {
            return Err(Error::Config(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        if self.fd_h <= 0.0 {
            return Err(Error::Config(format!(
                "fd_h must be positive, got {}",
                self.fd_h
            )));
        }
        if self.lr < 0.0 {
            return Err(Error::Config(format!(
                "lr must be nonnegative, got {}",
                self.lr
            )));
        }
        Ok(())
    }

    /// Every resolved value, one key=value line each; printed at the top of
    /// each command report so runs are auditable.
    pub fn echo(&self) -> String {
        format!(
            "way={}\nshot={}\nquery={}\nepisodes={}\ntau={}\nlambda={}\njitter={}\nepsilon={}\nseed={}\nfusion_space={}\nspatial_pool={}\nreduction={}\nscale={}\nlr={}\nsteps={}\nfd_h={}\nd_max={}",
            self.way,
            self.shot,
            self.query,
            self.episodes,
            self.tau,
            self.lambda,
            self.jitter,
            self.epsilon,
            self.seed,
            self.fusion_space,
            self.spatial_pool,
            self.reduction,
            self.scale,
            self.lr,
            self.steps,
            self.fd_h,
            self.d_max()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_match_protocol() {
        let c = Config::default();
        assert_eq!(c.way, 5);
        assert_eq!(c.query, 15);
        assert_eq!(c.episodes, 600);
        assert_eq!(c.tau, 0.3);
        assert_eq!(c.lambda, 0.03);
        assert_eq!(c.jitter, 1e-5);
        assert_eq!(c.epsilon, 1e-6);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn rejects_out_of_range_tau() {
        let mut c = Config::default();
        c.tau = 1.5;
        assert!(matches!(c.validate().unwrap_err(), Error::Config(_)));
    }

    #[test]
    fn lambda_zero_is_legal() {
        let mut c = Config::default();
        c.lambda = 0.0;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn file_then_flag_override() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# comment\ntau=0.4\nway=7").unwrap();
        let mut c = Config::default();
        c.apply_file(f.path()).unwrap();
        assert_eq!(c.tau, 0.4);
        assert_eq!(c.way, 7);
        c.set("tau", "0.25").unwrap(); // flag wins
        assert_eq!(c.tau, 0.25);
        assert!(c.set("bogus", "1").is_err());
    }

    #[test]
    fn d_max_caps_at_five() {
        let mut c = Config::default();
        c.shot = 1;
        assert_eq!(c.d_max(), 1);
        c.shot = 9;
        assert_eq!(c.d_max(), 5);
    }
}
