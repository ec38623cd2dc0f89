//! Feature-tensor dataset file format (FTS), the deterministic synthetic
//! benchmark generator, and split manifests.
//!
//! Storage is 32-bit little-endian; all computation upstream stays 64-bit.

use crate::episodic::{DatasetSplit, Phase};
use crate::error::{Error, Result};
use crate::rng::{domain, substream};
use crate::spectral::{build_mask, idct2, LowPassMask};
use crate::tensor::{FeatureTensor, Spectrum};
use rand::Rng;
use rand_distr::StandardNormal;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

const FTS_MAGIC: &[u8; 4] = b"FTS1";
const FTS_VERSION: u32 = 1;

/// One loaded FTS file: samples plus the declared global class count.
#[derive(Debug, Clone, PartialEq)]
pub struct FtsData {
    pub samples: Vec<(FeatureTensor, u32)>,
    pub class_count: u32,
}

/// Write samples as an FTS file: header (magic, version, sample count,
/// C, H, W, class count), then label u32 + C*H*W little-endian f32 per
/// sample.
pub fn write_fts(path: &Path, samples: &[(FeatureTensor, u32)], class_count: u32) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let (c, h, w) = match samples.first() {
        Some((t, _)) => (t.channels(), t.height(), t.width()),
        None => (1, 1, 1), // empty dataset is a valid file
    };
    for (i, (t, label)) in samples.iter().enumerate() {
        if (t.channels(), t.height(), t.width()) != (c, h, w) {
            return Err(Error::ShapeMismatch(format!(
                "sample {i} has shape {}x{}x{}, expected {c}x{h}x{w}",
                t.channels(),
                t.height(),
                t.width()
            )));
        }
        if *label >= class_count {
            return Err(Error::InvalidArgument(format!(
                "sample {i} label {label} >= class count {class_count}"
            )));
        }
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    f.write_all(FTS_MAGIC).map_err(io_err)?;
    for v in [
        FTS_VERSION,
        samples.len() as u32,
        c as u32,
        h as u32,
        w as u32,
        class_count,
    ] {
        f.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    for (t, label) in samples {
        f.write_all(&label.to_le_bytes()).map_err(io_err)?;
        for &v in t.data() {
            f.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
        }
    }
    f.flush().map_err(io_err)?;
    Ok(())
}

/// Read and validate an FTS file. Errors carry the byte offset and the
/// expected vs actual sizes.
pub fn read_fts(path: &Path) -> Result<FtsData> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(io_err)?
        .read_to_end(&mut bytes)
        .map_err(io_err)?;
    if bytes.len() < 28 {
        return Err(Error::Parse {
            offset: bytes.len() as u64,
            msg: format!("header needs 28 bytes, file has {}", bytes.len()),
        });
    }
    if &bytes[0..4] != FTS_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            msg: format!("bad magic {:?}, expected FTS1", &bytes[0..4]),
        });
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != FTS_VERSION {
        return Err(Error::Parse {
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let count = u32_at(8) as usize;
    let c = u32_at(12) as usize;
    let h = u32_at(16) as usize;
    let w = u32_at(20) as usize;
    let class_count = u32_at(24);
    let per_sample = 4 + c * h * w * 4;
    let expected = 28 + count * per_sample;
    if bytes.len() != expected {
        return Err(Error::Parse {
            offset: bytes.len().min(expected) as u64,
            msg: format!(
                "payload size mismatch: expected {expected} bytes for {count} samples, got {}",
                bytes.len()
            ),
        });
    }
    let mut samples = Vec::with_capacity(count);
    let mut off = 28;
    for i in 0..count {
        let label = u32_at(off);
        if label >= class_count {
            return Err(Error::Parse {
                offset: off as u64,
                msg: format!("sample {i} label {label} >= class count {class_count}"),
            });
        }
        off += 4;
        let mut data = Vec::with_capacity(c * h * w);
        for _ in 0..c * h * w {
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            data.push(v as f64);
            off += 4;
        }
        let tensor = FeatureTensor::new(c, h, w, data).map_err(|e| Error::Parse {
            offset: off as u64,
            msg: format!("sample {i}: {e}"),
        })?;
        samples.push((tensor, label));
    }
    Ok(FtsData {
        samples,
        class_count,
    })
}

/// Synthetic benchmark specification.
///
/// Per class: a fixed random spectral template supported only on the
/// tau=0.3 passband. Per sample: template + small in-passband pose
/// perturbation + high-frequency noise drawn from a class-independent
/// process (supported only outside the passband), so the high-frequency
/// content carries no class signal. Tensors are produced by the inverse
/// transform; classes split 50/25/25 into base/val/novel.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub samples_per_class: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Std-dev of passband template coefficients.
    pub template_energy: f64,
    /// Std-dev of per-sample in-passband perturbation.
    pub pose_scale: f64,
    /// Std-dev of per-sample out-of-band noise.
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 40,
            samples_per_class: 20,
            channels: 8,
            height: 8,
            width: 8,
            template_energy: 1.0,
            pose_scale: 0.3,
            noise_scale: 3.0,
            seed: 0,
        }
    }
}

/// Fixed passband cutoff of the generator; independent of the evaluation
/// tau so the benchmark's spectral-support contract is stable.
pub const SYNTH_TAU: f64 = 0.3;

/// 50/25/25 class split sizes (rounded); errors if any split is empty.
pub fn split_sizes(classes: usize) -> Result<(usize, usize, usize)> {
    let base = (classes as f64 * 0.50).round() as usize;
    let val = (classes as f64 * 0.25).round() as usize;
    if base + val >= classes || base == 0 || val == 0 {
        return Err(Error::Config(format!(
            "{classes} classes cannot be split 50/25/25 without an empty split"
        )));
    }
    Ok((base, val, classes - base - val))
}

fn draw_spectrum(
    c: usize,
    h: usize,
    w: usize,
    mask: &LowPassMask,
    in_band: bool,
    scale: f64,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let mut data = vec![0.0; c * h * w];
    for ch in 0..c {
        for u in 0..h {
            for v in 0..w {
                if mask.keep(u, v) == in_band {
                    let n: f64 = rng.sample(StandardNormal);
                    data[(ch * h + u) * w + v] = scale * n;
                }
            }
        }
    }
    data
}

/// Deterministically generate the synthetic benchmark.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<DatasetSplit> {
    if spec.classes == 0 || spec.samples_per_class == 0 {
        return Err(Error::Config(
            "classes and samples_per_class must be positive".into(),
        ));
    }
    if spec.template_energy < 0.0 || spec.pose_scale < 0.0 || spec.noise_scale < 0.0 {
        return Err(Error::Config("synthetic scales must be nonnegative".into()));
    }
    let (n_base, n_val, _) = split_sizes(spec.classes)?;
    let (c, h, w) = (spec.channels, spec.height, spec.width);
    let mask = build_mask(h, w, SYNTH_TAU)?;
    let mut rng = substream(spec.seed, &[domain::SYNTH]);

    let mut features = Vec::with_capacity(spec.classes * spec.samples_per_class);
    let mut labels = Vec::with_capacity(features.capacity());
    for class in 0..spec.classes {
        let template = draw_spectrum(c, h, w, &mask, true, spec.template_energy, &mut rng);
        for _ in 0..spec.samples_per_class {
            let pose = draw_spectrum(c, h, w, &mask, true, spec.pose_scale, &mut rng);
            let noise = draw_spectrum(c, h, w, &mask, false, spec.noise_scale, &mut rng);
            let data: Vec<f64> = template
                .iter()
                .zip(&pose)
                .zip(&noise)
                .map(|((t, p), n)| t + p + n)
                .collect();
            let spectrum = Spectrum::new(c, h, w, data)?;
            features.push(idct2(&spectrum)?);
            labels.push(class as u32);
        }
    }
    let class_phase: Vec<Phase> = (0..spec.classes)
        .map(|k| {
            if k < n_base {
                Phase::Base
            } else if k < n_base + n_val {
                Phase::Val
            } else {
                Phase::Novel
            }
        })
        .collect();
    DatasetSplit::new(features, labels, class_phase)
}

/// Manifest file name inside a generated dataset directory.
pub const MANIFEST_NAME: &str = "manifest.txt";

/// Write a DatasetSplit as three FTS files plus a manifest into `dir`.
pub fn write_split(dir: &Path, split: &DatasetSplit, extra: &[(String, String)]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let class_count = split.class_count() as u32;
    let mut manifest = String::new();
    manifest.push_str(&format!("classes={class_count}\n"));
    for (k, v) in extra {
        manifest.push_str(&format!("{k}={v}\n"));
    }
    for phase in [Phase::Base, Phase::Val, Phase::Novel] {
        let classes = split.classes_in(phase);
        let mut samples = Vec::new();
        for class in classes {
            for &idx in split.samples_of(class) {
                samples.push((split.feature(idx).clone(), split.label(idx)));
            }
        }
        let name = format!("{phase}.fts");
        write_fts(&dir.join(&name), &samples, class_count)?;
        manifest.push_str(&format!("{phase}={name}\n"));
    }
    std::fs::write(dir.join(MANIFEST_NAME), manifest).map_err(|source| Error::Io {
        path: dir.join(MANIFEST_NAME),
        source,
    })?;
    Ok(())
}

fn manifest_dir(path: &Path) -> Result<PathBuf> {
    if path.is_dir() {
        Ok(path.to_path_buf())
    } else if path.file_name().map(|n| n == MANIFEST_NAME).unwrap_or(false) {
        Ok(path.parent().unwrap_or(Path::new(".")).to_path_buf())
    } else {
        Err(Error::Config(format!(
            "expected a dataset directory or its {MANIFEST_NAME}, got {}",
            path.display()
        )))
    }
}

/// Load a dataset directory (three FTS files + manifest) back into a
/// DatasetSplit. Enforces pairwise-disjoint class sets across the splits.
pub fn read_split(path: &Path) -> Result<DatasetSplit> {
    let dir = manifest_dir(path)?;
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&manifest_path).map_err(|source| Error::Io {
        path: manifest_path.clone(),
        source,
    })?;
    let lookup = |key: &str| -> Result<String> {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{key}=")).map(str::to_string))
            .ok_or_else(|| Error::Config(format!("manifest is missing {key}=")))
    };

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut class_count = 0u32;
    let mut phase_classes: Vec<(Phase, std::collections::BTreeSet<u32>)> = Vec::new();
    for phase in [Phase::Base, Phase::Val, Phase::Novel] {
        let file = dir.join(lookup(&phase.to_string())?);
        let data = read_fts(&file)?;
        class_count = class_count.max(data.class_count);
        let mut seen = std::collections::BTreeSet::new();
        for (t, l) in data.samples {
            seen.insert(l);
            features.push(t);
            labels.push(l);
        }
        phase_classes.push((phase, seen));
    }
    // disjointness across splits
    for i in 0..phase_classes.len() {
        for j in i + 1..phase_classes.len() {
            if let Some(shared) = phase_classes[i].1.intersection(&phase_classes[j].1).next() {
                return Err(Error::Config(format!(
                    "class {shared} appears in both the {} and {} splits",
                    phase_classes[i].0, phase_classes[j].0
                )));
            }
        }
    }
    let mut class_phase = vec![Phase::Base; class_count as usize];
    for (phase, classes) in &phase_classes {
        for &k in classes {
            class_phase[k as usize] = *phase;
        }
    }
    DatasetSplit::new(features, labels, class_phase)
}
