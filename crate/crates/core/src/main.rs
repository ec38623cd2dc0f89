//! Command-line front end for the dual-view few-shot pipeline.
//!
//! Exit codes: 0 success, 1 validation/config error, 2 runtime/numerical
//! failure. Set RAYON_NUM_THREADS to cap worker parallelism; output is
//! deterministic regardless of thread count. Reports carry no timestamps,
//! so identical invocations produce byte-identical output.

use clap::{Args, Parser, Subcommand};
use dualsub::config::{Config, SpatialPool};
use dualsub::data_io::{generate_synthetic, read_split, write_split, SynthSpec};
use dualsub::episodic::{ablate, evaluate, EvalReport, Phase};
use dualsub::error::{Error, Result};
use dualsub::objective::{load_params, save_params, train, ModelParams};
use dualsub::pipeline::Variant;
use dualsub::subspace::FusionSpace;
use dualsub::{episodic, rng, selftest};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "dualsub",
    about = "Few-shot classification with a frequency-aware dual-subspace metric",
    long_about = "Few-shot classification with a frequency-aware dual-subspace metric.\n\
        Exit codes: 0 success, 1 validation/config error, 2 runtime/numerical failure.\n\
        Set RAYON_NUM_THREADS to cap worker parallelism (results are identical either way)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Hyperparameter flags shared by the episodic commands. Unset flags fall
/// back to the config file (if given), then to built-in defaults.
#[derive(Args, Debug, Default)]
struct CommonFlags {
    /// Flat key=value config file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// Classes per episode (N)
    #[arg(long)]
    way: Option<usize>,
    /// Support samples per class (K)
    #[arg(long)]
    shot: Option<usize>,
    /// Query samples per class (M)
    #[arg(long)]
    query: Option<usize>,
    /// Number of evaluation episodes
    #[arg(long)]
    episodes: Option<usize>,
    /// Low-pass cutoff in (0, 1)
    #[arg(long)]
    tau: Option<f64>,
    /// Weight of the subspace-orthogonality loss term
    #[arg(long)]
    lambda: Option<f64>,
    /// Std-dev of the support regularization noise
    #[arg(long)]
    jitter: Option<f64>,
    /// Stabilizer inside the distance-to-similarity map
    #[arg(long)]
    epsilon: Option<f64>,
    /// Master random seed
    #[arg(long)]
    seed: Option<u64>,
    /// Where the two views are fused: similarity | distance
    #[arg(long)]
    fusion_space: Option<FusionSpace>,
    /// Spatial-view pooling: none | gap
    #[arg(long)]
    spatial_pool: Option<SpatialPool>,
    /// Channel-attention bottleneck reduction ratio
    #[arg(long)]
    reduction: Option<usize>,
    /// Logit temperature
    #[arg(long)]
    scale: Option<f64>,
    /// Gradient-descent learning rate (train)
    #[arg(long)]
    lr: Option<f64>,
    /// Gradient-descent steps (train)
    #[arg(long)]
    steps: Option<usize>,
}

impl CommonFlags {
    fn resolve(&self) -> Result<Config> {
        let mut cfg = Config::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        macro_rules! over {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        over!(way, shot, query, episodes, tau, lambda, jitter, epsilon, seed, reduction, scale, lr, steps);
        if let Some(v) = self.fusion_space {
            cfg.fusion_space = v;
        }
        if let Some(v) = self.spatial_pool {
            cfg.spatial_pool = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark (three dataset files + manifest)
    GenSynth {
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Total number of classes (split 50/25/25 into base/val/novel)
        #[arg(long, default_value_t = 40)]
        classes: usize,
        /// Samples per class
        #[arg(long, default_value_t = 20)]
        samples_per_class: usize,
        /// Feature channels
        #[arg(long, default_value_t = 8)]
        channels: usize,
        /// Feature height
        #[arg(long, default_value_t = 8)]
        height: usize,
        /// Feature width
        #[arg(long, default_value_t = 8)]
        width: usize,
        /// Std-dev of the per-class low-frequency template
        #[arg(long, default_value_t = 1.0)]
        template_energy: f64,
        /// Std-dev of the per-sample in-band perturbation
        #[arg(long, default_value_t = 0.3)]
        pose_scale: f64,
        /// Std-dev of the class-independent out-of-band noise
        #[arg(long, default_value_t = 3.0)]
        noise_scale: f64,
        /// Generator seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate a model over sampled episodes
    Eval {
        /// Dataset directory (or its manifest.txt)
        #[arg(long)]
        data: PathBuf,
        /// Parameter file; omitted = freshly initialized parameters
        #[arg(long)]
        params: Option<PathBuf>,
        /// Which class split to sample episodes from: base | val | novel
        #[arg(long, default_value = "novel")]
        phase: Phase,
        /// Pipeline variant: V0 | V1 | V2 | V3
        #[arg(long, default_value = "V3")]
        variant: Variant,
        /// Write per-episode accuracies as CSV (columns: episode,accuracy)
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Shuffle class labels first (chance-level control)
        #[arg(long)]
        shuffle_labels: bool,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Train the attention/fusion parameters on the base split
    Train {
        /// Dataset directory (or its manifest.txt)
        #[arg(long)]
        data: PathBuf,
        /// Where to write the trained parameter file
        #[arg(long)]
        out: PathBuf,
        /// Warm-start parameter file; omitted = fresh initialization
        #[arg(long)]
        params: Option<PathBuf>,
        /// Write the loss trace as CSV (columns: step,l_cls,l_disc,l_total)
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Evaluate all four pipeline variants on the same episode stream
    Ablate {
        /// Dataset directory (or its manifest.txt)
        #[arg(long)]
        data: PathBuf,
        /// Parameter file; omitted = freshly initialized parameters
        #[arg(long)]
        params: Option<PathBuf>,
        /// Which class split to sample episodes from: base | val | novel
        #[arg(long, default_value = "novel")]
        phase: Phase,
        /// Write per-variant per-episode accuracies as CSV
        /// (columns: variant,episode,accuracy)
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Shuffle class labels first (chance-level control)
        #[arg(long)]
        shuffle_labels: bool,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Time the spatial-only and full pipelines at two feature scales
    Bench {
        /// Timed tasks per cell (after 3 warmups)
        #[arg(long, default_value_t = 20)]
        tasks: usize,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Run the built-in verification checks
    Selftest {
        /// Seed for the randomized cross-checks
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_or_init_params(
    path: &Option<PathBuf>,
    channels: usize,
    cfg: &Config,
) -> Result<ModelParams> {
    match path {
        Some(p) => {
            let params = load_params(p)?;
            if params.attention.channels() != channels {
                return Err(Error::Config(format!(
                    "parameter file has {} channels, dataset has {channels}",
                    params.attention.channels()
                )));
            }
            Ok(params)
        }
        None => ModelParams::init(channels, cfg.reduction, cfg.scale, rng::mix(cfg.seed, &[rng::domain::INIT])),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn report_header(command: &str, cfg: &Config) -> String {
    format!("command={command}\n{}\n", cfg.echo())
}

fn eval_lines(report: &EvalReport) -> String {
    format!(
        "episodes={}\nmean_accuracy={:.6}\nci95={:.6}\n",
        report.episodes, report.mean_accuracy, report.ci95
    )
}

fn cmd_eval(
    data: &Path,
    params_path: &Option<PathBuf>,
    phase: Phase,
    variant: Variant,
    csv: &Option<PathBuf>,
    shuffle_labels: bool,
    cfg: &Config,
) -> Result<String> {
    let mut split = read_split(data)?;
    if shuffle_labels {
        split.shuffle_labels(cfg.seed);
    }
    let params = load_or_init_params(params_path, split.channels()?, cfg)?;
    let report = evaluate(&split, phase, &params, cfg, variant)?;
    if let Some(path) = csv {
        let mut text = String::from("episode,accuracy\n");
        for (i, a) in report.accuracies.iter().enumerate() {
            text.push_str(&format!("{i},{a:.6}\n"));
        }
        write_text(path, &text)?;
    }
    Ok(format!(
        "{}dataset={}\nphase={phase}\nvariant={variant}\nshuffle_labels={shuffle_labels}\n{}",
        report_header("eval", cfg),
        data.display(),
        eval_lines(&report)
    ))
}

fn cmd_train(
    data: &Path,
    out: &Path,
    params_path: &Option<PathBuf>,
    trace_path: &Option<PathBuf>,
    cfg: &Config,
) -> Result<String> {
    let split = read_split(data)?;
    let init = load_or_init_params(params_path, split.channels()?, cfg)?;
    let result = train(&split, &init, cfg, cfg.steps, cfg.lr)?;
    save_params(&result.params, out)?;
    if let Some(path) = trace_path {
        let mut text = String::from("step,l_cls,l_disc,l_total\n");
        for (i, l) in result.trace.iter().enumerate() {
            text.push_str(&format!("{i},{:.6},{:.6},{:.6}\n", l.l_cls, l.l_disc, l.l_total));
        }
        write_text(path, &text)?;
    }
    let first = result.trace.first().map(|l| l.l_total).unwrap_or(f64::NAN);
    let last = result.trace.last().map(|l| l.l_total).unwrap_or(f64::NAN);
    Ok(format!(
        "{}dataset={}\nparams_out={}\nsteps={}\nfirst_loss={first:.6}\nlast_loss={last:.6}\n",
        report_header("train", cfg),
        data.display(),
        out.display(),
        result.trace.len()
    ))
}

fn cmd_ablate(
    data: &Path,
    params_path: &Option<PathBuf>,
    phase: Phase,
    csv: &Option<PathBuf>,
    shuffle_labels: bool,
    cfg: &Config,
) -> Result<String> {
    let mut split = read_split(data)?;
    if shuffle_labels {
        split.shuffle_labels(cfg.seed);
    }
    let params = load_or_init_params(params_path, split.channels()?, cfg)?;
    let rows = ablate(&split, phase, &params, cfg)?;
    let mut out = format!(
        "{}dataset={}\nphase={phase}\nshuffle_labels={shuffle_labels}\n",
        report_header("ablate", cfg),
        data.display()
    );
    out.push_str("variant  mean_accuracy  ci95\n");
    for (variant, report) in &rows {
        out.push_str(&format!(
            "{variant}       {:.6}       {:.6}\n",
            report.mean_accuracy, report.ci95
        ));
    }
    if let Some(path) = csv {
        let mut text = String::from("variant,episode,accuracy\n");
        for (variant, report) in &rows {
            for (i, a) in report.accuracies.iter().enumerate() {
                text.push_str(&format!("{variant},{i},{a:.6}\n"));
            }
        }
        write_text(path, &text)?;
    }
    Ok(out)
}

/// Rough per-task transient allocation for one episode forward pass, in
/// bytes: support/query tensors and spectra (f64) plus per-class bases.
fn transient_bytes(variant: Variant, c: usize, h: usize, w: usize, cfg: &Config) -> usize {
    let d = c * h * w;
    let n = cfg.way;
    let samples = n * (cfg.shot + cfg.query);
    let views = match variant {
        Variant::V0 => 1,
        _ => 2,
    };
    // per-sample working copies per view + per-class mean and basis per view
    8 * (views * samples * d + views * n * d * (1 + cfg.d_max()))
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn cmd_bench(tasks: usize, cfg: &Config) -> Result<String> {
    if tasks < 1 {
        return Err(Error::Config("tasks must be at least 1".into()));
    }
    let mut out = report_header("bench", cfg);
    out.push_str("note=timings are wall-clock and vary between runs\n");
    out.push_str("scale  dim  variant  params  median_ms  min_ms  max_ms  transient_kb\n");
    // analogues of a high-dimensional and a compact feature regime
    for (label, c, h, w) in [("1600-D", 64usize, 5usize, 5usize), ("640-D", 40, 4, 4)] {
        let spec = SynthSpec {
            classes: 12,
            samples_per_class: cfg.shot + cfg.query + 2,
            channels: c,
            height: h,
            width: w,
            seed: cfg.seed,
            ..SynthSpec::default()
        };
        let split = generate_synthetic(&spec)?;
        let params = ModelParams::init(c, cfg.reduction, cfg.scale, cfg.seed)?;
        for variant in [Variant::V0, Variant::V3] {
            let run_task = |i: u64| -> Result<()> {
                let mut rng = rng::substream(cfg.seed, &[rng::domain::SAMPLE, i]);
                let ep = episodic::sample_episode(
                    &split,
                    Phase::Base,
                    cfg.way,
                    cfg.shot,
                    cfg.query,
                    &mut rng,
                )?;
                episodic::evaluate_episode(&ep, &params, cfg, cfg.seed, i, variant)?;
                Ok(())
            };
            for i in 0..3 {
                run_task(i)?;
            }
            let mut times_ms = Vec::with_capacity(tasks);
            for i in 0..tasks {
                let t0 = std::time::Instant::now();
                run_task(i as u64)?;
                times_ms.push(t0.elapsed().as_secs_f64() * 1e3);
            }
            let lo = times_ms.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = times_ms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let med = median(&mut times_ms);
            out.push_str(&format!(
                "{label}  {}  {variant}  {}  {med:.3}  {lo:.3}  {hi:.3}  {}\n",
                c * h * w,
                params.param_count(),
                transient_bytes(variant, c, h, w, cfg) / 1024
            ));
        }
    }
    Ok(out)
}

fn cmd_selftest(seed: u64) -> Result<String> {
    let results = selftest::run_all(seed);
    let mut out = String::from("command=selftest\n");
    let mut failures = Vec::new();
    for r in &results {
        out.push_str(&format!(
            "{}: {} ({})\n",
            r.name,
            if r.passed { "pass" } else { "FAIL" },
            r.detail
        ));
        if !r.passed {
            failures.push(r.name);
        }
    }
    if failures.is_empty() {
        out.push_str(&format!("all {} checks passed\n", results.len()));
        Ok(out)
    } else {
        print!("{out}");
        Err(Error::Numerical(format!(
            "selftest failures: {}",
            failures.join(", ")
        )))
    }
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::GenSynth {
            out,
            classes,
            samples_per_class,
            channels,
            height,
            width,
            template_energy,
            pose_scale,
            noise_scale,
            seed,
        } => {
            let spec = SynthSpec {
                classes,
                samples_per_class,
                channels,
                height,
                width,
                template_energy,
                pose_scale,
                noise_scale,
                seed,
            };
            let split = generate_synthetic(&spec)?;
            let extra = vec![
                ("samples_per_class".to_string(), samples_per_class.to_string()),
                ("channels".to_string(), channels.to_string()),
                ("height".to_string(), height.to_string()),
                ("width".to_string(), width.to_string()),
                ("template_energy".to_string(), template_energy.to_string()),
                ("pose_scale".to_string(), pose_scale.to_string()),
                ("noise_scale".to_string(), noise_scale.to_string()),
                ("seed".to_string(), seed.to_string()),
            ];
            write_split(&out, &split, &extra)?;
            Ok(format!(
                "command=gen-synth\nclasses={classes}\nsamples_per_class={samples_per_class}\nchannels={channels}\nheight={height}\nwidth={width}\ntemplate_energy={template_energy}\npose_scale={pose_scale}\nnoise_scale={noise_scale}\nseed={seed}\nout={}\nsamples={}\n",
                out.display(),
                split.len()
            ))
        }
        Command::Eval {
            data,
            params,
            phase,
            variant,
            csv,
            shuffle_labels,
            common,
        } => {
            let cfg = common.resolve()?;
            cmd_eval(&data, &params, phase, variant, &csv, shuffle_labels, &cfg)
        }
        Command::Train {
            data,
            out,
            params,
            trace,
            common,
        } => {
            let cfg = common.resolve()?;
            cmd_train(&data, &out, &params, &trace, &cfg)
        }
        Command::Ablate {
            data,
            params,
            phase,
            csv,
            shuffle_labels,
            common,
        } => {
            let cfg = common.resolve()?;
            cmd_ablate(&data, &params, phase, &csv, shuffle_labels, &cfg)
        }
        Command::Bench { tasks, common } => {
            let cfg = common.resolve()?;
            cmd_bench(tasks, &cfg)
        }
        Command::Selftest { seed } => cmd_selftest(seed),
    }
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(report) => {
            print!("{report}");
            std::process::ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::from(e.exit_code() as u8)
        }
    }
}
