//! Command-line front end.
//!
//! Six subcommands cover the whole workflow:
//!
//! * `gen-data` — write a synthetic paired corpus (`trajectory.jsonl`,
//!   `inertia.jsonl`, `pairs.json`). The pairing file is for evaluation only;
//!   training never reads it.
//! * `train` — preprocess, standardize, split, and train a model; writes
//!   `checkpoint.json`, `stats.json`, and `metrics.tsv`.
//! * `translate` — run a trained model over a dataset in one direction and
//!   write the translations (optionally per-sample SVG traces for `i2t`).
//! * `eval` — distribution distance, probe accuracy on translations, latent
//!   probes, and optionally the two-stream recognition comparison; writes a
//!   JSON report.
//! * `ablate` — train the full model and the two reduced variants from one
//!   configuration and report the same metrics per arm.
//! * `gradcheck` — finite-difference verification of every differentiable
//!   operation.
//!
//! Config files are flat `key = value` text; `#` starts a comment, blank
//! lines are ignored, and keys a command does not know are rejected so typos
//! cannot pass silently. Every command takes `--seed`; more specific seeds in
//! the config file (`model_seed`, `shuffle_seed`, `split_seed`) override it
//! where they apply.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid configuration or data,
//! 3 numeric failure.
//!
//! Commands only ever read their input files; outputs go to the paths named
//! on the command line.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};

use crate::data::synth::{synth_generate, SynthConfig};
use crate::data::{
    load_dataset, preprocess_dataset, save_dataset, split, standardize, ChannelStats, Dataset,
    Domain, PairingManifest, Seq,
};
use crate::eval::{
    ablation_suite, eval_translated, latent_probes, mmd_score, naive_translate_dataset,
    probe_eval, train_probe, translate_dataset, two_stream_eval, EvalReport,
};
use crate::model::{
    load_checkpoint, save_checkpoint, DurationPolicy, ModelConfig, ModelParams,
};
use crate::numerics::{gradient_suite, GRAD_TOLERANCE};
use crate::training::{train, TrainConfig};
use crate::{Error, Result};

/// Seed used when neither `--seed` nor a config key provides one.
pub const DEFAULT_SEED: u64 = 7;

/// Fraction of each domain that goes to the training split by default.
const DEFAULT_TRAIN_FRAC: f64 = 0.8;

/// Default probe training budget (epochs) for `eval` and `ablate`.
const DEFAULT_PROBE_EPOCHS: usize = 40;

/// Default two-stream training budget (epochs).
const DEFAULT_TWO_STREAM_EPOCHS: usize = 60;

#[derive(Parser, Debug)]
#[command(
    name = "awt",
    version,
    about = "Unpaired bidirectional translation between inertial signals and pen trajectories"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic paired corpus into a directory.
    GenData {
        /// Config file (keys: classes, samples_per_class, len_min, len_max,
        /// trajectory_rate_hz, inertia_rate_hz, noise_std, bias_std,
        /// scale_jitter, rotation_jitter_deg, translation_jitter,
        /// warp_strength, z_amplitude, seed).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for trajectory.jsonl, inertia.jsonl, pairs.json.
        #[arg(long)]
        out_dir: PathBuf,
        /// Generator seed; overrides the config file's `seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on an inertial and a trajectory dataset.
    Train {
        /// Config file (keys: lr, batch_size, epochs, disc_updates_per_iter,
        /// enable_cls, enable_gan, duration_policy, train_frac, model_seed,
        /// shuffle_seed, split_seed).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Inertial dataset (JSONL).
        #[arg(long)]
        inertia: PathBuf,
        /// Trajectory dataset (JSONL).
        #[arg(long)]
        trajectory: PathBuf,
        /// Output directory for checkpoint.json, stats.json, metrics.tsv.
        #[arg(long)]
        out_dir: PathBuf,
        /// Base seed for model init, batch shuffling, and the split; the
        /// config keys model_seed / shuffle_seed / split_seed override it
        /// individually.
        #[arg(long)]
        seed: Option<u64>,
        /// Drop one auxiliary loss for an ablation run.
        #[arg(long, value_enum)]
        ablate: Option<AblateArg>,
    },
    /// Translate a dataset through a trained model.
    Translate {
        /// Trained checkpoint (JSON).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input dataset; its domain must match the direction's source.
        #[arg(long)]
        input: PathBuf,
        /// i2t (inertia to trajectory) or t2i.
        #[arg(long, value_enum)]
        direction: Direction,
        /// Output dataset path (JSONL).
        #[arg(long)]
        output: PathBuf,
        /// Also write one SVG trace per sample (i2t only).
        #[arg(long)]
        svg_dir: Option<PathBuf>,
        /// Output-length rule (default rate-scaled).
        #[arg(long, value_enum)]
        duration: Option<DurationArg>,
    },
    /// Evaluate a trained model: MMD, probes, latent probes, optional
    /// two-stream comparison.
    Eval {
        /// Trained checkpoint (JSON).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Inertial dataset (JSONL) — the same corpus the model was trained
        /// from, so the train/test split can be reproduced.
        #[arg(long)]
        inertia: PathBuf,
        /// Trajectory dataset (JSONL).
        #[arg(long)]
        trajectory: PathBuf,
        /// Pairing manifest; enables the paired reconstruction error.
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Where to write the JSON report.
        #[arg(long)]
        report: PathBuf,
        /// Also run the two-stream recognition comparison.
        #[arg(long)]
        two_stream: bool,
        /// Seed for probe initialization and shuffling.
        #[arg(long)]
        seed: Option<u64>,
        /// Config file (keys: probe_epochs, two_stream_epochs, train_frac,
        /// split_seed — the latter two must match the training run).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the full model plus no-cls and no-gan variants and report
    /// per-arm metrics.
    Ablate {
        /// Config file (same keys as `train`, plus probe_epochs).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Inertial dataset (JSONL).
        #[arg(long)]
        inertia: PathBuf,
        /// Trajectory dataset (JSONL).
        #[arg(long)]
        trajectory: PathBuf,
        /// Output directory for ablation.json.
        #[arg(long)]
        out_dir: PathBuf,
        /// Base seed (same roles as in `train`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check every operation's gradients against finite differences.
    Gradcheck {
        /// Seed for the probe networks and inputs.
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Translation direction on the command line.
#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Inertial signals to pen trajectories.
    I2t,
    /// Pen trajectories to inertial signals.
    T2i,
}

impl Direction {
    fn source(self) -> Domain {
        match self {
            Direction::I2t => Domain::Inertia,
            Direction::T2i => Domain::Trajectory,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Direction::I2t => "i2t",
            Direction::T2i => "t2i",
        }
    }
}

/// Output-length rule on the command line.
#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum DurationArg {
    /// Scale the source length by the rate ratio (default).
    RateScaled,
    /// Keep the source length unchanged.
    SourceLength,
}

impl From<DurationArg> for DurationPolicy {
    fn from(a: DurationArg) -> DurationPolicy {
        match a {
            DurationArg::RateScaled => DurationPolicy::RateScaled,
            DurationArg::SourceLength => DurationPolicy::SourceLength,
        }
    }
}

/// Which auxiliary loss `train --ablate` disables.
#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblateArg {
    /// Disable the shared latent classifier loss.
    Cls,
    /// Disable the adversarial latent-alignment loss.
    Gan,
}

/// Maps an error to the process exit code (`0` success and `1` usage are
/// handled by the binary itself).
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

/// Dispatches a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out_dir, seed } => {
            cmd_gen_data(config.as_deref(), &out_dir, seed)
        }
        Command::Train { config, inertia, trajectory, out_dir, seed, ablate } => {
            cmd_train(config.as_deref(), &inertia, &trajectory, &out_dir, seed, ablate)
        }
        Command::Translate { checkpoint, input, direction, output, svg_dir, duration } => {
            cmd_translate(
                &checkpoint,
                &input,
                direction,
                &output,
                svg_dir.as_deref(),
                duration.map(DurationPolicy::from).unwrap_or(DurationPolicy::RateScaled),
            )
        }
        Command::Eval { checkpoint, inertia, trajectory, pairs, report, two_stream, seed, config } => {
            cmd_eval(
                &checkpoint,
                &inertia,
                &trajectory,
                pairs.as_deref(),
                &report,
                two_stream,
                seed,
                config.as_deref(),
            )
        }
        Command::Ablate { config, inertia, trajectory, out_dir, seed } => {
            cmd_ablate(config.as_deref(), &inertia, &trajectory, &out_dir, seed)
        }
        Command::Gradcheck { seed } => cmd_gradcheck(seed.unwrap_or(DEFAULT_SEED)),
    }
}

// ---------------------------------------------------------------------------
// Config files
// ---------------------------------------------------------------------------

/// A parsed flat `key = value` config file. Keys are consumed by typed
/// getters; [`RunConfig::finish`] rejects any that were never asked for, so a
/// misspelled key is an error rather than a silently ignored line.
#[derive(Debug, Default)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl RunConfig {
    /// Reads a config file; `None` yields an empty config (defaults apply).
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| {
                    Error::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                RunConfig::parse(&text)
            }
        }
    }

    /// Parses config text: one `key = value` per line, `#` starts a comment,
    /// duplicate keys are rejected.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.split_once('#') {
                Some((before, _)) => before,
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected `key = value`, got `{raw}`", i + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(Error::Config(format!("config line {}: empty key", i + 1)));
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::Config(format!("config line {}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(RunConfig { entries, used: BTreeSet::new() })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        let v = self.entries.get(key).cloned();
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    /// Typed lookup; `Ok(None)` when the key is absent.
    pub fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| {
                Error::Config(format!("config key `{key}`: cannot parse `{v}`: {e}"))
            }),
        }
    }

    /// Typed lookup with a default for absent keys.
    pub fn get_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Fails if any key was never consumed by a getter.
    pub fn finish(self) -> Result<()> {
        let unknown: Vec<&String> =
            self.entries.keys().filter(|k| !self.used.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            let list = unknown.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(", ");
            Err(Error::Config(format!("unknown config keys: {list}")))
        }
    }
}

fn parse_duration_policy(s: &str) -> Result<DurationPolicy> {
    match s {
        "rate-scaled" => Ok(DurationPolicy::RateScaled),
        "source-length" => Ok(DurationPolicy::SourceLength),
        other => Err(Error::Config(format!(
            "duration_policy must be `rate-scaled` or `source-length`, got `{other}`"
        ))),
    }
}

/// `--seed` beats the config file's `seed`, which beats [`DEFAULT_SEED`].
fn resolve_seed(flag: Option<u64>, cfg: &mut RunConfig) -> Result<u64> {
    Ok(flag.or(cfg.get("seed")?).unwrap_or(DEFAULT_SEED))
}

// ---------------------------------------------------------------------------
// Shared data plumbing
// ---------------------------------------------------------------------------

fn load_domain(path: &Path, expected: Domain) -> Result<Dataset> {
    let ds = load_dataset(path)?;
    if ds.domain != expected {
        return Err(Error::Data(format!(
            "{} holds {} data, expected {}",
            path.display(),
            ds.domain.name(),
            expected.name()
        )));
    }
    Ok(ds)
}

fn ensure_parent_dir(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

/// Both domains loaded, preprocessed, standardized, and split the same way
/// training does it.
struct Prepared {
    train_i: Dataset,
    test_i: Dataset,
    train_t: Dataset,
    test_t: Dataset,
    /// Standardization derived from (train path) or applied to (eval path)
    /// the full corpora.
    stats_i: ChannelStats,
    stats_t: ChannelStats,
    /// The full standardized corpora, for paired-counterpart lookups.
    full_i: Dataset,
    full_t: Dataset,
}

/// Loads and prepares both corpora. With `stats: None` the standardization
/// is computed from the data (training); with `Some` the given statistics
/// are applied unchanged (evaluating against a checkpoint).
fn prepare(
    inertia: &Path,
    trajectory: &Path,
    train_frac: f64,
    split_seed: u64,
    stats: Option<(&ChannelStats, &ChannelStats)>,
) -> Result<Prepared> {
    let mut ds_i = load_domain(inertia, Domain::Inertia)?;
    let mut ds_t = load_domain(trajectory, Domain::Trajectory)?;
    preprocess_dataset(&mut ds_i);
    preprocess_dataset(&mut ds_t);
    let (stats_i, stats_t) = match stats {
        None => (standardize(&mut ds_i), standardize(&mut ds_t)),
        Some((si, st)) => {
            crate::data::apply_stats(&mut ds_i, si);
            crate::data::apply_stats(&mut ds_t, st);
            (si.clone(), st.clone())
        }
    };
    let (train_i, test_i) = split(&ds_i, train_frac, split_seed)?;
    let (train_t, test_t) = split(&ds_t, train_frac, split_seed)?;
    Ok(Prepared { train_i, test_i, train_t, test_t, stats_i, stats_t, full_i: ds_i, full_t: ds_t })
}

/// Builds a [`TrainConfig`] plus the model and split seeds from a config
/// file, with `--seed` as the base for all three seed roles.
fn train_settings(
    cfg: &mut RunConfig,
    seed: Option<u64>,
) -> Result<(TrainConfig, u64, u64, f64)> {
    let base = resolve_seed(seed, cfg)?;
    let mut tc = TrainConfig::default();
    tc.lr = cfg.get_or("lr", tc.lr)?;
    tc.batch_size = cfg.get_or("batch_size", tc.batch_size)?;
    tc.epochs = cfg.get_or("epochs", tc.epochs)?;
    tc.disc_updates_per_iter = cfg.get_or("disc_updates_per_iter", tc.disc_updates_per_iter)?;
    tc.enable_cls = cfg.get_or("enable_cls", tc.enable_cls)?;
    tc.enable_gan = cfg.get_or("enable_gan", tc.enable_gan)?;
    if let Some(p) = cfg.get::<String>("duration_policy")? {
        tc.duration_policy = parse_duration_policy(&p)?;
    }
    tc.seed = cfg.get_or("shuffle_seed", base)?;
    let model_seed = cfg.get_or("model_seed", base)?;
    let split_seed = cfg.get_or("split_seed", base)?;
    let train_frac = cfg.get_or("train_frac", DEFAULT_TRAIN_FRAC)?;
    Ok((tc, model_seed, split_seed, train_frac))
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_gen_data(config: Option<&Path>, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let mut cf = RunConfig::load(config)?;
    let mut cfg = SynthConfig::default();
    cfg.class_count = cf.get_or("classes", cfg.class_count)?;
    cfg.samples_per_class = cf.get_or("samples_per_class", cfg.samples_per_class)?;
    cfg.len_range = (
        cf.get_or("len_min", cfg.len_range.0)?,
        cf.get_or("len_max", cfg.len_range.1)?,
    );
    cfg.trajectory_rate_hz = cf.get_or("trajectory_rate_hz", cfg.trajectory_rate_hz)?;
    cfg.inertia_rate_hz = cf.get_or("inertia_rate_hz", cfg.inertia_rate_hz)?;
    cfg.noise_std = cf.get_or("noise_std", cfg.noise_std)?;
    cfg.bias_std = cf.get_or("bias_std", cfg.bias_std)?;
    cfg.scale_jitter = cf.get_or("scale_jitter", cfg.scale_jitter)?;
    cfg.rotation_jitter_deg = cf.get_or("rotation_jitter_deg", cfg.rotation_jitter_deg)?;
    cfg.translation_jitter = cf.get_or("translation_jitter", cfg.translation_jitter)?;
    cfg.warp_strength = cf.get_or("warp_strength", cfg.warp_strength)?;
    cfg.z_amplitude = cf.get_or("z_amplitude", cfg.z_amplitude)?;
    cfg.seed = seed.or(cf.get("seed")?).unwrap_or(cfg.seed);
    cf.finish()?;

    let (trajectory, inertia, pairs) = synth_generate(&cfg)?;
    fs::create_dir_all(out_dir)?;
    save_dataset(&trajectory, &out_dir.join("trajectory.jsonl"))?;
    save_dataset(&inertia, &out_dir.join("inertia.jsonl"))?;
    pairs.save(&out_dir.join("pairs.json"))?;
    println!(
        "wrote {} trajectory and {} inertial samples ({} classes) to {}",
        trajectory.len(),
        inertia.len(),
        cfg.class_count,
        out_dir.display()
    );
    Ok(())
}

fn cmd_train(
    config: Option<&Path>,
    inertia: &Path,
    trajectory: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    ablate: Option<AblateArg>,
) -> Result<()> {
    let mut cf = RunConfig::load(config)?;
    let (mut tc, model_seed, split_seed, train_frac) = train_settings(&mut cf, seed)?;
    cf.finish()?;
    match ablate {
        Some(AblateArg::Cls) => tc.enable_cls = false,
        Some(AblateArg::Gan) => tc.enable_gan = false,
        None => {}
    }

    let prep = prepare(inertia, trajectory, train_frac, split_seed, None)?;
    let k = prep.train_i.class_count().max(prep.train_t.class_count());
    let mut params = ModelParams::init(ModelConfig::new(k, model_seed))?;
    params.stats_i = prep.stats_i.clone();
    params.stats_t = prep.stats_t.clone();
    params.rate_i = prep.train_i.rate_hz;
    params.rate_t = prep.train_t.rate_hz;

    let log = train(&mut params, &prep.train_i, &prep.train_t, &tc)?;

    fs::create_dir_all(out_dir)?;
    save_checkpoint(&params, &out_dir.join("checkpoint.json"))?;
    log.write_tsv(&out_dir.join("metrics.tsv"))?;
    let stats = serde_json::json!({ "inertia": prep.stats_i, "trajectory": prep.stats_t });
    fs::write(out_dir.join("stats.json"), serde_json::to_string_pretty(&stats)? + "\n")?;

    let (first, last) = match (log.rows.first(), log.rows.last()) {
        (Some(f), Some(l)) => (f.l_rec, l.l_rec),
        _ => (f64::NAN, f64::NAN),
    };
    println!(
        "trained {} iterations over {} epochs; reconstruction {first:.4} -> {last:.4}",
        log.rows.len(),
        tc.epochs
    );
    println!("wrote checkpoint.json, stats.json, metrics.tsv to {}", out_dir.display());
    Ok(())
}

fn cmd_translate(
    checkpoint: &Path,
    input: &Path,
    direction: Direction,
    output: &Path,
    svg_dir: Option<&Path>,
    policy: DurationPolicy,
) -> Result<()> {
    if svg_dir.is_some() && direction != Direction::I2t {
        return Err(Error::Config(
            "--svg-dir only applies to i2t: inertial outputs have no pen trace".into(),
        ));
    }
    let params = load_checkpoint(checkpoint)?;
    let ds = load_domain(input, direction.source())?;

    let mut out_samples = Vec::with_capacity(ds.len());
    for s in &ds.samples {
        out_samples.push(params.translate_sample(s, policy)?);
    }
    let out_ds = Dataset::from_samples(out_samples)?;
    ensure_parent_dir(output)?;
    save_dataset(&out_ds, output)?;
    println!(
        "translated {} samples {} and wrote {}",
        out_ds.len(),
        direction.name(),
        output.display()
    );

    if let Some(dir) = svg_dir {
        fs::create_dir_all(dir)?;
        for s in &out_ds.samples {
            fs::write(dir.join(format!("{}.svg", s.id)), polyline_svg(&s.seq))?;
        }
        println!("wrote {} SVG traces to {}", out_ds.len(), dir.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    checkpoint: &Path,
    inertia: &Path,
    trajectory: &Path,
    pairs: Option<&Path>,
    report: &Path,
    two_stream: bool,
    seed: Option<u64>,
    config: Option<&Path>,
) -> Result<()> {
    let mut cf = RunConfig::load(config)?;
    let eval_seed = resolve_seed(seed, &mut cf)?;
    let probe_epochs = cf.get_or("probe_epochs", DEFAULT_PROBE_EPOCHS)?;
    let ts_epochs = cf.get_or("two_stream_epochs", DEFAULT_TWO_STREAM_EPOCHS)?;
    let split_seed = cf.get_or("split_seed", eval_seed)?;
    let train_frac = cf.get_or("train_frac", DEFAULT_TRAIN_FRAC)?;
    cf.finish()?;

    let params = load_checkpoint(checkpoint)?;
    let prep = prepare(
        inertia,
        trajectory,
        train_frac,
        split_seed,
        Some((&params.stats_i, &params.stats_t)),
    )?;
    let manifest = pairs.map(PairingManifest::load).transpose()?;

    let probe_i = train_probe(&prep.train_i, probe_epochs, eval_seed ^ 0x0a)?;
    let probe_t = train_probe(&prep.train_t, probe_epochs, eval_seed ^ 0x0b)?;
    let (probe_acc_inertia, _, _) = probe_eval(&probe_i, &prep.test_i)?;
    let (probe_acc_trajectory, _, _) = probe_eval(&probe_t, &prep.test_t)?;

    let seqs = |ds: &Dataset| -> Vec<Seq> { ds.samples.iter().map(|s| s.seq.clone()).collect() };
    let trans_i2t = translate_dataset(&params, &prep.test_i, DurationPolicy::RateScaled)?;
    let trans_t2i = translate_dataset(&params, &prep.test_t, DurationPolicy::RateScaled)?;
    let naive_i2t = naive_translate_dataset(&prep.test_i, prep.test_t.rate_hz)?;
    let naive_t2i = naive_translate_dataset(&prep.test_t, prep.test_i.rate_hz)?;
    let real_t = seqs(&prep.test_t);
    let real_i = seqs(&prep.test_i);
    let mmd_i2t = mmd_score(&seqs(&trans_i2t), &real_t)?;
    let mmd_t2i = mmd_score(&seqs(&trans_t2i), &real_i)?;
    let mmd_naive_i2t = mmd_score(&seqs(&naive_i2t), &real_t)?;
    let mmd_naive_t2i = mmd_score(&seqs(&naive_t2i), &real_i)?;

    let translated_i2t = eval_translated(
        &probe_t,
        &params,
        &prep.test_i,
        manifest.as_ref().map(|m| (m, &prep.full_t)),
    )?;
    let translated_t2i = eval_translated(
        &probe_i,
        &params,
        &prep.test_t,
        manifest.as_ref().map(|m| (m, &prep.full_i)),
    )?;

    let latent = latent_probes(&params, &prep.test_i, &prep.test_t, eval_seed ^ 0x0c)?;

    let two = if two_stream {
        Some(two_stream_eval(&prep.train_i, &prep.test_i, &params, ts_epochs, eval_seed ^ 0x0d)?)
    } else {
        None
    };

    let rep = EvalReport {
        mmd_i2t,
        mmd_t2i,
        mmd_naive_i2t,
        mmd_naive_t2i,
        probe_acc_inertia,
        probe_acc_trajectory,
        translated_i2t,
        translated_t2i,
        latent,
        two_stream: two,
    };
    ensure_parent_dir(report)?;
    fs::write(report, serde_json::to_string_pretty(&rep)? + "\n")?;

    println!(
        "mmd model/naive   i2t {:.5} / {:.5}   t2i {:.5} / {:.5}",
        rep.mmd_i2t, rep.mmd_naive_i2t, rep.mmd_t2i, rep.mmd_naive_t2i
    );
    println!(
        "probe sanity      inertia {:.3}   trajectory {:.3}",
        rep.probe_acc_inertia, rep.probe_acc_trajectory
    );
    println!(
        "translated probe  i2t {:.3}   t2i {:.3}",
        rep.translated_i2t.accuracy, rep.translated_t2i.accuracy
    );
    if let (Some(a), Some(b)) = (rep.translated_i2t.paired_l1, rep.translated_t2i.paired_l1) {
        println!("paired L1         i2t {a:.4}   t2i {b:.4}");
    }
    println!(
        "latent probes     class {:.3} (i {:.3} / t {:.3})   domain {:.3}   centroid {:.3}",
        rep.latent.class_probe_acc,
        rep.latent.class_probe_acc_inertia,
        rep.latent.class_probe_acc_trajectory,
        rep.latent.domain_probe_acc,
        rep.latent.centroid_acc
    );
    if let Some(ts) = &rep.two_stream {
        println!(
            "two-stream        fused {:.3}   single {:.3}   shuffled-control {:.3}",
            ts.two_stream_acc, ts.single_stream_acc, ts.control_acc
        );
    }
    println!("report written to {}", report.display());
    Ok(())
}

fn cmd_ablate(
    config: Option<&Path>,
    inertia: &Path,
    trajectory: &Path,
    out_dir: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let mut cf = RunConfig::load(config)?;
    let (tc, model_seed, split_seed, train_frac) = train_settings(&mut cf, seed)?;
    let probe_epochs = cf.get_or("probe_epochs", DEFAULT_PROBE_EPOCHS)?;
    cf.finish()?;

    let prep = prepare(inertia, trajectory, train_frac, split_seed, None)?;
    let k = prep.train_i.class_count().max(prep.train_t.class_count());
    let mcfg = ModelConfig::new(k, model_seed);

    let probe_i = train_probe(&prep.train_i, probe_epochs, model_seed ^ 0x0a)?;
    let probe_t = train_probe(&prep.train_t, probe_epochs, model_seed ^ 0x0b)?;

    let arms = ablation_suite(
        &mcfg,
        &tc,
        &prep.train_i,
        &prep.train_t,
        &prep.test_i,
        &prep.test_t,
        &probe_i,
        &probe_t,
        model_seed ^ 0x0c,
    )?;

    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("ablation.json"), serde_json::to_string_pretty(&arms)? + "\n")?;
    for arm in &arms {
        println!(
            "{:<8} translated i2t {:.3} / t2i {:.3}   latent class {:.3}   centroid {:.3}   domain {:.3}",
            arm.name,
            arm.i2t.accuracy,
            arm.t2i.accuracy,
            arm.latent.class_probe_acc,
            arm.latent.centroid_acc,
            arm.latent.domain_probe_acc
        );
    }
    println!("wrote ablation.json to {}", out_dir.display());
    Ok(())
}

fn cmd_gradcheck(seed: u64) -> Result<()> {
    let reports = gradient_suite(seed);
    let mut failed = Vec::new();
    for (name, r) in &reports {
        let ok = r.max_rel_err < GRAD_TOLERANCE;
        println!(
            "{:<18} max rel err {:>10.3e}   coords {:>3}   {}",
            name,
            r.max_rel_err,
            r.coords_checked,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failed.push(*name);
        }
    }
    if failed.is_empty() {
        println!("all {} operations within {GRAD_TOLERANCE:e}", reports.len());
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check failed for: {}", failed.join(", "))))
    }
}

// ---------------------------------------------------------------------------
// SVG rendering
// ---------------------------------------------------------------------------

/// Renders the x/y channels of a trajectory as a single SVG polyline. The
/// vertical axis is flipped so the trace reads the way it was written.
pub fn polyline_svg(seq: &Seq) -> String {
    let xs = seq.channel(0);
    let ys = seq.channel(1);
    let bound = |vals: &[f64]| {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, (hi - lo).max(1e-6))
    };
    let (x0, w) = bound(xs);
    let (y0, h) = bound(ys);
    let margin = 0.05 * w.max(h);
    let stroke = 0.01 * w.max(h);

    let mut points = String::new();
    for (x, y) in xs.iter().zip(ys.iter()) {
        if !points.is_empty() {
            points.push(' ');
        }
        // Flip y into the same box: SVG's y axis points down.
        points.push_str(&format!("{:.4},{:.4}", x, y0 + (y0 + h - y)));
    }
    format!(
        concat!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n",
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{:.4} {:.4} {:.4} {:.4}\">\n",
            "  <polyline fill=\"none\" stroke=\"black\" stroke-width=\"{:.4}\" points=\"{}\"/>\n",
            "</svg>\n"
        ),
        x0 - margin,
        y0 - margin,
        w + 2.0 * margin,
        h + 2.0 * margin,
        stroke,
        points
    )
}
