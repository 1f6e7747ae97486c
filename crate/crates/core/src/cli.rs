//! Experiment configuration and the `spawnlab` subcommands.
//!
//! Every command is driven by one JSON config. Outputs land in a run
//! directory as `config.json`, `log.jsonl`, `checkpoint.json` and
//! `report.json`, each stamped with the sha256 digest of the canonical config.

use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    generate_synthetic_corpus, load_corpus, save_corpus, split_eval, Corpus, SpeakerMetadata,
    SynthConfig,
};
use crate::error::{Error, Result};
use crate::evalmetrics::{
    eval_tables, export_distance_matrix, prior_generalization_probe, report_from_tables,
    EvalReport, ProbeSettings,
};
use crate::prior::PriorConfig;
use crate::rng;
use crate::synth::{ExtractorParams, SynthModelConfig};
use crate::train::beta::{BetaController, BetaSchedule, DEFAULT_BETA_STEP};
use crate::train::{Objective, StepRecord, TrainSettings, TrainerState, VbOptions};

pub const CONFIG_FILE: &str = "config.json";
pub const LOG_FILE: &str = "log.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const REPORT_FILE: &str = "report.json";
pub const DISTANCES_FILE: &str = "distances.csv";
pub const PROBE_FILE: &str = "probe.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusSource,
    #[serde(default)]
    pub model: SynthModelConfig,
    pub objective: Objective,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vb: Option<VbConfig>,
    #[serde(default)]
    pub prior: PriorConfig,
    pub training: TrainSettings,
    pub eval: EvalConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    /// A corpus directory written by `gen-data` or by hand.
    Path(PathBuf),
    Synthetic(SyntheticCorpus),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub seed: u64,
    #[serde(flatten)]
    pub spec: SyntheticSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum SyntheticSpec {
    Reference,
    Homogeneous {
        num_speakers: usize,
        utterances_per_speaker: usize,
        latent_dim: usize,
        #[serde(default)]
        noise_scale: f64,
    },
    Custom {
        config: SynthConfig,
    },
}

impl SyntheticSpec {
    pub fn config(&self) -> SynthConfig {
        match self {
            SyntheticSpec::Reference => SynthConfig::reference(),
            SyntheticSpec::Homogeneous {
                num_speakers,
                utterances_per_speaker,
                latent_dim,
                noise_scale,
            } => {
                let mut c =
                    SynthConfig::homogeneous(*num_speakers, *utterances_per_speaker, *latent_dim);
                c.noise_scale = *noise_scale;
                c
            }
            SyntheticSpec::Custom { config } => config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VbConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl_target: Option<f64>,
    /// Runs one training per target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl_targets: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_beta: Option<f64>,
    #[serde(default = "default_beta_step")]
    pub beta_step_size: f64,
    #[serde(default = "default_initial_beta")]
    pub initial_beta: f64,
    #[serde(default = "default_posterior_sigma")]
    pub init_posterior_sigma: f64,
    #[serde(default)]
    pub omega_lr_inverse_beta: bool,
}

fn default_beta_step() -> f64 {
    DEFAULT_BETA_STEP
}

fn default_initial_beta() -> f64 {
    1e-2
}

fn default_posterior_sigma() -> f64 {
    0.1
}

impl VbConfig {
    pub fn with_target(kl_target: f64) -> Self {
        VbConfig {
            kl_target: Some(kl_target),
            kl_targets: None,
            fixed_beta: None,
            beta_step_size: default_beta_step(),
            initial_beta: default_initial_beta(),
            init_posterior_sigma: default_posterior_sigma(),
            omega_lr_inverse_beta: false,
        }
    }

    fn validate(&self) -> Result<()> {
        let set = [
            self.kl_target.is_some(),
            self.kl_targets.is_some(),
            self.fixed_beta.is_some(),
        ];
        if set.iter().filter(|&&b| b).count() != 1 {
            return Err(Error::Config(
                "vb block needs exactly one of kl_target, kl_targets, fixed_beta".into(),
            ));
        }
        let targets = self
            .kl_target
            .into_iter()
            .chain(self.kl_targets.iter().flatten().copied());
        for t in targets {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::Config(format!(
                    "kl target {t} must be finite and non-negative"
                )));
            }
        }
        if self.kl_targets.as_ref().is_some_and(|t| t.is_empty()) {
            return Err(Error::Config("kl_targets is empty".into()));
        }
        if let Some(b) = self.fixed_beta {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::Config(format!("fixed_beta {b} must be positive")));
            }
        }
        if !(self.beta_step_size > 0.0)
            || !(self.initial_beta > 0.0)
            || !(self.init_posterior_sigma > 0.0)
        {
            return Err(Error::Config(
                "beta_step_size, initial_beta and init_posterior_sigma must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Options for a single (non-sweep) run.
    pub fn options(&self) -> Result<VbOptions> {
        let beta = match (self.fixed_beta, self.kl_target) {
            (Some(b), _) => BetaSchedule::Fixed(b),
            (None, Some(t)) => BetaSchedule::Controlled(BetaController::new(
                self.initial_beta,
                t,
                self.beta_step_size,
            )),
            (None, None) => {
                return Err(Error::Config(
                    "a sweep config has no single β schedule".into(),
                ))
            }
        };
        Ok(VbOptions {
            beta,
            init_posterior_sigma: self.init_posterior_sigma,
            omega_lr_inverse_beta: self.omega_lr_inverse_beta,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Share of each speaker's utterances held out for evaluation.
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    pub split_seed: u64,
    /// Drives posterior draws and prior samples at evaluation.
    pub seed: u64,
    pub extractor_seed: u64,
    #[serde(default = "default_extractor_dim")]
    pub extractor_dim: usize,
}

fn default_fraction() -> f64 {
    0.2
}

fn default_extractor_dim() -> usize {
    ExtractorParams::DEFAULT_OUT_DIM
}

impl EvalConfig {
    pub fn with_seed(seed: u64) -> Self {
        EvalConfig {
            fraction: default_fraction(),
            split_seed: seed,
            seed,
            extractor_seed: seed,
            extractor_dim: default_extractor_dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    #[serde(default = "default_record_every")]
    pub record_every: u64,
}

fn default_record_every() -> u64 {
    500
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            record_every: default_record_every(),
        }
    }
}

impl ExperimentConfig {
    /// TacoSpawn on the reference oracle corpus with default settings.
    pub fn reference(seed: u64) -> Self {
        ExperimentConfig {
            corpus: CorpusSource::Synthetic(SyntheticCorpus {
                seed,
                spec: SyntheticSpec::Reference,
            }),
            model: SynthModelConfig::default(),
            objective: Objective::Tacospawn,
            vb: None,
            prior: PriorConfig::default(),
            training: TrainSettings::with_seed(seed),
            eval: EvalConfig::with_seed(seed),
            probe: ProbeConfig::default(),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.objective, &self.vb) {
            (Objective::Vb, Some(v)) => v.validate()?,
            (Objective::Vb, None) => {
                return Err(Error::Config("objective vb needs a vb block".into()))
            }
            (Objective::Tacospawn, Some(_)) => {
                return Err(Error::Config(
                    "vb block given for objective tacospawn".into(),
                ))
            }
            (Objective::Tacospawn, None) => {}
        }
        if let CorpusSource::Synthetic(s) = &self.corpus {
            s.spec.config().validate()?;
        }
        self.training.validate()?;
        if !(self.eval.fraction > 0.0 && self.eval.fraction < 1.0) {
            return Err(Error::Config(format!(
                "eval fraction {} outside (0, 1)",
                self.eval.fraction
            )));
        }
        if self.eval.extractor_dim == 0 {
            return Err(Error::Config("extractor_dim must be positive".into()));
        }
        Ok(())
    }

    /// Hex sha256 of the canonical (compact, fixed field order) JSON form.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn is_sweep(&self) -> bool {
        self.vb.as_ref().is_some_and(|v| v.kl_targets.is_some())
    }

    /// One single-target config per sweep entry, in order.
    pub fn sweep_members(&self) -> Vec<(f64, ExperimentConfig)> {
        let Some(targets) = self.vb.as_ref().and_then(|v| v.kl_targets.clone()) else {
            return Vec::new();
        };
        targets
            .into_iter()
            .map(|t| {
                let mut c = self.clone();
                let vb = c.vb.as_mut().expect("sweep implies a vb block");
                vb.kl_targets = None;
                vb.kl_target = Some(t);
                (t, c)
            })
            .collect()
    }

    pub fn extractor(&self, frame_dim: usize) -> ExtractorParams {
        ExtractorParams::new(frame_dim, self.eval.extractor_dim, self.eval.extractor_seed)
    }
}

/// Corpus from `override_dir`, else the configured path, else generated.
pub fn resolve_corpus(cfg: &ExperimentConfig, override_dir: Option<&Path>) -> Result<Corpus> {
    match (override_dir, &cfg.corpus) {
        (Some(dir), _) => load_corpus(dir),
        (None, CorpusSource::Path(p)) => load_corpus(p),
        (None, CorpusSource::Synthetic(s)) => generate_synthetic_corpus(&s.spec.config(), s.seed),
    }
}

/// The train/eval split a config implies.
pub fn split(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<(Corpus, Corpus)> {
    split_eval(corpus, cfg.eval.fraction, cfg.eval.split_seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_digest: String,
    pub config: ExperimentConfig,
    pub state: TrainerState,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_json(path.as_ref())
}

/// Writes `corpus` for `cfg` into `out` and returns a one-line summary.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let CorpusSource::Synthetic(s) = &cfg.corpus else {
        return Err(Error::Config(
            "gen-data needs a synthetic corpus block".into(),
        ));
    };
    let synth = s.spec.config();
    let corpus = generate_synthetic_corpus(&synth, s.seed)?;
    create_dir(out)?;
    save_corpus(&corpus, out)?;
    Ok(format!(
        "J={} I={} V={} F={} D={}",
        corpus.num_speakers(),
        corpus.utterances.len(),
        corpus.header.vocab_size,
        corpus.header.frame_dim,
        synth.latent_dim
    ))
}

/// Log lines already in `path` up to and including `step`.
fn kept_log_lines(path: &Path, step: u64) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut kept = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let rec: StepRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if rec.step <= step {
            kept.push(line);
        }
    }
    Ok(kept)
}

/// Trains one configuration into `out`. With `resume`, continues from
/// `out/checkpoint.json`, which must carry the same config digest.
/// Returns the last log record, if any step ran.
pub fn train_run(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    out: &Path,
    resume: bool,
) -> Result<Option<StepRecord>> {
    let digest = cfg.digest();
    create_dir(out)?;
    let (train, _) = split(cfg, corpus)?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let log_path = out.join(LOG_FILE);

    let mut state = if resume {
        let ck = load_checkpoint(&ckpt_path)?;
        if ck.config_digest != digest {
            return Err(Error::Config(format!(
                "checkpoint digest {} does not match config digest {digest}",
                ck.config_digest
            )));
        }
        ck.state
    } else {
        let vb = match cfg.objective {
            Objective::Vb => Some(cfg.vb.as_ref().expect("validated").options()?),
            Objective::Tacospawn => None,
        };
        TrainerState::new(
            cfg.objective,
            &cfg.model,
            &cfg.prior,
            &cfg.training,
            vb,
            &train,
        )?
    };
    write_json(&out.join(CONFIG_FILE), cfg)?;

    let kept = if resume {
        kept_log_lines(&log_path, state.step)?
    } else {
        Vec::new()
    };
    let file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = std::io::BufWriter::new(file);
    for line in &kept {
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
    }

    let save = |st: &TrainerState| {
        write_json(
            &ckpt_path,
            &Checkpoint {
                config_digest: digest.clone(),
                config: cfg.clone(),
                state: st.clone(),
            },
        )
    };
    let data = state.data(&train)?;
    let every = cfg.training.checkpoint_every;
    let mut last = None;
    let result = state.run_until(&data, cfg.training.steps, |r, st| {
        serde_json::to_writer(&mut log, r)?;
        log.write_all(b"\n").map_err(|e| Error::io(&log_path, e))?;
        last = Some(*r);
        if every > 0 && r.step % every == 0 {
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            save(st)?;
        }
        Ok(())
    });
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    // A failed step leaves the state untouched, so this is the last good one.
    save(&state)?;
    result.map(|_| last)
}

/// Evaluates a checkpoint on the held-out split of `corpus`. Writes
/// `report.json` and, when asked, `distances.csv` into `out`.
pub fn eval_run(
    cfg: &ExperimentConfig,
    ckpt: &Checkpoint,
    corpus: &Corpus,
    out: &Path,
    export_distances: bool,
) -> Result<EvalReport> {
    let (_, eval) = split(cfg, corpus)?;
    let extractor = cfg.extractor(corpus.header.frame_dim);
    let tables = eval_tables(&eval, &ckpt.state, &extractor, cfg.eval.seed)?;
    let report = report_from_tables(&tables, cfg.eval.seed, &cfg.digest())?;
    create_dir(out)?;
    write_json(&out.join(REPORT_FILE), &report)?;
    if export_distances {
        let path = out.join(DISTANCES_FILE);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        export_distance_matrix(&[&tables.s, &tables.g], file)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpawnedSpeaker {
    pub locale: String,
    pub gender: String,
    pub seed: u64,
    pub index: usize,
    pub temperature: f64,
    pub embedding: Vec<f64>,
}

/// `n` prior samples for the given metadata; sample `i` uses its own stream.
pub fn spawn(
    ckpt: &Checkpoint,
    locale: &str,
    gender: &str,
    n: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<SpawnedSpeaker>> {
    let c = SpeakerMetadata {
        speaker_id: 0,
        locale: locale.to_string(),
        gender: gender.to_string(),
    };
    (0..n)
        .map(|i| {
            let mut r = rng::stream(seed, "spawn", i as u64);
            Ok(SpawnedSpeaker {
                locale: c.locale.clone(),
                gender: c.gender.clone(),
                seed,
                index: i,
                temperature,
                embedding: ckpt.state.prior.sample(&c, temperature, &mut r)?,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct ProbeLine<'a> {
    config_digest: &'a str,
    #[serde(flatten)]
    record: &'a crate::evalmetrics::ProbeRecord,
}

/// Runs the prior generalization probe; writes `config.json` and
/// `probe.jsonl` into `out` and returns the final train/eval gap.
pub fn probe_run(cfg: &ExperimentConfig, corpus: &Corpus, out: &Path) -> Result<f64> {
    let settings = ProbeSettings {
        synth: cfg.model.clone(),
        prior: cfg.prior.clone(),
        train: cfg.training.clone(),
        record_every: cfg.probe.record_every,
    };
    let result = prior_generalization_probe(corpus, &settings, cfg.training.seed)?;
    create_dir(out)?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    let digest = cfg.digest();
    let mut text = String::new();
    for r in &result.records {
        text.push_str(&serde_json::to_string(&ProbeLine {
            config_digest: &digest,
            record: r,
        })?);
        text.push('\n');
    }
    let path = out.join(PROBE_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(result.records.last().map_or(f64::NAN, |r| r.gap))
}

#[derive(Debug, Parser)]
#[command(
    name = "spawnlab",
    version,
    about = "Speaker generation experiments on synthetic corpora"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the configured synthetic corpus into a directory.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the corpus seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the configured objective; a kl_targets list trains one run per target.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Corpus directory, overriding the config's corpus block.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Overrides the training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from the checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Sample speaker embeddings from a trained prior.
    Spawn {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        locale: String,
        #[arg(long)]
        gender: String,
        #[arg(short, long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the distance metrics for a trained run.
    Eval {
        /// Run directory; report.json is written here.
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the config stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to checkpoint.json in the run directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Overrides the evaluation seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the s/g pairwise distance matrix as CSV.
        #[arg(long)]
        export_distances: bool,
    },
    /// Train with the prior fit to half the speakers and compare both halves.
    Probe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run_train(
    mut cfg: ExperimentConfig,
    corpus_dir: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    resume: bool,
) -> Result<()> {
    if let Some(s) = seed {
        cfg.training.seed = s;
    }
    let corpus = resolve_corpus(&cfg, corpus_dir)?;
    let print = |label: &str, last: Option<StepRecord>| {
        if let Some(r) = last {
            let extra = match (r.prior_nll, r.kl_actual, r.beta) {
                (Some(p), _, _) => format!(" prior_nll={p:.4}"),
                (_, Some(k), Some(b)) => format!(" kl={k:.4} beta={b:.6}"),
                _ => String::new(),
            };
            println!(
                "{label}step={} synth_loss={:.6}{extra}",
                r.step, r.synth_loss
            );
        }
    };
    if cfg.is_sweep() {
        create_dir(out)?;
        write_json(&out.join(CONFIG_FILE), &cfg)?;
        for (t, member) in cfg.sweep_members() {
            let dir = out.join(format!("kl-{t}"));
            let last = train_run(&member, &corpus, &dir, resume)?;
            print(&format!("kl_target={t} "), last);
        }
        return Ok(());
    }
    let last = train_run(&cfg, &corpus, out, resume)?;
    print("", last);
    println!("config_digest={}", cfg.digest());
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out, seed } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let (Some(s), CorpusSource::Synthetic(sc)) = (seed, &mut cfg.corpus) {
                sc.seed = s;
            }
            println!("{}", gen_data(&cfg, &out)?);
        }
        Command::Train {
            config,
            out,
            corpus,
            seed,
            resume,
        } => run_train(
            ExperimentConfig::from_file(&config)?,
            corpus.as_deref(),
            &out,
            seed,
            resume,
        )?,
        Command::Spawn {
            checkpoint,
            locale,
            gender,
            n,
            temperature,
            seed,
            out,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let spawned = spawn(&ck, &locale, &gender, n, temperature, seed)?;
            let mut text = serde_json::to_string_pretty(&spawned)?;
            text.push('\n');
            match out {
                Some(p) => fs::write(&p, text).map_err(|e| Error::io(&p, e))?,
                None => print!("{text}"),
            }
        }
        Command::Eval {
            out,
            config,
            checkpoint,
            corpus,
            seed,
            export_distances,
        } => {
            let ck = load_checkpoint(checkpoint.unwrap_or_else(|| out.join(CHECKPOINT_FILE)))?;
            let mut cfg = match config {
                Some(p) => ExperimentConfig::from_file(p)?,
                None => ck.config.clone(),
            };
            if let Some(s) = seed {
                cfg.eval.seed = s;
            }
            let corpus = resolve_corpus(&cfg, corpus.as_deref())?;
            let report = eval_run(&cfg, &ck, &corpus, &out, export_distances)?;
            print!("{}", report.table());
        }
        Command::Probe {
            config,
            out,
            corpus,
            seed,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(s) = seed {
                cfg.training.seed = s;
            }
            let corpus = resolve_corpus(&cfg, corpus.as_deref())?;
            let gap = probe_run(&cfg, &corpus, &out)?;
            println!("final train-eval log-prob gap: {gap:.4} nats");
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
