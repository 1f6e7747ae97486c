//! Joint training of the synthesizer, the speaker representation and the
//! prior, under either objective.

pub mod adam;
pub mod beta;
pub mod gradcheck;
mod objective;

pub use objective::{
    kl_term, sample_batch, tacospawn_objective, tacospawn_step, vb_objective, vb_step, OptStates,
    PosteriorTable, TacoSpawnGrads, TacoSpawnLosses, TrainData, VbGrads, VbLosses, VbNoise,
    POSTERIOR_SIGMA_FLOOR,
};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::prior::{PriorConfig, PriorNet};
use crate::rng;
use crate::synth::{SpeakerTable, SynthModelConfig, SynthParams};
use adam::AdamConfig;
use beta::BetaSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Tacospawn,
    Vb,
}

/// β for the strict Bayesian reading of the VB objective: speakers over
/// utterances.
pub fn strict_bayes_beta(num_speakers: usize, num_utterances: usize) -> f64 {
    num_speakers as f64 / num_utterances as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    pub seed: u64,
    /// Checkpoint interval in steps; 0 writes only the final checkpoint.
    #[serde(default)]
    pub checkpoint_every: u64,
}

fn default_steps() -> u64 {
    5000
}

fn default_batch() -> usize {
    32
}

fn default_lr() -> f64 {
    1e-3
}

impl TrainSettings {
    pub fn with_seed(seed: u64) -> Self {
        TrainSettings {
            steps: default_steps(),
            batch_size: default_batch(),
            lr: default_lr(),
            seed,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} is invalid",
                self.lr
            )));
        }
        Ok(())
    }
}

/// VB-only settings for a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VbOptions {
    pub beta: BetaSchedule,
    pub init_posterior_sigma: f64,
    pub omega_lr_inverse_beta: bool,
}

/// The speaker representation being learned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speakers {
    Table(SpeakerTable),
    Posterior(PosteriorTable),
}

impl Speakers {
    /// One embedding per speaker: the table itself, or a single draw from
    /// each posterior.
    pub fn embeddings(&self, rng: &mut impl rand::Rng) -> Matrix {
        match self {
            Speakers::Table(t) => t.embeddings.clone(),
            Speakers::Posterior(p) => {
                let rows: Vec<Vec<f64>> =
                    (0..p.num_speakers()).map(|j| p.sample(j, rng).0).collect();
                Matrix::from_rows(&rows).expect("posterior rows share one width")
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Speakers::Table(t) => t.embeddings.cols,
            Speakers::Posterior(p) => p.dim(),
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub synth_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prior_nll: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kl_actual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beta: Option<f64>,
}

/// Everything needed to continue training or to evaluate: parameters,
/// optimizer moments and the step counter that indexes every random stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub objective: Objective,
    pub seed: u64,
    pub batch_size: usize,
    pub step: u64,
    pub synth: SynthParams,
    pub speakers: Speakers,
    pub prior: PriorNet,
    /// When false the prior is left untouched (TacoSpawn only).
    pub include_prior: bool,
    pub beta: Option<BetaSchedule>,
    pub beta_history: Vec<f64>,
    pub omega_lr_inverse_beta: bool,
    pub opt: OptStates,
    pub sigma_floor_hits: u64,
    /// Restricts the prior term to these speakers; `None` means all.
    pub prior_speakers: Option<Vec<usize>>,
}

impl TrainerState {
    pub fn new(
        objective: Objective,
        synth_cfg: &SynthModelConfig,
        prior_cfg: &PriorConfig,
        settings: &TrainSettings,
        vb: Option<VbOptions>,
        corpus: &Corpus,
    ) -> Result<Self> {
        settings.validate()?;
        let seed = settings.seed;
        let j = corpus.num_speakers();
        let d = synth_cfg.speaker_dim;
        let synth = SynthParams::new(synth_cfg, &corpus.header, seed)?;
        let prior = PriorNet::new(prior_cfg, d, &corpus.header, seed)?;
        let (speakers, beta, omega_inv) = match (objective, vb) {
            (Objective::Tacospawn, None) => {
                (Speakers::Table(SpeakerTable::new(j, d, seed)), None, false)
            }
            (Objective::Vb, Some(v)) => {
                if !(v.beta.beta() > 0.0) {
                    return Err(Error::Config("β must be positive".into()));
                }
                let post = PosteriorTable::new(j, d, v.init_posterior_sigma, seed)?;
                (
                    Speakers::Posterior(post),
                    Some(v.beta),
                    v.omega_lr_inverse_beta,
                )
            }
            (Objective::Tacospawn, Some(_)) => {
                return Err(Error::Config("VB options given for a TacoSpawn run".into()))
            }
            (Objective::Vb, None) => return Err(Error::Config("VB run needs VB options".into())),
        };
        let adam = AdamConfig {
            lr: settings.lr,
            ..AdamConfig::default()
        };
        let opt = match &speakers {
            Speakers::Table(t) => OptStates::new(&synth.weights, t, &prior.weights, adam),
            Speakers::Posterior(p) => OptStates::new(&synth.weights, p, &prior.weights, adam),
        };
        Ok(TrainerState {
            objective,
            seed,
            batch_size: settings.batch_size,
            step: 0,
            synth,
            speakers,
            prior,
            include_prior: true,
            beta,
            beta_history: Vec::new(),
            omega_lr_inverse_beta: omega_inv,
            opt,
            sigma_floor_hits: 0,
            prior_speakers: None,
        })
    }

    /// Encodes `corpus` for this model, honouring `prior_speakers`.
    pub fn data<'a>(&self, corpus: &'a Corpus) -> Result<TrainData<'a>> {
        let n = match &self.speakers {
            Speakers::Table(t) => t.embeddings.rows,
            Speakers::Posterior(p) => p.num_speakers(),
        };
        if corpus.num_speakers() != n {
            return Err(Error::Shape(format!(
                "corpus has {} speakers, model has {n}",
                corpus.num_speakers()
            )));
        }
        let data = TrainData::new(corpus, &self.synth, &self.prior)?;
        match &self.prior_speakers {
            Some(s) => data.with_prior_speakers(s.clone()),
            None => Ok(data),
        }
    }

    /// Performs one optimizer step. On error the state is left as it was.
    pub fn step(&mut self, data: &TrainData) -> Result<StepRecord> {
        let batch = sample_batch(data.num_utterances(), self.batch_size, self.seed, self.step);
        let step = self.step;
        let record = match &mut self.speakers {
            Speakers::Table(table) => {
                let l = tacospawn_step(
                    &mut self.synth,
                    table,
                    &mut self.prior,
                    data,
                    &batch,
                    &mut self.opt,
                    self.include_prior,
                    step,
                )?;
                StepRecord {
                    step: step + 1,
                    synth_loss: l.synth_loss,
                    prior_nll: l.prior_nll,
                    kl_actual: None,
                    beta: None,
                }
            }
            Speakers::Posterior(post) => {
                let schedule = self
                    .beta
                    .as_mut()
                    .ok_or_else(|| Error::Config("VB state lacks a β schedule".into()))?;
                let l = vb_step(
                    &mut self.synth,
                    post,
                    &mut self.prior,
                    schedule,
                    data,
                    &batch,
                    VbNoise {
                        seed: self.seed,
                        step,
                    },
                    &mut self.opt,
                    self.omega_lr_inverse_beta,
                )?;
                self.beta_history.push(l.beta);
                self.sigma_floor_hits += l.floored;
                StepRecord {
                    step: step + 1,
                    synth_loss: l.synth_loss,
                    prior_nll: None,
                    kl_actual: Some(l.kl_actual),
                    beta: Some(l.beta),
                }
            }
        };
        self.step += 1;
        Ok(record)
    }

    /// Steps until `self.step == until`, calling `on_step` after each.
    pub fn run_until(
        &mut self,
        data: &TrainData,
        until: u64,
        mut on_step: impl FnMut(&StepRecord, &TrainerState) -> Result<()>,
    ) -> Result<()> {
        while self.step < until {
            let r = self.step(data)?;
            on_step(&r, self)?;
        }
        Ok(())
    }

    /// Embeddings used to synthesize the training speakers at evaluation.
    pub fn eval_embeddings(&self, seed: u64) -> Matrix {
        self.speakers
            .embeddings(&mut rng::stream(seed, "eval-posterior", 0))
    }
}

/// Trailing mean of the last `window` values (fewer if not available).
pub fn trailing_mean(values: &[f64], window: usize) -> Option<f64> {
    if values.is_empty() || window == 0 {
        return None;
    }
    let tail = &values[values.len().saturating_sub(window)..];
    Some(tail.iter().sum::<f64>() / tail.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SynthConfig};
    use beta::BetaController;

    fn tiny() -> Corpus {
        generate_synthetic_corpus(
            &SynthConfig::gridded(8, 4, 3, 2, &["us", "gb"], &["f", "m"], 1),
            3,
        )
        .unwrap()
    }

    fn small_synth() -> SynthModelConfig {
        SynthModelConfig {
            token_dim: 4,
            hidden: 8,
            speaker_dim: 3,
            ..SynthModelConfig::default()
        }
    }

    fn small_prior() -> PriorConfig {
        PriorConfig {
            components: 2,
            hidden: 6,
            ..PriorConfig::default()
        }
    }

    fn settings() -> TrainSettings {
        TrainSettings {
            steps: 30,
            batch_size: 5,
            lr: 1e-2,
            seed: 11,
            checkpoint_every: 0,
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let corpus = tiny();
        let vb = VbOptions {
            beta: BetaSchedule::Controlled(BetaController::new(0.5, 3.0, 1e-2)),
            init_posterior_sigma: 0.3,
            omega_lr_inverse_beta: false,
        };
        let mut full = TrainerState::new(
            Objective::Vb,
            &small_synth(),
            &small_prior(),
            &settings(),
            Some(vb),
            &corpus,
        )
        .unwrap();
        let mut half = full.clone();
        let data = full.data(&corpus).unwrap();
        full.run_until(&data, 30, |_, _| Ok(())).unwrap();
        half.run_until(&data, 13, |_, _| Ok(())).unwrap();
        let json = serde_json::to_string(&half).unwrap();
        let mut resumed: TrainerState = serde_json::from_str(&json).unwrap();
        resumed.run_until(&data, 30, |_, _| Ok(())).unwrap();
        assert_eq!(resumed, full);
    }

    #[test]
    fn prior_term_does_not_touch_table_or_synth() {
        let corpus = tiny();
        let mut with = TrainerState::new(
            Objective::Tacospawn,
            &small_synth(),
            &small_prior(),
            &settings(),
            None,
            &corpus,
        )
        .unwrap();
        let mut without = with.clone();
        without.include_prior = false;
        let data = with.data(&corpus).unwrap();
        with.run_until(&data, 50, |_, _| Ok(())).unwrap();
        without.run_until(&data, 50, |_, _| Ok(())).unwrap();
        assert_eq!(with.synth, without.synth);
        assert_eq!(with.speakers, without.speakers);
        assert_ne!(with.prior, without.prior);
    }

    #[test]
    fn mismatched_objective_options_rejected() {
        let corpus = tiny();
        assert!(TrainerState::new(
            Objective::Vb,
            &small_synth(),
            &small_prior(),
            &settings(),
            None,
            &corpus
        )
        .is_err());
    }

    #[test]
    fn trailing_mean_window() {
        assert_eq!(trailing_mean(&[1.0, 2.0, 3.0, 5.0], 2), Some(4.0));
        assert_eq!(trailing_mean(&[2.0], 10), Some(2.0));
        assert_eq!(trailing_mean(&[], 3), None);
    }

    #[test]
    fn strict_bayes_ratio() {
        assert_eq!(strict_bayes_beta(64, 1280), 0.05);
    }
}
