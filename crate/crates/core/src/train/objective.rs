//! The two joint training objectives and their single optimizer steps.
//!
//! TacoSpawn: minibatch mean ℓ1 synthesis loss for `(θ, S)` plus the mean
//! negative log-prior of all embedding rows for `ω`, with the table held
//! constant in the prior term.
//!
//! VB: the synthesis loss at one reparameterized posterior sample per
//! utterance, plus `β` times the single-sample KL estimate averaged over every
//! training speaker (never just the minibatch speakers). Gradients reach
//! `θ`, `ν` and `ω`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, SpeakerMetadata};
use crate::error::{Error, Result};
use crate::linalg::{sigmoid, softplus, softplus_inv, Flatten, Matrix, LN_2PI};
use crate::prior::{PriorNet, PriorWeights};
use crate::rng;
use crate::synth::{SpeakerTable, SynthParams, SynthWeights};
use crate::train::adam::{AdamConfig, AdamState};
use crate::train::beta::BetaSchedule;

/// Posterior scales below this are clamped (and counted).
pub const POSTERIOR_SIGMA_FLOOR: f64 = 1e-6;

/// Precomputed encodings for one training corpus.
pub struct TrainData<'a> {
    pub corpus: &'a Corpus,
    synth_meta: Vec<Vec<f64>>,
    prior_inputs: Vec<Vec<f64>>,
    /// Speakers entering the prior / KL term. All speakers unless restricted.
    pub prior_speakers: Vec<usize>,
}

impl<'a> TrainData<'a> {
    pub fn new(corpus: &'a Corpus, synth: &SynthParams, prior: &PriorNet) -> Result<Self> {
        if corpus.utterances.is_empty() {
            return Err(Error::Argument("training corpus has no utterances".into()));
        }
        let synth_meta = corpus
            .speakers
            .iter()
            .map(|c| synth.encode(c))
            .collect::<Result<_>>()?;
        let prior_inputs = corpus
            .speakers
            .iter()
            .map(|c| prior.encode(c))
            .collect::<Result<_>>()?;
        Ok(TrainData {
            corpus,
            synth_meta,
            prior_inputs,
            prior_speakers: (0..corpus.speakers.len()).collect(),
        })
    }

    /// Restricts the prior term to `speakers`.
    pub fn with_prior_speakers(mut self, speakers: Vec<usize>) -> Result<Self> {
        if speakers.is_empty() {
            return Err(Error::Argument(
                "prior term needs at least one speaker".into(),
            ));
        }
        if let Some(&j) = speakers.iter().find(|&&j| j >= self.corpus.speakers.len()) {
            return Err(Error::Argument(format!("prior speaker {j} out of range")));
        }
        self.prior_speakers = speakers;
        Ok(self)
    }

    pub fn num_speakers(&self) -> usize {
        self.corpus.speakers.len()
    }

    pub fn num_utterances(&self) -> usize {
        self.corpus.utterances.len()
    }
}

/// `batch_size` utterance indices drawn uniformly with replacement from the
/// stream for `step`.
pub fn sample_batch(num_utterances: usize, batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    let mut r = rng::stream(seed, "batch", step);
    (0..batch_size)
        .map(|_| r.random_range(0..num_utterances))
        .collect()
}

/// Adam state for each parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptStates {
    pub synth: AdamState,
    pub speakers: AdamState,
    pub prior: AdamState,
}

impl OptStates {
    pub fn new(
        synth: &SynthWeights,
        speakers: &impl Flatten,
        prior: &PriorWeights,
        cfg: AdamConfig,
    ) -> Self {
        OptStates {
            synth: AdamState::for_params(synth, cfg),
            speakers: AdamState::for_params(speakers, cfg),
            prior: AdamState::for_params(prior, cfg),
        }
    }
}

fn check_batch(data: &TrainData, batch: &[usize]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Argument("empty minibatch".into()));
    }
    if let Some(&i) = batch.iter().find(|&&i| i >= data.num_utterances()) {
        return Err(Error::Argument(format!("utterance index {i} out of range")));
    }
    Ok(())
}

fn ensure_finite(step: u64, what: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            step,
            what: what.to_string(),
        })
    }
}

/// Mean negative log-prior over `data.prior_speakers`, with `rows` as
/// constants. Accumulates `∂/∂ω` into `grad`.
fn prior_term(
    prior: &PriorNet,
    rows: &Matrix,
    data: &TrainData,
    grad: Option<&mut PriorWeights>,
) -> Result<f64> {
    let inv = 1.0 / data.prior_speakers.len() as f64;
    let mut total = 0.0;
    let mut grad = grad;
    for &j in &data.prior_speakers {
        total += prior.log_prob_with_grad(
            &data.prior_inputs[j],
            rows.row(j),
            -inv,
            grad.as_deref_mut(),
            None,
        )?;
    }
    Ok(-total * inv)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TacoSpawnLosses {
    pub synth_loss: f64,
    pub prior_nll: Option<f64>,
}

pub struct TacoSpawnGrads {
    pub synth: SynthWeights,
    pub table: Matrix,
    pub prior: Option<PriorWeights>,
}

/// Losses and gradients of the TacoSpawn objective on one minibatch.
/// `θ` and `S` only see the synthesis term; `ω` only the prior term.
pub fn tacospawn_objective(
    synth: &SynthParams,
    table: &SpeakerTable,
    prior: &PriorNet,
    data: &TrainData,
    batch: &[usize],
    include_prior: bool,
) -> Result<(TacoSpawnLosses, TacoSpawnGrads)> {
    check_batch(data, batch)?;
    let inv_b = 1.0 / batch.len() as f64;
    let mut g_synth = SynthWeights::zeros(&synth.dims);
    let mut g_table = Matrix::zeros(table.embeddings.rows, table.embeddings.cols);
    let mut synth_loss = 0.0;
    for &i in batch {
        let u = &data.corpus.utterances[i];
        let j = u.speaker_id;
        synth_loss += synth.nll_with_grad(
            &u.frames,
            &u.tokens,
            table.row(j),
            &data.synth_meta[j],
            inv_b,
            Some(&mut g_synth),
            Some(g_table.row_mut(j)),
        )?;
    }
    synth_loss *= inv_b;

    let (prior_nll, g_prior) = if include_prior {
        let mut g = prior.weights.zeros_like();
        let nll = prior_term(prior, &table.embeddings, data, Some(&mut g))?;
        (Some(nll), Some(g))
    } else {
        (None, None)
    };
    Ok((
        TacoSpawnLosses {
            synth_loss,
            prior_nll,
        },
        TacoSpawnGrads {
            synth: g_synth,
            table: g_table,
            prior: g_prior,
        },
    ))
}

/// One Adam update of `(θ, S)` and, when `include_prior`, of `ω`.
#[allow(clippy::too_many_arguments)]
pub fn tacospawn_step(
    synth: &mut SynthParams,
    table: &mut SpeakerTable,
    prior: &mut PriorNet,
    data: &TrainData,
    batch: &[usize],
    opt: &mut OptStates,
    include_prior: bool,
    step: u64,
) -> Result<TacoSpawnLosses> {
    let (losses, grads) = tacospawn_objective(synth, table, prior, data, batch, include_prior)?;
    ensure_finite(step, "synthesis loss", [losses.synth_loss])?;
    ensure_finite(step, "prior loss", losses.prior_nll)?;
    let g_synth = grads.synth.flatten();
    ensure_finite(step, "synthesizer gradient", g_synth.iter().copied())?;
    ensure_finite(
        step,
        "speaker table gradient",
        grads.table.data.iter().copied(),
    )?;

    let mut flat = synth.weights.flatten();
    let lr = opt.synth.config.lr;
    opt.synth.update_with_lr(&mut flat, &g_synth, lr)?;
    synth.weights.assign(&flat);
    let lr = opt.speakers.config.lr;
    opt.speakers
        .update_with_lr(&mut table.embeddings.data, &grads.table.data, lr)?;
    if let Some(g) = grads.prior {
        let g = g.flatten();
        ensure_finite(step, "prior gradient", g.iter().copied())?;
        let mut flat = prior.weights.flatten();
        let lr = opt.prior.config.lr;
        opt.prior.update_with_lr(&mut flat, &g, lr)?;
        prior.weights.assign(&flat);
    }
    Ok(losses)
}

/// Per-speaker diagonal Gaussian posteriors `q_j = N(μ_j, diag σ_j²)` with
/// `σ = softplus(ρ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTable {
    pub mean: Matrix,
    pub rho: Matrix,
}

impl PosteriorTable {
    /// Means start from the same draw as a fresh [`SpeakerTable`] with this
    /// seed; every scale starts at `init_sigma`.
    pub fn new(num_speakers: usize, dim: usize, init_sigma: f64, seed: u64) -> Result<Self> {
        if !(init_sigma > 0.0) {
            return Err(Error::Config(
                "posterior init_sigma must be positive".into(),
            ));
        }
        let mean = SpeakerTable::new(num_speakers, dim, seed).embeddings;
        let rho = Matrix::from_vec(
            num_speakers,
            dim,
            vec![softplus_inv(init_sigma); num_speakers * dim],
        )?;
        Ok(PosteriorTable { mean, rho })
    }

    pub fn num_speakers(&self) -> usize {
        self.mean.rows
    }

    pub fn dim(&self) -> usize {
        self.mean.cols
    }

    /// `(σ, ∂σ/∂ρ, floored)` for entry `(j, d)`.
    #[inline]
    pub fn scale(&self, j: usize, d: usize) -> (f64, f64, bool) {
        let r = self.rho.get(j, d);
        let s = softplus(r);
        if s < POSTERIOR_SIGMA_FLOOR {
            (POSTERIOR_SIGMA_FLOOR, 0.0, true)
        } else {
            (s, sigmoid(r), false)
        }
    }

    pub fn scales(&self, j: usize) -> Vec<f64> {
        (0..self.dim()).map(|d| self.scale(j, d).0).collect()
    }

    /// One draw `μ_j + σ_j ⊙ ε`, returned with its `ε`.
    pub fn sample<R: Rng + ?Sized>(&self, j: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let eps = rng::normal_vec(rng, self.dim());
        let s = (0..self.dim())
            .map(|d| self.mean.get(j, d) + self.scale(j, d).0 * eps[d])
            .collect();
        (s, eps)
    }

    /// `log q_j(s)` for `s = μ_j + σ_j ⊙ ε`.
    pub fn log_q_at_noise(&self, j: usize, eps: &[f64]) -> f64 {
        (0..self.dim())
            .map(|d| -0.5 * LN_2PI - self.scale(j, d).0.ln() - 0.5 * eps[d] * eps[d])
            .sum()
    }

    pub fn zeros_like(&self) -> Self {
        PosteriorTable {
            mean: Matrix::zeros(self.mean.rows, self.mean.cols),
            rho: Matrix::zeros(self.rho.rows, self.rho.cols),
        }
    }
}

impl Flatten for PosteriorTable {
    fn flatten(&self) -> Vec<f64> {
        [self.mean.data.as_slice(), self.rho.data.as_slice()].concat()
    }

    fn assign(&mut self, flat: &[f64]) {
        let n = self.mean.data.len();
        self.mean.data.copy_from_slice(&flat[..n]);
        self.rho.data.copy_from_slice(&flat[n..]);
    }
}

/// Which random streams a VB step draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VbNoise {
    pub seed: u64,
    pub step: u64,
}

impl VbNoise {
    pub fn reparam(&self) -> rng::StreamRng {
        rng::stream(self.seed, "reparam", self.step)
    }

    pub fn kl(&self) -> rng::StreamRng {
        rng::stream(self.seed, "kl", self.step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VbLosses {
    pub synth_loss: f64,
    pub kl_actual: f64,
    /// β in effect for this step, before the controller update.
    pub beta: f64,
    pub total: f64,
    /// Posterior scale entries that hit the floor in this step's KL pass.
    pub floored: u64,
}

pub struct VbGrads {
    pub synth: SynthWeights,
    pub posterior: PosteriorTable,
    pub prior: PriorWeights,
}

/// Losses and gradients of the VB objective for fixed noise.
#[allow(clippy::too_many_arguments)]
pub fn vb_objective(
    synth: &SynthParams,
    post: &PosteriorTable,
    prior: &PriorNet,
    beta: f64,
    data: &TrainData,
    batch: &[usize],
    noise: VbNoise,
) -> Result<(VbLosses, VbGrads)> {
    check_batch(data, batch)?;
    let dim = post.dim();
    let mut g_synth = SynthWeights::zeros(&synth.dims);
    let mut g_post = post.zeros_like();
    let mut g_s = vec![0.0; dim];

    // Synthesis term: one reparameterized draw per utterance.
    let inv_b = 1.0 / batch.len() as f64;
    let mut r = noise.reparam();
    let mut synth_loss = 0.0;
    for &i in batch {
        let u = &data.corpus.utterances[i];
        let j = u.speaker_id;
        let (s, eps) = post.sample(j, &mut r);
        g_s.iter_mut().for_each(|g| *g = 0.0);
        synth_loss += synth.nll_with_grad(
            &u.frames,
            &u.tokens,
            &s,
            &data.synth_meta[j],
            inv_b,
            Some(&mut g_synth),
            Some(&mut g_s),
        )?;
        for d in 0..dim {
            let (_, dsd, _) = post.scale(j, d);
            g_post.mean.data[j * dim + d] += g_s[d];
            g_post.rho.data[j * dim + d] += g_s[d] * eps[d] * dsd;
        }
    }
    synth_loss *= inv_b;

    // KL term over every prior speaker, independent of the minibatch.
    let inv_j = 1.0 / data.prior_speakers.len() as f64;
    let coef = beta * inv_j;
    let mut g_prior = prior.weights.zeros_like();
    let mut r = noise.kl();
    let mut kl = 0.0;
    let mut floored = 0;
    for &j in &data.prior_speakers {
        let (s, eps) = post.sample(j, &mut r);
        let log_q = post.log_q_at_noise(j, &eps);
        g_s.iter_mut().for_each(|g| *g = 0.0);
        let log_p = prior.log_prob_with_grad(
            &data.prior_inputs[j],
            &s,
            -coef,
            Some(&mut g_prior),
            Some(&mut g_s),
        )?;
        kl += log_q - log_p;
        for d in 0..dim {
            let (sd, dsd, hit) = post.scale(j, d);
            floored += u64::from(hit);
            // ∂/∂σ of log q at fixed ε is -1/σ; g_s already holds β/J · ∂(-log p)/∂s.
            g_post.mean.data[j * dim + d] += g_s[d];
            g_post.rho.data[j * dim + d] += (g_s[d] * eps[d] - coef / sd) * dsd;
        }
    }
    kl *= inv_j;

    Ok((
        VbLosses {
            synth_loss,
            kl_actual: kl,
            beta,
            total: synth_loss + beta * kl,
            floored,
        },
        VbGrads {
            synth: g_synth,
            posterior: g_post,
            prior: g_prior,
        },
    ))
}

/// One Adam update of `(θ, ν, ω)`, followed by the β update with the fresh
/// KL estimate. With `omega_lr_inverse_beta` the prior's learning rate is
/// divided by β.
#[allow(clippy::too_many_arguments)]
pub fn vb_step(
    synth: &mut SynthParams,
    post: &mut PosteriorTable,
    prior: &mut PriorNet,
    schedule: &mut BetaSchedule,
    data: &TrainData,
    batch: &[usize],
    noise: VbNoise,
    opt: &mut OptStates,
    omega_lr_inverse_beta: bool,
) -> Result<VbLosses> {
    let beta = schedule.beta();
    let (losses, grads) = vb_objective(synth, post, prior, beta, data, batch, noise)?;
    let step = noise.step;
    ensure_finite(step, "synthesis loss", [losses.synth_loss])?;
    ensure_finite(step, "KL term", [losses.kl_actual])?;
    let g_synth = grads.synth.flatten();
    let g_post = grads.posterior.flatten();
    let g_prior = grads.prior.flatten();
    ensure_finite(step, "synthesizer gradient", g_synth.iter().copied())?;
    ensure_finite(step, "posterior gradient", g_post.iter().copied())?;
    ensure_finite(step, "prior gradient", g_prior.iter().copied())?;

    let mut flat = synth.weights.flatten();
    let lr = opt.synth.config.lr;
    opt.synth.update_with_lr(&mut flat, &g_synth, lr)?;
    synth.weights.assign(&flat);

    let mut flat = post.flatten();
    let lr = opt.speakers.config.lr;
    opt.speakers.update_with_lr(&mut flat, &g_post, lr)?;
    post.assign(&flat);

    let mut flat = prior.weights.flatten();
    let lr = if omega_lr_inverse_beta {
        opt.prior.config.lr / beta
    } else {
        opt.prior.config.lr
    };
    opt.prior.update_with_lr(&mut flat, &g_prior, lr)?;
    prior.weights.assign(&flat);

    schedule.observe(losses.kl_actual);
    Ok(losses)
}

/// Monte-Carlo KL term: `(1/J) Σ_j mean_n [log q_j(s) - log p(s | C_j)]`
/// with `s ~ q_j`.
pub fn kl_term<R: Rng + ?Sized>(
    post: &PosteriorTable,
    prior: &PriorNet,
    metadata: &[SpeakerMetadata],
    rng: &mut R,
    n_samples: usize,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::Argument("kl_term needs at least one sample".into()));
    }
    if metadata.len() != post.num_speakers() || metadata.is_empty() {
        return Err(Error::Shape(format!(
            "{} metadata rows for {} posterior rows",
            metadata.len(),
            post.num_speakers()
        )));
    }
    let mut total = 0.0;
    for (j, c) in metadata.iter().enumerate() {
        let input = prior.encode(c)?;
        let mut acc = 0.0;
        for _ in 0..n_samples {
            let (s, eps) = post.sample(j, rng);
            acc += post.log_q_at_noise(j, &eps)
                - prior.log_prob_with_grad(&input, &s, 0.0, None, None)?;
        }
        total += acc / n_samples as f64;
    }
    Ok(total / metadata.len() as f64)
}
