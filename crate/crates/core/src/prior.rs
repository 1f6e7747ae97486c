//! Metadata-conditioned mixture-of-Gaussians prior over speaker embeddings.
//!
//! A one-hidden-layer tanh network maps the one-hot metadata encoding to the
//! mixture weights (softmax head), component means (identity head) and
//! component scales (softplus head plus a floor). With no conditioning the
//! network sees a constant input, which gives an unconditional prior through
//! the same code path.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{one_hot_metadata, Conditioning, Header, SpeakerMetadata};
use crate::error::{Error, Result};
use crate::linalg::{
    assign_parts, flatten_parts, log_sum_exp, sigmoid, softmax_into, softplus, softplus_inv,
    Flatten, Matrix, LN_2PI,
};
use crate::rng;

pub const DEFAULT_COMPONENTS: usize = 10;
pub const DEFAULT_HIDDEN: usize = 32;
pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub components: usize,
    pub hidden: usize,
    pub sigma_floor: f64,
    /// Component scale at initialization.
    pub init_sigma: f64,
    /// Radius of the ball the initial component means are spread over.
    pub init_mean_radius: f64,
    pub conditioning: Conditioning,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            components: DEFAULT_COMPONENTS,
            hidden: DEFAULT_HIDDEN,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            init_sigma: 1.0,
            init_mean_radius: 0.1,
            conditioning: Conditioning::FULL,
        }
    }
}

/// Mixture parameters for one metadata value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoGParams {
    pub weights: Vec<f64>,
    /// `K x D`
    pub means: Matrix,
    /// `K x D` standard deviations.
    pub scales: Matrix,
}

impl MoGParams {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols
    }

    /// `log Σ_k α_k N(s; μ_k, diag σ_k²)`.
    pub fn log_prob(&self, s: &[f64]) -> Result<f64> {
        if s.len() != self.dim() {
            return Err(Error::Shape(format!(
                "embedding has {} entries, prior dimension is {}",
                s.len(),
                self.dim()
            )));
        }
        let terms: Vec<f64> = (0..self.components())
            .map(|k| {
                self.weights[k].ln()
                    + diag_normal_log_prob(s, self.means.row(k), self.scales.row(k))
            })
            .collect();
        Ok(log_sum_exp(&terms))
    }

    /// Component draw then `μ_k + temperature · σ_k ⊙ ε`.
    pub fn sample<R: Rng + ?Sized>(&self, temperature: f64, rng: &mut R) -> Result<Vec<f64>> {
        if !(temperature >= 0.0) {
            return Err(Error::Argument(format!(
                "temperature {temperature} is negative"
            )));
        }
        let k = rng::categorical(rng, &self.weights);
        Ok(self
            .means
            .row(k)
            .iter()
            .zip(self.scales.row(k))
            .map(|(m, s)| m + temperature * s * rng::normal(rng))
            .collect())
    }
}

/// `log N(s; μ, diag σ²)`.
pub fn diag_normal_log_prob(s: &[f64], mean: &[f64], scale: &[f64]) -> f64 {
    s.iter()
        .zip(mean)
        .zip(scale)
        .map(|((x, m), sd)| {
            let z = (x - m) / sd;
            -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
        })
        .sum()
}

/// Trainable weights of the prior network, also used as its gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorWeights {
    pub hidden_w: Matrix,
    pub hidden_b: Vec<f64>,
    pub logits_w: Matrix,
    pub logits_b: Vec<f64>,
    pub means_w: Matrix,
    pub means_b: Vec<f64>,
    pub scales_w: Matrix,
    pub scales_b: Vec<f64>,
}

impl PriorWeights {
    pub fn zeros(input: usize, hidden: usize, components: usize, dim: usize) -> Self {
        let kd = components * dim;
        PriorWeights {
            hidden_w: Matrix::zeros(hidden, input),
            hidden_b: vec![0.0; hidden],
            logits_w: Matrix::zeros(components, hidden),
            logits_b: vec![0.0; components],
            means_w: Matrix::zeros(kd, hidden),
            means_b: vec![0.0; kd],
            scales_w: Matrix::zeros(kd, hidden),
            scales_b: vec![0.0; kd],
        }
    }

    pub fn zeros_like(&self) -> Self {
        PriorWeights::zeros(
            self.hidden_w.cols,
            self.hidden_w.rows,
            self.logits_b.len(),
            self.means_b.len() / self.logits_b.len(),
        )
    }
}

impl Flatten for PriorWeights {
    fn flatten(&self) -> Vec<f64> {
        flatten_parts(
            &[
                &self.hidden_w,
                &self.logits_w,
                &self.means_w,
                &self.scales_w,
            ],
            &[
                &self.hidden_b,
                &self.logits_b,
                &self.means_b,
                &self.scales_b,
            ],
        )
    }

    fn assign(&mut self, flat: &[f64]) {
        assign_parts(
            flat,
            &mut [
                &mut self.hidden_w,
                &mut self.logits_w,
                &mut self.means_w,
                &mut self.scales_w,
            ],
            &mut [
                &mut self.hidden_b,
                &mut self.logits_b,
                &mut self.means_b,
                &mut self.scales_b,
            ],
        );
    }
}

/// The prior network `ω`. Serializes to the prior checkpoint format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorNet {
    pub components: usize,
    pub dim: usize,
    pub hidden: usize,
    pub sigma_floor: f64,
    pub conditioning: Conditioning,
    pub locales: Vec<String>,
    pub genders: Vec<String>,
    pub weights: PriorWeights,
}

/// Intermediate values of one forward pass.
struct Forward {
    input: Vec<f64>,
    hidden: Vec<f64>,
    alpha: Vec<f64>,
    means: Vec<f64>,
    scale_pre: Vec<f64>,
    scales: Vec<f64>,
}

impl PriorNet {
    /// Fresh network: seeded hidden layer, zero head weights, uniform
    /// mixture weights and component means spread over a small ball.
    pub fn new(cfg: &PriorConfig, dim: usize, header: &Header, seed: u64) -> Result<Self> {
        if cfg.components == 0 || cfg.hidden == 0 || dim == 0 {
            return Err(Error::Config(
                "prior components, hidden width and dim must be positive".into(),
            ));
        }
        if !(cfg.sigma_floor > 0.0) || !(cfg.init_sigma > cfg.sigma_floor) {
            return Err(Error::Config(
                "prior needs 0 < sigma_floor < init_sigma".into(),
            ));
        }
        let input = cfg.conditioning.width(header).max(1);
        let mut w = PriorWeights::zeros(input, cfg.hidden, cfg.components, dim);
        let mut r = rng::stream(seed, "prior-init", 0);
        let gain = 1.0 / (input as f64).sqrt();
        for x in &mut w.hidden_w.data {
            *x = gain * rng::normal(&mut r);
        }
        for k in 0..cfg.components {
            let dir = rng::normal_vec(&mut r, dim);
            let len = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
            let u: f64 = r.random();
            let radius = cfg.init_mean_radius * u.powf(1.0 / dim as f64);
            for (m, x) in w.means_b[k * dim..(k + 1) * dim].iter_mut().zip(&dir) {
                *m = radius * x / len;
            }
        }
        let pre = softplus_inv(cfg.init_sigma - cfg.sigma_floor);
        w.scales_b.iter_mut().for_each(|b| *b = pre);
        Ok(PriorNet {
            components: cfg.components,
            dim,
            hidden: cfg.hidden,
            sigma_floor: cfg.sigma_floor,
            conditioning: cfg.conditioning,
            locales: header.locales.clone(),
            genders: header.genders.clone(),
            weights: w,
        })
    }

    fn vocab_header(&self) -> Header {
        Header {
            vocab_size: 0,
            frame_dim: 0,
            locales: self.locales.clone(),
            genders: self.genders.clone(),
            seed: 0,
            truth: None,
        }
    }

    /// Network input for `c`: the one-hot encoding, or `[1]` when unconditional.
    pub fn encode(&self, c: &SpeakerMetadata) -> Result<Vec<f64>> {
        if self.conditioning.is_empty() {
            return Ok(vec![1.0]);
        }
        one_hot_metadata(c, self.conditioning, &self.vocab_header())
    }

    fn forward(&self, input: Vec<f64>) -> Forward {
        let w = &self.weights;
        let mut hidden = w.hidden_w.matvec(&input);
        for (h, b) in hidden.iter_mut().zip(&w.hidden_b) {
            *h = (*h + b).tanh();
        }
        let mut logits = w.logits_w.matvec(&hidden);
        logits
            .iter_mut()
            .zip(&w.logits_b)
            .for_each(|(l, b)| *l += b);
        let mut alpha = vec![0.0; self.components];
        softmax_into(&logits, &mut alpha);
        let mut means = w.means_w.matvec(&hidden);
        means.iter_mut().zip(&w.means_b).for_each(|(m, b)| *m += b);
        let mut scale_pre = w.scales_w.matvec(&hidden);
        scale_pre
            .iter_mut()
            .zip(&w.scales_b)
            .for_each(|(p, b)| *p += b);
        let scales = scale_pre
            .iter()
            .map(|&p| self.sigma_floor + softplus(p))
            .collect();
        Forward {
            input,
            hidden,
            alpha,
            means,
            scale_pre,
            scales,
        }
    }

    pub fn params(&self, c: &SpeakerMetadata) -> Result<MoGParams> {
        let f = self.forward(self.encode(c)?);
        Ok(MoGParams {
            weights: f.alpha,
            means: Matrix::from_vec(self.components, self.dim, f.means)?,
            scales: Matrix::from_vec(self.components, self.dim, f.scales)?,
        })
    }

    pub fn log_prob(&self, c: &SpeakerMetadata, s: &[f64]) -> Result<f64> {
        self.log_prob_with_grad(&self.encode(c)?, s, 0.0, None, None)
    }

    /// `log p(s | input)`. When given, accumulates `scale · ∂/∂ω` into
    /// `grad_w` and `scale · ∂/∂s` into `grad_s`.
    pub fn log_prob_with_grad(
        &self,
        input: &[f64],
        s: &[f64],
        scale: f64,
        grad_w: Option<&mut PriorWeights>,
        grad_s: Option<&mut [f64]>,
    ) -> Result<f64> {
        if s.len() != self.dim {
            return Err(Error::Shape(format!(
                "embedding has {} entries, prior dimension is {}",
                s.len(),
                self.dim
            )));
        }
        let (kc, d) = (self.components, self.dim);
        let f = self.forward(input.to_vec());
        let mut terms = vec![0.0; kc];
        for (k, t) in terms.iter_mut().enumerate() {
            let rows = k * d..(k + 1) * d;
            *t = f.alpha[k].ln() + diag_normal_log_prob(s, &f.means[rows.clone()], &f.scales[rows]);
        }
        let lp = log_sum_exp(&terms);
        if grad_w.is_none() && grad_s.is_none() {
            return Ok(lp);
        }

        let resp: Vec<f64> = terms.iter().map(|t| (t - lp).exp()).collect();
        let mut d_means = vec![0.0; kc * d];
        let mut d_pre = vec![0.0; kc * d];
        let mut d_s = vec![0.0; d];
        for (k, &r_k) in resp.iter().enumerate() {
            for i in 0..d {
                let at = k * d + i;
                let sd = f.scales[at];
                let diff = s[i] - f.means[at];
                let g_mu = r_k * diff / (sd * sd);
                d_means[at] = g_mu;
                d_s[i] -= g_mu;
                let g_sd = r_k * (diff * diff / (sd * sd * sd) - 1.0 / sd);
                d_pre[at] = g_sd * sigmoid(f.scale_pre[at]);
            }
        }
        if let Some(gs) = grad_s {
            gs.iter_mut().zip(&d_s).for_each(|(g, v)| *g += scale * v);
        }
        if let Some(g) = grad_w {
            let d_logits: Vec<f64> = resp
                .iter()
                .zip(&f.alpha)
                .map(|(r, a)| scale * (r - a))
                .collect();
            let d_means: Vec<f64> = d_means.iter().map(|v| scale * v).collect();
            let d_pre: Vec<f64> = d_pre.iter().map(|v| scale * v).collect();
            let w = &self.weights;
            let mut d_hidden = vec![0.0; self.hidden];
            w.logits_w.matvec_t_acc(&d_logits, &mut d_hidden);
            w.means_w.matvec_t_acc(&d_means, &mut d_hidden);
            w.scales_w.matvec_t_acc(&d_pre, &mut d_hidden);
            g.logits_w.add_outer(&d_logits, &f.hidden);
            g.means_w.add_outer(&d_means, &f.hidden);
            g.scales_w.add_outer(&d_pre, &f.hidden);
            add_into(&mut g.logits_b, &d_logits);
            add_into(&mut g.means_b, &d_means);
            add_into(&mut g.scales_b, &d_pre);
            for (dh, h) in d_hidden.iter_mut().zip(&f.hidden) {
                *dh *= 1.0 - h * h;
            }
            g.hidden_w.add_outer(&d_hidden, &f.input);
            add_into(&mut g.hidden_b, &d_hidden);
        }
        Ok(lp)
    }

    pub fn sample(
        &self,
        c: &SpeakerMetadata,
        temperature: f64,
        rng: &mut impl Rng,
    ) -> Result<Vec<f64>> {
        if !(temperature >= 0.0) {
            return Err(Error::Argument(format!(
                "temperature {temperature} is negative"
            )));
        }
        self.params(c)?.sample(temperature, rng)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub fn prior_params(net: &PriorNet, c: &SpeakerMetadata) -> Result<MoGParams> {
    net.params(c)
}

pub fn prior_log_prob(net: &PriorNet, c: &SpeakerMetadata, s: &[f64]) -> Result<f64> {
    net.log_prob(c, s)
}

pub fn sample_speaker(
    net: &PriorNet,
    c: &SpeakerMetadata,
    temperature: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    net.sample(c, temperature, rng)
}

/// Mean negative log-prior of the embedding rows, `-(1/J) Σ_j log p(S_j | C_j)`,
/// and its gradient with respect to `ω`.
///
/// The table is borrowed immutably and no gradient with respect to it is
/// produced, so the embeddings are constants of this loss.
pub fn prior_nll_loss(
    net: &PriorNet,
    table: &Matrix,
    metadata: &[SpeakerMetadata],
) -> Result<(f64, PriorWeights)> {
    if metadata.is_empty() {
        return Err(Error::Argument(
            "prior loss needs at least one speaker".into(),
        ));
    }
    if table.rows != metadata.len() {
        return Err(Error::Shape(format!(
            "{} embedding rows for {} metadata entries",
            table.rows,
            metadata.len()
        )));
    }
    let inv_j = 1.0 / metadata.len() as f64;
    let mut grad = net.weights.zeros_like();
    let mut total = 0.0;
    for (j, c) in metadata.iter().enumerate() {
        let input = net.encode(c)?;
        total += net.log_prob_with_grad(&input, table.row(j), -inv_j, Some(&mut grad), None)?;
    }
    Ok((-total * inv_j, grad))
}
