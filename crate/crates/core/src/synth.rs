//! Toy multi-speaker synthesizer and the speaker-vector extractor.
//!
//! Each output frame is a one-hidden-layer MLP of the current token's
//! embedding, the speaker embedding and the speaker's metadata one-hot:
//!
//! ```text
//! ŷ_t = W_out · act(W_h · [e(x_t); s; onehot(c)] + b_h) + b_out
//! ```
//!
//! The likelihood is a fixed unit-scale Laplace, so the training loss is the
//! mean absolute error and temperature-zero synthesis is the forward pass.

use serde::{Deserialize, Serialize};

use crate::corpus::{one_hot_metadata, Conditioning, Header, SpeakerMetadata};
use crate::error::{Error, Result};
use crate::linalg::{assign_parts, flatten_parts, norm, Flatten, Matrix};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthDims {
    pub vocab_size: usize,
    pub token_dim: usize,
    pub hidden: usize,
    pub frame_dim: usize,
    pub speaker_dim: usize,
    pub meta_dim: usize,
}

impl SynthDims {
    pub fn input(&self) -> usize {
        self.token_dim + self.speaker_dim + self.meta_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthWeights {
    /// `V x E_tok`
    pub token_embedding: Matrix,
    /// `H x (E_tok + D + M)`
    pub hidden_w: Matrix,
    pub hidden_b: Vec<f64>,
    /// `F x H`
    pub out_w: Matrix,
    pub out_b: Vec<f64>,
}

impl SynthWeights {
    pub fn zeros(d: &SynthDims) -> Self {
        SynthWeights {
            token_embedding: Matrix::zeros(d.vocab_size, d.token_dim),
            hidden_w: Matrix::zeros(d.hidden, d.input()),
            hidden_b: vec![0.0; d.hidden],
            out_w: Matrix::zeros(d.frame_dim, d.hidden),
            out_b: vec![0.0; d.frame_dim],
        }
    }
}

impl Flatten for SynthWeights {
    fn flatten(&self) -> Vec<f64> {
        flatten_parts(
            &[&self.token_embedding, &self.hidden_w, &self.out_w],
            &[&self.hidden_b, &self.out_b],
        )
    }

    fn assign(&mut self, flat: &[f64]) {
        assign_parts(
            flat,
            &mut [
                &mut self.token_embedding,
                &mut self.hidden_w,
                &mut self.out_w,
            ],
            &mut [&mut self.hidden_b, &mut self.out_b],
        );
    }
}

/// Synthesizer parameters `θ`. Serializes to the synthesizer checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub dims: SynthDims,
    #[serde(default)]
    pub activation: Activation,
    pub locales: Vec<String>,
    pub genders: Vec<String>,
    pub weights: SynthWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthModelConfig {
    pub token_dim: usize,
    pub hidden: usize,
    pub speaker_dim: usize,
    pub activation: Activation,
}

impl Default for SynthModelConfig {
    fn default() -> Self {
        SynthModelConfig {
            token_dim: 8,
            hidden: 32,
            speaker_dim: 8,
            activation: Activation::Tanh,
        }
    }
}

impl SynthParams {
    /// Seeded initialization; the synthesizer always sees the full
    /// locale and gender one-hot.
    pub fn new(cfg: &SynthModelConfig, header: &Header, seed: u64) -> Result<Self> {
        if cfg.token_dim == 0 || cfg.hidden == 0 || cfg.speaker_dim == 0 {
            return Err(Error::Config(
                "synth token_dim, hidden and speaker_dim must be positive".into(),
            ));
        }
        let dims = SynthDims {
            vocab_size: header.vocab_size,
            token_dim: cfg.token_dim,
            hidden: cfg.hidden,
            frame_dim: header.frame_dim,
            speaker_dim: cfg.speaker_dim,
            meta_dim: Conditioning::FULL.width(header),
        };
        let mut w = SynthWeights::zeros(&dims);
        let mut r = rng::stream(seed, "synth-init", 0);
        for x in &mut w.token_embedding.data {
            *x = rng::normal(&mut r);
        }
        let gain_h = 1.0 / (dims.input() as f64).sqrt();
        for x in &mut w.hidden_w.data {
            *x = gain_h * rng::normal(&mut r);
        }
        let gain_o = 1.0 / (dims.hidden as f64).sqrt();
        for x in &mut w.out_w.data {
            *x = gain_o * rng::normal(&mut r);
        }
        Ok(SynthParams {
            dims,
            activation: cfg.activation,
            locales: header.locales.clone(),
            genders: header.genders.clone(),
            weights: w,
        })
    }

    pub fn encode(&self, c: &SpeakerMetadata) -> Result<Vec<f64>> {
        let h = Header {
            vocab_size: 0,
            frame_dim: 0,
            locales: self.locales.clone(),
            genders: self.genders.clone(),
            seed: 0,
            truth: None,
        };
        one_hot_metadata(c, Conditioning::FULL, &h)
    }

    fn check_inputs(&self, tokens: &[usize], s: &[f64], meta: &[f64]) -> Result<()> {
        let d = &self.dims;
        if let Some(&t) = tokens.iter().find(|&&t| t >= d.vocab_size) {
            return Err(Error::Argument(format!(
                "token {t} outside vocabulary of {}",
                d.vocab_size
            )));
        }
        if s.len() != d.speaker_dim {
            return Err(Error::Shape(format!(
                "speaker embedding has {} entries, expected {}",
                s.len(),
                d.speaker_dim
            )));
        }
        if meta.len() != d.meta_dim {
            return Err(Error::Shape(format!(
                "metadata encoding has {} entries, expected {}",
                meta.len(),
                d.meta_dim
            )));
        }
        Ok(())
    }

    fn fill_input(&self, token: usize, s: &[f64], meta: &[f64], input: &mut [f64]) {
        let e = self.dims.token_dim;
        let d = self.dims.speaker_dim;
        input[..e].copy_from_slice(self.weights.token_embedding.row(token));
        input[e..e + d].copy_from_slice(s);
        input[e + d..].copy_from_slice(meta);
    }

    /// Forward pass on an already-encoded metadata vector.
    pub fn forward_encoded(&self, tokens: &[usize], s: &[f64], meta: &[f64]) -> Result<Matrix> {
        self.check_inputs(tokens, s, meta)?;
        let dims = &self.dims;
        let w = &self.weights;
        let mut out = Matrix::zeros(tokens.len(), dims.frame_dim);
        let mut input = vec![0.0; dims.input()];
        let mut hidden = vec![0.0; dims.hidden];
        for (t, &tok) in tokens.iter().enumerate() {
            self.fill_input(tok, s, meta, &mut input);
            w.hidden_w.matvec_into(&input, &mut hidden);
            for (h, b) in hidden.iter_mut().zip(&w.hidden_b) {
                *h = self.activation.apply(*h + b);
            }
            let row = out.row_mut(t);
            w.out_w.matvec_into(&hidden, row);
            row.iter_mut().zip(&w.out_b).for_each(|(y, b)| *y += b);
        }
        Ok(out)
    }

    /// Mean absolute error between `target` and the forward pass. When
    /// given, accumulates `scale · ∂/∂θ` into `grad_w` and `scale · ∂/∂s`
    /// into `grad_s`.
    #[allow(clippy::too_many_arguments)]
    pub fn nll_with_grad(
        &self,
        target: &Matrix,
        tokens: &[usize],
        s: &[f64],
        meta: &[f64],
        scale: f64,
        mut grad_w: Option<&mut SynthWeights>,
        mut grad_s: Option<&mut [f64]>,
    ) -> Result<f64> {
        self.check_inputs(tokens, s, meta)?;
        let dims = &self.dims;
        if target.rows != tokens.len() || target.cols != dims.frame_dim {
            return Err(Error::Shape(format!(
                "target is {}x{}, synthesizer produces {}x{}",
                target.rows,
                target.cols,
                tokens.len(),
                dims.frame_dim
            )));
        }
        let w = &self.weights;
        let inv_n = 1.0 / (tokens.len() * dims.frame_dim) as f64;
        let want_grad = grad_w.is_some() || grad_s.is_some();
        let mut input = vec![0.0; dims.input()];
        let mut hidden = vec![0.0; dims.hidden];
        let mut pred = vec![0.0; dims.frame_dim];
        let mut d_pred = vec![0.0; dims.frame_dim];
        let mut d_hidden = vec![0.0; dims.hidden];
        let mut d_input = vec![0.0; dims.input()];
        let mut total = 0.0;
        for (t, &tok) in tokens.iter().enumerate() {
            self.fill_input(tok, s, meta, &mut input);
            w.hidden_w.matvec_into(&input, &mut hidden);
            for (h, b) in hidden.iter_mut().zip(&w.hidden_b) {
                *h = self.activation.apply(*h + b);
            }
            w.out_w.matvec_into(&hidden, &mut pred);
            for ((p, b), (dp, y)) in pred
                .iter_mut()
                .zip(&w.out_b)
                .zip(d_pred.iter_mut().zip(target.row(t)))
            {
                *p += b;
                let diff = *p - y;
                total += diff.abs();
                *dp = scale * inv_n * sign(diff);
            }
            if !want_grad {
                continue;
            }
            d_hidden.iter_mut().for_each(|v| *v = 0.0);
            w.out_w.matvec_t_acc(&d_pred, &mut d_hidden);
            for (dh, h) in d_hidden.iter_mut().zip(&hidden) {
                *dh *= self.activation.grad_from_output(*h);
            }
            d_input.iter_mut().for_each(|v| *v = 0.0);
            w.hidden_w.matvec_t_acc(&d_hidden, &mut d_input);
            if let Some(g) = grad_w.as_deref_mut() {
                g.out_w.add_outer(&d_pred, &hidden);
                g.out_b.iter_mut().zip(&d_pred).for_each(|(a, b)| *a += b);
                g.hidden_w.add_outer(&d_hidden, &input);
                g.hidden_b
                    .iter_mut()
                    .zip(&d_hidden)
                    .for_each(|(a, b)| *a += b);
                let e = dims.token_dim;
                g.token_embedding
                    .row_mut(tok)
                    .iter_mut()
                    .zip(&d_input[..e])
                    .for_each(|(a, b)| *a += b);
            }
            if let Some(gs) = grad_s.as_deref_mut() {
                let e = dims.token_dim;
                gs.iter_mut()
                    .zip(&d_input[e..e + dims.speaker_dim])
                    .for_each(|(a, b)| *a += b);
            }
        }
        Ok(total * inv_n)
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn synth_forward(
    params: &SynthParams,
    tokens: &[usize],
    s: &[f64],
    c: &SpeakerMetadata,
) -> Result<Matrix> {
    params.forward_encoded(tokens, s, &params.encode(c)?)
}

/// Temperature-zero synthesis: the mode of a fixed-scale Laplace is its
/// location, so this is exactly the forward pass.
pub fn synthesize(
    params: &SynthParams,
    tokens: &[usize],
    s: &[f64],
    c: &SpeakerMetadata,
) -> Result<Matrix> {
    synth_forward(params, tokens, s, c)
}

/// Mean over all `T x F` elements of `|y - ŷ|`. Add [`LAPLACE_NLL_OFFSET`]
/// per element for the unit-scale Laplace negative log-likelihood.
pub fn synth_nll(
    params: &SynthParams,
    target: &Matrix,
    tokens: &[usize],
    s: &[f64],
    c: &SpeakerMetadata,
) -> Result<f64> {
    params.nll_with_grad(target, tokens, s, &params.encode(c)?, 0.0, None, None)
}

/// `ln 2`, the per-element constant between ℓ1 and the unit Laplace NLL.
pub const LAPLACE_NLL_OFFSET: f64 = std::f64::consts::LN_2;

/// Trainable speaker embedding table, one row per training speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerTable {
    pub embeddings: Matrix,
}

impl SpeakerTable {
    pub const INIT_STD: f64 = 0.1;

    pub fn new(num_speakers: usize, dim: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "speaker-table-init", 0);
        SpeakerTable {
            embeddings: Matrix::from_fn(num_speakers, dim, |_, _| {
                Self::INIT_STD * rng::normal(&mut r)
            }),
        }
    }

    pub fn row(&self, j: usize) -> &[f64] {
        self.embeddings.row(j)
    }
}

impl Flatten for SpeakerTable {
    fn flatten(&self) -> Vec<f64> {
        self.embeddings.data.clone()
    }

    fn assign(&mut self, flat: &[f64]) {
        self.embeddings.data.copy_from_slice(flat);
    }
}

/// Wire form of the extractor: only the seed and dims are stored.
#[derive(Serialize, Deserialize)]
struct ExtractorSpec {
    seed: u64,
    frame_dim: usize,
    out_dim: usize,
}

/// Fixed seeded linear projection of the mean frame, unit-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ExtractorSpec", into = "ExtractorSpec")]
pub struct ExtractorParams {
    pub seed: u64,
    /// `E_v x F`
    projection: Matrix,
}

impl From<ExtractorSpec> for ExtractorParams {
    fn from(s: ExtractorSpec) -> Self {
        ExtractorParams::new(s.frame_dim, s.out_dim, s.seed)
    }
}

impl From<ExtractorParams> for ExtractorSpec {
    fn from(e: ExtractorParams) -> Self {
        ExtractorSpec {
            seed: e.seed,
            frame_dim: e.projection.cols,
            out_dim: e.projection.rows,
        }
    }
}

impl ExtractorParams {
    pub const DEFAULT_OUT_DIM: usize = 16;

    pub fn new(frame_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "extractor", 0);
        let gain = 1.0 / (frame_dim as f64).sqrt();
        ExtractorParams {
            seed,
            projection: Matrix::from_fn(out_dim, frame_dim, |_, _| gain * rng::normal(&mut r)),
        }
    }

    /// Uses an explicit projection. The seed is kept for provenance only, so
    /// such an extractor does not survive a serialization round trip.
    pub fn with_projection(projection: Matrix, seed: u64) -> Self {
        ExtractorParams { seed, projection }
    }

    pub fn projection(&self) -> &Matrix {
        &self.projection
    }

    pub fn out_dim(&self) -> usize {
        self.projection.rows
    }
}

/// `normalize(P · mean_t frames_t)`.
pub fn extract_speaker_vector(ex: &ExtractorParams, frames: &Matrix) -> Result<Vec<f64>> {
    if frames.rows == 0 {
        return Err(Error::Degenerate("no frames to extract from".into()));
    }
    if frames.cols != ex.projection.cols {
        return Err(Error::Shape(format!(
            "frames have {} features, extractor expects {}",
            frames.cols, ex.projection.cols
        )));
    }
    let mut mean = vec![0.0; frames.cols];
    for t in 0..frames.rows {
        mean.iter_mut()
            .zip(frames.row(t))
            .for_each(|(m, y)| *m += y);
    }
    let inv_t = 1.0 / frames.rows as f64;
    mean.iter_mut().for_each(|m| *m *= inv_t);
    let mut v = ex.projection.matvec(&mean);
    let n = norm(&v);
    if n == 0.0 {
        return Err(Error::Degenerate("projected mean frame is zero".into()));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> Header {
        Header {
            vocab_size: 5,
            frame_dim: 3,
            locales: vec!["us".into(), "gb".into()],
            genders: vec!["f".into(), "m".into()],
            seed: 0,
            truth: None,
        }
    }

    fn meta() -> SpeakerMetadata {
        SpeakerMetadata {
            speaker_id: 0,
            locale: "gb".into(),
            gender: "f".into(),
        }
    }

    fn small() -> SynthParams {
        let cfg = SynthModelConfig {
            token_dim: 3,
            hidden: 4,
            speaker_dim: 2,
            activation: Activation::Tanh,
        };
        SynthParams::new(&cfg, &header(), 1).unwrap()
    }

    #[test]
    fn zero_weights_emit_output_bias() {
        let mut p = small();
        let n = p.weights.flatten().len();
        p.weights.assign(&vec![0.0; n]);
        p.weights.out_b = vec![0.5, -1.0, 2.0];
        let y = synth_forward(&p, &[0, 3, 4], &[1.0, 2.0], &meta()).unwrap();
        for t in 0..3 {
            assert_eq!(y.row(t), &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn deterministic_and_speaker_sensitive() {
        let p = small();
        let a = synth_forward(&p, &[1, 2], &[0.3, -0.2], &meta()).unwrap();
        let b = synth_forward(&p, &[1, 2], &[0.3, -0.2], &meta()).unwrap();
        let c = synth_forward(&p, &[1, 2], &[-0.5, 0.9], &meta()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn out_of_range_token_rejected() {
        let p = small();
        assert!(matches!(
            synth_forward(&p, &[5], &[0.0, 0.0], &meta()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn nll_examples() {
        let p = small();
        let toks = [0, 1];
        let s = [0.1, 0.2];
        let y = synth_forward(&p, &toks, &s, &meta()).unwrap();
        assert_eq!(synth_nll(&p, &y, &toks, &s, &meta()).unwrap(), 0.0);

        let mut z = small();
        let n = z.weights.flatten().len();
        z.weights.assign(&vec![0.0; n]);
        let ones = Matrix::from_vec(2, 3, vec![1.0; 6]).unwrap();
        assert_eq!(synth_nll(&z, &ones, &toks, &s, &meta()).unwrap(), 1.0);

        let bad = Matrix::zeros(3, 3);
        assert!(matches!(
            synth_nll(&p, &bad, &toks, &s, &meta()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn repeating_frames_keeps_mean_loss() {
        let p = small();
        let toks = vec![0, 4, 2];
        let s = [0.4, -0.1];
        let y = Matrix::from_fn(3, 3, |r, c| (r as f64) - 0.5 * c as f64);
        let l1 = synth_nll(&p, &y, &toks, &s, &meta()).unwrap();
        let toks2: Vec<usize> = toks.iter().chain(&toks).copied().collect();
        let y2 = Matrix::from_vec(6, 3, [y.data.clone(), y.data.clone()].concat()).unwrap();
        let l2 = synth_nll(&p, &y2, &toks2, &s, &meta()).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
    }

    #[test]
    fn metadata_enters_only_through_its_block() {
        let mut p = small();
        let e = p.dims.token_dim + p.dims.speaker_dim;
        for h in 0..p.dims.hidden {
            for m in 0..p.dims.meta_dim {
                p.weights.hidden_w.set(h, e + m, 0.0);
            }
        }
        let other = SpeakerMetadata {
            speaker_id: 0,
            locale: "us".into(),
            gender: "m".into(),
        };
        let a = synthesize(&p, &[1, 2], &[0.1, 0.1], &meta()).unwrap();
        let b = synthesize(&p, &[1, 2], &[0.1, 0.1], &other).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn extractor_identity_projection() {
        let ex = ExtractorParams::with_projection(
            Matrix::from_fn(3, 3, |r, c| (r == c) as u8 as f64),
            0,
        );
        let frames = Matrix::from_rows(&[vec![3.0, 4.0, 0.0], vec![3.0, 4.0, 0.0]]).unwrap();
        let v = extract_speaker_vector(&ex, &frames).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15 && v[2] == 0.0);
    }

    #[test]
    fn extractor_scale_and_order_invariant() {
        let ex = ExtractorParams::new(3, 5, 2);
        let f = Matrix::from_rows(&[
            vec![1.0, -2.0, 0.5],
            vec![0.3, 0.1, 2.0],
            vec![-1.0, 1.0, 1.0],
        ])
        .unwrap();
        let v = extract_speaker_vector(&ex, &f).unwrap();
        let scaled = Matrix::from_vec(3, 3, f.data.iter().map(|x| 3.0 * x).collect()).unwrap();
        let perm =
            Matrix::from_rows(&[f.row(2).to_vec(), f.row(0).to_vec(), f.row(1).to_vec()]).unwrap();
        for other in [&scaled, &perm] {
            let w = extract_speaker_vector(&ex, other).unwrap();
            for (a, b) in v.iter().zip(&w) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!((norm(&v) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn extractor_rejects_zero_projection() {
        let ex = ExtractorParams::new(3, 4, 0);
        let zeros = Matrix::zeros(2, 3);
        assert!(matches!(
            extract_speaker_vector(&ex, &zeros),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            extract_speaker_vector(&ex, &Matrix::zeros(0, 3)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn extractor_serializes_seed_and_dims_only() {
        let ex = ExtractorParams::new(16, 8, 42);
        let s = serde_json::to_string(&ex).unwrap();
        assert_eq!(s, r#"{"seed":42,"frame_dim":16,"out_dim":8}"#);
        let back: ExtractorParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, ex);
    }
}
