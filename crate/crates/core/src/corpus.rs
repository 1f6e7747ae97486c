//! Corpus data model, the synthetic oracle generator, on-disk layout and the
//! per-speaker eval split.
//!
//! A corpus directory holds three files:
//!
//! - `header.json`: vocabulary size, frame dimension, label vocabularies, the
//!   generating seed and, for synthetic corpora, the ground-truth block
//! - `speakers.csv`: `speaker_id,locale,gender`
//! - `utterances.jsonl`: one utterance object per line

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;

pub const HEADER_FILE: &str = "header.json";
pub const SPEAKERS_FILE: &str = "speakers.csv";
pub const UTTERANCES_FILE: &str = "utterances.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerMetadata {
    pub speaker_id: usize,
    pub locale: String,
    pub gender: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "UtteranceRecord", try_from = "UtteranceRecord")]
pub struct Utterance {
    pub utt_id: usize,
    pub speaker_id: usize,
    pub tokens: Vec<usize>,
    /// `T x F` feature frames.
    pub frames: Matrix,
}

#[derive(Serialize, Deserialize)]
struct UtteranceRecord {
    utt_id: usize,
    speaker_id: usize,
    tokens: Vec<usize>,
    frames: Vec<Vec<f64>>,
}

impl From<Utterance> for UtteranceRecord {
    fn from(u: Utterance) -> Self {
        UtteranceRecord {
            utt_id: u.utt_id,
            speaker_id: u.speaker_id,
            tokens: u.tokens,
            frames: u.frames.to_rows(),
        }
    }
}

impl TryFrom<UtteranceRecord> for Utterance {
    type Error = Error;

    fn try_from(r: UtteranceRecord) -> Result<Self> {
        Ok(Utterance {
            utt_id: r.utt_id,
            speaker_id: r.speaker_id,
            tokens: r.tokens,
            frames: Matrix::from_rows(&r.frames)?,
        })
    }
}

/// One true generating mixture for a `(locale, gender)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMixture {
    pub locale: String,
    pub gender: String,
    pub weights: Vec<f64>,
    /// `K* x D*`
    pub means: Vec<Vec<f64>>,
    /// `K* x D*` standard deviations.
    pub scales: Vec<Vec<f64>>,
}

/// Ground truth recorded for synthetic corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub latent_dim: usize,
    /// One `D*`-vector per speaker.
    pub speaker_vectors: Vec<Vec<f64>>,
    /// Mixture component each speaker vector was drawn from, within its cell.
    pub speaker_components: Vec<usize>,
    pub cells: Vec<CellMixture>,
    /// `V x E` token embedding `e`.
    pub token_embedding: Matrix,
    /// `F x E` text projection `A`.
    pub text_proj: Matrix,
    /// `F x D*` speaker projection `B`.
    pub speaker_proj: Matrix,
    /// Frame offset `b`.
    pub bias: Vec<f64>,
    pub noise_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub vocab_size: usize,
    pub frame_dim: usize,
    pub locales: Vec<String>,
    pub genders: Vec<String>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Truth>,
}

impl Header {
    pub fn locale_index(&self, label: &str) -> Result<usize> {
        self.locales
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Vocabulary {
                field: "locale",
                label: label.to_string(),
            })
    }

    pub fn gender_index(&self, label: &str) -> Result<usize> {
        self.genders
            .iter()
            .position(|g| g == label)
            .ok_or_else(|| Error::Vocabulary {
                field: "gender",
                label: label.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub header: Header,
    pub speakers: Vec<SpeakerMetadata>,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn num_speakers(&self) -> usize {
        self.speakers.len()
    }

    /// Utterance indices grouped by speaker.
    pub fn utterances_by_speaker(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.speakers.len()];
        for (i, u) in self.utterances.iter().enumerate() {
            by[u.speaker_id].push(i);
        }
        by
    }

    /// Checks every structural invariant of the corpus.
    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.vocab_size == 0 || h.frame_dim == 0 {
            return Err(Error::Validation(
                "vocab_size and frame_dim must be positive".into(),
            ));
        }
        if h.locales.is_empty() || h.genders.is_empty() {
            return Err(Error::Validation(
                "label vocabularies must be non-empty".into(),
            ));
        }
        for (j, s) in self.speakers.iter().enumerate() {
            if s.speaker_id != j {
                return Err(Error::Validation(format!(
                    "speaker ids must be dense and ordered: row {j} has id {}",
                    s.speaker_id
                )));
            }
            h.locale_index(&s.locale)?;
            h.gender_index(&s.gender)?;
        }
        for u in &self.utterances {
            if u.speaker_id >= self.speakers.len() {
                return Err(Error::Validation(format!(
                    "utterance {} references unknown speaker {}",
                    u.utt_id, u.speaker_id
                )));
            }
            if u.frames.rows == 0 {
                return Err(Error::Validation(format!(
                    "utterance {} has no frames",
                    u.utt_id
                )));
            }
            if u.frames.cols != h.frame_dim {
                return Err(Error::Validation(format!(
                    "utterance {} has {} features per frame, expected {}",
                    u.utt_id, u.frames.cols, h.frame_dim
                )));
            }
            if u.frames.rows != u.tokens.len() {
                return Err(Error::Validation(format!(
                    "utterance {} has {} tokens but {} frames",
                    u.utt_id,
                    u.tokens.len(),
                    u.frames.rows
                )));
            }
            if let Some(&t) = u.tokens.iter().find(|&&t| t >= h.vocab_size) {
                return Err(Error::Validation(format!(
                    "utterance {} has token {t} outside vocabulary of {}",
                    u.utt_id, h.vocab_size
                )));
            }
        }
        if let Some(truth) = &h.truth {
            if truth.speaker_vectors.len() != self.speakers.len() {
                return Err(Error::Validation(format!(
                    "truth block has {} speaker vectors for {} speakers",
                    truth.speaker_vectors.len(),
                    self.speakers.len()
                )));
            }
        }
        Ok(())
    }
}

/// Which metadata fields condition the prior, always encoded locale-first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(into = "Vec<Field>", from = "Vec<Field>")]
pub struct Conditioning {
    pub locale: bool,
    pub gender: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Locale,
    Gender,
}

impl Conditioning {
    pub const NONE: Conditioning = Conditioning {
        locale: false,
        gender: false,
    };
    pub const FULL: Conditioning = Conditioning {
        locale: true,
        gender: true,
    };

    pub fn width(&self, header: &Header) -> usize {
        let mut w = 0;
        if self.locale {
            w += header.locales.len();
        }
        if self.gender {
            w += header.genders.len();
        }
        w
    }

    pub fn is_empty(&self) -> bool {
        !self.locale && !self.gender
    }
}

impl From<Vec<Field>> for Conditioning {
    fn from(fields: Vec<Field>) -> Self {
        Conditioning {
            locale: fields.contains(&Field::Locale),
            gender: fields.contains(&Field::Gender),
        }
    }
}

impl From<Conditioning> for Vec<Field> {
    fn from(c: Conditioning) -> Self {
        let mut v = Vec::new();
        if c.locale {
            v.push(Field::Locale);
        }
        if c.gender {
            v.push(Field::Gender);
        }
        v
    }
}

/// Concatenated one-hot blocks for the conditioned fields, locale first.
pub fn one_hot_metadata(
    c: &SpeakerMetadata,
    conditioning: Conditioning,
    header: &Header,
) -> Result<Vec<f64>> {
    let mut v = vec![0.0; conditioning.width(header)];
    let mut offset = 0;
    if conditioning.locale {
        v[header.locale_index(&c.locale)?] = 1.0;
        offset = header.locales.len();
    }
    if conditioning.gender {
        v[offset + header.gender_index(&c.gender)?] = 1.0;
    }
    Ok(v)
}

/// Parameters of the synthetic oracle corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_speakers: usize,
    pub utterances_per_speaker: usize,
    pub vocab_size: usize,
    pub token_len_min: usize,
    pub token_len_max: usize,
    pub frame_dim: usize,
    pub latent_dim: usize,
    /// Width of the hidden token embedding `e`.
    pub token_embed_dim: usize,
    pub locales: Vec<String>,
    pub genders: Vec<String>,
    /// Speaker `j` belongs to `cells[j % cells.len()]`.
    pub cells: Vec<CellMixture>,
    pub noise_scale: f64,
    /// Multiplier on the speaker projection `B`.
    #[serde(default = "one")]
    pub speaker_gain: f64,
    /// Standard deviation of the frame offset `b`.
    #[serde(default = "half")]
    pub bias_scale: f64,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

impl SynthConfig {
    /// Reference oracle: 64 speakers over a 2x2 locale/gender grid, 8-dim
    /// truth, each cell a 4-component mixture, 20 utterances per speaker.
    pub fn reference() -> Self {
        let mut cfg = Self::gridded(64, 20, 8, 4, &["us", "gb"], &["f", "m"], 0x5eed_ce11);
        cfg.noise_scale = 0.1;
        cfg
    }

    /// Every speaker drawn from a single Gaussian in a single cell.
    pub fn homogeneous(
        num_speakers: usize,
        utterances_per_speaker: usize,
        latent_dim: usize,
    ) -> Self {
        let mut cfg = Self::gridded(
            num_speakers,
            utterances_per_speaker,
            latent_dim,
            1,
            &["us"],
            &["f"],
            0,
        );
        cfg.cells[0].means = vec![vec![0.0; latent_dim]];
        cfg
    }

    /// A config over the full `locales x genders` grid. Each cell is a
    /// mixture of `components` Gaussians (scale 0.4) whose means scatter
    /// around a cell-specific centre; `layout_seed` fixes those means.
    pub fn gridded(
        num_speakers: usize,
        utterances_per_speaker: usize,
        latent_dim: usize,
        components: usize,
        locales: &[&str],
        genders: &[&str],
        layout_seed: u64,
    ) -> Self {
        let mut r = rng::stream(layout_seed, "cell-layout", 0);
        let mut cells = Vec::new();
        for l in locales {
            for g in genders {
                let centre: Vec<f64> = rng::normal_vec(&mut r, latent_dim)
                    .into_iter()
                    .map(|x| 1.5 * x)
                    .collect();
                let means = (0..components)
                    .map(|_| {
                        centre
                            .iter()
                            .map(|c| c + 0.8 * rng::normal(&mut r))
                            .collect()
                    })
                    .collect();
                cells.push(CellMixture {
                    locale: l.to_string(),
                    gender: g.to_string(),
                    weights: vec![1.0 / components as f64; components],
                    means,
                    scales: vec![vec![0.4; latent_dim]; components],
                });
            }
        }
        SynthConfig {
            num_speakers,
            utterances_per_speaker,
            vocab_size: 20,
            token_len_min: 4,
            token_len_max: 8,
            frame_dim: 16,
            latent_dim,
            token_embed_dim: 4,
            locales: locales.iter().map(|s| s.to_string()).collect(),
            genders: genders.iter().map(|s| s.to_string()).collect(),
            cells,
            noise_scale: 0.0,
            speaker_gain: 1.0,
            bias_scale: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_speakers == 0 {
            return fail("num_speakers must be positive");
        }
        if self.utterances_per_speaker == 0 {
            return fail("utterances_per_speaker must be positive");
        }
        if self.vocab_size == 0 {
            return fail("vocab_size must be positive");
        }
        if self.frame_dim == 0 {
            return fail("frame_dim must be positive");
        }
        if self.latent_dim == 0 || self.token_embed_dim == 0 {
            return fail("latent_dim and token_embed_dim must be positive");
        }
        if self.token_len_min == 0 || self.token_len_min > self.token_len_max {
            return fail("token length range must satisfy 1 <= min <= max");
        }
        if self.locales.is_empty() || self.genders.is_empty() {
            return fail("locale and gender vocabularies must be non-empty");
        }
        if self.cells.is_empty() {
            return fail("at least one cell mixture is required");
        }
        if !(self.noise_scale >= 0.0) {
            return fail("noise_scale must be non-negative");
        }
        for cell in &self.cells {
            if !self.locales.contains(&cell.locale) || !self.genders.contains(&cell.gender) {
                return Err(Error::Config(format!(
                    "cell ({}, {}) uses labels outside the vocabularies",
                    cell.locale, cell.gender
                )));
            }
            let k = cell.weights.len();
            if k == 0 || cell.means.len() != k || cell.scales.len() != k {
                return fail(
                    "cell mixture weights, means and scales must have equal, non-zero length",
                );
            }
            if cell.weights.iter().any(|&w| w < 0.0)
                || (cell.weights.iter().sum::<f64>() - 1.0).abs() > 1e-6
            {
                return fail("cell mixture weights must be non-negative and sum to 1");
            }
            let dims_ok = cell
                .means
                .iter()
                .chain(&cell.scales)
                .all(|v| v.len() == self.latent_dim);
            if !dims_ok {
                return fail("cell mixture means and scales must have latent_dim entries");
            }
            if cell.scales.iter().flatten().any(|&s| !(s >= 0.0)) {
                return fail("cell mixture scales must be non-negative");
            }
        }
        Ok(())
    }
}

/// Draws a corpus from the affine-plus-Laplace oracle. Pure in `(cfg, seed)`.
pub fn generate_synthetic_corpus(cfg: &SynthConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let (v, e, f, d) = (
        cfg.vocab_size,
        cfg.token_embed_dim,
        cfg.frame_dim,
        cfg.latent_dim,
    );

    let mut r = rng::stream(seed, "generator", 0);
    let token_embedding = Matrix::from_fn(v, e, |_, _| rng::normal(&mut r));
    let text_scale = 1.0 / (e as f64).sqrt();
    let text_proj = Matrix::from_fn(f, e, |_, _| text_scale * rng::normal(&mut r));
    let speaker_scale = cfg.speaker_gain / (d as f64).sqrt();
    let speaker_proj = Matrix::from_fn(f, d, |_, _| speaker_scale * rng::normal(&mut r));
    let bias: Vec<f64> = (0..f)
        .map(|_| cfg.bias_scale * rng::normal(&mut r))
        .collect();

    let mut r = rng::stream(seed, "truth", 0);
    let mut speakers = Vec::with_capacity(cfg.num_speakers);
    let mut speaker_vectors = Vec::with_capacity(cfg.num_speakers);
    let mut speaker_components = Vec::with_capacity(cfg.num_speakers);
    for j in 0..cfg.num_speakers {
        let cell = &cfg.cells[j % cfg.cells.len()];
        let k = rng::categorical(&mut r, &cell.weights);
        let z: Vec<f64> = cell.means[k]
            .iter()
            .zip(&cell.scales[k])
            .map(|(m, s)| m + s * rng::normal(&mut r))
            .collect();
        speakers.push(SpeakerMetadata {
            speaker_id: j,
            locale: cell.locale.clone(),
            gender: cell.gender.clone(),
        });
        speaker_vectors.push(z);
        speaker_components.push(k);
    }

    let mut r = rng::stream(seed, "utterances", 0);
    let mut utterances = Vec::with_capacity(cfg.num_speakers * cfg.utterances_per_speaker);
    let mut text = vec![0.0; f];
    for (j, z) in speaker_vectors.iter().enumerate() {
        let speaker_part = speaker_proj.matvec(z);
        for _ in 0..cfg.utterances_per_speaker {
            use rand::Rng;
            let len = r.random_range(cfg.token_len_min..=cfg.token_len_max);
            let tokens: Vec<usize> = (0..len).map(|_| r.random_range(0..v)).collect();
            let mut frames = Matrix::zeros(len, f);
            for (t, &tok) in tokens.iter().enumerate() {
                text_proj.matvec_into(token_embedding.row(tok), &mut text);
                for (c, y) in frames.row_mut(t).iter_mut().enumerate() {
                    *y =
                        text[c] + speaker_part[c] + bias[c] + rng::laplace(&mut r, cfg.noise_scale);
                }
            }
            utterances.push(Utterance {
                utt_id: utterances.len(),
                speaker_id: j,
                tokens,
                frames,
            });
        }
    }

    Ok(Corpus {
        header: Header {
            vocab_size: v,
            frame_dim: f,
            locales: cfg.locales.clone(),
            genders: cfg.genders.clone(),
            seed,
            truth: Some(Truth {
                latent_dim: d,
                speaker_vectors,
                speaker_components,
                cells: cfg.cells.clone(),
                token_embedding,
                text_proj,
                speaker_proj,
                bias,
                noise_scale: cfg.noise_scale,
            }),
        },
        speakers,
        utterances,
    })
}

/// Per-speaker stratified split into `(train, eval)`.
///
/// Each speaker contributes `max(1, round(fraction * n_j))` utterances to the
/// eval side and must keep at least one on the train side.
pub fn split_eval(corpus: &Corpus, fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Split(format!(
            "fraction {fraction} is not in (0, 1)"
        )));
    }
    let mut is_eval = vec![false; corpus.utterances.len()];
    for (j, idx) in corpus.utterances_by_speaker().into_iter().enumerate() {
        let n = idx.len();
        if n < 2 {
            return Err(Error::Split(format!(
                "speaker {j} has {n} utterances, need at least 2"
            )));
        }
        let n_eval = ((fraction * n as f64).round() as usize).max(1);
        if n_eval >= n {
            return Err(Error::Split(format!(
                "fraction {fraction} leaves speaker {j} with no training utterances"
            )));
        }
        let mut order = idx;
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng::stream(seed, "split", j as u64));
        for &i in &order[..n_eval] {
            is_eval[i] = true;
        }
    }
    let pick = |want_eval: bool| Corpus {
        header: corpus.header.clone(),
        speakers: corpus.speakers.clone(),
        utterances: corpus
            .utterances
            .iter()
            .zip(&is_eval)
            .filter(|(_, &e)| e == want_eval)
            .map(|(u, _)| u.clone())
            .collect(),
    };
    Ok((pick(false), pick(true)))
}

pub fn save_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let header_path = dir.join(HEADER_FILE);
    let mut header = serde_json::to_string_pretty(&corpus.header)?;
    header.push('\n');
    fs::write(&header_path, header).map_err(|e| Error::io(&header_path, e))?;

    let speakers_path = dir.join(SPEAKERS_FILE);
    let mut w =
        csv::Writer::from_path(&speakers_path).map_err(|e| Error::io(&speakers_path, e.into()))?;
    for s in &corpus.speakers {
        w.serialize(s)
            .map_err(|e| Error::io(&speakers_path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(&speakers_path, e))?;

    let utt_path = dir.join(UTTERANCES_FILE);
    let file = fs::File::create(&utt_path).map_err(|e| Error::io(&utt_path, e))?;
    let mut w = BufWriter::new(file);
    for u in &corpus.utterances {
        serde_json::to_writer(&mut w, u)?;
        w.write_all(b"\n").map_err(|e| Error::io(&utt_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&utt_path, e))?;
    Ok(())
}

pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();

    let header_path = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&header_path).map_err(|e| Error::Parse {
        file: HEADER_FILE.into(),
        line: 0,
        msg: format!("cannot read header: {e}"),
    })?;
    let header: Header = serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: HEADER_FILE.into(),
        line: e.line(),
        msg: e.to_string(),
    })?;

    let speakers_path = dir.join(SPEAKERS_FILE);
    let mut rdr = csv::Reader::from_path(&speakers_path).map_err(|e| Error::Parse {
        file: SPEAKERS_FILE.into(),
        line: 0,
        msg: e.to_string(),
    })?;
    let mut speakers = Vec::new();
    for rec in rdr.deserialize::<SpeakerMetadata>() {
        let s = rec.map_err(|e| Error::Parse {
            file: SPEAKERS_FILE.into(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        speakers.push(s);
    }

    let utt_path = dir.join(UTTERANCES_FILE);
    let file = fs::File::open(&utt_path).map_err(|e| Error::Parse {
        file: UTTERANCES_FILE.into(),
        line: 0,
        msg: e.to_string(),
    })?;
    let mut utterances = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&utt_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let u: Utterance = serde_json::from_str(&line).map_err(|e| Error::Parse {
            file: UTTERANCES_FILE.into(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        utterances.push(u);
    }

    let corpus = Corpus {
        header,
        speakers,
        utterances,
    };
    corpus.validate()?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig::gridded(4, 3, 2, 2, &["us", "gb"], &["f", "m"], 1)
    }

    fn header2x2() -> Header {
        Header {
            vocab_size: 3,
            frame_dim: 2,
            locales: vec!["us".into(), "gb".into()],
            genders: vec!["f".into(), "m".into()],
            seed: 0,
            truth: None,
        }
    }

    fn meta(locale: &str, gender: &str) -> SpeakerMetadata {
        SpeakerMetadata {
            speaker_id: 0,
            locale: locale.into(),
            gender: gender.into(),
        }
    }

    #[test]
    fn counts_follow_config() {
        let c = generate_synthetic_corpus(&small_cfg(), 3).unwrap();
        assert_eq!(c.speakers.len(), 4);
        assert_eq!(c.utterances.len(), 12);
        c.validate().unwrap();
    }

    #[test]
    fn noiseless_frames_depend_only_on_tokens_and_speaker() {
        let mut cfg = small_cfg();
        cfg.noise_scale = 0.0;
        cfg.token_len_min = 1;
        cfg.token_len_max = 1;
        cfg.vocab_size = 1;
        let c = generate_synthetic_corpus(&cfg, 9).unwrap();
        let a = &c.utterances[0];
        let b = &c.utterances[1];
        assert_eq!(a.speaker_id, b.speaker_id);
        assert_eq!(a.tokens, b.tokens);
        assert_eq!(a.frames, b.frames);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small_cfg();
        cfg.num_speakers = 0;
        assert!(matches!(
            generate_synthetic_corpus(&cfg, 0),
            Err(Error::Config(_))
        ));
        let mut cfg = small_cfg();
        cfg.frame_dim = 0;
        assert!(matches!(
            generate_synthetic_corpus(&cfg, 0),
            Err(Error::Config(_))
        ));
        let mut cfg = small_cfg();
        cfg.locales.clear();
        assert!(matches!(
            generate_synthetic_corpus(&cfg, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn one_hot_examples() {
        let h = header2x2();
        assert_eq!(
            one_hot_metadata(&meta("us", "f"), Conditioning::FULL, &h).unwrap(),
            vec![1.0, 0.0, 1.0, 0.0]
        );
        assert!(one_hot_metadata(&meta("us", "f"), Conditioning::NONE, &h)
            .unwrap()
            .is_empty());
        let gender_only = Conditioning {
            locale: false,
            gender: true,
        };
        assert_eq!(
            one_hot_metadata(&meta("gb", "m"), gender_only, &h).unwrap(),
            vec![0.0, 1.0]
        );
        assert!(matches!(
            one_hot_metadata(&meta("au", "m"), Conditioning::FULL, &h),
            Err(Error::Vocabulary {
                field: "locale",
                ..
            })
        ));
    }

    #[test]
    fn conditioning_serializes_as_field_list() {
        let s = serde_json::to_string(&Conditioning::FULL).unwrap();
        assert_eq!(s, r#"["locale","gender"]"#);
        let c: Conditioning = serde_json::from_str(r#"["gender"]"#).unwrap();
        assert!(!c.locale && c.gender);
    }

    #[test]
    fn split_two_utterances_half() {
        let mut cfg = small_cfg();
        cfg.utterances_per_speaker = 2;
        let c = generate_synthetic_corpus(&cfg, 0).unwrap();
        let (train, eval) = split_eval(&c, 0.5, 11).unwrap();
        for by in [train.utterances_by_speaker(), eval.utterances_by_speaker()] {
            assert!(by.iter().all(|v| v.len() == 1));
        }
    }

    #[test]
    fn split_counts_and_determinism() {
        let mut cfg = SynthConfig::homogeneous(10, 10, 2);
        cfg.noise_scale = 0.1;
        let c = generate_synthetic_corpus(&cfg, 0).unwrap();
        let (train, eval) = split_eval(&c, 0.2, 5).unwrap();
        assert_eq!(eval.utterances.len(), 20);
        assert!(eval.utterances_by_speaker().iter().all(|v| v.len() == 2));
        assert_eq!(train.utterances.len() + eval.utterances.len(), 100);
        let again = split_eval(&c, 0.2, 5).unwrap();
        assert_eq!(again.0, train);
        assert_eq!(again.1, eval);
    }

    #[test]
    fn split_rejects_single_utterance_speaker() {
        let mut cfg = small_cfg();
        cfg.utterances_per_speaker = 1;
        let c = generate_synthetic_corpus(&cfg, 0).unwrap();
        assert!(matches!(split_eval(&c, 0.5, 0), Err(Error::Split(_))));
    }

    #[test]
    fn split_rejects_fraction_that_empties_train() {
        let mut cfg = small_cfg();
        cfg.utterances_per_speaker = 2;
        let c = generate_synthetic_corpus(&cfg, 0).unwrap();
        assert!(matches!(split_eval(&c, 0.9, 0), Err(Error::Split(_))));
    }

    #[test]
    fn roundtrip_on_disk() {
        let mut cfg = small_cfg();
        cfg.noise_scale = 0.3;
        let c = generate_synthetic_corpus(&cfg, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&c, dir.path()).unwrap();
        assert_eq!(load_corpus(dir.path()).unwrap(), c);
    }

    #[test]
    fn missing_header_is_a_parse_error() {
        let c = generate_synthetic_corpus(&small_cfg(), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&c, dir.path()).unwrap();
        fs::remove_file(dir.path().join(HEADER_FILE)).unwrap();
        assert!(matches!(
            load_corpus(dir.path()),
            Err(Error::Parse { ref file, .. }) if file == HEADER_FILE
        ));
    }

    #[test]
    fn malformed_utterance_reports_line() {
        let c = generate_synthetic_corpus(&small_cfg(), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&c, dir.path()).unwrap();
        let path = dir.path().join(UTTERANCES_FILE);
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("{not json}\n");
        fs::write(&path, text).unwrap();
        match load_corpus(dir.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 13),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_speaker_reference_fails_validation() {
        let mut c = generate_synthetic_corpus(&small_cfg(), 2).unwrap();
        c.utterances[0].speaker_id = 99;
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&c, dir.path()).unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(Error::Validation(_))));
    }
}
