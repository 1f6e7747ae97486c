//! Speaker fidelity and generation metrics.
//!
//! Every utterance is mapped to a unit speaker vector by the extractor and
//! each speaker's vectors are averaged. Three tables come out of a model:
//! `t` (ground truth), `s` (training speakers re-synthesized) and `g` (one
//! prior sample per training speaker, with that speaker's metadata). All
//! distances are cosine distances, summarised by medians.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::linalg::{dot, median, Matrix};
use crate::prior::PriorConfig;
use crate::rng;
use crate::synth::SynthModelConfig;
use crate::synth::{extract_speaker_vector, ExtractorParams};
use crate::train::{Objective, TrainSettings, TrainerState};

/// `1 - cos(a, b)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (aa, bb) = (dot(a, a), dot(b, b));
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::Degenerate("cosine distance of a zero vector".into()));
    }
    // One square root keeps d(a, a) = 0 and d(a, -a) = 2 exact.
    Ok((1.0 - dot(a, b) / (aa * bb).sqrt()).clamp(0.0, 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorKind {
    T,
    S,
    G,
}

impl VectorKind {
    pub fn label(self) -> &'static str {
        match self {
            VectorKind::T => "t",
            VectorKind::S => "s",
            VectorKind::G => "g",
        }
    }
}

/// One averaged speaker vector per speaker, rows in speaker order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerVectorTable {
    pub kind: VectorKind,
    pub vectors: Matrix,
}

/// Averages `vectors[i]` into row `owner[i]`, un-normalized.
fn average_by_speaker(
    num_speakers: usize,
    owner: &[usize],
    vectors: &[Vec<f64>],
    dim: usize,
) -> Result<Matrix> {
    let mut sums = Matrix::zeros(num_speakers, dim);
    let mut counts = vec![0usize; num_speakers];
    for (&j, v) in owner.iter().zip(vectors) {
        sums.row_mut(j).iter_mut().zip(v).for_each(|(s, x)| *s += x);
        counts[j] += 1;
    }
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Coverage(format!(
            "speaker {j} has no evaluation utterances"
        )));
    }
    for (j, &c) in counts.iter().enumerate() {
        let inv = 1.0 / c as f64;
        sums.row_mut(j).iter_mut().for_each(|s| *s *= inv);
    }
    Ok(sums)
}

/// Builds the `kind` table for `corpus_eval`. `model` is required for kinds
/// `s` and `g`; `seed` picks the posterior draw (VB) and the prior samples.
pub fn speaker_level_vectors(
    kind: VectorKind,
    corpus_eval: &Corpus,
    model: Option<&TrainerState>,
    extractor: &ExtractorParams,
    seed: u64,
) -> Result<SpeakerVectorTable> {
    let j = corpus_eval.num_speakers();
    let owner: Vec<usize> = corpus_eval
        .utterances
        .iter()
        .map(|u| u.speaker_id)
        .collect();
    let vectors: Vec<Vec<f64>> = match kind {
        VectorKind::T => corpus_eval
            .utterances
            .iter()
            .map(|u| extract_speaker_vector(extractor, &u.frames))
            .collect::<Result<_>>()?,
        VectorKind::S | VectorKind::G => {
            let m = model.ok_or_else(|| {
                Error::Argument(format!("kind {} needs a trained model", kind.label()))
            })?;
            let embeddings = match kind {
                VectorKind::S => m.eval_embeddings(seed),
                _ => generated_embeddings(m, corpus_eval, seed)?,
            };
            if embeddings.rows != j {
                return Err(Error::Shape(format!(
                    "model has {} speakers, evaluation corpus has {j}",
                    embeddings.rows
                )));
            }
            let meta: Vec<Vec<f64>> = corpus_eval
                .speakers
                .iter()
                .map(|c| m.synth.encode(c))
                .collect::<Result<_>>()?;
            corpus_eval
                .utterances
                .iter()
                .map(|u| {
                    let s = embeddings.row(u.speaker_id);
                    let frames = m.synth.forward_encoded(&u.tokens, s, &meta[u.speaker_id])?;
                    extract_speaker_vector(extractor, &frames)
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(SpeakerVectorTable {
        kind,
        vectors: average_by_speaker(j, &owner, &vectors, extractor.out_dim())?,
    })
}

/// One prior sample (temperature 1) per speaker, conditioned on its metadata.
fn generated_embeddings(m: &TrainerState, corpus: &Corpus, seed: u64) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = corpus
        .speakers
        .iter()
        .enumerate()
        .map(|(j, c)| {
            m.prior
                .sample(c, 1.0, &mut rng::stream(seed, "generate", j as u64))
        })
        .collect::<Result<_>>()?;
    Matrix::from_rows(&rows)
}

fn check_pair(a: &Matrix, b: &Matrix, min_rows: usize) -> Result<()> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(Error::Shape(format!(
            "tables are {}x{} and {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    if a.rows < min_rows {
        return Err(Error::Argument(format!(
            "need at least {min_rows} rows, got {}",
            a.rows
        )));
    }
    Ok(())
}

/// `median_j min_k d(A_j, B_k)`, skipping `k = j` when `exclude_same_index`.
pub fn median_min_distance(a: &Matrix, b: &Matrix, exclude_same_index: bool) -> Result<f64> {
    check_pair(a, b, 2)?;
    let mut mins = Vec::with_capacity(a.rows);
    for j in 0..a.rows {
        let mut best = f64::INFINITY;
        for k in 0..b.rows {
            if exclude_same_index && k == j {
                continue;
            }
            best = best.min(cosine_distance(a.row(j), b.row(k))?);
        }
        mins.push(best);
    }
    Ok(median(&mins))
}

/// `median_j d(A_j, B_j)`.
pub fn median_same_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    check_pair(a, b, 1)?;
    let d = (0..a.rows)
        .map(|j| cosine_distance(a.row(j), b.row(j)))
        .collect::<Result<Vec<_>>>()?;
    Ok(median(&d))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "s2t-same")]
    pub s2t_same: f64,
    pub s2t: f64,
    pub s2s: f64,
    pub g2s: f64,
    pub g2g: f64,
    pub num_speakers: usize,
    pub seed: u64,
    pub config_digest: String,
}

impl EvalReport {
    pub const COLUMNS: [&'static str; 5] = ["s2t-same", "s2t", "s2s", "g2s", "g2g"];

    pub fn values(&self) -> [f64; 5] {
        [self.s2t_same, self.s2t, self.s2s, self.g2s, self.g2g]
    }

    /// Header line and value line, columns in the usual order.
    pub fn table(&self) -> String {
        let head: Vec<String> = Self::COLUMNS.iter().map(|c| format!("{c:>8}")).collect();
        let vals: Vec<String> = self.values().iter().map(|v| format!("{v:>8.4}")).collect();
        format!("{}\n{}\n", head.join(" "), vals.join(" "))
    }
}

/// The three tables behind a report.
pub struct EvalTables {
    pub t: SpeakerVectorTable,
    pub s: SpeakerVectorTable,
    pub g: SpeakerVectorTable,
}

pub fn eval_tables(
    corpus_eval: &Corpus,
    model: &TrainerState,
    extractor: &ExtractorParams,
    seed: u64,
) -> Result<EvalTables> {
    Ok(EvalTables {
        t: speaker_level_vectors(VectorKind::T, corpus_eval, None, extractor, seed)?,
        s: speaker_level_vectors(VectorKind::S, corpus_eval, Some(model), extractor, seed)?,
        g: speaker_level_vectors(VectorKind::G, corpus_eval, Some(model), extractor, seed)?,
    })
}

pub fn report_from_tables(
    tables: &EvalTables,
    seed: u64,
    config_digest: &str,
) -> Result<EvalReport> {
    let (t, s, g) = (&tables.t.vectors, &tables.s.vectors, &tables.g.vectors);
    Ok(EvalReport {
        s2t_same: median_same_distance(s, t)?,
        s2t: median_min_distance(s, t, true)?,
        s2s: median_min_distance(s, s, true)?,
        g2s: median_min_distance(g, s, true)?,
        g2g: median_min_distance(g, g, true)?,
        num_speakers: t.rows,
        seed,
        config_digest: config_digest.to_string(),
    })
}

pub fn eval_report(
    corpus_eval: &Corpus,
    model: &TrainerState,
    extractor: &ExtractorParams,
    seed: u64,
    config_digest: &str,
) -> Result<EvalReport> {
    report_from_tables(
        &eval_tables(corpus_eval, model, extractor, seed)?,
        seed,
        config_digest,
    )
}

/// Full pairwise cosine distances across the stacked tables, labelled
/// `kind:index`.
pub fn distance_matrix(tables: &[&SpeakerVectorTable]) -> Result<(Vec<String>, Matrix)> {
    let mut labels = Vec::new();
    let mut rows: Vec<&[f64]> = Vec::new();
    for t in tables {
        for j in 0..t.vectors.rows {
            labels.push(format!("{}:{j}", t.kind.label()));
            rows.push(t.vectors.row(j));
        }
    }
    let n = rows.len();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for k in i + 1..n {
            let d = cosine_distance(rows[i], rows[k])?;
            m.set(i, k, d);
            m.set(k, i, d);
        }
    }
    Ok((labels, m))
}

/// Writes [`distance_matrix`] as CSV: a header row of labels, then one row
/// per vector led by its label.
pub fn export_distance_matrix<W: Write>(tables: &[&SpeakerVectorTable], out: W) -> Result<()> {
    let (labels, m) = distance_matrix(tables)?;
    let io = |e: csv::Error| Error::io("distance matrix", e.into());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![String::new()];
    header.extend(labels.iter().cloned());
    w.write_record(&header).map_err(io)?;
    for (i, label) in labels.iter().enumerate() {
        let mut rec = vec![label.clone()];
        rec.extend(m.row(i).iter().map(|d| d.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io("distance matrix", e))?;
    Ok(())
}

/// Mean prior log-probability of the two speaker halves at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub step: u64,
    pub train_half_logprob: f64,
    pub eval_half_logprob: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    pub synth: SynthModelConfig,
    pub prior: PriorConfig,
    pub train: TrainSettings,
    /// Steps between probe records; 0 records only the final step.
    pub record_every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub train_half: Vec<usize>,
    pub eval_half: Vec<usize>,
    pub records: Vec<ProbeRecord>,
}

/// Trains a TacoSpawn model whose prior only sees a random half of the
/// speakers (all speakers still get embeddings), and tracks the mean prior
/// log-probability of each half's learned embeddings.
pub fn prior_generalization_probe(
    corpus: &Corpus,
    settings: &ProbeSettings,
    seed: u64,
) -> Result<ProbeResult> {
    let j = corpus.num_speakers();
    if j < 4 {
        return Err(Error::Argument(format!(
            "probe needs at least 4 speakers, got {j}"
        )));
    }
    let mut order: Vec<usize> = (0..j).collect();
    rand::seq::SliceRandom::shuffle(
        order.as_mut_slice(),
        &mut rng::stream(seed, "probe-split", 0),
    );
    let mut train_half = order[..j / 2].to_vec();
    let mut eval_half = order[j / 2..].to_vec();
    train_half.sort_unstable();
    eval_half.sort_unstable();

    let mut state = TrainerState::new(
        Objective::Tacospawn,
        &settings.synth,
        &settings.prior,
        &settings.train,
        None,
        corpus,
    )?;
    state.prior_speakers = Some(train_half.clone());
    let data = state.data(corpus)?;
    let inputs: Vec<Vec<f64>> = corpus
        .speakers
        .iter()
        .map(|c| state.prior.encode(c))
        .collect::<Result<_>>()?;

    let half_mean = |st: &TrainerState, half: &[usize]| -> Result<f64> {
        let table = st.eval_embeddings(seed);
        let mut total = 0.0;
        for &k in half {
            total += st
                .prior
                .log_prob_with_grad(&inputs[k], table.row(k), 0.0, None, None)?;
        }
        Ok(total / half.len() as f64)
    };
    let total_steps = settings.train.steps;
    let mut records = Vec::new();
    let mut record = |st: &TrainerState| -> Result<()> {
        let a = half_mean(st, &train_half)?;
        let b = half_mean(st, &eval_half)?;
        records.push(ProbeRecord {
            step: st.step,
            train_half_logprob: a,
            eval_half_logprob: b,
            gap: a - b,
        });
        Ok(())
    };
    state.run_until(&data, total_steps, |r, st| {
        if settings.record_every > 0 && r.step % settings.record_every == 0 && r.step != total_steps
        {
            record(st)?;
        }
        Ok(())
    })?;
    record(&state)?;
    Ok(ProbeResult {
        train_half,
        eval_half,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(deg: f64) -> Vec<f64> {
        let r = deg.to_radians();
        vec![r.cos(), r.sin()]
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_distance(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 2.0);
        assert!(matches!(
            cosine_distance(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn median_min_right_angles() {
        let a = Matrix::from_rows(&[unit(0.0), unit(90.0), unit(180.0)]).unwrap();
        assert!((median_min_distance(&a, &a, true).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(median_min_distance(&a, &a, false).unwrap(), 0.0);
    }

    #[test]
    fn median_min_sixty_degrees() {
        let a = Matrix::from_rows(&[unit(0.0), unit(60.0), unit(90.0)]).unwrap();
        let want = 1.0 - 30f64.to_radians().cos();
        assert!((median_min_distance(&a, &a, true).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn median_same_opposites() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
        let mut b = a.clone();
        b.data.iter_mut().for_each(|x| *x = -*x);
        assert_eq!(median_same_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(median_same_distance(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn row_mismatch_rejected() {
        let a = Matrix::zeros(3, 2);
        let b = Matrix::zeros(4, 2);
        assert!(median_min_distance(&a, &b, true).is_err());
        assert!(median_same_distance(&a, &b).is_err());
    }

    #[test]
    fn averages_are_unnormalized() {
        let m = average_by_speaker(1, &[0, 0], &[vec![1.0, 0.0], vec![0.0, 1.0]], 2).unwrap();
        assert_eq!(m.row(0), &[0.5, 0.5]);
        assert!(matches!(
            average_by_speaker(2, &[0], &[vec![1.0]], 1),
            Err(Error::Coverage(_))
        ));
    }

    #[test]
    fn distance_matrix_shape_and_symmetry() {
        let s = SpeakerVectorTable {
            kind: VectorKind::S,
            vectors: Matrix::from_rows(&[vec![1.0, 0.2], vec![0.1, 1.0], vec![-1.0, 0.3]]).unwrap(),
        };
        let g = SpeakerVectorTable {
            kind: VectorKind::G,
            vectors: Matrix::from_rows(&[vec![0.5, 0.5], vec![0.3, -1.0]]).unwrap(),
        };
        let (labels, m) = distance_matrix(&[&s, &g]).unwrap();
        assert_eq!(labels, ["s:0", "s:1", "s:2", "g:0", "g:1"]);
        assert_eq!(m.data.len(), 25);
        for i in 0..5 {
            assert_eq!(m.get(i, i), 0.0);
            for k in 0..5 {
                assert!((m.get(i, k) - m.get(k, i)).abs() <= 1e-12);
            }
        }
        let mut buf = Vec::new();
        export_distance_matrix(&[&s, &g], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(",s:0,s:1,s:2,g:0,g:1\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
