//! Fixtures and independent reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

use spawnlab::corpus::{generate_synthetic_corpus, Conditioning, Corpus, Header, SynthConfig};
use spawnlab::linalg::{softplus_inv, Flatten, Matrix};
use spawnlab::prior::{prior_nll_loss, PriorConfig, PriorNet};
use spawnlab::rng;
use spawnlab::synth::{SpeakerTable, SynthModelConfig, SynthParams};
use spawnlab::train::gradcheck::grad_check;
use spawnlab::train::{vb_objective, PosteriorTable, TrainData, VbNoise};

pub const GRAD_TOL: f64 = 1e-4;
/// Step for losses with ℓ1 kinks; kept small so a step rarely crosses one.
pub const FD_EPS: f64 = 1e-6;
/// Step for smooth losses.
pub const FD_EPS_SMOOTH: f64 = 1e-5;

/// A few speakers with short utterances in a 3-dim frame space.
pub fn tiny_corpus(seed: u64) -> Corpus {
    let mut cfg = SynthConfig::gridded(4, 3, 2, 2, &["us", "gb"], &["f", "m"], seed);
    cfg.vocab_size = 5;
    cfg.token_len_min = 2;
    cfg.token_len_max = 3;
    cfg.frame_dim = 3;
    cfg.token_embed_dim = 2;
    cfg.noise_scale = 0.3;
    generate_synthetic_corpus(&cfg, seed).unwrap()
}

pub fn tiny_synth_config() -> SynthModelConfig {
    SynthModelConfig {
        token_dim: 3,
        hidden: 4,
        speaker_dim: 2,
        ..SynthModelConfig::default()
    }
}

pub fn tiny_prior_config() -> PriorConfig {
    PriorConfig {
        components: 2,
        hidden: 3,
        ..PriorConfig::default()
    }
}

/// Overwrites every prior weight with a seeded draw so no head is trivial.
pub fn randomize_prior(net: &mut PriorNet, seed: u64) {
    let mut r = rng::stream(seed, "test-prior", 0);
    let flat: Vec<f64> = (0..net.weights.num_params())
        .map(|_| 0.5 * rng::normal(&mut r))
        .collect();
    net.weights.assign(&flat);
}

/// An unconditional prior whose output is exactly the given mixture.
pub fn fixed_mixture(weights: &[f64], means: &[Vec<f64>], scales: &[Vec<f64>]) -> PriorNet {
    let k = weights.len();
    let d = means[0].len();
    let cfg = PriorConfig {
        components: k,
        conditioning: Conditioning::NONE,
        ..PriorConfig::default()
    };
    let header = Header {
        vocab_size: 1,
        frame_dim: 1,
        locales: vec!["us".into()],
        genders: vec!["f".into()],
        seed: 0,
        truth: None,
    };
    let mut net = PriorNet::new(&cfg, d, &header, 0).unwrap();
    let floor = net.sigma_floor;
    for i in 0..k {
        net.weights.logits_b[i] = weights[i].ln();
        for j in 0..d {
            net.weights.means_b[i * d + j] = means[i][j];
            net.weights.scales_b[i * d + j] = softplus_inv(scales[i][j] - floor);
        }
    }
    net
}

/// Max relative finite-difference error of `synth_nll` over θ and `s`.
pub fn synth_grad_error(seed: u64) -> f64 {
    let corpus = tiny_corpus(seed);
    let synth = SynthParams::new(&tiny_synth_config(), &corpus.header, seed).unwrap();
    let u = &corpus.utterances[seed as usize % corpus.utterances.len()];
    let meta = synth.encode(&corpus.speakers[u.speaker_id]).unwrap();
    let s0 = rng::normal_vec(&mut rng::stream(seed, "test-s", 0), 2);

    let theta = synth.weights.flatten();
    let err_theta = grad_check(
        |p| {
            let mut m = synth.clone();
            m.weights.assign(p);
            let mut g = spawnlab::synth::SynthWeights::zeros(&m.dims);
            let l = m
                .nll_with_grad(&u.frames, &u.tokens, &s0, &meta, 1.0, Some(&mut g), None)
                .unwrap();
            (l, g.flatten())
        },
        &theta,
        FD_EPS,
    );
    let err_s = grad_check(
        |s| {
            let mut g = vec![0.0; s.len()];
            let l = synth
                .nll_with_grad(&u.frames, &u.tokens, s, &meta, 1.0, None, Some(&mut g))
                .unwrap();
            (l, g)
        },
        &s0,
        FD_EPS,
    );
    err_theta.max(err_s)
}

/// Max relative finite-difference error of `prior_nll_loss` over ω.
pub fn prior_grad_error(seed: u64) -> f64 {
    let corpus = tiny_corpus(seed);
    let mut net = PriorNet::new(&tiny_prior_config(), 2, &corpus.header, seed).unwrap();
    randomize_prior(&mut net, seed);
    let table = SpeakerTable::new(corpus.num_speakers(), 2, seed + 100).embeddings;
    let omega = net.weights.flatten();
    grad_check(
        |p| {
            let mut n = net.clone();
            n.weights.assign(p);
            let (l, g) = prior_nll_loss(&n, &table, &corpus.speakers).unwrap();
            (l, g.flatten())
        },
        &omega,
        FD_EPS_SMOOTH,
    )
}

/// Max relative finite-difference errors of the VB objective over θ, ν and ω
/// at fixed noise.
pub fn vb_grad_errors(seed: u64) -> [f64; 3] {
    let corpus = tiny_corpus(seed);
    let synth = SynthParams::new(&tiny_synth_config(), &corpus.header, seed).unwrap();
    let mut prior = PriorNet::new(&tiny_prior_config(), 2, &corpus.header, seed).unwrap();
    randomize_prior(&mut prior, seed);
    let mut post = PosteriorTable::new(corpus.num_speakers(), 2, 0.4, seed).unwrap();
    let mut r = rng::stream(seed, "test-rho", 0);
    post.rho
        .data
        .iter_mut()
        .for_each(|x| *x += 0.3 * rng::normal(&mut r));
    let data = TrainData::new(&corpus, &synth, &prior).unwrap();
    let batch: Vec<usize> = (0..5)
        .map(|i| (seed as usize * 7 + i * 3) % corpus.utterances.len())
        .collect();
    let noise = VbNoise { seed, step: 3 };
    let beta = 0.7;
    let eval = |sy: &SynthParams, po: &PosteriorTable, pr: &PriorNet| {
        let (l, g) = vb_objective(sy, po, pr, beta, &data, &batch, noise).unwrap();
        (l.total, g)
    };

    let e_theta = grad_check(
        |p| {
            let mut s = synth.clone();
            s.weights.assign(p);
            let (l, g) = eval(&s, &post, &prior);
            (l, g.synth.flatten())
        },
        &synth.weights.flatten(),
        FD_EPS,
    );
    let e_nu = grad_check(
        |p| {
            let mut q = post.clone();
            q.assign(p);
            let (l, g) = eval(&synth, &q, &prior);
            (l, g.posterior.flatten())
        },
        &post.flatten(),
        FD_EPS,
    );
    let e_omega = grad_check(
        |p| {
            let mut n = prior.clone();
            n.weights.assign(p);
            let (l, g) = eval(&synth, &post, &n);
            (l, g.prior.flatten())
        },
        &prior.weights.flatten(),
        FD_EPS,
    );
    [e_theta, e_nu, e_omega]
}

/// Cosine distance by the textbook formula.
pub fn ref_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    (1.0 - ab / (aa * bb).sqrt()).clamp(0.0, 2.0)
}

pub fn ref_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn brute_median_min(a: &Matrix, b: &Matrix, exclude: bool) -> f64 {
    let mut mins = Vec::new();
    for j in 0..a.rows {
        let mut best = f64::INFINITY;
        for k in 0..b.rows {
            if exclude && j == k {
                continue;
            }
            let d = ref_cosine(a.row(j), b.row(k));
            if d < best {
                best = d;
            }
        }
        mins.push(best);
    }
    ref_median(mins)
}

pub fn brute_median_same(a: &Matrix, b: &Matrix) -> f64 {
    ref_median(
        (0..a.rows)
            .map(|j| ref_cosine(a.row(j), b.row(j)))
            .collect(),
    )
}

/// Seeded `rows x cols` table of standard normal entries.
pub fn random_table(rows: usize, cols: usize, seed: u64, index: u64) -> Matrix {
    let mut r = rng::stream(seed, "test-table", index);
    Matrix::from_fn(rows, cols, |_, _| rng::normal(&mut r))
}
