//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sphmm_sid::dsp::FeatureSequence;
use sphmm_sid::hmm::{GaussianMixture, GmmHmm, TrainingConfig};
use sphmm_sid::labels::{Emotion, Gender, Label};
use sphmm_sid::math::log_sum_exp;
use sphmm_sid::pipeline::{RegistryConfig, Utterance};
use sphmm_sid::prosody::{ProsodicVector, SuprasegmentalSequence};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / sum).collect()
}

pub fn random_model(rng: &mut ChaCha8Rng, n_states: usize, dim: usize, k: usize) -> GmmHmm {
    let emissions = (0..n_states)
        .map(|_| {
            GaussianMixture::new(
                random_probs(rng, k),
                (0..k).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect(),
                (0..k).map(|_| (0..dim).map(|_| rng.random_range(0.2..2.0)).collect()).collect(),
            )
            .unwrap()
        })
        .collect();
    GmmHmm::new(
        random_probs(rng, n_states),
        (0..n_states).map(|_| random_probs(rng, n_states)).collect(),
        emissions,
        vec![1e-6; dim],
    )
    .unwrap()
}

pub fn random_obs(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..len).map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()).collect()
}

/// log P(O) by summing over every state path.
pub fn brute_force_log_likelihood(m: &GmmHmm, obs: &[Vec<f64>]) -> f64 {
    let n = m.n_states();
    let t_len = obs.len();
    let mut terms = Vec::with_capacity(n.pow(t_len as u32));
    let mut path = vec![0usize; t_len];
    loop {
        let mut lp = m.initial_probs()[path[0]].ln() + m.emissions()[path[0]].log_density(&obs[0]);
        for t in 1..t_len {
            lp += m.transitions()[path[t - 1]][path[t]].ln()
                + m.emissions()[path[t]].log_density(&obs[t]);
        }
        terms.push(lp);
        // odometer increment
        let mut i = 0;
        while i < t_len {
            path[i] += 1;
            if path[i] < n {
                break;
            }
            path[i] = 0;
            i += 1;
        }
        if i == t_len {
            break;
        }
    }
    log_sum_exp(&terms)
}

/// Feature-level stand-in for an utterance: frames cluster around a point
/// set by gender and speaker (plus a small emotion offset), prosody around
/// a point set by emotion.
pub fn fake_utterance(rng: &mut ChaCha8Rng, label: &Label, n_frames: usize) -> Utterance {
    let noise = Normal::new(0.0, 0.3).unwrap();
    let g = if label.gender == Gender::Male { -1.0 } else { 1.0 };
    let e = Emotion::ALL.iter().position(|x| *x == label.emotion).unwrap() as f64;
    let s = label.speaker as f64;
    let frames = (0..n_frames)
        .map(|t| {
            (0..16)
                .map(|d| {
                    let center = match d {
                        0 => 3.0 * g,
                        1 => 2.0 * s * g,
                        2 => 0.8 * e,
                        3 => (t % 3) as f64,
                        _ => 0.0,
                    };
                    center + noise.sample(rng)
                })
                .collect()
        })
        .collect();
    let segments = (0..3)
        .map(|i| ProsodicVector {
            pitch_mean: 150.0 + 50.0 * g + 15.0 * e + noise.sample(rng),
            pitch_slope: 0.1 * e - 0.05 * i as f64 + 0.01 * noise.sample(rng),
            pitch_range: 10.0 + 3.0 * e + noise.sample(rng),
            energy_mean: -30.0 + 2.0 * e + noise.sample(rng),
            energy_range: 20.0 + noise.sample(rng),
            voiced_fraction: 0.8 + 0.01 * noise.sample(rng),
            log_duration: -1.0 - 0.1 * e + 0.01 * noise.sample(rng),
        })
        .collect();
    Utterance::new(
        FeatureSequence::new(frames).unwrap(),
        SuprasegmentalSequence::new(segments).unwrap(),
    )
}

/// Every (gender, speaker, emotion) cell, `reps` utterances each.
pub fn fake_corpus(
    n_speakers: u32,
    emotions: &[Emotion],
    reps: usize,
    seed: u64,
) -> (Vec<Utterance>, Vec<Label>) {
    let mut rng = rng(seed);
    let mut utterances = Vec::new();
    let mut labels = Vec::new();
    for g in Gender::ALL {
        for s in 1..=n_speakers {
            for &e in emotions {
                for _ in 0..reps {
                    let label = Label::new(g, e, s);
                    utterances.push(fake_utterance(&mut rng, &label, 30));
                    labels.push(label);
                }
            }
        }
    }
    (utterances, labels)
}

/// Few EM iterations and single Gaussians: enough for fake corpora.
pub fn quick_config(ablations: bool) -> RegistryConfig {
    let tc = TrainingConfig {
        max_iterations: 5,
        n_mixtures: 1,
        ..Default::default()
    };
    RegistryConfig {
        acoustic: tc.clone(),
        prosodic: tc,
        ablations,
        seed: 1,
    }
}

/// Published speaker identification cells (male %, female %): the
/// emotion-blind baseline.
pub const BASELINE_CELLS: [(Emotion, f64, f64); 6] = [
    (Emotion::Neutral, 92.0, 93.0),
    (Emotion::Anger, 71.0, 70.0),
    (Emotion::Sadness, 75.0, 75.0),
    (Emotion::Happiness, 78.0, 79.0),
    (Emotion::Disgust, 75.0, 73.0),
    (Emotion::Fear, 79.0, 79.0),
];

/// Published cells for the three-stage cascade at alpha 0.5.
pub const CASCADE_CELLS: [(Emotion, f64, f64); 6] = [
    (Emotion::Neutral, 98.0, 98.0),
    (Emotion::Anger, 76.0, 75.0),
    (Emotion::Sadness, 84.0, 83.0),
    (Emotion::Happiness, 81.0, 83.0),
    (Emotion::Disgust, 84.0, 82.0),
    (Emotion::Fear, 80.0, 81.0),
];

/// Published male emotion confusion, `[predicted][true]` in percent, classes
/// in `Emotion::ALL` order.
pub const MALE_CONFUSION: [[u32; 6]; 6] = [
    [95, 4, 1, 6, 2, 3],
    [0, 81, 5, 2, 7, 3],
    [2, 3, 86, 0, 3, 3],
    [3, 0, 0, 88, 2, 1],
    [0, 10, 2, 2, 85, 3],
    [0, 2, 6, 2, 1, 87],
];

/// (true, predicted) index pairs reproducing a percent matrix over 100
/// utterances per true class.
pub fn pairs_from_percent(m: &[[u32; 6]; 6]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (p, row) in m.iter().enumerate() {
        for (t, &count) in row.iter().enumerate() {
            pairs.extend(std::iter::repeat_n((t, p), count as usize));
        }
    }
    pairs
}
