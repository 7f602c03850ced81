#![allow(dead_code)]

use std::path::PathBuf;

use folkgen_core::abc::{parse_corpus_files, Score};
use folkgen_core::gru::{GruNetwork, NetworkDims};
use folkgen_core::model::MelodyModel;
use folkgen_core::representation::{
    normalize, DurationToken, NormalizedSong, PitchToken, Vocabulary,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus")
}

pub fn fixture_scores() -> Vec<Score> {
    let (scores, skips) = parse_corpus_files(&fixture_dir()).expect("fixture corpus readable");
    assert!(skips.is_empty(), "fixture tunes failed to parse: {skips:?}");
    scores
}

pub fn fixture_songs() -> Vec<NormalizedSong> {
    fixture_scores().iter().map(normalize).collect()
}

pub fn fixture_song(title: &str) -> NormalizedSong {
    fixture_songs()
        .into_iter()
        .find(|s| s.title == title)
        .expect("fixture tune present")
}

/// P = 5 (three pitches, silence, ending), D = 3.
pub fn small_vocab() -> Vocabulary {
    Vocabulary::from_tokens(
        vec![
            PitchToken::Pitch(60),
            PitchToken::Pitch(62),
            PitchToken::Pitch(64),
            PitchToken::Silence,
            PitchToken::SongEnding,
        ],
        ["1/2", "1", "2"]
            .iter()
            .map(|s| s.parse::<DurationToken>().unwrap())
            .collect(),
    )
    .unwrap()
}

/// Every parameter uniform in ±scale, initial states included.
pub fn random_model(vocab: Vocabulary, hidden: usize, seed: u64, scale: f64) -> MelodyModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = MelodyModel::<f64>::zeros(vocab, hidden);
    for net in [&mut m.rhythm, &mut m.melody] {
        for block in net.blocks_mut() {
            for v in block.iter_mut() {
                *v = rng.random_range(-scale..scale);
            }
        }
    }
    m
}

/// Random parameters everywhere, including biases and initial states.
pub fn random_net(dims: NetworkDims, seed: u64, scale: f64) -> GruNetwork<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = GruNetwork::<f64>::zeros(dims);
    for block in net.blocks_mut() {
        for v in block.iter_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
    for l in &mut net.layers {
        for v in &mut l.h0 {
            *v = v.clamp(-1.0, 1.0);
        }
    }
    net
}

pub fn random_inputs(width: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| (0..width).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn one_hot_inputs(first: usize, second: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            let mut x = vec![0.0; first + second];
            x[rng.random_range(0..first)] = 1.0;
            x[first + rng.random_range(0..second)] = 1.0;
            x
        })
        .collect()
}

pub fn random_targets(o: usize, len: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(0..o)).collect()
}

// Straight transcription of the update equations, no shared helpers.
pub fn oracle_step(
    net: &GruNetwork<f64>,
    h_prev: &[Vec<f64>],
    x: &[f64],
) -> (Vec<Vec<f64>>, Vec<f64>) {
    fn logistic(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }
    let mut new_h: Vec<Vec<f64>> = Vec::new();
    for (i, layer) in net.layers.iter().enumerate() {
        let mut y: Vec<f64> = x.to_vec();
        for lower in new_h.iter().take(i) {
            y.extend(lower.iter().copied());
        }
        let hp = &h_prev[i];
        let n = hp.len();
        let mut h = vec![0.0; n];
        for k in 0..n {
            let mut az = layer.b_z[k];
            let mut ar = layer.b_r[k];
            let mut ay = 0.0;
            let mut ahh = 0.0;
            for j in 0..y.len() {
                az += layer.w_yz.data[k * y.len() + j] * y[j];
                ar += layer.w_yr.data[k * y.len() + j] * y[j];
                ay += layer.w_yh.data[k * y.len() + j] * y[j];
            }
            for j in 0..n {
                az += layer.w_hz.data[k * n + j] * hp[j];
                ar += layer.w_hr.data[k * n + j] * hp[j];
                ahh += layer.w_hh.data[k * n + j] * hp[j];
            }
            let z = logistic(az);
            let r = logistic(ar);
            let cand = (ay + r * ahh).tanh();
            h[k] = z * hp[k] + (1.0 - z) * cand;
        }
        new_h.push(h);
    }
    let mut yo: Vec<f64> = x.to_vec();
    for h in &new_h {
        yo.extend(h.iter().copied());
    }
    let o = net.output.b_o.len();
    let mut logits = vec![0.0; o];
    for j in 0..o {
        logits[j] = net.output.b_o[j];
        for c in 0..yo.len() {
            logits[j] += net.output.w_yo.data[j * yo.len() + c] * yo[c];
        }
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    (new_h, e.iter().map(|v| v / s).collect())
}
