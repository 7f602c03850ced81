//! Sampling melodies by feeding the model's own choices back as input.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{song_fingerprint, Opening};
use crate::model::{MelodyModel, ModelError};
use crate::representation::EncodedSong;
use crate::scalar::log_softmax;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerationError {
    #[error("seed is empty")]
    EmptySeed,
    #[error("seed has a song ending at position {0}, before its last note")]
    InteriorEnding(usize),
    #[error("pitch and duration sequences differ in length")]
    Ragged,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint has no opening notes to draw from")]
    NoOpenings,
    #[error("opening note {0} is not in the vocabulary")]
    UnknownOpening(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub seed: u64,
    /// Upper bound on the song length in tokens, seed and ending included.
    pub max_notes: usize,
    pub temperature: f64,
    pub num_samples: usize,
    /// Take the most probable token at every step instead of sampling.
    pub greedy: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            seed: 0,
            max_notes: 1000,
            temperature: 1.0,
            num_samples: 1,
            greedy: false,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), GenerationError> {
        if self.max_notes == 0 {
            return Err(GenerationError::Config(
                "max_notes must be at least 1".into(),
            ));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(GenerationError::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    EndedNaturally,
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSong {
    pub encoded: EncodedSong,
    pub termination: Termination,
    pub seed_len: usize,
    /// Model probability (at temperature 1) of each generated note's
    /// duration and pitch together.
    pub note_probs: Vec<f64>,
}

impl GeneratedSong {
    /// Notes without the trailing song ending.
    pub fn note_count(&self) -> usize {
        match self.termination {
            Termination::EndedNaturally => self.encoded.len() - 1,
            Termination::Truncated => self.encoded.len(),
        }
    }
}

/// Sampling distribution at `temperature`: softmax(log p / T).
pub fn tempered<T: Scalar>(probs: &[T], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = probs
        .iter()
        .map(|p| p.to_f64_lossy().ln() / temperature)
        .collect();
    log_softmax(&scaled).1
}

pub fn argmax<T: Scalar>(probs: &[T]) -> usize {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    best
}

fn choose<T: Scalar, R: Rng + ?Sized>(
    probs: &[T],
    config: &GenerationConfig,
    rng: &mut R,
) -> usize {
    if config.greedy {
        return argmax(probs);
    }
    let q = tempered(probs, config.temperature);
    match WeightedIndex::new(&q) {
        Ok(dist) => dist.sample(rng),
        Err(_) => argmax(probs),
    }
}

/// Continues `seed` with an explicit random source.
pub fn continue_with_rng<T: Scalar, R: Rng + ?Sized>(
    model: &MelodyModel<T>,
    seed: &EncodedSong,
    config: &GenerationConfig,
    rng: &mut R,
) -> Result<GeneratedSong, GenerationError> {
    config.validate()?;
    if seed.pitches.len() != seed.durations.len() {
        return Err(GenerationError::Ragged);
    }
    if seed.is_empty() {
        return Err(GenerationError::EmptySeed);
    }
    let end = model.vocab.song_ending();
    if let Some(pos) = seed.pitches.iter().position(|&p| p == end) {
        if pos + 1 != seed.len() {
            return Err(GenerationError::InteriorEnding(pos));
        }
        return Ok(GeneratedSong {
            encoded: seed.clone(),
            termination: Termination::EndedNaturally,
            seed_len: seed.len(),
            note_probs: Vec::new(),
        });
    }

    // Warm up on the seed with teacher forcing.
    let mut rhythm = model.rhythm.initial_state();
    let mut melody = model.melody.initial_state();
    for n in 0..seed.len() - 1 {
        let (p, d) = (seed.pitches[n], seed.durations[n]);
        rhythm = model.next_duration_dist(&rhythm, d, p)?.1;
        melody = model.next_pitch_dist(&melody, p, seed.durations[n + 1])?.1;
    }

    let mut out = seed.clone();
    let mut note_probs = Vec::new();
    let unit = model.vocab.unit_duration();
    while out.len() < config.max_notes {
        let (p_n, d_n) = (*out.pitches.last().unwrap(), *out.durations.last().unwrap());
        let (dd, rs) = model.next_duration_dist(&rhythm, d_n, p_n)?;
        let d_next = choose(&dd, config, rng);
        let (pd, ms) = model.next_pitch_dist(&melody, p_n, d_next)?;
        let p_next = choose(&pd, config, rng);
        rhythm = rs;
        melody = ms;
        note_probs.push(dd[d_next].to_f64_lossy() * pd[p_next].to_f64_lossy());
        out.pitches.push(p_next);
        if p_next == end {
            // The duration drawn alongside the ending carries no meaning.
            out.durations.push(unit.unwrap_or(d_next));
            return Ok(GeneratedSong {
                encoded: out,
                termination: Termination::EndedNaturally,
                seed_len: seed.len(),
                note_probs,
            });
        }
        out.durations.push(d_next);
    }
    Ok(GeneratedSong {
        encoded: out,
        termination: Termination::Truncated,
        seed_len: seed.len(),
        note_probs,
    })
}

/// Continues `seed` until a song ending or `max_notes`, seeded by `config.seed`.
pub fn continue_song<T: Scalar>(
    model: &MelodyModel<T>,
    seed: &EncodedSong,
    config: &GenerationConfig,
) -> Result<GeneratedSong, GenerationError> {
    continue_with_rng(
        model,
        seed,
        config,
        &mut ChaCha8Rng::seed_from_u64(config.seed),
    )
}

/// Generates a song from two given `(pitch, duration)` index pairs.
pub fn generate_song<T: Scalar>(
    model: &MelodyModel<T>,
    first_notes: [(usize, usize); 2],
    config: &GenerationConfig,
) -> Result<GeneratedSong, GenerationError> {
    let seed = EncodedSong {
        pitches: vec![first_notes[0].0, first_notes[1].0],
        durations: vec![first_notes[0].1, first_notes[1].1],
    };
    continue_song(model, &seed, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub n: usize,
    pub mean_len: f64,
    pub std_len: f64,
    /// Fraction of songs that ended with a song-ending token.
    pub terminated: f64,
    /// Fraction of songs that are not an exact copy of a training song.
    pub novel: f64,
}

fn opening_indices<T: Scalar>(
    model: &MelodyModel<T>,
    opening: &Opening,
) -> Result<[(usize, usize); 2], GenerationError> {
    let idx = |i: usize| {
        let (p, d) = &opening.notes[i];
        match (model.vocab.pitch_index(p), model.vocab.duration_index(d)) {
            (Some(pi), Some(di)) => Ok((pi, di)),
            _ => Err(GenerationError::UnknownOpening(format!("{p}/{d}"))),
        }
    };
    Ok([idx(0)?, idx(1)?])
}

/// `num_samples` autonomous songs. Song `i` draws its opening from
/// `openings` and samples with its own stream `i` under `config.seed`.
pub fn batch_generate<T: Scalar>(
    model: &MelodyModel<T>,
    openings: &[Opening],
    train_fingerprints: &[String],
    config: &GenerationConfig,
) -> Result<(Vec<GeneratedSong>, BatchStats), GenerationError> {
    config.validate()?;
    if config.num_samples > 0 && openings.is_empty() {
        return Err(GenerationError::NoOpenings);
    }
    let weights: Vec<u64> = openings.iter().map(|o| o.count).collect();
    let pick = if openings.is_empty() {
        None
    } else {
        WeightedIndex::new(&weights).ok()
    };
    let songs: Vec<GeneratedSong> = (0..config.num_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            let o = pick
                .as_ref()
                .map(|p| p.sample(&mut rng))
                .ok_or(GenerationError::NoOpenings)?;
            let first = opening_indices(model, &openings[o])?;
            let seed = EncodedSong {
                pitches: vec![first[0].0, first[1].0],
                durations: vec![first[0].1, first[1].1],
            };
            continue_with_rng(model, &seed, config, &mut rng)
        })
        .collect::<Result<_, _>>()?;

    let known: HashSet<&str> = train_fingerprints.iter().map(String::as_str).collect();
    let n = songs.len();
    let lens: Vec<f64> = songs.iter().map(|s| s.note_count() as f64).collect();
    let denom = n.max(1) as f64;
    let mean_len = lens.iter().sum::<f64>() / denom;
    let std_len = (lens.iter().map(|l| (l - mean_len).powi(2)).sum::<f64>() / denom).sqrt();
    let terminated = songs
        .iter()
        .filter(|s| s.termination == Termination::EndedNaturally)
        .count() as f64
        / denom;
    let novel = songs
        .iter()
        .filter(|s| !known.contains(song_fingerprint(&s.encoded, &model.vocab).as_str()))
        .count() as f64
        / denom;
    let stats = if n == 0 {
        BatchStats {
            n,
            mean_len: 0.0,
            std_len: 0.0,
            terminated: 0.0,
            novel: 0.0,
        }
    } else {
        BatchStats {
            n,
            mean_len,
            std_len,
            terminated,
            novel,
        }
    };
    Ok((songs, stats))
}
