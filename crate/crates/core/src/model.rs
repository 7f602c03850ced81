//! The coupled rhythm/melody model. The rhythm network sees the current
//! duration and pitch and predicts the next duration; the melody network
//! sees the current pitch and the upcoming duration and predicts the next
//! pitch.

use rand::Rng;
use thiserror::Error;

use crate::gru::{
    forward_sequence, nll_and_gradient, tape_nll, GruError, GruNetwork, NetworkDims, NetworkState,
};
use crate::representation::{EncodedSong, Vocabulary};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("{kind} index {index} outside vocabulary of size {size}")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        size: usize,
    },
    #[error("song has {0} notes, at least 2 are needed")]
    TooShort(usize),
    #[error("network widths do not match the vocabulary")]
    WidthMismatch,
    #[error(transparent)]
    Network(#[from] GruError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelodyModel<T> {
    pub rhythm: GruNetwork<T>,
    pub melody: GruNetwork<T>,
    pub vocab: Vocabulary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub rhythm: NetworkState<T>,
    pub melody: NetworkState<T>,
    pub last_pitch: Option<usize>,
    pub last_duration: Option<usize>,
}

/// Teacher-forced inputs and targets for both networks.
#[derive(Debug, Clone)]
pub struct SongInputs<T> {
    pub rhythm_inputs: Vec<Vec<T>>,
    pub rhythm_targets: Vec<usize>,
    pub melody_inputs: Vec<Vec<T>>,
    pub melody_targets: Vec<usize>,
}

/// Per-network NLL and gradient for one song.
#[derive(Debug, Clone)]
pub struct SongGradients<T> {
    pub rhythm_nll: T,
    pub rhythm: GruNetwork<T>,
    pub melody_nll: T,
    pub melody: GruNetwork<T>,
}

pub fn rhythm_dims(vocab: &Vocabulary, hidden: usize) -> NetworkDims {
    let (p, d) = (vocab.pitch_size(), vocab.duration_size());
    NetworkDims::uniform(d + p, hidden, d)
}

pub fn melody_dims(vocab: &Vocabulary, hidden: usize) -> NetworkDims {
    let (p, d) = (vocab.pitch_size(), vocab.duration_size());
    NetworkDims::uniform(p + d, hidden, p)
}

fn two_hot<T: Scalar>(width: usize, a: usize, b: usize) -> Vec<T> {
    let mut x = vec![T::zero(); width];
    x[a] = T::one();
    x[b] = T::one();
    x
}

impl<T: Scalar> MelodyModel<T> {
    pub fn zeros(vocab: Vocabulary, hidden: usize) -> Self {
        MelodyModel {
            rhythm: GruNetwork::zeros(rhythm_dims(&vocab, hidden)),
            melody: GruNetwork::zeros(melody_dims(&vocab, hidden)),
            vocab,
        }
    }

    pub fn init<R: Rng + ?Sized>(vocab: Vocabulary, hidden: usize, rng: &mut R) -> Self {
        let rhythm = GruNetwork::init(rhythm_dims(&vocab, hidden), rng);
        let melody = GruNetwork::init(melody_dims(&vocab, hidden), rng);
        MelodyModel {
            rhythm,
            melody,
            vocab,
        }
    }

    /// Checks the networks against the vocabulary.
    pub fn validate(&self) -> Result<(), ModelError> {
        let (p, d) = (self.vocab.pitch_size(), self.vocab.duration_size());
        let ok = self.rhythm.dims.input == d + p
            && self.rhythm.dims.output == d
            && self.melody.dims.input == p + d
            && self.melody.dims.output == p;
        if !ok {
            return Err(ModelError::WidthMismatch);
        }
        self.rhythm.validate_shapes()?;
        self.melody.validate_shapes()?;
        Ok(())
    }

    fn check_pitch(&self, index: usize) -> Result<(), ModelError> {
        let size = self.vocab.pitch_size();
        if index >= size {
            return Err(ModelError::IndexOutOfRange {
                kind: "pitch",
                index,
                size,
            });
        }
        Ok(())
    }

    fn check_duration(&self, index: usize) -> Result<(), ModelError> {
        let size = self.vocab.duration_size();
        if index >= size {
            return Err(ModelError::IndexOutOfRange {
                kind: "duration",
                index,
                size,
            });
        }
        Ok(())
    }

    pub fn rhythm_input(&self, d: usize, p: usize) -> Vec<T> {
        let nd = self.vocab.duration_size();
        two_hot(nd + self.vocab.pitch_size(), d, nd + p)
    }

    pub fn melody_input(&self, p: usize, d_next: usize) -> Vec<T> {
        let np = self.vocab.pitch_size();
        two_hot(np + self.vocab.duration_size(), p, np + d_next)
    }

    pub fn init_state(&self) -> ModelState<T> {
        ModelState {
            rhythm: self.rhythm.initial_state(),
            melody: self.melody.initial_state(),
            last_pitch: None,
            last_duration: None,
        }
    }

    /// Distribution over the next duration after note `(d_n, p_n)`.
    pub fn next_duration_dist(
        &self,
        state: &NetworkState<T>,
        d_n: usize,
        p_n: usize,
    ) -> Result<(Vec<T>, NetworkState<T>), ModelError> {
        self.check_duration(d_n)?;
        self.check_pitch(p_n)?;
        let cache = self.rhythm.step(state, &self.rhythm_input(d_n, p_n))?;
        Ok((cache.probs.clone(), cache.state()))
    }

    /// Distribution over the next pitch, given the current pitch and the
    /// already chosen next duration.
    pub fn next_pitch_dist(
        &self,
        state: &NetworkState<T>,
        p_n: usize,
        d_next: usize,
    ) -> Result<(Vec<T>, NetworkState<T>), ModelError> {
        self.check_pitch(p_n)?;
        self.check_duration(d_next)?;
        let cache = self.melody.step(state, &self.melody_input(p_n, d_next))?;
        Ok((cache.probs.clone(), cache.state()))
    }

    fn check_song(&self, song: &EncodedSong) -> Result<(), ModelError> {
        if song.pitches.len() < 2 || song.durations.len() != song.pitches.len() {
            return Err(ModelError::TooShort(
                song.pitches.len().min(song.durations.len()),
            ));
        }
        for &p in &song.pitches {
            self.check_pitch(p)?;
        }
        for &d in &song.durations {
            self.check_duration(d)?;
        }
        Ok(())
    }

    /// The first note is input only; every later note is a target.
    pub fn song_inputs(&self, song: &EncodedSong) -> Result<SongInputs<T>, ModelError> {
        self.check_song(song)?;
        let n = song.len() - 1;
        let (p, d) = (&song.pitches, &song.durations);
        Ok(SongInputs {
            rhythm_inputs: (0..n).map(|i| self.rhythm_input(d[i], p[i])).collect(),
            rhythm_targets: d[1..].to_vec(),
            melody_inputs: (0..n).map(|i| self.melody_input(p[i], d[i + 1])).collect(),
            melody_targets: p[1..].to_vec(),
        })
    }

    /// `(rhythm_nll, melody_nll)`, each a mean over the song's predictions.
    pub fn teacher_forced_nll(&self, song: &EncodedSong) -> Result<(T, T), ModelError> {
        let io = self.song_inputs(song)?;
        let (_, rt) = forward_sequence(&self.rhythm, &io.rhythm_inputs)?;
        let (_, mt) = forward_sequence(&self.melody, &io.melody_inputs)?;
        Ok((
            tape_nll(&rt, &io.rhythm_targets),
            tape_nll(&mt, &io.melody_targets),
        ))
    }

    pub fn song_gradients(&self, song: &EncodedSong) -> Result<SongGradients<T>, ModelError> {
        let io = self.song_inputs(song)?;
        let (r, m) = rayon::join(
            || nll_and_gradient(&self.rhythm, &io.rhythm_inputs, &io.rhythm_targets),
            || nll_and_gradient(&self.melody, &io.melody_inputs, &io.melody_targets),
        );
        let (rhythm_nll, rhythm) = r?;
        let (melody_nll, melody) = m?;
        Ok(SongGradients {
            rhythm_nll,
            rhythm,
            melody_nll,
            melody,
        })
    }
}

impl<T: Scalar> ModelState<T> {
    /// Advances both networks past a known note, given the duration that
    /// follows it. Returns the two distributions the networks emitted.
    pub fn observe(
        &mut self,
        model: &MelodyModel<T>,
        p_n: usize,
        d_n: usize,
        d_next: usize,
    ) -> Result<(Vec<T>, Vec<T>), ModelError> {
        let (dd, rs) = model.next_duration_dist(&self.rhythm, d_n, p_n)?;
        let (pd, ms) = model.next_pitch_dist(&self.melody, p_n, d_next)?;
        self.rhythm = rs;
        self.melody = ms;
        self.last_pitch = Some(p_n);
        self.last_duration = Some(d_n);
        Ok((dd, pd))
    }
}
