//! Token-level view of a melody: normalized pitches and relative durations,
//! corpus vocabularies and the paired index sequences the networks consume.

mod normalize;
mod stats;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abc::{AbcHeader, NoteEvent, Score};
use crate::Rational;

pub use normalize::{
    normalize, normalize_durations, transpose_to_c, transposition_shift, NormalizedSong,
};
pub use stats::{
    markov_nll, transition_stats, unigram_counts, CorpusStats, Stream, TransitionMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PitchToken {
    Pitch(i32),
    Silence,
    SongEnding,
}

impl fmt::Display for PitchToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PitchToken::Pitch(p) => write!(f, "{p}"),
            PitchToken::Silence => f.write_str("silence"),
            PitchToken::SongEnding => f.write_str("end"),
        }
    }
}

impl FromStr for PitchToken {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "silence" => Ok(PitchToken::Silence),
            "end" => Ok(PitchToken::SongEnding),
            _ => s
                .parse()
                .map(PitchToken::Pitch)
                .map_err(|_| format!("bad pitch token `{s}`")),
        }
    }
}

/// Duration relative to the song's most common duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DurationToken(pub Rational);

impl DurationToken {
    pub fn unit() -> Self {
        DurationToken(Rational::from_integer(1))
    }
}

impl fmt::Display for DurationToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for DurationToken {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let r: Rational = s.parse().map_err(|_| format!("bad duration token `{s}`"))?;
        if r <= Rational::from_integer(0) {
            return Err(format!("non-positive duration token `{s}`"));
        }
        Ok(DurationToken(r))
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(PitchToken);
string_serde!(DurationToken);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VocabError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("vocabulary tokens are not in canonical order or contain duplicates")]
    NotCanonical,
    #[error("pitch vocabulary must end with silence and song-ending tokens")]
    MissingSpecials,
}

/// Bijective token/index maps for pitches and durations.
///
/// Pitches are ordered ascending with `Silence` and `SongEnding` last;
/// durations ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawVocabulary", into = "RawVocabulary")]
pub struct Vocabulary {
    pitch_tokens: Vec<PitchToken>,
    duration_tokens: Vec<DurationToken>,
    pitch_index: HashMap<PitchToken, usize>,
    duration_index: HashMap<DurationToken, usize>,
}

#[derive(Serialize, Deserialize)]
struct RawVocabulary {
    pitch: Vec<PitchToken>,
    duration: Vec<DurationToken>,
}

impl TryFrom<RawVocabulary> for Vocabulary {
    type Error = VocabError;

    fn try_from(raw: RawVocabulary) -> Result<Self, Self::Error> {
        Vocabulary::from_tokens(raw.pitch, raw.duration)
    }
}

impl From<Vocabulary> for RawVocabulary {
    fn from(v: Vocabulary) -> Self {
        RawVocabulary {
            pitch: v.pitch_tokens,
            duration: v.duration_tokens,
        }
    }
}

impl Vocabulary {
    /// Builds from explicit token lists, which must already be canonical.
    pub fn from_tokens(
        pitch_tokens: Vec<PitchToken>,
        duration_tokens: Vec<DurationToken>,
    ) -> Result<Self, VocabError> {
        if !strictly_sorted(&pitch_tokens) || !strictly_sorted(&duration_tokens) {
            return Err(VocabError::NotCanonical);
        }
        let n = pitch_tokens.len();
        if n < 2
            || pitch_tokens[n - 2] != PitchToken::Silence
            || pitch_tokens[n - 1] != PitchToken::SongEnding
        {
            return Err(VocabError::MissingSpecials);
        }
        if duration_tokens.is_empty() {
            return Err(VocabError::EmptyCorpus);
        }
        let pitch_index = pitch_tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (*t, i))
            .collect();
        let duration_index = duration_tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (*t, i))
            .collect();
        Ok(Vocabulary {
            pitch_tokens,
            duration_tokens,
            pitch_index,
            duration_index,
        })
    }

    pub fn pitch_size(&self) -> usize {
        self.pitch_tokens.len()
    }

    pub fn duration_size(&self) -> usize {
        self.duration_tokens.len()
    }

    pub fn pitch_tokens(&self) -> &[PitchToken] {
        &self.pitch_tokens
    }

    pub fn duration_tokens(&self) -> &[DurationToken] {
        &self.duration_tokens
    }

    pub fn pitch_index(&self, t: &PitchToken) -> Option<usize> {
        self.pitch_index.get(t).copied()
    }

    pub fn duration_index(&self, t: &DurationToken) -> Option<usize> {
        self.duration_index.get(t).copied()
    }

    pub fn pitch(&self, index: usize) -> Option<PitchToken> {
        self.pitch_tokens.get(index).copied()
    }

    pub fn duration(&self, index: usize) -> Option<DurationToken> {
        self.duration_tokens.get(index).copied()
    }

    pub fn song_ending(&self) -> usize {
        self.pitch_tokens.len() - 1
    }

    pub fn silence(&self) -> usize {
        self.pitch_tokens.len() - 2
    }

    /// Index of the relative duration "1", present in every corpus vocabulary.
    pub fn unit_duration(&self) -> Option<usize> {
        self.duration_index(&DurationToken::unit())
    }
}

fn strictly_sorted<T: Ord>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

/// Collects the tokens of the (training) corpus into a vocabulary.
pub fn build_vocabulary(corpus: &[NormalizedSong]) -> Result<Vocabulary, VocabError> {
    if corpus.iter().all(|s| s.notes.is_empty()) {
        return Err(VocabError::EmptyCorpus);
    }
    let mut pitches = BTreeSet::new();
    let mut durations = BTreeSet::new();
    for song in corpus {
        for (p, d) in &song.notes {
            if let PitchToken::Pitch(_) = p {
                pitches.insert(*p);
            }
            durations.insert(*d);
        }
    }
    // SongEnding is always paired with "1".
    durations.insert(DurationToken::unit());
    let mut pitch_tokens: Vec<PitchToken> = pitches.into_iter().collect();
    pitch_tokens.push(PitchToken::Silence);
    pitch_tokens.push(PitchToken::SongEnding);
    Vocabulary::from_tokens(pitch_tokens, durations.into_iter().collect())
}

/// Paired pitch and duration index sequences; the last pitch is SongEnding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncodedSong {
    pub pitches: Vec<usize>,
    pub durations: Vec<usize>,
}

impl EncodedSong {
    pub fn len(&self) -> usize {
        self.pitches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pitches.is_empty()
    }

    /// One-hot matrix view, columns = notes: `matrix[token][note]`.
    pub fn one_hot(&self, vocab: &Vocabulary) -> (Vec<Vec<u8>>, Vec<Vec<u8>>) {
        let n = self.len();
        let mut p = vec![vec![0u8; n]; vocab.pitch_size()];
        let mut d = vec![vec![0u8; n]; vocab.duration_size()];
        for (col, (&pi, &di)) in self.pitches.iter().zip(&self.durations).enumerate() {
            p[pi][col] = 1;
            d[di][col] = 1;
        }
        (p, d)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("tokens not in vocabulary: {}", .0.join(", "))]
    OutOfVocabulary(Vec<String>),
}

impl EncodeError {
    pub fn tokens(&self) -> &[String] {
        match self {
            EncodeError::OutOfVocabulary(t) => t,
        }
    }
}

pub fn encode_song(song: &NormalizedSong, vocab: &Vocabulary) -> Result<EncodedSong, EncodeError> {
    let mut missing = BTreeSet::new();
    let mut pitches = Vec::with_capacity(song.notes.len() + 1);
    let mut durations = Vec::with_capacity(song.notes.len() + 1);
    for (p, d) in &song.notes {
        match (vocab.pitch_index(p), vocab.duration_index(d)) {
            (Some(pi), Some(di)) => {
                pitches.push(pi);
                durations.push(di);
            }
            (pi, di) => {
                if pi.is_none() {
                    missing.insert(format!("pitch:{p}"));
                }
                if di.is_none() {
                    missing.insert(format!("duration:{d}"));
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(EncodeError::OutOfVocabulary(missing.into_iter().collect()));
    }
    let unit = vocab
        .unit_duration()
        .ok_or_else(|| EncodeError::OutOfVocabulary(vec!["duration:1".into()]))?;
    pitches.push(vocab.song_ending());
    durations.push(unit);
    Ok(EncodedSong { pitches, durations })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("{kind} index {index} out of range at position {position}")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        position: usize,
    },
    #[error("song has no notes before its ending")]
    Empty,
    #[error("decoded duration overflows")]
    Overflow,
}

/// Inverse of [`encode_song`]: stops at the first SongEnding, rescales
/// durations by `base` and undoes a transposition by `shift`.
pub fn decode_song(
    encoded: &EncodedSong,
    vocab: &Vocabulary,
    base: Rational,
    shift: i32,
) -> Result<Score, DecodeError> {
    let mut events = Vec::new();
    for (position, (&pi, &di)) in encoded.pitches.iter().zip(&encoded.durations).enumerate() {
        let p = vocab.pitch(pi).ok_or(DecodeError::IndexOutOfRange {
            kind: "pitch",
            index: pi,
            position,
        })?;
        let d = vocab.duration(di).ok_or(DecodeError::IndexOutOfRange {
            kind: "duration",
            index: di,
            position,
        })?;
        let duration =
            num_traits::CheckedMul::checked_mul(&d.0, &base).ok_or(DecodeError::Overflow)?;
        match p {
            PitchToken::SongEnding => break,
            PitchToken::Silence => events.push(NoteEvent::rest(duration)),
            PitchToken::Pitch(x) => events.push(NoteEvent::note(x - shift, duration)),
        }
    }
    if events.is_empty() {
        return Err(DecodeError::Empty);
    }
    Ok(Score {
        header: AbcHeader::default(),
        events,
    })
}
