use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DurationToken, PitchToken};
use crate::abc::{EventKind, Key, Score};
use crate::Rational;

/// A song in the normalized token domain: transposed to C major / A minor,
/// durations relative to the song's modal duration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedSong {
    pub reference_number: u32,
    pub title: String,
    pub notes: Vec<(PitchToken, DurationToken)>,
    /// Modal duration in whole notes.
    pub base: Rational,
    /// Semitones added to every pitch by the transposition.
    pub shift: i32,
}

/// Shift in [-6, +5] taking the tonic to C (major family) or A (minor family).
pub fn transposition_shift(key: &Key) -> i32 {
    let target = if key.mode.is_minor_family() { 9 } else { 0 };
    (target - key.tonic_pitch_class() + 6).rem_euclid(12) - 6
}

pub fn transpose_to_c(score: &Score) -> Score {
    let shift = transposition_shift(&score.header.key);
    let mut out = score.clone();
    for e in &mut out.events {
        if let EventKind::Note(p) = &mut e.kind {
            *p += shift;
        }
    }
    out.header.key = if score.header.key.mode.is_minor_family() {
        Key::a_minor()
    } else {
        Key::c_major()
    };
    out
}

/// Divides every duration by the modal one (ties go to the smaller value).
/// Panics on an empty score.
pub fn normalize_durations(score: &Score) -> (Vec<DurationToken>, Rational) {
    let mut counts: BTreeMap<Rational, usize> = BTreeMap::new();
    for e in &score.events {
        *counts.entry(e.duration).or_default() += 1;
    }
    // BTreeMap iterates ascending, so the first maximum is the smallest value.
    let mut base = None;
    let mut best = 0;
    for (d, &c) in &counts {
        if c > best {
            best = c;
            base = Some(*d);
        }
    }
    let base = base.expect("normalize_durations on an empty score");
    let tokens = score
        .events
        .iter()
        .map(|e| DurationToken(e.duration / base))
        .collect();
    (tokens, base)
}

pub fn normalize(score: &Score) -> NormalizedSong {
    let transposed = transpose_to_c(score);
    let (durations, base) = normalize_durations(&transposed);
    let notes = transposed
        .events
        .iter()
        .zip(durations)
        .map(|(e, d)| {
            let p = match e.kind {
                EventKind::Note(p) => PitchToken::Pitch(p),
                EventKind::Rest => PitchToken::Silence,
            };
            (p, d)
        })
        .collect();
    NormalizedSong {
        reference_number: score.header.reference_number,
        title: score.header.title.clone(),
        notes,
        base,
        shift: transposition_shift(&score.header.key),
    }
}
