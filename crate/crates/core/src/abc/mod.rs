//! A pragmatic subset of abc notation: lexing, tune parsing and emission.
//!
//! Parsed tunes are reduced to a single monophonic line of [`NoteEvent`]s
//! with absolute semitone pitches and durations in whole notes. Repeats are
//! expanded, ties merged and tuplets/broken rhythms resolved, so a [`Score`]
//! is exactly the sequence of sounding notes.

mod corpus;
mod emit;
mod key;
mod lexer;
mod parser;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::Rational;

pub use corpus::{parse_corpus, parse_corpus_files, SkipReport};
pub use emit::{emit_abc, EmitError};
pub use key::{Key, Mode, ParseKeyError};
pub use lexer::{tokenize_abc, AbcToken, Accidental, BarKind, LexError, NoteToken, Token};
pub use parser::{parse_tune, ParseError};

/// Lowest accepted semitone (A0).
pub const MIN_PITCH: i32 = 21;
/// Highest accepted semitone (C8).
pub const MAX_PITCH: i32 = 108;

/// Unit note length used when a tune has no `L:` field.
pub fn default_unit_length() -> Rational {
    Rational::new(1, 8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Meter {
    Fraction {
        num: u32,
        den: u32,
    },
    /// `C`, i.e. 4/4.
    Common,
    /// `C|`, i.e. 2/2.
    Cut,
    Free,
}

impl Meter {
    /// Length of one measure in whole notes, `None` for free meter.
    pub fn measure_length(&self) -> Option<Rational> {
        match *self {
            Meter::Fraction { num, den } => Some(Rational::new(num as i64, den as i64)),
            Meter::Common | Meter::Cut => Some(Rational::from_integer(1)),
            Meter::Free => None,
        }
    }

    /// 6/8, 9/8, 12/8 and friends.
    pub fn is_compound(&self) -> bool {
        matches!(*self, Meter::Fraction { num, .. } if num > 3 && num % 3 == 0)
    }
}

impl fmt::Display for Meter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Meter::Fraction { num, den } => write!(f, "{num}/{den}"),
            Meter::Common => f.write_str("C"),
            Meter::Cut => f.write_str("C|"),
            Meter::Free => f.write_str("none"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbcHeader {
    pub reference_number: u32,
    pub title: String,
    pub meter: Meter,
    pub unit_note_length: Rational,
    pub key: Key,
}

impl Default for AbcHeader {
    fn default() -> Self {
        AbcHeader {
            reference_number: 1,
            title: String::new(),
            meter: Meter::Fraction { num: 4, den: 4 },
            unit_note_length: default_unit_length(),
            key: Key::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    /// Semitone number, middle C = 60.
    Note(i32),
    Rest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoteEvent {
    pub kind: EventKind,
    /// Whole-note units, always reduced.
    pub duration: Rational,
}

impl NoteEvent {
    pub fn note(pitch: i32, duration: Rational) -> Self {
        NoteEvent {
            kind: EventKind::Note(pitch),
            duration,
        }
    }

    pub fn rest(duration: Rational) -> Self {
        NoteEvent {
            kind: EventKind::Rest,
            duration,
        }
    }

    pub fn pitch(&self) -> Option<i32> {
        match self.kind {
            EventKind::Note(p) => Some(p),
            EventKind::Rest => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Score {
    pub header: AbcHeader,
    pub events: Vec<NoteEvent>,
}

impl Score {
    pub fn total_duration(&self) -> Rational {
        self.events
            .iter()
            .fold(Rational::from_integer(0), |acc, e| acc + e.duration)
    }
}

/// Durations must fit 32-bit numerator and denominator.
pub(crate) fn fits_32(r: &Rational) -> bool {
    i32::try_from(*r.numer()).is_ok() && i32::try_from(*r.denom()).is_ok()
}
