use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Natural pitch classes for letters C D E F G A B.
const NATURAL_PC: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];
const MAJOR_STEPS: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Mode {
    #[default]
    Major,
    Minor,
    Dorian,
    Phrygian,
    Lydian,
    Mixolydian,
    Aeolian,
    Locrian,
}

impl Mode {
    /// Scale degree of the mode's tonic within its relative major (0-based).
    fn degree(self) -> usize {
        match self {
            Mode::Major => 0,
            Mode::Dorian => 1,
            Mode::Phrygian => 2,
            Mode::Lydian => 3,
            Mode::Mixolydian => 4,
            Mode::Minor | Mode::Aeolian => 5,
            Mode::Locrian => 6,
        }
    }

    /// Modes transposed onto A rather than C.
    pub fn is_minor_family(self) -> bool {
        matches!(
            self,
            Mode::Minor | Mode::Dorian | Mode::Phrygian | Mode::Aeolian | Mode::Locrian
        )
    }

    fn suffix(self) -> &'static str {
        match self {
            Mode::Major => "",
            Mode::Minor => "min",
            Mode::Dorian => "dor",
            Mode::Phrygian => "phr",
            Mode::Lydian => "lyd",
            Mode::Mixolydian => "mix",
            Mode::Aeolian => "aeo",
            Mode::Locrian => "loc",
        }
    }

    fn from_word(word: &str) -> Option<Mode> {
        let w = word.to_ascii_lowercase();
        if w == "m" {
            return Some(Mode::Minor);
        }
        let p = w.get(..3)?;
        Some(match p {
            "maj" | "ion" => Mode::Major,
            "min" => Mode::Minor,
            "dor" => Mode::Dorian,
            "phr" => Mode::Phrygian,
            "lyd" => Mode::Lydian,
            "mix" => Mode::Mixolydian,
            "aeo" => Mode::Aeolian,
            "loc" => Mode::Locrian,
            _ => return None,
        })
    }
}

/// Key signature: spelled tonic plus mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Key {
    /// Uppercase letter `A`..=`G`.
    pub tonic_letter: char,
    /// -1 flat, 0 natural, +1 sharp.
    pub tonic_accidental: i8,
    pub mode: Mode,
}

impl Default for Key {
    fn default() -> Self {
        Key {
            tonic_letter: 'C',
            tonic_accidental: 0,
            mode: Mode::Major,
        }
    }
}

pub(crate) fn letter_index(letter: char) -> Option<usize> {
    "CDEFGAB".find(letter.to_ascii_uppercase())
}

pub(crate) fn natural_pitch_class(letter: char) -> Option<i32> {
    letter_index(letter).map(|i| NATURAL_PC[i])
}

impl Key {
    pub fn new(tonic_letter: char, tonic_accidental: i8, mode: Mode) -> Self {
        Key {
            tonic_letter,
            tonic_accidental,
            mode,
        }
    }

    pub fn c_major() -> Self {
        Key::default()
    }

    pub fn a_minor() -> Self {
        Key::new('A', 0, Mode::Minor)
    }

    pub fn tonic_pitch_class(&self) -> i32 {
        let nat = natural_pitch_class(self.tonic_letter).unwrap_or(0);
        (nat + self.tonic_accidental as i32).rem_euclid(12)
    }

    /// Semitone offset the signature applies to each letter, indexed C..B.
    pub fn signature(&self) -> [i32; 7] {
        let tonic_idx = letter_index(self.tonic_letter).unwrap_or(0);
        let degree = self.mode.degree();
        let major_idx = (tonic_idx + 7 - degree) % 7;
        let major_pc = (self.tonic_pitch_class() - MAJOR_STEPS[degree]).rem_euclid(12);
        let mut sig = [0; 7];
        for (k, step) in MAJOR_STEPS.iter().enumerate() {
            let letter = (major_idx + k) % 7;
            let target = (major_pc + step).rem_euclid(12);
            let diff = (target - NATURAL_PC[letter]).rem_euclid(12);
            sig[letter] = if diff > 6 { diff - 12 } else { diff };
        }
        sig
    }

    /// Accidental the signature applies to `letter` (either case).
    pub fn accidental_for(&self, letter: char) -> i32 {
        letter_index(letter)
            .map(|i| self.signature()[i])
            .unwrap_or(0)
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let acc = match self.tonic_accidental {
            1 => "#",
            -1 => "b",
            _ => "",
        };
        write!(f, "{}{}{}", self.tonic_letter, acc, self.mode.suffix())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid key `{0}`")]
pub struct ParseKeyError(pub String);

impl FromStr for Key {
    type Err = ParseKeyError;

    /// Accepts `D`, `Amin`, `Em`, `G mixolydian`, `F#dor`, `Bb`, `none`.
    /// Trailing words that are not a mode (clef=..., explicit accidentals) are ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let err = || ParseKeyError(s.to_string());
        if s.is_empty() || s.eq_ignore_ascii_case("none") {
            return Ok(Key::default());
        }
        let mut chars = s.chars().peekable();
        let letter = chars.next().ok_or_else(err)?.to_ascii_uppercase();
        if letter_index(letter).is_none() {
            return Err(err());
        }
        let accidental = match chars.peek() {
            Some('#') => {
                chars.next();
                1
            }
            Some('b') => {
                chars.next();
                -1
            }
            _ => 0,
        };
        let rest: String = chars.collect();
        let rest = rest.trim_start();
        let mode = match rest.split_whitespace().next() {
            None => Mode::Major,
            Some(word) => {
                // `Amin`, `Am` or `A minor`; anything else is not a mode word.
                let alpha: String = word
                    .chars()
                    .take_while(|c| c.is_ascii_alphabetic())
                    .collect();
                if alpha.is_empty() {
                    Mode::Major
                } else {
                    match Mode::from_word(&alpha) {
                        Some(m) => m,
                        None if word.contains('=') => Mode::Major,
                        None if alpha.eq_ignore_ascii_case("exp") => Mode::Major,
                        None => return Err(err()),
                    }
                }
            }
        };
        Ok(Key::new(letter, accidental, mode))
    }
}
