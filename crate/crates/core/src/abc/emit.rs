use std::collections::HashMap;
use std::fmt::Write;

use thiserror::Error;

use super::key::letter_index;
use super::{EventKind, Score};
use crate::Rational;

/// Largest length-multiplier denominator we are willing to write.
const MAX_DENOMINATOR: i64 = 64;
const BARS_PER_LINE: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmitError {
    #[error("duration {0} is not representable with denominators up to 64")]
    Unrepresentable(Rational),
    #[error("score has no events")]
    Empty,
}

/// Sharp-preferring spelling for each pitch class: (letter, accidental).
const SPELLING: [(char, i32); 12] = [
    ('C', 0),
    ('C', 1),
    ('D', 0),
    ('D', 1),
    ('E', 0),
    ('F', 0),
    ('F', 1),
    ('G', 0),
    ('G', 1),
    ('A', 0),
    ('A', 1),
    ('B', 0),
];

/// Writes a score as abc text using the score's own header. Accidentals are
/// written whenever the key signature or an earlier accidental in the bar
/// would otherwise give a different pitch, so the output re-parses to the
/// same events. Bar lines are placed greedily from the meter and carry no
/// meaning.
pub fn emit_abc(score: &Score) -> Result<String, EmitError> {
    if score.events.is_empty() {
        return Err(EmitError::Empty);
    }
    let h = &score.header;
    let unit = h.unit_note_length;
    let mut out = String::new();
    let _ = writeln!(out, "X:{}", h.reference_number);
    let title = h.title.replace(['\n', '\r'], " ");
    if !title.is_empty() {
        let _ = writeln!(out, "T:{title}");
    }
    let _ = writeln!(out, "M:{}", h.meter);
    let _ = writeln!(out, "L:{}/{}", unit.numer(), unit.denom());
    let _ = writeln!(out, "K:{}", h.key);

    let signature = h.key.signature();
    let measure = h.meter.measure_length();
    let mut in_bar = Rational::from_integer(0);
    let mut bar_accidentals: HashMap<(usize, i32), i32> = HashMap::new();
    let mut bars_on_line = 0usize;
    let mut line = String::new();

    for event in &score.events {
        let multiplier = event.duration / unit;
        if *multiplier.denom() > MAX_DENOMINATOR {
            return Err(EmitError::Unrepresentable(event.duration));
        }
        match event.kind {
            EventKind::Rest => line.push('z'),
            EventKind::Note(pitch) => {
                let (letter, acc) = SPELLING[pitch.rem_euclid(12) as usize];
                let idx = letter_index(letter).unwrap_or(0);
                let octave = (pitch - acc).div_euclid(12) - 5;
                let implied = bar_accidentals
                    .get(&(idx, octave))
                    .copied()
                    .unwrap_or(signature[idx]);
                if implied != acc {
                    line.push_str(match acc {
                        1 => "^",
                        _ => "=",
                    });
                    bar_accidentals.insert((idx, octave), acc);
                }
                push_letter(&mut line, letter, octave);
            }
        }
        push_length(&mut line, multiplier);

        if let Some(m) = measure {
            in_bar += event.duration;
            if in_bar >= m {
                while in_bar >= m {
                    in_bar -= m;
                }
                line.push('|');
                bar_accidentals.clear();
                bars_on_line += 1;
                if bars_on_line == BARS_PER_LINE {
                    out.push_str(&line);
                    out.push('\n');
                    line.clear();
                    bars_on_line = 0;
                }
                continue;
            }
        }
        line.push(' ');
    }
    let trimmed = line.trim_end();
    if !trimmed.is_empty() {
        out.push_str(trimmed);
        if !trimmed.ends_with('|') {
            out.push('|');
        }
        out.push('\n');
    }
    Ok(out)
}

fn push_letter(out: &mut String, letter: char, octave: i32) {
    if octave >= 1 {
        out.push(letter.to_ascii_lowercase());
        for _ in 1..octave {
            out.push('\'');
        }
    } else {
        out.push(letter);
        for _ in octave..0 {
            out.push(',');
        }
    }
}

fn push_length(out: &mut String, m: Rational) {
    let (n, d) = (*m.numer(), *m.denom());
    match (n, d) {
        (1, 1) => {}
        (n, 1) => {
            let _ = write!(out, "{n}");
        }
        (1, d) => {
            let _ = write!(out, "/{d}");
        }
        (n, d) => {
            let _ = write!(out, "{n}/{d}");
        }
    }
}
