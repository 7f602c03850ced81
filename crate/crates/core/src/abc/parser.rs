use std::collections::HashMap;

use thiserror::Error;

use super::key::natural_pitch_class;
use super::lexer::{AbcToken, BarKind, LexError, NoteToken, Token};
use super::{fits_32, AbcHeader, Key, Meter, NoteEvent, Score, MAX_PITCH, MIN_PITCH};
use crate::Rational;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error("tune does not start with an X: field")]
    MissingRefNumber,
    #[error("tune has no K: field")]
    MissingKey,
    #[error("tune contains no notes")]
    EmptyTune,
    #[error("pitch {pitch} out of range in bar {bar}")]
    PitchOutOfRange { pitch: i32, bar: usize },
    #[error("unresolvable repeat structure at bar {bar}: {detail}")]
    Repeat { bar: usize, detail: String },
    #[error("multi-measure rest in bar {bar}")]
    MultiMeasureRest { bar: usize },
    #[error("more than one voice")]
    MultipleVoices,
    #[error("voice overlay in bar {bar}")]
    VoiceOverlay { bar: usize },
    #[error("duration overflow in bar {bar}")]
    DurationOverflow { bar: usize },
}

impl ParseError {
    /// Stable kebab-case reason used in skip reports.
    pub fn reason(&self) -> &'static str {
        match self {
            ParseError::Lex(_) => "lexical-error",
            ParseError::MissingRefNumber => "missing-reference-number",
            ParseError::MissingKey => "missing-key",
            ParseError::EmptyTune => "empty-tune",
            ParseError::PitchOutOfRange { .. } => "pitch-out-of-range",
            ParseError::Repeat { .. } => "repeat-structure",
            ParseError::MultiMeasureRest { .. } => "multi-measure-rest",
            ParseError::MultipleVoices => "multiple-voices",
            ParseError::VoiceOverlay { .. } => "voice-overlay",
            ParseError::DurationOverflow { .. } => "duration-overflow",
        }
    }
}

#[derive(Debug, Clone)]
enum Element {
    Event { event: NoteEvent, tie_next: bool },
    Bar { kind: BarKind, bar: usize },
    Ending { numbers: Vec<u32>, bar: usize },
}

/// Parses the tokens of one tune (starting with `X:`) into a monophonic score.
pub fn parse_tune(tokens: &[Token]) -> Result<Score, ParseError> {
    let mut iter = tokens
        .iter()
        .filter(|t| t.kind != AbcToken::Ignored)
        .peekable();

    let reference_number = match iter.next().map(|t| &t.kind) {
        Some(AbcToken::RefNumber(n)) => *n,
        _ => return Err(ParseError::MissingRefNumber),
    };
    let mut header = AbcHeader {
        reference_number,
        ..AbcHeader::default()
    };
    let mut title_seen = false;
    let mut voice: Option<String> = None;
    let mut key = None;
    for tok in iter.by_ref() {
        match &tok.kind {
            AbcToken::Title(t) if !title_seen => {
                header.title = t.clone();
                title_seen = true;
            }
            AbcToken::Meter(m) => header.meter = *m,
            AbcToken::UnitLength(l) => header.unit_note_length = *l,
            AbcToken::Voice(v) => voice = Some(v.clone()),
            AbcToken::Key(k) => {
                key = Some(*k);
                break;
            }
            AbcToken::Title(_) | AbcToken::Field { .. } => {}
            _ => return Err(ParseError::MissingKey),
        }
    }
    header.key = key.ok_or(ParseError::MissingKey)?;

    let body: Vec<&Token> = iter.collect();
    let elements = BodyParser::new(&header, voice).run(&body)?;
    let events = merge_ties(expand_repeats(elements)?);
    if events.is_empty() {
        return Err(ParseError::EmptyTune);
    }
    Ok(Score { header, events })
}

struct BodyParser {
    unit: Rational,
    meter: Meter,
    key: Key,
    voice: Option<String>,
    bar: usize,
    /// Explicit accidentals in the current bar, keyed by (letter index, octave).
    bar_accidentals: HashMap<(i32, i32), i32>,
    tuplet: Option<(Rational, u32)>,
    broken_next: Option<Rational>,
    chord: Option<Option<(i32, Rational)>>,
    out: Vec<Element>,
}

impl BodyParser {
    fn new(header: &AbcHeader, voice: Option<String>) -> Self {
        BodyParser {
            unit: header.unit_note_length,
            meter: header.meter,
            key: header.key,
            voice,
            bar: 1,
            bar_accidentals: HashMap::new(),
            tuplet: None,
            broken_next: None,
            chord: None,
            out: Vec::new(),
        }
    }

    fn run(mut self, body: &[&Token]) -> Result<Vec<Element>, ParseError> {
        for tok in body {
            match &tok.kind {
                AbcToken::RefNumber(_) | AbcToken::EndOfTune => break,
                AbcToken::Key(k) => self.key = *k,
                AbcToken::UnitLength(l) => self.unit = *l,
                AbcToken::Meter(m) => self.meter = *m,
                AbcToken::Voice(v) => match &self.voice {
                    Some(first) if first != v => return Err(ParseError::MultipleVoices),
                    Some(_) => {}
                    None => self.voice = Some(v.clone()),
                },
                AbcToken::Note(n) => self.note(n)?,
                AbcToken::Rest { length, .. } => {
                    let dur = self.scaled(*length)?;
                    if self.chord.is_none() {
                        self.push_event(None, dur)?;
                    }
                }
                AbcToken::MultiMeasureRest => {
                    return Err(ParseError::MultiMeasureRest { bar: self.bar })
                }
                AbcToken::VoiceOverlay => return Err(ParseError::VoiceOverlay { bar: self.bar }),
                AbcToken::Bar(kind) => {
                    self.bar_accidentals.clear();
                    self.out.push(Element::Bar {
                        kind: *kind,
                        bar: self.bar,
                    });
                    self.bar += 1;
                }
                AbcToken::Ending(numbers) => self.out.push(Element::Ending {
                    numbers: numbers.clone(),
                    bar: self.bar,
                }),
                AbcToken::Tie => {
                    if let Some(Element::Event { event, tie_next }) = self.out.last_mut() {
                        if event.pitch().is_some() {
                            *tie_next = true;
                        }
                    }
                }
                AbcToken::Broken {
                    first_longer,
                    count,
                } => self.broken(*first_longer, *count)?,
                AbcToken::Tuplet { p, q, r } => {
                    let q = q.unwrap_or_else(|| self.default_tuplet_q(*p));
                    let r = r.unwrap_or(*p);
                    self.tuplet = Some((Rational::new(q as i64, *p as i64), r));
                }
                AbcToken::ChordStart => self.chord = Some(None),
                AbcToken::ChordEnd { length } => {
                    if let Some(Some((pitch, dur))) = self.chord.take() {
                        let dur = self.checked(dur * *length)?;
                        self.push_event(Some(pitch), dur)?;
                    }
                }
                AbcToken::Title(_) | AbcToken::Field { .. } | AbcToken::Ignored => {}
            }
        }
        Ok(self.out)
    }

    fn default_tuplet_q(&self, p: u32) -> u32 {
        match p {
            2 | 4 | 8 => 3,
            3 | 6 => 2,
            _ if self.meter.is_compound() => 3,
            _ => 2,
        }
    }

    fn checked(&self, r: Rational) -> Result<Rational, ParseError> {
        if fits_32(&r) && r > Rational::from_integer(0) {
            Ok(r)
        } else {
            Err(ParseError::DurationOverflow { bar: self.bar })
        }
    }

    fn scaled(&self, length: Rational) -> Result<Rational, ParseError> {
        self.checked(length * self.unit)
    }

    fn note(&mut self, n: &NoteToken) -> Result<(), ParseError> {
        let letter = n.letter;
        let natural = natural_pitch_class(letter).unwrap_or(0);
        let base_octave = if letter.is_ascii_lowercase() { 1 } else { 0 };
        let octave = base_octave + n.octave as i32;
        let slot = (natural, octave);
        let accidental = match n.accidental {
            Some(a) => {
                self.bar_accidentals.insert(slot, a.semitones());
                a.semitones()
            }
            None => match self.bar_accidentals.get(&slot) {
                Some(&a) => a,
                None => self.key.accidental_for(letter),
            },
        };
        let pitch = 60 + natural + 12 * octave + accidental;
        if !(MIN_PITCH..=MAX_PITCH).contains(&pitch) {
            return Err(ParseError::PitchOutOfRange {
                pitch,
                bar: self.bar,
            });
        }
        let dur = self.scaled(n.length)?;
        match &mut self.chord {
            Some(first @ None) => *first = Some((pitch, dur)),
            Some(Some(_)) => {}
            None => self.push_event(Some(pitch), dur)?,
        }
        Ok(())
    }

    fn push_event(&mut self, pitch: Option<i32>, mut dur: Rational) -> Result<(), ParseError> {
        if let Some(factor) = self.broken_next.take() {
            dur *= factor;
        }
        if let Some((ratio, remaining)) = self.tuplet {
            dur *= ratio;
            self.tuplet = (remaining > 1).then_some((ratio, remaining - 1));
        }
        let dur = self.checked(dur)?;
        let event = match pitch {
            Some(p) => NoteEvent::note(p, dur),
            None => NoteEvent::rest(dur),
        };
        self.out.push(Element::Event {
            event,
            tie_next: false,
        });
        Ok(())
    }

    fn broken(&mut self, first_longer: bool, count: u8) -> Result<(), ParseError> {
        let short = Rational::new(1, 1 << count);
        let long = Rational::from_integer(2) - short;
        let (first, second) = if first_longer {
            (long, short)
        } else {
            (short, long)
        };
        if let Some(Element::Event { event, .. }) = self.out.last_mut() {
            let d = event.duration * first;
            event.duration = d;
            self.checked(d)?;
            self.broken_next = Some(second);
        }
        Ok(())
    }
}

/// Unfolds `|: ... :|` spans and first/second endings.
fn expand_repeats(elements: Vec<Element>) -> Result<Vec<(NoteEvent, bool)>, ParseError> {
    let mut out: Vec<(NoteEvent, bool)> = Vec::new();
    let mut section_start = 0usize;
    let mut first_ending: Option<usize> = None;
    // Set after a `:|` that closed a first ending; the next ending must be 2.
    let mut expect_second = false;

    for el in elements {
        match el {
            Element::Event { event, tie_next } => out.push((event, tie_next)),
            Element::Bar { kind, bar } => match kind {
                BarKind::RepeatStart => {
                    section_start = out.len();
                    first_ending = None;
                    expect_second = false;
                }
                BarKind::RepeatEnd | BarKind::RepeatBoth => {
                    let end = first_ending.take().unwrap_or(out.len());
                    if end < section_start {
                        return Err(ParseError::Repeat {
                            bar,
                            detail: "ending before section".into(),
                        });
                    }
                    expect_second = end != out.len();
                    let replay: Vec<_> = out[section_start..end].to_vec();
                    out.extend(replay);
                    section_start = out.len();
                }
                BarKind::Single | BarKind::Double => {}
            },
            Element::Ending { numbers, bar } => {
                let first = numbers.first().copied().unwrap_or(0);
                match first {
                    1 if first_ending.is_none() && !expect_second => {
                        first_ending = Some(out.len());
                    }
                    2 if expect_second => expect_second = false,
                    _ => {
                        return Err(ParseError::Repeat {
                            bar,
                            detail: format!("unexpected ending [{first}"),
                        })
                    }
                }
            }
        }
    }
    // A dangling `[1` without its `:|` is played once.
    Ok(out)
}

fn merge_ties(events: Vec<(NoteEvent, bool)>) -> Vec<NoteEvent> {
    let mut out: Vec<NoteEvent> = Vec::with_capacity(events.len());
    let mut pending_tie = false;
    for (event, tie_next) in events {
        match out.last_mut() {
            Some(prev)
                if pending_tie && prev.pitch().is_some() && prev.pitch() == event.pitch() =>
            {
                let merged = prev.duration + event.duration;
                if fits_32(&merged) {
                    prev.duration = merged;
                } else {
                    out.push(event);
                }
            }
            _ => out.push(event),
        }
        pending_tie = tie_next;
    }
    out
}
