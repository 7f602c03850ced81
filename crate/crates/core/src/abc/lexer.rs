use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Key, Meter};
use crate::Rational;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct LexError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Accidental {
    DoubleFlat,
    Flat,
    Natural,
    Sharp,
    DoubleSharp,
}

impl Accidental {
    pub fn semitones(self) -> i32 {
        match self {
            Accidental::DoubleFlat => -2,
            Accidental::Flat => -1,
            Accidental::Natural => 0,
            Accidental::Sharp => 1,
            Accidental::DoubleSharp => 2,
        }
    }
}

/// A note as written: `letter` keeps its case, `octave` counts only the
/// `'` / `,` marks, `length` is the multiplier of the unit note length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoteToken {
    pub letter: char,
    pub accidental: Option<Accidental>,
    pub octave: i8,
    pub length: Rational,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarKind {
    Single,
    /// `||`, `|]`, `[|`
    Double,
    RepeatStart,
    RepeatEnd,
    /// `::`, `:|:`, `:||:`
    RepeatBoth,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AbcToken {
    RefNumber(u32),
    Title(String),
    Meter(Meter),
    UnitLength(Rational),
    Key(Key),
    Voice(String),
    /// Any other field (header or inline), value kept verbatim.
    Field {
        name: char,
        value: String,
    },
    Note(NoteToken),
    Rest {
        length: Rational,
        invisible: bool,
    },
    MultiMeasureRest,
    Bar(BarKind),
    /// `[1`, `|2`, `[1,3`
    Ending(Vec<u32>),
    Tie,
    /// `>` family: the first note is lengthened; `<`: the second.
    Broken {
        first_longer: bool,
        count: u8,
    },
    Tuplet {
        p: u32,
        q: Option<u32>,
        r: Option<u32>,
    },
    ChordStart,
    /// Closing `]` with its optional length multiplier.
    ChordEnd {
        length: Rational,
    },
    VoiceOverlay,
    /// Decorations, chord symbols, grace notes, slurs and other presentation marks.
    Ignored,
    /// Blank line terminating a tune body.
    EndOfTune,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: AbcToken,
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Header,
    Body,
    /// Between tunes: text is ignored until the next `X:`.
    FreeText,
}

/// Splits abc source into tokens. Header fields are recognised on lines of
/// the form `L:value`; inside a tune body, note letters `A-G a-g` followed by
/// a colon are music rather than fields.
pub fn tokenize_abc(source: &str) -> Result<Vec<Token>, LexError> {
    let mut tokens = Vec::new();
    let mut state = State::Body;
    let mut seen_music = false;

    for (idx, raw_line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim_end_matches('\r');
        let chars: Vec<char> = line.chars().collect();

        if line.trim().is_empty() {
            if state == State::Body && seen_music {
                tokens.push(Token {
                    kind: AbcToken::EndOfTune,
                    line: line_no,
                    column: 1,
                });
                state = State::FreeText;
                seen_music = false;
            }
            continue;
        }
        if chars[0] == '%' {
            continue;
        }

        if let Some((name, value)) = field_line(&chars) {
            let in_body = state == State::Body;
            let is_field = !(in_body && is_note_letter(name));
            if is_field {
                if state == State::FreeText && name != 'X' {
                    continue;
                }
                let kind = field_token(name, &value, line_no, 3)?;
                match kind {
                    AbcToken::RefNumber(_) => state = State::Header,
                    AbcToken::Key(_) => state = State::Body,
                    _ => {}
                }
                tokens.push(Token {
                    kind,
                    line: line_no,
                    column: 1,
                });
                continue;
            }
        }

        if state == State::FreeText {
            continue;
        }
        seen_music = true;
        lex_music_line(&chars, line_no, &mut tokens)?;
    }
    Ok(tokens)
}

fn is_note_letter(c: char) -> bool {
    matches!(c, 'A'..='G' | 'a'..='g')
}

fn field_line(chars: &[char]) -> Option<(char, String)> {
    if chars.len() >= 2 && chars[0].is_ascii_alphabetic() && chars[1] == ':' {
        let value: String = chars[2..].iter().collect();
        Some((chars[0], value))
    } else {
        None
    }
}

fn strip_comment(value: &str) -> &str {
    match value.find('%') {
        Some(i) => &value[..i],
        None => value,
    }
}

fn field_token(name: char, value: &str, line: usize, column: usize) -> Result<AbcToken, LexError> {
    let err = |message: String| LexError {
        line,
        column,
        message,
    };
    let v = strip_comment(value).trim();
    Ok(match name {
        'X' => {
            let n = v
                .parse::<u32>()
                .map_err(|_| err(format!("malformed reference number `X:{v}`")))?;
            AbcToken::RefNumber(n)
        }
        'T' => AbcToken::Title(v.to_string()),
        'M' => {
            AbcToken::Meter(parse_meter(v).ok_or_else(|| err(format!("malformed meter `M:{v}`")))?)
        }
        'L' => {
            let r = parse_fraction(v)
                .filter(|r| *r > Rational::from_integer(0))
                .ok_or_else(|| err(format!("malformed unit note length `L:{v}`")))?;
            AbcToken::UnitLength(r)
        }
        'K' => AbcToken::Key(v.parse::<Key>().map_err(|e| err(e.to_string()))?),
        'V' => AbcToken::Voice(v.split_whitespace().next().unwrap_or("").to_string()),
        _ => AbcToken::Field {
            name,
            value: v.to_string(),
        },
    })
}

fn parse_u32(s: &str) -> Option<u32> {
    s.trim().parse::<u32>().ok()
}

fn parse_fraction(s: &str) -> Option<Rational> {
    let s = s.trim();
    match s.split_once('/') {
        Some((n, d)) => {
            let n = parse_u32(n)?;
            let d = parse_u32(d)?;
            (d > 0).then(|| Rational::new(n as i64, d as i64))
        }
        None => parse_u32(s).map(|n| Rational::from_integer(n as i64)),
    }
}

fn parse_meter(s: &str) -> Option<Meter> {
    let s = s.trim();
    match s {
        "C" => return Some(Meter::Common),
        "C|" => return Some(Meter::Cut),
        "" | "none" | "None" | "NONE" => return Some(Meter::Free),
        _ => {}
    }
    let (num, den) = s.split_once('/')?;
    let den = parse_u32(den)?;
    // Additive numerators such as `2+3/8`.
    let mut total = 0u32;
    for part in num
        .trim()
        .trim_start_matches('(')
        .trim_end_matches(')')
        .split('+')
    {
        total = total.checked_add(parse_u32(part)?)?;
    }
    (total > 0 && den > 0).then_some(Meter::Fraction { num: total, den })
}

struct Cursor<'a> {
    chars: &'a [char],
    pos: usize,
    line: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek_at(&self, offset: usize) -> Option<char> {
        self.chars.get(self.pos + offset).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        if c.is_some() {
            self.pos += 1;
        }
        c
    }

    fn error(&self, column: usize, message: impl Into<String>) -> LexError {
        LexError {
            line: self.line,
            column,
            message: message.into(),
        }
    }

    fn digits(&mut self) -> Option<u64> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return None;
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        // Absurdly long digit runs saturate and are rejected by the caller.
        Some(s.parse::<u64>().unwrap_or(u64::MAX))
    }

    /// Consumes up to and including `close` on this line.
    fn skip_until(&mut self, close: char) -> bool {
        while let Some(c) = self.bump() {
            if c == close {
                return true;
            }
        }
        false
    }

    /// Length suffix: `2`, `/`, `//`, `/4`, `3/2`, `3/`.
    fn length(&mut self, column: usize) -> Result<Rational, LexError> {
        const LIMIT: u64 = 1 << 20;
        let num = self.digits().unwrap_or(1);
        let mut den: u64 = 1;
        while self.peek() == Some('/') {
            self.bump();
            let d = self.digits().unwrap_or(2);
            den = den.saturating_mul(d);
        }
        if num == 0 || den == 0 || num > LIMIT || den > LIMIT {
            return Err(self.error(column, "invalid note length"));
        }
        Ok(Rational::new(num as i64, den as i64))
    }
}

fn lex_music_line(chars: &[char], line: usize, out: &mut Vec<Token>) -> Result<(), LexError> {
    let mut cur = Cursor {
        chars,
        pos: 0,
        line,
    };
    while let Some(c) = cur.peek() {
        let column = cur.pos + 1;
        let mut push = |kind: AbcToken| out.push(Token { kind, line, column });
        match c {
            '%' => break,
            ' ' | '\t' | '\\' | '`' | '$' | 'y' | '*' | ')' => {
                cur.bump();
            }
            '"' => {
                cur.bump();
                if !cur.skip_until('"') {
                    return Err(cur.error(column, "unterminated quoted string"));
                }
                push(AbcToken::Ignored);
            }
            '{' => {
                cur.bump();
                if !cur.skip_until('}') {
                    return Err(cur.error(column, "unterminated grace-note group"));
                }
                push(AbcToken::Ignored);
            }
            '!' | '+' => {
                cur.bump();
                let save = cur.pos;
                if !cur.skip_until(c) {
                    // abc 1.6 used a lone `!` as a line break.
                    cur.pos = save;
                }
                push(AbcToken::Ignored);
            }
            '~' | '.' | 'H' | 'L' | 'M' | 'O' | 'P' | 'S' | 'T' | 'u' | 'v' | 'J' | 'R' => {
                cur.bump();
                push(AbcToken::Ignored);
            }
            '^' | '_' | '=' | 'A'..='G' | 'a'..='g' => {
                let note = lex_note(&mut cur, column)?;
                push(AbcToken::Note(note));
            }
            'z' | 'x' => {
                cur.bump();
                let length = cur.length(column)?;
                push(AbcToken::Rest {
                    length,
                    invisible: c == 'x',
                });
            }
            'Z' | 'X' => {
                cur.bump();
                let _ = cur.digits();
                push(AbcToken::MultiMeasureRest);
            }
            '|' | ':' => {
                let (bar, ending) = lex_bar(&mut cur);
                if let Some(bar) = bar {
                    push(AbcToken::Bar(bar));
                }
                if let Some(nums) = ending {
                    out.push(Token {
                        kind: AbcToken::Ending(nums),
                        line,
                        column,
                    });
                }
            }
            '[' => match (cur.peek_at(1), cur.peek_at(2)) {
                (Some('|'), _) => {
                    cur.bump();
                    let (_, ending) = lex_bar(&mut cur);
                    push(AbcToken::Bar(BarKind::Double));
                    if let Some(nums) = ending {
                        out.push(Token {
                            kind: AbcToken::Ending(nums),
                            line,
                            column,
                        });
                    }
                }
                (Some(d), _) if d.is_ascii_digit() => {
                    cur.bump();
                    let nums = ending_numbers(&mut cur).unwrap_or_default();
                    push(AbcToken::Ending(nums));
                }
                (Some(f), Some(':')) if f.is_ascii_alphabetic() => {
                    cur.bump();
                    cur.bump();
                    cur.bump();
                    let start = cur.pos;
                    if !cur.skip_until(']') {
                        return Err(cur.error(column, "unterminated inline field"));
                    }
                    let value: String = chars[start..cur.pos - 1].iter().collect();
                    push(field_token(f, &value, line, column)?);
                }
                _ => {
                    cur.bump();
                    push(AbcToken::ChordStart);
                }
            },
            ']' => {
                cur.bump();
                let length = cur.length(column)?;
                push(AbcToken::ChordEnd { length });
            }
            '-' => {
                cur.bump();
                push(AbcToken::Tie);
            }
            '>' | '<' => {
                let mut count = 0u8;
                while cur.peek() == Some(c) {
                    cur.bump();
                    count = count.saturating_add(1);
                }
                push(AbcToken::Broken {
                    first_longer: c == '>',
                    count: count.min(3),
                });
            }
            '(' => {
                cur.bump();
                if cur.peek().is_some_and(|d| d.is_ascii_digit()) {
                    let p = cur.digits().unwrap_or(0);
                    let mut q = None;
                    let mut r = None;
                    if cur.peek() == Some(':') {
                        cur.bump();
                        q = cur.digits();
                        if cur.peek() == Some(':') {
                            cur.bump();
                            r = cur.digits();
                        }
                    }
                    let small = |v: u64| u32::try_from(v).ok().filter(|&v| v > 0 && v <= 64);
                    let p = small(p).ok_or_else(|| cur.error(column, "invalid tuplet"))?;
                    let q = q
                        .map(|v| small(v).ok_or_else(|| cur.error(column, "invalid tuplet")))
                        .transpose()?;
                    let r = r
                        .map(|v| small(v).ok_or_else(|| cur.error(column, "invalid tuplet")))
                        .transpose()?;
                    push(AbcToken::Tuplet { p, q, r });
                } else {
                    push(AbcToken::Ignored);
                }
            }
            '&' => {
                cur.bump();
                push(AbcToken::VoiceOverlay);
            }
            _ => {
                cur.bump();
                push(AbcToken::Ignored);
            }
        }
    }
    Ok(())
}

fn lex_note(cur: &mut Cursor<'_>, column: usize) -> Result<NoteToken, LexError> {
    let accidental = match (cur.peek(), cur.peek_at(1)) {
        (Some('^'), Some('^')) => {
            cur.pos += 2;
            Some(Accidental::DoubleSharp)
        }
        (Some('_'), Some('_')) => {
            cur.pos += 2;
            Some(Accidental::DoubleFlat)
        }
        (Some('^'), _) => {
            cur.pos += 1;
            Some(Accidental::Sharp)
        }
        (Some('_'), _) => {
            cur.pos += 1;
            Some(Accidental::Flat)
        }
        (Some('='), _) => {
            cur.pos += 1;
            Some(Accidental::Natural)
        }
        _ => None,
    };
    let letter = match cur.bump() {
        Some(l) if is_note_letter(l) => l,
        _ => return Err(cur.error(column, "accidental not followed by a note letter")),
    };
    let mut octave: i32 = 0;
    loop {
        match cur.peek() {
            Some('\'') => octave += 1,
            Some(',') => octave -= 1,
            _ => break,
        }
        cur.bump();
        if octave.abs() > 8 {
            return Err(cur.error(column, "too many octave marks"));
        }
    }
    let length = cur.length(column)?;
    Ok(NoteToken {
        letter,
        accidental,
        octave: octave as i8,
        length,
    })
}

fn ending_numbers(cur: &mut Cursor<'_>) -> Option<Vec<u32>> {
    let mut nums = Vec::new();
    loop {
        let n = cur.digits()?;
        let n = u32::try_from(n).ok()?;
        if cur.peek() == Some('-') && cur.peek_at(1).is_some_and(|c| c.is_ascii_digit()) {
            cur.bump();
            let hi = u32::try_from(cur.digits()?).ok()?;
            if hi < n || hi - n > 16 {
                return None;
            }
            nums.extend(n..=hi);
        } else {
            nums.push(n);
        }
        if cur.peek() == Some(',') && cur.peek_at(1).is_some_and(|c| c.is_ascii_digit()) {
            cur.bump();
        } else {
            return Some(nums);
        }
    }
}

/// Bar lines made of `|` and `:`, an optional closing `]`, and an optional
/// ending number glued to the bar (`:|2`).
fn lex_bar(cur: &mut Cursor<'_>) -> (Option<BarKind>, Option<Vec<u32>>) {
    let start = cur.pos;
    while matches!(cur.peek(), Some('|') | Some(':')) {
        cur.bump();
    }
    let mut closed = false;
    if cur.chars.get(cur.pos - 1) == Some(&'|') && cur.peek() == Some(']') {
        cur.bump();
        closed = true;
    }
    let s: String = cur.chars[start..cur.pos].iter().collect();
    let core = s.trim_end_matches(']');
    let lead = core.chars().take_while(|&c| c == ':').count();
    let trail = core.chars().rev().take_while(|&c| c == ':').count();
    let kind = if !core.contains('|') {
        if core.len() >= 2 {
            Some(BarKind::RepeatBoth)
        } else {
            None
        }
    } else if lead > 0 && trail > 0 {
        Some(BarKind::RepeatBoth)
    } else if lead > 0 {
        Some(BarKind::RepeatEnd)
    } else if trail > 0 {
        Some(BarKind::RepeatStart)
    } else if closed || core.contains("||") {
        Some(BarKind::Double)
    } else {
        Some(BarKind::Single)
    };
    let ending = if cur.peek().is_some_and(|c| c.is_ascii_digit()) {
        ending_numbers(cur)
    } else {
        None
    };
    (kind, ending)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<AbcToken> {
        tokenize_abc(src)
            .unwrap()
            .into_iter()
            .map(|t| t.kind)
            .collect()
    }

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n, d)
    }

    #[test]
    fn key_field() {
        assert_eq!(
            kinds("K:D"),
            vec![AbcToken::Key(Key::new('D', 0, super::super::Mode::Major))]
        );
    }

    #[test]
    fn plain_note() {
        assert_eq!(
            kinds("A2"),
            vec![AbcToken::Note(NoteToken {
                letter: 'A',
                accidental: None,
                octave: 0,
                length: r(2, 1)
            })]
        );
    }

    #[test]
    fn decorated_note() {
        assert_eq!(
            kinds("^c'/2"),
            vec![AbcToken::Note(NoteToken {
                letter: 'c',
                accidental: Some(Accidental::Sharp),
                octave: 1,
                length: r(1, 2)
            })]
        );
    }

    #[test]
    fn length_forms() {
        let lens: Vec<Rational> = kinds("A/ A// A/4 A3/2 A3/ A")
            .into_iter()
            .filter_map(|k| match k {
                AbcToken::Note(n) => Some(n.length),
                _ => None,
            })
            .collect();
        assert_eq!(
            lens,
            vec![r(1, 2), r(1, 4), r(1, 4), r(3, 2), r(3, 2), r(1, 1)]
        );
    }

    #[test]
    fn bars_and_endings() {
        let k = kinds("|: A :| B || C |] [|D::E:|2 F [1 G |1");
        let bars: Vec<&AbcToken> = k
            .iter()
            .filter(|t| matches!(t, AbcToken::Bar(_) | AbcToken::Ending(_)))
            .collect();
        assert_eq!(
            bars,
            vec![
                &AbcToken::Bar(BarKind::RepeatStart),
                &AbcToken::Bar(BarKind::RepeatEnd),
                &AbcToken::Bar(BarKind::Double),
                &AbcToken::Bar(BarKind::Double),
                &AbcToken::Bar(BarKind::Double),
                &AbcToken::Bar(BarKind::RepeatBoth),
                &AbcToken::Bar(BarKind::RepeatEnd),
                &AbcToken::Ending(vec![2]),
                &AbcToken::Ending(vec![1]),
                &AbcToken::Bar(BarKind::Single),
                &AbcToken::Ending(vec![1]),
            ]
        );
    }

    #[test]
    fn ignored_constructs() {
        let k = kinds("\"Am\"A {g}B !trill!c ~d .e");
        let notes = k.iter().filter(|t| matches!(t, AbcToken::Note(_))).count();
        assert_eq!(notes, 5);
    }

    #[test]
    fn tuplets_and_broken() {
        let k = kinds("(3abc (3:2:3 d>e f<<g");
        assert!(k.contains(&AbcToken::Tuplet {
            p: 3,
            q: None,
            r: None
        }));
        assert!(k.contains(&AbcToken::Tuplet {
            p: 3,
            q: Some(2),
            r: Some(3)
        }));
        assert!(k.contains(&AbcToken::Broken {
            first_longer: true,
            count: 1
        }));
        assert!(k.contains(&AbcToken::Broken {
            first_longer: false,
            count: 2
        }));
    }

    #[test]
    fn errors_carry_position() {
        let e = tokenize_abc("X:1\nK:C\nAB \"Am C").unwrap_err();
        assert_eq!((e.line, e.column), (3, 4));
        let e = tokenize_abc("X:1\nK:C\nA{gab").unwrap_err();
        assert_eq!(e.line, 3);
        let e = tokenize_abc("X:one").unwrap_err();
        assert_eq!((e.line, e.column), (1, 3));
        assert!(tokenize_abc("X:1\nM:x/y\nK:C").is_err());
        assert!(tokenize_abc("X:1\nL:0\nK:C").is_err());
    }

    #[test]
    fn inline_fields_and_chords() {
        let k = kinds("[K:G] [CEG]2 [L:1/16]");
        assert!(matches!(k[0], AbcToken::Key(_)));
        assert_eq!(k[1], AbcToken::ChordStart);
        assert_eq!(k[5], AbcToken::ChordEnd { length: r(2, 1) });
        assert_eq!(k[6], AbcToken::UnitLength(r(1, 16)));
    }

    #[test]
    fn body_lines_starting_with_note_letters_are_music() {
        let k = kinds("X:1\nK:C\nA:|B\nw: la la\n");
        assert!(matches!(k[2], AbcToken::Note(_)));
        assert_eq!(k[3], AbcToken::Bar(BarKind::RepeatEnd));
        assert!(matches!(k[5], AbcToken::Field { name: 'w', .. }));
    }

    #[test]
    fn free_text_between_tunes_is_skipped() {
        let k = kinds("X:1\nK:C\nAB\n\nSome notes about the tune\nX:2\nK:C\nc");
        let notes = k.iter().filter(|t| matches!(t, AbcToken::Note(_))).count();
        assert_eq!(notes, 3);
        assert!(k.contains(&AbcToken::EndOfTune));
    }
}
