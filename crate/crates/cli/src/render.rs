//! Conversions between abc text and encoded songs for the CLI and service.

use folkgen_core::abc::{emit_abc, parse_tune, tokenize_abc, AbcHeader, ParseError, Score};
use folkgen_core::representation::{
    decode_song, encode_song, normalize, DurationToken, EncodeError, EncodedSong, PitchToken,
    Vocabulary,
};
use folkgen_core::Rational;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeedError {
    #[error("expected exactly one tune, found {0}")]
    TuneCount(usize),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Vocabulary(#[from] EncodeError),
}

#[derive(Debug, Error)]
#[error("cannot render song: {0}")]
pub struct RenderError(pub String);

/// How encoded tokens map back to concrete abc: header to print, the length
/// of duration token "1", and the transposition that was applied.
#[derive(Debug, Clone, PartialEq)]
pub struct SongFrame {
    pub header: AbcHeader,
    pub base: Rational,
    pub shift: i32,
}

impl SongFrame {
    /// C major (or A minor) with token "1" written as one unit note.
    pub fn plain(unit: Rational) -> Self {
        let header = AbcHeader {
            unit_note_length: unit,
            ..AbcHeader::default()
        };
        SongFrame {
            header,
            base: unit,
            shift: 0,
        }
    }
}

/// Parses a single tune. A missing `X:` line is supplied.
pub fn parse_one_tune(text: &str) -> Result<Score, SeedError> {
    let tunes = text.lines().filter(|l| l.starts_with("X:")).count();
    let owned;
    let src = match tunes {
        0 => {
            owned = format!("X:1\n{text}");
            owned.as_str()
        }
        1 => text,
        n => return Err(SeedError::TuneCount(n)),
    };
    Ok(parse_tune(&tokenize_abc(src).map_err(ParseError::from)?)?)
}

/// Encodes a seed tune. The returned song has no song-ending token, and the
/// frame reproduces the tune's own key and note lengths on output.
pub fn encode_seed(
    score: &Score,
    vocab: &Vocabulary,
) -> Result<(EncodedSong, SongFrame), SeedError> {
    let song = normalize(score);
    let mut enc = encode_song(&song, vocab)?;
    enc.pitches.pop();
    enc.durations.pop();
    Ok((
        enc,
        SongFrame {
            header: score.header.clone(),
            base: song.base,
            shift: song.shift,
        },
    ))
}

pub fn render_abc(
    song: &EncodedSong,
    vocab: &Vocabulary,
    frame: &SongFrame,
    reference: u32,
    title: &str,
) -> Result<String, RenderError> {
    let mut score = decode_song(song, vocab, frame.base, frame.shift)
        .map_err(|e| RenderError(e.to_string()))?;
    score.header = AbcHeader {
        reference_number: reference,
        title: title.to_string(),
        ..frame.header.clone()
    };
    emit_abc(&score).map_err(|e| RenderError(e.to_string()))
}

/// A note as shown to users: pitch and duration tokens.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TokenNote {
    pub pitch: String,
    pub duration: String,
}

pub fn token_notes(song: &EncodedSong, vocab: &Vocabulary) -> Vec<TokenNote> {
    song.pitches
        .iter()
        .zip(&song.durations)
        .map(|(&p, &d)| TokenNote {
            pitch: vocab.pitch(p).map(|t| t.to_string()).unwrap_or_default(),
            duration: vocab.duration(d).map(|t| t.to_string()).unwrap_or_default(),
        })
        .collect()
}

/// Parses `pitch:duration` with tokens as printed by the vocabulary,
/// e.g. `60:1` or `silence:1/2`.
pub fn parse_token_note(s: &str, vocab: &Vocabulary) -> Result<(usize, usize), String> {
    let (p, d) = s
        .split_once(':')
        .ok_or_else(|| format!("expected pitch:duration, got `{s}`"))?;
    let p: PitchToken = p.trim().parse()?;
    let d: DurationToken = d.trim().parse()?;
    if p == PitchToken::SongEnding {
        return Err("an opening note cannot be the song ending".into());
    }
    let pi = vocab
        .pitch_index(&p)
        .ok_or_else(|| format!("pitch `{p}` is not in the vocabulary"))?;
    let di = vocab
        .duration_index(&d)
        .ok_or_else(|| format!("duration `{d}` is not in the vocabulary"))?;
    Ok((pi, di))
}
