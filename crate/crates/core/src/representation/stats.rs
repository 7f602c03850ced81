use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{EncodedSong, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Pitch,
    Duration,
}

impl Stream {
    pub fn indices<'a>(&self, song: &'a EncodedSong) -> &'a [usize] {
        match self {
            Stream::Pitch => &song.pitches,
            Stream::Duration => &song.durations,
        }
    }

    pub fn labels(&self, vocab: &Vocabulary) -> Vec<String> {
        match self {
            Stream::Pitch => vocab.pitch_tokens().iter().map(|t| t.to_string()).collect(),
            Stream::Duration => vocab
                .duration_tokens()
                .iter()
                .map(|t| t.to_string())
                .collect(),
        }
    }
}

/// First-order transition probabilities, `probs[current][next]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub labels: Vec<String>,
    pub probs: Vec<Vec<f64>>,
    /// False for rows with no observed transitions (left all-zero).
    pub observed: Vec<bool>,
}

impl TransitionMatrix {
    pub fn row_sum(&self, row: usize) -> f64 {
        self.probs[row].iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("from\\to");
        for l in &self.labels {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for (label, row) in self.labels.iter().zip(&self.probs) {
            out.push_str(label);
            for p in row {
                let _ = write!(out, ",{p}");
            }
            out.push('\n');
        }
        out
    }
}

fn transition_counts(corpus: &[EncodedSong], which: Stream, size: usize) -> Vec<Vec<u64>> {
    let mut counts = vec![vec![0u64; size]; size];
    for song in corpus {
        for w in which.indices(song).windows(2) {
            if w[0] < size && w[1] < size {
                counts[w[0]][w[1]] += 1;
            }
        }
    }
    counts
}

/// Maximum-likelihood transition matrix over adjacent token pairs.
pub fn transition_stats(
    corpus: &[EncodedSong],
    vocab: &Vocabulary,
    which: Stream,
) -> TransitionMatrix {
    let labels = which.labels(vocab);
    let counts = transition_counts(corpus, which, labels.len());
    let mut probs = Vec::with_capacity(labels.len());
    let mut observed = Vec::with_capacity(labels.len());
    for row in counts {
        let total: u64 = row.iter().sum();
        observed.push(total > 0);
        probs.push(if total == 0 {
            vec![0.0; row.len()]
        } else {
            row.iter().map(|&c| c as f64 / total as f64).collect()
        });
    }
    TransitionMatrix {
        labels,
        probs,
        observed,
    }
}

/// Mean per-song negative log-likelihood of `test` under an add-`alpha`
/// smoothed first-order Markov chain fitted on `train`. Songs are weighted
/// equally, each averaged over its own transitions.
pub fn markov_nll(
    train: &[EncodedSong],
    test: &[EncodedSong],
    which: Stream,
    size: usize,
    alpha: f64,
) -> f64 {
    let counts = transition_counts(train, which, size);
    let totals: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
    let mut sum = 0.0;
    let mut songs = 0usize;
    for song in test {
        let idx = which.indices(song);
        if idx.len() < 2 {
            continue;
        }
        let mut nll = 0.0;
        for w in idx.windows(2) {
            let c = counts[w[0]][w[1]] as f64;
            let p = (c + alpha) / (totals[w[0]] as f64 + alpha * size as f64);
            nll -= p.ln();
        }
        sum += nll / (idx.len() - 1) as f64;
        songs += 1;
    }
    if songs == 0 {
        0.0
    } else {
        sum / songs as f64
    }
}

/// Token frequencies, excluding each song's terminating position.
pub fn unigram_counts(corpus: &[EncodedSong], which: Stream, size: usize) -> Vec<u64> {
    let mut counts = vec![0u64; size];
    for song in corpus {
        let idx = which.indices(song);
        let body = &idx[..idx.len().saturating_sub(1)];
        for &i in body {
            if i < size {
                counts[i] += 1;
            }
        }
    }
    counts
}

/// Corpus summary written by the `stats` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub pitch_vocab: Vec<String>,
    pub duration_vocab: Vec<String>,
    pub num_songs: usize,
    /// Notes per song, song-ending excluded.
    pub mean_len: f64,
    pub std_len: f64,
    pub transition_matrices: BTreeMap<String, TransitionMatrix>,
}

impl CorpusStats {
    pub fn compute(corpus: &[EncodedSong], vocab: &Vocabulary) -> Self {
        let lens: Vec<f64> = corpus
            .iter()
            .map(|s| s.len().saturating_sub(1) as f64)
            .collect();
        let n = lens.len().max(1) as f64;
        let mean_len = lens.iter().sum::<f64>() / n;
        let std_len = (lens.iter().map(|l| (l - mean_len).powi(2)).sum::<f64>() / n).sqrt();
        let mut transition_matrices = BTreeMap::new();
        transition_matrices.insert(
            "pitch".to_string(),
            transition_stats(corpus, vocab, Stream::Pitch),
        );
        transition_matrices.insert(
            "duration".to_string(),
            transition_stats(corpus, vocab, Stream::Duration),
        );
        CorpusStats {
            pitch_vocab: Stream::Pitch.labels(vocab),
            duration_vocab: Stream::Duration.labels(vocab),
            num_songs: corpus.len(),
            mean_len,
            std_len,
            transition_matrices,
        }
    }
}
