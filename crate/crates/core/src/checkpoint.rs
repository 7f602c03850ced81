//! JSON persistence for trained models.
//!
//! Every map is a `BTreeMap`, so serializing the same model twice gives the
//! same bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gru::{GruNetwork, NetworkDims};
use crate::model::{MelodyModel, ModelError};
use crate::representation::{DurationToken, EncodedSong, PitchToken, Vocabulary};
use crate::Scalar;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("parameter block {0} missing or misshapen")]
    Block(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixFragment<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

/// One network's parameters, keyed by block name. Vectors are stored as
/// single-column matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct NetFragment<T> {
    pub dims: NetworkDims,
    pub matrices: BTreeMap<String, MatrixFragment<T>>,
    pub seed: u64,
    pub version: u32,
}

impl<T: Scalar> NetFragment<T> {
    pub fn from_network(net: &GruNetwork<T>, seed: u64) -> Self {
        let mut shapes: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for (i, l) in net.layers.iter().enumerate() {
            for (name, m) in [
                ("w_yh", &l.w_yh),
                ("w_hh", &l.w_hh),
                ("w_yz", &l.w_yz),
                ("w_hz", &l.w_hz),
                ("w_yr", &l.w_yr),
                ("w_hr", &l.w_hr),
            ] {
                shapes.insert(format!("layer{i}.{name}"), (m.rows, m.cols));
            }
        }
        shapes.insert(
            "output.w_yo".into(),
            (net.output.w_yo.rows, net.output.w_yo.cols),
        );
        let matrices = net
            .blocks()
            .into_iter()
            .map(|(name, data)| {
                let (rows, cols) = shapes.get(&name).copied().unwrap_or((data.len(), 1));
                (
                    name,
                    MatrixFragment {
                        rows,
                        cols,
                        data: data.to_vec(),
                    },
                )
            })
            .collect();
        NetFragment {
            dims: net.dims.clone(),
            matrices,
            seed,
            version: FORMAT_VERSION,
        }
    }

    pub fn to_network(&self) -> Result<GruNetwork<T>, CheckpointError> {
        if self.version != FORMAT_VERSION {
            return Err(CheckpointError::Version(self.version));
        }
        let mut net = GruNetwork::zeros(self.dims.clone());
        let names: Vec<String> = net.blocks().into_iter().map(|(n, _)| n).collect();
        if names.len() != self.matrices.len() {
            return Err(CheckpointError::Block("(block count)".into()));
        }
        for (name, block) in names.iter().zip(net.blocks_mut()) {
            let m = self
                .matrices
                .get(name)
                .ok_or_else(|| CheckpointError::Block(name.clone()))?;
            if m.data.len() != block.len() || m.rows * m.cols != m.data.len() {
                return Err(CheckpointError::Block(name.clone()));
            }
            block.copy_from_slice(&m.data);
        }
        net.validate_shapes().map_err(ModelError::from)?;
        Ok(net)
    }
}

/// A note as stored in the checkpoint: `[pitch, duration]`.
pub type TokenPair = (PitchToken, DurationToken);

/// How often a pair of opening notes occurs in the training songs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Opening {
    pub notes: [TokenPair; 2],
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub best_test_nll: Option<f64>,
    /// sha256 over the sorted fingerprints of the training songs.
    pub corpus_hash: String,
    pub hidden: usize,
    pub seed: u64,
    pub train_songs: usize,
    pub test_songs: usize,
    /// Test songs left out because they use tokens unseen in training.
    pub dropped_test_songs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct Checkpoint<T> {
    pub version: u32,
    pub vocab: Vocabulary,
    pub rhythm: NetFragment<T>,
    pub melody: NetFragment<T>,
    pub training_meta: TrainingMeta,
    pub openings: Vec<Opening>,
    pub train_fingerprints: Vec<String>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(
        model: &MelodyModel<T>,
        meta: TrainingMeta,
        openings: Vec<Opening>,
        train_fingerprints: Vec<String>,
    ) -> Self {
        Checkpoint {
            version: FORMAT_VERSION,
            vocab: model.vocab.clone(),
            rhythm: NetFragment::from_network(&model.rhythm, meta.seed),
            melody: NetFragment::from_network(&model.melody, meta.seed),
            training_meta: meta,
            openings,
            train_fingerprints,
        }
    }

    pub fn model(&self) -> Result<MelodyModel<T>, CheckpointError> {
        if self.version != FORMAT_VERSION {
            return Err(CheckpointError::Version(self.version));
        }
        let model = MelodyModel {
            rhythm: self.rhythm.to_network()?,
            melody: self.melody.to_network()?,
            vocab: self.vocab.clone(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, CheckpointError> {
        let ck: Self = serde_json::from_str(s)?;
        ck.model()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Content hash of a song's token sequence. Independent of vocabulary
/// indices, so songs from different vocabularies compare correctly.
pub fn song_fingerprint(song: &EncodedSong, vocab: &Vocabulary) -> String {
    let mut h = Sha256::new();
    for (&p, &d) in song.pitches.iter().zip(&song.durations) {
        let p = vocab
            .pitch(p)
            .map(|t| t.to_string())
            .unwrap_or_else(|| format!("#{p}"));
        let d = vocab
            .duration(d)
            .map(|t| t.to_string())
            .unwrap_or_else(|| format!("#{d}"));
        h.update(p.as_bytes());
        h.update(b"/");
        h.update(d.as_bytes());
        h.update(b" ");
    }
    format!("{:x}", h.finalize())
}

pub fn corpus_hash(fingerprints: &[String]) -> String {
    let mut sorted: Vec<&String> = fingerprints.iter().collect();
    sorted.sort();
    let mut h = Sha256::new();
    for f in sorted {
        h.update(f.as_bytes());
        h.update(b"\n");
    }
    format!("{:x}", h.finalize())
}

/// Empirical distribution of the first two notes over `songs`.
pub fn opening_distribution(songs: &[EncodedSong], vocab: &Vocabulary) -> Vec<Opening> {
    let mut counts: BTreeMap<[TokenPair; 2], u64> = BTreeMap::new();
    for s in songs {
        // The second note must be a real note, not the ending.
        if s.len() < 3 {
            continue;
        }
        let pair = |i: usize| -> Option<TokenPair> {
            Some((vocab.pitch(s.pitches[i])?, vocab.duration(s.durations[i])?))
        };
        if let (Some(a), Some(b)) = (pair(0), pair(1)) {
            *counts.entry([a, b]).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .map(|(notes, count)| Opening { notes, count })
        .collect()
}
