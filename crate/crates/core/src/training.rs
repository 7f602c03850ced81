//! Per-song Adam training of both networks with best-on-test retention.

use std::time::Instant;

use log::{info, warn};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{
    corpus_hash, opening_distribution, song_fingerprint, Checkpoint, CheckpointError, NetFragment,
    TrainingMeta,
};
use crate::gru::GruNetwork;
use crate::model::{MelodyModel, ModelError};
use crate::representation::{
    build_vocabulary, encode_song, markov_nll, EncodedSong, NormalizedSong, Stream, VocabError,
    Vocabulary,
};
use crate::Scalar;

// RNG stream layout under one seed. Epoch `k` uses stream `EPOCH_STREAM + k`.
const INIT_STREAM: u64 = 1;
const EPOCH_STREAM: u64 = 16;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("corpus has no usable songs")]
    EmptyCorpus,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("trainer state: {0}")]
    State(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            alpha: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: GruNetwork<T>,
    pub v: GruNetwork<T>,
    pub t: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("non-finite gradient")]
pub struct NonFiniteGradient;

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &GruNetwork<T>) -> Self {
        AdamState {
            m: net.zeros_like(),
            v: net.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam step descending on `grads`. A non-finite
/// gradient leaves both the parameters and the state untouched.
pub fn adam_update<T: Scalar>(
    params: &mut GruNetwork<T>,
    grads: &GruNetwork<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<(), NonFiniteGradient> {
    if !grads.is_finite() {
        return Err(NonFiniteGradient);
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let (alpha, eps) = (T::lit(cfg.alpha), T::lit(cfg.eps));
    let g_blocks = grads.blocks();
    for (((p, m), v), (_, g)) in params
        .blocks_mut()
        .into_iter()
        .zip(state.m.blocks_mut())
        .zip(state.v.blocks_mut())
        .zip(g_blocks)
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (T::one() - b1) * gi;
            v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= alpha * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub songs_per_epoch: usize,
    pub eval_sample: usize,
    pub split: f64,
    pub seed: u64,
    pub hidden: usize,
    /// Rescale each song's gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
    /// Draw a separate song schedule for the melody network.
    pub independent_schedules: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            songs_per_epoch: 200,
            eval_sample: 200,
            split: 0.8,
            seed: 0,
            hidden: 128,
            clip_norm: None,
            independent_schedules: false,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(TrainError::Config(format!(
                "split must be in (0, 1), got {}",
                self.split
            )));
        }
        if self.songs_per_epoch == 0 || self.eval_sample == 0 || self.hidden == 0 {
            return Err(TrainError::Config(
                "counts and hidden width must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Seeded shuffle, then the first `floor(n * split)` items train. Both sides
/// get at least one item when `n >= 2`.
pub fn split_corpus<S: Clone>(songs: &[S], split: f64, seed: u64) -> (Vec<S>, Vec<S>) {
    let n = songs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_train = (n as f64 * split + 1e-9).floor() as usize;
    if n >= 2 {
        n_train = n_train.clamp(1, n - 1);
    }
    let pick = |ix: &[usize]| ix.iter().map(|&i| songs[i].clone()).collect::<Vec<S>>();
    (
        pick(&order[..n_train.min(n)]),
        pick(&order[n_train.min(n)..]),
    )
}

fn schedule<R: Rng + ?Sized>(rng: &mut R, n: usize, count: usize) -> Vec<usize> {
    if n >= count {
        index::sample(rng, n, count).into_vec()
    } else {
        (0..count).map(|_| rng.random_range(0..n)).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochUpdates {
    pub rhythm_updates: usize,
    pub melody_updates: usize,
    pub skipped: usize,
}

fn clip<T: Scalar>(grad: &mut GruNetwork<T>, max_norm: Option<f64>) {
    if let Some(max) = max_norm {
        let norm = grad.squared_norm().sqrt().to_f64_lossy();
        if norm > max {
            grad.scale(T::lit(max / norm));
        }
    }
}

/// Runs `songs_per_epoch` per-song updates on each network.
pub fn train_epoch<T: Scalar, R: Rng + ?Sized>(
    model: &mut MelodyModel<T>,
    train: &[EncodedSong],
    adam: &mut (AdamState<T>, AdamState<T>),
    config: &TrainConfig,
    rng: &mut R,
) -> EpochUpdates {
    let mut updates = EpochUpdates::default();
    if train.is_empty() {
        return updates;
    }
    let rhythm_order = schedule(rng, train.len(), config.songs_per_epoch);
    let melody_order = if config.independent_schedules {
        schedule(rng, train.len(), config.songs_per_epoch)
    } else {
        rhythm_order.clone()
    };
    for (&ri, &mi) in rhythm_order.iter().zip(&melody_order) {
        let (rg, mg) = if ri == mi {
            match model.song_gradients(&train[ri]) {
                Ok(g) => (Ok(g.rhythm), Ok(g.melody)),
                Err(e) => (Err(e.clone()), Err(e)),
            }
        } else {
            let r = model.song_gradients(&train[ri]).map(|g| g.rhythm);
            let m = model.song_gradients(&train[mi]).map(|g| g.melody);
            (r, m)
        };
        match rg {
            Ok(mut g) => {
                clip(&mut g, config.clip_norm);
                match adam_update(&mut model.rhythm, &g, &mut adam.0, &config.adam) {
                    Ok(()) => updates.rhythm_updates += 1,
                    Err(e) => {
                        warn!("song {ri}: rhythm update skipped: {e}");
                        updates.skipped += 1;
                    }
                }
            }
            Err(e) => {
                warn!("song {ri}: rhythm gradient failed: {e}");
                updates.skipped += 1;
            }
        }
        match mg {
            Ok(mut g) => {
                clip(&mut g, config.clip_norm);
                match adam_update(&mut model.melody, &g, &mut adam.1, &config.adam) {
                    Ok(()) => updates.melody_updates += 1,
                    Err(e) => {
                        warn!("song {mi}: melody update skipped: {e}");
                        updates.skipped += 1;
                    }
                }
            }
            Err(e) => {
                warn!("song {mi}: melody gradient failed: {e}");
                updates.skipped += 1;
            }
        }
    }
    updates
}

/// Mean teacher-forced `(rhythm, melody)` NLL over a sample of at most
/// `sample_size` distinct songs. Songs that fail to evaluate are skipped.
pub fn evaluate<T: Scalar, R: Rng + ?Sized>(
    model: &MelodyModel<T>,
    songs: &[EncodedSong],
    sample_size: usize,
    rng: &mut R,
) -> (f64, f64) {
    if songs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut picked = index::sample(rng, songs.len(), sample_size.min(songs.len())).into_vec();
    picked.sort_unstable();
    let results: Vec<Option<(f64, f64)>> = picked
        .par_iter()
        .map(|&i| {
            model
                .teacher_forced_nll(&songs[i])
                .ok()
                .map(|(r, m)| (r.to_f64_lossy(), m.to_f64_lossy()))
        })
        .collect();
    let ok: Vec<(f64, f64)> = results.into_iter().flatten().collect();
    let n = ok.len() as f64;
    (
        ok.iter().map(|x| x.0).sum::<f64>() / n,
        ok.iter().map(|x| x.1).sum::<f64>() / n,
    )
}

/// One line of the training report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_rhythm_nll: f64,
    pub train_melody_nll: f64,
    pub test_rhythm_nll: f64,
    pub test_melody_nll: f64,
    pub secs: f64,
}

impl EpochRecord {
    pub fn test_nll(&self) -> f64 {
        self.test_rhythm_nll + self.test_melody_nll
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_test_nll: Option<f64>,
}

impl TrainReport {
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("record serializes") + "\n")
            .collect()
    }
}

/// A corpus split and encoded against a vocabulary built from its
/// training part only.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub vocab: Vocabulary,
    pub train: Vec<EncodedSong>,
    pub test: Vec<EncodedSong>,
    /// Test songs dropped because they use tokens unseen in training.
    pub dropped_test: usize,
}

/// Splits, builds the vocabulary from the training side and encodes.
/// A single-song corpus trains and tests on the same song.
pub fn prepare_corpus(
    songs: &[NormalizedSong],
    split: f64,
    seed: u64,
) -> Result<PreparedCorpus, TrainError> {
    let songs: Vec<NormalizedSong> = songs
        .iter()
        .filter(|s| !s.notes.is_empty())
        .cloned()
        .collect();
    let (train, test) = match songs.len() {
        0 => return Err(TrainError::EmptyCorpus),
        1 => (songs.clone(), songs.clone()),
        _ => split_corpus(&songs, split, seed),
    };
    let vocab = build_vocabulary(&train)?;
    let train: Vec<EncodedSong> = train
        .iter()
        .map(|s| encode_song(s, &vocab).expect("training songs define the vocabulary"))
        .collect();
    let mut dropped_test = 0;
    let test: Vec<EncodedSong> = test
        .iter()
        .filter_map(|s| match encode_song(s, &vocab) {
            Ok(e) => Some(e),
            Err(e) => {
                info!("test song {} dropped: {e}", s.reference_number);
                dropped_test += 1;
                None
            }
        })
        .collect();
    Ok(PreparedCorpus {
        vocab,
        train,
        test,
        dropped_test,
    })
}

/// Best add-alpha smoothed first-order Markov NLL on `test`, per stream,
/// over a small grid of alphas. Returns `((rhythm_nll, alpha), (melody_nll, alpha))`.
pub fn markov_baseline(
    train: &[EncodedSong],
    test: &[EncodedSong],
    vocab: &Vocabulary,
) -> ((f64, f64), (f64, f64)) {
    const ALPHAS: [f64; 5] = [1e-3, 1e-2, 0.1, 0.5, 1.0];
    let best = |which: Stream, size: usize| {
        ALPHAS
            .iter()
            .map(|&a| (markov_nll(train, test, which, size, a), a))
            .fold((f64::INFINITY, 0.0), |b, x| if x.0 < b.0 { x } else { b })
    };
    (
        best(Stream::Duration, vocab.duration_size()),
        best(Stream::Pitch, vocab.pitch_size()),
    )
}

/// Training loop state. Everything needed to resume lives here.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub model: MelodyModel<T>,
    pub adam: (AdamState<T>, AdamState<T>),
    pub corpus: PreparedCorpus,
    pub best: MelodyModel<T>,
    pub report: TrainReport,
    /// Epochs completed.
    pub epoch: usize,
    pub updates: Vec<EpochUpdates>,
}

fn epoch_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl<T: Scalar> Trainer<T> {
    pub fn new(corpus: PreparedCorpus, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        if corpus.train.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }
        let mut rng = epoch_rng(config.seed, INIT_STREAM);
        let model = MelodyModel::init(corpus.vocab.clone(), config.hidden, &mut rng);
        let adam = (AdamState::new(&model.rhythm), AdamState::new(&model.melody));
        Ok(Trainer {
            best: model.clone(),
            model,
            adam,
            corpus,
            config,
            report: TrainReport::default(),
            epoch: 0,
            updates: Vec::new(),
        })
    }

    pub fn from_songs(songs: &[NormalizedSong], config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let corpus = prepare_corpus(songs, config.split, config.seed)?;
        Self::new(corpus, config)
    }

    /// Trains one more epoch, evaluates and updates the best snapshot.
    pub fn step_epoch(&mut self) -> &EpochRecord {
        let start = Instant::now();
        let k = self.epoch + 1;
        let mut rng = epoch_rng(self.config.seed, EPOCH_STREAM + k as u64);
        let updates = train_epoch(
            &mut self.model,
            &self.corpus.train,
            &mut self.adam,
            &self.config,
            &mut rng,
        );
        let (train_r, train_m) = evaluate(
            &self.model,
            &self.corpus.train,
            self.config.eval_sample,
            &mut rng,
        );
        let test = if self.corpus.test.is_empty() {
            &self.corpus.train
        } else {
            &self.corpus.test
        };
        let (test_r, test_m) = evaluate(&self.model, test, self.config.eval_sample, &mut rng);
        let record = EpochRecord {
            epoch: k,
            train_rhythm_nll: train_r,
            train_melody_nll: train_m,
            test_rhythm_nll: test_r,
            test_melody_nll: test_m,
            secs: start.elapsed().as_secs_f64(),
        };
        let total = record.test_nll();
        if total.is_finite() && self.report.best_test_nll.is_none_or(|b| total < b) {
            self.report.best_test_nll = Some(total);
            self.report.best_epoch = Some(k);
            self.best = self.model.clone();
        }
        info!(
            "epoch {k}: train {:.4}/{:.4} test {:.4}/{:.4} ({:.1}s)",
            train_r, train_m, test_r, test_m, record.secs
        );
        self.epoch = k;
        self.updates.push(updates);
        self.report.epochs.push(record);
        self.report.epochs.last().expect("just pushed")
    }

    /// Runs until `config.epochs` epochs are complete.
    pub fn run(&mut self) {
        while self.epoch < self.config.epochs {
            self.step_epoch();
        }
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        let vocab = &self.corpus.vocab;
        let fingerprints: Vec<String> = self
            .corpus
            .train
            .iter()
            .map(|s| song_fingerprint(s, vocab))
            .collect();
        let meta = TrainingMeta {
            epochs: self.epoch,
            best_epoch: self.report.best_epoch,
            best_test_nll: self.report.best_test_nll,
            corpus_hash: corpus_hash(&fingerprints),
            hidden: self.config.hidden,
            seed: self.config.seed,
            train_songs: self.corpus.train.len(),
            test_songs: self.corpus.test.len(),
            dropped_test_songs: self.corpus.dropped_test,
        };
        let mut unique = fingerprints;
        unique.sort();
        unique.dedup();
        Checkpoint::new(
            &self.best,
            meta,
            opening_distribution(&self.corpus.train, vocab),
            unique,
        )
    }

    pub fn save_state(&self) -> String {
        let seed = self.config.seed;
        let frag = |n: &GruNetwork<T>| NetFragment::from_network(n, seed);
        let state = TrainerState {
            config: self.config.clone(),
            vocab: self.corpus.vocab.clone(),
            train: self.corpus.train.clone(),
            test: self.corpus.test.clone(),
            dropped_test: self.corpus.dropped_test,
            model: [frag(&self.model.rhythm), frag(&self.model.melody)],
            best: [frag(&self.best.rhythm), frag(&self.best.melody)],
            adam: [
                AdamFragment {
                    m: frag(&self.adam.0.m),
                    v: frag(&self.adam.0.v),
                    t: self.adam.0.t,
                },
                AdamFragment {
                    m: frag(&self.adam.1.m),
                    v: frag(&self.adam.1.v),
                    t: self.adam.1.t,
                },
            ],
            report: self.report.clone(),
            epoch: self.epoch,
            updates: self.updates.clone(),
        };
        serde_json::to_string(&state).expect("trainer state serializes")
    }

    pub fn load_state(json: &str) -> Result<Self, TrainError> {
        let s: TrainerState<T> = serde_json::from_str(json)?;
        let vocab = s.vocab;
        let model_of = |f: &[NetFragment<T>; 2]| -> Result<MelodyModel<T>, TrainError> {
            let m = MelodyModel {
                rhythm: f[0].to_network()?,
                melody: f[1].to_network()?,
                vocab: vocab.clone(),
            };
            m.validate()?;
            Ok(m)
        };
        let adam_of = |a: &AdamFragment<T>| -> Result<AdamState<T>, TrainError> {
            Ok(AdamState {
                m: a.m.to_network()?,
                v: a.v.to_network()?,
                t: a.t,
            })
        };
        Ok(Trainer {
            model: model_of(&s.model)?,
            best: model_of(&s.best)?,
            adam: (adam_of(&s.adam[0])?, adam_of(&s.adam[1])?),
            corpus: PreparedCorpus {
                vocab: vocab.clone(),
                train: s.train,
                test: s.test,
                dropped_test: s.dropped_test,
            },
            config: s.config,
            report: s.report,
            epoch: s.epoch,
            updates: s.updates,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
struct AdamFragment<T> {
    m: NetFragment<T>,
    v: NetFragment<T>,
    t: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
struct TrainerState<T> {
    config: TrainConfig,
    vocab: Vocabulary,
    train: Vec<EncodedSong>,
    test: Vec<EncodedSong>,
    dropped_test: usize,
    model: [NetFragment<T>; 2],
    best: [NetFragment<T>; 2],
    adam: [AdamFragment<T>; 2],
    report: TrainReport,
    epoch: usize,
    updates: Vec<EpochUpdates>,
}

/// Full protocol: split, train for `config.epochs`, return the best-on-test
/// checkpoint with the per-epoch report.
pub fn train<T: Scalar>(
    songs: &[NormalizedSong],
    config: TrainConfig,
) -> Result<(Checkpoint<T>, TrainReport), TrainError> {
    let mut trainer = Trainer::<T>::from_songs(songs, config)?;
    trainer.run();
    Ok((trainer.checkpoint(), trainer.report.clone()))
}
