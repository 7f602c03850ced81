#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use folkgen_core::abc::parse_corpus_files;
use folkgen_core::representation::normalize;
use folkgen_core::training::{TrainConfig, Trainer};
use folkgen_core::ModelCheckpoint;

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/corpus")
}

pub fn folkgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_folkgen"))
        .args(args)
        .env_remove("FOLKGEN_PORT")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn scratch() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().unwrap()).path()
}

/// Small model trained on the fixture corpus.
pub fn checkpoint() -> &'static ModelCheckpoint {
    static CK: OnceLock<ModelCheckpoint> = OnceLock::new();
    CK.get_or_init(|| {
        let (scores, _) = parse_corpus_files(&corpus_dir()).unwrap();
        let songs: Vec<_> = scores.iter().map(normalize).collect();
        let cfg = TrainConfig {
            epochs: 3,
            songs_per_epoch: 16,
            eval_sample: 4,
            hidden: 8,
            seed: 5,
            ..Default::default()
        };
        let mut t = Trainer::<f64>::from_songs(&songs, cfg).unwrap();
        t.run();
        t.checkpoint()
    })
}

pub fn checkpoint_file() -> &'static Path {
    static P: OnceLock<PathBuf> = OnceLock::new();
    P.get_or_init(|| {
        let p = scratch().join("fixture-ckpt.json");
        checkpoint().save(&p).unwrap();
        p
    })
}
