use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use folkgen_core::abc::{parse_corpus_files, Score, SkipReport};
use folkgen_core::generation::{
    batch_generate, continue_with_rng, BatchStats, GeneratedSong, GenerationConfig,
};
use folkgen_core::representation::{
    build_vocabulary, encode_song, normalize, CorpusStats, EncodedSong,
};
use folkgen_core::training::{markov_baseline, TrainConfig, Trainer};
use folkgen_core::{Model, ModelCheckpoint, Rational};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::{data, CliError};
use crate::render::{encode_seed, parse_one_tune, parse_token_note, render_abc, SongFrame};

#[derive(Debug, Parser)]
#[command(
    name = "folkgen",
    version,
    about = "Train and sample folk melody models from abc corpora"
)]
pub struct Cli {
    /// Random seed for training and sampling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Only print errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a corpus and report skipped tunes.
    Parse {
        dir: PathBuf,
        /// Write skip reports here, one JSON object per line.
        #[arg(long)]
        skips: Option<PathBuf>,
    },
    /// Vocabulary, length and transition statistics of a corpus.
    Stats {
        dir: PathBuf,
        /// Write pitch.csv, duration.csv and stats.json into this directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Teacher-forced NLL of a checkpoint on a corpus.
    Eval { checkpoint: PathBuf, dir: PathBuf },
    /// Compose songs from scratch.
    Generate(GenerateArgs),
    /// Continue the melody in an abc file.
    Continue(ContinueArgs),
    /// Run the HTTP service.
    Serve {
        checkpoint: PathBuf,
        /// Overridden by FOLKGEN_PORT when set.
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Idle sessions are dropped after this many seconds.
        #[arg(long, default_value_t = 3600)]
        session_ttl: u64,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch JSONL report. Defaults to the checkpoint path with `.report.jsonl`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value_t = 200)]
    pub songs_per_epoch: usize,
    #[arg(long, default_value_t = 200)]
    pub eval_sample: usize,
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    #[arg(long)]
    pub clip_norm: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SamplingArgs {
    #[arg(short, long = "num", default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub temp: f64,
    /// Longest song in notes, opening and ending included.
    #[arg(long, default_value_t = 1000)]
    pub max_notes: usize,
    /// Always take the most likely note.
    #[arg(long)]
    pub greedy: bool,
    /// Write abc here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// First two notes as `pitch:duration,pitch:duration`, e.g. `60:1,64:1/2`.
    /// Drawn from the training openings when absent.
    #[arg(long)]
    pub first: Option<String>,
    /// abc length of duration token 1.
    #[arg(long, default_value = "1/8")]
    pub unit: String,
}

#[derive(Debug, Args)]
pub struct ContinueArgs {
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub seed_abc: PathBuf,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        log::LevelFilter::Info
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_target(false)
        .try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Parse { dir, skips } => cmd_parse(cli, dir, skips.as_deref()),
        Command::Stats { dir, out_dir } => cmd_stats(cli, dir, out_dir.as_deref()),
        Command::Train(a) => cmd_train(cli, a),
        Command::Eval { checkpoint, dir } => cmd_eval(cli, checkpoint, dir),
        Command::Generate(a) => cmd_generate(cli, a),
        Command::Continue(a) => cmd_continue(cli, a),
        Command::Serve {
            checkpoint,
            port,
            host,
            session_ttl,
        } => cmd_serve(checkpoint, *port, host, *session_ttl),
    }
}

fn require_dir(p: &Path) -> Result<(), CliError> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{} is not a directory",
            p.display()
        )))
    }
}

fn require_file(p: &Path) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{} is not a file", p.display())))
    }
}

fn require_parent(p: &Path) -> Result<(), CliError> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() && !d.is_dir() => Err(CliError::Usage(format!(
            "directory {} does not exist",
            d.display()
        ))),
        _ => Ok(()),
    }
}

fn write_file(p: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(p, contents)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", p.display())))
}

fn print(s: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(s.as_bytes());
    if !s.ends_with('\n') {
        let _ = out.write_all(b"\n");
    }
}

fn load_corpus(dir: &Path) -> Result<(Vec<Score>, Vec<SkipReport>), CliError> {
    let (scores, skips) = parse_corpus_files(dir)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", dir.display())))?;
    if scores.is_empty() {
        return Err(CliError::Data(format!(
            "no tunes found in {}",
            dir.display()
        )));
    }
    info!("{} tunes parsed, {} skipped", scores.len(), skips.len());
    Ok((scores, skips))
}

fn load_checkpoint(p: &Path) -> Result<(ModelCheckpoint, Model), CliError> {
    require_file(p)?;
    let ck =
        ModelCheckpoint::load(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
    let model = ck.model().map_err(data)?;
    Ok((ck, model))
}

fn cmd_parse(cli: &Cli, dir: &Path, skips_out: Option<&Path>) -> Result<(), CliError> {
    require_dir(dir)?;
    if let Some(p) = skips_out {
        require_parent(p)?;
    }
    let (scores, skips) = load_corpus(dir)?;
    let lines: String = skips
        .iter()
        .map(|s| serde_json::to_string(s).expect("serializable") + "\n")
        .collect();
    if let Some(p) = skips_out {
        write_file(p, &lines)?;
    }
    if cli.json {
        print(&json!({"parsed": scores.len(), "skipped": skips.len(), "skips": skips}).to_string());
    } else {
        print(&format!(
            "parsed {} tunes, skipped {}",
            scores.len(),
            skips.len()
        ));
        if skips_out.is_none() && !cli.quiet {
            eprint!("{lines}");
        }
    }
    Ok(())
}

fn cmd_stats(cli: &Cli, dir: &Path, out_dir: Option<&Path>) -> Result<(), CliError> {
    require_dir(dir)?;
    if let Some(d) = out_dir {
        require_dir(d)?;
    }
    let (scores, _) = load_corpus(dir)?;
    let songs: Vec<_> = scores.iter().map(normalize).collect();
    let vocab = build_vocabulary(&songs).map_err(data)?;
    let encoded: Vec<EncodedSong> = songs
        .iter()
        .map(|s| encode_song(s, &vocab))
        .collect::<Result<_, _>>()
        .map_err(data)?;
    let stats = CorpusStats::compute(&encoded, &vocab);
    if let Some(d) = out_dir {
        for (name, m) in &stats.transition_matrices {
            write_file(&d.join(format!("{name}.csv")), &m.to_csv())?;
        }
        write_file(
            &d.join("stats.json"),
            &serde_json::to_string_pretty(&stats).expect("serializable"),
        )?;
    }
    if cli.json {
        print(&serde_json::to_string(&stats).expect("serializable"));
    } else {
        print(&format!(
            "songs {}\nnotes per song {:.1} (sd {:.1})\npitch tokens {}\nduration tokens {}",
            stats.num_songs,
            stats.mean_len,
            stats.std_len,
            stats.pitch_vocab.len(),
            stats.duration_vocab.len()
        ));
    }
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<(), CliError> {
    require_dir(&a.dir)?;
    require_parent(&a.out)?;
    let report_path = a
        .report
        .clone()
        .unwrap_or_else(|| a.out.with_extension("report.jsonl"));
    require_parent(&report_path)?;
    let config = TrainConfig {
        epochs: a.epochs,
        songs_per_epoch: a.songs_per_epoch,
        eval_sample: a.eval_sample,
        split: a.split,
        seed: cli.seed,
        hidden: a.hidden,
        clip_norm: a.clip_norm,
        ..TrainConfig::default()
    };
    config
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let (scores, _) = load_corpus(&a.dir)?;
    let songs: Vec<_> = scores.iter().map(normalize).collect();
    let mut trainer = Trainer::<f64>::from_songs(&songs, config).map_err(data)?;
    let c = &trainer.corpus;
    info!(
        "{} training songs, {} test songs ({} dropped for unseen tokens), {} pitches, {} durations",
        c.train.len(),
        c.test.len(),
        c.dropped_test,
        c.vocab.pitch_size(),
        c.vocab.duration_size()
    );
    trainer.run();
    let ck = trainer.checkpoint();
    write_file(&a.out, &ck.to_json())?;
    write_file(&report_path, &trainer.report.to_jsonl())?;

    let c = &trainer.corpus;
    let test = if c.test.is_empty() { &c.train } else { &c.test };
    let ((markov_r, alpha_r), (markov_m, alpha_m)) = markov_baseline(&c.train, test, &c.vocab);
    let summary = json!({
        "checkpoint": a.out,
        "report": report_path,
        "epochs": trainer.epoch,
        "best_epoch": trainer.report.best_epoch,
        "best_test_nll": trainer.report.best_test_nll,
        "markov_test_nll": markov_r + markov_m,
        "markov_alpha": [alpha_r, alpha_m],
    });
    if cli.json {
        print(&summary.to_string());
    } else if !cli.quiet {
        eprintln!("{summary}");
    }
    if trainer.epoch > 0 && trainer.report.best_test_nll.is_none() {
        return Err(CliError::Numeric("test NLL was never finite".into()));
    }
    Ok(())
}

fn cmd_eval(cli: &Cli, checkpoint: &Path, dir: &Path) -> Result<(), CliError> {
    require_dir(dir)?;
    let (_, model) = load_checkpoint(checkpoint)?;
    let (scores, _) = load_corpus(dir)?;
    let mut dropped = 0;
    let mut encoded = Vec::new();
    for s in &scores {
        match encode_song(&normalize(s), &model.vocab) {
            Ok(e) if e.len() >= 2 => encoded.push(e),
            _ => dropped += 1,
        }
    }
    if encoded.is_empty() {
        return Err(CliError::Data(
            "no song is expressible in the checkpoint vocabulary".into(),
        ));
    }
    let (mut r, mut m) = (0.0, 0.0);
    for e in &encoded {
        let (a, b) = model.teacher_forced_nll(e).map_err(data)?;
        r += a;
        m += b;
    }
    let n = encoded.len() as f64;
    let (r, m) = (r / n, m / n);
    let out = json!({
        "songs": encoded.len(),
        "dropped": dropped,
        "rhythm_nll": r,
        "melody_nll": m,
        "uniform_rhythm_nll": (model.vocab.duration_size() as f64).ln(),
        "uniform_melody_nll": (model.vocab.pitch_size() as f64).ln(),
    });
    if cli.json {
        print(&out.to_string());
    } else {
        print(&format!(
            "{} songs ({} dropped)\nrhythm NLL {r:.4}\nmelody NLL {m:.4}",
            encoded.len(),
            dropped
        ));
    }
    if !(r.is_finite() && m.is_finite()) {
        return Err(CliError::Numeric("NLL is not finite".into()));
    }
    Ok(())
}

fn sampling_config(cli: &Cli, s: &SamplingArgs) -> Result<GenerationConfig, CliError> {
    let cfg = GenerationConfig {
        seed: cli.seed,
        max_notes: s.max_notes,
        temperature: s.temp,
        num_samples: s.n,
        greedy: s.greedy,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Song `i` is continued with stream `i` under the configured seed.
fn continue_each(
    model: &Model,
    seed: &EncodedSong,
    cfg: &GenerationConfig,
) -> Result<Vec<GeneratedSong>, CliError> {
    (0..cfg.num_samples)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            continue_with_rng(model, seed, cfg, &mut rng).map_err(data)
        })
        .collect()
}

fn emit_songs(
    cli: &Cli,
    s: &SamplingArgs,
    model: &Model,
    songs: &[GeneratedSong],
    frame: &SongFrame,
    title: &str,
    stats: Option<&BatchStats>,
) -> Result<(), CliError> {
    let mut abc = String::new();
    let mut items = Vec::new();
    for (i, g) in songs.iter().enumerate() {
        let text = render_abc(
            &g.encoded,
            &model.vocab,
            frame,
            i as u32 + 1,
            &format!("{title} {}", i + 1),
        )
        .map_err(data)?;
        if g.termination == folkgen_core::generation::Termination::Truncated {
            warn!(
                "song {} reached {} notes without ending",
                i + 1,
                s.max_notes
            );
        }
        items.push(json!({"abc": text, "termination": g.termination, "notes": g.note_count()}));
        abc.push_str(&text);
        abc.push('\n');
    }
    if let Some(p) = &s.out {
        write_file(p, &abc)?;
    }
    if cli.json {
        print(&json!({"songs": items, "stats": stats}).to_string());
    } else {
        if s.out.is_none() {
            print(&abc);
        }
        if let (Some(st), false) = (stats, cli.quiet) {
            eprintln!("{}", serde_json::to_string(st).expect("serializable"));
        }
    }
    Ok(())
}

fn cmd_generate(cli: &Cli, a: &GenerateArgs) -> Result<(), CliError> {
    if let Some(p) = &a.sampling.out {
        require_parent(p)?;
    }
    let unit: Rational = a
        .unit
        .parse()
        .map_err(|_| CliError::Usage(format!("bad --unit `{}`", a.unit)))?;
    if unit <= Rational::from_integer(0) {
        return Err(CliError::Usage("--unit must be positive".into()));
    }
    let cfg = sampling_config(cli, &a.sampling)?;
    let (ck, model) = load_checkpoint(&a.checkpoint)?;
    let frame = SongFrame::plain(unit);
    match &a.first {
        Some(spec) => {
            let notes: Vec<&str> = spec.split(',').collect();
            if notes.len() != 2 {
                return Err(CliError::Usage("--first takes exactly two notes".into()));
            }
            let first: Vec<(usize, usize)> = notes
                .iter()
                .map(|n| parse_token_note(n, &model.vocab))
                .collect::<Result<_, _>>()
                .map_err(CliError::Usage)?;
            let seed = EncodedSong {
                pitches: first.iter().map(|x| x.0).collect(),
                durations: first.iter().map(|x| x.1).collect(),
            };
            let songs = continue_each(&model, &seed, &cfg)?;
            emit_songs(cli, &a.sampling, &model, &songs, &frame, "Generated", None)
        }
        None => {
            let (songs, stats) =
                batch_generate(&model, &ck.openings, &ck.train_fingerprints, &cfg).map_err(data)?;
            emit_songs(
                cli,
                &a.sampling,
                &model,
                &songs,
                &frame,
                "Generated",
                Some(&stats),
            )
        }
    }
}

fn cmd_continue(cli: &Cli, a: &ContinueArgs) -> Result<(), CliError> {
    require_file(&a.seed_abc)?;
    if let Some(p) = &a.sampling.out {
        require_parent(p)?;
    }
    let cfg = sampling_config(cli, &a.sampling)?;
    let (_, model) = load_checkpoint(&a.checkpoint)?;
    let text = std::fs::read_to_string(&a.seed_abc).map_err(data)?;
    let score = parse_one_tune(&text).map_err(data)?;
    let (seed, frame) = encode_seed(&score, &model.vocab).map_err(data)?;
    if seed.is_empty() {
        return Err(CliError::Data("seed tune has no notes".into()));
    }
    let title = if score.header.title.is_empty() {
        "Continuation".to_string()
    } else {
        score.header.title.clone()
    };
    let songs = continue_each(&model, &seed, &cfg)?;
    emit_songs(cli, &a.sampling, &model, &songs, &frame, &title, None)
}

fn cmd_serve(checkpoint: &Path, port: u16, host: &str, ttl: u64) -> Result<(), CliError> {
    let port = match std::env::var("FOLKGEN_PORT") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("FOLKGEN_PORT `{v}` is not a port")))?,
        Err(_) => port,
    };
    let (ck, _) = load_checkpoint(checkpoint)?;
    let addr = format!("{host}:{port}");
    let runtime = tokio::runtime::Runtime::new().map_err(data)?;
    runtime
        .block_on(crate::server::serve(ck, &addr, Duration::from_secs(ttl)))
        .map_err(|e| CliError::Data(format!("server on {addr}: {e}")))
}
