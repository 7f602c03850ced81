mod common;

use std::collections::BTreeMap;

use common::{checkpoint_file, corpus_dir, folkgen, scratch, stderr, stdout};
use folkgen_core::abc::{parse_corpus, parse_corpus_files, NoteEvent};
use folkgen_core::representation::normalize;
use folkgen_core::Rational;
use serde_json::Value;

fn corpus() -> String {
    corpus_dir().display().to_string()
}

#[test]
fn parse_on_an_empty_directory_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = folkgen(&["parse", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no tunes found"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(
        folkgen(&["parse", &corpus(), "--bogus"]).status.code(),
        Some(1)
    );
    assert_eq!(folkgen(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(folkgen(&[]).status.code(), Some(1));
    let missing = folkgen(&["parse", "/definitely/not/here"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).contains("not a directory"));
    let no_parent = folkgen(&[
        "train",
        &corpus(),
        "--out",
        "/definitely/not/here/ck.json",
        "--epochs",
        "1",
    ]);
    assert_eq!(no_parent.status.code(), Some(1));
    assert_eq!(folkgen(&["--help"]).status.code(), Some(0));
}

#[test]
fn parse_reports_counts_and_skips() {
    let out = folkgen(&["parse", &corpus(), "--json"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["parsed"], 20);
    assert_eq!(v["skipped"], 0);

    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("mixed.abc"),
        "X:1\nT:Good\nK:G\nGABc|\n\nX:2\nT:Two voices\nK:C\nV:1\nCDE|\nV:2\nEFG|\n",
    )
    .unwrap();
    let skips = dir.path().join("skips.jsonl");
    let out = folkgen(&[
        "parse",
        dir.path().to_str().unwrap(),
        "--skips",
        skips.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("parsed 1 tunes, skipped 1"));
    let lines: Vec<Value> = std::fs::read_to_string(&skips)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["tune_ref"], 2);
    assert_eq!(lines[0]["title"], "Two voices");
    assert_eq!(lines[0]["reason"], "multiple-voices");
}

fn read_csv(path: &std::path::Path) -> (Vec<String>, Vec<(String, Vec<f64>)>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .unwrap()
        .split(',')
        .skip(1)
        .map(String::from)
        .collect();
    let rows = lines
        .map(|l| {
            let mut cells = l.split(',');
            let label = cells.next().unwrap().to_string();
            (label, cells.map(|c| c.parse().unwrap()).collect())
        })
        .collect();
    (header, rows)
}

#[test]
fn stats_matrices_match_directly_counted_transitions() {
    let dir = tempfile::tempdir().unwrap();
    let out = folkgen(&[
        "stats",
        &corpus(),
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    for name in ["pitch.csv", "duration.csv"] {
        let (header, rows) = read_csv(&dir.path().join(name));
        assert_eq!(header.len(), rows.len());
        for (label, row) in &rows {
            let s: f64 = row.iter().sum();
            assert!(
                s == 0.0 || (s - 1.0).abs() < 1e-12,
                "{name} row {label} sums to {s}"
            );
        }
    }

    // Count duration bigrams straight from the normalized songs, with the
    // ending's "1" appended to every song.
    let (scores, _) = parse_corpus_files(&corpus_dir()).unwrap();
    let mut counts: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut totals: BTreeMap<String, f64> = BTreeMap::new();
    for s in &scores {
        let mut seq: Vec<String> = normalize(s)
            .notes
            .iter()
            .map(|(_, d)| d.to_string())
            .collect();
        seq.push("1".into());
        for w in seq.windows(2) {
            *counts.entry((w[0].clone(), w[1].clone())).or_default() += 1.0;
            *totals.entry(w[0].clone()).or_default() += 1.0;
        }
    }
    let (header, rows) = read_csv(&dir.path().join("duration.csv"));
    for (from, row) in &rows {
        for (to, p) in header.iter().zip(row) {
            let expected = match totals.get(from) {
                Some(t) => {
                    counts
                        .get(&(from.clone(), to.clone()))
                        .copied()
                        .unwrap_or(0.0)
                        / t
                }
                None => 0.0,
            };
            assert!(
                (p - expected).abs() < 1e-12,
                "{from} -> {to}: {p} vs {expected}"
            );
        }
    }

    let stats: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("stats.json")).unwrap())
            .unwrap();
    assert_eq!(stats["num_songs"], 20);
}

#[test]
fn training_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out_path = dir.path().join(name);
        let out = folkgen(&[
            "train",
            &corpus(),
            "--out",
            out_path.to_str().unwrap(),
            "--epochs",
            "2",
            "--hidden",
            "6",
            "--songs-per-epoch",
            "10",
            "--eval-sample",
            "4",
            "--seed",
            "17",
            "--json",
            "--quiet",
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let summary: Value = serde_json::from_str(&stdout(&out)).unwrap();
        assert_eq!(summary["epochs"], 2);
        std::fs::read(out_path).unwrap()
    };
    let a = run("a.json");
    let b = run("b.json");
    assert_eq!(a, b);

    let report = std::fs::read_to_string(dir.path().join("a.report.jsonl")).unwrap();
    let records: Vec<Value> = report
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 2);
    assert_eq!(records[1]["epoch"], 2);
    assert!(records[1]["test_melody_nll"].as_f64().unwrap().is_finite());
}

#[test]
fn eval_reports_finite_nll() {
    let ck = checkpoint_file().to_str().unwrap();
    let out = folkgen(&["eval", ck, &corpus(), "--json"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(
        v["songs"].as_u64().unwrap() + v["dropped"].as_u64().unwrap(),
        20
    );
    assert!(v["rhythm_nll"].as_f64().unwrap().is_finite());
    assert!(v["melody_nll"].as_f64().unwrap() > 0.0);

    let bad = scratch().join("not-a-checkpoint.json");
    std::fs::write(&bad, "{\"version\": 1}").unwrap();
    assert_eq!(
        folkgen(&["eval", bad.to_str().unwrap(), &corpus()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn generate_writes_parseable_abc() {
    let ck = checkpoint_file().to_str().unwrap();
    let out = folkgen(&[
        "generate",
        ck,
        "-n",
        "3",
        "--seed",
        "4",
        "--max-notes",
        "80",
        "--json",
        "--quiet",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let songs = v["songs"].as_array().unwrap();
    assert_eq!(songs.len(), 3);
    assert_eq!(v["stats"]["n"], 3);
    for s in songs {
        let (scores, skips) = parse_corpus(s["abc"].as_str().unwrap());
        assert!(skips.is_empty());
        assert_eq!(scores[0].events.len() as u64, s["notes"].as_u64().unwrap());
        assert!(scores[0].events.len() <= 80);
    }
    let again = folkgen(&[
        "generate",
        ck,
        "-n",
        "3",
        "--seed",
        "4",
        "--max-notes",
        "80",
        "--json",
        "--quiet",
    ]);
    assert_eq!(stdout(&out), stdout(&again));
}

#[test]
fn generate_with_manual_opening() {
    let ck = checkpoint_file().to_str().unwrap();
    let path = scratch().join("manual.abc");
    let out = folkgen(&[
        "generate",
        ck,
        "-n",
        "2",
        "--first",
        "60:1,62:2",
        "--max-notes",
        "40",
        "--out",
        path.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let (scores, skips) = parse_corpus(&std::fs::read_to_string(&path).unwrap());
    assert!(skips.is_empty());
    assert_eq!(scores.len(), 2);
    let eighth = Rational::new(1, 8);
    for s in &scores {
        assert_eq!(
            s.events[..2],
            [NoteEvent::note(60, eighth), NoteEvent::note(62, eighth * 2)]
        );
    }
    let bad = folkgen(&["generate", ck, "--first", "60:1"]);
    assert_eq!(bad.status.code(), Some(1));
    let oov = folkgen(&["generate", ck, "--first", "60:1,200:1"]);
    assert_eq!(oov.status.code(), Some(1));
}

#[test]
fn continue_keeps_the_seed() {
    let ck = checkpoint_file().to_str().unwrap();
    let seed_path = scratch().join("seed.abc");
    let seed = "X:7\nT:Seed tune\nM:6/8\nL:1/8\nK:D\ndfa afd|e2f g2e|\n";
    std::fs::write(&seed_path, seed).unwrap();
    let out = folkgen(&[
        "continue",
        ck,
        "--seed-abc",
        seed_path.to_str().unwrap(),
        "-n",
        "2",
        "--max-notes",
        "30",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let (seed_score, _) = parse_corpus(seed);
    let (scores, skips) = parse_corpus(&stdout(&out));
    assert!(skips.is_empty());
    assert_eq!(scores.len(), 2);
    for s in &scores {
        assert_eq!(s.header.key, seed_score[0].header.key);
        assert_eq!(s.events[..10], seed_score[0].events[..]);
        assert!(s.header.title.starts_with("Seed tune"));
    }

    let oov_path = scratch().join("oov.abc");
    std::fs::write(&oov_path, "X:1\nK:C\nA,,,B,,,C\n").unwrap();
    let out = folkgen(&["continue", ck, "--seed-abc", oov_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("not in vocabulary"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn serve_honours_folkgen_port() {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::process::{Command, Stdio};

    let ck = checkpoint_file().to_str().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_folkgen"))
        .args(["serve", ck, "--port", "9"])
        .env("FOLKGEN_PORT", "0")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let line = lines
        .find_map(|l| l.ok().filter(|l| l.contains("listening on")))
        .expect("server starts");
    let addr = line.rsplit("http://").next().unwrap().trim().to_string();
    assert!(!addr.ends_with(":9"), "{addr}");

    let mut stream = std::net::TcpStream::connect(&addr).unwrap();
    write!(
        stream,
        "GET /model HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n"
    )
    .unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    let _ = child.wait();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    let body: Value = serde_json::from_str(resp.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert!(body["vocab"]["durations"]
        .as_array()
        .unwrap()
        .contains(&Value::from("1")));
}
