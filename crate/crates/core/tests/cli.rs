use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use tcs_core::io::{read_matrix_csv, save_matrix_csv};
use tcs_core::Alphabet;

fn tcs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcs")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Fixture {
            dir: TempDir::new().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn alphabet(&self, alphabet: &Alphabet) -> String {
        let p = self.path("alphabet.json");
        fs::write(&p, serde_json::to_string(alphabet).unwrap()).unwrap();
        p.display().to_string()
    }

    fn logits(&self, rows: &[&[f64]]) -> String {
        let m = ndarray::Array2::from_shape_fn((rows.len(), rows[0].len()), |(t, k)| rows[t][k]);
        let p = self.path("logits.csv");
        save_matrix_csv(&p, &m).unwrap();
        p.display().to_string()
    }

    fn text(&self, name: &str, body: &str) -> String {
        let p = self.path(name);
        fs::write(&p, body).unwrap();
        p.display().to_string()
    }
}

/// One-hot-ish logits spelling out a class string of the alphabet.
fn spelled(alphabet: &Alphabet, path: &str) -> Vec<Vec<f64>> {
    path.chars()
        .map(|ch| {
            let k = alphabet.index_of(&ch.to_string()).unwrap();
            (0..alphabet.len()).map(|j| if j == k { 5.0 } else { 0.0 }).collect()
        })
        .collect()
}

fn rows(m: &[Vec<f64>]) -> Vec<&[f64]> {
    m.iter().map(Vec::as_slice).collect()
}

#[test]
fn loss_on_uniform_fixture_is_ln_nine() {
    let f = Fixture::new();
    let a = f.alphabet(&Alphabet::tcs(["A"]).unwrap());
    let l = f.logits(&[&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0]]);
    let grad = f.path("grad.csv");
    let out = tcs(&[
        "loss",
        "--logits",
        &l,
        "--alphabet",
        &a,
        "--topology",
        "tcs",
        "--labels",
        "A",
        "--verify",
        "--grad",
        grad.to_str().unwrap(),
    ]);
    let v = stdout_json(&out);
    assert!((v["nll"].as_f64().unwrap() - 9f64.ln()).abs() < 1e-12);
    assert!(v["abs_diff"].as_f64().unwrap() < 1e-9);
    assert!(v["cross_entropy"].as_f64().unwrap() > 0.0);
    let g = read_matrix_csv(&grad).unwrap();
    assert_eq!(g.dim(), (2, 3));
    for row in g.outer_iter() {
        assert!(row.sum().abs() < 1e-12);
    }
}

#[test]
fn loss_accepts_indices_and_required_ends() {
    let f = Fixture::new();
    let a = f.alphabet(&Alphabet::tcs(["A"]).unwrap());
    let l = f.logits(&[&[0.0; 3], &[0.0; 3], &[0.0; 3]]);
    let base = [
        "loss",
        "--logits",
        &l,
        "--alphabet",
        &a,
        "--topology",
        "tcs",
        "--labels",
        "0",
    ];
    assert!(stdout_json(&tcs(&base))["nll"].as_f64().unwrap().is_finite());
    let mut strict = base.to_vec();
    strict.extend(["--tcs-ends", "required"]);
    assert_eq!(code(&tcs(&strict)), 3);
}

#[test]
fn infeasible_label_exits_three_and_names_min_frames() {
    let f = Fixture::new();
    let a = f.alphabet(&Alphabet::tcs(["A"]).unwrap());
    let l = f.logits(&[&[0.0, 0.0, 0.0]]);
    for cmd in ["loss", "align"] {
        let out = tcs(&[
            cmd,
            "--logits",
            &l,
            "--alphabet",
            &a,
            "--topology",
            "tcs",
            "--labels",
            "A",
        ]);
        assert_eq!(code(&out), 3);
        assert!(out.stdout.is_empty());
        assert!(String::from_utf8_lossy(&out.stderr).contains("min_frames = 2"));
    }
}

#[test]
fn oracle_guard_exits_four() {
    let f = Fixture::new();
    let a = f.alphabet(&Alphabet::ctc(["A"]).unwrap());
    let zeros = vec![vec![0.0, 0.0]; 2000];
    let l = f.logits(&rows(&zeros));
    let out = tcs(&[
        "loss",
        "--logits",
        &l,
        "--alphabet",
        &a,
        "--topology",
        "ctc",
        "--labels",
        "A",
        "--verify",
    ]);
    assert_eq!(code(&out), 4);
    let out = tcs(&[
        "loss",
        "--logits",
        &l,
        "--alphabet",
        &a,
        "--topology",
        "ctc",
        "--labels",
        "A",
    ]);
    assert_eq!(code(&out), 0);
}

#[test]
fn bad_input_exits_two() {
    let f = Fixture::new();
    let a = f.alphabet(&Alphabet::tcs(["A"]).unwrap());
    let ragged = f.text("ragged.csv", "0,0,0\n0,0\n");
    let words = f.text("words.csv", "0,x,0\n");
    let narrow = f.text("narrow.csv", "0,0\n0,0\n");
    let good = f.logits(&[&[0.0; 3], &[0.0; 3]]);
    let cases: Vec<Vec<&str>> = vec![
        vec!["decode", "--logits", &ragged, "--alphabet", &a, "--topology", "tcs"],
        vec!["decode", "--logits", &words, "--alphabet", &a, "--topology", "tcs"],
        vec!["decode", "--logits", &narrow, "--alphabet", &a, "--topology", "tcs"],
        vec!["decode", "--logits", &good, "--alphabet", &a, "--topology", "ctc"],
        vec![
            "decode",
            "--logits",
            "/nonexistent.csv",
            "--alphabet",
            &a,
            "--topology",
            "tcs",
        ],
        vec![
            "loss",
            "--logits",
            &good,
            "--alphabet",
            &a,
            "--topology",
            "tcs",
            "--labels",
            "B",
        ],
        vec![
            "loss",
            "--logits",
            &good,
            "--alphabet",
            &a,
            "--topology",
            "tcs",
            "--labels",
            "~",
        ],
        vec![
            "loss",
            "--logits",
            &good,
            "--alphabet",
            &a,
            "--topology",
            "tcs",
            "--labels",
            "7",
        ],
        vec![
            "loss",
            "--logits",
            &good,
            "--alphabet",
            &a,
            "--topology",
            "nope",
            "--labels",
            "A",
        ],
    ];
    for args in cases {
        let out = tcs(&args);
        assert_eq!(code(&out), 2, "{args:?}");
        assert!(out.stdout.is_empty(), "{args:?}");
    }
}

#[test]
fn align_unique_path_fixture() {
    let f = Fixture::new();
    let a = f.alphabet(&Alphabet::tcs(["A"]).unwrap());
    let l = f.logits(&[&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0]]);
    let base = [
        "align",
        "--logits",
        &l,
        "--alphabet",
        &a,
        "--topology",
        "tcs",
        "--labels",
        "A",
    ];
    let v = stdout_json(&tcs(&base));
    assert_eq!(
        v,
        serde_json::json!([
            {"label": "+", "role": "foreground", "start": 0, "end": 0},
            {"label": "A", "role": "character", "start": 1, "end": 1},
        ])
    );
    let mut span = base.to_vec();
    span.push("--speech-span");
    let v = stdout_json(&tcs(&span));
    assert_eq!(
        v,
        serde_json::json!([{"label": "A", "role": "character", "start": 0, "end": 1}])
    );
}

#[test]
fn align_segments_tile_the_input() {
    let f = Fixture::new();
    let alphabet = Alphabet::tcs(["C", "A", "T"]).unwrap();
    let a = f.alphabet(&alphabet);
    let m = spelled(&alphabet, "~~++C++AA~+T~");
    let l = f.logits(&rows(&m));
    let v = stdout_json(&tcs(&[
        "align",
        "--logits",
        &l,
        "--alphabet",
        &a,
        "--topology",
        "tcs",
        "--labels",
        "C,A,T",
    ]));
    let segs = v.as_array().unwrap();
    let mut next = 0;
    for s in segs {
        assert_eq!(s["start"].as_u64().unwrap(), next);
        next = s["end"].as_u64().unwrap() + 1;
    }
    assert_eq!(next, 13);
    let labels: String = segs.iter().map(|s| s["label"].as_str().unwrap()).collect();
    assert_eq!(labels, "~+C+A~+T~");
}

#[test]
fn decode_fixtures() {
    let f = Fixture::new();
    let t = Alphabet::tcs(["C", "A", "T"]).unwrap();
    let a = f.alphabet(&t);
    let cat = spelled(&t, "~~+C+A+T~");
    let v = stdout_json(&tcs(&[
        "decode",
        "--logits",
        &f.logits(&rows(&cat)),
        "--alphabet",
        &a,
        "--topology",
        "tcs",
    ]));
    assert_eq!(v, serde_json::json!({"labels": ["C", "A", "T"]}));
    let quiet = spelled(&t, "~~~~");
    let v = stdout_json(&tcs(&[
        "decode",
        "--logits",
        &f.logits(&rows(&quiet)),
        "--alphabet",
        &a,
        "--topology",
        "tcs",
    ]));
    assert_eq!(v, serde_json::json!({"labels": []}));

    let c = Alphabet::ctc(["A"]).unwrap();
    let a = f.alphabet(&c);
    let aa = spelled(&c, "/AA//A");
    let v = stdout_json(&tcs(&[
        "decode",
        "--logits",
        &f.logits(&rows(&aa)),
        "--alphabet",
        &a,
        "--topology",
        "ctc",
    ]));
    assert_eq!(v, serde_json::json!({"labels": ["A", "A"]}));
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let f = Fixture::new();
    let (one, two, other) = (f.path("one"), f.path("two"), f.path("other"));
    for (dir, seed) in [(&one, "7"), (&two, "7"), (&other, "8")] {
        let v = stdout_json(&tcs(&[
            "synth",
            "--out",
            dir.to_str().unwrap(),
            "--n",
            "3",
            "--seed",
            seed,
        ]));
        assert_eq!(v["samples"], 3);
    }
    let a = dir_contents(&one);
    assert_eq!(a.len(), 5);
    assert_eq!(a, dir_contents(&two));
    assert_ne!(a, dir_contents(&other));
}

#[test]
fn synth_empty_and_invalid_config() {
    let f = Fixture::new();
    let empty = f.path("empty");
    stdout_json(&tcs(&[
        "synth",
        "--out",
        empty.to_str().unwrap(),
        "--n",
        "0",
        "--seed",
        "1",
    ]));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(empty.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest, serde_json::json!([]));

    let bad = f.text("bad.json", r#"{"char_dur": [5, 2]}"#);
    let out = tcs(&[
        "synth",
        "--out",
        f.path("x").to_str().unwrap(),
        "--n",
        "1",
        "--seed",
        "1",
        "--config",
        &bad,
    ]);
    assert_eq!(code(&out), 2);
    let junk = f.text("junk.json", "{not json");
    let out = tcs(&[
        "synth",
        "--out",
        f.path("y").to_str().unwrap(),
        "--n",
        "1",
        "--seed",
        "1",
        "--config",
        &junk,
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_missing_data_exits_two() {
    let f = Fixture::new();
    let out = tcs(&[
        "train",
        "--data",
        "/nonexistent/dir",
        "--topology",
        "tcs",
        "--epochs",
        "1",
        "--seed",
        "0",
        "--model-out",
        f.path("m.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_then_posteriors() {
    let f = Fixture::new();
    let data = f.path("data");
    let config = f.text(
        "config.json",
        r#"{"n_classes": 3, "feature_dim": 4, "seq_len": [1, 2]}"#,
    );
    stdout_json(&tcs(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--n",
        "6",
        "--seed",
        "2",
        "--config",
        &config,
    ]));
    let model = f.path("model.json");
    let train = |topology: &str| {
        tcs(&[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--topology",
            topology,
            "--epochs",
            "2",
            "--seed",
            "0",
            "--model-out",
            model.to_str().unwrap(),
            "--hidden",
            "5",
            "--sortagrad",
        ])
    };
    let history = stdout_json(&train("tcs"));
    let epochs = history.as_array().unwrap();
    assert_eq!(epochs.len(), 2);
    assert!(epochs[1]["heldout"]["sequence_accuracy"].as_f64().is_some());

    let input = data.join("utt00000.csv");
    let run = || {
        tcs(&[
            "posteriors",
            "--model",
            model.to_str().unwrap(),
            "--input",
            input.to_str().unwrap(),
        ])
    };
    let first = run();
    assert!(first.status.success());
    assert_eq!(first.stdout, run().stdout);
    let p = tcs_core::io::parse_matrix_csv(first.stdout.as_slice()).unwrap();
    assert_eq!(p.ncols(), 5);
    for row in p.outer_iter() {
        assert!((row.sum() - 1.0).abs() < 1e-9);
    }

    stdout_json(&train("ctc"));
    let out = run();
    let p = tcs_core::io::parse_matrix_csv(out.stdout.as_slice()).unwrap();
    assert_eq!(p.ncols(), 4);
}

#[test]
fn help_and_usage() {
    let out = tcs(&["--help"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("posteriors"));
    let out = tcs(&[]);
    assert_eq!(code(&out), 2);
}
