//! End-to-end behaviour of the `phrasemine` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/corpus.jsonl")
}

fn phrasemine(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_phrasemine"));
    cmd.args(args)
        .env_remove("PHRASEMINE_SEED")
        .env_remove("PHRASEMINE_BACKEND_URL")
        .env("RUST_LOG", "warn");
    cmd
}

fn run(args: &[&str]) -> Output {
    phrasemine(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_owned()
}

fn lines(file: &str) -> Vec<Value> {
    std::fs::read_to_string(file)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn annotate(dir: &TempDir, out: &str, extra: &[&str]) -> Output {
    let corpus = fixture();
    let mut args = vec!["annotate", "--corpus", corpus.to_str().unwrap(), "--out", out];
    args.extend_from_slice(extra);
    assert!(dir.path().exists());
    run(&args)
}

#[test]
fn annotate_writes_a_record_per_sentence_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(&dir, "silver.jsonl");
    let o = annotate(&dir, &out, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let records = lines(&out);
    assert_eq!(records.len(), 7);
    let first = &records[0];
    assert_eq!(first["sentence_id"], "d1s1");
    assert_eq!(first["source"], "annotator");
    let surfaces: Vec<&str> = first["phrases"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["surface"].as_str().unwrap())
        .collect();
    assert!(surfaces.contains(&"sensor selection"), "{surfaces:?}");
    let echo = std::fs::read_to_string(format!("{out}.config.toml")).unwrap();
    assert!(echo.contains("seed = 0"), "{echo}");
    assert!(echo.contains("percentile = 40.0"), "{echo}");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (path(&dir, "a.jsonl"), path(&dir, "b.jsonl"), path(&dir, "c.jsonl"));
    for (out, extra) in [(&a, &[][..]), (&b, &["--threads", "3"][..]), (&c, &["--cache-size", "0"][..])] {
        assert_eq!(code(&annotate(&dir, out, extra)), 0);
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_eq!(bytes, std::fs::read(&c).unwrap());
}

#[test]
fn seed_precedence_is_flag_then_env_then_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = path(&dir, "run.toml");
    std::fs::write(&config, "seed = 9\ncache-size = 12\n").unwrap();
    let corpus = fixture();
    let echoed_seed = |out: &str| {
        let echo = std::fs::read_to_string(format!("{out}.config.toml")).unwrap();
        let table: toml::Table = echo.parse().unwrap();
        let backend = &table["backend"];
        (backend["seed"].as_integer().unwrap(), backend["cache_size"].as_integer().unwrap())
    };
    let base = ["annotate", "--config", config.as_str(), "--corpus", corpus.to_str().unwrap(), "--out"];

    let from_file = path(&dir, "file.jsonl");
    assert_eq!(code(&run(&[&base[..], &[from_file.as_str()]].concat())), 0);
    assert_eq!(echoed_seed(&from_file), (9, 12));

    let from_env = path(&dir, "env.jsonl");
    let o = phrasemine(&[&base[..], &[from_env.as_str()]].concat())
        .env("PHRASEMINE_SEED", "5")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(echoed_seed(&from_env), (5, 12));

    let from_flag = path(&dir, "flag.jsonl");
    let o = phrasemine(&[&base[..], &[from_flag.as_str(), "--seed", "3"]].concat())
        .env("PHRASEMINE_SEED", "5")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(echoed_seed(&from_flag), (3, 12));
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(&dir, "x.jsonl");
    let corpus = fixture();
    let corpus = corpus.to_str().unwrap();
    for args in [
        vec![],
        vec!["frobnicate"],
        vec!["annotate", "--out", out.as_str()],
        vec!["annotate", "--corpus", corpus, "--out", out.as_str(), "--q", "0"],
        vec!["annotate", "--corpus", corpus, "--out", out.as_str(), "--q", "101"],
        vec!["annotate", "--corpus", corpus, "--out", out.as_str(), "--metric", "manhattan"],
        vec!["annotate", "--corpus", corpus, "--out", out.as_str(), "--backend", "remote"],
        vec!["annotate", "--corpus", corpus, "--out", out.as_str(), "--no-such-flag"],
    ] {
        assert_eq!(code(&run(&args)), 1, "{args:?}");
    }
    assert!(!Path::new(&out).exists());
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn data_errors_exit_2_and_leave_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let bad = path(&dir, "bad.jsonl");
    let good = std::fs::read_to_string(fixture()).unwrap();
    std::fs::write(&bad, format!("{}\n{{not json\n", good.trim_end())).unwrap();
    let out = path(&dir, "silver.jsonl");
    let o = run(&["annotate", "--corpus", &bad, "--out", &out]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));
    assert!(!Path::new(&out).exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);

}

#[test]
fn missing_input_file_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = path(&dir, "nope.jsonl");
    let o = run(&["annotate", "--corpus", &missing, "--out", &path(&dir, "silver.jsonl")]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));
}

#[test]
fn unreachable_backend_exits_3() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let dir = tempfile::tempdir().unwrap();
    let out = path(&dir, "silver.jsonl");
    let corpus = fixture();
    let o = run(&[
        "annotate",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        &out,
        "--backend",
        "remote",
        "--url",
        &url,
        "--retries",
        "0",
        "--timeout-secs",
        "2",
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!Path::new(&out).exists());
}

#[test]
fn documents_with_bad_offsets_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = path(&dir, "corpus.jsonl");
    let broken = r#"{"id":"bad","sentences":[{"id":"bad-s1","text":"ab cd","tokens":[{"text":"ab","start":0,"end":2},{"text":"cd","start":3,"end":9}]}]}"#;
    let good = std::fs::read_to_string(fixture()).unwrap();
    std::fs::write(&corpus, format!("{broken}\n{}\n", good.trim_end())).unwrap();
    let out = path(&dir, "silver.jsonl");
    let o = run(&["annotate", "--corpus", &corpus, "--out", &out]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("rejected document"));
    let ids: Vec<String> = lines(&out).iter().map(|r| r["sentence_id"].as_str().unwrap().to_owned()).collect();
    assert_eq!(ids.len(), 7);
    assert!(!ids.iter().any(|id| id.starts_with("bad")));
}

#[test]
fn impact_prints_a_square_csv() {
    let corpus = fixture();
    let o = run(&["impact", "--corpus", corpus.to_str().unwrap(), "--sentence-id", "d1s1"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "sensor,selection,for,energy-efficient,ambulatory,medical,monitoring,.");
    assert_eq!(rows.len(), 9);
    for (i, row) in rows[1..].iter().enumerate() {
        let cells: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cells.len(), 8);
        assert_eq!(cells[i], 0.0);
        assert!(cells.iter().all(|v| *v >= 0.0));
    }
    let o = run(&["impact", "--corpus", corpus.to_str().unwrap(), "--sentence-id", "zzz"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn generator_bridge_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture();
    let corpus = corpus.to_str().unwrap();
    let silver = path(&dir, "silver.jsonl");
    assert_eq!(code(&annotate(&dir, &silver, &[])), 0);

    let train = path(&dir, "train.jsonl");
    assert_eq!(code(&run(&["export-train", "--corpus", corpus, "--silver", &silver, "--out", &train])), 0);
    let records = lines(&train);
    assert!(!records.is_empty());
    assert!(records.iter().all(|r| r["source"].is_string() && r["target"].is_string()));

    // echo the targets back as generator output, with one invented phrase
    let generated = path(&dir, "generated.jsonl");
    let mut text = String::new();
    for r in &records {
        let line = serde_json::json!({
            "sentence_id": r["sentence_id"],
            "target_text": format!("{} , quantum flux capacitor", r["target"].as_str().unwrap()),
        });
        text.push_str(&format!("{line}\n"));
    }
    std::fs::write(&generated, text).unwrap();
    let grounded = path(&dir, "grounded.jsonl");
    let o = run(&["import-generated", "--corpus", corpus, "--generated", &generated, "--out", &grounded]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(lines(&grounded).iter().all(|r| r["source"] == "generator"));

    let merged = path(&dir, "merged.jsonl");
    let o = run(&["merge", "--annotator", &silver, "--generator", &grounded, "--out", &merged]);
    assert_eq!(code(&o), 0);
    assert!(lines(&merged).iter().all(|r| r["source"] == "merged"));

    // the generator reproduced the silver labels, so the merge equals them
    let report = path(&dir, "report.json");
    let o = run(&["eval-sentence", "--pred", &merged, "--gold", &silver, "--out", &report]);
    assert_eq!(code(&o), 0);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(summary["f1"], 1.0);
    assert_eq!(summary["fp"], 0);

    let unknown = path(&dir, "unknown.jsonl");
    std::fs::write(&unknown, "{\"sentence_id\":\"nowhere\",\"target_text\":\"x y\"}\n").unwrap();
    let o = run(&["import-generated", "--corpus", corpus, "--generated", &unknown, "--out", &path(&dir, "u.jsonl")]);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_sentence_with_gold_as_prediction_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let gold = path(&dir, "gold.jsonl");
    std::fs::write(
        &gold,
        "{\"sentence_id\":\"d1s1\",\"gold\":[{\"start\":0,\"end\":2,\"surface\":\"sensor selection\"}]}\n\
         {\"sentence_id\":\"d1s2\",\"gold\":[]}\n",
    )
    .unwrap();
    let csv = path(&dir, "per_sentence.csv");
    let o = run(&["eval-sentence", "--pred", &gold, "--gold", &gold, "--csv", &csv]);
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8(o.stdout).unwrap();
    let json: Value = serde_json::from_str(stdout.lines().last().unwrap()).unwrap();
    assert_eq!(json["f1"], 1.0);
    assert_eq!(json["tp"], 1);
    assert_eq!(
        std::fs::read_to_string(&csv).unwrap(),
        "sentence_id,tp,fp,fn\nd1s1,1,0,0\nd1s2,0,0,0\n"
    );

    let stray = path(&dir, "stray.jsonl");
    std::fs::write(&stray, "{\"sentence_id\":\"other\",\"phrases\":[]}\n").unwrap();
    assert_eq!(code(&run(&["eval-sentence", "--pred", &stray, "--gold", &gold])), 2);
}

#[test]
fn eval_doc_reports_f1_at_10() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture();
    let corpus = corpus.to_str().unwrap();
    let silver = path(&dir, "silver.jsonl");
    assert_eq!(code(&annotate(&dir, &silver, &[])), 0);
    let report = path(&dir, "doc.json");
    let csv = path(&dir, "doc.csv");
    let o = run(&["eval-doc", "--corpus", corpus, "--pred", &silver, "--out", &report, "--csv", &csv]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let f1 = summary["f1_at_10"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    assert!(f1 > 0.0, "sensor selection should match gold");
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 4);
    assert!(Path::new(&format!("{report}.config.toml")).exists());
}
