use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_longembed"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Asserts a failing run with exactly one `error: <kind>: ...` line.
fn fails_with(args: &[&str], kind: &str) {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("error: ")).collect();
    assert_eq!(lines.len(), 1, "stderr: {err}");
    assert!(
        lines[0].starts_with(&format!("error: {kind}: ")),
        "stderr: {err}"
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TOPICS: [&str; 6] = ["river", "mountain", "engine", "garden", "violin", "harbor"];

fn write_data(dir: &Path) -> (PathBuf, PathBuf, PathBuf, PathBuf, PathBuf) {
    let mut pairs = String::new();
    for i in 0..48 {
        let t = TOPICS[i % TOPICS.len()];
        let src = if i % 2 == 0 { "forum" } else { "titles" };
        pairs.push_str(&format!(
            "{{\"query\":\"about {t} {i}\",\"document\":\"the {t} text number {} with {t} words\",\"source\":\"{src}\"}}\n",
            i % 12
        ));
    }
    let pairs_path = dir.join("pairs.jsonl");
    std::fs::write(&pairs_path, pairs).unwrap();

    let mut queries = String::new();
    let mut corpus = String::new();
    let mut qrels = String::new();
    for (i, t) in TOPICS.iter().enumerate() {
        queries.push_str(&format!("{{\"id\":\"q{i}\",\"text\":\"about {t}\"}}\n"));
        let filler = "words ".repeat(40);
        corpus.push_str(&format!(
            "{{\"id\":\"d{i}\",\"text\":\"{filler} the {t} text\"}}\n"
        ));
        qrels.push_str(&format!(
            "{{\"query_id\":\"q{i}\",\"doc_id\":\"d{i}\",\"relevance\":1}}\n"
        ));
    }
    let (q, c, r) = (
        dir.join("queries.jsonl"),
        dir.join("corpus.jsonl"),
        dir.join("qrels.jsonl"),
    );
    std::fs::write(&q, queries).unwrap();
    std::fs::write(&c, corpus).unwrap();
    std::fs::write(&r, qrels).unwrap();
    let text = dir.join("docs.txt");
    std::fs::write(
        &text,
        "a river runs through the garden\nthe engine of the harbor\n",
    )
    .unwrap();
    (pairs_path, q, c, r, text)
}

const MODEL: [&str; 10] = [
    "--set",
    "model.num_layers=1",
    "--set",
    "model.hidden_dim=16",
    "--set",
    "model.num_heads=2",
    "--set",
    "model.ffn_dim=32",
    "--set",
    "model.trained_context=32",
];

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let (pairs, queries, corpus, qrels, text) = write_data(d);
    let vocab = d.join("vocab.txt");
    let out = ok(&[
        "build-vocab",
        "--pairs",
        p(&pairs),
        "--text",
        p(&text),
        "--output",
        p(&vocab),
    ]);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert!(v["vocab_size"].as_u64().unwrap() > 10);

    let chunks = d.join("chunks.jsonl");
    let out = ok(&[
        "pack",
        "--vocab",
        p(&vocab),
        "--pairs",
        p(&pairs),
        "--text",
        p(&text),
        "--chunk",
        "32",
        "--output",
        p(&chunks),
    ]);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["documents"], 98);

    let metrics = d.join("metrics.jsonl");
    let mlm = d.join("mlm");
    let mut args = vec![
        "train",
        "--stage",
        "mlm",
        "--data",
        p(&chunks),
        "--vocab",
        p(&vocab),
        "--output",
        p(&mlm),
        "--metrics",
        p(&metrics),
    ];
    args.extend(MODEL);
    args.extend([
        "--set",
        "mlm.batch_size=4",
        "--set",
        "mlm.steps=3",
        "--set",
        "mlm.max_seq=32",
    ]);
    let out = ok(&args);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["steps"], 3);
    let log = std::fs::read_to_string(&metrics).unwrap();
    assert_eq!(log.lines().count(), 3);
    for line in log.lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["step", "lr", "loss", "tokens_per_sec", "wall_clock"] {
            assert!(rec.get(key).is_some(), "missing {key} in {line}");
        }
    }

    let pre = d.join("pretrain");
    let out = ok(&[
        "train",
        "--stage",
        "pretrain",
        "--data",
        p(&pairs),
        "--init",
        p(&mlm),
        "--output",
        p(&pre),
        "--set",
        "pretrain.batch_size=4",
        "--set",
        "pretrain.steps=2",
        "--set",
        "pretrain.gradcache_chunk=2",
        "--set",
        "pretrain.max_seq=32",
        "--metrics",
        p(&metrics),
    ]);
    assert!(out.contains("\"steps\":2"));
    assert_eq!(
        std::fs::read_to_string(&metrics).unwrap().lines().count(),
        5
    );

    let kept = d.join("kept.jsonl");
    ok(&[
        "filter",
        "--mode",
        "topk",
        "--checkpoint",
        p(&pre),
        "--input",
        p(&pairs),
        "--output",
        p(&kept),
        "--k",
        "3",
        "--sample-size",
        "16",
    ]);
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("kept.jsonl.stats.json")).unwrap())
            .unwrap();
    let total: u64 = ["forum", "titles"]
        .iter()
        .map(|s| {
            stats["sources"][s]["kept"].as_u64().unwrap()
                + stats["sources"][s]["discarded"].as_u64().unwrap()
        })
        .sum();
    assert_eq!(total, 48);
    ok(&[
        "filter",
        "--mode",
        "threshold",
        "--threshold",
        "-1",
        "--checkpoint",
        p(&pre),
        "--input",
        p(&pairs),
        "--output",
        p(&kept),
    ]);
    assert_eq!(std::fs::read_to_string(&kept).unwrap().lines().count(), 48);

    let mined = d.join("mined.jsonl");
    ok(&[
        "mine",
        "--checkpoint",
        p(&pre),
        "--input",
        p(&pairs),
        "--top",
        "4",
        "--output",
        p(&mined),
    ]);
    let first: serde_json::Value = serde_json::from_str(
        std::fs::read_to_string(&mined)
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(first["hard_negatives"].as_array().unwrap().len(), 4);

    let ft = d.join("finetune");
    ok(&[
        "train",
        "--stage",
        "finetune",
        "--data",
        p(&mined),
        "--init",
        p(&pre),
        "--output",
        p(&ft),
        "--set",
        "finetune.batch_size=4",
        "--set",
        "finetune.steps=2",
        "--set",
        "finetune.hard_negatives=3",
        "--set",
        "finetune.max_seq=32",
    ]);

    let emb = d.join("emb.jsonl");
    let out = ok(&[
        "embed",
        "--checkpoint",
        p(&ft),
        "--task",
        "search_query",
        "--input",
        p(&queries),
        "--output",
        p(&emb),
    ]);
    assert!(out.contains("\"embedded\":6"));
    for line in std::fs::read_to_string(&emb).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let e: Vec<f64> = v["embedding"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .collect();
        assert_eq!(e.len(), 16);
        assert!((e.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    let report = d.join("report.json");
    let task = [
        "--queries",
        p(&queries),
        "--corpus",
        p(&corpus),
        "--qrels",
        p(&qrels),
    ];
    let mut args = vec![
        "eval-retrieval",
        "--checkpoint",
        p(&ft),
        "--report",
        p(&report),
    ];
    args.extend(task);
    let out = ok(&args);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["metric"], "ndcg@10");
    let score = v["value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&score));
    assert!(std::fs::read_to_string(&report)
        .unwrap()
        .contains("per_query"));

    let table = d.join("sweep.jsonl");
    let mut args = vec![
        "sweep-extrapolation",
        "--checkpoint",
        p(&ft),
        "--lengths",
        "16,32,64",
        "--output",
        p(&table),
    ];
    args.extend(task);
    ok(&args);
    let rows: Vec<serde_json::Value> = std::fs::read_to_string(&table)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 12);
    let none_long = rows
        .iter()
        .find(|r| r["length"] == 64 && r["kind"] == "none")
        .unwrap();
    assert!(none_long["ndcg"].is_null() && none_long["error"].is_string());
    let within: Vec<f64> = rows
        .iter()
        .filter(|r| r["length"] == 32)
        .map(|r| r["ndcg"].as_f64().unwrap())
        .collect();
    assert!(within.iter().all(|&x| x == within[0]));
    let dynamic_long = rows
        .iter()
        .find(|r| r["length"] == 64 && r["kind"] == "dynamic_ntk")
        .unwrap();
    assert!(dynamic_long["ndcg"].is_f64());

    // Long inputs with no policy switch to dynamic NTK on their own.
    let mut args = vec![
        "eval-retrieval",
        "--checkpoint",
        p(&ft),
        "--max-tokens",
        "64",
    ];
    args.extend(task);
    ok(&args);
}

#[test]
fn errors_are_one_line() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let (pairs, queries, corpus, qrels, _) = write_data(d);
    let missing = d.join("nope.jsonl");
    fails_with(
        &[
            "build-vocab",
            "--pairs",
            p(&missing),
            "--output",
            p(&d.join("v.txt")),
        ],
        "io",
    );
    fails_with(
        &["build-vocab", "--output", p(&d.join("v.txt"))],
        "empty_input",
    );
    fails_with(
        &[
            "train",
            "--stage",
            "sideways",
            "--data",
            p(&pairs),
            "--output",
            p(d),
        ],
        "usage",
    );
    fails_with(&["frobnicate"], "usage");

    let bad = d.join("bad.jsonl");
    std::fs::write(&bad, "{\"query\": \"x\"}\n").unwrap();
    fails_with(
        &[
            "build-vocab",
            "--pairs",
            p(&bad),
            "--output",
            p(&d.join("v.txt")),
        ],
        "parse",
    );

    let vocab = d.join("vocab.txt");
    ok(&["build-vocab", "--pairs", p(&pairs), "--output", p(&vocab)]);
    fails_with(
        &[
            "train",
            "--stage",
            "mlm",
            "--data",
            p(&pairs),
            "--vocab",
            p(&vocab),
            "--output",
            p(&d.join("x")),
        ],
        "parse",
    );
    fails_with(
        &[
            "train",
            "--stage",
            "pretrain",
            "--data",
            p(&pairs),
            "--vocab",
            p(&vocab),
            "--output",
            p(&d.join("x")),
            "--set",
            "pretrain.bogus=1",
        ],
        "config",
    );

    let ckpt = d.join("ckpt");
    let mut args = vec![
        "train",
        "--stage",
        "pretrain",
        "--data",
        p(&pairs),
        "--vocab",
        p(&vocab),
        "--output",
        p(&ckpt),
    ];
    args.extend(MODEL);
    args.extend([
        "--set",
        "pretrain.batch_size=4",
        "--set",
        "pretrain.steps=1",
        "--set",
        "pretrain.gradcache_chunk=none",
        "--set",
        "pretrain.max_seq=32",
    ]);
    ok(&args);
    fails_with(
        &[
            "filter",
            "--mode",
            "threshold",
            "--checkpoint",
            p(&ckpt),
            "--input",
            p(&pairs),
            "--output",
            p(&d.join("k")),
        ],
        "invalid_argument",
    );
    fails_with(
        &[
            "embed",
            "--checkpoint",
            p(&ckpt),
            "--task",
            "poetry",
            "--input",
            p(&queries),
            "--output",
            p(&d.join("e")),
        ],
        "invalid_argument",
    );

    let out_dir = d.join("f");
    fails_with(
        &[
            "train",
            "--stage",
            "finetune",
            "--data",
            p(&pairs),
            "--init",
            p(&ckpt),
            "--output",
            p(&out_dir),
        ],
        "stage_data_mismatch",
    );
    let short = d.join("short.jsonl");
    std::fs::write(
        &short,
        "{\"query\":\"a\",\"document\":\"b\",\"source\":\"s\",\"hard_negatives\":[\"c\"]}\n",
    )
    .unwrap();
    fails_with(
        &[
            "train",
            "--stage",
            "finetune",
            "--data",
            p(&short),
            "--init",
            p(&ckpt),
            "--output",
            p(&out_dir),
        ],
        "not_enough_negatives",
    );

    let blob = ckpt.join("weights.bin");
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() - 3]).unwrap();
    fails_with(
        &[
            "eval-retrieval",
            "--checkpoint",
            p(&ckpt),
            "--queries",
            p(&queries),
            "--corpus",
            p(&corpus),
            "--qrels",
            p(&qrels),
        ],
        "checkpoint",
    );
}
