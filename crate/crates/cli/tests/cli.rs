use std::path::PathBuf;
use std::process::{Command, Output};

use xl3m::backend::{ModelBackend, NgramBackend};
use xl3m::eval::correlation::{self_generate, synthetic_markov_corpus};
use xl3m::eval::needle::{generate_haystack, NeedleProbe, NeedleTaskSpec};
use xl3m_cli::RunConfig;

fn xl3m(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xl3m"))
        .args(args)
        .output()
        .expect("run xl3m")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("xl3m-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

/// A haystack with the default needle, written out as text.
fn needle_input(len: usize, depth: f64) -> PathBuf {
    let hay = generate_haystack(&NeedleTaskSpec {
        haystack_len: len,
        depth_fraction: depth,
        probe: NeedleProbe::default(),
        seed: 11,
    })
    .unwrap();
    let bytes: Vec<u8> = hay.tokens.iter().map(|&t| t as u8).collect();
    let path = tmp(&format!("hay-{len}-{depth}.txt"));
    std::fs::write(&path, bytes).unwrap();
    path
}

#[test]
fn run_oracle_answers_needle_question() {
    let input = needle_input(16_384, 0.35);
    let o = xl3m(&["run", "--input-file", input.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("48213"), "{}", stdout(&o));
}

#[test]
fn run_explain_lists_segments() {
    let input = needle_input(8192, 0.6);
    let o = xl3m(&["run", "--explain", "--input-file", input.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("21 segments"), "{out}");
    assert_eq!(
        out.lines().filter(|l| l.trim_end().ends_with('*')).count(),
        3,
        "{out}"
    );
    assert!(out.contains("key context 1792 / 2048 tokens"), "{out}");
}

#[test]
fn token_file_input() {
    let path = tmp("tokens.txt");
    let needle: Vec<String> = NeedleProbe::default()
        .needle
        .iter()
        .chain(NeedleProbe::default().question.iter())
        .map(|t| t.to_string())
        .collect();
    std::fs::write(&path, format!("# a short input\n{}\n", needle.join(", "))).unwrap();
    let o = xl3m(&["run", "--tokens", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("48213"));

    std::fs::write(&path, "1 2 x").unwrap();
    let o = xl3m(&["run", "--tokens", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    std::fs::write(&path, "1 2 999").unwrap();
    let o = xl3m(&["run", "--tokens", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_one() {
    let o = xl3m(&["--overlap", "512", "run", "--input", "x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("overlap"), "{}", stderr(&o));

    let cfg = tmp("bad.json");
    std::fs::write(&cfg, r#"{"window": 512, "overlapp": 3}"#).unwrap();
    let o = xl3m(&["--config", cfg.to_str().unwrap(), "run", "--input", "x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("overlapp"), "{}", stderr(&o));

    let o = xl3m(&["--config", "/nonexistent/cfg.json", "run", "--input", "x"]);
    assert_eq!(o.status.code(), Some(1));

    let o = xl3m(&["--k", "4", "run", "--input", "x"]);
    assert_eq!(o.status.code(), Some(1));

    let o = xl3m(&["run"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let o = xl3m(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("needle"));
}

#[test]
fn unreachable_remote_exits_two() {
    let o = xl3m(&[
        "--backend",
        "remote",
        "--url",
        "http://127.0.0.1:9",
        "run",
        "--input",
        "x",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn remote_without_url_is_config_error() {
    let o = xl3m(&["--backend", "remote", "run", "--input", "x"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn short_input_exits_three() {
    let o = xl3m(&["run", "--input", "too short"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = xl3m(&["run", "--input-file", "/nonexistent/input.txt"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn segment_table() {
    let o = xl3m(&["segment", "--length", "1000"]);
    assert!(o.status.success());
    assert_eq!(
        stdout(&o),
        "index,start,end,overlap_prev\n0,0,512,\n1,384,896,128\n2,488,1000,408\n"
    );
    let o = xl3m(&["segment", "--input", &"a".repeat(512)]);
    assert_eq!(stdout(&o).lines().count(), 2);
    let o = xl3m(&["segment", "--input", ""]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn needle_grid_is_deterministic() {
    let a = tmp("grid-a.csv");
    let b = tmp("grid-b.csv");
    for path in [&a, &b] {
        let o = xl3m(&[
            "--seed",
            "7",
            "--out",
            path.to_str().unwrap(),
            "needle",
            "--runs",
            "1",
            "--lengths",
            "4096,8192",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("length |"));
    }
    let csv = std::fs::read_to_string(&a).unwrap();
    assert_eq!(csv, std::fs::read_to_string(&b).unwrap());
    assert_eq!(csv.lines().count(), 21);
    assert!(csv.lines().skip(1).all(|l| l.contains(",1.0000,")));
}

#[test]
fn tail_truncate_misses_early_needles() {
    let o = xl3m(&[
        "needle",
        "--runs",
        "2",
        "--lengths",
        "16384",
        "--method",
        "tail_truncate",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = stdout(&o);
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 10);
    for row in &rows[..8] {
        assert!(row.ends_with(",0.0000,2"), "{row}");
    }
}

#[test]
fn needle_rejects_remote_backend() {
    let o = xl3m(&[
        "--backend",
        "remote",
        "--url",
        "http://127.0.0.1:9",
        "needle",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bench_rows_are_additive() {
    let out = tmp("bench.csv");
    let o = xl3m(&[
        "--out",
        out.to_str().unwrap(),
        "bench",
        "--length",
        "8192",
        "--method",
        "xl3m",
        "--method",
        "stream_truncate",
        "--token-latency-ms",
        "0.1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        let (total, prefill, decode): (f64, f64, f64) = (
            f[1].parse().unwrap(),
            f[2].parse().unwrap(),
            f[3].parse().unwrap(),
        );
        // Six printed decimals, so allow rounding on top of 1%.
        assert!(
            (total - prefill - decode).abs() <= 0.01 * total + 2e-6,
            "{row}"
        );
        assert_eq!(f[4], "128");
    }
}

#[test]
fn bench_reflects_parallel_scoring() {
    let run = |p: &str| {
        let out = tmp(&format!("bench-{p}.csv"));
        let o = xl3m(&[
            "--out",
            out.to_str().unwrap(),
            "--max-parallel",
            p,
            "bench",
            "--length",
            "8192",
            "--method",
            "xl3m",
            "--decode-len",
            "4",
            "--score-latency-ms",
            "10",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let csv = std::fs::read_to_string(&out).unwrap();
        csv.lines()
            .nth(1)
            .unwrap()
            .split(',')
            .nth(2)
            .unwrap()
            .parse::<f64>()
            .unwrap()
    };
    let serial = run("1");
    let parallel = run("32");
    assert!(serial >= 0.21, "{serial}");
    assert!(parallel < serial / 4.0, "{parallel} vs {serial}");
}

#[test]
fn diag_on_self_generated_ngram_text() {
    let o = xl3m(&["--backend", "ngram", "diag", "--positions", "10000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let summary = out.lines().last().unwrap();
    let rho: f64 = summary
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix("spearman="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(rho >= 0.5, "{summary}");
    assert!(summary.contains("positions=10000"));
}

#[test]
fn diag_corpus_file() {
    // Text the configured n-gram model generated itself.
    let model = NgramBackend::from_text(&synthetic_markov_corpus(3, 100_000), 2, 0.1).unwrap();
    let text = self_generate(&model, &[b'a' as u32], 5000, 1).unwrap();
    let corpus = tmp("selfgen.txt");
    std::fs::write(&corpus, model.detokenize(&text).unwrap()).unwrap();
    let o = xl3m(&[
        "--backend",
        "ngram",
        "--seed",
        "3",
        "diag",
        "--corpus",
        corpus.to_str().unwrap(),
        "--positions",
        "4000",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("positions=4000"), "{}", stdout(&o));

    let constant = tmp("constant.txt");
    std::fs::write(&constant, "a".repeat(3000)).unwrap();
    let o = xl3m(&[
        "--backend",
        "ngram",
        "diag",
        "--corpus",
        constant.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("degenerate=true"), "{}", stdout(&o));

    let o = xl3m(&[
        "--backend",
        "ngram",
        "diag",
        "--corpus",
        "/nonexistent/corpus.txt",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn dump_config_round_trip() {
    let dumped = xl3m(&[
        "--seed",
        "5",
        "--k",
        "2",
        "--max-new-tokens",
        "9",
        "dump-config",
    ]);
    assert!(dumped.status.success());
    let cfg = RunConfig::from_json(&stdout(&dumped)).unwrap();
    assert_eq!((cfg.seed, cfg.k, cfg.max_new_tokens), (5, 2, 9));
    let path = tmp("dumped.json");
    std::fs::write(&path, stdout(&dumped)).unwrap();

    let again = xl3m(&["--config", path.to_str().unwrap(), "dump-config"]);
    assert_eq!(stdout(&again), stdout(&dumped));

    let input = needle_input(9000, 0.8);
    let with_flags = xl3m(&[
        "--seed",
        "5",
        "--k",
        "2",
        "--max-new-tokens",
        "9",
        "run",
        "--explain",
        "--input-file",
        input.to_str().unwrap(),
    ]);
    let with_file = xl3m(&[
        "--config",
        path.to_str().unwrap(),
        "run",
        "--explain",
        "--input-file",
        input.to_str().unwrap(),
    ]);
    assert!(with_flags.status.success());
    assert_eq!(stdout(&with_flags), stdout(&with_file));

    // Flags win over the file.
    let o = xl3m(&[
        "--config",
        path.to_str().unwrap(),
        "--k",
        "3",
        "dump-config",
    ]);
    assert_eq!(RunConfig::from_json(&stdout(&o)).unwrap().k, 3);
}

#[test]
fn qa_file_scoring() {
    let qa = tmp("qa.jsonl");
    let hay = generate_haystack(&NeedleTaskSpec {
        haystack_len: 6000,
        depth_fraction: 0.2,
        probe: NeedleProbe::default(),
        seed: 2,
    })
    .unwrap();
    let context: String = hay.tokens[..hay.question_start]
        .iter()
        .map(|&t| t as u8 as char)
        .collect();
    let rec = |id: &str, answer: &str| {
        serde_json::json!({
            "id": id,
            "context": context,
            "question": xl3m::eval::needle::DEFAULT_QUESTION,
            "answers": [answer],
        })
        .to_string()
    };
    std::fs::write(
        &qa,
        format!("{}\n{}\n", rec("hit", "48213"), rec("miss", "nope")),
    )
    .unwrap();
    let o = xl3m(&["run", "--qa", qa.to_str().unwrap(), "--metric", "exact"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("hit\t1.0000\t\"48213\""), "{out}");
    assert!(out.contains("miss\t0.0000"), "{out}");
    assert!(out.contains("records=2 mean_exact=0.5000"), "{out}");

    std::fs::write(&qa, "{\"id\": 1}\n").unwrap();
    let o = xl3m(&["run", "--qa", qa.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}
