use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use dcmtl_core::corpus::io::{parse_corpus, read_corpus};
use dcmtl_core::corpus::Tokenization;
use dcmtl_core::model::{ModelConfig, TrainedModel};
use tempfile::TempDir;

fn dcmtl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcmtl"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = dcmtl(args);
    assert!(
        out.status.success(),
        "dcmtl {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = dcmtl(args);
    assert_eq!(out.status.code(), Some(1), "dcmtl {args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

fn tag_stdin(model: &Path, input: &str) -> String {
    let mut child = Command::new(env!("CARGO_BIN_EXE_dcmtl"))
        .args(["tag", "--model", p(model)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(input.as_bytes())
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &[&str] = &["--hidden", "4", "--emb-dim", "8", "--batch-size", "8"];

/// Generates a small synthetic corpus and trains a tiny dcmtl model on it.
fn trained(dir: &Path, epochs: &str) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    if !data.exists() {
        ok(&[
            "gen-data",
            "--synthetic-terms",
            "5",
            "--train-size",
            "60",
            "--test-size",
            "10",
            "--out-dir",
            p(&data),
        ]);
    }
    let model = dir.join(format!("model-{epochs}.json"));
    let train = data.join("train.conll");
    let mut args = vec![
        "train",
        "--train",
        p(&train),
        "--model-out",
        p(&model),
        "--epochs",
        epochs,
    ];
    args.extend_from_slice(TINY);
    ok(&args);
    (data, model)
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

const EXAMPLE_DICT: &str = "耐克\tBrand\n品牌\tPK\n黑色\tColor\n连衣裙\tCG\n";
const EXAMPLE_MAP: &str = "Brand\tPV\nColor\tPV\nPK\tPK\nCG\tCG\n";

#[test]
fn nine_entry_dictionary_splits_three_ways() {
    let dir = TempDir::new().unwrap();
    let dict = dir.path().join("d.tsv");
    let map = dir.path().join("m.tsv");
    write(&dict, "耐克\tBrand\n李宁\tBrand\n红色\tColor\n蓝色\tColor\n棉\tMaterial\n品牌\tPK\n连衣裙\tCG\n衬衫\tCG\n外套\tCG\n");
    write(&map, "Brand\tPV\nColor\tPV\nMaterial\tPV\nPK\tPK\nCG\tCG\n");
    let out = dir.path().join("out");
    let args = [
        "gen-data",
        "--dictionary",
        p(&dict),
        "--type-map",
        p(&map),
        "--train-size",
        "40",
        "--test-size",
        "10",
    ];
    let stdout = ok(&[&args[..], &["--out-dir", p(&out)]].concat());
    assert!(
        stdout.contains("dictionary: 9 entries, split 3/3/3"),
        "{stdout}"
    );
    for f in [
        "dictionary.tsv",
        "type_map.tsv",
        "dict_part1.tsv",
        "dict_part2.tsv",
        "dict_part3.tsv",
        "stats.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let parts: usize = (1..=3)
        .map(|i| {
            fs::read_to_string(out.join(format!("dict_part{i}.tsv")))
                .unwrap()
                .lines()
                .count()
        })
        .sum();
    assert_eq!(parts, 9);
}

#[test]
fn same_seed_gives_byte_identical_files() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&[
            "gen-data",
            "--synthetic-terms",
            "6",
            "--train-size",
            "80",
            "--test-size",
            "20",
            "--seed",
            seed,
            "--out-dir",
            p(&out),
        ]);
        out
    };
    let (a, b, c) = (run("a", "4"), run("b", "4"), run("c", "5"));
    let files = [
        "dictionary.tsv",
        "dict_part1.tsv",
        "train.conll",
        "test_iv.conll",
        "test_oov.conll",
        "stats.json",
    ];
    for f in files {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert_ne!(
        fs::read(a.join("train.conll")).unwrap(),
        fs::read(c.join("train.conll")).unwrap()
    );
}

#[test]
fn example_dictionary_reproduces_the_label_rows() {
    let dir = TempDir::new().unwrap();
    let (dict, map, utts) = (
        dir.path().join("d.tsv"),
        dir.path().join("m.tsv"),
        dir.path().join("u.txt"),
    );
    write(&dict, EXAMPLE_DICT);
    write(&map, EXAMPLE_MAP);
    write(&utts, "我想买耐克品牌的黑色连衣裙\n耐克黑色\n");
    let out = dir.path().join("out");
    ok(&[
        "gen-data",
        "--dictionary",
        p(&dict),
        "--type-map",
        p(&map),
        "--utterances",
        p(&utts),
        "--no-split",
        "--out-dir",
        p(&out),
    ]);
    let corpus = read_corpus(&out.join("train.conll")).unwrap();
    assert_eq!(corpus.len(), 2);
    let e = &corpus[0];
    let row = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
    assert_eq!(
        e.slot,
        row("O O O B-Brand I-Brand B-PK I-PK O B-Color I-Color B-CG I-CG I-CG")
    );
    assert_eq!(
        e.ne.as_ref().unwrap(),
        &row("O O O B-PV I-PV B-PK I-PK O B-PV I-PV B-CG I-CG I-CG")
    );
    assert_eq!(e.seg, row("O O O B I B I O B I B I I"));
}

#[test]
fn zero_epochs_write_the_initial_model() {
    let dir = TempDir::new().unwrap();
    let (data, model) = trained(dir.path(), "0");
    let config = ModelConfig {
        hidden: 4,
        emb_dim: 8,
        batch_size: 8,
        epochs: 0,
        ..ModelConfig::default()
    };
    let train = read_corpus(&data.join("train.conll")).unwrap();
    let init = TrainedModel::untrained(config, &train, Tokenization::Char).unwrap();
    assert_eq!(fs::read_to_string(&model).unwrap(), init.to_json().unwrap());
}

#[test]
fn fixed_seed_gives_identical_models_traces_and_reports() {
    let dir = TempDir::new().unwrap();
    let (data, _) = trained(dir.path(), "0");
    let train = data.join("train.conll");
    let test = data.join("test_oov.conll");
    let run = |name: &str, seed: &str| {
        let model = dir.path().join(format!("{name}.json"));
        let trace = dir.path().join(format!("{name}.jsonl"));
        let report = dir.path().join(format!("{name}.report.jsonl"));
        let mut args = vec![
            "train",
            "--train",
            p(&train),
            "--model-out",
            p(&model),
            "--trace-out",
            p(&trace),
        ];
        args.extend_from_slice(&["--epochs", "2", "--seed", seed]);
        args.extend_from_slice(TINY);
        ok(&args);
        ok(&[
            "eval",
            "--model",
            p(&model),
            "--corpus",
            p(&test),
            "--report-out",
            p(&report),
        ]);
        [model, trace, report].map(|f| fs::read(f).unwrap())
    };
    let (a, b, c) = (run("a", "9"), run("b", "9"), run("c", "10"));
    assert_eq!(a, b);
    assert_ne!(a[0], c[0]);
    let trace = String::from_utf8(a[1].clone()).unwrap();
    // 60 sentences at batch 8 over two epochs.
    assert_eq!(trace.lines().count(), 16);
    for line in trace.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["loss"].as_f64().unwrap().is_finite());
    }
}

#[test]
fn eval_of_own_predictions_is_perfect() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    ok(&[
        "gen-data",
        "--synthetic-terms",
        "3",
        "--train-size",
        "30",
        "--test-size",
        "5",
        "--out-dir",
        p(&data),
    ]);
    let train = data.join("train.conll");
    let model = dir.path().join("model.json");
    ok(&[
        "train",
        "--train",
        p(&train),
        "--model-out",
        p(&model),
        "--epochs",
        "40",
        "--lr",
        "0.01",
        "--hidden",
        "8",
        "--emb-dim",
        "16",
        "--batch-size",
        "8",
    ]);
    let gold = read_corpus(&train).unwrap();
    let input: String = gold.iter().map(|e| e.tokens.concat() + "\n").collect();
    // Keep the utterances whose predicted rows form valid chunk sequences.
    let tagged: Vec<String> = tag_stdin(&model, &input)
        .split_terminator("\n\n")
        .map(|b| format!("{b}\n\n"))
        .filter(|b| parse_corpus(b, "tagged").is_ok())
        .collect();
    assert!(
        tagged.len() >= gold.len() / 2,
        "{} of {} valid",
        tagged.len(),
        gold.len()
    );
    let corpus = dir.path().join("tagged.conll");
    write(&corpus, &tagged.concat());
    let report = dir.path().join("r.jsonl");
    ok(&[
        "eval",
        "--model",
        p(&model),
        "--corpus",
        p(&corpus),
        "--report-out",
        p(&report),
    ]);
    let text = fs::read_to_string(&report).unwrap();
    let mut tasks = Vec::new();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        tasks.push(v["task"].as_str().unwrap().to_string());
        for k in ["precision", "recall", "f1", "token_accuracy"] {
            assert_eq!(v[k], 1.0, "{line}");
        }
    }
    assert_eq!(tasks, ["seg", "ne", "slot"]);
}

#[test]
fn eval_rejections() {
    let dir = TempDir::new().unwrap();
    let (_, model) = trained(dir.path(), "0");
    let empty = dir.path().join("empty.conll");
    write(&empty, "");
    let err = fails(&["eval", "--model", p(&model), "--corpus", p(&empty)]);
    assert!(err.contains("\nerror: ") && err.contains("empty"), "{err}");
    let foreign = dir.path().join("foreign.conll");
    write(&foreign, "to\tO\tO\tO\nboston\tB-city\tB-PV\tB\n");
    let err = fails(&["eval", "--model", p(&model), "--corpus", p(&foreign)]);
    assert!(
        err.contains("model tag set [") && err.contains("corpus tag set ["),
        "{err}"
    );
    assert!(err.contains("B-city"), "{err}");
    let err = fails(&[
        "eval",
        "--model",
        p(&dir.path().join("missing.json")),
        "--corpus",
        p(&empty),
    ]);
    assert!(err.contains("missing.json"), "{err}");
}

#[test]
fn tag_output_shape() {
    let dir = TempDir::new().unwrap();
    let (_, model) = trained(dir.path(), "0");
    assert_eq!(tag_stdin(&model, ""), "");
    let out = tag_stdin(&model, "我想买红色衬衫\n\n要\n");
    let lines: Vec<&str> = out.lines().collect();
    // 7 tokens, a separator, the passed-through empty line, 1 token, a separator.
    assert_eq!(lines.len(), 11, "{out:?}");
    assert_eq!((lines[7], lines[8], lines[10]), ("", "", ""));
    for line in lines[..7].iter().chain(&lines[9..10]) {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 4);
        assert!(["O", "B", "I"].contains(&cols[3]));
    }
    assert_eq!(lines[9].split('\t').next(), Some("要"));
    let input = dir.path().join("in.txt");
    write(&input, "我想买红色衬衫\n\n要\n");
    assert_eq!(
        ok(&["tag", "--model", p(&model), "--input", p(&input)]),
        out
    );
}

#[test]
fn help_documents_defaults() {
    let help = ok(&["train", "--help"]);
    for d in [
        "[default: dcmtl]",
        "[default: SLOT+NE+SEG]",
        "[default: 3]",
        "[default: 100]",
        "[default: 200]",
        "[default: 32]",
        "[default: 10]",
        "[default: 0.001]",
        "[default: 5]",
        "[default: 1/3]",
        "[default: 0]",
    ] {
        assert!(help.contains(d), "train --help lacks {d}");
    }
    let help = ok(&["gen-data", "--help"]);
    for d in [
        "[default: 2000]",
        "[default: 300]",
        "[default: char]",
        "[default: 0]",
    ] {
        assert!(help.contains(d), "gen-data --help lacks {d}");
    }
    for cmd in ["eval", "tag"] {
        assert!(ok(&[cmd, "--help"]).contains("--model"));
    }
}

#[test]
fn config_file_is_checked_and_overridden() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.toml");
    write(&bad, "[model]\nepochz = 3\n");
    let err = fails(&["train", "--config", p(&bad)]);
    assert!(err.contains("unknown field"), "{err}");
    let invalid = dir.path().join("invalid.toml");
    write(&invalid, "[model]\nhidden = 4\n");
    let err = fails(&[
        "train",
        "--config",
        p(&invalid),
        "--train",
        "x.conll",
        "--model-out",
        "m.json",
    ]);
    assert!(err.contains("emb"), "{err}");

    let (data, _) = trained(dir.path(), "0");
    let model = dir.path().join("from-config.json");
    let good = dir.path().join("good.toml");
    write(
        &good,
        &format!(
            "train = {:?}\nmodel_out = {:?}\n[model]\ntopology = \"basic\"\nhidden = 4\nemb_dim = 8\nepochs = 5\nseed = 3\n",
            data.join("train.conll"),
            model
        ),
    );
    let stdout = ok(&["train", "--config", p(&good), "--epochs", "1"]);
    assert!(stdout.contains("training basic"), "{stdout}");
    assert!(stdout.contains("for 1 epochs"), "{stdout}");
    let m = TrainedModel::load(&model).unwrap();
    assert_eq!(
        (m.config().seed, m.config().epochs, m.config().hidden),
        (3, 1, 4)
    );
}

#[test]
fn seed_is_printed_at_startup() {
    let dir = TempDir::new().unwrap();
    let out = dcmtl(&[
        "gen-data",
        "--synthetic-terms",
        "3",
        "--train-size",
        "5",
        "--test-size",
        "2",
        "--seed",
        "17",
        "--out-dir",
        p(dir.path()),
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("seed: 17\n"));
}
