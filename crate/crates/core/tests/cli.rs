//! End-to-end runs of the `ncr` commands on small synthetic logs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use ncr::cli::{self, ExperimentConfig, EXIT_DATA, EXIT_USAGE, MODEL_FILE, STATS_FILE};
use ncr::data::synthetic::PlantedBlocks;
use ncr::data::{load_split, SplitDataset};
use ncr::models::{Model, NbprParams};
use ncr::numerics::{DenseMatrix, RngSeed};
use ncr::Error;
use serde_json::Value;
use tempfile::TempDir;

fn write_log(dir: &Path, cfg: &PlantedBlocks) -> PathBuf {
    let mut text = String::from("user,item,rating,timestamp\n");
    for r in cfg.raw() {
        text.push_str(&format!("u{},i{},1,{}\n", r.user, r.item, r.timestamp));
    }
    let path = dir.join("log.csv");
    fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> i32 {
    cli::run(std::iter::once("ncr").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A prepared split of the default planted fixture.
fn prepared() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let log = write_log(dir.path(), &PlantedBlocks::default());
    let data = dir.path().join("split");
    assert_eq!(run(&["prep", "--data", s(&log), "--format", "csv", "--out", s(&data)]), 0);
    (dir, data)
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec!["train", "--data", s(data), "--out", s(out)];
    args.extend_from_slice(extra);
    run(&args)
}

fn config(data: &Path, out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        data: Some(data.to_path_buf()),
        out: Some(out.to_path_buf()),
        ..ExperimentConfig::default()
    }
}

/// One-hot NBPR whose user rows point at each user's test item, so the test
/// item beats every other candidate and everything else ties.
fn test_item_oracle(split: &SplitDataset) -> NbprParams {
    let (m, n) = (split.num_users(), split.num_items());
    let mut p = NbprParams::zeros(m, n, n);
    for i in 0..n {
        p.item_emb.set(i, i, 1.0);
    }
    for (u, held) in split.test.iter().enumerate() {
        p.user_emb.set(u, held.item, 1.0);
    }
    p.w_pos = DenseMatrix::row_vector(vec![1.0; n]);
    p.w_neg = DenseMatrix::row_vector(vec![1.0; n]);
    p
}

fn save_oracle(split: &SplitDataset, path: &Path) {
    let model = Model::Nbpr(test_item_oracle(split));
    let mut header = model.header();
    header.dataset = Some(split.fingerprint());
    model.save(&header, path).unwrap();
}

#[test]
fn prep_writes_stats_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let log = write_log(dir.path(), &PlantedBlocks::default());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(run(&["prep", "--data", s(&log), "--format", "csv", "--out", s(out)]), 0);
    }
    let stats: Value = serde_json::from_str(&fs::read_to_string(a.join(STATS_FILE)).unwrap()).unwrap();
    assert_eq!(stats["users"], 200);
    assert_eq!(stats["items"], 100);
    assert_eq!(stats["interactions"], 4000);
    assert!((stats["density"].as_f64().unwrap() - 0.2).abs() < 1e-12);
    let split = load_split(&a).unwrap();
    assert_eq!(split.train.num_interactions(), 3600);
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        if name == "config.json" {
            continue;
        }
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.dat");
    let out = dir.path().join("out");
    assert_eq!(run(&["prep", "--data", s(&missing), "--out", s(&out)]), EXIT_DATA);
    assert_eq!(run(&["train", "--out", s(&out)]), EXIT_USAGE);
    assert_eq!(run(&["train", "--bogus"]), EXIT_USAGE);
}

#[test]
fn training_is_deterministic() {
    let (dir, data) = prepared();
    let out = dir.path().join("m");
    let flags = ["--model", "nbpr", "--factors", "8", "--seed", "7", "--max-epochs", "3"];
    let mut runs = Vec::new();
    for _ in 0..2 {
        assert_eq!(train(&data, &out, &flags), 0);
        runs.push((fs::read(out.join(MODEL_FILE)).unwrap(), fs::read(out.join("history.json")).unwrap()));
    }
    assert!(runs[0] == runs[1], "reruns differ");
}

#[test]
fn zero_epochs_saves_the_initial_model() {
    let (dir, data) = prepared();
    let out = dir.path().join("m");
    assert_eq!(train(&data, &out, &["--model", "nbpr", "--seed", "4", "--max-epochs", "0"]), 0);
    let (header, model) = Model::load(&out.join(MODEL_FILE)).unwrap();
    let split = load_split(&data).unwrap();
    assert_eq!(header.dataset.as_deref(), Some(split.fingerprint().as_str()));
    let init = NbprParams::random(split.num_users(), split.num_items(), 8, RngSeed(4)).unwrap();
    assert_eq!(model, Model::Nbpr(init));
}

#[test]
fn every_model_kind_trains_and_evaluates() {
    let (dir, data) = prepared();
    let summary = dir.path().join("summary.csv");
    let kinds: [(&str, &[&str]); 5] = [
        ("itempop", &[]),
        ("bpr", &[]),
        ("nbpr", &[]),
        ("dncr", &["--layers", "2"]),
        ("neupr", &["--layers", "2", "--pretrain"]),
    ];
    for (kind, extra) in kinds {
        let out = dir.path().join(kind);
        let mut flags = vec!["--model", kind, "--max-epochs", "2", "--batch", "64"];
        flags.extend_from_slice(extra);
        assert_eq!(train(&data, &out, &flags), 0, "{kind}");
        let model = out.join(MODEL_FILE);
        let args = ["eval", "--data", s(&data), "--out", s(&out), "--model-file", s(&model), "--summary", s(&summary)];
        assert_eq!(run(&args), 0, "{kind}");
        let report: Value = serde_json::from_str(&fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
        let hr = report["hr"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&hr), "{kind}: {hr}");
    }
    assert!(dir.path().join("neupr/history_nbpr.json").exists());
    let csv = fs::read_to_string(&summary).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "model,factors,ratio,k,hr,ndcg");
    assert_eq!(lines.len(), 6);
    assert!(lines[3].starts_with("nbpr,8,1,10,"));
}

#[test]
fn oracle_model_scores_perfectly_and_reports_repeat() {
    let (dir, data) = prepared();
    let split = load_split(&data).unwrap();
    let model = dir.path().join("oracle.ncr");
    save_oracle(&split, &model);
    let out = dir.path().join("eval");
    let first = cli::cmd_eval(&config(&data, &out), &model, None).unwrap();
    assert_eq!((first.hr, first.ndcg), (1.0, 1.0));
    let bytes = fs::read(out.join("eval.json")).unwrap();
    let second = cli::cmd_eval(&config(&data, &out), &model, None).unwrap();
    assert_eq!(first, second);
    assert_eq!(bytes, fs::read(out.join("eval.json")).unwrap());
}

#[test]
fn sweep_reports_every_cutoff() {
    let (dir, data) = prepared();
    let out = dir.path().join("m");
    assert_eq!(train(&data, &out, &["--model", "nbpr", "--max-epochs", "2"]), 0);
    let model = out.join(MODEL_FILE);
    assert_eq!(run(&["sweep", "--data", s(&data), "--out", s(&out), "--model-file", s(&model)]), 0);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(3).map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 10);
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row[0] as usize, k + 1);
        assert!(row[2] <= row[1] + 1e-12);
    }
    assert!(rows.windows(2).all(|w| w[0][1] <= w[1][1]));
}

#[test]
fn recommend_returns_unseen_items_in_model_order() {
    let (dir, data) = prepared();
    let split = load_split(&data).unwrap();
    let out = dir.path().join("m");
    assert_eq!(train(&data, &out, &["--model", "nbpr", "--max-epochs", "2", "--seed", "3"]), 0);
    let file = out.join(MODEL_FILE);
    let (_, model) = Model::load(&file).unwrap();
    let Model::Nbpr(nbpr) = &model else { panic!("expected nbpr") };

    let mut cfg = config(&data, &out);
    for k in [1, 10] {
        cfg.k = k;
        let line = cli::cmd_recommend(&cfg, &file, "u17").unwrap();
        let v: Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["user"], "u17");
        let items: Vec<&str> = v["items"].as_array().unwrap().iter().map(|x| x.as_str().unwrap()).collect();
        assert_eq!(items.len(), k);

        let u = split.train.user_index("u17").unwrap();
        let ids = split.train.item_ids();
        let unseen: Vec<usize> = (0..split.num_items()).filter(|&i| !split.is_known(u, i)).collect();
        // NBPR prefers c over o iff u·((w_pos + w_neg) ⊙ v_c) is larger
        let score = |c: usize| -> f64 {
            (0..nbpr.embedding_dim())
                .map(|d| {
                    nbpr.user_emb.get(u, d)
                        * (nbpr.w_pos.get(0, d) + nbpr.w_neg.get(0, d))
                        * nbpr.item_emb.get(c, d)
                })
                .sum()
        };
        let mut expected = unseen.clone();
        expected.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
        let expected: Vec<&str> = expected[..k].iter().map(|&i| ids[i].as_str()).collect();
        assert_eq!(items, expected);
        for item in &items {
            let i = ids.iter().position(|x| x == item).unwrap();
            assert!(!split.is_known(u, i));
        }
    }
    assert!(matches!(
        cli::cmd_recommend(&cfg, &file, "nobody"),
        Err(Error::Data(_))
    ));

    let output = Command::new(env!("CARGO_BIN_EXE_ncr"))
        .args(["recommend", "--data", s(&data), "--model-file", s(&file), "--user", "u17", "--k", "3"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let v: Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(v["items"].as_array().unwrap().len(), 3);

    let status = Command::new(env!("CARGO_BIN_EXE_ncr"))
        .args(["recommend", "--data", s(&data), "--model-file", s(&file), "--user", "nobody"])
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(EXIT_DATA));
}

#[test]
fn mismatched_model_is_rejected_with_fingerprints() {
    let (dir, data) = prepared();
    let out = dir.path().join("m");
    assert_eq!(train(&data, &out, &["--model", "nbpr", "--max-epochs", "0"]), 0);

    let small = PlantedBlocks {
        users: 40,
        ..PlantedBlocks::default()
    };
    let log = write_log(dir.path(), &small);
    let other = dir.path().join("other");
    let prep = ["prep", "--data", s(&log), "--format", "csv", "--min-count", "1", "--out", s(&other)];
    assert_eq!(run(&prep), 0);

    let err = cli::cmd_eval(&config(&other, &dir.path().join("e")), &out.join(MODEL_FILE), None).unwrap_err();
    let message = err.to_string();
    let trained = load_split(&data).unwrap().fingerprint();
    let target = load_split(&other).unwrap().fingerprint();
    assert!(message.contains(&trained) && message.contains(&target), "{message}");
    assert_eq!(cli::exit_code(&err), EXIT_DATA);
}
