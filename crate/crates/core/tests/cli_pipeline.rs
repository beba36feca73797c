use std::fs;
use std::path::Path;

use tweetgeo::cli::{self, cmd_predict, PredictArgs};

fn run(args: &[&str]) -> tweetgeo::Result<()> {
    cli::run(std::iter::once("tweetgeo").chain(args.iter().copied()))
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn synth_and_prepare(d: &Path, task: &str) {
    run(&["synth", "--out-dir", &p(d, "raw"), "--users", "400", "--seed", "11"]).unwrap();
    run(&[
        "prepare", "--input", &p(d, "raw/raw.jsonl"), "--cities", &p(d, "raw/cities.csv"), "--task", task, "--out-dir",
        &p(d, "prep"), "--dev-users", "60", "--min-count", "3",
    ])
    .unwrap();
}

fn stats_row(d: &Path, split: &str) -> csv::StringRecord {
    let mut r = csv::Reader::from_path(d.join("prep/stats.csv")).unwrap();
    r.records().map(Result::unwrap).find(|row| &row[0] == split).unwrap()
}

#[test]
fn prepare_counts_match_generator_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_and_prepare(d, "city");
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("raw/synth_meta.json")).unwrap()).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("prep/manifest.json")).unwrap()).unwrap();

    assert_eq!(manifest["input_lines"], meta["n_tweets"]);
    assert_eq!(manifest["after_dedup"], meta["user_city_pairs"]);
    let all = stats_row(d, "all");
    assert_eq!(all[1].parse::<u64>().unwrap(), meta["user_city_pairs"].as_u64().unwrap());
    assert_eq!(all[2].parse::<u64>().unwrap(), meta["n_users"].as_u64().unwrap());
    let split_total: u64 = ["train", "dev", "test"].iter().map(|s| stats_row(d, s)[1].parse::<u64>().unwrap()).sum();
    assert_eq!(split_total, meta["user_city_pairs"].as_u64().unwrap());
}

#[test]
fn city_task_without_city_table_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run(&["synth", "--out-dir", &p(d, "raw"), "--users", "50"]).unwrap();
    let err = run(&["prepare", "--input", &p(d, "raw/raw.jsonl"), "--task", "city", "--out-dir", &p(d, "prep")]).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    let missing = run(&["prepare", "--input", &p(d, "nope.jsonl"), "--task", "country", "--out-dir", &p(d, "prep")]);
    assert!(missing.unwrap_err().exit_code() != 0);
}

#[test]
fn stacking_plus_shrinks_the_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_and_prepare(d, "city");
    let train = |model: &str, out: &str| {
        run(&["train", "--data", &p(d, "prep"), "--task", "city", "--model", model, "--out", &p(d, out)]).unwrap();
        match cli::LoadedModel::load(&d.join(out)).unwrap() {
            cli::LoadedModel::Stacking(b) => b.model.vocabs.iter().map(|v| v.len()).collect::<Vec<_>>(),
            cli::LoadedModel::Cnn(_) => panic!("expected a stacking bundle"),
        }
    };
    let plain = train("stacking", "s.bin");
    let plus = train("stacking+", "sp.bin");
    // Four text vocabularies are cut to 40%; the categorical one is untouched.
    for i in 0..4 {
        assert!(plus[i] < plain[i], "{plus:?} vs {plain:?}");
    }
    assert_eq!(plus[4], plain[4]);
}

#[test]
fn country_eval_omits_distance_metrics_and_checks_the_task() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_and_prepare(d, "country");
    run(&["train", "--data", &p(d, "prep"), "--task", "country", "--model", "stacking", "--out", &p(d, "m.bin")]).unwrap();
    run(&["eval", "--model", &p(d, "m.bin"), "--data", &p(d, "prep/test.jsonl"), "--task", "country", "--out-dir", &p(d, "ev")])
        .unwrap();
    let metrics = fs::read_to_string(d.join("ev/metrics.csv")).unwrap();
    assert!(metrics.contains("acc_top5"), "{metrics}");
    assert!(!metrics.contains("acc_at_161") && !metrics.contains("median_km"), "{metrics}");

    let mismatch =
        run(&["eval", "--model", &p(d, "m.bin"), "--data", &p(d, "prep/test.jsonl"), "--task", "city", "--out-dir", &p(d, "x")]);
    assert_eq!(mismatch.unwrap_err().exit_code(), 1);
}

#[test]
fn predict_accounts_for_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_and_prepare(d, "city");
    run(&["train", "--data", &p(d, "prep"), "--task", "city", "--model", "stacking", "--out", &p(d, "m.bin")]).unwrap();

    let mut input = fs::read_to_string(d.join("prep/test.jsonl")).unwrap();
    input.push_str("{not json\n");
    fs::write(d.join("in.jsonl"), &input).unwrap();
    let summary = cmd_predict(&PredictArgs {
        model: d.join("m.bin"),
        input: d.join("in.jsonl"),
        output: d.join("out.jsonl"),
        min_prob: Some(0.99),
    })
    .unwrap();
    assert_eq!(summary.skipped, 1);
    assert_eq!(summary.written + summary.filtered + summary.skipped, summary.input_rows);
    let out = fs::read_to_string(d.join("out.jsonl")).unwrap();
    assert_eq!(out.lines().count(), summary.written);
    for line in out.lines() {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(row["top_prob"].as_f64().unwrap() >= 0.99);
        assert_eq!(row["top5"].as_array().unwrap().len(), 5);
    }

    fs::write(d.join("empty.jsonl"), "").unwrap();
    let empty = cmd_predict(&PredictArgs {
        model: d.join("m.bin"),
        input: d.join("empty.jsonl"),
        output: d.join("empty_out.jsonl"),
        min_prob: None,
    })
    .unwrap();
    assert_eq!((empty.input_rows, empty.written), (0, 0));
    assert_eq!(fs::read_to_string(d.join("empty_out.jsonl")).unwrap(), "");
}
