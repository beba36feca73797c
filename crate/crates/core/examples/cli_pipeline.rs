//! The whole command-line pipeline in a temporary directory:
//! synth -> prepare -> train (stacking) -> eval -> predict.
//!
//! The same steps from a shell:
//!
//! ```text
//! tweetgeo synth   --out-dir raw --users 600
//! tweetgeo prepare --input raw/raw.jsonl --cities raw/cities.csv --task city --out-dir prep --dev-users 100
//! tweetgeo train   --data prep --task city --model stacking --out model.bin
//! tweetgeo eval    --model model.bin --data prep/test.jsonl --task city --out-dir reports
//! tweetgeo predict --model model.bin --input prep/test.jsonl --output pred.jsonl --min-prob 0.9
//! ```

use std::fs;

fn main() -> tweetgeo::Result<()> {
    let dir = tempfile::tempdir()?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();

    let steps: Vec<Vec<String>> = vec![
        vec!["synth".into(), "--out-dir".into(), p("raw"), "--users".into(), "600".into()],
        vec![
            "prepare".into(),
            "--input".into(),
            p("raw/raw.jsonl"),
            "--cities".into(),
            p("raw/cities.csv"),
            "--task".into(),
            "city".into(),
            "--out-dir".into(),
            p("prep"),
            "--dev-users".into(),
            "100".into(),
        ],
        vec![
            "train".into(),
            "--data".into(),
            p("prep"),
            "--task".into(),
            "city".into(),
            "--model".into(),
            "stacking".into(),
            "--out".into(),
            p("model.bin"),
        ],
        vec![
            "eval".into(),
            "--model".into(),
            p("model.bin"),
            "--data".into(),
            p("prep/test.jsonl"),
            "--task".into(),
            "city".into(),
            "--out-dir".into(),
            p("reports"),
        ],
        vec![
            "predict".into(),
            "--model".into(),
            p("model.bin"),
            "--input".into(),
            p("prep/test.jsonl"),
            "--output".into(),
            p("pred.jsonl"),
            "--min-prob".into(),
            "0.9".into(),
        ],
    ];
    for step in steps {
        println!("$ tweetgeo {}", step.join(" "));
        tweetgeo::cli::run(std::iter::once("tweetgeo".to_string()).chain(step))?;
    }

    println!("\nstats.csv:\n{}", fs::read_to_string(p("prep/stats.csv"))?);
    println!("metrics.csv:\n{}", fs::read_to_string(p("reports/metrics.csv"))?);
    let first = fs::read_to_string(p("pred.jsonl"))?;
    println!("first prediction: {}", first.lines().next().unwrap_or("<none>"));
    Ok(())
}
