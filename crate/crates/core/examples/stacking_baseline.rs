//! Stacked naive Bayes with and without information-gain-ratio selection
//! on a synthetic country task.

use tweetgeo::bayes::{fit_stacking, StackConfig, IGR_TOP_PERCENT_COUNTRY};
use tweetgeo::ingest::{read_jsonl, split_by_user, SplitSpec};
use tweetgeo::labels::LabelSpace;
use tweetgeo::synth::{generate, SynthSpec};

fn main() -> tweetgeo::Result<()> {
    let corpus = generate(&SynthSpec {
        n_cities: 8,
        n_countries: 3,
        n_users: 1500,
        ..SynthSpec::default()
    })?;
    let records = read_jsonl(corpus.lines.join("\n").as_bytes())?.records;
    let labels = LabelSpace::countries(&records, None)?;
    let splits = split_by_user(
        records,
        &SplitSpec {
            test_user_fraction: 0.2,
            dev_user_count: 1,
            seed: 3,
        },
    )?;
    let ys = |rs: &[tweetgeo::ingest::Record]| rs.iter().map(|r| labels.label_of(r)).collect::<tweetgeo::Result<Vec<_>>>();
    let (train_y, test_y) = (ys(&splits.train)?, ys(&splits.test)?);

    for igr in [None, Some(IGR_TOP_PERCENT_COUNTRY)] {
        let config = StackConfig {
            min_count: 3,
            igr_top_percent: igr,
            ..StackConfig::default()
        };
        let (model, report) = fit_stacking(&splits.train, &train_y, labels.len(), &config)?;
        let hits = splits
            .test
            .iter()
            .zip(&test_y)
            .filter(|(r, &y)| model.predict(r).0 == y)
            .count();
        println!(
            "{:<10} base CV acc {:?}\n           vocab sizes {:?}\n           test acc {:.4}",
            if igr.is_some() { "stacking+" } else { "stacking" },
            report.base_cv_accuracy.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            report.vocab_sizes,
            hits as f64 / splits.test.len() as f64
        );
    }
    Ok(())
}
