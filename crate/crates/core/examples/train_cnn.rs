//! Train a small CNN through the library API on a synthetic city task and
//! report test metrics.

use tweetgeo::cnn::{CnnConfig, CnnModel, FeatureEncoder};
use tweetgeo::encode::CategoryMaps;
use tweetgeo::eval::{Metrics, Prediction};
use tweetgeo::geo::CityTable;
use tweetgeo::ingest::{dedup_user_city, read_jsonl, split_by_user, Record, SplitSpec};
use tweetgeo::labels::LabelSpace;
use tweetgeo::synth::{generate, SynthSpec};
use tweetgeo::textproc::{build_vocab, tokenize};
use tweetgeo::train::{train, Example, TrainConfig};

fn main() -> tweetgeo::Result<()> {
    let corpus = generate(&SynthSpec {
        n_users: 1200,
        tweets_per_user: (1, 1),
        ..SynthSpec::default()
    })?;
    let table = CityTable::new(corpus.cities.clone())?;
    let mut records = read_jsonl(corpus.lines.join("\n").as_bytes())?.records;
    let points: Vec<(f64, f64)> = records.iter().map(Record::coords).collect();
    for (r, id) in records.iter_mut().zip(table.nearest_cities(&points)?) {
        r.city_id = Some(id);
    }
    let splits = split_by_user(
        dedup_user_city(records, 0)?,
        &SplitSpec {
            test_user_fraction: 0.2,
            dev_user_count: 200,
            seed: 0,
        },
    )?;

    let labels = LabelSpace::cities(&table)?;
    let field_tokens = |r: &Record| -> Vec<String> {
        [&r.text, &r.user_description, &r.profile_location, &r.user_name]
            .iter()
            .flat_map(|s| tokenize(s))
            .collect()
    };
    let streams: Vec<Vec<String>> = splits.train.iter().map(field_tokens).collect();
    let vocab = build_vocab(streams.iter().map(Vec::as_slice), 5);
    let maps = CategoryMaps::build(&splits.train);

    let config = CnnConfig {
        embed_dim: 32,
        filters_per_window: 32,
        max_lens: [12, 12, 6, 5],
        n_labels: labels.len(),
        ..CnnConfig::default()
    };
    let encoder = FeatureEncoder::new(vocab.clone(), maps.clone(), &config);
    let examples = |rs: &[Record]| -> tweetgeo::Result<Vec<Example>> {
        rs.iter()
            .map(|r| {
                Ok(Example {
                    features: encoder.encode(r)?,
                    label: labels.label_of(r)?,
                })
            })
            .collect()
    };
    let (train_x, dev_x) = (examples(&splits.train)?, examples(&splits.dev)?);
    println!("train {} / dev {} / test {}", train_x.len(), dev_x.len(), splits.test.len());

    let model = CnnModel::<f32>::new(config, vocab.len(), maps.onehot_dim(), 1)?;
    let (model, log) = train(
        model,
        &train_x,
        &dev_x,
        &TrainConfig {
            batch_size: 32,
            max_epochs: 10,
            ..TrainConfig::default()
        },
    )?;
    for e in &log.epochs {
        println!(
            "epoch {:>2}  loss {:.4}  dev acc {:.4}{}",
            e.epoch,
            e.train_loss,
            e.dev_accuracy.unwrap_or(f64::NAN),
            if e.best { "  *" } else { "" }
        );
    }

    let preds = splits
        .test
        .iter()
        .map(|r| Ok(Prediction::from_probs(&model.predict(&encoder.encode(r)?)?, labels.label_of(r)?, r.coords())))
        .collect::<tweetgeo::Result<Vec<_>>>()?;
    let m = Metrics::compute(&preds, &labels)?;
    println!(
        "test: acc {:.4}  acc@top5 {:.4}  acc@161 {:.4}  median {:.1} km",
        m.acc,
        m.acc_top5,
        m.acc_at_161.unwrap_or(f64::NAN),
        m.median_km.unwrap_or(f64::NAN)
    );
    Ok(())
}
