//! Generate a small synthetic corpus and show what it looks like.

use tweetgeo::ingest::read_jsonl;
use tweetgeo::synth::{generate, SynthSpec};

fn main() -> tweetgeo::Result<()> {
    let spec = SynthSpec {
        n_users: 200,
        ..SynthSpec::default()
    };
    let corpus = generate(&spec)?;

    println!("{} tweets from {} users", corpus.meta.n_tweets, corpus.meta.n_users);
    for (city, n) in corpus.cities.iter().zip(&corpus.meta.tweets_per_city) {
        println!(
            "  {} {:<11} {:>7.2} {:>8.2}  {n} tweets",
            city.city_id, city.name, city.lat, city.lon
        );
    }

    // The lines are in the ingest format and parse without skips.
    let parsed = read_jsonl(corpus.lines.join("\n").as_bytes())?;
    println!("parsed {} records, skipped {}", parsed.records.len(), parsed.skipped.len());
    println!("first line: {}", corpus.lines[0]);
    Ok(())
}
