//! Tokenize a few tweets and build a frequency-thresholded vocabulary.

use tweetgeo::textproc::{build_vocab, encode_tokens, tokenize};

fn main() -> tweetgeo::Result<()> {
    let tweets = [
        "Sooooo hot in #Pittsburgh today!!! @steelers game at 8 http://t.co/xyz",
        "can't wait for the game tonight #pittsburgh",
        "Game day :) see you at the stadium",
    ];
    let streams: Vec<Vec<String>> = tweets.iter().map(|t| tokenize(t)).collect();
    for (t, toks) in tweets.iter().zip(&streams) {
        println!("{t}\n  -> {toks:?}");
    }

    let vocab = build_vocab(streams.iter().map(Vec::as_slice), 2);
    println!("\nvocabulary (min count 2): {:?}", vocab.content_tokens());
    let ids = encode_tokens(&streams[2], &vocab, 8, 3)?;
    println!("encoded third tweet (max 8): {ids:?}");
    Ok(())
}
