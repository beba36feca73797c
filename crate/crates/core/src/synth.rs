//! Deterministic synthetic corpus for desk-scale end-to-end runs.
//!
//! Cities sit on a coarse lat/lon grid (≥ 5° apart, so no two are within
//! aggregation or Acc@161 range). Each city owns a disjoint set of
//! signature tokens and every tweet's text carries at least one of them,
//! so a bag-of-words classifier can reach perfect accuracy. Timezone,
//! language and posting hour are biased towards per-city values.

use std::collections::BTreeSet;
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::geo::City;
use crate::seed;
use crate::{Error, Result};

const LANGS: [&str; 8] = ["en", "es", "pt", "fr", "de", "ja", "tr", "id"];
const GRID_STEP_DEG: f64 = 5.0;
const GRID_LAT: (f64, f64) = (-50.0, 60.0);
const GRID_LON: (f64, f64) = (-175.0, 175.0);
const JITTER_DEG: f64 = 0.05;
const BBOX_HALF_SPAN_DEG: f64 = 0.02;
// 2020-01-01T00:00:00Z
const EPOCH_BASE: i64 = 1_577_836_800;
const WINDOW_HALF_WIDTH_S: i64 = 3 * 3600;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthSpec {
    pub n_cities: usize,
    pub n_countries: usize,
    pub signature_tokens_per_city: usize,
    pub noise_vocab_size: usize,
    /// Inclusive token-count range for the tweet text.
    pub tokens_per_field: (usize, usize),
    pub n_users: usize,
    /// Inclusive.
    pub tweets_per_user: (usize, usize),
    /// Zipf exponent over city rank; 0 gives uniform cities.
    pub class_skew: f64,
    /// Zipf exponent over noise-word rank; 0 gives uniform noise.
    pub noise_skew: f64,
    /// Fraction of tweets located by a small bounding box instead of a point.
    pub bbox_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_cities: 5,
            n_countries: 2,
            signature_tokens_per_city: 20,
            noise_vocab_size: 300,
            tokens_per_field: (4, 12),
            n_users: 1000,
            tweets_per_user: (1, 3),
            class_skew: 1.0,
            noise_skew: 1.0,
            bbox_fraction: 0.1,
            seed: 7,
        }
    }
}

impl SynthSpec {
    fn grid(&self) -> (usize, usize) {
        let rows = ((GRID_LAT.1 - GRID_LAT.0) / GRID_STEP_DEG) as usize + 1;
        let cols = ((GRID_LON.1 - GRID_LON.0) / GRID_STEP_DEG) as usize + 1;
        (rows, cols)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.n_countries == 0 || self.n_cities < self.n_countries {
            return bad(format!(
                "need n_cities >= n_countries >= 1, got {} cities / {} countries",
                self.n_cities, self.n_countries
            ));
        }
        let (rows, cols) = self.grid();
        if self.n_cities > rows * cols {
            return bad(format!("at most {} cities fit on the grid", rows * cols));
        }
        if self.n_countries > 26 * 26 {
            return bad("at most 676 two-letter country codes".into());
        }
        if self.signature_tokens_per_city == 0 || self.noise_vocab_size == 0 {
            return bad("signature and noise vocabularies must be non-empty".into());
        }
        let (lo, hi) = self.tokens_per_field;
        if lo == 0 || lo > hi {
            return bad(format!("tokens_per_field range {lo}..={hi} is invalid"));
        }
        let (lo, hi) = self.tweets_per_user;
        if lo == 0 || lo > hi {
            return bad(format!("tweets_per_user range {lo}..={hi} is invalid"));
        }
        if self.n_users == 0 {
            return bad("n_users must be >= 1".into());
        }
        for (name, v) in [("class_skew", self.class_skew), ("noise_skew", self.noise_skew)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.bbox_fraction) {
            return bad(format!("bbox_fraction must be in [0,1], got {}", self.bbox_fraction));
        }
        Ok(())
    }
}

/// Ground truth kept alongside the generated lines.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthMeta {
    pub n_tweets: usize,
    pub n_users: usize,
    /// Generating city of every line, in output order.
    pub tweet_city: Vec<u32>,
    /// Tweet count per city, indexed like the city list.
    pub tweets_per_city: Vec<usize>,
    /// Distinct (user, city) pairs; what survives per-user-city dedup.
    pub user_city_pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    /// One JSON object per line in the ingest wire format.
    pub lines: Vec<String>,
    pub cities: Vec<City>,
    pub meta: SynthMeta,
}

impl SynthCorpus {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for l in &self.lines {
            writeln!(w, "{l}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_cities_csv<W: Write>(&self, w: W) -> Result<()> {
        crate::geo::CityTable::new(self.cities.clone())?.write_csv(w)
    }
}

#[derive(Serialize)]
struct WireRecord<'a> {
    user_id: String,
    text: String,
    user_description: &'a str,
    user_name: &'a str,
    profile_location: &'a str,
    tweet_lang: &'a str,
    user_lang: &'a str,
    timezone: &'a str,
    posted_at: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bbox: Option<[f64; 4]>,
    country_code: &'a str,
}

pub fn signature_token(city: usize, j: usize) -> String {
    format!("sig{city}_{j}")
}

fn noise_token(j: usize) -> String {
    format!("w{j}")
}

fn country_code(i: usize) -> String {
    let a = (b'A' + (i / 26) as u8) as char;
    let b = (b'A' + (i % 26) as u8) as char;
    format!("{a}{b}")
}

fn timezone(city: usize) -> String {
    format!("Synth/Zone{city}")
}

/// Inverse-CDF sampler for P(rank r) ∝ r^-s over `n` ranks.
struct Zipf {
    cumulative: Vec<f64>,
}

impl Zipf {
    fn new(n: usize, s: f64) -> Self {
        let weights: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-s)).collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Zipf { cumulative }
    }

    /// Zero-based rank.
    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.gen();
        self.cumulative.partition_point(|&p| p <= u).min(self.cumulative.len() - 1)
    }
}

fn noise_words(rng: &mut ChaCha8Rng, noise: &Zipf, count: std::ops::RangeInclusive<usize>) -> Vec<String> {
    let n = rng.gen_range(count);
    (0..n).map(|_| noise_token(noise.sample(rng))).collect()
}

fn pick_biased(rng: &mut ChaCha8Rng, dominant: &str, p: f64, pool: &[String]) -> String {
    if rng.gen_bool(p) {
        dominant.to_string()
    } else {
        pool[rng.gen_range(0..pool.len())].clone()
    }
}

/// Generate the corpus described by `spec`.
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let (_, cols) = spec.grid();

    let cities: Vec<City> = (0..spec.n_cities)
        .map(|i| City {
            city_id: 1000 + i as u32,
            name: format!("Synthcity{i}"),
            lat: GRID_LAT.0 + GRID_STEP_DEG * (i / cols) as f64,
            lon: GRID_LON.0 + GRID_STEP_DEG * (i % cols) as f64,
            country_code: country_code(i % spec.n_countries),
            population: 1_000_000 / (i as u64 + 1),
        })
        .collect();
    let zones: Vec<String> = (0..spec.n_cities).map(timezone).collect();
    let langs: Vec<String> = LANGS.iter().map(|s| s.to_string()).collect();

    // city index = rank - 1
    let city_dist = Zipf::new(spec.n_cities, spec.class_skew);
    let noise = Zipf::new(spec.noise_vocab_size, spec.noise_skew);

    let mut lines = Vec::new();
    let mut tweet_city = Vec::new();
    let mut tweets_per_city = vec![0; spec.n_cities];
    let mut pairs = BTreeSet::new();

    for u in 0..spec.n_users {
        let c = city_dist.sample(&mut rng);
        let city = &cities[c];
        let lang = &langs[(c % spec.n_countries) % langs.len()];

        let user_name = noise_words(&mut rng, &noise, 1..=2).join(" ");
        let mut description = noise_words(&mut rng, &noise, 0..=spec.tokens_per_field.1);
        if rng.gen_bool(0.3) {
            description.push(signature_token(c, rng.gen_range(0..spec.signature_tokens_per_city)));
        }
        let description = description.join(" ");
        let profile_location = if rng.gen_bool(0.6) {
            city.name.clone()
        } else {
            noise_words(&mut rng, &noise, 0..=2).join(" ")
        };
        let user_lang = pick_biased(&mut rng, lang, 0.9, &langs);

        let n_tweets = rng.gen_range(spec.tweets_per_user.0..=spec.tweets_per_user.1);
        for _ in 0..n_tweets {
            let n_tokens = rng.gen_range(spec.tokens_per_field.0..=spec.tokens_per_field.1);
            let anchor = rng.gen_range(0..n_tokens);
            let words: Vec<String> = (0..n_tokens)
                .map(|k| {
                    if k == anchor || rng.gen_bool(0.2) {
                        signature_token(c, rng.gen_range(0..spec.signature_tokens_per_city))
                    } else {
                        noise_token(noise.sample(&mut rng))
                    }
                })
                .collect();

            let centre_s = (c * 86_400 / spec.n_cities) as i64;
            let offset = rng.gen_range(-WINDOW_HALF_WIDTH_S..=WINDOW_HALF_WIDTH_S);
            let day = rng.gen_range(0..365i64);
            let posted_at = EPOCH_BASE + day * 86_400 + (centre_s + offset).rem_euclid(86_400);

            let lat = city.lat + rng.gen_range(-JITTER_DEG..=JITTER_DEG);
            let lon = city.lon + rng.gen_range(-JITTER_DEG..=JITTER_DEG);
            let (point, bbox) = if rng.gen_bool(spec.bbox_fraction) {
                let h = BBOX_HALF_SPAN_DEG;
                (None, Some([lat - h, lon - h, lat + h, lon + h]))
            } else {
                (Some((lat, lon)), None)
            };

            let tweet_lang = pick_biased(&mut rng, lang, 0.85, &langs);
            let tz = pick_biased(&mut rng, &zones[c], 0.7, &zones);
            let wire = WireRecord {
                user_id: format!("su{u}"),
                text: words.join(" "),
                user_description: &description,
                user_name: &user_name,
                profile_location: &profile_location,
                tweet_lang: &tweet_lang,
                user_lang: &user_lang,
                timezone: &tz,
                posted_at,
                lat: point.map(|p| p.0),
                lon: point.map(|p| p.1),
                bbox,
                country_code: &city.country_code,
            };
            lines.push(serde_json::to_string(&wire)?);
            tweet_city.push(city.city_id);
            tweets_per_city[c] += 1;
            pairs.insert((u, c));
        }
    }

    Ok(SynthCorpus {
        meta: SynthMeta {
            n_tweets: lines.len(),
            n_users: spec.n_users,
            tweet_city,
            tweets_per_city,
            user_city_pairs: pairs.len(),
        },
        lines,
        cities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{haversine_km, CityTable};
    use crate::ingest::read_jsonl;
    use crate::textproc::tokenize;

    fn small() -> SynthSpec {
        SynthSpec {
            n_users: 300,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthSpec { seed: 8, ..small() }).unwrap();
        assert_ne!(a.lines, c.lines);
    }

    #[test]
    fn parses_without_skips_and_matches_truth() {
        let corpus = generate(&small()).unwrap();
        let text = corpus.lines.join("\n");
        let out = read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(out.records.len(), corpus.meta.n_tweets);
        assert_eq!(out.skipped.len(), 0);
        let table = CityTable::new(corpus.cities.clone()).unwrap();
        for (r, &truth) in out.records.iter().zip(&corpus.meta.tweet_city) {
            assert_eq!(table.nearest_city(r.coords()).unwrap(), truth);
        }
        assert_eq!(corpus.meta.tweets_per_city.iter().sum::<usize>(), corpus.meta.n_tweets);
    }

    #[test]
    fn signatures_are_disjoint_and_present() {
        let corpus = generate(&small()).unwrap();
        let out = read_jsonl(corpus.lines.join("\n").as_bytes()).unwrap();
        let index: std::collections::HashMap<u32, usize> =
            corpus.cities.iter().enumerate().map(|(i, c)| (c.city_id, i)).collect();
        for (r, truth) in out.records.iter().zip(&corpus.meta.tweet_city) {
            let own = index[truth];
            let sigs: Vec<String> = tokenize(&r.text).into_iter().filter(|t| t.starts_with("sig")).collect();
            assert!(!sigs.is_empty());
            for s in sigs {
                assert!(s.starts_with(&format!("sig{own}_")), "{s} in a tweet of city {own}");
            }
        }
    }

    #[test]
    fn cities_far_apart() {
        let corpus = generate(&SynthSpec { n_cities: 80, n_countries: 3, n_users: 10, ..small() }).unwrap();
        for (i, a) in corpus.cities.iter().enumerate() {
            for b in &corpus.cities[i + 1..] {
                assert!(haversine_km(a.coords(), b.coords()).unwrap() > 161.0 * 2.0);
            }
        }
        let countries: BTreeSet<&str> = corpus.cities.iter().map(|c| c.country_code.as_str()).collect();
        assert_eq!(countries.len(), 3);
    }

    #[test]
    fn zipf_head_ratio() {
        let spec = SynthSpec {
            n_users: 10_000,
            tweets_per_user: (1, 1),
            class_skew: 1.0,
            ..SynthSpec::default()
        };
        let corpus = generate(&spec).unwrap();
        let counts = &corpus.meta.tweets_per_city;
        assert_eq!(counts.iter().sum::<usize>(), 10_000);
        let ratio = counts[0] as f64 / counts[1] as f64;
        assert!((ratio - 2.0).abs() <= 0.4, "rank-1/rank-2 ratio {ratio}");
    }

    #[test]
    fn rejects_inconsistent_specs() {
        for spec in [
            SynthSpec { n_countries: 6, ..small() },
            SynthSpec { n_countries: 0, ..small() },
            SynthSpec { tokens_per_field: (5, 2), ..small() },
            SynthSpec { tweets_per_user: (0, 2), ..small() },
            SynthSpec { class_skew: -1.0, ..small() },
            SynthSpec { noise_skew: f64::NAN, ..small() },
            SynthSpec { bbox_fraction: 1.5, ..small() },
            SynthSpec { n_cities: 100_000, ..small() },
        ] {
            assert!(generate(&spec).is_err(), "{spec:?}");
        }
    }
}
