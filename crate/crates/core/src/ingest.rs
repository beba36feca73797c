//! Record parsing, coordinate resolution, per-(user, city) deduplication and
//! user-disjoint train/dev/test splitting.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::seed::keyed_hash;
use crate::{Error, Result};

/// Largest bounding-box side, in degrees, accepted as a location.
pub const MAX_BBOX_SPAN_DEG: f64 = 0.1;

// Absorbs decimal round-off in spans like 40.1 - 40.0.
const SPAN_SLACK: f64 = 1e-9;

/// One tweet-like observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub user_id: String,
    pub text: String,
    pub user_description: String,
    pub user_name: String,
    pub profile_location: String,
    pub tweet_lang: String,
    pub user_lang: String,
    pub timezone: String,
    pub posted_at: i64,
    pub lat: f64,
    pub lon: f64,
    /// Always written as `null`; coordinates are resolved on input.
    #[serde(default)]
    pub bbox: Option<[f64; 4]>,
    pub country_code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub city_id: Option<u32>,
}

impl Record {
    pub fn coords(&self) -> (f64, f64) {
        (self.lat, self.lon)
    }
}

/// Wire form of an input line; every field optional so that defaults and
/// skips are decided in one place.
#[derive(Debug, Default, Deserialize)]
struct RawRecord {
    user_id: Option<serde_json::Value>,
    text: Option<String>,
    user_description: Option<String>,
    user_name: Option<String>,
    profile_location: Option<String>,
    tweet_lang: Option<String>,
    user_lang: Option<String>,
    timezone: Option<String>,
    posted_at: Option<i64>,
    lat: Option<f64>,
    lon: Option<f64>,
    bbox: Option<Vec<f64>>,
    country_code: Option<String>,
    city_id: Option<u32>,
}

/// Why an input line was not turned into a [`Record`].
#[derive(Debug, Clone, PartialEq)]
pub enum Skip {
    Malformed(String),
    MissingField(&'static str),
    BadCoordinates(String),
}

impl std::fmt::Display for Skip {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Skip::Malformed(m) => write!(f, "malformed line: {m}"),
            Skip::MissingField(name) => write!(f, "missing required field `{name}`"),
            Skip::BadCoordinates(m) => write!(f, "bad coordinates: {m}"),
        }
    }
}

fn user_id_string(v: serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) if !s.is_empty() => Some(s),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn point_from(lat: Option<f64>, lon: Option<f64>) -> Option<(f64, f64)> {
    lat.zip(lon)
}

fn bbox_from(raw: Option<Vec<f64>>) -> std::result::Result<Option<[f64; 4]>, Skip> {
    match raw {
        None => Ok(None),
        Some(v) => <[f64; 4]>::try_from(v.as_slice())
            .map(Some)
            .map_err(|_| Skip::BadCoordinates(format!("bbox needs 4 values, got {}", v.len()))),
    }
}

/// Parse one labelled JSONL line.
///
/// Coordinates, `user_id`, `posted_at` and `country_code` are required;
/// missing text and categorical fields default to `""`.
pub fn parse_record(line: &str) -> std::result::Result<Record, Skip> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| Skip::Malformed(e.to_string()))?;
    let user_id = raw
        .user_id
        .and_then(user_id_string)
        .ok_or(Skip::MissingField("user_id"))?;
    let posted_at = raw.posted_at.ok_or(Skip::MissingField("posted_at"))?;
    if posted_at < 0 {
        return Err(Skip::Malformed(format!("negative posted_at {posted_at}")));
    }
    let country_code = raw.country_code.ok_or(Skip::MissingField("country_code"))?;
    let bbox = bbox_from(raw.bbox)?;
    let (lat, lon) = resolve_coordinates(point_from(raw.lat, raw.lon), bbox)?;
    Ok(Record {
        user_id,
        text: raw.text.unwrap_or_default(),
        user_description: raw.user_description.unwrap_or_default(),
        user_name: raw.user_name.unwrap_or_default(),
        profile_location: raw.profile_location.unwrap_or_default(),
        tweet_lang: raw.tweet_lang.unwrap_or_default(),
        user_lang: raw.user_lang.unwrap_or_default(),
        timezone: raw.timezone.unwrap_or_default(),
        posted_at,
        lat,
        lon,
        bbox: None,
        country_code,
        city_id: raw.city_id,
    })
}

/// Parse a line for inference: only `posted_at` is required; location,
/// label and user id default to zero / empty.
pub fn parse_unlabeled(line: &str) -> std::result::Result<Record, Skip> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| Skip::Malformed(e.to_string()))?;
    let posted_at = raw.posted_at.ok_or(Skip::MissingField("posted_at"))?;
    if posted_at < 0 {
        return Err(Skip::Malformed(format!("negative posted_at {posted_at}")));
    }
    let bbox = bbox_from(raw.bbox)?;
    let (lat, lon) = match (point_from(raw.lat, raw.lon), bbox) {
        (None, None) => (0.0, 0.0),
        (p, b) => resolve_coordinates(p, b)?,
    };
    Ok(Record {
        user_id: raw.user_id.and_then(user_id_string).unwrap_or_default(),
        text: raw.text.unwrap_or_default(),
        user_description: raw.user_description.unwrap_or_default(),
        user_name: raw.user_name.unwrap_or_default(),
        profile_location: raw.profile_location.unwrap_or_default(),
        tweet_lang: raw.tweet_lang.unwrap_or_default(),
        user_lang: raw.user_lang.unwrap_or_default(),
        timezone: raw.timezone.unwrap_or_default(),
        posted_at,
        lat,
        lon,
        bbox: None,
        country_code: raw.country_code.unwrap_or_default(),
        city_id: raw.city_id,
    })
}

fn check_lat_lon(lat: f64, lon: f64) -> std::result::Result<(), Skip> {
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(Skip::BadCoordinates(format!("({lat}, {lon}) out of range")));
    }
    Ok(())
}

/// Pick the location of a tweet: an exact point wins; otherwise the centre
/// of a bounding box no wider than [`MAX_BBOX_SPAN_DEG`] on either axis.
/// `bbox` is `[lat_min, lon_min, lat_max, lon_max]`.
pub fn resolve_coordinates(
    point: Option<(f64, f64)>,
    bbox: Option<[f64; 4]>,
) -> std::result::Result<(f64, f64), Skip> {
    if let Some((lat, lon)) = point {
        check_lat_lon(lat, lon)?;
        return Ok((lat, lon));
    }
    let [lat_min, lon_min, lat_max, lon_max] = bbox.ok_or(Skip::MissingField("lat/lon or bbox"))?;
    check_lat_lon(lat_min, lon_min)?;
    check_lat_lon(lat_max, lon_max)?;
    if lat_min > lat_max || lon_min > lon_max {
        return Err(Skip::BadCoordinates("degenerate bbox (min > max)".into()));
    }
    let (lat_span, lon_span) = (lat_max - lat_min, lon_max - lon_min);
    if lat_span > MAX_BBOX_SPAN_DEG + SPAN_SLACK || lon_span > MAX_BBOX_SPAN_DEG + SPAN_SLACK {
        return Err(Skip::BadCoordinates(format!(
            "bbox spans {lat_span:.4} x {lon_span:.4} degrees"
        )));
    }
    Ok(((lat_min + lat_max) / 2.0, (lon_min + lon_max) / 2.0))
}

/// Records read from a JSONL stream plus the skipped-line accounting.
#[derive(Debug, Default)]
pub struct ReadOutcome {
    pub records: Vec<Record>,
    pub lines: usize,
    pub skipped: Vec<(usize, Skip)>,
}

/// Read every non-blank line with `parse`, counting skips instead of failing.
pub fn read_jsonl_with<R: BufRead>(
    reader: R,
    parse: fn(&str) -> std::result::Result<Record, Skip>,
) -> Result<ReadOutcome> {
    let mut out = ReadOutcome::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.lines += 1;
        match parse(&line) {
            Ok(r) => out.records.push(r),
            Err(skip) => out.skipped.push((i + 1, skip)),
        }
    }
    Ok(out)
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<ReadOutcome> {
    read_jsonl_with(reader, parse_record)
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[Record]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn record_key(seed: u64, r: &Record) -> Result<u64> {
    Ok(keyed_hash(seed, &serde_json::to_vec(r)?))
}

/// Keep one record per `key`, chosen by the smallest seeded content hash,
/// then sort survivors by key. The choice does not depend on input order.
pub fn dedup_by<K, F>(records: Vec<Record>, seed: u64, mut key: F) -> Result<Vec<Record>>
where
    K: Ord,
    F: FnMut(&Record) -> Result<K>,
{
    let mut best: BTreeMap<K, (u64, Record)> = BTreeMap::new();
    for r in records {
        let k = key(&r)?;
        let h = record_key(seed, &r)?;
        match best.get(&k) {
            Some((prev, _)) if *prev <= h => {}
            _ => {
                best.insert(k, (h, r));
            }
        }
    }
    Ok(best.into_values().map(|(_, r)| r).collect())
}

/// One randomly chosen record per (user, city) pair.
pub fn dedup_user_city(records: Vec<Record>, seed: u64) -> Result<Vec<Record>> {
    dedup_by(records, seed, |r| {
        let city = r
            .city_id
            .ok_or_else(|| Error::data(format!("record of user {} has no city_id", r.user_id)))?;
        Ok((r.user_id.clone(), city))
    })
}

/// User-level split parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub test_user_fraction: f64,
    pub dev_user_count: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_user_fraction: 0.10,
            dev_user_count: 50_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<Record>,
    pub dev: Vec<Record>,
    pub test: Vec<Record>,
}

/// Partition records by user: ⌊fraction·U⌋ test users, `dev_user_count` dev
/// users, the rest train. Users are ordered by a seeded hash of their id.
pub fn split_by_user(records: Vec<Record>, spec: &SplitSpec) -> Result<Splits> {
    if !(spec.test_user_fraction > 0.0 && spec.test_user_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test_user_fraction must be in (0,1), got {}",
            spec.test_user_fraction
        )));
    }
    let users: BTreeSet<&str> = records.iter().map(|r| r.user_id.as_str()).collect();
    let mut order: Vec<(u64, &str)> = users
        .into_iter()
        .map(|u| (keyed_hash(spec.seed, u.as_bytes()), u))
        .collect();
    order.sort_unstable();

    let n_test = (spec.test_user_fraction * order.len() as f64).floor() as usize;
    let remaining = order.len() - n_test;
    if spec.dev_user_count >= remaining {
        return Err(Error::invalid(format!(
            "dev_user_count {} must be below the {remaining} non-test users",
            spec.dev_user_count
        )));
    }

    #[derive(Clone, Copy)]
    enum Part {
        Train,
        Dev,
        Test,
    }
    let assignment: HashMap<String, Part> = order
        .iter()
        .enumerate()
        .map(|(i, (_, u))| {
            let part = if i < n_test {
                Part::Test
            } else if i < n_test + spec.dev_user_count {
                Part::Dev
            } else {
                Part::Train
            };
            (u.to_string(), part)
        })
        .collect();

    let mut splits = Splits::default();
    for r in records {
        match assignment[&r.user_id] {
            Part::Train => splits.train.push(r),
            Part::Dev => splits.dev.push(r),
            Part::Test => splits.test.push(r),
        }
    }
    Ok(splits)
}

/// Corpus summary: tweet/user counts, distinct timezones, languages,
/// countries and cities, and tweets-per-country / per-city mean and
/// population standard deviation.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StatsReport {
    pub tweets: usize,
    pub users: usize,
    pub timezones: usize,
    pub languages: usize,
    pub countries: usize,
    pub tweets_per_country_mean: f64,
    pub tweets_per_country_std: f64,
    pub cities: usize,
    pub tweets_per_city_mean: f64,
    pub tweets_per_city_std: f64,
}

fn mean_std(counts: impl Iterator<Item = usize>) -> (f64, f64) {
    let counts: Vec<f64> = counts.map(|c| c as f64).collect();
    if counts.is_empty() {
        return (0.0, 0.0);
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn dataset_stats(records: &[Record]) -> StatsReport {
    let users: BTreeSet<&str> = records.iter().map(|r| r.user_id.as_str()).collect();
    let timezones: BTreeSet<&str> = records
        .iter()
        .map(|r| r.timezone.as_str())
        .filter(|s| !s.is_empty())
        .collect();
    let languages: BTreeSet<&str> = records
        .iter()
        .flat_map(|r| [r.tweet_lang.as_str(), r.user_lang.as_str()])
        .filter(|s| !s.is_empty())
        .collect();
    let mut per_country: BTreeMap<&str, usize> = BTreeMap::new();
    let mut per_city: BTreeMap<u32, usize> = BTreeMap::new();
    for r in records {
        *per_country.entry(r.country_code.as_str()).or_default() += 1;
        if let Some(c) = r.city_id {
            *per_city.entry(c).or_default() += 1;
        }
    }
    let (country_mean, country_std) = mean_std(per_country.values().copied());
    let (city_mean, city_std) = mean_std(per_city.values().copied());
    StatsReport {
        tweets: records.len(),
        users: users.len(),
        timezones: timezones.len(),
        languages: languages.len(),
        countries: per_country.len(),
        tweets_per_country_mean: country_mean,
        tweets_per_country_std: country_std,
        cities: per_city.len(),
        tweets_per_city_mean: city_mean,
        tweets_per_city_std: city_std,
    }
}

impl StatsReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.serialize(self)?;
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::Record;

    pub fn record(user: &str, country: &str, city: Option<u32>) -> Record {
        Record {
            user_id: user.into(),
            text: String::new(),
            user_description: String::new(),
            user_name: String::new(),
            profile_location: String::new(),
            tweet_lang: "en".into(),
            user_lang: "en".into(),
            timezone: String::new(),
            posted_at: 0,
            lat: 0.0,
            lon: 0.0,
            bbox: None,
            country_code: country.into(),
            city_id: city,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::record;
    use super::*;
    use proptest::prelude::*;

    const FULL: &str = r#"{"user_id":"u1","text":"hi there","user_description":"d","user_name":"n","profile_location":"pgh","tweet_lang":"en","user_lang":"en","timezone":"Eastern","posted_at":3600,"lat":40.0,"lon":-80.0,"bbox":null,"country_code":"US"}"#;

    #[test]
    fn parses_full_line() {
        let r = parse_record(FULL).unwrap();
        assert_eq!(r.user_id, "u1");
        assert_eq!(r.coords(), (40.0, -80.0));
        assert_eq!(r.profile_location, "pgh");
        assert_eq!(r.city_id, None);
    }

    #[test]
    fn missing_description_defaults_to_empty() {
        let line = FULL.replace(r#""user_description":"d","#, "");
        assert_eq!(parse_record(&line).unwrap().user_description, "");
    }

    #[test]
    fn out_of_range_latitude_is_skipped() {
        let line = FULL.replace(r#""lat":40.0"#, r#""lat":95.0"#);
        assert!(matches!(parse_record(&line), Err(Skip::BadCoordinates(_))));
        let out = read_jsonl(format!("{FULL}\n{line}\nnot json\n").as_bytes()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.skipped.len(), 2);
        assert_eq!(out.lines, 3);
    }

    #[test]
    fn missing_user_is_skipped() {
        let line = FULL.replace(r#""user_id":"u1","#, "");
        assert_eq!(parse_record(&line), Err(Skip::MissingField("user_id")));
    }

    #[test]
    fn numeric_user_id_accepted() {
        let line = FULL.replace(r#""user_id":"u1""#, r#""user_id":12345"#);
        assert_eq!(parse_record(&line).unwrap().user_id, "12345");
    }

    #[test]
    fn bbox_center_used_when_point_absent() {
        let line = FULL
            .replace(r#""lat":40.0,"lon":-80.0,"bbox":null"#, r#""bbox":[40.0,-80.0,40.08,-79.94]"#);
        let r = parse_record(&line).unwrap();
        assert!((r.lat - 40.04).abs() < 1e-12 && (r.lon + 79.97).abs() < 1e-12);
    }

    #[test]
    fn resolve_rules() {
        assert_eq!(resolve_coordinates(Some((40.0, -80.0)), None), Ok((40.0, -80.0)));
        let (lat, lon) = resolve_coordinates(None, Some([40.00, -80.00, 40.08, -79.94])).unwrap();
        assert!((lat - 40.04).abs() < 1e-12 && (lon + 79.97).abs() < 1e-12);
        assert!(resolve_coordinates(None, Some([40.0, -80.0, 40.2, -79.9])).is_err());
        assert!(resolve_coordinates(None, None).is_err());
        assert!(resolve_coordinates(None, Some([40.1, -80.0, 40.0, -79.95])).is_err());
        // exactly 0.1 wide is accepted
        assert!(resolve_coordinates(None, Some([40.0, -80.0, 40.1, -79.9])).is_ok());
        // point wins over an oversized box
        assert_eq!(
            resolve_coordinates(Some((1.0, 2.0)), Some([0.0, 0.0, 5.0, 5.0])),
            Ok((1.0, 2.0))
        );
    }

    #[test]
    fn unlabeled_parse_tolerates_missing_location() {
        let r = parse_unlabeled(r#"{"text":"x","posted_at":5}"#).unwrap();
        assert_eq!((r.lat, r.lon), (0.0, 0.0));
        assert!(parse_unlabeled(r#"{"text":"x"}"#).is_err());
    }

    #[test]
    fn dedup_examples() {
        let mut recs = vec![record("u", "US", Some(1)); 3];
        recs[1].text = "b".into();
        recs[2].text = "c".into();
        assert_eq!(dedup_user_city(recs, 7).unwrap().len(), 1);
        let recs = vec![record("u", "US", Some(1)), record("u", "US", Some(2))];
        assert_eq!(dedup_user_city(recs, 7).unwrap().len(), 2);
        assert!(dedup_user_city(vec![record("u", "US", None)], 7).is_err());
    }

    #[test]
    fn dedup_count_matches_distinct_pairs() {
        // (user, city) multiplicities generated independently of the dedup code
        let mut recs = Vec::new();
        let mut pairs = BTreeSet::new();
        for i in 0..10_000u32 {
            let user = format!("u{}", (i * 7919) % 1_300);
            let city = (i * 104_729) % 11;
            let mut r = record(&user, "US", Some(city));
            r.posted_at = i64::from(i);
            pairs.insert((user, city));
            recs.push(r);
        }
        assert_eq!(dedup_user_city(recs, 3).unwrap().len(), pairs.len());
    }

    #[test]
    fn dedup_choice_independent_of_order() {
        let recs: Vec<Record> = (0..20)
            .map(|i| {
                let mut r = record("u", "US", Some(1));
                r.posted_at = i;
                r
            })
            .collect();
        let mut rev = recs.clone();
        rev.reverse();
        assert_eq!(dedup_user_city(recs, 11).unwrap(), dedup_user_city(rev, 11).unwrap());
    }

    #[test]
    fn split_arithmetic_and_disjointness() {
        let recs: Vec<Record> = (0..100)
            .flat_map(|u| (0..2).map(move |c| record(&format!("user{u}"), "US", Some(c))))
            .collect();
        let spec = SplitSpec {
            test_user_fraction: 0.10,
            dev_user_count: 20,
            seed: 5,
        };
        let s = split_by_user(recs.clone(), &spec).unwrap();
        let users = |v: &[Record]| v.iter().map(|r| r.user_id.clone()).collect::<BTreeSet<_>>();
        let (tr, dv, te) = (users(&s.train), users(&s.dev), users(&s.test));
        assert_eq!((tr.len(), dv.len(), te.len()), (70, 20, 10));
        assert!(tr.is_disjoint(&dv) && tr.is_disjoint(&te) && dv.is_disjoint(&te));
        assert_eq!(s.train.len() + s.dev.len() + s.test.len(), recs.len());
        assert_eq!(split_by_user(recs.clone(), &spec).unwrap(), s);

        let too_many = SplitSpec {
            dev_user_count: 90,
            ..spec
        };
        assert!(split_by_user(recs, &too_many).is_err());
    }

    #[test]
    fn stats_population_std() {
        let recs = vec![
            record("a", "US", Some(1)),
            record("b", "US", Some(1)),
            record("c", "US", Some(2)),
            record("d", "GB", Some(3)),
        ];
        let s = dataset_stats(&recs);
        assert_eq!((s.tweets, s.users, s.countries, s.cities), (4, 4, 2, 3));
        assert_eq!(s.tweets_per_country_mean, 2.0);
        assert_eq!(s.tweets_per_country_std, 1.0);
        assert_eq!(dataset_stats(&[]), StatsReport::default());
    }

    proptest! {
        #[test]
        fn dedup_idempotent(pairs in proptest::collection::vec((0u8..6, 0u32..4, 0i64..50), 0..60), seed in any::<u64>()) {
            let recs: Vec<Record> = pairs.iter().map(|&(u, c, t)| {
                let mut r = record(&format!("u{u}"), "US", Some(c));
                r.posted_at = t;
                r
            }).collect();
            let once = dedup_user_city(recs, seed).unwrap();
            let twice = dedup_user_city(once.clone(), seed).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn split_is_a_partition(users in proptest::collection::vec(0u8..40, 1..120), seed in any::<u64>()) {
            let recs: Vec<Record> = users.iter().enumerate().map(|(i, u)| {
                let mut r = record(&format!("u{u}"), "US", Some(0));
                r.posted_at = i as i64;
                r
            }).collect();
            let n_users = users.iter().collect::<BTreeSet<_>>().len();
            let spec = SplitSpec { test_user_fraction: 0.2, dev_user_count: 0, seed };
            prop_assume!(n_users - (n_users as f64 * 0.2).floor() as usize > 0);
            let s = split_by_user(recs.clone(), &spec).unwrap();
            let mut all: Vec<i64> = s.train.iter().chain(&s.dev).chain(&s.test).map(|r| r.posted_at).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..recs.len() as i64).collect::<Vec<_>>());
            let tr: BTreeSet<_> = s.train.iter().map(|r| &r.user_id).collect();
            let te: BTreeSet<_> = s.test.iter().map(|r| &r.user_id).collect();
            prop_assert!(tr.is_disjoint(&te));
        }
    }
}
