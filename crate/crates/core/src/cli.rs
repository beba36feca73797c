//! `tweetgeo` command line: `prepare`, `train`, `eval`, `predict`, `synth`.
//!
//! Every subcommand also accepts `--config FILE`, a `key = value` file whose
//! entries act as flags placed before the command line ones, so explicit
//! flags win.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::bayes::{fit_stacking, StackBundle, StackConfig, IGR_TOP_PERCENT_CITY, IGR_TOP_PERCENT_COUNTRY};
use crate::bundle::Bundle;
use crate::cnn::{load_pretrained_embeddings, CnnConfig, CnnModel, FeatureEncoder, N_FIELDS};
use crate::encode::CategoryMaps;
use crate::eval::{calibration_bins, per_class_pr, top_k, write_calibration_csv, write_per_class_csv, Metrics, Prediction, TOP_K};
use crate::geo::{aggregate_cities, haversine_unchecked, CityTable};
use crate::ingest::{
    dataset_stats, dedup_by, dedup_user_city, parse_unlabeled, read_jsonl, read_jsonl_with, split_by_user, write_jsonl,
    Record, SplitSpec, StatsReport,
};
use crate::labels::{LabelSpace, Task};
use crate::nncore::AdamConfig;
use crate::synth::{generate, SynthSpec};
use crate::textproc::{build_vocab, tokenize, Vocabulary};
use crate::train::{self, Example, ModelBundle, TrainConfig, KIND_CNN};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "tweetgeo", version, about = "Single-tweet country and city geolocation")]
pub struct Cli {
    /// key = value file with default flags for the subcommand
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter, locate, deduplicate and split raw tweets; build vocabulary,
    /// category maps and the label table.
    Prepare(PrepareArgs),
    /// Train a CNN or a stacked naive Bayes model on prepared splits.
    Train(TrainArgs),
    /// Score a model on labelled records and write metric reports.
    Eval(EvalArgs),
    /// Predict labels for unlabelled records.
    Predict(PredictArgs),
    /// Write a synthetic raw corpus and city table.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Country,
    City,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Country => Task::Country,
            TaskArg::City => Task::City,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Cnn,
    Stacking,
    #[value(name = "stacking+")]
    StackingPlus,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Raw JSONL tweets
    #[arg(long)]
    pub input: PathBuf,
    /// City table CSV (required for the city task)
    #[arg(long)]
    pub cities: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Minimum training-set frequency for a vocabulary token
    #[arg(long, default_value_t = 10)]
    pub min_count: usize,
    /// Fraction of users held out for test
    #[arg(long, default_value_t = 0.10)]
    pub test_fraction: f64,
    /// Number of users held out for dev
    #[arg(long, default_value_t = 50_000)]
    pub dev_users: usize,
    /// Cities closer than this to a more populous city are merged into it
    #[arg(long, default_value_t = crate::geo::DEFAULT_AGGREGATION_RADIUS_KM)]
    pub aggregate_radius_km: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `prepare`
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long, value_enum, default_value_t = ModelArg::Cnn)]
    pub model: ModelArg,
    /// Output model bundle
    #[arg(long)]
    pub out: PathBuf,
    /// Training log CSV [default: <out>.log.csv]
    #[arg(long)]
    pub log: Option<PathBuf>,

    /// Word embedding size
    #[arg(long, default_value_t = 300)]
    pub embed_dim: usize,
    /// Convolution window sizes
    #[arg(long, value_delimiter = ',', default_value = "3,4,5")]
    pub windows: Vec<usize>,
    /// Filters per window size
    #[arg(long, default_value_t = 128)]
    pub filters: usize,
    /// Dropout rate on the pooled features
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    /// Token limits for text, description, profile location, user name
    #[arg(long, value_delimiter = ',', default_value = "50,50,10,5")]
    pub max_lens: Vec<usize>,
    /// Give each text field its own filter banks
    #[arg(long)]
    pub per_field_filters: bool,
    /// Pretrained word vectors (`token v1 .. vk` per line)
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    #[arg(long, default_value_t = 1024)]
    pub batch_size: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 20)]
    pub max_epochs: usize,
    /// Dev evaluations without improvement before stopping
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,

    /// Naive Bayes additive smoothing
    #[arg(long, default_value_t = 1e-2)]
    pub alpha: f64,
    /// Stacking cross-validation folds
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Naive Bayes vocabulary cutoff [default: the prepared vocabulary's, 10 unless changed]
    #[arg(long)]
    pub min_count: Option<usize>,
    /// stacking+ only: keep this percent of tokens by information gain ratio
    /// [default: 40 for city, 55 for country]
    #[arg(long)]
    pub igr_top_percent: Option<f64>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model bundle
    #[arg(long)]
    pub model: PathBuf,
    /// Labelled JSONL (e.g. test.jsonl from `prepare`)
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    /// Directory for metrics.csv, per_class.csv and calibration.csv
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Unlabelled JSONL
    #[arg(long)]
    pub input: PathBuf,
    /// Output JSONL
    #[arg(long)]
    pub output: PathBuf,
    /// Drop rows whose top probability is below this
    #[arg(long)]
    pub min_prob: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub cities: usize,
    #[arg(long, default_value_t = 2)]
    pub countries: usize,
    #[arg(long, default_value_t = 1000)]
    pub users: usize,
    #[arg(long, default_value_t = 1)]
    pub min_tweets_per_user: usize,
    #[arg(long, default_value_t = 3)]
    pub max_tweets_per_user: usize,
    #[arg(long, default_value_t = 20)]
    pub signature_tokens: usize,
    #[arg(long, default_value_t = 300)]
    pub noise_vocab: usize,
    /// Zipf exponent of the city distribution
    #[arg(long, default_value_t = 1.0)]
    pub skew: f64,
    /// Zipf exponent of the noise-word distribution
    #[arg(long, default_value_t = 1.0)]
    pub noise_skew: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

/// Expand `--config FILE` into flags inserted right after the subcommand,
/// skipping keys that are also given on the command line.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = it.next();
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.into());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else { return Ok(rest) };

    let given = |flag: &str| {
        rest.iter().any(|a| {
            let a = a.to_string_lossy();
            a == flag || a.starts_with(&format!("{flag}="))
        })
    };
    let mut flags: Vec<OsString> = Vec::new();
    for (i, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected `key = value` in {}", path.to_string_lossy()),
        })?;
        let key = format!("--{}", key.trim().replace('_', "-"));
        let value = value.trim().trim_matches('"');
        if given(&key) {
            continue;
        }
        match value {
            "true" => flags.push(key.into()),
            "false" => {}
            v => {
                flags.push(key.into());
                flags.push(v.into());
            }
        }
    }
    // the subcommand is the first argument after the program name that is not a flag
    let at = rest
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|p| p + 2)
        .unwrap_or(rest.len());
    rest.splice(at..at, flags);
    Ok(rest)
}

/// Parse `args` (program name first), expanding `--config`.
pub fn parse<I, T>(args: I) -> Result<std::result::Result<Cli, clap::Error>>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args = expand_config(args.into_iter().map(Into::into).collect())?;
    Ok(Cli::try_parse_from(args))
}

/// Run a full command line; usage errors become [`Error::InvalidArgument`].
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let cli = parse(args)?.map_err(|e| Error::invalid(e.to_string()))?;
    execute(cli.command)
}

/// Entry point for the binary: prints errors and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let cli = match parse(args) {
        Ok(Ok(cli)) => cli,
        Ok(Err(e)) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Prepare(a) => {
            let m = cmd_prepare(&a)?;
            eprintln!(
                "prepare: {} lines, {} skipped, {} after dedup -> train {} / dev {} / test {}",
                m.input_lines, m.skipped, m.after_dedup, m.train, m.dev, m.test
            );
        }
        Command::Train(a) => {
            let s = cmd_train(&a)?;
            eprintln!("train: {} model, dev accuracy {:.4}", s.model, s.dev_accuracy);
        }
        Command::Eval(a) => {
            let m = cmd_eval(&a)?;
            eprintln!("eval: n={} acc={:.4} acc@top5={:.4}", m.n, m.acc, m.acc_top5);
        }
        Command::Predict(a) => {
            let s = cmd_predict(&a)?;
            eprintln!(
                "predict: {} rows in, {} written, {} below --min-prob, {} skipped",
                s.input_rows, s.written, s.filtered, s.skipped
            );
        }
        Command::Synth(a) => {
            let n = cmd_synth(&a)?;
            eprintln!("synth: {n} tweets");
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn with_path(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(with_path(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Counts written to `manifest.json` by `prepare`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrepareManifest {
    pub task: Task,
    pub seed: u64,
    pub min_count: usize,
    pub input_lines: usize,
    pub skipped: usize,
    pub after_dedup: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub vocab_size: usize,
    pub labels: usize,
}

fn write_stats_csv(path: &Path, rows: &[(&str, StatsReport)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(create(path)?);
    out.write_record([
        "split",
        "tweets",
        "users",
        "timezones",
        "languages",
        "countries",
        "tweets_per_country_mean",
        "tweets_per_country_std",
        "cities",
        "tweets_per_city_mean",
        "tweets_per_city_std",
    ])?;
    for (name, s) in rows {
        out.write_record([
            name.to_string(),
            s.tweets.to_string(),
            s.users.to_string(),
            s.timezones.to_string(),
            s.languages.to_string(),
            s.countries.to_string(),
            format!("{:.4}", s.tweets_per_country_mean),
            format!("{:.4}", s.tweets_per_country_std),
            s.cities.to_string(),
            format!("{:.4}", s.tweets_per_city_mean),
            format!("{:.4}", s.tweets_per_city_std),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Text tokens of all four fields of a record, for the shared vocabulary.
fn all_field_tokens(r: &Record) -> Vec<String> {
    crate::cnn::Field::ALL.iter().flat_map(|f| tokenize(f.of(r))).collect()
}

pub fn cmd_prepare(a: &PrepareArgs) -> Result<PrepareManifest> {
    let task: Task = a.task.into();
    let table = match (&a.cities, task) {
        (Some(p), _) => {
            let raw = CityTable::load(p)?;
            Some(aggregate_cities(raw.cities().to_vec(), a.aggregate_radius_km)?)
        }
        (None, Task::City) => return Err(Error::invalid("the city task needs --cities")),
        (None, Task::Country) => None,
    };
    let outcome = read_jsonl(open(&a.input)?)?;
    for (line, why) in outcome.skipped.iter().take(5) {
        eprintln!("skip line {line}: {why}");
    }
    let mut records = outcome.records;

    let records = match &table {
        Some(t) => {
            let points: Vec<(f64, f64)> = records.iter().map(Record::coords).collect();
            for (r, id) in records.iter_mut().zip(t.nearest_cities(&points)?) {
                r.city_id = Some(id);
            }
            dedup_user_city(records, a.seed)?
        }
        None => dedup_by(records, a.seed, |r| Ok((r.user_id.clone(), r.country_code.clone())))?,
    };
    let after_dedup = records.len();
    let labels = match (task, &table) {
        (Task::City, Some(t)) => LabelSpace::cities(t)?,
        _ => LabelSpace::countries(&records, table.as_ref())?,
    };

    let splits = split_by_user(
        records,
        &SplitSpec {
            test_user_fraction: a.test_fraction,
            dev_user_count: a.dev_users,
            seed: a.seed,
        },
    )?;
    let tokens: Vec<Vec<String>> = splits.train.par_iter().map(all_field_tokens).collect();
    let vocab = build_vocab(tokens.iter().map(Vec::as_slice), a.min_count);
    let maps = CategoryMaps::build(&splits.train);

    fs::create_dir_all(&a.out_dir)?;
    let dir = &a.out_dir;
    write_jsonl(create(&dir.join("train.jsonl"))?, &splits.train)?;
    write_jsonl(create(&dir.join("dev.jsonl"))?, &splits.dev)?;
    write_jsonl(create(&dir.join("test.jsonl"))?, &splits.test)?;
    vocab.write_to(create(&dir.join("vocab.txt"))?)?;
    labels.write_to(create(&dir.join("labels.txt"))?)?;
    write_json(&dir.join("maps.json"), &maps)?;
    if let Some(t) = &table {
        t.write_csv(create(&dir.join("cities.csv"))?)?;
    }
    let all: Vec<Record> = splits.train.iter().chain(&splits.dev).chain(&splits.test).cloned().collect();
    write_stats_csv(
        &dir.join("stats.csv"),
        &[
            ("all", dataset_stats(&all)),
            ("train", dataset_stats(&splits.train)),
            ("dev", dataset_stats(&splits.dev)),
            ("test", dataset_stats(&splits.test)),
        ],
    )?;
    let manifest = PrepareManifest {
        task,
        seed: a.seed,
        min_count: a.min_count,
        input_lines: outcome.lines,
        skipped: outcome.skipped.len(),
        after_dedup,
        train: splits.train.len(),
        dev: splits.dev.len(),
        test: splits.test.len(),
        vocab_size: vocab.len(),
        labels: labels.len(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Prepared inputs shared by `train`.
struct Prepared {
    vocab: Vocabulary,
    maps: CategoryMaps,
    labels: LabelSpace,
    train: Vec<Record>,
    dev: Vec<Record>,
}

fn load_prepared(dir: &Path, task: Task) -> Result<Prepared> {
    let labels = LabelSpace::read_from(open(&dir.join("labels.txt"))?)?;
    if labels.task() != task {
        return Err(Error::invalid(format!(
            "--task {task} but {} was prepared for the {} task",
            dir.display(),
            labels.task()
        )));
    }
    let read = |name: &str| -> Result<Vec<Record>> {
        let out = read_jsonl(open(&dir.join(name))?)?;
        if let Some((line, why)) = out.skipped.first() {
            return Err(Error::Parse {
                line: *line,
                msg: format!("{name}: {why}"),
            });
        }
        Ok(out.records)
    };
    Ok(Prepared {
        vocab: Vocabulary::read_from(open(&dir.join("vocab.txt"))?)?,
        maps: serde_json::from_reader(open(&dir.join("maps.json"))?)?,
        train: read("train.jsonl")?,
        dev: read("dev.jsonl")?,
        labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub model: String,
    pub dev_accuracy: f64,
}

fn cnn_config(a: &TrainArgs, n_labels: usize) -> Result<CnnConfig> {
    let max_lens: [usize; N_FIELDS] = a
        .max_lens
        .as_slice()
        .try_into()
        .map_err(|_| Error::invalid(format!("--max-lens needs {N_FIELDS} values, got {}", a.max_lens.len())))?;
    let config = CnnConfig {
        embed_dim: a.embed_dim,
        windows: a.windows.clone(),
        filters_per_window: a.filters,
        dropout: a.dropout,
        max_lens,
        n_labels,
        shared_filters: !a.per_field_filters,
    };
    config.validate()?;
    Ok(config)
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let config = TrainConfig {
        batch_size: a.batch_size,
        max_epochs: a.max_epochs,
        patience: a.patience,
        seed: a.seed,
        eval_every: a.eval_every,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
    };
    config.validate()?;
    Ok(config)
}

fn stack_config(a: &TrainArgs, task: Task, prepared_min_count: usize) -> Result<StackConfig> {
    let igr_top_percent = match (a.model, a.igr_top_percent) {
        (ModelArg::StackingPlus, Some(p)) => Some(p),
        (ModelArg::StackingPlus, None) => Some(match task {
            Task::City => IGR_TOP_PERCENT_CITY,
            Task::Country => IGR_TOP_PERCENT_COUNTRY,
        }),
        (_, Some(_)) => return Err(Error::invalid("--igr-top-percent only applies to --model stacking+")),
        (_, None) => None,
    };
    if let Some(p) = igr_top_percent {
        if !(p > 0.0 && p <= 100.0) {
            return Err(Error::invalid(format!("--igr-top-percent must be in (0, 100], got {p}")));
        }
    }
    if !(a.alpha >= 0.0) {
        return Err(Error::invalid(format!("--alpha must be >= 0, got {}", a.alpha)));
    }
    if a.folds < 2 {
        return Err(Error::invalid(format!("--folds must be >= 2, got {}", a.folds)));
    }
    Ok(StackConfig {
        alpha: a.alpha,
        folds: a.folds,
        min_count: a.min_count.unwrap_or(prepared_min_count),
        igr_top_percent,
        seed: a.seed,
    })
}

fn log_path(a: &TrainArgs) -> PathBuf {
    a.log.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".log.csv");
        s.into()
    })
}

pub fn cmd_train(a: &TrainArgs) -> Result<TrainSummary> {
    let task: Task = a.task.into();
    // reject bad settings before any data is read
    match a.model {
        ModelArg::Cnn => {
            if a.igr_top_percent.is_some() {
                return Err(Error::invalid("--igr-top-percent only applies to --model stacking+"));
            }
            cnn_config(a, 1)?;
            train_config(a)?;
        }
        _ => {
            stack_config(a, task, 1)?;
        }
    }
    let p = load_prepared(&a.data, task)?;
    let label_all = |rs: &[Record]| -> Result<Vec<usize>> { rs.iter().map(|r| p.labels.label_of(r)).collect() };
    let train_labels = label_all(&p.train)?;
    let dev_labels = label_all(&p.dev)?;

    match a.model {
        ModelArg::Cnn => {
            let config = cnn_config(a, p.labels.len())?;
            let tcfg = train_config(a)?;
            let encoder = FeatureEncoder::new(p.vocab.clone(), p.maps.clone(), &config);
            let examples = |rs: &[Record], ys: &[usize]| -> Result<Vec<Example>> {
                rs.par_iter()
                    .zip(ys)
                    .map(|(r, &label)| {
                        Ok(Example {
                            features: encoder.encode(r)?,
                            label,
                        })
                    })
                    .collect()
            };
            let train_x = examples(&p.train, &train_labels)?;
            let dev_x = examples(&p.dev, &dev_labels)?;
            let mut model = CnnModel::<f32>::new(config, p.vocab.len(), p.maps.onehot_dim(), a.seed)?;
            if let Some(v) = &a.vectors {
                let n = load_pretrained_embeddings(&mut model, &p.vocab, open(v)?)?;
                eprintln!("loaded {n} pretrained vectors");
            }
            let (model, log) = train::train(model, &train_x, &dev_x, &tcfg)?;
            train::save_model(
                &ModelBundle {
                    task,
                    encoder,
                    labels: p.labels,
                    model,
                },
                &a.out,
            )?;
            log.write_csv(create(&log_path(a))?)?;
            Ok(TrainSummary {
                model: KIND_CNN.into(),
                dev_accuracy: log.best_dev_accuracy,
            })
        }
        ModelArg::Stacking | ModelArg::StackingPlus => {
            let config = stack_config(a, task, p.vocab.min_count())?;
            let (model, report) = fit_stacking(&p.train, &train_labels, p.labels.len(), &config)?;
            let dev_hits = p
                .dev
                .par_iter()
                .zip(&dev_labels)
                .filter(|(r, &y)| model.predict(r).0 == y)
                .count();
            let dev_accuracy = if p.dev.is_empty() { 0.0 } else { dev_hits as f64 / p.dev.len() as f64 };

            let mut out = csv::Writer::from_writer(create(&log_path(a))?);
            out.write_record(["stage", "metric", "value"])?;
            for (name, acc) in ["text", "description", "profile_location", "user_name", "categorical"]
                .iter()
                .zip(&report.base_cv_accuracy)
            {
                out.write_record([&format!("base_{name}"), "cv_accuracy", &format!("{acc:.6}")])?;
            }
            for (name, size) in ["text", "description", "profile_location", "user_name", "categorical"]
                .iter()
                .zip(&report.vocab_sizes)
            {
                out.write_record([&format!("base_{name}"), "vocab_size", &size.to_string()])?;
            }
            out.write_record(["meta", "train_accuracy", &format!("{:.6}", report.meta_train_accuracy)])?;
            out.write_record(["stack", "dev_accuracy", &format!("{dev_accuracy:.6}")])?;
            out.flush()?;

            StackBundle {
                task,
                labels: p.labels,
                model,
            }
            .save(&a.out)?;
            Ok(TrainSummary {
                model: if config.igr_top_percent.is_some() { "stacking+" } else { "stacking" }.into(),
                dev_accuracy,
            })
        }
    }
}

/// Either kind of trained model, as loaded from a bundle file.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedModel {
    Cnn(ModelBundle),
    Stacking(StackBundle),
}

#[derive(serde::Deserialize)]
struct KindOnly {
    kind: String,
}

impl LoadedModel {
    pub fn load(path: &Path) -> Result<Self> {
        let bundle = Bundle::parse(&fs::read(path).map_err(with_path(path))?)?;
        let kind: KindOnly = serde_json::from_slice(bundle.require(b"CONF")?)?;
        match kind.kind.as_str() {
            KIND_CNN => Ok(LoadedModel::Cnn(ModelBundle::from_bundle(&bundle)?)),
            crate::bayes::KIND_STACKING => Ok(LoadedModel::Stacking(StackBundle::from_bundle(&bundle)?)),
            other => Err(Error::Format(format!("unknown model kind `{other}`"))),
        }
    }

    pub fn task(&self) -> Task {
        match self {
            LoadedModel::Cnn(b) => b.task,
            LoadedModel::Stacking(b) => b.task,
        }
    }

    pub fn labels(&self) -> &LabelSpace {
        match self {
            LoadedModel::Cnn(b) => &b.labels,
            LoadedModel::Stacking(b) => &b.labels,
        }
    }

    /// Class probabilities for one record.
    pub fn probs(&self, r: &Record) -> Result<Vec<f64>> {
        match self {
            LoadedModel::Cnn(b) => Ok(b
                .model
                .predict(&b.encoder.encode(r)?)?
                .into_iter()
                .map(f64::from)
                .collect()),
            LoadedModel::Stacking(b) => Ok(b.model.predict(r).1),
        }
    }
}

/// Label of a labelled record; city records without a `city_id` get the
/// nearest label city.
fn true_label(labels: &LabelSpace, r: &Record) -> Result<usize> {
    if labels.task() == Task::City && r.city_id.is_none() {
        let nearest = (0..labels.len())
            .map(|i| (haversine_unchecked(r.coords(), labels.coords(i).expect("city labels carry coordinates")), i))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, i)| i)
            .expect("label space is never empty");
        return Ok(nearest);
    }
    labels.label_of(r)
}

/// Predictions of `model` on labelled records, in input order.
pub fn predict_records(model: &LoadedModel, records: &[Record]) -> Result<Vec<Prediction>> {
    records
        .par_iter()
        .map(|r| {
            let probs = model.probs(r)?;
            Ok(Prediction::from_probs(&probs, true_label(model.labels(), r)?, r.coords()))
        })
        .collect()
}

pub fn cmd_eval(a: &EvalArgs) -> Result<Metrics> {
    let model = LoadedModel::load(&a.model)?;
    let task: Task = a.task.into();
    if model.task() != task {
        return Err(Error::invalid(format!(
            "--task {task} but {} holds a {} model",
            a.model.display(),
            model.task()
        )));
    }
    let outcome = read_jsonl(open(&a.data)?)?;
    if !outcome.skipped.is_empty() {
        eprintln!("eval: skipped {} malformed lines", outcome.skipped.len());
    }
    let preds = predict_records(&model, &outcome.records)?;
    let metrics = Metrics::compute(&preds, model.labels())?;

    fs::create_dir_all(&a.out_dir)?;
    metrics.write_csv(create(&a.out_dir.join("metrics.csv"))?)?;
    write_per_class_csv(
        create(&a.out_dir.join("per_class.csv"))?,
        &per_class_pr(&preds, model.labels().len()),
        model.labels(),
    )?;
    write_calibration_csv(create(&a.out_dir.join("calibration.csv"))?, &calibration_bins(&preds))?;
    Ok(metrics)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PredictSummary {
    /// Non-blank input lines.
    pub input_rows: usize,
    pub written: usize,
    /// Rows dropped by `--min-prob`.
    pub filtered: usize,
    /// Malformed rows.
    pub skipped: usize,
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    line: usize,
    user_id: &'a str,
    label: &'a str,
    top5: Vec<&'a str>,
    top5_prob: Vec<f64>,
    top_prob: f64,
}

pub fn cmd_predict(a: &PredictArgs) -> Result<PredictSummary> {
    if let Some(p) = a.min_prob {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("--min-prob must be in [0,1], got {p}")));
        }
    }
    let model = LoadedModel::load(&a.model)?;
    let labels = model.labels();

    // keep line numbers: parse line by line
    let mut rows: Vec<(usize, Record)> = Vec::new();
    let mut summary = PredictSummary::default();
    for (i, line) in open(&a.input)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        summary.input_rows += 1;
        match parse_unlabeled(&line) {
            Ok(r) => rows.push((i + 1, r)),
            Err(_) => summary.skipped += 1,
        }
    }
    let probs: Vec<Vec<f64>> = rows.par_iter().map(|(_, r)| model.probs(r)).collect::<Result<_>>()?;

    let mut w = create(&a.output)?;
    for ((line, r), p) in rows.iter().zip(&probs) {
        let ranked = top_k(p, TOP_K);
        let top_prob = p[ranked[0]];
        if a.min_prob.is_some_and(|m| top_prob < m) {
            summary.filtered += 1;
            continue;
        }
        let row = PredictionRow {
            line: *line,
            user_id: &r.user_id,
            label: labels.name(ranked[0]),
            top5: ranked.iter().map(|&l| labels.name(l)).collect(),
            top5_prob: ranked.iter().map(|&l| p[l]).collect(),
            top_prob,
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
        summary.written += 1;
    }
    w.flush()?;
    Ok(summary)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<usize> {
    let spec = SynthSpec {
        n_cities: a.cities,
        n_countries: a.countries,
        signature_tokens_per_city: a.signature_tokens,
        noise_vocab_size: a.noise_vocab,
        n_users: a.users,
        tweets_per_user: (a.min_tweets_per_user, a.max_tweets_per_user),
        class_skew: a.skew,
        noise_skew: a.noise_skew,
        seed: a.seed,
        ..SynthSpec::default()
    };
    let corpus = generate(&spec)?;
    fs::create_dir_all(&a.out_dir)?;
    corpus.write_jsonl(create(&a.out_dir.join("raw.jsonl"))?)?;
    corpus.write_cities_csv(create(&a.out_dir.join("cities.csv"))?)?;
    write_json(&a.out_dir.join("synth_meta.json"), &corpus.meta)?;
    Ok(corpus.meta.n_tweets)
}

/// Read unlabelled records the way `predict` does.
pub fn read_unlabeled(path: &Path) -> Result<Vec<Record>> {
    Ok(read_jsonl_with(open(path)?, parse_unlabeled)?.records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn help_lists_defaults() {
        let mut cmd = <Cli as clap::CommandFactory>::command();
        let help = cmd.find_subcommand_mut("train").unwrap().render_long_help().to_string();
        for needle in ["1024", "0.5", "0.001", "0.01", "3,4,5", "128", "10 unless changed"] {
            assert!(help.contains(needle), "train --help lacks {needle}");
        }
        let help = cmd.find_subcommand_mut("prepare").unwrap().render_long_help().to_string();
        assert!(help.contains("[default: 10]"));
    }

    #[test]
    fn config_file_flags_are_overridden() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.conf");
        fs::write(&cfg, "# comment\ndropout = 0.3\nbatch_size = 64\nper_field_filters = true\n").unwrap();
        let args = os(&[
            "tweetgeo",
            "--config",
            cfg.to_str().unwrap(),
            "train",
            "--data",
            "d",
            "--task",
            "city",
            "--out",
            "m",
            "--dropout",
            "0.2",
        ]);
        let cli = parse(args).unwrap().unwrap();
        let Command::Train(t) = cli.command else { panic!() };
        assert_eq!(t.dropout, 0.2);
        assert_eq!(t.batch_size, 64);
        assert!(t.per_field_filters);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(main_with_args(os(&["tweetgeo", "train", "--bogus"])), 1);
        assert_eq!(main_with_args(os(&["tweetgeo", "--help"])), 0);
        let err = run(os(&["tweetgeo", "train", "--data", "d", "--task", "city", "--out", "m", "--dropout", "1.5"]))
            .unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let err = run(os(&[
            "tweetgeo", "train", "--data", "d", "--task", "city", "--out", "m", "--igr-top-percent", "40",
        ]))
        .unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
