//! Naive Bayes baselines.
//!
//! Five multinomial NB base classifiers (one per text field plus one over
//! the categorical features written as tokens) are combined by a second
//! multinomial NB trained on their out-of-fold predictions. Optionally
//! each text field's vocabulary is cut to the top n% tokens by
//! information gain ratio.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{Bundle, BundleWriter};
use crate::cnn::Field;
use crate::encode::time_slot;
use crate::eval::argmax;
use crate::ingest::Record;
use crate::labels::{LabelSpace, Task};
use crate::seed;
use crate::textproc::{build_vocab, tokenize, Vocabulary, PAD_INDEX};
use crate::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 1e-2;
pub const DEFAULT_FOLDS: usize = 5;
/// Top-n% defaults for STACKING+.
pub const IGR_TOP_PERCENT_CITY: f64 = 40.0;
pub const IGR_TOP_PERCENT_COUNTRY: f64 = 55.0;

/// Sparse bag of features: `(feature index, count)`.
pub type Counts = Vec<(usize, f64)>;

/// Multinomial naive Bayes with additive smoothing. Only the sufficient
/// statistics are serialised; log probabilities are rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "MnbStats", into = "MnbStats")]
pub struct MnbModel {
    pub class_log_prior: Vec<f64>,
    /// `L × F`, row-major.
    pub feature_log_prob: Vec<f64>,
    pub n_features: usize,
    pub alpha: f64,
    stats: MnbStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MnbStats {
    alpha: f64,
    n_features: usize,
    class_count: Vec<f64>,
    feature_count: Vec<f64>,
}

impl From<MnbStats> for MnbModel {
    fn from(stats: MnbStats) -> Self {
        let l = stats.class_count.len();
        let f = stats.n_features;
        let total: f64 = stats.class_count.iter().sum();
        let class_log_prior = stats.class_count.iter().map(|c| (c / total).ln()).collect();
        let mut feature_log_prob = vec![0.0; l * f];
        for c in 0..l {
            let row = &stats.feature_count[c * f..(c + 1) * f];
            let denom: f64 = row.iter().sum::<f64>() + stats.alpha * f as f64;
            for (dst, &n) in feature_log_prob[c * f..(c + 1) * f].iter_mut().zip(row) {
                *dst = if denom > 0.0 {
                    ((n + stats.alpha) / denom).ln()
                } else {
                    // unseen class without smoothing: uniform
                    -(f as f64).ln()
                };
            }
        }
        MnbModel {
            class_log_prior,
            feature_log_prob,
            n_features: f,
            alpha: stats.alpha,
            stats,
        }
    }
}

impl From<MnbModel> for MnbStats {
    fn from(m: MnbModel) -> Self {
        m.stats
    }
}

/// P(f|c) = (count(f,c) + α) / (Σ_f count(f,c) + αF); prior = class frequency.
pub fn fit_mnb(docs: &[Counts], labels: &[usize], n_labels: usize, n_features: usize, alpha: f64) -> Result<MnbModel> {
    if n_features == 0 {
        return Err(Error::invalid("multinomial NB needs at least one feature"));
    }
    if docs.is_empty() || docs.len() != labels.len() {
        return Err(Error::data(format!("{} documents vs {} labels", docs.len(), labels.len())));
    }
    if !(alpha >= 0.0) {
        return Err(Error::invalid(format!("alpha must be >= 0, got {alpha}")));
    }
    let mut class_count = vec![0.0; n_labels];
    let mut feature_count = vec![0.0; n_labels * n_features];
    for (doc, &y) in docs.iter().zip(labels) {
        if y >= n_labels {
            return Err(Error::data(format!("label {y} out of range for {n_labels} classes")));
        }
        class_count[y] += 1.0;
        for &(f, n) in doc {
            if f >= n_features {
                return Err(Error::data(format!("feature {f} out of range for {n_features} features")));
            }
            feature_count[y * n_features + f] += n;
        }
    }
    Ok(MnbStats {
        alpha,
        n_features,
        class_count,
        feature_count,
    }
    .into())
}

impl MnbModel {
    pub fn n_labels(&self) -> usize {
        self.class_log_prior.len()
    }

    pub fn log_prob(&self, class: usize, feature: usize) -> f64 {
        self.feature_log_prob[class * self.n_features + feature]
    }

    /// Normalised posterior over classes.
    pub fn posterior(&self, doc: &[(usize, f64)]) -> Vec<f64> {
        let joint: Vec<f64> = (0..self.n_labels())
            .map(|c| {
                doc.iter()
                    .filter(|&&(f, n)| n != 0.0 && f < self.n_features)
                    .fold(self.class_log_prior[c], |acc, &(f, n)| acc + n * self.log_prob(c, f))
            })
            .collect();
        let max = joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            // no class can explain the evidence; fall back to the prior
            return self.class_log_prior.iter().map(|lp| lp.exp()).collect();
        }
        let exps: Vec<f64> = joint.iter().map(|j| (j - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    /// Most probable class (ties → smallest index) and the posterior.
    pub fn predict(&self, doc: &[(usize, f64)]) -> (usize, Vec<f64>) {
        let post = self.posterior(doc);
        (argmax(&post), post)
    }
}

pub fn predict_mnb(model: &MnbModel, doc: &[(usize, f64)]) -> (usize, Vec<f64>) {
    model.predict(doc)
}

fn entropy_bits(counts: impl IntoIterator<Item = f64>) -> f64 {
    let counts: Vec<f64> = counts.into_iter().collect();
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / total;
            -p * p.log2()
        })
        .sum()
}

/// Information gain ratio of a binary token-presence split.
/// `present[c]` / `absent[c]`: documents of class `c` with / without the token.
pub fn igr_score(present: &[f64], absent: &[f64]) -> f64 {
    let n_present: f64 = present.iter().sum();
    let n_absent: f64 = absent.iter().sum();
    let n = n_present + n_absent;
    if n <= 0.0 {
        return 0.0;
    }
    let split_info = entropy_bits([n_present, n_absent]);
    if split_info <= 0.0 {
        return 0.0;
    }
    let h_class = entropy_bits(present.iter().zip(absent).map(|(p, a)| p + a));
    let h_cond = (n_present / n) * entropy_bits(present.iter().copied())
        + (n_absent / n) * entropy_bits(absent.iter().copied());
    ((h_class - h_cond) / split_info).max(0.0)
}

/// IGR of every content token of `vocab` over documents given as token lists.
pub fn igr_scores(vocab: &Vocabulary, docs: &[Vec<String>], labels: &[usize], n_labels: usize) -> Vec<f64> {
    let n_content = vocab.len() - 2;
    let mut present = vec![0.0; n_content * n_labels];
    let mut class_total = vec![0.0; n_labels];
    for (doc, &y) in docs.iter().zip(labels) {
        class_total[y] += 1.0;
        let mut seen: Vec<u32> = doc.iter().filter_map(|t| vocab.index(t)).collect();
        seen.sort_unstable();
        seen.dedup();
        for i in seen {
            present[(i as usize - 2) * n_labels + y] += 1.0;
        }
    }
    (0..n_content)
        .into_par_iter()
        .map(|t| {
            let p = &present[t * n_labels..(t + 1) * n_labels];
            let a: Vec<f64> = p.iter().zip(&class_total).map(|(p, n)| n - p).collect();
            igr_score(p, &a)
        })
        .collect()
}

/// Keep the ⌈n/100 · |V|⌉ content tokens with the highest score (ties by
/// token text). `<pad>` and `<unk>` always survive.
pub fn select_top_percent(vocab: &Vocabulary, scores: &[f64], n_percent: f64) -> Result<Vocabulary> {
    if !(n_percent > 0.0 && n_percent <= 100.0) {
        return Err(Error::invalid(format!("top percent must be in (0, 100], got {n_percent}")));
    }
    let tokens = vocab.content_tokens();
    if scores.len() != tokens.len() {
        return Err(Error::invalid(format!("{} scores for {} tokens", scores.len(), tokens.len())));
    }
    // subtract a hair so 40% of 10 stays 4 despite rounding
    let keep = ((n_percent * tokens.len() as f64 / 100.0) - 1e-9).ceil().max(0.0) as usize;
    let mut ranked: Vec<(&String, f64)> = tokens.iter().zip(scores.iter().copied()).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(keep);
    // keep original index order among survivors
    let survivors: std::collections::HashSet<&String> = ranked.into_iter().map(|(t, _)| t).collect();
    Ok(Vocabulary::from_tokens(
        tokens.iter().filter(|t| survivors.contains(t)).cloned(),
        vocab.min_count(),
    ))
}

pub const N_BASES: usize = 5;

/// Categorical features as synthetic tokens for the fifth base classifier.
pub fn categorical_tokens(r: &Record) -> Vec<String> {
    vec![
        format!("tl={}", r.tweet_lang),
        format!("ul={}", r.user_lang),
        format!("tz={}", r.timezone),
        format!("pt={}", time_slot(r.posted_at)),
    ]
}

/// Token lists for the five base feature spaces.
pub fn base_tokens(r: &Record) -> [Vec<String>; N_BASES] {
    [
        tokenize(Field::Text.of(r)),
        tokenize(Field::Description.of(r)),
        tokenize(Field::ProfileLocation.of(r)),
        tokenize(Field::UserName.of(r)),
        categorical_tokens(r),
    ]
}

pub fn to_counts(tokens: &[String], vocab: &Vocabulary) -> Counts {
    let mut m: BTreeMap<usize, f64> = BTreeMap::new();
    for t in tokens {
        let i = vocab.index_or_unk(t);
        if i != PAD_INDEX {
            *m.entry(i as usize).or_default() += 1.0;
        }
    }
    m.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    pub alpha: f64,
    pub folds: usize,
    /// Frequency cutoff for the text-field vocabularies.
    pub min_count: usize,
    /// STACKING+ when set.
    pub igr_top_percent: Option<f64>,
    pub seed: u64,
}

impl Default for StackConfig {
    fn default() -> Self {
        StackConfig {
            alpha: DEFAULT_ALPHA,
            folds: DEFAULT_FOLDS,
            min_count: crate::textproc::DEFAULT_MIN_COUNT,
            igr_top_percent: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackModel {
    pub config: StackConfig,
    pub n_labels: usize,
    pub vocabs: Vec<Vocabulary>,
    pub bases: Vec<MnbModel>,
    pub meta: MnbModel,
}

/// Out-of-fold accuracy of each base classifier and of the stack.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StackReport {
    pub base_cv_accuracy: Vec<f64>,
    pub meta_train_accuracy: f64,
    pub vocab_sizes: Vec<usize>,
}

/// Meta-features: the five base argmax labels, one-hot, as a 5·L count vector.
pub fn meta_features(base_labels: &[usize], n_labels: usize) -> Counts {
    base_labels.iter().enumerate().map(|(b, &l)| (b * n_labels + l, 1.0)).collect()
}

fn fit_bases(
    docs: &[[Counts; N_BASES]],
    labels: &[usize],
    rows: &[usize],
    vocabs: &[Vocabulary],
    n_labels: usize,
    alpha: f64,
) -> Result<Vec<MnbModel>> {
    let ys: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
    (0..N_BASES)
        .into_par_iter()
        .map(|b| {
            let xs: Vec<Counts> = rows.iter().map(|&i| docs[i][b].clone()).collect();
            fit_mnb(&xs, &ys, n_labels, vocabs[b].len(), alpha)
        })
        .collect()
}

/// Fit the two-layer stack with k-fold out-of-fold meta-features, then refit
/// the base classifiers on all records.
pub fn fit_stacking(records: &[Record], labels: &[usize], n_labels: usize, config: &StackConfig) -> Result<(StackModel, StackReport)> {
    if config.folds < 2 {
        return Err(Error::invalid(format!("stacking needs at least 2 folds, got {}", config.folds)));
    }
    if config.folds > records.len() {
        return Err(Error::invalid(format!("{} folds for {} records", config.folds, records.len())));
    }
    if records.len() != labels.len() {
        return Err(Error::data("records and labels differ in length"));
    }

    let tokens: Vec<[Vec<String>; N_BASES]> = records.par_iter().map(base_tokens).collect();
    let mut vocabs = Vec::with_capacity(N_BASES);
    for b in 0..N_BASES {
        let streams = tokens.iter().map(|t| t[b].as_slice());
        let mut v = if b < 4 { build_vocab(streams, config.min_count) } else { build_vocab(streams, 1) };
        if let (Some(pct), true) = (config.igr_top_percent, b < 4) {
            let field_docs: Vec<Vec<String>> = tokens.iter().map(|t| t[b].clone()).collect();
            let scores = igr_scores(&v, &field_docs, labels, n_labels);
            v = select_top_percent(&v, &scores, pct)?;
        }
        vocabs.push(v);
    }
    let docs: Vec<[Counts; N_BASES]> = tokens
        .par_iter()
        .map(|t| std::array::from_fn(|b| to_counts(&t[b], &vocabs[b])))
        .collect();

    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut seed::rng(config.seed));
    let mut fold_of = vec![0; records.len()];
    for (rank, &i) in order.iter().enumerate() {
        fold_of[i] = rank % config.folds;
    }

    let mut oof = vec![[0usize; N_BASES]; records.len()];
    for fold in 0..config.folds {
        let (held, fit_rows): (Vec<usize>, Vec<usize>) = (0..records.len()).partition(|&i| fold_of[i] == fold);
        let bases = fit_bases(&docs, labels, &fit_rows, &vocabs, n_labels, config.alpha)?;
        for &i in &held {
            for (b, m) in bases.iter().enumerate() {
                oof[i][b] = m.predict(&docs[i][b]).0;
            }
        }
    }

    let meta_x: Vec<Counts> = oof.iter().map(|o| meta_features(o, n_labels)).collect();
    let meta = fit_mnb(&meta_x, labels, n_labels, N_BASES * n_labels, config.alpha)?;
    let all: Vec<usize> = (0..records.len()).collect();
    let bases = fit_bases(&docs, labels, &all, &vocabs, n_labels, config.alpha)?;

    let n = records.len() as f64;
    let report = StackReport {
        base_cv_accuracy: (0..N_BASES)
            .map(|b| oof.iter().zip(labels).filter(|(o, &y)| o[b] == y).count() as f64 / n)
            .collect(),
        meta_train_accuracy: meta_x.iter().zip(labels).filter(|(x, &y)| meta.predict(x).0 == y).count() as f64 / n,
        vocab_sizes: vocabs.iter().map(Vocabulary::len).collect(),
    };
    Ok((
        StackModel {
            config: config.clone(),
            n_labels,
            vocabs,
            bases,
            meta,
        },
        report,
    ))
}

impl StackModel {
    pub fn base_labels(&self, r: &Record) -> [usize; N_BASES] {
        let tokens = base_tokens(r);
        std::array::from_fn(|b| self.bases[b].predict(&to_counts(&tokens[b], &self.vocabs[b])).0)
    }

    pub fn predict(&self, r: &Record) -> (usize, Vec<f64>) {
        self.meta.predict(&meta_features(&self.base_labels(r), self.n_labels))
    }
}

pub fn predict_stacking(model: &StackModel, r: &Record) -> (usize, Vec<f64>) {
    model.predict(r)
}

pub const KIND_STACKING: &str = "stacking";

#[derive(Serialize, Deserialize)]
struct StackHeader {
    kind: String,
    task: Task,
    n_labels: usize,
}

/// Trained stack with its label table.
#[derive(Debug, Clone, PartialEq)]
pub struct StackBundle {
    pub task: Task,
    pub labels: LabelSpace,
    pub model: StackModel,
}

impl StackBundle {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = StackHeader {
            kind: KIND_STACKING.into(),
            task: self.task,
            n_labels: self.model.n_labels,
        };
        let mut labels = Vec::new();
        self.labels.write_to(&mut labels)?;
        let mut w = BundleWriter::new();
        w.section(b"CONF", serde_json::to_vec(&header)?)
            .section(b"LABL", labels)
            .section(b"STCK", serde_json::to_vec(&self.model)?);
        Ok(w.to_bytes())
    }

    pub fn from_bundle(bundle: &Bundle) -> Result<Self> {
        let header: StackHeader = serde_json::from_slice(bundle.require(b"CONF")?)?;
        if header.kind != KIND_STACKING {
            return Err(Error::Format(format!("bundle holds a `{}` model, not `{KIND_STACKING}`", header.kind)));
        }
        let labels = LabelSpace::read_from(bundle.require(b"LABL")?)?;
        let model: StackModel = serde_json::from_slice(bundle.require(b"STCK")?)?;
        if labels.len() != header.n_labels || model.n_labels != header.n_labels || labels.task() != header.task {
            return Err(Error::Format("label table disagrees with the stack header".into()));
        }
        if model.bases.len() != N_BASES || model.vocabs.len() != N_BASES {
            return Err(Error::Format(format!("stack needs {N_BASES} base models")));
        }
        Ok(StackBundle {
            task: header.task,
            labels,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        StackBundle::from_bundle(&Bundle::parse(&std::fs::read(path)?)?)
    }
}
