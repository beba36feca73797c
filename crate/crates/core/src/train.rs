//! Mini-batch Adam training with dev-set early stopping, and the CNN model
//! bundle format.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{decode_tensors, encode_tensors, Bundle, BundleWriter};
use crate::cnn::{CnnGrads, CnnModel, FeatureEncoder, Features};
use crate::encode::CategoryMaps;
use crate::eval::argmax;
use crate::labels::{LabelSpace, Task};
use crate::nncore::{adam_step, AdamConfig, AdamState, Mode};
use crate::seed;
use crate::textproc::Vocabulary;
use crate::{Error, Result};

/// Examples per parallel work unit. Gradients are summed inside a chunk and
/// then across chunks in order, so results do not depend on thread count.
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Dev evaluations without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Evaluate on dev every this many epochs.
    pub eval_every: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 1024,
            max_epochs: 20,
            patience: 3,
            seed: 0,
            eval_every: 1,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 || self.eval_every == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("batch_size, patience, eval_every and max_epochs must be >= 1"));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {}", self.adam.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Features,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` on epochs without a dev evaluation.
    pub dev_accuracy: Option<f64>,
    pub best: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "train_loss", "dev_accuracy", "best"])?;
        for e in &self.epochs {
            out.write_record([
                e.epoch.to_string(),
                format!("{:.6}", e.train_loss),
                e.dev_accuracy.map(|a| format!("{a:.6}")).unwrap_or_default(),
                e.best.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Patience-based stopping on a score that should increase.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Record the score for `epoch`. Only a strict improvement resets patience.
    pub fn observe(&mut self, epoch: usize, score: f64) -> Verdict {
        let improved = self.best.map_or(true, |(_, b)| score > b);
        if improved {
            self.best = Some((epoch, score));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        Verdict {
            improved,
            stop: self.since_best >= self.patience,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Fraction of examples whose argmax prediction equals the label.
pub fn accuracy(model: &CnnModel<f32>, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let correct = examples
        .par_iter()
        .map(|ex| Ok(usize::from(argmax(&model.predict(&ex.features)?) == ex.label)))
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / examples.len() as f64)
}

/// Mean loss and averaged gradients over one batch.
pub fn batch_gradients(
    model: &CnnModel<f32>,
    batch: &[&Example],
    dropout_seeds: &[u64],
) -> Result<(f64, CnnGrads<f32>)> {
    let scale = 1.0 / batch.len() as f32;
    let partials = batch
        .par_chunks(CHUNK)
        .zip(dropout_seeds.par_chunks(CHUNK))
        .map(|(examples, seeds)| {
            let mut grads = CnnGrads::zeros_like(model);
            let mut loss = 0.0f64;
            for (ex, &s) in examples.iter().zip(seeds) {
                let fwd = model.forward(&ex.features, Mode::Train, s)?;
                loss += f64::from(CnnModel::loss(&fwd, ex.label)?);
                model.backward(&ex.features, &fwd, ex.label, scale, &mut grads)?;
            }
            Ok((loss, grads))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = CnnGrads::zeros_like(model);
    let mut loss = 0.0;
    for (l, g) in &partials {
        loss += l;
        total.accumulate(g)?;
    }
    Ok((loss / batch.len() as f64, total))
}

/// Optimiser state for every parameter tensor.
pub struct Optimizer {
    states: Vec<AdamState<f32>>,
}

impl Optimizer {
    pub fn new(model: &CnnModel<f32>, config: AdamConfig) -> Self {
        Optimizer {
            states: model
                .parameters()
                .iter()
                .map(|p| AdamState::new(p.shape(), config))
                .collect(),
        }
    }

    pub fn step(&mut self, model: &mut CnnModel<f32>, grads: &CnnGrads<f32>) -> Result<()> {
        let dense = grads.dense(model);
        for ((param, grad), state) in model.parameters_mut().into_iter().zip(&dense).zip(&mut self.states) {
            adam_step(param, grad, state)?;
        }
        Ok(())
    }
}

/// Train `model` on `train`, selecting the parameters with the best dev
/// accuracy. Stops after `patience` evaluations without improvement or at
/// `max_epochs`.
pub fn train(
    mut model: CnnModel<f32>,
    train: &[Example],
    dev: &[Example],
    config: &TrainConfig,
) -> Result<(CnnModel<f32>, TrainLog)> {
    config.validate()?;
    model.validate()?;
    if train.is_empty() {
        return Err(Error::data("training split is empty"));
    }
    if dev.is_empty() {
        return Err(Error::data("dev split is empty; early stopping needs it"));
    }
    let mut optimizer = Optimizer::new(&model, config.adam);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_model = model.clone();
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut seed::rng(seed::derive(config.seed, &[epoch as u64])));
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Example> = idx.iter().map(|&i| &train[i]).collect();
            let seeds: Vec<u64> = (0..batch.len())
                .map(|j| seed::derive(config.seed, &[epoch as u64, (b * config.batch_size + j) as u64]))
                .collect();
            let (loss, grads) = batch_gradients(&model, &batch, &seeds)?;
            loss_sum += loss * batch.len() as f64;
            optimizer.step(&mut model, &grads)?;
        }
        let train_loss = loss_sum / train.len() as f64;

        let mut entry = EpochLog {
            epoch,
            train_loss,
            dev_accuracy: None,
            best: false,
        };
        let mut stop = false;
        if epoch % config.eval_every == 0 || epoch == config.max_epochs {
            let acc = accuracy(&model, dev)?;
            let verdict = stopper.observe(epoch, acc);
            entry.dev_accuracy = Some(acc);
            if verdict.improved {
                entry.best = true;
                best_model = model.clone();
            }
            stop = verdict.stop;
        }
        log.epochs.push(entry);
        if stop {
            log.stopped_early = epoch < config.max_epochs;
            break;
        }
    }
    let (best_epoch, best_acc) = stopper.best().expect("at least one evaluation ran");
    log.best_epoch = best_epoch;
    log.best_dev_accuracy = best_acc;
    Ok((best_model, log))
}

/// Everything needed to run a trained CNN on raw records.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub task: Task,
    pub encoder: FeatureEncoder,
    pub labels: LabelSpace,
    pub model: CnnModel<f32>,
}

#[derive(Serialize, Deserialize)]
struct BundleHeader {
    kind: String,
    task: Task,
    config: crate::cnn::CnnConfig,
    onehot_dim: usize,
    vocab_size: usize,
}

pub const KIND_CNN: &str = "cnn";

impl ModelBundle {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = BundleHeader {
            kind: KIND_CNN.into(),
            task: self.task,
            config: self.model.config.clone(),
            onehot_dim: self.model.onehot_dim,
            vocab_size: self.model.vocab_size(),
        };
        let mut vocab = Vec::new();
        self.encoder.vocab.write_to(&mut vocab)?;
        let mut labels = Vec::new();
        self.labels.write_to(&mut labels)?;
        let mut w = BundleWriter::new();
        w.section(b"CONF", serde_json::to_vec(&header)?)
            .section(b"VOCB", vocab)
            .section(b"CATM", serde_json::to_vec(&self.encoder.maps)?)
            .section(b"LABL", labels)
            .section(b"TENS", encode_tensors(self.model.parameters()));
        Ok(w.to_bytes())
    }

    pub fn from_bundle(bundle: &Bundle) -> Result<Self> {
        let header: BundleHeader = serde_json::from_slice(bundle.require(b"CONF")?)?;
        if header.kind != KIND_CNN {
            return Err(Error::Format(format!("bundle holds a `{}` model, not `{KIND_CNN}`", header.kind)));
        }
        let vocab = Vocabulary::read_from(bundle.require(b"VOCB")?)?;
        let maps: CategoryMaps = serde_json::from_slice(bundle.require(b"CATM")?)?;
        let labels = LabelSpace::read_from(bundle.require(b"LABL")?)?;
        let tensors = decode_tensors(bundle.require(b"TENS")?)?;

        if vocab.len() != header.vocab_size || maps.onehot_dim() != header.onehot_dim {
            return Err(Error::Format("vocabulary or category maps disagree with the header".into()));
        }
        if labels.len() != header.config.n_labels || labels.task() != header.task {
            return Err(Error::Format(format!(
                "label table has {} {} labels, config expects {} {} labels",
                labels.len(),
                labels.task(),
                header.config.n_labels,
                header.task
            )));
        }
        let mut model = CnnModel::<f32>::new(header.config, header.vocab_size, header.onehot_dim, 0)?;
        if tensors.len() != model.parameters().len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                model.parameters().len(),
                tensors.len()
            )));
        }
        for (dst, src) in model.parameters_mut().into_iter().zip(tensors) {
            if dst.shape() != src.shape() {
                return Err(Error::Shape {
                    expected: dst.shape().to_vec(),
                    actual: src.shape().to_vec(),
                });
            }
            *dst = src;
        }
        model.validate()?;
        let encoder = FeatureEncoder::new(vocab, maps, &model.config);
        Ok(ModelBundle {
            task: header.task,
            encoder,
            labels,
            model,
        })
    }

    /// Check that this bundle was trained for `expected` labels.
    pub fn check_labels(&self, expected: &LabelSpace) -> Result<()> {
        if self.labels.task() != expected.task() || self.labels.names() != expected.names() {
            return Err(Error::data(format!(
                "model has {} {} labels, provided label table has {} {} labels",
                self.labels.len(),
                self.labels.task(),
                expected.len(),
                expected.task()
            )));
        }
        Ok(())
    }
}

pub fn save_model(bundle: &ModelBundle, path: &Path) -> Result<()> {
    std::fs::write(path, bundle.to_bytes()?)?;
    Ok(())
}

/// Load a CNN bundle; when `expected` is given the label tables must agree.
pub fn load_model(path: &Path, expected: Option<&LabelSpace>) -> Result<ModelBundle> {
    let bundle = Bundle::parse(&std::fs::read(path)?)?;
    let m = ModelBundle::from_bundle(&bundle)?;
    if let Some(e) = expected {
        m.check_labels(e)?;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::CnnConfig;
    use crate::geo::{City, CityTable};
    use crate::nncore::Tensor;

    fn tiny() -> CnnConfig {
        CnnConfig {
            embed_dim: 8,
            windows: vec![2, 3],
            filters_per_window: 4,
            dropout: 0.0,
            max_lens: [5, 4, 3, 3],
            n_labels: 3,
            shared_filters: true,
        }
    }

    /// Class c is signalled by token 2 + c at the start of the text field.
    fn toy_examples(n: usize, offset: usize) -> Vec<Example> {
        (0..n)
            .map(|i| {
                let label = (i + offset) % 3;
                let noise = 5 + ((i * 7 + offset) % 10) as u32;
                Example {
                    features: Features {
                        fields: [
                            vec![2 + label as u32, noise, 0, 0, 0],
                            vec![noise, 0, 0, 0],
                            vec![0, 0, 0],
                            vec![1, 0, 0],
                        ],
                        onehot: [0, 1, 2, 3 + (i % 144)],
                    },
                    label,
                }
            })
            .collect()
    }

    fn model(seed: u64) -> CnnModel<f32> {
        CnnModel::new(tiny(), 20, 3 + 144, seed).unwrap()
    }

    #[test]
    fn early_stopping_rules() {
        let mut s = EarlyStopping::new(1);
        assert_eq!(s.observe(1, 0.8), Verdict { improved: true, stop: false });
        assert_eq!(s.observe(2, 0.7), Verdict { improved: false, stop: true });
        assert_eq!(s.best(), Some((1, 0.8)));

        let mut s = EarlyStopping::new(3);
        s.observe(1, 0.5);
        s.observe(2, 0.5);
        s.observe(3, 0.6);
        assert!(!s.observe(4, 0.6).stop);
        assert!(!s.observe(5, 0.1).stop);
        assert!(s.observe(6, 0.59).stop);
        assert_eq!(s.best(), Some((3, 0.6)));
    }

    #[test]
    fn single_batch_loss_decreases() {
        let mut m = model(1);
        let data = toy_examples(32, 0);
        let batch: Vec<&Example> = data.iter().collect();
        let seeds = vec![0u64; batch.len()];
        let mut opt = Optimizer::new(&m, AdamConfig::default());
        let mut prev = f64::INFINITY;
        for _ in 0..10 {
            let (loss, grads) = batch_gradients(&m, &batch, &seeds).unwrap();
            assert!(loss < prev, "loss {loss} did not drop below {prev}");
            prev = loss;
            opt.step(&mut m, &grads).unwrap();
        }
    }

    #[test]
    fn learns_toy_problem_and_selects_best_epoch() {
        let cfg = TrainConfig {
            batch_size: 16,
            max_epochs: 15,
            patience: 3,
            seed: 4,
            eval_every: 1,
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
        };
        let (m, log) = train(model(2), &toy_examples(150, 0), &toy_examples(30, 1), &cfg).unwrap();
        let dev_acc = accuracy(&m, &toy_examples(30, 1)).unwrap();
        assert!(dev_acc >= 0.95, "dev accuracy {dev_acc}");
        let max = log.epochs.iter().filter_map(|e| e.dev_accuracy).fold(0.0, f64::max);
        assert_eq!(dev_acc, max);
        assert_eq!(log.best_dev_accuracy, max);
        assert!(log.epochs[log.best_epoch - 1].best);
        // pad row untouched
        assert!(m.embedding.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        let mut c = tiny();
        c.dropout = 0.5;
        let run = || {
            let m = CnnModel::new(c.clone(), 20, 147, 3).unwrap();
            train(m, &toy_examples(40, 0), &toy_examples(9, 2), &cfg).unwrap().0
        };
        let (a, b) = (run(), run());
        for (x, y) in a.parameters().iter().zip(b.parameters()) {
            assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn train_errors() {
        let cfg = TrainConfig::default();
        assert!(train(model(0), &[], &toy_examples(3, 0), &cfg).is_err());
        assert!(train(model(0), &toy_examples(3, 0), &[], &cfg).is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..cfg
        };
        assert!(train(model(0), &toy_examples(3, 0), &toy_examples(3, 0), &bad).is_err());
    }

    fn sample_bundle() -> ModelBundle {
        let vocab = Vocabulary::from_tokens((0..18).map(|i| format!("t{i}")), 1);
        let maps = CategoryMaps {
            tweet_lang: vec!["<unk-cat>".into()].into(),
            user_lang: vec!["<unk-cat>".into()].into(),
            timezone: vec!["<unk-cat>".into()].into(),
        };
        let table = CityTable::new(
            (0..3)
                .map(|i| City {
                    city_id: i,
                    name: format!("c{i}"),
                    lat: i as f64,
                    lon: 0.5,
                    country_code: "US".into(),
                    population: 0,
                })
                .collect(),
        )
        .unwrap();
        let model = model(7);
        ModelBundle {
            task: Task::City,
            encoder: FeatureEncoder::new(vocab, maps, &model.config),
            labels: LabelSpace::cities(&table).unwrap(),
            model,
        }
    }

    #[test]
    fn bundle_round_trip_exact() {
        let b = sample_bundle();
        let bytes = b.to_bytes().unwrap();
        let back = ModelBundle::from_bundle(&Bundle::parse(&bytes).unwrap()).unwrap();
        assert_eq!(back, b);
        for ex in toy_examples(10, 0) {
            let p = b.model.predict(&ex.features).unwrap();
            let q = back.model.predict(&ex.features).unwrap();
            assert!(p.iter().zip(&q).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn bundle_rejects_corruption_and_mismatch() {
        let b = sample_bundle();
        let mut bytes = b.to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(Bundle::parse(&bytes), Err(Error::Format(_))));

        let bytes = b.to_bytes().unwrap();
        assert!(Bundle::parse(&bytes[..bytes.len() - 3]).is_err());

        let other = LabelSpace::countries(&[crate::ingest::test_support::record("u", "US", None)], None).unwrap();
        assert!(b.check_labels(&other).is_err());
        assert!(b.check_labels(&b.labels).is_ok());

        // tensor with the wrong shape
        let mut bad = b.clone();
        bad.model.out_bias = Tensor::zeros(&[4]);
        let bytes = bad.to_bytes().unwrap();
        assert!(ModelBundle::from_bundle(&Bundle::parse(&bytes).unwrap()).is_err());
    }
}
