//! Multi-field convolutional classifier.
//!
//! Each of the four text fields is looked up in a shared embedding table,
//! convolved with banks of filters of several window widths (ReLU), and
//! max-pooled over time. The pooled vector θ goes through dropout, the
//! one-hot categorical block is appended, and a softmax layer produces a
//! distribution over locations.

use std::collections::BTreeMap;
use std::io::BufRead;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encode::CategoryMaps;
use crate::ingest::Record;
use crate::nncore::{self, Mode, Real, Tensor};
use crate::seed;
use crate::textproc::{encode_tokens, tokenize, Vocabulary, PAD_INDEX};
use crate::{Error, Result};

pub const N_FIELDS: usize = 4;

/// Text fields in model order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Text,
    Description,
    ProfileLocation,
    UserName,
}

impl Field {
    pub const ALL: [Field; N_FIELDS] = [Field::Text, Field::Description, Field::ProfileLocation, Field::UserName];

    pub fn of(self, r: &Record) -> &str {
        match self {
            Field::Text => &r.text,
            Field::Description => &r.user_description,
            Field::ProfileLocation => &r.profile_location,
            Field::UserName => &r.user_name,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::Text => "text",
            Field::Description => "user_description",
            Field::ProfileLocation => "profile_location",
            Field::UserName => "user_name",
        }
    }
}

/// Sequence lengths for text, description, profile location, user name.
pub const DEFAULT_MAX_LENS: [usize; N_FIELDS] = [50, 50, 10, 5];
pub const EMBED_INIT_RANGE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub embed_dim: usize,
    pub windows: Vec<usize>,
    pub filters_per_window: usize,
    pub dropout: f64,
    pub max_lens: [usize; N_FIELDS],
    pub n_labels: usize,
    /// One filter bank per window shared by all fields; `false` gives each
    /// field its own banks.
    pub shared_filters: bool,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            embed_dim: 300,
            windows: vec![3, 4, 5],
            filters_per_window: 128,
            dropout: 0.5,
            max_lens: DEFAULT_MAX_LENS,
            n_labels: 2,
            shared_filters: true,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.filters_per_window == 0 || self.n_labels == 0 {
            return Err(Error::invalid("embed_dim, filters_per_window and n_labels must be >= 1"));
        }
        if self.windows.is_empty() || self.windows.contains(&0) {
            return Err(Error::invalid("at least one window, each >= 1, is required"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout must be in [0,1), got {}", self.dropout)));
        }
        let widest = self.max_window();
        if let Some((f, len)) = Field::ALL.iter().zip(self.max_lens).find(|(_, l)| *l < widest) {
            return Err(Error::invalid(format!(
                "max_len {len} of field {} is shorter than window {widest}",
                f.name()
            )));
        }
        Ok(())
    }

    pub fn max_window(&self) -> usize {
        self.windows.iter().copied().max().unwrap_or(0)
    }

    /// Length of θ: 4 fields × windows × filters.
    pub fn pooled_dim(&self) -> usize {
        N_FIELDS * self.windows.len() * self.filters_per_window
    }

    fn n_banks(&self) -> usize {
        if self.shared_filters {
            self.windows.len()
        } else {
            N_FIELDS * self.windows.len()
        }
    }

    fn bank_index(&self, field: usize, window: usize) -> usize {
        if self.shared_filters {
            window
        } else {
            field * self.windows.len() + window
        }
    }
}

/// Encoded inputs for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub fields: [Vec<u32>; N_FIELDS],
    pub onehot: [usize; 4],
}

/// Record → [`Features`] using the shared vocabulary and category maps.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEncoder {
    pub vocab: Vocabulary,
    pub maps: CategoryMaps,
    pub max_lens: [usize; N_FIELDS],
    pub max_window: usize,
}

impl FeatureEncoder {
    pub fn new(vocab: Vocabulary, maps: CategoryMaps, config: &CnnConfig) -> Self {
        FeatureEncoder {
            vocab,
            maps,
            max_lens: config.max_lens,
            max_window: config.max_window(),
        }
    }

    pub fn encode(&self, r: &Record) -> Result<Features> {
        let mut fields: [Vec<u32>; N_FIELDS] = Default::default();
        for (slot, (field, max_len)) in fields.iter_mut().zip(Field::ALL.iter().zip(self.max_lens)) {
            *slot = encode_tokens(&tokenize(field.of(r)), &self.vocab, max_len, self.max_window)?;
        }
        Ok(Features {
            fields,
            onehot: self.maps.onehot_block(r),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank<T = f32> {
    pub window: usize,
    /// `filters × (window·embed_dim)`
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel<T = f32> {
    pub config: CnnConfig,
    pub onehot_dim: usize,
    /// `|V| × k`; row 0 (`<pad>`) stays zero.
    pub embedding: Tensor<T>,
    pub banks: Vec<FilterBank<T>>,
    /// `L × D` with `D = pooled_dim + onehot_dim`.
    pub out_weights: Tensor<T>,
    pub out_bias: Tensor<T>,
}

fn glorot<R: Rng, T: Real>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..shape.iter().product())
        .map(|_| T::real(rng.gen_range(-limit..=limit)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Output of [`CnnModel::forward`], kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass<T = f32> {
    pub probs: Vec<T>,
    /// θ after dropout; the one-hot tail stays sparse in `onehot`.
    pub theta: Vec<T>,
    pub onehot: [usize; 4],
    mask: Vec<T>,
    argpos: Vec<usize>,
    active: Vec<bool>,
}

impl<T> ForwardPass<T> {
    /// Dense θ̂ = [θ; one-hot block] of length `D`.
    pub fn theta_hat(&self, onehot_dim: usize) -> Vec<T>
    where
        T: Real,
    {
        let mut v = self.theta.clone();
        let base = v.len();
        v.resize(base + onehot_dim, T::zero());
        for &a in &self.onehot {
            v[base + a] = T::one();
        }
        v
    }
}

/// Pooled features of one filter bank over one field.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled<T> {
    pub values: Vec<T>,
    /// First window position holding the maximum.
    pub argpos: Vec<usize>,
    /// Whether the ReLU was open at `argpos` (gradient flows).
    pub active: Vec<bool>,
}

/// ReLU convolution of every `window`-row slice of `x` with each filter,
/// then max over positions.
pub fn conv_maxpool<T: Real>(x: &Tensor<T>, bank: &FilterBank<T>) -> Result<Pooled<T>> {
    let (n, k) = (x.shape()[0], x.shape()[1]);
    let h = bank.window;
    if n < h {
        return Err(Error::invalid(format!("sequence length {n} shorter than window {h}")));
    }
    if bank.weights.shape()[1] != h * k {
        return Err(Error::Shape {
            expected: vec![bank.weights.shape()[0], h * k],
            actual: bank.weights.shape().to_vec(),
        });
    }
    let m = bank.weights.shape()[0];
    let mut out = Pooled {
        values: vec![T::zero(); m],
        argpos: vec![0; m],
        active: vec![false; m],
    };
    for q in 0..m {
        let w = bank.weights.row(q);
        let b = bank.bias.data()[q];
        let mut best = T::neg_infinity();
        let mut best_pos = 0;
        for i in 0..=n - h {
            let pre = dot(w, &x.data()[i * k..(i + h) * k]) + b;
            if pre > best {
                best = pre;
                best_pos = i;
            }
        }
        if best > T::zero() {
            out.values[q] = best;
            out.argpos[q] = best_pos;
            out.active[q] = true;
        }
    }
    Ok(out)
}

/// Gradient accumulator matching the model's parameters. Embedding rows are
/// stored sparsely; `<pad>` never gets an entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnGrads<T = f32> {
    pub embedding: BTreeMap<u32, Vec<T>>,
    pub bank_weights: Vec<Tensor<T>>,
    pub bank_bias: Vec<Tensor<T>>,
    pub out_weights: Tensor<T>,
    pub out_bias: Tensor<T>,
}

impl<T: Real> CnnGrads<T> {
    pub fn zeros_like(model: &CnnModel<T>) -> Self {
        CnnGrads {
            embedding: BTreeMap::new(),
            bank_weights: model.banks.iter().map(|b| Tensor::zeros(b.weights.shape())).collect(),
            bank_bias: model.banks.iter().map(|b| Tensor::zeros(b.bias.shape())).collect(),
            out_weights: Tensor::zeros(model.out_weights.shape()),
            out_bias: Tensor::zeros(model.out_bias.shape()),
        }
    }

    /// `self += other`, summing embedding rows in key order.
    pub fn accumulate(&mut self, other: &CnnGrads<T>) -> Result<()> {
        for (row, g) in &other.embedding {
            let dst = self
                .embedding
                .entry(*row)
                .or_insert_with(|| vec![T::zero(); g.len()]);
            dst.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
        }
        for (a, b) in self.bank_weights.iter_mut().zip(&other.bank_weights) {
            a.add_scaled(b, T::one())?;
        }
        for (a, b) in self.bank_bias.iter_mut().zip(&other.bank_bias) {
            a.add_scaled(b, T::one())?;
        }
        self.out_weights.add_scaled(&other.out_weights, T::one())?;
        self.out_bias.add_scaled(&other.out_bias, T::one())?;
        Ok(())
    }

    /// Dense gradients in [`CnnModel::parameters`] order.
    pub fn dense(&self, model: &CnnModel<T>) -> Vec<Tensor<T>> {
        let mut emb = Tensor::zeros(model.embedding.shape());
        for (&row, g) in &self.embedding {
            emb.row_mut(row as usize).copy_from_slice(g);
        }
        let mut out = vec![emb];
        for (w, b) in self.bank_weights.iter().zip(&self.bank_bias) {
            out.push(w.clone());
            out.push(b.clone());
        }
        out.push(self.out_weights.clone());
        out.push(self.out_bias.clone());
        out
    }
}

impl<T: Real> CnnModel<T> {
    /// Randomly initialised model: embeddings uniform in ±0.25 (pad row
    /// zero), filters and softmax weights Glorot-uniform, biases zero.
    pub fn new(config: CnnConfig, vocab_size: usize, onehot_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab_size < 2 {
            return Err(Error::invalid("vocabulary must hold at least <pad> and <unk>"));
        }
        let mut rng = seed::rng(seed);
        let k = config.embed_dim;
        let mut embedding = Tensor::zeros(&[vocab_size, k]);
        for v in embedding.data_mut()[k..].iter_mut() {
            *v = T::real(rng.gen_range(-EMBED_INIT_RANGE..=EMBED_INIT_RANGE));
        }
        let m = config.filters_per_window;
        let banks = (0..config.n_banks())
            .map(|b| {
                let h = config.windows[b % config.windows.len()];
                FilterBank {
                    window: h,
                    weights: glorot(&mut rng, &[m, h * k], h * k, m),
                    bias: Tensor::zeros(&[m]),
                }
            })
            .collect();
        let d = config.pooled_dim() + onehot_dim;
        let l = config.n_labels;
        Ok(CnnModel {
            out_weights: glorot(&mut rng, &[l, d], d, l),
            out_bias: Tensor::zeros(&[l]),
            config,
            onehot_dim,
            embedding,
            banks,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.shape()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.config.pooled_dim() + self.onehot_dim
    }

    /// Check every tensor against the config.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let c = &self.config;
        let k = c.embed_dim;
        let expect = |t: &Tensor<T>, shape: Vec<usize>| -> Result<()> {
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape {
                    expected: shape,
                    actual: t.shape().to_vec(),
                });
            }
            Ok(())
        };
        if self.embedding.shape().len() != 2 || self.embedding.shape()[1] != k {
            return Err(Error::Shape {
                expected: vec![self.vocab_size(), k],
                actual: self.embedding.shape().to_vec(),
            });
        }
        if self.banks.len() != c.n_banks() {
            return Err(Error::Format(format!("expected {} filter banks, found {}", c.n_banks(), self.banks.len())));
        }
        for (i, b) in self.banks.iter().enumerate() {
            let h = c.windows[i % c.windows.len()];
            if b.window != h {
                return Err(Error::Format(format!("bank {i} has window {} instead of {h}", b.window)));
            }
            expect(&b.weights, vec![c.filters_per_window, h * k])?;
            expect(&b.bias, vec![c.filters_per_window])?;
        }
        expect(&self.out_weights, vec![c.n_labels, self.input_dim()])?;
        expect(&self.out_bias, vec![c.n_labels])
    }

    pub fn cast<U: Real>(&self) -> CnnModel<U> {
        CnnModel {
            config: self.config.clone(),
            onehot_dim: self.onehot_dim,
            embedding: self.embedding.cast(),
            banks: self
                .banks
                .iter()
                .map(|b| FilterBank {
                    window: b.window,
                    weights: b.weights.cast(),
                    bias: b.bias.cast(),
                })
                .collect(),
            out_weights: self.out_weights.cast(),
            out_bias: self.out_bias.cast(),
        }
    }

    /// All trainable tensors: embedding, then (weights, bias) per bank,
    /// then softmax weights and bias.
    pub fn parameters(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![&self.embedding];
        for b in &self.banks {
            v.push(&b.weights);
            v.push(&b.bias);
        }
        v.push(&self.out_weights);
        v.push(&self.out_bias);
        v
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![&mut self.embedding];
        for b in &mut self.banks {
            v.push(&mut b.weights);
            v.push(&mut b.bias);
        }
        v.push(&mut self.out_weights);
        v.push(&mut self.out_bias);
        v
    }

    /// Embedding rows for an encoded field, `max_len × k`.
    pub fn field_matrix(&self, indices: &[u32]) -> Result<Tensor<T>> {
        let k = self.config.embed_dim;
        let mut data = Vec::with_capacity(indices.len() * k);
        for &i in indices {
            if i as usize >= self.vocab_size() {
                return Err(Error::invalid(format!("token index {i} >= vocabulary size {}", self.vocab_size())));
            }
            data.extend_from_slice(self.embedding.row(i as usize));
        }
        Tensor::from_vec(&[indices.len(), k], data)
    }

    fn check_features(&self, x: &Features) -> Result<()> {
        for (f, len) in x.fields.iter().zip(self.config.max_lens) {
            if f.len() != len {
                return Err(Error::Shape {
                    expected: vec![len],
                    actual: vec![f.len()],
                });
            }
        }
        if let Some(&a) = x.onehot.iter().find(|&&a| a >= self.onehot_dim) {
            return Err(Error::invalid(format!("one-hot position {a} >= {}", self.onehot_dim)));
        }
        Ok(())
    }

    /// Forward pass. In [`Mode::Train`] dropout on θ is drawn from `dropout_seed`.
    pub fn forward(&self, x: &Features, mode: Mode, dropout_seed: u64) -> Result<ForwardPass<T>> {
        let mask = match mode {
            Mode::Train => nncore::dropout_mask(self.config.pooled_dim(), self.config.dropout, dropout_seed)?,
            Mode::Infer => vec![T::one(); self.config.pooled_dim()],
        };
        self.forward_with_mask(x, mask)
    }

    /// Forward pass with an explicit dropout multiplier vector over θ.
    pub fn forward_with_mask(&self, x: &Features, mask: Vec<T>) -> Result<ForwardPass<T>> {
        self.check_features(x)?;
        let p_dim = self.config.pooled_dim();
        if mask.len() != p_dim {
            return Err(Error::Shape {
                expected: vec![p_dim],
                actual: vec![mask.len()],
            });
        }
        let mut theta = Vec::with_capacity(p_dim);
        let mut argpos = Vec::with_capacity(p_dim);
        let mut active = Vec::with_capacity(p_dim);
        for (f, indices) in x.fields.iter().enumerate() {
            let matrix = self.field_matrix(indices)?;
            for w in 0..self.config.windows.len() {
                let pooled = conv_maxpool(&matrix, &self.banks[self.config.bank_index(f, w)])?;
                theta.extend(pooled.values);
                argpos.extend(pooled.argpos);
                active.extend(pooled.active);
            }
        }
        theta.iter_mut().zip(&mask).for_each(|(t, &m)| *t *= m);

        let l = self.config.n_labels;
        let logits: Vec<T> = (0..l)
            .map(|c| {
                let row = self.out_weights.row(c);
                let mut z = self.out_bias.data()[c] + dot(&row[..p_dim], &theta);
                for &a in &x.onehot {
                    z += row[p_dim + a];
                }
                z
            })
            .collect();
        Ok(ForwardPass {
            probs: nncore::softmax(&logits)?,
            theta,
            onehot: x.onehot,
            mask,
            argpos,
            active,
        })
    }

    /// Probabilities at inference time.
    pub fn predict(&self, x: &Features) -> Result<Vec<T>> {
        Ok(self.forward(x, Mode::Infer, 0)?.probs)
    }

    /// Cross-entropy loss of a forward pass.
    pub fn loss(fwd: &ForwardPass<T>, label: usize) -> Result<T> {
        nncore::cross_entropy(&fwd.probs, label)
    }

    /// Accumulate `scale ·` ∂loss/∂params for one example into `grads`.
    pub fn backward(
        &self,
        x: &Features,
        fwd: &ForwardPass<T>,
        label: usize,
        scale: T,
        grads: &mut CnnGrads<T>,
    ) -> Result<()> {
        let dz: Vec<T> = nncore::cross_entropy_grad(&fwd.probs, label)?
            .into_iter()
            .map(|g| g * scale)
            .collect();
        let p_dim = self.config.pooled_dim();
        let d = self.input_dim();
        let k = self.config.embed_dim;

        let mut dtheta = vec![T::zero(); p_dim];
        for (c, &g) in dz.iter().enumerate() {
            grads.out_bias.data_mut()[c] += g;
            let gw = &mut grads.out_weights.data_mut()[c * d..(c + 1) * d];
            for (dst, &t) in gw[..p_dim].iter_mut().zip(&fwd.theta) {
                *dst += g * t;
            }
            for &a in &fwd.onehot {
                gw[p_dim + a] += g;
            }
            let row = self.out_weights.row(c);
            for (dt, &w) in dtheta.iter_mut().zip(&row[..p_dim]) {
                *dt += w * g;
            }
        }

        let m = self.config.filters_per_window;
        let n_windows = self.config.windows.len();
        for (f, indices) in x.fields.iter().enumerate() {
            for w in 0..n_windows {
                let bank_idx = self.config.bank_index(f, w);
                let bank = &self.banks[bank_idx];
                let h = bank.window;
                for q in 0..m {
                    let j = (f * n_windows + w) * m + q;
                    if !fwd.active[j] {
                        continue;
                    }
                    let g = dtheta[j] * fwd.mask[j];
                    if g == T::zero() {
                        continue;
                    }
                    let pos = fwd.argpos[j];
                    grads.bank_bias[bank_idx].data_mut()[q] += g;
                    let filter = bank.weights.row(q);
                    let gw = grads.bank_weights[bank_idx].row_mut(q);
                    for r in 0..h {
                        let tok = indices[pos + r];
                        let emb = self.embedding.row(tok as usize);
                        let seg = r * k..(r + 1) * k;
                        gw[seg.clone()].iter_mut().zip(emb).for_each(|(a, &e)| *a += g * e);
                        if tok != PAD_INDEX {
                            let ge = grads
                                .embedding
                                .entry(tok)
                                .or_insert_with(|| vec![T::zero(); k]);
                            ge.iter_mut().zip(&filter[seg]).for_each(|(a, &wv)| *a += g * wv);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Largest relative error between backprop gradients of the mean batch loss
/// and central differences, with dropout fixed by `masks`. Covers every
/// trainable parameter; the frozen `<pad>` row is excluded.
pub fn gradient_check(model: &CnnModel<f64>, batch: &[(Features, usize)], masks: &[Vec<f64>], step: f64) -> Result<f64> {
    if batch.is_empty() || batch.len() != masks.len() {
        return Err(Error::invalid("gradient check needs one mask per example"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = CnnGrads::zeros_like(model);
    for ((x, y), mask) in batch.iter().zip(masks) {
        let fwd = model.forward_with_mask(x, mask.clone())?;
        model.backward(x, &fwd, *y, scale, &mut grads)?;
    }
    let analytic: Vec<f64> = grads.dense(model).iter().flat_map(|t| t.data().to_vec()).collect();
    let base: Vec<f64> = model.parameters().iter().flat_map(|t| t.data().to_vec()).collect();
    let mut probe = model.clone();
    let numeric = crate::nncore::gradcheck::central_differences(
        |v| {
            let mut off = 0;
            for t in probe.parameters_mut() {
                let n = t.len();
                t.data_mut().copy_from_slice(&v[off..off + n]);
                off += n;
            }
            batch
                .iter()
                .zip(masks)
                .map(|((x, y), mask)| {
                    let fwd = probe.forward_with_mask(x, mask.clone()).expect("inputs validated above");
                    CnnModel::loss(&fwd, *y).expect("label validated above")
                })
                .sum::<f64>()
                * scale
        },
        &base,
        step,
    );
    let k = model.config.embed_dim;
    Ok(crate::nncore::gradcheck::max_relative_error(&analytic[k..], &numeric[k..]))
}

/// Overwrite embedding rows with vectors from a word2vec-style text file
/// (`<count> <dim>` header, then `word v1 … v_dim`). Words missing from the
/// file keep their random initialisation. Returns the number of rows replaced.
pub fn load_pretrained_embeddings<R: BufRead>(model: &mut CnnModel<f32>, vocab: &Vocabulary, reader: R) -> Result<usize> {
    let k = model.config.embed_dim;
    let mut lines = reader.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Ok(0);
    };
    let header = header?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse {
            line: 1,
            msg: "header must be `<count> <dim>`".into(),
        })?;
    let [_, dim] = dims[..] else {
        return Err(Error::Parse {
            line: 1,
            msg: "header must be `<count> <dim>`".into(),
        });
    };
    if dim != k {
        return Err(Error::invalid(format!("vector file has dimension {dim}, model uses {k}")));
    }
    let mut replaced = 0;
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().unwrap_or_default();
        let values: Vec<f32> = parts
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                msg: format!("bad number: {e}"),
            })?;
        if values.len() != k {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected {k} values, found {}", values.len()),
            });
        }
        if let Some(idx) = vocab.index(word) {
            model.embedding.row_mut(idx as usize).copy_from_slice(&values);
            replaced += 1;
        }
    }
    Ok(replaced)
}
