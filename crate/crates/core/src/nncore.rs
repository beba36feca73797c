//! Small dense numeric kernel with explicit forward/backward pairs.
//!
//! Everything is generic over [`Real`] so the same code runs at 32-bit for
//! training and at 64-bit inside gradient checks.

use std::fmt::Debug;

use num_traits::{Float, NumAssign};
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

pub trait Real: Float + NumAssign + Default + Debug + Send + Sync + 'static {
    fn real(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn real(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn real(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                expected: shape.to_vec(),
                actual: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let w = self.shape[1];
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::real(x.as_f64())).collect(),
        }
    }

    fn check_same_shape(&self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                expected: self.shape.clone(),
                actual: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Tensor<T>, scale: T) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| v.max(T::zero())).collect(),
    }
}

/// Gradient of ReLU: passes `upstream` where `x > 0`, zero elsewhere (including 0).
pub fn relu_backward<T: Real>(x: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    x.check_same_shape(upstream)?;
    Ok(Tensor {
        shape: x.shape.clone(),
        data: x
            .data
            .iter()
            .zip(&upstream.data)
            .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
            .collect(),
    })
}

/// Max-shifted softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Result<Vec<T>> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total = exps.iter().fold(T::zero(), |a, &b| a + b);
    Ok(exps.into_iter().map(|e| e / total).collect())
}

pub const PROB_FLOOR: f64 = 1e-12;

/// `-ln p[label]` with `p` clamped below at [`PROB_FLOOR`].
pub fn cross_entropy<T: Real>(p: &[T], label: usize) -> Result<T> {
    let &pl = p
        .get(label)
        .ok_or_else(|| Error::invalid(format!("label {label} out of range for {} classes", p.len())))?;
    Ok(-pl.max(T::real(PROB_FLOOR)).ln())
}

/// Gradient of softmax + cross-entropy with respect to the logits: `p - onehot(label)`.
pub fn cross_entropy_grad<T: Real>(p: &[T], label: usize) -> Result<Vec<T>> {
    if label >= p.len() {
        return Err(Error::invalid(format!("label {label} out of range for {} classes", p.len())));
    }
    let mut g = p.to_vec();
    g[label] -= T::one();
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate must be in [0,1), got {rate}")));
    }
    Ok(())
}

/// Inverted-dropout multipliers: 0 with probability `rate`, else `1/(1-rate)`.
/// Element `i` depends only on `(seed, i)`.
pub fn dropout_mask<T: Real>(len: usize, rate: f64, seed: u64) -> Result<Vec<T>> {
    check_rate(rate)?;
    let keep = T::real(1.0 / (1.0 - rate));
    Ok((0..len as u64)
        .map(|i| {
            if rate > 0.0 && seed::unit_f64(seed, i) < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect())
}

/// Apply dropout; returns the output and the multiplier mask (all ones at inference).
pub fn dropout<T: Real>(x: &Tensor<T>, rate: f64, mode: Mode, seed: u64) -> Result<(Tensor<T>, Vec<T>)> {
    check_rate(rate)?;
    let mask = match mode {
        Mode::Infer => vec![T::one(); x.len()],
        Mode::Train => dropout_mask(x.len(), rate, seed)?,
    };
    let data = x.data.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((
        Tensor {
            shape: x.shape.clone(),
            data,
        },
        mask,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub t: u64,
    pub config: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(shape: &[usize], config: AdamConfig) -> Self {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step<T: Real>(param: &mut Tensor<T>, grad: &Tensor<T>, state: &mut AdamState<T>) -> Result<()> {
    param.check_same_shape(grad)?;
    param.check_same_shape(&state.m)?;
    param.check_same_shape(&state.v)?;
    state.t += 1;
    let c = state.config;
    let (b1, b2) = (T::real(c.beta1), T::real(c.beta2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let bc1 = T::real(1.0 - c.beta1.powf(state.t as f64));
    let bc2 = T::real(1.0 - c.beta2.powf(state.t as f64));
    let (lr, eps) = (T::real(c.lr), T::real(c.eps));
    for (((p, &g), m), v) in param
        .data
        .iter_mut()
        .zip(&grad.data)
        .zip(state.m.data.iter_mut())
        .zip(state.v.data.iter_mut())
    {
        *m = b1 * *m + one_b1 * g;
        *v = b2 * *v + one_b2 * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Central-difference gradient checking at 64-bit.
pub mod gradcheck {
    /// Default perturbation.
    pub const STEP: f64 = 1e-3;

    /// Numerical gradient of `f` at `x` by central differences.
    pub fn central_differences<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], step: f64) -> Vec<f64> {
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|i| {
                let orig = probe[i];
                probe[i] = orig + step;
                let up = f(&probe);
                probe[i] = orig - step;
                let down = f(&probe);
                probe[i] = orig;
                (up - down) / (2.0 * step)
            })
            .collect()
    }

    /// `|a-n| / max(|a|, |n|, 1e-7)`; the floor keeps two near-zero values from
    /// reporting a large ratio.
    pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
    }

    pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
        assert_eq!(analytic.len(), numeric.len());
        analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| relative_error(a, n))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::gradcheck::*;
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn t(v: &[f32]) -> Tensor<f32> {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&t(&[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(&t(&[-1.0, -3.0])).data(), &[0.0, 0.0]);
        let g = relu_backward(&t(&[3.0, -2.0]), &t(&[1.0, 1.0])).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0]);
        assert_eq!(relu_backward(&t(&[0.0]), &t(&[5.0])).unwrap().data(), &[0.0]);
        assert!(relu_backward(&t(&[0.0]), &t(&[5.0, 1.0])).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0f64; 4]).unwrap(), vec![0.25; 4]);
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12 && (p[1] - 1.0 / 3.0).abs() < 1e-12);
        let p = softmax(&[1000.0f32, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-6 && p[1].abs() < 1e-6);
        assert!(softmax::<f32>(&[]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[1.0f64, 0.0, 0.0], 0).unwrap(), 0.0);
        assert!((cross_entropy(&[0.25f64; 4], 3).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((cross_entropy(&[0.0f64, 1.0], 0).unwrap() - (-PROB_FLOOR.ln())).abs() < 1e-9);
        assert!(cross_entropy(&[0.5f64, 0.5], 2).is_err());
        assert!(cross_entropy_grad(&[0.5f64, 0.5], 2).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = crate::seed::rng(3);
        for _ in 0..20 {
            let logits: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let label = rng.gen_range(0..5);
            let analytic = cross_entropy_grad(&softmax(&logits).unwrap(), label).unwrap();
            let numeric = central_differences(
                |z| cross_entropy(&softmax(z).unwrap(), label).unwrap(),
                &logits,
                STEP,
            );
            assert!(max_relative_error(&analytic, &numeric) <= 1e-4);
        }
    }

    #[test]
    fn relu_gradient_matches_finite_differences() {
        // keep inputs away from the kink at 0
        let x = [0.7, -0.4, 1.3, -2.0, 0.05];
        let w = [0.3, -1.1, 2.0, 0.5, -0.7];
        let f = |v: &[f64]| -> f64 {
            let r = relu(&Tensor::from_vec(&[5], v.to_vec()).unwrap());
            r.data().iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let analytic = relu_backward(
            &Tensor::from_vec(&[5], x.to_vec()).unwrap(),
            &Tensor::from_vec(&[5], w.to_vec()).unwrap(),
        )
        .unwrap();
        let numeric = central_differences(f, &x, 1e-3);
        assert!(max_relative_error(analytic.data(), &numeric) <= 1e-4);
    }

    #[test]
    fn dropout_modes() {
        let x = t(&[1.0, 2.0, 3.0]);
        assert_eq!(dropout(&x, 0.5, Mode::Infer, 1).unwrap().0, x);
        assert_eq!(dropout(&x, 0.0, Mode::Train, 1).unwrap().0, x);
        assert!(dropout(&x, 1.0, Mode::Train, 1).is_err());
        assert!(dropout(&x, -0.1, Mode::Train, 1).is_err());
    }

    #[test]
    fn dropout_statistics() {
        let n = 100_000;
        let x = Tensor::from_vec(&[n], vec![1.0f64; n]).unwrap();
        let (y, _) = dropout(&x, 0.5, Mode::Train, 42).unwrap();
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        assert!((zeros - 0.5).abs() <= 0.01, "zero fraction {zeros}");
        let mean = y.data().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() <= 0.02, "mean {mean}");
        assert_eq!(dropout(&x, 0.5, Mode::Train, 42).unwrap().0, y);
    }

    #[test]
    fn adam_examples() {
        let cfg = AdamConfig::default();
        let mut p = t(&[1.0, -2.0]);
        let mut st = AdamState::new(&[2], cfg);
        adam_step(&mut p, &t(&[0.0, 0.0]), &mut st).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);

        // t=1, g=1: m=0.1, v=0.001, m_hat=1, v_hat=1 => dp = -lr/(1+eps)
        let mut p = Tensor::from_vec(&[1], vec![0.0f64]).unwrap();
        let mut st = AdamState::new(&[1], cfg);
        adam_step(&mut p, &Tensor::from_vec(&[1], vec![1.0]).unwrap(), &mut st).unwrap();
        assert!((p.data()[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);

        let mut st = AdamState::new(&[3], cfg);
        assert!(adam_step(&mut t(&[0.0, 0.0]), &t(&[0.0, 0.0]), &mut st).is_err());
    }

    #[test]
    fn adam_minimizes_square() {
        let cfg = AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        };
        // reference scalar loop
        let (mut rp, mut m, mut v) = (5.0f64, 0.0, 0.0);
        for step in 1..=2000 {
            let g = 2.0 * rp;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(step));
            let vh = v / (1.0 - 0.999f64.powi(step));
            rp -= 1e-2 * mh / (vh.sqrt() + 1e-8);
        }
        let mut p = Tensor::from_vec(&[1], vec![5.0f64]).unwrap();
        let mut st = AdamState::new(&[1], cfg);
        for _ in 0..2000 {
            let g = Tensor::from_vec(&[1], vec![2.0 * p.data()[0]]).unwrap();
            adam_step(&mut p, &g, &mut st).unwrap();
        }
        assert!(p.data()[0].abs() < 0.1);
        assert!((p.data()[0] - rp).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(z in proptest::collection::vec(-50.0f64..50.0, 1..20)) {
            let p = softmax(&z).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            let argmax = |v: &[f64]| v.iter().enumerate().fold(0, |b, (i, &x)| if x > v[b] { i } else { b });
            prop_assert_eq!(argmax(&p), argmax(&z));
        }

        #[test]
        fn adam_deterministic(g in proptest::collection::vec(-5.0f32..5.0, 4)) {
            let run = || {
                let mut p = Tensor::from_vec(&[4], vec![0.5f32; 4]).unwrap();
                let mut st = AdamState::new(&[4], AdamConfig::default());
                let grad = Tensor::from_vec(&[4], g.clone()).unwrap();
                for _ in 0..3 { adam_step(&mut p, &grad, &mut st).unwrap(); }
                p
            };
            prop_assert_eq!(run(), run());
        }
    }
}
