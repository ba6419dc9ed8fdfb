//! Relaxed positive-pair similarity and the symmetric InfoNCE objective.
//!
//! For a positive pair with cosine `c` the relaxed similarity is
//!
//! ```text
//! sigmoid(alpha * (c - t))   if c >= t
//! c / (2t)                   if t > c >= 0
//! c                          otherwise
//! ```
//!
//! which is continuous at `c = 0` and `c = t` and saturates once a positive
//! pair is aligned past `t`. Negative pairs always use the plain cosine.
//!
//! The similarity is applied per `(i, j)` entry of the batch similarity
//! matrix, so other pair-based objectives can swap it in through
//! [`Similarity`] without touching their loss code.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("batch is empty")]
    DegenerateBatch,
    #[error("batch has {u} image and {v} text embeddings")]
    CountMismatch { u: usize, v: usize },
    #[error("embedding {index} has dimension {got}, expected {expected}")]
    Dimension { index: usize, expected: usize, got: usize },
    #[error("embedding {index} is not unit norm (norm {norm})")]
    NotUnit { index: usize, norm: f64 },
    #[error("temperature must be positive and finite (got {0})")]
    BadTemperature(f64),
    #[error("cosine {0} lies on a branch knot of the relaxed similarity")]
    KnotPoint(f64),
    #[error("invalid similarity config: {0}")]
    InvalidConfig(String),
}

/// Distance from a knot below which the derivative is reported as undefined.
pub const KNOT_TOLERANCE: f64 = 1e-12;

/// Parameters of the relaxed similarity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Relaxation threshold, `0 < t < 1`.
    pub t: f64,
    /// Sigmoid slope, `> 0`.
    pub alpha: f64,
    pub enabled: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t: 0.5,
            alpha: 10.0,
            enabled: true,
        }
    }
}

impl SimConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.t > 0.0 && self.t < 1.0) {
            return Err(LossError::InvalidConfig(format!(
                "t must lie in (0, 1), got {}",
                self.t
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(LossError::InvalidConfig(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Dot product of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn relaxed_sim(c: f64, is_positive: bool, cfg: &SimConfig) -> f64 {
    if !is_positive || !cfg.enabled {
        return c;
    }
    if c >= cfg.t {
        sigmoid(cfg.alpha * (c - cfg.t))
    } else if c >= 0.0 {
        c / (2.0 * cfg.t)
    } else {
        c
    }
}

/// Derivative of [`relaxed_sim`] with respect to `c`, using the branch that
/// contains `c` (sigmoid branch at `c = t`, linear branch at `c = 0`).
pub fn one_sided_derivative(c: f64, is_positive: bool, cfg: &SimConfig) -> f64 {
    if !is_positive || !cfg.enabled {
        return 1.0;
    }
    if c >= cfg.t {
        let s = sigmoid(cfg.alpha * (c - cfg.t));
        cfg.alpha * s * (1.0 - s)
    } else if c >= 0.0 {
        1.0 / (2.0 * cfg.t)
    } else {
        1.0
    }
}

/// Derivative of [`relaxed_sim`]; errors on the non-differentiable knots.
pub fn relaxed_sim_derivative(c: f64, is_positive: bool, cfg: &SimConfig) -> Result<f64, LossError> {
    if is_positive && cfg.enabled && ((c - cfg.t).abs() < KNOT_TOLERANCE || c.abs() < KNOT_TOLERANCE) {
        return Err(LossError::KnotPoint(c));
    }
    Ok(one_sided_derivative(c, is_positive, cfg))
}

/// A per-entry similarity transform for pair-based contrastive losses.
pub trait Similarity {
    fn value(&self, cosine: f64, is_positive: bool) -> f64;
    fn derivative(&self, cosine: f64, is_positive: bool) -> f64;
}

impl Similarity for SimConfig {
    fn value(&self, cosine: f64, is_positive: bool) -> f64 {
        relaxed_sim(cosine, is_positive, self)
    }

    fn derivative(&self, cosine: f64, is_positive: bool) -> f64 {
        one_sided_derivative(cosine, is_positive, self)
    }
}

/// Paired image-side (`u`) and text-side (`v`) embeddings; `(u[i], v[i])`
/// is the positive pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEmbeddings {
    u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl BatchEmbeddings {
    /// Validates counts, dimensions and unit norms (within 1e-6).
    pub fn new(u: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> Result<Self, LossError> {
        let batch = Self::from_raw(u, v)?;
        for (index, x) in batch.u.iter().chain(&batch.v).enumerate() {
            let norm = dot(x, x).sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(LossError::NotUnit { index, norm });
            }
        }
        Ok(batch)
    }

    /// Checks counts and dimensions only. Vectors are treated as given, which
    /// is what perturbation-based gradient checks need.
    pub fn from_raw(u: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> Result<Self, LossError> {
        if u.len() != v.len() {
            return Err(LossError::CountMismatch { u: u.len(), v: v.len() });
        }
        if let Some(first) = u.first() {
            let expected = first.len();
            for (index, x) in u.iter().chain(&v).enumerate() {
                if x.len() != expected {
                    return Err(LossError::Dimension {
                        index,
                        expected,
                        got: x.len(),
                    });
                }
            }
        }
        Ok(Self { u, v })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn u(&self) -> &[Vec<f64>] {
        &self.u
    }

    pub fn v(&self) -> &[Vec<f64>] {
        &self.v
    }
}

/// Loss value and its exact gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// `dL/du_i`.
    pub grad_u: Vec<Vec<f64>>,
    /// `dL/dv_i`.
    pub grad_v: Vec<Vec<f64>>,
    /// `dL/dc_ij` for the raw cosine matrix, row-major `N x N`.
    pub grad_cosine: Vec<f64>,
    /// `dL/dtau`.
    pub grad_tau: f64,
    /// `dL/d(log tau)`, i.e. `tau * grad_tau`.
    pub grad_log_tau: f64,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Symmetric InfoNCE over a batch, with `sim` applied to every `(i, j)`
/// cosine: image-to-text and text-to-image cross-entropies averaged with
/// weight `1 / (2N)`.
#[allow(clippy::needless_range_loop)]
pub fn info_nce_loss<S: Similarity + ?Sized>(
    batch: &BatchEmbeddings,
    tau: f64,
    sim: &S,
) -> Result<LossOutput, LossError> {
    let n = batch.len();
    if n == 0 {
        return Err(LossError::DegenerateBatch);
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(LossError::BadTemperature(tau));
    }
    let (u, v) = (batch.u(), batch.v());

    let mut raw = vec![0.0; n * n];
    let mut logits = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let c = dot(&u[i], &v[j]);
            raw[i * n + j] = c;
            logits[i * n + j] = sim.value(c.clamp(-1.0, 1.0), i == j) / tau;
        }
    }

    let row_lse: Vec<f64> = (0..n)
        .map(|i| log_sum_exp(logits[i * n..(i + 1) * n].iter().copied()))
        .collect();
    let col_lse: Vec<f64> = (0..n).map(|j| log_sum_exp((0..n).map(|i| logits[i * n + j]))).collect();

    let mut total = 0.0;
    for i in 0..n {
        total += row_lse[i] - logits[i * n + i];
    }
    for j in 0..n {
        total += col_lse[j] - logits[j * n + j];
    }
    let scale = 1.0 / (2.0 * n as f64);
    let loss = total * scale;

    // dL/dlogit_ij = (P_row_ij + P_col_ij - 2 [i == j]) / (2N)
    let mut grad_cosine = vec![0.0; n * n];
    let mut d_tau_acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            let p_row = (logits[k] - row_lse[i]).exp();
            let p_col = (logits[k] - col_lse[j]).exp();
            let target = if i == j { 2.0 } else { 0.0 };
            let g_logit = (p_row + p_col - target) * scale;
            // logit = s / tau
            d_tau_acc += g_logit * logits[k];
            let c = raw[k];
            grad_cosine[k] = if (-1.0..=1.0).contains(&c) {
                g_logit / tau * sim.derivative(c, i == j)
            } else {
                0.0
            };
        }
    }
    let grad_tau = -d_tau_acc / tau;

    let dim = u[0].len();
    let mut grad_u = vec![vec![0.0; dim]; n];
    let mut grad_v = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for j in 0..n {
            let g = grad_cosine[i * n + j];
            if g == 0.0 {
                continue;
            }
            for d in 0..dim {
                grad_u[i][d] += g * v[j][d];
                grad_v[j][d] += g * u[i][d];
            }
        }
    }

    Ok(LossOutput {
        loss,
        grad_u,
        grad_v,
        grad_cosine,
        grad_tau,
        grad_log_tau: grad_tau * tau,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    const CFG: SimConfig = SimConfig {
        t: 0.5,
        alpha: 10.0,
        enabled: true,
    };

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = dot(&v, &v).sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> BatchEmbeddings {
        let u: Vec<Vec<f64>> = (0..n)
            .map(|_| unit((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let v = u
            .iter()
            .map(|ui| {
                let noise = rng.random_range(0.1..2.0);
                unit(ui.iter().map(|x| x + noise * rng.random_range(-1.0..1.0)).collect())
            })
            .collect();
        BatchEmbeddings::new(u, v).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let e1 = [1.0, 0.0];
        let e2 = [0.0, 1.0];
        let h = [0.5f64.sqrt(), 0.5f64.sqrt()];
        assert_eq!(cosine_similarity(&e1, &e1), 1.0);
        assert_eq!(cosine_similarity(&e1, &e2), 0.0);
        assert!((cosine_similarity(&e1, &h) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-5);
        assert_eq!(cosine_similarity(&[1.0 + 1e-12], &[1.0]), 1.0);
    }

    #[test]
    fn relaxed_sim_examples() {
        assert_eq!(relaxed_sim(0.3, false, &CFG), 0.3);
        assert_eq!(relaxed_sim(0.5, true, &CFG), 0.5);
        assert!((relaxed_sim(0.8, true, &CFG) - 0.952574).abs() < 1e-5);
        assert_eq!(relaxed_sim(0.25, true, &CFG), 0.25);
        assert_eq!(relaxed_sim(-0.4, true, &CFG), -0.4);
        assert_eq!(relaxed_sim(0.8, true, &SimConfig::disabled()), 0.8);
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(relaxed_sim_derivative(0.7, false, &CFG).unwrap(), 1.0);
        assert_eq!(relaxed_sim_derivative(0.25, true, &CFG).unwrap(), 1.0);
        assert!((relaxed_sim_derivative(1.0, true, &CFG).unwrap() - 0.06648).abs() < 1e-4);
        assert_eq!(relaxed_sim_derivative(-0.2, true, &CFG).unwrap(), 1.0);
        let t3 = SimConfig { t: 0.3, ..CFG };
        assert!((relaxed_sim_derivative(0.1, true, &t3).unwrap() - 1.0 / 0.6).abs() < 1e-15);
    }

    #[test]
    fn derivative_errors_on_knots() {
        assert_eq!(relaxed_sim_derivative(0.5, true, &CFG), Err(LossError::KnotPoint(0.5)));
        assert!(relaxed_sim_derivative(0.0, true, &CFG).is_err());
        assert!(relaxed_sim_derivative(0.0, false, &CFG).is_ok());
        assert_eq!(one_sided_derivative(0.5, true, &CFG), 10.0 * 0.25);
        assert_eq!(one_sided_derivative(0.0, true, &CFG), 1.0);
    }

    #[test]
    fn config_validation() {
        CFG.validate().unwrap();
        assert!(SimConfig { t: 0.0, ..CFG }.validate().is_err());
        assert!(SimConfig { t: 1.0, ..CFG }.validate().is_err());
        assert!(SimConfig { alpha: 0.0, ..CFG }.validate().is_err());
    }

    #[test]
    fn single_pair_has_zero_loss() {
        let b = BatchEmbeddings::new(vec![vec![1.0, 0.0]], vec![unit(vec![1.0, 1.0])]).unwrap();
        let out = info_nce_loss(&b, 0.07, &CFG).unwrap();
        assert!(out.loss.abs() < 1e-15);
    }

    #[test]
    fn two_pair_example() {
        let e = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let b = BatchEmbeddings::new(e.clone(), e).unwrap();
        let out = info_nce_loss(&b, 1.0, &CFG).unwrap();
        // -log(e^s / (e^s + 1)) with s = sigmoid(5)
        let s = 1.0 / (1.0 + (-5f64).exp());
        let expected = (1.0 + (-s).exp()).ln();
        // Independent scalar evaluation gives 0.3150661.
        assert!((expected - 0.3150661).abs() < 1e-7);
        assert!((out.loss - expected).abs() < 1e-12);
    }

    #[test]
    fn input_errors() {
        let empty = BatchEmbeddings::new(vec![], vec![]).unwrap();
        assert_eq!(info_nce_loss(&empty, 1.0, &CFG), Err(LossError::DegenerateBatch));
        assert!(matches!(
            BatchEmbeddings::new(vec![vec![1.0]], vec![]),
            Err(LossError::CountMismatch { .. })
        ));
        assert!(matches!(
            BatchEmbeddings::new(vec![vec![2.0]], vec![vec![1.0]]),
            Err(LossError::NotUnit { .. })
        ));
        let b = BatchEmbeddings::new(vec![vec![1.0]], vec![vec![1.0]]).unwrap();
        assert!(info_nce_loss(&b, 0.0, &CFG).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for cfg in [CFG, SimConfig::disabled()] {
            for _ in 0..5 {
                let b = random_batch(&mut rng, 5, 4);
                let tau = 0.3;
                let out = info_nce_loss(&b, tau, &cfg).unwrap();
                let f = |u: &[Vec<f64>], v: &[Vec<f64>], tau: f64| {
                    let b = BatchEmbeddings::from_raw(u.to_vec(), v.to_vec()).unwrap();
                    info_nce_loss(&b, tau, &cfg).unwrap().loss
                };
                for i in 0..5 {
                    for d in 0..4 {
                        let mut up = b.u().to_vec();
                        let mut um = b.u().to_vec();
                        up[i][d] += h;
                        um[i][d] -= h;
                        let num = (f(&up, b.v(), tau) - f(&um, b.v(), tau)) / (2.0 * h);
                        assert!((num - out.grad_u[i][d]).abs() < 1e-6);
                        let mut vp = b.v().to_vec();
                        let mut vm = b.v().to_vec();
                        vp[i][d] += h;
                        vm[i][d] -= h;
                        let num = (f(b.u(), &vp, tau) - f(b.u(), &vm, tau)) / (2.0 * h);
                        assert!((num - out.grad_v[i][d]).abs() < 1e-6);
                    }
                }
                let num = (f(b.u(), b.v(), tau + h) - f(b.u(), b.v(), tau - h)) / (2.0 * h);
                assert!((num - out.grad_tau).abs() < 1e-6);
                assert!((out.grad_log_tau - tau * out.grad_tau).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn saturated_positive_gets_smaller_gradient() {
        let e = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let b = BatchEmbeddings::new(e.clone(), e).unwrap();
        let relaxed = info_nce_loss(&b, 1.0, &CFG).unwrap();
        let plain = info_nce_loss(&b, 1.0, &SimConfig::disabled()).unwrap();
        assert!(relaxed.grad_cosine[0].abs() < plain.grad_cosine[0].abs());
    }

    fn random_rotation(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
        // Gram-Schmidt on a random square matrix.
        let mut q: Vec<Vec<f64>> = Vec::new();
        while q.len() < d {
            let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            for b in &q {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
            let n = dot(&v, &v).sqrt();
            if n > 1e-6 {
                q.push(v.into_iter().map(|x| x / n).collect());
            }
        }
        q
    }

    fn rotate(r: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        r.iter().map(|row| dot(row, x)).collect()
    }

    proptest! {
        #[test]
        fn value_continuity_at_knots(t in 0.01f64..0.99, alpha in 0.1f64..50.0) {
            let cfg = SimConfig { t, alpha, enabled: true };
            let eps = 1e-8;
            prop_assert!((relaxed_sim(t - eps, true, &cfg) - relaxed_sim(t + eps, true, &cfg)).abs() < 1e-6);
            prop_assert!((relaxed_sim(-eps, true, &cfg) - relaxed_sim(eps, true, &cfg)).abs() < 1e-6);
        }

        #[test]
        fn monotone_and_bounded(t in 0.01f64..0.99, alpha in 0.1f64..50.0, a in -1.0f64..=1.0, b in -1.0f64..=1.0) {
            let cfg = SimConfig { t, alpha, enabled: true };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(relaxed_sim(lo, true, &cfg) <= relaxed_sim(hi, true, &cfg));
            if hi >= t {
                let s = relaxed_sim(hi, true, &cfg);
                prop_assert!((0.5..=1.0).contains(&s));
            }
        }

        #[test]
        fn permutation_equivariance(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = random_batch(&mut rng, 6, 5);
            let mut perm: Vec<usize> = (0..6).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            let pu = perm.iter().map(|&i| b.u()[i].clone()).collect();
            let pv = perm.iter().map(|&i| b.v()[i].clone()).collect();
            let pb = BatchEmbeddings::new(pu, pv).unwrap();
            let out = info_nce_loss(&b, 0.2, &CFG).unwrap();
            let pout = info_nce_loss(&pb, 0.2, &CFG).unwrap();
            prop_assert!((out.loss - pout.loss).abs() < 1e-12);
            for (k, &i) in perm.iter().enumerate() {
                for d in 0..5 {
                    prop_assert!((out.grad_u[i][d] - pout.grad_u[k][d]).abs() < 1e-12);
                    prop_assert!((out.grad_v[i][d] - pout.grad_v[k][d]).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn rotation_invariance(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = random_batch(&mut rng, 5, 4);
            let r = random_rotation(&mut rng, 4);
            let rb = BatchEmbeddings::new(
                b.u().iter().map(|x| rotate(&r, x)).collect(),
                b.v().iter().map(|x| rotate(&r, x)).collect(),
            ).unwrap();
            let a = info_nce_loss(&b, 0.1, &CFG).unwrap().loss;
            let c = info_nce_loss(&rb, 0.1, &CFG).unwrap().loss;
            prop_assert!((a - c).abs() < 1e-10);
        }
    }
}
