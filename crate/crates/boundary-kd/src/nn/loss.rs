//! Cross-entropy and distillation losses with analytic gradients.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::Element;
use crate::error::{Error, Result};
use crate::oracle::ClassLabel;

/// Divergence used against the softened teacher distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SoftLossKind {
    /// KL(teacher || student), the value reported by default.
    #[default]
    Kl,
    /// Cross-entropy against the soft targets; same gradient, value differs
    /// by the teacher entropy.
    CrossEntropy,
}

#[derive(Debug, Clone, Copy)]
pub struct KdLossConfig {
    pub temperature: f64,
    pub lambda: f64,
    pub kind: SoftLossKind,
    /// Scale the soft term by tau^2 so gradients stay comparable across
    /// temperatures.
    pub tau_squared: bool,
}

impl Default for KdLossConfig {
    fn default() -> Self {
        KdLossConfig {
            temperature: 0.3,
            lambda: 1.0,
            kind: SoftLossKind::Kl,
            tau_squared: true,
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<F: Element>(acts: &Array2<F>) -> Array2<F> {
    let mut out = acts.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Row-wise log-softmax, numerically stable.
fn log_softmax_rows<F: Element>(acts: &Array2<F>) -> Array2<F> {
    let mut out = acts.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let sum: f64 = row.iter().map(|&v| (v - max).to_f64().exp()).sum();
        let lse = max + F::from_f64(sum.ln());
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Combined objective: cross-entropy against hard labels plus `lambda` times
/// the softened divergence against the teacher distribution.
///
/// `teacher` rows are probabilities (already softened); `None` reduces to
/// plain cross-entropy. Returns the batch-mean loss (64-bit accumulation)
/// and its gradient with respect to the pre-softmax activations.
pub fn kd_loss<F: Element>(
    acts: &Array2<F>,
    teacher: Option<&Array2<F>>,
    hard: &[ClassLabel],
    cfg: &KdLossConfig,
) -> Result<(f64, Array2<F>)> {
    let (n, l) = acts.dim();
    if hard.len() != n {
        return Err(Error::CountMismatch {
            left: "hard labels",
            left_count: hard.len(),
            right: "activation rows",
            right_count: n,
        });
    }
    if let Some(t) = teacher {
        if t.dim() != (n, l) {
            return Err(Error::CountMismatch {
                left: "teacher rows",
                left_count: t.dim().0,
                right: "activation rows",
                right_count: n,
            });
        }
    }
    if cfg.temperature <= 0.0 {
        return Err(Error::InvalidConfig("temperature must be positive".into()));
    }
    if cfg.lambda < 0.0 {
        return Err(Error::InvalidConfig("lambda must be non-negative".into()));
    }
    if n == 0 {
        return Ok((0.0, Array2::zeros((0, l))));
    }

    let inv_n = 1.0 / n as f64;
    let log_p = log_softmax_rows(acts);
    let mut grad = log_p.mapv(|v| v.exp()); // softmax(acts)
    let mut loss = 0.0f64;
    for (i, &y) in hard.iter().enumerate() {
        if y.0 >= l {
            return Err(Error::ClassOutOfRange {
                class: y.0,
                count: l,
            });
        }
        loss -= log_p[[i, y.0]].to_f64() * inv_n;
        grad[[i, y.0]] = grad[[i, y.0]] - F::one();
    }
    grad.mapv_inplace(|v| v * F::from_f64(inv_n));

    if let Some(teacher_p) = teacher {
        if cfg.lambda > 0.0 {
            let tau = cfg.temperature;
            let scale = cfg.lambda * if cfg.tau_squared { tau * tau } else { 1.0 };
            let scaled = acts.mapv(|v| v / F::from_f64(tau));
            let log_q = log_softmax_rows(&scaled);
            let mut soft = 0.0f64;
            for i in 0..n {
                for j in 0..l {
                    let p = teacher_p[[i, j]].to_f64();
                    if p > 0.0 {
                        soft -= p * log_q[[i, j]].to_f64();
                        if matches!(cfg.kind, SoftLossKind::Kl) {
                            soft += p * p.ln();
                        }
                    }
                }
            }
            loss += scale * soft * inv_n;
            let g_scale = F::from_f64(scale * inv_n / tau);
            let q = log_q.mapv(|v| v.exp());
            grad = grad + (q - teacher_p).mapv(|v| v * g_scale);
        }
    }

    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_rows_sum_to_one() {
        let acts = array![[1.0f64, 2.0, 3.0], [-10.0, 0.0, 10.0]];
        let p = softmax_rows(&acts);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matching_teacher_leaves_only_cross_entropy() {
        let acts = array![[0.4f64, -0.3, 1.1]];
        let cfg = KdLossConfig {
            temperature: 0.7,
            lambda: 1.0,
            ..KdLossConfig::default()
        };
        let scaled = acts.mapv(|v| v / 0.7);
        let teacher = softmax_rows(&scaled);
        let y = [ClassLabel(2)];
        let (with_kd, _) = kd_loss(&acts, Some(&teacher), &y, &cfg).unwrap();
        let (ce_only, _) = kd_loss(&acts, None, &y, &cfg).unwrap();
        assert!(
            (with_kd - ce_only).abs() < 1e-12,
            "kd term should vanish: {with_kd} vs {ce_only}"
        );
    }

    #[test]
    fn lambda_zero_is_pure_cross_entropy() {
        let acts = array![[0.4f64, -0.3, 1.1], [2.0, 0.0, -1.0]];
        let teacher = array![[0.2f64, 0.5, 0.3], [0.6, 0.3, 0.1]];
        let y = [ClassLabel(2), ClassLabel(0)];
        let cfg = KdLossConfig {
            lambda: 0.0,
            ..KdLossConfig::default()
        };
        let (a, ga) = kd_loss(&acts, Some(&teacher), &y, &cfg).unwrap();
        let (b, gb) = kd_loss(&acts, None, &y, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
    }

    #[test]
    fn empty_batch_is_fine() {
        let acts = Array2::<f64>::zeros((0, 4));
        let (loss, grad) = kd_loss(&acts, None, &[], &KdLossConfig::default()).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad.dim(), (0, 4));
    }

    #[test]
    fn ce_of_true_one_hot_is_non_negative() {
        let acts = array![[5.0f64, -5.0]];
        let (loss, _) = kd_loss(&acts, None, &[ClassLabel(0)], &KdLossConfig::default()).unwrap();
        assert!(loss >= 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut acts = array![[0.3f64, -0.7, 0.9, 0.1], [1.5, 0.2, -0.4, 0.0]];
        let teacher = array![[0.1f64, 0.2, 0.6, 0.1], [0.7, 0.1, 0.1, 0.1]];
        let y = [ClassLabel(2), ClassLabel(0)];
        let cfg = KdLossConfig {
            temperature: 0.3,
            lambda: 1.3,
            kind: SoftLossKind::Kl,
            tau_squared: true,
        };
        let (_, grad) = kd_loss(&acts, Some(&teacher), &y, &cfg).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..4 {
                let orig = acts[[i, j]];
                acts[[i, j]] = orig + h;
                let (up, _) = kd_loss(&acts, Some(&teacher), &y, &cfg).unwrap();
                acts[[i, j]] = orig - h;
                let (down, _) = kd_loss(&acts, Some(&teacher), &y, &cfg).unwrap();
                acts[[i, j]] = orig;
                let fd = (up - down) / (2.0 * h);
                let rel = (grad[[i, j]] - fd).abs() / fd.abs().max(1e-8);
                assert!(rel < 1e-4, "grad[{i},{j}] = {} vs fd {fd}", grad[[i, j]]);
            }
        }
    }
}
