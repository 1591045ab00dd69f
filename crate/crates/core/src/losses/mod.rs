//! Contrastive loss over paired views, pseudo-label cross-entropies and
//! their unweighted sum, each with its gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How far a projection's norm may stray from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// `2N` projections where rows `2k` and `2k + 1` are the two views of video `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    z: Vec<Vec<f64>>,
    tau: f64,
}

impl EmbeddingBatch {
    pub fn new(z: Vec<Vec<f64>>, tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidLossInput(format!("temperature must be positive, got {tau}")));
        }
        if z.is_empty() || z.len() % 2 != 0 {
            return Err(Error::InvalidLossInput(format!("need an even, non-zero number of views, got {}", z.len())));
        }
        let dim = z[0].len();
        for (i, row) in z.iter().enumerate() {
            if row.len() != dim || dim == 0 {
                return Err(Error::InvalidLossInput(format!("view {i} has length {}, expected {dim}", row.len())));
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !((norm - 1.0).abs() <= UNIT_NORM_TOLERANCE) {
                return Err(Error::InvalidLossInput(format!("view {i} has norm {norm}, expected 1")));
            }
        }
        Ok(Self { z, tau })
    }

    pub fn z(&self) -> &[Vec<f64>] {
        &self.z
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_videos(&self) -> usize {
        self.z.len() / 2
    }
}

/// Index of the other view of the same video.
pub fn partner(i: usize) -> usize {
    i ^ 1
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Log-sum-exp with max subtraction.
fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean over all `2N` anchors of
/// `-log(exp(sim(i, partner) / tau) / sum_{k != i} exp(sim(i, k) / tau))`,
/// with cosine similarity clipped to `[-1, 1]`.
pub fn contrastive_loss(batch: &EmbeddingBatch) -> f64 {
    contrastive_loss_with_grad(batch).0
}

/// Loss and its gradient w.r.t. each (normalised) projection.
pub fn contrastive_loss_with_grad(batch: &EmbeddingBatch) -> (f64, Vec<Vec<f64>>) {
    let z = &batch.z;
    let n = z.len();
    let tau = batch.tau;
    let sim: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|k| dot(&z[i], &z[k])).collect()).collect();
    let logit = |i: usize, k: usize| sim[i][k].clamp(-1.0, 1.0) / tau;
    // d logit / d dot is zero where the clip is active.
    let slope = |i: usize, k: usize| if sim[i][k].abs() <= 1.0 { 1.0 / tau } else { 0.0 };

    let mut loss = 0.0;
    let mut grad = vec![vec![0.0; z[0].len()]; n];
    let scale = 1.0 / n as f64;
    for i in 0..n {
        let others = (0..n).filter(move |&k| k != i);
        let lse = log_sum_exp(others.clone().map(|k| logit(i, k)));
        loss += lse - logit(i, partner(i));
        for k in others {
            let weight = (logit(i, k) - lse).exp() - if k == partner(i) { 1.0 } else { 0.0 };
            let coeff = scale * weight * slope(i, k);
            for d in 0..z[0].len() {
                grad[i][d] += coeff * z[k][d];
                grad[k][d] += coeff * z[i][d];
            }
        }
    }
    (loss * scale, grad)
}

/// Per-view pseudo-label logits with their 0-based targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelBatch {
    pub roi_logits: Vec<Vec<f64>>,
    pub stride_logits: Vec<Vec<f64>>,
    pub roi_targets: Vec<usize>,
    pub stride_targets: Vec<usize>,
}

impl PseudoLabelBatch {
    pub fn validate(&self) -> Result<()> {
        let n = self.roi_targets.len();
        if n == 0 || self.stride_targets.len() != n || self.roi_logits.len() != n || self.stride_logits.len() != n {
            return Err(Error::InvalidLossInput("pseudo-label batch needs one non-empty row per view".into()));
        }
        Ok(())
    }
}

/// Mean softmax cross-entropy of `logits` rows against class indices.
pub fn cross_entropy(logits: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
    cross_entropy_with_grad(logits, targets).map(|(loss, _)| loss)
}

/// Cross-entropy and its gradient w.r.t. the logits.
pub fn cross_entropy_with_grad(logits: &[Vec<f64>], targets: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.is_empty() || logits.len() != targets.len() {
        return Err(Error::InvalidLossInput(format!("{} logit rows for {} targets", logits.len(), targets.len())));
    }
    let classes = logits[0].len();
    let scale = 1.0 / logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (index, (row, &target)) in logits.iter().zip(targets).enumerate() {
        if row.len() != classes || classes == 0 {
            return Err(Error::InvalidLossInput(format!("logit row {index} has length {}, expected {classes}", row.len())));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidLossInput(format!("logit row {index} is not finite")));
        }
        if target >= classes {
            return Err(Error::TargetOutOfRange { index: target, classes });
        }
        let lse = log_sum_exp(row.iter().copied());
        loss += lse - row[target];
        grad.push(
            row.iter()
                .enumerate()
                .map(|(c, &v)| scale * ((v - lse).exp() - if c == target { 1.0 } else { 0.0 }))
                .collect(),
        );
    }
    Ok((loss * scale, grad))
}

pub fn roi_ce(batch: &PseudoLabelBatch) -> Result<f64> {
    batch.validate()?;
    cross_entropy(&batch.roi_logits, &batch.roi_targets)
}

pub fn stride_ce(batch: &PseudoLabelBatch) -> Result<f64> {
    batch.validate()?;
    cross_entropy(&batch.stride_logits, &batch.stride_targets)
}

/// Unweighted sum of the three terms.
pub fn combined_loss(contrastive: f64, roi: f64, stride: f64) -> f64 {
    contrastive + roi + stride
}

/// The three loss terms of one step and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub contrastive: f64,
    pub roi: f64,
    pub stride: f64,
    pub total: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(i: usize, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn single_pair_has_zero_loss() {
        for tau in [0.1, 1.0, 7.0] {
            let b = EmbeddingBatch::new(vec![e(0, 3), e(1, 3)], tau).unwrap();
            assert!(contrastive_loss(&b).abs() < 1e-15);
        }
    }

    #[test]
    fn aligned_pairs_orthogonal_negatives() {
        let b = EmbeddingBatch::new(vec![e(0, 2), e(0, 2), e(1, 2), e(1, 2)], 1.0).unwrap();
        let expected = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
        assert!((contrastive_loss(&b) - expected).abs() < 1e-12);
        assert!((expected - 0.5514).abs() < 1e-3);
    }

    #[test]
    fn invalid_batches_rejected() {
        assert!(EmbeddingBatch::new(vec![e(0, 2), e(1, 2)], 0.0).is_err());
        assert!(EmbeddingBatch::new(vec![e(0, 2)], 1.0).is_err());
        assert!(EmbeddingBatch::new(vec![e(0, 2), vec![2.0, 0.0]], 1.0).is_err());
        assert!(matches!(cross_entropy(&[vec![0.0; 7]], &[7]), Err(Error::TargetOutOfRange { index: 7, classes: 7 })));
    }

    #[test]
    fn cross_entropy_reference_values() {
        assert!((cross_entropy(&[vec![0.0; 7]], &[3]).unwrap() - 7f64.ln()).abs() < 1e-12);
        let mut row = vec![0.0; 5];
        row[2] = 20.0;
        assert!(cross_entropy(&[row], &[2]).unwrap() < 1e-8);
        assert!((combined_loss(0.553, 1.946, 1.609) - 4.108).abs() < 1e-12);
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z: Vec<Vec<f64>> = (0..6).map(|_| random_unit(&mut rng, 4)).collect();
        let tau = 0.5;
        let (_, grad) = contrastive_loss_with_grad(&EmbeddingBatch::new(z.clone(), tau).unwrap());
        // The loss is a function of raw dot products, so perturb without renormalising.
        let raw = |z: &[Vec<f64>]| {
            let b = EmbeddingBatch { z: z.to_vec(), tau };
            contrastive_loss(&b)
        };
        let eps = 1e-6;
        for i in 0..6 {
            for d in 0..4 {
                let mut zp = z.clone();
                zp[i][d] += eps;
                let mut zm = z.clone();
                zm[i][d] -= eps;
                let numeric = (raw(&zp) - raw(&zm)) / (2.0 * eps);
                assert!((numeric - grad[i][d]).abs() < 1e-8, "{i},{d}: {numeric} vs {}", grad[i][d]);
            }
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits: Vec<Vec<f64>> = (0..4).map(|_| (0..5).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let targets = [0, 4, 2, 2];
        let (_, grad) = cross_entropy_with_grad(&logits, &targets).unwrap();
        let eps = 1e-6;
        for r in 0..4 {
            for c in 0..5 {
                let mut lp = logits.clone();
                lp[r][c] += eps;
                let mut lm = logits.clone();
                lm[r][c] -= eps;
                let numeric = (cross_entropy(&lp, &targets).unwrap() - cross_entropy(&lm, &targets).unwrap()) / (2.0 * eps);
                assert!((numeric - grad[r][c]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn temperature_keeps_partner_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z: Vec<Vec<f64>> = (0..8).map(|_| random_unit(&mut rng, 5)).collect();
        let a = contrastive_loss(&EmbeddingBatch::new(z.clone(), 1.0).unwrap());
        let b = contrastive_loss(&EmbeddingBatch::new(z.clone(), 2.0).unwrap());
        assert_ne!(a, b);
        let best = |i: usize| (0..8).filter(|&k| k != i).max_by(|&x, &y| dot(&z[i], &z[x]).total_cmp(&dot(&z[i], &z[y]))).unwrap();
        let best_scaled = |i: usize, tau: f64| (0..8).filter(|&k| k != i).max_by(|&x, &y| (dot(&z[i], &z[x]) / tau).total_cmp(&(dot(&z[i], &z[y]) / tau))).unwrap();
        for i in 0..8 {
            assert_eq!(best(i), best_scaled(i, 2.0));
        }
    }
}
