//! Class-frequency weighted cross-entropy and the IoU metric family.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ops, Tensor4};

/// Default smoothing constant; keeps `ln(f + ε)` positive for every frequency.
pub const DEFAULT_EPSILON: f64 = 1.02;

/// Inverse log-frequency class weights, `w_c = 1 / ln(f_c + ε)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
    pub epsilon: f64,
}

impl ClassWeights {
    pub fn uniform(classes: usize) -> Self {
        Self {
            weights: vec![1.0; classes],
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn classes(&self) -> usize {
        self.weights.len()
    }

    /// Weights rescaled to sum to one.
    pub fn normalized(&self) -> Vec<f64> {
        let s: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / s).collect()
    }
}

pub fn class_weights(pixel_areas: &[u64], epsilon: f64) -> Result<ClassWeights> {
    let total: u64 = pixel_areas.iter().sum();
    if total == 0 {
        return Err(Error::ZeroArea);
    }
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let weights: Vec<f64> = pixel_areas
        .iter()
        .map(|&a| 1.0 / (a as f64 / total as f64 + epsilon).ln())
        .collect();
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::Config(format!(
            "epsilon {epsilon} yields non-positive class weights"
        )));
    }
    Ok(ClassWeights { weights, epsilon })
}

/// Mean over pixels of `−w_y · ln p_y` for `C×H×W` logits (batch 1 or more)
/// and row-major labels.
pub fn weighted_cross_entropy(logits: &Tensor4, labels: &[u8], w: &ClassWeights) -> Result<f64> {
    ops::weighted_cross_entropy(logits, labels, &w.weights)
}

/// Gradient of [`weighted_cross_entropy`] with respect to the logits.
pub fn weighted_cross_entropy_grad(logits: &Tensor4, labels: &[u8], w: &ClassWeights) -> Result<Tensor4> {
    ops::weighted_cross_entropy_backward(logits, labels, &w.weights, 1.0)
}

/// `C×C` confusion counts; rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(Self {
            classes: c,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, truth: &[u8], pred: &[u8]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::Shape("label/prediction length mismatch".into()));
        }
        for (&t, &p) in truth.iter().zip(pred) {
            let (t, p) = (t as usize, p as usize);
            if t >= self.classes || p >= self.classes {
                return Err(Error::LabelOutOfRange {
                    label: t.max(p),
                    classes: self.classes,
                });
            }
            self.counts[t * self.classes + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Shape("merging confusion matrices of different sizes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Ground-truth pixel count per class.
    pub fn truth_areas(&self) -> Vec<u64> {
        (0..self.classes)
            .map(|t| (0..self.classes).map(|p| self.get(t, p)).sum())
            .collect()
    }
}

/// IoU summary in percent. Classes absent from both ground truth and
/// prediction have undefined IoU (`None`) and are left out of both means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub wiou: f64,
    pub pixel_counts: Vec<u64>,
    pub weights: Vec<f64>,
    pub epsilon: f64,
}

/// Per-class IoU, mIoU and weighted IoU. When `weights` is `None` the class
/// weights are derived from the matrix's ground-truth areas.
pub fn iou_from_confusion(cm: &ConfusionMatrix, weights: Option<&ClassWeights>) -> Result<IouReport> {
    let c = cm.classes;
    let areas = cm.truth_areas();
    let w = match weights {
        Some(w) if w.classes() == c => w.clone(),
        Some(w) => {
            return Err(Error::Shape(format!(
                "{} class weights for {c} classes",
                w.classes()
            )))
        }
        None => class_weights(&areas, DEFAULT_EPSILON)?,
    };
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let tp = cm.get(k, k);
            let fp: u64 = (0..c).filter(|&t| t != k).map(|t| cm.get(t, k)).sum();
            let fneg: u64 = (0..c).filter(|&p| p != k).map(|p| cm.get(k, p)).sum();
            let denom = tp + fp + fneg;
            (denom > 0).then(|| 100.0 * tp as f64 / denom as f64)
        })
        .collect();
    let defined: Vec<(usize, f64)> = per_class
        .iter()
        .enumerate()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect();
    let (miou, wiou) = if defined.is_empty() {
        (0.0, 0.0)
    } else {
        let miou = defined.iter().map(|(_, v)| v).sum::<f64>() / defined.len() as f64;
        let wsum: f64 = defined.iter().map(|(k, _)| w.weights[*k]).sum();
        let wiou = defined.iter().map(|(k, v)| w.weights[*k] * v).sum::<f64>() / wsum;
        (miou, wiou)
    };
    Ok(IouReport {
        per_class_iou: per_class,
        miou,
        wiou,
        pixel_counts: areas,
        weights: w.normalized(),
        epsilon: w.epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check_fn, GradCheckOptions};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weights_for_equal_areas() {
        let w = class_weights(&[500, 500], 1.02).unwrap();
        // 1 / ln(0.5 + 1.02)
        let expect = 1.0 / 1.52f64.ln();
        assert!((expect - 2.388).abs() < 1e-3);
        for v in &w.weights {
            assert!((v - expect).abs() < 1e-12);
        }
        let single = class_weights(&[42], 1.02).unwrap();
        assert!((single.weights[0] - 1.0 / 2.02f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rarer_class_gets_larger_weight() {
        for eps in [1.001, 1.02, 1.5, 3.0] {
            let w = class_weights(&[900, 90, 10], eps).unwrap();
            assert!(w.weights[0] < w.weights[1] && w.weights[1] < w.weights[2]);
            assert!(w.weights.iter().all(|&v| v > 0.0));
        }
        assert!(matches!(class_weights(&[0, 0], 1.02), Err(Error::ZeroArea)));
        // ε below one makes ln negative for small frequencies
        assert!(class_weights(&[1, 99], 0.5).is_err());
    }

    #[test]
    fn cross_entropy_identities() {
        let logits = Tensor4::zeros([1, 3, 4, 4]);
        let labels: Vec<u8> = (0..16).map(|i| (i % 3) as u8).collect();
        let l = weighted_cross_entropy(&logits, &labels, &ClassWeights::uniform(3)).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-9);

        let mut confident = Tensor4::zeros([1, 3, 4, 4]);
        for (p, &y) in labels.iter().enumerate() {
            confident.data_mut()[y as usize * 16 + p] = 60.0;
        }
        let l = weighted_cross_entropy(&confident, &labels, &ClassWeights::uniform(3)).unwrap();
        assert!(l >= 0.0 && l < 1e-20);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let random = Tensor4::from_fn([1, 3, 4, 4], |_| rng.gen_range(-2.0..2.0));
        let w = ClassWeights {
            weights: vec![0.3, 1.7, 2.2],
            epsilon: 1.02,
        };
        let w2 = ClassWeights {
            weights: w.weights.iter().map(|v| v * 2.0).collect(),
            epsilon: 1.02,
        };
        let a = weighted_cross_entropy(&random, &labels, &w).unwrap();
        let b = weighted_cross_entropy(&random, &labels, &w2).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12);
        assert!(a >= 0.0);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits = Tensor4::from_fn([1, 4, 3, 5], |_| rng.gen_range(-3.0..3.0));
        let labels: Vec<u8> = (0..15).map(|_| rng.gen_range(0..4)).collect();
        let w = class_weights(&[700, 200, 80, 20], 1.02).unwrap();
        let r = grad_check_fn(
            &[logits],
            &GradCheckOptions::default(),
            |x| weighted_cross_entropy(&x[0], &labels, &w),
            |x| Ok(vec![weighted_cross_entropy_grad(&x[0], &labels, &w)?]),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn iou_examples() {
        let diag = ConfusionMatrix::from_rows(&[vec![10, 0, 0], vec![0, 5, 0], vec![0, 0, 7]]).unwrap();
        let r = iou_from_confusion(&diag, None).unwrap();
        assert!(r.per_class_iou.iter().all(|v| *v == Some(100.0)));
        assert!((r.miou - 100.0).abs() < 1e-12 && (r.wiou - 100.0).abs() < 1e-12);

        let cm = ConfusionMatrix::from_rows(&[vec![50, 50], vec![0, 100]]).unwrap();
        let r = iou_from_confusion(&cm, None).unwrap();
        assert!((r.per_class_iou[0].unwrap() - 50.0).abs() < 1e-12);
        assert!((r.per_class_iou[1].unwrap() - 200.0 / 3.0).abs() < 1e-12);
        assert!((r.miou - 175.0 / 3.0).abs() < 1e-12);

        // 10% foreground predicted entirely as background
        let mut cm = ConfusionMatrix::new(2);
        let truth: Vec<u8> = (0..1000).map(|i| u8::from(i % 10 == 0)).collect();
        cm.accumulate(&truth, &vec![0; 1000]).unwrap();
        let r = iou_from_confusion(&cm, None).unwrap();
        assert_eq!(r.per_class_iou[1], Some(0.0));
        assert!((r.per_class_iou[0].unwrap() - 90.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_is_excluded() {
        let cm = ConfusionMatrix::from_rows(&[vec![5, 1, 0], vec![2, 8, 0], vec![0, 0, 0]]).unwrap();
        let r = iou_from_confusion(&cm, None).unwrap();
        assert_eq!(r.per_class_iou[2], None);
        let expect = (r.per_class_iou[0].unwrap() + r.per_class_iou[1].unwrap()) / 2.0;
        assert!((r.miou - expect).abs() < 1e-12);
    }

    #[test]
    fn wiou_equals_miou_for_equal_areas() {
        let cm = ConfusionMatrix::from_rows(&[vec![80, 20], vec![30, 70]]).unwrap();
        let r = iou_from_confusion(&cm, None).unwrap();
        assert!((r.wiou - r.miou).abs() < 1e-12);
    }

    #[test]
    fn accumulate_rejects_bad_labels() {
        let mut cm = ConfusionMatrix::new(2);
        assert!(cm.accumulate(&[0, 2], &[0, 0]).is_err());
        assert!(cm.accumulate(&[0], &[0, 0]).is_err());
    }

    fn matrix_strategy() -> impl Strategy<Value = Vec<Vec<u64>>> {
        (2usize..5).prop_flat_map(|c| prop::collection::vec(prop::collection::vec(0u64..50, c), c))
    }

    proptest! {
        #[test]
        fn permuting_classes_permutes_iou(rows in matrix_strategy(), rot in 1usize..4) {
            let c = rows.len();
            let perm: Vec<usize> = (0..c).map(|i| (i + rot) % c).collect();
            let mut permuted = vec![vec![0u64; c]; c];
            for t in 0..c {
                for p in 0..c {
                    permuted[perm[t]][perm[p]] = rows[t][p];
                }
            }
            let a = ConfusionMatrix::from_rows(&rows).unwrap();
            let b = ConfusionMatrix::from_rows(&permuted).unwrap();
            prop_assume!(a.total() > 0);
            let ra = iou_from_confusion(&a, None).unwrap();
            let rb = iou_from_confusion(&b, None).unwrap();
            for k in 0..c {
                prop_assert_eq!(ra.per_class_iou[k], rb.per_class_iou[perm[k]]);
            }
            prop_assert!((ra.miou - rb.miou).abs() < 1e-9);
            for v in ra.per_class_iou.iter().flatten() {
                prop_assert!((0.0..=100.0).contains(v));
            }
        }

        #[test]
        fn accumulation_is_order_independent(
            pairs in prop::collection::vec((0u8..3, 0u8..3), 1..200),
            split in 0usize..200,
        ) {
            let truth: Vec<u8> = pairs.iter().map(|p| p.0).collect();
            let pred: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            let mut whole = ConfusionMatrix::new(3);
            whole.accumulate(&truth, &pred).unwrap();
            let s = split.min(truth.len());
            let mut left = ConfusionMatrix::new(3);
            left.accumulate(&truth[s..], &pred[s..]).unwrap();
            let mut right = ConfusionMatrix::new(3);
            right.accumulate(&truth[..s], &pred[..s]).unwrap();
            left.merge(&right).unwrap();
            prop_assert_eq!(&left, &whole);
            prop_assert_eq!(whole.total(), truth.len() as u64);
        }
    }
}
