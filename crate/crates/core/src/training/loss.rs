use ndarray::Array1;

use crate::error::{Error, Result};

/// Softmax with max subtraction.
pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = logits.mapv(|v| (v - max).exp());
    let total = e.sum();
    e / total
}

/// `-log softmax(logits)[label]` through log-sum-exp.
pub fn cross_entropy(logits: &Array1<f64>, label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::Label {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[label])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_logits_45_classes() {
        let l = cross_entropy(&Array1::zeros(45), 7).unwrap();
        assert!((l - 45f64.ln()).abs() < 1e-12);
        assert!((l - 3.80666).abs() < 1e-5);
    }

    #[test]
    fn single_class_is_zero() {
        assert_eq!(cross_entropy(&array![3.7], 0).unwrap(), 0.0);
    }

    #[test]
    fn matches_naive() {
        let logits = array![0.3, -1.2, 2.5, 0.0, 1.1];
        let total: f64 = logits.iter().map(|v: &f64| v.exp()).sum();
        for k in 0..5 {
            let naive = -(logits[k].exp() / total).ln();
            assert!((cross_entropy(&logits, k).unwrap() - naive).abs() < 1e-12);
        }
        let p = softmax(&logits);
        assert!((p.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(
            cross_entropy(&array![0.0, 1.0], 2),
            Err(Error::Label { label: 2, classes: 2 })
        ));
    }
}
