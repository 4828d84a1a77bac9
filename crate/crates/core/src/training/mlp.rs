use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};

/// `logits = w2 * relu(w1 * x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl MlpHead {
    /// Uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init<R: Rng>(features: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        let uniform = |rng: &mut R, rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
        };
        let w1 = uniform(rng, hidden, features);
        let w2 = uniform(rng, classes, hidden);
        MlpHead {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(classes),
        }
    }

    pub fn zeros(features: usize, hidden: usize, classes: usize) -> Self {
        MlpHead {
            w1: Array2::zeros((hidden, features)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((classes, hidden)),
            b2: Array1::zeros(classes),
        }
    }

    pub fn feature_len(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn classes(&self) -> usize {
        self.w2.nrows()
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn check(&self) -> Result<()> {
        let h = self.hidden();
        if self.b1.len() != h || self.w2.ncols() != h || self.b2.len() != self.classes() {
            return Err(Error::Shape(format!(
                "inconsistent head: w1 {:?}, b1 {}, w2 {:?}, b2 {}",
                self.w1.dim(),
                self.b1.len(),
                self.w2.dim(),
                self.b2.len()
            )));
        }
        Ok(())
    }
}

/// Pre-activation, hidden activation and logits.
pub(crate) struct MlpTrace {
    pub pre: Array1<f64>,
    pub hidden: Array1<f64>,
    pub logits: Array1<f64>,
}

pub(crate) fn mlp_forward_trace(feature: &Array1<f64>, head: &MlpHead) -> Result<MlpTrace> {
    if feature.len() != head.feature_len() {
        return Err(Error::Shape(format!(
            "feature length {} does not match the classifier input {}",
            feature.len(),
            head.feature_len()
        )));
    }
    head.check()?;
    let pre = head.w1.dot(feature) + &head.b1;
    let hidden = pre.mapv(|v| v.max(0.0));
    let logits = head.w2.dot(&hidden) + &head.b2;
    Ok(MlpTrace {
        pre,
        hidden,
        logits,
    })
}

pub fn mlp_forward(feature: &[f64], head: &MlpHead) -> Result<Array1<f64>> {
    Ok(mlp_forward_trace(&Array1::from(feature.to_vec()), head)?.logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_head_gives_zero_logits() {
        let head = MlpHead::zeros(6, 4, 3);
        assert_eq!(mlp_forward(&[1.0; 6], &head).unwrap(), Array1::<f64>::zeros(3));
    }

    #[test]
    fn identity_composition() {
        let mut head = MlpHead::zeros(5, 3, 3);
        for i in 0..3 {
            head.w1[[i, i]] = 1.0;
            head.w2[[i, i]] = 1.0;
        }
        let f = [0.5, 2.0, 0.0, 9.0, 9.0];
        assert_eq!(mlp_forward(&f, &head).unwrap().to_vec(), vec![0.5, 2.0, 0.0]);
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut head = MlpHead::init(7, 5, 4, &mut rng);
        head.b1.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        head.b2.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        let f: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let logits = mlp_forward(&f, &head).unwrap();
        let mut h = [0.0; 5];
        for (i, hi) in h.iter_mut().enumerate() {
            let mut acc = head.b1[i];
            for (j, fj) in f.iter().enumerate() {
                acc += head.w1[[i, j]] * fj;
            }
            *hi = acc.max(0.0);
        }
        for k in 0..4 {
            let mut acc = head.b2[k];
            for (i, hi) in h.iter().enumerate() {
                acc += head.w2[[k, i]] * hi;
            }
            assert!((acc - logits[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn init_bounds_and_shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let head = MlpHead::init(10, 6, 2, &mut rng);
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(head.w1.iter().all(|v| v.abs() <= bound));
        assert!(head.b1.iter().all(|&v| v == 0.0));
        assert!(matches!(mlp_forward(&[0.0; 9], &head), Err(Error::Shape(_))));
    }
}
