use ndarray::{Array3, ArrayView2, ArrayViewMut2, Axis};

use crate::error::{Error, Result};
use crate::graph::frobenius_norm;

/// Spatio-temporal graph signal: `channels x vertices x time steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    data: Array3<f64>,
}

impl Signal {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("signal".into()));
        }
        Ok(Signal { data })
    }

    pub fn zeros(channels: usize, vertices: usize, steps: usize) -> Self {
        Signal {
            data: Array3::zeros((channels, vertices, steps)),
        }
    }

    /// `(C, N, T)`.
    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn vertices(&self) -> usize {
        self.data.dim().1
    }

    pub fn steps(&self) -> usize {
        self.data.dim().2
    }

    pub fn as_array(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array3<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), c)
    }

    pub fn channel_mut(&mut self, c: usize) -> ArrayViewMut2<'_, f64> {
        self.data.index_axis_mut(Axis(0), c)
    }

    /// Frobenius norm over all channels jointly.
    pub fn norm(&self) -> f64 {
        frobenius_norm(&self.data)
    }

    pub fn abs(&self) -> Signal {
        Signal {
            data: self.data.mapv(f64::abs),
        }
    }

    /// Mean over the time axis, laid out channel-major: entry `c * N + n`.
    pub fn temporal_mean(&self) -> Vec<f64> {
        let (c, n, t) = self.dim();
        let mut out = Vec::with_capacity(c * n);
        for ch in self.data.outer_iter() {
            for row in ch.rows() {
                out.push(row.sum() / t as f64);
            }
        }
        out
    }
}
