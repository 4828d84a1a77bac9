//! Diffusion wavelet banks and separable spatio-temporal filtering.

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{Error, Result};
use crate::graph::{lazy_random_walk, line_graph, Graph, MarkovShift};
use crate::signal::Signal;

/// Dyadic diffusion wavelets `H_j = P^(2^(j-1)) - P^(2^j)` for `j = 1..J`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBank {
    filters: Vec<Array2<f64>>,
}

impl WaveletBank {
    pub fn scale_count(&self) -> usize {
        self.filters.len()
    }

    pub fn dim(&self) -> usize {
        self.filters[0].nrows()
    }

    /// Wavelet at scale `j`, 1-based.
    pub fn filter(&self, j: usize) -> &Array2<f64> {
        &self.filters[j - 1]
    }

    pub fn filters(&self) -> &[Array2<f64>] {
        &self.filters
    }
}

/// `Q_{j-1} - Q_j` from a dyadic power chain.
pub fn dyadic_wavelet(powers: &[Array2<f64>], j: usize) -> Array2<f64> {
    &powers[j - 1] - &powers[j]
}

pub fn build_wavelet_bank(shift: &MarkovShift, j_max: usize) -> Result<WaveletBank> {
    if j_max == 0 {
        return Err(Error::Precondition("a wavelet bank needs at least one scale".into()));
    }
    if shift.max_scale() < j_max {
        return Err(Error::Precondition(format!(
            "shift has powers through 2^{} but the bank needs 2^{j_max}",
            shift.max_scale()
        )));
    }
    let filters = (1..=j_max)
        .map(|j| dyadic_wavelet(shift.powers(), j))
        .collect();
    Ok(WaveletBank { filters })
}

/// Spatial and temporal shifts together with their wavelet banks.
#[derive(Debug, Clone)]
pub struct FilterBanks {
    pub spatial_shift: MarkovShift,
    pub temporal_shift: MarkovShift,
    pub spatial: WaveletBank,
    pub temporal: WaveletBank,
}

impl FilterBanks {
    pub fn new(
        spatial_shift: MarkovShift,
        temporal_shift: MarkovShift,
        spatial_scales: usize,
        temporal_scales: usize,
    ) -> Result<Self> {
        let spatial_shift = spatial_shift.dyadic_powers(spatial_scales)?;
        let temporal_shift = temporal_shift.dyadic_powers(temporal_scales)?;
        let spatial = build_wavelet_bank(&spatial_shift, spatial_scales)?;
        let temporal = build_wavelet_bank(&temporal_shift, temporal_scales)?;
        Ok(FilterBanks {
            spatial_shift,
            temporal_shift,
            spatial,
            temporal,
        })
    }

    /// Lazy random walks on `skeleton` and on a path of `steps` frames.
    pub fn for_skeleton(
        skeleton: &Graph,
        steps: usize,
        spatial_scales: usize,
        temporal_scales: usize,
    ) -> Result<Self> {
        let temporal = line_graph(steps)?;
        FilterBanks::new(
            lazy_random_walk(skeleton),
            lazy_random_walk(&temporal),
            spatial_scales,
            temporal_scales,
        )
    }

    pub fn spatial_scales(&self) -> usize {
        self.spatial.scale_count()
    }

    pub fn temporal_scales(&self) -> usize {
        self.temporal.scale_count()
    }

    /// Children per parent, `J_s * J_t`.
    pub fn children_per_node(&self) -> usize {
        self.spatial_scales() * self.temporal_scales()
    }

    pub(crate) fn check_signal(&self, z: &Signal) -> Result<()> {
        let (_, n, t) = z.dim();
        if n != self.spatial.dim() || t != self.temporal.dim() {
            return Err(Error::Shape(format!(
                "signal is {n}x{t} but the banks are built for {}x{}",
                self.spatial.dim(),
                self.temporal.dim()
            )));
        }
        Ok(())
    }
}

/// Coefficients `h_0 .. h_{P-1}` of a polynomial in a graph shift.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialFilter {
    coefficients: Vec<f64>,
}

impl PolynomialFilter {
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::Precondition("polynomial needs at least one coefficient".into()));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("polynomial coefficients".into()));
        }
        Ok(PolynomialFilter { coefficients })
    }

    /// The polynomial `x^(2^(j-1)) - x^(2^j)` of the diffusion wavelet at scale `j`.
    pub fn diffusion_wavelet(j: usize) -> Self {
        let hi = 1usize << j;
        let mut coefficients = vec![0.0; hi + 1];
        coefficients[hi / 2] = 1.0;
        coefficients[hi] = -1.0;
        PolynomialFilter { coefficients }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }
}

fn check_square(m: ArrayView2<'_, f64>, n: usize, what: &str) -> Result<()> {
    if m.dim() != (n, n) {
        return Err(Error::Shape(format!(
            "{what} filter is {:?}, expected {n}x{n}",
            m.dim()
        )));
    }
    Ok(())
}

/// `h * z_c * g^T` for every channel `c`.
pub fn apply_st_filter(h: &Array2<f64>, g: &Array2<f64>, z: &Signal) -> Result<Signal> {
    let (c, n, t) = z.dim();
    check_square(h.view(), n, "spatial")?;
    check_square(g.view(), t, "temporal")?;
    let mut out = Signal::zeros(c, n, t);
    for ch in 0..c {
        let y = h.dot(&z.channel(ch)).dot(&g.t());
        out.channel_mut(ch).assign(&y);
    }
    Ok(out)
}

/// `(sum_p h_p S_s^p) z (sum_q g_q S_t^q)^T`, evaluated by Horner's rule on
/// the signal without forming the polynomial matrices.
pub fn apply_polynomial_filter(
    coeffs_s: &PolynomialFilter,
    coeffs_t: &PolynomialFilter,
    shift_s: &Array2<f64>,
    shift_t: &Array2<f64>,
    z: &Signal,
) -> Result<Signal> {
    let (c, n, t) = z.dim();
    check_square(shift_s.view(), n, "spatial")?;
    check_square(shift_t.view(), t, "temporal")?;
    let mut out = Signal::zeros(c, n, t);
    for ch in 0..c {
        let zc = z.channel(ch);
        // Y = sum_p h_p S^p Z
        let hs = &coeffs_s.coefficients;
        let mut y = zc.mapv(|v| v * hs[hs.len() - 1]);
        for &h in hs.iter().rev().skip(1) {
            y = shift_s.dot(&y);
            Zip::from(&mut y).and(&zc).for_each(|a, &b| *a += h * b);
        }
        // W = sum_q g_q Y (S_t^T)^q
        let gs = &coeffs_t.coefficients;
        let mut w = y.mapv(|v| v * gs[gs.len() - 1]);
        for &g in gs.iter().rev().skip(1) {
            w = w.dot(&shift_t.t());
            Zip::from(&mut w).and(&y).for_each(|a, &b| *a += g * b);
        }
        out.channel_mut(ch).assign(&w);
    }
    Ok(out)
}
