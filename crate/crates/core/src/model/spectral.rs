//! Orthonormal DFT along one axis with half-spectrum storage, its exact
//! conjugate-symmetric inverse, and the complex-valued MLP that transforms
//! spectra between the forward and inverse passes.
//!
//! Both transforms are expressed as real matrix products against
//! precomputed cosine/sine tables, so a round trip is exact to rounding and
//! gradients are plain transposed GEMMs.

use super::params::ComplexLinear;
use super::{Activation, ModelError};
use ndarray::{Array1, Array2};
use std::f64::consts::TAU;

/// Complex half-spectrum of a real signal: `⌊n_full/2⌋+1` retained bins per
/// embedding column.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpectrum {
    pub re: Array2<f64>,
    pub im: Array2<f64>,
    pub n_full: usize,
}

impl HalfSpectrum {
    pub fn n_bins(n_full: usize) -> usize {
        n_full / 2 + 1
    }
}

/// Precomputed transform tables for one axis length.
#[derive(Debug, Clone)]
pub struct SpectralPlan {
    pub n: usize,
    pub bins: usize,
    /// (bins × n): cos(2πcf/n)/√n
    fwd_cos: Array2<f64>,
    /// (bins × n): sin(2πcf/n)/√n
    fwd_sin: Array2<f64>,
    /// (n × bins): conjugate-symmetric inverse, real-part coefficients
    inv_a: Array2<f64>,
    /// (n × bins): conjugate-symmetric inverse, imaginary-part coefficients
    inv_b: Array2<f64>,
}

impl SpectralPlan {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "transform axis must have length >= 2");
        let bins = HalfSpectrum::n_bins(n);
        let scale = 1.0 / (n as f64).sqrt();
        let fwd_cos = Array2::from_shape_fn((bins, n), |(f, c)| {
            (TAU * (c * f) as f64 / n as f64).cos() * scale
        });
        let fwd_sin = Array2::from_shape_fn((bins, n), |(f, c)| {
            (TAU * (c * f) as f64 / n as f64).sin() * scale
        });
        // Full inverse over all n frequencies folded onto the retained bins:
        // interior bins appear twice by conjugate symmetry, DC (and Nyquist
        // for even n) once. The sine column of DC/Nyquist is identically
        // zero, so their imaginary parts cannot influence the output.
        let weight = |f: usize| -> f64 {
            if f == 0 || (n % 2 == 0 && f == n / 2) {
                1.0
            } else {
                2.0
            }
        };
        let inv_a = Array2::from_shape_fn((n, bins), |(c, f)| {
            weight(f) * (TAU * (c * f) as f64 / n as f64).cos() * scale
        });
        let inv_b = Array2::from_shape_fn((n, bins), |(c, f)| {
            -weight(f) * (TAU * (c * f) as f64 / n as f64).sin() * scale
        });
        Self {
            n,
            bins,
            fwd_cos,
            fwd_sin,
            inv_a,
            inv_b,
        }
    }

    /// Forward transform of columns: input (n × d) → half spectrum (bins × d).
    pub fn forward(&self, v: &Array2<f64>) -> HalfSpectrum {
        debug_assert_eq!(v.nrows(), self.n);
        HalfSpectrum {
            re: self.fwd_cos.dot(v),
            im: -self.fwd_sin.dot(v),
            n_full: self.n,
        }
    }

    /// Inverse transform: half spectrum (bins × d) → real signal (n × d).
    /// The imaginary residue of the DC and Nyquist bins has no effect on
    /// the output (their sine coefficients are identically zero).
    pub fn inverse(&self, spec: &HalfSpectrum) -> Array2<f64> {
        debug_assert_eq!(spec.re.nrows(), self.bins);
        let mut out = self.inv_a.dot(&spec.re);
        out += &self.inv_b.dot(&spec.im);
        out
    }

    /// Gradient of [`SpectralPlan::forward`] with respect to its input.
    pub fn forward_backward(&self, d_re: &Array2<f64>, d_im: &Array2<f64>) -> Array2<f64> {
        let mut out = self.fwd_cos.t().dot(d_re);
        out -= &self.fwd_sin.t().dot(d_im);
        out
    }

    /// Gradient of [`SpectralPlan::inverse`] with respect to the spectrum.
    pub fn inverse_backward(&self, d_out: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        (self.inv_a.t().dot(d_out), self.inv_b.t().dot(d_out))
    }

    /// Worst-case imaginary residue the inverse discards, `(1/√n)·max_col
    /// (|im[DC]| + |im[Nyquist]|)`; zero exactly when the spectrum comes
    /// from a real signal.
    pub fn imaginary_residue(&self, spec: &HalfSpectrum) -> f64 {
        let scale = 1.0 / (self.n as f64).sqrt();
        let mut worst = 0.0f64;
        for col in 0..spec.im.ncols() {
            let mut r = spec.im[[0, col]].abs();
            if self.n % 2 == 0 {
                r += spec.im[[self.bins - 1, col]].abs();
            }
            worst = worst.max(r * scale);
        }
        worst
    }
}

/// Tolerance above which an inverse-transform imaginary residue is treated
/// as an upstream conjugate-symmetry violation.
pub const IMAG_RESIDUE_TOL: f64 = 1e-9;

/// Orthonormal DFT along the first axis with half-spectrum truncation.
pub fn dft_half(v: &Array2<f64>) -> HalfSpectrum {
    SpectralPlan::new(v.nrows()).forward(v)
}

/// Inverse of [`dft_half`] via conjugate-symmetric spectrum expansion;
/// discards the (zero for valid inputs) imaginary residue.
pub fn idft_half(spec: &HalfSpectrum) -> Array2<f64> {
    SpectralPlan::new(spec.n_full).inverse(spec)
}

/// [`idft_half`] that first checks the discarded imaginary residue against
/// `tol` and reports a numeric error when it is exceeded.
pub fn idft_half_checked(spec: &HalfSpectrum, tol: f64) -> Result<Array2<f64>, ModelError> {
    let plan = SpectralPlan::new(spec.n_full);
    let residue = plan.imaginary_residue(spec);
    if residue > tol {
        return Err(ModelError::Numeric {
            location: "idft_half".into(),
            message: format!(
                "imaginary residue {residue:.3e} exceeds tolerance {tol:.1e}; upstream spectrum is not conjugate-symmetric"
            ),
        });
    }
    Ok(plan.inverse(spec))
}

/// Per-layer cache for the complex MLP backward pass.
pub(crate) struct ComplexMlpCache {
    pub in_re: Array2<f64>,
    pub in_im: Array2<f64>,
    pub pre_re: Array2<f64>,
    pub pre_im: Array2<f64>,
}

/// Forward through the complex MLP stack. Rows are (frequency, position)
/// pairs, columns the embedding dimension; each layer computes
/// `re' = σ(re·W_r − im·W_i + B_r)`, `im' = σ(re·W_i + im·W_r + B_i)`.
pub(crate) fn complex_mlp_fwd(
    re: &Array2<f64>,
    im: &Array2<f64>,
    layers: &[ComplexLinear],
    act: Activation,
) -> Result<(Array2<f64>, Array2<f64>, Vec<ComplexMlpCache>), ModelError> {
    let mut cur_re = re.clone();
    let mut cur_im = im.clone();
    let mut caches = Vec::with_capacity(layers.len());
    for (idx, layer) in layers.iter().enumerate() {
        let mut pre_re = cur_re.dot(&layer.w_re);
        pre_re -= &cur_im.dot(&layer.w_im);
        pre_re += &layer.b_re;
        let mut pre_im = cur_re.dot(&layer.w_im);
        pre_im += &cur_im.dot(&layer.w_re);
        pre_im += &layer.b_im;
        let next_re = pre_re.mapv(|v| act.apply(v));
        let next_im = pre_im.mapv(|v| act.apply(v));
        if !next_re.iter().chain(next_im.iter()).all(|v| v.is_finite()) {
            return Err(ModelError::Numeric {
                location: format!("complex_mlp layer {idx}"),
                message: "non-finite intermediate value".into(),
            });
        }
        caches.push(ComplexMlpCache {
            in_re: cur_re,
            in_im: cur_im,
            pre_re,
            pre_im,
        });
        cur_re = next_re;
        cur_im = next_im;
    }
    Ok((cur_re, cur_im, caches))
}

pub(crate) struct ComplexLinearGrad {
    pub w_re: Array2<f64>,
    pub w_im: Array2<f64>,
    pub b_re: Array1<f64>,
    pub b_im: Array1<f64>,
}

/// Backward through the complex MLP stack; returns per-layer parameter
/// gradients (same order as `layers`) and the input-spectrum gradient.
pub(crate) fn complex_mlp_bwd(
    layers: &[ComplexLinear],
    caches: &[ComplexMlpCache],
    d_out_re: &Array2<f64>,
    d_out_im: &Array2<f64>,
    act: Activation,
) -> (Vec<ComplexLinearGrad>, Array2<f64>, Array2<f64>) {
    let mut d_re = d_out_re.clone();
    let mut d_im = d_out_im.clone();
    let mut grads: Vec<Option<ComplexLinearGrad>> = (0..layers.len()).map(|_| None).collect();
    for idx in (0..layers.len()).rev() {
        let layer = &layers[idx];
        let cache = &caches[idx];
        let d_pre_re = &d_re * &cache.pre_re.mapv(|v| act.grad_from_pre(v));
        let d_pre_im = &d_im * &cache.pre_im.mapv(|v| act.grad_from_pre(v));
        let g = ComplexLinearGrad {
            w_re: cache.in_re.t().dot(&d_pre_re) + cache.in_im.t().dot(&d_pre_im),
            w_im: cache.in_re.t().dot(&d_pre_im) - cache.in_im.t().dot(&d_pre_re),
            b_re: d_pre_re.sum_axis(ndarray::Axis(0)),
            b_im: d_pre_im.sum_axis(ndarray::Axis(0)),
        };
        let next_d_re = d_pre_re.dot(&layer.w_re.t()) + d_pre_im.dot(&layer.w_im.t());
        let next_d_im = d_pre_im.dot(&layer.w_re.t()) - d_pre_re.dot(&layer.w_im.t());
        grads[idx] = Some(g);
        d_re = next_d_re;
        d_im = next_d_im;
    }
    (
        grads.into_iter().map(Option::unwrap).collect(),
        d_re,
        d_im,
    )
}

/// Applies the complex MLP stack to a half spectrum (the public operation;
/// training uses the cache-returning variants).
pub fn complex_mlp(
    spec: &HalfSpectrum,
    layers: &[ComplexLinear],
    act: Activation,
) -> Result<HalfSpectrum, ModelError> {
    let (re, im, _) = complex_mlp_fwd(&spec.re, &spec.im, layers, act)?;
    Ok(HalfSpectrum {
        re,
        im,
        n_full: spec.n_full,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::AbsDiffEq;
    use ndarray::array;

    #[test]
    fn constant_signal_concentrates_in_dc() {
        let v = Array2::from_shape_vec((4, 1), vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let spec = dft_half(&v);
        assert_eq!(spec.re.nrows(), 3);
        assert!((spec.re[[0, 0]] - 2.0).abs() < 1e-12);
        for f in 1..3 {
            assert!(spec.re[[f, 0]].abs() < 1e-12);
            assert!(spec.im[[f, 0]].abs() < 1e-12);
        }
    }

    #[test]
    fn six_channels_retain_four_bins() {
        let v = Array2::zeros((6, 2));
        let spec = dft_half(&v);
        assert_eq!(spec.re.nrows(), 4);
    }

    #[test]
    fn dc_only_spectrum_inverts_to_ones() {
        let n = 5;
        let mut re = Array2::zeros((HalfSpectrum::n_bins(n), 1));
        re[[0, 0]] = (n as f64).sqrt();
        let spec = HalfSpectrum {
            re,
            im: Array2::zeros((HalfSpectrum::n_bins(n), 1)),
            n_full: n,
        };
        let v = idft_half(&spec);
        for c in 0..n {
            assert!((v[[c, 0]] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn checked_inverse_flags_symmetry_violation() {
        let v = Array2::from_shape_vec((4, 1), vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let mut spec = dft_half(&v);
        assert!(idft_half_checked(&spec, IMAG_RESIDUE_TOL).is_ok());
        spec.im[[0, 0]] = 0.1;
        assert!(matches!(
            idft_half_checked(&spec, IMAG_RESIDUE_TOL),
            Err(ModelError::Numeric { .. })
        ));
    }

    #[test]
    fn decoupled_layer_acts_as_real_linear_map() {
        let layer = ComplexLinear {
            w_re: array![[1.0, 2.0], [0.5, -1.0]],
            w_im: Array2::zeros((2, 2)),
            b_re: Array1::zeros(2),
            b_im: Array1::zeros(2),
        };
        let spec = HalfSpectrum {
            re: array![[1.0, 0.0], [3.0, -2.0]],
            im: array![[0.5, 1.0], [0.0, 4.0]],
            n_full: 2,
        };
        let out = complex_mlp(&spec, std::slice::from_ref(&layer), Activation::Identity).unwrap();
        let expect_re = spec.re.dot(&layer.w_re);
        let expect_im = spec.im.dot(&layer.w_re);
        assert!(out.re.abs_diff_eq(&expect_re, 1e-12));
        assert!(out.im.abs_diff_eq(&expect_im, 1e-12));
    }

    #[test]
    fn relu_keeps_zero_imaginary_branch_at_zero() {
        let layer = ComplexLinear {
            w_re: array![[0.7, -0.3], [0.2, 0.9]],
            w_im: Array2::zeros((2, 2)),
            b_re: Array1::zeros(2),
            b_im: Array1::zeros(2),
        };
        let spec = HalfSpectrum {
            re: array![[1.0, -1.0], [2.0, 0.5]],
            im: Array2::zeros((2, 2)),
            n_full: 2,
        };
        let out = complex_mlp(&spec, std::slice::from_ref(&layer), Activation::Relu).unwrap();
        assert!(out.im.iter().all(|&v| v == 0.0));
    }
}
