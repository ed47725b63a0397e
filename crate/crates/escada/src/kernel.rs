//! Kernel functions, the kernel-induced metric, and Lipschitz bookkeeping.
//!
//! Points live in the joint context-dose space: a point is a slice
//! `[z_1, ..., z_m, d]` whose last coordinate is the dose. Both kernel
//! families take a product form over dimensions with one lengthscale per
//! dimension, so the metric between two points that share a context depends
//! on the doses only through `|d1 - d2|` and is monotonically increasing in
//! it. That monotonicity is what lets safe-set expansion invert the metric
//! in closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supported kernel families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    /// `k(x, x') = v * exp(-sum_i (x_i - x'_i)^2 / (2 l_i^2))`
    SquaredExponential,
    /// `k(x, x') = v * exp(-sum_i |x_i - x'_i| / l_i)`
    Laplacian,
}

/// A positive definite kernel on the context-dose space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Per-dimension lengthscales; the last entry is the dose dimension.
    pub lengthscales: Vec<f64>,
    /// Signal variance; `k(x, x)` equals this for both families.
    pub signal_variance: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, lengthscales: Vec<f64>, signal_variance: f64) -> Result<Self> {
        if lengthscales.is_empty() || lengthscales.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::NonFinite {
                what: "lengthscale",
                value: lengthscales.iter().copied().find(|&l| !(l > 0.0)).unwrap_or(f64::NAN),
            });
        }
        if !(signal_variance > 0.0) || !signal_variance.is_finite() {
            return Err(Error::NonFinite { what: "signal variance", value: signal_variance });
        }
        Ok(Self { family, lengthscales, signal_variance })
    }

    pub fn dims(&self) -> usize {
        self.lengthscales.len()
    }

    fn check_dims(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.lengthscales.len() {
            return Err(Error::DimensionMismatch { expected: self.lengthscales.len(), got: x.len() });
        }
        Ok(())
    }

    /// Evaluate `k(x, x')`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_dims(x)?;
        self.check_dims(y)?;
        let exponent: f64 = match self.family {
            KernelFamily::SquaredExponential => x
                .iter()
                .zip(y)
                .zip(&self.lengthscales)
                .map(|((a, b), l)| {
                    let d = (a - b) / l;
                    d * d * 0.5
                })
                .sum(),
            KernelFamily::Laplacian => x
                .iter()
                .zip(y)
                .zip(&self.lengthscales)
                .map(|((a, b), l)| (a - b).abs() / l)
                .sum(),
        };
        Ok(self.signal_variance * (-exponent).exp())
    }

    /// The kernel metric `q(x, x') = sqrt(k(x,x) - 2 k(x,x') + k(x',x'))`.
    ///
    /// Tiny negative radicands (within `1e-12`) are clamped to zero; anything
    /// beyond that indicates an invalid kernel and is an error.
    pub fn metric(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let radicand = 2.0 * self.signal_variance - 2.0 * self.eval(x, y)?;
        if radicand < -1e-12 {
            return Err(Error::InvalidMetric { radicand });
        }
        Ok(radicand.max(0.0).sqrt())
    }

    /// The metric between `(z, d1)` and `(z, d2)` for any shared context.
    ///
    /// Context coordinates cancel in the product form, so this depends only
    /// on `|d1 - d2|` and the dose lengthscale.
    pub fn dose_metric(&self, d1: f64, d2: f64) -> f64 {
        let l = *self.lengthscales.last().expect("validated nonempty");
        let r = (d1 - d2).abs();
        let k_ratio = match self.family {
            KernelFamily::SquaredExponential => (-r * r / (2.0 * l * l)).exp(),
            KernelFamily::Laplacian => (-r / l).exp(),
        };
        (2.0 * self.signal_variance * (1.0 - k_ratio)).max(0.0).sqrt()
    }

    /// Supremum of attainable dose-metric values, `sqrt(2 v)`.
    pub fn metric_supremum(&self) -> f64 {
        (2.0 * self.signal_variance).sqrt()
    }

    /// Invert the dose metric: the unique `|d1 - d2|` with `q_z(d1, d2) = rho`.
    ///
    /// Errors with [`Error::MetricSaturation`] when `rho` is at or above the
    /// supremum; callers treat that radius as unbounded within the domain.
    pub fn inverse_dose_metric(&self, rho: f64) -> Result<f64> {
        if !(rho >= 0.0) {
            return Err(Error::NonFinite { what: "metric radius", value: rho });
        }
        if rho == 0.0 {
            return Ok(0.0);
        }
        let sup = self.metric_supremum();
        if rho >= sup {
            return Err(Error::MetricSaturation { rho, sup });
        }
        let l = *self.lengthscales.last().expect("validated nonempty");
        // 1 - rho^2 / (2v) is in (0, 1) here by the saturation check.
        let k_ratio = 1.0 - rho * rho / (2.0 * self.signal_variance);
        let r = match self.family {
            KernelFamily::SquaredExponential => l * (-2.0 * k_ratio.ln()).sqrt(),
            KernelFamily::Laplacian => -l * k_ratio.ln(),
        };
        Ok(r)
    }
}

/// A bound `L` on `|f(x) - f(x')| / q(x, x')`, supplied by the environment
/// and audited empirically; used wherever a Lipschitz constant is needed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzCertificate {
    pub l: f64,
}

impl LipschitzCertificate {
    pub fn new(l: f64) -> Result<Self> {
        if !(l >= 0.0) || !l.is_finite() {
            return Err(Error::NonFinite { what: "Lipschitz constant", value: l });
        }
        Ok(Self { l })
    }
}

/// The dose-direction metric a Lipschitz certificate refers to.
///
/// Environments with nearly linear responses are naturally certified against
/// the absolute dose difference, while GP-sampled environments are certified
/// against the metric induced by their own kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum DoseMetric {
    KernelInduced(KernelSpec),
    AbsoluteDifference,
}

impl DoseMetric {
    pub fn distance(&self, d1: f64, d2: f64) -> f64 {
        match self {
            DoseMetric::KernelInduced(spec) => spec.dose_metric(d1, d2),
            DoseMetric::AbsoluteDifference => (d1 - d2).abs(),
        }
    }

    /// Inverse of the monotone mapping `|d1 - d2| -> q_z(d1, d2)`.
    pub fn inverse(&self, rho: f64) -> Result<f64> {
        match self {
            DoseMetric::KernelInduced(spec) => spec.inverse_dose_metric(rho),
            DoseMetric::AbsoluteDifference => {
                if !(rho >= 0.0) {
                    return Err(Error::NonFinite { what: "metric radius", value: rho });
                }
                Ok(rho)
            }
        }
    }

    /// Supremum of attainable metric values, if finite.
    pub fn supremum(&self) -> Option<f64> {
        match self {
            DoseMetric::KernelInduced(spec) => Some(spec.metric_supremum()),
            DoseMetric::AbsoluteDifference => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn se(lengthscales: Vec<f64>, variance: f64) -> KernelSpec {
        KernelSpec::new(KernelFamily::SquaredExponential, lengthscales, variance).unwrap()
    }

    fn laplacian(lengthscales: Vec<f64>, variance: f64) -> KernelSpec {
        KernelSpec::new(KernelFamily::Laplacian, lengthscales, variance).unwrap()
    }

    #[test]
    fn eval_at_identical_points_is_signal_variance() {
        for spec in [se(vec![1.0, 2.0], 3.5), laplacian(vec![0.5], 2.0)] {
            let x = vec![0.7; spec.dims()];
            assert!((spec.eval(&x, &x).unwrap() - spec.signal_variance).abs() < 1e-15);
        }
    }

    #[test]
    fn eval_squared_exponential_unit_distance() {
        let spec = se(vec![1.0], 1.0);
        let k = spec.eval(&[0.0], &[1.0]).unwrap();
        assert!((k - (-0.5f64).exp()).abs() < 1e-12, "k = {k}");
    }

    #[test]
    fn eval_laplacian_distance_two() {
        let spec = laplacian(vec![1.0], 1.0);
        let k = spec.eval(&[0.0], &[2.0]).unwrap();
        assert!((k - (-2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn eval_dimension_mismatch_is_error() {
        let spec = se(vec![1.0, 1.0], 1.0);
        assert!(matches!(
            spec.eval(&[0.0], &[0.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn metric_of_identical_points_is_zero() {
        let spec = laplacian(vec![1.0, 3.0], 2.0);
        assert_eq!(spec.metric(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    }

    // The bandwidth parameterization q = sqrt(2 - 2 exp(-r^2 / s^2)) with
    // s = 1 corresponds to lengthscale s / sqrt(2).
    #[test]
    fn metric_squared_exponential_matches_bandwidth_form() {
        let spec = se(vec![std::f64::consts::FRAC_1_SQRT_2], 1.0);
        let q = spec.metric(&[0.0], &[1.0]).unwrap();
        let expected = (2.0 - 2.0 * (-1.0f64).exp()).sqrt();
        assert!((q - expected).abs() < 1e-12, "q = {q}, expected {expected}");
        assert!((expected - 1.12429).abs() < 1e-5);
    }

    #[test]
    fn metric_approaches_sqrt_two_variance_at_large_distance() {
        let spec = se(vec![1.0], 4.0);
        let q = spec.metric(&[0.0], &[1e4]).unwrap();
        assert!((q - (2.0f64 * 4.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn inverse_dose_metric_zero_radius() {
        assert_eq!(se(vec![1.0], 1.0).inverse_dose_metric(0.0).unwrap(), 0.0);
    }

    #[test]
    fn inverse_dose_metric_recovers_bandwidth_example() {
        let spec = se(vec![std::f64::consts::FRAC_1_SQRT_2], 1.0);
        let rho = (2.0 - 2.0 * (-1.0f64).exp()).sqrt();
        let r = spec.inverse_dose_metric(rho).unwrap();
        assert!((r - 1.0).abs() < 1e-9, "r = {r}");
    }

    #[test]
    fn inverse_dose_metric_saturates() {
        let spec = se(vec![1.0], 1.0);
        let sup = spec.metric_supremum();
        assert!(matches!(spec.inverse_dose_metric(sup), Err(Error::MetricSaturation { .. })));
        assert!(matches!(spec.inverse_dose_metric(sup + 1.0), Err(Error::MetricSaturation { .. })));
    }

    /// Bisection on the forward dose metric, used as an independent check of
    /// the closed-form inversions.
    fn bisect_inverse(spec: &KernelSpec, rho: f64) -> f64 {
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        while spec.dose_metric(0.0, hi) < rho {
            hi *= 2.0;
            assert!(hi < 1e12, "bisection bracket failed");
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if spec.dose_metric(0.0, mid) < rho {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-10 {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn laplacian_inverse_matches_bisection() {
        let spec = laplacian(vec![0.7], 2.3);
        for rho in [0.1, 0.5, 1.0, 1.9] {
            let closed = spec.inverse_dose_metric(rho).unwrap();
            let numeric = bisect_inverse(&spec, rho);
            assert!((closed - numeric).abs() < 1e-7, "rho={rho}: {closed} vs {numeric}");
        }
    }

    proptest! {
        #[test]
        fn metric_axioms_hold(
            family in prop_oneof![Just(KernelFamily::SquaredExponential), Just(KernelFamily::Laplacian)],
            ls in prop::collection::vec(0.1f64..5.0, 1..4),
            variance in 0.1f64..10.0,
            pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 3),
        ) {
            let dims = ls.len();
            let spec = KernelSpec::new(family, ls, variance).unwrap();
            let a = &pts[0][..dims];
            let b = &pts[1][..dims];
            let c = &pts[2][..dims];
            let qab = spec.metric(a, b).unwrap();
            let qba = spec.metric(b, a).unwrap();
            let qac = spec.metric(a, c).unwrap();
            let qcb = spec.metric(c, b).unwrap();
            prop_assert!(spec.metric(a, a).unwrap().abs() < 1e-9);
            prop_assert!((qab - qba).abs() < 1e-12);
            prop_assert!(qab <= qac + qcb + 1e-9);
        }

        #[test]
        fn inverse_composed_with_forward_is_identity(
            family in prop_oneof![Just(KernelFamily::SquaredExponential), Just(KernelFamily::Laplacian)],
            l in 0.1f64..5.0,
            variance in 0.1f64..10.0,
            r in 0.0f64..20.0,
        ) {
            let spec = KernelSpec::new(family, vec![l], variance).unwrap();
            let rho = spec.dose_metric(0.0, r);
            if rho < spec.metric_supremum() * (1.0 - 1e-9) {
                let back = spec.inverse_dose_metric(rho).unwrap();
                prop_assert!((back - r).abs() < 1e-6 * (1.0 + r), "r={r}, back={back}");
            }
        }

        #[test]
        fn dose_metric_depends_only_on_absolute_gap_and_is_monotone(
            family in prop_oneof![Just(KernelFamily::SquaredExponential), Just(KernelFamily::Laplacian)],
            ls in prop::collection::vec(0.1f64..5.0, 3),
            variance in 0.1f64..10.0,
            base in -5.0f64..5.0,
            r1 in 0.0f64..10.0,
            r2 in 0.0f64..10.0,
        ) {
            let spec = KernelSpec::new(family, ls, variance).unwrap();
            // Shift invariance: only |d1 - d2| matters.
            let q_shifted = spec.dose_metric(base, base + r1);
            let q_origin = spec.dose_metric(0.0, r1);
            prop_assert!((q_shifted - q_origin).abs() < 1e-12);
            // Monotone in the gap.
            let (small, big) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            prop_assert!(spec.dose_metric(0.0, small) <= spec.dose_metric(0.0, big) + 1e-12);
            // And agrees with the full metric at a shared context.
            let z = [base, -base];
            let full = spec.metric(&[z[0], z[1], 0.0], &[z[0], z[1], r1]).unwrap();
            prop_assert!((full - q_origin).abs() < 1e-9);
        }
    }
}
