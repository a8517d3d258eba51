//! The one-bit communication link: compression encoder, Gaussian noise
//! model with its distribution functions, and the threshold quantizer.
//!
//! Deterministic reproducibility is handled by the caller, which owns one
//! RNG substream per (edge, replication); this module never touches global
//! state.

use nalgebra::{DVector, RowDVector};

use crate::error::{Error, Result};

/// Zero-mean Gaussian noise with standard deviation `sigma`.
///
/// `sigma = 0` is the test-only deterministic mode: `transmit` becomes the
/// plain indicator and the density functions are rejected. Production
/// scenarios must use `new`, which requires `sigma > 0` (the estimator needs
/// a density).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::NonPositiveSigma(sigma));
        }
        Ok(Self { sigma })
    }

    /// Deterministic noiseless channel for tests.
    pub fn noiseless() -> Self {
        Self { sigma: 0.0 }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// CDF of N(0, sigma^2) via the complementary error function.
    pub fn cdf(&self, v: f64) -> f64 {
        normal_cdf(v, self.sigma)
    }

    /// Density of N(0, sigma^2).
    pub fn pdf(&self, v: f64) -> f64 {
        normal_pdf(v, self.sigma)
    }
}

/// F(v) for N(0, sigma^2): `0.5 * erfc(-v / (sigma * sqrt(2)))`.
pub fn normal_cdf(v: f64, sigma: f64) -> f64 {
    debug_assert!(sigma > 0.0, "normal_cdf needs sigma > 0");
    0.5 * statrs::function::erf::erfc(-v / (sigma * std::f64::consts::SQRT_2))
}

/// f(v) for N(0, sigma^2).
pub fn normal_pdf(v: f64, sigma: f64) -> f64 {
    debug_assert!(sigma > 0.0, "normal_pdf needs sigma > 0");
    let u = v / sigma;
    (-0.5 * u * u).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Per-edge thresholds plus the shared noise model.
#[derive(Debug, Clone)]
pub struct LinkConfig {
    /// Threshold c for each directed edge, in the union's canonical order.
    pub thresholds: DVector<f64>,
    pub noise: NoiseModel,
}

impl LinkConfig {
    pub fn new(thresholds: DVector<f64>, noise: NoiseModel) -> Result<Self> {
        if thresholds.iter().any(|c| !c.is_finite()) {
            return Err(Error::Validation("non-finite link threshold".into()));
        }
        Ok(Self { thresholds, noise })
    }

    /// Uniform threshold on d edges (Example 1 uses c_ij = -2 everywhere).
    pub fn uniform(c: f64, d: usize, noise: NoiseModel) -> Result<Self> {
        Self::new(DVector::from_element(d, c), noise)
    }
}

/// Compression encoding g(x) = K2 x.
pub fn encode(k2: &RowDVector<f64>, x: &DVector<f64>) -> Result<f64> {
    if k2.ncols() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "K2 has {} columns, state has {} rows",
            k2.ncols(),
            x.nrows()
        )));
    }
    Ok((k2 * x)[(0, 0)])
}

/// One transmission over edge `edge`: draws a noise variate and returns the
/// bit `1{z + d <= c_edge}`. The inclusive comparison matches the paper's
/// indicator (a zero-probability tie under continuous noise, kept for
/// bit-exact reproducibility).
pub fn transmit<R: rand::Rng + ?Sized>(z: f64, edge: usize, link: &LinkConfig, rng: &mut R) -> f64 {
    let c = link.thresholds[edge];
    let d = if link.noise.sigma() > 0.0 {
        rng.sample::<f64, _>(rand_distr::StandardNormal) * link.noise.sigma()
    } else {
        0.0
    };
    if z + d <= c {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn encode_basics() {
        let k2 = RowDVector::from_row_slice(&[-0.125, 0.75, -1.5, 1.0]);
        let e4 = DVector::from_row_slice(&[0.0, 0.0, 0.0, 1.0]);
        assert_abs_diff_eq!(encode(&k2, &e4).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(encode(&k2, &DVector::zeros(4)).unwrap(), 0.0);
        assert!(matches!(
            encode(&k2, &DVector::zeros(3)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn encode_example1_altitude() {
        // Published Example-1 K2 with x = (0, 0, 5, 0): z = 0.3575 * 5.
        let k2 = RowDVector::from_row_slice(&[3.8734, 0.9054, 0.3575, 0.8772]);
        let x = DVector::from_row_slice(&[0.0, 0.0, 5.0, 0.0]);
        assert_abs_diff_eq!(encode(&k2, &x).unwrap(), 1.7875, epsilon = 1e-12);
    }

    #[test]
    fn cdf_pdf_closed_forms() {
        for sigma in [0.5, 1.0, 4.0] {
            assert_abs_diff_eq!(normal_cdf(0.0, sigma), 0.5, epsilon = 1e-14);
            assert_abs_diff_eq!(
                normal_pdf(0.0, sigma),
                1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt()),
                epsilon = 1e-14
            );
        }
        // f_M of Example 1: sigma = 4 at |c| + M = 4.
        let f4 = normal_pdf(4.0, 4.0);
        assert_abs_diff_eq!(
            f4,
            (-0.5f64).exp() / (4.0 * (2.0 * std::f64::consts::PI).sqrt()),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(f4, 0.060493, epsilon = 5e-7);
        // Standard normal quantile check: F(1.96) for sigma = 1.
        assert_abs_diff_eq!(normal_cdf(1.96, 1.0), 0.9750021048517795, epsilon = 1e-10);
    }

    #[test]
    fn cdf_symmetry_and_monotonicity() {
        let sigma = 4.0;
        let mut prev = -1.0;
        for k in -40..=40 {
            let v = k as f64 * 0.25;
            let fv = normal_cdf(v, sigma);
            assert!(fv > prev, "CDF not strictly increasing at {v}");
            assert_abs_diff_eq!(fv + normal_cdf(-v, sigma), 1.0, epsilon = 1e-12);
            prev = fv;
        }
    }

    #[test]
    fn noise_model_validation() {
        assert!(matches!(NoiseModel::new(0.0), Err(Error::NonPositiveSigma(_))));
        assert!(matches!(NoiseModel::new(-1.0), Err(Error::NonPositiveSigma(_))));
        assert!(matches!(
            NoiseModel::new(f64::NAN),
            Err(Error::NonPositiveSigma(_))
        ));
        assert_eq!(NoiseModel::new(4.0).unwrap().sigma(), 4.0);
        assert_eq!(NoiseModel::noiseless().sigma(), 0.0);
    }

    #[test]
    fn transmit_deterministic_noiseless() {
        let link = LinkConfig::uniform(2.0, 3, NoiseModel::noiseless()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert_eq!(transmit(1.0, 0, &link, &mut rng), 1.0);
        assert_eq!(transmit(2.0, 1, &link, &mut rng), 1.0); // inclusive tie
        assert_eq!(transmit(2.5, 2, &link, &mut rng), 0.0);
    }

    #[test]
    fn transmit_mean_at_threshold() {
        // z = c: E[s] = 0.5 by symmetry.
        let link = LinkConfig::uniform(-2.0, 1, NoiseModel::new(4.0).unwrap()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| transmit(-2.0, 0, &link, &mut rng)).sum::<f64>() / n as f64;
        let stderr = (0.25 / n as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * stderr, "mean {mean}");
    }

    #[test]
    fn transmit_calibration_against_cdf() {
        // Frozen z: empirical bit mean vs F(c - z) at binomial stderr.
        let sigma = 4.0;
        let link = LinkConfig::uniform(-2.0, 1, NoiseModel::new(sigma).unwrap()).unwrap();
        let n = 100_000;
        for (seed, z) in [(1u64, 0.7), (2, -1.3), (3, 1.9), (4, -3.5)] {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mean: f64 =
                (0..n).map(|_| transmit(z, 0, &link, &mut rng)).sum::<f64>() / n as f64;
            let p = normal_cdf(-2.0 - z, sigma);
            let stderr = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (mean - p).abs() < 3.0 * stderr,
                "z = {z}: mean {mean} vs F(c-z) {p}"
            );
        }
    }

    #[test]
    fn per_edge_thresholds() {
        let link = LinkConfig::new(
            DVector::from_row_slice(&[-2.0, 5.0]),
            NoiseModel::noiseless(),
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert_eq!(transmit(0.0, 0, &link, &mut rng), 0.0);
        assert_eq!(transmit(0.0, 1, &link, &mut rng), 1.0);
        assert!(LinkConfig::uniform(f64::INFINITY, 2, NoiseModel::noiseless()).is_err());
    }

    #[test]
    fn substreams_are_uncorrelated() {
        // Bits on two distinct substreams over 1e5 steps: sample correlation
        // within 4 stderr of zero.
        let link = LinkConfig::uniform(0.0, 1, NoiseModel::new(1.0).unwrap()).unwrap();
        let mut r1 = ChaCha12Rng::seed_from_u64(1000);
        let mut r2 = ChaCha12Rng::seed_from_u64(1001);
        let n = 100_000;
        let mut s11 = 0.0;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for _ in 0..n {
            let a = transmit(0.0, 0, &link, &mut r1);
            let b = transmit(0.0, 0, &link, &mut r2);
            s11 += a * b;
            s1 += a;
            s2 += b;
        }
        let nf = n as f64;
        let cov = s11 / nf - (s1 / nf) * (s2 / nf);
        let corr = cov / 0.25;
        assert!(corr.abs() < 4.0 / nf.sqrt(), "correlation {corr}");
    }
}
