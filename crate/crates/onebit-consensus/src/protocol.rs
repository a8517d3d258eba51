//! Per-agent Algorithm-1 logic: the recursive-projection estimator, the
//! two-term controller, and the linear state update.
//!
//! Edge bookkeeping lives in the engine; everything here takes plain slices
//! and vectors in the union's canonical edge order so it can be tested in
//! isolation.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::channel::LinkConfig;
use crate::error::{Error, Result};

/// Clamp of v to [-M, M], the projection of Eq. (5).
pub fn project(v: f64, m: f64) -> Result<f64> {
    if !(m > 0.0) {
        return Err(Error::NonPositiveRadius(m));
    }
    Ok(v.clamp(-m, m))
}

/// The vector estimate z_hat(t), one entry per directed edge in canonical
/// order, together with its projection radius and step gain.
#[derive(Debug, Clone)]
pub struct EstimatorState {
    pub z_hat: DVector<f64>,
    pub m: f64,
    pub beta: f64,
}

impl EstimatorState {
    pub fn new(z_hat: DVector<f64>, m: f64, beta: f64) -> Result<Self> {
        if !(m > 0.0) {
            return Err(Error::NonPositiveRadius(m));
        }
        if !(beta > 0.0) {
            return Err(Error::Validation(format!(
                "estimation step coefficient beta must be positive, got {beta}"
            )));
        }
        if z_hat.iter().any(|v| v.abs() > m) {
            return Err(Error::Validation(format!(
                "initial estimate exceeds projection radius M = {m}"
            )));
        }
        Ok(Self { z_hat, m, beta })
    }

    /// One estimator sweep at paper time t:
    /// for each active edge s, `z_hat_s <- project(z_hat_s + (beta/t) (F(c_s - z_hat_s) - s_s))`.
    /// Inactive edges keep their previous estimate (the P_m mask of Eq. (8)).
    ///
    /// `bits[s]` must be finite exactly where `active[s] > 0.5`; other
    /// entries are ignored.
    pub fn step(
        &mut self,
        bits: &DVector<f64>,
        active: &DVector<f64>,
        link: &LinkConfig,
        t: u64,
    ) -> Result<()> {
        let d = self.z_hat.nrows();
        if bits.nrows() != d || active.nrows() != d || link.thresholds.nrows() != d {
            return Err(Error::MaskMismatch(format!(
                "estimate has {d} edges, bits {}, mask {}, thresholds {}",
                bits.nrows(),
                active.nrows(),
                link.thresholds.nrows()
            )));
        }
        let gain = self.beta / t as f64;
        for s in 0..d {
            if active[s] <= 0.5 {
                continue;
            }
            let bit = bits[s];
            if !bit.is_finite() {
                return Err(Error::MaskMismatch(format!(
                    "edge {s} is active but its bit is {bit}"
                )));
            }
            let innovation = link.noise.cdf(link.thresholds[s] - self.z_hat[s]) - bit;
            self.z_hat[s] = project(self.z_hat[s] + gain * innovation, self.m)?;
        }
        Ok(())
    }
}

/// Original-frame controller gains and step data.
#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub k1: RowDVector<f64>,
    pub k2: RowDVector<f64>,
    pub gamma: f64,
    pub t0: u64,
}

impl ControllerConfig {
    /// `t0` must satisfy the Lemma-2 proof condition t0 > gamma d_max - 1.
    pub fn new(k1: RowDVector<f64>, k2: RowDVector<f64>, gamma: f64, t0: u64, d_max: usize) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::Validation(format!(
                "control step coefficient gamma must be positive, got {gamma}"
            )));
        }
        if t0 < 1 || (t0 as f64) <= gamma * d_max as f64 - 1.0 {
            return Err(Error::Validation(format!(
                "t0 = {t0} violates t0 > gamma * d_max - 1 = {}",
                gamma * d_max as f64 - 1.0
            )));
        }
        Ok(Self { k1, k2, gamma, t0 })
    }

    /// Smallest admissible offset, `max(1, ceil(gamma * d_max))`.
    pub fn default_t0(gamma: f64, d_max: usize) -> u64 {
        (gamma * d_max as f64).ceil().max(1.0) as u64
    }
}

/// Eq. (6): `u_i = K1 x_i + (gamma/(t+1)) * sum_j (z_hat_ij - K2 x_i)` over
/// the current neighbor set. An empty neighbor set (legal in switching
/// sub-graphs) leaves only the stabilization term.
pub fn control_input(
    x_i: &DVector<f64>,
    neighbor_estimates: &[f64],
    cfg: &ControllerConfig,
    t: u64,
) -> f64 {
    let z_i = (&cfg.k2 * x_i)[(0, 0)];
    let consensus: f64 = neighbor_estimates.iter().map(|zh| zh - z_i).sum();
    (&cfg.k1 * x_i)[(0, 0)] + cfg.gamma / (t as f64 + 1.0) * consensus
}

/// Eq. (1): `x(t+1) = A x + B u`.
pub fn agent_step(
    x_i: &DVector<f64>,
    u_i: f64,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = x_i.nrows();
    if a.nrows() != n || a.ncols() != n || b.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "state is {n}-dimensional but A is {}x{} and B is {}",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    Ok(a * x_i + b * u_i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{LinkConfig, NoiseModel};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn project_basics() {
        assert_eq!(project(3.0, 2.0).unwrap(), 2.0);
        assert_eq!(project(-5.0, 2.0).unwrap(), -2.0);
        assert_eq!(project(1.5, 2.0).unwrap(), 1.5);
        assert!(matches!(project(1.0, 0.0), Err(Error::NonPositiveRadius(_))));
    }

    proptest! {
        #[test]
        fn projection_non_expansive(v1 in -1e6f64..1e6, v2 in -1e6f64..1e6, m in 1e-6f64..1e3) {
            let p1 = project(v1, m).unwrap();
            let p2 = project(v2, m).unwrap();
            prop_assert!((p1 - p2).abs() <= (v1 - v2).abs() + 1e-12);
            prop_assert!(p1.abs() <= m);
        }
    }

    fn unit_link(sigma: f64, c: f64, d: usize) -> LinkConfig {
        LinkConfig::uniform(c, d, NoiseModel::new(sigma).unwrap()).unwrap()
    }

    #[test]
    fn estimator_zero_innovation() {
        // Real-valued bit injection equal to F(c - z_hat): estimate unchanged.
        let link = unit_link(1.0, 0.3, 2);
        let mut est = EstimatorState::new(DVector::from_row_slice(&[0.1, -0.4]), 2.0, 5.0).unwrap();
        let bits = DVector::from_row_slice(&[
            link.noise.cdf(0.3 - 0.1),
            link.noise.cdf(0.3 + 0.4),
        ]);
        let active = DVector::from_element(2, 1.0);
        est.step(&bits, &active, &link, 7).unwrap();
        assert_abs_diff_eq!(est.z_hat[0], 0.1, epsilon = 1e-14);
        assert_abs_diff_eq!(est.z_hat[1], -0.4, epsilon = 1e-14);
    }

    #[test]
    fn estimator_direct_substitution() {
        // z_hat = 0, c = 0 (so F = 0.5), s = 1, beta = 1, t = 1, M = 10:
        // z_hat becomes -0.5.
        let link = unit_link(1.0, 0.0, 1);
        let mut est = EstimatorState::new(DVector::zeros(1), 10.0, 1.0).unwrap();
        est.step(
            &DVector::from_element(1, 1.0),
            &DVector::from_element(1, 1.0),
            &link,
            1,
        )
        .unwrap();
        assert_abs_diff_eq!(est.z_hat[0], -0.5, epsilon = 1e-14);
    }

    #[test]
    fn estimator_clamps_large_innovation() {
        // beta/t * (F - s) = 30 * (0.5 - 0) = 15 past M = 2: clamp to 2.
        let link = unit_link(1.0, 0.0, 1);
        let mut est = EstimatorState::new(DVector::zeros(1), 2.0, 30.0).unwrap();
        est.step(
            &DVector::zeros(1),
            &DVector::from_element(1, 1.0),
            &link,
            1,
        )
        .unwrap();
        assert_abs_diff_eq!(est.z_hat[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn estimator_mask_semantics() {
        let link = unit_link(1.0, 0.0, 2);
        let mut est = EstimatorState::new(DVector::from_row_slice(&[0.25, 0.75]), 2.0, 1.0).unwrap();
        // Edge 1 inactive: NaN bit there is legal and ignored.
        let bits = DVector::from_row_slice(&[1.0, f64::NAN]);
        let active = DVector::from_row_slice(&[1.0, 0.0]);
        est.step(&bits, &active, &link, 2).unwrap();
        assert_abs_diff_eq!(est.z_hat[1], 0.75, epsilon = 1e-15);
        assert!(est.z_hat[0] < 0.25);

        // NaN bit on an active edge is an error.
        let bad_active = DVector::from_row_slice(&[1.0, 1.0]);
        assert!(matches!(
            est.step(&bits, &bad_active, &link, 3),
            Err(Error::MaskMismatch(_))
        ));

        // Length mismatch.
        let short = DVector::from_row_slice(&[1.0]);
        assert!(matches!(
            est.step(&short, &bad_active, &link, 3),
            Err(Error::MaskMismatch(_))
        ));
    }

    #[test]
    fn estimator_initial_validation() {
        assert!(EstimatorState::new(DVector::from_element(3, 2.5), 2.0, 1.0).is_err());
        assert!(EstimatorState::new(DVector::zeros(3), 2.0, 0.0).is_err());
        assert!(EstimatorState::new(DVector::zeros(3), -1.0, 1.0).is_err());
    }

    fn scalar_cfg(gamma: f64) -> ControllerConfig {
        ControllerConfig::new(
            RowDVector::from_row_slice(&[0.0]),
            RowDVector::from_row_slice(&[1.0]),
            gamma,
            ControllerConfig::default_t0(gamma, 1),
            1,
        )
        .unwrap()
    }

    #[test]
    fn control_consensus_term_vanishes() {
        let k1 = RowDVector::from_row_slice(&[0.5, -0.25]);
        let k2 = RowDVector::from_row_slice(&[0.3, 1.0]);
        let cfg = ControllerConfig::new(k1.clone(), k2.clone(), 1.0, 3, 3).unwrap();
        let x = DVector::from_row_slice(&[2.0, -1.0]);
        let z = (&k2 * &x)[(0, 0)];
        let u = control_input(&x, &[z, z, z], &cfg, 10);
        assert_abs_diff_eq!(u, (&k1 * &x)[(0, 0)], epsilon = 1e-14);
        // Empty neighbor set: stabilization only.
        let u_lonely = control_input(&x, &[], &cfg, 10);
        assert_abs_diff_eq!(u_lonely, (&k1 * &x)[(0, 0)], epsilon = 1e-14);
    }

    #[test]
    fn control_scalar_substitution() {
        // n = 1, K1 = 0, K2 = 1, x = 1, one neighbor estimate 3, gamma = 1,
        // t = 1: u = (1/2)(3 - 1) = 1.
        let cfg = scalar_cfg(1.0);
        let u = control_input(&DVector::from_element(1, 1.0), &[3.0], &cfg, 1);
        assert_abs_diff_eq!(u, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn controller_t0_condition() {
        // gamma = 2.4, d_max = 4: need t0 > 8.6, so default is 10.
        assert_eq!(ControllerConfig::default_t0(2.4, 4), 10);
        assert_eq!(ControllerConfig::default_t0(1.0, 4), 4);
        assert_eq!(ControllerConfig::default_t0(0.1, 1), 1);
        let k = RowDVector::from_row_slice(&[1.0]);
        assert!(ControllerConfig::new(k.clone(), k.clone(), 2.4, 8, 4).is_err());
        assert!(ControllerConfig::new(k.clone(), k, 2.4, 9, 4).is_ok());
    }

    #[test]
    fn agent_step_basics() {
        let a = DMatrix::identity(3, 3);
        let b = DVector::from_row_slice(&[1.0, 0.0, 2.0]);
        let x = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(agent_step(&x, 0.0, &a, &b).unwrap(), x, epsilon = 1e-15);
        assert_abs_diff_eq!(
            agent_step(&DVector::zeros(3), 1.0, &a, &b).unwrap(),
            b,
            epsilon = 1e-15
        );
        assert!(matches!(
            agent_step(&DVector::zeros(2), 1.0, &a, &b),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn compressed_state_recursion_identity() {
        // Remark-6 identity on random states: with gains satisfying
        // K2 B = 1 and K2 (A + B K1) = K2,
        // K2 x(t+1) = (1 - gamma d_i/(t+1)) K2 x(t) + gamma/(t+1) sum z_hat.
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(77);
        // Brunovsky pair with b = (s - 0.5)^3 coefficients.
        let a = DMatrix::from_row_slice(4, 4, &[
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
            0.3, -0.1, 0.2, 0.4,
        ]);
        let b = DVector::from_row_slice(&[0.0, 0.0, 0.0, 1.0]);
        let bc = [-0.125, 0.75, -1.5];
        let k2 = RowDVector::from_row_slice(&[bc[0], bc[1], bc[2], 1.0]);
        let k1 = RowDVector::from_row_slice(&[
            -0.3 + bc[0],
            0.1 + bc[1] - bc[0],
            -0.2 + bc[2] - bc[1],
            -0.4 - bc[2] + 1.0,
        ]);
        let gamma = 1.3;
        let cfg = ControllerConfig::new(k1, k2.clone(), gamma, 4, 3).unwrap();
        for t in [5u64, 17, 900] {
            let x: DVector<f64> = DVector::from_fn(4, |_, _| rng.gen_range(-3.0..3.0));
            let estimates: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let u = control_input(&x, &estimates, &cfg, t);
            let x_next = agent_step(&x, u, &a, &b).unwrap();
            let z = (&k2 * &x)[(0, 0)];
            let z_next = (&k2 * &x_next)[(0, 0)];
            let d_i = estimates.len() as f64;
            let expect = (1.0 - gamma * d_i / (t as f64 + 1.0)) * z
                + gamma / (t as f64 + 1.0) * estimates.iter().sum::<f64>();
            assert_abs_diff_eq!(z_next, expect, epsilon = 1e-10);
        }
    }
}
