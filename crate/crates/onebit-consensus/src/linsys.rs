//! Linear-system representation, controllability, Brunovsky canonicalization,
//! gain synthesis, compression-polynomial stability, and zero-order-hold
//! discretization.

use nalgebra::{Complex, DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    Continuous,
    Discrete,
}

/// Single-input linear system `x(t+1) = A x(t) + B u(t)` (or its
/// continuous-time counterpart when `kind` is `Continuous`).
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub kind: SystemKind,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, kind: SystemKind) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.nrows() == 0 {
            return Err(Error::DimensionMismatch("state dimension must be >= 1".into()));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "B must have {} rows, got {}",
                a.nrows(),
                b.nrows()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch("A and B entries must be finite".into()));
        }
        Ok(Self { a, b, kind })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// `[B, AB, ..., A^{n-1}B]`.
pub fn controllability_matrix(sys: &LinearSystem) -> DMatrix<f64> {
    let n = sys.dim();
    let mut cols = DMatrix::zeros(n, n);
    let mut v = sys.b.clone();
    for k in 0..n {
        cols.set_column(k, &v);
        v = &sys.a * v;
    }
    cols
}

/// Numerical rank of the controllability matrix.
///
/// Threshold is `n * machine_epsilon * sigma_max`, the usual rank-revealing
/// convention. The system is controllable iff the result equals `n`.
pub fn controllability_rank(sys: &LinearSystem) -> usize {
    let c = controllability_matrix(sys);
    let n = sys.dim();
    let sv = c.singular_values();
    let sigma_max = sv.max();
    let tol = n as f64 * f64::EPSILON * sigma_max;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Characteristic polynomial of `a` by the Faddeev-LeVerrier recursion.
///
/// Returns `[c_1, ..., c_n]` with `det(sI - A) = s^n + c_1 s^{n-1} + ... + c_n`.
pub fn characteristic_polynomial(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let eye = DMatrix::identity(n, n);
    let mut coeffs = Vec::with_capacity(n);
    let mut m = DMatrix::zeros(n, n);
    let mut c = 1.0;
    for k in 1..=n {
        m = a * m + &eye * c;
        c = -(a * &m).trace() / k as f64;
        coeffs.push(c);
    }
    coeffs
}

/// Brunovsky canonical form of a controllable system.
///
/// `p * a * p^{-1} = a_tilde` (companion), `p * b = b_tilde` (last unit
/// vector). The companion last row holds `[a_1, ..., a_n]` with
/// `det(sI - a_tilde) = s^n - a_n s^{n-1} - ... - a_1`.
#[derive(Debug, Clone)]
pub struct CanonicalForm {
    pub p: DMatrix<f64>,
    pub a_tilde: DMatrix<f64>,
    pub b_tilde: DVector<f64>,
    pub source: LinearSystem,
    /// 2-norm condition number of the source controllability matrix.
    pub condition_number: f64,
}

impl CanonicalForm {
    /// Condition of the controllability matrix exceeded 1e12; the transform
    /// is still returned but residuals may be poor.
    pub fn is_ill_conditioned(&self) -> bool {
        self.condition_number > 1e12
    }

    /// Last-row coefficients `[a_1, ..., a_n]` of the companion matrix.
    pub fn companion_coefficients(&self) -> Vec<f64> {
        let n = self.a_tilde.nrows();
        (0..n).map(|j| self.a_tilde[(n - 1, j)]).collect()
    }

    /// Max of the relative Frobenius residuals of `P A P^{-1} - A_tilde`
    /// and `P B - B_tilde`.
    pub fn residual(&self) -> f64 {
        let p_inv = self
            .p
            .clone()
            .try_inverse()
            .expect("P is nonsingular by construction");
        let ra = (&self.p * &self.source.a * p_inv - &self.a_tilde).norm()
            / self.a_tilde.norm().max(1.0);
        let rb = (&self.p * &self.source.b - &self.b_tilde).norm() / self.b_tilde.norm();
        ra.max(rb)
    }
}

/// Companion matrix with ones on the superdiagonal and `[a_1, ..., a_n]` as
/// the last row, plus the last-unit-vector input map.
fn companion_pair(a_coeffs: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let n = a_coeffs.len();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        a[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = a_coeffs[j];
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    (a, b)
}

/// Transform a controllable system to Brunovsky canonical form.
///
/// The transform is fixed deterministically as `P = C_tilde * C^{-1}` where
/// `C` and `C_tilde` are the controllability matrices of the source and the
/// companion pair.
pub fn to_brunovsky(sys: &LinearSystem) -> Result<CanonicalForm> {
    let n = sys.dim();
    let rank = controllability_rank(sys);
    if rank < n {
        return Err(Error::NotControllable { n, rank });
    }
    // det(sI - A) = s^n + c_1 s^{n-1} + ... + c_n, so a_i = -c_{n-i+1}.
    let c = characteristic_polynomial(&sys.a);
    let a_coeffs: Vec<f64> = (0..n).map(|i| -c[n - 1 - i]).collect();
    let (a_tilde, b_tilde) = companion_pair(&a_coeffs);

    let ctrb = controllability_matrix(sys);
    let sv = ctrb.singular_values();
    let condition_number = sv.max() / sv.min().max(f64::MIN_POSITIVE);
    let ctrb_inv = ctrb
        .try_inverse()
        .ok_or(Error::NotControllable { n, rank })?;
    let canon_sys = LinearSystem::new(a_tilde.clone(), b_tilde.clone(), sys.kind)?;
    let p = controllability_matrix(&canon_sys) * ctrb_inv;

    Ok(CanonicalForm {
        p,
        a_tilde,
        b_tilde,
        source: sys.clone(),
        condition_number,
    })
}

/// Result of the Schur-stability check on compression coefficients.
#[derive(Debug, Clone)]
pub struct CompressionStability {
    pub stable: bool,
    pub roots: Vec<Complex<f64>>,
}

/// Roots of `s^{n-1} + b_{n-1} s^{n-2} + ... + b_2 s + b_1`, computed as
/// eigenvalues of the companion matrix. Stable iff every root is strictly
/// inside the unit circle (margin 1e-9). Empty `b` (n = 1) is stable.
pub fn check_compression_stability(b: &[f64]) -> CompressionStability {
    let m = b.len();
    if m == 0 {
        return CompressionStability {
            stable: true,
            roots: Vec::new(),
        };
    }
    let roots = monic_roots(b);
    let stable = roots.iter().all(|r| r.norm() < 1.0 - 1e-9);
    CompressionStability { stable, roots }
}

/// Durand-Kerner roots of the monic polynomial with ascending coefficients
/// `b` (constant term first). Iteration count is bounded, so multiple roots
/// resolve to limited accuracy; ample for a stability verdict with margin.
fn monic_roots(b: &[f64]) -> Vec<Complex<f64>> {
    let m = b.len();
    let eval = |z: Complex<f64>| {
        let mut v = Complex::new(1.0, 0.0);
        for &c in b.iter().rev() {
            v = v * z + c;
        }
        v
    };
    let seed = Complex::new(0.4, 0.9);
    let mut roots: Vec<Complex<f64>> = (0..m).map(|k| seed.powu(k as u32 + 1)).collect();
    for _ in 0..500 {
        let mut step = 0.0f64;
        for i in 0..m {
            let mut denom = Complex::new(1.0, 0.0);
            for j in 0..m {
                if j != i {
                    denom *= roots[i] - roots[j];
                }
            }
            if denom.norm() == 0.0 {
                continue;
            }
            let d = eval(roots[i]) / denom;
            roots[i] -= d;
            step = step.max(d.norm());
        }
        if step < 1e-13 {
            break;
        }
    }
    roots
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Canonical,
    Original,
}

/// Stabilization gain `K1` and compression gain `K2`, together with the
/// compression coefficients that generated them.
#[derive(Debug, Clone)]
pub struct GainPair {
    pub k1: RowDVector<f64>,
    pub k2: RowDVector<f64>,
    pub b: Vec<f64>,
    pub frame: Frame,
}

/// Gains in both frames; `original = canonical * P`.
#[derive(Debug, Clone)]
pub struct GainSet {
    pub canonical: GainPair,
    pub original: GainPair,
}

/// Residuals of the identities `K2 (A + B K1) = K2` and `K2 B = 1`.
///
/// Returns `(|K2 B - 1|, ||K2 (A + B K1) - K2||_inf)`.
pub fn gain_identity_residuals(
    k1: &RowDVector<f64>,
    k2: &RowDVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> (f64, f64) {
    let k2b = (k2 * b)[(0, 0)];
    let closed = a + b * k1;
    let fp = k2 * closed - k2;
    (
        (k2b - 1.0).abs(),
        fp.iter().fold(0.0f64, |m, v| m.max(v.abs())),
    )
}

/// Synthesize the gain pair from the canonical form and stable compression
/// coefficients.
///
/// Canonical frame: `K2 = [b_1, ..., b_{n-1}, 1]` and
/// `K1 = [-a_1+b_1, -a_2+b_2-b_1, ..., -a_{n-1}+b_{n-1}-b_{n-2}, -a_n-b_{n-1}+1]`.
/// Original frame: `K1 P`, `K2 P`. Both frames are post-verified against the
/// fixed-point identities at tolerance 1e-6.
pub fn synthesize_gains(canon: &CanonicalForm, b: &[f64]) -> Result<GainSet> {
    let n = canon.a_tilde.nrows();
    if b.len() != n - 1 {
        return Err(Error::DimensionMismatch(format!(
            "expected {} compression coefficients, got {}",
            n - 1,
            b.len()
        )));
    }
    let stab = check_compression_stability(b);
    if !stab.stable {
        return Err(Error::UnstableCompression(
            stab.roots.iter().map(|r| r.norm()).collect(),
        ));
    }
    let a = canon.companion_coefficients();

    let mut k2 = RowDVector::zeros(n);
    for i in 0..n - 1 {
        k2[i] = b[i];
    }
    k2[n - 1] = 1.0;

    let mut k1 = RowDVector::zeros(n);
    for i in 0..n {
        let b_i = if i < n - 1 { b[i] } else { 1.0 };
        let b_prev = if i == 0 { 0.0 } else { b[i - 1] };
        k1[i] = -a[i] + b_i - b_prev;
    }

    let canonical = GainPair {
        k1: k1.clone(),
        k2: k2.clone(),
        b: b.to_vec(),
        frame: Frame::Canonical,
    };
    let original = GainPair {
        k1: &k1 * &canon.p,
        k2: &k2 * &canon.p,
        b: b.to_vec(),
        frame: Frame::Original,
    };

    const TOL: f64 = 1e-6;
    let checks = [
        gain_identity_residuals(&canonical.k1, &canonical.k2, &canon.a_tilde, &canon.b_tilde),
        gain_identity_residuals(&original.k1, &original.k2, &canon.source.a, &canon.source.b),
    ];
    for (k2b_res, fp_res) in checks {
        if k2b_res > TOL || fp_res > TOL {
            return Err(Error::IdentityViolation {
                k2b_residual: k2b_res,
                fixed_point_residual: fp_res,
                tolerance: TOL,
            });
        }
    }

    Ok(GainSet {
        canonical,
        original,
    })
}

/// Recover the compression coefficients implied by an original-frame `K2`.
///
/// `K2 P^{-1}` must be proportional to `[b_1, ..., b_{n-1}, 1]`; the last
/// entry is used as the normalizer.
pub fn infer_compression_coefficients(
    canon: &CanonicalForm,
    k2_original: &RowDVector<f64>,
) -> Result<Vec<f64>> {
    let p_inv = canon
        .p
        .clone()
        .try_inverse()
        .expect("P is nonsingular by construction");
    let k2c = k2_original * p_inv;
    let n = k2c.ncols();
    let last = k2c[n - 1];
    if last.abs() < 1e-9 {
        return Err(Error::Validation(
            "supplied K2 has vanishing last canonical entry; not a compression gain".into(),
        ));
    }
    Ok((0..n - 1).map(|i| k2c[i] / last).collect())
}

/// Matrix exponential by scaling-and-squaring with a truncated Taylor series.
///
/// Adequate at the dimensions used here (n <= 8 plus the ZOH augmentation);
/// the series is run to a 1e-12 increment residual.
pub fn matrix_exponential(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.abs().row_sum().max();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = m / 2f64.powi(squarings as i32);

    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..200 {
        term = &term * &scaled / k as f64;
        result += &term;
        if term.norm() < 1e-12 * result.norm().max(1.0) {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Zero-order-hold discretization at sampling period `t_sample`.
///
/// `A_d = exp(A_c T)` and `B_d = (integral_0^T exp(A_c t) dt) B_c`, computed
/// via the exponential of the augmented matrix `[[A_c, B_c], [0, 0]] * T`.
pub fn zoh_discretize(sys: &LinearSystem, t_sample: f64) -> Result<LinearSystem> {
    if sys.kind != SystemKind::Continuous {
        return Err(Error::Validation(
            "zoh_discretize requires a continuous-time system".into(),
        ));
    }
    if t_sample <= 0.0 {
        return Err(Error::NonPositivePeriod(t_sample));
    }
    let n = sys.dim();
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&sys.a);
    aug.view_mut((0, n), (n, 1)).copy_from(&sys.b);
    let e = matrix_exponential(&(aug * t_sample));
    let a_d = e.view((0, 0), (n, n)).into_owned();
    let b_d = DVector::from_iterator(n, e.view((0, n), (n, 1)).iter().copied());
    LinearSystem::new(a_d, b_d, SystemKind::Discrete)
}
