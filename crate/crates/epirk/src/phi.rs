//! Scalar and small-dense-matrix kernels for the exponential-like functions
//! `phi_k`, defined by `phi_0(z) = exp(z)` and the recurrence
//! `phi_k(z) = z*phi_{k+1}(z) + 1/k!`, equivalently
//! `phi_k(z) = sum_{j>=0} z^j / (j+k)!`.
//!
//! Everything here is evaluated by scaling and squaring on the augmented
//! block-triangular form: the matrix (or scalar) is scaled so its norm is at
//! most 0.5, the whole family `phi_0..phi_K` of the scaled argument is summed
//! from the Taylor series, and the family is then propagated back up with the
//! doubling identities
//!
//! ```text
//! phi_0(2x) = phi_0(x)^2
//! phi_j(2x) = 2^{-j} ( phi_0(x) phi_j(x) + sum_{i=1..j} phi_i(x) / (j-i)! )
//! ```
//!
//! which are the block rows of squaring the augmented matrix
//! `[[M, I, 0, ..], [0, 0, I, ..], ..]` without materializing it.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest phi index supported by the scalar kernels. Higher orders are never
/// needed by the schemes in this crate.
pub const MAX_PHI_INDEX: usize = 12;

/// Largest dense dimension accepted by [`phi_dense`] (the Krylov basis cap).
pub const MAX_DENSE_DIM: usize = 256;

/// Scale the argument down until its norm is at most this value.
const SCALE_TARGET: f64 = 0.5;

/// Hard cap on the number of squarings; a matrix that still has norm > 0.5
/// after 40 halvings is treated as a numeric failure.
const MAX_SQUARINGS: u32 = 40;

const FACTORIALS: [f64; 21] = {
    let mut f = [1.0f64; 21];
    let mut i = 1;
    while i < 21 {
        f[i] = f[i - 1] * i as f64;
        i += 1;
    }
    f
};

pub(crate) fn factorial(n: usize) -> f64 {
    if n < FACTORIALS.len() {
        FACTORIALS[n]
    } else {
        (FACTORIALS.len()..=n).fold(FACTORIALS[FACTORIALS.len() - 1], |acc, i| acc * i as f64)
    }
}

/// Table of `phi_0(M) .. phi_{k_max}(M)` for one dense square matrix.
///
/// Entry 0 is the matrix exponential; consecutive entries satisfy the
/// recurrence `phi_k(M) = M*phi_{k+1}(M) + I/k!`.
#[derive(Debug, Clone)]
pub struct PhiValueTable {
    values: Vec<DMatrix<f64>>,
}

impl PhiValueTable {
    /// Highest phi index stored in the table.
    pub fn max_index(&self) -> usize {
        self.values.len() - 1
    }

    /// Dimension of the underlying matrix.
    pub fn dim(&self) -> usize {
        self.values[0].nrows()
    }

    /// `phi_k(M)`; `None` if `k` exceeds [`Self::max_index`].
    pub fn entry(&self, k: usize) -> Option<&DMatrix<f64>> {
        self.values.get(k)
    }
}

/// `phi_k(z)` for a real scalar to ~1e-14 relative accuracy for |z| <= 50.
pub fn phi_scalar(k: usize, z: f64) -> Result<f64> {
    Ok(phi_scalar_complex(k, Complex64::new(z, 0.0))?.re)
}

/// `phi_k(z)` for a complex scalar.
pub fn phi_scalar_complex(k: usize, z: Complex64) -> Result<Complex64> {
    if k > MAX_PHI_INDEX {
        return Err(Error::invalid(format!(
            "phi index {k} exceeds the supported maximum {MAX_PHI_INDEX}"
        )));
    }
    if !z.re.is_finite() || !z.im.is_finite() {
        return Err(Error::numeric("phi_scalar argument is not finite"));
    }
    let r = z.norm();
    if r <= SCALE_TARGET {
        return Ok(phi_taylor_scalar(k, z));
    }
    let s = (r / SCALE_TARGET).log2().ceil() as u32;
    if s > MAX_SQUARINGS {
        return Err(Error::numeric(format!(
            "phi_scalar argument with |z| = {r:.3e} exceeds the scaling limit"
        )));
    }
    let x = z / (2.0f64.powi(s as i32));
    let mut family: Vec<Complex64> = (0..=k).map(|j| phi_taylor_scalar(j, x)).collect();
    for _ in 0..s {
        family = double_scalar_family(&family);
    }
    Ok(family[k])
}

fn phi_taylor_scalar(k: usize, z: Complex64) -> Complex64 {
    // sum_j z^j/(j+k)!; |z| <= 0.5 keeps the series benign.
    let mut acc = Complex64::new(1.0 / factorial(k), 0.0);
    let mut term = Complex64::new(1.0, 0.0);
    for j in 1..=34 {
        term *= z;
        let contrib = term / factorial(j + k);
        acc += contrib;
        if contrib.norm() <= f64::EPSILON * 0.25 * acc.norm() {
            break;
        }
    }
    acc
}

fn double_scalar_family(family: &[Complex64]) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(family.len());
    out.push(family[0] * family[0]);
    for (j, phi_j) in family.iter().enumerate().skip(1) {
        let mut acc = family[0] * phi_j;
        for (i, phi_i) in family.iter().enumerate().take(j + 1).skip(1) {
            acc += phi_i / factorial(j - i);
        }
        out.push(acc / 2.0f64.powi(j as i32));
    }
    out
}

/// Computes the full table `phi_0(M) .. phi_{k_max}(M)` for a small dense
/// square matrix via scaling and squaring of the augmented block form.
pub fn phi_dense(k_max: usize, m: &DMatrix<f64>) -> Result<PhiValueTable> {
    if m.nrows() != m.ncols() {
        return Err(Error::invalid(format!(
            "phi_dense requires a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Err(Error::invalid("phi_dense requires a non-empty matrix"));
    }
    if m.nrows() > MAX_DENSE_DIM {
        return Err(Error::invalid(format!(
            "phi_dense dimension {} exceeds the cap {MAX_DENSE_DIM}",
            m.nrows()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric("phi_dense input contains NaN/Inf"));
    }
    let norm = one_norm(m);
    let s = if norm <= SCALE_TARGET {
        0
    } else {
        (norm / SCALE_TARGET).log2().ceil() as u32
    };
    if s > MAX_SQUARINGS {
        return Err(Error::numeric(format!(
            "phi_dense input 1-norm {norm:.3e} exceeds the scaling limit"
        )));
    }
    let x = m / 2.0f64.powi(s as i32);
    let mut family = phi_taylor_family(k_max, &x);
    for _ in 0..s {
        family = double_matrix_family(&family);
    }
    Ok(PhiValueTable { values: family })
}

fn phi_taylor_family(k_max: usize, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let n = x.nrows();
    let mut family: Vec<DMatrix<f64>> = (0..=k_max)
        .map(|k| DMatrix::identity(n, n) / factorial(k))
        .collect();
    let mut power = DMatrix::<f64>::identity(n, n);
    for j in 1..=34 {
        power = &power * x;
        let pnorm = one_norm(&power);
        for (k, phi) in family.iter_mut().enumerate() {
            *phi += &power / factorial(j + k);
        }
        if pnorm / factorial(j + 1) <= f64::EPSILON * 0.25 {
            break;
        }
    }
    family
}

fn double_matrix_family(family: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(family.len());
    out.push(&family[0] * &family[0]);
    for (j, phi_j) in family.iter().enumerate().skip(1) {
        let mut acc = &family[0] * phi_j;
        for (i, phi_i) in family.iter().enumerate().take(j + 1).skip(1) {
            acc += phi_i / factorial(j - i);
        }
        out.push(acc / 2.0f64.powi(j as i32));
    }
    out
}

/// One step of the downward recurrence: `phi_k(M) = M*phi_{k+1}(M) + I/k!`,
/// reusing the `phi_{k+1}` entry already present in `table`. This is what lets
/// an embedded estimator share the basis built for the highest phi order.
pub fn phi_downshift(table: &PhiValueTable, k: usize, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let higher = table.entry(k + 1).ok_or_else(|| {
        Error::invalid(format!(
            "phi_downshift needs table entry {} but max index is {}",
            k + 1,
            table.max_index()
        ))
    })?;
    if m.nrows() != higher.nrows() || m.ncols() != higher.ncols() {
        return Err(Error::invalid("phi_downshift matrix dimension mismatch"));
    }
    let n = m.nrows();
    Ok(m * higher + DMatrix::<f64>::identity(n, n) / factorial(k))
}

pub(crate) fn one_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_matrix(rng: &mut StdRng, n: usize, scale: f64) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let norm = one_norm(&m);
        m * (scale / norm)
    }

    #[test]
    fn scalar_values_at_zero() {
        assert_eq!(phi_scalar(1, 0.0).unwrap(), 1.0);
        assert_relative_eq!(phi_scalar(3, 0.0).unwrap(), 1.0 / 6.0, max_relative = 1e-15);
    }

    #[test]
    fn scalar_closed_forms_at_one() {
        let e = std::f64::consts::E;
        assert_relative_eq!(phi_scalar(1, 1.0).unwrap(), e - 1.0, max_relative = 1e-14);
        // phi_2(1) = e - 2 via the recurrence phi_1(1) = phi_2(1) + 1.
        assert_relative_eq!(phi_scalar(2, 1.0).unwrap(), e - 2.0, max_relative = 1e-14);
    }

    #[test]
    fn scalar_matches_quadrature_oracle() {
        // Independent oracle: adaptive Simpson quadrature of
        // int_0^1 exp(z(1-t)) t^{k-1}/(k-1)! dt.
        fn integrand(k: usize, z: f64, t: f64) -> f64 {
            (z * (1.0 - t)).exp() * t.powi(k as i32 - 1) / factorial(k - 1)
        }
        #[allow(clippy::too_many_arguments)]
        fn simpson(k: usize, z: f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, eps: f64) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = integrand(k, z, lm);
            let frm = integrand(k, z, rm);
            let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if (left + right - whole).abs() < 15.0 * eps || b - a < 1e-7 {
                left + right + (left + right - whole) / 15.0
            } else {
                simpson(k, z, a, m, fa, flm, fm, eps / 2.0)
                    + simpson(k, z, m, b, fm, frm, fb, eps / 2.0)
            }
        }
        for &(k, z) in &[(1usize, 1.0), (2, 1.0), (3, -2.5), (5, 4.0), (2, -7.0)] {
            let fa = integrand(k, z, 0.0);
            let fm = integrand(k, z, 0.5);
            let fb = integrand(k, z, 1.0);
            let oracle = simpson(k, z, 0.0, 1.0, fa, fm, fb, 1e-13);
            assert_relative_eq!(phi_scalar(k, z).unwrap(), oracle, max_relative = 1e-9);
        }
    }

    #[test]
    fn scalar_taylor_limit_near_zero() {
        // |phi_k(z) - 1/k!| <= 2|z|/(k+1)! for tiny z.
        for k in 0..=6 {
            for &z in &[1e-8, -1e-8, 1e-10] {
                let v = phi_scalar(k, z).unwrap();
                assert!((v - 1.0 / factorial(k)).abs() <= 2.0 * z.abs() / factorial(k + 1));
            }
        }
    }

    #[test]
    fn scalar_recurrence_over_range() {
        for k in 0..MAX_PHI_INDEX {
            for &z in &[-50.0, -7.3, -0.49, 0.02, 0.5, 3.7, 50.0] {
                let lo = phi_scalar(k, z).unwrap();
                let hi = phi_scalar(k + 1, z).unwrap();
                let resid = lo - (z * hi + 1.0 / factorial(k));
                assert!(
                    resid.abs() <= 1e-14 * lo.abs().max(1.0),
                    "k={k} z={z} resid={resid:e}"
                );
            }
        }
    }

    #[test]
    fn scalar_complex_argument() {
        let z = Complex64::new(-3.0, 40.0);
        let lo = phi_scalar_complex(2, z).unwrap();
        let hi = phi_scalar_complex(3, z).unwrap();
        let resid = (lo - (z * hi + Complex64::new(0.5, 0.0))).norm();
        assert!(resid <= 1e-13 * lo.norm().max(1.0));
    }

    #[test]
    fn scalar_rejects_large_index() {
        assert!(matches!(
            phi_scalar(13, 1.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn dense_zero_matrix() {
        let table = phi_dense(2, &DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(table.entry(0).unwrap()[(0, 0)], 1.0);
        assert_eq!(table.entry(1).unwrap()[(0, 0)], 1.0);
        assert_eq!(table.entry(2).unwrap()[(0, 0)], 0.5);
    }

    #[test]
    fn dense_diagonal_reduces_to_scalar() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0]));
        let table = phi_dense(1, &m).unwrap();
        let p1 = table.entry(1).unwrap();
        let e = std::f64::consts::E;
        assert_relative_eq!(p1[(0, 0)], e - 1.0, max_relative = 1e-13);
        assert_relative_eq!(p1[(1, 1)], 1.0 - 1.0 / e, max_relative = 1e-13);
        assert_eq!(p1[(0, 1)], 0.0);
    }

    #[test]
    fn dense_scalar_consistency_on_diagonals() {
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..5 {
            let d: Vec<f64> = (0..6).map(|_| rng.gen_range(-8.0..8.0)).collect();
            let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d.clone()));
            let table = phi_dense(4, &m).unwrap();
            for k in 0..=4 {
                let pk = table.entry(k).unwrap();
                for (i, &di) in d.iter().enumerate() {
                    let want = phi_scalar(k, di).unwrap();
                    assert_relative_eq!(pk[(i, i)], want, max_relative = 1e-13);
                }
            }
        }
    }

    #[test]
    fn dense_recurrence_closure() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..6 {
            let scale = rng.gen_range(0.1..5.0);
            let m = random_matrix(&mut rng, 6, scale);
            let k_max = 5;
            let table = phi_dense(k_max, &m).unwrap();
            for k in 0..k_max {
                let lhs = table.entry(k).unwrap();
                let rhs = &m * table.entry(k + 1).unwrap()
                    + DMatrix::<f64>::identity(6, 6) / factorial(k);
                let resid = (lhs - &rhs).amax();
                assert!(
                    resid <= 1e-12 * lhs.amax().max(1.0),
                    "k={k} resid={resid:e}"
                );
            }
        }
    }

    #[test]
    fn dense_rejects_bad_inputs() {
        assert!(matches!(
            phi_dense(1, &DMatrix::zeros(2, 3)),
            Err(Error::InvalidArgument(_))
        ));
        let huge = DMatrix::from_element(2, 2, 1e30);
        assert!(matches!(
            phi_dense(1, &huge),
            Err(Error::NumericFailure(_))
        ));
    }

    #[test]
    fn downshift_zero_matrix_gives_identity() {
        let table = phi_dense(2, &DMatrix::zeros(3, 3)).unwrap();
        let shifted = phi_downshift(&table, 1, &DMatrix::zeros(3, 3)).unwrap();
        assert_relative_eq!(
            (shifted - DMatrix::<f64>::identity(3, 3)).amax(),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn downshift_scalar_chain() {
        // phi_3(1) = e - 1 - 1 - 1/2 via downshift from phi_4(1).
        let m = DMatrix::from_element(1, 1, 1.0);
        let table = phi_dense(4, &m).unwrap();
        let p3 = phi_downshift(&table, 3, &m).unwrap();
        let want = std::f64::consts::E - 2.5;
        assert_relative_eq!(p3[(0, 0)], want, max_relative = 1e-13);
    }

    #[test]
    fn downshift_matches_direct_recomputation() {
        let mut rng = StdRng::seed_from_u64(3);
        let m = random_matrix(&mut rng, 4, 2.0);
        let table = phi_dense(3, &m).unwrap();
        let shifted = phi_downshift(&table, 2, &m).unwrap();
        let direct = table.entry(2).unwrap();
        assert!((shifted - direct).amax() <= 1e-12);
    }

    #[test]
    fn downshift_missing_entry_errors() {
        let m = DMatrix::zeros(2, 2);
        let table = phi_dense(1, &m).unwrap();
        assert!(matches!(
            phi_downshift(&table, 1, &m),
            Err(Error::InvalidArgument(_))
        ));
    }
}
