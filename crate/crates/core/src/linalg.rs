//! Small dense linear algebra used by the likelihood estimators and proposals.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::CoreError;

/// Relative diagonal jitter (times `trace / d`) applied before factorising a covariance.
pub const COV_JITTER: f64 = 1e-10;

/// Sample mean and unbiased sample covariance (divisor `n - 1`) of the rows.
pub fn mean_and_cov<R: AsRef<[f64]>>(rows: &[R]) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.len();
    assert!(n >= 2, "need at least two rows");
    let d = rows[0].as_ref().len();
    let mut mean = DVector::zeros(d);
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.as_ref()) {
            *m += v;
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    let mut c = vec![0.0; d];
    for r in rows {
        for (ci, (v, m)) in c.iter_mut().zip(r.as_ref().iter().zip(mean.iter())) {
            *ci = v - m;
        }
        for i in 0..d {
            for j in 0..=i {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = cov[(i, j)] / (n as f64 - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    (mean, cov)
}

/// Lower Cholesky factor of `cov + jitter * trace/d * I`.
pub fn jittered_cholesky(cov: &DMatrix<f64>, rel_jitter: f64) -> Result<DMatrix<f64>, CoreError> {
    let d = cov.nrows();
    let trace = cov.trace();
    if !(trace.is_finite() && trace > 0.0) {
        return Err(CoreError::NotPositiveDefinite);
    }
    let mut a = cov.clone();
    let eps = rel_jitter * trace / d as f64;
    for i in 0..d {
        a[(i, i)] += eps;
    }
    a.cholesky()
        .map(|c| c.l())
        .ok_or(CoreError::NotPositiveDefinite)
}

/// Log density of `N(mean, cov)` at `x` given the lower Cholesky factor of `cov`.
pub fn gaussian_ln_pdf_chol(x: &[f64], mean: &[f64], chol_l: &DMatrix<f64>) -> f64 {
    let d = x.len();
    let diff = DVector::from_iterator(d, x.iter().zip(mean).map(|(a, b)| a - b));
    let z = chol_l
        .solve_lower_triangular(&diff)
        .expect("cholesky factor has a positive diagonal");
    let log_det: f64 = 2.0 * chol_l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + z.norm_squared())
}

/// Log density of `N(mean, cov)` at `x`, factorising with [`COV_JITTER`].
pub fn gaussian_ln_pdf(x: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> Result<f64, CoreError> {
    if x.len() != mean.len() || cov.nrows() != x.len() || cov.ncols() != x.len() {
        return Err(CoreError::DimensionMismatch {
            expected: mean.len(),
            got: x.len(),
        });
    }
    let l = jittered_cholesky(cov, COV_JITTER)?;
    Ok(gaussian_ln_pdf_chol(x, mean, &l))
}

/// A square-root factor `F` with `F Fᵀ = cov` for a symmetric positive
/// semidefinite matrix. Tiny negative eigenvalues from rounding are clamped;
/// anything clearly negative is an error. The zero matrix yields a zero factor.
pub fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>, CoreError> {
    let d = cov.nrows();
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NotPositiveDefinite);
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut f = eig.eigenvectors.clone();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -1e-8 * scale.max(f64::MIN_POSITIVE) {
            return Err(CoreError::NotPositiveDefinite);
        }
        let s = lambda.max(0.0).sqrt();
        for i in 0..d {
            f[(i, k)] *= s;
        }
    }
    Ok(f)
}

/// `mean + factor * z` with `z` standard normal.
pub fn sample_correlated<R: Rng + ?Sized>(rng: &mut R, mean: &[f64], factor: &DMatrix<f64>) -> Vec<f64> {
    let d = mean.len();
    let z = DVector::from_iterator(d, (0..d).map(|_| standard_normal(rng)));
    let step = factor * z;
    mean.iter().zip(step.iter()).map(|(m, s)| m + s).collect()
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    #[test]
    fn standard_normal_log_density_at_mean() {
        let cov = DMatrix::identity(3, 3);
        let lp = gaussian_ln_pdf(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &cov).unwrap();
        let expected = -1.5 * (2.0 * std::f64::consts::PI).ln();
        // jitter shifts log det by 3 * 1e-10
        assert!((lp - expected).abs() < 1e-9);
    }

    #[test]
    fn zero_covariance_is_singular() {
        let cov = DMatrix::zeros(2, 2);
        assert_eq!(
            gaussian_ln_pdf(&[0.0, 0.0], &[0.0, 0.0], &cov),
            Err(CoreError::NotPositiveDefinite)
        );
    }

    #[test]
    fn unbiased_covariance() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 2.0], vec![5.0, 8.0]];
        let (m, c) = mean_and_cov(&rows);
        assert_eq!(m.as_slice(), &[3.0, 4.0]);
        assert!((c[(0, 0)] - 4.0).abs() < 1e-12);
        assert!((c[(1, 1)] - 12.0).abs() < 1e-12);
        assert!((c[(0, 1)] - 6.0).abs() < 1e-12);
        assert_eq!(c[(0, 1)], c[(1, 0)]);
    }

    #[test]
    fn psd_factor_reconstructs() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let f = psd_factor(&cov).unwrap();
        assert!((&f * f.transpose() - &cov).norm() < 1e-12);
        let zero = DMatrix::zeros(2, 2);
        assert_eq!(psd_factor(&zero).unwrap(), DMatrix::zeros(2, 2));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(psd_factor(&bad).is_err());
    }

    #[test]
    fn correlated_draws_have_target_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let f = psd_factor(&cov).unwrap();
        let mut rng = SeedStream::new(8).rng();
        let rows: Vec<Vec<f64>> = (0..50_000)
            .map(|_| sample_correlated(&mut rng, &[1.0, -1.0], &f))
            .collect();
        let (m, c) = mean_and_cov(&rows);
        assert!((m[0] - 1.0).abs() < 0.03 && (m[1] + 1.0).abs() < 0.03);
        assert!((&c - &cov).abs().max() < 0.05);
    }
}
