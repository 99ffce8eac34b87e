//! Comparison metrics between integrated response operators.
//!
//! Matrix norms and inner products are Frobenius (entrywise Euclidean).

use crate::response::IntegratedResponse;
use crate::{Error, Matrix, Result, Scalar};

fn common_len<S: Scalar>(a: &IntegratedResponse<S>, b: &IntegratedResponse<S>) -> Result<usize> {
    if !a.grid.matches(&b.grid) {
        return Err(Error::GridMismatch);
    }
    Ok(a.matrices.len().min(b.matrices.len()))
}

fn shape_check<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            what: "operator shape",
            expected: b.nrows() * b.ncols(),
            got: a.nrows() * a.ncols(),
        });
    }
    Ok(())
}

/// `‖A − B‖ / ‖B‖`, with 0 when both vanish and +∞ when only `B` does.
pub fn relative_error<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> S {
    let num = (a - b).norm();
    let den = b.norm();
    if den == S::zero() {
        if num == S::zero() {
            S::zero()
        } else {
            S::lit(f64::INFINITY)
        }
    } else {
        num / den
    }
}

/// `(A, B) / (‖A‖ ‖B‖)`, or `None` when either norm vanishes.
pub fn matrix_correlation<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> Option<S> {
    let (na, nb) = (a.norm(), b.norm());
    if na == S::zero() || nb == S::zero() {
        return None;
    }
    Some(a.dot(b) / (na * nb))
}

/// Relative L2 error of `fdt` against `ideal` at each grid time.
///
/// Series that were truncated are compared over their common prefix.
pub fn l2_relative_error<S: Scalar>(fdt: &IntegratedResponse<S>, ideal: &IntegratedResponse<S>) -> Result<Vec<S>> {
    let n = common_len(fdt, ideal)?;
    (0..n)
        .map(|i| {
            shape_check(&fdt.matrices[i], &ideal.matrices[i])?;
            Ok(relative_error(&fdt.matrices[i], &ideal.matrices[i]))
        })
        .collect()
}

/// Correlation of `fdt` with `ideal` at each grid time; `None` where undefined.
pub fn correlation<S: Scalar>(fdt: &IntegratedResponse<S>, ideal: &IntegratedResponse<S>) -> Result<Vec<Option<S>>> {
    let n = common_len(fdt, ideal)?;
    (0..n)
        .map(|i| {
            shape_check(&fdt.matrices[i], &ideal.matrices[i])?;
            Ok(matrix_correlation(&fdt.matrices[i], &ideal.matrices[i]))
        })
        .collect()
}

/// Average of each cyclic diagonal: `out[d] = (1/N) Σ_k M[k, (k+d) mod N]`.
pub fn diagonal_average<S: Scalar>(m: &Matrix<S>) -> Result<Vec<S>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Dimension {
            what: "square matrix columns",
            expected: n,
            got: m.ncols(),
        });
    }
    let inv = S::one() / S::from_count(n.max(1));
    Ok((0..n)
        .map(|d| (0..n).fold(S::zero(), |acc, k| acc + m[(k, (k + d) % n)]) * inv)
        .collect())
}

/// Nearest circulant matrix in Frobenius norm: every cyclic diagonal is
/// replaced by its average. For shift-equivariant models this keeps the
/// exact operator unchanged and averages out estimation noise.
pub fn circulant_projection<S: Scalar>(m: &Matrix<S>) -> Result<Matrix<S>> {
    let profile = diagonal_average(m)?;
    let n = m.nrows();
    Ok(Matrix::from_fn(n, n, |i, j| profile[(j + n - i) % n]))
}

/// Applies [`circulant_projection`] to every time of a response.
pub fn symmetrize<S: Scalar>(r: &IntegratedResponse<S>) -> Result<IntegratedResponse<S>> {
    let matrices = r
        .matrices
        .iter()
        .map(circulant_projection)
        .collect::<Result<Vec<_>>>()?;
    let std_errors = match &r.std_errors {
        // the mean of the entry errors bounds the error of their average
        Some(se) => Some(se.iter().map(circulant_projection).collect::<Result<Vec<_>>>()?),
        None => None,
    };
    Ok(IntegratedResponse {
        grid: r.grid.clone(),
        algorithm: r.algorithm,
        matrices,
        std_errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::response::{Algorithm, ResponseGrid};
    use proptest::prelude::*;

    fn single(m: Matrix<f64>) -> IntegratedResponse<f64> {
        IntegratedResponse {
            grid: ResponseGrid::new(1.0, 2).unwrap(),
            algorithm: Algorithm::Sst,
            matrices: vec![Matrix::zeros(m.nrows(), m.ncols()), m],
            std_errors: None,
        }
    }

    #[test]
    fn l2_error_cases() {
        let a = single(Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let b = single(Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]));
        assert_eq!(l2_relative_error(&a, &b).unwrap(), vec![0.0, 0.5]);
        assert_eq!(l2_relative_error(&b, &b).unwrap(), vec![0.0, 0.0]);
        let z = single(Matrix::zeros(2, 2));
        assert_eq!(l2_relative_error(&z, &b).unwrap()[1], 1.0);
    }

    #[test]
    fn correlation_cases() {
        let b = single(Matrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 2.0]));
        let c = correlation(&b, &b).unwrap();
        assert_eq!(c[0], None);
        assert!((c[1].unwrap() - 1.0).abs() < 1e-15);
        let scaled = single(b.matrices[1].clone() * 3.5);
        assert!((correlation(&scaled, &b).unwrap()[1].unwrap() - 1.0).abs() < 1e-15);
        let p = single(Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let q = single(Matrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        assert_eq!(correlation(&p, &q).unwrap()[1], Some(0.0));
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = single(Matrix::identity(2, 2));
        let mut b = a.clone();
        b.grid = ResponseGrid::new(2.0, 2).unwrap();
        assert!(matches!(l2_relative_error(&a, &b), Err(Error::GridMismatch)));
        assert!(matches!(correlation(&a, &b), Err(Error::GridMismatch)));
    }

    #[test]
    fn diagonal_average_cases() {
        assert_eq!(
            diagonal_average(&Matrix::<f64>::identity(4, 4)).unwrap(),
            vec![1.0, 0.0, 0.0, 0.0]
        );
        let r = [0.5, -1.0, 2.0, 3.0, 0.25];
        let circ = Matrix::from_fn(5, 5, |i, j| r[(j + 5 - i) % 5]);
        assert_eq!(diagonal_average(&circ).unwrap(), r.to_vec());
        assert!(diagonal_average(&Matrix::<f64>::zeros(3, 4)).is_err());
    }

    #[test]
    fn diagonal_average_matches_shift_and_average() {
        let m = Matrix::from_fn(5, 5, |i, j| ((i * 31 + j * 17) % 13) as f64 * 0.37 - 2.0);
        // brute force: rotate row k left by k, then average the rows
        let mut brute = [0.0; 5];
        for k in 0..5 {
            for (d, b) in brute.iter_mut().enumerate() {
                *b += m[(k, (k + d) % 5)];
            }
        }
        let brute: Vec<f64> = brute.iter().map(|v| v / 5.0).collect();
        let got = diagonal_average(&m).unwrap();
        for (a, b) in got.iter().zip(&brute) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    fn matrix(n: usize) -> impl Strategy<Value = Matrix<f64>> {
        prop::collection::vec(-5.0f64..5.0, n * n).prop_map(move |v| Matrix::from_vec(n, n, v))
    }

    fn cyclic_shift(n: usize, s: usize) -> Matrix<f64> {
        Matrix::from_fn(n, n, |i, j| if j == (i + s) % n { 1.0 } else { 0.0 })
    }

    proptest! {
        #[test]
        fn correlation_is_bounded(a in matrix(4), b in matrix(4)) {
            if let Some(c) = matrix_correlation(&a, &b) {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
            }
        }

        #[test]
        fn error_invariant_under_orthogonal_conjugation(a in matrix(4), b in matrix(4), s in 0usize..4) {
            let p = cyclic_shift(4, s);
            let e1 = relative_error(&a, &b);
            let e2 = relative_error(&(&p * &a * p.transpose()), &(&p * &b * p.transpose()));
            prop_assert!((e1 - e2).abs() <= 1e-12 * (1.0 + e1));
        }

        #[test]
        fn circulant_projection_is_idempotent_and_orthogonal(a in matrix(5), r in prop::collection::vec(-3.0f64..3.0, 5)) {
            let p = circulant_projection(&a).unwrap();
            prop_assert!((circulant_projection(&p).unwrap() - &p).amax() < 1e-12);
            // the residual is orthogonal to every circulant matrix
            let c = Matrix::from_fn(5, 5, |i, j| r[(j + 5 - i) % 5]);
            prop_assert!((&a - &p).dot(&c).abs() < 1e-10);
        }

        #[test]
        fn diagonal_average_linear_and_shift_invariant(a in matrix(5), b in matrix(5), c in -2.0f64..2.0, s in 0usize..5) {
            let lin = diagonal_average(&(&a * c + &b)).unwrap();
            let da = diagonal_average(&a).unwrap();
            let db = diagonal_average(&b).unwrap();
            for d in 0..5 {
                prop_assert!((lin[d] - (c * da[d] + db[d])).abs() < 1e-12);
            }
            let p = cyclic_shift(5, s);
            let conj = diagonal_average(&(&p * &a * p.transpose())).unwrap();
            for d in 0..5 {
                prop_assert!((conj[d] - da[d]).abs() < 1e-12);
            }
        }
    }
}
