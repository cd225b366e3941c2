use super::{Mat, Real};
use crate::error::{IlrError, Result};

/// Lower Cholesky factor `L` with `L Lᵀ = a`.
pub fn cholesky<T: Real>(a: &Mat<T>) -> Result<Mat<T>> {
    if !a.is_square() {
        return Err(IlrError::dim("cholesky", format!("{:?} not square", a.shape())));
    }
    let n = a.rows();
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag = diag - l[(j, k)] * l[(j, k)];
        }
        if !(diag > T::zero()) {
            return Err(IlrError::Singular {
                pivot: j,
                value: diag.to_f64_lossy(),
            });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s = s - l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solve `L Lᵀ x = b` given the Cholesky factor.
pub fn cholesky_solve_vec<T: Real>(l: &Mat<T>, b: &[T]) -> Result<Vec<T>> {
    let n = l.rows();
    if b.len() != n {
        return Err(IlrError::dim("cholesky_solve", format!("{n} vs {}", b.len())));
    }
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s = s - l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s = s - l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    Ok(y)
}

/// Solve `a x = b` for SPD `a` and a block of right-hand sides.
pub fn solve_spd<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Result<Mat<T>> {
    if a.rows() != b.rows() {
        return Err(IlrError::dim(
            "solve_spd",
            format!("{:?} vs rhs {:?}", a.shape(), b.shape()),
        ));
    }
    let l = cholesky(a)?;
    let mut x = Mat::zeros(b.rows(), b.cols());
    for j in 0..b.cols() {
        let col = cholesky_solve_vec(&l, &b.column(j))?;
        x.set_column(j, &col);
    }
    Ok(x)
}

pub fn solve_spd_vec<T: Real>(a: &Mat<T>, b: &[T]) -> Result<Vec<T>> {
    let l = cholesky(a)?;
    cholesky_solve_vec(&l, b)
}

/// Inverse of an SPD matrix.
pub fn inv_spd<T: Real>(a: &Mat<T>) -> Result<Mat<T>> {
    let inv = solve_spd(a, &Mat::identity(a.rows()))?;
    Ok(inv.symmetrized())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_diagonal() {
        let b = Mat::from_rows(&[vec![1.0, -2.0], vec![3.5, 0.25]]).unwrap();
        assert_eq!(solve_spd(&Mat::<f64>::identity(2), &b).unwrap(), b);
        let x = solve_spd_vec(&Mat::from_diag(&[2.0, 4.0]), &[2.0, 4.0]).unwrap();
        assert!(x.iter().all(|v: &f64| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn not_positive_definite() {
        let a = Mat::from_diag(&[1.0, 0.0, 2.0]);
        assert!(matches!(
            cholesky(&a),
            Err(IlrError::Singular { pivot: 1, .. })
        ));
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(solve_spd(&a, &Mat::identity(2)).is_err());
    }
}
