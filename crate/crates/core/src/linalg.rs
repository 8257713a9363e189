//! Small dense linear-algebra helpers shared by the simulation modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Largest eigenvalue magnitude of a square matrix.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.is_empty() {
        return Ok(0.0);
    }
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or(Error::EigenFailure)?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Induced Euclidean norm (largest singular value).
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn max_abs_vec(v: &Vector) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// Column-major vectorization, `vec(X)`.
pub fn vectorize(m: &Matrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

pub fn unvectorize(v: &[f64], rows: usize, cols: usize) -> Matrix {
    Matrix::from_column_slice(rows, cols, v)
}

/// Stacks equally sized vectors into one column.
pub fn stack(parts: &[Vector]) -> Vector {
    let len = parts.iter().map(|p| p.len()).sum();
    let mut out = Vector::zeros(len);
    let mut offset = 0;
    for p in parts {
        out.rows_mut(offset, p.len()).copy_from(p);
        offset += p.len();
    }
    out
}

/// Stacks equally shaped matrices vertically, `col(M_1, ..., M_N)`.
pub fn stack_rows(parts: &[Matrix]) -> Matrix {
    let cols = parts.first().map_or(0, |p| p.ncols());
    let rows = parts.iter().map(|p| p.nrows()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut offset = 0;
    for p in parts {
        out.view_mut((offset, 0), (p.nrows(), cols)).copy_from(p);
        offset += p.nrows();
    }
    out
}

/// Builds a matrix from nested rows, rejecting ragged input.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let ncols = rows.first().map_or(0, |r| r.len());
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::Dimension(format!(
            "ragged matrix: row {i} has {} entries, expected {ncols}",
            r.len()
        )));
    }
    Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub(crate) fn check_dims(what: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::Dimension(format!(
            "{what} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub(crate) fn check_len(what: &str, v: &Vector, len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::Dimension(format!(
            "{what} has length {}, expected {len}",
            v.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_radius_of_defective_double_integrator() {
        let s = kron(
            &Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            &Matrix::identity(2, 2),
        );
        assert!((spectral_radius(&s).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_radius_matches_quadratic_roots() {
        // lambda^2 - trace*lambda + det = 0
        let m = Matrix::from_row_slice(2, 2, &[1.0, 1.0, -0.7, -0.9]);
        let (tr, det) = (m[(0, 0)] + m[(1, 1)], m.determinant());
        let disc = (tr * tr - 4.0 * det).sqrt();
        let oracle = ((tr + disc) / 2.0).abs().max(((tr - disc) / 2.0).abs());
        assert!((oracle - 0.5).abs() < 1e-12);
        assert!((spectral_radius(&m).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn spectral_radius_of_rotation_is_one() {
        let (c, s) = (0.3_f64.cos(), 0.3_f64.sin());
        let m = Matrix::from_row_slice(2, 2, &[c, -s, s, c]);
        assert!((spectral_radius(&m).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_radius_edge_cases() {
        assert_eq!(spectral_radius(&Matrix::zeros(3, 3)).unwrap(), 0.0);
        assert!(matches!(
            spectral_radius(&Matrix::zeros(2, 3)),
            Err(Error::NotSquare { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn vectorize_is_column_major() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vectorize(&m).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(unvectorize(vectorize(&m).as_slice(), 2, 2), m);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }
}
