//! Small dense linear algebra on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative asymmetry tolerated by [`symeig`].
const SYMMETRY_TOL: f64 = 1e-10;

/// Symmetric eigendecomposition with eigenvalues in ascending order.
/// Column `k` of the returned matrix is the eigenvector for eigenvalue `k`.
pub fn symeig(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_square(m, "symeig")?;
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > SYMMETRY_TOL * scale {
        return Err(Error::InvalidInput("symeig: matrix is not symmetric".into()));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let eig = symmetrize(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    Ok((values, vectors))
}

/// Lower Cholesky factor. Fails with [`Error::NotPositiveDefinite`] when
/// the matrix is not numerically positive definite.
pub fn cholesky(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(m, "cholesky")?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite("non-finite entries".into()));
    }
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    m.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{}x{} matrix", m.nrows(), m.ncols())))
}

/// Log-determinant of a symmetric positive definite matrix.
pub fn logdet_spd(m: &DMatrix<f64>) -> Result<f64> {
    let l = cholesky(m)?;
    Ok(logdet_from_cholesky(&l))
}

pub fn logdet_from_cholesky(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Inverse of a symmetric positive definite matrix.
pub fn inverse_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = cholesky(m)?;
    Ok(inverse_from_cholesky(&l))
}

pub fn inverse_from_cholesky(l: &DMatrix<f64>) -> DMatrix<f64> {
    let linv = lower_inverse(l);
    symmetrize(&(linv.transpose() * linv))
}

/// Inverse of a lower-triangular matrix by forward substitution.
pub fn lower_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::identity(n, n);
    if n > 0 {
        l.solve_lower_triangular_mut(&mut inv);
    }
    inv
}

/// Symmetric square root and its inverse of an SPD matrix.
pub fn sqrt_spd(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (vals, vecs) = symeig(m)?;
    if vals.iter().any(|&v| v <= 0.0) {
        return Err(Error::NotPositiveDefinite("sqrt_spd".into()));
    }
    let root = &vecs * DMatrix::from_diagonal(&vals.map(f64::sqrt)) * vecs.transpose();
    let inv_root = &vecs * DMatrix::from_diagonal(&vals.map(|v| 1.0 / v.sqrt())) * vecs.transpose();
    Ok((symmetrize(&root), symmetrize(&inv_root)))
}

/// `(M + M^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `x^T M x`.
pub fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for j in 0..n {
        let mut col = 0.0;
        for i in 0..n {
            col += x[i] * m[(i, j)];
        }
        acc += col * x[j];
    }
    acc
}

/// `out = M x`, accumulated left to right.
pub fn mat_vec(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &xj) in x.iter().enumerate() {
            acc += m[(i, j)] * xj;
        }
        *o = acc;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what}: expected square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Builds a matrix from row-major nested rows.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Serde adapter writing matrices as row-major nested arrays.
pub mod rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter writing vectors as plain arrays.
pub mod vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

/// Serde adapter for a list of matrices.
pub mod rows_list {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        m.iter().map(super::to_rows).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        Vec::<Vec<Vec<f64>>>::deserialize(d)?
            .iter()
            .map(|r| super::from_rows(r).map_err(serde::de::Error::custom))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_spd(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let x = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &x * x.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn identity_eigenvalues() {
        let (vals, _) = symeig(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(vals.as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_logdet() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        assert!((logdet_spd(&m).unwrap() - 36f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn eigen_reconstruction_and_order() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for n in 1..7 {
            let m = random_spd(n, &mut rng);
            let (vals, vecs) = symeig(&m).unwrap();
            let rec = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
            assert!((rec - &m).amax() < 1e-10);
            assert!(vals.as_slice().windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(cholesky(&m), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn square_root_squares_back() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let m = random_spd(4, &mut rng);
        let (r, ri) = sqrt_spd(&m).unwrap();
        assert!((&r * &r - &m).amax() < 1e-10);
        assert!((&r * &ri - DMatrix::identity(4, 4)).amax() < 1e-10);
        assert!((inverse_spd(&m).unwrap() * &m - DMatrix::identity(4, 4)).amax() < 1e-9);
    }

    #[test]
    fn rows_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(to_rows(&m), vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        assert_eq!(from_rows(&to_rows(&m)).unwrap(), m);
    }
}

/// Plain triple-loop product, so that products with identity factors are
/// exact.
pub fn matmul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.nrows(), "matmul shape mismatch");
    DMatrix::from_fn(a.nrows(), b.ncols(), |i, j| {
        let mut acc = 0.0;
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, j)];
        }
        acc
    })
}
