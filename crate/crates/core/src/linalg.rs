//! Complex matrix aliases and the few dense helpers the crate shares.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[inline]
pub fn cis(phase: f64) -> Complex64 {
    Complex64::from_polar(1.0, phase)
}

pub fn frobenius_sq(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn row_norm_sq(m: &CMatrix, row: usize) -> f64 {
    m.row(row).iter().map(|z| z.norm_sqr()).sum()
}

/// `a^H b` for column vectors.
pub fn inner(a: &CVector, b: &CVector) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// log2 det(I + m) for Hermitian positive semi-definite `m`.
///
/// Uses Cholesky of `I + m`, which is positive definite.
pub fn log2_det_identity_plus(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let a = CMatrix::identity(n, n) + m;
    match a.clone().cholesky() {
        Some(ch) => {
            let l = ch.l();
            (0..n).map(|i| 2.0 * l[(i, i)].re.ln()).sum::<f64>() / std::f64::consts::LN_2
        }
        // Numerically indefinite: fall back to Hermitian eigenvalues.
        None => {
            let h = (a.clone() + a.adjoint()).scale(0.5);
            h.symmetric_eigenvalues()
                .iter()
                .map(|&l| l.max(f64::MIN_POSITIVE).log2())
                .sum()
        }
    }
}

/// Right singular pairs of `m`, strongest first: singular values and the
/// matching right singular vectors as columns. Computed from the Hermitian
/// eigendecomposition of the normalized Gram matrix `m^H m`, which keeps
/// the vectors orthonormal to round-off even for badly scaled inputs.
pub fn right_singular(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.ncols();
    let scale = frobenius_sq(m).sqrt();
    if !(scale > 0.0) {
        return (vec![0.0; n], CMatrix::identity(n, n));
    }
    let a = m.unscale(scale);
    let gram = a.adjoint() * &a;
    let gram = (&gram + gram.adjoint()).scale(0.5);
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt() * scale).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Serde adapter writing a complex matrix as a list of rows of `[re, im]`.
pub mod serde_rows {
    use super::CMatrix;
    use num_complex::Complex64;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<Complex64>> = (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMatrix, D::Error> {
        let rows: Vec<Vec<Complex64>> = Vec::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(CMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log2_det_of_diagonal() {
        let m = CMatrix::from_diagonal(&CVector::from_vec(vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(3.0, 0.0),
        ]));
        assert!((log2_det_identity_plus(&m) - 3.0).abs() < 1e-12);
    }
}
