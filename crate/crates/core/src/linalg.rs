//! Small dense helpers for Hermitian matrices.
//!
//! Hermitian matrices of side `n` are mapped to `R^{n²}` by [`hvec`], an
//! isometry: `tr(A·B) = hvec(A)·hvec(B)`. Diagonal entries come first,
//! followed by `(√2·Re, √2·Im)` pairs of the strict upper triangle in
//! row-major order.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CVector = DVector<C64>;
pub type CMatrix = DMatrix<C64>;

const SQRT2: f64 = std::f64::consts::SQRT_2;

pub fn hvec_dim(n: usize) -> usize {
    n * n
}

pub fn hvec(m: &CMatrix) -> DVector<f64> {
    let n = m.nrows();
    let mut v = DVector::zeros(n * n);
    for k in 0..n {
        v[k] = m[(k, k)].re;
    }
    let mut p = n;
    for k in 0..n {
        for l in k + 1..n {
            let z = m[(k, l)];
            v[p] = SQRT2 * z.re;
            v[p + 1] = SQRT2 * z.im;
            p += 2;
        }
    }
    v
}

pub fn hmat(x: &[f64], n: usize) -> CMatrix {
    assert_eq!(x.len(), n * n, "hvec length does not match side {n}");
    let mut m = CMatrix::zeros(n, n);
    for k in 0..n {
        m[(k, k)] = C64::new(x[k], 0.0);
    }
    let mut p = n;
    for k in 0..n {
        for l in k + 1..n {
            let z = C64::new(x[p], x[p + 1]) / SQRT2;
            m[(k, l)] = z;
            m[(l, k)] = z.conj();
            p += 2;
        }
    }
    m
}

/// `hvec(w·wᴴ)` without forming the outer product.
pub fn hvec_outer(w: &CVector) -> DVector<f64> {
    let n = w.len();
    let mut v = DVector::zeros(n * n);
    for k in 0..n {
        v[k] = w[k].norm_sqr();
    }
    let mut p = n;
    for k in 0..n {
        for l in k + 1..n {
            let z = w[k] * w[l].conj();
            v[p] = SQRT2 * z.re;
            v[p + 1] = SQRT2 * z.im;
            p += 2;
        }
    }
    v
}

pub fn outer(w: &CVector) -> CMatrix {
    w * w.adjoint()
}

/// Real part of `tr(A·B)`.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += (a[(i, j)] * b[(j, i)]).re;
        }
    }
    s
}

pub fn trace_re(m: &CMatrix) -> f64 {
    (0..m.nrows()).map(|k| m[(k, k)].re).sum()
}

/// `hᴴ·M·h`, real for Hermitian `M`.
pub fn quad_form(m: &CMatrix, h: &CVector) -> f64 {
    let mh = m * h;
    h.iter().zip(mh.iter()).map(|(a, b)| (a.conj() * b).re).sum()
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

pub fn hermitian_error(m: &CMatrix) -> f64 {
    (m - m.adjoint()).norm()
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues ascending.
pub fn herm_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    let eig = hermitian_part(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = hermitian_part(m).symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Euclidean projection onto the PSD cone by eigenvalue clipping.
pub fn project_psd(m: &CMatrix) -> CMatrix {
    let (vals, vecs) = herm_eigen(m);
    let mut out = CMatrix::zeros(m.nrows(), m.ncols());
    for (k, &lam) in vals.iter().enumerate() {
        if lam > 0.0 {
            let u = vecs.column(k).into_owned();
            out += outer(&u) * C64::new(lam, 0.0);
        }
    }
    out
}

/// Serde adapters storing complex values as `[re, im]` pairs.
pub mod serde_complex {
    use super::{CMatrix, CVector, C64};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    fn pair(z: &C64) -> [f64; 2] {
        [z.re, z.im]
    }

    pub mod vector {
        use super::*;

        pub fn serialize<S: Serializer>(v: &CVector, s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(pair).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CVector, D::Error> {
            let raw = Vec::<[f64; 2]>::deserialize(d)?;
            Ok(CVector::from_iterator(raw.len(), raw.iter().map(|p| C64::new(p[0], p[1]))))
        }
    }

    pub mod vectors {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[CVector], s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(|x| x.iter().map(pair).collect::<Vec<_>>()).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<CVector>, D::Error> {
            let raw = Vec::<Vec<[f64; 2]>>::deserialize(d)?;
            Ok(raw
                .into_iter()
                .map(|x| CVector::from_iterator(x.len(), x.iter().map(|p| C64::new(p[0], p[1]))))
                .collect())
        }
    }

    /// Row-major list of rows.
    pub mod matrix {
        use super::*;
        use serde::de::Error;

        pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> Result<S::Ok, S::Error> {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| pair(&m[(i, j)])).collect::<Vec<_>>())
                .collect::<Vec<_>>()
                .serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMatrix, D::Error> {
            let rows = Vec::<Vec<[f64; 2]>>::deserialize(d)?;
            let n = rows.len();
            let m = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != m) {
                return Err(D::Error::custom("ragged matrix rows"));
            }
            Ok(CMatrix::from_fn(n, m, |i, j| C64::new(rows[i][j][0], rows[i][j][1])))
        }
    }
}
