//! Dense linear algebra kernel: pseudoinverse, rank, in-plane rotations and
//! the row permutation that exposes an invertible leading block.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Numerical thresholds shared by the rank and identity checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    /// Singular values below `rank_rel_tol * sigma_max` count as zero.
    pub rank_rel_tol: f64,
    /// Absolute slack for identity checks such as the Penrose conditions.
    pub identity_abs_tol: f64,
}

impl Tolerance {
    pub fn new(rank_rel_tol: f64, identity_abs_tol: f64) -> Result<Self> {
        for (name, v) in [("rank_rel_tol", rank_rel_tol), ("identity_abs_tol", identity_abs_tol)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidInput(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(Self { rank_rel_tol, identity_abs_tol })
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { rank_rel_tol: 1e-10, identity_abs_tol: 1e-9 }
    }
}

/// A bijection on `0..size`. Row `i` of `P·A` is row `images[i]` of `A`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    images: Vec<usize>,
}

impl Permutation {
    pub fn identity(size: usize) -> Self {
        Self { images: (0..size).collect() }
    }

    pub fn new(images: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; images.len()];
        for &i in &images {
            if i >= images.len() || seen[i] {
                return Err(Error::InvalidInput(format!("{images:?} is not a permutation")));
            }
            seen[i] = true;
        }
        Ok(Self { images })
    }

    pub fn size(&self) -> usize {
        self.images.len()
    }

    pub fn images(&self) -> &[usize] {
        &self.images
    }

    pub fn is_identity(&self) -> bool {
        self.images.iter().enumerate().all(|(i, &j)| i == j)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.images.len()];
        for (i, &j) in self.images.iter().enumerate() {
            inv[j] = i;
        }
        Self { images: inv }
    }

    /// The orthogonal matrix `P` with `(P·A)_i = A_{images[i]}`.
    pub fn matrix(&self) -> Mat {
        let n = self.images.len();
        let mut p = Mat::zeros(n, n);
        for (i, &j) in self.images.iter().enumerate() {
            p[(i, j)] = 1.0;
        }
        p
    }

    pub fn apply_rows(&self, a: &Mat) -> Mat {
        Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(self.images[i], j)])
    }
}

fn ensure_finite(a: &Mat, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} has non-finite entries")))
    }
}

pub fn singular_values(a: &Mat) -> Vector {
    if a.is_empty() {
        return Vector::zeros(0);
    }
    a.clone().svd(false, false).singular_values
}

/// Moore-Penrose pseudoinverse via SVD with a relative cutoff.
pub fn pinv(a: &Mat, tol: &Tolerance) -> Result<Mat> {
    ensure_finite(a, "matrix")?;
    if a.is_empty() {
        return Ok(Mat::zeros(a.ncols(), a.nrows()));
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let s = &svd.singular_values;
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let mut out = Mat::zeros(a.ncols(), a.nrows());
    if smax == 0.0 {
        return Ok(out);
    }
    let cut = tol.rank_rel_tol * smax;
    for k in 0..s.len() {
        if s[k] >= cut {
            let vk = v_t.row(k).transpose();
            let uk = u.column(k);
            out += (vk * uk.transpose()) / s[k];
        }
    }
    Ok(out)
}

/// Number of singular values at or above `rank_rel_tol * sigma_max`.
pub fn rank(a: &Mat, tol: &Tolerance) -> Result<usize> {
    ensure_finite(a, "matrix")?;
    let s = singular_values(a);
    let smax = s.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&v| v >= tol.rank_rel_tol * smax).count())
}

/// Largest deviation over the four Penrose conditions.
pub fn penrose_residual(a: &Mat, a_pinv: &Mat) -> f64 {
    let aa = a * a_pinv;
    let pa = a_pinv * a;
    let r1 = max_abs(&(&aa * a - a));
    let r2 = max_abs(&(&pa * a_pinv - a_pinv));
    let r3 = max_abs(&(&aa - aa.transpose()));
    let r4 = max_abs(&(&pa - pa.transpose()));
    r1.max(r2).max(r3).max(r4)
}

/// Special orthogonal `R` with `R a = b`, acting as the identity on the
/// orthogonal complement of `span{a, b}`.
pub fn rotation_to(a: &Vector, b: &Vector) -> Result<Mat> {
    let n = a.len();
    if b.len() != n {
        return Err(Error::DimensionMismatch(format!("rotation_to: {} vs {}", n, b.len())));
    }
    if n < 2 {
        return Err(Error::InvalidInput("rotation_to needs dimension >= 2".into()));
    }
    for (name, v) in [("a", a), ("b", b)] {
        if !v.iter().all(|x| x.is_finite()) || (v.norm() - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidInput(format!("{name} must be a unit vector")));
        }
    }
    let u = a.normalize();
    let b = b.normalize();
    if (&u - &b).norm() <= 1e-15 {
        return Ok(Mat::identity(n, n));
    }
    let (w, c, s) = if (&u + &b).norm() <= 1e-8 {
        let k = (0..n)
            .find(|&k| (1.0 - u[k] * u[k]) > 1e-12)
            .expect("a unit vector in dimension >= 2 is not parallel to every axis");
        let mut e = Vector::zeros(n);
        e[k] = 1.0;
        (orthonormal_residual(&e, &u), -1.0, 0.0)
    } else {
        let c = u.dot(&b).clamp(-1.0, 1.0);
        let w = orthonormal_residual(&b, &u);
        let s = w.dot(&b);
        (w, c, s)
    };
    let uu = &u * u.transpose();
    let ww = &w * w.transpose();
    let wu = &w * u.transpose();
    let r = Mat::identity(n, n) + (uu + ww) * (c - 1.0) + (&wu - wu.transpose()) * s;
    Ok(r)
}

fn orthonormal_residual(v: &Vector, u: &Vector) -> Vector {
    let mut w = v - u * u.dot(v);
    w -= u * u.dot(&w);
    w.normalize()
}

/// Row permutation `P` such that the leading `q x q` block of `P·A` is
/// invertible, chosen by partial pivoting on the first `q` columns.
pub fn invertible_block_permutation(a: &Mat, q: usize, tol: &Tolerance) -> Result<Permutation> {
    ensure_finite(a, "matrix")?;
    if q == 0 || a.nrows() < q || a.ncols() < q {
        return Err(Error::InvalidInput(format!(
            "need at least {q} rows and columns, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let head = a.columns(0, q).into_owned();
    if rank(&head, tol)? < q {
        return Err(Error::NoPermutation(format!("first {q} columns are rank deficient")));
    }
    let mut work = head.clone();
    let mut order: Vec<usize> = (0..a.nrows()).collect();
    for k in 0..q {
        let (piv, _) = (k..work.nrows())
            .map(|i| (i, work[(i, k)].abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if work[(piv, k)] == 0.0 {
            return Err(Error::NoPermutation(format!("no pivot in column {k}")));
        }
        work.swap_rows(k, piv);
        order.swap(k, piv);
        for i in (k + 1)..work.nrows() {
            let f = work[(i, k)] / work[(k, k)];
            for j in k..q {
                work[(i, j)] -= f * work[(k, j)];
            }
        }
    }
    let perm = Permutation::new(order)?;
    let block = perm.apply_rows(&head).rows(0, q).into_owned();
    let s = singular_values(&block);
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let smin = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin < tol.rank_rel_tol * smax {
        return Err(Error::NoPermutation("pivoted block is numerically singular".into()));
    }
    Ok(perm)
}

/// `max |(W Wᵀ) - S²|` for a weight `W` and symmetric factor `S`; zero when
/// `W = S R` with `R` orthogonal.
pub fn polar_residual(w: &Mat, s: &Mat) -> f64 {
    max_abs(&(w * w.transpose() - s * s))
}

pub fn max_abs(a: &Mat) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Build a matrix from row vectors.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if rows.iter().any(|x| x.len() != c) {
        return Err(Error::DimensionMismatch("ragged rows".into()));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn to_rows(a: &Mat) -> Vec<Vec<f64>> {
    (0..a.nrows()).map(|i| a.row(i).iter().cloned().collect()).collect()
}

/// Unit vector `u_n / |u_n|` along the diagonal.
pub fn unit_diagonal(n: usize) -> Vector {
    Vector::from_element(n, 1.0 / (n as f64).sqrt())
}

/// Coordinate projection `Π^n_m` onto the first `m` coordinates.
pub fn coordinate_projection(n: usize, m: usize) -> Mat {
    Mat::from_fn(m, n, |i, j| if i == j { 1.0 } else { 0.0 })
}

/// Serde adapter storing a vector as a plain JSON array.
pub mod serde_vector {
    use super::Vector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector, D::Error> {
        Ok(Vector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

/// Serde adapter for a list of vectors.
pub mod serde_vectors {
    use super::Vector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vector], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = v.iter().map(|x| x.as_slice()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vector>, D::Error> {
        Ok(Vec::<Vec<f64>>::deserialize(d)?.into_iter().map(Vector::from_vec).collect())
    }
}
