//! Small dense helpers: symmetric power iteration and Frobenius norms.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{stream, Domain};

pub const EIGEN_TOL: f64 = 1e-9;
pub const EIGEN_MAX_ITER: usize = 10_000;

/// Eigenvalues whose magnitude falls below this are reported as exactly zero.
const ZERO_FLOOR: f64 = 1e-14;

/// Largest eigenvalue of a symmetric positive semidefinite matrix, restricted
/// to the orthogonal complement of `deflate` when given.
///
/// Stops once the residual `‖Mv − λv‖` drops below `tol`.
pub fn psd_top_eigenvalue(
    m: ArrayView2<'_, f64>,
    deflate: Option<&Array1<f64>>,
    tol: f64,
    max_iter: usize,
) -> Result<f64> {
    let n = m.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let unit = deflate.map(|u| {
        let norm = u.dot(u).sqrt();
        u / norm
    });
    let project = |v: &mut Array1<f64>| {
        if let Some(u) = &unit {
            let c = u.dot(v);
            v.scaled_add(-c, u);
        }
    };

    let mut rng = stream(0x5eed, Domain::Probe, n as u64, 0);
    let mut v: Array1<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    project(&mut v);
    let norm = v.dot(&v).sqrt();
    if norm == 0.0 {
        return Ok(0.0);
    }
    v /= norm;

    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let mut w = m.dot(&v);
        project(&mut w);
        let lambda = v.dot(&w);
        let wn = w.dot(&w).sqrt();
        if wn <= f64::MIN_POSITIVE {
            return Ok(0.0);
        }
        let r = &w - &(lambda * &v);
        residual = r.dot(&r).sqrt();
        if residual <= tol {
            return Ok(if lambda.abs() < ZERO_FLOOR { 0.0 } else { lambda });
        }
        v = w / wn;
    }
    Err(Error::NotConverged {
        what: "power iteration",
        iterations: max_iter,
        residual,
    })
}

pub fn frobenius_sq(m: ArrayView2<'_, f64>) -> f64 {
    m.iter().map(|x| x * x).sum()
}

/// Gram matrix `Mᵀ M`.
pub fn gram(m: ArrayView2<'_, f64>) -> Array2<f64> {
    m.t().dot(&m)
}
