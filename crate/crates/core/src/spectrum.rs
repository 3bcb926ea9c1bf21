//! Eigenvalues of dense real symmetric matrices.
//!
//! Householder reduction to tridiagonal form followed by the implicit QL
//! iteration with Wilkinson-style shifts (the EISPACK `tred2`/`tql2` pair
//! without eigenvector accumulation). Cost is `O(n³)` for the reduction and
//! `O(n²)` for the iteration.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// QL sweeps allowed per eigenvalue before giving up.
const MAX_SWEEPS: usize = 64;

/// Eigenvalues of the symmetric row-major `n x n` matrix `a`, sorted descending.
///
/// Only the lower triangle is read.
pub fn symmetric_eigenvalues(a: &[f64], n: usize) -> Result<Vec<f64>> {
    if a.len() != n * n {
        return Err(Error::input(format!(
            "matrix buffer holds {} values, expected {}",
            a.len(),
            n * n
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    let (mut diag, mut off) = tridiagonalize(a, n);
    ql_implicit(&mut diag, &mut off)?;
    diag.sort_unstable_by(|x, y| y.total_cmp(x));
    Ok(diag)
}

/// Returns the diagonal and the subdiagonal (`off[i]` couples `i-1` and `i`, `off[0] = 0`).
fn tridiagonalize(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    // Working copy in column-major order so the inner loops below, which walk
    // down a column, touch contiguous memory.
    let idx = |i: usize, j: usize| j * n + i;
    let mut v: Vec<f64> = alloc::vec![0.0; n * n];
    let mut anorm: f64 = 0.0;
    for i in 0..n {
        for j in 0..=i {
            let x = a[i * n + j];
            v[idx(i, j)] = x;
            v[idx(j, i)] = x;
            anorm = anorm.max(x.abs());
        }
    }
    // Columns whose off-tridiagonal mass is below this are left unreflected;
    // the dropped entries perturb the spectrum far less than rounding does,
    // and reflecting pure rounding noise drives later steps into subnormals.
    let negligible = anorm * f64::EPSILON * f64::EPSILON;

    let mut d: Vec<f64> = (0..n).map(|j| v[idx(n - 1, j)]).collect();
    let mut e = alloc::vec![0.0; n];

    for i in (1..n).rev() {
        let scale: f64 = d[..i].iter().map(|x| x.abs()).sum();
        let mut h = 0.0;
        if scale <= negligible {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
                v[idx(j, i)] = 0.0;
            }
        } else {
            for dk in &mut d[..i] {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = libm::sqrt(h);
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            e[..i].iter_mut().for_each(|x| *x = 0.0);

            for j in 0..i {
                f = d[j];
                v[idx(j, i)] = f;
                g = e[j] + v[idx(j, j)] * f;
                for k in j + 1..i {
                    let vkj = v[idx(k, j)];
                    g += vkj * d[k];
                    e[k] += vkj * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[idx(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    let diag = (0..n).map(|k| v[idx(k, k)]).collect();
    (diag, e)
}

fn ql_implicit(d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                if sweeps > MAX_SWEEPS {
                    return Err(Error::Numerical(format!(
                        "QL iteration did not converge for eigenvalue {l}"
                    )));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = libm::hypot(p, 1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in &mut d[l + 2..] {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = libm::hypot(p, e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn diagonal_matrix() {
        let a = vec![3.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 2.0];
        close(&symmetric_eigenvalues(&a, 3).unwrap(), &[3.0, 2.0, -1.0], 1e-14);
    }

    #[test]
    fn two_by_two() {
        // [[2,1],[1,2]] -> 3, 1
        close(&symmetric_eigenvalues(&[2.0, 1.0, 1.0, 2.0], 2).unwrap(), &[3.0, 1.0], 1e-14);
    }

    #[test]
    fn all_ones_rank_one() {
        let n = 6;
        let ev = symmetric_eigenvalues(&vec![1.0; n * n], n).unwrap();
        assert!((ev[0] - n as f64).abs() < 1e-12);
        assert!(ev[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn tridiagonal_toeplitz_closed_form() {
        // tridiag(-1, 2, -1): eigenvalues 2 - 2 cos(k pi / (n+1))
        let n = 12;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 2.0;
            if i > 0 {
                a[i * n + i - 1] = -1.0;
                a[(i - 1) * n + i] = -1.0;
            }
        }
        let mut want: Vec<f64> = (1..=n)
            .map(|k| 2.0 - 2.0 * libm::cos(k as f64 * core::f64::consts::PI / (n as f64 + 1.0)))
            .collect();
        want.sort_by(|x, y| y.total_cmp(x));
        close(&symmetric_eigenvalues(&a, n).unwrap(), &want, 1e-12);
    }

    #[test]
    fn trivial_sizes_and_errors() {
        assert!(symmetric_eigenvalues(&[], 0).unwrap().is_empty());
        close(&symmetric_eigenvalues(&[0.25], 1).unwrap(), &[0.25], 0.0);
        assert!(matches!(symmetric_eigenvalues(&[1.0, 2.0], 2), Err(Error::InvalidInput(_))));
        assert!(matches!(symmetric_eigenvalues(&[f64::NAN], 1), Err(Error::Numerical(_))));
    }
}
