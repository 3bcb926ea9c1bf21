//! Gaussian Gram matrices and bandwidth selection.
//!
//! Entries are `exp(-‖x - y‖² / (2σ²))`. The joint kernel of a prompt and a
//! response is the self-kernel of their concatenation, so all four blocks
//! share one bandwidth.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::sequence::EmbeddingSequence;

/// Bandwidth returned when a point set has no positive pairwise distance.
pub const FALLBACK_SIGMA: f64 = 1.0;

/// How the kernel bandwidth σ is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Bandwidth {
    /// Median of all strictly positive pairwise Euclidean distances.
    #[default]
    Median,
    /// A caller-supplied positive value.
    Fixed(f64),
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bandwidth::Median => f.write_str("median"),
            Bandwidth::Fixed(v) => write!(f, "fixed({v})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    SelfKernel,
    Joint,
}

/// A symmetric Gram matrix with unit-free entries and the bandwidth that built it.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    entries: Vec<f64>,
    n: usize,
    sigma: f64,
    trace: f64,
    kind: KernelKind,
}

impl KernelMatrix {
    /// Wraps an arbitrary symmetric row-major `n x n` matrix with a positive diagonal.
    ///
    /// Useful for idealised kernels (block matrices, random PSD matrices) that
    /// did not come from a point set.
    pub fn from_entries(entries: Vec<f64>, n: usize, sigma: f64, kind: KernelKind) -> Result<Self> {
        if n == 0 || entries.len() != n * n {
            return Err(Error::input(format!(
                "kernel must be square and non-empty, got {} entries for n={n}",
                entries.len()
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::param(format!("bandwidth must be positive, got {sigma}")));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("kernel has non-finite entries"));
        }
        for i in 0..n {
            if entries[i * n + i] <= 0.0 {
                return Err(Error::input(format!("non-positive diagonal at {i}")));
            }
            for j in 0..i {
                let (a, b) = (entries[i * n + j], entries[j * n + i]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::input(format!("kernel not symmetric at ({i}, {j})")));
                }
            }
        }
        let trace = (0..n).map(|i| entries[i * n + i]).sum();
        Ok(Self {
            entries,
            n,
            sigma,
            trace,
            kind,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// `K / tr(K)` in row-major order, a unit-trace PSD matrix.
    pub fn normalized(&self) -> Vec<f64> {
        self.entries.iter().map(|v| v / self.trace).collect()
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Chooses σ for a single point set.
pub fn select_bandwidth(seq: &EmbeddingSequence, policy: Bandwidth) -> Result<f64> {
    match policy {
        Bandwidth::Fixed(v) => check_sigma(v),
        Bandwidth::Median => Ok(median_distance(seq.rows())),
    }
}

/// Chooses σ over the union of two point sets, as used for joint kernels.
pub fn select_bandwidth_pooled(
    a: &EmbeddingSequence,
    b: &EmbeddingSequence,
    policy: Bandwidth,
) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::input(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    match policy {
        Bandwidth::Fixed(v) => check_sigma(v),
        Bandwidth::Median => Ok(median_distance(a.rows().chain(b.rows()))),
    }
}

fn check_sigma(v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::param(format!("bandwidth must be positive and finite, got {v}")))
    }
}

fn median_distance<'a>(rows: impl Iterator<Item = &'a [f64]>) -> f64 {
    let rows: Vec<&[f64]> = rows.collect();
    let mut dists = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[..i] {
            let d = libm::sqrt(sq_dist(a, b));
            if d > 0.0 {
                dists.push(d);
            }
        }
    }
    if dists.is_empty() {
        return FALLBACK_SIGMA;
    }
    dists.sort_unstable_by(f64::total_cmp);
    let mid = dists.len() / 2;
    if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        0.5 * (dists[mid - 1] + dists[mid])
    }
}

fn gaussian_entries(rows: &[&[f64]], sigma: f64) -> Vec<f64> {
    let n = rows.len();
    let denom = 2.0 * sigma * sigma;
    let mut k = alloc::vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
        for j in 0..i {
            let v = libm::exp(-sq_dist(rows[i], rows[j]) / denom);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// `K[i][j] = exp(-‖z_i - z_j‖² / (2σ²))`.
pub fn gaussian_self_kernel(seq: &EmbeddingSequence, sigma: f64) -> Result<KernelMatrix> {
    let sigma = check_sigma(sigma)?;
    let rows: Vec<&[f64]> = seq.rows().collect();
    Ok(KernelMatrix {
        entries: gaussian_entries(&rows, sigma),
        n: rows.len(),
        sigma,
        trace: seq.len() as f64,
        kind: KernelKind::SelfKernel,
    })
}

/// The `(n+m) x (n+m)` block kernel `[[K_pp, K_pr], [K_rp, K_rr]]` under one σ.
pub fn gaussian_joint_kernel(
    prompt: &EmbeddingSequence,
    response: &EmbeddingSequence,
    sigma: f64,
) -> Result<KernelMatrix> {
    if prompt.dim() != response.dim() {
        return Err(Error::input(format!(
            "dimension mismatch: prompt d={} response d={}",
            prompt.dim(),
            response.dim()
        )));
    }
    let sigma = check_sigma(sigma)?;
    let rows: Vec<&[f64]> = prompt.rows().chain(response.rows()).collect();
    Ok(KernelMatrix {
        entries: gaussian_entries(&rows, sigma),
        n: rows.len(),
        sigma,
        trace: rows.len() as f64,
        kind: KernelKind::Joint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn seq(rows: Vec<Vec<f64>>) -> EmbeddingSequence {
        EmbeddingSequence::from_rows(rows).unwrap()
    }

    #[test]
    fn median_of_single_distance() {
        let s = seq(vec![vec![0.0, 0.0], vec![2.0, 0.0]]);
        assert_eq!(select_bandwidth(&s, Bandwidth::Median).unwrap(), 2.0);
    }

    #[test]
    fn median_fallback() {
        let s = seq(vec![vec![1.5, -2.0]; 7]);
        assert_eq!(select_bandwidth(&s, Bandwidth::Median).unwrap(), FALLBACK_SIGMA);
        let one = seq(vec![vec![3.0]]);
        assert_eq!(select_bandwidth(&one, Bandwidth::Median).unwrap(), FALLBACK_SIGMA);
    }

    #[test]
    fn median_ignores_zero_distances() {
        // distances: 0 (dup), 1, 1, 3, 4, 4 -> positives 1,1,3,4,4 -> median 3
        let s = seq(vec![vec![0.0], vec![0.0], vec![1.0], vec![4.0]]);
        assert_eq!(select_bandwidth(&s, Bandwidth::Median).unwrap(), 3.0);
    }

    #[test]
    fn fixed_bandwidth_validation() {
        let s = seq(vec![vec![0.0]]);
        assert_eq!(select_bandwidth(&s, Bandwidth::Fixed(0.3)).unwrap(), 0.3);
        for bad in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                select_bandwidth(&s, Bandwidth::Fixed(bad)),
                Err(Error::InvalidParameter(_))
            ));
        }
        assert!(gaussian_self_kernel(&s, 0.0).is_err());
    }

    #[test]
    fn identical_points_all_ones() {
        let k = gaussian_self_kernel(&seq(vec![vec![0.3, 0.1]; 5]), 0.7).unwrap();
        assert!(k.entries().iter().all(|&v| v == 1.0));
        assert_eq!(k.trace(), 5.0);
    }

    #[test]
    fn two_points_at_sqrt2_sigma() {
        let sigma = 0.5_f64;
        let dx = libm::sqrt(2.0) * sigma;
        let k = gaussian_self_kernel(&seq(vec![vec![0.0, 0.0], vec![dx, 0.0]]), sigma).unwrap();
        assert!((k.get(0, 1) - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert_eq!(k.get(0, 1), k.get(1, 0));
        assert_eq!(k.kind(), KernelKind::SelfKernel);
    }

    #[test]
    fn joint_of_copy_is_tiled() {
        let p = seq(vec![vec![0.0, 1.0], vec![2.0, 0.5], vec![-1.0, 0.0]]);
        let kp = gaussian_self_kernel(&p, 1.3).unwrap();
        let kj = gaussian_joint_kernel(&p, &p, 1.3).unwrap();
        assert_eq!(kj.dim(), 6);
        assert_eq!(kj.kind(), KernelKind::Joint);
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(kj.get(i, j), kp.get(i % 3, j % 3));
            }
        }
    }

    #[test]
    fn joint_single_points_coincident() {
        let p = seq(vec![vec![1.0, 1.0]]);
        let kj = gaussian_joint_kernel(&p, &p.clone(), 1.0).unwrap();
        assert!(kj.entries().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn joint_dimension_mismatch() {
        let p = seq(vec![vec![1.0, 1.0]]);
        let r = seq(vec![vec![1.0]]);
        assert!(matches!(
            gaussian_joint_kernel(&p, &r, 1.0),
            Err(Error::InvalidInput(_))
        ));
        assert!(select_bandwidth_pooled(&p, &r, Bandwidth::Median).is_err());
    }

    #[test]
    fn from_entries_validation() {
        let id = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let k = KernelMatrix::from_entries(id, 3, 1.0, KernelKind::SelfKernel).unwrap();
        assert_eq!(k.trace(), 3.0);
        let asym = vec![1.0, 0.5, 0.2, 1.0];
        assert!(KernelMatrix::from_entries(asym, 2, 1.0, KernelKind::SelfKernel).is_err());
        let zero_diag = vec![0.0, 0.0, 0.0, 1.0];
        assert!(KernelMatrix::from_entries(zero_diag, 2, 1.0, KernelKind::SelfKernel).is_err());
        assert!(KernelMatrix::from_entries(vec![1.0; 6], 2, 1.0, KernelKind::SelfKernel).is_err());
        assert!(KernelMatrix::from_entries(vec![1.0], 1, 0.0, KernelKind::SelfKernel).is_err());
    }
}
