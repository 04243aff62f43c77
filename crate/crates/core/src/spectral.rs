//! Covariance estimation from public unlabelled data, top-k eigenbasis
//! extraction, eigengap and low-rank-separability diagnostics, and projection
//! of datasets onto the estimated principal subspace.
//!
//! Nothing here accepts labels: the basis is a function of the public sample
//! alone.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::data::{MapPoints, UnlabeledDataset, NORM_TOL};
use crate::error::{Error, Result};
use crate::linalg::norm;

/// Points per reduction chunk. Chunks are summed in index order, so the result
/// does not depend on how rayon schedules them.
const CHUNK: usize = 2048;

/// Gaps below this are reported as degenerate.
pub const DEGENERATE_GAP: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-10;

/// Second-moment matrix `sum x x^T / n`, or the centered covariance
/// `sum (x - mean)(x - mean)^T / n` when `centered` is set.
pub fn empirical_covariance(data: &UnlabeledDataset, centered: bool) -> Result<DMatrix<f64>> {
    let n = data.len();
    let d = data.dim();
    if n == 0 || (centered && n < 2) {
        return Err(Error::EmptyDataset(format!(
            "covariance needs at least {} points, got {n}",
            if centered { 2 } else { 1 }
        )));
    }
    let flat = data.points().as_flat();

    let mean = if centered {
        let partial: Vec<Vec<f64>> = flat
            .par_chunks(CHUNK * d)
            .map(|chunk| {
                let mut s = vec![0.0; d];
                for row in chunk.chunks_exact(d) {
                    s.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                s
            })
            .collect();
        let mut m = vec![0.0; d];
        for p in &partial {
            m.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|v| *v /= n as f64);
        Some(m)
    } else {
        None
    };

    // Upper triangle, packed row-wise.
    let tri = d * (d + 1) / 2;
    let partial: Vec<Vec<f64>> = flat
        .par_chunks(CHUNK * d)
        .map(|chunk| {
            let mut acc = vec![0.0; tri];
            let mut buf = vec![0.0; d];
            for row in chunk.chunks_exact(d) {
                let x: &[f64] = match &mean {
                    Some(m) => {
                        buf.iter_mut()
                            .zip(row.iter().zip(m))
                            .for_each(|(b, (r, mu))| *b = r - mu);
                        &buf
                    }
                    None => row,
                };
                let mut p = 0;
                for i in 0..d {
                    let xi = x[i];
                    for xj in &x[i..] {
                        acc[p] += xi * xj;
                        p += 1;
                    }
                }
            }
            acc
        })
        .collect();

    let mut total = vec![0.0; tri];
    for p in &partial {
        total.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    let mut cov = DMatrix::zeros(d, d);
    let mut p = 0;
    for i in 0..d {
        for j in i..d {
            let v = total[p] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
            p += 1;
        }
    }
    Ok(cov)
}

/// Full eigendecomposition with eigenvalues sorted in descending order and
/// each eigenvector's largest-magnitude entry made positive.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

fn check_symmetric(cov: &DMatrix<f64>) -> Result<()> {
    if !cov.is_square() {
        return Err(Error::DimensionMismatch {
            expected: cov.nrows(),
            found: cov.ncols(),
        });
    }
    let d = cov.nrows();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in (i + 1)..d {
            let a = (cov[(i, j)] - cov[(j, i)]).abs();
            if !a.is_finite() {
                return Err(Error::NotSymmetric(f64::NAN));
            }
            worst = worst.max(a);
        }
    }
    if worst > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(worst));
    }
    Ok(())
}

pub fn eigendecompose(cov: &DMatrix<f64>) -> Result<Spectrum> {
    check_symmetric(cov)?;
    let d = cov.nrows();
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut vectors = DMatrix::zeros(d, d);
    let mut values = Vec::with_capacity(d);
    for (dst, &src) in order.iter().enumerate() {
        let mut col: DVector<f64> = eig.eigenvectors.column(src).into_owned();
        let pivot = col.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
        values.push(eig.eigenvalues[src]);
    }
    Ok(Spectrum {
        eigenvalues: values,
        eigenvectors: vectors,
    })
}

/// Column-orthonormal `d x k` matrix of leading eigenvectors.
#[derive(Debug, Clone)]
pub struct ProjectionBasis {
    columns: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    next_eigenvalue: Option<f64>,
}

impl ProjectionBasis {
    /// Builds a basis from explicit orthonormal columns (e.g. a reference
    /// basis in tests or diagnostics).
    pub fn from_columns(columns: DMatrix<f64>, eigenvalues: Vec<f64>) -> Result<Self> {
        let (d, k) = columns.shape();
        if k == 0 || k > d {
            return Err(Error::BadK { k, dim: d });
        }
        if eigenvalues.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: eigenvalues.len(),
            });
        }
        let gram = columns.transpose() * &columns;
        let dev = (gram - DMatrix::identity(k, k)).amax();
        if dev > 1e-8 {
            return Err(Error::InvalidData(format!("columns are not orthonormal (deviation {dev:e})")));
        }
        Ok(Self {
            columns,
            eigenvalues,
            next_eigenvalue: None,
        })
    }

    pub fn source_dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn target_dim(&self) -> usize {
        self.columns.ncols()
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `lambda_k - lambda_{k+1}` when `k < d`.
    pub fn gap_to_next(&self) -> Option<f64> {
        self.next_eigenvalue
            .map(|next| self.eigenvalues[self.eigenvalues.len() - 1] - next)
    }

    pub fn is_degenerate(&self) -> bool {
        self.gap_to_next().is_some_and(|g| g < DEGENERATE_GAP)
    }

    /// Basis made of the first `k` columns.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.target_dim() {
            return Err(Error::BadK {
                k,
                dim: self.target_dim(),
            });
        }
        Ok(Self {
            columns: self.columns.columns(0, k).into_owned(),
            eigenvalues: self.eigenvalues[..k].to_vec(),
            next_eigenvalue: if k < self.target_dim() {
                Some(self.eigenvalues[k])
            } else {
                self.next_eigenvalue
            },
        })
    }

    /// `A^T x`
    pub fn project_point(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.source_dim());
        let d = self.source_dim();
        for (j, o) in out.iter_mut().enumerate() {
            let col = &self.columns.as_slice()[j * d..(j + 1) * d];
            *o = crate::linalg::dot(col, x);
        }
    }

    /// `A v`, mapping a k-dimensional vector back to the source space.
    pub fn lift(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.target_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.target_dim(),
                found: v.len(),
            });
        }
        let d = self.source_dim();
        let mut out = vec![0.0; d];
        for (j, vj) in v.iter().enumerate() {
            let col = &self.columns.as_slice()[j * d..(j + 1) * d];
            crate::linalg::axpy(*vj, col, &mut out);
        }
        Ok(out)
    }

    /// Orthogonal projector `A A^T`.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.columns * self.columns.transpose()
    }
}

/// Leading `k` eigenpairs of a symmetric matrix.
pub fn top_k_eigenbasis(cov: &DMatrix<f64>, k: usize) -> Result<ProjectionBasis> {
    let d = cov.nrows();
    if k == 0 || k > d {
        return Err(Error::BadK { k, dim: d });
    }
    let spectrum = eigendecompose(cov)?;
    let basis = ProjectionBasis {
        columns: spectrum.eigenvectors.columns(0, k).into_owned(),
        eigenvalues: spectrum.eigenvalues[..k].to_vec(),
        next_eigenvalue: spectrum.eigenvalues.get(k).copied(),
    };
    if basis.is_degenerate() {
        log::warn!(
            "eigengap at k = {k} is {:e}; leading eigenvectors are not identifiable",
            basis.gap_to_next().unwrap_or(0.0)
        );
    }
    Ok(basis)
}

/// `lambda_k - lambda_{k+1}` for descending eigenvalues (1-based `k`).
pub fn eigengap(eigenvalues: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k + 1 > eigenvalues.len() {
        return Err(Error::BadK {
            k,
            dim: eigenvalues.len(),
        });
    }
    Ok((eigenvalues[k - 1] - eigenvalues[k]).max(0.0))
}

/// Low-rank separability defect `1 - ||A A^T w||`, clamped to `[0, 1]`.
pub fn estimate_xi(basis: &ProjectionBasis, w: &[f64]) -> Result<f64> {
    if w.len() != basis.source_dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.source_dim(),
            found: w.len(),
        });
    }
    debug_assert!((norm(w) - 1.0).abs() <= NORM_TOL, "reference direction must be unit norm");
    let mut coeffs = vec![0.0; basis.target_dim()];
    basis.project_point(w, &mut coeffs);
    // ||A A^T w|| = ||A^T w|| for orthonormal columns
    Ok((1.0 - norm(&coeffs)).clamp(0.0, 1.0))
}

/// Maps every point `x` to `A^T x`, keeping labels.
pub fn project<D: MapPoints>(basis: &ProjectionBasis, data: &D) -> Result<D> {
    if data.dim() != basis.source_dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.source_dim(),
            found: data.dim(),
        });
    }
    data.map_points(basis.target_dim(), |x, out| basis.project_point(x, out))
}

/// Frobenius distance `||P P^T - Q Q^T||_F` between the column spans of two
/// orthonormal matrices.
pub fn subspace_distance(p: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    (p * p.transpose() - q * q.transpose()).norm()
}
