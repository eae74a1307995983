//! Principal component projection of raw entity profiles.
//!
//! Fitting centers the full matrix on its column means and takes the top-k
//! right singular vectors of the centered data. The decomposition goes
//! through whichever of `X Xᵀ` / `Xᵀ X` is smaller, so wide expression
//! matrices (thousands of readouts, a few thousand entities) stay cheap.
//! Each component is sign-fixed so its largest-magnitude loading is positive.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::eigen::symmetric_eigen;
use crate::error::{Error, Result};
use crate::linalg::{matmul, Matrix};

/// Fitted centering vector and component matrix.
///
/// Both are stored in `f32`, and every projection (including the rows the
/// projection was fitted on) goes through [`PcaProjection::project`], so a
/// held-out entity is projected exactly like a training entity.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    mean: Vec<f32>,
    /// `k x raw_dim`, one unit component per row.
    components: Matrix<f32>,
    explained_variance_ratio: f64,
}

impl PcaProjection {
    pub fn from_parts(mean: Vec<f32>, components: Matrix<f32>, explained_variance_ratio: f64) -> Result<Self> {
        if components.cols() != mean.len() {
            return Err(Error::Dimension {
                expected: mean.len(),
                found: components.cols(),
            });
        }
        Ok(Self {
            mean,
            components,
            explained_variance_ratio,
        })
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn components(&self) -> &Matrix<f32> {
        &self.components
    }

    pub fn raw_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.rows()
    }

    pub fn explained_variance_ratio(&self) -> f64 {
        self.explained_variance_ratio
    }

    /// Projects one raw row onto the components.
    pub fn project(&self, raw: &[f32]) -> Result<Vec<f64>> {
        if raw.len() != self.mean.len() {
            return Err(Error::Dimension {
                expected: self.mean.len(),
                found: raw.len(),
            });
        }
        let centered: Vec<f64> = raw
            .iter()
            .zip(&self.mean)
            .map(|(x, m)| *x as f64 - *m as f64)
            .collect();
        Ok(self
            .components
            .iter_rows()
            .map(|c| c.iter().zip(&centered).map(|(a, b)| *a as f64 * b).sum())
            .collect())
    }

    /// Projects every row of `raw`.
    pub fn project_all(&self, raw: &Matrix<f32>) -> Result<Matrix<f64>> {
        let k = self.n_components();
        let mut out = Matrix::zeros(raw.rows(), k);
        for r in 0..raw.rows() {
            let p = self.project(raw.row(r))?;
            out.row_mut(r).copy_from_slice(&p);
        }
        Ok(out)
    }
}

/// Fits a `k`-component projection to the rows of `raw`.
pub fn fit_pca(raw: &Matrix<f32>, k: usize) -> Result<PcaProjection> {
    let n = raw.rows();
    let dim = raw.cols();
    if k == 0 {
        return Err(Error::Config("pca_components must be positive".into()));
    }
    if k > n.min(dim) {
        return Err(Error::Config(format!(
            "pca_components = {k} exceeds min(n_entities = {n}, raw_dim = {dim})"
        )));
    }

    let mut mean = vec![0.0f64; dim];
    for row in raw.iter_rows() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += *x as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered = Matrix::from_fn(n, dim, |r, c| raw.get(r, c) as f64 - mean[c]);
    let total_variance: f64 = centered.as_slice().iter().map(|x| x * x).sum();

    let (values, mut comps) = if n <= dim {
        let gram = matmul(&centered, false, &centered, true);
        let eig = symmetric_eigen(&gram);
        let scale = eig.values.last().copied().unwrap_or(0.0).max(0.0);
        let mut values = Vec::with_capacity(k);
        let mut comps: Vec<Vec<f64>> = Vec::with_capacity(k);
        for idx in (n - k..n).rev() {
            let lambda = eig.values[idx].max(0.0);
            values.push(lambda);
            if lambda > scale * 1e-12 && lambda > 0.0 {
                let u = eig.vectors.row(idx);
                let inv = 1.0 / libm::sqrt(lambda);
                let mut v = vec![0.0f64; dim];
                for (r, ur) in u.iter().enumerate() {
                    for (vc, xc) in v.iter_mut().zip(centered.row(r)) {
                        *vc += ur * xc;
                    }
                }
                v.iter_mut().for_each(|x| *x *= inv);
                comps.push(v);
            } else {
                comps.push(Vec::new());
            }
        }
        (values, comps)
    } else {
        let cov = matmul(&centered, true, &centered, false);
        let eig = symmetric_eigen(&cov);
        let mut values = Vec::with_capacity(k);
        let mut comps = Vec::with_capacity(k);
        for idx in (dim - k..dim).rev() {
            values.push(eig.values[idx].max(0.0));
            comps.push(eig.vectors.row(idx).to_vec());
        }
        (values, comps)
    };

    complete_basis(&mut comps, dim);
    for c in &mut comps {
        fix_sign(c);
    }

    let explained = if total_variance > 0.0 {
        (values.iter().sum::<f64>() / total_variance).min(1.0)
    } else {
        1.0
    };
    let components = Matrix::from_fn(k, dim, |r, c| comps[r][c] as f32);
    Ok(PcaProjection {
        mean: mean.iter().map(|m| *m as f32).collect(),
        components,
        explained_variance_ratio: explained,
    })
}

/// Fills empty slots (zero-variance directions) with unit vectors orthogonal to
/// the rest, built by Gram-Schmidt over the standard basis.
fn complete_basis(comps: &mut [Vec<f64>], dim: usize) {
    for slot in 0..comps.len() {
        if !comps[slot].is_empty() {
            continue;
        }
        for axis in 0..dim {
            let mut v = vec![0.0f64; dim];
            v[axis] = 1.0;
            for other in comps.iter().filter(|c| !c.is_empty()) {
                let p: f64 = other.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(other).for_each(|(x, o)| *x -= p * o);
            }
            let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
            if norm > 0.5 {
                v.iter_mut().for_each(|x| *x /= norm);
                comps[slot] = v;
                break;
            }
        }
    }
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn exact_subspace_has_full_explained_variance() {
        // Rows lie in a 3-dimensional affine subspace of R^10.
        let mut rng = SeededRng::new(3);
        let basis = Matrix::from_fn(3, 10, |_, _| rng.normal());
        let offset: Vec<f64> = (0..10).map(|_| rng.normal()).collect();
        let raw = Matrix::from_fn(40, 10, |_, _| 0.0f32);
        let mut raw = raw;
        for r in 0..40 {
            let coef: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            for c in 0..10 {
                let v: f64 = (0..3).map(|j| coef[j] * basis.get(j, c)).sum::<f64>() + offset[c];
                raw.set(r, c, v as f32);
            }
        }
        let p = fit_pca(&raw, 3).unwrap();
        assert!((p.explained_variance_ratio() - 1.0).abs() < 1e-6);
        // Same through the covariance route (more rows than columns is already
        // the case here; check the Gram route with a wide matrix too).
        let wide = Matrix::from_fn(10, 40, |r, c| raw.get(c, r));
        let pw = fit_pca(&wide, 9).unwrap();
        assert!(pw.explained_variance_ratio() <= 1.0);
    }

    #[test]
    fn components_are_orthonormal_and_sign_fixed() {
        let mut rng = SeededRng::new(4);
        for (n, d) in [(30usize, 8usize), (8, 30)] {
            let raw = Matrix::from_fn(n, d, |_, _| rng.normal() as f32);
            let p = fit_pca(&raw, 5).unwrap();
            let c = p.components();
            for i in 0..5 {
                let row = c.row(i);
                let max = row.iter().copied().fold(0.0f32, |m, x| if x.abs() > m.abs() { x } else { m });
                assert!(max > 0.0);
                for j in 0..5 {
                    let g: f64 = row.iter().zip(c.row(j)).map(|(a, b)| *a as f64 * *b as f64).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((g - expect).abs() < 1e-5, "({n},{d}) {i} {j} {g}");
                }
            }
        }
    }

    #[test]
    fn duplicated_rows_project_identically() {
        let mut rng = SeededRng::new(8);
        let mut raw = Matrix::from_fn(12, 6, |_, _| rng.normal() as f32);
        let copy = raw.row(0).to_vec();
        raw.row_mut(5).copy_from_slice(&copy);
        let p = fit_pca(&raw, 4).unwrap();
        assert_eq!(p.project(raw.row(0)).unwrap(), p.project(raw.row(5)).unwrap());
    }

    #[test]
    fn too_many_components_is_config_error() {
        let raw = Matrix::from_fn(4, 6, |r, c| (r * c) as f32);
        assert!(matches!(fit_pca(&raw, 5), Err(Error::Config(_))));
        assert!(matches!(fit_pca(&raw, 0), Err(Error::Config(_))));
    }
}
