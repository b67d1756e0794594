use nalgebra::{DMatrix, SymmetricEigen};

use super::FeatureMatrix;
use crate::error::{IrisError, Result};

/// Eigenvalues at or below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k` unit vectors, largest explained variance first.
    pub components: Vec<Vec<f64>>,
    /// `n × k` coordinates of the centered rows.
    pub projections: Vec<Vec<f64>>,
    /// Sample variance (divisor `n − 1`) along each component.
    pub explained_variance: Vec<f64>,
    /// Sum of per-feature sample variances.
    pub total_variance: f64,
}

impl Pca {
    /// Maps projections back to feature space.
    pub fn reconstruct(&self) -> Vec<Vec<f64>> {
        self.projections
            .iter()
            .map(|p| {
                let mut row = self.mean.clone();
                for (c, &coef) in self.components.iter().zip(p) {
                    for (r, v) in row.iter_mut().zip(c) {
                        *r += coef * v;
                    }
                }
                row
            })
            .collect()
    }
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
pub(crate) fn fix_sign(v: &mut [f64]) {
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

/// Eigenpairs sorted by descending eigenvalue, ties by index.
fn sorted_eigen(m: DMatrix<f64>) -> Vec<(f64, Vec<f64>)> {
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, Vec<f64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &l)| (l, eig.eigenvectors.column(i).iter().copied().collect()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

/// Principal components of the rows of `m`, via the covariance matrix or,
/// when there are fewer rows than features, the Gram matrix.
pub fn pca(m: &FeatureMatrix, k: usize) -> Result<Pca> {
    let n = m.rows.len();
    if n < 2 {
        return Err(IrisError::InvalidArgument("PCA needs at least two rows".into()));
    }
    let dim = m.dim();
    if k == 0 || k > (n - 1).min(dim) {
        return Err(IrisError::InvalidArgument(format!(
            "k = {k} outside 1..={}",
            (n - 1).min(dim)
        )));
    }
    let mut mean = vec![0.0; dim];
    for row in &m.rows {
        for (a, v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= n as f64);
    let x = DMatrix::from_fn(n, dim, |i, j| m.rows[i][j] - mean[j]);
    let denom = (n - 1) as f64;
    let total_variance = x.iter().map(|v| v * v).sum::<f64>() / denom;

    let mut components = Vec::with_capacity(k);
    let mut explained_variance = Vec::with_capacity(k);
    if n < dim {
        let gram = &x * x.transpose();
        let pairs = sorted_eigen(gram);
        let top = pairs.first().map(|p| p.0).unwrap_or(0.0).max(0.0);
        for (lambda, u) in pairs.into_iter().take(k) {
            if lambda <= top * RANK_TOL || lambda <= 0.0 {
                components.push(vec![0.0; dim]);
                explained_variance.push(0.0);
                continue;
            }
            let u = nalgebra::DVector::from_vec(u);
            let mut c: Vec<f64> = (x.transpose() * u / lambda.sqrt()).iter().copied().collect();
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            c.iter_mut().for_each(|v| *v /= norm);
            fix_sign(&mut c);
            components.push(c);
            explained_variance.push(lambda / denom);
        }
    } else {
        let cov = x.transpose() * &x / denom;
        let pairs = sorted_eigen(cov);
        let top = pairs.first().map(|p| p.0).unwrap_or(0.0).max(0.0);
        for (lambda, mut c) in pairs.into_iter().take(k) {
            if top == 0.0 {
                components.push(vec![0.0; dim]);
                explained_variance.push(0.0);
                continue;
            }
            fix_sign(&mut c);
            components.push(c);
            explained_variance.push(lambda.max(0.0));
        }
    }
    let zero = explained_variance.iter().filter(|v| **v == 0.0).count();
    if zero > 0 {
        log::warn!("{zero} of {k} PCA components have zero variance and are left as zero vectors");
    }
    let projections = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|c| x.row(i).iter().zip(c).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    Ok(Pca {
        mean,
        components,
        projections,
        explained_variance,
        total_variance,
    })
}
