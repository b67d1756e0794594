use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};

use super::pca::fix_sign;
use crate::error::{IrisError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Lda {
    /// `k` unit-norm discriminant directions, most discriminative first.
    pub directions: Vec<Vec<f64>>,
    /// Between/within scatter ratio along each direction.
    pub ratios: Vec<f64>,
    /// `n × k` projections of the rows, centered on the global mean.
    pub projections: Vec<Vec<f64>>,
    pub classes: Vec<String>,
}

/// Fisher discriminant directions from the generalized eigenproblem
/// `Sb w = λ Sw w`, with `Sw` regularized by `εI`, `ε = 1e-6 · tr(Sw) / p`.
pub fn lda(x: &[Vec<f64>], labels: &[String], k: usize) -> Result<Lda> {
    let n = x.len();
    if labels.len() != n {
        return Err(IrisError::DimensionMismatch {
            context: "LDA labels".into(),
            expected: n,
            found: labels.len(),
        });
    }
    let p = x.first().map(Vec::len).unwrap_or(0);
    if p == 0 || x.iter().any(|r| r.len() != p) {
        return Err(IrisError::InvalidArgument("LDA rows must share a nonzero width".into()));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l.as_str()).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(IrisError::InvalidArgument("LDA needs at least two classes".into()));
    }
    if let Some((c, _)) = groups.iter().find(|(_, v)| v.len() < 2) {
        return Err(IrisError::InvalidArgument(format!(
            "class `{c}` has fewer than two samples"
        )));
    }
    if k == 0 || k > (groups.len() - 1).min(p) {
        return Err(IrisError::InvalidArgument(format!(
            "k = {k} outside 1..={}",
            (groups.len() - 1).min(p)
        )));
    }

    let data = DMatrix::from_fn(n, p, |i, j| x[i][j]);
    let global = data.row_mean();
    let mut sw = DMatrix::<f64>::zeros(p, p);
    let mut sb = DMatrix::<f64>::zeros(p, p);
    for idx in groups.values() {
        let rows = DMatrix::from_fn(idx.len(), p, |i, j| data[(idx[i], j)]);
        let mean = rows.row_mean();
        for r in 0..rows.nrows() {
            let d = (rows.row(r) - &mean).transpose();
            sw += &d * d.transpose();
        }
        let d = (&mean - &global).transpose();
        sb += (&d * d.transpose()) * idx.len() as f64;
    }
    let trace = sw.trace();
    let eps = if trace > 0.0 { 1e-6 * trace / p as f64 } else { 1e-6 };
    for i in 0..p {
        sw[(i, i)] += eps;
    }
    let chol = sw
        .cholesky()
        .ok_or_else(|| IrisError::InvalidArgument("within-class scatter is not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| IrisError::InvalidArgument("singular Cholesky factor".into()))?;
    let m = &l_inv * &sb * l_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut directions = Vec::with_capacity(k);
    let mut ratios = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let w = l_inv.transpose() * eig.eigenvectors.column(i);
        let norm = w.norm();
        let mut w: Vec<f64> = w.iter().map(|v| v / norm).collect();
        fix_sign(&mut w);
        directions.push(w);
        ratios.push(eig.eigenvalues[i].max(0.0));
    }
    let projections = (0..n)
        .map(|i| {
            directions
                .iter()
                .map(|w| (0..p).map(|j| (x[i][j] - global[j]) * w[j]).sum())
                .collect()
        })
        .collect();
    Ok(Lda {
        directions,
        ratios,
        projections,
        classes: groups.keys().map(|s| s.to_string()).collect(),
    })
}
