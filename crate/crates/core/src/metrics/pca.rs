//! Two-dimensional PCA projection for feature visualization.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{MaflError, Result};
use crate::numerics::{Matrix, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub coords: Vec<[f64; 2]>,
    pub components: [Vec<f64>; 2],
    pub explained_variance_ratio: [f64; 2],
}

/// Projects onto the top two eigenvectors of the (1/N) covariance. Each
/// component's sign is fixed so its largest-magnitude loading is positive.
pub fn pca_project_2d<T: Real>(features: &Matrix<T>) -> Result<Projection> {
    let (n, d) = features.shape();
    if n < 3 {
        return Err(MaflError::Input(format!("PCA needs at least 3 rows, got {n}")));
    }
    if d < 2 {
        return Err(MaflError::Input(format!("PCA needs at least 2 columns, got {d}")));
    }
    features.ensure_finite("pca input")?;
    let x = DMatrix::from_fn(n, d, |r, c| features.get(r, c).as_f64());
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, d, |r, c| x[(r, c)] - mean[c]);
    let cov = centered.transpose() * &centered / n as f64;
    let total: f64 = cov.trace();
    if total <= 0.0 {
        return Err(MaflError::Degenerate("features have zero variance".into()));
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let component = |k: usize| -> Vec<f64> {
        let v: Vec<f64> = eig.eigenvectors.column(order[k]).iter().cloned().collect();
        let mut lead = 0;
        for (i, x) in v.iter().enumerate() {
            if x.abs() > v[lead].abs() {
                lead = i;
            }
        }
        if v[lead] < 0.0 {
            v.iter().map(|x| -x).collect()
        } else {
            v
        }
    };
    let components = [component(0), component(1)];
    let coords = (0..n)
        .map(|r| {
            let row = centered.row(r);
            let p = |c: &Vec<f64>| row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [p(&components[0]), p(&components[1])]
        })
        .collect();
    let ratio = |k: usize| eig.eigenvalues[order[k]].max(0.0) / total;
    Ok(Projection {
        coords,
        components,
        explained_variance_ratio: [ratio(0), ratio(1)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::RngStream;

    #[test]
    fn planar_data_reconstructs() {
        let mut rng = RngStream::new(0);
        let a: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let coef: Vec<(f64, f64)> = (0..50).map(|_| (rng.normal(), rng.normal())).collect();
        let x = Matrix::from_fn(50, 6, |r, c| coef[r].0 * a[c] + coef[r].1 * b[c] + 1.0);
        let p = pca_project_2d(&x).unwrap();
        assert!((p.explained_variance_ratio[0] + p.explained_variance_ratio[1] - 1.0).abs() < 1e-9);
        for r in 0..50 {
            for c in 0..6 {
                let mean: f64 = (0..50).map(|i| x.get(i, c)).sum::<f64>() / 50.0;
                let rec = mean + p.coords[r][0] * p.components[0][c] + p.coords[r][1] * p.components[1][c];
                assert!((rec - x.get(r, c)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn isotropic_ratio_near_two_over_d() {
        let mut rng = RngStream::new(1);
        let x = Matrix::from_fn(20000, 10, |_, _| rng.normal());
        let p = pca_project_2d(&x).unwrap();
        let sum = p.explained_variance_ratio[0] + p.explained_variance_ratio[1];
        assert!((sum - 0.2).abs() < 0.02, "{sum}");
    }

    #[test]
    fn duplicated_points_project_identically() {
        let mut rng = RngStream::new(2);
        let x = Matrix::from_fn(30, 4, |_, c| rng.normal() * (c + 1) as f64);
        let idx: Vec<usize> = (0..30).chain(0..30).collect();
        let p = pca_project_2d(&x).unwrap();
        let q = pca_project_2d(&x.select_rows(&idx)).unwrap();
        for r in 0..30 {
            for k in 0..2 {
                assert!((p.coords[r][k] - q.coords[r][k]).abs() < 1e-9);
                assert!((q.coords[r][k] - q.coords[r + 30][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sign_convention() {
        let mut rng = RngStream::new(3);
        let x = Matrix::from_fn(40, 3, |_, c| rng.normal() * [5.0, 2.0, 0.5][c]);
        let p = pca_project_2d(&x).unwrap();
        for comp in &p.components {
            let lead = comp.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(lead > 0.0);
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(pca_project_2d(&Matrix::<f64>::zeros(2, 3)), Err(MaflError::Input(_))));
        let constant = Matrix::from_fn(5, 3, |_, _| 2.0f64);
        assert!(matches!(pca_project_2d(&constant), Err(MaflError::Degenerate(_))));
    }
}
