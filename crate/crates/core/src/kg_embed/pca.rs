use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{concatenate, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Stacks matrices with equal row counts side by side.
pub fn concat_columns(parts: &[ArrayView2<'_, f64>]) -> Result<Array2<f64>> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument("nothing to concatenate".into()));
    }
    concatenate(Axis(1), parts).map_err(|e| Error::Shape(e.to_string()))
}

/// Projects mean-centered rows onto the top `dims` principal components.
///
/// Components come from the eigendecomposition of the sample covariance,
/// ordered by descending eigenvalue. Each component is signed so that its
/// largest-magnitude loading is positive. Components with numerically zero
/// variance project to exact zeros.
pub fn pca_reduce(matrix: &Array2<f64>, dims: usize) -> Result<Array2<f64>> {
    let (n, m) = matrix.dim();
    if n < 2 {
        return Err(Error::InvalidArgument("PCA needs at least two rows".into()));
    }
    if dims == 0 || dims > n.min(m) {
        return Err(Error::InvalidArgument(format!(
            "cannot keep {dims} components of a {n}x{m} matrix"
        )));
    }
    let mean = matrix.mean_axis(Axis(0)).expect("non-empty");
    let centered = matrix - &mean;

    let mut cov = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let c = centered.column(i).dot(&centered.column(j)) / (n - 1) as f64;
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let top = eig.eigenvalues[order[0]].max(0.0);
    let cutoff = 1e-12 * top.max(f64::MIN_POSITIVE);
    let mut out = Array2::<f64>::zeros((n, dims));
    for (k, &c) in order.iter().take(dims).enumerate() {
        if eig.eigenvalues[c] <= cutoff {
            continue;
        }
        let v = eig.eigenvectors.column(c);
        let mut pivot = 0;
        for i in 1..m {
            if v[i].abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for (r, row) in centered.rows().into_iter().enumerate() {
            let mut s = 0.0;
            for i in 0..m {
                s += row[i] * v[i];
            }
            out[(r, k)] = sign * s;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Cyclic Jacobi eigenvalue iteration, used as an independent oracle.
    fn jacobi_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
        let mut a = a.clone();
        let n = a.nrows();
        for _ in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += a[(p, q)] * a[(p, q)];
                }
            }
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        ev.sort_by(|x, y| y.total_cmp(x));
        ev
    }

    fn sample_variance(col: ndarray::ArrayView1<'_, f64>) -> f64 {
        let n = col.len() as f64;
        let mean = col.sum() / n;
        col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn random_4x3_matches_jacobi_oracle() {
        let x = array![
            [0.52, -1.3, 2.2],
            [1.7, 0.4, -0.9],
            [-0.8, 2.5, 0.3],
            [0.1, -0.6, 1.4]
        ];
        let p = pca_reduce(&x, 2).unwrap();
        let dot = p.column(0).dot(&p.column(1));
        assert!(dot.abs() < 1e-8);
        let v0 = sample_variance(p.column(0));
        let v1 = sample_variance(p.column(1));
        assert!(v0 >= v1);

        let centered = &x - &x.mean_axis(Axis(0)).unwrap();
        let cov = centered.t().dot(&centered) / 3.0;
        let ev = jacobi_eigenvalues(&cov);
        assert!((v0 - ev[0]).abs() < 1e-9);
        assert!((v1 - ev[1]).abs() < 1e-9);
    }

    #[test]
    fn orthogonal_columns_are_recovered_up_to_sign() {
        // Centered, mutually orthogonal columns with distinct variances.
        let x = array![[3.0, 1.0], [-3.0, 1.0], [3.0, -1.0], [-3.0, -1.0]];
        let p = pca_reduce(&x, 2).unwrap();
        for j in 0..2 {
            let same = (0..4).all(|i| (p[(i, j)] - x[(i, j)]).abs() < 1e-12);
            let flipped = (0..4).all(|i| (p[(i, j)] + x[(i, j)]).abs() < 1e-12);
            assert!(same || flipped, "column {j}");
        }
    }

    #[test]
    fn rank_one_input_has_zero_second_component() {
        let x = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [-1.0, -2.0]];
        let p = pca_reduce(&x, 2).unwrap();
        assert!(p.column(1).iter().all(|&v| v == 0.0));
        assert!(p.column(0).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn constant_input_projects_to_zero() {
        let x = Array2::from_elem((5, 3), 7.5);
        let p = pca_reduce(&x, 2).unwrap();
        assert!(p.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_many_components_is_an_error() {
        let x = Array2::<f64>::zeros((3, 5));
        assert!(pca_reduce(&x, 4).is_err());
        assert!(pca_reduce(&Array2::<f64>::zeros((1, 5)), 1).is_err());
    }

    #[test]
    fn largest_loading_is_positive() {
        let x = array![[1.0, -4.0, 0.5], [2.0, -8.5, 0.1], [0.0, 1.0, 0.7], [5.0, -3.0, 0.2], [1.5, 2.0, 0.9]];
        let a = pca_reduce(&x, 3).unwrap();
        let neg = x.mapv(|v| -v);
        // Negating the data flips every eigenvector's pivot sign the same way,
        // so the projections of -x are exactly -a.
        let b = pca_reduce(&neg, 3).unwrap();
        for (u, v) in a.iter().zip(b.iter()) {
            assert!((u + v).abs() < 1e-9);
        }
    }

    #[test]
    fn concat_checks_row_counts() {
        let a = Array2::<f64>::zeros((2, 1));
        let b = Array2::<f64>::ones((2, 2));
        assert_eq!(concat_columns(&[a.view(), b.view()]).unwrap().dim(), (2, 3));
        let c = Array2::<f64>::ones((3, 2));
        assert!(concat_columns(&[a.view(), c.view()]).is_err());
    }
}
