//! PCA and CCA on row-sample matrices (`n × p`).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ridge added to covariance blocks before whitening.
pub const CCA_RIDGE: f64 = 1e-8;

pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    x.row_sum().transpose() / n
}

pub fn center(x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mean = column_means(x);
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= mean.transpose();
    }
    (c, mean)
}

/// Eigen-decomposition sorted by descending eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), idx.len(), |r, c| {
        eig.eigenvectors[(r, idx[c])]
    });
    (vals, vecs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `d` rows of length `p`, orthonormal (zero rows past the data rank).
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
}

impl Pca {
    pub fn fit(x: &DMatrix<f64>, d: usize) -> Result<Pca> {
        let (n, p) = x.shape();
        if d > p {
            return Err(Error::InvalidInput(format!("pca: d={d} exceeds {p} columns")));
        }
        if n < 2 {
            return Err(Error::InsufficientData("pca needs at least 2 rows".into()));
        }
        let (c, mean) = center(x);
        let cov = (c.transpose() * &c) / (n as f64 - 1.0);
        let (vals, vecs) = sorted_eigen(cov);
        let top = vals.first().copied().unwrap_or(0.0).max(0.0);
        let rank_tol = top * 1e-12 * p as f64;
        let mut components = Vec::with_capacity(d);
        let mut explained = Vec::with_capacity(d);
        for k in 0..d {
            if vals[k] > rank_tol && vals[k] > 0.0 {
                let mut v: Vec<f64> = vecs.column(k).iter().copied().collect();
                // largest-magnitude coordinate is made positive
                let mut pivot = 0;
                for (i, x) in v.iter().enumerate() {
                    if x.abs() > v[pivot].abs() + 1e-12 {
                        pivot = i;
                    }
                }
                if v[pivot] < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
                components.push(v);
                explained.push(vals[k]);
            } else {
                components.push(vec![0.0; p]);
                explained.push(0.0);
            }
        }
        Ok(Pca {
            mean: mean.iter().copied().collect(),
            components,
            explained_variance: explained,
            total_variance: vals.iter().map(|v| v.max(0.0)).sum(),
        })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn retained_ratio(&self) -> f64 {
        if self.total_variance <= 0.0 {
            return 0.0;
        }
        self.explained_variance.iter().sum::<f64>() / self.total_variance
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(ci, (xi, mi))| ci * (xi - mi))
                    .sum()
            })
            .collect()
    }

    pub fn inverse_transform(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, zk) in self.components.iter().zip(z) {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += ci * zk;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcaResult {
    /// Descending, within [0, 1].
    pub correlations: Vec<f64>,
    /// `p × k` projection for the first view.
    pub x_weights: DMatrix<f64>,
    /// `q × k` projection for the second view.
    pub y_weights: DMatrix<f64>,
}

fn inv_sqrt(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m);
    let d = eig
        .eigenvalues
        .map(|l| 1.0 / l.max(f64::MIN_POSITIVE).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Canonical correlation analysis via whitening and an SVD of the whitened
/// cross-covariance.
pub fn cca(x: &DMatrix<f64>, y: &DMatrix<f64>, k: usize) -> Result<CcaResult> {
    let (n, p) = x.shape();
    let q = y.ncols();
    if y.nrows() != n {
        return Err(Error::Shape("cca views have different row counts".into()));
    }
    if n <= p + q {
        return Err(Error::InsufficientData(format!("cca needs n > p+q ({n} <= {})", p + q)));
    }
    if k == 0 || k > p.min(q) {
        return Err(Error::InvalidInput(format!("cca: k={k} must be in 1..={}", p.min(q))));
    }
    let (xc, _) = center(x);
    let (yc, _) = center(y);
    let denom = n as f64 - 1.0;
    let cxx = (xc.transpose() * &xc) / denom + DMatrix::identity(p, p) * CCA_RIDGE;
    let cyy = (yc.transpose() * &yc) / denom + DMatrix::identity(q, q) * CCA_RIDGE;
    let cxy = (xc.transpose() * &yc) / denom;
    let wx = inv_sqrt(cxx);
    let wy = inv_sqrt(cyy);
    let m = &wx * cxy * &wy;
    let svd = m.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Numeric("svd failed".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Numeric("svd failed".into()))?;
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let idx = &idx[..k];
    let correlations = idx
        .iter()
        .map(|&i| svd.singular_values[i].clamp(0.0, 1.0))
        .collect();
    let uk = DMatrix::from_fn(p, k, |r, c| u[(r, idx[c])]);
    let vk = DMatrix::from_fn(q, k, |r, c| vt[(idx[c], r)]);
    Ok(CcaResult {
        correlations,
        x_weights: wx * uk,
        y_weights: wy * vk,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::rng::stream(&[seed]);
        DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn cca_of_identical_views_is_one() {
        let x = gaussian(200, 4, 1);
        let r = cca(&x, &x, 4).unwrap();
        for c in &r.correlations {
            assert!((c - 1.0).abs() < 1e-6, "{c}");
        }
    }

    #[test]
    fn cca_invariant_to_invertible_maps() {
        let x = gaussian(300, 3, 2);
        let rmat = gaussian(3, 3, 3) + DMatrix::identity(3, 3) * 2.0;
        let y = &x * rmat;
        let r = cca(&x, &y, 3).unwrap();
        for c in &r.correlations {
            assert!((c - 1.0).abs() < 1e-6, "{c}");
        }
    }

    #[test]
    fn cca_independent_views_are_uncorrelated() {
        let x = gaussian(10_000, 5, 4);
        let y = gaussian(10_000, 5, 5);
        let r = cca(&x, &y, 5).unwrap();
        assert!(r.correlations.iter().all(|&c| c < 0.05), "{:?}", r.correlations);
        assert!(r.correlations.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn cca_rejects_bad_shapes() {
        let x = gaussian(5, 3, 1);
        assert!(cca(&x, &x, 3).is_err());
        let x = gaussian(50, 3, 1);
        assert!(cca(&x, &x, 4).is_err());
    }

    #[test]
    fn pca_on_a_line_retains_everything() {
        let x = DMatrix::from_fn(50, 3, |i, j| (i as f64) * [1.0, -2.0, 0.5][j]);
        let pca = Pca::fit(&x, 1).unwrap();
        assert!((pca.retained_ratio() - 1.0).abs() < 1e-9);
        // sign convention: largest-magnitude coordinate positive
        let c = &pca.components[0];
        assert!(c[1] > 0.0);
    }

    #[test]
    fn pca_isotropic_retains_half() {
        let x = gaussian(20_000, 4, 9);
        let pca = Pca::fit(&x, 2).unwrap();
        assert!((pca.retained_ratio() - 0.5).abs() < 0.05);
    }

    #[test]
    fn pca_reconstructs_rank_d_data() {
        let basis = gaussian(2, 5, 11);
        let coef = gaussian(100, 2, 12);
        let x = coef * basis;
        let pca = Pca::fit(&x, 2).unwrap();
        for i in 0..x.nrows() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let back = pca.inverse_transform(&pca.transform(&row));
            for (a, b) in row.iter().zip(&back) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn pca_zero_pads_beyond_rank() {
        let x = DMatrix::from_fn(30, 3, |i, _| i as f64);
        let pca = Pca::fit(&x, 3).unwrap();
        assert!(pca.components[1].iter().all(|&v| v == 0.0));
        assert!(Pca::fit(&x, 4).is_err());
    }
}
