//! Evaluation metrics: Fréchet distance, k-NN precision/recall, alignment
//! score and gauss2d mode coverage.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{invalid, Error, Result};
use crate::toy::JointEmbedder;

/// Eigenvalues below this are treated as zero.
pub const EIGEN_CLIP: f64 = 1e-8;

/// Default neighbourhood size for precision/recall.
pub const DEFAULT_K: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mu: Array1<f64>,
    pub sigma: Array2<f64>,
}

impl GaussianMoments {
    /// Mean and unbiased covariance; needs at least `d + 1` rows.
    pub fn fit(features: ArrayView2<'_, f64>) -> Result<Self> {
        let (n, d) = features.dim();
        if n < d + 1 {
            return Err(Error::InsufficientSamples { needed: d + 1, got: n });
        }
        let mu = features.mean_axis(Axis(0)).expect("n > 0");
        let centered = &features - &mu;
        let sigma = centered.t().dot(&centered) / (n - 1) as f64;
        Ok(Self { mu, sigma })
    }

    pub fn new(mu: Array1<f64>, sigma: Array2<f64>) -> Result<Self> {
        let d = mu.len();
        if sigma.dim() != (d, d) {
            return Err(invalid("covariance shape does not match mean"));
        }
        for i in 0..d {
            for j in 0..i {
                if (sigma[[i, j]] - sigma[[j, i]]).abs() > 1e-10 {
                    return Err(invalid("covariance is not symmetric"));
                }
            }
        }
        Ok(Self { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

/// Symmetric PSD square root with small negative eigenvalues clipped.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig
        .eigenvalues
        .map(|l| if l < EIGEN_CLIP { 0.0 } else { l.sqrt() });
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `|μ1 − μ2|² + Tr(Σ1 + Σ2 − 2 (Σ1 Σ2)^{1/2})`, clamped at zero.
///
/// The trace of `(Σ1 Σ2)^{1/2}` is computed as the sum of square roots of the
/// eigenvalues of the symmetric matrix `Σ1^{1/2} Σ2 Σ1^{1/2}`.
pub fn frechet_distance(a: &GaussianMoments, b: &GaussianMoments) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(invalid(format!(
            "feature dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let dmu = &a.mu - &b.mu;
    let s1 = to_dmatrix(&a.sigma);
    let s2 = to_dmatrix(&b.sigma);
    let r1 = psd_sqrt(&s1);
    let inner = &r1 * &s2 * &r1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|&l| if l < EIGEN_CLIP { 0.0 } else { l.sqrt() })
        .sum();
    let d2 = dmu.dot(&dmu) + s1.trace() + s2.trace() - 2.0 * cross;
    Ok(d2.max(0.0))
}

/// FID between two feature sets (rows are samples).
pub fn frechet_fid(real: ArrayView2<'_, f64>, fake: ArrayView2<'_, f64>) -> Result<f64> {
    if real.ncols() != fake.ncols() {
        return Err(invalid(format!(
            "feature dimensions differ: {} vs {}",
            real.ncols(),
            fake.ncols()
        )));
    }
    frechet_distance(&GaussianMoments::fit(real)?, &GaussianMoments::fit(fake)?)
}

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared distance from each row to its k-th nearest other row.
pub fn knn_radii_sq(points: ArrayView2<'_, f64>, k: usize) -> Result<Vec<f64>> {
    let n = points.nrows();
    if k == 0 || n < k + 1 {
        return Err(Error::InsufficientSamples { needed: k + 1, got: n });
    }
    let mut buf = Vec::with_capacity(n - 1);
    Ok((0..n)
        .map(|i| {
            buf.clear();
            let pi = points.row(i);
            buf.extend((0..n).filter(|&j| j != i).map(|j| sq_dist(pi, points.row(j))));
            let (_, kth, _) = buf.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
            *kth
        })
        .collect())
}

/// For each query row, whether it lies in some ball `(center_i, radius_i)`.
pub fn manifold_membership(
    centers: ArrayView2<'_, f64>,
    radii_sq: &[f64],
    queries: ArrayView2<'_, f64>,
) -> Vec<bool> {
    queries
        .rows()
        .into_iter()
        .map(|q| {
            centers
                .rows()
                .into_iter()
                .zip(radii_sq)
                .any(|(c, &r)| sq_dist(q, c) <= r)
        })
        .collect()
}

/// Improved precision and recall with k-NN balls.
///
/// Precision is the fraction of fake rows inside the real manifold; recall is
/// the fraction of real rows inside the fake manifold.
pub fn precision_recall(real: ArrayView2<'_, f64>, fake: ArrayView2<'_, f64>, k: usize) -> Result<(f64, f64)> {
    if real.ncols() != fake.ncols() {
        return Err(invalid("feature dimensions differ"));
    }
    let real_r = knn_radii_sq(real, k)?;
    let fake_r = knn_radii_sq(fake, k)?;
    let inside_real = manifold_membership(real, &real_r, fake);
    let inside_fake = manifold_membership(fake, &fake_r, real);
    let frac = |v: &[bool]| v.iter().filter(|b| **b).count() as f64 / v.len() as f64;
    Ok((frac(&inside_real), frac(&inside_fake)))
}

/// Mean cosine similarity between image and prompt embeddings.
pub fn clip_score(samples: ArrayView2<'_, f64>, prompts: ArrayView2<'_, f64>, embedder: &JointEmbedder) -> Result<f64> {
    if samples.nrows() == 0 {
        return Err(invalid("empty sample batch"));
    }
    Ok(embedder.similarities(samples, prompts)?.mean().unwrap_or(0.0))
}

/// Counts modes holding at least `max(1, 0.01·n)` samples within `radius`.
pub fn mode_coverage(samples: ArrayView2<'_, f64>, mode_means: &[[f64; 2]], radius: f64) -> (usize, Vec<usize>) {
    let n = samples.nrows();
    let r2 = radius * radius;
    let hist: Vec<usize> = mode_means
        .iter()
        .map(|m| {
            samples
                .rows()
                .into_iter()
                .filter(|s| (s[0] - m[0]).powi(2) + (s[1] - m[1]).powi(2) <= r2)
                .count()
        })
        .collect();
    let need = (0.01 * n as f64).max(1.0);
    let covered = hist.iter().filter(|&&c| c as f64 >= need).count();
    (covered, hist)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSpace {
    Identity,
    Encoder,
}

impl FeatureSpace {
    pub fn name(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Encoder => "encoder",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub fid: f64,
    pub clip_score: f64,
    pub precision: f64,
    pub recall: f64,
    pub n_real: usize,
    pub n_fake: usize,
    pub feature_space: FeatureSpace,
}

impl MetricReport {
    pub fn is_finite(&self) -> bool {
        [self.fid, self.clip_score, self.precision, self.recall]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;

    #[test]
    fn identical_sets_have_zero_fid() {
        let x = rng::normal_matrix(&mut rng::seeded(1), 200, 3);
        assert!(frechet_fid(x.view(), x.view()).unwrap() < 1e-8);
    }

    #[test]
    fn injected_moment_closed_forms() {
        let a = GaussianMoments::new(array![0.0], array![[1.0]]).unwrap();
        let b = GaussianMoments::new(array![1.0], array![[1.0]]).unwrap();
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);

        let a = GaussianMoments::new(array![0.0, 0.0], Array2::eye(2)).unwrap();
        let b = GaussianMoments::new(array![0.0, 0.0], Array2::eye(2) * 4.0).unwrap();
        assert!((frechet_distance(&a, &b).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples() {
        let x = Array2::<f64>::zeros((3, 3));
        assert!(matches!(
            frechet_fid(x.view(), x.view()),
            Err(Error::InsufficientSamples { needed: 4, got: 3 })
        ));
        let y = Array2::<f64>::zeros((10, 2));
        assert!(frechet_fid(x.view(), y.view()).is_err());
    }

    #[test]
    fn asymmetric_covariance_rejected() {
        assert!(GaussianMoments::new(array![0.0, 0.0], array![[1.0, 0.5], [0.0, 1.0]]).is_err());
    }

    #[test]
    fn pr_identity_and_separation() {
        let x = rng::normal_matrix(&mut rng::seeded(2), 60, 2);
        assert_eq!(precision_recall(x.view(), x.view(), 3).unwrap(), (1.0, 1.0));
        let far = x.mapv(|v| v + 1e4);
        assert_eq!(precision_recall(x.view(), far.view(), 3).unwrap(), (0.0, 0.0));
        assert!(precision_recall(x.slice(ndarray::s![..3, ..]), x.view(), 3).is_err());
    }

    #[test]
    fn knn_radius_excludes_self() {
        let pts = array![[0.0], [1.0], [3.0], [6.0]];
        let r = knn_radii_sq(pts.view(), 1).unwrap();
        assert_eq!(r, vec![1.0, 1.0, 4.0, 9.0]);
        let r = knn_radii_sq(pts.view(), 2).unwrap();
        assert_eq!(r, vec![9.0, 4.0, 9.0, 25.0]);
    }

    #[test]
    fn coverage_counts() {
        let means = crate::toy::gauss2d::mode_means();
        let pts = Array2::from_shape_fn((8, 2), |(i, j)| means[i][j]);
        assert_eq!(mode_coverage(pts.view(), &means, 1.0).0, 8);
        let one = Array2::from_shape_fn((100, 2), |(_, j)| means[0][j]);
        let (c, h) = mode_coverage(one.view(), &means, 1.0);
        assert_eq!(c, 1);
        assert_eq!(h[0], 100);
    }
}
