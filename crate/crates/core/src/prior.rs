//! Matérn Gaussian prior on the cell grid and its Karhunen–Loève parametrization.
//!
//! The covariance `c(d) = σ² 2^{1-ν}/Γ(ν) (d/l)^ν K_ν(d/l)` is assembled on
//! cell centres and diagonalized once. Fields are written as
//! `u = ū + Σ_k √λ_k v_k ξ_k` with `ξ_k ~ N(0, 1)`, where the modes `v_k` are
//! orthonormal in the `Δx`-weighted inner product.

use std::ops::Deref;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forward::{ForwardError, Grid1D, LogPermField};

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("invalid prior parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("eigendecomposition failed: {0}")]
    Numerical(String),
    #[error("basis cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Field(#[from] ForwardError),
}

/// Parameters of the Matérn covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaternParams {
    /// Marginal variance `σ²`.
    pub variance: f64,
    /// Smoothness `ν`.
    pub smoothness: f64,
    /// Correlation length `l`.
    pub length_scale: f64,
}

impl Default for MaternParams {
    fn default() -> Self {
        Self {
            variance: 0.5,
            smoothness: 1.5,
            length_scale: 0.05,
        }
    }
}

impl MaternParams {
    pub fn validate(&self) -> Result<(), PriorError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.variance) && ok(self.smoothness) && ok(self.length_scale) {
            Ok(())
        } else {
            Err(PriorError::InvalidParams(format!(
                "variance, smoothness and length scale must be positive, got {self:?}"
            )))
        }
    }
}

/// Scaled distances beyond this give correlations below 1e-200.
const MAX_SCALED_DISTANCE: f64 = 500.0;

/// Matérn covariance at distance `d`, with the zero-distance limit `σ²`.
pub fn matern_covariance(d: f64, params: &MaternParams) -> f64 {
    let d = d.abs();
    if d == 0.0 {
        return params.variance;
    }
    let z = d / params.length_scale;
    if z > MAX_SCALED_DISTANCE {
        return 0.0;
    }
    let nu = params.smoothness;
    let (_, k_nu, _, _) = puruspe::besselik(nu, z);
    params.variance * 2f64.powf(1.0 - nu) / puruspe::gamma(nu) * z.powf(nu) * k_nu
}

/// Covariance matrix between all pairs of cell centres.
pub fn build_covariance(grid: Grid1D, params: &MaternParams) -> Result<DMatrix<f64>, PriorError> {
    params.validate()?;
    let centers = grid.centers();
    let s = centers.len();
    // Uniform grid: the entry depends only on |i - j|.
    let lags: Vec<f64> = (0..s)
        .map(|k| matern_covariance(k as f64 * grid.dx(), params))
        .collect();
    Ok(DMatrix::from_fn(s, s, |i, j| lags[i.abs_diff(j)]))
}

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const CLIP_RATIO: f64 = 1e-12;

/// Eigenpairs of a covariance operator with quadrature weight `w`.
///
/// Modes are orthonormal under `⟨a, b⟩ = w Σ a_s b_s` and the covariance
/// matrix equals `Σ λ_k v_k v_kᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlBasis {
    eigenvalues: Vec<f64>,
    /// Column `k` is mode `v_k`.
    modes: DMatrix<f64>,
    weight: f64,
}

/// Full eigendecomposition of `weight · cov`, sorted by decreasing eigenvalue.
pub fn kl_decompose(cov: &DMatrix<f64>, weight: f64) -> Result<KlBasis, PriorError> {
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(PriorError::Dimension {
            expected: n,
            got: cov.ncols(),
        });
    }
    if !(weight > 0.0 && weight.is_finite()) {
        return Err(PriorError::InvalidParams(format!("quadrature weight {weight}")));
    }
    let scale = cov.amax().max(f64::MIN_POSITIVE);
    if (cov - cov.transpose()).amax() > 1e-10 * scale || cov.iter().any(|v| !v.is_finite()) {
        return Err(PriorError::Numerical("matrix is not finite and symmetric".into()));
    }
    let eig = SymmetricEigen::try_new(cov * weight, f64::EPSILON, 10_000)
        .ok_or_else(|| PriorError::Numerical("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let eigenvalues = order
        .iter()
        .map(|&k| {
            let l = eig.eigenvalues[k];
            if l < CLIP_RATIO * top {
                0.0
            } else {
                l
            }
        })
        .collect();
    let norm = weight.sqrt().recip();
    let modes = DMatrix::from_fn(n, n, |i, k| eig.eigenvectors[(i, order[k])] * norm);
    Ok(KlBasis {
        eigenvalues,
        modes,
        weight,
    })
}

impl KlBasis {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn mode(&self, k: usize) -> Vec<f64> {
        self.modes.column(k).iter().copied().collect()
    }

    /// Weighted inner product of two grid vectors.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weight * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    /// `Σ_k λ_k v_k v_kᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |i, k| {
            self.modes[(i, k)] * self.eigenvalues[k]
        });
        scaled * self.modes.transpose()
    }

    /// `ū + Σ_k √λ_k v_k c_k`.
    pub fn coeffs_to_values(&self, mean: &[f64], coeffs: &[f64]) -> Result<Vec<f64>, PriorError> {
        self.check_len(mean.len())?;
        self.check_len(coeffs.len())?;
        let scaled: Vec<f64> = coeffs
            .iter()
            .zip(&self.eigenvalues)
            .map(|(c, l)| c * l.sqrt())
            .collect();
        let u = &self.modes * DVector::from_vec(scaled);
        Ok(u.iter().zip(mean).map(|(a, m)| a + m).collect())
    }

    /// `c_k = λ_k^{-1/2} ⟨v_k, u − ū⟩`, with zero for clipped modes.
    pub fn values_to_coeffs(&self, mean: &[f64], values: &[f64]) -> Result<Vec<f64>, PriorError> {
        self.check_len(mean.len())?;
        self.check_len(values.len())?;
        let centred: Vec<f64> = values.iter().zip(mean).map(|(u, m)| u - m).collect();
        Ok((0..self.dim())
            .map(|k| {
                let l = self.eigenvalues[k];
                if l > 0.0 {
                    self.weight * self.modes.column(k).dot(&DVector::from_column_slice(&centred))
                        / l.sqrt()
                } else {
                    0.0
                }
            })
            .collect())
    }

    fn check_len(&self, got: usize) -> Result<(), PriorError> {
        if got == self.dim() {
            Ok(())
        } else {
            Err(PriorError::Dimension {
                expected: self.dim(),
                got,
            })
        }
    }
}

/// KL coordinates of a field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoeffVector(pub Vec<f64>);

impl Deref for CoeffVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for CoeffVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Field for coefficients `coeffs`.
pub fn coeffs_to_field(
    basis: &KlBasis,
    grid: Grid1D,
    mean: &[f64],
    coeffs: &CoeffVector,
) -> Result<LogPermField, PriorError> {
    Ok(LogPermField::new(grid, basis.coeffs_to_values(mean, coeffs)?)?)
}

/// Coefficients of `field` by weighted projection.
pub fn field_to_coeffs(
    basis: &KlBasis,
    mean: &[f64],
    field: &LogPermField,
) -> Result<CoeffVector, PriorError> {
    Ok(CoeffVector(basis.values_to_coeffs(mean, field.values())?))
}

/// I.i.d. standard normal coefficients and the corresponding field.
pub fn sample_prior<R: Rng + ?Sized>(
    basis: &KlBasis,
    grid: Grid1D,
    mean: &[f64],
    rng: &mut R,
) -> Result<(CoeffVector, LogPermField), PriorError> {
    let coeffs = CoeffVector((0..basis.dim()).map(|_| rng.sample(StandardNormal)).collect());
    let field = coeffs_to_field(basis, grid, mean, &coeffs)?;
    Ok((coeffs, field))
}

/// Gaussian prior on a grid with its precomputed KL basis.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    grid: Grid1D,
    params: MaternParams,
    mean: Vec<f64>,
    basis: KlBasis,
    /// `V diag(√λ)`, the map from coefficients to centred grid values.
    synthesis: DMatrix<f64>,
}

impl GaussianPrior {
    /// Zero-mean prior with a freshly computed basis.
    pub fn new(grid: Grid1D, params: MaternParams) -> Result<Self, PriorError> {
        let basis = kl_decompose(&build_covariance(grid, &params)?, grid.dx())?;
        Self::from_basis(grid, params, vec![0.0; grid.num_cells()], basis)
    }

    pub fn from_basis(
        grid: Grid1D,
        params: MaternParams,
        mean: Vec<f64>,
        basis: KlBasis,
    ) -> Result<Self, PriorError> {
        params.validate()?;
        basis.check_len(grid.num_cells())?;
        basis.check_len(mean.len())?;
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(PriorError::InvalidParams("non-finite prior mean".into()));
        }
        let synthesis = DMatrix::from_fn(basis.dim(), basis.dim(), |i, k| {
            basis.modes[(i, k)] * basis.eigenvalues[k].sqrt()
        });
        Ok(Self {
            grid,
            params,
            mean,
            basis,
            synthesis,
        })
    }

    pub fn with_mean(self, mean: Vec<f64>) -> Result<Self, PriorError> {
        Self::from_basis(self.grid, self.params, mean, self.basis)
    }

    pub fn grid(&self) -> Grid1D {
        self.grid
    }

    pub fn params(&self) -> &MaternParams {
        &self.params
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis(&self) -> &KlBasis {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Grid values for `coeffs`; the length must equal [`Self::dim`].
    pub fn values(&self, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.dim(), "coefficient length");
        let mut out = self.mean.clone();
        for (k, &c) in coeffs.iter().enumerate() {
            if c != 0.0 {
                for (o, a) in out.iter_mut().zip(self.synthesis.column(k).iter()) {
                    *o += a * c;
                }
            }
        }
        out
    }

    pub fn field(&self, coeffs: &CoeffVector) -> Result<LogPermField, PriorError> {
        self.basis.check_len(coeffs.len())?;
        Ok(LogPermField::new(self.grid, self.values(coeffs))?)
    }

    pub fn coeffs(&self, field: &LogPermField) -> Result<CoeffVector, PriorError> {
        field_to_coeffs(&self.basis, &self.mean, field)
    }

    pub fn sample_coeffs<R: Rng + ?Sized>(&self, rng: &mut R) -> CoeffVector {
        CoeffVector((0..self.dim()).map(|_| rng.sample(StandardNormal)).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(CoeffVector, LogPermField), PriorError> {
        let coeffs = self.sample_coeffs(rng);
        let field = self.field(&coeffs)?;
        Ok((coeffs, field))
    }

    /// File name identifying a basis by grid size and covariance parameters.
    pub fn cache_key(grid: Grid1D, params: &MaternParams) -> String {
        format!(
            "kl_S{}_L{}_var{}_nu{}_l{}.json",
            grid.num_cells(),
            grid.length(),
            params.variance,
            params.smoothness,
            params.length_scale
        )
    }

    /// Loads the basis from `dir` if cached, otherwise computes and stores it.
    pub fn cached(dir: &Path, grid: Grid1D, params: MaternParams) -> Result<Self, PriorError> {
        let path = dir.join(Self::cache_key(grid, &params));
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| PriorError::Cache(e.to_string()))?;
            let entry: CacheEntry =
                serde_json::from_str(&text).map_err(|e| PriorError::Cache(format!("{}: {e}", path.display())))?;
            if entry.grid != grid || entry.params != params {
                return Err(PriorError::Cache(format!("{} holds a different basis", path.display())));
            }
            return Self::from_basis(grid, params, vec![0.0; grid.num_cells()], entry.basis);
        }
        let prior = Self::new(grid, params)?;
        std::fs::create_dir_all(dir).map_err(|e| PriorError::Cache(e.to_string()))?;
        let entry = CacheEntry {
            grid,
            params,
            basis: prior.basis.clone(),
        };
        let text = serde_json::to_string(&entry).map_err(|e| PriorError::Cache(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| PriorError::Cache(e.to_string()))?;
        Ok(prior)
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    grid: Grid1D,
    params: MaternParams,
    basis: KlBasis,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn matern_closed_forms() {
        let p = MaternParams {
            variance: 2.0,
            smoothness: 0.5,
            length_scale: 0.1,
        };
        assert_eq!(matern_covariance(0.0, &p), 2.0);
        assert!((matern_covariance(0.1, &p) - 2.0 * (-1.0f64).exp()).abs() < 1e-12);
        let p = MaternParams {
            smoothness: 1.5,
            ..p
        };
        assert!((matern_covariance(0.1, &p) - 2.0 * 2.0 / 1.0f64.exp()).abs() < 1e-12);
        for d in [0.01, 0.05, 0.2, 0.7] {
            let z: f64 = d / 0.1;
            let exact = 2.0 * (1.0 + z) * (-z).exp();
            assert!((matern_covariance(d, &p) - exact).abs() < 1e-12 * 2.0, "d = {d}");
        }
        assert_eq!(matern_covariance(1e3, &p), 0.0);
    }

    #[test]
    fn covariance_rejects_bad_params() {
        let bad = MaternParams {
            smoothness: 0.0,
            ..MaternParams::default()
        };
        assert!(build_covariance(Grid1D::unit(10), &bad).is_err());
        let bad = MaternParams {
            length_scale: -1.0,
            ..MaternParams::default()
        };
        assert!(build_covariance(Grid1D::unit(10), &bad).is_err());
    }

    #[test]
    fn covariance_is_symmetric_with_constant_diagonal() {
        let c = build_covariance(Grid1D::unit(60), &MaternParams::default()).unwrap();
        assert_eq!(c, c.transpose());
        assert!(c.diagonal().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn identity_decomposition() {
        let b = kl_decompose(&DMatrix::identity(5, 5), 1.0).unwrap();
        assert!(b.eigenvalues().iter().all(|&l| (l - 1.0).abs() < 1e-12));
        let gram = b.modes().transpose() * b.modes();
        assert!((gram - DMatrix::identity(5, 5)).amax() < 1e-12);
    }

    #[test]
    fn rank_one_decomposition() {
        let a = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let b = kl_decompose(&(&a * a.transpose()), 1.0).unwrap();
        assert!((b.eigenvalues()[0] - a.norm_squared()).abs() < 1e-12);
        assert!(b.eigenvalues()[1..].iter().all(|&l| l == 0.0));
    }

    #[test]
    fn decomposition_rejects_asymmetric() {
        let mut m = DMatrix::identity(3, 3);
        m[(0, 1)] = 0.5;
        assert!(kl_decompose(&m, 1.0).is_err());
        assert!(kl_decompose(&DMatrix::zeros(2, 3), 1.0).is_err());
    }

    #[test]
    fn matern_basis_reconstructs_covariance() {
        let grid = Grid1D::unit(60);
        let cov = build_covariance(grid, &MaternParams::default()).unwrap();
        let b = kl_decompose(&cov, grid.dx()).unwrap();
        let rel = (b.reconstruct() - &cov).norm() / cov.norm();
        assert!(rel <= 1e-6, "relative error {rel}");
        assert!(b.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
        for j in 0..b.dim() {
            for k in 0..b.dim() {
                let ip = b.inner(&b.mode(j), &b.mode(k));
                let expect = if j == k { 1.0 } else { 0.0 };
                assert!((ip - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn coefficient_maps() {
        let prior = GaussianPrior::new(Grid1D::unit(60), MaternParams::default()).unwrap();
        let zero = CoeffVector(vec![0.0; 60]);
        assert_eq!(prior.values(&zero), prior.mean());
        let mut e1 = vec![0.0; 60];
        e1[0] = 1.0;
        let f = prior.field(&e1.clone().into()).unwrap();
        let l1 = prior.basis().eigenvalues()[0].sqrt();
        for (a, v) in f.values().iter().zip(prior.basis().mode(0)) {
            assert!((a - l1 * v).abs() < 1e-12);
        }
        let mut e2 = vec![0.0; 60];
        e2[1] = 1.0;
        let f2 = prior.field(&e2.clone().into()).unwrap();
        let back = prior.coeffs(&f2).unwrap();
        for (a, b) in back.iter().zip(&e2) {
            assert!((a - b).abs() < 1e-8);
        }
        let at_mean = LogPermField::new(prior.grid(), prior.mean().to_vec()).unwrap();
        assert!(prior.coeffs(&at_mean).unwrap().iter().all(|&c| c == 0.0));
        assert!(prior.field(&CoeffVector(vec![0.0; 3])).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_matches_free_function() {
        let prior = GaussianPrior::new(Grid1D::unit(30), MaternParams::default()).unwrap();
        let (c1, f1) = prior.sample(&mut stream(3, &[1])).unwrap();
        let (c2, f2) = prior.sample(&mut stream(3, &[1])).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(f1, f2);
        let (c3, f3) =
            sample_prior(prior.basis(), prior.grid(), prior.mean(), &mut stream(3, &[1])).unwrap();
        assert_eq!(c1, c3);
        for (a, b) in f1.values().iter().zip(f3.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn samples_look_continuous() {
        let prior = GaussianPrior::new(Grid1D::unit(120), MaternParams::default()).unwrap();
        let mut rng = stream(5, &[]);
        let mut first = 0.0;
        let mut second = 0.0;
        for _ in 0..200 {
            let (_, f) = prior.sample(&mut rng).unwrap();
            let v = f.values();
            first += v.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>();
            second += v.windows(3).map(|w| (w[2] - 2.0 * w[1] + w[0]).powi(2)).sum::<f64>();
        }
        // A rough field would have second differences about twice as large
        // as first differences; a once-differentiable one has much smaller.
        assert!(second < 0.5 * first, "second {second} first {first}");
    }

    #[test]
    fn basis_cache_round_trip() {
        let dir = std::env::temp_dir().join(format!("rtm-kl-cache-{}", std::process::id()));
        let grid = Grid1D::unit(20);
        let params = MaternParams::default();
        let a = GaussianPrior::cached(&dir, grid, params).unwrap();
        assert!(dir.join(GaussianPrior::cache_key(grid, &params)).exists());
        let b = GaussianPrior::cached(&dir, grid, params).unwrap();
        assert_eq!(a.basis(), b.basis());
        std::fs::remove_dir_all(&dir).ok();
    }
}
