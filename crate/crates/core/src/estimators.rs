//! Ridge regression, diagonal pessimism penalties and variance estimators.
//!
//! Every accumulation runs in dataset order starting from zero, so two calls
//! on the same slice with the same weights produce bit-identical results.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::mdp::{FeatureMap, Transition};
use crate::tv::clip;

/// `λI + Σ_τ φ_τ φ_τᵀ / w_τ`, factorized once.
#[derive(Debug, Clone)]
pub struct CovarianceMatrix {
    matrix: DMatrix<f64>,
    lambda: f64,
    chol: Cholesky<f64, Dyn>,
    inv_diag: Vec<f64>,
}

impl CovarianceMatrix {
    /// Wraps an arbitrary symmetric positive-definite matrix.
    pub fn from_matrix(matrix: DMatrix<f64>, lambda: f64) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Shape(format!(
                "covariance must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let chol = matrix
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("covariance".into()))?;
        let d = matrix.nrows();
        let inv_diag = (0..d)
            .map(|i| {
                let mut e = DVector::zeros(d);
                e[i] = 1.0;
                chol.solve(&e)[i]
            })
            .collect();
        Ok(Self {
            matrix,
            lambda,
            chol,
            inv_diag,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Diagonal of the inverse.
    pub fn inverse_diagonal(&self) -> &[f64] {
        &self.inv_diag
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    /// Ratio of largest to smallest eigenvalue.
    pub fn condition_number(&self) -> f64 {
        let eig = SymmetricEigen::try_new(self.matrix.clone(), 1e-12, 0)
            .expect("symmetric eigensolver does not converge without an iteration cap");
        eig.eigenvalues.max() / eig.eigenvalues.min()
    }
}

fn check_weights(weights: Option<&[f64]>, n: usize) -> Result<()> {
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::Shape(format!("{} weights for {n} samples", w.len())));
        }
        if let Some(bad) = w.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
            return Err(invalid(format!("sample weight {bad} must be positive")));
        }
    }
    Ok(())
}

/// Builds `λI + Σ_τ φ_τ φ_τᵀ / w_τ` (`w ≡ 1` when `weights` is `None`).
pub fn build_covariance(
    dim: usize,
    rows: &[&[f64]],
    lambda: f64,
    weights: Option<&[f64]>,
) -> Result<CovarianceMatrix> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("ridge lambda {lambda} must be positive")));
    }
    check_weights(weights, rows.len())?;
    let mut m = DMatrix::<f64>::zeros(dim, dim);
    for (t, phi) in rows.iter().enumerate() {
        if phi.len() != dim {
            return Err(Error::Shape(format!(
                "feature of length {} in dimension {dim}",
                phi.len()
            )));
        }
        let w = weights.map_or(1.0, |w| w[t]);
        for i in 0..dim {
            if phi[i] == 0.0 {
                continue;
            }
            for j in 0..dim {
                m[(i, j)] += phi[i] * phi[j] / w;
            }
        }
    }
    for i in 0..dim {
        m[(i, i)] += lambda;
    }
    CovarianceMatrix::from_matrix(m, lambda)
}

/// `Σ_τ φ_τ y_τ / w_τ`.
pub fn weighted_moment(
    dim: usize,
    rows: &[&[f64]],
    targets: &[f64],
    weights: Option<&[f64]>,
) -> DVector<f64> {
    let mut m = DVector::zeros(dim);
    for (t, (phi, y)) in rows.iter().zip(targets).enumerate() {
        let w = weights.map_or(1.0, |w| w[t]);
        for i in 0..dim {
            m[i] += phi[i] * y / w;
        }
    }
    m
}

pub fn ridge_solve(cov: &CovarianceMatrix, moment: &DVector<f64>) -> DVector<f64> {
    cov.solve(moment)
}

/// `Σ_i φ_i √((cov⁻¹)_ii)`.
pub fn diagonal_penalty(phi: &[f64], cov: &CovarianceMatrix) -> f64 {
    phi.iter()
        .zip(cov.inverse_diagonal())
        .map(|(p, d)| p * d.sqrt())
        .sum()
}

/// Truncated variance estimates `σ̂²(s, a)` at one step, all `≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimate {
    /// `[s][a]`
    pub values: Vec<Vec<f64>>,
    pub penalty: f64,
}

impl VarianceEstimate {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s][a]
    }

    /// Per-sample weights `σ̂²(s_τ, a_τ)` for a slice.
    pub fn sample_weights(&self, slice: &[&Transition]) -> Vec<f64> {
        slice.iter().map(|t| self.values[t.state][t.action]).collect()
    }

    pub fn is_unit(&self) -> bool {
        self.values.iter().flatten().all(|&v| v == 1.0)
    }
}

/// Feature rows of a step slice, in order.
pub fn slice_rows<'a>(features: &'a FeatureMap, slice: &[&Transition]) -> Vec<&'a [f64]> {
    slice.iter().map(|t| features.phi(t.state, t.action)).collect()
}

/// Variance estimate from a prebuilt unweighted covariance on the `D′` slice.
///
/// With `alpha = Some(α)` the regression targets are `[V′]_α` and `[V′]²_α`;
/// with `None` they are the untruncated `V′` and `V′²`.
pub fn estimate_variance_with(
    cov: &CovarianceMatrix,
    features: &FeatureMap,
    slice: &[&Transition],
    v_next: &[f64],
    alpha: Option<f64>,
    penalty: f64,
    horizon: usize,
) -> Result<VarianceEstimate> {
    if penalty.is_nan() || penalty < 0.0 {
        return Err(invalid(format!("variance penalty {penalty} must be >= 0")));
    }
    let d = features.dim();
    let rows = slice_rows(features, slice);
    let first: Vec<f64> = slice
        .iter()
        .map(|t| {
            let v = v_next[t.next_state];
            alpha.map_or(v, |a| v.min(a))
        })
        .collect();
    let second: Vec<f64> = first.iter().map(|v| v * v).collect();
    let z1 = ridge_solve(cov, &weighted_moment(d, &rows, &first, None));
    let z2 = ridge_solve(cov, &weighted_moment(d, &rows, &second, None));
    let hf = horizon as f64;
    let mut values = vec![vec![1.0; features.num_actions()]; features.num_states()];
    for (s, row) in values.iter_mut().enumerate() {
        for (a, out) in row.iter_mut().enumerate() {
            let phi = DVector::from_column_slice(features.phi(s, a));
            let m2 = clip(phi.dot(&z2), 0.0, hf * hf)?;
            let m1 = clip(phi.dot(&z1), 0.0, hf)?;
            *out = (m2 - m1 * m1 - penalty).max(1.0);
        }
    }
    Ok(VarianceEstimate { values, penalty })
}

/// Builds the `D′` covariance with ridge `lambda` and estimates the variance.
#[allow(clippy::too_many_arguments)]
pub fn estimate_variance(
    features: &FeatureMap,
    slice: &[&Transition],
    v_next: &[f64],
    alpha: Option<f64>,
    lambda: f64,
    penalty: f64,
    horizon: usize,
) -> Result<VarianceEstimate> {
    let cov = build_covariance(features.dim(), &slice_rows(features, slice), lambda, None)?;
    estimate_variance_with(&cov, features, slice, v_next, alpha, penalty, horizon)
}

/// Ridge regression of observed rewards on features.
pub fn estimate_reward_params(features: &FeatureMap, slice: &[&Transition], lambda: f64) -> Result<Vec<f64>> {
    let rows = slice_rows(features, slice);
    let cov = build_covariance(features.dim(), &rows, lambda, None)?;
    let rewards: Vec<f64> = slice.iter().map(|t| t.reward).collect();
    let theta = ridge_solve(&cov, &weighted_moment(features.dim(), &rows, &rewards, None));
    Ok(theta.iter().copied().collect())
}
