//! Linear minimax IV: closed-form loss, 2SLS, OLS, projected MSE, ill-posedness.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iv::design::{StageDesign, TargetTag};
use crate::linalg::{rows_serde, solve_sym, solve_sym_vec, sym_condition, sym_eigen, sym_pinv, sym_rank, RANGE_TOL};

/// Largest condition number accepted for `ZᵀZ + λI`.
pub const MAX_CONDITION: f64 = 1e12;

fn ridge(mut g: DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    for i in 0..g.nrows() {
        g[(i, i)] += lambda;
    }
    g
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!(
            "ridge must be finite and nonnegative, got {lambda}"
        )));
    }
    Ok(())
}

/// `ZᵀZ + λI`, refused when numerically singular.
fn instrument_gram(design: &StageDesign, lambda: f64) -> Result<DMatrix<f64>> {
    check_lambda(lambda)?;
    let g = ridge(design.z.tr_mul(&design.z), lambda);
    let cond = sym_condition(&g);
    if cond > MAX_CONDITION {
        return Err(Error::Numerical(format!(
            "ZᵀZ + λI is numerically singular (condition number {cond:.3e}); use a ridge λ > 0"
        )));
    }
    Ok(g)
}

/// `(1/2K) eᵀZ(ZᵀZ + λI)⁻¹Zᵀe` with `e = y - Xθ`: the supremum over linear test
/// functions `f(z) = βᵀz` of `(1/K)Σ e f(z) - (1/2K)Σ f(z)²`.
pub fn minimax_loss_linear(design: &StageDesign, theta: &[f64], lambda: f64) -> Result<f64> {
    if theta.len() != design.n() {
        return Err(Error::Dimension(format!(
            "θ has length {}, expected {}",
            theta.len(),
            design.n()
        )));
    }
    let g = instrument_gram(design, lambda)?;
    let e = &design.y - &design.x * DVector::from_column_slice(theta);
    let ze = design.z.tr_mul(&e);
    let beta = solve_sym_vec(&g, &ze)?;
    Ok(ze.dot(&beta) / (2.0 * design.k() as f64))
}

/// Maximizer `β* = (ZᵀZ + λI)⁻¹Zᵀe` of the inner problem.
pub fn dual_maximizer(design: &StageDesign, theta: &[f64], lambda: f64) -> Result<DVector<f64>> {
    let g = instrument_gram(design, lambda)?;
    let e = &design.y - &design.x * DVector::from_column_slice(theta);
    solve_sym_vec(&g, &design.z.tr_mul(&e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoSlsFit {
    pub theta_hat: Vec<f64>,
    pub loss_at_min: f64,
    /// `XᵀP_Z X / (2K)`.
    #[serde(rename = "A", with = "rows_serde")]
    pub a: DMatrix<f64>,
    pub lambda: f64,
    pub rank: usize,
    pub target_tag: TargetTag,
    pub h: usize,
    pub k: usize,
    /// Norm of the dual maximizer at `theta_hat`.
    pub beta_norm: f64,
}

/// Shared pieces of a 2SLS solve.
struct Projected {
    /// `XᵀP_Z X`.
    xpx: DMatrix<f64>,
    /// `XᵀP_Z y`.
    xpy: DVector<f64>,
}

fn project(design: &StageDesign, inner: f64) -> Result<Projected> {
    let g = instrument_gram(design, inner)?;
    let zx = design.z.tr_mul(&design.x);
    let zy = design.z.tr_mul(&design.y);
    let q = solve_sym(&g, &zx)?;
    Ok(Projected {
        xpx: crate::linalg::symmetrize(&zx.tr_mul(&q)),
        xpy: q.tr_mul(&zy),
    })
}

/// 2SLS with the same ridge inside the projection and on the outer normal equations.
pub fn fit_2sls(design: &StageDesign, lambda: f64) -> Result<TwoSlsFit> {
    fit_2sls_with(design, lambda, lambda)
}

/// `θ̂ = (XᵀP_Z X + λ_out I)⁻¹ XᵀP_Z y` with `P_Z = Z(ZᵀZ + λ_in I)⁻¹Zᵀ`.
pub fn fit_2sls_with(design: &StageDesign, inner: f64, outer: f64) -> Result<TwoSlsFit> {
    check_lambda(outer)?;
    design.require_enough_rows()?;
    let p = project(design, inner)?;
    let rank = sym_rank(&p.xpx);
    if outer == 0.0 && rank < design.n() {
        return Err(Error::Degenerate(format!(
            "XᵀP_Z X has rank {rank} < {}; the parameter is not identified without a ridge",
            design.n()
        )));
    }
    let lhs = ridge(p.xpx.clone(), outer);
    if sym_condition(&lhs) > MAX_CONDITION {
        return Err(Error::Degenerate("XᵀP_Z X + λI is numerically singular".into()));
    }
    let theta = solve_sym_vec(&lhs, &p.xpy)?;
    let theta_hat: Vec<f64> = theta.iter().copied().collect();
    let k = design.k();
    let loss_at_min = minimax_loss_linear(design, &theta_hat, inner)?;
    let beta_norm = dual_maximizer(design, &theta_hat, inner)?.norm();
    Ok(TwoSlsFit {
        theta_hat,
        loss_at_min,
        a: p.xpx / (2.0 * k as f64),
        lambda: inner,
        rank,
        target_tag: design.target,
        h: design.h,
        k,
        beta_norm,
    })
}

/// Ordinary least squares `(XᵀX + λI)⁻¹Xᵀy`, ignoring the instruments.
pub fn naive_ols(design: &StageDesign, lambda: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    let g = ridge(design.x.tr_mul(&design.x), lambda);
    if sym_condition(&g) > MAX_CONDITION {
        return Err(Error::Degenerate("XᵀX + λI is numerically singular".into()));
    }
    Ok(solve_sym_vec(&g, &design.x.tr_mul(&design.y))?
        .iter()
        .copied()
        .collect())
}

/// `(1/K)‖P_Z X(θ - θ_ref)‖²` with the exact projection onto the span of `Z`.
pub fn projected_mse(design: &StageDesign, theta: &[f64], theta_ref: &[f64]) -> Result<f64> {
    if theta.len() != design.n() || theta_ref.len() != design.n() {
        return Err(Error::Dimension("parameter length differs from the design".into()));
    }
    let d = DVector::from_iterator(design.n(), theta.iter().zip(theta_ref).map(|(a, b)| a - b));
    let zxd = design.z.tr_mul(&(&design.x * d));
    let ginv = sym_pinv(&design.z.tr_mul(&design.z));
    Ok(zxd.dot(&(ginv * &zxd)) / design.k() as f64)
}

/// `τ̂`: square root of the largest generalized eigenvalue of `XᵀX/K` against
/// `XᵀP_Z X/K`, restricted to the range of the latter.
pub fn ill_posedness_linear(design: &StageDesign) -> Result<f64> {
    let k = design.k() as f64;
    let sigma = design.x.tr_mul(&design.x) / k;
    let zx = design.z.tr_mul(&design.x);
    let b = crate::linalg::symmetrize(&(zx.tr_mul(&(sym_pinv(&design.z.tr_mul(&design.z)) * &zx)) / k));
    let (vals, vecs) = sym_eigen(&b);
    let top = vals.iter().cloned().fold(0.0_f64, f64::max);
    if top <= 0.0 {
        return Err(Error::Degenerate("XᵀP_Z X is identically zero".into()));
    }
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > RANGE_TOL * top).collect();
    let mut w = DMatrix::zeros(design.n(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        w.set_column(c, &(vecs.column(i) / vals[i].sqrt()));
    }
    let m = w.tr_mul(&(sigma * &w));
    let (gen, _) = sym_eigen(&m);
    Ok(gen[0].max(0.0).sqrt())
}

/// Warns when the dual maximizer leaves a configured norm ball.
pub fn check_test_bound(fit: &TwoSlsFit, bound: Option<f64>) {
    if let Some(u) = bound {
        if fit.beta_norm > u {
            warn!(
                "stage {} {}: dual maximizer norm {:.3} exceeds the test-function bound {u}",
                fit.h, fit.target_tag, fit.beta_norm
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn two_point_loss_by_hand() {
        let d = StageDesign::new(
            col(&[1.0, 2.0]),
            col(&[1.0, 1.0]),
            DVector::from_vec(vec![1.0, 2.0]),
            0,
            TargetTag::Reward,
        )
        .unwrap();
        assert!((minimax_loss_linear(&d, &[0.0], 0.0).unwrap() - 1.125).abs() < 1e-12);
        // y = X * 1 gives zero residual
        assert!(minimax_loss_linear(&d, &[1.0], 0.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn residual_orthogonal_to_instruments_has_zero_loss() {
        let d = StageDesign::new(
            col(&[0.0, 0.0]),
            col(&[1.0, 1.0]),
            DVector::from_vec(vec![1.0, -1.0]),
            0,
            TargetTag::Reward,
        )
        .unwrap();
        assert!(minimax_loss_linear(&d, &[0.3], 0.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn singular_instrument_gram_needs_ridge() {
        let d = StageDesign::new(
            col(&[1.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
            DVector::from_vec(vec![1.0, 2.0]),
            0,
            TargetTag::Reward,
        )
        .unwrap();
        assert!(matches!(minimax_loss_linear(&d, &[0.0], 0.0), Err(Error::Numerical(_))));
        assert!(minimax_loss_linear(&d, &[0.0], 1e-3).is_ok());
    }

    #[test]
    fn exactly_identified_recovers_truth() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, -1.0]);
        let y = &x * DVector::from_vec(vec![0.5, -2.0]);
        let d = StageDesign::new(x.clone(), x, y, 0, TargetTag::Reward).unwrap();
        let fit = fit_2sls(&d, 0.0).unwrap();
        assert!((fit.theta_hat[0] - 0.5).abs() < 1e-12 && (fit.theta_hat[1] + 2.0).abs() < 1e-12);
        let ols = naive_ols(&d, 0.0).unwrap();
        assert!((ols[0] - 0.5).abs() < 1e-12);
        assert!((ill_posedness_linear(&d).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn too_few_rows_is_degenerate() {
        let d = StageDesign::new(
            DMatrix::from_element(1, 2, 1.0),
            DMatrix::from_element(1, 2, 1.0),
            DVector::from_element(1, 1.0),
            0,
            TargetTag::Reward,
        )
        .unwrap();
        assert!(matches!(fit_2sls(&d, 1.0), Err(Error::Degenerate(_))));
    }
}
