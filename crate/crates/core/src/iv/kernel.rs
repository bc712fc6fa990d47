//! Kernel (RKHS) minimax IV in dual form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iv::design::StageDesign;

/// Largest sample size accepted by the dense solver.
pub const MAX_KERNEL_ROWS: usize = 5000;
const PSD_JITTER: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    /// `exp(-|u - v|² / (2 bandwidth²))`.
    Rbf {
        bandwidth: f64,
    },
}

impl Kernel {
    pub fn eval(&self, u: &[f64], v: &[f64]) -> f64 {
        match self {
            Kernel::Linear => crate::linalg::dot(u, v),
            Kernel::Rbf { bandwidth } => (-crate::linalg::sq_dist(u, v) / (2.0 * bandwidth * bandwidth)).exp(),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Kernel::Rbf { bandwidth } = self {
            if !(*bandwidth > 0.0) {
                return Err(Error::Config("RBF bandwidth must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Kernels on the covariate (`x`) and instrument (`z`) sides.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub x: Kernel,
    pub z: Kernel,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    crate::linalg::matrix_to_rows(m)
}

pub fn gram(kernel: Kernel, pts: &[Vec<f64>]) -> DMatrix<f64> {
    let k = pts.len();
    let mut g = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..=i {
            let v = kernel.eval(&pts[i], &pts[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

fn check_psd(g: &DMatrix<f64>, what: &str) -> Result<()> {
    let scale = (0..g.nrows()).map(|i| g[(i, i)].abs()).fold(0.0_f64, f64::max).max(1.0);
    let mut j = g.clone();
    for i in 0..j.nrows() {
        j[(i, i)] += PSD_JITTER * scale;
    }
    if j.cholesky().is_none() {
        return Err(Error::Numerical(format!("{what} Gram matrix is not PSD after jitter")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelFit {
    pub kernels: KernelSpec,
    pub alpha: Vec<f64>,
    pub lambda: f64,
    pub train_x: Vec<Vec<f64>>,
    #[serde(skip)]
    pub gram_x: DMatrix<f64>,
    /// Regularized projection `G_z (G_z + KλI)⁻¹`.
    #[serde(skip)]
    pub projection: DMatrix<f64>,
    #[serde(skip)]
    pub y: DVector<f64>,
}

impl KernelFit {
    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    /// `(1/2K)(y - G α)ᵀ M (y - G α)`.
    pub fn loss(&self, alpha: &[f64]) -> Result<f64> {
        if alpha.len() != self.k() {
            return Err(Error::Dimension("coefficient vector length differs from K".into()));
        }
        let r = &self.y - &self.gram_x * DVector::from_column_slice(alpha);
        Ok(r.dot(&(&self.projection * &r)) / (2.0 * self.k() as f64))
    }

    /// Fitted values at the training points.
    pub fn fitted(&self) -> Vec<f64> {
        (&self.gram_x * DVector::from_column_slice(&self.alpha))
            .iter()
            .copied()
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.train_x
            .iter()
            .zip(&self.alpha)
            .map(|(xi, a)| a * self.kernels.x.eval(xi, x))
            .sum()
    }
}

/// Minimizes `(1/2K)(y - Gα)ᵀM(y - Gα) + λ αᵀGα` with `M = G_z(G_z + KλI)⁻¹`.
///
/// The stationarity condition `G[M(y - Gα) - 2Kλα] = 0` is solved through
/// `(M G + 2KλI) α = M y`.
pub fn fit_kernel_iv(design: &StageDesign, kernels: KernelSpec, lambda: f64) -> Result<KernelFit> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Config("kernel IV needs a positive ridge".into()));
    }
    kernels.x.validate()?;
    kernels.z.validate()?;
    let k = design.k();
    if k > MAX_KERNEL_ROWS {
        return Err(Error::Config(format!(
            "kernel IV supports at most {MAX_KERNEL_ROWS} rows, got {k}"
        )));
    }
    let xs = rows(&design.x);
    let zs = rows(&design.z);
    let gx = gram(kernels.x, &xs);
    let gz = gram(kernels.z, &zs);
    check_psd(&gx, "covariate")?;
    check_psd(&gz, "instrument")?;
    let kl = k as f64 * lambda;
    let mut b = gz.clone();
    for i in 0..k {
        b[(i, i)] += kl;
    }
    let chol = b
        .cholesky()
        .ok_or_else(|| Error::Numerical("G_z + KλI is not positive definite".into()))?;
    // M = I - Kλ B⁻¹ = G_z B⁻¹
    let mut m = chol.inverse() * (-kl);
    for i in 0..k {
        m[(i, i)] += 1.0;
    }
    let m = crate::linalg::symmetrize(&m);
    let mut lhs = &m * &gx;
    for i in 0..k {
        lhs[(i, i)] += 2.0 * kl;
    }
    let rhs = &m * &design.y;
    let alpha = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("kernel IV system is singular".into()))?;
    Ok(KernelFit {
        kernels,
        alpha: alpha.iter().copied().collect(),
        lambda,
        train_x: xs,
        gram_x: gx,
        projection: m,
        y: design.y.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iv::design::TargetTag;

    #[test]
    fn zero_targets_give_zero_coefficients() {
        let x = DMatrix::from_fn(6, 1, |i, _| i as f64 * 0.3);
        let z = DMatrix::from_fn(6, 1, |i, _| (i % 2) as f64);
        let d = StageDesign::new(x, z, DVector::zeros(6), 0, TargetTag::Reward).unwrap();
        let fit = fit_kernel_iv(
            &d,
            KernelSpec {
                x: Kernel::Rbf { bandwidth: 1.0 },
                z: Kernel::Linear,
            },
            1e-3,
        )
        .unwrap();
        assert!(fit.alpha.iter().all(|a| a.abs() < 1e-14));
    }

    #[test]
    fn bad_bandwidth_rejected() {
        let x = DMatrix::from_element(2, 1, 1.0);
        let d = StageDesign::new(x.clone(), x, DVector::zeros(2), 0, TargetTag::Reward).unwrap();
        assert!(fit_kernel_iv(
            &d,
            KernelSpec {
                x: Kernel::Rbf { bandwidth: 0.0 },
                z: Kernel::Linear
            },
            1e-3
        )
        .is_err());
        assert!(fit_kernel_iv(
            &d,
            KernelSpec {
                x: Kernel::Linear,
                z: Kernel::Linear
            },
            0.0
        )
        .is_err());
    }
}
