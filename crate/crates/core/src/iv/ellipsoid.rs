//! Quadratic level sets `{θ : (θ - θ̂)ᵀA(θ - θ̂) ≤ c²}`.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iv::linear::TwoSlsFit;
use crate::linalg::{rows_serde, sym_eigen, RANGE_TOL};
use crate::rng::std_normal;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceEllipsoid {
    pub center: Vec<f64>,
    #[serde(rename = "A", with = "rows_serde")]
    pub a: DMatrix<f64>,
    pub c2: f64,
    #[serde(skip)]
    eigen: Option<(DVector<f64>, DMatrix<f64>)>,
}

/// Exact minimum of `θᵀμ` over an ellipsoid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearMin {
    /// `-inf` when `μ` leaves the range of `A`.
    pub value: f64,
    pub unidentified_direction: bool,
}

impl ConfidenceEllipsoid {
    /// Clips negative eigenvalues of `a` at zero (with a warning) and caches the
    /// eigendecomposition.
    pub fn new(center: Vec<f64>, a: DMatrix<f64>, c: f64) -> Result<Self> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::Config(format!(
                "threshold must be finite and nonnegative, got {c}"
            )));
        }
        let n = center.len();
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::Dimension("shape matrix does not match the center".into()));
        }
        let (mut vals, vecs) = sym_eigen(&a);
        let top = vals.iter().cloned().fold(0.0_f64, f64::max);
        let floor = RANGE_TOL * top.max(f64::MIN_POSITIVE);
        let mut clipped = false;
        for v in vals.iter_mut() {
            if *v < 0.0 {
                if *v < -floor {
                    clipped = true;
                }
                *v = 0.0;
            }
        }
        if clipped {
            warn!("shape matrix was not PSD; negative eigenvalues clipped at zero");
        }
        let a = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        Ok(Self {
            center,
            a,
            c2: c * c,
            eigen: Some((vals, vecs)),
        })
    }

    pub fn from_fit(fit: &TwoSlsFit, c: f64) -> Result<Self> {
        Self::new(fit.theta_hat.clone(), fit.a.clone(), c)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn radius(&self) -> f64 {
        self.c2.sqrt()
    }

    fn eig(&self) -> (DVector<f64>, DMatrix<f64>) {
        self.eigen.clone().unwrap_or_else(|| sym_eigen(&self.a))
    }

    /// Indices of eigen-directions with positive curvature.
    fn range_axes(&self, vals: &DVector<f64>) -> Vec<usize> {
        let top = vals.iter().cloned().fold(0.0_f64, f64::max);
        if top <= 0.0 {
            return Vec::new();
        }
        (0..vals.len()).filter(|&k| vals[k] > RANGE_TOL * top).collect()
    }

    /// `(θ - θ̂)ᵀA(θ - θ̂)`.
    pub fn quad_form(&self, theta: &[f64]) -> f64 {
        let d = DVector::from_iterator(self.dim(), theta.iter().zip(&self.center).map(|(a, b)| a - b));
        d.dot(&(&self.a * &d))
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        self.contains_with_slack(theta, 1e-10 * self.c2.max(1.0))
    }

    pub fn contains_with_slack(&self, theta: &[f64], slack: f64) -> bool {
        theta.len() == self.dim() && self.quad_form(theta) <= self.c2 + slack
    }

    /// `θ̂ + c v / √(vᵀAv)`; `None` when `v` has no curvature.
    pub fn boundary_point(&self, v: &[f64]) -> Option<Vec<f64>> {
        let dv = DVector::from_column_slice(v);
        let q = dv.dot(&(&self.a * &dv));
        if !(q > 0.0) {
            return None;
        }
        let s = self.radius() / q.sqrt();
        Some(self.center.iter().zip(v).map(|(c, x)| c + s * x).collect())
    }

    /// Boundary points along each principal axis, `(axis, sign, point)`.
    /// Flat axes are skipped with a warning.
    pub fn axis_points(&self) -> Vec<(usize, i8, Vec<f64>)> {
        let (vals, vecs) = self.eig();
        let axes = self.range_axes(&vals);
        if axes.len() < self.dim() {
            warn!(
                "ellipsoid is flat along {} of {} axes; those axes are skipped",
                self.dim() - axes.len(),
                self.dim()
            );
        }
        let mut out = Vec::with_capacity(2 * self.dim());
        for axis in 0..self.dim() {
            if !axes.contains(&axis) {
                continue;
            }
            let step = self.radius() / vals[axis].sqrt();
            for sign in [1i8, -1i8] {
                let p = self
                    .center
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c + f64::from(sign) * step * vecs[(i, axis)])
                    .collect();
                out.push((axis, sign, p));
            }
        }
        out
    }

    /// Boundary point from a uniformly random direction in whitened coordinates.
    pub fn random_boundary<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let (vals, vecs) = self.eig();
        let axes = self.range_axes(&vals);
        let g: Vec<f64> = (0..self.dim()).map(|_| std_normal(rng)).collect();
        let norm = axes.iter().map(|&k| g[k] * g[k]).sum::<f64>().sqrt();
        let mut p = self.center.clone();
        if norm == 0.0 {
            return p;
        }
        for &k in &axes {
            let scale = self.radius() * g[k] / norm / vals[k].sqrt();
            for (i, pi) in p.iter_mut().enumerate() {
                *pi += scale * vecs[(i, k)];
            }
        }
        p
    }

    /// `min θᵀμ = θ̂ᵀμ - c √(μᵀA⁺μ)`. A zero radius pins the set to its center.
    pub fn min_linear(&self, mu: &[f64]) -> LinearMin {
        let (vals, vecs) = self.eig();
        let axes = self.range_axes(&vals);
        let m = DVector::from_column_slice(mu);
        let center: f64 = self.center.iter().zip(mu).map(|(a, b)| a * b).sum();
        let mut out_of_range = 0.0;
        let mut weighted = 0.0;
        for k in 0..self.dim() {
            let p = vecs.column(k).dot(&m);
            if axes.contains(&k) {
                weighted += p * p / vals[k];
            } else {
                out_of_range += p * p;
            }
        }
        if self.c2 > 0.0 && out_of_range.sqrt() > 1e-8 * m.norm() {
            return LinearMin {
                value: f64::NEG_INFINITY,
                unidentified_direction: true,
            };
        }
        LinearMin {
            value: center - self.radius() * weighted.sqrt(),
            unidentified_direction: false,
        }
    }
}
