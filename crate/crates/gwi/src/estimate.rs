//! CLS estimation of the offspring mean matrix and the criticality
//! parameter, the adjugate/determinant decomposition identities, and the
//! subcritical asymptotic covariance objects.
//!
//! Non-existence of an estimator (the normal-equation matrix is singular, or
//! the estimated discriminant is negative) is data, not an error: it is
//! encoded as absent-with-flags so Monte Carlo campaigns can tally it.

use crate::error::{Error, Result};
use crate::laws::GwiModel;
use crate::model::{
    grad_spectral_radius, kron2, spectral_radius, Mat2, Tensor4, Vec2,
};
use crate::simulate::{DerivedSeries, Trajectory};
use serde::Serialize;

/// Normal equations of the CLS problem:
/// `A_n = sum X_{k-1} X_{k-1}^T`, `B_n = sum (X_k - m_eps) X_{k-1}^T`.
///
/// `A_n` has integer entries for integer-valued trajectories; the entries and
/// the determinant are carried in wide integer arithmetic when they fit, so
/// the existence event `det(A_n) > 0` is decided exactly.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub a_n: Mat2,
    pub b_n: Mat2,
    pub adjugate_a: Mat2,
    /// Exact determinant of `A_n` when representable; `None` after overflow.
    pub det_a_exact: Option<i128>,
    /// Determinant as a float (exact value when `det_a_exact` is set).
    pub det_a: f64,
    /// `D_n = B_n - m_xi A_n`, available once the true mean matrix is supplied.
    pub d_n: Option<Mat2>,
}

impl NormalEquations {
    /// Whether `det(A_n) > 0`, decided exactly for integer data when the
    /// determinant fits in `i128`, otherwise by a relative float threshold.
    pub fn det_positive(&self) -> bool {
        match self.det_a_exact {
            Some(d) => d > 0,
            None => self.det_a > 1e-9 * self.a_n.norm_inf().powi(2),
        }
    }

    /// Supply the true mean matrix, filling `D_n = B_n - m_xi A_n`.
    pub fn with_true_mean(mut self, m_xi: &Mat2) -> Self {
        self.d_n = Some(self.b_n - *m_xi * self.a_n);
        self
    }
}

/// Build the normal equations from a trajectory (immigration mean known).
pub fn normal_equations(traj: &Trajectory, m_eps: Vec2) -> NormalEquations {
    let n = traj.len();
    let mut a_int = [[0i128; 2]; 2];
    let mut b = Mat2::ZERO;
    let mut overflow = false;
    for k in 1..=n {
        let prev = traj.states[k - 1];
        let p = [prev[0] as i128, prev[1] as i128];
        for i in 0..2 {
            for j in 0..2 {
                match p[i]
                    .checked_mul(p[j])
                    .and_then(|x| a_int[i][j].checked_add(x))
                {
                    Some(v) => a_int[i][j] = v,
                    None => overflow = true,
                }
            }
        }
        let cur = traj.state(k) - m_eps;
        let prev_f = traj.state(k - 1);
        b = b + cur.outer(prev_f);
    }
    let a_n = if overflow {
        // accumulate again in floats
        let mut a = Mat2::ZERO;
        for k in 1..=n {
            let p = traj.state(k - 1);
            a = a + p.outer(p);
        }
        a
    } else {
        Mat2([
            [a_int[0][0] as f64, a_int[0][1] as f64],
            [a_int[1][0] as f64, a_int[1][1] as f64],
        ])
    };
    let det_a_exact = if overflow {
        None
    } else {
        a_int[0][0]
            .checked_mul(a_int[1][1])
            .zip(a_int[0][1].checked_mul(a_int[1][0]))
            .and_then(|(x, y)| x.checked_sub(y))
    };
    let det_a = match det_a_exact {
        Some(d) => d as f64,
        None => a_n.det(),
    };
    NormalEquations {
        a_n,
        b_n: b,
        adjugate_a: a_n.adjugate(),
        det_a_exact,
        det_a,
        d_n: None,
    }
}

/// CLS estimate with existence flags.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ClsEstimate {
    pub m_hat: Option<Mat2>,
    pub rho_hat: Option<f64>,
    /// `(alpha_hat - delta_hat)^2 + 4 beta_hat gamma_hat`, when `m_hat` exists.
    pub discriminant: Option<f64>,
    pub det_a: f64,
    /// The event `det(A_n) > 0`.
    pub on_omega_n: bool,
    /// The event that additionally the discriminant is nonnegative.
    pub on_omega_tilde_n: bool,
}

/// CLS estimator of the offspring mean matrix: `m_hat = B_n A_n^{-1}` on the
/// set `det(A_n) > 0`, absent otherwise. No projection onto the parameter
/// region is applied.
pub fn cls_offspring_mean(ne: &NormalEquations) -> ClsEstimate {
    if !ne.det_positive() {
        return ClsEstimate {
            m_hat: None,
            rho_hat: None,
            discriminant: None,
            det_a: ne.det_a,
            on_omega_n: false,
            on_omega_tilde_n: false,
        };
    }
    let m_hat = ne.b_n * ne.adjugate_a * (1.0 / ne.det_a);
    ClsEstimate {
        m_hat: Some(m_hat),
        rho_hat: None,
        discriminant: None,
        det_a: ne.det_a,
        on_omega_n: true,
        on_omega_tilde_n: false,
    }
}

/// Criticality estimator `rho_hat = r(m_hat)`: the spectral-radius formula
/// applied to the estimate, defined only when the discriminant is
/// nonnegative.
pub fn cls_criticality(m_hat: &Mat2) -> (f64, Option<f64>) {
    let a = m_hat.0[0][0];
    let b = m_hat.0[0][1];
    let g = m_hat.0[1][0];
    let d = m_hat.0[1][1];
    let disc = (a - d).powi(2) + 4.0 * b * g;
    if disc >= 0.0 {
        (disc, Some((a + d + disc.sqrt()) / 2.0))
    } else {
        (disc, None)
    }
}

/// Full CLS pipeline: offspring mean plus criticality parameter.
pub fn cls_estimate(ne: &NormalEquations) -> ClsEstimate {
    let mut est = cls_offspring_mean(ne);
    if let Some(m_hat) = est.m_hat {
        let (disc, rho) = cls_criticality(&m_hat);
        est.discriminant = Some(disc);
        est.on_omega_tilde_n = rho.is_some();
        est.rho_hat = rho;
    }
    est
}

/// Convenience: simulate-side estimate from a trajectory and model.
pub fn estimate_from_trajectory(traj: &Trajectory, model: &GwiModel) -> ClsEstimate {
    cls_estimate(&normal_equations(traj, model.immigration_mean()))
}

/// Both sides of the determinant decomposition
/// `det(A_n) = (sum U_k^2)(sum V_k^2) - (sum U_k V_k)^2`, the U/V sums
/// running over `k = 1..n-1` (the `k = 0` terms vanish by zero start).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DetIdentity {
    pub det_direct: f64,
    pub det_uv: f64,
}

pub fn det_identity_check(traj: &Trajectory, series: &DerivedSeries) -> DetIdentity {
    let ne = normal_equations(traj, Vec2::ZERO); // A_n does not involve m_eps
    let n = traj.len();
    let mut su2 = 0.0;
    let mut sv2 = 0.0;
    let mut suv = 0.0;
    for k in 1..n {
        su2 += series.u[k] * series.u[k];
        sv2 += series.v[k] * series.v[k];
        suv += series.u[k] * series.v[k];
    }
    DetIdentity {
        det_direct: ne.det_a,
        det_uv: su2 * sv2 - suv * suv,
    }
}

// ---------------------------------------------------------------------------
// Subcritical asymptotic covariance
// ---------------------------------------------------------------------------

/// Stationary moment tensors assembled from a long trajectory time average.
///
/// Layout: 4-vectors are indexed by `2j + l`, matching the Kronecker-square
/// convention of [`kron2`].
#[derive(Debug, Clone, Serialize)]
pub struct StationaryTensors {
    /// `E[X X^T]`.
    pub e_xxt: Mat2,
    /// `E[(X^T)^{(x)2}]`, entries `E[X_j X_l]` at index `2j + l`.
    pub e_xt2: [f64; 4],
    /// `E[X_i (X^T)^{(x)2}]` for `i = 1, 2`, entries `E[X_i X_j X_l]`.
    pub e_x_xt2: [[f64; 4]; 2],
}

impl StationaryTensors {
    /// Time average over `X_{k-1}`, `k = 1..n` of a trajectory.
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let n = traj.len();
        let mut e_xxt = Mat2::ZERO;
        let mut e_xt2 = [0.0; 4];
        let mut e_x_xt2 = [[0.0; 4]; 2];
        for k in 1..=n {
            let x = traj.state(k - 1);
            let xs = [x.0, x.1];
            e_xxt = e_xxt + x.outer(x);
            for j in 0..2 {
                for l in 0..2 {
                    e_xt2[2 * j + l] += xs[j] * xs[l];
                    for i in 0..2 {
                        e_x_xt2[i][2 * j + l] += xs[i] * xs[j] * xs[l];
                    }
                }
            }
        }
        let inv = 1.0 / n as f64;
        for v in e_xt2.iter_mut() {
            *v *= inv;
        }
        for row in e_x_xt2.iter_mut() {
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        StationaryTensors {
            e_xxt: e_xxt * inv,
            e_xt2,
            e_x_xt2,
        }
    }
}

/// The assembled limit covariance of the subcritical CLS estimator.
#[derive(Debug, Clone, Serialize)]
pub struct SubcriticalCovariance {
    /// `E(Z^{(x)2})` where `Z` is the limit of `n^{1/2}(m_hat - m_xi)`.
    pub ez2: Tensor4,
    /// `Tr[R^{(x)2} E(Z^{(x)2})]`: limit variance of `n^{1/2}(rho_hat - rho)`.
    pub var_rho: f64,
}

/// Assemble `E(Z^{(x)2})` from offspring/immigration covariances and
/// stationary tensors (exposed separately so algebraic reductions can be
/// tested with injected parts).
pub fn assemble_ez2(
    v1: &Mat2,
    v2: &Mat2,
    veps: &Mat2,
    tensors: &StationaryTensors,
) -> Result<Tensor4> {
    let det = tensors.e_xxt.det();
    if det.abs() <= 1e-12 * tensors.e_xxt.norm_inf().powi(2).max(1e-300) {
        let invertible: Vec<&str> = [("V_xi1", v1), ("V_xi2", v2), ("V_eps", veps)]
            .iter()
            .filter(|(_, v)| v.det().abs() > 1e-12)
            .map(|(n, _)| *n)
            .collect();
        let hypothesis = if invertible.is_empty() {
            "none of V_xi1, V_xi2, V_eps is invertible, so the stationary second moment need not be invertible".to_string()
        } else {
            format!(
                "{} invertible, so the stationary second moment should be invertible; the supplied time average is singular (too short?)",
                invertible.join(", ")
            )
        };
        return Err(Error::SingularStationary(hypothesis));
    }
    let mut ezt2 = [[0.0; 4]; 4];
    let cols = [v1.flatten(), v2.flatten()];
    for (i, col) in cols.iter().enumerate() {
        for r in 0..4 {
            for c in 0..4 {
                ezt2[r][c] += col[r] * tensors.e_x_xt2[i][c];
            }
        }
    }
    let cole = veps.flatten();
    for r in 0..4 {
        for c in 0..4 {
            ezt2[r][c] += cole[r] * tensors.e_xt2[c];
        }
    }
    let binv = tensors
        .e_xxt
        .inverse()
        .expect("determinant checked above");
    Ok(Tensor4(ezt2).matmul(&kron2(&binv, &binv)))
}

/// Assemble the subcritical limit covariance objects `E(Z^{(x)2})` and
/// `var_rho = Tr[R^{(x)2} E(Z^{(x)2})]` for a subcritical model.
pub fn subcritical_limit_covariance(
    model: &GwiModel,
    tensors: &StationaryTensors,
) -> Result<SubcriticalCovariance> {
    let m = crate::laws::mean_matrix(model)?;
    let rho = spectral_radius(&m);
    if rho >= 1.0 {
        return Err(Error::NotSubcritical { rho });
    }
    let (v1, v2, veps) = model.covariances();
    let ez2 = assemble_ez2(&v1, &v2, &veps, tensors)?;
    let r = grad_spectral_radius(&m);
    let var_rho = kron2(&r, &r).matmul(&ez2).trace();
    Ok(SubcriticalCovariance { ez2, var_rho })
}
