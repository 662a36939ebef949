//! Exact 2x2 spectral algebra for the offspring mean matrix: eigenvalues,
//! Perron vectors, Putzer powers, criticality classification and small
//! tensor utilities.
//!
//! Everything here is closed form; no iterative eigensolver is involved.

use crate::error::{Error, Result};
use serde::Serialize;
use std::ops::{Add, Mul, Neg, Sub};

/// Default tolerance for criticality classification.
pub const CRITICALITY_TOL: f64 = 1e-9;

/// Largest exponent accepted by [`matrix_power_putzer`].
pub const MAX_POWER: u64 = 1_000_000;

// ---------------------------------------------------------------------------
// Small linear algebra types
// ---------------------------------------------------------------------------

/// Column vector in R^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Vec2(pub f64, pub f64);

impl Vec2 {
    pub const ZERO: Vec2 = Vec2(0.0, 0.0);

    pub fn dot(self, other: Vec2) -> f64 {
        self.0 * other.0 + self.1 * other.1
    }

    /// Outer product `self * other^T`.
    pub fn outer(self, other: Vec2) -> Mat2 {
        Mat2([
            [self.0 * other.0, self.0 * other.1],
            [self.1 * other.0, self.1 * other.1],
        ])
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_inf(self) -> f64 {
        self.0.abs().max(self.1.abs())
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite() && self.1.is_finite()
    }

    /// Flattened Kronecker square `self (x) self`, indexed by `2i + k`.
    pub fn kron_sq(self) -> [f64; 4] {
        [
            self.0 * self.0,
            self.0 * self.1,
            self.1 * self.0,
            self.1 * self.1,
        ]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2(self.0 + rhs.0, self.1 + rhs.1)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2(self.0 - rhs.0, self.1 - rhs.1)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2(self.0 * s, self.1 * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2(-self.0, -self.1)
    }
}

/// 2x2 real matrix, row major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const ZERO: Mat2 = Mat2([[0.0, 0.0], [0.0, 0.0]]);

    pub fn identity() -> Mat2 {
        Mat2([[1.0, 0.0], [0.0, 1.0]])
    }

    pub fn from_cols(c1: Vec2, c2: Vec2) -> Mat2 {
        Mat2([[c1.0, c2.0], [c1.1, c2.1]])
    }

    pub fn col(&self, j: usize) -> Vec2 {
        Vec2(self.0[0][j], self.0[1][j])
    }

    pub fn row(&self, i: usize) -> Vec2 {
        Vec2(self.0[i][0], self.0[i][1])
    }

    pub fn transpose(&self) -> Mat2 {
        Mat2([
            [self.0[0][0], self.0[1][0]],
            [self.0[0][1], self.0[1][1]],
        ])
    }

    pub fn det(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    /// Adjugate (transposed cofactor matrix); `A * adj(A) = det(A) * I`.
    pub fn adjugate(&self) -> Mat2 {
        Mat2([
            [self.0[1][1], -self.0[0][1]],
            [-self.0[1][0], self.0[0][0]],
        ])
    }

    pub fn inverse(&self) -> Option<Mat2> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(self.adjugate() * (1.0 / d))
    }

    pub fn matvec(&self, v: Vec2) -> Vec2 {
        Vec2(
            self.0[0][0] * v.0 + self.0[0][1] * v.1,
            self.0[1][0] * v.0 + self.0[1][1] * v.1,
        )
    }

    pub fn norm_inf(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .fold(0.0_f64, |acc, x| acc.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }

    /// Flattened row-major view `[a11, a12, a21, a22]`; this equals the
    /// Kronecker-square index layout `2i + j` used for 4-vectors.
    pub fn flatten(&self) -> [f64; 4] {
        [self.0[0][0], self.0[0][1], self.0[1][0], self.0[1][1]]
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, rhs: Mat2) -> Mat2 {
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = self.0[i][j] + rhs.0[i][j];
            }
        }
        Mat2(out)
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, rhs: Mat2) -> Mat2 {
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = self.0[i][j] - rhs.0[i][j];
            }
        }
        Mat2(out)
    }
}

impl Mul<f64> for Mat2 {
    type Output = Mat2;
    fn mul(self, s: f64) -> Mat2 {
        let mut out = self.0;
        for row in out.iter_mut() {
            for x in row.iter_mut() {
                *x *= s;
            }
        }
        Mat2(out)
    }
}

impl Mul<Mat2> for Mat2 {
    type Output = Mat2;
    fn mul(self, rhs: Mat2) -> Mat2 {
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = self.0[i][0] * rhs.0[0][j] + self.0[i][1] * rhs.0[1][j];
            }
        }
        Mat2(out)
    }
}

/// 4x4 real matrix holding Kronecker products of 2x2 matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tensor4(pub [[f64; 4]; 4]);

impl Tensor4 {
    pub const ZERO: Tensor4 = Tensor4([[0.0; 4]; 4]);

    pub fn identity() -> Tensor4 {
        let mut out = [[0.0; 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Tensor4(out)
    }

    pub fn trace(&self) -> f64 {
        (0..4).map(|i| self.0[i][i]).sum()
    }

    pub fn matmul(&self, rhs: &Tensor4) -> Tensor4 {
        let mut out = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                out[i][j] = (0..4).map(|k| self.0[i][k] * rhs.0[k][j]).sum();
            }
        }
        Tensor4(out)
    }

    pub fn norm_inf(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .fold(0.0_f64, |acc, x| acc.max(x.abs()))
    }
}

/// Kronecker product of two 2x2 matrices: `(A (x) B)[2i+k][2j+l] = A[i][j] B[k][l]`.
pub fn kron2(a: &Mat2, b: &Mat2) -> Tensor4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    out[2 * i + k][2 * j + l] = a.0[i][j] * b.0[k][l];
                }
            }
        }
    }
    Tensor4(out)
}

// ---------------------------------------------------------------------------
// Offspring mean matrix and its spectral data
// ---------------------------------------------------------------------------

/// The 2x2 offspring mean matrix with entries (alpha, beta; gamma, delta).
///
/// Positive regularity requires `beta > 0`, `gamma > 0` and `alpha + delta > 0`,
/// which also guarantees two distinct real eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanMatrix {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl MeanMatrix {
    pub fn new(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Result<Self> {
        for (name, v) in [
            ("alpha", alpha),
            ("beta", beta),
            ("gamma", gamma),
            ("delta", delta),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidModel(format!("{name} is not finite")));
            }
        }
        if alpha < 0.0 || delta < 0.0 {
            return Err(Error::InvalidModel(
                "alpha and delta must be nonnegative".into(),
            ));
        }
        if beta <= 0.0 || gamma <= 0.0 {
            return Err(Error::InvalidModel(
                "positive regularity requires beta > 0 and gamma > 0".into(),
            ));
        }
        if alpha + delta <= 0.0 {
            return Err(Error::InvalidModel(
                "positive regularity requires alpha + delta > 0".into(),
            ));
        }
        Ok(MeanMatrix {
            alpha,
            beta,
            gamma,
            delta,
        })
    }

    pub fn to_mat2(&self) -> Mat2 {
        Mat2([[self.alpha, self.beta], [self.gamma, self.delta]])
    }

    fn discriminant(&self) -> f64 {
        (self.alpha - self.delta).powi(2) + 4.0 * self.beta * self.gamma
    }
}

/// Eigenvalues and the four Perron-type eigenvectors of a mean matrix.
///
/// Normalizations: coordinates of `u_right` sum to 1, `<u_right, u_left> = 1`,
/// `det [u_right v_right] = 1` and `<v_right, v_left> = 1`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpectralData {
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub u_right: Vec2,
    pub u_left: Vec2,
    pub v_right: Vec2,
    pub v_left: Vec2,
}

/// Criticality class of a mean matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CriticalityClass {
    Subcritical,
    Critical,
    Supercritical,
}

/// Classification result: class, spectral radius, and whether the exact
/// critical identity `beta*gamma = (1-alpha)(1-delta)` holds within tolerance.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Criticality {
    pub class: CriticalityClass,
    pub rho: f64,
    pub exact_critical_identity: bool,
}

/// Spectral radius `(alpha + delta + sqrt((alpha-delta)^2 + 4 beta gamma)) / 2`.
pub fn spectral_radius(m: &MeanMatrix) -> f64 {
    (m.alpha + m.delta + m.discriminant().sqrt()) / 2.0
}

/// Closed-form eigendecomposition of a positively regular mean matrix.
pub fn eigen_decompose(m: &MeanMatrix) -> SpectralData {
    let sq = m.discriminant().sqrt();
    let lambda_plus = (m.alpha + m.delta + sq) / 2.0;
    let lambda_minus = (m.alpha + m.delta - sq) / 2.0;
    let gap = lambda_plus - lambda_minus;
    let bu = m.beta + lambda_plus - m.alpha;
    let u_right = Vec2(m.beta / bu, (lambda_plus - m.alpha) / bu);
    let u_left = Vec2(
        (m.gamma + lambda_plus - m.delta) / gap,
        (m.beta + lambda_plus - m.alpha) / gap,
    );
    let v_right = Vec2(
        (m.alpha - m.beta - lambda_plus) / gap,
        (m.gamma + lambda_plus - m.delta) / gap,
    );
    let v_left = Vec2((m.alpha - lambda_plus) / bu, m.beta / bu);
    SpectralData {
        lambda_plus,
        lambda_minus,
        u_right,
        u_left,
        v_right,
        v_left,
    }
}

/// Matrix power by Putzer's spectral formula:
/// `m^k = lambda_+^k u_R u_L^T + lambda_-^k v_R v_L^T`.
pub fn matrix_power_putzer(m: &MeanMatrix, k: u64) -> Result<Mat2> {
    if k > MAX_POWER {
        return Err(Error::PowerTooLarge(k, MAX_POWER));
    }
    if k == 0 {
        return Ok(Mat2::identity());
    }
    let s = eigen_decompose(m);
    let pk = s.lambda_plus.powi(k as i32);
    let mk = s.lambda_minus.powi(k as i32);
    Ok(s.u_right.outer(s.u_left) * pk + s.v_right.outer(s.v_left) * mk)
}

/// Geometric sum of Putzer powers, `sum_{j=0}^{k-1} m^j * v`.
///
/// Used for the exact mean recursion `E(X_k) = sum_{j<k} m^j m_eps` with
/// zero start.
pub fn power_sum_apply(m: &MeanMatrix, k: u64, v: Vec2) -> Vec2 {
    let s = eigen_decompose(m);
    let geom = |lambda: f64| -> f64 {
        if (lambda - 1.0).abs() < 1e-12 {
            k as f64
        } else {
            (1.0 - lambda.powi(k as i32)) / (1.0 - lambda)
        }
    };
    let up = s.u_right * (s.u_left.dot(v) * geom(s.lambda_plus));
    let vp = s.v_right * (s.v_left.dot(v) * geom(s.lambda_minus));
    up + vp
}

/// Classify a mean matrix by its spectral radius with tolerance `tol`.
pub fn classify(m: &MeanMatrix, tol: f64) -> Criticality {
    let rho = spectral_radius(m);
    let class = if (rho - 1.0).abs() <= tol {
        CriticalityClass::Critical
    } else if rho < 1.0 {
        CriticalityClass::Subcritical
    } else {
        CriticalityClass::Supercritical
    };
    let exact_critical_identity =
        (m.beta * m.gamma - (1.0 - m.alpha) * (1.0 - m.delta)).abs() <= tol;
    Criticality {
        class,
        rho,
        exact_critical_identity,
    }
}

/// Gradient of the spectral radius, transposed:
/// `R = I/2 + (1 / (2 sqrt(D))) [[alpha-delta, 2 beta], [2 gamma, delta-alpha]]`.
pub fn grad_spectral_radius(m: &MeanMatrix) -> Mat2 {
    let sq = m.discriminant().sqrt();
    let c = 1.0 / (2.0 * sq);
    Mat2([
        [0.5 + c * (m.alpha - m.delta), c * 2.0 * m.beta],
        [c * 2.0 * m.gamma, 0.5 + c * (m.delta - m.alpha)],
    ])
}

/// Symmetric PSD square root of a 2x2 matrix by closed-form eigendecomposition.
///
/// Eigenvalues in `[-1e-12, 0)` are clamped to zero; anything below that or an
/// asymmetry beyond 1e-10 signals an invalid covariance and is an error.
pub fn sqrt_psd_2x2(v: &Mat2) -> Result<Mat2> {
    let asym = (v.0[0][1] - v.0[1][0]).abs();
    if asym > 1e-10 {
        return Err(Error::Asymmetric(asym));
    }
    let a = v.0[0][0];
    let c = v.0[1][1];
    let b = 0.5 * (v.0[0][1] + v.0[1][0]);
    let mid = 0.5 * (a + c);
    let half_gap = (0.25 * (a - c).powi(2) + b * b).sqrt();
    let mut e1 = mid + half_gap;
    let mut e2 = mid - half_gap;
    if e2 < -1e-12 {
        return Err(Error::NotPsd(e2));
    }
    e1 = e1.max(0.0);
    e2 = e2.max(0.0);
    if b == 0.0 {
        // already diagonal
        return Ok(Mat2([[a.max(0.0).sqrt(), 0.0], [0.0, c.max(0.0).sqrt()]]));
    }
    // eigenvector for e1 is (b, e1 - a), orthogonal complement for e2
    let q = Vec2(b, e1 - a);
    let n = q.norm();
    let q1 = Vec2(q.0 / n, q.1 / n);
    let q2 = Vec2(-q1.1, q1.0);
    Ok(q1.outer(q1) * e1.sqrt() + q2.outer(q2) * e2.sqrt())
}
