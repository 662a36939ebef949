//! Finite-support offspring and immigration distributions on Z_+^2 with
//! exact moment computation, the derived variance objects, and constructors
//! for the degenerate regimes.
//!
//! Restricting to finite support keeps every moment hypothesis (up to order 8)
//! satisfied automatically and makes all moments exactly computable by
//! summation over the atoms.

use crate::error::{Error, Result};
use crate::model::{
    classify, eigen_decompose, spectral_radius, CriticalityClass, Mat2, MeanMatrix, Vec2,
    CRITICALITY_TOL,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One support point with its probability. Serialized as `{"x": [i, j], "p": q}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: [u32; 2],
    pub p: f64,
}

/// Finite-support probability law on Z_+^2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLaw", into = "RawLaw")]
pub struct FiniteLaw {
    atoms: Vec<Atom>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawLaw {
    atoms: Vec<Atom>,
}

impl TryFrom<RawLaw> for FiniteLaw {
    type Error = Error;
    fn try_from(raw: RawLaw) -> Result<FiniteLaw> {
        FiniteLaw::new(raw.atoms)
    }
}

impl From<FiniteLaw> for RawLaw {
    fn from(law: FiniteLaw) -> RawLaw {
        RawLaw { atoms: law.atoms }
    }
}

impl FiniteLaw {
    /// Validate and build a law: probabilities positive and summing to 1
    /// within 1e-12, points distinct, support nonempty.
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidLaw("support is empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut total = 0.0;
        for a in &atoms {
            if !a.p.is_finite() || a.p <= 0.0 {
                return Err(Error::InvalidLaw(format!(
                    "atom at ({}, {}) has nonpositive probability {}",
                    a.x[0], a.x[1], a.p
                )));
            }
            if !seen.insert(a.x) {
                return Err(Error::InvalidLaw(format!(
                    "duplicate support point ({}, {})",
                    a.x[0], a.x[1]
                )));
            }
            total += a.p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidLaw(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        let mut cumulative = Vec::with_capacity(atoms.len());
        let mut acc = 0.0;
        for a in &atoms {
            acc += a.p;
            cumulative.push(acc);
        }
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Ok(FiniteLaw { atoms, cumulative })
    }

    /// Convenience constructor from `((x1, x2), p)` pairs.
    pub fn from_pairs(pairs: &[((u32, u32), f64)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&((a, b), p)| Atom { x: [a, b], p })
                .collect(),
        )
    }

    /// Point mass at `(a, b)`.
    pub fn point_mass(a: u32, b: u32) -> Self {
        Self::new(vec![Atom { x: [a, b], p: 1.0 }]).expect("point mass is always valid")
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub(crate) fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn mean(&self) -> Vec2 {
        let mut m = Vec2::ZERO;
        for a in &self.atoms {
            m = m + Vec2(a.x[0] as f64, a.x[1] as f64) * a.p;
        }
        m
    }

    pub fn covariance(&self) -> Mat2 {
        let m = self.mean();
        let mut c = Mat2::ZERO;
        for a in &self.atoms {
            let d = Vec2(a.x[0] as f64, a.x[1] as f64) - m;
            c = c + d.outer(d) * a.p;
        }
        c
    }

    /// True if the law is a single point mass.
    pub fn is_deterministic(&self) -> bool {
        self.atoms.len() == 1
    }
}

/// Exact moments of a finite law: mean, covariance, and all central moments
/// `E[(x - mx)^a (y - my)^b]` for `2 <= a + b <= max_order`, stored as a flat
/// multi-index map.
#[derive(Debug, Clone, Serialize)]
pub struct MomentSummary {
    pub mean: Vec2,
    pub cov: Mat2,
    pub max_order: u32,
    central: BTreeMap<(u32, u32), f64>,
}

impl MomentSummary {
    /// Central moment `E[(x - mx)^a (y - my)^b]`. Panics if `a + b` exceeds
    /// the order the summary was computed for.
    pub fn central(&self, a: u32, b: u32) -> f64 {
        match a + b {
            0 => 1.0,
            1 => 0.0,
            order => {
                assert!(order <= self.max_order, "moment order {order} not computed");
                *self.central.get(&(a, b)).unwrap()
            }
        }
    }

    /// Flattened second central moment `E[(xi - mu) (x) (xi - mu)]`,
    /// indexed by `2i + k`.
    pub fn outer2(&self) -> [f64; 4] {
        self.cov.flatten()
    }

    /// Third central moment tensor `E[(xi-mu) (x)3]`, indexed by `4i + 2j + k`.
    pub fn third_tensor(&self) -> [f64; 8] {
        let mut t = [0.0; 8];
        for i in 0..2u32 {
            for j in 0..2u32 {
                for k in 0..2u32 {
                    let a = 3 - i - j - k; // exponent of first coordinate
                    let b = i + j + k;
                    t[(4 * i + 2 * j + k) as usize] = self.central(a, b);
                }
            }
        }
        t
    }

    /// Scalar contraction `E[<w, xi - mu>^r]` by multinomial expansion.
    pub fn central_contraction(&self, w: Vec2, r: u32) -> f64 {
        let mut sum = 0.0;
        for a in 0..=r {
            let b = r - a;
            sum += binom(r, a) * w.0.powi(a as i32) * w.1.powi(b as i32) * self.central(a, b);
        }
        sum
    }
}

fn binom(n: u32, k: u32) -> f64 {
    let mut out = 1.0;
    for i in 0..k {
        out = out * (n - i) as f64 / (i + 1) as f64;
    }
    out
}

/// Compute exact central moments of a finite law up to `max_order` (1..=8).
pub fn exact_moments(law: &FiniteLaw, max_order: u32) -> MomentSummary {
    assert!((1..=8).contains(&max_order), "max_order must be in 1..=8");
    let mean = law.mean();
    let mut central = BTreeMap::new();
    for order in 2..=max_order {
        for a in 0..=order {
            let b = order - a;
            let mut sum = 0.0;
            for atom in law.atoms() {
                let dx = atom.x[0] as f64 - mean.0;
                let dy = atom.x[1] as f64 - mean.1;
                sum += atom.p * dx.powi(a as i32) * dy.powi(b as i32);
            }
            central.insert((a, b), sum);
        }
    }
    let cov = law.covariance();
    MomentSummary {
        mean,
        cov,
        max_order: max_order.max(2),
        central: if max_order >= 2 {
            central
        } else {
            // always keep order 2 so `cov` and the map agree
            let mut m = BTreeMap::new();
            m.insert((2, 0), cov.0[0][0]);
            m.insert((1, 1), cov.0[0][1]);
            m.insert((0, 2), cov.0[1][1]);
            m
        },
    }
}

// ---------------------------------------------------------------------------
// The model: two offspring laws plus an immigration law
// ---------------------------------------------------------------------------

/// A 2-type Galton-Watson model with immigration, given by the two offspring
/// laws and the immigration law.
///
/// Construction only checks that the laws are valid and the immigration mean
/// is nonzero. Positive regularity of the derived mean matrix is checked by
/// [`mean_matrix`] and by every operation that needs it, so that boundary
/// models (deterministic unit growth, zero offspring) can still be simulated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GwiModel {
    pub offspring1: FiniteLaw,
    pub offspring2: FiniteLaw,
    pub immigration: FiniteLaw,
}

impl GwiModel {
    pub fn new(offspring1: FiniteLaw, offspring2: FiniteLaw, immigration: FiniteLaw) -> Result<Self> {
        let me = immigration.mean();
        if me.0 == 0.0 && me.1 == 0.0 {
            return Err(Error::InvalidModel(
                "immigration mean must be nonzero".into(),
            ));
        }
        Ok(GwiModel {
            offspring1,
            offspring2,
            immigration,
        })
    }

    pub fn immigration_mean(&self) -> Vec2 {
        self.immigration.mean()
    }

    /// Offspring covariance matrices `(V_xi1, V_xi2)` and immigration
    /// covariance `V_eps`.
    pub fn covariances(&self) -> (Mat2, Mat2, Mat2) {
        (
            self.offspring1.covariance(),
            self.offspring2.covariance(),
            self.immigration.covariance(),
        )
    }
}

/// Offspring mean matrix of the model; column `i` is the mean of offspring
/// law `i`. Errors if positive regularity fails.
pub fn mean_matrix(model: &GwiModel) -> Result<MeanMatrix> {
    let m1 = model.offspring1.mean();
    let m2 = model.offspring2.mean();
    MeanMatrix::new(m1.0, m2.0, m1.1, m2.1)
}

fn require_critical(model: &GwiModel) -> Result<MeanMatrix> {
    let m = mean_matrix(model)?;
    let c = classify(&m, CRITICALITY_TOL);
    if c.class != CriticalityClass::Critical {
        return Err(Error::NotCritical {
            rho: c.rho,
            tol: CRITICALITY_TOL,
        });
    }
    Ok(m)
}

/// Mixed offspring variance matrix
/// `Vbar = sum_i <e_i, u_R> V_xi_i` (critical models only).
pub fn mixed_variance(model: &GwiModel) -> Result<Mat2> {
    let m = require_critical(model)?;
    let s = eigen_decompose(&m);
    let (v1, v2, _) = model.covariances();
    Ok(v1 * s.u_right.0 + v2 * s.u_right.1)
}

/// `Vtilde = sum_i <e_i, v_R> V_xi_i`, computed from the defining sum with
/// the `v_R` normalization of [`eigen_decompose`] (critical models only).
pub fn tilde_variance(model: &GwiModel) -> Result<Mat2> {
    let m = require_critical(model)?;
    let s = eigen_decompose(&m);
    let (v1, v2, _) = model.covariances();
    Ok(v1 * s.v_right.0 + v2 * s.v_right.1)
}

/// Degeneracy diagnostics of a critical model.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DegeneracyIndicators {
    /// `<Vbar v_L, v_L>`; zero in the degenerate regime.
    pub vbar_v: f64,
    /// `<Vbar u_L, u_L>`; zero when the limit of the rescaled process is deterministic.
    pub vbar_u: f64,
    /// `M = <v_L, m_eps>^2 / (1-lambda)^2 + <V_eps v_L, v_L> / (1-lambda^2)`.
    pub m_limit: f64,
    /// True when `vbar_v + <V_eps v_L, v_L> + <v_L, m_eps>^2 = 0`; then the
    /// trajectory stays on a line and no unique CLS estimator exists.
    pub full_degenerate: bool,
}

/// Compute the degeneracy indicators of a critical model.
pub fn degeneracy_indicators(model: &GwiModel) -> Result<DegeneracyIndicators> {
    let m = require_critical(model)?;
    let s = eigen_decompose(&m);
    let vbar = mixed_variance(model)?;
    let (_, _, veps) = model.covariances();
    let me = model.immigration_mean();
    let lambda = s.lambda_minus;
    let vbar_v = vbar.matvec(s.v_left).dot(s.v_left);
    let vbar_u = vbar.matvec(s.u_left).dot(s.u_left);
    let veps_v = veps.matvec(s.v_left).dot(s.v_left);
    let me_v = s.v_left.dot(me);
    let m_limit = me_v * me_v / (1.0 - lambda).powi(2) + veps_v / (1.0 - lambda * lambda);
    let full_degenerate = (vbar_v + veps_v + me_v * me_v).abs() <= 1e-12;
    Ok(DegeneracyIndicators {
        vbar_v,
        vbar_u,
        m_limit,
        full_degenerate,
    })
}

/// Two-atom diagonal law `{(0,0): 1-m, (1,1): m}` with mean `(m, m)`.
pub fn diagonal_law(mean: f64) -> Result<FiniteLaw> {
    if !(0.0..=1.0).contains(&mean) {
        return Err(Error::DegenerateConstruction(format!(
            "diagonal two-atom law needs mean in [0, 1], got {mean}"
        )));
    }
    if mean == 0.0 {
        return FiniteLaw::from_pairs(&[((0, 0), 1.0)]);
    }
    if mean == 1.0 {
        return FiniteLaw::from_pairs(&[((1, 1), 1.0)]);
    }
    FiniteLaw::from_pairs(&[((0, 0), 1.0 - mean), ((1, 1), mean)])
}

/// Check that a law has the required mean vector (used to validate
/// hand-supplied degenerate offspring laws).
pub fn validate_offspring_mean(law: &FiniteLaw, required: Vec2) -> Result<()> {
    let m = law.mean();
    if (m.0 - required.0).abs() > 1e-12 || (m.1 - required.1).abs() > 1e-12 {
        return Err(Error::DegenerateConstruction(format!(
            "law mean ({}, {}) does not match required ({}, {})",
            m.0, m.1, required.0, required.1
        )));
    }
    Ok(())
}

/// Build the diagonal-support degenerate offspring pair for a critical model
/// with parameters `(alpha, delta)`.
///
/// Diagonal support forces the column means to have equal coordinates, which
/// together with exact criticality pins `beta = 1 - alpha`, `gamma = 1 - delta`
/// and `delta = 1 - alpha`. Along this family `<v_L, xi>` is almost surely
/// constant, so `<Vbar v_L, v_L> = 0`.
pub fn make_degenerate_offspring(alpha: f64, delta: f64) -> Result<(FiniteLaw, FiniteLaw)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::DegenerateConstruction(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let gamma = 1.0 - delta;
    if (gamma - alpha).abs() > 1e-12 {
        return Err(Error::DegenerateConstruction(format!(
            "mean mismatch: diagonal support needs gamma = alpha, but gamma = 1 - delta = {gamma} while alpha = {alpha}"
        )));
    }
    let beta = 1.0 - alpha;
    let law1 = diagonal_law(alpha)?;
    let law2 = diagonal_law(beta)?;
    validate_offspring_mean(&law1, Vec2(alpha, gamma))?;
    validate_offspring_mean(&law2, Vec2(beta, delta))?;
    Ok((law1, law2))
}

fn require_subcritical(model: &GwiModel) -> Result<MeanMatrix> {
    let m = mean_matrix(model)?;
    let rho = spectral_radius(&m);
    if rho >= 1.0 {
        return Err(Error::NotSubcritical { rho });
    }
    Ok(m)
}

/// Stationary mean `(I - m)^{-1} m_eps` of a subcritical model.
pub fn stationary_mean(model: &GwiModel) -> Result<Vec2> {
    let m = require_subcritical(model)?;
    let a = Mat2::identity() - m.to_mat2();
    let inv = a
        .inverse()
        .ok_or_else(|| Error::InvalidModel("I - m is singular".into()))?;
    Ok(inv.matvec(model.immigration_mean()))
}

/// Default truncation tolerance for the stationary second-moment series.
pub const STATIONARY_SERIES_TOL: f64 = 1e-12;
const STATIONARY_SERIES_CAP: usize = 1_000_000;

/// Stationary second moment by the series
/// `E(X X^T) = sum_i m^i (EX_1 V_xi1 + EX_2 V_xi2 + V_eps) (m^T)^i + EX EX^T`,
/// truncated once the increment norm drops below `tol`.
pub fn stationary_second_moment(model: &GwiModel, tol: f64) -> Result<Mat2> {
    let m = require_subcritical(model)?;
    let (v1, v2, veps) = model.covariances();
    let mean = stationary_mean(model)?;
    Ok(stationary_second_moment_from_parts(
        &m.to_mat2(),
        mean,
        &v1,
        &v2,
        &veps,
        tol,
    ))
}

/// Series evaluation with explicit parts; exposed for tests of the algebraic
/// reductions (e.g. all-zero variances giving `mean mean^T`).
pub fn stationary_second_moment_from_parts(
    m: &Mat2,
    mean: Vec2,
    v1: &Mat2,
    v2: &Mat2,
    veps: &Mat2,
    tol: f64,
) -> Mat2 {
    let inner = *v1 * mean.0 + *v2 * mean.1 + *veps;
    let mut total = Mat2::ZERO;
    let mut term = inner;
    let mut count = 0;
    while term.norm_inf() >= tol && count < STATIONARY_SERIES_CAP {
        total = total + term;
        term = *m * term * m.transpose();
        count += 1;
    }
    total + mean.outer(mean)
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

/// Critical symmetric preset: `alpha = delta = 0.3`, `beta = gamma = 0.7`,
/// nontrivial offspring variance, Bernoulli-pair immigration with mean
/// `(0.5, 0.5)`.
pub fn model_a() -> GwiModel {
    let offspring1 = FiniteLaw::from_pairs(&[
        ((0, 0), 0.4),
        ((1, 1), 0.3),
        ((0, 1), 0.2),
        ((0, 2), 0.1),
    ])
    .unwrap();
    let offspring2 = FiniteLaw::from_pairs(&[
        ((0, 0), 0.4),
        ((1, 1), 0.3),
        ((1, 0), 0.2),
        ((2, 0), 0.1),
    ])
    .unwrap();
    let immigration = FiniteLaw::from_pairs(&[
        ((0, 0), 0.25),
        ((1, 0), 0.25),
        ((0, 1), 0.25),
        ((1, 1), 0.25),
    ])
    .unwrap();
    GwiModel::new(offspring1, offspring2, immigration).unwrap()
}

/// Subcritical preset: mean matrix `(0.2, 0.3; 0.3, 0.2)` (spectral radius
/// 0.5), invertible immigration covariance.
pub fn model_c() -> GwiModel {
    let offspring1 =
        FiniteLaw::from_pairs(&[((0, 0), 0.7), ((1, 1), 0.2), ((0, 1), 0.1)]).unwrap();
    let offspring2 =
        FiniteLaw::from_pairs(&[((0, 0), 0.7), ((1, 1), 0.2), ((1, 0), 0.1)]).unwrap();
    let immigration = FiniteLaw::from_pairs(&[
        ((0, 0), 0.25),
        ((1, 0), 0.25),
        ((0, 1), 0.25),
        ((1, 1), 0.25),
    ])
    .unwrap();
    GwiModel::new(offspring1, offspring2, immigration).unwrap()
}

/// Degenerate critical preset: diagonal-support offspring with
/// `alpha = delta = 0.5` and immigration `{(1,0): 1/2, (0,1): 1/2}`, so that
/// `<Vbar v_L, v_L> = 0` while `M = 0.25 > 0`.
pub fn model_d() -> GwiModel {
    let (offspring1, offspring2) = make_degenerate_offspring(0.5, 0.5).unwrap();
    let immigration = FiniteLaw::from_pairs(&[((1, 0), 0.5), ((0, 1), 0.5)]).unwrap();
    GwiModel::new(offspring1, offspring2, immigration).unwrap()
}

/// Model D with deterministic immigration `(1, 1)`: fully degenerate, the
/// trajectory stays on the diagonal and no unique CLS estimator exists.
pub fn model_d_deterministic_immigration() -> GwiModel {
    let (offspring1, offspring2) = make_degenerate_offspring(0.5, 0.5).unwrap();
    GwiModel::new(offspring1, offspring2, FiniteLaw::point_mass(1, 1)).unwrap()
}
