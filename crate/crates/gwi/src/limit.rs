//! Euler-Maruyama discretization of the limit SDE system on [0, 1] and the
//! limit-distribution functionals of the critical CLS theory.
//!
//! The driving system is
//! `dM_t = sqrt(Y_t^+) Vbar^{1/2} dW_t`, `Y_t = <u_L, M_t + t m_eps>`,
//! with a second independent Wiener process `W~` feeding the estimator
//! functionals. All stochastic integrals are left-point (Ito) sums on the
//! grid.

use crate::error::{Error, Result};
use crate::laws::{mean_matrix, mixed_variance, GwiModel};
use crate::model::{
    classify, eigen_decompose, sqrt_psd_2x2, CriticalityClass, Mat2, Vec2, CRITICALITY_TOL,
};
use crate::rng::StreamRng;
use crate::simulate::Trajectory;
use serde::{Deserialize, Serialize};

const SALT_W: u64 = 0x5DE0_0001;
const SALT_WT: u64 = 0x5DE0_0002;

/// Default Euler-Maruyama step.
pub const DEFAULT_DT: f64 = 5e-4;

/// Scale factor convention in the nondegenerate mean-matrix functional.
///
/// The limit display carries `(1 - lambda^2)^{1/2}`; an intermediate constant
/// in its derivation reads `(1 - lambda)^{1/2}` instead. The former is the
/// consistent choice (and the empirical match); the latter is kept behind
/// this switch for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MxiScaleFactor {
    #[default]
    OneMinusLambdaSq,
    OneMinusLambda,
}

/// Form of the immigration-noise integral in the degenerate functional.
///
/// The limit display writes `Vbar^{1/2} int_0^1 Y_t dW~_t`; the
/// quadratic-variation computation behind it produces
/// `int_0^1 Y_t^{1/2} Vbar^{1/2} dW~_t`. The display is the default; the
/// alternative is kept behind this switch (it is the closer empirical match).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegenerateNoiseForm {
    #[default]
    LinearY,
    SqrtY,
}

/// Constants of the limit SDE system, derived from a critical model.
#[derive(Debug, Clone, Serialize)]
pub struct LimitConstants {
    /// `<u_L, m_eps>` (drift of Y).
    pub drift: f64,
    /// `<Vbar u_L, u_L>` (diffusion coefficient of Y).
    pub diff_u: f64,
    /// Mixed offspring variance `Vbar`.
    pub vbar: Mat2,
    /// `Vbar^{1/2}`.
    pub vbar_sqrt: Mat2,
    /// `lambda = lambda_minus`.
    pub lambda: f64,
    /// `<Vbar v_L, v_L>`.
    pub vbar_v: f64,
    /// `<V_eps v_L, v_L>`.
    pub veps_v: f64,
    /// `<v_L, m_eps>`.
    pub me_v: f64,
    pub u_left: Vec2,
    pub v_left: Vec2,
    pub m_eps: Vec2,
}

impl LimitConstants {
    /// Derive the constants from a critical positively regular model.
    pub fn from_model(model: &GwiModel) -> Result<Self> {
        let m = mean_matrix(model)?;
        let c = classify(&m, CRITICALITY_TOL);
        if c.class != CriticalityClass::Critical {
            return Err(Error::NotCritical {
                rho: c.rho,
                tol: CRITICALITY_TOL,
            });
        }
        let s = eigen_decompose(&m);
        let vbar = mixed_variance(model)?;
        let vbar_sqrt = sqrt_psd_2x2(&vbar)?;
        let (_, _, veps) = model.covariances();
        let m_eps = model.immigration_mean();
        Ok(LimitConstants {
            drift: s.u_left.dot(m_eps),
            diff_u: vbar.matvec(s.u_left).dot(s.u_left),
            vbar,
            vbar_sqrt,
            lambda: s.lambda_minus,
            vbar_v: vbar.matvec(s.v_left).dot(s.v_left),
            veps_v: veps.matvec(s.v_left).dot(s.v_left),
            me_v: s.v_left.dot(m_eps),
            u_left: s.u_left,
            v_left: s.v_left,
            m_eps,
        })
    }

    /// `M = <v_L, m_eps>^2 / (1-lambda)^2 + <V_eps v_L, v_L> / (1-lambda^2)`.
    pub fn m_limit(&self) -> f64 {
        self.me_v * self.me_v / (1.0 - self.lambda).powi(2)
            + self.veps_v / (1.0 - self.lambda * self.lambda)
    }
}

/// Discretization configuration.
#[derive(Debug, Clone)]
pub struct SdeConfig {
    /// Step size in `(0, 0.01]`; the horizon is fixed at 1.
    pub dt: f64,
    pub seed: u64,
    /// Separate seed for the `W~` stream; defaults to `seed`. The `Y` path
    /// depends only on `seed`, never on this.
    pub wt_seed: Option<u64>,
    pub constants: LimitConstants,
    pub mxi_scale: MxiScaleFactor,
    pub degenerate_noise: DegenerateNoiseForm,
}

impl SdeConfig {
    pub fn new(constants: LimitConstants, dt: f64, seed: u64) -> Result<Self> {
        if !(dt > 0.0 && dt <= 0.01) {
            return Err(Error::Config(format!("dt must be in (0, 0.01], got {dt}")));
        }
        let steps = (1.0 / dt).round();
        if (steps * dt - 1.0).abs() > dt {
            return Err(Error::Config(format!(
                "dt = {dt} does not divide the unit horizon to within one step"
            )));
        }
        Ok(SdeConfig {
            dt,
            seed,
            wt_seed: None,
            constants,
            mxi_scale: MxiScaleFactor::default(),
            degenerate_noise: DegenerateNoiseForm::default(),
        })
    }

    pub fn steps(&self) -> usize {
        (1.0 / self.dt).round() as usize
    }
}

/// A discretized path of the limit system on the uniform grid of [0, 1].
#[derive(Debug, Clone)]
pub struct SdePath {
    pub dt: f64,
    /// `Y` at grid points `0..=steps` (clamped at zero).
    pub y: Vec<f64>,
    /// The 2-dimensional martingale `M` at grid points `0..=steps`.
    pub m: Vec<Vec2>,
    /// Brownian increments of `W` (already scaled by sqrt(dt)).
    pub w_inc: Vec<Vec2>,
    /// Brownian increments of the independent `W~`.
    pub wt_inc: Vec<Vec2>,
    /// Number of grid points where the raw `Y` went negative and was clamped.
    pub clamp_events: usize,
}

impl SdePath {
    pub fn int_y_dt(&self) -> f64 {
        self.y[..self.y.len() - 1].iter().sum::<f64>() * self.dt
    }

    pub fn int_y2_dt(&self) -> f64 {
        self.y[..self.y.len() - 1]
            .iter()
            .map(|y| y * y)
            .sum::<f64>()
            * self.dt
    }

    pub fn int_y_dwt(&self) -> Vec2 {
        let mut acc = Vec2::ZERO;
        for (i, dw) in self.wt_inc.iter().enumerate() {
            acc = acc + *dw * self.y[i];
        }
        acc
    }

    pub fn int_sqrt_y_dwt(&self) -> Vec2 {
        let mut acc = Vec2::ZERO;
        for (i, dw) in self.wt_inc.iter().enumerate() {
            acc = acc + *dw * self.y[i].max(0.0).sqrt();
        }
        acc
    }

    /// Componentwise `int Y dM` with left-point `Y` against `M` increments.
    pub fn int_y_dm(&self) -> Vec2 {
        let mut acc = Vec2::ZERO;
        for i in 0..self.m.len() - 1 {
            acc = acc + (self.m[i + 1] - self.m[i]) * self.y[i];
        }
        acc
    }

    pub fn m1(&self) -> Vec2 {
        *self.m.last().unwrap()
    }
}

/// Run the Euler-Maruyama recursion with explicit Brownian increments
/// (already scaled by sqrt(dt)). Exposed so tests can force increments or
/// share them across two step sizes.
pub fn em_path_from_increments(cfg: &SdeConfig, w_inc: &[Vec2], wt_inc: &[Vec2]) -> SdePath {
    let steps = w_inc.len();
    assert_eq!(steps, wt_inc.len());
    let c = &cfg.constants;
    let dt = cfg.dt;
    let deterministic_y = c.diff_u <= 1e-14;
    let mut y: Vec<f64> = Vec::with_capacity(steps + 1);
    let mut m = Vec::with_capacity(steps + 1);
    y.push(0.0);
    m.push(Vec2::ZERO);
    let mut clamp_events = 0;
    for i in 0..steps {
        let scale = y[i].max(0.0).sqrt();
        let dm = c.vbar_sqrt.matvec(w_inc[i]) * scale;
        let next_m = m[i] + dm;
        let t_next = (i + 1) as f64 * dt;
        let next_y = if deterministic_y {
            // <u_L, Vbar^{1/2} dW> vanishes identically in this regime
            c.drift * t_next
        } else {
            let raw = c.u_left.dot(next_m + c.m_eps * t_next);
            if raw < 0.0 {
                clamp_events += 1;
                0.0
            } else {
                raw
            }
        };
        m.push(next_m);
        y.push(next_y);
    }
    SdePath {
        dt,
        y,
        m,
        w_inc: w_inc.to_vec(),
        wt_inc: wt_inc.to_vec(),
        clamp_events,
    }
}

/// Draw the two independent increment streams for a path.
///
/// `path_label` distinguishes paths inside a Monte Carlo campaign; the `W`
/// and `W~` streams use disjoint salts so they are independent, and `W~` can
/// be re-seeded without touching the `Y` path.
pub fn draw_increments(cfg: &SdeConfig, path_label: u64) -> (Vec<Vec2>, Vec<Vec2>) {
    let steps = cfg.steps();
    let sqrt_dt = cfg.dt.sqrt();
    let mut rng_w = StreamRng::from_label(cfg.seed, &[SALT_W, path_label]);
    let wt_seed = cfg.wt_seed.unwrap_or(cfg.seed);
    let mut rng_wt = StreamRng::from_label(wt_seed, &[SALT_WT, path_label]);
    let mut w = Vec::with_capacity(steps);
    let mut wt = Vec::with_capacity(steps);
    for _ in 0..steps {
        w.push(Vec2(rng_w.normal(), rng_w.normal()) * sqrt_dt);
        wt.push(Vec2(rng_wt.normal(), rng_wt.normal()) * sqrt_dt);
    }
    (w, wt)
}

/// Simulate one path of the limit system.
pub fn simulate_limit_path(cfg: &SdeConfig) -> SdePath {
    simulate_limit_path_labeled(cfg, 0)
}

/// Simulate the path with the given label (replication index).
pub fn simulate_limit_path_labeled(cfg: &SdeConfig, path_label: u64) -> SdePath {
    let (w, wt) = draw_increments(cfg, path_label);
    em_path_from_increments(cfg, &w, &wt)
}

/// Nondegenerate mean-matrix limit functional:
/// `(scale / <Vbar v_L, v_L>^{1/2}) (Vbar^{1/2} int Y dW~) / (int Y dt) v_L^T`,
/// a rank-one matrix with row space spanned by `v_L`.
pub fn functional_mxi(path: &SdePath, cfg: &SdeConfig) -> Result<Mat2> {
    let c = &cfg.constants;
    if c.vbar_v <= 0.0 {
        return Err(Error::InvalidModel(
            "functional_mxi requires <Vbar v_L, v_L> > 0".into(),
        ));
    }
    let int_y = path.int_y_dt();
    if int_y <= 1e-12 {
        return Err(Error::DegeneratePath(format!("int Y dt = {int_y}")));
    }
    let factor = match cfg.mxi_scale {
        MxiScaleFactor::OneMinusLambdaSq => (1.0 - c.lambda * c.lambda).sqrt(),
        MxiScaleFactor::OneMinusLambda => (1.0 - c.lambda).sqrt(),
    };
    let w = c.vbar_sqrt.matvec(path.int_y_dwt()) * (factor / (c.vbar_v.sqrt() * int_y));
    Ok(w.outer(c.v_left))
}

/// Criticality limit functional
/// `int Y d(Y - t drift) / int Y^2 dt`, computed as
/// `sum Y_i (dY_i - drift dt) / sum Y_i^2 dt`.
pub fn functional_rho(path: &SdePath, cfg: &SdeConfig) -> Result<f64> {
    let den = path.int_y2_dt();
    if den <= 1e-12 {
        return Err(Error::DegeneratePath(format!("int Y^2 dt = {den}")));
    }
    let drift = cfg.constants.drift;
    let mut num = 0.0;
    for i in 0..path.y.len() - 1 {
        num += path.y[i] * (path.y[i + 1] - path.y[i] - drift * path.dt);
    }
    Ok(num / den)
}

/// Degenerate-regime mean-matrix limit functional `(I3 + I4) / (I1 + I2) v_L^T`.
///
/// Requires `<Vbar v_L, v_L> = 0` and `M > 0`; the fully degenerate regime
/// (`M = 0`) has no unique CLS estimator and is rejected.
pub fn functional_mxi_degenerate(path: &SdePath, cfg: &SdeConfig) -> Result<Mat2> {
    let c = &cfg.constants;
    if c.vbar_v.abs() > 1e-12 {
        return Err(Error::InvalidModel(
            "functional_mxi_degenerate requires <Vbar v_L, v_L> = 0".into(),
        ));
    }
    if c.m_limit() <= 0.0 {
        return Err(Error::InvalidModel(
            "fully degenerate regime (M = 0): no unique CLS estimator".into(),
        ));
    }
    let one_m_l = 1.0 - c.lambda;
    let one_m_l2 = 1.0 - c.lambda * c.lambda;
    let int_y = path.int_y_dt();
    let int_y2 = path.int_y2_dt();
    let i1 = c.me_v * c.me_v / (one_m_l * one_m_l) * (int_y2 - int_y * int_y);
    let i2 = c.veps_v / one_m_l2 * int_y2;
    let denom = i1 + i2;
    if denom <= 1e-12 {
        return Err(Error::DegeneratePath(format!("I1 + I2 = {denom}")));
    }
    let i3 = (path.m1() * int_y2 - path.int_y_dm() * int_y) * (c.me_v / one_m_l);
    let noise = match cfg.degenerate_noise {
        DegenerateNoiseForm::LinearY => path.int_y_dwt(),
        DegenerateNoiseForm::SqrtY => path.int_sqrt_y_dwt(),
    };
    let i4 = c.vbar_sqrt.matvec(noise) * (c.veps_v.sqrt() / one_m_l2.sqrt() * int_y2);
    let w = (i3 + i4) * (1.0 / denom);
    Ok(w.outer(c.v_left))
}

/// Helper: `I1` alone (nonnegative by Cauchy-Schwarz on [0, 1]).
pub fn degenerate_i1(path: &SdePath, cfg: &SdeConfig) -> f64 {
    let c = &cfg.constants;
    let int_y = path.int_y_dt();
    let int_y2 = path.int_y2_dt();
    c.me_v * c.me_v / (1.0 - c.lambda).powi(2) * (int_y2 - int_y * int_y)
}

// ---------------------------------------------------------------------------
// Finite-n scalings
// ---------------------------------------------------------------------------

/// The finite-n quantities whose limits the critical theory identifies.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScaledStats {
    /// `n^{-3} sum U_{k-1}^2`.
    pub u2_n3: f64,
    /// `n^{-2} sum V_{k-1}^2`.
    pub v2_n2: f64,
    /// `n^{-5/2} sum U_{k-1} V_{k-1}`.
    pub uv_n52: f64,
    /// `n^{-1} sum V_{k-1}^2`.
    pub v2_n1: f64,
    /// `n^{-2} sum U_{k-1} V_{k-1}`.
    pub uv_n2: f64,
    /// `n^{-5} det(A_n)`.
    pub det_n5: f64,
    /// `n^{-4} det(A_n)`.
    pub det_n4: f64,
    /// `n^{1/2} (m_hat - m_xi)`, when the estimator exists.
    pub mhat_err_sqrt_n: Option<Mat2>,
    /// `n (rho_hat - 1)`, when the criticality estimator exists.
    pub rho_err_n: Option<f64>,
}

/// Compute the finite-n scalings of a critical trajectory.
pub fn scaled_statistics(traj: &Trajectory, model: &GwiModel) -> Result<ScaledStats> {
    let m = mean_matrix(model)?;
    let spec = eigen_decompose(&m);
    let series = crate::simulate::uv_decompose(traj, model, &spec)?;
    let n = traj.len();
    let nf = n as f64;
    let mut su2 = 0.0;
    let mut sv2 = 0.0;
    let mut suv = 0.0;
    for k in 1..=n {
        let u = series.u[k - 1];
        let v = series.v[k - 1];
        su2 += u * u;
        sv2 += v * v;
        suv += u * v;
    }
    let ne = crate::estimate::normal_equations(traj, model.immigration_mean());
    let est = crate::estimate::cls_estimate(&ne);
    let mhat_err_sqrt_n = est.m_hat.map(|mh| (mh - m.to_mat2()) * nf.sqrt());
    let rho_err_n = est.rho_hat.map(|r| nf * (r - 1.0));
    Ok(ScaledStats {
        u2_n3: su2 / nf.powi(3),
        v2_n2: sv2 / nf.powi(2),
        uv_n52: suv / nf.powf(2.5),
        v2_n1: sv2 / nf,
        uv_n2: suv / nf.powi(2),
        det_n5: ne.det_a / nf.powi(5),
        det_n4: ne.det_a / nf.powi(4),
        mhat_err_sqrt_n,
        rho_err_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::{model_a, model_d, FiniteLaw, GwiModel};
    use approx::assert_relative_eq;

    fn model_orthogonal_noise() -> GwiModel {
        // offspring noise orthogonal to u_L: diff_u = 0 while Y still moves
        let law = FiniteLaw::from_pairs(&[((1, 0), 0.5), ((0, 1), 0.5)]).unwrap();
        GwiModel::new(law.clone(), law, FiniteLaw::point_mass(1, 1)).unwrap()
    }

    fn cfg_for(model: &GwiModel, dt: f64, seed: u64) -> SdeConfig {
        SdeConfig::new(LimitConstants::from_model(model).unwrap(), dt, seed).unwrap()
    }

    #[test]
    fn constants_model_a() {
        let c = LimitConstants::from_model(&model_a()).unwrap();
        assert_relative_eq!(c.drift, 1.0, epsilon = 1e-14);
        assert_relative_eq!(c.diff_u, 0.8, epsilon = 1e-14);
        assert_relative_eq!(c.lambda, -0.4, epsilon = 1e-14);
        assert_relative_eq!(c.vbar_v, 0.11, epsilon = 1e-14);
        assert_relative_eq!(c.veps_v, 0.125, epsilon = 1e-14);
        assert_relative_eq!(c.me_v, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn constants_model_d() {
        let c = LimitConstants::from_model(&model_d()).unwrap();
        assert_relative_eq!(c.drift, 1.0, epsilon = 1e-14);
        assert_relative_eq!(c.diff_u, 1.0, epsilon = 1e-14);
        assert_relative_eq!(c.lambda, 0.0, epsilon = 1e-14);
        assert!(c.vbar_v.abs() < 1e-14);
        assert_relative_eq!(c.veps_v, 0.25, epsilon = 1e-14);
        assert_relative_eq!(c.m_limit(), 0.25, epsilon = 1e-14);
    }

    #[test]
    fn config_validation() {
        let c = LimitConstants::from_model(&model_a()).unwrap();
        assert!(SdeConfig::new(c.clone(), 0.02, 1).is_err());
        assert!(SdeConfig::new(c.clone(), 0.0, 1).is_err());
        assert!(SdeConfig::new(c, 5e-4, 1).is_ok());
        // subcritical model rejected
        assert!(LimitConstants::from_model(&crate::laws::model_c()).is_err());
    }

    #[test]
    fn deterministic_y_when_diff_u_vanishes() {
        let model = model_orthogonal_noise();
        let cfg = cfg_for(&model, 1e-3, 42);
        assert!(cfg.constants.diff_u.abs() <= 1e-14);
        let path = simulate_limit_path(&cfg);
        for (i, y) in path.y.iter().enumerate() {
            assert_eq!(*y, cfg.constants.drift * (i as f64 * cfg.dt));
        }
        // numerator degenerates to floating-point dust
        assert!(functional_rho(&path, &cfg).unwrap().abs() < 1e-12);
        assert_eq!(path.clamp_events, 0);
    }

    #[test]
    fn zero_immigration_mean_absorbs_at_zero() {
        let mut c = LimitConstants::from_model(&model_a()).unwrap();
        c.drift = 0.0;
        c.m_eps = Vec2::ZERO;
        let cfg = SdeConfig::new(c, 1e-3, 9).unwrap();
        let path = simulate_limit_path(&cfg);
        for y in &path.y {
            assert_eq!(*y, 0.0);
        }
        assert!(matches!(
            functional_rho(&path, &cfg),
            Err(Error::DegeneratePath(_))
        ));
    }

    #[test]
    fn mean_of_y_at_horizon() {
        let cfg = cfg_for(&model_a(), 2e-3, 77);
        let npaths = 10_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for p in 0..npaths {
            let path = simulate_limit_path_labeled(&cfg, p);
            let y1 = *path.y.last().unwrap();
            sum += y1;
            sum_sq += y1 * y1;
        }
        let n = npaths as f64;
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0);
        let band = 4.0 * (var / n).sqrt();
        assert!(
            (mean - cfg.constants.drift).abs() < band,
            "mean {mean} vs {} (band {band})",
            cfg.constants.drift
        );
    }

    #[test]
    fn path_invariant_and_clamp_rate() {
        let cfg = cfg_for(&model_a(), 5e-4, 3);
        let mut clamps = 0usize;
        let mut steps = 0usize;
        for p in 0..20 {
            let path = simulate_limit_path_labeled(&cfg, p);
            for i in 0..path.y.len() {
                let t = i as f64 * cfg.dt;
                let raw = cfg.constants.u_left.dot(path.m[i] + cfg.constants.m_eps * t);
                assert!(
                    (path.y[i] - raw.max(0.0)).abs() <= 1e-10,
                    "invariant broken at i={i}"
                );
            }
            clamps += path.clamp_events;
            steps += path.y.len() - 1;
        }
        assert!(
            (clamps as f64) < 0.001 * steps as f64,
            "clamp rate too high: {clamps}/{steps}"
        );
    }

    #[test]
    fn forced_zero_wt_gives_zero_functional() {
        let cfg = cfg_for(&model_a(), 1e-3, 5);
        let (w, wt) = draw_increments(&cfg, 0);
        let zero_wt = vec![Vec2::ZERO; wt.len()];
        let path = em_path_from_increments(&cfg, &w, &zero_wt);
        let f = functional_mxi(&path, &cfg).unwrap();
        assert_eq!(f, Mat2::ZERO);
    }

    #[test]
    fn functional_mxi_rank_one_structure() {
        let cfg = cfg_for(&model_a(), 1e-3, 6);
        let path = simulate_limit_path(&cfg);
        let f = functional_mxi(&path, &cfg).unwrap();
        let vl = cfg.constants.v_left;
        // each row is proportional to v_L: row_i = w_i v_L
        for i in 0..2 {
            let w_i = f.0[i][0] / vl.0;
            assert_relative_eq!(f.0[i][1], w_i * vl.1, epsilon = 1e-12);
        }
        // determinant vanishes (rank <= 1)
        assert!(f.det().abs() < 1e-15 * f.norm_inf().powi(2).max(1e-30));
    }

    #[test]
    fn functional_mxi_median_symmetry() {
        let cfg = cfg_for(&model_a(), 2e-3, 8);
        let npaths = 10_000;
        let mut entries = Vec::with_capacity(npaths);
        for p in 0..npaths {
            let path = simulate_limit_path_labeled(&cfg, p as u64);
            let f = functional_mxi(&path, &cfg).unwrap();
            entries.push(f.0[0][1]);
        }
        entries.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = entries[npaths / 2];
        let mean_abs = entries.iter().map(|x| x.abs()).sum::<f64>() / npaths as f64;
        // median standard error ~ 1.25 sigma / sqrt(n); use a generous band
        assert!(
            median.abs() < 0.1 * mean_abs,
            "median {median} vs scale {mean_abs}"
        );
    }

    #[test]
    fn functional_rho_on_synthetic_linear_path() {
        let cfg = cfg_for(&model_orthogonal_noise(), 1e-3, 0);
        // Y_t = t with drift 1: numerator is identically zero
        let steps = cfg.steps();
        let y: Vec<f64> = (0..=steps).map(|i| i as f64 * cfg.dt).collect();
        let path = SdePath {
            dt: cfg.dt,
            y,
            m: vec![Vec2::ZERO; steps + 1],
            w_inc: vec![Vec2::ZERO; steps],
            wt_inc: vec![Vec2::ZERO; steps],
            clamp_events: 0,
        };
        let mut cfg_unit = cfg.clone();
        cfg_unit.constants.drift = 1.0;
        assert_relative_eq!(functional_rho(&path, &cfg_unit).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn reproducibility_and_stream_independence() {
        let cfg = cfg_for(&model_a(), 1e-3, 101);
        let p1 = simulate_limit_path(&cfg);
        let p2 = simulate_limit_path(&cfg);
        assert_eq!(p1.y, p2.y);
        assert_eq!(
            functional_rho(&p1, &cfg).unwrap(),
            functional_rho(&p2, &cfg).unwrap()
        );

        // swapping the W~ seed changes the estimator functional but not Y
        let mut cfg_swapped = cfg.clone();
        cfg_swapped.wt_seed = Some(777);
        let p3 = simulate_limit_path(&cfg_swapped);
        assert_eq!(p1.y, p3.y);
        assert_eq!(p1.m, p3.m);
        let f1 = functional_mxi(&p1, &cfg).unwrap();
        let f3 = functional_mxi(&p3, &cfg_swapped).unwrap();
        assert_ne!(f1, f3);
    }

    #[test]
    fn degenerate_functional_preconditions_and_i1() {
        let model = model_d();
        let cfg = cfg_for(&model, 1e-3, 33);
        let path = simulate_limit_path(&cfg);
        // Model A constants are not degenerate
        let cfg_a = cfg_for(&model_a(), 1e-3, 33);
        assert!(functional_mxi_degenerate(&path, &cfg_a).is_err());
        // fully degenerate constants (M = 0) rejected
        let det_model = crate::laws::model_d_deterministic_immigration();
        let cfg_det = cfg_for(&det_model, 1e-3, 33);
        assert!(functional_mxi_degenerate(&path, &cfg_det).is_err());

        // I1 >= 0 on every sampled path (Cauchy-Schwarz), and the functional
        // evaluates on Model D
        for p in 0..50 {
            let path = simulate_limit_path_labeled(&cfg, p);
            assert!(degenerate_i1(&path, &cfg) >= -1e-12);
            let f = functional_mxi_degenerate(&path, &cfg).unwrap();
            assert!(f.norm_inf().is_finite());
        }

        // forced zero noise on both streams gives the zero matrix
        let (w, wt) = draw_increments(&cfg, 0);
        let zeros_w = vec![Vec2::ZERO; w.len()];
        let zeros_wt = vec![Vec2::ZERO; wt.len()];
        let path = em_path_from_increments(&cfg, &zeros_w, &zeros_wt);
        let f = functional_mxi_degenerate(&path, &cfg).unwrap();
        assert_eq!(f, Mat2::ZERO);
    }

    #[test]
    fn uv_cross_term_vanishes_at_its_scaling() {
        // mean of n^{-5/2} sum U_{k-1} V_{k-1} over replications within 4
        // standard errors of zero
        use rayon::prelude::*;
        let model = model_a();
        let reps = 2000;
        let n = 2000;
        let values: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let traj =
                    crate::simulate::simulate_gwi(&model, n, 0xCAB0 + r as u64).unwrap();
                scaled_statistics(&traj, &model).unwrap().uv_n52
            })
            .collect();
        let nf = reps as f64;
        let mean = values.iter().sum::<f64>() / nf;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
        let band = 4.0 * (var / nf).sqrt();
        assert!(
            mean.abs() <= band,
            "mean of n^-5/2 sum UV = {mean} exceeds 4 se = {band}"
        );
    }

    #[test]
    fn scaled_statistics_cases() {
        let model = model_a();
        // all-zero trajectory: all sums zero, estimators absent
        let traj = Trajectory {
            states: vec![[0, 0]; 11],
            seed: 0,
        };
        let s = scaled_statistics(&traj, &model).unwrap();
        assert_eq!(s.u2_n3, 0.0);
        assert_eq!(s.v2_n2, 0.0);
        assert_eq!(s.uv_n52, 0.0);
        assert_eq!(s.det_n5, 0.0);
        assert!(s.mhat_err_sqrt_n.is_none());
        assert!(s.rho_err_n.is_none());

        // hand trajectory with unit immigration mean: direct arithmetic; the
        // CLS hand example gives m_hat = [[-1, 0], [0, 0]], rho_hat = 0
        let model = GwiModel::new(
            model_a().offspring1,
            model_a().offspring2,
            FiniteLaw::point_mass(1, 1),
        )
        .unwrap();
        let traj = Trajectory {
            states: vec![[0, 0], [1, 0], [0, 1], [1, 1]],
            seed: 0,
        };
        let m = mean_matrix(&model).unwrap();
        let spec = eigen_decompose(&m);
        let series = crate::simulate::uv_decompose(&traj, &model, &spec).unwrap();
        let s = scaled_statistics(&traj, &model).unwrap();
        let n = 3.0_f64;
        let su2: f64 = (0..3).map(|k| series.u[k] * series.u[k]).sum();
        let sv2: f64 = (0..3).map(|k| series.v[k] * series.v[k]).sum();
        let suv: f64 = (0..3).map(|k| series.u[k] * series.v[k]).sum();
        assert_relative_eq!(s.u2_n3, su2 / n.powi(3), epsilon = 1e-14);
        assert_relative_eq!(s.v2_n2, sv2 / n.powi(2), epsilon = 1e-14);
        assert_relative_eq!(s.uv_n52, suv / n.powf(2.5), epsilon = 1e-14);
        assert_relative_eq!(s.v2_n1, sv2 / n, epsilon = 1e-14);
        // det(A_3) = 1 from the CLS hand example
        assert_relative_eq!(s.det_n5, 1.0 / n.powi(5), epsilon = 1e-14);
        assert_relative_eq!(s.det_n4, 1.0 / n.powi(4), epsilon = 1e-14);
        // n(rho_hat - 1) = 3 (0 - 1) = -3
        assert_relative_eq!(s.rho_err_n.unwrap(), -3.0, epsilon = 1e-12);
    }
}
