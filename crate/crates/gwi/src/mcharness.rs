//! Parallel Monte Carlo campaigns: estimator-side sampling, limit-side
//! sampling, empirical-distribution comparison, and moment/scaling checks.
//!
//! Replications are embarrassingly parallel; each one owns the substream
//! keyed by `(master seed, salt, replication index)`, so results do not
//! depend on the worker count or completion order.

use crate::error::{Error, Result};
use crate::estimate::estimate_from_trajectory;
use crate::laws::{
    degeneracy_indicators, exact_moments, mean_matrix, mixed_variance, stationary_second_moment,
    tilde_variance, GwiModel,
};
use crate::limit::{
    functional_mxi, functional_mxi_degenerate, functional_rho, simulate_limit_path_labeled,
    SdeConfig,
};
use crate::model::{
    classify, eigen_decompose, spectral_radius, CriticalityClass, Mat2, Vec2, CRITICALITY_TOL,
};
use crate::rng::StreamRng;
use crate::simulate::{simulate_gwi, step_from, SimOptions};
use rayon::prelude::*;
use serde::Serialize;

const SALT_ESTIMATOR: u64 = 0xE571;
const SALT_CONDCHECK: u64 = 0xC0DD;
const SALT_THIRD: u64 = 0xC0DE;
const SALT_MOMENTS: u64 = 0x303E;
/// Resampling attempts for degenerate limit paths before giving up.
const MAX_RESAMPLE_ATTEMPTS: u64 = 100;

/// Quantile levels reported in comparisons (percent / 100).
pub const QUANTILE_LEVELS: [f64; 7] = [0.01, 0.05, 0.25, 0.50, 0.75, 0.95, 0.99];

/// Monte Carlo campaign configuration.
#[derive(Debug, Clone, Copy)]
pub struct McConfig {
    pub reps: usize,
    /// Trajectory length for estimator-side campaigns.
    pub n: usize,
    pub seed: u64,
    /// Step size for limit-side campaigns.
    pub dt: f64,
    /// Worker threads; 0 uses the ambient thread pool.
    pub workers: usize,
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    if workers == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool")
            .install(f)
    }
}

/// Sorted sample of a scalar statistic, with failed replications tallied
/// (never silently dropped).
#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalDist {
    pub values: Vec<f64>,
    pub failures: usize,
}

impl EmpiricalDist {
    pub fn from_values(mut values: Vec<f64>, failures: usize) -> Self {
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite sample values"));
        EmpiricalDist { values, failures }
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }

    /// Nearest-rank quantile of the sorted sample.
    pub fn quantile(&self, p: f64) -> f64 {
        assert!(!self.values.is_empty());
        let m = self.values.len();
        let idx = ((m as f64 * p).ceil() as usize).clamp(1, m) - 1;
        self.values[idx]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.count() as f64
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.values.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / self.count() as f64
    }
}

/// Scalar statistics sampled on the estimator side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorStatistic {
    /// `n (rho_hat - 1)` (critical models).
    NRhoMinusOne,
    /// `<row_1(sqrt(n) (m_hat - m)), v_L> / |v_L|^2` (critical models).
    SqrtNMxiProjV,
    /// `<row_1(m_hat - m), v_L> / |v_L|^2`, unscaled (degenerate critical).
    MxiProjV,
    /// `sqrt(n) (rho_hat - rho)` (subcritical models).
    SqrtNRhoMinusRho,
}

impl EstimatorStatistic {
    fn requires_critical(self) -> bool {
        !matches!(self, EstimatorStatistic::SqrtNRhoMinusRho)
    }
}

/// Projection of the first row of a matrix onto `v_L`, normalized.
pub fn v_projection(m: &Mat2, v_left: Vec2) -> f64 {
    m.row(0).dot(v_left) / v_left.norm_sq()
}

fn derived_seed(master: u64, salt: u64, rep: u64) -> u64 {
    StreamRng::from_label(master, &[salt, rep]).next_u64()
}

/// Per-replication trajectory seed used by estimator-side campaigns (also
/// exposed to the CLI so CSV rows can name the seed that reproduces them).
pub fn replication_seed(master: u64, rep: u64) -> u64 {
    derived_seed(master, SALT_ESTIMATOR, rep)
}

/// Sample an estimator-side statistic over independent replications.
///
/// Replication `r` simulates with the derived seed
/// `hash(seed, estimator salt, r)`; absent estimates count as failures.
pub fn run_estimator_mc(
    model: &GwiModel,
    mc: &McConfig,
    statistic: EstimatorStatistic,
) -> Result<EmpiricalDist> {
    let m = mean_matrix(model)?;
    let crit = classify(&m, CRITICALITY_TOL);
    if statistic.requires_critical() && crit.class != CriticalityClass::Critical {
        return Err(Error::NotCritical {
            rho: crit.rho,
            tol: CRITICALITY_TOL,
        });
    }
    if !statistic.requires_critical() && crit.class != CriticalityClass::Subcritical {
        return Err(Error::NotSubcritical { rho: crit.rho });
    }
    let spec = eigen_decompose(&m);
    let m_true = m.to_mat2();
    let rho_true = crit.rho;
    let nf = mc.n as f64;
    let samples: Vec<Option<f64>> = with_pool(mc.workers, || {
        (0..mc.reps)
            .into_par_iter()
            .map(|r| {
                let seed = derived_seed(mc.seed, SALT_ESTIMATOR, r as u64);
                let traj = simulate_gwi(model, mc.n, seed).ok()?;
                let est = estimate_from_trajectory(&traj, model);
                match statistic {
                    EstimatorStatistic::NRhoMinusOne => est.rho_hat.map(|r| nf * (r - 1.0)),
                    EstimatorStatistic::SqrtNRhoMinusRho => {
                        est.rho_hat.map(|r| nf.sqrt() * (r - rho_true))
                    }
                    EstimatorStatistic::SqrtNMxiProjV => est
                        .m_hat
                        .map(|mh| v_projection(&((mh - m_true) * nf.sqrt()), spec.v_left)),
                    EstimatorStatistic::MxiProjV => est
                        .m_hat
                        .map(|mh| v_projection(&(mh - m_true), spec.v_left)),
                }
            })
            .collect()
    });
    let failures = samples.iter().filter(|s| s.is_none()).count();
    Ok(EmpiricalDist::from_values(
        samples.into_iter().flatten().collect(),
        failures,
    ))
}

/// Matrix samples of `sqrt(n) (m_hat - m)` for covariance estimation.
pub fn collect_mxi_samples(model: &GwiModel, mc: &McConfig) -> Result<(Vec<Mat2>, usize)> {
    let m_true = mean_matrix(model)?.to_mat2();
    let nf = mc.n as f64;
    let samples: Vec<Option<Mat2>> = with_pool(mc.workers, || {
        (0..mc.reps)
            .into_par_iter()
            .map(|r| {
                let seed = derived_seed(mc.seed, SALT_ESTIMATOR, r as u64);
                let traj = simulate_gwi(model, mc.n, seed).ok()?;
                let est = estimate_from_trajectory(&traj, model);
                est.m_hat.map(|mh| (mh - m_true) * nf.sqrt())
            })
            .collect()
    });
    let failures = samples.iter().filter(|s| s.is_none()).count();
    Ok((samples.into_iter().flatten().collect(), failures))
}

/// Empirical existence probabilities of the CLS estimators.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExistenceReport {
    pub reps: usize,
    /// Fraction of replications with `det(A_n) > 0`.
    pub p_omega: f64,
    /// Fraction with additionally a nonnegative discriminant.
    pub p_omega_tilde: f64,
}

pub fn existence_probabilities(model: &GwiModel, mc: &McConfig) -> Result<ExistenceReport> {
    let counts: Vec<(bool, bool)> = with_pool(mc.workers, || {
        (0..mc.reps)
            .into_par_iter()
            .map(|r| {
                let seed = derived_seed(mc.seed, SALT_ESTIMATOR, r as u64);
                match simulate_gwi(model, mc.n, seed) {
                    Ok(traj) => {
                        let est = estimate_from_trajectory(&traj, model);
                        (est.on_omega_n, est.on_omega_tilde_n)
                    }
                    Err(_) => (false, false),
                }
            })
            .collect()
    });
    let omega = counts.iter().filter(|c| c.0).count();
    let tilde = counts.iter().filter(|c| c.1).count();
    Ok(ExistenceReport {
        reps: mc.reps,
        p_omega: omega as f64 / mc.reps as f64,
        p_omega_tilde: tilde as f64 / mc.reps as f64,
    })
}

/// Limit functionals sampled on the limit side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitFunctional {
    /// `functional_rho`.
    Rho,
    /// `v_L` projection of `functional_mxi`.
    MxiProjV,
    /// `v_L` projection of `functional_mxi_degenerate`.
    MxiDegenerateProjV,
}

/// Result of a limit-side campaign with the degenerate-path resample counter.
#[derive(Debug, Clone, Serialize)]
pub struct LimitMcResult {
    pub dist: EmpiricalDist,
    pub resamples: usize,
}

/// Sample a limit functional over independent paths. Paths failing the
/// degeneracy threshold are resampled from a fresh substream (counted) up to
/// a cap, then tallied as failures.
pub fn run_limit_mc(
    cfg: &SdeConfig,
    reps: usize,
    workers: usize,
    functional: LimitFunctional,
) -> Result<LimitMcResult> {
    // surface regime errors once, on a probe path
    let probe = simulate_limit_path_labeled(cfg, u64::MAX);
    let probe_result = match functional {
        LimitFunctional::Rho => functional_rho(&probe, cfg).map(|_| ()),
        LimitFunctional::MxiProjV => functional_mxi(&probe, cfg).map(|_| ()),
        LimitFunctional::MxiDegenerateProjV => {
            functional_mxi_degenerate(&probe, cfg).map(|_| ())
        }
    };
    match probe_result {
        Ok(()) | Err(Error::DegeneratePath(_)) => {}
        Err(other) => return Err(other),
    }
    let v_left = cfg.constants.v_left;
    let outcomes: Vec<(Option<f64>, usize)> = with_pool(workers, || {
        (0..reps as u64)
            .into_par_iter()
            .map(|rep| {
                let mut resamples = 0usize;
                for attempt in 0..MAX_RESAMPLE_ATTEMPTS {
                    let label = rep + attempt * 0x1_0000_0000;
                    let path = simulate_limit_path_labeled(cfg, label);
                    let value = match functional {
                        LimitFunctional::Rho => functional_rho(&path, cfg).map(Some),
                        LimitFunctional::MxiProjV => {
                            functional_mxi(&path, cfg).map(|f| Some(v_projection(&f, v_left)))
                        }
                        LimitFunctional::MxiDegenerateProjV => functional_mxi_degenerate(&path, cfg)
                            .map(|f| Some(v_projection(&f, v_left))),
                    };
                    match value {
                        Ok(v) => return (v, resamples),
                        Err(Error::DegeneratePath(_)) => {
                            resamples += 1;
                            continue;
                        }
                        Err(_) => return (None, resamples),
                    }
                }
                (None, MAX_RESAMPLE_ATTEMPTS as usize)
            })
            .collect()
    });
    let resamples = outcomes.iter().map(|o| o.1).sum();
    let failures = outcomes.iter().filter(|o| o.0.is_none()).count();
    Ok(LimitMcResult {
        dist: EmpiricalDist::from_values(
            outcomes.into_iter().filter_map(|o| o.0).collect(),
            failures,
        ),
        resamples,
    })
}

// ---------------------------------------------------------------------------
// Two-sample comparison
// ---------------------------------------------------------------------------

/// Two-sample Kolmogorov-Smirnov statistic: the supremum over pooled points
/// of the empirical CDF distance.
pub fn ks_statistic(a: &EmpiricalDist, b: &EmpiricalDist) -> f64 {
    assert!(!a.values.is_empty() && !b.values.is_empty());
    let (xs, ys) = (&a.values, &b.values);
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let mut i = 0usize;
    let mut j = 0usize;
    let mut ks = 0.0_f64;
    while i < xs.len() || j < ys.len() {
        let v = match (xs.get(i), ys.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        ks = ks.max((i as f64 / na - j as f64 / nb).abs());
    }
    ks
}

/// Quantile table at `QUANTILE_LEVELS`.
pub fn quantile_table(dist: &EmpiricalDist) -> [f64; 7] {
    let mut out = [0.0; 7];
    for (i, p) in QUANTILE_LEVELS.iter().enumerate() {
        out[i] = dist.quantile(*p);
    }
    out
}

/// Side-by-side comparison of two empirical distributions.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub ks: f64,
    pub quantiles_a: [f64; 7],
    pub quantiles_b: [f64; 7],
    pub failures_a: usize,
    pub failures_b: usize,
}

pub fn compare(a: &EmpiricalDist, b: &EmpiricalDist) -> ComparisonReport {
    ComparisonReport {
        ks: ks_statistic(a, b),
        quantiles_a: quantile_table(a),
        quantiles_b: quantile_table(b),
        failures_a: a.failures,
        failures_b: b.failures,
    }
}

// ---------------------------------------------------------------------------
// Moment and scaling checks
// ---------------------------------------------------------------------------

/// Scaling regime for [`moment_scaling_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingRegime {
    /// `E|X_k|^l ~ k^l`, `E U_k^l ~ k^l`, `E V_k^{2j} ~ k^j`.
    Critical,
    /// Degenerate critical: `E V_k^{2j} = O(1)`.
    DegenerateCritical,
    /// Everything bounded.
    Subcritical,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MomentScalingRow {
    pub k: usize,
    /// `E|X_k|^l` divided by its regime scaling.
    pub x_ratio: f64,
    /// `E U_k^l` ratio (critical regimes with regular spectral data).
    pub u_ratio: Option<f64>,
    /// `E V_k^{2j}` ratio.
    pub v_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentScalingReport {
    pub regime: ScalingRegime,
    pub ell: u32,
    pub rows: Vec<MomentScalingRow>,
    /// max/min of each ratio column across the grid.
    pub spread_x: f64,
    pub spread_u: Option<f64>,
    pub spread_v: Option<f64>,
}

fn spread(vals: impl Iterator<Item = f64>) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Monte Carlo estimates of the moment scalings over a grid of generation
/// indices; `ell <= 8`. For critical regimes the U/V ratios are included
/// when the mean matrix is positively regular (the V ratio needs `ell >= 2`).
pub fn moment_scaling_check(
    model: &GwiModel,
    ell: u32,
    k_grid: &[usize],
    reps: usize,
    seed: u64,
    workers: usize,
    regime: ScalingRegime,
) -> Result<MomentScalingReport> {
    assert!((1..=8).contains(&ell));
    assert!(!k_grid.is_empty());
    let k_max = *k_grid.iter().max().unwrap();
    let spec = mean_matrix(model).ok().map(|m| eigen_decompose(&m));
    let j = ell / 2;
    let sums: Vec<Vec<(f64, f64, f64)>> = with_pool(workers, || {
        (0..reps)
            .into_par_iter()
            .map(|r| {
                let s = derived_seed(seed, SALT_MOMENTS, r as u64);
                let traj = simulate_gwi(model, k_max, s).expect("population cap hit");
                k_grid
                    .iter()
                    .map(|&k| {
                        let x = traj.state(k);
                        let xn = x.norm().powi(ell as i32);
                        let (u, v) = match &spec {
                            Some(sp) => (
                                sp.u_left.dot(x).powi(ell as i32),
                                sp.v_left.dot(x).powi(2 * j as i32),
                            ),
                            None => (0.0, 0.0),
                        };
                        (xn, u, v)
                    })
                    .collect()
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(k_grid.len());
    for (gi, &k) in k_grid.iter().enumerate() {
        let mut ex = 0.0;
        let mut eu = 0.0;
        let mut ev = 0.0;
        for rep in &sums {
            ex += rep[gi].0;
            eu += rep[gi].1;
            ev += rep[gi].2;
        }
        let nf = reps as f64;
        ex /= nf;
        eu /= nf;
        ev /= nf;
        let kf = k as f64;
        let (x_scale, u_scale, v_scale) = match regime {
            ScalingRegime::Critical => {
                (kf.powi(ell as i32), kf.powi(ell as i32), kf.powi(j as i32))
            }
            ScalingRegime::DegenerateCritical => (kf.powi(ell as i32), kf.powi(ell as i32), 1.0),
            ScalingRegime::Subcritical => (1.0, 1.0, 1.0),
        };
        rows.push(MomentScalingRow {
            k,
            x_ratio: ex / x_scale,
            u_ratio: spec.as_ref().map(|_| eu / u_scale),
            v_ratio: if j > 0 {
                spec.as_ref().map(|_| ev / v_scale)
            } else {
                None
            },
        });
    }
    Ok(MomentScalingReport {
        regime,
        ell,
        spread_x: spread(rows.iter().map(|r| r.x_ratio)),
        spread_u: rows
            .iter()
            .map(|r| r.u_ratio)
            .collect::<Option<Vec<_>>>()
            .map(|v| spread(v.into_iter())),
        spread_v: rows
            .iter()
            .map(|r| r.v_ratio)
            .collect::<Option<Vec<_>>>()
            .map(|v| spread(v.into_iter())),
        rows,
    })
}

fn one_step_difference(model: &GwiModel, state: [u64; 2], next: [u64; 2]) -> Vec2 {
    let c1 = model.offspring1.mean();
    let c2 = model.offspring2.mean();
    let me = model.immigration_mean();
    let cond = c1 * state[0] as f64 + c2 * state[1] as f64 + me;
    Vec2(next[0] as f64, next[1] as f64) - cond
}

/// One-step conditional covariance check from a frozen state: empirical
/// covariance of `M_k` versus both closed forms (state-weighted and
/// U/V-weighted).
#[derive(Debug, Clone, Serialize)]
pub struct CondVarReport {
    pub empirical: Mat2,
    pub target_state_form: Mat2,
    /// U/V form, present for critical positively regular models.
    pub target_uv_form: Option<Mat2>,
    /// Largest entrywise z-score of empirical vs the state form.
    pub max_z: f64,
}

pub fn conditional_variance_check(
    model: &GwiModel,
    state: [u64; 2],
    reps: usize,
    seed: u64,
    workers: usize,
) -> Result<CondVarReport> {
    let (v1, v2, veps) = model.covariances();
    let target = v1 * state[0] as f64 + v2 * state[1] as f64 + veps;
    let target_uv_form = match mean_matrix(model) {
        Ok(m) if classify(&m, CRITICALITY_TOL).class == CriticalityClass::Critical => {
            let s = eigen_decompose(&m);
            let x = Vec2(state[0] as f64, state[1] as f64);
            let u = s.u_left.dot(x);
            let v = s.v_left.dot(x);
            let vbar = mixed_variance(model)?;
            let vtilde = tilde_variance(model)?;
            Some(vbar * u + vtilde * v + veps)
        }
        _ => None,
    };
    let acc = with_pool(workers, || {
        (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = StreamRng::from_label(seed, &[SALT_CONDCHECK, r as u64]);
                let next = step_from(model, state, &mut rng, &SimOptions::default());
                let m = one_step_difference(model, state, next);
                let ms = [m.0, m.1];
                let mut prods = [[0.0; 2]; 2];
                let mut prods_sq = [[0.0; 2]; 2];
                for i in 0..2 {
                    for j in 0..2 {
                        prods[i][j] = ms[i] * ms[j];
                        prods_sq[i][j] = prods[i][j] * prods[i][j];
                    }
                }
                (m, prods, prods_sq)
            })
            .reduce(
                || (Vec2::ZERO, [[0.0; 2]; 2], [[0.0; 2]; 2]),
                |a, b| {
                    let mut prods = a.1;
                    let mut prods_sq = a.2;
                    for i in 0..2 {
                        for j in 0..2 {
                            prods[i][j] += b.1[i][j];
                            prods_sq[i][j] += b.2[i][j];
                        }
                    }
                    (a.0 + b.0, prods, prods_sq)
                },
            )
    });
    let nf = reps as f64;
    let mean = acc.0 * (1.0 / nf);
    let means = [mean.0, mean.1];
    let mut empirical = [[0.0; 2]; 2];
    let mut max_z = 0.0_f64;
    for i in 0..2 {
        for j in 0..2 {
            let e_prod = acc.1[i][j] / nf;
            empirical[i][j] = e_prod - means[i] * means[j];
            let prod_var = (acc.2[i][j] / nf - e_prod * e_prod).max(0.0);
            let se = (prod_var / nf).sqrt();
            let diff = empirical[i][j] - target.0[i][j];
            if se > 0.0 {
                max_z = max_z.max((diff / se).abs());
            } else {
                assert!(
                    diff.abs() < 1e-12,
                    "deterministic entry ({i},{j}) mismatch: {diff}"
                );
            }
        }
    }
    Ok(CondVarReport {
        empirical: Mat2(empirical),
        target_state_form: target,
        target_uv_form,
        max_z,
    })
}

/// Third conditional moment tensor check from a frozen state.
#[derive(Debug, Clone, Serialize)]
pub struct ThirdMomentReport {
    /// Empirical `E[M^{(x)3}]`, indexed by `4i + 2j + k`.
    pub empirical: [f64; 8],
    /// `x1 T1 + x2 T2 + T_eps` from exact law moments.
    pub target: [f64; 8],
    pub max_z: f64,
}

pub fn third_moment_check(
    model: &GwiModel,
    state: [u64; 2],
    reps: usize,
    seed: u64,
    workers: usize,
) -> Result<ThirdMomentReport> {
    let t1 = exact_moments(&model.offspring1, 3).third_tensor();
    let t2 = exact_moments(&model.offspring2, 3).third_tensor();
    let te = exact_moments(&model.immigration, 3).third_tensor();
    let mut target = [0.0; 8];
    for i in 0..8 {
        target[i] = state[0] as f64 * t1[i] + state[1] as f64 * t2[i] + te[i];
    }
    let acc = with_pool(workers, || {
        (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = StreamRng::from_label(seed, &[SALT_THIRD, r as u64]);
                let next = step_from(model, state, &mut rng, &SimOptions::default());
                let m = one_step_difference(model, state, next);
                let ms = [m.0, m.1];
                let mut prods = [0.0; 8];
                let mut prods_sq = [0.0; 8];
                for i in 0..2 {
                    for j in 0..2 {
                        for k in 0..2 {
                            let p = ms[i] * ms[j] * ms[k];
                            prods[4 * i + 2 * j + k] = p;
                            prods_sq[4 * i + 2 * j + k] = p * p;
                        }
                    }
                }
                (prods, prods_sq)
            })
            .reduce(
                || ([0.0; 8], [0.0; 8]),
                |mut a, b| {
                    for i in 0..8 {
                        a.0[i] += b.0[i];
                        a.1[i] += b.1[i];
                    }
                    a
                },
            )
    });
    let nf = reps as f64;
    let mut empirical = [0.0; 8];
    let mut max_z = 0.0_f64;
    for i in 0..8 {
        empirical[i] = acc.0[i] / nf;
        let var = (acc.1[i] / nf - empirical[i] * empirical[i]).max(0.0);
        let se = (var / nf).sqrt();
        let diff = empirical[i] - target[i];
        if se > 0.0 {
            max_z = max_z.max((diff / se).abs());
        } else {
            assert!(diff.abs() < 1e-12);
        }
    }
    Ok(ThirdMomentReport {
        empirical,
        target,
        max_z,
    })
}

/// Time-average of `X_{k-1} X_{k-1}^T` against the stationary second-moment
/// series (subcritical models).
#[derive(Debug, Clone, Serialize)]
pub struct SllnReport {
    pub time_average: Mat2,
    pub series: Mat2,
    pub rel_frobenius_error: f64,
}

pub fn sllna_check(model: &GwiModel, n: usize, seed: u64) -> Result<SllnReport> {
    let series = stationary_second_moment(model, 1e-12)?;
    let traj = simulate_gwi(model, n, seed)?;
    let mut avg = Mat2::ZERO;
    for k in 1..=n {
        let x = traj.state(k - 1);
        avg = avg + x.outer(x);
    }
    avg = avg * (1.0 / n as f64);
    let frob = |m: &Mat2| -> f64 { m.0.iter().flatten().map(|x| x * x).sum::<f64>().sqrt() };
    let diff = avg - series;
    Ok(SllnReport {
        time_average: avg,
        series,
        rel_frobenius_error: frob(&diff) / frob(&series),
    })
}

/// Model diagnostics for the `validate-laws` command.
#[derive(Debug, Clone, Serialize)]
pub struct ModelDiagnostics {
    pub mean_matrix: Option<Mat2>,
    pub rho: Option<f64>,
    pub criticality: Option<CriticalityClass>,
    pub exact_critical_identity: Option<bool>,
    pub mixed_variance: Option<Mat2>,
    pub tilde_variance: Option<Mat2>,
    pub degeneracy: Option<crate::laws::DegeneracyIndicators>,
    /// True in the fully degenerate regime where no unique CLS estimator exists.
    pub no_unique_cls_estimator: bool,
}

pub fn model_diagnostics(model: &GwiModel) -> ModelDiagnostics {
    let m = mean_matrix(model).ok();
    let crit = m.as_ref().map(|m| classify(m, CRITICALITY_TOL));
    let degeneracy = degeneracy_indicators(model).ok();
    ModelDiagnostics {
        mean_matrix: m.as_ref().map(|m| m.to_mat2()),
        rho: m.as_ref().map(spectral_radius),
        criticality: crit.map(|c| c.class),
        exact_critical_identity: crit.map(|c| c.exact_critical_identity),
        mixed_variance: mixed_variance(model).ok(),
        tilde_variance: tilde_variance(model).ok(),
        no_unique_cls_estimator: degeneracy.map(|d| d.full_degenerate).unwrap_or(false),
        degeneracy,
    }
}
