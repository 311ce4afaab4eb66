//! Rate-of-convergence analysis for the EM iteration: observed information,
//! expected complete-data information, the rate matrix
//! `I - F_obs^{1/2} F_EM^{-1} F_obs^{1/2}` whose spectral radius governs the
//! linear convergence factor, and a cyclic-pattern rank-one case study.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::em::{e_step, run_em, EmConfig, InitStrategy};
use crate::error::{Error, Result};
use crate::linalg::{solve_hpd, spectral_radius, C64, CMatrix, CVector, HermitianMatrix};
use crate::mstep::ConstraintSet;
use crate::scene::{sample_snapshots, MissingnessModel, SelectionPattern, SnapshotSet};
use crate::seeding::derive_seed;

type MapFn = dyn Fn(&[f64]) -> HermitianMatrix + Sync + Send;
type DerivFn = dyn Fn(&[f64], usize) -> CMatrix + Sync + Send;
type SecondDerivFn = dyn Fn(&[f64], usize, usize) -> CMatrix + Sync + Send;

/// A smooth covariance model `theta -> M(theta)` with its first and second
/// derivative matrices, analytic where available and finite-difference
/// otherwise.
pub struct Parameterization {
    dim: usize,
    map: Box<MapFn>,
    first: Box<DerivFn>,
    second: Box<SecondDerivFn>,
}

impl Parameterization {
    /// Builds from the covariance map alone; derivatives fall back to
    /// central finite differences with step `1e-5 (1 + |theta_l|)`.
    pub fn from_map<F>(dim: usize, map: F) -> Self
    where
        F: Fn(&[f64]) -> HermitianMatrix + Sync + Send + Clone + 'static,
    {
        let map_first = map.clone();
        let map_second = map.clone();
        let first = move |theta: &[f64], l: usize| -> CMatrix {
            let h = 1e-5 * (1.0 + theta[l].abs());
            let mut plus = theta.to_vec();
            let mut minus = theta.to_vec();
            plus[l] += h;
            minus[l] -= h;
            (map_first(&plus).into_matrix() - map_first(&minus).into_matrix()).unscale(2.0 * h)
        };
        let second = move |theta: &[f64], l: usize, m: usize| -> CMatrix {
            let hl = 1e-5 * (1.0 + theta[l].abs());
            let hm = 1e-5 * (1.0 + theta[m].abs());
            let mut pp = theta.to_vec();
            let mut pm = theta.to_vec();
            let mut mp = theta.to_vec();
            let mut mm = theta.to_vec();
            pp[l] += hl;
            pp[m] += hm;
            pm[l] += hl;
            pm[m] -= hm;
            mp[l] -= hl;
            mp[m] += hm;
            mm[l] -= hl;
            mm[m] -= hm;
            (map_second(&pp).into_matrix() - map_second(&pm).into_matrix()
                - map_second(&mp).into_matrix()
                + map_second(&mm).into_matrix())
            .unscale(4.0 * hl * hm)
        };
        Self {
            dim,
            map: Box::new(map),
            first: Box::new(first),
            second: Box::new(second),
        }
    }

    /// Builds with analytic derivative matrices.
    pub fn with_derivatives<F, G, H>(dim: usize, map: F, first: G, second: H) -> Self
    where
        F: Fn(&[f64]) -> HermitianMatrix + Sync + Send + 'static,
        G: Fn(&[f64], usize) -> CMatrix + Sync + Send + 'static,
        H: Fn(&[f64], usize, usize) -> CMatrix + Sync + Send + 'static,
    {
        Self {
            dim,
            map: Box::new(map),
            first: Box::new(first),
            second: Box::new(second),
        }
    }

    /// Two-parameter model `M(theta) = theta_0 I + theta_1 v v^H` with a
    /// fixed direction `v`: white noise power plus a rank-one signal along a
    /// known steering direction. Derivatives are exact and constant.
    pub fn noise_plus_rank_one(v: CVector) -> Self {
        let n = v.len();
        let outer = &v * v.adjoint();
        let outer_first = outer.clone();
        Self::with_derivatives(
            2,
            move |theta: &[f64]| {
                let m = CMatrix::identity(n, n).scale(theta[0]) + outer.scale(theta[1]);
                HermitianMatrix::enforce(m)
            },
            move |_, l| {
                if l == 0 {
                    CMatrix::identity(n, n)
                } else {
                    outer_first.clone()
                }
            },
            move |_, _, _| CMatrix::zeros(n, n),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn covariance(&self, theta: &[f64]) -> HermitianMatrix {
        (self.map)(theta)
    }

    pub fn first_derivative(&self, theta: &[f64], l: usize) -> CMatrix {
        (self.first)(theta, l)
    }

    pub fn second_derivative(&self, theta: &[f64], l: usize, m: usize) -> CMatrix {
        (self.second)(theta, l, m)
    }
}

/// Information matrices and the rate matrix of one converged instance.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub f_obs: DMatrix<f64>,
    pub f_em: DMatrix<f64>,
    pub rate_matrix: DMatrix<f64>,
    pub spectral_radius: f64,
}

impl ConvergenceReport {
    /// The rate is meaningful when `F_EM` came out symmetric and the radius
    /// landed in `[0, 1]` (up to roundoff).
    pub fn is_well_posed(&self) -> bool {
        let asym = (&self.f_em - self.f_em.transpose()).norm();
        asym <= 1e-8 * self.f_em.norm().max(1.0)
            && self.spectral_radius >= 0.0
            && self.spectral_radius <= 1.0 + 1e-8
    }
}

fn gather(m: &CMatrix, idx: &[usize]) -> CMatrix {
    CMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

/// Negative Hessian of the observed-data log-likelihood at `theta`,
/// assembled from the per-snapshot restricted covariance and its restricted
/// derivative matrices.
pub fn observed_information(
    param: &Parameterization,
    theta: &[f64],
    data: &SnapshotSet,
) -> Result<DMatrix<f64>> {
    let v = param.dim();
    let m = param.covariance(theta);
    if data.n() != m.dim() {
        return Err(Error::dim(format!(
            "model covariance is {}x{}, data are over {} elements",
            m.dim(),
            m.dim(),
            data.n()
        )));
    }
    let first: Vec<CMatrix> = (0..v).map(|l| param.first_derivative(theta, l)).collect();
    let second: Vec<Vec<CMatrix>> = (0..v)
        .map(|l| {
            (0..v)
                .map(|mm| param.second_derivative(theta, l, mm))
                .collect()
        })
        .collect();

    let mut f = DMatrix::<f64>::zeros(v, v);
    // Group snapshots by pattern so restricted solves are shared.
    let mut by_pattern: std::collections::BTreeMap<&[usize], Vec<usize>> = Default::default();
    for (i, snap) in data.snapshots().iter().enumerate() {
        by_pattern.entry(snap.pattern.observed()).or_default().push(i);
    }

    for (obs, indices) in by_pattern {
        let m_i = HermitianMatrix::new(gather(m.as_matrix(), obs))
            .map_err(|_| Error::SingularObservedBlock {
                snapshot: indices[0],
                detail: "restricted block not Hermitian".to_string(),
            })?;
        let chol =
            crate::linalg::try_cholesky(m_i.as_matrix()).ok_or(Error::SingularObservedBlock {
                snapshot: indices[0],
                detail: "restricted block is singular".to_string(),
            })?;
        let d1: Vec<CMatrix> = first.iter().map(|d| gather(d, obs)).collect();
        let d2: Vec<Vec<CMatrix>> = second
            .iter()
            .map(|row| row.iter().map(|d| gather(d, obs)).collect())
            .collect();
        // P_l = M_i^{-1} dM_i/dtheta_l and the trace table tr(P_l P_m).
        let p_mats: Vec<CMatrix> = d1.iter().map(|d| chol.solve(d)).collect();
        let mut tr_pp = DMatrix::<f64>::zeros(v, v);
        let mut tr_q = DMatrix::<f64>::zeros(v, v);
        for l in 0..v {
            for mm in 0..v {
                tr_pp[(l, mm)] = (&p_mats[l] * &p_mats[mm]).trace().re;
                tr_q[(l, mm)] = chol.solve(&d2[l][mm]).trace().re;
            }
        }
        for &i in &indices {
            let y = &data.snapshots()[i].y;
            let x = chol.solve(y);
            let w: Vec<CVector> = d1.iter().map(|d| d * &x).collect();
            let u: Vec<CVector> = w.iter().map(|wl| chol.solve(wl)).collect();
            for l in 0..v {
                for mm in 0..v {
                    let quad_second = (x.dotc(&(&d2[l][mm] * &x))).re;
                    let cross = (w[mm].dotc(&u[l]) + w[l].dotc(&u[mm])).re;
                    f[(l, mm)] += -tr_pp[(l, mm)] + tr_q[(l, mm)] - quad_second + cross;
                }
            }
        }
    }
    Ok(f)
}

/// Expected complete-data information at `theta`: the complete-data Hessian
/// expression with the sample covariance replaced by the E-step average of
/// conditional correlation matrices.
pub fn expected_complete_information(
    param: &Parameterization,
    theta: &[f64],
    data: &SnapshotSet,
) -> Result<DMatrix<f64>> {
    let v = param.dim();
    let m = param.covariance(theta);
    let k = data.k() as f64;
    let sigma_star = e_step(&m, data)?;
    let b = solve_hpd(&m, sigma_star.as_matrix())?;

    let a_mats: Vec<CMatrix> = (0..v)
        .map(|l| solve_hpd(&m, &param.first_derivative(theta, l)))
        .collect::<Result<_>>()?;
    let mut f = DMatrix::<f64>::zeros(v, v);
    for l in 0..v {
        for mm in 0..v {
            let c_lm = solve_hpd(&m, &param.second_derivative(theta, l, mm))?;
            let alam = &a_mats[l] * &a_mats[mm];
            let term_const = (-alam.trace() + c_lm.trace()).re;
            let bracket = (&alam - &c_lm + &a_mats[mm] * &a_mats[l]) * &b;
            f[(l, mm)] = k * (term_const + bracket.trace().re);
        }
    }
    Ok(f)
}

/// Builds the rate matrix `I - F_obs^{1/2} F_EM^{-1} F_obs^{1/2}` and its
/// spectral radius. The symmetric square root clips small negative
/// eigenvalues of `F_obs` at zero.
pub fn rate_analysis(
    param: &Parameterization,
    theta: &[f64],
    data: &SnapshotSet,
) -> Result<ConvergenceReport> {
    let f_obs = observed_information(param, theta, data)?;
    let f_em = expected_complete_information(param, theta, data)?;
    let v = param.dim();

    let f_obs_sym = (&f_obs + f_obs.transpose()).unscale(2.0);
    let se_obs = nalgebra::SymmetricEigen::new(f_obs_sym.clone());
    let lmax = se_obs.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let sqrt_vals: Vec<f64> = se_obs
        .eigenvalues
        .iter()
        .map(|&l| if l > 1e-10 * lmax.max(1.0) { l.sqrt() } else { 0.0 })
        .collect();
    let mut s = DMatrix::<f64>::zeros(v, v);
    for (idx, &sv) in sqrt_vals.iter().enumerate() {
        let col = se_obs.eigenvectors.column(idx);
        s += (col * col.transpose()).scale(sv);
    }

    let f_em_sym = (&f_em + f_em.transpose()).unscale(2.0);
    let se_em = nalgebra::SymmetricEigen::new(f_em_sym);
    let min_em = se_em.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min_em > 0.0) {
        return Err(Error::NotPositiveDefinite {
            detail: format!("expected complete information is singular (min eigenvalue {min_em:.3e})"),
        });
    }
    let mut f_em_inv = DMatrix::<f64>::zeros(v, v);
    for idx in 0..v {
        let col = se_em.eigenvectors.column(idx);
        f_em_inv += (col * col.transpose()).unscale(se_em.eigenvalues[idx]);
    }

    let rate = DMatrix::<f64>::identity(v, v) - &s * f_em_inv * &s;
    let rate_c = CMatrix::from_fn(v, v, |r, c| C64::new(rate[(r, c)], 0.0));
    let rho = spectral_radius(&rate_c)?;
    Ok(ConvergenceReport {
        f_obs,
        f_em,
        rate_matrix: rate,
        spectral_radius: rho,
    })
}

/// Per-snapshot-count summary of the cyclic rank-one study.
#[derive(Debug, Clone)]
pub struct StudySummary {
    pub k: usize,
    pub trials: usize,
    /// Average spectral radius of the rate matrix across trials.
    pub avg_rho: f64,
    /// Average EM iterations to the working tolerance.
    pub avg_iterations: f64,
    /// Average distance from the working-tolerance estimate to the
    /// tight-tolerance limit.
    pub avg_final_distance: f64,
    /// Average per-iteration distance to the limit (index = iteration).
    pub error_curve: Vec<f64>,
}

/// Array size of the cyclic rank-one study.
pub const STUDY_DIM: usize = 10;
/// Signal power of the rank-one component.
pub const STUDY_SIGNAL_POWER: f64 = 10.0;

/// The five cyclic selection patterns of the study: each drops one pair of
/// elements, cycling in order across snapshots.
pub fn study_patterns() -> Vec<SelectionPattern> {
    [[0usize, 2], [1, 4], [3, 6], [5, 7], [8, 9]]
        .iter()
        .map(|pair| SelectionPattern::dropping(pair, STUDY_DIM).expect("valid pattern"))
        .collect()
}

/// True covariance of the study: unit noise plus a rank-one signal of power
/// 10 along the first coordinate axis.
pub fn study_covariance() -> HermitianMatrix {
    let mut v = CVector::zeros(STUDY_DIM);
    v[0] = C64::new(1.0, 0.0);
    let m = CMatrix::identity(STUDY_DIM, STUDY_DIM) + (&v * v.adjoint()).scale(STUDY_SIGNAL_POWER);
    HermitianMatrix::enforce(m)
}

/// Runs `trials` independent trials of the cyclic rank-one study at `k`
/// snapshots: rank-one constrained EM at tolerance `1e-7` initialized from
/// `2N` auxiliary snapshots, a tight `1e-12` continuation as the limit
/// point, and the rate analysis at the limit.
pub fn rank_one_cyclic_study(k: usize, trials: usize, seed: u64) -> Result<StudySummary> {
    if k < STUDY_DIM {
        return Err(Error::invalid("k", "need at least N snapshots"));
    }
    if trials == 0 {
        return Err(Error::invalid("trials", "need at least one trial"));
    }
    let m_true = study_covariance();
    let miss = MissingnessModel::cyclic(study_patterns())?;
    let constraint = ConstraintSet::FixedRank { d: 1 };

    struct TrialOut {
        iterations: usize,
        rho: f64,
        final_distance: f64,
        curve: Vec<f64>,
    }

    let outcomes: Vec<Result<TrialOut>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let data_seed = derive_seed(seed, 2 * t as u64);
            let init_seed = derive_seed(seed, 2 * t as u64 + 1);
            let data = sample_snapshots(&m_true, k, &miss, data_seed)?;
            let config = EmConfig {
                init: InitStrategy::ExtraSnapshots {
                    count: 2 * STUDY_DIM,
                    seed: init_seed,
                },
                record_iterates: true,
                ..EmConfig::default()
            };
            let run = run_em(&data.observed, &constraint, &config)?;

            let tight = EmConfig {
                eps_likelihood: 1e-12,
                eps_param: 1e-12,
                max_iters: 100_000,
                init: InitStrategy::Explicit(run.estimate.clone()),
                record_iterates: false,
            };
            let limit = run_em(&data.observed, &constraint, &tight)?.estimate;

            let curve: Vec<f64> = run
                .iterates
                .iter()
                .map(|m| m.frobenius_distance(&limit))
                .collect();
            let final_distance = *curve.last().expect("at least the initial point");

            // Project the limit onto the two-parameter model: noise power
            // from the flat part of the spectrum, signal power from the top.
            let eigs = limit.evd();
            let noise =
                eigs.eigenvalues().iter().skip(1).sum::<f64>() / (STUDY_DIM - 1) as f64;
            let signal = eigs.eigenvalues()[0] - noise;
            let mut v = CVector::zeros(STUDY_DIM);
            v[0] = C64::new(1.0, 0.0);
            let param = Parameterization::noise_plus_rank_one(v);
            let report = rate_analysis(&param, &[noise, signal], &data.observed)?;

            Ok(TrialOut {
                iterations: run.iterations,
                rho: report.spectral_radius,
                final_distance,
                curve,
            })
        })
        .collect();

    let mut iter_sum = 0.0;
    let mut rho_sum = 0.0;
    let mut dist_sum = 0.0;
    let mut curve_sum: Vec<f64> = Vec::new();
    let mut curve_count: Vec<usize> = Vec::new();
    for out in outcomes {
        let out = out?;
        iter_sum += out.iterations as f64;
        rho_sum += out.rho;
        dist_sum += out.final_distance;
        if out.curve.len() > curve_sum.len() {
            curve_sum.resize(out.curve.len(), 0.0);
            curve_count.resize(out.curve.len(), 0);
        }
        for (h, d) in out.curve.iter().enumerate() {
            curve_sum[h] += d;
            curve_count[h] += 1;
        }
    }
    let error_curve = curve_sum
        .iter()
        .zip(&curve_count)
        .map(|(s, c)| s / *c as f64)
        .collect();

    Ok(StudySummary {
        k,
        trials,
        avg_rho: rho_sum / trials as f64,
        avg_iterations: iter_sum / trials as f64,
        avg_final_distance: dist_sum / trials as f64,
        error_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::observed_log_likelihood;
    use crate::scene::Snapshot;
    use crate::testutil::{rand_cvector, rand_hermitian, rand_hpd, test_rng};
    use rand::Rng;

    // Central finite-difference Hessian of a scalar function.
    fn fd_hessian(f: &dyn Fn(&[f64]) -> f64, theta: &[f64]) -> DMatrix<f64> {
        let v = theta.len();
        let mut h = DMatrix::<f64>::zeros(v, v);
        for l in 0..v {
            for m in 0..v {
                let hl = 1e-5 * (1.0 + theta[l].abs());
                let hm = 1e-5 * (1.0 + theta[m].abs());
                let mut pp = theta.to_vec();
                let mut pm = theta.to_vec();
                let mut mp = theta.to_vec();
                let mut mm = theta.to_vec();
                pp[l] += hl;
                pp[m] += hm;
                pm[l] += hl;
                pm[m] -= hm;
                mp[l] -= hl;
                mp[m] += hm;
                mm[l] -= hl;
                mm[m] -= hm;
                h[(l, m)] = (f(&pp) - f(&pm) - f(&mp) + f(&mm)) / (4.0 * hl * hm);
            }
        }
        h
    }

    fn scalar_set(y: C64) -> SnapshotSet {
        SnapshotSet::new(
            1,
            vec![Snapshot {
                pattern: SelectionPattern::full(1),
                y: CVector::from_vec(vec![y]),
            }],
        )
        .unwrap()
    }

    #[test]
    fn observed_information_scalar_model() {
        // One-parameter scalar variance model: F_obs = (2|y|^2 - m) / m^3.
        let param = Parameterization::with_derivatives(
            1,
            |t: &[f64]| HermitianMatrix::from_real_diagonal(&[t[0]]),
            |_, _| CMatrix::identity(1, 1),
            |_, _, _| CMatrix::zeros(1, 1),
        );
        let y = C64::new(0.8, -0.4);
        let data = scalar_set(y);
        for m in [0.5, 1.0, 2.5] {
            let f = observed_information(&param, &[m], &data).unwrap();
            let want = (2.0 * y.norm_sqr() - m) / (m * m * m);
            assert!((f[(0, 0)] - want).abs() < 1e-10 * want.abs().max(1.0));
        }
        // At the ML point m = |y|^2 the information is 1/m^2.
        let m_hat = y.norm_sqr();
        let f = observed_information(&param, &[m_hat], &data).unwrap();
        assert!((f[(0, 0)] - 1.0 / (m_hat * m_hat)).abs() < 1e-10);
    }

    #[test]
    fn observed_information_empty_data_is_zero() {
        let param = Parameterization::noise_plus_rank_one(CVector::from_vec(vec![
            C64::new(1.0, 0.0),
            C64::new(0.0, 0.0),
        ]));
        let data = SnapshotSet::new(2, vec![]).unwrap();
        let f = observed_information(&param, &[1.0, 2.0], &data).unwrap();
        assert_eq!(f.norm(), 0.0);
    }

    // Random linear Hermitian family with analytic derivatives; the Hessian
    // of the observed log-likelihood is matched by finite differences.
    #[test]
    fn observed_information_matches_fd_hessian() {
        let mut rng = test_rng(60);
        for trial in 0..5 {
            let n = rng.gen_range(2..5);
            let v = rng.gen_range(1..4usize);
            let base = rand_hpd(&mut rng, n);
            let dirs: Vec<CMatrix> = (0..v)
                .map(|_| rand_hermitian(&mut rng, n).into_matrix().unscale(4.0))
                .collect();
            let base_c = base.clone();
            let dirs_c = dirs.clone();
            let param = Parameterization::with_derivatives(
                v,
                move |t: &[f64]| {
                    let mut m = base_c.as_matrix().clone();
                    for (l, d) in dirs_c.iter().enumerate() {
                        m += d.scale(t[l]);
                    }
                    HermitianMatrix::enforce(m)
                },
                {
                    let dirs = dirs.clone();
                    move |_: &[f64], l: usize| dirs[l].clone()
                },
                move |_: &[f64], _: usize, _: usize| CMatrix::zeros(n, n),
            );

            let m_true = rand_hpd(&mut rng, n);
            let miss = MissingnessModel::bernoulli(0.3, 100 + trial).unwrap();
            let data = sample_snapshots(&m_true, 6, &miss, 200 + trial).unwrap();
            let theta = vec![0.0; v];

            let f = observed_information(&param, &theta, &data.observed).unwrap();
            let ll = |t: &[f64]| {
                observed_log_likelihood(&param.covariance(t), &data.observed).unwrap()
            };
            let hess = fd_hessian(&ll, &theta);
            let rel = (&f + &hess).norm() / hess.norm().max(1.0);
            assert!(rel < 1e-4, "trial {trial}: relative disagreement {rel}");
        }
    }

    #[test]
    fn expected_information_equals_observed_without_missingness() {
        let mut rng = test_rng(61);
        let n = 3;
        let mut v = rand_cvector(&mut rng, n);
        v.unscale_mut(v.norm());
        let param = Parameterization::noise_plus_rank_one(v);
        let theta = [1.3, 2.0];
        let m_true = param.covariance(&theta);
        let data = sample_snapshots(&m_true, 8, &MissingnessModel::none(), 7).unwrap();
        let f_obs = observed_information(&param, &theta, &data.observed).unwrap();
        let f_em = expected_complete_information(&param, &theta, &data.observed).unwrap();
        assert!((&f_obs - &f_em).norm() < 1e-8 * f_obs.norm());
    }

    #[test]
    fn expected_information_is_linear_in_snapshot_count() {
        let mut rng = test_rng(62);
        let n = 3;
        let mut v = rand_cvector(&mut rng, n);
        v.unscale_mut(v.norm());
        let param = Parameterization::noise_plus_rank_one(v);
        let theta = [1.0, 1.5];
        let m_true = param.covariance(&theta);
        let miss = MissingnessModel::bernoulli(0.3, 5).unwrap();
        let data = sample_snapshots(&m_true, 6, &miss, 11).unwrap();

        let doubled = SnapshotSet::new(
            n,
            data.observed
                .snapshots()
                .iter()
                .chain(data.observed.snapshots())
                .cloned()
                .collect(),
        )
        .unwrap();
        let f1 = expected_complete_information(&param, &theta, &data.observed).unwrap();
        let f2 = expected_complete_information(&param, &theta, &doubled).unwrap();
        assert!((&f2 - &f1.scale(2.0)).norm() < 1e-9 * f2.norm());
    }

    // Monte Carlo oracle: draw conditional completions, evaluate the
    // complete-data likelihood Hessian by finite differences, average.
    #[test]
    fn expected_information_matches_sampling_oracle() {
        use rand_distr::StandardNormal;
        let n = 3;
        let mut v = CVector::zeros(n);
        v[0] = C64::new(1.0, 0.0);
        let param = Parameterization::noise_plus_rank_one(v);
        let theta = [1.0, 2.0];
        let m = param.covariance(&theta);
        let miss = MissingnessModel::bernoulli(0.4, 9).unwrap();
        let data = sample_snapshots(&m, 4, &miss, 13).unwrap();

        let f_em = expected_complete_information(&param, &theta, &data.observed).unwrap();

        let complete_ll = |t: &[f64], snapshots: &[CVector]| -> f64 {
            let mm = param.covariance(t);
            let s = crate::scene::sample_covariance(snapshots).unwrap();
            let k = snapshots.len() as f64;
            let evd = mm.evd();
            let ln_det: f64 = evd.eigenvalues().iter().map(|l| l.ln()).sum();
            let inv = solve_hpd(&mm, s.as_matrix()).unwrap();
            let tr: f64 = (0..n).map(|i| inv[(i, i)].re).sum();
            -k * (n as f64 * std::f64::consts::PI.ln() + ln_det + tr)
        };

        let mut rng = test_rng(63);
        let samples = 400;
        let mut sum = DMatrix::<f64>::zeros(2, 2);
        let mut sum_sq = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..samples {
            // Draw completions from the conditional law of each snapshot.
            let completions: Vec<CVector> = data
                .observed
                .snapshots()
                .iter()
                .map(|snap| {
                    let cm =
                        crate::em::conditional_moments(&m, &snap.pattern, &snap.y).unwrap();
                    let mis = snap.pattern.missing();
                    let mut r = CVector::zeros(n);
                    for (a, &ia) in snap.pattern.observed().iter().enumerate() {
                        r[ia] = snap.y[a];
                    }
                    if !mis.is_empty() {
                        let g = HermitianMatrix::enforce(cm.gamma.clone());
                        let chol = crate::linalg::try_cholesky(g.as_matrix()).unwrap();
                        let z = CVector::from_fn(mis.len(), |_, _| {
                            let re: f64 = rng.sample(StandardNormal);
                            let im: f64 = rng.sample(StandardNormal);
                            C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
                        });
                        let noise = chol.l() * z;
                        for (a, &ia) in mis.iter().enumerate() {
                            r[ia] = cm.mu[a] + noise[a];
                        }
                    }
                    r
                })
                .collect();
            let ll = |t: &[f64]| complete_ll(t, &completions);
            let h = fd_hessian(&ll, &theta);
            for l in 0..2 {
                for mm2 in 0..2 {
                    sum[(l, mm2)] += -h[(l, mm2)];
                    sum_sq[(l, mm2)] += h[(l, mm2)] * h[(l, mm2)];
                }
            }
        }
        for l in 0..2 {
            for mm2 in 0..2 {
                let mean = sum[(l, mm2)] / samples as f64;
                let var = (sum_sq[(l, mm2)] / samples as f64 - mean * mean).max(0.0);
                let se = (var / samples as f64).sqrt();
                let diff = (f_em[(l, mm2)] - mean).abs();
                assert!(
                    diff <= 3.0 * se + 1e-6 * f_em.norm(),
                    "entry ({l},{mm2}): {} vs MC {mean} (3se {})",
                    f_em[(l, mm2)],
                    3.0 * se
                );
            }
        }
    }

    #[test]
    fn rate_is_zero_without_missingness() {
        let mut rng = test_rng(64);
        let n = 4;
        let mut v = rand_cvector(&mut rng, n);
        v.unscale_mut(v.norm());
        let param = Parameterization::noise_plus_rank_one(v);
        let theta = [1.0, 3.0];
        let m_true = param.covariance(&theta);
        let data = sample_snapshots(&m_true, 12, &MissingnessModel::none(), 3).unwrap();
        let report = rate_analysis(&param, &theta, &data.observed).unwrap();
        assert!(report.rate_matrix.norm() <= 1e-8);
        assert!(report.spectral_radius <= 1e-8);
        assert!(report.is_well_posed());
    }

    #[test]
    fn missing_information_dominance() {
        // F_EM - F_obs is positive semidefinite on converged instances.
        let study = study_covariance();
        let miss = MissingnessModel::cyclic(study_patterns()).unwrap();
        let data = sample_snapshots(&study, 60, &miss, 17).unwrap();
        let constraint = ConstraintSet::FixedRank { d: 1 };
        let config = EmConfig::default().with_tolerances(1e-10);
        let run = run_em(&data.observed, &constraint, &config).unwrap();
        let eigs = run.estimate.evd();
        let noise = eigs.eigenvalues().iter().skip(1).sum::<f64>() / (STUDY_DIM - 1) as f64;
        let signal = eigs.eigenvalues()[0] - noise;
        let mut v = CVector::zeros(STUDY_DIM);
        v[0] = C64::new(1.0, 0.0);
        let param = Parameterization::noise_plus_rank_one(v);
        let f_obs = observed_information(&param, &[noise, signal], &data.observed).unwrap();
        let f_em =
            expected_complete_information(&param, &[noise, signal], &data.observed).unwrap();
        let diff = (&f_em - &f_obs + (&f_em - &f_obs).transpose()).unscale(2.0);
        let se = nalgebra::SymmetricEigen::new(diff);
        let min = se.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-8 * f_em.norm().max(1.0), "min eigenvalue {min}");
    }

    #[test]
    fn empirical_error_ratio_tracks_spectral_radius() {
        let study = study_covariance();
        let miss = MissingnessModel::cyclic(study_patterns()).unwrap();
        let data = sample_snapshots(&study, 100, &miss, 29).unwrap();
        let constraint = ConstraintSet::FixedRank { d: 1 };
        let config = EmConfig {
            record_iterates: true,
            ..EmConfig::default()
        };
        let run = run_em(&data.observed, &constraint, &config).unwrap();
        let tight = EmConfig {
            eps_likelihood: 1e-12,
            eps_param: 1e-12,
            max_iters: 100_000,
            init: InitStrategy::Explicit(run.estimate.clone()),
            record_iterates: false,
        };
        let limit = run_em(&data.observed, &constraint, &tight).unwrap().estimate;

        let eigs = limit.evd();
        let noise = eigs.eigenvalues().iter().skip(1).sum::<f64>() / (STUDY_DIM - 1) as f64;
        let signal = eigs.eigenvalues()[0] - noise;
        let mut v = CVector::zeros(STUDY_DIM);
        v[0] = C64::new(1.0, 0.0);
        let param = Parameterization::noise_plus_rank_one(v);
        let report = rate_analysis(&param, &[noise, signal], &data.observed).unwrap();

        let dists: Vec<f64> = run
            .iterates
            .iter()
            .map(|m| m.frobenius_distance(&limit))
            .collect();
        let mut ratios: Vec<f64> = Vec::new();
        for w in dists.windows(2) {
            if w[0] > 1e-8 && w[0] < 1e-2 && w[1] > 0.0 {
                ratios.push(w[1] / w[0]);
            }
        }
        assert!(!ratios.is_empty(), "no usable tail iterations");
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = ratios[ratios.len() / 2];
        let rho = report.spectral_radius;
        assert!(
            median <= 2.0 * rho && median >= 0.5 * rho,
            "empirical ratio {median} vs spectral radius {rho}"
        );
    }

    #[test]
    fn study_runs_and_terminates() {
        let summary = rank_one_cyclic_study(40, 3, 5).unwrap();
        assert_eq!(summary.k, 40);
        assert_eq!(summary.trials, 3);
        assert!(summary.avg_iterations >= 1.0);
        assert!(summary.avg_rho > 0.0 && summary.avg_rho < 1.0);
        assert!(summary.error_curve.len() >= 2);
    }

    #[test]
    fn study_patterns_cycle_with_period_five() {
        let pats = study_patterns();
        assert_eq!(pats.len(), 5);
        for p in &pats {
            assert_eq!(p.n_observed(), STUDY_DIM - 2);
        }
        let miss = MissingnessModel::cyclic(pats.clone()).unwrap();
        let data = sample_snapshots(&study_covariance(), 12, &miss, 1).unwrap();
        for (i, snap) in data.observed.snapshots().iter().enumerate() {
            assert_eq!(snap.pattern, pats[i % 5]);
        }
    }
}
