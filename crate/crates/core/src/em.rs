//! The EM iteration for covariance estimation from snapshots with missing
//! entries: conditional moments of the complete data given the observations,
//! the observed-data log-likelihood, and the alternation with a constrained
//! M-step until the likelihood or parameter change falls below tolerance.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{C64, CMatrix, CVector, HermitianMatrix};
use crate::mstep::{apply_mstep, ConstraintSet};
use crate::scene::{sample_covariance, zero_filled_sample_covariance, SelectionPattern, SnapshotSet};

/// Condition-number cap on observed blocks before a snapshot is declared
/// numerically singular.
pub const OBSERVED_BLOCK_CONDITION_CAP: f64 = 1e12;

/// Relative slack allowed on the monotone likelihood invariant.
pub const MONOTONICITY_SLACK: f64 = 1e-9;

/// Starting point for the EM iteration.
#[derive(Debug, Clone)]
pub enum InitStrategy {
    /// Project the zero-filled sample covariance into the constraint set.
    /// With a noise-floor constraint this is exactly the eigenvalue-clamping
    /// projection of `S_y`.
    FmlOfZeroFilled,
    /// User-supplied positive definite starting matrix, used as is.
    Explicit(HermitianMatrix),
    /// Sample covariance of `count` auxiliary standard complex Gaussian
    /// vectors, projected into the constraint set.
    ExtraSnapshots { count: usize, seed: u64 },
}

/// EM controls: exit tolerances, iteration cap, and initialization.
#[derive(Debug, Clone)]
pub struct EmConfig {
    /// Exit when the likelihood change is at most this.
    pub eps_likelihood: f64,
    /// Exit when the Frobenius distance between successive estimates is at
    /// most this.
    pub eps_param: f64,
    pub max_iters: usize,
    pub init: InitStrategy,
    /// Record every iterate (for convergence studies).
    pub record_iterates: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            eps_likelihood: 1e-7,
            eps_param: 1e-7,
            max_iters: 10_000,
            init: InitStrategy::FmlOfZeroFilled,
            record_iterates: false,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_likelihood > 0.0) {
            return Err(Error::invalid("eps_likelihood", "must be positive"));
        }
        if !(self.eps_param > 0.0) {
            return Err(Error::invalid("eps_param", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be at least 1"));
        }
        Ok(())
    }

    pub fn with_tolerances(mut self, eps: f64) -> Self {
        self.eps_likelihood = eps;
        self.eps_param = eps;
        self
    }
}

/// Conditional moments of one complete snapshot given its observed entries.
#[derive(Debug, Clone)]
pub struct ConditionalMoments {
    /// Conditional mean of the missing entries (ordered by missing index).
    pub mu: CVector,
    /// Conditional covariance of the missing entries.
    pub gamma: CMatrix,
    /// Conditional second moment of the complete snapshot,
    /// `E[r r^H | y]`, of full dimension.
    pub c: HermitianMatrix,
}

/// Why the EM loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    LikelihoodTol,
    ParamTol,
    MaxIters,
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::LikelihoodTol => "likelihood_tol",
            Termination::ParamTol => "param_tol",
            Termination::MaxIters => "max_iters",
        }
    }
}

/// Outcome of a full EM run.
#[derive(Debug, Clone)]
pub struct EmResult {
    pub estimate: HermitianMatrix,
    /// Observed-data log-likelihood after each iteration, starting with the
    /// initial point.
    pub likelihood_trace: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    /// Estimates after each iteration, populated when
    /// [`EmConfig::record_iterates`] is set (initial point included).
    pub iterates: Vec<HermitianMatrix>,
}

// Snapshots grouped by identical selection pattern, so per-pattern
// factorizations are shared. Group order and in-group order are fixed, which
// keeps reductions deterministic.
struct PatternGroups<'a> {
    data: &'a SnapshotSet,
    groups: Vec<(SelectionPattern, Vec<usize>)>,
}

impl<'a> PatternGroups<'a> {
    fn new(data: &'a SnapshotSet) -> Self {
        let mut map: BTreeMap<&[usize], Vec<usize>> = BTreeMap::new();
        for (i, snap) in data.snapshots().iter().enumerate() {
            map.entry(snap.pattern.observed()).or_default().push(i);
        }
        let groups = map
            .into_iter()
            .map(|(obs, idx)| {
                (
                    SelectionPattern::new(obs.to_vec(), data.n()).expect("pattern was validated"),
                    idx,
                )
            })
            .collect();
        Self { data, groups }
    }
}

// Per-pattern factorization of the current covariance: Cholesky of the
// observed block, its log-determinant, and (when entries are missing) the
// cross solve and conditional covariance of the missing block.
struct GroupFactor {
    chol: Cholesky<C64, Dyn>,
    ln_det: f64,
    // W = M_oo^{-1} M_om, p x m.
    cross_solve: Option<CMatrix>,
    // G = M_mm - M_mo M_oo^{-1} M_om, m x m.
    cond_cov: Option<CMatrix>,
}

fn gather_block(m: &CMatrix, rows: &[usize], cols: &[usize]) -> CMatrix {
    CMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

// Cheap deterministic smallest-eigenvalue estimate from a Cholesky factor:
// a few inverse-power steps from a fixed generic start vector.
fn min_eig_estimate(chol: &Cholesky<C64, Dyn>, p: usize) -> f64 {
    let mut v = CVector::from_fn(p, |k, _| {
        C64::new(1.0 + (k as f64).sin() * 0.7, (2.0 * k as f64).cos() * 0.4)
    });
    let mut ratio = 0.0;
    for _ in 0..4 {
        let prev = v.norm();
        v = chol.solve(&v);
        let next = v.norm();
        if !(next > 0.0 && next.is_finite()) {
            return 0.0;
        }
        ratio = prev / next;
        v.unscale_mut(next);
    }
    ratio
}

fn factor_group(
    m: &HermitianMatrix,
    pattern: &SelectionPattern,
    first_snapshot: usize,
    with_moments: bool,
) -> Result<GroupFactor> {
    let obs = pattern.observed();
    let p = obs.len();
    let m_oo = gather_block(m.as_matrix(), obs, obs);
    let trace: f64 = (0..p).map(|k| m_oo[(k, k)].re).sum();
    let chol = crate::linalg::try_cholesky(&m_oo).ok_or_else(|| Error::SingularObservedBlock {
        snapshot: first_snapshot,
        detail: "Cholesky factorization failed".to_string(),
    })?;
    let min_eig = min_eig_estimate(&chol, p);
    if !(min_eig > 0.0) || trace / min_eig > OBSERVED_BLOCK_CONDITION_CAP {
        return Err(Error::SingularObservedBlock {
            snapshot: first_snapshot,
            detail: format!(
                "estimated condition number {:.3e} exceeds cap {OBSERVED_BLOCK_CONDITION_CAP:.1e}",
                trace / min_eig.max(f64::MIN_POSITIVE)
            ),
        });
    }
    let ln_det = (0..p).map(|k| 2.0 * chol.l_dirty()[(k, k)].re.ln()).sum();

    let (cross_solve, cond_cov) = if with_moments && !pattern.is_full() {
        let mis = pattern.missing();
        let m_om = gather_block(m.as_matrix(), obs, &mis);
        let m_mm = gather_block(m.as_matrix(), &mis, &mis);
        let w = chol.solve(&m_om);
        let g = &m_mm - m_om.adjoint() * &w;
        (Some(w), Some(g))
    } else {
        (None, None)
    };

    Ok(GroupFactor {
        chol,
        ln_det,
        cross_solve,
        cond_cov,
    })
}

/// Observed-data log-likelihood of `m` for the snapshot set:
/// `-sum_i p_i ln(pi) - sum_i [ln det(M_oo,i) + y_i^H M_oo,i^{-1} y_i]`.
pub fn observed_log_likelihood(m: &HermitianMatrix, data: &SnapshotSet) -> Result<f64> {
    if data.n() != m.dim() {
        return Err(Error::dim(format!(
            "covariance is {}x{}, snapshots are over {} elements",
            m.dim(),
            m.dim(),
            data.n()
        )));
    }
    let groups = PatternGroups::new(data);
    likelihood_with_groups(m, &groups)
}

fn likelihood_with_groups(m: &HermitianMatrix, groups: &PatternGroups) -> Result<f64> {
    let mut total = 0.0f64;
    let ln_pi = std::f64::consts::PI.ln();
    for (pattern, indices) in &groups.groups {
        let factor = factor_group(m, pattern, indices[0], false)?;
        let p = pattern.n_observed() as f64;
        for &i in indices {
            let y = &groups.data.snapshots()[i].y;
            let solved = factor.chol.solve(y);
            let quad = y.dotc(&solved).re;
            total += -p * ln_pi - factor.ln_det - quad;
        }
    }
    Ok(total)
}

/// Conditional moments of one snapshot under covariance `m`: the mean and
/// covariance of the missing block given the observations, and the full
/// conditional second-moment matrix.
pub fn conditional_moments(
    m: &HermitianMatrix,
    pattern: &SelectionPattern,
    y: &CVector,
) -> Result<ConditionalMoments> {
    if pattern.n() != m.dim() {
        return Err(Error::dim(format!(
            "pattern is over {} elements, covariance is {}x{}",
            pattern.n(),
            m.dim(),
            m.dim()
        )));
    }
    if y.len() != pattern.n_observed() {
        return Err(Error::dim(format!(
            "{} observed values for {} observed indices",
            y.len(),
            pattern.n_observed()
        )));
    }
    let factor = factor_group(m, pattern, 0, true)?;
    let n = m.dim();
    let obs = pattern.observed();

    if pattern.is_full() {
        let c = HermitianMatrix::enforce(y * y.adjoint());
        return Ok(ConditionalMoments {
            mu: CVector::zeros(0),
            gamma: CMatrix::zeros(0, 0),
            c,
        });
    }

    let mis = pattern.missing();
    let w = factor.cross_solve.as_ref().expect("moments requested");
    let g = factor.cond_cov.as_ref().expect("moments requested");
    let mu = w.ad_mul(y);

    let mut c = CMatrix::zeros(n, n);
    for (a, &ia) in obs.iter().enumerate() {
        for (b, &ib) in obs.iter().enumerate() {
            c[(ia, ib)] = y[a] * y[b].conj();
        }
        for (b, &ib) in mis.iter().enumerate() {
            c[(ia, ib)] = y[a] * mu[b].conj();
            c[(ib, ia)] = mu[b] * y[a].conj();
        }
    }
    for (a, &ia) in mis.iter().enumerate() {
        for (b, &ib) in mis.iter().enumerate() {
            c[(ia, ib)] = g[(a, b)] + mu[a] * mu[b].conj();
        }
    }

    Ok(ConditionalMoments {
        mu,
        gamma: g.clone(),
        c: HermitianMatrix::enforce(c),
    })
}

/// E-step: the average `(1/K) sum_i E[r_i r_i^H | y_i]` of conditional
/// correlation matrices under the previous estimate.
pub fn e_step(m_prev: &HermitianMatrix, data: &SnapshotSet) -> Result<HermitianMatrix> {
    if data.is_empty() {
        return Err(Error::invalid("data", "need at least one snapshot"));
    }
    let groups = PatternGroups::new(data);
    e_step_with_groups(m_prev, &groups)
}

fn e_step_with_groups(m_prev: &HermitianMatrix, groups: &PatternGroups) -> Result<HermitianMatrix> {
    let n = groups.data.n();
    let k = groups.data.k();
    let one = C64::new(1.0, 0.0);
    let mut acc = CMatrix::zeros(n, n);
    let mut filled = CVector::zeros(n);
    for (pattern, indices) in &groups.groups {
        let factor = factor_group(m_prev, pattern, indices[0], true)?;
        let obs = pattern.observed();
        if pattern.is_full() {
            for &i in indices {
                let y = &groups.data.snapshots()[i].y;
                acc.gerc(one, y, y, one);
            }
            continue;
        }
        let mis = pattern.missing();
        let w = factor.cross_solve.as_ref().expect("moments requested");
        let g = factor.cond_cov.as_ref().expect("moments requested");
        let count = C64::new(indices.len() as f64, 0.0);
        for (a, &ia) in mis.iter().enumerate() {
            for (b, &ib) in mis.iter().enumerate() {
                acc[(ia, ib)] += count * g[(a, b)];
            }
        }
        for &i in indices {
            let y = &groups.data.snapshots()[i].y;
            let mu = w.ad_mul(y);
            filled.fill(C64::new(0.0, 0.0));
            for (a, &ia) in obs.iter().enumerate() {
                filled[ia] = y[a];
            }
            for (a, &ia) in mis.iter().enumerate() {
                filled[ia] = mu[a];
            }
            acc.gerc(one, &filled, &filled, one);
        }
    }
    Ok(HermitianMatrix::enforce(acc.unscale(k as f64)))
}

// Projects a positive semidefinite matrix into the constraint set, lifting
// the spectrum enough to make the result positive definite. With a
// noise-floor constraint this is the plain eigenvalue-clamping projection.
fn project_into(constraint: &ConstraintSet, psd: &HermitianMatrix) -> Result<HermitianMatrix> {
    let floor = match constraint.noise_floor() {
        Some(f) => f,
        None => {
            let lmax = psd.evd().eigenvalues()[0];
            1e-8 * lmax.max(1.0)
        }
    };
    let base = if constraint.is_centro_hermitian() {
        crate::mstep::mstep_centro_hermitian(psd)
    } else {
        psd.clone()
    };
    let evd = base.evd();
    let n = base.dim();
    let spectrum: Vec<f64> = match constraint {
        ConstraintSet::FixedRank { d } | ConstraintSet::FixedRankCentroHermitian { d } => {
            let eigs = evd.eigenvalues();
            let noise = (eigs.iter().skip(*d).sum::<f64>() / (n - d) as f64).max(floor);
            let mut s = vec![noise; n];
            for v in 0..*d {
                s[v] = eigs[v].max(noise);
            }
            s
        }
        _ => evd.eigenvalues().iter().map(|&l| l.max(floor)).collect(),
    };
    Ok(evd.reconstruct_with(&spectrum))
}

fn initial_estimate(
    data: &SnapshotSet,
    constraint: &ConstraintSet,
    init: &InitStrategy,
) -> Result<HermitianMatrix> {
    match init {
        InitStrategy::FmlOfZeroFilled => {
            let sy = zero_filled_sample_covariance(data)?;
            project_into(constraint, &sy)
        }
        InitStrategy::Explicit(m) => {
            if m.dim() != data.n() {
                return Err(Error::dim(format!(
                    "initialization is {}x{}, data are over {} elements",
                    m.dim(),
                    m.dim(),
                    data.n()
                )));
            }
            if !m.is_positive_definite() {
                return Err(Error::NotPositiveDefinite {
                    detail: "explicit initialization must be positive definite".to_string(),
                });
            }
            Ok(m.clone())
        }
        InitStrategy::ExtraSnapshots { count, seed } => {
            if *count == 0 {
                return Err(Error::invalid("count", "need at least one auxiliary snapshot"));
            }
            let identity = HermitianMatrix::identity(data.n());
            let aux = crate::scene::sample_snapshots(
                &identity,
                *count,
                &crate::scene::MissingnessModel::none(),
                *seed,
            )?;
            let s = sample_covariance(&aux.complete)?;
            project_into(constraint, &s)
        }
    }
}

/// Runs the EM iteration: E-step, constrained M-step, likelihood update,
/// until the likelihood change is at most `eps_likelihood` or the Frobenius
/// distance between successive estimates is at most `eps_param`.
pub fn run_em(
    data: &SnapshotSet,
    constraint: &ConstraintSet,
    config: &EmConfig,
) -> Result<EmResult> {
    config.validate()?;
    constraint.validate(data.n())?;
    if data.is_empty() {
        return Err(Error::invalid("data", "need at least one snapshot"));
    }

    let groups = PatternGroups::new(data);
    let mut current = initial_estimate(data, constraint, &config.init)?;
    let mut trace = Vec::with_capacity(32);
    let mut iterates = Vec::new();
    trace.push(likelihood_with_groups(&current, &groups)?);
    if config.record_iterates {
        iterates.push(current.clone());
    }

    let mut termination = Termination::MaxIters;
    let mut iterations = config.max_iters;
    for h in 1..=config.max_iters {
        let sigma = e_step_with_groups(&current, &groups)?;
        let next = apply_mstep(constraint, &sigma)?;
        let p_next = likelihood_with_groups(&next, &groups)?;
        let p_prev = *trace.last().expect("trace nonempty");
        if p_next < p_prev - MONOTONICITY_SLACK * p_prev.abs() {
            return Err(Error::InvariantViolation {
                message: format!(
                    "likelihood decreased at iteration {h}: {p_prev} -> {p_next}"
                ),
            });
        }
        let param_delta = next.frobenius_distance(&current);
        trace.push(p_next);
        if config.record_iterates {
            iterates.push(next.clone());
        }
        current = next;
        if (p_next - p_prev).abs() <= config.eps_likelihood {
            termination = Termination::LikelihoodTol;
            iterations = h;
            break;
        }
        if param_delta <= config.eps_param {
            termination = Termination::ParamTol;
            iterations = h;
            break;
        }
    }

    Ok(EmResult {
        estimate: current,
        likelihood_trace: trace,
        iterations,
        termination,
        iterates,
    })
}
