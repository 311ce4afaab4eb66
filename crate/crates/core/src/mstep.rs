//! Constrained maximizers of the EM score function: given the E-step matrix,
//! each routine returns the covariance in its uncertainty set that maximizes
//! `-ln det(M) - tr(M^{-1} Sigma)`.
//!
//! Supported sets: unconstrained; white-noise floor (eigenvalue clamping);
//! centro-Hermitian symmetry (forward-backward averaging); their
//! combination; fixed signal rank; fixed rank with centro-Hermitian symmetry.

use crate::error::{Error, Result};
use crate::linalg::{exchange_conjugate, CMatrix, HermitianMatrix};

/// Covariance uncertainty set the M-step maximizes over.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSet {
    Unconstrained,
    /// White disturbance power bounded below by `sigma2`.
    NoiseFloor { sigma2: f64 },
    /// `M = J M* J`.
    CentroHermitian,
    /// Noise floor and centro-Hermitian symmetry combined.
    NoiseFloorCentroHermitian { sigma2: f64 },
    /// `M = sigma_n^2 I + R` with `R` positive semidefinite of rank at most `d`.
    FixedRank { d: usize },
    /// Fixed rank plus centro-Hermitian symmetry.
    FixedRankCentroHermitian { d: usize },
}

impl ConstraintSet {
    /// Validates internal parameters against the array dimension `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            ConstraintSet::NoiseFloor { sigma2 }
            | ConstraintSet::NoiseFloorCentroHermitian { sigma2 } => {
                if !(*sigma2 > 0.0) {
                    return Err(Error::invalid("sigma2", "noise floor must be positive"));
                }
            }
            ConstraintSet::FixedRank { d } | ConstraintSet::FixedRankCentroHermitian { d } => {
                if *d + 1 > n {
                    return Err(Error::invalid(
                        "d",
                        format!("rank must satisfy 0 <= d <= {} for dimension {n}", n - 1),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Noise floor parameter, when the set has one.
    pub fn noise_floor(&self) -> Option<f64> {
        match self {
            ConstraintSet::NoiseFloor { sigma2 }
            | ConstraintSet::NoiseFloorCentroHermitian { sigma2 } => Some(*sigma2),
            _ => None,
        }
    }

    /// Whether members must satisfy `M = J M* J`.
    pub fn is_centro_hermitian(&self) -> bool {
        matches!(
            self,
            ConstraintSet::CentroHermitian
                | ConstraintSet::NoiseFloorCentroHermitian { .. }
                | ConstraintSet::FixedRankCentroHermitian { .. }
        )
    }

    /// Short lowercase label for reports.
    pub fn label(&self) -> &'static str {
        match self {
            ConstraintSet::Unconstrained => "unconstrained",
            ConstraintSet::NoiseFloor { .. } => "noise_floor",
            ConstraintSet::CentroHermitian => "centro_hermitian",
            ConstraintSet::NoiseFloorCentroHermitian { .. } => "noise_floor_centro_hermitian",
            ConstraintSet::FixedRank { .. } => "fixed_rank",
            ConstraintSet::FixedRankCentroHermitian { .. } => "fixed_rank_centro_hermitian",
        }
    }
}

/// Eigen-parameters of a fixed-rank M-step output.
#[derive(Debug, Clone)]
pub struct FixedRankParams {
    /// The `d` greatest eigenvalues of the E-step matrix, descending.
    pub top_eigenvalues: Vec<f64>,
    /// Arithmetic mean of the remaining eigenvalues.
    pub noise_power: f64,
    /// Columns: eigenvectors paired with `top_eigenvalues`.
    pub top_eigenvectors: CMatrix,
}

/// Unconstrained maximizer: the E-step matrix itself.
pub fn mstep_unconstrained(sigma: &HermitianMatrix) -> HermitianMatrix {
    sigma.clone()
}

/// Noise-floor maximizer: clamp the spectrum at `sigma2_floor` in the
/// eigenbasis of the input.
pub fn mstep_noise_floor(sigma: &HermitianMatrix, sigma2_floor: f64) -> HermitianMatrix {
    let evd = sigma.evd();
    let clamped: Vec<f64> = evd
        .eigenvalues()
        .iter()
        .map(|&l| l.max(sigma2_floor))
        .collect();
    evd.reconstruct_with(&clamped)
}

/// Forward-backward average `(Sigma + J Sigma* J) / 2`, the maximizer over
/// centro-Hermitian covariances.
pub fn mstep_centro_hermitian(sigma: &HermitianMatrix) -> HermitianMatrix {
    let m = sigma.as_matrix();
    let fb = (m + exchange_conjugate(m)).scale(0.5);
    HermitianMatrix::enforce(fb)
}

/// Forward-backward average followed by eigenvalue clamping in the averaged
/// eigenbasis; the result satisfies both set memberships.
pub fn mstep_noise_floor_centro_hermitian(
    sigma: &HermitianMatrix,
    sigma2_floor: f64,
) -> HermitianMatrix {
    let fb = mstep_centro_hermitian(sigma);
    let evd = fb.evd();
    let clamped: Vec<f64> = evd
        .eigenvalues()
        .iter()
        .map(|&l| l.max(sigma2_floor))
        .collect();
    // Reconstruction stays centro-Hermitian: eigenvectors of a
    // centro-Hermitian matrix can be paired through J-conjugation, which the
    // spectral rebuild preserves; residual drift is removed below.
    let rebuilt = evd.reconstruct_with(&clamped);
    let m = rebuilt.as_matrix();
    HermitianMatrix::enforce((m + exchange_conjugate(m)).scale(0.5))
}

/// Fixed-rank maximizer: keep the `d` greatest eigenpairs, replace the rest
/// of the spectrum with the mean of the `N - d` smallest eigenvalues.
pub fn mstep_fixed_rank(
    sigma: &HermitianMatrix,
    d: usize,
) -> Result<(HermitianMatrix, FixedRankParams)> {
    let n = sigma.dim();
    if d + 1 > n {
        return Err(Error::invalid(
            "d",
            format!("rank must satisfy 0 <= d <= {} for dimension {n}", n - 1),
        ));
    }
    let evd = sigma.evd();
    let eigs = evd.eigenvalues();
    let noise_power = eigs.iter().skip(d).sum::<f64>() / (n - d) as f64;
    let mut spectrum = vec![noise_power; n];
    spectrum[..d].copy_from_slice(&eigs.as_slice()[..d]);
    let rebuilt = evd.reconstruct_with(&spectrum);
    let params = FixedRankParams {
        top_eigenvalues: eigs.as_slice()[..d].to_vec(),
        noise_power,
        top_eigenvectors: evd.eigenvectors().columns(0, d).into_owned(),
    };
    Ok((rebuilt, params))
}

/// Fixed-rank maximizer applied to the forward-backward average, enforcing
/// both the rank structure and centro-Hermitian symmetry.
pub fn mstep_fixed_rank_fb(
    sigma: &HermitianMatrix,
    d: usize,
) -> Result<(HermitianMatrix, FixedRankParams)> {
    let fb = mstep_centro_hermitian(sigma);
    let (rebuilt, params) = mstep_fixed_rank(&fb, d)?;
    let m = rebuilt.as_matrix();
    let symmetrized = HermitianMatrix::enforce((m + exchange_conjugate(m)).scale(0.5));
    Ok((symmetrized, params))
}

/// Dispatches to the constraint set's maximizer.
pub fn apply_mstep(constraint: &ConstraintSet, sigma: &HermitianMatrix) -> Result<HermitianMatrix> {
    constraint.validate(sigma.dim())?;
    Ok(match constraint {
        ConstraintSet::Unconstrained => mstep_unconstrained(sigma),
        ConstraintSet::NoiseFloor { sigma2 } => mstep_noise_floor(sigma, *sigma2),
        ConstraintSet::CentroHermitian => mstep_centro_hermitian(sigma),
        ConstraintSet::NoiseFloorCentroHermitian { sigma2 } => {
            mstep_noise_floor_centro_hermitian(sigma, *sigma2)
        }
        ConstraintSet::FixedRank { d } => mstep_fixed_rank(sigma, *d)?.0,
        ConstraintSet::FixedRankCentroHermitian { d } => mstep_fixed_rank_fb(sigma, *d)?.0,
    })
}

/// The spectral part of the score function, `-ln det(M) - tr(M^{-1} Sigma)`.
/// Shared by tests and the feasibility oracles; the dropped constants do not
/// depend on `M`.
pub fn score(m: &HermitianMatrix, sigma: &HermitianMatrix) -> Result<f64> {
    let chol = crate::linalg::cholesky_hpd(m)?;
    let ln_det: f64 = (0..m.dim())
        .map(|k| 2.0 * chol.l_dirty()[(k, k)].re.ln())
        .sum();
    let solved = chol.solve(sigma.as_matrix());
    let trace: f64 = (0..m.dim()).map(|k| solved[(k, k)].re).sum();
    Ok(-ln_det - trace)
}
