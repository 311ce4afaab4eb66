//! Simulation world: steering vectors, jammer and source covariance models,
//! Gaussian snapshot sampling, and missing-data pattern generation.
//!
//! Snapshots are IID zero-mean circularly symmetric complex Gaussian vectors
//! with a prescribed covariance. A selection pattern lists the sensor indices
//! observed at one snapshot; patterns come from a Bernoulli per-element
//! dropout model, a fixed cyclic schedule, or no missingness at all.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_hpd, C64, CMatrix, CVector, HermitianMatrix};

/// Uniform linear array described by element count and the element spacing in
/// wavelengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    n_elements: usize,
    spacing_over_wavelength: f64,
}

impl ArrayGeometry {
    pub fn new(n_elements: usize, spacing_over_wavelength: f64) -> Result<Self> {
        if n_elements < 2 {
            return Err(Error::invalid("n_elements", "must be at least 2"));
        }
        if !(spacing_over_wavelength > 0.0) {
            return Err(Error::invalid("spacing", "must be positive"));
        }
        Ok(Self {
            n_elements,
            spacing_over_wavelength,
        })
    }

    /// Half-wavelength spaced array, the usual simulation default.
    pub fn half_wavelength(n_elements: usize) -> Result<Self> {
        Self::new(n_elements, 0.5)
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn spacing_over_wavelength(&self) -> f64 {
        self.spacing_over_wavelength
    }

    /// 3 dB single-side beamwidth in directional cosine, `0.891 / N`.
    pub fn single_side_beamwidth(&self) -> f64 {
        0.891 / self.n_elements as f64
    }
}

/// One interferer: direction of arrival, power as JNR in dB relative to the
/// white noise floor, and fractional bandwidth (0 means narrow-band).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JammerSpec {
    pub doa_degrees: f64,
    pub jnr_db: f64,
    pub fractional_bandwidth: f64,
}

impl JammerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.doa_degrees.abs() < 90.0) {
            return Err(Error::invalid("doa_degrees", "must satisfy |doa| < 90"));
        }
        if !(self.fractional_bandwidth >= 0.0) {
            return Err(Error::invalid("fractional_bandwidth", "must be >= 0"));
        }
        Ok(())
    }
}

/// One signal source at a directional cosine with a linear power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpec {
    pub directional_cosine: f64,
    pub power: f64,
}

impl SourceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.directional_cosine.abs() < 1.0) {
            return Err(Error::invalid(
                "directional_cosine",
                "must satisfy |u| < 1",
            ));
        }
        if !(self.power > 0.0) {
            return Err(Error::invalid("power", "must be positive"));
        }
        Ok(())
    }
}

/// Sorted list of observed sensor indices for one snapshot.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SelectionPattern {
    observed: Vec<usize>,
    n: usize,
}

impl SelectionPattern {
    /// Requires strictly increasing indices in `[0, n)` and at least one
    /// observed element.
    pub fn new(observed: Vec<usize>, n: usize) -> Result<Self> {
        if observed.is_empty() {
            return Err(Error::invalid("observed", "pattern must not be empty"));
        }
        if observed.len() > n {
            return Err(Error::invalid("observed", "more indices than elements"));
        }
        for w in observed.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::invalid(
                    "observed",
                    "indices must be strictly increasing",
                ));
            }
        }
        if *observed.last().unwrap() >= n {
            return Err(Error::invalid("observed", "index out of range"));
        }
        Ok(Self { observed, n })
    }

    /// Pattern observing every element.
    pub fn full(n: usize) -> Self {
        Self {
            observed: (0..n).collect(),
            n,
        }
    }

    /// Pattern observing everything except the given (sorted or unsorted)
    /// indices.
    pub fn dropping(missing: &[usize], n: usize) -> Result<Self> {
        let observed: Vec<usize> = (0..n).filter(|k| !missing.contains(k)).collect();
        Self::new(observed, n)
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    /// Number of observed elements, `p_i`.
    pub fn n_observed(&self) -> usize {
        self.observed.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_full(&self) -> bool {
        self.observed.len() == self.n
    }

    /// Missing indices, in increasing order.
    pub fn missing(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n - self.observed.len());
        let mut it = self.observed.iter().peekable();
        for k in 0..self.n {
            if it.peek() == Some(&&k) {
                it.next();
            } else {
                out.push(k);
            }
        }
        out
    }
}

/// Missing-data model used when sampling snapshots.
#[derive(Debug, Clone, PartialEq)]
pub enum MissingnessKind {
    /// No entries missing.
    None,
    /// Each element observed independently with probability `1 - p_m`.
    Bernoulli { p_m: f64 },
    /// Patterns applied cyclically in the listed order.
    Cyclic { patterns: Vec<SelectionPattern> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissingnessModel {
    pub kind: MissingnessKind,
    pub seed: u64,
}

impl MissingnessModel {
    pub fn none() -> Self {
        Self {
            kind: MissingnessKind::None,
            seed: 0,
        }
    }

    pub fn bernoulli(p_m: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&p_m) {
            return Err(Error::invalid("p_m", "must satisfy 0 <= p_m < 1"));
        }
        Ok(Self {
            kind: MissingnessKind::Bernoulli { p_m },
            seed,
        })
    }

    pub fn cyclic(patterns: Vec<SelectionPattern>) -> Result<Self> {
        if patterns.is_empty() {
            return Err(Error::invalid("patterns", "cyclic list must not be empty"));
        }
        Ok(Self {
            kind: MissingnessKind::Cyclic { patterns },
            seed: 0,
        })
    }
}

/// One observed snapshot: the selection pattern and the observed entries.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub pattern: SelectionPattern,
    pub y: CVector,
}

/// A set of observed snapshots over an `n`-element array.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    n: usize,
    snapshots: Vec<Snapshot>,
}

impl SnapshotSet {
    pub fn new(n: usize, snapshots: Vec<Snapshot>) -> Result<Self> {
        for (i, s) in snapshots.iter().enumerate() {
            if s.pattern.n() != n {
                return Err(Error::dim(format!(
                    "snapshot {i}: pattern is over {} elements, set is over {n}",
                    s.pattern.n()
                )));
            }
            if s.y.len() != s.pattern.n_observed() {
                return Err(Error::dim(format!(
                    "snapshot {i}: {} observed values for {} observed indices",
                    s.y.len(),
                    s.pattern.n_observed()
                )));
            }
        }
        Ok(Self { n, snapshots })
    }

    /// Builds the full-pattern set from complete snapshots.
    pub fn from_complete(complete: &[CVector]) -> Result<Self> {
        let n = complete
            .first()
            .ok_or_else(|| Error::invalid("snapshots", "need at least one snapshot"))?
            .len();
        let snapshots = complete
            .iter()
            .map(|r| Snapshot {
                pattern: SelectionPattern::full(n),
                y: r.clone(),
            })
            .collect();
        Self::new(n, snapshots)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of snapshots, `K`.
    pub fn k(&self) -> usize {
        self.snapshots.len()
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }
}

/// Output of [`sample_snapshots`]: the observed set, the complete snapshots
/// the observations were cut from, and how many all-missing Bernoulli
/// patterns had to be redrawn.
#[derive(Debug, Clone)]
pub struct SampledData {
    pub observed: SnapshotSet,
    pub complete: Vec<CVector>,
    pub pattern_resamples: usize,
}

/// Steering vector for a direction of arrival in degrees: entry `k` equals
/// `exp(j 2 pi (d_x / lambda) k sin(theta))`.
pub fn steering_vector(geom: &ArrayGeometry, theta_degrees: f64) -> Result<CVector> {
    if !(theta_degrees.abs() < 90.0) {
        return Err(Error::invalid("theta_degrees", "must satisfy |theta| < 90"));
    }
    Ok(steering_vector_cosine(
        geom,
        theta_degrees.to_radians().sin(),
    ))
}

/// Steering vector parameterized by directional cosine `u = sin(theta)`.
pub fn steering_vector_cosine(geom: &ArrayGeometry, u: f64) -> CVector {
    let step = 2.0 * PI * geom.spacing_over_wavelength() * u;
    CVector::from_fn(geom.n_elements(), |k, _| {
        C64::new(0.0, k as f64 * step).exp()
    })
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Disturbance covariance: white noise plus narrow-band rank-one jammers and
/// wide-band jammers with a sinc-tapered spatial correlation.
pub fn disturbance_covariance(
    geom: &ArrayGeometry,
    jammers: &[JammerSpec],
    white_noise_power: f64,
) -> Result<HermitianMatrix> {
    if !(white_noise_power > 0.0) {
        return Err(Error::invalid("white_noise_power", "must be positive"));
    }
    let n = geom.n_elements();
    let mut m = CMatrix::identity(n, n).scale(white_noise_power);
    for j in jammers {
        j.validate()?;
        let power = 10f64.powf(j.jnr_db / 10.0) * white_noise_power;
        if j.fractional_bandwidth == 0.0 {
            let v = steering_vector(geom, j.doa_degrees)?;
            m += (&v * v.adjoint()).scale(power);
        } else {
            // Spatial correlation of a flat-spectrum interferer: sinc taper on
            // the carrier phase ramp.
            let zeta = 2.0 * PI
                * geom.spacing_over_wavelength()
                * j.doa_degrees.to_radians().sin();
            for r in 0..n {
                for c in 0..n {
                    let lag = r as f64 - c as f64;
                    let taper = sinc(0.5 * j.fractional_bandwidth * lag * zeta);
                    m[(r, c)] += C64::new(0.0, lag * zeta).exp().scale(power * taper);
                }
            }
        }
    }
    Ok(HermitianMatrix::enforce(m))
}

/// Source covariance: white noise plus one rank-one term per source.
pub fn source_covariance(
    geom: &ArrayGeometry,
    sources: &[SourceSpec],
    white_noise_power: f64,
) -> Result<HermitianMatrix> {
    if !(white_noise_power > 0.0) {
        return Err(Error::invalid("white_noise_power", "must be positive"));
    }
    let n = geom.n_elements();
    let mut m = CMatrix::identity(n, n).scale(white_noise_power);
    for s in sources {
        s.validate()?;
        let v = steering_vector_cosine(geom, s.directional_cosine);
        m += (&v * v.adjoint()).scale(s.power);
    }
    Ok(HermitianMatrix::enforce(m))
}

/// One circularly symmetric standard complex normal draw: independent real
/// and imaginary parts, each `N(0, 1/2)`.
fn standard_complex_normal(rng: &mut ChaCha8Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Draws `k` complete snapshots from `CN(0, m)` and cuts them down to the
/// selection patterns produced by the missingness model.
///
/// The complete data depend only on `(m, k, seed)`; patterns depend only on
/// the missingness model, so complete and missing variants of an experiment
/// can share the exact same underlying snapshots. All-missing Bernoulli
/// patterns are redrawn until nonempty and the redraw count is reported.
pub fn sample_snapshots(
    m: &HermitianMatrix,
    k: usize,
    miss: &MissingnessModel,
    seed: u64,
) -> Result<SampledData> {
    if k == 0 {
        return Err(Error::invalid("k", "need at least one snapshot"));
    }
    let n = m.dim();
    let chol = cholesky_hpd(m).map_err(|e| Error::NotPositiveDefinite {
        detail: format!("snapshot covariance is degenerate: {e}"),
    })?;
    let factor = chol.l();

    let mut data_rng = ChaCha8Rng::seed_from_u64(seed);
    let complete: Vec<CVector> = (0..k)
        .map(|_| {
            let z = CVector::from_fn(n, |_, _| standard_complex_normal(&mut data_rng));
            &factor * z
        })
        .collect();

    let mut pattern_resamples = 0usize;
    let mut pattern_rng = ChaCha8Rng::seed_from_u64(miss.seed);
    let patterns: Vec<SelectionPattern> = match &miss.kind {
        MissingnessKind::None => (0..k).map(|_| SelectionPattern::full(n)).collect(),
        MissingnessKind::Bernoulli { p_m } => (0..k)
            .map(|_| loop {
                let observed: Vec<usize> =
                    (0..n).filter(|_| pattern_rng.gen_bool(1.0 - p_m)).collect();
                if observed.is_empty() {
                    pattern_resamples += 1;
                    continue;
                }
                break SelectionPattern { observed, n };
            })
            .collect(),
        MissingnessKind::Cyclic { patterns } => {
            for (i, p) in patterns.iter().enumerate() {
                if p.n() != n {
                    return Err(Error::dim(format!(
                        "cyclic pattern {i} is over {} elements, covariance is {n}x{n}",
                        p.n()
                    )));
                }
            }
            (0..k).map(|i| patterns[i % patterns.len()].clone()).collect()
        }
    };

    let snapshots = complete
        .iter()
        .zip(patterns)
        .map(|(r, pattern)| {
            let y = CVector::from_iterator(
                pattern.n_observed(),
                pattern.observed().iter().map(|&idx| r[idx]),
            );
            Snapshot { pattern, y }
        })
        .collect();

    Ok(SampledData {
        observed: SnapshotSet::new(n, snapshots)?,
        complete,
        pattern_resamples,
    })
}

/// Sample covariance `(1/K) sum r_i r_i^H` of complete snapshots.
pub fn sample_covariance(snapshots: &[CVector]) -> Result<HermitianMatrix> {
    let first = snapshots
        .first()
        .ok_or_else(|| Error::invalid("snapshots", "need at least one snapshot"))?;
    let n = first.len();
    let mut acc = CMatrix::zeros(n, n);
    for r in snapshots {
        if r.len() != n {
            return Err(Error::dim("snapshots must share one length".to_string()));
        }
        acc += r * r.adjoint();
    }
    Ok(HermitianMatrix::enforce(acc.unscale(snapshots.len() as f64)))
}

/// Sample covariance of the zero-filled snapshots: missing entries are set to
/// zero and the usual outer-product average is taken.
pub fn zero_filled_sample_covariance(data: &SnapshotSet) -> Result<HermitianMatrix> {
    if data.is_empty() {
        return Err(Error::invalid("data", "need at least one snapshot"));
    }
    let n = data.n();
    let mut acc = CMatrix::zeros(n, n);
    for snap in data.snapshots() {
        let obs = snap.pattern.observed();
        for (a, &ia) in obs.iter().enumerate() {
            for (b, &ib) in obs.iter().enumerate() {
                acc[(ia, ib)] += snap.y[a] * snap.y[b].conj();
            }
        }
    }
    Ok(HermitianMatrix::enforce(acc.unscale(data.k() as f64)))
}
