//! Signal kernels, observation channels and model builders.
//!
//! A model couples a Markov signal kernel `Λ(u, dx)` with an observation
//! channel density `γ(u, y)` w.r.t. a reference measure `φ` (counting on a
//! finite alphabet, Lebesgue otherwise) and a true initial law `ν`. The
//! observation at step n is emitted from the state at step n-1, and `Y_0 = 0`
//! carries no information.
//!
//! Shipped families:
//! * finite HMMs with per-state discrete or Gaussian observation noise,
//! * the multiplicative-noise volatility model `Y_n = X_{n-1} ξ_n` over an
//!   AR(1) signal with SG priors,
//! * additive-noise observations `Y_n = h(X_{n-1}) + ξ_n` with linear `h`,
//! * a non-mixing control: a deterministic 2-cycle signal with an
//!   uninformative channel (ergodicity alone does not make filters stable,
//!   and this fixture keeps that visible).

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution as RandDistribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::measure::{normalize, Distribution, FiniteDistribution};
use crate::numeric::{adaptive_simpson, compensated_sum, normal_log_pdf, normal_pdf};
use crate::sg::{expect_mult_noise, mult_noise_log_density, mult_noise_sample, sg_sample, SgParams};
use crate::{Error, Result};

/// Row-stochastic tolerance for finite kernels.
pub const ROW_SUM_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Signal kernels
// ---------------------------------------------------------------------------

/// Dense row-stochastic matrix with per-row support bounds. The bounds let
/// the filter skip the far tails of grid-discretized Gaussian rows.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    d: usize,
    rows: Vec<f64>,
    /// Per-row half-open band [start, end) of nonzero entries.
    bands: Vec<(u32, u32)>,
}

impl StochasticMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.len();
        if d == 0 {
            return Err(Error::BadStochasticMatrix("empty matrix".into()));
        }
        let mut flat = Vec::with_capacity(d * d);
        for (u, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::BadStochasticMatrix(format!(
                    "row {u} has {} entries, expected {d}",
                    row.len()
                )));
            }
            for (x, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::BadStochasticMatrix(format!(
                        "entry ({u},{x}) = {v} is not a probability"
                    )));
                }
            }
            let sum = compensated_sum(row);
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::BadStochasticMatrix(format!(
                    "row {u} sums to {sum}"
                )));
            }
            flat.extend_from_slice(row);
        }
        let bands = compute_bands(&flat, d);
        Ok(Self { d, rows: flat, bands })
    }

    /// Build from rows that are renormalized instead of validated (used by
    /// grid discretization, where truncation makes raw rows sum to < 1).
    pub(crate) fn from_rows_renormalized(mut flat: Vec<f64>, d: usize) -> Result<Self> {
        for u in 0..d {
            let row = &mut flat[u * d..(u + 1) * d];
            let sum = compensated_sum(row);
            if sum <= 0.0 {
                return Err(Error::BadStochasticMatrix(format!(
                    "row {u} has zero mass after truncation"
                )));
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let bands = compute_bands(&flat, d);
        Ok(Self { d, rows: flat, bands })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, u: usize) -> &[f64] {
        &self.rows[u * self.d..(u + 1) * self.d]
    }

    #[inline]
    pub fn entry(&self, u: usize, x: usize) -> f64 {
        self.rows[u * self.d + x]
    }

    #[inline]
    pub(crate) fn band(&self, u: usize) -> (usize, usize) {
        let (s, e) = self.bands[u];
        (s as usize, e as usize)
    }

    pub fn min_entry(&self) -> f64 {
        self.rows.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_entry(&self) -> f64 {
        self.rows.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn row_min(&self, u: usize) -> f64 {
        self.row(u).iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// `out[x] = Σ_u w[u] Λ(u, x)`: propagate a weight vector through the
    /// kernel. Accumulates row-by-row over the nonzero bands.
    pub fn propagate_into(&self, weights: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (u, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let (s, e) = self.band(u);
            let row = &self.rows[u * self.d + s..u * self.d + e];
            let dst = &mut out[s..e];
            for (o, r) in dst.iter_mut().zip(row) {
                *o += w * r;
            }
        }
    }

    /// Propagate two weight vectors in one pass over the matrix (the paired
    /// true/wrong-prior filters read each row once).
    pub fn propagate_pair_into(
        &self,
        w0: &[f64],
        w1: &[f64],
        out0: &mut [f64],
        out1: &mut [f64],
    ) {
        out0.iter_mut().for_each(|v| *v = 0.0);
        out1.iter_mut().for_each(|v| *v = 0.0);
        for u in 0..self.d {
            let (a, b) = (w0[u], w1[u]);
            if a == 0.0 && b == 0.0 {
                continue;
            }
            let (s, e) = self.band(u);
            let row = &self.rows[u * self.d + s..u * self.d + e];
            let d0 = &mut out0[s..e];
            let d1 = &mut out1[s..e];
            for ((r, o0), o1) in row.iter().zip(d0.iter_mut()).zip(d1.iter_mut()) {
                *o0 += a * r;
                *o1 += b * r;
            }
        }
    }
}

fn compute_bands(flat: &[f64], d: usize) -> Vec<(u32, u32)> {
    (0..d)
        .map(|u| {
            let row = &flat[u * d..(u + 1) * d];
            let start = row.iter().position(|&v| v != 0.0).unwrap_or(0);
            let end = row.iter().rposition(|&v| v != 0.0).map_or(d, |i| i + 1);
            (start as u32, end as u32)
        })
        .collect()
}

/// Signal transition kernel: a finite row-stochastic matrix or the ergodic
/// AR(1) recursion `X_n = a X_{n-1} + θ_n` with `θ ~ N(0, b²)`.
#[derive(Debug, Clone)]
pub enum SignalKernel {
    Matrix(StochasticMatrix),
    Ar1 { a: f64, noise_std: f64 },
}

impl SignalKernel {
    pub fn matrix(rows: Vec<Vec<f64>>) -> Result<Self> {
        Ok(SignalKernel::Matrix(StochasticMatrix::new(rows)?))
    }

    /// AR(1) kernel; requires `|a| < 1` (the shipped continuous models are
    /// ergodic) and `b > 0`.
    pub fn ar1(a: f64, noise_std: f64) -> Result<Self> {
        if !(a.is_finite() && a.abs() < 1.0) {
            return Err(Error::ConfigInvalid {
                field: "a".into(),
                reason: format!("|a| < 1 required, got {a}"),
            });
        }
        if !(noise_std.is_finite() && noise_std > 0.0) {
            return Err(Error::ConfigInvalid {
                field: "b".into(),
                reason: format!("positive noise std required, got {noise_std}"),
            });
        }
        Ok(SignalKernel::Ar1 { a, noise_std })
    }

    /// Stationary standard deviation `b/√(1-a²)` of the AR(1) kernel.
    pub fn ar1_stationary_std(&self) -> Option<f64> {
        match self {
            SignalKernel::Ar1 { a, noise_std } => {
                Some(noise_std / (1.0 - a * a).sqrt())
            }
            SignalKernel::Matrix(_) => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Observation channels
// ---------------------------------------------------------------------------

/// One state's scalar observation law, the builder input for finite HMMs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum NoiseSpec {
    Gaussian { mean: f64, std: f64 },
    Discrete { values: Vec<f64>, probs: Vec<f64> },
}

impl NoiseSpec {
    fn validate(&self) -> Result<()> {
        match self {
            NoiseSpec::Gaussian { mean, std } => {
                if !mean.is_finite() || !(std.is_finite() && *std > 0.0) {
                    return Err(Error::UnsupportedNoiseFamily(format!(
                        "gaussian(mean={mean}, std={std})"
                    )));
                }
            }
            NoiseSpec::Discrete { values, probs } => {
                if values.len() != probs.len() || values.is_empty() {
                    return Err(Error::UnsupportedNoiseFamily(
                        "discrete law needs matching values/probs".into(),
                    ));
                }
                let sum = compensated_sum(probs);
                if probs.iter().any(|&p| !(p.is_finite() && p >= 0.0))
                    || (sum - 1.0).abs() > 1e-12
                {
                    return Err(Error::UnsupportedNoiseFamily(format!(
                        "discrete probs sum to {sum}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// i-th raw moment, by quadrature for the Gaussian case and exact
    /// summation for the discrete case.
    pub fn raw_moment(&self, order: usize) -> Result<f64> {
        match self {
            NoiseSpec::Discrete { values, probs } => Ok(values
                .iter()
                .zip(probs)
                .map(|(v, p)| v.powi(order as i32) * p)
                .sum()),
            NoiseSpec::Gaussian { mean, std } => {
                let half_width = 14.0 + order as f64;
                let (lo, hi) = (mean - half_width * std, mean + half_width * std);
                adaptive_simpson(
                    &|y: f64| y.powi(order as i32) * normal_pdf(y, *mean, *std),
                    lo,
                    hi,
                    1e-10 * std.powi(order as i32).max(1.0),
                )
                .map_err(|_| Error::MomentDivergence { order })
            }
        }
    }
}

/// Observation channel density `γ(u, y)` plus its sampler.
#[derive(Debug, Clone)]
pub enum ObservationChannel {
    /// Shared finite observation alphabet; `gamma[u][k]` w.r.t. counting
    /// measure on `letters`.
    FiniteAlphabet { letters: Vec<f64>, gamma: Vec<Vec<f64>> },
    /// Per-state Gaussian emission `y | u ~ N(mean_u, std_u²)`.
    PerStateGaussian { params: Vec<(f64, f64)> },
    /// `y = slope·x + intercept + ξ`, `ξ ~ N(noise_mean, noise_std²)`.
    AdditiveGaussian { slope: f64, intercept: f64, noise_mean: f64, noise_std: f64 },
    /// `y = x·ξ` with the heavy-tailed volatility noise: `γ(x,y) = p(y/x)/|x|`.
    Multiplicative { rho: f64 },
}

impl ObservationChannel {
    /// Log-density of the observation given the source state. The filter
    /// works in log space so that far-tail observations deflate to `-inf`
    /// only when the density is genuinely zero, not on floating underflow.
    pub fn log_density(&self, state_idx: usize, state_value: f64, y: f64) -> f64 {
        match self {
            ObservationChannel::FiniteAlphabet { letters, gamma } => {
                match letter_index(letters, y) {
                    Some(k) => {
                        let p = gamma[state_idx][k];
                        if p > 0.0 {
                            p.ln()
                        } else {
                            f64::NEG_INFINITY
                        }
                    }
                    None => f64::NEG_INFINITY,
                }
            }
            ObservationChannel::PerStateGaussian { params } => {
                let (m, s) = params[state_idx];
                normal_log_pdf(y, m, s)
            }
            ObservationChannel::AdditiveGaussian { slope, intercept, noise_mean, noise_std } => {
                normal_log_pdf(y, slope * state_value + intercept + noise_mean, *noise_std)
            }
            ObservationChannel::Multiplicative { rho } => {
                if state_value == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    mult_noise_log_density(y / state_value, *rho) - state_value.abs().ln()
                }
            }
        }
    }

    /// Density `γ(u, y)`.
    pub fn density(&self, state_idx: usize, state_value: f64, y: f64) -> f64 {
        match self {
            ObservationChannel::FiniteAlphabet { letters, gamma } => {
                letter_index(letters, y).map_or(0.0, |k| gamma[state_idx][k])
            }
            _ => self.log_density(state_idx, state_value, y).exp(),
        }
    }

    /// Draw an observation for a source state.
    pub fn sample<R: Rng + ?Sized>(&self, state_idx: usize, state_value: f64, rng: &mut R) -> f64 {
        match self {
            ObservationChannel::FiniteAlphabet { letters, gamma } => {
                let k = sample_index(&gamma[state_idx], rng);
                letters[k]
            }
            ObservationChannel::PerStateGaussian { params } => {
                let (m, s) = params[state_idx];
                let z: f64 = StandardNormal.sample(rng);
                m + s * z
            }
            ObservationChannel::AdditiveGaussian { slope, intercept, noise_mean, noise_std } => {
                let z: f64 = StandardNormal.sample(rng);
                slope * state_value + intercept + noise_mean + noise_std * z
            }
            ObservationChannel::Multiplicative { rho } => {
                state_value * mult_noise_sample(*rho, rng)
            }
        }
    }

    /// The finite observation alphabet, if the channel has one.
    pub fn letters(&self) -> Option<&[f64]> {
        match self {
            ObservationChannel::FiniteAlphabet { letters, .. } => Some(letters),
            _ => None,
        }
    }

    /// `∫ g(y) γ(u, y) φ(dy)` for one source state: exact sum over a finite
    /// alphabet, adaptive quadrature otherwise.
    pub fn integrate_g<F: Fn(f64) -> f64>(
        &self,
        state_idx: usize,
        state_value: f64,
        g: &F,
    ) -> Result<f64> {
        match self {
            ObservationChannel::FiniteAlphabet { letters, gamma } => Ok(letters
                .iter()
                .zip(&gamma[state_idx])
                .map(|(y, p)| g(*y) * p)
                .sum()),
            ObservationChannel::PerStateGaussian { params } => {
                let (m, s) = params[state_idx];
                gaussian_inner_integral(m, s, g)
            }
            ObservationChannel::AdditiveGaussian { slope, intercept, noise_mean, noise_std } => {
                gaussian_inner_integral(
                    slope * state_value + intercept + noise_mean,
                    *noise_std,
                    g,
                )
            }
            ObservationChannel::Multiplicative { rho } => {
                if state_value == 0.0 {
                    return Err(Error::NonFiniteResult(
                        "multiplicative channel undefined at state 0".into(),
                    ));
                }
                expect_mult_noise(*rho, |t| g(state_value * t))
            }
        }
    }

    /// Characteristic function `E e^{itξ}` of the additive observation noise.
    /// Only the additive channel exposes one.
    pub fn noise_char_fn(&self, t: f64) -> Option<Complex64> {
        match self {
            ObservationChannel::AdditiveGaussian { noise_mean, noise_std, .. } => {
                let magnitude = (-0.5 * t * t * noise_std * noise_std).exp();
                Some(Complex64::from_polar(magnitude, t * noise_mean))
            }
            _ => None,
        }
    }

    /// Quantize a per-state Gaussian channel onto a finite alphabet: bins are
    /// delimited by `edges` (strictly increasing; the two outer bins extend
    /// to ±∞) and labelled by `letters`. Bin probabilities are CDF
    /// differences, so the result is exactly stochastic. Used to build
    /// enumeration oracles for continuous channels.
    pub fn quantize_gaussian(&self, edges: &[f64], letters: Vec<f64>) -> Result<Self> {
        let params = match self {
            ObservationChannel::PerStateGaussian { params } => params,
            _ => {
                return Err(Error::UnsupportedNoiseFamily(
                    "quantization applies to per-state Gaussian channels".into(),
                ))
            }
        };
        if letters.len() != edges.len() + 1 {
            return Err(Error::ConfigInvalid {
                field: "letters".into(),
                reason: format!("need {} letters for {} edges", edges.len() + 1, edges.len()),
            });
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::ConfigInvalid {
                field: "edges".into(),
                reason: "must be strictly increasing".into(),
            });
        }
        let gamma = params
            .iter()
            .map(|&(m, s)| {
                let mut cum = vec![0.0];
                cum.extend(edges.iter().map(|&e| crate::numeric::normal_cdf(e, m, s)));
                cum.push(1.0);
                cum.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect()
            })
            .collect();
        Ok(ObservationChannel::FiniteAlphabet { letters, gamma })
    }
}

fn gaussian_inner_integral<F: Fn(f64) -> f64>(mean: f64, std: f64, g: &F) -> Result<f64> {
    let half_width = 14.0 * std;
    adaptive_simpson(
        &|y: f64| g(y) * normal_pdf(y, mean, std),
        mean - half_width,
        mean + half_width,
        1e-11,
    )
}

fn letter_index(letters: &[f64], y: f64) -> Option<usize> {
    letters.iter().position(|&l| l == y)
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

// ---------------------------------------------------------------------------
// The model
// ---------------------------------------------------------------------------

/// State carrier: finite atoms, grid midpoints, or the real line
/// (continuous models prior to discretization).
#[derive(Debug, Clone)]
pub enum StateCarrier {
    Finite(Vec<f64>),
    Grid { lo: f64, hi: f64, cell_width: f64, midpoints: Vec<f64> },
    Real,
}

impl StateCarrier {
    pub fn points(&self) -> Option<&[f64]> {
        match self {
            StateCarrier::Finite(a) => Some(a),
            StateCarrier::Grid { midpoints, .. } => Some(midpoints),
            StateCarrier::Real => None,
        }
    }

    pub fn len(&self) -> Option<usize> {
        self.points().map(<[f64]>::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == Some(0)
    }
}

/// Initial law of the signal.
#[derive(Debug, Clone)]
pub enum InitialLaw {
    /// Explicit weights on a finite or grid carrier.
    Weights(Distribution),
    /// SG density (continuous carrier; gridded at discretization time).
    Sg(SgParams),
    /// Centered or shifted Gaussian density.
    Gaussian { mean: f64, std: f64 },
    /// Deterministic start.
    Point(f64),
}

/// A hidden Markov model: signal kernel, observation channel, initial law
/// and the carrier they live on.
#[derive(Debug, Clone)]
pub struct HmmModel {
    pub(crate) signal: SignalKernel,
    pub(crate) channel: ObservationChannel,
    pub(crate) init: InitialLaw,
    pub(crate) carrier: StateCarrier,
}

impl HmmModel {
    pub fn new(
        signal: SignalKernel,
        channel: ObservationChannel,
        init: InitialLaw,
        carrier: StateCarrier,
    ) -> Result<Self> {
        match (&signal, &carrier) {
            (SignalKernel::Matrix(m), StateCarrier::Finite(atoms)) if m.dim() != atoms.len() => {
                return Err(Error::MismatchedSupport(format!(
                    "kernel dim {} vs {} atoms",
                    m.dim(),
                    atoms.len()
                )));
            }
            (SignalKernel::Matrix(m), StateCarrier::Grid { midpoints, .. })
                if m.dim() != midpoints.len() =>
            {
                return Err(Error::MismatchedSupport(format!(
                    "kernel dim {} vs {} grid cells",
                    m.dim(),
                    midpoints.len()
                )));
            }
            (SignalKernel::Matrix(_), StateCarrier::Real) => {
                return Err(Error::MismatchedSupport(
                    "matrix kernel needs a finite or grid carrier".into(),
                ));
            }
            (SignalKernel::Ar1 { .. }, StateCarrier::Finite(_)) => {
                return Err(Error::MismatchedSupport(
                    "AR(1) kernel needs a real or grid carrier".into(),
                ));
            }
            _ => {}
        }
        if let ObservationChannel::Multiplicative { .. } = &channel {
            if let Some(points) = carrier.points() {
                if points.contains(&0.0) {
                    return Err(Error::MismatchedSupport(
                        "multiplicative channel carrier must avoid state 0 \
                         (offset the grid by half a cell)"
                            .into(),
                    ));
                }
            }
        }
        if let (InitialLaw::Weights(dist), Some(points)) = (&init, carrier.points()) {
            if dist.points() != points {
                return Err(Error::MismatchedSupport(
                    "initial law carrier differs from the model carrier".into(),
                ));
            }
        }
        let per_state_dim = match &channel {
            ObservationChannel::FiniteAlphabet { gamma, .. } => Some(gamma.len()),
            ObservationChannel::PerStateGaussian { params } => Some(params.len()),
            _ => None,
        };
        if let (Some(k), Some(n)) = (per_state_dim, carrier.len()) {
            if k != n {
                return Err(Error::MismatchedSupport(format!(
                    "channel covers {k} states, carrier has {n}"
                )));
            }
        }
        Ok(Self { signal, channel, init, carrier })
    }

    pub fn signal(&self) -> &SignalKernel {
        &self.signal
    }

    pub fn channel(&self) -> &ObservationChannel {
        &self.channel
    }

    pub fn init(&self) -> &InitialLaw {
        &self.init
    }

    pub fn carrier(&self) -> &StateCarrier {
        &self.carrier
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.carrier, StateCarrier::Real)
    }

    /// Support points of a finite or grid carrier.
    pub fn points(&self) -> Option<&[f64]> {
        self.carrier.points()
    }

    /// The kernel matrix of a finite/grid model.
    pub fn kernel_matrix(&self) -> Option<&StochasticMatrix> {
        match &self.signal {
            SignalKernel::Matrix(m) => Some(m),
            SignalKernel::Ar1 { .. } => None,
        }
    }

    /// The initial law as a `Distribution` (finite/grid carriers only).
    pub fn init_distribution(&self) -> Option<&Distribution> {
        match &self.init {
            InitialLaw::Weights(d) => Some(d),
            _ => None,
        }
    }

    /// Replace the initial law with explicit weights on the same carrier.
    pub fn with_init(&self, init: Distribution) -> Result<Self> {
        HmmModel::new(
            self.signal.clone(),
            self.channel.clone(),
            InitialLaw::Weights(init),
            self.carrier.clone(),
        )
    }

    /// Stationary law of a finite/grid signal kernel, on the model carrier.
    pub fn stationary_law(&self) -> Result<Distribution> {
        let m = self.kernel_matrix().ok_or_else(|| {
            Error::MismatchedSupport("stationary law needs a finite kernel".into())
        })?;
        let weights = stationary_weights(m)?;
        let dist = match &self.carrier {
            StateCarrier::Finite(atoms) => {
                Distribution::Finite(FiniteDistribution::new(atoms.clone(), weights)?)
            }
            StateCarrier::Grid { midpoints, cell_width, .. } => Distribution::Grid(
                crate::measure::GridDistribution::new(midpoints.clone(), weights, *cell_width)?,
            ),
            StateCarrier::Real => unreachable!("matrix kernel excludes real carrier"),
        };
        Ok(dist)
    }
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

/// Finite HMM with observation `Y_n = ξ_n(j)` on `{X_{n-1} = a_j}`: the
/// channel density at state `a_j` is the density of `ξ(j)`. All per-state
/// laws must share one reference measure: all Gaussian, or all discrete on
/// the same support.
pub fn build_finite_hmm(
    transition: Vec<Vec<f64>>,
    atoms: Vec<f64>,
    obs_dists: Vec<NoiseSpec>,
    init_weights: Vec<f64>,
) -> Result<HmmModel> {
    let d = atoms.len();
    if d < 2 {
        return Err(Error::BadStochasticMatrix("need at least 2 states".into()));
    }
    if obs_dists.len() != d {
        return Err(Error::UnsupportedNoiseFamily(format!(
            "{} noise laws for {d} states",
            obs_dists.len()
        )));
    }
    for spec in &obs_dists {
        spec.validate()?;
    }
    let kernel = StochasticMatrix::new(transition)?;
    let channel = match &obs_dists[0] {
        NoiseSpec::Gaussian { .. } => {
            let params = obs_dists
                .iter()
                .map(|s| match s {
                    NoiseSpec::Gaussian { mean, std } => Ok((*mean, *std)),
                    NoiseSpec::Discrete { .. } => Err(Error::UnsupportedNoiseFamily(
                        "cannot mix Gaussian and discrete observation noise".into(),
                    )),
                })
                .collect::<Result<Vec<_>>>()?;
            ObservationChannel::PerStateGaussian { params }
        }
        NoiseSpec::Discrete { values, .. } => {
            let letters = values.clone();
            let gamma = obs_dists
                .iter()
                .map(|s| match s {
                    NoiseSpec::Discrete { values, probs } if *values == letters => {
                        Ok(probs.clone())
                    }
                    NoiseSpec::Discrete { .. } => Err(Error::UnsupportedNoiseFamily(
                        "discrete observation laws must share one alphabet".into(),
                    )),
                    NoiseSpec::Gaussian { .. } => Err(Error::UnsupportedNoiseFamily(
                        "cannot mix Gaussian and discrete observation noise".into(),
                    )),
                })
                .collect::<Result<Vec<_>>>()?;
            ObservationChannel::FiniteAlphabet { letters, gamma }
        }
    };
    let init = Distribution::Finite(FiniteDistribution::new(atoms.clone(), init_weights)?);
    HmmModel::new(
        SignalKernel::Matrix(kernel),
        channel,
        InitialLaw::Weights(init),
        StateCarrier::Finite(atoms),
    )
}

/// Parameters of the multiplicative-noise volatility model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultNoiseParams {
    pub a: f64,
    pub b: f64,
    pub rho: f64,
    pub prior: SgParams,
}

impl MultNoiseParams {
    pub fn new(a: f64, b: f64, rho: f64, prior: SgParams) -> Result<Self> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::ConfigInvalid {
                field: "rho".into(),
                reason: format!("must be positive, got {rho}"),
            });
        }
        SignalKernel::ar1(a, b)?;
        Ok(Self { a, b, rho, prior })
    }
}

/// Volatility model `Y_n = X_{n-1} ξ_n` over the AR(1) signal with an SG
/// prior. Continuous; discretize before filtering.
pub fn build_mult_noise_model(p: MultNoiseParams) -> Result<HmmModel> {
    HmmModel::new(
        SignalKernel::ar1(p.a, p.b)?,
        ObservationChannel::Multiplicative { rho: p.rho },
        InitialLaw::Sg(p.prior),
        StateCarrier::Real,
    )
}

/// Linear observation map for the additive-noise model, `h(x) = slope·x +
/// intercept`. `slope = 1, intercept = 0` is the plain linear observation;
/// `slope = 0` disconnects the observations from the signal (control case).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearObservation {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearObservation {
    pub fn identity() -> Self {
        Self { slope: 1.0, intercept: 0.0 }
    }

    pub fn uninformative() -> Self {
        Self { slope: 0.0, intercept: 0.0 }
    }
}

/// Additive observation noise model `Y_n = h(X_{n-1}) + ξ_n` with Gaussian
/// `ξ`. Accepts any signal kernel; with an AR(1) kernel the model is
/// continuous and must be discretized before filtering.
pub fn build_additive_model(
    signal: SignalKernel,
    h: LinearObservation,
    noise: NoiseSpec,
    init: InitialLaw,
) -> Result<HmmModel> {
    let (noise_mean, noise_std) = match noise {
        NoiseSpec::Gaussian { mean, std } => (mean, std),
        NoiseSpec::Discrete { .. } => {
            return Err(Error::UnsupportedNoiseFamily(
                "additive channel ships with Gaussian noise (discrete noise \
                 enters via the finite-alphabet channel)"
                    .into(),
            ))
        }
    };
    let channel = ObservationChannel::AdditiveGaussian {
        slope: h.slope,
        intercept: h.intercept,
        noise_mean,
        noise_std,
    };
    let carrier = match &signal {
        SignalKernel::Ar1 { .. } => StateCarrier::Real,
        SignalKernel::Matrix(_) => {
            return Err(Error::MismatchedSupport(
                "pair a matrix kernel with per-state noise via build_finite_hmm".into(),
            ))
        }
    };
    HmmModel::new(signal, channel, init, carrier)
}

/// Negative control: a deterministic 2-cycle signal (λ_* = 0, mixing fails)
/// with an uninformative channel (identical per-state observation laws).
/// Ergodic-looking dynamics, yet the wrong-prior filter never recovers.
pub fn build_nonmixing_control() -> HmmModel {
    let kernel = StochasticMatrix::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]])
        .expect("2-cycle is stochastic");
    let channel = ObservationChannel::PerStateGaussian {
        params: vec![(0.0, 1.0), (0.0, 1.0)],
    };
    let atoms = vec![0.0, 1.0];
    let init = Distribution::Finite(
        FiniteDistribution::uniform(atoms.clone()).expect("uniform init"),
    );
    HmmModel::new(
        SignalKernel::Matrix(kernel),
        channel,
        InitialLaw::Weights(init),
        StateCarrier::Finite(atoms),
    )
    .expect("control model is consistent")
}

// ---------------------------------------------------------------------------
// Stationary law
// ---------------------------------------------------------------------------

const STATIONARY_CAP: usize = 100_000;
const STATIONARY_TOL: f64 = 1e-13;
/// Residual the returned law must satisfy: ‖μΛ - μ‖₁ ≤ 1e-12.
pub const STATIONARY_RESIDUAL_TOL: f64 = 1e-12;
/// Dimension up to which all basis starts are iterated (strict ergodicity
/// detection); larger kernels use a single uniform start.
const STATIONARY_BUNDLE_DIM: usize = 32;

/// Stationary weights of a finite kernel by power iteration.
///
/// For small kernels every basis row is iterated simultaneously, which
/// detects reducibility (rows stagnate apart, e.g. the identity) and
/// periodicity (rows oscillate, e.g. the 2-cycle) and reports
/// `NoConvergence`. Large kernels — grid discretizations with strictly
/// positive rows — use a single uniform start.
pub fn stationary_weights(kernel: &StochasticMatrix) -> Result<Vec<f64>> {
    let d = kernel.dim();
    if d <= STATIONARY_BUNDLE_DIM {
        stationary_bundle(kernel)
    } else {
        stationary_single(kernel)
    }
}

fn stationary_bundle(kernel: &StochasticMatrix) -> Result<Vec<f64>> {
    let d = kernel.dim();
    // rows[r] tracks δ_r Λ^k
    let mut rows: Vec<Vec<f64>> = (0..d)
        .map(|r| {
            let mut v = vec![0.0; d];
            v[r] = 1.0;
            v
        })
        .collect();
    let mut prev = rows.clone();
    let mut prev2 = rows.clone();
    for iter in 0..STATIONARY_CAP {
        let mut next: Vec<Vec<f64>> = Vec::with_capacity(d);
        for row in &rows {
            let mut out = vec![0.0; d];
            kernel.propagate_into(row, &mut out);
            next.push(out);
        }
        let spread = row_spread(&next);
        if spread < STATIONARY_TOL {
            return polish(kernel, &next[0]);
        }
        let step = bundle_diff(&next, &rows);
        if step < 1e-15 {
            // Stagnated with rows still apart: reducible kernel.
            return Err(Error::NoConvergence);
        }
        if iter >= 2 && bundle_diff(&next, &prev2) < 1e-15 {
            // Period-2 oscillation: periodic kernel.
            return Err(Error::NoConvergence);
        }
        prev2 = std::mem::replace(&mut prev, rows);
        rows = next;
    }
    Err(Error::NoConvergence)
}

fn stationary_single(kernel: &StochasticMatrix) -> Result<Vec<f64>> {
    let d = kernel.dim();
    let mut mu = vec![1.0 / d as f64; d];
    let mut out = vec![0.0; d];
    let mut prev = mu.clone();
    for iter in 0..STATIONARY_CAP {
        kernel.propagate_into(&mu, &mut out);
        let step: f64 = out.iter().zip(&mu).map(|(a, b)| (a - b).abs()).sum();
        if step < STATIONARY_TOL {
            return polish(kernel, &out);
        }
        if iter >= 2 {
            let osc: f64 = out.iter().zip(&prev).map(|(a, b)| (a - b).abs()).sum();
            if osc < 1e-15 {
                return Err(Error::NoConvergence);
            }
        }
        prev.copy_from_slice(&mu);
        std::mem::swap(&mut mu, &mut out);
    }
    Err(Error::NoConvergence)
}

fn row_spread(rows: &[Vec<f64>]) -> f64 {
    let first = &rows[0];
    rows[1..]
        .iter()
        .map(|r| r.iter().zip(first).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn bundle_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn polish(kernel: &StochasticMatrix, start: &[f64]) -> Result<Vec<f64>> {
    let mut mu = normalize(start)?;
    let mut out = vec![0.0; mu.len()];
    for _ in 0..128 {
        kernel.propagate_into(&mu, &mut out);
        let step: f64 = out.iter().zip(&mu).map(|(a, b)| (a - b).abs()).sum();
        mu.copy_from_slice(&out);
        if step < 1e-16 {
            break;
        }
    }
    let mu = normalize(&mu)?;
    kernel.propagate_into(&mu, &mut out);
    let residual: f64 = out.iter().zip(&mu).map(|(a, b)| (a - b).abs()).sum();
    if residual > STATIONARY_RESIDUAL_TOL {
        return Err(Error::NoConvergence);
    }
    Ok(mu)
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

/// One simulated trajectory: `states[k] = X_k` for `k = 0..=n` and
/// `observations[k-1] = Y_k` for `k = 1..=n` (`Y_0 = 0` is implicit and
/// carries no information).
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPath {
    pub states: Vec<f64>,
    pub observations: Vec<f64>,
}

/// Simulate `n` steps from a fixed seed. Identical seeds give bit-identical
/// paths. Draw order per step: observation from the previous state, then the
/// state transition.
pub fn simulate_path(model: &HmmModel, n: usize, seed: u64) -> Result<SimulatedPath> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    simulate_path_with_rng(model, n, &mut rng)
}

/// Simulate with a caller-provided generator (one generator per trial).
pub fn simulate_path_with_rng<R: Rng + ?Sized>(
    model: &HmmModel,
    n: usize,
    rng: &mut R,
) -> Result<SimulatedPath> {
    let mut states = Vec::with_capacity(n + 1);
    let mut observations = Vec::with_capacity(n);
    // (value, index): finite carriers track the index for kernel rows.
    let (mut value, mut index) = sample_initial(model, rng)?;
    states.push(value);
    for _ in 0..n {
        let y = model.channel.sample(index, value, rng);
        observations.push(y);
        match &model.signal {
            SignalKernel::Matrix(m) => {
                let next = sample_index(m.row(index), rng);
                index = next;
                value = model
                    .points()
                    .expect("matrix kernel has a point carrier")[next];
            }
            SignalKernel::Ar1 { a, noise_std } => {
                let z: f64 = StandardNormal.sample(rng);
                value = a * value + noise_std * z;
            }
        }
        states.push(value);
    }
    Ok(SimulatedPath { states, observations })
}

fn sample_initial<R: Rng + ?Sized>(model: &HmmModel, rng: &mut R) -> Result<(f64, usize)> {
    match &model.init {
        InitialLaw::Weights(dist) => {
            let idx = sample_index(dist.weights(), rng);
            Ok((dist.points()[idx], idx))
        }
        InitialLaw::Sg(p) => Ok((sg_sample(p, rng), 0)),
        InitialLaw::Gaussian { mean, std } => {
            let z: f64 = StandardNormal.sample(rng);
            Ok((mean + std * z, 0))
        }
        InitialLaw::Point(x) => Ok((*x, 0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_state_gaussian() -> HmmModel {
        build_finite_hmm(
            vec![vec![0.7, 0.3], vec![0.3, 0.7]],
            vec![0.0, 1.0],
            vec![
                NoiseSpec::Gaussian { mean: 0.0, std: 1.0 },
                NoiseSpec::Gaussian { mean: 1.0, std: 1.0 },
            ],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn finite_hmm_gaussian_channel_density() {
        let m = two_state_gaussian();
        // standard normal at its mode
        assert_abs_diff_eq!(m.channel().density(0, 0.0, 0.0), 0.39894228040143267, epsilon = 1e-11);
        assert_abs_diff_eq!(m.channel().density(1, 1.0, 1.0), 0.39894228040143267, epsilon = 1e-11);
    }

    #[test]
    fn bad_row_sum_is_rejected() {
        let r = build_finite_hmm(
            vec![vec![0.6, 0.3], vec![0.3, 0.7]],
            vec![0.0, 1.0],
            vec![
                NoiseSpec::Gaussian { mean: 0.0, std: 1.0 },
                NoiseSpec::Gaussian { mean: 1.0, std: 1.0 },
            ],
            vec![0.5, 0.5],
        );
        assert!(matches!(r, Err(Error::BadStochasticMatrix(_))));
    }

    #[test]
    fn identical_noise_builds_uninformative_channel() {
        let m = build_finite_hmm(
            vec![vec![0.7, 0.3], vec![0.3, 0.7]],
            vec![0.0, 1.0],
            vec![
                NoiseSpec::Gaussian { mean: 0.5, std: 2.0 },
                NoiseSpec::Gaussian { mean: 0.5, std: 2.0 },
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        for y in [-1.0, 0.0, 2.5] {
            assert_eq!(m.channel().density(0, 0.0, y), m.channel().density(1, 1.0, y));
        }
    }

    #[test]
    fn mixed_noise_families_are_rejected() {
        let r = build_finite_hmm(
            vec![vec![0.7, 0.3], vec![0.3, 0.7]],
            vec![0.0, 1.0],
            vec![
                NoiseSpec::Gaussian { mean: 0.0, std: 1.0 },
                NoiseSpec::Discrete { values: vec![0.0, 1.0], probs: vec![0.5, 0.5] },
            ],
            vec![0.5, 0.5],
        );
        assert!(matches!(r, Err(Error::UnsupportedNoiseFamily(_))));
    }

    #[test]
    fn mult_noise_channel_values() {
        let p = MultNoiseParams::new(0.8, 0.5, 1.0, SgParams::gaussian(1.0).unwrap()).unwrap();
        let m = build_mult_noise_model(p).unwrap();
        // γ(2, 2) = p(1)/2 = ρ e^{-ρ}/2 at ρ = 1
        assert_abs_diff_eq!(
            m.channel().density(0, 2.0, 2.0),
            (-1.0f64).exp() / 2.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(m.channel().density(0, 2.0, 2.0), 0.18394, epsilon = 1e-5);
        // γ(1, 0) = p(0) = 0
        assert_eq!(m.channel().density(0, 1.0, 0.0), 0.0);
    }

    #[test]
    fn additive_model_density_at_mode() {
        let m = build_additive_model(
            SignalKernel::ar1(0.8, 0.5).unwrap(),
            LinearObservation::identity(),
            NoiseSpec::Gaussian { mean: 0.0, std: 2.0 },
            InitialLaw::Gaussian { mean: 0.0, std: 1.0 },
        )
        .unwrap();
        // γ(1, 1) = 1/(σ√(2π))
        assert_abs_diff_eq!(
            m.channel().density(0, 1.0, 1.0),
            1.0 / (2.0 * (2.0 * std::f64::consts::PI).sqrt()),
            epsilon = 1e-14
        );
    }

    #[test]
    fn channel_rows_integrate_to_one() {
        let m = two_state_gaussian();
        for idx in 0..2 {
            let total = m.channel().integrate_g(idx, idx as f64, &|_| 1.0).unwrap();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-8);
        }
        let mult = build_mult_noise_model(
            MultNoiseParams::new(0.8, 0.5, 1.0, SgParams::gaussian(1.0).unwrap()).unwrap(),
        )
        .unwrap();
        for x in [-2.0, 0.5, 3.0] {
            let total = mult.channel().integrate_g(0, x, &|_| 1.0).unwrap();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn nonmixing_control_shape() {
        let m = build_nonmixing_control();
        let k = m.kernel_matrix().unwrap();
        assert_eq!(k.min_entry(), 0.0);
        assert_eq!(k.entry(0, 1), 1.0);
        assert_eq!(k.entry(1, 0), 1.0);
        // channel identical across states
        assert_eq!(m.channel().density(0, 0.0, 0.3), m.channel().density(1, 1.0, 0.3));
    }

    #[test]
    fn stationary_symmetric_kernel_is_uniform() {
        let k = StochasticMatrix::new(vec![vec![0.7, 0.3], vec![0.3, 0.7]]).unwrap();
        let mu = stationary_weights(&k).unwrap();
        assert_abs_diff_eq!(mu[0], 0.5, epsilon = 1e-13);
        assert_abs_diff_eq!(mu[1], 0.5, epsilon = 1e-13);
    }

    #[test]
    fn stationary_asymmetric_kernel_matches_balance_equations() {
        // mu = (5/6, 1/6) solves mu = mu * [[0.9,0.1],[0.5,0.5]]
        let k = StochasticMatrix::new(vec![vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
        let mu = stationary_weights(&k).unwrap();
        assert_abs_diff_eq!(mu[0], 5.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mu[1], 1.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn stationary_rejects_reducible_and_periodic_kernels() {
        let identity = StochasticMatrix::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(stationary_weights(&identity), Err(Error::NoConvergence)));
        let cycle = StochasticMatrix::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(stationary_weights(&cycle), Err(Error::NoConvergence)));
    }

    #[test]
    fn simulation_is_deterministic_per_seed() {
        let m = two_state_gaussian();
        let p1 = simulate_path(&m, 50, 1234).unwrap();
        let p2 = simulate_path(&m, 50, 1234).unwrap();
        assert_eq!(p1, p2);
        let p3 = simulate_path(&m, 50, 1235).unwrap();
        assert_ne!(p1.observations, p3.observations);
        assert_eq!(p1.states.len(), 51);
        assert_eq!(p1.observations.len(), 50);
    }

    #[test]
    fn identity_kernel_freezes_the_state() {
        let m = build_finite_hmm(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![3.0, 7.0],
            vec![
                NoiseSpec::Gaussian { mean: 0.0, std: 1.0 },
                NoiseSpec::Gaussian { mean: 1.0, std: 1.0 },
            ],
            vec![1.0, 0.0],
        )
        .unwrap();
        let p = simulate_path(&m, 20, 9).unwrap();
        assert!(p.states.iter().all(|&x| x == 3.0));
    }

    #[test]
    fn finite_hmm_marginal_matches_matrix_powers() {
        // Empirical law of X_2 over many seeds vs ν Λ².
        let m = two_state_gaussian();
        let trials = 100_000;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(777);
        let mut count1 = 0usize;
        for _ in 0..trials {
            let p = simulate_path_with_rng(&m, 2, &mut rng).unwrap();
            if p.states[2] == 1.0 {
                count1 += 1;
            }
        }
        // ν Λ² = (0.5, 0.5) for the symmetric kernel.
        let phat = count1 as f64 / trials as f64;
        let se = (0.25f64 / trials as f64).sqrt();
        assert!((phat - 0.5).abs() < 3.0 * se, "phat={phat}");
    }

    #[test]
    fn gaussian_moments_by_quadrature() {
        let g = NoiseSpec::Gaussian { mean: 1.0, std: 1.0 };
        assert_abs_diff_eq!(g.raw_moment(1).unwrap(), 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(g.raw_moment(2).unwrap(), 2.0, epsilon = 1e-8);
        let z = NoiseSpec::Gaussian { mean: 0.0, std: 1.0 };
        assert_abs_diff_eq!(z.raw_moment(1).unwrap(), 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(z.raw_moment(4).unwrap(), 3.0, epsilon = 1e-7);
    }

    #[test]
    fn quantized_channel_rows_are_stochastic() {
        let m = two_state_gaussian();
        let q = m
            .channel()
            .quantize_gaussian(&[-1.0, 0.0, 1.0], vec![-2.0, -0.5, 0.5, 2.0])
            .unwrap();
        if let ObservationChannel::FiniteAlphabet { gamma, .. } = &q {
            for row in gamma {
                assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            }
        } else {
            panic!("expected finite alphabet");
        }
    }

    #[test]
    fn multiplicative_carrier_must_avoid_zero() {
        let r = HmmModel::new(
            SignalKernel::matrix(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap(),
            ObservationChannel::Multiplicative { rho: 1.0 },
            InitialLaw::Point(1.0),
            StateCarrier::Finite(vec![0.0, 1.0]),
        );
        assert!(r.is_err());
    }
}
