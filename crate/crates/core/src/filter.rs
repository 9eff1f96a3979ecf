//! The nonlinear filter recursion and its supporting machinery.
//!
//! One step of the recursion maps the posterior of `X_{n-1}` given
//! `Y_1..Y_{n-1}` to the posterior of `X_n` given `Y_1..Y_n`:
//! weight the current posterior by the observation density `γ(·, Y_n)`,
//! normalize (the normalizer `c_n` is the one-step predictive density of
//! `Y_n`), then propagate through the signal kernel.
//!
//! Channel likelihoods are evaluated in log space and shifted by their
//! maximum before exponentiating. Absolute normalizers are carried as
//! `log c_n`, so products of normalizers along a long path never underflow,
//! and `ZeroLikelihood` fires only when the observation density is exactly
//! zero on the whole support of the running posterior — the 0/0 surface of
//! an inadmissible initialization (or a grid that truncated the state away),
//! not a floating-point artifact.

use serde::{Deserialize, Serialize};

use crate::measure::{Distribution, GridDistribution};
use crate::models::{HmmModel, InitialLaw, SignalKernel, StateCarrier, StochasticMatrix};
use crate::numeric::{compensated_sum, normal_cdf};
use crate::sg::sg_cell_masses;
use crate::{Error, Result};

/// Fraction of the signal's stationary mass the grid may truncate.
pub const MASS_LEAK_TOL: f64 = 1e-6;

/// Uniform grid specification for discretizing continuous models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::ConfigInvalid {
                field: "grid".into(),
                reason: format!("need lo < hi, got [{lo}, {hi}]"),
            });
        }
        if cells < 16 {
            return Err(Error::ConfigInvalid {
                field: "grid.cells".into(),
                reason: format!("need at least 16 cells, got {cells}"),
            });
        }
        Ok(Self { lo, hi, cells })
    }

    pub fn cell_width(&self) -> f64 {
        (self.hi - self.lo) / self.cells as f64
    }

    pub fn edges(&self) -> Vec<f64> {
        let h = self.cell_width();
        (0..=self.cells).map(|i| self.lo + h * i as f64).collect()
    }

    pub fn midpoints(&self) -> Vec<f64> {
        let h = self.cell_width();
        (0..self.cells)
            .map(|i| self.lo + h * (i as f64 + 0.5))
            .collect()
    }
}

/// Posteriors and normalizers along one observation path.
///
/// `posteriors[k]` is `π_k` (so `posteriors[0]` is the initial law) and
/// `log_normalizers[k-1] = ln c_k`. Linear normalizers are exposed for
/// convenience but the log values are authoritative on long paths.
#[derive(Debug, Clone)]
pub struct FilterTrajectory {
    posteriors: Vec<Distribution>,
    log_normalizers: Vec<f64>,
    renorm_drift: f64,
}

impl FilterTrajectory {
    pub fn posteriors(&self) -> &[Distribution] {
        &self.posteriors
    }

    pub fn last(&self) -> &Distribution {
        self.posteriors.last().expect("trajectory holds at least the initial law")
    }

    /// Number of assimilated observations.
    pub fn steps(&self) -> usize {
        self.log_normalizers.len()
    }

    pub fn log_normalizers(&self) -> &[f64] {
        &self.log_normalizers
    }

    /// `c_1..c_n` in linear scale.
    pub fn normalizers(&self) -> Vec<f64> {
        self.log_normalizers.iter().map(|l| l.exp()).collect()
    }

    /// `Σ_k ln c_k`, the log-likelihood of the observation path under the
    /// model started from this trajectory's initial law.
    pub fn log_likelihood(&self) -> f64 {
        compensated_sum(&self.log_normalizers)
    }

    /// Accumulated `|ln(mass after propagation)|` — how much mass the
    /// per-step renormalization restored. A health diagnostic for grids.
    pub fn renorm_drift(&self) -> f64 {
        self.renorm_drift
    }
}

/// Observation-path likelihood ratio `ρ_n` between two trajectories run on
/// the same path: `ρ_n = Π_{k≤n} c_k / c̄_k`, accumulated in log space.
/// `ρ_0 = 1` by the `Y_0 = 0` convention.
#[derive(Debug, Clone)]
pub struct RhoSeries {
    values: Vec<f64>,
    log_values: Vec<f64>,
}

impl RhoSeries {
    /// `ρ_0..ρ_n`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }
}

// ---------------------------------------------------------------------------
// Core step
// ---------------------------------------------------------------------------

/// Precomputed references for running the recursion on a finite/grid model.
pub(crate) struct FilterEngine<'a> {
    model: &'a HmmModel,
    kernel: &'a StochasticMatrix,
    points: &'a [f64],
}

/// Mutable per-trajectory scratch reused across steps.
pub(crate) struct StepBuffers {
    pub log_gamma: Vec<f64>,
    pub weighted: Vec<f64>,
    pub weighted_b: Vec<f64>,
    pub out: Vec<f64>,
    pub out_b: Vec<f64>,
}

impl StepBuffers {
    pub fn new(d: usize) -> Self {
        Self {
            log_gamma: vec![0.0; d],
            weighted: vec![0.0; d],
            weighted_b: vec![0.0; d],
            out: vec![0.0; d],
            out_b: vec![0.0; d],
        }
    }
}

impl<'a> FilterEngine<'a> {
    pub fn new(model: &'a HmmModel) -> Result<Self> {
        let kernel = model.kernel_matrix().ok_or_else(|| {
            Error::MismatchedSupport(
                "the filter runs on finite or grid models; discretize continuous models first"
                    .into(),
            )
        })?;
        let points = model
            .points()
            .expect("matrix kernel always has a point carrier");
        Ok(Self { model, kernel, points })
    }

    pub fn dim(&self) -> usize {
        self.points.len()
    }

    fn log_likelihoods_into(&self, y: f64, out: &mut [f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for (i, (&x, o)) in self.points.iter().zip(out.iter_mut()).enumerate() {
            let l = self.model.channel().log_density(i, x, y);
            *o = l;
            if l > max {
                max = l;
            }
        }
        max
    }

    /// One filter step in place. Returns `(log c, renorm drift increment)`.
    pub fn step(
        &self,
        pi: &mut [f64],
        y: f64,
        step_index: usize,
        buf: &mut StepBuffers,
    ) -> Result<(f64, f64)> {
        let max_ll = self.log_likelihoods_into(y, &mut buf.log_gamma);
        if max_ll == f64::NEG_INFINITY {
            return Err(Error::ZeroLikelihood { step: step_index });
        }
        let mut mass = 0.0;
        for ((w, &lg), &p) in buf.weighted.iter_mut().zip(&buf.log_gamma).zip(pi.iter()) {
            let v = p * (lg - max_ll).exp();
            *w = v;
            mass += v;
        }
        if mass <= 0.0 {
            return Err(Error::ZeroLikelihood { step: step_index });
        }
        let log_c = max_ll + mass.ln();
        let inv = 1.0 / mass;
        for w in buf.weighted.iter_mut() {
            *w *= inv;
        }
        self.kernel.propagate_into(&buf.weighted, &mut buf.out);
        let total = compensated_sum(&buf.out);
        let drift = total.ln().abs();
        let renorm = 1.0 / total;
        for (p, &o) in pi.iter_mut().zip(&buf.out) {
            *p = o * renorm;
        }
        Ok((log_c, drift))
    }

    /// One step of the paired true/wrong-prior filters on the same
    /// observation: channel likelihoods are evaluated once and the kernel
    /// matrix is traversed once. Returns `(log c, log c̄)`.
    pub fn step_pair(
        &self,
        pi_true: &mut [f64],
        pi_wrong: &mut [f64],
        y: f64,
        step_index: usize,
        buf: &mut StepBuffers,
    ) -> Result<(f64, f64)> {
        let max_ll = self.log_likelihoods_into(y, &mut buf.log_gamma);
        if max_ll == f64::NEG_INFINITY {
            return Err(Error::ZeroLikelihood { step: step_index });
        }
        let mut mass_a = 0.0;
        let mut mass_b = 0.0;
        for (i, &lg) in buf.log_gamma.iter().enumerate() {
            let e = (lg - max_ll).exp();
            let va = pi_true[i] * e;
            let vb = pi_wrong[i] * e;
            buf.weighted[i] = va;
            buf.weighted_b[i] = vb;
            mass_a += va;
            mass_b += vb;
        }
        if mass_a <= 0.0 || mass_b <= 0.0 {
            return Err(Error::ZeroLikelihood { step: step_index });
        }
        let (inv_a, inv_b) = (1.0 / mass_a, 1.0 / mass_b);
        for (wa, wb) in buf.weighted.iter_mut().zip(buf.weighted_b.iter_mut()) {
            *wa *= inv_a;
            *wb *= inv_b;
        }
        self.kernel
            .propagate_pair_into(&buf.weighted, &buf.weighted_b, &mut buf.out, &mut buf.out_b);
        let ta = compensated_sum(&buf.out);
        let tb = compensated_sum(&buf.out_b);
        let (ra, rb) = (1.0 / ta, 1.0 / tb);
        for (p, &o) in pi_true.iter_mut().zip(&buf.out) {
            *p = o * ra;
        }
        for (p, &o) in pi_wrong.iter_mut().zip(&buf.out_b) {
            *p = o * rb;
        }
        Ok((max_ll + mass_a.ln(), max_ll + mass_b.ln()))
    }
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// Propagate a distribution one step through the signal kernel (the
/// prediction factor of the recursion, with no observation weighting).
pub fn predict(pi: &Distribution, kernel: &SignalKernel) -> Result<Distribution> {
    match (kernel, pi) {
        (SignalKernel::Matrix(m), _) => {
            if m.dim() != pi.len() {
                return Err(Error::MismatchedSupport(format!(
                    "kernel dim {} vs {} support points",
                    m.dim(),
                    pi.len()
                )));
            }
            let mut out = vec![0.0; pi.len()];
            m.propagate_into(pi.weights(), &mut out);
            pi.with_weights(crate::measure::normalize(&out)?)
        }
        (SignalKernel::Ar1 { a, noise_std }, Distribution::Grid(g)) => {
            // Exact cell masses of the Gaussian transition from each source
            // midpoint, accumulated against the source cell masses.
            let h = g.cell_width();
            let mids = g.grid();
            let lo_edge = mids[0] - 0.5 * h;
            let mut out = vec![0.0; mids.len()];
            for (&m_i, &w) in mids.iter().zip(g.cell_weights()) {
                if w == 0.0 {
                    continue;
                }
                let center = a * m_i;
                let mut prev = normal_cdf(lo_edge, center, *noise_std);
                for (j, o) in out.iter_mut().enumerate() {
                    let edge = lo_edge + h * (j + 1) as f64;
                    let cur = normal_cdf(edge, center, *noise_std);
                    *o += w * (cur - prev);
                    prev = cur;
                }
            }
            let weights = crate::measure::normalize(&out)?;
            Ok(Distribution::Grid(GridDistribution::new(
                mids.to_vec(),
                weights,
                h,
            )?))
        }
        (SignalKernel::Ar1 { .. }, Distribution::Finite(_)) => Err(Error::MismatchedSupport(
            "AR(1) prediction needs a grid distribution".into(),
        )),
    }
}

/// One Bayes update + propagation. Returns the new posterior and the
/// normalizer `c = ∫ γ(v, y) π_prev(dv)` (linear scale; [`run_filter`]
/// accumulates in log scale along paths).
pub fn filter_step(
    model: &HmmModel,
    pi_prev: &Distribution,
    y: f64,
) -> Result<(Distribution, f64)> {
    let engine = FilterEngine::new(model)?;
    check_carrier(model, pi_prev)?;
    let mut buf = StepBuffers::new(engine.dim());
    let mut pi = pi_prev.weights().to_vec();
    let (log_c, _) = engine.step(&mut pi, y, 1, &mut buf)?;
    Ok((pi_prev.with_weights(pi)?, log_c.exp()))
}

/// Run the filter along an observation path, starting from `init`.
/// `ys[k-1]` is the observation `Y_k`. Fails with the step index on a
/// zero-likelihood observation.
pub fn run_filter(model: &HmmModel, init: &Distribution, ys: &[f64]) -> Result<FilterTrajectory> {
    let engine = FilterEngine::new(model)?;
    check_carrier(model, init)?;
    let mut buf = StepBuffers::new(engine.dim());
    let mut pi = init.weights().to_vec();
    let mut posteriors = Vec::with_capacity(ys.len() + 1);
    posteriors.push(init.clone());
    let mut log_normalizers = Vec::with_capacity(ys.len());
    let mut drift = 0.0;
    for (k, &y) in ys.iter().enumerate() {
        let (log_c, d) = engine.step(&mut pi, y, k + 1, &mut buf)?;
        log_normalizers.push(log_c);
        drift += d;
        posteriors.push(init.with_weights(pi.clone())?);
    }
    Ok(FilterTrajectory { posteriors, log_normalizers, renorm_drift: drift })
}

fn check_carrier(model: &HmmModel, pi: &Distribution) -> Result<()> {
    let points = model
        .points()
        .ok_or_else(|| Error::MismatchedSupport("model has no point carrier".into()))?;
    if pi.points() != points {
        return Err(Error::MismatchedSupport(
            "distribution carrier differs from the model carrier".into(),
        ));
    }
    Ok(())
}

/// One-step predictor `η(g) = ∫∫ g(y) γ(x, y) φ(dy) π(dx)`: the conditional
/// expectation of `g(Y_n)` given the observations through `n-1` when `π` is
/// the time-(n-1) posterior.
pub fn predictor<F: Fn(f64) -> f64>(
    model: &HmmModel,
    pi_prev: &Distribution,
    g: &F,
) -> Result<f64> {
    check_carrier(model, pi_prev)?;
    let mut acc = 0.0;
    for (i, (&x, &w)) in pi_prev
        .points()
        .iter()
        .zip(pi_prev.weights())
        .enumerate()
    {
        if w == 0.0 {
            continue;
        }
        acc += w * model.channel().integrate_g(i, x, g)?;
    }
    if acc.is_finite() {
        Ok(acc)
    } else {
        Err(Error::NonFiniteResult("predictor integral".into()))
    }
}

/// Tabulate `x ↦ ∫ g(y) γ(x, y) φ(dy)` on the model carrier. The per-step
/// predictor then reduces to a dot product with the posterior weights.
pub fn predictor_profile<F: Fn(f64) -> f64>(model: &HmmModel, g: &F) -> Result<Vec<f64>> {
    let points = model
        .points()
        .ok_or_else(|| Error::MismatchedSupport("model has no point carrier".into()))?;
    points
        .iter()
        .enumerate()
        .map(|(i, &x)| model.channel().integrate_g(i, x, g))
        .collect()
}

/// Likelihood ratio of the observation path under the two initial laws:
/// `ρ_n = Π_{k≤n} c_k(ν) / c_k(ν̄)`. Both trajectories must come from the
/// same path. The products are accumulated in log space.
pub fn likelihood_ratio(
    traj_true: &FilterTrajectory,
    traj_wrong: &FilterTrajectory,
) -> Result<RhoSeries> {
    if traj_true.steps() != traj_wrong.steps() {
        return Err(Error::MismatchedSupport(format!(
            "trajectories have {} vs {} steps",
            traj_true.steps(),
            traj_wrong.steps()
        )));
    }
    let n = traj_true.steps();
    let mut log_values = Vec::with_capacity(n + 1);
    let mut values = Vec::with_capacity(n + 1);
    log_values.push(0.0);
    values.push(1.0);
    let mut acc = crate::numeric::CompensatedSum::new();
    for k in 0..n {
        let lc = traj_true.log_normalizers[k];
        let lc_bar = traj_wrong.log_normalizers[k];
        if !lc_bar.is_finite() {
            return Err(Error::ZeroRho { step: k + 1 });
        }
        acc.add(lc - lc_bar);
        let lv = acc.value();
        log_values.push(lv);
        values.push(lv.exp());
    }
    Ok(RhoSeries { values, log_values })
}

// ---------------------------------------------------------------------------
// Discretization
// ---------------------------------------------------------------------------

/// Discretize a continuous model onto a uniform grid: the kernel matrix rows
/// are exact Gaussian transition masses of the target cells from each source
/// midpoint (CDF differences, renormalized), the channel is evaluated at
/// midpoints, and the initial law is gridded. Fails with `MassLeak` when the
/// grid truncates more than `MASS_LEAK_TOL` of the signal's stationary mass.
pub fn discretize(model: &HmmModel, gs: &GridSpec) -> Result<HmmModel> {
    let (a, b) = match model.signal() {
        SignalKernel::Ar1 { a, noise_std } => (*a, *noise_std),
        SignalKernel::Matrix(_) => {
            return Err(Error::MismatchedSupport(
                "model is already finite".into(),
            ))
        }
    };
    let stationary_std = b / (1.0 - a * a).sqrt();
    let inside =
        normal_cdf(gs.hi, 0.0, stationary_std) - normal_cdf(gs.lo, 0.0, stationary_std);
    let lost = 1.0 - inside;
    if lost > MASS_LEAK_TOL {
        return Err(Error::MassLeak { lost, tol: MASS_LEAK_TOL });
    }
    let mids = gs.midpoints();
    let edges = gs.edges();
    let d = gs.cells;
    let mut rows = vec![0.0; d * d];
    for (i, &m_i) in mids.iter().enumerate() {
        let center = a * m_i;
        let row = &mut rows[i * d..(i + 1) * d];
        let mut prev = normal_cdf(edges[0], center, b);
        for (j, r) in row.iter_mut().enumerate() {
            let cur = normal_cdf(edges[j + 1], center, b);
            *r = (cur - prev).max(0.0);
            prev = cur;
        }
    }
    let kernel = StochasticMatrix::from_rows_renormalized(rows, d)?;
    let init = grid_initial_law(model.init(), gs)?;
    HmmModel::new(
        SignalKernel::Matrix(kernel),
        model.channel().clone(),
        InitialLaw::Weights(Distribution::Grid(init.clone())),
        StateCarrier::Grid {
            lo: gs.lo,
            hi: gs.hi,
            cell_width: gs.cell_width(),
            midpoints: mids,
        },
    )
}

/// Grid an initial law as exact (Gaussian) or Simpson (SG) cell masses.
pub fn grid_initial_law(init: &InitialLaw, gs: &GridSpec) -> Result<GridDistribution> {
    let mids = gs.midpoints();
    let edges = gs.edges();
    let h = gs.cell_width();
    let weights = match init {
        InitialLaw::Gaussian { mean, std } => {
            let mut masses = Vec::with_capacity(gs.cells);
            let mut prev = normal_cdf(edges[0], *mean, *std);
            for j in 0..gs.cells {
                let cur = normal_cdf(edges[j + 1], *mean, *std);
                masses.push((cur - prev).max(0.0));
                prev = cur;
            }
            crate::measure::normalize(&masses)?
        }
        InitialLaw::Sg(p) => sg_cell_masses(&edges, p)?,
        InitialLaw::Point(x) => {
            if *x < gs.lo || *x > gs.hi {
                return Err(Error::MassLeak { lost: 1.0, tol: MASS_LEAK_TOL });
            }
            let mut masses = vec![0.0; gs.cells];
            let idx = mids
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    (**a - x).abs().partial_cmp(&(**b - x).abs()).unwrap()
                })
                .map(|(i, _)| i)
                .unwrap();
            masses[idx] = 1.0;
            masses
        }
        InitialLaw::Weights(Distribution::Grid(g)) => {
            if g.grid() != mids.as_slice() {
                return Err(Error::MismatchedSupport(
                    "weights were gridded on a different grid".into(),
                ));
            }
            g.cell_weights().to_vec()
        }
        InitialLaw::Weights(Distribution::Finite(_)) => {
            return Err(Error::MismatchedSupport(
                "finite-alphabet initial law cannot be gridded".into(),
            ))
        }
    };
    GridDistribution::new(mids, weights, h)
}
