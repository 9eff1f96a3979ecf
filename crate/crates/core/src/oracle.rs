//! Independent ground truths for the filter recursion.
//!
//! * [`enumerate_posterior`] sums the joint law over every signal path — no
//!   recursion, no normalizer bookkeeping — and is the reference the filter
//!   is held against on small finite models.
//! * [`kalman_oracle`] is the exact conjugate-Gaussian recursion for the
//!   linear observation model, written for the lagged-observation timing
//!   (`Y_n` is emitted from `X_{n-1}`, so the measurement update applies to
//!   the one-step-lagged state before propagation).

use crate::measure::Distribution;
use crate::models::HmmModel;
use crate::{Error, Result};

/// Cap on `d^n` enumeration terms.
pub const ENUM_TERM_CAP: f64 = 1e7;

/// Everything one exhaustive walk over the signal paths yields: the path
/// density `p(y_1..y_n)`, the terminal posterior `P(X_n | y_1..y_n)` and the
/// initial-state posterior `P(X_0 | y_1..y_n)`.
#[derive(Debug, Clone)]
pub struct EnumeratedPosterior {
    pub path_density: f64,
    pub terminal: Distribution,
    pub initial: Distribution,
}

/// Exhaustively enumerate all `d^(n+1)` signal paths of a finite model
/// against a fixed observation path. `TooLarge` when `d^n` exceeds
/// [`ENUM_TERM_CAP`]; `ZeroLikelihood` when the path has probability zero
/// under the model.
pub fn enumerate_posterior(model: &HmmModel, ys: &[f64]) -> Result<EnumeratedPosterior> {
    let kernel = model
        .kernel_matrix()
        .ok_or_else(|| Error::MismatchedSupport("enumeration needs a finite model".into()))?;
    let init = model
        .init_distribution()
        .ok_or_else(|| Error::MismatchedSupport("enumeration needs explicit init weights".into()))?;
    let points = model.points().expect("finite carrier");
    let d = points.len();
    let n = ys.len();
    let terms = (d as f64).powi(n as i32);
    if terms > ENUM_TERM_CAP {
        return Err(Error::TooLarge { terms, cap: ENUM_TERM_CAP });
    }

    let mut terminal = vec![0.0; d];
    let mut initial = vec![0.0; d];
    let mut total = 0.0;

    // Depth-first product accumulation; factors at step k are
    // γ(x_{k-1}, y_k) Λ(x_{k-1}, x_k).
    struct Walk<'a> {
        model: &'a HmmModel,
        kernel: &'a crate::models::StochasticMatrix,
        points: &'a [f64],
        ys: &'a [f64],
        terminal: &'a mut [f64],
        initial: &'a mut [f64],
        total: &'a mut f64,
    }

    impl Walk<'_> {
        fn descend(&mut self, k: usize, x: usize, x0: usize, prod: f64) {
            if prod == 0.0 {
                return;
            }
            if k == self.ys.len() {
                self.terminal[x] += prod;
                self.initial[x0] += prod;
                *self.total += prod;
                return;
            }
            let gy = self.model.channel().density(x, self.points[x], self.ys[k]);
            if gy == 0.0 {
                return;
            }
            for x_next in 0..self.points.len() {
                let lam = self.kernel.entry(x, x_next);
                self.descend(k + 1, x_next, x0, prod * gy * lam);
            }
        }
    }

    let mut walk = Walk {
        model,
        kernel,
        points,
        ys,
        terminal: &mut terminal,
        initial: &mut initial,
        total: &mut total,
    };
    for x0 in 0..d {
        let w = init.weights()[x0];
        walk.descend(0, x0, x0, w);
    }

    if total <= 0.0 {
        return Err(Error::ZeroLikelihood { step: n });
    }
    let term = crate::measure::normalize(&terminal)?;
    let ini = crate::measure::normalize(&initial)?;
    Ok(EnumeratedPosterior {
        path_density: total,
        terminal: init.with_weights(term)?,
        initial: init.with_weights(ini)?,
    })
}

/// Exact `P(X_n = · | y_1..y_n)` by path enumeration.
pub fn enumerate_posterior_oracle(model: &HmmModel, ys: &[f64]) -> Result<Distribution> {
    Ok(enumerate_posterior(model, ys)?.terminal)
}

/// Exact density of the observation path, `p(y_1..y_n)`, by enumeration.
pub fn enumerate_path_density(model: &HmmModel, ys: &[f64]) -> Result<f64> {
    Ok(enumerate_posterior(model, ys)?.path_density)
}

/// Exact filter state for the linear-Gaussian model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub mean: f64,
    pub variance: f64,
}

/// Exact conditional means and variances of `X_n` given `Y_1..Y_n` for
/// `X_n = a X_{n-1} + θ_n`, `θ ~ N(0, b²)`, `Y_n = X_{n-1} + ξ_n`,
/// `ξ ~ N(0, obs_noise_std²)`, `X_0 ~ N(prior_mean, prior_var)`.
///
/// Returns `n + 1` states; entry 0 is the prior. Each step first updates the
/// lagged state `X_{n-1}` with `Y_n`, then propagates through the signal.
/// An infinite `obs_noise_std` turns the update off (open-loop propagation).
pub fn kalman_oracle(
    a: f64,
    b: f64,
    obs_noise_std: f64,
    prior_mean: f64,
    prior_var: f64,
    ys: &[f64],
) -> Vec<KalmanState> {
    let r = obs_noise_std * obs_noise_std;
    let mut states = Vec::with_capacity(ys.len() + 1);
    let mut mean = prior_mean;
    let mut var = prior_var;
    states.push(KalmanState { mean, variance: var });
    for &y in ys {
        let gain = if r.is_infinite() { 0.0 } else { var / (var + r) };
        let updated_mean = mean + gain * (y - mean);
        let updated_var = (1.0 - gain) * var;
        mean = a * updated_mean;
        var = a * a * updated_var + b * b;
        states.push(KalmanState { mean, variance: var });
    }
    states
}
