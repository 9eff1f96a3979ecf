//! Per-step stability metrics along observation paths.
//!
//! Each series holds Monte-Carlo (or exactly enumerated) estimates of one
//! mismatch metric between the true-prior filter `π` and the wrong-prior
//! filter `π̄`, both run on the same observations:
//!
//! * `weak-f`:      `E |π_n(f) - π̄_n(f)|`
//! * `tv`:          `E ‖π_n - π̄_n‖_tv`
//! * `predictor-g`: `E |η_{n|n-1}(g) - η̄_{n|n-1}(g)|`
//! * `rho-diff`:    `Ē |ρ_n - ρ_{n-1}|` (expectation under the wrong-prior
//!   law — the martingale-increment bound on the predictor mismatch)
//! * `char-t`:      `E |π_n(e^{itx}) - π̄_n(e^{itx})|` per frequency `t`
//!
//! Except for `rho-diff`, paths are drawn under the TRUE law (that is the
//! expectation in the stability statements); both filters consume the
//! identical path, which the metric requires and which also slashes the
//! Monte-Carlo variance. Trials derive independent generators from
//! `(master seed, trial index)` and aggregation runs in trial order with
//! compensated summation, so results do not depend on worker scheduling.

use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::filter::{discretize, grid_initial_law, predictor_profile, FilterEngine, GridSpec, StepBuffers};
use crate::harness::derive_seed;
use crate::measure::{density_ratio, DensityRatio, Distribution};
use crate::models::{simulate_path_with_rng, HmmModel, InitialLaw};
use crate::numeric::CompensatedSum;
use crate::{Error, Result};

/// Named scalar function families, declarable in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScalarFn {
    /// `c_0 + c_1 x + c_2 x² + ...`
    Polynomial { coeffs: Vec<f64> },
    /// `scale · |x|`
    Abs {
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// `1` on `[lo, hi]`, else `0`.
    Indicator { lo: f64, hi: f64 },
}

fn default_scale() -> f64 {
    1.0
}

impl ScalarFn {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ScalarFn::Polynomial { coeffs } => {
                let mut acc = 0.0;
                for &c in coeffs.iter().rev() {
                    acc = acc * x + c;
                }
                acc
            }
            ScalarFn::Abs { scale } => scale * x.abs(),
            ScalarFn::Indicator { lo, hi } => {
                if x >= *lo && x <= *hi {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Max |f| over a finite point set.
    pub fn sup_on(&self, points: &[f64]) -> f64 {
        points
            .iter()
            .map(|&x| self.eval(x).abs())
            .fold(0.0, f64::max)
    }

    /// Whether |f| is bounded over the whole real line.
    pub fn bounded_on_reals(&self) -> bool {
        match self {
            ScalarFn::Polynomial { coeffs } => {
                coeffs.iter().skip(1).all(|&c| c == 0.0)
            }
            ScalarFn::Abs { .. } => false,
            ScalarFn::Indicator { .. } => true,
        }
    }

    /// Polynomial growth order (for the moment checks).
    pub fn growth_order(&self) -> usize {
        match self {
            ScalarFn::Polynomial { coeffs } => {
                coeffs.iter().rposition(|&c| c != 0.0).unwrap_or(0)
            }
            ScalarFn::Abs { .. } => 1,
            ScalarFn::Indicator { .. } => 0,
        }
    }

    pub fn label(&self) -> String {
        match self {
            ScalarFn::Polynomial { coeffs } => format!("poly{coeffs:?}"),
            ScalarFn::Abs { scale } => format!("{scale}*abs(x)"),
            ScalarFn::Indicator { lo, hi } => format!("ind[{lo},{hi}]"),
        }
    }
}

/// Metric identifiers, also the CSV `metric_kind` column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    WeakF,
    Tv,
    PredictorG,
    RhoDiff,
    CharT,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::WeakF => "weak-f",
            MetricKind::Tv => "tv",
            MetricKind::PredictorG => "predictor-g",
            MetricKind::RhoDiff => "rho-diff",
            MetricKind::CharT => "char-t",
        }
    }
}

/// A trial aborted by a filtering degeneracy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub step: usize,
    pub message: String,
}

/// Per-step estimates of one stability metric with standard errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilitySeries {
    pub metric_kind: MetricKind,
    pub n_values: Vec<usize>,
    pub metric: Vec<f64>,
    pub std_err: Vec<f64>,
    /// Successful trials aggregated into the means.
    pub trials: usize,
    pub failures: Vec<TrialFailure>,
    pub model_id: String,
    pub f_or_g_id: String,
    pub seed: u64,
}

impl StabilitySeries {
    /// Metric value at step `n`, if the series covers it.
    pub fn at(&self, n: usize) -> Option<f64> {
        self.n_values
            .iter()
            .position(|&m| m == n)
            .map(|i| self.metric[i])
    }

    /// Fraction of trials that aborted.
    pub fn failure_fraction(&self) -> f64 {
        let total = self.trials + self.failures.len();
        if total == 0 {
            0.0
        } else {
            self.failures.len() as f64 / total as f64
        }
    }
}

/// Trial counts and seeding for a Monte-Carlo series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesParams {
    pub trials: usize,
    pub n_max: usize,
    pub seed: u64,
    pub model_id: String,
}

// ---------------------------------------------------------------------------
// Problem setup
// ---------------------------------------------------------------------------

/// A wired wrong-prior experiment: the simulation models (true and wrong
/// initial laws) plus the finite filtering model and both gridded/finite
/// initial laws. Admissibility (`ν ≪ ν̄`) is verified on construction.
#[derive(Debug, Clone)]
pub struct StabilityProblem {
    truth: HmmModel,
    truth_wrong: HmmModel,
    filter_model: HmmModel,
    init_true: Distribution,
    init_wrong: Distribution,
}

impl StabilityProblem {
    /// Wire a model and a wrong prior together. Continuous models need a
    /// grid; finite models must be given a wrong prior in explicit weights.
    pub fn new(model: &HmmModel, wrong: &InitialLaw, grid: Option<&GridSpec>) -> Result<Self> {
        let (filter_model, init_true, init_wrong) = if model.is_continuous() {
            let gs = grid.ok_or_else(|| Error::ConfigInvalid {
                field: "grid".into(),
                reason: "continuous models need a grid".into(),
            })?;
            let disc = discretize(model, gs)?;
            let init_true = disc
                .init_distribution()
                .expect("discretize grids the init")
                .clone();
            let init_wrong = Distribution::Grid(grid_initial_law(wrong, gs)?);
            (disc, init_true, init_wrong)
        } else {
            let init_true = model
                .init_distribution()
                .ok_or_else(|| {
                    Error::MismatchedSupport("finite model needs explicit init weights".into())
                })?
                .clone();
            let init_wrong = match wrong {
                InitialLaw::Weights(d) => d.clone(),
                _ => {
                    return Err(Error::MismatchedSupport(
                        "finite models need an explicit wrong prior".into(),
                    ))
                }
            };
            (model.clone(), init_true, init_wrong)
        };
        // Admissibility gate: ν ≪ ν̄ on the filtering carrier.
        density_ratio(&init_true, &init_wrong)?;
        let truth_wrong = HmmModel::new(
            model.signal().clone(),
            model.channel().clone(),
            wrong.clone(),
            model.carrier().clone(),
        )?;
        Ok(Self {
            truth: model.clone(),
            truth_wrong,
            filter_model,
            init_true,
            init_wrong,
        })
    }

    pub fn filter_model(&self) -> &HmmModel {
        &self.filter_model
    }

    pub fn truth(&self) -> &HmmModel {
        &self.truth
    }

    pub fn init_true(&self) -> &Distribution {
        &self.init_true
    }

    pub fn init_wrong(&self) -> &Distribution {
        &self.init_wrong
    }

    /// `dν/dν̄` on the filtering carrier.
    pub fn admissibility(&self) -> Result<DensityRatio> {
        density_ratio(&self.init_true, &self.init_wrong)
    }

    /// Evaluate a function on the filtering carrier.
    pub fn tabulate(&self, f: &ScalarFn) -> Vec<f64> {
        self.filter_model
            .points()
            .expect("filter model is finite")
            .iter()
            .map(|&x| f.eval(x))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Monte-Carlo drivers
// ---------------------------------------------------------------------------

enum MetricCtx {
    Weak { f_vals: Vec<f64> },
    Tv,
    Predictor { profile: Vec<f64> },
    RhoDiff,
    Char { re: Vec<Vec<f64>>, im: Vec<Vec<f64>> },
}

impl MetricCtx {
    fn kind(&self) -> MetricKind {
        match self {
            MetricCtx::Weak { .. } => MetricKind::WeakF,
            MetricCtx::Tv => MetricKind::Tv,
            MetricCtx::Predictor { .. } => MetricKind::PredictorG,
            MetricCtx::RhoDiff => MetricKind::RhoDiff,
            MetricCtx::Char { .. } => MetricKind::CharT,
        }
    }

    /// Predictor and rho metrics start at n = 1; the others include n = 0.
    fn first_n(&self) -> usize {
        match self {
            MetricCtx::Predictor { .. } | MetricCtx::RhoDiff => 1,
            _ => 0,
        }
    }

    fn components(&self) -> usize {
        match self {
            MetricCtx::Char { re, .. } => re.len(),
            _ => 1,
        }
    }

    /// Paths are simulated under P̄ for the rho increments, under P else.
    fn simulate_under_wrong(&self) -> bool {
        matches!(self, MetricCtx::RhoDiff)
    }
}

fn eval_state_metric(ctx: &MetricCtx, pi: &[f64], pibar: &[f64], out: &mut [f64]) {
    match ctx {
        MetricCtx::Weak { f_vals } => {
            out[0] = (dot(pi, f_vals) - dot(pibar, f_vals)).abs();
        }
        MetricCtx::Tv => {
            out[0] = pi
                .iter()
                .zip(pibar)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>();
        }
        MetricCtx::Char { re, im } => {
            for (k, (r, i)) in re.iter().zip(im).enumerate() {
                let dr = dot(pi, r) - dot(pibar, r);
                let di = dot(pi, i) - dot(pibar, i);
                out[k] = (dr * dr + di * di).sqrt();
            }
        }
        MetricCtx::Predictor { .. } | MetricCtx::RhoDiff => unreachable!("step metrics"),
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct TrialOutput {
    /// Row-major `[n_index][component]`.
    values: Vec<f64>,
    failure: Option<(usize, String)>,
}

fn run_one_trial(
    prob: &StabilityProblem,
    ctx: &MetricCtx,
    n_max: usize,
    rng: &mut ChaCha12Rng,
) -> Result<TrialOutput> {
    let sim_model = if ctx.simulate_under_wrong() {
        &prob.truth_wrong
    } else {
        &prob.truth
    };
    let path = simulate_path_with_rng(sim_model, n_max, rng)?;
    let engine = FilterEngine::new(&prob.filter_model)?;
    let d = engine.dim();
    let mut buf = StepBuffers::new(d);
    let mut pi = prob.init_true.weights().to_vec();
    let mut pibar = prob.init_wrong.weights().to_vec();

    let comps = ctx.components();
    let rows = n_max + 1 - ctx.first_n();
    let mut values = vec![0.0; rows * comps];
    let mut row = 0usize;

    if ctx.first_n() == 0 {
        eval_state_metric(ctx, &pi, &pibar, &mut values[0..comps]);
        row += 1;
    }

    let mut log_rho = CompensatedSum::new();
    let mut rho_prev = 1.0f64;

    for (k, &y) in path.observations.iter().enumerate() {
        if let MetricCtx::Predictor { profile } = ctx {
            // η_{n|n-1} uses the time-(n-1) posteriors, before this step.
            values[row] = (dot(&pi, profile) - dot(&pibar, profile)).abs();
        }
        let step = match engine.step_pair(&mut pi, &mut pibar, y, k + 1, &mut buf) {
            Ok(v) => v,
            Err(Error::ZeroLikelihood { step }) => {
                return Ok(TrialOutput {
                    values,
                    failure: Some((step, "zero likelihood".into())),
                })
            }
            Err(e) => return Err(e),
        };
        match ctx {
            MetricCtx::RhoDiff => {
                log_rho.add(step.0 - step.1);
                let rho = log_rho.value().exp();
                values[row] = (rho - rho_prev).abs();
                rho_prev = rho;
            }
            MetricCtx::Predictor { .. } => {}
            _ => {
                eval_state_metric(ctx, &pi, &pibar, &mut values[row * comps..(row + 1) * comps]);
            }
        }
        row += 1;
    }
    Ok(TrialOutput { values, failure: None })
}

fn mc_series(
    prob: &StabilityProblem,
    ctx: MetricCtx,
    params: &SeriesParams,
    labels: Vec<String>,
) -> Result<Vec<StabilitySeries>> {
    if params.trials == 0 {
        return Err(Error::ConfigInvalid {
            field: "trials".into(),
            reason: "need at least one trial".into(),
        });
    }
    let outcomes: Vec<Result<TrialOutput>> = (0..params.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = derive_seed(params.seed, t as u64);
            run_one_trial(prob, &ctx, params.n_max, &mut rng)
        })
        .collect();

    let comps = ctx.components();
    let first_n = ctx.first_n();
    let rows = params.n_max + 1 - first_n;
    let mut failures = Vec::new();
    let mut used: Vec<&TrialOutput> = Vec::with_capacity(params.trials);
    for (t, outcome) in outcomes.iter().enumerate() {
        match outcome {
            Ok(out) => match &out.failure {
                Some((step, msg)) => failures.push(TrialFailure {
                    trial: t,
                    step: *step,
                    message: msg.clone(),
                }),
                None => used.push(out),
            },
            Err(e) => return Err(Error::PartialFailure {
                failed: 1,
                total: params.trials,
                first: format!("trial {t}: {e}"),
            }),
        }
    }
    if used.is_empty() {
        return Err(Error::PartialFailure {
            failed: failures.len(),
            total: params.trials,
            first: failures
                .first()
                .map(|f| format!("trial {} step {}: {}", f.trial, f.step, f.message))
                .unwrap_or_default(),
        });
    }

    let t_count = used.len();
    let mut all = Vec::with_capacity(comps);
    for c in 0..comps {
        let column: Vec<Vec<f64>> = used
            .iter()
            .map(|out| (0..rows).map(|r| out.values[r * comps + c]).collect())
            .collect();
        let (metric, std_err) = aggregate_trial_values(&column);
        all.push(StabilitySeries {
            metric_kind: ctx.kind(),
            n_values: (first_n..=params.n_max).collect(),
            metric,
            std_err,
            trials: t_count,
            failures: failures.clone(),
            model_id: params.model_id.clone(),
            f_or_g_id: labels.get(c).cloned().unwrap_or_default(),
            seed: params.seed,
        });
    }
    Ok(all)
}

/// Reduce per-trial rows to means and standard errors, in trial order with
/// compensated summation. A pure function of the value list: dropping any
/// subset of trials and re-aggregating the rest gives exactly what an
/// aggregation that never saw them would (no cross-trial state).
pub fn aggregate_trial_values(per_trial: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let t_count = per_trial.len();
    let rows = per_trial.first().map_or(0, Vec::len);
    let mut metric = Vec::with_capacity(rows);
    let mut std_err = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut mean_acc = CompensatedSum::new();
        for trial in per_trial {
            mean_acc.add(trial[r]);
        }
        let mean = mean_acc.value() / t_count as f64;
        let mut var_acc = CompensatedSum::new();
        for trial in per_trial {
            let d = trial[r] - mean;
            var_acc.add(d * d);
        }
        let se = if t_count > 1 {
            (var_acc.value() / (t_count as f64 * (t_count - 1) as f64)).sqrt()
        } else {
            0.0
        };
        metric.push(mean);
        std_err.push(se);
    }
    (metric, std_err)
}

/// `E |π_n(f) - π̄_n(f)|` per step, paths under the true law.
pub fn weak_stability_series(
    prob: &StabilityProblem,
    f: &ScalarFn,
    params: &SeriesParams,
) -> Result<StabilitySeries> {
    let f_vals = prob.tabulate(f);
    let mut v = mc_series(prob, MetricCtx::Weak { f_vals }, params, vec![f.label()])?;
    Ok(v.remove(0))
}

/// `E ‖π_n - π̄_n‖_tv` per step.
pub fn tv_stability_series(
    prob: &StabilityProblem,
    params: &SeriesParams,
) -> Result<StabilitySeries> {
    let mut v = mc_series(prob, MetricCtx::Tv, params, vec!["tv".into()])?;
    Ok(v.remove(0))
}

/// `E |η_{n|n-1}(g) - η̄_{n|n-1}(g)|` per step (n ≥ 1).
pub fn predictor_stability_series(
    prob: &StabilityProblem,
    g: &ScalarFn,
    params: &SeriesParams,
) -> Result<StabilitySeries> {
    let profile = predictor_profile(&prob.filter_model, &|y| g.eval(y))?;
    let mut v = mc_series(prob, MetricCtx::Predictor { profile }, params, vec![g.label()])?;
    Ok(v.remove(0))
}

/// `Ē |ρ_n - ρ_{n-1}|` per step (n ≥ 1), paths under the wrong-prior law.
pub fn martingale_diff_series(
    prob: &StabilityProblem,
    params: &SeriesParams,
) -> Result<StabilitySeries> {
    let mut v = mc_series(prob, MetricCtx::RhoDiff, params, vec!["rho".into()])?;
    Ok(v.remove(0))
}

/// `E |π_n(e^{itx}) - π̄_n(e^{itx})|` per step, one series per `t`.
/// `CharZero` when the additive noise's characteristic function vanishes at
/// a requested frequency (the deconvolution step behind the metric breaks
/// there).
pub fn char_func_series(
    prob: &StabilityProblem,
    t_values: &[f64],
    params: &SeriesParams,
) -> Result<Vec<StabilitySeries>> {
    for &t in t_values {
        if let Some(c) = prob.truth.channel().noise_char_fn(t) {
            let magnitude = c.norm();
            if magnitude < 1e-10 {
                return Err(Error::CharZero { t, magnitude });
            }
        }
    }
    let points = prob
        .filter_model
        .points()
        .expect("filter model is finite")
        .to_vec();
    let re: Vec<Vec<f64>> = t_values
        .iter()
        .map(|&t| points.iter().map(|&x| (t * x).cos()).collect())
        .collect();
    let im: Vec<Vec<f64>> = t_values
        .iter()
        .map(|&t| points.iter().map(|&x| (t * x).sin()).collect())
        .collect();
    let labels = t_values.iter().map(|t| format!("t={t}")).collect();
    mc_series(prob, MetricCtx::Char { re, im }, params, labels)
}

// ---------------------------------------------------------------------------
// Exact enumeration drivers (finite observation alphabets)
// ---------------------------------------------------------------------------

/// A node of the observation tree: the filter pair and path probabilities
/// after assimilating `prefix`.
#[derive(Debug, Clone)]
pub struct ObsTreeNode {
    pub depth: usize,
    pub prefix: Vec<f64>,
    /// Path density under the true and wrong initial laws.
    pub prob_true: f64,
    pub prob_wrong: f64,
    /// Likelihood ratio ρ_depth from normalizer products.
    pub rho: f64,
    pub pi: Vec<f64>,
    pub pi_wrong: Vec<f64>,
}

/// Walk every observation path of a finite-alphabet model to depth `n_max`,
/// visiting each prefix node once (the root included). The filter states are
/// computed by the filter recursion; path probabilities are the running
/// normalizer products.
pub fn walk_observation_tree<V: FnMut(&ObsTreeNode)>(
    prob: &StabilityProblem,
    n_max: usize,
    visit: &mut V,
) -> Result<()> {
    let letters: Vec<f64> = prob
        .filter_model
        .channel()
        .letters()
        .ok_or_else(|| {
            Error::MismatchedSupport("observation-tree walk needs a finite alphabet".into())
        })?
        .to_vec();
    let engine = FilterEngine::new(&prob.filter_model)?;
    let mut buf = StepBuffers::new(engine.dim());
    let root = ObsTreeNode {
        depth: 0,
        prefix: Vec::new(),
        prob_true: 1.0,
        prob_wrong: 1.0,
        rho: 1.0,
        pi: prob.init_true.weights().to_vec(),
        pi_wrong: prob.init_wrong.weights().to_vec(),
    };
    descend_tree(&engine, &letters, n_max, &root, visit, &mut buf);
    Ok(())
}

fn descend_tree<V: FnMut(&ObsTreeNode)>(
    engine: &FilterEngine,
    letters: &[f64],
    n_max: usize,
    node: &ObsTreeNode,
    visit: &mut V,
    buf: &mut StepBuffers,
) {
    visit(node);
    if node.depth == n_max {
        return;
    }
    for &y in letters {
        let mut pi = node.pi.clone();
        let mut pibar = node.pi_wrong.clone();
        match engine.step_pair(&mut pi, &mut pibar, y, node.depth + 1, buf) {
            Ok((lc, lc_bar)) => {
                let c = lc.exp();
                let c_bar = lc_bar.exp();
                let mut prefix = node.prefix.clone();
                prefix.push(y);
                let child = ObsTreeNode {
                    depth: node.depth + 1,
                    prefix,
                    prob_true: node.prob_true * c,
                    prob_wrong: node.prob_wrong * c_bar,
                    rho: node.rho * c / c_bar,
                    pi,
                    pi_wrong: pibar,
                };
                descend_tree(engine, letters, n_max, &child, visit, buf);
            }
            // A zero-probability branch under both laws contributes nothing.
            Err(Error::ZeroLikelihood { .. }) => continue,
            Err(_) => continue,
        }
    }
}

/// Exact `E |η_{n|n-1}(g) - η̄_{n|n-1}(g)|` by summing over all observation
/// paths (finite alphabets; cost grows as `letters^n`).
pub fn exact_predictor_stability_series(
    prob: &StabilityProblem,
    g: &ScalarFn,
    n_max: usize,
    model_id: &str,
) -> Result<StabilitySeries> {
    if n_max == 0 {
        return Err(Error::ConfigInvalid {
            field: "n_max".into(),
            reason: "need at least one step".into(),
        });
    }
    let profile = predictor_profile(&prob.filter_model, &|y| g.eval(y))?;
    let mut metric = vec![0.0; n_max];
    walk_observation_tree(prob, n_max - 1, &mut |node| {
        // The node's posteriors are the time-depth filter states; they feed
        // the predictor for step depth+1, weighted by P(prefix).
        let gap = (dot(&node.pi, &profile) - dot(&node.pi_wrong, &profile)).abs();
        metric[node.depth] += node.prob_true * gap;
    })?;
    Ok(StabilitySeries {
        metric_kind: MetricKind::PredictorG,
        n_values: (1..=n_max).collect(),
        metric,
        std_err: vec![0.0; n_max],
        trials: 1,
        failures: Vec::new(),
        model_id: model_id.to_string(),
        f_or_g_id: g.label(),
        seed: 0,
    })
}

/// Exact `Ē |ρ_n - ρ_{n-1}|` by summing over all observation paths.
pub fn exact_martingale_diff_series(
    prob: &StabilityProblem,
    n_max: usize,
    model_id: &str,
) -> Result<StabilitySeries> {
    let mut metric = vec![0.0; n_max];
    let mut parent_rho = vec![1.0; n_max + 1];
    walk_observation_tree(prob, n_max, &mut |node| {
        if node.depth > 0 {
            let prev = parent_rho[node.depth - 1];
            metric[node.depth - 1] += node.prob_wrong * (node.rho - prev).abs();
        }
        parent_rho[node.depth] = node.rho;
    })?;
    Ok(StabilitySeries {
        metric_kind: MetricKind::RhoDiff,
        n_values: (1..=n_max).collect(),
        metric,
        std_err: vec![0.0; n_max],
        trials: 1,
        failures: Vec::new(),
        model_id: model_id.to_string(),
        f_or_g_id: "rho".into(),
        seed: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_finite_hmm, build_nonmixing_control, NoiseSpec};
    use approx::assert_abs_diff_eq;

    fn prop4_fixture(wrong: &[f64]) -> StabilityProblem {
        let model = build_finite_hmm(
            vec![vec![0.7, 0.3], vec![0.3, 0.7]],
            vec![0.0, 1.0],
            vec![
                NoiseSpec::Gaussian { mean: 0.0, std: 1.0 },
                NoiseSpec::Gaussian { mean: 1.0, std: 1.0 },
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let wrong = InitialLaw::Weights(Distribution::Finite(
            crate::measure::FiniteDistribution::new(vec![0.0, 1.0], wrong.to_vec()).unwrap(),
        ));
        StabilityProblem::new(&model, &wrong, None).unwrap()
    }

    fn two_letter_identity_fixture() -> StabilityProblem {
        let model = build_finite_hmm(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.0, 1.0],
            vec![
                NoiseSpec::Discrete { values: vec![0.0, 1.0], probs: vec![0.9, 0.1] },
                NoiseSpec::Discrete { values: vec![0.0, 1.0], probs: vec![0.1, 0.9] },
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let wrong = InitialLaw::Weights(Distribution::Finite(
            crate::measure::FiniteDistribution::new(vec![0.0, 1.0], vec![0.9, 0.1]).unwrap(),
        ));
        StabilityProblem::new(&model, &wrong, None).unwrap()
    }

    #[test]
    fn inadmissible_wrong_prior_is_rejected() {
        let model = build_finite_hmm(
            vec![vec![0.7, 0.3], vec![0.3, 0.7]],
            vec![0.0, 1.0],
            vec![
                NoiseSpec::Gaussian { mean: 0.0, std: 1.0 },
                NoiseSpec::Gaussian { mean: 1.0, std: 1.0 },
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let wrong = InitialLaw::Weights(Distribution::Finite(
            crate::measure::FiniteDistribution::new(vec![0.0, 1.0], vec![1.0, 0.0]).unwrap(),
        ));
        assert!(matches!(
            StabilityProblem::new(&model, &wrong, None),
            Err(Error::NotAbsolutelyContinuous { .. })
        ));
    }

    #[test]
    fn equal_priors_give_zero_metrics() {
        let prob = prop4_fixture(&[0.5, 0.5]);
        let params = SeriesParams {
            trials: 20,
            n_max: 10,
            seed: 1,
            model_id: "t".into(),
        };
        let tv = tv_stability_series(&prob, &params).unwrap();
        let weak = weak_stability_series(
            &prob,
            &ScalarFn::Polynomial { coeffs: vec![0.0, 1.0] },
            &params,
        )
        .unwrap();
        let rho = martingale_diff_series(&prob, &params).unwrap();
        for &v in tv.metric.iter().chain(&weak.metric).chain(&rho.metric) {
            assert!(v < 1e-12, "metric {v} not ~0");
        }
    }

    #[test]
    fn n0_term_is_the_initial_gap_exactly() {
        let prob = prop4_fixture(&[0.9, 0.1]);
        let f = ScalarFn::Polynomial { coeffs: vec![0.0, 1.0] };
        let params = SeriesParams {
            trials: 7,
            n_max: 3,
            seed: 5,
            model_id: "t".into(),
        };
        let s = weak_stability_series(&prob, &f, &params).unwrap();
        // |ν(x) - ν̄(x)| = |0.5 - 0.1| = 0.4, no randomness at n = 0.
        assert_abs_diff_eq!(s.at(0).unwrap(), 0.4, epsilon = 1e-15);
        assert_eq!(s.std_err[0], 0.0);
        let tv = tv_stability_series(&prob, &params).unwrap();
        assert_abs_diff_eq!(tv.at(0).unwrap(), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn constant_g_gives_identically_zero_predictor_series() {
        let prob = prop4_fixture(&[0.9, 0.1]);
        let g = ScalarFn::Polynomial { coeffs: vec![2.5] };
        let params = SeriesParams {
            trials: 10,
            n_max: 5,
            seed: 2,
            model_id: "t".into(),
        };
        let s = predictor_stability_series(&prob, &g, &params).unwrap();
        for &v in &s.metric {
            assert!(v < 1e-12);
        }
    }

    #[test]
    fn weak_series_scales_exactly_with_f() {
        let prob = prop4_fixture(&[0.9, 0.1]);
        let params = SeriesParams {
            trials: 25,
            n_max: 8,
            seed: 11,
            model_id: "t".into(),
        };
        let f1 = ScalarFn::Polynomial { coeffs: vec![0.0, 1.0] };
        let f2 = ScalarFn::Polynomial { coeffs: vec![0.0, 2.0] };
        let s1 = weak_stability_series(&prob, &f1, &params).unwrap();
        let s2 = weak_stability_series(&prob, &f2, &params).unwrap();
        for (a, b) in s1.metric.iter().zip(&s2.metric) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn uninformative_channel_matches_open_loop_matrix_powers() {
        // The control model's filter ignores observations, so the weak
        // metric equals the open-loop gap |E_ν f(X_n) - E_ν̄ f(X_n)| with no
        // Monte-Carlo error at all.
        let model = build_nonmixing_control();
        let wrong = InitialLaw::Weights(Distribution::Finite(
            crate::measure::FiniteDistribution::new(vec![0.0, 1.0], vec![0.99, 0.01]).unwrap(),
        ));
        let prob = StabilityProblem::new(&model, &wrong, None).unwrap();
        let f = ScalarFn::Polynomial { coeffs: vec![0.0, 1.0] };
        let params = SeriesParams {
            trials: 5,
            n_max: 6,
            seed: 3,
            model_id: "control".into(),
        };
        let s = weak_stability_series(&prob, &f, &params).unwrap();
        let k = model.kernel_matrix().unwrap();
        let mut w_true: Vec<f64> = vec![0.5, 0.5];
        let mut w_wrong: Vec<f64> = vec![0.99, 0.01];
        for n in 0..=6usize {
            let open_loop = (w_true[1] - w_wrong[1]).abs();
            assert_abs_diff_eq!(s.at(n).unwrap(), open_loop, epsilon = 1e-12);
            let mut out = vec![0.0; 2];
            k.propagate_into(&w_true, &mut out);
            w_true = out.clone();
            k.propagate_into(&w_wrong, &mut out);
            w_wrong = out;
        }
    }

    #[test]
    fn char_series_at_zero_frequency_is_zero() {
        let model = crate::models::build_additive_model(
            crate::models::SignalKernel::ar1(0.8, 0.5).unwrap(),
            crate::models::LinearObservation::identity(),
            NoiseSpec::Gaussian { mean: 0.0, std: 1.0 },
            InitialLaw::Gaussian { mean: 0.0, std: 0.8333333333333334 },
        )
        .unwrap();
        let wrong = InitialLaw::Gaussian { mean: 1.0, std: 1.0 };
        let gs = GridSpec::new(-6.0, 6.0, 64).unwrap();
        let prob = StabilityProblem::new(&model, &wrong, Some(&gs)).unwrap();
        let params = SeriesParams {
            trials: 4,
            n_max: 5,
            seed: 8,
            model_id: "lin".into(),
        };
        let series = char_func_series(&prob, &[0.0, 1.0], &params).unwrap();
        assert_eq!(series.len(), 2);
        for &v in &series[0].metric {
            assert!(v < 1e-13, "t=0 metric {v}");
        }
        assert!(series[1].metric[0] > 0.0);
    }

    #[test]
    fn char_zero_fires_when_the_noise_char_fn_vanishes() {
        // e^{-t²/2} < 1e-10 once t > ~6.8: the deconvolution behind the
        // metric is ill-posed at such frequencies.
        let model = crate::models::build_additive_model(
            crate::models::SignalKernel::ar1(0.8, 0.5).unwrap(),
            crate::models::LinearObservation::identity(),
            NoiseSpec::Gaussian { mean: 0.0, std: 1.0 },
            InitialLaw::Gaussian { mean: 0.0, std: 0.8333333333333334 },
        )
        .unwrap();
        let wrong = InitialLaw::Gaussian { mean: 1.0, std: 1.0 };
        let gs = GridSpec::new(-6.0, 6.0, 64).unwrap();
        let prob = StabilityProblem::new(&model, &wrong, Some(&gs)).unwrap();
        let params = SeriesParams { trials: 2, n_max: 2, seed: 1, model_id: "lin".into() };
        assert!(matches!(
            char_func_series(&prob, &[10.0], &params),
            Err(Error::CharZero { .. })
        ));
    }

    #[test]
    fn gaussian_char_fn_never_triggers_char_zero() {
        let c = crate::models::ObservationChannel::AdditiveGaussian {
            slope: 1.0,
            intercept: 0.0,
            noise_mean: 0.0,
            noise_std: 1.0,
        };
        for t in [0.5, 2.0, 5.0] {
            let v = c.noise_char_fn(t).unwrap().norm();
            assert!((v - (-0.5 * t * t).exp()).abs() < 1e-14);
            assert!(v > 0.0);
        }
    }

    #[test]
    fn exact_martingale_series_vanishes_for_equal_priors() {
        let model = build_finite_hmm(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.0, 1.0],
            vec![
                NoiseSpec::Discrete { values: vec![0.0, 1.0], probs: vec![0.9, 0.1] },
                NoiseSpec::Discrete { values: vec![0.0, 1.0], probs: vec![0.1, 0.9] },
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let wrong = InitialLaw::Weights(Distribution::Finite(
            crate::measure::FiniteDistribution::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap(),
        ));
        let prob = StabilityProblem::new(&model, &wrong, None).unwrap();
        let s = exact_martingale_diff_series(&prob, 6, "t").unwrap();
        for &v in &s.metric {
            assert!(v < 1e-14);
        }
    }

    #[test]
    fn exact_martingale_series_decays_on_identity_fixture() {
        let prob = two_letter_identity_fixture();
        let s = exact_martingale_diff_series(&prob, 8, "t").unwrap();
        // Martingale increments vanish as ρ_n converges.
        assert!(s.metric[7] < 0.2 * s.metric[0], "series = {:?}", s.metric);
    }

    #[test]
    fn exact_predictor_series_matches_chain_bound() {
        // E|η - η̄| ≤ sup|g| Ē|ρ_n - ρ_{n-1}| term by term.
        let prob = two_letter_identity_fixture();
        let g = ScalarFn::Indicator { lo: -0.5, hi: 0.5 }; // 1{y = 0}, sup = 1
        let eta = exact_predictor_stability_series(&prob, &g, 8, "t").unwrap();
        let rho = exact_martingale_diff_series(&prob, 8, "t").unwrap();
        for (e, r) in eta.metric.iter().zip(&rho.metric) {
            assert!(*e <= r + 1e-12, "eta {e} > rho {r}");
        }
    }

    #[test]
    fn aggregation_has_no_cross_trial_state() {
        // Deleting trials and re-aggregating the rest must equal an
        // aggregation that never saw them.
        let trials: Vec<Vec<f64>> = (0..10)
            .map(|t| (0..4).map(|r| ((t * 7 + r) % 5) as f64 * 0.3 + 0.1).collect())
            .collect();
        let subset: Vec<Vec<f64>> = trials
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 3 != 0)
            .map(|(_, v)| v.clone())
            .collect();
        let (means, ses) = aggregate_trial_values(&subset);
        // Hand-rolled reference over exactly the kept trials.
        for r in 0..4 {
            let vals: Vec<f64> = subset.iter().map(|t| t[r]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (vals.len() as f64 * (vals.len() - 1) as f64);
            assert!((means[r] - mean).abs() < 1e-15);
            assert!((ses[r] - var.sqrt()).abs() < 1e-15);
        }
        // And the means honestly reflect only the kept trials.
        let full = aggregate_trial_values(&trials);
        assert_ne!(means, full.0);
    }

    #[test]
    fn tree_probabilities_sum_to_one_per_depth() {
        let prob = two_letter_identity_fixture();
        let mut mass = [0.0f64; 5];
        let mut mass_wrong = [0.0f64; 5];
        walk_observation_tree(&prob, 4, &mut |node| {
            mass[node.depth] += node.prob_true;
            mass_wrong[node.depth] += node.prob_wrong;
        })
        .unwrap();
        for d in 0..5 {
            assert_abs_diff_eq!(mass[d], 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(mass_wrong[d], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn weighted_predictor_matches_conditional_expectation_of_weighted_g() {
        // ρ_{n-1} η_{n|n-1}(g) = Ē(g(Y_n) ρ_n | F_{n-1}) at every tree node.
        let prob = two_letter_identity_fixture();
        let g = ScalarFn::Polynomial { coeffs: vec![0.3, 0.4] };
        let profile = crate::filter::predictor_profile(prob.filter_model(), &|y| g.eval(y))
            .unwrap();
        use std::collections::BTreeMap;
        let mut nodes: BTreeMap<String, (f64, f64, f64)> = BTreeMap::new(); // rho, prob_wrong, eta
        let mut kids: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new(); // y, rho, prob_wrong
        walk_observation_tree(&prob, 5, &mut |node| {
            let eta = dot(&node.pi, &profile);
            let key = format!("{:?}", node.prefix);
            nodes.insert(key, (node.rho, node.prob_wrong, eta));
            if node.depth > 0 {
                let parent = format!("{:?}", &node.prefix[..node.depth - 1]);
                kids.entry(parent).or_default().push((
                    *node.prefix.last().unwrap(),
                    node.rho,
                    node.prob_wrong,
                ));
            }
        })
        .unwrap();
        for (parent, children) in &kids {
            let (parent_rho, parent_prob, parent_eta) = nodes[parent];
            if parent_prob == 0.0 {
                continue;
            }
            let rhs: f64 = children
                .iter()
                .map(|(y, rho, p)| g.eval(*y) * rho * (p / parent_prob))
                .sum();
            assert_abs_diff_eq!(parent_rho * parent_eta, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn rho_is_a_martingale_under_the_wrong_law() {
        // Ē(ρ_{n} | F_{n-1}) = ρ_{n-1}: group children by parent.
        let prob = two_letter_identity_fixture();
        use std::collections::BTreeMap;
        let mut nodes: BTreeMap<String, (f64, f64)> = BTreeMap::new(); // prefix -> (rho, prob_wrong)
        let mut children: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        walk_observation_tree(&prob, 5, &mut |node| {
            let key = format!("{:?}", node.prefix);
            nodes.insert(key.clone(), (node.rho, node.prob_wrong));
            if node.depth > 0 {
                let parent = format!("{:?}", &node.prefix[..node.depth - 1]);
                children
                    .entry(parent)
                    .or_default()
                    .push((node.rho, node.prob_wrong));
            }
        })
        .unwrap();
        for (parent, kids) in &children {
            let (parent_rho, parent_prob) = nodes[parent];
            if parent_prob == 0.0 {
                continue;
            }
            let cond: f64 = kids
                .iter()
                .map(|(rho, p)| rho * (p / parent_prob))
                .sum();
            assert_abs_diff_eq!(cond, parent_rho, epsilon = 1e-12);
        }
    }
}
