//! Declarative experiment runner: JSON configs in, CSV series and a JSON
//! manifest out.
//!
//! Reproducibility contract: a `(config, master seed)` pair determines every
//! emitted CSV byte. Trials derive their generators from the master seed and
//! the trial index through a counter-based hash, workers never share state,
//! and aggregation runs in trial order with compensated summation, so the
//! worker count cannot change any output. The manifest is written last,
//! atomically (temp file + rename), and records the SHA-256 and row count of
//! every output file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::filter::{FilterTrajectory, GridSpec, RhoSeries};
use crate::measure::{expect, Distribution, FiniteDistribution};
use crate::models::{
    build_finite_hmm, build_mult_noise_model, build_nonmixing_control, HmmModel, InitialLaw,
    LinearObservation, MultNoiseParams, NoiseSpec, SignalKernel,
};
use crate::series::{
    char_func_series, exact_martingale_diff_series, exact_predictor_stability_series,
    martingale_diff_series, predictor_stability_series, tv_stability_series,
    weak_stability_series, MetricKind, ScalarFn, SeriesParams, StabilityProblem, StabilitySeries,
};
use crate::sg::SgParams;
use crate::stability::{check_conditions, ConditionReport};
use crate::{Error, Result};

/// Name of the generator and splitting rule recorded in manifests.
pub const RNG_ALGORITHM: &str = "chacha12 / sha256(\"filterlab-seed-v1\", master_le, trial_le)";

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "FILTERLAB_WORKERS";

/// Schema version accepted by this build.
pub const CONFIG_SCHEMA: u32 = 1;

/// Derive the 32-byte generator seed for one trial (counter-based hash of
/// master seed and trial index — injective within a run by construction).
pub fn derive_seed_bytes(master: u64, trial: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"filterlab-seed-v1");
    h.update(master.to_le_bytes());
    h.update(trial.to_le_bytes());
    h.finalize().into()
}

/// The per-trial generator.
pub fn derive_seed(master: u64, trial: u64) -> ChaCha12Rng {
    ChaCha12Rng::from_seed(derive_seed_bytes(master, trial))
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

/// Model families declarable in a config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Finite-state chain with per-state observation noise.
    FiniteHmm {
        transition: Vec<Vec<f64>>,
        atoms: Vec<f64>,
        noise: Vec<NoiseSpec>,
    },
    /// AR(1) signal observed through multiplicative heavy-tailed noise.
    MultNoise { a: f64, b: f64, rho: f64 },
    /// AR(1) signal with additive Gaussian observation noise on `h(x)`.
    Additive {
        a: f64,
        b: f64,
        h: LinearObservation,
        noise_mean: f64,
        noise_std: f64,
    },
    /// The 2-cycle signal with an uninformative channel.
    NonmixingControl,
}

/// Prior families declarable in a config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorSpec {
    /// Explicit weights on the finite carrier.
    Weights { weights: Vec<f64> },
    /// SG density (continuous models).
    Sg { sigma: f64, alpha: Vec<f64> },
    Gaussian { mean: f64, std: f64 },
    Point { at: f64 },
}

impl PriorSpec {
    fn to_initial_law(&self, atoms: Option<&[f64]>) -> Result<InitialLaw> {
        match self {
            PriorSpec::Weights { weights } => {
                let atoms = atoms.ok_or_else(|| Error::ConfigInvalid {
                    field: "prior.weights".into(),
                    reason: "weights need a finite-state model".into(),
                })?;
                Ok(InitialLaw::Weights(Distribution::Finite(
                    FiniteDistribution::new(atoms.to_vec(), weights.clone())?,
                )))
            }
            PriorSpec::Sg { sigma, alpha } => {
                Ok(InitialLaw::Sg(SgParams::new(*sigma, alpha.clone())?))
            }
            PriorSpec::Gaussian { mean, std } => {
                if !(std.is_finite() && *std > 0.0) {
                    return Err(Error::ConfigInvalid {
                        field: "prior.std".into(),
                        reason: format!("must be positive, got {std}"),
                    });
                }
                Ok(InitialLaw::Gaussian { mean: *mean, std: *std })
            }
            PriorSpec::Point { at } => Ok(InitialLaw::Point(*at)),
        }
    }
}

/// A declarative experiment: model, prior pair, functions, metrics, sizes.
/// Unknown fields are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub name: String,
    pub model: ModelSpec,
    pub true_prior: PriorSpec,
    pub filter_prior: PriorSpec,
    #[serde(default)]
    pub f: Option<ScalarFn>,
    #[serde(default)]
    pub g: Option<ScalarFn>,
    #[serde(default)]
    pub t_values: Option<Vec<f64>>,
    pub metrics: Vec<MetricKind>,
    pub n_max: usize,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::ConfigInvalid {
                field: e
                    .to_string()
                    .split(" at ")
                    .next()
                    .unwrap_or("json")
                    .to_string(),
                reason: e.to_string(),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::ConfigInvalid {
            field: "config".into(),
            reason: format!("{}: {e}", path.display()),
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::ConfigInvalid {
                field: "schema".into(),
                reason: format!("expected {CONFIG_SCHEMA}, got {}", self.schema),
            });
        }
        if self.name.is_empty() {
            return Err(Error::ConfigInvalid {
                field: "name".into(),
                reason: "must be nonempty".into(),
            });
        }
        if self.trials < 1 {
            return Err(Error::ConfigInvalid {
                field: "trials".into(),
                reason: "need at least 1".into(),
            });
        }
        if self.n_max < 1 {
            return Err(Error::ConfigInvalid {
                field: "n_max".into(),
                reason: "need at least 1".into(),
            });
        }
        if self.metrics.is_empty() {
            return Err(Error::ConfigInvalid {
                field: "metrics".into(),
                reason: "need at least one metric".into(),
            });
        }
        for m in &self.metrics {
            match m {
                MetricKind::WeakF if self.f.is_none() => {
                    return Err(Error::ConfigInvalid {
                        field: "f".into(),
                        reason: "weak-f metric needs f".into(),
                    })
                }
                MetricKind::PredictorG if self.g.is_none() => {
                    return Err(Error::ConfigInvalid {
                        field: "g".into(),
                        reason: "predictor-g metric needs g".into(),
                    })
                }
                MetricKind::CharT
                    if self.t_values.as_ref().is_none_or(|t| t.is_empty()) =>
                {
                    return Err(Error::ConfigInvalid {
                        field: "t_values".into(),
                        reason: "char-t metric needs t values".into(),
                    })
                }
                _ => {}
            }
        }
        let continuous = matches!(
            self.model,
            ModelSpec::MultNoise { .. } | ModelSpec::Additive { .. }
        );
        if continuous && self.grid.is_none() {
            return Err(Error::ConfigInvalid {
                field: "grid".into(),
                reason: "continuous models need a grid".into(),
            });
        }
        if let Some(g) = &self.grid {
            GridSpec::new(g.lo, g.hi, g.cells)?;
        }
        Ok(())
    }

    /// Build the simulation model (with the true prior installed) and the
    /// wrong prior as an initial law.
    pub fn build(&self) -> Result<(HmmModel, InitialLaw)> {
        let model = match &self.model {
            ModelSpec::FiniteHmm { transition, atoms, noise } => {
                let weights = match &self.true_prior {
                    PriorSpec::Weights { weights } => weights.clone(),
                    _ => {
                        return Err(Error::ConfigInvalid {
                            field: "true_prior".into(),
                            reason: "finite models need explicit weights".into(),
                        })
                    }
                };
                build_finite_hmm(transition.clone(), atoms.clone(), noise.clone(), weights)?
            }
            ModelSpec::MultNoise { a, b, rho } => {
                let prior = match self.true_prior.to_initial_law(None)? {
                    InitialLaw::Sg(p) => p,
                    InitialLaw::Gaussian { mean: 0.0, std } => SgParams::gaussian(std)?,
                    _ => {
                        return Err(Error::ConfigInvalid {
                            field: "true_prior".into(),
                            reason: "the volatility model takes an SG or centered Gaussian prior"
                                .into(),
                        })
                    }
                };
                build_mult_noise_model(MultNoiseParams::new(*a, *b, *rho, prior)?)?
            }
            ModelSpec::Additive { a, b, h, noise_mean, noise_std } => {
                crate::models::build_additive_model(
                    SignalKernel::ar1(*a, *b)?,
                    *h,
                    NoiseSpec::Gaussian { mean: *noise_mean, std: *noise_std },
                    self.true_prior.to_initial_law(None)?,
                )?
            }
            ModelSpec::NonmixingControl => {
                let control = build_nonmixing_control();
                let weights = match &self.true_prior {
                    PriorSpec::Weights { weights } => weights.clone(),
                    _ => {
                        return Err(Error::ConfigInvalid {
                            field: "true_prior".into(),
                            reason: "the control model needs explicit weights".into(),
                        })
                    }
                };
                let atoms = control.points().unwrap().to_vec();
                control.with_init(Distribution::Finite(FiniteDistribution::new(
                    atoms, weights,
                )?))?
            }
        };
        let atoms = model.points().map(<[f64]>::to_vec);
        let wrong = self.filter_prior.to_initial_law(atoms.as_deref())?;
        Ok((model, wrong))
    }
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    /// The prior pair is inadmissible; nothing was computed.
    Rejected { witness: String },
    /// More than [`MAX_FAILURE_FRACTION`] of the trials degenerated.
    Failed { reason: String },
}

/// Trials may abort on `ZeroLikelihood`; above this fraction the run is
/// marked failed (silent exclusion would bias the metric).
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub metric_kind: String,
    pub rows: usize,
    pub sha256: String,
}

/// Reproducibility record of one experiment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub rng_algorithm: String,
    pub master_seed: u64,
    pub status: RunStatus,
    pub config: ExperimentConfig,
    /// Sup of `dν/dν̄` over the filtering carrier.
    pub admissibility_sup: Option<f64>,
    pub condition_report: Option<ConditionReport>,
    /// Mixing constants of small finite signal kernels (the averaged-infimum
    /// constant is only meaningful on genuine finite alphabets, not on
    /// banded grid discretizations whose minimum entry is always 0).
    pub mixing_report: Option<crate::stability::MixingReport>,
    pub outputs: Vec<OutputFile>,
    pub failed_trials: usize,
    pub total_trials: usize,
    pub zero_likelihood_steps: Vec<usize>,
    pub wall_ms: u128,
}

impl RunManifest {
    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SeriesRow<'a> {
    n: usize,
    metric: f64,
    std_err: f64,
    trials: usize,
    metric_kind: &'a str,
    model_id: &'a str,
    f_or_g_id: &'a str,
    seed: u64,
}

/// Write one or more series (same metric kind) as RFC-4180 CSV. Returns the
/// data row count.
pub fn write_series_csv(path: &Path, series: &[StabilitySeries]) -> Result<usize> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut rows = 0usize;
    for s in series {
        for (i, &n) in s.n_values.iter().enumerate() {
            wtr.serialize(SeriesRow {
                n,
                metric: s.metric[i],
                std_err: s.std_err[i],
                trials: s.trials,
                metric_kind: s.metric_kind.as_str(),
                model_id: &s.model_id,
                f_or_g_id: &s.f_or_g_id,
                seed: s.seed,
            })?;
            rows += 1;
        }
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::NonFiniteResult(format!("csv flush: {e}")))?;
    write_atomic(path, &bytes)?;
    Ok(rows)
}

/// Read series back from a CSV written by [`write_series_csv`]; rows are
/// grouped into one series per `f_or_g_id` (trial failures are not part of
/// the CSV contract and come back empty).
pub fn read_series_csv(path: &Path) -> Result<Vec<StabilitySeries>> {
    #[derive(Deserialize)]
    struct Row {
        n: usize,
        metric: f64,
        std_err: f64,
        trials: usize,
        metric_kind: MetricKind,
        model_id: String,
        f_or_g_id: String,
        seed: u64,
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out: Vec<StabilitySeries> = Vec::new();
    for row in rdr.deserialize() {
        let row: Row = row?;
        let series = match out.iter_mut().find(|s| s.f_or_g_id == row.f_or_g_id) {
            Some(s) => s,
            None => {
                out.push(StabilitySeries {
                    metric_kind: row.metric_kind,
                    n_values: Vec::new(),
                    metric: Vec::new(),
                    std_err: Vec::new(),
                    trials: row.trials,
                    failures: Vec::new(),
                    model_id: row.model_id.clone(),
                    f_or_g_id: row.f_or_g_id.clone(),
                    seed: row.seed,
                });
                out.last_mut().expect("just pushed")
            }
        };
        series.n_values.push(row.n);
        series.metric.push(row.metric);
        series.std_err.push(row.std_err);
    }
    Ok(out)
}

/// Export a trajectory: step, posterior mean/variance, per-atom masses for
/// small carriers (≤ 16 points), the step normalizer `c_n` and, when a
/// likelihood-ratio series is supplied, `log ρ_n`.
pub fn write_trajectory_csv(
    path: &Path,
    traj: &FilterTrajectory,
    rho: Option<&RhoSeries>,
) -> Result<usize> {
    let d = traj.posteriors()[0].len();
    let atom_cols = if d <= 16 { d } else { 0 };
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> =
        vec!["step".into(), "mean".into(), "variance".into()];
    for i in 0..atom_cols {
        header.push(format!("mass_{i}"));
    }
    header.push("c".into());
    header.push("log_rho".into());
    wtr.write_record(&header)?;
    let mut rows = 0usize;
    for (k, post) in traj.posteriors().iter().enumerate() {
        let mut rec: Vec<String> = vec![
            k.to_string(),
            format!("{}", expect(post, |x| x)),
            format!("{}", post.variance()),
        ];
        for i in 0..atom_cols {
            rec.push(format!("{}", post.weights()[i]));
        }
        if k == 0 {
            rec.push(String::new());
        } else {
            rec.push(format!("{}", traj.log_normalizers()[k - 1].exp()));
        }
        match rho {
            Some(r) if k < r.log_values().len() => {
                rec.push(format!("{}", r.log_values()[k]))
            }
            _ => rec.push(String::new()),
        }
        wtr.write_record(&rec)?;
        rows += 1;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::NonFiniteResult(format!("csv flush: {e}")))?;
    write_atomic(path, &bytes)?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

/// Resolve the worker count: explicit argument, else `FILTERLAB_WORKERS`,
/// else the rayon default.
pub fn worker_count(explicit: Option<usize>) -> Option<usize> {
    explicit.or_else(|| {
        std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0)
    })
}

/// Run one experiment: build the problem, verify admissibility, compute the
/// requested metric series, write one CSV per metric kind and the manifest
/// (last, atomically). Reruns with the same config are byte-identical on
/// every CSV.
pub fn run_experiment(config: &ExperimentConfig, workers: Option<usize>) -> Result<RunManifest> {
    config.validate()?;
    let started = Instant::now();
    fs::create_dir_all(&config.out_dir)?;

    let (model, wrong) = config.build()?;
    let mut manifest = RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        rng_algorithm: RNG_ALGORITHM.to_string(),
        master_seed: config.seed,
        status: RunStatus::Completed,
        config: config.clone(),
        admissibility_sup: None,
        condition_report: None,
        mixing_report: None,
        outputs: Vec::new(),
        failed_trials: 0,
        total_trials: config.trials,
        zero_likelihood_steps: Vec::new(),
        wall_ms: 0,
    };

    let prob = match StabilityProblem::new(&model, &wrong, config.grid.as_ref()) {
        Ok(p) => p,
        Err(Error::NotAbsolutelyContinuous { point, mass }) => {
            manifest.status = RunStatus::Rejected {
                witness: format!("true prior has mass {mass} at {point} where the filter prior vanishes"),
            };
            manifest.wall_ms = started.elapsed().as_millis();
            write_manifest(&config.out_dir, &manifest)?;
            return Ok(manifest);
        }
        Err(e) => return Err(e),
    };
    manifest.admissibility_sup = prob.admissibility()?.sup_bound();
    if let Some(g) = &config.g {
        manifest.condition_report =
            Some(check_conditions(&prob, g, config.n_max.min(64), 2.0)?);
    }
    if let Some(kernel) = model.kernel_matrix() {
        if kernel.dim() <= 64 {
            manifest.mixing_report = Some(crate::stability::mixing_constants(kernel));
        }
    }

    let params = SeriesParams {
        trials: config.trials,
        n_max: config.n_max,
        seed: config.seed,
        model_id: config.name.clone(),
    };

    let pool = build_pool(worker_count(workers))?;
    // Exact enumeration beats sampling when every observation path can be
    // visited: finite alphabet and a short horizon.
    let enumerable =
        prob.filter_model().channel().letters().is_some() && config.n_max <= 8;
    let mut failed = 0usize;
    let mut zero_steps = Vec::new();
    for kind in &config.metrics {
        let series: Vec<StabilitySeries> = pool.install(|| -> Result<Vec<StabilitySeries>> {
            match kind {
                MetricKind::WeakF => Ok(vec![weak_stability_series(
                    &prob,
                    config.f.as_ref().expect("validated"),
                    &params,
                )?]),
                MetricKind::Tv => Ok(vec![tv_stability_series(&prob, &params)?]),
                MetricKind::PredictorG if enumerable => {
                    Ok(vec![exact_predictor_stability_series(
                        &prob,
                        config.g.as_ref().expect("validated"),
                        config.n_max,
                        &config.name,
                    )?])
                }
                MetricKind::PredictorG => Ok(vec![predictor_stability_series(
                    &prob,
                    config.g.as_ref().expect("validated"),
                    &params,
                )?]),
                MetricKind::RhoDiff if enumerable => Ok(vec![
                    exact_martingale_diff_series(&prob, config.n_max, &config.name)?,
                ]),
                MetricKind::RhoDiff => Ok(vec![martingale_diff_series(&prob, &params)?]),
                MetricKind::CharT => char_func_series(
                    &prob,
                    config.t_values.as_ref().expect("validated"),
                    &params,
                ),
            }
        })?;
        if let Some(first) = series.first() {
            failed = failed.max(first.failures.len());
            zero_steps.extend(first.failures.iter().map(|f| f.step));
        }
        let file_name = format!("{}.csv", kind.as_str());
        let path = config.out_dir.join(&file_name);
        let rows = write_series_csv(&path, &series)?;
        let bytes = fs::read(&path)?;
        manifest.outputs.push(OutputFile {
            path: file_name,
            metric_kind: kind.as_str().to_string(),
            rows,
            sha256: sha256_hex(&bytes),
        });
    }

    manifest.failed_trials = failed;
    manifest.zero_likelihood_steps = zero_steps;
    if failed as f64 > MAX_FAILURE_FRACTION * config.trials as f64 {
        manifest.status = RunStatus::Failed {
            reason: format!(
                "{failed} of {} trials hit zero likelihood (> {:.0}%)",
                config.trials,
                MAX_FAILURE_FRACTION * 100.0
            ),
        };
    }
    manifest.wall_ms = started.elapsed().as_millis();
    write_manifest(&config.out_dir, &manifest)?;
    Ok(manifest)
}

fn build_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::NonFiniteResult(format!("thread pool: {e}")))
}

fn write_manifest(out_dir: &Path, manifest: &RunManifest) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(manifest)?;
    write_atomic(&out_dir.join("manifest.json"), &bytes)
}

/// Load a manifest back.
pub fn read_manifest(out_dir: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(out_dir.join("manifest.json"))?;
    Ok(serde_json::from_str(&text)?)
}

/// Verify that the files listed in a manifest exist with matching hashes
/// and row counts.
pub fn verify_manifest(out_dir: &Path, manifest: &RunManifest) -> Result<()> {
    for out in &manifest.outputs {
        let path = out_dir.join(&out.path);
        let bytes = fs::read(&path)?;
        let hash = sha256_hex(&bytes);
        if hash != out.sha256 {
            return Err(Error::ConfigInvalid {
                field: out.path.clone(),
                reason: "hash mismatch".into(),
            });
        }
        let rows = bytes.iter().filter(|&&b| b == b'\n').count().saturating_sub(1);
        if rows != out.rows {
            return Err(Error::ConfigInvalid {
                field: out.path.clone(),
                reason: format!("row count {} != declared {}", rows, out.rows),
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Canned experiments
// ---------------------------------------------------------------------------

/// The five pinned fixture experiments. `out_root` is the directory the
/// per-experiment output directories live under.
pub fn canned_experiments(out_root: &Path) -> Vec<ExperimentConfig> {
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    let stationary_std = 0.8333333333333334; // 0.5 / sqrt(1 - 0.64)
    vec![
        ExperimentConfig {
            schema: CONFIG_SCHEMA,
            name: "hmm-prop4".into(),
            model: ModelSpec::FiniteHmm {
                transition: vec![vec![0.7, 0.3], vec![0.3, 0.7]],
                atoms: vec![0.0, 1.0],
                noise: vec![
                    NoiseSpec::Gaussian { mean: 0.0, std: 1.0 },
                    NoiseSpec::Gaussian { mean: 1.0, std: 1.0 },
                ],
            },
            true_prior: PriorSpec::Weights { weights: vec![0.5, 0.5] },
            filter_prior: PriorSpec::Weights { weights: vec![0.99, 0.01] },
            f: None,
            g: None,
            t_values: None,
            metrics: vec![MetricKind::Tv],
            n_max: 200,
            trials: 1000,
            seed: 240401,
            grid: None,
            out_dir: out_root.join("hmm-prop4"),
        },
        ExperimentConfig {
            schema: CONFIG_SCHEMA,
            name: "hmm-prop4-negative".into(),
            model: ModelSpec::NonmixingControl,
            true_prior: PriorSpec::Weights { weights: vec![0.5, 0.5] },
            filter_prior: PriorSpec::Weights { weights: vec![0.99, 0.01] },
            f: None,
            g: None,
            t_values: None,
            metrics: vec![MetricKind::Tv],
            n_max: 200,
            trials: 100,
            seed: 240402,
            grid: None,
            out_dir: out_root.join("hmm-prop4-negative"),
        },
        ExperimentConfig {
            schema: CONFIG_SCHEMA,
            name: "mixing-rate".into(),
            model: ModelSpec::FiniteHmm {
                transition: vec![vec![0.7, 0.3], vec![0.3, 0.7]],
                atoms: vec![0.0, 1.0],
                noise: vec![
                    NoiseSpec::Gaussian { mean: 0.0, std: 1.0 },
                    NoiseSpec::Gaussian { mean: 1.0, std: 1.0 },
                ],
            },
            true_prior: PriorSpec::Weights { weights: vec![0.5, 0.5] },
            filter_prior: PriorSpec::Weights { weights: vec![0.99, 0.01] },
            f: None,
            g: None,
            t_values: None,
            metrics: vec![MetricKind::Tv],
            // Short horizon: the metric must stay resolvable above the
            // double-precision floor across the whole fit window.
            n_max: 20,
            trials: 1000,
            seed: 240405,
            grid: None,
            out_dir: out_root.join("mixing-rate"),
        },
        ExperimentConfig {
            schema: CONFIG_SCHEMA,
            name: "sg-volatility".into(),
            model: ModelSpec::MultNoise { a: 0.8, b: 0.5, rho: 1.0 },
            true_prior: PriorSpec::Sg { sigma: 0.7, alpha: vec![0.5, 0.5] },
            filter_prior: PriorSpec::Gaussian { mean: 0.0, std: 1.0 },
            f: Some(ScalarFn::Abs { scale: 1.0 }),
            g: Some(ScalarFn::Abs { scale: inv_sqrt_pi }),
            t_values: None,
            metrics: vec![MetricKind::WeakF],
            n_max: 100,
            trials: 500,
            seed: 240406,
            grid: Some(GridSpec { lo: -6.0, hi: 6.0, cells: 2048 }),
            out_dir: out_root.join("sg-volatility"),
        },
        ExperimentConfig {
            schema: CONFIG_SCHEMA,
            name: "linear-prop5".into(),
            model: ModelSpec::Additive {
                a: 0.8,
                b: 0.5,
                h: LinearObservation::identity(),
                noise_mean: 0.0,
                noise_std: 1.0,
            },
            true_prior: PriorSpec::Gaussian { mean: 0.0, std: stationary_std },
            filter_prior: PriorSpec::Gaussian { mean: 1.0, std: 1.0 },
            f: Some(ScalarFn::Polynomial { coeffs: vec![0.0, 0.0, 1.0] }),
            g: Some(ScalarFn::Polynomial { coeffs: vec![0.0, 1.0] }),
            t_values: Some(vec![0.0, 0.5, 1.0, 2.0]),
            metrics: vec![MetricKind::WeakF, MetricKind::CharT],
            n_max: 100,
            trials: 500,
            seed: 240407,
            grid: Some(GridSpec { lo: -6.0, hi: 6.0, cells: 2048 }),
            out_dir: out_root.join("linear-prop5"),
        },
    ]
}
