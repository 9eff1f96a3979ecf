//! Cross-module identities: the moment-matrix form of the predictor, the
//! transfer from a solved observation-side equation back to the filter, and
//! closed forms against their quadrature counterparts.

use filterlab::filter::{discretize, predictor, run_filter, GridSpec};
use filterlab::measure::{expect, normalize, Distribution, FiniteDistribution};
use filterlab::models::{
    build_additive_model, build_finite_hmm, simulate_path, InitialLaw, LinearObservation,
    NoiseSpec, ObservationChannel, SignalKernel,
};
use filterlab::numeric::{adaptive_simpson, normal_cdf, normal_pdf};
use filterlab::stability::{moment_matrix, solve_g};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn prop4_model() -> filterlab::HmmModel {
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

fn random_simplex(rng: &mut ChaCha12Rng, d: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..1.0)).collect();
    normalize(&raw).unwrap()
}

#[test]
fn predictor_of_monomials_is_the_moment_matrix_row() {
    // η(y ↦ y^i) applied to π equals Σ_j π(j) B_ij for the finite HMM.
    let model = prop4_model();
    let b = moment_matrix(&[
        NoiseSpec::Gaussian { mean: 0.0, std: 1.0 },
        NoiseSpec::Gaussian { mean: 1.0, std: 1.0 },
    ])
    .unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(100);
    for _ in 0..20 {
        let w = random_simplex(&mut rng, 2);
        let pi = Distribution::Finite(
            FiniteDistribution::new(vec![0.0, 1.0], w.clone()).unwrap(),
        );
        for i in 1..=2usize {
            let eta = predictor(&model, &pi, &|y: f64| y.powi(i as i32)).unwrap();
            let via_b: f64 = (0..2).map(|j| w[j] * b.entry(i, j + 1)).sum();
            assert!(
                (eta - via_b).abs() < 1e-10,
                "moment order {i}: predictor {eta} vs matrix {via_b}"
            );
        }
    }
}

#[test]
fn predictor_gap_is_the_moment_row_gap_along_paths() {
    // Along any filtering path, |η(g) - η̄(g)| for g(y) = y equals
    // |Σ_j (π(j) - π̄(j)) B_1j| exactly.
    let model = prop4_model();
    let b = moment_matrix(&[
        NoiseSpec::Gaussian { mean: 0.0, std: 1.0 },
        NoiseSpec::Gaussian { mean: 1.0, std: 1.0 },
    ])
    .unwrap();
    let path = simulate_path(&model, 30, 2024).unwrap();
    let init_true = model.init_distribution().unwrap().clone();
    let init_wrong = Distribution::Finite(
        FiniteDistribution::new(vec![0.0, 1.0], vec![0.99, 0.01]).unwrap(),
    );
    let traj_true = run_filter(&model, &init_true, &path.observations).unwrap();
    let traj_wrong = run_filter(&model, &init_wrong, &path.observations).unwrap();
    for (p, q) in traj_true.posteriors().iter().zip(traj_wrong.posteriors()) {
        let eta = predictor(&model, p, &|y| y).unwrap();
        let eta_bar = predictor(&model, q, &|y| y).unwrap();
        let row_gap: f64 = (0..2)
            .map(|j| (p.weights()[j] - q.weights()[j]) * b.entry(1, j + 1))
            .sum();
        assert!(
            ((eta - eta_bar).abs() - row_gap.abs()).abs() < 1e-10,
            "path-wise identity broke: {} vs {}",
            (eta - eta_bar).abs(),
            row_gap.abs()
        );
    }
}

#[test]
fn solved_g_transfers_the_filter_functional_to_the_predictor() {
    // When Γg = f has a solution, π(f) = η(g) for every distribution π.
    let channel = ObservationChannel::FiniteAlphabet {
        letters: vec![-1.0, 0.5, 2.0],
        gamma: vec![
            vec![0.7, 0.2, 0.1],
            vec![0.2, 0.5, 0.3],
            vec![0.1, 0.1, 0.8],
        ],
    };
    let atoms = vec![0.0, 1.0, 2.0];
    let model = build_finite_hmm(
        vec![
            vec![0.5, 0.3, 0.2],
            vec![0.2, 0.5, 0.3],
            vec![0.3, 0.2, 0.5],
        ],
        atoms.clone(),
        vec![
            NoiseSpec::Discrete { values: vec![-1.0, 0.5, 2.0], probs: vec![0.7, 0.2, 0.1] },
            NoiseSpec::Discrete { values: vec![-1.0, 0.5, 2.0], probs: vec![0.2, 0.5, 0.3] },
            NoiseSpec::Discrete { values: vec![-1.0, 0.5, 2.0], probs: vec![0.1, 0.1, 0.8] },
        ],
        vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
    )
    .unwrap();
    let f = |x: f64| x * x - 0.5 * x + 1.0;
    let solved = solve_g(&channel, &atoms, f).unwrap();
    assert!(solved.residual <= 1e-8, "residual {}", solved.residual);
    let g = solved.g_fn();
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    for _ in 0..100 {
        let w = random_simplex(&mut rng, 3);
        let pi = Distribution::Finite(
            FiniteDistribution::new(atoms.clone(), w).unwrap(),
        );
        let lhs = expect(&pi, f);
        let rhs = predictor(&model, &pi, &g).unwrap();
        assert!((lhs - rhs).abs() < 1e-8, "{lhs} vs {rhs}");
    }
}

#[test]
fn gaussian_char_fn_closed_form_matches_quadrature() {
    let channel = ObservationChannel::AdditiveGaussian {
        slope: 1.0,
        intercept: 0.0,
        noise_mean: 0.3,
        noise_std: 1.7,
    };
    for &t in &[0.25, 1.0, 2.5] {
        let closed = channel.noise_char_fn(t).unwrap();
        let re = adaptive_simpson(
            &|y: f64| (t * y).cos() * normal_pdf(y, 0.3, 1.7),
            0.3 - 20.0,
            0.3 + 20.0,
            1e-12,
        )
        .unwrap();
        let im = adaptive_simpson(
            &|y: f64| (t * y).sin() * normal_pdf(y, 0.3, 1.7),
            0.3 - 20.0,
            0.3 + 20.0,
            1e-12,
        )
        .unwrap();
        assert!((closed.re - re).abs() < 1e-10, "re at t={t}");
        assert!((closed.im - im).abs() < 1e-10, "im at t={t}");
        assert!(closed.norm() > 0.0);
    }
}

#[test]
fn observation_mean_matches_clt_bound() {
    // Additive model, X_0 = 0 exactly: Y_1 ~ N(0, 1); the empirical mean of
    // 1e5 draws stays within 0.01 (a > 3-sigma CLT allowance).
    let model = build_additive_model(
        SignalKernel::ar1(0.8, 0.5).unwrap(),
        LinearObservation::identity(),
        NoiseSpec::Gaussian { mean: 0.0, std: 1.0 },
        InitialLaw::Point(0.0),
    )
    .unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(31);
    let mut acc = 0.0;
    let n = 100_000;
    for _ in 0..n {
        let p = filterlab::models::simulate_path_with_rng(&model, 1, &mut rng).unwrap();
        acc += p.observations[0];
    }
    let mean = acc / n as f64;
    assert!(mean.abs() < 0.01, "empirical mean {mean}");
}

#[test]
fn gridded_single_step_bayes_matches_conjugate_posterior() {
    // Static signal, prior N(0,1), observation y = 2 with N(0,1) noise:
    // the posterior on the state is N(1, 0.5). The gridded Bayes update
    // (cell masses times the likelihood at midpoints) reproduces the mean
    // and variance within 1e-4 at 2048 cells.
    let gs = GridSpec::new(-8.0, 8.0, 2048).unwrap();
    let edges = gs.edges();
    let mids = gs.midpoints();
    let mut masses = Vec::with_capacity(gs.cells);
    let mut prev = normal_cdf(edges[0], 0.0, 1.0);
    for j in 0..gs.cells {
        let cur = normal_cdf(edges[j + 1], 0.0, 1.0);
        masses.push(cur - prev);
        prev = cur;
    }
    let weighted: Vec<f64> = masses
        .iter()
        .zip(&mids)
        .map(|(m, &x)| m * normal_pdf(2.0, x, 1.0))
        .collect();
    let post = normalize(&weighted).unwrap();
    let mean: f64 = post.iter().zip(&mids).map(|(w, &x)| w * x).sum();
    let var: f64 = post
        .iter()
        .zip(&mids)
        .map(|(w, &x)| w * (x - mean) * (x - mean))
        .sum();
    assert!((mean - 1.0).abs() < 1e-4, "mean {mean}");
    assert!((var - 0.5).abs() < 1e-4, "var {var}");
}

#[test]
fn grid_filter_tracks_kalman_through_a_short_path() {
    let stationary_std = 0.8333333333333334;
    let model = build_additive_model(
        SignalKernel::ar1(0.8, 0.5).unwrap(),
        LinearObservation::identity(),
        NoiseSpec::Gaussian { mean: 0.0, std: 1.0 },
        InitialLaw::Gaussian { mean: 0.0, std: stationary_std },
    )
    .unwrap();
    let path = simulate_path(&model, 25, 555).unwrap();
    let disc = discretize(&model, &GridSpec::new(-6.0, 6.0, 1024).unwrap()).unwrap();
    let init = disc.init_distribution().unwrap().clone();
    let traj = run_filter(&disc, &init, &path.observations).unwrap();
    let oracle = filterlab::oracle::kalman_oracle(
        0.8,
        0.5,
        1.0,
        0.0,
        stationary_std * stationary_std,
        &path.observations,
    );
    for (post, state) in traj.posteriors().iter().zip(&oracle) {
        assert!((expect(post, |x| x) - state.mean).abs() < 1e-4);
        assert!((post.variance() - state.variance).abs() < 1e-4);
    }
}
