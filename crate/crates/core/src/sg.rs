//! The serial Gaussian (SG) prior family and the heavy-tailed multiplicative
//! observation noise of the stochastic-volatility model.
//!
//! An SG density is a Gaussian modulated by an even polynomial,
//! `q(x) = (Σ_i α_i x^{2i} / (σ^{2i} C_{2i})) · N(0, σ²)(x)`,
//! with nonnegative weights summing to one. The normalizers `C_{2i}` make
//! each mixture term integrate to one; from the Gaussian even moments they
//! are the double factorials `C_{2i} = (2i-1)!!` (verified by quadrature in
//! the tests rather than assumed).
//!
//! The observation noise `ξ` has density `p(x) = ρ/|x|³ · exp(-ρ/x²)`,
//! `p(0) = 0`. Its reciprocal square `1/ξ²` is exponential with rate `ρ`,
//! which gives both an exact sampler and a smooth substitution for
//! quadrature: with `t = √ρ/v²`,
//! `∫_0^∞ f(t) p(t) dt = 2 ∫_0^∞ f(√ρ/v²) v³ e^{-v⁴} dv`.

use rand::Rng;
use rand_distr::{Distribution as RandDistribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use crate::numeric::{adaptive_simpson, double_factorial, normal_pdf};
use crate::{Error, Result};

/// Parameters of an SG density: scaling `σ` and polynomial weights `α_0..α_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgParams {
    pub sigma: f64,
    pub alpha: Vec<f64>,
}

impl SgParams {
    pub fn new(sigma: f64, alpha: Vec<f64>) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::ConfigInvalid {
                field: "sigma".into(),
                reason: format!("must be positive, got {sigma}"),
            });
        }
        if alpha.is_empty() {
            return Err(Error::ConfigInvalid {
                field: "alpha".into(),
                reason: "needs at least one weight".into(),
            });
        }
        for (i, &a) in alpha.iter().enumerate() {
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::ConfigInvalid {
                    field: format!("alpha[{i}]"),
                    reason: format!("must be nonnegative, got {a}"),
                });
            }
        }
        let total: f64 = alpha.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::ConfigInvalid {
                field: "alpha".into(),
                reason: format!("weights sum to {total}, expected 1"),
            });
        }
        Ok(Self { sigma, alpha })
    }

    /// Pure Gaussian prior N(0, sigma²) as the single-term SG member.
    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::new(sigma, vec![1.0])
    }
}

/// Normalizer `C_{2i} = (2i-1)!!` of the i-th SG mixture term.
pub fn sg_normalizer(i: usize) -> f64 {
    double_factorial(2 * i as i64 - 1)
}

/// SG density at `x`.
pub fn sg_density(x: f64, p: &SgParams) -> f64 {
    let z2 = (x / p.sigma) * (x / p.sigma);
    let mut poly = 0.0;
    let mut z_pow = 1.0;
    for (i, &a) in p.alpha.iter().enumerate() {
        poly += a * z_pow / sg_normalizer(i);
        z_pow *= z2;
    }
    poly * normal_pdf(x, 0.0, p.sigma)
}

/// Draw from an SG law: pick a mixture term by its weight, then use the fact
/// that term i is the law of `±σ√G` with `G ~ Gamma(i + 1/2, 2)` (a
/// chi-square with 2i+1 degrees of freedom).
pub fn sg_sample<R: Rng + ?Sized>(p: &SgParams, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut comp = p.alpha.len() - 1;
    for (i, &a) in p.alpha.iter().enumerate() {
        acc += a;
        if u < acc {
            comp = i;
            break;
        }
    }
    let gamma = Gamma::new(comp as f64 + 0.5, 2.0).expect("valid gamma shape");
    let g: f64 = gamma.sample(rng);
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    sign * p.sigma * g.sqrt()
}

/// Boundedness analysis of the ratio `q_σ / N(0, σ̄²)` between an SG density
/// and a centered Gaussian. The ratio is bounded iff `σ̄ > σ`, or the SG
/// member is itself the plain Gaussian (only `α_0` nonzero) with `σ̄ = σ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SgRatioAnalysis {
    pub bounded: bool,
    /// Supremum of the ratio when bounded.
    pub sup: Option<f64>,
    /// Location of the supremum (x ≥ 0; the ratio is even).
    pub argmax: Option<f64>,
}

/// Analyze `sup_x q(x; p) / N(0, sigma_bar²)(x)`.
pub fn sg_ratio_analysis(p: &SgParams, sigma_bar: f64) -> SgRatioAnalysis {
    let degree = p.alpha.iter().rposition(|&a| a > 0.0).unwrap_or(0);
    let bounded = sigma_bar > p.sigma || (sigma_bar == p.sigma && degree == 0);
    if !bounded {
        return SgRatioAnalysis { bounded: false, sup: None, argmax: None };
    }
    let ratio = |x: f64| sg_density(x, p) / normal_pdf(x, 0.0, sigma_bar);
    // Even smooth function; coarse scan then local golden-section refinement.
    // Beyond x_hi the decaying exponential dominates any polynomial factor.
    let x_hi = if sigma_bar > p.sigma {
        let decay = 0.5 * (1.0 / (p.sigma * p.sigma) - 1.0 / (sigma_bar * sigma_bar));
        ((degree as f64 + 1.0) / decay).sqrt() * 4.0 + 10.0 * p.sigma
    } else {
        1.0
    };
    let n = 4000;
    let mut best_x = 0.0;
    let mut best = ratio(0.0);
    for k in 1..=n {
        let x = x_hi * k as f64 / n as f64;
        let r = ratio(x);
        if r > best {
            best = r;
            best_x = x;
        }
    }
    let step = x_hi / n as f64;
    let (mut lo, mut hi) = ((best_x - step).max(0.0), best_x + step);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if ratio(a) < ratio(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    let x_star = 0.5 * (lo + hi);
    let sup = ratio(x_star).max(best);
    SgRatioAnalysis { bounded: true, sup: Some(sup), argmax: Some(x_star) }
}

/// Density `p(x) = ρ/|x|³ · exp(-ρ/x²)` of the multiplicative noise, `p(0)=0`.
pub fn mult_noise_density(x: f64, rho: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let x2 = x * x;
    rho / (x2.abs() * x.abs()) * (-rho / x2).exp()
}

/// Log of `mult_noise_density`; `-inf` at `x = 0`.
pub fn mult_noise_log_density(x: f64, rho: f64) -> f64 {
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    rho.ln() - 3.0 * x.abs().ln() - rho / (x * x)
}

/// Tail probability `P(|ξ| > t) = 1 - exp(-ρ/t²)` (exact; follows from the
/// substitution `u = ρ/x²`).
pub fn mult_noise_tail_prob(t: f64, rho: f64) -> f64 {
    -(-rho / (t * t)).exp_m1()
}

/// Exact sampler: `1/ξ²` is exponential with rate `ρ`, sign symmetric.
pub fn mult_noise_sample<R: Rng + ?Sized>(rho: f64, rng: &mut R) -> f64 {
    let e: f64 = Exp1.sample(rng);
    let magnitude = (rho / e).sqrt();
    if rng.random::<bool>() {
        magnitude
    } else {
        -magnitude
    }
}

/// `∫ f(t) p(t) dt` over the real line by adaptive quadrature in the
/// substituted variable `t = √ρ/v²` (smooth integrand `2 f v³ e^{-v⁴}`).
/// Fails with `NonFiniteResult` when the integral diverges, e.g. for
/// `f(t) = t²` (the noise has no second moment): the substituted integrand
/// must vanish toward `v = 0`, and its residual mass below the truncation
/// point is checked before integrating.
pub fn expect_mult_noise<F: Fn(f64) -> f64>(rho: f64, f: F) -> Result<f64> {
    const V_LO: f64 = 1e-10;
    let sqrt_rho = rho.sqrt();
    let integrand = |v: f64| {
        let t = sqrt_rho / (v * v);
        let v3 = v * v * v;
        2.0 * (f(t) + f(-t)) * v3 * (-v3 * v).exp()
    };
    let tail_scale = integrand(V_LO).abs() * V_LO;
    let body_scale = integrand(0.5).abs().max(integrand(1.0).abs()).max(1.0);
    if !tail_scale.is_finite() || tail_scale > 1e-8 * body_scale {
        return Err(Error::NonFiniteResult(
            "far-tail contribution of the noise integral does not vanish \
             (the moment diverges or grows too close to the t² boundary)"
                .into(),
        ));
    }
    adaptive_simpson(&integrand, V_LO, 5.0, 1e-11)
}

/// `E|ξ₁|` by adaptive quadrature (the closed form is `√(πρ)`; the tests
/// hold the two routes against each other).
pub fn abs_mean_xi(rho: f64) -> f64 {
    expect_mult_noise(rho, |t| t.abs()).expect("|t| has a finite mean under p")
}

/// Cell masses of an SG density on the cells delimited by `edges`
/// (per-cell Simpson, then exact renormalization).
pub fn sg_cell_masses(edges: &[f64], p: &SgParams) -> Result<Vec<f64>> {
    let mut masses = Vec::with_capacity(edges.len() - 1);
    for w in edges.windows(2) {
        let (l, r) = (w[0], w[1]);
        let m = 0.5 * (l + r);
        let v = (sg_density(l, p) + 4.0 * sg_density(m, p) + sg_density(r, p)) / 6.0 * (r - l);
        masses.push(v);
    }
    crate::measure::normalize(&masses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::std_normal_pdf;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn normalizers_match_gaussian_even_moments_by_quadrature() {
        // C_{2i} must equal ∫ z^{2i} N(0,1)(z) dz so each term integrates to 1.
        for i in 0..=5usize {
            let moment = adaptive_simpson(
                &|z: f64| z.powi(2 * i as i32) * std_normal_pdf(z),
                -12.0,
                12.0,
                1e-12,
            )
            .unwrap();
            assert_abs_diff_eq!(sg_normalizer(i), moment, epsilon = 1e-8 * moment.max(1.0));
        }
        assert_eq!(sg_normalizer(1), 1.0);
        assert_eq!(sg_normalizer(2), 3.0);
        assert_eq!(sg_normalizer(3), 15.0);
    }

    #[test]
    fn single_term_sg_is_the_gaussian() {
        let p = SgParams::gaussian(0.8).unwrap();
        for &x in &[-2.0, -0.3, 0.0, 1.1, 2.7] {
            assert_abs_diff_eq!(sg_density(x, &p), normal_pdf(x, 0.0, 0.8), epsilon = 1e-15);
        }
    }

    #[test]
    fn sg_density_integrates_to_one() {
        for (sigma, alpha) in [
            (1.0, vec![1.0]),
            (0.7, vec![0.5, 0.5]),
            (1.3, vec![0.2, 0.3, 0.1, 0.4]),
        ] {
            let p = SgParams::new(sigma, alpha).unwrap();
            let total = adaptive_simpson(&|x| sg_density(x, &p), -10.0 * sigma, 10.0 * sigma, 1e-12)
                .unwrap();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-8);
        }
        // and for randomly drawn valid parameters
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        for _ in 0..8 {
            let sigma: f64 = rng.random_range(0.3..2.0);
            let k = rng.random_range(1..=4usize);
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
            let alpha = crate::measure::normalize(&raw).unwrap();
            let p = SgParams::new(sigma, alpha).unwrap();
            let total = adaptive_simpson(&|x| sg_density(x, &p), -10.0 * sigma, 10.0 * sigma, 1e-12)
                .unwrap();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn sg_sampler_matches_density_moments() {
        let p = SgParams::new(0.7, vec![0.5, 0.5]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let n = 200_000;
        let mut m2 = 0.0;
        for _ in 0..n {
            let x = sg_sample(&p, &mut rng);
            m2 += x * x;
        }
        m2 /= n as f64;
        let want =
            adaptive_simpson(&|x| x * x * sg_density(x, &p), -12.0, 12.0, 1e-12).unwrap();
        // Standard error of the second moment is ~sqrt(Var(x^2)/n) ~ 0.004.
        assert_abs_diff_eq!(m2, want, epsilon = 0.02);
    }

    #[test]
    fn ratio_bounded_iff_wider_gaussian() {
        let p = SgParams::new(0.7, vec![0.5, 0.5]).unwrap();
        assert!(sg_ratio_analysis(&p, 1.0).bounded);
        assert!(!sg_ratio_analysis(&p, 0.7).bounded);
        assert!(!sg_ratio_analysis(&p, 0.5).bounded);
        // Pure Gaussian at equal sigma: ratio is identically 1.
        let g = SgParams::gaussian(0.7).unwrap();
        let a = sg_ratio_analysis(&g, 0.7);
        assert!(a.bounded);
        assert_abs_diff_eq!(a.sup.unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ratio_sup_matches_dense_grid_scan() {
        let p = SgParams::new(0.7, vec![0.5, 0.5]).unwrap();
        let a = sg_ratio_analysis(&p, 1.0);
        let sup = a.sup.unwrap();
        let mut grid_max = 0.0f64;
        for k in 0..=1_200_000 {
            let x = -12.0 + 24.0 * k as f64 / 1_200_000.0;
            let r = sg_density(x, &p) / normal_pdf(x, 0.0, 1.0);
            grid_max = grid_max.max(r);
        }
        assert!((sup - grid_max).abs() <= 0.05 * grid_max, "sup={sup} grid={grid_max}");
        // Spot value from an independent scan of the closed-form ratio.
        assert_abs_diff_eq!(sup, 1.3297879550086356, epsilon = 1e-6);
    }

    #[test]
    fn noise_density_zero_at_origin_and_evaluates() {
        assert_eq!(mult_noise_density(0.0, 1.0), 0.0);
        assert_eq!(mult_noise_log_density(0.0, 1.0), f64::NEG_INFINITY);
        // p(1) = rho * e^{-rho} at rho = 1.
        assert_abs_diff_eq!(mult_noise_density(1.0, 1.0), (-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn noise_density_integrates_to_one() {
        for rho in [0.5, 1.0, 4.0] {
            let total = expect_mult_noise(rho, |_| 1.0).unwrap();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn noise_quadrature_matches_tail_closed_form() {
        // ∫_{|x|>t} p dx vs 1 - e^{-rho/t^2}.
        let rho = 1.0;
        let t = 1.5;
        let got = expect_mult_noise(rho, |x| if x.abs() > t { 1.0 } else { 0.0 }).unwrap();
        assert_abs_diff_eq!(got, mult_noise_tail_prob(t, rho), epsilon = 1e-8);
    }

    #[test]
    fn abs_mean_matches_closed_form() {
        for rho in [0.5, 1.0, 4.0] {
            assert_abs_diff_eq!(
                abs_mean_xi(rho),
                (std::f64::consts::PI * rho).sqrt(),
                epsilon = 1e-6
            );
        }
        assert_abs_diff_eq!(abs_mean_xi(1.0), 1.7724538509055159, epsilon = 1e-6);
    }

    #[test]
    fn abs_mean_scale_invariance() {
        // E|ξ|/√ρ is constant in ρ.
        let base = abs_mean_xi(1.0);
        for rho in [0.5, 1.0, 4.0] {
            assert_abs_diff_eq!(abs_mean_xi(rho) / rho.sqrt(), base, epsilon = 1e-8);
        }
    }

    #[test]
    fn fractional_moment_matches_gamma_closed_form() {
        // E|ξ|^q = Γ(1 - q/2) ρ^{q/2}; at q = 3/2, Γ(1/4) ρ^{3/4}.
        let gamma_quarter = 3.625_609_908_221_908;
        let got = expect_mult_noise(1.0, |t| t.abs().powf(1.5)).unwrap();
        assert_abs_diff_eq!(got, gamma_quarter, epsilon = 1e-6);
    }

    #[test]
    fn second_moment_diverges() {
        assert!(expect_mult_noise(1.0, |t| t * t).is_err());
    }

    #[test]
    fn sampler_tail_matches_closed_form() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let rho = 1.0;
        let n = 200_000;
        let t = 1.0;
        let mut hits = 0usize;
        for _ in 0..n {
            if mult_noise_sample(rho, &mut rng).abs() > t {
                hits += 1;
            }
        }
        let phat = hits as f64 / n as f64;
        let p = mult_noise_tail_prob(t, rho);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((phat - p).abs() < 4.0 * se, "phat={phat} p={p} se={se}");
    }
}
