//! Probability measures on finite alphabets and uniform quadrature grids.
//!
//! Two carriers are supported: a finite list of distinct real atoms, and a
//! uniform grid where weights are *cell masses* (already integrated against
//! the cell width, so normalization stays exact and filter updates remain
//! measure-valued). Total variation uses the un-halved L1 convention
//! `Σ|p_i - q_i| ∈ [0, 2]` everywhere.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::numeric::compensated_sum;
use crate::{Error, Result};

/// Normalization tolerance for finite-alphabet distributions.
pub const FINITE_MASS_TOL: f64 = 1e-12;
/// Normalization tolerance for grid distributions (quadrature headroom).
pub const GRID_MASS_TOL: f64 = 1e-10;
/// Relative tolerance on grid spacing uniformity.
pub const GRID_SPACING_TOL: f64 = 1e-12;

/// Probability distribution on a finite set of distinct real atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDistribution {
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl FiniteDistribution {
    /// Build from atoms and weights; weights must be nonnegative and sum to 1
    /// within `FINITE_MASS_TOL`.
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.len() != weights.len() {
            return Err(Error::MismatchedSupport(format!(
                "{} atoms vs {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if atoms.is_empty() {
            return Err(Error::MismatchedSupport("empty support".into()));
        }
        for (i, a) in atoms.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::NonFiniteResult(format!("atom {i}")));
            }
            if atoms[..i].contains(a) {
                return Err(Error::MismatchedSupport(format!("duplicate atom {a}")));
            }
        }
        check_weights(&weights, FINITE_MASS_TOL)?;
        Ok(Self { atoms, weights })
    }

    /// Point mass at `atoms[index]`.
    pub fn point_mass(atoms: Vec<f64>, index: usize) -> Result<Self> {
        let mut w = vec![0.0; atoms.len()];
        w[index] = 1.0;
        Self::new(atoms, w)
    }

    /// Uniform distribution on the given atoms.
    pub fn uniform(atoms: Vec<f64>) -> Result<Self> {
        let n = atoms.len();
        Self::new(atoms, vec![1.0 / n as f64; n])
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// Probability distribution carried by a uniform grid of cell midpoints.
/// `cell_weights[i]` is the mass of the i-th cell, not a density sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDistribution {
    grid: Vec<f64>,
    cell_weights: Vec<f64>,
    cell_width: f64,
}

impl GridDistribution {
    pub fn new(grid: Vec<f64>, cell_weights: Vec<f64>, cell_width: f64) -> Result<Self> {
        if grid.len() != cell_weights.len() {
            return Err(Error::MismatchedSupport(format!(
                "{} grid points vs {} weights",
                grid.len(),
                cell_weights.len()
            )));
        }
        if grid.len() < 2 {
            return Err(Error::MismatchedSupport("grid needs at least 2 cells".into()));
        }
        if !(cell_width.is_finite() && cell_width > 0.0) {
            return Err(Error::NonFiniteResult("cell width".into()));
        }
        for w in grid.windows(2) {
            let step = w[1] - w[0];
            if (step - cell_width).abs() > GRID_SPACING_TOL * cell_width.max(1.0) {
                return Err(Error::MismatchedSupport(format!(
                    "grid spacing {step} differs from declared width {cell_width}"
                )));
            }
        }
        check_weights(&cell_weights, GRID_MASS_TOL)?;
        Ok(Self { grid, cell_weights, cell_width })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn cell_weights(&self) -> &[f64] {
        &self.cell_weights
    }

    pub fn cell_width(&self) -> f64 {
        self.cell_width
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

fn check_weights(weights: &[f64], tol: f64) -> Result<()> {
    for (i, &w) in weights.iter().enumerate() {
        if !w.is_finite() {
            return Err(Error::NonFiniteResult(format!("weight {i}")));
        }
        if w < 0.0 {
            return Err(Error::NegativeWeight { index: i, value: w });
        }
    }
    let total = compensated_sum(weights);
    if (total - 1.0).abs() > tol {
        return Err(Error::MismatchedSupport(format!(
            "weights sum to {total}, expected 1 within {tol:e}"
        )));
    }
    Ok(())
}

/// A filter state: either a finite-alphabet law or a grid law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "carrier", rename_all = "kebab-case")]
pub enum Distribution {
    Finite(FiniteDistribution),
    Grid(GridDistribution),
}

impl Distribution {
    /// Support points: atoms or grid midpoints.
    pub fn points(&self) -> &[f64] {
        match self {
            Distribution::Finite(d) => d.atoms(),
            Distribution::Grid(d) => d.grid(),
        }
    }

    /// Probability weights (cell masses in the grid case).
    pub fn weights(&self) -> &[f64] {
        match self {
            Distribution::Finite(d) => d.weights(),
            Distribution::Grid(d) => d.cell_weights(),
        }
    }

    pub fn len(&self) -> usize {
        self.points().len()
    }

    pub fn is_empty(&self) -> bool {
        self.points().is_empty()
    }

    /// Rebuild a distribution of the same carrier shape with new weights.
    /// The weights are validated against the carrier's tolerance.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        match self {
            Distribution::Finite(d) => Ok(Distribution::Finite(FiniteDistribution::new(
                d.atoms().to_vec(),
                weights,
            )?)),
            Distribution::Grid(d) => Ok(Distribution::Grid(GridDistribution::new(
                d.grid().to_vec(),
                weights,
                d.cell_width(),
            )?)),
        }
    }

    /// Mean of the carrier points.
    pub fn mean(&self) -> f64 {
        expect(self, |x| x)
    }

    /// Variance around the mean.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        expect(self, |x| (x - m) * (x - m))
    }

    fn same_carrier(&self, other: &Self) -> Result<()> {
        let ok = match (self, other) {
            (Distribution::Finite(a), Distribution::Finite(b)) => a.atoms() == b.atoms(),
            (Distribution::Grid(a), Distribution::Grid(b)) => {
                a.grid() == b.grid() && a.cell_width() == b.cell_width()
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::MismatchedSupport(
                "operands live on different carriers".into(),
            ))
        }
    }
}

impl From<FiniteDistribution> for Distribution {
    fn from(d: FiniteDistribution) -> Self {
        Distribution::Finite(d)
    }
}

impl From<GridDistribution> for Distribution {
    fn from(d: GridDistribution) -> Self {
        Distribution::Grid(d)
    }
}

/// Un-halved total variation `Σ|p_i - q_i|`, in `[0, 2]`.
pub fn l1_tv(p: &Distribution, q: &Distribution) -> Result<f64> {
    p.same_carrier(q)?;
    let mut acc = 0.0;
    for (a, b) in p.weights().iter().zip(q.weights()) {
        acc += (a - b).abs();
    }
    Ok(acc)
}

/// Expectation `Σ f(x_i) w_i`.
pub fn expect<F: Fn(f64) -> f64>(d: &Distribution, f: F) -> f64 {
    let pts = d.points();
    let ws = d.weights();
    let mut acc = 0.0;
    for (x, w) in pts.iter().zip(ws) {
        acc += f(*x) * w;
    }
    acc
}

/// Expectation with a checked finite result.
pub fn try_expect<F: Fn(f64) -> f64>(d: &Distribution, f: F) -> Result<f64> {
    let v = expect(d, f);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteResult("expectation".into()))
    }
}

/// Complex expectation, used for characteristic functions.
pub fn expect_complex<F: Fn(f64) -> Complex64>(d: &Distribution, f: F) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (x, w) in d.points().iter().zip(d.weights()) {
        acc += f(*x) * *w;
    }
    acc
}

/// The density `dν/dν̄` evaluated per atom or cell, with its supremum over
/// the support of `ν̄` and an optional p-th moment under `ν̄`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityRatio {
    values: Vec<f64>,
    sup_bound: Option<f64>,
    p_norm: Option<(f64, f64)>,
}

impl DensityRatio {
    /// Per-point values of the ratio (0 where `ν̄` vanishes).
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Supremum of the ratio over the support of `ν̄`.
    pub fn sup_bound(&self) -> Option<f64> {
        self.sup_bound
    }

    /// Stored `(p, Ē (dν/dν̄)^p)` if one was computed.
    pub fn p_norm(&self) -> Option<(f64, f64)> {
        self.p_norm
    }

    /// Compute and store `Ē (dν/dν̄)^p` against the reference law.
    pub fn with_p_norm(mut self, p: f64, nu_bar: &Distribution) -> Result<Self> {
        if self.values.len() != nu_bar.len() {
            return Err(Error::MismatchedSupport("ratio vs reference law".into()));
        }
        let mut acc = 0.0;
        for (r, w) in self.values.iter().zip(nu_bar.weights()) {
            acc += r.powf(p) * w;
        }
        if !acc.is_finite() {
            return Err(Error::NonFiniteResult("p-norm of density ratio".into()));
        }
        self.p_norm = Some((p, acc));
        Ok(self)
    }
}

/// Evaluate `dν/dν̄` per point. Errors with `NotAbsolutelyContinuous` when
/// `ν` puts mass where `ν̄` does not — the inadmissible-initialization
/// witness.
pub fn density_ratio(nu: &Distribution, nu_bar: &Distribution) -> Result<DensityRatio> {
    nu.same_carrier(nu_bar)?;
    let mut values = Vec::with_capacity(nu.len());
    let mut sup = 0.0f64;
    for ((&p, &pb), &x) in nu.weights().iter().zip(nu_bar.weights()).zip(nu.points()) {
        if pb == 0.0 {
            if p > 0.0 {
                return Err(Error::NotAbsolutelyContinuous {
                    point: format!("{x}"),
                    mass: p,
                });
            }
            values.push(0.0);
        } else {
            let r = p / pb;
            sup = sup.max(r);
            values.push(r);
        }
    }
    Ok(DensityRatio {
        values,
        sup_bound: Some(sup),
        p_norm: None,
    })
}

/// Normalize nonnegative weights to total mass 1. `ZeroMass` on an all-zero
/// input — the 0/0 surface of the filter update.
pub fn normalize(weights: &[f64]) -> Result<Vec<f64>> {
    for (i, &w) in weights.iter().enumerate() {
        if !w.is_finite() {
            return Err(Error::NonFiniteResult(format!("weight {i}")));
        }
        if w < 0.0 {
            return Err(Error::NegativeWeight { index: i, value: w });
        }
    }
    let total = compensated_sum(weights);
    if total <= 0.0 {
        return Err(Error::ZeroMass);
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn fin(weights: &[f64]) -> Distribution {
        let atoms: Vec<f64> = (0..weights.len()).map(|i| i as f64).collect();
        Distribution::Finite(FiniteDistribution::new(atoms, weights.to_vec()).unwrap())
    }

    #[test]
    fn tv_of_identical_measures_is_zero() {
        let p = fin(&[0.5, 0.5]);
        assert_eq!(l1_tv(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn tv_of_disjoint_supports_is_two() {
        let p = fin(&[1.0, 0.0]);
        let q = fin(&[0.0, 1.0]);
        assert_eq!(l1_tv(&p, &q).unwrap(), 2.0);
    }

    #[test]
    fn tv_forced_arithmetic() {
        let p = fin(&[0.5, 0.5]);
        let q = fin(&[0.25, 0.75]);
        assert_abs_diff_eq!(l1_tv(&p, &q).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn tv_rejects_mismatched_carriers() {
        let p = fin(&[0.5, 0.5]);
        let q = Distribution::Finite(
            FiniteDistribution::new(vec![3.0, 4.0], vec![0.5, 0.5]).unwrap(),
        );
        assert!(matches!(l1_tv(&p, &q), Err(Error::MismatchedSupport(_))));
    }

    #[test]
    fn expect_normalization_and_point_mass() {
        let p = fin(&[0.3, 0.7]);
        assert_abs_diff_eq!(expect(&p, |_| 1.0), 1.0, epsilon = 1e-15);
        let d = Distribution::Finite(
            FiniteDistribution::point_mass(vec![-2.0, 5.5], 1).unwrap(),
        );
        assert_eq!(expect(&d, |x| x), 5.5);
    }

    #[test]
    fn expect_second_moment_uniform_three_points() {
        let d = Distribution::Finite(
            FiniteDistribution::uniform(vec![-1.0, 0.0, 1.0]).unwrap(),
        );
        assert_abs_diff_eq!(expect(&d, |x| x * x), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn density_ratio_identical_laws() {
        let p = fin(&[0.5, 0.5]);
        let r = density_ratio(&p, &p).unwrap();
        assert_eq!(r.values(), &[1.0, 1.0]);
        assert_eq!(r.sup_bound(), Some(1.0));
    }

    #[test]
    fn density_ratio_forced_arithmetic() {
        let nu = fin(&[1.0, 0.0]);
        let nu_bar = fin(&[0.5, 0.5]);
        let r = density_ratio(&nu, &nu_bar).unwrap();
        assert_eq!(r.values(), &[2.0, 0.0]);
        assert_eq!(r.sup_bound(), Some(2.0));
    }

    #[test]
    fn density_ratio_detects_support_violation() {
        let nu = fin(&[0.5, 0.5]);
        let nu_bar = fin(&[1.0, 0.0]);
        assert!(matches!(
            density_ratio(&nu, &nu_bar),
            Err(Error::NotAbsolutelyContinuous { .. })
        ));
    }

    #[test]
    fn density_ratio_p_norm_two_term_sum() {
        let nu = fin(&[0.5, 0.5]);
        let nu_bar = fin(&[0.9, 0.1]);
        let r = density_ratio(&nu, &nu_bar)
            .unwrap()
            .with_p_norm(2.0, &nu_bar)
            .unwrap();
        assert_eq!(r.sup_bound(), Some(5.0));
        let expected = 0.9 * (5.0f64 / 9.0).powi(2) + 0.1 * 25.0;
        assert_abs_diff_eq!(r.p_norm().unwrap().1, expected, epsilon = 1e-12);
    }

    #[test]
    fn normalize_cases() {
        assert_eq!(normalize(&[2.0, 2.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(normalize(&[0.0, 3.0]).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(normalize(&[0.0, 0.0]), Err(Error::ZeroMass)));
        assert!(matches!(
            normalize(&[-1.0, 2.0]),
            Err(Error::NegativeWeight { .. })
        ));
    }

    #[test]
    fn normalize_idempotent_on_normalized_input() {
        let w = normalize(&[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(normalize(&w).unwrap(), w);
    }

    #[test]
    fn grid_distribution_validates_spacing() {
        let r = GridDistribution::new(vec![0.0, 0.1, 0.25], vec![0.3, 0.3, 0.4], 0.1);
        assert!(r.is_err());
        let g = GridDistribution::new(vec![0.05, 0.15, 0.25], vec![0.3, 0.3, 0.4], 0.1).unwrap();
        assert_eq!(g.len(), 3);
    }

    proptest! {
        #[test]
        fn tv_is_a_metric(raw_p in proptest::collection::vec(0.01f64..1.0, 4),
                          raw_q in proptest::collection::vec(0.01f64..1.0, 4),
                          raw_r in proptest::collection::vec(0.01f64..1.0, 4)) {
            let p = fin(&normalize(&raw_p).unwrap());
            let q = fin(&normalize(&raw_q).unwrap());
            let r = fin(&normalize(&raw_r).unwrap());
            let dpq = l1_tv(&p, &q).unwrap();
            let dqp = l1_tv(&q, &p).unwrap();
            prop_assert!((0.0..=2.0).contains(&dpq));
            prop_assert!((dpq - dqp).abs() < 1e-15);
            // zero iff equal weights
            prop_assert!((l1_tv(&p, &p).unwrap()).abs() == 0.0);
            // triangle inequality
            let dpr = l1_tv(&p, &r).unwrap();
            let drq = l1_tv(&r, &q).unwrap();
            prop_assert!(dpq <= dpr + drq + 1e-12);
        }

        #[test]
        fn expectation_is_tv_lipschitz(raw_p in proptest::collection::vec(0.01f64..1.0, 5),
                                       raw_q in proptest::collection::vec(0.01f64..1.0, 5),
                                       fv in proptest::collection::vec(-3.0f64..3.0, 5)) {
            let p = fin(&normalize(&raw_p).unwrap());
            let q = fin(&normalize(&raw_q).unwrap());
            let f = |x: f64| fv[x as usize];
            let lhs = (expect(&p, f) - expect(&q, f)).abs();
            let bound = fv.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()))
                * l1_tv(&p, &q).unwrap();
            prop_assert!(lhs <= bound + 1e-12);
        }

        #[test]
        fn ratio_reintegrates_to_nu(raw_nu in proptest::collection::vec(0.01f64..1.0, 4),
                                    raw_bar in proptest::collection::vec(0.05f64..1.0, 4),
                                    fv in proptest::collection::vec(-2.0f64..2.0, 4)) {
            let nu = fin(&normalize(&raw_nu).unwrap());
            let nu_bar = fin(&normalize(&raw_bar).unwrap());
            let ratio = density_ratio(&nu, &nu_bar).unwrap();
            let vals = ratio.values().to_vec();
            let f = move |x: f64| fv[x as usize];
            let lhs = expect(&nu_bar, |x| vals[x as usize] * f(x));
            let rhs = expect(&nu, f);
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
