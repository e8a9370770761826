//! Integrated Ursell numbers, the Lee-Yang product representation
//! `f(z) = Π_j (1 + c_j z²)`, and the inequalities that follow from it.
//!
//! Tables hold `𝒰₂, 𝒰₄, …` (even cumulants of the integrated field). Under the
//! product form `𝒰_{2k} = 2(2k−1)!(−1)^{k−1} Σ_j c_jᵏ`, so the power sums of the
//! `c_j` are read off the table and inverted through Newton's identities.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Enumeration;
use crate::spectral::BoundCheck;

/// Highest polynomial degree handed to the companion-matrix root finder.
pub const MAX_ROOT_DEGREE: usize = 24;
/// Largest `|Re z|/|z|` accepted for a zero to count as purely imaginary.
pub const IMAGINARY_TOL: f64 = 1e-9;

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).map(|i| f64::from(n - i) / f64::from(i + 1)).product()
}

/// Even cumulants `κ₂, κ₄, …` from even moments `m₂, m₄, …` of a symmetric law.
pub fn cumulants_from_moments(even_moments: &[f64]) -> Vec<f64> {
    let order = 2 * even_moments.len();
    let mut m = vec![0.0; order + 1];
    m[0] = 1.0;
    for (k, v) in even_moments.iter().enumerate() {
        m[2 * k + 2] = *v;
    }
    let mut c = vec![0.0; order + 1];
    for n in 1..=order {
        let mut s = m[n];
        for k in 1..n {
            s -= binomial(n as u32 - 1, k as u32 - 1) * c[k] * m[n - k];
        }
        c[n] = s;
    }
    (1..=even_moments.len()).map(|k| c[2 * k]).collect()
}

/// Inverse of [`cumulants_from_moments`].
pub fn moments_from_cumulants(even_cumulants: &[f64]) -> Vec<f64> {
    let order = 2 * even_cumulants.len();
    let mut c = vec![0.0; order + 1];
    for (k, v) in even_cumulants.iter().enumerate() {
        c[2 * k + 2] = *v;
    }
    let mut m = vec![0.0; order + 1];
    m[0] = 1.0;
    for n in 1..=order {
        m[n] = (1..=n)
            .map(|k| binomial(n as u32 - 1, k as u32 - 1) * c[k] * m[n - k])
            .sum();
    }
    (1..=even_cumulants.len()).map(|k| m[2 * k]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Exact,
    Spectral,
    Mc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrsellTable {
    /// `values[k−1] = 𝒰_{2k}`.
    pub values: Vec<f64>,
    /// Standard errors, present for stochastic tables.
    pub errors: Option<Vec<f64>>,
    pub source: Source,
}

impl UrsellTable {
    pub fn new(values: Vec<f64>, errors: Option<Vec<f64>>, source: Source) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("empty Ursell table".into()));
        }
        if let Some(e) = &errors {
            if e.len() != values.len() {
                return Err(Error::Shape(format!(
                    "{} values but {} errors",
                    values.len(),
                    e.len()
                )));
            }
        }
        Ok(Self { values, errors, source })
    }

    pub fn from_moments(even_moments: &[f64], errors: Option<Vec<f64>>, source: Source) -> Result<Self> {
        Self::new(cumulants_from_moments(even_moments), errors, source)
    }

    /// Table generated by finitely many Lee-Yang coefficients.
    pub fn from_coefficients(c: &[f64], k_max: usize) -> Self {
        let values = (1..=k_max as u32)
            .map(|k| {
                let p: f64 = c.iter().map(|c| c.powi(k as i32)).sum();
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                2.0 * factorial(2 * k - 1) * sign * p
            })
            .collect();
        Self { values, errors: None, source: Source::Exact }
    }

    pub fn k_max(&self) -> usize {
        self.values.len()
    }

    fn err(&self, k: usize) -> f64 {
        self.errors.as_ref().map_or(0.0, |e| e[k - 1])
    }

    /// Power sum `p_k = (−1)^{k−1} 𝒰_{2k} / (2(2k−1)!)`.
    pub fn power_sum(&self, k: usize) -> f64 {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        sign * self.values[k - 1] / (2.0 * factorial(2 * k as u32 - 1))
    }

    /// `(−1)^{k−1} 𝒰_{2k} ≥ 0` for every k; stochastic tables get `n_sigma` errors of slack.
    pub fn sign_rule_holds(&self, n_sigma: f64) -> bool {
        (1..=self.k_max()).all(|k| {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            sign * self.values[k - 1] >= -n_sigma * self.err(k)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeeYangCoeffs {
    /// `c₁ ≥ c₂ ≥ … > 0`.
    pub c: Vec<f64>,
    /// Relative mismatch `(p_k − Σ c_jᵏ)/p_k` for every k in the input table.
    pub residuals: Vec<f64>,
}

/// Real coefficients of `Π (t − r)` highest degree first, from elementary
/// symmetric polynomials `e₀ = 1, e₁, …`.
fn monic_from_elementary(e: &[f64]) -> Vec<f64> {
    e.iter()
        .enumerate()
        .map(|(k, v)| if k % 2 == 0 { *v } else { -v })
        .collect()
}

/// Roots of `Σ coeffs[i] t^{d−i}` (highest degree first) via the companion
/// matrix, each polished by a few Newton steps.
pub fn polynomial_roots(coeffs: &[f64]) -> Result<Vec<Complex<f64>>> {
    let lead = coeffs
        .iter()
        .position(|c| *c != 0.0)
        .ok_or_else(|| Error::Domain("zero polynomial".into()))?;
    let c = &coeffs[lead..];
    let d = c.len() - 1;
    if d > MAX_ROOT_DEGREE {
        return Err(Error::Degree(d));
    }
    if d == 0 {
        return Ok(Vec::new());
    }
    let comp = DMatrix::from_fn(d, d, |i, j| {
        if i == 0 {
            -c[j + 1] / c[0]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    let eval = |z: Complex<f64>| {
        let mut p = Complex::new(c[0], 0.0);
        let mut dp = Complex::new(0.0, 0.0);
        for a in &c[1..] {
            dp = dp * z + p;
            p = p * z + a;
        }
        (p, dp)
    };
    let roots = comp
        .complex_eigenvalues()
        .iter()
        .map(|&z0| {
            let mut z = z0;
            for _ in 0..8 {
                let (p, dp) = eval(z);
                if dp.norm() == 0.0 {
                    break;
                }
                let step = p / dp;
                z -= step;
                if step.norm() <= 1e-16 * z.norm() {
                    break;
                }
            }
            // keep the polished value only if it improved the residual
            if eval(z).0.norm() <= eval(z0).0.norm() { z } else { z0 }
        })
        .collect();
    Ok(roots)
}

/// Fit `j_max` coefficients to the first `j_max` power sums of the table.
pub fn leeyang_product_fit(table: &UrsellTable, j_max: usize) -> Result<LeeYangCoeffs> {
    if j_max == 0 || table.k_max() < j_max {
        return Err(Error::Shape(format!(
            "fit of {j_max} coefficients needs at least {j_max} table entries, got {}",
            table.k_max()
        )));
    }
    if !table.sign_rule_holds(3.0) {
        return Err(Error::ModelViolation("Ursell numbers do not alternate in sign".into()));
    }
    let p: Vec<f64> = (1..=j_max).map(|k| table.power_sum(k)).collect();
    // Newton's identities: k e_k = Σ_{i=1..k} (−1)^{i−1} e_{k−i} p_i
    let mut e = vec![1.0];
    for k in 1..=j_max {
        let s: f64 = (1..=k)
            .map(|i| {
                let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
                sign * e[k - i] * p[i - 1]
            })
            .sum();
        e.push(s / k as f64);
    }
    let roots = polynomial_roots(&monic_from_elementary(&e))?;
    let scale = p[0].abs().max(f64::MIN_POSITIVE);
    let mut c = Vec::with_capacity(j_max);
    for r in roots {
        if r.im.abs() > 1e-7 * scale || r.re <= 0.0 {
            return Err(Error::ModelViolation(format!(
                "fitted coefficient {:.6e}{:+.6e}i is not a positive real",
                r.re, r.im
            )));
        }
        c.push(r.re);
    }
    c.sort_by(|a, b| b.total_cmp(a));
    let residuals = (1..=table.k_max())
        .map(|k| {
            let pk = table.power_sum(k);
            let fit: f64 = c.iter().map(|c| c.powi(k as i32)).sum();
            if pk == 0.0 { fit } else { (pk - fit) / pk }
        })
        .collect();
    Ok(LeeYangCoeffs { c, residuals })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub checks: Vec<BoundCheck>,
}

impl InequalityReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Check the Ursell-number bounds implied by the product form.
///
/// `beta_u_hat` is `β û`, which coincides with `𝒰₂`. Stochastic tables are
/// given three combined standard errors of slack; the reported margin is the
/// raw `rhs − lhs`. Passing `coeffs` adds the bounds in terms of `c₁`.
pub fn inequality_suite(
    table: &UrsellTable,
    beta_u_hat: f64,
    coeffs: Option<&LeeYangCoeffs>,
) -> InequalityReport {
    let u4 = table.values.get(1).copied().unwrap_or(0.0).abs();
    let mut checks = Vec::new();
    for k in 1..=table.k_max() {
        let kk = k as u32;
        let lhs = table.values[k - 1].abs();
        let tol = 3.0 * table.err(k) + 1e-12 * lhs;
        let f = factorial(2 * kk - 1);
        let rhs1 = 2f64.powi(1 - k as i32) * f * beta_u_hat.powi(k as i32);
        checks.push(BoundCheck::le(&format!("|U{}| <= 2^(1-k)(2k-1)!(beta u)^k", 2 * k), lhs, rhs1, tol));
        if k >= 2 {
            let tol = tol + 3.0 * table.err(2) * f / (3.0 * 2f64.powi(k as i32 - 1));
            let rhs2 = f / (3.0 * 2f64.powi(k as i32 - 1)) * beta_u_hat.powi(k as i32 - 2) * u4;
            checks.push(BoundCheck::le(
                &format!("|U{}| <= (2k-1)!/(3 2^(k-1)) (beta u)^(k-2) |U4|", 2 * k),
                lhs,
                rhs2,
                tol,
            ));
        }
        if let Some(ly) = coeffs {
            let c1 = ly.c[0];
            let rhs = f * c1.powi(k as i32 - 1) * table.values[0];
            checks.push(BoundCheck::le(&format!("|U{}| <= (2k-1)! c1^(k-1) U2", 2 * k), lhs, rhs, tol));
            if k >= 2 {
                let p2 = table.power_sum(2);
                let rhs = 2.0 * f * c1.powi(k as i32 - 2) * p2;
                checks.push(BoundCheck::le(&format!("|U{}| <= 2(2k-1)! c1^(k-2) sum c^2", 2 * k), lhs, rhs, tol));
            }
        }
    }
    InequalityReport { checks }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootLocusReport {
    pub degree: usize,
    /// Zeros of `f` in the strip `|Im z| ≤ π/2`, as `(Re z, Im z)`.
    pub zeros: Vec<(f64, f64)>,
    pub max_real_ratio: f64,
    pub pass: bool,
}

/// Locate the zeros of the field function of an enumerated Ising instance.
///
/// `f(z) = e^{−Nz} P(e^{2z})` with `P` the fugacity polynomial, so every root
/// `w` of `P` gives the zero `z = ½ log w`; it is purely imaginary exactly when
/// `|w| = 1`, i.e. when `z²` is real and negative.
pub fn root_locus_check(en: &Enumeration) -> Result<RootLocusReport> {
    let poly: Vec<f64> = en.weights.iter().rev().copied().collect();
    let roots = polynomial_roots(&poly)?;
    let zeros: Vec<(f64, f64)> = roots
        .iter()
        .map(|w| {
            let z = w.ln() * 0.5;
            (z.re, z.im)
        })
        .collect();
    let max_real_ratio = zeros
        .iter()
        .map(|(re, im)| re.abs() / re.hypot(*im))
        .fold(0.0, f64::max);
    Ok(RootLocusReport {
        degree: roots.len(),
        zeros,
        max_real_ratio,
        pass: max_real_ratio < IMAGINARY_TOL,
    })
}

/// Zeros in `z` of a truncated even series `Σ_k a_k z^{2k}` (`a_0` first).
pub fn even_series_zeros(a: &[f64]) -> Result<Vec<Complex<f64>>> {
    let poly: Vec<f64> = a.iter().rev().copied().collect();
    let u_roots = polynomial_roots(&poly)?;
    Ok(u_roots
        .iter()
        .flat_map(|u| {
            let z = u.sqrt();
            [z, -z]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gaussian_and_single_spin_cumulants() {
        // Gaussian with variance s: m4 = 3 s², m6 = 15 s³
        let s = 0.7;
        let c = cumulants_from_moments(&[s, 3.0 * s * s, 15.0 * s * s * s]);
        assert!((c[0] - s).abs() < 1e-15);
        assert!(c[1].abs() < 1e-15 && c[2].abs() < 1e-14);
        // ±1 spin: all even moments equal 1
        let c = cumulants_from_moments(&[1.0; 4]);
        assert_eq!(c[0], 1.0);
        assert_eq!(c[1], -2.0);
        assert_eq!(c[2], 16.0);
        assert_eq!(c[3], -272.0);
    }

    #[test]
    fn cumulants_add_over_independent_copies() {
        // sum of two independent ±1 spins: M ∈ {−2, 0, 2} with weights 1/4, 1/2, 1/4
        let m: Vec<f64> = (1..=4).map(|k| 0.5 * 2f64.powi(2 * k)).collect();
        let c = cumulants_from_moments(&m);
        assert_eq!(c, vec![2.0, -4.0, 32.0, -544.0]);
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(UrsellTable::new(vec![], None, Source::Exact), Err(Error::Shape(_))));
        assert!(matches!(
            UrsellTable::new(vec![1.0, -2.0], Some(vec![0.1]), Source::Mc),
            Err(Error::Shape(_))
        ));
        let t = UrsellTable::from_coefficients(&[0.2], 2);
        assert!(matches!(leeyang_product_fit(&t, 3), Err(Error::Shape(_))));
    }

    #[test]
    fn single_mode_table() {
        let c = 0.37;
        let t = UrsellTable::from_coefficients(&[c], 3);
        assert!((t.values[0] - 2.0 * c).abs() < 1e-15);
        assert!((t.values[1] + 12.0 * c * c).abs() < 1e-15);
        let fit = leeyang_product_fit(&t, 1).unwrap();
        assert!((fit.c[0] - c).abs() < 1e-15);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-14));
    }

    #[test]
    fn two_modes_recovered() {
        let t = UrsellTable::from_coefficients(&[0.3, 0.1], 4);
        assert!((t.power_sum(1) - 0.4).abs() < 1e-15);
        assert!((t.power_sum(2) - 0.1).abs() < 1e-15);
        let fit = leeyang_product_fit(&t, 2).unwrap();
        assert!((fit.c[0] - 0.3).abs() < 1e-12 && (fit.c[1] - 0.1).abs() < 1e-12);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-11));
    }

    #[test]
    fn wrong_signs_are_a_model_violation() {
        let t = UrsellTable::new(vec![1.0, 2.0], None, Source::Exact).unwrap();
        assert!(matches!(leeyang_product_fit(&t, 2), Err(Error::ModelViolation(_))));
        // p1 = 1 with p2 = 1.5 > p1² cannot come from positive coefficients
        let t = UrsellTable::new(vec![2.0, -12.0 * 1.5], None, Source::Exact).unwrap();
        assert!(matches!(leeyang_product_fit(&t, 2), Err(Error::ModelViolation(_))));
    }

    #[test]
    fn single_spin_inequalities() {
        let t = UrsellTable::from_moments(&[1.0; 4], None, Source::Exact).unwrap();
        let r = inequality_suite(&t, 1.0, None);
        assert!(r.all_pass());
        // k = 2 of the first family: 2 ≤ 3
        let c = r.checks.iter().find(|c| c.name.starts_with("|U4| <= 2^")).unwrap();
        assert_eq!((c.lhs, c.rhs), (2.0, 3.0));
        // a table with oversized |U6| is caught
        let bad = UrsellTable::new(vec![1.0, -2.0, 200.0], None, Source::Exact).unwrap();
        assert!(!inequality_suite(&bad, 1.0, None).all_pass());
    }

    #[test]
    fn gaussian_table_passes_trivially() {
        let t = UrsellTable::new(vec![1.3, 0.0, 0.0, 0.0], None, Source::Exact).unwrap();
        assert!(inequality_suite(&t, 1.3, None).all_pass());
    }

    #[test]
    fn quadratic_truncation_of_cosh() {
        // 1 + z²/2 vanishes at ±i√2
        let z = even_series_zeros(&[1.0, 0.5]).unwrap();
        assert_eq!(z.len(), 2);
        for r in z {
            assert!(r.re.abs() < 1e-15);
            assert!((r.im.abs() - 2f64.sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn degree_limit() {
        assert!(matches!(polynomial_roots(&[1.0; 26]), Err(Error::Degree(25))));
        let r = polynomial_roots(&[1.0, -3.0, 2.0]).unwrap();
        let mut re: Vec<f64> = r.iter().map(|z| z.re).collect();
        re.sort_by(f64::total_cmp);
        assert!((re[0] - 1.0).abs() < 1e-14 && (re[1] - 2.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn moment_cumulant_round_trip(c in proptest::collection::vec(-2.0f64..2.0, 1..=5)) {
            let mut cum = c.clone();
            cum[0] = cum[0].abs() + 0.1;
            let m = moments_from_cumulants(&cum);
            let back = cumulants_from_moments(&m);
            let scale = m.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            for (a, b) in cum.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn fit_round_trip(c1 in 0.5f64..1.0, r2 in 0.2f64..0.6, r3 in 0.2f64..0.6) {
            // well separated: each coefficient at most 60% of the previous one
            let c = [c1, c1 * r2, c1 * r2 * r3];
            let t = UrsellTable::from_coefficients(&c, 5);
            let fit = leeyang_product_fit(&t, 3).unwrap();
            for (a, b) in c.iter().zip(&fit.c) {
                prop_assert!((a - b).abs() < 1e-8, "{:?} vs {:?}", c, fit.c);
            }
        }
    }
}
