//! Single-site Hamiltonian `H₀ = p²/2m + (a/2) q² + b q⁴` in a truncated
//! harmonic-oscillator basis, and the thermal spectral sums built on it.
//!
//! The spectrum does not depend on β; a [`SpectralSolution`] is diagonalized
//! once and then evaluated at any inverse temperature through [`Thermal`].
//! Energies are shifted by `E₀` inside every Boltzmann factor.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::divdiff::{dd2, dd3, phi1};
use crate::error::{Error, Result};

/// Largest basis tried by the adaptive doubling.
pub const K_MAX: usize = 1024;
/// Relative stability required of the retained energies under basis doubling.
pub const ENERGY_TOL: f64 = 1e-10;
/// Boltzmann weight below which a state is considered thermally irrelevant.
pub const BOLTZMANN_CUTOFF: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub mass: f64,
    pub a: f64,
    pub b: f64,
    pub beta: f64,
}

impl ModelParams {
    pub fn new(mass: f64, a: f64, b: f64, beta: f64) -> Result<Self> {
        let p = Self { mass, a, b, beta };
        if !(b > 0.0) {
            return Err(Error::Domain(format!("quartic coefficient must be positive, got {b}")));
        }
        p.check_common()?;
        Ok(p)
    }

    /// Purely quadratic model (b = 0), used as an exact reference.
    pub fn gaussian(mass: f64, a: f64, beta: f64) -> Result<Self> {
        let p = Self { mass, a, b: 0.0, beta };
        if !(a > 0.0) {
            return Err(Error::Stability(format!("b = 0 requires a > 0, got a = {a}")));
        }
        p.check_common()?;
        Ok(p)
    }

    fn check_common(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::Domain(format!("mass must be positive, got {}", self.mass)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Domain(format!("beta must be positive, got {}", self.beta)));
        }
        if !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::Domain("non-finite coefficient".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_gaussian() {
            Self::gaussian(self.mass, self.a, self.beta).map(|_| ())
        } else {
            Self::new(self.mass, self.a, self.b, self.beta).map(|_| ())
        }
    }

    pub fn is_gaussian(&self) -> bool {
        self.b == 0.0
    }

    /// γ = |a|/b, defined for the double-well case a < 0.
    pub fn gamma(&self) -> Option<f64> {
        (self.a < 0.0 && self.b > 0.0).then(|| self.a.abs() / self.b)
    }

    pub fn with_beta(self, beta: f64) -> Self {
        Self { beta, ..self }
    }
}

/// Matsubara frequency `2πk/β`.
pub fn matsubara(beta: f64, k: i64) -> f64 {
    2.0 * std::f64::consts::PI * k as f64 / beta
}

/// Frequency of the auxiliary oscillator defining a `k`-state basis.
///
/// The quartic scale `(b/m²)^{1/3}` grows like `k^{1/3}` so that the basis
/// covers the classically allowed region of the top retained levels.
pub fn basis_frequency(mass: f64, a: f64, b: f64, k: usize) -> f64 {
    let quartic = (b / (mass * mass)).cbrt() * (k as f64 / 16.0).cbrt().max(1.0);
    (a.abs() / mass).sqrt().max(quartic)
}

#[derive(Debug, Clone)]
pub struct SpectralSolution {
    /// Ascending eigenvalues `E_p`.
    pub energies: Vec<f64>,
    /// Displacement operator in the eigenbasis.
    pub q_matrix: DMatrix<f64>,
    /// `q²` and `q³` in the eigenbasis, built from their exact oscillator-basis elements.
    pub q2_matrix: DMatrix<f64>,
    pub q3_matrix: DMatrix<f64>,
    pub basis_size: usize,
    pub basis_frequency: f64,
    pub mass: f64,
    pub b: f64,
    /// Number of leading levels stable under basis doubling.
    pub reliable: usize,
}

/// Oscillator-basis matrix elements for `q` with `ℓ² = 1/(2mω)`.
struct Ladder {
    l2: f64,
}

impl Ladder {
    fn q(&self, i: usize, j: usize) -> f64 {
        if j == i + 1 {
            (j as f64 * self.l2).sqrt()
        } else if i == j + 1 {
            (i as f64 * self.l2).sqrt()
        } else {
            0.0
        }
    }

    fn q2(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = (i.min(j), i.max(j));
        match hi - lo {
            0 => (2 * lo + 1) as f64 * self.l2,
            2 => (((lo + 1) * (lo + 2)) as f64).sqrt() * self.l2,
            _ => 0.0,
        }
    }

    fn q3(&self, i: usize, j: usize) -> f64 {
        let mut s = self.q(i, i + 1) * self.q2(i + 1, j);
        if i > 0 {
            s += self.q(i, i - 1) * self.q2(i - 1, j);
        }
        s
    }

    fn q4(&self, i: usize, j: usize) -> f64 {
        let lo = i.saturating_sub(2);
        (lo..=i + 2).map(|l| self.q2(i, l) * self.q2(l, j)).sum()
    }
}

fn banded(k: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i.saturating_sub(width)..(i + width + 1).min(k) {
            m[(i, j)] = f(i, j);
        }
    }
    m
}

fn hamiltonian(params: &ModelParams, k: usize, omega: f64) -> (DMatrix<f64>, Ladder) {
    let lad = Ladder { l2: 1.0 / (2.0 * params.mass * omega) };
    let shift = 0.5 * (params.a - params.mass * omega * omega);
    let h = banded(k, 4, |i, j| {
        let diag = if i == j { omega * (i as f64 + 0.5) } else { 0.0 };
        diag + shift * lad.q2(i, j) + params.b * lad.q4(i, j)
    });
    (h, lad)
}

/// Diagonalize in exactly `k` oscillator states; no convergence check.
pub fn diagonalize(params: &ModelParams, k: usize) -> Result<SpectralSolution> {
    if k < 4 {
        return Err(Error::Domain(format!("basis size must be >= 4, got {k}")));
    }
    if !(params.mass > 0.0) || params.b < 0.0 {
        return Err(Error::Domain("mass must be positive and b non-negative".into()));
    }
    let omega = basis_frequency(params.mass, params.a, params.b, k);
    let (h, lad) = hamiltonian(params, k, omega);
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let energies: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let v = DMatrix::from_fn(k, k, |r, c| eig.eigenvectors[(r, order[c])]);
    let vt = v.transpose();
    let rotate = |m: DMatrix<f64>| {
        let mut out = &vt * m * &v;
        // restore exact symmetry lost to rounding
        for i in 0..k {
            for j in 0..i {
                let s = 0.5 * (out[(i, j)] + out[(j, i)]);
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    };
    let mut q = rotate(banded(k, 1, |i, j| lad.q(i, j)));
    let q2 = rotate(banded(k, 2, |i, j| lad.q2(i, j)));
    let mut q3 = rotate(banded(k, 3, |i, j| lad.q3(i, j)));
    // parity of each eigenstate, read off its oscillator components
    let parity: Vec<usize> = (0..k)
        .map(|c| {
            let even: f64 = (0..k).step_by(2).map(|r| v[(r, c)] * v[(r, c)]).sum();
            usize::from(even < 0.5)
        })
        .collect();
    // odd operators connect states of opposite parity
    for i in 0..k {
        for j in 0..k {
            if parity[i] == parity[j] {
                q[(i, j)] = 0.0;
                q3[(i, j)] = 0.0;
            }
        }
    }
    Ok(SpectralSolution {
        energies,
        q_matrix: q,
        q2_matrix: q2,
        q3_matrix: q3,
        basis_size: k,
        basis_frequency: omega,
        mass: params.mass,
        b: params.b,
        reliable: k,
    })
}

fn stable_prefix(small: &[f64], large: &[f64], scale: f64) -> usize {
    small
        .iter()
        .zip(large)
        .take_while(|(e1, e2)| (*e1 - *e2).abs() <= ENERGY_TOL * e2.abs().max(scale))
        .count()
}

/// Diagonalize with adaptive basis doubling, starting from `k`.
///
/// The returned solution is accurate for thermal sums at `params.beta` and at
/// any larger β: at least `K/4` levels are stable under doubling, and every
/// unstable level carries Boltzmann weight below [`BOLTZMANN_CUTOFF`].
pub fn build_and_diagonalize(params: &ModelParams, k: usize) -> Result<SpectralSolution> {
    params.validate()?;
    let mut k = k.max(4);
    let mut small = diagonalize(params, k)?;
    let mut last_diag = String::new();
    while k < K_MAX {
        let mut large = diagonalize(params, (2 * k).min(K_MAX))?;
        let reliable = stable_prefix(&small.energies, &large.energies, small.basis_frequency);
        let thermal_ok = reliable >= large.energies.len()
            || (-params.beta * (large.energies[reliable] - large.energies[0])).exp()
                < BOLTZMANN_CUTOFF;
        if reliable >= k / 4 && thermal_ok {
            large.reliable = reliable;
            return Ok(large);
        }
        last_diag = format!("K = {k}: {reliable} stable levels");
        k = large.basis_size;
        small = large;
    }
    Err(Error::Truncation(format!(
        "no convergence up to K = {K_MAX} (last: {last_diag})"
    )))
}

/// Largest deviation of `[q, [H₀, q]]` from `1/m` on the interior block of a
/// `k`-state oscillator basis.
pub fn double_commutator_defect(params: &ModelParams, k: usize) -> Result<f64> {
    if k < 8 {
        return Err(Error::Domain(format!("basis size must be >= 8, got {k}")));
    }
    let omega = basis_frequency(params.mass, params.a, params.b, k);
    let (h, lad) = hamiltonian(params, k, omega);
    let q = banded(k, 1, |i, j| lad.q(i, j));
    let hq = &h * &q;
    let qh = &q * &h;
    let c = &q * (&hq - &qh) - (&hq - &qh) * &q;
    let mut worst = 0.0f64;
    for i in 0..k - 2 {
        for j in 0..k - 2 {
            let target = if i == j { 1.0 / params.mass } else { 0.0 };
            worst = worst.max((c[(i, j)] - target).abs());
        }
    }
    Ok(worst)
}

impl SpectralSolution {
    /// `Σ_{p'} (E_{p'} − E_p)|Q_{pp'}|² = 1/(2m)` on the lower half of the stable levels.
    pub fn f_sum_defect(&self) -> f64 {
        let k = self.basis_size;
        let target = 0.5 / self.mass;
        (0..(self.reliable / 2).max(1))
            .map(|p| {
                let s: f64 = (0..k)
                    .map(|pp| (self.energies[pp] - self.energies[p]) * self.q_matrix[(p, pp)].powi(2))
                    .sum();
                (s - target).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Smallest level spacing among the stable levels.
    pub fn gap(&self) -> f64 {
        let top = self.reliable.clamp(2, self.basis_size);
        self.energies[..top]
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn rigidity(&self) -> f64 {
        self.mass * self.gap().powi(2)
    }

    /// Thermal evaluator at inverse temperature `beta`.
    pub fn thermal(&self, beta: f64) -> Result<Thermal<'_>> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Domain(format!("beta must be positive, got {beta}")));
        }
        let e0 = self.energies[0];
        let shifted: Vec<f64> = self.energies.iter().map(|e| e - e0).collect();
        if self.reliable < self.basis_size {
            let w = (-beta * shifted[self.reliable]).exp();
            if w >= BOLTZMANN_CUTOFF {
                return Err(Error::Truncation(format!(
                    "level {} is not converged but has Boltzmann weight {w:.3e} at beta = {beta}",
                    self.reliable
                )));
            }
        }
        let weights: Vec<f64> = shifted.iter().map(|e| (-beta * e).exp()).collect();
        let z = weights.iter().sum();
        let active = weights.iter().take_while(|&&w| w >= BOLTZMANN_CUTOFF * 1e-4).count().max(1);
        Ok(Thermal { spec: self, beta, shifted, weights, z, active })
    }
}

/// A spectral solution evaluated at one inverse temperature.
pub struct Thermal<'a> {
    spec: &'a SpectralSolution,
    pub beta: f64,
    shifted: Vec<f64>,
    weights: Vec<f64>,
    /// Partition function relative to `e^{−βE₀}`.
    pub z: f64,
    active: usize,
}

impl Thermal<'_> {
    fn pair_relevant(&self, p: usize, pp: usize) -> bool {
        p < self.active || pp < self.active
    }

    /// Kubo product `Z⁻¹ ∫₀^β Tr[e^{−(β−τ)H} A e^{−τH} B] dτ`.
    pub fn kubo(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let k = self.spec.basis_size;
        let mut sum = 0.0;
        for p in 0..k {
            for pp in 0..k {
                let t = a[(p, pp)] * b[(pp, p)];
                if t != 0.0 && self.pair_relevant(p, pp) {
                    sum += t * dd2(self.beta, self.shifted[p], self.shifted[pp]);
                }
            }
        }
        sum / self.z
    }

    /// `û₀(q)`, the cosine transform of the two-point function at frequency `q`.
    pub fn u_hat(&self, q: f64) -> f64 {
        let qm = &self.spec.q_matrix;
        if q == 0.0 {
            return self.kubo(qm, qm);
        }
        let k = self.spec.basis_size;
        let q2 = q * q;
        let mut sum = 0.0;
        for p in 0..k {
            for pp in 0..k {
                let amp = qm[(p, pp)] * qm[(p, pp)];
                if amp == 0.0 || !self.pair_relevant(p, pp) {
                    continue;
                }
                let d = (self.spec.energies[p] - self.spec.energies[pp]).abs();
                let lo = self.shifted[p].min(self.shifted[pp]);
                // (e^{−βE_lo} − e^{−βE_hi}) |Δ| / (q² + Δ²)
                let diff = (-self.beta * lo).exp() * self.beta * d * phi1(self.beta * d);
                sum += amp * diff * d / (q2 + d * d);
            }
        }
        sum / self.z
    }

    /// `Γ₂(0, τ)` for `τ ∈ [0, β]`.
    pub fn gamma2(&self, tau: f64) -> Result<f64> {
        if !(0.0..=self.beta).contains(&tau) {
            return Err(Error::Domain(format!("tau = {tau} outside [0, {}]", self.beta)));
        }
        let qm = &self.spec.q_matrix;
        let k = self.spec.basis_size;
        let mut sum = 0.0;
        for p in 0..k {
            for pp in 0..k {
                let amp = qm[(p, pp)] * qm[(p, pp)];
                if amp == 0.0 {
                    continue;
                }
                let expo = (self.beta - tau) * self.shifted[p] + tau * self.shifted[pp];
                if expo < 745.0 {
                    sum += amp * (-expo).exp();
                }
            }
        }
        Ok(sum / self.z)
    }

    /// η = Γ₂(0, 0), the thermal second moment.
    pub fn eta(&self) -> f64 {
        let qm = &self.spec.q_matrix;
        let k = self.spec.basis_size;
        let mut sum = 0.0;
        for p in 0..self.active {
            let s: f64 = (0..k).map(|pp| qm[(p, pp)] * qm[(p, pp)]).sum();
            sum += self.weights[p] * s;
        }
        sum / self.z
    }

    /// `(1/β) ∬ Γ₄(τ, τ, τ, τ′) dτ dτ′`.
    pub fn cubic_linear(&self) -> f64 {
        self.kubo(&self.spec.q3_matrix, &self.spec.q_matrix)
    }

    /// Residual of `1 = a·û₀ + 4b·(1/β)∬Γ₄(τ,τ,τ,τ′)`.
    pub fn sum_rule_residual(&self, a: f64) -> f64 {
        let u = self.u_hat(0.0);
        a * u + 4.0 * self.spec.b * self.cubic_linear() - 1.0
    }

    /// `X₀ = −∬ U₄(τ, τ, τ₁, τ₂) dτ₁ dτ₂`.
    pub fn x0(&self) -> f64 {
        let u = self.u_hat(0.0);
        let eta = self.eta();
        2.0 * u * u + self.beta * eta * u - self.q2_omega2()
    }

    /// `⟨q(0)² Ω²⟩` with `Ω = ∫₀^β q(τ) dτ`.
    fn q2_omega2(&self) -> f64 {
        let spec = self.spec;
        let k = spec.basis_size;
        let (q, q2) = (&spec.q_matrix, &spec.q2_matrix);
        let qmax = q.amax();
        let neighbours: Vec<Vec<usize>> = (0..k)
            .map(|i| (0..k).filter(|&j| q[(i, j)].abs() > 1e-14 * qmax).collect())
            .collect();
        let e = &self.shifted;
        let beta = self.beta;
        // |f[x,y,z]| ≤ β² e^{−β min}/2, so terms past the cut are below 1e-20
        let cut = 46.0 + 2.0 * beta.max(1.0).ln();
        let low = e.partition_point(|&x| beta * x <= cut);
        let mut sum = 0.0;
        for bb in 0..k {
            let nb = &neighbours[bb];
            let nb_low = &nb[..nb.partition_point(|&c| c < low)];
            for &a in nb {
                let qab = q[(a, bb)];
                let third = if beta * e[a].min(e[bb]) > cut { nb_low } else { nb };
                for &c in third {
                    let lo = e[a].min(e[bb]).min(e[c]);
                    if beta * lo > cut {
                        continue;
                    }
                    sum += qab * q[(bb, c)] * q2[(c, a)] * dd3(beta, e[a], e[bb], e[c]);
                }
            }
        }
        2.0 * sum / self.z
    }
}

/// `û₀(q)` from the spectral representation.
pub fn u_hat0_spectral(spec: &SpectralSolution, beta: f64, q: f64) -> Result<f64> {
    Ok(spec.thermal(beta)?.u_hat(q))
}

/// `Γ₂(0, τ)` from the spectral representation.
pub fn correlation_gamma2(spec: &SpectralSolution, beta: f64, tau: f64) -> Result<f64> {
    spec.thermal(beta)?.gamma2(tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rigidity {
    pub eta: f64,
    pub gap: f64,
    pub rigidity: f64,
    /// Rigidity exceeds 1, which rules out criticality.
    pub suppressed: bool,
}

pub fn eta_and_rigidity(spec: &SpectralSolution, beta: f64) -> Result<Rigidity> {
    let eta = spec.thermal(beta)?.eta();
    let gap = spec.gap();
    let rigidity = spec.mass * gap * gap;
    Ok(Rigidity { eta, gap, rigidity, suppressed: rigidity > 1.0 })
}

pub fn x0_spectral(spec: &SpectralSolution, beta: f64) -> Result<f64> {
    Ok(spec.thermal(beta)?.x0())
}

/// `f(t) = (1 − e^{−t})/t`.
pub fn f_decay(t: f64) -> f64 {
    phi1(t)
}

/// Upper bound on X₀ for a < 0: `24 b û₀⁴ / (β f(3β/(mγ)))`.
pub fn x0_upper_bound(params: &ModelParams, u_hat0: f64) -> Result<f64> {
    let gamma = params
        .gamma()
        .ok_or_else(|| Error::Domain("X₀ bound needs a < 0 and b > 0".into()))?;
    let t = 3.0 * params.beta / (params.mass * gamma);
    Ok(24.0 * params.b * u_hat0.powi(4) / (params.beta * f_decay(t)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`, positive when `lhs ≤ rhs` holds strictly.
    pub margin: f64,
    pub pass: bool,
}

impl BoundCheck {
    pub fn le(name: &str, lhs: f64, rhs: f64, tol: f64) -> Self {
        let margin = rhs - lhs;
        Self { name: name.to_string(), lhs, rhs, margin, pass: margin >= -tol }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialBoundReport {
    pub params: ModelParams,
    pub u_hat0: f64,
    pub eta: f64,
    pub x0: f64,
    pub sum_rule_residual: f64,
    pub checks: Vec<BoundCheck>,
}

impl InitialBoundReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn min_margin(&self) -> f64 {
        self.checks.iter().map(|c| c.margin).fold(f64::INFINITY, f64::min)
    }
}

/// Tolerance on the sum-rule residual accepted as truncation noise.
pub const SUM_RULE_TOL: f64 = 1e-4;

/// Evaluate the single-site bounds available for a < 0.
pub fn check_initial_bounds(spec: &SpectralSolution, params: &ModelParams) -> Result<InitialBoundReport> {
    let gamma = params
        .gamma()
        .ok_or_else(|| Error::Domain("initial bounds need a < 0 and b > 0".into()))?;
    let (m, beta) = (params.mass, params.beta);
    let th = spec.thermal(beta)?;
    let u = th.u_hat(0.0);
    let eta = th.eta();
    let x0 = th.x0();
    let residual = th.sum_rule_residual(params.a);
    let rel = 1e-9;
    let lower = (m * gamma * gamma / 36.0) * (-(-3.0 * beta / (m * gamma)).exp_m1());
    let a = params.a.abs();
    let upper = (beta * a / (8.0 * params.b)) * (1.0 + (1.0 + 16.0 * params.b / (beta * a * a)).sqrt());
    let checks = vec![
        BoundCheck::le("u_hat0 >= (m g^2/36)(1 - exp(-3 beta/(m g)))", lower, u, rel * u),
        BoundCheck::le("u_hat0 <= (beta|a|/8b)(1 + sqrt(1 + 16b/(beta a^2)))", u, upper, rel * u),
        BoundCheck::le("u_hat0 <= beta eta", u, beta * eta, rel * u),
        BoundCheck::le("beta eta f(beta/(4 m eta)) <= u_hat0", beta * eta * f_decay(beta / (4.0 * m * eta)), u, rel * u),
        BoundCheck::le("eta >= g/12", gamma / 12.0, eta, rel * eta),
        BoundCheck::le("X0 >= 0", -x0, 0.0, 1e-10 * u * u),
        BoundCheck::le("X0 <= 24 b u^4/(beta f(3 beta/(m g)))", x0, x0_upper_bound(params, u)?, rel * u * u),
        BoundCheck::le("|sum rule residual|", residual.abs(), SUM_RULE_TOL, 0.0),
    ];
    Ok(InitialBoundReport { params: *params, u_hat0: u, eta, x0, sum_rule_residual: residual, checks })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralRecord {
    pub params: ModelParams,
    pub basis_size: usize,
    pub basis_frequency: f64,
    pub energies: Vec<f64>,
    /// `(k, q = 2πk/β, û₀(q))`.
    pub u_hat0: Vec<(i64, f64, f64)>,
    pub eta: f64,
    pub gap: f64,
    pub rigidity: f64,
    pub x0: f64,
    pub bound_report: Option<InitialBoundReport>,
}

pub fn spectral_record(spec: &SpectralSolution, params: &ModelParams, kmax: i64) -> Result<SpectralRecord> {
    let th = spec.thermal(params.beta)?;
    let u_hat0 = (0..=kmax)
        .map(|k| {
            let q = matsubara(params.beta, k);
            (k, q, th.u_hat(q))
        })
        .collect();
    let r = eta_and_rigidity(spec, params.beta)?;
    let bound_report = if params.gamma().is_some() {
        Some(check_initial_bounds(spec, params)?)
    } else {
        None
    };
    Ok(SpectralRecord {
        params: *params,
        basis_size: spec.basis_size,
        basis_frequency: spec.basis_frequency,
        energies: spec.energies.iter().take(8).copied().collect(),
        u_hat0,
        eta: r.eta,
        gap: r.gap,
        rigidity: r.rigidity,
        x0: th.x0(),
        bound_report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn physical() -> ModelParams {
        ModelParams::new(20.0, -1.0, 0.05, 4.0).unwrap()
    }

    fn simpson(n: usize, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
        let n = n + n % 2;
        let h = (hi - lo) / n as f64;
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn harmonic_u_hat_is_inverse_symbol() {
        for (m, a) in [(1.0, 1.0), (2.0, 3.0)] {
            let spec = build_and_diagonalize(&ModelParams::gaussian(m, a, 1.0).unwrap(), 100).unwrap();
            for beta in [1.0, 4.0] {
                let th = spec.thermal(beta).unwrap();
                for k in -8..=8 {
                    let q = matsubara(beta, k);
                    let exact = 1.0 / (m * q * q + a);
                    assert!((th.u_hat(q) - exact).abs() < 1e-10 * exact, "m={m} a={a} beta={beta} k={k}");
                }
            }
        }
    }

    #[test]
    fn weak_quartic_matches_first_order_shift() {
        let b = 1e-8;
        let spec = build_and_diagonalize(&ModelParams::new(1.0, 1.0, b, 1.0).unwrap(), 64).unwrap();
        let gap = spec.energies[1] - spec.energies[0];
        assert!((gap - 1.0).abs() < 1e-6);
        // ⟨1|q⁴|1⟩ − ⟨0|q⁴|0⟩ = 3/(mω)²
        assert!((gap - (1.0 + 3.0 * b)).abs() < 1e-12);
    }

    #[test]
    fn parity_and_ordering() {
        for p in [physical(), ModelParams::new(1.0, 0.5, 2.0, 1.0).unwrap()] {
            let s = build_and_diagonalize(&p, 32).unwrap();
            assert_eq!(s.q_matrix[(0, 0)], 0.0);
            assert_eq!(s.q_matrix[(1, 1)], 0.0);
            assert!(s.energies.windows(2).all(|w| w[1] > w[0]));
            let q = &s.q_matrix;
            assert_eq!(q, &q.transpose());
        }
    }

    #[test]
    fn basis_size_validation() {
        let p = physical();
        assert!(matches!(diagonalize(&p, 3), Err(Error::Domain(_))));
        // too small a basis at high temperature is detected
        let s = diagonalize(&p, 16).unwrap();
        let mut s = s;
        s.reliable = 4;
        assert!(matches!(s.thermal(0.01), Err(Error::Truncation(_))));
        assert!(matches!(ModelParams::new(1.0, 1.0, 0.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(ModelParams::gaussian(1.0, -1.0, 1.0), Err(Error::Stability(_))));
    }

    #[test]
    fn harmonic_propagator() {
        let (m, a, beta) = (2.0, 0.5, 3.0);
        let spec = build_and_diagonalize(&ModelParams::gaussian(m, a, beta).unwrap(), 64).unwrap();
        let th = spec.thermal(beta).unwrap();
        let w = (a / m).sqrt();
        for i in 0..=10 {
            let tau = beta * i as f64 / 10.0;
            let exact = (w * (beta / 2.0 - tau)).cosh() / (2.0 * m * w * (w * beta / 2.0).sinh());
            assert!((th.gamma2(tau).unwrap() - exact).abs() < 1e-12 * exact);
        }
        assert!(matches!(th.gamma2(-0.1), Err(Error::Domain(_))));
        assert!(matches!(th.gamma2(beta + 0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn gamma2_reflection_and_integral() {
        let p = physical();
        let spec = build_and_diagonalize(&p, 80).unwrap();
        let th = spec.thermal(p.beta).unwrap();
        for i in 0..=8 {
            let tau = p.beta * i as f64 / 8.0;
            let (g1, g2) = (th.gamma2(tau).unwrap(), th.gamma2(p.beta - tau).unwrap());
            assert!((g1 - g2).abs() < 1e-12 * g1);
        }
        assert!((th.gamma2(0.0).unwrap() - th.eta()).abs() < 1e-12 * th.eta());
        let integral = simpson(2000, 0.0, p.beta, |t| th.gamma2(t).unwrap());
        let u = th.u_hat(0.0);
        assert!((integral - u).abs() < 1e-9 * u);
        // q ≠ 0 against the cosine transform
        let q = matsubara(p.beta, 3);
        let integral = simpson(4000, 0.0, p.beta, |t| th.gamma2(t).unwrap() * (q * t).cos());
        assert!((integral - th.u_hat(q)).abs() < 1e-8 * th.u_hat(q));
    }

    #[test]
    fn ground_state_variance() {
        let spec = build_and_diagonalize(&ModelParams::gaussian(1.0, 1.0, 40.0).unwrap(), 32).unwrap();
        let eta = spec.thermal(40.0).unwrap().eta();
        assert!((eta - 0.5).abs() < 1e-12);
    }

    #[test]
    fn eta_respects_commutator_bound() {
        for (m, a, b, beta) in [(20.0, -1.0, 0.05, 4.0), (1.0, -2.0, 0.2, 1.0), (5.0, -0.5, 0.05, 10.0)] {
            let p = ModelParams::new(m, a, b, beta).unwrap();
            let spec = build_and_diagonalize(&p, 64).unwrap();
            let eta = spec.thermal(beta).unwrap().eta();
            assert!(eta >= p.gamma().unwrap() / 12.0);
        }
    }

    #[test]
    fn rigidity_grows_as_mass_decreases() {
        let masses: Vec<f64> = (0..=6).map(|i| 10f64.powf(-3.0 + i as f64 / 3.0)).collect();
        let pts: Vec<(f64, f64)> = masses
            .iter()
            .map(|&m| {
                let p = ModelParams::new(m, -1.0, 1.0, 1.0).unwrap();
                let s = build_and_diagonalize(&p, 32).unwrap();
                (m.ln(), s.rigidity().ln())
            })
            .collect();
        let n = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
        let (mx, my) = (sx / n, sy / n);
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope + 1.0 / 3.0).abs() < 0.03, "slope {slope}");
        let r = eta_and_rigidity(&build_and_diagonalize(&ModelParams::new(1e-3, -1.0, 1.0, 1.0).unwrap(), 32).unwrap(), 1.0).unwrap();
        assert!(r.suppressed);
    }

    #[test]
    fn u_hat_bounds_and_monotonicity() {
        let p = physical();
        let spec = build_and_diagonalize(&p.with_beta(1.0), 80).unwrap();
        let mut prev = 0.0;
        for i in 2..=16 {
            let beta = 0.5 * i as f64;
            let th = spec.thermal(beta).unwrap();
            let u0 = th.u_hat(0.0);
            assert!(u0 > prev);
            prev = u0;
            for k in 1..=6 {
                let q = matsubara(beta, k);
                let u = th.u_hat(q);
                assert!(u > 0.0 && u <= u0);
                assert!(u <= 1.0 / (p.mass * q * q));
                assert_eq!(u, th.u_hat(-q));
            }
        }
    }

    #[test]
    fn fourier_sum_rule() {
        let p = physical();
        let spec = build_and_diagonalize(&p, 80).unwrap();
        let th = spec.thermal(p.beta).unwrap();
        let kmax = 256;
        let mut sum = th.u_hat(0.0);
        for k in 1..=kmax {
            sum += 2.0 * th.u_hat(matsubara(p.beta, k));
        }
        sum /= p.beta;
        // Σ_{|k|>K} 1/(m q²)/β ≤ 2β/(4π² m K)
        let tail = 2.0 * p.beta / (4.0 * std::f64::consts::PI.powi(2) * p.mass * kmax as f64);
        let gap = th.eta() - sum;
        assert!(gap >= -1e-10 && gap <= tail, "gap {gap} tail {tail}");
    }

    #[test]
    fn commutator_identities() {
        let p = physical();
        assert!(double_commutator_defect(&p, 80).unwrap() < 1e-8);
        let q = ModelParams::new(1.0, 1.0, 0.3, 1.0).unwrap();
        assert!(double_commutator_defect(&q, 60).unwrap() < 1e-8);
        let spec = build_and_diagonalize(&p, 80).unwrap();
        assert!(spec.f_sum_defect() < 1e-8);
    }

    #[test]
    fn sum_rule_at_reference_point() {
        let p = physical();
        let spec = build_and_diagonalize(&p, 80).unwrap();
        let r = spec.thermal(p.beta).unwrap().sum_rule_residual(p.a);
        assert!(r.abs() < 1e-4, "{r}");
    }

    #[test]
    fn gaussian_x0_vanishes() {
        for beta in [0.5, 2.0, 8.0] {
            let spec = build_and_diagonalize(&ModelParams::gaussian(1.5, 0.7, beta).unwrap(), 64).unwrap();
            let th = spec.thermal(beta).unwrap();
            let u = th.u_hat(0.0);
            assert!(th.x0().abs() < 1e-11 * u * u);
        }
    }

    /// `X₀ = βηû + 2û² − ⟨q(0)²Ω²⟩` with every term obtained by imaginary-time quadrature.
    fn x0_by_quadrature(spec: &SpectralSolution, beta: f64) -> f64 {
        let k = spec.basis_size;
        let e: Vec<f64> = spec.energies.iter().map(|x| x - spec.energies[0]).collect();
        let z: f64 = e.iter().map(|x| (-beta * x).exp()).sum();
        let q = &spec.q_matrix;
        let q2 = &spec.q2_matrix;
        let gamma2 = |tau: f64| {
            let mut s = 0.0;
            for a in 0..k {
                for b in 0..k {
                    s += (-(beta - tau) * e[a] - tau * e[b]).exp() * q[(a, b)] * q[(b, a)];
                }
            }
            s / z
        };
        let n = 160;
        let u = simpson(n, 0.0, beta, gamma2);
        let eta = gamma2(0.0);
        // T(τ1, τ2) = Tr[e^{−(β−τ2)H} q e^{−(τ2−τ1)H} q e^{−τ1 H} q²] for τ1 ≤ τ2
        let inner = |t1: f64| {
            let d1 = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(k, e.iter().map(|x| (-t1 * x).exp())));
            let r = q * d1 * q2;
            simpson(n, t1, beta, |t2| {
                let mut s = 0.0;
                for a in 0..k {
                    for b in 0..k {
                        s += (-(beta - t2) * e[a] - (t2 - t1) * e[b]).exp() * q[(a, b)] * r[(b, a)];
                    }
                }
                s
            })
        };
        let ordered = simpson(n, 0.0, beta, inner);
        beta * eta * u + 2.0 * u * u - 2.0 * ordered / z
    }

    #[test]
    fn x0_matches_time_domain_quadrature() {
        for (m, a, b, beta) in [(1.0, -1.0, 0.5, 2.0), (2.0, 0.5, 0.3, 1.0)] {
            let p = ModelParams::new(m, a, b, beta).unwrap();
            let spec = diagonalize(&p, 24).unwrap();
            let x = spec.thermal(beta).unwrap().x0();
            let oracle = x0_by_quadrature(&spec, beta);
            assert!(x > 0.0);
            assert!((x - oracle).abs() < 1e-7 * oracle, "{x} vs {oracle}");
        }
    }

    #[test]
    fn x0_below_corrected_bound() {
        for (m, a, b, beta) in [(20.0, -1.0, 0.05, 4.0), (1.0, -1.0, 0.1, 0.5), (10.0, -2.0, 0.1, 2.0)] {
            let p = ModelParams::new(m, a, b, beta).unwrap();
            let spec = build_and_diagonalize(&p, 64).unwrap();
            let th = spec.thermal(beta).unwrap();
            let x = th.x0();
            assert!(x > 0.0 && x <= x0_upper_bound(&p, th.u_hat(0.0)).unwrap());
        }
    }

    #[test]
    fn initial_bounds_report() {
        let p = physical();
        let spec = build_and_diagonalize(&p, 80).unwrap();
        let r = check_initial_bounds(&spec, &p).unwrap();
        assert!(r.all_pass(), "{r:#?}");
        assert!(matches!(
            check_initial_bounds(&spec, &ModelParams::new(20.0, 1.0, 0.05, 4.0).unwrap()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn u_hat_vanishes_at_high_temperature() {
        let p = ModelParams::new(1.0, -1.0, 0.2, 0.1).unwrap();
        let spec = build_and_diagonalize(&p, 64).unwrap();
        let u: Vec<f64> = [0.1, 0.4, 1.6].iter().map(|&b| spec.thermal(b).unwrap().u_hat(0.0)).collect();
        // classical scaling û ∝ β^{1/2} as β → 0
        assert!(u[0] < 0.6 * u[1] && u[1] < 0.6 * u[2], "{u:?}");
    }

    #[test]
    fn rigid_double_well_exceeds_window_edge() {
        // mγ² = 80 > 36·1.18
        let p = ModelParams::new(20.0, -1.0, 0.5, 50.0).unwrap();
        assert!(p.mass * p.gamma().unwrap().powi(2) > 36.0 * 1.18);
        let spec = build_and_diagonalize(&p, 64).unwrap();
        assert!(spec.thermal(50.0).unwrap().u_hat(0.0) > 1.18);
    }

    #[test]
    fn upper_bound_needs_squared_coefficient() {
        let p = ModelParams::new(1.0, -0.1, 0.01, 1.0).unwrap();
        let spec = build_and_diagonalize(&p, 64).unwrap();
        let u = spec.thermal(1.0).unwrap().u_hat(0.0);
        let g = p.gamma().unwrap();
        let linear = (g / 8.0) * (1.0 + (1.0 + 16.0 / g).sqrt());
        let squared = (p.a.abs() / (8.0 * p.b)) * (1.0 + (1.0 + 16.0 * p.b / (p.a * p.a)).sqrt());
        assert!(u > linear);
        assert!(u < squared);
    }

    #[test]
    fn record_serializes() {
        let p = physical();
        let spec = build_and_diagonalize(&p, 80).unwrap();
        let rec = spectral_record(&spec, &p, 8).unwrap();
        assert_eq!(rec.energies.len(), 8);
        assert_eq!(rec.u_hat0.len(), 9);
        let json = serde_json::to_string(&rec).unwrap();
        let back: SpectralRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rec);
    }
}
