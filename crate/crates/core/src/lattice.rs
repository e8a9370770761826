//! Lattice approximation of the level-n path measure.
//!
//! Each site of a level-n block carries a periodic ring of N imaginary-time
//! slices, ε = β/N. The action is
//!
//! ```text
//! S(x) = Σ_{s,t} [ (m/2ε)(x_{s,t+1} − x_{s,t})² + ε(1/2)x² + ε((a−1)/2)x² + εb x⁴ ]
//!        + (ε/2) Σ_t x_{·,t}ᵀ M x_{·,t}
//! ```
//!
//! with `M` the hierarchical coupling matrix. The first two terms form the
//! Gaussian reference with per-mode covariance λ_q^(N); the `(a−1)/2` shift
//! restores the physical quadratic coefficient. Observables are built from the
//! fluctuation field `F_t = κ^{−n(1+δ)/2} Σ_s x_{s,t}`.
//!
//! Also here: exact Gaussian references and exhaustive enumeration of small
//! Ising approximants.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hierarchy::HierarchyParams;
use crate::spectral::ModelParams;
use crate::stats::{BatchTable, Estimate};
use crate::ursell::{cumulants_from_moments, Source, UrsellTable};

/// Largest number of lattice variables (sites × slices) we build.
pub const MAX_LATTICE_SITES: u64 = 100_000;
/// Largest Ising instance enumerated exhaustively.
pub const MAX_ENUM_SPINS: usize = 20;
/// Relative tolerance of the temporal-symbol construction check.
pub const SYMBOL_TOL: f64 = 1e-10;

/// `m (2N/β)² sin²(βq/2N)`.
pub fn temporal_symbol(mass: f64, beta: f64, slices: usize, q: f64) -> f64 {
    let n = slices as f64;
    let s = (beta * q / (2.0 * n)).sin();
    mass * (2.0 * n / beta).powi(2) * s * s
}

/// Reference covariance `λ_q^(N) = 1/(m (2N/β)² sin²(βq/2N) + 1)`.
pub fn lambda_q(mass: f64, beta: f64, slices: usize, q: f64) -> f64 {
    1.0 / (temporal_symbol(mass, beta, slices, q) + 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeModel {
    pub level: u32,
    /// Number of time slices N (even).
    pub slices: usize,
    pub hier: HierarchyParams,
    pub params: ModelParams,
    /// κⁿ spatial sites.
    pub sites: usize,
    /// ε = β/N.
    pub eps: f64,
    /// Nearest-neighbour temporal coupling m/ε.
    pub bond: f64,
    /// Diagonal of the Gaussian reference, ε.
    pub reference_diag: f64,
    /// Diagonal shift ε(a − 1) bringing the reference to the physical a.
    pub shift_diag: f64,
    /// Per-slice quartic weight εb.
    pub quartic: f64,
    /// ε θ κ^{−ℓ(1+δ)} for ℓ = 1..n: weight of the squared level-ℓ block sums.
    pub level_weights: Vec<f64>,
}

pub fn build_lattice_model(
    n: u32,
    slices: usize,
    hier: HierarchyParams,
    params: ModelParams,
) -> Result<LatticeModel> {
    params.validate()?;
    if slices < 2 || slices % 2 != 0 {
        return Err(Error::Domain(format!("slice count must be even and >= 2, got {slices}")));
    }
    let sites = hier.block_size(n)?;
    let total = sites
        .checked_mul(slices as u64)
        .filter(|&t| t <= MAX_LATTICE_SITES)
        .ok_or_else(|| {
            Error::Range(format!("{sites} sites x {slices} slices exceeds {MAX_LATTICE_SITES}"))
        })?;
    debug_assert!(total > 0);
    let eps = params.beta / slices as f64;
    Ok(LatticeModel {
        level: n,
        slices,
        hier,
        params,
        sites: sites as usize,
        eps,
        bond: params.mass / eps,
        reference_diag: eps,
        shift_diag: eps * (params.a - 1.0),
        quartic: eps * params.b,
        level_weights: (1..=n).map(|l| eps * hier.level_weight(l)).collect(),
    })
}

impl LatticeModel {
    pub fn site_count(&self) -> usize {
        self.sites * self.slices
    }

    /// Total quadratic diagonal per variable from the on-site terms, εa.
    fn onsite_diag(&self) -> f64 {
        self.reference_diag + self.shift_diag
    }

    /// `κ^{−n(1+δ)/2}`, the normalization of the fluctuation field.
    pub fn field_scale(&self) -> f64 {
        (self.hier.kappa as f64).powf(-(self.level as f64) * (1.0 + self.hier.delta) / 2.0)
    }

    /// Matsubara frequencies retained by the lattice, κ = −(L−1)..L.
    pub fn frequencies(&self) -> Vec<(i64, f64)> {
        let l = (self.slices / 2) as i64;
        (-(l - 1)..=l)
            .map(|k| (k, 2.0 * PI * k as f64 / self.params.beta))
            .collect()
    }

    /// Reference operator of one ring: nearest-neighbour chain plus ε on the diagonal.
    pub fn apply_reference_ring(&self, v: &[f64]) -> Vec<f64> {
        let n = self.slices;
        (0..n)
            .map(|t| {
                let (p, m) = (v[(t + 1) % n], v[(t + n - 1) % n]);
                self.bond * (2.0 * v[t] - p - m) + self.reference_diag * v[t]
            })
            .collect()
    }

    /// Entries `(i, j, A_ij)` of the quadratic form `S₂ = ½ xᵀAx`, variable
    /// index `site·N + t`. Duplicate entries are to be summed.
    pub fn quadratic_form(&self) -> Vec<(usize, usize, f64)> {
        let n = self.slices;
        let mut out = Vec::new();
        for s in 0..self.sites {
            for t in 0..n {
                let i = s * n + t;
                out.push((i, i, 2.0 * self.bond + self.onsite_diag()));
                out.push((i, s * n + (t + 1) % n, -self.bond));
                out.push((i, s * n + (t + n - 1) % n, -self.bond));
            }
        }
        let k = self.hier.kappa as usize;
        for (l, w) in self.level_weights.iter().enumerate() {
            let size = k.pow(l as u32 + 1);
            for s in 0..self.sites {
                let start = s / size * size;
                for s2 in start..start + size {
                    for t in 0..n {
                        out.push((s * n + t, s2 * n + t, -w));
                    }
                }
            }
        }
        out
    }

    /// Dense form of [`Self::quadratic_form`] for small models.
    pub fn quadratic_matrix(&self) -> Result<DMatrix<f64>> {
        let size = self.site_count();
        if size > 4096 {
            return Err(Error::Range(format!("dense quadratic form of size {size}")));
        }
        let mut a = DMatrix::zeros(size, size);
        for (i, j, v) in self.quadratic_form() {
            a[(i, j)] += v;
        }
        Ok(a)
    }

    /// Exact finite-N Gaussian reference for b = 0.
    pub fn gaussian_reference(&self) -> Result<LatticeGaussian> {
        if !self.params.is_gaussian() {
            return Err(Error::Domain("Gaussian reference needs b = 0".into()));
        }
        let (m, beta, n) = (self.params.mass, self.params.beta, self.slices);
        let u_hat = self
            .frequencies()
            .into_iter()
            .map(|(k, q)| {
                gaussian_u_hat(self.level, &self.hier, &self.params, temporal_symbol(m, beta, n, q))
                    .map(|u| (k, q, u))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LatticeGaussian { beta, slices: n, u_hat })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymbolCheck {
    pub max_rel_defect: f64,
    pub pass: bool,
}

/// Verify that the reference ring operator is diagonal in the Fourier basis
/// with eigenvalue `ε/λ(q)` for every `q` the lattice retains.
pub fn check_temporal_symbol(model: &LatticeModel, lambda: impl Fn(f64) -> f64) -> SymbolCheck {
    let n = model.slices;
    let mut worst: f64 = 0.0;
    for (_, q) in model.frequencies() {
        let expect = model.eps / lambda(q);
        for phase in [0.0, PI / 2.0] {
            let v: Vec<f64> = (0..n).map(|t| (q * t as f64 * model.eps + phase).cos()).collect();
            let av = model.apply_reference_ring(&v);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-8 {
                continue;
            }
            let defect = av
                .iter()
                .zip(&v)
                .map(|(a, v)| (a - expect * v).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(defect / (expect * norm));
        }
    }
    SymbolCheck { max_rel_defect: worst, pass: worst < SYMBOL_TOL }
}

/// `κ^{−n(1+δ)} 1ᵀ[(symbol + a) I + M]⁻¹ 1`, via Cholesky.
pub fn gaussian_u_hat(n: u32, hier: &HierarchyParams, params: &ModelParams, symbol: f64) -> Result<f64> {
    if !params.is_gaussian() {
        return Err(Error::Domain("Gaussian oracle needs b = 0".into()));
    }
    let size = hier.block_size(n)? as usize;
    let mut a = if n == 0 { DMatrix::zeros(1, 1) } else { hier.coupling_matrix(n)? };
    for i in 0..size {
        a[(i, i)] += symbol + params.a;
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Stability(format!("quadratic form at level {n} is not positive definite")))?;
    let ones = DVector::from_element(size, 1.0);
    let x = chol.solve(&ones);
    Ok((hier.kappa as f64).powf(-(n as f64) * (1.0 + hier.delta)) * ones.dot(&x))
}

/// Exact continuum Gaussian (b = 0) level-n quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianOracle {
    pub level: u32,
    pub params: ModelParams,
    /// `κ^{−nδ}`: amplitude of the fluctuation propagator.
    pub amplitude: f64,
    /// Effective quadratic coefficient, `amplitude / û_n(0)`.
    pub a_eff: f64,
}

pub fn gaussian_oracle(n: u32, hier: &HierarchyParams, params: &ModelParams) -> Result<GaussianOracle> {
    let u0 = gaussian_u_hat(n, hier, params, 0.0)?;
    let amplitude = (hier.kappa as f64).powf(-(n as f64) * hier.delta);
    Ok(GaussianOracle { level: n, params: *params, amplitude, a_eff: amplitude / u0 })
}

impl GaussianOracle {
    /// `û_n(q)`; the all-ones vector is an eigenvector of `M`, so only `a_eff` enters.
    pub fn u_hat(&self, q: f64) -> f64 {
        self.amplitude / (self.params.mass * q * q + self.a_eff)
    }

    /// `Γ₂(0, τ) = A cosh(ω(β/2 − τ)) / (2mω sinh(ωβ/2))`, ω = √(a_eff/m).
    pub fn gamma2(&self, tau: f64) -> f64 {
        let (m, beta) = (self.params.mass, self.params.beta);
        let w = (self.a_eff / m).sqrt();
        self.amplitude * (w * (beta / 2.0 - tau)).cosh() / (2.0 * m * w * (w * beta / 2.0).sinh())
    }
}

/// Finite-N Gaussian reference: the exact law the sampler targets when b = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeGaussian {
    pub beta: f64,
    pub slices: usize,
    /// `(κ, q, û(q))` over the retained frequencies.
    pub u_hat: Vec<(i64, f64, f64)>,
}

impl LatticeGaussian {
    pub fn u_hat_at(&self, k: i64) -> Option<f64> {
        self.u_hat.iter().find(|(kk, _, _)| *kk == k).map(|(_, _, u)| *u)
    }

    /// `Γ₂` at slice separation `j`: `(1/β) Σ_q û(q) cos(qτ_j)`.
    pub fn gamma2(&self, j: usize) -> f64 {
        let tau = self.beta * j as f64 / self.slices as f64;
        self.u_hat.iter().map(|(_, q, u)| u * (q * tau).cos()).sum::<f64>() / self.beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    /// Production sweeps per chain.
    pub sweeps: usize,
    pub burn_in: usize,
    pub chains: usize,
    /// Batches per chain.
    pub batches: usize,
    /// Sweeps between measurements.
    pub measure_every: usize,
    pub overrelax: bool,
    /// Highest Matsubara index reported.
    pub k_max: usize,
    pub exec: Exec,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            sweeps: 100_000,
            burn_in: 5_000,
            chains: 4,
            batches: 32,
            measure_every: 2,
            overrelax: true,
            k_max: 8,
            exec: Exec::default(),
        }
    }
}

/// An inequality `value ≥ 0` estimated from samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityEstimate {
    pub label: String,
    pub value: Estimate,
    /// `value ≥ −3σ`.
    pub pass: bool,
}

impl InequalityEstimate {
    fn new(label: String, value: Estimate) -> Self {
        let pass = value.nonnegative_within(3.0);
        Self { label, value, pass }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimates {
    pub level: u32,
    pub slices: usize,
    pub beta: f64,
    /// `(κ, q, û(q))`.
    pub u_hat: Vec<(i64, f64, Estimate)>,
    /// `(τ, Γ₂(0, τ))` on the slice grid, τ = 0..β.
    pub gamma2: Vec<(f64, Estimate)>,
    pub x_n: Estimate,
    /// Integrated Ursell numbers 𝒰₂, 𝒰₄, 𝒰₆, 𝒰₈ of `∫F dτ`.
    pub ursell: Vec<Estimate>,
    pub ursell4_integrated: Estimate,
    /// Mean of `∫F dτ`, zero by symmetry.
    pub mean_field: Estimate,
    /// `Γ₄(τ,τ,τ,τ′) − Γ₂(τ,τ)Γ₂(τ,τ′) ≥ 0`.
    pub gks: Vec<InequalityEstimate>,
    /// `Σ pairings − Γ₄ ≥ 0`.
    pub gaussian_upper: Vec<InequalityEstimate>,
    /// `∫∫U₄(τ,τ′,·,·) − ∫∫U₄(τ,τ,·,·) ≥ 0`.
    pub correlation: Vec<InequalityEstimate>,
    pub sweeps: usize,
    pub seed: u64,
    pub chains: usize,
    pub batches: usize,
    pub acceptance: f64,
    pub shift_acceptance: f64,
    pub proposal_width: f64,
    /// Integrated autocorrelation time of `(∫F)²`, in measurements.
    pub tau_int: f64,
}

impl McEstimates {
    pub fn ursell_table(&self) -> Result<UrsellTable> {
        UrsellTable::new(
            self.ursell.iter().map(|e| e.mean).collect(),
            Some(self.ursell.iter().map(|e| e.err).collect()),
            Source::Mc,
        )
    }

    /// Rows `observable,q_or_tau,mean,stderr,sweeps,seed`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("observable,q_or_tau,mean,stderr,sweeps,seed\n");
        let mut row = |name: &str, x: f64, e: &Estimate| {
            s.push_str(&format!(
                "{name},{x:.16e},{:.16e},{:.16e},{},{}\n",
                e.mean, e.err, self.sweeps, self.seed
            ));
        };
        for (_, q, e) in &self.u_hat {
            row("u_hat", *q, e);
        }
        for (tau, e) in &self.gamma2 {
            row("gamma2", *tau, e);
        }
        row("x_n", 0.0, &self.x_n);
        for (k, e) in self.ursell.iter().enumerate() {
            row(&format!("ursell{}", 2 * k + 2), 0.0, e);
        }
        s
    }
}

/// Offsets of the primitive observables inside a measurement row.
struct Layout {
    n: usize,
    kq: usize,
    patterns: Vec<[usize; 3]>,
}

impl Layout {
    const BASE: usize = 7;

    fn new(n: usize, k_max: usize) -> Self {
        let kq = k_max.min(n / 2);
        let g = (n / 4).max(1);
        let grid: Vec<usize> = (0..n).step_by(g).collect();
        let mut patterns = Vec::new();
        for (i, &a) in grid.iter().enumerate() {
            for (j, &b) in grid.iter().enumerate().skip(i) {
                for &c in grid.iter().skip(j) {
                    patterns.push([a, b, c]);
                }
            }
        }
        Self { n, kq, patterns }
    }
    fn uq(&self) -> usize {
        Self::BASE
    }
    fn corr(&self) -> usize {
        self.uq() + self.kq + 1
    }
    fn corr_omega(&self) -> usize {
        self.corr() + self.n
    }
    fn cubic(&self) -> usize {
        self.corr_omega() + self.n
    }
    fn square(&self) -> usize {
        self.cubic() + self.n
    }
    fn pattern(&self) -> usize {
        self.square() + self.n
    }
    fn width(&self) -> usize {
        self.pattern() + self.patterns.len()
    }
}

struct Chain<'a> {
    m: &'a LatticeModel,
    x: Vec<f64>,
    /// `sums[ℓ−1][block·N + t]`: level-ℓ block sums per slice.
    sums: Vec<Vec<f64>>,
    /// `block_of[ℓ−1][s]`.
    block_of: Vec<Vec<usize>>,
    rng: ChaCha8Rng,
    width: f64,
    shift_width: f64,
    tries: u64,
    accepts: u64,
    shift_tries: u64,
    shift_accepts: u64,
}

impl<'a> Chain<'a> {
    fn new(m: &'a LatticeModel, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let k = m.hier.kappa as usize;
        let block_of: Vec<Vec<usize>> = (1..=m.level)
            .map(|l| (0..m.sites).map(|s| s / k.pow(l)).collect())
            .collect();
        let sums = (1..=m.level)
            .map(|l| vec![0.0; (m.sites / k.pow(l)) * m.slices])
            .collect();
        let width = (m.eps / (2.0 * m.params.mass)).sqrt().max(1e-3);
        Self {
            m,
            x: vec![0.0; m.site_count()],
            sums,
            block_of,
            rng,
            width,
            shift_width: 0.5,
            tries: 0,
            accepts: 0,
            shift_tries: 0,
            shift_accepts: 0,
        }
    }

    fn rebuild_sums(&mut self) {
        let n = self.m.slices;
        for (l, sums) in self.sums.iter_mut().enumerate() {
            sums.iter_mut().for_each(|v| *v = 0.0);
            for s in 0..self.m.sites {
                let b = self.block_of[l][s];
                for t in 0..n {
                    sums[b * n + t] += self.x[s * n + t];
                }
            }
        }
    }

    fn accept(&mut self, ds: f64) -> bool {
        ds <= 0.0 || self.rng.random::<f64>() < (-ds).exp()
    }

    /// Spatial action change from adding `d` at (s, t): `−Σ_ℓ w_ℓ (S d + d²/2)`.
    fn spatial_delta(&self, s: usize, t: usize, d: f64) -> f64 {
        let n = self.m.slices;
        self.m
            .level_weights
            .iter()
            .enumerate()
            .map(|(l, w)| -w * (self.sums[l][self.block_of[l][s] * n + t] * d + 0.5 * d * d))
            .sum()
    }

    fn move_site(&mut self, s: usize, t: usize, d: f64) {
        let n = self.m.slices;
        self.x[s * n + t] += d;
        for l in 0..self.sums.len() {
            self.sums[l][self.block_of[l][s] * n + t] += d;
        }
    }

    fn neighbours(&self, s: usize, t: usize) -> f64 {
        let n = self.m.slices;
        self.x[s * n + (t + 1) % n] + self.x[s * n + (t + n - 1) % n]
    }

    fn metropolis(&mut self, s: usize, t: usize) {
        let m = self.m;
        let x = self.x[s * m.slices + t];
        let d = self.width * (2.0 * self.rng.random::<f64>() - 1.0);
        let y = x + d;
        let (x2, y2) = (x * x, y * y);
        let ds = m.bond * ((y2 - x2) - d * self.neighbours(s, t))
            + 0.5 * m.onsite_diag() * (y2 - x2)
            + m.quartic * (y2 * y2 - x2 * x2)
            + self.spatial_delta(s, t, d);
        self.tries += 1;
        if self.accept(ds) {
            self.accepts += 1;
            self.move_site(s, t, d);
        }
    }

    /// Reflect through the conditional mean of the Gaussian part, corrected by
    /// a Metropolis test on the quartic term.
    fn overrelax(&mut self, s: usize, t: usize) {
        let m = self.m;
        let n = m.slices;
        let wsum: f64 = m.level_weights.iter().sum();
        let a = 2.0 * m.bond + m.onsite_diag() - wsum;
        if a <= 0.0 {
            return;
        }
        let x = self.x[s * n + t];
        let mut b = m.bond * self.neighbours(s, t);
        for (l, w) in m.level_weights.iter().enumerate() {
            b += w * (self.sums[l][self.block_of[l][s] * n + t] - x);
        }
        let y = 2.0 * b / a - x;
        let ds = m.quartic * (y.powi(4) - x.powi(4));
        if self.accept(ds) {
            self.move_site(s, t, y - x);
        }
    }

    /// Translate a whole time ring; the kinetic term is unchanged.
    fn ring_shift(&mut self, s: usize) {
        let m = self.m;
        let n = m.slices;
        let d = self.shift_width * (2.0 * self.rng.random::<f64>() - 1.0);
        let mut ds = 0.0;
        for t in 0..n {
            let x = self.x[s * n + t];
            let y = x + d;
            ds += 0.5 * m.onsite_diag() * (y * y - x * x) + m.quartic * (y.powi(4) - x.powi(4));
            ds += self.spatial_delta(s, t, d);
        }
        self.shift_tries += 1;
        if self.accept(ds) {
            self.shift_accepts += 1;
            for t in 0..n {
                self.move_site(s, t, d);
            }
        }
    }

    /// Negate a whole time ring; only the spatial coupling changes.
    fn ring_flip(&mut self, s: usize) {
        let m = self.m;
        let n = m.slices;
        let mut ds = 0.0;
        for t in 0..n {
            let x = self.x[s * n + t];
            for (l, w) in m.level_weights.iter().enumerate() {
                ds += 2.0 * w * x * (self.sums[l][self.block_of[l][s] * n + t] - x);
            }
        }
        if self.accept(ds) {
            for t in 0..n {
                let x = self.x[s * n + t];
                self.move_site(s, t, -2.0 * x);
            }
        }
    }

    fn sweep(&mut self, overrelax: bool) {
        let (sites, n) = (self.m.sites, self.m.slices);
        for s in 0..sites {
            for t in 0..n {
                self.metropolis(s, t);
            }
        }
        if overrelax {
            for s in 0..sites {
                for t in 0..n {
                    self.overrelax(s, t);
                }
            }
        }
        for s in 0..sites {
            self.ring_shift(s);
            self.ring_flip(s);
        }
    }

    fn tune(&mut self) {
        let rate = |a: u64, t: u64| if t == 0 { 0.5 } else { a as f64 / t as f64 };
        let r = rate(self.accepts, self.tries);
        self.width *= (r / 0.5).clamp(0.5, 2.0);
        let r = rate(self.shift_accepts, self.shift_tries);
        self.shift_width *= (r / 0.5).clamp(0.5, 2.0);
        self.reset_counters();
    }

    fn reset_counters(&mut self) {
        self.tries = 0;
        self.accepts = 0;
        self.shift_tries = 0;
        self.shift_accepts = 0;
    }

    fn measure(&self, lay: &Layout, trig: &[(Vec<f64>, Vec<f64>)], out: &mut [f64]) {
        let m = self.m;
        let n = m.slices;
        let c = m.field_scale();
        let f: Vec<f64> = (0..n)
            .map(|t| c * (0..m.sites).map(|s| self.x[s * n + t]).sum::<f64>())
            .collect();
        let eps = m.eps;
        let beta = m.params.beta;
        let omega = eps * f.iter().sum::<f64>();
        let norm2 = eps * f.iter().map(|v| v * v).sum::<f64>();
        let o2 = omega * omega;
        out[0] += o2;
        out[1] += o2 * o2;
        out[2] += o2 * o2 * o2;
        out[3] += o2 * o2 * o2 * o2;
        out[4] += norm2;
        out[5] += norm2 * o2;
        out[6] += omega;
        for (k, (cs, sn)) in trig.iter().enumerate() {
            let re: f64 = f.iter().zip(cs).map(|(a, b)| a * b).sum::<f64>() * eps;
            let im: f64 = f.iter().zip(sn).map(|(a, b)| a * b).sum::<f64>() * eps;
            out[lay.uq() + k] += (re * re + im * im) / beta;
        }
        let f2: Vec<f64> = f.iter().map(|v| v * v).collect();
        let inv = 1.0 / n as f64;
        for j in 0..n {
            let (mut c2, mut c3, mut c4) = (0.0, 0.0, 0.0);
            for t in 0..n {
                let u = (t + j) % n;
                c2 += f[t] * f[u];
                c3 += f2[t] * f[t] * f[u];
                c4 += f2[t] * f2[u];
            }
            out[lay.corr() + j] += c2 * inv;
            out[lay.corr_omega() + j] += c2 * inv * o2;
            out[lay.cubic() + j] += c3 * inv;
            out[lay.square() + j] += c4 * inv;
        }
        for (p, [a, b, cc]) in lay.patterns.iter().enumerate() {
            let mut acc = 0.0;
            for t in 0..n {
                acc += f[t] * f[(t + a) % n] * f[(t + b) % n] * f[(t + cc) % n];
            }
            out[lay.pattern() + p] += acc * inv;
        }
    }
}

struct ChainResult {
    table: BatchTable,
    accepts: u64,
    tries: u64,
    shift_accepts: u64,
    shift_tries: u64,
    width: f64,
    per_batch: usize,
}

fn run_chain(model: &LatticeModel, cfg: &McConfig, seed: u64, stream: u64, lay: &Layout) -> ChainResult {
    let mut ch = Chain::new(model, seed, stream);
    for i in 0..cfg.burn_in {
        ch.sweep(cfg.overrelax);
        if (i + 1) % 50 == 0 {
            ch.tune();
        }
    }
    ch.rebuild_sums();
    ch.reset_counters();
    let n = model.slices;
    let trig: Vec<(Vec<f64>, Vec<f64>)> = (0..=lay.kq)
        .map(|k| {
            let q = 2.0 * PI * k as f64 / model.params.beta;
            let tau = |t: usize| t as f64 * model.eps;
            (
                (0..n).map(|t| (q * tau(t)).cos()).collect(),
                (0..n).map(|t| -(q * tau(t)).sin()).collect(),
            )
        })
        .collect();
    let per_batch = (cfg.sweeps / cfg.batches / cfg.measure_every).max(1);
    let mut table = BatchTable::default();
    let mut sweep = 0usize;
    for _ in 0..cfg.batches {
        let mut acc = vec![0.0; lay.width()];
        for _ in 0..per_batch {
            for _ in 0..cfg.measure_every {
                ch.sweep(cfg.overrelax);
                sweep += 1;
                if sweep % 256 == 0 {
                    ch.rebuild_sums();
                }
            }
            ch.measure(lay, &trig, &mut acc);
        }
        acc.iter_mut().for_each(|v| *v /= per_batch as f64);
        table.push(acc);
    }
    ChainResult {
        table,
        accepts: ch.accepts,
        tries: ch.tries,
        shift_accepts: ch.shift_accepts,
        shift_tries: ch.shift_tries,
        width: ch.width,
        per_batch,
    }
}

/// Snapshots of the normalized slice field `F_t` from one chain of `stream`,
/// taken every `thin` sweeps after `burn_in` tuning sweeps.
pub fn sample_fields(
    model: &LatticeModel,
    burn_in: usize,
    count: usize,
    thin: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<Vec<f64>>> {
    if thin == 0 {
        return Err(Error::Domain("thinning interval must be positive".into()));
    }
    let mut ch = Chain::new(model, seed, stream);
    for i in 0..burn_in {
        ch.sweep(true);
        if (i + 1) % 50 == 0 {
            ch.tune();
        }
    }
    ch.rebuild_sums();
    ch.reset_counters();
    let n = model.slices;
    let c = model.field_scale();
    let mut out = Vec::with_capacity(count);
    let mut sweep = 0usize;
    for _ in 0..count {
        for _ in 0..thin {
            ch.sweep(true);
            sweep += 1;
            if sweep % 256 == 0 {
                ch.rebuild_sums();
            }
        }
        out.push((0..n).map(|t| c * (0..model.sites).map(|s| ch.x[s * n + t]).sum::<f64>()).collect());
    }
    let acceptance = ch.accepts as f64 / ch.tries.max(1) as f64;
    if !(0.2..=0.8).contains(&acceptance) {
        return Err(Error::Tuning(format!("acceptance rate {acceptance:.3} after tuning")));
    }
    Ok(out)
}

/// Run `cfg.chains` independent chains and combine their batches.
pub fn mc_estimate(model: &LatticeModel, cfg: &McConfig, seed: u64) -> Result<McEstimates> {
    if cfg.sweeps * cfg.chains < 10_000 {
        return Err(Error::Domain(format!(
            "need at least 1e4 production sweeps, got {}",
            cfg.sweeps * cfg.chains
        )));
    }
    if cfg.batches < 16 / cfg.chains.max(1) || cfg.batches == 0 || cfg.measure_every == 0 {
        return Err(Error::Domain("need at least 16 batches in total".into()));
    }
    if model.params.b < 0.0 {
        return Err(Error::Domain("quartic coefficient must be non-negative".into()));
    }
    let lay = Layout::new(model.slices, cfg.k_max);
    let results = cfg
        .exec
        .map_range(cfg.chains, |c| run_chain(model, cfg, seed, c as u64, &lay));
    let mut table = BatchTable::default();
    let (mut acc, mut tries, mut sacc, mut stries, mut width) = (0, 0, 0, 0, 0.0);
    let per_batch = results[0].per_batch;
    for r in results {
        acc += r.accepts;
        tries += r.tries;
        sacc += r.shift_accepts;
        stries += r.shift_tries;
        width += r.width / cfg.chains as f64;
        table.extend(r.table);
    }
    let acceptance = acc as f64 / tries as f64;
    if !(0.2..=0.8).contains(&acceptance) {
        return Err(Error::Tuning(format!("acceptance rate {acceptance:.3} after tuning")));
    }
    Ok(summarize(model, cfg, seed, &lay, &table, per_batch, Acceptance {
        local: acceptance,
        shift: if stries == 0 { 0.0 } else { sacc as f64 / stries as f64 },
        width,
    }))
}

struct Acceptance {
    local: f64,
    shift: f64,
    width: f64,
}

fn summarize(
    model: &LatticeModel,
    cfg: &McConfig,
    seed: u64,
    lay: &Layout,
    table: &BatchTable,
    per_batch: usize,
    acc: Acceptance,
) -> McEstimates {
    let n = model.slices;
    let beta = model.params.beta;
    let u_hat = (0..=lay.kq)
        .map(|k| (k as i64, 2.0 * PI * k as f64 / beta, table.column(lay.uq() + k)))
        .collect();
    let gamma2 = (0..=n)
        .map(|j| (j as f64 * model.eps, table.column(lay.corr() + j % n)))
        .collect();
    let x_n = table.jackknife(|m| -(m[5] - m[4] * m[0]) / beta + 2.0 * (m[0] / beta).powi(2));
    let ursell: Vec<Estimate> = (0..4)
        .map(|k| table.jackknife(|m| cumulants_from_moments(&m[0..4])[k]))
        .collect();
    let ursell4_integrated = ursell[1];
    let mut gks = Vec::new();
    let mut gaussian_upper = Vec::new();
    let mut correlation = Vec::new();
    let c = |m: &[f64], j: usize| m[lay.corr() + j % n];
    for j in 0..n {
        gks.push(InequalityEstimate::new(
            format!("gks j={j}"),
            table.jackknife(|m| m[lay.cubic() + j] - c(m, 0) * c(m, j)),
        ));
        gaussian_upper.push(InequalityEstimate::new(
            format!("pairs(0,0,{j},{j})"),
            table.jackknife(|m| c(m, 0).powi(2) + 2.0 * c(m, j).powi(2) - m[lay.square() + j]),
        ));
        let r = |m: &[f64], j: usize| {
            m[lay.corr_omega() + j] - c(m, j) * m[0] - 2.0 * (m[0] / beta).powi(2)
        };
        correlation.push(InequalityEstimate::new(
            format!("corr j={j}"),
            table.jackknife(|m| r(m, j) - r(m, 0)),
        ));
    }
    for (p, [a, b, d]) in lay.patterns.iter().enumerate() {
        let (a, b, d) = (*a, *b, *d);
        gaussian_upper.push(InequalityEstimate::new(
            format!("pairs(0,{a},{b},{d})"),
            table.jackknife(|m| {
                c(m, a) * c(m, d - b) + c(m, b) * c(m, d - a) + c(m, d) * c(m, b - a)
                    - m[lay.pattern() + p]
            }),
        ));
    }
    let var_o2 = {
        let m = table.means();
        m[1] - m[0] * m[0]
    };
    let bm = table.column(0);
    let var_bm = bm.err.powi(2) * table.len() as f64;
    let tau_int = if var_o2 > 0.0 { per_batch as f64 * var_bm / (2.0 * var_o2) } else { 0.0 };
    McEstimates {
        level: model.level,
        slices: n,
        beta,
        u_hat,
        gamma2,
        x_n,
        ursell,
        ursell4_integrated,
        mean_field: table.column(6),
        gks,
        gaussian_upper,
        correlation,
        sweeps: cfg.sweeps * cfg.chains,
        seed,
        chains: cfg.chains,
        batches: table.len(),
        acceptance: acc.local,
        shift_acceptance: acc.shift,
        proposal_width: acc.width,
        tau_int,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsingInstance {
    pub spins: usize,
    /// `(i, j, J_ij)` with `i < j`; energy `−Σ J_ij σ_i σ_j`.
    pub couplings: Vec<(usize, usize, f64)>,
}

impl IsingInstance {
    pub fn new(spins: usize, couplings: Vec<(usize, usize, f64)>) -> Result<Self> {
        if spins == 0 || spins > MAX_ENUM_SPINS {
            return Err(Error::Range(format!("spin count {spins} outside 1..={MAX_ENUM_SPINS}")));
        }
        for &(i, j, v) in &couplings {
            if i >= spins || j >= spins || i == j || !v.is_finite() {
                return Err(Error::Domain(format!("bad coupling ({i}, {j}, {v})")));
            }
        }
        Ok(Self { spins, couplings })
    }

    /// Sites `0..κⁿ` with pair couplings `J (d+1)^{−1−δ}`.
    pub fn hierarchical(hier: &HierarchyParams, n: u32, j: f64) -> Result<Self> {
        let spins = hier.block_size(n)? as usize;
        if spins > MAX_ENUM_SPINS {
            return Err(Error::Range(format!("{spins} spins exceed {MAX_ENUM_SPINS}")));
        }
        let mut couplings = Vec::new();
        for a in 0..spins {
            for b in a + 1..spins {
                couplings.push((a, b, hier.distance_and_coupling(a as u64, b as u64, j).1));
            }
        }
        Self::new(spins, couplings)
    }

    pub fn is_ferromagnetic(&self) -> bool {
        self.couplings.iter().all(|c| c.2 >= 0.0)
    }
}

/// Exhaustive enumeration of an Ising instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enumeration {
    pub spins: usize,
    /// `weights[j]`: probability of `j` up spins at zero field; also the
    /// coefficients of the fugacity polynomial `P(w) = Σ_j weights[j] wʲ`.
    pub weights: Vec<f64>,
    /// Probability of each configuration, bit `i` set meaning `σ_i = +1`.
    pub config_probs: Vec<f64>,
    pub ferromagnetic: bool,
}

pub fn exact_enumeration(inst: &IsingInstance) -> Result<Enumeration> {
    let n = inst.spins;
    if n > MAX_ENUM_SPINS {
        return Err(Error::Range(format!("{n} spins exceed {MAX_ENUM_SPINS}")));
    }
    let mut jm = vec![0.0; n * n];
    for &(i, j, v) in &inst.couplings {
        jm[i * n + j] += v;
        jm[j * n + i] += v;
    }
    // energies relative to the all-down state, updated along a Gray code
    let total = 1usize << n;
    let shift: f64 = inst.couplings.iter().map(|c| c.2.abs()).sum();
    let mut sigma = vec![-1.0; n];
    let mut field: Vec<f64> = (0..n).map(|i| (0..n).map(|j| jm[i * n + j] * sigma[j]).sum()).collect();
    let mut energy: f64 = -inst.couplings.iter().map(|c| c.2).sum::<f64>();
    let mut probs = vec![0.0; total];
    let mut code = 0usize;
    for g in 0..total {
        if g > 0 {
            let i = g.trailing_zeros() as usize;
            // flipping σ_i changes −Σ Jσσ by 2σ_i h_i
            energy += 2.0 * sigma[i] * field[i];
            sigma[i] = -sigma[i];
            for j in 0..n {
                field[j] += 2.0 * jm[j * n + i] * sigma[i];
            }
            code ^= 1 << i;
        }
        probs[code] = (-energy - shift).exp();
    }
    let z: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= z);
    let mut weights = vec![0.0; n + 1];
    for (c, p) in probs.iter().enumerate() {
        weights[c.count_ones() as usize] += p;
    }
    Ok(Enumeration { spins: n, weights, config_probs: probs, ferromagnetic: inst.is_ferromagnetic() })
}

impl Enumeration {
    /// `⟨M^p⟩` for the magnetization `M = Σσ`.
    pub fn magnetization_moment(&self, p: u32) -> f64 {
        let n = self.spins as f64;
        self.weights
            .iter()
            .enumerate()
            .map(|(j, w)| w * (2.0 * j as f64 - n).powi(p as i32))
            .sum()
    }

    /// 𝒰₂ … 𝒰_{2k_max} of the magnetization.
    pub fn ursell(&self, k_max: usize) -> UrsellTable {
        let m: Vec<f64> = (1..=k_max).map(|k| self.magnetization_moment(2 * k as u32)).collect();
        UrsellTable {
            values: cumulants_from_moments(&m),
            errors: None,
            source: Source::Exact,
        }
    }

    /// `⟨Π_{i ∈ idx} σ_i⟩`.
    pub fn correlation(&self, idx: &[usize]) -> f64 {
        self.config_probs
            .iter()
            .enumerate()
            .map(|(c, p)| {
                let odd = idx.iter().filter(|&&i| c & (1 << i) == 0).count() % 2 == 1;
                if odd { -p } else { *p }
            })
            .sum()
    }

    /// `f(z) = ⟨e^{zM}⟩`.
    pub fn field_function(&self, z: f64) -> f64 {
        let n = self.spins as f64;
        self.weights
            .iter()
            .enumerate()
            .map(|(j, w)| w * ((2.0 * j as f64 - n) * z).exp())
            .sum()
    }

    /// Even Taylor coefficients `⟨M^{2k}⟩/(2k)!`, k = 0..=k_max.
    pub fn taylor_coefficients(&self, k_max: usize) -> Vec<f64> {
        let mut fact = 1.0;
        (0..=k_max)
            .map(|k| {
                if k > 0 {
                    fact *= ((2 * k - 1) * 2 * k) as f64;
                }
                self.magnetization_moment(2 * k as u32) / fact
            })
            .collect()
    }
}
