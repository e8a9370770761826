//! Level-to-level bounds on `(û_n, X_n)` and the β brackets they certify.
//!
//! With `σ(v) = κ^{−δ}/(1 − (1 − κ^{−δ})v)`, `φ(v) = κ^{2δ−1}σ(v)⁴` and
//! `ψ(v) = ½κ^{2δ−1}(1 − κ^{−δ})σ(v)³`, one level of the recursion obeys
//!
//! ```text
//! û_n ≤ σ(û_{n−1}) û_{n−1}
//! û_n ≥ σ(û_{n−1}) û_{n−1} − ψ(û_{n−1}) X_{n−1}
//! X_n ≤ φ(û_{n−1}) X_{n−1}
//! ```
//!
//! whenever `û_{n−1}(1 − κ^{−δ}) < 1`. Upper bounds are inflated and lower
//! bounds deflated by `1e-14` per step as a cheap directed rounding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::spectral::{build_and_diagonalize, f_decay, BoundCheck, ModelParams, SpectralSolution};

/// Slack applied to every strict inequality.
pub const SLACK: f64 = 1e-12;
/// Per-step relative rounding allowance.
pub const ROUNDING: f64 = 1e-14;
/// Smallest quartic coefficient tried by [`select_parameters`].
pub const B_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernels {
    pub kappa: u64,
    pub delta: f64,
}

impl Kernels {
    pub fn new(kappa: u64, delta: f64) -> Result<Self> {
        if kappa < 2 || !(delta > 0.0 && delta < 0.5) {
            return Err(Error::Domain(format!("need kappa >= 2 and delta in (0, 1/2), got {kappa}, {delta}")));
        }
        Ok(Self { kappa, delta })
    }

    fn k(&self) -> f64 {
        self.kappa as f64
    }

    /// `κ^{−δ}`.
    pub fn contraction(&self) -> f64 {
        self.k().powf(-self.delta)
    }

    /// Right end `1/(1 − κ^{−δ})` of the domain of σ.
    pub fn domain_limit(&self) -> f64 {
        1.0 / (1.0 - self.contraction())
    }

    pub fn in_domain(&self, v: f64) -> bool {
        v >= 0.0 && v * (1.0 - self.contraction()) < 1.0
    }

    pub fn sigma(&self, v: f64) -> Result<f64> {
        if !self.in_domain(v) {
            return Err(Error::Domain(format!(
                "v = {v} outside [0, {})",
                self.domain_limit()
            )));
        }
        let c = self.contraction();
        Ok(c / (1.0 - (1.0 - c) * v))
    }

    pub fn phi(&self, v: f64) -> Result<f64> {
        Ok(self.k().powf(2.0 * self.delta - 1.0) * self.sigma(v)?.powi(4))
    }

    pub fn psi(&self, v: f64) -> Result<f64> {
        let c = self.contraction();
        Ok(0.5 * self.k().powf(2.0 * self.delta - 1.0) * (1.0 - c) * self.sigma(v)?.powi(3))
    }
}

/// `(σ(v), φ(v), ψ(v))`.
pub fn kernel_functions(v: f64, kappa: u64, delta: f64) -> Result<(f64, f64, f64)> {
    let k = Kernels::new(kappa, delta)?;
    Ok((k.sigma(v)?, k.phi(v)?, k.psi(v)?))
}

fn v_of(k: f64, d: f64, e: f64) -> f64 {
    (k.powf(d) - k.powf(-e)) / (k.powf(d) - 1.0)
}

fn w_of(k: f64, d: f64, e: f64) -> f64 {
    2.0 * k.powf(1.0 - d - 2.0 * e) * (k.powf(d) - k.powf(-e)) * (1.0 - k.powf(-e))
        / (k.powf(d) - 1.0).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonWindow {
    pub kappa: u64,
    pub delta: f64,
    pub epsilon: f64,
    pub v_bar: f64,
    pub w_bar: f64,
    /// Supremum of `w(ε)` over the admissible range.
    pub w_max: f64,
    /// Where the supremum is approached.
    pub epsilon_at_max: f64,
}

/// Supremum of `w(ε)` on `(0, (1−2δ)/4)`: grid scan, then golden-section polish.
pub fn w_max(kappa: u64, delta: f64) -> (f64, f64) {
    let k = kappa as f64;
    let hi = (1.0 - 2.0 * delta) / 4.0;
    let w = |e: f64| w_of(k, delta, e);
    let grid = 1000;
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 1..=grid {
        let e = hi * i as f64 / grid as f64;
        let v = w(e);
        if v > best.1 {
            best = (i, v);
        }
    }
    let step = hi / grid as f64;
    let (mut a, mut b) = ((best.0 as f64 - 1.0) * step, ((best.0 + 1) as f64 * step).min(hi));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let (c, d) = (b - g * (b - a), a + g * (b - a));
        if w(c) > w(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let e = 0.5 * (a + b);
    (w(e).max(best.1), e)
}

pub fn epsilon_window(kappa: u64, delta: f64, epsilon: f64) -> Result<EpsilonWindow> {
    Kernels::new(kappa, delta)?;
    let hi = (1.0 - 2.0 * delta) / 4.0;
    if !(epsilon > 0.0 && epsilon < hi) {
        return Err(Error::Domain(format!("epsilon must lie in (0, {hi}), got {epsilon}")));
    }
    let k = kappa as f64;
    let (w_max, epsilon_at_max) = w_max(kappa, delta);
    Ok(EpsilonWindow {
        kappa,
        delta,
        epsilon,
        v_bar: v_of(k, delta, epsilon),
        w_bar: w_of(k, delta, epsilon),
        w_max,
        epsilon_at_max,
    })
}

impl EpsilonWindow {
    pub fn kernels(&self) -> Kernels {
        Kernels { kappa: self.kappa, delta: self.delta }
    }

    /// The defining properties of the window, with [`SLACK`].
    ///
    /// The escape inequality `v̄σ(v̄) − ψ(v̄)w ≥ v̄` is checked at `v = v̄`,
    /// where it is an identity for `w = w̄`; on `[1, v̄)` its left side is
    /// smaller than `v`.
    pub fn invariants(&self) -> Vec<BoundCheck> {
        let ker = self.kernels();
        let k = self.kappa as f64;
        let mut out = Vec::new();
        let s = ker.sigma(self.v_bar).unwrap_or(f64::NAN);
        let target = k.powf(self.epsilon);
        out.push(BoundCheck::le("|sigma(v_bar) - kappa^eps|", (s - target).abs(), 0.0, SLACK));
        let cap = k.powf(2.0 * self.delta + 4.0 * self.epsilon - 1.0);
        let worst_phi = (0..=200)
            .map(|i| 1.0 + (self.v_bar - 1.0) * i as f64 / 200.0)
            .map(|v| ker.phi(v).unwrap_or(f64::INFINITY))
            .fold(f64::NEG_INFINITY, f64::max);
        out.push(BoundCheck::le("max phi on [1, v_bar] <= kappa^(2d+4e-1)", worst_phi, cap, SLACK));
        out.push(BoundCheck::le("kappa^(2d+4e-1) < 1", cap, 1.0 - SLACK, 0.0));
        let v = self.v_bar;
        let lhs = v * s - ker.psi(v).unwrap_or(f64::NAN) * self.w_bar;
        out.push(BoundCheck::le("v_bar <= v_bar sigma(v_bar) - psi(v_bar) w_bar", v, lhs, SLACK));
        out.push(BoundCheck::le("w_bar < w_max", self.w_bar, self.w_max, 0.0));
        out
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// One step of the recurrence; `Err(Domain)` when `û_{n−1}(1 − κ^{−δ}) ≥ 1`.
pub fn recurrence_step(u_prev: Interval, x_prev: f64, kernels: &Kernels) -> Result<(Interval, f64)> {
    let (s_hi, s_lo) = (kernels.sigma(u_prev.hi)?, kernels.sigma(u_prev.lo)?);
    let hi = s_hi * u_prev.hi * (1.0 + ROUNDING);
    let lo = (s_lo * u_prev.lo - kernels.psi(u_prev.hi)? * x_prev) * (1.0 - ROUNDING);
    let x = kernels.phi(u_prev.hi)? * x_prev * (1.0 + ROUNDING);
    Ok((Interval::new(lo.min(hi), hi), x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Decaying,
    Window,
    EscapedAbove,
    DomainViolated,
    Undecided,
}

impl Regime {
    pub fn is_decisive(self) -> bool {
        matches!(self, Regime::Decaying | Regime::EscapedAbove | Regime::DomainViolated)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelBound {
    pub level: u32,
    pub u: Interval,
    pub x_hi: f64,
    pub regime: Regime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTrace {
    pub levels: Vec<LevelBound>,
}

impl BoundTrace {
    pub fn last(&self) -> &LevelBound {
        self.levels.last().expect("trace has level 0")
    }

    pub fn regime(&self) -> Regime {
        self.last().regime
    }

    /// Lower bound on `û_n`, if level `n` was reached with a finite bound.
    pub fn u_lo(&self, n: u32) -> Option<f64> {
        self.levels.get(n as usize).filter(|l| l.regime != Regime::DomainViolated).map(|l| l.u.lo)
    }

    pub fn u_hi(&self, n: u32) -> Option<f64> {
        self.levels.get(n as usize).filter(|l| l.regime != Regime::DomainViolated).map(|l| l.u.hi)
    }
}

fn classify(u: Interval, x: f64, win: &EpsilonWindow) -> Regime {
    if u.hi < 1.0 - SLACK {
        Regime::Decaying
    } else if u.lo > win.v_bar + SLACK {
        Regime::EscapedAbove
    } else if u.lo >= 1.0 - SLACK && u.hi <= win.v_bar + SLACK && x < win.w_bar {
        Regime::Window
    } else {
        Regime::Undecided
    }
}

/// Iterate [`recurrence_step`] until a decisive regime or `n_max`.
pub fn propagate_and_classify(u0: Interval, x0: f64, win: &EpsilonWindow, n_max: u32) -> BoundTrace {
    propagate(u0, x0, win, n_max, true)
}

fn propagate(u0: Interval, x0: f64, win: &EpsilonWindow, n_max: u32, stop: bool) -> BoundTrace {
    let ker = win.kernels();
    let mut levels = vec![LevelBound { level: 0, u: u0, x_hi: x0, regime: classify(u0, x0, win) }];
    let (mut u, mut x) = (u0, x0);
    for n in 1..=n_max {
        if stop && levels.last().is_some_and(|l| l.regime.is_decisive()) {
            break;
        }
        match recurrence_step(u, x, &ker) {
            Ok((nu, nx)) => {
                u = nu;
                x = nx;
                levels.push(LevelBound { level: n, u, x_hi: x, regime: classify(u, x, win) });
            }
            Err(_) => {
                levels.push(LevelBound {
                    level: n,
                    u: Interval::new(f64::NAN, f64::INFINITY),
                    x_hi: f64::INFINITY,
                    regime: Regime::DomainViolated,
                });
                break;
            }
        }
    }
    BoundTrace { levels }
}

/// `β ↦ (û₀(β), X₀(β))`.
pub trait ModelFamily: Sync {
    fn eval(&self, beta: f64) -> Result<(f64, f64)>;
}

impl<F: Fn(f64) -> Result<(f64, f64)> + Sync> ModelFamily for F {
    fn eval(&self, beta: f64) -> Result<(f64, f64)> {
        self(beta)
    }
}

/// Spectral `(û₀, X₀)` at fixed `(m, a, b)`; diagonalized once at the
/// smallest β that will be queried.
pub struct SpectralFamily {
    pub params: ModelParams,
    pub solution: SpectralSolution,
}

impl SpectralFamily {
    pub fn new(mass: f64, a: f64, b: f64, beta_min: f64) -> Result<Self> {
        let params = ModelParams::new(mass, a, b, beta_min)?;
        let solution = build_and_diagonalize(&params, 64)?;
        Ok(Self { params, solution })
    }
}

impl ModelFamily for SpectralFamily {
    fn eval(&self, beta: f64) -> Result<(f64, f64)> {
        if beta < self.params.beta {
            return Err(Error::Domain(format!(
                "beta {beta} below the diagonalization point {}",
                self.params.beta
            )));
        }
        let th = self.solution.thermal(beta)?;
        Ok((th.u_hat(0.0), th.x0()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelBracket {
    pub level: u32,
    /// Certified range of the first β with `û_n = 1`.
    pub beta_minus: Interval,
    /// Certified range of the first β with `û_n = v̄`.
    pub beta_plus: Interval,
    /// `[β_n^−, β_n^+]` outer bracket after intersection with the previous level.
    pub nested: Interval,
    /// Whether the raw bracket was already inside the previous one.
    pub nested_natively: bool,
    /// Whether the lower-bound trace reached 1 (resp. v̄) inside the search
    /// interval; when false the upper edge is the search limit.
    pub minus_resolved: bool,
    pub plus_resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaBrackets {
    pub beta0_minus: f64,
    pub beta0_plus: f64,
    pub levels: Vec<LevelBracket>,
    pub beta_star: Interval,
    pub relative_width: f64,
    /// Several sign changes of `û₀ − 1` or `û₀ − v̄` were seen on the scan grid.
    pub ambiguous: bool,
    pub tol: f64,
}

/// Bisection for the first β in `[lo, hi]` where `pred` becomes true,
/// assuming `pred(lo)` false and `pred(hi)` true.
fn bisect(mut lo: f64, mut hi: f64, tol: f64, pred: impl Fn(f64) -> Result<bool>) -> Result<f64> {
    while hi - lo > tol * hi {
        let mid = 0.5 * (lo + hi);
        if pred(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

fn crossing(
    family: &dyn ModelFamily,
    level: f64,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<f64> {
    let (ul, _) = family.eval(lo)?;
    let (uh, _) = family.eval(hi)?;
    if !(ul < level && uh >= level) {
        return Err(Error::BracketNotFound(format!(
            "u_hat0 does not cross {level} on [{lo}, {hi}] (values {ul}, {uh})"
        )));
    }
    bisect(lo, hi, tol, |b| Ok(family.eval(b)?.0 >= level))
}

/// Certified brackets for the first crossings of 1 and v̄ at every level,
/// and the β* bracket they imply.
pub fn find_beta_brackets(
    family: &dyn ModelFamily,
    win: &EpsilonWindow,
    search: (f64, f64),
    tol: f64,
    n_max: u32,
    exec: Exec,
) -> Result<BetaBrackets> {
    let (lo, hi) = search;
    let b0m = crossing(family, 1.0, lo, hi, tol)?;
    let b0p = crossing(family, win.v_bar, lo, hi, tol)?;
    let grid = 24;
    let vals = exec.map_range(grid + 1, |i| {
        family.eval(lo * (hi / lo).powf(i as f64 / grid as f64)).map(|v| v.0)
    });
    let vals = vals.into_iter().collect::<Result<Vec<_>>>()?;
    let changes = |level: f64| vals.windows(2).filter(|w| (w[0] < level) != (w[1] < level)).count();
    let ambiguous = changes(1.0) > 1 || changes(win.v_bar) > 1;

    let trace_at = |beta: f64| -> Result<BoundTrace> {
        let (u, x) = family.eval(beta)?;
        Ok(propagate(Interval::point(u), x, win, n_max, false))
    };
    let reaches = |n: u32, level: f64, upper: bool| {
        move |beta: f64| -> Result<bool> {
            let t = trace_at(beta)?;
            let v = if upper { t.u_hi(n) } else { t.u_lo(n) };
            // an unbounded upper trace certainly reaches any level; an
            // unbounded lower trace certifies nothing
            Ok(match v {
                Some(v) => v >= level,
                None => upper,
            })
        }
    };
    let first = |n: u32, level: f64, upper: bool, a: f64, b: f64| -> Result<Option<f64>> {
        let pred = reaches(n, level, upper);
        if pred(a)? {
            return Ok(Some(a));
        }
        if !pred(b)? {
            return Ok(None);
        }
        bisect(a, b, tol, pred).map(Some)
    };

    let mut levels = Vec::new();
    let mut outer = Interval::new(b0m, b0p);
    for n in 1..=n_max {
        let span_hi = hi;
        let bm_lo = first(n, 1.0, true, lo, span_hi)?.unwrap_or(span_hi);
        let bm_hi = first(n, 1.0, false, bm_lo, span_hi)?;
        let bp_lo = first(n, win.v_bar, true, lo, span_hi)?.unwrap_or(span_hi);
        let bp_hi = first(n, win.v_bar, false, bp_lo, span_hi)?;
        let (minus_resolved, plus_resolved) = (bm_hi.is_some(), bp_hi.is_some());
        let (bm_hi, bp_hi) = (bm_hi.unwrap_or(span_hi), bp_hi.unwrap_or(span_hi));
        let raw = Interval::new(bm_lo, bp_hi);
        let nested_natively = raw.lo >= outer.lo - tol * outer.lo && raw.hi <= outer.hi + tol * outer.hi;
        outer = Interval::new(raw.lo.max(outer.lo), raw.hi.min(outer.hi));
        levels.push(LevelBracket {
            level: n,
            beta_minus: Interval::new(bm_lo, bm_hi),
            beta_plus: Interval::new(bp_lo, bp_hi),
            nested: outer,
            nested_natively,
            minus_resolved,
            plus_resolved,
        });
    }
    Ok(BetaBrackets {
        beta0_minus: b0m,
        beta0_plus: b0p,
        levels,
        beta_star: outer,
        relative_width: outer.width() / outer.lo,
        ambiguous,
        tol,
    })
}

/// Decay below the bracket: `û_n ≤ K κ^{−nδ}` with `K = K₀ v̄`,
/// `K₀ = Π_n [1 − (1 − κ^{−δ})û_{n−1}]^{−1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCheck {
    pub beta: f64,
    pub k_bound: f64,
    /// `max_n û_n κ^{nδ}` over the propagated upper bounds.
    pub k_fitted: f64,
    pub decay_rate: f64,
    pub pass: bool,
}

pub fn decay_check(family: &dyn ModelFamily, win: &EpsilonWindow, beta: f64, n_max: u32) -> Result<DecayCheck> {
    let ker = win.kernels();
    let (u, x) = family.eval(beta)?;
    let t = propagate(Interval::point(u), x, win, n_max, false);
    let c = ker.contraction();
    let mut k0 = 1.0;
    let mut k_fitted: f64 = 0.0;
    let mut pass = true;
    for l in &t.levels {
        if l.regime == Regime::DomainViolated {
            pass = false;
            break;
        }
        k_fitted = k_fitted.max(l.u.hi * c.powi(-(l.level as i32)));
    }
    for l in t.levels.iter().take(t.levels.len().saturating_sub(1)) {
        k0 /= 1.0 - (1.0 - c) * l.u.hi;
    }
    let k_bound = k0 * win.v_bar;
    let n = t.levels.len() - 1;
    let decay_rate = if n > 0 && t.levels[n].u.hi > 0.0 {
        (t.levels[n].u.hi / t.levels[n - 1].u.hi).max(0.0)
    } else {
        0.0
    };
    pass &= k_fitted <= k_bound * (1.0 + SLACK);
    Ok(DecayCheck { beta, k_bound, k_fitted, decay_rate, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSearch {
    pub window: EpsilonWindow,
    pub mass: f64,
    pub gamma: f64,
    /// Chosen quartic coefficient, if any passed.
    pub b: Option<f64>,
    /// Largest β for which `û₀ ≤ v̄` is not excluded by the lower bound.
    pub beta_cap: f64,
    pub checks: Vec<BoundCheck>,
    pub feasible: bool,
}

impl ParameterSearch {
    pub fn params(&self) -> Option<ModelParams> {
        self.b.map(|b| ModelParams { mass: self.mass, a: -self.gamma * b, b, beta: self.beta_cap })
    }
}

/// `sup_β 24 b ū(β)⁴ / (β f(3β/(mγ)))` over `(0, β_cap]`, with
/// `ū = min(v̄, (β|a|/8b)(1 + √(1 + 16b/(βa²))))`.
fn x0_bound_sup(mass: f64, gamma: f64, b: f64, v_bar: f64, beta_cap: f64) -> f64 {
    let a = gamma * b;
    (0..=600)
        .map(|i| beta_cap * 10f64.powf(-8.0 * (1.0 - i as f64 / 600.0)))
        .map(|beta| {
            let u_up = (beta * a / (8.0 * b)) * (1.0 + (1.0 + 16.0 * b / (beta * a * a)).sqrt());
            let u = u_up.min(v_bar);
            24.0 * b * u.powi(4) / (beta * f_decay(3.0 * beta / (mass * gamma)))
        })
        .fold(0.0, f64::max)
}

/// Search `(m, a, b)` satisfying the hypotheses of the window argument.
///
/// γ = |a|/b is fixed at `gamma`, m is chosen so that `mγ² = 72 v̄` (twice
/// the threshold), and b is halved from 1 down to [`B_FLOOR`] until the X₀
/// bound stays below w̄ for every β where `û₀ ≤ v̄` is possible.
pub fn parameter_search(kappa: u64, delta: f64, epsilon: f64, gamma: f64) -> Result<ParameterSearch> {
    let window = epsilon_window(kappa, delta, epsilon)?;
    let v_bar = window.v_bar;
    let mass = 72.0 * v_bar / (gamma * gamma);
    // lower bound (mγ²/36)(1 − e^{−3β/(mγ)}) exceeds v̄ beyond this β
    let ratio = 36.0 * v_bar / (mass * gamma * gamma);
    let beta_cap = -(mass * gamma / 3.0) * (1.0 - ratio).ln();
    let mut checks = vec![BoundCheck::le("36 v_bar < m gamma^2 / 2", 36.0 * v_bar, mass * gamma * gamma / 2.0, 1e-12)];
    let mut b = 1.0;
    let mut chosen = None;
    let mut best = f64::INFINITY;
    while b >= B_FLOOR {
        let sup = x0_bound_sup(mass, gamma, b, v_bar, beta_cap);
        best = best.min(sup);
        if sup < window.w_bar {
            chosen = Some(b);
            checks.push(BoundCheck::le("sup X0 bound < w_bar", sup, window.w_bar, 0.0));
            break;
        }
        b /= 2.0;
    }
    if chosen.is_none() {
        checks.push(BoundCheck::le("min over b of sup X0 bound < w_bar", best, window.w_bar, 0.0));
    }
    if let Some(b) = chosen {
        let p = ModelParams::new(mass, -gamma * b, b, beta_cap)?;
        let sol = build_and_diagonalize(&p, 64)?;
        let r = mass * sol.gap().powi(2);
        checks.push(BoundCheck::le("rigidity m gap^2 <= 1", r, 1.0, 0.0));
    }
    let feasible = chosen.is_some() && checks.iter().all(|c| c.pass);
    Ok(ParameterSearch { window, mass, gamma, b: chosen, beta_cap, checks, feasible })
}

/// [`parameter_search`] at γ = 20, turning an unsuccessful search into
/// [`Error::Infeasible`].
pub fn select_parameters(kappa: u64, delta: f64, epsilon: f64) -> Result<(ModelParams, ParameterSearch)> {
    let s = parameter_search(kappa, delta, epsilon, 20.0)?;
    match (s.feasible, s.params()) {
        (true, Some(p)) => Ok((p, s)),
        _ => {
            let failed: Vec<String> = s
                .checks
                .iter()
                .filter(|c| !c.pass)
                .map(|c| format!("{}: {:.6e} vs {:.6e}", c.name, c.lhs, c.rhs))
                .collect();
            Err(Error::Infeasible(failed.join("; ")))
        }
    }
}

/// `(2k)! / (k! 2ᵏ β*ᵏ)`.
pub fn predicted_limit(k: u32, beta_star: f64) -> f64 {
    let f = |n: u32| (1..=n).map(f64::from).product::<f64>();
    f(2 * k) / (f(k) * 2f64.powi(k as i32) * beta_star.powi(k as i32))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub kappa: u64,
    pub delta: f64,
    pub epsilon: f64,
    pub v_bar: f64,
    pub w_bar: f64,
    pub params: Option<ModelParams>,
    pub beta_brackets: Vec<LevelBracket>,
    pub beta_star: Option<Interval>,
    pub checks: Vec<BoundCheck>,
}

impl Certificate {
    pub fn new(win: &EpsilonWindow, params: Option<ModelParams>, brackets: Option<&BetaBrackets>, mut checks: Vec<BoundCheck>) -> Self {
        checks.extend(win.invariants());
        Self {
            kappa: win.kappa,
            delta: win.delta,
            epsilon: win.epsilon,
            v_bar: win.v_bar,
            w_bar: win.w_bar,
            params,
            beta_brackets: brackets.map(|b| b.levels.clone()).unwrap_or_default(),
            beta_star: brackets.map(|b| b.beta_star),
            checks,
        }
    }
}
