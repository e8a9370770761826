//! Divided differences of `t ↦ exp(−β t)`, evaluated without cancellation.

/// `(1 − e^{−d}) / d`, continuous at 0.
pub(crate) fn phi1(d: f64) -> f64 {
    if d.abs() < 1e-8 {
        1.0 - d / 2.0
    } else {
        -(-d).exp_m1() / d
    }
}

/// `∫₀¹ t^k e^{−t m} dt` for `m ≥ 0`.
fn moment(k: u32, m: f64) -> f64 {
    if m < 2.0 {
        let mut term = 1.0;
        let mut sum = 0.0;
        for j in 0..40u32 {
            let c = term / (k + j + 1) as f64;
            sum += c;
            if c.abs() < 1e-18 * sum.abs() {
                break;
            }
            term *= -m / (j + 1) as f64;
        }
        sum
    } else {
        let mut fact = 1.0;
        let mut partial = 0.0;
        let mut pw = 1.0;
        for j in 0..=k {
            if j > 0 {
                fact *= j as f64;
                pw *= m / j as f64;
            }
            partial += pw;
        }
        fact / m.powi(k as i32 + 1) * (1.0 - (-m).exp() * partial)
    }
}

/// `−f[x, y]` for `f(t) = e^{−β t}`, i.e. `(e^{−βx} − e^{−βy})/(y − x) > 0`.
pub(crate) fn dd2(beta: f64, x: f64, y: f64) -> f64 {
    let lo = x.min(y);
    (-beta * lo).exp() * beta * phi1(beta * (x - y).abs())
}

/// Second divided difference `f[x, y, z]` of `f(t) = e^{−β t}`.
pub(crate) fn dd3(beta: f64, x: f64, y: f64, z: f64) -> f64 {
    let mut e = [x, y, z];
    e.sort_by(|a, b| a.total_cmp(b));
    let d1 = beta * (e[1] - e[0]);
    let d2 = beta * (e[2] - e[0]);
    beta * beta * (-beta * e[0]).exp() * g(d1, d2)
}

/// `g[0, d1, d2]` for `g(t) = e^{−t}`, with `0 ≤ d1 ≤ d2`.
fn g(d1: f64, d2: f64) -> f64 {
    let h = d2 - d1;
    if h < 0.05 {
        let m = 0.5 * (d1 + d2);
        let h2 = h * h;
        moment(1, m) + moment(3, m) * h2 / 24.0 + moment(5, m) * h2 * h2 / 1920.0
    } else {
        (phi1(d1) - phi1(d2)) / h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hermite–Genocchi: f[x0,x1,x2] = β² ∫_{s1+s2≤1} e^{−β(x0 + s1(x1−x0) + s2(x2−x0))}.
    fn quadrature(beta: f64, x: [f64; 3]) -> f64 {
        let n = 1500;
        let h = 1.0 / n as f64;
        let mut sum = 0.0;
        // midpoint rule in (u, v) with s1 = u(1−v), s2 = u v, Jacobian u
        for i in 0..n {
            let u = (i as f64 + 0.5) * h;
            for j in 0..n {
                let v = (j as f64 + 0.5) * h;
                let (s1, s2) = (u * (1.0 - v), u * v);
                let t = x[0] + s1 * (x[1] - x[0]) + s2 * (x[2] - x[0]);
                sum += u * (-beta * t).exp();
            }
        }
        beta * beta * sum * h * h
    }

    #[test]
    fn matches_quadrature() {
        let cases = [
            (1.0, [0.0, 0.0, 0.0]),
            (2.0, [0.1, 0.3, 1.7]),
            (4.0, [1.0, 1.01, 1.02]),
            (0.5, [3.0, 0.2, 0.2]),
            (3.0, [0.0, 0.5, 0.52]),
            (10.0, [0.0, 0.001, 2.0]),
        ];
        for (beta, x) in cases {
            let a = dd3(beta, x[0], x[1], x[2]);
            let b = quadrature(beta, x);
            assert!((a - b).abs() < 2e-5 * b, "{beta} {x:?}: {a} vs {b}");
        }
    }

    #[test]
    fn matches_recursive_definition_when_separated() {
        let beta = 1.3;
        let (x, y, z) = (0.2, 1.1, 2.9);
        let naive = (dd2(beta, x, y) - dd2(beta, y, z)) / (z - x);
        assert!((dd3(beta, x, y, z) - naive).abs() < 1e-13);
        let e = |t: f64| (-beta * t).exp();
        assert!((dd2(beta, x, y) - (e(x) - e(y)) / (y - x)).abs() < 1e-14);
    }

    #[test]
    fn continuous_across_branch_switch() {
        let beta = 1.0;
        for base in [0.0, 1.0, 5.0] {
            let below = dd3(beta, 0.0, base, base + 0.0499999);
            let above = dd3(beta, 0.0, base, base + 0.0500001);
            assert!((below - above).abs() < 1e-6 * below.abs());
        }
        // coincident points: f''(x)/2
        let x = 0.7;
        assert!((dd3(2.0, x, x, x) - 2.0 * (-2.0 * x).exp()).abs() < 1e-14);
    }

    #[test]
    fn moments_agree_across_branches() {
        for k in [1, 3, 5] {
            let a = moment(k, 1.999_999_9);
            let b = moment(k, 2.000_000_1);
            // the arguments differ by 2e-7, so allow for the slope
            assert!((a - b).abs() < 3e-7 * a);
        }
        assert!((moment(1, 0.0) - 0.5).abs() < 1e-16);
    }
}
