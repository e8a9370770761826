//! Batch-means bookkeeping, jackknife errors and small least-squares fits.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub err: f64,
}

impl Estimate {
    pub fn new(mean: f64, err: f64) -> Self {
        Self { mean, err }
    }

    pub fn exact(mean: f64) -> Self {
        Self { mean, err: 0.0 }
    }

    /// Distance to `target` in units of the combined standard error.
    pub fn z_score(&self, target: f64, target_err: f64) -> f64 {
        let s = (self.err * self.err + target_err * target_err).sqrt();
        if s == 0.0 {
            if self.mean == target { 0.0 } else { f64::INFINITY }
        } else {
            (self.mean - target).abs() / s
        }
    }

    /// True when `mean ≥ −k·err`, i.e. non-negative within `k` standard errors.
    pub fn nonnegative_within(&self, k: f64) -> bool {
        self.mean >= -k * self.err
    }
}

/// Per-batch averages of a fixed list of primitive observables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchTable {
    pub rows: Vec<Vec<f64>>,
}

impl BatchTable {
    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert!(self.rows.first().is_none_or(|r| r.len() == row.len()));
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn extend(&mut self, other: BatchTable) {
        self.rows.extend(other.rows);
    }

    /// Column means over all batches.
    pub fn means(&self) -> Vec<f64> {
        let b = self.len() as f64;
        let mut out = vec![0.0; self.width()];
        for r in &self.rows {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= b);
        out
    }

    /// Jackknife estimate of `f(column means)` over batches.
    pub fn jackknife<F: Fn(&[f64]) -> f64>(&self, f: F) -> Estimate {
        let b = self.len();
        let full = self.means();
        let center = f(&full);
        if b < 2 {
            return Estimate::new(center, f64::INFINITY);
        }
        let bf = b as f64;
        let mut loo = vec![0.0; full.len()];
        let mut vals = Vec::with_capacity(b);
        for r in &self.rows {
            for ((l, m), v) in loo.iter_mut().zip(&full).zip(r) {
                *l = (m * bf - v) / (bf - 1.0);
            }
            vals.push(f(&loo));
        }
        let avg = vals.iter().sum::<f64>() / bf;
        let var = vals.iter().map(|v| (v - avg).powi(2)).sum::<f64>() * (bf - 1.0) / bf;
        Estimate::new(center, var.sqrt())
    }

    pub fn column(&self, i: usize) -> Estimate {
        self.jackknife(|m| m[i])
    }
}

/// Mean and standard error of independent samples.
pub fn mean_and_stderr(x: &[f64]) -> Estimate {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return Estimate::new(mean, f64::INFINITY);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Estimate::new(mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_err: f64,
}

/// Weighted least squares `y ≈ intercept + slope·x` with weights `1/σ²`.
/// With `sigma = None` all points get unit weight and the slope error is
/// taken from the residual scatter.
pub fn line_fit(x: &[f64], y: &[f64], sigma: Option<&[f64]>) -> LineFit {
    let w: Vec<f64> = match sigma {
        Some(s) => s.iter().map(|s| 1.0 / (s * s)).collect(),
        None => vec![1.0; x.len()],
    };
    let sw: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * x * x).sum();
    let sxy: f64 = w.iter().zip(x).zip(y).map(|((w, x), y)| w * x * y).sum();
    let det = sw * sxx - sx * sx;
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / sw;
    let slope_err = match sigma {
        Some(_) => (sw / det).sqrt(),
        None => {
            let n = x.len() as f64;
            let rss: f64 = x
                .iter()
                .zip(y)
                .map(|(x, y)| (y - intercept - slope * x).powi(2))
                .sum();
            (rss / (n - 2.0).max(1.0) * sw / det).sqrt()
        }
    };
    LineFit { slope, intercept, slope_err }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jackknife_of_linear_function_is_batch_error() {
        let mut t = BatchTable::default();
        for v in [1.0, 2.0, 4.0, 7.0] {
            t.push(vec![v, 2.0 * v]);
        }
        let direct = mean_and_stderr(&[1.0, 2.0, 4.0, 7.0]);
        let jk = t.column(0);
        assert!((jk.mean - direct.mean).abs() < 1e-15);
        assert!((jk.err - direct.err).abs() < 1e-14);
        let ratio = t.jackknife(|m| m[1] / m[0]);
        assert!((ratio.mean - 2.0).abs() < 1e-15 && ratio.err < 1e-14);
    }

    #[test]
    fn exact_line_is_recovered() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|x| 1.5 - 0.25 * x).collect();
        let f = line_fit(&x, &y, None);
        assert!((f.slope + 0.25).abs() < 1e-14 && (f.intercept - 1.5).abs() < 1e-14);
        assert!(f.slope_err < 1e-12);
        let w = line_fit(&x, &y, Some(&[0.1; 4]));
        assert!((w.slope + 0.25).abs() < 1e-14);
        assert!((w.slope_err - 0.1 / 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn z_score_and_sign_test() {
        let e = Estimate::new(1.0, 0.3);
        assert!((e.z_score(1.4, 0.4) - 0.8).abs() < 1e-12);
        assert!(Estimate::new(-0.5, 0.2).nonnegative_within(3.0));
        assert!(!Estimate::new(-0.7, 0.2).nonnegative_within(3.0));
    }
}
