//! Hierarchical structure on the non-negative integers.
//!
//! Level-`n` blocks are the integer intervals `[κⁿ s, κⁿ (s+1) - 1]`. Two sites
//! interact through the smallest level whose block contains both of them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest coupling matrix we are willing to build.
pub const MAX_MATRIX_SIZE: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HierarchyParams {
    /// Branching number κ.
    pub kappa: u64,
    /// Decay exponent δ of the interaction.
    pub delta: f64,
    /// Coupling strength θ; `κ^δ - 1` under the standard normalization.
    pub theta: f64,
    /// Coupling constant J* matching the normalization of θ.
    pub j_star: f64,
}

impl HierarchyParams {
    /// Normalized parameters: θ = κ^δ − 1 and J* = θ / (1 − κ^{−1−δ}).
    pub fn new(kappa: u64, delta: f64) -> Result<Self> {
        if kappa < 2 {
            return Err(Error::Domain(format!("branching number must be >= 2, got {kappa}")));
        }
        if !(delta > 0.0 && delta < 0.5) {
            return Err(Error::Domain(format!("delta must lie in (0, 1/2), got {delta}")));
        }
        let k = kappa as f64;
        let theta = k.powf(delta) - 1.0;
        let j_star = theta / (1.0 - k.powf(-1.0 - delta));
        Ok(Self { kappa, delta, theta, j_star })
    }

    /// The J = 0 variant: same geometry, no interaction.
    pub fn decoupled(self) -> Self {
        Self { theta: 0.0, j_star: 0.0, ..self }
    }

    pub fn is_decoupled(&self) -> bool {
        self.theta == 0.0
    }

    /// κ^n with overflow checking.
    pub fn block_size(&self, n: u32) -> Result<u64> {
        self.kappa
            .checked_pow(n)
            .ok_or_else(|| Error::Range(format!("{}^{} overflows u64", self.kappa, n)))
    }

    /// Level-`n` block with index `s`.
    pub fn block(&self, n: u32, s: u64) -> Result<Block> {
        let size = self.block_size(n)?;
        let start = size
            .checked_mul(s)
            .ok_or_else(|| Error::Range(format!("block ({n}, {s}) start overflows u64")))?;
        start
            .checked_add(size - 1)
            .ok_or_else(|| Error::Range(format!("block ({n}, {s}) end overflows u64")))?;
        Ok(Block { level: n, index: s, start, size })
    }

    /// Smallest level whose block contains both sites.
    pub fn common_level(&self, l: u64, lp: u64) -> u32 {
        let (mut a, mut b, mut n) = (l, lp, 0u32);
        while a != b {
            a /= self.kappa;
            b /= self.kappa;
            n += 1;
        }
        n
    }

    /// Hierarchical distance d = κ^{n(l,l')} − 1.
    pub fn distance(&self, l: u64, lp: u64) -> f64 {
        (self.kappa as f64).powi(self.common_level(l, lp) as i32) - 1.0
    }

    /// Distance together with the pair coupling J (d + 1)^{−1−δ}.
    pub fn distance_and_coupling(&self, l: u64, lp: u64, j: f64) -> (f64, f64) {
        let d = self.distance(l, lp);
        (d, j * (d + 1.0).powf(-1.0 - self.delta))
    }

    /// Weight θ κ^{−m(1+δ)} of the squared level-`m` block sum.
    pub fn level_weight(&self, m: u32) -> f64 {
        self.theta * (self.kappa as f64).powf(-(m as f64) * (1.0 + self.delta))
    }

    /// Interaction part of the level-`n` quadratic form,
    /// `M = −θ Σ_{m=1..n} κ^{−m(1+δ)} B_m`, with `B_m` the 0/1 block indicator.
    /// Single-site diagonal terms are left to the caller.
    pub fn coupling_matrix(&self, n: u32) -> Result<DMatrix<f64>> {
        let size = self.block_size(n)?;
        if size > MAX_MATRIX_SIZE {
            return Err(Error::Range(format!(
                "coupling matrix of size {size} exceeds {MAX_MATRIX_SIZE}"
            )));
        }
        if n == 0 {
            return Ok(DMatrix::zeros(0, 0));
        }
        let size = size as usize;
        Ok(DMatrix::from_fn(size, size, |i, j| {
            let common = self.common_level(i as u64, j as u64).max(1);
            // every level from the common one up to n contributes
            -(common..=n).map(|m| self.level_weight(m)).sum::<f64>()
        }))
    }

    /// Row sum of `−M`: θ Σ_{m=1..n} κ^{−mδ}.
    pub fn coupling_row_sum(&self, n: u32) -> f64 {
        (1..=n)
            .map(|m| self.theta * (self.kappa as f64).powf(-(m as f64) * self.delta))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub level: u32,
    pub index: u64,
    pub start: u64,
    pub size: u64,
}

impl Block {
    pub fn members(&self) -> std::ops::RangeInclusive<u64> {
        self.start..=self.start + self.size - 1
    }

    pub fn contains(&self, l: u64) -> bool {
        l >= self.start && l - self.start < self.size
    }

    /// The κ level-(n−1) blocks this block is the disjoint union of.
    pub fn children(&self, params: &HierarchyParams) -> Vec<Block> {
        if self.level == 0 {
            return Vec::new();
        }
        let k = params.kappa;
        (0..k)
            .map(|i| Block {
                level: self.level - 1,
                index: self.index * k + i,
                start: self.start + i * (self.size / k),
                size: self.size / k,
            })
            .collect()
    }
}
