use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-10;

/// Class shares `pi` and item-response probabilities `theta` for a latent
/// class model. `theta` is laid out as J x K x R with R the largest number of
/// levels; cells beyond an item's own level count are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcaParams {
    pub pi: Vec<f64>,
    pub theta: Vec<f64>,
    levels: Vec<usize>,
    max_levels: usize,
}

impl LcaParams {
    pub fn new(pi: Vec<f64>, theta: Vec<f64>, levels: Vec<usize>) -> Result<Self> {
        let max_levels = levels.iter().copied().max().unwrap_or(0);
        let p = LcaParams {
            pi,
            theta,
            levels,
            max_levels,
        };
        p.validate()?;
        Ok(p)
    }

    /// Uniform shares and uniform response probabilities.
    pub fn uniform(k: usize, levels: &[usize]) -> Self {
        let max_levels = levels.iter().copied().max().unwrap_or(0);
        let mut theta = vec![0.0; levels.len() * k * max_levels];
        for (j, &r) in levels.iter().enumerate() {
            for c in 0..k {
                let base = (j * k + c) * max_levels;
                theta[base..base + r].fill(1.0 / r as f64);
            }
        }
        LcaParams {
            pi: vec![1.0 / k as f64; k],
            theta,
            levels: levels.to_vec(),
            max_levels,
        }
    }

    pub(crate) fn from_parts_unchecked(pi: Vec<f64>, theta: Vec<f64>, levels: Vec<usize>) -> Self {
        let max_levels = levels.iter().copied().max().unwrap_or(0);
        LcaParams {
            pi,
            theta,
            levels,
            max_levels,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.pi.len()
    }

    pub fn num_items(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn max_levels(&self) -> usize {
        self.max_levels
    }

    #[inline]
    pub fn theta_index(&self, j: usize, k: usize, r: usize) -> usize {
        (j * self.pi.len() + k) * self.max_levels + r
    }

    #[inline]
    pub fn theta(&self, j: usize, k: usize, r: usize) -> f64 {
        self.theta[self.theta_index(j, k, r)]
    }

    /// Response probabilities of item `j` in class `k` over its active levels.
    pub fn theta_row(&self, j: usize, k: usize) -> &[f64] {
        let base = self.theta_index(j, k, 0);
        &self.theta[base..base + self.levels[j]]
    }

    /// Most likely level of item `j` in class `k`.
    pub fn modal_level(&self, j: usize, k: usize) -> usize {
        let row = self.theta_row(j, k);
        let mut best = 0;
        for (r, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = r;
            }
        }
        best
    }

    /// Reorders classes so that new class `k` is old class `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.num_classes();
        let pi = perm.iter().map(|&p| self.pi[p]).collect();
        let mut theta = vec![0.0; self.theta.len()];
        for j in 0..self.num_items() {
            for (new, &old) in perm.iter().enumerate() {
                let src = (j * k + old) * self.max_levels;
                let dst = (j * k + new) * self.max_levels;
                theta[dst..dst + self.max_levels]
                    .copy_from_slice(&self.theta[src..src + self.max_levels]);
            }
        }
        LcaParams {
            pi,
            theta,
            levels: self.levels.clone(),
            max_levels: self.max_levels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.pi.len();
        if k == 0 {
            return Err(Error::InvalidInput(
                "latent class model needs at least one class".into(),
            ));
        }
        if self.theta.len() != self.levels.len() * k * self.max_levels {
            return Err(Error::Dimension(format!(
                "theta has {} cells, expected {}",
                self.theta.len(),
                self.levels.len() * k * self.max_levels
            )));
        }
        if self
            .pi
            .iter()
            .chain(&self.theta)
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::InvalidInput(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        check_simplex(&self.pi, "pi")?;
        for j in 0..self.levels.len() {
            for c in 0..k {
                check_simplex(self.theta_row(j, c), "theta")?;
                let base = self.theta_index(j, c, 0);
                if self.theta[base + self.levels[j]..base + self.max_levels]
                    .iter()
                    .any(|&v| v != 0.0)
                {
                    return Err(Error::InvalidInput(format!(
                        "theta padding for item {j} is not zero"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_simplex(v: &[f64], what: &str) -> Result<()> {
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidInput(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}
