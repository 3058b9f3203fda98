use serde::{Deserialize, Serialize};

use crate::assign::hungarian;
use crate::error::{Error, Result};
use crate::wolca::LcaEstimates;

/// Share of intervals `[lower, upper]` containing their truth.
pub fn metric_coverage(lower: &[f64], upper: &[f64], truth: &[f64]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::InvalidInput(
            "coverage of an empty set of intervals".into(),
        ));
    }
    if lower.len() != truth.len() || upper.len() != truth.len() {
        return Err(Error::Dimension("interval and truth lengths differ".into()));
    }
    let hit = truth
        .iter()
        .zip(lower.iter().zip(upper))
        .filter(|(t, (l, u))| *l <= *t && *t <= *u)
        .count();
    Ok(hit as f64 / truth.len() as f64)
}

/// True class structure: shares and J x K x R level probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcaTruth {
    pub pi: Vec<f64>,
    pub theta: Vec<f64>,
    pub levels: Vec<usize>,
}

impl LcaTruth {
    fn max_levels(&self) -> usize {
        self.levels.iter().copied().max().unwrap_or(0)
    }

    fn theta(&self, j: usize, k: usize, r: usize) -> f64 {
        self.theta[(j * self.pi.len() + k) * self.max_levels() + r]
    }

    fn modal_level(&self, j: usize, k: usize) -> usize {
        (0..self.levels[j]).fold(0, |b, r| {
            if self.theta(j, k, r) > self.theta(j, k, b) {
                r
            } else {
                b
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LcaMetrics {
    pub k_abs_bias: f64,
    pub pi_abs_bias: f64,
    pub theta_abs_bias: f64,
    pub pi_ci_width: f64,
    pub theta_ci_width: f64,
    pub pi_coverage: f64,
    pub theta_coverage: f64,
}

/// Estimated class matched to each true class, minimizing the total mean
/// absolute difference of level probabilities. `None` when there are fewer
/// estimated classes than true ones.
pub fn match_classes(truth: &LcaTruth, est: &LcaEstimates) -> Vec<Option<usize>> {
    let kt = truth.pi.len();
    let p = &est.params;
    let ke = p.num_classes();
    let cells = (truth.levels.len() * truth.max_levels()).max(1) as f64;
    let mut cost = vec![0.0; kt * ke];
    for a in 0..kt {
        for b in 0..ke {
            let mut s = 0.0;
            for (j, &r) in truth.levels.iter().enumerate() {
                for rr in 0..r {
                    s += (truth.theta(j, a, rr) - p.theta(j, b, rr)).abs();
                }
            }
            cost[a * ke + b] = s / cells;
        }
    }
    hungarian(&cost, kt, ke)
}

/// Bias, interval width and coverage of class shares and of the modal
/// level probability of every item in every true class.
pub fn lca_metrics(truth: &LcaTruth, est: &LcaEstimates) -> Result<LcaMetrics> {
    let p = &est.params;
    if p.levels() != truth.levels.as_slice() {
        return Err(Error::Dimension(
            "estimate and truth have different item levels".into(),
        ));
    }
    let kt = truth.pi.len();
    let matched = match_classes(truth, est);

    let mut pi_bias = 0.0;
    let mut pi_width = Vec::new();
    let (mut pi_lo, mut pi_hi, mut pi_truth) = (Vec::new(), Vec::new(), Vec::new());
    for (k, m) in matched.iter().enumerate() {
        pi_truth.push(truth.pi[k]);
        match *m {
            Some(e) => {
                pi_bias += (p.pi[e] - truth.pi[k]).abs();
                pi_width.push(est.pi_upper[e] - est.pi_lower[e]);
                pi_lo.push(est.pi_lower[e]);
                pi_hi.push(est.pi_upper[e]);
            }
            None => {
                pi_bias += truth.pi[k];
                pi_lo.push(f64::NAN);
                pi_hi.push(f64::NAN);
            }
        }
    }

    let mut theta_bias = 0.0;
    let mut theta_width = Vec::new();
    let (mut th_lo, mut th_hi, mut th_truth) = (Vec::new(), Vec::new(), Vec::new());
    let nj = truth.levels.len();
    for k in 0..kt {
        for j in 0..nj {
            let r = truth.modal_level(j, k);
            let t = truth.theta(j, k, r);
            th_truth.push(t);
            match matched[k] {
                Some(e) => {
                    let idx = p.theta_index(j, e, r);
                    theta_bias += (p.theta[idx] - t).abs();
                    theta_width.push(est.theta_upper[idx] - est.theta_lower[idx]);
                    th_lo.push(est.theta_lower[idx]);
                    th_hi.push(est.theta_upper[idx]);
                }
                None => {
                    theta_bias += t;
                    th_lo.push(f64::NAN);
                    th_hi.push(f64::NAN);
                }
            }
        }
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    Ok(LcaMetrics {
        k_abs_bias: (p.num_classes() as f64 - kt as f64).abs(),
        pi_abs_bias: pi_bias / kt as f64,
        theta_abs_bias: theta_bias / (kt * nj) as f64,
        pi_ci_width: mean(&pi_width),
        theta_ci_width: mean(&theta_width),
        pi_coverage: metric_coverage(&pi_lo, &pi_hi, &pi_truth)?,
        theta_coverage: metric_coverage(&th_lo, &th_hi, &th_truth)?,
    })
}

/// Mean absolute difference between estimated and true weights.
pub fn weight_abs_bias(estimated: &[f64], truth: &[f64]) -> f64 {
    estimated
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / truth.len().max(1) as f64
}
