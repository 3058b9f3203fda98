//! Weighted Bayesian logistic regression of a binary outcome on latent class
//! membership and confounders, fitted once per weight draw and combined.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par::{map_range, ExecMode};
use crate::rng::{derive_seed, rng_from};
use crate::sandwich::{jittered_cholesky, sandwich_adjust};
use crate::stats::{expit, quantile_sorted, std_normal};
use crate::wolca::normalize_weights;

const SEPARATION_LIMIT: f64 = 15.0;

/// Outcome, design matrix with an intercept column, and column names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeDesign {
    pub y: Vec<u8>,
    pub x: Matrix,
    pub names: Vec<String>,
}

impl OutcomeDesign {
    pub fn new(y: Vec<u8>, x: Matrix, names: Vec<String>) -> Result<Self> {
        let d = OutcomeDesign { y, x, names };
        d.validate()?;
        Ok(d)
    }

    /// Intercept, indicators for classes 2..K (class 1 is the reference) and
    /// the confounder columns.
    pub fn from_classes(
        y: Vec<u8>,
        classes: &[usize],
        num_classes: usize,
        confounders: Option<(&Matrix, &[String])>,
    ) -> Result<Self> {
        let n = y.len();
        if classes.len() != n {
            return Err(Error::Dimension(format!(
                "{n} outcomes but {} class labels",
                classes.len()
            )));
        }
        if let Some(&c) = classes.iter().find(|&&c| c >= num_classes) {
            return Err(Error::InvalidInput(format!(
                "class label {c} outside 0..{num_classes}"
            )));
        }
        let extra = confounders.map_or(0, |(m, _)| m.ncols());
        if let Some((m, names)) = confounders {
            if m.nrows() != n || names.len() != m.ncols() {
                return Err(Error::Dimension(
                    "confounder matrix does not match outcomes or names".into(),
                ));
            }
        }
        let p = num_classes + extra;
        let mut x = Matrix::zeros(n, p);
        for i in 0..n {
            x.set(i, 0, 1.0);
            if classes[i] > 0 {
                x.set(i, classes[i], 1.0);
            }
            if let Some((m, _)) = confounders {
                for (c, v) in m.row(i).iter().enumerate() {
                    x.set(i, num_classes + c, *v);
                }
            }
        }
        let mut names = vec!["Intercept".to_string()];
        names.extend((2..=num_classes).map(|k| format!("Class{k}")));
        if let Some((_, extra_names)) = confounders {
            names.extend(extra_names.iter().cloned());
        }
        OutcomeDesign::new(y, x, names)
    }

    pub fn num_coefficients(&self) -> usize {
        self.x.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if self.x.nrows() != n || self.names.len() != self.x.ncols() {
            return Err(Error::Dimension(format!(
                "design is {}x{} with {} names for {n} outcomes",
                self.x.nrows(),
                self.x.ncols(),
                self.names.len()
            )));
        }
        if self.y.iter().any(|&v| v > 1) {
            return Err(Error::InvalidInput("outcome must be coded 0/1".into()));
        }
        if !self.y.contains(&0) || !self.y.contains(&1) {
            return Err(Error::InvalidInput(
                "outcome needs both 0 and 1 values".into(),
            ));
        }
        if !self.x.all_finite() {
            return Err(Error::NonFinite("outcome design"));
        }
        let m = DMatrix::from_row_slice(n, self.x.ncols(), self.x.as_slice());
        let sv = m.singular_values();
        let tol = sv.max() * 1e-10 * n.max(self.x.ncols()) as f64;
        if sv.iter().filter(|&&s| s > tol).count() < self.x.ncols() {
            return Err(Error::InvalidInput(
                "outcome design is not of full column rank".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogitConfig {
    pub prior_scale: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub target_acceptance: f64,
    pub adjust: bool,
    #[serde(default)]
    pub exec: ExecMode,
}

impl Default for LogitConfig {
    fn default() -> Self {
        LogitConfig {
            prior_scale: 5.0,
            iterations: 20_000,
            burn_in: 10_000,
            target_acceptance: 0.234,
            adjust: true,
            exec: ExecMode::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientChain {
    pub draws: Vec<Vec<f64>>,
    pub mode: Vec<f64>,
    pub acceptance_rate: f64,
}

struct Objective<'a> {
    x: &'a Matrix,
    y: &'a [u8],
    w: &'a [f64],
    inv_var: f64,
}

impl Objective<'_> {
    fn log_post(&self, beta: &[f64]) -> f64 {
        let mut l = -0.5 * self.inv_var * beta.iter().map(|b| b * b).sum::<f64>();
        for (i, row) in self.x.rows_iter().enumerate() {
            let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
            // y * eta - log(1 + e^eta), computed stably.
            let log1pe = if eta > 0.0 {
                eta + (-eta).exp().ln_1p()
            } else {
                eta.exp().ln_1p()
            };
            l += self.w[i] * (f64::from(self.y[i]) * eta - log1pe);
        }
        l
    }

    /// Gradient of the log posterior and the negative Hessian (likelihood
    /// part plus prior precision).
    fn derivatives(&self, beta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let p = beta.len();
        let mut g = DVector::from_iterator(p, beta.iter().map(|b| -self.inv_var * b));
        let mut h = DMatrix::identity(p, p) * self.inv_var;
        for (i, row) in self.x.rows_iter().enumerate() {
            let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
            let mu = expit(eta);
            let r = self.w[i] * (f64::from(self.y[i]) - mu);
            let v = self.w[i] * mu * (1.0 - mu);
            for a in 0..p {
                g[a] += r * row[a];
                for b in 0..p {
                    h[(a, b)] += v * row[a] * row[b];
                }
            }
        }
        (g, h)
    }

    /// Uncentered outer product of weighted per-unit scores.
    fn score_outer(&self, beta: &[f64]) -> DMatrix<f64> {
        let p = beta.len();
        let mut j = DMatrix::zeros(p, p);
        for (i, row) in self.x.rows_iter().enumerate() {
            let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
            let s = self.w[i] * (f64::from(self.y[i]) - expit(eta));
            for a in 0..p {
                for b in 0..p {
                    j[(a, b)] += s * s * row[a] * row[b];
                }
            }
        }
        j
    }

    fn newton(&self, p: usize) -> Result<Vec<f64>> {
        let mut beta = vec![0.0; p];
        let mut current = self.log_post(&beta);
        for _ in 0..200 {
            let (g, h) = self.derivatives(&beta);
            let step = jittered_cholesky(&h, "logistic Hessian")?.solve(&g);
            let mut t = 1.0;
            loop {
                let cand: Vec<f64> = beta
                    .iter()
                    .zip(step.iter())
                    .map(|(b, s)| b + t * s)
                    .collect();
                let v = self.log_post(&cand);
                if v >= current - 1e-12 || t < 1e-10 {
                    let moved = step.norm() * t;
                    beta = cand;
                    current = v;
                    if moved < 1e-10 {
                        return Ok(beta);
                    }
                    break;
                }
                t *= 0.5;
            }
        }
        Ok(beta)
    }
}

/// Posterior mode of the weighted logistic model under the Normal prior.
pub fn weighted_logit_mode(
    design: &OutcomeDesign,
    weights: &[f64],
    prior_scale: f64,
) -> Result<Vec<f64>> {
    let w = normalize_weights(weights)?;
    check_lengths(design, &w)?;
    objective(design, &w, prior_scale).newton(design.num_coefficients())
}

fn objective<'a>(design: &'a OutcomeDesign, w: &'a [f64], prior_scale: f64) -> Objective<'a> {
    Objective {
        x: &design.x,
        y: &design.y,
        w,
        inv_var: 1.0 / (prior_scale * prior_scale),
    }
}

fn check_lengths(design: &OutcomeDesign, w: &[f64]) -> Result<()> {
    if w.len() != design.y.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} outcomes",
            w.len(),
            design.y.len()
        )));
    }
    Ok(())
}

/// Random-walk Metropolis on the coefficients with the proposal shaped by
/// the inverse Hessian at the mode and its scale tuned during burn-in.
pub fn fit_weighted_logit(
    design: &OutcomeDesign,
    weights: &[f64],
    cfg: &LogitConfig,
    seed: u64,
) -> Result<CoefficientChain> {
    design.validate()?;
    if cfg.burn_in >= cfg.iterations || cfg.prior_scale <= 0.0 {
        return Err(Error::InvalidInput(
            "logistic sampler needs burn-in < iterations and a positive prior scale".into(),
        ));
    }
    let w = normalize_weights(weights)?;
    check_lengths(design, &w)?;
    let obj = objective(design, &w, cfg.prior_scale);
    let p = design.num_coefficients();
    let mode = obj.newton(p)?;
    if mode.iter().any(|b| b.abs() > SEPARATION_LIMIT) {
        log::warn!("possible separation: coefficient mode {mode:?} exceeds {SEPARATION_LIMIT} in magnitude");
    }
    let (_, h) = obj.derivatives(&mode);
    let chol = jittered_cholesky(&h, "logistic Hessian")?;
    let cov = chol.inverse();
    let l = jittered_cholesky(&cov, "proposal covariance")?.l();

    let mut rng = rng_from(seed);
    let mut beta = mode.clone();
    let mut current = obj.log_post(&beta);
    let mut log_scale = (2.38 / (p as f64).sqrt()).ln();
    let mut accepted = 0usize;
    let mut draws = Vec::with_capacity(cfg.iterations - cfg.burn_in);
    let mut z = DVector::zeros(p);
    for iter in 0..cfg.iterations {
        for v in z.iter_mut() {
            *v = std_normal(&mut rng);
        }
        let step = &l * &z * log_scale.exp();
        let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + s).collect();
        let v = obj.log_post(&cand);
        let accept = (v - current).min(0.0).exp();
        let u: f64 = rng.random();
        let took = u < accept;
        if took {
            beta = cand;
            current = v;
        }
        if iter < cfg.burn_in {
            log_scale += (accept - cfg.target_acceptance) / ((iter + 1) as f64).powf(0.6);
        } else {
            accepted += usize::from(took);
            draws.push(beta.clone());
        }
    }
    let acceptance_rate = accepted as f64 / draws.len() as f64;
    if cfg.adjust {
        let mean: Vec<f64> = (0..p)
            .map(|c| draws.iter().map(|d| d[c]).sum::<f64>() / draws.len() as f64)
            .collect();
        let (_, h) = obj.derivatives(&mean);
        let j = obj.score_outer(&mean);
        draws = sandwich_adjust(&draws, &h, &j)?.draws;
    }
    Ok(CoefficientChain {
        draws,
        mode,
        acceptance_rate,
    })
}

/// Odds-ratio summary of one coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddsRatioRow {
    pub name: String,
    pub odds_ratio: f64,
    pub lower: f64,
    pub upper: f64,
    /// Posterior probability that the odds ratio is on its dominant side of 1.
    pub direction_probability: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomePosterior {
    pub names: Vec<String>,
    pub draws: Vec<Vec<f64>>,
    pub rows: Vec<OddsRatioRow>,
}

impl OutcomePosterior {
    /// Odds ratios per draw, `exp` of each coefficient.
    pub fn odds_ratio_draws(&self) -> Vec<Vec<f64>> {
        self.draws
            .iter()
            .map(|d| d.iter().map(|b| b.exp()).collect())
            .collect()
    }
}

pub fn combine_draws(chains: &[CoefficientChain], names: &[String]) -> Result<OutcomePosterior> {
    let p = names.len();
    let mut draws = Vec::new();
    for c in chains {
        if c.draws.iter().any(|d| d.len() != p) {
            return Err(Error::Dimension(
                "coefficient chains do not share the design columns".into(),
            ));
        }
        draws.extend(c.draws.iter().cloned());
    }
    if draws.is_empty() {
        return Err(Error::InvalidInput(
            "no coefficient draws to combine".into(),
        ));
    }
    let rows = (0..p)
        .map(|c| {
            let mut col: Vec<f64> = draws.iter().map(|d| d[c]).collect();
            col.sort_by(f64::total_cmp);
            let s = col.len() as f64;
            let above = col.iter().filter(|&&b| b > 0.0).count() as f64 / s;
            let below = col.iter().filter(|&&b| b < 0.0).count() as f64 / s;
            OddsRatioRow {
                name: names[c].clone(),
                odds_ratio: quantile_sorted(&col, 0.5).exp(),
                lower: quantile_sorted(&col, 0.025).exp(),
                upper: quantile_sorted(&col, 0.975).exp(),
                direction_probability: above.max(below),
            }
        })
        .collect();
    Ok(OutcomePosterior {
        names: names.to_vec(),
        draws,
        rows,
    })
}

/// Fits every weight draw (in parallel when enabled) and combines them.
pub fn fit_outcome_draws(
    design: &OutcomeDesign,
    weight_draws: &[Vec<f64>],
    cfg: &LogitConfig,
    seed: u64,
) -> Result<OutcomePosterior> {
    let chains: Vec<CoefficientChain> = map_range(weight_draws.len(), cfg.exec, |d| {
        fit_weighted_logit(design, &weight_draws[d], cfg, derive_seed(seed, d as u64))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    combine_draws(&chains, &design.names)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Weighted MLE by plain gradient ascent with a shrinking step.
    fn gradient_ascent_mle(x: &Matrix, y: &[u8], w: &[f64]) -> Vec<f64> {
        let p = x.ncols();
        let mut beta = vec![0.0; p];
        let n = y.len() as f64;
        let mut step = 1.0;
        for it in 0..200_000 {
            let mut g = vec![0.0; p];
            for (i, row) in x.rows_iter().enumerate() {
                let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
                let r = w[i] * (f64::from(y[i]) - 1.0 / (1.0 + (-eta).exp()));
                for a in 0..p {
                    g[a] += r * row[a] / n;
                }
            }
            if g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-10 {
                break;
            }
            if it % 20_000 == 19_999 {
                step *= 0.7;
            }
            for a in 0..p {
                beta[a] += 4.0 * step * g[a];
            }
        }
        beta
    }

    fn synthetic(n: usize, seed: u64) -> (OutcomeDesign, Vec<f64>) {
        let mut rng = rng_from(seed);
        let classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let conf: Vec<f64> = (0..n).map(|_| std_normal(&mut rng)).collect();
        let y: Vec<u8> = (0..n)
            .map(|i| {
                let eta = -0.5 + [0.0, 0.8, -0.6][classes[i]] + 0.5 * conf[i];
                u8::from(rng.random::<f64>() < expit(eta))
            })
            .collect();
        let w: Vec<f64> = (0..n).map(|_| 0.5 + 2.0 * rng.random::<f64>()).collect();
        let m = Matrix::from_vec(n, 1, conf).unwrap();
        let names = vec!["z".to_string()];
        (
            OutcomeDesign::from_classes(y, &classes, 3, Some((&m, &names))).unwrap(),
            w,
        )
    }

    fn quick() -> LogitConfig {
        LogitConfig {
            iterations: 6_000,
            burn_in: 2_000,
            ..LogitConfig::default()
        }
    }

    #[test]
    fn flat_prior_mode_matches_independent_mle() {
        let (design, _) = synthetic(1_500, 1);
        let w = vec![1.0; 1_500];
        let mode = weighted_logit_mode(&design, &w, 1e6).unwrap();
        let mle = gradient_ascent_mle(&design.x, &design.y, &w);
        for (a, b) in mode.iter().zip(&mle) {
            assert!((a - b).abs() < 0.02, "{mode:?} vs {mle:?}");
        }
    }

    #[test]
    fn posterior_mean_tracks_weighted_mle() {
        let (design, raw) = synthetic(2_000, 2);
        let w = normalize_weights(&raw).unwrap();
        let mle = gradient_ascent_mle(&design.x, &design.y, &w);
        let chain = fit_weighted_logit(&design, &raw, &quick(), 3).unwrap();
        for c in 0..design.num_coefficients() {
            let m = chain.draws.iter().map(|d| d[c]).sum::<f64>() / chain.draws.len() as f64;
            assert!((m - mle[c]).abs() < 0.05, "coef {c}: {m} vs {}", mle[c]);
        }
        assert!(
            chain.acceptance_rate > 0.1 && chain.acceptance_rate < 0.5,
            "{}",
            chain.acceptance_rate
        );
    }

    #[test]
    fn intercept_only_hits_logit_of_the_mean() {
        let y: Vec<u8> = (0..400).map(|i| u8::from(i % 4 == 0)).collect();
        let design =
            OutcomeDesign::new(y, Matrix::filled(400, 1, 1.0), vec!["Intercept".into()]).unwrap();
        let cfg = LogitConfig {
            prior_scale: 10.0,
            ..quick()
        };
        let chain = fit_weighted_logit(&design, &[1.0; 400], &cfg, 4).unwrap();
        let m = chain.draws.iter().map(|d| d[0]).sum::<f64>() / chain.draws.len() as f64;
        assert!((m - (0.25f64 / 0.75).ln()).abs() < 0.1, "{m}");
    }

    #[test]
    fn null_group_effect_is_centered_at_zero() {
        let n = 800;
        let classes: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let y: Vec<u8> = (0..n).map(|i| u8::from((i / 2) % 3 == 0)).collect();
        let design = OutcomeDesign::from_classes(y, &classes, 2, None).unwrap();
        let chain = fit_weighted_logit(&design, &vec![1.0; n], &quick(), 5).unwrap();
        let col: Vec<f64> = chain.draws.iter().map(|d| d[1]).collect();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
        // Autocorrelated draws: allow for an effective sample size near 400.
        let mcse = sd / 400f64.sqrt();
        assert!(m.abs() < 2.0 * mcse + 0.01, "mean {m}, mcse {mcse}");
    }

    #[test]
    fn combining_is_order_invariant_and_exponentiates() {
        let a = CoefficientChain {
            draws: vec![vec![0.0, 1.0], vec![0.2, -1.0], vec![-0.2, 2.0]],
            mode: vec![],
            acceptance_rate: 0.0,
        };
        let b = CoefficientChain {
            draws: vec![vec![0.1, 0.5]],
            mode: vec![],
            acceptance_rate: 0.0,
        };
        let names = vec!["Intercept".to_string(), "Class2".to_string()];
        let ab = combine_draws(&[a.clone(), b.clone()], &names).unwrap();
        let ba = combine_draws(&[b, a.clone()], &names).unwrap();
        assert_eq!(ab.rows, ba.rows);
        let single = combine_draws(std::slice::from_ref(&a), &names).unwrap();
        let doubled = combine_draws(&[a.clone(), a], &names).unwrap();
        for (d, s) in doubled.rows.iter().zip(&single.rows) {
            assert_eq!(
                (d.odds_ratio, d.direction_probability),
                (s.odds_ratio, s.direction_probability)
            );
        }
        assert_eq!(single.rows[0].odds_ratio, 1.0);
        assert!((single.rows[1].direction_probability - 2.0 / 3.0).abs() < 1e-12);
        for (d, o) in ab.draws.iter().zip(ab.odds_ratio_draws()) {
            for (x, y) in d.iter().zip(o) {
                assert_eq!(x.exp(), y);
            }
        }
    }

    #[test]
    fn rejects_degenerate_designs() {
        let y = vec![1u8; 10];
        assert!(
            OutcomeDesign::new(y, Matrix::filled(10, 1, 1.0), vec!["Intercept".into()]).is_err()
        );
        let y: Vec<u8> = (0..10).map(|i| (i % 2) as u8).collect();
        let x = Matrix::filled(10, 2, 1.0);
        assert!(OutcomeDesign::new(y, x, vec!["a".into(), "b".into()]).is_err());
    }

    #[test]
    fn larger_coefficients_raise_fitted_probability() {
        for b0 in [-2.0, 0.0, 2.0] {
            for x in [0.5, 1.0, 3.0] {
                let lo = expit(b0 + 0.3 * x);
                let hi = expit(b0 + 0.4 * x);
                assert!(hi > lo);
            }
        }
    }
}
