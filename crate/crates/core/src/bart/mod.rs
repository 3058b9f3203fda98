//! Bayesian additive regression trees for continuous and binary (probit)
//! responses.
//!
//! Both variants share one backfitting sampler. The continuous model
//! standardizes the response onto [-0.5, 0.5] and calibrates the residual
//! variance prior from a linear fit; the probit model augments each label with
//! a truncated-normal latent and fixes the residual variance at one.

mod sampler;
pub mod tree;

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::rng_from;
use crate::stats::{normal_cdf, normal_quantile};
pub use tree::{DecisionTree, NodeKind, TreeNode};

/// Probit outputs are kept this far inside (0, 1).
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BartConfig {
    pub num_trees: usize,
    /// Depth prior: P(split at depth d) = alpha * (1 + d)^(-beta).
    pub alpha: f64,
    pub beta: f64,
    /// Leaf scale; the prior sd of a leaf is (range / 2) / (k * sqrt(num_trees)).
    pub k: f64,
    pub nu: f64,
    pub q: f64,
    pub burn_in: usize,
    pub num_draws: usize,
    pub num_cutpoints: usize,
    pub min_leaf_size: usize,
    pub max_depth: Option<usize>,
    /// Holds the (standardized-scale) residual variance fixed instead of sampling it.
    pub fixed_sigma2: Option<f64>,
    pub keep_train_draws: bool,
}

impl BartConfig {
    pub fn continuous() -> Self {
        Self {
            num_trees: 200,
            alpha: 0.95,
            beta: 2.0,
            k: 2.0,
            nu: 3.0,
            q: 0.90,
            burn_in: 100,
            num_draws: 1000,
            num_cutpoints: 100,
            min_leaf_size: 5,
            max_depth: None,
            fixed_sigma2: None,
            keep_train_draws: true,
        }
    }

    pub fn probit() -> Self {
        Self {
            num_trees: 50,
            ..Self::continuous()
        }
    }

    pub fn with_draws(mut self, m: usize) -> Self {
        self.num_draws = m;
        self
    }
}

/// Link between the sum of trees and the reported prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BartLink {
    /// prediction = center + scale * sum
    Identity { center: f64, scale: f64 },
    /// prediction = Phi(offset + sum)
    Probit { offset: f64 },
}

impl BartLink {
    #[inline]
    pub fn apply(&self, sum: f64) -> f64 {
        match *self {
            BartLink::Identity { center, scale } => center + scale * sum,
            BartLink::Probit { offset } => normal_cdf(offset + sum).clamp(PROB_EPS, 1.0 - PROB_EPS),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub sigma2: f64,
    pub mean_depth: f64,
    pub max_depth: usize,
    pub mean_leaves: f64,
}

/// Retained posterior states of a sum-of-trees fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BartPosterior {
    link: BartLink,
    num_features: usize,
    draws: Vec<Vec<DecisionTree>>,
    sigma2: Vec<f64>,
    train_draws: Option<Matrix>,
    diagnostics: Vec<IterationDiagnostics>,
}

impl BartPosterior {
    /// Wraps hand-built ensembles; `draws[m]` holds the trees of draw `m`.
    pub fn from_trees(
        link: BartLink,
        num_features: usize,
        draws: Vec<Vec<DecisionTree>>,
    ) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::InvalidInput(
                "posterior needs at least one draw".into(),
            ));
        }
        let m = draws.len();
        Ok(Self {
            link,
            num_features,
            draws,
            sigma2: vec![f64::NAN; m],
            train_draws: None,
            diagnostics: Vec::new(),
        })
    }

    pub fn link(&self) -> BartLink {
        self.link
    }

    pub fn num_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn draws(&self) -> &[Vec<DecisionTree>] {
        &self.draws
    }

    /// Residual variance per retained draw, on the response scale.
    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    /// In-sample predictive draws (n x M), when retained.
    pub fn train_draws(&self) -> Option<&Matrix> {
        self.train_draws.as_ref()
    }

    pub fn diagnostics(&self) -> &[IterationDiagnostics] {
        &self.diagnostics
    }

    /// Sum of trees of draw `m` at `row`, before the link.
    pub fn raw_sum(&self, m: usize, row: &[f64]) -> f64 {
        self.draws[m].iter().map(|t| t.evaluate(row)).sum()
    }

    /// Predictive draws at new rows: entry (i, m) is draw m evaluated at row i.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.num_features {
            return Err(Error::Dimension(format!(
                "model was fitted on {} covariates, got {}",
                self.num_features,
                x.ncols()
            )));
        }
        if !x.all_finite() {
            return Err(Error::NonFinite("prediction covariates"));
        }
        let m_count = self.draws.len();
        let mut out = Matrix::zeros(x.nrows(), m_count);
        for i in 0..x.nrows() {
            let row = x.row(i);
            let dst = out.row_mut(i);
            for (m, d) in dst.iter_mut().enumerate() {
                *d = self.link.apply(self.raw_sum(m, row));
            }
        }
        Ok(out)
    }

    pub fn write_diagnostics_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "iteration,sigma2,mean_depth,max_depth,mean_leaves")?;
        for d in &self.diagnostics {
            writeln!(
                f,
                "{},{},{},{},{}",
                d.iteration, d.sigma2, d.mean_depth, d.max_depth, d.mean_leaves
            )?;
        }
        Ok(())
    }
}

fn check_inputs(x: &Matrix, n_resp: usize, cfg: &BartConfig) -> Result<()> {
    if x.nrows() != n_resp {
        return Err(Error::Dimension(format!(
            "{} covariate rows but {} responses",
            x.nrows(),
            n_resp
        )));
    }
    if n_resp < 2 {
        return Err(Error::InvalidInput("BART needs at least two rows".into()));
    }
    if cfg.num_draws == 0 || cfg.num_trees == 0 {
        return Err(Error::InvalidInput(
            "num_draws and num_trees must be positive".into(),
        ));
    }
    if !x.all_finite() {
        return Err(Error::NonFinite("covariates"));
    }
    Ok(())
}

/// Residual sd of an ordinary least-squares fit with intercept, falling back
/// to the marginal sd when there are too few rows.
fn linear_residual_sd(x: &Matrix, y: &[f64]) -> f64 {
    let n = x.nrows();
    let p = x.ncols() + 1;
    if n <= p + 1 {
        return crate::stats::variance(y).sqrt();
    }
    let design = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { x.get(i, j - 1) });
    let yv = DVector::from_column_slice(y);
    let svd = design.clone().svd(true, true);
    match svd.solve(&yv, 1e-10) {
        Ok(beta) => {
            let resid = yv - design * beta;
            (resid.norm_squared() / (n - p) as f64).sqrt()
        }
        Err(_) => crate::stats::variance(y).sqrt(),
    }
}

/// Continuous-response BART.
///
/// A constant response short-circuits to a degenerate posterior that predicts
/// that constant exactly.
pub fn fit_continuous_bart(
    x: &Matrix,
    y: &[f64],
    cfg: &BartConfig,
    seed: u64,
) -> Result<BartPosterior> {
    check_inputs(x, y.len(), cfg)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response"));
    }
    let (min, max) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let range = max - min;
    if range <= 0.0 {
        let link = BartLink::Identity {
            center: min,
            scale: 1.0,
        };
        let draws = vec![vec![DecisionTree::leaf(0.0)]; cfg.num_draws];
        let train = cfg
            .keep_train_draws
            .then(|| Matrix::filled(x.nrows(), cfg.num_draws, min));
        return Ok(BartPosterior {
            link,
            num_features: x.ncols(),
            draws,
            sigma2: vec![0.0; cfg.num_draws],
            train_draws: train,
            diagnostics: Vec::new(),
        });
    }
    let y_std: Vec<f64> = y.iter().map(|v| (v - min) / range - 0.5).collect();
    let sigma_hat = linear_residual_sd(x, &y_std).max(1e-6);
    let chi = ChiSquared::new(cfg.nu).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let lambda = sigma_hat * sigma_hat * chi.inverse_cdf(1.0 - cfg.q) / cfg.nu;
    let tau = 0.5 / (cfg.k * (cfg.num_trees as f64).sqrt());
    let grid = sampler::CutGrid::from_quantiles(x, cfg.num_cutpoints);
    let mut rng = rng_from(seed);
    let out = sampler::run(
        x,
        &grid,
        cfg,
        sampler::Response::Continuous { y: y_std, lambda },
        tau,
        &mut rng,
    );
    let link = BartLink::Identity {
        center: min + 0.5 * range,
        scale: range,
    };
    Ok(finish(link, x.ncols(), out, range * range))
}

/// Probit BART for binary labels via latent-variable augmentation.
pub fn fit_probit_bart(
    x: &Matrix,
    labels: &[bool],
    cfg: &BartConfig,
    seed: u64,
) -> Result<BartPosterior> {
    check_inputs(x, labels.len(), cfg)?;
    let ones = labels.iter().filter(|&&l| l).count();
    if ones == 0 || ones == labels.len() {
        return Err(Error::InvalidInput(
            "probit BART needs both label classes".into(),
        ));
    }
    let offset = normal_quantile(ones as f64 / labels.len() as f64);
    let tau = 3.0 / (cfg.k * (cfg.num_trees as f64).sqrt());
    let grid = sampler::CutGrid::from_quantiles(x, cfg.num_cutpoints);
    let mut rng = rng_from(seed);
    let out = sampler::run(
        x,
        &grid,
        cfg,
        sampler::Response::Probit { labels, offset },
        tau,
        &mut rng,
    );
    Ok(finish(BartLink::Probit { offset }, x.ncols(), out, 1.0))
}

fn finish(
    link: BartLink,
    num_features: usize,
    out: sampler::FitOutput,
    var_scale: f64,
) -> BartPosterior {
    let train_draws = out.train_fit.map(|m| m.map(|s| link.apply(s)));
    let mut diagnostics = out.diagnostics;
    for d in &mut diagnostics {
        d.sigma2 *= var_scale;
    }
    BartPosterior {
        link,
        num_features,
        draws: out.draws,
        sigma2: out.sigma2.iter().map(|s| s * var_scale).collect(),
        train_draws,
        diagnostics,
    }
}
