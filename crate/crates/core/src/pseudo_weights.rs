//! Quasi-randomization pseudo-weights for a non-probability sample (NPS).
//!
//! The NPS is stacked on top of a reference probability sample (PS). A probit
//! BART fit of NPS membership on the stacked auxiliaries gives the propensity
//! `pi_Z`, a continuous BART fit of `logit(pi_R)` over the PS predicts the PS
//! inclusion probability for NPS units, and the two are combined per
//! posterior draw into NPS pseudo-inclusion probabilities, inverted, and
//! trimmed.

use serde::{Deserialize, Serialize};

use crate::bart::{fit_continuous_bart, fit_probit_bart, BartConfig};
use crate::error::{Error, Result};
use crate::items::ItemMatrix;
use crate::matrix::Matrix;
use crate::rng::derive_seed;
use crate::stats::{expit, logit, quantile_sorted};

/// Lower clamp for pseudo-inclusion probabilities.
pub const MIN_INCLUSION: f64 = 1e-6;
pub const DEFAULT_TRIM_C: f64 = 20.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbabilitySampleData {
    pub aux_names: Vec<String>,
    pub aux: Matrix,
    /// Known inclusion probabilities, each in (0, 1].
    pub inclusion: Vec<f64>,
    /// Frame coverage proportion p_R.
    pub coverage: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonProbabilitySampleData {
    pub aux_names: Vec<String>,
    pub aux: Matrix,
    pub items: Option<ItemMatrix>,
    /// Frame coverage proportion p_B.
    pub coverage: f64,
}

impl ProbabilitySampleData {
    pub fn validate(&self) -> Result<()> {
        if self.aux.nrows() != self.inclusion.len() {
            return Err(Error::Dimension(format!(
                "{} PS rows but {} inclusion probabilities",
                self.aux.nrows(),
                self.inclusion.len()
            )));
        }
        if let Some(p) = self.inclusion.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::InvalidInput(format!(
                "PS inclusion probability {p} outside (0, 1]"
            )));
        }
        check_coverage(self.coverage)?;
        if !self.aux.all_finite() {
            return Err(Error::NonFinite("PS auxiliaries"));
        }
        Ok(())
    }
}

fn check_coverage(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "coverage proportion {p} outside (0, 1]"
        )))
    }
}

/// NPS rows followed by PS rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StackedSample {
    pub aux: Matrix,
    /// `true` for NPS rows.
    pub z: Vec<bool>,
    pub n_nps: usize,
    pub n_ps: usize,
}

pub fn stack(nps: &NonProbabilitySampleData, ps: &ProbabilitySampleData) -> Result<StackedSample> {
    if ps.aux.nrows() == 0 {
        return Err(Error::InvalidInput("probability sample is empty".into()));
    }
    if nps.aux.nrows() == 0 {
        return Err(Error::InvalidInput(
            "non-probability sample is empty".into(),
        ));
    }
    if nps.aux.ncols() != ps.aux.ncols() {
        return Err(Error::Dimension(format!(
            "NPS has {} auxiliaries, PS has {}",
            nps.aux.ncols(),
            ps.aux.ncols()
        )));
    }
    if !nps.aux_names.is_empty() && !ps.aux_names.is_empty() && nps.aux_names != ps.aux_names {
        return Err(Error::InvalidInput(format!(
            "auxiliary columns differ: {:?} vs {:?}",
            nps.aux_names, ps.aux_names
        )));
    }
    let aux = nps.aux.vstack(&ps.aux)?;
    let (n_nps, n_ps) = (nps.aux.nrows(), ps.aux.nrows());
    let z = std::iter::repeat_n(true, n_nps)
        .chain(std::iter::repeat_n(false, n_ps))
        .collect();
    Ok(StackedSample {
        aux,
        z,
        n_nps,
        n_ps,
    })
}

/// Draws of `pi_Z` for the NPS rows (n_B x M) from a probit BART fit on the
/// stacked sample.
pub fn estimate_nps_propensity(
    stacked: &StackedSample,
    cfg: &BartConfig,
    seed: u64,
) -> Result<Matrix> {
    let cfg = BartConfig {
        keep_train_draws: true,
        ..cfg.clone()
    };
    let post = fit_probit_bart(&stacked.aux, &stacked.z, &cfg, seed)?;
    let train = post.train_draws().expect("train draws requested");
    let idx: Vec<usize> = (0..stacked.n_nps).collect();
    Ok(train.select_rows(&idx))
}

/// Draws of the PS inclusion probability for NPS units (n_B x M): continuous
/// BART on `logit(pi_R)` over the PS, predicted at the NPS auxiliaries.
pub fn estimate_ps_inclusion_for_nps(
    ps: &ProbabilitySampleData,
    nps_aux: &Matrix,
    cfg: &BartConfig,
    seed: u64,
) -> Result<Matrix> {
    ps.validate()?;
    // pi_R = 1 would put the response at +inf.
    let y: Vec<f64> = ps
        .inclusion
        .iter()
        .map(|&p| logit(p.min(1.0 - 1e-9)))
        .collect();
    let cfg = BartConfig {
        keep_train_draws: false,
        ..cfg.clone()
    };
    let post = fit_continuous_bart(&ps.aux, &y, &cfg, seed)?;
    Ok(post.predict(nps_aux)?.map(expit))
}

/// NPS pseudo-inclusion probability from propensity `pi_z`, PS inclusion
/// `pi_r`, and frame coverages, clamped to [1e-6, 1].
pub fn crisp_pseudo_inclusion(pi_z: f64, pi_r: f64, cover_r: f64, cover_b: f64) -> Result<f64> {
    if pi_z >= 1.0 {
        return Err(Error::DegeneratePropensity(pi_z));
    }
    if !(pi_z > 0.0) || !(pi_r > 0.0 && pi_r <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "probabilities out of range: pi_z={pi_z}, pi_r={pi_r}"
        )));
    }
    check_coverage(cover_r)?;
    check_coverage(cover_b)?;
    let raw = pi_z * pi_r * cover_r / (cover_b * (1.0 - pi_z));
    Ok(raw.clamp(MIN_INCLUSION, 1.0))
}

/// Pseudo-weight posterior draws for the NPS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDraws {
    /// n_B x M.
    pub draws: Matrix,
    /// Row means of `draws`.
    pub means: Vec<f64>,
    pub trim_c: Option<f64>,
    /// Per-draw cap Q2 + c * IQR, when trimming is on.
    pub bounds: Vec<Option<f64>>,
}

impl WeightDraws {
    /// Wraps an explicit weight matrix (e.g. read from disk), recomputing means.
    pub fn from_matrix(draws: Matrix) -> Result<Self> {
        if draws
            .as_slice()
            .iter()
            .any(|&w| !(w.is_finite() && w > 0.0))
        {
            return Err(Error::InvalidInput(
                "weights must be positive and finite".into(),
            ));
        }
        let means = draws.row_means();
        let m = draws.ncols();
        Ok(Self {
            draws,
            means,
            trim_c: None,
            bounds: vec![None; m],
        })
    }

    /// Unit weights for every unit and draw (the "no model" reference).
    pub fn unit(n: usize, m: usize) -> Self {
        Self {
            draws: Matrix::filled(n, m, 1.0),
            means: vec![1.0; n],
            trim_c: None,
            bounds: vec![None; m],
        }
    }

    pub fn num_units(&self) -> usize {
        self.draws.nrows()
    }

    pub fn num_draws(&self) -> usize {
        self.draws.ncols()
    }

    pub fn draw(&self, m: usize) -> Vec<f64> {
        self.draws.column(m)
    }
}

/// Weight cap Q2 + c (Q3 - Q1) of one draw.
pub fn trim_bound(weights: &[f64], c: f64) -> f64 {
    let mut s = weights.to_vec();
    s.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&s, 0.25);
    let q2 = quantile_sorted(&s, 0.5);
    let q3 = quantile_sorted(&s, 0.75);
    q2 + c * (q3 - q1)
}

pub fn build_weight_draws(
    pi_z: &Matrix,
    pi_r: &Matrix,
    cover_r: f64,
    cover_b: f64,
    trim_c: Option<f64>,
) -> Result<WeightDraws> {
    if pi_z.nrows() != pi_r.nrows() || pi_z.ncols() != pi_r.ncols() {
        return Err(Error::Dimension(format!(
            "pi_Z draws are {}x{}, pi_R draws are {}x{}",
            pi_z.nrows(),
            pi_z.ncols(),
            pi_r.nrows(),
            pi_r.ncols()
        )));
    }
    if let Some(c) = trim_c {
        if !(c > 0.0) {
            return Err(Error::InvalidInput(format!(
                "trim constant must be positive, got {c}"
            )));
        }
    }
    let (n, m) = (pi_z.nrows(), pi_z.ncols());
    let mut draws = Matrix::zeros(n, m);
    let mut bounds = Vec::with_capacity(m);
    let mut col = vec![0.0; n];
    for d in 0..m {
        for (i, w) in col.iter_mut().enumerate() {
            *w = 1.0 / crisp_pseudo_inclusion(pi_z.get(i, d), pi_r.get(i, d), cover_r, cover_b)?;
        }
        let bound = trim_c.map(|c| trim_bound(&col, c));
        for (i, &w) in col.iter().enumerate() {
            draws.set(i, d, bound.map_or(w, |b| w.min(b)));
        }
        bounds.push(bound);
    }
    let means = draws.row_means();
    Ok(WeightDraws {
        draws,
        means,
        trim_c,
        bounds,
    })
}

/// One selected pseudo-weight set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedDraw {
    /// Column of the source [`WeightDraws`].
    pub draw_index: usize,
    /// 1-based rank by total weight.
    pub rank: usize,
    pub weights: Vec<f64>,
}

/// 1-based ranks picked for `d` sets out of `m`: rank ceil(M (d - 0.5) / D).
pub fn selection_ranks(m: usize, d: usize) -> Vec<usize> {
    (1..=d)
        .map(|k| ((m as f64 * (k as f64 - 0.5) / d as f64).ceil() as usize).clamp(1, m))
        .collect()
}

/// Picks `d` weight draws at evenly spaced quantiles of the draws' total weight.
pub fn select_weight_draws(w: &WeightDraws, d: usize) -> Result<Vec<SelectedDraw>> {
    let m = w.num_draws();
    if d == 0 || d > m {
        return Err(Error::InvalidInput(format!(
            "cannot select {d} of {m} weight draws"
        )));
    }
    let totals: Vec<f64> = (0..m)
        .map(|c| (0..w.num_units()).map(|i| w.draws.get(i, c)).sum())
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| totals[a].total_cmp(&totals[b]).then(a.cmp(&b)));
    Ok(selection_ranks(m, d)
        .into_iter()
        .map(|rank| {
            let idx = order[rank - 1];
            SelectedDraw {
                draw_index: idx,
                rank,
                weights: w.draw(idx),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoWeightConfig {
    pub propensity: BartConfig,
    pub inclusion: BartConfig,
    pub trim_c: Option<f64>,
}

impl Default for PseudoWeightConfig {
    fn default() -> Self {
        Self {
            propensity: BartConfig::probit(),
            inclusion: BartConfig::continuous(),
            trim_c: Some(DEFAULT_TRIM_C),
        }
    }
}

impl PseudoWeightConfig {
    pub fn with_draws(mut self, m: usize) -> Self {
        self.propensity.num_draws = m;
        self.inclusion.num_draws = m;
        self
    }
}

/// Stack, fit both BART models, and build the trimmed weight draws.
pub fn estimate_pseudo_weights(
    nps: &NonProbabilitySampleData,
    ps: &ProbabilitySampleData,
    cfg: &PseudoWeightConfig,
    seed: u64,
) -> Result<WeightDraws> {
    ps.validate()?;
    check_coverage(nps.coverage)?;
    if cfg.propensity.num_draws != cfg.inclusion.num_draws {
        return Err(Error::InvalidInput(
            "both BART fits must retain the same number of draws".into(),
        ));
    }
    let stacked = stack(nps, ps)?;
    let pi_z = estimate_nps_propensity(&stacked, &cfg.propensity, derive_seed(seed, 1))?;
    let pi_r = estimate_ps_inclusion_for_nps(ps, &nps.aux, &cfg.inclusion, derive_seed(seed, 2))?;
    build_weight_draws(&pi_z, &pi_r, ps.coverage, nps.coverage, cfg.trim_c)
}
