//! Simulation scenarios, evaluation metrics and report output.
//!
//! Set 1 scenarios (`1A` high overlap, `1B` low overlap) compare weight
//! models by the mean absolute bias of NPS pseudo-weights. Set 2 scenarios
//! (`2A`-`2J`) fit WOLCAN and an unweighted latent class model to simulated
//! item data and score class shares and item profiles against the truth.
//!
//! A scenario's population is generated once from the master seed; every
//! replicate `r` redraws both samples with seed `derive_seed(seed, 1000 + r)`.

mod metrics;
mod report;

pub use metrics::{
    lca_metrics, match_classes, metric_coverage, weight_abs_bias, LcaMetrics, LcaTruth,
};
pub use report::{
    emit_report, AggregateRow, ReplicateFailure, ReplicateRecord, ScenarioReport, FIGURE_FILE,
    REPLICATES_FILE, TABLE1_FILE, TABLE2_FILE,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{linear_predict, logistic_mle, ols, with_intercept};
use crate::matrix::Matrix;
use crate::par::{map_range, ExecMode};
use crate::pseudo_weights::{
    build_weight_draws, estimate_pseudo_weights, select_weight_draws, NonProbabilitySampleData,
    ProbabilitySampleData, PseudoWeightConfig, WeightDraws,
};
use crate::rng::derive_seed;
use crate::simgen::{
    poisson_sample, simulate_population, Covariates, Overlap, PopulationConfig,
    SyntheticPopulation, NUM_CLASSES, NUM_ITEMS, NUM_LEVELS,
};
use crate::stats::{expit, logit};
use crate::wolca::{fit_wolca, WolcaConfig, WolcaFit};

/// Weight model compared in Set 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WeightModel {
    NoModel,
    LogReg { missing: bool },
    Bart { draws: usize, missing: bool },
}

impl WeightModel {
    pub fn name(&self) -> String {
        match self {
            WeightModel::NoModel => "NoModel".into(),
            WeightModel::LogReg { missing: false } => "LogReg".into(),
            WeightModel::LogReg { missing: true } => "LogRegMiss".into(),
            WeightModel::Bart { draws, missing } => {
                format!("BART{draws}{}", if *missing { "Miss" } else { "" })
            }
        }
    }

    pub fn full_roster() -> Vec<WeightModel> {
        vec![
            WeightModel::NoModel,
            WeightModel::LogReg { missing: false },
            WeightModel::LogReg { missing: true },
            WeightModel::Bart {
                draws: 500,
                missing: false,
            },
            WeightModel::Bart {
                draws: 1000,
                missing: false,
            },
            WeightModel::Bart {
                draws: 2000,
                missing: false,
            },
            WeightModel::Bart {
                draws: 1000,
                missing: true,
            },
        ]
    }
}

pub const MODEL_UNWEIGHTED: &str = "Unweighted";
pub const MODEL_WOLCAN: &str = "WOLCAN";
/// The WOLCAN chains summarized before variance adjustment.
pub const MODEL_WOLCAN_UNADJUSTED: &str = "WOLCANNoAdj";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub id: String,
    pub population_size: usize,
    pub replicates: usize,
    pub seed: u64,
    pub rho: f64,
    pub overlap: Overlap,
    /// Expected NPS and PS sampling fractions.
    pub fractions: (f64, f64),
    pub non_disjoint: bool,
    /// Weight models in Set 2 see only a1 and a2.
    pub missing_covariates: bool,
    /// Retained BART draws (M) for Set 2 pseudo-weights.
    pub num_draws: usize,
    /// Weight draws (D) propagated through WOLCAN.
    pub num_weight_draws: usize,
    /// Trimming constant; zero or negative disables trimming.
    pub trim_c: f64,
    pub adjust: bool,
    pub bart_burn_in: usize,
    /// Set 1 weight models.
    pub roster: Vec<WeightModel>,
    pub wolca: WolcaConfig,
    pub exec: ExecMode,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::desk("2A").expect("2A is a known scenario")
    }
}

impl ScenarioConfig {
    pub fn is_weight_scenario(&self) -> bool {
        self.id.starts_with('1')
    }

    /// Desk-scale configuration: N = 10,000, 10 replicates, M = 500, D = 10.
    pub fn desk(id: &str) -> Result<Self> {
        let mut cfg = ScenarioConfig {
            id: id.to_string(),
            population_size: 10_000,
            replicates: 10,
            seed: 20_250_101,
            rho: 0.5,
            overlap: Overlap::High,
            fractions: (0.05, 0.05),
            non_disjoint: false,
            missing_covariates: false,
            num_draws: 500,
            num_weight_draws: 10,
            trim_c: 20.0,
            adjust: true,
            bart_burn_in: 100,
            roster: Vec::new(),
            wolca: WolcaConfig::default(),
            exec: ExecMode::default(),
        };
        match id {
            "1A" | "1B" => {
                cfg.overlap = if id == "1A" {
                    Overlap::High
                } else {
                    Overlap::Low
                };
                cfg.roster = vec![
                    WeightModel::NoModel,
                    WeightModel::LogReg { missing: false },
                    WeightModel::LogReg { missing: true },
                    WeightModel::Bart {
                        draws: cfg.num_draws,
                        missing: false,
                    },
                    WeightModel::Bart {
                        draws: cfg.num_draws,
                        missing: true,
                    },
                ];
            }
            "2A" | "2H" | "2J" => {}
            "2B" => cfg.overlap = Overlap::Low,
            "2C" => cfg.fractions = (0.01, 0.01),
            "2D" => {
                cfg.fractions = (0.01, 0.01);
                cfg.overlap = Overlap::Low;
            }
            "2E" | "2F" => {
                cfg.population_size = 40_000;
                cfg.fractions = (0.0075, 0.0375);
                if id == "2F" {
                    cfg.overlap = Overlap::Low;
                }
            }
            "2G" => cfg.non_disjoint = true,
            "2I" => cfg.missing_covariates = true,
            _ => return Err(Error::Config(format!("unknown scenario id {id:?}"))),
        }
        if id == "2J" {
            cfg.adjust = false;
        }
        Ok(cfg)
    }

    /// Full-size configuration: N = 40,000 (2,000,000 for 2E/2F), 100
    /// replicates, M = 1000, D = 20 (10 for 2H).
    pub fn full_scale(id: &str) -> Result<Self> {
        let mut cfg = Self::desk(id)?;
        cfg.population_size = 40_000;
        cfg.replicates = 100;
        cfg.num_draws = 1000;
        cfg.num_weight_draws = if id == "2H" { 10 } else { 20 };
        if cfg.is_weight_scenario() {
            cfg.roster = WeightModel::full_roster();
        }
        if id == "2E" || id == "2F" {
            cfg.population_size = 2_000_000;
            cfg.fractions = (0.00075, 0.0375);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicate count must be at least 1".into()));
        }
        if self.num_weight_draws == 0 || self.num_weight_draws > self.num_draws {
            return Err(Error::Config(format!(
                "need 1 <= D <= M, got D = {} and M = {}",
                self.num_weight_draws, self.num_draws
            )));
        }
        if !self.is_weight_scenario() && !self.id.starts_with('2') {
            return Err(Error::Config(format!("unknown scenario id {:?}", self.id)));
        }
        self.wolca.adaptive.validate()?;
        self.wolca.fixed.validate()?;
        Ok(())
    }

    fn trim(&self) -> Option<f64> {
        (self.trim_c > 0.0).then_some(self.trim_c)
    }

    pub fn population_config(&self) -> PopulationConfig {
        PopulationConfig {
            size: self.population_size,
            rho: self.rho,
            overlap: self.overlap,
            fractions: self.fractions,
            non_disjoint: self.non_disjoint,
        }
    }

    /// "nB 5%, nR 5%" style label of the sampling fractions.
    pub fn sample_size_label(&self) -> String {
        let pct = |f: f64| {
            let v = f * 100.0;
            if (v - v.round()).abs() < 1e-9 {
                format!("{}%", v.round())
            } else {
                format!("{v}%")
            }
        };
        format!("nB {}, nR {}", pct(self.fractions.0), pct(self.fractions.1))
    }
}

/// One replicate's pair of samples.
#[derive(Debug, Clone)]
pub struct SampleDraw {
    pub nps: Vec<usize>,
    pub ps: Vec<usize>,
}

impl SampleDraw {
    pub fn draw(pop: &SyntheticPopulation, seed: u64) -> Self {
        SampleDraw {
            nps: poisson_sample(&pop.selection.pi_b, derive_seed(seed, 1)),
            ps: poisson_sample(&pop.selection.pi_r, derive_seed(seed, 2)),
        }
    }

    /// Share of the distinct sampled individuals that are in both samples.
    pub fn overlap(&self) -> f64 {
        let in_ps: std::collections::HashSet<usize> = self.ps.iter().copied().collect();
        let shared = self.nps.iter().filter(|i| in_ps.contains(i)).count();
        let union = self.nps.len() + self.ps.len() - shared;
        shared as f64 / union.max(1) as f64
    }
}

/// Auxiliary design used by the weight models: a1, a2, a3 and a1*a2, or
/// only a1 and a2 when `missing`.
pub fn auxiliary_matrix(cov: &Covariates, idx: &[usize], missing: bool) -> (Matrix, Vec<String>) {
    let names: Vec<String> = if missing {
        vec!["a1".into(), "a2".into()]
    } else {
        vec!["a1".into(), "a2".into(), "a3".into(), "a1:a2".into()]
    };
    let mut m = Matrix::zeros(idx.len(), names.len());
    for (r, &i) in idx.iter().enumerate() {
        let (a1, a2, a3) = (cov.a1[i], cov.a2[i], cov.a3[i]);
        m.set(r, 0, a1);
        m.set(r, 1, a2);
        if !missing {
            m.set(r, 2, a3);
            m.set(r, 3, a1 * a2);
        }
    }
    (m, names)
}

fn sample_data(
    pop: &SyntheticPopulation,
    s: &SampleDraw,
    missing: bool,
) -> (NonProbabilitySampleData, ProbabilitySampleData) {
    let (nps_aux, names) = auxiliary_matrix(&pop.covariates, &s.nps, missing);
    let (ps_aux, _) = auxiliary_matrix(&pop.covariates, &s.ps, missing);
    let nps = NonProbabilitySampleData {
        aux_names: names.clone(),
        aux: nps_aux,
        items: Some(pop.items.select_rows(&s.nps)),
        coverage: 1.0,
    };
    let ps = ProbabilitySampleData {
        aux_names: names,
        aux: ps_aux,
        inclusion: s.ps.iter().map(|&i| pop.selection.pi_r[i]).collect(),
        coverage: 1.0,
    };
    (nps, ps)
}

/// Pseudo-weights from a logistic propensity model and a linear model for
/// logit(pi_R), combined with the same formula and trimming as BART.
pub fn logistic_weights(
    nps: &NonProbabilitySampleData,
    ps: &ProbabilitySampleData,
    trim_c: Option<f64>,
) -> Result<Vec<f64>> {
    let stacked = with_intercept(&nps.aux.vstack(&ps.aux)?);
    let z: Vec<bool> = (0..stacked.nrows()).map(|i| i < nps.aux.nrows()).collect();
    let gamma = logistic_mle(&stacked, &z)?;
    let nps_design = with_intercept(&nps.aux);
    let pi_z: Vec<f64> = linear_predict(&nps_design, &gamma)
        .into_iter()
        .map(expit)
        .collect();
    let y: Vec<f64> = ps
        .inclusion
        .iter()
        .map(|&p| logit(p.min(1.0 - 1e-9)))
        .collect();
    let beta = ols(&with_intercept(&ps.aux), &y)?;
    let pi_r: Vec<f64> = linear_predict(&nps_design, &beta)
        .into_iter()
        .map(expit)
        .collect();
    let n = pi_z.len();
    let w = build_weight_draws(
        &Matrix::from_vec(n, 1, pi_z)?,
        &Matrix::from_vec(n, 1, pi_r)?,
        ps.coverage,
        nps.coverage,
        trim_c,
    )?;
    Ok(w.means)
}

fn bart_weights(
    nps: &NonProbabilitySampleData,
    ps: &ProbabilitySampleData,
    draws: usize,
    cfg: &ScenarioConfig,
    seed: u64,
) -> Result<WeightDraws> {
    let mut pw = PseudoWeightConfig {
        trim_c: cfg.trim(),
        ..PseudoWeightConfig::default()
    }
    .with_draws(draws);
    pw.propensity.burn_in = cfg.bart_burn_in;
    pw.inclusion.burn_in = cfg.bart_burn_in;
    estimate_pseudo_weights(nps, ps, &pw, seed)
}

/// Estimated mean pseudo-weights for the NPS under `model`.
pub fn model_weights(
    model: WeightModel,
    pop: &SyntheticPopulation,
    s: &SampleDraw,
    cfg: &ScenarioConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    match model {
        WeightModel::NoModel => Ok(vec![1.0; s.nps.len()]),
        WeightModel::LogReg { missing } => {
            let (nps, ps) = sample_data(pop, s, missing);
            logistic_weights(&nps, &ps, cfg.trim())
        }
        WeightModel::Bart { draws, missing } => {
            let (nps, ps) = sample_data(pop, s, missing);
            Ok(bart_weights(&nps, &ps, draws, cfg, seed)?.means)
        }
    }
}

fn replicate_seed(cfg: &ScenarioConfig, r: usize) -> u64 {
    derive_seed(cfg.seed, 1000 + r as u64)
}

fn population_for(cfg: &ScenarioConfig) -> Result<SyntheticPopulation> {
    simulate_population(&cfg.population_config(), derive_seed(cfg.seed, 0))
}

fn collect(
    cfg: &ScenarioConfig,
    models: Vec<String>,
    runs: Vec<Result<Vec<ReplicateRecord>>>,
) -> ScenarioReport {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok(mut recs) => records.append(&mut recs),
            Err(e) => {
                log::warn!("scenario {} replicate {r} failed: {e}", cfg.id);
                failures.push(ReplicateFailure {
                    replicate: r,
                    message: e.to_string(),
                });
            }
        }
    }
    ScenarioReport {
        scenario: cfg.id.clone(),
        sample_size: cfg.sample_size_label(),
        overlap: match cfg.overlap {
            Overlap::High => "High".into(),
            Overlap::Low => "Low".into(),
        },
        models,
        records,
        failures,
    }
}

/// Set 1: pseudo-weight bias of every roster model.
pub fn run_weight_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    cfg.validate()?;
    let pop = population_for(cfg)?;
    let models: Vec<String> = cfg.roster.iter().map(WeightModel::name).collect();
    let runs = map_range(cfg.replicates, cfg.exec, |r| {
        let seed = replicate_seed(cfg, r);
        let s = SampleDraw::draw(&pop, seed);
        let truth = pop.true_weights(&s.nps);
        let overlap = s.overlap();
        cfg.roster
            .iter()
            .enumerate()
            .map(|(m, model)| {
                let w = model_weights(*model, &pop, &s, cfg, derive_seed(seed, 10 + m as u64))?;
                Ok(ReplicateRecord {
                    scenario: cfg.id.clone(),
                    replicate: r,
                    model: model.name(),
                    n_nps: s.nps.len(),
                    n_ps: s.ps.len(),
                    overlap,
                    wts_abs_bias: weight_abs_bias(&w, &truth),
                    k_hat: None,
                    metrics: None,
                })
            })
            .collect::<Result<Vec<_>>>()
    });
    Ok(collect(cfg, models, runs))
}

/// Truth for Set 2 metrics.
pub fn lca_truth(pop: &SyntheticPopulation) -> LcaTruth {
    LcaTruth {
        pi: pop.true_pi.clone(),
        theta: pop.true_theta.clone(),
        levels: vec![NUM_LEVELS; NUM_ITEMS],
    }
}

/// Fits of one Set 2 replicate.
pub struct LcaReplicate {
    pub samples: SampleDraw,
    pub weights: WeightDraws,
    pub wolcan: WolcaFit,
    pub unweighted: WolcaFit,
}

/// Pseudo-weights, WOLCAN and the unweighted model for one replicate.
pub fn fit_lca_replicate(
    pop: &SyntheticPopulation,
    cfg: &ScenarioConfig,
    seed: u64,
) -> Result<LcaReplicate> {
    let samples = SampleDraw::draw(pop, seed);
    let (nps, ps) = sample_data(pop, &samples, cfg.missing_covariates);
    let items = nps.items.as_ref().expect("simulated NPS carries items");
    let weights = bart_weights(&nps, &ps, cfg.num_draws, cfg, derive_seed(seed, 3))?;
    let selected: Vec<Vec<f64>> = select_weight_draws(&weights, cfg.num_weight_draws)?
        .into_iter()
        .map(|d| d.weights)
        .collect();
    let wcfg = WolcaConfig {
        adjust: cfg.adjust,
        exec: cfg.exec,
        ..cfg.wolca.clone()
    };
    let wolcan = fit_wolca(
        items,
        &selected,
        &weights.means,
        None,
        &wcfg,
        derive_seed(seed, 4),
    )?;
    let ones = vec![1.0; samples.nps.len()];
    let ucfg = WolcaConfig {
        adjust: false,
        ..wcfg
    };
    let unweighted = fit_wolca(
        items,
        std::slice::from_ref(&ones),
        &ones,
        None,
        &ucfg,
        derive_seed(seed, 5),
    )?;
    Ok(LcaReplicate {
        samples,
        weights,
        wolcan,
        unweighted,
    })
}

/// Set 2: WOLCAN (with and, when adjusted, without the variance adjustment)
/// against the unweighted model.
pub fn run_lca_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    cfg.validate()?;
    let pop = population_for(cfg)?;
    let truth = lca_truth(&pop);
    debug_assert_eq!(truth.pi.len(), NUM_CLASSES);
    let mut models = vec![MODEL_UNWEIGHTED.to_string(), MODEL_WOLCAN.to_string()];
    if cfg.adjust {
        models.push(MODEL_WOLCAN_UNADJUSTED.to_string());
    }
    let runs = map_range(cfg.replicates, cfg.exec, |r| {
        let fit = fit_lca_replicate(&pop, cfg, replicate_seed(cfg, r))?;
        let true_w = pop.true_weights(&fit.samples.nps);
        let record = |model: &str, wts: f64, k_hat: usize, est| -> Result<ReplicateRecord> {
            Ok(ReplicateRecord {
                scenario: cfg.id.clone(),
                replicate: r,
                model: model.to_string(),
                n_nps: fit.samples.nps.len(),
                n_ps: fit.samples.ps.len(),
                overlap: fit.samples.overlap(),
                wts_abs_bias: wts,
                k_hat: Some(k_hat),
                metrics: Some(lca_metrics(&truth, est)?),
            })
        };
        let unit_bias = weight_abs_bias(&vec![1.0; true_w.len()], &true_w);
        let wolcan_bias = weight_abs_bias(&fit.weights.means, &true_w);
        let mut out = vec![
            record(
                MODEL_UNWEIGHTED,
                unit_bias,
                fit.unweighted.k_hat,
                &fit.unweighted.estimates,
            )?,
            record(
                MODEL_WOLCAN,
                wolcan_bias,
                fit.wolcan.k_hat,
                &fit.wolcan.estimates,
            )?,
        ];
        if let Some(raw) = &fit.wolcan.unadjusted {
            out.push(record(
                MODEL_WOLCAN_UNADJUSTED,
                wolcan_bias,
                fit.wolcan.k_hat,
                raw,
            )?);
        }
        Ok(out)
    });
    Ok(collect(cfg, models, runs))
}

/// Runs a scenario of either set.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    if cfg.is_weight_scenario() {
        run_weight_scenario(cfg)
    } else {
        run_lca_scenario(cfg)
    }
}
