//! Weighted overfitted latent class analysis.
//!
//! An adaptive run with a sparse prior on many classes picks the number of
//! classes K. For each selected pseudo-weight draw a fixed-K chain is run,
//! optionally variance adjusted, label aligned to the first chain and stacked.

mod adjust;
mod align;
mod gibbs;
mod params;

pub use adjust::{
    from_unconstrained, information_matrices, to_unconstrained, unconstrained_dim, variance_adjust,
    MIN_ADJUST_DRAWS,
};
pub use align::{align_labels, alignment_cost, best_permutation, EXHAUSTIVE_MAX_K};
pub use gibbs::{
    adaptive_sampler, conditional_params, fixed_sampler, membership_probabilities,
    normalize_weights, AdaptiveFit, ChainSettings, ConditionalParams, GibbsState, PosteriorChain,
    WeightedItems,
};
pub use params::LcaParams;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::items::ItemMatrix;
use crate::par::{map_range, ExecMode};
use crate::rng::{derive_seed, keyed_uniform};
use crate::stats::{categorical, quantile_sorted};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WolcaConfig {
    pub k_max: usize,
    pub adaptive: ChainSettings,
    pub fixed: ChainSettings,
    /// A class is nonempty when its weighted occupancy exceeds this share of n.
    pub nonempty_threshold: f64,
    pub min_retained_fraction: f64,
    pub adjust: bool,
    /// Weight the label step as well as the parameter updates.
    #[serde(default)]
    pub tempered_labels: bool,
    #[serde(default)]
    pub exec: ExecMode,
}

impl Default for WolcaConfig {
    fn default() -> Self {
        WolcaConfig {
            k_max: 30,
            adaptive: ChainSettings {
                iterations: 10_000,
                burn_in: 5_000,
                thin: 5,
            },
            fixed: ChainSettings {
                iterations: 20_000,
                burn_in: 10_000,
                thin: 5,
            },
            nonempty_threshold: 0.05,
            min_retained_fraction: 0.25,
            adjust: true,
            tempered_labels: false,
            exec: ExecMode::default(),
        }
    }
}

/// Aligned draws stacked across weight draws.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StackedPosterior {
    pub num_classes: usize,
    pub levels: Vec<usize>,
    pub pi: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    /// Index of the weight draw each sample came from.
    pub provenance: Vec<usize>,
}

impl StackedPosterior {
    pub fn stack(chains: &[(usize, &PosteriorChain)]) -> Result<Self> {
        let Some((_, first)) = chains.first() else {
            return Err(Error::InvalidInput("nothing to stack".into()));
        };
        let mut out = StackedPosterior {
            num_classes: first.num_classes,
            levels: first.levels.clone(),
            pi: Vec::new(),
            theta: Vec::new(),
            provenance: Vec::new(),
        };
        for &(d, chain) in chains {
            if chain.num_classes != out.num_classes || chain.levels != out.levels {
                return Err(Error::Dimension(
                    "stacked chains disagree on K or item levels".into(),
                ));
            }
            out.pi.extend(chain.pi.iter().cloned());
            out.theta.extend(chain.theta.iter().cloned());
            out.provenance
                .extend(std::iter::repeat_n(d, chain.num_draws()));
        }
        Ok(out)
    }

    pub fn num_draws(&self) -> usize {
        self.pi.len()
    }
}

/// Posterior medians (renormalized onto each simplex) and equal-tailed 95%
/// intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcaEstimates {
    pub params: LcaParams,
    pub pi_lower: Vec<f64>,
    pub pi_upper: Vec<f64>,
    pub theta_lower: Vec<f64>,
    pub theta_upper: Vec<f64>,
}

fn cell_summary(values: &mut [f64]) -> (f64, f64, f64) {
    values.sort_by(f64::total_cmp);
    (
        quantile_sorted(values, 0.5),
        quantile_sorted(values, 0.025),
        quantile_sorted(values, 0.975),
    )
}

fn renormalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        let n = v.len() as f64;
        v.iter_mut().for_each(|x| *x = 1.0 / n);
    }
}

pub fn summarize(stacked: &StackedPosterior) -> Result<LcaEstimates> {
    let s = stacked.num_draws();
    if s == 0 {
        return Err(Error::InvalidInput("empty stacked posterior".into()));
    }
    let k = stacked.num_classes;
    let mut col = vec![0.0; s];
    let mut pi = vec![0.0; k];
    let mut pi_lower = vec![0.0; k];
    let mut pi_upper = vec![0.0; k];
    for c in 0..k {
        for (x, d) in col.iter_mut().zip(&stacked.pi) {
            *x = d[c];
        }
        (pi[c], pi_lower[c], pi_upper[c]) = cell_summary(&mut col);
    }
    renormalize(&mut pi);
    let cells = stacked.theta[0].len();
    let mut theta = vec![0.0; cells];
    let mut theta_lower = vec![0.0; cells];
    let mut theta_upper = vec![0.0; cells];
    for cell in 0..cells {
        for (x, d) in col.iter_mut().zip(&stacked.theta) {
            *x = d[cell];
        }
        (theta[cell], theta_lower[cell], theta_upper[cell]) = cell_summary(&mut col);
    }
    let mut params = LcaParams::from_parts_unchecked(pi, theta, stacked.levels.clone());
    for j in 0..params.num_items() {
        for c in 0..k {
            let base = params.theta_index(j, c, 0);
            let r = params.levels()[j];
            renormalize(&mut params.theta[base..base + r]);
        }
    }
    Ok(LcaEstimates {
        params,
        pi_lower,
        pi_upper,
        theta_lower,
        theta_upper,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassAssignment {
    /// 0-based class per unit.
    pub classes: Vec<usize>,
    /// Posterior membership probabilities, one row per unit.
    pub membership: Vec<Vec<f64>>,
}

/// Draws each unit's class from its posterior membership probabilities.
pub fn assign_classes(
    items: &ItemMatrix,
    params: &LcaParams,
    seed: u64,
) -> Result<ClassAssignment> {
    let ids: Vec<u64> = (0..items.nrows() as u64).collect();
    assign_with_ids(items, params, &ids, seed)
}

fn assign_with_ids(
    items: &ItemMatrix,
    params: &LcaParams,
    ids: &[u64],
    seed: u64,
) -> Result<ClassAssignment> {
    params.validate()?;
    if items.levels() != params.levels() {
        return Err(Error::Dimension(
            "item levels do not match the model".into(),
        ));
    }
    let membership = membership_probabilities(items, params);
    let classes = membership
        .iter()
        .enumerate()
        .map(|(i, p)| categorical(p, keyed_uniform(seed, 0, ids[i])))
        .collect();
    Ok(ClassAssignment {
        classes,
        membership,
    })
}

/// Run record suitable for writing next to results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WolcaManifest {
    pub seed: u64,
    pub config: WolcaConfig,
    pub num_units: usize,
    pub num_weight_draws: usize,
    pub k_hat: usize,
    pub adaptive_nonempty_counts: Vec<usize>,
    pub retained_draws: Vec<usize>,
    pub considered_iterations: Vec<usize>,
    pub converged: Vec<bool>,
    /// Weight draws whose chains were left out of the stack.
    pub dropped_draws: Vec<usize>,
    pub permutations: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WolcaFit {
    pub k_hat: usize,
    pub stacked: StackedPosterior,
    pub estimates: LcaEstimates,
    /// Summary of the same chains before variance adjustment, when it was applied.
    pub unadjusted: Option<LcaEstimates>,
    pub assignment: ClassAssignment,
    pub manifest: WolcaManifest,
}

/// Full pipeline. `adaptive_weights` (usually the per-unit mean pseudo-weights)
/// drive the adaptive run; each entry of `weight_draws` gets its own fixed
/// chain. Weights are normalized internally. `unit_ids` key the per-unit
/// random draws (defaults to row positions).
pub fn fit_wolca(
    items: &ItemMatrix,
    weight_draws: &[Vec<f64>],
    adaptive_weights: &[f64],
    unit_ids: Option<&[u64]>,
    cfg: &WolcaConfig,
    seed: u64,
) -> Result<WolcaFit> {
    let n = items.nrows();
    if weight_draws.is_empty() {
        return Err(Error::InvalidInput("need at least one weight draw".into()));
    }
    cfg.adaptive.validate()?;
    cfg.fixed.validate()?;
    let unit_ids: Vec<u64> = match unit_ids {
        Some(ids) => ids.to_vec(),
        None => (0..n as u64).collect(),
    };
    let adaptive_w = normalize_weights(adaptive_weights)?;
    let data = WeightedItems::new(items, &adaptive_w, &unit_ids)?
        .with_tempered_labels(cfg.tempered_labels);
    let adaptive = adaptive_sampler(
        &data,
        cfg.k_max,
        &cfg.adaptive,
        cfg.nonempty_threshold,
        derive_seed(seed, 0),
    )?;
    let k_hat = adaptive.k_hat;
    log::info!("adaptive sampler chose K = {k_hat}");
    let init = adaptive.initial_params(k_hat);
    let prior = vec![k_hat as f64; k_hat];

    let normalized: Vec<Vec<f64>> = weight_draws
        .iter()
        .map(|w| normalize_weights(w))
        .collect::<Result<_>>()?;
    for w in &normalized {
        if w.len() != n {
            return Err(Error::Dimension(format!(
                "weight draw has {} entries for {n} units",
                w.len()
            )));
        }
    }

    type ChainOut = Result<(PosteriorChain, Option<Result<PosteriorChain>>)>;
    let runs: Vec<ChainOut> = map_range(normalized.len(), cfg.exec, |d| {
        let data = WeightedItems::new(items, &normalized[d], &unit_ids)?
            .with_tempered_labels(cfg.tempered_labels);
        let chain = fixed_sampler(
            &data,
            k_hat,
            Some(init.clone()),
            &cfg.fixed,
            cfg.nonempty_threshold,
            cfg.min_retained_fraction,
            derive_seed(seed, 1 + d as u64),
        )?;
        let adjusted = cfg.adjust.then(|| variance_adjust(&chain, &data, &prior));
        Ok((chain, adjusted))
    });

    let mut raw = Vec::new();
    let mut adjusted = Vec::new();
    let mut retained = Vec::new();
    let mut considered = Vec::new();
    let mut converged = Vec::new();
    let mut dropped = Vec::new();
    for (d, run) in runs.into_iter().enumerate() {
        let (chain, adj) = run?;
        retained.push(chain.num_draws());
        considered.push(chain.nonempty_counts.len());
        converged.push(chain.converged);
        let adj = match adj {
            Some(Ok(a)) => Some(a),
            Some(Err(e)) => {
                log::warn!("dropping weight draw {d}: {e}");
                dropped.push(d);
                continue;
            }
            None => None,
        };
        if chain.num_draws() == 0 {
            log::warn!("dropping weight draw {d}: no iterations with {k_hat} nonempty classes");
            dropped.push(d);
            continue;
        }
        raw.push((d, chain));
        if let Some(a) = adj {
            adjusted.push(a);
        }
    }
    if raw.is_empty() {
        return Err(Error::NonConvergence(format!(
            "no fixed-phase chain produced usable draws with K = {k_hat}"
        )));
    }

    let mut raw_chains: Vec<PosteriorChain> = raw.iter().map(|(_, c)| c.clone()).collect();
    let permutations = align_labels(&mut raw_chains);
    for (chain, perm) in adjusted.iter_mut().zip(&permutations) {
        chain.permute(perm);
    }
    let kept_ids: Vec<usize> = raw.iter().map(|(d, _)| *d).collect();
    let raw_stack = StackedPosterior::stack(
        &kept_ids
            .iter()
            .copied()
            .zip(raw_chains.iter())
            .collect::<Vec<_>>(),
    )?;
    let (stacked, unadjusted) = if cfg.adjust {
        let adj_stack = StackedPosterior::stack(
            &kept_ids
                .iter()
                .copied()
                .zip(adjusted.iter())
                .collect::<Vec<_>>(),
        )?;
        (adj_stack, Some(summarize(&raw_stack)?))
    } else {
        (raw_stack, None)
    };
    let estimates = summarize(&stacked)?;
    let assignment = assign_with_ids(items, &estimates.params, &unit_ids, derive_seed(seed, 2))?;
    let manifest = WolcaManifest {
        seed,
        config: cfg.clone(),
        num_units: n,
        num_weight_draws: weight_draws.len(),
        k_hat,
        adaptive_nonempty_counts: adaptive.nonempty_counts,
        retained_draws: retained,
        considered_iterations: considered,
        converged,
        dropped_draws: dropped,
        permutations,
    };
    Ok(WolcaFit {
        k_hat,
        stacked,
        estimates,
        unadjusted,
        assignment,
        manifest,
    })
}
