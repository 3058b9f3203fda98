use serde::{Deserialize, Serialize};

use super::params::LcaParams;
use crate::error::{Error, Result};
use crate::items::ItemMatrix;
use crate::rng::{derive_seed, keyed_uniform, rng_from, Rng};
use crate::stats::{categorical_from_logs, dirichlet_into, median};

/// Items, normalized weights and stable unit identifiers. The identifiers key
/// the per-unit class draws, so reordering units does not change results.
#[derive(Debug, Clone, Copy)]
pub struct WeightedItems<'a> {
    pub items: &'a ItemMatrix,
    pub weights: &'a [f64],
    pub unit_ids: &'a [u64],
    /// Raise each unit's label probabilities to the power of its weight.
    /// Off by default: weights then enter only the `pi` and `theta` updates.
    pub tempered_labels: bool,
}

impl<'a> WeightedItems<'a> {
    pub fn new(items: &'a ItemMatrix, weights: &'a [f64], unit_ids: &'a [u64]) -> Result<Self> {
        let n = items.nrows();
        if weights.len() != n || unit_ids.len() != n {
            return Err(Error::Dimension(format!(
                "{n} units but {} weights and {} ids",
                weights.len(),
                unit_ids.len()
            )));
        }
        if n == 0 {
            return Err(Error::InvalidInput("item matrix has no rows".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput(
                "weights must be finite and non-negative".into(),
            ));
        }
        Ok(WeightedItems {
            items,
            weights,
            unit_ids,
            tempered_labels: false,
        })
    }

    pub fn with_tempered_labels(mut self, on: bool) -> Self {
        self.tempered_labels = on;
        self
    }

    pub fn len(&self) -> usize {
        self.items.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Rescales weights to sum to their count.
pub fn normalize_weights(w: &[f64]) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(Error::InvalidInput("empty weight vector".into()));
    }
    if w.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::InvalidInput(
            "weights must be positive and finite".into(),
        ));
    }
    let total: f64 = w.iter().sum();
    let scale = w.len() as f64 / total;
    Ok(w.iter().map(|v| v * scale).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsState {
    pub params: LcaParams,
    pub classes: Vec<usize>,
}

/// Dirichlet parameters of the full conditionals of `pi` and `theta` given
/// class labels. `theta_alpha` shares the layout of [`LcaParams::theta`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalParams {
    pub pi_alpha: Vec<f64>,
    pub theta_alpha: Vec<f64>,
}

pub fn conditional_params(
    classes: &[usize],
    data: &WeightedItems,
    prior_alpha: &[f64],
) -> ConditionalParams {
    let k = prior_alpha.len();
    let levels = data.items.levels();
    let r_max = data.items.max_levels();
    let mut pi_alpha = prior_alpha.to_vec();
    let mut theta_alpha = vec![0.0; levels.len() * k * r_max];
    for (j, &r) in levels.iter().enumerate() {
        for c in 0..k {
            let base = (j * k + c) * r_max;
            theta_alpha[base..base + r].fill(1.0);
        }
    }
    for (i, &c) in classes.iter().enumerate() {
        let w = data.weights[i];
        pi_alpha[c] += w;
        for (j, &x) in data.items.row(i).iter().enumerate() {
            theta_alpha[(j * k + c) * r_max + x as usize] += w;
        }
    }
    ConditionalParams {
        pi_alpha,
        theta_alpha,
    }
}

pub(crate) struct Workspace {
    log_pi: Vec<f64>,
    log_theta: Vec<f64>,
    logs: Vec<f64>,
    scratch: Vec<f64>,
    alpha_buf: Vec<f64>,
    out_buf: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new() -> Self {
        Workspace {
            log_pi: Vec::new(),
            log_theta: Vec::new(),
            logs: Vec::new(),
            scratch: Vec::new(),
            alpha_buf: Vec::new(),
            out_buf: Vec::new(),
        }
    }
}

/// Per-unit class log probabilities `w * log(pi_k prod_j theta_{j k x_ij})`,
/// unnormalized, written into `logs`.
fn class_logs(
    params: &LcaParams,
    log_pi: &[f64],
    log_theta: &[f64],
    row: &[u8],
    w: f64,
    logs: &mut Vec<f64>,
) {
    let k = params.num_classes();
    let r_max = params.max_levels();
    logs.clear();
    for c in 0..k {
        let mut l = log_pi[c];
        for (j, &x) in row.iter().enumerate() {
            l += log_theta[(j * k + c) * r_max + x as usize];
        }
        logs.push(w * l);
    }
}

/// One sweep: class labels, then `pi`, then `theta`. Returns the weighted
/// class occupancy after the label update.
pub(crate) fn gibbs_step(
    state: &mut GibbsState,
    data: &WeightedItems,
    prior_alpha: &[f64],
    key: (u64, u64),
    rng: &mut Rng,
    ws: &mut Workspace,
) -> Vec<f64> {
    let params = &state.params;
    let k = params.num_classes();
    ws.log_pi.clear();
    ws.log_pi.extend(params.pi.iter().map(|p| p.ln()));
    ws.log_theta.clear();
    ws.log_theta.extend(params.theta.iter().map(|t| t.ln()));
    state.classes.resize(data.len(), 0);
    for i in 0..data.len() {
        let w = if data.tempered_labels {
            data.weights[i]
        } else {
            1.0
        };
        class_logs(
            params,
            &ws.log_pi,
            &ws.log_theta,
            data.items.row(i),
            w,
            &mut ws.logs,
        );
        let u = keyed_uniform(key.0, key.1, data.unit_ids[i]);
        state.classes[i] = categorical_from_logs(&ws.logs, u, &mut ws.scratch);
    }
    let cond = conditional_params(&state.classes, data, prior_alpha);
    let occupancy: Vec<f64> = cond
        .pi_alpha
        .iter()
        .zip(prior_alpha)
        .map(|(a, p)| a - p)
        .collect();
    dirichlet_into(&cond.pi_alpha, rng, &mut state.params.pi);

    let r_max = state.params.max_levels();
    for (j, &r) in data.items.levels().iter().enumerate() {
        for c in 0..k {
            let base = (j * k + c) * r_max;
            ws.alpha_buf.clear();
            ws.alpha_buf
                .extend_from_slice(&cond.theta_alpha[base..base + r]);
            ws.out_buf.resize(r, 0.0);
            dirichlet_into(&ws.alpha_buf, rng, &mut ws.out_buf);
            state.params.theta[base..base + r].copy_from_slice(&ws.out_buf);
        }
    }
    occupancy
}

/// Posterior class-membership probabilities of every unit (rows sum to 1).
pub fn membership_probabilities(items: &ItemMatrix, params: &LcaParams) -> Vec<Vec<f64>> {
    let log_pi: Vec<f64> = params.pi.iter().map(|p| p.ln()).collect();
    let log_theta: Vec<f64> = params.theta.iter().map(|t| t.ln()).collect();
    let mut logs = Vec::new();
    (0..items.nrows())
        .map(|i| {
            class_logs(params, &log_pi, &log_theta, items.row(i), 1.0, &mut logs);
            let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl ChainSettings {
    pub fn new(iterations: usize, burn_in: usize, thin: usize) -> Result<Self> {
        let s = ChainSettings {
            iterations,
            burn_in,
            thin,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.burn_in >= self.iterations {
            return Err(Error::InvalidInput(format!(
                "chain needs thin >= 1 and burn-in < iterations (got {self:?})"
            )));
        }
        Ok(())
    }

    fn keeps(&self, iter: usize) -> bool {
        iter >= self.burn_in && (iter - self.burn_in).is_multiple_of(self.thin)
    }

    /// Number of post-burn-in thinned iterations.
    pub fn kept(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

fn nonempty(occupancy: &[f64], threshold: f64) -> usize {
    occupancy.iter().filter(|&&o| o > threshold).count()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptiveFit {
    pub k_hat: usize,
    /// Nonempty-class count at every post-burn-in thinned iteration.
    pub nonempty_counts: Vec<usize>,
    pub final_state: GibbsState,
    /// Weighted class occupancy at the last iteration.
    pub final_occupancy: Vec<f64>,
}

/// Overfitted sampler with a sparse Dir(1/K_max) prior on the class shares.
/// The number of classes is the median count of classes whose weighted
/// occupancy exceeds `threshold_fraction * n`.
pub fn adaptive_sampler(
    data: &WeightedItems,
    k_max: usize,
    settings: &ChainSettings,
    threshold_fraction: f64,
    seed: u64,
) -> Result<AdaptiveFit> {
    settings.validate()?;
    if k_max == 0 {
        return Err(Error::InvalidInput("K_max must be at least 1".into()));
    }
    if data.len() < k_max {
        log::warn!("sample size {} is below K_max = {k_max}", data.len());
    }
    let levels = data.items.levels().to_vec();
    let mut rng = rng_from(derive_seed(seed, u64::MAX));
    let mut params = LcaParams::uniform(k_max, &levels);
    let r_max = params.max_levels();
    for (j, &r) in levels.iter().enumerate() {
        for c in 0..k_max {
            let base = (j * k_max + c) * r_max;
            dirichlet_into(&vec![1.0; r], &mut rng, &mut params.theta[base..base + r]);
        }
    }
    let prior = vec![1.0 / k_max as f64; k_max];
    let threshold = threshold_fraction * data.total_weight();
    let mut state = GibbsState {
        params,
        classes: vec![0; data.len()],
    };
    let mut ws = Workspace::new();
    let mut counts = Vec::with_capacity(settings.kept());
    let mut occupancy = Vec::new();
    for iter in 0..settings.iterations {
        occupancy = gibbs_step(
            &mut state,
            data,
            &prior,
            (seed, iter as u64),
            &mut rng,
            &mut ws,
        );
        if settings.keeps(iter) {
            counts.push(nonempty(&occupancy, threshold));
        }
    }
    let as_f: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let k_hat = (median(&as_f).round() as usize).max(1);
    Ok(AdaptiveFit {
        k_hat,
        nonempty_counts: counts,
        final_state: state,
        final_occupancy: occupancy,
    })
}

impl AdaptiveFit {
    /// Starting values for a K-class sampler: the K most occupied classes of
    /// the final adaptive state with shares renormalized.
    pub fn initial_params(&self, k: usize) -> LcaParams {
        let p = &self.final_state.params;
        let kmax = p.num_classes();
        let mut order: Vec<usize> = (0..kmax).collect();
        order.sort_by(|&a, &b| {
            self.final_occupancy[b]
                .total_cmp(&self.final_occupancy[a])
                .then(a.cmp(&b))
        });
        let take: Vec<usize> = order.into_iter().take(k.min(kmax)).collect();
        let mut out = LcaParams::uniform(k, p.levels());
        let mut total = 0.0;
        for (new, &old) in take.iter().enumerate() {
            out.pi[new] = p.pi[old].max(1e-3);
            total += out.pi[new];
            for j in 0..p.num_items() {
                let src = p.theta_index(j, old, 0);
                let dst = out.theta_index(j, new, 0);
                let r = p.levels()[j];
                out.theta[dst..dst + r].copy_from_slice(&p.theta[src..src + r]);
            }
        }
        for v in out.pi.iter_mut().skip(take.len()) {
            *v = 1e-3;
            total += 1e-3;
        }
        for v in out.pi.iter_mut() {
            *v /= total;
        }
        out
    }
}

/// Retained draws of a fixed-K chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorChain {
    pub num_classes: usize,
    pub levels: Vec<usize>,
    pub pi: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    /// Class labels per retained draw (0-based).
    pub classes: Vec<Vec<u16>>,
    /// Nonempty-class count at every post-burn-in thinned iteration.
    pub nonempty_counts: Vec<usize>,
    /// False when fewer than the required share of iterations were retained.
    pub converged: bool,
}

impl PosteriorChain {
    pub fn num_draws(&self) -> usize {
        self.pi.len()
    }

    pub fn draw(&self, s: usize) -> LcaParams {
        LcaParams::from_parts_unchecked(
            self.pi[s].clone(),
            self.theta[s].clone(),
            self.levels.clone(),
        )
    }

    /// Posterior mean of `theta`, cellwise.
    pub fn theta_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.theta.first().map_or(0, Vec::len)];
        for t in &self.theta {
            for (a, b) in m.iter_mut().zip(t) {
                *a += b;
            }
        }
        let s = self.theta.len().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= s);
        m
    }

    /// Most frequent class of each unit across retained draws (lowest label on ties).
    pub fn modal_classes(&self) -> Vec<usize> {
        let n = self.classes.first().map_or(0, Vec::len);
        let k = self.num_classes;
        let mut counts = vec![0u32; n * k];
        for draw in &self.classes {
            for (i, &c) in draw.iter().enumerate() {
                counts[i * k + c as usize] += 1;
            }
        }
        (0..n)
            .map(|i| {
                let row = &counts[i * k..(i + 1) * k];
                let mut best = 0;
                for c in 1..k {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    /// Reorders classes in every draw so new class `k` is old class `perm[k]`.
    pub fn permute(&mut self, perm: &[usize]) {
        let mut inverse = vec![0u16; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new as u16;
        }
        for s in 0..self.num_draws() {
            let p = self.draw(s).permuted(perm);
            self.pi[s] = p.pi;
            self.theta[s] = p.theta;
            for c in self.classes[s].iter_mut() {
                *c = inverse[*c as usize];
            }
        }
    }
}

/// Sampler with a Dir(K,...,K) prior on the shares. Only iterations whose
/// nonempty-class count equals `k` are retained.
#[allow(clippy::too_many_arguments)]
pub fn fixed_sampler(
    data: &WeightedItems,
    k: usize,
    init: Option<LcaParams>,
    settings: &ChainSettings,
    threshold_fraction: f64,
    min_retained_fraction: f64,
    seed: u64,
) -> Result<PosteriorChain> {
    settings.validate()?;
    if k == 0 {
        return Err(Error::InvalidInput("fixed sampler needs K >= 1".into()));
    }
    let levels = data.items.levels().to_vec();
    let mut rng = rng_from(derive_seed(seed, u64::MAX));
    let params = match init {
        Some(p) if p.num_classes() == k && p.levels() == levels.as_slice() => p,
        Some(_) => {
            return Err(Error::Dimension(
                "initial parameters do not match K or item levels".into(),
            ))
        }
        None => {
            let mut p = LcaParams::uniform(k, &levels);
            let r_max = p.max_levels();
            for (j, &r) in levels.iter().enumerate() {
                for c in 0..k {
                    let base = (j * k + c) * r_max;
                    dirichlet_into(&vec![1.0; r], &mut rng, &mut p.theta[base..base + r]);
                }
            }
            p
        }
    };
    let prior = vec![k as f64; k];
    let threshold = threshold_fraction * data.total_weight();
    let mut state = GibbsState {
        params,
        classes: vec![0; data.len()],
    };
    let mut ws = Workspace::new();
    let mut chain = PosteriorChain {
        num_classes: k,
        levels,
        pi: Vec::new(),
        theta: Vec::new(),
        classes: Vec::new(),
        nonempty_counts: Vec::with_capacity(settings.kept()),
        converged: true,
    };
    for iter in 0..settings.iterations {
        let occupancy = gibbs_step(
            &mut state,
            data,
            &prior,
            (seed, iter as u64),
            &mut rng,
            &mut ws,
        );
        if settings.keeps(iter) {
            let ne = nonempty(&occupancy, threshold);
            chain.nonempty_counts.push(ne);
            if ne == k {
                chain.pi.push(state.params.pi.clone());
                chain.theta.push(state.params.theta.clone());
                chain
                    .classes
                    .push(state.classes.iter().map(|&c| c as u16).collect());
            }
        }
    }
    let considered = chain.nonempty_counts.len().max(1);
    if (chain.num_draws() as f64) < min_retained_fraction * considered as f64 {
        log::warn!(
            "fixed sampler kept {} of {} iterations with {k} nonempty classes",
            chain.num_draws(),
            considered
        );
        chain.converged = false;
    }
    Ok(chain)
}
