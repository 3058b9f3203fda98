use nalgebra::DMatrix;

use super::gibbs::{PosteriorChain, WeightedItems};
use super::params::LcaParams;
use crate::error::{Error, Result};
use crate::sandwich::sandwich_adjust;

/// Minimum number of retained draws for the variance adjustment.
pub const MIN_ADJUST_DRAWS: usize = 200;

const LOG_FLOOR: f64 = 1e-300;

/// Dimension of the unconstrained parameterization.
pub fn unconstrained_dim(k: usize, levels: &[usize]) -> usize {
    (k - 1) + k * levels.iter().map(|r| r - 1).sum::<usize>()
}

/// Additive log-ratio coordinates with the last category as reference:
/// `pi` first, then each `theta_jk` row in item-major, class-minor order.
pub fn to_unconstrained(p: &LcaParams) -> Vec<f64> {
    let k = p.num_classes();
    let mut out = Vec::with_capacity(unconstrained_dim(k, p.levels()));
    alr_into(&p.pi, &mut out);
    for j in 0..p.num_items() {
        for c in 0..k {
            alr_into(p.theta_row(j, c), &mut out);
        }
    }
    out
}

fn alr_into(v: &[f64], out: &mut Vec<f64>) {
    let last = v[v.len() - 1].max(LOG_FLOOR).ln();
    out.extend(
        v[..v.len() - 1]
            .iter()
            .map(|x| x.max(LOG_FLOOR).ln() - last),
    );
}

fn inverse_alr(xi: &[f64], out: &mut [f64]) {
    let m = xi.iter().copied().fold(0.0f64, f64::max);
    let mut total = (-m).exp();
    for (o, x) in out.iter_mut().zip(xi) {
        *o = (x - m).exp();
        total += *o;
    }
    out[xi.len()] = (-m).exp();
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub fn from_unconstrained(xi: &[f64], k: usize, levels: &[usize]) -> Result<LcaParams> {
    if xi.len() != unconstrained_dim(k, levels) {
        return Err(Error::Dimension(format!(
            "unconstrained vector has length {}, expected {}",
            xi.len(),
            unconstrained_dim(k, levels)
        )));
    }
    let mut p = LcaParams::uniform(k, levels);
    let mut at = k - 1;
    inverse_alr(&xi[..at], &mut p.pi);
    for (j, &r) in levels.iter().enumerate() {
        for c in 0..k {
            let base = p.theta_index(j, c, 0);
            inverse_alr(&xi[at..at + r - 1], &mut p.theta[base..base + r]);
            at += r - 1;
        }
    }
    Ok(p)
}

/// Negative Hessian of the weighted complete-data log posterior and the
/// outer-product score matrix, both in unconstrained coordinates, with the
/// class labels fixed at `classes`.
pub fn information_matrices(
    params: &LcaParams,
    classes: &[usize],
    data: &WeightedItems,
    prior_alpha: &[f64],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = params.num_classes();
    let levels = params.levels();
    let p = unconstrained_dim(k, levels);
    // Offset of each theta_jk block.
    let mut offsets = vec![0usize; levels.len() * k];
    let mut at = k - 1;
    for (j, &r) in levels.iter().enumerate() {
        for c in 0..k {
            offsets[j * k + c] = at;
            at += r - 1;
        }
    }
    let mut class_weight = vec![0.0; k];
    for (i, &c) in classes.iter().enumerate() {
        class_weight[c] += data.weights[i];
    }
    let total: f64 = data.weights.iter().sum();

    let mut h = DMatrix::zeros(p, p);
    let prior_total: f64 = prior_alpha.iter().sum();
    add_multinomial_block(&mut h, 0, &params.pi, total + prior_total);
    for (j, &r) in levels.iter().enumerate() {
        for c in 0..k {
            add_multinomial_block(
                &mut h,
                offsets[j * k + c],
                params.theta_row(j, c),
                class_weight[c] + r as f64,
            );
        }
    }

    let mut j_mat = DMatrix::zeros(p, p);
    let mut idx: Vec<usize> = Vec::new();
    let mut val: Vec<f64> = Vec::new();
    for (i, &c) in classes.iter().enumerate() {
        let w = data.weights[i];
        idx.clear();
        val.clear();
        for kk in 0..k - 1 {
            idx.push(kk);
            val.push(w * (f64::from(u8::from(kk == c)) - params.pi[kk]));
        }
        for (j, &x) in data.items.row(i).iter().enumerate() {
            let row = params.theta_row(j, c);
            let off = offsets[j * k + c];
            for rr in 0..levels[j] - 1 {
                idx.push(off + rr);
                val.push(w * (f64::from(u8::from(rr == x as usize)) - row[rr]));
            }
        }
        for (a, &ia) in idx.iter().enumerate() {
            for (b, &ib) in idx.iter().enumerate() {
                j_mat[(ia, ib)] += val[a] * val[b];
            }
        }
    }
    (h, j_mat)
}

/// Adds `scale * (diag(q) - q q')` over the first `len - 1` categories.
fn add_multinomial_block(h: &mut DMatrix<f64>, offset: usize, probs: &[f64], scale: f64) {
    let d = probs.len() - 1;
    for a in 0..d {
        for b in 0..d {
            let mut v = -probs[a] * probs[b];
            if a == b {
                v += probs[a];
            }
            h[(offset + a, offset + b)] += scale * v;
        }
    }
}

/// Rescales the retained draws of `chain` so their spread matches the
/// sandwich covariance of the weighted pseudo-posterior. Class labels are
/// left untouched.
pub fn variance_adjust(
    chain: &PosteriorChain,
    data: &WeightedItems,
    prior_alpha: &[f64],
) -> Result<PosteriorChain> {
    let k = chain.num_classes;
    let p = unconstrained_dim(k, &chain.levels);
    let s = chain.num_draws();
    if s < MIN_ADJUST_DRAWS || s <= p {
        return Err(Error::InvalidInput(format!(
            "variance adjustment needs at least {} draws for {p} parameters, chain has {s}",
            MIN_ADJUST_DRAWS.max(p + 1)
        )));
    }
    let xi: Vec<Vec<f64>> = (0..s).map(|d| to_unconstrained(&chain.draw(d))).collect();
    let mean: Vec<f64> = (0..p)
        .map(|c| xi.iter().map(|v| v[c]).sum::<f64>() / s as f64)
        .collect();
    let at_mean = from_unconstrained(&mean, k, &chain.levels)?;
    let classes = chain.modal_classes();
    let (h, j) = information_matrices(&at_mean, &classes, data, prior_alpha);
    let adjusted = sandwich_adjust(&xi, &h, &j)?;
    let mut out = chain.clone();
    for (d, v) in adjusted.draws.iter().enumerate() {
        let params = from_unconstrained(v, k, &chain.levels)?;
        out.pi[d] = params.pi;
        out.theta[d] = params.theta;
    }
    Ok(out)
}
