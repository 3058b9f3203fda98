use super::gibbs::PosteriorChain;
use crate::assign::hungarian;

/// Largest class count searched exhaustively; above it the Hungarian
/// algorithm is used.
pub const EXHAUSTIVE_MAX_K: usize = 10;

/// `cost[a * k + b]`: mean absolute difference between anchor class `a` and
/// class `b` of another chain, over all item/level cells.
pub fn alignment_cost(
    anchor_theta: &[f64],
    other_theta: &[f64],
    levels: &[usize],
    k: usize,
) -> Vec<f64> {
    let r_max = levels.iter().copied().max().unwrap_or(0);
    let cells = (levels.len() * r_max).max(1) as f64;
    let mut cost = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            let mut s = 0.0;
            for (j, &r) in levels.iter().enumerate() {
                let ia = (j * k + a) * r_max;
                let ib = (j * k + b) * r_max;
                for rr in 0..r {
                    s += (anchor_theta[ia + rr] - other_theta[ib + rr]).abs();
                }
            }
            cost[a * k + b] = s / cells;
        }
    }
    cost
}

/// Permutation `perm` (new class `a` = old class `perm[a]`) minimizing the
/// summed cost. Exact ties go to the lexicographically smallest permutation.
pub fn best_permutation(cost: &[f64], k: usize) -> Vec<usize> {
    if k > EXHAUSTIVE_MAX_K {
        return hungarian(cost, k, k)
            .into_iter()
            .map(|c| c.expect("square assignment"))
            .collect();
    }
    let mut best = (f64::INFINITY, (0..k).collect::<Vec<_>>());
    let mut current = Vec::with_capacity(k);
    let mut used = vec![false; k];
    search(cost, k, 0.0, &mut current, &mut used, &mut best);
    best.1
}

fn search(
    cost: &[f64],
    k: usize,
    partial: f64,
    current: &mut Vec<usize>,
    used: &mut [bool],
    best: &mut (f64, Vec<usize>),
) {
    if partial >= best.0 {
        return;
    }
    let a = current.len();
    if a == k {
        *best = (partial, current.clone());
        return;
    }
    for b in 0..k {
        if !used[b] {
            used[b] = true;
            current.push(b);
            search(cost, k, partial + cost[a * k + b], current, used, best);
            current.pop();
            used[b] = false;
        }
    }
}

/// Aligns every chain to the first one in place and returns the permutation
/// applied to each (identity for the anchor).
pub fn align_labels(chains: &mut [PosteriorChain]) -> Vec<Vec<usize>> {
    let Some(first) = chains.first() else {
        return Vec::new();
    };
    let k = first.num_classes;
    let levels = first.levels.clone();
    let anchor = first.theta_mean();
    let mut perms = vec![(0..k).collect::<Vec<_>>()];
    for chain in chains.iter_mut().skip(1) {
        let cost = alignment_cost(&anchor, &chain.theta_mean(), &levels, k);
        let perm = best_permutation(&cost, k);
        if perm.iter().enumerate().any(|(a, &b)| a != b) {
            chain.permute(&perm);
        }
        perms.push(perm);
    }
    perms
}
