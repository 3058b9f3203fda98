//! Backfitting MCMC over a sum of trees: GROW / PRUNE / CHANGE proposals with
//! leaf means integrated out, followed by conjugate leaf and variance draws.

use rand::Rng as _;
use rand_distr::{Distribution, Gamma};

use super::tree::{DecisionTree, NodeKind, TreeNode};
use super::{BartConfig, IterationDiagnostics};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::stats::{std_normal, truncated_normal_unit};

const NONE: u32 = u32::MAX;
const P_GROW: f64 = 0.25;
const P_PRUNE: f64 = 0.25;

/// Candidate split values per variable (sorted, unique, strictly below the max).
#[derive(Debug, Clone)]
pub(crate) struct CutGrid {
    pub cuts: Vec<Vec<f64>>,
}

impl CutGrid {
    pub fn from_quantiles(x: &Matrix, num_cutpoints: usize) -> Self {
        let cuts = (0..x.ncols())
            .map(|j| {
                let mut col = x.column(j);
                col.sort_by(f64::total_cmp);
                let max = *col.last().unwrap();
                let mut v: Vec<f64> = (1..=num_cutpoints)
                    .map(|i| {
                        crate::stats::quantile_sorted(&col, i as f64 / (num_cutpoints + 1) as f64)
                    })
                    .filter(|&c| c < max)
                    .collect();
                v.dedup();
                v
            })
            .collect();
        Self { cuts }
    }
}

#[derive(Debug, Clone, Copy)]
struct WorkNode {
    parent: u32,
    left: u32,
    right: u32,
    var: u32,
    cut: u32,
    depth: u32,
    value: f64,
    leaf: bool,
    alive: bool,
}

impl WorkNode {
    fn leaf(parent: u32, depth: u32, value: f64) -> Self {
        Self {
            parent,
            left: NONE,
            right: NONE,
            var: 0,
            cut: 0,
            depth,
            value,
            leaf: true,
            alive: true,
        }
    }
}

#[derive(Debug, Clone)]
struct WorkTree {
    nodes: Vec<WorkNode>,
    free: Vec<u32>,
    leaf_of: Vec<u32>,
}

impl WorkTree {
    fn new(n: usize, value: f64) -> Self {
        Self {
            nodes: vec![WorkNode::leaf(NONE, 0, value)],
            free: Vec::new(),
            leaf_of: vec![0; n],
        }
    }

    fn alloc(&mut self, node: WorkNode) -> u32 {
        if let Some(id) = self.free.pop() {
            self.nodes[id as usize] = node;
            id
        } else {
            self.nodes.push(node);
            (self.nodes.len() - 1) as u32
        }
    }

    fn leaves(&self) -> Vec<u32> {
        (0..self.nodes.len() as u32)
            .filter(|&i| self.nodes[i as usize].alive && self.nodes[i as usize].leaf)
            .collect()
    }

    fn is_nog(&self, id: u32) -> bool {
        let n = &self.nodes[id as usize];
        n.alive && !n.leaf && self.nodes[n.left as usize].leaf && self.nodes[n.right as usize].leaf
    }

    fn nogs(&self) -> Vec<u32> {
        (0..self.nodes.len() as u32)
            .filter(|&i| self.is_nog(i))
            .collect()
    }

    /// Half-open cut-index bounds per variable for the region of `id`.
    fn region(&self, id: u32, grid: &CutGrid, lo: &mut [u32], hi: &mut [u32]) {
        for (v, c) in grid.cuts.iter().enumerate() {
            lo[v] = 0;
            hi[v] = c.len() as u32;
        }
        let mut child = id;
        let mut p = self.nodes[id as usize].parent;
        while p != NONE {
            let pn = &self.nodes[p as usize];
            let v = pn.var as usize;
            if pn.left == child {
                hi[v] = hi[v].min(pn.cut);
            } else {
                lo[v] = lo[v].max(pn.cut + 1);
            }
            child = p;
            p = pn.parent;
        }
    }

    fn depth(&self) -> u32 {
        self.nodes
            .iter()
            .filter(|n| n.alive && n.leaf)
            .map(|n| n.depth)
            .max()
            .unwrap_or(0)
    }

    fn compact(&self, grid: &CutGrid) -> DecisionTree {
        let mut out: Vec<TreeNode> = Vec::new();
        // (work id, parent index in out, is-left)
        let mut stack: Vec<(u32, Option<usize>, bool)> = vec![(0, None, false)];
        while let Some((wid, parent, is_left)) = stack.pop() {
            let w = &self.nodes[wid as usize];
            let me = out.len();
            let kind = if w.leaf {
                NodeKind::Leaf { value: w.value }
            } else {
                NodeKind::Split {
                    var: w.var as usize,
                    cut: grid.cuts[w.var as usize][w.cut as usize],
                    left: usize::MAX,
                    right: usize::MAX,
                }
            };
            out.push(TreeNode { parent, kind });
            if let Some(p) = parent {
                if let NodeKind::Split { left, right, .. } = &mut out[p].kind {
                    if is_left {
                        *left = me;
                    } else {
                        *right = me;
                    }
                }
            }
            if !w.leaf {
                stack.push((w.right, Some(me), false));
                stack.push((w.left, Some(me), true));
            }
        }
        DecisionTree::from_nodes(out).expect("compacted tree is well formed")
    }
}

/// What the trees are fitted to.
pub(crate) enum Response<'a> {
    /// Standardized continuous response.
    Continuous { y: Vec<f64>, lambda: f64 },
    /// Binary labels with a fixed probit offset.
    Probit { labels: &'a [bool], offset: f64 },
}

pub(crate) struct FitOutput {
    pub draws: Vec<Vec<DecisionTree>>,
    pub sigma2: Vec<f64>,
    /// Retained in-sample sums of trees (latent scale), row-major n x M.
    pub train_fit: Option<Matrix>,
    pub diagnostics: Vec<IterationDiagnostics>,
}

struct Sampler<'a> {
    x: &'a Matrix,
    grid: &'a CutGrid,
    cfg: &'a BartConfig,
    tau2: f64,
    sigma2: f64,
    trees: Vec<WorkTree>,
    fit: Vec<f64>,
    resid: Vec<f64>,
    lo: Vec<u32>,
    hi: Vec<u32>,
}

#[inline]
fn leaf_loglik(n: f64, s: f64, sigma2: f64, tau2: f64) -> f64 {
    let d = sigma2 + n * tau2;
    0.5 * (sigma2 / d).ln() + tau2 * s * s / (2.0 * sigma2 * d)
}

impl<'a> Sampler<'a> {
    fn split_prob(&self, depth: u32) -> f64 {
        if let Some(max) = self.cfg.max_depth {
            if depth as usize >= max {
                return 0.0;
            }
        }
        self.cfg.alpha * (1.0 + depth as f64).powf(-self.cfg.beta)
    }

    /// Variables with at least one admissible cut in the current `lo/hi` region.
    fn available_vars(&self) -> Vec<usize> {
        (0..self.grid.cuts.len())
            .filter(|&v| self.hi[v] > self.lo[v])
            .collect()
    }

    fn stats_for(&self, t: usize, node: u32) -> (f64, f64) {
        let tree = &self.trees[t];
        let mut n = 0.0;
        let mut s = 0.0;
        for (i, &l) in tree.leaf_of.iter().enumerate() {
            if l == node {
                n += 1.0;
                s += self.resid[i];
            }
        }
        (n, s)
    }

    /// Sufficient statistics of a prospective split of the rows currently in
    /// any of `nodes`.
    fn split_stats(&self, t: usize, nodes: [u32; 2], var: usize, cut: f64) -> [(f64, f64); 2] {
        let tree = &self.trees[t];
        let mut st = [(0.0, 0.0); 2];
        for (i, &l) in tree.leaf_of.iter().enumerate() {
            if l == nodes[0] || l == nodes[1] {
                let side = usize::from(self.x.get(i, var) > cut);
                st[side].0 += 1.0;
                st[side].1 += self.resid[i];
            }
        }
        st
    }

    fn update_tree(&mut self, t: usize, rng: &mut Rng) {
        let nleaves = self.trees[t].leaves().len();
        let u: f64 = rng.random();
        if nleaves == 1 || u < P_GROW {
            self.grow(t, rng);
        } else if u < P_GROW + P_PRUNE {
            self.prune(t, rng);
        } else {
            self.change(t, rng);
        }
        self.draw_leaves(t, rng);
    }

    fn grow(&mut self, t: usize, rng: &mut Rng) {
        let leaves = self.trees[t].leaves();
        let b = leaves.len();
        let leaf = leaves[rng.random_range(0..b)];
        let depth = self.trees[t].nodes[leaf as usize].depth;
        let ps = self.split_prob(depth);
        if ps <= 0.0 {
            return;
        }
        let (mut lo, mut hi) = (std::mem::take(&mut self.lo), std::mem::take(&mut self.hi));
        self.trees[t].region(leaf, self.grid, &mut lo, &mut hi);
        self.lo = lo;
        self.hi = hi;
        let vars = self.available_vars();
        if vars.is_empty() {
            return;
        }
        let var = vars[rng.random_range(0..vars.len())];
        let cut_idx = rng.random_range(self.lo[var]..self.hi[var]);
        let cut = self.grid.cuts[var][cut_idx as usize];
        let [(nl, sl), (nr, sr)] = self.split_stats(t, [leaf, leaf], var, cut);
        let min = self.cfg.min_leaf_size as f64;
        if nl < min || nr < min {
            return;
        }
        let tree = &self.trees[t];
        let parent = tree.nodes[leaf as usize].parent;
        let nog_old = tree.nogs().len();
        let parent_was_nog = parent != NONE && tree.is_nog(parent);
        let nog_new = nog_old + 1 - usize::from(parent_was_nog);
        let p_grow_old = if b == 1 { 1.0 } else { P_GROW };
        let ps_child = self.split_prob(depth + 1);
        let log_ratio = (P_PRUNE / nog_new as f64).ln() - (p_grow_old / b as f64).ln()
            + ps.ln()
            + 2.0 * (1.0 - ps_child).ln()
            - (1.0 - ps).ln()
            + leaf_loglik(nl, sl, self.sigma2, self.tau2)
            + leaf_loglik(nr, sr, self.sigma2, self.tau2)
            - leaf_loglik(nl + nr, sl + sr, self.sigma2, self.tau2);
        if rng.random::<f64>().ln() < log_ratio {
            let tree = &mut self.trees[t];
            let l = tree.alloc(WorkNode::leaf(leaf, depth + 1, 0.0));
            let r = tree.alloc(WorkNode::leaf(leaf, depth + 1, 0.0));
            let node = &mut tree.nodes[leaf as usize];
            node.leaf = false;
            node.left = l;
            node.right = r;
            node.var = var as u32;
            node.cut = cut_idx;
            for i in 0..tree.leaf_of.len() {
                if tree.leaf_of[i] == leaf {
                    tree.leaf_of[i] = if self.x.get(i, var) <= cut { l } else { r };
                }
            }
        }
    }

    fn prune(&mut self, t: usize, rng: &mut Rng) {
        let tree = &self.trees[t];
        let nogs = tree.nogs();
        if nogs.is_empty() {
            return;
        }
        let node = nogs[rng.random_range(0..nogs.len())];
        let w = tree.nodes[node as usize];
        let depth = w.depth;
        let b_new = tree.leaves().len() - 1;
        let p_grow_new = if node == 0 { 1.0 } else { P_GROW };
        let (nl, sl) = self.stats_for(t, w.left);
        let (nr, sr) = self.stats_for(t, w.right);
        let ps = self.split_prob(depth);
        let ps_child = self.split_prob(depth + 1);
        let log_ratio = (p_grow_new / b_new as f64).ln() - (P_PRUNE / nogs.len() as f64).ln()
            + (1.0 - ps).ln()
            - ps.ln()
            - 2.0 * (1.0 - ps_child).ln()
            + leaf_loglik(nl + nr, sl + sr, self.sigma2, self.tau2)
            - leaf_loglik(nl, sl, self.sigma2, self.tau2)
            - leaf_loglik(nr, sr, self.sigma2, self.tau2);
        if rng.random::<f64>().ln() < log_ratio {
            let tree = &mut self.trees[t];
            for c in [w.left, w.right] {
                tree.nodes[c as usize].alive = false;
                tree.free.push(c);
            }
            let n = &mut tree.nodes[node as usize];
            n.leaf = true;
            n.left = NONE;
            n.right = NONE;
            for l in tree.leaf_of.iter_mut() {
                if *l == w.left || *l == w.right {
                    *l = node;
                }
            }
        }
    }

    fn change(&mut self, t: usize, rng: &mut Rng) {
        let nogs = self.trees[t].nogs();
        if nogs.is_empty() {
            return;
        }
        let node = nogs[rng.random_range(0..nogs.len())];
        let w = self.trees[t].nodes[node as usize];
        let (mut lo, mut hi) = (std::mem::take(&mut self.lo), std::mem::take(&mut self.hi));
        self.trees[t].region(node, self.grid, &mut lo, &mut hi);
        self.lo = lo;
        self.hi = hi;
        let vars = self.available_vars();
        let var = vars[rng.random_range(0..vars.len())];
        let cut_idx = rng.random_range(self.lo[var]..self.hi[var]);
        let cut = self.grid.cuts[var][cut_idx as usize];
        let [(nl, sl), (nr, sr)] = self.split_stats(t, [w.left, w.right], var, cut);
        let min = self.cfg.min_leaf_size as f64;
        if nl < min || nr < min {
            return;
        }
        let (ol, osl) = self.stats_for(t, w.left);
        let (or, osr) = self.stats_for(t, w.right);
        let log_ratio = leaf_loglik(nl, sl, self.sigma2, self.tau2)
            + leaf_loglik(nr, sr, self.sigma2, self.tau2)
            - leaf_loglik(ol, osl, self.sigma2, self.tau2)
            - leaf_loglik(or, osr, self.sigma2, self.tau2);
        if rng.random::<f64>().ln() < log_ratio {
            let tree = &mut self.trees[t];
            tree.nodes[node as usize].var = var as u32;
            tree.nodes[node as usize].cut = cut_idx;
            for i in 0..tree.leaf_of.len() {
                let l = tree.leaf_of[i];
                if l == w.left || l == w.right {
                    tree.leaf_of[i] = if self.x.get(i, var) <= cut {
                        w.left
                    } else {
                        w.right
                    };
                }
            }
        }
    }

    fn draw_leaves(&mut self, t: usize, rng: &mut Rng) {
        let tree = &mut self.trees[t];
        let mut acc = vec![(0.0f64, 0.0f64); tree.nodes.len()];
        for (i, &l) in tree.leaf_of.iter().enumerate() {
            acc[l as usize].0 += 1.0;
            acc[l as usize].1 += self.resid[i];
        }
        for (id, node) in tree.nodes.iter_mut().enumerate() {
            if node.alive && node.leaf {
                let (n, s) = acc[id];
                let d = self.sigma2 + n * self.tau2;
                let mean = self.tau2 * s / d;
                let sd = (self.sigma2 * self.tau2 / d).sqrt();
                node.value = mean + sd * std_normal(rng);
            }
        }
    }
}

pub(crate) fn run(
    x: &Matrix,
    grid: &CutGrid,
    cfg: &BartConfig,
    mut response: Response<'_>,
    tau: f64,
    rng: &mut Rng,
) -> FitOutput {
    let n = x.nrows();
    let t_count = cfg.num_trees;
    let (init_value, sigma2) = match &response {
        Response::Continuous { y, .. } => {
            let ybar = y.iter().sum::<f64>() / n as f64;
            let s2 = cfg
                .fixed_sigma2
                .unwrap_or_else(|| crate::stats::variance(y).max(1e-12));
            (ybar / t_count as f64, s2)
        }
        Response::Probit { .. } => (0.0, 1.0),
    };
    let mut s = Sampler {
        x,
        grid,
        cfg,
        tau2: tau * tau,
        sigma2,
        trees: (0..t_count).map(|_| WorkTree::new(n, init_value)).collect(),
        fit: vec![init_value * t_count as f64; n],
        resid: vec![0.0; n],
        lo: vec![0; grid.cuts.len()],
        hi: vec![0; grid.cuts.len()],
    };
    let mut work_y = match &response {
        Response::Continuous { y, .. } => y.clone(),
        Response::Probit { .. } => vec![0.0; n],
    };

    let total = cfg.burn_in + cfg.num_draws;
    let mut draws = Vec::with_capacity(cfg.num_draws);
    let mut sigma_draws = Vec::with_capacity(cfg.num_draws);
    let mut train = cfg
        .keep_train_draws
        .then(|| Matrix::zeros(n, cfg.num_draws));
    let mut diagnostics = Vec::with_capacity(total);

    for iter in 0..total {
        if let Response::Probit { labels, offset } = &mut response {
            for i in 0..n {
                let z = truncated_normal_unit(*offset + s.fit[i], labels[i], rng);
                work_y[i] = z - *offset;
            }
        }
        for t in 0..t_count {
            {
                let tree = &s.trees[t];
                for i in 0..n {
                    s.resid[i] = work_y[i] - s.fit[i] + tree.nodes[tree.leaf_of[i] as usize].value;
                }
            }
            s.update_tree(t, rng);
            let tree = &s.trees[t];
            for i in 0..n {
                s.fit[i] = work_y[i] - s.resid[i] + tree.nodes[tree.leaf_of[i] as usize].value;
            }
        }
        if let Response::Continuous { lambda, .. } = &response {
            if cfg.fixed_sigma2.is_none() {
                let sse: f64 = work_y
                    .iter()
                    .zip(&s.fit)
                    .map(|(y, f)| (y - f) * (y - f))
                    .sum();
                let shape = 0.5 * (cfg.nu + n as f64);
                let scale = 0.5 * (cfg.nu * lambda + sse);
                let g = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
                s.sigma2 = scale / g;
            }
        }
        let depths: Vec<u32> = s.trees.iter().map(WorkTree::depth).collect();
        diagnostics.push(IterationDiagnostics {
            iteration: iter,
            sigma2: s.sigma2,
            mean_depth: depths.iter().map(|&d| d as f64).sum::<f64>() / t_count as f64,
            max_depth: depths.iter().copied().max().unwrap_or(0) as usize,
            mean_leaves: s.trees.iter().map(|t| t.leaves().len() as f64).sum::<f64>()
                / t_count as f64,
        });
        if iter >= cfg.burn_in {
            let m = iter - cfg.burn_in;
            draws.push(s.trees.iter().map(|t| t.compact(grid)).collect());
            sigma_draws.push(s.sigma2);
            if let Some(tr) = train.as_mut() {
                for i in 0..n {
                    tr.set(i, m, s.fit[i]);
                }
            }
        }
    }
    FitOutput {
        draws,
        sigma2: sigma_draws,
        train_fit: train,
        diagnostics,
    }
}
