//! Synthetic populations for the simulation studies: correlated auxiliaries,
//! informative inclusion probabilities for the two samples, latent classes
//! driven by the auxiliaries, and 30 four-level items.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::items::ItemMatrix;
use crate::rng::{derive_seed, rng_from};
use crate::stats::{categorical, expit, std_normal};

pub const NUM_ITEMS: usize = 30;
pub const NUM_LEVELS: usize = 4;
pub const NUM_CLASSES: usize = 3;
/// Added to |a2| before taking its log in the selection models.
pub const LOG_GUARD: f64 = 1e-6;

const OFFSET_BRACKET: f64 = 20.0;
const OFFSET_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub a3: Vec<f64>,
}

impl Covariates {
    pub fn len(&self) -> usize {
        self.a1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a1.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Covariates {
        Covariates {
            a1: idx.iter().map(|&i| self.a1[i]).collect(),
            a2: idx.iter().map(|&i| self.a2[i]).collect(),
            a3: idx.iter().map(|&i| self.a3[i]).collect(),
        }
    }
}

/// (a1, a2) standard bivariate normal with correlation `rho`, a3 independent
/// standard normal.
pub fn generate_population(n: usize, rho: f64, seed: u64) -> Result<Covariates> {
    if n == 0 {
        return Err(Error::InvalidInput(
            "population size must be at least 1".into(),
        ));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidInput(format!(
            "correlation {rho} must lie strictly inside (-1, 1)"
        )));
    }
    let mut rng = rng_from(seed);
    let s = (1.0 - rho * rho).sqrt();
    let mut cov = Covariates {
        a1: Vec::with_capacity(n),
        a2: Vec::with_capacity(n),
        a3: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let z1 = std_normal(&mut rng);
        let z2 = std_normal(&mut rng);
        let z3 = std_normal(&mut rng);
        cov.a1.push(z1);
        cov.a2.push(rho * z1 + s * z2);
        cov.a3.push(z3);
    }
    Ok(cov)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Overlap {
    High,
    Low,
}

fn guarded_log(a2: f64) -> f64 {
    (a2.abs() + LOG_GUARD).ln()
}

/// Linear predictor of NPS inclusion without the offset.
pub fn nps_linear_predictor(a1: f64, a2: f64, a3: f64) -> f64 {
    -0.9 * a1 + 0.2 * a1 * a1 + 0.8 * a2 + 0.2 * guarded_log(a2) - 0.1 * (a1 * a2).sin() + 0.3 * a3
}

/// Linear predictor of PS inclusion without the offset.
pub fn ps_linear_predictor(overlap: Overlap, a1: f64, a2: f64, a3: f64) -> f64 {
    match overlap {
        Overlap::High => {
            -0.6 * a1 + 0.4 * a1 * a1 + 0.7 * a2 + 0.1 * guarded_log(a2) - 0.05 * (a1 * a2).sin()
                + 0.4 * a3
        }
        Overlap::Low => 0.7 * a1 - 0.6 * a2 + 0.1 * guarded_log(a2) + 0.1 * a1 * a2 - 0.1 * a3,
    }
}

/// Offset so that the inclusion probabilities `expit(offset + lin)` sum to
/// `target`, by bisection.
pub fn solve_offset(lin: &[f64], target: f64) -> Result<f64> {
    let total = |o: f64| lin.iter().map(|&l| expit(o + l)).sum::<f64>();
    if !(target > 0.0 && target < lin.len() as f64) {
        return Err(Error::InvalidInput(format!(
            "target total {target} outside (0, {})",
            lin.len()
        )));
    }
    let mut half = OFFSET_BRACKET;
    let (mut lo, mut hi) = (-half, half);
    while total(lo) > target || total(hi) < target {
        half *= 2.0;
        if half > 8.0 * OFFSET_BRACKET {
            return Err(Error::Numerical(format!(
                "offset bisection cannot bracket target {target}: totals {} .. {} on [{lo}, {hi}]",
                total(lo),
                total(hi)
            )));
        }
        lo = -half;
        hi = half;
    }
    while hi - lo > OFFSET_TOL {
        let mid = 0.5 * (lo + hi);
        if total(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionProbs {
    pub pi_b: Vec<f64>,
    pub pi_r: Vec<f64>,
    pub offset_b: f64,
    pub offset_r: f64,
}

/// Inclusion probabilities for both samples with offsets solved so the
/// expected sample sizes are `N * f_B` and `N * f_R`.
pub fn selection_probs(
    pop: &Covariates,
    overlap: Overlap,
    fractions: (f64, f64),
) -> Result<SelectionProbs> {
    let (f_b, f_r) = fractions;
    for f in [f_b, f_r] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::InvalidInput(format!(
                "sampling fraction {f} outside (0, 1)"
            )));
        }
    }
    let n = pop.len() as f64;
    let lin_b: Vec<f64> = (0..pop.len())
        .map(|i| nps_linear_predictor(pop.a1[i], pop.a2[i], pop.a3[i]))
        .collect();
    let lin_r: Vec<f64> = (0..pop.len())
        .map(|i| ps_linear_predictor(overlap, pop.a1[i], pop.a2[i], pop.a3[i]))
        .collect();
    let offset_b = solve_offset(&lin_b, n * f_b)?;
    let offset_r = solve_offset(&lin_r, n * f_r)?;
    Ok(SelectionProbs {
        pi_b: lin_b.iter().map(|l| expit(offset_b + l)).collect(),
        pi_r: lin_r.iter().map(|l| expit(offset_r + l)).collect(),
        offset_b,
        offset_r,
    })
}

/// Indices selected by independent Bernoulli(pi_i) draws.
pub fn poisson_sample(pi: &[f64], seed: u64) -> Vec<usize> {
    let mut rng = rng_from(seed);
    pi.iter()
        .enumerate()
        .filter_map(|(i, &p)| {
            let u: f64 = rng.random();
            (u < p).then_some(i)
        })
        .collect()
}

/// Coefficients generating latent classes and item responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaTables {
    /// Rows per class: intercept, a1, a2, a1*a2. Row 1 is the reference.
    pub class: [[f64; 4]; NUM_CLASSES],
    /// Per item, rows per level r = 1..4 (row 1 the reference) and columns
    /// intercept, I(c=2), I(c=3), a1, a3, I(c=2) a1, I(c=3) a1.
    pub items: Vec<[[f64; 7]; NUM_LEVELS]>,
}

const Z: [f64; 7] = [0.0; 7];

fn block(r2: [f64; 3], r3: [f64; 3], r4: [f64; 3]) -> [[f64; 7]; NUM_LEVELS] {
    let row = |b: [f64; 3]| [b[0], b[1], b[2], 0.0, 0.0, 0.0, 0.0];
    [Z, row(r2), row(r3), row(r4)]
}

impl BetaTables {
    pub fn baseline() -> Self {
        let h = 2.833;
        let d = 5.666;
        let mut items = Vec::with_capacity(NUM_ITEMS);
        for j in 1..=NUM_ITEMS {
            let b = match j {
                1..=2 => {
                    let mut b = block([-h, h, h], [-h, h, d], [-h, d, h]);
                    b[1][4] = 0.5;
                    b
                }
                3..=6 => block([-h, h, h], [-h, h, d], [-h, d, h]),
                7..=9 => block([-h, d, h], [-h, h, d], [-h, h, h]),
                10..=15 => block([-h, d, h], [-h, h, h], [-h, h, d]),
                16..=21 => block([0.0, h, 0.0], [h, -h, -h], [0.0, 0.0, h]),
                22..=28 => block([0.0, h, -h], [h, -h, -d], [0.0, 0.0, -h]),
                _ => [
                    Z,
                    [0.0, h, -h, 0.0, 0.0, 2.0, -1.0],
                    [h, -h, -d, 2.0, 0.0, -2.0, -2.0],
                    [0.0, 0.0, -h, 0.0, 0.0, 0.0, -1.0],
                ],
            };
            items.push(b);
        }
        BetaTables {
            class: [[0.0; 4], [0.4, -0.5, 0.75, 0.1], [-0.2, -1.0, 1.2, 0.25]],
            items,
        }
    }

    /// Classes 1 and 3 share their item profiles except on items 13-15.
    pub fn non_disjoint() -> Self {
        let mut t = Self::baseline();
        for (j, b) in t.items.iter_mut().enumerate() {
            if !(12..15).contains(&j) {
                for row in b.iter_mut() {
                    row[2] = 0.0;
                    row[6] = 0.0;
                }
            }
        }
        t
    }

    pub fn validate(&self) -> Result<()> {
        if self.class[0] != [0.0; 4] {
            return Err(Error::InvalidInput(
                "reference class row must be zero".into(),
            ));
        }
        if self.items.len() != NUM_ITEMS {
            return Err(Error::Dimension(format!(
                "{} item tables, expected {NUM_ITEMS}",
                self.items.len()
            )));
        }
        if self.items.iter().any(|b| b[0] != Z) {
            return Err(Error::InvalidInput(
                "reference level row must be zero".into(),
            ));
        }
        Ok(())
    }
}

fn softmax_into(eta: &[f64], out: &mut [f64]) {
    let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, e) in out.iter_mut().zip(eta) {
        *o = (e - m).exp();
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
}

/// Class membership probabilities of a unit.
pub fn class_probabilities(beta: &[[f64; 4]; NUM_CLASSES], a1: f64, a2: f64) -> [f64; NUM_CLASSES] {
    let mut eta = [0.0; NUM_CLASSES];
    for (e, b) in eta.iter_mut().zip(beta) {
        *e = b[0] + b[1] * a1 + b[2] * a2 + b[3] * a1 * a2;
    }
    let mut p = [0.0; NUM_CLASSES];
    softmax_into(&eta, &mut p);
    p
}

/// 0-based latent class per unit.
pub fn generate_classes(
    pop: &Covariates,
    beta: &[[f64; 4]; NUM_CLASSES],
    seed: u64,
) -> Result<Vec<usize>> {
    if beta[0] != [0.0; 4] {
        return Err(Error::InvalidInput(
            "reference class row must be zero".into(),
        ));
    }
    let mut rng = rng_from(seed);
    Ok((0..pop.len())
        .map(|i| {
            let p = class_probabilities(beta, pop.a1[i], pop.a2[i]);
            categorical(&p, rng.random())
        })
        .collect())
}

/// Level probabilities of item `j` (0-based) for a unit of 0-based class `c`.
pub fn item_probabilities(
    tables: &BetaTables,
    j: usize,
    c: usize,
    a1: f64,
    a3: f64,
) -> [f64; NUM_LEVELS] {
    let (i2, i3) = (f64::from(u8::from(c == 1)), f64::from(u8::from(c == 2)));
    let x = [1.0, i2, i3, a1, a3, i2 * a1, i3 * a1];
    let mut eta = [0.0; NUM_LEVELS];
    for (e, row) in eta.iter_mut().zip(&tables.items[j]) {
        *e = row.iter().zip(&x).map(|(b, v)| b * v).sum();
    }
    let mut p = [0.0; NUM_LEVELS];
    softmax_into(&eta, &mut p);
    p
}

pub fn generate_items(
    pop: &Covariates,
    classes: &[usize],
    tables: &BetaTables,
    seed: u64,
) -> Result<ItemMatrix> {
    tables.validate()?;
    if classes.len() != pop.len() {
        return Err(Error::Dimension(format!(
            "{} classes for {} units",
            classes.len(),
            pop.len()
        )));
    }
    let mut rng = rng_from(seed);
    let mut data = Vec::with_capacity(pop.len() * NUM_ITEMS);
    for (i, &c) in classes.iter().enumerate() {
        for j in 0..NUM_ITEMS {
            let p = item_probabilities(tables, j, c, pop.a1[i], pop.a3[i]);
            data.push(categorical(&p, rng.random()) as u8);
        }
    }
    ItemMatrix::new(pop.len(), vec![NUM_LEVELS; NUM_ITEMS], data)
}

/// Modal level (0-based) of each item for each class at a1 = a3 = 0, as
/// `map[j][k]`.
pub fn modal_map(tables: &BetaTables) -> Vec<[usize; NUM_CLASSES]> {
    (0..NUM_ITEMS)
        .map(|j| {
            let mut row = [0; NUM_CLASSES];
            for (k, slot) in row.iter_mut().enumerate() {
                let p = item_probabilities(tables, j, k, 0.0, 0.0);
                *slot = (0..NUM_LEVELS).fold(0, |b, r| if p[r] > p[b] { r } else { b });
            }
            row
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub size: usize,
    pub rho: f64,
    pub overlap: Overlap,
    /// Expected NPS and PS sampling fractions.
    pub fractions: (f64, f64),
    pub non_disjoint: bool,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            size: 40_000,
            rho: 0.5,
            overlap: Overlap::High,
            fractions: (0.05, 0.05),
            non_disjoint: false,
        }
    }
}

/// A generated population with its true class structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticPopulation {
    pub covariates: Covariates,
    pub classes: Vec<usize>,
    pub items: ItemMatrix,
    pub selection: SelectionProbs,
    /// Population class shares.
    pub true_pi: Vec<f64>,
    /// Mean individual level probabilities within each true class, laid out
    /// J x K x R like the latent class parameters.
    pub true_theta: Vec<f64>,
}

impl SyntheticPopulation {
    pub fn size(&self) -> usize {
        self.classes.len()
    }

    /// True NPS weights 1 / pi_B for the given units.
    pub fn true_weights(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| 1.0 / self.selection.pi_b[i]).collect()
    }
}

pub fn simulate_population(cfg: &PopulationConfig, seed: u64) -> Result<SyntheticPopulation> {
    let covariates = generate_population(cfg.size, cfg.rho, derive_seed(seed, 1))?;
    let selection = selection_probs(&covariates, cfg.overlap, cfg.fractions)?;
    let tables = if cfg.non_disjoint {
        BetaTables::non_disjoint()
    } else {
        BetaTables::baseline()
    };
    let classes = generate_classes(&covariates, &tables.class, derive_seed(seed, 2))?;
    let items = generate_items(&covariates, &classes, &tables, derive_seed(seed, 3))?;

    let n = classes.len();
    let mut counts = [0usize; NUM_CLASSES];
    let mut theta = vec![0.0; NUM_ITEMS * NUM_CLASSES * NUM_LEVELS];
    for (i, &c) in classes.iter().enumerate() {
        counts[c] += 1;
        for j in 0..NUM_ITEMS {
            let p = item_probabilities(&tables, j, c, covariates.a1[i], covariates.a3[i]);
            let base = (j * NUM_CLASSES + c) * NUM_LEVELS;
            for r in 0..NUM_LEVELS {
                theta[base + r] += p[r];
            }
        }
    }
    for j in 0..NUM_ITEMS {
        for c in 0..NUM_CLASSES {
            let base = (j * NUM_CLASSES + c) * NUM_LEVELS;
            for r in 0..NUM_LEVELS {
                theta[base + r] /= counts[c].max(1) as f64;
            }
        }
    }
    let true_pi = counts.iter().map(|&c| c as f64 / n as f64).collect();
    Ok(SyntheticPopulation {
        covariates,
        classes,
        items,
        selection,
        true_pi,
        true_theta: theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn covariate_correlation() {
        let p = generate_population(40_000, 0.5, 1).unwrap();
        assert!((corr(&p.a1, &p.a2) - 0.5).abs() < 0.02);
        let q = generate_population(40_000, 0.0, 2).unwrap();
        assert!(corr(&q.a1, &q.a2).abs() < 0.02);
        let one = generate_population(1, 0.5, 3).unwrap();
        assert!(one.a1[0].is_finite() && one.a2[0].is_finite() && one.a3[0].is_finite());
        assert!(generate_population(10, 1.0, 1).is_err());
        assert!(generate_population(0, 0.2, 1).is_err());
    }

    #[test]
    fn offsets_hit_expected_sample_sizes() {
        let p = generate_population(40_000, 0.5, 4).unwrap();
        for overlap in [Overlap::High, Overlap::Low] {
            let s = selection_probs(&p, overlap, (0.05, 0.05)).unwrap();
            let eb: f64 = s.pi_b.iter().sum();
            let er: f64 = s.pi_r.iter().sum();
            assert!(
                (eb - 2000.0).abs() < 2.0 && (er - 2000.0).abs() < 2.0,
                "{eb} {er}"
            );
            assert!(s.pi_b.iter().chain(&s.pi_r).all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn origin_unit_uses_the_guarded_log() {
        let offset = -3.1;
        let direct = 1.0 / (1.0 + (-(offset + 0.2 * (1e-6f64).ln())).exp());
        assert!((expit(offset + nps_linear_predictor(0.0, 0.0, 0.0)) - direct).abs() < 1e-15);
    }

    #[test]
    fn very_negative_offset_drives_probabilities_to_zero() {
        let lin = [0.0, 1.0, -2.0];
        assert!(lin.iter().all(|l| expit(-1e3 + l) == 0.0));
        assert!(solve_offset(&lin, 3.5).is_err());
    }

    #[test]
    fn poisson_sampling_edge_cases_and_size() {
        assert_eq!(poisson_sample(&[1.0; 5], 1), vec![0, 1, 2, 3, 4]);
        assert!(poisson_sample(&[0.0; 5], 1).is_empty());
        let s = poisson_sample(&vec![0.05; 40_000], 7).len() as f64;
        assert!((s - 2000.0).abs() <= 3.0 * (40_000.0f64 * 0.05 * 0.95).sqrt());
    }

    #[test]
    fn horvitz_thompson_recovers_population_size() {
        let p = generate_population(40_000, 0.5, 8).unwrap();
        let s = selection_probs(&p, Overlap::High, (0.05, 0.05)).unwrap();
        let idx = poisson_sample(&s.pi_r, 9);
        let ht: f64 = idx.iter().map(|&i| 1.0 / s.pi_r[i]).sum();
        let var: f64 = s.pi_r.iter().map(|&p| (1.0 - p) / p).sum();
        assert!((ht - 40_000.0).abs() < 3.0 * var.sqrt(), "{ht}");
    }

    #[test]
    fn class_softmax_at_the_origin() {
        let t = BetaTables::baseline();
        let p = class_probabilities(&t.class, 0.0, 0.0);
        let e = [1.0, 0.4f64.exp(), (-0.2f64).exp()];
        let s: f64 = e.iter().sum();
        for k in 0..3 {
            assert!((p[k] - e[k] / s).abs() < 1e-12);
        }
        assert!(
            (p[0] - 0.3021).abs() < 5e-5
                && (p[1] - 0.4506).abs() < 5e-5
                && (p[2] - 0.2473).abs() < 5e-5
        );
    }

    #[test]
    fn class_shares() {
        let pop = generate_population(40_000, 0.5, 10).unwrap();
        let zero = [[0.0; 4]; 3];
        let c = generate_classes(&pop, &zero, 11).unwrap();
        for k in 0..3 {
            let share = c.iter().filter(|&&x| x == k).count() as f64 / 40_000.0;
            assert!((share - 1.0 / 3.0).abs() < 0.02);
        }
        let c = generate_classes(&pop, &BetaTables::baseline().class, 12).unwrap();
        for k in 0..3 {
            let share = c.iter().filter(|&&x| x == k).count() as f64 / 40_000.0;
            assert!(share > 0.1 && share < 0.7, "{share}");
        }
        let mut bad = zero;
        bad[0][0] = 1.0;
        assert!(generate_classes(&pop, &bad, 1).is_err());
    }

    #[test]
    fn modal_probability_is_about_085() {
        let t = BetaTables::baseline();
        let p = item_probabilities(&t, 2, 0, 0.0, 0.0);
        let expected = 1.0 / (1.0 + 3.0 * (-2.833f64).exp());
        assert!((p[0] - expected).abs() < 1e-12);
        assert!((expected - 0.8497).abs() < 5e-4);
    }

    #[test]
    fn baseline_modal_map() {
        let m = modal_map(&BetaTables::baseline());
        for j in 0..30 {
            let p1 = if j < 15 { 0 } else { 2 };
            let p2 = if j < 6 { 3 } else { 1 };
            let p3 = if j < 9 {
                2
            } else if j < 21 {
                3
            } else {
                0
            };
            assert_eq!(m[j], [p1, p2, p3], "item {}", j + 1);
        }
    }

    #[test]
    fn non_disjoint_modal_map() {
        let base = modal_map(&BetaTables::baseline());
        let m = modal_map(&BetaTables::non_disjoint());
        for j in 0..30 {
            assert_eq!(m[j][1], base[j][1]);
            if (12..15).contains(&j) {
                assert_ne!(m[j][0], m[j][2]);
            } else {
                assert_eq!(m[j][0], m[j][2], "item {}", j + 1);
            }
            let t = BetaTables::non_disjoint();
            for k in 0..3 {
                let p = item_probabilities(&t, j, k, 0.0, 0.0);
                let top = p.iter().copied().fold(0.0, f64::max);
                assert!((top - 0.8497).abs() < 1e-3);
            }
        }
        assert!(BetaTables::non_disjoint().validate().is_ok());
    }

    #[test]
    fn interaction_cancels_for_item_29_class_3() {
        let t = BetaTables::baseline();
        let b = &t.items[28][2];
        assert_eq!(b[3] + b[6], 0.0);
        let at = |a1: f64| {
            let p = item_probabilities(&t, 28, 2, a1, 0.0);
            (p[2] / p[0]).ln()
        };
        assert!((at(1.0) - at(0.0)).abs() < 1e-12);
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = PopulationConfig {
            size: 2_000,
            ..PopulationConfig::default()
        };
        let a = simulate_population(&cfg, 5).unwrap();
        let b = simulate_population(&cfg, 5).unwrap();
        assert_eq!(a.items, b.items);
        assert_eq!(a.classes, b.classes);
        assert_eq!(a.selection, b.selection);
        let s: f64 = a.true_pi.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
