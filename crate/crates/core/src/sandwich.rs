//! Post-processing variance adjustment for pseudo-likelihood posteriors.
//!
//! Draws in an unconstrained parameterization are mapped through
//! `xi_bar + R2^{-1} R1 (xi - xi_bar)`, where `R1' R1` is the inverse sample
//! covariance of the draws and `R2' R2 = H J^{-1} H`. The adjusted draws then
//! have sample covariance `H^{-1} J H^{-1}`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-4;

/// Cholesky factor of `m`, adding diagonal jitter 1e-8, 1e-7, ... 1e-4 until
/// it succeeds.
pub fn jittered_cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    if let Some(c) = Cholesky::new(sym.clone()) {
        return Ok(c);
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-12) {
        let mut j = sym.clone();
        for i in 0..j.nrows() {
            j[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(j) {
            log::debug!("{what}: Cholesky needed jitter {jitter:e}");
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical(format!(
        "{what} is not positive definite even with jitter {JITTER_MAX:e}"
    )))
}

pub fn mean_vector(draws: &[Vec<f64>]) -> DVector<f64> {
    let p = draws[0].len();
    let mut m = DVector::zeros(p);
    for d in draws {
        for (a, b) in m.iter_mut().zip(d) {
            *a += b;
        }
    }
    m / draws.len() as f64
}

/// Sample covariance (denominator S - 1).
pub fn sample_covariance(draws: &[Vec<f64>], mean: &DVector<f64>) -> DMatrix<f64> {
    let p = mean.len();
    let s = draws.len();
    let mut centered = DMatrix::zeros(s, p);
    for (r, d) in draws.iter().enumerate() {
        for c in 0..p {
            centered[(r, c)] = d[c] - mean[c];
        }
    }
    centered.tr_mul(&centered) / (s as f64 - 1.0)
}

#[derive(Debug, Clone)]
pub struct AdjustedDraws {
    pub draws: Vec<Vec<f64>>,
    pub mean: DVector<f64>,
    /// H^{-1} J H^{-1}.
    pub target_covariance: DMatrix<f64>,
}

/// Applies the sandwich rescaling to `draws` (each of length p) given the
/// negative Hessian `h` and score covariance `j`, both p x p.
pub fn sandwich_adjust(
    draws: &[Vec<f64>],
    h: &DMatrix<f64>,
    j: &DMatrix<f64>,
) -> Result<AdjustedDraws> {
    if draws.len() < 2 {
        return Err(Error::InvalidInput(
            "variance adjustment needs at least two draws".into(),
        ));
    }
    let p = draws[0].len();
    if h.nrows() != p || h.ncols() != p || j.nrows() != p || j.ncols() != p {
        return Err(Error::Dimension(format!(
            "draws have dimension {p}, H is {}x{}, J is {}x{}",
            h.nrows(),
            h.ncols(),
            j.nrows(),
            j.ncols()
        )));
    }
    let mean = mean_vector(draws);
    let cov = sample_covariance(draws, &mean);

    // R1 = upper factor of cov^{-1}.
    let cov_inv = jittered_cholesky(&cov, "posterior sample covariance")?.inverse();
    let r1 = jittered_cholesky(&cov_inv, "inverse posterior covariance")?
        .l()
        .transpose();

    let h_chol = jittered_cholesky(h, "Hessian")?;
    let j_chol = jittered_cholesky(j, "score covariance")?;
    let j_inv_h = j_chol.solve(h);
    let hjh = h * j_inv_h;
    let r2 = jittered_cholesky(&hjh, "H J^-1 H")?.l().transpose();

    let a = r2
        .solve_upper_triangular(&r1)
        .ok_or_else(|| Error::Numerical("singular R2 in variance adjustment".into()))?;

    let h_inv = h_chol.inverse();
    let target_covariance = &h_inv * j * &h_inv;

    let adjusted = draws
        .iter()
        .map(|d| {
            let centered = DVector::from_iterator(p, d.iter().zip(mean.iter()).map(|(x, m)| x - m));
            let moved = &a * centered;
            moved.iter().zip(mean.iter()).map(|(x, m)| x + m).collect()
        })
        .collect();
    Ok(AdjustedDraws {
        draws: adjusted,
        mean,
        target_covariance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use crate::stats::std_normal;

    fn correlated_draws(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_from(seed);
        (0..n)
            .map(|_| {
                let a = std_normal(&mut rng);
                let b = std_normal(&mut rng);
                let c = std_normal(&mut rng);
                vec![1.0 + a, -2.0 + 0.5 * a + 0.3 * b, 0.2 * b + 0.4 * c]
            })
            .collect()
    }

    #[test]
    fn adjusted_covariance_hits_the_sandwich() {
        let draws = correlated_draws(4000, 1);
        let h = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let j = DMatrix::from_row_slice(3, 3, &[6.0, 0.5, 0.1, 0.5, 5.0, 0.0, 0.1, 0.0, 3.0]);
        let out = sandwich_adjust(&draws, &h, &j).unwrap();
        let m = mean_vector(&out.draws);
        let cov = sample_covariance(&out.draws, &m);
        for r in 0..3 {
            for c in 0..3 {
                let scale = (out.target_covariance[(r, r)] * out.target_covariance[(c, c)]).sqrt();
                assert!(
                    (cov[(r, c)] - out.target_covariance[(r, c)]).abs() < 1e-8 * scale.max(1.0)
                );
            }
            assert!((m[r] - out.mean[r]).abs() < 1e-10);
        }
    }

    #[test]
    fn matching_information_is_near_identity() {
        // Draws with covariance H^{-1}, and J = H.
        let mut rng = rng_from(3);
        let draws: Vec<Vec<f64>> = (0..20_000)
            .map(|_| vec![std_normal(&mut rng) / 2.0, std_normal(&mut rng) / 3.0])
            .collect();
        let h = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        let out = sandwich_adjust(&draws, &h, &h).unwrap();
        let moved: f64 = draws
            .iter()
            .zip(&out.draws)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .sum::<f64>()
            / draws.len() as f64;
        assert!(moved < 0.02, "mean displacement {moved}");
    }

    #[test]
    fn indefinite_hessian_fails_after_jitter() {
        let draws = correlated_draws(100, 2);
        let h = DMatrix::from_row_slice(3, 3, &[-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let j = DMatrix::identity(3, 3);
        assert!(matches!(
            sandwich_adjust(&draws, &h, &j),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn tiny_negative_eigenvalue_is_rescued_by_jitter() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 - 1e-12]);
        assert!(jittered_cholesky(&m, "test").is_ok());
    }
}
