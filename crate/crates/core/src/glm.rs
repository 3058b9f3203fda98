//! Frequentist reference fits used as baseline weight models.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stats::expit;

fn to_dmatrix(x: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(x.nrows(), x.ncols(), x.as_slice())
}

/// Prepends an intercept column.
pub fn with_intercept(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.nrows(), x.ncols() + 1);
    for i in 0..x.nrows() {
        out.set(i, 0, 1.0);
        for (j, v) in x.row(i).iter().enumerate() {
            out.set(i, j + 1, *v);
        }
    }
    out
}

/// Least-squares coefficients.
pub fn ols(x: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} rows but {} responses",
            x.nrows(),
            y.len()
        )));
    }
    let svd = to_dmatrix(x).svd(true, true);
    let beta = svd
        .solve(&DVector::from_column_slice(y), 1e-12)
        .map_err(|e| Error::Numerical(format!("least squares failed: {e}")))?;
    Ok(beta.iter().copied().collect())
}

/// Logistic regression maximum likelihood by Newton-Raphson with step halving.
pub fn logistic_mle(x: &Matrix, y: &[bool]) -> Result<Vec<f64>> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} rows but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    let p = x.ncols();
    let loglik = |b: &[f64]| -> f64 {
        x.rows_iter()
            .zip(y)
            .map(|(row, &yi)| {
                let eta: f64 = row.iter().zip(b).map(|(a, c)| a * c).sum();
                let log1pe = if eta > 0.0 {
                    eta + (-eta).exp().ln_1p()
                } else {
                    eta.exp().ln_1p()
                };
                if yi {
                    eta - log1pe
                } else {
                    -log1pe
                }
            })
            .sum()
    };
    let mut beta = vec![0.0; p];
    let mut current = loglik(&beta);
    for _ in 0..100 {
        let mut g = DVector::<f64>::zeros(p);
        let mut h = DMatrix::zeros(p, p);
        for (row, &yi) in x.rows_iter().zip(y) {
            let eta: f64 = row.iter().zip(&beta).map(|(a, c)| a * c).sum();
            let mu = expit(eta);
            let v = mu * (1.0 - mu);
            for a in 0..p {
                g[a] += (f64::from(u8::from(yi)) - mu) * row[a];
                for b in 0..p {
                    h[(a, b)] += v * row[a] * row[b];
                }
            }
        }
        let step = h
            .clone()
            .cholesky()
            .map(|c| c.solve(&g))
            .or_else(|| h.svd(true, true).solve(&g, 1e-12).ok())
            .ok_or_else(|| Error::Numerical("singular logistic information matrix".into()))?;
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = beta
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + t * s)
                .collect();
            let v = loglik(&cand);
            if v >= current - 1e-12 || t < 1e-8 {
                beta = cand;
                let gain = v - current;
                current = v;
                if gain.abs() < 1e-12 || step.norm() * t < 1e-10 {
                    return Ok(beta);
                }
                break;
            }
            t *= 0.5;
        }
    }
    Ok(beta)
}

pub fn linear_predict(x: &Matrix, beta: &[f64]) -> Vec<f64> {
    x.rows_iter()
        .map(|row| row.iter().zip(beta).map(|(a, b)| a * b).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use crate::stats::std_normal;
    use rand::Rng as _;

    #[test]
    fn ols_recovers_exact_line() {
        let x = with_intercept(&Matrix::from_vec(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap());
        let b = ols(&x, &[1.0, 3.0, 5.0, 7.0]).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-10 && (b[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn logistic_mle_recovers_generating_coefficients() {
        let mut rng = rng_from(1);
        let n = 20_000;
        let a: Vec<f64> = (0..n).map(|_| std_normal(&mut rng)).collect();
        let y: Vec<bool> = a
            .iter()
            .map(|&v| rng.random::<f64>() < expit(-0.5 + 1.2 * v))
            .collect();
        let x = with_intercept(&Matrix::from_vec(n, 1, a).unwrap());
        let b = logistic_mle(&x, &y).unwrap();
        assert!(
            (b[0] + 0.5).abs() < 0.06 && (b[1] - 1.2).abs() < 0.06,
            "{b:?}"
        );
    }
}
