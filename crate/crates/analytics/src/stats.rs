use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::{mean, AnalyticsError, Result};

/// Sample autocorrelations for lags `0..=max_lag`.
pub fn acf(xs: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if xs.len() <= max_lag + 1 {
        return Err(AnalyticsError::TooShort {
            needed: max_lag + 2,
            have: xs.len(),
        });
    }
    let m = mean(xs);
    let d: Vec<f64> = xs.iter().map(|x| x - m).collect();
    let denom: f64 = d.iter().map(|x| x * x).sum();
    if denom == 0.0 || !denom.is_finite() {
        return Err(AnalyticsError::ZeroVariance);
    }
    Ok((0..=max_lag)
        .map(|k| d[..d.len() - k].iter().zip(&d[k..]).map(|(a, b)| a * b).sum::<f64>() / denom)
        .collect())
}

/// Fourth central moment over squared second, minus three.
pub fn excess_kurtosis(xs: &[f64]) -> Result<f64> {
    if xs.len() < 4 {
        return Err(AnalyticsError::TooShort { needed: 4, have: xs.len() });
    }
    let m = mean(xs);
    let (mut m2, mut m4) = (0.0, 0.0);
    for x in xs {
        let d = (x - m) * (x - m);
        m2 += d;
        m4 += d * d;
    }
    let n = xs.len() as f64;
    let (m2, m4) = (m2 / n, m4 / n);
    if m2 == 0.0 {
        return Err(AnalyticsError::ZeroVariance);
    }
    Ok(m4 / (m2 * m2) - 3.0)
}

/// (standard normal quantile, standardized sample quantile) pairs, using
/// plotting positions (i − 0.5)/n.
pub fn qq_points(xs: &[f64]) -> Result<Vec<(f64, f64)>> {
    if xs.len() < 4 {
        return Err(AnalyticsError::TooShort { needed: 4, have: xs.len() });
    }
    let m = mean(xs);
    let sd = (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
    if sd == 0.0 {
        return Err(AnalyticsError::ZeroVariance);
    }
    let mut z: Vec<f64> = xs.iter().map(|x| (x - m) / sd).collect();
    z.sort_by(f64::total_cmp);
    let normal = Normal::standard();
    let n = z.len() as f64;
    Ok(z.into_iter()
        .enumerate()
        .map(|(i, s)| (normal.inverse_cdf((i as f64 + 0.5) / n), s))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchTest {
    pub lags: usize,
    /// Observations used in the auxiliary regression.
    pub nobs: usize,
    pub r_squared: f64,
    pub lm: f64,
    pub p_value: f64,
}

/// Engle's LM test: regress r² on a constant and q of its own lags;
/// LM = nobs·R², compared with chi-square(q).
pub fn arch_lm_test(returns: &[f64], lags: usize) -> Result<ArchTest> {
    if lags == 0 {
        return Err(AnalyticsError::Invalid("at least one lag is required".into()));
    }
    if returns.len() <= 2 * lags + 1 {
        return Err(AnalyticsError::TooShort {
            needed: 2 * lags + 2,
            have: returns.len(),
        });
    }
    // R² is scale-free; normalizing keeps XᵀX well conditioned for tiny returns.
    let scale = returns.iter().map(|r| r * r).sum::<f64>() / returns.len() as f64;
    if scale == 0.0 || !scale.is_finite() {
        return Err(AnalyticsError::Singular);
    }
    let sq: Vec<f64> = returns.iter().map(|r| r * r / scale).collect();
    let nobs = sq.len() - lags;
    let k = lags + 1;
    let x = DMatrix::from_fn(nobs, k, |i, j| if j == 0 { 1.0 } else { sq[lags + i - j] });
    let y = DVector::from_column_slice(&sq[lags..]);

    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;
    let svd = xtx.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    if !(max_sv > 0.0) || svd.rank(max_sv * 1e-12) < k {
        return Err(AnalyticsError::Singular);
    }
    let beta = svd.solve(&xty, max_sv * 1e-12).map_err(|_| AnalyticsError::Singular)?;
    let fitted = &x * beta;
    let ybar = y.mean();
    let sst: f64 = y.iter().map(|v| (v - ybar) * (v - ybar)).sum();
    if sst == 0.0 {
        return Err(AnalyticsError::Singular);
    }
    let ssr: f64 = y.iter().zip(fitted.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    let r_squared = (1.0 - ssr / sst).clamp(0.0, 1.0);
    let lm = nobs as f64 * r_squared;
    let chi = ChiSquared::new(lags as f64).expect("positive degrees of freedom");
    Ok(ArchTest {
        lags,
        nobs,
        r_squared,
        lm,
        p_value: chi.sf(lm),
    })
}
