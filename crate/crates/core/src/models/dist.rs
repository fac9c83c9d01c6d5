//! Truncated count distributions used by the model builders.

use statrs::distribution::{Binomial, Discrete, DiscreteCDF, Poisson};

use crate::error::{Error, Result};

/// Poisson pmf on `0..=d_max`, where `d_max` is the first point whose upper
/// tail mass drops below `tail`; renormalized to unit mass.
pub fn truncated_poisson(lambda: f64, tail: f64) -> Result<Vec<f64>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("Poisson mean {lambda} must be finite and nonnegative")));
    }
    if !(tail > 0.0 && tail < 1.0) {
        return Err(Error::InvalidParameter(format!("tail mass {tail} outside (0,1)")));
    }
    if lambda == 0.0 {
        return Ok(vec![1.0]);
    }
    let dist = Poisson::new(lambda).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut pmf = Vec::new();
    let mut k = 0u64;
    loop {
        pmf.push(dist.pmf(k));
        if dist.sf(k) < tail {
            break;
        }
        k += 1;
    }
    let total: f64 = pmf.iter().sum();
    Ok(pmf.into_iter().map(|p| p / total).collect())
}

/// Binomial pmf on `0..=n`.
pub fn binomial(n: u64, p: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("probability {p} outside [0,1]")));
    }
    let dist = Binomial::new(p, n).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok((0..=n).map(|k| dist.pmf(k)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_truncation_keeps_mean() {
        let pmf = truncated_poisson(5.0, 1e-12).unwrap();
        let mean: f64 = pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        assert!((mean - 5.0).abs() < 1e-10);
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert_eq!(truncated_poisson(0.0, 1e-12).unwrap(), vec![1.0]);
    }

    #[test]
    fn binomial_moments() {
        let pmf = binomial(10, 0.56).unwrap();
        let mean: f64 = pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        assert!((mean - 5.6).abs() < 1e-12);
        assert_eq!(binomial(0, 0.3).unwrap(), vec![1.0]);
    }
}
