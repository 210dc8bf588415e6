//! Small statistics helpers: regression slopes and moment summaries.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::sum::pairwise_sum;

/// Ordinary least-squares line `y = slope x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Half-width of the 95% confidence interval of the slope.
    pub ci95: f64,
    pub intercept_ci95: f64,
}

impl SlopeFit {
    pub fn slope_interval(&self) -> (f64, f64) {
        (self.slope - self.ci95, self.slope + self.ci95)
    }
}

pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    if xs.len() != ys.len() {
        return Err(Error::param(format!(
            "fit_slope: {} x values but {} y values",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::param(format!(
            "fit_slope needs at least 3 points, got {n}"
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::param("fit_slope: non-finite input"));
    }
    let nf = n as f64;
    let mx = pairwise_sum(xs) / nf;
    let my = pairwise_sum(ys) / nf;
    let dx: Vec<f64> = xs.iter().map(|x| x - mx).collect();
    let sxx = pairwise_sum(&dx.iter().map(|d| d * d).collect::<Vec<_>>());
    if sxx <= 1e-12 * (1.0 + mx * mx) * nf {
        return Err(Error::param("fit_slope: degenerate x values"));
    }
    let sxy = pairwise_sum(
        &dx.iter()
            .zip(ys)
            .map(|(d, y)| d * (y - my))
            .collect::<Vec<_>>(),
    );
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss = pairwise_sum(
        &xs.iter()
            .zip(ys)
            .map(|(x, y)| {
                let r = y - (slope * x + intercept);
                r * r
            })
            .collect::<Vec<_>>(),
    );
    let s2 = rss / (nf - 2.0);
    let se_slope = (s2 / sxx).sqrt();
    let se_intercept = (s2 * (1.0 / nf + mx * mx / sxx)).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 2.0)
        .map_err(|e| Error::param(format!("fit_slope: {e}")))?
        .inverse_cdf(0.975);
    Ok(SlopeFit {
        slope,
        intercept,
        ci95: t * se_slope,
        intercept_ci95: t * se_intercept,
    })
}

/// Mean, unbiased variance and standard error of a sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
}

impl Moments {
    pub fn of(xs: &[f64]) -> Self {
        let count = xs.len();
        if count == 0 {
            return Moments {
                count,
                mean: f64::NAN,
                variance: f64::NAN,
            };
        }
        let mean = pairwise_sum(xs) / count as f64;
        let variance = if count > 1 {
            pairwise_sum(&xs.iter().map(|x| (x - mean).powi(2)).collect::<Vec<_>>())
                / (count - 1) as f64
        } else {
            0.0
        };
        Moments {
            count,
            mean,
            variance,
        }
    }

    pub fn std_error(&self) -> f64 {
        (self.variance / self.count as f64).sqrt()
    }
}

/// Root mean square of `x - target`.
pub fn rms_error(xs: &[f64], target: f64) -> f64 {
    let sq: Vec<f64> = xs.iter().map(|x| (x - target).powi(2)).collect();
    (pairwise_sum(&sq) / xs.len() as f64).sqrt()
}
