//! The per-run record shared by all estimators.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hier::HierReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Hier,
    Classical,
    Parabolic,
    Mc,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Hier => "hier",
            Method::Classical => "classical",
            Method::Parabolic => "parabolic",
            Method::Mc => "mc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hier" => Ok(Method::Hier),
            "classical" => Ok(Method::Classical),
            "parabolic" => Ok(Method::Parabolic),
            "mc" => Ok(Method::Mc),
            other => Err(Error::param(format!("unknown method `{other}`"))),
        }
    }
}

/// One estimate of `xi . ahom xi`.
///
/// `size` is the method's scale parameter: `n` for the hierarchical and
/// classical methods, `L` for the parabolic one, the horizon `t` for walks.
/// `sigma2_stat` is the raw statistic before any subtraction or halving.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateReport {
    pub method: Method,
    pub dim: usize,
    pub size: usize,
    pub seed: u64,
    pub a_hat: f64,
    pub sigma2_stat: f64,
    pub work_units: u64,
}

impl EstimateReport {
    pub fn from_hier(report: &HierReport, dim: usize) -> Self {
        EstimateReport {
            method: Method::Hier,
            dim,
            size: report.n,
            seed: report.seed,
            a_hat: report.a_hat,
            sigma2_stat: report.sigma2_hat,
            work_units: report.work_units,
        }
    }
}
