//! Random conductance environments.
//!
//! Conductances live on the undirected nearest-neighbour edges of `Z^d`. The
//! edge `{x, x + e_i}` is addressed by its lower endpoint `x` and the axis `i`.
//! Values are never stored: each query hashes `(seed, x, i)` through a keyed
//! counter-based mixer and maps the result through the law, so any finite
//! window of the field can be reproduced bit-exactly in any query order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the single-edge distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LawKind {
    /// `c_plus` with probability `p`, `c_minus` otherwise.
    TwoPoint {
        c_minus: f64,
        c_plus: f64,
        p: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    Constant {
        c: f64,
    },
}

/// Law of one edge conductance. The support must lie in `[1, Λ]` for a finite `Λ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConductanceLaw {
    pub kind: LawKind,
    /// Analytic mean, used in place of sampling when present.
    pub exact_mean: Option<f64>,
}

impl ConductanceLaw {
    pub fn constant(c: f64) -> Result<Self> {
        Self::new(LawKind::Constant { c })
    }

    pub fn two_point(c_minus: f64, c_plus: f64, p: f64) -> Result<Self> {
        Self::new(LawKind::TwoPoint { c_minus, c_plus, p })
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Self::new(LawKind::Uniform { lo, hi })
    }

    /// Validates `kind` and attaches its analytic mean.
    pub fn new(kind: LawKind) -> Result<Self> {
        let bad = |reason: &str| Error::Law {
            spec: format!("{kind:?}"),
            reason: reason.to_string(),
        };
        let (lo, hi) = match kind {
            LawKind::TwoPoint { c_minus, c_plus, p } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(bad("probability must lie in [0, 1]"));
                }
                (c_minus.min(c_plus), c_minus.max(c_plus))
            }
            LawKind::Uniform { lo, hi } => {
                if lo > hi {
                    return Err(bad("lower bound exceeds upper bound"));
                }
                (lo, hi)
            }
            LawKind::Constant { c } => (c, c),
        };
        if !lo.is_finite() || !hi.is_finite() {
            return Err(bad("support must be finite"));
        }
        if lo < 1.0 {
            return Err(bad("support must lie in [1, Λ]; rescale the law"));
        }
        let mut law = ConductanceLaw {
            kind,
            exact_mean: None,
        };
        law.exact_mean = Some(law.mean());
        Ok(law)
    }

    /// Drops the analytic mean so that `mean_conductance` falls back to sampling.
    pub fn without_exact_mean(mut self) -> Self {
        self.exact_mean = None;
        self
    }

    pub fn mean(&self) -> f64 {
        match self.kind {
            LawKind::TwoPoint { c_minus, c_plus, p } => (1.0 - p) * c_minus + p * c_plus,
            LawKind::Uniform { lo, hi } => 0.5 * (lo + hi),
            LawKind::Constant { c } => c,
        }
    }

    pub fn variance(&self) -> f64 {
        match self.kind {
            LawKind::TwoPoint { c_minus, c_plus, p } => p * (1.0 - p) * (c_plus - c_minus).powi(2),
            LawKind::Uniform { lo, hi } => (hi - lo).powi(2) / 12.0,
            LawKind::Constant { .. } => 0.0,
        }
    }

    /// Smallest and largest value in the support.
    pub fn support(&self) -> (f64, f64) {
        match self.kind {
            LawKind::TwoPoint { c_minus, c_plus, p } => {
                if p == 0.0 {
                    (c_minus, c_minus)
                } else if p == 1.0 {
                    (c_plus, c_plus)
                } else {
                    (c_minus.min(c_plus), c_minus.max(c_plus))
                }
            }
            LawKind::Uniform { lo, hi } => (lo, hi),
            LawKind::Constant { c } => (c, c),
        }
    }

    /// Known value of the homogenized coefficient, when one exists.
    ///
    /// Only two cases are covered: constant laws, and the symmetric two-point
    /// law in two dimensions where duality gives `sqrt(c_minus * c_plus)`.
    pub fn known_ahom(&self, dim: usize) -> Option<f64> {
        match self.kind {
            LawKind::Constant { c } => Some(c),
            LawKind::TwoPoint { c_minus, c_plus, p } if dim == 2 && p == 0.5 => {
                Some((c_minus * c_plus).sqrt())
            }
            _ => None,
        }
    }

    /// Maps a uniform variate in `[0, 1)` to a conductance.
    #[inline]
    pub fn quantile(&self, u: f64) -> f64 {
        match self.kind {
            LawKind::TwoPoint { c_minus, c_plus, p } => {
                if u < p {
                    c_plus
                } else {
                    c_minus
                }
            }
            LawKind::Uniform { lo, hi } => lo + (hi - lo) * u,
            LawKind::Constant { c } => c,
        }
    }
}

impl FromStr for ConductanceLaw {
    type Err = Error;

    /// Accepts `constant:C`, `bernoulli:CMINUS,CPLUS[,P]` and `uniform:LO,HI`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |reason: &str| Error::Law {
            spec: s.to_string(),
            reason: reason.to_string(),
        };
        let (name, args) = s.split_once(':').ok_or_else(|| bad("expected NAME:ARGS"))?;
        let nums = args
            .split(',')
            .map(|a| a.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(&e.to_string()))?;
        let law = match (name.trim(), nums.as_slice()) {
            ("constant", [c]) => Self::constant(*c),
            ("bernoulli", [a, b]) => Self::two_point(*a, *b, 0.5),
            ("bernoulli", [a, b, p]) => Self::two_point(*a, *b, *p),
            ("uniform", [lo, hi]) => Self::uniform(*lo, *hi),
            ("constant" | "bernoulli" | "uniform", _) => {
                return Err(bad("wrong number of arguments"))
            }
            _ => return Err(bad("unknown law; expected constant, bernoulli or uniform")),
        };
        law.map_err(|e| match e {
            Error::Law { reason, .. } => bad(&reason),
            other => other,
        })
    }
}

impl fmt::Display for ConductanceLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LawKind::TwoPoint { c_minus, c_plus, p } => {
                write!(f, "bernoulli:{c_minus},{c_plus},{p}")
            }
            LawKind::Uniform { lo, hi } => write!(f, "uniform:{lo},{hi}"),
            LawKind::Constant { c } => write!(f, "constant:{c}"),
        }
    }
}

/// Undirected edge `{site, site + e_axis}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EdgeId {
    pub site: Vec<i64>,
    pub axis: usize,
}

impl EdgeId {
    pub fn new(site: impl Into<Vec<i64>>, axis: usize) -> Self {
        EdgeId {
            site: site.into(),
            axis,
        }
    }
}

/// An i.i.d. conductance field on `Z^d`, determined by `(law, dim, seed)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Environment {
    pub law: ConductanceLaw,
    pub dim: usize,
    pub seed: u64,
    key: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const FRESH_STREAM: u64 = 0xA076_1D64_78BD_642F;

/// SplitMix64 finalizer; a bijection on `u64`.
#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a seed with a stream index into a new, well-mixed seed.
#[inline]
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(mix64(seed ^ GOLDEN).wrapping_add(stream.wrapping_mul(GOLDEN)))
}

#[inline]
fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

impl Environment {
    pub fn new(law: ConductanceLaw, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dimension must be at least 1"));
        }
        Ok(Environment {
            law,
            dim,
            seed,
            key: mix64(seed ^ 0x5851_F42D_4C95_7F2D),
        })
    }

    #[inline]
    fn edge_bits(&self, site: &[i64], axis: usize) -> u64 {
        let mut h = self.key;
        for &c in site {
            h = mix64((h ^ c as u64).wrapping_add(GOLDEN));
        }
        mix64(h ^ (axis as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03))
    }

    /// Conductance of the edge `{site, site + e_axis}`.
    #[inline]
    pub fn edge(&self, site: &[i64], axis: usize) -> f64 {
        debug_assert_eq!(site.len(), self.dim);
        debug_assert!(axis < self.dim);
        self.law.quantile(unit_f64(self.edge_bits(site, axis)))
    }

    pub fn edge_id(&self, id: &EdgeId) -> f64 {
        self.edge(&id.site, id.axis)
    }

    /// `sum_{y ~ x} a_{xy}`.
    #[inline]
    pub fn pi_at(&self, site: &mut [i64]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.dim {
            total += self.edge(site, i);
            site[i] -= 1;
            total += self.edge(site, i);
            site[i] += 1;
        }
        total
    }

    /// Empirical mean over `budget` edges drawn from a stream disjoint from the field.
    fn fresh_sample_mean(&self, budget: u64) -> f64 {
        let key = mix64(self.key ^ FRESH_STREAM);
        let values: Vec<f64> = (0..budget)
            .map(|i| {
                self.law
                    .quantile(unit_f64(mix64(key.wrapping_add(i.wrapping_mul(GOLDEN)))))
            })
            .collect();
        crate::sum::pairwise_sum(&values) / budget as f64
    }
}

/// Estimate of `E[a_e]`: the analytic mean when known, else a fresh-sample average.
pub fn mean_conductance(env: &Environment, sample_budget: u64) -> Result<f64> {
    if sample_budget == 0 {
        return Err(Error::param("sample budget must be at least 1"));
    }
    Ok(match env.law.exact_mean {
        Some(m) => m,
        None => env.fresh_sample_mean(sample_budget),
    })
}

/// `E[xi . a xi] = |xi|^2 E[a_e]` for i.i.d. diagonal coefficients.
pub fn mean_axia(env: &Environment, xi: &[f64], sample_budget: u64) -> Result<f64> {
    let norm2: f64 = xi.iter().map(|x| x * x).sum();
    Ok(norm2 * mean_conductance(env, sample_budget)?)
}

/// First coordinate vector of `R^dim`.
pub fn unit_xi(dim: usize) -> Vec<f64> {
    let mut xi = vec![0.0; dim];
    xi[0] = 1.0;
    xi
}

pub fn check_xi(xi: &[f64], dim: usize) -> Result<()> {
    if xi.len() != dim {
        return Err(Error::param(format!(
            "xi has {} components, expected {dim}",
            xi.len()
        )));
    }
    let norm2: f64 = xi.iter().map(|x| x * x).sum();
    if (norm2 - 1.0).abs() > 1e-9 {
        return Err(Error::param(format!(
            "xi must be a unit vector, |xi|^2 = {norm2}"
        )));
    }
    Ok(())
}
