//! Periodic media with dense linear algebra, used as an exact reference for
//! the truncated estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::env::{check_xi, Environment};
use crate::error::{Error, Result};

/// The environment restricted to `{0, ..., side-1}^dim` and wrapped periodically.
#[derive(Clone, Debug)]
pub struct TorusField {
    pub dim: usize,
    pub side: usize,
    /// `cond[axis][site]` is the conductance of `{site, site + e_axis}`.
    cond: Vec<Vec<f64>>,
}

impl TorusField {
    pub fn from_env(env: &Environment, side: usize) -> Result<Self> {
        Self::from_fn(env.dim, side, |x, axis| env.edge(x, axis))
    }

    pub fn from_fn(
        dim: usize,
        side: usize,
        mut a: impl FnMut(&[i64], usize) -> f64,
    ) -> Result<Self> {
        if side < 3 {
            return Err(Error::param(format!(
                "torus side must be at least 3, got {side}"
            )));
        }
        let n = side.pow(dim as u32);
        let mut field = TorusField {
            dim,
            side,
            cond: Vec::new(),
        };
        for axis in 0..dim {
            field
                .cond
                .push((0..n).map(|i| a(&field.site(i), axis)).collect());
        }
        Ok(field)
    }

    pub fn len(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn site(&self, mut index: usize) -> Vec<i64> {
        let mut x = vec![0; self.dim];
        for c in x.iter_mut().rev() {
            *c = (index % self.side) as i64;
            index /= self.side;
        }
        x
    }

    pub fn index(&self, site: &[i64]) -> usize {
        let s = self.side as i64;
        site.iter()
            .fold(0, |acc, &c| acc * self.side + c.rem_euclid(s) as usize)
    }

    fn neighbour(&self, index: usize, axis: usize, forward: bool) -> usize {
        let mut x = self.site(index);
        x[axis] += if forward { 1 } else { -1 };
        self.index(&x)
    }

    pub fn a(&self, index: usize, axis: usize) -> f64 {
        self.cond[axis][index]
    }

    /// Dense `L` with `(L u)(x) = sum_y a_xy (u(x) - u(y))`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for x in 0..n {
            for axis in 0..self.dim {
                let y = self.neighbour(x, axis, true);
                let a = self.cond[axis][x];
                m[(x, x)] += a;
                m[(y, y)] += a;
                m[(x, y)] -= a;
                m[(y, x)] -= a;
            }
        }
        m
    }

    pub fn pi(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            (0..self.len()).map(|x| {
                (0..self.dim)
                    .map(|axis| {
                        self.cond[axis][x] + self.cond[axis][self.neighbour(x, axis, false)]
                    })
                    .sum()
            }),
        )
    }

    /// `f = div(a xi)`; it sums to zero over the torus.
    pub fn div_a_xi(&self, xi: &[f64]) -> Result<DVector<f64>> {
        check_xi(xi, self.dim)?;
        Ok(DVector::from_iterator(
            self.len(),
            (0..self.len()).map(|x| {
                (0..self.dim)
                    .map(|axis| {
                        xi[axis]
                            * (self.cond[axis][x] - self.cond[axis][self.neighbour(x, axis, false)])
                    })
                    .sum()
            }),
        ))
    }

    /// One lazy-walk step `u - L u / (2 pi)`.
    pub fn parabolic_step(&self, u: &DVector<f64>) -> DVector<f64> {
        let lu = self.laplacian() * u;
        let pi = self.pi();
        DVector::from_iterator(
            self.len(),
            (0..self.len()).map(|x| u[x] - lu[x] / (2.0 * pi[x])),
        )
    }
}

/// Normalised inner product `|T|^-1 sum_x u v`.
fn avg_dot(u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    u.dot(v) / u.len() as f64
}

/// `|T|^-1 <f, L^+ f>` through the eigendecomposition of `L`.
pub fn green_quadratic(torus: &TorusField, f: &DVector<f64>) -> f64 {
    let eig = SymmetricEigen::new(torus.laplacian());
    let cutoff = 1e-10 * eig.eigenvalues.amax();
    let total: f64 = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .filter(|(l, _)| **l > cutoff)
        .map(|(l, v)| v.dot(f).powi(2) / l)
        .sum();
    total / f.len() as f64
}

#[derive(Clone, Debug)]
pub struct TorusCascade {
    /// `2^k (<f_{k-1}, f_k> + <f_k, f_k>)`, normalised by the volume.
    pub terms: Vec<f64>,
    /// `<f_k, L^+ f_k>` after each level.
    pub remainders: Vec<f64>,
    /// `<f, L^+ f>`.
    pub exact: f64,
}

impl TorusCascade {
    pub fn partial_sums(&self) -> Vec<f64> {
        self.terms
            .iter()
            .scan(0.0, |acc, t| {
                *acc += t;
                Some(*acc)
            })
            .collect()
    }
}

/// The hierarchical cascade with exact resolvents `(2^-k + L)^-1`.
pub fn torus_cascade(torus: &TorusField, xi: &[f64], n: usize) -> Result<TorusCascade> {
    let l = torus.laplacian();
    let f = torus.div_a_xi(xi)?;
    let exact = green_quadratic(torus, &f);
    let mut prev = f;
    let mut terms = Vec::with_capacity(n + 1);
    let mut remainders = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let mu = 2f64.powi(-(k as i32));
        let shifted = &l + DMatrix::identity(l.nrows(), l.ncols()) * mu;
        let chol = shifted
            .cholesky()
            .ok_or_else(|| Error::Singular(format!("mu + L at level {k}")))?;
        let v = chol.solve(&(&prev * mu));
        terms.push((avg_dot(&prev, &v) + avg_dot(&v, &v)) / mu);
        remainders.push(green_quadratic(torus, &v));
        prev = v;
    }
    Ok(TorusCascade {
        terms,
        remainders,
        exact,
    })
}

/// Running sums `S_K = sum_{k <= K} factor (<w_k, w_k>_pi + <w_k, w_{k+1}>_pi)`
/// of the explicit parabolic iteration started from `f / pi`.
pub fn parabolic_partial_sums(
    torus: &TorusField,
    xi: &[f64],
    steps: usize,
    factor: f64,
) -> Result<Vec<f64>> {
    let pi = torus.pi();
    let f = torus.div_a_xi(xi)?;
    let mut w = f.component_div(&pi);
    let mut sums = Vec::with_capacity(steps + 1);
    let mut acc = 0.0;
    let l = torus.laplacian();
    for _ in 0..=steps {
        let lw = &l * &w;
        let next =
            DVector::from_iterator(w.len(), (0..w.len()).map(|x| w[x] - lw[x] / (2.0 * pi[x])));
        let pw = w.component_mul(&pi);
        acc += factor * (avg_dot(&pw, &w) + avg_dot(&pw, &next));
        sums.push(acc);
        w = next;
    }
    Ok(sums)
}

/// `sum_j c_j^2 rho_j^{2K+2} / lambda_j`, the part of the dense value not yet
/// captured by `S_K`, from the spectral decomposition of `pi^-1/2 L pi^-1/2`.
pub fn parabolic_tail(torus: &TorusField, xi: &[f64], steps: usize) -> Result<f64> {
    let pi = torus.pi();
    let f = torus.div_a_xi(xi)?;
    let scale = pi.map(|p| p.sqrt().recip());
    let l = torus.laplacian();
    let m = DMatrix::from_fn(l.nrows(), l.ncols(), |i, j| scale[i] * l[(i, j)] * scale[j]);
    let h = f.component_mul(&scale);
    let eig = SymmetricEigen::new(m);
    let cutoff = 1e-10 * eig.eigenvalues.amax();
    let total: f64 = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .filter(|(l, _)| **l > cutoff)
        .map(|(l, v)| {
            let rho = 1.0 - l / 2.0;
            v.dot(&h).powi(2) * rho.powi(2 * steps as i32 + 2) / l
        })
        .sum();
    Ok(total / f.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{unit_xi, ConductanceLaw};

    fn torus(side: usize, seed: u64) -> TorusField {
        let env =
            Environment::new(ConductanceLaw::two_point(1.0, 9.0, 0.5).unwrap(), 2, seed).unwrap();
        TorusField::from_env(&env, side).unwrap()
    }

    #[test]
    fn indexing_wraps() {
        let t = torus(5, 1);
        assert_eq!(t.index(&[-1, 0]), t.index(&[4, 0]));
        assert_eq!(t.index(&[2, 7]), t.index(&[2, 2]));
        for i in 0..t.len() {
            assert_eq!(t.index(&t.site(i)), i);
        }
    }

    #[test]
    fn laplacian_annihilates_constants_and_matches_pi() {
        let t = torus(6, 2);
        let l = t.laplacian();
        let ones = DVector::from_element(t.len(), 1.0);
        assert!((&l * &ones).amax() < 1e-12);
        let pi = t.pi();
        for x in 0..t.len() {
            assert!((l[(x, x)] - pi[x]).abs() < 1e-12);
        }
        assert!((t.div_a_xi(&unit_xi(2)).unwrap().sum()).abs() < 1e-12);
    }

    #[test]
    fn green_quadratic_inverts_on_mean_zero() {
        let t = torus(6, 3);
        let f = t.div_a_xi(&unit_xi(2)).unwrap();
        let l = t.laplacian();
        let n = t.len();
        let bordered = &l + DMatrix::from_element(n, n, 1.0 / n as f64);
        let u = bordered.lu().solve(&f).unwrap();
        assert!((green_quadratic(&t, &f) - f.dot(&u) / n as f64).abs() < 1e-10);
    }

    #[test]
    fn cascade_identity_is_exact() {
        let t = torus(8, 4);
        let c = torus_cascade(&t, &unit_xi(2), 6).unwrap();
        let sums = c.partial_sums();
        for (s, r) in sums.iter().zip(&c.remainders) {
            assert!((s + r - c.exact).abs() < 1e-10 * (1.0 + c.exact));
        }
        assert!(c.terms.iter().all(|t| *t >= -1e-14));
    }

    #[test]
    fn parabolic_step_is_an_average() {
        let t = torus(6, 5);
        let u = DVector::from_fn(t.len(), |i, _| ((i * 37) % 11) as f64 - 5.0);
        let pu = t.parabolic_step(&u);
        assert!(pu.amax() <= u.amax() + 1e-12);
    }

    #[test]
    fn parabolic_sums_match_tail() {
        let t = torus(6, 6);
        let xi = unit_xi(2);
        let f = t.div_a_xi(&xi).unwrap();
        let exact = green_quadratic(&t, &f);
        let sums = parabolic_partial_sums(&t, &xi, 100, 0.5).unwrap();
        for k in [0usize, 10, 100] {
            let tail = parabolic_tail(&t, &xi, k).unwrap();
            assert!((exact - sums[k] - tail).abs() < 1e-10, "{k}");
        }
    }
}
