//! Boxed lattice functions and the operator `mu - div(a grad)`.
//!
//! Conventions shared by every module: `a_i(x)` is the conductance of the
//! edge `{x, x + e_i}`, the gradient is the forward difference and the
//! divergence is the backward difference `F_i(x) - F_i(x - e_i)`. Functions
//! stored on a box `B_r = {-r, ..., r}^d` are extended by zero outside it,
//! which is how Dirichlet truncation is realised.

use crate::env::Environment;
use crate::error::{Error, Result};
pub use crate::stencil::StencilOperator;
use crate::sum::pairwise_sum;

/// The centred box `{-radius, ..., radius}^dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoxSpec {
    pub dim: usize,
    pub radius: usize,
}

impl BoxSpec {
    pub fn new(dim: usize, radius: usize) -> Self {
        BoxSpec { dim, radius }
    }

    /// `B_r` with the radius floored, matching `{-floor(r), ..., floor(r)}^d`.
    pub fn of_real_radius(dim: usize, r: f64) -> Self {
        BoxSpec::new(dim, r.max(0.0).floor() as usize)
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn volume(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    pub fn contains(&self, site: &[i64]) -> bool {
        let r = self.radius as i64;
        site.iter().all(|&c| (-r..=r).contains(&c))
    }

    /// Row-major linear index, last axis fastest.
    pub fn index(&self, site: &[i64]) -> Option<usize> {
        debug_assert_eq!(site.len(), self.dim);
        if !self.contains(site) {
            return None;
        }
        let side = self.side();
        let r = self.radius as i64;
        Some(
            site.iter()
                .fold(0usize, |acc, &c| acc * side + (c + r) as usize),
        )
    }

    pub fn site(&self, mut index: usize) -> Vec<i64> {
        let side = self.side();
        let mut site = vec![0i64; self.dim];
        for c in site.iter_mut().rev() {
            *c = (index % side) as i64 - self.radius as i64;
            index /= side;
        }
        site
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.side().pow((self.dim - 1 - axis) as u32)
    }

    /// Visits every site in index order, reusing one coordinate buffer.
    pub fn for_each_site(&self, mut f: impl FnMut(usize, &[i64])) {
        let r = self.radius as i64;
        let mut site = vec![-r; self.dim];
        for idx in 0..self.volume() {
            f(idx, &site);
            for c in site.iter_mut().rev() {
                if *c < r {
                    *c += 1;
                    break;
                }
                *c = -r;
            }
        }
    }
}

/// Start offsets, inside the box of radius `outer`, of the last-axis rows of
/// the concentric box of radius `inner`. Each row has length `2 * inner + 1`.
pub(crate) fn row_starts(dim: usize, outer: usize, inner: usize) -> Vec<usize> {
    debug_assert!(inner <= outer);
    let outer_side = 2 * outer + 1;
    let inner_side = 2 * inner + 1;
    let offset = outer - inner;
    let mut prefixes = vec![0usize];
    for _ in 1..dim {
        prefixes = prefixes
            .iter()
            .flat_map(|&p| (0..inner_side).map(move |j| p * outer_side + offset + j))
            .collect();
    }
    prefixes.iter().map(|&p| p * outer_side + offset).collect()
}

/// A real function on a box, zero outside.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFn {
    pub bx: BoxSpec,
    pub values: Vec<f64>,
}

pub(crate) fn alloc_zeroed(len: usize) -> Result<Vec<f64>> {
    let mut v = Vec::new();
    v.try_reserve_exact(len)
        .map_err(|e| Error::Resource(format!("{len} values: {e}")))?;
    v.resize(len, 0.0);
    Ok(v)
}

impl GridFn {
    pub fn zeros(bx: BoxSpec) -> Self {
        GridFn {
            bx,
            values: vec![0.0; bx.volume()],
        }
    }

    pub fn from_values(bx: BoxSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != bx.volume() {
            return Err(Error::param(format!(
                "{} values for a box of volume {}",
                values.len(),
                bx.volume()
            )));
        }
        Ok(GridFn { bx, values })
    }

    pub fn from_fn(bx: BoxSpec, mut f: impl FnMut(&[i64]) -> f64) -> Self {
        let mut values = Vec::with_capacity(bx.volume());
        bx.for_each_site(|_, x| values.push(f(x)));
        GridFn { bx, values }
    }

    /// Value at `site`, zero outside the box.
    pub fn get(&self, site: &[i64]) -> f64 {
        self.bx.index(site).map_or(0.0, |i| self.values[i])
    }

    /// Copy onto the concentric box of radius `radius` (truncating or zero-padding).
    pub fn resized(&self, radius: usize) -> GridFn {
        let target = BoxSpec::new(self.bx.dim, radius);
        let mut out = GridFn::zeros(target);
        let common = radius.min(self.bx.radius);
        let len = 2 * common + 1;
        let src = row_starts(self.bx.dim, self.bx.radius, common);
        let dst = row_starts(self.bx.dim, radius, common);
        for (s, d) in src.iter().zip(&dst) {
            out.values[*d..*d + len].copy_from_slice(&self.values[*s..*s + len]);
        }
        out
    }

    pub fn scaled(mut self, factor: f64) -> GridFn {
        self.values.iter_mut().for_each(|v| *v *= factor);
        self
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Conductances of every edge touching a box, cached densely.
///
/// Stores `a_i(x)` for all `x` in `B_{radius+1}`, which covers each edge with
/// at least one endpoint in `B_radius`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalField {
    pub bx: BoxSpec,
    cond: Vec<Vec<f64>>,
}

impl LocalField {
    fn cover(&self) -> BoxSpec {
        BoxSpec::new(self.bx.dim, self.bx.radius + 1)
    }

    /// Builds a field from an explicit edge function, e.g. for hand-made test media.
    pub fn from_fn(bx: BoxSpec, mut a: impl FnMut(&[i64], usize) -> f64) -> Result<Self> {
        let cover = BoxSpec::new(bx.dim, bx.radius + 1);
        let mut cond = Vec::with_capacity(bx.dim);
        for axis in 0..bx.dim {
            let mut values = alloc_zeroed(cover.volume())?;
            cover.for_each_site(|idx, x| values[idx] = a(x, axis));
            cond.push(values);
        }
        Ok(LocalField { bx, cond })
    }

    /// `a_axis(site)`; `site` must lie in `B_{radius+1}`.
    pub fn a(&self, site: &[i64], axis: usize) -> f64 {
        let idx = self
            .cover()
            .index(site)
            .unwrap_or_else(|| panic!("edge ({site:?}, {axis}) outside the materialized field"));
        self.cond[axis][idx]
    }

    /// Conductance array of one axis over `B_{radius+1}`.
    pub fn axis_values(&self, axis: usize) -> &[f64] {
        &self.cond[axis]
    }
}

/// Caches every edge with at least one endpoint in `bx`.
pub fn materialize(env: &Environment, bx: BoxSpec) -> Result<LocalField> {
    if env.dim != bx.dim {
        return Err(Error::param("environment and box dimensions differ"));
    }
    LocalField::from_fn(bx, |x, axis| env.edge(x, axis))
}

pub(crate) fn check_covered(field: &LocalField, bx: &BoxSpec) -> Result<()> {
    if bx.dim != field.bx.dim || bx.radius > field.bx.radius {
        return Err(Error::param(format!(
            "box of radius {} not covered by field of radius {}",
            bx.radius, field.bx.radius
        )));
    }
    Ok(())
}

/// `x -> sum_i xi_i (a_i(x) - a_i(x - e_i))` on `bx`.
pub fn div_a_xi(field: &LocalField, xi: &[f64], bx: BoxSpec) -> Result<GridFn> {
    check_covered(field, &bx)?;
    if xi.len() != bx.dim {
        return Err(Error::param("xi has the wrong dimension"));
    }
    let cover = field.cover();
    let mut out = GridFn::zeros(bx);
    let len = bx.side();
    let rows_out = row_starts(bx.dim, bx.radius, bx.radius);
    let rows_in = row_starts(bx.dim, cover.radius, bx.radius);
    for (axis, &x) in xi.iter().enumerate().take(bx.dim) {
        if x == 0.0 {
            continue;
        }
        let s = cover.stride(axis);
        let c = &field.cond[axis];
        for (&o, &p) in rows_out.iter().zip(&rows_in) {
            let dst = &mut out.values[o..o + len];
            let here = &c[p..p + len];
            let back = &c[p - s..p - s + len];
            for ((d, h), b) in dst.iter_mut().zip(here).zip(back) {
                *d += x * (h - b);
            }
        }
    }
    Ok(out)
}

/// `pi(x) = sum_{y ~ x} a_{xy}`.
pub fn pi_weight(field: &LocalField, site: &[i64]) -> f64 {
    let mut y = site.to_vec();
    let mut total = 0.0;
    for axis in 0..field.bx.dim {
        total += field.a(&y, axis);
        y[axis] -= 1;
        total += field.a(&y, axis);
        y[axis] += 1;
    }
    total
}

/// `pi` tabulated on `bx`.
pub fn pi_grid(field: &LocalField, bx: BoxSpec) -> Result<GridFn> {
    check_covered(field, &bx)?;
    Ok(GridFn::from_fn(bx, |x| pi_weight(field, x)))
}

/// `(mu + L) u` with `u` extended by zero outside its box.
pub fn apply_operator(field: &LocalField, mu: f64, u: &GridFn) -> Result<GridFn> {
    let op = StencilOperator::new(field, u.bx.radius, mu)?;
    let padded = op.pad(u);
    let mut out = vec![0.0; padded.len()];
    op.apply(&padded, &mut out);
    Ok(op.unpad(&out))
}

/// `|B_r|^{-1} sum_{x in B_r} w(x) u(x) v(x)`, with `r` floored.
pub fn box_average(u: &GridFn, v: &GridFn, weight: Option<&GridFn>, r: f64) -> Result<f64> {
    let inner = BoxSpec::of_real_radius(u.bx.dim, r);
    let mut boxes = vec![&u.bx, &v.bx];
    if let Some(w) = weight {
        boxes.push(&w.bx);
    }
    for b in &boxes {
        if b.dim != inner.dim || b.radius < inner.radius {
            return Err(Error::param(format!(
                "average over radius {} needs data on that box (have radius {})",
                inner.radius, b.radius
            )));
        }
    }
    let len = inner.side();
    let ru = row_starts(inner.dim, u.bx.radius, inner.radius);
    let rv = row_starts(inner.dim, v.bx.radius, inner.radius);
    let rw = weight.map(|w| row_starts(inner.dim, w.bx.radius, inner.radius));
    let mut buf = vec![0.0; len];
    let mut row_sums = Vec::with_capacity(ru.len());
    for (row, (&a, &b)) in ru.iter().zip(&rv).enumerate() {
        let ua = &u.values[a..a + len];
        let vb = &v.values[b..b + len];
        match (weight, &rw) {
            (Some(w), Some(rw)) => {
                let c = rw[row];
                let wc = &w.values[c..c + len];
                for (((o, x), y), z) in buf.iter_mut().zip(ua).zip(vb).zip(wc) {
                    *o = z * x * y;
                }
            }
            _ => {
                for ((o, x), y) in buf.iter_mut().zip(ua).zip(vb) {
                    *o = x * y;
                }
            }
        }
        row_sums.push(pairwise_sum(&buf));
    }
    Ok(pairwise_sum(&row_sums) / inner.volume() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ConductanceLaw, Environment};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_env(seed: u64, dim: usize) -> Environment {
        Environment::new(ConductanceLaw::uniform(1.0, 9.0).unwrap(), dim, seed).unwrap()
    }

    fn random_grid(bx: BoxSpec, rng: &mut ChaCha8Rng) -> GridFn {
        GridFn::from_fn(bx, |_| rng.random_range(-1.0..1.0))
    }

    /// Independent dense assembly of `mu + L` with Dirichlet-zero exterior.
    fn dense_operator(field: &LocalField, bx: BoxSpec, mu: f64) -> DMatrix<f64> {
        let n = bx.volume();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            let x = bx.site(i);
            m[(i, i)] += mu;
            for axis in 0..bx.dim {
                let mut y = x.clone();
                y[axis] += 1;
                let a_fwd = field.a(&x, axis);
                m[(i, i)] += a_fwd;
                if let Some(j) = bx.index(&y) {
                    m[(i, j)] -= a_fwd;
                }
                y[axis] -= 2;
                let a_bwd = field.a(&y, axis);
                m[(i, i)] += a_bwd;
                if let Some(j) = bx.index(&y) {
                    m[(i, j)] -= a_bwd;
                }
            }
        }
        m
    }

    #[test]
    fn box_indexing_round_trips() {
        let bx = BoxSpec::new(3, 2);
        assert_eq!(bx.volume(), 125);
        for i in 0..bx.volume() {
            assert_eq!(bx.index(&bx.site(i)), Some(i));
        }
        assert_eq!(bx.index(&[0, 0, 3]), None);
        assert_eq!(BoxSpec::of_real_radius(2, 2.7).radius, 2);
    }

    #[test]
    fn row_starts_cover_inner_box() {
        for dim in 1..=3 {
            let outer = BoxSpec::new(dim, 3);
            let inner = BoxSpec::new(dim, 1);
            let starts = row_starts(dim, 3, 1);
            let mut seen = Vec::new();
            for s in starts {
                seen.extend(s..s + inner.side());
            }
            let mut expected = Vec::new();
            inner.for_each_site(|_, x| expected.push(outer.index(x).unwrap()));
            assert_eq!(seen, expected);
        }
    }

    #[test]
    fn materialize_constant_field() {
        let env = Environment::new(ConductanceLaw::constant(3.0).unwrap(), 2, 0).unwrap();
        let field = materialize(&env, BoxSpec::new(2, 1)).unwrap();
        let bx = BoxSpec::new(2, 1);
        let mut touching = 0;
        // every edge with an endpoint in B_1
        BoxSpec::new(2, 2).for_each_site(|_, x| {
            for axis in 0..2 {
                let mut y = x.to_vec();
                y[axis] += 1;
                if bx.contains(x) || bx.contains(&y) {
                    touching += 1;
                    assert_eq!(field.a(x, axis), 3.0);
                }
            }
        });
        assert_eq!(touching, 24);
    }

    #[test]
    fn materialize_is_deterministic_and_consistent() {
        let env = random_env(8, 2);
        let a = materialize(&env, BoxSpec::new(2, 2)).unwrap();
        let b = materialize(&env, BoxSpec::new(2, 2)).unwrap();
        assert_eq!(a, b);
        let big = materialize(&env, BoxSpec::new(2, 4)).unwrap();
        BoxSpec::new(2, 3).for_each_site(|_, x| {
            for axis in 0..2 {
                assert_eq!(a.a(x, axis), big.a(x, axis));
            }
        });
    }

    fn single_defect() -> LocalField {
        LocalField::from_fn(BoxSpec::new(2, 3), |x, axis| {
            if x == [0, 0] && axis == 0 {
                9.0
            } else {
                1.0
            }
        })
        .unwrap()
    }

    #[test]
    fn div_a_xi_examples() {
        let env = Environment::new(ConductanceLaw::constant(4.0).unwrap(), 2, 0).unwrap();
        let field = materialize(&env, BoxSpec::new(2, 3)).unwrap();
        let f = div_a_xi(&field, &[1.0, 0.0], BoxSpec::new(2, 3)).unwrap();
        assert_eq!(f.max_abs(), 0.0);

        let field = single_defect();
        let f = div_a_xi(&field, &[1.0, 0.0], BoxSpec::new(2, 3)).unwrap();
        assert_eq!(f.get(&[0, 0]), 8.0);
        assert_eq!(f.get(&[1, 0]), -8.0);
        let nonzero = f.values.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, 2);
    }

    #[test]
    fn divergence_telescopes_to_boundary() {
        let env = random_env(21, 2);
        let r = 6;
        let field = materialize(&env, BoxSpec::new(2, r)).unwrap();
        let xi = [0.6, 0.8];
        let f = div_a_xi(&field, &xi, BoxSpec::new(2, r)).unwrap();
        let interior: f64 = f.values.iter().sum();
        // brute force boundary flux: outgoing minus incoming flux through the faces
        let ri = r as i64;
        let mut flux = 0.0;
        for t in -ri..=ri {
            flux += xi[0] * (field.a(&[ri, t], 0) - field.a(&[-ri - 1, t], 0));
            flux += xi[1] * (field.a(&[t, ri], 1) - field.a(&[t, -ri - 1], 1));
        }
        assert!((interior - flux).abs() < 1e-10);
    }

    #[test]
    fn operator_stencil_one_dimensional() {
        let field = LocalField::from_fn(BoxSpec::new(1, 1), |_, _| 1.0).unwrap();
        let u = GridFn::from_fn(BoxSpec::new(1, 1), |x| if x[0] == 0 { 1.0 } else { 0.0 });
        let out = apply_operator(&field, 0.0, &u).unwrap();
        assert_eq!(out.values, vec![-1.0, 2.0, -1.0]);
        let zero = apply_operator(&field, 0.7, &GridFn::zeros(BoxSpec::new(1, 1))).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
    }

    #[test]
    fn operator_matches_dense_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (dim, r) in [(2, 1), (2, 3), (3, 1), (1, 5)] {
            let env = random_env(rng.random(), dim);
            let bx = BoxSpec::new(dim, r);
            let field = materialize(&env, BoxSpec::new(dim, r + 1)).unwrap();
            let u = random_grid(bx, &mut rng);
            let mu = 0.3;
            let got = apply_operator(&field, mu, &u).unwrap();
            let dense = dense_operator(&field, bx, mu) * DVector::from_vec(u.values.clone());
            for (g, e) in got.values.iter().zip(dense.iter()) {
                assert!((g - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn operator_symmetric_and_coercive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bx = BoxSpec::new(2, 4);
        for _ in 0..10 {
            let field = materialize(&random_env(rng.random(), 2), bx).unwrap();
            let mu = rng.random_range(0.0..1.0);
            let u = random_grid(bx, &mut rng);
            let v = random_grid(bx, &mut rng);
            let au = apply_operator(&field, mu, &u).unwrap();
            let av = apply_operator(&field, mu, &v).unwrap();
            let dot = |a: &GridFn, b: &GridFn| -> f64 {
                a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum()
            };
            assert!((dot(&u, &av) - dot(&au, &v)).abs() < 1e-10);
            assert!(dot(&u, &au) >= mu * dot(&u, &u) - 1e-10);
        }
    }

    #[test]
    fn divergence_and_gradient_are_adjoint() {
        // <div(a F), g> = - sum_edges a F . grad g for compact F, g
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r = 4;
        let field = materialize(&random_env(2, 2), BoxSpec::new(2, r + 1)).unwrap();
        let inner = BoxSpec::new(2, r - 1);
        let fx = random_grid(inner, &mut rng);
        let fy = random_grid(inner, &mut rng);
        let g = random_grid(inner, &mut rng);
        let flux = |x: &[i64], axis: usize| -> f64 {
            field.a(x, axis) * if axis == 0 { fx.get(x) } else { fy.get(x) }
        };
        let bx = BoxSpec::new(2, r);
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        bx.for_each_site(|_, x| {
            for axis in 0..2 {
                let mut y = x.to_vec();
                y[axis] -= 1;
                lhs += (flux(x, axis) - flux(&y, axis)) * g.get(x);
                y[axis] += 2;
                rhs -= flux(x, axis) * (g.get(&y) - g.get(x));
            }
        });
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn pi_weight_examples() {
        let env = Environment::new(ConductanceLaw::constant(2.5).unwrap(), 2, 0).unwrap();
        let field = materialize(&env, BoxSpec::new(2, 1)).unwrap();
        assert_eq!(pi_weight(&field, &[0, 0]), 10.0);
        assert_eq!(pi_weight(&single_defect(), &[0, 0]), 12.0);

        // row sum of the stencil applied to the all-ones function on a big box
        let field = materialize(&random_env(3, 2), BoxSpec::new(2, 3)).unwrap();
        let bx = BoxSpec::new(2, 2);
        bx.for_each_site(|_, x| {
            let indicator = GridFn::from_fn(bx, |y| if y == x { 1.0 } else { 0.0 });
            let out = apply_operator(&field, 0.0, &indicator).unwrap();
            assert!((out.get(x) - pi_weight(&field, x)).abs() < 1e-12);
        });
    }

    #[test]
    fn box_average_examples() {
        let bx = BoxSpec::new(2, 3);
        let one = GridFn::from_fn(bx, |_| 1.0);
        assert_eq!(box_average(&one, &one, None, 2.0).unwrap(), 1.0);
        let delta = GridFn::from_fn(bx, |x| if x == [0, 0] { 1.0 } else { 0.0 });
        assert!((box_average(&delta, &delta, None, 1.0).unwrap() - 1.0 / 9.0).abs() < 1e-15);
        assert!(box_average(&one, &one, None, 3.5).is_ok());
        assert!(box_average(&one, &one, None, 4.0).is_err());
    }

    #[test]
    fn box_average_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = random_grid(BoxSpec::new(2, 4), &mut rng);
        let v = random_grid(BoxSpec::new(2, 5), &mut rng);
        let w = random_grid(BoxSpec::new(2, 4), &mut rng);
        let mut sum = 0.0;
        let mut wsum = 0.0;
        for x in -2..=2i64 {
            for y in -2..=2i64 {
                sum += u.get(&[x, y]) * v.get(&[x, y]);
                wsum += w.get(&[x, y]) * u.get(&[x, y]) * v.get(&[x, y]);
            }
        }
        assert!((box_average(&u, &v, None, 2.7).unwrap() - sum / 25.0).abs() < 1e-14);
        assert!((box_average(&u, &v, Some(&w), 2.7).unwrap() - wsum / 25.0).abs() < 1e-14);
    }

    #[test]
    fn resize_pads_and_truncates() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = random_grid(BoxSpec::new(2, 3), &mut rng);
        let big = u.resized(5);
        let small = u.resized(1);
        BoxSpec::new(2, 5).for_each_site(|_, x| {
            assert_eq!(big.get(x), u.get(x));
            if BoxSpec::new(2, 1).contains(x) {
                assert_eq!(small.get(x), u.get(x));
            }
        });
    }
}
