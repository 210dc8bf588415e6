//! Matrix-free `(mu + L)` in padded storage, plus the fused sweeps used by
//! conjugate gradient.

use crate::error::Result;
use crate::lattice::{alloc_zeroed, check_covered, row_starts, BoxSpec, GridFn, LocalField};
use crate::sum::{fold_lanes, pairwise_dot, pairwise_sum, LANES};

trait Coef: Copy {
    fn get(self) -> f64;
}

impl Coef for f32 {
    #[inline(always)]
    fn get(self) -> f64 {
        self as f64
    }
}

impl Coef for f64 {
    #[inline(always)]
    fn get(self) -> f64 {
        self
    }
}

/// Conductances copied onto the padded box. Narrowed to `f32` whenever that
/// is lossless, which halves memory traffic for the common discrete laws.
enum Coefs {
    Single(Vec<Vec<f32>>),
    Double(Vec<Vec<f64>>),
}

macro_rules! with_coefs {
    ($coefs:expr, $c:ident => $body:expr) => {
        match $coefs {
            Coefs::Single($c) => $body,
            Coefs::Double($c) => $body,
        }
    };
}

/// `out = mu u + L u` on the row of length `out.len()` starting at `start`.
#[inline(always)]
fn row_apply<C: Coef>(
    mu: f64,
    coefs: &[Vec<C>],
    strides: &[usize],
    u: &[f64],
    start: usize,
    out: &mut [f64],
) {
    let len = out.len();
    let uc = &u[start..start + len];
    for (o, x) in out.iter_mut().zip(uc) {
        *o = mu * x;
    }
    for (c, &s) in coefs.iter().zip(strides) {
        let fwd = &c[start..start + len];
        let bwd = &c[start - s..start - s + len];
        let up = &u[start + s..start + s + len];
        let down = &u[start - s..start - s + len];
        for (((((o, x), cf), cb), xu), xd) in
            out.iter_mut().zip(uc).zip(fwd).zip(bwd).zip(up).zip(down)
        {
            *o += cf.get() * (x - xu) + cb.get() * (x - xd);
        }
    }
}

/// `(mu + L) u` along one row, into `out`. The planar case gets a single
/// fused loop.
#[inline(always)]
fn row_into<C: Coef>(
    mu: f64,
    coefs: &[Vec<C>],
    strides: &[usize],
    u: &[f64],
    start: usize,
    out: &mut [f64],
) {
    let len = out.len();
    if let ([c0, c1], [s, 1]) = (coefs, strides) {
        let s = *s;
        let uc = &u[start..start + len];
        let ul = &u[start - 1..start - 1 + len];
        let ur = &u[start + 1..start + 1 + len];
        let ud = &u[start - s..start - s + len];
        let uu = &u[start + s..start + s + len];
        let cu = &c0[start..start + len];
        let cd = &c0[start - s..start - s + len];
        let cr = &c1[start..start + len];
        let cl = &c1[start - 1..start - 1 + len];
        for i in 0..len {
            let x = uc[i];
            out[i] = mu * x
                + cr[i].get() * (x - ur[i])
                + cl[i].get() * (x - ul[i])
                + cu[i].get() * (x - uu[i])
                + cd[i].get() * (x - ud[i]);
        }
    } else {
        row_apply(mu, coefs, strides, u, start, out);
    }
}

/// `x += alpha p`, `r -= alpha ap` over one row, returning the new `<r, r>`.
#[inline(always)]
fn row_update(x: &mut [f64], r: &mut [f64], p: &[f64], ap: &[f64], alpha: f64) -> f64 {
    let mut acc = [0.0; LANES];
    let mut xc = x.chunks_exact_mut(LANES);
    let mut rc = r.chunks_exact_mut(LANES);
    let mut pc = p.chunks_exact(LANES);
    let mut ac = ap.chunks_exact(LANES);
    for (((xs, rs), ps), aps) in (&mut xc).zip(&mut rc).zip(&mut pc).zip(&mut ac) {
        for j in 0..LANES {
            xs[j] += alpha * ps[j];
            rs[j] -= alpha * aps[j];
            acc[j] += rs[j] * rs[j];
        }
    }
    let tail = xc
        .into_remainder()
        .iter_mut()
        .zip(rc.into_remainder().iter_mut())
        .zip(pc.remainder())
        .zip(ac.remainder());
    for (j, (((xv, rv), pv), av)) in tail.enumerate() {
        *xv += alpha * pv;
        *rv -= alpha * av;
        acc[j] += *rv * *rv;
    }
    fold_lanes(&acc)
}

/// `(mu + L)` on `B_radius` with zero ghost values, in padded storage.
///
/// Vectors handed to the operator live on `B_{radius+1}`; the outer ring is
/// the ghost layer and must stay zero.
pub struct StencilOperator {
    pub dim: usize,
    pub radius: usize,
    pub mu: f64,
    padded: BoxSpec,
    strides: Vec<usize>,
    coefs: Coefs,
    rows: Vec<usize>,
    max_degree: f64,
}

impl StencilOperator {
    pub fn new(field: &LocalField, radius: usize, mu: f64) -> Result<Self> {
        let dim = field.bx.dim;
        check_covered(field, &BoxSpec::new(dim, radius))?;
        let padded = BoxSpec::new(dim, radius + 1);
        let len = padded.volume();
        let rows_src = row_starts(dim, field.bx.radius + 1, radius + 1);
        let row_len = padded.side();
        let mut cond = Vec::with_capacity(dim);
        for axis in 0..dim {
            let mut c = alloc_zeroed(len)?;
            let src = field.axis_values(axis);
            for (k, &s) in rows_src.iter().enumerate() {
                c[k * row_len..(k + 1) * row_len].copy_from_slice(&src[s..s + row_len]);
            }
            cond.push(c);
        }
        let rows = row_starts(dim, radius + 1, radius);
        let inner_len = 2 * radius + 1;
        let mut max_degree = 0.0f64;
        let mut deg = vec![0.0; inner_len];
        for &r in &rows {
            deg.iter_mut().for_each(|v| *v = 0.0);
            for (axis, c) in cond.iter().enumerate() {
                let s = padded.stride(axis);
                for ((v, h), b) in deg
                    .iter_mut()
                    .zip(&c[r..r + inner_len])
                    .zip(&c[r - s..r - s + inner_len])
                {
                    *v += h + b;
                }
            }
            max_degree = deg.iter().fold(max_degree, |m, v| m.max(*v));
        }
        let lossless = cond.iter().flatten().all(|&v| (v as f32) as f64 == v);
        let coefs = if lossless {
            Coefs::Single(
                cond.into_iter()
                    .map(|c| c.into_iter().map(|v| v as f32).collect())
                    .collect(),
            )
        } else {
            Coefs::Double(cond)
        };
        Ok(StencilOperator {
            dim,
            radius,
            mu,
            padded,
            strides: (0..dim).map(|i| padded.stride(i)).collect(),
            coefs,
            rows,
            max_degree,
        })
    }

    /// Upper bound on the condition number, from Gershgorin's theorem.
    pub fn condition_bound(&self) -> f64 {
        (self.mu + 2.0 * self.max_degree) / self.mu
    }

    /// Number of unknowns.
    pub fn volume(&self) -> usize {
        BoxSpec::new(self.dim, self.radius).volume()
    }

    pub fn padded_len(&self) -> usize {
        self.padded.volume()
    }

    pub fn padded_box(&self) -> BoxSpec {
        self.padded
    }

    fn row_len(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn pad(&self, u: &GridFn) -> Vec<f64> {
        debug_assert_eq!(u.bx.radius, self.radius);
        let mut out = vec![0.0; self.padded_len()];
        let len = self.row_len();
        for (k, &r) in self.rows.iter().enumerate() {
            out[r..r + len].copy_from_slice(&u.values[k * len..(k + 1) * len]);
        }
        out
    }

    pub fn unpad(&self, padded: &[f64]) -> GridFn {
        let bx = BoxSpec::new(self.dim, self.radius);
        let len = bx.side();
        let mut values = Vec::with_capacity(bx.volume());
        for &r in &self.rows {
            values.extend_from_slice(&padded[r..r + len]);
        }
        GridFn { bx, values }
    }

    /// `out = (mu + L) u` on interior sites; ghost entries of `out` are untouched.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let len = self.row_len();
        let mut buf = vec![0.0; len];
        with_coefs!(&self.coefs, c => {
            for &r in &self.rows {
                row_into(self.mu, c, &self.strides, u, r, &mut buf);
                out[r..r + len].copy_from_slice(&buf);
            }
        })
    }

    /// Same as `apply`, also returning `<u, (mu + L) u>` summed row by row.
    pub fn apply_dot(&self, u: &[f64], out: &mut [f64]) -> f64 {
        self.apply(u, out);
        self.dot(u, out)
    }

    /// Applies `L` (no mass) on the concentric sub-box of radius `inner`,
    /// handing each finished row to `visit` together with its start offset.
    pub fn for_each_laplacian_row(
        &self,
        u: &[f64],
        inner: usize,
        mut visit: impl FnMut(usize, &[f64]),
    ) {
        debug_assert!(inner <= self.radius);
        let len = 2 * inner + 1;
        let mut buf = vec![0.0; len];
        with_coefs!(&self.coefs, c => {
            for r in row_starts(self.dim, self.radius + 1, inner) {
                row_into(0.0, c, &self.strides, u, r, &mut buf);
                visit(r, &buf);
            }
        })
    }

    /// Row-ordered inner product over interior sites.
    pub fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        let len = self.row_len();
        let row_dots: Vec<f64> = self
            .rows
            .iter()
            .map(|&r| pairwise_dot(&a[r..r + len], &b[r..r + len]))
            .collect();
        pairwise_sum(&row_dots)
    }

    /// `p <- r + beta p`, then returns `<p, (mu + L) p>`. The update runs
    /// ahead of the stencil so both happen in one pass over memory.
    pub(crate) fn cg_direction_sweep(&self, r: &[f64], p: &mut [f64], beta: f64) -> f64 {
        let len = self.row_len();
        let reach = self.strides.iter().copied().max().unwrap_or(0);
        let mut buf = vec![0.0; len];
        let mut row_dots = Vec::with_capacity(self.rows.len());
        let mut done = 0;
        with_coefs!(&self.coefs, c => {
            for &row in &self.rows {
                while done < self.rows.len() && self.rows[done] <= row + reach {
                    let s = self.rows[done];
                    for (pv, rv) in p[s..s + len].iter_mut().zip(&r[s..s + len]) {
                        *pv = rv + beta * *pv;
                    }
                    done += 1;
                }
                row_into(self.mu, c, &self.strides, p, row, &mut buf);
                row_dots.push(pairwise_dot(&buf, &p[row..row + len]));
            }
        });
        pairwise_sum(&row_dots)
    }

    /// `x += alpha p`, `r -= alpha (mu + L) p` with the stencil recomputed on
    /// the fly; returns the new `<r, r>`.
    pub(crate) fn cg_update_sweep(
        &self,
        x: &mut [f64],
        r: &mut [f64],
        p: &[f64],
        alpha: f64,
    ) -> f64 {
        let len = self.row_len();
        let mut buf = vec![0.0; len];
        let mut row_dots = Vec::with_capacity(self.rows.len());
        with_coefs!(&self.coefs, c => {
            for &row in &self.rows {
                row_into(self.mu, c, &self.strides, p, row, &mut buf);
                row_dots.push(row_update(
                    &mut x[row..row + len],
                    &mut r[row..row + len],
                    &p[row..row + len],
                    &buf,
                    alpha,
                ));
            }
        });
        pairwise_sum(&row_dots)
    }
}
