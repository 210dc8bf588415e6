//! Dense finite-state Markov chains: the resolvent-chain decomposition of
//! `<f, L^-1 f>` and the discrete-time variance formulas.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::fit_slope;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Mode {
    /// `matrix` is a generator `L` with `L 1 = 0` and nonnegative spectrum.
    ContinuousGenerator,
    /// `matrix` is a transition kernel `P`; the generator is `Id - P`.
    DiscreteKernel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainSpec {
    pub mode: Mode,
    pub matrix: DMatrix<f64>,
    pub stationary: DVector<f64>,
    pub f: DVector<f64>,
}

const TOL: f64 = 1e-10;

impl ChainSpec {
    pub fn new(
        mode: Mode,
        matrix: DMatrix<f64>,
        stationary: DVector<f64>,
        f: DVector<f64>,
    ) -> Result<Self> {
        let spec = ChainSpec {
            mode,
            matrix,
            stationary,
            f,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn states(&self) -> usize {
        self.stationary.len()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.states();
        if s == 0 || self.matrix.shape() != (s, s) || self.f.len() != s {
            return Err(Error::param(
                "chain matrix, stationary vector and f must agree in size",
            ));
        }
        if self.stationary.iter().any(|&p| p.is_nan() || p <= 0.0)
            || (self.stationary.sum() - 1.0).abs() > TOL
        {
            return Err(Error::param(
                "stationary vector must be a positive probability vector",
            ));
        }
        let scale = 1.0 + self.matrix.amax();
        let ones = DVector::from_element(s, 1.0);
        match self.mode {
            Mode::ContinuousGenerator => {
                if (&self.matrix * &ones).amax() > TOL * scale {
                    return Err(Error::param("generator rows must sum to zero"));
                }
                let off_negative =
                    (0..s).all(|i| (0..s).all(|j| i == j || self.matrix[(i, j)] <= TOL));
                if !off_negative {
                    return Err(Error::param(
                        "generator off-diagonal entries must be nonpositive",
                    ));
                }
            }
            Mode::DiscreteKernel => {
                if self.matrix.iter().any(|p| *p < -TOL)
                    || (&self.matrix * &ones - &ones).amax() > TOL
                {
                    return Err(Error::param("kernel rows must be probability vectors"));
                }
            }
        }
        if (self.generator().transpose() * &self.stationary).amax() > TOL * scale {
            return Err(Error::param("stationary vector is not invariant"));
        }
        if self.stationary.dot(&self.f).abs() > TOL * (1.0 + self.f.amax()) {
            return Err(Error::param("f must have stationary mean zero"));
        }
        Ok(())
    }

    /// `L`, or `Id - P` for a kernel.
    pub fn generator(&self) -> DMatrix<f64> {
        match self.mode {
            Mode::ContinuousGenerator => self.matrix.clone(),
            Mode::DiscreteKernel => DMatrix::identity(self.states(), self.states()) - &self.matrix,
        }
    }

    /// Adjoint in `L^2(stationary)`: `Pi^-1 M^T Pi`.
    pub fn adjoint_of(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let p = &self.stationary;
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(j, i)] * p[j] / p[i])
    }

    pub fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.iter()
            .zip(v.iter())
            .zip(self.stationary.iter())
            .map(|((a, b), p)| p * a * b)
            .sum()
    }

    pub fn is_reversible(&self) -> bool {
        let m = &self.matrix;
        let adj = self.adjoint_of(m);
        (m - adj).amax() <= TOL * (1.0 + m.amax())
    }

    /// Irreducibility of the transition graph, by breadth-first search both ways.
    pub fn check_ergodic(&self) -> Result<()> {
        let s = self.states();
        let l = self.generator();
        let reach = |forward: bool| {
            let mut seen = vec![false; s];
            let mut queue = VecDeque::from([0usize]);
            seen[0] = true;
            while let Some(x) = queue.pop_front() {
                for y in 0..s {
                    let w = if forward { l[(x, y)] } else { l[(y, x)] };
                    if y != x && w < -TOL && !seen[y] {
                        seen[y] = true;
                        queue.push_back(y);
                    }
                }
            }
            seen.iter().all(|&b| b)
        };
        if reach(true) && reach(false) {
            Ok(())
        } else {
            Err(Error::NonErgodic(
                "transition graph is not strongly connected".into(),
            ))
        }
    }

    /// `L^-1 g` on stationary-mean-zero vectors, via `(L + 1 pi^T) x = g`.
    pub fn solve_mean_zero(&self, g: &DVector<f64>) -> Result<DVector<f64>> {
        let s = self.states();
        let m = self.generator() + DMatrix::from_fn(s, s, |_, j| self.stationary[j]);
        m.lu()
            .solve(g)
            .ok_or_else(|| Error::Singular("generator restricted to mean-zero functions".into()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ScheduleKind {
    /// `mu_k = 1`.
    Constant,
    /// `mu_k = 2^-k`.
    Geometric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub n: usize,
}

impl Schedule {
    pub fn new(kind: ScheduleKind, n: usize) -> Self {
        Schedule { kind, n }
    }

    pub fn mu(&self, k: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => 1.0,
            ScheduleKind::Geometric => 2f64.powi(-(k as i32)),
        }
    }
}

/// `(f_k)` and the adjoint chain `(f*_k)`, `k = 0..=n`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSequence {
    pub forward: Vec<DVector<f64>>,
    pub adjoint: Vec<DVector<f64>>,
}

fn resolvent_step(m: &DMatrix<f64>, mu: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
    let shifted = m + DMatrix::identity(m.nrows(), m.ncols()) * mu;
    shifted
        .lu()
        .solve(&(v * mu))
        .ok_or_else(|| Error::Singular(format!("mu + L at mu = {mu}")))
}

pub fn chain_sequence(spec: &ChainSpec, schedule: &Schedule) -> Result<ChainSequence> {
    let l = spec.generator();
    let l_star = spec.adjoint_of(&l);
    let mut forward = Vec::with_capacity(schedule.n + 1);
    let mut adjoint = Vec::with_capacity(schedule.n + 1);
    let (mut f, mut g) = (spec.f.clone(), spec.f.clone());
    for k in 0..=schedule.n {
        let mu = schedule.mu(k);
        f = resolvent_step(&l, mu, &f)?;
        g = resolvent_step(&l_star, mu, &g)?;
        forward.push(f.clone());
        adjoint.push(g.clone());
    }
    Ok(ChainSequence { forward, adjoint })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceDecomposition {
    /// `mu_k^-1 (<f*_{k-1}, f_k> + <f*_k, f_k>)`.
    pub terms: Vec<f64>,
    pub partial_sum: f64,
    /// `<f*_n, L^-1 f_n>`.
    pub remainder: f64,
    /// `<f, L^-1 f>`.
    pub exact: f64,
}

impl VarianceDecomposition {
    pub fn residual(&self) -> f64 {
        (self.partial_sum + self.remainder - self.exact).abs()
    }
}

pub fn variance_decomposition(
    spec: &ChainSpec,
    schedule: &Schedule,
) -> Result<VarianceDecomposition> {
    spec.check_ergodic()?;
    let seq = chain_sequence(spec, schedule)?;
    let mut terms = Vec::with_capacity(schedule.n + 1);
    let mut prev_star = &spec.f;
    for k in 0..=schedule.n {
        let fk = &seq.forward[k];
        let sk = &seq.adjoint[k];
        terms.push((spec.inner(prev_star, fk) + spec.inner(sk, fk)) / schedule.mu(k));
        prev_star = sk;
    }
    let n = schedule.n;
    let remainder = spec.inner(&seq.adjoint[n], &spec.solve_mean_zero(&seq.forward[n])?);
    let exact = spec.inner(&spec.f, &spec.solve_mean_zero(&spec.f)?);
    Ok(VarianceDecomposition {
        partial_sum: terms.iter().sum(),
        terms,
        remainder,
        exact,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayReport {
    pub remainders: Vec<f64>,
    /// `|term_n|` of the decomposition at depth `n`.
    pub terms: Vec<f64>,
    /// Fitted `log2 |remainder|` per unit `n`, over the second half of the range.
    pub remainder_rate: Option<f64>,
    pub term_rate: Option<f64>,
}

fn tail_rate(values: &[f64]) -> Option<f64> {
    let start = values.len() / 2;
    let (xs, ys): (Vec<f64>, Vec<f64>) = values
        .iter()
        .enumerate()
        .skip(start)
        .filter(|(_, v)| **v > 1e-300)
        .map(|(i, v)| (i as f64, v.log2()))
        .unzip();
    fit_slope(&xs, &ys).ok().map(|f| f.slope)
}

pub fn remainder_decay(spec: &ChainSpec, kind: ScheduleKind, n_max: usize) -> Result<DecayReport> {
    let full = variance_decomposition(spec, &Schedule::new(kind, n_max))?;
    let seq = chain_sequence(spec, &Schedule::new(kind, n_max))?;
    let remainders = (0..=n_max)
        .map(|n| Ok(spec.inner(&seq.adjoint[n], &spec.solve_mean_zero(&seq.forward[n])?)))
        .collect::<Result<Vec<f64>>>()?;
    let terms: Vec<f64> = full.terms.iter().map(|t| t.abs()).collect();
    Ok(DecayReport {
        remainder_rate: tail_rate(&remainders.iter().map(|r| r.abs()).collect::<Vec<_>>()),
        term_rate: tail_rate(&terms),
        remainders,
        terms,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DiscreteSigma2 {
    /// `-<f, f> + 2 sum_{k<K} <f, P^k f>`.
    pub green_kubo: f64,
    /// `-<f, f> + 2 sum_{k<K} (<P*^k f, P^k f> + <P*^k f, P^{k+1} f>)`.
    pub paired: f64,
    /// `-<f, f> + 2 <f, (Id - P)^-1 f>`.
    pub dense: f64,
}

pub fn discrete_sigma2(spec: &ChainSpec, terms: usize) -> Result<DiscreteSigma2> {
    if spec.mode != Mode::DiscreteKernel {
        return Err(Error::param("discrete formulas need a transition kernel"));
    }
    let p = &spec.matrix;
    let p_star = spec.adjoint_of(p);
    let f = &spec.f;
    let ff = spec.inner(f, f);
    let mut gk = 0.0;
    let mut pk = f.clone();
    for _ in 0..terms {
        gk += spec.inner(f, &pk);
        pk = p * pk;
    }
    let mut paired = 0.0;
    let (mut fwd, mut bwd) = (f.clone(), f.clone());
    for _ in 0..terms {
        let next = p * &fwd;
        paired += spec.inner(&bwd, &fwd) + spec.inner(&bwd, &next);
        fwd = next;
        bwd = &p_star * bwd;
    }
    let dense = -ff + 2.0 * spec.inner(f, &spec.solve_mean_zero(f)?);
    Ok(DiscreteSigma2 {
        green_kubo: -ff + 2.0 * gk,
        paired: -ff + 2.0 * paired,
        dense,
    })
}

/// Largest entry of `R_l - R_m - (m - l) R_l R_m`, relative to `|R_l|`.
pub fn resolvent_identity_residual(spec: &ChainSpec, lambda: f64, mu: f64) -> Result<f64> {
    let l = spec.generator();
    let id = DMatrix::identity(l.nrows(), l.ncols());
    let inv = |t: f64| {
        (&l + &id * t)
            .try_inverse()
            .ok_or_else(|| Error::Singular(format!("t + L at t = {t}")))
    };
    let (rl, rm) = (inv(lambda)?, inv(mu)?);
    let gap = &rl - &rm - (&rl * &rm) * (mu - lambda);
    Ok(gap.amax() / rl.amax())
}

fn random_probability(rng: &mut impl Rng, s: usize) -> DVector<f64> {
    let p = DVector::from_fn(s, |_, _| rng.random_range(0.5..2.0));
    let total = p.sum();
    p / total
}

fn mean_zero(rng: &mut impl Rng, pi: &DVector<f64>) -> DVector<f64> {
    let f = DVector::from_fn(pi.len(), |_, _| rng.random_range(-1.0..1.0));
    let m = pi.dot(&f);
    f.map(|v| v - m)
}

/// Symmetric edge weights on a random connected graph that contains the
/// Hamiltonian cycle `order`.
fn random_weights(rng: &mut impl Rng, order: &[usize], extra: f64) -> DMatrix<f64> {
    let s = order.len();
    let mut w = DMatrix::zeros(s, s);
    if s < 2 {
        return w;
    }
    for i in 0..s {
        let (a, b) = (order[i], order[(i + 1) % s]);
        if a != b {
            let v = rng.random_range(0.5..1.5);
            w[(a, b)] = v;
            w[(b, a)] = v;
        }
    }
    for a in 0..s {
        for b in a + 1..s {
            if w[(a, b)] == 0.0 && rng.random_bool(extra) {
                let v = rng.random_range(0.5..1.5);
                w[(a, b)] = v;
                w[(b, a)] = v;
            }
        }
    }
    w
}

fn generator_from_flows(flows: &DMatrix<f64>, pi: &DVector<f64>) -> DMatrix<f64> {
    let s = pi.len();
    let mut l = DMatrix::zeros(s, s);
    for x in 0..s {
        for y in 0..s {
            if x != y && flows[(x, y)] != 0.0 {
                let rate = flows[(x, y)] / pi[x];
                l[(x, y)] -= rate;
                l[(x, x)] += rate;
            }
        }
    }
    l
}

/// A random ergodic chain on `states` states with a random mean-zero `f`.
///
/// Reversible chains use symmetric flows `pi(x) q(x, y)`; non-reversible
/// ones add a circulation around a Hamiltonian cycle, small enough to keep
/// every rate positive. Kernels are obtained by uniformisation with a lazy
/// part, so they are aperiodic.
pub fn random_spec(
    rng: &mut impl Rng,
    states: usize,
    mode: Mode,
    reversible: bool,
) -> Result<ChainSpec> {
    if states == 0 {
        return Err(Error::param("a chain needs at least one state"));
    }
    let pi = random_probability(rng, states);
    let mut order: Vec<usize> = (0..states).collect();
    order.shuffle(rng);
    let mut flows = random_weights(rng, &order, 0.3);
    if !reversible && states >= 3 {
        let strength = 0.4
            * (0..states)
                .map(|i| flows[(order[i], order[(i + 1) % states])])
                .fold(f64::INFINITY, f64::min);
        for i in 0..states {
            let (a, b) = (order[i], order[(i + 1) % states]);
            flows[(a, b)] += strength;
            flows[(b, a)] -= strength;
        }
    }
    let l = generator_from_flows(&flows, &pi);
    let matrix = match mode {
        Mode::ContinuousGenerator => l,
        Mode::DiscreteKernel => {
            let rate = (0..states).map(|i| l[(i, i)]).fold(0.0, f64::max) * 1.25 + 1e-12;
            DMatrix::identity(states, states) - l / rate
        }
    };
    let f = mean_zero(rng, &pi);
    ChainSpec::new(mode, matrix, pi, f)
}

/// `P f = f o T` for a single cycle `T` through all states, uniform stationary law.
pub fn cycle_permutation_spec(rng: &mut impl Rng, states: usize) -> Result<ChainSpec> {
    let mut order: Vec<usize> = (0..states).collect();
    order.shuffle(rng);
    let mut p = DMatrix::zeros(states, states);
    for i in 0..states {
        p[(order[i], order[(i + 1) % states])] = 1.0;
    }
    let pi = DVector::from_element(states, 1.0 / states as f64);
    let f = mean_zero(rng, &pi);
    ChainSpec::new(Mode::DiscreteKernel, p, pi, f)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub trials: usize,
    pub max_decomposition_residual: f64,
    pub max_resolvent_residual: f64,
    pub max_discrete_gap: f64,
    pub min_reversible_term: f64,
}

/// Randomised identity checks across both modes, both reversibility
/// classes, the given schedules and depths `{0, 3, 10}`.
pub fn run_identity_suite(
    states: usize,
    trials: usize,
    kinds: &[ScheduleKind],
    seed: u64,
) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport {
        trials: 0,
        max_decomposition_residual: 0.0,
        max_resolvent_residual: 0.0,
        max_discrete_gap: 0.0,
        min_reversible_term: f64::INFINITY,
    };
    for trial in 0..trials {
        let mode = if trial % 2 == 0 {
            Mode::ContinuousGenerator
        } else {
            Mode::DiscreteKernel
        };
        let reversible = (trial / 2) % 2 == 0;
        let spec = random_spec(&mut rng, states, mode, reversible)?;
        for &kind in kinds {
            for n in [0, 3, 10] {
                let dec = variance_decomposition(&spec, &Schedule::new(kind, n))?;
                let rel = dec.residual() / (1.0 + dec.exact.abs());
                report.max_decomposition_residual = report.max_decomposition_residual.max(rel);
                if reversible {
                    let m = dec.terms.iter().copied().fold(f64::INFINITY, f64::min);
                    report.min_reversible_term = report.min_reversible_term.min(m);
                }
            }
        }
        let (lambda, mu) = (rng.random_range(0.01..1.0), rng.random_range(0.01..1.0));
        report.max_resolvent_residual = report
            .max_resolvent_residual
            .max(resolvent_identity_residual(&spec, lambda, mu)?);
        if mode == Mode::DiscreteKernel {
            let d = discrete_sigma2(&spec, 4000)?;
            let gap = (d.green_kubo - d.paired)
                .abs()
                .max((d.paired - d.dense).abs());
            report.max_discrete_gap = report.max_discrete_gap.max(gap / (1.0 + d.dense.abs()));
        }
        report.trials += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn two_state(p: f64, q: f64) -> ChainSpec {
        let l = DMatrix::from_row_slice(2, 2, &[p, -p, -q, q]);
        let pi = DVector::from_vec(vec![q / (p + q), p / (p + q)]);
        let f = DVector::from_vec(vec![1.0 / pi[0], -1.0 / pi[1]]);
        ChainSpec::new(Mode::ContinuousGenerator, l, pi, f).unwrap()
    }

    #[test]
    fn rejects_bad_specs() {
        let pi = DVector::from_vec(vec![0.5, 0.5]);
        let l = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let f = DVector::from_vec(vec![1.0, 0.0]);
        assert!(ChainSpec::new(Mode::ContinuousGenerator, l.clone(), pi.clone(), f).is_err());
        let skewed = DVector::from_vec(vec![0.3, 0.7]);
        let f = DVector::from_vec(vec![0.7, -0.3]);
        assert!(ChainSpec::new(Mode::ContinuousGenerator, l, skewed, f).is_err());
    }

    #[test]
    fn zero_f_gives_zeros() {
        let mut spec = random_spec(&mut rng(1), 6, Mode::ContinuousGenerator, true).unwrap();
        spec.f = DVector::zeros(6);
        let seq = chain_sequence(&spec, &Schedule::new(ScheduleKind::Geometric, 4)).unwrap();
        assert!(seq.forward.iter().all(|v| v.amax() == 0.0));
        let p = variance_decomposition(&spec, &Schedule::new(ScheduleKind::Constant, 3)).unwrap();
        assert_eq!((p.partial_sum, p.remainder, p.exact), (0.0, 0.0, 0.0));
    }

    #[test]
    fn single_state_is_degenerate() {
        let spec = ChainSpec::new(
            Mode::ContinuousGenerator,
            DMatrix::zeros(1, 1),
            DVector::from_element(1, 1.0),
            DVector::zeros(1),
        )
        .unwrap();
        let p = variance_decomposition(&spec, &Schedule::new(ScheduleKind::Constant, 2)).unwrap();
        assert_eq!(p.exact, 0.0);
    }

    #[test]
    fn non_ergodic_is_rejected() {
        let l = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let pi = DVector::from_element(3, 1.0 / 3.0);
        let f = DVector::from_vec(vec![1.0, -1.0, 0.0]);
        let spec = ChainSpec::new(Mode::ContinuousGenerator, l, pi, f).unwrap();
        let err =
            variance_decomposition(&spec, &Schedule::new(ScheduleKind::Constant, 1)).unwrap_err();
        assert!(matches!(err, Error::NonErgodic(_)));
    }

    #[test]
    fn sequence_matches_resolvent_products() {
        let spec = random_spec(&mut rng(2), 20, Mode::ContinuousGenerator, true).unwrap();
        let seq = chain_sequence(&spec, &Schedule::new(ScheduleKind::Constant, 5)).unwrap();
        let l = spec.generator();
        let r = (&l + DMatrix::identity(20, 20)).try_inverse().unwrap();
        let mut v = spec.f.clone();
        for fk in &seq.forward {
            v = &r * v;
            assert!((fk - &v).amax() < 1e-12);
        }
    }

    #[test]
    fn two_state_first_term_and_remainder() {
        let spec = two_state(0.3, 1.1);
        let p = variance_decomposition(&spec, &Schedule::new(ScheduleKind::Constant, 0)).unwrap();
        assert!(p.residual() < 1e-12);
    }

    #[test]
    fn two_state_closed_form_remainder() {
        let (p, q) = (0.7, 0.4);
        let spec = two_state(p, q);
        let gamma = p + q;
        let d = remainder_decay(&spec, ScheduleKind::Constant, 12).unwrap();
        let ff = spec.inner(&spec.f, &spec.f);
        for (n, r) in d.remainders.iter().enumerate() {
            let closed = (1.0 + gamma).powi(-2 * (n as i32 + 1)) * ff / gamma;
            assert!((r - closed).abs() < 1e-12 * (1.0 + closed), "n = {n}");
        }
        let expect = -2.0 * (1.0 + gamma).log2();
        assert!((d.remainder_rate.unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn non_reversible_geometric_identity() {
        let spec = random_spec(&mut rng(3), 20, Mode::ContinuousGenerator, false).unwrap();
        assert!(!spec.is_reversible());
        let p = variance_decomposition(&spec, &Schedule::new(ScheduleKind::Geometric, 10)).unwrap();
        assert!(p.residual() <= 1e-10 * (1.0 + p.exact.abs()));
    }

    #[test]
    fn reversible_remainders_decrease() {
        let spec = random_spec(&mut rng(4), 12, Mode::DiscreteKernel, true).unwrap();
        assert!(spec.is_reversible());
        for kind in [ScheduleKind::Constant, ScheduleKind::Geometric] {
            let d = remainder_decay(&spec, kind, 15).unwrap();
            assert!(d.remainders.windows(2).all(|w| w[1] <= w[0] + 1e-14));
            let p = variance_decomposition(&spec, &Schedule::new(kind, 15)).unwrap();
            assert!(p.terms.iter().all(|t| *t >= -1e-12));
        }
    }

    #[test]
    fn geometric_beats_constant_past_the_gap() {
        let spec = random_spec(&mut rng(5), 5, Mode::ContinuousGenerator, true).unwrap();
        let l = spec.generator();
        let mut eig: Vec<f64> = l.complex_eigenvalues().iter().map(|z| z.re).collect();
        eig.sort_by(f64::total_cmp);
        let gap = eig[1];
        let c = remainder_decay(&spec, ScheduleKind::Constant, 14).unwrap();
        let g = remainder_decay(&spec, ScheduleKind::Geometric, 14).unwrap();
        for n in 0..=14 {
            if 2f64.powi(n as i32) > 1.0 / gap {
                assert!(g.remainders[n] <= c.remainders[n] + 1e-15, "n = {n}");
            }
        }
    }

    #[test]
    fn stationary_projector_kernel() {
        let pi = DVector::from_vec(vec![0.2, 0.3, 0.5]);
        let p = DMatrix::from_fn(3, 3, |_, j| pi[j]);
        let f = DVector::from_vec(vec![1.0, 1.0, -1.0]);
        let spec = ChainSpec::new(Mode::DiscreteKernel, p, pi, f).unwrap();
        let d = discrete_sigma2(&spec, 10).unwrap();
        let ff = spec.inner(&spec.f, &spec.f);
        for v in [d.green_kubo, d.paired, d.dense] {
            assert!((v - ff).abs() < 1e-12);
        }
    }

    #[test]
    fn discrete_formulas_agree() {
        let spec = random_spec(&mut rng(6), 10, Mode::DiscreteKernel, true).unwrap();
        let d = discrete_sigma2(&spec, 500).unwrap();
        assert!((d.green_kubo - d.paired).abs() < 1e-10);
        assert!((d.paired - d.dense).abs() < 1e-10);
    }

    #[test]
    fn permutation_kernel_identity() {
        let spec = cycle_permutation_spec(&mut rng(7), 9).unwrap();
        for kind in [ScheduleKind::Constant, ScheduleKind::Geometric] {
            let p = variance_decomposition(&spec, &Schedule::new(kind, 10)).unwrap();
            assert!(p.residual() <= 1e-10 * (1.0 + p.exact.abs()));
        }
    }

    #[test]
    fn suite_passes() {
        let r = run_identity_suite(8, 8, &[ScheduleKind::Constant, ScheduleKind::Geometric], 9)
            .unwrap();
        assert_eq!(r.trials, 8);
        assert!(r.max_decomposition_residual < 1e-10);
        assert!(r.max_resolvent_residual < 1e-12);
        assert!(r.max_discrete_gap < 1e-10);
        assert!(r.min_reversible_term >= -1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn adjoint_is_transpose_in_weighted_product(seed in 0u64..10_000, states in 2usize..9) {
            let mut r = rng(seed);
            let spec = random_spec(&mut r, states, Mode::ContinuousGenerator, false).unwrap();
            let l = spec.generator();
            let ls = spec.adjoint_of(&l);
            let u = DVector::from_fn(states, |_, _| r.random_range(-1.0..1.0));
            let v = DVector::from_fn(states, |_, _| r.random_range(-1.0..1.0));
            prop_assert!((spec.inner(&(&ls * &u), &v) - spec.inner(&u, &(&l * &v))).abs() < 1e-12);
        }

        #[test]
        fn identity_holds_on_random_specs(
            seed in 0u64..10_000,
            states in 2usize..12,
            discrete in any::<bool>(),
            reversible in any::<bool>(),
            geometric in any::<bool>(),
            n in 0usize..12,
        ) {
            let mode = if discrete { Mode::DiscreteKernel } else { Mode::ContinuousGenerator };
            let kind = if geometric { ScheduleKind::Geometric } else { ScheduleKind::Constant };
            let spec = random_spec(&mut rng(seed), states, mode, reversible).unwrap();
            let p = variance_decomposition(&spec, &Schedule::new(kind, n)).unwrap();
            prop_assert!(p.residual() <= 1e-10 * (1.0 + p.exact.abs()));
        }
    }
}
