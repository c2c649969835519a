//! Counting on congruence covers and mixing of the suspension flow: closed
//! geodesic counts through the holonomy lift rule, orbit-point counts by a
//! pruned search over reduced words, the logarithmic integral, Monte Carlo
//! correlations of the suspension flow, and a two-route check of the
//! Laplace transform of the correlation against transfer-operator sums.
//!
//! Geodesic counts are oriented; halve them for unoriented counts.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arith::mobius_f64;
use crate::coding::roof_unchecked;
use crate::congruence::ModGroup;
use crate::linalg::C64;
use crate::schottky::{inverse_symbol, SchottkyGroup, Symbol};
use crate::thermo::Thermo;
use crate::zeta::{congruence_matrix, enumerate_orbits, words_for_length};
use crate::{Error, Result};

const ZERO: C64 = Complex64::new(0.0, 0.0);

/// `li(x) = ∫_2^x dt / ln t`, zero for `x ≤ 2`.
pub fn li(x: f64) -> f64 {
    if x <= 2.0 {
        return 0.0;
    }
    // substitute t = e^u to remove the logarithm from the denominator
    quadrature::double_exponential::integrate(|u: f64| u.exp() / u, 2f64.ln(), x.ln(), 1e-14).integral
}

/// Counts on a threshold grid with the stated main term.
#[derive(Clone, Debug)]
pub struct CountReport {
    pub q: u64,
    pub thresholds: Vec<f64>,
    pub counts: Vec<u64>,
    pub model: Vec<f64>,
    /// `count / model - 1`; NaN where the model vanishes.
    pub residuals: Vec<f64>,
}

impl CountReport {
    fn new(q: u64, thresholds: &[f64], counts: Vec<u64>, model: Vec<f64>) -> Self {
        let residuals = counts
            .iter()
            .zip(&model)
            .map(|(&c, &m)| if m > 0.0 { c as f64 / m - 1.0 } else { f64::NAN })
            .collect();
        Self {
            q,
            thresholds: thresholds.to_vec(),
            counts,
            model,
            residuals,
        }
    }

    /// Unoriented counts: every geodesic is met in both orientations.
    pub fn unoriented(&self) -> Vec<u64> {
        self.counts.iter().map(|c| c / 2).collect()
    }
}

/// Oriented primitive closed geodesics of the level-`q` cover with length at
/// most each threshold. A base orbit whose holonomy has order `k` lifts to
/// `|G_q| / k` geodesics of `k` times its length. `cap` bounds the number
/// of cyclic words the enumeration may visit.
pub fn count_geodesics(g: &SchottkyGroup, mg: &ModGroup, delta: f64, thresholds: &[f64], cap: usize) -> Result<CountReport> {
    if !mg.admissible {
        return Err(Error::NotAdmissible {
            q: mg.q,
            order: mg.order(),
        });
    }
    let t_max = thresholds.iter().copied().fold(0.0, f64::max);
    let n = words_for_length(g, t_max);
    let orbits = enumerate_orbits(g, n, cap).map_err(|_| Error::IncompleteEnumeration(n, t_max))?;
    let order = mg.order() as u64;
    let lifts: Vec<(f64, u64)> = orbits
        .iter()
        .filter(|o| o.length <= t_max)
        .map(|o| {
            let k = o.holonomy_order(mg);
            (k as f64 * o.length, order / k as u64)
        })
        .collect();
    let counts = thresholds
        .iter()
        .map(|&t| lifts.iter().filter(|(l, _)| *l <= t).map(|(_, m)| m).sum())
        .collect();
    let model = thresholds.iter().map(|&t| li((delta * t).exp())).collect();
    Ok(CountReport::new(mg.q, thresholds, counts, model))
}

/// Point of the upper half plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasePoint {
    pub x: f64,
    pub y: f64,
}

impl BasePoint {
    pub const I: BasePoint = BasePoint { x: 0.0, y: 1.0 };

    /// `A` with `A i = x + iy`.
    fn frame(&self) -> [f64; 4] {
        let r = self.y.sqrt();
        [r, self.x / r, 0.0, 1.0 / r]
    }
}

/// Orbit-point counts per class in `G_q`.
#[derive(Clone, Debug)]
pub struct OrbitCount {
    pub t: f64,
    /// Counts of `γ` with `d(z, γ w) ≤ t`, indexed by the image of `γ` in `G_q`.
    pub by_class: Vec<u64>,
    /// Slack used for pruning.
    pub slack: f64,
    /// Search nodes visited.
    pub visited: usize,
}

impl OrbitCount {
    /// Points of the congruence subgroup: the class of the identity.
    pub fn total_in_kernel(&self) -> u64 {
        self.by_class[0]
    }

    pub fn total(&self) -> u64 {
        self.by_class.iter().sum()
    }
}

fn mul2(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

/// `d(z, γ w)` from `‖A_z⁻¹ γ A_w‖² = 2 cosh d`.
struct Distance {
    left: [f64; 4],
    right: [f64; 4],
}

impl Distance {
    fn new(z: BasePoint, w: BasePoint) -> Self {
        let a = z.frame();
        Self {
            left: [a[3], -a[1], -a[2], a[0]],
            right: w.frame(),
        }
    }

    fn cosh2(&self, m: &[f64; 4]) -> f64 {
        let h = mul2(&mul2(&self.left, m), &self.right);
        h.iter().map(|v| v * v).sum()
    }

    fn of(&self, m: &[f64; 4]) -> f64 {
        (self.cosh2(m) / 2.0).max(1.0).acosh()
    }
}

/// Largest drop `d(z, p w) - d(z, v w)` over reduced words `v` of length at
/// most `len` and their prefixes `p`.
pub fn measured_slack(g: &SchottkyGroup, z: BasePoint, w: BasePoint, len: usize) -> f64 {
    let dist = Distance::new(z, w);
    let mut worst = 0.0f64;
    // stack of (matrix, last symbol, largest prefix distance so far)
    let id = [1.0, 0.0, 0.0, 1.0];
    let mut stack = vec![(id, usize::MAX, dist.of(&id), 0usize)];
    while let Some((m, last, best, depth)) = stack.pop() {
        let d = dist.of(&m);
        worst = worst.max(best - d);
        if depth == len {
            continue;
        }
        for s in 0..g.alphabet_size() {
            if last != usize::MAX && s == inverse_symbol(last) {
                continue;
            }
            let child = mul2(&m, g.symbol_f64(s));
            stack.push((child, s, best.max(d), depth + 1));
        }
    }
    worst
}

/// Reduced-word length up to which the pruning slack is certified.
pub const SLACK_DEPTH: usize = 6;

/// Orbit points `γ w` within distance `t` of `z`, split by the class of `γ`
/// in `G_q`. Reduced words are searched depth first; a branch is abandoned
/// once its distance minus the measured slack exceeds `t`.
pub fn count_orbit_points(g: &SchottkyGroup, mg: &ModGroup, t: f64, z: BasePoint, w: BasePoint, cap: usize) -> Result<OrbitCount> {
    let slack = measured_slack(g, z, w, SLACK_DEPTH);
    let dist = Distance::new(z, w);
    let bound = 2.0 * t.cosh();
    let prune = 2.0 * (t + slack).cosh();
    let mut by_class = vec![0u64; mg.order()];
    let id = [1.0, 0.0, 0.0, 1.0];
    let e = mg.word_image(&[]);
    let mut stack = vec![(id, usize::MAX, e)];
    let mut visited = 0usize;
    while let Some((m, last, class)) = stack.pop() {
        visited += 1;
        if visited > cap {
            return Err(Error::ResourceLimit(format!("orbit search visited more than {cap} words")));
        }
        let c2 = dist.cosh2(&m);
        if c2 <= bound {
            by_class[class as usize] += 1;
        }
        if c2 > prune {
            continue;
        }
        for s in 0..g.alphabet_size() {
            if last != usize::MAX && s == inverse_symbol(last) {
                continue;
            }
            stack.push((mul2(&m, g.symbol_f64(s)), s, mg.mul(class, mg.cocycle_images[s])));
        }
    }
    // the identity is the class-0 element of every group table
    debug_assert_eq!(e, 0);
    Ok(OrbitCount {
        t,
        by_class,
        slack,
        visited,
    })
}

/// Counts `N_q(T; z, w)` on a threshold grid against the model `C e^{δT}`
/// with `C` fitted at the largest threshold.
pub fn orbit_count_report(g: &SchottkyGroup, mg: &ModGroup, delta: f64, thresholds: &[f64], z: BasePoint, w: BasePoint, cap: usize) -> Result<CountReport> {
    let counts = thresholds
        .iter()
        .map(|&t| count_orbit_points(g, mg, t, z, w, cap).map(|c| c.total_in_kernel()))
        .collect::<Result<Vec<_>>>()?;
    let (&tl, &cl) = thresholds.last().zip(counts.last()).ok_or(Error::ResourceLimit("empty threshold grid".into()))?;
    let c = cl as f64 / (delta * tl).exp();
    let model = thresholds.iter().map(|&t| c * (delta * t).exp()).collect();
    Ok(CountReport::new(mg.q, thresholds, counts, model))
}

// ---------------------------------------------------------------------------
// Suspension flow

/// One observable term: `coef · 1[u starts with cylinder] · group[γ] · (α + β s)`.
#[derive(Clone, Debug)]
pub struct Term {
    pub cylinder: Vec<Symbol>,
    pub group: Vec<C64>,
    pub alpha: f64,
    pub beta: f64,
}

/// Function on `Û × G_q × [0, τ)`: locally constant in `u` on cylinders,
/// affine in the flow coordinate.
#[derive(Clone, Debug, Default)]
pub struct Observable {
    pub terms: Vec<Term>,
}

impl Observable {
    pub fn cylinder(cylinder: &[Symbol], group: Vec<C64>, alpha: f64, beta: f64) -> Self {
        Self {
            terms: vec![Term {
                cylinder: cylinder.to_vec(),
                group,
                alpha,
                beta,
            }],
        }
    }

    /// The constant function `c`.
    pub fn constant(group_order: usize, c: f64) -> Self {
        Self::cylinder(&[], vec![C64::new(1.0, 0.0); group_order], c, 0.0)
    }

    pub fn plus(mut self, o: Observable) -> Self {
        self.terms.extend(o.terms);
        self
    }

    /// Longest cylinder among the terms.
    pub fn depth(&self) -> usize {
        self.terms.iter().map(|t| t.cylinder.len()).max().unwrap_or(0)
    }

    fn group_order(&self) -> usize {
        self.terms.first().map_or(1, |t| t.group.len())
    }

    fn matches(t: &Term, address: &[Symbol]) -> bool {
        address.len() >= t.cylinder.len() && address[..t.cylinder.len()] == t.cylinder[..]
    }

    /// Values over the group axis at `(u, ·, s)`, `u` given by its address.
    pub fn eval(&self, address: &[Symbol], s: f64, out: &mut [C64]) {
        out.iter_mut().for_each(|z| *z = ZERO);
        for t in self.terms.iter().filter(|t| Self::matches(t, address)) {
            let f = t.alpha + t.beta * s;
            for (o, v) in out.iter_mut().zip(&t.group) {
                *o += v * f;
            }
        }
    }

    /// `∫_0^τ φ(u, ·, t) e^{-ξ t} dt` over the group axis, `τ = τ(u)`.
    pub fn hat(&self, address: &[Symbol], tau: f64, xi: C64, out: &mut [C64]) {
        let (i0, i1) = exp_moments(xi, tau);
        out.iter_mut().for_each(|z| *z = ZERO);
        for t in self.terms.iter().filter(|t| Self::matches(t, address)) {
            let f = i0 * t.alpha + i1 * t.beta;
            for (o, v) in out.iter_mut().zip(&t.group) {
                *o += v * f;
            }
        }
    }

    /// `∫ Σ_γ ∫_0^τ φ ds dν` with `ν` a probability.
    pub fn integral(&self, th: &Thermo) -> C64 {
        let depth = self.depth().max(1);
        let g = th.g();
        let mut total = ZERO;
        for t in &self.terms {
            let gsum: C64 = t.group.iter().sum();
            let v = th.integrate_pullback(depth, |w, x| {
                if !Self::matches(t, w) {
                    return 0.0;
                }
                let tau = roof_unchecked(g, x, w[0]);
                t.alpha * tau + t.beta * tau * tau / 2.0
            });
            total += gsum * v;
        }
        total
    }

    /// The same observable minus its mean for the flow-invariant measure.
    pub fn centered(self, th: &Thermo) -> Self {
        let g = th.g();
        let mass = th.integrate_pullback(1, |w, x| roof_unchecked(g, x, w[0]));
        let n = self.group_order();
        let mean = self.integral(th) / (mass * n as f64);
        Self::plus(
            self,
            Observable {
                terms: vec![Term {
                    cylinder: Vec::new(),
                    group: vec![-mean; n],
                    alpha: 1.0,
                    beta: 0.0,
                }],
            },
        )
    }
}

/// `(∫_0^τ e^{-ξt} dt, ∫_0^τ t e^{-ξt} dt)`.
fn exp_moments(xi: C64, tau: f64) -> (C64, C64) {
    if xi.norm() * tau < 1e-8 {
        return (C64::new(tau, 0.0) - xi * tau * tau / 2.0, C64::new(tau * tau / 2.0, 0.0) - xi * tau.powi(3) / 3.0);
    }
    let e = (-xi * tau).exp();
    ((1.0 - e) / xi, (1.0 - e * (1.0 + xi * tau)) / (xi * xi))
}

/// Sampler for the equilibrium measure `ν = h0 ν̂` of the collocation model,
/// drawing addresses one symbol at a time from exact cylinder weights.
pub struct NuSampler<'a> {
    th: &'a Thermo,
    first: Vec<f64>,
    /// `ν̂` node weights.
    nu_hat: Vec<f64>,
}

/// Symbols kept beyond the reliable part of an address so that the point
/// positions carry full precision.
const TAIL: usize = 16;

/// Sampled orbit segment: address, points `σ^i u` and roof values.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub address: Vec<Symbol>,
    pub points: Vec<f64>,
    pub roofs: Vec<f64>,
}

impl Trajectory {
    /// Returns with reliable positions.
    pub fn len(&self) -> usize {
        self.address.len().saturating_sub(TAIL)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `τ_k(u)`.
    pub fn birkhoff(&self, k: usize) -> f64 {
        self.roofs[..k].iter().sum()
    }

    fn refresh(&mut self, g: &SchottkyGroup) {
        let n = self.address.len();
        self.points.resize(n, 0.0);
        self.roofs.resize(n, 0.0);
        let mut x = g.interval(self.address[n - 1]).mid();
        for i in (0..n).rev() {
            if i + 1 < n {
                x = mobius_f64(g.symbol_f64(self.address[i]), x);
            }
            self.points[i] = x;
            self.roofs[i] = roof_unchecked(g, x, self.address[i]);
        }
    }
}

impl<'a> NuSampler<'a> {
    pub fn new(th: &'a Thermo) -> Self {
        let k = th.g().alphabet_size();
        let p = th.order();
        let w = th.nu_weights();
        let first = (0..k).map(|s| w[s * p..(s + 1) * p].iter().sum()).collect();
        Self {
            th,
            first,
            nu_hat: th.gibbs.nu.clone(),
        }
    }

    /// `ν(C[w s])` up to a factor common to all `s`, for the branch matrix
    /// `m` of `w` and the first symbol `w0`.
    fn weight(&self, m: &[f64; 4], w0: Symbol, s: Symbol) -> f64 {
        let p = self.th.order();
        let delta = self.th.delta;
        (0..p)
            .map(|j| {
                let y = self.th.disc.node(s, j);
                let den = (m[2] * y + m[3]).abs();
                self.nu_hat[s * p + j] * den.powf(-2.0 * delta) * self.th.h0(w0, mobius_f64(m, y))
            })
            .sum()
    }

    /// Address whose reliable part covers flow time `horizon` past the start.
    pub fn trajectory<R: Rng>(&self, rng: &mut R, horizon: f64) -> Trajectory {
        let g = self.th.g();
        let mut address = vec![pick(rng, &self.first)];
        let mut m = *g.symbol_f64(address[0]);
        let mut tr = Trajectory {
            address: Vec::new(),
            points: Vec::new(),
            roofs: Vec::new(),
        };
        loop {
            for _ in 0..8 {
                let last = *address.last().unwrap();
                let cands: Vec<Symbol> = g.successors(last).collect();
                let weights: Vec<f64> = cands.iter().map(|&s| self.weight(&m, address[0], s)).collect();
                let s = cands[pick(rng, &weights)];
                address.push(s);
                m = mul2(&m, g.symbol_f64(s));
                let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                m.iter_mut().for_each(|v| *v /= scale);
            }
            if address.len() > TAIL {
                tr.address.clone_from(&address);
                tr.refresh(g);
                if tr.birkhoff(tr.len()) > horizon + tr.roofs[0] {
                    return tr;
                }
            }
        }
    }
}

fn pick<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Position `(σ^k u, γ c_k(u), s)` after flowing; `class` is `c_k(u)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowState {
    pub returns: usize,
    pub class: u32,
    pub s: f64,
}

/// Flow `(u, ·, s)` by `t ≥ 0` along a trajectory.
pub fn flow(tr: &Trajectory, mg: &ModGroup, start: FlowState, t: f64) -> FlowState {
    let mut st = FlowState { s: start.s + t, ..start };
    while st.s >= tr.roofs[st.returns] {
        st.s -= tr.roofs[st.returns];
        st.class = mg.mul(st.class, mg.cocycle_images[tr.address[st.returns]]);
        st.returns += 1;
    }
    st
}

/// `Σ_γ a[γ c] b[γ]`.
fn twisted_pairing(mg: &ModGroup, class: u32, a: &[C64], b: &[C64]) -> C64 {
    (0..mg.order() as u32).map(|x| a[mg.mul(x, class) as usize] * b[x as usize]).sum()
}

fn sup_roof(g: &SchottkyGroup) -> f64 {
    (0..g.alphabet_size())
        .flat_map(|s| {
            let i = g.interval(s);
            [roof_unchecked(g, i.lo, s), roof_unchecked(g, i.hi, s)]
        })
        .fold(0.0, f64::max)
}

/// Monte Carlo estimate of the correlation on a time grid.
#[derive(Clone, Debug)]
pub struct Correlation {
    pub q: u64,
    pub t: Vec<f64>,
    pub values: Vec<C64>,
    pub stderr: Vec<f64>,
    pub samples: usize,
}

/// Running mean and variance of complex samples.
#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    n: f64,
    sum: C64,
    sq: f64,
}

impl Moments {
    fn push(&mut self, x: C64) {
        self.n += 1.0;
        self.sum += x;
        self.sq += x.norm_sqr();
    }

    fn mean(&self) -> C64 {
        self.sum / self.n
    }

    fn stderr(&self) -> f64 {
        let m = self.mean();
        ((self.sq / self.n - m.norm_sqr()).max(0.0) / (self.n - 1.0).max(1.0)).sqrt()
    }
}

/// `Σ_γ ∫ ∫_0^τ φ(u, γ, s + t) ψ(u, γ, s) ds dν(u)` by sampling `u ~ ν` and
/// `s` uniform on `[0, τ(u))`; every sample is reused across the grid.
pub fn correlation(th: &Thermo, mg: &ModGroup, phi: &Observable, psi: &Observable, t: &[f64], samples: usize, seed: u64) -> Correlation {
    let sampler = NuSampler::new(th);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = t.iter().copied().fold(0.0, f64::max);
    let n = mg.order();
    let e = mg.word_image(&[]);
    let mut acc = vec![Moments::default(); t.len()];
    let (mut a, mut b) = (vec![ZERO; n], vec![ZERO; n]);
    for _ in 0..samples {
        let tr = sampler.trajectory(&mut rng, horizon);
        let tau = tr.roofs[0];
        let s = rng.gen::<f64>() * tau;
        psi.eval(&tr.address, s, &mut b);
        let start = FlowState { returns: 0, class: e, s };
        for (ti, m) in t.iter().zip(acc.iter_mut()) {
            let st = flow(&tr, mg, start, *ti);
            phi.eval(&tr.address[st.returns..], st.s, &mut a);
            m.push(tau * twisted_pairing(mg, st.class, &a, &b));
        }
    }
    Correlation {
        q: mg.q,
        t: t.to_vec(),
        values: acc.iter().map(Moments::mean).collect(),
        stderr: acc.iter().map(Moments::stderr).collect(),
        samples,
    }
}

/// A decaying test pair: `φ` is supported on the first cylinder and the
/// identity class; `ψ` is the same cylinder with zero mean over the group,
/// or centred against the invariant measure where the group is trivial.
pub fn mean_zero_pair(th: &Thermo, mg: &ModGroup) -> (Observable, Observable) {
    let n = mg.order();
    let e = mg.word_image(&[]) as usize;
    let mut v = vec![ZERO; n];
    v[e] = C64::new(1.0, 0.0);
    let phi = Observable::cylinder(&[0], v.clone(), 1.0, 0.0);
    let psi = if n == 1 {
        phi.clone().centered(th)
    } else {
        let w = v.iter().map(|x| x - 1.0 / n as f64).collect();
        Observable::cylinder(&[0], w, 1.0, 0.0)
    };
    (phi, psi)
}

/// Exponential decay fitted to a correlation.
#[derive(Clone, Copy, Debug)]
pub struct DecayFit {
    /// `-d/dt log |ρ(t)|`.
    pub eta: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Least-squares slope of `log |ρ(t)|` over the grid points that stand more
/// than `sigmas` standard errors above zero; NaN with fewer than three.
pub fn fit_decay(c: &Correlation, sigmas: f64) -> DecayFit {
    let pts: Vec<(f64, f64)> = c
        .t
        .iter()
        .zip(c.values.iter().zip(&c.stderr))
        .filter(|(_, (v, e))| v.norm() > sigmas * **e)
        .map(|(&t, (v, _))| (t, v.norm().ln()))
        .collect();
    if pts.len() < 3 {
        return DecayFit {
            eta: f64::NAN,
            intercept: f64::NAN,
            points: pts.len(),
        };
    }
    let n = pts.len() as f64;
    let (mt, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let slope = sxy / sxx;
    DecayFit {
        eta: -slope,
        intercept: my - slope * mt,
        points: pts.len(),
    }
}

/// Both sides of the transfer-operator expression for the Laplace transform
/// of the correlation restricted to flow times past the first return.
#[derive(Clone, Debug)]
pub struct LaplaceCheck {
    pub xi: C64,
    pub monte_carlo: C64,
    pub stderr: f64,
    /// Operator sums truncated after `k = 1, 2, …, k_max` terms.
    pub partial_sums: Vec<C64>,
    pub samples: usize,
}

impl LaplaceCheck {
    pub fn operator(&self) -> C64 {
        *self.partial_sums.last().unwrap()
    }

    /// `|MC - operator| / |operator|`.
    pub fn residual(&self) -> f64 {
        (self.monte_carlo - self.operator()).norm() / self.operator().norm().max(f64::MIN_POSITIVE)
    }

    /// Discrepancy in Monte Carlo standard errors.
    pub fn sigmas(&self) -> f64 {
        (self.monte_carlo - self.operator()).norm() / self.stderr
    }

    /// Discrepancy after `k` operator terms, relative to the full sum.
    pub fn residual_at(&self, k: usize) -> f64 {
        (self.monte_carlo - self.partial_sums[k - 1]).norm() / self.operator().norm().max(f64::MIN_POSITIVE)
    }
}

/// Monte Carlo route: for each sample, the Laplace integral along the flow
/// line is integrated exactly segment by segment.
fn laplace_monte_carlo(th: &Thermo, mg: &ModGroup, phi: &Observable, psi: &Observable, xi: C64, samples: usize, seed: u64) -> (C64, f64) {
    let sampler = NuSampler::new(th);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = -(1e-13f64).ln() / xi.re;
    let n = mg.order();
    let e = mg.word_image(&[]);
    let mut acc = Moments::default();
    let (mut a, mut b) = (vec![ZERO; n], vec![ZERO; n]);
    for _ in 0..samples {
        let tr = sampler.trajectory(&mut rng, horizon);
        let tau = tr.roofs[0];
        let s = rng.gen::<f64>() * tau;
        psi.eval(&tr.address, s, &mut b);
        let mut class = e;
        let mut elapsed = -s;
        let mut x = ZERO;
        for k in 1..tr.len() {
            elapsed += tr.roofs[k - 1];
            class = mg.mul(class, mg.cocycle_images[tr.address[k - 1]]);
            if elapsed > horizon {
                break;
            }
            phi.hat(&tr.address[k..], tr.roofs[k], xi, &mut a);
            x += (-xi * elapsed).exp() * twisted_pairing(mg, class, &a, &b);
        }
        acc.push(tau * x);
    }
    (acc.mean(), acc.stderr())
}

/// A point with a known address prefix.
struct Marked {
    x: f64,
    address: Vec<Symbol>,
}

/// Operator route: `Σ_{k≥1} ∫ φ̂_ξ · 𝓛^k (h0 ψ̂_{-ξ}) dν̂` where `𝓛` is the
/// congruence transfer operator at `δ + ξ`. Terms with `k` below the
/// observable depth are exact branch sums; the rest are collocated.
pub fn laplace_operator_sums(th: &Thermo, mg: &ModGroup, phi: &Observable, psi: &Observable, xi: C64, k_max: usize) -> Result<Vec<C64>> {
    let g = th.g();
    let disc = &th.disc;
    let p = th.order();
    let n = mg.order();
    let s = C64::new(th.delta, 0.0) + xi;
    let d = phi.depth().max(psi.depth()).max(1);
    let g0 = |pt: &Marked| -> Vec<C64> {
        let mut out = vec![ZERO; n];
        let tau = roof_unchecked(g, pt.x, pt.address[0]);
        psi.hat(&pt.address, tau, -xi, &mut out);
        let h = th.h0(pt.address[0], pt.x);
        out.iter_mut().for_each(|v| *v *= h);
        out
    };
    // 𝓛^k G0 at a marked point by summing over the k-step inverse branches
    let branch_sum = |pt: &Marked, k: usize| -> Vec<C64> {
        let mut out = vec![ZERO; n];
        for w in crate::coding::admissible_words(g, k + 1).into_iter().filter(|w| w[k] == pt.address[0]) {
            let word = &w[..k];
            let m = g.word_matrix(word).entries_f64();
            let den = m[2] * pt.x + m[3];
            let weight = (-s * (den * den).ln()).exp();
            let mut address = word.to_vec();
            address.extend_from_slice(&pt.address);
            let y = Marked {
                x: mobius_f64(&m, pt.x),
                address,
            };
            let vals = g0(&y);
            let cinv = mg.inv(mg.word_image(word));
            for (gamma, o) in out.iter_mut().enumerate() {
                *o += weight * vals[mg.mul(gamma as u32, cinv) as usize];
            }
        }
        out
    };
    // quadrature points of ν̂ pulled back over every d-symbol cylinder
    let mut quad: Vec<(Marked, f64)> = Vec::new();
    for w in crate::coding::admissible_words(g, d + 1) {
        let last = w[d];
        let m = g.word_matrix(&w[..d]).entries_f64();
        for j in 0..p {
            let y = disc.node(last, j);
            let den = m[2] * y + m[3];
            quad.push((
                Marked {
                    x: mobius_f64(&m, y),
                    address: w.clone(),
                },
                th.gibbs.nu[last * p + j] * (den * den).powf(-th.delta),
            ));
        }
    }
    let phi_hat: Vec<Vec<C64>> = quad
        .iter()
        .map(|(pt, _)| {
            let mut out = vec![ZERO; n];
            phi.hat(&pt.address, roof_unchecked(g, pt.x, pt.address[0]), xi, &mut out);
            out
        })
        .collect();
    let pair = |values: &dyn Fn(usize) -> Vec<C64>| -> C64 {
        quad.iter()
            .enumerate()
            .map(|(i, (_, wgt))| {
                let h = values(i);
                *wgt * phi_hat[i].iter().zip(&h).map(|(a, b)| a * b).sum::<C64>()
            })
            .sum()
    };
    let mut sums = Vec::with_capacity(k_max);
    let mut total = ZERO;
    for k in 1..d.min(k_max + 1) {
        total += pair(&|i| branch_sum(&quad[i].0, k));
        sums.push(total);
    }
    if k_max >= d {
        // 𝓛^d G0 is smooth on every symbol interval: collocate it, then iterate
        let mut h = vec![ZERO; disc.dim() * n];
        for node in 0..disc.dim() {
            let t = disc.node_symbol(node);
            let pt = Marked {
                x: disc.nodes[node],
                address: vec![t],
            };
            h[node * n..(node + 1) * n].copy_from_slice(&branch_sum(&pt, d));
        }
        let op = congruence_matrix(disc, mg, s)?;
        let mut next = vec![ZERO; h.len()];
        for k in d..=k_max {
            if k > d {
                op.apply(&h, &mut next);
                std::mem::swap(&mut h, &mut next);
            }
            let interp = |i: usize| -> Vec<C64> {
                let pt = &quad[i].0;
                let sym = pt.address[0];
                let mut basis = vec![0.0; p];
                disc.basis_at(sym, pt.x, &mut basis);
                (0..n)
                    .map(|gamma| (0..p).map(|j| h[(sym * p + j) * n + gamma] * basis[j]).sum())
                    .collect()
            };
            total += pair(&interp);
            sums.push(total);
        }
    }
    Ok(sums)
}

/// Two-route check: the Monte Carlo Laplace transform against the operator
/// sums truncated at `k_max`.
#[allow(clippy::too_many_arguments)]
pub fn laplace_identity_check(
    th: &Thermo,
    mg: &ModGroup,
    phi: &Observable,
    psi: &Observable,
    xi: C64,
    k_max: usize,
    samples: usize,
    seed: u64,
) -> Result<LaplaceCheck> {
    if xi.re <= 0.0 {
        return Err(Error::Domain(format!("Laplace transform needs Re ξ > 0, got {}", xi.re)));
    }
    let partial_sums = laplace_operator_sums(th, mg, phi, psi, xi, k_max)?;
    let (monte_carlo, stderr) = laplace_monte_carlo(th, mg, phi, psi, xi, samples, seed);
    Ok(LaplaceCheck {
        xi,
        monte_carlo,
        stderr,
        partial_sums,
        samples,
    })
}

/// Both sides of the bound `sup ‖φ̂_ξ‖ ≤ 2 √|G| e^{|a| sup τ} ‖φ‖_{ℬ₁} / max(1, |b|)`
/// for `ξ = a - ib`, with the supremum and the norm taken over the
/// pulled-back quadrature points of the observable's cylinders.
#[derive(Clone, Copy, Debug)]
pub struct HatBound {
    pub lhs: f64,
    pub rhs: f64,
    pub b1_norm: f64,
}

pub fn hat_bound(th: &Thermo, mg: &ModGroup, phi: &Observable, xi: C64) -> HatBound {
    let g = th.g();
    let d = phi.depth().max(1);
    let n = mg.order();
    let (a, b) = (xi.re, -xi.im);
    let mut lhs = 0.0f64;
    let mut sup = 0.0f64;
    let mut var = 0.0f64;
    let mut v0 = vec![ZERO; n];
    let mut v1 = vec![ZERO; n];
    let mut hat = vec![ZERO; n];
    for w in crate::coding::admissible_words(g, d + 1) {
        let iv = crate::coding::cylinder_interval_f64(g, &w);
        for x in [iv.lo, iv.mid(), iv.hi] {
            let tau = roof_unchecked(g, x, w[0]);
            phi.eval(&w, 0.0, &mut v0);
            phi.eval(&w, tau, &mut v1);
            for (p0, p1) in v0.iter().zip(&v1) {
                sup = sup.max(p0.norm()).max(p1.norm());
                var = var.max((p1 - p0).norm());
            }
            phi.hat(&w, tau, xi, &mut hat);
            lhs = lhs.max(hat.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt());
        }
    }
    let b1_norm = sup + var;
    let rhs = 2.0 * (n as f64).sqrt() * (a.abs() * sup_roof(g)).exp() * b1_norm / b.abs().max(1.0);
    HatBound { lhs, rhs, b1_norm }
}
