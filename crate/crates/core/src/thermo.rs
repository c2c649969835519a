//! Chebyshev collocation of the transfer operator
//! `(L_s f)(x) = Σ_branches e^{-s τ(y)} f(y)`, its Perron data, pressure, the
//! critical exponent, Gibbs measures of cylinders and the shadow-lemma check.
//!
//! Functions are represented by their values at `order` Chebyshev nodes of the
//! first kind on every symbol interval. The branch into `I_s` evaluated at a
//! node `x ∈ I_t` (`s ≠ t̄`) is `y = γ_s(x)`, so each matrix row combines the
//! Lagrange basis of `I_s` at `y` with the weight `|γ_s'(x)|^s = e^{-s τ(y)}`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::arith::mobius_f64;
use crate::coding::{admissible_words, branch_roof, push_point};
use crate::linalg::{real_eigenvalues, DenseMatrix, C64};
use crate::schottky::{inverse_symbol, Interval, SchottkyGroup, Symbol};
use crate::{Error, Result};

/// Chebyshev points of the first kind on `[-1, 1]` with barycentric weights.
#[derive(Clone, Debug)]
pub struct Chebyshev {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Chebyshev {
    pub fn new(p: usize) -> Self {
        let nodes = (0..p)
            .map(|j| ((2 * j + 1) as f64 * PI / (2 * p) as f64).cos())
            .collect();
        let weights = (0..p)
            .map(|j| {
                let s = ((2 * j + 1) as f64 * PI / (2 * p) as f64).sin();
                if j % 2 == 0 {
                    s
                } else {
                    -s
                }
            })
            .collect();
        Self { nodes, weights }
    }

    /// Lagrange basis values at `t ∈ [-1, 1]` written into `out`.
    pub fn basis(&self, t: f64, out: &mut [f64]) {
        if let Some(j) = self.nodes.iter().position(|&x| x == t) {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[j] = 1.0;
            return;
        }
        let mut sum = 0.0;
        for (o, (&x, &w)) in out.iter_mut().zip(self.nodes.iter().zip(&self.weights)) {
            *o = w / (t - x);
            sum += *o;
        }
        out.iter_mut().for_each(|v| *v /= sum);
    }
}

#[inline]
fn to_unit(i: &Interval, x: f64) -> f64 {
    (2.0 * x - i.lo - i.hi) / (i.hi - i.lo)
}

/// One inverse branch evaluated at one node.
#[derive(Clone, Debug)]
pub struct Branch {
    /// Row index `t * order + j` of the node `x`.
    pub row: usize,
    /// Branch symbol `s`; the image `y = γ_s(x)` lies in `I_s`.
    pub sym: Symbol,
    pub y: f64,
    /// `τ(y) = -log |γ_s'(x)|`.
    pub tau: f64,
    /// Lagrange basis of `I_s` at `y`.
    pub basis: Vec<f64>,
}

/// Collocation grid and branch data, independent of the parameter `s`.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub g: SchottkyGroup,
    pub order: usize,
    pub cheb: Chebyshev,
    /// Node coordinates, `k * order` of them, interval-major.
    pub nodes: Vec<f64>,
    pub branches: Vec<Branch>,
}

impl Discretization {
    pub fn new(g: &SchottkyGroup, order: usize) -> Self {
        let cheb = Chebyshev::new(order);
        let k = g.alphabet_size();
        let mut nodes = Vec::with_capacity(k * order);
        for s in 0..k {
            let i = g.interval(s);
            nodes.extend(cheb.nodes.iter().map(|&t| i.mid() + 0.5 * i.diam() * t));
        }
        let mut branches = Vec::with_capacity(k * order * (k - 1));
        for t in 0..k {
            for j in 0..order {
                let x = nodes[t * order + j];
                for s in g.successors_of_target(t) {
                    let y = mobius_f64(g.symbol_f64(s), x);
                    let mut basis = vec![0.0; order];
                    cheb.basis(to_unit(&g.interval(s), y), &mut basis);
                    branches.push(Branch {
                        row: t * order + j,
                        sym: s,
                        y,
                        tau: branch_roof(g, s, x),
                        basis,
                    });
                }
            }
        }
        Self {
            g: g.clone(),
            order,
            cheb,
            nodes,
            branches,
        }
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, t: Symbol, j: usize) -> f64 {
        self.nodes[t * self.order + j]
    }

    /// Interval index of node `i`.
    pub fn node_symbol(&self, i: usize) -> Symbol {
        i / self.order
    }

    /// Lagrange basis of `I_s` at `x`.
    pub fn basis_at(&self, s: Symbol, x: f64, out: &mut [f64]) {
        self.cheb.basis(to_unit(&self.g.interval(s), x), out);
    }

    /// Interpolant of node values on `I_s`, evaluated at `x`.
    pub fn interpolate(&self, values: &[f64], s: Symbol, x: f64) -> f64 {
        let mut b = vec![0.0; self.order];
        self.basis_at(s, x, &mut b);
        b.iter().zip(&values[s * self.order..(s + 1) * self.order]).map(|(a, v)| a * v).sum()
    }

    pub fn interpolate_c(&self, values: &[C64], s: Symbol, x: f64) -> C64 {
        let mut b = vec![0.0; self.order];
        self.basis_at(s, x, &mut b);
        b.iter().zip(&values[s * self.order..(s + 1) * self.order]).map(|(a, v)| v * *a).sum()
    }

    /// Raw collocation matrix of `L_s`.
    pub fn matrix(&self, s: C64) -> DenseMatrix {
        let n = self.dim();
        let mut m = DenseMatrix::zeros(n);
        for br in &self.branches {
            let w = (-s * br.tau).exp();
            let col0 = br.sym * self.order;
            for (i, &b) in br.basis.iter().enumerate() {
                let idx = br.row * n + col0 + i;
                m.data[idx] += w * b;
            }
        }
        m
    }

    /// Raw collocation matrix of `L_s` for real `s`, row-major; with
    /// `derivative` the entries are multiplied by `-τ` (the `s`-derivative).
    pub fn matrix_real(&self, s: f64, derivative: bool) -> Vec<f64> {
        let n = self.dim();
        let mut m = vec![0.0; n * n];
        for br in &self.branches {
            let mut w = (-s * br.tau).exp();
            if derivative {
                w *= -br.tau;
            }
            let col0 = br.sym * self.order;
            for (i, &b) in br.basis.iter().enumerate() {
                m[br.row * n + col0 + i] += w * b;
            }
        }
        m
    }
}

impl SchottkyGroup {
    /// Symbols `s` whose inverse branch `γ_s` maps `I_t` into `I_s`: all
    /// `s ≠ t̄`.
    pub fn successors_of_target(&self, t: Symbol) -> impl Iterator<Item = Symbol> {
        (0..self.alphabet_size()).filter(move |&s| s != inverse_symbol(t))
    }
}

/// Discretized transfer operator at a complex parameter.
#[derive(Clone, Debug)]
pub struct TransferOperator {
    pub s: C64,
    pub order: usize,
    pub matrix: DenseMatrix,
    pub normalized: bool,
}

/// Raw collocation operator `L_s`.
pub fn build(g: &SchottkyGroup, s: C64, order: usize) -> TransferOperator {
    let disc = Discretization::new(g, order);
    TransferOperator {
        s,
        order,
        matrix: disc.matrix(s),
        normalized: false,
    }
}

/// Leading eigendata of a real transfer operator.
#[derive(Clone, Debug)]
pub struct GibbsData {
    pub s: f64,
    pub a: f64,
    pub lambda: f64,
    /// Subleading eigenvalue (largest modulus after `lambda`).
    pub lambda2: C64,
    /// Right eigenvector at the nodes, scaled so that `ν̂(h) = 1`.
    pub h: Vec<f64>,
    /// Left eigenvector, scaled so that `ν̂(1) = 1`.
    pub nu: Vec<f64>,
}

fn power_iteration(n: usize, m: &[f64], transpose: bool, iters: usize) -> (f64, Vec<f64>) {
    let mut v = vec![1.0; n];
    let mut lam = 0.0;
    for _ in 0..iters {
        let mut w = vec![0.0; n];
        if transpose {
            for i in 0..n {
                let vi = v[i];
                for (wj, a) in w.iter_mut().zip(&m[i * n..(i + 1) * n]) {
                    *wj += a * vi;
                }
            }
        } else {
            for (i, wi) in w.iter_mut().enumerate() {
                *wi = m[i * n..(i + 1) * n].iter().zip(&v).map(|(a, b)| a * b).sum();
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let new_lam: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>()
            / v.iter().map(|x| x * x).sum::<f64>();
        w.iter_mut().for_each(|x| *x /= norm);
        let diff: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        let done = (new_lam - lam).abs() <= 1e-16 * new_lam.abs() && diff < 1e-15;
        lam = new_lam;
        if done {
            break;
        }
    }
    (lam, v)
}

/// Perron eigendata of the real matrix `m` (row-major, size `n`).
pub fn leading_matrix(n: usize, m: &[f64], s: f64, a: f64) -> Result<GibbsData> {
    let mut ev = real_eigenvalues(n, m);
    ev.sort_by(|x, y| y.norm().partial_cmp(&x.norm()).unwrap());
    let top = ev[0];
    let second = ev.get(1).copied().unwrap_or(C64::new(0.0, 0.0));
    if top.re <= 0.0 || top.im.abs() > 1e-10 * top.norm() || second.norm() >= top.norm() * (1.0 - 1e-8) {
        return Err(Error::NonPerron(format!("top {top}, next {second}")));
    }
    let iters = 200 + (60.0 / (top.norm() / second.norm().max(1e-300)).ln().max(1e-3)) as usize;
    let (lambda, mut h) = power_iteration(n, m, false, iters.min(100_000));
    let (_, mut nu) = power_iteration(n, m, true, iters.min(100_000));
    if h.iter().sum::<f64>() < 0.0 {
        h.iter_mut().for_each(|x| *x = -*x);
    }
    if nu.iter().sum::<f64>() < 0.0 {
        nu.iter_mut().for_each(|x| *x = -*x);
    }
    let nsum: f64 = nu.iter().sum();
    nu.iter_mut().for_each(|x| *x /= nsum);
    let nh: f64 = nu.iter().zip(&h).map(|(a, b)| a * b).sum();
    h.iter_mut().for_each(|x| *x /= nh);
    Ok(GibbsData {
        s,
        a,
        lambda,
        lambda2: second,
        h,
        nu,
    })
}

/// Leading eigendata of a real-parameter operator.
pub fn leading(op: &TransferOperator) -> Result<GibbsData> {
    if op.s.im != 0.0 {
        return Err(Error::NonPerron(format!("complex parameter {}", op.s)));
    }
    let n = op.matrix.n;
    let m: Vec<f64> = op.matrix.data.iter().map(|z| z.re).collect();
    leading_matrix(n, &m, op.s.re, 0.0)
}

/// `log λ(s)`.
pub fn pressure(g: &SchottkyGroup, s: f64, order: usize) -> Result<f64> {
    pressure_disc(&Discretization::new(g, order), s)
}

pub fn pressure_disc(disc: &Discretization, s: f64) -> Result<f64> {
    let n = disc.dim();
    Ok(leading_matrix(n, &disc.matrix_real(s, false), s, 0.0)?.lambda.ln())
}

/// Root of the pressure in `(0, 1)`: bisection to width `1e-4`, then Newton
/// with `λ'(s) = ν̂ L' h / ν̂ h`.
pub fn solve_delta(g: &SchottkyGroup, order: usize, tol: f64) -> Result<f64> {
    solve_delta_disc(&Discretization::new(g, order), tol)
}

pub fn solve_delta_disc(disc: &Discretization, tol: f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.0, 1.0);
    if pressure_disc(disc, lo)? <= 0.0 || pressure_disc(disc, hi)? >= 0.0 {
        return Err(Error::NoBracket);
    }
    while hi - lo > 1e-4 {
        let mid = 0.5 * (lo + hi);
        if pressure_disc(disc, mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let n = disc.dim();
    let mut s = 0.5 * (lo + hi);
    for _ in 0..50 {
        let gd = leading_matrix(n, &disc.matrix_real(s, false), s, 0.0)?;
        let p = gd.lambda.ln();
        let dm = disc.matrix_real(s, true);
        let mut dl = 0.0;
        for i in 0..n {
            let row: f64 = dm[i * n..(i + 1) * n].iter().zip(&gd.h).map(|(a, b)| a * b).sum();
            dl += gd.nu[i] * row;
        }
        // ν̂(h) = 1
        let step = p / (dl / gd.lambda);
        s -= step;
        if p.abs() < tol * 1e-2 || step.abs() < 1e-16 {
            break;
        }
    }
    let p = pressure_disc(disc, s)?;
    if p.abs() >= tol {
        return Err(Error::NonPerron(format!("pressure {p:e} at s = {s} after Newton")));
    }
    Ok(s)
}

/// Collocation model at the critical exponent: the discretization, `δ`, and
/// the Perron data `(λ = 1, h0, ν̂0)`.
#[derive(Clone, Debug)]
pub struct Thermo {
    pub disc: Discretization,
    pub delta: f64,
    pub gibbs: GibbsData,
}

impl Thermo {
    pub fn new(g: &SchottkyGroup, order: usize) -> Result<Self> {
        let disc = Discretization::new(g, order);
        let delta = solve_delta_disc(&disc, 1e-13)?;
        let gibbs = leading_matrix(disc.dim(), &disc.matrix_real(delta, false), delta, 0.0)?;
        Ok(Self { disc, delta, gibbs })
    }

    pub fn g(&self) -> &SchottkyGroup {
        &self.disc.g
    }

    pub fn order(&self) -> usize {
        self.disc.order
    }

    /// Perron data of the raw operator at `s = δ + a`.
    pub fn gibbs_at(&self, a: f64) -> Result<GibbsData> {
        let s = self.delta + a;
        let mut gd = leading_matrix(self.disc.dim(), &self.disc.matrix_real(s, false), s, a)?;
        gd.a = a;
        Ok(gd)
    }

    /// `h0` interpolated at `x ∈ I_s`.
    pub fn h0(&self, s: Symbol, x: f64) -> f64 {
        self.disc.interpolate(&self.gibbs.h, s, x)
    }

    /// Discrete weights of the equilibrium measure `ν = h0 ν̂0` at the nodes.
    pub fn nu_weights(&self) -> Vec<f64> {
        self.gibbs.nu.iter().zip(&self.gibbs.h).map(|(a, b)| a * b).collect()
    }

    /// Collocation matrix of the normalized operator
    /// `L̂_{ab} f = (λ_a h0)⁻¹ L_{δ+a-ib}(h0 f)`.
    pub fn normalized_matrix(&self, a: f64, b: f64, lambda_a: f64) -> DenseMatrix {
        let s = Complex64::new(self.delta + a, -b);
        let mut m = self.disc.matrix(s);
        let n = m.n;
        let h = &self.gibbs.h;
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] *= h[j] / (h[i] * lambda_a);
            }
        }
        m
    }

    /// `ν(F)` for a function that is smooth on every cylinder with
    /// `depth + 1` symbols, by pulling its integral back through the cylinder
    /// branches: `ν(1_C F) = Σ_y ν̂_y |γ_w'(y)|^δ h0(γ_w y) F(γ_w y)` since
    /// `λ = 1`. `f` receives the cylinder word and the point.
    pub fn integrate_pullback<F>(&self, depth: usize, mut f: F) -> f64
    where
        F: FnMut(&[Symbol], f64) -> f64,
    {
        let g = self.g();
        let p = self.order();
        let mut total = 0.0;
        for w in admissible_words(g, depth + 1) {
            let last = *w.last().unwrap();
            let pre = &w[..depth];
            let m = g.word_matrix(pre).entries_f64();
            for j in 0..p {
                let y = self.disc.node(last, j);
                let den = m[2] * y + m[3];
                let jac = (den * den).powf(-self.delta);
                let x = mobius_f64(&m, y);
                let idx = last * p + j;
                total += self.gibbs.nu[idx] * jac * self.h0(w[0], x) * f(&w, x);
            }
        }
        total
    }
}

/// `ν̂_a(C[word]) = λ_a^{-n} ν̂_a(|γ_w'|^{δ+a} 1_{I_last})` with `n + 1`
/// symbols in `word` and `γ_w` the branch of the first `n`.
pub fn gibbs_cylinder_measure(disc: &Discretization, gd: &GibbsData, word: &[Symbol]) -> Result<f64> {
    let g = &disc.g;
    if word.is_empty() || !crate::coding::is_admissible(word) || word.iter().any(|&s| s >= g.alphabet_size()) {
        return Err(Error::InadmissibleWord);
    }
    let n = word.len() - 1;
    let last = word[n];
    let m = g.word_matrix(&word[..n]).entries_f64();
    let p = disc.order;
    let mut total = 0.0;
    for j in 0..p {
        let y = disc.node(last, j);
        let den = m[2] * y + m[3];
        total += gd.nu[last * p + j] * (den * den).powf(-gd.s);
    }
    Ok(total / gd.lambda.powi(n as i32))
}

/// Extremes of the Gibbs ratio `ν̂(C) λ^n e^{s τ_n(x)}` over all cylinders
/// with at most `max_len + 1` symbols, `x` the periodic point of the cylinder's
/// last symbol pushed into the cylinder.
pub fn gibbs_ratio_bounds(disc: &Discretization, gd: &GibbsData, max_len: usize) -> (f64, f64) {
    let g = &disc.g;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for n in 0..=max_len {
        for w in admissible_words(g, n + 1) {
            let mu = gibbs_cylinder_measure(disc, gd, &w).unwrap();
            let last = w[n];
            let z = crate::coding::periodic_point(g, &[last]);
            let m = g.word_matrix(&w[..n]).entries_f64();
            let den = m[2] * z + m[3];
            // e^{s τ_n(x)} = |γ_w'(z)|^{-s}
            let r = mu * gd.lambda.powi(n as i32) * (den * den).powf(gd.s);
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    (lo, hi)
}

/// Geometric convergence of `λ^{-n} L^n ψ` to `ν̂(ψ) h`: returns the sup-norm
/// errors for `n = 0..n_max`.
pub fn rpf_errors(disc: &Discretization, gd: &GibbsData, psi: &[f64], n_max: usize) -> Vec<f64> {
    let n = disc.dim();
    let m = disc.matrix_real(gd.s, false);
    let nu_psi: f64 = gd.nu.iter().zip(psi).map(|(a, b)| a * b).sum();
    let mut v = psi.to_vec();
    let mut out = Vec::with_capacity(n_max + 1);
    for _ in 0..=n_max {
        let err = v.iter().zip(&gd.h).map(|(x, h)| (x - nu_psi * h).abs()).fold(0.0, f64::max);
        out.push(err);
        let mut w = vec![0.0; n];
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = m[i * n..(i + 1) * n].iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / gd.lambda;
        }
        v = w;
    }
    out
}

/// Fit of `err_n ≤ c (1 - ε)^n`: `ε` from the log-linear slope over the
/// errors above `floor`, `c` the smallest constant making the bound hold.
pub fn fit_geometric(errors: &[f64], floor: f64) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = errors
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > floor)
        .map(|(i, &e)| (i as f64, e.ln()))
        .collect();
    if pts.len() < 2 {
        return (errors.first().copied().unwrap_or(0.0), 1.0);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let rate = slope.exp().min(1.0);
    let c = pts.iter().map(|p| (p.1 - p.0 * rate.ln()).exp()).fold(0.0, f64::max);
    (c, 1.0 - rate)
}

/// Shadow-lemma ratio for one group element.
#[derive(Clone, Debug)]
pub struct ShadowReport {
    pub word: Vec<Symbol>,
    pub distance: f64,
    pub r: f64,
    pub measure: f64,
    pub ratio: f64,
}

/// `μ_i(shadow of B_r(γ i) seen from i) · e^{δ d(i, γ i)}`, with `μ_i` the
/// conformal measure at basepoint `i` (`ν̂0` weighted by `(1 + ξ²)^{-δ}`). The
/// shadow is an arc of half-angle `asin(sinh r / sinh d)` in the disk model;
/// its measure is approximated by the cylinders of depth `depth` meeting it.
pub fn shadow_check(th: &Thermo, word: &[Symbol], r: f64, depth: usize) -> ShadowReport {
    let g = th.g();
    let m = g.word_matrix(word);
    let d = crate::arith::orbit_distance(&m);
    let [a, b, c, dd] = m.entries_f64();
    // γ·i in the upper half-plane, then Cayley to the disk
    let den = c * c + dd * dd;
    let (zr, zi) = ((a * c + b * dd) / den, 1.0 / den);
    let centre = disk_angle(zr, zi);
    let half = if d <= r { PI } else { (r.sinh() / d.sinh()).min(1.0).asin() };
    let in_shadow = |xi: f64| angle_dist(disk_angle(xi, 0.0), centre) <= half;
    let delta = th.delta;
    let mut measure = 0.0;
    for w in admissible_words(g, depth + 1) {
        let i = crate::coding::cylinder_interval_f64(g, &w);
        if in_shadow(i.lo) || in_shadow(i.hi) || in_shadow(i.mid()) {
            let mu = gibbs_cylinder_measure(&th.disc, &th.gibbs, &w).unwrap();
            measure += mu * (1.0 + i.mid() * i.mid()).powf(-delta);
        }
    }
    ShadowReport {
        word: word.to_vec(),
        distance: d,
        r,
        measure,
        ratio: measure * (delta * d).exp(),
    }
}

fn disk_angle(x: f64, y: f64) -> f64 {
    // w = (z - i) / (z + i)
    let (nr, ni) = (x, y - 1.0);
    let (dr, di) = (x, y + 1.0);
    let wr = nr * dr + ni * di;
    let wi = ni * dr - nr * di;
    wi.atan2(wr)
}

fn angle_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// Pushes the periodic point of `tail` through `word`: a limit point with the
/// given prefix.
pub fn limit_point(g: &SchottkyGroup, word: &[Symbol], tail: Symbol) -> f64 {
    push_point(g, word, crate::coding::periodic_point(g, &[tail]))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Pressure root at order 32, computed once by this module and confirmed
    /// against an independent numpy collocation prototype.
    const DELTA_REF: f64 = 0.221_552_078_519_264_7;

    #[test]
    fn chebyshev_basis_reproduces_polynomials() {
        let c = Chebyshev::new(12);
        let mut b = vec![0.0; 12];
        for &t in &[-0.93, -0.2, 0.0, 0.41, 0.99] {
            c.basis(t, &mut b);
            let v: f64 = b.iter().zip(&c.nodes).map(|(w, x)| w * x.powi(7)).sum();
            assert!((v - t.powi(7)).abs() < 1e-13);
        }
    }

    #[test]
    fn row_sums_at_zero() {
        let g = SchottkyGroup::reference();
        let op = build(&g, C64::new(0.0, 0.0), 8);
        for i in 0..op.matrix.n {
            let s: C64 = (0..op.matrix.n).map(|j| op.matrix.get(i, j)).sum();
            assert!((s.re - 3.0).abs() < 1e-12 && s.im.abs() < 1e-14);
        }
    }

    #[test]
    fn conjugate_parameter_conjugates_entries() {
        let g = SchottkyGroup::reference();
        let s = C64::new(0.3, 1.7);
        let a = build(&g, s, 6);
        let b = build(&g, s.conj(), 6);
        for (x, y) in a.matrix.data.iter().zip(&b.matrix.data) {
            assert!((x.conj() - y).norm() < 1e-15);
        }
    }

    #[test]
    fn delta_and_perron_data() {
        let g = SchottkyGroup::reference();
        let d = solve_delta(&g, 32, 1e-12).unwrap();
        assert!((d - DELTA_REF).abs() < 1e-12, "{d}");
        let gd = leading(&build(&g, C64::new(d, 0.0), 32)).unwrap();
        assert!((gd.lambda - 1.0).abs() < 1e-10);
        assert!(gd.h.iter().all(|&x| x > 0.0));
        assert!(gd.lambda2.norm() < gd.lambda);
    }

    #[test]
    fn pressure_monotone_convex_and_at_zero() {
        let g = SchottkyGroup::reference();
        let disc = Discretization::new(&g, 16);
        let ps: Vec<f64> = (0..20).map(|i| pressure_disc(&disc, i as f64 * 0.05).unwrap()).collect();
        assert!(ps.windows(2).all(|w| w[0] > w[1]));
        assert!(ps.windows(3).all(|w| w[0] - 2.0 * w[1] + w[2] >= -1e-8));
        // unweighted operator = 3-regular branch count
        assert!((ps[0] - 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn subgroup_has_smaller_dimension() {
        let g = SchottkyGroup::reference();
        let g2 = g.generators()[1].clone();
        let sub = SchottkyGroup::validate(vec![g.generators()[0].clone(), &(&g2 * &g2) * &g2]).unwrap();
        assert!(solve_delta(&sub, 24, 1e-11).unwrap() < solve_delta(&g, 24, 1e-11).unwrap());
    }

    #[test]
    fn gibbs_measure_partition() {
        let g = SchottkyGroup::reference();
        let th = Thermo::new(&g, 24).unwrap();
        let total: f64 = (0..4).map(|s| gibbs_cylinder_measure(&th.disc, &th.gibbs, &[s]).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-13);
        for w in admissible_words(&g, 3) {
            let parent = gibbs_cylinder_measure(&th.disc, &th.gibbs, &w).unwrap();
            let kids: f64 = g
                .successors(w[2])
                .map(|t| {
                    let mut v = w.clone();
                    v.push(t);
                    gibbs_cylinder_measure(&th.disc, &th.gibbs, &v).unwrap()
                })
                .sum();
            assert!((kids / parent - 1.0).abs() < 1e-8);
        }
        assert_eq!(gibbs_cylinder_measure(&th.disc, &th.gibbs, &[0, 1]), Err(Error::InadmissibleWord));
    }

    #[test]
    fn pullback_quadrature_matches_node_quadrature() {
        let g = SchottkyGroup::reference();
        let th = Thermo::new(&g, 20).unwrap();
        let w = th.nu_weights();
        let f = |x: f64| (0.3 * x).sin() + 2.0;
        let direct: f64 = th.disc.nodes.iter().zip(&w).map(|(x, w)| w * f(*x)).sum();
        for depth in 0..4 {
            let pulled = th.integrate_pullback(depth, |_, x| f(x));
            assert!((pulled - direct).abs() < 1e-11, "{depth}: {pulled} vs {direct}");
        }
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn normalized_operator_fixes_constants() {
        let g = SchottkyGroup::reference();
        let th = Thermo::new(&g, 16).unwrap();
        let m = th.normalized_matrix(0.0, 0.0, 1.0);
        let ones = vec![C64::new(1.0, 0.0); m.n];
        let mut out = vec![C64::new(0.0, 0.0); m.n];
        m.apply(&ones, &mut out);
        assert!(out.iter().all(|z| (z - 1.0).norm() < 1e-11));
    }

    #[test]
    fn shadow_ratios_bounded() {
        let g = SchottkyGroup::reference();
        let th = Thermo::new(&g, 16).unwrap();
        let rep = shadow_check(&th, &[0], 3.0, 7);
        assert!(rep.ratio.is_finite() && rep.ratio > 0.0);
    }
}
