//! High-frequency machinery for the congruence operators: the cylinder
//! metric `D`, cones of log-Lipschitz functions, inverse-branch sections and
//! their temporal distance, the cylinder families `C_m(b)` and their
//! sub-cylinders, the damping weights `β_J` and the Dolgopyat operators
//! `𝒩_{J,a} h = L̂^N_{a0}(β_J h)`, with an audit of their contraction and
//! domination properties.
//!
//! Functions live on the partition of `Û` into the sub-cylinders `D_j`.
//! Every leaf `[u]` carries values at Chebyshev nodes of `I_{u_last}` in the
//! pulled-back coordinate `y`, so a leaf point is `γ_{u'}(y)` with `u'` the
//! leaf word without its last symbol. Branch images of a leaf always fall in
//! a single leaf, which keeps the transfer step exact at the symbolic level
//! and avoids resolving cylinders far below double precision.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arith::mobius_f64;
use crate::coding::{admissible_words, hyperbolicity_constants, is_admissible, periodic_point, push_point};
use crate::congruence::ModGroup;
use crate::linalg::C64;
use crate::schottky::{inverse_symbol, SchottkyGroup, Symbol};
use crate::thermo::{Chebyshev, Thermo};
use crate::{Error, Result};

/// Diameter of the cylinder of points with coding prefix `word`, from
/// `γ(x) - γ(y) = (x - y) / ((c x + d)(c y + d))` for the branch of all but the
/// last symbol.
pub fn word_diam(g: &SchottkyGroup, word: &[Symbol]) -> f64 {
    let n = word.len();
    let i = g.interval(word[n - 1]);
    let m = word_matrix_f64(g, &word[..n - 1]);
    i.diam() / ((m[2] * i.lo + m[3]) * (m[2] * i.hi + m[3])).abs()
}

/// Floating-point product of the symbol matrices of `word`.
pub fn word_matrix_f64(g: &SchottkyGroup, word: &[Symbol]) -> [f64; 4] {
    word.iter().fold([1.0, 0.0, 0.0, 1.0], |m, &s| {
        let t = g.symbol_f64(s);
        [
            m[0] * t[0] + m[1] * t[2],
            m[0] * t[1] + m[1] * t[3],
            m[2] * t[0] + m[3] * t[2],
            m[2] * t[1] + m[3] * t[3],
        ]
    })
}

/// Coding address of `x` by iterating the expanding map, stopping when the
/// orbit leaves the intervals, after `cap` symbols, or once the cylinder is
/// below the precision of `x`.
pub fn address(g: &SchottkyGroup, x: f64, cap: usize) -> Vec<Symbol> {
    let mut out = Vec::new();
    let mut y = x;
    while out.len() < cap {
        let Some(s) = g.locate(y) else { break };
        out.push(s);
        if word_diam(g, &out) < 1e-15 * x.abs().max(1.0) {
            break;
        }
        y = mobius_f64(g.symbol_f64(inverse_symbol(s)), y);
    }
    out
}

fn common_prefix(a: &[Symbol], b: &[Symbol]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// Value of `D(u, u')`; `flagged` marks pairs with no common cylinder, for
/// which the diameter of the hull of the two base intervals is used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricD {
    pub value: f64,
    pub flagged: bool,
}

/// `D(u, u') = inf diam C` over cylinders `C` containing both points.
pub fn metric_d(g: &SchottkyGroup, u: f64, v: f64) -> MetricD {
    if u == v {
        return MetricD {
            value: 0.0,
            flagged: false,
        };
    }
    let (a, b) = (address(g, u, 64), address(g, v, 64));
    let k = common_prefix(&a, &b);
    if k == 0 {
        let hull = match (a.first(), b.first()) {
            (Some(&s), Some(&t)) => {
                let (i, j) = (g.interval(s), g.interval(t));
                i.hi.max(j.hi) - i.lo.min(j.lo)
            }
            _ => (u - v).abs(),
        };
        return MetricD {
            value: hull,
            flagged: true,
        };
    }
    MetricD {
        value: word_diam(g, &a[..k]),
        flagged: false,
    }
}

/// Inverse branch `v = γ_w` of `σ^N` along an admissible word.
#[derive(Clone, Debug)]
pub struct Section {
    pub word: Vec<Symbol>,
    pub matrix: [f64; 4],
}

impl Section {
    pub fn apply(&self, x: f64) -> f64 {
        mobius_f64(&self.matrix, x)
    }

    /// `τ_N(v(x)) = -log |v'(x)|`.
    pub fn roof(&self, x: f64) -> f64 {
        2.0 * (self.matrix[2] * x + self.matrix[3]).abs().ln()
    }

    fn roof_derivative(&self, x: f64) -> f64 {
        2.0 * self.matrix[2] / (self.matrix[2] * x + self.matrix[3])
    }

    /// Lipschitz constant on `I_t`: `max |v'|` at the interval ends.
    pub fn lipschitz_on(&self, g: &SchottkyGroup, t: Symbol) -> f64 {
        let i = g.interval(t);
        [i.lo, i.hi]
            .iter()
            .map(|&x| (self.matrix[2] * x + self.matrix[3]).powi(-2))
            .fold(0.0, f64::max)
    }
}

/// Two sections of `σ^N` with disjoint images.
#[derive(Clone, Debug)]
pub struct SectionPair {
    pub v1: Section,
    pub v2: Section,
}

impl SectionPair {
    /// Symbols `t` whose interval both sections accept.
    pub fn domain(&self, g: &SchottkyGroup) -> Vec<Symbol> {
        let (a, b) = (*self.v1.word.last().unwrap(), *self.v2.word.last().unwrap());
        (0..g.alphabet_size())
            .filter(|&t| t != inverse_symbol(a) && t != inverse_symbol(b))
            .collect()
    }

    /// `Δ(u) = τ_N(v2 u) - τ_N(v1 u)`.
    pub fn delta(&self, u: f64) -> f64 {
        self.v2.roof(u) - self.v1.roof(u)
    }

    fn delta_derivative(&self, u: f64) -> f64 {
        self.v2.roof_derivative(u) - self.v1.roof_derivative(u)
    }
}

pub fn branch_sections(g: &SchottkyGroup, n: usize, w1: &[Symbol], w2: &[Symbol]) -> Result<SectionPair> {
    let ok = |w: &[Symbol]| w.len() == n && n > 0 && is_admissible(w) && w.iter().all(|&s| s < g.alphabet_size());
    if !ok(w1) || !ok(w2) || w1[0] == w2[0] {
        return Err(Error::InadmissibleWord);
    }
    let pair = SectionPair {
        v1: Section {
            word: w1.to_vec(),
            matrix: g.word_matrix(w1).entries_f64(),
        },
        v2: Section {
            word: w2.to_vec(),
            matrix: g.word_matrix(w2).entries_f64(),
        },
    };
    if pair.domain(g).is_empty() {
        return Err(Error::InadmissibleWord);
    }
    Ok(pair)
}

/// `Δ(u) - Δ(u')` and the quotient `|Δ(u) - Δ(u')| / |u - u'|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemporalDistance {
    pub difference: f64,
    pub ratio: f64,
}

pub fn temporal_distance(pair: &SectionPair, u: f64, v: f64) -> TemporalDistance {
    let difference = pair.delta(u) - pair.delta(v);
    let ratio = if u == v { 0.0 } else { difference.abs() / (u - v).abs() };
    TemporalDistance { difference, ratio }
}

/// Limit points with addresses `w t t t ...` for every word `w` of length
/// `depth` starting in `I_s`, `tails` choices of `t` per word.
fn limit_grid(g: &SchottkyGroup, s: Symbol, depth: usize, tails: usize) -> Vec<(Vec<Symbol>, f64)> {
    let mut out = Vec::new();
    for w in admissible_words(g, depth) {
        if w[0] != s {
            continue;
        }
        for t in g.successors(*w.last().unwrap()).take(tails) {
            let mut a = w.clone();
            a.push(t);
            out.push((a, push_point(g, &w, periodic_point(g, &[t]))));
        }
    }
    out
}

/// `δ0 = 2 inf |Δ(u) - Δ(u')| / |u - u'|` over grid pairs of `I_t ∩ Λ`
/// at least a quarter of the hull of `I_t ∩ Λ` apart.
pub fn nli_constant(g: &SchottkyGroup, pair: &SectionPair, t: Symbol, depth: usize, tails: usize) -> f64 {
    let pts = limit_grid(g, t, depth, tails);
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let sep = (hi - lo) / 4.0;
    let mut best = f64::INFINITY;
    for (i, (_, u)) in pts.iter().enumerate() {
        for (_, v) in &pts[i + 1..] {
            if (u - v).abs() >= sep {
                best = best.min(temporal_distance(pair, *u, *v).ratio);
            }
        }
    }
    2.0 * best
}

/// For every target interval, the pair of `N`-words with distinct first
/// symbols maximizing `min |Δ'|` over the limit points of the interval.
pub fn best_sections(g: &SchottkyGroup, n: usize) -> Vec<SectionPair> {
    let words = admissible_words(g, n);
    (0..g.alphabet_size())
        .map(|t| {
            let pts: Vec<f64> = limit_grid(g, t, 3, 1).into_iter().map(|p| p.1).collect();
            let usable: Vec<&Vec<Symbol>> =
                words.iter().filter(|w| *w.last().unwrap() != inverse_symbol(t)).collect();
            let mut best: Option<(f64, SectionPair)> = None;
            for (i, a) in usable.iter().enumerate() {
                for b in &usable[i + 1..] {
                    let Ok(pair) = branch_sections(g, n, a, b) else { continue };
                    let score = pts.iter().map(|&u| pair.delta_derivative(u).abs()).fold(f64::INFINITY, f64::min);
                    if best.as_ref().is_none_or(|(s, _)| score > *s) {
                        best = Some((score, pair));
                    }
                }
            }
            best.expect("two branches into every interval").1
        })
        .collect()
}

/// Measured hyperbolicity, distortion and nesting constants of the coding.
#[derive(Clone, Debug)]
pub struct DolgopyatConstants {
    pub c0: f64,
    pub kappa: f64,
    pub kappa1: f64,
    /// Bound on `sup |f^{(a)}| + sup |τ|` and on their one-cylinder
    /// Lipschitz quotients, `|a| ≤ a0'`.
    pub t0: f64,
    /// Measured distortion constant of the branch weights.
    pub a0: f64,
    pub rho: f64,
    pub p0: usize,
    pub p1: usize,
    pub r0: f64,
    pub delta0: f64,
    pub n1: usize,
}

/// `a0'` of the one-cylinder bounds.
pub const A_RANGE: f64 = 0.05;

struct Potential<'a> {
    th: &'a Thermo,
    a: f64,
    log_lambda: f64,
}

impl Potential<'_> {
    /// `f^{(a)}` at the limit point with the given address.
    fn f(&self, addr: &[Symbol], u: f64) -> f64 {
        let g = self.th.g();
        let su = push_point(g, &addr[1..addr.len() - 1], periodic_point(g, &[addr[addr.len() - 1]]));
        let tau = crate::coding::roof_unchecked(g, u, addr[0]);
        -(self.th.delta + self.a) * tau + self.th.h0(addr[0], u).ln() - self.th.h0(addr[1], su).ln() - self.log_lambda
    }
}

impl DolgopyatConstants {
    pub fn measure(th: &Thermo) -> Result<Self> {
        let g = th.g();
        let hc = hyperbolicity_constants(g, 6);
        let potentials: Vec<Potential> = [-A_RANGE, 0.0, A_RANGE]
            .iter()
            .map(|&a| {
                Ok(Potential {
                    th,
                    a,
                    log_lambda: th.gibbs_at(a)?.lambda.ln(),
                })
            })
            .collect::<Result<_>>()?;
        let k = g.alphabet_size();
        let grids: Vec<Vec<(Vec<Symbol>, f64)>> = (0..k).map(|s| limit_grid(g, s, 4, 1)).collect();

        // T0: sup bound and one-cylinder Lipschitz quotient
        let mut t0 = 0.0f64;
        for p in &potentials {
            let mut fsup = 0.0f64;
            let mut tsup = 0.0f64;
            for (s, grid) in grids.iter().enumerate() {
                let vals: Vec<(f64, f64, f64)> = grid
                    .iter()
                    .map(|(a, u)| (*u, p.f(a, *u), crate::coding::roof_unchecked(g, *u, s)))
                    .collect();
                for (i, x) in vals.iter().enumerate() {
                    fsup = fsup.max(x.1.abs());
                    tsup = tsup.max(x.2.abs());
                    for y in &vals[i + 1..] {
                        t0 = t0.max(((x.1 - y.1).abs() + (x.2 - y.2).abs()) / (x.0 - y.0).abs());
                    }
                }
            }
            t0 = t0.max(fsup + tsup);
        }

        // distortion of e^{f_m} along branches, m ≤ 3
        let mut a0 = 1.0 / hc.c0;
        let coarse: Vec<Vec<(Vec<Symbol>, f64)>> = (0..k).map(|s| limit_grid(g, s, 3, 1)).collect();
        for m in 1..=3 {
            for v in admissible_words(g, m) {
                let mat = g.word_matrix(&v).entries_f64();
                let last = *v.last().unwrap();
                for (t, grid) in coarse.iter().enumerate() {
                    if t == inverse_symbol(last) {
                        continue;
                    }
                    let vals: Vec<(&[Symbol], f64, f64, f64)> = grid
                        .iter()
                        .map(|(addr, u)| {
                            let den = mat[2] * u + mat[3];
                            let tau = 2.0 * den.abs().ln();
                            let y = mobius_f64(&mat, *u);
                            // f_m at a = 0 up to the constant m log λ
                            let f = -th.delta * tau + th.h0(v[0], y).ln() - th.h0(t, *u).ln();
                            (addr.as_slice(), *u, f, tau)
                        })
                        .collect();
                    for (i, x) in vals.iter().enumerate() {
                        for y in &vals[i + 1..] {
                            let df = (x.2 - y.2).abs();
                            let dt = (x.3 - y.3).abs();
                            let d = word_diam(g, &x.0[..common_prefix(x.0, y.0)]);
                            let growth = (df + A_RANGE * dt).exp();
                            a0 = a0.max(growth / hc.c0).max(growth * (df + A_RANGE * dt + dt) / d);
                        }
                    }
                }
            }
        }

        // nesting: ρ the smallest child ratio, p0 the depth after which all
        // descendants are below it
        let mut rho = 1.0f64;
        for n in 1..=4 {
            for w in admissible_words(g, n) {
                let d = word_diam(g, &w);
                for t in g.successors(*w.last().unwrap()) {
                    let mut c = w.clone();
                    c.push(t);
                    rho = rho.min(word_diam(g, &c) / d);
                }
            }
        }
        let mut p0 = 1;
        loop {
            let mut worst = 0.0f64;
            for n in 1..=3 {
                for w in admissible_words(g, n) {
                    let d = word_diam(g, &w);
                    let mut desc = vec![w.clone()];
                    for _ in 0..p0 {
                        desc = desc
                            .iter()
                            .flat_map(|u| {
                                g.successors(*u.last().unwrap()).map(move |t| {
                                    let mut c = u.clone();
                                    c.push(t);
                                    c
                                })
                            })
                            .collect();
                    }
                    worst = worst.max(desc.iter().map(|u| word_diam(g, u)).fold(0.0, f64::max) / d);
                }
            }
            if worst <= rho {
                break;
            }
            p0 += 1;
        }
        let mut p1 = 2;
        while 0.25 > 0.5 - 2.0 * rho.powi(p1 as i32 - 1) {
            p1 += 1;
        }
        let r0 = 0.45 * g.intervals().iter().map(|i| i.diam()).fold(f64::INFINITY, f64::min);
        Ok(Self {
            c0: hc.c0,
            kappa: hc.kappa,
            kappa1: hc.kappa1,
            t0,
            a0,
            rho,
            p0,
            p1,
            r0,
            delta0: f64::NAN,
            n1: 0,
        })
    }
}

/// Working constants of the construction.
#[derive(Clone, Debug)]
pub struct DolgopyatConfig {
    pub e: f64,
    pub n: usize,
    pub eps1: f64,
    /// `None` selects the angle-based default per family.
    pub mu: Option<f64>,
    /// Chebyshev nodes per leaf.
    pub leaf_order: usize,
    pub a: f64,
    /// Depth offset of the sub-cylinders, `p0 p1`.
    pub offset: usize,
}

impl DolgopyatConfig {
    /// `E`, `N`, `ε1` with the shapes of their defining inequalities, fed by
    /// the measured constants; `N` honours the cone terms `E/(4 c0)` and
    /// `6 A0` only.
    pub fn defaults(c: &DolgopyatConstants) -> Self {
        let e = 1.01 * (2.0 * c.a0 * c.t0 / (c.kappa - 1.0)).max(4.0 * c.a0).max(1.0);
        let target = (e / (4.0 * c.c0)).max(6.0 * c.a0);
        let mut n = c.n1 + 1;
        while c.kappa.powi(n as i32) <= target {
            n += 1;
        }
        let k1 = c.kappa1.powi(c.n1 as i32);
        let eps1 = 0.9
            * (c.c0 * c.c0 * (c.kappa - 1.0) / (16.0 * c.t0 * k1))
                .min(c.c0 * c.r0 / k1)
                .min(c.delta0 / 2.0);
        Self {
            e,
            n,
            eps1,
            mu: None,
            leaf_order: 3,
            a: 0.0,
            offset: c.p0 * c.p1,
        }
    }
}

/// Maximal cylinders `C_m` of diameter at most `ε1/|b|` and their
/// sub-cylinders `D_j` at a fixed depth offset.
#[derive(Clone, Debug)]
pub struct CylinderFamily {
    pub b: f64,
    pub eps1: f64,
    pub offset: usize,
    pub members: Vec<Vec<Symbol>>,
    /// Leaves `D_j`, grouped by member.
    pub subcylinders: Vec<Vec<Symbol>>,
    pub member_of: Vec<usize>,
}

pub fn build_family(g: &SchottkyGroup, b: f64, eps1: f64, offset: usize) -> CylinderFamily {
    let cut = eps1 / b.abs();
    let mut members = Vec::new();
    let mut stack: Vec<Vec<Symbol>> = (0..g.alphabet_size()).rev().map(|s| vec![s]).collect();
    while let Some(w) = stack.pop() {
        if word_diam(g, &w) <= cut {
            members.push(w);
        } else {
            let last = *w.last().unwrap();
            let kids: Vec<Symbol> = g.successors(last).collect();
            for &t in kids.iter().rev() {
                let mut c = w.clone();
                c.push(t);
                stack.push(c);
            }
        }
    }
    let mut subcylinders = Vec::new();
    let mut member_of = Vec::new();
    for (m, w) in members.iter().enumerate() {
        let mut layer = vec![w.clone()];
        for _ in 0..offset {
            layer = layer
                .iter()
                .flat_map(|u| {
                    g.successors(*u.last().unwrap()).map(move |t| {
                        let mut c = u.clone();
                        c.push(t);
                        c
                    })
                })
                .collect();
        }
        member_of.extend(std::iter::repeat_n(m, layer.len()));
        subcylinders.extend(layer);
    }
    CylinderFamily {
        b,
        eps1,
        offset,
        members,
        subcylinders,
        member_of,
    }
}

/// Structural checks of a family.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilyCheck {
    pub maximal: bool,
    pub min_length: usize,
    /// Sub-cylinders outside `[ρ^{p0 p1 + 1} ε1/|b|, ρ^{p1} ε1/|b|]`.
    pub diameter_violations: usize,
    pub covers: bool,
}

pub fn check_family(g: &SchottkyGroup, fam: &CylinderFamily, c: &DolgopyatConstants, cover_depth: usize) -> FamilyCheck {
    let cut = fam.eps1 / fam.b.abs();
    let maximal = fam
        .members
        .iter()
        .all(|w| word_diam(g, w) <= cut && (w.len() == 1 || word_diam(g, &w[..w.len() - 1]) > cut));
    let min_length = fam.members.iter().map(|w| w.len()).min().unwrap_or(0);
    let lo = c.rho.powi((c.p0 * c.p1 + 1) as i32) * cut;
    let hi = c.rho.powi(c.p1 as i32) * cut;
    let diameter_violations = fam
        .subcylinders
        .iter()
        .filter(|w| {
            let d = word_diam(g, w);
            d < lo || d > hi
        })
        .count();
    let depth = cover_depth.max(fam.members.iter().map(|w| w.len()).max().unwrap_or(1));
    let set: std::collections::HashSet<&[Symbol]> = fam.members.iter().map(|w| w.as_slice()).collect();
    let covers = admissible_words(g, depth)
        .iter()
        .all(|w| (1..=w.len()).any(|k| set.contains(&w[..k])));
    FamilyCheck {
        maximal,
        min_length,
        diameter_violations,
        covers,
    }
}

/// One branch of `σ^N` evaluated at a leaf point.
#[derive(Clone, Copy, Debug)]
struct Entry {
    target: u32,
    z: f64,
    /// `e^{f_N^{(a)}}` at the image.
    weight: f64,
    tau: f64,
}

/// Relative rounding floor of node values. Leaves reach diameters near
/// `1e-23`, where `E |b| D` is far below one ulp, so cone quotients ignore
/// relative differences under this size.
pub const RESOLUTION: f64 = 1e-13;

/// Choice of damped sub-cylinders: `0` none, `1` or `2` the damped section.
pub type Selection = Vec<u8>;

/// Discretized Dolgopyat setting at one frequency `b`.
pub struct DolgopyatModel<'a> {
    pub th: &'a Thermo,
    pub constants: DolgopyatConstants,
    pub config: DolgopyatConfig,
    pub family: CylinderFamily,
    pub sections: Vec<SectionPair>,
    /// N-words by the interval they act on, and the index of each section in it.
    branch_words: Vec<Vec<Vec<Symbol>>>,
    section_branch: Vec<[usize; 2]>,
    leaf_index: HashMap<Vec<Symbol>, u32>,
    cheb: Chebyshev,
    /// Pulled-back node coordinates per symbol.
    ynodes: Vec<Vec<f64>>,
    /// Node addresses beyond the leaf's last symbol, per symbol.
    yaddr: Vec<Vec<Vec<Symbol>>>,
    /// Absolute node coordinates, leaf-major.
    pub x: Vec<f64>,
    /// `h0` at the nodes.
    h0: Vec<f64>,
    pub quad: Vec<f64>,
    entries: Vec<Entry>,
    pub mu: f64,
    /// Smallest `|b| · sep Δ` over the members.
    pub angle: f64,
    /// Largest `|b| · spread Δ` over the members.
    pub spread: f64,
    branch_mats: Vec<Vec<[f64; 4]>>,
    /// Target leaf and pulled-back map per leaf and branch.
    routes: Vec<(u32, [f64; 4])>,
    b: f64,
    lambda_n: f64,
}

impl<'a> DolgopyatModel<'a> {
    pub fn new(th: &'a Thermo, constants: &DolgopyatConstants, config: &DolgopyatConfig, b: f64) -> Result<Self> {
        let g = th.g();
        let k = g.alphabet_size();
        let n = config.n;
        let sections = best_sections(g, n);
        let family = build_family(g, b, config.eps1, config.offset);
        let all = admissible_words(g, n);
        let branch_words: Vec<Vec<Vec<Symbol>>> = (0..k)
            .map(|t| all.iter().filter(|w| *w.last().unwrap() != inverse_symbol(t)).cloned().collect())
            .collect();
        let section_branch: Vec<[usize; 2]> = (0..k)
            .map(|t| {
                let pos = |w: &[Symbol]| branch_words[t].iter().position(|v| v == w).expect("section is a branch");
                [pos(&sections[t].v1.word), pos(&sections[t].v2.word)]
            })
            .collect();
        let leaf_index: HashMap<Vec<Symbol>, u32> =
            family.subcylinders.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        let p = config.leaf_order;
        let cheb = Chebyshev::new(p);
        let ynodes: Vec<Vec<f64>> = (0..k)
            .map(|s| {
                let i = g.interval(s);
                cheb.nodes.iter().map(|&t| i.mid() + 0.5 * i.diam() * t).collect()
            })
            .collect();
        let yaddr: Vec<Vec<Vec<Symbol>>> =
            ynodes.iter().map(|ys| ys.iter().map(|&y| address(g, y, 8)).collect()).collect();
        let lambda = if config.a == 0.0 { th.gibbs.lambda } else { th.gibbs_at(config.a)?.lambda };
        let lambda_n = lambda.powi(n as i32);
        let mut model = Self {
            th,
            constants: constants.clone(),
            config: config.clone(),
            family,
            sections,
            branch_words,
            section_branch,
            leaf_index,
            cheb,
            ynodes,
            yaddr,
            x: Vec::new(),
            h0: Vec::new(),
            quad: Vec::new(),
            entries: Vec::new(),
            mu: 0.0,
            angle: 0.0,
            spread: 0.0,
            branch_mats: Vec::new(),
            routes: Vec::new(),
            b,
            lambda_n,
        };
        model.build_nodes();
        model.build_routes();
        model.build_quadrature();
        model.build_entries();
        model.build_mu();
        Ok(model)
    }

    pub fn leaves(&self) -> usize {
        self.family.subcylinders.len()
    }

    pub fn nodes(&self) -> usize {
        self.x.len()
    }

    pub fn order(&self) -> usize {
        self.config.leaf_order
    }

    fn leaf_point(&self, leaf: usize, y: f64) -> f64 {
        let w = &self.family.subcylinders[leaf];
        push_point(self.th.g(), &w[..w.len() - 1], y)
    }

    fn build_nodes(&mut self) {
        let p = self.order();
        let mut x = Vec::with_capacity(self.leaves() * p);
        for (leaf, w) in self.family.subcylinders.iter().enumerate() {
            let last = *w.last().unwrap();
            for j in 0..p {
                x.push(self.leaf_point(leaf, self.ynodes[last][j]));
            }
        }
        self.h0 = x
            .iter()
            .enumerate()
            .map(|(i, &xi)| self.th.h0(self.family.subcylinders[i / p][0], xi))
            .collect();
        self.x = x;
    }

    /// Node weights of `ν` inside each leaf, pulled back through the leaf
    /// branch onto the collocation nodes of its last interval.
    fn build_quadrature(&mut self) {
        let th = self.th;
        let g = th.g();
        let p = self.order();
        let big = th.order();
        let delta = th.delta;
        let mut basis = vec![vec![vec![0.0; p]; big]; g.alphabet_size()];
        for s in 0..g.alphabet_size() {
            for (kk, b) in basis[s].iter_mut().enumerate() {
                self.unit_basis(s, th.disc.node(s, kk), b);
            }
        }
        let mut quad = vec![0.0; self.nodes()];
        for (leaf, w) in self.family.subcylinders.iter().enumerate() {
            let last = *w.last().unwrap();
            let m = g.word_matrix(&w[..w.len() - 1]).entries_f64();
            for kk in 0..big {
                let y = th.disc.node(last, kk);
                let den = m[2] * y + m[3];
                let wt = th.gibbs.nu[last * big + kk] * (den * den).powf(-delta) * th.h0(w[0], mobius_f64(&m, y));
                for j in 0..p {
                    quad[leaf * p + j] += wt * basis[last][kk][j];
                }
            }
        }
        self.quad = quad;
    }

    fn unit_basis(&self, s: Symbol, y: f64, out: &mut [f64]) {
        let i = self.th.g().interval(s);
        self.cheb.basis((2.0 * y - i.lo - i.hi) / (i.hi - i.lo), out);
    }

    /// Leaf containing the image of leaf `leaf` under the branch `v`, and
    /// the word acting on the pulled-back coordinate there.
    fn target(&self, leaf: usize, v: &[Symbol]) -> (u32, Vec<Symbol>) {
        let w = &self.family.subcylinders[leaf];
        let mut full = v.to_vec();
        full.extend_from_slice(w);
        for len in 1..=full.len() {
            if let Some(&t) = self.leaf_index.get(&full[..len]) {
                let rest = full[len - 1..full.len() - 1].to_vec();
                return (t, rest);
            }
        }
        unreachable!("leaves tile the coding space")
    }

    fn build_routes(&mut self) {
        let g = self.th.g();
        self.branch_mats = self
            .branch_words
            .iter()
            .map(|ws| ws.iter().map(|w| g.word_matrix(w).entries_f64()).collect())
            .collect();
        let mut routes = Vec::with_capacity(self.leaves() * self.branches_per_node());
        for leaf in 0..self.leaves() {
            let first = self.family.subcylinders[leaf][0];
            for v in &self.branch_words[first] {
                let (t, rest) = self.target(leaf, v);
                routes.push((t, g.word_matrix(&rest).entries_f64()));
            }
        }
        self.routes = routes;
    }

    /// Branch number `vi` at the leaf point `y`, `x` its absolute position.
    fn branch(&self, leaf: usize, vi: usize, y: f64, x: f64) -> Entry {
        let first = self.family.subcylinders[leaf][0];
        let vm = &self.branch_mats[first][vi];
        let (target, rest) = &self.routes[leaf * self.branches_per_node() + vi];
        let tau = 2.0 * (vm[2] * x + vm[3]).abs().ln();
        let z = mobius_f64(rest, y);
        let weight = (-(self.th.delta + self.config.a) * tau).exp() * self.interp(&self.h0, *target, z)
            / (self.interp(&self.h0, leaf as u32, y) * self.lambda_n);
        Entry {
            target: *target,
            z,
            weight,
            tau,
        }
    }

    fn build_entries(&mut self) {
        let p = self.order();
        let nb = self.branches_per_node();
        let mut entries = Vec::with_capacity(self.nodes() * nb);
        for leaf in 0..self.leaves() {
            let last = *self.family.subcylinders[leaf].last().unwrap();
            for j in 0..p {
                let (y, x) = (self.ynodes[last][j], self.x[leaf * p + j]);
                entries.extend((0..nb).map(|vi| self.branch(leaf, vi, y, x)));
            }
        }
        self.entries = entries;
    }

    fn branches_per_node(&self) -> usize {
        self.branch_words[0].len()
    }

    /// `μ = min(1/4, c²/256)` with `c` the smallest separation, over the
    /// members, of `b Δ` between two of its sub-cylinders.
    fn build_mu(&mut self) {
        let g = self.th.g();
        let mut angle = f64::INFINITY;
        let mut spread = 0.0f64;
        let mut cur = usize::MAX;
        let (mut lo_max, mut hi_min, mut all_lo, mut all_hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        let mut flush = |lo_max: f64, hi_min: f64, all_lo: f64, all_hi: f64| {
            angle = angle.min(self.b.abs() * (hi_min - lo_max).max(0.0));
            spread = spread.max(self.b.abs() * (all_hi - all_lo));
        };
        for (leaf, w) in self.family.subcylinders.iter().enumerate() {
            let m = self.family.member_of[leaf];
            if m != cur {
                if cur != usize::MAX {
                    flush(lo_max, hi_min, all_lo, all_hi);
                }
                cur = m;
                (lo_max, hi_min, all_lo, all_hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
            }
            let pair = &self.sections[w[0]];
            let last = *w.last().unwrap();
            let vals: Vec<f64> = g
                .successors(last)
                .map(|t| pair.delta(push_point(g, &w[..w.len() - 1], push_point(g, &[last], periodic_point(g, &[t])))))
                .collect();
            let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            lo_max = lo_max.min(hi);
            hi_min = hi_min.max(lo);
            all_lo = all_lo.min(lo);
            all_hi = all_hi.max(hi);
        }
        if cur != usize::MAX {
            flush(lo_max, hi_min, all_lo, all_hi);
        }
        self.angle = angle;
        self.spread = spread;
        self.mu = self.config.mu.unwrap_or_else(|| (0.9 * 0.25f64).min(angle * angle / 256.0));
    }

    #[inline]
    fn interp(&self, values: &[f64], leaf: u32, z: f64) -> f64 {
        let p = self.order();
        let last = *self.family.subcylinders[leaf as usize].last().unwrap();
        let mut b = [0.0; 16];
        self.unit_basis(last, z, &mut b[..p]);
        b[..p].iter().zip(&values[leaf as usize * p..(leaf as usize + 1) * p]).map(|(a, v)| a * v).sum()
    }

    fn interp_vec(&self, values: &[C64], gdim: usize, leaf: u32, z: f64, out: &mut [C64]) {
        let p = self.order();
        let last = *self.family.subcylinders[leaf as usize].last().unwrap();
        let mut b = [0.0; 16];
        self.unit_basis(last, z, &mut b[..p]);
        out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
        for (j, bj) in b[..p].iter().enumerate() {
            let row = &values[(leaf as usize * p + j) * gdim..(leaf as usize * p + j + 1) * gdim];
            for (o, v) in out.iter_mut().zip(row) {
                *o += v * *bj;
            }
        }
    }

    /// `β_J` at the image of leaf `leaf` under branch number `v`.
    fn beta(&self, sel: Option<&Selection>, leaf: usize, v: usize) -> f64 {
        let Some(sel) = sel else { return 1.0 };
        let damped = sel[leaf];
        if damped == 0 {
            return 1.0;
        }
        let first = self.family.subcylinders[leaf][0];
        if self.section_branch[first][damped as usize - 1] == v {
            1.0 - self.mu
        } else {
            1.0
        }
    }

    /// `L̂^N_{a0}(β h)` at the nodes; `sel = None` is the undamped operator.
    pub fn transfer(&self, h: &[f64], sel: Option<&Selection>) -> Vec<f64> {
        let p = self.order();
        let nb = self.branches_per_node();
        (0..self.nodes())
            .map(|node| {
                let leaf = node / p;
                self.entries[node * nb..(node + 1) * nb]
                    .iter()
                    .enumerate()
                    .map(|(v, e)| e.weight * self.beta(sel, leaf, v) * self.interp(h, e.target, e.z))
                    .sum()
            })
            .collect()
    }

    /// `𝒩_{J,a} h`, rejecting selections that miss a member.
    pub fn dolgopyat_apply(&self, h: &[f64], sel: &Selection) -> Result<Vec<f64>> {
        if let Some(m) = self.first_uncovered(sel) {
            return Err(Error::NotDense(m));
        }
        Ok(self.transfer(h, Some(sel)))
    }

    /// A member containing no selected sub-cylinder.
    pub fn first_uncovered(&self, sel: &Selection) -> Option<usize> {
        let mut covered = vec![false; self.family.members.len()];
        for (leaf, &s) in sel.iter().enumerate() {
            if s != 0 {
                covered[self.family.member_of[leaf]] = true;
            }
        }
        covered.iter().position(|c| !c)
    }

    /// `β_J` at the nodes, for range checks.
    pub fn beta_values(&self, sel: &Selection) -> Vec<f64> {
        let p = self.order();
        let nb = self.branches_per_node();
        (0..self.nodes())
            .map(|node| {
                let leaf = node / p;
                (0..nb).map(|v| self.beta(Some(sel), leaf, v)).fold(1.0, f64::min)
            })
            .collect()
    }

    /// Element permutation of a branch word on `C^{G_q}`.
    fn perms(&self, mg: &ModGroup, first: Symbol) -> Vec<Vec<u32>> {
        self.branch_words[first]
            .iter()
            .map(|v| {
                let ci = mg.inv(mg.word_image(v));
                (0..mg.order() as u32).map(|x| mg.mul(x, ci)).collect()
            })
            .collect()
    }

    /// `M̂^N_{ab,q} H` at the nodes, `H` node-major with `|G_q|` entries each.
    pub fn transfer_vec(&self, mg: &ModGroup, h: &[C64]) -> Vec<C64> {
        let gd = mg.order();
        let p = self.order();
        let nb = self.branches_per_node();
        let perms: Vec<Vec<Vec<u32>>> = (0..self.th.g().alphabet_size()).map(|s| self.perms(mg, s)).collect();
        let mut out = vec![C64::new(0.0, 0.0); self.nodes() * gd];
        let mut tmp = vec![C64::new(0.0, 0.0); gd];
        for node in 0..self.nodes() {
            let first = self.family.subcylinders[node / p][0];
            let o = &mut out[node * gd..(node + 1) * gd];
            for (v, e) in self.entries[node * nb..(node + 1) * nb].iter().enumerate() {
                let w = C64::from_polar(e.weight, self.b * e.tau);
                self.interp_vec(h, gd, e.target, e.z, &mut tmp);
                for (gamma, og) in o.iter_mut().enumerate() {
                    *og += w * tmp[perms[first][v][gamma] as usize];
                }
            }
        }
        out
    }

    /// Branch data at an arbitrary leaf point, for pointwise checks.
    fn branches_at(&self, leaf: usize, y: f64) -> Vec<Entry> {
        let x = self.leaf_point(leaf, y);
        (0..self.branches_per_node()).map(|vi| self.branch(leaf, vi, y, x)).collect()
    }

    /// `∫ |h|² dν`.
    pub fn norm2_sq(&self, h: &[f64]) -> f64 {
        h.iter().zip(&self.quad).map(|(v, w)| w * v * v).sum()
    }

    /// `∫ |H|² dν` for vector values.
    pub fn norm2_sq_vec(&self, h: &[C64], gd: usize) -> f64 {
        self.quad
            .iter()
            .enumerate()
            .map(|(i, w)| w * h[i * gd..(i + 1) * gd].iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum()
    }

    /// Full coding address of node `j` of `leaf`, truncated.
    fn node_address(&self, leaf: usize, j: usize) -> Vec<Symbol> {
        let w = &self.family.subcylinders[leaf];
        let mut a = w[..w.len() - 1].to_vec();
        a.extend_from_slice(&self.yaddr[*w.last().unwrap()][j]);
        a
    }

    /// Smallest `E` with `|h(u) - h(u')| ≤ E h(u') D(u, u') + ϵ h(u')` over
    /// node pairs in a common base interval, `ϵ` the [`RESOLUTION`]. Pairs in
    /// different children of a cylinder `C` have `D = diam C`, so only the
    /// extremes per child matter.
    pub fn cone_constant(&self, h: &[f64]) -> Result<f64> {
        if h.iter().any(|&v| v.is_nan() || v <= 0.0) {
            return Err(Error::NonPositive);
        }
        let g = self.th.g();
        let p = self.order();
        let mut order: Vec<usize> = (0..self.leaves()).collect();
        order.sort_by(|&a, &b| self.family.subcylinders[a].cmp(&self.family.subcylinders[b]));
        let mut best = 0.0f64;
        // within leaves
        for leaf in 0..self.leaves() {
            for i in 0..p {
                for j in 0..p {
                    if i == j {
                        continue;
                    }
                    let (a, b) = (self.node_address(leaf, i), self.node_address(leaf, j));
                    let d = word_diam(g, &a[..common_prefix(&a, &b)]);
                    let excess = (h[leaf * p + i] - h[leaf * p + j]).abs() / h[leaf * p + j] - RESOLUTION;
                    best = best.max(excess.max(0.0) / d);
                }
            }
        }
        self.cone_rec(g, h, &order, 0, &mut best);
        Ok(best)
    }

    /// Extremes of `h` over the leaves in `idx` (sharing a prefix of length
    /// `k`), updating `best` with cross-child quotients.
    fn cone_rec(&self, g: &SchottkyGroup, h: &[f64], idx: &[usize], k: usize, best: &mut f64) -> (f64, f64) {
        let p = self.order();
        let words = &self.family.subcylinders;
        if idx.len() == 1 && words[idx[0]].len() <= k {
            let vals = &h[idx[0] * p..(idx[0] + 1) * p];
            return (vals.iter().copied().fold(f64::MIN, f64::max), vals.iter().copied().fold(f64::MAX, f64::min));
        }
        let mut kids = Vec::new();
        let mut start = 0;
        for i in 1..=idx.len() {
            if i == idx.len() || words[idx[i]][k] != words[idx[start]][k] {
                kids.push(self.cone_rec(g, h, &idx[start..i], k + 1, best));
                start = i;
            }
        }
        if k > 0 && kids.len() > 1 {
            let d = word_diam(g, &words[idx[0]][..k]);
            for (i, a) in kids.iter().enumerate() {
                for (j, b) in kids.iter().enumerate() {
                    if i != j {
                        *best = best.max((a.0 / b.1 - 1.0 - RESOLUTION).max(0.0) / d);
                    }
                }
            }
        }
        kids.iter().fold((f64::MIN, f64::MAX), |(mx, mn), c| (mx.max(c.0), mn.min(c.1)))
    }

    pub fn cone_check(&self, h: &[f64], e: f64) -> Result<bool> {
        Ok(self.cone_constant(h)? <= e)
    }

    /// `χ^{(1)}, χ^{(2)}` at the leaf point `y` of `leaf`.
    fn chi(&self, mg: &ModGroup, h: &[f64], hv: &[C64], leaf: usize, y: f64) -> (f64, f64) {
        let gd = mg.order();
        let first = self.family.subcylinders[leaf][0];
        let x = self.leaf_point(leaf, y);
        let mut sum = vec![C64::new(0.0, 0.0); gd];
        let mut tmp = vec![C64::new(0.0, 0.0); gd];
        let mut den = [0.0; 2];
        for (i, &vb) in self.section_branch[first].iter().enumerate() {
            let e = self.branch(leaf, vb, y, x);
            let c = mg.inv(mg.word_image(&self.branch_words[first][vb]));
            let w = C64::from_polar(e.weight, self.b * e.tau);
            self.interp_vec(hv, gd, e.target, e.z, &mut tmp);
            for (gamma, s) in sum.iter_mut().enumerate() {
                *s += w * tmp[mg.mul(gamma as u32, c) as usize];
            }
            den[i] = e.weight * self.interp(h, e.target, e.z);
        }
        let num = sum.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        (num / ((1.0 - self.mu) * den[0] + den[1]), num / (den[0] + (1.0 - self.mu) * den[1]))
    }

    /// Coarse grid on a leaf: limit points `u_last t t t ...`.
    fn coarse_grid(&self, leaf: usize) -> Vec<f64> {
        let g = self.th.g();
        let last = *self.family.subcylinders[leaf].last().unwrap();
        g.successors(last).map(|t| push_point(g, &[last], periodic_point(g, &[t]))).collect()
    }

    /// Finer grid: limit points `u_last t t' t' ...`.
    fn fine_grid(&self, leaf: usize) -> Vec<f64> {
        let g = self.th.g();
        let last = *self.family.subcylinders[leaf].last().unwrap();
        g.successors(last)
            .flat_map(|t| g.successors(t).map(move |t2| push_point(g, &[last, t], periodic_point(g, &[t2]))))
            .collect()
    }

    /// The selection rule: `(1, j)` where `χ^{(1)} ≤ 1` on the grid of
    /// `Ẑ_j`, otherwise `(2, j)` where `χ^{(2)} ≤ 1`.
    pub fn select(&self, mg: &ModGroup, h: &[f64], hv: &[C64]) -> Selection {
        (0..self.leaves())
            .map(|leaf| {
                let grid = self.coarse_grid(leaf);
                let chis: Vec<(f64, f64)> = grid.iter().map(|&y| self.chi(mg, h, hv, leaf, y)).collect();
                if chis.iter().all(|c| c.0 <= 1.0) {
                    1
                } else if chis.iter().all(|c| c.1 <= 1.0) {
                    2
                } else {
                    0
                }
            })
            .collect()
    }

    /// Smallest `𝒩h - |M̂^N H|` relative to `𝒩h` over the fine grid, with
    /// the leaf where it occurs.
    pub fn domination_margin(&self, mg: &ModGroup, h: &[f64], hv: &[C64], sel: &Selection) -> (f64, usize) {
        let gd = mg.order();
        let perms: Vec<Vec<Vec<u32>>> = (0..self.th.g().alphabet_size()).map(|s| self.perms(mg, s)).collect();
        let mut worst = (f64::INFINITY, 0);
        let mut tmp = vec![C64::new(0.0, 0.0); gd];
        let mut acc = vec![C64::new(0.0, 0.0); gd];
        for leaf in 0..self.leaves() {
            let first = self.family.subcylinders[leaf][0];
            for y in self.fine_grid(leaf) {
                let br = self.branches_at(leaf, y);
                let mut dom = 0.0;
                acc.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
                for (v, e) in br.iter().enumerate() {
                    dom += e.weight * self.beta(Some(sel), leaf, v) * self.interp(h, e.target, e.z);
                    let w = C64::from_polar(e.weight, self.b * e.tau);
                    self.interp_vec(hv, gd, e.target, e.z, &mut tmp);
                    for (gamma, a) in acc.iter_mut().enumerate() {
                        *a += w * tmp[perms[first][v][gamma] as usize];
                    }
                }
                let m = acc.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                let margin = (dom - m) / dom;
                if margin < worst.0 {
                    worst = (margin, leaf);
                }
            }
        }
        worst
    }

    /// Fraction of `χ` grid points where neither `χ` is at most one.
    pub fn chi_both_exceed(&self, mg: &ModGroup, h: &[f64], hv: &[C64]) -> f64 {
        let mut bad = 0usize;
        let mut total = 0usize;
        for leaf in 0..self.leaves() {
            for y in self.coarse_grid(leaf) {
                let c = self.chi(mg, h, hv, leaf, y);
                total += 1;
                if c.0 > 1.0 && c.1 > 1.0 {
                    bad += 1;
                }
            }
        }
        bad as f64 / total as f64
    }
}

/// Cone-function and vector test pair for one audit trial.
pub struct TrialFunctions {
    pub h: Vec<f64>,
    pub hv: Vec<C64>,
    /// Analytic bound on the `d`-Lipschitz constant of `H / h`.
    pub phase_lipschitz: f64,
}

/// `h = exp(A Σ r_k sin(ω_k x + φ_k))` and `H = h ρ e^{iφ} v` with
/// `ρ ∈ [1/2, 1]`, saturated (`ρ = 1`) in half of the trials.
pub fn sample_trial(model: &DolgopyatModel, gd: usize, seed: u64) -> TrialFunctions {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = rng.gen_range(0.2..2.0);
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.gen_range(-1.0..1.0) / 3.0, rng.gen_range(0.5..4.0), rng.gen_range(0.0..6.3)))
        .collect();
    let saturated = rng.gen_bool(0.5);
    let (ra, rw, rp) = (rng.gen_range(0.0..0.25), rng.gen_range(0.5..3.0), rng.gen_range(0.0..6.3));
    let b = model.b.abs().max(1.0);
    let (pa, pw, pp, p0) = (rng.gen_range(0.0..3.0), rng.gen_range(0.5..b), rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3));
    let mut v: Vec<C64> = (0..gd).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let vn = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|z| *z /= vn);
    let h: Vec<f64> = model
        .x
        .iter()
        .map(|&x| (amp * waves.iter().map(|(r, w, p)| r * (w * x + p).sin()).sum::<f64>()).exp())
        .collect();
    let mut hv = Vec::with_capacity(h.len() * gd);
    for (&x, &hx) in model.x.iter().zip(&h) {
        let rho = if saturated { 1.0 } else { 1.0 - ra * (1.0 + (rw * x + rp).sin()) };
        let phase = p0 + pa * (pw * x + pp).sin();
        let s = C64::from_polar(hx * rho, phase);
        hv.extend(v.iter().map(|z| z * s));
    }
    TrialFunctions {
        h,
        hv,
        phase_lipschitz: if saturated { 0.0 } else { ra * rw } + pa * pw,
    }
}

/// Outcome of one audit trial.
#[derive(Clone, Debug)]
pub struct TrialReport {
    pub seed: u64,
    /// `E_min(h) + Lip(H/h) ≤ E|b|`: the hypotheses on `(h, H)` hold.
    pub hypotheses: bool,
    pub dense: bool,
    pub cone_in: f64,
    pub cone_out: f64,
    pub cone_ok: bool,
    /// `∫ |𝒩h|² / ∫ |h|²`.
    pub contraction: f64,
    /// The same ratio with `β = 1`.
    pub undamped: f64,
    pub domination_margin: f64,
    pub passed: bool,
    pub diagnostic: Option<String>,
}

/// Audit summary at one frequency.
#[derive(Clone, Debug)]
pub struct AuditReport {
    pub b: f64,
    pub q: u64,
    pub e: f64,
    pub n: usize,
    pub eps1: f64,
    pub mu: f64,
    pub angle: f64,
    pub members: usize,
    pub leaves: usize,
    pub trials: Vec<TrialReport>,
    pub failure_rate: f64,
}

pub fn run_trial(model: &DolgopyatModel, mg: &ModGroup, seed: u64) -> TrialReport {
    let eb = model.config.e * model.b.abs();
    let tf = sample_trial(model, mg.order(), seed);
    let cone_in = model.cone_constant(&tf.h).unwrap_or(f64::INFINITY);
    let hypotheses = cone_in + tf.phase_lipschitz <= eb;
    let sel = model.select(mg, &tf.h, &tf.hv);
    let uncovered = model.first_uncovered(&sel);
    let mut report = TrialReport {
        seed,
        hypotheses,
        dense: uncovered.is_none(),
        cone_in,
        cone_out: f64::NAN,
        cone_ok: false,
        contraction: f64::NAN,
        undamped: f64::NAN,
        domination_margin: f64::NAN,
        passed: false,
        diagnostic: None,
    };
    if let Some(m) = uncovered {
        report.diagnostic = Some(format!("no damped sub-cylinder in member {m} {:?}", model.family.members[m]));
        return report;
    }
    let out = model.transfer(&tf.h, Some(&sel));
    let plain = model.transfer(&tf.h, None);
    let base = model.norm2_sq(&tf.h);
    report.contraction = model.norm2_sq(&out) / base;
    report.undamped = model.norm2_sq(&plain) / base;
    report.cone_out = model.cone_constant(&out).unwrap_or(f64::INFINITY);
    report.cone_ok = report.cone_out <= eb;
    let (margin, leaf) = model.domination_margin(mg, &tf.h, &tf.hv, &sel);
    report.domination_margin = margin;
    let dominated = margin >= -1e-12;
    report.passed = hypotheses && report.cone_ok && dominated && report.contraction < 1.0;
    if !report.passed {
        let mut why = Vec::new();
        if !hypotheses {
            why.push(format!("input outside the cone: {cone_in:.3e} + {:.3e} > {eb:.3e}", tf.phase_lipschitz));
        }
        if !report.cone_ok {
            why.push(format!("output cone constant {:.3e} > {eb:.3e}", report.cone_out));
        }
        if !dominated {
            let w = &model.family.subcylinders[leaf];
            why.push(format!(
                "domination fails by {margin:.3e} in member {} sub-cylinder {w:?}",
                model.family.member_of[leaf]
            ));
        }
        if report.contraction >= 1.0 {
            why.push(format!("contraction factor {}", report.contraction));
        }
        report.diagnostic = Some(why.join("; "));
    }
    report
}

pub fn contraction_audit(model: &DolgopyatModel, mg: &ModGroup, trials: usize, seed: u64) -> AuditReport {
    let reports: Vec<TrialReport> = (0..trials as u64).map(|t| run_trial(model, mg, seed.wrapping_add(t))).collect();
    let failures = reports.iter().filter(|r| !r.passed).count();
    AuditReport {
        b: model.b,
        q: mg.q,
        e: model.config.e,
        n: model.config.n,
        eps1: model.config.eps1,
        mu: model.mu,
        angle: model.angle,
        members: model.family.members.len(),
        leaves: model.leaves(),
        failure_rate: failures as f64 / trials.max(1) as f64,
        trials: reports,
    }
}

/// The scheme `h_{l+1} = 𝒩_{J_l} h_l` from `h_0 = ‖H‖_{1,b}`, checking
/// `|M̂^{lN} H| ≤ h_l` at the nodes.
#[derive(Clone, Debug)]
pub struct IteratedAudit {
    pub norms: Vec<f64>,
    /// Smallest `h_l - |M̂^{lN} H|` relative to `h_l` over the nodes.
    pub margins: Vec<f64>,
    pub factor: f64,
}

pub fn iterated_audit(model: &DolgopyatModel, mg: &ModGroup, seed: u64, steps: usize) -> IteratedAudit {
    let gd = mg.order();
    let tf = sample_trial(model, gd, seed);
    let sup = (0..model.nodes())
        .map(|i| tf.hv[i * gd..(i + 1) * gd].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let lip = model.cone_constant(&tf.h).unwrap_or(0.0) * tf.h.iter().copied().fold(0.0, f64::max) + tf.phase_lipschitz * sup;
    let start = sup + lip / model.b.abs().max(1.0);
    let mut h = vec![start; model.nodes()];
    let mut hv = tf.hv;
    let mut norms = vec![model.norm2_sq(&h).sqrt()];
    let mut margins = Vec::new();
    for _ in 0..steps {
        let sel = model.select(mg, &h, &hv);
        h = model.transfer(&h, Some(&sel));
        hv = model.transfer_vec(mg, &hv);
        norms.push(model.norm2_sq(&h).sqrt());
        let m = (0..model.nodes())
            .map(|i| {
                let a = hv[i * gd..(i + 1) * gd].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                (h[i] - a) / h[i]
            })
            .fold(f64::INFINITY, f64::min);
        margins.push(m);
    }
    let factor = (norms[norms.len() - 1] / norms[0]).powf(1.0 / steps.max(1) as f64);
    IteratedAudit { norms, margins, factor }
}

/// Constants with `δ0` measured from the chosen sections.
pub fn measure_all(th: &Thermo, n: Option<usize>) -> Result<(DolgopyatConstants, DolgopyatConfig)> {
    let mut c = DolgopyatConstants::measure(th)?;
    let g = th.g();
    let probe = DolgopyatConfig::defaults(&DolgopyatConstants { delta0: 1.0, ..c.clone() });
    let n = n.unwrap_or(probe.n);
    let secs = best_sections(g, n);
    c.delta0 = (0..g.alphabet_size())
        .map(|t| nli_constant(g, &secs[t], t, 3, 1))
        .fold(f64::INFINITY, f64::min);
    let mut cfg = DolgopyatConfig::defaults(&c);
    cfg.n = n;
    Ok((c, cfg))
}
