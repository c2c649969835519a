//! `SL2(Z/qZ)` machinery and the congruence transfer operator acting on
//! functions `Û → C^{G_q}`: the group closure of the reduced generators, the
//! matrix-free operator, new/old projections, norms, spectral-radius
//! estimates, the flattening measure of long transfer-operator sums and the
//! spectral gap of the Cayley graph.

use std::collections::{HashMap, HashSet};

use num_integer::Integer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arith::{reduce_mod, ModElement};
use crate::coding::{admissible_words, is_admissible};
use crate::linalg::{arnoldi_dominant, symmetric_eigenvalues, DenseMatrix, C64};
use crate::schottky::{SchottkyGroup, Symbol};
use crate::thermo::{limit_point, Thermo};
use crate::{Error, Result};

/// Multiplication tables are cached up to this group order.
pub const TABLE_LIMIT: usize = 5000;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Prime factorisation by trial division.
pub fn prime_factors(mut q: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= q {
        if q.is_multiple_of(p) {
            out.push(p);
            while q.is_multiple_of(p) {
                q /= p;
            }
        }
        p += 1;
    }
    if q > 1 {
        out.push(q);
    }
    out
}

pub fn divisors(q: u64) -> Vec<u64> {
    (1..=q).filter(|d| q.is_multiple_of(*d)).collect()
}

pub fn is_square_free(q: u64) -> bool {
    prime_factors(q).iter().all(|p| !q.is_multiple_of(p * p))
}

fn moebius(n: u64) -> i64 {
    let ps = prime_factors(n);
    if !is_square_free(n) {
        0
    } else if ps.len().is_multiple_of(2) {
        1
    } else {
        -1
    }
}

/// `|SL2(Z/qZ)| = q³ ∏_{p|q} (1 - p⁻²)`.
pub fn sl2_order(q: u64) -> usize {
    let mut n = q * q * q;
    for p in prime_factors(q) {
        n = n / (p * p) * (p * p - 1);
    }
    n as usize
}

/// Fibers of the reduction to a divisor level.
#[derive(Clone, Debug)]
struct Level {
    d: u64,
    class: Vec<u32>,
    size: Vec<usize>,
}

enum Index {
    Dense(Vec<u32>),
    Hash(HashMap<[u64; 4], u32>),
}

/// The subgroup of `SL2(Z/qZ)` generated by the reduced generators.
pub struct ModGroup {
    pub q: u64,
    pub elements: Vec<ModElement>,
    pub admissible: bool,
    index: Index,
    table: Option<Vec<u32>>,
    inverse: Vec<u32>,
    /// Element index of each symbol matrix.
    pub cocycle_images: Vec<u32>,
    /// `right[s][γ] = γ · c_s⁻¹`.
    right: Vec<Vec<u32>>,
    levels: Vec<Level>,
}

impl std::fmt::Debug for ModGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModGroup")
            .field("q", &self.q)
            .field("order", &self.elements.len())
            .field("admissible", &self.admissible)
            .finish()
    }
}

#[inline]
fn code(q: u64, e: &[u64; 4]) -> usize {
    (((e[0] * q + e[1]) * q + e[2]) * q + e[3]) as usize
}

impl ModGroup {
    /// Closure of the generator reductions; never fails, inadmissible levels
    /// carry `admissible = false`.
    pub fn generated(g: &SchottkyGroup, q: u64) -> Self {
        let q = q.max(1);
        let k = g.alphabet_size();
        let gens: Vec<ModElement> = (0..k).map(|s| reduce_mod(g.symbol_matrix(s), q)).collect();
        let dense = q.pow(4) <= 1 << 24;
        let mut dense_idx = if dense { vec![u32::MAX; q.pow(4) as usize] } else { Vec::new() };
        let mut hash_idx = HashMap::new();
        let mut elements = vec![ModElement::identity(q)];
        let mut insert = |e: &ModElement, n: u32| -> bool {
            if dense {
                let c = code(q, &e.e);
                if dense_idx[c] != u32::MAX {
                    return false;
                }
                dense_idx[c] = n;
                true
            } else {
                hash_idx.insert(e.e, n).is_none()
            }
        };
        insert(&elements[0], 0);
        let mut head = 0;
        while head < elements.len() {
            let x = elements[head];
            for s in &gens {
                let y = x.mul(s);
                if insert(&y, elements.len() as u32) {
                    elements.push(y);
                }
            }
            head += 1;
        }
        let index = if dense { Index::Dense(dense_idx) } else { Index::Hash(hash_idx) };
        let mut mg = Self {
            q,
            admissible: elements.len() == sl2_order(q),
            elements,
            index,
            table: None,
            inverse: Vec::new(),
            cocycle_images: Vec::new(),
            right: Vec::new(),
            levels: Vec::new(),
        };
        let n = mg.order();
        mg.inverse = (0..n).map(|i| mg.index_of(&mg.elements[i].inverse()).unwrap()).collect();
        mg.cocycle_images = gens.iter().map(|e| mg.index_of(e).unwrap()).collect();
        if n <= TABLE_LIMIT {
            let mut t = vec![0u32; n * n];
            for i in 0..n {
                for j in 0..n {
                    t[i * n + j] = mg.index_of(&mg.elements[i].mul(&mg.elements[j])).unwrap();
                }
            }
            mg.table = Some(t);
        }
        mg.right = (0..k)
            .map(|s| {
                let ci = mg.inverse[mg.cocycle_images[s] as usize];
                (0..n as u32).map(|x| mg.mul(x, ci)).collect()
            })
            .collect();
        mg.levels = divisors(q)
            .into_iter()
            .map(|d| {
                let mut ids: HashMap<[u64; 4], u32> = HashMap::new();
                let mut size = Vec::new();
                let class = mg
                    .elements
                    .iter()
                    .map(|e| {
                        let next = ids.len() as u32;
                        let c = *ids.entry(e.reduce(d).e).or_insert(next);
                        if c as usize == size.len() {
                            size.push(0);
                        }
                        size[c as usize] += 1;
                        c
                    })
                    .collect();
                Level { d, class, size }
            })
            .collect();
        mg
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn index_of(&self, e: &ModElement) -> Option<u32> {
        match &self.index {
            Index::Dense(v) => {
                let i = v[code(self.q, &e.e)];
                (i != u32::MAX).then_some(i)
            }
            Index::Hash(h) => h.get(&e.e).copied(),
        }
    }

    #[inline]
    pub fn mul(&self, i: u32, j: u32) -> u32 {
        match &self.table {
            Some(t) => t[i as usize * self.order() + j as usize],
            None => self
                .index_of(&self.elements[i as usize].mul(&self.elements[j as usize]))
                .expect("closed under multiplication"),
        }
    }

    #[inline]
    pub fn inv(&self, i: u32) -> u32 {
        self.inverse[i as usize]
    }

    /// Permutation `γ ↦ γ · c_s⁻¹` of the group axis.
    pub fn right_action(&self, s: Symbol) -> &[u32] {
        &self.right[s]
    }

    /// Element index of a word's cocycle `c(w_0) ⋯ c(w_{n-1})`.
    pub fn word_image(&self, word: &[Symbol]) -> u32 {
        word.iter().fold(0, |x, &s| self.mul(x, self.cocycle_images[s]))
    }

    fn level(&self, d: u64) -> Result<&Level> {
        self.levels.iter().find(|l| l.d == d).ok_or(Error::NotDivisor(d, self.q))
    }
}

/// Admissible level: the reduced generators generate all of `SL2(Z/qZ)`.
pub fn build_modgroup(g: &SchottkyGroup, q: u64) -> Result<ModGroup> {
    let mg = ModGroup::generated(g, q);
    if mg.admissible {
        Ok(mg)
    } else {
        Err(Error::NotAdmissible {
            q,
            order: mg.order(),
        })
    }
}

/// Function `Û → C^{G_q}` sampled at the collocation nodes, node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorFunction {
    pub nodes: usize,
    pub group: usize,
    pub values: Vec<C64>,
}

impl VectorFunction {
    pub fn zeros(nodes: usize, group: usize) -> Self {
        Self {
            nodes,
            group,
            values: vec![ZERO; nodes * group],
        }
    }

    /// `f(x) ⊗ v` for node values `f` and a group vector `v`.
    pub fn tensor(f: &[C64], v: &[C64]) -> Self {
        let mut out = Self::zeros(f.len(), v.len());
        for (i, fi) in f.iter().enumerate() {
            for (o, vj) in out.row_mut(i).iter_mut().zip(v) {
                *o = fi * vj;
            }
        }
        out
    }

    /// Deterministic random complex entries in the unit box.
    pub fn random(nodes: usize, group: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            nodes,
            group,
            values: (0..nodes * group)
                .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect(),
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[C64] {
        &self.values[i * self.group..(i + 1) * self.group]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [C64] {
        &mut self.values[i * self.group..(i + 1) * self.group]
    }

    /// Subtracts the γ-mean at every node, landing in `𝒲`.
    pub fn remove_group_mean(&mut self) {
        let g = self.group as f64;
        for i in 0..self.nodes {
            let r = self.row_mut(i);
            let m: C64 = r.iter().sum::<C64>() / g;
            r.iter_mut().for_each(|z| *z -= m);
        }
    }

    /// Largest γ-mean modulus over the nodes.
    pub fn max_group_mean(&self) -> f64 {
        (0..self.nodes)
            .map(|i| (self.row(i).iter().sum::<C64>() / self.group as f64).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        self.values.iter().zip(&o.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

/// The normalized congruence operator at `(a, b)` for one level, stored as
/// the scalar collocation matrix plus the per-symbol group permutations.
pub struct CongruenceOperator<'a> {
    pub mg: &'a ModGroup,
    pub a: f64,
    pub b: f64,
    pub lambda_a: f64,
    pub matrix: DenseMatrix,
    order: usize,
}

impl<'a> CongruenceOperator<'a> {
    pub fn new(th: &Thermo, mg: &'a ModGroup, a: f64, b: f64) -> Result<Self> {
        let lambda_a = if a == 0.0 { th.gibbs.lambda } else { th.gibbs_at(a)?.lambda };
        Ok(Self {
            mg,
            a,
            b,
            lambda_a,
            matrix: th.normalized_matrix(a, b, lambda_a),
            order: th.order(),
        })
    }

    pub fn nodes(&self) -> usize {
        self.matrix.n
    }

    /// `(M̂H)(x, γ) = Σ_y w(x, y) H(y, γ c(y)⁻¹)`: column blocks of the
    /// collocation matrix belong to one branch symbol each, so the operator is
    /// the scalar matrix applied after permuting every block's group axis.
    pub fn apply_into(&self, h: &VectorFunction, out: &mut VectorFunction, scratch: &mut Vec<C64>) -> Result<()> {
        let n = self.nodes();
        let g = self.mg.order();
        for v in [h, &*out] {
            if v.nodes != n || v.group != g {
                return Err(Error::DimensionMismatch {
                    expected: n * g,
                    got: v.nodes * v.group,
                });
            }
        }
        scratch.resize(n * g, ZERO);
        for col in 0..n {
            let perm = self.mg.right_action(col / self.order);
            let src = h.row(col);
            let dst = &mut scratch[col * g..(col + 1) * g];
            for (d, &p) in dst.iter_mut().zip(perm) {
                *d = src[p as usize];
            }
        }
        for i in 0..n {
            let row = out.row_mut(i);
            row.iter_mut().for_each(|z| *z = ZERO);
            for col in 0..n {
                let w = self.matrix.data[i * n + col];
                if w == ZERO {
                    continue;
                }
                for (o, x) in row.iter_mut().zip(&scratch[col * g..(col + 1) * g]) {
                    *o += w * x;
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, h: &VectorFunction) -> Result<VectorFunction> {
        let mut out = VectorFunction::zeros(h.nodes, h.group);
        self.apply_into(h, &mut out, &mut Vec::new())?;
        Ok(out)
    }
}

/// One application of `M̂_{ab,q}`.
pub fn apply_m(th: &Thermo, mg: &ModGroup, a: f64, b: f64, h: &VectorFunction) -> Result<VectorFunction> {
    CongruenceOperator::new(th, mg, a, b)?.apply(h)
}

/// Average over the fibers of the reduction to level `d`.
pub fn average_to_level(mg: &ModGroup, d: u64, h: &VectorFunction) -> Result<VectorFunction> {
    let lv = mg.level(d)?;
    let mut out = h.clone();
    let mut acc = vec![ZERO; lv.size.len()];
    for i in 0..h.nodes {
        acc.iter_mut().for_each(|z| *z = ZERO);
        for (x, &c) in h.row(i).iter().zip(&lv.class) {
            acc[c as usize] += x;
        }
        for (a, &s) in acc.iter_mut().zip(&lv.size) {
            *a /= s as f64;
        }
        for (o, &c) in out.row_mut(i).iter_mut().zip(&lv.class) {
            *o = acc[c as usize];
        }
    }
    Ok(out)
}

/// `e_{q,q'} = Σ_{d | q'} μ(q'/d) E_d` with `E_d` the level-`d` average:
/// the component new at level `q'`.
pub fn project_new(mg: &ModGroup, q_new: u64, h: &VectorFunction) -> Result<VectorFunction> {
    if q_new == 0 || !mg.q.is_multiple_of(q_new) {
        return Err(Error::NotDivisor(q_new, mg.q));
    }
    let mut out = VectorFunction::zeros(h.nodes, h.group);
    for d in divisors(q_new) {
        let mu = moebius(q_new / d);
        if mu == 0 {
            continue;
        }
        let e = average_to_level(mg, d, h)?;
        for (o, x) in out.values.iter_mut().zip(&e.values) {
            *o += *x * mu as f64;
        }
    }
    Ok(out)
}

#[inline]
fn herm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `sup_x |H(x)| + max(1,|b|)⁻¹ sup_{x≠x'} |H(x) - H(x')| / |x - x'|` over the
/// node pairs, `|·|` the Hermitian norm on `C^{G_q}`.
pub fn norm_1b(nodes: &[f64], h: &VectorFunction, b: f64) -> f64 {
    let sup = (0..h.nodes).map(|i| herm(h.row(i))).fold(0.0, f64::max);
    let mut lip = 0.0f64;
    let mut diff = vec![ZERO; h.group];
    for i in 0..h.nodes {
        for j in i + 1..h.nodes {
            for ((d, x), y) in diff.iter_mut().zip(h.row(i)).zip(h.row(j)) {
                *d = x - y;
            }
            lip = lip.max(herm(&diff) / (nodes[i] - nodes[j]).abs());
        }
    }
    sup + lip / b.abs().max(1.0)
}

/// `(∫ |H|² dν)^{1/2}` with the discrete equilibrium weights.
pub fn norm_2(weights: &[f64], h: &VectorFunction) -> f64 {
    (0..h.nodes)
        .map(|i| weights[i] * h.row(i).iter().map(|z| z.norm_sqr()).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Spectral radius of `M̂` on the invariant complement of the constants.
#[derive(Clone, Debug)]
pub struct SpectralEstimate {
    pub q: u64,
    pub radius: f64,
    /// Arnoldi eigenvalue of largest modulus.
    pub eigenvalue: C64,
    pub residual: f64,
    /// `‖M̂^m H‖₂` for `m = 0..=iters` from a random unit `H`.
    pub curve: Vec<f64>,
    pub matvecs: usize,
}

/// Projection onto `𝒲` (zero γ-mean); on the trivial level, where `𝒲` is
/// empty, onto `ker ν` instead so the leading eigenvalue 1 is removed.
fn new_space_projector(weights: Vec<f64>, q: u64) -> impl Fn(&mut VectorFunction) {
    move |h: &mut VectorFunction| {
        if q == 1 {
            let m: C64 = h.values.iter().zip(&weights).map(|(z, w)| z * *w).sum();
            h.values.iter_mut().for_each(|z| *z -= m);
        } else {
            h.remove_group_mean();
        }
    }
}

/// Restarted Arnoldi for the radius and a power-iteration decay curve of
/// `iters` steps, both inside `𝒲`.
pub fn spectral_radius_new(th: &Thermo, mg: &ModGroup, a: f64, b: f64, iters: usize) -> Result<SpectralEstimate> {
    if !mg.admissible {
        return Err(Error::NotAdmissible {
            q: mg.q,
            order: mg.order(),
        });
    }
    let op = CongruenceOperator::new(th, mg, a, b)?;
    let (n, g) = (op.nodes(), mg.order());
    let weights = th.nu_weights();
    let project = new_space_projector(weights.clone(), mg.q);
    let mut start = VectorFunction::random(n, g, 0x5eed ^ mg.q);
    project(&mut start);

    let mut scratch = Vec::new();
    let mut x = VectorFunction::zeros(n, g);
    let mut y = VectorFunction::zeros(n, g);
    let mut xp = VectorFunction::zeros(n, g);
    let dom = arnoldi_dominant(
        |src, dst| {
            x.values.copy_from_slice(src);
            op.apply_into(&x, &mut y, &mut scratch).expect("dimensions fixed");
            dst.copy_from_slice(&y.values);
        },
        |v| {
            xp.values.copy_from_slice(v);
            project(&mut xp);
            v.copy_from_slice(&xp.values);
        },
        start.values.clone(),
        40,
        30,
        1e-10,
    );

    let s0 = norm_2(&weights, &start);
    let mut h = start;
    h.values.iter_mut().for_each(|z| *z /= s0);
    let mut curve = vec![1.0];
    let mut scale = 1.0;
    let mut out = VectorFunction::zeros(n, g);
    let mut scratch = Vec::new();
    for _ in 0..iters {
        op.apply_into(&h, &mut out, &mut scratch)?;
        project(&mut out);
        std::mem::swap(&mut h, &mut out);
        let nrm = norm_2(&weights, &h);
        scale *= nrm;
        curve.push(scale);
        if nrm == 0.0 {
            break;
        }
        h.values.iter_mut().for_each(|z| *z /= nrm);
    }
    Ok(SpectralEstimate {
        q: mg.q,
        radius: dom.value.norm(),
        eigenvalue: dom.value,
        residual: dom.residual,
        curve,
        matvecs: dom.matvecs + iters,
    })
}

/// Slope of `log curve` over the steps `from..`, by least squares.
pub fn log_slope(curve: &[f64], from: usize) -> f64 {
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .enumerate()
        .skip(from)
        .filter(|(_, &c)| c > 0.0)
        .map(|(i, &c)| (i as f64, c.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>()
}

/// Complex measure on `G_q`, indexed like `ModGroup::elements`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMeasure {
    pub weights: Vec<C64>,
}

impl ComplexMeasure {
    pub fn dirac(order: usize, at: u32) -> Self {
        let mut weights = vec![ZERO; order];
        weights[at as usize] = C64::new(1.0, 0.0);
        Self { weights }
    }

    pub fn uniform(order: usize) -> Self {
        Self {
            weights: vec![C64::new(1.0 / order as f64, 0.0); order],
        }
    }

    pub fn norm_1(&self) -> f64 {
        self.weights.iter().map(|z| z.norm()).sum()
    }

    pub fn norm_inf(&self) -> f64 {
        self.weights.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn total(&self) -> C64 {
        self.weights.iter().sum()
    }

    /// `(μ * φ)(x) = Σ_h μ(h) φ(h⁻¹ x)`.
    pub fn convolve(&self, mg: &ModGroup, phi: &[C64]) -> Vec<C64> {
        let n = mg.order();
        let mut out = vec![ZERO; n];
        for (h, w) in self.weights.iter().enumerate() {
            if *w == ZERO {
                continue;
            }
            let hi = mg.inv(h as u32);
            for (x, o) in out.iter_mut().enumerate() {
                *o += w * phi[mg.mul(hi, x as u32) as usize];
            }
        }
        out
    }

    /// Adjoint of `φ ↦ μ * φ`: `(μ* ψ)(y) = Σ_h conj μ(h) ψ(h y)`.
    fn convolve_adjoint(&self, mg: &ModGroup, psi: &[C64]) -> Vec<C64> {
        let n = mg.order();
        let mut out = vec![ZERO; n];
        for (h, w) in self.weights.iter().enumerate() {
            if *w == ZERO {
                continue;
            }
            let wc = w.conj();
            for (y, o) in out.iter_mut().enumerate() {
                *o += wc * psi[mg.mul(h as u32, y as u32) as usize];
            }
        }
        out
    }
}

/// Length split of the flattening sums: prefix of length `r`, middles of
/// length `m`, total `n = r + m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Split {
    pub n: usize,
    pub m: usize,
    pub r: usize,
}

impl Split {
    /// `m` middles with `n = d0·m + 1`, so `n/(2 d0) < m < n/d0`.
    pub fn with_middle(m: usize, d0: usize) -> Self {
        let n = d0 * m + 1;
        Self { n, m, r: n - m }
    }
}

/// Largest `m` for which the reduced words of length `≤ m` stay distinct
/// modulo `q`, at least 1.
pub fn injectivity_radius(g: &SchottkyGroup, mg: &ModGroup, cap: usize) -> usize {
    let mut m = 0;
    loop {
        let next = m + 1;
        let Ok(ball) = crate::schottky::word_ball(g, next, cap) else {
            break;
        };
        let mut seen = HashSet::new();
        if !ball.iter().all(|w| seen.insert(mg.word_image(&w.symbols))) {
            break;
        }
        m = next;
    }
    m.max(1)
}

/// The measure of one transfer-operator block and its a priori bound.
#[derive(Clone, Debug)]
pub struct Flattening {
    pub mu: ComplexMeasure,
    /// `c · e^{f_r(prefix, ζ)} · e^{η}` with `η` the prefix distortion.
    pub bound: f64,
    /// `sup_{n, x} L̂_a^n 1 (x)`, at least 1.
    pub c: f64,
    pub eta: f64,
    pub split: Split,
}

/// `sup` over nodes and `n ≤ steps` of `L̂_a^n 1`.
pub fn partition_constant(th: &Thermo, a: f64, steps: usize) -> Result<f64> {
    let lambda_a = if a == 0.0 { th.gibbs.lambda } else { th.gibbs_at(a)?.lambda };
    let m = th.normalized_matrix(a, 0.0, lambda_a);
    let mut v = vec![C64::new(1.0, 0.0); m.n];
    let mut w = v.clone();
    let mut best = 1.0f64;
    for _ in 0..steps {
        m.apply(&v, &mut w);
        std::mem::swap(&mut v, &mut w);
        best = best.max(v.iter().map(|z| z.re).fold(0.0, f64::max));
    }
    Ok(best)
}

/// Grid points per interval for the oscillation of `log h0`.
const H0_SAMPLES: usize = 129;

/// Bound on `|f^{(a)}_r(w ω) - f^{(a)}_r(w ω')|` over prefixes `w` and tails
/// `ω, ω'` admissible after `w`. The roof part is `-2 (δ + a) log|c y + d|`
/// for the prefix matrix, whose pole lies in `I_{l⁻¹}` for `l` the last
/// prefix symbol while `y` ranges over the intervals allowed after `l`; the
/// `log h0` part is bounded by twice its oscillation over all intervals.
pub fn prefix_distortion(th: &Thermo, a: f64) -> f64 {
    let g = th.g();
    let k = g.alphabet_size();
    let mut roof = 0.0f64;
    for l in 0..k {
        let pole = g.interval(crate::schottky::inverse_symbol(l));
        let (mut near, mut far) = (f64::INFINITY, 0.0f64);
        for t in g.successors(l) {
            let i = g.interval(t);
            let gap = if i.lo > pole.hi { i.lo - pole.hi } else { pole.lo - i.hi };
            near = near.min(gap);
            far = far.max((i.hi - pole.lo).abs()).max((pole.hi - i.lo).abs());
        }
        roof = roof.max(2.0 * (far / near).ln());
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in 0..k {
        let i = g.interval(s);
        for j in 0..H0_SAMPLES {
            let v = th.h0(s, i.lo + i.diam() * j as f64 / (H0_SAMPLES - 1) as f64).ln();
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (th.delta + a) * roof + 2.0 * (hi - lo)
}

/// The measure `μ(γ) = Σ e^{(f^{(a)}_n + i b τ_n)(prefix, middle, x)}` over
/// the admissible middles of length `m` whose cocycle `c_{m+1}` over the last
/// prefix symbol and the middle equals `γ`. `x` is the address of the base
/// point, realised as the limit point of `x` followed by its last symbol
/// repeated.
#[allow(clippy::too_many_arguments)]
pub fn build_mu(
    th: &Thermo,
    mg: &ModGroup,
    a: f64,
    b: f64,
    x: &[Symbol],
    prefix: &[Symbol],
    split: Split,
    cap: usize,
) -> Result<Flattening> {
    if !mg.admissible {
        return Err(Error::NotAdmissible {
            q: mg.q,
            order: mg.order(),
        });
    }
    let g = th.g();
    let k = g.alphabet_size();
    if prefix.len() != split.r || split.r == 0 || x.is_empty() || !is_admissible(prefix) || !is_admissible(x) {
        return Err(Error::InadmissibleWord);
    }
    if (k - 1).pow(split.m as u32) > cap {
        return Err(Error::ResourceLimit(format!("{}^{} middles", k - 1, split.m)));
    }
    let lambda_a = if a == 0.0 { th.gibbs.lambda } else { th.gibbs_at(a)?.lambda };
    let x0 = limit_point(g, x, *x.last().unwrap());
    let h_x = th.h0(x[0], x0);
    let s = C64::new(th.delta + a, -b);
    let last = *prefix.last().unwrap();
    let mut weights = vec![ZERO; mg.order()];
    let mut word: Vec<Symbol> = prefix.to_vec();
    for mid in admissible_words(g, split.m) {
        word.truncate(split.r);
        word.extend_from_slice(&mid);
        word.push(x[0]);
        if !is_admissible(&word) {
            continue;
        }
        word.pop();
        let mm = g.word_matrix(&word).entries_f64();
        let den = mm[2] * x0 + mm[3];
        let y = crate::arith::mobius_f64(&mm, x0);
        // e^{-s τ_n(y)} = |γ_w'(x)|^s
        let w = C64::new(den * den, 0.0).powc(-s) * th.h0(word[0], y) / (h_x * lambda_a.powi(split.n as i32));
        let mut cw = vec![last];
        cw.extend_from_slice(&mid);
        weights[mg.word_image(&cw) as usize] += w;
    }
    let c = partition_constant(th, a, 40)?;
    let z = crate::coding::periodic_point(g, &[last]);
    let pm = g.word_matrix(prefix).entries_f64();
    let den = pm[2] * z + pm[3];
    let fr = (den * den).powf(-(th.delta + a)) * th.h0(prefix[0], crate::arith::mobius_f64(&pm, z))
        / (th.h0(last, z) * lambda_a.powi(split.r as i32));
    let eta = prefix_distortion(th, a);
    Ok(Flattening {
        mu: ComplexMeasure { weights },
        bound: c * fr * eta.exp(),
        c,
        eta,
        split,
    })
}

/// Named subgroup of a prime level with all of its conjugates.
#[derive(Clone, Debug)]
pub struct SubgroupFamily {
    pub name: String,
    pub order: usize,
    pub conjugates: Vec<Vec<u32>>,
}

fn closure(mg: &ModGroup, gens: &[u32], cap: usize) -> Option<Vec<u32>> {
    let mut seen: HashSet<u32> = HashSet::from([0]);
    let mut out = vec![0u32];
    let mut head = 0;
    while head < out.len() {
        let x = out[head];
        for &s in gens {
            let y = mg.mul(x, s);
            if seen.insert(y) {
                out.push(y);
                if out.len() > cap {
                    return None;
                }
            }
        }
        head += 1;
    }
    out.sort_unstable();
    Some(out)
}

fn element_order(mg: &ModGroup, x: u32) -> usize {
    let mut y = x;
    let mut n = 1;
    while y != 0 {
        y = mg.mul(y, x);
        n += 1;
    }
    n
}

fn conjugates(mg: &ModGroup, sub: &[u32]) -> Vec<Vec<u32>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for x in 0..mg.order() as u32 {
        let xi = mg.inv(x);
        let mut c: Vec<u32> = sub.iter().map(|&h| mg.mul(mg.mul(x, h), xi)).collect();
        c.sort_unstable();
        if seen.insert(c.clone()) {
            out.push(c);
        }
    }
    out
}

/// Maximal-subgroup families of `SL2(p)`: the Borel subgroup, the
/// normalizers of the split and non-split tori and the exceptional
/// binary polyhedral groups found by a seeded closure search.
pub fn subgroup_catalog(mg: &ModGroup) -> Result<Vec<SubgroupFamily>> {
    let p = mg.q;
    if prime_factors(p) != vec![p] || !mg.admissible {
        return Err(Error::CatalogUnavailable(p));
    }
    let idx = |e: [u64; 4]| mg.index_of(&ModElement { q: p, e }).expect("full group");
    let mut fams = Vec::new();
    let mut push = |name: &str, sub: Vec<u32>| {
        if sub.len() < mg.order() {
            fams.push(SubgroupFamily {
                name: name.to_string(),
                order: sub.len(),
                conjugates: conjugates(mg, &sub),
            });
        }
    };
    let borel: Vec<u32> = (0..mg.order() as u32).filter(|&i| mg.elements[i as usize].e[2] == 0).collect();
    push("borel", borel);
    let unip: Vec<u32> = (0..p).map(|b| idx([1, b, 0, 1])).collect();
    push("unipotent", unip);
    let mut split: Vec<u32> = (0..mg.order() as u32)
        .filter(|&i| {
            let e = mg.elements[i as usize].e;
            (e[1] == 0 && e[2] == 0) || (e[0] == 0 && e[3] == 0)
        })
        .collect();
    split.sort_unstable();
    push("split-torus-normalizer", split);
    if p > 2 {
        // non-split torus: a + b√ε with ε a non-residue, as [[a, εb], [b, a]]
        let eps = (2..p).find(|&e| (1..p).all(|x| x * x % p != e)).unwrap();
        let elems = |pred: &dyn Fn(&[u64; 4]) -> bool| -> Vec<u32> {
            (0..mg.order() as u32).filter(|&i| pred(&mg.elements[i as usize].e)).collect()
        };
        let torus = elems(&|e| e[0] == e[3] && e[1] == eps * e[2] % p);
        // any element outside the torus that normalizes it
        let t_gen = torus.clone();
        let inverter = (0..mg.order() as u32).find(|&x| {
            let xi = mg.inv(x);
            !t_gen.contains(&x) && t_gen.iter().all(|&t| t_gen.contains(&mg.mul(mg.mul(x, t), xi)))
        });
        if let Some(w) = inverter {
            let mut gens = torus.clone();
            gens.push(w);
            if let Some(n) = closure(mg, &gens, 2 * (p as usize + 1)) {
                push("nonsplit-torus-normalizer", n);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p);
    let mut found: HashSet<Vec<u32>> = HashSet::new();
    let n = mg.order() as u32;
    for _ in 0..4000 {
        let (x, y) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if let Some(s) = closure(mg, &[x, y], 120) {
            // binary polyhedral groups have no cyclic subgroup of index 2,
            // unlike the torus normalizers of the same orders
            let max_order = s.iter().map(|&e| element_order(mg, e)).max().unwrap();
            if matches!(s.len(), 24 | 48 | 120) && 2 * max_order < s.len() && !found.contains(&s) {
                let cs = conjugates(mg, &s);
                found.extend(cs.iter().cloned());
                fams.push(SubgroupFamily {
                    name: format!("exceptional-{}", s.len()),
                    order: s.len(),
                    conjugates: cs,
                });
            }
        }
    }
    Ok(fams)
}

/// Flattening diagnostics of one measure.
#[derive(Clone, Debug)]
pub struct FlatteningReport {
    pub norm_1: f64,
    pub norm_inf: f64,
    /// Largest `|μ|` mass of a left or right coset of a catalog subgroup.
    pub coset_max: f64,
    pub coset_family: String,
    /// `sup ‖μ * φ‖₂ / (‖μ‖₁ ‖φ‖₂)` over mean-zero `φ`.
    pub decay_ratio: f64,
}

/// Operator norm of `φ ↦ μ * φ` on mean-zero functions by power iteration
/// on the normal operator.
pub fn convolution_ratio(mu: &ComplexMeasure, mg: &ModGroup, iters: usize) -> f64 {
    let n = mg.order();
    let center = |v: &mut Vec<C64>| {
        let m: C64 = v.iter().sum::<C64>() / n as f64;
        v.iter_mut().for_each(|z| *z -= m);
    };
    if n == 1 {
        return 0.0;
    }
    let mut v = VectorFunction::random(1, n, 7).values;
    center(&mut v);
    let mut sigma = 0.0;
    for _ in 0..iters {
        let nv = herm(&v);
        v.iter_mut().for_each(|z| *z /= nv);
        let w = mu.convolve(mg, &v);
        let next = herm(&w);
        let mut u = mu.convolve_adjoint(mg, &w);
        center(&mut u);
        v = u;
        let done = (next - sigma).abs() <= 1e-13 * next;
        sigma = next;
        if done {
            break;
        }
    }
    sigma / mu.norm_1()
}

pub fn flattening_report(mu: &ComplexMeasure, mg: &ModGroup, catalog: &[SubgroupFamily]) -> Result<FlatteningReport> {
    if prime_factors(mg.q) != vec![mg.q] {
        return Err(Error::CatalogUnavailable(mg.q));
    }
    let abs: Vec<f64> = mu.weights.iter().map(|z| z.norm()).collect();
    let mut coset_max = 0.0f64;
    let mut coset_family = String::new();
    let n = mg.order();
    for fam in catalog {
        for sub in &fam.conjugates {
            // label each element by its left coset xH and right coset Hx
            for right in [false, true] {
                let mut label = vec![u32::MAX; n];
                let mut mass = Vec::new();
                for x in 0..n as u32 {
                    if label[x as usize] != u32::MAX {
                        continue;
                    }
                    let id = mass.len() as u32;
                    let mut m = 0.0;
                    for &h in sub {
                        let y = if right { mg.mul(h, x) } else { mg.mul(x, h) };
                        label[y as usize] = id;
                        m += abs[y as usize];
                    }
                    mass.push(m);
                }
                let best = mass.iter().copied().fold(0.0, f64::max);
                if best > coset_max {
                    coset_max = best;
                    coset_family = fam.name.clone();
                }
            }
        }
    }
    Ok(FlatteningReport {
        norm_1: mu.norm_1(),
        norm_inf: mu.norm_inf(),
        coset_max,
        coset_family,
        decay_ratio: convolution_ratio(mu, mg, 500),
    })
}

/// `1 - λ₂` of the normalized adjacency of the Cayley graph on the symbol
/// images (closed under inverses): dense for small groups, Arnoldi on the
/// complement of the constants otherwise.
pub fn cayley_gap(mg: &ModGroup) -> Result<f64> {
    if !mg.admissible {
        return Err(Error::NotAdmissible {
            q: mg.q,
            order: mg.order(),
        });
    }
    let n = mg.order();
    let gens = &mg.cocycle_images;
    let w = 1.0 / gens.len() as f64;
    if n <= 400 {
        let mut a = vec![0.0; n * n];
        for x in 0..n as u32 {
            for &s in gens {
                a[x as usize * n + mg.mul(x, s) as usize] += w;
            }
        }
        let ev = symmetric_eigenvalues(n, &a);
        return Ok(1.0 - ev[1]);
    }
    // (A + I)/2 has spectrum in [0, 1]; its top on 1^⊥ is (λ₂ + 1)/2
    let dom = arnoldi_dominant(
        |x, y| {
            for (i, yi) in y.iter_mut().enumerate() {
                let s: C64 = gens.iter().map(|&s| x[mg.mul(i as u32, s) as usize]).sum();
                *yi = 0.5 * (s * w + x[i]);
            }
        },
        |v| {
            let m: C64 = v.iter().sum::<C64>() / n as f64;
            v.iter_mut().for_each(|z| *z -= m);
        },
        VectorFunction::random(1, n, 11).values.iter().map(|z| C64::new(z.re, 0.0)).collect(),
        60,
        40,
        1e-12,
    );
    Ok(1.0 - (2.0 * dom.value.re - 1.0))
}

/// `gcd` of a level with the bad set of inadmissible primes.
pub fn coprime_to(q: u64, bad: &[u64]) -> bool {
    bad.iter().all(|&p| q.gcd(&p) == 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn thermo() -> &'static Thermo {
        static TH: OnceLock<Thermo> = OnceLock::new();
        TH.get_or_init(|| Thermo::new(&SchottkyGroup::reference(), 12).unwrap())
    }

    fn group(q: u64) -> ModGroup {
        ModGroup::generated(&SchottkyGroup::reference(), q)
    }

    #[test]
    fn group_orders() {
        let g = SchottkyGroup::reference();
        assert_eq!(build_modgroup(&g, 2).unwrap().order(), 6);
        assert_eq!(build_modgroup(&g, 3).unwrap().order(), 24);
        assert_eq!(ModGroup::generated(&g, 1).order(), 1);
        for q in [4, 6, 7, 11, 13] {
            let mg = build_modgroup(&g, q).unwrap();
            assert_eq!(mg.order(), sl2_order(q), "q = {q}");
        }
        assert_eq!(sl2_order(6), 144);
        assert_eq!(sl2_order(4), 48);
    }

    #[test]
    fn level_five_is_not_admissible() {
        let g = SchottkyGroup::reference();
        match build_modgroup(&g, 5) {
            Err(Error::NotAdmissible { q: 5, order }) => assert!(order < sl2_order(5) && sl2_order(5).is_multiple_of(order)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn multiplication_tables_consistent() {
        let mg = group(7);
        let n = mg.order() as u32;
        for i in (0..n).step_by(7) {
            assert_eq!(mg.mul(i, mg.inv(i)), 0);
            for j in (0..n).step_by(11) {
                let e = mg.elements[i as usize].mul(&mg.elements[j as usize]);
                assert_eq!(mg.mul(i, j), mg.index_of(&e).unwrap());
                for k in (0..n).step_by(29) {
                    assert_eq!(mg.mul(mg.mul(i, j), k), mg.mul(i, mg.mul(j, k)));
                }
            }
        }
    }

    #[test]
    fn trivial_level_matches_scalar_operator() {
        let th = thermo();
        let mg = group(1);
        let (a, b) = (0.02, 3.0);
        let op = CongruenceOperator::new(th, &mg, a, b).unwrap();
        let h = VectorFunction::random(op.nodes(), 1, 3);
        let out = op.apply(&h).unwrap();
        let mut want = vec![ZERO; op.nodes()];
        op.matrix.apply(&h.values, &mut want);
        let err = out.values.iter().zip(&want).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(err < 1e-14, "{err}");
    }

    #[test]
    fn old_vectors_push_forward() {
        let th = thermo();
        let mg = group(3);
        let op = CongruenceOperator::new(th, &mg, 0.0, 2.0).unwrap();
        let f = VectorFunction::random(op.nodes(), 1, 5).values;
        let u = vec![C64::new(1.0 / 24.0, 0.0); 24];
        let mut h = VectorFunction::tensor(&f, &u);
        let mut scal = f.clone();
        let mut tmp = scal.clone();
        for _ in 0..20 {
            h = op.apply(&h).unwrap();
            op.matrix.apply(&scal, &mut tmp);
            std::mem::swap(&mut scal, &mut tmp);
            let err = h.max_abs_diff(&VectorFunction::tensor(&scal, &u));
            assert!(err < 1e-12, "{err}");
        }
    }

    #[test]
    fn dimension_mismatch() {
        let th = thermo();
        let mg = group(2);
        let op = CongruenceOperator::new(th, &mg, 0.0, 0.0).unwrap();
        assert!(matches!(op.apply(&VectorFunction::zeros(3, 6)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn projections_at_prime_and_composite_levels() {
        let mg = group(7);
        let h = VectorFunction::random(5, mg.order(), 9);
        let mut want = h.clone();
        want.remove_group_mean();
        assert!(project_new(&mg, 7, &h).unwrap().max_abs_diff(&want) < 1e-14);

        let mg = group(6);
        let h = VectorFunction::random(4, mg.order(), 10);
        let mut sum = VectorFunction::zeros(4, mg.order());
        for d in [2, 3, 6] {
            let e = project_new(&mg, d, &h).unwrap();
            let ee = project_new(&mg, d, &e).unwrap();
            assert!(ee.max_abs_diff(&e) < 1e-13, "idempotent at {d}");
            assert!(norm_2(&[0.25; 4], &e) <= norm_2(&[0.25; 4], &h) + 1e-12);
            sum.values.iter_mut().zip(&e.values).for_each(|(s, x)| *s += x);
        }
        let mut want = h.clone();
        want.remove_group_mean();
        assert!(sum.max_abs_diff(&want) < 1e-13);
        assert_eq!(project_new(&mg, 4, &h), Err(Error::NotDivisor(4, 6)));
    }

    #[test]
    fn pulled_back_norm_identity() {
        // a mean-zero function from level 2 pulled back to level 6 is new at level 2
        // and has ℓ² norm √|ker| times its own
        let mg6 = group(6);
        let mg2 = group(2);
        let f: Vec<C64> = (0..6).map(|i| C64::new(i as f64 - 2.5, if i < 3 { 0.5 } else { -0.5 })).collect();
        let pulled: Vec<C64> = mg6
            .elements
            .iter()
            .map(|e| f[mg2.index_of(&e.reduce(2)).unwrap() as usize])
            .collect();
        let ratio = herm(&pulled) / herm(&f);
        assert!((ratio * ratio - 24.0).abs() < 1e-12);
        let h = VectorFunction::tensor(&[C64::new(1.0, 0.0)], &pulled);
        let e = project_new(&mg6, 2, &h).unwrap();
        assert!(e.max_abs_diff(&h) < 1e-14);
    }

    #[test]
    fn operator_commutes_with_projections() {
        let th = thermo();
        let mg = group(6);
        let op = CongruenceOperator::new(th, &mg, 0.0, 1.5).unwrap();
        let h = VectorFunction::random(op.nodes(), mg.order(), 12);
        for d in [1, 2, 3, 6] {
            let l = op.apply(&project_new(&mg, d, &h).unwrap()).unwrap();
            let r = project_new(&mg, d, &op.apply(&h).unwrap()).unwrap();
            assert!(l.max_abs_diff(&r) < 1e-12);
        }
    }

    #[test]
    fn norms_of_constants_and_b_scaling() {
        let th = thermo();
        let n = th.disc.dim();
        let v = [C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
        let h = VectorFunction::tensor(&vec![C64::new(1.0, 0.0); n], &v);
        assert!((norm_1b(&th.disc.nodes, &h, 3.0) - 1.0).abs() < 1e-14);
        assert!((norm_2(&th.nu_weights(), &h) - 1.0).abs() < 1e-12);
        let r = VectorFunction::random(n, 2, 1);
        let sup = (0..n).map(|i| herm(r.row(i))).fold(0.0, f64::max);
        assert!(norm_2(&th.nu_weights(), &r) <= sup);
        let (s1, s2) = (norm_1b(&th.disc.nodes, &r, 1.0) - sup, norm_1b(&th.disc.nodes, &r, 2.0) - sup);
        assert!((s1 - 2.0 * s2).abs() < 1e-12 * s1);
    }

    #[test]
    fn trivial_level_radius_is_subleading_eigenvalue() {
        let th = thermo();
        let est = spectral_radius_new(th, &group(1), 0.0, 0.0, 30).unwrap();
        assert!((est.radius - th.gibbs.lambda2.norm()).abs() < 1e-6, "{} vs {}", est.radius, th.gibbs.lambda2);
    }

    #[test]
    fn small_levels_have_gap_and_log_linear_decay() {
        let th = thermo();
        for q in [2, 3] {
            let est = spectral_radius_new(th, &group(q), 0.0, 0.0, 60).unwrap();
            assert!(est.radius < 1.0 && est.radius > 0.0, "q = {q}: {}", est.radius);
            let slope = log_slope(&est.curve, 30);
            assert!((slope - est.radius.ln()).abs() < 0.05, "q = {q}: {slope} vs {}", est.radius.ln());
        }
        assert!(matches!(spectral_radius_new(th, &group(5), 0.0, 0.0, 5), Err(Error::NotAdmissible { .. })));
    }

    #[test]
    fn convolution_extremes() {
        let mg = group(7);
        let d = ComplexMeasure::dirac(mg.order(), 0);
        assert!((convolution_ratio(&d, &mg, 50) - 1.0).abs() < 1e-12);
        let u = ComplexMeasure::uniform(mg.order());
        let mut phi = VectorFunction::random(1, mg.order(), 2).values;
        let m: C64 = phi.iter().sum::<C64>() / mg.order() as f64;
        phi.iter_mut().for_each(|z| *z -= m);
        assert!(herm(&u.convolve(&mg, &phi)) < 1e-13);
        let cat = subgroup_catalog(&mg).unwrap();
        let rep = flattening_report(&d, &mg, &cat).unwrap();
        assert!((rep.coset_max - 1.0).abs() < 1e-15);
        assert!(matches!(subgroup_catalog(&group(6)), Err(Error::CatalogUnavailable(6))));
    }

    #[test]
    fn catalog_at_seven() {
        let mg = group(7);
        let cat = subgroup_catalog(&mg).unwrap();
        let borel = cat.iter().find(|f| f.name == "borel").unwrap();
        assert_eq!((borel.order, borel.conjugates.len()), (42, 8));
        let ns = cat.iter().find(|f| f.name == "nonsplit-torus-normalizer").unwrap();
        assert_eq!(ns.order, 16);
        let sp = cat.iter().find(|f| f.name == "split-torus-normalizer").unwrap();
        assert_eq!(sp.order, 12);
        // 2.S4 has two conjugacy classes of 7 subgroups each in SL2(7)
        let ex: Vec<_> = cat.iter().filter(|f| f.order == 48).collect();
        assert_eq!(ex.iter().map(|f| f.conjugates.len()).sum::<usize>(), 14);
    }

    #[test]
    fn flattening_measure_bounds() {
        let th = thermo();
        let g = th.g();
        let mg = group(7);
        let split = Split::with_middle(1, 4);
        let prefix = vec![0; split.r];
        let fl = build_mu(th, &mg, 0.0, 0.0, &[2], &prefix, split, 1 << 20).unwrap();
        assert!(fl.mu.norm_1() <= fl.bound);
        // summing over every prefix and group element gives L̂^n 1 at x
        let mut total = 0.0;
        for p in admissible_words(g, split.r) {
            let f = build_mu(th, &mg, 0.0, 0.0, &[2], &p, split, 1 << 20).unwrap();
            total += f.mu.total().re;
        }
        assert!(total <= fl.c + 1e-9 && (total - 1.0).abs() < 1e-8, "{total}");

        let mg1 = group(1);
        let one = build_mu(th, &mg1, 0.0, 0.0, &[2], &prefix, split, 1 << 20).unwrap();
        assert_eq!(one.mu.weights.len(), 1);
        assert!((one.mu.total() - fl.mu.total()).norm() < 1e-15);
    }

    #[test]
    fn prefix_distortion_dominates_measured_spread() {
        let th = thermo();
        let g = th.g();
        let eta = prefix_distortion(th, 0.0);
        assert!(eta.is_finite() && eta > 0.0);
        let mut spread = 0.0f64;
        for w in admissible_words(g, 3) {
            let m = g.word_matrix(&w).entries_f64();
            let last = *w.last().unwrap();
            let vals: Vec<f64> = g
                .successors(last)
                .flat_map(|t| {
                    let i = g.interval(t);
                    (0..=8).map(move |j| (t, i.lo + i.diam() * j as f64 / 8.0))
                })
                .map(|(t, y)| {
                    let den = m[2] * y + m[3];
                    -2.0 * th.delta * den.abs().ln() + th.h0(w[0], crate::arith::mobius_f64(&m, y)).ln() - th.h0(t, y).ln()
                })
                .collect();
            let osc = vals.iter().fold(f64::MIN, |a, &b| a.max(b)) - vals.iter().fold(f64::MAX, |a, &b| a.min(b));
            spread = spread.max(osc);
        }
        assert!(spread <= eta, "{spread} > {eta}");
        // the bound is a few units, not a vacuous exponential
        assert!(eta < 10.0, "{eta}");
        for q in [7, 11] {
            let mg = group(q);
            let split = Split::with_middle(2, 4);
            for p in admissible_words(g, split.r).into_iter().step_by(37) {
                let fl = build_mu(th, &mg, 0.0, 0.0, &[2], &p, split, 1 << 20).unwrap();
                assert!(fl.mu.norm_1() <= fl.bound, "q = {q}, prefix {p:?}");
            }
        }
    }

    #[test]
    fn flattening_resource_limit() {
        let th = thermo();
        let split = Split::with_middle(6, 4);
        let r = build_mu(th, &group(7), 0.0, 0.0, &[2], &vec![0; split.r], split, 100);
        assert!(matches!(r, Err(Error::ResourceLimit(_))));
    }

    #[test]
    fn cayley_gap_small_levels() {
        let g2 = cayley_gap(&group(2)).unwrap();
        // adjacency rebuilt from raw matrix products
        let mg = group(2);
        let mut a = [0.0; 36];
        for x in 0..6u32 {
            for &s in &mg.cocycle_images {
                let y = mg.index_of(&mg.elements[x as usize].mul(&mg.elements[s as usize])).unwrap();
                a[x as usize * 6 + y as usize] += 0.25;
            }
        }
        let ev = symmetric_eigenvalues(6, &a);
        assert!((g2 - (1.0 - ev[1])).abs() < 1e-12);
        for q in [3, 7, 11, 13] {
            let gap = cayley_gap(&group(q)).unwrap();
            assert!(gap > 0.0 && gap < 2.0, "q = {q}: {gap}");
        }
    }

    #[test]
    fn sparse_gap_matches_dense() {
        let mg = group(11);
        let n = mg.order();
        let mut a = vec![0.0; n * n];
        for x in 0..n as u32 {
            for &s in &mg.cocycle_images {
                a[x as usize * n + mg.mul(x, s) as usize] += 0.25;
            }
        }
        let dense = 1.0 - symmetric_eigenvalues(n, &a)[1];
        assert!((cayley_gap(&mg).unwrap() - dense).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn new_space_is_invariant(seed in 0u64..1000, q in prop::sample::select(vec![2u64, 3, 4, 6, 7]), b in -8.0f64..8.0) {
            let th = thermo();
            let mg = group(q);
            let op = CongruenceOperator::new(th, &mg, 0.0, b).unwrap();
            let mut h = VectorFunction::random(op.nodes(), mg.order(), seed);
            h.remove_group_mean();
            prop_assert!(op.apply(&h).unwrap().max_group_mean() < 1e-12);
        }

        #[test]
        fn rotation_of_symbol_images(word in prop::collection::vec(0usize..4, 1..8), q in 2u64..12) {
            let g = SchottkyGroup::reference();
            let mg = ModGroup::generated(&g, q);
            let direct = reduce_mod(&g.word_matrix(&word), q);
            prop_assert_eq!(mg.elements[mg.word_image(&word) as usize], direct);
        }
    }
}
