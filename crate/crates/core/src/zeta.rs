//! Primitive closed geodesics as necklaces of the coding, Selberg zeta
//! functions of the congruence covers by Euler product and by the Fredholm
//! determinant of the transfer operator, zero location by the argument
//! principle, and resonance-free strip scans.
//!
//! Closed geodesics are oriented: a necklace and its inverse word are
//! distinct orbit classes.

use num_bigint::BigInt;

use crate::arith::{length_from_trace, IntMatrix2};
use crate::coding::hyperbolicity_constants;
use crate::congruence::ModGroup;
use crate::linalg::{DenseMatrix, C64};
use crate::schottky::{inverse_symbol, SchottkyGroup, Symbol};
use crate::thermo::Discretization;
use crate::{Error, Result};

/// Primitive oriented closed geodesic.
#[derive(Clone, Debug, PartialEq)]
pub struct OrbitClass {
    /// Lexicographically least rotation of the cyclic word.
    pub necklace: Vec<Symbol>,
    pub representative: IntMatrix2,
    pub trace: BigInt,
    pub length: f64,
}

impl OrbitClass {
    /// Order of the holonomy in `G_q`.
    pub fn holonomy_order(&self, mg: &ModGroup) -> usize {
        let h = mg.word_image(&self.necklace);
        let mut x = h;
        let mut k = 1;
        let e = mg.word_image(&[]);
        while x != e {
            x = mg.mul(x, h);
            k += 1;
        }
        k
    }
}

/// Start of the least rotation (Booth's algorithm).
pub fn least_rotation(w: &[Symbol]) -> usize {
    let n = w.len();
    let s: Vec<Symbol> = w.iter().chain(w).copied().collect();
    let mut f = vec![usize::MAX; 2 * n];
    let mut k = 0usize;
    for j in 1..2 * n {
        let sj = s[j];
        let mut i = f[j - k - 1];
        while i != usize::MAX && sj != s[k + i + 1] {
            if sj < s[k + i + 1] {
                k = j - i - 1;
            }
            i = f[i];
        }
        if i == usize::MAX && sj != s[k] {
            if sj < s[k] {
                k = j;
            }
            f[j - k] = usize::MAX;
        } else {
            f[j - k] = if i == usize::MAX { 0 } else { i + 1 };
        }
    }
    k
}

/// Smallest period of a cyclic word.
fn period(w: &[Symbol]) -> usize {
    let n = w.len();
    (1..=n).find(|&p| n.is_multiple_of(p) && (0..n).all(|i| w[i] == w[(i + p) % n])).unwrap()
}

/// `ln c0 + (n + 1) ln κ`: every closed geodesic of word length above `n`
/// is longer than this.
pub fn certified_length(g: &SchottkyGroup, n: usize) -> f64 {
    let hc = hyperbolicity_constants(g, 6);
    hc.c0.ln() + (n + 1) as f64 * hc.kappa.ln()
}

/// Smallest word length whose enumeration certifies all geodesics of
/// length at most `ell`.
pub fn words_for_length(g: &SchottkyGroup, ell: f64) -> usize {
    let mut n = 1;
    while certified_length(g, n) < ell {
        n += 1;
    }
    n
}

/// All primitive necklaces of word length at most `n_max`, sorted by length.
/// `cap` bounds the number of cyclic words visited.
pub fn enumerate_orbits(g: &SchottkyGroup, n_max: usize, cap: usize) -> Result<Vec<OrbitClass>> {
    let k = g.alphabet_size();
    let visited: f64 = (1..=n_max).map(|n| k as f64 * ((k - 1) as f64).powi(n as i32 - 1)).sum();
    if visited > cap as f64 {
        return Err(Error::ResourceLimit(format!("{visited:.0} words exceed the cap {cap}")));
    }
    let mut out = Vec::new();
    let mut word = Vec::with_capacity(n_max);
    // the first symbol of a least rotation is its minimum, so later symbols
    // are never below it
    for s in 0..k {
        word.clear();
        word.push(s);
        collect(g, &mut word, n_max, &mut out);
    }
    out.sort_by(|a, b| a.length.total_cmp(&b.length).then_with(|| a.necklace.cmp(&b.necklace)));
    Ok(out)
}

fn collect(g: &SchottkyGroup, word: &mut Vec<Symbol>, n_max: usize, out: &mut Vec<OrbitClass>) {
    let (first, last) = (word[0], *word.last().unwrap());
    if last != inverse_symbol(first) && least_rotation(word) == 0 && period(word) == word.len() {
        let representative = g.word_matrix(word);
        let trace = representative.trace();
        out.push(OrbitClass {
            necklace: word.clone(),
            length: length_from_trace(&trace),
            trace,
            representative,
        });
    }
    if word.len() == n_max {
        return;
    }
    for t in g.successors(last).filter(|&t| t >= first) {
        word.push(t);
        collect(g, word, n_max, out);
        word.pop();
    }
}

/// Euler product value with its truncation estimate.
#[derive(Clone, Copy, Debug)]
pub struct EulerProduct {
    pub value: C64,
    pub log_value: C64,
    /// Estimated size of the omitted part of `log Z`.
    pub tail: f64,
}

/// Distance to the right of `δ` below which the Euler product is refused.
pub const EULER_MARGIN: f64 = 0.1;

/// `Z_q(s) = ∏_k ∏ (1 - e^{-(s+k) κ ℓ})^{|G_q|/κ}` over the base orbits of
/// length at most `ell_max`, `κ` the holonomy order.
pub fn zeta_euler(
    orbits: &[OrbitClass],
    s: C64,
    mg: &ModGroup,
    k_max: usize,
    ell_max: f64,
    delta: f64,
) -> Result<EulerProduct> {
    if !mg.admissible {
        return Err(Error::NotAdmissible {
            q: mg.q,
            order: mg.order(),
        });
    }
    if s.re <= delta + EULER_MARGIN {
        return Err(Error::TruncationUnreliable(s.re));
    }
    let gsize = mg.order() as f64;
    let mut log = C64::new(0.0, 0.0);
    let mut used = Vec::new();
    for o in orbits.iter().filter(|o| o.length <= ell_max) {
        let kappa = o.holonomy_order(mg) as f64;
        let l = kappa * o.length;
        for k in 0..=k_max {
            log += (1.0 - (-(s + k as f64) * l).exp()).ln() * (gsize / kappa);
        }
        used.push(o.length);
    }
    // tail: counting function fitted as C e^{δℓ}, integrated past ell_max,
    // plus the k > k_max remainder
    let c = used
        .iter()
        .enumerate()
        .map(|(i, l)| (i + 1) as f64 * (-delta * l).exp())
        .fold(0.0, f64::max);
    let sigma = s.re;
    let mut tail = 0.0;
    for k in 0..=k_max {
        let rate = sigma + k as f64 - delta;
        tail += gsize * c * delta * (-rate * ell_max).exp() / rate;
    }
    let lmin = used.first().copied().unwrap_or(ell_max);
    let weight: f64 = used.iter().map(|l| (-sigma * l).exp()).sum();
    tail += gsize * weight * (-((k_max + 1) as f64) * lmin).exp() / (1.0 - (-lmin).exp());
    Ok(EulerProduct {
        value: log.exp(),
        log_value: log,
        tail,
    })
}

/// Dimension cap for dense determinants.
pub const DENSE_CAP: usize = 3000;

/// Collocation matrix of the unnormalized congruence operator `M_{s,q}`,
/// index `node · |G_q| + γ`.
pub fn congruence_matrix(disc: &Discretization, mg: &ModGroup, s: C64) -> Result<DenseMatrix> {
    let n = disc.dim();
    let gd = mg.order();
    if n * gd > DENSE_CAP {
        return Err(Error::ResourceLimit(format!("dimension {} exceeds {DENSE_CAP}", n * gd)));
    }
    let l = disc.matrix(s);
    let mut m = DenseMatrix::zeros(n * gd);
    let dim = n * gd;
    for i in 0..n {
        for j in 0..n {
            let v = l.get(i, j);
            if v == C64::new(0.0, 0.0) {
                continue;
            }
            let perm = mg.right_action(disc.node_symbol(j));
            for gamma in 0..gd {
                m.data[(i * gd + gamma) * dim + j * gd + perm[gamma] as usize] += v;
            }
        }
    }
    Ok(m)
}

/// `det(I - M_{s,q})`.
pub fn fredholm_det(disc: &Discretization, mg: &ModGroup, s: C64) -> Result<C64> {
    if !mg.admissible {
        return Err(Error::NotAdmissible {
            q: mg.q,
            order: mg.order(),
        });
    }
    if mg.order() == 1 {
        return Ok(disc.matrix(s).det_one_minus());
    }
    Ok(congruence_matrix(disc, mg, s)?.det_one_minus())
}

/// Determinant on the complement of the functions constant in `γ`, in the
/// basis `e_γ - e_{g0}`, `γ ≠ g0`, with `g0` the identity.
pub fn fredholm_det_new(disc: &Discretization, mg: &ModGroup, s: C64) -> Result<C64> {
    if !mg.admissible {
        return Err(Error::NotAdmissible {
            q: mg.q,
            order: mg.order(),
        });
    }
    let gd = mg.order();
    if gd == 1 {
        return Ok(C64::new(1.0, 0.0));
    }
    let full = congruence_matrix(disc, mg, s)?;
    let n = disc.dim();
    let g0 = mg.word_image(&[]) as usize;
    let keep: Vec<usize> = (0..gd).filter(|&g| g != g0).collect();
    let dim = n * (gd - 1);
    let fd = n * gd;
    let mut m = DenseMatrix::zeros(dim);
    for i in 0..n {
        for (a, &ga) in keep.iter().enumerate() {
            let row = (i * gd + ga) * fd;
            for j in 0..n {
                let base = full.data[row + j * gd + g0];
                for (b, &gb) in keep.iter().enumerate() {
                    m.data[(i * (gd - 1) + a) * dim + j * (gd - 1) + b] = full.data[row + j * gd + gb] - base;
                }
            }
        }
    }
    Ok(m.det_one_minus())
}

/// The congruence operator restricted to one irreducible summand of the
/// right-regular representation of `G_q`.
#[derive(Clone, Debug)]
pub struct IrreducibleBlock {
    pub dim: usize,
    /// Copies of the summand in the regular representation.
    pub copies: usize,
    pub trivial: bool,
    /// Per symbol, the row-major `dim × dim` matrix of `γ ↦ γ c_s⁻¹`.
    pub action: Vec<Vec<C64>>,
}

/// Irreducible summands of the right-regular representation, split off as
/// eigenspaces of a random Hermitian element of the left group algebra
/// (which commutes with the right action) and grouped by character.
pub fn irreducible_blocks(mg: &ModGroup, seed: u64) -> Result<Vec<IrreducibleBlock>> {
    use rand::{Rng, SeedableRng};
    let n = mg.order();
    let k = mg.cocycle_images.len();
    if n * n > DENSE_CAP * DENSE_CAP {
        return Err(Error::ResourceLimit(format!("group of order {n} is too large to decompose")));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut h = vec![C64::new(0.0, 0.0); n * n];
    for g in 0..n as u32 {
        let w = C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        for x in 0..n as u32 {
            let gx = mg.mul(g, x) as usize;
            h[gx * n + x as usize] += w;
            h[x as usize * n + gx] += w.conj();
        }
    }
    let (values, vectors) = crate::linalg::hermitian_eigen(n, &h);
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let col = |j: usize| &vectors[j * n..(j + 1) * n];
    // right action γ ↦ γ c_s⁻¹ restricted to span(cols)
    let restrict = |cols: &[usize], perm: &[u32]| -> (Vec<C64>, f64) {
        let d = cols.len();
        let mut r = vec![C64::new(0.0, 0.0); d * d];
        let mut defect = 0.0f64;
        for (b, &jb) in cols.iter().enumerate() {
            // (Π v)(γ) = v(γ c⁻¹)
            let pv: Vec<C64> = (0..n).map(|x| col(jb)[perm[x] as usize]).collect();
            let mut rest = pv.clone();
            for (a, &ja) in cols.iter().enumerate() {
                let c: C64 = col(ja).iter().zip(&pv).map(|(u, v)| u.conj() * v).sum();
                r[a * d + b] = c;
                rest.iter_mut().zip(col(ja)).for_each(|(x, u)| *x -= c * u);
            }
            defect = defect.max(crate::linalg::norm(&rest));
        }
        (r, defect)
    };
    let mut blocks: Vec<(IrreducibleBlock, Vec<C64>)> = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[j] - values[j - 1] < 1e-9 * scale.max(1.0) {
            j += 1;
        }
        let cols: Vec<usize> = (i..j).collect();
        let mut action = Vec::with_capacity(k);
        for s in 0..k {
            let (r, defect) = restrict(&cols, mg.right_action(s));
            if defect > 1e-8 {
                return Err(Error::ResourceLimit(format!("eigenspace {i}..{j} is not invariant ({defect:e})")));
            }
            action.push(r);
        }
        // character over the whole group through the right multiplications
        let character: Vec<C64> = (0..n as u32)
            .map(|g| {
                let perm: Vec<u32> = (0..n as u32).map(|x| mg.mul(x, g)).collect();
                let (r, _) = restrict(&cols, &perm);
                (0..cols.len()).map(|a| r[a * cols.len() + a]).sum()
            })
            .collect();
        let d = cols.len();
        match blocks.iter_mut().find(|(b, ch)| b.dim == d && ch.iter().zip(&character).all(|(x, y)| (x - y).norm() < 1e-6)) {
            Some((b, _)) => b.copies += 1,
            None => {
                let trivial = d == 1 && character.iter().all(|c| (c - 1.0).norm() < 1e-6);
                blocks.push((IrreducibleBlock { dim: d, copies: 1, trivial, action }, character));
            }
        }
        i = j;
    }
    let blocks: Vec<IrreducibleBlock> = blocks.into_iter().map(|(b, _)| b).collect();
    if blocks.iter().any(|b| b.copies != b.dim) || blocks.iter().map(|b| b.dim * b.dim).sum::<usize>() != n {
        return Err(Error::ResourceLimit("regular representation did not split into irreducibles".into()));
    }
    Ok(blocks)
}

/// `det(I - M_{s,ρ})` for one irreducible block.
pub fn fredholm_det_block(disc: &Discretization, block: &IrreducibleBlock, s: C64) -> C64 {
    let l = disc.matrix(s);
    let n = disc.dim();
    let d = block.dim;
    let mut m = DenseMatrix::zeros(n * d);
    for i in 0..n {
        for j in 0..n {
            let v = l.get(i, j);
            if v == C64::new(0.0, 0.0) {
                continue;
            }
            let r = &block.action[disc.node_symbol(j)];
            for a in 0..d {
                for b in 0..d {
                    m.data[(i * d + a) * n * d + j * d + b] = v * r[a * d + b];
                }
            }
        }
    }
    m.det_one_minus()
}

/// New-space determinant as the product over non-trivial blocks, each to
/// the power of its multiplicity.
pub fn fredholm_det_new_blocks(disc: &Discretization, blocks: &[IrreducibleBlock], s: C64) -> C64 {
    blocks
        .iter()
        .filter(|b| !b.trivial)
        .map(|b| fredholm_det_block(disc, b, s).powi(b.copies as i32))
        .product()
}

/// Axis-parallel rectangle in the complex plane.
/// Cut fractions tried in turn when a cut passes too close to a zero.
const SPLIT_CUTS: [f64; 4] = [0.5371, 0.4629, 0.6180, 0.3820];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub re: (f64, f64),
    pub im: (f64, f64),
}

impl Window {
    fn corners(&self) -> [C64; 4] {
        [
            C64::new(self.re.0, self.im.0),
            C64::new(self.re.1, self.im.0),
            C64::new(self.re.1, self.im.1),
            C64::new(self.re.0, self.im.1),
        ]
    }

    fn size(&self) -> f64 {
        (self.re.1 - self.re.0).max(self.im.1 - self.im.0)
    }

    /// Halves, cut slightly off-centre so that cuts avoid the real axis
    /// and other symmetric positions of zeros.
    pub fn split(&self) -> [Window; 2] {
        self.split_at(SPLIT_CUTS[0])
    }

    /// Cut across the longer side at fraction `cut`.
    pub fn split_at(&self, cut: f64) -> [Window; 2] {
        if self.re.1 - self.re.0 >= self.im.1 - self.im.0 {
            let m = self.re.0 + cut * (self.re.1 - self.re.0);
            [Window { re: (self.re.0, m), ..*self }, Window { re: (m, self.re.1), ..*self }]
        } else {
            let m = self.im.0 + cut * (self.im.1 - self.im.0);
            [Window { im: (self.im.0, m), ..*self }, Window { im: (m, self.im.1), ..*self }]
        }
    }

    fn center(&self) -> C64 {
        C64::new(0.5 * (self.re.0 + self.re.1), 0.5 * (self.im.0 + self.im.1))
    }
}

/// A located zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Zero {
    pub s: C64,
    pub residual: f64,
    pub multiplicity: usize,
}

/// Winding number of `f` along the boundary of `w`. Each boundary step is
/// accepted once its argument change is below a quarter turn and agrees
/// with the sum over its two halves, which guards against aliasing.
pub fn winding_number<F: FnMut(C64) -> Result<C64>>(f: &mut F, w: &Window, scale: f64) -> Result<i64> {
    winding_at_density(f, w, scale, 32.0)
}

/// Winding number with `density` initial boundary samples per unit length.
/// A multiple zero within a sample spacing of the boundary can hide a full
/// turn from every sample; denser starts shrink that blind band.
fn winding_at_density<F: FnMut(C64) -> Result<C64>>(f: &mut F, w: &Window, scale: f64, density: f64) -> Result<i64> {
    let c = w.corners();
    let mut total = 0.0;
    for e in 0..4 {
        let (a, b) = (c[e], c[(e + 1) % 4]);
        let pieces = ((b - a).norm() * density).ceil().max(density / 2.0) as usize;
        let mut za = a;
        let mut fa = f(za)?;
        for k in 1..=pieces {
            let zb = a + (b - a) * (k as f64 / pieces as f64);
            let fb = f(zb)?;
            total += edge_arg(f, za, fa, zb, fb, scale, 0)?;
            za = zb;
            fa = fb;
        }
    }
    let turns = total / std::f64::consts::TAU;
    if (turns - turns.round()).abs() > 0.05 {
        return Err(Error::ContourThroughZero(turns));
    }
    Ok(turns.round() as i64)
}

fn edge_arg<F: FnMut(C64) -> Result<C64>>(
    f: &mut F,
    za: C64,
    fa: C64,
    zb: C64,
    fb: C64,
    scale: f64,
    depth: usize,
) -> Result<f64> {
    let tiny = 1e-14 * scale;
    if fa.norm() < tiny || fb.norm() < tiny {
        return Err(Error::ContourThroughZero(fa.norm().min(fb.norm())));
    }
    let zm = 0.5 * (za + zb);
    let fm = f(zm)?;
    let whole = (fb / fa).arg();
    let (left, right) = ((fm / fa).arg(), (fb / fm).arg());
    if whole.abs() < 0.5 && (left + right - whole).abs() < 1e-6 {
        return Ok(whole);
    }
    if depth > 40 {
        return Err(Error::ContourThroughZero((za - zb).norm()));
    }
    Ok(edge_arg(f, za, fa, zm, fm, scale, depth + 1)? + edge_arg(f, zm, fm, zb, fb, scale, depth + 1)?)
}

/// Densities tried in turn when the counts of a box and its halves disagree.
const DENSITIES: [f64; 3] = [32.0, 256.0, 2048.0];

/// Zeros of `f` in `w`: count by the argument principle, bisect to boxes
/// below `resolution`, then refine by Newton steps. A box whose halves do
/// not add up is recounted with denser boundary sampling and other cuts.
pub fn find_zeros_of<F: FnMut(C64) -> Result<C64>>(mut f: F, w: &Window, resolution: f64) -> Result<Vec<Zero>> {
    let scale = w.corners().iter().map(|&z| f(z).map(|v| v.norm())).collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
    let mut out = Vec::new();
    let mut stack = vec![(*w, winding_number(&mut f, w, scale)?)];
    while let Some((box_, count)) = stack.pop() {
        if count <= 0 {
            continue;
        }
        if box_.size() <= resolution {
            let s = newton(&mut f, box_.center(), box_.size())?;
            out.push(Zero {
                s,
                residual: f(s)?.norm() / scale,
                multiplicity: count as usize,
            });
            continue;
        }
        let mut halves = None;
        'search: for density in DENSITIES {
            let count = if density == DENSITIES[0] { count } else { winding_at_density(&mut f, &box_, scale, density)? };
            for cut in SPLIT_CUTS {
                let [a, b] = box_.split_at(cut);
                let ra = winding_at_density(&mut f, &a, scale, density);
                let rb = winding_at_density(&mut f, &b, scale, density);
                if let (Ok(ca), Ok(cb)) = (ra, rb) {
                    if ca + cb == count {
                        halves = Some([(a, ca), (b, cb)]);
                        break 'search;
                    }
                }
            }
        }
        stack.extend(halves.ok_or(Error::ContourThroughZero(box_.size()))?);
    }
    out.sort_by(|a, b| a.s.re.total_cmp(&b.s.re).then(a.s.im.total_cmp(&b.s.im)));
    Ok(out)
}

fn newton<F: FnMut(C64) -> Result<C64>>(f: &mut F, z0: C64, size: f64) -> Result<C64> {
    let mut z = z0;
    let h = 1e-6 * size.max(1e-3);
    for _ in 0..50 {
        let fz = f(z)?;
        let d = (f(z + h)? - f(z - h)?) / (2.0 * h);
        let step = fz / d;
        z -= step;
        if step.norm() < 1e-14 * z.norm().max(1.0) {
            break;
        }
    }
    Ok(z)
}

/// Zeros of `det(I - M_{s,q})` (or of its new-space factor) in `w`.
pub fn find_zeros(disc: &Discretization, mg: &ModGroup, w: &Window, new_only: bool) -> Result<Vec<Zero>> {
    if !new_only {
        return find_zeros_of(|s| fredholm_det(disc, mg, s), w, 1e-3);
    }
    if !mg.admissible {
        return Err(Error::NotAdmissible {
            q: mg.q,
            order: mg.order(),
        });
    }
    // each block has simple zeros where the full new-space determinant has
    // zeros of multiplicity `copies`
    let mut out = Vec::new();
    for b in irreducible_blocks(mg, 1)?.iter().filter(|b| !b.trivial) {
        for mut z in find_zeros_of(|s| Ok(fredholm_det_block(disc, b, s)), w, 1e-3)? {
            z.multiplicity *= b.copies;
            out.push(z);
        }
    }
    out.sort_by(|a, b| a.s.re.total_cmp(&b.s.re).then(a.s.im.total_cmp(&b.s.im)));
    Ok(out)
}

/// Zeros found at one level.
#[derive(Clone, Debug)]
pub struct LevelScan {
    pub q: u64,
    /// Zeros of the new-space factor; the level-one factor appears once at `q = 1`.
    pub zeros: Vec<Zero>,
}

/// Strip scan with its headline gap.
#[derive(Clone, Debug)]
pub struct ResonanceScan {
    pub delta: f64,
    pub window: Window,
    pub levels: Vec<LevelScan>,
    /// `δ` minus the largest real part among zeros other than `δ`; the
    /// strip depth when the strip holds no such zero.
    pub epsilon: f64,
    pub bounded_by_window: bool,
}

/// Scan `Re s ∈ [δ - eps_test, δ + 0.05]`, `|Im s| ≤ b_max` at level one and
/// on the new spaces of the given levels.
pub fn resonance_scan(
    g: &SchottkyGroup,
    delta: f64,
    levels: &[u64],
    eps_test: f64,
    b_max: f64,
    order: usize,
) -> Result<ResonanceScan> {
    let disc = Discretization::new(g, order);
    let window = Window {
        re: (delta - eps_test, delta + 0.05),
        im: (-b_max, b_max),
    };
    let mut scans = Vec::new();
    let one = ModGroup::generated(g, 1);
    scans.push(LevelScan {
        q: 1,
        zeros: find_zeros(&disc, &one, &window, false)?,
    });
    for &q in levels.iter().filter(|&&q| q > 1) {
        let mg = crate::congruence::build_modgroup(g, q)?;
        scans.push(LevelScan {
            q,
            zeros: find_zeros(&disc, &mg, &window, true)?,
        });
    }
    let worst = scans
        .iter()
        .flat_map(|l| l.zeros.iter())
        .filter(|z| (z.s - delta).norm() > 1e-6)
        .map(|z| z.s.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let bounded_by_window = worst == f64::NEG_INFINITY;
    Ok(ResonanceScan {
        delta,
        window,
        levels: scans,
        epsilon: if bounded_by_window { eps_test } else { delta - worst },
        bounded_by_window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::congruence::build_modgroup;
    use std::collections::HashSet;
    use std::sync::OnceLock;

    fn orbits() -> &'static Vec<OrbitClass> {
        static O: OnceLock<Vec<OrbitClass>> = OnceLock::new();
        O.get_or_init(|| enumerate_orbits(&SchottkyGroup::reference(), 8, 1 << 20).unwrap())
    }

    fn delta() -> f64 {
        crate::thermo::solve_delta(&SchottkyGroup::reference(), 28, 1e-13).unwrap()
    }

    /// Brute force: every word of length `n`, reduced cyclically, classes of
    /// rotations collected in a set.
    fn brute_necklaces(n: usize) -> usize {
        let mut set = HashSet::new();
        let total = 4usize.pow(n as u32);
        for code in 0..total {
            let w: Vec<Symbol> = (0..n).map(|i| (code / 4usize.pow(i as u32)) % 4).collect();
            let ok = (0..n).all(|i| w[(i + 1) % n] != (w[i] ^ 1));
            if !ok {
                continue;
            }
            if (1..n).any(|p| n.is_multiple_of(p) && (0..n).all(|i| w[i] == w[(i + p) % n])) {
                continue;
            }
            let canon = (0..n).map(|r| [&w[r..], &w[..r]].concat()).min().unwrap();
            set.insert(canon);
        }
        set.len()
    }

    #[test]
    fn first_orbits() {
        let o = orbits();
        let one: Vec<&OrbitClass> = o.iter().filter(|x| x.necklace.len() == 1).collect();
        assert_eq!(one.len(), 4);
        let mut ls: Vec<f64> = one.iter().map(|x| x.length).collect();
        ls.sort_by(f64::total_cmp);
        for (l, want) in ls.iter().zip([3.13360, 3.13360, 3.52549, 3.52549]) {
            assert!((l - want).abs() < 1e-5);
        }
        assert_eq!(o.iter().filter(|x| x.necklace.len() == 2).count(), 4);
        assert!(o.windows(2).all(|w| w[0].length <= w[1].length));
    }

    #[test]
    fn necklace_counts_match_brute_force() {
        let o = orbits();
        for n in 1..=8 {
            assert_eq!(o.iter().filter(|x| x.necklace.len() == n).count(), brute_necklaces(n), "n = {n}");
        }
    }

    #[test]
    fn booth_matches_naive_minimum() {
        let w = [2, 0, 3, 1, 2, 0, 2];
        let r = least_rotation(&w);
        let naive = (0..w.len()).min_by_key(|&r| [&w[r..], &w[..r]].concat()).unwrap();
        assert_eq!([&w[r..], &w[..r]].concat(), [&w[naive..], &w[..naive]].concat());
    }

    #[test]
    fn lengths_are_rotation_and_birkhoff_consistent() {
        let g = SchottkyGroup::reference();
        for o in orbits().iter().filter(|o| o.necklace.len() <= 5) {
            let n = o.necklace.len();
            let rot = [&o.necklace[1..], &o.necklace[..1]].concat();
            assert_eq!(g.word_matrix(&rot).trace(), o.trace);
            let x = crate::coding::periodic_point(&g, &o.necklace);
            let tau = crate::coding::birkhoff_roof(&g, &o.necklace, x, n);
            assert!((tau - o.length).abs() < 1e-9 * o.length, "{:?} {tau} {}", o.necklace, o.length);
            assert!(o.length >= certified_length(&g, n - 1) - 1e-12);
        }
    }

    #[test]
    fn lift_rule_partitions_group() {
        let g = SchottkyGroup::reference();
        for q in [2, 3, 7] {
            let mg = build_modgroup(&g, q).unwrap();
            for o in orbits().iter().take(50) {
                let k = o.holonomy_order(&mg);
                assert_eq!(mg.order() % k, 0);
                // cycles of right multiplication all have length k
                let h = mg.word_image(&o.necklace);
                let mut seen = vec![false; mg.order()];
                for start in 0..mg.order() as u32 {
                    if seen[start as usize] {
                        continue;
                    }
                    let mut x = start;
                    let mut len = 0;
                    while !seen[x as usize] {
                        seen[x as usize] = true;
                        x = mg.mul(x, h);
                        len += 1;
                    }
                    assert_eq!(len, k);
                }
            }
        }
    }

    #[test]
    fn euler_product_properties() {
        let g = SchottkyGroup::reference();
        let d = delta();
        let one = ModGroup::generated(&g, 1);
        let o = orbits();
        let ell = certified_length(&g, 8);
        let s = C64::new(2.0, 0.3);
        let full = zeta_euler(o, s, &one, 8, ell, d).unwrap();
        let half = zeta_euler(o, s, &one, 8, ell / 2.0, d).unwrap();
        assert!((full.log_value - half.log_value).norm() < half.tail);
        for sr in [0.5, 1.0, 2.0] {
            let z = zeta_euler(o, C64::new(sr, 0.0), &one, 8, ell, d).unwrap();
            assert!(z.value.re > 0.0 && z.value.re < 1.0 && z.value.im.abs() < 1e-15);
        }
        assert_eq!(zeta_euler(o, C64::new(d, 0.0), &one, 8, ell, d).unwrap_err(), Error::TruncationUnreliable(d));
        let five = ModGroup::generated(&g, 5);
        assert!(matches!(zeta_euler(o, s, &five, 8, ell, d), Err(Error::NotAdmissible { .. })));
    }

    #[test]
    fn determinant_vanishes_at_delta_and_matches_euler() {
        let g = SchottkyGroup::reference();
        let d = delta();
        let disc = Discretization::new(&g, 24);
        let one = ModGroup::generated(&g, 1);
        assert!(fredholm_det(&disc, &one, C64::new(d, 0.0)).unwrap().norm() < 1e-8);
        assert!(fredholm_det(&disc, &one, C64::new(d + 0.2, 0.0)).unwrap().norm() > 1e-3);
        let orb = enumerate_orbits(&g, 10, 1 << 22).unwrap();
        let ell = certified_length(&g, 10);
        let s = C64::new(d + 0.5, 0.0);
        let e = zeta_euler(&orb, s, &one, 12, ell, d).unwrap();
        let f = fredholm_det(&disc, &one, s).unwrap();
        assert!((f.norm().ln() - e.value.norm().ln()).abs() < 1e-6, "{f} {}", e.value);
    }

    #[test]
    fn congruence_determinant_factorizes_and_matches_euler() {
        let g = SchottkyGroup::reference();
        let d = delta();
        let disc = Discretization::new(&g, 10);
        let one = ModGroup::generated(&g, 1);
        let orb = orbits();
        let ell = certified_length(&g, 8);
        for q in [2, 3] {
            let mg = build_modgroup(&g, q).unwrap();
            for s in [C64::new(0.6, 0.4), C64::new(d, 0.0), C64::new(0.1, -1.3)] {
                let full = fredholm_det(&disc, &mg, s).unwrap();
                let split = fredholm_det(&disc, &one, s).unwrap() * fredholm_det_new(&disc, &mg, s).unwrap();
                assert!((full - split).norm() < 1e-8 * full.norm().max(1e-3), "{q} {s}");
            }
            assert!(fredholm_det_new(&disc, &mg, C64::new(d, 0.0)).unwrap().norm() > 1e-3);
            let s = C64::new(1.2, 0.0);
            let e = zeta_euler(orb, s, &mg, 8, ell, d).unwrap();
            let f = fredholm_det(&disc, &mg, s).unwrap();
            assert!((f.norm().ln() - e.value.norm().ln()).abs() < 1e-6 + e.tail);
        }
    }

    #[test]
    fn zeros_near_delta() {
        let g = SchottkyGroup::reference();
        let d = delta();
        let disc = Discretization::new(&g, 24);
        let one = ModGroup::generated(&g, 1);
        let w = Window {
            re: (d - 0.05, d + 0.05),
            im: (-0.05, 0.05),
        };
        let z = find_zeros(&disc, &one, &w, false).unwrap();
        assert_eq!(z.len(), 1);
        assert_eq!(z[0].multiplicity, 1);
        assert!((z[0].s - d).norm() < 1e-8, "{:?}", z[0]);
        let right = Window {
            re: (d + 0.05, d + 0.5),
            im: (-3.0, 3.0),
        };
        assert!(find_zeros(&disc, &one, &right, false).unwrap().is_empty());
    }

    #[test]
    fn zeros_are_conjugate_symmetric() {
        let g = SchottkyGroup::reference();
        let disc = Discretization::new(&g, 16);
        let one = ModGroup::generated(&g, 1);
        let w = Window {
            re: (-0.3, 0.3),
            im: (-4.5, 4.5),
        };
        let z = find_zeros(&disc, &one, &w, false).unwrap();
        for a in &z {
            assert!(z.iter().any(|b| (b.s - a.s.conj()).norm() < 1e-6), "{:?}", a);
        }
    }

    #[test]
    fn block_product_matches_new_space_determinant() {
        let g = SchottkyGroup::reference();
        let disc = Discretization::new(&g, 4);
        for q in [2, 3] {
            let mg = build_modgroup(&g, q).unwrap();
            let blocks = irreducible_blocks(&mg, 7).unwrap();
            assert_eq!(blocks.iter().filter(|b| b.trivial).count(), 1);
            for s in [C64::new(0.3, 0.0), C64::new(0.1, 1.3), C64::new(-0.2, -2.7)] {
                let dense = fredholm_det_new(&disc, &mg, s).unwrap();
                let prod = fredholm_det_new_blocks(&disc, &blocks, s);
                assert!((dense - prod).norm() <= 1e-8 * dense.norm(), "q = {q}, s = {s}: {dense} vs {prod}");
            }
        }
    }
}
