//! Symbolic coding of the limit set: the subshift of reduced sequences, the
//! Bowen-Series expanding map with its roof function, cylinders, the
//! generator-valued cocycle, and measured hyperbolicity constants.

use num_rational::BigRational;
use num_traits::ToPrimitive;

use crate::arith::{mobius_f64, IntMatrix2};
use crate::schottky::{inverse_symbol, Interval, SchottkyGroup, Symbol};
use crate::{Error, Result};

/// One-sided subshift of finite type over the Schottky alphabet.
#[derive(Clone, Debug)]
pub struct Subshift {
    pub k: usize,
    pub transitions: Vec<Vec<bool>>,
    pub theta: f64,
}

impl Subshift {
    pub fn new(g: &SchottkyGroup, theta: f64) -> Self {
        let k = g.alphabet_size();
        let transitions = (0..k)
            .map(|i| (0..k).map(|j| j != inverse_symbol(i)).collect())
            .collect();
        Self { k, transitions, theta }
    }

    pub fn allowed(&self, i: Symbol, j: Symbol) -> bool {
        self.transitions[i][j]
    }

    pub fn is_admissible(&self, word: &[Symbol]) -> bool {
        word.iter().all(|&s| s < self.k) && word.windows(2).all(|w| self.allowed(w[0], w[1]))
    }

    /// Smallest power of the transition matrix with all entries positive.
    pub fn mixing_exponent(&self) -> Option<usize> {
        let k = self.k;
        let mut p: Vec<Vec<bool>> = self.transitions.clone();
        for n in 1..=k * k {
            if p.iter().all(|r| r.iter().all(|&b| b)) {
                return Some(n);
            }
            p = (0..k)
                .map(|i| (0..k).map(|j| (0..k).any(|l| p[i][l] && self.transitions[l][j])).collect())
                .collect();
        }
        None
    }

    /// Number of admissible words with `n` symbols.
    pub fn count_words(&self, n: usize) -> u64 {
        if n == 0 {
            return 1;
        }
        let mut v = vec![1u64; self.k];
        for _ in 1..n {
            v = (0..self.k)
                .map(|j| (0..self.k).filter(|&i| self.allowed(i, j)).map(|i| v[i]).sum())
                .collect();
        }
        v.iter().sum()
    }
}

pub fn is_admissible(word: &[Symbol]) -> bool {
    word.windows(2).all(|w| w[1] != inverse_symbol(w[0]))
}

/// All admissible words with exactly `n` symbols, in lexicographic order.
pub fn admissible_words(g: &SchottkyGroup, n: usize) -> Vec<Vec<Symbol>> {
    let mut out: Vec<Vec<Symbol>> = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|w| {
                let last = w.last().copied();
                (0..g.alphabet_size())
                    .filter(move |&t| last.is_none_or(|l| t != inverse_symbol(l)))
                    .map(move |t| {
                        let mut v = w.clone();
                        v.push(t);
                        v
                    })
            })
            .collect();
    }
    out
}

/// `T(x) = s⁻¹(x)` for `x ∈ I_s`, with the admissible next symbols.
pub fn expanding_map(g: &SchottkyGroup, x: f64, s: Symbol) -> Result<(f64, Vec<Symbol>)> {
    if !g.interval(s).contains(x) {
        return Err(Error::PointNotInInterval(x, s));
    }
    let inv = g.symbol_f64(inverse_symbol(s));
    Ok((mobius_f64(inv, x), g.successors(s).collect()))
}

/// `τ(x) = log |T'(x)|` on `I_s`.
pub fn roof(g: &SchottkyGroup, x: f64, s: Symbol) -> Result<f64> {
    if !g.interval(s).contains(x) {
        return Err(Error::PointNotInInterval(x, s));
    }
    Ok(roof_unchecked(g, x, s))
}

/// `log |(s⁻¹)'(x)|` without the interval check.
#[inline]
pub fn roof_unchecked(g: &SchottkyGroup, x: f64, s: Symbol) -> f64 {
    let m = g.symbol_f64(inverse_symbol(s));
    -2.0 * (m[2] * x + m[3]).abs().ln()
}

/// `τ(γ_s(x))` for the inverse branch `γ_s` applied to `x`, evaluated from the
/// branch derivative: `-log |γ_s'(x)|`.
#[inline]
pub fn branch_roof(g: &SchottkyGroup, s: Symbol, x: f64) -> f64 {
    let m = g.symbol_f64(s);
    2.0 * (m[2] * x + m[3]).abs().ln()
}

/// Cocycle value on sequences starting with `s`: the generator labelled `s`.
pub fn cocycle_of(g: &SchottkyGroup, s: Symbol) -> IntMatrix2 {
    g.symbol_matrix(s).clone()
}

/// `c_n(x) = c(x_0) c(x_1) ... c(x_{n-1})`.
pub fn cocycle_n(g: &SchottkyGroup, word: &[Symbol]) -> IntMatrix2 {
    g.word_matrix(word)
}

/// `θ^k` with `k` the index of the first disagreement.
pub fn d_theta(x: &[Symbol], y: &[Symbol], theta: f64) -> f64 {
    match x.iter().zip(y).position(|(a, b)| a != b) {
        Some(k) => theta.powi(k as i32),
        None if x.len() == y.len() => 0.0,
        None => theta.powi(x.len().min(y.len()) as i32),
    }
}

/// Point of the limit set with address `word` followed by the address of `tail`.
pub fn push_point(g: &SchottkyGroup, word: &[Symbol], tail: f64) -> f64 {
    word.iter().rev().fold(tail, |x, &s| mobius_f64(g.symbol_f64(s), x))
}

/// Periodic limit point with address `word word word ...`.
pub fn periodic_point(g: &SchottkyGroup, word: &[Symbol]) -> f64 {
    SchottkyGroup::attracting_fixed_point(&g.word_matrix(word))
}

/// `τ_n` along a known address: `Σ_{i<n} τ(σ^i x)` where `σ^i x` is
/// recomputed from the address by contraction.
pub fn birkhoff_roof(g: &SchottkyGroup, address: &[Symbol], tail: f64, n: usize) -> f64 {
    let mut x = tail;
    let mut pts = vec![0.0; address.len()];
    for i in (0..address.len()).rev() {
        x = mobius_f64(g.symbol_f64(address[i]), x);
        pts[i] = x;
    }
    (0..n).map(|i| roof_unchecked(g, pts[i], address[i])).sum()
}

/// The interval of points with coding prefix `word`, computed exactly and
/// rounded outward to floating point.
pub fn cylinder_interval(g: &SchottkyGroup, word: &[Symbol]) -> Result<Interval> {
    if word.is_empty() || !is_admissible(word) || word.iter().any(|&s| s >= g.alphabet_size()) {
        return Err(Error::InadmissibleWord);
    }
    let (lo, hi) = exact_cylinder(g, word);
    let down = |x: &BigRational| {
        let f = x.to_f64().unwrap();
        if BigRational::from_float(f).unwrap() > *x {
            f.next_down()
        } else {
            f
        }
    };
    let up = |x: &BigRational| {
        let f = x.to_f64().unwrap();
        if BigRational::from_float(f).unwrap() < *x {
            f.next_up()
        } else {
            f
        }
    };
    Ok(Interval { lo: down(&lo), hi: up(&hi) })
}

/// Exact rational endpoints of a cylinder.
pub fn exact_cylinder(g: &SchottkyGroup, word: &[Symbol]) -> (BigRational, BigRational) {
    let last = *word.last().unwrap();
    let m = g.word_matrix(&word[..word.len() - 1]);
    let (a, b) = g.exact_interval(last);
    let x = m.apply_rational(a).expect("contraction has no pole on its source");
    let y = m.apply_rational(b).expect("contraction has no pole on its source");
    if x < y {
        (x, y)
    } else {
        (y, x)
    }
}

/// Fast floating-point cylinder interval.
pub fn cylinder_interval_f64(g: &SchottkyGroup, word: &[Symbol]) -> Interval {
    let last = *word.last().unwrap();
    let i = g.interval(last);
    let pre = &word[..word.len() - 1];
    Interval::new(push_point(g, pre, i.lo), push_point(g, pre, i.hi))
}

/// Measured constants with `c0 κ^n ≤ |(T^n)'| ≤ c0⁻¹ κ1^n` on all cylinders of
/// length at most `n_max`.
#[derive(Clone, Copy, Debug)]
pub struct HyperbolicityConstants {
    pub c0: f64,
    pub kappa: f64,
    pub kappa1: f64,
}

/// Extremes of `|(T^n)'|` over all `n`-symbol branches, from endpoint
/// evaluation of `(c x + d)^2` for the branch matrix.
pub fn branch_derivative_extremes(g: &SchottkyGroup, n: usize) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for w in admissible_words(g, n) {
        let m = g.word_matrix(&w).entries_f64();
        for t in g.successors(*w.last().unwrap()) {
            let i = g.interval(t);
            for x in [i.lo, i.hi] {
                let e = (m[2] * x + m[3]).powi(2);
                lo = lo.min(e);
                hi = hi.max(e);
            }
        }
    }
    (lo, hi)
}

pub fn hyperbolicity_constants(g: &SchottkyGroup, n_max: usize) -> HyperbolicityConstants {
    let n_max = n_max.max(1);
    let ext: Vec<(f64, f64)> = (1..=n_max).map(|n| branch_derivative_extremes(g, n)).collect();
    let kappa = ext[n_max - 1].0.powf(1.0 / n_max as f64);
    let kappa1 = ext
        .iter()
        .enumerate()
        .map(|(i, e)| e.1.powf(1.0 / (i + 1) as f64))
        .fold(kappa, f64::max);
    let mut c0 = 1.0f64;
    for (i, &(lo, hi)) in ext.iter().enumerate() {
        let n = (i + 1) as i32;
        c0 = c0.min(lo / kappa.powi(n)).min(kappa1.powi(n) / hi);
    }
    HyperbolicityConstants { c0, kappa, kappa1 }
}

/// Largest quotient `osc_C τ / θ^{|C|}` over cylinders `C` with at most
/// `n_max + 1` symbols: the measured `d_θ`-Lipschitz constant of `τ`.
pub fn roof_lipschitz_theta(g: &SchottkyGroup, theta: f64, n_max: usize) -> f64 {
    let mut best = 0.0f64;
    for n in 1..=n_max + 1 {
        for w in admissible_words(g, n) {
            let i = cylinder_interval_f64(g, &w);
            let osc = (roof_unchecked(g, i.lo, w[0]) - roof_unchecked(g, i.hi, w[0])).abs();
            best = best.max(osc / theta.powi(n as i32));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::reduce_mod;
    use proptest::prelude::*;

    #[test]
    fn subshift_structure() {
        let g = SchottkyGroup::reference();
        let sh = Subshift::new(&g, 0.25);
        assert_eq!(sh.mixing_exponent(), Some(2));
        for n in 1..=10 {
            assert_eq!(sh.count_words(n), 4 * 3u64.pow(n as u32 - 1));
        }
        // brute force over all 4^n words
        for n in 1..=6 {
            let mut count = 0;
            for code in 0..4usize.pow(n) {
                let w: Vec<usize> = (0..n).map(|i| (code / 4usize.pow(i)) % 4).collect();
                if sh.is_admissible(&w) {
                    count += 1;
                }
            }
            assert_eq!(count, sh.count_words(n as usize));
            assert_eq!(admissible_words(&g, n as usize).len(), count as usize);
        }
    }

    #[test]
    fn expanding_map_examples() {
        let g = SchottkyGroup::reference();
        let (y, next) = expanding_map(&g, 1.2, 0).unwrap();
        assert!((y - 0.5).abs() < 1e-15);
        assert_eq!(next, vec![0, 2, 3]);
        let fp = periodic_point(&g, &[0]);
        assert!((expanding_map(&g, fp, 0).unwrap().0 - fp).abs() < 1e-14);
        assert!(expanding_map(&g, 3.0, 0).is_err());
    }

    #[test]
    fn roof_examples() {
        let g = SchottkyGroup::reference();
        assert!(roof(&g, 1.0, 0).unwrap().abs() < 1e-15);
        assert!((roof(&g, 1.2, 0).unwrap() - (-2.0 * 0.4f64.ln())).abs() < 1e-12);
        assert!((roof(&g, 1.2, 0).unwrap() - 1.832_581_463_748_31).abs() < 1e-12);
    }

    #[test]
    fn cocycle_examples() {
        let g = SchottkyGroup::reference();
        assert_eq!(cocycle_of(&g, 0), IntMatrix2::from_i64(4, 1, 3, 1).unwrap());
        let g1 = g.generators()[0].clone();
        let g2 = g.generators()[1].clone();
        assert_eq!(cocycle_n(&g, &[0, 2]), &g1 * &g2);
        assert_eq!(reduce_mod(&cocycle_of(&g, 0), 3).e, [1, 1, 0, 1]);
    }

    #[test]
    fn d_theta_examples() {
        assert_eq!(d_theta(&[0, 2, 2, 1], &[0, 2, 2, 0], 0.5), 0.125);
        assert_eq!(d_theta(&[0, 2], &[0, 2], 0.5), 0.0);
        assert_eq!(d_theta(&[1, 2], &[0, 2], 0.5), 1.0);
    }

    #[test]
    fn cylinder_examples() {
        let g = SchottkyGroup::reference();
        for s in 0..4 {
            let i = cylinder_interval(&g, &[s]).unwrap();
            assert!(i.contains_interval(&g.interval(s)) && (i.diam() - g.interval(s).diam()).abs() < 1e-15);
        }
        let c = cylinder_interval(&g, &[0, 0]).unwrap();
        assert!(c.diam() < g.interval(0).diam() / 16.0);
        assert!(g.interval(0).contains_interval(&c));
        assert_eq!(cylinder_interval(&g, &[0, 1]), Err(Error::InadmissibleWord));
    }

    #[test]
    fn cylinders_nest_exactly() {
        let g = SchottkyGroup::reference();
        for n in 1..=5 {
            for w in admissible_words(&g, n) {
                let (lo, hi) = exact_cylinder(&g, &w);
                for t in g.successors(*w.last().unwrap()) {
                    let mut v = w.clone();
                    v.push(t);
                    let (a, b) = exact_cylinder(&g, &v);
                    assert!(lo <= a && b <= hi);
                }
            }
        }
    }

    #[test]
    fn reference_hyperbolicity() {
        let g = SchottkyGroup::reference();
        let h = hyperbolicity_constants(&g, 8);
        assert!(h.kappa >= 4.0);
        assert!(h.kappa1 >= h.kappa && h.kappa >= 1.0);
        assert!(h.c0 > 0.0 && h.c0 <= 1.0);
        // diameter bounds over all cylinders of length <= 8
        let base: f64 = g.intervals().iter().map(|i| i.diam()).fold(f64::INFINITY, f64::min);
        let top: f64 = g.intervals().iter().map(|i| i.diam()).fold(0.0, f64::max);
        for n in 1..=8usize {
            let m = n as i32 - 1;
            for w in admissible_words(&g, n) {
                let d = cylinder_interval(&g, &w).unwrap().diam();
                assert!(d >= h.c0 * base * h.kappa1.powi(-m) * (1.0 - 1e-9));
                assert!(d <= top * h.kappa.powi(-m) / h.c0 * (1.0 + 1e-9));
            }
        }
        let lip = roof_lipschitz_theta(&g, 1.0 / h.kappa, 6);
        assert!(lip.is_finite() && lip > 0.0);
    }

    fn arb_address() -> impl Strategy<Value = Vec<usize>> {
        (0usize..4, prop::collection::vec(0usize..3, 1..24)).prop_map(|(s0, steps)| {
            let mut w = vec![s0];
            for k in steps {
                let last = *w.last().unwrap();
                let next: Vec<usize> = (0..4).filter(|&t| t != inverse_symbol(last)).collect();
                w.push(next[k]);
            }
            w
        })
    }

    proptest! {
        #[test]
        fn roof_birkhoff_additivity(w in arb_address(), split in 0usize..24) {
            let g = SchottkyGroup::reference();
            let tail = periodic_point(&g, &[*w.last().unwrap()]);
            let n = w.len();
            let m = split % n;
            let total = birkhoff_roof(&g, &w, tail, n);
            let head = birkhoff_roof(&g, &w, tail, m);
            let rest = birkhoff_roof(&g, &w[m..], tail, n - m);
            prop_assert!((total - head - rest).abs() < 1e-12 * total.max(1.0));
        }

        #[test]
        fn cocycle_reduction_homomorphism(w in arb_address(), split in 0usize..24, q in 2u64..30) {
            let g = SchottkyGroup::reference();
            let m = split % w.len();
            let lhs = reduce_mod(&cocycle_n(&g, &w), q);
            let rhs = reduce_mod(&cocycle_n(&g, &w[..m]), q).mul(&reduce_mod(&cocycle_n(&g, &w[m..]), q));
            prop_assert_eq!(lhs, rhs);
        }
    }
}
