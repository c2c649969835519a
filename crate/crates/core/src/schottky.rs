//! Ping-pong data of a classical Schottky group: symbol intervals from isometric
//! circles, reduced words and word balls, and a box-counting dimension oracle.
//!
//! Symbols are indices into the alphabet: `2i` is generator `i` and `2i + 1`
//! its inverse, so the involution `s -> s̄` is `s ^ 1`.

use std::collections::HashSet;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

use crate::arith::IntMatrix2;
use crate::{Error, Result};

pub type Symbol = usize;

#[inline]
pub fn inverse_symbol(s: Symbol) -> Symbol {
    s ^ 1
}

/// Closed real interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(a: f64, b: f64) -> Self {
        Self { lo: a.min(b), hi: a.max(b) }
    }
    pub fn diam(&self) -> f64 {
        self.hi - self.lo
    }
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
    pub fn contains_interval(&self, o: &Interval) -> bool {
        self.lo <= o.lo && o.hi <= self.hi
    }
    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Validated Schottky group.
#[derive(Clone, Debug)]
pub struct SchottkyGroup {
    generators: Vec<IntMatrix2>,
    /// Matrix of each symbol.
    symbols: Vec<IntMatrix2>,
    symbols_f64: Vec<[f64; 4]>,
    intervals: Vec<Interval>,
    exact_intervals: Vec<(BigRational, BigRational)>,
    /// Smallest `|T'|` on the part of `I_s` mapped onto allowed intervals.
    min_expansion: Vec<f64>,
    max_expansion: Vec<f64>,
}

fn isometric_disk(m: &IntMatrix2) -> (BigRational, BigRational) {
    // centre -d/c, radius 1/|c|
    let c = m.c().clone();
    let d = m.d().clone();
    let a = BigRational::new(-&d - 1, c.clone());
    let b = BigRational::new(-&d + 1, c);
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn rat_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Extremes of `(c x + d)^2` over `[lo, hi]`; the square is monotone on an
/// interval avoiding the pole, so endpoints suffice.
fn derivative_extremes(m: &IntMatrix2, lo: &BigRational, hi: &BigRational) -> Option<(f64, f64)> {
    let c = BigRational::from_integer(m.c().clone());
    let d = BigRational::from_integer(m.d().clone());
    let u = &c * lo + &d;
    let v = &c * hi + &d;
    if u.is_zero() || v.is_zero() || (u.is_positive() != v.is_positive()) {
        return None;
    }
    let (u, v) = (rat_f64(&u).powi(2), rat_f64(&v).powi(2));
    Some((u.min(v), u.max(v)))
}

impl SchottkyGroup {
    /// Checks hyperbolicity, strict disjointness of the isometric-circle
    /// intervals and the ping-pong inclusions `s(I_t) ⊂ I_s` for `t ≠ s̄`.
    pub fn validate(generators: Vec<IntMatrix2>) -> Result<Self> {
        if generators.len() < 2 {
            return Err(Error::TooFewGenerators(generators.len()));
        }
        let mut symbols = Vec::with_capacity(2 * generators.len());
        for g in &generators {
            if !g.is_hyperbolic() {
                return Err(Error::NotHyperbolic(g.trace().to_string()));
            }
            symbols.push(g.clone());
            symbols.push(g.inverse());
        }
        let k = symbols.len();
        let exact_intervals: Vec<_> = symbols.iter().map(|s| isometric_disk(&s.inverse())).collect();
        let intervals: Vec<_> = exact_intervals
            .iter()
            .map(|(a, b)| Interval::new(rat_f64(a), rat_f64(b)))
            .collect();
        for s in 0..k {
            for t in s + 1..k {
                let (a0, a1) = &exact_intervals[s];
                let (b0, b1) = &exact_intervals[t];
                if !(a1 < b0 || b1 < a0) {
                    let lo = if a0 > b0 { a0 } else { b0 };
                    let hi = if a1 < b1 { a1 } else { b1 };
                    return Err(Error::IntervalsOverlap(s, t, rat_f64(&(hi - lo))));
                }
            }
        }
        let mut min_expansion = vec![f64::INFINITY; k];
        let mut max_expansion = vec![0.0f64; k];
        for s in 0..k {
            let (s_lo, s_hi) = &exact_intervals[s];
            for t in (0..k).filter(|&t| t != inverse_symbol(s)) {
                let (lo, hi) = &exact_intervals[t];
                let (dmin, dmax) = derivative_extremes(&symbols[s], lo, hi)
                    .ok_or(Error::IntervalsOverlap(s, t, 0.0))?;
                let (x, y) = (symbols[s].apply_rational(lo), symbols[s].apply_rational(hi));
                let inside = |p: &Option<BigRational>| p.as_ref().is_some_and(|p| s_lo <= p && p <= s_hi);
                if !(inside(&x) && inside(&y)) || dmin <= 1.0 {
                    return Err(Error::IntervalsOverlap(s, t, 0.0));
                }
                min_expansion[s] = min_expansion[s].min(dmin);
                max_expansion[s] = max_expansion[s].max(dmax);
            }
        }
        let symbols_f64 = symbols.iter().map(|m| m.entries_f64()).collect();
        Ok(Self {
            generators,
            symbols,
            symbols_f64,
            intervals,
            exact_intervals,
            min_expansion,
            max_expansion,
        })
    }

    /// The two-generator group used throughout the tests: traces 5 and 6.
    pub fn reference() -> Self {
        Self::validate(vec![
            IntMatrix2::from_i64(4, 1, 3, 1).unwrap(),
            IntMatrix2::from_i64(29, -167, 4, -23).unwrap(),
        ])
        .expect("reference group is ping-pong valid")
    }

    /// Parses one generator per line as `a b c d`; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut gens = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let nums: Vec<BigInt> = line
                .split_whitespace()
                .map(|w| w.parse::<BigInt>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", ln + 1)))?;
            if nums.len() != 4 {
                return Err(Error::Parse(format!("line {}: expected 4 integers", ln + 1)));
            }
            let [a, b, c, d]: [BigInt; 4] = nums.try_into().unwrap();
            gens.push(IntMatrix2::new(a, b, c, d)?);
        }
        Self::validate(gens)
    }

    pub fn generators(&self) -> &[IntMatrix2] {
        &self.generators
    }
    pub fn alphabet_size(&self) -> usize {
        self.symbols.len()
    }
    pub fn symbol_matrix(&self, s: Symbol) -> &IntMatrix2 {
        &self.symbols[s]
    }
    pub fn symbol_f64(&self, s: Symbol) -> &[f64; 4] {
        &self.symbols_f64[s]
    }
    pub fn interval(&self, s: Symbol) -> Interval {
        self.intervals[s]
    }
    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }
    pub fn exact_interval(&self, s: Symbol) -> &(BigRational, BigRational) {
        &self.exact_intervals[s]
    }
    pub fn min_expansion(&self, s: Symbol) -> f64 {
        self.min_expansion[s]
    }
    pub fn max_expansion(&self, s: Symbol) -> f64 {
        self.max_expansion[s]
    }

    /// Symbols allowed to follow `s`.
    pub fn successors(&self, s: Symbol) -> impl Iterator<Item = Symbol> {
        (0..self.alphabet_size()).filter(move |&t| t != inverse_symbol(s))
    }

    /// Index of the interval containing `x`.
    pub fn locate(&self, x: f64) -> Option<Symbol> {
        self.intervals.iter().position(|i| i.contains(x))
    }

    pub fn word_matrix(&self, word: &[Symbol]) -> IntMatrix2 {
        word.iter()
            .fold(IntMatrix2::identity(), |acc, &s| &acc * &self.symbols[s])
    }

    /// Attracting fixed point of a hyperbolic element.
    pub fn attracting_fixed_point(m: &IntMatrix2) -> f64 {
        let [a, b, c, d] = m.entries_f64();
        // c x^2 + (d - a) x - b = 0, attracting root has |c x + d| > 1
        let disc = ((d - a) * (d - a) + 4.0 * b * c).sqrt();
        let r1 = ((a - d) + disc) / (2.0 * c);
        let r2 = ((a - d) - disc) / (2.0 * c);
        if (c * r1 + d).abs() > (c * r2 + d).abs() {
            r1
        } else {
            r2
        }
    }
}

/// Reduced word together with its exact product.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedWord {
    pub symbols: Vec<Symbol>,
    pub matrix: IntMatrix2,
}

/// Closed-form size of the radius-`m` ball in a free group of rank `l`.
pub fn word_ball_size(rank: usize, m: usize) -> usize {
    let k = 2 * rank;
    if m == 0 {
        return 1;
    }
    1 + k * ((k - 1).pow(m as u32) - 1) / (k - 2)
}

/// All reduced words of length at most `m`, shortest first.
pub fn word_ball(g: &SchottkyGroup, m: usize, cap: usize) -> Result<Vec<ReducedWord>> {
    let size = word_ball_size(g.generators.len(), m);
    if size > cap {
        return Err(Error::ResourceLimit(format!("word ball of radius {m} has {size} elements")));
    }
    let mut out = vec![ReducedWord {
        symbols: vec![],
        matrix: IntMatrix2::identity(),
    }];
    let mut start = 0;
    for _ in 0..m {
        let end = out.len();
        for i in start..end {
            let last = out[i].symbols.last().copied();
            for t in 0..g.alphabet_size() {
                if last.is_some_and(|l| t == inverse_symbol(l)) {
                    continue;
                }
                let mut symbols = out[i].symbols.clone();
                symbols.push(t);
                let matrix = &out[i].matrix * g.symbol_matrix(t);
                out.push(ReducedWord { symbols, matrix });
            }
        }
        start = end;
    }
    Ok(out)
}

/// Result of the box-counting oracle.
#[derive(Clone, Debug)]
pub struct BoxCount {
    pub dimension: f64,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
    pub low_confidence: bool,
}

/// Cylinder intervals of all admissible words with `depth + 1` symbols, in
/// floating point.
pub(crate) fn cylinder_intervals_f64(g: &SchottkyGroup, depth: usize) -> Vec<Interval> {
    fn rec(g: &SchottkyGroup, m: [f64; 4], last: Symbol, left: usize, out: &mut Vec<Interval>) {
        if left == 0 {
            let i = g.interval(last);
            out.push(Interval::new(
                crate::arith::mobius_f64(&m, i.lo),
                crate::arith::mobius_f64(&m, i.hi),
            ));
            return;
        }
        let s = g.symbol_f64(last);
        for t in g.successors(last) {
            let p = [
                m[0] * s[0] + m[1] * s[2],
                m[0] * s[1] + m[1] * s[3],
                m[2] * s[0] + m[3] * s[2],
                m[2] * s[1] + m[3] * s[3],
            ];
            rec(g, p, t, left - 1, out);
        }
    }
    let mut out = Vec::new();
    for s in 0..g.alphabet_size() {
        // the one-symbol word (s) is the base interval I_s itself
        rec(g, [1.0, 0.0, 0.0, 1.0], s, depth, &mut out);
    }
    out
}

/// Box-counting estimate of the limit-set dimension from the depth-`depth`
/// cylinder cover, regressing log box count against log inverse box size over
/// scales between the largest cylinder and a fixed coarse scale.
pub fn boxcount_dimension(g: &SchottkyGroup, depth: usize, cap: usize) -> Result<BoxCount> {
    let count = g.alphabet_size() * (g.alphabet_size() - 1).pow(depth as u32);
    if count > cap {
        return Err(Error::ResourceLimit(format!("{count} cylinders at depth {depth}")));
    }
    let cyl = cylinder_intervals_f64(g, depth);
    let dmax = cyl.iter().map(|c| c.diam()).fold(0.0, f64::max);
    let coarse = 0.01 * g.intervals.iter().map(|i| i.diam()).fold(f64::INFINITY, f64::min);
    let fine = 4.0 * dmax;
    let n_scales = 14;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut boxes = HashSet::new();
    for k in 0..n_scales {
        let eps = fine * (coarse / fine).powf(k as f64 / (n_scales - 1) as f64);
        boxes.clear();
        for c in &cyl {
            let lo = (c.lo / eps).floor() as i64;
            let hi = (c.hi / eps).floor() as i64;
            for b in lo..=hi {
                boxes.insert(b);
            }
        }
        xs.push(-eps.ln());
        ys.push((boxes.len() as f64).ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(BoxCount {
        dimension: slope,
        residual,
        low_confidence: residual > 0.05,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::FromPrimitive;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from_i64(n).unwrap(), BigInt::from_i64(d).unwrap())
    }

    #[test]
    fn reference_intervals() {
        let g = SchottkyGroup::reference();
        assert_eq!(g.exact_interval(0), &(rat(1, 1), rat(5, 3)));
        assert_eq!(g.exact_interval(1), &(rat(-2, 3), rat(0, 1)));
        assert_eq!(g.exact_interval(2), &(rat(7, 1), rat(15, 2)));
        assert_eq!(g.exact_interval(3), &(rat(11, 2), rat(6, 1)));
    }

    #[test]
    fn reference_expansion() {
        let g = SchottkyGroup::reference();
        assert_eq!(g.min_expansion(0), 16.0);
        assert_eq!(g.min_expansion(1), 16.0);
        assert_eq!(g.min_expansion(2), 25.0);
        assert_eq!(g.min_expansion(3), 25.0);
        // largest: g2 over I_{g1^-1} endpoint -2/3: (4(-2/3) - 23)^2
        assert!((g.max_expansion(2) - (23.0f64 + 8.0 / 3.0).powi(2)).abs() < 1e-9);
    }

    #[test]
    fn tangent_circles_rejected() {
        let gens = vec![
            IntMatrix2::from_i64(2, 1, 1, 1).unwrap(),
            IntMatrix2::from_i64(2, -1, -1, 1).unwrap(),
        ];
        assert!(matches!(SchottkyGroup::validate(gens), Err(Error::IntervalsOverlap(..))));
    }

    #[test]
    fn single_generator_rejected() {
        let gens = vec![IntMatrix2::from_i64(4, 1, 3, 1).unwrap()];
        assert_eq!(SchottkyGroup::validate(gens).unwrap_err(), Error::TooFewGenerators(1));
    }

    #[test]
    fn parse_group_file() {
        let g = SchottkyGroup::parse("# reference\n4 1 3 1\n\n29 -167 4 -23\n").unwrap();
        assert_eq!(g.generators().len(), 2);
        assert!(SchottkyGroup::parse("4 1 3\n").is_err());
    }

    #[test]
    fn word_ball_sizes() {
        let g = SchottkyGroup::reference();
        for m in 0..=8 {
            let ball = word_ball(&g, m, 1 << 20).unwrap();
            assert_eq!(ball.len(), word_ball_size(2, m));
            let distinct: HashSet<_> = ball.iter().map(|w| w.matrix.clone()).collect();
            assert_eq!(distinct.len(), ball.len());
        }
        assert_eq!(word_ball_size(2, 1), 5);
        assert_eq!(word_ball_size(2, 2), 17);
        assert!(word_ball(&g, 8, 100).is_err());
    }

    #[test]
    fn attracting_fixed_points_in_first_interval() {
        let g = SchottkyGroup::reference();
        for w in word_ball(&g, 6, 1 << 20).unwrap().iter().skip(1) {
            let x = SchottkyGroup::attracting_fixed_point(&w.matrix);
            assert!(g.interval(w.symbols[0]).contains(x), "{:?} {x}", w.symbols);
        }
    }

    #[test]
    fn boxcount_near_dimension() {
        let g = SchottkyGroup::reference();
        let b8 = boxcount_dimension(&g, 8, 1 << 22).unwrap();
        assert!(b8.dimension > 0.0 && b8.dimension < 1.0);
        // pressure root computed by the thermo module
        assert!((b8.dimension - 0.221_552_078_519_264_7).abs() < 0.02);
    }
}
