//! Exact 2x2 integer matrices of determinant one, their boundary action, and
//! reduction modulo `q`.

use std::fmt;
use std::ops::Mul;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::{Error, Result};

/// Element of `SL2(Z)` with arbitrary-precision entries, laid out as
/// `[[a, b], [c, d]]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IntMatrix2 {
    a: BigInt,
    b: BigInt,
    c: BigInt,
    d: BigInt,
}

impl IntMatrix2 {
    pub fn new(a: BigInt, b: BigInt, c: BigInt, d: BigInt) -> Result<Self> {
        let det = &a * &d - &b * &c;
        if !det.is_one() {
            return Err(Error::NotUnimodular(det.to_string()));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn from_i64(a: i64, b: i64, c: i64, d: i64) -> Result<Self> {
        Self::new(a.into(), b.into(), c.into(), d.into())
    }

    pub fn identity() -> Self {
        Self {
            a: BigInt::one(),
            b: BigInt::zero(),
            c: BigInt::zero(),
            d: BigInt::one(),
        }
    }

    pub fn a(&self) -> &BigInt {
        &self.a
    }
    pub fn b(&self) -> &BigInt {
        &self.b
    }
    pub fn c(&self) -> &BigInt {
        &self.c
    }
    pub fn d(&self) -> &BigInt {
        &self.d
    }

    pub fn entries_f64(&self) -> [f64; 4] {
        [&self.a, &self.b, &self.c, &self.d].map(|e| e.to_f64().unwrap_or(f64::NAN))
    }

    pub fn inverse(&self) -> Self {
        Self {
            a: self.d.clone(),
            b: -&self.b,
            c: -&self.c,
            d: self.a.clone(),
        }
    }

    pub fn trace(&self) -> BigInt {
        &self.a + &self.d
    }

    pub fn is_identity(&self) -> bool {
        self.a.is_one() && self.d.is_one() && self.b.is_zero() && self.c.is_zero()
    }

    /// `|trace| > 2`.
    pub fn is_hyperbolic(&self) -> bool {
        self.trace().abs() > BigInt::from(2)
    }

    /// Exact action on a rational point; `None` at the pole.
    pub fn apply_rational(&self, x: &BigRational) -> Option<BigRational> {
        let num = BigRational::from_integer(self.a.clone()) * x + BigRational::from_integer(self.b.clone());
        let den = BigRational::from_integer(self.c.clone()) * x + BigRational::from_integer(self.d.clone());
        if den.is_zero() {
            None
        } else {
            Some(num / den)
        }
    }

    /// The pole `-d/c` of the boundary action, or `None` when `c = 0`.
    pub fn pole(&self) -> Option<BigRational> {
        if self.c.is_zero() {
            None
        } else {
            Some(BigRational::new(-&self.d, self.c.clone()))
        }
    }
}

impl Mul for &IntMatrix2 {
    type Output = IntMatrix2;
    fn mul(self, o: &IntMatrix2) -> IntMatrix2 {
        IntMatrix2 {
            a: &self.a * &o.a + &self.b * &o.c,
            b: &self.a * &o.b + &self.b * &o.d,
            c: &self.c * &o.a + &self.d * &o.c,
            d: &self.c * &o.b + &self.d * &o.d,
        }
    }
}

impl Mul for IntMatrix2 {
    type Output = IntMatrix2;
    fn mul(self, o: IntMatrix2) -> IntMatrix2 {
        &self * &o
    }
}

impl fmt::Display for IntMatrix2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{},{}],[{},{}]]", self.a, self.b, self.c, self.d)
    }
}

/// A point of the boundary `R ∪ {∞}` of the upper half-plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundaryPoint {
    Real(f64),
    Infinity,
}

impl BoundaryPoint {
    pub fn value(self) -> Option<f64> {
        match self {
            BoundaryPoint::Real(x) => Some(x),
            BoundaryPoint::Infinity => None,
        }
    }
}

/// `(a x + b) / (c x + d)`, with the point at infinity handled by limits.
pub fn mobius_apply(g: &IntMatrix2, x: BoundaryPoint) -> BoundaryPoint {
    let [a, b, c, d] = g.entries_f64();
    match x {
        BoundaryPoint::Infinity => {
            if c == 0.0 {
                BoundaryPoint::Infinity
            } else {
                BoundaryPoint::Real(a / c)
            }
        }
        BoundaryPoint::Real(x) => {
            let den = c * x + d;
            if den == 0.0 {
                BoundaryPoint::Infinity
            } else {
                BoundaryPoint::Real((a * x + b) / den)
            }
        }
    }
}

/// Real-valued action on a finite point, for hot loops.
#[inline]
pub fn mobius_f64(m: &[f64; 4], x: f64) -> f64 {
    (m[0] * x + m[1]) / (m[2] * x + m[3])
}

/// The derivative `1 / (c x + d)^2`.
pub fn mobius_derivative(g: &IntMatrix2, x: f64) -> Result<f64> {
    let [_, _, c, d] = g.entries_f64();
    let den = c * x + d;
    if den == 0.0 {
        return Err(Error::Pole(x));
    }
    Ok(1.0 / (den * den))
}

/// Translation length `2 ln((|t| + sqrt(t^2 - 4)) / 2)` of a hyperbolic element.
pub fn trace_length(g: &IntMatrix2) -> Result<f64> {
    let t = g.trace();
    if t.abs() <= BigInt::from(2) {
        return Err(Error::NotHyperbolic(t.to_string()));
    }
    Ok(length_from_trace(&t))
}

pub(crate) fn length_from_trace(t: &BigInt) -> f64 {
    let t = t.abs().to_f64().unwrap_or(f64::INFINITY);
    if t > 1e150 {
        // sqrt(t^2 - 4) = t to working precision
        return 2.0 * t.ln();
    }
    2.0 * ((t + (t * t - 4.0).sqrt()) / 2.0).ln()
}

/// Hyperbolic distance `d(i, g i) = arccosh((a^2 + b^2 + c^2 + d^2) / 2)`.
pub fn orbit_distance(g: &IntMatrix2) -> f64 {
    let n2 = &g.a * &g.a + &g.b * &g.b + &g.c * &g.c + &g.d * &g.d;
    let x = n2.to_f64().unwrap_or(f64::INFINITY) / 2.0;
    if x > 1e150 {
        return (2.0 * x).ln();
    }
    x.max(1.0).acosh()
}

/// Element of `SL2(Z/qZ)` with entries in `[0, q)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModElement {
    pub q: u64,
    pub e: [u64; 4],
}

impl ModElement {
    pub fn identity(q: u64) -> Self {
        Self {
            q,
            e: [1 % q, 0, 0, 1 % q],
        }
    }

    pub fn mul(&self, o: &Self) -> Self {
        let q = self.q;
        let [a, b, c, d] = self.e;
        let [x, y, z, w] = o.e;
        Self {
            q,
            e: [(a * x + b * z) % q, (a * y + b * w) % q, (c * x + d * z) % q, (c * y + d * w) % q],
        }
    }

    pub fn inverse(&self) -> Self {
        let q = self.q;
        let [a, b, c, d] = self.e;
        Self {
            q,
            e: [d, (q - b) % q, (q - c) % q, a],
        }
    }

    pub fn det(&self) -> u64 {
        let [a, b, c, d] = self.e;
        (a * d % self.q + self.q - b * c % self.q) % self.q
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity(self.q)
    }

    /// Reduction to a divisor level.
    pub fn reduce(&self, q2: u64) -> Self {
        Self {
            q: q2,
            e: self.e.map(|x| x % q2),
        }
    }
}

/// Entrywise reduction of `g` into `SL2(Z/qZ)`.
pub fn reduce_mod(g: &IntMatrix2, q: u64) -> ModElement {
    let qb = BigInt::from(q);
    let r = |x: &BigInt| x.mod_floor(&qb).to_u64().expect("residue fits u64");
    ModElement {
        q,
        e: [r(&g.a), r(&g.b), r(&g.c), r(&g.d)],
    }
}
