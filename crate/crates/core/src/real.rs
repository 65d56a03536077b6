//! Scalar abstraction used by the small dense kernels that need to run in
//! either `f64` or double-double precision.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use twofloat::TwoFloat;

pub trait Real:
    Copy
    + Debug
    + PartialOrd
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    /// Relative rounding unit of the representation.
    const EPSILON: f64;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn abs(self) -> Self {
        if self < Self::zero() {
            -self
        } else {
            self
        }
    }

    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }
}

impl Real for f64 {
    const EPSILON: f64 = f64::EPSILON;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
}

/// Double-double scalar. Thin wrapper over [`TwoFloat`] whose own
/// double-double division is only accurate to about 1e-17.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Default)]
pub struct Dd(pub TwoFloat);

impl Dd {
    pub fn hi(self) -> f64 {
        self.0.hi()
    }
    pub fn lo(self) -> f64 {
        self.0.lo()
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        Dd(self.0 + o.0)
    }
}
impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        Dd(self.0 - o.0)
    }
}
impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        Dd(self.0 * o.0)
    }
}
impl Div for Dd {
    type Output = Dd;
    // long division with three f64 quotient digits
    fn div(self, o: Dd) -> Dd {
        let b = o.0.hi();
        let q1 = self.0.hi() / b;
        let r = self.0 - o.0 * q1;
        let q2 = r.hi() / b;
        let r = r - o.0 * q2;
        let q3 = r.hi() / b;
        Dd(TwoFloat::new_add(q1, q2) + q3)
    }
}
impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd(-self.0)
    }
}
impl AddAssign for Dd {
    fn add_assign(&mut self, o: Dd) {
        self.0 += o.0;
    }
}

impl Real for Dd {
    const EPSILON: f64 = 4.93e-32;

    fn from_f64(x: f64) -> Self {
        Dd(TwoFloat::from(x))
    }
    fn to_f64(self) -> f64 {
        self.0.hi() + self.0.lo()
    }
    fn sqrt(self) -> Self {
        Dd(self.0.sqrt())
    }
    fn exp(self) -> Self {
        Dd(dd_exp(self.0))
    }
}

// The library exp loses about half of the double-double digits for negative
// arguments; reduce by ln 2, then by 2^-5, and square back.
fn dd_exp(x: TwoFloat) -> TwoFloat {
    let hi = x.hi();
    if hi < -745.0 {
        return TwoFloat::from(0.0);
    }
    if hi > 709.0 {
        return TwoFloat::from(f64::INFINITY);
    }
    let ln2 = twofloat::consts::LN_2;
    let n = (hi / std::f64::consts::LN_2).round();
    let r = (x - ln2 * n) / 32.0;
    let mut term = TwoFloat::from(1.0);
    let mut sum = TwoFloat::from(1.0);
    for i in 1..=24 {
        term = term * r / (i as f64);
        sum += term;
    }
    for _ in 0..5 {
        sum = sum * sum;
    }
    sum * 2f64.powi(n as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dd_exp_matches_products() {
        // e^a * e^b == e^(a+b) to double-double accuracy
        for &(a, b) in &[(0.3, -2.7), (-17.25, 5.125), (-40.0, -33.5), (1e-3, 2.0)] {
            let lhs = dd_exp(TwoFloat::from(a)) * dd_exp(TwoFloat::from(b));
            let rhs = dd_exp(TwoFloat::from(a) + TwoFloat::from(b));
            let rel = ((lhs - rhs).hi() / rhs.hi()).abs();
            assert!(rel < 1e-30, "{a} {b}: {rel:e}");
        }
        let e = dd_exp(TwoFloat::from(1.0));
        let rel = ((e - twofloat::consts::E).hi() / e.hi()).abs();
        assert!(rel < 1e-30, "{rel:e}");
    }
}
