//! Double-double arithmetic.
//!
//! A value is an unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`, giving
//! about 106 bits of significand. Used for high-precision reference
//! evaluations where plain `f64` rounding noise would dominate.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

pub const LN_2: Dd = Dd { hi: 6.931471805599453e-1, lo: 2.3190468138462996e-17 };
pub const E: Dd = Dd { hi: 2.718281828459045, lo: 1.4456468917292502e-16 };

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    Dd { hi: s, lo: (a - (s - bb)) + (b - bb) }
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd { hi: s, lo: b - (s - a) }
}

fn two_prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    Dd { hi: p, lo: a.mul_add(b, -p) }
}

impl Dd {
    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }
}

impl From<f64> for Dd {
    fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let s = two_sum(self.hi, b.hi);
        let t = two_sum(self.lo, b.lo);
        let u = quick_two_sum(s.hi, s.lo + t.hi);
        quick_two_sum(u.hi, u.lo + t.lo)
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + -b
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let p = two_prod(self.hi, b.hi);
        let lo = p.lo + (self.hi * b.lo + self.lo * b.hi);
        quick_two_sum(p.hi, lo)
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        // Long division: three quotient digits.
        let q1 = self.hi / b.hi;
        let r = self - b * q1;
        let q2 = r.hi / b.hi;
        let r = r - b * q2;
        let q3 = r.hi / b.hi;
        quick_two_sum(q1, q2) + dd(q3)
    }
}

macro_rules! with_f64 {
    ($($tr:ident $f:ident),*) => {$(
        impl $tr<f64> for Dd {
            type Output = Dd;
            fn $f(self, b: f64) -> Dd {
                $tr::$f(self, dd(b))
            }
        }
        impl $tr<Dd> for f64 {
            type Output = Dd;
            fn $f(self, b: Dd) -> Dd {
                $tr::$f(dd(self), b)
            }
        }
    )*};
}
with_f64!(Add add, Sub sub, Mul mul, Div div);

impl AddAssign for Dd {
    fn add_assign(&mut self, b: Dd) {
        *self = *self + b;
    }
}

impl std::iter::Sum for Dd {
    fn sum<I: Iterator<Item = Dd>>(it: I) -> Dd {
        it.fold(dd(0.0), Add::add)
    }
}

const EXP_HALVINGS: i32 = 6;
const EXP_TERMS: usize = 16;

pub fn dd(x: f64) -> Dd {
    Dd::from(x)
}

pub fn to_f64(x: Dd) -> f64 {
    x.hi() + x.lo()
}

fn scale_pow2(x: Dd, k: i32) -> Dd {
    let s = 2f64.powi(k);
    Dd { hi: x.hi * s, lo: x.lo * s }
}

/// `e^x`: reduce by `ln 2`, halve the remainder, Taylor-expand, square back.
pub fn exp(x: Dd) -> Dd {
    if x.hi() < -745.0 {
        return dd(0.0);
    }
    if x.hi() > 709.0 {
        return dd(f64::INFINITY);
    }
    let k = (x.hi() / std::f64::consts::LN_2).round();
    let r = scale_pow2(x - LN_2 * k, -EXP_HALVINGS);
    let mut term = dd(1.0);
    let mut sum = dd(1.0);
    for n in 1..EXP_TERMS {
        term = term * r / n as f64;
        sum += term;
    }
    for _ in 0..EXP_HALVINGS {
        sum = sum * sum;
    }
    scale_pow2(sum, k as i32)
}

/// Natural log by two Newton steps on `exp`.
pub fn ln(y: Dd) -> Dd {
    assert!(y.hi() > 0.0, "ln of non-positive value");
    let mut x = dd(y.hi().ln());
    for _ in 0..2 {
        x = x + y * exp(-x) - 1.0;
    }
    x
}

pub fn tanh(x: Dd) -> Dd {
    let neg = x.hi() < 0.0;
    let e = exp(if neg { x * 2.0 } else { -x * 2.0 });
    let t = (dd(1.0) - e) / (dd(1.0) + e);
    if neg {
        -t
    } else {
        t
    }
}

pub fn sigmoid(x: Dd) -> Dd {
    if x.hi() >= 0.0 {
        dd(1.0) / (dd(1.0) + exp(-x))
    } else {
        let e = exp(x);
        e / (dd(1.0) + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Dd, b: Dd, tol: f64) -> bool {
        let d = to_f64(a - b).abs();
        d <= tol * to_f64(b).abs().max(1e-300)
    }

    #[test]
    fn constants() {
        assert!(close(exp(dd(1.0)), E, 1e-29));
        assert!(close(ln(E), dd(1.0), 1e-29));
        assert!(close(exp(LN_2 * 3.0), dd(8.0), 1e-29));
        assert_eq!(to_f64(exp(dd(-800.0))), 0.0);
    }

    #[test]
    fn identities_hold_to_double_double_precision() {
        for i in 0..200 {
            let x = dd(-6.0 + 0.0613 * i as f64);
            assert!(close(exp(x) * exp(-x), dd(1.0), 2e-29), "{i}");
            assert!(to_f64(ln(exp(x)) - x).abs() < 1e-29, "{i}");
            let t = tanh(x);
            let e2 = exp(x * 2.0);
            assert!(close(t, (e2 - 1.0) / (e2 + 1.0), 1e-28) || to_f64(x).abs() < 0.1);
            assert!(close(sigmoid(x) + sigmoid(-x), dd(1.0), 1e-30));
        }
    }

    #[test]
    fn central_differences_are_clean() {
        // The h^2 term of the central difference is included, so what is left
        // is the function's own rounding noise.
        let h = dd(1e-5);
        for i in 0..100 {
            let x = dd(-3.0 + 0.0617 * i as f64);
            let fd = (exp(x + h) - exp(x - h)) / (h * 2.0);
            let exact = exp(x) * (dd(1.0) + h * h / 6.0);
            assert!(close(fd, exact, 1e-20), "{i}");
        }
    }
}
