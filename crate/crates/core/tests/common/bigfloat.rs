//! Fixed-point reals with 320 fractional bits on top of `BigInt`, with just
//! enough transcendental functions (exp, ln, sqrt) to re-derive the losses.

use std::ops::{Add, Div, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};

const FRAC_BITS: usize = 320;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Big(BigInt);

impl Big {
    pub fn zero() -> Self {
        Big(BigInt::zero())
    }

    pub fn one() -> Self {
        Big(BigInt::one() << FRAC_BITS)
    }

    pub fn from_int(v: i64) -> Self {
        Big(BigInt::from(v) << FRAC_BITS)
    }

    /// Exact conversion of a finite double.
    pub fn from_f64(x: f64) -> Self {
        assert!(x.is_finite());
        if x == 0.0 {
            return Big::zero();
        }
        let bits = x.to_bits();
        let negative = bits >> 63 == 1;
        let exp_bits = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mantissa, exp) = if exp_bits == 0 { (frac, -1074) } else { (frac | (1u64 << 52), exp_bits - 1075) };
        let m = BigInt::from(mantissa);
        let shift = exp + FRAC_BITS as i64;
        let mag = if shift >= 0 { m << shift as usize } else { m >> (-shift) as usize };
        Big(if negative { -mag } else { mag })
    }

    pub fn ratio(num: usize, den: usize) -> Self {
        Big((BigInt::from(num) << FRAC_BITS) / BigInt::from(den))
    }

    pub fn to_f64(&self) -> f64 {
        // Keep 64 significant bits before the final rounding to a double.
        let bits = self.0.bits() as i64;
        let drop = (bits - 64).max(0);
        let top = (&self.0 >> drop as usize).to_f64().expect("fits");
        top * 2f64.powi((drop - FRAC_BITS as i64) as i32)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn sqrt(&self) -> Self {
        assert!(!self.0.is_negative());
        Big((&self.0 << FRAC_BITS).sqrt())
    }

    fn ln2() -> Self {
        // ln 2 = 2 atanh(1/3).
        Big::atanh_series(&Big::ratio(1, 3)) * Big::from_int(2)
    }

    fn atanh_series(t: &Big) -> Big {
        let t2 = t.clone() * t.clone();
        let mut power = t.clone();
        let mut sum = Big::zero();
        let mut n = 1;
        loop {
            let term = Big(&power.0 / BigInt::from(n));
            if term.is_zero() {
                return sum;
            }
            sum = sum + term;
            power = power * t2.clone();
            n += 2;
        }
    }

    pub fn exp(&self) -> Self {
        let ln2 = Big::ln2();
        let k = (self.clone() / ln2.clone()).round();
        let r = self.clone() - ln2 * Big::from_int(k);
        let mut term = Big::one();
        let mut sum = Big::one();
        let mut n = 1;
        loop {
            term = Big((term * r.clone()).0 / BigInt::from(n));
            if term.is_zero() {
                break;
            }
            sum = sum + term.clone();
            n += 1;
        }
        if k >= 0 {
            Big(sum.0 << k as usize)
        } else {
            Big(sum.0 >> (-k) as usize)
        }
    }

    pub fn ln(&self) -> Self {
        assert!(self.0.is_positive(), "ln of a non-positive value");
        // Scale into [1, 2): self = m · 2^k.
        let k = self.0.bits() as i64 - 1 - FRAC_BITS as i64;
        let m = if k >= 0 { Big(&self.0 >> k as usize) } else { Big(&self.0 << (-k) as usize) };
        let t = (m.clone() - Big::one()) / (m + Big::one());
        Big::atanh_series(&t) * Big::from_int(2) + Big::ln2() * Big::from_int(k)
    }

    fn round(&self) -> i64 {
        let half = BigInt::one() << (FRAC_BITS - 1);
        let shifted = (&self.0 + half) >> FRAC_BITS;
        shifted.to_i64().expect("small")
    }
}

impl Add for Big {
    type Output = Big;
    fn add(self, o: Big) -> Big {
        Big(self.0 + o.0)
    }
}

impl Sub for Big {
    type Output = Big;
    fn sub(self, o: Big) -> Big {
        Big(self.0 - o.0)
    }
}

impl Mul for Big {
    type Output = Big;
    fn mul(self, o: Big) -> Big {
        Big((self.0 * o.0) >> FRAC_BITS)
    }
}

impl Div for Big {
    type Output = Big;
    fn div(self, o: Big) -> Big {
        Big((self.0 << FRAC_BITS) / o.0)
    }
}

impl Neg for Big {
    type Output = Big;
    fn neg(self) -> Big {
        Big(-self.0)
    }
}

pub fn sum(values: impl IntoIterator<Item = Big>) -> Big {
    values.into_iter().fold(Big::zero(), |a, b| a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transcendental_reference_values() {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-15 * b.abs().max(1.0);
        assert!(close(Big::ln2().to_f64(), std::f64::consts::LN_2));
        assert!(close(Big::one().exp().to_f64(), std::f64::consts::E));
        assert!(close(Big::from_f64(-7.25).exp().to_f64(), (-7.25f64).exp()));
        assert!(close(Big::from_f64(10.0).ln().to_f64(), std::f64::consts::LN_10));
        assert!(close(Big::from_f64(0.003).ln().to_f64(), 0.003f64.ln()));
        assert!(close(Big::from_int(2).sqrt().to_f64(), std::f64::consts::SQRT_2));
        assert_eq!(Big::from_f64(-0.1).to_f64(), -0.1);
        // Exact while 53 bits fit above the 2^-320 resolution.
        assert_eq!(Big::from_f64(1e-70).to_f64(), 1e-70);
        assert!(Big::from_f64(1e-300).is_zero());
    }
}
