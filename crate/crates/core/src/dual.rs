//! Forward-mode dual numbers carrying three partial derivatives.
//!
//! Used to differentiate biquad coefficient design with respect to
//! (gain, frequency, Q) without writing out every cookbook derivative by hand.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dual3 {
    pub v: f64,
    pub d: [f64; 3],
}

impl Dual3 {
    pub fn constant(v: f64) -> Self {
        Dual3 { v, d: [0.0; 3] }
    }

    /// Independent variable number `slot` with value `v`.
    pub fn var(v: f64, slot: usize) -> Self {
        let mut d = [0.0; 3];
        d[slot] = 1.0;
        Dual3 { v, d }
    }

    fn chain(self, v: f64, dv: f64) -> Self {
        Dual3 {
            v,
            d: self.d.map(|x| x * dv),
        }
    }

    pub fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }

    pub fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }

    pub fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }
}

impl Add for Dual3 {
    type Output = Dual3;
    fn add(self, o: Dual3) -> Dual3 {
        Dual3 {
            v: self.v + o.v,
            d: [self.d[0] + o.d[0], self.d[1] + o.d[1], self.d[2] + o.d[2]],
        }
    }
}

impl Sub for Dual3 {
    type Output = Dual3;
    fn sub(self, o: Dual3) -> Dual3 {
        self + (-o)
    }
}

impl Neg for Dual3 {
    type Output = Dual3;
    fn neg(self) -> Dual3 {
        Dual3 {
            v: -self.v,
            d: self.d.map(|x| -x),
        }
    }
}

impl Mul for Dual3 {
    type Output = Dual3;
    fn mul(self, o: Dual3) -> Dual3 {
        Dual3 {
            v: self.v * o.v,
            d: [
                self.d[0] * o.v + self.v * o.d[0],
                self.d[1] * o.v + self.v * o.d[1],
                self.d[2] * o.v + self.v * o.d[2],
            ],
        }
    }
}

impl Div for Dual3 {
    type Output = Dual3;
    fn div(self, o: Dual3) -> Dual3 {
        let inv = 1.0 / o.v;
        let q = self.v * inv;
        Dual3 {
            v: q,
            d: [
                (self.d[0] - q * o.d[0]) * inv,
                (self.d[1] - q * o.d[1]) * inv,
                (self.d[2] - q * o.d[2]) * inv,
            ],
        }
    }
}

impl Add<f64> for Dual3 {
    type Output = Dual3;
    fn add(self, o: f64) -> Dual3 {
        Dual3 {
            v: self.v + o,
            d: self.d,
        }
    }
}

impl Sub<f64> for Dual3 {
    type Output = Dual3;
    fn sub(self, o: f64) -> Dual3 {
        self + (-o)
    }
}

impl Mul<f64> for Dual3 {
    type Output = Dual3;
    fn mul(self, o: f64) -> Dual3 {
        Dual3 {
            v: self.v * o,
            d: self.d.map(|x| x * o),
        }
    }
}

impl Mul<Dual3> for f64 {
    type Output = Dual3;
    fn mul(self, o: Dual3) -> Dual3 {
        o * self
    }
}

impl Sub<Dual3> for f64 {
    type Output = Dual3;
    fn sub(self, o: Dual3) -> Dual3 {
        -o + self
    }
}

impl Add<Dual3> for f64 {
    type Output = Dual3;
    fn add(self, o: Dual3) -> Dual3 {
        o + self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_finite_differences() {
        let f = |a: Dual3, b: Dual3, c: Dual3| ((a * b).sin() + c.exp() / (a + 3.0)).sqrt() - b.cos();
        let (a, b, c) = (0.7, 1.3, 0.2);
        let y = f(Dual3::var(a, 0), Dual3::var(b, 1), Dual3::var(c, 2));
        let h = 1e-6;
        let scalar = |a: f64, b: f64, c: f64| {
            f(Dual3::constant(a), Dual3::constant(b), Dual3::constant(c)).v
        };
        let fd = [
            (scalar(a + h, b, c) - scalar(a - h, b, c)) / (2.0 * h),
            (scalar(a, b + h, c) - scalar(a, b - h, c)) / (2.0 * h),
            (scalar(a, b, c + h) - scalar(a, b, c - h)) / (2.0 * h),
        ];
        for i in 0..3 {
            assert!((y.d[i] - fd[i]).abs() < 1e-7, "slot {i}: {} vs {}", y.d[i], fd[i]);
        }
    }
}
