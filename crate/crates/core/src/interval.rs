//! Closed intervals over the extended reals.
//!
//! Used for variable boxes, natural interval extensions of expression DAGs,
//! and bound propagation in presolve. Endpoints may be infinite; NaN is never
//! stored. `0 * inf` is treated as `0` so that natural extensions stay sound
//! on unbounded boxes.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// Product that treats `0 * inf` as `0`.
fn mul_ext(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(!lo.is_nan() && !hi.is_nan(), "NaN interval endpoint");
        debug_assert!(lo <= hi, "inverted interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Interval::new(v, v)
    }

    pub fn whole() -> Self {
        Interval {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        if self.is_bounded() {
            0.5 * (self.lo + self.hi)
        } else if self.lo.is_finite() {
            self.lo + 1.0
        } else if self.hi.is_finite() {
            self.hi - 1.0
        } else {
            0.0
        }
    }

    /// `None` when the intersection is empty.
    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if lo <= hi {
            Some(Interval::new(lo, hi))
        } else {
            None
        }
    }

    pub fn add(&self, o: &Interval) -> Interval {
        Interval::new(self.lo + o.lo, self.hi + o.hi)
    }

    pub fn sub(&self, o: &Interval) -> Interval {
        Interval::new(self.lo - o.hi, self.hi - o.lo)
    }

    pub fn neg(&self) -> Interval {
        Interval::new(-self.hi, -self.lo)
    }

    pub fn mul(&self, o: &Interval) -> Interval {
        let c = [
            mul_ext(self.lo, o.lo),
            mul_ext(self.lo, o.hi),
            mul_ext(self.hi, o.lo),
            mul_ext(self.hi, o.hi),
        ];
        let mut lo = c[0];
        let mut hi = c[0];
        for &v in &c[1..] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Interval::new(lo, hi)
    }

    /// Multiplication by a scalar.
    pub fn scale(&self, c: f64) -> Interval {
        if c == 0.0 {
            return Interval::point(0.0);
        }
        let (a, b) = (mul_ext(self.lo, c), mul_ext(self.hi, c));
        if c > 0.0 {
            Interval::new(a, b)
        } else {
            Interval::new(b, a)
        }
    }

    /// Conservative division: spans everything when the divisor straddles zero.
    pub fn div(&self, o: &Interval) -> Interval {
        if o.contains(0.0) {
            return Interval::whole();
        }
        let d = |a: f64, b: f64| {
            if a == 0.0 {
                0.0
            } else {
                a / b
            }
        };
        let c = [
            d(self.lo, o.lo),
            d(self.lo, o.hi),
            d(self.hi, o.lo),
            d(self.hi, o.hi),
        ];
        let mut lo = c[0];
        let mut hi = c[0];
        for &v in &c[1..] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Interval::new(lo, hi)
    }

    pub fn square(&self) -> Interval {
        if self.lo >= 0.0 {
            Interval::new(self.lo * self.lo, mul_ext(self.hi, self.hi))
        } else if self.hi <= 0.0 {
            Interval::new(self.hi * self.hi, mul_ext(self.lo, self.lo))
        } else {
            let m = mul_ext(self.lo, self.lo).max(mul_ext(self.hi, self.hi));
            Interval::new(0.0, m)
        }
    }

    /// Integer power, `k >= 2`.
    pub fn powi(&self, k: u32) -> Interval {
        let k = k as i32;
        if k % 2 == 0 {
            if self.lo >= 0.0 {
                Interval::new(self.lo.powi(k), self.hi.powi(k))
            } else if self.hi <= 0.0 {
                Interval::new(self.hi.powi(k), self.lo.powi(k))
            } else {
                Interval::new(0.0, self.lo.powi(k).max(self.hi.powi(k)))
            }
        } else {
            Interval::new(self.lo.powi(k), self.hi.powi(k))
        }
    }

    pub fn exp(&self) -> Interval {
        Interval::new(self.lo.exp(), self.hi.exp())
    }

    /// Natural log restricted to the positive part of the interval.
    /// `None` when the interval is entirely non-positive.
    pub fn ln(&self) -> Option<Interval> {
        if self.hi <= 0.0 {
            return None;
        }
        let lo = if self.lo <= 0.0 {
            f64::NEG_INFINITY
        } else {
            self.lo.ln()
        };
        Some(Interval::new(lo, self.hi.ln()))
    }

    /// Signed k-th root hull of `self`, relaxed outward by a tiny margin so
    /// backward propagation never clips a feasible point.
    pub fn root_signed(&self, k: u32) -> Interval {
        let r = |v: f64| -> f64 {
            if v.is_infinite() {
                v
            } else {
                v.signum() * v.abs().powf(1.0 / k as f64)
            }
        };
        let lo = r(self.lo);
        let hi = r(self.hi);
        let slack = |v: f64| 1e-12 * (1.0 + v.abs());
        Interval::new(lo - slack(lo), hi + slack(hi))
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}
