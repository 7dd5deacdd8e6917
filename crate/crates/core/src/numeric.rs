//! Floating-point building blocks shared by the estimators.
//!
//! [`ExactSum`] returns the correctly rounded sum of its inputs, so any sum
//! that goes through it is independent of input order. [`DoubleF64`] is an
//! unevaluated pair `hi + lo` carrying roughly 106 bits; the delta-method
//! moment expansion uses it because its three terms cancel heavily once the
//! outcomes carry a large common offset.

/// Error-free sum: `a + b == s + e` exactly.
#[inline]
pub fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

#[inline]
fn fast_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let e = b - (s - a);
    (s, e)
}

/// Error-free product: `a * b == p + e` exactly (barring underflow).
#[inline]
pub fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// `a * b + c * d` with a single final rounding error in practice.
#[inline]
pub fn dot2(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let w = c * d;
    let err = c.mul_add(d, -w);
    a.mul_add(b, w) + err
}

/// Shewchuk-style accumulator of non-overlapping partials.
#[derive(Debug, Clone, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let (hi, lo) = fast_two_sum(x, y);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    /// Correctly rounded (round-half-even) value of the exact sum.
    pub fn value(&self) -> f64 {
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // Fix up a half-way case the naive top-down fold would round wrongly.
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }

    /// The exact sum rounded to a double-double.
    pub fn value_dd(&self) -> DoubleF64 {
        let hi = self.value();
        let mut rest = self.clone();
        rest.add(-hi);
        DoubleF64::new(hi, rest.value())
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = ExactSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Correctly rounded sum of `values`.
pub fn exact_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values.into_iter().collect::<ExactSum>().value()
}

/// Mean of `values` from the exact sum; a constant input returns that constant.
pub fn exact_mean<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut count = 0usize;
    let acc: ExactSum = values.into_iter().inspect(|_| count += 1).collect();
    assert!(count > 0, "mean of an empty sequence");
    (acc.value_dd() / count as f64).to_f64()
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DoubleF64 {
    pub hi: f64,
    pub lo: f64,
}

impl DoubleF64 {
    pub const ZERO: DoubleF64 = DoubleF64 { hi: 0.0, lo: 0.0 };

    pub fn new(hi: f64, lo: f64) -> Self {
        let (hi, lo) = two_sum(hi, lo);
        Self { hi, lo }
    }

    /// Exact product of two doubles.
    pub fn product(a: f64, b: f64) -> Self {
        let (hi, lo) = two_prod(a, b);
        Self { hi, lo }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn abs(self) -> Self {
        if self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0) {
            -self
        } else {
            self
        }
    }
}

impl From<f64> for DoubleF64 {
    fn from(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }
}

impl std::ops::Neg for DoubleF64 {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl std::ops::Add for DoubleF64 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let (s, e) = two_sum(self.hi, rhs.hi);
        let (t, f) = two_sum(self.lo, rhs.lo);
        let (s, e) = fast_two_sum(s, e + t);
        let (hi, lo) = fast_two_sum(s, e + f);
        Self { hi, lo }
    }
}

impl std::ops::Sub for DoubleF64 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl std::ops::AddAssign for DoubleF64 {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl std::ops::Mul for DoubleF64 {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let (p, e) = two_prod(self.hi, rhs.hi);
        let e = e + (self.hi * rhs.lo + self.lo * rhs.hi);
        let (hi, lo) = fast_two_sum(p, e);
        Self { hi, lo }
    }
}

impl std::ops::Mul<f64> for DoubleF64 {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        let (p, e) = two_prod(self.hi, rhs);
        let (hi, lo) = fast_two_sum(p, self.lo.mul_add(rhs, e));
        Self { hi, lo }
    }
}

impl std::ops::Div for DoubleF64 {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q1 = self.hi / rhs.hi;
        let r = self - rhs * q1;
        let q2 = r.hi / rhs.hi;
        let r = r - rhs * q2;
        let q3 = r.hi / rhs.hi;
        let (hi, lo) = fast_two_sum(q1, q2);
        Self { hi, lo } + DoubleF64::from(q3)
    }
}

impl std::ops::Div<f64> for DoubleF64 {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        self / DoubleF64::from(rhs)
    }
}
