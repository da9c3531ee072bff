//! Real polynomials in the level variable.

use serde::{Deserialize, Serialize};

/// `x ↦ Σ c_k x^k`, coefficients in increasing degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolyExpr {
    coeffs: Vec<f64>,
}

impl PolyExpr {
    /// Returns `None` for an empty list or non-finite coefficients.
    pub fn new(coeffs: Vec<f64>) -> Option<Self> {
        if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return None;
        }
        Some(Self { coeffs })
    }

    pub fn constant(c: f64) -> Self {
        Self { coeffs: vec![c] }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Degree ignoring trailing zero coefficients.
    pub fn degree(&self) -> usize {
        self.coeffs.iter().rposition(|&c| c != 0.0).unwrap_or(0)
    }

    pub fn is_constant(&self) -> bool {
        self.degree() == 0
    }

    /// Horner evaluation.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> PolyExpr {
        if self.coeffs.len() <= 1 {
            return PolyExpr::zero();
        }
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, &c)| k as f64 * c)
            .collect();
        PolyExpr { coeffs }
    }

    pub fn scale(&self, s: f64) -> PolyExpr {
        PolyExpr {
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    /// Real roots in `[lo, hi]`, ascending.
    ///
    /// Recurses on the derivative: between consecutive critical points the
    /// polynomial is monotone, so each sign change brackets exactly one root.
    pub fn roots_in(&self, lo: f64, hi: f64) -> Vec<f64> {
        let deg = self.degree();
        if deg == 0 || lo > hi {
            return Vec::new();
        }
        let mut knots = vec![lo];
        knots.extend(self.derivative().roots_in(lo, hi));
        knots.push(hi);

        let mut roots: Vec<f64> = Vec::new();
        for w in knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (fa, fb) = (self.eval(a), self.eval(b));
            if fa == 0.0 {
                push_unique(&mut roots, a);
            } else if fa * fb < 0.0 {
                push_unique(&mut roots, bisect(self, a, b, fa));
            }
        }
        if self.eval(hi) == 0.0 {
            push_unique(&mut roots, hi);
        }
        roots
    }

    /// Critical points (roots of the derivative) in `[lo, hi]`.
    pub fn critical_points_in(&self, lo: f64, hi: f64) -> Vec<f64> {
        self.derivative().roots_in(lo, hi)
    }

    /// Exact `min |p|` over `[lo, hi]`.
    pub fn min_abs_on(&self, lo: f64, hi: f64) -> f64 {
        if !self.roots_in(lo, hi).is_empty() {
            return 0.0;
        }
        self.extremal_points(lo, hi)
            .into_iter()
            .map(|x| self.eval(x).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Exact `max |p|` over `[lo, hi]`.
    pub fn max_abs_on(&self, lo: f64, hi: f64) -> f64 {
        self.extremal_points(lo, hi)
            .into_iter()
            .map(|x| self.eval(x).abs())
            .fold(0.0, f64::max)
    }

    fn extremal_points(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut pts = vec![lo, hi];
        pts.extend(self.critical_points_in(lo, hi));
        pts
    }
}

fn push_unique(roots: &mut Vec<f64>, r: f64) {
    if roots.last().is_none_or(|&last| (r - last).abs() > 1e-14 * (1.0 + r.abs())) {
        roots.push(r);
    }
}

fn bisect(p: &PolyExpr, mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = p.eval(mid);
        if fm == 0.0 {
            return mid;
        }
        if fa * fm < 0.0 {
            b = mid;
        } else {
            a = mid;
            fa = fm;
        }
    }
    0.5 * (a + b)
}
