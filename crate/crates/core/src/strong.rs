//! Closed-form strong-threshold candidate for driftless GBM, quadratic cost
//! and an equal-weight two-rate discount mixture.

use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::value::{pow_pos, Order, Side, ValueSource};

/// Positive root of `sigma2/2 * g (g - 1) = q`.
pub fn gamma(q: f64, sigma2: f64) -> Result<f64> {
    if !(q > 0.0 && sigma2 > 0.0) || !q.is_finite() || !sigma2.is_finite() {
        return domain(format!(
            "gamma needs q > 0 and sigma2 > 0, got q = {q}, sigma2 = {sigma2}"
        ));
    }
    Ok(0.5 * (1.0 + (1.0 + 8.0 * q / sigma2).sqrt()))
}

/// Rejects parameters outside `q2 > q1 > sigma2 > 0`.
pub fn check_rate_ordering(sigma2: f64, q1: f64, q2: f64) -> Result<()> {
    let finite = sigma2.is_finite() && q1.is_finite() && q2.is_finite();
    if !(finite && sigma2 > 0.0 && q1 > sigma2 && q2 > q1) {
        return Err(Error::Parameter(format!(
            "assumption q2 > q1 > sigma2 > 0 violated (sigma2 = {sigma2}, q1 = {q1}, q2 = {q2})"
        )));
    }
    Ok(())
}

/// Threshold at which the aggregate second derivative vanishes from the left.
pub fn strong_threshold(sigma2: f64, q1: f64, q2: f64) -> Result<f64> {
    check_rate_ordering(sigma2, q1, q2)?;
    let (g1, g2) = (gamma(q1, sigma2)?, gamma(q2, sigma2)?);
    let (d1, d2) = (q1 - sigma2, q2 - sigma2);
    Ok((g1 + g2 - 2.0) * d1 * d2 / ((g1 - 2.0) * d2 + (g2 - 2.0) * d1))
}

/// `q1 + q2 - 2 b*`; its sign is the sign of `V'''(b*-)`.
pub fn regime_indicator(sigma2: f64, q1: f64, q2: f64) -> Result<f64> {
    Ok(q1 + q2 - 2.0 * strong_threshold(sigma2, q1, q2)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StrongCandidate {
    pub sigma2: f64,
    pub q: [f64; 2],
    pub gamma: [f64; 2],
    pub coef: [f64; 2],
    pub threshold: f64,
}

impl StrongCandidate {
    pub fn build(sigma2: f64, q1: f64, q2: f64) -> Result<Self> {
        let b = strong_threshold(sigma2, q1, q2)?;
        Self::with_threshold(sigma2, q1, q2, b)
    }

    /// Candidate reflecting at an arbitrary `b`, with coefficients fixed by
    /// `v'(b; q_i) = 1`. Only `b = b*` gives smooth fit.
    pub fn with_threshold(sigma2: f64, q1: f64, q2: f64, b: f64) -> Result<Self> {
        check_rate_ordering(sigma2, q1, q2)?;
        if !(b > 0.0 && b.is_finite()) {
            return domain(format!("threshold must be positive, got {b}"));
        }
        let q = [q1, q2];
        let gamma = [gamma(q1, sigma2)?, gamma(q2, sigma2)?];
        let coef =
            [0, 1].map(|i| (1.0 - b / (q[i] - sigma2)) / gamma[i] * pow_pos(b, 1.0 - gamma[i]));
        Ok(Self {
            sigma2,
            q,
            gamma,
            coef,
            threshold: b,
        })
    }

    fn waiting(&self, i: usize, x: f64, order: Order) -> f64 {
        let (a, g, d) = (self.coef[i], self.gamma[i], self.q[i] - self.sigma2);
        match order {
            Order::Value => a * pow_pos(x, g) + x * x / (2.0 * d),
            Order::First => a * g * pow_pos(x, g - 1.0) + x / d,
            Order::Second => a * g * (g - 1.0) * pow_pos(x, g - 2.0) + 1.0 / d,
        }
    }

    /// `v^{(order)}(x; q_i)` for atom `i` in {0, 1}.
    pub fn v(&self, i: usize, x: f64, order: Order, side: Side) -> Result<f64> {
        if i > 1 {
            return domain(format!("atom index {i} out of range"));
        }
        if !(x > 0.0) {
            return domain(format!("value function defined for x > 0, got {x}"));
        }
        let b = self.threshold;
        if x < b || (x == b && side == Side::Left) {
            return Ok(self.waiting(i, x, order));
        }
        Ok(match order {
            Order::Value => x - b + self.waiting(i, b, Order::Value),
            Order::First => 1.0,
            Order::Second => 0.0,
        })
    }

    pub fn aggregate(&self, x: f64, order: Order, side: Side) -> Result<f64> {
        Ok(0.5 * self.v(0, x, order, side)? + 0.5 * self.v(1, x, order, side)?)
    }

    /// Aggregate third derivative on the waiting piece, `0 < x <= b`.
    pub fn aggregate_third_left(&self, x: f64) -> Result<f64> {
        if !(x > 0.0 && x <= self.threshold) {
            return domain(format!("third derivative taken on (0, b], got {x}"));
        }
        let mut acc = 0.0;
        for i in 0..2 {
            let g = self.gamma[i];
            acc += 0.5 * self.coef[i] * g * (g - 1.0) * (g - 2.0) * pow_pos(x, g - 3.0);
        }
        Ok(acc)
    }

    /// `x^2/2 - (q1 v(x;q1) + q2 v(x;q2)) / 2`, which must be nonnegative on the strong region.
    pub fn phi(&self, x: f64) -> Result<f64> {
        let s = self.q[0] * self.v(0, x, Order::Value, Side::Right)?
            + self.q[1] * self.v(1, x, Order::Value, Side::Right)?;
        Ok(0.5 * x * x - 0.5 * s)
    }

    pub fn regime_indicator(&self) -> f64 {
        self.q[0] + self.q[1] - 2.0 * self.threshold
    }
}

impl ValueSource for StrongCandidate {
    fn atom_count(&self) -> usize {
        2
    }

    fn atom_value(&self, atom: usize, x: f64, order: Order, side: Side) -> Result<f64> {
        self.v(atom, x, order, side)
    }

    fn knots(&self) -> Vec<f64> {
        vec![self.threshold]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Bisection root of `g -> sigma2/2 g (g-1) - q` on `[1, 1e3]`.
    fn gamma_oracle(q: f64, sigma2: f64) -> f64 {
        let f = |g: f64| 0.5 * sigma2 * g * (g - 1.0) - q;
        let (mut lo, mut hi) = (1.0, 1e3);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Root in `b` of `V''(b-)` with coefficients `A_i(b)`.
    fn threshold_oracle(sigma2: f64, q1: f64, q2: f64) -> f64 {
        let f = |b: f64| {
            StrongCandidate::with_threshold(sigma2, q1, q2, b)
                .unwrap()
                .aggregate(b, Order::Second, Side::Left)
                .unwrap()
        };
        let (mut lo, mut hi) = (1e-6, 100.0);
        assert!(f(lo) * f(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn gamma_values() {
        assert_eq!(gamma(0.16, 0.16).unwrap(), 2.0);
        assert_relative_eq!(
            gamma(0.2, 0.16).unwrap(),
            gamma_oracle(0.2, 0.16),
            max_relative = 1e-12
        );
        assert_relative_eq!(gamma(0.2, 0.16).unwrap(), 2.1583, epsilon = 1e-4);
        assert_relative_eq!(
            gamma(3.0, 0.16).unwrap(),
            gamma_oracle(3.0, 0.16),
            max_relative = 1e-12
        );
        assert_relative_eq!(gamma(3.0, 0.16).unwrap(), 6.644, epsilon = 1e-3);
        assert!(matches!(gamma(0.0, 0.16), Err(Error::Domain(_))));
        assert!(matches!(gamma(0.2, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn thresholds_match_root_finder() {
        for &(s, q1, q2) in &[(0.16, 0.2, 0.4), (0.16, 0.2, 3.0)] {
            let b = strong_threshold(s, q1, q2).unwrap();
            assert_relative_eq!(b, threshold_oracle(s, q1, q2), max_relative = 1e-9);
        }
        assert_relative_eq!(
            strong_threshold(0.16, 0.2, 0.4).unwrap(),
            0.4065,
            epsilon = 1e-4
        );
        assert_relative_eq!(
            strong_threshold(0.16, 0.2, 3.0).unwrap(),
            1.2162,
            epsilon = 1e-4
        );
    }

    #[test]
    fn regime_signs() {
        assert_relative_eq!(
            regime_indicator(0.16, 0.2, 0.4).unwrap(),
            -0.2131,
            epsilon = 1e-3
        );
        assert_relative_eq!(
            regime_indicator(0.16, 0.2, 3.0).unwrap(),
            0.7675,
            epsilon = 1e-3
        );
        assert!(regime_indicator(0.16, 0.2, 0.2 + 1e-9).unwrap() < 0.0);
    }

    #[test]
    fn third_derivative_limit_matches_indicator() {
        for &(s, q1, q2) in &[(0.16, 0.2, 0.4), (0.16, 0.2, 3.0), (0.05, 0.3, 1.1)] {
            let c = StrongCandidate::build(s, q1, q2).unwrap();
            let b = c.threshold;
            let lhs = c.aggregate_third_left(b).unwrap();
            assert_relative_eq!(lhs, c.regime_indicator() / (s * b * b), max_relative = 1e-9);
        }
    }

    #[test]
    fn degenerate_rates_rejected() {
        assert!(matches!(
            StrongCandidate::build(0.16, 0.2, 0.2),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            StrongCandidate::build(0.16, 0.2, 0.1),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            StrongCandidate::build(0.3, 0.2, 0.4),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn pasting_at_threshold() {
        let c = StrongCandidate::build(0.16, 0.2, 0.4).unwrap();
        let b = c.threshold;
        for i in 0..2 {
            assert_relative_eq!(
                c.v(i, b, Order::First, Side::Left).unwrap(),
                1.0,
                max_relative = 1e-12
            );
            assert_eq!(
                c.v(i, b, Order::Value, Side::Left).unwrap(),
                c.v(i, b, Order::Value, Side::Right).unwrap()
            );
            assert!(c.v(i, 1e-12, Order::Value, Side::Left).unwrap().abs() < 1e-20);
        }
        assert!(c.aggregate(b, Order::Second, Side::Left).unwrap().abs() < 1e-12);
        assert!(c.v(0, 0.0, Order::Value, Side::Left).is_err());
    }

    #[test]
    fn small_gap_has_derivative_below_one() {
        let c = StrongCandidate::build(0.16, 0.2, 0.4).unwrap();
        let b = c.threshold;
        let max = (1..2000)
            .map(|k| {
                c.aggregate(b * k as f64 / 2000.0, Order::First, Side::Left)
                    .unwrap()
            })
            .fold(f64::MIN, f64::max);
        assert!(max < 1.0);
    }

    proptest! {
        #[test]
        fn characteristic_identity(sigma2 in 0.01f64..2.0, ratio in 1.0001f64..50.0) {
            let q = sigma2 * ratio;
            let g = gamma(q, sigma2).unwrap();
            prop_assert!((0.5 * sigma2 * g * (g - 1.0) - q).abs() <= 1e-12 * q.max(1.0));
            prop_assert!(g > 2.0);
            // positivity used throughout the construction
            prop_assert!(q - (g - 1.0) * sigma2 > 0.0);
        }

        #[test]
        fn waiting_ode_residual(sigma2 in 0.02f64..0.5, r1 in 1.05f64..5.0, gap in 0.05f64..20.0, t in 0.01f64..0.999) {
            let q1 = sigma2 * r1;
            let q2 = q1 + gap;
            let c = StrongCandidate::build(sigma2, q1, q2).unwrap();
            let x = t * c.threshold;
            for i in 0..2 {
                let v = c.v(i, x, Order::Value, Side::Left).unwrap();
                let v2 = c.v(i, x, Order::Second, Side::Left).unwrap();
                let res = 0.5 * x * x + 0.5 * sigma2 * x * x * v2 - c.q[i] * v;
                let scale = (0.5 * x * x).max(c.q[i] * v.abs());
                prop_assert!(res.abs() <= 1e-9 * scale);
            }
        }
    }
}
