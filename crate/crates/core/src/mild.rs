//! Closed-form mild-threshold candidate: a control rate that is zero below
//! a lower threshold and explodes at an upper threshold, for driftless GBM,
//! quadratic cost and an equal-weight two-rate discount mixture.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{domain, Result};
use crate::model::ControlRate;
use crate::strong::{check_rate_ordering, gamma};
use crate::value::{pow_pos, Order, Side, ValueSource};

pub const DEFAULT_RATE_CAP: f64 = 1e15;

/// Every constant of the mild construction; computed whether or not the
/// thresholds come out ordered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MildConstants {
    pub sigma2: f64,
    pub q: [f64; 2],
    pub gamma: [f64; 2],
    /// Waiting-region coefficients of `x^gamma_i`.
    pub waiting_coef: [f64; 2],
    /// `v = quadratic/2 x^2 + linear x + constant` on the mild region.
    pub quadratic: [f64; 2],
    pub linear: [f64; 2],
    pub constant: [f64; 2],
    pub lower_threshold: f64,
    pub beta: f64,
}

impl MildConstants {
    pub fn compute(sigma2: f64, q1: f64, q2: f64) -> Result<Self> {
        check_rate_ordering(sigma2, q1, q2)?;
        let q = [q1, q2];
        let gamma = [gamma(q1, sigma2)?, gamma(q2, sigma2)?];
        let gap = q2 - q1;
        let quadratic = [-2.0 / gap, 2.0 / gap];
        let linear = [2.0 * q2 / gap, -2.0 * q1 / gap];
        let shifted = [0, 1].map(|i| quadratic[i] - 1.0 / (q[i] - sigma2));
        let bl = ((gamma[0] - 1.0) * linear[0] + (gamma[1] - 1.0) * linear[1])
            / ((2.0 - gamma[0]) * shifted[0] + (2.0 - gamma[1]) * shifted[1]);
        let waiting_coef = [0, 1].map(|i| {
            (quadratic[i] * bl - bl / (q[i] - sigma2) + linear[i]) / gamma[i]
                * pow_pos(bl, 1.0 - gamma[i])
        });
        let constant = [0, 1].map(|i| {
            // (-1)^i with the atoms numbered from one
            let sign = if i == 0 { -1.0 } else { 1.0 };
            let square = 0.5
                * bl
                * bl
                * (1.0 + (sigma2 - q[i]) * quadratic[i]
                    - sign * sigma2 * (gamma[0] - 2.0) * shifted[0]);
            let lin = bl * (sign * 0.5 * sigma2 * (gamma[0] - 1.0) * linear[0] + q[i] * linear[i]);
            (square - lin) / q[i]
        });
        Ok(Self {
            sigma2,
            q,
            gamma,
            waiting_coef,
            quadratic,
            linear,
            constant,
            lower_threshold: bl,
            beta: 0.5 * (q1 + q2),
        })
    }

    pub fn is_ordered(&self) -> bool {
        self.lower_threshold > 0.0 && self.lower_threshold < self.beta
    }

    /// `(gamma_i - 2)(1/(q_i - sigma2) - a_i) x - (gamma_i - 1) b_i`.
    pub fn g(&self, i: usize, x: f64) -> f64 {
        (self.gamma[i] - 2.0) * (1.0 / (self.q[i] - self.sigma2) - self.quadratic[i]) * x
            - (self.gamma[i] - 1.0) * self.linear[i]
    }

    /// Certificate polynomial whose nonnegativity on the mild region gives
    /// `u*(x) >= sigma2 x^2 / (beta - x)`.
    pub fn growth_certificate(&self, x: f64) -> f64 {
        let (s, q1, q2) = (self.sigma2, self.q[0], self.q[1]);
        (0.5 - (3.0 * s - q1) / (q2 - q1)) * x * x
            - 2.0 * q1 * q2 / (q2 - q1) * x
            - q1 * self.constant[0]
    }

    /// Numerator of the rate.
    pub fn rate_numerator(&self, x: f64) -> f64 {
        let (s, q1) = (self.sigma2, self.q[0]);
        0.5 * (1.0 + (s - q1) * self.quadratic[0]) * x * x
            - q1 * self.linear[0] * x
            - q1 * self.constant[0]
    }

    /// `a1 x + b1 - 1`, written as `(-a1)(beta - x)` so it vanishes exactly at beta.
    pub fn rate_denominator(&self, x: f64) -> f64 {
        -self.quadratic[0] * (self.beta - x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MildInvalidity {
    pub constants: MildConstants,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub enum MildBuild {
    Valid(MildCandidate),
    Invalid(MildInvalidity),
}

impl MildBuild {
    pub fn valid(self) -> Option<MildCandidate> {
        match self {
            MildBuild::Valid(c) => Some(c),
            MildBuild::Invalid(_) => None,
        }
    }

    pub fn constants(&self) -> &MildConstants {
        match self {
            MildBuild::Valid(c) => &c.constants,
            MildBuild::Invalid(r) => &r.constants,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MildCandidate {
    pub constants: MildConstants,
    pub rate_cap: f64,
}

/// Builds the candidate, or an invalidity report when the thresholds are not ordered.
pub fn build_mild(sigma2: f64, q1: f64, q2: f64) -> Result<MildBuild> {
    let constants = MildConstants::compute(sigma2, q1, q2)?;
    if constants.is_ordered() {
        return Ok(MildBuild::Valid(MildCandidate {
            constants,
            rate_cap: DEFAULT_RATE_CAP,
        }));
    }
    let reason = format!(
        "lower threshold {} not in (0, beta = {})",
        constants.lower_threshold, constants.beta
    );
    Ok(MildBuild::Invalid(MildInvalidity { constants, reason }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthBoundReport {
    pub points: usize,
    pub min_certificate: f64,
    pub argmin_certificate: f64,
    pub min_bound: f64,
    pub argmin_bound: f64,
}

impl MildCandidate {
    pub fn lower_threshold(&self) -> f64 {
        self.constants.lower_threshold
    }

    pub fn beta(&self) -> f64 {
        self.constants.beta
    }

    /// Candidate control rate; zero below the lower threshold, clamped at `rate_cap`.
    pub fn u_star(&self, x: f64) -> Result<f64> {
        let c = &self.constants;
        if !(x > 0.0 && x < c.beta) {
            return domain(format!("rate defined on (0, {}), got {x}", c.beta));
        }
        if x < c.lower_threshold {
            return Ok(0.0);
        }
        Ok((c.rate_numerator(x) / c.rate_denominator(x)).min(self.rate_cap))
    }

    /// The rate as a [`ControlRate`], zero at and above beta.
    pub fn control_rate(&self) -> ControlRate {
        let cand = *self;
        let beta = self.beta();
        ControlRate::new(
            Arc::new(move |x| {
                if x > 0.0 && x < beta {
                    cand.u_star(x).unwrap_or(0.0)
                } else {
                    0.0
                }
            }),
            vec![self.lower_threshold()],
        )
        .expect("single finite discontinuity")
    }

    fn waiting(&self, i: usize, x: f64, order: Order) -> f64 {
        let c = &self.constants;
        let (a, g, d) = (c.waiting_coef[i], c.gamma[i], c.q[i] - c.sigma2);
        match order {
            Order::Value => a * pow_pos(x, g) + x * x / (2.0 * d),
            Order::First => a * g * pow_pos(x, g - 1.0) + x / d,
            Order::Second => a * g * (g - 1.0) * pow_pos(x, g - 2.0) + 1.0 / d,
        }
    }

    fn mild(&self, i: usize, x: f64, order: Order) -> f64 {
        let c = &self.constants;
        match order {
            Order::Value => 0.5 * c.quadratic[i] * x * x + c.linear[i] * x + c.constant[i],
            Order::First => c.quadratic[i] * x + c.linear[i],
            Order::Second => c.quadratic[i],
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
        let (bl, beta) = (self.lower_threshold(), self.beta());
        let left = side == Side::Left;
        if x < bl || (x == bl && left) {
            Ok(self.waiting(i, x, order))
        } else if x < beta || (x == beta && left) {
            Ok(self.mild(i, x, order))
        } else {
            Ok(match order {
                Order::Value => x - beta + self.mild(i, beta, Order::Value),
                Order::First => 1.0,
                Order::Second => 0.0,
            })
        }
    }

    pub fn aggregate(&self, x: f64, order: Order, side: Side) -> Result<f64> {
        Ok(0.5 * self.v(0, x, order, side)? + 0.5 * self.v(1, x, order, side)?)
    }

    /// Rate at the lower threshold through the `g_1` closed form.
    pub fn u_star_at_lower_closed_form(&self) -> f64 {
        let c = &self.constants;
        let bl = c.lower_threshold;
        0.5 * c.sigma2 * bl * c.g(0, bl) / c.rate_denominator(bl)
    }

    /// Minima of the growth certificate and of `u*(x)/(sigma2 x^2) - 1/(beta - x)` on `grid`.
    pub fn growth_bound(&self, grid: &[f64]) -> GrowthBoundReport {
        let c = &self.constants;
        let mut rep = GrowthBoundReport {
            points: 0,
            min_certificate: f64::INFINITY,
            argmin_certificate: f64::NAN,
            min_bound: f64::INFINITY,
            argmin_bound: f64::NAN,
        };
        for &x in grid {
            if !(x >= c.lower_threshold && x < c.beta) {
                continue;
            }
            rep.points += 1;
            let m = c.growth_certificate(x);
            if m < rep.min_certificate {
                rep.min_certificate = m;
                rep.argmin_certificate = x;
            }
            let u = c.rate_numerator(x) / c.rate_denominator(x);
            let bound = u / (c.sigma2 * x * x) - 1.0 / (c.beta - x);
            if bound < rep.min_bound {
                rep.min_bound = bound;
                rep.argmin_bound = x;
            }
        }
        rep
    }
}

impl ValueSource for MildCandidate {
    fn atom_count(&self) -> usize {
        2
    }

    fn atom_value(&self, atom: usize, x: f64, order: Order, side: Side) -> Result<f64> {
        self.v(atom, x, order, side)
    }

    fn knots(&self) -> Vec<f64> {
        vec![self.lower_threshold(), self.beta()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn case() -> MildCandidate {
        build_mild(0.16, 0.2, 3.0).unwrap().valid().unwrap()
    }

    /// Solves `v1' + v2' = 2`, `q1 v1' + q2 v2' = 2x` for the mild-region derivatives.
    fn derivative_oracle(q1: f64, q2: f64, x: f64) -> (f64, f64) {
        let det = q2 - q1;
        ((2.0 * q2 - 2.0 * x) / det, (2.0 * x - 2.0 * q1) / det)
    }

    /// Lower threshold from the jump balance of `V''` at the pasting point,
    /// with `A_i` and `c_i` tied to the trial threshold by C^1 pasting.
    fn lower_threshold_oracle(sigma2: f64, q1: f64, q2: f64) -> f64 {
        let c = MildConstants::compute(sigma2, q1, q2).unwrap();
        // V''(b-) from the waiting piece with A_i(b) minus V''(b+) = 0
        let jump = |b: f64| {
            let mut acc = 0.0;
            for i in 0..2 {
                let (g, d) = (c.gamma[i], c.q[i] - sigma2);
                let a = (c.quadratic[i] * b - b / d + c.linear[i]) / g * pow_pos(b, 1.0 - g);
                acc += 0.5 * (a * g * (g - 1.0) * pow_pos(b, g - 2.0) + 1.0 / d);
                acc -= 0.5 * c.quadratic[i];
            }
            acc
        };
        let (mut lo, mut hi) = (1e-3, c.beta);
        assert!(jump(lo) * jump(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if jump(lo) * jump(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn case_study_constants() {
        let c = case();
        assert_eq!(c.beta(), 1.6);
        assert_relative_eq!(
            c.lower_threshold(),
            lower_threshold_oracle(0.16, 0.2, 3.0),
            max_relative = 1e-9
        );
        assert_relative_eq!(c.lower_threshold(), 0.7016, epsilon = 2e-3);
        let k = c.constants;
        let x = 1.1;
        let (d1, d2) = derivative_oracle(0.2, 3.0, x);
        assert_relative_eq!(k.quadratic[0] * x + k.linear[0], d1, max_relative = 1e-12);
        assert_relative_eq!(k.quadratic[1] * x + k.linear[1], d2, max_relative = 1e-12);
        assert_relative_eq!(k.quadratic[0], -0.7143, epsilon = 1e-4);
        assert_relative_eq!(k.linear[0], 2.1429, epsilon = 1e-4);
    }

    #[test]
    fn rate_shape() {
        let c = case();
        let bl = c.lower_threshold();
        assert_eq!(c.u_star(bl / 2.0).unwrap(), 0.0);
        let direct = c.u_star(bl).unwrap();
        assert!(direct > 0.0);
        assert_relative_eq!(
            c.u_star_at_lower_closed_form(),
            direct,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            c.constants.g(0, bl),
            -c.constants.g(1, bl),
            max_relative = 1e-9
        );
        assert!(c.u_star(1.6 - 1e-6).unwrap() > 1e5);
        assert!(c.constants.rate_numerator(1.6) > 0.0);
        assert!(matches!(c.u_star(1.6), Err(Error::Domain(_))));
        assert!(matches!(c.u_star(0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn rate_increasing_on_mild_region() {
        let c = case();
        let (bl, beta) = (c.lower_threshold(), c.beta());
        let n = 5000;
        let vals: Vec<f64> = (0..n)
            .map(|k| {
                c.u_star(bl + (beta - 1e-6 - bl) * k as f64 / (n - 1) as f64)
                    .unwrap()
            })
            .collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn pasting() {
        let c = case();
        let (bl, beta) = (c.lower_threshold(), c.beta());
        for i in 0..2 {
            for order in [Order::Value, Order::First] {
                let l = c.v(i, bl, order, Side::Left).unwrap();
                let r = c.v(i, bl, order, Side::Right).unwrap();
                assert!(
                    (l - r).abs() <= 1e-9 * l.abs().max(1.0),
                    "atom {i} order {order:?}"
                );
            }
            assert_relative_eq!(
                c.v(i, beta, Order::First, Side::Left).unwrap(),
                1.0,
                max_relative = 1e-12
            );
            assert!(c.v(i, 1e-12, Order::Value, Side::Left).unwrap().abs() < 1e-20);
        }
        let l = c.aggregate(bl, Order::Second, Side::Left).unwrap();
        let r = c.aggregate(bl, Order::Second, Side::Right).unwrap();
        assert!((l - r).abs() <= 1e-9);
        assert_eq!(c.aggregate(beta, Order::Second, Side::Left).unwrap(), 0.0);
    }

    #[test]
    fn aggregate_slope_one_on_mild_region() {
        let c = case();
        for k in 1..100 {
            let x = c.lower_threshold() + (c.beta() - c.lower_threshold()) * k as f64 / 100.0;
            let d1 = c.v(0, x, Order::First, Side::Right).unwrap();
            let d2 = c.v(1, x, Order::First, Side::Right).unwrap();
            assert!((d1 + d2 - 2.0).abs() < 1e-12);
            assert!((0.2 * d1 + 3.0 * d2 - 2.0 * x).abs() < 1e-12);
        }
    }

    fn mild_grid(c: &MildCandidate, n: usize) -> Vec<f64> {
        let (bl, beta) = (c.lower_threshold(), c.beta());
        (0..n)
            .map(|k| bl + (beta - bl) * k as f64 / n as f64)
            .collect()
    }

    #[test]
    fn growth_bound_at_case_study_parameters() {
        // The certificate is sufficient only; at q2 = 3 it fails near the
        // lower threshold but holds on the approach to beta.
        let c = case();
        let (bl, beta) = (c.lower_threshold(), c.beta());
        let rep = c.growth_bound(&mild_grid(&c, 2000));
        assert_eq!(rep.points, 2000);
        assert!(rep.min_certificate < 0.0);
        let upper: Vec<f64> = mild_grid(&c, 2000)
            .into_iter()
            .filter(|&x| x >= 1.0)
            .collect();
        let rep = c.growth_bound(&upper);
        assert!(rep.min_certificate >= 0.0 && rep.min_bound >= 0.0);
        let at_left = c.growth_bound(&[bl]);
        let expect = c.u_star(bl).unwrap() / (0.16 * bl * bl) - 1.0 / (beta - bl);
        assert_relative_eq!(at_left.min_bound, expect, max_relative = 1e-12);
    }

    #[test]
    fn growth_bound_large_gap() {
        let c = build_mild(0.16, 0.2, 50.0).unwrap().valid().unwrap();
        let rep = c.growth_bound(&mild_grid(&c, 20_000));
        assert!(rep.min_certificate >= 0.0);
        assert!(rep.min_bound >= 0.0);
    }

    #[test]
    fn small_gap_is_report_only() {
        let b = build_mild(0.16, 0.2, 0.21).unwrap();
        if let Some(c) = b.clone().valid() {
            let grid: Vec<f64> = (0..100)
                .map(|k| c.lower_threshold() + (c.beta() - c.lower_threshold()) * k as f64 / 100.0)
                .collect();
            let _ = c.growth_bound(&grid);
        } else {
            assert!(!b.constants().is_ordered());
        }
    }

    proptest! {
        #[test]
        fn coefficient_identities(sigma2 in 0.02f64..0.5, r1 in 1.05f64..5.0, gap in 0.05f64..30.0) {
            let q1 = sigma2 * r1;
            let q2 = q1 + gap;
            let c = MildConstants::compute(sigma2, q1, q2).unwrap();
            let (a, b) = (c.quadratic, c.linear);
            let scale = 1.0 + a[0].abs() + b[0].abs();
            prop_assert!((a[0] + a[1]).abs() <= 1e-12 * scale);
            prop_assert!((b[0] + b[1] - 2.0).abs() <= 1e-12 * scale);
            prop_assert!((q1 * a[0] + q2 * a[1] - 2.0).abs() <= 1e-12 * scale * q2);
            prop_assert!((q1 * b[0] + q2 * b[1]).abs() <= 1e-12 * scale * q2);
        }

        #[test]
        fn mild_region_ode(sigma2 in 0.05f64..0.3, r1 in 1.1f64..3.0, gap in 2.0f64..30.0, t in 0.0f64..0.99) {
            let q1 = sigma2 * r1;
            let q2 = q1 + gap;
            if let Some(c) = build_mild(sigma2, q1, q2).unwrap().valid() {
                let x = c.lower_threshold() + t * (c.beta() - c.lower_threshold());
                let u = c.u_star(x).unwrap();
                for i in 0..2 {
                    let v = c.v(i, x, Order::Value, Side::Right).unwrap();
                    let v1 = c.v(i, x, Order::First, Side::Right).unwrap();
                    let v2 = c.v(i, x, Order::Second, Side::Right).unwrap();
                    let terms = [0.5 * x * x, 0.5 * sigma2 * x * x * v2, u * v1, c.constants.q[i] * v, u];
                    let res = terms[0] + terms[1] - terms[2] - terms[3] + terms[4];
                    let scale = terms.iter().fold(0.0f64, |m, t| m.max(t.abs()));
                    prop_assert!(res.abs() <= 1e-9 * scale, "res {} scale {}", res, scale);
                }
            }
        }
    }
}
