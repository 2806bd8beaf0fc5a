//! Scale function of the controlled diffusion on `[c, beta)` and a numerical
//! Feller test for the upper boundary `beta`.
//!
//! Quantities are cached at knots (the base point, declared rate
//! discontinuities, a uniform subdivision and a geometric ladder toward
//! `beta`) and evaluated between knots by nested quadrature from the
//! nearest knot below: a fixed Kronrod rule for the inner integrals and an
//! adaptive one for the outermost.

use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::model::{ControlRate, DiffusionModel, RegionPartition};
use crate::quad::{integrate, kronrod, QuadConfig};

/// Ratio of successive increments at or above which a sequence is taken to diverge.
pub const DIVERGENCE_RATIO: f64 = 0.5;
/// Relative size of the last increment below which a sequence is taken to converge.
pub const CAUCHY_TOLERANCE: f64 = 1e-3;

// Closest approach of the knot ladder to beta, relative to beta - c.
const LADDER_FLOOR: f64 = 1e-11;
// Uniform knots on the first half of [c, beta).
const UNIFORM_KNOTS: usize = 32;

#[derive(Debug, Clone, Copy)]
struct Knot {
    x: f64,
    /// `int_c^x 2 (mu - u) / sigma^2`
    drift: f64,
    s: f64,
    /// `int_c^x 2 / (s' sigma^2)`
    speed: f64,
    entrance: f64,
    speed_scale: f64,
}

#[derive(Clone)]
pub struct ScaleFunction {
    model: DiffusionModel,
    rate: ControlRate,
    beta: f64,
    base: f64,
    knots: Vec<Knot>,
    quad: QuadConfig,
}

impl std::fmt::Debug for ScaleFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScaleFunction")
            .field("beta", &self.beta)
            .field("base", &self.base)
            .field("knots", &self.knots.len())
            .finish()
    }
}

/// Midpoint of the widest waiting interval; a finite stand-in is used for an infinite end.
pub fn default_base_point(regions: &RegionPartition) -> Option<f64> {
    regions
        .waiting
        .iter()
        .filter(|w| w.lower.is_finite() && w.upper.is_finite())
        .max_by(|a, b| (a.upper - a.lower).total_cmp(&(b.upper - b.lower)))
        .map(|w| 0.5 * (w.lower + w.upper))
}

impl ScaleFunction {
    pub fn new(model: &DiffusionModel, rate: &ControlRate, beta: f64, base: f64) -> Result<Self> {
        Self::with_config(model, rate, beta, base, QuadConfig::default())
    }

    pub fn with_config(
        model: &DiffusionModel,
        rate: &ControlRate,
        beta: f64,
        base: f64,
        quad: QuadConfig,
    ) -> Result<Self> {
        if !(model.contains(base) && base < beta && beta <= model.upper() && beta.is_finite()) {
            return domain(format!(
                "need lower < c < beta <= upper with finite beta, got c = {base}, beta = {beta}"
            ));
        }
        let mut sf = Self {
            model: model.clone(),
            rate: rate.clone(),
            beta,
            base,
            knots: vec![Knot {
                x: base,
                drift: 0.0,
                s: 0.0,
                speed: 0.0,
                entrance: 0.0,
                speed_scale: 0.0,
            }],
            quad,
        };
        let width = beta - base;
        let mut points: Vec<f64> = rate
            .discontinuities()
            .iter()
            .copied()
            .filter(|&d| d > base && d < beta)
            .collect();
        points.extend(
            (1..UNIFORM_KNOTS).map(|j| base + 0.5 * width * j as f64 / UNIFORM_KNOTS as f64),
        );
        let mut gap = 0.5 * width;
        while gap >= LADDER_FLOOR * width {
            points.push(beta - gap);
            gap *= 0.5;
        }
        points.sort_by(f64::total_cmp);
        points.dedup();
        for x in points {
            let knot = sf.advance(sf.knots.len() - 1, x)?;
            sf.knots.push(knot);
        }
        Ok(sf)
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `2 (mu - u) / sigma^2`. Rates are right-continuous, and quadrature
    /// never samples a segment endpoint, so the jump side is immaterial.
    fn drift_ratio(&self, z: f64) -> f64 {
        2.0 * (self.model.mu(z) - self.rate.eval(z)) / self.model.sigma2(z)
    }

    fn drift_from(&self, k: &Knot, y: f64) -> f64 {
        k.drift + kronrod(&|z| self.drift_ratio(z), k.x, y).0
    }

    fn s_prime_from(&self, k: &Knot, y: f64) -> f64 {
        (-self.drift_from(k, y)).exp()
    }

    fn s_from(&self, k: &Knot, y: f64) -> f64 {
        k.s + kronrod(&|z| self.s_prime_from(k, z), k.x, y).0
    }

    fn speed_from(&self, k: &Knot, y: f64) -> f64 {
        k.speed
            + kronrod(
                &|z| 2.0 / (self.s_prime_from(k, z) * self.model.sigma2(z)),
                k.x,
                y,
            )
            .0
    }

    /// Adaptive outer quadrature. Within `d` of beta the integrands vary like
    /// a power of `beta - x`, so rounding of `x` alone limits their relative
    /// accuracy to about `eps * beta / d`; the tolerance is floored there.
    fn integrate_outer<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> Result<f64> {
        let resolution = 1e3 * f64::EPSILON * self.beta.abs().max(1.0) / (self.beta - a.max(b));
        let cfg = QuadConfig {
            rel_tol: self.quad.rel_tol.max(resolution),
            ..self.quad
        };
        integrate(f, a, b, &cfg).map_err(|e| Error::Numerical(format!("scale function: {e}")))
    }

    fn advance(&self, from: usize, x: f64) -> Result<Knot> {
        let k = self.knots[from];
        let entrance = k.entrance
            + self.integrate_outer(
                |y| self.s_prime_from(&k, y) * self.speed_from(&k, y),
                k.x,
                x,
            )?;
        let speed_scale = k.speed_scale
            + self.integrate_outer(
                |y| 2.0 * self.s_from(&k, y) / (self.s_prime_from(&k, y) * self.model.sigma2(y)),
                k.x,
                x,
            )?;
        let drift = k.drift + self.integrate_outer(|z| self.drift_ratio(z), k.x, x)?;
        let knot = Knot {
            x,
            drift,
            s: k.s + self.integrate_outer(|z| self.s_prime_from(&k, z), k.x, x)?,
            speed: k.speed
                + self.integrate_outer(
                    |z| 2.0 / (self.s_prime_from(&k, z) * self.model.sigma2(z)),
                    k.x,
                    x,
                )?,
            entrance,
            speed_scale,
        };
        if [
            knot.drift,
            knot.s,
            knot.speed,
            knot.entrance,
            knot.speed_scale,
        ]
        .iter()
        .any(|v| !v.is_finite())
        {
            return Err(Error::Numerical(format!(
                "scale function overflowed at x = {x}"
            )));
        }
        Ok(knot)
    }

    fn knot_below(&self, x: f64) -> Result<Knot> {
        if !(x >= self.base && x < self.beta) {
            return domain(format!(
                "scale function evaluated on [{}, {}), got {x}",
                self.base, self.beta
            ));
        }
        let idx = self.knots.partition_point(|k| k.x <= x) - 1;
        Ok(self.knots[idx])
    }

    /// `(s(x), s'(x))`.
    pub fn eval(&self, x: f64) -> Result<(f64, f64)> {
        let k = self.knot_below(x)?;
        let s = k.s + self.integrate_outer(|z| self.s_prime_from(&k, z), k.x, x)?;
        Ok((s, self.s_prime_from(&k, x)))
    }

    /// `int_c^x s'(y) int_c^y 2 / (s' sigma^2) dz dy`.
    pub fn entrance_integral(&self, x: f64) -> Result<f64> {
        let k = self.knot_below(x)?;
        Ok(self.advance_partial(&k, x)?.0)
    }

    /// `int_c^x 2 s / (s' sigma^2)`.
    pub fn speed_scale_integral(&self, x: f64) -> Result<f64> {
        let k = self.knot_below(x)?;
        Ok(self.advance_partial(&k, x)?.1)
    }

    fn advance_partial(&self, k: &Knot, x: f64) -> Result<(f64, f64)> {
        if x == k.x {
            return Ok((k.entrance, k.speed_scale));
        }
        let idx = self
            .knots
            .iter()
            .position(|n| n.x == k.x)
            .expect("knot from table");
        let next = self.advance(idx, x)?;
        Ok((next.entrance, next.speed_scale))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Divergence {
    Divergent,
    Convergent,
    Inconclusive,
}

/// Feller class of the upper boundary implied by the two verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundaryVerdict {
    /// Cannot be reached from the interior.
    EntranceNotExit,
    /// Both integrals finite: reachable and re-enterable.
    Regular,
    Exit,
    Natural,
    Inconclusive,
}

impl BoundaryVerdict {
    pub fn is_accessible(self) -> Option<bool> {
        match self {
            BoundaryVerdict::Regular | BoundaryVerdict::Exit => Some(true),
            BoundaryVerdict::EntranceNotExit | BoundaryVerdict::Natural => Some(false),
            BoundaryVerdict::Inconclusive => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryReport {
    pub beta: f64,
    pub base: f64,
    pub truncations: Vec<f64>,
    pub entrance_integral_estimates: Vec<f64>,
    pub speed_scale_integral: Vec<f64>,
    pub entrance_verdict: Divergence,
    pub speed_scale_verdict: Divergence,
    pub verdict: BoundaryVerdict,
    pub divergence_ratio: f64,
    pub cauchy_tolerance: f64,
    pub quadrature_rel_tol: f64,
}

/// `beta - 10^{-k}`, `k = 1..=8`, dropping points at or below `base`.
pub fn default_ladder(beta: f64, base: f64) -> Vec<f64> {
    (1..=8)
        .map(|k| beta - 10f64.powi(-k))
        .filter(|&x| x > base)
        .collect()
}

/// Growth test on the increments of a truncated integral sequence.
pub fn classify_sequence(values: &[f64]) -> Divergence {
    let inc: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    if inc.len() < 3 || inc.iter().any(|d| !d.is_finite()) {
        return Divergence::Inconclusive;
    }
    let ratios: Vec<f64> = inc.windows(2).map(|w| w[1] / w[0]).collect();
    let tail = &ratios[ratios.len() - 2..];
    if tail.iter().all(|&r| r >= DIVERGENCE_RATIO) {
        return Divergence::Divergent;
    }
    let last = *values.last().expect("nonempty");
    let small = inc.last().expect("nonempty").abs() <= CAUCHY_TOLERANCE * last.abs();
    if tail.iter().all(|&r| r.abs() < DIVERGENCE_RATIO) && small {
        return Divergence::Convergent;
    }
    Divergence::Inconclusive
}

/// Evaluates both Feller integrals on `truncations` and classifies `beta`.
pub fn feller_classify_upper(sf: &ScaleFunction, truncations: &[f64]) -> Result<BoundaryReport> {
    if truncations.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "boundary test needs at least 4 truncation points, got {}",
            truncations.len()
        )));
    }
    if truncations.windows(2).any(|w| w[0] >= w[1]) {
        return domain("truncation points must increase strictly toward beta");
    }
    let mut entrance = Vec::with_capacity(truncations.len());
    let mut speed_scale = Vec::with_capacity(truncations.len());
    for &x in truncations {
        let k = sf.knot_below(x)?;
        let (e, p) = sf.advance_partial(&k, x)?;
        entrance.push(e);
        speed_scale.push(p);
    }
    let entrance_verdict = classify_sequence(&entrance);
    let speed_scale_verdict = classify_sequence(&speed_scale);
    use Divergence::*;
    let verdict = match (entrance_verdict, speed_scale_verdict) {
        (Divergent, Convergent) => BoundaryVerdict::EntranceNotExit,
        (Convergent, Convergent) => BoundaryVerdict::Regular,
        (Convergent, Divergent) => BoundaryVerdict::Exit,
        (Divergent, Divergent) => BoundaryVerdict::Natural,
        _ => BoundaryVerdict::Inconclusive,
    };
    Ok(BoundaryReport {
        beta: sf.beta,
        base: sf.base,
        truncations: truncations.to_vec(),
        entrance_integral_estimates: entrance,
        speed_scale_integral: speed_scale,
        entrance_verdict,
        speed_scale_verdict,
        verdict,
        divergence_ratio: DIVERGENCE_RATIO,
        cauchy_tolerance: CAUCHY_TOLERANCE,
        quadrature_rel_tol: sf.quad.rel_tol,
    })
}
