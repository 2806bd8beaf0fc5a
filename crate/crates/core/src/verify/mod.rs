//! Grid-based verification of candidate value functions: BVP residuals,
//! the three equilibrium conditions, smooth fit and the closed-form
//! deviation gains.

pub mod oracle;

use std::sync::Arc;

use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::mild::MildCandidate;
use crate::model::{
    ControlRate, DiffusionModel, Region, RunningCost, ThresholdStrategy, WeightedDiscount,
};
use crate::strong::StrongCandidate;
use crate::value::{aggregate, Order, Side, ValueSource};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Closed-form identities and the three conditions.
    pub identity: f64,
    /// Relative agreement with the finite-difference oracle.
    pub oracle: f64,
    pub smooth_fit: f64,
    /// Relative half-width of the excluded band around knots and discontinuities.
    pub guard_band: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            identity: 1e-9,
            oracle: 1e-4,
            smooth_fit: 1e-8,
            guard_band: 1e-8,
        }
    }
}

/// Per-atom value functions together with the problem they solve.
#[derive(Clone)]
pub struct ValueBundle {
    pub source: Arc<dyn ValueSource>,
    pub discount: WeightedDiscount,
    pub strategy: ThresholdStrategy,
    pub model: DiffusionModel,
    pub cost: RunningCost,
}

impl std::fmt::Debug for ValueBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ValueBundle")
            .field("discount", &self.discount)
            .field("strategy", &self.strategy)
            .field("model", &self.model)
            .field("cost", &self.cost)
            .finish()
    }
}

impl ValueBundle {
    pub fn new(
        source: Arc<dyn ValueSource>,
        discount: WeightedDiscount,
        strategy: ThresholdStrategy,
        model: DiffusionModel,
        cost: RunningCost,
    ) -> Result<Self> {
        if source.atom_count() != discount.len() {
            return Err(Error::Parameter(format!(
                "{} value functions for {} discount atoms",
                source.atom_count(),
                discount.len()
            )));
        }
        Ok(Self {
            source,
            discount,
            strategy,
            model,
            cost,
        })
    }

    /// GBM, quadratic cost, reflection at the candidate threshold.
    pub fn strong(cand: &StrongCandidate) -> Result<Self> {
        Self::new(
            Arc::new(*cand),
            WeightedDiscount::two_point(cand.q[0], cand.q[1])?,
            ThresholdStrategy::Strong {
                threshold: cand.threshold,
            },
            DiffusionModel::gbm(cand.sigma2.sqrt())?,
            RunningCost::Quadratic,
        )
    }

    /// GBM, quadratic cost, candidate rate exploding at beta with jump offset `delta`.
    pub fn mild(cand: &MildCandidate, delta: f64) -> Result<Self> {
        let k = &cand.constants;
        Self::new(
            Arc::new(*cand),
            WeightedDiscount::two_point(k.q[0], k.q[1])?,
            ThresholdStrategy::Mild {
                rate: cand.control_rate(),
                beta: cand.beta(),
                delta,
            },
            DiffusionModel::gbm(k.sigma2.sqrt())?,
            RunningCost::Quadratic,
        )
    }

    pub fn threshold(&self) -> f64 {
        self.strategy.action_threshold()
    }

    pub fn rate(&self) -> ControlRate {
        self.strategy.rate()
    }

    pub fn atom(&self, k: usize, x: f64, order: Order, side: Side) -> Result<f64> {
        self.source.atom_value(k, x, order, side)
    }

    /// Aggregate `V^{(order)}(x)`.
    pub fn value(&self, x: f64, order: Order, side: Side) -> Result<f64> {
        aggregate(
            self.source.as_ref(),
            &self.discount.weights(),
            x,
            order,
            side,
        )
    }

    /// Points the residual grids must avoid: value-function knots, rate
    /// discontinuities and the threshold.
    pub fn excluded_points(&self) -> Vec<f64> {
        let mut pts = self.source.knots();
        pts.extend_from_slice(self.rate().discontinuities());
        pts.push(self.threshold());
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// `sum_k p_k q_k v(x; q_k)`.
    fn weighted_rate_value(&self, x: f64) -> Result<f64> {
        let mut acc = 0.0;
        for (k, a) in self.discount.atoms().iter().enumerate() {
            acc += a.weight * a.rate * self.atom(k, x, Order::Value, Side::Right)?;
        }
        Ok(acc)
    }
}

/// Verification grids on the waiting, mild and (truncated) strong regions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationGrid {
    pub waiting: Vec<f64>,
    pub mild: Vec<f64>,
    pub strong: Vec<f64>,
    pub points_per_region: usize,
    pub strong_truncation: f64,
    pub guard_band: f64,
}

/// Half geometric toward `lo`, half uniform, on the open interval `(lo, hi)`.
fn composite_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n_geo = n / 2;
    let n_uni = n - n_geo;
    let w = hi - lo;
    let mut pts: Vec<f64> = (0..n_geo)
        .map(|j| lo + w * 10f64.powf(-6.0 + 6.0 * j as f64 / n_geo as f64))
        .collect();
    pts.extend((1..=n_uni).map(|j| lo + w * j as f64 / (n_uni + 1) as f64));
    pts
}

impl VerificationGrid {
    /// `points_per_region` points on each of W and M (shared among their
    /// intervals by length) and on `[b, s_factor * b]`.
    pub fn build(
        bundle: &ValueBundle,
        points_per_region: usize,
        s_factor: f64,
        guard: f64,
    ) -> Result<Self> {
        let (l, r) = (bundle.model.lower(), bundle.model.upper());
        let b = bundle.threshold();
        let lo_finite = if l.is_finite() {
            l
        } else {
            b - 10.0 * b.abs().max(1.0)
        };
        let mut cuts: Vec<f64> = bundle
            .excluded_points()
            .into_iter()
            .filter(|&p| p > lo_finite && p < b)
            .collect();
        let strong = bundle.strategy.strong_intervals(r);
        for s in &strong {
            for p in [s.lower, s.upper] {
                if p > lo_finite && p < b {
                    cuts.push(p);
                }
            }
        }
        cuts.push(lo_finite);
        cuts.push(b);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();

        let mut waiting_pieces = Vec::new();
        let mut mild_pieces = Vec::new();
        for w in cuts.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            if strong.iter().any(|s| mid >= s.lower && mid <= s.upper) {
                continue;
            }
            match crate::model::classify_state(&bundle.strategy, r, mid) {
                Region::Waiting => waiting_pieces.push((w[0], w[1])),
                Region::Mild => mild_pieces.push((w[0], w[1])),
                Region::Strong => {}
            }
        }
        let excluded = bundle.excluded_points();
        let fill = |pieces: &[(f64, f64)]| -> Vec<f64> {
            let total: f64 = pieces.iter().map(|(a, b)| b - a).sum();
            let mut pts = Vec::new();
            for &(a, bb) in pieces {
                let n = ((points_per_region as f64) * (bb - a) / total)
                    .round()
                    .max(2.0) as usize;
                pts.extend(composite_points(a, bb, n));
            }
            pts.retain(|&x| {
                x > l
                    && !excluded
                        .iter()
                        .any(|&p| (x - p).abs() <= guard * p.abs().max(1.0))
            });
            pts.sort_by(f64::total_cmp);
            pts.dedup();
            pts
        };
        let waiting = if waiting_pieces.is_empty() {
            Vec::new()
        } else {
            fill(&waiting_pieces)
        };
        let mild = if mild_pieces.is_empty() {
            Vec::new()
        } else {
            fill(&mild_pieces)
        };

        let top = (s_factor * b).min(if r.is_finite() {
            r - guard * r.abs().max(1.0)
        } else {
            f64::INFINITY
        });
        let n = points_per_region.max(2);
        let strong_grid: Vec<f64> = (0..n)
            .map(|j| b + (top - b) * j as f64 / (n - 1) as f64)
            .collect();
        Ok(Self {
            waiting,
            mild,
            strong: strong_grid,
            points_per_region,
            strong_truncation: top,
            guard_band: guard,
        })
    }

    /// Waiting and mild points merged in increasing order.
    pub fn action_free(&self) -> Vec<f64> {
        let mut pts = self.waiting.clone();
        pts.extend_from_slice(&self.mild);
        pts.sort_by(f64::total_cmp);
        pts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomResidual {
    pub rate: f64,
    /// Largest residual relative to the largest term of the equation at that point.
    pub max_relative: f64,
    pub max_absolute: f64,
    pub argmax: f64,
    /// Largest `|v' - 1| + |v''|` on the strong grid.
    pub affine_max: f64,
    /// `|v(l+) - f(l)/q|` at the first grid point.
    pub boundary: f64,
    /// `|v'(b-) - v'(b+)|`, the continuous-differentiability condition at the threshold.
    pub pasting: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualProfile {
    pub atoms: Vec<AtomResidual>,
}

impl ResidualProfile {
    pub fn max_relative(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.max_relative)
            .fold(0.0, f64::max)
    }
}

/// Residual of `f + A v - q v - u v' + u = 0` on the given waiting/mild
/// grid, the affine condition on the strong grid and the lower boundary value.
pub fn bvp_residual(
    bundle: &ValueBundle,
    grid: &[f64],
    strong_grid: &[f64],
) -> Result<ResidualProfile> {
    let excluded = bundle.excluded_points();
    let b = bundle.threshold();
    for &x in grid {
        if excluded
            .iter()
            .any(|&p| (x - p).abs() <= 1e-12 * p.abs().max(1.0))
        {
            return domain(format!(
                "grid point {x} coincides with a knot or discontinuity"
            ));
        }
        if x >= b || !bundle.model.contains(x) {
            return domain(format!("residual grid point {x} outside (l, b)"));
        }
    }
    let rate = bundle.rate();
    let mut atoms = Vec::with_capacity(bundle.discount.len());
    for (k, atom) in bundle.discount.atoms().iter().enumerate() {
        let q = atom.rate;
        let mut out = AtomResidual {
            rate: q,
            max_relative: 0.0,
            max_absolute: 0.0,
            argmax: f64::NAN,
            affine_max: 0.0,
            boundary: f64::NAN,
            pasting: (bundle.atom(k, b, Order::First, Side::Left)?
                - bundle.atom(k, b, Order::First, Side::Right)?)
            .abs(),
        };
        for &x in grid {
            let v = bundle.atom(k, x, Order::Value, Side::Right)?;
            let v1 = bundle.atom(k, x, Order::First, Side::Right)?;
            let v2 = bundle.atom(k, x, Order::Second, Side::Right)?;
            let u = rate.eval(x);
            let terms = [
                bundle.cost.eval(x),
                bundle.model.mu(x) * v1,
                0.5 * bundle.model.sigma2(x) * v2,
                -q * v,
                -u * v1,
                u,
            ];
            let res: f64 = terms.iter().sum();
            let scale = terms.iter().fold(0.0f64, |m, t| m.max(t.abs()));
            let rel = if scale > 0.0 { res.abs() / scale } else { 0.0 };
            if rel > out.max_relative || out.argmax.is_nan() {
                out.max_relative = rel;
                out.argmax = x;
            }
            out.max_absolute = out.max_absolute.max(res.abs());
        }
        for &x in strong_grid {
            let d1 = bundle.atom(k, x, Order::First, Side::Right)?;
            let d2 = bundle.atom(k, x, Order::Second, Side::Right)?;
            out.affine_max = out.affine_max.max((d1 - 1.0).abs() + d2.abs());
        }
        if let Some(&x0) = grid.first() {
            let l = bundle.model.lower();
            out.boundary = (bundle.atom(k, x0, Order::Value, Side::Right)?
                - bundle.cost.at_lower(l) / q)
                .abs();
        }
        atoms.push(out);
    }
    Ok(ResidualProfile { atoms })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionResult {
    pub pass: bool,
    pub margin: f64,
    pub arg: f64,
    pub tolerance: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupNorms {
    pub rate: f64,
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationVerdict {
    /// `max (V' - 1)` on the waiting grid.
    pub condition_i: ConditionResult,
    /// `max |V' - 1|` on the mild grid; vacuous when the mild region is empty.
    pub condition_ii: ConditionResult,
    /// `min (f + mu - sum p q v)` on the strong grid.
    pub condition_iii: ConditionResult,
    pub smooth_fit: f64,
    pub smooth_fit_pass: bool,
    pub smooth_fit_tolerance: f64,
    pub bvp_residual_max: Vec<f64>,
    pub sup_norms: Vec<SupNorms>,
    pub grid_points: [usize; 3],
    pub strong_truncation: f64,
    pub guard_band: f64,
}

impl VerificationVerdict {
    pub fn all_pass(&self) -> bool {
        self.condition_i.pass && self.condition_ii.pass && self.condition_iii.pass
    }
}

/// `|V''(b-) - V''(b+)|` at the action threshold.
pub fn smooth_fit_check(bundle: &ValueBundle) -> Result<f64> {
    let b = bundle.threshold();
    Ok((bundle.value(b, Order::Second, Side::Left)?
        - bundle.value(b, Order::Second, Side::Right)?)
    .abs())
}

pub fn verify_conditions(
    bundle: &ValueBundle,
    grid: &VerificationGrid,
    tol: &Tolerances,
) -> Result<VerificationVerdict> {
    if grid.waiting.is_empty() {
        return Err(Error::InsufficientData(
            "waiting-region grid is empty".into(),
        ));
    }
    if grid.strong.is_empty() {
        return Err(Error::InsufficientData(
            "strong-region grid is empty".into(),
        ));
    }
    let eps = tol.identity;

    let mut c1 = ConditionResult {
        pass: true,
        margin: f64::NEG_INFINITY,
        arg: f64::NAN,
        tolerance: eps,
        points: 0,
    };
    for &x in &grid.waiting {
        let m = bundle.value(x, Order::First, Side::Right)? - 1.0;
        if m > c1.margin {
            c1.margin = m;
            c1.arg = x;
        }
        c1.points += 1;
    }
    c1.pass = c1.margin <= eps;

    let mut c2 = ConditionResult {
        pass: true,
        margin: 0.0,
        arg: f64::NAN,
        tolerance: eps,
        points: 0,
    };
    for &x in &grid.mild {
        let m = (bundle.value(x, Order::First, Side::Right)? - 1.0).abs();
        if m > c2.margin || c2.arg.is_nan() {
            c2.margin = m;
            c2.arg = x;
        }
        c2.points += 1;
    }
    c2.pass = c2.margin <= eps;

    let mut c3 = ConditionResult {
        pass: true,
        margin: f64::INFINITY,
        arg: f64::NAN,
        tolerance: eps,
        points: 0,
    };
    for &x in &grid.strong {
        let m = -deviation_gain_jump(bundle, x)?;
        if m < c3.margin {
            c3.margin = m;
            c3.arg = x;
        }
        c3.points += 1;
    }
    c3.pass = c3.margin >= -eps;

    let smooth_fit = smooth_fit_check(bundle)?;
    let residual = bvp_residual(bundle, &grid.action_free(), &grid.strong)?;

    let mut sup_norms = Vec::new();
    let all: Vec<f64> = grid
        .action_free()
        .into_iter()
        .chain(grid.strong.iter().copied())
        .collect();
    for (k, a) in bundle.discount.atoms().iter().enumerate() {
        let mut s = SupNorms {
            rate: a.rate,
            value: 0.0,
            first: 0.0,
            second: 0.0,
        };
        for &x in &all {
            s.value = s
                .value
                .max(bundle.atom(k, x, Order::Value, Side::Right)?.abs());
            s.first = s
                .first
                .max(bundle.atom(k, x, Order::First, Side::Right)?.abs());
            s.second = s
                .second
                .max(bundle.atom(k, x, Order::Second, Side::Right)?.abs());
        }
        sup_norms.push(s);
    }

    Ok(VerificationVerdict {
        condition_i: c1,
        condition_ii: c2,
        condition_iii: c3,
        smooth_fit,
        smooth_fit_pass: smooth_fit <= tol.smooth_fit,
        smooth_fit_tolerance: tol.smooth_fit,
        bvp_residual_max: residual.atoms.iter().map(|a| a.max_relative).collect(),
        sup_norms,
        grid_points: [grid.waiting.len(), grid.mild.len(), grid.strong.len()],
        strong_truncation: grid.strong_truncation,
        guard_band: grid.guard_band,
    })
}

/// `-mu(x) - f(x) + sum_k p_k q_k v(x; q_k)` for a jump deviation from `x >= b`.
pub fn deviation_gain_jump(bundle: &ValueBundle, x: f64) -> Result<f64> {
    let b = bundle.threshold();
    if !(x >= b) || !bundle.model.contains(x) {
        return domain(format!(
            "jump deviation gain defined on [b, r) = [{b}, {}), got {x}",
            bundle.model.upper()
        ));
    }
    Ok(-bundle.model.mu(x) - bundle.cost.eval(x) + bundle.weighted_rate_value(x)?)
}

/// `(u(x-) + u(x) - u*(x-) - u*(x)) (V'(x) - 1) / 2` for a rate deviation at `x` in `(l, b)`.
pub fn deviation_gain_rate(bundle: &ValueBundle, deviation: &ControlRate, x: f64) -> Result<f64> {
    let b = bundle.threshold();
    if !(bundle.model.contains(x) && x < b) {
        return domain(format!("rate deviation gain defined on (l, b), got {x}"));
    }
    let cand = bundle.rate();
    let du = deviation.left_limit(x) + deviation.eval(x) - cand.left_limit(x) - cand.eval(x);
    Ok(0.5 * du * (bundle.value(x, Order::First, Side::Left)? - 1.0))
}

/// One row of a tabulated verification grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabulatedPoint {
    pub x: f64,
    pub v_prime: f64,
    pub region: Region,
}

/// Conditions (I) and (II) recomputed from tabulated `V'` values.
pub fn verify_tabulated(
    rows: &[TabulatedPoint],
    tol: f64,
) -> Result<(ConditionResult, ConditionResult)> {
    let mut c1 = ConditionResult {
        pass: true,
        margin: f64::NEG_INFINITY,
        arg: f64::NAN,
        tolerance: tol,
        points: 0,
    };
    let mut c2 = ConditionResult {
        pass: true,
        margin: 0.0,
        arg: f64::NAN,
        tolerance: tol,
        points: 0,
    };
    for r in rows {
        match r.region {
            Region::Waiting => {
                if r.v_prime - 1.0 > c1.margin {
                    c1.margin = r.v_prime - 1.0;
                    c1.arg = r.x;
                }
                c1.points += 1;
            }
            Region::Mild => {
                let m = (r.v_prime - 1.0).abs();
                if m > c2.margin || c2.arg.is_nan() {
                    c2.margin = m;
                    c2.arg = r.x;
                }
                c2.points += 1;
            }
            Region::Strong => {}
        }
    }
    if c1.points == 0 {
        return Err(Error::InsufficientData("no waiting-region rows".into()));
    }
    c1.pass = c1.margin <= tol;
    c2.pass = c2.margin <= tol;
    Ok((c1, c2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mild::build_mild;

    fn strong_bundle(q2: f64) -> ValueBundle {
        ValueBundle::strong(&StrongCandidate::build(0.16, 0.2, q2).unwrap()).unwrap()
    }

    fn mild_bundle() -> ValueBundle {
        ValueBundle::mild(&build_mild(0.16, 0.2, 3.0).unwrap().valid().unwrap(), 0.1).unwrap()
    }

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn strong_small_gap_passes() {
        let b = strong_bundle(0.4);
        let g = VerificationGrid::build(&b, 10_000, 10.0, 1e-8).unwrap();
        assert!(g.mild.is_empty());
        let v = verify_conditions(&b, &g, &tol()).unwrap();
        assert!(v.all_pass(), "{v:?}");
        assert!(v.smooth_fit_pass);
        assert!(v.bvp_residual_max.iter().all(|&r| r <= 1e-9));
    }

    #[test]
    fn strong_large_gap_fails_condition_one() {
        let b = strong_bundle(3.0);
        let g = VerificationGrid::build(&b, 10_000, 10.0, 1e-8).unwrap();
        let v = verify_conditions(&b, &g, &tol()).unwrap();
        assert!(!v.condition_i.pass);
        assert!(v.condition_i.margin > 1e-3);
        let bstar = b.threshold();
        let near: f64 = g
            .waiting
            .iter()
            .filter(|&&x| x > 0.9 * bstar)
            .map(|&x| b.value(x, Order::First, Side::Left).unwrap() - 1.0)
            .fold(f64::MIN, f64::max);
        assert!(near > 1e-3);
        let gain = deviation_gain_rate(&b, &ControlRate::constant(1.0), v.condition_i.arg).unwrap();
        assert!(gain > 1e-3);
    }

    #[test]
    fn mild_case_passes() {
        let b = mild_bundle();
        let g = VerificationGrid::build(&b, 10_000, 10.0, 1e-8).unwrap();
        assert!(!g.mild.is_empty());
        let v = verify_conditions(&b, &g, &tol()).unwrap();
        assert!(v.all_pass(), "{v:?}");
        assert_eq!(smooth_fit_check(&b).unwrap(), 0.0);
        let res = bvp_residual(&b, &g.mild, &g.strong).unwrap();
        assert!(res.max_relative() <= 1e-8, "{res:?}");
    }

    #[test]
    fn perturbed_coefficient_leaves_residual() {
        let mut c = StrongCandidate::build(0.16, 0.2, 0.4).unwrap();
        c.coef[0] *= 1.01;
        let b = ValueBundle::strong(&c).unwrap();
        let g = VerificationGrid::build(&b, 1000, 10.0, 1e-8).unwrap();
        let res = bvp_residual(&b, &g.waiting, &g.strong).unwrap();
        // x^gamma solves the homogeneous equation, so only the pasting condition notices
        assert!(res.atoms[0].max_relative <= 1e-9);
        assert!(res.atoms[0].pasting > 1e-4);
        assert!(res.atoms[1].pasting <= 1e-12);
    }

    #[test]
    fn off_threshold_breaks_smooth_fit() {
        let bstar = StrongCandidate::build(0.16, 0.2, 0.4).unwrap().threshold;
        let c = StrongCandidate::with_threshold(0.16, 0.2, 0.4, 1.1 * bstar).unwrap();
        let b = ValueBundle::strong(&c).unwrap();
        assert!(smooth_fit_check(&b).unwrap() > 1e-3);
        assert!(smooth_fit_check(&strong_bundle(0.4)).unwrap() <= 1e-8);
    }

    #[test]
    fn jump_gain_values() {
        let b = strong_bundle(0.4);
        let bstar = b.threshold();
        assert!(deviation_gain_jump(&b, bstar).unwrap().abs() <= 1e-12);
        assert!(deviation_gain_jump(&b, 2.0 * bstar).unwrap() < 0.0);
        assert!(matches!(
            deviation_gain_jump(&b, 0.5 * bstar),
            Err(Error::Domain(_))
        ));
        let m = mild_bundle();
        assert!(deviation_gain_jump(&m, 1.6).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn rate_gain_values() {
        let b = strong_bundle(0.4);
        let x = b.threshold() / 2.0;
        let g = deviation_gain_rate(&b, &ControlRate::constant(1.0), x).unwrap();
        let vp = b.value(x, Order::First, Side::Left).unwrap();
        assert_eq!(g, vp - 1.0);
        assert!(g < 0.0);
        // V' = 1 on the mild region, so every deviation gains nothing
        let m = mild_bundle();
        let g = deviation_gain_rate(&m, &ControlRate::constant(7.0), 1.2).unwrap();
        assert!(g.abs() <= 1e-12);
    }

    #[test]
    fn residual_grid_rejects_knots() {
        let b = strong_bundle(0.4);
        let bstar = b.threshold();
        assert!(matches!(
            bvp_residual(&b, &[bstar], &[]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn equivalence_on_passing_candidate() {
        for b in [strong_bundle(0.4), mild_bundle()] {
            let g = VerificationGrid::build(&b, 2000, 10.0, 1e-8).unwrap();
            assert!(verify_conditions(&b, &g, &tol()).unwrap().all_pass());
            for &x in &g.strong {
                assert!(deviation_gain_jump(&b, x).unwrap() <= 1e-9);
            }
            for u in [0.5, 1.0, 2.0, 10.0] {
                let dev = ControlRate::constant(u);
                for &x in &g.action_free() {
                    assert!(deviation_gain_rate(&b, &dev, x).unwrap() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn tabulated_matches_direct() {
        let b = strong_bundle(3.0);
        let g = VerificationGrid::build(&b, 2000, 10.0, 1e-8).unwrap();
        let v = verify_conditions(&b, &g, &tol()).unwrap();
        let rows: Vec<TabulatedPoint> = g
            .waiting
            .iter()
            .map(|&x| TabulatedPoint {
                x,
                v_prime: b.value(x, Order::First, Side::Right).unwrap(),
                region: Region::Waiting,
            })
            .collect();
        let (c1, c2) = verify_tabulated(&rows, 1e-9).unwrap();
        assert_eq!(c1, v.condition_i);
        assert!(c2.pass && c2.points == 0);
    }
}
