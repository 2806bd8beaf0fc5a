//! Problem data: the uncontrolled diffusion, the discount mixture, running
//! costs, control rates and threshold strategies, plus the region partition
//! a strategy induces on the state space.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

pub type StateFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Coefficients {
    /// `dX = sigma X dW` on `(0, inf)`.
    Gbm {
        sigma: f64,
    },
    General {
        mu: StateFn,
        sigma: StateFn,
    },
}

/// Drift and volatility of the uncontrolled SDE on the state interval
/// `(lower, upper)`. Either end may be infinite.
#[derive(Clone)]
pub struct DiffusionModel {
    coefficients: Coefficients,
    lower: f64,
    upper: f64,
}

impl DiffusionModel {
    pub fn new(mu: StateFn, sigma: StateFn, lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower >= upper {
            return Err(Error::Parameter(format!(
                "state interval requires lower < upper, got ({lower}, {upper})"
            )));
        }
        Ok(Self {
            coefficients: Coefficients::General { mu, sigma },
            lower,
            upper,
        })
    }

    /// Driftless geometric Brownian motion with volatility `sigma`.
    pub fn gbm(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Parameter(format!(
                "GBM volatility must be positive, got {sigma}"
            )));
        }
        Ok(Self {
            coefficients: Coefficients::Gbm { sigma },
            lower: 0.0,
            upper: f64::INFINITY,
        })
    }

    #[inline]
    pub fn mu(&self, x: f64) -> f64 {
        match &self.coefficients {
            Coefficients::Gbm { .. } => 0.0,
            Coefficients::General { mu, .. } => mu(x),
        }
    }

    #[inline]
    pub fn sigma(&self, x: f64) -> f64 {
        match &self.coefficients {
            Coefficients::Gbm { sigma } => sigma * x,
            Coefficients::General { sigma, .. } => sigma(x),
        }
    }

    #[inline]
    pub fn sigma2(&self, x: f64) -> f64 {
        let s = self.sigma(x);
        s * s
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// Constant volatility parameter when the model is GBM.
    pub fn gbm_sigma(&self) -> Option<f64> {
        match self.coefficients {
            Coefficients::Gbm { sigma } => Some(sigma),
            Coefficients::General { .. } => None,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lower && x < self.upper
    }

    /// Checks `sigma > 0` on the supplied states.
    pub fn volatility_positive_on(&self, grid: &[f64]) -> bool {
        grid.iter().all(|&x| self.sigma(x) > 0.0)
    }

    /// Generator `mu v' + sigma^2 v'' / 2` applied to given derivatives.
    #[inline]
    pub fn generator(&self, x: f64, v1: f64, v2: f64) -> f64 {
        self.mu(x) * v1 + 0.5 * self.sigma2(x) * v2
    }
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.coefficients {
            Coefficients::Gbm { sigma } => format!("Gbm {{ sigma: {sigma} }}"),
            Coefficients::General { .. } => "General".to_string(),
        };
        f.debug_struct("DiffusionModel")
            .field("coefficients", &kind)
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscountAtom {
    pub rate: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscountMoments {
    pub mean: f64,
    pub second_moment: f64,
    pub inv_moment: f64,
}

/// Finite mixture of exponential discount rates, `h(t) = sum_k p_k exp(-q_k t)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedDiscount {
    atoms: Vec<DiscountAtom>,
}

impl WeightedDiscount {
    pub fn new(atoms: Vec<DiscountAtom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Parameter(
                "discount mixture needs at least one atom".into(),
            ));
        }
        for a in &atoms {
            if !(a.rate > 0.0 && a.rate.is_finite()) {
                return Err(Error::Parameter(format!(
                    "discount rate must be positive, got {}",
                    a.rate
                )));
            }
            if !(a.weight > 0.0 && a.weight.is_finite()) {
                return Err(Error::Parameter(format!(
                    "atom weight must be positive, got {}",
                    a.weight
                )));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Parameter(format!(
                "atom weights must sum to 1, got {total}"
            )));
        }
        Ok(Self { atoms })
    }

    pub fn single(rate: f64) -> Result<Self> {
        Self::new(vec![DiscountAtom { rate, weight: 1.0 }])
    }

    /// Equal-weight two-rate mixture used by both case studies.
    pub fn two_point(q1: f64, q2: f64) -> Result<Self> {
        Self::new(vec![
            DiscountAtom {
                rate: q1,
                weight: 0.5,
            },
            DiscountAtom {
                rate: q2,
                weight: 0.5,
            },
        ])
    }

    pub fn atoms(&self) -> &[DiscountAtom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn rates(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.rate).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.weight).collect()
    }

    /// Weighted discount function at time `t >= 0`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return domain(format!("discount function needs t >= 0, got {t}"));
        }
        Ok(self
            .atoms
            .iter()
            .map(|a| a.weight * (-a.rate * t).exp())
            .sum())
    }

    pub fn moments(&self) -> DiscountMoments {
        let mut m = DiscountMoments {
            mean: 0.0,
            second_moment: 0.0,
            inv_moment: 0.0,
        };
        for a in &self.atoms {
            m.mean += a.weight * a.rate;
            m.second_moment += a.weight * a.rate * a.rate;
            m.inv_moment += a.weight / a.rate;
        }
        m
    }
}

/// Nonnegative, nondecreasing running cost `f`.
#[derive(Clone)]
pub enum RunningCost {
    /// `f(x) = x^2 / 2`, with `f(0) = 0`.
    Quadratic,
    General {
        f: StateFn,
        at_lower: f64,
    },
}

impl RunningCost {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            RunningCost::Quadratic => 0.5 * x * x,
            RunningCost::General { f, .. } => f(x),
        }
    }

    /// `f(l)`, the cost rate paid forever after absorption at the lower boundary.
    pub fn at_lower(&self, lower: f64) -> f64 {
        match self {
            RunningCost::Quadratic => 0.5 * lower * lower,
            RunningCost::General { at_lower, .. } => *at_lower,
        }
    }

    /// Nonnegativity and monotonicity on a sorted grid.
    pub fn is_admissible_on(&self, grid: &[f64]) -> bool {
        let vals: Vec<f64> = grid.iter().map(|&x| self.eval(x)).collect();
        vals.iter().all(|&v| v >= 0.0) && vals.windows(2).all(|w| w[1] >= w[0])
    }
}

impl fmt::Debug for RunningCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunningCost::Quadratic => write!(f, "Quadratic"),
            RunningCost::General { at_lower, .. } => {
                write!(f, "General {{ at_lower: {at_lower} }}")
            }
        }
    }
}

/// A nonnegative cadlag control rate given as a function plus its sorted
/// discontinuity points. `None` stands for the identically-zero rate.
#[derive(Clone, Default)]
pub struct ControlRate {
    func: Option<StateFn>,
    discontinuities: Vec<f64>,
}

impl ControlRate {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(func: StateFn, discontinuities: Vec<f64>) -> Result<Self> {
        if discontinuities.iter().any(|d| !d.is_finite()) {
            return Err(Error::Parameter(
                "rate discontinuities must be finite".into(),
            ));
        }
        if discontinuities.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter(
                "rate discontinuities must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            func: Some(func),
            discontinuities,
        })
    }

    pub fn constant(value: f64) -> Self {
        if value == 0.0 {
            return Self::zero();
        }
        Self {
            func: Some(Arc::new(move |_| value)),
            discontinuities: Vec::new(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.func.is_none()
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match &self.func {
            None => 0.0,
            Some(f) => f(x),
        }
    }

    /// `u(x-)`. Away from declared discontinuities this equals `u(x)`.
    pub fn left_limit(&self, x: f64) -> f64 {
        let tol = 1e-12 * x.abs().max(1.0);
        if self.discontinuities.iter().any(|&d| (d - x).abs() <= tol) {
            self.eval(x - 1e-10 * x.abs().max(1.0))
        } else {
            self.eval(x)
        }
    }

    pub fn discontinuities(&self) -> &[f64] {
        &self.discontinuities
    }
}

impl fmt::Debug for ControlRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlRate")
            .field("zero", &self.is_zero())
            .field("discontinuities", &self.discontinuities)
            .finish()
    }
}

/// One component `[lower, upper]` of a strong action region; the top
/// component has `upper = r` and is half-open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StrongInterval {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub enum ThresholdStrategy {
    /// Reflection at `threshold`, initial jump down to it from above.
    Strong { threshold: f64 },
    /// Rate `rate` exploding at `beta`; starting points `>= beta` jump to `beta - delta`.
    Mild {
        rate: ControlRate,
        beta: f64,
        delta: f64,
    },
    /// Rate plus a union of strong intervals. `beta` equals the model's upper
    /// boundary when the rate does not explode.
    Generalised {
        rate: ControlRate,
        beta: f64,
        strong: Vec<StrongInterval>,
        delta: f64,
    },
}

impl ThresholdStrategy {
    pub fn rate(&self) -> ControlRate {
        match self {
            ThresholdStrategy::Strong { .. } => ControlRate::zero(),
            ThresholdStrategy::Mild { rate, .. } | ThresholdStrategy::Generalised { rate, .. } => {
                rate.clone()
            }
        }
    }

    /// Lower end `b` of the topmost strong interval `[b, r)`.
    pub fn action_threshold(&self) -> f64 {
        match self {
            ThresholdStrategy::Strong { threshold } => *threshold,
            ThresholdStrategy::Mild { beta, .. } => *beta,
            ThresholdStrategy::Generalised { strong, beta, .. } => {
                strong.last().map(|s| s.lower).unwrap_or(*beta)
            }
        }
    }

    /// Strong action region as a list of intervals, the last one reaching `upper`.
    pub fn strong_intervals(&self, upper: f64) -> Vec<StrongInterval> {
        match self {
            ThresholdStrategy::Strong { threshold } => {
                vec![StrongInterval {
                    lower: *threshold,
                    upper,
                }]
            }
            ThresholdStrategy::Mild { beta, .. } => vec![StrongInterval {
                lower: *beta,
                upper,
            }],
            ThresholdStrategy::Generalised { strong, .. } => strong.clone(),
        }
    }

    /// Points where the region classification may change.
    fn breakpoints(&self, upper: f64) -> Vec<f64> {
        let mut pts: Vec<f64> = self.rate().discontinuities().to_vec();
        for s in self.strong_intervals(upper) {
            pts.push(s.lower);
            if s.upper.is_finite() && s.upper < upper {
                pts.push(s.upper);
            }
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    #[serde(rename = "W")]
    Waiting,
    #[serde(rename = "M")]
    Mild,
    #[serde(rename = "S")]
    Strong,
}

impl Region {
    pub fn code(self) -> &'static str {
        match self {
            Region::Waiting => "W",
            Region::Mild => "M",
            Region::Strong => "S",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "W" => Some(Region::Waiting),
            "M" => Some(Region::Mild),
            "S" => Some(Region::Strong),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionInterval {
    pub lower: f64,
    pub upper: f64,
    pub lower_closed: bool,
    pub upper_closed: bool,
}

impl RegionInterval {
    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lower_closed {
            x >= self.lower
        } else {
            x > self.lower
        };
        let below = if self.upper_closed {
            x <= self.upper
        } else {
            x < self.upper
        };
        above && below
    }
}

/// Waiting, mild and strong action regions as maximal intervals.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RegionPartition {
    pub waiting: Vec<RegionInterval>,
    pub mild: Vec<RegionInterval>,
    pub strong: Vec<RegionInterval>,
}

impl RegionPartition {
    pub fn classify(&self, x: f64) -> Option<Region> {
        if self.strong.iter().any(|i| i.contains(x)) {
            Some(Region::Strong)
        } else if self.mild.iter().any(|i| i.contains(x)) {
            Some(Region::Mild)
        } else if self.waiting.iter().any(|i| i.contains(x)) {
            Some(Region::Waiting)
        } else {
            None
        }
    }
}

/// Region of a single state under `strat`.
pub fn classify_state(strat: &ThresholdStrategy, upper: f64, x: f64) -> Region {
    let in_strong = strat
        .strong_intervals(upper)
        .iter()
        .any(|s| x >= s.lower && (x <= s.upper || s.upper >= upper));
    if in_strong {
        Region::Strong
    } else if strat.rate().eval(x) > 0.0 {
        Region::Mild
    } else {
        Region::Waiting
    }
}

/// Classifies each grid point and rebuilds maximal intervals. Boundaries
/// between runs snap to a strategy breakpoint when exactly one lies between
/// the neighbouring grid points, otherwise to their midpoint.
pub fn regions_of_strategy(
    strat: &ThresholdStrategy,
    model: &DiffusionModel,
    grid: &[f64],
) -> Result<RegionPartition> {
    if grid.is_empty() {
        return Err(Error::InsufficientData(
            "region partition needs a nonempty grid".into(),
        ));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return domain("grid must be sorted");
    }
    if let Some(&x) = grid.iter().find(|&&x| !model.contains(x)) {
        return domain(format!(
            "grid point {x} outside state interval ({}, {})",
            model.lower(),
            model.upper()
        ));
    }
    let upper = model.upper();
    let breaks = strat.breakpoints(upper);
    let classes: Vec<Region> = grid
        .iter()
        .map(|&x| classify_state(strat, upper, x))
        .collect();

    let mut partition = RegionPartition::default();
    let mut run_start = model.lower();
    let mut start_closed = false;
    let mut i = 0;
    while i < grid.len() {
        let class = classes[i];
        let mut j = i;
        while j + 1 < grid.len() && classes[j + 1] == class {
            j += 1;
        }
        let (run_end, end_closed, next_closed) = if j + 1 == grid.len() {
            (upper, false, false)
        } else {
            let (a, b) = (grid[j], grid[j + 1]);
            let inside: Vec<f64> = breaks
                .iter()
                .copied()
                .filter(|&p| p > a && p <= b)
                .collect();
            let p = if inside.len() == 1 {
                inside[0]
            } else {
                0.5 * (a + b)
            };
            let at_p = classify_state(strat, upper, p);
            (p, at_p == class, at_p == classes[j + 1])
        };
        let interval = RegionInterval {
            lower: run_start,
            upper: run_end,
            lower_closed: start_closed,
            upper_closed: end_closed,
        };
        match class {
            Region::Waiting => partition.waiting.push(interval),
            Region::Mild => partition.mild.push(interval),
            Region::Strong => partition.strong.push(interval),
        }
        run_start = run_end;
        start_closed = next_closed;
        i = j + 1;
    }
    Ok(partition)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub clause: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, clause: &'static str, detail: String) {
        self.violations.push(Violation { clause, detail });
    }

    pub fn has(&self, clause: &str) -> bool {
        self.violations.iter().any(|v| v.clause == clause)
    }
}

const RATE_SAMPLES: usize = 257;

fn check_rate(report: &mut ValidationReport, rate: &ControlRate, lo: f64, hi: f64) {
    for &d in rate.discontinuities() {
        if !(d > lo && d < hi) {
            report.push(
                "rate-discontinuities",
                format!("discontinuity {d} outside ({lo}, {hi})"),
            );
        }
    }
    let lo_s = if lo.is_finite() { lo } else { hi - 1e3 };
    for k in 1..RATE_SAMPLES {
        let x = lo_s + (hi - lo_s) * k as f64 / RATE_SAMPLES as f64;
        let u = rate.eval(x);
        if !(u >= 0.0) {
            report.push("rate-nonnegative", format!("rate {u} at x = {x}"));
            break;
        }
    }
}

/// Lists every structural violation of `strat` relative to `model`.
pub fn validate_strategy(strat: &ThresholdStrategy, model: &DiffusionModel) -> ValidationReport {
    let (l, r) = (model.lower(), model.upper());
    let mut report = ValidationReport::default();
    match strat {
        ThresholdStrategy::Strong { threshold } => {
            if !(*threshold > l && *threshold < r) {
                report.push(
                    "strong-threshold-interior",
                    format!("b = {threshold} not in ({l}, {r})"),
                );
            }
        }
        ThresholdStrategy::Mild { rate, beta, delta } => {
            if !(*beta > l && *beta < r) {
                report.push(
                    "mild-beta-interior",
                    format!("beta = {beta} not in ({l}, {r})"),
                );
            }
            if !(*delta > 0.0 && *delta < beta - l) {
                report.push(
                    "delta-bound",
                    format!(
                        "delta = {delta} must satisfy 0 < delta < beta - l = {}",
                        beta - l
                    ),
                );
            }
            if *beta > l {
                check_rate(&mut report, rate, l, *beta);
            }
        }
        ThresholdStrategy::Generalised {
            rate,
            beta,
            strong,
            delta,
        } => {
            if strong.is_empty() {
                report.push(
                    "strong-intervals",
                    "strong region must contain [b_n, r)".into(),
                );
                return report;
            }
            if !(*beta > l && *beta <= r) {
                report.push("beta-range", format!("beta = {beta} not in ({l}, {r}]"));
            }
            let n = strong.len();
            if strong[0].lower < l {
                report.push(
                    "interval-order",
                    format!("b_1 = {} below l = {l}", strong[0].lower),
                );
            }
            for (i, s) in strong.iter().enumerate() {
                if s.lower > s.upper {
                    report.push(
                        "interval-order",
                        format!("b_{0} > a_{0} in interval {1}", i + 1, i + 1),
                    );
                }
                if i + 1 < n && !(s.upper < strong[i + 1].lower) {
                    report.push(
                        "interval-order",
                        format!("a_{} must be < b_{}", i + 1, i + 2),
                    );
                }
            }
            if strong[n - 1].upper != r {
                report.push(
                    "interval-order",
                    format!("a_n = {} must equal r = {r}", strong[n - 1].upper),
                );
            }
            if *beta < r {
                if strong[n - 1].lower != *beta {
                    report.push(
                        "top-interval-at-beta",
                        format!("b_n = {} must equal beta = {beta}", strong[n - 1].lower),
                    );
                }
                let bound = if n == 1 {
                    beta - l
                } else {
                    beta - strong[n - 2].upper
                };
                if !(*delta > 0.0 && *delta < bound) {
                    report.push(
                        "delta-bound",
                        format!("delta = {delta} must satisfy 0 < delta < {bound}"),
                    );
                }
            } else if *delta != 0.0 {
                report.push(
                    "delta-bound",
                    format!("delta must be 0 when beta = r, got {delta}"),
                );
            }
            if *beta > l {
                check_rate(&mut report, rate, l, beta.min(strong[n - 1].lower));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (1..n)
            .map(|k| lo + (hi - lo) * k as f64 / n as f64)
            .collect()
    }

    #[test]
    fn discount_at_zero_is_one() {
        let d = WeightedDiscount::two_point(0.2, 3.0).unwrap();
        assert_eq!(d.eval(0.0).unwrap(), 1.0);
    }

    #[test]
    fn discount_at_one() {
        let d = WeightedDiscount::two_point(0.2, 0.4).unwrap();
        // two-point quadrature of the mixing distribution
        let expect = 0.5 * (-0.2f64).exp() + 0.5 * (-0.4f64).exp();
        assert_relative_eq!(d.eval(1.0).unwrap(), expect, max_relative = 1e-15);
        assert_relative_eq!(d.eval(1.0).unwrap(), 0.744_58, epsilon = 1e-4);
    }

    #[test]
    fn discount_decays_to_zero() {
        let d = WeightedDiscount::two_point(0.2, 3.0).unwrap();
        let vals: Vec<f64> = (0..200).map(|k| d.eval(k as f64).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
        assert!(*vals.last().unwrap() < 1e-15);
    }

    #[test]
    fn negative_time_rejected() {
        let d = WeightedDiscount::single(1.0).unwrap();
        assert!(matches!(d.eval(-1e-9), Err(Error::Domain(_))));
    }

    #[test]
    fn moments() {
        let m = WeightedDiscount::two_point(0.2, 0.4).unwrap().moments();
        assert_relative_eq!(m.mean, 0.3, max_relative = 1e-15);
        let m = WeightedDiscount::single(0.7).unwrap().moments();
        assert_eq!((m.mean, m.second_moment), (0.7, 0.7 * 0.7));
        assert_relative_eq!(m.inv_moment, 1.0 / 0.7);
        let m = WeightedDiscount::two_point(0.2, 3.0).unwrap().moments();
        assert_relative_eq!(m.inv_moment, 0.5 / 0.2 + 0.5 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(m.inv_moment, 2.6667, epsilon = 1e-4);
    }

    #[test]
    fn bad_mixtures_rejected() {
        assert!(WeightedDiscount::new(vec![]).is_err());
        assert!(WeightedDiscount::new(vec![DiscountAtom {
            rate: -1.0,
            weight: 1.0
        }])
        .is_err());
        assert!(WeightedDiscount::new(vec![
            DiscountAtom {
                rate: 1.0,
                weight: 0.5
            },
            DiscountAtom {
                rate: 2.0,
                weight: 0.4
            },
        ])
        .is_err());
    }

    #[test]
    fn strong_partition() {
        let model = DiffusionModel::gbm(0.4).unwrap();
        let s = ThresholdStrategy::Strong { threshold: 1.0 };
        let p = regions_of_strategy(&s, &model, &grid(0.0, 3.0, 300)).unwrap();
        assert!(p.mild.is_empty());
        assert_eq!(
            p.waiting,
            vec![RegionInterval {
                lower: 0.0,
                upper: 1.0,
                lower_closed: false,
                upper_closed: false
            }]
        );
        assert_eq!(
            p.strong,
            vec![RegionInterval {
                lower: 1.0,
                upper: f64::INFINITY,
                lower_closed: true,
                upper_closed: false
            }]
        );
    }

    #[test]
    fn mild_partition_three_regions() {
        let model = DiffusionModel::gbm(0.4).unwrap();
        let (bl, beta) = (0.7, 1.6);
        let rate = ControlRate::new(
            Arc::new(move |x| {
                if x >= bl && x < beta {
                    1.0 / (beta - x)
                } else {
                    0.0
                }
            }),
            vec![bl],
        )
        .unwrap();
        let s = ThresholdStrategy::Mild {
            rate,
            beta,
            delta: 0.1,
        };
        let p = regions_of_strategy(&s, &model, &grid(0.0, 4.0, 333)).unwrap();
        assert_eq!(p.waiting.len(), 1);
        assert_eq!((p.waiting[0].lower, p.waiting[0].upper), (0.0, bl));
        assert!(!p.waiting[0].upper_closed);
        assert_eq!((p.mild[0].lower, p.mild[0].upper), (bl, beta));
        assert!(p.mild[0].lower_closed && !p.mild[0].upper_closed);
        assert_eq!(p.strong[0].lower, beta);
        assert!(p.strong[0].lower_closed);
    }

    #[test]
    fn generalised_without_rate_reduces_to_strong() {
        let model = DiffusionModel::gbm(0.4).unwrap();
        let g = grid(0.0, 2.5, 250);
        let gen = ThresholdStrategy::Generalised {
            rate: ControlRate::zero(),
            beta: f64::INFINITY,
            strong: vec![StrongInterval {
                lower: 1.3,
                upper: f64::INFINITY,
            }],
            delta: 0.0,
        };
        let strong = ThresholdStrategy::Strong { threshold: 1.3 };
        assert_eq!(
            regions_of_strategy(&gen, &model, &g).unwrap(),
            regions_of_strategy(&strong, &model, &g).unwrap()
        );
        assert!(validate_strategy(&gen, &model).is_valid());
    }

    #[test]
    fn grid_outside_interval_rejected() {
        let model = DiffusionModel::gbm(0.4).unwrap();
        let s = ThresholdStrategy::Strong { threshold: 1.0 };
        assert!(matches!(
            regions_of_strategy(&s, &model, &[-0.1, 0.5]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn validation_catches_delta_and_boundary() {
        let model = DiffusionModel::gbm(0.4).unwrap();
        let s = ThresholdStrategy::Mild {
            rate: ControlRate::constant(1.0),
            beta: 1.0,
            delta: 1.0,
        };
        assert!(validate_strategy(&s, &model).has("delta-bound"));
        let s = ThresholdStrategy::Strong { threshold: 0.0 };
        assert!(validate_strategy(&s, &model).has("strong-threshold-interior"));
        let bad_rate = ControlRate::new(Arc::new(|_| -1.0), vec![]).unwrap();
        let s = ThresholdStrategy::Mild {
            rate: bad_rate,
            beta: 1.0,
            delta: 0.5,
        };
        assert!(validate_strategy(&s, &model).has("rate-nonnegative"));
    }

    #[test]
    fn generalised_ordering_and_delta() {
        let model = DiffusionModel::gbm(0.4).unwrap();
        let s = ThresholdStrategy::Generalised {
            rate: ControlRate::constant(1.0),
            beta: 2.0,
            strong: vec![
                StrongInterval {
                    lower: 0.5,
                    upper: 0.8,
                },
                StrongInterval {
                    lower: 2.0,
                    upper: f64::INFINITY,
                },
            ],
            delta: 1.5,
        };
        // delta must stay below beta - a_1 = 1.2
        let rep = validate_strategy(&s, &model);
        assert!(rep.has("delta-bound"));
        assert!(!rep.has("interval-order"));
    }

    #[test]
    fn quadratic_cost_is_admissible() {
        assert!(RunningCost::Quadratic.is_admissible_on(&grid(0.0, 5.0, 100)));
        assert_eq!(RunningCost::Quadratic.at_lower(0.0), 0.0);
    }
}
