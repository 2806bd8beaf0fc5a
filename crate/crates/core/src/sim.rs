//! Euler–Maruyama simulation of controlled paths and Monte Carlo estimates
//! of discounted costs.
//!
//! Each path owns two xoshiro256++ streams derived from `(seed, path index)`: the
//! main stream supplies one standard normal per base step (or `2^noise_splits`
//! of them), the auxiliary stream everything else (bridge maxima, substep
//! refinement). Runs that differ only in `dt` and `noise_splits` therefore
//! share Brownian paths, which is what the dt-halving check relies on.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::mild::DEFAULT_RATE_CAP;
use crate::model::{ControlRate, DiffusionModel, RunningCost, ThresholdStrategy, WeightedDiscount};

/// How the upward excursion past a reflecting level is removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Reflection {
    /// Clip the Euler endpoint to the level; the clipped amount is the control.
    Projection,
    /// Sample the maximum of the frozen-coefficient Brownian bridge over the
    /// step and apply the one-step Skorokhod map.
    BridgeMaximum,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Steps starting within this distance below an explosion point are
    /// subdivided.
    pub beta_guard: f64,
    pub rate_cap: f64,
    /// Substeps satisfy `u(x) * tau <= guard_fraction * (beta - x)`.
    pub guard_fraction: f64,
    /// Substeps also satisfy `guard_sigmas * vol(x) * sqrt(tau) <= beta - x`.
    pub guard_sigmas: f64,
    /// Each base step consumes `2^noise_splits` normals from the main stream.
    pub noise_splits: u32,
    pub trapezoid: bool,
    pub reflection: Reflection,
    /// Paths are stopped once `x - l <= absorption_cutoff * (x0 - l)`.
    pub absorption_cutoff: f64,
    /// Upper bound on substeps within one base step.
    pub max_substeps: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_max: horizon_for(0.2, 1e-6),
            n_paths: 10_000,
            seed: 0,
            beta_guard: 0.5,
            rate_cap: DEFAULT_RATE_CAP,
            guard_fraction: 0.25,
            guard_sigmas: 8.0,
            noise_splits: 0,
            trapezoid: false,
            reflection: Reflection::BridgeMaximum,
            absorption_cutoff: 1e-8,
            max_substeps: 1 << 16,
        }
    }
}

/// Smallest `t` with `exp(-rate * t) <= tail`.
pub fn horizon_for(rate: f64, tail: f64) -> f64 {
    -tail.ln() / rate
}

impl SimConfig {
    /// Default settings with the horizon sized for the slowest atom of `disc`.
    pub fn for_discount(disc: &WeightedDiscount) -> Self {
        let slowest = disc.rates().into_iter().fold(f64::INFINITY, f64::min);
        Self {
            t_max: horizon_for(slowest, 1e-6),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InsufficientData("n_paths must be at least 1".into()));
        }
        let positive = [
            ("dt", self.dt),
            ("t_max", self.t_max),
            ("beta_guard", self.beta_guard),
            ("rate_cap", self.rate_cap),
            ("guard_fraction", self.guard_fraction),
            ("guard_sigmas", self.guard_sigmas),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return domain(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.absorption_cutoff) {
            return domain(format!(
                "absorption_cutoff must lie in [0, 1), got {}",
                self.absorption_cutoff
            ));
        }
        if self.noise_splits > 16 || self.max_substeps == 0 {
            return domain("noise_splits must be <= 16 and max_substeps >= 1");
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_max / self.dt).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Jump {
    pub time: f64,
    pub size: f64,
}

/// One simulated trajectory, sampled at the end of every base step.
#[derive(Debug, Clone, Serialize)]
pub struct PathRecord {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    /// Cumulative control `D_t`.
    pub control: Vec<f64>,
    /// Cumulative reflection control (local-time proxy).
    pub local_time: Vec<f64>,
    pub jumps: Vec<Jump>,
    pub absorbed_at: Option<f64>,
    pub censored: bool,
    pub max_state: f64,
    /// Steps that ended at or above an explosion point.
    pub beta_crossings: usize,
    pub substeps: u64,
    pub substep_cap_hits: u64,
    pub guard_fraction: f64,
    pub rate_cap: f64,
}

/// Control layout of a strategy as the simulator sees it.
#[derive(Debug, Clone)]
struct Plan {
    rate: ControlRate,
    has_rate: bool,
    /// Reflecting level and the top of its strong interval; states in
    /// `(level, top]` jump to the level.
    reflect: Option<(f64, f64)>,
    /// Explosion point of the rate and the restart point below it.
    explosion: Option<(f64, f64)>,
}

impl Plan {
    fn new(strat: &ThresholdStrategy, model: &DiffusionModel) -> Result<Self> {
        let upper = model.upper();
        let rate = strat.rate();
        let has_rate = !rate.is_zero();
        let (beta, delta, exploding) = match strat {
            ThresholdStrategy::Strong { .. } => (upper, 0.0, false),
            ThresholdStrategy::Mild { beta, delta, .. } => (*beta, *delta, true),
            ThresholdStrategy::Generalised { beta, delta, .. } => (*beta, *delta, *beta < upper),
        };
        let mut plan = Plan {
            rate,
            has_rate,
            reflect: None,
            explosion: None,
        };
        for s in strat.strong_intervals(upper) {
            if exploding && s.lower == beta {
                plan.explosion = Some((beta, beta - delta));
            } else if plan.reflect.is_none() {
                plan.reflect = Some((s.lower, s.upper));
            } else {
                return domain("simulation supports one reflecting level plus the region above an explosion point");
            }
        }
        Ok(plan)
    }

    /// Where a state inside the strong region is sent; `None` outside it.
    #[inline(always)]
    fn jump_target(&self, x: f64) -> Option<f64> {
        if let Some((beta, restart)) = self.explosion {
            if x >= beta {
                return Some(restart);
            }
        }
        match self.reflect {
            Some((b, top)) if x > b && x <= top => Some(b),
            _ => None,
        }
    }
}

trait Dynamics: Sync {
    fn drift(&self, x: f64) -> f64;
    fn vol(&self, x: f64) -> f64;
}

struct Gbm(f64);

impl Dynamics for Gbm {
    #[inline(always)]
    fn drift(&self, _: f64) -> f64 {
        0.0
    }
    #[inline(always)]
    fn vol(&self, x: f64) -> f64 {
        self.0 * x
    }
}

struct General<'a>(&'a DiffusionModel);

impl Dynamics for General<'_> {
    fn drift(&self, x: f64) -> f64 {
        self.0.mu(x)
    }
    fn vol(&self, x: f64) -> f64 {
        self.0.sigma(x)
    }
}

/// Receives the discretised path.
trait Observer {
    /// One (sub)step from `x` over `[t, t + tau]` with control rate `rate`
    /// and reflection control `reflected`; `x_end` is the state before any jump.
    fn step(&mut self, t: f64, tau: f64, x: f64, x_end: f64, rate: f64, reflected: f64);
    fn jump(&mut self, t: f64, size: f64);
    fn absorb(&mut self, t: f64);
    fn sample(&mut self, _t: f64, _x: f64) {}
}

#[derive(Debug, Default, Clone, Copy)]
struct PathStats {
    absorbed: bool,
    max_state: f64,
    beta_crossings: usize,
    substeps: u64,
    substep_cap_hits: u64,
}

struct Engine<'a, D> {
    dynamics: D,
    plan: &'a Plan,
    cfg: &'a SimConfig,
    lower: f64,
    /// Hot-path copies of the plan; infinite when absent.
    reflect_at: f64,
    beta: f64,
    guard_from: f64,
    jump_above: f64,
}

impl<'a, D: Dynamics> Engine<'a, D> {
    fn new(dynamics: D, plan: &'a Plan, cfg: &'a SimConfig, lower: f64) -> Self {
        let reflect_at = plan.reflect.map_or(f64::INFINITY, |r| r.0);
        let beta = plan.explosion.map_or(f64::INFINITY, |e| e.0);
        Self {
            dynamics,
            plan,
            cfg,
            lower,
            reflect_at,
            beta,
            guard_from: beta - cfg.beta_guard,
            jump_above: reflect_at.min(beta),
        }
    }
}

fn streams(seed: u64, path: usize) -> (Xoshiro256PlusPlus, Xoshiro256PlusPlus) {
    let key = SplitMix64::seed_from_u64(seed).random::<u64>();
    let stream = |k: u64| {
        let mut sm = SplitMix64::seed_from_u64(key ^ k);
        Xoshiro256PlusPlus::from_rng(&mut sm)
    };
    (stream(2 * path as u64), stream(2 * path as u64 + 1))
}

impl<D: Dynamics> Engine<'_, D> {
    fn run<O: Observer>(&self, x0: f64, path: usize, obs: &mut O) -> PathStats {
        let cfg = self.cfg;
        let (mut main, mut aux) = streams(cfg.seed, path);
        let mut stats = PathStats {
            max_state: x0,
            ..PathStats::default()
        };
        let absorb_at = self.lower + cfg.absorption_cutoff * (x0 - self.lower);
        let mut x = x0;
        if let Some(target) = self.plan.jump_target(x) {
            obs.jump(0.0, x - target);
            x = target;
        }
        obs.sample(0.0, x);
        let n_noise = 1usize << cfg.noise_splits;
        let noise_scale = (cfg.dt / n_noise as f64).sqrt();
        for j in 0..cfg.steps() {
            let t = j as f64 * cfg.dt;
            let mut dw: f64 = main.sample(StandardNormal);
            for _ in 1..n_noise {
                dw += main.sample::<f64, _>(StandardNormal);
            }
            dw *= noise_scale;
            match self.base_step(x, t, dw, absorb_at, &mut aux, obs, &mut stats) {
                Some(next) => x = next,
                None => {
                    stats.absorbed = true;
                    return stats;
                }
            }
            obs.sample(t + cfg.dt, x);
        }
        stats
    }

    /// Advances over one base step; `None` on absorption.
    #[allow(clippy::too_many_arguments)]
    #[inline]
    fn base_step<O: Observer>(
        &self,
        mut x: f64,
        t: f64,
        dw: f64,
        absorb_at: f64,
        aux: &mut Xoshiro256PlusPlus,
        obs: &mut O,
        stats: &mut PathStats,
    ) -> Option<f64> {
        let dt = self.cfg.dt;
        if !(x > self.guard_from) {
            return self.substep(x, t, dt, dw, absorb_at, aux, obs, stats);
        }
        let beta = self.beta;
        let (mut rem, mut w_rem, mut tt) = (dt, dw, t);
        let mut count = 0u32;
        loop {
            count += 1;
            let mut tau = rem;
            if count < self.cfg.max_substeps && x < beta {
                let gap = beta - x;
                let u = self.rate(x);
                if u > 0.0 {
                    tau = tau.min(self.cfg.guard_fraction * gap / u);
                }
                let s = self.cfg.guard_sigmas * self.dynamics.vol(x);
                if s > 0.0 {
                    tau = tau.min((gap / s).powi(2));
                }
            } else if count >= self.cfg.max_substeps {
                stats.substep_cap_hits += 1;
            }
            let last = tau >= rem;
            let w = if last {
                w_rem
            } else {
                let z: f64 = aux.sample(StandardNormal);
                tau / rem * w_rem + (tau * (rem - tau) / rem).sqrt() * z
            };
            stats.substeps += 1;
            x = self.substep(
                x,
                tt,
                if last { rem } else { tau },
                w,
                absorb_at,
                aux,
                obs,
                stats,
            )?;
            if last {
                return Some(x);
            }
            rem -= tau;
            w_rem -= w;
            tt += tau;
        }
    }

    #[inline(always)]
    fn rate(&self, x: f64) -> f64 {
        if self.plan.has_rate {
            let u = self.plan.rate.eval(x);
            if u > self.cfg.rate_cap {
                self.cfg.rate_cap
            } else {
                u
            }
        } else {
            0.0
        }
    }

    #[allow(clippy::too_many_arguments)]
    #[inline(always)]
    fn substep<O: Observer>(
        &self,
        x: f64,
        t: f64,
        tau: f64,
        w: f64,
        absorb_at: f64,
        aux: &mut Xoshiro256PlusPlus,
        obs: &mut O,
        stats: &mut PathStats,
    ) -> Option<f64> {
        let u = self.rate(x);
        let vol = self.dynamics.vol(x);
        let mut next = x + (self.dynamics.drift(x) - u) * tau + vol * w;
        let mut reflected = 0.0;
        let b = self.reflect_at;
        if x <= b {
            reflected = self.reflect(x, next, b, vol * vol * tau, aux);
            next -= reflected;
            if next > b {
                next = b;
            }
        }
        obs.step(t, tau, x, next, u, reflected);
        if next <= absorb_at {
            obs.absorb(t + tau);
            return None;
        }
        if next >= self.beta {
            stats.beta_crossings += 1;
        }
        if next > stats.max_state {
            stats.max_state = next;
        }
        if next > self.jump_above {
            if let Some(target) = self.plan.jump_target(next) {
                obs.jump(t + tau, next - target);
                next = target;
            }
        }
        Some(next)
    }

    /// Control needed to keep the step below `b`.
    #[inline(always)]
    fn reflect(&self, a: f64, c: f64, b: f64, var: f64, aux: &mut Xoshiro256PlusPlus) -> f64 {
        match self.cfg.reflection {
            Reflection::Projection => {
                if c > b {
                    c - b
                } else {
                    0.0
                }
            }
            Reflection::BridgeMaximum => {
                // P(max > b) = exp(-2 (b - a)(b - c) / var); skip below e^-40
                if c < b && !(2.0 * (b - a) * (b - c) < 40.0 * var) {
                    return 0.0;
                }
                let u: f64 = 1.0 - aux.random::<f64>();
                let max = 0.5 * (a + c + ((c - a).powi(2) - 2.0 * var * u.ln()).sqrt());
                if max > b {
                    max - b
                } else {
                    0.0
                }
            }
        }
    }
}

struct Recorder {
    record: PathRecord,
    control: f64,
    local_time: f64,
}

impl Observer for Recorder {
    fn step(&mut self, _t: f64, tau: f64, _x: f64, _x_end: f64, rate: f64, reflected: f64) {
        self.control += rate * tau + reflected;
        self.local_time += reflected;
    }
    fn jump(&mut self, t: f64, size: f64) {
        self.control += size;
        self.record.jumps.push(Jump { time: t, size });
    }
    fn absorb(&mut self, t: f64) {
        self.record.absorbed_at = Some(t);
    }
    fn sample(&mut self, t: f64, x: f64) {
        let r = &mut self.record;
        r.times.push(t);
        r.states.push(x);
        r.control.push(self.control);
        r.local_time.push(self.local_time);
    }
}

/// Discount bookkeeping over a step of length `tau`: the end factor
/// `e^{-q tau}`, the exact weight `(1 - e^{-q tau}) / q` for a rate held
/// constant over the step, and the midpoint factor `e^{-q tau / 2}`.
#[derive(Debug, Clone, Copy)]
struct StepFactors {
    end: f64,
    weight: f64,
    mid: f64,
}

impl StepFactors {
    fn new(rate: f64, tau: f64) -> Self {
        Self {
            end: (-rate * tau).exp(),
            weight: -(-rate * tau).exp_m1() / rate,
            mid: (-0.5 * rate * tau).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct AtomCost {
    rate: f64,
    base: StepFactors,
    discount: f64,
    total: f64,
}

/// Discounted cost of one path for several rates at once. Within a step the
/// running cost and the control rate are frozen at the left endpoint and the
/// discount is integrated exactly; reflection is discounted at the midpoint.
struct CostObserver<'a> {
    cost: &'a RunningCost,
    atoms: Vec<AtomCost>,
    dt: f64,
    trapezoid: bool,
    at_lower: f64,
}

impl<'a> CostObserver<'a> {
    fn new(cost: &'a RunningCost, rates: &[f64], cfg: &SimConfig, lower: f64) -> Self {
        let atoms = rates
            .iter()
            .map(|&rate| AtomCost {
                rate,
                base: StepFactors::new(rate, cfg.dt),
                discount: 1.0,
                total: 0.0,
            })
            .collect();
        Self {
            cost,
            atoms,
            dt: cfg.dt,
            trapezoid: cfg.trapezoid,
            at_lower: cost.at_lower(lower),
        }
    }

    fn totals(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.total).collect()
    }
}

impl Observer for CostObserver<'_> {
    #[inline(always)]
    fn step(&mut self, _t: f64, tau: f64, x: f64, x_end: f64, rate: f64, reflected: f64) {
        let mut f = self.cost.eval(x);
        if self.trapezoid {
            f = 0.5 * (f + self.cost.eval(x_end));
        }
        let flow = f + rate;
        let base = tau == self.dt;
        for a in &mut self.atoms {
            let k = if base {
                a.base
            } else {
                StepFactors::new(a.rate, tau)
            };
            a.total += a.discount * (flow * k.weight + reflected * k.mid);
            a.discount *= k.end;
        }
    }
    fn jump(&mut self, _t: f64, size: f64) {
        for a in &mut self.atoms {
            a.total += a.discount * size;
        }
    }
    fn absorb(&mut self, _t: f64) {
        for a in &mut self.atoms {
            a.total += a.discount * self.at_lower / a.rate;
        }
    }
}

macro_rules! with_engine {
    ($model:expr, $plan:expr, $cfg:expr, |$engine:ident| $body:expr) => {
        match $model.gbm_sigma() {
            Some(sigma) => {
                let $engine = Engine::new(Gbm(sigma), $plan, $cfg, $model.lower());
                $body
            }
            None => {
                let $engine = Engine::new(General($model), $plan, $cfg, $model.lower());
                $body
            }
        }
    };
}

fn prepare(
    model: &DiffusionModel,
    strat: &ThresholdStrategy,
    x0: f64,
    cfg: &SimConfig,
) -> Result<Plan> {
    cfg.validate()?;
    if !model.contains(x0) {
        return domain(format!(
            "starting point {x0} outside ({}, {})",
            model.lower(),
            model.upper()
        ));
    }
    Plan::new(strat, model)
}

/// Simulates path number `path` (its RNG streams) and records every base step.
pub fn simulate_path(
    model: &DiffusionModel,
    strat: &ThresholdStrategy,
    x0: f64,
    cfg: &SimConfig,
    path: usize,
) -> Result<PathRecord> {
    let plan = prepare(model, strat, x0, cfg)?;
    let n = cfg.steps() + 1;
    let mut rec = Recorder {
        record: PathRecord {
            times: Vec::with_capacity(n),
            states: Vec::with_capacity(n),
            control: Vec::with_capacity(n),
            local_time: Vec::with_capacity(n),
            jumps: vec![],
            absorbed_at: None,
            censored: false,
            max_state: x0,
            beta_crossings: 0,
            substeps: 0,
            substep_cap_hits: 0,
            guard_fraction: cfg.guard_fraction,
            rate_cap: cfg.rate_cap,
        },
        control: 0.0,
        local_time: 0.0,
    };
    let stats = with_engine!(model, &plan, cfg, |engine| engine.run(x0, path, &mut rec));
    let mut record = rec.record;
    record.censored = !stats.absorbed;
    record.max_state = stats.max_state.max(*record.states.first().unwrap_or(&x0));
    record.beta_crossings = stats.beta_crossings;
    record.substeps = stats.substeps;
    record.substep_cap_hits = stats.substep_cap_hits;
    if let Some(t) = record.absorbed_at {
        // the absorbed state is not a base-step sample
        record.times.push(t);
        record.states.push(model.lower());
        record.control.push(rec.control);
        record.local_time.push(rec.local_time);
    }
    Ok(record)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub censored_fraction: f64,
    /// Bound on the discounted running cost beyond the horizon.
    pub censoring_bias_bound: f64,
}

impl CostEstimate {
    fn from_samples(
        samples: impl Iterator<Item = f64> + Clone,
        n: usize,
        censored: usize,
        bias: f64,
    ) -> Self {
        let mean = samples.clone().sum::<f64>() / n as f64;
        let var = if n > 1 {
            samples.map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            n_paths: n,
            censored_fraction: censored as f64 / n as f64,
            censoring_bias_bound: bias,
        }
    }

    /// `(estimate - reference) / std_error`.
    pub fn z_score(&self, reference: f64) -> f64 {
        (self.mean - reference) / self.std_error
    }
}

#[derive(Debug, Clone)]
struct PathOutcome {
    costs: Vec<f64>,
    absorbed: bool,
    max_state: f64,
    beta_crossings: usize,
}

fn run_ensemble(
    model: &DiffusionModel,
    plan: &Plan,
    x0: f64,
    rates: &[f64],
    cost: &RunningCost,
    cfg: &SimConfig,
) -> Vec<PathOutcome> {
    with_engine!(model, plan, cfg, |engine| {
        (0..cfg.n_paths)
            .into_par_iter()
            .map(|path| {
                let mut obs = CostObserver::new(cost, rates, cfg, model.lower());
                let stats = engine.run(x0, path, &mut obs);
                PathOutcome {
                    costs: obs.totals(),
                    absorbed: stats.absorbed,
                    max_state: stats.max_state,
                    beta_crossings: stats.beta_crossings,
                }
            })
            .collect()
    })
}

/// Per-atom and aggregate estimates from one path ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleEstimate {
    pub x0: f64,
    pub rates: Vec<f64>,
    pub weights: Vec<f64>,
    pub per_atom: Vec<CostEstimate>,
    pub aggregate: CostEstimate,
    pub max_state: f64,
    pub paths_crossing_beta: usize,
}

fn summarise(
    outcomes: &[PathOutcome],
    x0: f64,
    disc: &WeightedDiscount,
    cost: &RunningCost,
    model: &DiffusionModel,
    cfg: &SimConfig,
) -> EnsembleEstimate {
    let n = outcomes.len();
    let censored = outcomes.iter().filter(|o| !o.absorbed).count();
    let max_state = outcomes.iter().map(|o| o.max_state).fold(x0, f64::max);
    let f_bound = cost
        .eval(max_state)
        .max(cost.at_lower(model.lower()))
        .max(0.0);
    let t_end = cfg.steps() as f64 * cfg.dt;
    let rates = disc.rates();
    let weights = disc.weights();
    let bias: Vec<f64> = rates
        .iter()
        .map(|q| (-q * t_end).exp() * f_bound / q)
        .collect();
    let per_atom = (0..rates.len())
        .map(|k| {
            CostEstimate::from_samples(outcomes.iter().map(|o| o.costs[k]), n, censored, bias[k])
        })
        .collect();
    let combined = |o: &PathOutcome| {
        o.costs
            .iter()
            .zip(&weights)
            .map(|(c, p)| c * p)
            .sum::<f64>()
    };
    let agg_bias = bias.iter().zip(&weights).map(|(b, p)| b * p).sum();
    EnsembleEstimate {
        x0,
        per_atom,
        aggregate: CostEstimate::from_samples(outcomes.iter().map(combined), n, censored, agg_bias),
        rates,
        weights,
        max_state,
        paths_crossing_beta: outcomes.iter().filter(|o| o.beta_crossings > 0).count(),
    }
}

/// Estimates the per-rate costs and their weighted sum on a common ensemble.
pub fn estimate_ensemble(
    model: &DiffusionModel,
    strat: &ThresholdStrategy,
    x0: f64,
    disc: &WeightedDiscount,
    cost: &RunningCost,
    cfg: &SimConfig,
) -> Result<EnsembleEstimate> {
    let plan = prepare(model, strat, x0, cfg)?;
    let outcomes = run_ensemble(model, &plan, x0, &disc.rates(), cost, cfg);
    Ok(summarise(&outcomes, x0, disc, cost, model, cfg))
}

/// Monte Carlo estimate of the cost at a single discount rate `q`.
pub fn estimate_w(
    model: &DiffusionModel,
    strat: &ThresholdStrategy,
    x0: f64,
    q: f64,
    cost: &RunningCost,
    cfg: &SimConfig,
) -> Result<CostEstimate> {
    let disc = WeightedDiscount::single(q)?;
    Ok(estimate_ensemble(model, strat, x0, &disc, cost, cfg)?.aggregate)
}

/// Monte Carlo estimate of the weighted cost.
pub fn estimate_j(
    model: &DiffusionModel,
    strat: &ThresholdStrategy,
    x0: f64,
    disc: &WeightedDiscount,
    cost: &RunningCost,
    cfg: &SimConfig,
) -> Result<CostEstimate> {
    Ok(estimate_ensemble(model, strat, x0, disc, cost, cfg)?.aggregate)
}

/// Coupled comparison of `dt` against `dt / 2` on the same Brownian paths.
#[derive(Debug, Clone, Serialize)]
pub struct DtHalving {
    pub coarse: EnsembleEstimate,
    pub fine: EnsembleEstimate,
    /// Per-atom mean of fine minus coarse, then the aggregate.
    pub shift: Vec<f64>,
    pub shift_std_error: Vec<f64>,
}

/// Runs `cfg` (with one more noise split) and `cfg` at half the step on the
/// first `n_paths` paths.
pub fn dt_halving(
    model: &DiffusionModel,
    strat: &ThresholdStrategy,
    x0: f64,
    disc: &WeightedDiscount,
    cost: &RunningCost,
    cfg: &SimConfig,
    n_paths: usize,
) -> Result<DtHalving> {
    let coarse_cfg = SimConfig {
        n_paths,
        noise_splits: cfg.noise_splits + 1,
        ..cfg.clone()
    };
    let fine_cfg = SimConfig {
        n_paths,
        dt: cfg.dt / 2.0,
        ..cfg.clone()
    };
    let plan = prepare(model, strat, x0, &coarse_cfg)?;
    fine_cfg.validate()?;
    let rates = disc.rates();
    let coarse = run_ensemble(model, &plan, x0, &rates, cost, &coarse_cfg);
    let fine = run_ensemble(model, &plan, x0, &rates, cost, &fine_cfg);
    let weights = disc.weights();
    let weights = &weights;
    let (coarse_ref, fine_ref) = (&coarse, &fine);
    let diff = |k: Option<usize>| {
        let pick = move |o: &PathOutcome| match k {
            Some(k) => o.costs[k],
            None => o.costs.iter().zip(weights).map(|(c, p)| c * p).sum(),
        };
        let d = coarse_ref
            .iter()
            .zip(fine_ref)
            .map(move |(c, f)| pick(f) - pick(c));
        CostEstimate::from_samples(d, n_paths, 0, 0.0)
    };
    let mut shifts: Vec<CostEstimate> = (0..rates.len()).map(|k| diff(Some(k))).collect();
    shifts.push(diff(None));
    Ok(DtHalving {
        coarse: summarise(&coarse, x0, disc, cost, model, &coarse_cfg),
        fine: summarise(&fine, x0, disc, cost, model, &fine_cfg),
        shift: shifts.iter().map(|s| s.mean).collect(),
        shift_std_error: shifts.iter().map(|s| s.std_error).collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DeltaProbe {
    pub deltas: Vec<f64>,
    pub estimates: Vec<CostEstimate>,
    /// Weighted least-squares line through `(delta, estimate)`.
    pub intercept: f64,
    pub intercept_std_error: f64,
    pub slope: f64,
}

/// Cost from `x0 >= beta` under the mild strategy for each restart depth in
/// `deltas`, with a straight-line extrapolation to zero depth.
#[allow(clippy::too_many_arguments)]
pub fn delta_limit_probe(
    model: &DiffusionModel,
    rate: &ControlRate,
    beta: f64,
    deltas: &[f64],
    x0: f64,
    q: f64,
    cost: &RunningCost,
    cfg: &SimConfig,
) -> Result<DeltaProbe> {
    if deltas.is_empty() {
        return Err(Error::InsufficientData("empty delta ladder".into()));
    }
    if deltas.windows(2).any(|w| w[1] >= w[0]) || deltas.iter().any(|&d| !(d > 0.0)) {
        return domain("delta ladder must be positive and strictly decreasing");
    }
    if x0 < beta {
        return domain(format!("probe starts at or above beta = {beta}, got {x0}"));
    }
    let estimates = deltas
        .iter()
        .map(|&delta| {
            let strat = ThresholdStrategy::Mild {
                rate: rate.clone(),
                beta,
                delta,
            };
            estimate_w(model, &strat, x0, q, cost, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let (intercept, intercept_std_error, slope) = if estimates.len() == 1 {
        (estimates[0].mean, estimates[0].std_error, 0.0)
    } else {
        weighted_line(deltas, &estimates)
    };
    Ok(DeltaProbe {
        deltas: deltas.to_vec(),
        estimates,
        intercept,
        intercept_std_error,
        slope,
    })
}

fn weighted_line(x: &[f64], est: &[CostEstimate]) -> (f64, f64, f64) {
    let w: Vec<f64> = est
        .iter()
        .map(|e| 1.0 / e.std_error.max(f64::MIN_POSITIVE).powi(2))
        .collect();
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&xi, e), &wi) in x.iter().zip(est).zip(&w) {
        sw += wi;
        sx += wi * xi;
        sy += wi * e.mean;
        sxx += wi * xi * xi;
        sxy += wi * xi * e.mean;
    }
    let det = sw * sxx - sx * sx;
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / sw;
    (intercept, (sxx / det).sqrt(), slope)
}

#[derive(Debug, Clone, Serialize)]
pub struct InaccessibilityReport {
    pub dt: f64,
    pub paths: usize,
    pub beta: f64,
    /// Paths with a step ending at or above `beta`.
    pub crossings: usize,
    pub touch_level: f64,
    /// Fraction of paths whose maximum reached `touch_level`.
    pub touching_fraction: f64,
    pub max_state: f64,
}

/// Path maxima relative to the explosion point of a mild strategy;
/// `touch_level` defaults to `beta - 10 sqrt(dt) vol(beta)`.
pub fn inaccessibility_probe(
    model: &DiffusionModel,
    strat: &ThresholdStrategy,
    x0: f64,
    cfg: &SimConfig,
    touch_level: Option<f64>,
) -> Result<InaccessibilityReport> {
    let plan = prepare(model, strat, x0, cfg)?;
    let Some((beta, _)) = plan.explosion else {
        return domain("strategy has no explosion point");
    };
    let touch_level = touch_level.unwrap_or(beta - 10.0 * cfg.dt.sqrt() * model.sigma(beta));
    let outcomes = run_ensemble(model, &plan, x0, &[], &RunningCost::Quadratic, cfg);
    Ok(InaccessibilityReport {
        dt: cfg.dt,
        paths: outcomes.len(),
        beta,
        crossings: outcomes.iter().filter(|o| o.beta_crossings > 0).count(),
        touch_level,
        touching_fraction: outcomes
            .iter()
            .filter(|o| o.max_state >= touch_level)
            .count() as f64
            / outcomes.len() as f64,
        max_state: outcomes.iter().map(|o| o.max_state).fold(x0, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mild::build_mild;
    use crate::strong::StrongCandidate;
    use proptest::prelude::*;

    fn gbm() -> DiffusionModel {
        DiffusionModel::gbm(0.4).unwrap()
    }

    fn short(n_paths: usize) -> SimConfig {
        SimConfig {
            t_max: 2.0,
            n_paths,
            ..SimConfig::default()
        }
    }

    fn strong() -> (StrongCandidate, ThresholdStrategy) {
        let c = StrongCandidate::build(0.16, 0.2, 0.4).unwrap();
        let s = ThresholdStrategy::Strong {
            threshold: c.threshold,
        };
        (c, s)
    }

    #[test]
    fn initial_jump_to_strong_threshold() {
        let (c, s) = strong();
        let b = c.threshold;
        let rec = simulate_path(&gbm(), &s, 2.0 * b, &short(1), 0).unwrap();
        assert_eq!(rec.states[0], b);
        assert_eq!(rec.jumps[0], Jump { time: 0.0, size: b });
        assert_eq!(rec.control[0], b);
    }

    #[test]
    fn initial_jump_below_mild_threshold() {
        let m = build_mild(0.16, 0.2, 3.0).unwrap().valid().unwrap();
        let s = ThresholdStrategy::Mild {
            rate: m.control_rate(),
            beta: m.beta(),
            delta: 0.1,
        };
        let rec = simulate_path(&gbm(), &s, m.beta() + 0.5, &short(1), 3).unwrap();
        assert_eq!(rec.states[0], m.beta() - 0.1);
        assert!(rec.states.iter().all(|&x| x < m.beta()));
    }

    #[test]
    fn paths_are_deterministic() {
        let (c, s) = strong();
        let a = simulate_path(&gbm(), &s, 0.9 * c.threshold, &short(1), 7).unwrap();
        let b = simulate_path(&gbm(), &s, 0.9 * c.threshold, &short(1), 7).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.control, b.control);
        let other = simulate_path(&gbm(), &s, 0.9 * c.threshold, &short(1), 8).unwrap();
        assert_ne!(a.states, other.states);
    }

    #[test]
    fn zero_cost_and_control_give_zero() {
        let s = ThresholdStrategy::Generalised {
            rate: ControlRate::zero(),
            beta: f64::INFINITY,
            strong: vec![],
            delta: 0.0,
        };
        let zero = RunningCost::General {
            f: std::sync::Arc::new(|_| 0.0),
            at_lower: 0.0,
        };
        let e = estimate_w(&gbm(), &s, 1.0, 0.5, &zero, &short(50)).unwrap();
        assert_eq!((e.mean, e.std_error), (0.0, 0.0));
    }

    #[test]
    fn single_atom_weighted_cost_is_the_atom_cost() {
        let (c, s) = strong();
        let cfg = short(200);
        let x0 = 0.5 * c.threshold;
        let w = estimate_w(&gbm(), &s, x0, 0.2, &RunningCost::Quadratic, &cfg).unwrap();
        let disc = WeightedDiscount::single(0.2).unwrap();
        let j = estimate_j(&gbm(), &s, x0, &disc, &RunningCost::Quadratic, &cfg).unwrap();
        assert_eq!(w, j);
    }

    #[test]
    fn starting_above_threshold_adds_the_jump() {
        let (c, s) = strong();
        let b = c.threshold;
        let disc = WeightedDiscount::two_point(0.2, 0.4).unwrap();
        let cfg = short(200);
        let above = estimate_j(&gbm(), &s, 1.5 * b, &disc, &RunningCost::Quadratic, &cfg).unwrap();
        let at = estimate_j(&gbm(), &s, b, &disc, &RunningCost::Quadratic, &cfg).unwrap();
        assert!((above.mean - at.mean - 0.5 * b).abs() <= 1e-12);
        assert!((above.std_error - at.std_error).abs() <= 1e-12);
    }

    #[test]
    fn coupled_runs_share_brownian_paths() {
        // With no control both runs follow the same increments, so the
        // Euler paths sampled at the coarse times almost agree.
        let s = ThresholdStrategy::Generalised {
            rate: ControlRate::zero(),
            beta: f64::INFINITY,
            strong: vec![],
            delta: 0.0,
        };
        let coarse = SimConfig {
            noise_splits: 1,
            ..short(1)
        };
        let fine = SimConfig {
            dt: 5e-4,
            ..short(1)
        };
        let a = simulate_path(&gbm(), &s, 1.0, &coarse, 4).unwrap();
        let b = simulate_path(&gbm(), &s, 1.0, &fine, 4).unwrap();
        let gap = a
            .states
            .iter()
            .zip(b.states.iter().step_by(2))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-2, "{gap}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let (_, s) = strong();
        let cfg = SimConfig {
            n_paths: 0,
            ..short(1)
        };
        assert!(matches!(
            estimate_w(&gbm(), &s, 0.1, 0.2, &RunningCost::Quadratic, &cfg),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            simulate_path(&gbm(), &s, -1.0, &short(1), 0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            simulate_path(
                &gbm(),
                &s,
                0.1,
                &SimConfig {
                    dt: 0.0,
                    ..short(1)
                },
                0
            ),
            Err(Error::Domain(_))
        ));
        let m = build_mild(0.16, 0.2, 3.0).unwrap().valid().unwrap();
        let probe = delta_limit_probe(
            &gbm(),
            &m.control_rate(),
            m.beta(),
            &[0.1, 0.2],
            2.0,
            3.0,
            &RunningCost::Quadratic,
            &short(10),
        );
        assert!(matches!(probe, Err(Error::Domain(_))));
    }

    #[test]
    fn projection_and_bridge_agree_on_containment() {
        let (c, s) = strong();
        for reflection in [Reflection::Projection, Reflection::BridgeMaximum] {
            let cfg = SimConfig {
                reflection,
                ..short(1)
            };
            let rec = simulate_path(&gbm(), &s, 0.99 * c.threshold, &cfg, 1).unwrap();
            assert!(rec.states.iter().all(|&x| x <= c.threshold));
            assert!(*rec.local_time.last().unwrap() > 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn control_is_monotone_and_states_contained(seed in 0u64..1000, frac in 0.05f64..3.0) {
            let (c, s) = strong();
            let cfg = SimConfig { seed, t_max: 1.0, ..SimConfig::default() };
            let rec = simulate_path(&gbm(), &s, frac * c.threshold, &cfg, 0).unwrap();
            prop_assert!(rec.control.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!(rec.local_time.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!(rec.states.iter().all(|&x| x <= c.threshold));
        }

        #[test]
        fn mild_paths_stay_below_beta(seed in 0u64..1000) {
            let m = build_mild(0.16, 0.2, 3.0).unwrap().valid().unwrap();
            let s = ThresholdStrategy::Mild { rate: m.control_rate(), beta: m.beta(), delta: 0.1 };
            let cfg = SimConfig { seed, t_max: 1.0, ..SimConfig::default() };
            let rec = simulate_path(&gbm(), &s, 0.99 * m.beta(), &cfg, 0).unwrap();
            prop_assert_eq!(rec.beta_crossings, 0);
            prop_assert!(rec.control.windows(2).all(|w| w[1] >= w[0]));
        }
    }
}
