//! Case reports, plot data tables and regime scans.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mild::{build_mild, MildBuild, MildCandidate, MildConstants};
use crate::model::{regions_of_strategy, Region, WeightedDiscount};
use crate::scale::{
    default_base_point, default_ladder, feller_classify_upper, BoundaryReport, ScaleFunction,
};
use crate::sim::{dt_halving, estimate_ensemble, SimConfig};
use crate::strong::{check_rate_ordering, StrongCandidate};
use crate::value::{Order, Side};
use crate::verify::{
    verify_conditions, verify_tabulated, TabulatedPoint, Tolerances, ValueBundle, VerificationGrid,
    VerificationVerdict,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_GRID: usize = 10_000;
/// Verification covers the strong region up to this multiple of the threshold.
pub const STRONG_TRUNCATION: f64 = 10.0;
/// Restart depth below the explosion point used for the mild case reports.
pub const DEFAULT_DELTA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Parameters {
    pub sigma2: f64,
    pub q1: f64,
    pub q2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CandidateConstants {
    Strong {
        gamma: [f64; 2],
        coef: [f64; 2],
        threshold: f64,
        regime_indicator: f64,
    },
    Mild {
        constants: MildConstants,
        rate_at_lower_threshold: f64,
    },
    InvalidMild {
        constants: MildConstants,
        reason: String,
    },
}

/// One row of the Monte Carlo comparison. `rate` is `None` for the weighted cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McRow {
    pub x0: f64,
    pub rate: Option<f64>,
    pub closed_form: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub censoring_bias_bound: f64,
    /// Coupled estimate of the change under `dt -> dt / 2`.
    pub dt_shift: f64,
    pub dt_shift_std_error: f64,
    pub z_limit: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub version: &'static str,
    pub grid_points: usize,
    pub strong_truncation: f64,
    pub tolerances: Tolerances,
    pub delta: Option<f64>,
    pub simulation: Option<SimConfig>,
    pub halving_paths: Option<usize>,
}

impl Provenance {
    fn new(grid_points: usize, delta: Option<f64>) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION"),
            grid_points,
            strong_truncation: STRONG_TRUNCATION,
            tolerances: Tolerances::default(),
            delta,
            simulation: None,
            halving_paths: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseReport {
    pub schema_version: u32,
    pub case: &'static str,
    pub parameters: Parameters,
    pub candidate: CandidateConstants,
    pub verdict: Option<VerificationVerdict>,
    pub boundary: Option<BoundaryReport>,
    pub monte_carlo: Vec<McRow>,
    pub provenance: Provenance,
}

impl CaseReport {
    /// Verification outcome; `None` when no valid candidate exists.
    pub fn passes(&self) -> Option<bool> {
        self.verdict
            .as_ref()
            .map(|v| v.all_pass() && v.smooth_fit_pass)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Numerical(format!("report serialisation: {e}")))
    }
}

/// A built case: the report plus the value functions when the candidate is valid.
#[derive(Debug, Clone)]
pub struct Case {
    pub report: CaseReport,
    pub bundle: Option<ValueBundle>,
}

fn verify(bundle: &ValueBundle, grid_points: usize) -> Result<VerificationVerdict> {
    let tol = Tolerances::default();
    let grid = VerificationGrid::build(bundle, grid_points, STRONG_TRUNCATION, tol.guard_band)?;
    verify_conditions(bundle, &grid, &tol)
}

pub fn strong_case(params: Parameters, grid_points: usize) -> Result<Case> {
    let cand = StrongCandidate::build(params.sigma2, params.q1, params.q2)?;
    let bundle = ValueBundle::strong(&cand)?;
    let verdict = verify(&bundle, grid_points)?;
    Ok(Case {
        report: CaseReport {
            schema_version: SCHEMA_VERSION,
            case: "strong",
            parameters: params,
            candidate: CandidateConstants::Strong {
                gamma: cand.gamma,
                coef: cand.coef,
                threshold: cand.threshold,
                regime_indicator: cand.regime_indicator(),
            },
            verdict: Some(verdict),
            boundary: None,
            monte_carlo: vec![],
            provenance: Provenance::new(grid_points, None),
        },
        bundle: Some(bundle),
    })
}

/// Feller test at the explosion point of a mild candidate, based in the waiting region.
pub fn mild_boundary(bundle: &ValueBundle, cand: &MildCandidate) -> Result<BoundaryReport> {
    let beta = cand.beta();
    let probe: Vec<f64> = (1..200).map(|j| beta * j as f64 / 200.0).collect();
    let regions = regions_of_strategy(&bundle.strategy, &bundle.model, &probe)?;
    let base = default_base_point(&regions).unwrap_or(0.5 * cand.lower_threshold());
    let sf = ScaleFunction::new(&bundle.model, &bundle.rate(), beta, base)?;
    feller_classify_upper(&sf, &default_ladder(beta, base))
}

pub fn mild_case(params: Parameters, grid_points: usize, delta: f64) -> Result<Case> {
    check_rate_ordering(params.sigma2, params.q1, params.q2)?;
    let (candidate, bundle, verdict, boundary) =
        match build_mild(params.sigma2, params.q1, params.q2)? {
            MildBuild::Invalid(inv) => {
                let c = CandidateConstants::InvalidMild {
                    constants: inv.constants,
                    reason: inv.reason,
                };
                (c, None, None, None)
            }
            MildBuild::Valid(cand) => {
                let bundle = ValueBundle::mild(&cand, delta)?;
                let verdict = verify(&bundle, grid_points)?;
                let boundary = mild_boundary(&bundle, &cand)?;
                let c = CandidateConstants::Mild {
                    constants: cand.constants,
                    rate_at_lower_threshold: cand.u_star(cand.lower_threshold())?,
                };
                (c, Some(bundle), Some(verdict), Some(boundary))
            }
        };
    Ok(Case {
        report: CaseReport {
            schema_version: SCHEMA_VERSION,
            case: "mild",
            parameters: params,
            candidate,
            verdict,
            boundary,
            monte_carlo: vec![],
            provenance: Provenance::new(grid_points, Some(delta)),
        },
        bundle,
    })
}

/// One row of the plot data file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataRow {
    pub x: f64,
    #[serde(rename = "V")]
    pub v: f64,
    #[serde(rename = "V_prime")]
    pub v_prime: f64,
    pub u_rate: f64,
    pub region: Region,
}

/// Geometric-plus-uniform points on `(0, 2 * threshold]`, the threshold
/// itself, and a dense window around every rate discontinuity.
pub fn data_grid(bundle: &ValueBundle, n: usize) -> Vec<f64> {
    let b = bundle.threshold();
    let hi = 2.0 * b;
    let n_geo = n / 2;
    let n_uni = n - n_geo;
    let mut pts: Vec<f64> = (0..n_geo)
        .map(|j| hi * 10f64.powf(-6.0 + 6.0 * j as f64 / n_geo as f64))
        .collect();
    pts.extend((1..=n_uni).map(|j| hi * j as f64 / n_uni as f64));
    pts.push(b);
    for &d in bundle.rate().discontinuities() {
        let w = 0.01 * d;
        pts.extend((0..=200).map(|j| d - w + 2.0 * w * j as f64 / 200.0));
    }
    pts.retain(|&x| x > 0.0);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// `V`, `V'` and the control rate on `grid`. The rate is infinite at an
/// explosion point and zero inside the strong region.
pub fn data_rows(bundle: &ValueBundle, grid: &[f64]) -> Result<Vec<DataRow>> {
    let regions = regions_of_strategy(&bundle.strategy, &bundle.model, grid)?;
    let rate = bundle.rate();
    let explosion = match &bundle.strategy {
        crate::model::ThresholdStrategy::Mild { beta, .. } => Some(*beta),
        _ => None,
    };
    grid.iter()
        .map(|&x| {
            let region = regions.classify(x).unwrap_or(Region::Strong);
            let u_rate = match region {
                Region::Strong if explosion == Some(x) => f64::INFINITY,
                Region::Strong => 0.0,
                _ => rate.eval(x),
            };
            Ok(DataRow {
                x,
                v: bundle.value(x, Order::Value, Side::Right)?,
                v_prime: bundle.value(x, Order::First, Side::Right)?,
                u_rate,
                region,
            })
        })
        .collect()
}

pub fn write_csv<W: Write>(rows: &[DataRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Numerical(format!("csv write: {e}")))?;
    }
    w.flush()
        .map_err(|e| Error::Numerical(format!("csv write: {e}")))
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<DataRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(|e| Error::Domain(format!("csv read: {e}"))))
        .collect()
}

/// Conditions (I) and (II) recomputed from data rows.
pub fn reverify_rows(rows: &[DataRow], tol: f64) -> Result<(bool, bool)> {
    let pts: Vec<TabulatedPoint> = rows
        .iter()
        .map(|r| TabulatedPoint {
            x: r.x,
            v_prime: r.v_prime,
            region: r.region,
        })
        .collect();
    let (c1, c2) = verify_tabulated(&pts, tol)?;
    Ok((c1.pass, c2.pass))
}

/// Monte Carlo comparison at each starting point: per-atom and weighted
/// estimates against the closed forms, with a coupled dt-halving check on
/// `halving_paths` paths. A row passes when `|z| <= z_limit` and the
/// halving shift is below the standard error.
pub fn monte_carlo_table(
    bundle: &ValueBundle,
    x0s: &[f64],
    cfg: &SimConfig,
    halving_paths: usize,
    z_limit: f64,
) -> Result<Vec<McRow>> {
    let disc: &WeightedDiscount = &bundle.discount;
    let mut rows = vec![];
    for &x0 in x0s {
        let est = estimate_ensemble(&bundle.model, &bundle.strategy, x0, disc, &bundle.cost, cfg)?;
        let halving = dt_halving(
            &bundle.model,
            &bundle.strategy,
            x0,
            disc,
            &bundle.cost,
            cfg,
            halving_paths,
        )?;
        let side = if x0 >= bundle.threshold() {
            Side::Right
        } else {
            Side::Left
        };
        let mut push =
            |rate: Option<f64>, closed_form: f64, e: &crate::sim::CostEstimate, k: usize| {
                let z = e.z_score(closed_form);
                let (shift, shift_se) = (halving.shift[k], halving.shift_std_error[k]);
                rows.push(McRow {
                    x0,
                    rate,
                    closed_form,
                    estimate: e.mean,
                    std_error: e.std_error,
                    z,
                    censoring_bias_bound: e.censoring_bias_bound,
                    dt_shift: shift,
                    dt_shift_std_error: shift_se,
                    z_limit,
                    pass: z.abs() <= z_limit && shift.abs() < e.std_error,
                });
            };
        for (k, e) in est.per_atom.iter().enumerate() {
            push(
                Some(est.rates[k]),
                bundle.atom(k, x0, Order::Value, side)?,
                e,
                k,
            );
        }
        push(
            None,
            bundle.value(x0, Order::Value, side)?,
            &est.aggregate,
            est.rates.len(),
        );
    }
    Ok(rows)
}

/// Three interior starting points: strong case at 1/4, 1/2, 9/10 of the
/// threshold; mild case in the waiting region, mid mild region, and just
/// below the explosion point.
pub fn default_starting_points(bundle: &ValueBundle) -> Vec<f64> {
    match &bundle.strategy {
        crate::model::ThresholdStrategy::Mild { rate, beta, .. } => {
            let lower = rate
                .discontinuities()
                .first()
                .copied()
                .unwrap_or(0.5 * beta);
            vec![
                0.5 * lower,
                0.5 * (lower + beta),
                beta - 0.1 * (beta - lower),
            ]
        }
        _ => {
            let b = bundle.threshold();
            vec![0.25 * b, 0.5 * b, 0.9 * b]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub q2: f64,
    pub regime_indicator: f64,
    pub strong_threshold: f64,
    /// Grid maximum of `V' - 1` on the waiting region.
    pub strong_condition_i_margin: f64,
    pub strong_pass: bool,
    pub mild_valid: bool,
    pub mild_pass: Option<bool>,
    pub mild_lower_threshold: Option<f64>,
    pub mild_beta: f64,
}

/// Consecutive scan points where the strong verdict flips.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Crossover {
    pub q2_low: f64,
    pub q2_high: f64,
    /// The regime indicator changes sign inside the same bracket.
    pub indicator_flips: bool,
    /// Root of the regime indicator in the bracket, by bisection.
    pub indicator_root: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    pub schema_version: u32,
    pub sigma2: f64,
    pub q1: f64,
    pub grid_points: usize,
    pub rows: Vec<ScanRow>,
    pub crossovers: Vec<Crossover>,
}

/// Uniform scan of `q2` over `[q2_min, q2_max]` with `points` points.
pub fn scan(
    sigma2: f64,
    q1: f64,
    q2_min: f64,
    q2_max: f64,
    points: usize,
    grid_points: usize,
) -> Result<ScanReport> {
    if points == 0 || !(q2_min <= q2_max) || (points == 1 && q2_min != q2_max) {
        return Err(Error::InsufficientData(format!(
            "empty scan range [{q2_min}, {q2_max}] with {points} points"
        )));
    }
    let step = if points > 1 {
        (q2_max - q2_min) / (points - 1) as f64
    } else {
        0.0
    };
    let mut rows = vec![];
    for j in 0..points {
        let q2 = if j + 1 == points {
            q2_max
        } else {
            q2_min + step * j as f64
        };
        let params = Parameters { sigma2, q1, q2 };
        let strong = strong_case(params, grid_points)?;
        let (threshold, indicator) = match strong.report.candidate {
            CandidateConstants::Strong {
                threshold,
                regime_indicator,
                ..
            } => (threshold, regime_indicator),
            _ => unreachable!("strong case reports strong constants"),
        };
        let sv = strong.report.verdict.as_ref().expect("strong verdict");
        let mild = mild_case(params, grid_points, DEFAULT_DELTA)?;
        let (mild_valid, mild_lower, mild_beta) = match &mild.report.candidate {
            CandidateConstants::Mild { constants, .. } => {
                (true, Some(constants.lower_threshold), constants.beta)
            }
            CandidateConstants::InvalidMild { constants, .. } => (false, None, constants.beta),
            CandidateConstants::Strong { .. } => unreachable!("mild case reports mild constants"),
        };
        rows.push(ScanRow {
            q2,
            regime_indicator: indicator,
            strong_threshold: threshold,
            strong_condition_i_margin: sv.condition_i.margin,
            strong_pass: strong.report.passes() == Some(true),
            mild_valid,
            mild_pass: mild.report.passes(),
            mild_lower_threshold: mild_lower,
            mild_beta,
        });
    }
    let crossovers = rows
        .windows(2)
        .filter(|w| w[0].strong_pass != w[1].strong_pass)
        .map(|w| {
            let flips = w[0].regime_indicator.signum() != w[1].regime_indicator.signum();
            Crossover {
                q2_low: w[0].q2,
                q2_high: w[1].q2,
                indicator_flips: flips,
                indicator_root: if flips {
                    indicator_root(sigma2, q1, w[0].q2, w[1].q2).ok()
                } else {
                    None
                },
            }
        })
        .collect();
    Ok(ScanReport {
        schema_version: SCHEMA_VERSION,
        sigma2,
        q1,
        grid_points,
        rows,
        crossovers,
    })
}

fn indicator_root(sigma2: f64, q1: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    let h = |q2: f64| crate::strong::regime_indicator(sigma2, q1, q2);
    let h_lo = h(lo)?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid)?.signum() == h_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn write_scan_csv<W: Write>(report: &ScanReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Numerical(format!("csv write: {e}"));
    w.write_record([
        "q2",
        "regime_indicator",
        "strong_threshold",
        "strong_condition_i_margin",
        "strong_pass",
        "mild_valid",
        "mild_pass",
        "mild_lower_threshold",
        "mild_beta",
    ])
    .map_err(err)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in &report.rows {
        w.write_record([
            r.q2.to_string(),
            r.regime_indicator.to_string(),
            r.strong_threshold.to_string(),
            r.strong_condition_i_margin.to_string(),
            r.strong_pass.to_string(),
            r.mild_valid.to_string(),
            r.mild_pass.map_or(String::new(), |p| p.to_string()),
            opt(r.mild_lower_threshold),
            r.mild_beta.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::Numerical(format!("csv write: {e}")))
}
