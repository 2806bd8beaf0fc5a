//! Adaptive Gauss–Kronrod (7/15) quadrature on finite intervals.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];

// Gauss weights for the odd Kronrod nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-13,
            rel_tol: 1e-11,
            max_panels: 4000,
        }
    }
}

/// Single-panel 15-point Kronrod estimate and its Gauss difference. Being a
/// fixed rule it is a smooth function of the limits, which makes it safe to
/// nest inside an adaptive outer integral.
pub fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut gauss = fc * WG[3];
    let mut kron = fc * WGK[7];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

struct Panel {
    lo: f64,
    hi: f64,
    value: f64,
    err: f64,
}

/// Integral of `f` over `[a, b]`. Globally adaptive: the panel with the
/// largest error estimate is bisected until the summed estimate meets the
/// tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, cfg: &QuadConfig) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!(
            "quadrature needs finite limits, got [{a}, {b}]"
        )));
    }
    let (value, err) = kronrod(&f, a, b);
    let mut panels = vec![Panel {
        lo: a,
        hi: b,
        value,
        err,
    }];
    loop {
        let total: f64 = panels.iter().map(|p| p.value).sum();
        let err: f64 = panels.iter().map(|p| p.err).sum();
        if !total.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite integrand on [{a}, {b}]"
            )));
        }
        if err <= cfg.abs_tol.max(cfg.rel_tol * total.abs()) {
            return Ok(total);
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.total_cmp(&y.1.err))
            .map(|(i, _)| i)
            .expect("at least one panel");
        let Panel { lo, hi, .. } = panels.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        // Panels at round-off width cannot be refined further.
        if panels.len() + 2 > cfg.max_panels || mid == lo || mid == hi {
            return Err(Error::Numerical(format!(
                "quadrature on [{a}, {b}] stalled at error estimate {err:e} near [{lo}, {hi}]"
            )));
        }
        for (l, h) in [(lo, mid), (mid, hi)] {
            let (value, err) = kronrod(&f, l, h);
            panels.push(Panel {
                lo: l,
                hi: h,
                value,
                err,
            });
        }
    }
}
