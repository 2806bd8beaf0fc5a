//! Finite-difference solver for the single-rate boundary value problem
//! `f + mu v' + sigma^2 v''/2 - u v' + u - q v = 0`, used as an independent
//! check on closed-form value functions.

use crate::error::{domain, Error, Result};
use crate::model::{ControlRate, DiffusionModel, RunningCost};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RightBoundary {
    /// Prescribed `v'` at the right end (reflection gives slope one).
    Slope(f64),
    /// Prescribed `v` at the right end.
    Value(f64),
}

/// Mesh on `[lo, hi]` with `n` intervals, uniform between consecutive
/// `knots` so that every knot is a node.
pub fn piecewise_uniform_mesh(lo: f64, hi: f64, n: usize, knots: &[f64]) -> Result<Vec<f64>> {
    if !(lo < hi) || n < 2 {
        return domain(format!(
            "mesh needs lo < hi and n >= 2, got [{lo}, {hi}], n = {n}"
        ));
    }
    let mut breaks = vec![lo];
    breaks.extend(knots.iter().copied().filter(|&k| k > lo && k < hi));
    breaks.push(hi);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut mesh = vec![lo];
    for w in breaks.windows(2) {
        let m = ((n as f64) * (w[1] - w[0]) / (hi - lo)).round().max(1.0) as usize;
        for j in 1..=m {
            mesh.push(if j == m {
                w[1]
            } else {
                w[0] + (w[1] - w[0]) * j as f64 / m as f64
            });
        }
    }
    Ok(mesh)
}

/// Solves the BVP on `mesh` with `v(mesh[0]) = left_value` and the given
/// right condition. Three-point differences on the (possibly nonuniform)
/// mesh; at a rate discontinuity the one-sided limits are averaged.
pub fn ode_oracle_solve(
    model: &DiffusionModel,
    cost: &RunningCost,
    q: f64,
    rate: &ControlRate,
    mesh: &[f64],
    left_value: f64,
    right: RightBoundary,
) -> Result<Vec<f64>> {
    let n = mesh.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "mesh needs at least 3 nodes, got {n}"
        )));
    }
    if mesh.windows(2).any(|w| w[0] >= w[1]) {
        return domain("mesh must be strictly increasing");
    }
    if !(q > 0.0) {
        return domain(format!("discount rate must be positive, got {q}"));
    }
    // Unknowns v_1..v_{n-1} (plus v_{n-1} itself under a slope condition).
    let last = match right {
        RightBoundary::Slope(_) => n - 1,
        RightBoundary::Value(_) => n - 2,
    };
    let m = last;
    let mut sub = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut sup = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for i in 1..=last {
        let x = mesh[i];
        let hm = x - mesh[i - 1];
        let hp = if i + 1 < n { mesh[i + 1] - x } else { hm };
        let u = 0.5 * (rate.left_limit(x) + rate.eval(x));
        let diff = 0.5 * model.sigma2(x);
        let conv = model.mu(x) - u;
        // v'' ~ cm v_{i-1} + c0 v_i + cp v_{i+1}, v' ~ dm v_{i-1} + d0 v_i + dp v_{i+1}
        let s = hm + hp;
        let (cm, c0, cp) = (2.0 / (hm * s), -2.0 / (hm * hp), 2.0 / (hp * s));
        let (dm, d0, dp) = (-hp / (hm * s), (hp - hm) / (hm * hp), hm / (hp * s));
        let mut a = diff * cm + conv * dm;
        let b = diff * c0 + conv * d0 - q;
        let mut c = diff * cp + conv * dp;
        let mut f = -(cost.eval(x) + u);
        if i == n - 1 {
            // ghost node v_n = v_{n-2} + 2h slope
            if let RightBoundary::Slope(slope) = right {
                a += c;
                f -= c * 2.0 * hm * slope;
                c = 0.0;
            }
        } else if i == last {
            if let RightBoundary::Value(v) = right {
                f -= c * v;
                c = 0.0;
            }
        }
        if i == 1 {
            f -= a * left_value;
            a = 0.0;
        }
        let row = i - 1;
        sub[row] = a;
        diag[row] = b;
        sup[row] = c;
        rhs[row] = f;
    }
    let interior = thomas(&sub, &diag, &sup, &rhs)?;
    let mut v = Vec::with_capacity(n);
    v.push(left_value);
    v.extend(interior);
    if let RightBoundary::Value(val) = right {
        v.push(val);
    }
    Ok(v)
}

fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let m = diag.len();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    let mut piv = diag[0];
    for i in 0..m {
        if i > 0 {
            piv = diag[i] - sub[i] * c[i - 1];
        }
        if piv == 0.0 || !piv.is_finite() {
            return Err(Error::Numerical(format!(
                "singular tridiagonal system at row {i}"
            )));
        }
        c[i] = sup[i] / piv;
        d[i] = (rhs[i] - if i > 0 { sub[i] * d[i - 1] } else { 0.0 }) / piv;
    }
    let mut x = vec![0.0; m];
    x[m - 1] = d[m - 1];
    for i in (0..m - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    Ok(x)
}

/// `max |approx - exact| / max |exact|` over the mesh.
pub fn relative_max_error(approx: &[f64], exact: &[f64]) -> f64 {
    let err = approx
        .iter()
        .zip(exact)
        .map(|(a, e)| (a - e).abs())
        .fold(0.0, f64::max);
    let scale = exact.iter().map(|e| e.abs()).fold(0.0, f64::max);
    err / scale
}
