//! Evaluation interface shared by closed-form candidates and the verifier.

use serde::Serialize;

use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Order {
    Value,
    First,
    Second,
}

impl Order {
    pub fn from_index(k: u8) -> Result<Self> {
        match k {
            0 => Ok(Order::Value),
            1 => Ok(Order::First),
            2 => Ok(Order::Second),
            _ => domain(format!("derivative order must be 0, 1 or 2, got {k}")),
        }
    }
}

/// Which one-sided piece to use at a pasting point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Left,
    Right,
}

/// Per-atom value functions `v(.; q_k)` with derivatives up to order two.
pub trait ValueSource: Send + Sync {
    fn atom_count(&self) -> usize;

    fn atom_value(&self, atom: usize, x: f64, order: Order, side: Side) -> Result<f64>;

    /// States where the piecewise definition changes.
    fn knots(&self) -> Vec<f64>;
}

/// `sum_k p_k v^{(order)}(x; q_k)`.
pub fn aggregate(
    src: &dyn ValueSource,
    weights: &[f64],
    x: f64,
    order: Order,
    side: Side,
) -> Result<f64> {
    let mut acc = 0.0;
    for (k, p) in weights.iter().enumerate().take(src.atom_count()) {
        acc += p * src.atom_value(k, x, order, side)?;
    }
    Ok(acc)
}

/// `x^e` for `x > 0` through the exponential, valid for non-integer `e`.
#[inline]
pub(crate) fn pow_pos(x: f64, e: f64) -> f64 {
    (e * x.ln()).exp()
}
