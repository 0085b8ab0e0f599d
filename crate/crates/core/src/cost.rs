//! Cost functions over the covering vector.
//!
//! Every cost here is separable, which makes it locally computable: the
//! change caused by raising the variables of one constraint depends only on
//! those variables' values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instances::VarId;

/// A nondecreasing, submodular, separable cost `c(x) = sum_j f_j(x_j)`.
pub trait CostFunction: Send + Sync {
    /// `f_j(to) - f_j(from)` for `from <= to`.
    fn raise_cost(&self, var: VarId, from: f64, to: f64) -> f64;

    /// Largest `to >= from` with `raise_cost(var, from, to) <= budget`.
    fn max_raise(&self, var: VarId, from: f64, budget: f64) -> f64;

    /// `c(x)`.
    fn total(&self, x: &[f64]) -> f64;

    /// `Some(c_j)` when `f_j` is linear with slope `c_j`.
    fn linear_coefficient(&self, var: VarId) -> Option<f64>;
}

/// `c(x) = c·x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCost {
    pub costs: Vec<f64>,
}

impl LinearCost {
    pub fn new(costs: Vec<f64>) -> Self {
        Self { costs }
    }
}

impl CostFunction for LinearCost {
    fn raise_cost(&self, var: VarId, from: f64, to: f64) -> f64 {
        self.costs[var] * (to - from)
    }

    fn max_raise(&self, var: VarId, from: f64, budget: f64) -> f64 {
        from + budget / self.costs[var]
    }

    fn total(&self, x: &[f64]) -> f64 {
        self.costs.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    fn linear_coefficient(&self, var: VarId) -> Option<f64> {
        Some(self.costs[var])
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("variable {var}: piece {piece} has nonpositive or non-finite slope {slope}")]
    BadSlope { var: VarId, piece: usize, slope: f64 },
    #[error("variable {var}: slopes must be nonincreasing (piece {piece})")]
    NotConcave { var: VarId, piece: usize },
    #[error("variable {var}: breakpoints must be strictly increasing and positive (piece {piece})")]
    BadBreakpoint { var: VarId, piece: usize },
    #[error("variable {var} has no pieces")]
    Empty { var: VarId },
}

/// One linear piece of a concave per-variable cost: slope `slope` on
/// `[start, next piece's start)`. The first piece starts at 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub start: f64,
    pub slope: f64,
}

/// `c(x) = sum_j f_j(x_j)` where each `f_j` is piecewise linear, concave,
/// strictly increasing and `f_j(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableConcave {
    pieces: Vec<Vec<Piece>>,
}

impl SeparableConcave {
    pub fn new(pieces: Vec<Vec<Piece>>) -> Result<Self, CostError> {
        for (var, ps) in pieces.iter().enumerate() {
            if ps.is_empty() {
                return Err(CostError::Empty { var });
            }
            for (piece, p) in ps.iter().enumerate() {
                if !(p.slope > 0.0 && p.slope.is_finite()) {
                    return Err(CostError::BadSlope { var, piece, slope: p.slope });
                }
                if piece == 0 {
                    if p.start != 0.0 {
                        return Err(CostError::BadBreakpoint { var, piece });
                    }
                } else {
                    if !(p.start > ps[piece - 1].start && p.start.is_finite()) {
                        return Err(CostError::BadBreakpoint { var, piece });
                    }
                    if p.slope > ps[piece - 1].slope {
                        return Err(CostError::NotConcave { var, piece });
                    }
                }
            }
        }
        Ok(Self { pieces })
    }

    /// Slope `c_j` up to `knee_j`, then `c_j * tail_factor` afterwards.
    pub fn with_knee(costs: &[f64], knee: f64, tail_factor: f64) -> Result<Self, CostError> {
        Self::new(
            costs
                .iter()
                .map(|&c| {
                    vec![
                        Piece { start: 0.0, slope: c },
                        Piece { start: knee, slope: c * tail_factor },
                    ]
                })
                .collect(),
        )
    }

    fn value(&self, var: VarId, v: f64) -> f64 {
        let ps = &self.pieces[var];
        let mut acc = 0.0;
        for (k, p) in ps.iter().enumerate() {
            let end = ps.get(k + 1).map_or(f64::INFINITY, |q| q.start);
            if v <= p.start {
                break;
            }
            acc += p.slope * (v.min(end) - p.start);
        }
        acc
    }
}

impl CostFunction for SeparableConcave {
    fn raise_cost(&self, var: VarId, from: f64, to: f64) -> f64 {
        self.value(var, to) - self.value(var, from)
    }

    fn max_raise(&self, var: VarId, from: f64, budget: f64) -> f64 {
        let ps = &self.pieces[var];
        let mut at = from;
        let mut left = budget;
        for (k, p) in ps.iter().enumerate() {
            let end = ps.get(k + 1).map_or(f64::INFINITY, |q| q.start);
            if at >= end {
                continue;
            }
            let room = p.slope * (end - at);
            if left <= room {
                return at + left / p.slope;
            }
            left -= room;
            at = end;
        }
        at
    }

    fn total(&self, x: &[f64]) -> f64 {
        x.iter().enumerate().map(|(j, &v)| self.value(j, v)).sum()
    }

    fn linear_coefficient(&self, var: VarId) -> Option<f64> {
        match self.pieces[var].as_slice() {
            [only] => Some(only.slope),
            _ => None,
        }
    }
}
