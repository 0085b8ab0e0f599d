//! Floating-point comparison rules shared by every algorithm in the crate.
//!
//! All solvers use the same three predicates so that a constraint judged
//! satisfied by one code path is judged satisfied by every other one.

/// Relative slack used for covering-constraint satisfaction and floors.
pub const EPS: f64 = 1e-9;

/// `lhs >= rhs` up to `EPS * max(1, |rhs|)`.
#[inline]
pub fn covers(lhs: f64, rhs: f64) -> bool {
    lhs >= rhs - EPS * rhs.abs().max(1.0)
}

/// Floor that snaps values within `EPS` of an integer onto that integer.
///
/// Repeated `x + beta / c` updates land a hair below exact integers (for
/// example `5/3 + 1/3`); a plain `floor` would then undercount.
#[inline]
pub fn floor(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() <= EPS * v.abs().max(1.0) {
        r
    } else {
        v.floor()
    }
}

/// Ceiling with the same snapping rule as [`floor`].
#[inline]
pub fn ceil(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() <= EPS * v.abs().max(1.0) {
        r
    } else {
        v.ceil()
    }
}

/// True when `v` is within `EPS` of an integer.
#[inline]
pub fn is_integral(v: f64) -> bool {
    (v - v.round()).abs() <= EPS * v.abs().max(1.0)
}
