//! Closed-form integration of affine flows `dx/dt = a·x + b`.

use crate::scalar::Scalar;

fn is_linear<T: Scalar>(a: T) -> bool {
    a.abs() < T::lit(1e-12)
}

/// State after `dt` seconds starting from `x0`.
pub fn advance<T: Scalar>(x0: T, a: T, b: T, dt: T) -> T {
    if is_linear(a) {
        x0 + b * dt
    } else {
        // x0 + (a·x0 + b)(e^{a·dt} - 1)/a, stable for small a·dt
        x0 + (a * x0 + b) * (a * dt).exp_m1() / a
    }
}

/// Time-integral of the trajectory over `[0, dt]`.
pub fn integral<T: Scalar>(x0: T, a: T, b: T, dt: T) -> T {
    if is_linear(a) {
        x0 * dt + b * dt * dt / T::lit(2.0)
    } else {
        let x_end = advance(x0, a, b, dt);
        (x_end - x0 - b * dt) / a
    }
}

/// Equilibrium `-b/a`, when the flow has one.
pub fn fixed_point<T: Scalar>(a: T, b: T) -> Option<T> {
    if is_linear(a) {
        None
    } else {
        Some(-b / a)
    }
}

/// Smallest `t ≥ 0` at which the trajectory equals `target`, if any.
pub fn time_to_reach<T: Scalar>(x0: T, a: T, b: T, target: T) -> Option<T> {
    if x0 == target {
        return Some(T::zero());
    }
    if is_linear(a) {
        if b == T::zero() {
            return None;
        }
        let t = (target - x0) / b;
        return (t >= T::zero() && t.is_finite()).then_some(t);
    }
    let slope = a * x0 + b;
    if slope == T::zero() {
        return None;
    }
    let q = a * (target - x0) / slope;
    if q <= -T::one() {
        return None;
    }
    let t = q.ln_1p() / a;
    (t >= T::zero() && t.is_finite()).then_some(t)
}

/// Time until `x op theta` (with `op` an upper bound when `upper`) stops
/// holding. `Some(0)` when already violated or sitting on the boundary with
/// outward motion; `None` when it holds forever.
pub fn exit_time<T: Scalar>(x0: T, a: T, b: T, theta: T, upper: bool, strict: bool) -> Option<T> {
    let slope = a * x0 + b;
    let inside = match (upper, strict) {
        (true, true) => x0 < theta,
        (true, false) => x0 <= theta,
        (false, true) => x0 > theta,
        (false, false) => x0 >= theta,
    };
    if !inside {
        return Some(T::zero());
    }
    let outward = if upper { slope > T::zero() } else { slope < T::zero() };
    if x0 == theta {
        return outward.then_some(T::zero());
    }
    if !outward {
        // monotone trajectories move away from or stay off the boundary
        return None;
    }
    time_to_reach(x0, a, b, theta)
}

/// Time-measure of `{t ∈ [0,dt] : x(t) < theta}` split into the maximal
/// contiguous stretch touching each end; used by window evaluation.
/// Returns the (start, end) offsets of the sub-interval where `x < theta`,
/// which is a single interval because affine trajectories are monotone.
pub fn below_interval<T: Scalar>(x0: T, a: T, b: T, dt: T, theta: T) -> Option<(T, T)> {
    let x1 = advance(x0, a, b, dt);
    match (x0 < theta, x1 < theta) {
        (true, true) => Some((T::zero(), dt)),
        (false, false) => None,
        (true, false) => {
            let t = time_to_reach(x0, a, b, theta).unwrap_or(dt).min(dt);
            Some((T::zero(), t))
        }
        (false, true) => {
            let t = time_to_reach(x0, a, b, theta).unwrap_or(T::zero()).min(dt);
            Some((t, dt))
        }
    }
}
