//! Independent reference computations shared by the integration tests.

#![allow(dead_code)]

use bridgesampler::schedule::BridgeSchedule;
use bridgesampler::State;

pub fn v(x: &[f64]) -> State {
    State::from_column_slice(x)
}

fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, fa, m, fm, flm);
    let right = simpson(m, fm, b, fb, frm);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive(f, a, m, fa, fm, flm, left, 0.5 * tol, depth - 1)
            + adaptive(f, m, b, fm, fb, frm, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to relative tolerance
/// `rel_tol`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = simpson(a, fa, b, fb, fm);
    let tol = rel_tol * whole.abs().max(f64::MIN_POSITIVE);
    adaptive(f, a, b, fa, fb, fm, whole, tol, 30)
}

/// `alpha_t = exp(∫_0^t f)` by quadrature of the schedule's `f`.
pub fn alpha_by_quadrature(s: &BridgeSchedule, t: f64) -> f64 {
    integrate(&|u| s.f(u), 0.0, t, 1e-13).exp()
}

/// `rho_t² = ∫_0^t g²/alpha²` by nested quadrature.
pub fn rho2_by_quadrature(s: &BridgeSchedule, t: f64) -> f64 {
    integrate(
        &|u| {
            let a = alpha_by_quadrature(s, u);
            s.g2(u) / (a * a)
        },
        0.0,
        t,
        1e-11,
    )
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

pub fn schedules() -> Vec<BridgeSchedule> {
    vec![
        BridgeSchedule::brownian_bridge(1.0, 1.0).unwrap(),
        BridgeSchedule::brownian_bridge(0.7, 2.0).unwrap(),
        BridgeSchedule::variance_preserving(0.1, 2.0, 1.0).unwrap(),
        BridgeSchedule::variance_preserving(0.1, 20.0, 1.0).unwrap(),
    ]
}
