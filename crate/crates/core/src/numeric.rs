//! Small scalar root finders shared by the solver and surface modules.

/// Illinois-modified regula falsi on a sign-changing bracket.
///
/// Returns the midpoint of the final bracket once it is narrower than `tol`
/// or a residual vanishes exactly.
pub(crate) fn illinois(
    f: impl Fn(f64) -> f64,
    mut a: f64,
    mut fa: f64,
    mut b: f64,
    mut fb: f64,
    tol: f64,
) -> f64 {
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    debug_assert!(fa * fb < 0.0, "bracket does not change sign");
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        let mut c = b - fb * (b - a) / (fb - fa);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        if !(c > lo && c < hi) {
            c = 0.5 * (a + b);
        }
        let fc = f(c);
        if fc == 0.0 {
            return c;
        }
        if fc * fb < 0.0 {
            a = b;
            fa = fb;
        } else {
            fa *= 0.5;
        }
        b = c;
        fb = fc;
    }
    if fa.abs() < fb.abs() {
        a
    } else {
        b
    }
}

/// Plain bisection for a boolean predicate that is `lo_val` at `lo` and
/// flips somewhere in `(lo, hi]`.
pub(crate) fn bisect_predicate(
    pred: impl Fn(f64) -> bool,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> f64 {
    let lo_val = pred(lo);
    while (hi - lo).abs() > tol {
        let m = 0.5 * (lo + hi);
        if pred(m) == lo_val {
            lo = m;
        } else {
            hi = m;
        }
    }
    0.5 * (lo + hi)
}
