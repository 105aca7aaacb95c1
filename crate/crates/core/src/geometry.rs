//! Exact geometry of the roto-translation group `R^2 x S^1`.
//!
//! Poses carry an unwrapped angle; every comparison between angles is made
//! modulo `2π`. Horizontal geodesics ("rules") are either circular arcs
//! `x = x_c + R sin θ, y = y_c - R cos θ` parametrised by `θ`, or straight
//! segments at constant `θ` parametrised by arc length.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance for accessibility tests on analytic data.
pub const ACCESS_TOL_ANALYTIC: f64 = 1e-9;
/// Default tolerance for accessibility tests on raster data.
pub const ACCESS_TOL_RASTER: f64 = 1e-6;

/// Angular differences below this are treated as equal angles when
/// deciding between the line and arc branches of a connecting rule.
pub const ANGLE_EPS: f64 = 1e-12;

/// Reduce an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Signed difference `b - a` reduced to `(-π, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(b - a)
}

/// Whether two angles agree modulo `2π` within `tol`.
pub fn angles_match(a: f64, b: f64, tol: f64) -> bool {
    angle_diff(a, b).abs() <= tol
}

/// Representative of `angle` (mod 2π) closest to `hint`.
pub fn nearest_branch(angle: f64, hint: f64) -> f64 {
    angle + TAU * ((hint - angle) / TAU).round()
}

// sin(z)/z, accurate through z = 0
fn sinc(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        let z2 = z * z;
        1.0 - z2 / 6.0 + z2 * z2 / 120.0
    } else {
        z.sin() / z
    }
}

/// A point `(x, y, θ)` of the roto-translation group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub const fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn planar(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// `(x, y, θ + π)`: the same planar point with the opposite contour orientation.
    pub fn conjugate(&self) -> Pose {
        conjugate(self)
    }

    pub fn planar_distance(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Componentwise comparison with `θ` taken modulo `2π`.
    pub fn approx_eq(&self, other: &Pose, tol: f64) -> bool {
        (self.x - other.x).abs() <= tol
            && (self.y - other.y).abs() <= tol
            && angles_match(self.theta, other.theta, tol)
    }

    /// Largest componentwise deviation, `θ` modulo `2π`.
    pub fn max_deviation(&self, other: &Pose) -> f64 {
        (self.x - other.x)
            .abs()
            .max((self.y - other.y).abs())
            .max(angle_diff(self.theta, other.theta).abs())
    }
}

/// Coefficients of a horizontal tangent vector `a X₁ + b X₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentCoords {
    pub a: f64,
    pub b: f64,
}

impl TangentCoords {
    pub const fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }
}

/// Exponential map restricted to the horizontal distribution.
///
/// Uses `(sin(θ₀+b) - sin θ₀)/b = cos(θ₀ + b/2) sinc(b/2)` (and the cosine
/// counterpart), which is the circular-arc formula for `b ≠ 0` and reduces to
/// the straight-line formula at `b = 0` without a branch.
pub fn exp_horizontal(p: &Pose, v: TangentCoords) -> Pose {
    let half = 0.5 * v.b;
    let scale = v.a * sinc(half);
    let mid = p.theta + half;
    Pose {
        x: p.x + scale * mid.cos(),
        y: p.y + scale * mid.sin(),
        theta: p.theta + v.b,
    }
}

pub fn conjugate(p: &Pose) -> Pose {
    Pose::new(p.x, p.y, p.theta + PI)
}

/// Residual of the accessibility relation between `p` and `q` in the
/// cross-multiplied form `(y-y₀)cos m - (x-x₀)sin m` with `m = (θ+θ₀)/2`.
///
/// Vanishes exactly on the accessible set of `p`. Shifting either angle by
/// `2π` only flips the sign.
pub fn accessibility_residual(p: &Pose, q: &Pose) -> f64 {
    let m = 0.5 * (p.theta + q.theta);
    (q.y - p.y) * m.cos() - (q.x - p.x) * m.sin()
}

pub fn is_accessible(p: &Pose, q: &Pose, tol: f64) -> bool {
    accessibility_residual(p, q).abs() <= tol
}

/// Direction in which an arc rule sweeps its angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Traversal {
    /// `θ` increases from the start pose to the end pose.
    Anticlockwise,
    /// `θ` decreases from the start pose to the end pose.
    Clockwise,
}

impl Traversal {
    pub fn flipped(self) -> Self {
        match self {
            Traversal::Anticlockwise => Traversal::Clockwise,
            Traversal::Clockwise => Traversal::Anticlockwise,
        }
    }
}

/// Circular-arc rule: `x = x_c + R sin θ`, `y = y_c - R cos θ` for `θ` in
/// `[theta_start, theta_end]` (either order; the interval may exceed `2π`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcRule {
    pub center_x: f64,
    pub center_y: f64,
    /// Signed radius; never zero.
    pub radius: f64,
    pub theta_start: f64,
    pub theta_end: f64,
}

/// Straight rule: `(x, y) = base + s (cos θ₀, sin θ₀)`, `θ ≡ θ₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineRule {
    pub base: Pose,
    pub direction: f64,
    pub s_start: f64,
    pub s_end: f64,
}

/// A horizontal ∇-geodesic segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rule {
    Arc(ArcRule),
    Line(LineRule),
}

impl Rule {
    /// Parameter interval `(start, end)`: `θ` for arcs, `s` for lines.
    pub fn interval(&self) -> (f64, f64) {
        match self {
            Rule::Arc(a) => (a.theta_start, a.theta_end),
            Rule::Line(l) => (l.s_start, l.s_end),
        }
    }

    /// Pose at the given parameter, without range checking.
    pub fn eval(&self, param: f64) -> Pose {
        match self {
            Rule::Arc(a) => Pose {
                x: a.center_x + a.radius * param.sin(),
                y: a.center_y - a.radius * param.cos(),
                theta: param,
            },
            Rule::Line(l) => Pose {
                x: l.base.x + param * l.direction.cos(),
                y: l.base.y + param * l.direction.sin(),
                theta: l.direction,
            },
        }
    }

    /// Derivative `(ẋ, ẏ, θ̇)` with respect to the rule parameter.
    pub fn tangent(&self, param: f64) -> [f64; 3] {
        match self {
            Rule::Arc(a) => [a.radius * param.cos(), a.radius * param.sin(), 1.0],
            Rule::Line(l) => [l.direction.cos(), l.direction.sin(), 0.0],
        }
    }

    /// `ẋ sin θ - ẏ cos θ` at the given parameter; zero for horizontal curves.
    pub fn horizontality_residual(&self, param: f64) -> f64 {
        let [dx, dy, _] = self.tangent(param);
        let th = self.eval(param).theta;
        dx * th.sin() - dy * th.cos()
    }

    /// Pose at fraction `λ ∈ [0, 1]` of the parameter interval.
    pub fn point_at_fraction(&self, lambda: f64) -> Pose {
        let (a, b) = self.interval();
        self.eval(a + lambda * (b - a))
    }

    pub fn start(&self) -> Pose {
        self.point_at_fraction(0.0)
    }

    pub fn end(&self) -> Pose {
        self.point_at_fraction(1.0)
    }

    /// Planar length of the segment.
    pub fn length(&self) -> f64 {
        match self {
            Rule::Arc(a) => (a.radius * (a.theta_end - a.theta_start)).abs(),
            Rule::Line(l) => (l.s_end - l.s_start).abs(),
        }
    }

    /// Swept angle (zero for lines).
    pub fn angle_span(&self) -> f64 {
        match self {
            Rule::Arc(a) => (a.theta_end - a.theta_start).abs(),
            Rule::Line(_) => 0.0,
        }
    }

    /// Signed planar curvature `1/R` (zero for lines).
    pub fn curvature(&self) -> f64 {
        match self {
            Rule::Arc(a) => 1.0 / a.radius,
            Rule::Line(_) => 0.0,
        }
    }

    pub fn is_point(&self) -> bool {
        self.length() == 0.0 && self.angle_span() == 0.0
    }

    /// The same set of poses traversed from end to start.
    pub fn reversed(&self) -> Rule {
        match *self {
            Rule::Arc(a) => Rule::Arc(ArcRule {
                theta_start: a.theta_end,
                theta_end: a.theta_start,
                ..a
            }),
            Rule::Line(l) => Rule::Line(LineRule {
                s_start: l.s_end,
                s_end: l.s_start,
                ..l
            }),
        }
    }
}

/// Pose on `rule` at `param`, which must lie inside the rule's interval.
pub fn rule_point(rule: &Rule, param: f64) -> Result<Pose> {
    let (a, b) = rule.interval();
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
    if !(param >= lo - slack && param <= hi + slack) {
        return Err(Error::OutOfRange { param, lo, hi });
    }
    Ok(rule.eval(param))
}

/// Result of connecting two accessible poses.
///
/// Distinct angles give a circle, which links the poses by two
/// complementary arcs; equal angles give a single straight segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Connection {
    Line(Rule),
    Arc {
        anticlockwise: Rule,
        clockwise: Rule,
    },
}

impl Connection {
    pub fn select(&self, traversal: Traversal) -> Rule {
        match *self {
            Connection::Line(r) => r,
            Connection::Arc {
                anticlockwise,
                clockwise,
            } => match traversal {
                Traversal::Anticlockwise => anticlockwise,
                Traversal::Clockwise => clockwise,
            },
        }
    }

    /// Candidate segments in selector order.
    pub fn candidates(&self) -> Vec<(Traversal, Rule)> {
        match *self {
            Connection::Line(r) => vec![(Traversal::Anticlockwise, r)],
            Connection::Arc {
                anticlockwise,
                clockwise,
            } => vec![
                (Traversal::Anticlockwise, anticlockwise),
                (Traversal::Clockwise, clockwise),
            ],
        }
    }

    pub fn is_line(&self) -> bool {
        matches!(self, Connection::Line(_))
    }

    /// Signed radius of the supporting circle, `None` for lines.
    pub fn radius(&self) -> Option<f64> {
        match self {
            Connection::Arc {
                anticlockwise: Rule::Arc(a),
                ..
            } => Some(a.radius),
            _ => None,
        }
    }
}

/// Rule joining `p` to `q` using the default analytic tolerance, scaled by
/// the planar separation.
pub fn connecting_rule(p: &Pose, q: &Pose) -> Result<Connection> {
    let tol = ACCESS_TOL_ANALYTIC * (1.0 + p.planar_distance(q));
    connecting_rule_with_tol(p, q, tol)
}

pub fn connecting_rule_with_tol(p: &Pose, q: &Pose, tol: f64) -> Result<Connection> {
    let residual = accessibility_residual(p, q);
    if residual.abs() > tol {
        return Err(Error::NotAccessible { residual, tol });
    }
    let dtheta = angle_diff(p.theta, q.theta);
    if dtheta.abs() <= ANGLE_EPS {
        let (c, s) = (p.theta.cos(), p.theta.sin());
        let reach = (q.x - p.x) * c + (q.y - p.y) * s;
        return Ok(Connection::Line(Rule::Line(LineRule {
            base: *p,
            direction: p.theta,
            s_start: 0.0,
            s_end: reach,
        })));
    }

    // Matrix equation for (x_c, y_c, R): both poses on x = x_c + R sin θ,
    // y = y_c - R cos θ. Solve with the better-conditioned coordinate.
    let den_x = q.theta.sin() - p.theta.sin();
    let den_y = p.theta.cos() - q.theta.cos();
    let radius = if den_x.abs() >= den_y.abs() {
        (q.x - p.x) / den_x
    } else {
        (q.y - p.y) / den_y
    };
    if den_x.abs().max(den_y.abs()) < 1e-300 || !radius.is_finite() || radius == 0.0 {
        return Err(Error::DegenerateRadius { from: *p, to: *q });
    }
    let center_x = p.x - radius * p.theta.sin();
    let center_y = p.y + radius * p.theta.cos();
    let sweep = (q.theta - p.theta).rem_euclid(TAU);
    let arc = |end: f64| {
        Rule::Arc(ArcRule {
            center_x,
            center_y,
            radius,
            theta_start: p.theta,
            theta_end: end,
        })
    };
    Ok(Connection::Arc {
        anticlockwise: arc(p.theta + sweep),
        clockwise: arc(p.theta + sweep - TAU),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn exp_examples() {
        let o = Pose::new(0.0, 0.0, 0.0);
        assert_eq!(exp_horizontal(&o, TangentCoords::new(0.0, 0.0)), o);
        let q = exp_horizontal(&o, TangentCoords::new(1.0, 0.0));
        assert!(q.approx_eq(&Pose::new(1.0, 0.0, 0.0), 1e-15));
        let q = exp_horizontal(&o, TangentCoords::new(PI, PI));
        assert!(q.approx_eq(&Pose::new(0.0, 2.0, PI), 1e-14), "{q:?}");
    }

    #[test]
    fn exp_matches_arc_formula_away_from_zero() {
        let p = Pose::new(0.3, -1.2, 0.7);
        for &(a, b) in &[(1.5, 0.3), (-2.0, 2.5), (0.4, -3.0)] {
            let q = exp_horizontal(&p, TangentCoords::new(a, b));
            let ex = p.x + a / b * ((p.theta + b).sin() - p.theta.sin());
            let ey = p.y + a / b * (p.theta.cos() - (p.theta + b).cos());
            assert!(close(q.x, ex, 1e-13) && close(q.y, ey, 1e-13));
        }
    }

    #[test]
    fn exp_is_continuous_at_zero_rotation() {
        let p = Pose::new(1.0, 2.0, 0.4);
        let line = exp_horizontal(&p, TangentCoords::new(2.0, 0.0));
        for b in [1e-3, 1e-6, 1e-9, -1e-7] {
            let q = exp_horizontal(&p, TangentCoords::new(2.0, b));
            assert!(q.planar_distance(&line) < 2.0 * b.abs() + 1e-15);
        }
    }

    #[test]
    fn conjugate_examples() {
        let c = conjugate(&Pose::new(0.0, 0.0, 0.0));
        assert_eq!(c, Pose::new(0.0, 0.0, PI));
        let c = conjugate(&Pose::new(1.0, 2.0, PI / 2.0));
        assert!(c.approx_eq(&Pose::new(1.0, 2.0, 1.5 * PI), 1e-15));
        let p = Pose::new(-0.5, 3.0, 2.0);
        assert!(conjugate(&conjugate(&p)).approx_eq(&p, 1e-15));
    }

    #[test]
    fn accessibility_examples() {
        let o = Pose::new(0.0, 0.0, 0.0);
        assert!(is_accessible(&o, &o, 1e-9));
        assert!(is_accessible(&o, &Pose::new(0.0, 2.0, PI), 1e-9));
        assert!(!is_accessible(&o, &Pose::new(1.0, 1.0, 0.0), 1e-9));
        // equal angles: only the line through p along θ₀
        assert!(is_accessible(&o, &Pose::new(-3.0, 0.0, TAU), 1e-9));
    }

    #[test]
    fn connecting_rule_line_example() {
        let c = connecting_rule(&Pose::new(0.0, 0.0, 0.0), &Pose::new(2.0, 0.0, 0.0)).unwrap();
        match c {
            Connection::Line(Rule::Line(l)) => {
                assert_eq!(l.base, Pose::new(0.0, 0.0, 0.0));
                assert_eq!(l.direction, 0.0);
                assert_eq!((l.s_start, l.s_end), (0.0, 2.0));
            }
            other => panic!("expected line, got {other:?}"),
        }
    }

    #[test]
    fn connecting_rule_arc_example() {
        let p = Pose::new(0.0, 0.0, 0.0);
        let q = Pose::new(0.0, 2.0, PI);
        let c = connecting_rule(&p, &q).unwrap();
        let Connection::Arc {
            anticlockwise: Rule::Arc(acw),
            clockwise: Rule::Arc(cw),
        } = c
        else {
            panic!("expected arc")
        };
        assert!(close(acw.center_x, 0.0, 1e-15));
        assert!(close(acw.center_y, 1.0, 1e-15));
        assert!(close(acw.radius, 1.0, 1e-15));
        assert_eq!((acw.theta_start, acw.theta_end), (0.0, PI));
        assert_eq!((cw.theta_start, cw.theta_end), (0.0, -PI));
        for r in [Rule::Arc(acw), Rule::Arc(cw)] {
            assert!(r.start().approx_eq(&p, 1e-14));
            assert!(r.end().approx_eq(&q, 1e-14));
        }
    }

    #[test]
    fn connecting_rule_rejects_inaccessible() {
        let err = connecting_rule(&Pose::new(0.0, 0.0, 0.0), &Pose::new(1.0, 1.0, 0.0));
        assert!(matches!(err, Err(Error::NotAccessible { .. })));
    }

    #[test]
    fn connecting_rule_rejects_rotation_in_place() {
        let err = connecting_rule(&Pose::new(1.0, 1.0, 0.0), &Pose::new(1.0, 1.0, 1.0));
        assert!(matches!(err, Err(Error::DegenerateRadius { .. })));
    }

    #[test]
    fn rule_point_examples() {
        let arc = Rule::Arc(ArcRule {
            center_x: 0.0,
            center_y: 1.0,
            radius: 1.0,
            theta_start: 0.0,
            theta_end: PI,
        });
        assert!(rule_point(&arc, 0.0)
            .unwrap()
            .approx_eq(&Pose::new(0.0, 0.0, 0.0), 1e-15));
        assert!(rule_point(&arc, PI)
            .unwrap()
            .approx_eq(&Pose::new(0.0, 2.0, PI), 1e-15));
        let line = Rule::Line(LineRule {
            base: Pose::new(0.0, 0.0, 0.0),
            direction: 0.0,
            s_start: 0.0,
            s_end: 2.0,
        });
        assert!(rule_point(&line, 1.0)
            .unwrap()
            .approx_eq(&Pose::new(1.0, 0.0, 0.0), 1e-15));
        assert!(matches!(
            rule_point(&line, 2.5),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(
            rule_point(&arc, -0.1),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn rules_are_horizontal() {
        let arc = Rule::Arc(ArcRule {
            center_x: 0.3,
            center_y: -2.0,
            radius: -4.5,
            theta_start: -1.0,
            theta_end: 7.0,
        });
        for i in 0..=100 {
            let th = -1.0 + 8.0 * i as f64 / 100.0;
            assert!(arc.horizontality_residual(th).abs() <= 1e-12);
        }
    }

    #[test]
    fn wrap_and_branch_helpers() {
        assert!(close(wrap_angle(3.0 * PI), PI, 1e-15));
        assert!(close(wrap_angle(-3.0 * PI / 2.0), PI / 2.0, 1e-15));
        assert!(close(nearest_branch(0.1, 12.0), 0.1 + 2.0 * TAU, 1e-12));
        assert!(angles_match(0.0, TAU, 1e-12));
    }
}
