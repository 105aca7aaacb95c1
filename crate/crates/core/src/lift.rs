//! Lift of the occlusion circle into the roto-translation group and the
//! transversality function `Q(t) = θ(t) - t`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{angle_of_gradient, IntensityField};
use crate::geometry::{nearest_branch, Pose};

/// Largest sample count tried by the adaptive lift.
pub const MAX_SAMPLES: usize = 1 << 20;
/// Parameter tolerance for special-point refinement.
pub const SPECIAL_POINT_TOL: f64 = 1e-10;

/// The occluded disk `{|p - center| ≤ radius}` with boundary
/// `β(t) = center + radius (cos t, sin t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionDisk {
    pub center: [f64; 2],
    pub radius: f64,
}

impl OcclusionDisk {
    pub fn new(cx: f64, cy: f64, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite() && cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "disk needs a finite center and positive radius, got ({cx}, {cy}), {radius}"
            )));
        }
        Ok(Self {
            center: [cx, cy],
            radius,
        })
    }

    pub fn unit() -> Self {
        Self {
            center: [0.0, 0.0],
            radius: 1.0,
        }
    }

    pub fn point(&self, t: f64) -> [f64; 2] {
        [
            self.center[0] + self.radius * t.cos(),
            self.center[1] + self.radius * t.sin(),
        ]
    }

    /// `β'(t)`.
    pub fn tangent(&self, t: f64) -> [f64; 2] {
        [-self.radius * t.sin(), self.radius * t.cos()]
    }

    /// `radius - |p - center|`: positive inside, negative outside.
    pub fn depth(&self, p: [f64; 2]) -> f64 {
        self.radius - (p[0] - self.center[0]).hypot(p[1] - self.center[1])
    }

    /// Boundary parameter in `[0, 2π)` of the direction from the center to `p`.
    pub fn parameter_of(&self, p: [f64; 2]) -> f64 {
        (p[1] - self.center[1])
            .atan2(p[0] - self.center[0])
            .rem_euclid(TAU)
    }
}

/// Where the lift angle comes from.
#[derive(Clone)]
pub enum LiftSource {
    Field(IntensityField),
    /// Prescribed `t ↦ (θ(t), θ'(t))`; `θ` may be any representative mod 2π.
    Angle(Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>),
}

impl fmt::Debug for LiftSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LiftSource::Field(field) => f.debug_tuple("Field").field(field).finish(),
            LiftSource::Angle(_) => f.write_str("Angle(..)"),
        }
    }
}

/// How the stored `Q'` samples were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMethod {
    Analytic,
    FiniteDifference,
}

struct RawSample {
    theta: f64,
    dtheta: Option<f64>,
}

impl LiftSource {
    fn sample(&self, disk: &OcclusionDisk, t: f64) -> Result<RawSample> {
        match self {
            LiftSource::Angle(f) => {
                let (theta, dtheta) = f(t);
                Ok(RawSample {
                    theta,
                    dtheta: Some(dtheta),
                })
            }
            LiftSource::Field(field) => {
                let [x, y] = disk.point(t);
                let g = field.gradient(x, y);
                let n2 = g[0] * g[0] + g[1] * g[1];
                let norm = n2.sqrt();
                if !(norm > field.eps_grad()) {
                    return Err(Error::CriticalPointOnBoundary { t, norm });
                }
                let dtheta = field.hessian(x, y).map(|h| {
                    let bp = disk.tangent(t);
                    let gdx = h[0][0] * bp[0] + h[0][1] * bp[1];
                    let gdy = h[1][0] * bp[0] + h[1][1] * bp[1];
                    (g[0] * gdy - g[1] * gdx) / n2
                });
                Ok(RawSample {
                    theta: angle_of_gradient(g),
                    dtheta,
                })
            }
        }
    }
}

/// Sampled lift `γ(t_i) = (β(t_i), θ(t_i))` of the occlusion circle.
#[derive(Debug, Clone)]
pub struct LiftedBoundary {
    pub disk: OcclusionDisk,
    pub n: usize,
    pub t: Vec<f64>,
    pub beta: Vec<[f64; 2]>,
    /// Unwrapped lift angles.
    pub theta: Vec<f64>,
    /// `Q(t_i) = θ(t_i) - t_i`.
    pub q: Vec<f64>,
    pub qprime: Vec<f64>,
    pub qprime_method: DerivativeMethod,
    /// Whether the angles are those of the conjugate lift `θ + π`.
    pub conjugate_flag: bool,
    /// `θ(2π) = θ(0) + 2π·winding`.
    pub winding: i64,
    source: LiftSource,
}

/// Lift the occlusion circle through the level-line field of `field`.
///
/// Starts from `n` samples and doubles until consecutive unwrapped angles
/// differ by less than `π/2` (closure included).
pub fn lift_boundary(
    field: &IntensityField,
    disk: &OcclusionDisk,
    n: usize,
) -> Result<LiftedBoundary> {
    if !field.contains_disk(disk.center, disk.radius) {
        return Err(Error::DiskOutsideDomain);
    }
    LiftedBoundary::build(LiftSource::Field(field.clone()), *disk, n)
}

/// `Q'(t_i)` from the field's Hessian when available, otherwise from
/// centered differences of the sampled `Q`.
pub fn q_derivative(field: &IntensityField, boundary: &LiftedBoundary, i: usize) -> Result<f64> {
    let t = boundary.t[i];
    let [x, y] = boundary.disk.point(t);
    let g = field.gradient(x, y);
    let n2 = g[0] * g[0] + g[1] * g[1];
    if !(n2.sqrt() > field.eps_grad()) {
        return Err(Error::CriticalPoint {
            x,
            y,
            norm: n2.sqrt(),
        });
    }
    match field.hessian(x, y) {
        Some(h) => {
            let bp = boundary.disk.tangent(t);
            let gdx = h[0][0] * bp[0] + h[0][1] * bp[1];
            let gdy = h[1][0] * bp[0] + h[1][1] * bp[1];
            Ok((g[0] * gdy - g[1] * gdx) / n2 - 1.0)
        }
        None => Ok(q_derivative_fd(boundary, i)),
    }
}

/// Fourth-order centered difference of sampled `Q`, periodic across the seam.
pub fn q_derivative_fd(boundary: &LiftedBoundary, i: usize) -> f64 {
    let i = i as isize;
    let q = |j: isize| boundary.q_node(i + j);
    (8.0 * (q(1) - q(-1)) - (q(2) - q(-2))) / (12.0 * boundary.spacing())
}

pub fn degree_of_q(boundary: &LiftedBoundary) -> i64 {
    let q0 = boundary.q[0];
    let q_end = boundary.theta_end() - TAU;
    ((q_end - q0) / TAU).round() as i64
}

/// Winding number of the gradient direction `atan2(I_y, I_x)` along the
/// circle, computed independently of the lift.
pub fn gradient_winding(field: &IntensityField, disk: &OcclusionDisk, n: usize) -> Result<i64> {
    let angles: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let t = TAU * i as f64 / n as f64;
            let [x, y] = disk.point(t);
            let g = field.gradient(x, y);
            let norm = g[0].hypot(g[1]);
            if norm > field.eps_grad() {
                Ok(g[1].atan2(g[0]))
            } else {
                Err(Error::CriticalPointOnBoundary { t, norm })
            }
        })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    for i in 0..n {
        let d = angles[(i + 1) % n] - angles[i];
        total += d - TAU * (d / TAU).round();
    }
    Ok((total / TAU).round() as i64)
}

impl LiftedBoundary {
    fn build(source: LiftSource, disk: OcclusionDisk, n: usize) -> Result<Self> {
        if n < 64 {
            return Err(Error::InvalidArgument(format!(
                "at least 64 boundary samples are required, got {n}"
            )));
        }
        let mut n = n;
        loop {
            let h = TAU / n as f64;
            let raw: Vec<RawSample> = (0..n)
                .into_par_iter()
                .map(|i| source.sample(&disk, h * i as f64))
                .collect::<Result<_>>()?;
            if let Some(theta) = unwrap_samples(&raw) {
                return Ok(Self::assemble(source, disk, n, theta, &raw));
            }
            n *= 2;
            if n > MAX_SAMPLES {
                return Err(Error::UnresolvableBranch { samples: n / 2 });
            }
        }
    }

    fn assemble(
        source: LiftSource,
        disk: OcclusionDisk,
        n: usize,
        mut theta: Vec<f64>,
        raw: &[RawSample],
    ) -> Self {
        let theta_end = theta.pop().expect("closure sample");
        let winding = ((theta_end - theta[0]) / TAU).round() as i64;
        let h = TAU / n as f64;
        let t: Vec<f64> = (0..n).map(|i| h * i as f64).collect();
        let beta = t.iter().map(|&s| disk.point(s)).collect();
        let q: Vec<f64> = theta.iter().zip(&t).map(|(a, b)| a - b).collect();
        let analytic = raw.iter().all(|r| r.dtheta.is_some());
        let mut out = Self {
            disk,
            n,
            t,
            beta,
            theta,
            q,
            qprime: Vec::new(),
            qprime_method: DerivativeMethod::Analytic,
            conjugate_flag: false,
            winding,
            source,
        };
        if analytic {
            out.qprime = raw.iter().map(|r| r.dtheta.unwrap() - 1.0).collect();
        } else {
            out.qprime_method = DerivativeMethod::FiniteDifference;
            out.qprime = (0..n).map(|i| q_derivative_fd(&out, i)).collect();
        }
        out
    }

    /// Lift with a prescribed angle function instead of an intensity field.
    pub fn from_angle_fn(
        disk: OcclusionDisk,
        n: usize,
        angle: impl Fn(f64) -> (f64, f64) + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::build(LiftSource::Angle(Arc::new(angle)), disk, n)
    }

    /// The synthetic lift `γ(t) = (cos t, sin t, t)` of the unit circle, for
    /// which `Q ≡ 0` and every point is solitary.
    pub fn rotation(n: usize) -> Result<Self> {
        Self::from_angle_fn(OcclusionDisk::unit(), n, |t| (t, 1.0))
    }

    pub fn source(&self) -> &LiftSource {
        &self.source
    }

    pub fn field(&self) -> Option<&IntensityField> {
        match &self.source {
            LiftSource::Field(f) => Some(f),
            LiftSource::Angle(_) => None,
        }
    }

    pub fn degree(&self) -> i64 {
        self.winding - 1
    }

    pub fn spacing(&self) -> f64 {
        TAU / self.n as f64
    }

    /// `θ(2π)`, the closure value continuing `θ(0)`.
    pub fn theta_end(&self) -> f64 {
        self.theta[0] + TAU * self.winding as f64
    }

    fn shift(&self) -> f64 {
        if self.conjugate_flag {
            PI
        } else {
            0.0
        }
    }

    /// `θ` at node `j`, any integer, using the periodic extension.
    pub fn theta_node(&self, j: isize) -> f64 {
        let n = self.n as isize;
        let (wraps, i) = (j.div_euclid(n), j.rem_euclid(n) as usize);
        self.theta[i] + TAU * (wraps * self.winding as isize) as f64
    }

    /// `Q` at node `j`, any integer.
    pub fn q_node(&self, j: isize) -> f64 {
        self.theta_node(j) - TAU * j as f64 / self.n as f64
    }

    pub fn qprime_node(&self, j: isize) -> f64 {
        self.qprime[j.rem_euclid(self.n as isize) as usize]
    }

    /// Cubic Hermite interpolant of the sampled angles.
    pub fn interp_theta(&self, t: f64) -> f64 {
        let h = self.spacing();
        let s = t / h;
        let j = s.floor();
        let a = s - j;
        let j = j as isize;
        let (y0, y1) = (self.theta_node(j), self.theta_node(j + 1));
        let (d0, d1) = (
            (self.qprime_node(j) + 1.0) * h,
            (self.qprime_node(j + 1) + 1.0) * h,
        );
        let a2 = a * a;
        let a3 = a2 * a;
        (2.0 * a3 - 3.0 * a2 + 1.0) * y0
            + (a3 - 2.0 * a2 + a) * d0
            + (-2.0 * a3 + 3.0 * a2) * y1
            + (a3 - a2) * d1
    }

    /// `θ(t)` on the continuous branch, evaluated from the source and
    /// snapped to the interpolant's branch.
    pub fn theta_at(&self, t: f64) -> f64 {
        let guess = self.interp_theta(t);
        let base = t.rem_euclid(TAU);
        let wraps = ((t - base) / TAU).round();
        match self.source.sample(&self.disk, base) {
            Ok(raw) => {
                let rep = raw.theta + self.shift() + TAU * wraps * self.winding as f64;
                nearest_branch(rep, guess)
            }
            Err(_) => guess,
        }
    }

    pub fn q_at(&self, t: f64) -> f64 {
        self.theta_at(t) - t
    }

    /// `Q'(t)`: exact when the source provides derivatives, otherwise
    /// interpolated from the stored samples.
    pub fn qprime_at(&self, t: f64) -> f64 {
        let base = t.rem_euclid(TAU);
        if self.qprime_method == DerivativeMethod::Analytic {
            if let Ok(RawSample {
                dtheta: Some(d), ..
            }) = self.source.sample(&self.disk, base)
            {
                return d - 1.0;
            }
        }
        let s = base / self.spacing();
        let j = s.floor();
        let a = s - j;
        let j = j as isize;
        (1.0 - a) * self.qprime_node(j) + a * self.qprime_node(j + 1)
    }

    pub fn pose(&self, i: usize) -> Pose {
        Pose::new(self.beta[i][0], self.beta[i][1], self.theta[i])
    }

    pub fn pose_at(&self, t: f64) -> Pose {
        let [x, y] = self.disk.point(t);
        Pose::new(x, y, self.theta_at(t))
    }

    /// `ẋ sin θ - ẏ cos θ` of the lifted curve, equal to `-r cos Q`.
    pub fn horizontality_defect(&self, t: f64) -> f64 {
        let [dx, dy] = self.disk.tangent(t);
        let th = self.theta_at(t);
        dx * th.sin() - dy * th.cos()
    }

    /// Extremes of `Q` over the samples and the closure point.
    pub fn q_range(&self) -> (f64, f64) {
        let end = self.theta_end() - TAU;
        self.q
            .iter()
            .chain(std::iter::once(&end))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// The lift of the conjugate curve `(β(t), θ(t) + π)`.
    pub fn conjugated(&self) -> Self {
        let mut out = self.clone();
        let s = if self.conjugate_flag { -PI } else { PI };
        out.theta.iter_mut().for_each(|v| *v += s);
        out.q.iter_mut().for_each(|v| *v += s);
        out.conjugate_flag = !self.conjugate_flag;
        out
    }
}

// Nearest-branch unwrapping; `None` if any step (closure included) reaches π/2.
fn unwrap_samples(raw: &[RawSample]) -> Option<Vec<f64>> {
    let mut theta = Vec::with_capacity(raw.len() + 1);
    theta.push(raw[0].theta);
    for r in raw[1..].iter().chain(std::iter::once(&raw[0])) {
        let prev = *theta.last().unwrap();
        let next = nearest_branch(r.theta, prev);
        if (next - prev).abs() >= FRAC_PI_2 {
            return None;
        }
        theta.push(next);
    }
    Some(theta)
}

/// A boundary parameter where `Q` meets one of its distinguished levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecialPoint {
    pub t: f64,
    /// `Q(t) = π/2 + kπ` (Legendrian) or `Q(t) = kπ` (orthogonal).
    pub k: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecialKind {
    Legendrian,
    Orthogonal,
}

/// Tangential contact of `Q` with a level, without a crossing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Touch {
    pub t: f64,
    pub k: i64,
    pub kind: SpecialKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpecialPoints {
    pub legendrian: Vec<SpecialPoint>,
    pub orthogonal: Vec<SpecialPoint>,
    pub touches: Vec<Touch>,
    /// Set when `Q` is constant along the boundary.
    pub constant_q: Option<f64>,
}

impl SpecialPoints {
    /// `Q ≡ 0 mod π`: every point is orthogonal.
    pub fn all_orthogonal(&self) -> bool {
        self.constant_q
            .is_some_and(|q| (q / PI - (q / PI).round()).abs() < 1e-9)
    }

    /// `Q ≡ π/2 mod π`: every point is Legendrian.
    pub fn all_legendrian(&self) -> bool {
        self.constant_q.is_some_and(|q| {
            let s = (q - FRAC_PI_2) / PI;
            (s - s.round()).abs() < 1e-9
        })
    }

    pub fn legendrian_params(&self) -> Vec<f64> {
        self.legendrian.iter().map(|p| p.t).collect()
    }

    pub fn orthogonal_params(&self) -> Vec<f64> {
        self.orthogonal.iter().map(|p| p.t).collect()
    }
}

/// Locate the Legendrian (`Q ≡ π/2 mod π`) and orthogonal (`Q ≡ 0 mod π`)
/// parameters by scanning sign changes between samples and bisecting.
pub fn find_special_points(boundary: &LiftedBoundary) -> SpecialPoints {
    let mut out = SpecialPoints::default();
    let (lo, hi) = boundary.q_range();
    if hi - lo < 1e-9 {
        out.constant_q = Some(boundary.q[0]);
        return out;
    }
    let n = boundary.n;
    for (kind, offset) in [
        (SpecialKind::Legendrian, FRAC_PI_2),
        (SpecialKind::Orthogonal, 0.0),
    ] {
        let list = match kind {
            SpecialKind::Legendrian => &mut out.legendrian,
            SpecialKind::Orthogonal => &mut out.orthogonal,
        };
        for i in 0..n {
            let (qa, qb) = (boundary.q_node(i as isize), boundary.q_node(i as isize + 1));
            // a level on a node belongs to the interval starting there
            let (ka, kb) = ((qa - offset) / PI, (qb - offset) / PI);
            let levels: Vec<i64> = if qb > qa {
                (ka.ceil() as i64..=(kb.ceil() as i64 - 1)).collect()
            } else {
                ((kb.floor() as i64 + 1)..=ka.floor() as i64)
                    .rev()
                    .collect()
            };
            for k in levels {
                let level = offset + k as f64 * PI;
                let t = bisect_level(boundary, i, level);
                list.push(SpecialPoint { t, k });
            }
        }
        // touches: sampled local extrema whose parabolic peak reaches a level
        for i in 0..n as isize {
            let (qm, q0, qp) = (
                boundary.q_node(i - 1),
                boundary.q_node(i),
                boundary.q_node(i + 1),
            );
            let is_max = q0 >= qm && q0 > qp;
            let is_min = q0 <= qm && q0 < qp;
            if !(is_max || is_min) {
                continue;
            }
            let curv = qp - 2.0 * q0 + qm;
            let (peak, at) = if curv.abs() > 0.0 {
                let s = 0.5 * (qm - qp) / curv;
                (q0 - 0.25 * (qm - qp) * s, s)
            } else {
                (q0, 0.0)
            };
            let k = ((peak - offset) / PI).round();
            let level = offset + k * PI;
            let crosses = |a: f64, b: f64| (a - level) * (b - level) < 0.0;
            if (peak - level).abs() < 1e-6 && !crosses(qm, q0) && !crosses(q0, qp) {
                let t = (boundary.t[i as usize] + at * boundary.spacing()).rem_euclid(TAU);
                out.touches.push(Touch {
                    t,
                    k: k as i64,
                    kind,
                });
            }
        }
    }
    out.legendrian.sort_by(|a, b| a.t.total_cmp(&b.t));
    out.orthogonal.sort_by(|a, b| a.t.total_cmp(&b.t));
    out
}

fn bisect_level(boundary: &LiftedBoundary, i: usize, level: f64) -> f64 {
    let h = boundary.spacing();
    let mut lo = h * i as f64;
    let mut hi = lo + h;
    let f_lo = boundary.q_node(i as isize) - level;
    if f_lo == 0.0 {
        return lo;
    }
    let up = f_lo < 0.0;
    while hi - lo > 0.1 * SPECIAL_POINT_TOL {
        let mid = 0.5 * (lo + hi);
        let f = boundary.q_at(mid) - level;
        if f == 0.0 {
            return mid.rem_euclid(TAU);
        }
        if (f < 0.0) == up {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).rem_euclid(TAU)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalKind {
    Maximum,
    Minimum,
    Saddle,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPointInfo {
    pub x: f64,
    pub y: f64,
    pub gradient_norm: f64,
    pub kind: CriticalKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NondegeneracyReport {
    pub min_boundary_gradient: f64,
    pub min_boundary_gradient_t: f64,
    pub eps_grad: f64,
    pub interior_critical_points: Vec<CriticalPointInfo>,
    pub completely_nondegenerate: bool,
    pub occludes_critical_point: bool,
}

const BOUNDARY_SCAN: usize = 4096;
const START_GRID: usize = 16;

/// Boundary gradient floor and interior critical points found by
/// damped Newton iteration on `∇I = 0` from a grid of starts.
pub fn check_nondegenerate(field: &IntensityField, disk: &OcclusionDisk) -> NondegeneracyReport {
    let eps = field.eps_grad();
    let (min_grad, min_t) = (0..BOUNDARY_SCAN)
        .map(|i| {
            let t = TAU * i as f64 / BOUNDARY_SCAN as f64;
            let [x, y] = disk.point(t);
            let g = field.gradient(x, y);
            (g[0].hypot(g[1]), t)
        })
        .fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a });

    let r = disk.radius;
    let starts: Vec<[f64; 2]> = (0..START_GRID * START_GRID)
        .map(|k| {
            let (i, j) = (k % START_GRID, k / START_GRID);
            let step = 2.0 * r / START_GRID as f64;
            [
                disk.center[0] - r + (i as f64 + 0.5) * step,
                disk.center[1] - r + (j as f64 + 0.5) * step,
            ]
        })
        .filter(|p| disk.depth(*p) > 0.0)
        .collect();
    let tol = if field.is_raster() { eps } else { 1e-10 };
    let found: Vec<Option<[f64; 2]>> = starts
        .par_iter()
        .map(|&p| newton_critical(field, p, tol))
        .collect();

    let mut points: Vec<CriticalPointInfo> = Vec::new();
    for p in found.into_iter().flatten() {
        if disk.depth(p) <= 0.0 {
            continue;
        }
        if points
            .iter()
            .any(|c| (c.x - p[0]).hypot(c.y - p[1]) < 1e-4 * r)
        {
            continue;
        }
        let g = field.gradient(p[0], p[1]);
        let h = field.hessian_or_fd(p[0], p[1]);
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        let tr = h[0][0] + h[1][1];
        let scale = (h[0][0].abs() + h[1][1].abs() + h[0][1].abs()).max(1e-300);
        let kind = if det.abs() <= 1e-9 * scale * scale {
            CriticalKind::Degenerate
        } else if det < 0.0 {
            CriticalKind::Saddle
        } else if tr < 0.0 {
            CriticalKind::Maximum
        } else {
            CriticalKind::Minimum
        };
        points.push(CriticalPointInfo {
            x: p[0],
            y: p[1],
            gradient_norm: g[0].hypot(g[1]),
            kind,
        });
    }
    NondegeneracyReport {
        min_boundary_gradient: min_grad,
        min_boundary_gradient_t: min_t,
        eps_grad: eps,
        completely_nondegenerate: min_grad > eps,
        occludes_critical_point: !points.is_empty(),
        interior_critical_points: points,
    }
}

fn newton_critical(field: &IntensityField, start: [f64; 2], tol: f64) -> Option<[f64; 2]> {
    let mut p = start;
    let norm = |p: [f64; 2]| {
        let g = field.gradient(p[0], p[1]);
        g[0].hypot(g[1])
    };
    let mut gn = norm(p);
    for _ in 0..100 {
        if gn <= tol {
            return Some(p);
        }
        let g = field.gradient(p[0], p[1]);
        let h = field.hessian_or_fd(p[0], p[1]);
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        // Newton direction, or steepest descent on |∇I|² when singular
        let dir = if det.abs() > 1e-14 {
            [
                -(h[1][1] * g[0] - h[0][1] * g[1]) / det,
                -(-h[1][0] * g[0] + h[0][0] * g[1]) / det,
            ]
        } else {
            [
                -(h[0][0] * g[0] + h[1][0] * g[1]),
                -(h[0][1] * g[0] + h[1][1] * g[1]),
            ]
        };
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let trial = [p[0] + step * dir[0], p[1] + step * dir[1]];
            let tn = norm(trial);
            if tn < gn {
                p = trial;
                gn = tn;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (gn <= tol).then_some(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::builtin;

    fn lift(name: &str, cx: f64, cy: f64, n: usize) -> LiftedBoundary {
        let f = IntensityField::from(builtin::by_name(name).unwrap());
        lift_boundary(&f, &OcclusionDisk::new(cx, cy, 1.0).unwrap(), n).unwrap()
    }

    #[test]
    fn linear_lift_is_constant() {
        let b = lift("linear", 0.0, 0.0, 256);
        assert_eq!(b.n, 256);
        for i in 0..b.n {
            assert_eq!(b.theta[i], 0.0);
            assert_eq!(b.q[i], -b.t[i]);
            assert!((b.qprime[i] + 1.0).abs() < 1e-15);
        }
        assert_eq!(degree_of_q(&b), -1);
    }

    #[test]
    fn q_is_theta_minus_t() {
        let b = lift("cross", 2.4, 2.6, 512);
        for i in 0..b.n {
            assert_eq!(b.q[i], b.theta[i] - b.t[i]);
        }
        for w in b.theta.windows(2) {
            assert!((w[1] - w[0]).abs() < FRAC_PI_2);
        }
        assert!((b.theta_end() - b.theta[0] - TAU * (degree_of_q(&b) + 1) as f64).abs() < 1e-12);
    }

    #[test]
    fn paper_degrees() {
        assert_eq!(degree_of_q(&lift("cross", 2.4, 2.6, 1024)), -1);
        assert_eq!(degree_of_q(&lift("cross", 1.2, 1.4, 1024)), -1);
        assert_eq!(degree_of_q(&lift("cross", 0.1, -0.3, 1024)), -2);
        assert_eq!(degree_of_q(&lift("ellipse-bump", 0.1, -0.3, 1024)), 0);
        assert_eq!(degree_of_q(&LiftedBoundary::rotation(256).unwrap()), 0);
    }

    #[test]
    fn linear_special_points() {
        let sp = find_special_points(&lift("linear", 0.0, 0.0, 256));
        let leg = sp.legendrian_params();
        let orth = sp.orthogonal_params();
        assert_eq!(leg.len(), 2);
        assert!((leg[0] - FRAC_PI_2).abs() < 1e-10 && (leg[1] - 1.5 * PI).abs() < 1e-10);
        assert_eq!(orth.len(), 2);
        assert!(orth[0].abs() < 1e-10 && (orth[1] - PI).abs() < 1e-10);
        assert_eq!(sp.legendrian[0].k, -1);
        assert_eq!(sp.legendrian[1].k, -2);
    }

    #[test]
    fn rotation_lift_is_all_orthogonal() {
        let sp = find_special_points(&LiftedBoundary::rotation(256).unwrap());
        assert!(sp.legendrian.is_empty());
        assert!(sp.all_orthogonal());
        assert!(!sp.all_legendrian());
    }

    #[test]
    fn case1_has_two_legendrian_points() {
        let b = lift("cross", 2.4, 2.6, 1024);
        let sp = find_special_points(&b);
        assert_eq!(sp.legendrian.len(), 2);
        for p in &sp.legendrian {
            let q = b.q_at(p.t);
            assert!((q - (FRAC_PI_2 + p.k as f64 * PI)).abs() < 1e-8);
            assert!(b.horizontality_defect(p.t).abs() <= 1e-8 * b.disk.radius);
        }
        assert!(b.qprime.iter().all(|&d| d < 0.0));
    }

    #[test]
    fn case2_qprime_changes_sign() {
        let b = lift("cross", 1.2, 1.4, 1024);
        assert!(b.qprime.iter().any(|&d| d > 0.0));
        assert!(b.qprime.iter().any(|&d| d < 0.0));
    }

    #[test]
    fn analytic_and_fd_derivatives_agree() {
        for (name, cx, cy) in [
            ("cross", 2.4, 2.6),
            ("cross", 1.2, 1.4),
            ("ellipse-bump", 0.1, -0.3),
        ] {
            let b = lift(name, cx, cy, 1024);
            let f = b.field().unwrap().clone();
            for i in (0..b.n).step_by(7) {
                let a = q_derivative(&f, &b, i).unwrap();
                assert!((a - b.qprime[i]).abs() < 1e-12);
                assert!((a - q_derivative_fd(&b, i)).abs() < 1e-3, "{name} {i}");
            }
        }
    }

    #[test]
    fn fd_lift_matches_analytic_lift() {
        let f = IntensityField::from(builtin::cross().without_hessian());
        let disk = OcclusionDisk::new(2.4, 2.6, 1.0).unwrap();
        let b = lift_boundary(&f, &disk, 1024).unwrap();
        assert_eq!(b.qprime_method, DerivativeMethod::FiniteDifference);
        let a = lift("cross", 2.4, 2.6, 1024);
        for i in 0..b.n {
            assert!((a.qprime[i] - b.qprime[i]).abs() < 1e-3);
        }
    }

    #[test]
    fn interpolation_agrees_with_source() {
        let b = lift("cross", 1.2, 1.4, 1024);
        for k in 0..500 {
            let t = -3.0 + 0.0271 * k as f64;
            assert!((b.interp_theta(t) - b.theta_at(t)).abs() < 1e-7);
        }
        let t = 0.7;
        assert!((b.theta_at(t + TAU) - b.theta_at(t) - TAU * b.winding as f64).abs() < 1e-12);
    }

    #[test]
    fn cos_q_measures_angle_to_gradient() {
        let b = lift("ellipse-bump", 0.1, -0.3, 512);
        let f = b.field().unwrap();
        for i in 0..b.n {
            let [x, y] = b.beta[i];
            let g = f.gradient(x, y);
            let bp = b.disk.tangent(b.t[i]);
            let c = (g[0] * bp[0] + g[1] * bp[1]) / (g[0].hypot(g[1]) * bp[0].hypot(bp[1]));
            assert!((b.q[i].cos() - c).abs() < 1e-8);
        }
    }

    #[test]
    fn degree_matches_gradient_winding() {
        for (name, cx, cy) in [
            ("cross", 2.4, 2.6),
            ("cross", 1.2, 1.4),
            ("cross", 0.1, -0.3),
            ("ellipse-bump", 0.1, -0.3),
            ("linear", 0.0, 0.0),
            ("radial", 0.5, 0.2),
        ] {
            let b = lift(name, cx, cy, 1024);
            let w = gradient_winding(b.field().unwrap(), &b.disk, b.n).unwrap();
            assert_eq!(degree_of_q(&b), w - 1, "{name}");
        }
    }

    #[test]
    fn critical_point_on_boundary_is_rejected() {
        let f = IntensityField::from(builtin::cross());
        let disk = OcclusionDisk::new(1.0, 0.0, 1.0).unwrap();
        assert!(matches!(
            lift_boundary(&f, &disk, 256),
            Err(Error::CriticalPointOnBoundary { .. })
        ));
    }

    #[test]
    fn too_few_samples_rejected() {
        let f = IntensityField::from(builtin::linear());
        assert!(lift_boundary(&f, &OcclusionDisk::unit(), 32).is_err());
    }

    #[test]
    fn adaptive_doubling_resolves_fast_rotation() {
        // θ winds 40 times, too fast for 64 samples
        let b =
            LiftedBoundary::from_angle_fn(OcclusionDisk::unit(), 64, |t| (40.0 * t, 40.0)).unwrap();
        assert!(b.n >= 256);
        assert_eq!(b.winding, 40);
    }

    #[test]
    fn nondegeneracy_reports() {
        let lin = IntensityField::from(builtin::linear());
        let r = check_nondegenerate(&lin, &OcclusionDisk::unit());
        assert!(r.completely_nondegenerate && !r.occludes_critical_point);

        let bump = IntensityField::from(builtin::ellipse_bump());
        let r = check_nondegenerate(&bump, &OcclusionDisk::new(0.1, -0.3, 1.0).unwrap());
        assert_eq!(r.interior_critical_points.len(), 1);
        let c = r.interior_critical_points[0];
        assert!(c.x.abs() < 1e-8 && c.y.abs() < 1e-8);
        assert_eq!(c.kind, CriticalKind::Maximum);

        let cross = IntensityField::from(builtin::cross());
        let r = check_nondegenerate(&cross, &OcclusionDisk::new(0.1, -0.3, 1.0).unwrap());
        assert_eq!(r.interior_critical_points.len(), 1);
        assert_eq!(r.interior_critical_points[0].kind, CriticalKind::Saddle);
        assert!(r.completely_nondegenerate);

        let r = check_nondegenerate(&cross, &OcclusionDisk::new(2.4, 2.6, 1.0).unwrap());
        assert!(!r.occludes_critical_point);
    }

    #[test]
    fn conjugated_shifts_by_pi() {
        let b = lift("cross", 2.4, 2.6, 256);
        let c = b.conjugated();
        assert!(c.conjugate_flag);
        assert!((c.theta_at(0.3) - b.theta_at(0.3) - PI).abs() < 1e-12);
        assert_eq!(degree_of_q(&c), degree_of_q(&b));
        let back = c.conjugated();
        assert!((back.theta[5] - b.theta[5]).abs() < 1e-12);
    }
}
