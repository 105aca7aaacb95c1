//! Pairing of boundary points joined by a single rule, continuation of
//! pairing branches and case classification of circular occlusions.
//!
//! Two lifted boundary points `γ(t)`, `γ(u)` are joined by a rule exactly
//! when `Q(t) + Q(u) = (2k+1)π` (direct pairing). Joining `γ(t)` to the
//! conjugate `γ̄(u)` requires `Q(t) + Q(u) = 2kπ` instead.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{accessibility_residual, conjugate as conj_pose};
use crate::lift::{find_special_points, LiftedBoundary, SpecialPoints};
use crate::numeric::{bisect_predicate, illinois};

/// Root tolerance in `u` for the pairing corrector.
pub const PAIR_ROOT_TOL: f64 = 1e-10;
/// Residual bound for accepted branch samples.
pub const PAIR_RESIDUAL_TOL: f64 = 1e-6;
/// Partners closer than this to `t` count as the trivial self-pairing.
pub const SELF_PAIR_TOL: f64 = 1e-7;

/// Right-hand side of the pairing equation for branch offset `k`.
pub fn pairing_level(k: i64, conjugate: bool) -> f64 {
    if conjugate {
        TAU * k as f64
    } else {
        PI * (2 * k + 1) as f64
    }
}

/// `Q(t) + Q(u) - level(k)` on the continuous branch of `Q`.
pub fn pairing_residual(boundary: &LiftedBoundary, t: f64, u: f64, k: i64, conjugate: bool) -> f64 {
    boundary.q_at(t) + boundary.q_at(u) - pairing_level(k, conjugate)
}

/// Branch offsets `k` attainable for `t, u ∈ [0, 2π]`.
pub fn k_range(boundary: &LiftedBoundary, conjugate: bool) -> std::ops::RangeInclusive<i64> {
    let (lo, hi) = boundary.q_range();
    let base = if conjugate { 0.0 } else { PI };
    let kmin = ((2.0 * lo - base) / TAU).ceil() as i64;
    let kmax = ((2.0 * hi - base) / TAU).floor() as i64;
    kmin..=kmax
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairPoint {
    pub t: f64,
    pub u: f64,
    pub k: i64,
}

/// Solutions of the pairing equation on a `resolution x resolution` grid
/// over the torus, one row per grid value of `t`.
#[derive(Debug, Clone)]
pub struct PairPlot {
    pub resolution: usize,
    pub points: Vec<PairPoint>,
    pub conjugate_flag: bool,
    cell_component: Vec<Option<usize>>,
    components: usize,
}

impl PairPlot {
    /// Number of connected components of the solution set on the torus.
    pub fn branch_count(&self) -> usize {
        self.components
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Component label of the solution curve passing near `(t, u)`.
    pub fn component_of(&self, t: f64, u: f64) -> Option<usize> {
        let n = self.resolution as isize;
        let h = TAU / self.resolution as f64;
        let i = (t.rem_euclid(TAU) / h).floor() as isize;
        let j = (u.rem_euclid(TAU) / h).floor() as isize;
        let cell = |a: isize, b: isize| {
            self.cell_component[(a.rem_euclid(n) * n + b.rem_euclid(n)) as usize]
        };
        [
            (0, 0),
            (-1, 0),
            (0, -1),
            (1, 0),
            (0, 1),
            (-1, -1),
            (1, 1),
            (-1, 1),
            (1, -1),
        ]
        .iter()
        .find_map(|&(di, dj)| cell(i + di, j + dj))
    }
}

fn levels_between(a: f64, b: f64, base: f64) -> usize {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    (((hi - base) / TAU).floor() - ((lo - base) / TAU).floor()) as usize
}

/// Grid of `Q` at `2πj/res` for `j = 0..=res`, the last entry continuing
/// the first through the seam.
fn q_grid(boundary: &LiftedBoundary, res: usize) -> Vec<f64> {
    (0..=res)
        .into_par_iter()
        .map(|j| {
            if res == boundary.n && j < res {
                boundary.q[j]
            } else {
                boundary.q_at(TAU * j as f64 / res as f64)
            }
        })
        .collect()
}

/// Roots `u ∈ [0, 2π)` of the pairing equation along the row `t`.
fn row_roots(
    boundary: &LiftedBoundary,
    qg: &[f64],
    t: f64,
    qt: f64,
    conjugate: bool,
    ks: &std::ops::RangeInclusive<i64>,
) -> Vec<PairPoint> {
    let res = qg.len() - 1;
    let h = TAU / res as f64;
    let mut out = Vec::new();
    for k in ks.clone() {
        let c = pairing_level(k, conjugate) - qt;
        for j in 0..res {
            let (fa, fb) = (qg[j] - c, qg[j + 1] - c);
            if fa == 0.0 {
                out.push(PairPoint {
                    t,
                    u: h * j as f64,
                    k,
                });
                continue;
            }
            if fa * fb >= 0.0 {
                continue;
            }
            let u = illinois(
                |u| boundary.q_at(u) - c,
                h * j as f64,
                fa,
                h * (j + 1) as f64,
                fb,
                PAIR_ROOT_TOL,
            );
            out.push(PairPoint {
                t,
                u: u.rem_euclid(TAU),
                k,
            });
        }
    }
    out.sort_by(|a, b| a.u.total_cmp(&b.u));
    out
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Scan the torus for solutions of the pairing equation.
pub fn pair_plot(
    boundary: &LiftedBoundary,
    conjugate: bool,
    resolution: usize,
) -> Result<PairPlot> {
    if resolution < 128 {
        return Err(Error::InvalidArgument(format!(
            "pair plot resolution must be at least 128, got {resolution}"
        )));
    }
    let res = resolution;
    let h = TAU / res as f64;
    let qg = q_grid(boundary, res);
    let ks = k_range(boundary, conjugate);
    let points: Vec<PairPoint> = (0..res)
        .into_par_iter()
        .flat_map_iter(|i| row_roots(boundary, &qg, h * i as f64, qg[i], conjugate, &ks))
        .collect();

    // Cells joined through every grid edge that the solution set crosses.
    let base = if conjugate { 0.0 } else { PI };
    let mut uf = UnionFind((0..res * res).collect());
    let mut marked = vec![false; res * res];
    for i in 0..res {
        for j in 0..res {
            let here = i * res + j;
            if levels_between(qg[i] + qg[j], qg[i] + qg[j + 1], base) > 0 {
                let below = ((i + res - 1) % res) * res + j;
                uf.union(here, below);
                marked[here] = true;
                marked[below] = true;
            }
            if levels_between(qg[i] + qg[j], qg[i + 1] + qg[j], base) > 0 {
                let left = i * res + (j + res - 1) % res;
                uf.union(here, left);
                marked[here] = true;
                marked[left] = true;
            }
        }
    }
    let mut labels: Vec<Option<usize>> = vec![None; res * res];
    let mut roots: Vec<usize> = Vec::new();
    for cell in 0..res * res {
        if !marked[cell] {
            continue;
        }
        let r = uf.find(cell);
        let id = match roots.iter().position(|&x| x == r) {
            Some(p) => p,
            None => {
                roots.push(r);
                roots.len() - 1
            }
        };
        labels[cell] = Some(id);
    }
    Ok(PairPlot {
        resolution: res,
        points,
        conjugate_flag: conjugate,
        cell_component: labels,
        components: roots.len(),
    })
}

/// Partners of `γ(t)`, found from the accessibility relation directly
/// rather than from `Q`.
///
/// The residual between `γ(t)` and `γ(u)` (or `γ̄(u)`) always carries the
/// factor `2r sin((u-t)/2)` from the coincidence of the planar points at
/// `u = t`; it is divided out and the quotient scanned for sign changes on
/// a grid offset by half a step from the `t` grid. At `u = t` the quotient
/// takes its limit `cos Q(t)` (`-sin Q(t)` for conjugate points).
pub fn accessible_partners(
    boundary: &LiftedBoundary,
    t: f64,
    conjugate: bool,
    resolution: usize,
) -> Vec<f64> {
    let h = TAU / resolution as f64;
    let p = boundary.pose_at(t);
    let qt = boundary.q_at(t);
    // limit of the quotient as u -> t
    let at_t = if conjugate { -qt.sin() } else { qt.cos() };
    let target = |u: f64| {
        let s = (0.5 * (u - t)).sin();
        if s.abs() < 1e-7 {
            return at_t;
        }
        let q = boundary.pose_at(u);
        let q = if conjugate { conj_pose(&q) } else { q };
        accessibility_residual(&p, &q) / (2.0 * boundary.disk.radius * s)
    };
    let grid = |j: usize| h * (j as f64 - 0.5);
    let t_shifted = {
        let w = t.rem_euclid(TAU);
        if w >= TAU - 0.5 * h {
            w - TAU
        } else {
            w
        }
    };
    let vals: Vec<f64> = (0..=resolution).map(|j| target(grid(j))).collect();
    let mut out = Vec::new();
    for j in 0..resolution {
        let (a, b) = (grid(j), grid(j + 1));
        let (fa, fb) = (vals[j], vals[j + 1]);
        if !fa.is_finite() || !fb.is_finite() {
            continue;
        }
        if fa == 0.0 {
            out.push(a.rem_euclid(TAU));
        } else if fa * fb < 0.0 {
            let tt = t_shifted;
            let root = if tt > a && tt < b {
                if at_t.abs() <= 1e-12 {
                    tt
                } else if fa * at_t < 0.0 {
                    illinois(target, a, fa, tt, at_t, PAIR_ROOT_TOL)
                } else {
                    illinois(target, tt, at_t, b, fb, PAIR_ROOT_TOL)
                }
            } else {
                illinois(target, a, fa, b, fb, PAIR_ROOT_TOL)
            };
            out.push(root.rem_euclid(TAU));
        }
    }
    out
}

/// A monotone piece of the pairing curve between two anchor points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionBranch {
    pub anchor_start: f64,
    pub anchor_end: f64,
    pub k: i64,
    /// `(t, u)` with both parameters unwrapped along the branch.
    pub samples: Vec<(f64, f64)>,
    pub conjugate_flag: bool,
}

impl ConnectionBranch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_monotone(&self) -> bool {
        let mut sign = 0.0;
        for w in self.samples.windows(2) {
            let d = w[1].1 - w[0].1;
            if d == 0.0 || (sign != 0.0 && d.signum() != sign) {
                return false;
            }
            sign = d.signum();
        }
        true
    }

    pub fn max_residual(&self, boundary: &LiftedBoundary) -> f64 {
        self.samples
            .iter()
            .map(|&(t, u)| pairing_residual(boundary, t, u, self.k, self.conjugate_flag).abs())
            .fold(0.0, f64::max)
    }

    /// Samples reduced to `[0, 2π)`.
    pub fn wrapped(&self) -> Vec<(f64, f64)> {
        self.samples
            .iter()
            .map(|&(t, u)| (t.rem_euclid(TAU), u.rem_euclid(TAU)))
            .collect()
    }

    /// `u(t)` by linear interpolation along the samples, `t` unwrapped in
    /// the branch's own range.
    pub fn u_at(&self, t: f64) -> Option<f64> {
        let s = &self.samples;
        let i = s.partition_point(|p| p.0 < t);
        if i == 0 {
            return (s.first()?.0 == t).then(|| s[0].1);
        }
        if i == s.len() {
            return None;
        }
        let (a, b) = (s[i - 1], s[i]);
        let w = (t - a.0) / (b.0 - a.0);
        Some(a.1 + w * (b.1 - a.1))
    }
}

/// Branch offset `k` for which `(t, t)` solves the pairing equation.
pub fn anchor_k(boundary: &LiftedBoundary, t: f64, conjugate: bool) -> i64 {
    let base = if conjugate { 0.0 } else { PI };
    ((2.0 * boundary.q_at(t) - base) / TAU).round() as i64
}

/// Tuning for branch continuation.
#[derive(Debug, Clone, Copy)]
pub struct TraceOptions {
    /// Upper bound on the step in `t`; defaults to the sample spacing.
    pub max_step: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl TraceOptions {
    pub fn for_boundary(boundary: &LiftedBoundary) -> Self {
        Self {
            max_step: boundary.spacing(),
            min_step: 1e-9,
            max_steps: 50 * boundary.n + 10_000,
        }
    }
}

fn anchors(special: &SpecialPoints, conjugate: bool) -> Vec<f64> {
    if conjugate {
        special.orthogonal_params()
    } else {
        special.legendrian_params()
    }
}

/// Parameter of the anchor closest to `t` (mod 2π) and its distance.
fn nearest_anchor(list: &[f64], t: f64) -> Option<(f64, f64)> {
    list.iter()
        .map(|&a| (a, crate::geometry::angle_diff(a, t).abs()))
        .min_by(|x, y| x.1.total_cmp(&y.1))
}

/// Follow the pairing curve from the anchor `(start, start)` with `t`
/// increasing, keeping `u` strictly monotone.
///
/// Predictor `u + u'Δt` with `u' = -Q'(t)/Q'(u)`, corrector by a bracketed
/// root solve in `u`. Ends at the next diagonal crossing, which is again an
/// anchor point.
pub fn trace_branch(
    boundary: &LiftedBoundary,
    start: f64,
    k: i64,
    conjugate: bool,
) -> Result<ConnectionBranch> {
    let special = find_special_points(boundary);
    trace_branch_with(
        boundary,
        &special,
        start,
        k,
        conjugate,
        TraceOptions::for_boundary(boundary),
    )
}

pub fn trace_branch_with(
    boundary: &LiftedBoundary,
    special: &SpecialPoints,
    start: f64,
    k: i64,
    conjugate: bool,
    opts: TraceOptions,
) -> Result<ConnectionBranch> {
    let f = |t: f64, u: f64| pairing_residual(boundary, t, u, k, conjugate);
    if f(start, start).abs() > PAIR_RESIDUAL_TOL {
        return Err(Error::NoBranch { t: start });
    }
    let anchor_list = anchors(special, conjugate);
    let mut samples = vec![(start, start)];
    let (mut t, mut u) = (start, start);
    let mut dir_u = 0.0;
    let mut dt = opts.max_step;
    let mut prev_gap = 0.0;

    for _ in 0..opts.max_steps {
        let slope = -boundary.qprime_at(t) / boundary.qprime_at(u);
        if !slope.is_finite() {
            return Err(Error::BranchStall {
                t,
                u,
                reason: "Q' vanishes at the partner (fold)".into(),
            });
        }
        // cap the stride in u so folds shrink the step instead of jumping
        let mut step = dt.min(opts.max_step / slope.abs().max(1e-300));
        let accepted = loop {
            if step < opts.min_step {
                let reason = if slope.abs() > 1.0 {
                    "u(t) turns back (fold in t)"
                } else {
                    "u stops being monotone"
                };
                return Err(Error::BranchStall {
                    t,
                    u,
                    reason: reason.into(),
                });
            }
            let t_new = t + step;
            let u_pred = u + slope * step;
            if let Some(u_new) = correct(&f, t_new, u_pred, slope.abs() * step + step) {
                let du = u_new - u;
                let direction_ok = dir_u == 0.0 || (du != 0.0 && du.signum() == dir_u);
                let close = (u_new - u_pred).abs() <= 0.5 * (slope.abs() * step + step);
                if direction_ok && close {
                    break (t_new, u_new);
                }
            }
            step *= 0.5;
        };
        let (t_new, u_new) = accepted;
        if dir_u == 0.0 {
            dir_u = (u_new - u).signum();
        }

        // diagonal crossings t - u ∈ 2πℤ mark the next anchor
        let gap = t_new - u_new;
        let (m_prev, m_new) = ((prev_gap / TAU).floor(), (gap / TAU).floor());
        let crossed = if gap > prev_gap {
            m_new > m_prev
        } else {
            m_new < m_prev
        };
        if crossed {
            let level = if gap > prev_gap {
                m_new * TAU
            } else {
                m_prev * TAU
            };
            let w = (level - prev_gap) / (gap - prev_gap);
            let t_cross = t + w * (t_new - t);
            let (anchor, dist) =
                nearest_anchor(&anchor_list, t_cross).ok_or(Error::BranchStall {
                    t: t_cross,
                    u: t_cross - level,
                    reason: "diagonal crossing without an anchor point".into(),
                })?;
            let t_end = t_cross + crate::geometry::angle_diff(t_cross, anchor);
            let u_end = t_end - level;
            if dist > 1e-4 || f(t_end, u_end).abs() > PAIR_RESIDUAL_TOL {
                return Err(Error::BranchStall {
                    t: t_cross,
                    u: t_cross - level,
                    reason: "diagonal crossing away from an anchor point".into(),
                });
            }
            if t_end > t {
                samples.push((t_end, u_end));
            } else if let Some(last) = samples.last_mut() {
                *last = (t_end, u_end);
            }
            return Ok(ConnectionBranch {
                anchor_start: start,
                anchor_end: t_end,
                k,
                samples,
                conjugate_flag: conjugate,
            });
        }
        samples.push((t_new, u_new));
        prev_gap = gap;
        t = t_new;
        u = u_new;
        dt = (2.0 * step).min(opts.max_step);
    }
    Err(Error::BranchStall {
        t,
        u,
        reason: "step budget exhausted before reaching an anchor".into(),
    })
}

// Root of f(t, ·) near `guess`, bracketed within `reach` of it.
fn correct(f: &impl Fn(f64, f64) -> f64, t: f64, guess: f64, reach: f64) -> Option<f64> {
    let g = |u: f64| f(t, u);
    let f0 = g(guess);
    if f0 == 0.0 {
        return Some(guess);
    }
    let mut delta = (0.05 * reach).max(1e-12);
    while delta <= reach {
        for side in [1.0, -1.0] {
            let b = guess + side * delta;
            let fb = g(b);
            if f0 * fb <= 0.0 {
                return Some(illinois(g, guess, f0, b, fb, PAIR_ROOT_TOL));
            }
        }
        delta *= 2.0;
    }
    None
}

/// A traced connected piece of the pairing curve, not necessarily monotone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentTrace {
    pub k: i64,
    pub samples: Vec<(f64, f64)>,
    pub conjugate_flag: bool,
    /// Whether the trace ended on the diagonal (at an anchor point) rather
    /// than closing up on itself.
    pub reached_anchor: bool,
}

/// Pseudo-arclength continuation of the pairing curve through `(t0, u0)`,
/// following folds in either parameter.
///
/// Starts in the direction of increasing `t` and stops at the next
/// diagonal crossing or when the curve closes.
pub fn trace_component(
    boundary: &LiftedBoundary,
    t0: f64,
    u0: f64,
    k: i64,
    conjugate: bool,
) -> Result<ComponentTrace> {
    let f = |t: f64, u: f64| pairing_residual(boundary, t, u, k, conjugate);
    if f(t0, u0).abs() > PAIR_RESIDUAL_TOL {
        return Err(Error::NoBranch { t: t0 });
    }
    let h = boundary.spacing();
    let mut samples = vec![(t0, u0)];
    let (mut t, mut u) = (t0, u0);
    let mut orient = 0.0;
    let mut prev_gap = t0 - u0;
    let start_on_diagonal = prev_gap.rem_euclid(TAU) == 0.0;
    let mut walked = 0.0;
    let max_steps = 100 * boundary.n + 10_000;
    for _ in 0..max_steps {
        let (gt, gu) = (boundary.qprime_at(t), boundary.qprime_at(u));
        let norm = gt.hypot(gu);
        if norm == 0.0 {
            return Err(Error::BranchStall {
                t,
                u,
                reason: "singular point of the pairing curve".into(),
            });
        }
        let (mut tt, mut tu) = (gu / norm, -gt / norm);
        if orient == 0.0 {
            orient = if tt != 0.0 { tt.signum() } else { 1.0 };
        }
        tt *= orient;
        tu *= orient;
        let (nt, nu) = (gt / norm, gu / norm);
        let mut ds = h;
        let next = loop {
            if ds < 1e-9 {
                return Err(Error::BranchStall {
                    t,
                    u,
                    reason: "corrector failed along the normal".into(),
                });
            }
            let (pt, pu) = (t + ds * tt, u + ds * tu);
            let g = |lam: f64| f(pt + lam * nt, pu + lam * nu);
            let g0 = g(0.0);
            let mut found = None;
            let mut delta = 0.05 * ds;
            while delta <= 0.5 * ds && found.is_none() {
                for side in [1.0, -1.0] {
                    let gb = g(side * delta);
                    if g0 == 0.0 {
                        found = Some(0.0);
                        break;
                    }
                    if g0 * gb <= 0.0 {
                        found = Some(illinois(g, 0.0, g0, side * delta, gb, PAIR_ROOT_TOL));
                        break;
                    }
                }
                delta *= 2.0;
            }
            match found {
                Some(lam) => break (pt + lam * nt, pu + lam * nu),
                None => ds *= 0.5,
            }
        };
        // keep the orientation consistent with the previous tangent
        let (dt_, du_) = (next.0 - t, next.1 - u);
        if dt_ * tt + du_ * tu <= 0.0 {
            return Err(Error::BranchStall {
                t,
                u,
                reason: "continuation reversed".into(),
            });
        }
        walked += dt_.hypot(du_);
        let gap = next.0 - next.1;
        let (m_prev, m_new) = ((prev_gap / TAU).floor(), (gap / TAU).floor());
        let leaves_start = !(start_on_diagonal && samples.len() == 1);
        if leaves_start && m_prev != m_new {
            let level = if gap > prev_gap {
                m_new * TAU
            } else {
                m_prev * TAU
            };
            let w = (level - prev_gap) / (gap - prev_gap);
            let tc = t + w * (next.0 - t);
            samples.push((tc, tc - level));
            return Ok(ComponentTrace {
                k,
                samples,
                conjugate_flag: conjugate,
                reached_anchor: true,
            });
        }
        samples.push(next);
        prev_gap = gap;
        t = next.0;
        u = next.1;
        // closed loop: back at the start modulo the torus periods
        let dt0 = crate::geometry::angle_diff(t0, t);
        let du0 = crate::geometry::angle_diff(u0, u);
        if walked > 4.0 * h && dt0.hypot(du0) < 0.5 * h {
            return Ok(ComponentTrace {
                k,
                samples,
                conjugate_flag: conjugate,
                reached_anchor: false,
            });
        }
    }
    Err(Error::BranchStall {
        t,
        u,
        reason: "step budget exhausted".into(),
    })
}

/// A maximal arc of boundary parameters without a non-trivial partner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolitaryInterval {
    pub start: f64,
    /// `end > start`; may exceed `2π` when the arc wraps through `t = 0`.
    pub end: f64,
    pub full_circle: bool,
    pub contains_legendrian: bool,
}

impl SolitaryInterval {
    pub fn width(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        self.full_circle || (t - self.start).rem_euclid(TAU) <= self.width()
    }

    /// Gaps this arc leaves in the symmetric `(t, u)` pair plot: a band in
    /// `t` and its mirror band in `u`, or a single region for the full circle.
    pub fn pair_plot_gaps(&self) -> usize {
        if self.full_circle {
            1
        } else {
            2
        }
    }
}

fn has_partner(
    boundary: &LiftedBoundary,
    qg: &[f64],
    ks: &std::ops::RangeInclusive<i64>,
    t: f64,
    conjugate: bool,
) -> bool {
    let res = qg.len() - 1;
    let h = TAU / res as f64;
    let qt = boundary.q_at(t);
    let tw = t.rem_euclid(TAU);
    for k in ks.clone() {
        let c = pairing_level(k, conjugate) - qt;
        for j in 0..res {
            let (fa, fb) = (qg[j] - c, qg[j + 1] - c);
            if fa * fb > 0.0 {
                continue;
            }
            let (a, b) = (h * j as f64, h * (j + 1) as f64);
            let near_t = crate::geometry::angle_diff(tw, 0.5 * (a + b)).abs() <= 1.5 * h;
            if !near_t {
                return true;
            }
            if fa == fb {
                continue;
            }
            let u = if fa == 0.0 {
                a
            } else if fb == 0.0 {
                b
            } else {
                illinois(|u| boundary.q_at(u) - c, a, fa, b, fb, PAIR_ROOT_TOL)
            };
            if crate::geometry::angle_diff(tw, u).abs() > SELF_PAIR_TOL {
                return true;
            }
        }
    }
    false
}

/// Maximal parameter arcs whose points have no direct partner `u ≠ t`.
///
/// Rows of a `boundary.n` grid are tested; arcs no wider than two grid
/// steps are treated as sampling holes and dropped. Arc ends are refined
/// by bisection.
pub fn detect_solitary(boundary: &LiftedBoundary) -> Vec<SolitaryInterval> {
    let special = find_special_points(boundary);
    detect_solitary_with(boundary, &special, boundary.n)
}

pub fn detect_solitary_with(
    boundary: &LiftedBoundary,
    special: &SpecialPoints,
    resolution: usize,
) -> Vec<SolitaryInterval> {
    let res = resolution;
    let h = TAU / res as f64;
    let qg = q_grid(boundary, res);
    let ks = k_range(boundary, false);
    let solitary: Vec<bool> = (0..res)
        .into_par_iter()
        .map(|i| !has_partner(boundary, &qg, &ks, h * i as f64, false))
        .collect();
    if solitary.iter().all(|&s| s) {
        return vec![SolitaryInterval {
            start: 0.0,
            end: TAU,
            full_circle: true,
            contains_legendrian: !special.legendrian.is_empty() || special.all_legendrian(),
        }];
    }
    // runs in cyclic order, starting after a partnered row
    let first_free = solitary.iter().position(|&s| !s).unwrap();
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut current: Option<usize> = None;
    for step in 1..=res {
        let i = (first_free + step) % res;
        match (solitary[i], current) {
            (true, None) => current = Some(first_free + step),
            (false, Some(s)) => {
                runs.push((s, first_free + step - 1));
                current = None;
            }
            _ => {}
        }
    }
    let partnered = |t: f64| has_partner(boundary, &qg, &ks, t, false);
    runs.into_iter()
        .filter(|(s, e)| (e - s + 2) as f64 * h > 2.0 * h)
        .map(|(s, e)| {
            let lo = bisect_predicate(partnered, h * (s as f64 - 1.0), h * s as f64, 1e-10);
            let hi = bisect_predicate(partnered, h * e as f64, h * (e as f64 + 1.0), 1e-10);
            let start = lo.rem_euclid(TAU);
            let end = start + (hi - lo);
            let interval = SolitaryInterval {
                start,
                end,
                full_circle: false,
                contains_legendrian: false,
            };
            SolitaryInterval {
                contains_legendrian: special.legendrian.iter().any(|p| interval.contains(p.t)),
                ..interval
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QPrimeSign {
    AllNegative,
    AllPositive,
    Mixed,
    HasZeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseLabel {
    Case1,
    Case2,
    Case3,
    Case4,
    Unclassified,
}

impl CaseLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            CaseLabel::Case1 => "Case1",
            CaseLabel::Case2 => "Case2",
            CaseLabel::Case3 => "Case3",
            CaseLabel::Case4 => "Case4",
            CaseLabel::Unclassified => "Unclassified",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub degree: i64,
    pub qprime_zero_count: usize,
    pub qprime_sign: QPrimeSign,
    pub qprime_range: (f64, f64),
    pub q_range: (f64, f64),
    pub solitary_gaps: Vec<SolitaryInterval>,
    /// Gap regions in the symmetric pair plot.
    pub gap_count: usize,
    pub non_legendrian_solitary: bool,
    pub special: SpecialPoints,
    pub direct_branch_count: usize,
    pub conjugate_branch_count: usize,
    pub case_label: CaseLabel,
}

/// Sign changes of the sampled `Q'` around the circle, plus samples that
/// are numerically zero.
pub fn qprime_zero_count(boundary: &LiftedBoundary) -> usize {
    let scale = boundary
        .qprime
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    let n = boundary.n;
    let mut count = 0;
    for i in 0..n {
        let (a, b) = (boundary.qprime[i], boundary.qprime[(i + 1) % n]);
        if a.abs() <= 1e-12 * scale || (a * b < 0.0 && b.abs() > 1e-12 * scale) {
            count += 1;
        }
    }
    count
}

/// Classify the occlusion by the degree of `Q`, the zeros of `Q'` and the
/// solitary arcs. `Q'` comes from the lift itself.
pub fn classify(boundary: &LiftedBoundary) -> Result<CaseReport> {
    let degree = boundary.degree();
    let special = find_special_points(boundary);
    let zeros = qprime_zero_count(boundary);
    let (qp_lo, qp_hi) = boundary
        .qprime
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    let qprime_sign = if zeros > 0 {
        QPrimeSign::HasZeros
    } else if qp_hi < 0.0 {
        QPrimeSign::AllNegative
    } else if qp_lo > 0.0 {
        QPrimeSign::AllPositive
    } else {
        QPrimeSign::Mixed
    };
    let gaps = detect_solitary_with(boundary, &special, boundary.n);
    let res = boundary.n.clamp(128, 512);
    let direct = pair_plot(boundary, false, res)?;
    let conj = pair_plot(boundary, true, res)?;
    let case_label = match degree {
        -1 if zeros == 0 => CaseLabel::Case1,
        -1 => CaseLabel::Case2,
        0 if !gaps.is_empty() => CaseLabel::Case3,
        d if d.abs() > 1 => CaseLabel::Case4,
        _ => CaseLabel::Unclassified,
    };
    Ok(CaseReport {
        degree,
        qprime_zero_count: zeros,
        qprime_sign,
        qprime_range: (qp_lo, qp_hi),
        q_range: boundary.q_range(),
        gap_count: gaps.iter().map(|g| g.pair_plot_gaps()).sum(),
        non_legendrian_solitary: gaps.iter().any(|g| !g.contains_legendrian),
        solitary_gaps: gaps,
        special,
        direct_branch_count: direct.branch_count(),
        conjugate_branch_count: conj.branch_count(),
        case_label,
    })
}

/// The global pairing of a Case 1 occlusion: a bijection `u: S¹ → S¹`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pairing {
    /// Branches between consecutive anchors; together their `t`-ranges
    /// cover one full turn.
    pub branches: Vec<ConnectionBranch>,
    pub conjugate_flag: bool,
}

impl Pairing {
    /// Partner of `t`, reduced to `[0, 2π)`.
    pub fn u_of(&self, t: f64) -> Option<f64> {
        for b in &self.branches {
            let (lo, hi) = (b.samples[0].0, b.samples.last()?.0);
            let shift = TAU * ((t - lo) / TAU).floor();
            let tt = t - shift;
            if tt >= lo && tt <= hi {
                return b.u_at(tt).map(|u| u.rem_euclid(TAU));
            }
        }
        None
    }
}

/// Full monotone pairing for Case 1 occlusions (`deg Q = -1`, `Q' ≠ 0`),
/// traced between consecutive anchor points.
pub fn solve_pairing(boundary: &LiftedBoundary) -> Result<Pairing> {
    solve_pairing_with(boundary, false)
}

pub fn solve_pairing_with(boundary: &LiftedBoundary, conjugate: bool) -> Result<Pairing> {
    if boundary.degree() != -1 {
        return Err(Error::NotCase1 {
            reason: format!("deg Q = {}", boundary.degree()),
        });
    }
    let zeros = qprime_zero_count(boundary);
    if zeros > 0 {
        return Err(Error::NotCase1 {
            reason: format!("Q' changes sign {zeros} times"),
        });
    }
    let special = find_special_points(boundary);
    let list = anchors(&special, conjugate);
    if list.len() != 2 {
        return Err(Error::NotCase1 {
            reason: format!("expected 2 anchor points, found {}", list.len()),
        });
    }
    let opts = TraceOptions::for_boundary(boundary);
    let mut branches = Vec::new();
    for &a in &list {
        let k = anchor_k(boundary, a, conjugate);
        branches.push(trace_branch_with(
            boundary, &special, a, k, conjugate, opts,
        )?);
    }
    Ok(Pairing {
        branches,
        conjugate_flag: conjugate,
    })
}

/// Every branch reachable from an anchor point, each with the pair-plot
/// component it belongs to. Failed traces are kept so callers can see
/// where and why continuation stalled.
pub fn trace_all_branches(
    boundary: &LiftedBoundary,
    conjugate: bool,
    plot: &PairPlot,
) -> Vec<(f64, Option<usize>, Result<ConnectionBranch>)> {
    let special = find_special_points(boundary);
    let opts = TraceOptions::for_boundary(boundary);
    anchors(&special, conjugate)
        .into_par_iter()
        .map(|a| {
            let k = anchor_k(boundary, a, conjugate);
            let comp = plot.component_of(a, a);
            (
                a,
                comp,
                trace_branch_with(boundary, &special, a, k, conjugate, opts),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{builtin, IntensityField};
    use crate::lift::{lift_boundary, OcclusionDisk};
    use std::f64::consts::FRAC_PI_2;

    fn lift(name: &str, cx: f64, cy: f64, n: usize) -> LiftedBoundary {
        let f = IntensityField::from(builtin::by_name(name).unwrap());
        lift_boundary(&f, &OcclusionDisk::new(cx, cy, 1.0).unwrap(), n).unwrap()
    }

    #[test]
    fn linear_pair_plot_is_antidiagonal() {
        let b = lift("linear", 0.0, 0.0, 256);
        let plot = pair_plot(&b, false, 256).unwrap();
        assert!(!plot.is_empty());
        for p in &plot.points {
            let expect = (PI - p.t).rem_euclid(TAU);
            assert!(
                crate::geometry::angle_diff(p.u, expect).abs() < 1e-9,
                "{p:?}"
            );
        }
        assert_eq!(plot.branch_count(), 1);
    }

    #[test]
    fn rotation_pair_plot_is_empty() {
        let b = LiftedBoundary::rotation(256).unwrap();
        let plot = pair_plot(&b, false, 256).unwrap();
        assert!(plot.is_empty());
        assert_eq!(plot.branch_count(), 0);
        let gaps = detect_solitary(&b);
        assert_eq!(gaps.len(), 1);
        assert!(gaps[0].full_circle && !gaps[0].contains_legendrian);
        assert!(matches!(
            trace_branch(&b, 0.3, 0, false),
            Err(Error::NoBranch { .. })
        ));
    }

    #[test]
    fn resolution_floor() {
        let b = lift("linear", 0.0, 0.0, 256);
        assert!(pair_plot(&b, false, 64).is_err());
    }

    #[test]
    fn linear_branch_is_closed_form() {
        let b = lift("linear", 0.0, 0.0, 1024);
        let k = anchor_k(&b, FRAC_PI_2, false);
        let br = trace_branch(&b, FRAC_PI_2, k, false).unwrap();
        assert!(br.is_monotone());
        assert!((br.anchor_end - 1.5 * PI).abs() < 1e-9);
        for &(t, u) in &br.samples {
            assert!((u - (PI - t)).abs() < 1e-9);
        }
    }

    #[test]
    fn case1_single_branch_between_legendrian_points() {
        let b = lift("cross", 2.4, 2.6, 1024);
        let plot = pair_plot(&b, false, 256).unwrap();
        assert_eq!(plot.branch_count(), 1);
        let pairing = solve_pairing(&b).unwrap();
        assert_eq!(pairing.branches.len(), 2);
        let sp = find_special_points(&b);
        for br in &pairing.branches {
            assert!(br.is_monotone());
            assert!(br.max_residual(&b) < PAIR_RESIDUAL_TOL);
            let end = br.anchor_end.rem_euclid(TAU);
            assert!(sp
                .legendrian
                .iter()
                .any(|p| crate::geometry::angle_diff(p.t, end).abs() < 1e-9));
        }
        for i in 0..64 {
            let t = TAU * i as f64 / 64.0;
            let u = pairing.u_of(t).unwrap();
            assert!(
                pairing_residual(&b, t, u, 0, false)
                    .rem_euclid(TAU)
                    .min(TAU - pairing_residual(&b, t, u, 0, false).rem_euclid(TAU))
                    < 1e-5
            );
        }
    }

    #[test]
    fn case2_is_not_case1() {
        let b = lift("cross", 1.2, 1.4, 1024);
        assert!(matches!(solve_pairing(&b), Err(Error::NotCase1 { .. })));
    }

    #[test]
    fn case4_has_two_branches() {
        let b = lift("cross", 0.1, -0.3, 1024);
        let plot = pair_plot(&b, false, 256).unwrap();
        assert_eq!(plot.branch_count(), 2);
    }

    #[test]
    fn classify_paper_cases() {
        let c = classify(&lift("cross", 2.4, 2.6, 1024)).unwrap();
        assert_eq!(c.case_label, CaseLabel::Case1);
        assert_eq!(c.special.legendrian.len(), 2);
        assert!(c.solitary_gaps.is_empty());
        let c = classify(&lift("cross", 1.2, 1.4, 1024)).unwrap();
        assert_eq!(c.case_label, CaseLabel::Case2);
        assert!(c.qprime_zero_count > 0);
        let c = classify(&lift("cross", 0.1, -0.3, 1024)).unwrap();
        assert_eq!(c.case_label, CaseLabel::Case4);
        let c = classify(&lift("ellipse-bump", 0.1, -0.3, 1024)).unwrap();
        assert_eq!(c.case_label, CaseLabel::Case3);
        assert_eq!(c.gap_count, 2);
    }

    #[test]
    fn pair_plot_matches_accessibility_oracle() {
        let b = lift("cross", 2.4, 2.6, 256);
        let plot = pair_plot(&b, false, 256).unwrap();
        for i in (0..256).step_by(5) {
            let t = TAU * i as f64 / 256.0;
            let mut a: Vec<f64> = plot
                .points
                .iter()
                .filter(|p| p.t == t && crate::geometry::angle_diff(p.u, t).abs() > SELF_PAIR_TOL)
                .map(|p| p.u)
                .collect();
            let mut o = accessible_partners(&b, t, false, 256);
            a.sort_by(f64::total_cmp);
            o.sort_by(f64::total_cmp);
            assert_eq!(a.len(), o.len(), "row {i}: {a:?} vs {o:?}");
            for (x, y) in a.iter().zip(&o) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }
}
