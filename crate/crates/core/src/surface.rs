//! Ruled spanning surfaces: rule selection, rasterization over the
//! occluded disk, intensity fill, the minimal-surface residual and mesh
//! export.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::IntensityField;
use crate::geometry::{
    conjugate, connecting_rule_with_tol, nearest_branch, Connection, LineRule, Pose, Rule,
    Traversal, ACCESS_TOL_ANALYTIC,
};
use crate::lift::{LiftedBoundary, OcclusionDisk};
use crate::numeric::illinois;
use crate::solver::{pairing_residual, CaseLabel, ConnectionBranch, PAIR_ROOT_TOL};

/// Default angular tolerance of the graph test.
pub const GRAPH_TOL: f64 = 0.05;

/// Which piece of the connecting circle a surface rule uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentChoice {
    Anticlockwise,
    Clockwise,
    Line,
    /// Coincident endpoints: the rule degenerates to a single pose.
    Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRule {
    pub t: f64,
    pub u: f64,
    pub rule: Rule,
    pub choice: SegmentChoice,
    /// Whether the projection of the chosen segment lies in the disk.
    pub interior: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanningSurface {
    pub disk: OcclusionDisk,
    pub rules: Vec<SurfaceRule>,
    pub conjugate_flag: bool,
    pub case_label: Option<CaseLabel>,
}

impl SpanningSurface {
    pub fn exterior_count(&self) -> usize {
        self.rules.iter().filter(|r| !r.interior).count()
    }

    pub fn all_interior(&self) -> bool {
        self.exterior_count() == 0
    }

    /// Every arc extended to its whole circle; lines are kept.
    pub fn full_rules(&self) -> SpanningSurface {
        let rules = self
            .rules
            .iter()
            .map(|r| {
                let mut r = *r;
                if let Rule::Arc(mut a) = r.rule {
                    let dir = if a.theta_end >= a.theta_start {
                        1.0
                    } else {
                        -1.0
                    };
                    a.theta_end = a.theta_start + dir * TAU;
                    r.rule = Rule::Arc(a);
                }
                r
            })
            .collect();
        SpanningSurface {
            rules,
            ..self.clone()
        }
    }

    pub fn min_abs_radius(&self) -> Option<f64> {
        self.rules
            .iter()
            .filter_map(|r| match r.rule {
                Rule::Arc(a) => Some(a.radius.abs()),
                Rule::Line(_) => None,
            })
            .reduce(f64::min)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SurfaceOptions {
    /// Accessibility tolerance, scaled by `1 + |q - p|`.
    pub tol_access: f64,
    /// Smallest admissible `|R|` as a fraction of the disk radius.
    pub r_min_factor: f64,
}

impl Default for SurfaceOptions {
    fn default() -> Self {
        Self {
            tol_access: ACCESS_TOL_ANALYTIC,
            r_min_factor: 1e-6,
        }
    }
}

// fraction of a rule's parameter range used as interior test points
fn test_fractions(rule: &Rule) -> &'static [f64] {
    if rule.angle_span() > std::f64::consts::PI {
        &[0.25, 0.5, 0.75]
    } else {
        &[0.5]
    }
}

fn min_depth(disk: &OcclusionDisk, rule: &Rule) -> f64 {
    test_fractions(rule)
        .iter()
        .map(|&f| disk.depth(rule.point_at_fraction(f).planar()))
        .fold(f64::INFINITY, f64::min)
}

/// Rule from `γ(t)` to `γ(u)` (or `γ̄(u)`), choosing the arc whose
/// projection lies inside the disk.
pub fn surface_rule(
    boundary: &LiftedBoundary,
    t: f64,
    u: f64,
    conjugate_pairing: bool,
    opts: &SurfaceOptions,
) -> Result<SurfaceRule> {
    let disk = &boundary.disk;
    let p = boundary.pose_at(t);
    let q0 = boundary.pose_at(u);
    let q = if conjugate_pairing {
        conjugate(&q0)
    } else {
        q0
    };
    let wrap_err = |e: Error| Error::RuleConstructionFailure {
        t,
        u,
        source: Box::new(e),
    };
    if p.planar_distance(&q) <= 1e-12 * disk.radius {
        let rule = Rule::Line(LineRule {
            base: p,
            direction: p.theta,
            s_start: 0.0,
            s_end: 0.0,
        });
        return Ok(SurfaceRule {
            t,
            u,
            rule,
            choice: SegmentChoice::Point,
            interior: true,
        });
    }
    let tol = opts.tol_access * disk.radius.max(1.0) * (1.0 + p.planar_distance(&q));
    let conn = connecting_rule_with_tol(&p, &q, tol).map_err(wrap_err)?;
    match conn {
        Connection::Line(rule) => Ok(SurfaceRule {
            t,
            u,
            rule,
            choice: SegmentChoice::Line,
            interior: min_depth(disk, &rule) > 0.0,
        }),
        Connection::Arc { .. } => {
            let r = conn.radius().unwrap();
            if r.abs() < opts.r_min_factor * disk.radius {
                return Err(wrap_err(Error::DegenerateRadius { from: p, to: q }));
            }
            let (best, depth) = conn
                .candidates()
                .into_iter()
                .map(|(tr, rule)| ((tr, rule), min_depth(disk, &rule)))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            let choice = match best.0 {
                Traversal::Anticlockwise => SegmentChoice::Anticlockwise,
                Traversal::Clockwise => SegmentChoice::Clockwise,
            };
            Ok(SurfaceRule {
                t,
                u,
                rule: best.1,
                choice,
                interior: depth > 0.0,
            })
        }
    }
}

/// Assemble rules for the given pairs `(t, u)`, in order.
///
/// A pair and its mirror `(u, t)` give the same rule, so one half of a
/// symmetric pairing already spans the whole surface.
pub fn build_surface(
    boundary: &LiftedBoundary,
    pairs: &[(f64, f64)],
    conjugate_pairing: bool,
    opts: &SurfaceOptions,
) -> Result<SpanningSurface> {
    let rules = pairs
        .par_iter()
        .map(|&(t, u)| surface_rule(boundary, t, u, conjugate_pairing, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(SpanningSurface {
        disk: boundary.disk,
        rules,
        conjugate_flag: conjugate_pairing,
        case_label: None,
    })
}

pub fn build_surface_from_branch(
    boundary: &LiftedBoundary,
    branch: &ConnectionBranch,
    opts: &SurfaceOptions,
) -> Result<SpanningSurface> {
    build_surface(boundary, &branch.samples, branch.conjugate_flag, opts)
}

/// Regular grid of sample points `(x0 + i·spacing, y0 + j·spacing)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x0: f64,
    pub y0: f64,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    /// `n x n` pixel centers tiling the disk's bounding square.
    pub fn disk_box(disk: &OcclusionDisk, n: usize) -> Self {
        let h = 2.0 * disk.radius / n as f64;
        Self {
            x0: disk.center[0] - disk.radius + 0.5 * h,
            y0: disk.center[1] - disk.radius + 0.5 * h,
            spacing: h,
            nx: n,
            ny: n,
        }
    }

    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.x0 + i as f64 * self.spacing,
            self.y0 + j as f64 * self.spacing,
        ]
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Rasterized projection of a spanning surface. Arrays are row-major in
/// `j` (increasing `y`), index `j * nx + i`.
#[derive(Debug, Clone)]
pub struct CompletionRaster {
    pub grid: GridSpec,
    /// Sample point strictly inside the disk.
    pub inside: Vec<bool>,
    pub coverage_mask: Vec<bool>,
    /// Distinct sheets of the surface over the sample point.
    pub conflict_count: Vec<u16>,
    /// Filled intensity; `NaN` where not covered or not filled.
    pub intensity: Vec<f64>,
    /// Mean rule angle `θ̂`; `NaN` where not covered.
    pub theta: Vec<f64>,
    /// Spread of rule angles over the sample point.
    pub theta_range: Vec<f64>,
    /// Strips between consecutive rules skipped as non-adjacent.
    pub skipped_strips: usize,
}

impl CompletionRaster {
    pub fn inside_count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn covered_count(&self) -> usize {
        self.inside
            .iter()
            .zip(&self.coverage_mask)
            .filter(|(a, b)| **a && **b)
            .count()
    }

    pub fn coverage_fraction(&self) -> f64 {
        let n = self.inside_count();
        if n == 0 {
            0.0
        } else {
            self.covered_count() as f64 / n as f64
        }
    }

    pub fn max_conflict(&self) -> u16 {
        self.conflict_count.iter().copied().max().unwrap_or(0)
    }

    pub fn max_theta_range(&self) -> f64 {
        self.theta_range
            .iter()
            .filter(|v| v.is_finite())
            .fold(0.0, |m, &v| m.max(v))
    }
}

#[derive(Clone, Copy)]
struct Vertex {
    x: f64,
    y: f64,
    theta: f64,
    value: f64,
}

fn rule_vertices(rule: &Rule, m: usize, v0: f64, v1: f64) -> Vec<Vertex> {
    (0..=m)
        .map(|j| {
            let lam = j as f64 / m as f64;
            let p = rule.point_at_fraction(lam);
            Vertex {
                x: p.x,
                y: p.y,
                theta: p.theta,
                value: v0 + lam * (v1 - v0),
            }
        })
        .collect()
}

struct Hit {
    pixel: usize,
    theta: f64,
    value: f64,
}

fn raster_triangle(grid: &GridSpec, inside: &[bool], tri: [&Vertex; 3], out: &mut Vec<Hit>) {
    let [a, b, c] = tri;
    let area = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
    let scale = (b.x - a.x).abs() + (c.x - a.x).abs() + (b.y - a.y).abs() + (c.y - a.y).abs();
    if area.abs() <= 1e-14 * scale * scale || !area.is_finite() {
        return;
    }
    let h = grid.spacing;
    let (minx, maxx) = (a.x.min(b.x).min(c.x), a.x.max(b.x).max(c.x));
    let (miny, maxy) = (a.y.min(b.y).min(c.y), a.y.max(b.y).max(c.y));
    let i0 = ((minx - grid.x0) / h).ceil().max(0.0) as usize;
    let j0 = ((miny - grid.y0) / h).ceil().max(0.0) as usize;
    let i1 = ((maxx - grid.x0) / h).floor();
    let j1 = ((maxy - grid.y0) / h).floor();
    if i1 < 0.0 || j1 < 0.0 {
        return;
    }
    let i1 = (i1 as usize).min(grid.nx.saturating_sub(1));
    let j1 = (j1 as usize).min(grid.ny.saturating_sub(1));
    let tb = nearest_branch(b.theta, a.theta);
    let tc = nearest_branch(c.theta, a.theta);
    let eps = -1e-12;
    for j in j0..=j1 {
        for i in i0..=i1 {
            let idx = j * grid.nx + i;
            if !inside[idx] {
                continue;
            }
            let [px, py] = grid.point(i, j);
            let wa = ((b.x - px) * (c.y - py) - (c.x - px) * (b.y - py)) / area;
            let wb = ((c.x - px) * (a.y - py) - (a.x - px) * (c.y - py)) / area;
            let wc = 1.0 - wa - wb;
            if wa < eps || wb < eps || wc < eps {
                continue;
            }
            out.push(Hit {
                pixel: idx,
                theta: wa * a.theta + wb * tb + wc * tc,
                value: wa * a.value + wb * b.value + wc * c.value,
            });
        }
    }
}

/// Rasterize the surface over `grid`. Each pair of consecutive rules
/// bounds a strip, triangulated with sub-half-pixel steps along the rules;
/// sample points inside a triangle are covered and take barycentric
/// values. Consecutive strips over a point form one sheet.
pub fn rasterize(
    surface: &SpanningSurface,
    grid: &GridSpec,
    field: Option<&IntensityField>,
) -> CompletionRaster {
    let disk = &surface.disk;
    let inside: Vec<bool> = (0..grid.len())
        .map(|idx| disk.depth(grid.point(idx % grid.nx, idx / grid.nx)) > 0.0)
        .collect();
    let ends: Vec<(f64, f64)> = surface
        .rules
        .iter()
        .map(|r| match field {
            Some(f) => {
                let a = r.rule.start();
                let b = r.rule.end();
                (f.value(a.x, a.y), f.value(b.x, b.y))
            }
            None => (f64::NAN, f64::NAN),
        })
        .collect();
    let h = grid.spacing;
    let jump_limit = (0.1 * disk.radius).max(10.0 * h);
    let strips: Vec<Option<Vec<Hit>>> = (0..surface.rules.len().saturating_sub(1))
        .into_par_iter()
        .map(|s| {
            let (ra, rb) = (&surface.rules[s].rule, &surface.rules[s + 1].rule);
            let len = ra.length().max(rb.length());
            let m = ((len / (0.5 * h)).ceil() as usize).clamp(1, 1 << 16);
            let va = rule_vertices(ra, m, ends[s].0, ends[s].1);
            let vb = rule_vertices(rb, m, ends[s + 1].0, ends[s + 1].1);
            let jump = va
                .iter()
                .zip(&vb)
                .map(|(p, q)| (p.x - q.x).hypot(p.y - q.y))
                .fold(0.0, f64::max);
            if jump > jump_limit {
                return None;
            }
            let mut hits = Vec::new();
            for j in 0..m {
                raster_triangle(grid, &inside, [&va[j], &va[j + 1], &vb[j]], &mut hits);
                raster_triangle(grid, &inside, [&va[j + 1], &vb[j + 1], &vb[j]], &mut hits);
            }
            Some(hits)
        })
        .collect();
    let skipped_strips = strips.iter().filter(|s| s.is_none()).count();

    // per sample point: (strip, θ, value) in strip order
    let mut buckets: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); grid.len()];
    for (s, hits) in strips.iter().enumerate() {
        for hit in hits.iter().flatten() {
            let b = &mut buckets[hit.pixel];
            if b.last().map(|l| l.0) != Some(s) {
                b.push((s, hit.theta, hit.value));
            }
        }
    }
    let n = grid.len();
    let mut coverage_mask = vec![false; n];
    let mut conflict_count = vec![0u16; n];
    let mut intensity = vec![f64::NAN; n];
    let mut theta = vec![f64::NAN; n];
    let mut theta_range = vec![f64::NAN; n];
    for (idx, b) in buckets.iter().enumerate() {
        if b.is_empty() {
            continue;
        }
        coverage_mask[idx] = true;
        let reference = b[0].1;
        let (mut lo, mut hi, mut sum_t) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        let mut layers: Vec<(f64, usize)> = Vec::new();
        let mut prev = usize::MAX;
        for &(s, th, val) in b {
            let th = nearest_branch(th, reference);
            lo = lo.min(th);
            hi = hi.max(th);
            sum_t += th;
            if prev != usize::MAX && s == prev + 1 {
                let l = layers.last_mut().unwrap();
                l.0 += val;
                l.1 += 1;
            } else {
                layers.push((val, 1));
            }
            prev = s;
        }
        conflict_count[idx] = layers.len().min(u16::MAX as usize) as u16;
        theta[idx] = sum_t / b.len() as f64;
        theta_range[idx] = hi - lo;
        if field.is_some() {
            intensity[idx] =
                layers.iter().map(|(v, c)| v / *c as f64).sum::<f64>() / layers.len() as f64;
        }
    }
    CompletionRaster {
        grid: *grid,
        inside,
        coverage_mask,
        conflict_count,
        intensity,
        theta,
        theta_range,
        skipped_strips,
    }
}

/// Coverage and sheet counts of the surface's projection on an
/// `grid_n x grid_n` grid over the disk.
pub fn project_coverage(surface: &SpanningSurface, grid_n: usize) -> Result<CompletionRaster> {
    if grid_n < 64 {
        return Err(Error::InvalidArgument(format!(
            "coverage grid must be at least 64, got {grid_n}"
        )));
    }
    Ok(rasterize(
        surface,
        &GridSpec::disk_box(&surface.disk, grid_n),
        None,
    ))
}

/// Angle field `θ̂` on a regular grid; `NaN` marks undefined points.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ThetaField {
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let [x, y] = grid.point(idx % grid.nx, idx / grid.nx);
                f(x, y)
            })
            .collect();
        Self { grid, values }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.grid.nx + i]
    }
}

#[derive(Debug, Clone)]
pub struct GraphCheck {
    pub is_graph: bool,
    pub max_theta_range: f64,
    pub coverage: f64,
    /// Averaged `θ̂`, present only when the surface is a graph.
    pub theta: Option<ThetaField>,
}

/// Whether every covered point sees rule angles within `tol` of each other.
pub fn graph_check(surface: &SpanningSurface, grid_n: usize, tol: f64) -> Result<GraphCheck> {
    let raster = project_coverage(surface, grid_n)?;
    Ok(graph_check_raster(&raster, tol))
}

pub fn graph_check_raster(raster: &CompletionRaster, tol: f64) -> GraphCheck {
    let max_range = raster.max_theta_range();
    let is_graph = max_range < tol && raster.covered_count() > 0;
    GraphCheck {
        is_graph,
        max_theta_range: max_range,
        coverage: raster.coverage_fraction(),
        theta: is_graph.then(|| ThetaField {
            grid: raster.grid,
            values: raster.theta.clone(),
        }),
    }
}

/// Fill the disk on an `grid_n x grid_n` grid by interpolating boundary
/// intensities linearly along each rule.
pub fn fill_intensity(
    field: &IntensityField,
    surface: &SpanningSurface,
    grid_n: usize,
) -> Result<CompletionRaster> {
    if grid_n < 2 {
        return Err(Error::InvalidArgument(
            "fill grid must be at least 2".into(),
        ));
    }
    Ok(rasterize(
        surface,
        &GridSpec::disk_box(&surface.disk, grid_n),
        Some(field),
    ))
}

/// Fill on an arbitrary sample grid, e.g. the pixel grid of a raster input.
pub fn fill_on_grid(
    field: &IntensityField,
    surface: &SpanningSurface,
    grid: &GridSpec,
) -> CompletionRaster {
    rasterize(surface, grid, Some(field))
}

/// Rules whose endpoint intensities differ by more than `tol`: these join
/// level sets of different heights.
pub fn endpoint_mismatches(field: &IntensityField, surface: &SpanningSurface, tol: f64) -> usize {
    surface
        .rules
        .iter()
        .filter(|r| {
            let (a, b) = (r.rule.start(), r.rule.end());
            (field.value(a.x, a.y) - field.value(b.x, b.y)).abs() > tol
        })
        .count()
}

/// Residual `X₁ν₁ + X₂ν₂` of the minimal-surface equation for the level
/// function `θ - θ̂(x, y)`, on grid points whose two-step stencil is defined.
#[derive(Debug, Clone)]
pub struct ResidualField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ResidualField {
    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .filter(|v| v.is_finite())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn defined_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_finite()).count()
    }
}

/// Horizontal divergence of the unit horizontal normal of the graph
/// `θ = θ̂(x, y)` by centered differences.
///
/// With `w = cos θ ∂ₓθ̂ + sin θ ∂ᵧθ̂` the normal is `(-w, 1)/√(1+w²)`.
/// `X₁ν₁` differences `ν₁` at the neighbours with `θ` frozen at the centre
/// value; `X₂ν₂` is the exact `θ`-derivative at the centre.
pub fn minimal_residual(theta: &ThetaField) -> ResidualField {
    let g = theta.grid;
    let (nx, ny, h) = (g.nx, g.ny, g.spacing);
    let wrap = |d: f64| d - TAU * (d / TAU).round();
    let at = |i: usize, j: usize| theta.values[j * nx + i];
    let deriv = |i: usize, j: usize| -> Option<(f64, f64)> {
        if i == 0 || j == 0 || i + 1 >= nx || j + 1 >= ny {
            return None;
        }
        let a = wrap(at(i + 1, j) - at(i - 1, j)) / (2.0 * h);
        let b = wrap(at(i, j + 1) - at(i, j - 1)) / (2.0 * h);
        (a.is_finite() && b.is_finite()).then_some((a, b))
    };
    let values = (0..g.len())
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx % nx, idx / nx);
            let th = at(i, j);
            if !th.is_finite() {
                return f64::NAN;
            }
            let centre = deriv(i, j);
            let nbrs = (
                i.checked_sub(1).and_then(|im| deriv(im, j)),
                deriv(i + 1, j),
                j.checked_sub(1).and_then(|jm| deriv(i, jm)),
                deriv(i, j + 1),
            );
            let (Some((a, b)), (Some(xm), Some(xp), Some(ym), Some(yp))) = (centre, nbrs) else {
                return f64::NAN;
            };
            let (c, s) = (th.cos(), th.sin());
            let nu1 = |(a, b): (f64, f64)| {
                let w = c * a + s * b;
                -w / (1.0 + w * w).sqrt()
            };
            let x1nu1 = c * (nu1(xp) - nu1(xm)) / (2.0 * h) + s * (nu1(yp) - nu1(ym)) / (2.0 * h);
            let w = c * a + s * b;
            let dw = -s * a + c * b;
            let x2nu2 = -w * dw / (1.0 + w * w).powf(1.5);
            x1nu1 + x2nu2
        })
        .collect();
    ResidualField { grid: g, values }
}

/// The graph `θ̂` of a monotone surface evaluated exactly: for each point,
/// the rule through it is found by root-finding over the branch and `θ̂` is
/// read off that rule.
///
/// A point `P` lies on the rule from `γ(t)` to `γ(u)` when
/// `κ|d|² = 2 d·n` with `d = P - β(t)`, `n` the left normal of `θ(t)` and
/// `κ` the signed curvature of the rule; there `θ̂ = θ(t) + 2 atan2(d·n, d·e)`.
pub struct ExactSheet<'a> {
    boundary: &'a LiftedBoundary,
    branch: &'a ConnectionBranch,
    table: Vec<RuleCircle>,
}

#[derive(Clone, Copy)]
struct RuleCircle {
    t: f64,
    u: f64,
    theta: f64,
    p: [f64; 2],
    n: [f64; 2],
    kappa: f64,
}

impl RuleCircle {
    fn g(&self, x: f64, y: f64) -> f64 {
        let d = [x - self.p[0], y - self.p[1]];
        self.kappa * (d[0] * d[0] + d[1] * d[1]) - 2.0 * (d[0] * self.n[0] + d[1] * self.n[1])
    }
}

const SHEET_TABLE: usize = 4096;

impl<'a> ExactSheet<'a> {
    pub fn new(boundary: &'a LiftedBoundary, branch: &'a ConnectionBranch) -> Result<Self> {
        if branch.conjugate_flag || branch.samples.len() < 2 {
            return Err(Error::InvalidArgument(
                "exact sheets need a traced direct branch".into(),
            ));
        }
        let mut sheet = Self {
            boundary,
            branch,
            table: Vec::new(),
        };
        // next to the anchors u ≈ t and κ is lost to cancellation
        let lo = branch.samples[0].0 + 1e-5;
        let hi = branch.samples[branch.samples.len() - 1].0 - 1e-5;
        let table = (0..=SHEET_TABLE)
            .into_par_iter()
            .map(|i| {
                let t = lo + (hi - lo) * i as f64 / SHEET_TABLE as f64;
                sheet.circle(t, sheet.u_exact(t)?)
            })
            .collect::<Option<Vec<_>>>()
            .ok_or(Error::NoBranch { t: lo })?;
        sheet.table = table;
        Ok(sheet)
    }

    /// Partner of `t` solved to full precision near the branch's sample.
    pub fn u_exact(&self, t: f64) -> Option<f64> {
        let guess = self.branch.u_at(t)?;
        let k = self.branch.k;
        let f = |u: f64| pairing_residual(self.boundary, t, u, k, false);
        let f0 = f(guess);
        if f0 == 0.0 {
            return Some(guess);
        }
        let mut delta = 1e-9;
        while delta < 0.5 {
            for side in [1.0, -1.0] {
                let b = guess + side * delta;
                let fb = f(b);
                if f0 * fb <= 0.0 {
                    return Some(illinois(f, guess, f0, b, fb, 1e-3 * PAIR_ROOT_TOL));
                }
            }
            delta *= 4.0;
        }
        None
    }

    /// Partner by secant iteration from a close guess.
    fn u_secant(&self, t: f64, guess: f64) -> Option<f64> {
        let k = self.branch.k;
        let f = |u: f64| pairing_residual(self.boundary, t, u, k, false);
        let (mut u0, mut u1) = (guess, guess + 1e-7);
        let (mut f0, mut f1) = (f(u0), f(u1));
        for _ in 0..20 {
            if f1 == f0 || (u1 - u0).abs() < 1e-15 {
                break;
            }
            let u2 = u1 - f1 * (u1 - u0) / (f1 - f0);
            (u0, f0) = (u1, f1);
            u1 = u2;
            f1 = f(u1);
        }
        (f1.abs() <= PAIR_ROOT_TOL).then_some(u1)
    }

    fn circle(&self, t: f64, u: f64) -> Option<RuleCircle> {
        let p = self.boundary.pose_at(t);
        let q = self.boundary.disk.point(u);
        let n = [-p.theta.sin(), p.theta.cos()];
        let d1 = [q[0] - p.x, q[1] - p.y];
        let kappa = 2.0 * (d1[0] * n[0] + d1[1] * n[1]) / (d1[0] * d1[0] + d1[1] * d1[1]);
        Some(RuleCircle {
            t,
            u,
            theta: p.theta,
            p: [p.x, p.y],
            n,
            kappa,
        })
    }

    /// `θ̂(x, y)` for a point strictly inside the disk.
    pub fn theta_hat(&self, x: f64, y: f64) -> Option<f64> {
        if self.boundary.disk.depth([x, y]) <= 0.0 {
            return None;
        }
        let tab = &self.table;
        let g_first = tab[0].g(x, y);
        if g_first * tab[tab.len() - 1].g(x, y) > 0.0 {
            return None;
        }
        // single sign change along the branch
        let up = g_first < 0.0;
        let (mut a, mut b) = (0usize, tab.len() - 1);
        while b - a > 1 {
            let m = (a + b) / 2;
            if (tab[m].g(x, y) < 0.0) == up {
                a = m;
            } else {
                b = m;
            }
        }
        let (ga, gb) = (tab[a].g(x, y), tab[b].g(x, y));
        let (ca, cb) = (tab[a], tab[b]);
        let at = |t: f64| -> Option<RuleCircle> {
            let w = (t - ca.t) / (cb.t - ca.t);
            self.circle(t, self.u_secant(t, ca.u + w * (cb.u - ca.u))?)
        };
        let f = |t: f64| at(t).map_or(f64::NAN, |c| c.g(x, y));
        let t = illinois(f, ca.t, ga, cb.t, gb, 1e-14);
        let c = at(t)?;
        let d = [x - c.p[0], y - c.p[1]];
        let e = [c.n[1], -c.n[0]];
        Some(c.theta + 2.0 * (d[0] * c.n[0] + d[1] * c.n[1]).atan2(d[0] * e[0] + d[1] * e[1]))
    }

    /// `θ̂` on every grid point inside the disk.
    pub fn field(&self, grid: GridSpec) -> ThetaField {
        ThetaField::from_fn(grid, |x, y| self.theta_hat(x, y).unwrap_or(f64::NAN))
    }
}

/// Grid with nodes at `center + (i, j)·spacing` covering the disk.
pub fn centered_grid(disk: &OcclusionDisk, spacing: f64) -> GridSpec {
    let m = (disk.radius / spacing).round() as usize;
    GridSpec {
        x0: disk.center[0] - m as f64 * spacing,
        y0: disk.center[1] - m as f64 * spacing,
        spacing,
        nx: 2 * m + 1,
        ny: 2 * m + 1,
    }
}

/// The limit of the rules at an anchor point: a circle tangent to the
/// boundary there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitingRule {
    pub t: f64,
    /// Curvature toward the disk center.
    pub inward_curvature: f64,
    pub boundary_curvature: f64,
    /// Projection outside the open disk (tangency allowed).
    pub external: bool,
}

/// Limiting rules at both ends of a direct branch, extrapolated linearly
/// in `t` from the two rules nearest each anchor whose endpoints are at
/// least a few boundary spacings apart (closer ones lose `κ` to
/// cancellation).
pub fn limiting_rules(boundary: &LiftedBoundary, branch: &ConnectionBranch) -> Vec<LimitingRule> {
    let s = &branch.samples;
    if s.len() < 3 || branch.conjugate_flag {
        return Vec::new();
    }
    let kappa_in = |t: f64, u: f64| -> f64 {
        let p = boundary.pose_at(t);
        let q = boundary.disk.point(u);
        let n = [-p.theta.sin(), p.theta.cos()];
        let d = [q[0] - p.x, q[1] - p.y];
        let kappa = 2.0 * (d[0] * n[0] + d[1] * n[1]) / (d[0] * d[0] + d[1] * d[1]);
        let inward = [-t.cos(), -t.sin()];
        kappa * (n[0] * inward[0] + n[1] * inward[1])
    };
    let min_gap = 4.0 * boundary.spacing();
    let usable = |&&(t, u): &&(f64, f64)| crate::geometry::angle_diff(t, u).abs() >= min_gap;
    let r = boundary.disk.radius;
    let limit = |t0: f64, near: Vec<&(f64, f64)>| -> Option<LimitingRule> {
        let (a, b) = (*near.first()?, *near.get(1)?);
        let (ka, kb) = (kappa_in(a.0, a.1), kappa_in(b.0, b.1));
        let k0 = ka + (ka - kb) * (t0 - a.0) / (a.0 - b.0);
        Some(LimitingRule {
            t: t0.rem_euclid(TAU),
            inward_curvature: k0,
            boundary_curvature: 1.0 / r,
            external: k0 <= (1.0 + 1e-3) / r,
        })
    };
    let head = limit(s[0].0, s.iter().filter(usable).take(2).collect());
    let tail = limit(
        s[s.len() - 1].0,
        s.iter().rev().filter(usable).take(2).collect(),
    );
    head.into_iter().chain(tail).collect()
}

/// Triangle mesh of a surface, vertices `(x, y, θ)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl Mesh {
    /// Wavefront OBJ text with `θ` as the third coordinate.
    pub fn to_obj(&self) -> String {
        let mut out = String::with_capacity(32 * (self.vertices.len() + self.triangles.len()));
        for v in &self.vertices {
            let _ = writeln!(out, "v {:.12} {:.12} {:.12}", v[0], v[1], v[2]);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        out
    }
}

/// Triangulated strips between consecutive rules, each rule sampled at
/// `samples_per_rule` uniform parameter values. Point rules contribute a
/// single shared vertex.
pub fn export_mesh(surface: &SpanningSurface, samples_per_rule: usize) -> Result<Mesh> {
    if samples_per_rule < 2 {
        return Err(Error::InvalidArgument(
            "at least two samples per rule are required".into(),
        ));
    }
    let mut mesh = Mesh::default();
    let mut rows: Vec<Vec<usize>> = Vec::with_capacity(surface.rules.len());
    for r in &surface.rules {
        let pose_row: Vec<Pose> = if r.rule.is_point() {
            vec![r.rule.start()]
        } else {
            (0..samples_per_rule)
                .map(|j| {
                    r.rule
                        .point_at_fraction(j as f64 / (samples_per_rule - 1) as f64)
                })
                .collect()
        };
        let base = mesh.vertices.len();
        mesh.vertices
            .extend(pose_row.iter().map(|p| [p.x, p.y, p.theta]));
        rows.push((base..base + pose_row.len()).collect());
    }
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let m = a.len().max(b.len());
        let at = |row: &Vec<usize>, j: usize| row[j.min(row.len() - 1)];
        for j in 0..m - 1 {
            let tris = [
                [at(a, j), at(a, j + 1), at(b, j)],
                [at(a, j + 1), at(b, j + 1), at(b, j)],
            ];
            for t in tris {
                if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
                    mesh.triangles.push(t);
                }
            }
        }
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::builtin;
    use crate::lift::lift_boundary;
    use crate::solver::{anchor_k, solve_pairing, trace_branch};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn linear_setup() -> (IntensityField, LiftedBoundary, ConnectionBranch) {
        let f = IntensityField::from(builtin::linear());
        let b = lift_boundary(&f, &OcclusionDisk::unit(), 1024).unwrap();
        let k = anchor_k(&b, FRAC_PI_2, false);
        let br = trace_branch(&b, FRAC_PI_2, k, false).unwrap();
        (f, b, br)
    }

    #[test]
    fn linear_surface_is_horizontal_chords() {
        let (f, b, br) = linear_setup();
        let s = build_surface_from_branch(&b, &br, &SurfaceOptions::default()).unwrap();
        assert!(s.all_interior());
        for r in &s.rules {
            if r.choice == SegmentChoice::Point {
                continue;
            }
            assert_eq!(r.choice, SegmentChoice::Line);
            let mid = r.rule.point_at_fraction(0.5);
            assert!(mid.x.abs() < 1e-8);
            assert!(mid.theta.abs() < 1e-12);
        }
        let fill = fill_intensity(&f, &s, 256).unwrap();
        assert!(fill.coverage_fraction() >= 0.99);
        let g = fill.grid;
        let mut worst: f64 = 0.0;
        for idx in 0..g.len() {
            if fill.coverage_mask[idx] {
                let [_, y] = g.point(idx % g.nx, idx / g.nx);
                worst = worst.max((fill.intensity[idx] - y).abs());
            }
        }
        assert!(worst <= 1e-3, "{worst}");
        assert_eq!(fill.max_conflict(), 1);
        let gc = graph_check_raster(&fill, GRAPH_TOL);
        assert!(gc.is_graph);
        let th = gc.theta.unwrap();
        assert!(th
            .values
            .iter()
            .filter(|v| v.is_finite())
            .all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rules_end_on_the_lift() {
        let f = IntensityField::from(builtin::cross());
        let b = lift_boundary(&f, &OcclusionDisk::new(2.4, 2.6, 1.0).unwrap(), 1024).unwrap();
        let p = solve_pairing(&b).unwrap();
        let s = build_surface_from_branch(&b, &p.branches[0], &SurfaceOptions::default()).unwrap();
        assert!(s.all_interior());
        assert!(s.min_abs_radius().unwrap() > 1e-6);
        for r in &s.rules {
            assert!(r.rule.start().approx_eq(&b.pose_at(r.t), 1e-8));
            let end = r.rule.end();
            assert!(end.approx_eq(&b.pose_at(r.u), 1e-8), "{end:?}");
            for k in 0..=10 {
                let lam = k as f64 / 10.0;
                let (a, bb) = r.rule.interval();
                assert!(r.rule.horizontality_residual(a + lam * (bb - a)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn residual_of_flat_and_witness_fields() {
        let grid = GridSpec {
            x0: 0.0,
            y0: 0.0,
            spacing: 0.01,
            nx: 101,
            ny: 101,
        };
        let zero = minimal_residual(&ThetaField::from_fn(grid, |_, _| 0.0));
        assert!(zero.max_abs() <= 1e-12);
        assert!(zero.defined_count() > 0);
        let wit = minimal_residual(&ThetaField::from_fn(grid, |x, _| x));
        assert!(wit.max_abs() > 0.1);
    }

    #[test]
    fn residual_matches_closed_form_for_witness() {
        // θ̂ = x: X₁ν₁ vanishes, X₂ν₂ = cos θ sin θ / (1 + cos²θ)^{3/2}
        let grid = GridSpec {
            x0: -1.0,
            y0: 0.0,
            spacing: 0.005,
            nx: 401,
            ny: 5,
        };
        let r = minimal_residual(&ThetaField::from_fn(grid, |x, _| x));
        for idx in 0..grid.len() {
            if r.values[idx].is_finite() {
                let [x, _] = grid.point(idx % grid.nx, idx / grid.nx);
                let expect = x.cos() * x.sin() / (1.0 + x.cos().powi(2)).powf(1.5);
                assert!((r.values[idx] - expect).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn mesh_strip_combinatorics() {
        let (_, b, _) = linear_setup();
        let pairs: Vec<(f64, f64)> = (0..256)
            .map(|i| {
                let t = FRAC_PI_2 + PI * (i as f64 + 0.5) / 256.0;
                (t, PI - t)
            })
            .collect();
        let s = build_surface(&b, &pairs, false, &SurfaceOptions::default()).unwrap();
        let mesh = export_mesh(&s, 2).unwrap();
        assert_eq!(mesh.triangles.len(), 2 * 255);
        assert_eq!(mesh.vertices.len(), 512);

        let single = SpanningSurface {
            rules: s.rules[..1].to_vec(),
            ..s.clone()
        };
        assert!(export_mesh(&single, 8).unwrap().triangles.is_empty());
        assert!(export_mesh(&s, 1).is_err());
    }

    #[test]
    fn anchors_become_single_vertices() {
        let (_, b, br) = linear_setup();
        let s = build_surface_from_branch(&b, &br, &SurfaceOptions::default()).unwrap();
        assert_eq!(s.rules.first().unwrap().choice, SegmentChoice::Point);
        assert_eq!(s.rules.last().unwrap().choice, SegmentChoice::Point);
        let mesh = export_mesh(&s, 5).unwrap();
        let mut seen = std::collections::HashSet::new();
        for v in &mesh.vertices {
            assert!(seen.insert((v[0].to_bits(), v[1].to_bits(), v[2].to_bits())));
        }
        let obj = mesh.to_obj();
        assert!(obj.starts_with("v "));
        assert_eq!(
            obj.lines().filter(|l| l.starts_with("f ")).count(),
            mesh.triangles.len()
        );
    }
}
