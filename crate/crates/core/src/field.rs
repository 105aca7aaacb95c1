//! Intensity fields `I(x, y)` and the lift of their level-line direction.
//!
//! The lift angle is defined by `∇I/|∇I| = (-sin θ, cos θ)`, so the
//! contour direction `(cos θ, sin θ)` is the gradient rotated clockwise.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::nearest_branch;

/// Gradient floor for analytic fields.
pub const EPS_GRAD_ANALYTIC: f64 = 1e-8;
/// Default Gaussian smoothing for raster gradients, in pixels.
pub const DEFAULT_SIGMA: f64 = 1.0;

pub type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>;
pub type HessianFn = Arc<dyn Fn(f64, f64) -> [[f64; 2]; 2] + Send + Sync>;

/// Closed-form intensity with its gradient and, optionally, its Hessian.
#[derive(Clone)]
pub struct AnalyticField {
    pub name: String,
    value: ScalarFn,
    gradient: GradientFn,
    hessian: Option<HessianFn>,
}

impl AnalyticField {
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(f64, f64) -> [f64; 2] + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            hessian: None,
        }
    }

    pub fn with_hessian(
        mut self,
        hessian: impl Fn(f64, f64) -> [[f64; 2]; 2] + Send + Sync + 'static,
    ) -> Self {
        self.hessian = Some(Arc::new(hessian));
        self
    }

    /// Drop the Hessian so derivative consumers fall back to differences.
    pub fn without_hessian(mut self) -> Self {
        self.hessian = None;
        self
    }
}

/// Sampled intensity on a regular grid. Pixel `(col, row)` sits at
/// `(col·spacing, row·spacing)`; values are normalized to `[0, 1]` on load.
#[derive(Clone)]
pub struct RasterField {
    width: usize,
    height: usize,
    spacing: f64,
    sigma: f64,
    pixels: Arc<Vec<f64>>,
    grad_x: Arc<Vec<f64>>,
    grad_y: Arc<Vec<f64>>,
    range: f64,
}

impl RasterField {
    /// Row-major pixels, `pixels[row * width + col]`.
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<f64>,
        spacing: f64,
        sigma: f64,
    ) -> Result<Self> {
        if width < 3 || height < 3 {
            return Err(Error::InvalidArgument(format!(
                "raster must be at least 3x3, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "expected {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if !(spacing > 0.0 && spacing.is_finite()) || !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(
                "pixel spacing must be positive and sigma non-negative".into(),
            ));
        }
        let smooth = gaussian_blur(&pixels, width, height, sigma);
        let (gx, gy) = central_gradient(&smooth, width, height, spacing);
        let (lo, hi) = pixels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                (l.min(v), h.max(v))
            });
        Ok(Self {
            width,
            height,
            spacing,
            sigma,
            pixels: Arc::new(pixels),
            grad_x: Arc::new(gx),
            grad_y: Arc::new(gy),
            range: hi - lo,
        })
    }

    /// Load an 8- or 16-bit grayscale PNG or PGM (P5).
    pub fn load(path: &Path, spacing: f64, sigma: f64) -> Result<Self> {
        let img = image::open(path)?;
        let gray = img.to_luma16();
        let (w, h) = gray.dimensions();
        let pixels = gray.pixels().map(|p| p.0[0] as f64 / 65535.0).collect();
        Self::new(w as usize, h as usize, pixels, spacing, sigma)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixel(&self, col: usize, row: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Planar extent `[x_min, x_max] x [y_min, y_max]`.
    pub fn bounds(&self) -> [f64; 4] {
        [
            0.0,
            (self.width - 1) as f64 * self.spacing,
            0.0,
            (self.height - 1) as f64 * self.spacing,
        ]
    }

    fn bilinear(&self, grid: &[f64], x: f64, y: f64) -> f64 {
        let fx = (x / self.spacing).clamp(0.0, (self.width - 1) as f64);
        let fy = (y / self.spacing).clamp(0.0, (self.height - 1) as f64);
        let c0 = (fx.floor() as usize).min(self.width - 2);
        let r0 = (fy.floor() as usize).min(self.height - 2);
        let (ax, ay) = (fx - c0 as f64, fy - r0 as f64);
        let at = |c: usize, r: usize| grid[r * self.width + c];
        let top = at(c0, r0) * (1.0 - ax) + at(c0 + 1, r0) * ax;
        let bot = at(c0, r0 + 1) * (1.0 - ax) + at(c0 + 1, r0 + 1) * ax;
        top * (1.0 - ay) + bot * ay
    }
}

fn gaussian_blur(src: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return src.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let pass = |input: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; input.len()];
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for (j, k) in kernel.iter().enumerate() {
                    let off = j as isize - radius;
                    let (cc, rr) = if horizontal {
                        ((c as isize + off).clamp(0, w as isize - 1) as usize, r)
                    } else {
                        (c, (r as isize + off).clamp(0, h as isize - 1) as usize)
                    };
                    acc += k * input[rr * w + cc];
                }
                out[r * w + c] = acc;
            }
        }
        out
    };
    let tmp = pass(src, true);
    pass(&tmp, false)
}

// centered in the interior, one-sided on the border
fn central_gradient(src: &[f64], w: usize, h: usize, spacing: f64) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; src.len()];
    let mut gy = vec![0.0; src.len()];
    for r in 0..h {
        for c in 0..w {
            let (cl, cr) = (c.saturating_sub(1), (c + 1).min(w - 1));
            let (ru, rd) = (r.saturating_sub(1), (r + 1).min(h - 1));
            gx[r * w + c] = (src[r * w + cr] - src[r * w + cl]) / ((cr - cl) as f64 * spacing);
            gy[r * w + c] = (src[rd * w + c] - src[ru * w + c]) / ((rd - ru) as f64 * spacing);
        }
    }
    (gx, gy)
}

/// An image intensity `I(x, y)`.
#[derive(Clone)]
pub enum IntensityField {
    Analytic(AnalyticField),
    Raster(RasterField),
}

impl fmt::Debug for IntensityField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IntensityField::Analytic(a) => f
                .debug_struct("Analytic")
                .field("name", &a.name)
                .field("hessian", &a.hessian.is_some())
                .finish(),
            IntensityField::Raster(r) => f
                .debug_struct("Raster")
                .field("width", &r.width)
                .field("height", &r.height)
                .field("spacing", &r.spacing)
                .field("sigma", &r.sigma)
                .finish(),
        }
    }
}

impl From<AnalyticField> for IntensityField {
    fn from(a: AnalyticField) -> Self {
        IntensityField::Analytic(a)
    }
}

impl From<RasterField> for IntensityField {
    fn from(r: RasterField) -> Self {
        IntensityField::Raster(r)
    }
}

impl IntensityField {
    pub fn is_raster(&self) -> bool {
        matches!(self, IntensityField::Raster(_))
    }

    pub fn name(&self) -> &str {
        match self {
            IntensityField::Analytic(a) => &a.name,
            IntensityField::Raster(_) => "raster",
        }
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        match self {
            IntensityField::Analytic(a) => (a.value)(x, y),
            IntensityField::Raster(r) => r.bilinear(&r.pixels, x, y),
        }
    }

    pub fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        match self {
            IntensityField::Analytic(a) => (a.gradient)(x, y),
            IntensityField::Raster(r) => [r.bilinear(&r.grad_x, x, y), r.bilinear(&r.grad_y, x, y)],
        }
    }

    /// Closed-form Hessian, when one was supplied.
    pub fn hessian(&self, x: f64, y: f64) -> Option<[[f64; 2]; 2]> {
        match self {
            IntensityField::Analytic(a) => a.hessian.as_ref().map(|h| h(x, y)),
            IntensityField::Raster(_) => None,
        }
    }

    pub fn has_hessian(&self) -> bool {
        matches!(self, IntensityField::Analytic(a) if a.hessian.is_some())
    }

    /// Hessian, falling back to centered differences of the gradient.
    pub fn hessian_or_fd(&self, x: f64, y: f64) -> [[f64; 2]; 2] {
        if let Some(h) = self.hessian(x, y) {
            return h;
        }
        let d = match self {
            IntensityField::Raster(r) => 0.5 * r.spacing,
            IntensityField::Analytic(_) => 1e-5 * (1.0 + x.abs().max(y.abs())),
        };
        let gxp = self.gradient(x + d, y);
        let gxm = self.gradient(x - d, y);
        let gyp = self.gradient(x, y + d);
        let gym = self.gradient(x, y - d);
        let hxx = (gxp[0] - gxm[0]) / (2.0 * d);
        let hyy = (gyp[1] - gym[1]) / (2.0 * d);
        let hxy = 0.25 * ((gxp[1] - gxm[1]) + (gyp[0] - gym[0])) / d;
        [[hxx, hxy], [hxy, hyy]]
    }

    /// Gradient floor below which a point counts as critical.
    pub fn eps_grad(&self) -> f64 {
        match self {
            IntensityField::Analytic(_) => EPS_GRAD_ANALYTIC,
            IntensityField::Raster(r) => 1e-3 * r.range / r.spacing,
        }
    }

    /// Whether the closed disk lies inside the field's domain.
    pub fn contains_disk(&self, center: [f64; 2], radius: f64) -> bool {
        match self {
            IntensityField::Analytic(_) => true,
            IntensityField::Raster(r) => {
                let [x0, x1, y0, y1] = r.bounds();
                center[0] - radius >= x0
                    && center[0] + radius <= x1
                    && center[1] - radius >= y0
                    && center[1] + radius <= y1
            }
        }
    }
}

/// Angle from a gradient, principal value in `(-π, π]`.
pub fn angle_of_gradient(g: [f64; 2]) -> f64 {
    (-g[0]).atan2(g[1])
}

/// Lift angle at `(x, y)`: `(-sin θ, cos θ) = ∇I/|∇I|`. With a hint the
/// representative closest to the hint is returned.
pub fn lift_angle(field: &IntensityField, x: f64, y: f64, hint: Option<f64>) -> Result<f64> {
    let g = field.gradient(x, y);
    let norm = g[0].hypot(g[1]);
    if !(norm > field.eps_grad()) {
        return Err(Error::CriticalPoint { x, y, norm });
    }
    let th = angle_of_gradient(g);
    Ok(match hint {
        Some(h) => nearest_branch(th, h),
        None => th,
    })
}

/// The worked example fields plus two trivially checkable ones.
pub mod builtin {
    use super::AnalyticField;

    pub const NAMES: [&str; 5] = ["cross", "cross-bounded", "ellipse-bump", "linear", "radial"];

    /// `x(y - x)`, contour-equivalent to `cross_bounded`.
    pub fn cross() -> AnalyticField {
        AnalyticField::new("cross", |x, y| x * (y - x), |x, y| [y - 2.0 * x, x])
            .with_hessian(|_, _| [[-2.0, 1.0], [1.0, 0.0]])
    }

    /// `(1 + x²(x - y)²)⁻¹`.
    pub fn cross_bounded() -> AnalyticField {
        let f = |x: f64, y: f64| x * (y - x);
        AnalyticField::new(
            "cross-bounded",
            move |x, y| 1.0 / (1.0 + f(x, y).powi(2)),
            move |x, y| {
                let v = f(x, y);
                let s = -2.0 * v / (1.0 + v * v).powi(2);
                [s * (y - 2.0 * x), s * x]
            },
        )
        .with_hessian(move |x, y| {
            // I = φ(f), φ(v) = 1/(1+v²)
            let v = f(x, y);
            let d = 1.0 + v * v;
            let p1 = -2.0 * v / (d * d);
            let p2 = (6.0 * v * v - 2.0) / (d * d * d);
            let (fx, fy) = (y - 2.0 * x, x);
            [
                [p2 * fx * fx - 2.0 * p1, p2 * fx * fy + p1],
                [p2 * fx * fy + p1, p2 * fy * fy],
            ]
        })
    }

    /// `(1 + x² + 0.9 y²)⁻¹`.
    pub fn ellipse_bump() -> AnalyticField {
        let d = |x: f64, y: f64| 1.0 + x * x + 0.9 * y * y;
        AnalyticField::new(
            "ellipse-bump",
            move |x, y| 1.0 / d(x, y),
            move |x, y| {
                let dd = d(x, y).powi(2);
                [-2.0 * x / dd, -1.8 * y / dd]
            },
        )
        .with_hessian(move |x, y| {
            let v = d(x, y);
            let (v2, v3) = (v * v, v * v * v);
            let (dx, dy) = (2.0 * x, 1.8 * y);
            [
                [-2.0 / v2 + 2.0 * dx * dx / v3, 2.0 * dx * dy / v3],
                [2.0 * dx * dy / v3, -1.8 / v2 + 2.0 * dy * dy / v3],
            ]
        })
    }

    /// `y`.
    pub fn linear() -> AnalyticField {
        AnalyticField::new("linear", |_, y| y, |_, _| [0.0, 1.0]).with_hessian(|_, _| [[0.0; 2]; 2])
    }

    /// `x² + y²`.
    pub fn radial() -> AnalyticField {
        AnalyticField::new("radial", |x, y| x * x + y * y, |x, y| [2.0 * x, 2.0 * y])
            .with_hessian(|_, _| [[2.0, 0.0], [0.0, 2.0]])
    }

    pub fn by_name(name: &str) -> Option<AnalyticField> {
        Some(match name {
            "cross" => cross(),
            "cross-bounded" => cross_bounded(),
            "ellipse-bump" => ellipse_bump(),
            "linear" => linear(),
            "radial" => radial(),
            _ => return None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn fd_gradient(f: &AnalyticField, x: f64, y: f64) -> [f64; 2] {
        let h = 1e-6;
        [
            ((f.value)(x + h, y) - (f.value)(x - h, y)) / (2.0 * h),
            ((f.value)(x, y + h) - (f.value)(x, y - h)) / (2.0 * h),
        ]
    }

    #[test]
    fn builtin_gradients_and_hessians_match_differences() {
        let pts = [(0.3, -0.7), (2.4, 2.6), (-1.1, 0.4), (1.9, 1.2)];
        for name in builtin::NAMES {
            let f = builtin::by_name(name).unwrap();
            let fh = IntensityField::from(f.clone().without_hessian());
            let fa = IntensityField::from(f.clone());
            for &(x, y) in &pts {
                let g = (f.gradient)(x, y);
                let n = fd_gradient(&f, x, y);
                for k in 0..2 {
                    assert!(
                        (g[k] - n[k]).abs() < 1e-6 * (1.0 + g[k].abs()),
                        "{name} grad"
                    );
                }
                let ha = fa.hessian(x, y).unwrap();
                let hf = fh.hessian_or_fd(x, y);
                for i in 0..2 {
                    for j in 0..2 {
                        assert!((ha[i][j] - hf[i][j]).abs() < 1e-5, "{name} hessian");
                    }
                }
            }
        }
    }

    #[test]
    fn lift_angle_examples() {
        let lin = IntensityField::from(builtin::linear());
        assert_eq!(lift_angle(&lin, 3.0, -1.0, None).unwrap(), 0.0);
        let ix = IntensityField::from(AnalyticField::new("x", |x, _| x, |_, _| [1.0, 0.0]));
        assert!((lift_angle(&ix, 0.0, 0.0, None).unwrap() + FRAC_PI_2).abs() < 1e-15);
        let bump = IntensityField::from(builtin::ellipse_bump());
        assert!((lift_angle(&bump, 1.0, 0.0, None).unwrap() - FRAC_PI_2).abs() < 1e-15);
        let hinted = lift_angle(&lin, 0.0, 0.0, Some(4.0 * PI + 0.1)).unwrap();
        assert!((hinted - 4.0 * PI).abs() < 1e-15);
    }

    #[test]
    fn lift_angle_rejects_critical_points() {
        let f = IntensityField::from(builtin::cross());
        assert!(matches!(
            lift_angle(&f, 0.0, 0.0, None),
            Err(Error::CriticalPoint { .. })
        ));
    }

    #[test]
    fn raster_reproduces_linear_ramp() {
        let (w, h) = (40, 30);
        let s = 0.1;
        let pixels: Vec<f64> = (0..h)
            .flat_map(|r| (0..w).map(move |_| r as f64 / (h - 1) as f64))
            .collect();
        let f = IntensityField::from(RasterField::new(w, h, pixels, s, 1.0).unwrap());
        let slope = 1.0 / ((h - 1) as f64 * s);
        let g = f.gradient(2.05, 1.33);
        assert!(g[0].abs() < 1e-12 && (g[1] - slope).abs() < 1e-9);
        assert!((f.value(2.05, 1.33) - 1.33 * slope).abs() < 1e-12);
        assert!(lift_angle(&f, 2.0, 1.5, None).unwrap().abs() < 1e-12);
        assert!(f.contains_disk([2.0, 1.5], 1.0));
        assert!(!f.contains_disk([0.5, 1.5], 1.0));
        assert!((f.eps_grad() - 1e-3 / s).abs() < 1e-12);
    }

    #[test]
    fn raster_rejects_bad_shapes() {
        assert!(RasterField::new(2, 5, vec![0.0; 10], 1.0, 1.0).is_err());
        assert!(RasterField::new(4, 4, vec![0.0; 10], 1.0, 1.0).is_err());
        assert!(RasterField::new(4, 4, vec![0.0; 16], 0.0, 1.0).is_err());
    }

    #[test]
    fn blur_preserves_constants() {
        let v = gaussian_blur(&[0.5; 64], 8, 8, 1.3);
        assert!(v.iter().all(|x| (x - 0.5).abs() < 1e-14));
    }
}
