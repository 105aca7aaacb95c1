use std::path::{Path, PathBuf};

use amodal_core::field::DEFAULT_SIGMA;
use amodal_core::geometry::{ACCESS_TOL_ANALYTIC, ACCESS_TOL_RASTER};
use amodal_core::solver::PAIR_RESIDUAL_TOL;
use amodal_core::{builtin, Error, IntensityField, LiftedBoundary, OcclusionDisk, RasterField};
use serde::Serialize;

/// Name of the synthetic lift `γ(t) = (cos t, sin t, t)`; it has no
/// intensity field behind it.
pub const ROTATION: &str = "rotation";

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum FieldSource {
    Builtin(String),
    Raster(PathBuf),
}

#[derive(Debug, Clone, Serialize)]
pub struct JobSpec {
    pub field: FieldSource,
    pub center: [f64; 2],
    pub radius: f64,
    pub samples: usize,
    pub conjugate: bool,
    pub grid: usize,
    #[serde(skip)]
    pub out_dir: PathBuf,
    pub tol_access: Option<f64>,
    pub tol_pair: Option<f64>,
    /// Which traced branch to complete when several exist.
    pub branch: Option<usize>,
}

impl JobSpec {
    pub fn builtin(name: &str, center: [f64; 2], radius: f64) -> Self {
        Self {
            field: FieldSource::Builtin(name.to_string()),
            center,
            radius,
            samples: 1024,
            conjugate: false,
            grid: 256,
            out_dir: PathBuf::from("."),
            tol_access: None,
            tol_pair: None,
            branch: None,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "radius must be positive, got {}",
                self.radius
            )));
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument("center must be finite".into()));
        }
        if self.samples < 128 || !self.samples.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "samples must be a power of two >= 128, got {}",
                self.samples
            )));
        }
        if self.grid < 64 {
            return Err(Error::InvalidArgument(format!(
                "grid must be at least 64, got {}",
                self.grid
            )));
        }
        for tol in [self.tol_access, self.tol_pair].into_iter().flatten() {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "tolerances must be positive, got {tol}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_rotation(&self) -> bool {
        matches!(&self.field, FieldSource::Builtin(n) if n == ROTATION)
    }

    pub fn is_raster(&self) -> bool {
        matches!(self.field, FieldSource::Raster(_))
    }

    pub fn disk(&self) -> Result<OcclusionDisk, Error> {
        OcclusionDisk::new(self.center[0], self.center[1], self.radius)
    }

    /// The intensity field, or `None` for the synthetic rotation lift.
    pub fn load_field(&self) -> Result<Option<IntensityField>, Error> {
        match &self.field {
            FieldSource::Builtin(name) if name == ROTATION => Ok(None),
            FieldSource::Builtin(name) => builtin::by_name(name)
                .map(|f| Some(f.into()))
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "unknown field {name:?}; expected one of {}, {ROTATION}",
                        builtin::NAMES.join(", ")
                    ))
                }),
            FieldSource::Raster(path) => Ok(Some(load_raster(path)?.into())),
        }
    }

    pub fn lift(&self, field: Option<&IntensityField>) -> Result<LiftedBoundary, Error> {
        match field {
            Some(f) => amodal_core::lift::lift_boundary(f, &self.disk()?, self.samples),
            None => LiftedBoundary::rotation(self.samples),
        }
    }

    pub fn access_tol(&self) -> f64 {
        self.tol_access.unwrap_or(if self.is_raster() {
            ACCESS_TOL_RASTER
        } else {
            ACCESS_TOL_ANALYTIC
        })
    }

    pub fn pair_tol(&self) -> f64 {
        self.tol_pair.unwrap_or(PAIR_RESIDUAL_TOL)
    }
}

pub fn load_raster(path: &Path) -> Result<RasterField, Error> {
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("input image {} not found", path.display()),
        )));
    }
    RasterField::load(path, 1.0, DEFAULT_SIGMA)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_rejects_bad_jobs() {
        let ok = JobSpec::builtin("cross", [2.4, 2.6], 1.0);
        assert!(ok.validate().is_ok());
        let mut j = ok.clone();
        j.samples = 1000;
        assert!(j.validate().is_err());
        let mut j = ok.clone();
        j.radius = 0.0;
        assert!(j.validate().is_err());
        let mut j = ok.clone();
        j.grid = 32;
        assert!(j.validate().is_err());
        let mut j = ok;
        j.tol_pair = Some(-1.0);
        assert!(j.validate().is_err());
    }

    #[test]
    fn tolerances_depend_on_the_source() {
        let mut j = JobSpec::builtin("cross", [0.0, 0.0], 1.0);
        assert_eq!(j.access_tol(), ACCESS_TOL_ANALYTIC);
        j.field = FieldSource::Raster("x.png".into());
        assert_eq!(j.access_tol(), ACCESS_TOL_RASTER);
        j.tol_access = Some(1e-3);
        assert_eq!(j.access_tol(), 1e-3);
    }

    #[test]
    fn rotation_has_no_field() {
        let j = JobSpec::builtin(ROTATION, [0.0, 0.0], 1.0);
        assert!(j.is_rotation());
        assert!(j.load_field().unwrap().is_none());
        assert_eq!(j.lift(None).unwrap().degree(), 0);
        assert!(JobSpec::builtin("nope", [0.0, 0.0], 1.0)
            .load_field()
            .is_err());
    }

    #[test]
    fn missing_raster_is_an_io_error() {
        let Err(e) = load_raster(Path::new("/no/such/file.png")) else {
            panic!("missing file loaded");
        };
        assert!(matches!(e, Error::Io(_)));
        assert!(e.is_degeneracy());
    }
}
